#pragma once

#include "minigen/tensor.hpp"

// Hot inner loops. Each kernel has a serial reference implementation and an
// OpenMP one; every output element is reduced in the same sequential order in
// both, so results agree bitwise and the serial build stays the oracle.
// The backend is a process-global switch: serial is the default (determinism
// mode), openmp is opted into by fast mode and the benchmark.

namespace minigen::kernels {

enum class Backend { serial, openmp };

Backend backend();
void set_backend(Backend b);

// c = a @ b           a:[m x k] b:[k x n] c:[m x n]
template <typename T>
void matmul_nn_serial(const T* a, const T* b, T* c, idx m, idx k, idx n, bool accumulate);
template <typename T>
void matmul_nn_omp(const T* a, const T* b, T* c, idx m, idx k, idx n, bool accumulate);

// c = a @ b^T         a:[m x k] b:[n x k] c:[m x n]
template <typename T>
void matmul_nt_serial(const T* a, const T* b, T* c, idx m, idx k, idx n, bool accumulate);
template <typename T>
void matmul_nt_omp(const T* a, const T* b, T* c, idx m, idx k, idx n, bool accumulate);

// c = a^T @ b         a:[k x m] b:[k x n] c:[m x n]
template <typename T>
void matmul_tn_serial(const T* a, const T* b, T* c, idx m, idx k, idx n, bool accumulate);
template <typename T>
void matmul_tn_omp(const T* a, const T* b, T* c, idx m, idx k, idx n, bool accumulate);

// Row-wise stabilized softmax, x and y: [rows x cols].
template <typename T>
void softmax_rows_serial(const T* x, T* y, idx rows, idx cols);
template <typename T>
void softmax_rows_omp(const T* x, T* y, idx rows, idx cols);

template <typename T>
inline void matmul_nn(const T* a, const T* b, T* c, idx m, idx k, idx n,
                      bool accumulate = false) {
  backend() == Backend::serial ? matmul_nn_serial(a, b, c, m, k, n, accumulate)
                               : matmul_nn_omp(a, b, c, m, k, n, accumulate);
}

template <typename T>
inline void matmul_nt(const T* a, const T* b, T* c, idx m, idx k, idx n,
                      bool accumulate = false) {
  backend() == Backend::serial ? matmul_nt_serial(a, b, c, m, k, n, accumulate)
                               : matmul_nt_omp(a, b, c, m, k, n, accumulate);
}

template <typename T>
inline void matmul_tn(const T* a, const T* b, T* c, idx m, idx k, idx n,
                      bool accumulate = false) {
  backend() == Backend::serial ? matmul_tn_serial(a, b, c, m, k, n, accumulate)
                               : matmul_tn_omp(a, b, c, m, k, n, accumulate);
}

template <typename T>
inline void softmax_rows(const T* x, T* y, idx rows, idx cols) {
  backend() == Backend::serial ? softmax_rows_serial(x, y, rows, cols)
                               : softmax_rows_omp(x, y, rows, cols);
}

}  // namespace minigen::kernels
