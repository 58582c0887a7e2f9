#include "minigen/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

// OpenMP variants parallelize over output rows only; the per-element reduction
// order is identical to the serial kernels.

namespace minigen::kernels {

template <typename T>
void matmul_nn_omp(const T* a, const T* b, T* c, idx m, idx k, idx n,
                   bool accumulate) {
#pragma omp parallel for schedule(static)
  for (idx i = 0; i < m; ++i) {
    T* ci = c + i * n;
    if (!accumulate) std::fill(ci, ci + n, T(0));
    const T* ai = a + i * k;
    for (idx p = 0; p < k; ++p) {
      const T aip = ai[p];
      const T* bp = b + p * n;
      for (idx j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// Shares the transpose-then-nn strategy with the serial kernel so the two
// backends keep the same per-element accumulation order.
template <typename T>
void matmul_nt_omp(const T* a, const T* b, T* c, idx m, idx k, idx n,
                   bool accumulate) {
  std::vector<T> scratch(static_cast<std::size_t>(k) * n);
#pragma omp parallel for schedule(static)
  for (idx j = 0; j < n; ++j)
    for (idx p = 0; p < k; ++p) scratch[p * n + j] = b[j * k + p];
  matmul_nn_omp(a, scratch.data(), c, m, k, n, accumulate);
}

template <typename T>
void matmul_tn_omp(const T* a, const T* b, T* c, idx m, idx k, idx n,
                   bool accumulate) {
#pragma omp parallel for schedule(static)
  for (idx i = 0; i < m; ++i) {
    T* ci = c + i * n;
    if (!accumulate) std::fill(ci, ci + n, T(0));
    for (idx p = 0; p < k; ++p) {
      const T api = a[p * m + i];
      const T* bp = b + p * n;
      for (idx j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

template <typename T>
void softmax_rows_omp(const T* x, T* y, idx rows, idx cols) {
#pragma omp parallel for schedule(static)
  for (idx r = 0; r < rows; ++r) {
    const T* xr = x + r * cols;
    T* yr = y + r * cols;
    T mx = -std::numeric_limits<T>::infinity();
    for (idx j = 0; j < cols; ++j) mx = std::max(mx, xr[j]);
    T sum = 0;
    for (idx j = 0; j < cols; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    const T inv = T(1) / sum;
    for (idx j = 0; j < cols; ++j) yr[j] *= inv;
  }
}

template void matmul_nn_omp<float>(const float*, const float*, float*, idx, idx, idx, bool);
template void matmul_nn_omp<double>(const double*, const double*, double*, idx, idx, idx, bool);
template void matmul_nt_omp<float>(const float*, const float*, float*, idx, idx, idx, bool);
template void matmul_nt_omp<double>(const double*, const double*, double*, idx, idx, idx, bool);
template void matmul_tn_omp<float>(const float*, const float*, float*, idx, idx, idx, bool);
template void matmul_tn_omp<double>(const double*, const double*, double*, idx, idx, idx, bool);
template void softmax_rows_omp<float>(const float*, float*, idx, idx);
template void softmax_rows_omp<double>(const double*, double*, idx, idx);

}  // namespace minigen::kernels
