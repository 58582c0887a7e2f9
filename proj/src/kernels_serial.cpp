#include "minigen/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <vector>

namespace minigen::kernels {

namespace {
std::atomic<Backend> g_backend{Backend::serial};
}

Backend backend() { return g_backend.load(std::memory_order_relaxed); }
void set_backend(Backend b) { g_backend.store(b, std::memory_order_relaxed); }

// i-k-j order: the inner loop runs over contiguous rows of b and c.
template <typename T>
void matmul_nn_serial(const T* a, const T* b, T* c, idx m, idx k, idx n,
                      bool accumulate) {
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

// Transposes b into a scratch buffer once so the main loop can reuse the
// vector-friendly i-k-j order. Each c[i][j] still accumulates sequentially
// over p, i.e. the same order as the plain dot-product formulation.
template <typename T>
void matmul_nt_serial(const T* a, const T* b, T* c, idx m, idx k, idx n,
                      bool accumulate) {
  thread_local std::vector<T> scratch;
  scratch.resize(static_cast<std::size_t>(k) * n);
  for (idx j = 0; j < n; ++j)
    for (idx p = 0; p < k; ++p) scratch[p * n + j] = b[j * k + p];
  matmul_nn_serial(a, scratch.data(), c, m, k, n, accumulate);
}

template <typename T>
void matmul_tn_serial(const T* a, const T* b, T* c, idx m, idx k, idx n,
                      bool accumulate) {
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
void softmax_rows_serial(const T* x, T* y, idx rows, idx cols) {
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

template void matmul_nn_serial<float>(const float*, const float*, float*, idx, idx, idx, bool);
template void matmul_nn_serial<double>(const double*, const double*, double*, idx, idx, idx, bool);
template void matmul_nt_serial<float>(const float*, const float*, float*, idx, idx, idx, bool);
template void matmul_nt_serial<double>(const double*, const double*, double*, idx, idx, idx, bool);
template void matmul_tn_serial<float>(const float*, const float*, float*, idx, idx, idx, bool);
template void matmul_tn_serial<double>(const double*, const double*, double*, idx, idx, idx, bool);
template void softmax_rows_serial<float>(const float*, float*, idx, idx);
template void softmax_rows_serial<double>(const double*, double*, idx, idx);

}  // namespace minigen::kernels
