// Times the serial reference kernels against the OpenMP ones and verifies the
// two backends agree bit-for-bit (the OpenMP split is over output rows only,
// so per-element arithmetic order is unchanged).
//
//   ./bench_kernels [dim] [reps]

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <random>
#include <string>
#include <vector>

#include "minigen/kernels.hpp"
#include "minigen/rng.hpp"

using namespace minigen;

static double now_s() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

template <typename F>
static double time_best(F&& f, int reps) {
  double best = 1e30;
  for (int r = 0; r < reps; ++r) {
    const double t0 = now_s();
    f();
    best = std::min(best, now_s() - t0);
  }
  return best;
}

int main(int argc, char** argv) {
  const idx n = argc > 1 ? std::stol(argv[1]) : 384;
  const int reps = argc > 2 ? std::stoi(argv[2]) : 5;

  std::mt19937_64 gen(1234);
  std::vector<float> a(n * n), b(n * n), c_serial(n * n), c_omp(n * n);
  for (auto& x : a) x = static_cast<float>(rng::normal(gen));
  for (auto& x : b) x = static_cast<float>(rng::normal(gen));

  const double flops = 2.0 * double(n) * double(n) * double(n);
  std::printf("square matmul, n=%lld, best of %d reps\n",
              static_cast<long long>(n), reps);

  struct Variant {
    const char* name;
    void (*serial)(const float*, const float*, float*, idx, idx, idx, bool);
    void (*omp)(const float*, const float*, float*, idx, idx, idx, bool);
  };
  const Variant variants[] = {
      {"matmul_nn", kernels::matmul_nn_serial<float>, kernels::matmul_nn_omp<float>},
      {"matmul_nt", kernels::matmul_nt_serial<float>, kernels::matmul_nt_omp<float>},
      {"matmul_tn", kernels::matmul_tn_serial<float>, kernels::matmul_tn_omp<float>},
  };

  bool all_equal = true;
  for (const auto& v : variants) {
    const double ts = time_best(
        [&] { v.serial(a.data(), b.data(), c_serial.data(), n, n, n, false); }, reps);
    const double to = time_best(
        [&] { v.omp(a.data(), b.data(), c_omp.data(), n, n, n, false); }, reps);
    const bool equal =
        std::memcmp(c_serial.data(), c_omp.data(), c_serial.size() * sizeof(float)) == 0;
    all_equal = all_equal && equal;
    std::printf("  %-10s serial %7.2f ms (%6.2f GFLOP/s) | omp %7.2f ms "
                "(%6.2f GFLOP/s) | speedup %.2fx | bitwise %s\n",
                v.name, ts * 1e3, flops / ts * 1e-9, to * 1e3, flops / to * 1e-9,
                ts / to, equal ? "equal" : "DIFFER");
  }

  {
    std::vector<float> p_serial(n * n), p_omp(n * n);
    const double ts = time_best(
        [&] { kernels::softmax_rows_serial(a.data(), p_serial.data(), n, n); }, reps);
    const double to = time_best(
        [&] { kernels::softmax_rows_omp(a.data(), p_omp.data(), n, n); }, reps);
    const bool equal =
        std::memcmp(p_serial.data(), p_omp.data(), p_serial.size() * sizeof(float)) == 0;
    all_equal = all_equal && equal;
    std::printf("  %-10s serial %7.2f ms | omp %7.2f ms | speedup %.2fx | bitwise %s\n",
                "softmax", ts * 1e3, to * 1e3, ts / to, equal ? "equal" : "DIFFER");
  }

  if (!all_equal) {
    std::printf("FAIL: backends disagree\n");
    return 1;
  }
  return 0;
}
