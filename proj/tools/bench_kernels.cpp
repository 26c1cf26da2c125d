#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <vector>

#include "capsan/attention.hpp"
#include "capsan/kernels.hpp"
#include "capsan/routing_san.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double run_ms(int reps, const std::function<void()>& fn) {
  fn();  // warm-up
  const auto start = Clock::now();
  for (int i = 0; i < reps; ++i) fn();
  const std::chrono::duration<double, std::milli> dt = Clock::now() - start;
  return dt.count() / reps;
}

void report(const char* name, double serial_ms, double parallel_ms) {
  std::printf("%-24s serial %9.3f ms   parallel %9.3f ms   speedup %.2fx\n", name, serial_ms,
              parallel_ms, serial_ms / parallel_ms);
}

}  // namespace

int main() {
  using namespace capsan;
  std::printf("openmp compiled: %s, max threads: %d\n",
              kernels::openmp_compiled() ? "yes" : "no", kernels::max_threads());

  std::mt19937_64 rng(42);
  auto fill = [&rng](std::vector<double>& v) {
    for (double& x : v) x = static_cast<double>(rng() >> 11) * 0x1.0p-53 - 0.5;
  };

  {
    const int n = 384;
    std::vector<double> a(static_cast<std::size_t>(n) * n), b(a.size()), c(a.size());
    fill(a);
    fill(b);
    const double s = run_ms(3, [&] { kernels::serial::gemm_nn(a.data(), b.data(), c.data(), n, n, n, false); });
    const double p = run_ms(3, [&] { kernels::parallel::gemm_nn(a.data(), b.data(), c.data(), n, n, n, false); });
    report("gemm 384x384x384", s, p);
  }

  {
    const int rows = 4096, width = 512;
    std::vector<double> x(static_cast<std::size_t>(rows) * width), y(x.size());
    fill(x);
    const double s = run_ms(10, [&] { kernels::serial::softmax_rows(x.data(), y.data(), rows, width); });
    const double p = run_ms(10, [&] { kernels::parallel::softmax_rows(x.data(), y.data(), rows, width); });
    report("softmax 4096x512", s, p);
  }

  {
    std::mt19937_64 wrng(7);
    MultiHeadProjection proj = MultiHeadProjection::init(64, 4, wrng);
    AcceptanceGate gate = AcceptanceGate::init(4, wrng);
    RoutingFlags flags{true, true, 3, false};
    std::vector<double> xd(16 * 64);
    fill(xd);
    Tensor x = Tensor::from_data({16, 64}, xd);
    NoGradGuard ng;
    auto forward = [&] { capsule_san_forward(x, proj, &gate, flags, false); };
    kernels::set_backend(kernels::Backend::serial);
    const double s = run_ms(5, forward);
    kernels::set_backend(kernels::Backend::parallel);
    const double p = run_ms(5, forward);
    report("capsule san L=16 d=64", s, p);
  }

  return 0;
}
