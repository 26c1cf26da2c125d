#include "capsan/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace capsan::kernels {

namespace {
std::atomic<Backend> g_backend{
#ifdef _OPENMP
    Backend::parallel
#else
    Backend::serial
#endif
};

// Below this many multiply-adds the parallel path runs the loop inline;
// spawning a team costs more than the work.
constexpr long kParallelGrain = 1 << 15;
}  // namespace

Backend backend() { return g_backend.load(); }
void set_backend(Backend b) { g_backend.store(b); }

bool openmp_compiled() {
#ifdef _OPENMP
  return true;
#else
  return false;
#endif
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

// ---------------------------------------------------------------------------
// serial reference kernels
// ---------------------------------------------------------------------------

namespace serial {

void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    double* crow = c + static_cast<std::size_t>(i) * n;
    if (!accumulate) std::memset(crow, 0, sizeof(double) * n);
    for (int p = 0; p < k; ++p) {
      const double av = a[static_cast<std::size_t>(i) * k + p];
      const double* brow = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_nt(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    for (int j = 0; j < n; ++j) {
      const double* brow = b + static_cast<std::size_t>(j) * k;
      double sum = 0.0;
      for (int p = 0; p < k; ++p) sum += arow[p] * brow[p];
      double& out = c[static_cast<std::size_t>(i) * n + j];
      out = accumulate ? out + sum : sum;
    }
  }
}

void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
  for (int p = 0; p < k; ++p) {
    double* crow = c + static_cast<std::size_t>(p) * n;
    if (!accumulate) std::memset(crow, 0, sizeof(double) * n);
    for (int i = 0; i < m; ++i) {
      const double av = a[static_cast<std::size_t>(i) * k + p];
      const double* brow = b + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void softmax_rows(const double* x, double* y, int rows, int width) {
  for (int r = 0; r < rows; ++r) {
    const double* xr = x + static_cast<std::size_t>(r) * width;
    double* yr = y + static_cast<std::size_t>(r) * width;
    double mx = xr[0];
    for (int j = 1; j < width; ++j) mx = std::max(mx, xr[j]);
    if (mx <= kMaskedRowCutoff) {
      std::memset(yr, 0, sizeof(double) * width);
      continue;
    }
    double sum = 0.0;
    for (int j = 0; j < width; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    const double inv = 1.0 / sum;
    for (int j = 0; j < width; ++j) yr[j] *= inv;
  }
}

void softmax_rows_grad(const double* y, const double* dy, double* dx, int rows, int width,
                       bool accumulate) {
  for (int r = 0; r < rows; ++r) {
    const double* yr = y + static_cast<std::size_t>(r) * width;
    const double* dyr = dy + static_cast<std::size_t>(r) * width;
    double* dxr = dx + static_cast<std::size_t>(r) * width;
    double dot = 0.0;
    for (int j = 0; j < width; ++j) dot += dyr[j] * yr[j];
    for (int j = 0; j < width; ++j) {
      const double g = yr[j] * (dyr[j] - dot);
      dxr[j] = accumulate ? dxr[j] + g : g;
    }
  }
}

}  // namespace serial

// ---------------------------------------------------------------------------
// OpenMP kernels; loop nests mirror the serial ones so that each output
// element sees the same accumulation order and results match bitwise.
// ---------------------------------------------------------------------------

namespace parallel {

void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
  const long work = static_cast<long>(m) * k * n;
  if (work < kParallelGrain) {
    serial::gemm_nn(a, b, c, m, k, n, accumulate);
    return;
  }
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    double* crow = c + static_cast<std::size_t>(i) * n;
    if (!accumulate) std::memset(crow, 0, sizeof(double) * n);
    for (int p = 0; p < k; ++p) {
      const double av = a[static_cast<std::size_t>(i) * k + p];
      const double* brow = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_nt(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
  const long work = static_cast<long>(m) * k * n;
  if (work < kParallelGrain) {
    serial::gemm_nt(a, b, c, m, k, n, accumulate);
    return;
  }
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    for (int j = 0; j < n; ++j) {
      const double* brow = b + static_cast<std::size_t>(j) * k;
      double sum = 0.0;
      for (int p = 0; p < k; ++p) sum += arow[p] * brow[p];
      double& out = c[static_cast<std::size_t>(i) * n + j];
      out = accumulate ? out + sum : sum;
    }
  }
}

void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
  const long work = static_cast<long>(m) * k * n;
  if (work < kParallelGrain) {
    serial::gemm_tn(a, b, c, m, k, n, accumulate);
    return;
  }
#pragma omp parallel for schedule(static)
  for (int p = 0; p < k; ++p) {
    double* crow = c + static_cast<std::size_t>(p) * n;
    if (!accumulate) std::memset(crow, 0, sizeof(double) * n);
    for (int i = 0; i < m; ++i) {
      const double av = a[static_cast<std::size_t>(i) * k + p];
      const double* brow = b + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void softmax_rows(const double* x, double* y, int rows, int width) {
  const long work = static_cast<long>(rows) * width;
  if (work < kParallelGrain) {
    serial::softmax_rows(x, y, rows, width);
    return;
  }
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) {
    serial::softmax_rows(x + static_cast<std::size_t>(r) * width,
                         y + static_cast<std::size_t>(r) * width, 1, width);
  }
}

void softmax_rows_grad(const double* y, const double* dy, double* dx, int rows, int width,
                       bool accumulate) {
  const long work = static_cast<long>(rows) * width;
  if (work < kParallelGrain) {
    serial::softmax_rows_grad(y, dy, dx, rows, width, accumulate);
    return;
  }
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) {
    const std::size_t off = static_cast<std::size_t>(r) * width;
    serial::softmax_rows_grad(y + off, dy + off, dx + off, 1, width, accumulate);
  }
}

}  // namespace parallel

// ---------------------------------------------------------------------------
// dispatch
// ---------------------------------------------------------------------------

void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
  if (backend() == Backend::parallel)
    parallel::gemm_nn(a, b, c, m, k, n, accumulate);
  else
    serial::gemm_nn(a, b, c, m, k, n, accumulate);
}

void gemm_nt(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
  if (backend() == Backend::parallel)
    parallel::gemm_nt(a, b, c, m, k, n, accumulate);
  else
    serial::gemm_nt(a, b, c, m, k, n, accumulate);
}

void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
  if (backend() == Backend::parallel)
    parallel::gemm_tn(a, b, c, m, k, n, accumulate);
  else
    serial::gemm_tn(a, b, c, m, k, n, accumulate);
}

void softmax_rows(const double* x, double* y, int rows, int width) {
  if (backend() == Backend::parallel)
    parallel::softmax_rows(x, y, rows, width);
  else
    serial::softmax_rows(x, y, rows, width);
}

void softmax_rows_grad(const double* y, const double* dy, double* dx, int rows, int width,
                       bool accumulate) {
  if (backend() == Backend::parallel)
    parallel::softmax_rows_grad(y, dy, dx, rows, width, accumulate);
  else
    serial::softmax_rows_grad(y, dy, dx, rows, width, accumulate);
}

}  // namespace capsan::kernels
