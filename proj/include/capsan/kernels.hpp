#pragma once

#include <cstddef>

// Numeric inner loops behind the tensor ops. Every kernel exists twice: a plain
// serial reference in kernels::serial and an OpenMP version in kernels::parallel.
// Both share the same per-element accumulation order, so results are bit-identical
// and the serial path stays usable as the oracle for the parallel one.
namespace capsan::kernels {

enum class Backend { serial, parallel };

Backend backend();
void set_backend(Backend b);
bool openmp_compiled();
int max_threads();

// Rows whose maximum entry is at or below this are treated as fully masked
// by softmax_rows and produce an all-zero row.
inline constexpr double kMaskedRowCutoff = -5e8;

namespace serial {
// c[m,n] = a[m,k] * b[k,n]       (+= when accumulate)
void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate);
// c[m,n] = a[m,k] * b[n,k]^T     (+= when accumulate)
void gemm_nt(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate);
// c[k,n] = a[m,k]^T * b[m,n]     (+= when accumulate)
void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate);
// Row-wise softmax with max subtraction; fully masked rows become zeros.
void softmax_rows(const double* x, double* y, int rows, int width);
// dx = y * (dy - sum_j dy_j y_j) per row (+= when accumulate).
void softmax_rows_grad(const double* y, const double* dy, double* dx, int rows, int width,
                       bool accumulate);
}  // namespace serial

namespace parallel {
void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate);
void gemm_nt(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate);
void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate);
void softmax_rows(const double* x, double* y, int rows, int width);
void softmax_rows_grad(const double* y, const double* dy, double* dx, int rows, int width,
                       bool accumulate);
}  // namespace parallel

// Dispatch through the active backend.
void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n,
             bool accumulate = false);
void gemm_nt(const double* a, const double* b, double* c, int m, int k, int n,
             bool accumulate = false);
void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n,
             bool accumulate = false);
void softmax_rows(const double* x, double* y, int rows, int width);
void softmax_rows_grad(const double* y, const double* dy, double* dx, int rows, int width,
                       bool accumulate = false);

}  // namespace capsan::kernels
