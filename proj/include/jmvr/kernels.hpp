#pragma once

// Numeric kernels behind the autodiff graph. Each kernel writes every output
// element from a fixed serial inner loop, so results are bitwise identical
// for any OpenMP thread count; parallelism only distributes disjoint output
// rows. jmvr::kernels::ref holds plain serial reference implementations used
// by the parity tests and the benchmark tool.

namespace jmvr::kernels {

enum class MatMode { NN, NT, TN };

void set_parallel(bool on);
bool parallel_enabled();

// C[m x n] = (accum ? C : 0) + op(A) * op(B)
//   NN: A[m x k], B[k x n]
//   NT: A[m x k], B[n x k]   (B transposed)
//   TN: A[k x m], B[k x n]   (A transposed)
void matmul(const double* A, const double* B, double* C, int m, int k, int n,
            MatMode mode, bool accum);

// Depthwise temporal convolution, zero padded to "same" length. x,y: [C x T],
// w: [C x k] (k odd), b: [C].
void conv1d_depthwise(const double* x, const double* w, const double* b, double* y,
                      int C, int T, int k);
void conv1d_depthwise_bwd(const double* x, const double* w, const double* dy,
                          double* dx, double* dw, double* db, int C, int T, int k);

// Single-feature-map 2-D convolution with "same" zero padding (kh, kw odd).
void conv2d_single(const double* x, const double* w, double bias, double* y,
                   int H, int W, int kh, int kw);
void conv2d_single_bwd(const double* x, const double* w, const double* dy,
                       double* dx, double* dw, double* dbias, int H, int W, int kh, int kw);

// Extract non-overlapping p x p patches of a [Cin x H x W] map into rows of
// cols[L x (Cin*p*p)], L = (H/p)*(W/p), patches in row-major order.
void im2col_patches(const double* x, double* cols, int Cin, int H, int W, int p);
void col2im_patches(const double* cols, double* x, int Cin, int H, int W, int p);

// Adaptive average pooling over columns: x[C x T] -> y[C x L].
void adaptive_avg_pool_cols(const double* x, double* y, int C, int T, int L);
void adaptive_avg_pool_cols_bwd(const double* dy, double* dx, int C, int T, int L);

// Row-wise softmax with max subtraction.
void softmax_rows(const double* x, double* y, int rows, int cols);

namespace ref {
// Straightforward serial implementations; kept as oracles for the parity
// tests and as the baseline in tools/bench_kernels.
void matmul(const double* A, const double* B, double* C, int m, int k, int n,
            MatMode mode, bool accum);
void conv1d_depthwise(const double* x, const double* w, const double* b, double* y,
                      int C, int T, int k);
void conv2d_single(const double* x, const double* w, double bias, double* y,
                   int H, int W, int kh, int kw);
void adaptive_avg_pool_cols(const double* x, double* y, int C, int T, int L);
void softmax_rows(const double* x, double* y, int rows, int cols);
} // namespace ref

} // namespace jmvr::kernels
