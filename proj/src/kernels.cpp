#include "jmvr/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace jmvr::kernels {

namespace {
bool g_parallel = true;
// Below this many multiply-adds the OpenMP fork costs more than it saves.
constexpr long long kMinParWork = 1 << 15;
} // namespace

void set_parallel(bool on) { g_parallel = on; }
bool parallel_enabled() { return g_parallel; }

void matmul(const double* A, const double* B, double* C, int m, int k, int n,
            MatMode mode, bool accum) {
    const long long work = static_cast<long long>(m) * k * n;
    const bool par = g_parallel && work >= kMinParWork;

    switch (mode) {
    case MatMode::NN: {
#pragma omp parallel for schedule(static) if (par)
        for (int i = 0; i < m; ++i) {
            double* crow = C + static_cast<size_t>(i) * n;
            if (!accum) std::memset(crow, 0, sizeof(double) * static_cast<size_t>(n));
            const double* arow = A + static_cast<size_t>(i) * k;
            for (int l = 0; l < k; ++l) {
                const double a = arow[l];
                const double* brow = B + static_cast<size_t>(l) * n;
                for (int j = 0; j < n; ++j) crow[j] += a * brow[j];
            }
        }
        break;
    }
    case MatMode::NT: {
#pragma omp parallel for schedule(static) if (par)
        for (int i = 0; i < m; ++i) {
            const double* arow = A + static_cast<size_t>(i) * k;
            double* crow = C + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) {
                const double* brow = B + static_cast<size_t>(j) * k;
                double s = 0.0;
                for (int l = 0; l < k; ++l) s += arow[l] * brow[l];
                crow[j] = accum ? crow[j] + s : s;
            }
        }
        break;
    }
    case MatMode::TN: {
#pragma omp parallel for schedule(static) if (par)
        for (int i = 0; i < m; ++i) {
            double* crow = C + static_cast<size_t>(i) * n;
            if (!accum) std::memset(crow, 0, sizeof(double) * static_cast<size_t>(n));
            for (int l = 0; l < k; ++l) {
                const double a = A[static_cast<size_t>(l) * m + i];
                const double* brow = B + static_cast<size_t>(l) * n;
                for (int j = 0; j < n; ++j) crow[j] += a * brow[j];
            }
        }
        break;
    }
    }
}

void conv1d_depthwise(const double* x, const double* w, const double* b, double* y,
                      int C, int T, int k) {
    const int half = k / 2;
    const bool par = g_parallel && static_cast<long long>(C) * T * k >= kMinParWork;
#pragma omp parallel for schedule(static) if (par)
    for (int c = 0; c < C; ++c) {
        const double* xc = x + static_cast<size_t>(c) * T;
        const double* wc = w + static_cast<size_t>(c) * k;
        double* yc = y + static_cast<size_t>(c) * T;
        for (int t = 0; t < T; ++t) {
            double s = b ? b[c] : 0.0;
            const int j0 = std::max(0, half - t);
            const int j1 = std::min(k, T + half - t);
            for (int j = j0; j < j1; ++j) s += wc[j] * xc[t + j - half];
            yc[t] = s;
        }
    }
}

void conv1d_depthwise_bwd(const double* x, const double* w, const double* dy,
                          double* dx, double* dw, double* db, int C, int T, int k) {
    const int half = k / 2;
    const bool par = g_parallel && static_cast<long long>(C) * T * k >= kMinParWork;
#pragma omp parallel for schedule(static) if (par)
    for (int c = 0; c < C; ++c) {
        const double* xc = x + static_cast<size_t>(c) * T;
        const double* wc = w + static_cast<size_t>(c) * k;
        const double* gc = dy + static_cast<size_t>(c) * T;
        if (dx) {
            double* dxc = dx + static_cast<size_t>(c) * T;
            for (int s = 0; s < T; ++s) {
                double acc = 0.0;
                // y[t] consumed x[s] with weight w[s - t + half]
                const int t0 = std::max(0, s - half);
                const int t1 = std::min(T - 1, s + half);
                for (int t = t0; t <= t1; ++t) acc += wc[s - t + half] * gc[t];
                dxc[s] += acc;
            }
        }
        if (dw) {
            double* dwc = dw + static_cast<size_t>(c) * k;
            for (int j = 0; j < k; ++j) {
                double acc = 0.0;
                const int t0 = std::max(0, half - j);
                const int t1 = std::min(T, T + half - j);
                for (int t = t0; t < t1; ++t) acc += gc[t] * xc[t + j - half];
                dwc[j] += acc;
            }
        }
        if (db) {
            double acc = 0.0;
            for (int t = 0; t < T; ++t) acc += gc[t];
            db[c] += acc;
        }
    }
}

void conv2d_single(const double* x, const double* w, double bias, double* y,
                   int H, int W, int kh, int kw) {
    const int hh = kh / 2, hw = kw / 2;
    const bool par = g_parallel && static_cast<long long>(H) * W * kh * kw >= kMinParWork;
#pragma omp parallel for schedule(static) if (par)
    for (int i = 0; i < H; ++i) {
        double* yrow = y + static_cast<size_t>(i) * W;
        for (int j = 0; j < W; ++j) {
            double s = bias;
            const int u0 = std::max(0, hh - i);
            const int u1 = std::min(kh, H + hh - i);
            for (int u = u0; u < u1; ++u) {
                const double* xrow = x + static_cast<size_t>(i + u - hh) * W;
                const double* wrow = w + static_cast<size_t>(u) * kw;
                const int v0 = std::max(0, hw - j);
                const int v1 = std::min(kw, W + hw - j);
                for (int v = v0; v < v1; ++v) s += wrow[v] * xrow[j + v - hw];
            }
            yrow[j] = s;
        }
    }
}

void conv2d_single_bwd(const double* x, const double* w, const double* dy,
                       double* dx, double* dw, double* dbias, int H, int W, int kh, int kw) {
    const int hh = kh / 2, hw = kw / 2;
    if (dx) {
        const bool par = g_parallel && static_cast<long long>(H) * W * kh * kw >= kMinParWork;
#pragma omp parallel for schedule(static) if (par)
        for (int i = 0; i < H; ++i) {
            double* dxrow = dx + static_cast<size_t>(i) * W;
            for (int j = 0; j < W; ++j) {
                double acc = 0.0;
                for (int u = 0; u < kh; ++u) {
                    const int oi = i - u + hh;
                    if (oi < 0 || oi >= H) continue;
                    const double* grow = dy + static_cast<size_t>(oi) * W;
                    const double* wrow = w + static_cast<size_t>(u) * kw;
                    for (int v = 0; v < kw; ++v) {
                        const int oj = j - v + hw;
                        if (oj < 0 || oj >= W) continue;
                        acc += wrow[v] * grow[oj];
                    }
                }
                dxrow[j] += acc;
            }
        }
    }
    // Weight and bias gradients are small; serial accumulation keeps them
    // deterministic.
    if (dw) {
        for (int u = 0; u < kh; ++u)
            for (int v = 0; v < kw; ++v) {
                double acc = 0.0;
                const int i0 = std::max(0, hh - u), i1 = std::min(H, H + hh - u);
                const int j0 = std::max(0, hw - v), j1 = std::min(W, W + hw - v);
                for (int i = i0; i < i1; ++i) {
                    const double* grow = dy + static_cast<size_t>(i) * W;
                    const double* xrow = x + static_cast<size_t>(i + u - hh) * W;
                    for (int j = j0; j < j1; ++j) acc += grow[j] * xrow[j + v - hw];
                }
                dw[static_cast<size_t>(u) * kw + v] += acc;
            }
    }
    if (dbias) {
        double acc = 0.0;
        const long long n = static_cast<long long>(H) * W;
        for (long long i = 0; i < n; ++i) acc += dy[i];
        *dbias += acc;
    }
}

void im2col_patches(const double* x, double* cols, int Cin, int H, int W, int p) {
    const int gh = H / p, gw = W / p;
    const int L = gh * gw;
    const int row_len = Cin * p * p;
    const bool par = g_parallel && static_cast<long long>(L) * row_len >= kMinParWork;
#pragma omp parallel for schedule(static) if (par)
    for (int t = 0; t < L; ++t) {
        const int pi = t / gw, pj = t % gw;
        double* out = cols + static_cast<size_t>(t) * row_len;
        for (int c = 0; c < Cin; ++c) {
            const double* xc = x + static_cast<size_t>(c) * H * W;
            for (int u = 0; u < p; ++u) {
                const double* src = xc + static_cast<size_t>(pi * p + u) * W + pj * p;
                std::memcpy(out, src, sizeof(double) * static_cast<size_t>(p));
                out += p;
            }
        }
    }
}

void col2im_patches(const double* cols, double* x, int Cin, int H, int W, int p) {
    const int gh = H / p, gw = W / p;
    const int L = gh * gw;
    const int row_len = Cin * p * p;
    // Patches are disjoint, so scatter per patch races on nothing.
    const bool par = g_parallel && static_cast<long long>(L) * row_len >= kMinParWork;
#pragma omp parallel for schedule(static) if (par)
    for (int t = 0; t < L; ++t) {
        const int pi = t / gw, pj = t % gw;
        const double* in = cols + static_cast<size_t>(t) * row_len;
        for (int c = 0; c < Cin; ++c) {
            double* xc = x + static_cast<size_t>(c) * H * W;
            for (int u = 0; u < p; ++u) {
                double* dst = xc + static_cast<size_t>(pi * p + u) * W + pj * p;
                for (int v = 0; v < p; ++v) dst[v] += in[v];
                in += p;
            }
        }
    }
}

void adaptive_avg_pool_cols(const double* x, double* y, int C, int T, int L) {
    const bool par = g_parallel && static_cast<long long>(C) * T >= kMinParWork;
#pragma omp parallel for schedule(static) if (par)
    for (int c = 0; c < C; ++c) {
        const double* xc = x + static_cast<size_t>(c) * T;
        double* yc = y + static_cast<size_t>(c) * L;
        for (int i = 0; i < L; ++i) {
            const int s = (i * T) / L;
            const int e = ((i + 1) * T + L - 1) / L;
            double acc = 0.0;
            for (int t = s; t < e; ++t) acc += xc[t];
            yc[i] = acc / (e - s);
        }
    }
}

void adaptive_avg_pool_cols_bwd(const double* dy, double* dx, int C, int T, int L) {
    const bool par = g_parallel && static_cast<long long>(C) * T >= kMinParWork;
#pragma omp parallel for schedule(static) if (par)
    for (int c = 0; c < C; ++c) {
        const double* gc = dy + static_cast<size_t>(c) * L;
        double* dxc = dx + static_cast<size_t>(c) * T;
        for (int i = 0; i < L; ++i) {
            const int s = (i * T) / L;
            const int e = ((i + 1) * T + L - 1) / L;
            const double g = gc[i] / (e - s);
            for (int t = s; t < e; ++t) dxc[t] += g;
        }
    }
}

void softmax_rows(const double* x, double* y, int rows, int cols) {
    const bool par = g_parallel && static_cast<long long>(rows) * cols >= kMinParWork;
#pragma omp parallel for schedule(static) if (par)
    for (int i = 0; i < rows; ++i) {
        const double* xr = x + static_cast<size_t>(i) * cols;
        double* yr = y + static_cast<size_t>(i) * cols;
        double mx = xr[0];
        for (int j = 1; j < cols; ++j) mx = std::max(mx, xr[j]);
        double sum = 0.0;
        for (int j = 0; j < cols; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            sum += yr[j];
        }
        const double inv = 1.0 / sum;
        for (int j = 0; j < cols; ++j) yr[j] *= inv;
    }
}

namespace ref {

void matmul(const double* A, const double* B, double* C, int m, int k, int n,
            MatMode mode, bool accum) {
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int l = 0; l < k; ++l) {
                double a = (mode == MatMode::TN) ? A[static_cast<size_t>(l) * m + i]
                                                 : A[static_cast<size_t>(i) * k + l];
                double b = (mode == MatMode::NT) ? B[static_cast<size_t>(j) * k + l]
                                                 : B[static_cast<size_t>(l) * n + j];
                s += a * b;
            }
            double& c = C[static_cast<size_t>(i) * n + j];
            c = accum ? c + s : s;
        }
}

void conv1d_depthwise(const double* x, const double* w, const double* b, double* y,
                      int C, int T, int k) {
    const int half = k / 2;
    for (int c = 0; c < C; ++c)
        for (int t = 0; t < T; ++t) {
            double s = b ? b[c] : 0.0;
            for (int j = 0; j < k; ++j) {
                const int src = t + j - half;
                if (src >= 0 && src < T)
                    s += w[static_cast<size_t>(c) * k + j] * x[static_cast<size_t>(c) * T + src];
            }
            y[static_cast<size_t>(c) * T + t] = s;
        }
}

void conv2d_single(const double* x, const double* w, double bias, double* y,
                   int H, int W, int kh, int kw) {
    const int hh = kh / 2, hw = kw / 2;
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            double s = bias;
            for (int u = 0; u < kh; ++u)
                for (int v = 0; v < kw; ++v) {
                    const int si = i + u - hh, sj = j + v - hw;
                    if (si >= 0 && si < H && sj >= 0 && sj < W)
                        s += w[static_cast<size_t>(u) * kw + v] * x[static_cast<size_t>(si) * W + sj];
                }
            y[static_cast<size_t>(i) * W + j] = s;
        }
}

void adaptive_avg_pool_cols(const double* x, double* y, int C, int T, int L) {
    for (int c = 0; c < C; ++c)
        for (int i = 0; i < L; ++i) {
            const int s = (i * T) / L;
            const int e = ((i + 1) * T + L - 1) / L;
            double acc = 0.0;
            for (int t = s; t < e; ++t) acc += x[static_cast<size_t>(c) * T + t];
            y[static_cast<size_t>(c) * L + i] = acc / (e - s);
        }
}

void softmax_rows(const double* x, double* y, int rows, int cols) {
    for (int i = 0; i < rows; ++i) {
        const double* xr = x + static_cast<size_t>(i) * cols;
        double* yr = y + static_cast<size_t>(i) * cols;
        double mx = xr[0];
        for (int j = 1; j < cols; ++j) mx = std::max(mx, xr[j]);
        double sum = 0.0;
        for (int j = 0; j < cols; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            sum += yr[j];
        }
        for (int j = 0; j < cols; ++j) yr[j] /= sum;
    }
}

} // namespace ref

} // namespace jmvr::kernels
