#pragma once

// Dense numeric kernels behind the autodiff ops. Each kernel is parallelized
// with OpenMP over independent output rows; adaptorx::kernels::ref holds the
// serial implementations used as the test oracle and benchmark baseline.
// Both paths share the same per-row routines, so results are bit-identical
// regardless of thread count.

#include <algorithm>
#include <cmath>
#include <cstring>

namespace adaptorx::kernels {

// Output-element work below this stays serial; threading tiny ops costs more
// than it saves.
inline constexpr long kParallelGrain = 1L << 14;

namespace rowwise {

// c_row[n] (+)= a_row[k] * B[k,n]
template <typename T>
inline void gemm_row(const T* a_row, const T* b, T* c_row, long k, long n, bool accumulate) {
    if (!accumulate) std::fill(c_row, c_row + n, T(0));
    for (long p = 0; p < k; ++p) {
        const T av = a_row[p];
        const T* b_row = b + p * n;
        for (long j = 0; j < n; ++j) c_row[j] += av * b_row[j];
    }
}

template <typename T>
inline void softmax_row(const T* x, T* y, long width) {
    T m = x[0];
    for (long j = 1; j < width; ++j) m = std::max(m, x[j]);
    T sum = T(0);
    for (long j = 0; j < width; ++j) {
        y[j] = std::exp(x[j] - m);
        sum += y[j];
    }
    const T inv = T(1) / sum;
    for (long j = 0; j < width; ++j) y[j] *= inv;
}

// dx_row += y ⊙ (dy − ⟨dy, y⟩)
template <typename T>
inline void softmax_backward_row(const T* y, const T* dy, T* dx, long width) {
    T dot = T(0);
    for (long j = 0; j < width; ++j) dot += dy[j] * y[j];
    for (long j = 0; j < width; ++j) dx[j] += y[j] * (dy[j] - dot);
}

template <typename T>
inline void layer_norm_row(const T* x, const T* gain, const T* bias, T* y, T* xhat,
                           T* inv_std, long width, T eps) {
    T mean = T(0);
    for (long j = 0; j < width; ++j) mean += x[j];
    mean /= T(width);
    T var = T(0);
    for (long j = 0; j < width; ++j) {
        const T d = x[j] - mean;
        var += d * d;
    }
    var /= T(width);
    const T is = T(1) / std::sqrt(var + eps);
    *inv_std = is;
    for (long j = 0; j < width; ++j) {
        xhat[j] = (x[j] - mean) * is;
        y[j] = xhat[j] * gain[j] + bias[j];
    }
}

// dx_row += layer-norm input gradient; dgain/dbias accumulated by the caller.
template <typename T>
inline void layer_norm_backward_row(const T* xhat, T inv_std, const T* gain, const T* dy,
                                    T* dx, long width) {
    T sum_g = T(0), sum_gx = T(0);
    for (long j = 0; j < width; ++j) {
        const T g = dy[j] * gain[j];
        sum_g += g;
        sum_gx += g * xhat[j];
    }
    const T inv_w = T(1) / T(width);
    for (long j = 0; j < width; ++j) {
        const T g = dy[j] * gain[j];
        dx[j] += inv_std * (g - inv_w * sum_g - xhat[j] * inv_w * sum_gx);
    }
}

template <typename T>
inline T gelu_value(T x) {
    return T(0.5) * x * (T(1) + std::erf(x * T(0.70710678118654752440)));
}

template <typename T>
inline T gelu_grad(T x) {
    const T cdf = T(0.5) * (T(1) + std::erf(x * T(0.70710678118654752440)));
    const T pdf = std::exp(T(-0.5) * x * x) * T(0.39894228040143267794);  // 1/sqrt(2π)
    return cdf + x * pdf;
}

// Row loss for cross-entropy with a stable log-sum-exp; probs written out for
// reuse in the backward pass.
template <typename T>
inline T cross_entropy_row(const T* logits, int target, T* probs, long width) {
    T m = logits[0];
    for (long j = 1; j < width; ++j) m = std::max(m, logits[j]);
    T sum = T(0);
    for (long j = 0; j < width; ++j) {
        probs[j] = std::exp(logits[j] - m);
        sum += probs[j];
    }
    const T inv = T(1) / sum;
    for (long j = 0; j < width; ++j) probs[j] *= inv;
    return std::log(sum) + m - logits[target];
}

}  // namespace rowwise

// ---------------------------------------------------------------------------
// Parallel kernels
// ---------------------------------------------------------------------------

// C[m,n] (+)= A[m,k] · B[k,n], all row-major contiguous.
template <typename T>
void gemm(const T* a, const T* b, T* c, long m, long k, long n, bool accumulate = false) {
#pragma omp parallel for schedule(static) if (m * n * k > kParallelGrain)
    for (long i = 0; i < m; ++i) {
        rowwise::gemm_row(a + i * k, b, c + i * n, k, n, accumulate);
    }
}

// Batched gemm; B is shared across the batch when b_batched is false.
template <typename T>
void gemm_batched(const T* a, const T* b, T* c, long batch, long m, long k, long n,
                  bool b_batched, bool accumulate = false) {
    if (batch == 1) {
        gemm(a, b, c, m, k, n, accumulate);
        return;
    }
#pragma omp parallel for schedule(static) if (batch * m * n * k > kParallelGrain)
    for (long s = 0; s < batch; ++s) {
        const T* bs = b_batched ? b + s * k * n : b;
        for (long i = 0; i < m; ++i) {
            rowwise::gemm_row(a + s * m * k + i * k, bs, c + s * m * n + i * n, k, n, accumulate);
        }
    }
}

// Y[cols,rows] = Xᵀ for X[rows,cols].
template <typename T>
void transpose_2d(const T* x, T* y, long rows, long cols) {
#pragma omp parallel for schedule(static) if (rows * cols > kParallelGrain)
    for (long i = 0; i < rows; ++i) {
        for (long j = 0; j < cols; ++j) y[j * rows + i] = x[i * cols + j];
    }
}

template <typename T>
void softmax_rows(const T* x, T* y, long rows, long width) {
#pragma omp parallel for schedule(static) if (rows * width > kParallelGrain)
    for (long i = 0; i < rows; ++i) rowwise::softmax_row(x + i * width, y + i * width, width);
}

template <typename T>
void softmax_backward_rows(const T* y, const T* dy, T* dx, long rows, long width) {
#pragma omp parallel for schedule(static) if (rows * width > kParallelGrain)
    for (long i = 0; i < rows; ++i) {
        rowwise::softmax_backward_row(y + i * width, dy + i * width, dx + i * width, width);
    }
}

template <typename T>
void layer_norm_rows(const T* x, const T* gain, const T* bias, T* y, T* xhat, T* inv_std,
                     long rows, long width, T eps) {
#pragma omp parallel for schedule(static) if (rows * width > kParallelGrain)
    for (long i = 0; i < rows; ++i) {
        rowwise::layer_norm_row(x + i * width, gain, bias, y + i * width, xhat + i * width,
                                inv_std + i, width, eps);
    }
}

// dgain/dbias are reduced serially across rows so accumulation order is fixed.
template <typename T>
void layer_norm_backward_rows(const T* xhat, const T* inv_std, const T* gain, const T* dy,
                              T* dx, T* dgain, T* dbias, long rows, long width) {
#pragma omp parallel for schedule(static) if (rows * width > kParallelGrain)
    for (long i = 0; i < rows; ++i) {
        rowwise::layer_norm_backward_row(xhat + i * width, inv_std[i], gain, dy + i * width,
                                         dx + i * width, width);
    }
    for (long i = 0; i < rows; ++i) {
        const T* dyr = dy + i * width;
        const T* xr = xhat + i * width;
        for (long j = 0; j < width; ++j) {
            dgain[j] += dyr[j] * xr[j];
            dbias[j] += dyr[j];
        }
    }
}

template <typename T>
void gelu(const T* x, T* y, long count) {
#pragma omp parallel for schedule(static) if (count > kParallelGrain)
    for (long i = 0; i < count; ++i) y[i] = rowwise::gelu_value(x[i]);
}

template <typename T>
void gelu_backward(const T* x, const T* dy, T* dx, long count) {
#pragma omp parallel for schedule(static) if (count > kParallelGrain)
    for (long i = 0; i < count; ++i) dx[i] += dy[i] * rowwise::gelu_grad(x[i]);
}

// Per-row losses; the caller reduces them (serially) so the corpus mean is
// independent of thread count.
template <typename T>
void cross_entropy_rows(const T* logits, const int* targets, T* row_loss, T* probs, long rows,
                        long width, int ignore_id) {
#pragma omp parallel for schedule(static) if (rows * width > kParallelGrain)
    for (long i = 0; i < rows; ++i) {
        if (targets[i] == ignore_id) {
            row_loss[i] = T(0);
            continue;
        }
        row_loss[i] =
            rowwise::cross_entropy_row(logits + i * width, targets[i], probs + i * width, width);
    }
}

// ---------------------------------------------------------------------------
// Serial reference implementations (testing + benchmark baseline)
// ---------------------------------------------------------------------------

namespace ref {

template <typename T>
void gemm(const T* a, const T* b, T* c, long m, long k, long n, bool accumulate = false) {
    for (long i = 0; i < m; ++i) rowwise::gemm_row(a + i * k, b, c + i * n, k, n, accumulate);
}

template <typename T>
void gemm_batched(const T* a, const T* b, T* c, long batch, long m, long k, long n,
                  bool b_batched, bool accumulate = false) {
    for (long s = 0; s < batch; ++s) {
        const T* bs = b_batched ? b + s * k * n : b;
        for (long i = 0; i < m; ++i) {
            rowwise::gemm_row(a + s * m * k + i * k, bs, c + s * m * n + i * n, k, n, accumulate);
        }
    }
}

template <typename T>
void transpose_2d(const T* x, T* y, long rows, long cols) {
    for (long i = 0; i < rows; ++i) {
        for (long j = 0; j < cols; ++j) y[j * rows + i] = x[i * cols + j];
    }
}

template <typename T>
void softmax_rows(const T* x, T* y, long rows, long width) {
    for (long i = 0; i < rows; ++i) rowwise::softmax_row(x + i * width, y + i * width, width);
}

template <typename T>
void layer_norm_rows(const T* x, const T* gain, const T* bias, T* y, T* xhat, T* inv_std,
                     long rows, long width, T eps) {
    for (long i = 0; i < rows; ++i) {
        rowwise::layer_norm_row(x + i * width, gain, bias, y + i * width, xhat + i * width,
                                inv_std + i, width, eps);
    }
}

template <typename T>
void gelu(const T* x, T* y, long count) {
    for (long i = 0; i < count; ++i) y[i] = rowwise::gelu_value(x[i]);
}

}  // namespace ref

}  // namespace adaptorx::kernels
