#include "rmdl/kernels.hpp"

#include <algorithm>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace rmdl::kernels {

namespace {

thread_local int tls_threads = 0;

constexpr std::size_t kRowBlock = 4;
constexpr std::size_t kColBlock = 256;
// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

int threads_for(std::size_t work) {
    const int t = kernel_threads();
    return work >= kParallelWork ? t : 1;
}

// C rows [i0, i1) x cols [j0, j1) of A·B where A is read through `a(i, k)`.
template <typename T, typename AAt>
void gemm_tile(std::size_t i0, std::size_t i1, std::size_t j0, std::size_t j1, std::size_t N, std::size_t K,
               AAt a, const T* __restrict B, T* __restrict C, bool accumulate) {
    const std::size_t w = j1 - j0;
    if (!accumulate)
        for (std::size_t i = i0; i < i1; ++i) std::fill_n(C + i * N + j0, w, T{0});
    std::size_t i = i0;
    for (; i + kRowBlock <= i1; i += kRowBlock) {
        T* __restrict c0 = C + (i + 0) * N + j0;
        T* __restrict c1 = C + (i + 1) * N + j0;
        T* __restrict c2 = C + (i + 2) * N + j0;
        T* __restrict c3 = C + (i + 3) * N + j0;
        for (std::size_t k = 0; k < K; ++k) {
            const T a0 = a(i + 0, k), a1 = a(i + 1, k), a2 = a(i + 2, k), a3 = a(i + 3, k);
            const T* __restrict b = B + k * N + j0;
            for (std::size_t j = 0; j < w; ++j) {
                const T bj = b[j];
                c0[j] += a0 * bj;
                c1[j] += a1 * bj;
                c2[j] += a2 * bj;
                c3[j] += a3 * bj;
            }
        }
    }
    for (; i < i1; ++i) {
        T* __restrict c = C + i * N + j0;
        for (std::size_t k = 0; k < K; ++k) {
            const T ai = a(i, k);
            const T* __restrict b = B + k * N + j0;
            for (std::size_t j = 0; j < w; ++j) c[j] += ai * b[j];
        }
    }
}

template <typename T, typename AAt>
void gemm_driver(std::size_t M, std::size_t N, std::size_t K, AAt a, const T* B, T* C, bool accumulate) {
    if (M == 0 || N == 0) return;
    const std::size_t row_blocks = (M + kRowBlock - 1) / kRowBlock;
    const std::size_t col_blocks = (N + kColBlock - 1) / kColBlock;
    const std::ptrdiff_t tasks = static_cast<std::ptrdiff_t>(row_blocks * col_blocks);
    const int nt = threads_for(M * N * K);
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1)
    for (std::ptrdiff_t t = 0; t < tasks; ++t) {
        const std::size_t rb = static_cast<std::size_t>(t) / col_blocks;
        const std::size_t cb = static_cast<std::size_t>(t) % col_blocks;
        const std::size_t i0 = rb * kRowBlock, i1 = std::min(M, i0 + kRowBlock);
        const std::size_t j0 = cb * kColBlock, j1 = std::min(N, j0 + kColBlock);
        gemm_tile(i0, i1, j0, j1, N, K, a, B, C, accumulate);
    }
}

} // namespace

int kernel_threads() {
    if (tls_threads > 0) return tls_threads;
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void set_kernel_threads(int threads) { tls_threads = threads; }

template <typename T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, std::span<const T> A, std::span<const T> B,
             std::span<T> C, bool accumulate) {
    const T* a = A.data();
    gemm_driver(M, N, K, [a, K](std::size_t i, std::size_t k) { return a[i * K + k]; }, B.data(), C.data(),
                accumulate);
}

template <typename T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, std::span<const T> A, std::span<const T> B,
             std::span<T> C, bool accumulate) {
    std::vector<T> bt(K * N);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t k = 0; k < K; ++k) bt[k * N + n] = B[n * K + k];
    gemm_nn<T>(M, N, K, A, bt, C, accumulate);
}

template <typename T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, std::span<const T> A, std::span<const T> B,
             std::span<T> C, bool accumulate) {
    const T* a = A.data();
    gemm_driver(M, N, K, [a, M](std::size_t i, std::size_t k) { return a[k * M + i]; }, B.data(), C.data(),
                accumulate);
}

template <typename T>
void add_row_bias(std::size_t M, std::size_t N, std::span<const T> bias, std::span<T> C) {
    const std::ptrdiff_t rows = static_cast<std::ptrdiff_t>(M);
    const int nt = threads_for(M * N * 8);
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1)
    for (std::ptrdiff_t i = 0; i < rows; ++i) {
        T* c = C.data() + static_cast<std::size_t>(i) * N;
        for (std::size_t j = 0; j < N; ++j) c[j] += bias[j];
    }
}

template <typename T>
void column_sums(std::size_t M, std::size_t N, std::span<const T> A, std::span<T> out, bool accumulate) {
    if (!accumulate) std::fill_n(out.data(), N, T{0});
    for (std::size_t i = 0; i < M; ++i) {
        const T* a = A.data() + i * N;
        for (std::size_t j = 0; j < N; ++j) out[j] += a[j];
    }
}

template <typename T>
void im2col(const ConvGeometry& g, std::span<const T> input, std::span<T> columns) {
    const std::size_t oh = g.out_h(), ow = g.out_w(), patch = g.patch();
    const std::size_t seg = g.kernel_w * g.channels;
    const std::ptrdiff_t rows = static_cast<std::ptrdiff_t>(g.rows());
    const int nt = threads_for(g.rows() * patch);
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1)
    for (std::ptrdiff_t r = 0; r < rows; ++r) {
        const std::size_t ru = static_cast<std::size_t>(r);
        const std::size_t b = ru / (oh * ow), oy = (ru / ow) % oh, ox = ru % ow;
        T* dst = columns.data() + ru * patch;
        for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
            const T* src = input.data() + ((b * g.height + oy + ky) * g.width + ox) * g.channels;
            std::copy_n(src, seg, dst + ky * seg);
        }
    }
}

template <typename T>
void col2im(const ConvGeometry& g, std::span<const T> columns, std::span<T> input_grad) {
    const std::size_t oh = g.out_h(), ow = g.out_w(), patch = g.patch();
    const std::size_t seg = g.kernel_w * g.channels;
    const std::size_t image = g.height * g.width * g.channels;
    const std::ptrdiff_t batch = static_cast<std::ptrdiff_t>(g.batch);
    const int nt = threads_for(g.rows() * patch);
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1)
    for (std::ptrdiff_t bi = 0; bi < batch; ++bi) {
        const std::size_t b = static_cast<std::size_t>(bi);
        std::fill_n(input_grad.data() + b * image, image, T{0});
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                const T* src = columns.data() + ((b * oh + oy) * ow + ox) * patch;
                for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
                    T* dst = input_grad.data() + ((b * g.height + oy + ky) * g.width + ox) * g.channels;
                    const T* s = src + ky * seg;
                    for (std::size_t e = 0; e < seg; ++e) dst[e] += s[e];
                }
            }
    }
}

template <typename T>
void maxpool_forward(const PoolGeometry& g, std::span<const T> input, std::span<T> output,
                     std::span<std::uint32_t> argmax) {
    const std::size_t oh = g.out_h(), ow = g.out_w(), C = g.channels;
    const std::ptrdiff_t batch = static_cast<std::ptrdiff_t>(g.batch);
    const int nt = threads_for(g.out_size() * g.window_h * g.window_w);
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1)
    for (std::ptrdiff_t bi = 0; bi < batch; ++bi) {
        const std::size_t b = static_cast<std::size_t>(bi);
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox)
                for (std::size_t c = 0; c < C; ++c) {
                    std::size_t best = ((b * g.height + oy * g.stride_h) * g.width + ox * g.stride_w) * C + c;
                    for (std::size_t wy = 0; wy < g.window_h; ++wy)
                        for (std::size_t wx = 0; wx < g.window_w; ++wx) {
                            const std::size_t idx =
                                ((b * g.height + oy * g.stride_h + wy) * g.width + ox * g.stride_w + wx) * C + c;
                            if (input[idx] > input[best]) best = idx;
                        }
                    const std::size_t o = ((b * oh + oy) * ow + ox) * C + c;
                    output[o] = input[best];
                    argmax[o] = static_cast<std::uint32_t>(best);
                }
    }
}

template <typename T>
void maxpool_backward(const PoolGeometry& g, std::span<const T> grad_out, std::span<const std::uint32_t> argmax,
                      std::span<T> grad_in) {
    std::fill(grad_in.begin(), grad_in.end(), T{0});
    // Windows may overlap when stride < window, so the scatter stays serial.
    for (std::size_t o = 0; o < g.out_size(); ++o) grad_in[argmax[o]] += grad_out[o];
}

namespace reference {

template <typename T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, std::span<const T> A, std::span<const T> B,
             std::span<T> C, bool accumulate) {
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j) {
            T c = accumulate ? C[i * N + j] : T{0};
            for (std::size_t k = 0; k < K; ++k) c += A[i * K + k] * B[k * N + j];
            C[i * N + j] = c;
        }
}

template <typename T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, std::span<const T> A, std::span<const T> B,
             std::span<T> C, bool accumulate) {
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j) {
            T c = accumulate ? C[i * N + j] : T{0};
            for (std::size_t k = 0; k < K; ++k) c += A[i * K + k] * B[j * K + k];
            C[i * N + j] = c;
        }
}

template <typename T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, std::span<const T> A, std::span<const T> B,
             std::span<T> C, bool accumulate) {
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j) {
            T c = accumulate ? C[i * N + j] : T{0};
            for (std::size_t k = 0; k < K; ++k) c += A[k * M + i] * B[k * N + j];
            C[i * N + j] = c;
        }
}

template <typename T>
void im2col(const ConvGeometry& g, std::span<const T> input, std::span<T> columns) {
    std::size_t r = 0;
    for (std::size_t b = 0; b < g.batch; ++b)
        for (std::size_t oy = 0; oy < g.out_h(); ++oy)
            for (std::size_t ox = 0; ox < g.out_w(); ++ox, ++r) {
                std::size_t col = 0;
                for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
                    for (std::size_t kx = 0; kx < g.kernel_w; ++kx)
                        for (std::size_t c = 0; c < g.channels; ++c, ++col)
                            columns[r * g.patch() + col] =
                                input[((b * g.height + oy + ky) * g.width + ox + kx) * g.channels + c];
            }
}

template <typename T>
void col2im(const ConvGeometry& g, std::span<const T> columns, std::span<T> input_grad) {
    std::fill(input_grad.begin(), input_grad.end(), T{0});
    std::size_t r = 0;
    for (std::size_t b = 0; b < g.batch; ++b)
        for (std::size_t oy = 0; oy < g.out_h(); ++oy)
            for (std::size_t ox = 0; ox < g.out_w(); ++ox, ++r) {
                std::size_t col = 0;
                for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
                    for (std::size_t kx = 0; kx < g.kernel_w; ++kx)
                        for (std::size_t c = 0; c < g.channels; ++c, ++col)
                            input_grad[((b * g.height + oy + ky) * g.width + ox + kx) * g.channels + c] +=
                                columns[r * g.patch() + col];
            }
}

template <typename T>
void maxpool_forward(const PoolGeometry& g, std::span<const T> input, std::span<T> output,
                     std::span<std::uint32_t> argmax) {
    std::size_t o = 0;
    for (std::size_t b = 0; b < g.batch; ++b)
        for (std::size_t oy = 0; oy < g.out_h(); ++oy)
            for (std::size_t ox = 0; ox < g.out_w(); ++ox)
                for (std::size_t c = 0; c < g.channels; ++c, ++o) {
                    bool first = true;
                    for (std::size_t wy = 0; wy < g.window_h; ++wy)
                        for (std::size_t wx = 0; wx < g.window_w; ++wx) {
                            const std::size_t idx =
                                ((b * g.height + oy * g.stride_h + wy) * g.width + ox * g.stride_w + wx) *
                                    g.channels +
                                c;
                            if (first || input[idx] > output[o]) {
                                output[o] = input[idx];
                                argmax[o] = static_cast<std::uint32_t>(idx);
                                first = false;
                            }
                        }
                }
}

} // namespace reference

#define RMDL_INSTANTIATE_KERNELS(T)                                                                           \
    template void gemm_nn<T>(std::size_t, std::size_t, std::size_t, std::span<const T>, std::span<const T>,    \
                             std::span<T>, bool);                                                              \
    template void gemm_nt<T>(std::size_t, std::size_t, std::size_t, std::span<const T>, std::span<const T>,    \
                             std::span<T>, bool);                                                              \
    template void gemm_tn<T>(std::size_t, std::size_t, std::size_t, std::span<const T>, std::span<const T>,    \
                             std::span<T>, bool);                                                              \
    template void add_row_bias<T>(std::size_t, std::size_t, std::span<const T>, std::span<T>);                 \
    template void column_sums<T>(std::size_t, std::size_t, std::span<const T>, std::span<T>, bool);            \
    template void im2col<T>(const ConvGeometry&, std::span<const T>, std::span<T>);                            \
    template void col2im<T>(const ConvGeometry&, std::span<const T>, std::span<T>);                            \
    template void maxpool_forward<T>(const PoolGeometry&, std::span<const T>, std::span<T>,                    \
                                     std::span<std::uint32_t>);                                                \
    template void maxpool_backward<T>(const PoolGeometry&, std::span<const T>, std::span<const std::uint32_t>, \
                                      std::span<T>);                                                           \
    namespace reference {                                                                                      \
    template void gemm_nn<T>(std::size_t, std::size_t, std::size_t, std::span<const T>, std::span<const T>,    \
                             std::span<T>, bool);                                                              \
    template void gemm_nt<T>(std::size_t, std::size_t, std::size_t, std::span<const T>, std::span<const T>,    \
                             std::span<T>, bool);                                                              \
    template void gemm_tn<T>(std::size_t, std::size_t, std::size_t, std::span<const T>, std::span<const T>,    \
                             std::span<T>, bool);                                                              \
    template void im2col<T>(const ConvGeometry&, std::span<const T>, std::span<T>);                            \
    template void col2im<T>(const ConvGeometry&, std::span<const T>, std::span<T>);                            \
    template void maxpool_forward<T>(const PoolGeometry&, std::span<const T>, std::span<T>,                    \
                                     std::span<std::uint32_t>);                                                \
    }

RMDL_INSTANTIATE_KERNELS(float)
RMDL_INSTANTIATE_KERNELS(double)

#undef RMDL_INSTANTIATE_KERNELS

} // namespace rmdl::kernels
