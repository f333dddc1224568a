#pragma once

// Data-parallel inner loops shared by every layer. Each kernel has an OpenMP
// version (namespace rmdl::kernels) and a plain serial version
// (rmdl::kernels::reference) that tests and the benchmark compare against.
//
// Every output element is produced by exactly one thread and summed in
// ascending k order, so results do not depend on the thread count.

#include <cstddef>
#include <cstdint>
#include <span>

namespace rmdl::kernels {

/// Threads used by kernels called from the current thread. Defaults to the
/// OpenMP maximum; ensemble workers set it to 1 when models train in parallel.
int kernel_threads();
void set_kernel_threads(int threads);

/// C[M×N] (+)= A[M×K] · B[K×N]
template <typename T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, std::span<const T> A, std::span<const T> B,
             std::span<T> C, bool accumulate);

/// C[M×N] (+)= A[M×K] · B[N×K]ᵀ
template <typename T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, std::span<const T> A, std::span<const T> B,
             std::span<T> C, bool accumulate);

/// C[M×N] (+)= A[K×M]ᵀ · B[K×N]
template <typename T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, std::span<const T> A, std::span<const T> B,
             std::span<T> C, bool accumulate);

/// C[i][j] += bias[j] for an M×N matrix.
template <typename T>
void add_row_bias(std::size_t M, std::size_t N, std::span<const T> bias, std::span<T> C);

/// out[j] (+)= Σ_i A[i][j]
template <typename T>
void column_sums(std::size_t M, std::size_t N, std::span<const T> A, std::span<T> out, bool accumulate);

/// Geometry of a valid (unpadded), stride-1 2-D convolution over
/// channels-last input [batch×height×width×channels].
struct ConvGeometry {
    std::size_t batch, height, width, channels;
    std::size_t kernel_h, kernel_w;
    std::size_t out_h() const { return height - kernel_h + 1; }
    std::size_t out_w() const { return width - kernel_w + 1; }
    std::size_t rows() const { return batch * out_h() * out_w(); }
    std::size_t patch() const { return kernel_h * kernel_w * channels; }
};

/// Unfolds input patches into a [rows × patch] matrix.
template <typename T>
void im2col(const ConvGeometry& g, std::span<const T> input, std::span<T> columns);

/// Folds a [rows × patch] gradient back onto the input layout (overwrites).
template <typename T>
void col2im(const ConvGeometry& g, std::span<const T> columns, std::span<T> input_grad);

struct PoolGeometry {
    std::size_t batch, height, width, channels;
    std::size_t window_h, window_w, stride_h, stride_w;
    std::size_t out_h() const { return (height - window_h) / stride_h + 1; }
    std::size_t out_w() const { return (width - window_w) / stride_w + 1; }
    std::size_t out_size() const { return batch * out_h() * out_w() * channels; }
};

/// Window maxima; `argmax` receives the flat input index of each winner
/// (first occurrence on ties).
template <typename T>
void maxpool_forward(const PoolGeometry& g, std::span<const T> input, std::span<T> output,
                     std::span<std::uint32_t> argmax);

/// Scatters output gradients to the recorded argmax positions (overwrites).
template <typename T>
void maxpool_backward(const PoolGeometry& g, std::span<const T> grad_out, std::span<const std::uint32_t> argmax,
                      std::span<T> grad_in);

namespace reference {

template <typename T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, std::span<const T> A, std::span<const T> B,
             std::span<T> C, bool accumulate);
template <typename T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, std::span<const T> A, std::span<const T> B,
             std::span<T> C, bool accumulate);
template <typename T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, std::span<const T> A, std::span<const T> B,
             std::span<T> C, bool accumulate);
template <typename T>
void im2col(const ConvGeometry& g, std::span<const T> input, std::span<T> columns);
template <typename T>
void col2im(const ConvGeometry& g, std::span<const T> columns, std::span<T> input_grad);
template <typename T>
void maxpool_forward(const PoolGeometry& g, std::span<const T> input, std::span<T> output,
                     std::span<std::uint32_t> argmax);

} // namespace reference

} // namespace rmdl::kernels
