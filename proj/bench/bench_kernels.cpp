// OpenMP kernels against their serial reference loops.

#include <benchmark/benchmark.h>

#include <vector>

#include "rmdl/kernels.hpp"
#include "rmdl/rng.hpp"

namespace k = rmdl::kernels;

namespace {

std::vector<float> random_vec(std::size_t n) {
    rmdl::Rng rng(n);
    std::vector<float> v(n);
    for (float& x : v) x = static_cast<float>(rng.uniform(-1, 1));
    return v;
}

template <bool Parallel>
void BM_gemm_nn(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto A = random_vec(n * n), B = random_vec(n * n);
    std::vector<float> C(n * n);
    for (auto _ : state) {
        if constexpr (Parallel) k::gemm_nn<float>(n, n, n, A, B, C, false);
        else k::reference::gemm_nn<float>(n, n, n, A, B, C, false);
        benchmark::DoNotOptimize(C.data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 2 * n * n * n));
}

template <bool Parallel>
void BM_gemm_nt(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto A = random_vec(n * n), B = random_vec(n * n);
    std::vector<float> C(n * n);
    for (auto _ : state) {
        if constexpr (Parallel) k::gemm_nt<float>(n, n, n, A, B, C, false);
        else k::reference::gemm_nt<float>(n, n, n, A, B, C, false);
        benchmark::DoNotOptimize(C.data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 2 * n * n * n));
}

// MNIST-sized batch: 32 × 28 × 28 × 16 channels, 3×3 kernel.
const k::ConvGeometry kConv{32, 28, 28, 16, 3, 3};
const k::PoolGeometry kPool{32, 26, 26, 32, 2, 2, 2, 2};

template <bool Parallel>
void BM_im2col(benchmark::State& state) {
    const auto in = random_vec(kConv.batch * kConv.height * kConv.width * kConv.channels);
    std::vector<float> cols(kConv.rows() * kConv.patch());
    for (auto _ : state) {
        if constexpr (Parallel) k::im2col<float>(kConv, in, cols);
        else k::reference::im2col<float>(kConv, in, cols);
        benchmark::DoNotOptimize(cols.data());
    }
}

template <bool Parallel>
void BM_col2im(benchmark::State& state) {
    const auto cols = random_vec(kConv.rows() * kConv.patch());
    std::vector<float> grad(kConv.batch * kConv.height * kConv.width * kConv.channels);
    for (auto _ : state) {
        if constexpr (Parallel) k::col2im<float>(kConv, cols, grad);
        else k::reference::col2im<float>(kConv, cols, grad);
        benchmark::DoNotOptimize(grad.data());
    }
}

template <bool Parallel>
void BM_maxpool(benchmark::State& state) {
    const auto in = random_vec(kPool.batch * kPool.height * kPool.width * kPool.channels);
    std::vector<float> out(kPool.out_size());
    std::vector<std::uint32_t> arg(kPool.out_size());
    for (auto _ : state) {
        if constexpr (Parallel) k::maxpool_forward<float>(kPool, in, out, arg);
        else k::reference::maxpool_forward<float>(kPool, in, out, arg);
        benchmark::DoNotOptimize(out.data());
    }
}

} // namespace

BENCHMARK(BM_gemm_nn<false>)->Name("gemm_nn/reference")->Arg(64)->Arg(256);
BENCHMARK(BM_gemm_nn<true>)->Name("gemm_nn/openmp")->Arg(64)->Arg(256);
BENCHMARK(BM_gemm_nt<false>)->Name("gemm_nt/reference")->Arg(64)->Arg(256);
BENCHMARK(BM_gemm_nt<true>)->Name("gemm_nt/openmp")->Arg(64)->Arg(256);
BENCHMARK(BM_im2col<false>)->Name("im2col/reference");
BENCHMARK(BM_im2col<true>)->Name("im2col/openmp");
BENCHMARK(BM_col2im<false>)->Name("col2im/reference");
BENCHMARK(BM_col2im<true>)->Name("col2im/openmp");
BENCHMARK(BM_maxpool<false>)->Name("maxpool/reference");
BENCHMARK(BM_maxpool<true>)->Name("maxpool/openmp");

BENCHMARK_MAIN();
