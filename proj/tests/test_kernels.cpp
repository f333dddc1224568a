#include <doctest.h>

#include <cmath>
#include <array>
#include <vector>

#include "rmdl/kernels.hpp"
#include "rmdl/rng.hpp"

using namespace rmdl;
namespace k = rmdl::kernels;

namespace {

template <typename T>
std::vector<T> random_vec(Rng& rng, std::size_t n) {
    std::vector<T> v(n);
    for (T& x : v) x = static_cast<T>(rng.uniform(-1, 1));
    return v;
}

template <typename T>
void check_close(const std::vector<T>& a, const std::vector<T>& b, double tol) {
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(double(a[i]) - double(b[i])) <= tol);
}

/// Restores the kernel thread count on scope exit.
struct ThreadGuard {
    int saved = k::kernel_threads();
    ~ThreadGuard() { k::set_kernel_threads(saved); }
};

} // namespace

TEST_CASE_TEMPLATE("gemm variants agree with the serial loops", T, float, double) {
    Rng rng(1);
    const double tol = sizeof(T) == 4 ? 1e-4 : 1e-12;
    using Dims = std::array<std::size_t, 3>;
    for (const auto [M, N, K] : {Dims{1, 1, 1}, Dims{7, 5, 3}, Dims{33, 65, 17}, Dims{128, 64, 200}}) {
        const auto A = random_vec<T>(rng, M * K), B = random_vec<T>(rng, K * N), Bt = random_vec<T>(rng, N * K);
        const auto At = random_vec<T>(rng, K * M), C0 = random_vec<T>(rng, M * N);
        for (bool acc : {false, true}) {
            std::vector<T> c1 = C0, c2 = C0;
            k::gemm_nn<T>(M, N, K, A, B, c1, acc);
            k::reference::gemm_nn<T>(M, N, K, A, B, c2, acc);
            check_close(c1, c2, tol);
            c1 = c2 = C0;
            k::gemm_nt<T>(M, N, K, A, Bt, c1, acc);
            k::reference::gemm_nt<T>(M, N, K, A, Bt, c2, acc);
            check_close(c1, c2, tol);
            c1 = c2 = C0;
            k::gemm_tn<T>(M, N, K, At, B, c1, acc);
            k::reference::gemm_tn<T>(M, N, K, At, B, c2, acc);
            check_close(c1, c2, tol);
        }
    }
}

TEST_CASE("gemm hand example") {
    const std::vector<double> A{1, 2, 3, 4}, B{5, 6, 7, 8};
    std::vector<double> C(4, 100.0);
    k::gemm_nn<double>(2, 2, 2, A, B, C, false);
    CHECK(C == std::vector<double>{19, 22, 43, 50});
    k::gemm_nn<double>(2, 2, 2, A, B, C, true);
    CHECK(C == std::vector<double>{38, 44, 86, 100});
}

TEST_CASE("results do not depend on the thread count") {
    ThreadGuard guard;
    Rng rng(2);
    const std::size_t M = 97, N = 61, K = 150;
    const auto A = random_vec<float>(rng, M * K), B = random_vec<float>(rng, K * N);
    std::vector<std::vector<float>> runs;
    for (int threads : {1, 2, 4}) {
        k::set_kernel_threads(threads);
        std::vector<float> c(M * N);
        k::gemm_nn<float>(M, N, K, A, B, c, false);
        runs.push_back(c);
    }
    CHECK(runs[0] == runs[1]);
    CHECK(runs[0] == runs[2]);
}

TEST_CASE("im2col, col2im and max pooling agree with the serial versions") {
    ThreadGuard guard;
    Rng rng(3);
    const k::ConvGeometry g{3, 9, 7, 2, 3, 2};
    const auto input = random_vec<double>(rng, g.batch * g.height * g.width * g.channels);
    std::vector<double> c1(g.rows() * g.patch()), c2(c1.size());
    k::im2col<double>(g, input, c1);
    k::reference::im2col<double>(g, input, c2);
    CHECK(c1 == c2);

    const auto cols = random_vec<double>(rng, c1.size());
    std::vector<double> g1(input.size()), g2(input.size());
    k::col2im<double>(g, cols, g1);
    k::reference::col2im<double>(g, cols, g2);
    check_close(g1, g2, 1e-12);

    for (int threads : {1, 4}) {
        k::set_kernel_threads(threads);
        const k::PoolGeometry p{2, 8, 6, 3, 2, 2, 2, 2};
        const auto x = random_vec<double>(rng, p.batch * p.height * p.width * p.channels);
        std::vector<double> o1(p.out_size()), o2(p.out_size());
        std::vector<std::uint32_t> a1(p.out_size()), a2(p.out_size());
        k::maxpool_forward<double>(p, x, o1, a1);
        k::reference::maxpool_forward<double>(p, x, o2, a2);
        CHECK(o1 == o2);
        CHECK(a1 == a2);
    }
}

TEST_CASE("max pooling picks the first maximum on ties") {
    const k::PoolGeometry p{1, 2, 2, 1, 2, 2, 2, 2};
    const std::vector<double> x{3, 3, 1, 3};
    std::vector<double> out(1);
    std::vector<std::uint32_t> arg(1);
    k::maxpool_forward<double>(p, x, out, arg);
    CHECK(out[0] == 3);
    CHECK(arg[0] == 0);
}

TEST_CASE("bias and column sums") {
    std::vector<double> C{1, 2, 3, 4, 5, 6};
    const std::vector<double> bias{10, 20, 30};
    k::add_row_bias<double>(2, 3, bias, C);
    CHECK(C == std::vector<double>{11, 22, 33, 14, 25, 36});
    std::vector<double> sums(3, 1.0);
    k::column_sums<double>(2, 3, C, sums, false);
    CHECK(sums == std::vector<double>{25, 47, 69});
}
