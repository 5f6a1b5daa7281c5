#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "gwf/tensor.hpp"
#include "gwf/wavelet.hpp"

using namespace gwf;

namespace {

std::vector<double> random_signal(int n, Rng& rng) {
    std::vector<double> x(static_cast<size_t>(n));
    for (auto& v : x) v = rng.uniform(-1, 1);
    return x;
}

// Independent reference: build the extended signal explicitly, then run a
// plain convolve-and-downsample loop.
void reference_dwt1(const std::vector<double>& x, const WaveletFilter& f,
                    BoundaryMode mode, std::vector<double>& ca,
                    std::vector<double>& cd) {
    const int n = static_cast<int>(x.size());
    const int F = f.length();
    const int nc = mode == BoundaryMode::Periodic ? n / 2 : (n + F - 1) / 2;
    const int pad = 2 * F + 2 * nc;  // generous
    std::vector<double> ext(static_cast<size_t>(n + 2 * pad));
    for (int j = -pad; j < n + pad; ++j) {
        int idx;
        if (mode == BoundaryMode::Periodic) {
            idx = ((j % n) + n) % n;
        } else {
            int p = ((j % (2 * n)) + 2 * n) % (2 * n);
            idx = p < n ? p : 2 * n - 1 - p;
        }
        ext[static_cast<size_t>(j + pad)] = x[static_cast<size_t>(idx)];
    }
    ca.assign(static_cast<size_t>(nc), 0.0);
    cd.assign(static_cast<size_t>(nc), 0.0);
    for (int i = 0; i < nc; ++i)
        for (int k = 0; k < F; ++k) {
            const double v = ext[static_cast<size_t>(pad + 2 * i + k + 2 - F)];
            ca[static_cast<size_t>(i)] += f.dec_lo[static_cast<size_t>(k)] * v;
            cd[static_cast<size_t>(i)] += f.dec_hi[static_cast<size_t>(k)] * v;
        }
}

}  // namespace

TEST_CASE("filter bank identities") {
    WaveletFilter db1 = filter_bank(1);
    CHECK(db1.dec_lo[0] == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-14));
    CHECK(db1.dec_lo[1] == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-14));

    for (int N = 1; N <= 10; ++N) {
        WaveletFilter f = filter_bank(N);
        CHECK(f.length() == 2 * N);
        double s = std::accumulate(f.dec_lo.begin(), f.dec_lo.end(), 0.0);
        double ss = 0.0;
        for (double v : f.dec_lo) ss += v * v;
        CHECK(std::abs(s - std::sqrt(2.0)) < 1e-10);
        CHECK(std::abs(ss - 1.0) < 1e-12);
        // quadrature mirror: hi[k] = (-1)^k lo[F-1-k]
        for (int k = 0; k < f.length(); ++k) {
            const double expect = (k % 2 == 0 ? 1.0 : -1.0) *
                                  f.dec_lo[static_cast<size_t>(f.length() - 1 - k)];
            CHECK(f.dec_hi[static_cast<size_t>(k)] == doctest::Approx(expect).epsilon(1e-14));
        }
        // even-lag orthogonality of shifts
        for (int lag = 2; lag < f.length(); lag += 2) {
            double ac = 0.0;
            for (int k = 0; k + lag < f.length(); ++k)
                ac += f.dec_lo[static_cast<size_t>(k)] * f.dec_lo[static_cast<size_t>(k + lag)];
            CHECK(std::abs(ac) < 1e-12);
        }
    }
    CHECK_THROWS_AS(filter_bank(0), ShapeError);
    CHECK_THROWS_AS(filter_bank(11), ShapeError);
}

TEST_CASE("haar hand cases") {
    WaveletFilter db1 = filter_bank(1);
    auto c = dwt_forward({1, 1, 1, 1}, {4}, db1, 1);
    auto approx = c.block_values(1, 0);
    auto detail = c.block_values(1, 1);
    REQUIRE(approx.size() == 2);
    CHECK(approx[0] == doctest::Approx(std::sqrt(2.0)).epsilon(1e-14));
    CHECK(approx[1] == doctest::Approx(std::sqrt(2.0)).epsilon(1e-14));
    CHECK(std::abs(detail[0]) < 1e-12);
    CHECK(std::abs(detail[1]) < 1e-12);

    auto c2 = dwt_forward({1, -1}, {2}, db1, 1);
    CHECK(std::abs(c2.block_values(1, 0)[0]) < 1e-14);
    CHECK(c2.block_values(1, 1)[0] == doctest::Approx(std::sqrt(2.0)).epsilon(1e-14));
}

TEST_CASE("db4 on length-64 signal matches convolve-and-downsample reference") {
    Rng rng(4);
    auto x = random_signal(64, rng);
    WaveletFilter db4 = filter_bank(4);
    for (BoundaryMode mode : {BoundaryMode::Symmetric, BoundaryMode::Periodic}) {
        auto c = dwt_forward(x, {64}, db4, 1, mode);
        std::vector<double> ca, cd;
        reference_dwt1(x, db4, mode, ca, cd);
        auto approx = c.block_values(1, 0);
        auto detail = c.block_values(1, 1);
        REQUIRE(approx.size() == ca.size());
        for (size_t i = 0; i < ca.size(); ++i) {
            CHECK(std::abs(approx[i] - ca[i]) < 1e-10);
            CHECK(std::abs(detail[i] - cd[i]) < 1e-10);
        }
    }
}

TEST_CASE("perfect reconstruction sweep") {
    Rng rng(9);
    for (int N : {1, 2, 3, 4, 5, 6}) {
        WaveletFilter f = filter_bank(N);
        for (int levels : {1, 2, 3}) {
            // 1-D
            for (int n : {31, 32, 64}) {
                bool feasible = true;
                int cur = n;
                for (int l = 0; l < levels; ++l) {
                    if (cur < f.length()) feasible = false;
                    cur = (cur + f.length() - 1) / 2;
                }
                if (!feasible) continue;
                auto x = random_signal(n, rng);
                auto c = dwt_forward(x, {n}, f, levels);
                auto back = dwt_inverse(c, f);
                double err = 0.0;
                for (int i = 0; i < n; ++i)
                    err = std::max(err, std::abs(back[static_cast<size_t>(i)] - x[static_cast<size_t>(i)]));
                INFO("db" << N << " levels=" << levels << " n=" << n);
                CHECK(err < 1e-8);
            }
            // 2-D
            {
                const int n = 32;
                bool feasible = true;
                int cur = n;
                for (int l = 0; l < levels; ++l) {
                    if (cur < f.length()) feasible = false;
                    cur = (cur + f.length() - 1) / 2;
                }
                if (!feasible) continue;
                auto x = random_signal(n * n, rng);
                auto c = dwt_forward(x, {n, n}, f, levels);
                auto back = dwt_inverse(c, f);
                double err = 0.0;
                for (size_t i = 0; i < x.size(); ++i)
                    err = std::max(err, std::abs(back[i] - x[i]));
                INFO("2d db" << N << " levels=" << levels);
                CHECK(err < 1e-8);
            }
        }
    }
}

TEST_CASE("3-D round trip db2") {
    Rng rng(12);
    auto x = random_signal(8 * 6 * 10, rng);
    WaveletFilter f = filter_bank(2);
    auto c = dwt_forward(x, {8, 6, 10}, f, 1);
    auto back = dwt_inverse(c, f);
    for (size_t i = 0; i < x.size(); ++i) CHECK(std::abs(back[i] - x[i]) < 1e-10);
}

TEST_CASE("zero coefficients give zero field") {
    WaveletFilter f = filter_bank(3);
    auto c = dwt_forward(std::vector<double>(40, 1.0), {40}, f, 2);
    std::fill(c.flat.begin(), c.flat.end(), 0.0);
    auto back = dwt_inverse(c, f);
    for (double v : back) CHECK(v == 0.0);
}

TEST_CASE("approximation-only keeps constants") {
    WaveletFilter f = filter_bank(2);
    auto c = dwt_forward(std::vector<double>(24, 3.25), {24}, f, 1);
    for (const auto& b : c.blocks) {
        if (b.mask == 0) continue;
        for (int i = 0; i < b.size; ++i) c.flat[static_cast<size_t>(b.offset + i)] = 0.0;
    }
    auto back = dwt_inverse(c, f);
    for (double v : back) CHECK(v == doctest::Approx(3.25).epsilon(1e-10));
}

TEST_CASE("parseval energy in periodic mode") {
    Rng rng(21);
    for (int N : {1, 2, 4}) {
        WaveletFilter f = filter_bank(N);
        auto x = random_signal(64, rng);
        auto c = dwt_forward(x, {64}, f, 2, BoundaryMode::Periodic);
        double ex = 0.0, ec = 0.0;
        for (double v : x) ex += v * v;
        for (double v : c.flat) ec += v * v;
        CHECK(std::abs(ex - ec) / ex < 1e-8);
    }
}

TEST_CASE("linearity") {
    Rng rng(30);
    WaveletFilter f = filter_bank(3);
    auto x = random_signal(30, rng);
    auto y = random_signal(30, rng);
    const double a = 1.7, b = -0.4;
    std::vector<double> z(30);
    for (int i = 0; i < 30; ++i)
        z[static_cast<size_t>(i)] = a * x[static_cast<size_t>(i)] + b * y[static_cast<size_t>(i)];
    auto cx = dwt_forward(x, {30}, f, 2);
    auto cy = dwt_forward(y, {30}, f, 2);
    auto cz = dwt_forward(z, {30}, f, 2);
    for (size_t i = 0; i < cz.flat.size(); ++i)
        CHECK(cz.flat[i] == doctest::Approx(a * cx.flat[i] + b * cy.flat[i]).epsilon(1e-12));
}

TEST_CASE("errors name level and axis") {
    WaveletFilter f = filter_bank(4);  // length 8
    CHECK_THROWS_WITH_AS(DwtPlan({16, 5}, f, 1, BoundaryMode::Symmetric),
                         doctest::Contains("axis 1"), ShapeError);
    // 16 -> 11 -> 9 -> 8 -> 7: fifth level drops below the filter length
    CHECK_THROWS_WITH_AS(DwtPlan({16}, f, 5, BoundaryMode::Symmetric),
                         doctest::Contains("level 5"), ShapeError);
    CHECK_THROWS_AS(DwtPlan({15}, f, 1, BoundaryMode::Periodic), ShapeError);
}

TEST_CASE("tensor ops: adjoint identity and gradients") {
    Rng rng(44);
    WaveletFilter f = filter_bank(2);
    DwtPlan plan({6, 8}, f, 1, BoundaryMode::Symmetric);

    // <A x, y> == <x, A^T y> via backward of sum(mul(dwt(x), y))
    Tensor x({2, 6, 8});
    for (std::int64_t i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-1, 1);
    x.set_requires_grad(true);
    Tensor y({2, plan.coeff_size()});
    for (std::int64_t i = 0; i < y.size(); ++i) y.data()[i] = rng.uniform(-1, 1);
    Tensor ax = dwt_op(x, plan);
    Tensor lhs = sum(mul(ax, y));
    backward(lhs);
    double rhs = 0.0;
    for (std::int64_t i = 0; i < x.size(); ++i) rhs += x.grad()[static_cast<size_t>(i)] * 0.0;
    // adjoint via grad: d/dx <A x, y> = A^T y; compare against inverse_adjoint-free path
    std::vector<double> aty(static_cast<size_t>(plan.input_size()));
    double dot = 0.0;
    for (int c = 0; c < 2; ++c) {
        plan.forward_adjoint(y.data() + static_cast<std::int64_t>(c) * plan.coeff_size(),
                             aty.data());
        for (int i = 0; i < plan.input_size(); ++i)
            dot += std::abs(x.grad()[static_cast<size_t>(c * plan.input_size() + i)] -
                            aty[static_cast<size_t>(i)]);
    }
    CHECK(dot < 1e-8);
    CHECK(std::abs(lhs.item() - [&] {
              double s = 0.0;
              for (std::int64_t i = 0; i < ax.size(); ++i) s += ax.at(i) * y.at(i);
              return s;
          }()) < 1e-12);

    // finite-difference through dwt and idwt
    Tensor x2({1, 6, 8});
    for (std::int64_t i = 0; i < x2.size(); ++i) x2.data()[i] = rng.uniform(-1, 1);
    CHECK(finite_diff_check([&](const Tensor& t) { return dwt_op(t, plan); }, x2, 1e-6) < 1e-6);
    Tensor c2({1, plan.coeff_size()});
    for (std::int64_t i = 0; i < c2.size(); ++i) c2.data()[i] = rng.uniform(-1, 1);
    CHECK(finite_diff_check([&](const Tensor& t) { return idwt_op(t, plan); }, c2, 1e-6) < 1e-6);

    // idwt(dwt(x)) == x through the tensor path as well
    Tensor back = idwt_op(dwt_op(x2, plan), plan);
    for (std::int64_t i = 0; i < x2.size(); ++i)
        CHECK(std::abs(back.at(i) - x2.at(i)) < 1e-10);
}
