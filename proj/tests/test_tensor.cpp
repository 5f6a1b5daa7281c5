#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "gwf/checkpoint.hpp"
#include "gwf/tensor.hpp"

using namespace gwf;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(shape);
    for (std::int64_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(lo, hi);
    return t;
}

}  // namespace

TEST_CASE("matmul identity") {
    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor eye({2, 2}, {1, 0, 0, 1});
    Tensor c = matmul(a, eye);
    for (int i = 0; i < 4; ++i) CHECK(c.at(i) == doctest::Approx(a.at(i)));
}

TEST_CASE("matmul transpose flags against explicit loops") {
    Rng rng(11);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4, 5}, rng);
    Tensor at = transpose2d(a);
    Tensor bt = transpose2d(b);
    Tensor ref = matmul(a, b);
    Tensor c1 = matmul(at, b, true, false);
    Tensor c2 = matmul(a, bt, false, true);
    Tensor c3 = matmul(at, bt, true, true);
    for (std::int64_t i = 0; i < ref.size(); ++i) {
        CHECK(c1.at(i) == doctest::Approx(ref.at(i)).epsilon(1e-12));
        CHECK(c2.at(i) == doctest::Approx(ref.at(i)).epsilon(1e-12));
        CHECK(c3.at(i) == doctest::Approx(ref.at(i)).epsilon(1e-12));
    }
}

TEST_CASE("softmax of equal scores is uniform") {
    Tensor x({1, 3}, {0, 0, 0});
    Tensor y = softmax_rows(x);
    for (int i = 0; i < 3; ++i) CHECK(y.at(i) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("softmax rows nonnegative and sum to 1") {
    Rng rng(3);
    Tensor x = random_tensor({6, 9}, rng, -5.0, 5.0);
    Tensor y = softmax_rows(x);
    for (int i = 0; i < 6; ++i) {
        double s = 0.0;
        for (int j = 0; j < 9; ++j) {
            CHECK(y.at(i * 9 + j) >= 0.0);
            s += y.at(i * 9 + j);
        }
        CHECK(std::abs(s - 1.0) < 1e-6);
    }
}

TEST_CASE("shape mismatch names both shapes") {
    Tensor a({2, 3});
    Tensor b({3, 2});
    CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("(2,3)"), ShapeError);
    CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("(3,2)"), ShapeError);
}

TEST_CASE("nan debug flag detects propagation") {
    set_nan_debug(true);
    Tensor a({2}, {1.0, 0.0});
    Tensor b({2}, {0.0, 0.0});
    CHECK_THROWS_AS(div(a, b), NumericError);
    set_nan_debug(false);
    CHECK_NOTHROW(div(a, b));
}

TEST_CASE("backward: x^2 at x=3 gives 6") {
    Tensor x = Tensor::scalar(3.0);
    x.set_requires_grad(true);
    Tensor loss = mul(x, x);
    backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("backward: sum(matmul(A,B)) gives ones*B^T for A") {
    Rng rng(5);
    Tensor a = random_tensor({2, 3}, rng);
    Tensor b = random_tensor({3, 4}, rng);
    a.set_requires_grad(true);
    Tensor loss = sum(matmul(a, b));
    backward(loss);
    // dA[i,k] = sum_j B[k,j]
    for (int i = 0; i < 2; ++i)
        for (int k = 0; k < 3; ++k) {
            double expect = 0.0;
            for (int j = 0; j < 4; ++j) expect += b.at(k * 4 + j);
            CHECK(a.grad()[i * 3 + k] == doctest::Approx(expect).epsilon(1e-12));
        }
}

TEST_CASE("backward rejects non-scalar loss and double backward") {
    Tensor x({2}, {1.0, 2.0});
    x.set_requires_grad(true);
    Tensor y = mul(x, x);
    CHECK_THROWS_AS(backward(y), ShapeError);
    Tensor loss = sum(y);
    backward(loss);
    CHECK_THROWS_AS(backward(loss), ShapeError);
}

TEST_CASE("gradients accumulate across fan-out") {
    Tensor x = Tensor::scalar(2.0);
    x.set_requires_grad(true);
    Tensor y = add(mul(x, x), x);  // x^2 + x -> 2x + 1 = 5
    backward(y);
    CHECK(x.grad()[0] == doctest::Approx(5.0));
}

TEST_CASE("finite_diff_check on identity and exp") {
    Tensor x({4}, {0.1, -0.3, 0.7, 0.0});
    auto identity = [](const Tensor& t) { return add_scalar(t, 0.0); };
    CHECK(finite_diff_check(identity, x, 1e-6) < 1e-9);

    Tensor x0({1}, {0.0});
    auto expish = [](const Tensor& t) {
        // exp via gelu-free path: use tanh identity? exp not an op; compose:
        // d/dx of x*x at 0 is 0; instead check tanh which has known smoothness.
        return tanh_act(t);
    };
    CHECK(finite_diff_check(expish, x0, 1e-5) < 1e-8);
}

TEST_CASE("random 3-layer composite matches finite differences") {
    Rng rng(17);
    Tensor w1 = random_tensor({6, 8}, rng);
    Tensor w2 = random_tensor({8, 5}, rng);
    Tensor x = random_tensor({3, 6}, rng);
    auto f = [&](const Tensor& t) {
        Tensor h = gelu(matmul(t, w1));
        Tensor h2 = tanh_act(matmul(h, w2));
        return sum_squares(h2);
    };
    CHECK(finite_diff_check(f, x, 1e-6) < 1e-5);
}

TEST_CASE("gradient checks across op catalog") {
    Rng rng(23);
    SUBCASE("softmax") {
        Tensor x = random_tensor({3, 5}, rng);
        CHECK(finite_diff_check([](const Tensor& t) { return softmax_rows(t); }, x, 1e-6) < 1e-6);
    }
    SUBCASE("layer_norm") {
        Tensor x = random_tensor({4, 7}, rng);
        Tensor gm = random_tensor({7}, rng, 0.5, 1.5);
        Tensor bt = random_tensor({7}, rng);
        CHECK(finite_diff_check(
                  [&](const Tensor& t) { return layer_norm(t, gm, bt); }, x, 1e-6) < 1e-6);
        Tensor x2 = random_tensor({4, 7}, rng);
        CHECK(finite_diff_check(
                  [&](const Tensor& t) {
                      Tensor g2 = reshape(t, {7});
                      return layer_norm(x2, g2, bt);
                  },
                  random_tensor({7}, rng, 0.5, 1.5), 1e-6) < 1e-6);
    }
    SUBCASE("slice+concat+gather") {
        Tensor x = random_tensor({6, 4}, rng);
        CHECK(finite_diff_check(
                  [](const Tensor& t) {
                      Tensor a = slice(t, 0, 0, 3);
                      Tensor b = slice(t, 0, 2, 6);
                      Tensor c = concat({a, b}, 0);
                      return gather_rows(c, {0, 5, 2, 2});
                  },
                  x, 1e-6) < 1e-6);
    }
    SUBCASE("div and colvec/rowvec bias") {
        Tensor x = random_tensor({3, 4}, rng, 0.5, 2.0);
        Tensor r = random_tensor({4}, rng);
        Tensor c = random_tensor({3}, rng);
        CHECK(finite_diff_check(
                  [&](const Tensor& t) {
                      return div(add_rowvec(add_colvec(t, c), r), sum(t));
                  },
                  x, 1e-6) < 1e-6);
    }
}

TEST_CASE("reshape round trip is identity on data") {
    Rng rng(7);
    Tensor x = random_tensor({3, 4, 5}, rng);
    Tensor y = reshape(reshape(x, {60}), {3, 4, 5});
    for (std::int64_t i = 0; i < x.size(); ++i) CHECK(y.at(i) == x.at(i));
}

TEST_CASE("conv3d of constant field with unit-sum kernel") {
    // kernel entries sum to 1, zero bias: interior outputs reproduce the constant
    const double cval = 2.5;
    Tensor x({1, 5, 5, 5}, cval);
    Tensor w({1, 1, 3, 3, 3}, 1.0 / 27.0);
    Tensor y = conv3d(x, w, Tensor(), 1, 0);  // valid region only
    CHECK(y.shape() == Shape{1, 3, 3, 3});
    for (std::int64_t i = 0; i < y.size(); ++i)
        CHECK(y.at(i) == doctest::Approx(cval).epsilon(1e-12));

    // independent direct-summation oracle on a random field
    Rng rng(31);
    Tensor xr = random_tensor({2, 4, 4, 4}, rng);
    Tensor wr = random_tensor({3, 2, 2, 2, 2}, rng);
    Tensor yr = conv3d(xr, wr, Tensor(), 1, 0);
    auto xat = [&](int c, int z, int y_, int x_) {
        return xr.at(((c * 4 + z) * 4 + y_) * 4 + x_);
    };
    auto wat = [&](int oc, int c, int a, int b, int d) {
        return wr.at((((oc * 2 + c) * 2 + a) * 2 + b) * 2 + d);
    };
    for (int oc = 0; oc < 3; ++oc)
        for (int z = 0; z < 3; ++z)
            for (int yy = 0; yy < 3; ++yy)
                for (int xx = 0; xx < 3; ++xx) {
                    double acc = 0.0;
                    for (int c = 0; c < 2; ++c)
                        for (int a = 0; a < 2; ++a)
                            for (int b = 0; b < 2; ++b)
                                for (int d = 0; d < 2; ++d)
                                    acc += xat(c, z + a, yy + b, xx + d) * wat(oc, c, a, b, d);
                    CHECK(yr.at(((oc * 3 + z) * 3 + yy) * 3 + xx) ==
                          doctest::Approx(acc).epsilon(1e-12));
                }
}

TEST_CASE("conv3d_transpose is the adjoint of conv3d") {
    Rng rng(41);
    for (int trial = 0; trial < 3; ++trial) {
        const int stride = 1 + trial % 2;
        const int pad = trial % 2;
        Tensor x = random_tensor({2, 5, 5, 5}, rng);
        Tensor w = random_tensor({3, 2, 3, 3, 3}, rng);
        Tensor cx = conv3d(x, w, Tensor(), stride, pad);
        Tensor y(cx.shape());
        for (std::int64_t i = 0; i < y.size(); ++i) y.data()[i] = rng.uniform(-1, 1);
        Tensor cty = conv3d_transpose(y, w, Tensor(), stride, pad, {5, 5, 5});
        double lhs = 0.0, rhs = 0.0;
        for (std::int64_t i = 0; i < cx.size(); ++i) lhs += cx.at(i) * y.at(i);
        for (std::int64_t i = 0; i < x.size(); ++i) rhs += x.at(i) * cty.at(i);
        CHECK(std::abs(lhs - rhs) <= 1e-6 * (std::abs(lhs) + 1.0));
    }
}

TEST_CASE("conv gradients match finite differences") {
    Rng rng(53);
    Tensor x = random_tensor({1, 4, 4, 4}, rng);
    Tensor w = random_tensor({2, 1, 3, 3, 3}, rng);
    Tensor b = random_tensor({2}, rng);
    CHECK(finite_diff_check(
              [&](const Tensor& t) { return conv3d(t, w, b, 1, 1); }, x, 1e-6) < 1e-6);
    CHECK(finite_diff_check(
              [&](const Tensor& t) { return conv3d(x, t, b, 2, 1); }, w, 1e-6) < 1e-6);
    Tensor y = conv3d(x, w, Tensor(), 2, 1);
    Tensor bt = random_tensor({1}, rng);
    CHECK(finite_diff_check(
              [&](const Tensor& t) {
                  return conv3d_transpose(t, w, bt, 2, 1, {4, 4, 4});
              },
              y, 1e-6) < 1e-6);
    CHECK(finite_diff_check(
              [&](const Tensor& t) {
                  return conv3d_transpose(y, t, Tensor(), 2, 1, {4, 4, 4});
              },
              w, 1e-6) < 1e-6);
}

TEST_CASE("init_param bounds and determinism") {
    Rng r1(99), r2(99);
    Tensor a = init_param({20, 10}, 10, r1);
    Tensor b = init_param({20, 10}, 10, r2);
    const double bound = 1.0 / std::sqrt(10.0);
    for (std::int64_t i = 0; i < a.size(); ++i) {
        CHECK(a.at(i) == b.at(i));
        CHECK(std::abs(a.at(i)) <= bound);
    }
    CHECK(a.requires_grad());
}

TEST_CASE("checkpoint round trip at both precisions") {
    Rng rng(71);
    ParamStore store;
    store.add("layer.weight", init_param({4, 3}, 3, rng));
    store.add("layer.bias", init_param({4}, 3, rng));
    std::vector<double> orig;
    for (auto& [n, t] : store.items())
        for (std::int64_t i = 0; i < t.size(); ++i) orig.push_back(t.at(i));

    const std::string p64 = "ckpt_test64.gwf";
    const std::string p32 = "ckpt_test32.gwf";
    save_checkpoint(store, p64, 64);
    save_checkpoint(store, p32, 32);

    for (auto& [n, t] : store.items())
        for (std::int64_t i = 0; i < t.size(); ++i) t.data()[i] = 0.0;
    load_checkpoint(store, p64);
    size_t k = 0;
    for (auto& [n, t] : store.items())
        for (std::int64_t i = 0; i < t.size(); ++i) CHECK(t.at(i) == orig[k++]);

    load_checkpoint(store, p32);
    k = 0;
    for (auto& [n, t] : store.items())
        for (std::int64_t i = 0; i < t.size(); ++i)
            CHECK(t.at(i) == doctest::Approx(orig[k++]).epsilon(1e-6));

    ParamStore wrong;
    wrong.add("layer.weight", zeros_param({4, 3}));
    CHECK_THROWS_AS(load_checkpoint(wrong, p64), DataError);
    std::filesystem::remove(p64);
    std::filesystem::remove(p32);
}
