#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "profusion/errors.hpp"
#include "profusion/rng.hpp"
#include "profusion/tensor.hpp"

#include <cmath>
#include <functional>
#include <vector>

using namespace profusion;

namespace {

Mat random_mat(int r, int c, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Mat m(r, c);
    for (double& v : m.a) v = rng.uniform(lo, hi);
    return m;
}

double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

// Central finite differences of a scalar-valued rebuild function with respect
// to every entry of every parameter, compared against one reverse-mode pass.
void check_grads(std::vector<Var> params, const std::function<Var()>& build,
                 double tol = 1e-6, double h = 1e-6) {
    for (auto& p : params) p->grad.fill(0.0);
    Var loss = build();
    backward(loss);
    for (auto& p : params) {
        for (size_t i = 0; i < p->val.size(); ++i) {
            const double keep = p->val.a[i];
            p->val.a[i] = keep + h;
            const double up = build()->val.a[0];
            p->val.a[i] = keep - h;
            const double dn = build()->val.a[0];
            p->val.a[i] = keep;
            const double fd = (up - dn) / (2 * h);
            INFO("param entry ", i, " ad=", p->grad.a[i], " fd=", fd);
            CHECK(rel_err(p->grad.a[i], fd) <= tol);
        }
    }
}

} // namespace

TEST_CASE("matmul identity and projector examples") {
    Var i2 = make_const(Mat(2, 2, {1, 0, 0, 1}));
    Var m = make_const(Mat(2, 2, {1, 2, 3, 4}));
    Var out = matmul(i2, m);
    CHECK(out->val.a == std::vector<double>{1, 2, 3, 4});

    Var proj = make_const(Mat(2, 2, {1, 0, 0, 0}));
    Var v = make_const(Mat(2, 1, {5, 7}));
    CHECK(matmul(proj, v)->val.a == std::vector<double>{5, 0});
}

TEST_CASE("matmul gradient matches finite differences") {
    Rng rng(3);
    Var a = make_param(random_mat(3, 3, rng));
    Var b = make_param(random_mat(3, 3, rng));
    check_grads({a, b}, [&] { return sum_all(matmul(a, b)); });
}

TEST_CASE("matmul rectangular shapes and gradient") {
    Rng rng(8);
    Var a = make_param(random_mat(4, 2, rng));
    Var b = make_param(random_mat(2, 5, rng));
    Var c = make_param(random_mat(5, 1, rng));
    check_grads({a, b, c}, [&] { return sum_all(matmul(matmul(a, b), c)); });
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Var a = make_const(Mat(2, 3));
    Var b = make_const(Mat(2, 3));
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2x3]"), DimensionError);
}

TEST_CASE("leaky relu definition") {
    Var x = make_const(Mat(1, 2, {-1, 2}));
    Var y = leaky_relu(x, 0.01);
    CHECK(y->val.a[0] == doctest::Approx(-0.01));
    CHECK(y->val.a[1] == doctest::Approx(2.0));
}

TEST_CASE("sin at zero has value 0 and gradient 1") {
    Var x = make_param(Mat(1, 1, {0.0}));
    Var loss = sum_all(sin(x));
    backward(loss);
    CHECK(loss->val.a[0] == 0.0);
    CHECK(x->grad.a[0] == doctest::Approx(1.0));
}

TEST_CASE("elementwise gradients match finite differences") {
    Rng rng(4);
    Var a = make_param(random_mat(1, 4, rng));
    Var b = make_param(random_mat(1, 4, rng));
    check_grads({a, b}, [&] { return sum_all(mul(a, b)); });
    check_grads({a, b}, [&] { return sum_all(add(a, b)); });
    check_grads({a, b}, [&] { return sum_all(sub(a, b)); });
    check_grads({a, b}, [&] { return sum_all(mul(sub(a, b), add(a, b))); });
}

TEST_CASE("nonlinearities match finite differences") {
    Rng rng(5);
    // Keep away from the relu kink so the finite difference is clean.
    Mat m = random_mat(2, 6, rng);
    for (double& v : m.a)
        if (std::abs(v) < 0.05) v = 0.1;
    Var x = make_param(m);
    check_grads({x}, [&] { return sum_all(relu(x)); });
    check_grads({x}, [&] { return sum_all(leaky_relu(x, 0.01)); });
    check_grads({x}, [&] { return sum_all(tanh(x)); });
    check_grads({x}, [&] { return sum_all(sin(x)); }, 1e-5);
}

TEST_CASE("scalar broadcast in elementwise ops") {
    Var s = make_param(Mat(1, 1, {2.0}));
    Var x = make_param(Mat(2, 2, {1, 2, 3, 4}));
    Var y = mul(x, s);
    CHECK(y->val.a == std::vector<double>{2, 4, 6, 8});
    check_grads({s, x}, [&] { return sum_all(mul(x, s)); });
    check_grads({s, x}, [&] { return sum_all(add(s, x)); });
    check_grads({s, x}, [&] { return sum_all(sub(x, s)); });
}

TEST_CASE("incompatible elementwise shapes throw") {
    Var a = make_const(Mat(2, 3));
    Var b = make_const(Mat(3, 2));
    CHECK_THROWS_AS(add(a, b), DimensionError);
    CHECK_THROWS_AS(mul(a, b), DimensionError);
}

TEST_CASE("scale gradient") {
    Rng rng(6);
    Var x = make_param(random_mat(3, 2, rng));
    check_grads({x}, [&] { return sum_all(scale(x, -1.7)); });
}

TEST_CASE("add_rowvec broadcasts bias over rows") {
    Var x = make_param(Mat(2, 3, {1, 2, 3, 4, 5, 6}));
    Var b = make_param(Mat(1, 3, {10, 20, 30}));
    Var y = add_rowvec(x, b);
    CHECK(y->val.a == std::vector<double>{11, 22, 33, 14, 25, 36});
    check_grads({x, b}, [&] { return sum_all(mul(add_rowvec(x, b), add_rowvec(x, b))); });

    Var bad = make_const(Mat(1, 2));
    CHECK_THROWS_AS(add_rowvec(x, bad), DimensionError);
}

TEST_CASE("concat axis 0 basic example") {
    Var a = make_const(Mat(1, 2, {1, 2}));
    Var b = make_const(Mat(1, 2, {3, 4}));
    Var y = concat({a, b}, 0);
    CHECK(y->val.rows == 2);
    CHECK(y->val.a == std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("concat backward gives all-ones grads through sum") {
    Var a = make_param(Mat(2, 2, {1, 2, 3, 4}));
    Var b = make_param(Mat(2, 3, {5, 6, 7, 8, 9, 10}));
    Var loss = sum_all(concat({a, b}, 1));
    backward(loss);
    for (double g : a->grad.a) CHECK(g == 1.0);
    for (double g : b->grad.a) CHECK(g == 1.0);
}

TEST_CASE("concat round-trips its inputs at recorded offsets") {
    Rng rng(9);
    Mat ma = random_mat(3, 2, rng), mb = random_mat(3, 4, rng);
    Var y = concat({make_const(ma), make_const(mb)}, 1);
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 2; ++c) CHECK(y->val(r, c) == ma(r, c));
        for (int c = 0; c < 4; ++c) CHECK(y->val(r, 2 + c) == mb(r, c));
    }
}

TEST_CASE("concat gradient matches finite differences") {
    Rng rng(10);
    Var a = make_param(random_mat(2, 2, rng));
    Var b = make_param(random_mat(2, 3, rng));
    check_grads({a, b}, [&] {
        Var y = concat({a, b}, 1);
        return sum_all(mul(y, y));
    });
}

TEST_CASE("concat shape mismatch throws") {
    Var a = make_const(Mat(2, 2));
    Var b = make_const(Mat(3, 2));
    CHECK_THROWS_AS(concat({a, b}, 1), DimensionError);
    Var c = make_const(Mat(2, 3));
    CHECK_THROWS_AS(concat({a, c}, 0), DimensionError);
}

TEST_CASE("mse of identical tensors is zero") {
    Var x = make_const(Mat(2, 2, {1, 2, 3, 4}));
    CHECK(mse_loss(x, x)->val.a[0] == 0.0);
}

TEST_CASE("mse value and gradient") {
    Var p = make_param(Mat(1, 2, {1.0, 3.0}));
    Var t = make_const(Mat(1, 2, {0.0, 0.0}));
    Var loss = mse_loss(p, t);
    CHECK(loss->val.a[0] == doctest::Approx(5.0)); // (1 + 9) / 2
    check_grads({p}, [&] { return mse_loss(p, t); }, 1e-5);
}

TEST_CASE("cross entropy of two equal logits is ln 2") {
    Var z = make_const(Mat(1, 2, {0.7, 0.7}));
    Var loss = softmax_cross_entropy(z, {0});
    CHECK(loss->val.a[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("cross entropy gradient matches finite differences") {
    Rng rng(12);
    Var z = make_param(random_mat(4, 5, rng, -2, 2));
    std::vector<int> labels = {0, 3, 4, 1};
    check_grads({z}, [&] { return softmax_cross_entropy(z, labels); }, 1e-5);
}

TEST_CASE("cross entropy is shift invariant per row") {
    Var z = make_const(Mat(1, 3, {100.0, 101.0, 99.0}));
    Var z2 = make_const(Mat(1, 3, {0.0, 1.0, -1.0}));
    CHECK(softmax_cross_entropy(z, {1})->val.a[0] ==
          doctest::Approx(softmax_cross_entropy(z2, {1})->val.a[0]).epsilon(1e-12));
}

TEST_CASE("cross entropy rejects out-of-range labels") {
    Var z = make_const(Mat(1, 3));
    CHECK_THROWS_AS(softmax_cross_entropy(z, {3}), InputError);
    CHECK_THROWS_AS(softmax_cross_entropy(z, {-1}), InputError);
}

TEST_CASE("value used twice accumulates both path contributions") {
    // Diamond: loss = sum(x*x + x); d/dx = 2x + 1.
    Var x = make_param(Mat(1, 3, {0.5, -1.0, 2.0}));
    Var loss = sum_all(add(mul(x, x), x));
    backward(loss);
    CHECK(x->grad.a[0] == doctest::Approx(2.0));
    CHECK(x->grad.a[1] == doctest::Approx(-1.0));
    CHECK(x->grad.a[2] == doctest::Approx(5.0));
}

TEST_CASE("tape order visits each node exactly once") {
    Var x = make_param(Mat(1, 1, {2.0}));
    Var sq = mul(x, x);
    Var loss = sum_all(add(sq, sq)); // sq feeds the add twice
    std::vector<Node*> order = tape_order(loss);
    std::vector<Node*> uniq = order;
    std::sort(uniq.begin(), uniq.end());
    CHECK(std::adjacent_find(uniq.begin(), uniq.end()) == uniq.end());
    backward(loss);
    CHECK(x->grad.a[0] == doctest::Approx(8.0)); // d/dx 2x^2
}

TEST_CASE("backward requires a scalar") {
    Var x = make_param(Mat(2, 2));
    CHECK_THROWS_AS(backward(mul(x, x)), ContractError);
}

TEST_CASE("gradients accumulate until cleared") {
    Var x = make_param(Mat(1, 1, {3.0}));
    backward(sum_all(mul(x, x)));
    CHECK(x->grad.a[0] == doctest::Approx(6.0));
    backward(sum_all(mul(x, x)));
    CHECK(x->grad.a[0] == doctest::Approx(12.0));
    x->grad.fill(0.0);
    backward(sum_all(mul(x, x)));
    CHECK(x->grad.a[0] == doctest::Approx(6.0));
}

TEST_CASE("two-layer network gradient matches finite differences") {
    Rng rng(20);
    Var w1 = make_param(random_mat(3, 4, rng));
    Var b1 = make_param(random_mat(1, 4, rng));
    Var w2 = make_param(random_mat(4, 2, rng));
    Var b2 = make_param(random_mat(1, 2, rng));
    Mat xin = random_mat(5, 3, rng);
    Mat tgt = random_mat(5, 2, rng);
    check_grads({w1, b1, w2, b2}, [&] {
        Var x = make_const(xin);
        Var h = ::profusion::tanh(add_rowvec(matmul(x, w1), b1));
        Var y = add_rowvec(matmul(h, w2), b2);
        return mse_loss(y, make_const(tgt));
    }, 1e-5);
}
