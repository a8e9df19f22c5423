#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "cider/rng.hpp"
#include "cider/tape.hpp"

#include <cmath>
#include <functional>

using namespace cider;
using ad::Tape;
using ad::Var;

namespace {

Mat rand_mat(Rng& rng, int r, int c, double scale = 1.0) {
    Mat m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = rng.uniform(-scale, scale);
    return m;
}

// central finite differences of a scalar function of one matrix input
Mat num_grad(const std::function<double(const Mat&)>& f, Mat x, double eps = 1e-6) {
    Mat g(x.rows(), x.cols());
    for (long i = 0; i < x.size(); ++i) {
        double keep = x(i);
        x(i) = keep + eps;
        double up = f(x);
        x(i) = keep - eps;
        double dn = f(x);
        x(i) = keep;
        g(i) = (up - dn) / (2.0 * eps);
    }
    return g;
}

double max_rel_err(const Mat& a, const Mat& b) {
    double worst = 0.0;
    for (long i = 0; i < a.size(); ++i) {
        double scale = std::max({std::abs(a(i)), std::abs(b(i)), 1e-8});
        worst = std::max(worst, std::abs(a(i) - b(i)) / scale);
    }
    return worst;
}

// Checks d(loss)/d(X) where loss = sum(build(tape, leaf(X)) .* R) with a fixed
// random projection R so every output entry influences the scalar.
void check_grad(const std::function<Var(Tape&, Var)>& build, const Mat& x, Rng& rng,
                double tol = 1e-6) {
    Mat r;
    {
        Tape t;
        Var out = build(t, t.leaf(x));
        r = rand_mat(rng, static_cast<int>(t.val(out).rows()),
                     static_cast<int>(t.val(out).cols()));
    }
    auto f = [&](const Mat& xx) {
        Tape t;
        Var out = build(t, t.leaf(xx));
        return (t.val(out).cwiseProduct(r)).sum();
    };
    Tape t;
    Var leaf = t.leaf(x);
    Var out = build(t, leaf);
    Var loss = t.sum_all(t.mul(out, t.constant(r)));
    t.backward(loss);
    Mat analytic = t.grad(leaf);
    Mat numeric = num_grad(f, x);
    CHECK(max_rel_err(analytic, numeric) < tol);
}

} // namespace

TEST_CASE("elementwise and matrix arithmetic match finite differences") {
    Rng rng(7);
    Mat a = rand_mat(rng, 3, 4);
    Mat b = rand_mat(rng, 3, 4);
    Mat w = rand_mat(rng, 4, 2);

    check_grad([&](Tape& t, Var x) { return t.add(x, t.constant(b)); }, a, rng);
    check_grad([&](Tape& t, Var x) { return t.sub(t.constant(b), x); }, a, rng);
    check_grad([&](Tape& t, Var x) { return t.mul(x, t.constant(b)); }, a, rng);
    check_grad([&](Tape& t, Var x) { return t.matmul(x, t.constant(w)); }, a, rng);
    check_grad([&](Tape& t, Var x) { return t.matmul(t.constant(a), x); }, w, rng);
    check_grad([&](Tape& t, Var x) { return t.scale(x, -2.5); }, a, rng);
    check_grad([&](Tape& t, Var x) { return t.add_scalar(x, 0.7); }, a, rng);
    check_grad([&](Tape& t, Var x) { return t.transpose(x); }, a, rng);
}

TEST_CASE("broadcast variants match finite differences") {
    Rng rng(8);
    Mat a = rand_mat(rng, 3, 4);
    Mat row = rand_mat(rng, 1, 4);
    Mat col = rand_mat(rng, 3, 1);

    check_grad([&](Tape& t, Var x) { return t.add_rowvec(x, t.constant(row)); }, a, rng);
    check_grad([&](Tape& t, Var x) { return t.add_rowvec(t.constant(a), x); }, row, rng);
    check_grad([&](Tape& t, Var x) { return t.sub_colvec(x, t.constant(col)); }, a, rng);
    check_grad([&](Tape& t, Var x) { return t.sub_colvec(t.constant(a), x); }, col, rng);
    check_grad([&](Tape& t, Var x) { return t.mul_rowvec(x, t.constant(row)); }, a, rng);
    check_grad([&](Tape& t, Var x) { return t.mul_rowvec(t.constant(a), x); }, row, rng);
    check_grad([&](Tape& t, Var x) { return t.mul_colvec(x, t.constant(col)); }, a, rng);
    check_grad([&](Tape& t, Var x) { return t.mul_colvec(t.constant(a), x); }, col, rng);
}

TEST_CASE("shaping ops route gradients to the right slots") {
    Rng rng(9);
    Mat a = rand_mat(rng, 4, 3);
    Mat b = rand_mat(rng, 2, 3);

    check_grad([&](Tape& t, Var x) { return t.concat_rows({x, t.constant(b), x}); }, a, rng);
    check_grad([&](Tape& t, Var x) { return t.concat_cols({x, t.constant(a)}); }, a, rng);
    check_grad([&](Tape& t, Var x) { return t.slice_rows(x, 1, 2); }, a, rng);
    check_grad([&](Tape& t, Var x) { return t.slice_cols(x, 0, 2); }, a, rng);
    // duplicated indices exercise the scatter-add path
    check_grad([&](Tape& t, Var x) { return t.gather_rows(x, {2, 0, 2, 3}); }, a, rng);
}

TEST_CASE("nonlinearities match finite differences") {
    Rng rng(10);
    Mat a = rand_mat(rng, 3, 5);
    a.array() += 0.05; // keep relu inputs away from the kink

    check_grad([&](Tape& t, Var x) { return t.sigmoid(x); }, a, rng);
    check_grad([&](Tape& t, Var x) { return t.tanh_(x); }, a, rng);
    check_grad([&](Tape& t, Var x) { return t.relu(x); }, a, rng);
    check_grad([&](Tape& t, Var x) { return t.softmax_rows(x); }, a, rng, 1e-5);

    Mat pos = rand_mat(rng, 3, 4).cwiseAbs();
    pos.array() += 0.2;
    check_grad([&](Tape& t, Var x) { return t.rsqrt(x, 1e-5); }, pos, rng);
}

TEST_CASE("masked softmax zeroes excluded entries exactly") {
    Rng rng(11);
    Mat z = rand_mat(rng, 2, 4, 3.0);
    Mat mask = Mat::Zero(2, 4);
    mask(0, 1) = -1e9;
    mask(0, 3) = -1e9;
    mask.row(1).setConstant(-1e9); // fully excluded row

    Tape t;
    Var out = t.softmax_rows(t.leaf(z), &mask);
    const Mat& p = t.val(out);
    CHECK(p(0, 1) == 0.0);
    CHECK(p(0, 3) == 0.0);
    CHECK(p(0, 0) + p(0, 2) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p.row(1).cwiseAbs().maxCoeff() == 0.0);

    // restriction equals a standalone softmax over the admitted entries
    Mat sub(1, 2);
    sub << z(0, 0), z(0, 2);
    double m = sub.maxCoeff();
    Eigen::Array<double, 1, Eigen::Dynamic> e = (sub.array() - m).exp();
    CHECK(p(0, 0) == doctest::Approx(e(0) / e.sum()).epsilon(1e-12));

    check_grad([&](Tape& tt, Var x) { return tt.softmax_rows(x, &mask); }, z, rng, 1e-5);
}

TEST_CASE("reductions match finite differences") {
    Rng rng(12);
    Mat a = rand_mat(rng, 3, 4);
    check_grad([&](Tape& t, Var x) { return t.sum_all(x); }, a, rng);
    check_grad([&](Tape& t, Var x) { return t.mean_all(x); }, a, rng);
    check_grad([&](Tape& t, Var x) { return t.row_mean(x); }, a, rng);
}

TEST_CASE("cross entropy value and gradient") {
    Tape t;
    Mat z(1, 2);
    z << 0.0, 0.0;
    Var loss = t.cross_entropy(t.leaf(z), {0});
    CHECK(t.val(loss)(0, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    Rng rng(13);
    Mat logits = rand_mat(rng, 5, 3, 2.0);
    std::vector<int> labels = {0, 2, 1, 1, 0};
    auto f = [&](const Mat& xx) {
        Tape tt;
        return tt.val(tt.cross_entropy(tt.leaf(xx), labels))(0, 0);
    };
    Tape tt;
    Var leaf = tt.leaf(logits);
    tt.backward(tt.cross_entropy(leaf, labels));
    CHECK(max_rel_err(tt.grad(leaf), num_grad(f, logits)) < 1e-6);
}

TEST_CASE("smooth l1 hand values and gradient") {
    auto value = [](double pred, double target) {
        Tape t;
        Mat p(1, 1), q(1, 1);
        p << pred;
        q << target;
        return t.val(t.smooth_l1(t.leaf(p), q))(0, 0);
    };
    CHECK(value(0.0, 0.5) == doctest::Approx(0.125).epsilon(1e-12)); // quadratic branch
    CHECK(value(0.0, 2.0) == doctest::Approx(1.5).epsilon(1e-12));   // linear branch
    CHECK(value(0.7, 0.7) == 0.0);

    Rng rng(14);
    Mat pred = rand_mat(rng, 3, 4, 2.0);
    Mat target = rand_mat(rng, 3, 4, 2.0);
    auto f = [&](const Mat& xx) {
        Tape t;
        return t.val(t.smooth_l1(t.leaf(xx), target))(0, 0);
    };
    Tape t;
    Var leaf = t.leaf(pred);
    t.backward(t.smooth_l1(leaf, target));
    CHECK(max_rel_err(t.grad(leaf), num_grad(f, pred)) < 1e-5);
}

TEST_CASE("kl of softmaxed rows: hand value, positivity, gradient") {
    {
        Tape t;
        Mat s(1, 2), q(1, 2);
        s << 0.0, 0.0;
        q << 0.0, std::log(3.0);
        // KL(uniform || (0.25, 0.75)) = 0.5 ln(0.5/0.25) + 0.5 ln(0.5/0.75)
        double expect = 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0);
        CHECK(t.val(t.kl_softmax(t.leaf(s), q))(0, 0) == doctest::Approx(expect).epsilon(1e-12));
    }
    {
        Tape t;
        Mat s(2, 3);
        s << 1.0, -2.0, 0.5, 0.0, 0.0, 0.0;
        CHECK(t.val(t.kl_softmax(t.leaf(s), s))(0, 0) == 0.0); // identical inputs
    }
    Rng rng(15);
    for (int rep = 0; rep < 50; ++rep) {
        Mat s = rand_mat(rng, 2, 4, 3.0);
        Mat q = rand_mat(rng, 2, 4, 3.0);
        Tape t;
        CHECK(t.val(t.kl_softmax(t.leaf(s), q))(0, 0) >= 0.0);
    }
    Mat s = rand_mat(rng, 3, 4, 2.0);
    Mat q = rand_mat(rng, 3, 4, 2.0);
    auto f = [&](const Mat& xx) {
        Tape t;
        return t.val(t.kl_softmax(t.leaf(xx), q))(0, 0);
    };
    Tape t;
    Var leaf = t.leaf(s);
    t.backward(t.kl_softmax(leaf, q));
    CHECK(max_rel_err(t.grad(leaf), num_grad(f, s)) < 1e-5);
}

TEST_CASE("cosine gap hand values and gradient") {
    auto value = [](const Mat& a, const Mat& b) {
        Tape t;
        return t.val(t.cosine_gap(t.leaf(a), b))(0, 0);
    };
    Mat u(1, 2), v(1, 2);
    u << 1.0, 0.0;
    v << 1.0, 0.0;
    CHECK(value(u, v) == doctest::Approx(0.0).epsilon(1e-12));
    v << 0.0, 2.0;
    CHECK(value(u, v) == doctest::Approx(1.0).epsilon(1e-12));
    v << -3.0, 0.0;
    CHECK(value(u, v) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(value(Mat::Zero(1, 2), v) == doctest::Approx(1.0).epsilon(1e-12));

    Rng rng(16);
    Mat a = rand_mat(rng, 1, 6);
    Mat b = rand_mat(rng, 1, 6);
    auto f = [&](const Mat& xx) {
        Tape t;
        return t.val(t.cosine_gap(t.leaf(xx), b))(0, 0);
    };
    Tape t;
    Var leaf = t.leaf(a);
    t.backward(t.cosine_gap(leaf, b));
    CHECK(max_rel_err(t.grad(leaf), num_grad(f, a)) < 1e-5);
}

TEST_CASE("constants cut gradient propagation") {
    Rng rng(17);
    Mat a = rand_mat(rng, 2, 2);
    Tape t;
    Var leaf = t.leaf(a);
    Var frozen = t.constant(t.val(leaf)); // snapshot, detached
    Var out = t.mul(leaf, frozen);
    t.backward(t.mean_all(out));
    // d/dx mean(x * const(x)) = const(x)/n, not 2x/n
    Mat expect = a / static_cast<double>(a.size());
    CHECK(max_rel_err(t.grad(leaf), expect) < 1e-12);
}

TEST_CASE("gradients accumulate across reuse of one node") {
    Mat a(1, 1);
    a << 3.0;
    Tape t;
    Var x = t.leaf(a);
    Var y = t.mul(x, x); // x^2, d/dx = 2x
    t.backward(t.sum_all(y));
    CHECK(t.grad(x)(0, 0) == doctest::Approx(6.0).epsilon(1e-12));
}
