#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "cider/data.hpp"
#include "cider/model.hpp"
#include "cider/rng.hpp"

#include <cmath>
#include <functional>
#include <vector>

using namespace cider;

namespace {

Mat randm(int r, int c, Rng& rng, double scale = 1.0) {
    Mat m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = rng.uniform(-scale, scale);
    return m;
}

AttnP rand_attn(int d, Rng& rng) {
    return {randm(d, d, rng), randm(d, d, rng), randm(d, d, rng)};
}

GruP rand_gru(int din, int d, Rng& rng) {
    return {randm(din, 3 * d, rng), randm(d, 3 * d, rng), randm(1, 3 * d, rng),
            randm(1, 3 * d, rng)};
}

// loss = sum(out .* R) for a random projection R; compares tape gradients on
// every input against central differences
double max_grad_err(std::vector<Mat> inputs,
                    const std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>& build,
                    uint64_t seed) {
    Rng rng(seed);
    ad::Tape t;
    std::vector<ad::Var> vs;
    for (const Mat& m : inputs) vs.push_back(t.leaf(m));
    ad::Var out = build(t, vs);
    const Mat R = randm(static_cast<int>(t.val(out).rows()),
                        static_cast<int>(t.val(out).cols()), rng);
    ad::Var loss = t.sum_all(t.mul(out, t.constant(R)));
    t.backward(loss);
    std::vector<Mat> grads;
    for (ad::Var v : vs) grads.push_back(t.grad(v));

    auto eval = [&]() {
        ad::Tape t2;
        std::vector<ad::Var> vs2;
        for (const Mat& m : inputs) vs2.push_back(t2.leaf(m));
        ad::Var out2 = build(t2, vs2);
        return (t2.val(out2).array() * R.array()).sum();
    };

    const double eps = 1e-6;
    double worst = 0.0;
    for (size_t k = 0; k < inputs.size(); ++k) {
        for (int i = 0; i < inputs[k].rows(); ++i) {
            for (int j = 0; j < inputs[k].cols(); ++j) {
                const double keep = inputs[k](i, j);
                inputs[k](i, j) = keep + eps;
                const double up = eval();
                inputs[k](i, j) = keep - eps;
                const double dn = eval();
                inputs[k](i, j) = keep;
                const double num = (up - dn) / (2 * eps);
                const double ana = grads[k](i, j);
                const double rel =
                    std::abs(ana - num) / std::max(1e-6, std::abs(ana) + std::abs(num));
                worst = std::max(worst, rel);
            }
        }
    }
    return worst;
}

} // namespace

TEST_CASE("soft alignment: uniform attention when queries carry no signal") {
    // zero query rows make every key equally likely, so the output is the
    // plain average of the values
    Mat X_l = Mat::Zero(1, 1);
    Mat X_v(2, 1);
    X_v << 1.0, 3.0;
    AttnP p{Mat::Identity(1, 1), Mat::Identity(1, 1), Mat::Identity(1, 1)};
    Mat out = wsam_align(X_l, X_v, Mat::Zero(1, 2), p);
    REQUIRE(out.rows() == 1);
    REQUIRE(out.cols() == 1);
    CHECK(out(0, 0) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("soft alignment: hand-computed softmax weighting") {
    // logits (1, 3) -> weights (e^1, e^3)/(e^1+e^3) -> 2.7616
    Mat X_l = Mat::Ones(1, 1);
    Mat X_v(2, 1);
    X_v << 1.0, 3.0;
    AttnP p{Mat::Identity(1, 1), Mat::Identity(1, 1), Mat::Identity(1, 1)};
    Mat out = wsam_align(X_l, X_v, Mat::Zero(1, 2), p);
    const double w1 = std::exp(1.0) / (std::exp(1.0) + std::exp(3.0));
    const double expect = w1 * 1.0 + (1.0 - w1) * 3.0;
    CHECK(out(0, 0) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(out(0, 0) == doctest::Approx(2.7616).epsilon(1e-3));
}

TEST_CASE("soft alignment: single key dominates regardless of the query") {
    Rng rng(7);
    Mat X_l = randm(3, 2, rng);
    Mat X_x = randm(1, 2, rng);
    AttnP p = rand_attn(2, rng);
    Mat out = wsam_align(X_l, X_x, Mat::Zero(3, 1), p);
    Mat expect = X_x * p.Wv;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 2; ++j)
            CHECK(out(i, j) == doctest::Approx(expect(0, j)).epsilon(1e-12));
}

TEST_CASE("soft alignment: attention rows are a distribution") {
    // with identity values over identity features the output IS the
    // attention matrix
    const int d = 4;
    Rng rng(11);
    Mat X_l = randm(3, d, rng);
    Mat X_x = Mat::Identity(d, d);
    AttnP p{randm(d, d, rng), randm(d, d, rng), Mat::Identity(d, d)};
    Mat A = wsam_align(X_l, X_x, Mat::Zero(3, d), p);
    for (int i = 0; i < A.rows(); ++i) {
        double s = 0.0;
        for (int j = 0; j < A.cols(); ++j) {
            CHECK(A(i, j) >= 0.0);
            s += A(i, j);
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("soft alignment: additive mask zeroes out excluded keys") {
    const int d = 3;
    Rng rng(13);
    Mat X_l = randm(2, d, rng);
    Mat X_x = Mat::Identity(d, d);
    AttnP p{randm(d, d, rng), randm(d, d, rng), Mat::Identity(d, d)};
    Mat mask = Mat::Zero(2, d);
    mask(0, 1) = -1e9;          // row 0 may not look at key 1
    mask.row(1).setConstant(-1e9); // row 1 may not look anywhere
    Mat A = wsam_align(X_l, X_x, mask, p);
    CHECK(A(0, 1) == 0.0);
    CHECK(A(0, 0) + A(0, 2) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(A.row(1).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("soft alignment: permuting key/value pairs changes nothing") {
    Rng rng(17);
    const int d = 3, t_x = 5;
    Mat X_l = randm(4, d, rng);
    Mat X_x = randm(t_x, d, rng);
    AttnP p = rand_attn(d, rng);
    Mat base = wsam_align(X_l, X_x, Mat::Zero(4, t_x), p);

    std::vector<int> perm{3, 0, 4, 2, 1};
    Mat X_pi(t_x, d);
    for (int i = 0; i < t_x; ++i) X_pi.row(i) = X_x.row(perm[i]);
    Mat permuted = wsam_align(X_l, X_pi, Mat::Zero(4, t_x), p);
    CHECK((base - permuted).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("soft alignment: output takes the query-side length") {
    Rng rng(19);
    Mat X_l = randm(6, 4, rng);
    Mat X_x = randm(9, 4, rng);
    AttnP p = rand_attn(4, rng);
    Mat out = wsam_align(X_l, X_x, Mat::Zero(6, 9), p);
    CHECK(out.rows() == 6);
    CHECK(out.cols() == 4);
}

TEST_CASE("soft alignment: shape mismatches are rejected") {
    AttnP p = {Mat::Identity(2, 2), Mat::Identity(2, 2), Mat::Identity(2, 2)};
    CHECK_THROWS_AS(wsam_align(Mat::Zero(1, 3), Mat::Zero(2, 2), Mat::Zero(1, 2), p),
                    std::invalid_argument);
    CHECK_THROWS_AS(wsam_align(Mat::Zero(1, 2), Mat::Zero(2, 2), Mat::Zero(2, 2), p),
                    std::invalid_argument);
}

TEST_CASE("soft alignment: gradients match central differences") {
    Rng rng(23);
    Mat X_l = randm(3, 4, rng);
    Mat X_x = randm(5, 4, rng);
    AttnP p = rand_attn(4, rng);
    double err = max_grad_err(
        {X_l, X_x, p.Wq, p.Wk, p.Wv},
        [](ad::Tape& t, const std::vector<ad::Var>& v) {
            AttnV a{v[2], v[3], v[4]};
            return wsam_align_v(t, v[0], v[1], nullptr, a);
        },
        101);
    CHECK(err < 1e-4);
}

TEST_CASE("recurrent encoder: zero weights give zero states") {
    const int d = 3;
    GruP p{Mat::Zero(2, 3 * d), Mat::Zero(d, 3 * d), Mat::Zero(1, 3 * d),
           Mat::Zero(1, 3 * d)};
    Rng rng(29);
    Mat X = randm(4, 2, rng);
    Mat H = gru_encode(X, p);
    CHECK(H.rows() == 4);
    CHECK(H.cols() == d);
    CHECK(H.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("recurrent encoder: scalar one-step recurrence matches hand math") {
    // d = 1 keeps every gate a scalar; the packed layout is (r, z, n)
    GruP p;
    p.Wi = (Mat(1, 3) << 0.3, -0.2, 0.5).finished();
    p.Wh = (Mat(1, 3) << 0.11, 0.13, 0.17).finished();
    p.bi = (Mat(1, 3) << 0.01, 0.02, 0.03).finished();
    p.bh = (Mat(1, 3) << 0.04, 0.05, 0.06).finished();

    auto sigma = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
    auto step = [&](double x, double h) {
        const double r = sigma(x * 0.3 + 0.01 + h * 0.11 + 0.04);
        const double z = sigma(x * -0.2 + 0.02 + h * 0.13 + 0.05);
        const double n = std::tanh(x * 0.5 + 0.03 + r * (h * 0.17 + 0.06));
        return z * h + (1.0 - z) * n;
    };

    Mat X(3, 1);
    X << 0.7, -0.4, 1.2;
    Mat H = gru_encode(X, p);
    double h = 0.0;
    for (int i = 0; i < 3; ++i) {
        h = step(X(i, 0), h);
        CHECK(H(i, 0) == doctest::Approx(h).epsilon(1e-12));
    }
}

TEST_CASE("recurrent encoder: order matters") {
    Rng rng(31);
    Mat X = randm(5, 3, rng);
    Mat Xr = X.colwise().reverse();
    GruP p = rand_gru(3, 4, rng);
    Mat a = gru_encode(X, p);
    Mat b = gru_encode(Xr, p);
    CHECK((a.row(4) - b.row(4)).cwiseAbs().maxCoeff() > 1e-9);
}

TEST_CASE("recurrent encoder: input width is checked") {
    Rng rng(37);
    GruP p = rand_gru(3, 2, rng);
    CHECK_THROWS_AS(gru_encode(Mat::Zero(4, 2), p), std::invalid_argument);
}

TEST_CASE("recurrent encoder: gradients match central differences") {
    Rng rng(41);
    Mat X = randm(3, 2, rng);
    GruP p = rand_gru(2, 2, rng);
    double err = max_grad_err(
        {X, p.Wi, p.Wh, p.bi, p.bh},
        [](ad::Tape& t, const std::vector<ad::Var>& v) {
            GruV g{v[1], v[2], v[3], v[4]};
            return gru_encode_v(t, v[0], g, 2);
        },
        103);
    CHECK(err < 1e-4);
}

TEST_CASE("row resampling: endpoints pinned, neighbors rounded") {
    CHECK(resample_rows(4, 4) == std::vector<int>({0, 1, 2, 3}));
    CHECK(resample_rows(1, 5) == std::vector<int>({0, 0, 0, 0, 0}));
    CHECK(resample_rows(5, 2) == std::vector<int>({0, 4}));
    CHECK(resample_rows(2, 5) == std::vector<int>({0, 0, 1, 1, 1}));
    CHECK(resample_rows(5, 1) == std::vector<int>({0}));
    CHECK_THROWS_AS(resample_rows(0, 3), std::invalid_argument);
}

TEST_CASE("conv projection: graph form agrees with the plain utility") {
    Rng rng(43);
    Mat X = randm(6, 3, rng);
    Mat W = randm(9, 4, rng); // kernel 3, stacked taps
    Mat b = randm(1, 4, rng);

    Mat direct = conv_project(X, W, b, 3);

    ad::Tape t;
    Bound bd;
    LinearP lp{W, b};
    ad::Var out = conv_rows_v(t, t.constant(X), bind_v(t, bd, lp), 3);
    CHECK((t.val(out) - direct).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("conv projection: gradient through taps and bias") {
    Rng rng(47);
    Mat X = randm(5, 2, rng);
    Mat W = randm(6, 3, rng);
    Mat b = randm(1, 3, rng);
    double err = max_grad_err(
        {X, W, b},
        [](ad::Tape& t, const std::vector<ad::Var>& v) {
            return conv_rows_v(t, v[0], LinearV{v[1], v[2]}, 3);
        },
        107);
    CHECK(err < 1e-4);
}
