#pragma once

#include "cider/mat.hpp"

#include <functional>
#include <vector>

namespace cider::ad {

struct Var {
    int id = -1;
    bool ok() const { return id >= 0; }
};

// Reverse-mode autodiff tape over dense float64 matrices.
//
// One tape per forward pass: push leaves (trainable) and constants
// (data, detached teachers), build the graph eagerly, call backward()
// on a 1x1 loss node, then read gradients off the leaves. Constants
// never allocate gradients and cut propagation, which is how teacher
// signals stay detached.
class Tape {
public:
    Var constant(Mat v);
    Var leaf(Mat v);

    const Mat& val(Var v) const;
    Mat grad(Var v) const; // zeros if the node was never reached

    // arithmetic
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b); // elementwise
    Var matmul(Var a, Var b);
    Var scale(Var a, double s);
    Var add_scalar(Var a, double s);
    Var transpose(Var a);
    Var add_rowvec(Var a, Var r);  // r: 1xC, broadcast down rows
    Var sub_colvec(Var a, Var c);  // c: Rx1, broadcast across cols
    Var mul_rowvec(Var a, Var r);  // per-column scaling
    Var mul_colvec(Var a, Var c);  // per-row scaling

    // shaping
    Var concat_rows(const std::vector<Var>& xs);
    Var concat_cols(const std::vector<Var>& xs);
    Var slice_rows(Var a, int r0, int n);
    Var slice_cols(Var a, int c0, int n);
    Var gather_rows(Var a, std::vector<int> idx); // backward scatter-adds

    // nonlinearities
    Var sigmoid(Var a);
    Var tanh_(Var a);
    Var relu(Var a);
    // Row-wise softmax with optional additive mask (0 = admitted, -1e9 =
    // excluded). Masked entries come out exactly 0; fully-masked rows come
    // out as all-zero rows rather than NaN.
    Var softmax_rows(Var logits, const Mat* add_mask = nullptr);

    // reductions
    Var sum_all(Var a);  // 1x1
    Var mean_all(Var a); // 1x1
    Var row_mean(Var a); // Rx1
    Var rsqrt(Var a, double eps); // elementwise 1/sqrt(x+eps)

    // losses (all 1x1)
    Var cross_entropy(Var logits, const std::vector<int>& labels); // mean over rows
    Var smooth_l1(Var pred, const Mat& target);                    // delta=1, mean reduction
    // mean-over-rows KL( softmax(student) || softmax(teacher) ); teacher constant
    Var kl_softmax(Var student_logits, const Mat& teacher_logits);
    // 1 - cos(a, b) for row vectors; b constant; zero-norm inputs give 1 with zero grad
    Var cosine_gap(Var a, const Mat& b);

    void backward(Var loss);
    int size() const { return static_cast<int>(nodes_.size()); }

private:
    struct Node {
        Mat val;
        Mat grad;
        bool tracked = false;
        bool has_grad = false;
        std::function<void(Tape&)> back; // empty for leaves/constants
    };
    std::vector<Node> nodes_;

    Var push(Mat v, bool tracked, std::function<void(Tape&)> back);
    bool tracked(Var v) const { return nodes_[v.id].tracked; }
    Mat& g(int id); // gradient accumulator, allocated on first touch
    void acc(int id, const Mat& delta);
};

} // namespace cider::ad
