#include "cider/tape.hpp"

#include <cmath>
#include <stdexcept>

namespace cider::ad {

namespace {
constexpr double kMaskFloor = -1e8; // entries at or below this count as excluded
}

Var Tape::push(Mat v, bool tracked, std::function<void(Tape&)> back) {
    nodes_.push_back(Node{std::move(v), Mat(), tracked, false, std::move(back)});
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Mat v) { return push(std::move(v), false, nullptr); }
Var Tape::leaf(Mat v) { return push(std::move(v), true, nullptr); }

const Mat& Tape::val(Var v) const { return nodes_.at(v.id).val; }

Mat Tape::grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.has_grad) return n.grad;
    return Mat::Zero(n.val.rows(), n.val.cols());
}

Mat& Tape::g(int id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
        n.grad = Mat::Zero(n.val.rows(), n.val.cols());
        n.has_grad = true;
    }
    return n.grad;
}

void Tape::acc(int id, const Mat& delta) {
    if (!nodes_[id].tracked) return;
    g(id) += delta;
}

void Tape::backward(Var loss) {
    Node& ln = nodes_.at(loss.id);
    if (ln.val.rows() != 1 || ln.val.cols() != 1)
        throw std::runtime_error("backward: loss must be 1x1");
    g(loss.id)(0, 0) += 1.0;
    for (int id = loss.id; id >= 0; --id) {
        Node& n = nodes_[id];
        if (n.tracked && n.has_grad && n.back) n.back(*this);
    }
}

// ---- arithmetic ------------------------------------------------------------

Var Tape::add(Var a, Var b) {
    Mat v = val(a) + val(b);
    int out = size();
    return push(std::move(v), tracked(a) || tracked(b), [=](Tape& t) {
        const Mat& go = t.nodes_[out].grad;
        t.acc(a.id, go);
        t.acc(b.id, go);
    });
}

Var Tape::sub(Var a, Var b) {
    Mat v = val(a) - val(b);
    int out = size();
    return push(std::move(v), tracked(a) || tracked(b), [=](Tape& t) {
        const Mat& go = t.nodes_[out].grad;
        t.acc(a.id, go);
        t.acc(b.id, -go);
    });
}

Var Tape::mul(Var a, Var b) {
    Mat v = val(a).cwiseProduct(val(b));
    int out = size();
    return push(std::move(v), tracked(a) || tracked(b), [=](Tape& t) {
        const Mat& go = t.nodes_[out].grad;
        t.acc(a.id, go.cwiseProduct(t.nodes_[b.id].val));
        t.acc(b.id, go.cwiseProduct(t.nodes_[a.id].val));
    });
}

Var Tape::matmul(Var a, Var b) {
    Mat v = val(a) * val(b);
    int out = size();
    return push(std::move(v), tracked(a) || tracked(b), [=](Tape& t) {
        const Mat& go = t.nodes_[out].grad;
        t.acc(a.id, go * t.nodes_[b.id].val.transpose());
        t.acc(b.id, t.nodes_[a.id].val.transpose() * go);
    });
}

Var Tape::scale(Var a, double s) {
    Mat v = val(a) * s;
    int out = size();
    return push(std::move(v), tracked(a), [=](Tape& t) {
        t.acc(a.id, t.nodes_[out].grad * s);
    });
}

Var Tape::add_scalar(Var a, double s) {
    Mat v = val(a).array() + s;
    int out = size();
    return push(std::move(v), tracked(a), [=](Tape& t) {
        t.acc(a.id, t.nodes_[out].grad);
    });
}

Var Tape::transpose(Var a) {
    Mat v = val(a).transpose();
    int out = size();
    return push(std::move(v), tracked(a), [=](Tape& t) {
        t.acc(a.id, t.nodes_[out].grad.transpose());
    });
}

Var Tape::add_rowvec(Var a, Var r) {
    Mat v = val(a).rowwise() + val(r).row(0);
    int out = size();
    return push(std::move(v), tracked(a) || tracked(r), [=](Tape& t) {
        const Mat& go = t.nodes_[out].grad;
        t.acc(a.id, go);
        t.acc(r.id, go.colwise().sum());
    });
}

Var Tape::sub_colvec(Var a, Var c) {
    Mat v = val(a).colwise() - val(c).col(0);
    int out = size();
    return push(std::move(v), tracked(a) || tracked(c), [=](Tape& t) {
        const Mat& go = t.nodes_[out].grad;
        t.acc(a.id, go);
        t.acc(c.id, -go.rowwise().sum());
    });
}

Var Tape::mul_rowvec(Var a, Var r) {
    Mat v = val(a).array().rowwise() * val(r).row(0).array();
    int out = size();
    return push(std::move(v), tracked(a) || tracked(r), [=](Tape& t) {
        const Mat& go = t.nodes_[out].grad;
        const Mat& va = t.nodes_[a.id].val;
        const Mat& vr = t.nodes_[r.id].val;
        t.acc(a.id, go.array().rowwise() * vr.row(0).array());
        t.acc(r.id, go.cwiseProduct(va).colwise().sum());
    });
}

Var Tape::mul_colvec(Var a, Var c) {
    Mat v = val(a).array().colwise() * val(c).col(0).array();
    int out = size();
    return push(std::move(v), tracked(a) || tracked(c), [=](Tape& t) {
        const Mat& go = t.nodes_[out].grad;
        const Mat& va = t.nodes_[a.id].val;
        const Mat& vc = t.nodes_[c.id].val;
        t.acc(a.id, go.array().colwise() * vc.col(0).array());
        t.acc(c.id, go.cwiseProduct(va).rowwise().sum());
    });
}

// ---- shaping ---------------------------------------------------------------

Var Tape::concat_rows(const std::vector<Var>& xs) {
    long rows = 0, cols = val(xs.at(0)).cols();
    bool tr = false;
    for (Var x : xs) { rows += val(x).rows(); tr = tr || tracked(x); }
    Mat v(rows, cols);
    long off = 0;
    for (Var x : xs) { v.middleRows(off, val(x).rows()) = val(x); off += val(x).rows(); }
    int out = size();
    std::vector<Var> parts = xs;
    return push(std::move(v), tr, [=](Tape& t) {
        const Mat& go = t.nodes_[out].grad;
        long o = 0;
        for (Var x : parts) {
            long r = t.nodes_[x.id].val.rows();
            t.acc(x.id, go.middleRows(o, r));
            o += r;
        }
    });
}

Var Tape::concat_cols(const std::vector<Var>& xs) {
    long cols = 0, rows = val(xs.at(0)).rows();
    bool tr = false;
    for (Var x : xs) { cols += val(x).cols(); tr = tr || tracked(x); }
    Mat v(rows, cols);
    long off = 0;
    for (Var x : xs) { v.middleCols(off, val(x).cols()) = val(x); off += val(x).cols(); }
    int out = size();
    std::vector<Var> parts = xs;
    return push(std::move(v), tr, [=](Tape& t) {
        const Mat& go = t.nodes_[out].grad;
        long o = 0;
        for (Var x : parts) {
            long c = t.nodes_[x.id].val.cols();
            t.acc(x.id, go.middleCols(o, c));
            o += c;
        }
    });
}

Var Tape::slice_rows(Var a, int r0, int n) {
    Mat v = val(a).middleRows(r0, n);
    int out = size();
    return push(std::move(v), tracked(a), [=](Tape& t) {
        if (!t.nodes_[a.id].tracked) return;
        t.g(a.id).middleRows(r0, n) += t.nodes_[out].grad;
    });
}

Var Tape::slice_cols(Var a, int c0, int n) {
    Mat v = val(a).middleCols(c0, n);
    int out = size();
    return push(std::move(v), tracked(a), [=](Tape& t) {
        if (!t.nodes_[a.id].tracked) return;
        t.g(a.id).middleCols(c0, n) += t.nodes_[out].grad;
    });
}

Var Tape::gather_rows(Var a, std::vector<int> idx) {
    Mat v(static_cast<long>(idx.size()), val(a).cols());
    for (size_t i = 0; i < idx.size(); ++i) v.row(static_cast<long>(i)) = val(a).row(idx[i]);
    int out = size();
    return push(std::move(v), tracked(a), [=, ix = std::move(idx)](Tape& t) {
        if (!t.nodes_[a.id].tracked) return;
        Mat& ga = t.g(a.id);
        const Mat& go = t.nodes_[out].grad;
        for (size_t i = 0; i < ix.size(); ++i) ga.row(ix[i]) += go.row(static_cast<long>(i));
    });
}

// ---- nonlinearities --------------------------------------------------------

Var Tape::sigmoid(Var a) {
    Mat v = (1.0 / (1.0 + (-val(a).array()).exp())).matrix();
    int out = size();
    return push(std::move(v), tracked(a), [=](Tape& t) {
        const Mat& s = t.nodes_[out].val;
        const Mat& go = t.nodes_[out].grad;
        t.acc(a.id, (go.array() * s.array() * (1.0 - s.array())).matrix());
    });
}

Var Tape::tanh_(Var a) {
    Mat v = val(a).array().tanh().matrix();
    int out = size();
    return push(std::move(v), tracked(a), [=](Tape& t) {
        const Mat& th = t.nodes_[out].val;
        const Mat& go = t.nodes_[out].grad;
        t.acc(a.id, (go.array() * (1.0 - th.array().square())).matrix());
    });
}

Var Tape::relu(Var a) {
    Mat v = val(a).cwiseMax(0.0);
    int out = size();
    return push(std::move(v), tracked(a), [=](Tape& t) {
        const Mat& va = t.nodes_[a.id].val;
        const Mat& go = t.nodes_[out].grad;
        t.acc(a.id, (go.array() * (va.array() > 0.0).cast<double>()).matrix());
    });
}

Var Tape::softmax_rows(Var logits, const Mat* add_mask) {
    const Mat& z = val(logits);
    Mat masked = add_mask ? Mat(z + *add_mask) : z;
    Mat p = Mat::Zero(z.rows(), z.cols());
    for (long r = 0; r < z.rows(); ++r) {
        if (masked.row(r).maxCoeff() <= kMaskFloor) continue; // fully excluded row -> zeros
        double m = masked.row(r).maxCoeff();
        Eigen::Array<double, 1, Eigen::Dynamic> e = (masked.row(r).array() - m).exp();
        p.row(r) = (e / e.sum()).matrix();
    }
    int out = size();
    return push(std::move(p), tracked(logits), [=](Tape& t) {
        const Mat& pr = t.nodes_[out].val;
        const Mat& go = t.nodes_[out].grad;
        Mat gz(pr.rows(), pr.cols());
        for (long r = 0; r < pr.rows(); ++r) {
            double dot = go.row(r).dot(pr.row(r));
            gz.row(r) = pr.row(r).cwiseProduct(go.row(r) - Mat::Constant(1, pr.cols(), dot));
        }
        t.acc(logits.id, gz);
    });
}

// ---- reductions ------------------------------------------------------------

Var Tape::sum_all(Var a) {
    Mat v(1, 1);
    v(0, 0) = val(a).sum();
    int out = size();
    return push(std::move(v), tracked(a), [=](Tape& t) {
        double go = t.nodes_[out].grad(0, 0);
        const Mat& va = t.nodes_[a.id].val;
        t.acc(a.id, Mat::Constant(va.rows(), va.cols(), go));
    });
}

Var Tape::mean_all(Var a) {
    double n = static_cast<double>(val(a).size());
    Mat v(1, 1);
    v(0, 0) = val(a).sum() / n;
    int out = size();
    return push(std::move(v), tracked(a), [=](Tape& t) {
        double go = t.nodes_[out].grad(0, 0) / n;
        const Mat& va = t.nodes_[a.id].val;
        t.acc(a.id, Mat::Constant(va.rows(), va.cols(), go));
    });
}

Var Tape::row_mean(Var a) {
    double c = static_cast<double>(val(a).cols());
    Mat v = val(a).rowwise().mean();
    int out = size();
    return push(std::move(v), tracked(a), [=](Tape& t) {
        const Mat& go = t.nodes_[out].grad; // Rx1
        const Mat& va = t.nodes_[a.id].val;
        t.acc(a.id, (go / c) * Mat::Ones(1, va.cols()));
    });
}

Var Tape::rsqrt(Var a, double eps) {
    Mat v = (val(a).array() + eps).rsqrt().matrix();
    int out = size();
    return push(std::move(v), tracked(a), [=](Tape& t) {
        const Mat& vo = t.nodes_[out].val;
        const Mat& go = t.nodes_[out].grad;
        t.acc(a.id, (go.array() * (-0.5) * vo.array().cube()).matrix());
    });
}

// ---- losses ----------------------------------------------------------------

Var Tape::cross_entropy(Var logits, const std::vector<int>& labels) {
    const Mat& z = val(logits);
    if (static_cast<long>(labels.size()) != z.rows())
        throw std::runtime_error("cross_entropy: label count != logit rows");
    double total = 0.0;
    for (long r = 0; r < z.rows(); ++r) {
        double m = z.row(r).maxCoeff();
        double lse = m + std::log((z.row(r).array() - m).exp().sum());
        total += lse - z(r, labels[static_cast<size_t>(r)]);
    }
    Mat v(1, 1);
    v(0, 0) = total / static_cast<double>(z.rows());
    int out = size();
    return push(std::move(v), tracked(logits), [=](Tape& t) {
        double go = t.nodes_[out].grad(0, 0);
        const Mat& zz = t.nodes_[logits.id].val;
        double rows = static_cast<double>(zz.rows());
        Mat gz(zz.rows(), zz.cols());
        for (long r = 0; r < zz.rows(); ++r) {
            double m = zz.row(r).maxCoeff();
            Eigen::Array<double, 1, Eigen::Dynamic> e = (zz.row(r).array() - m).exp();
            gz.row(r) = (e / e.sum()).matrix();
            gz(r, labels[static_cast<size_t>(r)]) -= 1.0;
        }
        t.acc(logits.id, gz * (go / rows));
    });
}

Var Tape::smooth_l1(Var pred, const Mat& target) {
    const Mat& p = val(pred);
    if (p.rows() != target.rows() || p.cols() != target.cols())
        throw std::runtime_error("smooth_l1: shape mismatch");
    Mat d = p - target;
    double n = static_cast<double>(d.size());
    double total = 0.0;
    for (long i = 0; i < d.size(); ++i) {
        double x = std::abs(d(i));
        total += (x < 1.0) ? 0.5 * x * x : x - 0.5;
    }
    Mat v(1, 1);
    v(0, 0) = total / n;
    int out = size();
    return push(std::move(v), tracked(pred), [=, tg = target](Tape& t) {
        double go = t.nodes_[out].grad(0, 0) / n;
        Mat dd = t.nodes_[pred.id].val - tg;
        t.acc(pred.id, dd.cwiseMax(-1.0).cwiseMin(1.0) * go);
    });
}

namespace {
Mat softmax_dense(const Mat& z) {
    Mat p(z.rows(), z.cols());
    for (long r = 0; r < z.rows(); ++r) {
        double m = z.row(r).maxCoeff();
        Eigen::Array<double, 1, Eigen::Dynamic> e = (z.row(r).array() - m).exp();
        p.row(r) = (e / e.sum()).matrix();
    }
    return p;
}
} // namespace

Var Tape::kl_softmax(Var student_logits, const Mat& teacher_logits) {
    const Mat& sz = val(student_logits);
    if (sz.rows() != teacher_logits.rows() || sz.cols() != teacher_logits.cols())
        throw std::runtime_error("kl_softmax: shape mismatch");
    Mat p = softmax_dense(sz);
    Mat q = softmax_dense(teacher_logits);
    double rows = static_cast<double>(sz.rows());
    double total = 0.0;
    for (long r = 0; r < p.rows(); ++r)
        for (long c = 0; c < p.cols(); ++c)
            if (p(r, c) > 0.0)
                total += p(r, c) * (std::log(p(r, c)) - std::log(std::max(q(r, c), 1e-300)));
    Mat v(1, 1);
    v(0, 0) = total / rows;
    int out = size();
    return push(std::move(v), tracked(student_logits), [=, pp = std::move(p), qq = std::move(q)](Tape& t) {
        double go = t.nodes_[out].grad(0, 0) / rows;
        Mat gz = Mat::Zero(pp.rows(), pp.cols());
        for (long r = 0; r < pp.rows(); ++r) {
            double klrow = 0.0;
            for (long c = 0; c < pp.cols(); ++c)
                if (pp(r, c) > 0.0)
                    klrow += pp(r, c) * (std::log(pp(r, c)) - std::log(std::max(qq(r, c), 1e-300)));
            for (long c = 0; c < pp.cols(); ++c)
                if (pp(r, c) > 0.0) {
                    double diff = std::log(pp(r, c)) - std::log(std::max(qq(r, c), 1e-300));
                    gz(r, c) = pp(r, c) * (diff - klrow);
                }
        }
        t.acc(student_logits.id, gz * go);
    });
}

Var Tape::cosine_gap(Var a, const Mat& b) {
    const Mat& va = val(a);
    if (va.rows() != 1 || b.rows() != 1 || va.cols() != b.cols())
        throw std::runtime_error("cosine_gap: expects matching 1xK rows");
    double na = va.norm(), nb = b.norm();
    constexpr double kTiny = 1e-300;
    double c = 0.0;
    bool degenerate = (na < kTiny || nb < kTiny);
    if (!degenerate) c = std::clamp(va.row(0).dot(b.row(0)) / (na * nb), -1.0, 1.0);
    Mat v(1, 1);
    v(0, 0) = 1.0 - c;
    int out = size();
    return push(std::move(v), tracked(a), [=, bb = b](Tape& t) {
        if (degenerate) return;
        double go = t.nodes_[out].grad(0, 0);
        const Mat& aa = t.nodes_[a.id].val;
        double n_a = aa.norm(), n_b = bb.norm();
        double cosv = aa.row(0).dot(bb.row(0)) / (n_a * n_b);
        Mat dcos = bb / (n_a * n_b) - aa * (cosv / (n_a * n_a));
        t.acc(a.id, -dcos * go);
    });
}

} // namespace cider::ad
