#include "cider/model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace cider {

namespace {

constexpr double kMaskVal = -1e9;

// every row admits exactly the columns of the listed T-wide blocks
Mat view_mask(int t, const std::vector<int>& blocks) {
    Mat m = Mat::Constant(static_cast<int>(blocks.size()) * t, 3 * t, kMaskVal);
    for (int b : blocks) m.middleCols(b * t, t).setZero();
    return m;
}

Mat square_mask(int t, const std::vector<int>& blocks) {
    Mat m = Mat::Constant(3 * t, 3 * t, kMaskVal);
    for (int rb : blocks)
        for (int cb : blocks) m.block(rb * t, cb * t, t, t).setZero();
    return m;
}

void fill_uniform(Mat& m, double lo, double hi, Rng& rng) {
    for (int r = 0; r < m.rows(); ++r)
        for (int c = 0; c < m.cols(); ++c) m(r, c) = rng.uniform(lo, hi);
}

} // namespace

CompositeMasks build_composite_masks(int t_l) {
    if (t_l <= 0) throw std::invalid_argument("build_composite_masks: t_l must be positive");
    CompositeMasks m;
    m.bi_la = square_mask(t_l, {0, 1});
    m.bi_lv = square_mask(t_l, {0, 2});
    m.bi_av = square_mask(t_l, {1, 2});
    m.uni_l = square_mask(t_l, {0});
    m.uni_a = square_mask(t_l, {1});
    m.uni_v = square_mask(t_l, {2});
    return m;
}

std::vector<int> resample_rows(int from, int to) {
    if (from <= 0 || to <= 0)
        throw std::invalid_argument("resample_rows: lengths must be positive");
    std::vector<int> idx(to);
    if (to == 1) {
        idx[0] = 0;
        return idx;
    }
    for (int j = 0; j < to; ++j)
        idx[j] = static_cast<int>(
            std::llround(static_cast<double>(j) * (from - 1) / (to - 1)));
    return idx;
}

ad::Var bind_leaf(ad::Tape& t, Bound& b, const Mat& m) {
    auto it = b.leaves.find(&m);
    if (it != b.leaves.end()) return it->second;
    ad::Var v = t.leaf(m);
    b.leaves.emplace(&m, v);
    return v;
}

LinearV bind_v(ad::Tape& t, Bound& b, const LinearP& p) {
    return {bind_leaf(t, b, p.W), bind_leaf(t, b, p.b)};
}
AttnV bind_v(ad::Tape& t, Bound& b, const AttnP& p) {
    return {bind_leaf(t, b, p.Wq), bind_leaf(t, b, p.Wk), bind_leaf(t, b, p.Wv)};
}
GruV bind_v(ad::Tape& t, Bound& b, const GruP& p) {
    return {bind_leaf(t, b, p.Wi), bind_leaf(t, b, p.Wh), bind_leaf(t, b, p.bi),
            bind_leaf(t, b, p.bh)};
}
LnV bind_v(ad::Tape& t, Bound& b, const LnP& p) {
    return {bind_leaf(t, b, p.g), bind_leaf(t, b, p.b)};
}
Mlp3V bind_v(ad::Tape& t, Bound& b, const Mlp3P& p) {
    return {bind_v(t, b, p.f1), bind_v(t, b, p.f2), bind_v(t, b, p.f3)};
}
McaV bind_v(ad::Tape& t, Bound& b, const McaP& p) {
    McaV v;
    v.att = bind_v(t, b, p.att);
    v.proj_tri = bind_v(t, b, p.proj_tri);
    v.proj_la = bind_v(t, b, p.proj_la);
    v.proj_lv = bind_v(t, b, p.proj_lv);
    v.proj_av = bind_v(t, b, p.proj_av);
    v.proj_l = bind_v(t, b, p.proj_l);
    v.proj_a = bind_v(t, b, p.proj_a);
    v.proj_v = bind_v(t, b, p.proj_v);
    v.red_l = bind_v(t, b, p.red_l);
    v.red_a = bind_v(t, b, p.red_a);
    v.red_v = bind_v(t, b, p.red_v);
    v.mix = bind_v(t, b, p.mix);
    return v;
}
LayerV bind_v(ad::Tape& t, Bound& b, const LayerP& p) {
    return {bind_v(t, b, p.ln1), bind_v(t, b, p.mca), bind_v(t, b, p.ln2),
            bind_v(t, b, p.ffn1), bind_v(t, b, p.ffn2)};
}

ad::Var dropout_v(ad::Tape& t, ad::Var x, double p, const DropCtx* drop) {
    if (!drop || !drop->active || drop->rng == nullptr || p <= 0.0) return x;
    const Mat& v = t.val(x);
    const double keep = 1.0 - p;
    Mat mask(v.rows(), v.cols());
    for (int r = 0; r < mask.rows(); ++r)
        for (int c = 0; c < mask.cols(); ++c)
            mask(r, c) = drop->rng->bernoulli(keep) ? 1.0 / keep : 0.0;
    return t.mul(x, t.constant(std::move(mask)));
}

ad::Var linear_v(ad::Tape& t, ad::Var x, const LinearV& p) {
    return t.add_rowvec(t.matmul(x, p.W), p.b);
}

ad::Var mlp3_v(ad::Tape& t, ad::Var x, const Mlp3V& p) {
    ad::Var h = t.relu(linear_v(t, x, p.f1));
    h = t.relu(linear_v(t, h, p.f2));
    return linear_v(t, h, p.f3);
}

ad::Var conv_rows_v(ad::Tape& t, ad::Var x, const LinearV& p, int kernel) {
    if (kernel < 1 || kernel % 2 == 0)
        throw std::invalid_argument("conv_rows_v: kernel must be odd and positive");
    if (kernel == 1) return linear_v(t, x, p);
    const int rows = static_cast<int>(t.val(x).rows());
    const int din = static_cast<int>(t.val(x).cols());
    const int half = kernel / 2;
    ad::Var pad = t.constant(Mat::Zero(half, din));
    ad::Var xp = t.concat_rows({pad, x, pad});
    ad::Var acc;
    for (int j = 0; j < kernel; ++j) {
        ad::Var tap = t.slice_rows(xp, j, rows);
        ad::Var term = t.matmul(tap, t.slice_rows(p.W, j * din, din));
        acc = (j == 0) ? term : t.add(acc, term);
    }
    return t.add_rowvec(acc, p.b);
}

ad::Var layer_norm_v(ad::Tape& t, ad::Var x, const LnV& p, double eps) {
    ad::Var mu = t.row_mean(x);
    ad::Var xc = t.sub_colvec(x, mu);
    ad::Var var = t.row_mean(t.mul(xc, xc));
    ad::Var xn = t.mul_colvec(xc, t.rsqrt(var, eps));
    return t.add_rowvec(t.mul_rowvec(xn, p.g), p.b);
}

ad::Var wsam_align_v(ad::Tape& t, ad::Var X_l, ad::Var X_x, const Mat* add_mask,
                     const AttnV& p) {
    const double d = static_cast<double>(t.val(p.Wq).cols());
    ad::Var q = t.matmul(X_l, p.Wq);
    ad::Var k = t.matmul(X_x, p.Wk);
    ad::Var logits = t.scale(t.matmul(q, t.transpose(k)), 1.0 / std::sqrt(d));
    ad::Var attn = t.softmax_rows(logits, add_mask);
    return t.matmul(attn, t.matmul(X_x, p.Wv));
}

ad::Var gru_encode_v(ad::Tape& t, ad::Var X, const GruV& p, int d) {
    const int steps = static_cast<int>(t.val(X).rows());
    ad::Var ones = t.constant(Mat::Ones(1, d));
    ad::Var h = t.constant(Mat::Zero(1, d));
    std::vector<ad::Var> hs;
    hs.reserve(steps);
    for (int i = 0; i < steps; ++i) {
        ad::Var xt = t.slice_rows(X, i, 1);
        ad::Var gi = t.add_rowvec(t.matmul(xt, p.Wi), p.bi);
        ad::Var gh = t.add_rowvec(t.matmul(h, p.Wh), p.bh);
        ad::Var r = t.sigmoid(t.add(t.slice_cols(gi, 0, d), t.slice_cols(gh, 0, d)));
        ad::Var z = t.sigmoid(t.add(t.slice_cols(gi, d, d), t.slice_cols(gh, d, d)));
        ad::Var n =
            t.tanh_(t.add(t.slice_cols(gi, 2 * d, d), t.mul(r, t.slice_cols(gh, 2 * d, d))));
        h = t.add(t.mul(z, h), t.mul(t.sub(ones, z), n));
        hs.push_back(h);
    }
    return steps == 1 ? hs[0] : t.concat_rows(hs);
}

ad::Var na_pool_v(ad::Tape& t, ad::Var H, ad::Var score) {
    ad::Var s = t.matmul(H, score);                    // T x 1
    ad::Var w = t.softmax_rows(t.transpose(s));        // 1 x T
    return t.matmul(w, H);                             // 1 x d
}

McaViewsV mca_views_v(ad::Tape& t, ad::Var H_m, int t_l, const AttnV& p, int heads,
                      double p_attn, const DropCtx* drop) {
    const int rows = static_cast<int>(t.val(H_m).rows());
    const int d = static_cast<int>(t.val(p.Wq).cols());
    if (t_l <= 0 || rows != 3 * t_l)
        throw std::invalid_argument("mca_views_v: stacked input must have 3*t_l rows");
    if (heads < 1 || d % heads != 0)
        throw std::invalid_argument("mca_views_v: heads must divide the model width");
    const int dh = d / heads;
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
    const int T = t_l;

    ad::Var Q = t.matmul(H_m, p.Wq);
    ad::Var K = t.matmul(H_m, p.Wk);
    ad::Var V = t.matmul(H_m, p.Wv);

    const Mat m_la = view_mask(T, {0, 1});
    const Mat m_lv = view_mask(T, {0, 2});
    const Mat m_av = view_mask(T, {1, 2});
    const Mat m_l = view_mask(T, {0});
    const Mat m_a = view_mask(T, {1});
    const Mat m_v = view_mask(T, {2});

    std::vector<ad::Var> o_tri, o_la, o_lv, o_av, o_l, o_a, o_v, logits_all;
    for (int h = 0; h < heads; ++h) {
        ad::Var qh = heads == 1 ? Q : t.slice_cols(Q, h * dh, dh);
        ad::Var kh = heads == 1 ? K : t.slice_cols(K, h * dh, dh);
        ad::Var vh = heads == 1 ? V : t.slice_cols(V, h * dh, dh);
        ad::Var khT = t.transpose(kh);

        ad::Var tri_logits = t.scale(t.matmul(qh, khT), sc);
        logits_all.push_back(tri_logits);
        ad::Var a_tri = dropout_v(t, t.softmax_rows(tri_logits), p_attn, drop);
        o_tri.push_back(t.matmul(a_tri, vh));

        auto attend = [&](ad::Var q_rows, const Mat& mask) {
            ad::Var lo = t.scale(t.matmul(q_rows, khT), sc);
            ad::Var a = dropout_v(t, t.softmax_rows(lo, &mask), p_attn, drop);
            return t.matmul(a, vh);
        };
        o_la.push_back(attend(t.slice_rows(qh, 0, 2 * T), m_la));
        o_lv.push_back(attend(
            t.concat_rows({t.slice_rows(qh, 0, T), t.slice_rows(qh, 2 * T, T)}), m_lv));
        o_av.push_back(attend(t.slice_rows(qh, T, 2 * T), m_av));
        o_l.push_back(attend(t.slice_rows(qh, 0, T), m_l));
        o_a.push_back(attend(t.slice_rows(qh, T, T), m_a));
        o_v.push_back(attend(t.slice_rows(qh, 2 * T, T), m_v));
    }

    auto join = [&](std::vector<ad::Var>& xs) {
        return heads == 1 ? xs[0] : t.concat_cols(xs);
    };
    McaViewsV out;
    out.tri = join(o_tri);
    out.la = join(o_la);
    out.lv = join(o_lv);
    out.av = join(o_av);
    out.l = join(o_l);
    out.a = join(o_a);
    out.v = join(o_v);
    out.tri_logits = heads == 1 ? logits_all[0] : t.concat_rows(logits_all);
    return out;
}

ad::Var mca_forward_v(ad::Tape& t, ad::Var H_m, int t_l, const McaV& p, int heads,
                      ad::Var* tri_logits, double p_attn, const DropCtx* drop) {
    const int T = t_l;
    McaViewsV v = mca_views_v(t, H_m, t_l, p.att, heads, p_attn, drop);
    if (tri_logits) *tri_logits = v.tri_logits;

    ad::Var p_tri = linear_v(t, v.tri, p.proj_tri);
    ad::Var p_la = linear_v(t, v.la, p.proj_la);
    ad::Var p_lv = linear_v(t, v.lv, p.proj_lv);
    ad::Var p_av = linear_v(t, v.av, p.proj_av);
    ad::Var p_l = linear_v(t, v.l, p.proj_l);
    ad::Var p_a = linear_v(t, v.a, p.proj_a);
    ad::Var p_v = linear_v(t, v.v, p.proj_v);

    // per-modality feature stack: all-modality part, the two pairwise parts
    // touching the modality, then its own view
    ad::Var f_l = t.concat_cols({t.slice_rows(p_tri, 0, T), t.slice_rows(p_la, 0, T),
                                 t.slice_rows(p_lv, 0, T), p_l});
    ad::Var f_a = t.concat_cols({t.slice_rows(p_tri, T, T), t.slice_rows(p_la, T, T),
                                 t.slice_rows(p_av, 0, T), p_a});
    ad::Var f_v = t.concat_cols({t.slice_rows(p_tri, 2 * T, T), t.slice_rows(p_lv, T, T),
                                 t.slice_rows(p_av, T, T), p_v});

    ad::Var r_l = linear_v(t, f_l, p.red_l);
    ad::Var r_a = linear_v(t, f_a, p.red_a);
    ad::Var r_v = linear_v(t, f_v, p.red_v);
    return linear_v(t, t.concat_rows({r_l, r_a, r_v}), p.mix);
}

ad::Var mct_forward_v(ad::Tape& t, ad::Var H_m, int t_l,
                      const std::vector<LayerV>& layers, int heads,
                      ad::Var* last_tri_logits, double p_attn, const DropCtx* drop) {
    ad::Var h = H_m;
    ad::Var tri; // stays invalid when no layers run
    for (const LayerV& L : layers) {
        ad::Var hn = layer_norm_v(t, h, L.ln1);
        ad::Var mca = mca_forward_v(t, hn, t_l, L.mca, heads, &tri, p_attn, drop);
        ad::Var h_hat = t.add(mca, hn);
        ad::Var hn2 = layer_norm_v(t, h_hat, L.ln2);
        ad::Var ffn = linear_v(t, t.relu(linear_v(t, hn2, L.ffn1)), L.ffn2);
        h = t.add(ffn, hn2);
    }
    if (last_tri_logits) *last_tri_logits = tri;
    return h;
}

// ---- standalone forms ----

Mat wsam_align(const Mat& X_l, const Mat& X_x, const Mat& add_mask, const AttnP& p) {
    if (X_l.cols() != p.Wq.rows() || X_x.cols() != p.Wk.rows())
        throw std::invalid_argument("wsam_align: feature width does not match weights");
    if (add_mask.rows() != X_l.rows() || add_mask.cols() != X_x.rows())
        throw std::invalid_argument("wsam_align: mask must be T_l x T_x");
    ad::Tape t;
    Bound b;
    ad::Var out = wsam_align_v(t, t.constant(X_l), t.constant(X_x), &add_mask,
                               bind_v(t, b, p));
    return t.val(out);
}

Mat gru_encode(const Mat& X, const GruP& p) {
    if (X.cols() != p.Wi.rows())
        throw std::invalid_argument("gru_encode: input width does not match weights");
    const int d = static_cast<int>(p.Wh.rows());
    ad::Tape t;
    Bound b;
    ad::Var out = gru_encode_v(t, t.constant(X), bind_v(t, b, p), d);
    return t.val(out);
}

McaViews mca_views(const Mat& H_m, int t_l, const AttnP& att, int heads) {
    ad::Tape t;
    Bound b;
    McaViewsV v = mca_views_v(t, t.constant(H_m), t_l, bind_v(t, b, att), heads);
    return {t.val(v.tri), t.val(v.la), t.val(v.lv), t.val(v.av),
            t.val(v.l),   t.val(v.a),  t.val(v.v)};
}

Mat mca_forward(const Mat& H_m, int t_l, const McaP& p, int heads) {
    ad::Tape t;
    Bound b;
    ad::Var out = mca_forward_v(t, t.constant(H_m), t_l, bind_v(t, b, p), heads);
    return t.val(out);
}

MctOut mct_forward(const Mat& H_m, int t_l, const std::vector<LayerP>& layers, int heads) {
    ad::Tape t;
    Bound b;
    std::vector<LayerV> lv;
    lv.reserve(layers.size());
    for (const LayerP& L : layers) lv.push_back(bind_v(t, b, L));
    ad::Var tri;
    ad::Var out = mct_forward_v(t, t.constant(H_m), t_l, lv, heads, &tri);
    MctOut res;
    res.H = t.val(out);
    if (tri.ok()) res.attn = t.val(tri);
    return res;
}

Mat na_pool(const Mat& H, const Mat& score) {
    if (score.rows() != H.cols() || score.cols() != 1)
        throw std::invalid_argument("na_pool: score must be a d x 1 vector");
    ad::Tape t;
    ad::Var out = na_pool_v(t, t.constant(H), t.constant(score));
    return t.val(out);
}

Mat fuse_joint(const Mat& G_l, const Mat& G_a, const Mat& G_v, const JointP& p) {
    ad::Tape t;
    Bound b;
    ad::Var cat = t.concat_cols(
        {t.constant(G_l), t.constant(G_a), t.constant(G_v)});
    ad::Var out = linear_v(t, t.relu(linear_v(t, cat, bind_v(t, b, p.j1))),
                           bind_v(t, b, p.j2));
    return t.val(out);
}

ReconOut reconstruct(const Mat& H_l, const Mat& H_a, const Mat& H_v, int t_a, int t_v,
                     const ReconP& p) {
    ad::Tape t;
    Bound b;
    ad::Var rl = linear_v(t, t.constant(H_l), bind_v(t, b, p.text));
    ad::Var a_up = t.gather_rows(t.constant(H_a), resample_rows(static_cast<int>(H_a.rows()), t_a));
    ad::Var ra = linear_v(t, t.relu(linear_v(t, a_up, bind_v(t, b, p.a1))),
                          bind_v(t, b, p.a2));
    ad::Var v_up = t.gather_rows(t.constant(H_v), resample_rows(static_cast<int>(H_v.rows()), t_v));
    ad::Var rv = linear_v(t, t.relu(linear_v(t, v_up, bind_v(t, b, p.v1))),
                          bind_v(t, b, p.v2));
    return {t.val(rl), t.val(ra), t.val(rv)};
}

namespace {

std::vector<ad::Var> mcm_encode_v(ad::Tape& t, Bound& b, const ClassPriorTable& table,
                                  const McmP& p) {
    Mlp3V el = bind_v(t, b, p.enc_l);
    Mlp3V ea = bind_v(t, b, p.enc_a);
    Mlp3V ev = bind_v(t, b, p.enc_v);
    const int cls = static_cast<int>(table.priors.size());
    std::vector<ad::Var> enc;
    enc.reserve(cls);
    for (int i = 0; i < cls; ++i) {
        ad::Var li = mlp3_v(t, t.constant(table.mean_l.row(i)), el);
        ad::Var ai = mlp3_v(t, t.constant(table.mean_a.row(i)), ea);
        ad::Var vi = mlp3_v(t, t.constant(table.mean_v.row(i)), ev);
        enc.push_back(t.concat_cols({li, ai, vi}));
    }
    return enc;
}

ad::Var mcm_combine_v(ad::Tape& t, Bound& b, ad::Var h_m,
                      const std::vector<ad::Var>& enc, const std::vector<double>& priors,
                      const McmP& p, std::vector<ad::Var>* branches) {
    if (enc.size() != priors.size() || enc.size() != p.heads.size())
        throw std::invalid_argument("mcm: class count mismatch between table and heads");
    if (enc.empty()) throw std::invalid_argument("mcm: no class branches");
    ad::Var out;
    for (size_t i = 0; i < enc.size(); ++i) {
        ad::Var hi = t.concat_cols({h_m, enc[i]});
        ad::Var zi = linear_v(t, hi, bind_v(t, b, p.heads[i]));
        if (branches) branches->push_back(zi);
        ad::Var wi = t.scale(zi, priors[i]);
        out = (i == 0) ? wi : t.add(out, wi);
    }
    return out;
}

} // namespace

Mat mcm_forward(const Mat& h_m, const ClassPriorTable& table, const McmP& p) {
    return mcm_forward_parts(h_m, table, p, nullptr);
}

Mat mcm_forward_parts(const Mat& h_m, const ClassPriorTable& table, const McmP& p,
                      std::vector<Mat>* branch_logits) {
    ad::Tape t;
    Bound b;
    std::vector<ad::Var> enc = mcm_encode_v(t, b, table, p);
    std::vector<ad::Var> branches;
    ad::Var out = mcm_combine_v(t, b, t.constant(h_m), enc, table.priors, p,
                                branch_logits ? &branches : nullptr);
    if (branch_logits)
        for (ad::Var v : branches) branch_logits->push_back(t.val(v));
    return t.val(out);
}

// ---- assembled model ----

CiderModel::CiderModel(const ModelConfig& cfg, int vocab, int d_a, int d_v, int cls)
    : cfg_(cfg), vocab_(std::max(vocab, kFirstWordId)), d_a_(d_a), d_v_(d_v), cls_(cls) {
    cfg_.validate();
    if (d_a <= 0 || d_v <= 0) throw std::invalid_argument("model: feature dims must be positive");
    if (cls < 2) throw std::invalid_argument("model: need at least two classes");
    if (cfg_.d % cfg_.n_heads != 0)
        throw std::invalid_argument("model: heads must divide the model width");

    const int d = cfg_.d;
    const int dl = cfg_.d_l;
    const int k = cfg_.conv_kernel;
    auto lin = [](int in, int out) {
        return LinearP{Mat::Zero(in, out), Mat::Zero(1, out)};
    };
    auto attn = [&](int dim) { return AttnP{Mat::Zero(dim, dim), Mat::Zero(dim, dim), Mat::Zero(dim, dim)}; };
    auto gru = [&](int in) {
        return GruP{Mat::Zero(in, 3 * d), Mat::Zero(d, 3 * d), Mat::Zero(1, 3 * d),
                    Mat::Zero(1, 3 * d)};
    };
    auto ln = [&]() { return LnP{Mat::Zero(1, d), Mat::Zero(1, d)}; };
    auto mlp3 = [&](int in) { return Mlp3P{lin(in, d), lin(d, d), lin(d, d)}; };

    params_.embed = Mat::Zero(vocab_, dl);
    params_.conv_l = lin(k * dl, d);
    params_.conv_a = lin(k * d_a_, d);
    params_.conv_v = lin(k * d_v_, d);
    params_.wsam_a = attn(d);
    params_.wsam_v = attn(d);
    params_.gru_l = gru(d);
    params_.gru_a = gru(d);
    params_.gru_v = gru(d);
    params_.layers.resize(cfg_.n_layers);
    for (LayerP& L : params_.layers) {
        L.ln1 = ln();
        L.mca.att = attn(d);
        L.mca.proj_tri = lin(d, d);
        L.mca.proj_la = lin(d, d);
        L.mca.proj_lv = lin(d, d);
        L.mca.proj_av = lin(d, d);
        L.mca.proj_l = lin(d, d);
        L.mca.proj_a = lin(d, d);
        L.mca.proj_v = lin(d, d);
        L.mca.red_l = lin(4 * d, d);
        L.mca.red_a = lin(4 * d, d);
        L.mca.red_v = lin(4 * d, d);
        L.mca.mix = lin(d, d);
        L.ln2 = ln();
        L.ffn1 = lin(d, 4 * d);
        L.ffn2 = lin(4 * d, d);
    }
    params_.joint.score_l = Mat::Zero(d, 1);
    params_.joint.score_a = Mat::Zero(d, 1);
    params_.joint.score_v = Mat::Zero(d, 1);
    params_.joint.j1 = lin(3 * d, 3 * d);
    params_.joint.j2 = lin(3 * d, 3 * d);
    params_.head = lin(3 * d, cls_);
    params_.recon.text = lin(d, dl);
    params_.recon.a1 = lin(d, d);
    params_.recon.a2 = lin(d, d_a_);
    params_.recon.v1 = lin(d, d);
    params_.recon.v2 = lin(d, d_v_);
    params_.mcm.enc_l = mlp3(dl);
    params_.mcm.enc_a = mlp3(d_a_);
    params_.mcm.enc_v = mlp3(d_v_);
    params_.mcm.heads.assign(cls_, lin(6 * d, cls_));
}

void CiderModel::init_params(uint64_t seed) {
    Rng rng(seed);
    params_.visit([&](const std::string& name, Mat& m) {
        const bool is_ln_gain = name.ends_with("ln1.g") || name.ends_with("ln2.g");
        const bool is_bias = name.ends_with(".b") || name.ends_with(".bi") ||
                             name.ends_with(".bh");
        if (name == "embed") {
            fill_uniform(m, -0.1, 0.1, rng);
        } else if (is_ln_gain) {
            m.setOnes();
        } else if (is_bias) {
            m.setZero();
        } else {
            const double a = 1.0 / std::sqrt(static_cast<double>(m.rows()));
            fill_uniform(m, -a, a, rng);
        }
    });
}

CiderModel::McmCtx CiderModel::mcm_encode(ad::Tape& t, Bound& b,
                                          const ClassPriorTable& table) const {
    McmCtx ctx;
    ctx.enc = mcm_encode_v(t, b, table, params_.mcm);
    ctx.priors = table.priors;
    return ctx;
}

CiderModel::Pass CiderModel::forward(ad::Tape& t, Bound& b, const Sample& s,
                                     const McmCtx* mcm_ctx, bool train_mode,
                                     Rng* dropout) const {
    const int T = static_cast<int>(s.tokens.size());
    if (T == 0) throw std::invalid_argument("forward: empty token sequence");
    if (s.audio.rows() == 0 || s.vision.rows() == 0)
        throw std::invalid_argument("forward: audio/vision need at least one frame");
    if (s.audio.cols() != d_a_ || s.vision.cols() != d_v_)
        throw std::invalid_argument("forward: feature width does not match the model");
    for (int tok : s.tokens)
        if (tok < 0 || tok >= vocab_)
            throw std::invalid_argument("forward: token id outside the embedding table");

    const int d = cfg_.d;
    DropCtx dc{dropout, train_mode && dropout != nullptr};

    Pass out;
    ad::Var emb = bind_leaf(t, b, params_.embed);
    ad::Var x_l = t.gather_rows(emb, s.tokens);
    x_l = dropout_v(t, x_l, cfg_.dropout_embed, &dc);
    out.x_l = x_l;

    ad::Var X_l = conv_rows_v(t, x_l, bind_v(t, b, params_.conv_l), cfg_.conv_kernel);
    ad::Var A0 = conv_rows_v(t, t.constant(s.audio), bind_v(t, b, params_.conv_a),
                             cfg_.conv_kernel);
    ad::Var V0 = conv_rows_v(t, t.constant(s.vision), bind_v(t, b, params_.conv_v),
                             cfg_.conv_kernel);

    ad::Var Xa, Xv;
    if (cfg_.use_wsam) {
        Xa = wsam_align_v(t, X_l, A0, nullptr, bind_v(t, b, params_.wsam_a));
        Xv = wsam_align_v(t, X_l, V0, nullptr, bind_v(t, b, params_.wsam_v));
    } else {
        Xa = t.gather_rows(A0, resample_rows(static_cast<int>(s.audio.rows()), T));
        Xv = t.gather_rows(V0, resample_rows(static_cast<int>(s.vision.rows()), T));
    }

    ad::Var H_l = gru_encode_v(t, X_l, bind_v(t, b, params_.gru_l), d);
    ad::Var H_a = gru_encode_v(t, Xa, bind_v(t, b, params_.gru_a), d);
    ad::Var H_v = gru_encode_v(t, Xv, bind_v(t, b, params_.gru_v), d);
    ad::Var H_m = t.concat_rows({H_l, H_a, H_v});

    std::vector<LayerV> layers;
    layers.reserve(params_.layers.size());
    for (const LayerP& L : params_.layers) layers.push_back(bind_v(t, b, L));
    ad::Var tri;
    ad::Var H = mct_forward_v(t, H_m, T, layers, cfg_.n_heads, &tri, cfg_.dropout_attn, &dc);
    out.tri_attn = tri;
    out.h_l = t.slice_rows(H, 0, T);
    out.h_a = t.slice_rows(H, T, T);
    out.h_v = t.slice_rows(H, 2 * T, T);

    ad::Var G_l = na_pool_v(t, out.h_l, bind_leaf(t, b, params_.joint.score_l));
    ad::Var G_a = na_pool_v(t, out.h_a, bind_leaf(t, b, params_.joint.score_a));
    ad::Var G_v = na_pool_v(t, out.h_v, bind_leaf(t, b, params_.joint.score_v));
    ad::Var cat = t.concat_cols({G_l, G_a, G_v});
    ad::Var hj = linear_v(t, t.relu(linear_v(t, cat, bind_v(t, b, params_.joint.j1))),
                          bind_v(t, b, params_.joint.j2));
    hj = dropout_v(t, hj, cfg_.dropout_out, &dc);
    out.h_joint = hj;

    if (cfg_.use_mcm && mcm_ctx) {
        out.logits = mcm_combine_v(t, b, hj, mcm_ctx->enc, mcm_ctx->priors, params_.mcm,
                                   nullptr);
    } else {
        out.logits = linear_v(t, hj, bind_v(t, b, params_.head));
    }
    return out;
}

CiderModel::ReconVars CiderModel::reconstruct(ad::Tape& t, Bound& b, const Pass& pass,
                                              int t_a, int t_v) const {
    const int t_l = static_cast<int>(t.val(pass.h_l).rows());
    ReconVars out;
    out.l = linear_v(t, pass.h_l, bind_v(t, b, params_.recon.text));
    ad::Var a_up = t.gather_rows(pass.h_a, resample_rows(t_l, t_a));
    out.a = linear_v(t, t.relu(linear_v(t, a_up, bind_v(t, b, params_.recon.a1))),
                     bind_v(t, b, params_.recon.a2));
    ad::Var v_up = t.gather_rows(pass.h_v, resample_rows(t_l, t_v));
    out.v = linear_v(t, t.relu(linear_v(t, v_up, bind_v(t, b, params_.recon.v1))),
                     bind_v(t, b, params_.recon.v2));
    return out;
}

} // namespace cider
