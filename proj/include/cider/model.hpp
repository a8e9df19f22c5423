#pragma once

#include "cider/causal.hpp"
#include "cider/data.hpp"
#include "cider/mat.hpp"
#include "cider/rng.hpp"
#include "cider/tape.hpp"

#include <string>
#include <unordered_map>
#include <vector>

namespace cider {

struct LinearP {
    Mat W; // in x out
    Mat b; // 1 x out
};

struct AttnP {
    Mat Wq, Wk, Wv; // d x d
};

// packed gate order (r, z, n), matching the common stacked-GRU convention
struct GruP {
    Mat Wi; // d_in x 3d
    Mat Wh; // d x 3d
    Mat bi; // 1 x 3d
    Mat bh; // 1 x 3d
};

struct LnP {
    Mat g, b; // 1 x d
};

struct Mlp3P {
    LinearP f1, f2, f3; // linear-relu-linear-relu-linear
};

// one cross-modal attention block: shared Q/K/V, seven masked views,
// per-view projections, per-modality 4d->d reducers, final d->d mixer
struct McaP {
    AttnP att;
    LinearP proj_tri, proj_la, proj_lv, proj_av, proj_l, proj_a, proj_v;
    LinearP red_l, red_a, red_v;
    LinearP mix;
};

struct LayerP {
    LnP ln1;
    McaP mca;
    LnP ln2;
    LinearP ffn1, ffn2; // d -> 4d -> d
};

struct JointP {
    Mat score_l, score_a, score_v; // d x 1 attention scorers for pooling
    LinearP j1, j2;                // 3d -> 3d, twice (relu between)
};

struct ReconP {
    LinearP text;   // d -> d_l
    LinearP a1, a2; // d -> d -> d_a
    LinearP v1, v2; // d -> d -> d_v
};

struct McmP {
    Mlp3P enc_l, enc_a, enc_v;    // class-mean encoders, d_x -> d
    std::vector<LinearP> heads;   // per class: 6d -> cls
};

struct ModelParams {
    Mat embed; // vocab x d_l
    LinearP conv_l, conv_a, conv_v;
    AttnP wsam_a, wsam_v;
    GruP gru_l, gru_a, gru_v;
    std::vector<LayerP> layers;
    JointP joint;
    LinearP head; // 3d -> cls, used when the mechanism head is off
    ReconP recon;
    McmP mcm;

    // Enumerates every tensor with a stable dotted name. Drives init,
    // the optimizer, checkpointing, and finite-difference probes.
    template <class F> void visit(F&& fn) {
        fn("embed", embed);
        visit_linear(fn, "conv_l", conv_l);
        visit_linear(fn, "conv_a", conv_a);
        visit_linear(fn, "conv_v", conv_v);
        visit_attn(fn, "wsam_a", wsam_a);
        visit_attn(fn, "wsam_v", wsam_v);
        visit_gru(fn, "gru_l", gru_l);
        visit_gru(fn, "gru_a", gru_a);
        visit_gru(fn, "gru_v", gru_v);
        for (size_t i = 0; i < layers.size(); ++i) {
            const std::string p = "layers." + std::to_string(i) + ".";
            LayerP& L = layers[i];
            fn(p + "ln1.g", L.ln1.g);
            fn(p + "ln1.b", L.ln1.b);
            visit_attn(fn, p + "mca.att", L.mca.att);
            visit_linear(fn, p + "mca.proj_tri", L.mca.proj_tri);
            visit_linear(fn, p + "mca.proj_la", L.mca.proj_la);
            visit_linear(fn, p + "mca.proj_lv", L.mca.proj_lv);
            visit_linear(fn, p + "mca.proj_av", L.mca.proj_av);
            visit_linear(fn, p + "mca.proj_l", L.mca.proj_l);
            visit_linear(fn, p + "mca.proj_a", L.mca.proj_a);
            visit_linear(fn, p + "mca.proj_v", L.mca.proj_v);
            visit_linear(fn, p + "mca.red_l", L.mca.red_l);
            visit_linear(fn, p + "mca.red_a", L.mca.red_a);
            visit_linear(fn, p + "mca.red_v", L.mca.red_v);
            visit_linear(fn, p + "mca.mix", L.mca.mix);
            fn(p + "ln2.g", L.ln2.g);
            fn(p + "ln2.b", L.ln2.b);
            visit_linear(fn, p + "ffn1", L.ffn1);
            visit_linear(fn, p + "ffn2", L.ffn2);
        }
        fn("joint.score_l", joint.score_l);
        fn("joint.score_a", joint.score_a);
        fn("joint.score_v", joint.score_v);
        visit_linear(fn, "joint.j1", joint.j1);
        visit_linear(fn, "joint.j2", joint.j2);
        visit_linear(fn, "head", head);
        visit_linear(fn, "recon.text", recon.text);
        visit_linear(fn, "recon.a1", recon.a1);
        visit_linear(fn, "recon.a2", recon.a2);
        visit_linear(fn, "recon.v1", recon.v1);
        visit_linear(fn, "recon.v2", recon.v2);
        visit_mlp3(fn, "mcm.enc_l", mcm.enc_l);
        visit_mlp3(fn, "mcm.enc_a", mcm.enc_a);
        visit_mlp3(fn, "mcm.enc_v", mcm.enc_v);
        for (size_t i = 0; i < mcm.heads.size(); ++i)
            visit_linear(fn, "mcm.heads." + std::to_string(i), mcm.heads[i]);
    }

    template <class F> void visit(F&& fn) const {
        const_cast<ModelParams*>(this)->visit(
            [&](const std::string& n, Mat& m) { fn(n, static_cast<const Mat&>(m)); });
    }

private:
    template <class F> static void visit_linear(F& fn, const std::string& p, LinearP& l) {
        fn(p + ".W", l.W);
        fn(p + ".b", l.b);
    }
    template <class F> static void visit_attn(F& fn, const std::string& p, AttnP& a) {
        fn(p + ".Wq", a.Wq);
        fn(p + ".Wk", a.Wk);
        fn(p + ".Wv", a.Wv);
    }
    template <class F> static void visit_gru(F& fn, const std::string& p, GruP& g) {
        fn(p + ".Wi", g.Wi);
        fn(p + ".Wh", g.Wh);
        fn(p + ".bi", g.bi);
        fn(p + ".bh", g.bh);
    }
    template <class F> static void visit_mlp3(F& fn, const std::string& p, Mlp3P& m) {
        visit_linear(fn, p + ".f1", m.f1);
        visit_linear(fn, p + ".f2", m.f2);
        visit_linear(fn, p + ".f3", m.f3);
    }
};

// Additive attention masks (0 admitted, large negative blocked) over the
// stacked 3T x 3T cross-modal grid, one per directional view.
struct CompositeMasks {
    Mat bi_la, bi_lv, bi_av; // admit the named pair's row/column blocks
    Mat uni_l, uni_a, uni_v; // admit one diagonal block
};

CompositeMasks build_composite_masks(int t_l);

// nearest-neighbor row resampling indices (endpoints pinned)
std::vector<int> resample_rows(int from, int to);

// ---- graph-level builders ----
//
// Parameter handles live on a tape; bind_* turns a parameter struct into
// leaves exactly once per tape (memoized through Bound), so gradients land
// on one node per tensor no matter how many samples share the tape.

struct Bound {
    std::unordered_map<const Mat*, ad::Var> leaves;
};
ad::Var bind_leaf(ad::Tape& t, Bound& b, const Mat& m);

struct LinearV { ad::Var W, b; };
struct AttnV { ad::Var Wq, Wk, Wv; };
struct GruV { ad::Var Wi, Wh, bi, bh; };
struct LnV { ad::Var g, b; };
struct Mlp3V { LinearV f1, f2, f3; };
struct McaV {
    AttnV att;
    LinearV proj_tri, proj_la, proj_lv, proj_av, proj_l, proj_a, proj_v;
    LinearV red_l, red_a, red_v;
    LinearV mix;
};
struct LayerV { LnV ln1; McaV mca; LnV ln2; LinearV ffn1, ffn2; };

LinearV bind_v(ad::Tape& t, Bound& b, const LinearP& p);
AttnV bind_v(ad::Tape& t, Bound& b, const AttnP& p);
GruV bind_v(ad::Tape& t, Bound& b, const GruP& p);
LnV bind_v(ad::Tape& t, Bound& b, const LnP& p);
Mlp3V bind_v(ad::Tape& t, Bound& b, const Mlp3P& p);
McaV bind_v(ad::Tape& t, Bound& b, const McaP& p);
LayerV bind_v(ad::Tape& t, Bound& b, const LayerP& p);

// optional dropout wiring; a null pointer (or zero rate) is a no-op
struct DropCtx {
    Rng* rng = nullptr;
    bool active = false;
};
ad::Var dropout_v(ad::Tape& t, ad::Var x, double p, const DropCtx* drop);

ad::Var linear_v(ad::Tape& t, ad::Var x, const LinearV& p);
ad::Var mlp3_v(ad::Tape& t, ad::Var x, const Mlp3V& p);
// 1d conv over rows with symmetric zero padding; odd kernel. W stacks the
// per-tap blocks: (kernel*d_in) x d_out.
ad::Var conv_rows_v(ad::Tape& t, ad::Var x, const LinearV& p, int kernel);
ad::Var layer_norm_v(ad::Tape& t, ad::Var x, const LnV& p, double eps = 1e-5);
// queries from X_l, keys/values from X_x; add_mask (T_l x T_x) may be null
ad::Var wsam_align_v(ad::Tape& t, ad::Var X_l, ad::Var X_x, const Mat* add_mask,
                     const AttnV& p);
ad::Var gru_encode_v(ad::Tape& t, ad::Var X, const GruV& p, int d);
ad::Var na_pool_v(ad::Tape& t, ad::Var H, ad::Var score);

struct McaViewsV {
    ad::Var tri;        // 3T x d
    ad::Var la, lv, av; // 2T x d
    ad::Var l, a, v;    // T x d
    ad::Var tri_logits; // (heads*3T) x 3T, pre-softmax
};
McaViewsV mca_views_v(ad::Tape& t, ad::Var H_m, int t_l, const AttnV& p, int heads,
                      double p_attn = 0.0, const DropCtx* drop = nullptr);
ad::Var mca_forward_v(ad::Tape& t, ad::Var H_m, int t_l, const McaV& p, int heads,
                      ad::Var* tri_logits = nullptr, double p_attn = 0.0,
                      const DropCtx* drop = nullptr);
ad::Var mct_forward_v(ad::Tape& t, ad::Var H_m, int t_l,
                      const std::vector<LayerV>& layers, int heads,
                      ad::Var* last_tri_logits = nullptr, double p_attn = 0.0,
                      const DropCtx* drop = nullptr);

// ---- standalone ops on plain matrices (each runs a throwaway graph) ----

Mat wsam_align(const Mat& X_l, const Mat& X_x, const Mat& add_mask, const AttnP& p);
Mat gru_encode(const Mat& X, const GruP& p);

struct McaViews {
    Mat tri;
    Mat la, lv, av;
    Mat l, a, v;
};
McaViews mca_views(const Mat& H_m, int t_l, const AttnP& att, int heads = 1);
Mat mca_forward(const Mat& H_m, int t_l, const McaP& p, int heads = 1);

// full pre-norm stack; attn is the last layer's pre-softmax all-modality
// logits (heads stacked row-wise), empty when no layers run
struct MctOut {
    Mat H;
    Mat attn;
};
MctOut mct_forward(const Mat& H_m, int t_l, const std::vector<LayerP>& layers,
                   int heads = 1);

// attention pooling: softmax(H s)^T H -> 1 x d
Mat na_pool(const Mat& H, const Mat& score);

Mat fuse_joint(const Mat& G_l, const Mat& G_a, const Mat& G_v, const JointP& p);

struct ReconOut {
    Mat l; // T_l x d_l
    Mat a; // t_a x d_a
    Mat v; // t_v x d_v
};
ReconOut reconstruct(const Mat& H_l, const Mat& H_a, const Mat& H_v, int t_a, int t_v,
                     const ReconP& p);

// mechanism-conditioned head: one classifier per class branch, combined
// under the table's priors
Mat mcm_forward(const Mat& h_m, const ClassPriorTable& table, const McmP& p);
Mat mcm_forward_parts(const Mat& h_m, const ClassPriorTable& table, const McmP& p,
                      std::vector<Mat>* branch_logits);

// ---- the assembled model ----

class CiderModel {
public:
    CiderModel(const ModelConfig& cfg, int vocab, int d_a, int d_v, int cls);

    const ModelConfig& config() const { return cfg_; }
    ModelParams& params() { return params_; }
    const ModelParams& params() const { return params_; }
    int vocab() const { return vocab_; }
    int d_a() const { return d_a_; }
    int d_v() const { return d_v_; }
    int cls() const { return cls_; }

    void init_params(uint64_t seed);

    // class-branch encodings plus priors, shared by every sample on one tape
    struct McmCtx {
        std::vector<ad::Var> enc; // per class, 1 x 3d
        std::vector<double> priors;
    };
    McmCtx mcm_encode(ad::Tape& t, Bound& b, const ClassPriorTable& table) const;

    struct Pass {
        ad::Var logits;        // 1 x cls
        ad::Var tri_attn;      // last-layer pre-softmax logits (invalid if no layers)
        ad::Var h_joint;       // 1 x 3d
        ad::Var h_l, h_a, h_v; // T_l x d fused per-modality sequences
        ad::Var x_l;           // T_l x d_l embedded text (reconstruction target source)
    };

    Pass forward(ad::Tape& t, Bound& b, const Sample& s, const McmCtx* mcm_ctx,
                 bool train_mode = false, Rng* dropout = nullptr) const;

    struct ReconVars {
        ad::Var l, a, v;
    };
    ReconVars reconstruct(ad::Tape& t, Bound& b, const Pass& pass, int t_a, int t_v) const;

private:
    ModelConfig cfg_;
    int vocab_, d_a_, d_v_, cls_;
    ModelParams params_;
};

} // namespace cider
