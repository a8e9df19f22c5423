#include "cider/train.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace cider {

using nlohmann::json;

double loss_recon(const Mat& pred_l, const Mat& pred_a, const Mat& pred_v,
                  const Mat& tgt_l, const Mat& tgt_a, const Mat& tgt_v) {
    ad::Tape t;
    double out = 0.0;
    out += t.val(t.smooth_l1(t.constant(pred_l), tgt_l))(0, 0);
    out += t.val(t.smooth_l1(t.constant(pred_a), tgt_a))(0, 0);
    out += t.val(t.smooth_l1(t.constant(pred_v), tgt_v))(0, 0);
    return out;
}

double loss_attn(const Mat& student_logits, const Mat& teacher_logits) {
    if (student_logits.rows() != teacher_logits.rows() ||
        student_logits.cols() != teacher_logits.cols())
        throw std::invalid_argument("loss_attn: attention shapes differ");
    ad::Tape t;
    return t.val(t.kl_softmax(t.constant(student_logits), teacher_logits))(0, 0);
}

double loss_joint(const Mat& h_incomplete, const Mat& h_complete) {
    if (h_incomplete.rows() != 1 || h_complete.rows() != 1 ||
        h_incomplete.cols() != h_complete.cols())
        throw std::invalid_argument("loss_joint: expected matching 1 x k rows");
    ad::Tape t;
    return t.val(t.cosine_gap(t.constant(h_incomplete), h_complete))(0, 0);
}

double combine_losses(double ce, double recon, double attn, double joint,
                      const LossWeights& w) {
    return ((ce + w.alpha * recon) + w.beta * attn) + w.gamma * joint;
}

// ---- optimizer ----

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

void Adam::step(ModelParams& params, Bound& bound, ad::Tape& tape) {
    if (m_.empty()) {
        params.visit([&](const std::string&, Mat& m) {
            m_.push_back(Mat::Zero(m.rows(), m.cols()));
            v_.push_back(Mat::Zero(m.rows(), m.cols()));
        });
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, t_);
    const double bc2 = 1.0 - std::pow(b2_, t_);
    size_t i = 0;
    params.visit([&](const std::string& name, Mat& m) {
        if (i >= m_.size()) throw std::logic_error("optimizer state out of sync: " + name);
        auto it = bound.leaves.find(&m);
        if (it != bound.leaves.end()) {
            const Mat g = tape.grad(it->second);
            m_[i] = b1_ * m_[i] + (1.0 - b1_) * g;
            v_[i] = b2_ * v_[i] + (1.0 - b2_) * g.cwiseProduct(g);
            const Mat mhat = m_[i] / bc1;
            const Mat vhat = v_[i] / bc2;
            m.array() -= lr_ * mhat.array() / (vhat.array().sqrt() + eps_);
        }
        ++i;
    });
}

// ---- the two-pass batch update ----

StepReport two_stage_step(CiderModel& model, Adam& opt, const Dataset& ds,
                          const std::vector<int>& batch, const ClassPriorTable& table,
                          Rng& rng) {
    if (batch.empty()) throw std::invalid_argument("two_stage_step: empty batch");
    const ModelConfig& cfg = model.config();
    const int cls = model.cls();
    StepReport rep;

    std::vector<int> labels;
    labels.reserve(batch.size());
    for (int i : batch) {
        if (i < 0 || i >= static_cast<int>(ds.samples.size()))
            throw std::out_of_range("two_stage_step: sample index out of range");
        labels.push_back(label_of(ds.samples[i].score, cls));
    }

    // stage 1: complete inputs; also the source of the distillation targets
    std::vector<Mat> teach_attn(batch.size());
    std::vector<Mat> teach_joint(batch.size());
    {
        ad::Tape t;
        Bound b;
        CiderModel::McmCtx ctx;
        const CiderModel::McmCtx* ctx_p = nullptr;
        if (cfg.use_mcm) {
            ctx = model.mcm_encode(t, b, table);
            ctx_p = &ctx;
        }
        std::vector<ad::Var> rows;
        rows.reserve(batch.size());
        std::vector<CiderModel::Pass> passes;
        passes.reserve(batch.size());
        for (int i : batch) {
            passes.push_back(model.forward(t, b, ds.samples[i], ctx_p, true, &rng));
            rows.push_back(passes.back().logits);
        }
        ad::Var ce = t.cross_entropy(rows.size() == 1 ? rows[0] : t.concat_rows(rows),
                                     labels);
        rep.ce_complete = t.val(ce)(0, 0);
        for (size_t k = 0; k < passes.size(); ++k) {
            if (passes[k].tri_attn.ok()) teach_attn[k] = t.val(passes[k].tri_attn);
            teach_joint[k] = t.val(passes[k].h_joint);
        }
        t.backward(ce);
        opt.step(model.params(), b, t);
    }

    // stage 2: the same batch under fresh random feature corruption
    rep.rate = rng.uniform();
    const bool want_recon = cfg.alpha != 0.0;
    const bool want_attn = cfg.beta != 0.0 && cfg.n_layers > 0;
    const bool want_joint = cfg.gamma != 0.0;
    {
        ad::Tape t;
        Bound b;
        CiderModel::McmCtx ctx;
        const CiderModel::McmCtx* ctx_p = nullptr;
        if (cfg.use_mcm) {
            ctx = model.mcm_encode(t, b, table);
            ctx_p = &ctx;
        }
        std::vector<ad::Var> rows, recon_terms, attn_terms, joint_terms;
        rows.reserve(batch.size());
        for (size_t k = 0; k < batch.size(); ++k) {
            const Sample& orig = ds.samples[batch[k]];
            MissingSpec ms;
            ms.scenario = Scenario::RMFM;
            ms.rate = rep.rate;
            ms.seed = rng.raw();
            Sample cs = apply_masks(orig, gen_masks(ms, lengths_of(orig)));
            CiderModel::Pass pass = model.forward(t, b, cs, ctx_p, true, &rng);
            rows.push_back(pass.logits);
            if (want_recon) {
                CiderModel::ReconVars rv =
                    model.reconstruct(t, b, pass, static_cast<int>(orig.audio.rows()),
                                      static_cast<int>(orig.vision.rows()));
                // targets are the uncorrupted inputs; the text target is the
                // current embedding of the original tokens, held constant
                const Mat tgt_l = embed_text(orig.tokens, model.params().embed);
                ad::Var lr = t.add(t.add(t.smooth_l1(rv.l, tgt_l),
                                         t.smooth_l1(rv.a, orig.audio)),
                                   t.smooth_l1(rv.v, orig.vision));
                recon_terms.push_back(lr);
            }
            if (want_attn && pass.tri_attn.ok() && teach_attn[k].size() > 0)
                attn_terms.push_back(t.kl_softmax(pass.tri_attn, teach_attn[k]));
            if (want_joint)
                joint_terms.push_back(t.cosine_gap(pass.h_joint, teach_joint[k]));
        }
        ad::Var ce = t.cross_entropy(rows.size() == 1 ? rows[0] : t.concat_rows(rows),
                                     labels);
        auto mean_of = [&](const std::vector<ad::Var>& xs) {
            ad::Var out;
            if (!xs.empty()) out = t.mean_all(xs.size() == 1 ? xs[0] : t.concat_rows(xs));
            return out;
        };
        ad::Var lr = mean_of(recon_terms);
        ad::Var la = mean_of(attn_terms);
        ad::Var lj = mean_of(joint_terms);
        // fixed association order, mirrored by combine_losses
        ad::Var total = ce;
        if (lr.ok()) total = t.add(total, t.scale(lr, cfg.alpha));
        if (la.ok()) total = t.add(total, t.scale(la, cfg.beta));
        if (lj.ok()) total = t.add(total, t.scale(lj, cfg.gamma));
        rep.ce_incomplete = t.val(ce)(0, 0);
        rep.l_recon = lr.ok() ? t.val(lr)(0, 0) : 0.0;
        rep.l_attn = la.ok() ? t.val(la)(0, 0) : 0.0;
        rep.l_joint = lj.ok() ? t.val(lj)(0, 0) : 0.0;
        rep.total = t.val(total)(0, 0);
        t.backward(total);
        opt.step(model.params(), b, t);
    }
    return rep;
}

double eval_ce(const CiderModel& model, const Dataset& ds, const std::vector<int>& idx,
               const ClassPriorTable& table) {
    if (idx.empty()) throw std::invalid_argument("eval_ce: no samples");
    const ModelConfig& cfg = model.config();
    const int bs = std::max(1, cfg.batch_size);
    double weighted = 0.0;
    for (size_t off = 0; off < idx.size(); off += bs) {
        const size_t end = std::min(idx.size(), off + bs);
        ad::Tape t;
        Bound b;
        CiderModel::McmCtx ctx;
        const CiderModel::McmCtx* ctx_p = nullptr;
        if (cfg.use_mcm) {
            ctx = model.mcm_encode(t, b, table);
            ctx_p = &ctx;
        }
        std::vector<ad::Var> rows;
        std::vector<int> labels;
        for (size_t k = off; k < end; ++k) {
            const Sample& s = ds.samples[idx[k]];
            rows.push_back(model.forward(t, b, s, ctx_p).logits);
            labels.push_back(label_of(s.score, model.cls()));
        }
        ad::Var ce = t.cross_entropy(rows.size() == 1 ? rows[0] : t.concat_rows(rows),
                                     labels);
        weighted += t.val(ce)(0, 0) * static_cast<double>(end - off);
    }
    return weighted / static_cast<double>(idx.size());
}

TrainResult train_model(CiderModel& model, Adam& opt, const Dataset& ds,
                        std::ostream* log) {
    const ModelConfig& cfg = model.config();
    if (ds.cls != model.cls())
        throw std::invalid_argument("train: dataset and model class counts differ");
    std::vector<int> train_idx = ds.split_indices(Split::Train);
    const std::vector<int> val_idx = ds.split_indices(Split::Valid);
    if (train_idx.empty()) throw std::runtime_error("train: no training samples");

    Rng rng(cfg.seed);
    TrainResult res;
    ModelParams best = model.params();
    double best_val = std::numeric_limits<double>::infinity();
    int best_epoch = 0;
    int stale = 0;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        // class means move with the embedding, so refresh the table per epoch
        ClassPriorTable table =
            build_class_table(ds, model.cls(), model.params().embed, TableMode::Training);
        rng.shuffle(train_idx);

        EpochLog el;
        el.epoch = epoch;
        int nb = 0;
        for (size_t off = 0; off < train_idx.size(); off += cfg.batch_size) {
            const size_t end = std::min(train_idx.size(), off + cfg.batch_size);
            std::vector<int> batch(train_idx.begin() + off, train_idx.begin() + end);
            StepReport r = two_stage_step(model, opt, ds, batch, table, rng);
            el.train_total += r.total;
            el.train_ce_complete += r.ce_complete;
            el.train_ce_incomplete += r.ce_incomplete;
            el.train_recon += r.l_recon;
            el.train_attn += r.l_attn;
            el.train_joint += r.l_joint;
            ++nb;
        }
        el.train_total /= nb;
        el.train_ce_complete /= nb;
        el.train_ce_incomplete /= nb;
        el.train_recon /= nb;
        el.train_attn /= nb;
        el.train_joint /= nb;

        if (val_idx.empty()) {
            el.val_ce = el.train_ce_complete;
        } else {
            ClassPriorTable vt = build_class_table(ds, model.cls(), model.params().embed,
                                                   TableMode::Training);
            el.val_ce = eval_ce(model, ds, val_idx, vt);
        }

        el.improved = el.val_ce < best_val;
        if (el.improved) {
            best_val = el.val_ce;
            best = model.params();
            best_epoch = epoch;
            stale = 0;
        } else {
            ++stale;
        }
        if (log) {
            *log << "epoch " << epoch << "  total " << el.train_total << "  ce "
                 << el.train_ce_complete << "/" << el.train_ce_incomplete << "  recon "
                 << el.train_recon << "  attn " << el.train_attn << "  joint "
                 << el.train_joint << "  val_ce " << el.val_ce
                 << (el.improved ? "  *" : "") << "\n";
        }
        res.log.push_back(el);
        res.epochs_run = epoch;
        if (stale >= cfg.early_stop_patience) break;
    }

    model.params() = best;
    res.best_epoch = best_epoch;
    res.best_val_ce = best_val;
    res.table =
        build_class_table(ds, model.cls(), model.params().embed, TableMode::Training);
    return res;
}

// ---- checkpointing ----

namespace {

json mat_json(const Mat& m) {
    json data = json::array();
    for (int r = 0; r < m.rows(); ++r)
        for (int c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
    return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

Mat json_mat(const json& j) {
    const int rows = j.at("rows").get<int>();
    const int cols = j.at("cols").get<int>();
    const auto& data = j.at("data");
    if (static_cast<int>(data.size()) != rows * cols)
        throw std::runtime_error("checkpoint: matrix payload size mismatch");
    Mat m(rows, cols);
    int k = 0;
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = data[k++].get<double>();
    return m;
}

json config_json(const ModelConfig& c) {
    return json{{"d", c.d},
                {"d_l", c.d_l},
                {"n_layers", c.n_layers},
                {"n_heads", c.n_heads},
                {"conv_kernel", c.conv_kernel},
                {"dropout_attn", c.dropout_attn},
                {"dropout_embed", c.dropout_embed},
                {"dropout_out", c.dropout_out},
                {"alpha", c.alpha},
                {"beta", c.beta},
                {"gamma", c.gamma},
                {"tau", c.tau},
                {"batch_size", c.batch_size},
                {"epochs", c.epochs},
                {"early_stop_patience", c.early_stop_patience},
                {"learning_rate", c.learning_rate},
                {"seed", c.seed},
                {"use_wsam", c.use_wsam},
                {"use_mcm", c.use_mcm},
                {"use_cf", c.use_cf}};
}

ModelConfig json_config(const json& j) {
    ModelConfig c;
    c.d = j.at("d").get<int>();
    c.d_l = j.at("d_l").get<int>();
    c.n_layers = j.at("n_layers").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.conv_kernel = j.at("conv_kernel").get<int>();
    c.dropout_attn = j.at("dropout_attn").get<double>();
    c.dropout_embed = j.at("dropout_embed").get<double>();
    c.dropout_out = j.at("dropout_out").get<double>();
    c.alpha = j.at("alpha").get<double>();
    c.beta = j.at("beta").get<double>();
    c.gamma = j.at("gamma").get<double>();
    c.tau = j.at("tau").get<double>();
    c.batch_size = j.at("batch_size").get<int>();
    c.epochs = j.at("epochs").get<int>();
    c.early_stop_patience = j.at("early_stop_patience").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.use_wsam = j.at("use_wsam").get<bool>();
    c.use_mcm = j.at("use_mcm").get<bool>();
    c.use_cf = j.at("use_cf").get<bool>();
    return c;
}

json table_json(const ClassPriorTable& t) {
    return json{{"priors", t.priors},
                {"mean_l", mat_json(t.mean_l)},
                {"mean_a", mat_json(t.mean_a)},
                {"mean_v", mat_json(t.mean_v)}};
}

ClassPriorTable json_table(const json& j) {
    ClassPriorTable t;
    t.priors = j.at("priors").get<std::vector<double>>();
    t.mean_l = json_mat(j.at("mean_l"));
    t.mean_a = json_mat(j.at("mean_a"));
    t.mean_v = json_mat(j.at("mean_v"));
    return t;
}

} // namespace

void save_checkpoint(const std::string& path, const CiderModel& model,
                     const ClassPriorTable& table, const CounterfactualVocab& cf_vocab,
                     const Adam* opt, int epoch) {
    json j;
    j["format"] = "cider-checkpoint";
    j["version"] = 1;
    j["config"] = config_json(model.config());
    j["dims"] = json{{"vocab", model.vocab()},
                     {"d_a", model.d_a()},
                     {"d_v", model.d_v()},
                     {"cls", model.cls()}};
    j["epoch"] = epoch;
    json params = json::object();
    model.params().visit(
        [&](const std::string& name, const Mat& m) { params[name] = mat_json(m); });
    j["params"] = std::move(params);
    j["table"] = table_json(table);
    json vocab = json::array();
    for (const CfTokenStat& st : cf_vocab.stats)
        vocab.push_back(json{{"token", st.token},
                             {"total", st.total},
                             {"cv", st.cv},
                             {"retained", st.retained}});
    j["cf_vocab"] = std::move(vocab);
    if (opt) {
        json m = json::array(), v = json::array();
        for (const Mat& x : const_cast<Adam*>(opt)->m_state()) m.push_back(mat_json(x));
        for (const Mat& x : const_cast<Adam*>(opt)->v_state()) v.push_back(mat_json(x));
        j["adam"] = json{{"t", opt->steps()}, {"m", std::move(m)}, {"v", std::move(v)}};
    }

    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << j.dump();
    if (!out) throw std::runtime_error("write failed: " + path);
}

LoadedModel load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw std::runtime_error(path + ": not a valid checkpoint: " + e.what());
    }
    if (j.value("format", "") != "cider-checkpoint")
        throw std::runtime_error(path + ": not a checkpoint file");
    if (j.value("version", 0) != 1)
        throw std::runtime_error(path + ": unsupported checkpoint version");

    const ModelConfig cfg = json_config(j.at("config"));
    const auto& dims = j.at("dims");
    LoadedModel lm{CiderModel(cfg, dims.at("vocab").get<int>(), dims.at("d_a").get<int>(),
                              dims.at("d_v").get<int>(), dims.at("cls").get<int>()),
                   ClassPriorTable{}, CounterfactualVocab{}};
    lm.epoch = j.value("epoch", 0);

    const json& params = j.at("params");
    size_t seen = 0;
    lm.model.params().visit([&](const std::string& name, Mat& m) {
        auto it = params.find(name);
        if (it == params.end())
            throw std::runtime_error(path + ": checkpoint is missing tensor " + name);
        Mat loaded = json_mat(*it);
        if (loaded.rows() != m.rows() || loaded.cols() != m.cols())
            throw std::runtime_error(path + ": tensor " + name + " has the wrong shape");
        m = std::move(loaded);
        ++seen;
    });
    if (seen != params.size())
        throw std::runtime_error(path + ": checkpoint carries unknown tensors");

    lm.table = json_table(j.at("table"));
    for (const json& e : j.at("cf_vocab")) {
        CfTokenStat st;
        st.token = e.at("token").get<int>();
        st.total = e.at("total").get<long>();
        st.cv = e.at("cv").get<double>();
        st.retained = e.at("retained").get<bool>();
        lm.cf_vocab.stats.push_back(st);
        if (st.retained) lm.cf_vocab.retained.insert(st.token);
    }
    if (j.contains("adam")) {
        lm.has_adam = true;
        lm.adam_t = j["adam"].at("t").get<int>();
        for (const json& e : j["adam"].at("m")) lm.adam_m.push_back(json_mat(e));
        for (const json& e : j["adam"].at("v")) lm.adam_v.push_back(json_mat(e));
    }
    return lm;
}

} // namespace cider
