#pragma once

#include "cider/causal.hpp"
#include "cider/data.hpp"
#include "cider/masking.hpp"
#include "cider/model.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace cider {

// ---- distillation / reconstruction losses on plain values ----

// sum of the three elementwise Huber terms (delta 1, mean reduction each)
double loss_recon(const Mat& pred_l, const Mat& pred_a, const Mat& pred_v,
                  const Mat& tgt_l, const Mat& tgt_a, const Mat& tgt_v);
// row-averaged KL from the incomplete-input attention to the complete-input
// attention, both given as pre-softmax logits
double loss_attn(const Mat& student_logits, const Mat& teacher_logits);
// 1 - cosine similarity between joint representations
double loss_joint(const Mat& h_incomplete, const Mat& h_complete);

struct LossWeights {
    double alpha = 1.0, beta = 1.0, gamma = 1.0;
};

// fixed association order, so the reported total decomposes bit-for-bit
double combine_losses(double ce, double recon, double attn, double joint,
                      const LossWeights& w);

// ---- optimizer ----

class Adam {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8);

    // reads gradients for every parameter bound on the tape and applies one
    // update; state is allocated lazily on first use
    void step(ModelParams& params, Bound& bound, ad::Tape& tape);

    double lr() const { return lr_; }
    int steps() const { return t_; }
    void set_steps(int t) { t_ = t; }
    std::vector<Mat>& m_state() { return m_; }
    std::vector<Mat>& v_state() { return v_; }

private:
    double lr_, b1_, b2_, eps_;
    int t_ = 0;
    std::vector<Mat> m_, v_; // parameter visit order
};

// ---- the two-pass batch update ----

struct StepReport {
    double ce_complete = 0.0;   // stage-1 objective
    double ce_incomplete = 0.0; // stage-2 classification component
    double l_recon = 0.0;
    double l_attn = 0.0;
    double l_joint = 0.0;
    double total = 0.0; // combine_losses(ce_incomplete, ...)
    double rate = 0.0;  // corruption rate drawn for stage 2
};

// Stage 1: complete inputs, cross-entropy, update. Stage 2: the same batch
// re-corrupted at a fresh uniform rate, classification plus the three
// consistency losses against stage-1 teachers, second update.
StepReport two_stage_step(CiderModel& model, Adam& opt, const Dataset& ds,
                          const std::vector<int>& batch, const ClassPriorTable& table,
                          Rng& rng);

// mean complete-input cross-entropy over the given samples (no updates)
double eval_ce(const CiderModel& model, const Dataset& ds, const std::vector<int>& idx,
               const ClassPriorTable& table);

// ---- training loop ----

struct EpochLog {
    int epoch = 0;
    double train_total = 0.0;
    double train_ce_complete = 0.0;
    double train_ce_incomplete = 0.0;
    double train_recon = 0.0;
    double train_attn = 0.0;
    double train_joint = 0.0;
    double val_ce = 0.0;
    bool improved = false;
};

struct TrainResult {
    int epochs_run = 0;
    int best_epoch = 0;
    double best_val_ce = 0.0;
    ClassPriorTable table; // rebuilt under the restored best parameters
    std::vector<EpochLog> log;
};

// shuffled mini-batches, early stopping on complete-input validation
// cross-entropy, best parameters restored on return
TrainResult train_model(CiderModel& model, Adam& opt, const Dataset& ds,
                        std::ostream* log = nullptr);

// ---- checkpointing ----

void save_checkpoint(const std::string& path, const CiderModel& model,
                     const ClassPriorTable& table, const CounterfactualVocab& cf_vocab,
                     const Adam* opt = nullptr, int epoch = 0);

struct LoadedModel {
    CiderModel model;
    ClassPriorTable table;
    CounterfactualVocab cf_vocab;
    int epoch = 0;
    bool has_adam = false;
    int adam_t = 0;
    std::vector<Mat> adam_m, adam_v;
};

LoadedModel load_checkpoint(const std::string& path);

} // namespace cider
