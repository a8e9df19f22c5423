#pragma once

#include "cider/causal.hpp"
#include "cider/masking.hpp"
#include "cider/model.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace cider {

// Binary sentiment band of a class index: identity for binary heads; for wider
// heads the lower half of the score scale (indices below cls/2) is negative.
int binary_band(int cls_index, int cls);

struct MetricReport {
    double acc2 = 0.0; // percent agreement after binary banding
    double f1 = 0.0;   // percent, support-weighted F1 over the two bands
    double acc7 = 0.0; // percent exact class agreement
    long n = 0;
    long tp = 0, fp = 0, fn = 0, tn = 0; // band confusion, positive = non-negative
};

MetricReport metrics(const std::vector<int>& predictions, const std::vector<int>& labels,
                     int cls);

// A metric traced over missing rates. For auilc the rates must be strictly
// increasing and span [0, 1].
struct EvalCurve {
    std::vector<double> rates;
    std::vector<double> values; // percent
};

// trapezoidal area under the curve, i.e. sum of 0.5*(v_i+v_{i+1})*(p_{i+1}-p_i)
double auilc(const EvalCurve& curve);

// Scores one sample. The class table drives the backdoor-adjusted classifier
// when the model uses it (pass a test-mode table for evaluation); when a
// counterfactual vocabulary is supplied and the model was configured for
// debiasing, a masked-text pass is subtracted at strength tau.
Mat predict_logits(const CiderModel& model, const Sample& s, const ClassPriorTable& table,
                   const CounterfactualVocab* cf_vocab);

MetricReport eval_complete(const CiderModel& model, const Dataset& ds, Split split,
                           const ClassPriorTable& table,
                           const CounterfactualVocab* cf_vocab);

struct RobustnessSpec {
    Scenario scenario = Scenario::RMFM;
    std::vector<double> rates; // strictly increasing, each in [0, 1]
    ModalityPick smm_keep;     // SMM only
    Split split = Split::Test;
    std::uint64_t mask_seed = 0;
    int mask_repeats = 1; // independent corruption draws pooled per rate
};

struct RatePoint {
    double rate = 0.0;
    MetricReport report;
};

// One-to-all protocol: a single trained model evaluated at every rate. Each
// (rate, sample, repeat) gets its own corruption seed derived from mask_seed,
// so curves are reproducible and samples are corrupted independently.
struct RobustnessResult {
    Scenario scenario = Scenario::RMFM;
    std::vector<RatePoint> points;
    EvalCurve acc2, f1, acc7;
};

RobustnessResult run_robustness_eval(const CiderModel& model, const Dataset& ds,
                                     const ClassPriorTable& table,
                                     const CounterfactualVocab* cf_vocab,
                                     const RobustnessSpec& spec);

// CSV persistence: header `scenario,rate,acc2,f1,acc7`, one row per rate,
// full double precision so a later load reproduces the curves exactly.
void save_robustness_csv(const RobustnessResult& result, const std::string& path);

struct NamedCurves {
    std::string scenario;
    EvalCurve acc2, f1, acc7;
};

// groups consecutive rows by scenario, preserving file order
std::vector<NamedCurves> load_robustness_csv(const std::string& path);

} // namespace cider
