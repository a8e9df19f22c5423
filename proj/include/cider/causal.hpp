#pragma once

#include "cider/data.hpp"
#include "cider/mat.hpp"

#include <unordered_set>
#include <vector>

namespace cider {

// Per-class label priors and per-class mean features (time-averaged, then
// averaged over the class's training samples). Text means are taken through
// the current embedding table, audio/vision straight from the features.
struct ClassPriorTable {
    std::vector<double> priors; // size cls, sums to 1
    Mat mean_l;                 // cls x d_l
    Mat mean_a;                 // cls x d_a
    Mat mean_v;                 // cls x d_v
};

enum class TableMode {
    Training, // priors from training-split label counts
    Test      // labels unknown: uniform priors over the same class means
};

ClassPriorTable build_class_table(const Dataset& ds, int cls, const Mat& embedding,
                                  TableMode mode);

// Counterfactual token filter: a token survives iff it ranks in the top 100 by
// training-split frequency and its per-class count coefficient of variation
// (population sigma / mean) is at least 0.1.
struct CfTokenStat {
    int token = 0;
    long total = 0;   // training-split occurrences
    double cv = 0.0;  // per-class count coefficient of variation
    bool retained = false;
};

struct CounterfactualVocab {
    std::vector<CfTokenStat> stats; // sorted by frequency (desc), token id breaks ties
    std::unordered_set<int> retained;
};

CounterfactualVocab build_counterfactual_vocab(const Dataset& ds, int cls);

// retained tokens kept, everything else replaced by the [MASK] id
std::vector<int> make_counterfactual_text(const std::vector<int>& tokens,
                                          const CounterfactualVocab& vocab);

// y_final = y_do - tau * y_cf, on logits
Mat debias_predict(const Mat& y_do, const Mat& y_cf, double tau);

// argmax with ties broken by the lowest class index
int predict_class(const Mat& logits);

// line-delimited "token_id<TAB>cv<TAB>retained"
void save_cf_vocab(const CounterfactualVocab& vocab, const std::string& path);
CounterfactualVocab load_cf_vocab(const std::string& path);

} // namespace cider
