#pragma once

#include "cider/mat.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace cider {

// reserved token ids
inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kMaskId = 2;
inline constexpr int kFirstWordId = 3;

enum class Split { Train, Valid, Test };

std::string split_name(Split s);
Split split_from_name(const std::string& name);

// One utterance: token ids (BOS first), per-frame audio/vision features and a
// real sentiment score in [-3, +3].
struct Sample {
    std::string id;
    Split split = Split::Train;
    double score = 0.0;
    std::vector<int> tokens; // length T_l, tokens[0] == kBosId
    Mat audio;               // T_a x d_a
    Mat vision;              // T_v x d_v
};

struct Dataset {
    std::vector<Sample> samples;
    int vocab_size = 0;
    int d_a = 0;
    int d_v = 0;
    int cls = 2; // 2-class or 7-class sentiment

    std::vector<int> split_indices(Split s) const;
};

struct ModelConfig {
    int d = 32;       // shared hidden width
    int d_l = 32;     // text embedding width
    int n_layers = 2; // fusion transformer depth
    int n_heads = 1;
    int conv_kernel = 1; // odd width; 1 = plain per-frame projection
    double dropout_attn = 0.0;
    double dropout_embed = 0.0;
    double dropout_out = 0.0;
    double alpha = 1.0; // reconstruction loss weight
    double beta = 1.0;  // attention-transfer loss weight
    double gamma = 1.0; // joint-representation loss weight
    double tau = 1.0;   // counterfactual subtraction strength
    int batch_size = 128;
    int epochs = 200;
    int early_stop_patience = 10;
    double learning_rate = 1e-3;
    std::uint64_t seed = 42;
    bool use_wsam = true; // off: nearest-neighbor resampling stands in for attention alignment
    bool use_mcm = true;  // off: plain linear head on the joint representation
    bool use_cf = true;   // off: no counterfactual subtraction at test time

    void validate() const; // throws std::invalid_argument on bad fields
};

// class index for a sentiment score: 2-class = negative vs non-negative,
// 7-class = round(score) clipped to [-3,3], shifted to 0..6
int label_of(double score, int cls);

// Line-delimited records with fields id/split/score/tokens/audio/vision.
Dataset load_dataset(const std::string& path, int cls = 2);
void save_dataset(const Dataset& ds, const std::string& path);

struct SynthSpec {
    int t_l = 12;
    int t_a = 20;
    int t_v = 16;
    int d_a = 4;
    int d_v = 3;
    bool aligned = false; // force t_a = t_v = t_l for synchronized-missing scenarios
};

// Synthetic corpus with a planted real signal (audio/vision channel 0) and a
// controllable language bias: bias_strength skews both the train label prior
// and the class association of dedicated bias tokens; the test split carries
// the opposite token association, giving a distribution-shifted evaluation.
Dataset synth_dataset(int n, int cls, double bias_strength, std::uint64_t seed,
                      const SynthSpec& spec = {});

// row i = table row of token i
Mat embed_text(const std::vector<int>& tokens, const Mat& table);

// 1-D convolution over time with symmetric zero padding; W is (kernel*d_in) x d,
// stacked per tap in temporal order, b is 1 x d
Mat conv_project(const Mat& seq, const Mat& W, const Mat& b, int kernel);

} // namespace cider
