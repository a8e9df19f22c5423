#pragma once

#include "cider/data.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace cider {

// The six missing-data scenarios. Feature-level scenarios use exact zero
// counts (round-half-up of rate * length); RMM is Bernoulli per modality.
enum class Scenario { RMFM, TraditionalRMFM, RMM, TMFM, STMFM, SMM };

std::string scenario_name(Scenario s);
Scenario scenario_from_name(const std::string& name);

struct ModalityPick {
    bool l = false, a = false, v = false;
    bool any() const { return l || a || v; }
};

struct MissingSpec {
    Scenario scenario = Scenario::RMFM;
    double rate = 0.0;
    ModalityPick smm_keep; // SMM only
    std::uint64_t seed = 0;
};

struct Lengths {
    int t_l = 0, t_a = 0, t_v = 0;
    int total() const { return t_l + t_a + t_v; }
};

inline Lengths lengths_of(const Sample& s) {
    return Lengths{static_cast<int>(s.tokens.size()), static_cast<int>(s.audio.rows()),
                   static_cast<int>(s.vision.rows())};
}

// per-position validity: 1 = kept, 0 = missing
struct MaskSet {
    std::vector<int> m_l, m_a, m_v;
};

// exactly round(rate * total) zeros drawn uniformly over the concatenated
// l+a+v index space, then split per modality
MaskSet gen_rmfm(Lengths len, double rate, std::uint64_t seed);

// exactly round(rate * T_k) zeros independently per modality
MaskSet gen_traditional_rmfm(Lengths len, double rate, std::uint64_t seed);

// whole modalities dropped independently with probability rate
MaskSet gen_rmm(Lengths len, double rate, std::uint64_t seed);

// round(rate * T) zero positions shared by all modalities; aligned lengths required
MaskSet gen_tmfm(Lengths len, double rate, std::uint64_t seed);

// one contiguous zero block of length round(rate * T), shared positions; aligned required
MaskSet gen_stmfm(Lengths len, double rate, std::uint64_t seed);

// kept modalities all-ones, dropped all-zeros; deterministic
MaskSet gen_smm(Lengths len, ModalityPick keep);

MaskSet gen_masks(const MissingSpec& spec, Lengths len);

// audio/vision rows with mask 0 are zeroed; text tokens with mask 0 become the
// reserved [MASK] id (BOS is maskable like any other position)
Sample apply_masks(const Sample& s, const MaskSet& masks);

} // namespace cider
