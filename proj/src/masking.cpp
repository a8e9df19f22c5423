#include "cider/masking.hpp"

#include "cider/rng.hpp"

#include <stdexcept>

namespace cider {

std::string scenario_name(Scenario s) {
    switch (s) {
        case Scenario::RMFM: return "rmfm";
        case Scenario::TraditionalRMFM: return "trad-rmfm";
        case Scenario::RMM: return "rmm";
        case Scenario::TMFM: return "tmfm";
        case Scenario::STMFM: return "stmfm";
        case Scenario::SMM: return "smm";
    }
    throw std::logic_error("scenario_name: bad enum");
}

Scenario scenario_from_name(const std::string& name) {
    if (name == "rmfm") return Scenario::RMFM;
    if (name == "trad-rmfm") return Scenario::TraditionalRMFM;
    if (name == "rmm") return Scenario::RMM;
    if (name == "tmfm") return Scenario::TMFM;
    if (name == "stmfm") return Scenario::STMFM;
    if (name == "smm") return Scenario::SMM;
    throw std::runtime_error("unknown scenario: " + name);
}

namespace {

void require_rate(double rate) {
    if (!(rate >= 0.0 && rate <= 1.0))
        throw std::invalid_argument("missing rate must be in [0, 1]");
}

void require_aligned(Lengths len, const char* who) {
    if (len.t_l != len.t_a || len.t_l != len.t_v)
        throw std::invalid_argument(std::string(who) +
                                    ": requires aligned sequence lengths across modalities");
}

MaskSet all_ones(Lengths len) {
    return MaskSet{std::vector<int>(static_cast<size_t>(len.t_l), 1),
                   std::vector<int>(static_cast<size_t>(len.t_a), 1),
                   std::vector<int>(static_cast<size_t>(len.t_v), 1)};
}

} // namespace

MaskSet gen_rmfm(Lengths len, double rate, std::uint64_t seed) {
    require_rate(rate);
    MaskSet m = all_ones(len);
    int zeros = round_half_up(rate * len.total());
    Rng rng(seed);
    for (int p : rng.choose(len.total(), zeros)) {
        if (p < len.t_l)
            m.m_l[static_cast<size_t>(p)] = 0;
        else if (p < len.t_l + len.t_a)
            m.m_a[static_cast<size_t>(p - len.t_l)] = 0;
        else
            m.m_v[static_cast<size_t>(p - len.t_l - len.t_a)] = 0;
    }
    return m;
}

MaskSet gen_traditional_rmfm(Lengths len, double rate, std::uint64_t seed) {
    require_rate(rate);
    MaskSet m = all_ones(len);
    Rng rng(seed);
    auto drop = [&](std::vector<int>& mask, int t) {
        for (int p : rng.choose(t, round_half_up(rate * t))) mask[static_cast<size_t>(p)] = 0;
    };
    drop(m.m_l, len.t_l);
    drop(m.m_a, len.t_a);
    drop(m.m_v, len.t_v);
    return m;
}

MaskSet gen_rmm(Lengths len, double rate, std::uint64_t seed) {
    require_rate(rate);
    MaskSet m = all_ones(len);
    Rng rng(seed);
    if (rng.bernoulli(rate)) std::fill(m.m_l.begin(), m.m_l.end(), 0);
    if (rng.bernoulli(rate)) std::fill(m.m_a.begin(), m.m_a.end(), 0);
    if (rng.bernoulli(rate)) std::fill(m.m_v.begin(), m.m_v.end(), 0);
    return m;
}

MaskSet gen_tmfm(Lengths len, double rate, std::uint64_t seed) {
    require_rate(rate);
    require_aligned(len, "gen_tmfm");
    MaskSet m = all_ones(len);
    Rng rng(seed);
    for (int p : rng.choose(len.t_l, round_half_up(rate * len.t_l))) {
        m.m_l[static_cast<size_t>(p)] = 0;
        m.m_a[static_cast<size_t>(p)] = 0;
        m.m_v[static_cast<size_t>(p)] = 0;
    }
    return m;
}

MaskSet gen_stmfm(Lengths len, double rate, std::uint64_t seed) {
    require_rate(rate);
    require_aligned(len, "gen_stmfm");
    MaskSet m = all_ones(len);
    int t = len.t_l;
    int block = round_half_up(rate * t);
    if (block == 0) return m;
    Rng rng(seed);
    int start = rng.randint(t - block + 1);
    for (int p = start; p < start + block; ++p) {
        m.m_l[static_cast<size_t>(p)] = 0;
        m.m_a[static_cast<size_t>(p)] = 0;
        m.m_v[static_cast<size_t>(p)] = 0;
    }
    return m;
}

MaskSet gen_smm(Lengths len, ModalityPick keep) {
    if (!keep.any()) throw std::invalid_argument("gen_smm: keep set must be non-empty");
    MaskSet m = all_ones(len);
    if (!keep.l) std::fill(m.m_l.begin(), m.m_l.end(), 0);
    if (!keep.a) std::fill(m.m_a.begin(), m.m_a.end(), 0);
    if (!keep.v) std::fill(m.m_v.begin(), m.m_v.end(), 0);
    return m;
}

MaskSet gen_masks(const MissingSpec& spec, Lengths len) {
    switch (spec.scenario) {
        case Scenario::RMFM: return gen_rmfm(len, spec.rate, spec.seed);
        case Scenario::TraditionalRMFM: return gen_traditional_rmfm(len, spec.rate, spec.seed);
        case Scenario::RMM: return gen_rmm(len, spec.rate, spec.seed);
        case Scenario::TMFM: return gen_tmfm(len, spec.rate, spec.seed);
        case Scenario::STMFM: return gen_stmfm(len, spec.rate, spec.seed);
        case Scenario::SMM: return gen_smm(len, spec.smm_keep);
    }
    throw std::logic_error("gen_masks: bad scenario");
}

Sample apply_masks(const Sample& s, const MaskSet& masks) {
    if (masks.m_l.size() != s.tokens.size() ||
        static_cast<long>(masks.m_a.size()) != s.audio.rows() ||
        static_cast<long>(masks.m_v.size()) != s.vision.rows())
        throw std::invalid_argument("apply_masks: mask lengths do not match the sample");
    Sample out = s;
    for (size_t i = 0; i < masks.m_l.size(); ++i)
        if (masks.m_l[i] == 0) out.tokens[i] = kMaskId;
    for (size_t i = 0; i < masks.m_a.size(); ++i)
        if (masks.m_a[i] == 0) out.audio.row(static_cast<long>(i)).setZero();
    for (size_t i = 0; i < masks.m_v.size(); ++i)
        if (masks.m_v[i] == 0) out.vision.row(static_cast<long>(i)).setZero();
    return out;
}

} // namespace cider
