#include "cider/eval.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace cider {

namespace {

// splitmix64-style mixing for per-draw corruption seeds
std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

std::uint64_t seed_combine(std::uint64_t h, std::uint64_t v) {
    return mix64(h ^ (v * 0x9E3779B97F4A7C15ull + 0x2545F4914F6CDD1Dull));
}

double f1_of(long tp_like, long fp_like, long fn_like) {
    const long pd = tp_like + fp_like;
    const long rd = tp_like + fn_like;
    if (pd == 0 || rd == 0) return 0.0;
    const double p = static_cast<double>(tp_like) / pd;
    const double r = static_cast<double>(tp_like) / rd;
    return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

} // namespace

int binary_band(int cls_index, int cls) {
    if (cls < 2) throw std::invalid_argument("binary_band: need at least two classes");
    if (cls_index < 0 || cls_index >= cls)
        throw std::invalid_argument("binary_band: class index out of range");
    if (cls == 2) return cls_index;
    return cls_index < cls / 2 ? 0 : 1;
}

MetricReport metrics(const std::vector<int>& predictions, const std::vector<int>& labels,
                     int cls) {
    if (predictions.size() != labels.size())
        throw std::invalid_argument("metrics: prediction/label counts differ");
    if (predictions.empty()) throw std::invalid_argument("metrics: no samples");

    MetricReport rep;
    rep.n = static_cast<long>(predictions.size());
    long exact = 0, band_ok = 0;
    for (size_t i = 0; i < predictions.size(); ++i) {
        const int pb = binary_band(predictions[i], cls);
        const int lb = binary_band(labels[i], cls);
        if (predictions[i] == labels[i]) ++exact;
        if (pb == lb) ++band_ok;
        if (pb == 1 && lb == 1) ++rep.tp;
        else if (pb == 1 && lb == 0) ++rep.fp;
        else if (pb == 0 && lb == 1) ++rep.fn;
        else ++rep.tn;
    }
    rep.acc7 = 100.0 * exact / rep.n;
    rep.acc2 = 100.0 * band_ok / rep.n;

    // support-weighted mean of the per-band F1 scores
    const double f1_pos = f1_of(rep.tp, rep.fp, rep.fn);
    const double f1_neg = f1_of(rep.tn, rep.fn, rep.fp);
    const long sup_pos = rep.tp + rep.fn;
    const long sup_neg = rep.tn + rep.fp;
    rep.f1 = 100.0 * (f1_pos * sup_pos + f1_neg * sup_neg) / rep.n;
    return rep;
}

double auilc(const EvalCurve& curve) {
    const size_t n = curve.rates.size();
    if (n != curve.values.size())
        throw std::invalid_argument("auilc: rate/value counts differ");
    if (n < 2) throw std::invalid_argument("auilc: need at least two points");
    for (size_t i = 1; i < n; ++i)
        if (curve.rates[i] <= curve.rates[i - 1])
            throw std::invalid_argument("auilc: rates must be strictly increasing");
    if (std::abs(curve.rates.front()) > 1e-9 || std::abs(curve.rates.back() - 1.0) > 1e-9)
        throw std::invalid_argument("auilc: rates must span [0, 1]");

    double area = 0.0;
    for (size_t i = 0; i + 1 < n; ++i)
        area += 0.5 * (curve.values[i] + curve.values[i + 1]) *
                (curve.rates[i + 1] - curve.rates[i]);
    return area;
}

Mat predict_logits(const CiderModel& model, const Sample& s, const ClassPriorTable& table,
                   const CounterfactualVocab* cf_vocab) {
    ad::Tape t;
    Bound b;
    CiderModel::McmCtx ctx;
    const bool adjusted = model.config().use_mcm;
    if (adjusted) ctx = model.mcm_encode(t, b, table);

    CiderModel::Pass pass = model.forward(t, b, s, adjusted ? &ctx : nullptr);
    Mat y = t.val(pass.logits);

    if (cf_vocab != nullptr && model.config().use_cf) {
        Sample cf = s;
        cf.tokens = make_counterfactual_text(s.tokens, *cf_vocab);
        CiderModel::Pass cf_pass = model.forward(t, b, cf, adjusted ? &ctx : nullptr);
        y = debias_predict(y, t.val(cf_pass.logits), model.config().tau);
    }
    return y;
}

MetricReport eval_complete(const CiderModel& model, const Dataset& ds, Split split,
                           const ClassPriorTable& table,
                           const CounterfactualVocab* cf_vocab) {
    const std::vector<int> idx = ds.split_indices(split);
    if (idx.empty()) throw std::runtime_error("eval: split has no samples");
    std::vector<int> preds, labels;
    preds.reserve(idx.size());
    labels.reserve(idx.size());
    for (int i : idx) {
        const Sample& s = ds.samples[static_cast<size_t>(i)];
        preds.push_back(predict_class(predict_logits(model, s, table, cf_vocab)));
        labels.push_back(label_of(s.score, model.cls()));
    }
    return metrics(preds, labels, model.cls());
}

RobustnessResult run_robustness_eval(const CiderModel& model, const Dataset& ds,
                                     const ClassPriorTable& table,
                                     const CounterfactualVocab* cf_vocab,
                                     const RobustnessSpec& spec) {
    if (spec.rates.empty()) throw std::invalid_argument("robustness: no rates given");
    for (size_t i = 0; i < spec.rates.size(); ++i) {
        if (spec.rates[i] < 0.0 || spec.rates[i] > 1.0)
            throw std::invalid_argument("robustness: rates must lie in [0, 1]");
        if (i > 0 && spec.rates[i] <= spec.rates[i - 1])
            throw std::invalid_argument("robustness: rates must be strictly increasing");
    }
    if (spec.mask_repeats < 1)
        throw std::invalid_argument("robustness: mask_repeats must be positive");
    const std::vector<int> idx = ds.split_indices(spec.split);
    if (idx.empty()) throw std::runtime_error("robustness: split has no samples");

    RobustnessResult res;
    res.scenario = spec.scenario;
    res.points.reserve(spec.rates.size());
    for (size_t r = 0; r < spec.rates.size(); ++r) {
        const double rate = spec.rates[r];
        std::vector<int> preds, labels;
        preds.reserve(idx.size() * static_cast<size_t>(spec.mask_repeats));
        labels.reserve(preds.capacity());
        for (int k = 0; k < spec.mask_repeats; ++k) {
            for (size_t j = 0; j < idx.size(); ++j) {
                const Sample& s = ds.samples[static_cast<size_t>(idx[j])];
                MissingSpec ms;
                ms.scenario = spec.scenario;
                ms.rate = rate;
                ms.smm_keep = spec.smm_keep;
                ms.seed = seed_combine(
                    seed_combine(seed_combine(spec.mask_seed, r), j),
                    static_cast<std::uint64_t>(k));
                const Sample corrupted = apply_masks(s, gen_masks(ms, lengths_of(s)));
                preds.push_back(
                    predict_class(predict_logits(model, corrupted, table, cf_vocab)));
                labels.push_back(label_of(s.score, model.cls()));
            }
        }
        res.points.push_back(RatePoint{rate, metrics(preds, labels, model.cls())});
    }

    res.acc2.rates = res.f1.rates = res.acc7.rates = spec.rates;
    for (const RatePoint& pt : res.points) {
        res.acc2.values.push_back(pt.report.acc2);
        res.f1.values.push_back(pt.report.f1);
        res.acc7.values.push_back(pt.report.acc7);
    }
    return res;
}

void save_robustness_csv(const RobustnessResult& result, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out.precision(17);
    out << "scenario,rate,acc2,f1,acc7\n";
    const std::string name = scenario_name(result.scenario);
    for (const RatePoint& pt : result.points)
        out << name << ',' << pt.rate << ',' << pt.report.acc2 << ',' << pt.report.f1
            << ',' << pt.report.acc7 << '\n';
    if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<NamedCurves> load_robustness_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::string line;
    if (!std::getline(in, line) || line != "scenario,rate,acc2,f1,acc7")
        throw std::runtime_error(path + ": missing scenario,rate,acc2,f1,acc7 header");

    std::vector<NamedCurves> groups;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string scenario, field;
        std::array<double, 4> nums{};
        if (!std::getline(ss, scenario, ',') || scenario.empty())
            throw std::runtime_error(path + ": malformed line " + std::to_string(lineno));
        for (double& v : nums) {
            if (!std::getline(ss, field, ','))
                throw std::runtime_error(path + ": malformed line " + std::to_string(lineno));
            try {
                size_t used = 0;
                v = std::stod(field, &used);
                if (used != field.size()) throw std::invalid_argument(field);
            } catch (const std::exception&) {
                throw std::runtime_error(path + ": bad number on line " + std::to_string(lineno));
            }
        }
        if (groups.empty() || groups.back().scenario != scenario) {
            groups.push_back(NamedCurves{});
            groups.back().scenario = scenario;
        }
        NamedCurves& g = groups.back();
        g.acc2.rates.push_back(nums[0]);
        g.f1.rates.push_back(nums[0]);
        g.acc7.rates.push_back(nums[0]);
        g.acc2.values.push_back(nums[1]);
        g.f1.values.push_back(nums[2]);
        g.acc7.values.push_back(nums[3]);
    }
    if (groups.empty()) throw std::runtime_error(path + ": no data rows");
    return groups;
}

} // namespace cider
