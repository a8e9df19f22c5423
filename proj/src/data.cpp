#include "cider/data.hpp"

#include "cider/rng.hpp"

#include "json.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace cider {

using nlohmann::json;

std::string split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Valid: return "valid";
        case Split::Test: return "test";
    }
    throw std::logic_error("split_name: bad enum");
}

Split split_from_name(const std::string& name) {
    if (name == "train") return Split::Train;
    if (name == "valid") return Split::Valid;
    if (name == "test") return Split::Test;
    throw std::runtime_error("unknown split name: " + name);
}

std::vector<int> Dataset::split_indices(Split s) const {
    std::vector<int> out;
    for (size_t i = 0; i < samples.size(); ++i)
        if (samples[i].split == s) out.push_back(static_cast<int>(i));
    return out;
}

void ModelConfig::validate() const {
    if (d < 1 || d_l < 1) throw std::invalid_argument("config: d and d_l must be positive");
    if (n_layers < 0) throw std::invalid_argument("config: n_layers must be >= 0");
    if (n_heads < 1 || d % n_heads != 0)
        throw std::invalid_argument("config: d must be divisible by n_heads");
    if (conv_kernel < 1 || conv_kernel % 2 == 0)
        throw std::invalid_argument("config: conv_kernel must be odd and positive");
    for (double p : {dropout_attn, dropout_embed, dropout_out})
        if (p < 0.0 || p >= 1.0) throw std::invalid_argument("config: dropouts must be in [0,1)");
    for (double w : {alpha, beta, gamma})
        if (w < 0.0 || w > 1.0) throw std::invalid_argument("config: alpha/beta/gamma must be in [0,1]");
    if (batch_size < 1 || epochs < 0 || early_stop_patience < 1)
        throw std::invalid_argument("config: bad batch/epochs/patience");
    if (!(learning_rate > 0.0) && epochs > 0 && learning_rate != 0.0)
        throw std::invalid_argument("config: learning_rate must be >= 0");
}

int label_of(double score, int cls) {
    if (cls == 2) return score < 0.0 ? 0 : 1;
    if (cls == 7) {
        int band = round_half_up(score);
        band = std::max(-3, std::min(3, band));
        return band + 3;
    }
    throw std::invalid_argument("label_of: cls must be 2 or 7");
}

// ---- file ingestion ----------------------------------------------------------

namespace {

Mat parse_feature_matrix(const json& rows, const char* field, long line_no) {
    if (!rows.is_array() || rows.empty())
        throw std::runtime_error("line " + std::to_string(line_no) + ": field '" + field +
                                 "' must be a non-empty list of rows");
    long n = static_cast<long>(rows.size());
    long width = -1;
    Mat m;
    for (long r = 0; r < n; ++r) {
        const json& row = rows[static_cast<size_t>(r)];
        if (!row.is_array())
            throw std::runtime_error("line " + std::to_string(line_no) + ": field '" + field +
                                     "' row " + std::to_string(r) + " is not a list");
        if (width < 0) {
            width = static_cast<long>(row.size());
            if (width == 0)
                throw std::runtime_error("line " + std::to_string(line_no) + ": field '" + field +
                                         "' has empty rows");
            m.resize(n, width);
        }
        if (static_cast<long>(row.size()) != width)
            throw std::runtime_error("line " + std::to_string(line_no) +
                                     ": dimension mismatch in field '" + field + "'");
        for (long c = 0; c < width; ++c) {
            double v = row[static_cast<size_t>(c)].get<double>();
            if (!std::isfinite(v))
                throw std::runtime_error("line " + std::to_string(line_no) + ": field '" + field +
                                         "' contains a non-finite value");
            m(r, c) = v;
        }
    }
    return m;
}

} // namespace

Dataset load_dataset(const std::string& path, int cls) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open dataset file: " + path);

    Dataset ds;
    ds.cls = cls;
    int max_token = kMaskId;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw std::runtime_error("parse error at line " + std::to_string(line_no) + ": " +
                                     e.what());
        }
        try {
            Sample s;
            s.id = rec.at("id").get<std::string>();
            s.split = split_from_name(rec.at("split").get<std::string>());
            s.score = rec.at("score").get<double>();
            if (!(s.score >= -3.0 && s.score <= 3.0))
                throw std::runtime_error("field 'score' outside [-3, 3]");
            for (const json& t : rec.at("tokens")) {
                int id = t.get<int>();
                if (id < 0) throw std::runtime_error("field 'tokens' has a negative id");
                s.tokens.push_back(id);
                max_token = std::max(max_token, id);
            }
            if (s.tokens.empty()) throw std::runtime_error("field 'tokens' is empty");
            if (s.tokens[0] != kBosId)
                throw std::runtime_error("field 'tokens' must start with the reserved BOS id");
            s.audio = parse_feature_matrix(rec.at("audio"), "audio", line_no);
            s.vision = parse_feature_matrix(rec.at("vision"), "vision", line_no);
            if (ds.samples.empty()) {
                ds.d_a = static_cast<int>(s.audio.cols());
                ds.d_v = static_cast<int>(s.vision.cols());
            } else {
                if (s.audio.cols() != ds.d_a)
                    throw std::runtime_error("dimension mismatch in field 'audio'");
                if (s.vision.cols() != ds.d_v)
                    throw std::runtime_error("dimension mismatch in field 'vision'");
            }
            ds.samples.push_back(std::move(s));
        } catch (const json::exception& e) {
            throw std::runtime_error("line " + std::to_string(line_no) + ": " + e.what());
        } catch (const std::runtime_error& e) {
            std::string msg = e.what();
            if (msg.rfind("line ", 0) == 0) throw;
            throw std::runtime_error("line " + std::to_string(line_no) + ": " + msg);
        }
    }
    ds.vocab_size = max_token + 1;
    return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open output file: " + path);
    for (const Sample& s : ds.samples) {
        json rec;
        rec["id"] = s.id;
        rec["split"] = split_name(s.split);
        rec["score"] = s.score;
        rec["tokens"] = s.tokens;
        json audio = json::array();
        for (long r = 0; r < s.audio.rows(); ++r) {
            json row = json::array();
            for (long c = 0; c < s.audio.cols(); ++c) row.push_back(s.audio(r, c));
            audio.push_back(std::move(row));
        }
        rec["audio"] = std::move(audio);
        json vision = json::array();
        for (long r = 0; r < s.vision.rows(); ++r) {
            json row = json::array();
            for (long c = 0; c < s.vision.cols(); ++c) row.push_back(s.vision(r, c));
            vision.push_back(std::move(row));
        }
        rec["vision"] = std::move(vision);
        out << rec.dump() << "\n";
    }
}

// ---- synthetic corpus --------------------------------------------------------

namespace {

constexpr int kCommonCount = 8; // class-neutral everyday tokens

// integer class counts from a prior via largest remainder, so per-split label
// totals are exact rather than sampled
std::vector<int> allocate_counts(const std::vector<double>& prior, int m) {
    int cls = static_cast<int>(prior.size());
    std::vector<int> counts(cls);
    std::vector<std::pair<double, int>> frac(cls);
    int used = 0;
    for (int i = 0; i < cls; ++i) {
        double exact = prior[i] * m;
        counts[i] = static_cast<int>(std::floor(exact));
        used += counts[i];
        frac[i] = {exact - counts[i], i};
    }
    std::sort(frac.begin(), frac.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (int k = 0; k < m - used; ++k) counts[frac[static_cast<size_t>(k)].second] += 1;
    return counts;
}

} // namespace

Dataset synth_dataset(int n, int cls, double bias_strength, std::uint64_t seed,
                      const SynthSpec& spec) {
    if (cls != 2 && cls != 7) throw std::invalid_argument("synth_dataset: cls must be 2 or 7");
    if (n < cls) throw std::invalid_argument("synth_dataset: need n >= cls");
    if (bias_strength < 0.0 || bias_strength > 1.0)
        throw std::invalid_argument("synth_dataset: bias_strength must be in [0,1]");

    Rng rng(seed);
    const int bias_base = kFirstWordId + kCommonCount; // bias token ids, one per class

    Dataset ds;
    ds.cls = cls;
    ds.d_a = spec.d_a;
    ds.d_v = spec.d_v;
    ds.vocab_size = bias_base + cls;

    int t_l = spec.t_l;
    int t_a = spec.aligned ? spec.t_l : spec.t_a;
    int t_v = spec.aligned ? spec.t_l : spec.t_v;

    int n_train = std::max(1, static_cast<int>(std::llround(0.70 * n)));
    n_train = std::min(n_train, n);
    int n_valid = std::min(n - n_train, static_cast<int>(std::llround(0.15 * n)));
    int n_test = n - n_train - n_valid;

    // train/valid prior is linearly skewed toward low classes by bias_strength;
    // the test split is balanced
    std::vector<double> skewed(cls), uniform(cls, 1.0 / cls);
    double wsum = 0.0;
    for (int i = 0; i < cls; ++i) {
        double lin = cls > 1 ? static_cast<double>(cls - 1 - 2 * i) / (cls - 1) : 0.0;
        skewed[i] = 1.0 + 0.4 * bias_strength * lin;
        wsum += skewed[i];
    }
    for (double& w : skewed) w /= wsum;

    auto make_labels = [&](const std::vector<double>& prior, int m) {
        std::vector<int> labels;
        std::vector<int> counts = allocate_counts(prior, m);
        for (int i = 0; i < cls; ++i) labels.insert(labels.end(), counts[i], i);
        rng.shuffle(labels);
        return labels;
    };

    struct Part {
        Split split;
        std::vector<int> labels;
    };
    std::vector<Part> parts = {
        {Split::Train, make_labels(skewed, n_train)},
        {Split::Valid, make_labels(skewed, n_valid)},
        {Split::Test, make_labels(uniform, n_test)},
    };

    int index = 0;
    for (const Part& part : parts) {
        bool flipped = part.split == Split::Test; // opposite token-class association
        for (int label : part.labels) {
            Sample s;
            char buf[16];
            std::snprintf(buf, sizeof buf, "s%05d", index++);
            s.id = buf;
            s.split = part.split;

            if (cls == 2) {
                s.score = label == 0 ? rng.uniform(-3.0, -0.1) : rng.uniform(0.1, 3.0);
            } else {
                s.score = (label - 3) + rng.uniform(-0.45, 0.45);
                s.score = std::max(-3.0, std::min(3.0, s.score));
            }

            s.tokens.assign(static_cast<size_t>(t_l), 0);
            s.tokens[0] = kBosId;
            int assoc = flipped ? (label + 1) % cls : label;
            for (int t = 1; t < t_l; ++t) {
                if (rng.uniform() < 0.65) {
                    s.tokens[static_cast<size_t>(t)] = kFirstWordId + rng.randint(kCommonCount);
                } else if (rng.uniform() < bias_strength) {
                    s.tokens[static_cast<size_t>(t)] = bias_base + assoc;
                } else {
                    s.tokens[static_cast<size_t>(t)] = bias_base + rng.randint(cls);
                }
            }

            // channel 0 of audio/vision carries the class signal on every split
            double sig = cls > 1 ? 2.0 * label / (cls - 1) - 1.0 : 0.0;
            s.audio.resize(t_a, spec.d_a);
            for (long r = 0; r < t_a; ++r)
                for (long c = 0; c < spec.d_a; ++c)
                    s.audio(r, c) = c == 0 ? sig + rng.normal(0.0, 0.8) : rng.normal(0.0, 1.0);
            s.vision.resize(t_v, spec.d_v);
            for (long r = 0; r < t_v; ++r)
                for (long c = 0; c < spec.d_v; ++c)
                    s.vision(r, c) = c == 0 ? sig + rng.normal(0.0, 0.8) : rng.normal(0.0, 1.0);

            ds.samples.push_back(std::move(s));
        }
    }
    (void)n_test;
    return ds;
}

// ---- feature maps --------------------------------------------------------------

Mat embed_text(const std::vector<int>& tokens, const Mat& table) {
    Mat out(static_cast<long>(tokens.size()), table.cols());
    for (size_t i = 0; i < tokens.size(); ++i) {
        int id = tokens[i];
        if (id < 0 || id >= table.rows())
            throw std::out_of_range("embed_text: token id " + std::to_string(id) +
                                    " outside the embedding table");
        out.row(static_cast<long>(i)) = table.row(id);
    }
    return out;
}

Mat conv_project(const Mat& seq, const Mat& W, const Mat& b, int kernel) {
    if (kernel < 1 || kernel % 2 == 0)
        throw std::invalid_argument("conv_project: kernel width must be odd and positive");
    long d_in = seq.cols();
    if (W.rows() != kernel * d_in)
        throw std::invalid_argument("conv_project: weight rows must equal kernel * d_in");
    long t = seq.rows(), d_out = W.cols();
    int half = kernel / 2;
    Mat out = Mat::Zero(t, d_out);
    out.rowwise() += b.row(0);
    for (int tap = 0; tap < kernel; ++tap) {
        const Mat wk = W.middleRows(static_cast<long>(tap) * d_in, d_in);
        int shift = tap - half; // source row offset for this tap
        for (long r = 0; r < t; ++r) {
            long src = r + shift;
            if (src < 0 || src >= t) continue; // symmetric zero padding
            out.row(r) += seq.row(src) * wk;
        }
    }
    return out;
}

} // namespace cider
