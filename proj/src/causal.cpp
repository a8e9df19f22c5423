#include "cider/causal.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace cider {

ClassPriorTable build_class_table(const Dataset& ds, int cls, const Mat& embedding,
                                  TableMode mode) {
    if (cls < 2) throw std::invalid_argument("class table: need at least two classes");
    const int d_l = static_cast<int>(embedding.cols());

    ClassPriorTable tab;
    tab.priors.assign(cls, 0.0);
    tab.mean_l = Mat::Zero(cls, d_l);
    tab.mean_a = Mat::Zero(cls, ds.d_a);
    tab.mean_v = Mat::Zero(cls, ds.d_v);

    std::vector<long> counts(cls, 0);
    long total = 0;
    for (const Sample& s : ds.samples) {
        if (s.split != Split::Train) continue;
        const int y = label_of(s.score, cls);
        // time-averaged features per sample, class-averaged below
        Mat lm = Mat::Zero(1, d_l);
        for (int tok : s.tokens) {
            if (tok < 0 || tok >= embedding.rows())
                throw std::invalid_argument("class table: token outside embedding table");
            lm += embedding.row(tok);
        }
        lm /= static_cast<double>(s.tokens.size());
        tab.mean_l.row(y) += lm;
        tab.mean_a.row(y) += s.audio.colwise().mean();
        tab.mean_v.row(y) += s.vision.colwise().mean();
        ++counts[y];
        ++total;
    }
    if (total == 0) throw std::runtime_error("class table: no training samples");

    for (int y = 0; y < cls; ++y) {
        if (counts[y] > 0) {
            tab.mean_l.row(y) /= static_cast<double>(counts[y]);
            tab.mean_a.row(y) /= static_cast<double>(counts[y]);
            tab.mean_v.row(y) /= static_cast<double>(counts[y]);
        } else if (mode == TableMode::Training) {
            throw std::runtime_error("class table: class " + std::to_string(y) +
                                     " has no training samples");
        }
    }
    if (mode == TableMode::Training) {
        for (int y = 0; y < cls; ++y)
            tab.priors[y] = static_cast<double>(counts[y]) / static_cast<double>(total);
    } else {
        // labels are unavailable at test time; fall back to uniform priors
        std::fill(tab.priors.begin(), tab.priors.end(), 1.0 / cls);
    }
    return tab;
}

CounterfactualVocab build_counterfactual_vocab(const Dataset& ds, int cls) {
    if (cls < 2) throw std::invalid_argument("cf vocab: need at least two classes");
    std::map<int, std::vector<long>> per_class; // token -> count per class
    long train_samples = 0;
    for (const Sample& s : ds.samples) {
        if (s.split != Split::Train) continue;
        ++train_samples;
        const int y = label_of(s.score, cls);
        for (int tok : s.tokens) {
            auto it = per_class.find(tok);
            if (it == per_class.end())
                it = per_class.emplace(tok, std::vector<long>(cls, 0)).first;
            ++it->second[y];
        }
    }
    if (train_samples == 0) throw std::runtime_error("cf vocab: no training samples");

    CounterfactualVocab vocab;
    vocab.stats.reserve(per_class.size());
    for (const auto& [tok, counts] : per_class) {
        CfTokenStat st;
        st.token = tok;
        st.total = 0;
        for (long c : counts) st.total += c;
        const double mu = static_cast<double>(st.total) / cls;
        double ss = 0.0;
        for (long c : counts) {
            const double dlt = static_cast<double>(c) - mu;
            ss += dlt * dlt;
        }
        st.cv = mu > 0.0 ? std::sqrt(ss / cls) / mu : 0.0;
        vocab.stats.push_back(st);
    }
    std::sort(vocab.stats.begin(), vocab.stats.end(), [](const CfTokenStat& a, const CfTokenStat& b) {
        if (a.total != b.total) return a.total > b.total;
        return a.token < b.token;
    });
    for (size_t i = 0; i < vocab.stats.size(); ++i) {
        CfTokenStat& st = vocab.stats[i];
        st.retained = i < 100 && st.cv >= 0.1;
        if (st.retained) vocab.retained.insert(st.token);
    }
    return vocab;
}

std::vector<int> make_counterfactual_text(const std::vector<int>& tokens,
                                          const CounterfactualVocab& vocab) {
    std::vector<int> out;
    out.reserve(tokens.size());
    for (int tok : tokens)
        out.push_back(vocab.retained.count(tok) ? tok : kMaskId);
    return out;
}

Mat debias_predict(const Mat& y_do, const Mat& y_cf, double tau) {
    if (y_do.rows() != y_cf.rows() || y_do.cols() != y_cf.cols())
        throw std::invalid_argument("debias: logit shapes differ");
    return y_do - tau * y_cf;
}

int predict_class(const Mat& logits) {
    if (logits.rows() != 1 || logits.cols() < 1)
        throw std::invalid_argument("predict_class: expected a 1 x cls row");
    int best = 0;
    for (int c = 1; c < logits.cols(); ++c)
        if (logits(0, c) > logits(0, best)) best = c;
    return best;
}

void save_cf_vocab(const CounterfactualVocab& vocab, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out.precision(17);
    for (const CfTokenStat& st : vocab.stats)
        out << st.token << '\t' << st.cv << '\t' << (st.retained ? 1 : 0) << '\n';
    if (!out) throw std::runtime_error("write failed: " + path);
}

CounterfactualVocab load_cf_vocab(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    CounterfactualVocab vocab;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        CfTokenStat st;
        int retained = 0;
        if (!(ss >> st.token >> st.cv >> retained))
            throw std::runtime_error(path + ": malformed line " + std::to_string(lineno));
        st.retained = retained != 0;
        vocab.stats.push_back(st);
        if (st.retained) vocab.retained.insert(st.token);
    }
    return vocab;
}

} // namespace cider
