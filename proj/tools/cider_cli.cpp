// Command-line front end: synthetic data generation, training, robustness
// evaluation, curve integration, and counterfactual-vocabulary extraction.
// Results go to files or stdout; diagnostics go to stderr.

#include "CLI11.hpp"
#include "json.hpp"

#include "cider/data.hpp"
#include "cider/eval.hpp"
#include "cider/train.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

using namespace cider;

namespace {

int to_int(const std::string& s) {
    size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
}

double to_double(const std::string& s) {
    size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
}

std::uint64_t to_u64(const std::string& s) {
    size_t used = 0;
    const unsigned long long v = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return static_cast<std::uint64_t>(v);
}

bool to_bool(const std::string& s) {
    if (s == "1" || s == "true" || s == "on" || s == "yes") return true;
    if (s == "0" || s == "false" || s == "off" || s == "no") return false;
    throw std::invalid_argument(s);
}

// ---- flat key=value config files ----

std::unordered_map<std::string, std::string> read_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path);
    std::unordered_map<std::string, std::string> kv;
    std::string line;
    int lineno = 0;
    auto trim = [](std::string s) {
        const char* ws = " \t\r";
        const size_t a = s.find_first_not_of(ws);
        if (a == std::string::npos) return std::string();
        const size_t b = s.find_last_not_of(ws);
        return s.substr(a, b - a + 1);
    };
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error(path + ": line " + std::to_string(lineno) +
                                     ": expected key=value");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key.empty())
            throw std::runtime_error(path + ": line " + std::to_string(lineno) +
                                     ": empty key");
        kv[key] = val;
    }
    return kv;
}

// Registers every model/training option on a subcommand and resolves the
// final config with command line > config file > CIDER_SEED env > defaults.
class ModelCli {
public:
    ModelCli(CLI::App* cmd, ModelConfig& cfg) : cfg_(cfg) {
        opts_["d"] = cmd->add_option("--d", cfg.d, "shared hidden width");
        opts_["d_l"] = cmd->add_option("--d-l", cfg.d_l, "text embedding width");
        opts_["n_layers"] = cmd->add_option("--layers", cfg.n_layers, "fusion transformer depth");
        opts_["n_heads"] = cmd->add_option("--heads", cfg.n_heads, "attention heads");
        opts_["conv_kernel"] =
            cmd->add_option("--conv-kernel", cfg.conv_kernel, "projection kernel width (odd)");
        opts_["dropout_attn"] =
            cmd->add_option("--dropout-attn", cfg.dropout_attn, "attention dropout");
        opts_["dropout_embed"] =
            cmd->add_option("--dropout-embed", cfg.dropout_embed, "text embedding dropout");
        opts_["dropout_out"] =
            cmd->add_option("--dropout-out", cfg.dropout_out, "joint representation dropout");
        opts_["alpha"] = cmd->add_option("--alpha", cfg.alpha, "reconstruction loss weight");
        opts_["beta"] = cmd->add_option("--beta", cfg.beta, "attention-transfer loss weight");
        opts_["gamma"] = cmd->add_option("--gamma", cfg.gamma, "joint-representation loss weight");
        opts_["tau"] = cmd->add_option("--tau", cfg.tau, "counterfactual subtraction strength");
        opts_["batch_size"] = cmd->add_option("--batch-size", cfg.batch_size, "mini-batch size");
        opts_["epochs"] = cmd->add_option("--epochs", cfg.epochs, "max training epochs");
        opts_["early_stop_patience"] =
            cmd->add_option("--patience", cfg.early_stop_patience, "early-stop patience");
        opts_["learning_rate"] = cmd->add_option("--lr", cfg.learning_rate, "learning rate");
        opts_["seed"] = cmd->add_option("--seed", cfg.seed, "global seed");
        no_recon_ = cmd->add_flag("--no-recon", "drop the reconstruction loss");
        no_attn_ = cmd->add_flag("--no-attn", "drop the attention-transfer loss");
        no_joint_ = cmd->add_flag("--no-joint", "drop the joint-representation loss");
        no_mcm_ = cmd->add_flag("--no-mcm", "plain classifier head, no class-prior adjustment");
        no_cf_ = cmd->add_flag("--no-cf", "no counterfactual subtraction at test time");
        no_wsam_ = cmd->add_flag("--no-wsam",
                                 "nearest-neighbor resampling instead of learned alignment");
    }

    void finalize(const std::unordered_map<std::string, std::string>* file_kv) {
        if (file_kv) {
            for (const auto& [key, val] : *file_kv) {
                auto it = opts_.find(key);
                if (it == opts_.end())
                    throw std::runtime_error("config: unknown key '" + key + "'");
                from_file_.insert(key);
                if (it->second->count() > 0) continue; // command line wins
                try {
                    apply_kv(key, val);
                } catch (const std::invalid_argument&) {
                    throw std::runtime_error("config: bad value for '" + key + "': " + val);
                }
            }
        }
        if (opts_["seed"]->count() == 0 && from_file_.count("seed") == 0) {
            if (const char* env = std::getenv("CIDER_SEED")) {
                try {
                    cfg_.seed = to_u64(env);
                } catch (const std::exception&) {
                    throw std::runtime_error("CIDER_SEED must be an unsigned integer");
                }
            }
        }
        if (no_recon_->count() > 0) cfg_.alpha = 0.0;
        if (no_attn_->count() > 0) cfg_.beta = 0.0;
        if (no_joint_->count() > 0) cfg_.gamma = 0.0;
        if (no_mcm_->count() > 0) cfg_.use_mcm = false;
        if (no_cf_->count() > 0) cfg_.use_cf = false;
        if (no_wsam_->count() > 0) cfg_.use_wsam = false;
        cfg_.validate();
    }

    bool explicitly_set(const std::string& key) const {
        auto it = opts_.find(key);
        return (it != opts_.end() && it->second->count() > 0) || from_file_.count(key) > 0;
    }

    // anything that changes the network or objective, as opposed to the schedule
    bool any_architecture_set() const {
        static const std::set<std::string> arch = {
            "d",     "d_l",  "n_layers",    "n_heads",       "conv_kernel",
            "dropout_attn", "dropout_embed", "dropout_out",
            "alpha", "beta", "gamma",       "tau"};
        for (const std::string& k : arch)
            if (explicitly_set(k)) return true;
        return no_recon_->count() > 0 || no_attn_->count() > 0 || no_joint_->count() > 0 ||
               no_mcm_->count() > 0 || no_cf_->count() > 0 || no_wsam_->count() > 0;
    }

private:
    void apply_kv(const std::string& k, const std::string& v) {
        if (k == "d") cfg_.d = to_int(v);
        else if (k == "d_l") cfg_.d_l = to_int(v);
        else if (k == "n_layers") cfg_.n_layers = to_int(v);
        else if (k == "n_heads") cfg_.n_heads = to_int(v);
        else if (k == "conv_kernel") cfg_.conv_kernel = to_int(v);
        else if (k == "dropout_attn") cfg_.dropout_attn = to_double(v);
        else if (k == "dropout_embed") cfg_.dropout_embed = to_double(v);
        else if (k == "dropout_out") cfg_.dropout_out = to_double(v);
        else if (k == "alpha") cfg_.alpha = to_double(v);
        else if (k == "beta") cfg_.beta = to_double(v);
        else if (k == "gamma") cfg_.gamma = to_double(v);
        else if (k == "tau") cfg_.tau = to_double(v);
        else if (k == "batch_size") cfg_.batch_size = to_int(v);
        else if (k == "epochs") cfg_.epochs = to_int(v);
        else if (k == "early_stop_patience") cfg_.early_stop_patience = to_int(v);
        else if (k == "learning_rate") cfg_.learning_rate = to_double(v);
        else if (k == "seed") cfg_.seed = to_u64(v);
        else if (k == "use_wsam") cfg_.use_wsam = to_bool(v);
        else if (k == "use_mcm") cfg_.use_mcm = to_bool(v);
        else if (k == "use_cf") cfg_.use_cf = to_bool(v);
        else throw std::runtime_error("config: unknown key '" + k + "'");
    }

    ModelConfig& cfg_;
    std::map<std::string, CLI::Option*> opts_;
    std::set<std::string> from_file_;
    CLI::Option *no_recon_, *no_attn_, *no_joint_, *no_mcm_, *no_cf_, *no_wsam_;
};

// ---- data source resolution ----

struct SynthArgs {
    int n = 200;
    int cls = 2;
    double bias = 0.0;
    bool aligned = false;
};

SynthArgs parse_synth_spec(const std::string& spec) {
    SynthArgs out;
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const size_t eq = item.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("--synth: expected key=value, got '" + item + "'");
        const std::string key = item.substr(0, eq);
        const std::string val = item.substr(eq + 1);
        try {
            if (key == "n") out.n = to_int(val);
            else if (key == "cls") out.cls = to_int(val);
            else if (key == "bias") out.bias = to_double(val);
            else if (key == "aligned") out.aligned = to_bool(val);
            else throw std::runtime_error("--synth: unknown key '" + key + "'");
        } catch (const std::invalid_argument&) {
            throw std::runtime_error("--synth: bad value for '" + key + "'");
        }
    }
    return out;
}

Dataset resolve_dataset(const std::string& data_path, const std::string& synth_spec,
                        int cls, std::uint64_t seed) {
    if (!data_path.empty() && !synth_spec.empty())
        throw std::runtime_error("give --data or --synth, not both");
    if (!data_path.empty()) return load_dataset(data_path, cls);
    if (!synth_spec.empty()) {
        const SynthArgs a = parse_synth_spec(synth_spec);
        SynthSpec spec;
        spec.aligned = a.aligned;
        return synth_dataset(a.n, a.cls, a.bias, seed, spec);
    }
    throw std::runtime_error("need --data <file> or --synth n=..,cls=..,bias=..");
}

std::uint64_t resolve_seed(const CLI::Option* opt, std::uint64_t cli_value) {
    if (opt->count() > 0) return cli_value;
    if (const char* env = std::getenv("CIDER_SEED")) {
        try {
            return to_u64(env);
        } catch (const std::exception&) {
            throw std::runtime_error("CIDER_SEED must be an unsigned integer");
        }
    }
    return 42;
}

std::vector<double> parse_rates(const std::string& s) {
    std::vector<double> out;
    try {
        if (s.find(':') != std::string::npos) {
            std::stringstream ss(s);
            std::string a, b, st;
            if (!std::getline(ss, a, ':') || !std::getline(ss, b, ':') ||
                !std::getline(ss, st) || st.find(':') != std::string::npos)
                throw std::runtime_error("--rates: expected start:end:step");
            const double lo = to_double(a), hi = to_double(b), step = to_double(st);
            if (step <= 0.0) throw std::runtime_error("--rates: step must be positive");
            if (hi < lo) throw std::runtime_error("--rates: end below start");
            const long n = std::lround((hi - lo) / step);
            if (std::abs(lo + n * step - hi) > 1e-9)
                throw std::runtime_error("--rates: step does not divide the span");
            for (long i = 0; i < n; ++i) out.push_back(lo + i * step);
            out.push_back(hi);
        } else {
            std::stringstream ss(s);
            std::string item;
            while (std::getline(ss, item, ',')) out.push_back(to_double(item));
        }
    } catch (const std::invalid_argument&) {
        throw std::runtime_error("--rates: bad number in '" + s + "'");
    }
    if (out.empty()) throw std::runtime_error("--rates: empty list");
    return out;
}

ModalityPick parse_pick(const std::string& s) {
    ModalityPick pick;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item == "l") pick.l = true;
        else if (item == "a") pick.a = true;
        else if (item == "v") pick.v = true;
        else throw std::runtime_error("--smm-keep: expected l, a or v, got '" + item + "'");
    }
    return pick;
}

Split parse_split(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "valid") return Split::Valid;
    if (s == "test") return Split::Test;
    throw std::runtime_error("--split: unknown split '" + s + "'");
}

void check_dims(const CiderModel& model, const Dataset& ds) {
    std::ostringstream why;
    if (ds.cls != model.cls()) why << "classes " << ds.cls << " vs " << model.cls();
    else if (ds.d_a != model.d_a()) why << "audio width " << ds.d_a << " vs " << model.d_a();
    else if (ds.d_v != model.d_v()) why << "vision width " << ds.d_v << " vs " << model.d_v();
    else if (ds.vocab_size > model.vocab())
        why << "vocabulary " << ds.vocab_size << " vs " << model.vocab();
    else return;
    throw std::runtime_error("checkpoint/data mismatch: " + why.str());
}

ClassPriorTable test_mode(ClassPriorTable table) {
    // class means stay as measured on the training split; the label
    // distribution is unknown at test time, so priors go uniform
    const size_t cls = table.priors.size();
    std::fill(table.priors.begin(), table.priors.end(), 1.0 / static_cast<double>(cls));
    return table;
}

// ---- subcommands ----

struct SynthOpts {
    int n = 0;
    int cls = 2;
    double bias = 0.0;
    bool aligned = false;
    std::uint64_t seed = 42;
    std::string out;
    CLI::Option* seed_opt = nullptr;
};

void run_synth(const SynthOpts& o) {
    const std::uint64_t seed = resolve_seed(o.seed_opt, o.seed);
    SynthSpec spec;
    spec.aligned = o.aligned;
    const Dataset ds = synth_dataset(o.n, o.cls, o.bias, seed, spec);
    save_dataset(ds, o.out);
    std::cerr << "wrote " << ds.samples.size() << " samples (" << o.cls << " classes, bias "
              << o.bias << ", seed " << seed << ") -> " << o.out << "\n";
}

struct TrainOpts {
    std::string data, synth, config, ckpt, log_path, resume;
    int cls = 2;
    ModelConfig cfg;
    std::unique_ptr<ModelCli> model_cli;
};

void run_train(TrainOpts& o) {
    std::unordered_map<std::string, std::string> file_kv;
    const std::unordered_map<std::string, std::string>* kvp = nullptr;
    if (!o.config.empty()) {
        file_kv = read_config(o.config);
        kvp = &file_kv;
    }
    o.model_cli->finalize(kvp);
    const Dataset ds = resolve_dataset(o.data, o.synth, o.cls, o.cfg.seed);

    int epoch_offset = 0;
    std::unique_ptr<CiderModel> model;
    std::unique_ptr<Adam> opt;
    if (!o.resume.empty()) {
        if (o.model_cli->any_architecture_set())
            throw std::runtime_error(
                "--resume: architecture and loss options are fixed by the checkpoint");
        LoadedModel lm = load_checkpoint(o.resume);
        ModelConfig cfg = lm.model.config();
        // the training schedule may still be adjusted for the continued run
        if (o.model_cli->explicitly_set("batch_size")) cfg.batch_size = o.cfg.batch_size;
        if (o.model_cli->explicitly_set("epochs")) cfg.epochs = o.cfg.epochs;
        if (o.model_cli->explicitly_set("early_stop_patience"))
            cfg.early_stop_patience = o.cfg.early_stop_patience;
        if (o.model_cli->explicitly_set("learning_rate")) cfg.learning_rate = o.cfg.learning_rate;
        if (o.model_cli->explicitly_set("seed")) cfg.seed = o.cfg.seed;
        cfg.validate();
        model = std::make_unique<CiderModel>(cfg, lm.model.vocab(), lm.model.d_a(),
                                             lm.model.d_v(), lm.model.cls());
        model->params() = lm.model.params();
        epoch_offset = lm.epoch;
        opt = std::make_unique<Adam>(cfg.learning_rate);
        if (lm.has_adam) {
            opt->set_steps(lm.adam_t);
            opt->m_state() = lm.adam_m;
            opt->v_state() = lm.adam_v;
        }
        check_dims(*model, ds);
    } else {
        model = std::make_unique<CiderModel>(o.cfg, ds.vocab_size, ds.d_a, ds.d_v, ds.cls);
        model->init_params(o.cfg.seed);
        opt = std::make_unique<Adam>(o.cfg.learning_rate);
    }

    const TrainResult res = train_model(*model, *opt, ds);

    const std::string log_path = o.log_path.empty() ? o.ckpt + ".log" : o.log_path;
    std::ofstream log(log_path);
    if (!log) throw std::runtime_error("cannot open for writing: " + log_path);
    log.precision(10);
    for (const EpochLog& el : res.log) {
        log << "epoch " << (epoch_offset + el.epoch) << "  total " << el.train_total
            << "  ce " << el.train_ce_complete << "/" << el.train_ce_incomplete
            << "  recon " << el.train_recon << "  attn " << el.train_attn << "  joint "
            << el.train_joint << "  val_ce " << el.val_ce << (el.improved ? "  *" : "")
            << "\n";
    }

    const CounterfactualVocab cf = build_counterfactual_vocab(ds, ds.cls);
    save_checkpoint(o.ckpt, *model, res.table, cf, opt.get(), epoch_offset + res.epochs_run);
    std::cerr << "trained " << res.epochs_run << " epochs (best "
              << (epoch_offset + res.best_epoch) << ", val_ce " << res.best_val_ce
              << "); checkpoint -> " << o.ckpt << "\n";
}

struct EvalOpts {
    std::string ckpt, data, synth, scenario = "rmfm", rates = "0:1:0.1";
    std::string smm_keep, split = "test", maci = "on", out;
    int cls = 2;
    std::uint64_t seed = 42, mask_seed = 0;
    int mask_repeats = 1;
    double tau = 0.0;
    CLI::Option *seed_opt = nullptr, *tau_opt = nullptr;
};

void run_eval(const EvalOpts& o) {
    LoadedModel lm = load_checkpoint(o.ckpt);
    ModelConfig cfg = lm.model.config();
    // The adjusted head's parameters are baked in by training, so the only
    // causal piece that can be toggled losslessly at inference is the
    // counterfactual subtraction.
    if (o.maci == "off") cfg.use_cf = false;
    if (o.tau_opt->count() > 0) cfg.tau = o.tau;
    CiderModel model(cfg, lm.model.vocab(), lm.model.d_a(), lm.model.d_v(), lm.model.cls());
    model.params() = lm.model.params();

    const Dataset ds =
        resolve_dataset(o.data, o.synth, o.cls, resolve_seed(o.seed_opt, o.seed));
    check_dims(model, ds);

    RobustnessSpec spec;
    spec.scenario = scenario_from_name(o.scenario);
    spec.rates = parse_rates(o.rates);
    spec.split = parse_split(o.split);
    spec.mask_seed = o.mask_seed;
    spec.mask_repeats = o.mask_repeats;
    if (spec.scenario == Scenario::SMM) {
        if (o.smm_keep.empty())
            throw std::runtime_error("--scenario smm needs --smm-keep (e.g. l,a)");
        spec.smm_keep = parse_pick(o.smm_keep);
    }

    const ClassPriorTable table = test_mode(lm.table);
    const RobustnessResult res = run_robustness_eval(model, ds, table, &lm.cf_vocab, spec);
    save_robustness_csv(res, o.out);
    std::cerr << "wrote " << res.points.size() << " rates -> " << o.out << "\n";

    nlohmann::json j;
    j["scenario"] = scenario_name(res.scenario);
    j["rates"] = res.points.size();
    j["csv"] = o.out;
    try {
        j["auilc"] = {{"acc2", auilc(res.acc2)}, {"f1", auilc(res.f1)}, {"acc7", auilc(res.acc7)}};
    } catch (const std::invalid_argument&) {
        std::cerr << "rates do not span [0, 1]; no area reported\n";
    }
    std::cout << j.dump(2) << "\n";
}

void run_auilc(const std::string& in) {
    const std::vector<NamedCurves> groups = load_robustness_csv(in);
    nlohmann::json j;
    for (const NamedCurves& g : groups)
        j[g.scenario] = {{"acc2", auilc(g.acc2)}, {"f1", auilc(g.f1)}, {"acc7", auilc(g.acc7)}};
    std::cout << j.dump(2) << "\n";
}

struct VocabOpts {
    std::string data, synth, out;
    int cls = 2;
    std::uint64_t seed = 42;
    CLI::Option* seed_opt = nullptr;
};

void run_build_vocab(const VocabOpts& o) {
    const Dataset ds = resolve_dataset(o.data, o.synth, o.cls, resolve_seed(o.seed_opt, o.seed));
    const CounterfactualVocab vocab = build_counterfactual_vocab(ds, ds.cls);
    save_cf_vocab(vocab, o.out);
    std::cerr << "wrote " << vocab.stats.size() << " tokens (" << vocab.retained.size()
              << " retained) -> " << o.out << "\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"multimodal emotion recognition with missing-modality robustness"};
    app.require_subcommand(1);

    auto synth = std::make_shared<SynthOpts>();
    CLI::App* synth_cmd = app.add_subcommand("synth", "generate a synthetic feature file");
    synth_cmd->add_option("--n", synth->n, "sample count")->required()->check(CLI::PositiveNumber);
    synth_cmd->add_option("--cls", synth->cls, "class count")->check(CLI::IsMember({2, 7}));
    synth_cmd->add_option("--bias", synth->bias, "label/text bias strength")
        ->check(CLI::Range(0.0, 1.0));
    synth_cmd->add_flag("--aligned", synth->aligned,
                        "equal sequence lengths across modalities (tmfm/stmfm)");
    synth->seed_opt = synth_cmd->add_option("--seed", synth->seed, "generator seed");
    synth_cmd->add_option("--out", synth->out, "output feature file")->required();
    synth_cmd->callback([synth] { run_synth(*synth); });

    auto train = std::make_shared<TrainOpts>();
    CLI::App* train_cmd = app.add_subcommand("train", "train a model and write a checkpoint");
    train_cmd->add_option("--data", train->data, "feature file");
    train_cmd->add_option("--synth", train->synth, "synthetic source, n=..,cls=..,bias=..[,aligned=1]");
    train_cmd->add_option("--cls", train->cls, "class count for --data")
        ->check(CLI::IsMember({2, 7}));
    train_cmd->add_option("--config", train->config, "flat key=value config file");
    train_cmd->add_option("--ckpt", train->ckpt, "checkpoint output path")->required();
    train_cmd->add_option("--log", train->log_path, "per-epoch loss log (default <ckpt>.log)");
    train_cmd->add_option("--resume", train->resume, "continue from an existing checkpoint");
    train->model_cli = std::make_unique<ModelCli>(train_cmd, train->cfg);
    train_cmd->callback([train] { run_train(*train); });

    auto ev = std::make_shared<EvalOpts>();
    CLI::App* eval_cmd =
        app.add_subcommand("eval-robustness", "evaluate a checkpoint over missing rates");
    eval_cmd->add_option("--ckpt", ev->ckpt, "trained checkpoint")->required();
    eval_cmd->add_option("--data", ev->data, "feature file");
    eval_cmd->add_option("--synth", ev->synth, "synthetic source, n=..,cls=..,bias=..[,aligned=1]");
    eval_cmd->add_option("--cls", ev->cls, "class count for --data")->check(CLI::IsMember({2, 7}));
    ev->seed_opt = eval_cmd->add_option("--seed", ev->seed, "synthetic data seed");
    eval_cmd->add_option("--scenario", ev->scenario, "corruption scenario")
        ->check(CLI::IsMember({"rmfm", "trad-rmfm", "rmm", "tmfm", "stmfm", "smm"}));
    eval_cmd->add_option("--rates", ev->rates, "start:end:step grid or comma list");
    eval_cmd->add_option("--smm-keep", ev->smm_keep, "modalities kept under smm, e.g. l,a");
    eval_cmd->add_option("--split", ev->split, "dataset split to score")
        ->check(CLI::IsMember({"train", "valid", "test"}));
    eval_cmd->add_option("--mask-seed", ev->mask_seed, "corruption seed");
    eval_cmd->add_option("--mask-repeats", ev->mask_repeats, "corruption draws per sample")
        ->check(CLI::PositiveNumber);
    eval_cmd->add_option("--maci", ev->maci,
                         "on|off: counterfactual debiasing at inference")
        ->check(CLI::IsMember({"on", "off"}));
    ev->tau_opt = eval_cmd->add_option("--tau", ev->tau, "override debiasing strength");
    eval_cmd->add_option("--out", ev->out, "robustness CSV output path")->required();
    eval_cmd->callback([ev] { run_eval(*ev); });

    auto auilc_in = std::make_shared<std::string>();
    CLI::App* auilc_cmd =
        app.add_subcommand("auilc", "integrate robustness curves from a CSV");
    auilc_cmd->add_option("--in", *auilc_in, "robustness CSV")->required();
    auilc_cmd->callback([auilc_in] { run_auilc(*auilc_in); });

    auto vocab = std::make_shared<VocabOpts>();
    CLI::App* vocab_cmd =
        app.add_subcommand("build-cf-vocab", "extract the counterfactual vocabulary");
    vocab_cmd->add_option("--data", vocab->data, "feature file");
    vocab_cmd->add_option("--synth", vocab->synth, "synthetic source, n=..,cls=..,bias=..[,aligned=1]");
    vocab_cmd->add_option("--cls", vocab->cls, "class count for --data")
        ->check(CLI::IsMember({2, 7}));
    vocab->seed_opt = vocab_cmd->add_option("--seed", vocab->seed, "synthetic data seed");
    vocab_cmd->add_option("--out", vocab->out, "vocabulary output path")->required();
    vocab_cmd->callback([vocab] { run_build_vocab(*vocab); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
