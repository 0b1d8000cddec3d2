// taubno: command-line front end for the transport simulator and the
// neural-operator surrogate. Subcommands: make-connectome, simulate,
// gen-dataset, train, predict, evaluate, ablate.
//
// Exit codes: 0 success, 2 usage error, 3 I/O error, 4 invalid
// configuration or data, 5 hash mismatch, 6 numerical failure, 1 other.
// Failures print one JSON object {"error": kind, "message": text} to stderr.

#include <array>
#include <filesystem>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "taubno/common.hpp"
#include "taubno/connectome.hpp"
#include "taubno/dataset.hpp"
#include "taubno/eval.hpp"
#include "taubno/kinetics.hpp"
#include "taubno/model.hpp"
#include "taubno/runconfig.hpp"
#include "taubno/seeding.hpp"
#include "taubno/solver.hpp"

namespace fs = std::filesystem;
using namespace taubno;

namespace {

// ---------------------------------------------------------------------------
// Option plumbing

// Every subcommand accepts --config FILE plus one --<dotted.key> flag per
// config key; flags are applied after the file, in command-line order, so
// flags win and the last repetition wins.
struct CommonOpts {
    std::string config_file;
    std::vector<std::pair<std::string, std::string>> overrides;

    void push(const std::string& key, const std::string& raw) {
        overrides.emplace_back(key, raw);
    }
};

void add_config_options(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config_file, "JSON config file of dotted keys");
    static const RunConfig defaults; // key listing only
    for (const auto& item : defaults.values().items()) {
        const std::string key = item.key();
        cmd->add_option_function<std::string>(
            "--" + key, [&o, key](const std::string& raw) { o.push(key, raw); },
            "config key (overrides --config)")
            ->group("Config keys");
    }
}

RunConfig build_config(const CommonOpts& o) {
    RunConfig cfg;
    if (!o.config_file.empty()) cfg.merge_file(o.config_file);
    for (const auto& [key, raw] : o.overrides) cfg.merge_override(key, raw);
    return cfg;
}

// ---------------------------------------------------------------------------
// Small helpers

LambdaVector parse_lambda(const std::string& s) {
    std::array<double, 5> a{};
    std::stringstream ss(s);
    std::string tok;
    size_t i = 0;
    while (std::getline(ss, tok, ',')) {
        if (i >= 5) throw ValidationError("--lambda expects 5 comma-separated values");
        try {
            size_t pos = 0;
            a[i] = std::stod(tok, &pos);
            while (pos < tok.size() && std::isspace(static_cast<unsigned char>(tok[pos]))) ++pos;
            if (pos != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
            throw ValidationError("--lambda: cannot parse '" + tok + "' as a number");
        }
        ++i;
    }
    if (i != 5)
        throw ValidationError("--lambda expects 5 comma-separated values, got " +
                              std::to_string(i));
    return LambdaVector::from_array(a);
}

Connectome load_connectome_at(const std::string& dir_or_file) {
    fs::path p(dir_or_file);
    if (fs::is_directory(p)) p /= "connectome.csv";
    return load_connectome(p.string());
}

const SeedSpec& pick_seed(const std::vector<SeedSpec>& library, const std::string& name,
                          const std::string& path) {
    if (library.empty()) throw ValidationError("seed library " + path + " is empty");
    if (name.empty()) return library.front();
    for (const SeedSpec& s : library)
        if (s.name == name) return s;
    throw ValidationError("seed pattern '" + name + "' not found in " + path);
}

std::string parent_dir_of(const std::string& file_path) {
    fs::path parent = fs::path(file_path).parent_path();
    return parent.empty() ? std::string(".") : parent.string();
}

void ensure_parent_dir(const std::string& file_path) {
    fs::path parent = fs::path(file_path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
}

std::string meta_path_for(const std::string& csv_path) {
    fs::path p(csv_path);
    p.replace_extension(); // drop .csv
    return p.string() + ".meta.json";
}

void write_matrix_csv(const std::string& path, const Mat& m) {
    std::ostringstream os;
    for (int r = 0; r < m.rows(); ++r) {
        for (int c = 0; c < m.cols(); ++c) {
            if (c) os << ',';
            os << format_double(m(r, c));
        }
        os << '\n';
    }
    write_text_file(path, os.str());
}

// Dataset trajectories fix the model's output length; an explicit
// model.t_out must agree with the data.
void reconcile_t_out(TauBnoConfig& mcfg, const SplitData& train, const RunConfig& cfg) {
    if (train.truth.empty()) throw ValidationError("training split is empty");
    int t_data = train.truth.front().cols();
    if (cfg.touched("model.t_out") && cfg.integer("model.t_out") != t_data)
        throw ValidationError("model.t_out=" + std::to_string(cfg.integer("model.t_out")) +
                              " does not match the dataset trajectory length " +
                              std::to_string(t_data));
    mcfg.t_out = t_data;
}

// ---------------------------------------------------------------------------
// Subcommands

struct MakeConnectomeOpts {
    CommonOpts common;
    int v = 16;
    int n_coarse = 4;
    unsigned long long seed = 1234;
    std::string out_dir;
};

int cmd_make_connectome(const MakeConnectomeOpts& o, const std::string& argv_line) {
    RunConfig cfg = build_config(o.common);
    Connectome c = make_synthetic_connectome(o.v, o.n_coarse, o.seed);
    fs::create_directories(o.out_dir);
    fs::path dir(o.out_dir);
    save_connectome(c, (dir / "connectome.csv").string(), (dir / "connectome.meta.json").string());
    write_provenance(o.out_dir, argv_line, cfg,
                     {{"n_regions", std::to_string(o.v)},
                      {"n_coarse", std::to_string(o.n_coarse)},
                      {"connectome_seed", std::to_string(o.seed)},
                      {"ordering_hash", c.ordering_hash}});
    return 0;
}

struct SimulateOpts {
    CommonOpts common;
    std::string connectome, lambda_str, seeds_path, out_csv, seed_name;
};

int cmd_simulate(const SimulateOpts& o, const std::string& argv_line) {
    RunConfig cfg = build_config(o.common);
    Connectome c = load_connectome_at(o.connectome);
    std::vector<SeedSpec> library = load_seed_library(o.seeds_path, c.n_regions);
    const SeedSpec& seed = pick_seed(library, o.seed_name, o.seeds_path);
    LambdaVector lv = parse_lambda(o.lambda_str);
    SolverOptions opt = cfg.solver_options();

    Trajectory t = simulate(c, lv, cfg.base_kinetics(), seed, cfg.num("dataset.horizon"),
                            cfg.integer("dataset.n_steps"), opt);

    ensure_parent_dir(o.out_csv);
    save_trajectory(t, o.out_csv, meta_path_for(o.out_csv), c.ordering_hash, opt);
    write_provenance(parent_dir_of(o.out_csv), argv_line, cfg,
                     {{"connectome", o.connectome},
                      {"seeds", o.seeds_path},
                      {"seed_name", seed.name},
                      {"lambda", o.lambda_str},
                      {"ordering_hash", c.ordering_hash},
                      {"clamp_count", std::to_string(t.clamp_count)},
                      {"out", o.out_csv}});
    return 0;
}

struct GenDatasetOpts {
    CommonOpts common;
    std::string connectome, seeds_path, out_dir;
    int n = 200;
    unsigned long long master_seed = 42;
};

int cmd_gen_dataset(const GenDatasetOpts& o, const std::string& argv_line) {
    RunConfig cfg = build_config(o.common);
    Connectome c = load_connectome_at(o.connectome);
    std::vector<SeedSpec> library = load_seed_library(o.seeds_path, c.n_regions);

    Manifest m = generate_dataset(o.n, c, library, cfg.dataset_config(), o.master_seed,
                                  o.out_dir, cfg.jobs());

    write_provenance(o.out_dir, argv_line, cfg,
                     {{"connectome", o.connectome},
                      {"seeds", o.seeds_path},
                      {"n_samples", std::to_string(o.n)},
                      {"master_seed", std::to_string(o.master_seed)},
                      {"ordering_hash", m.ordering_hash},
                      {"dataset_config_hash", m.config_hash}});
    return 0;
}

struct TrainOpts {
    CommonOpts common;
    std::string data_dir, connectome, out_dir;
    bool verbose = false;
};

int cmd_train(const TrainOpts& o, const std::string& argv_line) {
    RunConfig cfg = build_config(o.common);
    Connectome c = load_connectome_at(o.connectome);
    Manifest m = load_manifest(o.data_dir);
    if (m.ordering_hash != c.ordering_hash)
        throw HashMismatchError("dataset ordering hash " + m.ordering_hash +
                                " does not match connectome " + c.ordering_hash);
    SplitData train = load_split(o.data_dir, m, Split::Train, c.ordering_hash);
    SplitData val = load_split(o.data_dir, m, Split::Val, c.ordering_hash);

    TauBnoConfig mcfg = cfg.model_config();
    reconcile_t_out(mcfg, train, cfg);

    std::mt19937_64 rng(static_cast<unsigned long long>(cfg.integer("train.model_seed")));
    TauBnoModel model(mcfg, c, rng);

    TrainConfig tcfg = cfg.train_config();
    fs::create_directories(o.out_dir);
    fs::path dir(o.out_dir);
    tcfg.log_path = (dir / "train_log.csv").string();
    tcfg.ckpt_dir = o.out_dir;
    tcfg.verbose = o.verbose;

    TrainResult res = train_model(model, train, val, tcfg);

    std::vector<std::pair<std::string, std::string>> extras = {
        {"data", o.data_dir},
        {"connectome", o.connectome},
        {"model_seed", std::to_string(cfg.integer("train.model_seed"))},
        {"shuffle_seed", std::to_string(cfg.integer("train.shuffle_seed"))},
        {"best_epoch", std::to_string(res.best_epoch)},
        {"best_val_loss", format_double(res.best_val)},
        {"ordering_hash", c.ordering_hash},
    };
    if (fs::exists(dir / "model.bin"))
        extras.emplace_back("ckpt_hash", file_fnv((dir / "model.bin").string()));
    write_provenance(o.out_dir, argv_line, cfg, extras);
    return 0;
}

struct PredictOpts {
    CommonOpts common;
    std::string ckpt_dir, u0_path, lambda_str, out_csv;
};

int cmd_predict(const PredictOpts& o, const std::string& argv_line) {
    RunConfig cfg = build_config(o.common);
    TauBnoModel model = TauBnoModel::load(o.ckpt_dir);

    std::vector<double> u0;
    for (const auto& row : read_csv_matrix(o.u0_path))
        u0.insert(u0.end(), row.begin(), row.end());
    if (static_cast<int>(u0.size()) != model.config().v)
        throw ValidationError("--u0 has " + std::to_string(u0.size()) + " values; checkpoint expects " +
                              std::to_string(model.config().v));

    Mat pred = model.predict(u0, parse_lambda(o.lambda_str));
    ensure_parent_dir(o.out_csv);
    write_matrix_csv(o.out_csv, pred);
    write_provenance(parent_dir_of(o.out_csv), argv_line, cfg,
                     {{"ckpt", o.ckpt_dir},
                      {"ckpt_hash", file_fnv((fs::path(o.ckpt_dir) / "model.bin").string())},
                      {"u0", o.u0_path},
                      {"lambda", o.lambda_str},
                      {"out", o.out_csv}});
    return 0;
}

struct EvaluateOpts {
    CommonOpts common;
    std::string ckpt_dir, data_dir, out_dir, connectome;
    std::string split = "test";
};

int cmd_evaluate(const EvaluateOpts& o, const std::string& argv_line) {
    RunConfig cfg = build_config(o.common);
    TauBnoModel model = TauBnoModel::load(o.ckpt_dir);
    Manifest m = load_manifest(o.data_dir);
    SplitData sd = load_split(o.data_dir, m, split_from_name(o.split),
                              model.config().ordering_hash);

    EvalReport rep = evaluate_split(model, sd);
    rep.config_hash = cfg.config_hash();
    rep.ckpt_hash = file_fnv((fs::path(o.ckpt_dir) / "model.bin").string());
    emit_report(rep, o.out_dir);

    if (!o.connectome.empty()) {
        Connectome c = load_connectome_at(o.connectome);
        if (c.ordering_hash != model.config().ordering_hash)
            throw HashMismatchError("connectome ordering hash " + c.ordering_hash +
                                    " does not match checkpoint " + model.config().ordering_hash);
        Mat pred = model.predict(sd.u0.front(), sd.lambda.front());
        write_coarse_trajectory((fs::path(o.out_dir) / "coarse_first_sample.csv").string(),
                                pred, c);
    }

    write_provenance(o.out_dir, argv_line, cfg,
                     {{"ckpt", o.ckpt_dir},
                      {"ckpt_hash", rep.ckpt_hash},
                      {"data", o.data_dir},
                      {"split", o.split},
                      {"rmse", format_double(rep.rmse)},
                      {"rel_l2", format_double(rep.rel_l2)},
                      {"r2_pooled", format_double(rep.r2_pooled)}});
    return 0;
}

struct AblateOpts {
    CommonOpts common;
    std::string data_dir, connectome, out_dir;
    std::vector<std::string> variants;
    bool verbose = false;
};

int cmd_ablate(const AblateOpts& o, const std::string& argv_line) {
    RunConfig cfg = build_config(o.common);
    Connectome c = load_connectome_at(o.connectome);
    Manifest m = load_manifest(o.data_dir);
    if (m.ordering_hash != c.ordering_hash)
        throw HashMismatchError("dataset ordering hash " + m.ordering_hash +
                                " does not match connectome " + c.ordering_hash);
    SplitData train = load_split(o.data_dir, m, Split::Train, c.ordering_hash);
    SplitData val = load_split(o.data_dir, m, Split::Val, c.ordering_hash);
    SplitData test = load_split(o.data_dir, m, Split::Test, c.ordering_hash);

    TauBnoConfig mcfg = apply_ablation(cfg.model_config(), o.variants);
    reconcile_t_out(mcfg, train, cfg);

    std::mt19937_64 rng(static_cast<unsigned long long>(cfg.integer("train.model_seed")));
    TauBnoModel model(mcfg, c, rng);

    TrainConfig tcfg = cfg.train_config();
    fs::path dir(o.out_dir);
    fs::create_directories(dir / "ckpt");
    tcfg.log_path = (dir / "train_log.csv").string();
    tcfg.ckpt_dir = (dir / "ckpt").string();
    tcfg.verbose = o.verbose;

    TrainResult res = train_model(model, train, val, tcfg);

    TauBnoModel best = TauBnoModel::load(tcfg.ckpt_dir);
    EvalReport rep = evaluate_split(best, test);
    rep.config_hash = cfg.config_hash();
    rep.ckpt_hash = file_fnv((dir / "ckpt" / "model.bin").string());
    emit_report(rep, o.out_dir);

    std::string joined;
    for (const std::string& v : o.variants) joined += (joined.empty() ? "" : ",") + v;
    write_provenance(o.out_dir, argv_line, cfg,
                     {{"variants", joined},
                      {"data", o.data_dir},
                      {"connectome", o.connectome},
                      {"model_seed", std::to_string(cfg.integer("train.model_seed"))},
                      {"shuffle_seed", std::to_string(cfg.integer("train.shuffle_seed"))},
                      {"best_epoch", std::to_string(res.best_epoch)},
                      {"best_val_loss", format_double(res.best_val)},
                      {"ckpt_hash", rep.ckpt_hash},
                      {"test_rmse", format_double(rep.rmse)},
                      {"test_rel_l2", format_double(rep.rel_l2)}});
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    std::string argv_line;
    for (int i = 0; i < argc; ++i) {
        if (i) argv_line += ' ';
        argv_line += argv[i];
    }

    CLI::App app{"taubno: brain-network tau transport simulation and neural-operator surrogate"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kTaubnoVersion));

    MakeConnectomeOpts mko;
    CLI::App* mk = app.add_subcommand("make-connectome", "Generate a synthetic connectome");
    mk->add_option("--v", mko.v, "number of regions")->capture_default_str();
    mk->add_option("--coarse", mko.n_coarse, "number of coarse regions")->capture_default_str();
    mk->add_option("--seed", mko.seed, "generator seed")->capture_default_str();
    mk->add_option("--out", mko.out_dir, "output directory")->required();
    add_config_options(mk, mko.common);

    SimulateOpts so;
    CLI::App* sim = app.add_subcommand("simulate", "Run one transport simulation");
    sim->add_option("--connectome", so.connectome, "connectome directory or CSV path")->required();
    sim->add_option("--lambda", so.lambda_str, "f,gamma,delta,epsilon,mu")->required();
    sim->add_option("--seeds", so.seeds_path, "seed library JSON")->required();
    sim->add_option("--seed-name", so.seed_name, "library entry to use (default: first)");
    sim->add_option_function<std::string>(
        "--horizon", [&so](const std::string& raw) { so.common.push("dataset.horizon", raw); },
        "simulation horizon in months (default 12)");
    sim->add_option_function<std::string>(
        "--steps", [&so](const std::string& raw) { so.common.push("dataset.n_steps", raw); },
        "output steps after t=0 (default 48)");
    sim->add_option("--out", so.out_csv, "output trajectory CSV")->required();
    add_config_options(sim, so.common);

    GenDatasetOpts go;
    CLI::App* gen = app.add_subcommand("gen-dataset", "Sample and simulate a training dataset");
    gen->add_option("--connectome", go.connectome, "connectome directory or CSV path")->required();
    gen->add_option("--seeds", go.seeds_path, "seed library JSON")->required();
    gen->add_option("--n", go.n, "number of samples")->capture_default_str();
    gen->add_option("--seed", go.master_seed, "master seed")->capture_default_str();
    gen->add_option("--out", go.out_dir, "output dataset directory")->required();
    gen->add_option_function<std::string>(
        "--jobs", [&go](const std::string& raw) { go.common.push("run.jobs", raw); },
        "parallel workers (default: TAUBNO_JOBS or hardware)");
    add_config_options(gen, go.common);

    TrainOpts to;
    CLI::App* tr = app.add_subcommand("train", "Train the surrogate on a dataset");
    tr->add_option("--data", to.data_dir, "dataset directory")->required();
    tr->add_option("--connectome", to.connectome, "connectome directory or CSV path")->required();
    tr->add_option_function<std::string>(
        "--epochs", [&to](const std::string& raw) { to.common.push("train.epochs", raw); },
        "training epochs");
    tr->add_option_function<std::string>(
        "--seed",
        [&to](const std::string& raw) {
            to.common.push("train.model_seed", raw);
            to.common.push("train.shuffle_seed", raw);
        },
        "sets both train.model_seed and train.shuffle_seed");
    tr->add_option("--out", to.out_dir, "checkpoint/log output directory")->required();
    tr->add_flag("--verbose", to.verbose, "per-epoch progress on stderr");
    add_config_options(tr, to.common);

    PredictOpts po;
    CLI::App* pr = app.add_subcommand("predict", "Predict one trajectory from a checkpoint");
    pr->add_option("--ckpt", po.ckpt_dir, "checkpoint directory")->required();
    pr->add_option("--u0", po.u0_path, "initial field CSV (V values)")->required();
    pr->add_option("--lambda", po.lambda_str, "f,gamma,delta,epsilon,mu")->required();
    pr->add_option("--out", po.out_csv, "output CSV (V rows x T columns)")->required();
    add_config_options(pr, po.common);

    EvaluateOpts eo;
    CLI::App* ev = app.add_subcommand("evaluate", "Evaluate a checkpoint on a dataset split");
    ev->add_option("--ckpt", eo.ckpt_dir, "checkpoint directory")->required();
    ev->add_option("--data", eo.data_dir, "dataset directory")->required();
    ev->add_option("--split", eo.split, "train|val|test")->capture_default_str();
    ev->add_option("--connectome", eo.connectome,
                   "connectome directory; adds a coarse-graining CSV of the first sample");
    ev->add_option("--out", eo.out_dir, "report output directory")->required();
    add_config_options(ev, eo.common);

    AblateOpts ao;
    CLI::App* ab = app.add_subcommand("ablate", "Train and evaluate an ablated variant");
    ab->add_option("--variant", ao.variants,
                   "no_fo|no_qo|no_dgo|no_fourier|no_diff (repeatable)")
        ->required();
    ab->add_option("--data", ao.data_dir, "dataset directory")->required();
    ab->add_option("--connectome", ao.connectome, "connectome directory or CSV path")->required();
    ab->add_option_function<std::string>(
        "--epochs", [&ao](const std::string& raw) { ao.common.push("train.epochs", raw); },
        "training epochs");
    ab->add_option_function<std::string>(
        "--seed",
        [&ao](const std::string& raw) {
            ao.common.push("train.model_seed", raw);
            ao.common.push("train.shuffle_seed", raw);
        },
        "sets both train.model_seed and train.shuffle_seed");
    ab->add_option("--out", ao.out_dir, "output directory (report + ckpt/)")->required();
    ab->add_flag("--verbose", ao.verbose, "per-epoch progress on stderr");
    add_config_options(ab, ao.common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e); // prints help, exit 0
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        nlohmann::json err{{"error", "UsageError"}, {"message", e.what()}};
        std::cerr << err.dump() << "\n";
        return 2;
    }

    const char* kind = "Error";
    std::string message;
    try {
        if (mk->parsed()) return cmd_make_connectome(mko, argv_line);
        if (sim->parsed()) return cmd_simulate(so, argv_line);
        if (gen->parsed()) return cmd_gen_dataset(go, argv_line);
        if (tr->parsed()) return cmd_train(to, argv_line);
        if (pr->parsed()) return cmd_predict(po, argv_line);
        if (ev->parsed()) return cmd_evaluate(eo, argv_line);
        if (ab->parsed()) return cmd_ablate(ao, argv_line);
        kind = "UsageError";
        message = "no subcommand selected";
        nlohmann::json err{{"error", kind}, {"message", message}};
        std::cerr << err.dump() << "\n";
        return 2;
    } catch (const IoError& e) {
        kind = "IoError";
        message = e.what();
    } catch (const ConfigError& e) {
        kind = "ConfigError";
        message = e.what();
    } catch (const ValidationError& e) {
        kind = "ValidationError";
        message = e.what();
    } catch (const HashMismatchError& e) {
        kind = "HashMismatchError";
        message = e.what();
    } catch (const NumericError& e) {
        kind = "NumericError";
        message = e.what();
    } catch (const std::exception& e) {
        kind = "Error";
        message = e.what();
    }
    nlohmann::json err{{"error", kind}, {"message", message}};
    std::cerr << err.dump() << "\n";
    if (std::string(kind) == "IoError") return 3;
    if (std::string(kind) == "ConfigError" || std::string(kind) == "ValidationError") return 4;
    if (std::string(kind) == "HashMismatchError") return 5;
    if (std::string(kind) == "NumericError") return 6;
    return 1;
}
