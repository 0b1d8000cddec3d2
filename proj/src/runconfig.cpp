#include "taubno/runconfig.hpp"

#include <algorithm>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <thread>

#include "taubno/common.hpp"

namespace taubno {

const char* const kTaubnoVersion = "0.1.0";

namespace {

// Defaults are read off the live structs so the two can never drift apart.
nlohmann::json default_values() {
    DatasetConfig dc;
    const KineticParams& k = dc.base;
    const LambdaRanges& r = dc.ranges;
    SolverOptions s; // library defaults, not the relaxed dataset copy
    TauBnoConfig m;
    TrainConfig t;

    nlohmann::json v = nlohmann::json::object();
    v["kinetics.beta"] = k.beta;
    v["kinetics.gamma2"] = k.gamma2;
    v["kinetics.phi"] = k.phi;
    v["kinetics.f_frac"] = k.f_frac;
    v["kinetics.delta"] = k.delta;
    v["kinetics.epsilon"] = k.epsilon;
    v["kinetics.diffusivity"] = k.diffusivity;

    v["ranges.f_lo"] = r.f_lo;
    v["ranges.f_mix"] = r.f_mix;
    v["ranges.f_hi"] = r.f_hi;
    v["ranges.gamma_lo"] = r.gamma_lo;
    v["ranges.gamma_hi"] = r.gamma_hi;
    v["ranges.delta_lo"] = r.delta_lo;
    v["ranges.delta_hi"] = r.delta_hi;
    v["ranges.epsilon_lo"] = r.epsilon_lo;
    v["ranges.epsilon_hi"] = r.epsilon_hi;
    v["ranges.mu_lo"] = r.mu_lo;
    v["ranges.mu_hi"] = r.mu_hi;

    v["solver.edge_rtol"] = s.edge_rtol;
    v["solver.edge_atol"] = s.edge_atol;
    v["solver.node_rtol"] = s.node_rtol;
    v["solver.node_atol"] = s.node_atol;
    v["solver.max_shoot_iter"] = s.max_shoot_iter;
    v["solver.edge_length"] = s.edge_length;
    v["solver.node_h_min"] = s.node_h_min;

    v["dataset.horizon"] = dc.horizon;
    v["dataset.n_steps"] = dc.n_steps;
    v["dataset.max_retries"] = dc.max_retries;

    v["model.hidden"] = m.hidden;
    v["model.modes"] = m.modes;
    v["model.layers_fo"] = m.layers_fo;
    v["model.layers_qo"] = m.layers_qo;
    v["model.layers_dgo"] = m.layers_dgo;
    v["model.t_out"] = m.t_out;
    v["model.no_fo"] = m.no_fo;
    v["model.no_qo"] = m.no_qo;
    v["model.no_dgo"] = m.no_dgo;
    v["model.no_fourier"] = m.no_fourier;
    v["model.no_diff"] = m.no_diff;

    v["train.epochs"] = t.epochs;
    v["train.batch_size"] = t.batch_size;
    v["train.lr0"] = t.lr0;
    v["train.lr_min"] = t.lr_min;
    v["train.weight_decay"] = t.weight_decay;
    v["train.model_seed"] = 0;   // model initialization stream
    v["train.shuffle_seed"] = 0; // mini-batch shuffle stream

    v["run.jobs"] = 0; // 0 = TAUBNO_JOBS, else hardware concurrency

    return v;
}

bool type_compatible(const nlohmann::json& def, const nlohmann::json& val) {
    if (def.is_boolean()) return val.is_boolean();
    if (def.is_string()) return val.is_string();
    if (def.is_number()) return val.is_number();
    return def.type() == val.type();
}

} // namespace

RunConfig::RunConfig() : values_(default_values()) {}

void RunConfig::merge_json(const nlohmann::json& obj, const std::string& origin) {
    if (!obj.is_object())
        throw ConfigError("config from " + origin + " must be a JSON object of dotted keys");
    for (const auto& [key, val] : obj.items()) {
        auto it = values_.find(key);
        if (it == values_.end())
            throw ConfigError("unknown config key '" + key + "' (from " + origin + ")");
        if (!type_compatible(*it, val))
            throw ConfigError("config key '" + key + "' (from " + origin + "): expected " +
                              std::string(it->type_name()) + ", got " +
                              std::string(val.type_name()));
        *it = val;
        if (std::find(touched_.begin(), touched_.end(), key) == touched_.end())
            touched_.push_back(key);
    }
}

void RunConfig::merge_file(const std::string& path) {
    nlohmann::json obj = nlohmann::json::parse(read_text_file(path), nullptr, false);
    if (obj.is_discarded()) throw ConfigError("config file " + path + ": invalid JSON");
    merge_json(obj, path);
}

void RunConfig::merge_override(const std::string& key, const std::string& raw_value) {
    nlohmann::json val = nlohmann::json::parse(raw_value, nullptr, false);
    if (val.is_discarded() || val.is_object() || val.is_array())
        val = raw_value; // plain strings (paths, names) arrive unquoted
    nlohmann::json obj = nlohmann::json::object();
    obj[key] = val;
    merge_json(obj, "command line");
}

bool RunConfig::has(const std::string& key) const { return values_.contains(key); }

bool RunConfig::touched(const std::string& key) const {
    return std::find(touched_.begin(), touched_.end(), key) != touched_.end();
}

double RunConfig::num(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    if (!it->is_number()) throw ConfigError("config key '" + key + "' is not numeric");
    return it->get<double>();
}

int RunConfig::integer(const std::string& key) const {
    double d = num(key);
    int i = static_cast<int>(d);
    if (static_cast<double>(i) != d)
        throw ConfigError("config key '" + key + "' must be an integer");
    return i;
}

bool RunConfig::flag(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    if (!it->is_boolean()) throw ConfigError("config key '" + key + "' is not boolean");
    return it->get<bool>();
}

std::string RunConfig::str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    if (!it->is_string()) throw ConfigError("config key '" + key + "' is not a string");
    return it->get<std::string>();
}

std::string RunConfig::config_hash() const {
    // nlohmann objects iterate in sorted key order, so dump() is canonical.
    return to_hex(fnv1a64(values_.dump()));
}

KineticParams RunConfig::base_kinetics() const {
    KineticParams k;
    k.beta = num("kinetics.beta");
    k.gamma2 = num("kinetics.gamma2");
    k.phi = num("kinetics.phi");
    k.f_frac = num("kinetics.f_frac");
    k.delta = num("kinetics.delta");
    k.epsilon = num("kinetics.epsilon");
    k.diffusivity = num("kinetics.diffusivity");
    return k;
}

LambdaRanges RunConfig::lambda_ranges() const {
    LambdaRanges r;
    r.f_lo = num("ranges.f_lo");
    r.f_mix = num("ranges.f_mix");
    r.f_hi = num("ranges.f_hi");
    r.gamma_lo = num("ranges.gamma_lo");
    r.gamma_hi = num("ranges.gamma_hi");
    r.delta_lo = num("ranges.delta_lo");
    r.delta_hi = num("ranges.delta_hi");
    r.epsilon_lo = num("ranges.epsilon_lo");
    r.epsilon_hi = num("ranges.epsilon_hi");
    r.mu_lo = num("ranges.mu_lo");
    r.mu_hi = num("ranges.mu_hi");
    return r;
}

SolverOptions RunConfig::solver_options() const {
    SolverOptions s;
    s.edge_rtol = num("solver.edge_rtol");
    s.edge_atol = num("solver.edge_atol");
    s.node_rtol = num("solver.node_rtol");
    s.node_atol = num("solver.node_atol");
    s.max_shoot_iter = integer("solver.max_shoot_iter");
    s.edge_length = num("solver.edge_length");
    s.node_h_min = num("solver.node_h_min");
    return s;
}

DatasetConfig RunConfig::dataset_config() const {
    DatasetConfig dc; // carries the relaxed generation tolerances
    dc.base = base_kinetics();
    dc.ranges = lambda_ranges();
    dc.horizon = num("dataset.horizon");
    dc.n_steps = integer("dataset.n_steps");
    dc.max_retries = integer("dataset.max_retries");
    SolverOptions tuned = solver_options();
    for (const std::string& key : touched_) {
        if (key == "solver.edge_rtol") dc.solver.edge_rtol = tuned.edge_rtol;
        else if (key == "solver.edge_atol") dc.solver.edge_atol = tuned.edge_atol;
        else if (key == "solver.node_rtol") dc.solver.node_rtol = tuned.node_rtol;
        else if (key == "solver.node_atol") dc.solver.node_atol = tuned.node_atol;
        else if (key == "solver.max_shoot_iter") dc.solver.max_shoot_iter = tuned.max_shoot_iter;
        else if (key == "solver.edge_length") dc.solver.edge_length = tuned.edge_length;
        else if (key == "solver.node_h_min") dc.solver.node_h_min = tuned.node_h_min;
    }
    return dc;
}

TauBnoConfig RunConfig::model_config() const {
    TauBnoConfig m;
    m.hidden = integer("model.hidden");
    m.modes = integer("model.modes");
    m.layers_fo = integer("model.layers_fo");
    m.layers_qo = integer("model.layers_qo");
    m.layers_dgo = integer("model.layers_dgo");
    m.t_out = integer("model.t_out");
    m.no_fo = flag("model.no_fo");
    m.no_qo = flag("model.no_qo");
    m.no_dgo = flag("model.no_dgo");
    m.no_fourier = flag("model.no_fourier");
    m.no_diff = flag("model.no_diff");
    return m;
}

TrainConfig RunConfig::train_config() const {
    TrainConfig t;
    t.epochs = integer("train.epochs");
    t.batch_size = integer("train.batch_size");
    t.lr0 = num("train.lr0");
    t.lr_min = num("train.lr_min");
    t.weight_decay = num("train.weight_decay");
    t.seed = static_cast<unsigned long long>(integer("train.shuffle_seed"));
    return t;
}

int RunConfig::jobs() const {
    int j = integer("run.jobs");
    if (j > 0) return j;
    if (const char* env = std::getenv("TAUBNO_JOBS")) {
        char* end = nullptr;
        long n = std::strtol(env, &end, 10);
        if (end && *end == '\0' && n > 0) return static_cast<int>(n);
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

void write_provenance(const std::string& out_dir, const std::string& command,
                      const RunConfig& cfg,
                      const std::vector<std::pair<std::string, std::string>>& extras) {
    std::filesystem::create_directories(out_dir);

    char stamp[32];
    std::time_t now = std::time(nullptr);
    std::tm tm_utc{};
    gmtime_r(&now, &tm_utc);
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", &tm_utc);

    nlohmann::json j;
    j["command"] = command;
    j["version"] = kTaubnoVersion;
    j["timestamp_utc"] = stamp;
    j["config_hash"] = cfg.config_hash();
    j["config"] = cfg.values();
    for (const auto& [key, val] : extras) j[key] = val;

    write_text_file((std::filesystem::path(out_dir) / "provenance.json").string(),
                    j.dump(2) + "\n");
}

} // namespace taubno
