#include "taubno/dataset.hpp"

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace taubno {

void validate_ranges(const LambdaRanges& r) {
    auto check = [](double lo, double hi, const char* name) {
        if (!(lo <= hi) || !std::isfinite(lo) || !std::isfinite(hi) || lo < 0.0)
            throw ConfigError(std::string("lambda range ") + name + " invalid: [" +
                              format_double(lo) + ", " + format_double(hi) + "]");
    };
    check(r.f_lo, r.f_mix, "f (lower component)");
    check(r.f_mix, r.f_hi, "f (upper component)");
    check(r.gamma_lo, r.gamma_hi, "gamma");
    check(r.delta_lo, r.delta_hi, "delta");
    check(r.epsilon_lo, r.epsilon_hi, "epsilon");
    check(r.mu_lo, r.mu_hi, "mu");
}

LambdaVector sample_lambda(std::mt19937_64& rng, const LambdaRanges& r) {
    validate_ranges(r);
    LambdaVector lv;
    // Fixed draw order keeps streams reproducible across call sites.
    const bool lower = u01(rng()) < 0.9;
    lv.lambda_f = lower ? uniform(rng, r.f_lo, r.f_mix) : uniform(rng, r.f_mix, r.f_hi);
    lv.lambda_gamma = uniform(rng, r.gamma_lo, r.gamma_hi);
    lv.lambda_delta = uniform(rng, r.delta_lo, r.delta_hi);
    lv.lambda_epsilon = uniform(rng, r.epsilon_lo, r.epsilon_hi);
    lv.lambda_mu = uniform(rng, r.mu_lo, r.mu_hi);
    return lv;
}

double lambda_f_cdf(double x, const LambdaRanges& r) {
    auto ramp = [](double x, double lo, double hi) {
        if (x <= lo) return 0.0;
        if (x >= hi) return 1.0;
        return (x - lo) / (hi - lo);
    };
    return 0.9 * ramp(x, r.f_lo, r.f_mix) + 0.1 * ramp(x, r.f_mix, r.f_hi);
}

SeedSpec sample_seed(std::mt19937_64& rng, const std::vector<SeedSpec>& library) {
    if (library.empty()) throw ValidationError("sample_seed: empty seed library");
    const size_t idx =
        std::min(library.size() - 1, static_cast<size_t>(u01(rng()) * library.size()));
    return library[idx];
}

const char* split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "?";
}

Split split_from_name(const std::string& name) {
    if (name == "train") return Split::Train;
    if (name == "val") return Split::Val;
    if (name == "test") return Split::Test;
    throw ValidationError("unknown split name: " + name);
}

nlohmann::json dataset_config_json(const DatasetConfig& cfg) {
    nlohmann::json j;
    j["ranges"] = {cfg.ranges.f_lo,    cfg.ranges.f_mix,      cfg.ranges.f_hi,
                   cfg.ranges.gamma_lo, cfg.ranges.gamma_hi,  cfg.ranges.delta_lo,
                   cfg.ranges.delta_hi, cfg.ranges.epsilon_lo, cfg.ranges.epsilon_hi,
                   cfg.ranges.mu_lo,    cfg.ranges.mu_hi};
    const KineticParams& k = cfg.base;
    j["base"] = {k.beta,    k.gamma1,     k.gamma2,    k.phi,      k.f_frac,
                 k.v_a,     k.v_r,        k.delta,     k.epsilon,  k.diffusivity,
                 k.mu_release, k.mu_uptake, k.f_source};
    j["solver"] = {cfg.solver.edge_rtol, cfg.solver.edge_atol, cfg.solver.node_rtol,
                   cfg.solver.node_atol, cfg.solver.edge_length};
    j["horizon"] = cfg.horizon;
    j["n_steps"] = cfg.n_steps;
    j["max_retries"] = cfg.max_retries;
    return j;
}

std::string sample_dir(const std::string& data_dir, long id) {
    return data_dir + "/samples/" + std::to_string(id);
}

namespace {

// Fisher-Yates on top of u01 so the permutation is identical on every
// platform (std::shuffle's draw pattern is implementation-defined).
void shuffle_indices(std::vector<int>& idx, std::mt19937_64& rng) {
    for (size_t i = idx.size(); i > 1; --i) {
        const size_t j = std::min(i - 1, static_cast<size_t>(u01(rng()) * i));
        std::swap(idx[i - 1], idx[j]);
    }
}

} // namespace

Manifest generate_dataset(int n_samples, const Connectome& c,
                          const std::vector<SeedSpec>& library, const DatasetConfig& cfg,
                          unsigned long long master_seed, const std::string& data_dir,
                          int jobs) {
    if (n_samples < 1) throw ValidationError("generate_dataset: need at least one sample");
    validate_ranges(cfg.ranges);
    validate_kinetics(cfg.base);
    if (library.empty()) throw ValidationError("generate_dataset: empty seed library");
    for (const auto& s : library) validate_seed_spec(s, c.n_regions);
    if (cfg.n_steps < 1) throw ValidationError("generate_dataset: n_steps must be positive");
    if (jobs < 1) jobs = 1;

    std::filesystem::create_directories(data_dir + "/samples");

    Manifest m;
    m.master_seed = master_seed;
    m.ordering_hash = c.ordering_hash;
    m.config_hash = to_hex(fnv1a64(dataset_config_json(cfg).dump()));
    m.samples.resize(n_samples);

    std::atomic<int> next{0};
    std::vector<std::string> errors(n_samples);
    auto worker = [&]() {
        for (int id = next.fetch_add(1); id < n_samples; id = next.fetch_add(1)) {
            std::mt19937_64 rng(master_seed ^ static_cast<unsigned long long>(id));
            std::string last_err;
            bool done = false;
            for (int attempt = 0; attempt <= cfg.max_retries && !done; ++attempt) {
                const LambdaVector lv = sample_lambda(rng, cfg.ranges);
                const SeedSpec seed = sample_seed(rng, library);
                try {
                    Trajectory t =
                        simulate(c, lv, cfg.base, seed, cfg.horizon, cfg.n_steps, cfg.solver);
                    const std::string dir = sample_dir(data_dir, id);
                    std::filesystem::create_directories(dir);
                    save_trajectory(t, dir + "/traj.csv", dir + "/meta.json", c.ordering_hash,
                                    cfg.solver);
                    m.samples[id].id = id;
                    m.samples[id].lambda = lv;
                    m.samples[id].seed_name = seed.name;
                    done = true;
                } catch (const NumericError& e) {
                    last_err = e.what();
                    std::fprintf(stderr, "gen-dataset: sample %d attempt %d failed: %s\n", id,
                                 attempt + 1, e.what());
                }
            }
            if (!done)
                errors[id] = "sample " + std::to_string(id) + " failed after " +
                             std::to_string(cfg.max_retries + 1) + " attempts: " + last_err;
        }
    };

    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    for (const auto& e : errors)
        if (!e.empty()) throw NumericError("generate_dataset: " + e);

    // Split sizes: floor(n/10) each for val and test, remainder trains.
    const int n_val = n_samples / 10, n_test = n_samples / 10;
    std::vector<int> order(n_samples);
    for (int i = 0; i < n_samples; ++i) order[i] = i;
    std::mt19937_64 split_rng(master_seed ^ 0x9e3779b97f4a7c15ull);
    shuffle_indices(order, split_rng);
    for (int i = 0; i < n_samples; ++i) {
        Split s = Split::Train;
        if (i < n_val)
            s = Split::Val;
        else if (i < n_val + n_test)
            s = Split::Test;
        m.samples[order[i]].split = s;
    }

    save_manifest(m, data_dir);
    return m;
}

void save_manifest(const Manifest& m, const std::string& data_dir) {
    nlohmann::json j;
    j["master_seed"] = m.master_seed;
    j["config_hash"] = m.config_hash;
    j["ordering_hash"] = m.ordering_hash;
    j["samples"] = nlohmann::json::array();
    for (const auto& s : m.samples)
        j["samples"].push_back({{"id", s.id},
                                {"split", split_name(s.split)},
                                {"lambda", s.lambda.as_array()},
                                {"seed_name", s.seed_name}});
    write_text_file(data_dir + "/manifest.json", j.dump(2) + "\n");
}

Manifest load_manifest(const std::string& data_dir) {
    const std::string path = data_dir + "/manifest.json";
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("malformed manifest " + path + ": " + e.what());
    }
    Manifest m;
    try {
        m.master_seed = j.at("master_seed").get<unsigned long long>();
        m.config_hash = j.at("config_hash").get<std::string>();
        m.ordering_hash = j.at("ordering_hash").get<std::string>();
        for (const auto& s : j.at("samples")) {
            ManifestEntry e;
            e.id = s.at("id").get<long>();
            e.split = split_from_name(s.at("split").get<std::string>());
            e.lambda = LambdaVector::from_array(s.at("lambda").get<std::array<double, 5>>());
            e.seed_name = s.at("seed_name").get<std::string>();
            m.samples.push_back(e);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("manifest " + path + " missing field: " + e.what());
    }
    return m;
}

SplitData load_split(const std::string& data_dir, const Manifest& m, Split split,
                     const std::string& expected_ordering_hash) {
    SplitData d;
    for (const auto& s : m.samples) {
        if (s.split != split) continue;
        const std::string dir = sample_dir(data_dir, s.id);
        Trajectory t =
            load_trajectory(dir + "/traj.csv", dir + "/meta.json", expected_ordering_hash);
        const int v = t.values.rows();
        const int cols = t.values.cols();
        if (cols < 2) throw ValidationError("sample " + std::to_string(s.id) + " too short");
        std::vector<double> u0(v);
        Mat truth(v, cols - 1);
        for (int i = 0; i < v; ++i) {
            u0[i] = t.values(i, 0);
            for (int j = 1; j < cols; ++j) truth(i, j - 1) = t.values(i, j);
        }
        d.ids.push_back(s.id);
        d.u0.push_back(std::move(u0));
        d.lambda.push_back(s.lambda);
        d.truth.push_back(std::move(truth));
    }
    return d;
}

} // namespace taubno
