#pragma once

#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "taubno/connectome.hpp"
#include "taubno/kinetics.hpp"
#include "taubno/seeding.hpp"
#include "taubno/solver.hpp"

namespace taubno {

// Sampling ranges for the five kinetic parameters. The production rate uses a
// two-component mixture: with probability 0.9 uniform on [f_lo, f_mix], else
// uniform on [f_mix, f_hi]. The remaining four are plain uniforms.
struct LambdaRanges {
    double f_lo = 0.0, f_mix = 1e-3, f_hi = 1e-2;
    double gamma_lo = 1e-3, gamma_hi = 8e-3;
    double delta_lo = 10.0, delta_hi = 100.0;
    double epsilon_lo = 10.0, epsilon_hi = 100.0;
    double mu_lo = 0.2, mu_hi = 3.2;
};

void validate_ranges(const LambdaRanges& r);

LambdaVector sample_lambda(std::mt19937_64& rng, const LambdaRanges& ranges = {});

// Analytic CDF of the production-rate mixture (used by distribution tests).
double lambda_f_cdf(double x, const LambdaRanges& ranges = {});

SeedSpec sample_seed(std::mt19937_64& rng, const std::vector<SeedSpec>& library);

enum class Split { Train, Val, Test };

const char* split_name(Split s);
Split split_from_name(const std::string& name);

struct DatasetConfig {
    LambdaRanges ranges;
    KineticParams base;   // constants shared by all samples; lambda overlays
    SolverOptions solver;
    double horizon = 12.0; // months
    int n_steps = 48;      // trajectory columns beyond t = 0 (0.25-month grid)
    int max_retries = 3;   // resampling attempts after a failed simulation

    DatasetConfig() {
        // Training targets need far less accuracy than the library defaults
        // aim for; relaxing both integrators cuts generation cost several-fold
        // while keeping trajectories accurate to ~1e-5 relative.
        solver.node_rtol = 1e-6;
        solver.node_atol = 1e-9;
        solver.edge_rtol = 1e-6;
        solver.edge_atol = 1e-8;
    }
};

nlohmann::json dataset_config_json(const DatasetConfig& cfg);

struct ManifestEntry {
    long id = 0;
    Split split = Split::Train;
    LambdaVector lambda;
    std::string seed_name;
};

struct Manifest {
    std::vector<ManifestEntry> samples;
    unsigned long long master_seed = 0;
    std::string config_hash;
    std::string ordering_hash;
};

std::string sample_dir(const std::string& data_dir, long id);

// Simulates n samples into data_dir/samples/<id>/{traj.csv, meta.json} and
// writes manifest.json. Sample i draws from an independent stream seeded with
// master_seed ^ i, so the result is identical for any worker count.
Manifest generate_dataset(int n_samples, const Connectome& c,
                          const std::vector<SeedSpec>& library, const DatasetConfig& cfg,
                          unsigned long long master_seed, const std::string& data_dir,
                          int jobs = 1);

void save_manifest(const Manifest& m, const std::string& data_dir);
Manifest load_manifest(const std::string& data_dir);

// In-memory view of one split: initial fields, raw lambdas, and the target
// trajectories (time columns 1..T; the t = 0 column is the model input).
struct SplitData {
    std::vector<long> ids;
    std::vector<std::vector<double>> u0;   // each length V
    std::vector<LambdaVector> lambda;
    std::vector<Mat> truth;                // each V x T
};

SplitData load_split(const std::string& data_dir, const Manifest& m, Split split,
                     const std::string& expected_ordering_hash = "");

} // namespace taubno
