#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>

#include "taubno/dataset.hpp"

using namespace taubno;

namespace {

struct TmpDir {
    std::filesystem::path path;
    TmpDir(const char* tag) {
        path = std::filesystem::temp_directory_path() /
               ("taubno_ds_" + std::string(tag) + "_" + std::to_string(::getpid()));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TmpDir() { std::filesystem::remove_all(path); }
    std::string str() const { return path.string(); }
};

std::string slurp(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

DatasetConfig quick_config() {
    DatasetConfig cfg;
    cfg.base.mu_release = cfg.base.mu_uptake = 1.0;
    cfg.horizon = 6.0;
    cfg.n_steps = 6;
    return cfg;
}

std::vector<SeedSpec> toy_library() {
    return {{"solo", {0}, {1.0}, 1.0}, {"pair", {1, 3}, {0.5, 0.5}, 1.0}};
}

} // namespace

TEST_CASE("degenerate ranges give a deterministic lambda") {
    LambdaRanges r;
    r.f_lo = r.f_mix = r.f_hi = 5e-4;
    r.gamma_lo = r.gamma_hi = 2e-3;
    r.delta_lo = r.delta_hi = 42.0;
    r.epsilon_lo = r.epsilon_hi = 17.0;
    r.mu_lo = r.mu_hi = 1.1;
    std::mt19937_64 rng(7);
    for (int i = 0; i < 5; ++i) {
        const LambdaVector lv = sample_lambda(rng, r);
        CHECK(lv.lambda_f == 5e-4);
        CHECK(lv.lambda_gamma == 2e-3);
        CHECK(lv.lambda_delta == 42.0);
        CHECK(lv.lambda_epsilon == 17.0);
        CHECK(lv.lambda_mu == 1.1);
    }
}

TEST_CASE("inverted range is rejected") {
    LambdaRanges r;
    r.mu_lo = 2.0;
    r.mu_hi = 1.0;
    std::mt19937_64 rng(1);
    CHECK_THROWS_AS(sample_lambda(rng, r), ConfigError);
}

TEST_CASE("production-rate mixture has the right weight and shape") {
    const LambdaRanges r;
    std::mt19937_64 rng(123);
    const int n = 10000;
    std::vector<double> fs(n);
    int in_lower = 0;
    for (int i = 0; i < n; ++i) {
        const LambdaVector lv = sample_lambda(rng, r);
        fs[i] = lv.lambda_f;
        if (lv.lambda_f <= 1e-3) ++in_lower;
        CHECK(lv.lambda_gamma >= r.gamma_lo);
        CHECK(lv.lambda_gamma <= r.gamma_hi);
        CHECK(lv.lambda_delta >= r.delta_lo);
        CHECK(lv.lambda_delta <= r.delta_hi);
        CHECK(lv.lambda_epsilon >= r.epsilon_lo);
        CHECK(lv.lambda_epsilon <= r.epsilon_hi);
        CHECK(lv.lambda_mu >= r.mu_lo);
        CHECK(lv.lambda_mu <= r.mu_hi);
    }
    const double p_lower = static_cast<double>(in_lower) / n;
    CHECK(p_lower >= 0.88);
    CHECK(p_lower <= 0.92);

    std::sort(fs.begin(), fs.end());
    double ks = 0.0;
    for (int i = 0; i < n; ++i) {
        const double f = lambda_f_cdf(fs[i], r);
        ks = std::max(ks, std::abs(f - static_cast<double>(i) / n));
        ks = std::max(ks, std::abs(f - static_cast<double>(i + 1) / n));
    }
    CHECK(ks < 0.02);
}

TEST_CASE("seed sampling is uniform over the library") {
    std::mt19937_64 rng(9);

    SUBCASE("empty library rejected") {
        CHECK_THROWS_AS(sample_seed(rng, {}), ValidationError);
    }
    SUBCASE("single entry always chosen") {
        const std::vector<SeedSpec> lib = {{"only", {0}, {1.0}, 1.0}};
        for (int i = 0; i < 20; ++i) CHECK(sample_seed(rng, lib).name == "only");
    }
    SUBCASE("12 entries, 12000 draws, near-uniform frequencies") {
        std::vector<SeedSpec> lib;
        for (int i = 0; i < 12; ++i)
            lib.push_back({"s" + std::to_string(i), {i}, {1.0}, 1.0});
        std::vector<int> counts(12, 0);
        for (int i = 0; i < 12000; ++i) {
            const SeedSpec s = sample_seed(rng, lib);
            ++counts[s.regions[0]];
        }
        for (int i = 0; i < 12; ++i) {
            const double freq = counts[i] / 12000.0;
            CHECK(std::abs(freq - 1.0 / 12.0) <= 0.01);
        }
    }
}

TEST_CASE("larger aggregation rate shrinks the soluble seed concentration") {
    const SeedSpec seed{"solo", {2}, {1.0}, 1.0};
    KineticParams lo, hi;
    lo.gamma1 = 1e-3;
    hi.gamma1 = 8e-3;
    const auto a = build_initial_condition(seed, lo, 5);
    const auto b = build_initial_condition(seed, hi, 5);
    CHECK(b[2] < a[2]);
    CHECK(a[2] < 1.0);
    for (int i = 0; i < 5; ++i)
        if (i != 2) {
            CHECK(a[i] == 0.0);
            CHECK(b[i] == 0.0);
        }
}

TEST_CASE("generate_dataset produces exact splits and reloadable samples") {
    TmpDir tmp("gen");
    const Connectome c = make_synthetic_connectome(6, 2, 11);
    const Manifest m = generate_dataset(10, c, toy_library(), quick_config(), 42, tmp.str());

    int n_train = 0, n_val = 0, n_test = 0;
    std::vector<long> ids;
    for (const auto& s : m.samples) {
        ids.push_back(s.id);
        if (s.split == Split::Train) ++n_train;
        if (s.split == Split::Val) ++n_val;
        if (s.split == Split::Test) ++n_test;
    }
    CHECK(n_train == 8);
    CHECK(n_val == 1);
    CHECK(n_test == 1);
    std::sort(ids.begin(), ids.end());
    for (long i = 0; i < 10; ++i) CHECK(ids[i] == i);

    const Manifest back = load_manifest(tmp.str());
    CHECK(back.master_seed == 42);
    CHECK(back.config_hash == m.config_hash);
    CHECK(back.ordering_hash == c.ordering_hash);
    REQUIRE(back.samples.size() == 10);
    for (size_t i = 0; i < 10; ++i) {
        CHECK(back.samples[i].split == m.samples[i].split);
        CHECK(back.samples[i].lambda.as_array() == m.samples[i].lambda.as_array());
    }

    const SplitData train = load_split(tmp.str(), back, Split::Train, c.ordering_hash);
    REQUIRE(train.u0.size() == 8);
    for (const auto& truth : train.truth) {
        CHECK(truth.rows() == 6);
        CHECK(truth.cols() == 6); // n_steps columns, t = 0 moved to u0
    }
    for (const auto& u0 : train.u0) {
        double total = 0.0;
        for (double x : u0) {
            CHECK(x >= 0.0);
            total += x;
        }
        CHECK(total > 0.0); // every sample is seeded
    }
}

TEST_CASE("dataset generation is reproducible and worker-count invariant") {
    TmpDir a("rep_a"), b("rep_b"), c2("rep_c");
    const Connectome c = make_synthetic_connectome(6, 2, 11);
    generate_dataset(6, c, toy_library(), quick_config(), 7, a.str());
    generate_dataset(6, c, toy_library(), quick_config(), 7, b.str(), 2);
    generate_dataset(6, c, toy_library(), quick_config(), 8, c2.str());

    CHECK(slurp(a.str() + "/manifest.json") == slurp(b.str() + "/manifest.json"));
    CHECK(slurp(a.str() + "/samples/3/traj.csv") == slurp(b.str() + "/samples/3/traj.csv"));
    CHECK(slurp(a.str() + "/manifest.json") != slurp(c2.str() + "/manifest.json"));
}
