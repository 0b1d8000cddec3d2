#include "taubno/seeding.hpp"

#include <cmath>
#include <set>

#include <json.hpp>

#include "taubno/common.hpp"

namespace taubno {

void validate_seed_spec(const SeedSpec& s, int n_regions) {
    if (s.regions.empty()) throw ValidationError("seed spec '" + s.name + "' has no regions");
    if (s.regions.size() != s.intensities.size())
        throw ValidationError("seed spec '" + s.name + "': regions/intensities length mismatch");
    std::set<int> uniq;
    for (int r : s.regions) {
        if (r < 0 || r >= n_regions)
            throw ValidationError("seed spec '" + s.name + "': region index " + std::to_string(r) +
                                  " out of range");
        if (!uniq.insert(r).second)
            throw ValidationError("seed spec '" + s.name + "': duplicate region " +
                                  std::to_string(r));
    }
    double sum = 0.0;
    for (double w : s.intensities) {
        if (!(w > 0.0)) throw ValidationError("seed spec '" + s.name + "': intensities must be positive");
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw ValidationError("seed spec '" + s.name + "': intensities must sum to 1");
    if (!(s.total_mass >= 0.0))
        throw ValidationError("seed spec '" + s.name + "': negative total mass");
}

std::vector<double> build_initial_condition(const SeedSpec& seed, const KineticParams& k, int v) {
    validate_seed_spec(seed, v);
    std::vector<double> n0(v, 0.0);
    for (size_t idx = 0; idx < seed.regions.size(); ++idx) {
        const double mass = seed.intensities[idx] * seed.total_mass;
        n0[seed.regions[idx]] = seed_equilibrium(mass, k).first;
    }
    return n0;
}

std::vector<SeedSpec> load_seed_library(const std::string& path, int n_regions) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("malformed seed library " + path + ": " + e.what());
    }
    if (!j.is_array() || j.empty())
        throw ValidationError("seed library " + path + " must be a non-empty array");
    std::vector<SeedSpec> lib;
    for (const auto& e : j) {
        SeedSpec s;
        try {
            s.name = e.at("name").get<std::string>();
            s.regions = e.at("regions").get<std::vector<int>>();
            s.intensities = e.at("intensities").get<std::vector<double>>();
            s.total_mass = e.value("total_mass", 1.0);
        } catch (const nlohmann::json::exception& ex) {
            throw ValidationError("seed library entry invalid: " + std::string(ex.what()));
        }
        validate_seed_spec(s, n_regions);
        lib.push_back(std::move(s));
    }
    return lib;
}

} // namespace taubno
