#pragma once

#include <string>
#include <vector>

#include "taubno/kinetics.hpp"

namespace taubno {

/// A named seeding pattern: total seed mass split over `regions` by
/// `intensities` (positive, summing to 1).
struct SeedSpec {
    std::string name;
    std::vector<int> regions;
    std::vector<double> intensities;
    double total_mass = 1.0;
};

void validate_seed_spec(const SeedSpec& s, int n_regions);

/// Initial soluble field: each seed region r gets the n-component of
/// seed_equilibrium(intensity_r * total_mass); everything else is 0.
std::vector<double> build_initial_condition(const SeedSpec& seed, const KineticParams& k, int v);

/// Parses a seeds.json library: [{"name", "regions", "intensities", "total_mass"}].
std::vector<SeedSpec> load_seed_library(const std::string& path, int n_regions);

} // namespace taubno
