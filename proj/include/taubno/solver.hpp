#pragma once

#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "taubno/connectome.hpp"
#include "taubno/kinetics.hpp"
#include "taubno/seeding.hpp"

namespace taubno {

struct SolverOptions {
    double edge_rtol = 1e-8;  // interior edge ODE tolerances
    double edge_atol = 1e-10;
    double node_rtol = 1e-8;  // node system tolerances
    double node_atol = 1e-10;
    int max_shoot_iter = 60;
    double edge_length = 1.0; // uniform L for every edge (no length data in scope)
    double node_h_min = 1e-12; // months; smaller steps abort the run
};

/// Steady-state solution of one edge problem with frozen endpoint values.
struct EdgeSolution {
    int src = -1, dst = -1;
    double length = 1.0;
    double n_left = 0.0;  // n(0), the shooting unknown
    double n_right = 0.0; // n(L)
    double flux = 0.0;    // J, +x direction (source -> target)
    double residual = 0.0;
    std::vector<double> profile;   // optional uniform samples of n(x), incl. endpoints
    std::vector<double> profile_x;
};

/// Simulated node trajectory. `values` holds soluble concentrations,
/// one region per row, one sampled time per column.
struct Trajectory {
    std::vector<double> times; // length T+1, starting at 0
    Mat values;                // V x (T+1), soluble N
    Mat values_m;              // V x (T+1), insoluble M in quasi-equilibrium
    LambdaVector lambda;
    std::vector<int> seed_regions;
    std::vector<double> seed_intensities;
    long clamp_count = 0; // negative samples clamped to 0 on output
};

void validate_trajectory(const Trajectory& t);

/// Warm-start state for repeated edge solves with slowly moving endpoints:
/// the previous root and a running estimate of the residual slope there.
struct EdgeWarm {
    double x = std::numeric_limits<double>::quiet_NaN();
    double slope = std::numeric_limits<double>::quiet_NaN();
    int orient = 0; // +1: x is the left value, -1: the right; 0: unset
};

/// Solves the steady edge problem for endpoint concentrations (n_i, n_j):
/// constant flux J = mu2h*n_i - mu1h*n(0) with mu_h = mu/phi, interior
/// n'(x) = -(J + h(n, m_eq(n)))/a, matched to mu1h*n(L) - mu2h*n_j = J.
/// Warm calls run a secant from the previous root; cold calls (and secant
/// failures) fall back to a bracketed Illinois iteration. `profile_samples`
/// > 0 additionally records a uniform n(x) sampling.
EdgeSolution solve_edge_bvp(double n_i, double n_j, const KineticParams& k, double length,
                            const SolverOptions& opt = {}, EdgeWarm* warm = nullptr,
                            int profile_samples = 0, int src = -1, int dst = -1);

/// Quasi-static NTM integrator over a fixed connectome + kinetics.
/// Holds per-edge warm-start state; one instance per simulation.
class NtmSolver {
public:
    NtmSolver(const Connectome& c, const KineticParams& k, SolverOptions opt = {});

    /// Quasi-static rate dN/dt for the full node vector. `seed_mask` marks
    /// regions receiving the production source.
    std::vector<double> node_rhs(const std::vector<double>& n_soluble,
                                 const std::vector<char>& seed_mask);

    /// Runs the quasi-static scheme from the seeded equilibrium initial
    /// condition over [0, horizon], sampling n_steps+1 uniform times.
    /// `lv` is stamped into the returned trajectory for provenance.
    Trajectory simulate(const SeedSpec& seeds, double horizon, int n_steps,
                        const LambdaVector& lv = {});

    const Connectome& connectome() const { return c_; }
    const KineticParams& kinetics() const { return k_; }

private:
    struct Edge {
        int src, dst;
        double weight;
    };

    const Connectome& c_;
    KineticParams k_;
    SolverOptions opt_;
    std::vector<Edge> edges_;
    std::vector<EdgeWarm> warm_; // per-edge warm-start state
};

Trajectory simulate(const Connectome& c, const LambdaVector& lv, const KineticParams& base,
                    const SeedSpec& seeds, double horizon, int n_steps,
                    const SolverOptions& opt = {});

void save_trajectory(const Trajectory& t, const std::string& csv_path,
                     const std::string& meta_path, const std::string& ordering_hash,
                     const SolverOptions& opt = {});
Trajectory load_trajectory(const std::string& csv_path, const std::string& meta_path,
                           const std::string& expected_ordering_hash = "");

} // namespace taubno
