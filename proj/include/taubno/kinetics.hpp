#pragma once

#include <array>
#include <utility>

#include "taubno/common.hpp"

namespace taubno {

/// Microscale rate constants. Units: rates in 1/month, velocities in
/// mm/month, diffusivity in mm^2/month, concentrations dimensionless.
struct KineticParams {
    double beta = 1.0;        // fragmentation rate
    double gamma1 = 0.0;      // n^2 aggregation rate
    double gamma2 = 0.0;      // m*n aggregation rate
    double phi = 0.01;        // slow-fast scale separation, 0 < phi << 1
    double f_frac = 0.0;      // motor-free fraction f in [0,1]
    double v_a = 0.0;         // anterograde baseline velocity
    double v_r = 0.0;         // retrograde baseline velocity
    double delta = 0.1;       // anterograde concentration coupling
    double epsilon = 0.1;     // retrograde aggregate coupling
    double diffusivity = 1.0; // edge-constant axonal diffusivity
    double mu_release = 0.0;  // boundary release rate (node -> edge)
    double mu_uptake = 0.0;   // boundary uptake rate (edge -> node)
    double f_source = 0.0;    // soluble production rate at seed regions
};

void validate_kinetics(const KineticParams& k);

/// The 5 sampled kinetic degrees of freedom, in sampling order:
/// production, aggregation, anterograde velocity, retrograde velocity,
/// uptake-release rate.
struct LambdaVector {
    double lambda_f = 0.0;
    double lambda_gamma = 0.0;
    double lambda_delta = 0.0;
    double lambda_epsilon = 0.0;
    double lambda_mu = 0.0;

    std::array<double, 5> as_array() const {
        return {lambda_f, lambda_gamma, lambda_delta, lambda_epsilon, lambda_mu};
    }
    static LambdaVector from_array(const std::array<double, 5>& a) {
        return {a[0], a[1], a[2], a[3], a[4]};
    }
};

/// Aggregation-fragmentation exchange rate between insoluble (m) and
/// soluble (n) pools: beta*m - gamma1*n^2 - gamma2*m*n.
double gamma_conversion(double m, double n, const KineticParams& k);

/// Insoluble concentration in quasi-equilibrium with soluble n:
/// gamma1*n^2 / (beta - gamma2*n). Throws NumericError near the pole.
double m_equilibrium(double n, const KineticParams& k);

/// Derivative d m_equilibrium / d n; used by the quasi-static node system.
double m_equilibrium_prime(double n, const KineticParams& k);

/// Net axonal advection term h(n, m) = -(1-f)(v_a(1+delta n)(1-eps m) - v_r) n.
double active_transport(double n, double m, const KineticParams& k);

/// Splits a total seed mass into equilibrium (n0, m0) with
/// n0 + m_equilibrium(n0) = seed_mass. Bracketed bisection; unique root
/// because the left side is strictly increasing.
std::pair<double, double> seed_equilibrium(double seed_mass, const KineticParams& k);

/// Installs the 5 sampled parameters into a copy of `base`:
/// f_source <- lambda_f, gamma1 <- lambda_gamma, v_a <- lambda_delta,
/// v_r <- lambda_epsilon, mu_release = mu_uptake <- lambda_mu.
KineticParams lambda_to_kinetics(const LambdaVector& lv, const KineticParams& base);

/// Upper end of the admissible soluble range (pole of m_equilibrium),
/// +inf when gamma2 == 0.
double soluble_ceiling(const KineticParams& k);

} // namespace taubno
