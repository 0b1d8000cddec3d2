#include "taubno/kinetics.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace taubno {

namespace {
double tol_sing(const KineticParams& k) { return 1e-9 * k.beta; }
} // namespace

void validate_kinetics(const KineticParams& k) {
    if (!(k.beta > 0.0)) throw ValidationError("kinetics: beta must be positive");
    if (k.gamma1 < 0.0 || k.gamma2 < 0.0)
        throw ValidationError("kinetics: gamma1/gamma2 must be non-negative");
    if (!(k.phi > 0.0 && k.phi < 1.0)) throw ValidationError("kinetics: phi must be in (0,1)");
    if (!(k.diffusivity > 0.0)) throw ValidationError("kinetics: diffusivity must be positive");
    if (k.mu_release < 0.0 || k.mu_uptake < 0.0)
        throw ValidationError("kinetics: exchange rates must be non-negative");
    if (k.f_frac < 0.0 || k.f_frac > 1.0)
        throw ValidationError("kinetics: f_frac must be in [0,1]");
}

double gamma_conversion(double m, double n, const KineticParams& k) {
    // Grouped as m*(beta - gamma2*n) - gamma1*n^2: identical polynomial, but
    // the factored denominator matches m_equilibrium's, so the equilibrium
    // identity holds to a couple of ulps even next to the pole.
    return m * (k.beta - k.gamma2 * n) - k.gamma1 * n * n;
}

double m_equilibrium(double n, const KineticParams& k) {
    const double den = k.beta - k.gamma2 * n;
    if (den <= tol_sing(k))
        throw NumericError("m_equilibrium: soluble concentration " + std::to_string(n) +
                           " at/beyond the aggregation singularity");
    return k.gamma1 * n * n / den;
}

double m_equilibrium_prime(double n, const KineticParams& k) {
    const double den = k.beta - k.gamma2 * n;
    if (den <= tol_sing(k))
        throw NumericError("m_equilibrium_prime: soluble concentration at/beyond the singularity");
    return k.gamma1 * n * (2.0 * k.beta - k.gamma2 * n) / (den * den);
}

double active_transport(double n, double m, const KineticParams& k) {
    const double net_v = k.v_a * (1.0 + k.delta * n) * (1.0 - k.epsilon * m) - k.v_r;
    return -(1.0 - k.f_frac) * net_v * n;
}

double soluble_ceiling(const KineticParams& k) {
    if (k.gamma2 <= 0.0) return std::numeric_limits<double>::infinity();
    return (k.beta - tol_sing(k)) / k.gamma2;
}

std::pair<double, double> seed_equilibrium(double seed_mass, const KineticParams& k) {
    if (seed_mass < 0.0) throw ValidationError("seed_equilibrium: negative seed mass");
    if (seed_mass == 0.0) return {0.0, 0.0};
    if (k.gamma1 == 0.0) return {seed_mass, 0.0};

    // g(n) = n + m_eq(n) - seed_mass is strictly increasing on the
    // admissible range, so one bisection bracket suffices.
    const double ceiling = soluble_ceiling(k);
    double hi = std::isinf(ceiling) ? seed_mass : std::min(seed_mass, ceiling * (1.0 - 1e-12));
    auto g = [&](double n) { return n + m_equilibrium(n, k) - seed_mass; };
    double lo = 0.0;
    double glo = -seed_mass;
    double ghi = g(hi);
    if (ghi < 0.0) {
        if (std::isinf(ceiling))
            throw NumericError("seed_equilibrium: bracket failure"); // unreachable: g(seed_mass) >= 0
        throw NumericError("seed_equilibrium: no admissible root below the aggregation singularity");
    }
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        const double gm = g(mid);
        if (gm < 0.0) {
            lo = mid;
            glo = gm;
        } else {
            hi = mid;
            ghi = gm;
        }
        if (hi - lo <= 1e-16 * (1.0 + hi)) break;
    }
    const double n0 = (std::abs(glo) < std::abs(ghi)) ? lo : hi;
    return {n0, m_equilibrium(n0, k)};
}

KineticParams lambda_to_kinetics(const LambdaVector& lv, const KineticParams& base) {
    for (double x : lv.as_array())
        if (!(x >= 0.0)) throw ValidationError("lambda vector entries must be non-negative");
    KineticParams k = base;
    k.f_source = lv.lambda_f;
    k.gamma1 = lv.lambda_gamma;
    k.v_a = lv.lambda_delta;
    k.v_r = lv.lambda_epsilon;
    k.mu_release = lv.lambda_mu;
    k.mu_uptake = lv.lambda_mu;
    return k;
}

} // namespace taubno
