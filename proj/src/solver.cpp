#include "taubno/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "taubno/ode.hpp"

namespace taubno {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// One trial integration of the interior edge ODE for a candidate boundary
// value. Blown-up or inadmissible profiles report a huge signed residual so
// bracketing still sees the correct sign.
struct Shot {
    double resid = kNaN;
    double n_far = kNaN; // value at the opposite end of the shooting start
    bool clean = false;
};

// Steady interior problem for one edge. The +x flux J is constant; shooting
// integrates n'(x) = -(J + h(n, m_eq(n)))/a from one boundary and matches
// the flux condition at the other. The shooting end is chosen so that the
// advective mode decays along the integration direction: integrating against
// a strong net velocity amplifies the unknown by exp(v L / a), which makes
// the boundary residual unresolvable in double precision.
struct EdgeProblem {
    const KineticParams& k;
    double n_i, n_j, length;
    double mu1h, mu2h; // mu / phi
    double ceiling;    // admissible soluble bound (inf if gamma2 == 0)
    double blow_limit;
    OdeOptions ode;
    bool from_left = true;

    double interior_slope(double flux, double n) const {
        if (n >= ceiling) return kNaN;
        const double den = k.beta - k.gamma2 * n;
        const double m = k.gamma1 * n * n / den;
        const double net_v = k.v_a * (1.0 + k.delta * n) * (1.0 - k.epsilon * m) - k.v_r;
        return -(flux - (1.0 - k.f_frac) * net_v * n) / k.diffusivity;
    }

    double flux_of(double unknown) const {
        return from_left ? mu2h * n_i - mu1h * unknown  // J from the left exchange condition
                         : mu1h * unknown - mu2h * n_j; // J from the right exchange condition
    }

    Shot operator()(double unknown) const {
        const double flux = flux_of(unknown);
        // Left shots run in x; right shots run in s = L - x, which negates
        // the slope.
        const double dir = from_left ? 1.0 : -1.0;
        auto rhs = [&](double, double n) { return dir * interior_slope(flux, n); };
        auto abort = [&](double n) { return std::abs(n) > blow_limit; };
        const auto r = integrate_scalar(rhs, 0.0, length, unknown, ode, abort);
        Shot s;
        s.n_far = r.y_end;
        if (r.status == OdeStatus::Ok && !r.aborted) {
            s.resid = from_left ? mu1h * r.y_end - mu2h * n_j - flux
                                : mu1h * r.y_end - mu2h * n_i + flux;
            s.clean = true;
        } else {
            const double sgn = (std::isfinite(r.y_end) && r.y_end < 0.0) ? -1.0 : 1.0;
            s.resid = sgn * 1e30;
        }
        return s;
    }
};

} // namespace

EdgeSolution solve_edge_bvp(double n_i, double n_j, const KineticParams& k, double length,
                            const SolverOptions& opt, EdgeWarm* warm, int profile_samples, int src,
                            int dst) {
    if (!(n_i >= 0.0) || !(n_j >= 0.0))
        throw NumericError("solve_edge_bvp: negative endpoint concentration");
    if (!(length > 0.0)) throw ValidationError("solve_edge_bvp: nonpositive edge length");

    EdgeSolution sol;
    sol.src = src;
    sol.dst = dst;
    sol.length = length;

    const double mu1h = k.mu_release / k.phi;
    const double mu2h = k.mu_uptake / k.phi;
    if (mu1h == 0.0 && mu2h == 0.0) return sol; // decoupled edge: n == 0, J = 0

    const double scale = std::max(n_i, n_j);
    const double a = k.diffusivity;

    // Sub-threshold endpoints: the quadratic kinetic terms are O(scale^2), so
    // the interior equation is the constant-coefficient linear one and the
    // matching problem has a closed form. Shooting is also hopeless here --
    // integrator noise at the absolute tolerance swamps residuals of order
    // mu*scale, and the monotone residual then has no sign change at all.
    if (mu1h > 0.0 && scale <= 1e-8) {
        const double w = (1.0 - k.f_frac) * (k.v_a - k.v_r); // net drift as n -> 0
        const double gl = w * length / a;                    // profile growth exponent
        // Profiles are n(x) = C*exp(w x / a) + J/w; the two exchange
        // conditions pin C and the unknown endpoint. Both assemblies below
        // are cancellation-free (every term nonnegative).
        if (gl <= 500.0) {
            const double e = std::exp(gl);
            const double q = (w != 0.0) ? std::expm1(gl) / w : length / a;
            const double den = e + 1.0 + mu1h * q;
            sol.n_left = (mu2h / mu1h) * (n_j + n_i * (1.0 + mu1h * q)) / den;
            sol.n_right = (mu2h / mu1h) * (n_j * (e + mu1h * q) + n_i * e) / den;
            sol.flux = mu2h * n_i - mu1h * sol.n_left;
            sol.residual = mu1h * sol.n_right - mu2h * n_j - sol.flux;
        } else { // exp(gl) overflows; anchor the same profile on the right
            const double em = std::exp(-gl);
            const double qm = (1.0 - em) / w;
            const double den = em + 1.0 + mu1h * qm;
            sol.n_right = (mu2h / mu1h) * (n_i + n_j * (1.0 + mu1h * qm)) / den;
            sol.n_left = (mu2h / mu1h) * (n_i * (em + mu1h * qm) + n_j * em) / den;
            sol.flux = mu1h * sol.n_right - mu2h * n_j;
            sol.residual = mu2h * n_i - mu1h * sol.n_left - sol.flux;
        }
        if (warm) {
            // Seed the next (possibly nonlinear) solve with the analytic
            // root and residual slope for the orientation it would pick.
            if (gl < 15.0) {
                const double q = (w != 0.0) ? std::expm1(gl) / w : length / a;
                warm->orient = +1;
                warm->x = sol.n_left;
                warm->slope = mu1h * (std::exp(gl) + 1.0 + mu1h * q);
            } else {
                const double em = std::exp(-gl);
                warm->orient = -1;
                warm->x = sol.n_right;
                warm->slope = mu1h * (em + 1.0 + mu1h * (1.0 - em) / w);
            }
        }
        if (profile_samples > 1) {
            sol.profile_x.resize(profile_samples);
            sol.profile.resize(profile_samples);
            const int last = profile_samples - 1;
            for (int i = 0; i <= last; ++i) {
                const double x = length * i / last;
                sol.profile_x[i] = x;
                if (w == 0.0) {
                    sol.profile[i] = sol.n_left - sol.flux * x / a;
                } else if (gl <= 500.0) {
                    sol.profile[i] =
                        sol.n_left * std::exp(w * x / a) - sol.flux * std::expm1(w * x / a) / w;
                } else {
                    const double s = length - x;
                    sol.profile[i] = sol.n_right * std::exp(-w * s / a) +
                                     sol.flux * (1.0 - std::exp(-w * s / a)) / w;
                }
            }
        }
        return sol;
    }

    EdgeProblem prob{k,
                     n_i,
                     n_j,
                     length,
                     mu1h,
                     mu2h,
                     soluble_ceiling(k),
                     1e6 * std::max(1.0, scale),
                     // The natural value scale of the profile is the endpoint
                     // scale; a fixed absolute tolerance would otherwise drown
                     // small problems in noise.
                     OdeOptions{opt.edge_rtol, opt.edge_atol * std::min(1.0, scale)}};
    {
        // Growth exponent of the advective mode at a representative value.
        const double n_ref = std::max({n_i, n_j, 0.0});
        const double m_ref =
            (n_ref < prob.ceiling) ? k.gamma1 * n_ref * n_ref / (k.beta - k.gamma2 * n_ref) : 0.0;
        const double net_v = k.v_a * (1.0 + k.delta * n_ref) * (1.0 - k.epsilon * m_ref) - k.v_r;
        const double growth = (1.0 - k.f_frac) * net_v * length / k.diffusivity;
        prob.from_left = growth < 15.0;
    }

    // Boundary matching cannot be tighter than the interior integration.
    const double tol_bvp = opt.edge_rtol * (1.0 + mu2h * scale);
    // Converge well below tol_bvp: the residuals are exactly the per-edge
    // mass leaks of the node balance, and the conservation requirement is
    // much stricter than the boundary-matching one.
    const double target = 1e-3 * tol_bvp;

    double slope_est = kNaN; // running dR/d(unknown) estimate, fed back into `warm`
    auto finish = [&](double unknown, const Shot& s) {
        if (warm) {
            warm->x = unknown;
            warm->orient = prob.from_left ? +1 : -1;
            if (std::isfinite(slope_est) && slope_est > 0.0) warm->slope = slope_est;
        }
        sol.n_left = prob.from_left ? unknown : s.n_far;
        sol.n_right = prob.from_left ? s.n_far : unknown;
        sol.flux = prob.flux_of(unknown);
        sol.residual = s.resid;
        if (profile_samples > 1) {
            sol.profile_x.resize(profile_samples);
            sol.profile.resize(profile_samples);
            const double dir = prob.from_left ? 1.0 : -1.0;
            auto rhs = [&](double, double nn) { return dir * prob.interior_slope(sol.flux, nn); };
            double n = unknown;
            const int last = profile_samples - 1;
            for (int i = 0; i <= last; ++i) {
                const int slot = prob.from_left ? i : last - i;
                if (i > 0)
                    n = integrate_scalar(rhs, length * (i - 1) / last, length * i / last, n,
                                         prob.ode)
                            .y_end;
                sol.profile_x[slot] = prob.from_left ? length * i / last : length * (last - i) / last;
                sol.profile[slot] = n;
            }
        }
        return sol;
    };

    double lo = kNaN, hi = kNaN, rlo = kNaN, rhi = kNaN;
    int evals = 0;
    auto eval = [&](double x) {
        ++evals;
        return prob(x);
    };

    // Warm restart: secant from the previous root. R is strictly increasing
    // in the unknown (both exchange terms gain with it), so the slope stays
    // positive and a Newton-like step is trustworthy while shots stay clean.
    // A stored root only transfers if the shooting end hasn't flipped.
    if (warm && std::isfinite(warm->x) && warm->x >= 0.0 &&
        warm->orient == (prob.from_left ? +1 : -1)) {
        double x0 = warm->x;
        Shot s0 = eval(x0);
        double slope = (std::isfinite(warm->slope) && warm->slope > 0.0) ? warm->slope
                                                                         : 2.0 * mu1h;
        for (int it = 0; s0.clean && it < 8; ++it) {
            if (std::abs(s0.resid) < target) {
                slope_est = slope;
                return finish(x0, s0);
            }
            const double x1 = x0 - s0.resid / slope;
            if (!std::isfinite(x1) || x1 < 0.0 || x1 == x0) break;
            const Shot s1 = eval(x1);
            if (!s1.clean) break;
            const double news = (s1.resid - s0.resid) / (x1 - x0);
            if (std::isfinite(news) && news > 0.0) slope = news;
            if (it >= 2 && std::abs(s1.resid) > 0.5 * std::abs(s0.resid)) {
                x0 = x1;
                s0 = s1;
                break; // stalling; rebracket instead
            }
            x0 = x1;
            s0 = s1;
        }
        if (s0.clean && std::abs(s0.resid) < target) {
            slope_est = slope;
            return finish(x0, s0);
        }
    }

    { // cold bracket
        lo = 0.0;
        hi = 10.0 * std::max({n_i, n_j, 1.0});
        Shot slo = eval(lo);
        if (std::abs(slo.resid) < target && slo.clean) return finish(lo, slo);
        Shot shi = eval(hi);
        if (std::abs(shi.resid) < target && shi.clean) return finish(hi, shi);
        int expansions = 0;
        while ((slo.resid < 0.0) == (shi.resid < 0.0) && expansions < 3) {
            hi *= 4.0;
            shi = eval(hi);
            if (std::abs(shi.resid) < target && shi.clean) return finish(hi, shi);
            ++expansions;
        }
        if ((slo.resid < 0.0) == (shi.resid < 0.0)) {
            std::ostringstream msg;
            msg << "edge shooting bracket failure: no sign change on [0," << hi << "] for edge ("
                << src << "->" << dst << "), endpoint values (" << n_i << "," << n_j << ")";
            throw NumericError(msg.str());
        }
        rlo = slo.resid;
        rhi = shi.resid;
    }

    // Illinois-damped regula falsi on the bracketed unknown.
    double best_x = lo, best_r = rlo;
    Shot best_shot{};
    int side = 0;
    for (int it = 0; it < opt.max_shoot_iter; ++it) {
        // Blow-up sentinels (|r| ~ 1e30) pin the secant at the clean end, so
        // bisect until both bracket residuals come from finished profiles.
        const bool poisoned = std::abs(rlo) >= 1e29 || std::abs(rhi) >= 1e29;
        double cand = poisoned ? 0.5 * (lo + hi) : (lo * rhi - hi * rlo) / (rhi - rlo);
        if (!(cand > lo && cand < hi)) cand = 0.5 * (lo + hi);
        const Shot sc = eval(cand);
        if (sc.clean && std::abs(sc.resid) < std::abs(best_r)) {
            best_x = cand;
            best_r = sc.resid;
            best_shot = sc;
        }
        if (std::abs(sc.resid) < target && sc.clean) {
            if (!poisoned && hi > lo) slope_est = (rhi - rlo) / (hi - lo);
            return finish(cand, sc);
        }
        if ((sc.resid < 0.0) == (rlo < 0.0)) {
            lo = cand;
            rlo = sc.resid;
            if (side == -1) rhi *= 0.5;
            side = -1;
        } else {
            hi = cand;
            rhi = sc.resid;
            if (side == +1) rlo *= 0.5;
            side = +1;
        }
        if (hi - lo < 1e-15 * (1.0 + hi)) break;
    }
    if (best_shot.clean && std::abs(best_r) < tol_bvp) return finish(best_x, best_shot);
    std::ostringstream msg;
    msg << "edge shooting did not converge after " << opt.max_shoot_iter << " iterations (edge "
        << src << "->" << dst << ", endpoints " << n_i << "," << n_j << ", best residual " << best_r
        << ", tolerance " << tol_bvp << ", " << evals << " residual evaluations)";
    throw NumericError(msg.str());
}

NtmSolver::NtmSolver(const Connectome& c, const KineticParams& k, SolverOptions opt)
    : c_(c), k_(k), opt_(opt) {
    validate_kinetics(k_);
    for (int i = 0; i < c.n_regions; ++i)
        for (int j = 0; j < c.n_regions; ++j)
            if (c.adjacency(i, j) > 0.0) edges_.push_back({i, j, c.adjacency(i, j)});
    warm_.assign(edges_.size(), EdgeWarm{});
}

std::vector<double> NtmSolver::node_rhs(const std::vector<double>& n_soluble,
                                        const std::vector<char>& seed_mask) {
    const int v = c_.n_regions;
    if (static_cast<int>(n_soluble.size()) != v)
        throw ValidationError("node_rhs: state length mismatch");
    const double mu1h = k_.mu_release / k_.phi;
    const double mu2h = k_.mu_uptake / k_.phi;

    // Adaptive trial steps can probe slightly negative states; the edge
    // problems are posed on the clamped values.
    std::vector<double> n_pos(n_soluble);
    for (double& x : n_pos) x = std::max(0.0, x);

    const double ceiling = soluble_ceiling(k_);
    for (int i = 0; i < v; ++i)
        if (n_pos[i] >= ceiling)
            throw NumericError("node_rhs: region " + std::to_string(i) +
                               " reached the aggregation singularity");

    std::vector<double> flux(v, 0.0);
    for (size_t e = 0; e < edges_.size(); ++e) {
        const auto& ed = edges_[e];
        const double ni = n_pos[ed.src], nj = n_pos[ed.dst];
        const EdgeSolution sol =
            solve_edge_bvp(ni, nj, k_, opt_.edge_length, opt_, &warm_[e], 0, ed.src, ed.dst);
        flux[ed.src] += ed.weight * (mu1h * sol.n_left - mu2h * ni);
        flux[ed.dst] += ed.weight * (mu1h * sol.n_right - mu2h * nj);
    }

    std::vector<double> rate(v);
    for (int i = 0; i < v; ++i) {
        double r = flux[i] / c_.volumes[i];
        if (seed_mask[i]) r += k_.f_source / (k_.phi * c_.volumes[i]);
        rate[i] = r / (1.0 + m_equilibrium_prime(n_pos[i], k_));
    }
    return rate;
}

Trajectory NtmSolver::simulate(const SeedSpec& seeds, double horizon, int n_steps,
                               const LambdaVector& lv) {
    if (!(horizon > 0.0)) throw ValidationError("simulate: horizon must be positive");
    if (n_steps < 1) throw ValidationError("simulate: need at least one step");
    const int v = c_.n_regions;

    std::vector<double> n0 = build_initial_condition(seeds, k_, v);
    std::vector<char> mask(v, 0);
    for (int r : seeds.regions) mask[r] = 1;

    std::vector<double> times(n_steps + 1);
    for (int t = 0; t <= n_steps; ++t) times[t] = horizon * t / n_steps;
    times[0] = 0.0;
    times[n_steps] = horizon;

    auto f = [&](double, const std::vector<double>& y, std::vector<double>& dy) -> bool {
        try {
            dy = node_rhs(y, mask);
        } catch (const NumericError&) {
            return false; // inadmissible trial state; reject the step
        }
        for (double d : dy)
            if (!std::isfinite(d)) return false;
        return true;
    };

    OdeOptions node_opt;
    node_opt.rtol = opt_.node_rtol;
    node_opt.atol = opt_.node_atol;
    node_opt.h_min = opt_.node_h_min;
    const auto res = integrate_dense(f, 0.0, times, n0, node_opt);
    if (res.status == OdeStatus::StepUnderflow)
        throw NumericError("simulate: node step size underflow (below " +
                           format_double(opt_.node_h_min) + " months)");
    if (res.status == OdeStatus::MaxSteps)
        throw NumericError("simulate: node integration exceeded the step budget");

    Trajectory traj;
    traj.times = times;
    traj.values = Mat(v, n_steps + 1);
    traj.values_m = Mat(v, n_steps + 1);
    traj.lambda = lv;
    traj.seed_regions = seeds.regions;
    traj.seed_intensities = seeds.intensities;
    for (int t = 0; t <= n_steps; ++t) {
        const auto& y = res.samples[t];
        for (int i = 0; i < v; ++i) {
            double val = y[i];
            if (val < 0.0) {
                val = 0.0;
                ++traj.clamp_count;
            }
            traj.values(i, t) = val;
            traj.values_m(i, t) = m_equilibrium(val, k_);
        }
    }
    return traj;
}

Trajectory simulate(const Connectome& c, const LambdaVector& lv, const KineticParams& base,
                    const SeedSpec& seeds, double horizon, int n_steps, const SolverOptions& opt) {
    NtmSolver solver(c, lambda_to_kinetics(lv, base), opt);
    return solver.simulate(seeds, horizon, n_steps, lv);
}

void validate_trajectory(const Trajectory& t) {
    const int cols = static_cast<int>(t.times.size());
    if (cols < 2) throw ValidationError("trajectory needs at least two time samples");
    if (t.times[0] != 0.0) throw ValidationError("trajectory must start at t = 0");
    for (int i = 1; i < cols; ++i)
        if (!(t.times[i] > t.times[i - 1]))
            throw ValidationError("trajectory times must be strictly increasing");
    if (t.values.cols() != cols) throw ValidationError("trajectory values/times shape mismatch");
    for (int i = 0; i < t.values.rows(); ++i)
        for (int j = 0; j < cols; ++j) {
            const double x = t.values(i, j);
            if (!std::isfinite(x) || x < 0.0)
                throw ValidationError("trajectory has negative or non-finite concentration");
        }
}

void save_trajectory(const Trajectory& t, const std::string& csv_path,
                     const std::string& meta_path, const std::string& ordering,
                     const SolverOptions& opt) {
    std::ostringstream csv;
    for (size_t i = 0; i < t.times.size(); ++i) {
        if (i) csv << ',';
        csv << format_double(t.times[i]);
    }
    csv << '\n';
    for (int i = 0; i < t.values.rows(); ++i) {
        for (int j = 0; j < t.values.cols(); ++j) {
            if (j) csv << ',';
            csv << format_double(t.values(i, j));
        }
        csv << '\n';
    }
    write_text_file(csv_path, csv.str());

    nlohmann::json meta;
    meta["species"] = "node_soluble_concentration"; // aggregate M recoverable via m_equilibrium
    meta["lambda"] = t.lambda.as_array();
    meta["seeds"] = {{"regions", t.seed_regions}, {"intensities", t.seed_intensities}};
    meta["tolerances"] = {{"edge_rtol", opt.edge_rtol},
                          {"edge_atol", opt.edge_atol},
                          {"node_rtol", opt.node_rtol},
                          {"node_atol", opt.node_atol}};
    meta["clamp_count"] = t.clamp_count;
    meta["ordering_hash"] = ordering;
    write_text_file(meta_path, meta.dump(2) + "\n");
}

Trajectory load_trajectory(const std::string& csv_path, const std::string& meta_path,
                           const std::string& expected_ordering_hash) {
    const auto rows = read_csv_matrix(csv_path);
    if (rows.size() < 2) throw ValidationError("trajectory file too short: " + csv_path);
    Trajectory t;
    t.times = rows[0];
    const int v = static_cast<int>(rows.size()) - 1;
    const int cols = static_cast<int>(t.times.size());
    t.values = Mat(v, cols);
    for (int i = 0; i < v; ++i) {
        if (static_cast<int>(rows[i + 1].size()) != cols)
            throw ValidationError("trajectory row length mismatch in " + csv_path);
        for (int j = 0; j < cols; ++j) t.values(i, j) = rows[i + 1][j];
    }

    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(read_text_file(meta_path));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("malformed trajectory metadata " + meta_path + ": " + e.what());
    }
    try {
        const auto lam = meta.at("lambda").get<std::array<double, 5>>();
        t.lambda = LambdaVector::from_array(lam);
        t.seed_regions = meta.at("seeds").at("regions").get<std::vector<int>>();
        t.seed_intensities = meta.at("seeds").at("intensities").get<std::vector<double>>();
        t.clamp_count = meta.value("clamp_count", 0L);
        if (!expected_ordering_hash.empty()) {
            const auto stored = meta.at("ordering_hash").get<std::string>();
            if (stored != expected_ordering_hash)
                throw HashMismatchError("trajectory ordering_hash mismatch: stored " + stored +
                                        ", expected " + expected_ordering_hash);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("trajectory metadata " + meta_path + " missing field: " + e.what());
    }
    validate_trajectory(t);
    return t;
}

} // namespace taubno
