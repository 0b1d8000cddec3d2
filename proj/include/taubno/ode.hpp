#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

namespace taubno {

// Dormand-Prince 5(4) with FSAL and quartic dense output (Hairer, Norsett &
// Wanner coefficients). Two instantiations below: a scalar one used in the
// inner loop of the edge boundary-value solve (no allocation) and a
// vector-state one with dense output used for the node system.

namespace dopri5 {

inline constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
inline constexpr double a21 = 1.0 / 5;
inline constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
inline constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
inline constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                        a54 = -212.0 / 729;
inline constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                        a64 = 49.0 / 176, a65 = -5103.0 / 18656;
inline constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                        b5 = -2187.0 / 6784, b6 = 11.0 / 84;
// b - bhat, for the embedded 4th-order error estimate.
inline constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                        e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
// Dense-output quartic coefficients.
inline constexpr double d1 = -12715105075.0 / 11282082432.0;
inline constexpr double d3 = 87487479700.0 / 32700410799.0;
inline constexpr double d4 = -10690763975.0 / 1880347072.0;
inline constexpr double d5 = 701980252875.0 / 199316789632.0;
inline constexpr double d6 = -1453857185.0 / 822651844.0;
inline constexpr double d7 = 69997945.0 / 29380423.0;

inline double step_factor(double err) {
    // err is the scaled norm; accept iff err <= 1.
    const double f = 0.9 * std::pow(err, -0.2);
    return std::min(10.0, std::max(0.2, f));
}

} // namespace dopri5

struct OdeOptions {
    double rtol = 1e-8;
    double atol = 1e-10;
    double h_max = 0.0; // 0 = span
    double h_min = 0.0; // 0 = round-off floor
    long max_steps = 200000;
};

enum class OdeStatus { Ok, MaxSteps, StepUnderflow };

struct ScalarIvpResult {
    double y_end = std::numeric_limits<double>::quiet_NaN();
    long n_steps = 0;
    OdeStatus status = OdeStatus::Ok;
    bool aborted = false; // stopped early by the abort predicate
};

/// Integrates y' = f(x, y) for scalar y from x0 to x1 (x1 > x0).
/// `abort(y)` returning true stops the integration (used to cut off
/// diverging trial shots); a non-finite f is treated as a rejected step.
template <class F, class Abort>
ScalarIvpResult integrate_scalar(F&& f, double x0, double x1, double y0, const OdeOptions& opt,
                                 Abort&& abort) {
    using namespace dopri5;
    ScalarIvpResult res;
    const double span = x1 - x0;
    const double hmax = opt.h_max > 0.0 ? opt.h_max : span;
    const double hmin = opt.h_min > 0.0 ? opt.h_min
                                         : 16.0 * std::numeric_limits<double>::epsilon() *
                                               std::max(std::abs(x0), std::abs(x1));

    double x = x0, y = y0;
    double k1 = f(x, y);
    double h = std::min(hmax, span);
    if (!std::isfinite(k1)) {
        res.status = OdeStatus::StepUnderflow;
        return res;
    }
    // Crude initial-step heuristic; the controller corrects within a few steps.
    {
        const double sk = opt.atol + opt.rtol * std::abs(y);
        const double d0 = std::abs(y) / sk;
        const double d1 = std::abs(k1) / sk;
        if (d0 > 1e-5 && d1 > 1e-5)
            h = std::min(h, 0.01 * d0 / d1);
        else
            h = std::min(h, 1e-4 * span);
        // Never let the guess alone trip the underflow check; a genuinely
        // stiff start still fails after real rejected steps.
        h = std::max(h, std::min(4.0 * hmin, span));
    }

    while (x < x1) {
        if (++res.n_steps > opt.max_steps) {
            res.status = OdeStatus::MaxSteps;
            res.y_end = y;
            return res;
        }
        if (h > x1 - x) h = x1 - x;
        if (h < hmin && x + h < x1) {
            res.status = OdeStatus::StepUnderflow;
            res.y_end = y;
            return res;
        }

        const double k2 = f(x + c2 * h, y + h * (a21 * k1));
        const double k3 = f(x + c3 * h, y + h * (a31 * k1 + a32 * k2));
        const double k4 = f(x + c4 * h, y + h * (a41 * k1 + a42 * k2 + a43 * k3));
        const double k5 = f(x + c5 * h, y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
        const double k6 = f(x + h, y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
        const double y1 = y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
        const double k7 = f(x + h, y1);

        const double erri = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
        const double sk = opt.atol + opt.rtol * std::max(std::abs(y), std::abs(y1));
        double err = std::abs(erri) / sk;
        if (!std::isfinite(err) || !std::isfinite(y1)) err = 1e10;

        if (err <= 1.0) {
            x += h;
            y = y1;
            k1 = k7; // FSAL
            if (abort(y)) {
                res.aborted = true;
                res.y_end = y;
                return res;
            }
            h = std::min(hmax, h * step_factor(std::max(err, 1e-10)));
        } else {
            h *= std::min(1.0, step_factor(err));
        }
    }
    res.y_end = y;
    return res;
}

template <class F>
ScalarIvpResult integrate_scalar(F&& f, double x0, double x1, double y0,
                                 const OdeOptions& opt = {}) {
    return integrate_scalar(static_cast<F&&>(f), x0, x1, y0, opt, [](double) { return false; });
}

struct VectorIvpResult {
    std::vector<std::vector<double>> samples; // one state per requested time
    long n_steps = 0;
    OdeStatus status = OdeStatus::Ok;
};

/// Integrates the system y' = f(t, y, dydt) from t0 through the sorted
/// `sample_times` (all within [t0, last]); states at those times come from
/// the 5th-order dense interpolant. f may return false to signal a state
/// outside its admissible domain, which rejects the trial step.
template <class F>
VectorIvpResult integrate_dense(F&& f, double t0, const std::vector<double>& sample_times,
                                std::vector<double> y, const OdeOptions& opt = {}) {
    using namespace dopri5;
    VectorIvpResult res;
    const size_t n = y.size();
    if (sample_times.empty()) return res;
    const double t_end = sample_times.back();

    std::vector<double> k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), ytmp(n), y1(n);
    std::vector<double> rc1(n), rc2(n), rc3(n), rc4(n), rc5(n);
    size_t next_sample = 0;

    auto emit_up_to = [&](double t_lo, double h, double t_hi) {
        while (next_sample < sample_times.size() && sample_times[next_sample] <= t_hi + 1e-12 * std::abs(t_hi)) {
            const double theta = h > 0.0 ? (sample_times[next_sample] - t_lo) / h : 0.0;
            const double th1 = 1.0 - theta;
            std::vector<double> out(n);
            for (size_t i = 0; i < n; ++i)
                out[i] = rc1[i] + theta * (rc2[i] + th1 * (rc3[i] + theta * (rc4[i] + th1 * rc5[i])));
            res.samples.push_back(std::move(out));
            ++next_sample;
        }
    };

    // Emit any samples at/before t0 directly from the initial state.
    while (next_sample < sample_times.size() && sample_times[next_sample] <= t0) {
        res.samples.push_back(y);
        ++next_sample;
    }
    if (next_sample == sample_times.size()) return res;

    const double span = t_end - t0;
    const double hmax = opt.h_max > 0.0 ? opt.h_max : span;
    const double hmin = opt.h_min > 0.0 ? opt.h_min
                                         : 16.0 * std::numeric_limits<double>::epsilon() *
                                               std::max(std::abs(t0), std::abs(t_end));

    double t = t0;
    if (!f(t, y, k1)) {
        res.status = OdeStatus::StepUnderflow;
        return res;
    }
    double h = std::min(hmax, span);
    {
        double d0 = 0.0, d1n = 0.0;
        for (size_t i = 0; i < n; ++i) {
            const double sk = opt.atol + opt.rtol * std::abs(y[i]);
            d0 += (y[i] / sk) * (y[i] / sk);
            d1n += (k1[i] / sk) * (k1[i] / sk);
        }
        if (d0 > 1e-10 && d1n > 1e-10)
            h = std::min(h, 0.01 * std::sqrt(d0 / d1n));
        else
            h = std::min(h, 1e-4 * span);
        h = std::max(h, std::min(4.0 * hmin, span));
    }

    while (t < t_end) {
        if (++res.n_steps > opt.max_steps) {
            res.status = OdeStatus::MaxSteps;
            return res;
        }
        if (h > t_end - t) h = t_end - t;
        if (h < hmin && t + h < t_end) {
            res.status = OdeStatus::StepUnderflow;
            return res;
        }

        bool domain_ok = true;
        auto eval = [&](double tc, std::vector<double>& kout) {
            if (!domain_ok) return;
            if (!f(tc, ytmp, kout)) domain_ok = false;
        };

        for (size_t i = 0; i < n; ++i) ytmp[i] = y[i] + h * a21 * k1[i];
        eval(t + c2 * h, k2);
        if (domain_ok) {
            for (size_t i = 0; i < n; ++i) ytmp[i] = y[i] + h * (a31 * k1[i] + a32 * k2[i]);
            eval(t + c3 * h, k3);
        }
        if (domain_ok) {
            for (size_t i = 0; i < n; ++i)
                ytmp[i] = y[i] + h * (a41 * k1[i] + a42 * k2[i] + a43 * k3[i]);
            eval(t + c4 * h, k4);
        }
        if (domain_ok) {
            for (size_t i = 0; i < n; ++i)
                ytmp[i] = y[i] + h * (a51 * k1[i] + a52 * k2[i] + a53 * k3[i] + a54 * k4[i]);
            eval(t + c5 * h, k5);
        }
        if (domain_ok) {
            for (size_t i = 0; i < n; ++i)
                ytmp[i] = y[i] + h * (a61 * k1[i] + a62 * k2[i] + a63 * k3[i] + a64 * k4[i] +
                                      a65 * k5[i]);
            eval(t + h, k6);
        }
        if (domain_ok) {
            for (size_t i = 0; i < n; ++i)
                y1[i] = y[i] + h * (b1 * k1[i] + b3 * k3[i] + b4 * k4[i] + b5 * k5[i] + b6 * k6[i]);
            ytmp = y1;
            eval(t + h, k7);
        }

        double err = 0.0;
        if (domain_ok) {
            for (size_t i = 0; i < n; ++i) {
                const double erri = h * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] +
                                         e6 * k6[i] + e7 * k7[i]);
                const double sk = opt.atol + opt.rtol * std::max(std::abs(y[i]), std::abs(y1[i]));
                err += (erri / sk) * (erri / sk);
            }
            err = std::sqrt(err / static_cast<double>(n));
            if (!std::isfinite(err)) domain_ok = false;
        }
        if (!domain_ok) err = 1e10;

        if (err <= 1.0) {
            for (size_t i = 0; i < n; ++i) {
                const double dy = y1[i] - y[i];
                rc1[i] = y[i];
                rc2[i] = dy;
                rc3[i] = h * k1[i] - dy;
                rc4[i] = dy - h * k7[i] - rc3[i];
                rc5[i] = h * (d1 * k1[i] + d3 * k3[i] + d4 * k4[i] + d5 * k5[i] + d6 * k6[i] +
                              d7 * k7[i]);
            }
            emit_up_to(t, h, t + h);
            t += h;
            y = y1;
            k1 = k7; // FSAL
            h = std::min(hmax, h * step_factor(std::max(err, 1e-10)));
        } else {
            h *= std::min(1.0, step_factor(err));
        }
    }
    // Flush any trailing samples equal to t_end within round-off.
    while (next_sample < sample_times.size()) {
        res.samples.push_back(y);
        ++next_sample;
    }
    return res;
}

} // namespace taubno
