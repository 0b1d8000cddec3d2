#include <doctest.h>

#include <cmath>
#include <vector>

#include "taubno/ode.hpp"

using namespace taubno;

TEST_CASE("scalar integrator on exponential decay") {
    const auto r = integrate_scalar([](double, double y) { return -y; }, 0.0, 5.0, 1.0);
    REQUIRE(r.status == OdeStatus::Ok);
    CHECK(r.y_end == doctest::Approx(std::exp(-5.0)).epsilon(1e-7));
}

TEST_CASE("scalar integrator on a driven problem") {
    // y' = cos(x), y(0) = 0 -> y = sin(x)
    const auto r = integrate_scalar([](double x, double) { return std::cos(x); }, 0.0, 2.5, 0.0);
    REQUIRE(r.status == OdeStatus::Ok);
    CHECK(r.y_end == doctest::Approx(std::sin(2.5)).epsilon(1e-7));
}

TEST_CASE("scalar integrator tracks a fast transient") {
    // y' = -80 (y - sin x) + cos x, y(0) = 1 -> y = sin x + exp(-80 x)
    const auto f = [](double x, double y) { return -80.0 * (y - std::sin(x)) + std::cos(x); };
    const auto r = integrate_scalar(f, 0.0, 2.0, 1.0);
    REQUIRE(r.status == OdeStatus::Ok);
    const double exact = std::sin(2.0) + std::exp(-160.0);
    CHECK(r.y_end == doctest::Approx(exact).epsilon(1e-6));
}

TEST_CASE("tighter tolerances reduce scalar error") {
    const auto f = [](double, double y) { return y * std::cos(y); };
    OdeOptions loose{1e-5, 1e-8};
    OdeOptions tight{1e-11, 1e-13};
    const double y_loose = integrate_scalar(f, 0.0, 3.0, 0.4, loose).y_end;
    const double y_tight = integrate_scalar(f, 0.0, 3.0, 0.4, tight).y_end;
    OdeOptions ref{1e-13, 1e-15};
    const double y_ref = integrate_scalar(f, 0.0, 3.0, 0.4, ref).y_end;
    CHECK(std::abs(y_tight - y_ref) < std::abs(y_loose - y_ref) + 1e-14);
    CHECK(std::abs(y_tight - y_ref) < 1e-9);
}

TEST_CASE("abort predicate cuts off a finite-time blow-up") {
    // y' = y^2 from y(0)=1 diverges at x=1.
    const auto r = integrate_scalar([](double, double y) { return y * y; }, 0.0, 2.0, 1.0,
                                    OdeOptions{}, [](double y) { return y > 1e6; });
    CHECK(r.aborted);
    CHECK(r.y_end > 1e6);
}

TEST_CASE("dense vector integrator on the harmonic oscillator") {
    auto f = [](double, const std::vector<double>& y, std::vector<double>& dy) {
        dy[0] = y[1];
        dy[1] = -y[0];
        return true;
    };
    std::vector<double> times;
    for (int i = 0; i <= 40; ++i) times.push_back(0.25 * i);
    const auto res = integrate_dense(f, 0.0, times, {1.0, 0.0});
    REQUIRE(res.status == OdeStatus::Ok);
    REQUIRE(res.samples.size() == times.size());
    for (size_t i = 0; i < times.size(); ++i) {
        CHECK(res.samples[i][0] == doctest::Approx(std::cos(times[i])).epsilon(5e-7));
        CHECK(res.samples[i][1] == doctest::Approx(-std::sin(times[i])).epsilon(5e-7));
    }
}

TEST_CASE("dense output interpolates between accepted steps") {
    // With a smooth slow problem, the integrator takes steps much larger
    // than the sample spacing; every sample must still be 5th-order close.
    auto f = [](double x, const std::vector<double>& y, std::vector<double>& dy) {
        dy[0] = -0.3 * y[0] + std::sin(x);
        return true;
    };
    std::vector<double> times;
    for (int i = 0; i <= 200; ++i) times.push_back(10.0 * i / 200.0);
    const auto res = integrate_dense(f, 0.0, times, {2.0});
    REQUIRE(res.status == OdeStatus::Ok);
    // Reference by brute force small steps.
    OdeOptions fine{1e-12, 1e-14};
    for (size_t i = 0; i < times.size(); i += 17) {
        const auto ref = integrate_dense(f, 0.0, {times[i] == 0.0 ? 0.0 : times[i]}, {2.0}, fine);
        CHECK(res.samples[i][0] == doctest::Approx(ref.samples[0][0]).epsilon(1e-7));
    }
}

TEST_CASE("domain rejection shrinks the step instead of failing") {
    // f reports false for y < 0.5; the solution decays toward 1 from 3 and
    // never legitimately visits the forbidden zone, but large trial steps
    // could. Integration must still succeed.
    auto f = [](double, const std::vector<double>& y, std::vector<double>& dy) {
        if (y[0] < 0.5) return false;
        dy[0] = -2.0 * (y[0] - 1.0);
        return true;
    };
    const auto res = integrate_dense(f, 0.0, {5.0}, {3.0});
    REQUIRE(res.status == OdeStatus::Ok);
    CHECK(res.samples[0][0] == doctest::Approx(1.0 + 2.0 * std::exp(-10.0)).epsilon(1e-6));
}

TEST_CASE("hard step floor triggers underflow status") {
    // Force a tiny admissible region so the step collapses below h_min.
    auto f = [](double x, const std::vector<double>& y, std::vector<double>& dy) {
        if (x > 0.25) return false; // wall: nothing past x = 0.25 is evaluable
        dy[0] = 1.0;
        return true;
    };
    OdeOptions opt;
    opt.h_min = 1e-6;
    const auto res = integrate_dense(f, 0.0, {1.0}, {0.0}, opt);
    CHECK(res.status == OdeStatus::StepUnderflow);
}

TEST_CASE("sample times at the start are emitted from the initial state") {
    auto f = [](double, const std::vector<double>& y, std::vector<double>& dy) {
        dy[0] = 1.0;
        return true;
    };
    const auto res = integrate_dense(f, 0.0, {0.0, 0.5, 1.0}, {7.0});
    REQUIRE(res.samples.size() == 3);
    CHECK(res.samples[0][0] == 7.0); // exactly the initial state
    CHECK(res.samples[1][0] == doctest::Approx(7.5).epsilon(1e-10));
    CHECK(res.samples[2][0] == doctest::Approx(8.0).epsilon(1e-10));
}
