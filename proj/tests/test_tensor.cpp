#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "taubno/tensor.hpp"

using namespace taubno;

namespace {

Mat random_mat(std::mt19937_64& rng, int r, int c, double lo = -1.0, double hi = 1.0) {
    Mat m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = uniform(rng, lo, hi);
    return m;
}

// Brute-force reference transform: plain complex exponential sums.
void naive_dft(const std::vector<double>& z, int k_modes, std::vector<double>& re,
               std::vector<double>& im) {
    const int v = static_cast<int>(z.size());
    re.assign(k_modes, 0.0);
    im.assign(k_modes, 0.0);
    for (int k = 0; k < k_modes; ++k)
        for (int x = 0; x < v; ++x) {
            const double ang = 2.0 * M_PI * k * x / v;
            re[k] += z[x] * std::cos(ang);
            im[k] -= z[x] * std::sin(ang);
        }
}

// Builds a scalar loss from an op output by weighting every element with a
// fixed random matrix, then checks every input gradient against central
// differences. `build` must use only the supplied leaves (plus constants).
using BuildFn = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;

void fd_check(const BuildFn& build, std::vector<Mat> inputs, unsigned long long seed,
              double tol = 1e-4) {
    auto run = [&](const std::vector<Mat>& ins, std::vector<std::vector<double>>* grads) {
        Tape tape;
        std::vector<Tensor> leaves;
        for (const Mat& m : ins) leaves.push_back(tape.leaf(m));
        Tensor out = build(tape, leaves);
        std::mt19937_64 wrng(seed ^ 0xabcdefull);
        Mat w = random_mat(wrng, out.rows, out.cols, 0.1, 1.0);
        Tensor loss = tape.sum_all(tape.mul(out, tape.leaf(w)));
        if (grads) {
            tape.backward(loss);
            grads->clear();
            for (size_t i = 0; i < ins.size(); ++i) {
                const double* g = tape.grad(leaves[i]);
                grads->emplace_back(g, g + ins[i].size());
            }
        }
        return tape.val(loss)[0];
    };

    std::vector<std::vector<double>> grads;
    run(inputs, &grads);

    const double h = 1e-6;
    for (size_t i = 0; i < inputs.size(); ++i)
        for (size_t e = 0; e < inputs[i].size(); ++e) {
            std::vector<Mat> pert = inputs;
            const double x0 = pert[i].data()[e];
            pert[i].data()[e] = x0 + h;
            const double fp = run(pert, nullptr);
            pert[i].data()[e] = x0 - h;
            const double fm = run(pert, nullptr);
            const double fd = (fp - fm) / (2.0 * h);
            const double got = grads[i][e];
            const double denom = std::max({std::abs(fd), std::abs(got), 1e-3});
            INFO("input ", i, " element ", e, ": fd=", fd, " tape=", got);
            CHECK(std::abs(fd - got) / denom < tol);
        }
}

} // namespace

TEST_CASE("elementwise ops and broadcasting forward values") {
    Tape tape;
    const double a[] = {1.0, -2.0, 3.0, 0.5};
    const double b[] = {2.0, 2.0, -1.0, 4.0};
    Tensor ta = tape.leaf(2, 2, a);
    Tensor tb = tape.leaf(2, 2, b);
    const double* s = tape.val(tape.add(ta, tb));
    CHECK(s[0] == 3.0);
    CHECK(s[3] == 4.5);
    const double* d = tape.val(tape.sub(ta, tb));
    CHECK(d[1] == -4.0);
    const double* p = tape.val(tape.mul(ta, tb));
    CHECK(p[2] == -3.0);
    const double* sc = tape.val(tape.scale(ta, -2.0));
    CHECK(sc[0] == -2.0);
    const double row[] = {10.0, 20.0};
    const double* br = tape.val(tape.add_rowvec(ta, tape.leaf(1, 2, row)));
    CHECK(br[0] == 11.0);
    CHECK(br[3] == 20.5);
}

TEST_CASE("matmul matches the dense reference") {
    std::mt19937_64 rng(7);
    const Mat a = random_mat(rng, 3, 5);
    const Mat b = random_mat(rng, 5, 4);
    const Mat ref = matmul(a, b);
    Tape tape;
    const double* got = tape.val(tape.matmul(tape.leaf(a), tape.leaf(b)));
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 4; ++j)
            CHECK(got[i * 4 + j] == doctest::Approx(ref(i, j)).epsilon(1e-14));
}

TEST_CASE("gelu values at reference points") {
    Tape tape;
    const double x[] = {0.0, 1.0, -1.0, 3.0};
    const double* y = tape.val(tape.gelu(tape.leaf(1, 4, x)));
    CHECK(y[0] == 0.0);
    CHECK(y[1] == doctest::Approx(0.8413447460685429).epsilon(1e-12));
    CHECK(y[2] == doctest::Approx(-0.15865525393145707).epsilon(1e-12));
    CHECK(y[3] == doctest::Approx(2.9959503059051097).epsilon(1e-12));
}

TEST_CASE("spectral basis agrees with the brute-force transform") {
    std::mt19937_64 rng(20240817ull);
    for (int v : {8, 16, 64}) {
        const int full = v / 2 + 1;
        for (int k_modes : {3, full}) {
            if (k_modes > full) continue;
            const DftBasis basis = make_dft_basis(v, k_modes);
            for (int rep = 0; rep < 5; ++rep) {
                std::vector<double> z(v);
                for (double& x : z) x = uniform(rng, -2.0, 2.0);
                std::vector<double> re, im;
                naive_dft(z, k_modes, re, im);

                Tape tape;
                Tensor tz = tape.leaf(v, 1, z.data());
                const double* fre = tape.val(tape.block_matmul_const(basis.fwd_re, tz, 1));
                const double* fim = tape.val(tape.block_matmul_const(basis.fwd_im, tz, 1));
                for (int k = 0; k < k_modes; ++k) {
                    CHECK(std::abs(fre[k] - re[k]) < 1e-10);
                    CHECK(std::abs(fim[k] - im[k]) < 1e-10);
                }
            }
        }
    }
}

TEST_CASE("full-band synthesis inverts analysis for every real field") {
    std::mt19937_64 rng(99ull);
    for (int v : {8, 16, 64}) {
        const DftBasis basis = make_dft_basis(v, v / 2 + 1);
        for (int rep = 0; rep < 5; ++rep) {
            std::vector<double> z(v);
            for (double& x : z) x = uniform(rng, -3.0, 3.0);
            Tape tape;
            Tensor tz = tape.leaf(v, 1, z.data());
            Tensor fre = tape.block_matmul_const(basis.fwd_re, tz, 1);
            Tensor fim = tape.block_matmul_const(basis.fwd_im, tz, 1);
            Tensor back = tape.add(tape.block_matmul_const(basis.inv_re, fre, 1),
                                   tape.block_matmul_const(basis.inv_im, fim, 1));
            const double* bz = tape.val(back);
            for (int x = 0; x < v; ++x) CHECK(std::abs(bz[x] - z[x]) < 1e-10);
        }
    }
}

TEST_CASE("truncated band reproduces band-limited fields") {
    const int v = 16, k_modes = 4;
    const DftBasis basis = make_dft_basis(v, k_modes);
    std::vector<double> z(v, 0.0);
    // Field built only from retained modes: 0, 1, 3.
    for (int x = 0; x < v; ++x)
        z[x] = 0.7 + 1.3 * std::cos(2.0 * M_PI * x / v + 0.4) -
               0.5 * std::sin(2.0 * M_PI * 3 * x / v - 1.1);
    Tape tape;
    Tensor tz = tape.leaf(v, 1, z.data());
    Tensor fre = tape.block_matmul_const(basis.fwd_re, tz, 1);
    Tensor fim = tape.block_matmul_const(basis.fwd_im, tz, 1);
    Tensor back = tape.add(tape.block_matmul_const(basis.inv_re, fre, 1),
                           tape.block_matmul_const(basis.inv_im, fim, 1));
    const double* bz = tape.val(back);
    for (int x = 0; x < v; ++x) CHECK(bz[x] == doctest::Approx(z[x]).epsilon(1e-10));
}

TEST_CASE("difference stencil annihilates constants exactly") {
    std::mt19937_64 rng(5150ull);
    for (int rep = 0; rep < 10; ++rep) {
        const int v = 2 + static_cast<int>(u01(rng()) * 7);
        const int d = 1 + static_cast<int>(u01(rng()) * 4);
        const Mat kern = random_mat(rng, 3 * d, d, -2.0, 2.0);
        Mat z(2 * v, d); // two batch blocks with different constants
        for (int j = 0; j < d; ++j) {
            const double c0 = uniform(rng, -5.0, 5.0);
            const double c1 = 0.1 * (1 + static_cast<int>(u01(rng()) * 9)); // awkward decimals
            for (int i = 0; i < v; ++i) {
                z(i, j) = c0;
                z(v + i, j) = c1;
            }
        }
        Tape tape;
        const double* out = tape.val(tape.diff_conv(tape.leaf(z), tape.leaf(kern), 2));
        for (int i = 0; i < 2 * v * d; ++i) CHECK(out[i] == 0.0);
    }
}

TEST_CASE("difference stencil recovers the first moment on linear fields") {
    const int v = 9, d = 2;
    std::mt19937_64 rng(31ull);
    const Mat kern = random_mat(rng, 3 * d, d, -2.0, 2.0);
    Mat z(v, d);
    const double slope[] = {0.5, -1.25}; // exactly representable increments
    for (int i = 0; i < v; ++i)
        for (int j = 0; j < d; ++j) z(i, j) = 3.0 + slope[j] * i;
    Tape tape;
    const double* out = tape.val(tape.diff_conv(tape.leaf(z), tape.leaf(kern), 1));
    // Interior rows see the kernel first moment applied to the slope vector:
    // sum_p slope[p] * (K2 - K0)[p, j].
    for (int i = 1; i + 1 < v; ++i)
        for (int j = 0; j < d; ++j) {
            double expect = 0.0;
            for (int p = 0; p < d; ++p)
                expect += slope[p] * (kern(2 * d + p, j) - kern(p, j));
            CHECK(out[i * d + j] == doctest::Approx(expect).epsilon(1e-13));
        }
}

TEST_CASE("block reductions") {
    Tape tape;
    const double x[] = {1.0, 2.0, 3.0, 4.0, 0.0, -2.0};
    Tensor tx = tape.leaf(6, 1, x);
    const double* s = tape.val(tape.block_sumsq(tx, 2));
    CHECK(s[0] == 14.0);
    CHECK(s[1] == 20.0);
    const double* r = tape.val(tape.sqrt_elem(tape.block_sumsq(tx, 2)));
    CHECK(r[1] == doctest::Approx(std::sqrt(20.0)).epsilon(1e-15));
    CHECK(tape.val(tape.sum_all(tx))[0] == 8.0);
}

TEST_CASE("gradients of every primitive match central differences") {
    std::mt19937_64 rng(424242ull);

    SUBCASE("add/sub/mul/scale chains") {
        for (int rep = 0; rep < 20; ++rep) {
            const int r = 1 + static_cast<int>(u01(rng()) * 4);
            const int c = 1 + static_cast<int>(u01(rng()) * 4);
            fd_check(
                [](Tape& t, const std::vector<Tensor>& in) {
                    return t.mul(t.sub(t.add(in[0], in[1]), t.scale(in[1], 0.3)), in[0]);
                },
                {random_mat(rng, r, c), random_mat(rng, r, c)}, 1000 + rep);
        }
    }

    SUBCASE("matmul") {
        for (int rep = 0; rep < 20; ++rep) {
            const int r = 1 + static_cast<int>(u01(rng()) * 4);
            const int k = 1 + static_cast<int>(u01(rng()) * 4);
            const int c = 1 + static_cast<int>(u01(rng()) * 4);
            fd_check([](Tape& t,
                        const std::vector<Tensor>& in) { return t.matmul(in[0], in[1]); },
                     {random_mat(rng, r, k), random_mat(rng, k, c)}, 2000 + rep);
        }
    }

    SUBCASE("add_rowvec and gelu") {
        for (int rep = 0; rep < 20; ++rep) {
            const int r = 2 + static_cast<int>(u01(rng()) * 3);
            const int c = 1 + static_cast<int>(u01(rng()) * 4);
            fd_check(
                [](Tape& t, const std::vector<Tensor>& in) {
                    return t.gelu(t.add_rowvec(in[0], in[1]));
                },
                {random_mat(rng, r, c, -2.0, 2.0), random_mat(rng, 1, c, -1.0, 1.0)}, 3000 + rep);
        }
    }

    SUBCASE("block_matmul_const") {
        for (int rep = 0; rep < 20; ++rep) {
            const int br = 1 + static_cast<int>(u01(rng()) * 3);
            const int bc = 1 + static_cast<int>(u01(rng()) * 3);
            const int d = 1 + static_cast<int>(u01(rng()) * 3);
            const int batch = 1 + static_cast<int>(u01(rng()) * 3);
            const Mat op = random_mat(rng, br, bc);
            fd_check(
                [op, batch](Tape& t, const std::vector<Tensor>& in) {
                    return t.block_matmul_const(op, in[0], batch);
                },
                {random_mat(rng, batch * bc, d)}, 4000 + rep);
        }
    }

    SUBCASE("mode_matmul") {
        for (int rep = 0; rep < 20; ++rep) {
            const int k = 1 + static_cast<int>(u01(rng()) * 3);
            const int d = 1 + static_cast<int>(u01(rng()) * 3);
            const int batch = 1 + static_cast<int>(u01(rng()) * 3);
            fd_check(
                [batch](Tape& t, const std::vector<Tensor>& in) {
                    return t.mode_matmul(in[0], in[1], batch);
                },
                {random_mat(rng, batch * k, d), random_mat(rng, k * d, d)}, 5000 + rep);
        }
    }

    SUBCASE("diff_conv") {
        for (int rep = 0; rep < 20; ++rep) {
            const int v = 2 + static_cast<int>(u01(rng()) * 5);
            const int d = 1 + static_cast<int>(u01(rng()) * 3);
            const int batch = 1 + static_cast<int>(u01(rng()) * 3);
            fd_check(
                [batch](Tape& t, const std::vector<Tensor>& in) {
                    return t.diff_conv(in[0], in[1], batch);
                },
                {random_mat(rng, batch * v, d), random_mat(rng, 3 * d, d)}, 6000 + rep);
        }
    }

    SUBCASE("block_sumsq, sqrt_elem, sum_all") {
        for (int rep = 0; rep < 20; ++rep) {
            const int r = 1 + static_cast<int>(u01(rng()) * 3);
            const int c = 1 + static_cast<int>(u01(rng()) * 3);
            const int batch = 1 + static_cast<int>(u01(rng()) * 3);
            fd_check(
                [batch](Tape& t, const std::vector<Tensor>& in) {
                    return t.sqrt_elem(t.block_sumsq(in[0], batch));
                },
                {random_mat(rng, batch * r, c, 0.5, 2.0)}, 7000 + rep);
        }
    }

    SUBCASE("composite expression with shared subterms") {
        const int v = 8, d = 3, batch = 2;
        const DftBasis basis = make_dft_basis(v, 3);
        fd_check(
            [&](Tape& t, const std::vector<Tensor>& in) {
                Tensor z = t.gelu(t.matmul(in[0], in[1]));
                Tensor fre = t.block_matmul_const(basis.fwd_re, z, batch);
                Tensor fim = t.block_matmul_const(basis.fwd_im, z, batch);
                Tensor gre = t.sub(t.mode_matmul(fre, in[2], batch),
                                   t.mode_matmul(fim, in[3], batch));
                Tensor gim = t.add(t.mode_matmul(fre, in[3], batch),
                                   t.mode_matmul(fim, in[2], batch));
                Tensor back = t.add(t.block_matmul_const(basis.inv_re, gre, batch),
                                    t.block_matmul_const(basis.inv_im, gim, batch));
                Tensor mixed = t.add(back, t.diff_conv(z, in[4], batch));
                return t.sqrt_elem(t.block_sumsq(t.add(mixed, z), batch));
            },
            {random_mat(rng, batch * v, d), random_mat(rng, d, d), random_mat(rng, 3 * d, d),
             random_mat(rng, 3 * d, d), random_mat(rng, 3 * d, d)},
            8000);
    }
}

TEST_CASE("graph propagation composition") {
    std::mt19937_64 rng(808ull);

    SUBCASE("identity graph collapses to a pointwise affine map") {
        const int v = 4, d = 3;
        Mat eye(v, v);
        for (int i = 0; i < v; ++i) eye(i, i) = 1.0;
        const Mat z = random_mat(rng, v, d);
        const Mat ws = random_mat(rng, d, d);
        const Mat wn = random_mat(rng, d, d);
        const Mat b = random_mat(rng, 1, d);
        Tape tape;
        Tensor out = graph_propagate(tape, tape.leaf(z), eye, tape.leaf(ws), tape.leaf(wn),
                                     tape.leaf(b), 1);
        Mat wsum(d, d);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) wsum(i, j) = ws(i, j) + wn(i, j);
        const Mat ref = matmul(z, wsum);
        const double* o = tape.val(out);
        for (int i = 0; i < v; ++i)
            for (int j = 0; j < d; ++j)
                CHECK(o[i * d + j] == doctest::Approx(ref(i, j) + b(0, j)).epsilon(1e-13));
    }

    SUBCASE("zero features broadcast the bias") {
        const int v = 3, d = 2;
        const Mat a_hat = random_mat(rng, v, v);
        const double bias[] = {0.25, -1.5};
        Tape tape;
        Tensor out = graph_propagate(tape, tape.leaf(v, d), a_hat, tape.leaf(random_mat(rng, d, d)),
                                     tape.leaf(random_mat(rng, d, d)), tape.leaf(1, 2, bias), 1);
        const double* o = tape.val(out);
        for (int i = 0; i < v; ++i) {
            CHECK(o[i * d + 0] == 0.25);
            CHECK(o[i * d + 1] == -1.5);
        }
    }

    SUBCASE("two-node mixing matches the hand product") {
        // Normalized 2-cycle with half-weight edges: rows mix 2/3 self, 1/3 peer.
        Mat a_hat(2, 2);
        a_hat(0, 0) = 2.0 / 3.0;
        a_hat(0, 1) = 1.0 / 3.0;
        a_hat(1, 0) = 1.0 / 3.0;
        a_hat(1, 1) = 2.0 / 3.0;
        Mat z(2, 2);
        z(0, 0) = 1.0;
        z(1, 1) = 1.0;
        Mat eye(2, 2);
        eye(0, 0) = eye(1, 1) = 1.0;
        Tape tape;
        Tensor out = graph_propagate(tape, tape.leaf(z), a_hat, tape.leaf(2, 2), tape.leaf(eye),
                                     tape.leaf(1, 2), 1);
        const double* o = tape.val(out);
        CHECK(o[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
        CHECK(o[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
        CHECK(o[2] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
        CHECK(o[3] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    }

    SUBCASE("gradients flow through all four inputs") {
        const int v = 3, d = 2, batch = 2;
        const Mat a_hat = random_mat(rng, v, v);
        fd_check(
            [&, batch](Tape& t, const std::vector<Tensor>& in) {
                return t.gelu(graph_propagate(t, in[0], a_hat, in[1], in[2], in[3], batch));
            },
            {random_mat(rng, batch * v, d), random_mat(rng, d, d), random_mat(rng, d, d),
             random_mat(rng, 1, d)},
            9000);
    }
}

TEST_CASE("gradient accumulates across reuse of the same tensor") {
    Tape tape;
    const double x[] = {1.5};
    Tensor tx = tape.leaf(1, 1, x);
    Tensor y = tape.add(tx, tx); // y = 2x
    Tensor loss = tape.mul(y, y); // (2x)^2 -> d/dx = 8x = 12
    tape.backward(tape.sum_all(loss));
    CHECK(tape.grad(tx)[0] == doctest::Approx(12.0).epsilon(1e-14));
}

TEST_CASE("tape evaluation is bitwise deterministic") {
    auto run = [] {
        std::mt19937_64 rng(11ull);
        const Mat a = random_mat(rng, 6, 4);
        const Mat b = random_mat(rng, 4, 4);
        Tape tape;
        Tensor ta = tape.leaf(a);
        Tensor z = tape.gelu(tape.matmul(ta, tape.leaf(b)));
        Tensor loss = tape.sum_all(tape.block_sumsq(z, 2));
        tape.backward(loss);
        std::vector<double> out{tape.val(loss)[0]};
        const double* g = tape.grad(ta);
        out.insert(out.end(), g, g + a.size());
        return out;
    };
    CHECK(run() == run());
}

TEST_CASE("shape validation rejects malformed expressions") {
    Tape tape;
    Tensor a = tape.leaf(2, 3);
    Tensor b = tape.leaf(3, 2);
    CHECK_THROWS_AS(tape.add(a, b), ValidationError);
    CHECK_THROWS_AS(tape.matmul(a, a), ValidationError);
    CHECK_THROWS_AS(tape.block_sumsq(a, 4), ValidationError);
    CHECK_THROWS_AS(tape.diff_conv(a, tape.leaf(3, 3), 1), ValidationError);
    CHECK_THROWS_AS(tape.backward(a), ValidationError);
    CHECK_THROWS_AS(make_dft_basis(8, 6), ValidationError);
    const double neg[] = {-1.0};
    CHECK_THROWS_AS(tape.sqrt_elem(tape.leaf(1, 1, neg)), ValidationError);
}
