#include "taubno/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

namespace taubno {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

void require(bool ok, const std::string& what) {
    if (!ok) throw ValidationError("tensor: " + what);
}

} // namespace

Tensor Tape::push(int rows, int cols) {
    require(rows > 0 && cols > 0, "nonpositive shape");
    Node n;
    n.rows = rows;
    n.cols = cols;
    n.val.assign(static_cast<size_t>(rows) * cols, 0.0);
    n.grad.assign(static_cast<size_t>(rows) * cols, 0.0);
    nodes_.push_back(std::move(n));
    return Tensor{static_cast<int>(nodes_.size()) - 1, rows, cols};
}

const Tape::Node& Tape::node(Tensor t) const {
    require(t.id >= 0 && t.id < size(), "stale tensor handle");
    const Node& n = nodes_[t.id];
    require(n.rows == t.rows && n.cols == t.cols, "tensor shape mismatch with tape");
    return n;
}

Tensor Tape::leaf(int rows, int cols) { return push(rows, cols); }

Tensor Tape::leaf(int rows, int cols, const double* data) {
    Tensor t = push(rows, cols);
    std::copy(data, data + static_cast<size_t>(rows) * cols, nodes_[t.id].val.begin());
    return t;
}

Tensor Tape::leaf(const Mat& m) { return leaf(m.rows(), m.cols(), m.data()); }

double* Tape::val(Tensor t) {
    node(t);
    return nodes_[t.id].val.data();
}
const double* Tape::val(Tensor t) const { return node(t).val.data(); }
double* Tape::grad(Tensor t) {
    node(t);
    return nodes_[t.id].grad.data();
}
const double* Tape::grad(Tensor t) const { return node(t).grad.data(); }

Tensor Tape::add(Tensor a, Tensor b) {
    node(a);
    node(b);
    require(a.rows == b.rows && a.cols == b.cols, "add shape mismatch");
    Tensor out = push(a.rows, a.cols);
    const double* av = val(a);
    const double* bv = val(b);
    double* ov = val(out);
    for (int i = 0; i < out.size(); ++i) ov[i] = av[i] + bv[i];
    nodes_[out.id].back = [a, b, out](Tape& tp) {
        const double* g = tp.grad(out);
        double* ga = tp.grad(a);
        double* gb = tp.grad(b);
        for (int i = 0; i < out.size(); ++i) {
            ga[i] += g[i];
            gb[i] += g[i];
        }
    };
    return out;
}

Tensor Tape::sub(Tensor a, Tensor b) {
    node(a);
    node(b);
    require(a.rows == b.rows && a.cols == b.cols, "sub shape mismatch");
    Tensor out = push(a.rows, a.cols);
    const double* av = val(a);
    const double* bv = val(b);
    double* ov = val(out);
    for (int i = 0; i < out.size(); ++i) ov[i] = av[i] - bv[i];
    nodes_[out.id].back = [a, b, out](Tape& tp) {
        const double* g = tp.grad(out);
        double* ga = tp.grad(a);
        double* gb = tp.grad(b);
        for (int i = 0; i < out.size(); ++i) {
            ga[i] += g[i];
            gb[i] -= g[i];
        }
    };
    return out;
}

Tensor Tape::mul(Tensor a, Tensor b) {
    node(a);
    node(b);
    require(a.rows == b.rows && a.cols == b.cols, "mul shape mismatch");
    Tensor out = push(a.rows, a.cols);
    const double* av = val(a);
    const double* bv = val(b);
    double* ov = val(out);
    for (int i = 0; i < out.size(); ++i) ov[i] = av[i] * bv[i];
    nodes_[out.id].back = [a, b, out](Tape& tp) {
        const double* g = tp.grad(out);
        const double* av = tp.val(a);
        const double* bv = tp.val(b);
        double* ga = tp.grad(a);
        double* gb = tp.grad(b);
        for (int i = 0; i < out.size(); ++i) {
            ga[i] += g[i] * bv[i];
            gb[i] += g[i] * av[i];
        }
    };
    return out;
}

Tensor Tape::scale(Tensor a, double s) {
    node(a);
    Tensor out = push(a.rows, a.cols);
    const double* av = val(a);
    double* ov = val(out);
    for (int i = 0; i < out.size(); ++i) ov[i] = av[i] * s;
    nodes_[out.id].back = [a, out, s](Tape& tp) {
        const double* g = tp.grad(out);
        double* ga = tp.grad(a);
        for (int i = 0; i < out.size(); ++i) ga[i] += g[i] * s;
    };
    return out;
}

Tensor Tape::matmul(Tensor a, Tensor b) {
    node(a);
    node(b);
    require(a.cols == b.rows, "matmul inner dimension mismatch");
    Tensor out = push(a.rows, b.cols);
    const double* av = val(a);
    const double* bv = val(b);
    double* ov = val(out);
    const int r = a.rows, k = a.cols, c = b.cols;
    for (int i = 0; i < r; ++i)
        for (int kk = 0; kk < k; ++kk) {
            const double aik = av[i * k + kk];
            if (aik == 0.0) continue;
            const double* brow = bv + kk * c;
            double* orow = ov + i * c;
            for (int j = 0; j < c; ++j) orow[j] += aik * brow[j];
        }
    nodes_[out.id].back = [a, b, out](Tape& tp) {
        const int r = a.rows, k = a.cols, c = b.cols;
        const double* g = tp.grad(out);
        const double* av = tp.val(a);
        const double* bv = tp.val(b);
        double* ga = tp.grad(a);
        double* gb = tp.grad(b);
        for (int i = 0; i < r; ++i) {
            const double* grow = g + i * c;
            for (int kk = 0; kk < k; ++kk) {
                // dA[i,kk] += sum_j g[i,j] * B[kk,j]
                const double* brow = bv + kk * c;
                double s = 0.0;
                for (int j = 0; j < c; ++j) s += grow[j] * brow[j];
                ga[i * k + kk] += s;
                // dB[kk,:] += A[i,kk] * g[i,:]
                const double aik = av[i * k + kk];
                if (aik == 0.0) continue;
                double* gbrow = gb + kk * c;
                for (int j = 0; j < c; ++j) gbrow[j] += aik * grow[j];
            }
        }
    };
    return out;
}

Tensor Tape::add_rowvec(Tensor m, Tensor row) {
    node(m);
    node(row);
    require(row.rows == 1 && row.cols == m.cols, "add_rowvec shape mismatch");
    Tensor out = push(m.rows, m.cols);
    const double* mv = val(m);
    const double* rv = val(row);
    double* ov = val(out);
    for (int i = 0; i < m.rows; ++i)
        for (int j = 0; j < m.cols; ++j) ov[i * m.cols + j] = mv[i * m.cols + j] + rv[j];
    nodes_[out.id].back = [m, row, out](Tape& tp) {
        const double* g = tp.grad(out);
        double* gm = tp.grad(m);
        double* gr = tp.grad(row);
        for (int i = 0; i < m.rows; ++i)
            for (int j = 0; j < m.cols; ++j) {
                gm[i * m.cols + j] += g[i * m.cols + j];
                gr[j] += g[i * m.cols + j];
            }
    };
    return out;
}

Tensor Tape::gelu(Tensor a) {
    node(a);
    Tensor out = push(a.rows, a.cols);
    const double* av = val(a);
    double* ov = val(out);
    for (int i = 0; i < out.size(); ++i)
        ov[i] = 0.5 * av[i] * (1.0 + std::erf(av[i] * kInvSqrt2));
    nodes_[out.id].back = [a, out](Tape& tp) {
        const double* g = tp.grad(out);
        const double* av = tp.val(a);
        double* ga = tp.grad(a);
        for (int i = 0; i < out.size(); ++i) {
            const double x = av[i];
            const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
            ga[i] += g[i] * (cdf + x * kInvSqrt2Pi * std::exp(-0.5 * x * x));
        }
    };
    return out;
}

Tensor Tape::block_matmul_const(const Mat& a, Tensor z, int batch) {
    node(z);
    require(batch > 0 && z.rows % batch == 0, "block_matmul_const bad batch");
    require(z.rows / batch == a.cols(), "block_matmul_const extent mismatch");
    const int r = a.rows(), c = a.cols(), d = z.cols;
    Tensor out = push(batch * r, d);
    auto am = std::make_shared<Mat>(a); // keep the operator alive for backward
    const double* zv = val(z);
    double* ov = val(out);
    for (int b = 0; b < batch; ++b)
        for (int i = 0; i < r; ++i) {
            double* orow = ov + (b * r + i) * d;
            for (int kk = 0; kk < c; ++kk) {
                const double aik = (*am)(i, kk);
                if (aik == 0.0) continue;
                const double* zrow = zv + (b * c + kk) * d;
                for (int j = 0; j < d; ++j) orow[j] += aik * zrow[j];
            }
        }
    nodes_[out.id].back = [am, z, out, batch, r, c, d](Tape& tp) {
        const double* g = tp.grad(out);
        double* gz = tp.grad(z);
        for (int b = 0; b < batch; ++b)
            for (int i = 0; i < r; ++i) {
                const double* grow = g + (b * r + i) * d;
                for (int kk = 0; kk < c; ++kk) {
                    const double aik = (*am)(i, kk);
                    if (aik == 0.0) continue;
                    double* gzrow = gz + (b * c + kk) * d;
                    for (int j = 0; j < d; ++j) gzrow[j] += aik * grow[j];
                }
            }
    };
    return out;
}

Tensor Tape::mode_matmul(Tensor f, Tensor w, int batch) {
    node(f);
    node(w);
    require(batch > 0 && f.rows % batch == 0, "mode_matmul bad batch");
    const int k = f.rows / batch, d = f.cols;
    require(w.rows == k * d && w.cols == d, "mode_matmul weight shape mismatch");
    Tensor out = push(f.rows, d);
    const double* fv = val(f);
    const double* wv = val(w);
    double* ov = val(out);
    for (int b = 0; b < batch; ++b)
        for (int kk = 0; kk < k; ++kk) {
            const double* frow = fv + (b * k + kk) * d;
            double* orow = ov + (b * k + kk) * d;
            for (int p = 0; p < d; ++p) {
                const double fp = frow[p];
                if (fp == 0.0) continue;
                const double* wrow = wv + (kk * d + p) * d;
                for (int j = 0; j < d; ++j) orow[j] += fp * wrow[j];
            }
        }
    nodes_[out.id].back = [f, w, out, batch, k, d](Tape& tp) {
        const double* g = tp.grad(out);
        const double* fv = tp.val(f);
        const double* wv = tp.val(w);
        double* gf = tp.grad(f);
        double* gw = tp.grad(w);
        for (int b = 0; b < batch; ++b)
            for (int kk = 0; kk < k; ++kk) {
                const double* grow = g + (b * k + kk) * d;
                const double* frow = fv + (b * k + kk) * d;
                double* gfrow = gf + (b * k + kk) * d;
                for (int p = 0; p < d; ++p) {
                    const double* wrow = wv + (kk * d + p) * d;
                    double s = 0.0;
                    for (int j = 0; j < d; ++j) s += grow[j] * wrow[j];
                    gfrow[p] += s;
                    const double fp = frow[p];
                    if (fp == 0.0) continue;
                    double* gwrow = gw + (kk * d + p) * d;
                    for (int j = 0; j < d; ++j) gwrow[j] += fp * grow[j];
                }
            }
    };
    return out;
}

Tensor Tape::diff_conv(Tensor z, Tensor kernel, int batch) {
    node(z);
    node(kernel);
    require(batch > 0 && z.rows % batch == 0, "diff_conv bad batch");
    const int v = z.rows / batch, d = z.cols;
    require(v >= 2, "diff_conv needs at least two rows per block");
    require(kernel.rows == 3 * d && kernel.cols == d,
            "diff_conv kernel must stack three d x d taps");
    Tensor out = push(z.rows, d);
    const double* zv = val(z);
    const double* kv = val(kernel); // rows [0,d) K0, [d,2d) K1, [2d,3d) K2
    double* ov = val(out);
    // out[x] = d0·K0 + d2·K2 + m·(K0+K1+K2) with d0 = z[t0]-z[x],
    // d2 = z[t2]-z[x], m = ((z[x]-z[t0])+(z[x]-z[t2]))/3 — algebraically the
    // mean-subtracted stencil sum_i (K_i - K̄)·z[t_i]. Pairwise differences
    // around the center tap make constant fields vanish exactly in floating
    // point, no matter how K̄ rounds.
    std::vector<double> ssum(static_cast<size_t>(d) * d);
    for (int p = 0; p < d; ++p)
        for (int j = 0; j < d; ++j)
            ssum[p * d + j] = kv[p * d + j] + kv[(d + p) * d + j] + kv[(2 * d + p) * d + j];
    for (int b = 0; b < batch; ++b)
        for (int i = 0; i < v; ++i) {
            const double* z0 = zv + (b * v + std::max(i - 1, 0)) * d;
            const double* z1 = zv + (b * v + i) * d;
            const double* z2 = zv + (b * v + std::min(i + 1, v - 1)) * d;
            double* orow = ov + (b * v + i) * d;
            for (int j = 0; j < d; ++j) orow[j] = 0.0;
            for (int p = 0; p < d; ++p) {
                const double d0 = z0[p] - z1[p];
                const double d2 = z2[p] - z1[p];
                const double m = ((z1[p] - z0[p]) + (z1[p] - z2[p])) / 3.0;
                if (d0 == 0.0 && d2 == 0.0 && m == 0.0) continue;
                const double* k0row = kv + p * d;
                const double* k2row = kv + (2 * d + p) * d;
                const double* srow = ssum.data() + p * d;
                for (int j = 0; j < d; ++j)
                    orow[j] += d0 * k0row[j] + d2 * k2row[j] + m * srow[j];
            }
        }
    nodes_[out.id].back = [z, kernel, out, batch, v, d](Tape& tp) {
        const double* g = tp.grad(out);
        const double* zv = tp.val(z);
        const double* kv = tp.val(kernel);
        double* gz = tp.grad(z);
        double* gk = tp.grad(kernel);
        for (int b = 0; b < batch; ++b)
            for (int i = 0; i < v; ++i) {
                const int t0 = b * v + std::max(i - 1, 0);
                const int t1 = b * v + i;
                const int t2 = b * v + std::min(i + 1, v - 1);
                const double* grow = g + static_cast<size_t>(t1) * d;
                for (int p = 0; p < d; ++p) {
                    const double d0 = zv[t0 * d + p] - zv[t1 * d + p];
                    const double d2 = zv[t2 * d + p] - zv[t1 * d + p];
                    const double m =
                        ((zv[t1 * d + p] - zv[t0 * d + p]) + (zv[t1 * d + p] - zv[t2 * d + p])) /
                        3.0;
                    const double* k0row = kv + p * d;
                    const double* k1row = kv + (d + p) * d;
                    const double* k2row = kv + (2 * d + p) * d;
                    double* gk0 = gk + p * d;
                    double* gk1 = gk + (d + p) * d;
                    double* gk2 = gk + (2 * d + p) * d;
                    double dd0 = 0.0, dd2 = 0.0, dm = 0.0;
                    for (int j = 0; j < d; ++j) {
                        const double gj = grow[j];
                        dd0 += gj * k0row[j];
                        dd2 += gj * k2row[j];
                        dm += gj * (k0row[j] + k1row[j] + k2row[j]);
                        gk0[j] += (d0 + m) * gj;
                        gk1[j] += m * gj;
                        gk2[j] += (d2 + m) * gj;
                    }
                    gz[t0 * d + p] += dd0 - dm / 3.0;
                    gz[t2 * d + p] += dd2 - dm / 3.0;
                    gz[t1 * d + p] += 2.0 * dm / 3.0 - dd0 - dd2;
                }
            }
    };
    return out;
}

Tensor Tape::block_sumsq(Tensor x, int batch) {
    node(x);
    require(batch > 0 && x.rows % batch == 0, "block_sumsq bad batch");
    const int r = x.rows / batch, c = x.cols;
    Tensor out = push(batch, 1);
    const double* xv = val(x);
    double* ov = val(out);
    for (int b = 0; b < batch; ++b) {
        double s = 0.0;
        const double* blk = xv + static_cast<size_t>(b) * r * c;
        for (int i = 0; i < r * c; ++i) s += blk[i] * blk[i];
        ov[b] = s;
    }
    nodes_[out.id].back = [x, out, batch, r, c](Tape& tp) {
        const double* g = tp.grad(out);
        const double* xv = tp.val(x);
        double* gx = tp.grad(x);
        for (int b = 0; b < batch; ++b) {
            const double gb = g[b];
            const size_t off = static_cast<size_t>(b) * r * c;
            for (int i = 0; i < r * c; ++i) gx[off + i] += 2.0 * xv[off + i] * gb;
        }
    };
    return out;
}

Tensor Tape::sqrt_elem(Tensor a) {
    node(a);
    Tensor out = push(a.rows, a.cols);
    const double* av = val(a);
    double* ov = val(out);
    for (int i = 0; i < out.size(); ++i) {
        require(av[i] >= 0.0, "sqrt_elem of a negative value");
        ov[i] = std::sqrt(av[i]);
    }
    nodes_[out.id].back = [a, out](Tape& tp) {
        const double* g = tp.grad(out);
        const double* ov = tp.val(out);
        double* ga = tp.grad(a);
        for (int i = 0; i < out.size(); ++i)
            if (ov[i] > 0.0) ga[i] += g[i] * 0.5 / ov[i]; // zero-grad at the cusp
    };
    return out;
}

Tensor Tape::sum_all(Tensor a) {
    node(a);
    Tensor out = push(1, 1);
    const double* av = val(a);
    double s = 0.0;
    for (int i = 0; i < a.size(); ++i) s += av[i];
    val(out)[0] = s;
    nodes_[out.id].back = [a, out](Tape& tp) {
        const double g = tp.grad(out)[0];
        double* ga = tp.grad(a);
        for (int i = 0; i < a.size(); ++i) ga[i] += g;
    };
    return out;
}

void Tape::backward(Tensor loss) {
    node(loss);
    require(loss.rows == 1 && loss.cols == 1, "backward needs a scalar loss");
    nodes_[loss.id].grad[0] = 1.0;
    for (int i = loss.id; i >= 0; --i)
        if (nodes_[i].back) nodes_[i].back(*this);
}

DftBasis make_dft_basis(int extent, int k_modes) {
    if (extent < 1) throw ValidationError("make_dft_basis: nonpositive extent");
    const int full = extent / 2 + 1;
    if (k_modes < 1 || k_modes > full)
        throw ValidationError("make_dft_basis: k_modes must be in [1, extent/2 + 1]");
    DftBasis b;
    b.fwd_re = Mat(k_modes, extent);
    b.fwd_im = Mat(k_modes, extent);
    b.inv_re = Mat(extent, k_modes);
    b.inv_im = Mat(extent, k_modes);
    const double tau = 6.28318530717958647692;
    for (int k = 0; k < k_modes; ++k) {
        // Band weight: every retained mode k pairs with extent-k except the
        // DC mode and (for even extents) the Nyquist mode.
        const double w = (k == 0 || 2 * k == extent) ? 1.0 : 2.0;
        for (int x = 0; x < extent; ++x) {
            const double ang = tau * k * x / extent;
            b.fwd_re(k, x) = std::cos(ang);
            b.fwd_im(k, x) = -std::sin(ang);
            b.inv_re(x, k) = w / extent * std::cos(ang);
            b.inv_im(x, k) = -w / extent * std::sin(ang);
        }
    }
    return b;
}

Tensor graph_propagate(Tape& tape, Tensor z, const Mat& a_hat, Tensor w_self, Tensor w_nbr,
                       Tensor b, int batch) {
    Tensor self = tape.matmul(z, w_self);
    Tensor nbr = tape.matmul(tape.block_matmul_const(a_hat, z, batch), w_nbr);
    return tape.add_rowvec(tape.add(self, nbr), b);
}

} // namespace taubno
