#pragma once

#include <functional>
#include <vector>

#include "taubno/common.hpp"

namespace taubno {

/// Handle into a Tape node; cheap value type. Shapes are carried on the
/// handle so expressions can be validated without touching the tape.
struct Tensor {
    int id = -1;
    int rows = 0;
    int cols = 0;
    int size() const { return rows * cols; }
};

/// Reverse-mode tape over dense row-major 2-D arrays. Forward values are
/// computed eagerly at node creation; backward() seeds the scalar loss and
/// runs adjoints in reverse creation order, accumulating into per-node grad
/// buffers. Everything is single-threaded and runs in a fixed order, so
/// identical op sequences give bit-identical values and gradients.
///
/// Batched fields are stored flattened: a batch of B single-column fields of
/// length V with D features is one (B*V) x D tensor, and the block-structured
/// ops (block_matmul_const, mode_matmul, diff_conv, block_sumsq) take the
/// batch count explicitly and infer the block extent from the row count.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Tensor leaf(int rows, int cols);                     // zero-filled
    Tensor leaf(int rows, int cols, const double* data); // copies rows*cols values
    Tensor leaf(const Mat& m);

    double* val(Tensor t);
    const double* val(Tensor t) const;
    double* grad(Tensor t);
    const double* grad(Tensor t) const;

    Tensor add(Tensor a, Tensor b);
    Tensor sub(Tensor a, Tensor b);
    Tensor mul(Tensor a, Tensor b); // elementwise
    Tensor scale(Tensor a, double s);
    Tensor matmul(Tensor a, Tensor b);
    /// m (R x C) + row (1 x C) broadcast over rows.
    Tensor add_rowvec(Tensor m, Tensor row);
    /// Exact (erf-form) GELU, applied elementwise.
    Tensor gelu(Tensor a);
    /// Applies a fixed matrix to every batch block: z is (batch*a.cols) x d,
    /// the result is (batch*a.rows) x d with out_b = a * z_b. Covers graph
    /// operators (square a) and the spectral analysis/synthesis bases.
    Tensor block_matmul_const(const Mat& a, Tensor z, int batch);
    /// Per-mode feature mix: f is (batch*k) x d, w stacks k square d x d
    /// blocks as (k*d) x d; out[b,k] = f[b,k] * w[k].
    Tensor mode_matmul(Tensor f, Tensor w, int batch);
    /// Width-3 channel-mixing difference stencil down each batch block of z
    /// ((batch*v) x d) with replicate padding. The kernel stacks three d x d
    /// tap matrices as (3*d) x d. Arranged so that constant fields map to
    /// exactly zero in floating point.
    Tensor diff_conv(Tensor z, Tensor kernel, int batch);
    /// Squared Frobenius norm of each batch block: (batch*r) x c -> batch x 1.
    Tensor block_sumsq(Tensor x, int batch);
    Tensor sqrt_elem(Tensor a);
    Tensor sum_all(Tensor a); // 1 x 1

    /// Seeds d(loss)/d(loss) = 1 and accumulates gradients for every node.
    /// `loss` must be 1 x 1. Call at most once per tape.
    void backward(Tensor loss);

    int size() const { return static_cast<int>(nodes_.size()); }
    void clear() { nodes_.clear(); }

private:
    struct Node {
        int rows, cols;
        std::vector<double> val;
        std::vector<double> grad;
        std::function<void(Tape&)> back; // empty for leaves
    };
    std::vector<Node> nodes_;

    Tensor push(int rows, int cols);
    const Node& node(Tensor t) const;
};

/// Truncated real-DFT bases for fields of length `extent`. Analysis rows are
/// cos/-sin waves; synthesis folds in the 1/extent normalization and the
/// band weights (1 for mode 0 and the Nyquist mode when extent is even, else
/// 2), so synthesis(analysis(z)) == z for every real z at the full band
/// k_modes == extent/2 + 1.
struct DftBasis {
    Mat fwd_re, fwd_im; // k_modes x extent
    Mat inv_re, inv_im; // extent x k_modes
};

DftBasis make_dft_basis(int extent, int k_modes);

/// Pre-activation graph propagation, batched like every block op:
/// Z·W_self + (Â·Z)·W_nbr + b, with b broadcast across rows. The caller
/// applies the activation.
Tensor graph_propagate(Tape& tape, Tensor z, const Mat& a_hat, Tensor w_self, Tensor w_nbr,
                       Tensor b, int batch);

} // namespace taubno
