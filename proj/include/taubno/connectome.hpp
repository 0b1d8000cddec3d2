#pragma once

#include <string>
#include <vector>

#include "taubno/common.hpp"

namespace taubno {

/// Directed structural connectome. `adjacency(i,j)` is the connection
/// strength of edge i->j (row = source). Immutable after load; safe to share
/// across threads.
struct Connectome {
    int n_regions = 0;
    Mat adjacency;                         // V x V, non-negative, zero diagonal
    std::vector<double> volumes;           // mm^3, strictly positive
    std::vector<std::string> region_names; // atlas order, frozen downstream
    std::vector<int> coarse_map;           // fine index -> coarse index
    int n_coarse = 0;
    std::string ordering_hash;             // hash of region_names in order
};

enum class ZeroDegreePolicy {
    ReciprocalZero, // 1/0 := 0, dropping the node's second-order paths
    Epsilon,        // 1/max(d, eps) with a small positive eps
};

/// The three symmetric surrogates of the directed adjacency plus their
/// self-loop-normalized forms.
struct SurrogateGraphs {
    Mat a_sym, a_in, a_out;
    Mat a_sym_hat, a_in_hat, a_out_hat;
};

/// Loads `<stem>.csv` (adjacency) plus the sibling `<stem>.meta.json`.
/// `path` may point at either file; both must exist.
Connectome load_connectome(const std::string& path);

void validate_connectome(const Connectome& c);

void save_connectome(const Connectome& c, const std::string& csv_path,
                     const std::string& meta_path);

/// a_sym = (A+A^T)/2; a_in = A^T D_out^{-1} A; a_out = A D_in^{-1} A^T.
/// Degenerate degrees are handled per `policy`.
SurrogateGraphs build_surrogates(const Connectome& c,
                                 ZeroDegreePolicy policy = ZeroDegreePolicy::ReciprocalZero,
                                 double epsilon = 1e-12);

/// Symmetric normalization with self-loops:
/// A_hat = D~^{-1/2} (A+I) D~^{-1/2}, D~ = diag((A+I)·1).
Mat normalize_graph(const Mat& a);

/// Volume-corrected mean over each coarse region:
/// out[k] = sum_{i in k} V_i field[i] / sum_{i in k} V_i.
std::vector<double> aggregate_to_coarse(const Connectome& c,
                                        const std::vector<double>& field);

/// Deterministic synthetic connectome: a directed ring plus `extra_out`
/// random out-edges per node, weights U[0.05,0.35], volumes U[0.5,2],
/// contiguous coarse blocks.
Connectome make_synthetic_connectome(int v, int n_coarse, unsigned long long seed,
                                     int extra_out = 2);

} // namespace taubno
