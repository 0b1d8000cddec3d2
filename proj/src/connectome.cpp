#include "taubno/connectome.hpp"

#include <cmath>
#include <cstdio>
#include <random>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace taubno {

namespace {

std::string stem_of(const std::string& path) {
    auto strip = [&](const std::string& suffix) -> std::string {
        if (path.size() > suffix.size() &&
            path.compare(path.size() - suffix.size(), suffix.size(), suffix) == 0)
            return path.substr(0, path.size() - suffix.size());
        return {};
    };
    if (auto s = strip(".meta.json"); !s.empty()) return s;
    if (auto s = strip(".csv"); !s.empty()) return s;
    return path;
}

} // namespace

Connectome load_connectome(const std::string& path) {
    const std::string stem = stem_of(path);
    const std::string csv_path = stem + ".csv";
    const std::string meta_path = stem + ".meta.json";

    Connectome c;
    auto rows = read_csv_matrix(csv_path);
    if (rows.empty()) throw ValidationError("empty adjacency file: " + csv_path);
    const int v = static_cast<int>(rows.size());
    c.n_regions = v;
    c.adjacency = Mat(v, v);
    for (int i = 0; i < v; ++i) {
        if (static_cast<int>(rows[i].size()) != v)
            throw ValidationError("adjacency row " + std::to_string(i) + " has " +
                                  std::to_string(rows[i].size()) + " columns, expected " +
                                  std::to_string(v));
        for (int j = 0; j < v; ++j) c.adjacency(i, j) = rows[i][j];
    }

    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(read_text_file(meta_path));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("malformed metadata " + meta_path + ": " + e.what());
    }
    try {
        if (meta.at("n_regions").get<int>() != v)
            throw ValidationError("metadata n_regions disagrees with adjacency size");
        c.volumes = meta.at("volumes").get<std::vector<double>>();
        c.region_names = meta.at("region_names").get<std::vector<std::string>>();
        c.coarse_map = meta.at("coarse_map").get<std::vector<int>>();
        c.n_coarse = meta.at("n_coarse").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("metadata " + meta_path + " missing/invalid field: " + e.what());
    }
    c.ordering_hash = ordering_hash(c.region_names);
    if (meta.contains("ordering_hash")) {
        const auto stored = meta["ordering_hash"].get<std::string>();
        if (stored != c.ordering_hash)
            throw HashMismatchError("connectome ordering_hash mismatch: stored " + stored +
                                    ", computed " + c.ordering_hash);
    }
    validate_connectome(c);
    return c;
}

void validate_connectome(const Connectome& c) {
    const int v = c.n_regions;
    if (v <= 0) throw ValidationError("connectome must have at least one region");
    if (c.adjacency.rows() != v || c.adjacency.cols() != v)
        throw ValidationError("adjacency dimension mismatch");
    for (int i = 0; i < v; ++i) {
        for (int j = 0; j < v; ++j) {
            const double w = c.adjacency(i, j);
            if (!std::isfinite(w) || w < 0.0)
                throw ValidationError("negative weight at (" + std::to_string(i) + "," +
                                      std::to_string(j) + ")");
            if (i == j && w != 0.0)
                throw ValidationError("nonzero diagonal at (" + std::to_string(i) + "," +
                                      std::to_string(i) + ")");
        }
    }
    if (static_cast<int>(c.volumes.size()) != v)
        throw ValidationError("volumes length mismatch");
    for (int i = 0; i < v; ++i)
        if (!(c.volumes[i] > 0.0))
            throw ValidationError("nonpositive volume at region " + std::to_string(i));
    if (static_cast<int>(c.region_names.size()) != v)
        throw ValidationError("region_names length mismatch");
    if (static_cast<int>(c.coarse_map.size()) != v)
        throw ValidationError("coarse_map length mismatch");
    if (c.n_coarse <= 0) throw ValidationError("n_coarse must be positive");
    std::set<int> seen;
    for (int i = 0; i < v; ++i) {
        const int k = c.coarse_map[i];
        if (k < 0 || k >= c.n_coarse)
            throw ValidationError("coarse_map entry out of range at region " + std::to_string(i));
        seen.insert(k);
    }
    if (static_cast<int>(seen.size()) != c.n_coarse)
        throw ValidationError("coarse_map is not surjective onto the coarse atlas");
}

void save_connectome(const Connectome& c, const std::string& csv_path,
                     const std::string& meta_path) {
    std::ostringstream csv;
    for (int i = 0; i < c.n_regions; ++i) {
        for (int j = 0; j < c.n_regions; ++j) {
            if (j) csv << ',';
            csv << format_double(c.adjacency(i, j));
        }
        csv << '\n';
    }
    write_text_file(csv_path, csv.str());

    nlohmann::json meta;
    meta["n_regions"] = c.n_regions;
    meta["volumes"] = c.volumes;
    meta["region_names"] = c.region_names;
    meta["coarse_map"] = c.coarse_map;
    meta["n_coarse"] = c.n_coarse;
    meta["ordering_hash"] = ordering_hash(c.region_names);
    write_text_file(meta_path, meta.dump(2) + "\n");
}

SurrogateGraphs build_surrogates(const Connectome& c, ZeroDegreePolicy policy, double epsilon) {
    const int v = c.n_regions;
    const Mat& a = c.adjacency;
    SurrogateGraphs g;

    g.a_sym = Mat(v, v);
    for (int i = 0; i < v; ++i)
        for (int j = 0; j < v; ++j) g.a_sym(i, j) = 0.5 * (a(i, j) + a(j, i));

    // Reciprocal degree vectors. D_out = row sums, D_in = column sums.
    std::vector<double> inv_out(v), inv_in(v);
    for (int i = 0; i < v; ++i) {
        double out_deg = 0.0, in_deg = 0.0;
        for (int j = 0; j < v; ++j) {
            out_deg += a(i, j);
            in_deg += a(j, i);
        }
        auto recip = [&](double d) {
            if (policy == ZeroDegreePolicy::Epsilon) return 1.0 / std::max(d, epsilon);
            return d > 0.0 ? 1.0 / d : 0.0;
        };
        inv_out[i] = recip(out_deg);
        inv_in[i] = recip(in_deg);
    }

    // a_in = A^T D_out^{-1} A: shared upstream sources, weighted by how the
    // source splits its output. a_out mirrors it for shared targets.
    g.a_in = Mat(v, v);
    g.a_out = Mat(v, v);
    for (int k = 0; k < v; ++k) {
        for (int i = 0; i < v; ++i) {
            const double aki = a(k, i);
            const double aik = a(i, k);
            if (aki != 0.0 && inv_out[k] != 0.0) {
                const double s = aki * inv_out[k];
                for (int j = 0; j < v; ++j) g.a_in(i, j) += s * a(k, j);
            }
            if (aik != 0.0 && inv_in[k] != 0.0) {
                const double s = aik * inv_in[k];
                for (int j = 0; j < v; ++j) g.a_out(i, j) += s * a(j, k);
            }
        }
    }
    // Enforce exact symmetry (the formulas are symmetric analytically; this
    // removes round-off skew from the accumulation order).
    for (int i = 0; i < v; ++i) {
        for (int j = i + 1; j < v; ++j) {
            const double in_ij = 0.5 * (g.a_in(i, j) + g.a_in(j, i));
            g.a_in(i, j) = g.a_in(j, i) = in_ij;
            const double out_ij = 0.5 * (g.a_out(i, j) + g.a_out(j, i));
            g.a_out(i, j) = g.a_out(j, i) = out_ij;
        }
    }

    g.a_sym_hat = normalize_graph(g.a_sym);
    g.a_in_hat = normalize_graph(g.a_in);
    g.a_out_hat = normalize_graph(g.a_out);
    return g;
}

Mat normalize_graph(const Mat& a) {
    if (a.rows() != a.cols()) throw ValidationError("normalize_graph: matrix not square");
    const int v = a.rows();
    std::vector<double> dinv(v);
    for (int i = 0; i < v; ++i) {
        double d = 1.0; // self-loop
        for (int j = 0; j < v; ++j) d += a(i, j);
        dinv[i] = 1.0 / std::sqrt(d);
    }
    Mat out(v, v);
    for (int i = 0; i < v; ++i) {
        out(i, i) = dinv[i] * (a(i, i) + 1.0) * dinv[i];
        for (int j = i + 1; j < v; ++j) out(i, j) = out(j, i) = dinv[i] * a(i, j) * dinv[j];
    }
    return out;
}

std::vector<double> aggregate_to_coarse(const Connectome& c, const std::vector<double>& field) {
    if (static_cast<int>(field.size()) != c.n_regions)
        throw ValidationError("aggregate_to_coarse: field length mismatch");
    std::vector<double> num(c.n_coarse, 0.0), den(c.n_coarse, 0.0);
    for (int i = 0; i < c.n_regions; ++i) {
        if (!std::isfinite(field[i]))
            throw NumericError("aggregate_to_coarse: non-finite field value at region " +
                               std::to_string(i));
        const int k = c.coarse_map[i];
        num[k] += c.volumes[i] * field[i];
        den[k] += c.volumes[i];
    }
    std::vector<double> out(c.n_coarse);
    for (int k = 0; k < c.n_coarse; ++k) out[k] = num[k] / den[k];
    return out;
}

Connectome make_synthetic_connectome(int v, int n_coarse, unsigned long long seed,
                                     int extra_out) {
    if (v < 2) throw ValidationError("make_synthetic_connectome: need at least two regions");
    if (n_coarse < 1 || n_coarse > v)
        throw ValidationError("make_synthetic_connectome: coarse count out of range");
    if (extra_out < 0 || extra_out > v - 2)
        throw ValidationError("make_synthetic_connectome: extra_out out of range");

    std::mt19937_64 rng(seed);
    Connectome c;
    c.n_regions = v;
    c.adjacency = Mat(v, v);
    c.volumes.resize(v);
    c.coarse_map.resize(v);
    c.n_coarse = n_coarse;
    for (int i = 0; i < v; ++i) {
        char name[16];
        std::snprintf(name, sizeof(name), "R%03d", i);
        c.region_names.push_back(name);
        c.coarse_map[i] = static_cast<int>(static_cast<long>(i) * n_coarse / v);
    }
    for (int i = 0; i < v; ++i) {
        c.adjacency(i, (i + 1) % v) = uniform(rng, 0.05, 0.35); // strongly connected ring
        for (int e = 0; e < extra_out; ++e) {
            for (int tries = 0; tries < 64; ++tries) {
                const int j = std::min(v - 1, static_cast<int>(u01(rng()) * v));
                if (j == i || c.adjacency(i, j) > 0.0) continue;
                c.adjacency(i, j) = uniform(rng, 0.05, 0.35);
                break;
            }
        }
    }
    for (int i = 0; i < v; ++i) c.volumes[i] = uniform(rng, 0.5, 2.0);
    c.ordering_hash = ordering_hash(c.region_names);
    validate_connectome(c);
    return c;
}

} // namespace taubno
