#pragma once

#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

namespace taubno {

// Error taxonomy shared by all modules. The CLI maps each class to a
// distinct exit code.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct HashMismatchError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Dense row-major matrix of doubles. Connectomes in scope are small
/// (V <= ~500), so everything stays dense.
class Mat {
public:
    Mat() = default;
    Mat(int rows, int cols, double fill = 0.0)
        : rows_(rows), cols_(cols), d_(static_cast<size_t>(rows) * cols, fill) {}

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    double& operator()(int r, int c) { return d_[static_cast<size_t>(r) * cols_ + c]; }
    double operator()(int r, int c) const { return d_[static_cast<size_t>(r) * cols_ + c]; }
    double* data() { return d_.data(); }
    const double* data() const { return d_.data(); }
    size_t size() const { return d_.size(); }

    bool operator==(const Mat& o) const {
        return rows_ == o.rows_ && cols_ == o.cols_ && d_ == o.d_;
    }

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> d_;
};

Mat matmul(const Mat& a, const Mat& b);
Mat transpose(const Mat& a);

/// Spectral radius estimate by power iteration on |A| eigenstructure.
/// Intended for the symmetric normalized graph matrices.
double spectral_radius(const Mat& a, int iters = 200);

// FNV-1a 64-bit. Used for ordering/config/checkpoint hashes; stable across
// platforms and dependency-free.
std::uint64_t fnv1a64(const void* data, size_t n, std::uint64_t seed = 1469598103934665603ull);
std::uint64_t fnv1a64(const std::string& s);
std::string to_hex(std::uint64_t v);

/// Hash of a region-name ordering. Every downstream artifact embeds this so
/// that datasets, checkpoints and connectomes can be cross-checked.
std::string ordering_hash(const std::vector<std::string>& region_names);

// Deterministic uniform doubles from a 64-bit generator state. We map raw
// bits ourselves so results do not depend on the standard library's
// distribution implementation.
inline double u01(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

template <class Rng>
double uniform(Rng& rng, double lo, double hi) {
    return lo + (hi - lo) * u01(rng());
}

/// Shortest-round-trip style formatting for CSV output (17 significant
/// digits is enough to reproduce any double exactly).
std::string format_double(double v);

std::vector<std::vector<double>> read_csv_matrix(const std::string& path);
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

} // namespace taubno
