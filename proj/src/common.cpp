#include "taubno/common.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace taubno {

Mat matmul(const Mat& a, const Mat& b) {
    if (a.cols() != b.rows()) throw ValidationError("matmul: inner dimensions differ");
    Mat out(a.rows(), b.cols());
    for (int i = 0; i < a.rows(); ++i) {
        for (int k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (int j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
        }
    }
    return out;
}

Mat transpose(const Mat& a) {
    Mat out(a.cols(), a.rows());
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

double spectral_radius(const Mat& a, int iters) {
    if (a.rows() != a.cols()) throw ValidationError("spectral_radius: matrix not square");
    const int n = a.rows();
    if (n == 0) return 0.0;
    std::vector<double> v(n, 1.0 / std::sqrt(static_cast<double>(n))), w(n);
    double lambda = 0.0;
    for (int it = 0; it < iters; ++it) {
        for (int i = 0; i < n; ++i) {
            double s = 0.0;
            for (int j = 0; j < n; ++j) s += a(i, j) * v[j];
            w[i] = s;
        }
        double norm = 0.0;
        for (double x : w) norm += x * x;
        norm = std::sqrt(norm);
        if (norm == 0.0) return 0.0;
        lambda = norm;
        for (int i = 0; i < n; ++i) v[i] = w[i] / norm;
    }
    return lambda;
}

std::uint64_t fnv1a64(const void* data, size_t n, std::uint64_t seed) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

std::string to_hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string ordering_hash(const std::vector<std::string>& region_names) {
    std::string joined;
    for (size_t i = 0; i < region_names.size(); ++i) {
        if (i) joined.push_back('\n');
        joined += region_names[i];
    }
    return to_hex(fnv1a64(joined));
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::vector<std::vector<double>> read_csv_matrix(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open file: " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                row.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw ValidationError("non-numeric cell in " + path + ": '" + cell + "'");
            }
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write file: " + path);
    out << content;
    if (!out) throw IoError("write failed: " + path);
}

} // namespace taubno
