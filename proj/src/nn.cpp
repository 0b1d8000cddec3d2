#include "taubno/nn.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace taubno {

int ParamStore::add(const std::string& name, Mat value, bool trainable) {
    if (name.empty()) throw ValidationError("params: empty parameter name");
    if (find(name) >= 0) throw ValidationError("params: duplicate parameter name '" + name + "'");
    ParamEntry e;
    e.name = name;
    e.grad = Mat(value.rows(), value.cols());
    e.value = std::move(value);
    e.trainable = trainable;
    entries_.push_back(std::move(e));
    return static_cast<int>(entries_.size()) - 1;
}

int ParamStore::find(const std::string& name) const {
    for (size_t i = 0; i < entries_.size(); ++i)
        if (entries_[i].name == name) return static_cast<int>(i);
    return -1;
}

ParamEntry& ParamStore::at(const std::string& name) {
    const int i = find(name);
    if (i < 0) throw ValidationError("params: no parameter named '" + name + "'");
    return entries_[static_cast<size_t>(i)];
}

const ParamEntry& ParamStore::at(const std::string& name) const {
    const int i = find(name);
    if (i < 0) throw ValidationError("params: no parameter named '" + name + "'");
    return entries_[static_cast<size_t>(i)];
}

void ParamStore::zero_grad() {
    for (ParamEntry& e : entries_) e.grad = Mat(e.value.rows(), e.value.cols());
}

size_t ParamStore::scalar_count() const {
    size_t n = 0;
    for (const ParamEntry& e : entries_) n += e.value.size();
    return n;
}

Mat glorot_uniform(std::mt19937_64& rng, int rows, int cols, int fan_in, int fan_out) {
    if (fan_in <= 0 || fan_out <= 0) throw ValidationError("init: fans must be positive");
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    return scaled_uniform(rng, rows, cols, bound);
}

Mat scaled_uniform(std::mt19937_64& rng, int rows, int cols, double scale) {
    Mat m(rows, cols);
    for (size_t i = 0; i < m.size(); ++i) m.data()[i] = uniform(rng, -scale, scale);
    return m;
}

double cosine_lr(int epoch, double lr0, double lr_min, int epochs) {
    if (epochs <= 0) throw ValidationError("cosine_lr: epochs must be positive");
    const double frac = static_cast<double>(epoch) / epochs;
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(M_PI * frac));
}

AdamW::AdamW(double beta1, double beta2, double eps, double weight_decay)
    : beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay) {}

void AdamW::step(ParamStore& params, double lr) {
    const size_t n = static_cast<size_t>(params.size());
    if (m_.empty()) {
        m_.resize(n);
        v_.resize(n);
        for (size_t i = 0; i < n; ++i) {
            const ParamEntry& e = params[static_cast<int>(i)];
            m_[i] = Mat(e.value.rows(), e.value.cols());
            v_[i] = Mat(e.value.rows(), e.value.cols());
        }
    }
    if (m_.size() != n) throw ValidationError("adamw: parameter count changed between steps");

    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < n; ++i) {
        ParamEntry& e = params[static_cast<int>(i)];
        if (!e.trainable) continue;
        double* w = e.value.data();
        const double* g = e.grad.data();
        double* m = m_[i].data();
        double* v = v_[i].data();
        for (size_t k = 0; k < e.value.size(); ++k) {
            m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
            v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
            const double mhat = m[k] / bc1;
            const double vhat = v[k] / bc2;
            w[k] -= lr * (mhat / (std::sqrt(vhat) + eps_) + wd_ * w[k]);
        }
    }
}

namespace {

constexpr const char* kFormatTag = "taubno-checkpoint-v1";

void append_f32_le(std::string& out, double x) {
    const float f = static_cast<float>(x);
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    out.push_back(static_cast<char>(u & 0xff));
    out.push_back(static_cast<char>((u >> 8) & 0xff));
    out.push_back(static_cast<char>((u >> 16) & 0xff));
    out.push_back(static_cast<char>((u >> 24) & 0xff));
}

double read_f32_le(const unsigned char* p) {
    const std::uint32_t u = static_cast<std::uint32_t>(p[0]) |
                            (static_cast<std::uint32_t>(p[1]) << 8) |
                            (static_cast<std::uint32_t>(p[2]) << 16) |
                            (static_cast<std::uint32_t>(p[3]) << 24);
    float f;
    std::memcpy(&f, &u, 4);
    return static_cast<double>(f);
}

std::string read_binary_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint: cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

} // namespace

void save_checkpoint(const std::string& dir, const ParamStore& params,
                     const nlohmann::json& config) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);

    nlohmann::json meta;
    meta["format"] = kFormatTag;
    meta["config"] = config;
    if (config.contains("ordering_hash")) meta["ordering_hash"] = config["ordering_hash"];

    std::string blob;
    blob.reserve(4 * params.scalar_count());
    nlohmann::json manifest = nlohmann::json::array();
    for (int i = 0; i < params.size(); ++i) {
        const ParamEntry& e = params[i];
        nlohmann::json entry;
        entry["name"] = e.name;
        entry["rows"] = e.value.rows();
        entry["cols"] = e.value.cols();
        entry["trainable"] = e.trainable;
        entry["byte_offset"] = blob.size();
        manifest.push_back(entry);
        for (size_t k = 0; k < e.value.size(); ++k) append_f32_le(blob, e.value.data()[k]);
    }
    meta["params"] = manifest;
    meta["bin_bytes"] = blob.size();

    write_text_file(dir + "/model.meta.json", meta.dump(2) + "\n");
    std::ofstream out(dir + "/model.bin", std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("checkpoint: cannot write " + dir + "/model.bin");
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw IoError("checkpoint: short write to " + dir + "/model.bin");
}

nlohmann::json read_checkpoint_meta(const std::string& dir) {
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(read_text_file(dir + "/model.meta.json"));
    } catch (const nlohmann::json::exception& e) {
        throw IoError("checkpoint: malformed model.meta.json in " + dir + ": " + e.what());
    }
    if (meta.value("format", "") != kFormatTag)
        throw ValidationError("checkpoint: unrecognized format tag in " + dir);
    return meta;
}

void load_checkpoint_values(const std::string& dir, ParamStore& params) {
    const nlohmann::json meta = read_checkpoint_meta(dir);
    const nlohmann::json& manifest = meta.at("params");
    if (static_cast<int>(manifest.size()) != params.size())
        throw ValidationError("checkpoint: manifest has " + std::to_string(manifest.size()) +
                              " entries, model expects " + std::to_string(params.size()));

    const std::string blob = read_binary_file(dir + "/model.bin");
    for (int i = 0; i < params.size(); ++i) {
        ParamEntry& e = params[i];
        const nlohmann::json& entry = manifest.at(static_cast<size_t>(i));
        if (entry.value("name", "") != e.name || entry.value("rows", -1) != e.value.rows() ||
            entry.value("cols", -1) != e.value.cols() ||
            entry.value("trainable", !e.trainable) != e.trainable)
            throw ValidationError("checkpoint: manifest entry " + std::to_string(i) + " ('" +
                                  entry.value("name", "?") + "') does not match model parameter '" +
                                  e.name + "'");
        const size_t off = entry.at("byte_offset").get<size_t>();
        const size_t need = off + 4 * e.value.size();
        if (need > blob.size())
            throw ValidationError("checkpoint: model.bin truncated (need " + std::to_string(need) +
                                  " bytes, have " + std::to_string(blob.size()) + ")");
        const unsigned char* p = reinterpret_cast<const unsigned char*>(blob.data()) + off;
        for (size_t k = 0; k < e.value.size(); ++k) e.value.data()[k] = read_f32_le(p + 4 * k);
    }
}

} // namespace taubno
