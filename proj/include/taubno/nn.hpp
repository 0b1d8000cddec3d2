#pragma once

// Parameter storage, initializers, the optimizer, and checkpoint
// serialization shared by every trainable model.

#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "taubno/common.hpp"

namespace taubno {

struct ParamEntry {
    std::string name;
    Mat value;
    Mat grad;       // filled by the training loop after each backward pass
    bool trainable; // false for stored buffers (graph operators, feature stats)
};

/// Ordered collection of named parameters. Creation order defines the
/// checkpoint layout, so model construction must register entries in a
/// fixed order.
class ParamStore {
public:
    /// Returns the entry index. Duplicate names are rejected.
    int add(const std::string& name, Mat value, bool trainable = true);

    int size() const { return static_cast<int>(entries_.size()); }
    ParamEntry& operator[](int i) { return entries_[static_cast<size_t>(i)]; }
    const ParamEntry& operator[](int i) const { return entries_[static_cast<size_t>(i)]; }

    int find(const std::string& name) const; // -1 when absent
    ParamEntry& at(const std::string& name);
    const ParamEntry& at(const std::string& name) const;

    void zero_grad();
    size_t scalar_count() const;

private:
    std::vector<ParamEntry> entries_;
};

/// Affine-weight initializer: uniform on ±sqrt(6 / (fan_in + fan_out)).
Mat glorot_uniform(std::mt19937_64& rng, int rows, int cols, int fan_in, int fan_out);

/// Uniform on ±scale. Used for spectral multipliers (scale 1/(D·K)).
Mat scaled_uniform(std::mt19937_64& rng, int rows, int cols, double scale);

/// Cosine annealing from lr0 at epoch 0 to lr_min at epoch == epochs.
double cosine_lr(int epoch, double lr0, double lr_min, int epochs);

/// Decoupled-weight-decay Adam over the trainable entries of a store.
/// Moment buffers are keyed by entry index and sized on first use.
class AdamW {
public:
    explicit AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
                   double weight_decay = 0.0);

    /// One update consuming the grads currently held in the store.
    void step(ParamStore& params, double lr);

    long steps_taken() const { return t_; }

private:
    double beta1_, beta2_, eps_, wd_;
    long t_ = 0;
    std::vector<Mat> m_, v_;
};

/// Writes `model.meta.json` (config plus a parameter manifest of name,
/// shape, byte offset) and `model.bin` (little-endian 32-bit floats
/// concatenated in manifest order) into `dir`, creating it if needed.
void save_checkpoint(const std::string& dir, const ParamStore& params,
                     const nlohmann::json& config);

/// Parses `dir`/model.meta.json.
nlohmann::json read_checkpoint_meta(const std::string& dir);

/// Fills `params` values from `dir`, validating that the stored manifest
/// matches the store exactly (names, shapes, order, flags).
void load_checkpoint_values(const std::string& dir, ParamStore& params);

} // namespace taubno
