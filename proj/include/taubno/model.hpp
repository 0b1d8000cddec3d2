#pragma once

// The surrogate operator: a function operator over (u0, lambda), a query
// operator over u0 alone, Hadamard fusion, a directed-graph operator over
// three symmetric surrogates, and a trajectory projector.

#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "taubno/connectome.hpp"
#include "taubno/dataset.hpp"
#include "taubno/nn.hpp"
#include "taubno/tensor.hpp"

namespace taubno {

struct TauBnoConfig {
    int v = 0;         // regions; set from the connectome
    int p = 5;         // kinetic parameter count
    int hidden = 64;   // channel width D
    int modes = 16;    // spectral truncation (0 disables the spectral path)
    int layers_fo = 2; // dual-kernel layers in the function operator
    int layers_qo = 2;
    int layers_dgo = 2; // propagation layers per graph branch
    int t_out = 48;     // predicted time steps

    // Ablation toggles. no_fo keeps only an affine lift of u0 (lambda path
    // removed); no_qo fixes the query gate to all-ones; no_dgo makes the
    // graph stage the identity; no_fourier / no_diff drop that kernel from
    // every dual-kernel layer.
    bool no_fo = false;
    bool no_qo = false;
    bool no_dgo = false;
    bool no_fourier = false;
    bool no_diff = false;

    std::string ordering_hash; // region ordering this model is bound to
};

void validate_model_config(const TauBnoConfig& cfg);
nlohmann::json model_config_json(const TauBnoConfig& cfg);
TauBnoConfig model_config_from_json(const nlohmann::json& j);

class TauBnoModel {
public:
    /// Fresh model: random parameters, graph buffers built from the
    /// connectome. cfg.v and cfg.ordering_hash are filled from `c` when
    /// unset; a conflicting ordering_hash raises HashMismatchError.
    TauBnoModel(TauBnoConfig cfg, const Connectome& c, std::mt19937_64& rng);

    /// Rebuilds config, buffers, and values from a checkpoint directory.
    static TauBnoModel load(const std::string& ckpt_dir);
    void save(const std::string& ckpt_dir) const;

    const TauBnoConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    /// Sets the per-feature lambda standardization buffers (mean, std) from
    /// the training split. Zero spread falls back to std = 1.
    void set_lambda_stats(const std::vector<LambdaVector>& train_lambdas);

    /// One tape leaf per parameter entry, in store order.
    std::vector<Tensor> bind(Tape& tape) const;

    /// Batched forward over previously bound leaves. u0: B fields of length
    /// V; lambda: B raw vectors, standardized internally. Returns (B*V) x T.
    Tensor forward(Tape& tape, const std::vector<Tensor>& bound,
                   const std::vector<std::vector<double>>& u0,
                   const std::vector<LambdaVector>& lambda) const;

    /// Copies d(loss)/d(param) from the tape into the store grads.
    void harvest_grads(const Tape& tape, const std::vector<Tensor>& bound);

    /// Single-sample convenience forward returning a V x T matrix.
    Mat predict(const std::vector<double>& u0, const LambdaVector& lambda) const;

private:
    explicit TauBnoModel(TauBnoConfig cfg); // manifest with zero values

    void build_manifest();
    bool use_spectral() const { return !cfg_.no_fourier && cfg_.modes > 0; }
    Tensor dual_kernel_stack(Tape& tape, const std::vector<Tensor>& bound, Tensor z,
                             const std::string& prefix, int n_layers, int batch) const;
    Tensor leaf_of(const std::vector<Tensor>& bound, const std::string& name) const;

    TauBnoConfig cfg_;
    ParamStore params_;
    DftBasis basis_; // empty when the spectral path is off
};

/// Sum over batch blocks of ||truth - pred||_2 / ||truth||_2. `truth` must
/// be a leaf (its values feed the denominators). Zero-norm blocks are
/// floored at 1e-12 with a warning on stderr.
Tensor relative_l2_loss(Tape& tape, Tensor pred, Tensor truth, int batch);

struct TrainConfig {
    int epochs = 300;
    int batch_size = 16;
    double lr0 = 8e-4;
    double lr_min = 2e-6;
    double weight_decay = 0.0; // decoupled AdamW regularization
    unsigned long long seed = 0;
    std::string log_path; // per-epoch CSV when non-empty
    std::string ckpt_dir; // best-validation checkpoint when non-empty
    bool verbose = false; // progress lines on stderr
};

struct TrainResult {
    std::vector<double> train_loss; // per-sample mean, one entry per epoch
    std::vector<double> val_loss;
    int best_epoch = -1;
    double best_val = 0.0;
};

/// Mini-batch training with AdamW and cosine annealing. Standardizes lambda
/// from the train split, shuffles deterministically from cfg.seed, tracks
/// the best validation epoch (strict improvement, earliest wins ties), and
/// aborts with NumericError on a non-finite loss.
TrainResult train_model(TauBnoModel& model, const SplitData& train, const SplitData& val,
                        const TrainConfig& tcfg);

} // namespace taubno
