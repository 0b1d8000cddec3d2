#include "taubno/model.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

namespace taubno {

void validate_model_config(const TauBnoConfig& cfg) {
    if (cfg.v < 2) throw ValidationError("model config: need at least two regions");
    if (cfg.p != 5) throw ValidationError("model config: expected five kinetic parameters");
    if (cfg.hidden < 1 || cfg.t_out < 1)
        throw ValidationError("model config: hidden width and output steps must be positive");
    if (cfg.layers_fo < 1 || cfg.layers_qo < 1 || cfg.layers_dgo < 1)
        throw ValidationError("model config: layer counts must be positive");
    if (cfg.modes < 0 || cfg.modes > cfg.v / 2 + 1)
        throw ValidationError("model config: modes must lie in [0, v/2 + 1]");
    if (cfg.no_fo && cfg.no_qo && cfg.no_dgo)
        throw ValidationError("model config: disabling all three operators leaves no model");
}

nlohmann::json model_config_json(const TauBnoConfig& cfg) {
    nlohmann::json j;
    j["v"] = cfg.v;
    j["p"] = cfg.p;
    j["hidden"] = cfg.hidden;
    j["modes"] = cfg.modes;
    j["layers_fo"] = cfg.layers_fo;
    j["layers_qo"] = cfg.layers_qo;
    j["layers_dgo"] = cfg.layers_dgo;
    j["t_out"] = cfg.t_out;
    j["no_fo"] = cfg.no_fo;
    j["no_qo"] = cfg.no_qo;
    j["no_dgo"] = cfg.no_dgo;
    j["no_fourier"] = cfg.no_fourier;
    j["no_diff"] = cfg.no_diff;
    j["ordering_hash"] = cfg.ordering_hash;
    return j;
}

TauBnoConfig model_config_from_json(const nlohmann::json& j) {
    TauBnoConfig cfg;
    try {
        cfg.v = j.value("v", cfg.v);
        cfg.p = j.value("p", cfg.p);
        cfg.hidden = j.value("hidden", cfg.hidden);
        cfg.modes = j.value("modes", cfg.modes);
        cfg.layers_fo = j.value("layers_fo", cfg.layers_fo);
        cfg.layers_qo = j.value("layers_qo", cfg.layers_qo);
        cfg.layers_dgo = j.value("layers_dgo", cfg.layers_dgo);
        cfg.t_out = j.value("t_out", cfg.t_out);
        cfg.no_fo = j.value("no_fo", cfg.no_fo);
        cfg.no_qo = j.value("no_qo", cfg.no_qo);
        cfg.no_dgo = j.value("no_dgo", cfg.no_dgo);
        cfg.no_fourier = j.value("no_fourier", cfg.no_fourier);
        cfg.no_diff = j.value("no_diff", cfg.no_diff);
        cfg.ordering_hash = j.value("ordering_hash", cfg.ordering_hash);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
    return cfg;
}

namespace {

TauBnoConfig adopt_connectome(TauBnoConfig cfg, const Connectome& c) {
    if (cfg.v == 0) cfg.v = c.n_regions;
    if (cfg.v != c.n_regions)
        throw ValidationError("model config: v = " + std::to_string(cfg.v) +
                              " does not match the connectome's " +
                              std::to_string(c.n_regions) + " regions");
    if (cfg.ordering_hash.empty())
        cfg.ordering_hash = c.ordering_hash;
    else if (cfg.ordering_hash != c.ordering_hash)
        throw HashMismatchError("model config: ordering hash " + cfg.ordering_hash +
                                " does not match connectome " + c.ordering_hash);
    return cfg;
}

} // namespace

TauBnoModel::TauBnoModel(TauBnoConfig cfg) : cfg_(std::move(cfg)) {
    validate_model_config(cfg_);
    build_manifest();
    if (use_spectral()) basis_ = make_dft_basis(cfg_.v, cfg_.modes);
}

TauBnoModel::TauBnoModel(TauBnoConfig cfg, const Connectome& c, std::mt19937_64& rng)
    : TauBnoModel(adopt_connectome(std::move(cfg), c)) {
    if (!cfg_.no_dgo) {
        const SurrogateGraphs g = build_surrogates(c);
        params_.at("graph.a_sym_hat").value = g.a_sym_hat;
        params_.at("graph.a_in_hat").value = g.a_in_hat;
        params_.at("graph.a_out_hat").value = g.a_out_hat;
    }
    // Random init in manifest order so a seed pins every weight. Biases stay
    // zero; spectral multipliers are small (1/(D*K)); everything else gets
    // the fan-based uniform.
    for (int i = 0; i < params_.size(); ++i) {
        ParamEntry& e = params_[i];
        if (!e.trainable || e.name.ends_with(".b")) continue;
        const int r = e.value.rows(), cc = e.value.cols();
        if (e.name.find(".spec_") != std::string::npos)
            e.value = scaled_uniform(rng, r, cc, 1.0 / (cfg_.hidden * std::max(1, cfg_.modes)));
        else if (e.name.ends_with(".diff"))
            e.value = glorot_uniform(rng, r, cc, cfg_.hidden, cfg_.hidden);
        else
            e.value = glorot_uniform(rng, r, cc, r, cc);
    }
}

void TauBnoModel::build_manifest() {
    const int d = cfg_.hidden, p = cfg_.p, v = cfg_.v;

    params_.add("stats.lambda_mean", Mat(1, p), false);
    params_.add("stats.lambda_std", Mat(1, p, 1.0), false);
    if (!cfg_.no_dgo) {
        params_.add("graph.a_sym_hat", Mat(v, v), false);
        params_.add("graph.a_in_hat", Mat(v, v), false);
        params_.add("graph.a_out_hat", Mat(v, v), false);
    }

    auto add_dual_kernel_layers = [&](const std::string& prefix, int n_layers) {
        for (int l = 0; l < n_layers; ++l) {
            const std::string base = prefix + ".l" + std::to_string(l) + ".";
            params_.add(base + "w", Mat(d, d));
            if (use_spectral()) {
                params_.add(base + "spec_re", Mat(cfg_.modes * d, d));
                params_.add(base + "spec_im", Mat(cfg_.modes * d, d));
            }
            if (!cfg_.no_diff) params_.add(base + "diff", Mat(3 * d, d));
            params_.add(base + "b", Mat(1, d));
        }
    };

    if (cfg_.no_fo) {
        params_.add("fo.lift.w", Mat(1, d));
        params_.add("fo.lift.b", Mat(1, d));
    } else {
        params_.add("fo.lift.w", Mat(1 + p, d));
        params_.add("fo.lift.b", Mat(1, d));
        add_dual_kernel_layers("fo", cfg_.layers_fo);
        params_.add("fo.proj.w", Mat(d, d));
        params_.add("fo.proj.b", Mat(1, d));
    }
    if (!cfg_.no_qo) {
        params_.add("qo.lift.w", Mat(1, d));
        params_.add("qo.lift.b", Mat(1, d));
        add_dual_kernel_layers("qo", cfg_.layers_qo);
        params_.add("qo.proj.w", Mat(d, d));
        params_.add("qo.proj.b", Mat(1, d));
    }
    if (!cfg_.no_dgo) {
        params_.add("dgo.embed.w", Mat(d, d));
        params_.add("dgo.embed.b", Mat(1, d));
        for (const char* br : {"sym", "in", "out"})
            for (int l = 0; l < cfg_.layers_dgo; ++l) {
                const std::string base = std::string("dgo.") + br + ".l" + std::to_string(l) + ".";
                params_.add(base + "w_self", Mat(d, d));
                params_.add(base + "w_nbr", Mat(d, d));
                params_.add(base + "b", Mat(1, d));
            }
    }
    params_.add("proj.h.w", Mat(d, d));
    params_.add("proj.h.b", Mat(1, d));
    params_.add("proj.out.w", Mat(d, cfg_.t_out));
    params_.add("proj.out.b", Mat(1, cfg_.t_out));
}

TauBnoModel TauBnoModel::load(const std::string& ckpt_dir) {
    const nlohmann::json meta = read_checkpoint_meta(ckpt_dir);
    if (!meta.contains("config")) throw ValidationError("checkpoint: meta lacks a config block");
    TauBnoModel m(model_config_from_json(meta["config"]));
    load_checkpoint_values(ckpt_dir, m.params_);
    return m;
}

void TauBnoModel::save(const std::string& ckpt_dir) const {
    save_checkpoint(ckpt_dir, params_, model_config_json(cfg_));
}

void TauBnoModel::set_lambda_stats(const std::vector<LambdaVector>& train_lambdas) {
    if (train_lambdas.empty())
        throw ValidationError("lambda stats: need at least one training sample");
    const int p = cfg_.p;
    Mat mean(1, p), stdev(1, p);
    for (const LambdaVector& lv : train_lambdas) {
        const auto a = lv.as_array();
        for (int j = 0; j < p; ++j) mean(0, j) += a[j];
    }
    for (int j = 0; j < p; ++j) mean(0, j) /= static_cast<double>(train_lambdas.size());
    for (const LambdaVector& lv : train_lambdas) {
        const auto a = lv.as_array();
        for (int j = 0; j < p; ++j) {
            const double dlt = a[j] - mean(0, j);
            stdev(0, j) += dlt * dlt;
        }
    }
    for (int j = 0; j < p; ++j) {
        stdev(0, j) = std::sqrt(stdev(0, j) / static_cast<double>(train_lambdas.size()));
        if (stdev(0, j) < 1e-15) stdev(0, j) = 1.0;
    }
    params_.at("stats.lambda_mean").value = mean;
    params_.at("stats.lambda_std").value = stdev;
}

std::vector<Tensor> TauBnoModel::bind(Tape& tape) const {
    std::vector<Tensor> bound;
    bound.reserve(static_cast<size_t>(params_.size()));
    for (int i = 0; i < params_.size(); ++i) bound.push_back(tape.leaf(params_[i].value));
    return bound;
}

Tensor TauBnoModel::leaf_of(const std::vector<Tensor>& bound, const std::string& name) const {
    const int i = params_.find(name);
    if (i < 0 || static_cast<size_t>(i) >= bound.size())
        throw ValidationError("model: unbound parameter '" + name + "'");
    return bound[static_cast<size_t>(i)];
}

Tensor TauBnoModel::dual_kernel_stack(Tape& t, const std::vector<Tensor>& bound, Tensor z,
                                      const std::string& prefix, int n_layers, int batch) const {
    for (int l = 0; l < n_layers; ++l) {
        const std::string base = prefix + ".l" + std::to_string(l) + ".";
        Tensor core = t.matmul(z, leaf_of(bound, base + "w"));
        if (use_spectral()) {
            // Complex multiplier on the truncated band, then synthesis.
            Tensor zre = t.block_matmul_const(basis_.fwd_re, z, batch);
            Tensor zim = t.block_matmul_const(basis_.fwd_im, z, batch);
            Tensor rre = leaf_of(bound, base + "spec_re");
            Tensor rim = leaf_of(bound, base + "spec_im");
            Tensor ore = t.sub(t.mode_matmul(zre, rre, batch), t.mode_matmul(zim, rim, batch));
            Tensor oim = t.add(t.mode_matmul(zre, rim, batch), t.mode_matmul(zim, rre, batch));
            core = t.add(core, t.add(t.block_matmul_const(basis_.inv_re, ore, batch),
                                     t.block_matmul_const(basis_.inv_im, oim, batch)));
        }
        if (!cfg_.no_diff)
            core = t.add(core, t.diff_conv(z, leaf_of(bound, base + "diff"), batch));
        z = t.gelu(t.add_rowvec(core, leaf_of(bound, base + "b")));
    }
    return z;
}

Tensor TauBnoModel::forward(Tape& t, const std::vector<Tensor>& bound,
                            const std::vector<std::vector<double>>& u0,
                            const std::vector<LambdaVector>& lambda) const {
    const int batch = static_cast<int>(u0.size());
    const int v = cfg_.v, p = cfg_.p;
    if (batch == 0 || lambda.size() != u0.size())
        throw ValidationError("forward: need matching, non-empty u0 and lambda batches");
    for (const auto& f : u0)
        if (static_cast<int>(f.size()) != v)
            throw ValidationError("forward: initial field length does not match region count");

    Mat u0col(batch * v, 1);
    for (int b = 0; b < batch; ++b)
        for (int i = 0; i < v; ++i) u0col(b * v + i, 0) = u0[static_cast<size_t>(b)][i];
    Tensor u0_leaf = t.leaf(u0col);

    Tensor r;
    if (cfg_.no_fo) {
        r = t.add_rowvec(t.matmul(u0_leaf, leaf_of(bound, "fo.lift.w")),
                         leaf_of(bound, "fo.lift.b"));
    } else {
        const double* mean = params_.at("stats.lambda_mean").value.data();
        const double* stdev = params_.at("stats.lambda_std").value.data();
        Mat x(batch * v, 1 + p);
        for (int b = 0; b < batch; ++b) {
            const auto a = lambda[static_cast<size_t>(b)].as_array();
            for (int i = 0; i < v; ++i) {
                x(b * v + i, 0) = u0[static_cast<size_t>(b)][i];
                for (int j = 0; j < p; ++j)
                    x(b * v + i, 1 + j) = (a[static_cast<size_t>(j)] - mean[j]) / stdev[j];
            }
        }
        Tensor z = t.add_rowvec(t.matmul(t.leaf(x), leaf_of(bound, "fo.lift.w")),
                                leaf_of(bound, "fo.lift.b"));
        z = dual_kernel_stack(t, bound, z, "fo", cfg_.layers_fo, batch);
        r = t.add_rowvec(t.matmul(z, leaf_of(bound, "fo.proj.w")), leaf_of(bound, "fo.proj.b"));
    }

    Tensor fused = r;
    if (!cfg_.no_qo) {
        Tensor z = t.add_rowvec(t.matmul(u0_leaf, leaf_of(bound, "qo.lift.w")),
                                leaf_of(bound, "qo.lift.b"));
        z = dual_kernel_stack(t, bound, z, "qo", cfg_.layers_qo, batch);
        Tensor q =
            t.add_rowvec(t.matmul(z, leaf_of(bound, "qo.proj.w")), leaf_of(bound, "qo.proj.b"));
        fused = t.mul(r, q);
    }

    Tensor g = fused;
    if (!cfg_.no_dgo) {
        Tensor z0 = t.add_rowvec(t.matmul(fused, leaf_of(bound, "dgo.embed.w")),
                                 leaf_of(bound, "dgo.embed.b"));
        const char* names[3] = {"sym", "in", "out"};
        const Mat* hats[3] = {&params_.at("graph.a_sym_hat").value,
                              &params_.at("graph.a_in_hat").value,
                              &params_.at("graph.a_out_hat").value};
        Tensor acc;
        for (int br = 0; br < 3; ++br) {
            Tensor zb = z0;
            for (int l = 0; l < cfg_.layers_dgo; ++l) {
                const std::string base =
                    std::string("dgo.") + names[br] + ".l" + std::to_string(l) + ".";
                zb = t.gelu(graph_propagate(t, zb, *hats[br], leaf_of(bound, base + "w_self"),
                                            leaf_of(bound, base + "w_nbr"),
                                            leaf_of(bound, base + "b"), batch));
            }
            acc = (br == 0) ? zb : t.add(acc, zb);
        }
        g = t.scale(acc, 1.0 / 3.0);
    }

    Tensor h = t.gelu(
        t.add_rowvec(t.matmul(g, leaf_of(bound, "proj.h.w")), leaf_of(bound, "proj.h.b")));
    return t.add_rowvec(t.matmul(h, leaf_of(bound, "proj.out.w")), leaf_of(bound, "proj.out.b"));
}

void TauBnoModel::harvest_grads(const Tape& tape, const std::vector<Tensor>& bound) {
    if (bound.size() != static_cast<size_t>(params_.size()))
        throw ValidationError("harvest: bound leaves do not match the parameter store");
    for (int i = 0; i < params_.size(); ++i) {
        ParamEntry& e = params_[i];
        if (!e.trainable) continue;
        const double* g = tape.grad(bound[static_cast<size_t>(i)]);
        std::copy(g, g + e.value.size(), e.grad.data());
    }
}

Mat TauBnoModel::predict(const std::vector<double>& u0, const LambdaVector& lambda) const {
    Tape tape;
    const std::vector<Tensor> bound = bind(tape);
    Tensor out = forward(tape, bound, {u0}, {lambda});
    Mat result(cfg_.v, cfg_.t_out);
    const double* ov = tape.val(out);
    std::copy(ov, ov + result.size(), result.data());
    return result;
}

Tensor relative_l2_loss(Tape& tape, Tensor pred, Tensor truth, int batch) {
    if (pred.rows != truth.rows || pred.cols != truth.cols)
        throw ValidationError("loss: prediction and truth shapes differ");
    if (batch <= 0 || pred.rows % batch != 0)
        throw ValidationError("loss: batch must divide the stacked rows");
    Tensor err_norm = tape.sqrt_elem(tape.block_sumsq(tape.sub(pred, truth), batch));
    const int block = pred.rows / batch * pred.cols;
    const double* tv = tape.val(truth);
    Mat inv_norm(batch, 1);
    for (int b = 0; b < batch; ++b) {
        double s = 0.0;
        const double* blk = tv + static_cast<size_t>(b) * block;
        for (int i = 0; i < block; ++i) s += blk[i] * blk[i];
        s = std::sqrt(s);
        if (s < 1e-12) {
            std::fprintf(stderr,
                         "warning: relative_l2_loss: zero-norm target in block %d, flooring\n", b);
            s = 1e-12;
        }
        inv_norm(b, 0) = 1.0 / s;
    }
    return tape.sum_all(tape.mul(err_norm, tape.leaf(inv_norm)));
}

namespace {

struct Batch {
    std::vector<std::vector<double>> u0;
    std::vector<LambdaVector> lambda;
    Mat truth; // (n*v) x t
};

Batch gather_batch(const SplitData& s, const std::vector<int>& order, size_t lo, size_t hi) {
    Batch b;
    const int v = s.truth.front().rows(), t = s.truth.front().cols();
    b.truth = Mat(static_cast<int>(hi - lo) * v, t);
    for (size_t k = lo; k < hi; ++k) {
        const size_t idx = static_cast<size_t>(order[k]);
        b.u0.push_back(s.u0[idx]);
        b.lambda.push_back(s.lambda[idx]);
        const Mat& tr = s.truth[idx];
        for (int i = 0; i < v; ++i)
            for (int j = 0; j < t; ++j) b.truth(static_cast<int>(k - lo) * v + i, j) = tr(i, j);
    }
    return b;
}

double split_loss(const TauBnoModel& model, const SplitData& s, int batch_size) {
    const int n = static_cast<int>(s.ids.size());
    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    double total = 0.0;
    for (size_t lo = 0; lo < static_cast<size_t>(n); lo += static_cast<size_t>(batch_size)) {
        const size_t hi = std::min(static_cast<size_t>(n), lo + static_cast<size_t>(batch_size));
        const Batch b = gather_batch(s, order, lo, hi);
        Tape tape;
        const std::vector<Tensor> bound = model.bind(tape);
        Tensor pred = model.forward(tape, bound, b.u0, b.lambda);
        Tensor loss = relative_l2_loss(tape, pred, tape.leaf(b.truth), static_cast<int>(hi - lo));
        total += tape.val(loss)[0];
    }
    return total / n;
}

void check_split(const SplitData& s, const TauBnoConfig& cfg, const char* which) {
    if (s.ids.empty())
        throw ValidationError(std::string("train: empty ") + which + " split");
    if (s.truth.front().rows() != cfg.v || s.truth.front().cols() != cfg.t_out)
        throw ValidationError(std::string("train: ") + which + " trajectories are " +
                              std::to_string(s.truth.front().rows()) + "x" +
                              std::to_string(s.truth.front().cols()) + ", model expects " +
                              std::to_string(cfg.v) + "x" + std::to_string(cfg.t_out));
}

} // namespace

TrainResult train_model(TauBnoModel& model, const SplitData& train, const SplitData& val,
                        const TrainConfig& tcfg) {
    if (tcfg.epochs < 1 || tcfg.batch_size < 1)
        throw ValidationError("train: epochs and batch size must be positive");
    check_split(train, model.config(), "train");
    check_split(val, model.config(), "validation");

    model.set_lambda_stats(train.lambda);
    AdamW opt(0.9, 0.999, 1e-8, tcfg.weight_decay);
    std::mt19937_64 rng(tcfg.seed);
    const int n = static_cast<int>(train.ids.size());
    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;

    std::ofstream log;
    if (!tcfg.log_path.empty()) {
        log.open(tcfg.log_path, std::ios::trunc);
        if (!log) throw IoError("train: cannot write log " + tcfg.log_path);
        log << "epoch,lr,train_loss,val_loss,wall_seconds\n";
    }

    TrainResult res;
    res.best_val = std::numeric_limits<double>::infinity();
    std::vector<Mat> best_values;
    const auto t0 = std::chrono::steady_clock::now();

    for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
        const double lr = cosine_lr(epoch, tcfg.lr0, tcfg.lr_min, tcfg.epochs);
        for (int i = n - 1; i > 0; --i) {
            const int j = static_cast<int>(u01(rng()) * (i + 1));
            std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(std::min(j, i))]);
        }

        double epoch_loss = 0.0;
        int batch_index = 0;
        for (size_t lo = 0; lo < static_cast<size_t>(n);
             lo += static_cast<size_t>(tcfg.batch_size), ++batch_index) {
            const size_t hi =
                std::min(static_cast<size_t>(n), lo + static_cast<size_t>(tcfg.batch_size));
            const Batch b = gather_batch(train, order, lo, hi);
            Tape tape;
            const std::vector<Tensor> bound = model.bind(tape);
            Tensor pred = model.forward(tape, bound, b.u0, b.lambda);
            Tensor loss =
                relative_l2_loss(tape, pred, tape.leaf(b.truth), static_cast<int>(hi - lo));
            const double lv = tape.val(loss)[0];
            if (!std::isfinite(lv))
                throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                                   ", batch " + std::to_string(batch_index));
            epoch_loss += lv;
            tape.backward(loss);
            model.harvest_grads(tape, bound);
            opt.step(model.params(), lr);
        }

        const double train_mean = epoch_loss / n;
        const double val_mean = split_loss(model, val, tcfg.batch_size);
        if (!std::isfinite(val_mean))
            throw NumericError("train: non-finite validation loss at epoch " +
                               std::to_string(epoch));
        res.train_loss.push_back(train_mean);
        res.val_loss.push_back(val_mean);

        if (val_mean < res.best_val) {
            res.best_val = val_mean;
            res.best_epoch = epoch;
            best_values.clear();
            for (int i = 0; i < model.params().size(); ++i)
                best_values.push_back(model.params()[i].value);
        }

        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (log) {
            char wbuf[32];
            std::snprintf(wbuf, sizeof wbuf, "%.3f", wall);
            log << epoch << ',' << format_double(lr) << ',' << format_double(train_mean) << ','
                << format_double(val_mean) << ',' << wbuf << '\n';
            log.flush();
        }
        if (tcfg.verbose && (epoch % 10 == 0 || epoch + 1 == tcfg.epochs))
            std::fprintf(stderr, "epoch %4d  lr %.3e  train %.5f  val %.5f  %.1fs\n", epoch, lr,
                         train_mean, val_mean, wall);
    }

    // Leave the model at its best-validation state; that is what gets saved.
    if (!best_values.empty())
        for (int i = 0; i < model.params().size(); ++i)
            model.params()[i].value = best_values[static_cast<size_t>(i)];
    if (!tcfg.ckpt_dir.empty()) model.save(tcfg.ckpt_dir);
    return res;
}

} // namespace taubno
