#include "taubno/eval.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"

namespace taubno {

namespace {

void check_pairs(const std::vector<Mat>& pred, const std::vector<Mat>& truth) {
    if (pred.size() != truth.size() || pred.empty())
        throw ValidationError("eval: prediction/truth sample counts differ or are empty");
    for (size_t s = 0; s < pred.size(); ++s) {
        if (pred[s].rows() != truth[s].rows() || pred[s].cols() != truth[s].cols())
            throw ValidationError("eval: prediction/truth shape mismatch at sample " +
                                  std::to_string(s));
        if (pred[s].rows() != pred[0].rows() || pred[s].cols() != pred[0].cols())
            throw ValidationError("eval: samples have inconsistent shapes");
    }
}

} // namespace

std::tuple<double, double, double> compute_metrics(const std::vector<Mat>& pred,
                                                   const std::vector<Mat>& truth) {
    check_pairs(pred, truth);
    double sq = 0.0, ab = 0.0, tru2 = 0.0, n = 0.0;
    for (size_t s = 0; s < pred.size(); ++s) {
        for (size_t k = 0; k < pred[s].size(); ++k) {
            const double e = pred[s].data()[k] - truth[s].data()[k];
            sq += e * e;
            ab += std::abs(e);
            tru2 += truth[s].data()[k] * truth[s].data()[k];
            n += 1.0;
        }
    }
    double denom = std::sqrt(tru2);
    if (denom < 1e-12) {
        std::fprintf(stderr, "eval: zero-norm truth; relative L2 uses 1e-12 floor\n");
        denom = 1e-12;
    }
    return {std::sqrt(sq / n), ab / n, std::sqrt(sq) / denom};
}

std::tuple<double, double, double> compute_metrics(const Mat& pred, const Mat& truth) {
    return compute_metrics(std::vector<Mat>{pred}, std::vector<Mat>{truth});
}

std::vector<double> r2_per_time(const std::vector<Mat>& pred, const std::vector<Mat>& truth) {
    check_pairs(pred, truth);
    const int t_len = truth[0].cols();
    std::vector<double> out(t_len);
    for (int j = 0; j < t_len; ++j) {
        double mean = 0.0, n = 0.0;
        for (size_t s = 0; s < truth.size(); ++s)
            for (int i = 0; i < truth[s].rows(); ++i) {
                mean += truth[s](i, j);
                n += 1.0;
            }
        mean /= n;
        double ss_res = 0.0, ss_tot = 0.0;
        for (size_t s = 0; s < truth.size(); ++s)
            for (int i = 0; i < truth[s].rows(); ++i) {
                const double t = truth[s](i, j);
                const double e = pred[s](i, j) - t;
                ss_res += e * e;
                ss_tot += (t - mean) * (t - mean);
            }
        out[j] = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot
                              : std::numeric_limits<double>::quiet_NaN();
    }
    return out;
}

double r2_pooled(const std::vector<Mat>& pred, const std::vector<Mat>& truth) {
    check_pairs(pred, truth);
    double mean = 0.0, n = 0.0;
    for (const Mat& t : truth)
        for (size_t k = 0; k < t.size(); ++k) {
            mean += t.data()[k];
            n += 1.0;
        }
    mean /= n;
    double ss_res = 0.0, ss_tot = 0.0;
    for (size_t s = 0; s < truth.size(); ++s)
        for (size_t k = 0; k < truth[s].size(); ++k) {
            const double t = truth[s].data()[k];
            const double e = pred[s].data()[k] - t;
            ss_res += e * e;
            ss_tot += (t - mean) * (t - mean);
        }
    if (ss_tot <= 0.0) return std::numeric_limits<double>::quiet_NaN();
    return 1.0 - ss_res / ss_tot;
}

EvalReport evaluate_split(const TauBnoModel& model, const SplitData& split) {
    if (split.ids.empty()) throw ValidationError("evaluate_split: empty split");
    std::vector<Mat> preds;
    preds.reserve(split.ids.size());
    for (size_t s = 0; s < split.ids.size(); ++s)
        preds.push_back(model.predict(split.u0[s], split.lambda[s]));

    EvalReport r;
    std::tie(r.rmse, r.mae, r.rel_l2) = compute_metrics(preds, split.truth);
    r.r2_pooled = taubno::r2_pooled(preds, split.truth);
    r.per_time_r2 = r2_per_time(preds, split.truth);

    const int v = split.truth[0].rows();
    const int t_len = split.truth[0].cols();
    r.per_time_abs_err.assign(t_len, 0.0);
    r.per_region_err.assign(v, 0.0);
    for (size_t s = 0; s < preds.size(); ++s)
        for (int i = 0; i < v; ++i)
            for (int j = 0; j < t_len; ++j) {
                const double e = std::abs(preds[s](i, j) - split.truth[s](i, j));
                r.per_time_abs_err[j] += e;
                r.per_region_err[i] += e;
            }
    const double n_samples = static_cast<double>(preds.size());
    for (double& x : r.per_time_abs_err) x /= n_samples * v;
    for (double& x : r.per_region_err) x /= n_samples * t_len;
    return r;
}

TauBnoConfig apply_ablation(const TauBnoConfig& base, const std::vector<std::string>& variants) {
    if (variants.empty()) throw ValidationError("apply_ablation: no variant given");
    TauBnoConfig cfg = base;
    for (const std::string& name : variants) {
        if (name == "no_fo") cfg.no_fo = true;
        else if (name == "no_qo") cfg.no_qo = true;
        else if (name == "no_dgo") cfg.no_dgo = true;
        else if (name == "no_fourier") cfg.no_fourier = true;
        else if (name == "no_diff") cfg.no_diff = true;
        else throw ValidationError("apply_ablation: unknown variant '" + name + "'");
    }
    validate_model_config(cfg); // rejects disabling all three module families
    return cfg;
}

std::string file_fnv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("file_fnv: cannot open " + path);
    std::uint64_t h = 1469598103934665603ull;
    char buf[4096];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
        h = fnv1a64(buf, static_cast<size_t>(in.gcount()), h);
    return to_hex(h);
}

void emit_report(const EvalReport& report, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);

    nlohmann::json j;
    j["rmse"] = report.rmse;
    j["mae"] = report.mae;
    j["rel_l2"] = report.rel_l2;
    j["r2_pooled"] = report.r2_pooled;
    j["config_hash"] = report.config_hash;
    j["ckpt_hash"] = report.ckpt_hash;
    j["per_time_abs_err"] = report.per_time_abs_err;
    // JSON has no NaN literal; undefined R2 entries are serialized as null.
    nlohmann::json r2 = nlohmann::json::array();
    for (double x : report.per_time_r2) {
        if (std::isnan(x)) r2.push_back(nullptr);
        else r2.push_back(x);
    }
    j["per_time_r2"] = r2;
    j["per_region_err"] = report.per_region_err;
    write_text_file(out_dir + "/report.json", j.dump(2) + "\n");

    std::ostringstream pt;
    pt << "time_index,abs_err,r2\n";
    for (size_t t = 0; t < report.per_time_abs_err.size(); ++t) {
        pt << t << ',' << format_double(report.per_time_abs_err[t]) << ',';
        const double r2t = t < report.per_time_r2.size()
                               ? report.per_time_r2[t]
                               : std::numeric_limits<double>::quiet_NaN();
        if (std::isnan(r2t)) pt << "nan";
        else pt << format_double(r2t);
        pt << '\n';
    }
    write_text_file(out_dir + "/per_time.csv", pt.str());

    std::ostringstream pr;
    pr << "region_index,abs_err\n";
    for (size_t i = 0; i < report.per_region_err.size(); ++i)
        pr << i << ',' << format_double(report.per_region_err[i]) << '\n';
    write_text_file(out_dir + "/per_region.csv", pr.str());
}

EvalReport read_report(const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw IoError("read_report: " + path + ": " + e.what());
    }
    try {
        EvalReport r;
        r.rmse = j.at("rmse").get<double>();
        r.mae = j.at("mae").get<double>();
        r.rel_l2 = j.at("rel_l2").get<double>();
        r.r2_pooled = j.at("r2_pooled").get<double>();
        r.config_hash = j.at("config_hash").get<std::string>();
        r.ckpt_hash = j.at("ckpt_hash").get<std::string>();
        r.per_time_abs_err = j.at("per_time_abs_err").get<std::vector<double>>();
        for (const auto& x : j.at("per_time_r2"))
            r.per_time_r2.push_back(x.is_null() ? std::numeric_limits<double>::quiet_NaN()
                                                : x.get<double>());
        r.per_region_err = j.at("per_region_err").get<std::vector<double>>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("read_report: malformed report " + path + ": " + e.what());
    }
}

void write_coarse_trajectory(const std::string& path, const Mat& traj, const Connectome& c) {
    if (traj.rows() != c.n_regions)
        throw ValidationError("write_coarse_trajectory: trajectory rows != regions");
    std::ostringstream out;
    out << "coarse_index";
    for (int j = 0; j < traj.cols(); ++j) out << ",t" << (j + 1);
    out << '\n';
    std::vector<std::vector<double>> coarse_cols;
    for (int j = 0; j < traj.cols(); ++j) {
        std::vector<double> field(traj.rows());
        for (int i = 0; i < traj.rows(); ++i) field[i] = traj(i, j);
        coarse_cols.push_back(aggregate_to_coarse(c, field));
    }
    for (int k = 0; k < c.n_coarse; ++k) {
        out << k;
        for (int j = 0; j < traj.cols(); ++j) out << ',' << format_double(coarse_cols[j][k]);
        out << '\n';
    }
    write_text_file(path, out.str());
}

} // namespace taubno
