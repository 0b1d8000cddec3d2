#pragma once

#include <string>
#include <tuple>
#include <vector>

#include "taubno/connectome.hpp"
#include "taubno/model.hpp"

namespace taubno {

// Test-split evaluation artifacts. Aggregate metrics pool every (sample,
// region, time) element of the split by concatenation before reduction;
// the per-time and per-region curves are mean absolute errors along the
// complementary axes, and per_time_r2 is the coefficient of determination
// across regional values at a fixed time index (NaN where the truth has
// zero variance at that time).
struct EvalReport {
    double rmse = 0.0;
    double mae = 0.0;
    double rel_l2 = 0.0;
    double r2_pooled = 0.0;
    std::vector<double> per_time_abs_err;
    std::vector<double> per_time_r2;
    std::vector<double> per_region_err;
    std::string config_hash;
    std::string ckpt_hash;
};

// Pooled (RMSE, MAE, relative L2) over concatenated prediction/truth pairs.
// A zero-norm truth trips the 1e-12 floor for the relative error and warns
// on stderr rather than dividing by zero.
std::tuple<double, double, double> compute_metrics(const std::vector<Mat>& pred,
                                                   const std::vector<Mat>& truth);
std::tuple<double, double, double> compute_metrics(const Mat& pred, const Mat& truth);

// Coefficient of determination across regions at each fixed time index,
// pooling samples by concatenation. Zero truth variance at a time yields a
// NaN sentinel for that entry.
std::vector<double> r2_per_time(const std::vector<Mat>& pred, const std::vector<Mat>& truth);

// Single pooled R^2 over every element of the split.
double r2_pooled(const std::vector<Mat>& pred, const std::vector<Mat>& truth);

// Full split evaluation: predicts every sample and assembles the report
// (hashes are filled in by the caller, which knows the artifact paths).
EvalReport evaluate_split(const TauBnoModel& model, const SplitData& split);

// Maps an ablation variant name ("no_fo", "no_qo", "no_dgo", "no_fourier",
// "no_diff") onto a fresh config derived from `base`. Unknown names and
// combinations that disable all three module families are rejected.
TauBnoConfig apply_ablation(const TauBnoConfig& base, const std::vector<std::string>& variants);

// FNV-1a hash of a file's bytes, hex-encoded; used to fingerprint
// checkpoints in reports.
std::string file_fnv(const std::string& path);

// Writes report.json plus plot-ready per_time.csv ("time_index,abs_err,r2")
// and per_region.csv ("region_index,abs_err").
void emit_report(const EvalReport& report, const std::string& out_dir);

// Parses a report.json previously written by emit_report.
EvalReport read_report(const std::string& path);

// Writes a V x T trajectory aggregated onto the coarse atlas as CSV
// ("coarse_index,t1,...,tT"), one row per coarse region.
void write_coarse_trajectory(const std::string& path, const Mat& traj, const Connectome& c);

} // namespace taubno
