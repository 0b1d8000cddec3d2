#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "taubno/dataset.hpp"
#include "taubno/model.hpp"

namespace taubno {

extern const char* const kTaubnoVersion;

// Flat dotted-key configuration shared by every subcommand. All keys exist
// with defaults; a config file and then command-line overrides are merged on
// top (overrides win). Unknown keys are rejected so typos fail loudly.
class RunConfig {
public:
    RunConfig(); // fully defaulted

    // Merges a JSON object of {"dotted.key": value}. Later calls win.
    void merge_json(const nlohmann::json& obj, const std::string& origin);
    void merge_file(const std::string& path);
    // Merges a single override; the value is parsed as JSON when possible,
    // otherwise taken as a string.
    void merge_override(const std::string& key, const std::string& raw_value);

    bool has(const std::string& key) const;
    // True when the key was set by a config file or an override (not default).
    bool touched(const std::string& key) const;
    double num(const std::string& key) const;
    int integer(const std::string& key) const;
    bool flag(const std::string& key) const;
    std::string str(const std::string& key) const;

    // FNV-1a over the canonical (sorted-key) dump of all values.
    std::string config_hash() const;
    const nlohmann::json& values() const { return values_; }

    // Typed views over the relevant key groups.
    DatasetConfig dataset_config() const;
    TauBnoConfig model_config() const; // v / ordering_hash left for the caller
    TrainConfig train_config() const;
    KineticParams base_kinetics() const;
    LambdaRanges lambda_ranges() const;
    // Defaults for the solver.* keys are the library defaults (tight). The
    // dataset generator ships relaxed tolerances; dataset_config() keeps
    // those unless a solver.* key was explicitly set by file or flag.
    SolverOptions solver_options() const;

    // Worker count: run.jobs if positive, else TAUBNO_JOBS, else hardware
    // concurrency (at least 1).
    int jobs() const;

private:
    nlohmann::json values_;        // flat object
    std::vector<std::string> touched_; // keys set by file or override
};

// Writes provenance.json into out_dir: command line, version, UTC timestamp,
// config hash, the full flat config, and any extra fields (artifact hashes,
// seeds) supplied by the caller.
void write_provenance(const std::string& out_dir, const std::string& command,
                      const RunConfig& cfg,
                      const std::vector<std::pair<std::string, std::string>>& extras = {});

} // namespace taubno
