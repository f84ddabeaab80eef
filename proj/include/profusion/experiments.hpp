#pragma once

#include "profusion/config.hpp"
#include "profusion/metrics.hpp"
#include "profusion/train.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace profusion {

// RFC-4180 quoting: fields containing commas, quotes, or newlines are quoted
// and inner quotes doubled.
std::string csv_escape(const std::string& field);

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    void add(std::vector<std::string> row);
    std::string text() const; // header + rows, \n line endings
};

// What a command produced. Exit code 0 on success, 1 when a hard check
// failed (the summary names it); config problems throw ConfigError and the
// CLI maps them to exit code 2.
struct CommandResult {
    int exit_code = 0;
    CsvTable csv;
    std::string summary;
};

// Aggregates over one cell of an experiment (same model, same settings,
// trials differing only in seed).
struct CellStats {
    int n = 0;
    double mean = 0.0;
    double sd = 0.0; // sample sd, 0 for n < 2
};

CellStats cell_stats(const std::vector<double>& xs);

// mean-difference / pooled-sd ratio used by the dim-sweep convergence check
double pooled_sd(const CellStats& a, const CellStats& b);

// The model variants every experiment understands.
enum class Variant { Early, Late, Pro, Iterative };
Variant variant_from_name(const std::string& name);
std::string variant_name(Variant v);

// Train one variant on pre-generated splits and return its test metric.
// Deterministic given (cfg, variant, trial_seed, hidden/context overrides).
struct VariantOutcome {
    double test_metric = 0.0;
    double val_metric = 0.0;
    double wall_ms = 0.0;
    std::vector<double> per_sigma; // filled only when a noise grid is passed
};

struct VariantJob {
    Variant variant = Variant::Late;
    int hidden = 32;
    int R = 2;
    int context_dim = 0;
    std::uint64_t trial_seed = 0;
    const NoiseSpec* noise = nullptr; // optional per-sigma evaluation
};

VariantOutcome run_variant(const ExperimentConfig& cfg, const DatasetSplits& splits,
                           const VariantJob& job);

// Per-trial dataset generation; trial index selects the seed stream.
DatasetSplits trial_splits(const ExperimentConfig& cfg, std::uint64_t trial_seed);

// The eight subcommands. All are deterministic given config + seed at any
// jobs count: trial work is scheduled dynamically but keyed by trial index.
CommandResult cmd_dim_sweep(const ExperimentConfig& cfg, int jobs);
CommandResult cmd_generative_grid(const ExperimentConfig& cfg, int jobs);
CommandResult cmd_robustness(const ExperimentConfig& cfg, int jobs);
CommandResult cmd_probe(const ExperimentConfig& cfg, int jobs);
CommandResult cmd_ablation_context_dim(const ExperimentConfig& cfg, int jobs);
CommandResult cmd_ablation_iterative(const ExperimentConfig& cfg, int jobs);
CommandResult cmd_expressiveness(const ExperimentConfig& cfg);
CommandResult cmd_timing(const ExperimentConfig& cfg);

// Dispatch by cfg.kind.
CommandResult run_command(const ExperimentConfig& cfg, int jobs);

// --out flag beats the PROFUSE_OUT env var beats the config value.
std::string resolve_out_dir(const ExperimentConfig& cfg, const std::string& cli_out);

// Runs the command and writes results.csv, summary.txt, and manifest.txt
// under the resolved output directory. Returns the command's exit code.
int run_and_write(const ExperimentConfig& cfg, int jobs, const std::string& out_dir);

} // namespace profusion
