#pragma once

#include "profusion/model.hpp"
#include "profusion/synthetic.hpp"
#include "profusion/train.hpp"

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace profusion {

inline constexpr const char* kToolVersion = "0.1.0";
// Overrides the configured output directory when set; the --out flag wins
// over both.
inline constexpr const char* kOutDirEnv = "PROFUSE_OUT";

// ---------- raw key=value file ----------

// Sectioned key=value text. Full-line comments start with '#' or ';'; inline
// comments need whitespace before the marker. Keys are case-sensitive and a
// duplicate key within a section is an error.
struct IniFile {
    std::map<std::string, std::map<std::string, std::string>> sections;

    bool has(const std::string& section, const std::string& key) const;
    const std::string& get(const std::string& section, const std::string& key) const;
};

IniFile parse_ini(std::istream& in, const std::string& origin = "<stream>");
IniFile parse_ini_file(const std::string& path);

enum class ExperimentKind {
    DimSweep,
    GenerativeGrid,
    Robustness,
    Probe,
    AblationContextDim,
    AblationIterative,
    Expressiveness,
    Timing,
};

ExperimentKind experiment_kind_from_name(const std::string& name);
std::string experiment_kind_name(ExperimentKind k);

// ---------- parsed experiment description ----------

struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::DimSweep;
    int trials = 10;
    std::uint64_t seed = 0;
    std::string out_dir = "runs";
    std::vector<std::string> variants{"late", "pro"};

    TaskKind task = TaskKind::Classification;
    LatticeTaskConfig lattice;
    GenerativeTaskConfig generative;

    // model shape; layer depths are fixed per experiment, widths come from here
    int hidden = 32;
    std::string activation = "relu";
    FusionKind fusion = FusionKind::Concat;
    int R = 2;
    Injection injection = Injection::Additive;
    int context_dim = 0;
    double w_init_scale = 0.1;
    int concat_width = 0;

    TrainConfig train;

    double sigma_max = 2.0;
    int noise_points = 9;
    std::vector<int> noise_modalities{1, 2};

    // per-kind knobs
    std::vector<int> dim_grid{2, 4, 8, 16, 32, 64};
    std::vector<double> eta_values{0.0, 0.5, 1.0, 1.5, 2.0};
    std::vector<double> sigma2_values{0.0, 0.25, 0.5, 0.75, 1.0};
    std::vector<int> context_grid{2, 4, 8, 16, 32, 64};
    std::string baseline = "late";
    int max_degree = 4;
};

ExperimentConfig parse_experiment_config(const IniFile& ini);
ExperimentConfig load_experiment_config(const std::string& path);

NoiseSpec noise_spec(const ExperimentConfig& cfg);

// Fixed-order listing of every semantically meaningful field. Two files that
// parse to the same experiment produce identical text, so the hash ignores
// comments, key order, and number spelling. The output directory is a
// location, not a meaning, and is excluded.
std::string canonical_config_text(const ExperimentConfig& cfg);
std::uint64_t config_hash(const ExperimentConfig& cfg);
std::string config_hash_hex(const ExperimentConfig& cfg);

std::uint64_t fnv1a64(const std::string& data);

// splitmix64 chain from the root seed; trial i always gets the same stream
// seed no matter how trials are scheduled across workers.
std::vector<std::uint64_t> derive_trial_seeds(std::uint64_t root, int n);

// ---------- run bookkeeping ----------

struct RunManifest {
    std::string config_hash;
    std::string tool_version = kToolVersion;
    std::vector<std::uint64_t> trial_seeds;
    std::string started;
    std::string finished;
    std::vector<std::string> files;
};

std::string timestamp_utc_now();
void write_manifest(std::ostream& out, const RunManifest& m);
void write_manifest_file(const std::string& path, const RunManifest& m);

} // namespace profusion
