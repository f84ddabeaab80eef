#include "profusion/config.hpp"
#include "profusion/errors.hpp"

#include <algorithm>
#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

namespace profusion {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

// strip an inline comment: '#' or ';' preceded by whitespace
std::string strip_comment(const std::string& line) {
    for (size_t i = 0; i < line.size(); ++i) {
        if ((line[i] == '#' || line[i] == ';') &&
            (i == 0 || line[i - 1] == ' ' || line[i - 1] == '\t'))
            return line.substr(0, i);
    }
    return line;
}

[[noreturn]] void fail_at(const std::string& origin, int line, const std::string& msg) {
    std::ostringstream os;
    os << origin << ":" << line << ": " << msg;
    throw ConfigError(os.str());
}

} // namespace

bool IniFile::has(const std::string& section, const std::string& key) const {
    auto s = sections.find(section);
    return s != sections.end() && s->second.count(key) > 0;
}

const std::string& IniFile::get(const std::string& section, const std::string& key) const {
    auto s = sections.find(section);
    if (s == sections.end() || !s->second.count(key))
        throw ConfigError("missing config key " + section + "." + key);
    return s->second.at(key);
}

IniFile parse_ini(std::istream& in, const std::string& origin) {
    IniFile ini;
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string body = trim(strip_comment(line));
        if (body.empty()) continue;
        if (body.front() == '[') {
            if (body.back() != ']')
                fail_at(origin, lineno, "unterminated section header");
            section = trim(body.substr(1, body.size() - 2));
            if (section.empty()) fail_at(origin, lineno, "empty section name");
            ini.sections[section]; // a section may be present but empty
            continue;
        }
        size_t eq = body.find('=');
        if (eq == std::string::npos)
            fail_at(origin, lineno, "expected key = value");
        if (section.empty())
            fail_at(origin, lineno, "key outside any [section]");
        std::string key = trim(body.substr(0, eq));
        std::string value = trim(body.substr(eq + 1));
        if (key.empty()) fail_at(origin, lineno, "empty key");
        auto& sec = ini.sections[section];
        if (sec.count(key))
            fail_at(origin, lineno, "duplicate key " + section + "." + key);
        sec[key] = value;
    }
    return ini;
}

IniFile parse_ini_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    return parse_ini(in, path);
}

ExperimentKind experiment_kind_from_name(const std::string& name) {
    if (name == "dim_sweep") return ExperimentKind::DimSweep;
    if (name == "generative_grid") return ExperimentKind::GenerativeGrid;
    if (name == "robustness") return ExperimentKind::Robustness;
    if (name == "probe") return ExperimentKind::Probe;
    if (name == "ablation_context_dim") return ExperimentKind::AblationContextDim;
    if (name == "ablation_iterative") return ExperimentKind::AblationIterative;
    if (name == "expressiveness") return ExperimentKind::Expressiveness;
    if (name == "timing") return ExperimentKind::Timing;
    throw ConfigError("unknown experiment kind '" + name + "'");
}

std::string experiment_kind_name(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::DimSweep: return "dim_sweep";
        case ExperimentKind::GenerativeGrid: return "generative_grid";
        case ExperimentKind::Robustness: return "robustness";
        case ExperimentKind::Probe: return "probe";
        case ExperimentKind::AblationContextDim: return "ablation_context_dim";
        case ExperimentKind::AblationIterative: return "ablation_iterative";
        case ExperimentKind::Expressiveness: return "expressiveness";
        case ExperimentKind::Timing: return "timing";
    }
    throw ContractError("unreachable experiment kind");
}

namespace {

// Tracks which keys were read so anything left over can be reported as a
// typo instead of being ignored.
struct Reader {
    const IniFile& ini;
    std::map<std::string, std::set<std::string>> consumed;

    bool has(const std::string& sec, const std::string& key) {
        return ini.has(sec, key);
    }
    std::string raw(const std::string& sec, const std::string& key) {
        consumed[sec].insert(key);
        return ini.get(sec, key);
    }

    std::string str(const std::string& sec, const std::string& key,
                    const std::string& dflt) {
        return has(sec, key) ? raw(sec, key) : dflt;
    }

    double num(const std::string& sec, const std::string& key, double dflt) {
        if (!has(sec, key)) return dflt;
        std::string v = raw(sec, key);
        errno = 0;
        char* end = nullptr;
        double out = std::strtod(v.c_str(), &end);
        if (errno != 0 || end == v.c_str() || *end != '\0')
            throw ConfigError("bad number for " + sec + "." + key + ": '" + v + "'");
        return out;
    }

    long long integer(const std::string& sec, const std::string& key, long long dflt) {
        if (!has(sec, key)) return dflt;
        std::string v = raw(sec, key);
        errno = 0;
        char* end = nullptr;
        long long out = std::strtoll(v.c_str(), &end, 10);
        if (errno != 0 || end == v.c_str() || *end != '\0')
            throw ConfigError("bad integer for " + sec + "." + key + ": '" + v + "'");
        return out;
    }

    std::uint64_t u64(const std::string& sec, const std::string& key,
                      std::uint64_t dflt) {
        if (!has(sec, key)) return dflt;
        std::string v = raw(sec, key);
        errno = 0;
        char* end = nullptr;
        unsigned long long out = std::strtoull(v.c_str(), &end, 10);
        if (errno != 0 || end == v.c_str() || *end != '\0' || v.front() == '-')
            throw ConfigError("bad seed for " + sec + "." + key + ": '" + v + "'");
        return out;
    }

    std::vector<std::string> list(const std::string& sec, const std::string& key) {
        std::string v = raw(sec, key);
        std::vector<std::string> out;
        std::stringstream ss(v);
        std::string item;
        while (std::getline(ss, item, ',')) {
            item = trim(item);
            if (item.empty())
                throw ConfigError("empty item in list " + sec + "." + key);
            out.push_back(item);
        }
        if (out.empty()) throw ConfigError("empty list for " + sec + "." + key);
        return out;
    }

    // every present key must have been consumed, every section recognized
    void finish(const std::set<std::string>& allowed_sections) {
        for (const auto& [sec, keys] : ini.sections) {
            if (!allowed_sections.count(sec))
                throw ConfigError("section [" + sec + "] is not used by this experiment");
            for (const auto& [key, _] : keys)
                if (!consumed[sec].count(key))
                    throw ConfigError("unknown key " + sec + "." + key);
        }
    }
};

int checked_int(long long v, const std::string& what, long long lo, long long hi) {
    if (v < lo || v > hi)
        throw ConfigError(what + " out of range [" + std::to_string(lo) + ", " +
                          std::to_string(hi) + "]: " + std::to_string(v));
    return static_cast<int>(v);
}

std::vector<int> int_grid(Reader& r, const std::string& sec, const std::string& key,
                          std::vector<int> dflt) {
    if (!r.has(sec, key)) return dflt;
    std::vector<int> out;
    for (const auto& item : r.list(sec, key)) {
        errno = 0;
        char* end = nullptr;
        long long v = std::strtoll(item.c_str(), &end, 10);
        if (errno != 0 || end == item.c_str() || *end != '\0')
            throw ConfigError("bad integer '" + item + "' in " + sec + "." + key);
        out.push_back(checked_int(v, sec + "." + key + " entry", 1, 1 << 20));
    }
    std::sort(out.begin(), out.end());
    if (std::adjacent_find(out.begin(), out.end()) != out.end())
        throw ConfigError("duplicate entry in " + sec + "." + key);
    return out;
}

std::vector<double> double_grid(Reader& r, const std::string& sec,
                                const std::string& key, std::vector<double> dflt) {
    if (!r.has(sec, key)) return dflt;
    std::vector<double> out;
    for (const auto& item : r.list(sec, key)) {
        errno = 0;
        char* end = nullptr;
        double v = std::strtod(item.c_str(), &end);
        if (errno != 0 || end == item.c_str() || *end != '\0')
            throw ConfigError("bad number '" + item + "' in " + sec + "." + key);
        out.push_back(v);
    }
    std::sort(out.begin(), out.end());
    if (std::adjacent_find(out.begin(), out.end()) != out.end())
        throw ConfigError("duplicate entry in " + sec + "." + key);
    return out;
}

const std::set<std::string> kVariantNames{"early", "late", "pro", "iterative"};

} // namespace

ExperimentConfig parse_experiment_config(const IniFile& ini) {
    Reader r{ini, {}};
    ExperimentConfig cfg;

    if (!r.has("experiment", "kind"))
        throw ConfigError("missing required key experiment.kind");
    cfg.kind = experiment_kind_from_name(r.raw("experiment", "kind"));
    cfg.trials = checked_int(r.integer("experiment", "trials", cfg.trials),
                             "experiment.trials", 1, 1000000);
    cfg.seed = r.u64("experiment", "seed", cfg.seed);
    cfg.out_dir = r.str("experiment", "out", cfg.out_dir);
    if (r.has("experiment", "variants")) {
        cfg.variants.clear();
        for (const auto& v : r.list("experiment", "variants")) {
            if (!kVariantNames.count(v))
                throw ConfigError("unknown variant '" + v + "'");
            if (std::count(cfg.variants.begin(), cfg.variants.end(), v))
                throw ConfigError("duplicate variant '" + v + "'");
            cfg.variants.push_back(v);
        }
    }

    const bool needs_task = cfg.kind != ExperimentKind::Expressiveness;
    if (needs_task) {
        if (!r.has("task", "type"))
            throw ConfigError("missing required key task.type");
        std::string type = r.raw("task", "type");
        if (type == "lattice") {
            cfg.task = TaskKind::Classification;
            auto& t = cfg.lattice;
            t.D = checked_int(r.integer("task", "d", t.D), "task.d", 2, 4096);
            t.M = checked_int(r.integer("task", "m", t.M), "task.m", 1, 4096);
            t.f_max = r.num("task", "f_max", t.f_max);
            t.p = checked_int(r.integer("task", "p", t.p), "task.p", 2, 4096);
            t.n_train = checked_int(r.integer("task", "n_train", t.n_train),
                                    "task.n_train", 1, 100000000);
            t.n_val = checked_int(r.integer("task", "n_val", t.n_val), "task.n_val", 1,
                                  100000000);
            t.n_test = checked_int(r.integer("task", "n_test", t.n_test), "task.n_test",
                                   1, 100000000);
            if (t.f_max <= 0) throw ConfigError("task.f_max must be positive");
            if (t.p % 2 != 0) throw ConfigError("task.p must be even");
        } else if (type == "generative") {
            cfg.task = TaskKind::Regression;
            auto& t = cfg.generative;
            t.d_z = checked_int(r.integer("task", "d_z", t.d_z), "task.d_z", 1, 4096);
            t.D1 = checked_int(r.integer("task", "d1", t.D1), "task.d1", 1, 4096);
            t.D2 = checked_int(r.integer("task", "d2", t.D2), "task.d2", 1, 4096);
            t.K_y = checked_int(r.integer("task", "k_y", t.K_y), "task.k_y", 1, 4096);
            t.eta = r.num("task", "eta", t.eta);
            t.sigma2 = r.num("task", "sigma2", t.sigma2);
            t.n_train = checked_int(r.integer("task", "n_train", t.n_train),
                                    "task.n_train", 1, 100000000);
            t.n_val = checked_int(r.integer("task", "n_val", t.n_val), "task.n_val", 1,
                                  100000000);
            t.n_test = checked_int(r.integer("task", "n_test", t.n_test), "task.n_test",
                                   1, 100000000);
            if (t.sigma2 < 0) throw ConfigError("task.sigma2 must be >= 0");
        } else {
            throw ConfigError("task.type must be 'lattice' or 'generative', got '" +
                              type + "'");
        }
    }

    cfg.hidden = checked_int(r.integer("model", "hidden", cfg.hidden), "model.hidden",
                             1, 65536);
    cfg.activation = r.str("model", "activation", cfg.activation);
    try {
        act_from_name(cfg.activation);
    } catch (const Error& e) {
        throw ConfigError(std::string("model.activation: ") + e.what());
    }
    std::string fus = r.str("model", "fusion", "concat");
    if (fus == "concat")
        cfg.fusion = FusionKind::Concat;
    else if (fus == "sum")
        cfg.fusion = FusionKind::Sum;
    else
        throw ConfigError("model.fusion must be 'concat' or 'sum', got '" + fus + "'");
    cfg.R = checked_int(r.integer("model", "r", cfg.R), "model.r", 1, 64);
    std::string inj = r.str("model", "injection", "additive");
    if (inj == "additive")
        cfg.injection = Injection::Additive;
    else if (inj == "concat")
        cfg.injection = Injection::ConcatInput;
    else
        throw ConfigError("model.injection must be 'additive' or 'concat', got '" + inj +
                          "'");
    cfg.context_dim = checked_int(r.integer("model", "context_dim", cfg.context_dim),
                                  "model.context_dim", 0, 65536);
    cfg.w_init_scale = r.num("model", "w_init_scale", cfg.w_init_scale);
    if (cfg.w_init_scale < 0) throw ConfigError("model.w_init_scale must be >= 0");
    cfg.concat_width = checked_int(r.integer("model", "concat_width", cfg.concat_width),
                                   "model.concat_width", 0, 65536);

    std::string opt = r.str("train", "optimizer", "adam");
    if (opt == "adam")
        cfg.train.opt = OptKind::Adam;
    else if (opt == "sgd_momentum")
        cfg.train.opt = OptKind::SgdMomentum;
    else
        throw ConfigError("train.optimizer must be 'adam' or 'sgd_momentum', got '" +
                          opt + "'");
    cfg.train.lr = r.num("train", "lr", cfg.train.lr);
    if (cfg.train.lr <= 0) throw ConfigError("train.lr must be positive");
    cfg.train.epochs = checked_int(r.integer("train", "epochs", cfg.train.epochs),
                                   "train.epochs", 0, 1000000);
    cfg.train.batch_size = checked_int(
        r.integer("train", "batch_size", cfg.train.batch_size), "train.batch_size", 1,
        100000000);
    cfg.train.patience = checked_int(r.integer("train", "patience", cfg.train.patience),
                                     "train.patience", 0, 1000000);

    cfg.sigma_max = r.num("noise", "sigma_max", cfg.sigma_max);
    if (cfg.sigma_max <= 0) throw ConfigError("noise.sigma_max must be positive");
    cfg.noise_points =
        checked_int(r.integer("noise", "points", cfg.noise_points), "noise.points", 2,
                    100000);
    if (r.has("noise", "modalities")) {
        cfg.noise_modalities.clear();
        for (const auto& item : r.list("noise", "modalities")) {
            if (item != "1" && item != "2")
                throw ConfigError("noise.modalities entries must be 1 or 2");
            int m = item == "1" ? 1 : 2;
            if (std::count(cfg.noise_modalities.begin(), cfg.noise_modalities.end(), m))
                throw ConfigError("duplicate entry in noise.modalities");
            cfg.noise_modalities.push_back(m);
        }
        std::sort(cfg.noise_modalities.begin(), cfg.noise_modalities.end());
    }

    std::set<std::string> allowed{"experiment", "task", "model", "train", "noise"};
    switch (cfg.kind) {
        case ExperimentKind::DimSweep:
            allowed.insert("dim_sweep");
            cfg.dim_grid = int_grid(r, "dim_sweep", "grid", cfg.dim_grid);
            break;
        case ExperimentKind::GenerativeGrid:
            allowed.insert("generative_grid");
            cfg.eta_values =
                double_grid(r, "generative_grid", "eta_values", cfg.eta_values);
            cfg.sigma2_values =
                double_grid(r, "generative_grid", "sigma2_values", cfg.sigma2_values);
            for (double v : cfg.eta_values)
                if (v < 0) throw ConfigError("generative_grid.eta_values must be >= 0");
            for (double v : cfg.sigma2_values)
                if (v < 0)
                    throw ConfigError("generative_grid.sigma2_values must be >= 0");
            break;
        case ExperimentKind::Robustness:
            allowed.insert("robustness");
            cfg.baseline = r.str("robustness", "baseline", cfg.baseline);
            if (std::find(cfg.variants.begin(), cfg.variants.end(), cfg.baseline) ==
                cfg.variants.end())
                throw ConfigError("robustness.baseline '" + cfg.baseline +
                                  "' is not among the variants");
            if (cfg.variants.size() < 2)
                throw ConfigError("robustness needs at least 2 variants");
            break;
        case ExperimentKind::AblationContextDim:
            allowed.insert("ablation_context_dim");
            cfg.context_grid =
                int_grid(r, "ablation_context_dim", "grid", cfg.context_grid);
            break;
        case ExperimentKind::Expressiveness:
            allowed.insert("expressiveness");
            cfg.max_degree =
                checked_int(r.integer("expressiveness", "max_degree", cfg.max_degree),
                            "expressiveness.max_degree", 1, 8);
            break;
        case ExperimentKind::Probe:
        case ExperimentKind::AblationIterative:
        case ExperimentKind::Timing:
            break;
    }

    if (cfg.kind == ExperimentKind::DimSweep || cfg.kind == ExperimentKind::Probe ||
        cfg.kind == ExperimentKind::AblationContextDim ||
        cfg.kind == ExperimentKind::AblationIterative) {
        if (cfg.task != TaskKind::Classification)
            throw ConfigError(experiment_kind_name(cfg.kind) +
                              " requires task.type = lattice");
    }
    if (cfg.kind == ExperimentKind::GenerativeGrid && cfg.task != TaskKind::Regression)
        throw ConfigError("generative_grid requires task.type = generative");
    if (cfg.kind == ExperimentKind::Probe && cfg.R < 2)
        throw ConfigError("probe requires model.r >= 2");

    r.finish(allowed);
    return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    return parse_experiment_config(parse_ini_file(path));
}

NoiseSpec noise_spec(const ExperimentConfig& cfg) {
    return make_noise_grid(cfg.sigma_max, cfg.noise_points, cfg.noise_modalities);
}

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

template <typename T>
std::string join(const std::vector<T>& xs) {
    std::ostringstream os;
    for (size_t i = 0; i < xs.size(); ++i) {
        if (i) os << ",";
        if constexpr (std::is_same_v<T, double>)
            os << fmt(xs[i]);
        else
            os << xs[i];
    }
    return os.str();
}

} // namespace

std::string canonical_config_text(const ExperimentConfig& cfg) {
    std::ostringstream os;
    os << "kind=" << experiment_kind_name(cfg.kind) << "\n";
    os << "seed=" << cfg.seed << "\n";
    if (cfg.kind == ExperimentKind::Expressiveness) {
        os << "expressiveness.max_degree=" << cfg.max_degree << "\n";
        return os.str();
    }
    os << "trials=" << cfg.trials << "\n";
    if (cfg.task == TaskKind::Classification) {
        const auto& t = cfg.lattice;
        os << "task.type=lattice\n";
        os << "task.d=" << t.D << "\ntask.m=" << t.M << "\ntask.f_max=" << fmt(t.f_max)
           << "\ntask.p=" << t.p << "\n";
        os << "task.n_train=" << t.n_train << "\ntask.n_val=" << t.n_val
           << "\ntask.n_test=" << t.n_test << "\n";
    } else {
        const auto& t = cfg.generative;
        os << "task.type=generative\n";
        os << "task.d_z=" << t.d_z << "\ntask.d1=" << t.D1 << "\ntask.d2=" << t.D2
           << "\ntask.k_y=" << t.K_y << "\n";
        os << "task.eta=" << fmt(t.eta) << "\ntask.sigma2=" << fmt(t.sigma2) << "\n";
        os << "task.n_train=" << t.n_train << "\ntask.n_val=" << t.n_val
           << "\ntask.n_test=" << t.n_test << "\n";
    }
    os << "model.hidden=" << cfg.hidden << "\n";
    os << "model.activation=" << cfg.activation << "\n";
    os << "model.fusion=" << (cfg.fusion == FusionKind::Concat ? "concat" : "sum")
       << "\n";
    os << "model.r=" << cfg.R << "\n";
    os << "model.injection="
       << (cfg.injection == Injection::Additive ? "additive" : "concat") << "\n";
    if (cfg.kind != ExperimentKind::AblationContextDim)
        os << "model.context_dim=" << cfg.context_dim << "\n";
    os << "model.w_init_scale=" << fmt(cfg.w_init_scale) << "\n";
    os << "model.concat_width=" << cfg.concat_width << "\n";
    os << "train.optimizer=" << (cfg.train.opt == OptKind::Adam ? "adam" : "sgd_momentum")
       << "\n";
    os << "train.lr=" << fmt(cfg.train.lr) << "\n";
    os << "train.epochs=" << cfg.train.epochs << "\n";
    os << "train.batch_size=" << cfg.train.batch_size << "\n";
    os << "train.patience=" << cfg.train.patience << "\n";

    const bool uses_noise = cfg.kind == ExperimentKind::Robustness ||
                            cfg.kind == ExperimentKind::GenerativeGrid;
    if (uses_noise) {
        os << "noise.sigma_max=" << fmt(cfg.sigma_max) << "\n";
        os << "noise.points=" << cfg.noise_points << "\n";
        os << "noise.modalities=" << join(cfg.noise_modalities) << "\n";
    }
    switch (cfg.kind) {
        case ExperimentKind::DimSweep:
            os << "dim_sweep.grid=" << join(cfg.dim_grid) << "\n";
            break;
        case ExperimentKind::GenerativeGrid:
            os << "generative_grid.eta_values=" << join(cfg.eta_values) << "\n";
            os << "generative_grid.sigma2_values=" << join(cfg.sigma2_values) << "\n";
            break;
        case ExperimentKind::Robustness:
            os << "variants=" << join(cfg.variants) << "\n";
            os << "robustness.baseline=" << cfg.baseline << "\n";
            break;
        case ExperimentKind::AblationContextDim:
            os << "ablation_context_dim.grid=" << join(cfg.context_grid) << "\n";
            break;
        default:
            break;
    }
    return os.str();
}

std::uint64_t fnv1a64(const std::string& data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
    return fnv1a64(canonical_config_text(cfg));
}

std::string config_hash_hex(const ExperimentConfig& cfg) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(config_hash(cfg)));
    return buf;
}

std::vector<std::uint64_t> derive_trial_seeds(std::uint64_t root, int n) {
    if (n < 0) throw InputError("derive_trial_seeds: n must be >= 0");
    std::vector<std::uint64_t> seeds(static_cast<size_t>(n));
    std::uint64_t state = root;
    for (auto& s : seeds) s = Rng::splitmix64(state);
    return seeds;
}

std::string timestamp_utc_now() {
    std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_manifest(std::ostream& out, const RunManifest& m) {
    out << "config_hash = " << m.config_hash << "\n";
    out << "tool_version = " << m.tool_version << "\n";
    out << "started = " << m.started << "\n";
    out << "finished = " << m.finished << "\n";
    out << "trial_seeds = " << join(m.trial_seeds) << "\n";
    out << "files = " << join(m.files) << "\n";
}

void write_manifest_file(const std::string& path, const RunManifest& m) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write manifest to " + path);
    write_manifest(out, m);
}

} // namespace profusion
