#include "profusion/experiments.hpp"
#include "profusion/errors.hpp"
#include "profusion/expressiveness.hpp"
#include "profusion/model.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <sstream>
#include <thread>

namespace profusion {

namespace {

std::string fmtg(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

// independent salted streams from one trial seed
std::uint64_t mix(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t state = seed ^ (salt * 0xD1B54A32D192ED03ULL);
    return Rng::splitmix64(state);
}

// Dynamic scheduling is fine for determinism because every task i writes
// only slot i and derives all randomness from its own seed.
void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
    if (jobs <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr err;
    std::mutex err_mu;
    auto worker = [&] {
        for (;;) {
            int i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lk(err_mu);
                if (!err) err = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    const int workers = std::min(jobs, n);
    pool.reserve(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
}

MetricKind metric_of(const ExperimentConfig& cfg) {
    return cfg.task == TaskKind::Classification ? MetricKind::Accuracy : MetricKind::Mse;
}

int output_dim_of(const ExperimentConfig& cfg) {
    return cfg.task == TaskKind::Classification ? 9 : cfg.generative.K_y;
}

std::pair<int, int> input_dims_of(const ExperimentConfig& cfg) {
    if (cfg.task == TaskKind::Classification) return {cfg.lattice.D, cfg.lattice.p};
    return {cfg.generative.D1, cfg.generative.D2};
}

} // namespace

std::string csv_escape(const std::string& field) {
    if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += "\"";
    return out;
}

void CsvTable::add(std::vector<std::string> row) {
    if (row.size() != header.size())
        throw ContractError("csv row width does not match header");
    rows.push_back(std::move(row));
}

std::string CsvTable::text() const {
    std::ostringstream os;
    for (size_t i = 0; i < header.size(); ++i)
        os << (i ? "," : "") << csv_escape(header[i]);
    os << "\n";
    for (const auto& row : rows) {
        for (size_t i = 0; i < row.size(); ++i)
            os << (i ? "," : "") << csv_escape(row[i]);
        os << "\n";
    }
    return os.str();
}

CellStats cell_stats(const std::vector<double>& xs) {
    CellStats s;
    s.n = static_cast<int>(xs.size());
    if (s.n == 0) return s;
    double sum = 0.0;
    for (double x : xs) sum += x;
    s.mean = sum / s.n;
    if (s.n >= 2) {
        double acc = 0.0;
        for (double x : xs) acc += (x - s.mean) * (x - s.mean);
        s.sd = std::sqrt(acc / (s.n - 1));
    }
    return s;
}

double pooled_sd(const CellStats& a, const CellStats& b) {
    return std::sqrt(0.5 * (a.sd * a.sd + b.sd * b.sd));
}

Variant variant_from_name(const std::string& name) {
    if (name == "early") return Variant::Early;
    if (name == "late") return Variant::Late;
    if (name == "pro") return Variant::Pro;
    if (name == "iterative") return Variant::Iterative;
    throw ConfigError("unknown variant '" + name + "'");
}

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::Early: return "early";
        case Variant::Late: return "late";
        case Variant::Pro: return "pro";
        case Variant::Iterative: return "iterative";
    }
    throw ContractError("unreachable variant");
}

DatasetSplits trial_splits(const ExperimentConfig& cfg, std::uint64_t trial_seed) {
    if (cfg.task == TaskKind::Classification) {
        LatticeTaskConfig t = cfg.lattice;
        t.seed = mix(trial_seed, 0);
        return gen_lattice_splits(t);
    }
    GenerativeTaskConfig t = cfg.generative;
    t.seed = mix(trial_seed, 0);
    return gen_generative_splits(t);
}

VariantOutcome run_variant(const ExperimentConfig& cfg, const DatasetSplits& splits,
                           const VariantJob& job) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto [in1, in2] = input_dims_of(cfg);
    const int h = job.hidden;
    std::vector<EncoderSpec> encs{{in1, {h, h}, cfg.activation},
                                  {in2, {h, h}, cfg.activation}};
    PredictorSpec ps;
    ps.hidden = {h};
    ps.output_dim = output_dim_of(cfg);

    // The same init stream for every variant keeps late-vs-pro comparisons
    // paired: pro starts from exactly the late model plus a fresh
    // backprojection.
    Rng base_rng(mix(job.trial_seed, 1));
    Rng aug_rng(mix(job.trial_seed, 2));
    TrainConfig tc = cfg.train;
    tc.seed = mix(job.trial_seed, 3);
    const MetricKind metric = metric_of(cfg);

    BaseModel base = job.variant == Variant::Early
                         ? build_early(in1 + in2, {h, h}, ps, base_rng)
                         : build_base(encs, FusionSpec{cfg.fusion}, ps, base_rng);

    VariantOutcome out;
    auto finish = [&](const ModelRef& ref) {
        out.val_metric = evaluate(ref, splits.val, metric);
        out.test_metric = evaluate(ref, splits.test, metric);
        if (job.noise) {
            validate_noise(*job.noise);
            for (size_t i = 0; i < job.noise->grid.size(); ++i) {
                Rng noise_rng(mix(job.trial_seed, 100 + i));
                SyntheticDataset noisy = corrupt(splits.test, job.noise->grid[i],
                                                 job.noise->modalities, noise_rng);
                out.per_sigma.push_back(evaluate(ref, noisy, metric));
            }
        }
        out.wall_ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - t0)
                          .count();
    };

    switch (job.variant) {
        case Variant::Early:
        case Variant::Late: {
            ModelRef ref = wrap(base);
            train(ref, splits.train, splits.val, tc);
            finish(ref);
            break;
        }
        case Variant::Pro: {
            ProFusionConfig pc;
            pc.R = job.R;
            pc.context_dim = job.context_dim;
            pc.injection = cfg.injection;
            pc.w_init_scale = cfg.w_init_scale;
            pc.concat_width = cfg.concat_width;
            ProFusionModel pro = augment(base, pc, aug_rng);
            ModelRef ref = wrap(pro);
            train(ref, splits.train, splits.val, tc);
            finish(ref);
            break;
        }
        case Variant::Iterative: {
            IterativeVariantConfig ic;
            ic.R = job.R;
            ic.w_init_scale = cfg.w_init_scale;
            IterativeModel iter = build_iterative_variant(base, ic, aug_rng);
            ModelRef ref = wrap(iter);
            train(ref, splits.train, splits.val, tc);
            finish(ref);
            break;
        }
    }
    return out;
}

// ---------- dim sweep ----------

CommandResult cmd_dim_sweep(const ExperimentConfig& cfg, int jobs) {
    const std::vector<Variant> variants{Variant::Early, Variant::Late, Variant::Pro};
    const auto seeds = derive_trial_seeds(cfg.seed, cfg.trials);
    const auto& dims = cfg.dim_grid;

    // acc[dim][variant][trial]
    std::vector<std::vector<std::vector<double>>> acc(
        dims.size(), std::vector<std::vector<double>>(variants.size(),
                                                      std::vector<double>(seeds.size())));
    const int tasks = static_cast<int>(dims.size() * seeds.size());
    parallel_for(tasks, jobs, [&](int idx) {
        const size_t di = static_cast<size_t>(idx) / seeds.size();
        const size_t ti = static_cast<size_t>(idx) % seeds.size();
        DatasetSplits splits = trial_splits(cfg, seeds[ti]);
        for (size_t vi = 0; vi < variants.size(); ++vi) {
            VariantJob job;
            job.variant = variants[vi];
            job.hidden = dims[di];
            job.R = cfg.R;
            job.context_dim = cfg.context_dim;
            job.trial_seed = seeds[ti];
            acc[di][vi][ti] = run_variant(cfg, splits, job).test_metric;
        }
    });

    CommandResult res;
    res.csv.header = {"model", "hidden", "trials", "mean_accuracy", "sd_accuracy"};
    std::ostringstream sum;
    sum << "dim sweep over {";
    for (size_t i = 0; i < dims.size(); ++i) sum << (i ? "," : "") << dims[i];
    sum << "}, " << cfg.trials << " trials per cell\n\n";

    std::vector<std::vector<CellStats>> stats(dims.size());
    for (size_t di = 0; di < dims.size(); ++di) {
        for (size_t vi = 0; vi < variants.size(); ++vi) {
            CellStats s = cell_stats(acc[di][vi]);
            stats[di].push_back(s);
            res.csv.add({variant_name(variants[vi]), std::to_string(dims[di]),
                         std::to_string(s.n), fmtg(s.mean), fmtg(s.sd)});
            sum << "hidden " << dims[di] << " " << variant_name(variants[vi]) << ": "
                << fmtg(s.mean) << " +- " << fmtg(s.sd) << "\n";
        }
    }

    // directional readouts; reported, not enforced
    const size_t last = dims.size() - 1;
    sum << "\n";
    for (size_t di = 0; di < dims.size(); ++di) {
        if (dims[di] > 8) continue;
        const bool ok = stats[di][2].mean > stats[di][1].mean;
        sum << "pro beats late at hidden " << dims[di] << ": " << (ok ? "yes" : "no")
            << " (pro " << fmtg(stats[di][2].mean) << " vs late "
            << fmtg(stats[di][1].mean) << ")\n";
    }
    const double gap_small = stats[0][2].mean - stats[0][1].mean;
    const double gap_large = stats[last][2].mean - stats[last][1].mean;
    sum << "pro-late gap: " << fmtg(gap_small) << " at hidden " << dims[0] << ", "
        << fmtg(gap_large) << " at hidden " << dims[last]
        << (gap_large < gap_small ? " (shrinks)" : " (does not shrink)") << "\n";
    const double le_gap = std::fabs(stats[last][1].mean - stats[last][0].mean);
    const double psd = pooled_sd(stats[last][1], stats[last][0]);
    sum << "late vs early at hidden " << dims[last] << ": |gap| = " << fmtg(le_gap)
        << ", pooled sd = " << fmtg(psd) << " -> "
        << (le_gap <= psd ? "within" : "outside") << " 1 pooled sd\n";
    res.summary = sum.str();
    return res;
}

// ---------- generative grid ----------

CommandResult cmd_generative_grid(const ExperimentConfig& cfg, int jobs) {
    const auto seeds = derive_trial_seeds(cfg.seed, cfg.trials);
    const NoiseSpec noise = noise_spec(cfg);
    struct Cell {
        double eta, sigma2;
        std::vector<double> mse_late, mse_pro, auc_delta;
    };
    std::vector<Cell> cells;
    for (double eta : cfg.eta_values)
        for (double s2 : cfg.sigma2_values) cells.push_back({eta, s2, {}, {}, {}});
    for (auto& c : cells) {
        c.mse_late.resize(seeds.size());
        c.mse_pro.resize(seeds.size());
        c.auc_delta.resize(seeds.size());
    }

    const int tasks = static_cast<int>(cells.size() * seeds.size());
    parallel_for(tasks, jobs, [&](int idx) {
        const size_t ci = static_cast<size_t>(idx) / seeds.size();
        const size_t ti = static_cast<size_t>(idx) % seeds.size();
        ExperimentConfig local = cfg;
        local.generative.eta = cells[ci].eta;
        local.generative.sigma2 = cells[ci].sigma2;
        DatasetSplits splits = trial_splits(local, mix(seeds[ti], 7 + ci));

        VariantJob job;
        job.hidden = cfg.hidden;
        job.R = cfg.R;
        job.context_dim = cfg.context_dim;
        job.trial_seed = mix(seeds[ti], 7 + ci);
        job.noise = &noise;

        job.variant = Variant::Late;
        VariantOutcome late = run_variant(local, splits, job);
        job.variant = Variant::Pro;
        VariantOutcome pro = run_variant(local, splits, job);

        cells[ci].mse_late[ti] = late.test_metric;
        cells[ci].mse_pro[ti] = pro.test_metric;
        RobustnessCurve cl{noise.grid, late.per_sigma, MetricKind::Mse};
        RobustnessCurve cp{noise.grid, pro.per_sigma, MetricKind::Mse};
        cells[ci].auc_delta[ti] = robust_auc(cp, cl);
    });

    CommandResult res;
    res.csv.header = {"record",          "eta",
                      "sigma2",          "trial",
                      "mse_late",        "mse_pro",
                      "improvement_pct", "fraction_improved",
                      "robust_auc_delta"};
    double pct_sum = 0.0;
    int wins = 0, total = 0;
    for (auto& c : cells) {
        std::vector<TrialResult> lt, pt;
        for (size_t ti = 0; ti < seeds.size(); ++ti) {
            TrialResult a, b;
            a.model_tag = "late";
            b.model_tag = "pro";
            a.seed = b.seed = seeds[ti];
            a.metric = b.metric = MetricKind::Mse;
            a.test_metric = c.mse_late[ti];
            b.test_metric = c.mse_pro[ti];
            lt.push_back(a);
            pt.push_back(b);
            const double pct = 100.0 * (c.mse_late[ti] - c.mse_pro[ti]) /
                               std::fabs(c.mse_late[ti]);
            res.csv.add({"trial", fmtg(c.eta), fmtg(c.sigma2), std::to_string(ti),
                         fmtg(c.mse_late[ti]), fmtg(c.mse_pro[ti]), fmtg(pct), "",
                         fmtg(c.auc_delta[ti])});
            pct_sum += pct;
            wins += c.mse_pro[ti] < c.mse_late[ti] ? 1 : 0;
            ++total;
        }
        auto [frac, pct] = improvement_stats(lt, pt);
        res.csv.add({"cell", fmtg(c.eta), fmtg(c.sigma2), "",
                     fmtg(cell_stats(c.mse_late).mean), fmtg(cell_stats(c.mse_pro).mean),
                     fmtg(pct), fmtg(frac), fmtg(cell_stats(c.auc_delta).mean)});
    }

    const double frac_all = static_cast<double>(wins) / total;
    const double pct_all = pct_sum / total;
    std::ostringstream sum;
    sum << "generative grid: " << cfg.eta_values.size() << "x"
        << cfg.sigma2_values.size() << " cells, " << cfg.trials
        << " paired trials per cell\n";
    sum << "fraction of trials where the unrolled model improves mse: "
        << fmtg(frac_all) << (frac_all >= 0.75 ? " (pass, need >= 0.75)"
                                               : " (FAIL, need >= 0.75)")
        << "\n";
    sum << "mean improvement: " << fmtg(pct_all) << "%"
        << (pct_all > 0 ? " (pass, need > 0)" : " (FAIL, need > 0)") << "\n";
    res.summary = sum.str();
    res.exit_code = (frac_all >= 0.75 && pct_all > 0) ? 0 : 1;
    return res;
}

// ---------- robustness ----------

CommandResult cmd_robustness(const ExperimentConfig& cfg, int jobs) {
    const auto seeds = derive_trial_seeds(cfg.seed, cfg.trials);
    const NoiseSpec noise = noise_spec(cfg);
    const MetricKind metric = metric_of(cfg);
    std::vector<Variant> variants;
    for (const auto& name : cfg.variants) variants.push_back(variant_from_name(name));

    // curves[variant][trial][sigma]
    std::vector<std::vector<std::vector<double>>> curves(
        variants.size(), std::vector<std::vector<double>>(seeds.size()));
    parallel_for(static_cast<int>(seeds.size()), jobs, [&](int ti) {
        DatasetSplits splits = trial_splits(cfg, seeds[static_cast<size_t>(ti)]);
        for (size_t vi = 0; vi < variants.size(); ++vi) {
            VariantJob job;
            job.variant = variants[vi];
            job.hidden = cfg.hidden;
            job.R = cfg.R;
            job.context_dim = cfg.context_dim;
            job.trial_seed = seeds[static_cast<size_t>(ti)];
            job.noise = &noise;
            curves[vi][static_cast<size_t>(ti)] =
                run_variant(cfg, splits, job).per_sigma;
        }
    });

    CommandResult res;
    res.csv.header = {"record",      "variant",    "sigma",
                      "mean_metric", "sd_metric",  "tau_raw",
                      "tau_scaled"};
    std::vector<RobustnessCurve> mean_curves(variants.size());
    for (size_t vi = 0; vi < variants.size(); ++vi) {
        mean_curves[vi].metric = metric;
        mean_curves[vi].sigma = noise.grid;
        for (size_t si = 0; si < noise.grid.size(); ++si) {
            std::vector<double> vals;
            for (size_t ti = 0; ti < seeds.size(); ++ti)
                vals.push_back(curves[vi][ti][si]);
            CellStats s = cell_stats(vals);
            mean_curves[vi].value.push_back(s.mean);
            res.csv.add({"curve", variant_name(variants[vi]), fmtg(noise.grid[si]),
                         fmtg(s.mean), fmtg(s.sd), "", ""});
        }
    }

    size_t bi = variants.size();
    for (size_t vi = 0; vi < variants.size(); ++vi)
        if (variant_name(variants[vi]) == cfg.baseline) bi = vi;
    if (bi == variants.size()) throw ConfigError("baseline variant missing");
    std::vector<double> taus;
    for (size_t vi = 0; vi < variants.size(); ++vi)
        taus.push_back(robust_auc(mean_curves[vi], mean_curves[bi]));
    std::vector<double> scaled = minmax_scale(taus);
    std::ostringstream sum;
    sum << "robustness vs baseline '" << cfg.baseline << "' over sigma in [0, "
        << fmtg(cfg.sigma_max) << "], " << cfg.trials << " trials\n";
    for (size_t vi = 0; vi < variants.size(); ++vi) {
        res.csv.add({"tau", variant_name(variants[vi]), "", "", "", fmtg(taus[vi]),
                     fmtg(scaled[vi])});
        sum << variant_name(variants[vi]) << ": tau = " << fmtg(taus[vi])
            << ", scaled = " << fmtg(scaled[vi]) << "\n";
    }
    res.summary = sum.str();
    return res;
}

// ---------- probe ----------

CommandResult cmd_probe(const ExperimentConfig& cfg, int jobs) {
    if (cfg.R < 2) throw ConfigError("probe requires model.r >= 2");
    const auto seeds = derive_trial_seeds(cfg.seed, cfg.trials);
    std::vector<int> steps;
    for (int s = 1; s <= cfg.R; ++s) steps.push_back(s);

    // acc[trial][modality][step]
    std::vector<std::vector<std::vector<double>>> acc(seeds.size());
    parallel_for(static_cast<int>(seeds.size()), jobs, [&](int ti) {
        const std::uint64_t seed = seeds[static_cast<size_t>(ti)];
        DatasetSplits splits = trial_splits(cfg, seed);
        const auto [in1, in2] = input_dims_of(cfg);
        const int h = cfg.hidden;
        std::vector<EncoderSpec> encs{{in1, {h, h}, cfg.activation},
                                      {in2, {h, h}, cfg.activation}};
        PredictorSpec ps;
        ps.hidden = {h};
        ps.output_dim = output_dim_of(cfg);
        Rng base_rng(mix(seed, 1));
        Rng aug_rng(mix(seed, 2));
        BaseModel base = build_base(encs, FusionSpec{cfg.fusion}, ps, base_rng);
        ProFusionConfig pc;
        pc.R = cfg.R;
        pc.context_dim = cfg.context_dim;
        pc.injection = cfg.injection;
        pc.w_init_scale = cfg.w_init_scale;
        pc.concat_width = cfg.concat_width;
        ProFusionModel pro = augment(base, pc, aug_rng);
        ModelRef ref = wrap(pro);
        TrainConfig tc = cfg.train;
        tc.seed = mix(seed, 3);
        train(ref, splits.train, splits.val, tc);
        ProbeResult pr = probe(pro, splits.train, splits.test, steps);
        acc[static_cast<size_t>(ti)] = pr.acc;
    });

    CommandResult res;
    res.csv.header = {"record", "trial", "modality", "step", "accuracy", "normalized"};
    for (size_t ti = 0; ti < seeds.size(); ++ti)
        for (size_t mi = 0; mi < acc[ti].size(); ++mi)
            for (size_t si = 0; si < steps.size(); ++si) {
                const double a = acc[ti][mi][si];
                const double base = acc[ti][mi][0];
                res.csv.add({"trial", std::to_string(ti), std::to_string(mi + 1),
                             std::to_string(steps[si]), fmtg(a),
                             base > 0 ? fmtg(a / base) : ""});
            }

    std::ostringstream sum;
    sum << "linear probes after each unroll step, " << cfg.trials << " trials\n";
    const size_t n_mod = acc.empty() ? 0 : acc[0].size();
    for (size_t mi = 0; mi < n_mod; ++mi)
        for (size_t si = 0; si < steps.size(); ++si) {
            std::vector<double> vals, norms;
            for (size_t ti = 0; ti < seeds.size(); ++ti) {
                vals.push_back(acc[ti][mi][si]);
                if (acc[ti][mi][0] > 0) norms.push_back(acc[ti][mi][si] / acc[ti][mi][0]);
            }
            CellStats s = cell_stats(vals), n = cell_stats(norms);
            res.csv.add({"mean", "", std::to_string(mi + 1), std::to_string(steps[si]),
                         fmtg(s.mean), fmtg(n.mean)});
            sum << "modality " << mi + 1 << " step " << steps[si] << ": acc "
                << fmtg(s.mean) << " +- " << fmtg(s.sd) << " (x" << fmtg(n.mean)
                << " of step 1)\n";
        }
    res.summary = sum.str();
    return res;
}

// ---------- context-dim ablation ----------

CommandResult cmd_ablation_context_dim(const ExperimentConfig& cfg, int jobs) {
    const auto seeds = derive_trial_seeds(cfg.seed, cfg.trials);
    const auto& grid = cfg.context_grid;
    // acc[trial] -> base, acc[trial][gi] -> pro at grid[gi]
    std::vector<double> base_acc(seeds.size());
    std::vector<std::vector<double>> pro_acc(grid.size(),
                                             std::vector<double>(seeds.size()));
    parallel_for(static_cast<int>(seeds.size()), jobs, [&](int ti) {
        const std::uint64_t seed = seeds[static_cast<size_t>(ti)];
        DatasetSplits splits = trial_splits(cfg, seed);
        VariantJob job;
        job.hidden = cfg.hidden;
        job.R = cfg.R;
        job.trial_seed = seed;
        job.variant = Variant::Late;
        base_acc[static_cast<size_t>(ti)] = run_variant(cfg, splits, job).test_metric;
        for (size_t gi = 0; gi < grid.size(); ++gi) {
            job.variant = Variant::Pro;
            job.context_dim = grid[gi];
            pro_acc[gi][static_cast<size_t>(ti)] =
                run_variant(cfg, splits, job).test_metric;
        }
    });

    CommandResult res;
    res.csv.header = {"context_dim", "trials", "mean_accuracy", "sd_accuracy",
                      "normalized_to_base"};
    CellStats bs = cell_stats(base_acc);
    res.csv.add({"base", std::to_string(bs.n), fmtg(bs.mean), fmtg(bs.sd), "1"});
    std::ostringstream sum;
    sum << "context-dimension sweep, base model accuracy " << fmtg(bs.mean) << " +- "
        << fmtg(bs.sd) << "\n";
    for (size_t gi = 0; gi < grid.size(); ++gi) {
        CellStats s = cell_stats(pro_acc[gi]);
        const double norm = bs.mean != 0 ? s.mean / bs.mean : 0.0;
        res.csv.add({std::to_string(grid[gi]), std::to_string(s.n), fmtg(s.mean),
                     fmtg(s.sd), fmtg(norm)});
        sum << "context " << grid[gi] << ": " << fmtg(s.mean) << " +- " << fmtg(s.sd)
            << " (x" << fmtg(norm) << ")\n";
    }
    res.summary = sum.str();
    return res;
}

// ---------- iterative ablation ----------

CommandResult cmd_ablation_iterative(const ExperimentConfig& cfg, int jobs) {
    const auto seeds = derive_trial_seeds(cfg.seed, cfg.trials);
    const std::vector<Variant> variants{Variant::Late, Variant::Iterative, Variant::Pro};
    std::vector<std::vector<double>> acc(variants.size(),
                                         std::vector<double>(seeds.size()));
    parallel_for(static_cast<int>(seeds.size()), jobs, [&](int ti) {
        DatasetSplits splits = trial_splits(cfg, seeds[static_cast<size_t>(ti)]);
        for (size_t vi = 0; vi < variants.size(); ++vi) {
            VariantJob job;
            job.variant = variants[vi];
            job.hidden = cfg.hidden;
            job.R = cfg.R;
            job.context_dim = cfg.context_dim;
            job.trial_seed = seeds[static_cast<size_t>(ti)];
            acc[vi][static_cast<size_t>(ti)] = run_variant(cfg, splits, job).test_metric;
        }
    });

    CommandResult res;
    res.csv.header = {"model", "trials", "mean_accuracy", "sd_accuracy"};
    std::ostringstream sum;
    sum << "base vs unimodal-iterative vs unrolled fusion at equal R=" << cfg.R << ", "
        << cfg.trials << " paired trials\n";
    std::vector<CellStats> stats;
    const char* tags[] = {"base", "iterative", "pro"};
    for (size_t vi = 0; vi < variants.size(); ++vi) {
        CellStats s = cell_stats(acc[vi]);
        stats.push_back(s);
        res.csv.add({tags[vi], std::to_string(s.n), fmtg(s.mean), fmtg(s.sd)});
        sum << tags[vi] << ": " << fmtg(s.mean) << " +- " << fmtg(s.sd) << "\n";
    }
    sum << "ordering pro >= iterative >= base in means: "
        << ((stats[2].mean >= stats[1].mean && stats[1].mean >= stats[0].mean) ? "yes"
                                                                               : "no")
        << "\n";
    res.summary = sum.str();
    return res;
}

// ---------- expressiveness ----------

CommandResult cmd_expressiveness(const ExperimentConfig& cfg) {
    Rng rng(cfg.seed);
    CommandResult res;
    std::vector<std::pair<std::string, bool>> checks;

    checks.emplace_back("first-layer feature counts (early 10, late 6 at n=2, D=2)",
                        first_layer_feature_count(2, 2, true) == 10 &&
                            first_layer_feature_count(2, 2, false) == 6);

    bool nested = true;
    for (int D = 1; D <= 3; ++D) {
        auto late = reachable_monomials(late_graph(D), cfg.max_degree);
        auto pro = reachable_monomials(pro_graph(D), cfg.max_degree);
        auto early = reachable_monomials(early_graph(D), cfg.max_degree);
        nested = nested &&
                 std::includes(pro.begin(), pro.end(), late.begin(), late.end()) &&
                 std::includes(early.begin(), early.end(), pro.begin(), pro.end());
    }
    checks.emplace_back("monomial nesting late within pro within early (D <= 3)",
                        nested);

    Monomial w = Monomial::var(0, 0)
                     .times(Monomial::var(0, 0))
                     .times(Monomial::var(0, 1))
                     .times(Monomial::var(1, 0));
    auto late4 = reachable_monomials(late_graph(2), 4);
    auto pro4 = reachable_monomials(pro_graph(2), 4);
    auto early4 = reachable_monomials(early_graph(2), 4);
    checks.emplace_back("asymmetric degree-4 witness separates late from pro/early",
                        late4.count(w) == 0 && pro4.count(w) == 1 &&
                            early4.count(w) == 1);

    bool prop_ok = true;
    for (int i = 0; i < 200; ++i) {
        auto spec = random_linear_spec(2, 1, 2, rng);
        if (!check_column_proportionality(effective_late(spec), 2, 2).ok) prop_ok = false;
        Mat dense(2, 4);
        for (auto& v : dense.a) v = rng.normal();
        if (check_column_proportionality(dense, 2, 2).ok) prop_ok = false;
    }
    checks.emplace_back("column proportionality holds for late, fails for dense (200 draws)",
                        prop_ok);

    Mat target(2, 4);
    target(0, 0) = 1.0;
    target(1, 1) = 1.0;
    FitOptions fo;
    const double r_late = fit_residual(FitFamily::Late, target, 2, 1, fo);
    const double r_early = fit_residual(FitFamily::Early, target, 2, 1, fo);
    checks.emplace_back("counterexample residuals (late > 0.1, early < 1e-6)",
                        r_late > 0.1 && r_early < 1e-6);

    auto spec = random_linear_spec(3, 2, 4, rng);
    spec.G11 = Mat(2, 2);
    spec.G12 = Mat(2, 2);
    spec.G21 = Mat(2, 2);
    spec.G22 = Mat(2, 2);
    Mat pl = effective_pro(spec), ll = effective_late(spec);
    bool equal = pl.same_shape(ll);
    for (size_t i = 0; equal && i < pl.a.size(); ++i) equal = pl.a[i] == ll.a[i];
    checks.emplace_back("zero backprojection reproduces the late map exactly", equal);

    res.csv.header = {"check", "ok"};
    bool all_ok = true;
    std::ostringstream sum;
    for (const auto& [name, ok] : checks) {
        res.csv.add({name, ok ? "1" : "0"});
        sum << (ok ? "pass" : "FAIL") << ": " << name << "\n";
        all_ok = all_ok && ok;
    }
    Rng report_rng(cfg.seed);
    sum << "\n" << expressiveness_report(cfg.max_degree, 2, report_rng);
    res.summary = sum.str();
    res.exit_code = all_ok ? 0 : 1;
    return res;
}

// ---------- timing ----------

CommandResult cmd_timing(const ExperimentConfig& cfg) {
    const auto [in1, in2] = input_dims_of(cfg);
    const int h = cfg.hidden;
    const int n = std::min(cfg.train.batch_size, 256);
    DatasetSplits splits = trial_splits(cfg, derive_trial_seeds(cfg.seed, 1)[0]);
    std::vector<int> rows;
    for (int i = 0; i < std::min(n, splits.train.size()); ++i) rows.push_back(i);
    Var x1 = make_const(take_rows(splits.train.X1, rows));
    Var x2 = make_const(take_rows(splits.train.X2, rows));
    std::vector<int> labels;
    Var targets;
    if (cfg.task == TaskKind::Classification) {
        for (int i : rows) labels.push_back(splits.train.labels[static_cast<size_t>(i)]);
    } else {
        targets = make_const(take_rows(splits.train.Y, rows));
    }

    CommandResult res;
    res.csv.header = {"r", "wall_ms", "ratio_to_r1"};
    std::vector<double> best_ms;
    const int reps = std::max(cfg.trials, 5);
    for (int R = 1; R <= 4; ++R) {
        std::vector<EncoderSpec> encs{{in1, {h, h}, cfg.activation},
                                      {in2, {h, h}, cfg.activation}};
        PredictorSpec ps;
        ps.hidden = {h};
        ps.output_dim = output_dim_of(cfg);
        Rng base_rng(mix(cfg.seed, 1));
        Rng aug_rng(mix(cfg.seed, 2));
        BaseModel base = build_base(encs, FusionSpec{cfg.fusion}, ps, base_rng);
        ProFusionConfig pc;
        pc.R = R;
        pc.injection = cfg.injection;
        pc.w_init_scale = cfg.w_init_scale;
        ProFusionModel pro = augment(base, pc, aug_rng);

        auto pass = [&] {
            Var out = pro.forward({x1, x2});
            Var loss = cfg.task == TaskKind::Classification
                           ? softmax_cross_entropy(out, labels)
                           : mse_loss(out, targets);
            backward(loss);
        };
        pass(); // warmup
        double best = 0.0;
        for (int rep = 0; rep < reps; ++rep) {
            const auto t0 = std::chrono::steady_clock::now();
            pass();
            const double ms = std::chrono::duration<double, std::milli>(
                                  std::chrono::steady_clock::now() - t0)
                                  .count();
            if (rep == 0 || ms < best) best = ms;
        }
        best_ms.push_back(best);
    }

    std::ostringstream sum;
    sum << "forward+backward wall time vs unroll count (best of " << reps
        << " reps, batch " << rows.size() << ")\n";
    for (int R = 1; R <= 4; ++R) {
        const double ratio = best_ms[static_cast<size_t>(R - 1)] / best_ms[0];
        res.csv.add({std::to_string(R), fmtg(best_ms[static_cast<size_t>(R - 1)]),
                     fmtg(ratio)});
        const bool ok = std::fabs(ratio - R) <= 0.3 * R;
        sum << "R=" << R << ": " << fmtg(best_ms[static_cast<size_t>(R - 1)]) << " ms, x"
            << fmtg(ratio) << (ok ? "" : " (outside +-30% of proportional)") << "\n";
    }
    res.summary = sum.str();
    return res;
}

// ---------- dispatch and file output ----------

CommandResult run_command(const ExperimentConfig& cfg, int jobs) {
    if (jobs < 1) throw ConfigError("jobs must be >= 1");
    switch (cfg.kind) {
        case ExperimentKind::DimSweep: return cmd_dim_sweep(cfg, jobs);
        case ExperimentKind::GenerativeGrid: return cmd_generative_grid(cfg, jobs);
        case ExperimentKind::Robustness: return cmd_robustness(cfg, jobs);
        case ExperimentKind::Probe: return cmd_probe(cfg, jobs);
        case ExperimentKind::AblationContextDim:
            return cmd_ablation_context_dim(cfg, jobs);
        case ExperimentKind::AblationIterative:
            return cmd_ablation_iterative(cfg, jobs);
        case ExperimentKind::Expressiveness: return cmd_expressiveness(cfg);
        case ExperimentKind::Timing: return cmd_timing(cfg);
    }
    throw ContractError("unreachable experiment kind");
}

std::string resolve_out_dir(const ExperimentConfig& cfg, const std::string& cli_out) {
    if (!cli_out.empty()) return cli_out;
    if (const char* env = std::getenv(kOutDirEnv); env && *env) return env;
    return cfg.out_dir;
}

int run_and_write(const ExperimentConfig& cfg, int jobs, const std::string& out_dir) {
    namespace fs = std::filesystem;
    RunManifest manifest;
    manifest.config_hash = config_hash_hex(cfg);
    manifest.trial_seeds = derive_trial_seeds(cfg.seed, cfg.trials);
    manifest.started = timestamp_utc_now();
    CommandResult result = run_command(cfg, jobs);
    manifest.finished = timestamp_utc_now();
    manifest.files = {"results.csv", "summary.txt", "manifest.txt"};

    fs::create_directories(out_dir);
    {
        std::ofstream csv(fs::path(out_dir) / "results.csv");
        if (!csv) throw InputError("cannot write results.csv under " + out_dir);
        csv << result.csv.text();
    }
    {
        std::ofstream txt(fs::path(out_dir) / "summary.txt");
        txt << result.summary;
    }
    write_manifest_file((fs::path(out_dir) / "manifest.txt").string(), manifest);
    return result.exit_code;
}

} // namespace profusion
