#include "profusion/synthetic.hpp"
#include "profusion/errors.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace profusion {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

void validate(const LatticeTaskConfig& cfg) {
    if (cfg.D < 2) throw ConfigError("lattice: D must be >= 2");
    if (cfg.M < 1) throw ConfigError("lattice: M must be >= 1");
    if (!(cfg.f_max > 0.0)) throw ConfigError("lattice: f_max must be positive");
    if (cfg.p < 2 || cfg.p % 2 != 0) throw ConfigError("lattice: p must be even and >= 2");
    if (cfg.n_train < 1 || cfg.n_val < 1 || cfg.n_test < 1)
        throw ConfigError("lattice: split sizes must be >= 1");
}

void validate(const GenerativeTaskConfig& cfg) {
    if (cfg.d_z < 1 || cfg.D1 < 1 || cfg.D2 < 1 || cfg.K_y < 1)
        throw ConfigError("generative: all dims must be >= 1");
    if (cfg.sigma2 < 0.0) throw ConfigError("generative: sigma2 must be >= 0");
    if (cfg.eta != 0.0 && cfg.D1 != cfg.D2)
        throw ConfigError("generative: corruption couples modalities elementwise, needs D1 == D2");
    if (cfg.n_train < 1 || cfg.n_val < 1 || cfg.n_test < 1)
        throw ConfigError("generative: split sizes must be >= 1");
}

} // namespace

NoiseSpec make_noise_grid(double sigma_max, int m, std::vector<int> modalities) {
    if (m < 2) throw ConfigError("noise grid needs at least two levels");
    if (!(sigma_max > 0.0)) throw ConfigError("noise grid needs sigma_max > 0");
    NoiseSpec spec;
    spec.modalities = std::move(modalities);
    spec.grid.resize(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i)
        spec.grid[static_cast<size_t>(i)] = sigma_max * i / (m - 1);
    validate_noise(spec);
    return spec;
}

void validate_noise(const NoiseSpec& spec) {
    if (spec.grid.empty() || spec.grid.front() != 0.0)
        throw ConfigError("noise grid must start at 0");
    for (size_t i = 1; i < spec.grid.size(); ++i)
        if (!(spec.grid[i] > spec.grid[i - 1]))
            throw ConfigError("noise grid must be strictly ascending");
    if (spec.modalities.empty())
        throw ConfigError("noise spec must select at least one modality");
    for (int m : spec.modalities)
        if (m != 1 && m != 2) throw ConfigError("noise spec modalities must be 1 or 2");
}

int first_nonzero_digit(double v) {
    double a = std::fabs(v);
    if (!(a > 0.0) || !std::isfinite(a))
        throw InputError("first_nonzero_digit: value must be finite and nonzero");
    while (a < 1.0) a *= 10.0;
    while (a >= 10.0) a /= 10.0;
    return static_cast<int>(a);
}

std::vector<double> position_embedding(double u, int p, int D) {
    std::vector<double> e(static_cast<size_t>(p));
    for (int i = 0; i < p / 2; ++i) {
        double omega = D * std::pow(10000.0, -2.0 * i / p);
        e[2 * static_cast<size_t>(i)] = std::sin(u * omega);
        e[2 * static_cast<size_t>(i) + 1] = std::cos(u * omega);
    }
    return e;
}

SyntheticDataset gen_lattice(const LatticeTaskConfig& cfg, Rng& rng, int n) {
    validate(cfg);
    if (n < 1) throw InputError("gen_lattice: n must be >= 1");
    SyntheticDataset ds;
    ds.kind = TaskKind::Classification;
    ds.num_classes = 9;
    ds.X1 = Mat(n, cfg.D);
    ds.X2 = Mat(n, cfg.p);
    ds.labels.resize(static_cast<size_t>(n));

    std::vector<double> a(static_cast<size_t>(cfg.M)),
        fr(static_cast<size_t>(cfg.M)), ph(static_cast<size_t>(cfg.M));
    for (int s = 0; s < n; ++s) {
        int l = 0;
        double vl = 0.0;
        // resample the whole function if the selected value is (near) zero
        do {
            for (int m = 0; m < cfg.M; ++m) {
                a[static_cast<size_t>(m)] = rng.uniform() * 2.0 - 1.0;
                fr[static_cast<size_t>(m)] = rng.uniform() * cfg.f_max;
                ph[static_cast<size_t>(m)] = rng.uniform() * kTwoPi;
            }
            for (int d = 0; d < cfg.D; ++d) {
                double u = static_cast<double>(d) / cfg.D;
                double v = 0.0;
                for (int m = 0; m < cfg.M; ++m)
                    v += a[static_cast<size_t>(m)] *
                         std::sin(kTwoPi * fr[static_cast<size_t>(m)] * u +
                                  ph[static_cast<size_t>(m)]);
                ds.X1(s, d) = v;
            }
            l = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.D)));
            vl = ds.X1(s, l);
        } while (std::fabs(vl) < 1e-9);
        auto emb = position_embedding(static_cast<double>(l) / cfg.D, cfg.p, cfg.D);
        for (int j = 0; j < cfg.p; ++j) ds.X2(s, j) = emb[static_cast<size_t>(j)];
        ds.labels[static_cast<size_t>(s)] = first_nonzero_digit(vl) - 1;
    }
    return ds;
}

DatasetSplits gen_lattice_splits(const LatticeTaskConfig& cfg) {
    validate(cfg);
    Rng root(cfg.seed);
    Rng r_train = root.split(0), r_val = root.split(1), r_test = root.split(2);
    DatasetSplits sp;
    sp.train = gen_lattice(cfg, r_train, cfg.n_train);
    sp.val = gen_lattice(cfg, r_val, cfg.n_val);
    sp.test = gen_lattice(cfg, r_test, cfg.n_test);
    return sp;
}

SyntheticDataset gen_generative(const GenerativeTaskConfig& cfg, Rng& rng, int n) {
    validate(cfg);
    if (n < 1) throw InputError("gen_generative: n must be >= 1");
    SyntheticDataset ds;
    ds.kind = TaskKind::Regression;
    ds.X1 = Mat(n, cfg.D1);
    ds.X2 = Mat(n, cfg.D2);
    ds.Y = Mat(n, cfg.K_y);

    // mixing matrices are drawn once per dataset
    Mat W1(cfg.D1, cfg.d_z), W2(cfg.D2, cfg.d_z), Wy(cfg.K_y, cfg.d_z);
    for (auto& w : W1.a) w = rng.normal();
    for (auto& w : W2.a) w = rng.normal();
    for (auto& w : Wy.a) w = rng.normal();

    std::vector<double> z(static_cast<size_t>(cfg.d_z));
    const double slope = 0.01;
    for (int s = 0; s < n; ++s) {
        for (auto& zi : z) zi = rng.uniform() * 5.0 - 2.5;
        for (int i = 0; i < cfg.D1; ++i) {
            double w1z = 0.0;
            for (int k = 0; k < cfg.d_z; ++k) w1z += W1(i, k) * z[static_cast<size_t>(k)];
            double corrupted = 0.0;
            if (cfg.eta != 0.0) {
                double w2z = 0.0;
                for (int k = 0; k < cfg.d_z; ++k) w2z += W2(i, k) * z[static_cast<size_t>(k)];
                corrupted = 2.0 * std::fabs(cfg.eta) * std::sin(w2z);
            }
            double lrelu = w1z > 0.0 ? w1z : slope * w1z;
            ds.X1(s, i) = lrelu - corrupted + rng.normal();
        }
        for (int i = 0; i < cfg.D2; ++i) {
            double w2z = 0.0;
            for (int k = 0; k < cfg.d_z; ++k) w2z += W2(i, k) * z[static_cast<size_t>(k)];
            ds.X2(s, i) = std::sin(w2z) + cfg.sigma2 * rng.normal();
        }
        for (int i = 0; i < cfg.K_y; ++i) {
            double wyz = 0.0;
            for (int k = 0; k < cfg.d_z; ++k) wyz += Wy(i, k) * z[static_cast<size_t>(k)];
            ds.Y(s, i) = wyz + rng.normal();
        }
    }
    return ds;
}

namespace {

SyntheticDataset slice_rows(const SyntheticDataset& ds, int lo, int hi) {
    SyntheticDataset out;
    out.kind = ds.kind;
    out.num_classes = ds.num_classes;
    int n = hi - lo;
    out.X1 = Mat(n, ds.X1.cols);
    out.X2 = Mat(n, ds.X2.cols);
    for (int r = 0; r < n; ++r) {
        for (int c = 0; c < ds.X1.cols; ++c) out.X1(r, c) = ds.X1(lo + r, c);
        for (int c = 0; c < ds.X2.cols; ++c) out.X2(r, c) = ds.X2(lo + r, c);
    }
    if (ds.kind == TaskKind::Classification) {
        out.labels.assign(ds.labels.begin() + lo, ds.labels.begin() + hi);
    } else {
        out.Y = Mat(n, ds.Y.cols);
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < ds.Y.cols; ++c) out.Y(r, c) = ds.Y(lo + r, c);
    }
    return out;
}

} // namespace

DatasetSplits gen_generative_splits(const GenerativeTaskConfig& cfg) {
    validate(cfg);
    // one draw of the mixing matrices must cover all three splits, so a
    // single dataset is generated and sliced
    Rng root(cfg.seed);
    int total = cfg.n_train + cfg.n_val + cfg.n_test;
    auto all = gen_generative(cfg, root, total);
    DatasetSplits sp;
    sp.train = slice_rows(all, 0, cfg.n_train);
    sp.val = slice_rows(all, cfg.n_train, cfg.n_train + cfg.n_val);
    sp.test = slice_rows(all, cfg.n_train + cfg.n_val, total);
    return sp;
}

SyntheticDataset corrupt(const SyntheticDataset& ds, double sigma,
                         const std::vector<int>& modalities, Rng& rng) {
    if (sigma < 0.0) throw InputError("corrupt: sigma must be >= 0");
    bool m1 = false, m2 = false;
    for (int m : modalities) {
        if (m == 1) m1 = true;
        else if (m == 2) m2 = true;
        else throw InputError("corrupt: modality index must be 1 or 2");
    }
    SyntheticDataset out = ds;
    if (sigma == 0.0) return out;
    if (m1)
        for (auto& v : out.X1.a) v += sigma * rng.normal();
    if (m2)
        for (auto& v : out.X2.a) v += sigma * rng.normal();
    return out;
}

namespace {

void write_matrix_row(std::ostream& os, const Mat& m, int r) {
    char buf[64];
    for (int c = 0; c < m.cols; ++c) {
        std::snprintf(buf, sizeof(buf), "%.15g", m(r, c));
        os << ',' << buf;
    }
}

} // namespace

void save_dataset_csv(const SyntheticDataset& ds, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw InputError("save_dataset_csv: cannot open " + path);
    os << "kind";
    for (int c = 0; c < ds.X1.cols; ++c) os << ",x1_" << c;
    for (int c = 0; c < ds.X2.cols; ++c) os << ",x2_" << c;
    if (ds.kind == TaskKind::Classification) {
        os << ",label";
    } else {
        for (int c = 0; c < ds.Y.cols; ++c) os << ",y_" << c;
    }
    os << '\n';
    const char* tag = ds.kind == TaskKind::Classification ? "cls" : "reg";
    for (int r = 0; r < ds.size(); ++r) {
        os << tag;
        write_matrix_row(os, ds.X1, r);
        write_matrix_row(os, ds.X2, r);
        if (ds.kind == TaskKind::Classification)
            os << ',' << ds.labels[static_cast<size_t>(r)];
        else
            write_matrix_row(os, ds.Y, r);
        os << '\n';
    }
    if (!os) throw InputError("save_dataset_csv: write failed for " + path);
}

SyntheticDataset load_dataset_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw InputError("load_dataset_csv: cannot open " + path);
    std::string header;
    if (!std::getline(is, header)) throw InputError("load_dataset_csv: empty file " + path);

    int d1 = 0, d2 = 0, ky = 0;
    bool has_label = false;
    {
        std::stringstream ss(header);
        std::string col;
        bool first = true;
        while (std::getline(ss, col, ',')) {
            if (first) {
                first = false;
                if (col != "kind") throw InputError("load_dataset_csv: bad header in " + path);
                continue;
            }
            if (col.rfind("x1_", 0) == 0) ++d1;
            else if (col.rfind("x2_", 0) == 0) ++d2;
            else if (col == "label") has_label = true;
            else if (col.rfind("y_", 0) == 0) ++ky;
            else throw InputError("load_dataset_csv: unknown column " + col);
        }
    }
    if (d1 == 0 || d2 == 0 || (!has_label && ky == 0))
        throw InputError("load_dataset_csv: incomplete header in " + path);

    std::vector<std::vector<double>> x1rows, x2rows, yrows;
    std::vector<int> labels;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::getline(ss, cell, ',');
        bool cls = cell == "cls";
        if (!cls && cell != "reg") throw InputError("load_dataset_csv: bad kind tag " + cell);
        if (cls != has_label) throw InputError("load_dataset_csv: kind tag contradicts header");
        auto read_cells = [&](int count) {
            std::vector<double> v(static_cast<size_t>(count));
            for (int i = 0; i < count; ++i) {
                if (!std::getline(ss, cell, ','))
                    throw InputError("load_dataset_csv: short row in " + path);
                v[static_cast<size_t>(i)] = std::strtod(cell.c_str(), nullptr);
            }
            return v;
        };
        x1rows.push_back(read_cells(d1));
        x2rows.push_back(read_cells(d2));
        if (cls) {
            if (!std::getline(ss, cell, ','))
                throw InputError("load_dataset_csv: missing label in " + path);
            labels.push_back(std::atoi(cell.c_str()));
        } else {
            yrows.push_back(read_cells(ky));
        }
    }

    int n = static_cast<int>(x1rows.size());
    if (n == 0) throw InputError("load_dataset_csv: no data rows in " + path);
    SyntheticDataset ds;
    ds.kind = has_label ? TaskKind::Classification : TaskKind::Regression;
    ds.X1 = Mat(n, d1);
    ds.X2 = Mat(n, d2);
    for (int r = 0; r < n; ++r) {
        for (int c = 0; c < d1; ++c) ds.X1(r, c) = x1rows[static_cast<size_t>(r)][static_cast<size_t>(c)];
        for (int c = 0; c < d2; ++c) ds.X2(r, c) = x2rows[static_cast<size_t>(r)][static_cast<size_t>(c)];
    }
    if (has_label) {
        ds.labels = labels;
        ds.num_classes = 9;
        for (int lb : labels)
            if (lb < 0) throw InputError("load_dataset_csv: negative label");
    } else {
        ds.Y = Mat(n, ky);
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < ky; ++c) ds.Y(r, c) = yrows[static_cast<size_t>(r)][static_cast<size_t>(c)];
    }
    return ds;
}

} // namespace profusion
