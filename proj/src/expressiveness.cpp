#include "profusion/expressiveness.hpp"
#include "profusion/errors.hpp"
#include "profusion/optim.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace profusion {

namespace {

void require_shape(const Mat& m, int r, int c, const char* name) {
    if (m.rows != r || m.cols != c) {
        std::ostringstream msg;
        msg << "linear fusion spec: block " << name << " must be " << r << "x" << c
            << ", got " << m.rows << "x" << m.cols;
        throw SpecError(msg.str());
    }
}

void validate_blocks(const LinearFusionSpec& s, bool need_cross, bool need_g) {
    if (s.D < 1 || s.d < 1 || s.K < 2 || s.K % 2 != 0)
        throw SpecError("linear fusion spec: need D,d >= 1 and even K >= 2");
    int kh = s.K / 2;
    require_shape(s.F11, kh, s.d, "F11");
    require_shape(s.F12, kh, s.d, "F12");
    require_shape(s.F21, kh, s.d, "F21");
    require_shape(s.F22, kh, s.d, "F22");
    require_shape(s.W11, s.d, s.D, "W11");
    require_shape(s.W22, s.d, s.D, "W22");
    if (need_cross) {
        require_shape(s.W12, s.d, s.D, "W12");
        require_shape(s.W21, s.d, s.D, "W21");
    }
    if (need_g) {
        require_shape(s.G11, s.d, s.d, "G11");
        require_shape(s.G12, s.d, s.d, "G12");
        require_shape(s.G21, s.d, s.d, "G21");
        require_shape(s.G22, s.d, s.d, "G22");
    }
}

Mat mul_mat(const Mat& a, const Mat& b) {
    Mat c(a.rows, b.cols);
    gemm_nn_acc(a, b, c);
    return c;
}

Mat add_mat(const Mat& a, const Mat& b) {
    Mat c = a;
    for (size_t i = 0; i < c.a.size(); ++i) c.a[i] += b.a[i];
    return c;
}

// [[A B],[C D]] into one dense matrix
Mat assemble(const Mat& A, const Mat& B, const Mat& C, const Mat& D) {
    Mat out(A.rows + C.rows, A.cols + B.cols);
    for (int r = 0; r < A.rows; ++r) {
        for (int c = 0; c < A.cols; ++c) out(r, c) = A(r, c);
        for (int c = 0; c < B.cols; ++c) out(r, A.cols + c) = B(r, c);
    }
    for (int r = 0; r < C.rows; ++r) {
        for (int c = 0; c < C.cols; ++c) out(A.rows + r, c) = C(r, c);
        for (int c = 0; c < D.cols; ++c) out(A.rows + r, A.cols + c) = D(r, c);
    }
    return out;
}

} // namespace

LinearFusionSpec random_linear_spec(int D, int d, int K, Rng& rng) {
    LinearFusionSpec s;
    s.D = D;
    s.d = d;
    s.K = K;
    auto draw = [&rng](int r, int c) {
        Mat m(r, c);
        for (auto& v : m.a) v = rng.normal();
        return m;
    };
    int kh = K / 2;
    s.F11 = draw(kh, d);
    s.F12 = draw(kh, d);
    s.F21 = draw(kh, d);
    s.F22 = draw(kh, d);
    s.W11 = draw(d, D);
    s.W12 = draw(d, D);
    s.W21 = draw(d, D);
    s.W22 = draw(d, D);
    s.G11 = draw(d, d);
    s.G12 = draw(d, d);
    s.G21 = draw(d, d);
    s.G22 = draw(d, d);
    return s;
}

Mat effective_early(const LinearFusionSpec& s) {
    validate_blocks(s, true, false);
    return assemble(add_mat(mul_mat(s.F11, s.W11), mul_mat(s.F12, s.W21)),
                    add_mat(mul_mat(s.F11, s.W12), mul_mat(s.F12, s.W22)),
                    add_mat(mul_mat(s.F21, s.W11), mul_mat(s.F22, s.W21)),
                    add_mat(mul_mat(s.F21, s.W12), mul_mat(s.F22, s.W22)));
}

Mat effective_late(const LinearFusionSpec& s) {
    validate_blocks(s, false, false);
    return assemble(mul_mat(s.F11, s.W11), mul_mat(s.F12, s.W22),
                    mul_mat(s.F21, s.W11), mul_mat(s.F22, s.W22));
}

Mat effective_pro(const LinearFusionSpec& s) {
    validate_blocks(s, false, true);
    // inner map: [[W11 + G11 W11, G12 W22], [G21 W11, W22 + G22 W22]]
    Mat inner = assemble(add_mat(s.W11, mul_mat(s.G11, s.W11)), mul_mat(s.G12, s.W22),
                         mul_mat(s.G21, s.W11), add_mat(s.W22, mul_mat(s.G22, s.W22)));
    Mat f = assemble(s.F11, s.F12, s.F21, s.F22);
    return mul_mat(f, inner);
}

ColumnPropResult check_column_proportionality(const Mat& m, int D, int K, double tol) {
    ColumnPropResult res;
    if (m.rows != K || m.cols != 2 * D)
        throw SpecError("column proportionality: matrix must be K x 2D");
    double worst = 0.0;
    for (int g = 0; g < 2; ++g) {
        int lo = g * D;
        for (int u = lo; u < lo + D; ++u)
            for (int v = u + 1; v < lo + D; ++v)
                for (int i = 0; i < K; ++i)
                    for (int j = i + 1; j < K; ++j) {
                        double det = m(i, u) * m(j, v) - m(i, v) * m(j, u);
                        worst = std::max(worst, std::fabs(det));
                    }
    }
    res.max_dev = worst;
    res.ok = worst < tol;
    return res;
}

namespace {

struct FitParams {
    Var F11, F12, F21, F22;
    Var W11, W12, W21, W22;
    Var G11, G12, G21, G22;
};

Var assemble_var(const Var& a, const Var& b, const Var& c, const Var& d) {
    return concat({concat({a, b}, 1), concat({c, d}, 1)}, 0);
}

// effective matrix as an autodiff graph over the family's free parameters
Var effective_graph(FitFamily family, const FitParams& p) {
    Var f = assemble_var(p.F11, p.F12, p.F21, p.F22);
    if (family == FitFamily::Early) {
        Var w = assemble_var(p.W11, p.W12, p.W21, p.W22);
        return matmul(f, w);
    }
    if (family == FitFamily::Late) {
        Var z1 = make_const(Mat(p.W11->val.rows, p.W11->val.cols));
        Var w = assemble_var(p.W11, z1, z1, p.W22);
        return matmul(f, w);
    }
    Var inner = assemble_var(add(p.W11, matmul(p.G11, p.W11)), matmul(p.G12, p.W22),
                             matmul(p.G21, p.W11), add(p.W22, matmul(p.G22, p.W22)));
    return matmul(f, inner);
}

std::vector<Var> family_params(FitFamily family, const FitParams& p) {
    std::vector<Var> out{p.F11, p.F12, p.F21, p.F22, p.W11, p.W22};
    if (family == FitFamily::Early) {
        out.push_back(p.W12);
        out.push_back(p.W21);
    } else if (family == FitFamily::Pro) {
        out.push_back(p.G11);
        out.push_back(p.G12);
        out.push_back(p.G21);
        out.push_back(p.G22);
    }
    return out;
}

FitParams make_fit_params(int D, int d, int K, Rng* rng) {
    auto draw = [rng](int r, int c) {
        Mat m(r, c);
        if (rng)
            for (auto& v : m.a) v = rng->normal() * 0.5;
        return make_param(m);
    };
    FitParams p;
    int kh = K / 2;
    p.F11 = draw(kh, d);
    p.F12 = draw(kh, d);
    p.F21 = draw(kh, d);
    p.F22 = draw(kh, d);
    p.W11 = draw(d, D);
    p.W12 = draw(d, D);
    p.W21 = draw(d, D);
    p.W22 = draw(d, D);
    p.G11 = draw(d, d);
    p.G12 = draw(d, d);
    p.G21 = draw(d, d);
    p.G22 = draw(d, d);
    return p;
}

// descent run tracking the best loss ever visited, initial point included
double run_fit(FitFamily family, const FitParams& p, const Mat& target,
               const FitOptions& opts) {
    auto params = family_params(family, p);
    Optimizer opt(OptKind::SgdMomentum, params, opts.lr);
    opt.momentum = 0.0;
    Var t = make_const(target);
    double best = std::numeric_limits<double>::infinity();
    for (int step = 0; step <= opts.steps; ++step) {
        opt.zero_grad();
        Var diff = sub(effective_graph(family, p), t);
        Var loss = sum_all(mul(diff, diff));
        best = std::min(best, loss->val(0, 0));
        if (step == opts.steps) break;
        backward(loss);
        opt.step();
    }
    return best;
}

} // namespace

double fit_residual(FitFamily family, const Mat& target, int D, int d,
                    const FitOptions& opts) {
    if (target.rows < 2 || target.rows % 2 != 0 || target.cols != 2 * D)
        throw SpecError("fit_residual: target must be K x 2D with even K");
    if (opts.restarts < 1 || opts.steps < 0 || opts.lr <= 0.0)
        throw ConfigError("fit_residual: need restarts >= 1, steps >= 0, lr > 0");
    int K = target.rows;
    Rng root(opts.seed);

    double best = std::numeric_limits<double>::infinity();
    std::vector<Mat> best_late_vals;
    FitFamily first_pass = family == FitFamily::Pro ? FitFamily::Late : family;

    double best_late = std::numeric_limits<double>::infinity();
    for (int r = 0; r < opts.restarts; ++r) {
        Rng init = root.split(static_cast<std::uint64_t>(r));
        FitParams p = make_fit_params(D, d, K, &init);
        double got = run_fit(first_pass, p, target, opts);
        if (family != FitFamily::Pro) {
            best = std::min(best, got);
        } else if (got < best_late) {
            best_late = got;
            best_late_vals.clear();
            for (const auto& v : family_params(FitFamily::Late, p))
                best_late_vals.push_back(v->val);
        }
    }

    if (family == FitFamily::Pro) {
        best = best_late; // G = 0 realizes every late solution
        for (int r = 0; r < opts.restarts; ++r) {
            Rng init = root.split(1000 + static_cast<std::uint64_t>(r));
            FitParams p = make_fit_params(D, d, K, &init);
            best = std::min(best, run_fit(FitFamily::Pro, p, target, opts));
        }
        // one run seeded from the best late solution with zero backprojection
        FitParams p = make_fit_params(D, d, K, nullptr);
        auto slots = family_params(FitFamily::Late, p);
        for (size_t i = 0; i < slots.size(); ++i) slots[i]->val = best_late_vals[i];
        best = std::min(best, run_fit(FitFamily::Pro, p, target, opts));
    }
    return std::sqrt(best);
}

// ---------- multiplicative analysis ----------

int Monomial::degree_in(int modality) const {
    int n = 0;
    for (const auto& v : vars)
        if (v.first == modality) ++n;
    return n;
}

Monomial Monomial::times(const Monomial& o) const {
    Monomial out;
    out.vars.reserve(vars.size() + o.vars.size());
    std::merge(vars.begin(), vars.end(), o.vars.begin(), o.vars.end(),
               std::back_inserter(out.vars));
    return out;
}

std::string Monomial::str() const {
    if (vars.empty()) return "1";
    std::ostringstream os;
    for (size_t i = 0; i < vars.size(); ++i) {
        if (i) os << "*";
        os << "x" << vars[i].first + 1 << "_" << vars[i].second + 1;
    }
    return os.str();
}

ArchitectureGraph late_graph(int D) {
    ArchitectureGraph g;
    g.D = D;
    g.branches = {{LayerOp::LinearMix, LayerOp::MultPair},
                  {LayerOp::LinearMix, LayerOp::MultPair}};
    g.head = {LayerOp::LinearMix, LayerOp::MultPair};
    return g;
}

ArchitectureGraph early_graph(int D) {
    ArchitectureGraph g;
    g.D = D;
    g.branches = {{}, {}};
    g.head = {LayerOp::LinearMix, LayerOp::MultPair, LayerOp::LinearMix,
              LayerOp::MultPair};
    return g;
}

ArchitectureGraph pro_graph(int D) {
    ArchitectureGraph g = late_graph(D);
    g.inject = true;
    g.unroll = 1;
    return g;
}

namespace {

MonomialSet apply_op(LayerOp op, const MonomialSet& in, int max_degree) {
    if (op == LayerOp::LinearMix) {
        // linear maps only recombine; with bias the constant stays available
        MonomialSet out = in;
        out.insert(Monomial::constant());
        return out;
    }
    MonomialSet out;
    for (auto i = in.begin(); i != in.end(); ++i)
        for (auto j = i; j != in.end(); ++j) {
            Monomial p = i->times(*j);
            if (p.degree() <= max_degree) out.insert(p);
        }
    return out;
}

MonomialSet raw_inputs(int modality, int D) {
    MonomialSet s;
    s.insert(Monomial::constant());
    for (int i = 0; i < D; ++i) s.insert(Monomial::var(modality, i));
    return s;
}

} // namespace

MonomialSet reachable_monomials(const ArchitectureGraph& g, int max_degree) {
    if (g.n_modalities < 1 || g.D < 1)
        throw SpecError("reachable_monomials: need n_modalities, D >= 1");
    if (static_cast<int>(g.branches.size()) != g.n_modalities)
        throw SpecError("reachable_monomials: branch count must match modalities");
    if (g.inject && g.unroll < 1)
        throw SpecError("reachable_monomials: injection cycle needs an unroll bound");
    if (max_degree < 0) throw InputError("reachable_monomials: max_degree < 0");

    auto branch_pass = [&](const MonomialSet& injected) {
        MonomialSet fused;
        for (int m = 0; m < g.n_modalities; ++m) {
            MonomialSet s = raw_inputs(m, g.D);
            s.insert(injected.begin(), injected.end());
            for (LayerOp op : g.branches[static_cast<size_t>(m)])
                s = apply_op(op, s, max_degree);
            fused.insert(s.begin(), s.end());
        }
        return fused;
    };

    MonomialSet fused = branch_pass({});
    if (g.inject)
        for (int u = 0; u < g.unroll; ++u) fused = branch_pass(fused);

    for (LayerOp op : g.head) fused = apply_op(op, fused, max_degree);
    return fused;
}

long long first_layer_feature_count(int n, int D, bool early) {
    if (n < 1 || D < 1) throw InputError("first_layer_feature_count: n, D >= 1");
    auto pairs_with_rep = [](long long m) { return m * (m + 1) / 2; };
    if (early) return pairs_with_rep(static_cast<long long>(n) * D);
    return n * pairs_with_rep(D);
}

std::string expressiveness_report(int max_degree, int D, Rng& rng) {
    std::ostringstream os;
    os << "expressiveness report (two modalities, D=" << D
       << ", max degree " << max_degree << ")\n\n";

    os << "first multiplicative layer output counts\n";
    os << "  early: C(nD+1,2) = " << first_layer_feature_count(2, D, true) << "\n";
    os << "  late:  n*C(D+1,2) = " << first_layer_feature_count(2, D, false) << "\n";
    os << "  note: counting follows the 10-term enumeration for nD=4 (squares\n"
          "  included), which contradicts the bare C(nD,2)=6 formula; the\n"
          "  enumeration is treated as authoritative.\n\n";

    auto late = reachable_monomials(late_graph(D), max_degree);
    auto pro = reachable_monomials(pro_graph(D), max_degree);
    auto early = reachable_monomials(early_graph(D), max_degree);
    auto subset = [](const MonomialSet& a, const MonomialSet& b) {
        return std::includes(b.begin(), b.end(), a.begin(), a.end());
    };
    os << "reachable monomial sets up to degree " << max_degree << "\n";
    os << "  |late| = " << late.size() << ", |pro| = " << pro.size()
       << ", |early| = " << early.size() << "\n";
    os << "  late subset of pro:  " << (subset(late, pro) ? "yes" : "NO") << "\n";
    os << "  pro subset of early: " << (subset(pro, early) ? "yes" : "NO") << "\n";

    Monomial asym = Monomial::var(0, 0)
                        .times(Monomial::var(0, 0))
                        .times(Monomial::var(0, 1))
                        .times(Monomial::var(1, 0));
    os << "  witness " << asym.str() << ": late " << (late.count(asym) ? "yes" : "no")
       << ", pro " << (pro.count(asym) ? "yes" : "no") << ", early "
       << (early.count(asym) ? "yes" : "no") << "\n\n";

    os << "late-fusion degree-4 terms keep even per-modality degrees\n";
    bool all_even = true;
    for (const auto& m : late)
        if (m.degree() == 4 && (m.degree_in(0) % 2 != 0 || m.degree_in(1) % 2 != 0))
            all_even = false;
    os << "  verified: " << (all_even ? "yes" : "NO") << "\n\n";

    os << "linear effective-matrix structure (d=1, D=2, K=2)\n";
    int checked = 200, prop_ok = 0, dense_fail = 0;
    for (int i = 0; i < checked; ++i) {
        auto spec = random_linear_spec(2, 1, 2, rng);
        if (check_column_proportionality(effective_late(spec), 2, 2).ok) ++prop_ok;
        Mat dense(2, 4);
        for (auto& v : dense.a) v = rng.normal();
        if (!check_column_proportionality(dense, 2, 2).ok) ++dense_fail;
    }
    os << "  late effective matrices column-proportional: " << prop_ok << "/" << checked
       << "\n";
    os << "  random dense matrices rejected: " << dense_fail << "/" << checked << "\n";

    Mat target(2, 4);
    target(0, 0) = 1.0;
    target(1, 1) = 1.0;
    FitOptions opts;
    double r_late = fit_residual(FitFamily::Late, target, 2, 1, opts);
    double r_pro = fit_residual(FitFamily::Pro, target, 2, 1, opts);
    double r_early = fit_residual(FitFamily::Early, target, 2, 1, opts);
    os << "  counterexample target residuals: late " << r_late << ", pro " << r_pro
       << ", early " << r_early << "\n";
    return os.str();
}

} // namespace profusion
