#pragma once

#include "profusion/rng.hpp"
#include "profusion/tensor.hpp"

#include <set>
#include <string>
#include <utility>
#include <vector>

namespace profusion {

// ---------- linear analysis ----------

// Block description of a two-modality linear fusion network: first-layer
// blocks W (per modality, plus cross blocks for early fusion), backprojection
// blocks G (pro only), and output blocks F.
struct LinearFusionSpec {
    int D = 2; // per-modality input dim
    int d = 1; // per-modality bottleneck dim
    int K = 2; // output dim, even
    Mat F11, F12, F21, F22; // (K/2) x d
    Mat W11, W12, W21, W22; // d x D
    Mat G11, G12, G21, G22; // d x d
};

LinearFusionSpec random_linear_spec(int D, int d, int K, Rng& rng);

// Single matrix equivalent of the whole network, K x 2D.
Mat effective_early(const LinearFusionSpec& spec);
Mat effective_late(const LinearFusionSpec& spec);
Mat effective_pro(const LinearFusionSpec& spec);

struct ColumnPropResult {
    bool ok = false;
    double max_dev = 0.0;
};

// d=1 structure test: within each modality's block of D columns, all columns
// must be pairwise parallel (every 2x2 minor vanishes).
ColumnPropResult check_column_proportionality(const Mat& m, int D, int K,
                                              double tol = 1e-9);

enum class FitFamily { Early, Late, Pro };

struct FitOptions {
    int restarts = 20;
    int steps = 2000;
    double lr = 0.01;
    std::uint64_t seed = 0;
};

// Best Frobenius residual found when fitting the family's effective matrix to
// the target by gradient descent with random restarts. An upper bound on the
// true distance, not a certificate.
double fit_residual(FitFamily family, const Mat& target, int D, int d,
                    const FitOptions& opts = FitOptions{});

// ---------- multiplicative analysis ----------

// Product of input variables; each variable is (modality, component), kept
// sorted with repetition. Empty = the constant feature.
struct Monomial {
    std::vector<std::pair<int, int>> vars;

    static Monomial constant() { return {}; }
    static Monomial var(int modality, int comp) { return {{{modality, comp}}}; }

    int degree() const { return static_cast<int>(vars.size()); }
    int degree_in(int modality) const;
    Monomial times(const Monomial& o) const;
    std::string str() const;

    bool operator<(const Monomial& o) const { return vars < o.vars; }
    bool operator==(const Monomial& o) const { return vars == o.vars; }
};

using MonomialSet = std::set<Monomial>;

enum class LayerOp { LinearMix, MultPair };

// Branch/head layer layout for reachability analysis under full-width
// semantics. When inject is set, the concatenated post-branch feature set is
// fed back into every branch's inputs and the branches re-run, unroll times.
struct ArchitectureGraph {
    int n_modalities = 2;
    int D = 2;
    std::vector<std::vector<LayerOp>> branches;
    std::vector<LayerOp> head;
    bool inject = false;
    int unroll = 0;
};

ArchitectureGraph late_graph(int D);
ArchitectureGraph early_graph(int D);
ArchitectureGraph pro_graph(int D); // concat-injection, one unroll

// Every monomial of degree <= max_degree that some parameter assignment can
// realize as a feature of the graph's final layer.
MonomialSet reachable_monomials(const ArchitectureGraph& g, int max_degree);

// First multiplicative layer output counts: pairwise products with
// repetition, so early = C(nD+1,2) and late = n*C(D+1,2).
long long first_layer_feature_count(int n, int D, bool early);

// Plain-text report covering counts, inclusion checks, and witnesses.
std::string expressiveness_report(int max_degree, int D, Rng& rng);

} // namespace profusion
