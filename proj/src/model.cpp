#include "profusion/model.hpp"

#include "profusion/errors.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace profusion {

Act act_from_name(const std::string& name) {
    if (name == "relu") return Act::Relu;
    if (name == "leaky_relu") return Act::LeakyRelu;
    if (name == "tanh") return Act::Tanh;
    if (name == "sin") return Act::Sin;
    if (name == "linear" || name == "identity") return Act::Linear;
    throw InputError("unknown activation '" + name + "'");
}

std::string act_name(Act a) {
    switch (a) {
        case Act::Relu: return "relu";
        case Act::LeakyRelu: return "leaky_relu";
        case Act::Tanh: return "tanh";
        case Act::Sin: return "sin";
        case Act::Linear: return "linear";
    }
    return "?";
}

Var apply_act(Act a, const Var& x) {
    switch (a) {
        case Act::Relu: return relu(x);
        case Act::LeakyRelu: return leaky_relu(x);
        case Act::Tanh: return tanh(x);
        case Act::Sin: return sin(x);
        case Act::Linear: return x;
    }
    return x;
}

Layer make_layer(int in, int out, Rng& rng, bool bias, double scale) {
    if (in < 1 || out < 1)
        throw SpecError("layer dims must be positive, got " + std::to_string(in) + "x" +
                        std::to_string(out));
    // Uniform fan-in scaling on both weights and bias.
    const double bound = scale / std::sqrt(static_cast<double>(in));
    Mat w(in, out);
    for (double& v : w.a) v = rng.uniform(-bound, bound);
    Layer l;
    l.W = make_param(std::move(w));
    if (bias) {
        Mat b(1, out);
        for (double& v : b.a) v = rng.uniform(-bound, bound);
        l.b = make_param(std::move(b));
    }
    return l;
}

Var apply_layer(const Layer& l, const Var& x) {
    Var y = matmul(x, l.W);
    return l.b ? add_rowvec(y, l.b) : y;
}

Var Encoder::forward(const Var& x) const {
    Var h = x;
    for (size_t i = 0; i < layers.size(); ++i) {
        h = apply_layer(layers[i], h);
        const bool last = i + 1 == layers.size();
        if (!(last && final_linear)) h = apply_act(act, h);
    }
    return h;
}

namespace {

Encoder build_encoder(const EncoderSpec& spec, Rng& rng, bool final_linear = false) {
    if (spec.hidden.empty()) throw SpecError("encoder needs at least one layer");
    for (int w : spec.hidden)
        if (w < 1) throw SpecError("encoder widths must be >= 1");
    if (spec.input_dim < 1) throw SpecError("encoder input dim must be >= 1");
    Encoder e;
    e.act = act_from_name(spec.activation);
    e.final_linear = final_linear;
    int in = spec.input_dim;
    for (int w : spec.hidden) {
        e.layers.push_back(make_layer(in, w, rng));
        in = w;
    }
    return e;
}

Encoder build_predictor(int fused_dim, const PredictorSpec& spec, Rng& rng) {
    if (spec.output_dim < 1) throw SpecError("predictor output dim must be >= 1");
    EncoderSpec es;
    es.input_dim = fused_dim;
    es.hidden = spec.hidden;
    es.hidden.push_back(spec.output_dim);
    es.activation = "relu";
    return build_encoder(es, rng, /*final_linear=*/true);
}

} // namespace

std::vector<Var> BaseModel::encode(const std::vector<Var>& xs) const {
    if (early) {
        if (xs.empty()) throw InputError("forward: no modality inputs");
        Var x = xs.size() == 1 ? xs[0] : concat(xs, 1);
        return {encoders[0].forward(x)};
    }
    if (xs.size() != encoders.size())
        throw InputError("forward: expected " + std::to_string(encoders.size()) +
                         " modalities, got " + std::to_string(xs.size()));
    std::vector<Var> reps;
    reps.reserve(xs.size());
    for (size_t i = 0; i < xs.size(); ++i) reps.push_back(encoders[i].forward(xs[i]));
    return reps;
}

Var BaseModel::fuse(const std::vector<Var>& reps) const {
    if (reps.size() == 1) return reps[0];
    if (fusion.kind == FusionKind::Concat) return concat(reps, 1);
    Var s = add(reps[0], reps[1]);
    for (size_t i = 2; i < reps.size(); ++i) s = add(s, reps[i]);
    return s;
}

Var BaseModel::forward(const std::vector<Var>& xs) const {
    return predictor.forward(fuse(encode(xs)));
}

int BaseModel::fused_dim() const {
    if (fusion.kind == FusionKind::Sum) return encoders[0].layers.back().W->val.cols;
    int d = 0;
    for (const auto& e : encoders) d += e.layers.back().W->val.cols;
    return d;
}

std::vector<Var> BaseModel::params() const {
    std::vector<Var> out;
    for (const auto& [name, p] : named_params()) out.push_back(p);
    return out;
}

std::vector<std::pair<std::string, Var>> BaseModel::named_params() const {
    std::vector<std::pair<std::string, Var>> out;
    for (size_t i = 0; i < encoders.size(); ++i) {
        for (size_t l = 0; l < encoders[i].layers.size(); ++l) {
            const Layer& lay = encoders[i].layers[l];
            std::string base = "enc" + std::to_string(i) + ".l" + std::to_string(l);
            out.emplace_back(base + ".W", lay.W);
            if (lay.b) out.emplace_back(base + ".b", lay.b);
        }
    }
    for (size_t l = 0; l < predictor.layers.size(); ++l) {
        const Layer& lay = predictor.layers[l];
        std::string base = "pred.l" + std::to_string(l);
        out.emplace_back(base + ".W", lay.W);
        if (lay.b) out.emplace_back(base + ".b", lay.b);
    }
    return out;
}

BaseModel build_base(const std::vector<EncoderSpec>& encoders, FusionSpec fusion,
                     const PredictorSpec& predictor, Rng& rng) {
    if (encoders.empty()) throw SpecError("build_base: need at least one encoder");
    BaseModel m;
    m.fusion = fusion;
    for (const auto& spec : encoders) {
        m.encoders.push_back(build_encoder(spec, rng));
        m.input_dims.push_back(spec.input_dim);
    }
    if (fusion.kind == FusionKind::Sum) {
        const int d0 = encoders[0].hidden.back();
        for (const auto& spec : encoders)
            if (spec.hidden.back() != d0)
                throw SpecError("sum fusion requires equal encoder output dims");
    }
    m.predictor = build_predictor(m.fused_dim(), predictor, rng);
    return m;
}

BaseModel build_early(int total_input_dim, const std::vector<int>& hidden,
                      const PredictorSpec& predictor, Rng& rng) {
    EncoderSpec trunk;
    trunk.input_dim = total_input_dim;
    trunk.hidden = hidden;
    BaseModel m = build_base({trunk}, FusionSpec{}, predictor, rng);
    m.early = true;
    m.input_dims.clear(); // raw inputs are concatenated, any split is fine
    return m;
}

ForwardTrace ProFusionModel::trace(const std::vector<Var>& xs, int R_override) const {
    const int R = R_override > 0 ? R_override : cfg.R;
    const int batch = xs.at(0)->val.rows;
    ForwardTrace tr;
    Var c = make_const(Mat(batch, context_dim)); // c_0 = 0
    for (int t = 0; t < R; ++t) {
        std::vector<Var> zs;
        zs.reserve(xs.size());
        for (size_t i = 0; i < xs.size(); ++i) {
            Var w = apply_layer(back[i], c);
            if (cfg.injection == Injection::Additive)
                zs.push_back(add(xs[i], w));
            else
                zs.push_back(concat({xs[i], w}, 1));
        }
        std::vector<Var> reps = base.encode(zs);
        Var fused = base.fuse(reps);
        c = ctx_proj.W ? apply_layer(ctx_proj, fused) : fused;
        tr.reps.push_back(std::move(reps));
        tr.contexts.push_back(c);
    }
    tr.pred = base.predictor.forward(c);
    return tr;
}

Var ProFusionModel::forward(const std::vector<Var>& xs) const { return trace(xs).pred; }

std::vector<Var> ProFusionModel::params() const {
    std::vector<Var> out;
    for (const auto& [name, p] : named_params()) out.push_back(p);
    return out;
}

std::vector<std::pair<std::string, Var>> ProFusionModel::named_params() const {
    auto out = base.named_params();
    for (size_t i = 0; i < back.size(); ++i) {
        out.emplace_back("back" + std::to_string(i) + ".W", back[i].W);
        if (back[i].b) out.emplace_back("back" + std::to_string(i) + ".b", back[i].b);
    }
    if (ctx_proj.W) out.emplace_back("ctx.W", ctx_proj.W);
    return out;
}

ProFusionModel augment(const BaseModel& base, const ProFusionConfig& cfg, Rng& rng) {
    if (cfg.R < 1) throw SpecError("augment: R must be >= 1");
    if (base.early) throw SpecError("augment: early-fusion models have no unimodal encoders");
    ProFusionModel m;
    m.cfg = cfg;
    m.context_dim = cfg.context_dim > 0 ? cfg.context_dim : base.fused_dim();

    // Rebuild the encoders so concat-input mode can widen the first layer;
    // additive mode shares the base parameters untouched.
    m.base = base;
    if (cfg.injection == Injection::Additive) {
        for (size_t i = 0; i < base.encoders.size(); ++i)
            m.back.push_back(make_layer(m.context_dim, base.input_dims[i], rng,
                                        cfg.backprojection_bias, cfg.w_init_scale));
    } else {
        for (size_t i = 0; i < base.encoders.size(); ++i) {
            const int inj = cfg.concat_width > 0 ? cfg.concat_width : base.input_dims[i];
            m.back.push_back(
                make_layer(m.context_dim, inj, rng, cfg.backprojection_bias, cfg.w_init_scale));
            // New first-layer rows for the injected block, appended below the
            // original input rows so c = 0 reproduces the base computation.
            Encoder& enc = m.base.encoders[i];
            const Layer& l0 = enc.layers[0];
            const int in0 = l0.W->val.rows, out0 = l0.W->val.cols;
            Layer widened = make_layer(in0 + inj, out0, rng);
            for (int r = 0; r < in0; ++r)
                for (int c = 0; c < out0; ++c) widened.W->val(r, c) = l0.W->val(r, c);
            if (l0.b) widened.b->val = l0.b->val;
            enc.layers[0] = widened;
        }
    }
    if (m.context_dim != base.fused_dim()) {
        m.ctx_proj = make_layer(base.fused_dim(), m.context_dim, rng, false);
        // The predictor consumes c_R, so its first layer is resized.
        PredictorSpec ps;
        const auto& pl = base.predictor.layers;
        for (size_t l = 0; l + 1 < pl.size(); ++l) ps.hidden.push_back(pl[l].W->val.cols);
        ps.output_dim = pl.back().W->val.cols;
        m.base.predictor = build_predictor(m.context_dim, ps, rng);
    }
    return m;
}

std::vector<Var> IterativeModel::representations(const std::vector<Var>& xs) const {
    const int batch = xs.at(0)->val.rows;
    std::vector<Var> reps(xs.size());
    for (size_t i = 0; i < xs.size(); ++i) {
        // Own-output feedback only: c_i starts at zero.
        Var ci = make_const(Mat(batch, self_back[i].W->val.rows));
        for (int t = 0; t < cfg.R; ++t) {
            Var z = add(xs[i], apply_layer(self_back[i], ci));
            reps[i] = base.encoders[i].forward(z);
            ci = reps[i];
        }
    }
    return reps;
}

Var IterativeModel::forward(const std::vector<Var>& xs) const {
    return base.predictor.forward(base.fuse(representations(xs)));
}

std::vector<Var> IterativeModel::params() const {
    std::vector<Var> out;
    for (const auto& [name, p] : named_params()) out.push_back(p);
    return out;
}

std::vector<std::pair<std::string, Var>> IterativeModel::named_params() const {
    auto out = base.named_params();
    for (size_t i = 0; i < self_back.size(); ++i)
        out.emplace_back("self" + std::to_string(i) + ".W", self_back[i].W);
    return out;
}

IterativeModel build_iterative_variant(const BaseModel& base, const IterativeVariantConfig& cfg,
                                       Rng& rng) {
    if (cfg.R < 1) throw SpecError("iterative variant: R must be >= 1");
    if (base.early) throw SpecError("iterative variant needs unimodal encoders");
    IterativeModel m;
    m.base = base;
    m.cfg = cfg;
    for (size_t i = 0; i < base.encoders.size(); ++i) {
        const int di = base.encoders[i].layers.back().W->val.cols;
        m.self_back.push_back(
            make_layer(di, base.input_dims[i], rng, false, cfg.w_init_scale));
    }
    return m;
}

std::vector<Mat> unimodal_representations(const ProFusionModel& model,
                                          const std::vector<Mat>& xs, int t) {
    if (t < 1 || t > model.cfg.R)
        throw InputError("unimodal_representations: step " + std::to_string(t) +
                         " outside [1," + std::to_string(model.cfg.R) + "]");
    std::vector<Var> vars;
    vars.reserve(xs.size());
    for (const auto& x : xs) vars.push_back(make_const(x));
    ForwardTrace tr = model.trace(vars);
    std::vector<Mat> out;
    for (const auto& rep : tr.reps[t - 1]) out.push_back(rep->val);
    return out;
}

void save_params(const std::vector<std::pair<std::string, Var>>& params, std::ostream& out) {
    out << "profusion-params 1\n" << params.size() << "\n";
    char buf[64];
    for (const auto& [name, p] : params) {
        out << name << " " << p->val.rows << " " << p->val.cols << "\n";
        for (size_t i = 0; i < p->val.size(); ++i) {
            // Hexfloat text keeps the round trip bit-exact.
            std::snprintf(buf, sizeof buf, "%a", p->val.a[i]);
            out << buf << (i + 1 == p->val.size() ? "\n" : " ");
        }
    }
}

void load_params(const std::vector<std::pair<std::string, Var>>& params, std::istream& in) {
    std::string magic;
    int version = 0;
    in >> magic >> version;
    if (magic != "profusion-params" || version != 1)
        throw InputError("param file: bad header '" + magic + "'");
    size_t count = 0;
    in >> count;
    if (count != params.size())
        throw InputError("param file: has " + std::to_string(count) + " arrays, model expects " +
                         std::to_string(params.size()));
    for (const auto& [name, p] : params) {
        std::string got;
        int rows = 0, cols = 0;
        in >> got >> rows >> cols;
        if (got != name)
            throw InputError("param file: expected array '" + name + "', found '" + got + "'");
        if (rows != p->val.rows || cols != p->val.cols)
            throw InputError("param file: shape mismatch for '" + name + "'");
        for (size_t i = 0; i < p->val.size(); ++i) {
            std::string tok;
            in >> tok;
            p->val.a[i] = std::strtod(tok.c_str(), nullptr);
        }
    }
    if (!in) throw InputError("param file: truncated");
}

void save_params_file(const std::vector<std::pair<std::string, Var>>& params,
                      const std::string& path) {
    std::ofstream f(path);
    if (!f) throw InputError("cannot open '" + path + "' for writing");
    save_params(params, f);
}

void load_params_file(const std::vector<std::pair<std::string, Var>>& params,
                      const std::string& path) {
    std::ifstream f(path);
    if (!f) throw InputError("cannot open '" + path + "'");
    load_params(params, f);
}

std::int64_t param_count(const std::vector<Var>& params) {
    std::int64_t n = 0;
    for (const auto& p : params) n += static_cast<std::int64_t>(p->val.size());
    return n;
}

} // namespace profusion
