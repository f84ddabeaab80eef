#pragma once

#include "profusion/rng.hpp"
#include "profusion/tensor.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace profusion {

// Activation applied between encoder layers. "linear" means none.
enum class Act { Relu, LeakyRelu, Tanh, Sin, Linear };
Act act_from_name(const std::string& name);
std::string act_name(Act a);
Var apply_act(Act a, const Var& x);

struct EncoderSpec {
    int input_dim = 0;
    std::vector<int> hidden; // at least one layer; last entry is the output dim d_i
    std::string activation = "relu";
};

enum class FusionKind { Concat, Sum };

struct FusionSpec {
    FusionKind kind = FusionKind::Concat;
};

struct PredictorSpec {
    std::vector<int> hidden; // may be empty: a single linear output layer
    int output_dim = 0;      // classes or regression targets
};

enum class Injection { Additive, ConcatInput };

struct ProFusionConfig {
    int R = 2;               // unroll count, >= 1
    int context_dim = 0;     // 0 means "same as the fused dimension"
    Injection injection = Injection::Additive;
    bool backprojection_bias = false;
    // Fresh backprojection weights start at a fraction of the usual scale so
    // the unrolled model begins close to the base model.
    double w_init_scale = 0.1;
    // concat-input only: width of the injected block per modality.
    // 0 means "same as that modality's input dimension".
    int concat_width = 0;
};

struct IterativeVariantConfig {
    int R = 2;
    double w_init_scale = 0.1;
};

// One dense layer. Bias may be absent (backprojection maps).
struct Layer {
    Var W; // in x out
    Var b; // 1 x out, null when bias-free
};

Layer make_layer(int in, int out, Rng& rng, bool bias = true, double scale = 1.0);
Var apply_layer(const Layer& l, const Var& x);

// A stack of Layers with an activation after each layer. Predictors keep
// their final layer linear so it emits raw logits or regression values.
struct Encoder {
    std::vector<Layer> layers;
    Act act = Act::Relu;
    bool final_linear = false;
    Var forward(const Var& x) const;
};

// Shared G/F/P decomposition. An "early" model concatenates the raw modality
// inputs and runs them through a single trunk encoder; otherwise each modality
// gets its own encoder and the fusion layer combines their outputs.
class BaseModel {
  public:
    std::vector<Encoder> encoders;
    FusionSpec fusion;
    Encoder predictor; // hidden layers relu, final layer linear
    std::vector<int> input_dims;
    bool early = false;

    // Encoder outputs for each modality (after raw concat for early models).
    std::vector<Var> encode(const std::vector<Var>& xs) const;
    Var fuse(const std::vector<Var>& reps) const;
    Var forward(const std::vector<Var>& xs) const;

    int fused_dim() const;
    std::vector<Var> params() const;
    std::vector<std::pair<std::string, Var>> named_params() const;
};

BaseModel build_base(const std::vector<EncoderSpec>& encoders, FusionSpec fusion,
                     const PredictorSpec& predictor, Rng& rng);
BaseModel build_early(int total_input_dim, const std::vector<int>& hidden,
                      const PredictorSpec& predictor, Rng& rng);

// Everything the unrolled forward pass produced: the prediction, the context
// vector after each step, and each modality's representation at each step.
struct ForwardTrace {
    Var pred;
    std::vector<Var> contexts;            // size R
    std::vector<std::vector<Var>> reps;   // [step][modality]
};

// Base model plus backprojection maps W_i and context projector E, applied as
// an unrolled recurrence with weights shared across steps.
class ProFusionModel {
  public:
    BaseModel base;
    ProFusionConfig cfg;
    std::vector<Layer> back; // W_i, one per modality
    Layer ctx_proj;          // E; null W means identity
    int context_dim = 0;

    ForwardTrace trace(const std::vector<Var>& xs, int R_override = 0) const;
    Var forward(const std::vector<Var>& xs) const;
    std::vector<Var> params() const;
    std::vector<std::pair<std::string, Var>> named_params() const;
};

ProFusionModel augment(const BaseModel& base, const ProFusionConfig& cfg, Rng& rng);

// Ablation variant: each modality's encoder output feeds back into its own
// input only, so no cross-modal information flows before the final fusion.
class IterativeModel {
  public:
    BaseModel base;
    IterativeVariantConfig cfg;
    std::vector<Layer> self_back;

    // Final per-modality representations after R self-feedback steps.
    std::vector<Var> representations(const std::vector<Var>& xs) const;
    Var forward(const std::vector<Var>& xs) const;
    std::vector<Var> params() const;
    std::vector<std::pair<std::string, Var>> named_params() const;
};

IterativeModel build_iterative_variant(const BaseModel& base, const IterativeVariantConfig& cfg,
                                       Rng& rng);

// Detached per-modality representations at unroll step t (1-based).
std::vector<Mat> unimodal_representations(const ProFusionModel& model,
                                          const std::vector<Mat>& xs, int t);

// Bit-exact text round trip of named parameters.
void save_params(const std::vector<std::pair<std::string, Var>>& params, std::ostream& out);
void load_params(const std::vector<std::pair<std::string, Var>>& params, std::istream& in);
void save_params_file(const std::vector<std::pair<std::string, Var>>& params,
                      const std::string& path);
void load_params_file(const std::vector<std::pair<std::string, Var>>& params,
                      const std::string& path);

// Number of scalar parameters in a list.
std::int64_t param_count(const std::vector<Var>& params);

} // namespace profusion
