#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "metamask/autograd.hpp"
#include "metamask/tensor.hpp"

namespace metamask::nn {

/// Layer widths of a fully connected network, input first. ReLU between
/// layers, nothing after the last.
struct MlpSpec {
    std::vector<std::size_t> widths;

    std::size_t in() const { return widths.front(); }
    std::size_t out() const { return widths.back(); }
    void validate() const;
    bool operator==(const MlpSpec&) const = default;
};

struct DenseLayer {
    Tensor weight;  // in x out
    Tensor bias;    // out
};

struct MlpParams {
    MlpSpec spec;
    std::vector<DenseLayer> layers;

    /// Parameter tensors in a fixed order: w0, b0, w1, b1, ...
    std::vector<const Tensor*> tensors() const;
    std::vector<Tensor*> tensors();
    /// Same structure, every entry zero.
    MlpParams zeros_like() const;
};

/// Encoder f, contrastive head g_cl and redundancy head g_drr.
struct ModelSpec {
    MlpSpec encoder;
    MlpSpec head_cl;
    MlpSpec head_drr;

    std::size_t representation_dim() const { return encoder.out(); }
    void validate() const;
};

/// Default-shaped model: d_in -> encoder_hidden... -> rep_dim for the
/// encoder, rep_dim -> head_hidden... -> head_out for both heads.
ModelSpec make_model_spec(std::size_t d_in, const std::vector<std::size_t>& encoder_hidden,
                          std::size_t rep_dim, const std::vector<std::size_t>& head_hidden,
                          std::size_t head_out);

/// The four learnable groups. `mask` is the per-dimension weight vector
/// applied to the representation by Hadamard product.
struct ModelParams {
    MlpParams encoder;
    MlpParams head_cl;
    MlpParams head_drr;
    Tensor mask;

    ModelSpec spec() const { return {encoder.spec, head_cl.spec, head_drr.spec}; }
    void validate() const;
};

/// Weights uniform in +-1/sqrt(fan_in), biases zero, mask all ones.
/// Deterministic in `seed`.
ModelParams init_params(const ModelSpec& spec, std::uint64_t seed);
MlpParams init_mlp(const MlpSpec& spec, std::uint64_t seed);

/// An MLP whose parameters live on a graph.
struct BoundMlp {
    MlpSpec spec;
    std::vector<autograd::Var> weights;
    std::vector<autograd::Var> biases;

    std::vector<autograd::Var> vars() const;
    /// Rebuilds from the layout returned by vars().
    static BoundMlp from_vars(const MlpSpec& spec, const std::vector<autograd::Var>& vars);
    MlpParams values() const;
};

BoundMlp bind(autograd::Graph& graph, const MlpParams& params, bool requires_grad);

autograd::Var mlp_forward(const BoundMlp& mlp, const autograd::Var& x);
autograd::Var encoder_forward(const BoundMlp& theta, const autograd::Var& x);
autograd::Var head_forward(const BoundMlp& vartheta, const autograd::Var& h_tilde);

/// h~[i, k] = h[i, k] * mask[k].
autograd::Var apply_mask(const autograd::Var& h, const autograd::Var& mask);

/// Graph-free forward pass; same arithmetic as mlp_forward.
Tensor mlp_forward(const MlpParams& mlp, const Tensor& x);
Tensor apply_mask(const Tensor& h, const Tensor& mask);

/// Directory of MMT1 files plus manifest.json listing each tensor and the
/// layer widths.
void save_params(const std::filesystem::path& dir, const ModelParams& params);
ModelParams load_params(const std::filesystem::path& dir);

}  // namespace metamask::nn
