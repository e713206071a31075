#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "taet/losses.hpp"
#include "taet/tensor.hpp"

namespace taet {

enum class Activation { relu };

struct ModelSpec {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden_dims;
    std::size_t num_classes = 0;
    Activation activation = Activation::relu;

    void validate() const;
    friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Affine layer y = W x + b with W stored as [out x in].
struct Layer {
    Tensor weight;
    Tensor bias;

    std::size_t in_dim() const { return weight.cols(); }
    std::size_t out_dim() const { return weight.rows(); }
    friend bool operator==(const Layer&, const Layer&) = default;
};

/// One tensor pair per layer, mirroring Model::layers(). Used for gradients
/// and optimizer velocity.
using LayerParams = std::vector<Layer>;

class Model {
public:
    Model(ModelSpec spec, std::vector<Layer> layers);

    const ModelSpec& spec() const { return spec_; }
    const std::vector<Layer>& layers() const { return layers_; }
    std::vector<Layer>& mutable_layers() { return layers_; }
    std::size_t parameter_count() const;

    /// Weights then bias for each layer, in layer order.
    std::vector<double> flat_parameters() const;

    friend bool operator==(const Model&, const Model&) = default;

private:
    ModelSpec spec_;
    std::vector<Layer> layers_;
};

/// Zero-filled tensors with the model's parameter shapes.
LayerParams zeros_like(const Model& model);

/// Weights ~ U(-sqrt(6/fan_in), sqrt(6/fan_in)), biases zero. The generator is
/// std::mt19937_64 seeded from `seed`.
Model init_model(const ModelSpec& spec, std::uint64_t seed);

/// Layer inputs retained by the forward pass for reverse-mode differentiation.
/// inputs[k] is the input to layer k; ReLU masks are recovered from them.
struct ForwardTrace {
    std::vector<Tensor> inputs;
    Tensor logits;
};

Tensor forward(const Model& model, const Tensor& inputs);
ForwardTrace forward_traced(const Model& model, const Tensor& inputs);

struct GradientRequest {
    bool params = true;
    bool inputs = true;
};

struct Gradients {
    LayerParams params;  // empty unless requested
    Tensor inputs;       // empty unless requested
};

/// Back-propagates an upstream logit gradient through the traced network.
Gradients backward(const Model& model, const ForwardTrace& trace, const Tensor& logit_grad,
                   GradientRequest request = {});

struct LossAndGrads {
    double loss = 0.0;
    LayerParams param_grads;
    Tensor input_grads;
};

LossAndGrads loss_and_grads(const Model& model, const Tensor& inputs, std::span<const Label> labels,
                            const LossSelector& loss, GradientRequest request = {});

/// Row-wise argmax; ties resolve to the lowest class index.
std::vector<Label> predicted_classes(const Tensor& logits);

/// Forward-only loss, independent of the backward path.
double evaluate_model_loss(const Model& model, const Tensor& inputs, std::span<const Label> labels,
                           const LossSelector& loss);

}  // namespace taet
