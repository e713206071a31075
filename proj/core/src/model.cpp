#include "taet/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace taet {

void ModelSpec::validate() const {
    if (input_dim < 1) throw std::invalid_argument("model input_dim must be at least 1");
    if (num_classes < 2) throw std::invalid_argument("model num_classes must be at least 2");
    for (std::size_t i = 0; i < hidden_dims.size(); ++i) {
        if (hidden_dims[i] == 0) {
            throw std::invalid_argument("model hidden layer " + std::to_string(i) + " has zero width");
        }
    }
}

Model::Model(ModelSpec spec, std::vector<Layer> layers) : spec_(std::move(spec)), layers_(std::move(layers)) {
    spec_.validate();
    if (layers_.size() != spec_.hidden_dims.size() + 1) {
        throw std::invalid_argument("model has " + std::to_string(layers_.size()) + " layers, spec needs " +
                                    std::to_string(spec_.hidden_dims.size() + 1));
    }
    std::size_t in = spec_.input_dim;
    for (std::size_t k = 0; k < layers_.size(); ++k) {
        const std::size_t out = k < spec_.hidden_dims.size() ? spec_.hidden_dims[k] : spec_.num_classes;
        const Layer& l = layers_[k];
        if (l.weight.rank() != 2 || l.weight.rows() != out || l.weight.cols() != in || l.bias.rank() != 1 ||
            l.bias.size() != out) {
            throw std::invalid_argument("layer " + std::to_string(k) + " shapes " + l.weight.shape_string() +
                                        "/" + l.bias.shape_string() + " do not chain to [" +
                                        std::to_string(out) + "x" + std::to_string(in) + "]");
        }
        in = out;
    }
}

std::size_t Model::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
    return n;
}

std::vector<double> Model::flat_parameters() const {
    std::vector<double> out;
    out.reserve(parameter_count());
    for (const auto& l : layers_) {
        out.insert(out.end(), l.weight.values().begin(), l.weight.values().end());
        out.insert(out.end(), l.bias.values().begin(), l.bias.values().end());
    }
    return out;
}

LayerParams zeros_like(const Model& model) {
    LayerParams out;
    out.reserve(model.layers().size());
    for (const auto& l : model.layers()) {
        out.push_back({Tensor(l.weight.shape()), Tensor(l.bias.shape())});
    }
    return out;
}

Model init_model(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    std::mt19937_64 rng(seed);
    std::vector<Layer> layers;
    std::size_t in = spec.input_dim;
    for (std::size_t k = 0; k <= spec.hidden_dims.size(); ++k) {
        const std::size_t out = k < spec.hidden_dims.size() ? spec.hidden_dims[k] : spec.num_classes;
        const double bound = std::sqrt(6.0 / static_cast<double>(in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        Layer l{Tensor::matrix(out, in), Tensor::vector(out)};
        for (double& w : l.weight.data()) w = dist(rng);
        layers.push_back(std::move(l));
        in = out;
    }
    return Model(spec, std::move(layers));
}

namespace {

void check_inputs(const Model& model, const Tensor& inputs) {
    if (inputs.rank() != 2 || inputs.cols() != model.spec().input_dim) {
        throw std::invalid_argument("input shape " + inputs.shape_string() + " does not match model input_dim " +
                                    std::to_string(model.spec().input_dim));
    }
}

Tensor affine(const Layer& layer, const Tensor& x) {
    const std::size_t batch = x.rows();
    const std::size_t out = layer.out_dim();
    const std::size_t in = layer.in_dim();
    Tensor y = Tensor::matrix(batch, out);
    for (std::size_t n = 0; n < batch; ++n) {
        const double* xr = x.row(n).data();
        double* yr = y.row(n).data();
        for (std::size_t o = 0; o < out; ++o) {
            const double* wr = layer.weight.row(o).data();
            double acc = layer.bias[o];
            for (std::size_t i = 0; i < in; ++i) acc += wr[i] * xr[i];
            yr[o] = acc;
        }
    }
    return y;
}

void relu_inplace(Tensor& t) {
    for (double& v : t.data()) v = v > 0.0 ? v : 0.0;
}

void check_finite(const Tensor& t, std::size_t layer) {
    if (!t.all_finite()) {
        throw std::runtime_error("non-finite value in output of layer " + std::to_string(layer));
    }
}

}  // namespace

ForwardTrace forward_traced(const Model& model, const Tensor& inputs) {
    check_inputs(model, inputs);
    ForwardTrace trace;
    const auto& layers = model.layers();
    trace.inputs.reserve(layers.size());
    trace.inputs.push_back(inputs);
    for (std::size_t k = 0; k < layers.size(); ++k) {
        Tensor y = affine(layers[k], trace.inputs.back());
        check_finite(y, k);
        if (k + 1 < layers.size()) {
            relu_inplace(y);
            trace.inputs.push_back(std::move(y));
        } else {
            trace.logits = std::move(y);
        }
    }
    return trace;
}

Tensor forward(const Model& model, const Tensor& inputs) {
    check_inputs(model, inputs);
    const auto& layers = model.layers();
    Tensor x = inputs;
    for (std::size_t k = 0; k < layers.size(); ++k) {
        x = affine(layers[k], x);
        check_finite(x, k);
        if (k + 1 < layers.size()) relu_inplace(x);
    }
    return x;
}

Gradients backward(const Model& model, const ForwardTrace& trace, const Tensor& logit_grad,
                   GradientRequest request) {
    const auto& layers = model.layers();
    if (!logit_grad.same_shape(trace.logits)) {
        throw std::invalid_argument("logit gradient shape " + logit_grad.shape_string() +
                                    " does not match logits " + trace.logits.shape_string());
    }
    Gradients g;
    if (request.params) g.params = zeros_like(model);

    Tensor upstream = logit_grad;
    for (std::size_t k = layers.size(); k-- > 0;) {
        const Layer& layer = layers[k];
        const Tensor& x = trace.inputs[k];
        const std::size_t batch = x.rows();
        const std::size_t out = layer.out_dim();
        const std::size_t in = layer.in_dim();

        if (request.params) {
            Layer& gl = g.params[k];
            for (std::size_t n = 0; n < batch; ++n) {
                const double* dy = upstream.row(n).data();
                const double* xr = x.row(n).data();
                for (std::size_t o = 0; o < out; ++o) {
                    const double d = dy[o];
                    gl.bias[o] += d;
                    if (d == 0.0) continue;
                    double* gw = gl.weight.row(o).data();
                    for (std::size_t i = 0; i < in; ++i) gw[i] += d * xr[i];
                }
            }
        }

        const bool need_downstream = k > 0 || request.inputs;
        if (!need_downstream) break;
        Tensor dx = Tensor::matrix(batch, in);
        for (std::size_t n = 0; n < batch; ++n) {
            const double* dy = upstream.row(n).data();
            double* dxr = dx.row(n).data();
            for (std::size_t o = 0; o < out; ++o) {
                const double d = dy[o];
                if (d == 0.0) continue;
                const double* wr = layer.weight.row(o).data();
                for (std::size_t i = 0; i < in; ++i) dxr[i] += d * wr[i];
            }
        }
        if (k > 0) {
            // x is the ReLU output of layer k-1; its derivative is 1 where x > 0.
            for (std::size_t i = 0; i < dx.size(); ++i) {
                if (!(x[i] > 0.0)) dx[i] = 0.0;
            }
        }
        upstream = std::move(dx);
    }
    if (request.inputs) g.inputs = std::move(upstream);
    return g;
}

LossAndGrads loss_and_grads(const Model& model, const Tensor& inputs, std::span<const Label> labels,
                            const LossSelector& loss, GradientRequest request) {
    ForwardTrace trace = forward_traced(model, inputs);
    LossEvaluation eval = evaluate_loss(loss, trace.logits, labels, true);
    if (!std::isfinite(eval.value)) throw std::runtime_error("non-finite loss value");
    Gradients g = backward(model, trace, eval.logit_grad, request);
    return {eval.value, std::move(g.params), std::move(g.inputs)};
}

std::vector<Label> predicted_classes(const Tensor& logits) {
    std::vector<Label> out(logits.rows());
    for (std::size_t n = 0; n < logits.rows(); ++n) {
        auto z = logits.row(n);
        std::size_t best = 0;
        for (std::size_t i = 1; i < z.size(); ++i) {
            if (z[i] > z[best]) best = i;
        }
        out[n] = static_cast<Label>(best);
    }
    return out;
}

double evaluate_model_loss(const Model& model, const Tensor& inputs, std::span<const Label> labels,
                           const LossSelector& loss) {
    return evaluate_loss(loss, forward(model, inputs), labels, false).value;
}

}  // namespace taet
