#include "taet/optimizer.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace taet {

OptimizerState OptimizerState::for_model(const Model& model, double learning_rate, double momentum,
                                         double weight_decay) {
    OptimizerState s{learning_rate, momentum, weight_decay, zeros_like(model)};
    s.validate();
    return s;
}

void OptimizerState::validate() const {
    if (!(learning_rate > 0)) throw std::invalid_argument("learning rate must be positive");
    if (!(momentum >= 0 && momentum < 1)) throw std::invalid_argument("momentum must lie in [0, 1)");
    if (!(weight_decay >= 0)) throw std::invalid_argument("weight decay must be non-negative");
}

void sgd_update(std::span<double> params, std::span<const double> grads, std::span<double> velocity,
                double learning_rate, double momentum, double weight_decay) {
    if (grads.size() != params.size() || velocity.size() != params.size()) {
        throw std::invalid_argument("sgd update: parameter, gradient and velocity sizes differ");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        velocity[i] = momentum * velocity[i] + grads[i] + weight_decay * params[i];
        params[i] -= learning_rate * velocity[i];
    }
}

void sgd_step(Model& model, const LayerParams& grads, OptimizerState& state) {
    auto& layers = model.mutable_layers();
    if (grads.size() != layers.size() || state.velocity.size() != layers.size()) {
        throw std::invalid_argument("sgd step: gradient/velocity layer count does not match model");
    }
    for (std::size_t k = 0; k < layers.size(); ++k) {
        const Layer& g = grads[k];
        Layer& v = state.velocity[k];
        if (!g.weight.same_shape(layers[k].weight) || !g.bias.same_shape(layers[k].bias) ||
            !v.weight.same_shape(layers[k].weight) || !v.bias.same_shape(layers[k].bias)) {
            throw std::invalid_argument("sgd step: shape mismatch at layer " + std::to_string(k));
        }
    }
    for (std::size_t k = 0; k < layers.size(); ++k) {
        sgd_update(layers[k].weight.data(), grads[k].weight.data(), state.velocity[k].weight.data(),
                   state.learning_rate, state.momentum, state.weight_decay);
        sgd_update(layers[k].bias.data(), grads[k].bias.data(), state.velocity[k].bias.data(),
                   state.learning_rate, state.momentum, state.weight_decay);
    }
}

void LrSchedule::validate() const {
    if (!(base_lr > 0)) throw std::invalid_argument("base learning rate must be positive");
    if (!(decay_factor > 1)) throw std::invalid_argument("lr decay factor must exceed 1");
    for (std::size_t i = 1; i < milestones.size(); ++i) {
        if (milestones[i] <= milestones[i - 1]) {
            throw std::invalid_argument("lr milestones must be strictly increasing");
        }
    }
}

double lr_at_epoch(const LrSchedule& schedule, int epoch) {
    int passed = 0;
    for (int m : schedule.milestones) {
        if (m <= epoch) ++passed;
    }
    return schedule.base_lr / std::pow(schedule.decay_factor, passed);
}

}  // namespace taet
