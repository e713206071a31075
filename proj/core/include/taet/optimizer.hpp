#pragma once

#include <span>
#include <vector>

#include "taet/model.hpp"

namespace taet {

/// SGD with momentum. Weight decay is coupled into the velocity:
///   v <- momentum * v + grad + weight_decay * param
///   param <- param - lr * v
struct OptimizerState {
    double learning_rate = 0.1;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    LayerParams velocity;

    static OptimizerState for_model(const Model& model, double learning_rate, double momentum,
                                    double weight_decay);
    void validate() const;
};

void sgd_update(std::span<double> params, std::span<const double> grads, std::span<double> velocity,
                double learning_rate, double momentum, double weight_decay);

void sgd_step(Model& model, const LayerParams& grads, OptimizerState& state);

/// Step decay: base_lr / decay_factor^(number of milestones <= epoch).
struct LrSchedule {
    double base_lr = 0.1;
    std::vector<int> milestones;
    double decay_factor = 10.0;

    void validate() const;
};

double lr_at_epoch(const LrSchedule& schedule, int epoch);

}  // namespace taet
