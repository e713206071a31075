#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "taet/data.hpp"
#include "taet/losses.hpp"
#include "taet/model.hpp"

namespace taet::testing {

inline Tensor random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double lo = 0.0,
                            double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t = Tensor::matrix(rows, cols);
    for (double& v : t.data()) v = u(rng);
    return t;
}

inline std::vector<Label> random_labels(std::size_t n, std::size_t classes, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> u(0, static_cast<int>(classes) - 1);
    std::vector<Label> y(n);
    for (auto& v : y) v = u(rng);
    return y;
}

/// Random MLP with non-zero biases so ReLU kinks are not aligned with x = 0.
inline Model random_model(const ModelSpec& spec, std::mt19937_64& rng) {
    Model m = init_model(spec, rng());
    std::normal_distribution<double> n(0.0, 0.3);
    for (auto& layer : m.mutable_layers()) {
        for (double& b : layer.bias.data()) b = n(rng);
    }
    return m;
}

inline double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    return std::abs(analytic - numeric) / denom;
}

/// ReLU on/off pattern of every hidden unit.
inline std::vector<bool> activation_pattern(const Model& model, const Tensor& x) {
    const auto trace = forward_traced(model, x);
    std::vector<bool> pattern;
    for (std::size_t k = 1; k < trace.inputs.size(); ++k) {
        for (double v : trace.inputs[k].data()) pattern.push_back(v > 0);
    }
    return pattern;
}

struct GradCheck {
    std::vector<double> errors;
    std::size_t skipped_kinks = 0;
};

/// Central differences of the forward-only loss against loss_and_grads, for
/// every parameter and input coordinate. Coordinates whose +-h perturbation
/// flips a ReLU are skipped: the loss is not differentiable across the kink.
inline void gradient_check(const Model& model, const Tensor& x, std::span<const Label> y,
                           const LossSelector& loss, GradCheck& out, double h = 1e-5) {
    const auto analytic = loss_and_grads(model, x, y, loss);
    const auto base_pattern = activation_pattern(model, x);

    Model probe = model;
    for (std::size_t l = 0; l < model.layers().size(); ++l) {
        for (int which = 0; which < 2; ++which) {
            auto& param = which == 0 ? probe.mutable_layers()[l].weight : probe.mutable_layers()[l].bias;
            const auto& grad = which == 0 ? analytic.param_grads[l].weight : analytic.param_grads[l].bias;
            for (std::size_t i = 0; i < param.size(); ++i) {
                const double orig = param[i];
                param[i] = orig + h;
                const bool kink_hi = activation_pattern(probe, x) != base_pattern;
                const double up = evaluate_model_loss(probe, x, y, loss);
                param[i] = orig - h;
                const bool kink_lo = activation_pattern(probe, x) != base_pattern;
                const double down = evaluate_model_loss(probe, x, y, loss);
                param[i] = orig;
                if (kink_hi || kink_lo) {
                    ++out.skipped_kinks;
                    continue;
                }
                out.errors.push_back(relative_error(grad[i], (up - down) / (2 * h)));
            }
        }
    }
    Tensor xp = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        xp[i] = x[i] + h;
        const bool kink_hi = activation_pattern(model, xp) != base_pattern;
        const double up = evaluate_model_loss(model, xp, y, loss);
        xp[i] = x[i] - h;
        const bool kink_lo = activation_pattern(model, xp) != base_pattern;
        const double down = evaluate_model_loss(model, xp, y, loss);
        xp[i] = x[i];
        if (kink_hi || kink_lo) {
            ++out.skipped_kinks;
            continue;
        }
        out.errors.push_back(relative_error(analytic.input_grads[i], (up - down) / (2 * h)));
    }
}

/// Brute-force per-class recall straight from label/prediction pairs.
inline std::vector<double> recall_loop(std::span<const Label> truth, std::span<const Label> pred,
                                       std::size_t classes) {
    std::vector<double> hit(classes, 0.0);
    std::vector<double> total(classes, 0.0);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        total[truth[i]] += 1;
        if (pred[i] == truth[i]) hit[truth[i]] += 1;
    }
    std::vector<double> recall;
    for (std::size_t c = 0; c < classes; ++c) {
        if (total[c] > 0) recall.push_back(hit[c] / total[c]);
    }
    return recall;
}

inline double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

}  // namespace taet::testing
