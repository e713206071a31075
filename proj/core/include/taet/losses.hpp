#pragma once

#include <cstddef>
#include <span>
#include <variant>
#include <vector>

#include "taet/tensor.hpp"

namespace taet {

using Label = int;

/// Per-class mean losses over a batch. Classes that do not occur in the batch
/// are masked out and excluded from every aggregate below.
struct ClassLossVector {
    std::vector<double> per_class_loss;
    std::vector<bool> present;
    std::vector<std::size_t> sample_counts;

    std::size_t num_classes() const { return per_class_loss.size(); }
    std::size_t present_count() const;
};

struct HelWeights {
    double weight_bcl = 0.1;
    double weight_hdl = 0.1;
    double weight_rcel = 0.1;

    void validate() const;
};

/// Balanced softmax: logits are shifted by tau_b * log(n_y) before the
/// softmax cross-entropy.
struct BslConfig {
    std::vector<std::size_t> class_counts;
    double tau_b = 1.0;

    void validate(std::size_t num_classes) const;
    std::vector<double> logit_shift() const;
};

namespace loss {
struct CrossEntropy {};
struct BalancedSoftmax {
    BslConfig config;
};
struct Hierarchical {
    HelWeights weights;
};
}  // namespace loss

using LossSelector = std::variant<loss::CrossEntropy, loss::BalancedSoftmax, loss::Hierarchical>;

/// Scalar batch loss plus its gradient with respect to the logits.
struct LossEvaluation {
    double value = 0.0;
    Tensor logit_grad;
};

// Each softmax-bearing loss uses log-sum-exp stabilisation.
std::vector<double> per_sample_cross_entropy(const Tensor& logits, std::span<const Label> labels);
double cross_entropy(const Tensor& logits, std::span<const Label> labels);
double balanced_softmax_loss(const Tensor& logits, std::span<const Label> labels, const BslConfig& cfg);

ClassLossVector class_losses(std::span<const double> per_sample_loss, std::span<const Label> labels,
                             std::size_t num_classes);

double bcl(const ClassLossVector& v);
double hdl(const ClassLossVector& v);
/// Defined as 0 when every present class loss is zero.
double rcel(const ClassLossVector& v);
double hel(const ClassLossVector& v, const HelWeights& w);

/// d hel / d L_c for each class; zero for absent classes.
std::vector<double> hel_class_gradient(const ClassLossVector& v, const HelWeights& w);

/// Evaluates the selected loss on a batch of logits. When `with_grad` is false
/// the returned logit_grad is empty.
LossEvaluation evaluate_loss(const LossSelector& selector, const Tensor& logits,
                             std::span<const Label> labels, bool with_grad = true);

}  // namespace taet
