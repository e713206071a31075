#include "taet/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace taet {

namespace {

void check_batch(const Tensor& logits, std::span<const Label> labels) {
    if (logits.rank() != 2) throw std::invalid_argument("logits must be a batch x classes matrix");
    if (logits.rows() != labels.size()) {
        throw std::invalid_argument("label count " + std::to_string(labels.size()) +
                                    " does not match batch size " + std::to_string(logits.rows()));
    }
    const auto classes = static_cast<Label>(logits.cols());
    for (std::size_t n = 0; n < labels.size(); ++n) {
        if (labels[n] < 0 || labels[n] >= classes) {
            throw std::invalid_argument("label " + std::to_string(labels[n]) + " at position " +
                                        std::to_string(n) + " is outside [0, " +
                                        std::to_string(classes) + ")");
        }
    }
}

double log_sum_exp(std::span<const double> z) {
    const double m = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z) s += std::exp(v - m);
    return m + std::log(s);
}

// Writes softmax(z) - onehot(y), scaled, into out.
void softmax_minus_onehot(std::span<const double> z, Label y, double scale, std::span<double> out) {
    const double lse = log_sum_exp(z);
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = std::exp(z[i] - lse) * scale;
    out[static_cast<std::size_t>(y)] -= scale;
}

Tensor shifted_logits(const Tensor& logits, const BslConfig& cfg) {
    cfg.validate(logits.cols());
    const std::vector<double> shift = cfg.logit_shift();
    Tensor out = logits;
    for (std::size_t n = 0; n < out.rows(); ++n) {
        auto r = out.row(n);
        for (std::size_t i = 0; i < r.size(); ++i) r[i] += shift[i];
    }
    return out;
}

// Mean of present entries computed as an offset from the first present value, so
// a set of identical values has a mean identical to them.
double present_mean(const ClassLossVector& v) {
    const std::size_t s = v.present_count();
    double ref = 0.0;
    bool have_ref = false;
    double acc = 0.0;
    for (std::size_t c = 0; c < v.num_classes(); ++c) {
        if (!v.present[c]) continue;
        if (!have_ref) {
            ref = v.per_class_loss[c];
            have_ref = true;
        }
        acc += v.per_class_loss[c] - ref;
    }
    return ref + acc / static_cast<double>(s);
}

void check_vector(const ClassLossVector& v) {
    if (v.present.size() != v.per_class_loss.size()) {
        throw std::invalid_argument("class loss vector mask length mismatch");
    }
    if (v.present_count() == 0) throw std::invalid_argument("class loss vector has no present class");
}

}  // namespace

std::size_t ClassLossVector::present_count() const {
    return static_cast<std::size_t>(std::count(present.begin(), present.end(), true));
}

void HelWeights::validate() const {
    if (weight_bcl < 0 || weight_hdl < 0 || weight_rcel < 0) {
        throw std::invalid_argument("HEL weights must be non-negative");
    }
    if (weight_bcl == 0 && weight_hdl == 0 && weight_rcel == 0) {
        throw std::invalid_argument("at least one HEL weight must be positive");
    }
}

void BslConfig::validate(std::size_t num_classes) const {
    if (class_counts.size() != num_classes) {
        throw std::invalid_argument("balanced softmax needs " + std::to_string(num_classes) +
                                    " class counts, got " + std::to_string(class_counts.size()));
    }
    for (std::size_t c = 0; c < class_counts.size(); ++c) {
        if (class_counts[c] == 0) {
            throw std::invalid_argument("balanced softmax class count for class " + std::to_string(c) +
                                        " is zero");
        }
    }
}

std::vector<double> BslConfig::logit_shift() const {
    std::vector<double> shift(class_counts.size());
    for (std::size_t c = 0; c < class_counts.size(); ++c) {
        shift[c] = tau_b * std::log(static_cast<double>(class_counts[c]));
    }
    return shift;
}

std::vector<double> per_sample_cross_entropy(const Tensor& logits, std::span<const Label> labels) {
    check_batch(logits, labels);
    std::vector<double> out(labels.size());
    for (std::size_t n = 0; n < labels.size(); ++n) {
        auto z = logits.row(n);
        out[n] = log_sum_exp(z) - z[static_cast<std::size_t>(labels[n])];
    }
    return out;
}

double cross_entropy(const Tensor& logits, std::span<const Label> labels) {
    if (labels.empty()) throw std::invalid_argument("cross entropy of an empty batch");
    const auto losses = per_sample_cross_entropy(logits, labels);
    double s = 0.0;
    for (double l : losses) s += l;
    return s / static_cast<double>(losses.size());
}

double balanced_softmax_loss(const Tensor& logits, std::span<const Label> labels, const BslConfig& cfg) {
    return cross_entropy(shifted_logits(logits, cfg), labels);
}

ClassLossVector class_losses(std::span<const double> per_sample_loss, std::span<const Label> labels,
                             std::size_t num_classes) {
    if (per_sample_loss.size() != labels.size()) {
        throw std::invalid_argument("per-sample loss and label counts differ");
    }
    ClassLossVector v;
    v.per_class_loss.assign(num_classes, 0.0);
    v.present.assign(num_classes, false);
    v.sample_counts.assign(num_classes, 0);
    for (std::size_t n = 0; n < labels.size(); ++n) {
        const Label y = labels[n];
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
            throw std::invalid_argument("label " + std::to_string(y) + " out of range");
        }
        v.per_class_loss[static_cast<std::size_t>(y)] += per_sample_loss[n];
        v.sample_counts[static_cast<std::size_t>(y)] += 1;
    }
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (v.sample_counts[c] > 0) {
            v.present[c] = true;
            v.per_class_loss[c] /= static_cast<double>(v.sample_counts[c]);
        }
    }
    return v;
}

double bcl(const ClassLossVector& v) {
    check_vector(v);
    return present_mean(v);
}

double hdl(const ClassLossVector& v) {
    check_vector(v);
    const double mean = present_mean(v);
    double acc = 0.0;
    for (std::size_t c = 0; c < v.num_classes(); ++c) {
        if (!v.present[c]) continue;
        const double d = v.per_class_loss[c] - mean;
        acc += d * d;
    }
    return acc / static_cast<double>(v.present_count());
}

double rcel(const ClassLossVector& v) {
    check_vector(v);
    // Shares are invariant to a common scale; dividing by the smallest positive
    // loss keeps equal and integer-ratio inputs exact.
    double smallest = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < v.num_classes(); ++c) {
        if (v.present[c] && v.per_class_loss[c] > 0) smallest = std::min(smallest, v.per_class_loss[c]);
    }
    if (!std::isfinite(smallest)) return 0.0;
    double total = 0.0;
    double squares = 0.0;
    for (std::size_t c = 0; c < v.num_classes(); ++c) {
        if (!v.present[c]) continue;
        const double r = v.per_class_loss[c] / smallest;
        total += r;
        squares += r * r;
    }
    return squares / (total * total);
}

double hel(const ClassLossVector& v, const HelWeights& w) {
    w.validate();
    return w.weight_bcl * bcl(v) + w.weight_hdl * hdl(v) + w.weight_rcel * rcel(v);
}

std::vector<double> hel_class_gradient(const ClassLossVector& v, const HelWeights& w) {
    check_vector(v);
    w.validate();
    const double s = static_cast<double>(v.present_count());
    const double mean = present_mean(v);
    double total = 0.0;
    for (std::size_t c = 0; c < v.num_classes(); ++c) {
        if (v.present[c]) total += v.per_class_loss[c];
    }
    const double r = rcel(v);
    std::vector<double> g(v.num_classes(), 0.0);
    for (std::size_t c = 0; c < v.num_classes(); ++c) {
        if (!v.present[c]) continue;
        const double lc = v.per_class_loss[c];
        double d = w.weight_bcl / s;
        // The mean's own dependence on L_c cancels because deviations sum to zero.
        d += w.weight_hdl * 2.0 * (lc - mean) / s;
        if (total > 0) d += w.weight_rcel * (2.0 / total) * (lc / total - r);
        g[c] = d;
    }
    return g;
}

LossEvaluation evaluate_loss(const LossSelector& selector, const Tensor& logits,
                             std::span<const Label> labels, bool with_grad) {
    check_batch(logits, labels);
    if (labels.empty()) throw std::invalid_argument("loss of an empty batch");
    const std::size_t batch = labels.size();
    const double inv_batch = 1.0 / static_cast<double>(batch);

    LossEvaluation out;
    if (with_grad) out.logit_grad = Tensor::matrix(batch, logits.cols());

    if (std::holds_alternative<loss::Hierarchical>(selector)) {
        const auto& weights = std::get<loss::Hierarchical>(selector).weights;
        const auto per_sample = per_sample_cross_entropy(logits, labels);
        const auto v = class_losses(per_sample, labels, logits.cols());
        out.value = hel(v, weights);
        if (with_grad) {
            const auto g = hel_class_gradient(v, weights);
            for (std::size_t n = 0; n < batch; ++n) {
                const auto y = static_cast<std::size_t>(labels[n]);
                const double scale = g[y] / static_cast<double>(v.sample_counts[y]);
                softmax_minus_onehot(logits.row(n), labels[n], scale, out.logit_grad.row(n));
            }
        }
        return out;
    }

    const Tensor* z = &logits;
    Tensor shifted;
    if (const auto* bsl = std::get_if<loss::BalancedSoftmax>(&selector)) {
        shifted = shifted_logits(logits, bsl->config);
        z = &shifted;
    }
    out.value = cross_entropy(*z, labels);
    if (with_grad) {
        for (std::size_t n = 0; n < batch; ++n) {
            softmax_minus_onehot(z->row(n), labels[n], inv_batch, out.logit_grad.row(n));
        }
    }
    return out;
}

}  // namespace taet
