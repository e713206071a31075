#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "taet/losses.hpp"
#include "taet/model.hpp"
#include "taet/tensor.hpp"

namespace taet {

/// L-infinity PGD settings. `step_size` is the per-iteration signed-gradient
/// step; `init_scale` the standard deviation of the Gaussian start.
struct AttackConfig {
    double epsilon = 8.0 / 255.0;
    double step_size = 2.0 / 255.0;
    int num_steps = 10;
    bool random_init = true;
    double init_scale = 0.001;
    double clip_min = 0.0;
    double clip_max = 1.0;
    LossSelector loss = loss::CrossEntropy{};

    void validate() const;
    /// True when step_size > 2 * epsilon with epsilon > 0.
    bool oversized_step() const;
};

struct FgsmConfig {
    double epsilon = 8.0 / 255.0;
    double clip_min = 0.0;
    double clip_max = 1.0;
};

/// Untargeted Carlini-Wagner L2 against the true class.
struct CwConfig {
    double c = 1.0;
    double kappa = 0.0;
    int num_iters = 100;
    double step_size = 0.01;
    double clip_min = 0.0;
    double clip_max = 1.0;

    void validate() const;
};

/// Bounds of the L-infinity ball around x0 as representable doubles such that
/// |v - x0| <= epsilon holds in floating point for every v in [lo, hi].
struct BallBounds {
    double lo;
    double hi;
};
BallBounds ball_bounds(double x0, double epsilon);

Tensor fgsm(const Model& model, const Tensor& x, std::span<const Label> labels, const FgsmConfig& cfg);

/// Random-start PGD. Noise for row n is drawn from a stream keyed by
/// (seed, sample_ids[n]), or by (seed, n) when sample_ids is empty, so a
/// sample's adversarial example does not depend on how it was batched.
Tensor pgd(const Model& model, const Tensor& x, std::span<const Label> labels, const AttackConfig& cfg,
           std::uint64_t seed, std::span<const std::size_t> sample_ids = {});

struct CwResult {
    Tensor adversarial;
    std::vector<bool> success;
};

/// Proximal gradient descent on ||delta||_2 + c * max(Z_y - max_{i!=y} Z_i, -kappa):
/// a gradient step on the margin term followed by the L2 shrinkage step, with
/// iterates projected into the box. Returns the lowest-objective misclassifying
/// iterate per sample, or the final iterate when none misclassifies.
CwResult cw_l2(const Model& model, const Tensor& x, std::span<const Label> labels, const CwConfig& cfg);

using AttackParams = std::variant<FgsmConfig, AttackConfig, CwConfig>;

struct AttackSpec {
    std::string name;
    AttackParams params;
    std::uint64_t seed = 0;
};

Tensor run_attack(const Model& model, const Tensor& x, std::span<const Label> labels, const AttackSpec& spec,
                  std::span<const std::size_t> sample_ids = {});

struct AttackRecord {
    std::size_t sample_id;
    Label true_label;
    Label clean_prediction;
    Label adversarial_prediction;
    double linf;
    double l2;
};

std::vector<AttackRecord> attack_records(const Model& model, const Tensor& clean, const Tensor& adversarial,
                                         std::span<const Label> labels, std::span<const std::size_t> sample_ids);

/// CSV with header sample_id,true_label,clean_pred,adv_pred,linf,l2.
void write_attack_csv(const std::filesystem::path& path, std::span<const AttackRecord> records);

}  // namespace taet
