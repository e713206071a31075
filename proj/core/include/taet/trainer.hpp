#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "taet/attacks.hpp"
#include "taet/data.hpp"
#include "taet/losses.hpp"
#include "taet/model.hpp"
#include "taet/optimizer.hpp"

namespace taet {

enum class Method { taet, at, at_bsl, harl_only };
enum class Stage { ce, adv };

std::string to_string(Method m);
std::string to_string(Stage s);
Method parse_method(const std::string& s);

struct TrainConfig {
    Method method = Method::taet;
    int total_epochs = 100;
    /// Clean cross-entropy epochs before the adversarial stage. Only TAET
    /// uses it; the other methods train adversarially from epoch 0.
    int ce_epochs = 40;
    AttackConfig attack;
    HelWeights hel_weights;
    double tau_b = 1.0;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    LrSchedule lr_schedule{0.1, {75, 90}, 10.0};
    std::size_t batch_size = 128;
    std::uint64_t seed = 0;
    /// Held-out samples used for the per-epoch clean/robust probe (0 = skip).
    std::size_t probe_size = 256;
    int probe_steps = 5;

    void validate() const;
    int effective_ce_epochs() const;
    Stage stage_of(int epoch) const;
};

struct EpochRecord {
    int epoch = 0;
    Stage stage = Stage::ce;
    double loss = 0.0;
    double clean_ba = 0.0;
    double robust_ba = 0.0;
    double lr = 0.0;
    /// Wall-clock of the optimisation work only; the probe is not timed.
    double seconds = 0.0;
};

struct TrainState {
    Model model;
    OptimizerState optimizer;
    int next_epoch = 0;
};

TrainState make_train_state(Model model, const TrainConfig& cfg);

/// Runs epochs [state.next_epoch, stop_epoch) (stop_epoch defaults to
/// cfg.total_epochs) and advances the state. Every random draw is keyed by
/// (cfg.seed, epoch, batch), so a run split across calls (or across a
/// checkpoint) is bit-identical to an uninterrupted one.
std::vector<EpochRecord> train(TrainState& state, const Dataset& train_data, const Dataset* probe_data,
                               const TrainConfig& cfg, std::optional<int> stop_epoch = std::nullopt);

struct TrainResult {
    Model model;
    std::vector<EpochRecord> records;
};

TrainResult train_taet(Model model, const Dataset& data, const TrainConfig& cfg, const Dataset* probe = nullptr);
TrainResult train_at(Model model, const Dataset& data, const TrainConfig& cfg, const Dataset* probe = nullptr);
/// BSL counts are taken from data.class_counts() with cfg.tau_b.
TrainResult train_at_bsl(Model model, const Dataset& data, const TrainConfig& cfg, const Dataset* probe = nullptr);

/// Loss selector used for the outer update of an adversarial-stage batch.
LossSelector outer_loss(const TrainConfig& cfg, const Dataset& train_data);

/// Header: epoch,stage,loss,clean_ba,robust_ba,lr,seconds
void write_epoch_csv(const std::filesystem::path& path, std::span<const EpochRecord> records);
std::vector<EpochRecord> read_epoch_csv(const std::filesystem::path& path);

// Binary checkpoint, little-endian:
//   "TAETCKPT" | u32 version | u32 activation | u64 input_dim | u64 num_classes
//   | u64 hidden_count | u64 hidden_dims[hidden_count] | i64 next_epoch
//   | f64 lr, momentum, weight_decay | u64 param_count
//   | f64 params[param_count] | f64 velocity[param_count] | sha256(previous bytes)
// File size = 112 + 8 * hidden_count + 16 * param_count bytes.
inline constexpr std::uint32_t kCheckpointVersion = 1;
std::size_t checkpoint_size(const ModelSpec& spec, std::size_t param_count);
void save_checkpoint(const std::filesystem::path& path, const TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& path);

}  // namespace taet
