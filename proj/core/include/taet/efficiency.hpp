#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "taet/attacks.hpp"
#include "taet/data.hpp"
#include "taet/model.hpp"
#include "taet/trainer.hpp"

namespace taet {

/// Mean seconds per batch for each training phase.
struct PhaseCosts {
    double forward = 0.0;       // forward pass + loss
    double backward = 0.0;      // parameter backward + optimizer step
    double backward_adv = 0.0;  // input-only backward + PGD update
};

/// Epoch-count and per-phase cost model of a TAET run against plain AT.
struct TimeModel {
    int n_ce = 0;
    int n_at = 0;
    int n_total = 0;
    int kappa = 0;  // attack steps
    double rho = 1.0;
    double gamma_time = 1.0;

    /// rho = (F+B) / (F+B + kappa*(F+B_adv)), gamma_time = (F+B_adv)/(F+B).
    static TimeModel from_costs(int n_ce, int n_at, int kappa, const PhaseCosts& costs);
    static TimeModel from_ratios(int n_ce, int n_at, int kappa, double rho, double gamma_time);
    void validate() const;
};

/// eta = (N_CE*rho + N_AT*(1 + kappa*gamma)) / (N_total*(1 + kappa*gamma)),
/// the published acceleration formula taken literally. Its CE term counts a CE
/// epoch as rho/(1+kappa*gamma) AT epochs; when rho = 1/(1+kappa*gamma) it is
/// below predict_eta_consistent by N_CE*rho*(1-rho)/N_total.
double predict_eta(const TimeModel& tm);

/// Unit-consistent variant: a CE epoch costs rho AT epochs, so
/// eta = (N_CE*rho + N_AT) / N_total. Lies in (rho, 1) when 0 < N_CE < N_total.
double predict_eta_consistent(const TimeModel& tm);

/// Predicted seconds per batch for a CE-stage or adversarial-stage step.
double predicted_step_seconds(const PhaseCosts& costs, int kappa, Stage stage);

/// TAET/AT wall-clock ratio implied by measured epoch times of a single run:
/// (N_CE*mean_ce + N_AT*mean_adv) / (N_total*mean_adv).
std::optional<double> measured_ratio_from_epochs(std::span<const EpochRecord> records);

struct MemoryModel {
    std::uint64_t m_model = 0;
    std::uint64_t m_data = 0;
    std::uint64_t m_grad = 0;
    std::uint64_t b = 128;
    std::uint64_t c = 3;
    std::uint64_t h = 32;
    std::uint64_t w = 32;
    std::uint64_t d = 4;
    bool delta = true;

    /// b*c*h*w*d bytes.
    std::uint64_t m_delta() const;
    std::uint64_t peak() const;
};

/// xi = ce_fraction * M_delta bytes.
double predict_memory_saving(const MemoryModel& mm, double ce_fraction);
/// TAET minus AT memory: -M_delta in the CE stage, 0 in the adversarial stage.
std::int64_t memory_difference(const MemoryModel& mm, Stage stage);

/// Figures printed for the CIFAR setting (b=128, c=3, h=w=32, d=4). They do not
/// follow from b*c*h*w*d bytes (1,572,864 B) under any standard unit; reports
/// show them next to the formula values.
inline constexpr double kPublishedMDeltaMB = 1629.42;
inline constexpr double kPublishedXiMB = 651.77;

struct CostMeasurement {
    PhaseCosts costs;
    int probes = 0;
    int repetitions = 0;
    std::vector<std::string> warnings;
};

/// Median-of-probes timings of the three phases on `probe_batches` batches.
/// Each probe repeats the phase until it spans at least 10 timer ticks;
/// otherwise a warning is recorded and repetitions are doubled.
CostMeasurement measure_phase_costs(const Model& model, const Dataset& data, const AttackConfig& attack,
                                    int probe_batches, std::size_t batch_size = 128);

struct EfficiencyReport {
    TimeModel time_model;
    std::optional<CostMeasurement> measurement;
    double eta = 0.0;
    double eta_consistent = 0.0;
    std::optional<double> measured_ratio;
    MemoryModel memory;
    double ce_fraction = 0.0;
    double xi_bytes = 0.0;
};

std::string efficiency_to_json(const EfficiencyReport& r);

}  // namespace taet
