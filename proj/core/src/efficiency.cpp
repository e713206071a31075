#include "taet/efficiency.hpp"

#include <algorithm>
#include <chrono>
#include <stdexcept>

#include "json.hpp"

namespace taet {

TimeModel TimeModel::from_costs(int n_ce, int n_at, int kappa, const PhaseCosts& costs) {
    const double fb = costs.forward + costs.backward;
    const double fb_adv = costs.forward + costs.backward_adv;
    if (!(fb > 0)) throw std::invalid_argument("phase costs must be positive");
    TimeModel tm{n_ce, n_at, n_ce + n_at, kappa, fb / (fb + kappa * fb_adv), fb_adv / fb};
    tm.validate();
    return tm;
}

TimeModel TimeModel::from_ratios(int n_ce, int n_at, int kappa, double rho, double gamma_time) {
    TimeModel tm{n_ce, n_at, n_ce + n_at, kappa, rho, gamma_time};
    tm.validate();
    return tm;
}

void TimeModel::validate() const {
    if (n_ce < 0 || n_at < 0 || kappa < 0) throw std::invalid_argument("time model counts must be non-negative");
    if (n_ce + n_at != n_total) throw std::invalid_argument("time model requires N_CE + N_AT == N_total");
    if (n_total <= 0) throw std::invalid_argument("time model needs N_total > 0");
    if (!(rho > 0 && rho <= 1)) throw std::invalid_argument("rho must lie in (0, 1]");
    if (!(gamma_time > 0)) throw std::invalid_argument("gamma_time must be positive");
}

double predict_eta(const TimeModel& tm) {
    tm.validate();
    const double expansion = 1.0 + tm.kappa * tm.gamma_time;
    return (tm.n_ce * tm.rho + tm.n_at * expansion) / (tm.n_total * expansion);
}

double predict_eta_consistent(const TimeModel& tm) {
    tm.validate();
    return (tm.n_ce * tm.rho + tm.n_at) / tm.n_total;
}

double predicted_step_seconds(const PhaseCosts& costs, int kappa, Stage stage) {
    const double base = costs.forward + costs.backward;
    if (stage == Stage::ce) return base;
    return base + kappa * (costs.forward + costs.backward_adv);
}

std::optional<double> measured_ratio_from_epochs(std::span<const EpochRecord> records) {
    double ce = 0.0;
    double adv = 0.0;
    int n_ce = 0;
    int n_adv = 0;
    for (const auto& r : records) {
        if (r.stage == Stage::ce) {
            ce += r.seconds;
            ++n_ce;
        } else {
            adv += r.seconds;
            ++n_adv;
        }
    }
    if (n_adv == 0 || adv <= 0) return std::nullopt;
    const double mean_adv = adv / n_adv;
    return (ce + adv) / ((n_ce + n_adv) * mean_adv);
}

std::uint64_t MemoryModel::m_delta() const { return b * c * h * w * d; }

std::uint64_t MemoryModel::peak() const { return m_model + m_data + m_grad + (delta ? m_delta() : 0); }

double predict_memory_saving(const MemoryModel& mm, double ce_fraction) {
    if (!(ce_fraction >= 0 && ce_fraction <= 1)) throw std::invalid_argument("ce_fraction must lie in [0, 1]");
    return ce_fraction * static_cast<double>(mm.m_delta());
}

std::int64_t memory_difference(const MemoryModel& mm, Stage stage) {
    return stage == Stage::ce ? -static_cast<std::int64_t>(mm.m_delta()) : 0;
}

namespace {

using Clock = std::chrono::steady_clock;

double timer_tick() {
    double tick = 1.0;
    for (int i = 0; i < 50; ++i) {
        const auto a = Clock::now();
        auto b = Clock::now();
        while (b == a) b = Clock::now();
        tick = std::min(tick, std::chrono::duration<double>(b - a).count());
    }
    return tick;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

template <typename F>
double time_reps(int reps, F&& f) {
    const auto t0 = Clock::now();
    for (int r = 0; r < reps; ++r) f();
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

CostMeasurement measure_phase_costs(const Model& model, const Dataset& data, const AttackConfig& attack,
                                    int probe_batches, std::size_t batch_size) {
    if (probe_batches < 3) throw std::invalid_argument("measure_phase_costs needs at least 3 probe batches");
    attack.validate();
    const double tick = timer_tick();
    const auto all = batch_indices(data.size(), batch_size, 0, 0);
    const LossSelector ce = loss::CrossEntropy{};

    CostMeasurement m;
    m.probes = probe_batches;
    int reps = 1;
    for (int attempt = 0; attempt < 12; ++attempt) {
        std::vector<double> f_t, b_t, badv_t;
        double shortest = 1e300;
        for (int p = 0; p < probe_batches; ++p) {
            const Batch batch = gather(data, all[static_cast<std::size_t>(p) % all.size()]);
            Model scratch = model;
            auto opt = OptimizerState::for_model(scratch, 1e-12, 0.0, 0.0);

            ForwardTrace trace;
            LossEvaluation eval;
            const double tf = time_reps(reps, [&] {
                trace = forward_traced(scratch, batch.inputs);
                eval = evaluate_loss(ce, trace.logits, batch.labels);
            });
            const double tb = time_reps(reps, [&] {
                Gradients g = backward(scratch, trace, eval.logit_grad, {.params = true, .inputs = false});
                sgd_step(scratch, g.params, opt);
            });
            Tensor adv = batch.inputs;
            const double tbadv = time_reps(reps, [&] {
                Gradients g = backward(scratch, trace, eval.logit_grad, {.params = false, .inputs = true});
                for (std::size_t i = 0; i < adv.size(); ++i) {
                    const double s = g.inputs[i] > 0 ? 1.0 : (g.inputs[i] < 0 ? -1.0 : 0.0);
                    const auto bb = ball_bounds(batch.inputs[i], attack.epsilon);
                    adv[i] = std::clamp(adv[i] + attack.step_size * s, bb.lo, bb.hi);
                }
            });
            shortest = std::min({shortest, tf, tb, tbadv});
            f_t.push_back(tf / reps);
            b_t.push_back(tb / reps);
            badv_t.push_back(tbadv / reps);
        }
        m.costs = {median(f_t), median(b_t), median(badv_t)};
        m.repetitions = reps;
        if (shortest >= 10 * tick) return m;
        m.warnings.push_back("phase time " + std::to_string(shortest) + " s is under 10 timer ticks at " +
                             std::to_string(reps) + " repetitions; doubling");
        reps *= 2;
    }
    return m;
}

std::string efficiency_to_json(const EfficiencyReport& r) {
    nlohmann::ordered_json j;
    const auto& tm = r.time_model;
    j["time_model"] = {{"n_ce", tm.n_ce},
                       {"n_at", tm.n_at},
                       {"n_total", tm.n_total},
                       {"kappa", tm.kappa},
                       {"rho", tm.rho},
                       {"gamma_time", tm.gamma_time}};
    if (r.measurement) {
        j["measured_costs"] = {{"forward_s", r.measurement->costs.forward},
                               {"backward_s", r.measurement->costs.backward},
                               {"backward_adv_s", r.measurement->costs.backward_adv},
                               {"probes", r.measurement->probes},
                               {"repetitions", r.measurement->repetitions},
                               {"warnings", r.measurement->warnings}};
    }
    j["predicted_eta"] = r.eta;
    j["predicted_eta_consistent"] = r.eta_consistent;
    if (r.measured_ratio) {
        j["measured_ratio"] = *r.measured_ratio;
    } else {
        j["measured_ratio"] = nullptr;
    }
    j["memory"] = {{"b", r.memory.b},
                   {"c", r.memory.c},
                   {"h", r.memory.h},
                   {"w", r.memory.w},
                   {"d", r.memory.d},
                   {"m_delta_bytes", r.memory.m_delta()},
                   {"m_delta_mib", static_cast<double>(r.memory.m_delta()) / (1024.0 * 1024.0)},
                   {"ce_fraction", r.ce_fraction},
                   {"xi_bytes", r.xi_bytes},
                   {"xi_mib", r.xi_bytes / (1024.0 * 1024.0)},
                   {"published_m_delta_mb_cifar", kPublishedMDeltaMB},
                   {"published_xi_mb_cifar", kPublishedXiMB},
                   {"note",
                    "published MB figures do not equal b*c*h*w*d bytes; formula values are authoritative here"}};
    return j.dump(2) + "\n";
}

}  // namespace taet
