#include "taet/trainer.hpp"

#include <chrono>
#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "taet/metrics.hpp"
#include "taet/rng.hpp"

namespace taet {

std::string to_string(Method m) {
    switch (m) {
        case Method::taet: return "taet";
        case Method::at: return "at";
        case Method::at_bsl: return "at_bsl";
        case Method::harl_only: return "harl_only";
    }
    return "?";
}

std::string to_string(Stage s) { return s == Stage::ce ? "CE" : "ADV"; }

Method parse_method(const std::string& s) {
    if (s == "taet") return Method::taet;
    if (s == "at") return Method::at;
    if (s == "at_bsl") return Method::at_bsl;
    if (s == "harl_only") return Method::harl_only;
    throw std::invalid_argument("unknown training method '" + s + "' (taet, at, at_bsl, harl_only)");
}

void TrainConfig::validate() const {
    if (total_epochs < 1) throw std::invalid_argument("total_epochs must be at least 1");
    if (ce_epochs < 0 || ce_epochs > total_epochs) {
        throw std::invalid_argument("ce_epochs must lie in [0, total_epochs]");
    }
    if (method == Method::taet && ce_epochs < 1) {
        throw std::invalid_argument("TAET needs ce_epochs >= 1 (use harl_only for a single-stage run)");
    }
    if (batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
    if (probe_size > 0 && probe_steps < 1) throw std::invalid_argument("probe_steps must be at least 1");
    attack.validate();
    if (method == Method::taet || method == Method::harl_only) hel_weights.validate();
    lr_schedule.validate();
    if (!(momentum >= 0 && momentum < 1)) throw std::invalid_argument("momentum must lie in [0, 1)");
    if (!(weight_decay >= 0)) throw std::invalid_argument("weight_decay must be non-negative");
}

int TrainConfig::effective_ce_epochs() const { return method == Method::taet ? ce_epochs : 0; }

Stage TrainConfig::stage_of(int epoch) const { return epoch < effective_ce_epochs() ? Stage::ce : Stage::adv; }

TrainState make_train_state(Model model, const TrainConfig& cfg) {
    auto opt = OptimizerState::for_model(model, cfg.lr_schedule.base_lr, cfg.momentum, cfg.weight_decay);
    return {std::move(model), std::move(opt), 0};
}

LossSelector outer_loss(const TrainConfig& cfg, const Dataset& train_data) {
    switch (cfg.method) {
        case Method::taet:
        case Method::harl_only:
            return loss::Hierarchical{cfg.hel_weights};
        case Method::at:
            return loss::CrossEntropy{};
        case Method::at_bsl:
            return loss::BalancedSoftmax{BslConfig{train_data.class_counts(), cfg.tau_b}};
    }
    throw std::invalid_argument("unknown method");
}

namespace {

std::uint64_t epoch_attack_seed(std::uint64_t seed, int epoch) {
    auto rng = make_rng({seed, kAttackStream, static_cast<std::uint64_t>(epoch)});
    return rng();
}

Dataset probe_subset(const Dataset& probe, std::size_t size) {
    if (probe.size() <= size) return probe;
    std::vector<std::size_t> idx(size);
    for (std::size_t i = 0; i < size; ++i) idx[i] = i * probe.size() / size;
    return probe.subset(idx, 1.0);
}

}  // namespace

std::vector<EpochRecord> train(TrainState& state, const Dataset& train_data, const Dataset* probe_data,
                               const TrainConfig& cfg, std::optional<int> stop_epoch) {
    cfg.validate();
    const ModelSpec& spec = state.model.spec();
    if (train_data.num_classes() != spec.num_classes || train_data.feature_dim() != spec.input_dim) {
        throw std::invalid_argument("training data shape does not match the model");
    }
    const int stop = stop_epoch.value_or(cfg.total_epochs);
    if (stop > cfg.total_epochs) throw std::invalid_argument("stop epoch beyond total_epochs");

    const LossSelector outer = outer_loss(cfg, train_data);
    const LossSelector clean_ce = loss::CrossEntropy{};

    std::optional<Dataset> probe;
    AttackSpec probe_attack;
    if (probe_data && cfg.probe_size > 0) {
        probe = probe_subset(*probe_data, cfg.probe_size);
        AttackConfig pc = cfg.attack;
        pc.num_steps = cfg.probe_steps;
        pc.loss = loss::CrossEntropy{};
        probe_attack = {"probe", pc, make_rng({cfg.seed, kProbeStream})()};
    }

    std::vector<EpochRecord> records;
    for (int epoch = state.next_epoch; epoch < stop; ++epoch) {
        EpochRecord rec;
        rec.epoch = epoch;
        rec.stage = cfg.stage_of(epoch);
        rec.lr = lr_at_epoch(cfg.lr_schedule, epoch);
        state.optimizer.learning_rate = rec.lr;
        const std::uint64_t attack_seed = epoch_attack_seed(cfg.seed, epoch);

        const auto t0 = std::chrono::steady_clock::now();
        double loss_sum = 0.0;
        std::size_t count = 0;
        for (const auto& idx : batch_indices(train_data.size(), cfg.batch_size, cfg.seed,
                                             static_cast<std::uint64_t>(epoch))) {
            const Batch b = gather(train_data, idx);
            LossAndGrads lg;
            if (rec.stage == Stage::ce) {
                lg = loss_and_grads(state.model, b.inputs, b.labels, clean_ce, {.params = true, .inputs = false});
            } else {
                const Tensor adv = pgd(state.model, b.inputs, b.labels, cfg.attack, attack_seed, b.indices);
                lg = loss_and_grads(state.model, adv, b.labels, outer, {.params = true, .inputs = false});
            }
            sgd_step(state.model, lg.param_grads, state.optimizer);
            loss_sum += lg.loss;
            ++count;
        }
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        rec.loss = loss_sum / static_cast<double>(count);

        if (probe) {
            rec.clean_ba = balanced_accuracy(confusion(state.model, *probe));
            rec.robust_ba = balanced_robustness(state.model, *probe, probe_attack);
        }
        records.push_back(rec);
        state.next_epoch = epoch + 1;
    }
    return records;
}

namespace {

TrainResult run_method(Model model, const Dataset& data, const TrainConfig& cfg, const Dataset* probe,
                       Method expected) {
    if (cfg.method != expected) {
        throw std::invalid_argument("config method " + to_string(cfg.method) + " does not match " +
                                    to_string(expected));
    }
    TrainState state = make_train_state(std::move(model), cfg);
    auto records = train(state, data, probe, cfg);
    return {std::move(state.model), std::move(records)};
}

}  // namespace

TrainResult train_taet(Model model, const Dataset& data, const TrainConfig& cfg, const Dataset* probe) {
    if (cfg.method == Method::harl_only) return run_method(std::move(model), data, cfg, probe, Method::harl_only);
    return run_method(std::move(model), data, cfg, probe, Method::taet);
}

TrainResult train_at(Model model, const Dataset& data, const TrainConfig& cfg, const Dataset* probe) {
    return run_method(std::move(model), data, cfg, probe, Method::at);
}

TrainResult train_at_bsl(Model model, const Dataset& data, const TrainConfig& cfg, const Dataset* probe) {
    return run_method(std::move(model), data, cfg, probe, Method::at_bsl);
}

void write_epoch_csv(const std::filesystem::path& path, std::span<const EpochRecord> records) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.precision(17);
    out << "epoch,stage,loss,clean_ba,robust_ba,lr,seconds\n";
    for (const auto& r : records) {
        out << r.epoch << ',' << to_string(r.stage) << ',' << r.loss << ',' << r.clean_ba << ',' << r.robust_ba
            << ',' << r.lr << ',' << r.seconds << '\n';
    }
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<EpochRecord> read_epoch_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    std::getline(in, line);
    if (line != "epoch,stage,loss,clean_ba,robust_ba,lr,seconds") {
        throw std::runtime_error(path.string() + ":1: unexpected epoch CSV header");
    }
    std::vector<EpochRecord> out;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string f[7];
        for (auto& x : f) std::getline(ss, x, ',');
        try {
            EpochRecord r;
            r.epoch = std::stoi(f[0]);
            if (f[1] != "CE" && f[1] != "ADV") throw std::invalid_argument("stage");
            r.stage = f[1] == "CE" ? Stage::ce : Stage::adv;
            r.loss = std::stod(f[2]);
            r.clean_ba = std::stod(f[3]);
            r.robust_ba = std::stod(f[4]);
            r.lr = std::stod(f[5]);
            r.seconds = std::stod(f[6]);
            out.push_back(r);
        } catch (const std::exception&) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": malformed epoch row");
        }
    }
    return out;
}

}  // namespace taet
