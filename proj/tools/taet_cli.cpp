#include <fstream>
#include <iostream>
#include <iterator>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "taet/experiment.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw taet::ConfigError(path + ": cannot open file");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// predict-eta against a finished run: reuse its measured phase costs.
std::string costs_from_run(const taet::ExperimentConfig& cfg) {
    const auto path = taet::resolve_output_dir(cfg) / taet::files::kEfficiency;
    std::ifstream in(path);
    if (!in) throw std::runtime_error("missing prerequisite " + path.string());
    const auto eff = nlohmann::json::parse(in);
    const auto& tm = eff.at("time_model");
    const auto& mc = eff.at("measured_costs");
    const nlohmann::json costs{{"n_ce", tm.at("n_ce")},
                               {"n_at", tm.at("n_at")},
                               {"kappa", tm.at("kappa")},
                               {"forward_s", mc.at("forward_s")},
                               {"backward_s", mc.at("backward_s")},
                               {"backward_adv_s", mc.at("backward_adv_s")}};
    return costs.dump();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Two-stage adversarial equalization training lab"};
    app.require_subcommand(1);

    std::string config_path;
    std::string checkpoint;
    std::string costs_path;

    auto* run = app.add_subcommand("run", "Run the full pipeline (or sweep) for a config");
    run->add_option("config", config_path, "Experiment config (JSON)")->required();

    const char* stages[] = {"gen-data", "train", "efficiency", "report", "export-plots"};
    std::vector<CLI::App*> stage_cmds;
    for (const char* s : stages) {
        auto* cmd = app.add_subcommand(s, std::string("Run the ") + s + " stage");
        cmd->add_option("config", config_path, "Experiment config (JSON)")->required();
        stage_cmds.push_back(cmd);
    }
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the run's test set");
    eval->add_option("config", config_path, "Experiment config (JSON)")->required();
    eval->add_option("--checkpoint", checkpoint, "Checkpoint to evaluate (default: the run's own)");

    auto* eta = app.add_subcommand("predict-eta", "Predict the TAET/AT time ratio");
    auto* eta_costs = eta->add_option("--costs", costs_path, "Measured-costs JSON");
    auto* eta_config = eta->add_option("config", config_path, "Experiment config of a finished run");
    eta_costs->excludes(eta_config);

    app.add_subcommand("default-config", "Print the default config");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (app.got_subcommand("default-config")) {
            std::cout << taet::serialize_config(taet::default_config());
            return 0;
        }
        if (eta->parsed()) {
            if (!costs_path.empty()) {
                std::cout << taet::predict_eta_from_costs_json(read_file(costs_path));
            } else if (!config_path.empty()) {
                std::cout << taet::predict_eta_from_costs_json(costs_from_run(taet::load_config(config_path)));
            } else {
                throw taet::ConfigError("predict-eta: needs --costs <file> or a config");
            }
            return 0;
        }
        const auto cfg = taet::load_config(config_path);
        if (run->parsed()) {
            std::cout << taet::run_experiment(cfg).string() << '\n';
            return 0;
        }
        if (eval->parsed()) {
            taet::run_stage(cfg, "eval", checkpoint);
            return 0;
        }
        for (auto* cmd : stage_cmds) {
            if (cmd->parsed()) taet::run_stage(cfg, cmd->get_name());
        }
        return 0;
    } catch (const taet::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
}
