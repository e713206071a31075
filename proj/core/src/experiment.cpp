#include "taet/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <charconv>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include "taet/data.hpp"
#include "taet/digest.hpp"
#include "taet/metrics.hpp"

namespace taet {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Strict JSON reading.

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

[[noreturn]] void fail(const std::string& path, const std::string& msg) { throw ConfigError(path + ": " + msg); }

double as_number(const json& j, const std::string& path) {
    if (!j.is_number()) fail(path, "expected number");
    return j.get<double>();
}

std::uint64_t as_uint(const json& j, const std::string& path) {
    if (j.is_number_unsigned()) return j.get<std::uint64_t>();
    if (j.is_number_integer()) {
        if (j.get<std::int64_t>() < 0) fail(path, "expected non-negative integer");
        return j.get<std::uint64_t>();
    }
    fail(path, "expected non-negative integer");
}

int as_int(const json& j, const std::string& path) {
    if (!j.is_number_integer()) fail(path, "expected integer");
    return j.get<int>();
}

bool as_bool(const json& j, const std::string& path) {
    if (!j.is_boolean()) fail(path, "expected boolean");
    return j.get<bool>();
}

std::string as_string(const json& j, const std::string& path) {
    if (!j.is_string()) fail(path, "expected string");
    return j.get<std::string>();
}

const json& as_array(const json& j, const std::string& path) {
    if (!j.is_array()) fail(path, "expected array");
    return j;
}

class Fields {
public:
    Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) fail(path_.empty() ? "<root>" : path_, "expected object");
    }

    const json* take(const std::string& key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }
    std::string at(const std::string& key) const { return join(path_, key); }

    void number(const std::string& key, double& out) {
        if (auto* v = take(key)) out = as_number(*v, at(key));
    }
    template <typename U>
    void uint(const std::string& key, U& out) {
        if (auto* v = take(key)) out = static_cast<U>(as_uint(*v, at(key)));
    }
    void integer(const std::string& key, int& out) {
        if (auto* v = take(key)) out = as_int(*v, at(key));
    }
    void boolean(const std::string& key, bool& out) {
        if (auto* v = take(key)) out = as_bool(*v, at(key));
    }
    void string(const std::string& key, std::string& out) {
        if (auto* v = take(key)) out = as_string(*v, at(key));
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!seen_.count(it.key())) fail(at(it.key()), "unknown key");
        }
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

LossSelector parse_attack_loss(const std::string& name, const std::string& path, const HelWeights& hel) {
    if (name == "ce") return loss::CrossEntropy{};
    if (name == "hel") return loss::Hierarchical{hel};
    fail(path, "attack loss must be \"ce\" or \"hel\"");
}

std::string attack_loss_name(const LossSelector& s) {
    return std::holds_alternative<loss::Hierarchical>(s) ? "hel" : "ce";
}

void read_pgd_fields(Fields& f, AttackConfig& a, const HelWeights& hel) {
    f.number("epsilon", a.epsilon);
    f.number("step_size", a.step_size);
    f.integer("steps", a.num_steps);
    f.boolean("random_init", a.random_init);
    f.number("init_scale", a.init_scale);
    f.number("clip_min", a.clip_min);
    f.number("clip_max", a.clip_max);
    std::string l = attack_loss_name(a.loss);
    f.string("loss", l);
    a.loss = parse_attack_loss(l, f.at("loss"), hel);
}

json pgd_json(const AttackConfig& a) {
    return {{"epsilon", a.epsilon},     {"step_size", a.step_size},   {"steps", a.num_steps},
            {"random_init", a.random_init}, {"init_scale", a.init_scale}, {"clip_min", a.clip_min},
            {"clip_max", a.clip_max},   {"loss", attack_loss_name(a.loss)}};
}

AttackSpec parse_attack(const json& j, const std::string& path, const HelWeights& hel) {
    Fields f(j, path);
    AttackSpec spec;
    std::string type;
    f.string("name", spec.name);
    f.string("type", type);
    if (spec.name.empty()) fail(f.at("name"), "required");
    f.uint("seed", spec.seed);
    if (type == "fgsm") {
        FgsmConfig c;
        f.number("epsilon", c.epsilon);
        f.number("clip_min", c.clip_min);
        f.number("clip_max", c.clip_max);
        spec.params = c;
    } else if (type == "pgd") {
        AttackConfig c;
        read_pgd_fields(f, c, hel);
        spec.params = c;
    } else if (type == "cw") {
        CwConfig c;
        f.number("c", c.c);
        f.number("kappa", c.kappa);
        f.integer("iters", c.num_iters);
        f.number("step_size", c.step_size);
        f.number("clip_min", c.clip_min);
        f.number("clip_max", c.clip_max);
        spec.params = c;
    } else {
        fail(f.at("type"), "must be one of fgsm, pgd, cw");
    }
    f.finish();
    try {
        if (auto* p = std::get_if<AttackConfig>(&spec.params)) p->validate();
        if (auto* c = std::get_if<CwConfig>(&spec.params)) c->validate();
        if (auto* g = std::get_if<FgsmConfig>(&spec.params)) {
            if (!(g->epsilon >= 0) || !(g->clip_min < g->clip_max)) throw std::invalid_argument("invalid FGSM bounds");
        }
    } catch (const std::invalid_argument& e) {
        fail(path, e.what());
    }
    return spec;
}

json attack_json(const AttackSpec& s) {
    json j;
    j["name"] = s.name;
    if (const auto* g = std::get_if<FgsmConfig>(&s.params)) {
        j["type"] = "fgsm";
        j["epsilon"] = g->epsilon;
        j["clip_min"] = g->clip_min;
        j["clip_max"] = g->clip_max;
    } else if (const auto* p = std::get_if<AttackConfig>(&s.params)) {
        j["type"] = "pgd";
        j.update(pgd_json(*p));
    } else {
        const auto& c = std::get<CwConfig>(s.params);
        j["type"] = "cw";
        j["c"] = c.c;
        j["kappa"] = c.kappa;
        j["iters"] = c.num_iters;
        j["step_size"] = c.step_size;
        j["clip_min"] = c.clip_min;
        j["clip_max"] = c.clip_max;
    }
    j["seed"] = s.seed;
    return j;
}

json memory_json(const MemoryModel& m) {
    return {{"b", m.b}, {"c", m.c}, {"h", m.h}, {"w", m.w}, {"d", m.d}};
}

}  // namespace

ExperimentConfig default_config() {
    ExperimentConfig c;
    c.train.method = Method::taet;
    c.train.total_epochs = 30;
    c.train.ce_epochs = 12;
    c.train.lr_schedule = {0.1, {22, 27}, 10.0};
    c.train.batch_size = 128;
    c.train.seed = 1;
    c.train.probe_size = 250;
    c.train.probe_steps = 5;
    c.eval.attacks = {
        {"FGSM", FgsmConfig{8.0 / 255.0, 0.0, 1.0}, 0},
        {"PGD-20", AttackConfig{8.0 / 255.0, 1.0 / 255.0, 20, true, 0.001, 0.0, 1.0, loss::CrossEntropy{}}, 11},
        {"CW", CwConfig{1.0, 0.0, 50, 0.01, 0.0, 1.0}, 0},
    };
    return c;
}

ExperimentConfig parse_config(std::string_view text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("<root>: JSON parse error at byte ") + std::to_string(e.byte) + ": " + e.what());
    }
    ExperimentConfig cfg = default_config();
    Fields top(root, "");

    if (auto* j = top.take("dataset")) {
        Fields f(*j, "dataset");
        auto& d = cfg.dataset;
        f.string("source", d.source);
        if (d.source != "gaussian" && d.source != "csv" && d.source != "idx") {
            fail("dataset.source", "must be gaussian, csv or idx");
        }
        f.string("path", d.path);
        f.string("labels_path", d.labels_path);
        f.uint("num_classes", d.num_classes);
        f.uint("dim", d.dim);
        f.number("separation", d.separation);
        f.uint("n_max", d.n_max);
        f.number("imbalance_ratio", d.imbalance_ratio);
        f.uint("test_per_class", d.test_per_class);
        f.uint("seed", d.seed);
        f.finish();
        if (d.source != "gaussian" && d.path.empty()) fail("dataset.path", "required for external sources");
        if (!(d.imbalance_ratio >= 1)) fail("dataset.imbalance_ratio", "must be >= 1");
        if (d.test_per_class < 1) fail("dataset.test_per_class", "must be at least 1");
    }
    if (auto* j = top.take("model")) {
        Fields f(*j, "model");
        if (auto* h = f.take("hidden_dims")) {
            cfg.model.hidden_dims.clear();
            const auto& arr = as_array(*h, "model.hidden_dims");
            for (std::size_t i = 0; i < arr.size(); ++i) {
                const auto v = as_uint(arr[i], "model.hidden_dims[" + std::to_string(i) + "]");
                if (v == 0) fail("model.hidden_dims[" + std::to_string(i) + "]", "must be positive");
                cfg.model.hidden_dims.push_back(v);
            }
        }
        f.uint("init_seed", cfg.model.init_seed);
        f.finish();
    }
    if (auto* j = top.take("train")) {
        Fields f(*j, "train");
        auto& t = cfg.train;
        std::string method = to_string(t.method);
        f.string("method", method);
        try {
            t.method = parse_method(method);
        } catch (const std::invalid_argument& e) {
            fail("train.method", e.what());
        }
        f.integer("epochs", t.total_epochs);
        f.integer("ce_epochs", t.ce_epochs);
        f.uint("batch_size", t.batch_size);
        f.uint("seed", t.seed);
        f.number("lr", t.lr_schedule.base_lr);
        if (auto* m = f.take("milestones")) {
            t.lr_schedule.milestones.clear();
            const auto& arr = as_array(*m, "train.milestones");
            for (std::size_t i = 0; i < arr.size(); ++i) {
                t.lr_schedule.milestones.push_back(as_int(arr[i], "train.milestones[" + std::to_string(i) + "]"));
            }
        }
        f.number("decay_factor", t.lr_schedule.decay_factor);
        f.number("momentum", t.momentum);
        f.number("weight_decay", t.weight_decay);
        f.number("tau_b", t.tau_b);
        if (auto* h = f.take("hel")) {
            Fields hf(*h, "train.hel");
            hf.number("alpha", t.hel_weights.weight_bcl);
            hf.number("beta", t.hel_weights.weight_hdl);
            hf.number("gamma", t.hel_weights.weight_rcel);
            hf.finish();
        }
        if (auto* a = f.take("attack")) {
            Fields af(*a, "train.attack");
            read_pgd_fields(af, t.attack, t.hel_weights);
            af.finish();
        }
        f.uint("probe_size", t.probe_size);
        f.integer("probe_steps", t.probe_steps);
        f.finish();
        if (t.method == Method::harl_only) t.ce_epochs = 0;
        try {
            t.validate();
        } catch (const std::invalid_argument& e) {
            fail("train", e.what());
        }
    }
    if (auto* j = top.take("eval")) {
        Fields f(*j, "eval");
        if (auto* a = f.take("attacks")) {
            cfg.eval.attacks.clear();
            const auto& arr = as_array(*a, "eval.attacks");
            std::set<std::string> names;
            for (std::size_t i = 0; i < arr.size(); ++i) {
                const std::string p = "eval.attacks[" + std::to_string(i) + "]";
                cfg.eval.attacks.push_back(parse_attack(arr[i], p, cfg.train.hel_weights));
                if (!names.insert(cfg.eval.attacks.back().name).second) fail(p + ".name", "duplicate attack name");
            }
        }
        f.uint("tail_k", cfg.eval.tail_k);
        f.uint("batch_size", cfg.eval.batch_size);
        f.boolean("export_attack_csv", cfg.eval.export_attack_csv);
        f.finish();
    }
    if (auto* j = top.take("efficiency")) {
        Fields f(*j, "efficiency");
        f.integer("probe_batches", cfg.efficiency.probe_batches);
        if (cfg.efficiency.probe_batches < 3) fail("efficiency.probe_batches", "must be at least 3");
        if (auto* m = f.take("memory")) {
            Fields mf(*m, "efficiency.memory");
            MemoryModel mm;
            mf.uint("b", mm.b);
            mf.uint("c", mm.c);
            mf.uint("h", mm.h);
            mf.uint("w", mm.w);
            mf.uint("d", mm.d);
            mf.finish();
            cfg.efficiency.memory = mm;
        }
        f.finish();
    }
    if (auto* j = top.take("output")) {
        Fields f(*j, "output");
        f.string("directory", cfg.output.directory);
        if (auto* fm = f.take("formats")) {
            cfg.output.formats.clear();
            const auto& arr = as_array(*fm, "output.formats");
            for (std::size_t i = 0; i < arr.size(); ++i) {
                const std::string p = "output.formats[" + std::to_string(i) + "]";
                const std::string v = as_string(arr[i], p);
                if (v != "json" && v != "csv") fail(p, "must be json or csv");
                cfg.output.formats.push_back(v);
            }
        }
        f.finish();
        if (cfg.output.directory.empty()) fail("output.directory", "must not be empty");
    }
    if (auto* j = top.take("sweep")) {
        Fields f(*j, "sweep");
        SweepSection s;
        if (auto* r = f.take("imbalance_ratios")) {
            const auto& arr = as_array(*r, "sweep.imbalance_ratios");
            for (std::size_t i = 0; i < arr.size(); ++i) {
                const std::string p = "sweep.imbalance_ratios[" + std::to_string(i) + "]";
                const double v = as_number(arr[i], p);
                if (!(v >= 1)) fail(p, "must be >= 1");
                s.imbalance_ratios.push_back(v);
            }
        }
        if (auto* m = f.take("methods")) {
            const auto& arr = as_array(*m, "sweep.methods");
            for (std::size_t i = 0; i < arr.size(); ++i) {
                const std::string p = "sweep.methods[" + std::to_string(i) + "]";
                try {
                    s.methods.push_back(parse_method(as_string(arr[i], p)));
                } catch (const std::invalid_argument& e) {
                    fail(p, e.what());
                }
            }
        }
        f.finish();
        cfg.sweep = s;
    }
    top.finish();
    return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path.string() + ": cannot open config file");
    const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return parse_config(text);
}

std::string serialize_config(const ExperimentConfig& c) {
    json j;
    const auto& d = c.dataset;
    j["dataset"] = {{"source", d.source},
                    {"path", d.path},
                    {"labels_path", d.labels_path},
                    {"num_classes", d.num_classes},
                    {"dim", d.dim},
                    {"separation", d.separation},
                    {"n_max", d.n_max},
                    {"imbalance_ratio", d.imbalance_ratio},
                    {"test_per_class", d.test_per_class},
                    {"seed", d.seed}};
    j["model"] = {{"hidden_dims", c.model.hidden_dims}, {"init_seed", c.model.init_seed}};
    const auto& t = c.train;
    j["train"] = {{"method", to_string(t.method)},
                  {"epochs", t.total_epochs},
                  {"ce_epochs", t.ce_epochs},
                  {"batch_size", t.batch_size},
                  {"seed", t.seed},
                  {"lr", t.lr_schedule.base_lr},
                  {"milestones", t.lr_schedule.milestones},
                  {"decay_factor", t.lr_schedule.decay_factor},
                  {"momentum", t.momentum},
                  {"weight_decay", t.weight_decay},
                  {"tau_b", t.tau_b},
                  {"hel",
                   {{"alpha", t.hel_weights.weight_bcl},
                    {"beta", t.hel_weights.weight_hdl},
                    {"gamma", t.hel_weights.weight_rcel}}},
                  {"attack", pgd_json(t.attack)},
                  {"probe_size", t.probe_size},
                  {"probe_steps", t.probe_steps}};
    auto attacks = json::array();
    for (const auto& a : c.eval.attacks) attacks.push_back(attack_json(a));
    j["eval"] = {{"attacks", attacks},
                 {"tail_k", c.eval.tail_k},
                 {"batch_size", c.eval.batch_size},
                 {"export_attack_csv", c.eval.export_attack_csv}};
    j["efficiency"] = {{"probe_batches", c.efficiency.probe_batches}};
    if (c.efficiency.memory) j["efficiency"]["memory"] = memory_json(*c.efficiency.memory);
    j["output"] = {{"directory", c.output.directory}, {"formats", c.output.formats}};
    if (c.sweep) {
        auto methods = json::array();
        for (auto m : c.sweep->methods) methods.push_back(to_string(m));
        j["sweep"] = {{"imbalance_ratios", c.sweep->imbalance_ratios}, {"methods", methods}};
    }
    return j.dump(2) + "\n";
}

std::string config_hash(const ExperimentConfig& cfg) { return sha256_hex(serialize_config(cfg)); }

fs::path resolve_output_dir(const ExperimentConfig& cfg) {
    fs::path dir = cfg.output.directory;
    if (const char* root = std::getenv(kOutputRootEnv); root && *root && dir.is_relative()) {
        dir = fs::path(root) / dir;
    }
    return dir;
}

// ---------------------------------------------------------------------------
// Locking and manifest.

RunLock::RunLock(const fs::path& dir) : path_(dir / files::kLock) {
    fs::create_directories(dir);
    std::FILE* f = std::fopen(path_.string().c_str(), "wx");
    if (!f) throw std::runtime_error("run directory " + dir.string() + " is locked by another run (" + path_.string() + ")");
    std::fputs("locked\n", f);
    std::fclose(f);
}

RunLock::~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
}

void write_manifest(const ExperimentConfig& cfg, const fs::path& dir, std::string_view status,
                    std::string_view failed_stage, const std::vector<StageTiming>& timings) {
    const fs::path manifest_path = dir / files::kManifest;
    json previous_stages = json::object();
    if (fs::exists(manifest_path)) {
        try {
            std::ifstream in(manifest_path);
            json old = json::parse(in);
            if (old.contains("stage_seconds")) previous_stages = old["stage_seconds"];
        } catch (const std::exception&) {
        }
    }
    for (const auto& t : timings) previous_stages[t.stage] = t.seconds;
    double total = 0.0;
    for (auto it = previous_stages.begin(); it != previous_stages.end(); ++it) total += it.value().get<double>();

    std::vector<fs::path> paths;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const auto name = entry.path().filename().string();
        if (entry.path() == manifest_path || name == files::kLock || name.ends_with(".tmp")) continue;
        paths.push_back(entry.path());
    }
    std::sort(paths.begin(), paths.end());
    json file_list = json::array();
    for (const auto& p : paths) {
        file_list.push_back({{"path", fs::relative(p, dir).generic_string()},
                             {"bytes", fs::file_size(p)},
                             {"sha256", sha256_file_hex(p)}});
    }
    json m;
    m["artifact_version"] = kArtifactVersion;
    m["config_hash"] = config_hash(cfg);
    m["status"] = status;
    m["failed_stage"] = failed_stage.empty() ? json(nullptr) : json(failed_stage);
    m["files"] = file_list;
    m["stage_seconds"] = previous_stages;
    m["total_seconds"] = total;
    std::ofstream out(manifest_path);
    out << m.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Stages.

namespace {

fs::path require(const fs::path& dir, const char* name) {
    fs::path p = dir / name;
    if (!fs::exists(p)) throw std::runtime_error("missing prerequisite " + p.string());
    return p;
}

json read_json_file(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw std::runtime_error("cannot open " + p.string());
    return json::parse(in);
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << text;
}

bool wants(const ExperimentConfig& cfg, const char* fmt) {
    return std::find(cfg.output.formats.begin(), cfg.output.formats.end(), fmt) != cfg.output.formats.end();
}

struct RunData {
    Dataset train;
    Dataset test;
    std::size_t num_classes;
};

RunData load_run_data(const fs::path& dir) {
    const json info = read_json_file(require(dir, files::kDataInfo));
    const std::size_t classes = info.at("num_classes").get<std::size_t>();
    const double ir = info.at("declared_ir").get<double>();
    return {read_dataset_csv(require(dir, files::kTrainData), classes, ir),
            read_dataset_csv(require(dir, files::kTestData), classes, 1.0), classes};
}

std::string compact(double v) {
    char buf[64];
    auto p = std::to_chars(buf, buf + sizeof(buf), v).ptr;
    return std::string(buf, p);
}

std::string sanitize(const std::string& name) {
    std::string s;
    for (char ch : name) s.push_back(std::isalnum(static_cast<unsigned char>(ch)) ? ch : '_');
    return s;
}

}  // namespace

void stage_gen_data(const ExperimentConfig& cfg, const fs::path& dir) {
    fs::create_directories(dir);
    const auto& d = cfg.dataset;
    std::optional<Dataset> pool;
    json mapping = nullptr;
    if (d.source == "gaussian") {
        pool = gen_gaussian_mixture({d.num_classes, d.dim, d.separation, d.n_max + d.test_per_class}, d.seed);
    } else {
        LoadedDataset loaded = load_external(d.path, d.source == "csv" ? ExternalFormat::csv : ExternalFormat::idx,
                                             d.labels_path);
        if (loaded.remapped) {
            mapping = json::object();
            for (const auto& [orig, lab] : loaded.label_mapping) mapping[std::to_string(orig)] = lab;
        }
        pool = std::move(loaded.data);
    }
    DatasetSplit split = split_per_class(*pool, d.test_per_class);
    const ImbalanceProfile profile{pool->num_classes(), d.n_max, d.imbalance_ratio};
    Dataset train = subsample_longtail(split.rest, profile, d.seed);

    save_csv(train, dir / files::kTrainData);
    save_csv(split.head, dir / files::kTestData);
    json info;
    info["source"] = d.source;
    info["num_classes"] = train.num_classes();
    info["feature_dim"] = train.feature_dim();
    info["declared_ir"] = d.imbalance_ratio;
    info["observed_ir"] = train.observed_ir();
    info["train_class_counts"] = train.class_counts();
    info["test_class_counts"] = split.head.class_counts();
    info["test_distribution"] = "balanced";
    info["label_mapping"] = mapping;
    write_text(dir / files::kDataInfo, info.dump(2) + "\n");
}

void stage_train(const ExperimentConfig& cfg, const fs::path& dir) {
    const RunData data = load_run_data(dir);
    const ModelSpec spec{data.train.feature_dim(), cfg.model.hidden_dims, data.num_classes, Activation::relu};
    TrainState state = make_train_state(init_model(spec, cfg.model.init_seed), cfg.train);
    const auto records = train(state, data.train, &data.test, cfg.train);
    write_epoch_csv(dir / files::kEpochs, records);
    save_checkpoint(dir / files::kCheckpoint, state);
}

void stage_eval(const ExperimentConfig& cfg, const fs::path& dir, const fs::path& checkpoint) {
    const fs::path ckpt = checkpoint.empty() ? require(dir, files::kCheckpoint) : checkpoint;
    if (!fs::exists(ckpt)) throw std::runtime_error("missing prerequisite " + ckpt.string());
    const TrainState state = load_checkpoint(ckpt);
    const RunData data = load_run_data(dir);
    const MetricsReport r = report(state.model, data.test, cfg.eval.attacks, cfg.eval.tail_k);
    write_text(dir / files::kMetrics, report_to_json(r));
    if (wants(cfg, "csv")) write_report_csv(r, dir / files::kMetricsCsv);
    if (cfg.eval.export_attack_csv) {
        std::vector<std::size_t> ids(data.test.size());
        for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
        const Batch all = gather(data.test, ids);
        for (const auto& a : cfg.eval.attacks) {
            const Tensor adv = run_attack(state.model, all.inputs, all.labels, a, ids);
            const auto recs = attack_records(state.model, all.inputs, adv, all.labels, ids);
            write_attack_csv(dir / ("attack_" + sanitize(a.name) + ".csv"), recs);
        }
    }
}

void stage_efficiency(const ExperimentConfig& cfg, const fs::path& dir) {
    const TrainState state = load_checkpoint(require(dir, files::kCheckpoint));
    const RunData data = load_run_data(dir);
    const auto records = read_epoch_csv(require(dir, files::kEpochs));

    EfficiencyReport r;
    const int n_ce = cfg.train.effective_ce_epochs();
    const int n_at = cfg.train.total_epochs - n_ce;
    const int kappa = cfg.train.attack.num_steps;
    r.measurement = measure_phase_costs(state.model, data.train, cfg.train.attack, cfg.efficiency.probe_batches,
                                        cfg.train.batch_size);
    r.time_model = TimeModel::from_costs(n_ce, n_at, kappa, r.measurement->costs);
    r.eta = predict_eta(r.time_model);
    r.eta_consistent = predict_eta_consistent(r.time_model);
    r.measured_ratio = measured_ratio_from_epochs(records);
    if (cfg.efficiency.memory) {
        r.memory = *cfg.efficiency.memory;
    } else {
        r.memory = MemoryModel{};
        r.memory.b = cfg.train.batch_size;
        r.memory.c = 1;
        r.memory.h = 1;
        r.memory.w = data.train.feature_dim();
        r.memory.d = sizeof(double);
    }
    r.ce_fraction = static_cast<double>(n_ce) / cfg.train.total_epochs;
    r.xi_bytes = predict_memory_saving(r.memory, r.ce_fraction);
    write_text(dir / files::kEfficiency, efficiency_to_json(r));
}

void stage_report(const ExperimentConfig& cfg, const fs::path& dir) {
    json rep;
    rep["artifact_version"] = kArtifactVersion;
    rep["config_hash"] = config_hash(cfg);
    rep["config"] = json::parse(serialize_config(cfg));
    rep["data"] = read_json_file(require(dir, files::kDataInfo));
    const auto records = read_epoch_csv(require(dir, files::kEpochs));
    json training;
    training["method"] = to_string(cfg.train.method);
    training["epochs"] = records.size();
    training["stage_transition_epoch"] = cfg.train.effective_ce_epochs();
    if (!records.empty()) {
        training["final_loss"] = records.back().loss;
        training["final_probe_clean_ba"] = records.back().clean_ba;
        training["final_probe_robust_ba"] = records.back().robust_ba;
    }
    rep["training"] = training;
    rep["metrics"] = read_json_file(require(dir, files::kMetrics));
    rep["efficiency"] = read_json_file(require(dir, files::kEfficiency));
    write_text(dir / files::kReport, rep.dump(2) + "\n");
}

void stage_export_plots(const ExperimentConfig& cfg, const fs::path& dir) {
    (void)cfg;
    const json metrics = read_json_file(require(dir, files::kMetrics));
    const json info = read_json_file(require(dir, files::kDataInfo));
    const auto records = read_epoch_csv(require(dir, files::kEpochs));

    auto cell = [](const json& v) { return v.is_null() ? std::string() : compact(v.get<double>()); };
    {
        std::ofstream out(dir / files::kPlotPerClass);
        out << "class,train_count,test_count,clean_accuracy";
        for (const auto& a : metrics["attacks"]) out << ',' << sanitize(a["name"].get<std::string>()) << "_robustness";
        out << '\n';
        const std::size_t classes = metrics["num_classes"].get<std::size_t>();
        for (std::size_t c = 0; c < classes; ++c) {
            out << c << ',' << info["train_class_counts"][c].get<std::size_t>() << ','
                << info["test_class_counts"][c].get<std::size_t>() << ','
                << cell(metrics["clean"]["per_class_accuracy"][c]);
            for (const auto& a : metrics["attacks"]) out << ',' << cell(a["per_class_robustness"][c]);
            out << '\n';
        }
    }
    {
        std::ofstream out(dir / files::kPlotCurves);
        out << "epoch,stage,loss,clean_accuracy,adversarial_robustness,lr\n";
        for (const auto& r : records) {
            out << r.epoch << ',' << to_string(r.stage) << ',' << compact(r.loss) << ',' << compact(r.clean_ba) << ','
                << compact(r.robust_ba) << ',' << compact(r.lr) << '\n';
        }
    }
}

namespace {

using StageFn = void (*)(const ExperimentConfig&, const fs::path&);

StageFn stage_function(const std::string& stage) {
    if (stage == "gen-data") return &stage_gen_data;
    if (stage == "train") return &stage_train;
    if (stage == "efficiency") return &stage_efficiency;
    if (stage == "report") return &stage_report;
    if (stage == "export-plots") return &stage_export_plots;
    return nullptr;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void run_pipeline(const ExperimentConfig& cfg, const fs::path& dir) {
    RunLock lock(dir);
    std::vector<StageTiming> timings;
    const std::vector<std::string> stages{"gen-data", "train", "eval", "efficiency", "report", "export-plots"};
    for (const auto& s : stages) {
        const auto t0 = std::chrono::steady_clock::now();
        try {
            if (s == "eval") {
                stage_eval(cfg, dir);
            } else {
                stage_function(s)(cfg, dir);
            }
        } catch (...) {
            timings.push_back({s, seconds_since(t0)});
            write_manifest(cfg, dir, "failed", s, timings);
            throw;
        }
        timings.push_back({s, seconds_since(t0)});
    }
    write_manifest(cfg, dir, "complete", "", timings);
}

}  // namespace

void run_stage(const ExperimentConfig& cfg, const std::string& stage, const fs::path& checkpoint) {
    const fs::path dir = resolve_output_dir(cfg);
    StageFn fn = stage_function(stage);
    if (!fn && stage != "eval") throw std::invalid_argument("unknown stage " + stage);
    RunLock lock(dir);
    const auto t0 = std::chrono::steady_clock::now();
    try {
        if (stage == "eval") {
            stage_eval(cfg, dir, checkpoint);
        } else {
            fn(cfg, dir);
        }
    } catch (...) {
        write_manifest(cfg, dir, "failed", stage, {{stage, seconds_since(t0)}});
        throw;
    }
    write_manifest(cfg, dir, "complete", "", {{stage, seconds_since(t0)}});
}

fs::path run_experiment(const ExperimentConfig& cfg) {
    const fs::path dir = resolve_output_dir(cfg);
    if (!cfg.sweep) {
        run_pipeline(cfg, dir);
        return dir;
    }
    std::vector<double> irs = cfg.sweep->imbalance_ratios;
    if (irs.empty()) irs.push_back(cfg.dataset.imbalance_ratio);
    std::vector<Method> methods = cfg.sweep->methods;
    const bool multi_method = !methods.empty();
    if (methods.empty()) methods.push_back(cfg.train.method);

    struct Row {
        Method method;
        double ir;
        json metrics;
    };
    std::vector<Row> rows;
    {
        RunLock lock(dir);
        const auto t0 = std::chrono::steady_clock::now();
        for (double ir : irs) {
            for (Method m : methods) {
                ExperimentConfig sub = cfg;
                sub.sweep.reset();
                sub.dataset.imbalance_ratio = ir;
                sub.train.method = m;
                if (m == Method::harl_only) sub.train.ce_epochs = 0;
                std::string name = "ir" + compact(ir);
                if (multi_method) name += "_" + to_string(m);
                sub.output.directory = (dir / name).string();
                const fs::path sub_dir = dir / name;
                run_pipeline(sub, sub_dir);
                rows.push_back({m, ir, read_json_file(sub_dir / files::kMetrics)});
            }
        }
        std::ofstream out(dir / files::kSweepTable);
        out << "method,imbalance_ratio,clean_balanced_accuracy,clean_standard_accuracy,clean_tail_accuracy";
        if (!rows.empty()) {
            for (const auto& a : rows.front().metrics["attacks"]) {
                const auto n = sanitize(a["name"].get<std::string>());
                out << ',' << n << "_balanced_robustness," << n << "_tail_robustness";
            }
        }
        out << '\n';
        for (const auto& r : rows) {
            const auto& c = r.metrics["clean"];
            out << to_string(r.method) << ',' << compact(r.ir) << ',' << compact(c["balanced_accuracy"].get<double>())
                << ',' << compact(c["standard_accuracy"].get<double>()) << ','
                << compact(c["tail_accuracy"].get<double>());
            for (const auto& a : r.metrics["attacks"]) {
                out << ',' << compact(a["balanced_robustness"].get<double>()) << ','
                    << compact(a["tail_robustness"].get<double>());
            }
            out << '\n';
        }
        out.close();
        write_manifest(cfg, dir, "complete", "", {{"sweep", seconds_since(t0)}});
    }
    return dir;
}

std::string predict_eta_from_costs_json(std::string_view text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("<costs>: JSON parse error: ") + e.what());
    }
    Fields f(j, "costs");
    int n_ce = 0;
    int n_at = 0;
    int kappa = 0;
    f.integer("n_ce", n_ce);
    f.integer("n_at", n_at);
    f.integer("kappa", kappa);
    int n_total = -1;
    f.integer("n_total", n_total);
    double fwd = -1, bwd = -1, bwd_adv = -1, rho = -1, gamma = -1;
    f.number("forward_s", fwd);
    f.number("backward_s", bwd);
    f.number("backward_adv_s", bwd_adv);
    f.number("rho", rho);
    f.number("gamma_time", gamma);
    f.finish();
    if (n_total >= 0 && n_total != n_ce + n_at) fail("costs.n_total", "must equal n_ce + n_at");
    TimeModel tm;
    try {
        if (fwd >= 0 && bwd >= 0 && bwd_adv >= 0) {
            tm = TimeModel::from_costs(n_ce, n_at, kappa, {fwd, bwd, bwd_adv});
        } else if (rho > 0 && gamma > 0) {
            tm = TimeModel::from_ratios(n_ce, n_at, kappa, rho, gamma);
        } else {
            fail("costs", "needs forward_s/backward_s/backward_adv_s or rho/gamma_time");
        }
    } catch (const std::invalid_argument& e) {
        fail("costs", e.what());
    }
    json out = {{"n_ce", tm.n_ce},
                {"n_at", tm.n_at},
                {"n_total", tm.n_total},
                {"kappa", tm.kappa},
                {"rho", tm.rho},
                {"gamma_time", tm.gamma_time},
                {"eta", predict_eta(tm)},
                {"eta_consistent", predict_eta_consistent(tm)}};
    return out.dump(2) + "\n";
}

}  // namespace taet
