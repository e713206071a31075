#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "support.hpp"
#include "taet/trainer.hpp"

using namespace taet;
namespace fs = std::filesystem;

namespace {

Dataset small_lt_data() {
    const Dataset pool = gen_gaussian_mixture({3, 4, 3.0, 120}, 5);
    return subsample_longtail(pool, {3, 120, 6.0}, 5);
}

TrainConfig small_cfg(Method method) {
    TrainConfig c;
    c.method = method;
    c.total_epochs = 4;
    c.ce_epochs = 2;
    c.attack.num_steps = 3;
    c.lr_schedule = {0.05, {3}, 10.0};
    c.batch_size = 32;
    c.seed = 7;
    c.probe_size = 0;
    return c;
}

Model small_model() { return init_model({4, {8}, 3, Activation::relu}, 3); }

}  // namespace

TEST_CASE("method names round trip") {
    for (Method m : {Method::taet, Method::at, Method::at_bsl, Method::harl_only}) {
        CHECK(parse_method(to_string(m)) == m);
    }
    CHECK_THROWS_AS(parse_method("sgd"), std::invalid_argument);
}

TEST_CASE("config validation rejects bad schedules before training") {
    TrainConfig c = small_cfg(Method::taet);
    c.ce_epochs = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c.ce_epochs = 5;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = small_cfg(Method::at);
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    CHECK_THROWS_AS(train_taet(small_model(), small_lt_data(), c), std::invalid_argument);
}

TEST_CASE("stage boundary is exactly ce_epochs") {
    const auto r = train_taet(small_model(), small_lt_data(), small_cfg(Method::taet));
    REQUIRE(r.records.size() == 4);
    CHECK(r.records[0].stage == Stage::ce);
    CHECK(r.records[1].stage == Stage::ce);
    CHECK(r.records[2].stage == Stage::adv);
    CHECK(r.records[3].stage == Stage::adv);
    CHECK(r.records[3].lr == doctest::Approx(0.005));
    for (const auto& rec : r.records) CHECK(rec.seconds >= 0.0);
}

TEST_CASE("other methods train adversarially from the first epoch") {
    TrainConfig c = small_cfg(Method::at);
    CHECK(c.effective_ce_epochs() == 0);
    CHECK(c.stage_of(0) == Stage::adv);
    c.method = Method::harl_only;
    c.ce_epochs = 0;
    CHECK(c.stage_of(0) == Stage::adv);
}

TEST_CASE("training is deterministic per seed") {
    const auto data = small_lt_data();
    const auto a = train_taet(small_model(), data, small_cfg(Method::taet));
    const auto b = train_taet(small_model(), data, small_cfg(Method::taet));
    CHECK(a.model == b.model);
    for (std::size_t i = 0; i < a.records.size(); ++i) CHECK(a.records[i].loss == b.records[i].loss);
}

TEST_CASE("ce_epochs == epochs equals zero-budget adversarial training") {
    const auto data = small_lt_data();
    TrainConfig taet_cfg = small_cfg(Method::taet);
    taet_cfg.ce_epochs = taet_cfg.total_epochs;
    TrainConfig at_cfg = small_cfg(Method::at);
    at_cfg.attack.epsilon = 0.0;
    const auto a = train_taet(small_model(), data, taet_cfg);
    const auto b = train_at(small_model(), data, at_cfg);
    CHECK(a.model == b.model);
    for (std::size_t i = 0; i < a.records.size(); ++i) CHECK(a.records[i].loss == b.records[i].loss);
}

TEST_CASE("balanced softmax with tau 0 or uniform counts reproduces AT") {
    const auto data = small_lt_data();
    TrainConfig bsl = small_cfg(Method::at_bsl);
    bsl.tau_b = 0.0;
    CHECK(train_at_bsl(small_model(), data, bsl).model == train_at(small_model(), data, small_cfg(Method::at)).model);

    const Dataset balanced = gen_gaussian_mixture({3, 4, 3.0, 40}, 2);
    const auto uniform = train_at_bsl(small_model(), balanced, small_cfg(Method::at_bsl)).model;
    const auto plain = train_at(small_model(), balanced, small_cfg(Method::at)).model;
    const auto pu = uniform.flat_parameters();
    const auto pp = plain.flat_parameters();
    for (std::size_t i = 0; i < pu.size(); ++i) CHECK(pu[i] == doctest::Approx(pp[i]).epsilon(1e-12));
}

TEST_CASE("hel with alpha only equals AT on a balanced two-class batch") {
    const Dataset data = gen_gaussian_mixture({2, 3, 2.0, 16}, 4);
    TrainConfig harl = small_cfg(Method::harl_only);
    harl.ce_epochs = 0;
    harl.total_epochs = 1;
    harl.batch_size = 32;
    harl.hel_weights = {1.0, 0.0, 0.0};
    TrainConfig at = harl;
    at.method = Method::at;
    const Model m0 = init_model({3, {5}, 2, Activation::relu}, 1);
    const auto a = train_taet(m0, data, harl).model.flat_parameters();
    const auto b = train_at(m0, data, at).model.flat_parameters();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
}

TEST_CASE("adversarial loss dominates clean loss") {
    std::mt19937_64 rng(9);
    const auto data = small_lt_data();
    const Model m = train_taet(small_model(), data, small_cfg(Method::taet)).model;
    AttackConfig atk;
    atk.num_steps = 5;
    int dominated = 0;
    int total = 0;
    for (const auto& b : batches(data, 16, 3, 0)) {
        const Tensor adv = pgd(m, b.inputs, b.labels, atk, 1, b.indices);
        dominated += cross_entropy(forward(m, adv), b.labels) >= cross_entropy(forward(m, b.inputs), b.labels);
        ++total;
    }
    CHECK(dominated >= 0.95 * total);
}

TEST_CASE("checkpoint resume is bit-identical") {
    const auto data = small_lt_data();
    const TrainConfig cfg = small_cfg(Method::taet);
    TrainState full = make_train_state(small_model(), cfg);
    const auto all = train(full, data, nullptr, cfg);

    TrainState part = make_train_state(small_model(), cfg);
    train(part, data, nullptr, cfg, 3);
    const fs::path p = fs::temp_directory_path() / "taet_resume.bin";
    save_checkpoint(p, part);
    CHECK(fs::file_size(p) == checkpoint_size(part.model.spec(), part.model.parameter_count()));
    TrainState resumed = load_checkpoint(p);
    CHECK(resumed.next_epoch == 3);
    const auto rest = train(resumed, data, nullptr, cfg);
    CHECK(resumed.model == full.model);
    REQUIRE(rest.size() == 1);
    CHECK(rest[0].loss == all[3].loss);
}

TEST_CASE("checkpoint size is parameters plus velocity plus a fixed header") {
    const Model m = small_model();
    const std::size_t p = m.parameter_count();
    CHECK(checkpoint_size(m.spec(), p) == 112 + 8 * 1 + 16 * p);
}

TEST_CASE("corrupted or truncated checkpoints are rejected") {
    const TrainState s = make_train_state(small_model(), small_cfg(Method::taet));
    const fs::path p = fs::temp_directory_path() / "taet_corrupt.bin";
    save_checkpoint(p, s);
    const auto size = fs::file_size(p);
    {
        std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(200);
        f.put('\x7f');
    }
    CHECK_THROWS_WITH_AS(load_checkpoint(p), doctest::Contains("checksum"), std::runtime_error);
    save_checkpoint(p, s);
    fs::resize_file(p, size - 40);
    CHECK_THROWS_AS(load_checkpoint(p), std::runtime_error);
    CHECK_THROWS_AS(load_checkpoint(fs::temp_directory_path() / "taet_missing.bin"), std::runtime_error);
}

TEST_CASE("epoch csv round trip") {
    const auto r = train_taet(small_model(), small_lt_data(), small_cfg(Method::taet));
    const fs::path p = fs::temp_directory_path() / "taet_epochs.csv";
    write_epoch_csv(p, r.records);
    std::ifstream in(p);
    std::string header;
    std::getline(in, header);
    CHECK(header == "epoch,stage,loss,clean_ba,robust_ba,lr,seconds");
    const auto back = read_epoch_csv(p);
    REQUIRE(back.size() == r.records.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].loss == r.records[i].loss);
        CHECK(back[i].stage == r.records[i].stage);
        CHECK(back[i].seconds == r.records[i].seconds);
    }
}

TEST_CASE("probe records balanced accuracies") {
    const auto data = small_lt_data();
    const Dataset probe = gen_gaussian_mixture({3, 4, 3.0, 20}, 9);
    TrainConfig cfg = small_cfg(Method::taet);
    cfg.probe_size = 30;
    const auto r = train_taet(small_model(), data, cfg, &probe);
    for (const auto& rec : r.records) {
        CHECK(rec.clean_ba >= 0.0);
        CHECK(rec.clean_ba <= 1.0);
        CHECK(rec.robust_ba <= 1.0);
    }
}
