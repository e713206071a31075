#include <benchmark/benchmark.h>

#include "taet/attacks.hpp"
#include "taet/data.hpp"
#include "taet/model.hpp"

namespace {

struct Fixture {
    taet::Model model;
    taet::Batch batch;
};

Fixture make_fixture(std::size_t batch_size) {
    const taet::ModelSpec spec{10, {64, 64}, 5, taet::Activation::relu};
    const auto data = taet::gen_gaussian_mixture({5, 10, 3.0, 200}, 7);
    const auto idx = taet::batch_indices(data.size(), batch_size, 7, 0).front();
    return {taet::init_model(spec, 7), taet::gather(data, idx)};
}

void BM_Forward(benchmark::State& state) {
    const auto f = make_fixture(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(taet::forward(f.model, f.batch.inputs));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Forward)->Arg(32)->Arg(128);

void BM_LossAndGrads(benchmark::State& state) {
    const auto f = make_fixture(static_cast<std::size_t>(state.range(0)));
    const taet::LossSelector ce = taet::loss::CrossEntropy{};
    for (auto _ : state) {
        benchmark::DoNotOptimize(taet::loss_and_grads(f.model, f.batch.inputs, f.batch.labels, ce, {true, true}));
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_LossAndGrads)->Arg(32)->Arg(128);

void BM_Pgd10(benchmark::State& state) {
    const auto f = make_fixture(128);
    taet::AttackConfig cfg;
    cfg.num_steps = 10;
    for (auto _ : state) benchmark::DoNotOptimize(taet::pgd(f.model, f.batch.inputs, f.batch.labels, cfg, 1));
}
BENCHMARK(BM_Pgd10);

}  // namespace

BENCHMARK_MAIN();
