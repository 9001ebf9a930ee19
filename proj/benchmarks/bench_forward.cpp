// Microbenchmarks for the forward pass, interventions, and attribution.

#include <benchmark/benchmark.h>

#include "selfrepair/selfrepair.hpp"

using namespace selfrepair;

namespace {

Model bench_model() { return init_toy_model(default_toy_config(), 3); }

TokenSequence bench_tokens(int len, std::uint64_t seed) {
    return make_random_corpus(1, len, default_toy_config().vocab_size, seed).sequences[0];
}

void BM_Forward(benchmark::State& state) {
    const Model model = bench_model();
    const TokenSequence tokens = bench_tokens(static_cast<int>(state.range(0)), 1);
    for (auto _ : state) {
        const ForwardTrace trace = forward(model, tokens);
        benchmark::DoNotOptimize(trace.logits.data());
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Forward)->Arg(16)->Arg(64);

void BM_ResampleAblation(benchmark::State& state) {
    const Model model = bench_model();
    const TokenSequence tokens = bench_tokens(64, 1);
    const ForwardTrace clean = forward(model, tokens);
    const ForwardTrace source = forward(model, bench_tokens(64, 2));
    InterventionSpec spec;
    spec.target = ComponentId::head(static_cast<int>(state.range(0)), 0);
    spec.mode = AblationMode::resample(source);
    ForwardTrace ablated;
    for (auto _ : state) {
        ablated = run_with_intervention(model, tokens, spec, &clean, std::move(ablated));
        benchmark::DoNotOptimize(ablated.logits.data());
    }
}
BENCHMARK(BM_ResampleAblation)->DenseRange(0, 3);

void BM_DirectEffectAll(benchmark::State& state) {
    const Model model = bench_model();
    const ForwardTrace trace = forward(model, bench_tokens(64, 1));
    int pos = 0;
    for (auto _ : state) {
        const DirectEffectTable table = direct_effect_all(model, trace, pos);
        benchmark::DoNotOptimize(table.centered_correct_logit);
        pos = (pos + 1) % trace.scoring_positions();
    }
}
BENCHMARK(BM_DirectEffectAll);

void BM_NeuronEffects(benchmark::State& state) {
    const Model model = bench_model();
    const ForwardTrace trace = forward(model, bench_tokens(64, 1));
    for (auto _ : state) {
        const std::vector<double> des =
            neuron_direct_effects(model, trace, model.config().n_layers - 1, 5);
        benchmark::DoNotOptimize(des.data());
    }
}
BENCHMARK(BM_NeuronEffects);

void BM_ReconstructionCheck(benchmark::State& state) {
    const Model model = bench_model();
    const ForwardTrace trace = forward(model, bench_tokens(64, 1));
    for (auto _ : state) benchmark::DoNotOptimize(residual_reconstruction_check(trace));
}
BENCHMARK(BM_ReconstructionCheck);

} // namespace

BENCHMARK_MAIN();
