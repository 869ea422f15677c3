// Copyright (C) 2026 Persona contributors
// SPDX-License-Identifier: Apache-2.0

#include "persona/adapters.hpp"
#include "persona/checkpoint.hpp"
#include "persona/fusion.hpp"
#include "persona/layout.hpp"
#include "persona/matching_attention.hpp"
#include "persona/random.hpp"
#include "persona/testbed.hpp"

#include <benchmark/benchmark.h>

using namespace persona;

namespace {

void BM_KronaWedEffectiveWeight(benchmark::State& state) {
    const int d = static_cast<int>(state.range(0));
    const adapters::BaseWeight base{"bench", gaussian(d, d, 0.1, 1)};
    auto ad = adapters::init_krona_wed(base, 16, 2);
    ad.kron.B.setConstant(0.01);
    for (auto _ : state) benchmark::DoNotOptimize(adapters::effective_weight(ad));
}
BENCHMARK(BM_KronaWedEffectiveWeight)->Arg(64)->Arg(256);

void BM_FuseLayer(benchmark::State& state) {
    const int k = static_cast<int>(state.range(0));
    fusion::FusionProblem p;
    for (int n = 0; n < 3; ++n) {
        p.deltas.push_back(gaussian(k, k, 1.0, 10 + n));
        p.activations.push_back(gaussian(k, 4 * k, 1.0, 20 + n));
    }
    p.mu = fusion::default_mu(p.activations);
    for (auto _ : state) benchmark::DoNotOptimize(fusion::fuse_layer(p));
}
BENCHMARK(BM_FuseLayer)->Arg(64)->Arg(256);

void BM_SemanticFlow(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const Matrix target = gaussian(n, 64, 1.0, 3), reference = gaussian(n, 64, 1.0, 4);
    const Matrix values = gaussian(n, 64, 1.0, 5);
    const Matrix mask = Matrix::Ones(n, 1);
    for (auto _ : state) {
        const Matrix cost = matching::cost_volume(target, reference, mask);
        const auto flow = matching::semantic_flow(cost);
        benchmark::DoNotOptimize(matching::warp_values(values, flow, mask));
    }
}
BENCHMARK(BM_SemanticFlow)->Arg(64)->Arg(256);

void BM_SoftIou(benchmark::State& state) {
    const Matrix a = gaussian(16, 16, 1.0, 6).cwiseAbs(), b = gaussian(16, 16, 1.0, 7).cwiseAbs();
    for (auto _ : state) {
        benchmark::DoNotOptimize(layout::soft_iou(layout::refine_activation(a, 0.1, 0.3),
                                                  layout::refine_activation(b, 0.1, 0.3)));
    }
}
BENCHMARK(BM_SoftIou);

void BM_DenoiserForward(benchmark::State& state) {
    const testbed::ToyDenoiser model;
    const auto reg = make_registry(model, {});
    const Matrix ctx = model.text_features(reg, concepts::bind_prompt(reg, "a photo of a red ring"));
    const Matrix z = testbed::initial_latent(model.config(), 1);
    const testbed::BaseWeights w;
    for (auto _ : state) {
        benchmark::DoNotOptimize(model.forward(ag::Var::constant(z), 500, ag::Var::constant(ctx), w, {}));
    }
}
BENCHMARK(BM_DenoiserForward)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
