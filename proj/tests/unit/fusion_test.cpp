// Copyright (C) 2026 Persona contributors
// SPDX-License-Identifier: Apache-2.0

#include "persona/errors.hpp"
#include "persona/fusion.hpp"
#include "persona/pipeline.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace persona;
using namespace persona::fusion;
using persona::test::rel_err;
using persona::test::uniform;

namespace {

// Normal equations solved by SVD pseudo-inverse.
Matrix svd_oracle(const FusionProblem& p) {
    const Eigen::Index k = p.deltas[0].cols();
    Matrix lhs = p.mu * Matrix::Identity(k, k), rhs = Matrix::Zero(p.deltas[0].rows(), k);
    for (std::size_t n = 0; n < p.deltas.size(); ++n) {
        lhs += p.activations[n] * p.activations[n].transpose();
        rhs += p.deltas[n] * p.activations[n] * p.activations[n].transpose();
    }
    return lhs.jacobiSvd(Eigen::ComputeFullU | Eigen::ComputeFullV).solve(rhs.transpose()).transpose();
}

FusionProblem random_problem(std::mt19937_64& rng, int N, int d, int k, int samples, double mu) {
    FusionProblem p;
    for (int n = 0; n < N; ++n) {
        p.deltas.push_back(uniform(rng, d, k));
        p.activations.push_back(uniform(rng, k, samples));
    }
    p.mu = mu;
    return p;
}

}  // namespace

TEST(FuseLayer, MatchesSvdOracle) {
    std::mt19937_64 rng(1);
    for (int t = 0; t < 20; ++t) {
        const auto p = random_problem(rng, 2 + t % 2, 6, 8, 5, 1e-3);
        EXPECT_LT(rel_err(fuse_layer(p), svd_oracle(p)), 1e-9);
    }
}

TEST(FuseLayer, IdenticalUpdatesAreFixedPoint) {
    std::mt19937_64 rng(2);
    auto p = random_problem(rng, 3, 4, 6, 10, 0.0);
    p.deltas[1] = p.deltas[2] = p.deltas[0];
    EXPECT_LT(rel_err(fuse_layer(p), p.deltas[0]), 1e-10);
}

TEST(FuseLayer, ObjectiveNoWorseThanInputsOrAverage) {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 20; ++t) {
        const auto p = random_problem(rng, 3, 5, 5, 4, 0.0);
        const double best = fusion_objective(fuse_layer(p), p);
        Matrix avg = Matrix::Zero(5, 5);
        for (const auto& d : p.deltas) {
            EXPECT_LE(best, fusion_objective(d, p) + 1e-12);
            avg += d / 3.0;
        }
        EXPECT_LE(best, fusion_objective(avg, p) + 1e-12);
    }
}

TEST(FuseLayer, PermutationInvariant) {
    std::mt19937_64 rng(4);
    auto p = random_problem(rng, 3, 6, 6, 7, 1e-4);
    const Matrix a = fuse_layer(p);
    std::swap(p.deltas[0], p.deltas[2]);
    std::swap(p.activations[0], p.activations[2]);
    EXPECT_LT(rel_err(fuse_layer(p), a), 1e-8);
}

TEST(FuseLayer, LargeMuShrinksToZero) {
    std::mt19937_64 rng(5);
    auto p = random_problem(rng, 2, 4, 4, 6, 1e12);
    EXPECT_LT(fuse_layer(p).norm(), 1e-9);
}

TEST(FuseLayer, OrthogonalSupportsPartitionExactly) {
    std::mt19937_64 rng(6);
    const Matrix Q = uniform(rng, 8, 8).householderQr().householderQ();
    FusionProblem p;
    p.deltas = {uniform(rng, 5, 8), uniform(rng, 5, 8)};
    p.activations = {Q.leftCols(4), Q.rightCols(4)};
    p.mu = 0.0;
    const Matrix fused = fuse_layer(p);
    for (int n = 0; n < 2; ++n) {
        EXPECT_LT(relative_residual(fused, p.deltas[n], p.activations[n]), 1e-10);
    }
}

TEST(FuseLayer, SingularWithoutRegularizationThrows) {
    FusionProblem p;
    p.deltas = {Matrix::Ones(3, 4)};
    p.activations = {Matrix::Ones(4, 1)};
    p.mu = 0.0;
    EXPECT_THROW(fuse_layer(p), NumericalError);
    p.mu = -1.0;
    EXPECT_THROW(fuse_layer(p), ConfigError);
}

TEST(DefaultMu, ScaledTrace) {
    std::mt19937_64 rng(7);
    const std::vector<Matrix> acts = {uniform(rng, 4, 6), uniform(rng, 4, 3)};
    const double trace = (acts[0] * acts[0].transpose() + acts[1] * acts[1].transpose()).trace();
    EXPECT_NEAR(default_mu(acts), 1e-4 * trace / 4.0, 1e-18);
}

TEST(FuseUpdates, LayerSetMismatchThrowsAndResidualCount) {
    std::mt19937_64 rng(8);
    ConceptUpdate a{"a", {{"l1", uniform(rng, 3, 3)}, {"l2", uniform(rng, 3, 3)}},
                    {{"l1", uniform(rng, 3, 5)}, {"l2", uniform(rng, 3, 5)}}};
    ConceptUpdate b = a;
    b.name = "b";
    const std::vector<ConceptUpdate> ok = {a, b};
    EXPECT_EQ(fuse_updates(ok).residuals.size(), 4u);  // N x L
    b.deltas.erase("l2");
    const std::vector<ConceptUpdate> bad = {a, b};
    EXPECT_THROW(fuse_updates(bad), ConfigError);
}

namespace {

struct Trained {
    testbed::ToyDenoiser model;
    AdapterCheckpoint red, blue;
};

const Trained& trained() {
    static const Trained t = [] {
        Trained out{testbed::ToyDenoiser(), {}, {}};
        for (const char* name : {"redring", "bluesquare"}) {
            testbed::DatasetSpec spec;
            spec.subject = testbed::builtin_shape(name);
            RunConfig c;
            c.concept_name = name;
            c.train_steps = 3;
            auto ck = pipeline::train_single(c, testbed::make_dataset(spec, 1), out.model).checkpoint;
            (std::string(name) == "redring" ? out.red : out.blue) = std::move(ck);
        }
        return out;
    }();
    return t;
}

}  // namespace

TEST(CollectActivations, ShapeAndDeterminism) {
    const auto& t = trained();
    const auto reg = make_registry(t.model, t.red.concepts);
    const auto w = materialize(t.model, t.red.deltas());
    ProbeSet probes;
    probes.templates = {"a photo of <concept>"};
    probes.timesteps = {500, 100};
    const auto a = collect_activations(t.model, w, reg, "redring", probes);
    const auto b = collect_activations(t.model, w, reg, "redring", probes);
    const int S = t.model.config().latent_side;
    EXPECT_EQ(a.at("enc.attn1.to_q").cols(), 2 * S * S);
    EXPECT_EQ(a.at("mid.attn1.to_q").cols(), 2 * (S / 2) * (S / 2));
    for (const auto& [layer, X] : a) {
        EXPECT_TRUE(bitwise_equal(X, b.at(layer))) << layer;
        EXPECT_GT(X.colwise().norm().minCoeff(), 0.0) << layer;
    }
    probes.templates.clear();
    EXPECT_THROW(collect_activations(t.model, w, reg, "redring", probes), ConfigError);
}

TEST(FuseModel, SingleAdapterGeneratesIdentically) {
    const auto& t = trained();
    const std::vector<AdapterCheckpoint> one = {t.red};
    const auto fused = fuse_model(t.model, one);
    const auto reg = make_registry(t.model, fused.concepts);
    const auto a = pipeline::generate_single(t.model, materialize(t.model, fused.deltas), reg, "a photo of <redring>",
                                             6, 3);
    const auto b = pipeline::generate_single(t.model, materialize(t.model, t.red.deltas()),
                                             make_registry(t.model, t.red.concepts), "a photo of <redring>", 6, 3);
    EXPECT_TRUE(bitwise_equal(a.latent, b.latent));
}

TEST(FuseModel, TwoAdaptersResidualReportAndConcepts) {
    const auto& t = trained();
    const std::vector<AdapterCheckpoint> two = {t.red, t.blue};
    const auto fused = fuse_model(t.model, two);
    EXPECT_EQ(fused.residuals.size(), 2 * t.red.layers.size());
    ASSERT_EQ(fused.concepts.size(), 2u);
    EXPECT_EQ(fused.concepts[0].v_rand, t.red.concepts[0].v_rand);
    EXPECT_EQ(fused.concepts[1].v_class, t.blue.concepts[0].v_class);
    const std::vector<AdapterCheckpoint> dup = {t.red, t.red};
    EXPECT_THROW(fuse_model(t.model, dup), ConfigError);
}
