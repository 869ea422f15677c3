// Copyright (C) 2026 Persona contributors
// SPDX-License-Identifier: Apache-2.0

#include "persona/errors.hpp"
#include "persona/objectives.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace persona;
using namespace persona::objectives;
using persona::test::uniform;

TEST(DenoiseLoss, ExactNoiseIsZero) {
    std::mt19937_64 rng(1);
    const Matrix eps = uniform(rng, 16, 4);
    EXPECT_EQ(denoise_loss(eps, eps), 0.0);
    EXPECT_EQ(denoise_loss(ag::Var::constant(eps), eps).scalar(), 0.0);
}

TEST(DenoiseLoss, ConstantOffsetGivesSquare) {
    std::mt19937_64 rng(2);
    const Matrix eps = uniform(rng, 16, 4);
    EXPECT_NEAR(denoise_loss((eps.array() + 0.3).matrix(), eps), 0.09, 1e-14);
}

TEST(DenoiseLoss, HandRolledMse) {
    std::mt19937_64 rng(3);
    const Matrix a = uniform(rng, 3, 2), b = uniform(rng, 3, 2);
    double s = 0;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 2; ++j) s += (a(i, j) - b(i, j)) * (a(i, j) - b(i, j));
    EXPECT_NEAR(denoise_loss(ag::Var::constant(a), b).scalar(), s / 6.0, 1e-15);
}

TEST(WeakDenoiseLoss, ScalesDenoise) {
    std::mt19937_64 rng(4);
    const Matrix a = uniform(rng, 4, 4), b = uniform(rng, 4, 4);
    EXPECT_EQ(weak_denoise_loss(ag::Var::constant(a), b, 0.0).scalar(), 0.0);
    EXPECT_EQ(weak_denoise_loss(ag::Var::constant(b), b, 0.01).scalar(), 0.0);
    EXPECT_NEAR(weak_denoise_loss(ag::Var::constant(a), b, 0.01).scalar(), 0.01 * denoise_loss(a, b), 1e-16);
}

TEST(ContrastiveLoss, Cases) {
    Matrix fs(2, 2);
    fs << 1, 0, 1, 0;  // pooled = (1, 0)
    Matrix ortho(1, 2), same(1, 2);
    ortho << 0, 3;
    same << 2, 0;
    EXPECT_NEAR(contrastive_loss(ag::Var::constant(ortho), ag::Var::constant(fs), 0.001).scalar(), 0.0, 1e-18);
    EXPECT_NEAR(contrastive_loss(ag::Var::constant(same), ag::Var::constant(fs), 0.001).scalar(), 0.001, 1e-15);
    EXPECT_EQ(contrastive_loss(ag::Var::constant(Matrix::Zero(1, 2)), ag::Var::constant(fs), 0.001).scalar(), 0.0);

    std::mt19937_64 rng(5);
    const Matrix fi = uniform(rng, 1, 6), text = uniform(rng, 4, 6);
    const RowVector pooled = text.colwise().mean();
    const double cos = fi.row(0).dot(pooled) / (fi.norm() * pooled.norm());
    EXPECT_NEAR(contrastive_loss(ag::Var::constant(fi), ag::Var::constant(text), 0.5).scalar(), 0.5 * cos, 1e-15);
    EXPECT_THROW(contrastive_loss(ag::Var::constant(uniform(rng, 1, 5)), ag::Var::constant(text), 1.0), ShapeError);
}

namespace {

Matrix col(std::initializer_list<double> v) {
    Matrix m(static_cast<Eigen::Index>(v.size()), 1);
    Eigen::Index i = 0;
    for (double x : v) m(i++, 0) = x;
    return m;
}

}  // namespace

TEST(AttentionRegLoss, WorkedExample) {
    // Maps flattened row-major from [[0.5,0],[0,0]] and [[0.2,0],[0,0.3]]; mask [[1,0],[0,0]].
    const std::vector<ConceptAttention> maps = {
        {ag::Var::constant(col({0.5, 0, 0, 0})), ag::Var::constant(col({0.2, 0, 0, 0.3}))}};
    const std::vector<Matrix> masks = {col({1, 0, 0, 0})};
    LossWeights w;
    w.lambda_attn = 0.001;
    EXPECT_NEAR(attention_reg_loss(maps, masks, w).scalar(), 2.0e-5, 1e-18);
}

TEST(AttentionRegLoss, ZeroMapsAndFullMask) {
    std::mt19937_64 rng(6);
    const std::vector<ConceptAttention> zero = {
        {ag::Var::constant(Matrix::Zero(4, 1)), ag::Var::constant(Matrix::Zero(4, 1))}};
    const std::vector<Matrix> m = {uniform(rng, 4, 1, 0, 1)};
    EXPECT_EQ(attention_reg_loss(zero, m, {}).scalar(), 0.0);

    const Matrix cls = uniform(rng, 4, 1, 0, 1);
    const std::vector<ConceptAttention> maps = {{ag::Var::constant(uniform(rng, 4, 1, 0, 1)), ag::Var::constant(cls)}};
    const std::vector<Matrix> ones = {Matrix::Ones(4, 1)};
    EXPECT_NEAR(attention_reg_loss(maps, ones, {}).scalar(), 0.001 * 0.5 * cls.squaredNorm(), 1e-18);
}

TEST(AttentionRegLoss, SwapMasksExchangesGates) {
    const std::vector<ConceptAttention> maps = {
        {ag::Var::constant(col({0.5, 0, 0, 0})), ag::Var::constant(col({0.2, 0, 0, 0.3}))}};
    const std::vector<Matrix> masks = {col({1, 0, 0, 0})};
    LossWeights w;
    w.lambda_attn = 1.0;
    w.swap_masks = true;
    // rand inside mask: 0.25; class outside mask: 0.09.
    EXPECT_NEAR(attention_reg_loss(maps, masks, w).scalar(), 0.5 * (0.25 + 0.09), 1e-15);
}

TEST(AttentionRegLoss, LinearInLambdaAndNonNegative) {
    std::mt19937_64 rng(7);
    for (int t = 0; t < 50; ++t) {
        const std::vector<ConceptAttention> maps = {
            {ag::Var::constant(uniform(rng, 16, 1, 0, 1)), ag::Var::constant(uniform(rng, 16, 1, 0, 1))}};
        const std::vector<Matrix> masks = {(uniform(rng, 16, 1, 0, 1).array() > 0.5).cast<double>().matrix()};
        LossWeights a, b;
        a.lambda_attn = 0.001;
        b.lambda_attn = 0.003;
        const double la = attention_reg_loss(maps, masks, a).scalar();
        EXPECT_GE(la, 0.0);
        EXPECT_NEAR(attention_reg_loss(maps, masks, b).scalar(), 3.0 * la, 1e-15);
    }
}

TEST(AttentionRegLoss, MonotoneInOffTargetEntries) {
    const Matrix mask = col({1, 1, 0, 0});
    const Matrix rand = col({0.3, 0.3, 0.2, 0.2}), cls = col({0.1, 0.1, 0.4, 0.4});
    const std::vector<Matrix> masks = {mask};
    const std::vector<ConceptAttention> base = {{ag::Var::constant(rand), ag::Var::constant(cls)}};
    const double l0 = attention_reg_loss(base, masks, {}).scalar();
    Matrix rand_up = rand, cls_up = cls;
    rand_up(2, 0) += 0.1;  // rand off the mask
    cls_up(0, 0) += 0.1;   // class on the mask
    const std::vector<ConceptAttention> r = {{ag::Var::constant(rand_up), ag::Var::constant(cls)}};
    const std::vector<ConceptAttention> c = {{ag::Var::constant(rand), ag::Var::constant(cls_up)}};
    EXPECT_GT(attention_reg_loss(r, masks, {}).scalar(), l0);
    EXPECT_GT(attention_reg_loss(c, masks, {}).scalar(), l0);
}

TEST(AttentionRegLoss, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(8);
    const Matrix mask = (uniform(rng, 16, 1, 0, 1).array() > 0.5).cast<double>().matrix();
    const Matrix cls = uniform(rng, 16, 1, 0, 1);
    const std::vector<Matrix> masks = {mask};
    LossWeights w;
    w.lambda_attn = 1.0;
    auto op = [&](const ag::Var& rand) {
        const std::vector<ConceptAttention> maps = {{rand, ag::Var::constant(cls)}};
        return attention_reg_loss(maps, masks, w);
    };
    EXPECT_LT(persona::test::check_gradient(op, uniform(rng, 16, 1, 0, 1), Matrix::Ones(1, 1)), 1e-6);
}

TEST(AttentionRegLoss, ResolutionMismatchThrows) {
    const std::vector<ConceptAttention> maps = {
        {ag::Var::constant(Matrix::Zero(4, 1)), ag::Var::constant(Matrix::Zero(4, 1))}};
    const std::vector<Matrix> masks = {Matrix::Zero(16, 1)};
    EXPECT_THROW(attention_reg_loss(maps, masks, {}), ShapeError);
}

TEST(TotalLoss, SumOfTerms) {
    auto c = [](double v) { return ag::Var::constant(Matrix::Constant(1, 1, v)); };
    EXPECT_EQ(total_loss(c(0), c(0), c(0), c(0)).total.scalar(), 0.0);
    EXPECT_NEAR(total_loss(c(1.5), c(0.01), c(0.0002), c(3e-5)).total.scalar(), 1.5 + 0.01 + 0.0002 + 3e-5, 1e-15);
}

TEST(PrepareMask, BinarizesAfterAreaDownsample) {
    Matrix grid = Matrix::Zero(4, 4);
    grid.block(0, 0, 2, 2).setOnes();  // top-left quadrant
    grid(2, 2) = 1.0;                  // a quarter of the bottom-right quadrant
    const Matrix m = prepare_mask(grid, 2);
    EXPECT_EQ(m, col({1, 0, 0, 0}));
}
