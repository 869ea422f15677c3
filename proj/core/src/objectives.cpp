// Copyright (C) 2026 Persona contributors
// SPDX-License-Identifier: Apache-2.0

#include "persona/objectives.hpp"

#include "persona/attention_maps.hpp"
#include "persona/errors.hpp"

#include <spdlog/spdlog.h>

namespace persona::objectives {

ag::Var denoise_loss(const ag::Var& predicted, const Matrix& noise) {
    if (predicted.rows() != noise.rows() || predicted.cols() != noise.cols()) {
        throw ShapeError("denoise_loss: prediction and noise shapes differ");
    }
    return ag::mean(ag::square(ag::sub(predicted, ag::Var::constant(noise))));
}

double denoise_loss(const Matrix& predicted, const Matrix& noise) {
    return denoise_loss(ag::Var::constant(predicted), noise).scalar();
}

ag::Var weak_denoise_loss(const ag::Var& predicted_text_only, const Matrix& noise, double lambda_w) {
    return ag::scale(denoise_loss(predicted_text_only, noise), lambda_w);
}

ag::Var contrastive_loss(const ag::Var& image_feature, const ag::Var& text_features, double lambda_con) {
    ag::Var pooled = ag::mean_rows(text_features);
    if (image_feature.rows() != 1 || image_feature.cols() != pooled.cols()) {
        throw ShapeError("contrastive_loss: image feature must be 1 x text width");
    }
    const double ni = image_feature.value().norm();
    const double ns = pooled.value().norm();
    if (ni == 0.0 || ns == 0.0) {
        spdlog::warn("contrastive_loss: zero-norm feature, term set to 0");
        return ag::Var::constant(Matrix::Zero(1, 1));
    }
    ag::Var dot = ag::sum(ag::mul(image_feature, pooled));
    ag::Var norms = ag::mul(ag::sqrt(ag::sum_squares(image_feature)), ag::sqrt(ag::sum_squares(pooled)));
    return ag::scale(ag::div(dot, norms), lambda_con);
}

ag::Var attention_reg_loss(std::span<const ConceptAttention> maps, std::span<const Matrix> masks,
                           const LossWeights& weights) {
    if (maps.size() != masks.size()) throw ShapeError("attention_reg_loss: one mask per image required");
    ag::Var total = ag::Var::constant(Matrix::Zero(1, 1));
    for (std::size_t i = 0; i < maps.size(); ++i) {
        const Matrix& m = masks[i];
        for (const ag::Var* v : {&maps[i].rand_map, &maps[i].class_map}) {
            if (v->rows() != m.rows() || v->cols() != m.cols()) {
                throw ShapeError("attention_reg_loss: mask resolution does not match attention map");
            }
        }
        const Matrix outside = (1.0 - m.array()).matrix();
        const Matrix& rand_gate = weights.swap_masks ? m : outside;
        const Matrix& class_gate = weights.swap_masks ? outside : m;
        ag::Var r = ag::sum_squares(ag::mul(maps[i].rand_map, ag::Var::constant(rand_gate)));
        ag::Var c = ag::sum_squares(ag::mul(maps[i].class_map, ag::Var::constant(class_gate)));
        total = ag::add(total, ag::scale(ag::add(r, c), 0.5));
    }
    return ag::scale(total, weights.lambda_attn);
}

LossTerms total_loss(ag::Var denoise, ag::Var weak_denoise, ag::Var contrastive, ag::Var attention) {
    LossTerms t{std::move(denoise), std::move(weak_denoise), std::move(contrastive), std::move(attention), {}};
    t.total = ag::add(ag::add(t.denoise, t.weak_denoise), ag::add(t.contrastive, t.attention));
    return t;
}

Matrix prepare_mask(const Matrix& mask_grid, int res) {
    if (mask_grid.rows() != mask_grid.cols()) throw ShapeError("prepare_mask: mask must be square");
    const int side = static_cast<int>(mask_grid.rows());
    Matrix col = from_grid(mask_grid);
    if (side != res) col = downsample_matrix(side, res) * col;
    return (col.array() >= 0.5).cast<double>().matrix();
}

}  // namespace persona::objectives
