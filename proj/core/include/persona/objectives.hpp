// Copyright (C) 2026 Persona contributors
// SPDX-License-Identifier: Apache-2.0
//
// Single-concept training objectives: disentangled denoising terms, the
// contrastive embedding term and the mask-based attention regularizer
//
//   L_attn = lambda_attn * sum_i 1/2 ( ||CA(V_rand) * (1 - M_i)||_F^2
//                                    + ||CA(V_class) * M_i||_F^2 )
//
// with `swap_masks` exchanging M_i and (1 - M_i) between the two terms.

#pragma once

#include "persona/autograd.hpp"

#include <span>

namespace persona::objectives {

struct LossWeights {
    double lambda_attn = 0.001;
    double lambda_w = 0.01;
    double lambda_con = 0.001;
    bool swap_masks = false;
};

// Head- and layer-averaged cross-attention maps of the two concept tokens for
// one training image, captured during the text-only (weak) pass.
struct ConceptAttention {
    ag::Var rand_map;
    ag::Var class_map;
};

// Mean squared error between predicted and true noise.
ag::Var denoise_loss(const ag::Var& predicted, const Matrix& noise);
double denoise_loss(const Matrix& predicted, const Matrix& noise);

// lambda_w * MSE for the prediction made with text-only conditioning.
ag::Var weak_denoise_loss(const ag::Var& predicted_text_only, const Matrix& noise, double lambda_w);

// lambda_con * cos(f_i, mean_rows(f_s)). A zero-norm operand yields 0 and a warning.
ag::Var contrastive_loss(const ag::Var& image_feature, const ag::Var& text_features, double lambda_con);

ag::Var attention_reg_loss(std::span<const ConceptAttention> maps, std::span<const Matrix> masks,
                           const LossWeights& weights);

struct LossTerms {
    ag::Var denoise;
    ag::Var weak_denoise;
    ag::Var contrastive;
    ag::Var attention;
    ag::Var total;
};

// Sum of the four terms; each term stays available for logging.
LossTerms total_loss(ag::Var denoise, ag::Var weak_denoise, ag::Var contrastive, ag::Var attention);

// Area-average a square mask down to `res` and binarize at 0.5.
Matrix prepare_mask(const Matrix& mask_grid, int res);

}  // namespace persona::objectives
