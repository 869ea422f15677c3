// Copyright (C) 2026 Persona contributors
// SPDX-License-Identifier: Apache-2.0
//
// Subject-adaptive matching attention. For every concept k in the target
// prompt, target descriptors gated by the concept mask M_k are matched against
// the reference branch descriptors with a dense cosine cost volume; the argmax
// flow warps the reference self-attention values onto the target grid:
//
//   V_k      = V_ref_k[flow_k(x)] * M_k(x)
//   V_W      = sum_k V_k + V_trg * (1 - clip(sum_k M_k, 0, 1))
//   output   = softmax(Q_trg K_trg^T / sqrt(d)) V_W
//
// Fields are (H*W) x C matrices; masks are (H*W) x 1 columns.

#pragma once

#include "persona/attention_maps.hpp"
#include "persona/autograd.hpp"
#include "persona/concepts.hpp"

#include <span>
#include <vector>

namespace persona::matching {

inline constexpr double kCosineEps = 1e-12;

// Min-max normalization to [0, 1]; a constant map normalizes to all zeros.
Matrix normalize_minmax(const Matrix& map);
ag::Var normalize_minmax(const ag::Var& map);

// Mean over heads, layers and the concept's token positions, min-max normalized.
Matrix concept_mask(const AttentionMapSet& maps, const concepts::ConceptRef& token, int res);
ag::Var concept_mask_var(const AttentionMapSet& maps, const concepts::ConceptRef& token, int res);

// C(x, y) = cos((psi_trg * M)(x), psi_ref(y)); zero when either norm vanishes.
Matrix cost_volume(const Matrix& target, const Matrix& reference, const Matrix& mask);

// Per-row argmax; ties resolve to the lowest reference index.
std::vector<int> semantic_flow(const Matrix& cost);

Matrix warp_values(const Matrix& reference_values, std::span<const int> flow, const Matrix& mask);

// V_W decomposed as warped_sum + V_trg * complement so the substitution can be
// applied inside a differentiable forward pass.
struct ValueInjection {
    Matrix warped_sum;  // N x C
    Matrix complement;  // N x 1

    ag::Var apply(const ag::Var& target_values) const;
};

ValueInjection make_injection(std::span<const Matrix> warped, std::span<const Matrix> masks, Eigen::Index locations,
                              Eigen::Index channels);

Matrix aggregate_values(std::span<const Matrix> warped, const Matrix& target_values, std::span<const Matrix> masks);

Matrix sama_attention(const Matrix& Q, const Matrix& K, const Matrix& V_W);

// Full per-concept pipeline: cost volume, flow and masked warp.
struct ConceptMatch {
    Matrix cost;
    std::vector<int> flow;
    Matrix warped;
};

ConceptMatch match_concept(const Matrix& target_desc, const Matrix& reference_desc, const Matrix& mask,
                           const Matrix& reference_values);

}  // namespace persona::matching
