// Copyright (C) 2026 Persona contributors
// SPDX-License-Identifier: Apache-2.0
//
// Layout-consistency guidance. Concept activation maps are sharpened around a
// threshold, compared with the maps captured at the first sampler step via a
// soft IoU, and the latent is nudged down the gradient of the resulting loss.

#pragma once

#include "persona/autograd.hpp"

#include <span>
#include <vector>

namespace persona::layout {

inline constexpr double kIouEps = 1e-8;

struct GuidanceParams {
    double lambda = 0.1;  // adjustment added above / subtracted below tau
    double tau = 0.3;
    double phi0 = 10.0;   // initial step size, latent units
};

// A = M + lambda where M > tau, M - lambda elsewhere, clamped to [0, 1].
Matrix refine_activation(const Matrix& map, double lambda, double tau);
ag::Var refine_activation(const ag::Var& map, double lambda, double tau);

// sum(A_t * A_T) / sum(max(A_t, A_T)); 0 / 0 counts as a perfect match.
double soft_iou(const Matrix& current, const Matrix& anchor);

// sum_k (1 - soft_iou(A_t[k], A_T[k])). Optionally reports the per-concept ratios.
ag::Var layout_loss(std::span<const ag::Var> current, std::span<const ag::Var> anchors,
                    std::vector<double>* ious = nullptr);
double layout_loss(std::span<const Matrix> current, std::span<const Matrix> anchors,
                   std::vector<double>* ious = nullptr);

// z' = z - phi * grad. A non-finite gradient leaves z unchanged and warns.
Matrix guidance_step(const Matrix& latent, const Matrix& loss_grad, double phi, bool* applied = nullptr);

// phi_0 * (1 - step / total).
double decay_schedule(int step_index, int total_steps, double phi0);

}  // namespace persona::layout
