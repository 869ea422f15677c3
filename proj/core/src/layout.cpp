// Copyright (C) 2026 Persona contributors
// SPDX-License-Identifier: Apache-2.0

#include "persona/layout.hpp"

#include "persona/errors.hpp"

#include <spdlog/spdlog.h>

namespace persona::layout {

namespace {

Matrix refine_offsets(const Matrix& map, double lambda, double tau) {
    return (map.array() > tau).select(Matrix::Constant(map.rows(), map.cols(), lambda),
                                      Matrix::Constant(map.rows(), map.cols(), -lambda));
}

}  // namespace

Matrix refine_activation(const Matrix& map, double lambda, double tau) {
    return (map + refine_offsets(map, lambda, tau)).cwiseMax(0.0).cwiseMin(1.0);
}

ag::Var refine_activation(const ag::Var& map, double lambda, double tau) {
    ag::Var shifted = ag::add(map, ag::Var::constant(refine_offsets(map.value(), lambda, tau)));
    return ag::clamp(shifted, 0.0, 1.0);
}

double soft_iou(const Matrix& current, const Matrix& anchor) {
    if (current.rows() != anchor.rows() || current.cols() != anchor.cols()) {
        throw ShapeError("soft_iou: map shapes differ");
    }
    const double uni = current.cwiseMax(anchor).sum();
    if (uni < kIouEps) return 1.0;
    return current.cwiseProduct(anchor).sum() / uni;
}

ag::Var layout_loss(std::span<const ag::Var> current, std::span<const ag::Var> anchors,
                    std::vector<double>* ious) {
    if (current.empty()) throw ShapeError("layout_loss: at least one concept required");
    if (current.size() != anchors.size()) throw ShapeError("layout_loss: one anchor per concept required");
    if (ious) ious->clear();
    ag::Var total = ag::Var::constant(Matrix::Zero(1, 1));
    for (std::size_t k = 0; k < current.size(); ++k) {
        if (current[k].rows() != anchors[k].rows() || current[k].cols() != anchors[k].cols()) {
            throw ShapeError("layout_loss: map grids differ");
        }
        ag::Var uni = ag::sum(ag::maximum(current[k], anchors[k]));
        if (uni.scalar() < kIouEps) {
            spdlog::debug("layout_loss: concept {} has all-zero maps; term set to 0", k);
            if (ious) ious->push_back(1.0);
            continue;
        }
        ag::Var inter = ag::sum(ag::mul(current[k], anchors[k]));
        ag::Var ratio = ag::div(inter, uni);
        if (ious) ious->push_back(ratio.scalar());
        total = ag::add(total, ag::add_scalar(ag::scale(ratio, -1.0), 1.0));
    }
    return total;
}

double layout_loss(std::span<const Matrix> current, std::span<const Matrix> anchors, std::vector<double>* ious) {
    std::vector<ag::Var> c, a;
    for (const auto& m : current) c.push_back(ag::Var::constant(m));
    for (const auto& m : anchors) a.push_back(ag::Var::constant(m));
    return layout_loss(c, a, ious).scalar();
}

Matrix guidance_step(const Matrix& latent, const Matrix& loss_grad, double phi, bool* applied) {
    if (latent.rows() != loss_grad.rows() || latent.cols() != loss_grad.cols()) {
        throw ShapeError("guidance_step: gradient shape differs from latent");
    }
    if (!loss_grad.allFinite()) {
        spdlog::warn("guidance_step: non-finite layout gradient, update skipped");
        if (applied) *applied = false;
        return latent;
    }
    if (applied) *applied = true;
    return latent - phi * loss_grad;
}

double decay_schedule(int step_index, int total_steps, double phi0) {
    if (total_steps < 1 || step_index < 0 || step_index >= total_steps) {
        throw ConfigError("decay_schedule: step index out of range");
    }
    return phi0 * (1.0 - static_cast<double>(step_index) / static_cast<double>(total_steps));
}

}  // namespace persona::layout
