// Copyright (C) 2026 Persona contributors
// SPDX-License-Identifier: Apache-2.0

#include "persona/matching_attention.hpp"

#include "persona/errors.hpp"
#include "persona/nn.hpp"

namespace persona::matching {

namespace {

constexpr double kDegenerateRange = 1e-12;

}  // namespace

Matrix normalize_minmax(const Matrix& map) { return normalize_minmax(ag::Var::constant(map)).value(); }

ag::Var normalize_minmax(const ag::Var& map) {
    ag::Var lo = ag::min_all(map);
    ag::Var hi = ag::max_all(map);
    if (hi.scalar() - lo.scalar() <= kDegenerateRange) {
        return ag::Var::constant(Matrix::Zero(map.rows(), map.cols()));
    }
    return ag::div_scalar(ag::sub_scalar(map, lo), ag::sub(hi, lo));
}

ag::Var concept_mask_var(const AttentionMapSet& maps, const concepts::ConceptRef& token, int res) {
    const std::vector<int> positions = token.all_positions();
    if (positions.empty()) throw ConfigError("concept_mask: concept '" + token.name + "' is absent from the prompt");
    return normalize_minmax(maps.token_map(positions, res));
}

Matrix concept_mask(const AttentionMapSet& maps, const concepts::ConceptRef& token, int res) {
    return concept_mask_var(maps, token, res).value();
}

Matrix cost_volume(const Matrix& target, const Matrix& reference, const Matrix& mask) {
    if (target.cols() != reference.cols()) throw ShapeError("cost_volume: descriptor channel counts differ");
    if (mask.rows() != target.rows() || mask.cols() != 1) throw ShapeError("cost_volume: mask must be locations x 1");
    if (target.rows() != reference.rows()) throw ShapeError("cost_volume: target and reference grids differ");
    Matrix gated = mask.col(0).asDiagonal() * target;
    Vector tn = gated.rowwise().norm();
    Vector rn = reference.rowwise().norm();
    for (Eigen::Index i = 0; i < tn.size(); ++i) tn(i) = tn(i) < kCosineEps ? 0.0 : 1.0 / tn(i);
    for (Eigen::Index i = 0; i < rn.size(); ++i) rn(i) = rn(i) < kCosineEps ? 0.0 : 1.0 / rn(i);
    Matrix c = tn.asDiagonal() * (gated * reference.transpose()) * rn.asDiagonal();
    // Rounding can push perfectly aligned pairs a hair past 1.
    return c.cwiseMax(-1.0).cwiseMin(1.0);
}

std::vector<int> semantic_flow(const Matrix& cost) {
    std::vector<int> flow(static_cast<std::size_t>(cost.rows()), 0);
    for (Eigen::Index x = 0; x < cost.rows(); ++x) {
        Eigen::Index best = 0;
        for (Eigen::Index y = 1; y < cost.cols(); ++y)
            if (cost(x, y) > cost(x, best)) best = y;
        flow[static_cast<std::size_t>(x)] = static_cast<int>(best);
    }
    return flow;
}

Matrix warp_values(const Matrix& reference_values, std::span<const int> flow, const Matrix& mask) {
    if (static_cast<Eigen::Index>(flow.size()) != mask.rows()) throw ShapeError("warp_values: flow/mask size mismatch");
    Matrix out(mask.rows(), reference_values.cols());
    for (Eigen::Index x = 0; x < mask.rows(); ++x) {
        const int y = flow[static_cast<std::size_t>(x)];
        if (y < 0 || y >= reference_values.rows()) throw ShapeError("warp_values: flow index out of range");
        out.row(x) = reference_values.row(y) * mask(x, 0);
    }
    return out;
}

ag::Var ValueInjection::apply(const ag::Var& target_values) const {
    if (target_values.rows() != warped_sum.rows() || target_values.cols() != warped_sum.cols()) {
        throw ShapeError("value injection: target value field does not match the injection grid");
    }
    return ag::add(ag::mul_colvec(target_values, ag::Var::constant(complement)), ag::Var::constant(warped_sum));
}

ValueInjection make_injection(std::span<const Matrix> warped, std::span<const Matrix> masks, Eigen::Index locations,
                              Eigen::Index channels) {
    if (warped.size() != masks.size()) throw ShapeError("aggregate_values: one mask per warped field required");
    ValueInjection inj{Matrix::Zero(locations, channels), Matrix::Zero(locations, 1)};
    Matrix mask_sum = Matrix::Zero(locations, 1);
    for (std::size_t k = 0; k < warped.size(); ++k) {
        if (warped[k].rows() != locations || warped[k].cols() != channels) {
            throw ShapeError("aggregate_values: warped field grid mismatch");
        }
        if (masks[k].rows() != locations || masks[k].cols() != 1) throw ShapeError("aggregate_values: mask grid mismatch");
        inj.warped_sum += warped[k];
        mask_sum += masks[k];
    }
    inj.complement = (1.0 - mask_sum.array().min(1.0).max(0.0)).matrix();
    return inj;
}

Matrix aggregate_values(std::span<const Matrix> warped, const Matrix& target_values, std::span<const Matrix> masks) {
    return make_injection(warped, masks, target_values.rows(), target_values.cols())
        .apply(ag::Var::constant(target_values))
        .value();
}

Matrix sama_attention(const Matrix& Q, const Matrix& K, const Matrix& V_W) {
    if (Q.cols() != K.cols()) throw ShapeError("sama_attention: query and key widths differ");
    return nn::scaled_dot_product_attention(ag::Var::constant(Q), ag::Var::constant(K), ag::Var::constant(V_W))
        .out.value();
}

ConceptMatch match_concept(const Matrix& target_desc, const Matrix& reference_desc, const Matrix& mask,
                           const Matrix& reference_values) {
    ConceptMatch m;
    m.cost = cost_volume(target_desc, reference_desc, mask);
    m.flow = semantic_flow(m.cost);
    m.warped = warp_values(reference_values, m.flow, mask);
    return m;
}

}  // namespace persona::matching
