// Copyright (C) 2026 Persona contributors
// SPDX-License-Identifier: Apache-2.0

#include "persona/attention_maps.hpp"

#include "persona/errors.hpp"

namespace persona {

Matrix upsample_matrix(int r, int R) {
    if (r < 1 || R % r != 0) throw ShapeError("upsample_matrix: target side must be a multiple of source side");
    const int s = R / r;
    Matrix U = Matrix::Zero(R * R, r * r);
    for (int i = 0; i < R; ++i)
        for (int j = 0; j < R; ++j) U(i * R + j, (i / s) * r + j / s) = 1.0;
    return U;
}

Matrix downsample_matrix(int R, int r) {
    if (r < 1 || R % r != 0) throw ShapeError("downsample_matrix: source side must be a multiple of target side");
    const int s = R / r;
    Matrix D = Matrix::Zero(r * r, R * R);
    const double w = 1.0 / (s * s);
    for (int i = 0; i < R; ++i)
        for (int j = 0; j < R; ++j) D((i / s) * r + j / s, i * R + j) = w;
    return D;
}

Matrix to_grid(const Matrix& column, int side) {
    if (column.size() != static_cast<Eigen::Index>(side) * side) throw ShapeError("to_grid: size mismatch");
    Matrix g(side, side);
    for (int i = 0; i < side; ++i)
        for (int j = 0; j < side; ++j) g(i, j) = column(i * side + j, 0);
    return g;
}

Matrix from_grid(const Matrix& grid) {
    Matrix c(grid.rows() * grid.cols(), 1);
    for (Eigen::Index i = 0; i < grid.rows(); ++i)
        for (Eigen::Index j = 0; j < grid.cols(); ++j) c(i * grid.cols() + j, 0) = grid(i, j);
    return c;
}

ag::Var AttentionMapSet::token_map(std::span<const int> positions, int out_res, int max_res) const {
    if (positions.empty()) throw ConfigError("token_map: no token positions given");
    std::vector<ag::Var> per_layer;
    for (const auto& rec : layers_) {
        if (rec.resolution > max_res) continue;
        std::vector<ag::Var> cols;
        for (int p : positions) {
            if (p < 0 || p >= rec.probs.cols()) throw ConfigError("token_map: token position out of range");
            cols.push_back(ag::slice_cols(rec.probs, p, 1));
        }
        ag::Var m = cols[0];
        for (std::size_t i = 1; i < cols.size(); ++i) m = ag::add(m, cols[i]);
        m = ag::scale(m, 1.0 / static_cast<double>(cols.size()));
        if (rec.resolution != out_res) {
            if (out_res % rec.resolution != 0) throw ShapeError("token_map: incompatible layer resolution");
            m = ag::matmul(ag::Var::constant(upsample_matrix(rec.resolution, out_res)), m);
        }
        per_layer.push_back(m);
    }
    if (per_layer.empty()) throw ConfigError("token_map: no cross-attention layers recorded");
    ag::Var acc = per_layer[0];
    for (std::size_t i = 1; i < per_layer.size(); ++i) acc = ag::add(acc, per_layer[i]);
    return ag::scale(acc, 1.0 / static_cast<double>(per_layer.size()));
}

}  // namespace persona
