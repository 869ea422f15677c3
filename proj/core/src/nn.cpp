// Copyright (C) 2026 Persona contributors
// SPDX-License-Identifier: Apache-2.0

#include "persona/nn.hpp"

#include "persona/errors.hpp"

#include <cmath>

namespace persona::nn {

AttentionOutput scaled_dot_product_attention(const ag::Var& Q, const ag::Var& K, const ag::Var& V) {
    if (Q.cols() == 0) throw ShapeError("attention: head dimension must be positive");
    if (K.rows() != V.rows()) throw ShapeError("attention: key and value counts differ");
    ag::Var scores = ag::scale(ag::matmul_nt(Q, K), 1.0 / std::sqrt(static_cast<double>(Q.cols())));
    ag::Var probs = ag::softmax_rows(scores);
    return {ag::matmul(probs, V), probs};
}

}  // namespace persona::nn
