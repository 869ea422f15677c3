// Copyright (C) 2026 Persona contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "persona/autograd.hpp"

namespace persona::nn {

struct AttentionOutput {
    ag::Var out;    // queries x value width
    ag::Var probs;  // queries x keys
};

// softmax(Q K^T / sqrt(d)) V with d = Q.cols().
AttentionOutput scaled_dot_product_attention(const ag::Var& Q, const ag::Var& K, const ag::Var& V);

// y = x W^T for row-major activations and a d x k weight.
inline ag::Var linear(const ag::Var& x, const ag::Var& weight) { return ag::matmul_nt(x, weight); }

}  // namespace persona::nn
