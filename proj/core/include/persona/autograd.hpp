// Copyright (C) 2026 Persona contributors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode automatic differentiation over dense double matrices.
//
// A Var is a shared handle to a graph node. Nodes built from operands that do
// not require gradients are plain constants and keep no parents, so inference
// code pays only for the Eigen arithmetic. Calling backward() on a 1x1 result
// accumulates d(result)/d(leaf) into every reachable leaf that requires grad.

#pragma once

#include <Eigen/Dense>

#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <vector>

namespace persona {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

namespace ag {

struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    void accumulate(const Matrix& g);
};

class Var {
public:
    Var();
    explicit Var(Matrix value, bool requires_grad = false);

    static Var constant(Matrix value) { return Var(std::move(value), false); }
    static Var parameter(Matrix value) { return Var(std::move(value), true); }

    const Matrix& value() const { return node_->value; }
    // Leaf parameters only; used by optimizers to update in place.
    Matrix& mutable_value() { return node_->value; }
    const Matrix& grad() const;
    bool requires_grad() const { return node_->requires_grad; }

    Eigen::Index rows() const { return node_->value.rows(); }
    Eigen::Index cols() const { return node_->value.cols(); }
    double scalar() const;

    // Root must be 1x1. Intermediate gradients are reset before propagation;
    // leaf gradients accumulate across calls until zero_grad().
    void backward() const;
    void zero_grad();

    const std::shared_ptr<Node>& node() const { return node_; }

private:
    friend Var make_op(Matrix value, std::initializer_list<Var> parents,
                       std::function<void(Node&)> backward);
    friend Var make_op(Matrix value, std::span<const Var> parents,
                       std::function<void(Node&)> backward);
    std::shared_ptr<Node> node_;
};

// Builds an op node. When no parent requires grad the result is a constant and
// `backward` is dropped. Inside `backward`, parents are indexed in the order given.
Var make_op(Matrix value, std::initializer_list<Var> parents, std::function<void(Node&)> backward);
Var make_op(Matrix value, std::span<const Var> parents, std::function<void(Node&)> backward);

// Linear algebra.
Var matmul(const Var& a, const Var& b);
Var matmul_nt(const Var& a, const Var& b);  // a * b^T
Var transpose(const Var& a);
Var kron(const Var& a, const Var& b);

// Elementwise, same shape.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var maximum(const Var& a, const Var& b);  // ties route the gradient to `a`

Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var square(const Var& a);
Var sqrt(const Var& a);
Var clamp(const Var& a, double lo, double hi);
Var silu(const Var& a);

// Broadcasting. Row vectors are 1 x cols, column vectors rows x 1, scalars 1 x 1.
Var add_rowvec(const Var& a, const Var& r);
Var mul_rowvec(const Var& a, const Var& r);
Var div_rowvec(const Var& a, const Var& r);
Var mul_colvec(const Var& a, const Var& c);
Var mul_scalar(const Var& a, const Var& s);
Var div_scalar(const Var& a, const Var& s);
Var sub_scalar(const Var& a, const Var& s);

// Reductions.
Var sum(const Var& a);
Var mean(const Var& a);
Var sum_squares(const Var& a);
Var mean_rows(const Var& a);                // 1 x cols
Var max_all(const Var& a);                  // gradient to the first maximal entry
Var min_all(const Var& a);
Var col_norms(const Var& a, double eps);    // 1 x cols, max(||a_j||, eps)

// Row-wise normalizations.
Var softmax_rows(const Var& a);
Var layer_norm_rows(const Var& a, double eps = 1e-5);

// Slicing and concatenation.
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index n);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index n);
Var hcat(std::span<const Var> parts);
Var vcat(std::span<const Var> parts);

}  // namespace ag
}  // namespace persona
