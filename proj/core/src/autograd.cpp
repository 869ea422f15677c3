// Copyright (C) 2026 Persona contributors
// SPDX-License-Identifier: Apache-2.0

#include "persona/autograd.hpp"

#include "persona/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_set>

namespace persona::ag {

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
    }
}

void require_scalar(const Var& s, const char* op) {
    if (s.rows() != 1 || s.cols() != 1) {
        throw ShapeError(std::string(op) + ": expected a 1x1 scalar");
    }
}

Node& parent(Node& n, std::size_t i) { return *n.parents[i]; }

}  // namespace

void Node::accumulate(const Matrix& g) {
    if (!requires_grad) return;
    if (grad.size() == 0) {
        grad = g;
    } else {
        grad += g;
    }
}

Var::Var() : node_(std::make_shared<Node>()) {}

Var::Var(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

const Matrix& Var::grad() const {
    if (node_->grad.size() == 0) {
        node_->grad = Matrix::Zero(node_->value.rows(), node_->value.cols());
    }
    return node_->grad;
}

double Var::scalar() const {
    if (rows() != 1 || cols() != 1) throw ShapeError("Var::scalar: not a 1x1 value");
    return node_->value(0, 0);
}

void Var::zero_grad() { node_->grad.resize(0, 0); }

void Var::backward() const {
    if (rows() != 1 || cols() != 1) throw ShapeError("Var::backward: root must be 1x1");
    if (!node_->requires_grad) return;

    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    // Iterative post-order DFS; the tape can be thousands of nodes deep.
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->parents.size()) {
            Node* p = n->parents[idx++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    for (Node* n : order) {
        if (!n->parents.empty()) n->grad.resize(0, 0);
    }
    node_->grad = Matrix::Ones(1, 1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && n->grad.size() != 0) n->backward(*n);
    }
}

Var make_op(Matrix value, std::span<const Var> parents, std::function<void(Node&)> backward) {
    Var out;
    out.node_->value = std::move(value);
    const bool any = std::any_of(parents.begin(), parents.end(),
                                 [](const Var& p) { return p.requires_grad(); });
    if (any) {
        out.node_->requires_grad = true;
        out.node_->parents.reserve(parents.size());
        for (const auto& p : parents) out.node_->parents.push_back(p.node());
        out.node_->backward = std::move(backward);
    }
    return out;
}

Var make_op(Matrix value, std::initializer_list<Var> parents, std::function<void(Node&)> backward) {
    return make_op(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
                   std::move(backward));
}

Var matmul(const Var& a, const Var& b) {
    if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions differ");
    return make_op(a.value() * b.value(), {a, b}, [](Node& n) {
        Node& pa = parent(n, 0);
        Node& pb = parent(n, 1);
        if (pa.requires_grad) pa.accumulate(n.grad * pb.value.transpose());
        if (pb.requires_grad) pb.accumulate(pa.value.transpose() * n.grad);
    });
}

Var matmul_nt(const Var& a, const Var& b) {
    if (a.cols() != b.cols()) throw ShapeError("matmul_nt: column counts differ");
    return make_op(a.value() * b.value().transpose(), {a, b}, [](Node& n) {
        Node& pa = parent(n, 0);
        Node& pb = parent(n, 1);
        if (pa.requires_grad) pa.accumulate(n.grad * pb.value);
        if (pb.requires_grad) pb.accumulate(n.grad.transpose() * pa.value);
    });
}

Var transpose(const Var& a) {
    return make_op(a.value().transpose(), {a},
                   [](Node& n) { parent(n, 0).accumulate(n.grad.transpose()); });
}

Var kron(const Var& a, const Var& b) {
    const Matrix& A = a.value();
    const Matrix& B = b.value();
    const auto br = B.rows(), bc = B.cols();
    Matrix out(A.rows() * br, A.cols() * bc);
    for (Eigen::Index i = 0; i < A.rows(); ++i)
        for (Eigen::Index j = 0; j < A.cols(); ++j) out.block(i * br, j * bc, br, bc) = A(i, j) * B;
    return make_op(std::move(out), {a, b}, [br, bc](Node& n) {
        Node& pa = parent(n, 0);
        Node& pb = parent(n, 1);
        const auto ar = pa.value.rows(), ac = pa.value.cols();
        if (pa.requires_grad) {
            Matrix ga(ar, ac);
            for (Eigen::Index i = 0; i < ar; ++i)
                for (Eigen::Index j = 0; j < ac; ++j)
                    ga(i, j) = n.grad.block(i * br, j * bc, br, bc).cwiseProduct(pb.value).sum();
            pa.accumulate(ga);
        }
        if (pb.requires_grad) {
            Matrix gb = Matrix::Zero(br, bc);
            for (Eigen::Index i = 0; i < ar; ++i)
                for (Eigen::Index j = 0; j < ac; ++j)
                    gb += pa.value(i, j) * n.grad.block(i * br, j * bc, br, bc);
            pb.accumulate(gb);
        }
    });
}

Var add(const Var& a, const Var& b) {
    require_same_shape(a, b, "add");
    return make_op(a.value() + b.value(), {a, b}, [](Node& n) {
        parent(n, 0).accumulate(n.grad);
        parent(n, 1).accumulate(n.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a, b, "sub");
    return make_op(a.value() - b.value(), {a, b}, [](Node& n) {
        parent(n, 0).accumulate(n.grad);
        parent(n, 1).accumulate(-n.grad);
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a, b, "mul");
    return make_op(a.value().cwiseProduct(b.value()), {a, b}, [](Node& n) {
        Node& pa = parent(n, 0);
        Node& pb = parent(n, 1);
        if (pa.requires_grad) pa.accumulate(n.grad.cwiseProduct(pb.value));
        if (pb.requires_grad) pb.accumulate(n.grad.cwiseProduct(pa.value));
    });
}

Var div(const Var& a, const Var& b) {
    require_same_shape(a, b, "div");
    return make_op(a.value().cwiseQuotient(b.value()), {a, b}, [](Node& n) {
        Node& pa = parent(n, 0);
        Node& pb = parent(n, 1);
        if (pa.requires_grad) pa.accumulate(n.grad.cwiseQuotient(pb.value));
        if (pb.requires_grad) {
            pb.accumulate(-n.grad.cwiseProduct(n.value).cwiseQuotient(pb.value));
        }
    });
}

Var maximum(const Var& a, const Var& b) {
    require_same_shape(a, b, "maximum");
    return make_op(a.value().cwiseMax(b.value()), {a, b}, [](Node& n) {
        Node& pa = parent(n, 0);
        Node& pb = parent(n, 1);
        const Matrix pick_a = (pa.value.array() >= pb.value.array()).cast<double>().matrix();
        if (pa.requires_grad) pa.accumulate(n.grad.cwiseProduct(pick_a));
        if (pb.requires_grad) {
            pb.accumulate(n.grad.cwiseProduct((1.0 - pick_a.array()).matrix()));
        }
    });
}

Var scale(const Var& a, double s) {
    return make_op(a.value() * s, {a}, [s](Node& n) { parent(n, 0).accumulate(n.grad * s); });
}

Var add_scalar(const Var& a, double s) {
    return make_op((a.value().array() + s).matrix(), {a},
                   [](Node& n) { parent(n, 0).accumulate(n.grad); });
}

Var square(const Var& a) {
    return make_op(a.value().cwiseAbs2(), {a}, [](Node& n) {
        Node& pa = parent(n, 0);
        pa.accumulate(2.0 * n.grad.cwiseProduct(pa.value));
    });
}

Var sqrt(const Var& a) {
    return make_op(a.value().cwiseSqrt(), {a}, [](Node& n) {
        parent(n, 0).accumulate((0.5 * n.grad.array() / n.value.array()).matrix());
    });
}

Var clamp(const Var& a, double lo, double hi) {
    return make_op(a.value().cwiseMax(lo).cwiseMin(hi), {a}, [lo, hi](Node& n) {
        Node& pa = parent(n, 0);
        const Matrix inside =
            ((pa.value.array() > lo) && (pa.value.array() < hi)).cast<double>().matrix();
        pa.accumulate(n.grad.cwiseProduct(inside));
    });
}

Var silu(const Var& a) {
    const Matrix sig = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
    return make_op(a.value().cwiseProduct(sig), {a}, [sig](Node& n) {
        Node& pa = parent(n, 0);
        const auto d = sig.array() * (1.0 + pa.value.array() * (1.0 - sig.array()));
        pa.accumulate((n.grad.array() * d).matrix());
    });
}

Var add_rowvec(const Var& a, const Var& r) {
    if (r.rows() != 1 || r.cols() != a.cols()) throw ShapeError("add_rowvec: expected 1 x cols");
    return make_op(a.value().rowwise() + r.value().row(0), {a, r}, [](Node& n) {
        parent(n, 0).accumulate(n.grad);
        parent(n, 1).accumulate(n.grad.colwise().sum());
    });
}

Var mul_rowvec(const Var& a, const Var& r) {
    if (r.rows() != 1 || r.cols() != a.cols()) throw ShapeError("mul_rowvec: expected 1 x cols");
    Matrix out = a.value() * r.value().row(0).asDiagonal();
    return make_op(std::move(out), {a, r}, [](Node& n) {
        Node& pa = parent(n, 0);
        Node& pr = parent(n, 1);
        if (pa.requires_grad) pa.accumulate(n.grad * pr.value.row(0).asDiagonal());
        if (pr.requires_grad) pr.accumulate(n.grad.cwiseProduct(pa.value).colwise().sum());
    });
}

Var div_rowvec(const Var& a, const Var& r) {
    if (r.rows() != 1 || r.cols() != a.cols()) throw ShapeError("div_rowvec: expected 1 x cols");
    const RowVector inv = r.value().row(0).cwiseInverse();
    Matrix out = a.value() * inv.asDiagonal();
    return make_op(std::move(out), {a, r}, [inv](Node& n) {
        Node& pa = parent(n, 0);
        Node& pr = parent(n, 1);
        if (pa.requires_grad) pa.accumulate(n.grad * inv.asDiagonal());
        if (pr.requires_grad) {
            // d(a/r)/dr = -a/r^2 = -out/r
            RowVector g = -(n.grad.cwiseProduct(n.value).colwise().sum()).cwiseProduct(inv);
            pr.accumulate(g);
        }
    });
}

Var mul_colvec(const Var& a, const Var& c) {
    if (c.cols() != 1 || c.rows() != a.rows()) throw ShapeError("mul_colvec: expected rows x 1");
    Matrix out = c.value().col(0).asDiagonal() * a.value();
    return make_op(std::move(out), {a, c}, [](Node& n) {
        Node& pa = parent(n, 0);
        Node& pc = parent(n, 1);
        if (pa.requires_grad) pa.accumulate(pc.value.col(0).asDiagonal() * n.grad);
        if (pc.requires_grad) pc.accumulate(n.grad.cwiseProduct(pa.value).rowwise().sum());
    });
}

Var mul_scalar(const Var& a, const Var& s) {
    require_scalar(s, "mul_scalar");
    return make_op(a.value() * s.value()(0, 0), {a, s}, [](Node& n) {
        Node& pa = parent(n, 0);
        Node& ps = parent(n, 1);
        if (pa.requires_grad) pa.accumulate(n.grad * ps.value(0, 0));
        if (ps.requires_grad) {
            ps.accumulate(Matrix::Constant(1, 1, n.grad.cwiseProduct(pa.value).sum()));
        }
    });
}

Var div_scalar(const Var& a, const Var& s) {
    require_scalar(s, "div_scalar");
    const double inv = 1.0 / s.value()(0, 0);
    return make_op(a.value() * inv, {a, s}, [inv](Node& n) {
        Node& pa = parent(n, 0);
        Node& ps = parent(n, 1);
        if (pa.requires_grad) pa.accumulate(n.grad * inv);
        if (ps.requires_grad) {
            ps.accumulate(Matrix::Constant(1, 1, -n.grad.cwiseProduct(n.value).sum() * inv));
        }
    });
}

Var sub_scalar(const Var& a, const Var& s) {
    require_scalar(s, "sub_scalar");
    return make_op((a.value().array() - s.value()(0, 0)).matrix(), {a, s}, [](Node& n) {
        parent(n, 0).accumulate(n.grad);
        parent(n, 1).accumulate(Matrix::Constant(1, 1, -n.grad.sum()));
    });
}

Var sum(const Var& a) {
    return make_op(Matrix::Constant(1, 1, a.value().sum()), {a}, [](Node& n) {
        Node& pa = parent(n, 0);
        pa.accumulate(Matrix::Constant(pa.value.rows(), pa.value.cols(), n.grad(0, 0)));
    });
}

Var mean(const Var& a) {
    const double inv = 1.0 / static_cast<double>(a.value().size());
    return make_op(Matrix::Constant(1, 1, a.value().mean()), {a}, [inv](Node& n) {
        Node& pa = parent(n, 0);
        pa.accumulate(Matrix::Constant(pa.value.rows(), pa.value.cols(), n.grad(0, 0) * inv));
    });
}

Var sum_squares(const Var& a) {
    return make_op(Matrix::Constant(1, 1, a.value().squaredNorm()), {a}, [](Node& n) {
        Node& pa = parent(n, 0);
        pa.accumulate(2.0 * n.grad(0, 0) * pa.value);
    });
}

Var mean_rows(const Var& a) {
    const double inv = 1.0 / static_cast<double>(a.rows());
    return make_op(a.value().colwise().mean(), {a}, [inv](Node& n) {
        Node& pa = parent(n, 0);
        pa.accumulate(n.grad.replicate(pa.value.rows(), 1) * inv);
    });
}

namespace {

Var extremum(const Var& a, bool take_max) {
    Eigen::Index r = 0, c = 0;
    // Column-major scan; ties resolve to the first entry visited.
    double best = a.value()(0, 0);
    for (Eigen::Index j = 0; j < a.cols(); ++j)
        for (Eigen::Index i = 0; i < a.rows(); ++i) {
            const double v = a.value()(i, j);
            if (take_max ? v > best : v < best) {
                best = v;
                r = i;
                c = j;
            }
        }
    return make_op(Matrix::Constant(1, 1, best), {a}, [r, c](Node& n) {
        Node& pa = parent(n, 0);
        Matrix g = Matrix::Zero(pa.value.rows(), pa.value.cols());
        g(r, c) = n.grad(0, 0);
        pa.accumulate(g);
    });
}

}  // namespace

Var max_all(const Var& a) {
    if (a.value().size() == 0) throw ShapeError("max_all: empty input");
    return extremum(a, true);
}

Var min_all(const Var& a) {
    if (a.value().size() == 0) throw ShapeError("min_all: empty input");
    return extremum(a, false);
}

Var col_norms(const Var& a, double eps) {
    const RowVector raw = a.value().colwise().norm();
    RowVector guarded = raw.cwiseMax(eps);
    return make_op(guarded, {a}, [raw, eps](Node& n) {
        Node& pa = parent(n, 0);
        Matrix g = Matrix::Zero(pa.value.rows(), pa.value.cols());
        for (Eigen::Index j = 0; j < pa.value.cols(); ++j) {
            if (raw(j) > eps) g.col(j) = pa.value.col(j) * (n.grad(0, j) / raw(j));
        }
        pa.accumulate(g);
    });
}

Var softmax_rows(const Var& a) {
    Matrix out = a.value();
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        const double m = out.row(i).maxCoeff();
        out.row(i) = (out.row(i).array() - m).exp().matrix();
        out.row(i) /= out.row(i).sum();
    }
    return make_op(std::move(out), {a}, [](Node& n) {
        const Eigen::VectorXd dots = n.grad.cwiseProduct(n.value).rowwise().sum();
        Matrix g = n.value.cwiseProduct(n.grad - dots.replicate(1, n.value.cols()));
        parent(n, 0).accumulate(g);
    });
}

Var layer_norm_rows(const Var& a, double eps) {
    const auto cols = static_cast<double>(a.cols());
    const Eigen::VectorXd mu = a.value().rowwise().mean();
    Matrix centered = a.value().colwise() - mu;
    const Eigen::VectorXd inv_sigma =
        ((centered.cwiseAbs2().rowwise().sum() / cols).array() + eps).rsqrt().matrix();
    Matrix out = inv_sigma.asDiagonal() * centered;
    return make_op(std::move(out), {a}, [inv_sigma, cols](Node& n) {
        const Eigen::VectorXd mean_g = n.grad.rowwise().sum() / cols;
        const Eigen::VectorXd mean_gy = n.grad.cwiseProduct(n.value).rowwise().sum() / cols;
        Matrix g = n.grad;
        g.colwise() -= mean_g;
        g -= mean_gy.asDiagonal() * n.value;
        parent(n, 0).accumulate(inv_sigma.asDiagonal() * g);
    });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || count < 0 || start + count > a.cols()) throw ShapeError("slice_cols: out of range");
    return make_op(a.value().middleCols(start, count), {a}, [start, count](Node& n) {
        Node& pa = parent(n, 0);
        Matrix g = Matrix::Zero(pa.value.rows(), pa.value.cols());
        g.middleCols(start, count) = n.grad;
        pa.accumulate(g);
    });
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || count < 0 || start + count > a.rows()) throw ShapeError("slice_rows: out of range");
    return make_op(a.value().middleRows(start, count), {a}, [start, count](Node& n) {
        Node& pa = parent(n, 0);
        Matrix g = Matrix::Zero(pa.value.rows(), pa.value.cols());
        g.middleRows(start, count) = n.grad;
        pa.accumulate(g);
    });
}

Var hcat(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("hcat: no inputs");
    Eigen::Index cols = 0;
    for (const auto& p : parts) {
        if (p.rows() != parts[0].rows()) throw ShapeError("hcat: row counts differ");
        cols += p.cols();
    }
    Matrix out(parts[0].rows(), cols);
    std::vector<Eigen::Index> offsets;
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        out.middleCols(at, p.cols()) = p.value();
        offsets.push_back(at);
        at += p.cols();
    }
    return make_op(std::move(out), parts, [offsets](Node& n) {
        for (std::size_t i = 0; i < n.parents.size(); ++i) {
            Node& p = *n.parents[i];
            if (p.requires_grad) p.accumulate(n.grad.middleCols(offsets[i], p.value.cols()));
        }
    });
}

Var vcat(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("vcat: no inputs");
    Eigen::Index rows = 0;
    for (const auto& p : parts) {
        if (p.cols() != parts[0].cols()) throw ShapeError("vcat: column counts differ");
        rows += p.rows();
    }
    Matrix out(rows, parts[0].cols());
    std::vector<Eigen::Index> offsets;
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        out.middleRows(at, p.rows()) = p.value();
        offsets.push_back(at);
        at += p.rows();
    }
    return make_op(std::move(out), parts, [offsets](Node& n) {
        for (std::size_t i = 0; i < n.parents.size(); ++i) {
            Node& p = *n.parents[i];
            if (p.requires_grad) p.accumulate(n.grad.middleRows(offsets[i], p.value.rows()));
        }
    });
}

}  // namespace persona::ag
