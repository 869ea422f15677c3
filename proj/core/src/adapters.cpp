// Copyright (C) 2026 Persona contributors
// SPDX-License-Identifier: Apache-2.0

#include "persona/adapters.hpp"

#include "persona/errors.hpp"
#include "persona/random.hpp"

#include <spdlog/spdlog.h>

#include <cmath>

namespace persona::adapters {

namespace {

int largest_divisor_at_most(int n, int f) {
    for (int c = std::min(n, f); c > 1; --c)
        if (n % c == 0) return c;
    return 1;
}

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

}  // namespace

AdapterKind parse_adapter_kind(const std::string& name) {
    if (name == "lora") return AdapterKind::Lora;
    if (name == "krona") return AdapterKind::Krona;
    if (name == "krona_wed") return AdapterKind::KronaWed;
    throw ConfigError("unknown adapter kind '" + name + "' (expected lora|krona|krona_wed)");
}

std::string to_string(AdapterKind kind) {
    switch (kind) {
        case AdapterKind::Lora: return "lora";
        case AdapterKind::Krona: return "krona";
        case AdapterKind::KronaWed: return "krona_wed";
    }
    return "unknown";
}

Matrix kron_product(const Matrix& A, const Matrix& B) {
    Matrix out(A.rows() * B.rows(), A.cols() * B.cols());
    for (Eigen::Index i = 0; i < A.rows(); ++i)
        for (Eigen::Index j = 0; j < A.cols(); ++j)
            out.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
    return out;
}

KronShape choose_factors(int d, int k, int f) { return choose_factors(d, k, f, FactorPolicy::Strict); }

KronShape choose_factors(int d, int k, int f, FactorPolicy policy, const std::string& layer_id) {
    if (d < 1 || k < 1 || f < 1) throw ShapeError("choose_factors: dimensions and factor must be >= 1");
    if (policy == FactorPolicy::Strict) {
        if (d % f != 0) {
            throw ShapeError("choose_factors: factor " + std::to_string(f) + " does not divide d=" +
                             std::to_string(d));
        }
        if (k % f != 0) {
            throw ShapeError("choose_factors: factor " + std::to_string(f) + " does not divide k=" +
                             std::to_string(k));
        }
        return {f, f, d / f, k / f};
    }
    const int fd = largest_divisor_at_most(d, f);
    const int fk = largest_divisor_at_most(k, f);
    if (fd != f || fk != f) {
        spdlog::info("layer '{}': factor {} does not divide {}x{}; using ({}, {})", layer_id, f, d, k,
                     fd, fk);
    }
    return {fd, fk, d / fd, k / fk};
}

namespace {

KronFactors init_kron_factors(const BaseWeight& base, int f, std::uint64_t seed, FactorPolicy policy) {
    const KronShape s =
        choose_factors(static_cast<int>(base.d()), static_cast<int>(base.k()), f, policy, base.layer_id);
    KronFactors kf;
    kf.factor = f;
    kf.A = gaussian(s.a1, s.a2, std::sqrt(2.0 / s.a2), seed);
    kf.B = Matrix::Zero(s.b1, s.b2);
    return kf;
}

}  // namespace

DecomposedAdapter init_krona_wed(const BaseWeight& base, int f, std::uint64_t seed, FactorPolicy policy) {
    DecomposedAdapter out{base, init_kron_factors(base, f, seed, policy), {}};
    out.m = base.W0.colwise().norm();
    return out;
}

KronAdapter init_krona(const BaseWeight& base, int f, std::uint64_t seed, FactorPolicy policy) {
    return {base, init_kron_factors(base, f, seed, policy)};
}

LoraAdapter init_lora(const BaseWeight& base, int rank, std::uint64_t seed) {
    if (rank < 1 || rank > std::min(base.d(), base.k())) {
        throw ShapeError("init_lora: rank must lie in [1, min(d, k)]");
    }
    LoraAdapter out{base, {}};
    out.lora.A = gaussian(rank, base.k(), std::sqrt(2.0 / static_cast<double>(base.k())), seed);
    out.lora.B = Matrix::Zero(base.d(), rank);
    return out;
}

namespace {

void check_kron_shape(const BaseWeight& base, const KronFactors& kf) {
    if (kf.A.rows() * kf.B.rows() != base.d() || kf.A.cols() * kf.B.cols() != base.k()) {
        throw ShapeError("Kronecker factors do not tile the base weight of layer '" + base.layer_id + "'");
    }
}

}  // namespace

Matrix direction(const DecomposedAdapter& adapter) {
    check_kron_shape(adapter.base, adapter.kron);
    Matrix v = adapter.base.W0 + kron_product(adapter.kron.A, adapter.kron.B);
    const RowVector n = v.colwise().norm().cwiseMax(kColumnNormEps);
    return v * n.cwiseInverse().asDiagonal();
}

Matrix effective_weight(const DecomposedAdapter& adapter) {
    if (adapter.m.size() != adapter.base.k()) throw ShapeError("effective_weight: m must have length k");
    return direction(adapter) * adapter.m.asDiagonal();
}

Matrix effective_weight(const KronAdapter& adapter) {
    check_kron_shape(adapter.base, adapter.kron);
    return adapter.base.W0 + kron_product(adapter.kron.A, adapter.kron.B);
}

Matrix lora_effective_weight(const BaseWeight& base, const LoraFactors& lora) {
    if (lora.B.rows() != base.d() || lora.A.cols() != base.k() || lora.B.cols() != lora.A.rows()) {
        throw ShapeError("lora_effective_weight: factor shapes do not match layer '" + base.layer_id + "'");
    }
    return base.W0 + lora.B * lora.A;
}

Matrix effective_weight(const LayerAdapter& adapter) {
    return std::visit(overloaded{
                          [](const LoraAdapter& a) { return lora_effective_weight(a.base, a.lora); },
                          [](const KronAdapter& a) { return effective_weight(a); },
                          [](const DecomposedAdapter& a) { return effective_weight(a); },
                          [](const DenseDelta& a) -> Matrix {
                              if (a.delta.rows() != a.base.d() || a.delta.cols() != a.base.k())
                                  throw ShapeError("dense delta does not match layer '" +
                                                   a.base.layer_id + "'");
                              return a.base.W0 + a.delta;
                          },
                      },
                      adapter);
}

Vector adapter_forward(const DecomposedAdapter& adapter, const Vector& x) {
    const BaseWeight& base = adapter.base;
    if (x.size() != base.k()) {
        throw ShapeError("adapter_forward: input length " + std::to_string(x.size()) + " != k=" +
                         std::to_string(base.k()));
    }
    check_kron_shape(base, adapter.kron);
    const Matrix& A = adapter.kron.A;
    const Matrix& B = adapter.kron.B;
    const auto a1 = A.rows(), a2 = A.cols(), b1 = B.rows(), b2 = B.cols();

    // Column j = ja*b2 + l of A(x)B is kron(A[:,ja], B[:,l]); its norm factorizes
    // and its inner product with W0[:,j] is sum_i A(i,ja) * <W0 block i, B[:,l]>.
    RowVector norms(base.k());
    const RowVector a_norm2 = A.colwise().squaredNorm();
    const RowVector b_norm2 = B.colwise().squaredNorm();
    const RowVector w_norm2 = base.W0.colwise().squaredNorm();
    for (Eigen::Index ja = 0; ja < a2; ++ja) {
        for (Eigen::Index l = 0; l < b2; ++l) {
            const Eigen::Index j = ja * b2 + l;
            double cross = 0.0;
            for (Eigen::Index i = 0; i < a1; ++i)
                cross += A(i, ja) * base.W0.col(j).segment(i * b1, b1).dot(B.col(l));
            const double n2 = w_norm2(j) + 2.0 * cross + a_norm2(ja) * b_norm2(l);
            norms(j) = std::max(std::sqrt(std::max(n2, 0.0)), kColumnNormEps);
        }
    }
    const Vector scaled = x.cwiseProduct(adapter.m.transpose()).cwiseQuotient(norms.transpose());

    Vector y = base.W0 * scaled;
    // (A (x) B) v = vec(B V A^T) with V the b2 x a2 column-major view of v.
    const Eigen::Map<const Matrix> V(scaled.data(), b2, a2);
    const Matrix prod = B * V * A.transpose();  // b1 x a1
    y += Eigen::Map<const Vector>(prod.data(), a1 * b1);
    return y;
}

ag::Var effective_weight(const ag::Var& W0, const ag::Var& A, const ag::Var& B, const ag::Var& m,
                         const WedOptions& options) {
    ag::Var v = ag::add(W0, ag::kron(A, B));
    ag::Var norms = ag::col_norms(v, options.eps);
    if (options.detach_norm) norms = ag::Var::constant(norms.value());
    return ag::mul_rowvec(ag::div_rowvec(v, norms), m);
}

ag::Var krona_effective_weight(const ag::Var& W0, const ag::Var& A, const ag::Var& B) {
    return ag::add(W0, ag::kron(A, B));
}

ag::Var lora_effective_weight(const ag::Var& W0, const ag::Var& B, const ag::Var& A) {
    return ag::add(W0, ag::matmul(B, A));
}

std::size_t lora_parameter_count(int d, int k, int rank) {
    return static_cast<std::size_t>(rank) * static_cast<std::size_t>(d + k);
}

std::size_t krona_wed_parameter_count(int /*d*/, int k, const KronShape& s) {
    return static_cast<std::size_t>(s.a1 * s.a2 + s.b1 * s.b2 + k);
}

std::size_t trainable_parameter_count(const LayerAdapter& adapter) {
    return std::visit(overloaded{
                          [](const LoraAdapter& a) -> std::size_t { return a.lora.A.size() + a.lora.B.size(); },
                          [](const KronAdapter& a) -> std::size_t { return a.kron.A.size() + a.kron.B.size(); },
                          [](const DecomposedAdapter& a) -> std::size_t {
                              return a.kron.A.size() + a.kron.B.size() + a.m.size();
                          },
                          [](const DenseDelta& a) -> std::size_t { return a.delta.size(); },
                      },
                      adapter);
}

const BaseWeight& base_of(const LayerAdapter& adapter) {
    return std::visit([](const auto& a) -> const BaseWeight& { return a.base; }, adapter);
}

}  // namespace persona::adapters
