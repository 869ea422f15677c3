// Copyright (C) 2026 Persona contributors
// SPDX-License-Identifier: Apache-2.0
//
// Weight-update parameterizations for linear sublayers of attention blocks:
//
//   lora       W' = W0 + B A                          (rank-r baseline)
//   krona      W' = W0 + A (x) B                      (Kronecker product update)
//   krona_wed  W' = m * (W0 + A (x) B) / ||W0 + A (x) B||_c
//
// ||.||_c is the per-column Euclidean norm and m is a learned per-column
// magnitude (length k). All weights are d x k and act as y = W x.

#pragma once

#include "persona/autograd.hpp"

#include <cstdint>
#include <string>
#include <variant>

namespace persona::adapters {

inline constexpr double kColumnNormEps = 1e-8;

struct BaseWeight {
    std::string layer_id;
    Matrix W0;  // d x k, frozen

    Eigen::Index d() const { return W0.rows(); }
    Eigen::Index k() const { return W0.cols(); }
};

struct LoraFactors {
    Matrix B;  // d x r
    Matrix A;  // r x k

    Eigen::Index rank() const { return A.rows(); }
};

struct KronShape {
    int a1 = 1, a2 = 1, b1 = 1, b2 = 1;

    friend bool operator==(const KronShape&, const KronShape&) = default;
};

struct KronFactors {
    Matrix A;  // a1 x a2
    Matrix B;  // b1 x b2
    int factor = 1;

    KronShape shape() const {
        return {static_cast<int>(A.rows()), static_cast<int>(A.cols()), static_cast<int>(B.rows()),
                static_cast<int>(B.cols())};
    }
};

struct LoraAdapter {
    BaseWeight base;
    LoraFactors lora;
};

struct KronAdapter {
    BaseWeight base;
    KronFactors kron;
};

// Kronecker update with weight decomposition into magnitude and direction.
struct DecomposedAdapter {
    BaseWeight base;
    KronFactors kron;
    RowVector m;  // 1 x k
};

// Dense update produced by fusion; stored as-is rather than refactored.
struct DenseDelta {
    BaseWeight base;
    Matrix delta;
};

using LayerAdapter = std::variant<LoraAdapter, KronAdapter, DecomposedAdapter, DenseDelta>;

enum class AdapterKind { Lora, Krona, KronaWed };

AdapterKind parse_adapter_kind(const std::string& name);
std::string to_string(AdapterKind kind);

enum class FactorPolicy {
    Strict,          // f must divide both dimensions
    LargestDivisor,  // per dimension, fall back to the largest divisor <= f
};

Matrix kron_product(const Matrix& A, const Matrix& B);

// Single-factor split (f, f, d/f, k/f). Throws ShapeError naming the
// dimension f does not divide.
KronShape choose_factors(int d, int k, int f);
KronShape choose_factors(int d, int k, int f, FactorPolicy policy, const std::string& layer_id = {});

// B = 0, A ~ N(0, 2/a2), m = ||W0||_c.
DecomposedAdapter init_krona_wed(const BaseWeight& base, int f, std::uint64_t seed,
                                 FactorPolicy policy = FactorPolicy::Strict);
KronAdapter init_krona(const BaseWeight& base, int f, std::uint64_t seed,
                       FactorPolicy policy = FactorPolicy::Strict);
// B = 0, A ~ N(0, 2/k).
LoraAdapter init_lora(const BaseWeight& base, int rank, std::uint64_t seed);

Matrix effective_weight(const DecomposedAdapter& adapter);
Matrix effective_weight(const KronAdapter& adapter);
Matrix lora_effective_weight(const BaseWeight& base, const LoraFactors& lora);
Matrix effective_weight(const LayerAdapter& adapter);

// The direction term (W0 + A (x) B) / ||W0 + A (x) B||_c on its own.
Matrix direction(const DecomposedAdapter& adapter);

// y = W' x without materializing W' (vec trick for the Kronecker term).
Vector adapter_forward(const DecomposedAdapter& adapter, const Vector& x);

struct WedOptions {
    double eps = kColumnNormEps;
    // Treat the column norm as a constant in the backward pass.
    bool detach_norm = false;
};

// Differentiable forms used for training.
ag::Var effective_weight(const ag::Var& W0, const ag::Var& A, const ag::Var& B, const ag::Var& m,
                         const WedOptions& options = {});
ag::Var krona_effective_weight(const ag::Var& W0, const ag::Var& A, const ag::Var& B);
ag::Var lora_effective_weight(const ag::Var& W0, const ag::Var& B, const ag::Var& A);

std::size_t trainable_parameter_count(const LayerAdapter& adapter);
std::size_t lora_parameter_count(int d, int k, int rank);
std::size_t krona_wed_parameter_count(int d, int k, const KronShape& shape);

const BaseWeight& base_of(const LayerAdapter& adapter);

}  // namespace persona::adapters
