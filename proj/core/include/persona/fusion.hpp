// Copyright (C) 2026 Persona contributors
// SPDX-License-Identifier: Apache-2.0
//
// Gradient fusion of independently trained concept updates. For one layer
// with updates dW_n and input activations X_n (k x samples):
//
//   dW = (sum_n dW_n X_n X_n^T) (sum_n X_n X_n^T + mu I)^-1
//
// the minimizer of sum_n ||(dW - dW_n) X_n||_F^2 + mu ||dW||_F^2.

#pragma once

#include "persona/checkpoint.hpp"
#include "persona/testbed.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace persona::fusion {

struct FusionProblem {
    std::vector<Matrix> deltas;       // d x k each
    std::vector<Matrix> activations;  // k x samples each
    double mu = 0.0;

    void validate() const;
};

// 1e-4 * trace(sum_n X_n X_n^T) / k.
double default_mu(std::span<const Matrix> activations);

// Cholesky solve of the normal equations. mu = 0 with a singular Gram matrix
// raises NumericalError.
Matrix fuse_layer(const FusionProblem& problem);

// sum_n ||(dW - dW_n) X_n||_F^2 (without the mu term).
double fusion_objective(const Matrix& fused, const FusionProblem& problem);

// ||(dW - dW_n) X_n||_F / ||dW_n X_n||_F; the absolute residual when the denominator vanishes.
double relative_residual(const Matrix& fused, const Matrix& delta, const Matrix& activations);

struct ConceptUpdate {
    std::string name;
    std::map<std::string, Matrix> deltas;       // per layer
    std::map<std::string, Matrix> activations;  // per layer, k x samples
};

struct FusedUpdate {
    std::map<std::string, Matrix> deltas;
    std::vector<FusionResidual> residuals;  // layer-major, concepts in input order
    std::map<std::string, double> mu;
};

// Per-layer fusion; `mu` unset selects default_mu per layer. All updates must
// cover the same layer set.
FusedUpdate fuse_updates(std::span<const ConceptUpdate> updates, std::optional<double> mu = std::nullopt);

struct ProbeSet {
    // "<concept>" is replaced by the concept placeholder.
    std::vector<std::string> templates = {"a photo of <concept>", "a picture of <concept> on a white background",
                                          "<concept> next to a house"};
    std::vector<int> timesteps = {799, 499, 199};
    std::uint64_t seed = 4242;
};

// Inputs of every adapter-wrappable layer, recorded over probe forward passes
// of the concept-adapted model: columns are activation vectors.
std::map<std::string, Matrix> collect_activations(const testbed::ToyDenoiser& model,
                                                  const testbed::WeightSource& weights,
                                                  const concepts::ConceptRegistry& registry,
                                                  const std::string& concept_name, const ProbeSet& probes);

// Fuses adapter checkpoints trained on the same theta0. Concept tokens are
// concatenated. With a single adapter the update is copied unchanged.
FusedModel fuse_model(const testbed::ToyDenoiser& model, std::span<const AdapterCheckpoint> adapters,
                      std::optional<double> mu = std::nullopt, const ProbeSet& probes = {});

}  // namespace persona::fusion
