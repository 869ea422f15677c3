// Copyright (C) 2026 Persona contributors
// SPDX-License-Identifier: Apache-2.0
//
// Adapter and fused checkpoints on top of NamedArrayArchive. Frozen weights
// are never stored: they are rebuilt from the recorded model config and
// checked against the recorded theta0 hash on load.
//
// Every checkpoint is applied as W0 + dW per layer, so a single-concept fused
// model and its source adapter materialize identical weights.

#pragma once

#include "persona/adapters.hpp"
#include "persona/archive.hpp"
#include "persona/concepts.hpp"
#include "persona/testbed.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace persona {

struct AdapterCheckpoint {
    testbed::ModelConfig model;
    std::uint64_t theta0_hash = 0;
    adapters::AdapterKind kind = adapters::AdapterKind::KronaWed;
    std::map<std::string, adapters::LayerAdapter> layers;
    std::vector<concepts::ConceptTokenPair> concepts;
    Matrix image_adapter;                      // E x E, empty when absent
    std::map<std::string, std::string> meta;   // free-form provenance (config hash, steps, ...)

    // dW = W' - W0 for every adapted layer.
    std::map<std::string, Matrix> deltas() const;

    NamedArrayArchive to_archive() const;
    // `model` supplies W0 and must match the recorded theta0 hash.
    static AdapterCheckpoint from_archive(const NamedArrayArchive& archive, const testbed::ToyDenoiser& model);

    void save(const std::filesystem::path& path) const;
    static AdapterCheckpoint load(const std::filesystem::path& path, const testbed::ToyDenoiser& model);
};

struct FusionResidual {
    std::string layer;
    std::string concept_name;
    double relative = 0.0;
};

struct FusedModel {
    testbed::ModelConfig model;
    std::uint64_t theta0_hash = 0;
    std::map<std::string, Matrix> deltas;  // dense per-layer fused update
    std::vector<concepts::ConceptTokenPair> concepts;
    std::vector<FusionResidual> residuals;
    std::map<std::string, double> mu;       // regularization used per layer

    NamedArrayArchive to_archive() const;
    static FusedModel from_archive(const NamedArrayArchive& archive, const testbed::ToyDenoiser& model);

    // Writes the archive to `path` and the residual table to `fusion.residuals`
    // in the same directory.
    void save(const std::filesystem::path& path) const;
    static FusedModel load(const std::filesystem::path& path, const testbed::ToyDenoiser& model);
};

// Plain-text table: layer, concept, relative residual.
std::string format_residuals(const std::vector<FusionResidual>& residuals);

// W0 + dW for each listed layer.
testbed::DenseWeights materialize(const testbed::ToyDenoiser& model, const std::map<std::string, Matrix>& deltas);

concepts::ConceptRegistry make_registry(const testbed::ToyDenoiser& model,
                                        const std::vector<concepts::ConceptTokenPair>& pairs);

// Model config recorded in a checkpoint header, for constructing the model before load().
testbed::ModelConfig read_model_config(const std::filesystem::path& path);
void write_model_config(const testbed::ModelConfig& config, NamedArrayArchive& archive);
testbed::ModelConfig read_model_config(const NamedArrayArchive& archive);

std::string hash_hex(std::uint64_t h);

}  // namespace persona
