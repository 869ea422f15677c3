// Copyright (C) 2026 Persona contributors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration. Serialized as a flat JSON object; unknown keys are
// rejected and every value is validated before any compute starts.

#pragma once

#include "persona/adapters.hpp"
#include "persona/layout.hpp"
#include "persona/objectives.hpp"
#include "persona/testbed.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace persona {

struct RunConfig {
    // Adapter.
    std::string adapter = "krona_wed";
    int factor = 16;
    int rank = 4;
    std::string factor_policy = "strict";  // strict | largest_divisor

    // Losses.
    double lambda_attn = 0.001;
    double lambda_w = 0.01;
    double lambda_con = 0.001;
    bool swap_masks = false;

    // Training.
    std::string concept_name = "redring";
    std::string class_word;  // empty: taken from the dataset index
    int train_steps = 50;
    int batch_size = 1;
    double learning_rate = 5e-3;
    int probe_size = 4;
    bool mask_fallback = false;
    std::uint64_t train_seed = 0;

    // Sampling.
    std::string prompt = "a photo of <redring>";
    int sampler_steps = 20;
    std::uint64_t sample_seed = 7;

    // Matching attention.
    bool sama_enabled = true;
    double sama_window_start = 0.2;
    double sama_window_end = 0.8;
    std::vector<std::string> sama_layers = {"enc.attn1", "dec.attn1"};
    std::string descriptor_layer = "dec.attn1";

    // Layout guidance.
    bool guidance_enabled = true;
    double guidance_lambda = 0.1;
    double guidance_tau = 0.3;
    double guidance_phi0 = 10.0;

    // Fusion.
    std::optional<double> fusion_mu;  // unset: 1e-4 * trace / k per layer
    std::vector<std::string> checkpoints;

    // Testbed model.
    int latent_side = 16;
    int model_width = 64;
    int model_heads = 2;
    std::uint64_t model_seed = 1234;

    // Dataset generation.
    std::string dataset_concept = "redring";
    int dataset_count = 5;
    std::uint64_t dataset_seed = 11;

    // Paths and evaluation.
    std::string dataset_dir = "data/redring";
    std::vector<std::string> reference_dirs;
    std::string checkpoint;
    std::string output_dir = "runs/out";
    std::string embed_backend = "stub";
    bool dump_diagnostics = false;

    void validate() const;

    testbed::ModelConfig model_config() const;
    objectives::LossWeights loss_weights() const;
    layout::GuidanceParams guidance() const;
    adapters::AdapterKind adapter_kind() const;
    adapters::FactorPolicy policy() const;

    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

std::string to_json(const RunConfig& config);
// Throws ConfigError on unknown keys, wrong types or invalid values.
RunConfig config_from_json(const std::string& text);
RunConfig load_config(const std::string& path);

// Keys accepted in a config document, in serialization order.
std::vector<std::string> config_keys();
// Sets one key from its textual form (JSON literal, or a bare string).
void apply_override(RunConfig& config, const std::string& key, const std::string& value);

// FNV-1a over the canonical JSON form.
std::uint64_t config_hash(const RunConfig& config);

}  // namespace persona
