// Copyright (C) 2026 Persona contributors
// SPDX-License-Identifier: Apache-2.0
//
// Orchestration: single-concept training, attention diagnostics, and single-
// and multi-concept generation on the testbed.

#pragma once

#include "persona/checkpoint.hpp"
#include "persona/config.hpp"
#include "persona/testbed.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace persona::pipeline {

// --- training ----------------------------------------------------------------

struct LossRecord {
    int step = 0;
    double denoise = 0.0;
    double weak_denoise = 0.0;
    double contrastive = 0.0;
    double attention = 0.0;
    double total = 0.0;
};

struct TrainResult {
    AdapterCheckpoint checkpoint;
    std::vector<LossRecord> log;       // one record per optimizer step
    LossRecord probe_initial;          // fixed probe batch before the first step
    LossRecord probe_final;            // same batch after the last step
    std::uint64_t theta0_hash_before = 0;
    std::uint64_t theta0_hash_after = 0;
};

// Optimizes the concept token pair, every adapter-wrappable layer and the
// image adapter with Adam; theta0 is never modified.
TrainResult train_single(const RunConfig& config, const testbed::SynthConceptDataset& dataset,
                         const testbed::ToyDenoiser& model);

std::string format_loss_log(const std::vector<LossRecord>& log);

// Summed head- and layer-averaged cross-attention of each concept token
// outside the exact foreground mask, averaged over dataset images and probe
// timesteps, for a prompt not seen in training.
struct AttentionMass {
    double rand_off_mask = 0.0;
    double class_off_mask = 0.0;
    double rand_total = 0.0;
    double class_total = 0.0;
};

inline constexpr const char* kHeldOutTemplate = "a drawing of <concept> near a house";

AttentionMass off_mask_attention_mass(const testbed::ToyDenoiser& model, const AdapterCheckpoint& checkpoint,
                                      const testbed::SynthConceptDataset& dataset,
                                      const std::string& prompt_template = kHeldOutTemplate,
                                      const std::vector<int>& timesteps = {699, 399, 99}, std::uint64_t seed = 99);

// --- generation --------------------------------------------------------------

struct GenerationResult {
    Matrix latent;
    Image image;
    std::vector<Matrix> trajectory;
};

// Unknown concept placeholders raise ConfigError.
GenerationResult generate_single(const testbed::ToyDenoiser& model, const testbed::WeightSource& weights,
                                 const concepts::ConceptRegistry& registry, const std::string& prompt, int steps,
                                 std::uint64_t seed, int image_size = 64);

struct MultiOptions {
    int steps = 20;
    std::uint64_t seed = 7;
    bool sama = true;
    double window_start = 0.2;
    double window_end = 0.8;
    std::vector<std::string> sama_layers = {"enc.attn1", "dec.attn1"};
    std::string descriptor_layer = "dec.attn1";
    bool guidance = true;
    layout::GuidanceParams guidance_params{};
    bool dump = false;
    int image_size = 64;

    static MultiOptions from_config(const RunConfig& config);
};

struct StepDiagnostics {
    int step = 0;
    int timestep = 0;
    bool sama_active = false;
    bool guidance_applied = false;
    double phi = 0.0;
    double layout_loss = 0.0;
    std::vector<double> ious;  // per concept, refined maps vs anchors
    std::vector<double> value_norms;  // ||V^W||_F per injected layer (dump only)
    std::vector<Matrix> masks;        // M_k on the target grid (dump only)
    std::vector<std::vector<int>> flows;  // argmax flow per concept (dump only)
};

struct MultiResult {
    GenerationResult output;
    std::vector<std::string> concept_names;
    int reference_branches = 0;
    std::vector<StepDiagnostics> steps;
    std::vector<Matrix> anchors;  // refined step-0 maps per concept
    // Mean over concepts of the soft IoU at the final step.
    double final_iou() const;
};

// Reference branches run "a photo of <k>" for every concept in the prompt; the
// target branch receives value injection and layout guidance. A prompt
// without concepts falls back to plain sampling with a notice.
MultiResult generate_multi(const testbed::ToyDenoiser& model, const FusedModel& fused, const std::string& prompt,
                           const MultiOptions& options);

void write_diagnostics(const MultiResult& result, const std::filesystem::path& dir, int latent_side);

// --- run manifest ------------------------------------------------------------

struct Manifest {
    std::string command;
    RunConfig config;
    std::vector<std::pair<std::string, std::string>> extra;
};

void write_manifest(const Manifest& manifest, const std::filesystem::path& dir);

std::string version();

}  // namespace persona::pipeline
