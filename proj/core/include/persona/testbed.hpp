// Copyright (C) 2026 Persona contributors
// SPDX-License-Identifier: Apache-2.0
//
// Desk-scale diffusion stand-in. The latent is an S x S x 4 field stored as an
// (S*S) x 4 matrix. The denoiser is a three-block transformer U-Net:
//
//   enc  (S x S)     self-attn, cross-attn, feed-forward
//   mid  (S/2 x S/2) same, after 2x2 average pooling
//   dec  (S x S)     same, after nearest upsampling plus a skip from enc
//
// Each block names its linear sublayers "<block>.attn1.to_{q,k,v,out}" (self)
// and "<block>.attn2.to_{q,k,v,out}" (cross); those are the adapter targets.

#pragma once

#include "persona/attention_maps.hpp"
#include "persona/autograd.hpp"
#include "persona/concepts.hpp"
#include "persona/image.hpp"
#include "persona/matching_attention.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

namespace persona::testbed {

struct ModelConfig {
    int latent_side = 16;
    int latent_channels = 4;
    int width = 64;       // hidden channels C
    int text_width = 64;  // token embedding width E
    int heads = 2;
    int ffn_mult = 2;
    int text_layers = 2;
    int max_tokens = 16;
    int train_timesteps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    std::uint64_t seed = 1234;

    void validate() const;
};

// Supplies the weight of an adapter-wrappable layer. The base source returns W0.
class WeightSource {
public:
    virtual ~WeightSource() = default;
    virtual ag::Var weight(const std::string& layer_id, const Matrix& W0) const = 0;
};

class BaseWeights final : public WeightSource {
public:
    ag::Var weight(const std::string&, const Matrix& W0) const override { return ag::Var::constant(W0); }
};

// Materialized effective weights; layers not listed fall back to W0.
class DenseWeights final : public WeightSource {
public:
    DenseWeights() = default;
    explicit DenseWeights(std::map<std::string, Matrix> weights) : weights_(std::move(weights)) {}
    ag::Var weight(const std::string& layer_id, const Matrix& W0) const override;
    const std::map<std::string, Matrix>& weights() const { return weights_; }

private:
    std::map<std::string, Matrix> weights_;
};

struct ForwardOptions {
    bool capture_cross_attention = false;
    // Self-attention layers ("enc.attn1", ...) whose value fields are recorded.
    std::set<std::string> capture_values;
    // Self-attention layer whose (normalized) input is recorded as the descriptor field.
    std::string descriptor_layer;
    // Value substitutions keyed by self-attention layer.
    std::map<std::string, matching::ValueInjection> injections;
    // Record the input of every adapter-wrappable linear layer.
    bool record_linear_inputs = false;
};

struct ForwardResult {
    ag::Var eps;                                  // (S*S) x 4
    AttentionMapSet cross_attention;              // head-averaged, one record per block
    std::map<std::string, Matrix> values;         // pre-injection value fields
    Matrix descriptors;                           // (S*S) x C, empty unless requested
    std::map<std::string, Matrix> linear_inputs;  // layer id -> k x samples
};

class ToyDenoiser {
public:
    explicit ToyDenoiser(ModelConfig config = {});

    const ModelConfig& config() const { return config_; }
    int locations() const { return config_.latent_side * config_.latent_side; }

    // Adapter-wrappable layers in a fixed order.
    const std::vector<std::string>& adapter_layers() const { return adapter_layers_; }
    // Self-attention layer names with their grid side.
    const std::map<std::string, int>& self_attention_layers() const { return self_attention_layers_; }

    const Matrix& parameter(const std::string& name) const;
    const std::map<std::string, Matrix>& parameters() const { return params_; }
    std::shared_ptr<const concepts::BaseVocabulary> vocabulary() const { return vocab_; }

    // Content hash over every frozen parameter and the base vocabulary.
    std::uint64_t theta0_hash() const;

    // Token embeddings for a prompt. `overrides` substitutes rows by token id
    // (trainable concept embeddings during training).
    ag::Var embed_tokens(const concepts::ConceptRegistry& registry, const concepts::TokenizedPrompt& prompt,
                         const std::map<int, ag::Var>& overrides = {}) const;
    // Frozen toy text encoder: positional embedding, self-attention layers, final norm.
    ag::Var encode_text(const ag::Var& token_embeddings) const;
    // Convenience: embed and encode with the registry's stored concept embeddings.
    Matrix text_features(const concepts::ConceptRegistry& registry, const concepts::PromptSpec& prompt) const;

    // Frozen image encoder: 4x4 pooled latent projected to 1 x E.
    Matrix image_features(const Matrix& clean_latent) const;

    ForwardResult forward(const ag::Var& latent, int timestep, const ag::Var& context, const WeightSource& weights,
                          const ForwardOptions& options = {}) const;

private:
    ag::Var attention_block(const std::string& block, int side, const ag::Var& h, const ag::Var& context,
                            const WeightSource& weights, const ForwardOptions& options, ForwardResult& result) const;
    ag::Var attention(const std::string& prefix, int side, bool cross, const ag::Var& x, const ag::Var& context,
                      const WeightSource& weights, const ForwardOptions& options, ForwardResult& result) const;
    ag::Var adapted_linear(const std::string& layer, const ag::Var& x, const WeightSource& weights,
                           const ForwardOptions& options, ForwardResult& result) const;
    ag::Var frozen_linear(const std::string& name, const ag::Var& x) const;

    ModelConfig config_;
    std::map<std::string, Matrix> params_;
    std::shared_ptr<const concepts::BaseVocabulary> vocab_;
    std::vector<std::string> adapter_layers_;
    std::map<std::string, int> self_attention_layers_;
    Matrix pos_embedding_;  // (S*S) x C
    Matrix pool_;           // (S/2)^2 x S^2
    Matrix unpool_;         // S^2 x (S/2)^2
    Matrix image_pool_;     // 16 x S^2
};

// Sinusoidal embedding of a scalar position (timestep) into `width` channels.
RowVector sinusoidal_embedding(double position, int width);

class NoiseSchedule {
public:
    NoiseSchedule(int timesteps, double beta_start, double beta_end);
    explicit NoiseSchedule(const ModelConfig& config)
        : NoiseSchedule(config.train_timesteps, config.beta_start, config.beta_end) {}

    int timesteps() const { return static_cast<int>(alpha_bar_.size()); }
    double alpha_bar(int t) const;
    // Descending sampler timesteps t_0 > t_1 > ... for `steps` DDIM steps.
    std::vector<int> sampler_timesteps(int steps) const;
    // z_t = sqrt(a) x0 + sqrt(1 - a) eps.
    Matrix add_noise(const Matrix& x0, const Matrix& noise, int t) const;
    // Deterministic DDIM update from t to t_prev (t_prev < 0 means the clean end).
    Matrix ddim_step(const Matrix& latent, const Matrix& eps, int t, int t_prev) const;

private:
    std::vector<double> alpha_bar_;
};

// Sampler with named hook points invoked every step, in order:
//   "pre_step"   may modify the latent (layout guidance)
//   "forward"    may edit the forward options (value injection, capture)
//   "post_step"  sees the forward result before the DDIM update
struct StepContext {
    int index = 0;
    int total = 0;
    int timestep = 0;
    Matrix& latent;
    ForwardOptions& options;
    const ForwardResult* result = nullptr;
};

using Hook = std::function<void(StepContext&)>;

inline constexpr const char* kHookPreStep = "pre_step";
inline constexpr const char* kHookForward = "forward";
inline constexpr const char* kHookPostStep = "post_step";

class Sampler {
public:
    Sampler(const ToyDenoiser& model, const WeightSource& weights, Matrix context, int steps);

    // Throws ConfigError for an unknown hook point.
    void add_hook(const std::string& point, Hook hook);

    void begin(std::uint64_t seed);
    void begin_from(Matrix latent);
    bool done() const { return step_ >= steps_; }
    int step_index() const { return step_; }
    int steps() const { return steps_; }
    int current_timestep() const;
    void step();

    const Matrix& latent() const { return latent_; }
    const std::vector<Matrix>& trajectory() const { return trajectory_; }
    const ForwardResult& last_forward() const { return last_; }

    // begin(seed) followed by every step; returns the trajectory.
    const std::vector<Matrix>& run(std::uint64_t seed);

private:
    const ToyDenoiser& model_;
    const WeightSource& weights_;
    ag::Var context_;
    NoiseSchedule schedule_;
    std::vector<int> timesteps_;
    int steps_;
    int step_ = 0;
    Matrix latent_;
    std::vector<Matrix> trajectory_;
    ForwardResult last_;
    std::map<std::string, std::vector<Hook>> hooks_;
};

Matrix initial_latent(const ModelConfig& config, std::uint64_t seed);

// Latent <-> image. Channels 0-2 hold RGB mapped to [-1, 1] and area-averaged
// to the latent grid; channel 3 holds their mean. Decoding uses channels 0-2
// with nearest upsampling.
Matrix image_to_latent(const Image& image, int side);
Image latent_to_image(const Matrix& latent, int side, int out_size);

// --- synthetic concept dataset -------------------------------------------

struct ShapeSpec {
    std::string name;        // concept name, e.g. "redring"
    std::string class_word;  // base word initializing the noun token
    std::string shape;       // circle | square | triangle | diamond | ring | cross
    std::array<std::uint8_t, 3> color{255, 0, 0};
};

struct DatasetSpec {
    ShapeSpec subject;
    int count = 5;
    int image_size = 64;

    void validate() const;
};

struct Sample {
    Image image;      // RGB
    Matrix mask;      // image_size x image_size, exactly 0 or 1
    std::string prompt;
    std::array<std::uint8_t, 3> background{};
};

struct SynthConceptDataset {
    DatasetSpec spec;
    std::vector<Sample> samples;
};

SynthConceptDataset make_dataset(const DatasetSpec& spec, std::uint64_t seed);

// <dir>/NNN.ppm, <dir>/NNN_mask.pgm and <dir>/prompts.txt ("NNN<TAB>prompt").
void write_dataset(const SynthConceptDataset& dataset, const std::filesystem::path& dir);
// Missing masks fall back to a luminance threshold against the corner colour
// when `allow_mask_fallback`, otherwise raise DataError.
SynthConceptDataset read_dataset(const std::filesystem::path& dir, bool allow_mask_fallback = false);

// Built-in concepts used by tests and examples.
ShapeSpec builtin_shape(const std::string& name);

}  // namespace persona::testbed
