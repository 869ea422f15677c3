// Copyright (C) 2026 Persona contributors
// SPDX-License-Identifier: Apache-2.0

#include "persona/testbed.hpp"

#include "persona/errors.hpp"
#include "persona/nn.hpp"
#include "persona/random.hpp"

#include <cmath>
#include <numbers>

namespace persona::testbed {

namespace {

const std::vector<std::string> kBlocks = {"enc", "mid", "dec"};
const std::vector<std::string> kProjections = {"to_q", "to_k", "to_v", "to_out"};

}  // namespace

void ModelConfig::validate() const {
    if (latent_side < 4 || latent_side % 4 != 0) throw ConfigError("latent_side must be a positive multiple of 4");
    if (latent_channels < 1) throw ConfigError("latent_channels must be positive");
    if (width < 2 || width % 2 != 0) throw ConfigError("model width must be even and positive");
    if (text_width < 2 || text_width % 2 != 0) throw ConfigError("text width must be even and positive");
    if (heads < 1 || width % heads != 0 || text_width % heads != 0) {
        throw ConfigError("heads must divide both model and text width");
    }
    if (ffn_mult < 1 || text_layers < 0 || max_tokens < 2) throw ConfigError("invalid model sizes");
    if (train_timesteps < 1) throw ConfigError("train_timesteps must be positive");
    if (!(beta_start > 0.0 && beta_end >= beta_start && beta_end < 1.0)) throw ConfigError("invalid beta range");
}

ag::Var DenseWeights::weight(const std::string& layer_id, const Matrix& W0) const {
    auto it = weights_.find(layer_id);
    if (it == weights_.end()) return ag::Var::constant(W0);
    if (it->second.rows() != W0.rows() || it->second.cols() != W0.cols()) {
        throw ShapeError("DenseWeights: weight for " + layer_id + " has the wrong shape");
    }
    return ag::Var::constant(it->second);
}

RowVector sinusoidal_embedding(double position, int width) {
    const int half = width / 2;
    RowVector e(width);
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / half);
        e(i) = std::sin(position * freq);
        e(half + i) = std::cos(position * freq);
    }
    return e;
}

ToyDenoiser::ToyDenoiser(ModelConfig config) : config_(config) {
    config_.validate();
    const int C = config_.width;
    const int E = config_.text_width;
    const int S = config_.latent_side;
    auto init = [&](const std::string& name, int rows, int cols) {
        params_[name] = gaussian(rows, cols, 1.0 / std::sqrt(static_cast<double>(cols)),
                                 derive_seed(config_.seed, name));
    };
    init("conv_in", C, config_.latent_channels);
    init("time.w", C, C);
    for (const auto& b : kBlocks) {
        for (const auto& p : kProjections) {
            const std::string self = b + ".attn1." + p;
            const std::string cross = b + ".attn2." + p;
            init(self, C, C);
            init(cross, C, (p == "to_k" || p == "to_v") ? E : C);
            adapter_layers_.push_back(self);
        }
        for (const auto& p : kProjections) adapter_layers_.push_back(b + ".attn2." + p);
        init(b + ".ff.w1", config_.ffn_mult * C, C);
        init(b + ".ff.w2", C, config_.ffn_mult * C);
    }
    init("conv_out", config_.latent_channels, C);
    params_["text.pos"] = gaussian(config_.max_tokens, E, 0.1, derive_seed(config_.seed, "text.pos"));
    for (int l = 0; l < config_.text_layers; ++l) {
        const std::string p = "text.l" + std::to_string(l);
        for (const auto& proj : kProjections) init(p + "." + proj, E, E);
        init(p + ".ff.w1", config_.ffn_mult * E, E);
        init(p + ".ff.w2", E, config_.ffn_mult * E);
    }
    init("image.proj", E, 16 * config_.latent_channels);

    auto vocab = std::make_shared<concepts::BaseVocabulary>();
    vocab->words = concepts::default_words();
    vocab->embeddings = gaussian(static_cast<Eigen::Index>(vocab->words.size()), E, 1.0,
                                 derive_seed(config_.seed, "vocab"));
    vocab_ = std::move(vocab);

    self_attention_layers_ = {{"enc.attn1", S}, {"mid.attn1", S / 2}, {"dec.attn1", S}};

    pos_embedding_.resize(S * S, C);
    for (int r = 0; r < S; ++r)
        for (int c = 0; c < S; ++c) {
            pos_embedding_.row(r * S + c) << sinusoidal_embedding(r, C / 2), sinusoidal_embedding(c, C / 2);
        }
    pool_ = downsample_matrix(S, S / 2);
    unpool_ = upsample_matrix(S / 2, S);
    image_pool_ = downsample_matrix(S, 4);
}

const Matrix& ToyDenoiser::parameter(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown model parameter '" + name + "'");
    return it->second;
}

std::uint64_t ToyDenoiser::theta0_hash() const {
    std::uint64_t h = fnv1a("theta0");
    for (const auto& [name, m] : params_) h = fnv1a(m, fnv1a(name, h));
    for (const auto& w : vocab_->words) h = fnv1a(w, h);
    return fnv1a(vocab_->embeddings, h);
}

ag::Var ToyDenoiser::frozen_linear(const std::string& name, const ag::Var& x) const {
    return nn::linear(x, ag::Var::constant(parameter(name)));
}

ag::Var ToyDenoiser::embed_tokens(const concepts::ConceptRegistry& registry, const concepts::TokenizedPrompt& prompt,
                                  const std::map<int, ag::Var>& overrides) const {
    if (registry.width() != config_.text_width) throw ShapeError("embed_tokens: registry width mismatch");
    std::vector<ag::Var> rows;
    rows.reserve(prompt.ids.size());
    for (int id : prompt.ids) {
        auto it = overrides.find(id);
        rows.push_back(it != overrides.end() ? it->second : ag::Var::constant(registry.embedding(id)));
    }
    return ag::vcat(rows);
}

ag::Var ToyDenoiser::encode_text(const ag::Var& tokens) const {
    const Eigen::Index L = tokens.rows();
    if (L > config_.max_tokens) {
        throw ConfigError("prompt has " + std::to_string(L) + " tokens; the text encoder accepts at most " +
                          std::to_string(config_.max_tokens));
    }
    if (tokens.cols() != config_.text_width) throw ShapeError("encode_text: token width mismatch");
    ag::Var x = ag::add(tokens, ag::Var::constant(parameter("text.pos").topRows(L)));
    const int E = config_.text_width;
    const int dh = E / config_.heads;
    for (int l = 0; l < config_.text_layers; ++l) {
        const std::string p = "text.l" + std::to_string(l);
        ag::Var n = ag::layer_norm_rows(x);
        ag::Var q = frozen_linear(p + ".to_q", n);
        ag::Var k = frozen_linear(p + ".to_k", n);
        ag::Var v = frozen_linear(p + ".to_v", n);
        std::vector<ag::Var> heads;
        for (int h = 0; h < config_.heads; ++h) {
            heads.push_back(nn::scaled_dot_product_attention(ag::slice_cols(q, h * dh, dh),
                                                             ag::slice_cols(k, h * dh, dh),
                                                             ag::slice_cols(v, h * dh, dh))
                                .out);
        }
        x = ag::add(x, frozen_linear(p + ".to_out", ag::hcat(heads)));
        ag::Var f = ag::silu(frozen_linear(p + ".ff.w1", ag::layer_norm_rows(x)));
        x = ag::add(x, frozen_linear(p + ".ff.w2", f));
    }
    return ag::layer_norm_rows(x);
}

Matrix ToyDenoiser::text_features(const concepts::ConceptRegistry& registry,
                                  const concepts::PromptSpec& prompt) const {
    return encode_text(embed_tokens(registry, concepts::tokenize(registry, prompt))).value();
}

Matrix ToyDenoiser::image_features(const Matrix& clean_latent) const {
    if (clean_latent.rows() != locations() || clean_latent.cols() != config_.latent_channels) {
        throw ShapeError("image_features: latent shape mismatch");
    }
    const Matrix pooled = image_pool_ * clean_latent;  // 16 x channels
    RowVector flat(pooled.size());
    for (Eigen::Index i = 0; i < pooled.rows(); ++i)
        for (Eigen::Index c = 0; c < pooled.cols(); ++c) flat(i * pooled.cols() + c) = pooled(i, c);
    return flat * parameter("image.proj").transpose();
}

ag::Var ToyDenoiser::adapted_linear(const std::string& layer, const ag::Var& x, const WeightSource& weights,
                                    const ForwardOptions& options, ForwardResult& result) const {
    if (options.record_linear_inputs) {
        Matrix& rec = result.linear_inputs[layer];
        const Matrix cols = x.value().transpose();
        if (rec.size() == 0) {
            rec = cols;
        } else {
            Matrix grown(rec.rows(), rec.cols() + cols.cols());
            grown << rec, cols;
            rec = std::move(grown);
        }
    }
    const Matrix& W0 = parameter(layer);
    ag::Var W = weights.weight(layer, W0);
    if (W.rows() != W0.rows() || W.cols() != W0.cols()) throw ShapeError("weight source changed the shape of " + layer);
    return nn::linear(x, W);
}

ag::Var ToyDenoiser::attention(const std::string& prefix, int side, bool cross, const ag::Var& x,
                               const ag::Var& context, const WeightSource& weights, const ForwardOptions& options,
                               ForwardResult& result) const {
    const ag::Var& src = cross ? context : x;
    ag::Var q = adapted_linear(prefix + ".to_q", x, weights, options, result);
    ag::Var k = adapted_linear(prefix + ".to_k", src, weights, options, result);
    ag::Var v = adapted_linear(prefix + ".to_v", src, weights, options, result);
    if (!cross) {
        if (options.capture_values.count(prefix)) result.values[prefix] = v.value();
        auto inj = options.injections.find(prefix);
        if (inj != options.injections.end()) v = inj->second.apply(v);
    }
    const int dh = config_.width / config_.heads;
    std::vector<ag::Var> outs;
    ag::Var prob_sum;
    for (int h = 0; h < config_.heads; ++h) {
        nn::AttentionOutput a = nn::scaled_dot_product_attention(
            ag::slice_cols(q, h * dh, dh), ag::slice_cols(k, h * dh, dh), ag::slice_cols(v, h * dh, dh));
        outs.push_back(a.out);
        if (cross && options.capture_cross_attention) prob_sum = h == 0 ? a.probs : ag::add(prob_sum, a.probs);
    }
    if (cross && options.capture_cross_attention) {
        result.cross_attention.add({prefix, side, ag::scale(prob_sum, 1.0 / config_.heads)});
    }
    return adapted_linear(prefix + ".to_out", ag::hcat(outs), weights, options, result);
}

ag::Var ToyDenoiser::attention_block(const std::string& block, int side, const ag::Var& h, const ag::Var& context,
                                     const WeightSource& weights, const ForwardOptions& options,
                                     ForwardResult& result) const {
    const std::string self = block + ".attn1";
    ag::Var n1 = ag::layer_norm_rows(h);
    if (options.descriptor_layer == self) result.descriptors = n1.value();
    ag::Var x = ag::add(h, attention(self, side, false, n1, context, weights, options, result));
    x = ag::add(x, attention(block + ".attn2", side, true, ag::layer_norm_rows(x), context, weights, options, result));
    ag::Var f = ag::silu(frozen_linear(block + ".ff.w1", ag::layer_norm_rows(x)));
    return ag::add(x, frozen_linear(block + ".ff.w2", f));
}

ForwardResult ToyDenoiser::forward(const ag::Var& latent, int timestep, const ag::Var& context,
                                   const WeightSource& weights, const ForwardOptions& options) const {
    if (latent.rows() != locations() || latent.cols() != config_.latent_channels) {
        throw ShapeError("forward: latent must be (side*side) x channels");
    }
    if (context.cols() != config_.text_width || context.rows() < 1) throw ShapeError("forward: bad context shape");
    for (const auto& name : options.capture_values)
        if (!self_attention_layers_.count(name)) throw ConfigError("unknown self-attention layer '" + name + "'");
    for (const auto& [name, inj] : options.injections)
        if (!self_attention_layers_.count(name)) throw ConfigError("unknown self-attention layer '" + name + "'");
    if (!options.descriptor_layer.empty() && !self_attention_layers_.count(options.descriptor_layer)) {
        throw ConfigError("unknown descriptor layer '" + options.descriptor_layer + "'");
    }

    const int S = config_.latent_side;
    ForwardResult result;
    ag::Var h = frozen_linear("conv_in", latent);
    h = ag::add(h, ag::Var::constant(pos_embedding_));
    ag::Var temb = ag::silu(frozen_linear(
        "time.w", ag::Var::constant(sinusoidal_embedding(static_cast<double>(timestep), config_.width))));
    h = ag::add_rowvec(h, temb);

    ag::Var enc = attention_block("enc", S, h, context, weights, options, result);
    ag::Var mid = ag::matmul(ag::Var::constant(pool_), enc);
    mid = attention_block("mid", S / 2, mid, context, weights, options, result);
    ag::Var dec = ag::add(ag::matmul(ag::Var::constant(unpool_), mid), enc);
    dec = attention_block("dec", S, dec, context, weights, options, result);
    result.eps = frozen_linear("conv_out", ag::layer_norm_rows(dec));
    return result;
}

// --- schedule and sampler --------------------------------------------------

NoiseSchedule::NoiseSchedule(int timesteps, double beta_start, double beta_end) {
    if (timesteps < 1) throw ConfigError("noise schedule needs at least one timestep");
    alpha_bar_.resize(static_cast<std::size_t>(timesteps));
    double prod = 1.0;
    for (int t = 0; t < timesteps; ++t) {
        const double beta =
            timesteps == 1 ? beta_start : beta_start + (beta_end - beta_start) * t / static_cast<double>(timesteps - 1);
        prod *= 1.0 - beta;
        alpha_bar_[static_cast<std::size_t>(t)] = prod;
    }
}

double NoiseSchedule::alpha_bar(int t) const {
    if (t < 0 || t >= timesteps()) throw ConfigError("timestep out of range");
    return alpha_bar_[static_cast<std::size_t>(t)];
}

std::vector<int> NoiseSchedule::sampler_timesteps(int steps) const {
    if (steps < 1) throw ConfigError("sampler steps must be >= 1");
    if (steps > timesteps()) throw ConfigError("sampler steps exceed the training schedule");
    const int ratio = timesteps() / steps;
    std::vector<int> ts(static_cast<std::size_t>(steps));
    for (int i = 0; i < steps; ++i) ts[static_cast<std::size_t>(i)] = timesteps() - 1 - i * ratio;
    return ts;
}

Matrix NoiseSchedule::add_noise(const Matrix& x0, const Matrix& noise, int t) const {
    const double a = alpha_bar(t);
    return std::sqrt(a) * x0 + std::sqrt(1.0 - a) * noise;
}

Matrix NoiseSchedule::ddim_step(const Matrix& latent, const Matrix& eps, int t, int t_prev) const {
    const double a = alpha_bar(t);
    const double a_prev = t_prev >= 0 ? alpha_bar(t_prev) : 1.0;
    const Matrix x0 = (latent - std::sqrt(1.0 - a) * eps) / std::sqrt(a);
    return std::sqrt(a_prev) * x0 + std::sqrt(1.0 - a_prev) * eps;
}

Matrix initial_latent(const ModelConfig& config, std::uint64_t seed) {
    return gaussian(config.latent_side * config.latent_side, config.latent_channels, 1.0, seed);
}

Sampler::Sampler(const ToyDenoiser& model, const WeightSource& weights, Matrix context, int steps)
    : model_(model),
      weights_(weights),
      context_(ag::Var::constant(std::move(context))),
      schedule_(model.config()),
      timesteps_(schedule_.sampler_timesteps(steps)),
      steps_(steps) {
    hooks_[kHookPreStep];
    hooks_[kHookForward];
    hooks_[kHookPostStep];
}

void Sampler::add_hook(const std::string& point, Hook hook) {
    auto it = hooks_.find(point);
    if (it == hooks_.end()) {
        throw ConfigError("unknown hook point '" + point + "' (expected pre_step, forward or post_step)");
    }
    it->second.push_back(std::move(hook));
}

void Sampler::begin(std::uint64_t seed) { begin_from(initial_latent(model_.config(), seed)); }

void Sampler::begin_from(Matrix latent) {
    if (latent.rows() != model_.locations() || latent.cols() != model_.config().latent_channels) {
        throw ShapeError("sampler: initial latent has the wrong shape");
    }
    latent_ = std::move(latent);
    trajectory_.assign(1, latent_);
    step_ = 0;
    last_ = {};
}

int Sampler::current_timestep() const {
    if (done()) throw ConfigError("sampler already finished");
    return timesteps_[static_cast<std::size_t>(step_)];
}

void Sampler::step() {
    if (trajectory_.empty()) throw ConfigError("sampler: begin() must be called before step()");
    const int t = current_timestep();
    const int t_prev = step_ + 1 < steps_ ? timesteps_[static_cast<std::size_t>(step_ + 1)] : -1;
    ForwardOptions options;
    StepContext ctx{step_, steps_, t, latent_, options, nullptr};
    for (auto& hook : hooks_[kHookPreStep]) hook(ctx);
    for (auto& hook : hooks_[kHookForward]) hook(ctx);
    last_ = model_.forward(ag::Var::constant(latent_), t, context_, weights_, options);
    ctx.result = &last_;
    for (auto& hook : hooks_[kHookPostStep]) hook(ctx);
    if (!last_.eps.value().allFinite()) throw NumericalError("sampler: non-finite noise prediction");
    latent_ = schedule_.ddim_step(latent_, last_.eps.value(), t, t_prev);
    trajectory_.push_back(latent_);
    ++step_;
}

const std::vector<Matrix>& Sampler::run(std::uint64_t seed) {
    begin(seed);
    while (!done()) step();
    return trajectory_;
}

// --- latent <-> image --------------------------------------------------------

Matrix image_to_latent(const Image& image, int side) {
    if (image.channels != 3) throw ShapeError("image_to_latent: expected an RGB image");
    if (image.width != image.height || image.width % side != 0) {
        throw ShapeError("image_to_latent: image must be square with a size divisible by the latent side");
    }
    const int s = image.width / side;
    Matrix z = Matrix::Zero(side * side, 4);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            for (int c = 0; c < 3; ++c) z((y / s) * side + x / s, c) += image.at(x, y, c) / 127.5 - 1.0;
    z.leftCols(3) /= static_cast<double>(s * s);
    z.col(3) = z.leftCols(3).rowwise().mean();
    return z;
}

Image latent_to_image(const Matrix& latent, int side, int out_size) {
    if (latent.rows() != side * side || latent.cols() < 3) throw ShapeError("latent_to_image: bad latent shape");
    if (out_size % side != 0) throw ShapeError("latent_to_image: output size must be a multiple of the latent side");
    const int s = out_size / side;
    Image img(out_size, out_size, 3);
    for (int y = 0; y < out_size; ++y)
        for (int x = 0; x < out_size; ++x)
            for (int c = 0; c < 3; ++c) {
                const double v = std::clamp(latent((y / s) * side + x / s, c), -1.0, 1.0);
                img.at(x, y, c) = static_cast<std::uint8_t>(std::lround((v + 1.0) * 127.5));
            }
    return img;
}

}  // namespace persona::testbed
