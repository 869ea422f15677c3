// Copyright (C) 2026 Persona contributors
// SPDX-License-Identifier: Apache-2.0

#include "persona/errors.hpp"
#include "persona/objectives.hpp"
#include "persona/pipeline.hpp"
#include "persona/random.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <cstdio>
#include <sstream>

namespace persona::pipeline {

namespace {

class Adam {
public:
    Adam(std::vector<ag::Var> params, double lr) : params_(std::move(params)), lr_(lr) {
        for (const auto& p : params_) {
            m_.push_back(Matrix::Zero(p.rows(), p.cols()));
            v_.push_back(Matrix::Zero(p.rows(), p.cols()));
        }
    }

    void step() {
        ++t_;
        const double c1 = 1.0 - std::pow(kBeta1, t_);
        const double c2 = 1.0 - std::pow(kBeta2, t_);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            const Matrix& g = params_[i].grad();
            if (!g.allFinite()) throw NumericalError("training: non-finite gradient");
            m_[i] = kBeta1 * m_[i] + (1.0 - kBeta1) * g;
            v_[i] = kBeta2 * v_[i] + (1.0 - kBeta2) * g.cwiseAbs2();
            params_[i].mutable_value().array() -=
                lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + kEps);
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

private:
    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;
    std::vector<ag::Var> params_;
    std::vector<Matrix> m_, v_;
    double lr_;
    int t_ = 0;
};

struct TrainableLayer {
    adapters::AdapterKind kind;
    ag::Var A, B, m;  // lora: A is r x k, B is d x r
    int factor = 1;
};

// Effective weights are rebuilt once per optimizer step and shared by every
// forward pass of that step.
class TrainableWeights final : public testbed::WeightSource {
public:
    std::map<std::string, TrainableLayer> layers;

    void refresh(const testbed::ToyDenoiser& model) {
        cache_.clear();
        for (const auto& [name, l] : layers) {
            ag::Var W0 = ag::Var::constant(model.parameter(name));
            switch (l.kind) {
                case adapters::AdapterKind::KronaWed: cache_[name] = adapters::effective_weight(W0, l.A, l.B, l.m); break;
                case adapters::AdapterKind::Krona: cache_[name] = adapters::krona_effective_weight(W0, l.A, l.B); break;
                case adapters::AdapterKind::Lora: cache_[name] = adapters::lora_effective_weight(W0, l.B, l.A); break;
            }
        }
    }

    ag::Var weight(const std::string& layer_id, const Matrix& W0) const override {
        auto it = cache_.find(layer_id);
        return it == cache_.end() ? ag::Var::constant(W0) : it->second;
    }

private:
    std::map<std::string, ag::Var> cache_;
};

struct PreparedSample {
    Matrix x0;
    Matrix image_feature;  // 1 x E
    Matrix mask;           // (S*S) x 1, binary
    concepts::TokenizedPrompt tokens;
    concepts::ConceptRef ref;
};

struct Example {
    std::size_t sample;
    int t;
    Matrix noise;
};

struct TrainState {
    const testbed::ToyDenoiser& model;
    const concepts::ConceptRegistry& registry;
    const testbed::NoiseSchedule& schedule;
    const objectives::LossWeights weights;
    const std::vector<PreparedSample>& samples;
    TrainableWeights& adapters;
    ag::Var v_rand, v_class, image_adapter;
    int rand_id, class_id;

    objectives::LossTerms losses(const std::vector<Example>& batch) const {
        const int S = model.config().latent_side;
        std::vector<ag::Var> den, weak, con;
        std::vector<objectives::ConceptAttention> maps;
        std::vector<Matrix> masks;
        const std::map<int, ag::Var> overrides = {{rand_id, v_rand}, {class_id, v_class}};
        for (const auto& ex : batch) {
            const PreparedSample& s = samples[ex.sample];
            const ag::Var zt = ag::Var::constant(schedule.add_noise(s.x0, ex.noise, ex.t));
            const ag::Var f_s = model.encode_text(model.embed_tokens(registry, s.tokens, overrides));
            const ag::Var f_i = ag::matmul_nt(ag::Var::constant(s.image_feature), image_adapter);
            const ag::Var full = ag::add_rowvec(f_s, f_i);
            den.push_back(objectives::denoise_loss(model.forward(zt, ex.t, full, adapters).eps, ex.noise));
            testbed::ForwardOptions capture;
            capture.capture_cross_attention = true;
            const auto text_only = model.forward(zt, ex.t, f_s, adapters, capture);
            weak.push_back(objectives::weak_denoise_loss(text_only.eps, ex.noise, weights.lambda_w));
            con.push_back(objectives::contrastive_loss(f_i, f_s, weights.lambda_con));
            maps.push_back({text_only.cross_attention.token_map(s.ref.rand_positions, S),
                            text_only.cross_attention.token_map(s.ref.class_positions, S)});
            masks.push_back(s.mask);
        }
        auto mean_of = [](const std::vector<ag::Var>& xs) {
            ag::Var acc = xs[0];
            for (std::size_t i = 1; i < xs.size(); ++i) acc = ag::add(acc, xs[i]);
            return ag::scale(acc, 1.0 / static_cast<double>(xs.size()));
        };
        return objectives::total_loss(mean_of(den), mean_of(weak), mean_of(con),
                                      objectives::attention_reg_loss(maps, masks, weights));
    }
};

LossRecord record(int step, const objectives::LossTerms& t) {
    return {step, t.denoise.scalar(), t.weak_denoise.scalar(), t.contrastive.scalar(), t.attention.scalar(),
            t.total.scalar()};
}

LossRecord average(const std::vector<LossRecord>& rs, int step) {
    LossRecord out;
    out.step = step;
    for (const auto& r : rs) {
        out.denoise += r.denoise;
        out.weak_denoise += r.weak_denoise;
        out.contrastive += r.contrastive;
        out.attention += r.attention;
        out.total += r.total;
    }
    const double n = static_cast<double>(rs.size());
    out.denoise /= n;
    out.weak_denoise /= n;
    out.contrastive /= n;
    out.attention /= n;
    out.total /= n;
    return out;
}

std::string exact(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

TrainResult train_single(const RunConfig& config, const testbed::SynthConceptDataset& dataset,
                         const testbed::ToyDenoiser& model) {
    config.validate();
    if (dataset.samples.empty()) throw DataError("training dataset is empty");
    const std::string name = dataset.spec.subject.name;
    if (config.concept_name != name) {
        throw ConfigError("concept_name '" + config.concept_name + "' does not match dataset concept '" + name + "'");
    }
    const int S = model.config().latent_side;
    TrainResult result;
    result.theta0_hash_before = model.theta0_hash();

    concepts::ConceptRegistry registry(model.vocabulary());
    const std::string class_word = config.class_word.empty() ? dataset.spec.subject.class_word : config.class_word;
    const auto& pair = registry.register_concept(name, class_word, derive_seed(config.train_seed, "concept"));
    const int rand_id = pair.rand_id, class_id = pair.class_id;

    std::vector<PreparedSample> samples;
    for (const auto& s : dataset.samples) {
        if (s.mask.size() == 0) throw DataError("training sample without a mask");
        PreparedSample p;
        p.x0 = testbed::image_to_latent(s.image, S);
        p.image_feature = model.image_features(p.x0);
        p.mask = objectives::prepare_mask(s.mask, S);
        const auto prompt = concepts::bind_prompt(registry, s.prompt);
        p.tokens = concepts::tokenize(registry, prompt);
        const auto refs = concepts::extract_concept_tokens(registry, prompt);
        if (refs.size() != 1 || refs[0].name != name) {
            throw DataError("training prompt '" + s.prompt + "' must mention <" + name + "> and no other concept");
        }
        p.ref = refs[0];
        samples.push_back(std::move(p));
    }

    // Trainable parameters.
    const auto kind = config.adapter_kind();
    TrainableWeights adapters_w;
    std::vector<ag::Var> params;
    ag::Var v_rand = ag::Var::parameter(pair.v_rand);
    ag::Var v_class = ag::Var::parameter(pair.v_class);
    const int E = model.config().text_width;
    ag::Var image_adapter =
        ag::Var::parameter(gaussian(E, E, 1.0 / std::sqrt(static_cast<double>(E)), derive_seed(config.train_seed, "image_adapter")));
    params.insert(params.end(), {v_rand, v_class, image_adapter});
    for (const auto& layer : model.adapter_layers()) {
        const adapters::BaseWeight base{layer, model.parameter(layer)};
        const std::uint64_t seed = derive_seed(config.train_seed, layer);
        TrainableLayer l{kind, {}, {}, {}, config.factor};
        switch (kind) {
            case adapters::AdapterKind::KronaWed: {
                auto a = adapters::init_krona_wed(base, config.factor, seed, config.policy());
                l = {kind, ag::Var::parameter(a.kron.A), ag::Var::parameter(a.kron.B), ag::Var::parameter(a.m),
                     a.kron.factor};
                params.insert(params.end(), {l.A, l.B, l.m});
                break;
            }
            case adapters::AdapterKind::Krona: {
                auto a = adapters::init_krona(base, config.factor, seed, config.policy());
                l = {kind, ag::Var::parameter(a.kron.A), ag::Var::parameter(a.kron.B), {}, a.kron.factor};
                params.insert(params.end(), {l.A, l.B});
                break;
            }
            case adapters::AdapterKind::Lora: {
                auto a = adapters::init_lora(base, config.rank, seed);
                l = {kind, ag::Var::parameter(a.lora.A), ag::Var::parameter(a.lora.B), {}, config.rank};
                params.insert(params.end(), {l.A, l.B});
                break;
            }
        }
        adapters_w.layers.emplace(layer, l);
    }

    const testbed::NoiseSchedule schedule(model.config());
    const int T = schedule.timesteps();
    TrainState state{model,   registry,     schedule, config.loss_weights(), samples,
                     adapters_w, v_rand, v_class, image_adapter, rand_id, class_id};

    std::vector<Example> probes;
    for (int j = 0; j < config.probe_size; ++j) {
        const int t = std::min(T - 1, static_cast<int>((j + 0.5) / config.probe_size * T));
        probes.push_back({static_cast<std::size_t>(j) % samples.size(), t,
                          gaussian(S * S, model.config().latent_channels, 1.0,
                                   derive_seed(config.train_seed, "probe/" + std::to_string(j)))});
    }
    auto evaluate_probes = [&](int step) {
        adapters_w.refresh(model);
        std::vector<LossRecord> rs;
        for (const auto& p : probes) rs.push_back(record(step, state.losses({p})));
        return average(rs, step);
    };

    result.probe_initial = evaluate_probes(0);
    Adam adam(params, config.learning_rate);
    Rng rng(derive_seed(config.train_seed, "steps"));
    std::uniform_int_distribution<std::size_t> pick(0, samples.size() - 1);
    std::uniform_int_distribution<int> pick_t(0, T - 1);
    for (int step = 1; step <= config.train_steps; ++step) {
        std::vector<Example> batch;
        for (int b = 0; b < config.batch_size; ++b) {
            const std::size_t i = pick(rng);
            const int t = pick_t(rng);
            batch.push_back({i, t, gaussian(S * S, model.config().latent_channels, 1.0, rng)});
        }
        adapters_w.refresh(model);
        const auto terms = state.losses(batch);
        if (!std::isfinite(terms.total.scalar())) throw NumericalError("training: non-finite loss at step " + std::to_string(step));
        adam.zero_grad();
        terms.total.backward();
        adam.step();
        result.log.push_back(record(step, terms));
        spdlog::debug("step {} total {:.6f}", step, terms.total.scalar());
    }
    result.probe_final = evaluate_probes(config.train_steps);
    result.theta0_hash_after = model.theta0_hash();
    if (result.theta0_hash_after != result.theta0_hash_before) {
        throw NumericalError("training modified frozen weights");
    }

    AdapterCheckpoint& ck = result.checkpoint;
    ck.model = model.config();
    ck.theta0_hash = result.theta0_hash_before;
    ck.kind = kind;
    for (const auto& [layer, l] : adapters_w.layers) {
        const adapters::BaseWeight base{layer, model.parameter(layer)};
        switch (kind) {
            case adapters::AdapterKind::KronaWed:
                ck.layers.emplace(layer, adapters::DecomposedAdapter{base, {l.A.value(), l.B.value(), l.factor}, l.m.value()});
                break;
            case adapters::AdapterKind::Krona:
                ck.layers.emplace(layer, adapters::KronAdapter{base, {l.A.value(), l.B.value(), l.factor}});
                break;
            case adapters::AdapterKind::Lora:
                ck.layers.emplace(layer, adapters::LoraAdapter{base, {l.B.value(), l.A.value()}});
                break;
        }
    }
    concepts::ConceptTokenPair trained = pair;
    trained.v_rand = v_rand.value();
    trained.v_class = v_class.value();
    ck.concepts.push_back(trained);
    ck.image_adapter = image_adapter.value();
    ck.meta["config_hash"] = hash_hex(config_hash(config));
    ck.meta["train_steps"] = std::to_string(config.train_steps);
    ck.meta["train_seed"] = std::to_string(config.train_seed);
    ck.meta["lambda_attn"] = exact(config.lambda_attn);
    ck.meta["swap_masks"] = config.swap_masks ? "true" : "false";
    ck.meta["probe_total_initial"] = exact(result.probe_initial.total);
    ck.meta["probe_total_final"] = exact(result.probe_final.total);
    return result;
}

std::string format_loss_log(const std::vector<LossRecord>& log) {
    std::ostringstream out;
    out << "step\tdenoise\tweak_denoise\tcontrastive\tattention\ttotal\n";
    char buf[200];
    for (const auto& r : log) {
        std::snprintf(buf, sizeof buf, "%d\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\n", r.step, r.denoise, r.weak_denoise,
                      r.contrastive, r.attention, r.total);
        out << buf;
    }
    return out.str();
}

AttentionMass off_mask_attention_mass(const testbed::ToyDenoiser& model, const AdapterCheckpoint& checkpoint,
                                      const testbed::SynthConceptDataset& dataset, const std::string& prompt_template,
                                      const std::vector<int>& timesteps, std::uint64_t seed) {
    if (checkpoint.concepts.empty()) throw ConfigError("checkpoint carries no concept");
    if (timesteps.empty() || dataset.samples.empty()) throw ConfigError("attention mass: nothing to evaluate");
    const int S = model.config().latent_side;
    const auto registry = make_registry(model, checkpoint.concepts);
    const auto weights = materialize(model, checkpoint.deltas());
    const std::string& name = checkpoint.concepts.front().name;
    std::string text = prompt_template;
    const auto pos = text.find("<concept>");
    if (pos == std::string::npos) throw ConfigError("attention mass: template needs a <concept> placeholder");
    text.replace(pos, 9, "<" + name + ">");
    const auto prompt = concepts::bind_prompt(registry, text);
    const auto ref = concepts::extract_concept_tokens(registry, prompt).at(0);
    const ag::Var context = ag::Var::constant(model.text_features(registry, prompt));
    const testbed::NoiseSchedule schedule(model.config());
    testbed::ForwardOptions opts;
    opts.capture_cross_attention = true;

    AttentionMass mass;
    int n = 0;
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
        const Matrix x0 = testbed::image_to_latent(dataset.samples[i].image, S);
        const Matrix outside = Matrix::Ones(S * S, 1) - objectives::prepare_mask(dataset.samples[i].mask, S);
        for (int t : timesteps) {
            const Matrix noise = gaussian(S * S, model.config().latent_channels, 1.0,
                                          derive_seed(seed, std::to_string(i) + "/" + std::to_string(t)));
            const auto fr = model.forward(ag::Var::constant(schedule.add_noise(x0, noise, t)), t, context, weights, opts);
            const Matrix r = fr.cross_attention.token_map(ref.rand_positions, S).value();
            const Matrix c = fr.cross_attention.token_map(ref.class_positions, S).value();
            mass.rand_off_mask += r.cwiseProduct(outside).sum();
            mass.class_off_mask += c.cwiseProduct(outside).sum();
            mass.rand_total += r.sum();
            mass.class_total += c.sum();
            ++n;
        }
    }
    mass.rand_off_mask /= n;
    mass.class_off_mask /= n;
    mass.rand_total /= n;
    mass.class_total /= n;
    return mass;
}

}  // namespace persona::pipeline
