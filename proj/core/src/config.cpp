// Copyright (C) 2026 Persona contributors
// SPDX-License-Identifier: Apache-2.0

#include "persona/config.hpp"

#include "persona/errors.hpp"
#include "persona/random.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>

namespace persona {

namespace {

using json = nlohmann::ordered_json;

enum class Kind { Int, UInt, Double, Bool, String, StringList, OptionalDouble };

struct Field {
    const char* key;
    Kind kind;
    std::function<json(const RunConfig&)> get;
    std::function<void(RunConfig&, const json&)> set;
};

[[noreturn]] void type_error(const std::string& key, const char* expected) {
    throw ConfigError("config key '" + key + "' expects " + expected);
}

Field make(const char* key, int RunConfig::*m) {
    return {key, Kind::Int, [m](const RunConfig& c) { return json(c.*m); },
            [m, key](RunConfig& c, const json& j) {
                if (!j.is_number_integer()) type_error(key, "an integer");
                const auto v = j.get<long long>();
                if (v < INT32_MIN || v > INT32_MAX) type_error(key, "a 32-bit integer");
                c.*m = static_cast<int>(v);
            }};
}

Field make(const char* key, std::uint64_t RunConfig::*m) {
    return {key, Kind::UInt, [m](const RunConfig& c) { return json(c.*m); },
            [m, key](RunConfig& c, const json& j) {
                if (j.is_number_unsigned()) c.*m = j.get<std::uint64_t>();
                else if (j.is_number_integer() && j.get<long long>() >= 0) c.*m = j.get<std::uint64_t>();
                else type_error(key, "a non-negative integer");
            }};
}

Field make(const char* key, double RunConfig::*m) {
    return {key, Kind::Double, [m](const RunConfig& c) { return json(c.*m); },
            [m, key](RunConfig& c, const json& j) {
                if (!j.is_number()) type_error(key, "a number");
                c.*m = j.get<double>();
            }};
}

Field make(const char* key, bool RunConfig::*m) {
    return {key, Kind::Bool, [m](const RunConfig& c) { return json(c.*m); },
            [m, key](RunConfig& c, const json& j) {
                if (!j.is_boolean()) type_error(key, "true or false");
                c.*m = j.get<bool>();
            }};
}

Field make(const char* key, std::string RunConfig::*m) {
    return {key, Kind::String, [m](const RunConfig& c) { return json(c.*m); },
            [m, key](RunConfig& c, const json& j) {
                if (!j.is_string()) type_error(key, "a string");
                c.*m = j.get<std::string>();
            }};
}

Field make(const char* key, std::vector<std::string> RunConfig::*m) {
    return {key, Kind::StringList, [m](const RunConfig& c) { return json(c.*m); },
            [m, key](RunConfig& c, const json& j) {
                if (!j.is_array()) type_error(key, "a list of strings");
                std::vector<std::string> out;
                for (const auto& e : j) {
                    if (!e.is_string()) type_error(key, "a list of strings");
                    out.push_back(e.get<std::string>());
                }
                c.*m = std::move(out);
            }};
}

Field make(const char* key, std::optional<double> RunConfig::*m) {
    return {key, Kind::OptionalDouble,
            [m](const RunConfig& c) { return (c.*m) ? json(*(c.*m)) : json(nullptr); },
            [m, key](RunConfig& c, const json& j) {
                if (j.is_null()) c.*m = std::nullopt;
                else if (j.is_number()) c.*m = j.get<double>();
                else type_error(key, "a number or null");
            }};
}

const std::vector<Field>& fields() {
    static const std::vector<Field> f = {
        make("adapter", &RunConfig::adapter),
        make("factor", &RunConfig::factor),
        make("rank", &RunConfig::rank),
        make("factor_policy", &RunConfig::factor_policy),
        make("lambda_attn", &RunConfig::lambda_attn),
        make("lambda_w", &RunConfig::lambda_w),
        make("lambda_con", &RunConfig::lambda_con),
        make("swap_masks", &RunConfig::swap_masks),
        make("concept_name", &RunConfig::concept_name),
        make("class_word", &RunConfig::class_word),
        make("train_steps", &RunConfig::train_steps),
        make("batch_size", &RunConfig::batch_size),
        make("learning_rate", &RunConfig::learning_rate),
        make("probe_size", &RunConfig::probe_size),
        make("mask_fallback", &RunConfig::mask_fallback),
        make("train_seed", &RunConfig::train_seed),
        make("prompt", &RunConfig::prompt),
        make("sampler_steps", &RunConfig::sampler_steps),
        make("sample_seed", &RunConfig::sample_seed),
        make("sama_enabled", &RunConfig::sama_enabled),
        make("sama_window_start", &RunConfig::sama_window_start),
        make("sama_window_end", &RunConfig::sama_window_end),
        make("sama_layers", &RunConfig::sama_layers),
        make("descriptor_layer", &RunConfig::descriptor_layer),
        make("guidance_enabled", &RunConfig::guidance_enabled),
        make("guidance_lambda", &RunConfig::guidance_lambda),
        make("guidance_tau", &RunConfig::guidance_tau),
        make("guidance_phi0", &RunConfig::guidance_phi0),
        make("fusion_mu", &RunConfig::fusion_mu),
        make("checkpoints", &RunConfig::checkpoints),
        make("latent_side", &RunConfig::latent_side),
        make("model_width", &RunConfig::model_width),
        make("model_heads", &RunConfig::model_heads),
        make("model_seed", &RunConfig::model_seed),
        make("dataset_concept", &RunConfig::dataset_concept),
        make("dataset_count", &RunConfig::dataset_count),
        make("dataset_seed", &RunConfig::dataset_seed),
        make("dataset_dir", &RunConfig::dataset_dir),
        make("reference_dirs", &RunConfig::reference_dirs),
        make("checkpoint", &RunConfig::checkpoint),
        make("output_dir", &RunConfig::output_dir),
        make("embed_backend", &RunConfig::embed_backend),
        make("dump_diagnostics", &RunConfig::dump_diagnostics),
    };
    return f;
}

const Field& find_field(const std::string& key) {
    for (const auto& f : fields())
        if (key == f.key) return f;
    throw ConfigError("unknown config key '" + key + "'");
}

void require(bool ok, const std::string& message) {
    if (!ok) throw ConfigError(message);
}

bool finite_nonneg(double v) { return std::isfinite(v) && v >= 0.0; }

}  // namespace

void RunConfig::validate() const {
    adapter_kind();
    policy();
    require(factor >= 1, "factor must be >= 1");
    require(rank >= 1, "rank must be >= 1");
    require(finite_nonneg(lambda_attn) && finite_nonneg(lambda_w) && finite_nonneg(lambda_con),
            "loss weights must be finite and >= 0");
    require(!concept_name.empty(), "concept_name must be set");
    require(train_steps >= 0, "train_steps must be >= 0");
    require(batch_size >= 1, "batch_size must be >= 1");
    require(std::isfinite(learning_rate) && learning_rate > 0.0, "learning_rate must be > 0");
    require(probe_size >= 1, "probe_size must be >= 1");
    require(sampler_steps >= 1, "sampler_steps must be >= 1");
    require(sama_window_start >= 0.0 && sama_window_end <= 1.0 && sama_window_start <= sama_window_end,
            "SAMA window must satisfy 0 <= start <= end <= 1");
    static const std::vector<std::string> sa = {"enc.attn1", "mid.attn1", "dec.attn1"};
    auto known = [&](const std::string& s) { return std::find(sa.begin(), sa.end(), s) != sa.end(); };
    require(known(descriptor_layer), "descriptor_layer must be one of enc.attn1, mid.attn1, dec.attn1");
    const bool desc_half = descriptor_layer == "mid.attn1";
    for (const auto& l : sama_layers) {
        require(known(l), "unknown SAMA layer '" + l + "'");
        require((l == "mid.attn1") == desc_half, "SAMA layer '" + l + "' does not match the descriptor resolution");
    }
    require(finite_nonneg(guidance_lambda), "guidance_lambda must be >= 0");
    require(guidance_tau >= 0.0 && guidance_tau <= 1.0, "guidance_tau must lie in [0, 1]");
    require(finite_nonneg(guidance_phi0), "guidance_phi0 must be >= 0");
    require(!fusion_mu || finite_nonneg(*fusion_mu), "fusion_mu must be >= 0");
    require(dataset_count >= 1, "dataset_count must be >= 1");
    require(!output_dir.empty(), "output_dir must be set");
    require(!embed_backend.empty(), "embed_backend must be set");
    model_config().validate();
    if (adapter_kind() != adapters::AdapterKind::Lora && policy() == adapters::FactorPolicy::Strict) {
        // Every adapted layer is width x width or width x text width.
        require(model_width % factor == 0, "factor " + std::to_string(factor) + " does not divide model width " +
                                               std::to_string(model_width));
    }
}

testbed::ModelConfig RunConfig::model_config() const {
    testbed::ModelConfig m;
    m.latent_side = latent_side;
    m.width = model_width;
    m.text_width = model_width;
    m.heads = model_heads;
    m.seed = model_seed;
    return m;
}

objectives::LossWeights RunConfig::loss_weights() const {
    return {lambda_attn, lambda_w, lambda_con, swap_masks};
}

layout::GuidanceParams RunConfig::guidance() const { return {guidance_lambda, guidance_tau, guidance_phi0}; }

adapters::AdapterKind RunConfig::adapter_kind() const { return adapters::parse_adapter_kind(adapter); }

adapters::FactorPolicy RunConfig::policy() const {
    if (factor_policy == "strict") return adapters::FactorPolicy::Strict;
    if (factor_policy == "largest_divisor") return adapters::FactorPolicy::LargestDivisor;
    throw ConfigError("factor_policy must be 'strict' or 'largest_divisor'");
}

std::string to_json(const RunConfig& config) {
    json j = json::object();
    for (const auto& f : fields()) j[f.key] = f.get(config);
    return j.dump(2);
}

RunConfig config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    RunConfig c;
    for (const auto& [key, value] : j.items()) find_field(key).set(c, value);
    c.validate();
    return c;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return config_from_json(ss.str());
}

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& f : fields()) keys.emplace_back(f.key);
    return keys;
}

void apply_override(RunConfig& config, const std::string& key, const std::string& value) {
    const Field& f = find_field(key);
    if (f.kind == Kind::String) {
        f.set(config, json(value));
        return;
    }
    json j;
    try {
        j = json::parse(value);
    } catch (const json::parse_error&) {
        if (f.kind == Kind::StringList) {
            // Comma-separated shorthand for lists.
            j = json::array();
            std::stringstream ss(value);
            std::string item;
            while (std::getline(ss, item, ',')) j.push_back(item);
        } else {
            throw ConfigError("cannot parse value '" + value + "' for config key '" + key + "'");
        }
    }
    f.set(config, j);
}

std::uint64_t config_hash(const RunConfig& config) { return fnv1a(to_json(config)); }

}  // namespace persona
