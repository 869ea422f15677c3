// Copyright (C) 2026 Persona contributors
// SPDX-License-Identifier: Apache-2.0

#include "persona/checkpoint.hpp"

#include "persona/errors.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace persona {

namespace {

std::string exact(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    if (s.empty()) return out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) out.push_back(item);
    return out;
}

std::string join(const std::vector<std::string>& items, char sep) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += sep;
        out += items[i];
    }
    return out;
}

int to_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const int out = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::logic_error&) {
        throw DataError("checkpoint: header '" + key + "' is not an integer");
    }
}

double to_double(const std::string& key, const std::string& v) {
    try {
        return std::stod(v);
    } catch (const std::logic_error&) {
        throw DataError("checkpoint: header '" + key + "' is not a number");
    }
}

std::uint64_t to_u64(const std::string& key, const std::string& v, int base = 10) {
    try {
        return std::stoull(v, nullptr, base);
    } catch (const std::logic_error&) {
        throw DataError("checkpoint: header '" + key + "' is not an unsigned integer");
    }
}

void write_concepts(const std::vector<concepts::ConceptTokenPair>& pairs, NamedArrayArchive& ar) {
    std::vector<std::string> names;
    for (const auto& c : pairs) {
        names.push_back(c.name);
        ar.set("concept." + c.name + ".class_word", c.class_word);
        ar.put("concept." + c.name + ".v_rand", c.v_rand);
        ar.put("concept." + c.name + ".v_class", c.v_class);
    }
    ar.set("concepts", join(names, ','));
}

std::vector<concepts::ConceptTokenPair> read_concepts(const NamedArrayArchive& ar) {
    std::vector<concepts::ConceptTokenPair> out;
    for (const auto& name : split(ar.get_or("concepts", ""), ',')) {
        concepts::ConceptTokenPair p;
        p.name = name;
        p.class_word = ar.get("concept." + name + ".class_word");
        p.v_rand = ar.array("concept." + name + ".v_rand");
        p.v_class = ar.array("concept." + name + ".v_class");
        out.push_back(std::move(p));
    }
    return out;
}

void check_theta0(std::uint64_t recorded, const testbed::ToyDenoiser& model) {
    if (recorded != model.theta0_hash()) {
        throw DataError("checkpoint was trained against theta0 " + hash_hex(recorded) + " but the model has " +
                        hash_hex(model.theta0_hash()));
    }
}

Matrix require_shape(const NamedArrayArchive& ar, const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    const Matrix& m = ar.array(name);
    if (m.rows() != rows || m.cols() != cols) throw DataError("checkpoint array '" + name + "' has the wrong shape");
    return m;
}

}  // namespace

std::string hash_hex(std::uint64_t h) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void write_model_config(const testbed::ModelConfig& c, NamedArrayArchive& ar) {
    ar.set("model.latent_side", std::to_string(c.latent_side));
    ar.set("model.latent_channels", std::to_string(c.latent_channels));
    ar.set("model.width", std::to_string(c.width));
    ar.set("model.text_width", std::to_string(c.text_width));
    ar.set("model.heads", std::to_string(c.heads));
    ar.set("model.ffn_mult", std::to_string(c.ffn_mult));
    ar.set("model.text_layers", std::to_string(c.text_layers));
    ar.set("model.max_tokens", std::to_string(c.max_tokens));
    ar.set("model.train_timesteps", std::to_string(c.train_timesteps));
    ar.set("model.beta_start", exact(c.beta_start));
    ar.set("model.beta_end", exact(c.beta_end));
    ar.set("model.seed", std::to_string(c.seed));
}

testbed::ModelConfig read_model_config(const NamedArrayArchive& ar) {
    testbed::ModelConfig c;
    auto i = [&](const char* k) { return to_int(k, ar.get(k)); };
    c.latent_side = i("model.latent_side");
    c.latent_channels = i("model.latent_channels");
    c.width = i("model.width");
    c.text_width = i("model.text_width");
    c.heads = i("model.heads");
    c.ffn_mult = i("model.ffn_mult");
    c.text_layers = i("model.text_layers");
    c.max_tokens = i("model.max_tokens");
    c.train_timesteps = i("model.train_timesteps");
    c.beta_start = to_double("model.beta_start", ar.get("model.beta_start"));
    c.beta_end = to_double("model.beta_end", ar.get("model.beta_end"));
    c.seed = to_u64("model.seed", ar.get("model.seed"));
    c.validate();
    return c;
}

testbed::ModelConfig read_model_config(const std::filesystem::path& path) {
    return read_model_config(NamedArrayArchive::load(path));
}

// --- adapter checkpoint ------------------------------------------------------

std::map<std::string, Matrix> AdapterCheckpoint::deltas() const {
    std::map<std::string, Matrix> out;
    for (const auto& [layer, adapter] : layers) {
        if (const auto* dense = std::get_if<adapters::DenseDelta>(&adapter)) {
            out[layer] = dense->delta;
        } else {
            out[layer] = adapters::effective_weight(adapter) - adapters::base_of(adapter).W0;
        }
    }
    return out;
}

NamedArrayArchive AdapterCheckpoint::to_archive() const {
    NamedArrayArchive ar;
    ar.set("format", "adapter");
    ar.set("adapter", adapters::to_string(kind));
    ar.set("theta0_hash", hash_hex(theta0_hash));
    write_model_config(model, ar);
    for (const auto& [k, v] : meta) ar.set("meta." + k, v);
    std::vector<std::string> names;
    for (const auto& [layer, adapter] : layers) {
        names.push_back(layer);
        std::visit(
            [&](const auto& a) {
                using T = std::decay_t<decltype(a)>;
                if constexpr (std::is_same_v<T, adapters::LoraAdapter>) {
                    ar.put(layer + ".lora.A", a.lora.A);
                    ar.put(layer + ".lora.B", a.lora.B);
                } else if constexpr (std::is_same_v<T, adapters::KronAdapter>) {
                    ar.put(layer + ".kron.A", a.kron.A);
                    ar.put(layer + ".kron.B", a.kron.B);
                    ar.set(layer + ".factor", std::to_string(a.kron.factor));
                } else if constexpr (std::is_same_v<T, adapters::DecomposedAdapter>) {
                    ar.put(layer + ".kron.A", a.kron.A);
                    ar.put(layer + ".kron.B", a.kron.B);
                    ar.put(layer + ".m", a.m);
                    ar.set(layer + ".factor", std::to_string(a.kron.factor));
                } else {
                    ar.put(layer + ".delta", a.delta);
                }
            },
            adapter);
    }
    ar.set("layers", join(names, ','));
    write_concepts(concepts, ar);
    if (image_adapter.size() > 0) ar.put("image_adapter", image_adapter);
    return ar;
}

AdapterCheckpoint AdapterCheckpoint::from_archive(const NamedArrayArchive& ar, const testbed::ToyDenoiser& model) {
    if (ar.get_or("format", "") != "adapter") throw DataError("archive is not an adapter checkpoint");
    AdapterCheckpoint ck;
    ck.model = read_model_config(ar);
    ck.theta0_hash = to_u64("theta0_hash", ar.get("theta0_hash"), 16);
    check_theta0(ck.theta0_hash, model);
    try {
        ck.kind = adapters::parse_adapter_kind(ar.get("adapter"));
    } catch (const ConfigError& e) {
        throw DataError(std::string("checkpoint: ") + e.what());
    }
    for (const auto& [k, v] : ar.header())
        if (k.rfind("meta.", 0) == 0) ck.meta[k.substr(5)] = v;
    for (const auto& layer : split(ar.get("layers"), ',')) {
        adapters::BaseWeight base{layer, model.parameter(layer)};
        const Eigen::Index d = base.d(), k = base.k();
        if (ar.has_array(layer + ".delta")) {
            ck.layers.emplace(layer, adapters::DenseDelta{base, require_shape(ar, layer + ".delta", d, k)});
            continue;
        }
        switch (ck.kind) {
            case adapters::AdapterKind::Lora: {
                const Matrix& A = ar.array(layer + ".lora.A");
                adapters::LoraFactors f{require_shape(ar, layer + ".lora.B", d, A.rows()), A};
                if (A.cols() != k) throw DataError("checkpoint: lora.A width mismatch for " + layer);
                ck.layers.emplace(layer, adapters::LoraAdapter{base, f});
                break;
            }
            case adapters::AdapterKind::Krona:
            case adapters::AdapterKind::KronaWed: {
                adapters::KronFactors f{ar.array(layer + ".kron.A"), ar.array(layer + ".kron.B"),
                                        to_int(layer + ".factor", ar.get(layer + ".factor"))};
                if (f.A.rows() * f.B.rows() != d || f.A.cols() * f.B.cols() != k) {
                    throw DataError("checkpoint: Kronecker factors do not tile layer " + layer);
                }
                if (ck.kind == adapters::AdapterKind::Krona) {
                    ck.layers.emplace(layer, adapters::KronAdapter{base, f});
                } else {
                    ck.layers.emplace(layer, adapters::DecomposedAdapter{base, f, require_shape(ar, layer + ".m", 1, k)});
                }
                break;
            }
        }
    }
    ck.concepts = read_concepts(ar);
    if (ar.has_array("image_adapter")) ck.image_adapter = ar.array("image_adapter");
    return ck;
}

void AdapterCheckpoint::save(const std::filesystem::path& path) const { to_archive().save(path); }

AdapterCheckpoint AdapterCheckpoint::load(const std::filesystem::path& path, const testbed::ToyDenoiser& model) {
    return from_archive(NamedArrayArchive::load(path), model);
}

// --- fused model -------------------------------------------------------------

NamedArrayArchive FusedModel::to_archive() const {
    NamedArrayArchive ar;
    ar.set("format", "fused");
    ar.set("theta0_hash", hash_hex(theta0_hash));
    write_model_config(model, ar);
    std::vector<std::string> names;
    for (const auto& [layer, d] : deltas) {
        names.push_back(layer);
        ar.put(layer + ".delta", d);
    }
    ar.set("layers", join(names, ','));
    for (const auto& [layer, m] : mu) ar.set(layer + ".mu", exact(m));
    write_concepts(concepts, ar);
    ar.set("residuals", std::to_string(residuals.size()));
    for (std::size_t i = 0; i < residuals.size(); ++i) {
        const auto& r = residuals[i];
        ar.set("residual." + std::to_string(i), r.layer + "," + r.concept_name + "," + exact(r.relative));
    }
    return ar;
}

FusedModel FusedModel::from_archive(const NamedArrayArchive& ar, const testbed::ToyDenoiser& model) {
    if (ar.get_or("format", "") != "fused") throw DataError("archive is not a fused checkpoint");
    FusedModel fm;
    fm.model = read_model_config(ar);
    fm.theta0_hash = to_u64("theta0_hash", ar.get("theta0_hash"), 16);
    check_theta0(fm.theta0_hash, model);
    for (const auto& layer : split(ar.get("layers"), ',')) {
        const Matrix& W0 = model.parameter(layer);
        fm.deltas[layer] = require_shape(ar, layer + ".delta", W0.rows(), W0.cols());
        if (ar.has(layer + ".mu")) fm.mu[layer] = to_double(layer + ".mu", ar.get(layer + ".mu"));
    }
    fm.concepts = read_concepts(ar);
    const int n = to_int("residuals", ar.get_or("residuals", "0"));
    for (int i = 0; i < n; ++i) {
        const auto key = "residual." + std::to_string(i);
        const auto parts = split(ar.get(key), ',');
        if (parts.size() != 3) throw DataError("checkpoint: malformed " + key);
        fm.residuals.push_back({parts[0], parts[1], to_double(key, parts[2])});
    }
    return fm;
}

void FusedModel::save(const std::filesystem::path& path) const {
    to_archive().save(path);
    const auto dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
    std::ofstream out(dir / "fusion.residuals");
    if (!out) throw DataError("cannot write fusion.residuals next to " + path.string());
    out << format_residuals(residuals);
}

FusedModel FusedModel::load(const std::filesystem::path& path, const testbed::ToyDenoiser& model) {
    return from_archive(NamedArrayArchive::load(path), model);
}

std::string format_residuals(const std::vector<FusionResidual>& residuals) {
    std::ostringstream out;
    char line[160];
    std::snprintf(line, sizeof line, "%-20s %-20s %s\n", "layer", "concept", "relative_residual");
    out << line;
    for (const auto& r : residuals) {
        std::snprintf(line, sizeof line, "%-20s %-20s %.6e\n", r.layer.c_str(), r.concept_name.c_str(), r.relative);
        out << line;
    }
    return out.str();
}

testbed::DenseWeights materialize(const testbed::ToyDenoiser& model, const std::map<std::string, Matrix>& deltas) {
    std::map<std::string, Matrix> w;
    for (const auto& [layer, d] : deltas) {
        const Matrix& W0 = model.parameter(layer);
        if (d.rows() != W0.rows() || d.cols() != W0.cols()) throw ShapeError("delta shape mismatch for " + layer);
        w[layer] = W0 + d;
    }
    return testbed::DenseWeights(std::move(w));
}

concepts::ConceptRegistry make_registry(const testbed::ToyDenoiser& model,
                                        const std::vector<concepts::ConceptTokenPair>& pairs) {
    concepts::ConceptRegistry reg(model.vocabulary());
    for (const auto& p : pairs) reg.add(p);
    return reg;
}

}  // namespace persona
