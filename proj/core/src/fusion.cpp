// Copyright (C) 2026 Persona contributors
// SPDX-License-Identifier: Apache-2.0

#include "persona/fusion.hpp"

#include "persona/errors.hpp"
#include "persona/random.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <set>

namespace persona::fusion {

namespace {

constexpr double kMinRcond = 1e-13;

std::string replace_all(std::string s, const std::string& from, const std::string& to) {
    for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
        s.replace(pos, from.size(), to);
    }
    return s;
}

}  // namespace

void FusionProblem::validate() const {
    if (deltas.empty()) throw ShapeError("fusion: at least one concept update is required");
    if (deltas.size() != activations.size()) throw ShapeError("fusion: one activation matrix per update required");
    if (!(mu >= 0.0) || !std::isfinite(mu)) throw ConfigError("fusion: mu must be finite and >= 0");
    const Eigen::Index d = deltas[0].rows(), k = deltas[0].cols();
    for (std::size_t n = 0; n < deltas.size(); ++n) {
        if (deltas[n].rows() != d || deltas[n].cols() != k) throw ShapeError("fusion: updates differ in shape");
        if (activations[n].rows() != k) throw ShapeError("fusion: activations must have k rows");
    }
}

double default_mu(std::span<const Matrix> activations) {
    if (activations.empty()) throw ShapeError("default_mu: no activations");
    double trace = 0.0;
    for (const auto& X : activations) trace += X.squaredNorm();
    return 1e-4 * trace / static_cast<double>(activations[0].rows());
}

Matrix fuse_layer(const FusionProblem& p) {
    p.validate();
    const Eigen::Index k = p.deltas[0].cols();
    Matrix gram = Matrix::Zero(k, k);
    Matrix rhs = Matrix::Zero(p.deltas[0].rows(), k);
    for (std::size_t n = 0; n < p.deltas.size(); ++n) {
        const Matrix g = p.activations[n] * p.activations[n].transpose();
        gram += g;
        rhs += p.deltas[n] * g;
    }
    gram.diagonal().array() += p.mu;
    Eigen::LLT<Matrix> llt(gram);
    if (llt.info() != Eigen::Success || llt.rcond() < kMinRcond) {
        if (p.mu == 0.0) {
            throw NumericalError("fusion: activation Gram matrix is singular with mu = 0; use mu > 0");
        }
        throw NumericalError("fusion: regularized Gram matrix is numerically singular; increase mu");
    }
    // dW G = R with G symmetric, so dW^T = G^-1 R^T.
    return llt.solve(rhs.transpose()).transpose();
}

double fusion_objective(const Matrix& fused, const FusionProblem& p) {
    p.validate();
    double total = 0.0;
    for (std::size_t n = 0; n < p.deltas.size(); ++n)
        total += ((fused - p.deltas[n]) * p.activations[n]).squaredNorm();
    return total;
}

double relative_residual(const Matrix& fused, const Matrix& delta, const Matrix& X) {
    const double num = ((fused - delta) * X).norm();
    const double den = (delta * X).norm();
    return den > 0.0 ? num / den : num;
}

FusedUpdate fuse_updates(std::span<const ConceptUpdate> updates, std::optional<double> mu) {
    if (updates.empty()) throw ConfigError("fusion: no concept updates given");
    std::set<std::string> layers;
    for (const auto& [layer, d] : updates[0].deltas) layers.insert(layer);
    for (const auto& u : updates) {
        std::set<std::string> mine;
        for (const auto& [layer, d] : u.deltas) mine.insert(layer);
        if (mine != layers) {
            throw ConfigError("fusion: concept '" + u.name + "' adapts a different layer set than '" +
                              updates[0].name + "'");
        }
    }
    FusedUpdate out;
    for (const auto& layer : layers) {
        FusionProblem p;
        for (const auto& u : updates) {
            auto it = u.activations.find(layer);
            if (it == u.activations.end()) {
                throw ConfigError("fusion: no activations recorded for layer " + layer + " of '" + u.name + "'");
            }
            p.deltas.push_back(u.deltas.at(layer));
            p.activations.push_back(it->second);
        }
        p.mu = mu.value_or(default_mu(p.activations));
        Matrix fused = fuse_layer(p);
        for (std::size_t n = 0; n < updates.size(); ++n) {
            out.residuals.push_back(
                {layer, updates[n].name, relative_residual(fused, p.deltas[n], p.activations[n])});
        }
        out.mu[layer] = p.mu;
        out.deltas[layer] = std::move(fused);
    }
    return out;
}

std::map<std::string, Matrix> collect_activations(const testbed::ToyDenoiser& model,
                                                  const testbed::WeightSource& weights,
                                                  const concepts::ConceptRegistry& registry,
                                                  const std::string& concept_name, const ProbeSet& probes) {
    if (probes.templates.empty() || probes.timesteps.empty()) throw ConfigError("fusion: empty probe set");
    if (!registry.contains(concept_name)) throw ConfigError("fusion: unknown concept '" + concept_name + "'");
    testbed::ForwardOptions opts;
    opts.record_linear_inputs = true;
    std::map<std::string, std::vector<Matrix>> parts;
    for (std::size_t p = 0; p < probes.templates.size(); ++p) {
        const auto prompt =
            concepts::bind_prompt(registry, replace_all(probes.templates[p], "<concept>", "<" + concept_name + ">"));
        const ag::Var context = ag::Var::constant(model.text_features(registry, prompt));
        for (int t : probes.timesteps) {
            const std::uint64_t seed =
                derive_seed(probes.seed, "probe/" + std::to_string(p) + "/" + std::to_string(t));
            const Matrix z = testbed::initial_latent(model.config(), seed);
            auto result = model.forward(ag::Var::constant(z), t, context, weights, opts);
            for (auto& [layer, X] : result.linear_inputs) parts[layer].push_back(std::move(X));
        }
    }
    std::map<std::string, Matrix> out;
    for (auto& [layer, list] : parts) {
        Eigen::Index cols = 0;
        for (const auto& m : list) cols += m.cols();
        Matrix X(list[0].rows(), cols);
        Eigen::Index c = 0;
        for (const auto& m : list) {
            X.middleCols(c, m.cols()) = m;
            c += m.cols();
        }
        out[layer] = std::move(X);
    }
    return out;
}

FusedModel fuse_model(const testbed::ToyDenoiser& model, std::span<const AdapterCheckpoint> adapters,
                      std::optional<double> mu, const ProbeSet& probes) {
    if (adapters.empty()) throw ConfigError("fuse: no adapters given");
    FusedModel fm;
    fm.model = model.config();
    fm.theta0_hash = model.theta0_hash();
    std::set<std::string> names;
    std::vector<ConceptUpdate> updates;
    for (const auto& ck : adapters) {
        if (ck.theta0_hash != fm.theta0_hash) throw ConfigError("fuse: adapters were trained on different theta0");
        if (ck.concepts.empty()) throw ConfigError("fuse: adapter checkpoint carries no concept tokens");
        for (const auto& c : ck.concepts) {
            if (!names.insert(c.name).second) throw ConfigError("fuse: concept '" + c.name + "' appears twice");
            fm.concepts.push_back(c);
        }
        ConceptUpdate u;
        u.name = ck.concepts.front().name;
        u.deltas = ck.deltas();
        updates.push_back(std::move(u));
    }
    std::set<std::string> layers;
    for (const auto& [l, d] : updates[0].deltas) layers.insert(l);
    for (const auto& u : updates) {
        std::set<std::string> mine;
        for (const auto& [l, d] : u.deltas) mine.insert(l);
        if (mine != layers) throw ConfigError("fuse: adapter '" + u.name + "' targets a different layer set");
    }

    if (updates.size() == 1) {
        spdlog::info("fuse: single adapter, update copied without solving");
        fm.deltas = updates[0].deltas;
        for (const auto& l : layers) fm.residuals.push_back({l, updates[0].name, 0.0});
        return fm;
    }
    for (std::size_t n = 0; n < adapters.size(); ++n) {
        const auto registry = make_registry(model, adapters[n].concepts);
        const auto weights = materialize(model, updates[n].deltas);
        updates[n].activations = collect_activations(model, weights, registry, updates[n].name, probes);
    }
    FusedUpdate fused = fuse_updates(updates, mu);
    fm.deltas = std::move(fused.deltas);
    fm.residuals = std::move(fused.residuals);
    fm.mu = std::move(fused.mu);
    return fm;
}

}  // namespace persona::fusion
