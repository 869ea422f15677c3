// Copyright (C) 2026 Persona contributors
// SPDX-License-Identifier: Apache-2.0

#include "persona/errors.hpp"
#include "persona/layout.hpp"
#include "persona/matching_attention.hpp"
#include "persona/pipeline.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <cstdio>
#include <fstream>

namespace persona::pipeline {

GenerationResult generate_single(const testbed::ToyDenoiser& model, const testbed::WeightSource& weights,
                                 const concepts::ConceptRegistry& registry, const std::string& prompt, int steps,
                                 std::uint64_t seed, int image_size) {
    const auto spec = concepts::bind_prompt(registry, prompt);
    testbed::Sampler sampler(model, weights, model.text_features(registry, spec), steps);
    GenerationResult out;
    out.trajectory = sampler.run(seed);
    out.latent = sampler.latent();
    out.image = testbed::latent_to_image(out.latent, model.config().latent_side, image_size);
    return out;
}

MultiOptions MultiOptions::from_config(const RunConfig& c) {
    MultiOptions o;
    o.steps = c.sampler_steps;
    o.seed = c.sample_seed;
    o.sama = c.sama_enabled;
    o.window_start = c.sama_window_start;
    o.window_end = c.sama_window_end;
    o.sama_layers = c.sama_layers;
    o.descriptor_layer = c.descriptor_layer;
    o.guidance = c.guidance_enabled;
    o.guidance_params = c.guidance();
    o.dump = c.dump_diagnostics;
    return o;
}

double MultiResult::final_iou() const {
    if (steps.empty() || steps.back().ious.empty()) return 1.0;
    double s = 0.0;
    for (double v : steps.back().ious) s += v;
    return s / static_cast<double>(steps.back().ious.size());
}

namespace {

bool in_window(int step, int total, double start, double end) {
    const double frac = total > 1 ? static_cast<double>(step) / (total - 1) : 0.0;
    return frac >= start && frac <= end;
}

struct ReferenceBranch {
    std::string name;
    std::unique_ptr<testbed::Sampler> sampler;
    Matrix prev_descriptors;  // from the preceding step
    Matrix descriptors;       // current step
    std::map<std::string, Matrix> values;  // current step
};

}  // namespace

MultiResult generate_multi(const testbed::ToyDenoiser& model, const FusedModel& fused, const std::string& prompt,
                           const MultiOptions& options) {
    if (options.steps < 1) throw ConfigError("generate-multi: steps must be >= 1");
    const int S = model.config().latent_side;
    const int N = model.locations();
    const int C = model.config().width;
    for (const auto& layer : options.sama_layers) {
        const auto& sa = model.self_attention_layers();
        auto it = sa.find(layer);
        if (it == sa.end()) throw ConfigError("unknown SAMA layer '" + layer + "'");
        if (it->second != S) throw ConfigError("SAMA layer '" + layer + "' is not on the descriptor grid");
    }
    if (model.self_attention_layers().count(options.descriptor_layer) == 0 ||
        model.self_attention_layers().at(options.descriptor_layer) != S) {
        throw ConfigError("descriptor layer '" + options.descriptor_layer + "' must be a full-resolution self-attention layer");
    }

    const auto registry = make_registry(model, fused.concepts);
    const auto weights = materialize(model, fused.deltas);
    const auto target = concepts::bind_prompt(registry, prompt);
    const auto refs = concepts::extract_concept_tokens(registry, target);
    const Matrix target_context = model.text_features(registry, target);

    MultiResult result;
    for (const auto& r : refs) result.concept_names.push_back(r.name);
    result.reference_branches = static_cast<int>(refs.size());

    testbed::Sampler trg(model, weights, target_context, options.steps);
    if (refs.empty()) {
        spdlog::warn("generate-multi: prompt names no registered concept; falling back to plain sampling");
        result.output.trajectory = trg.run(options.seed);
        result.output.latent = trg.latent();
        result.output.image = testbed::latent_to_image(trg.latent(), S, options.image_size);
        return result;
    }

    std::vector<ReferenceBranch> branches;
    for (const auto& r : refs) {
        ReferenceBranch b;
        b.name = r.name;
        const auto ref_prompt = concepts::make_reference_prompt(registry, r.name);
        b.sampler = std::make_unique<testbed::Sampler>(model, weights, model.text_features(registry, ref_prompt),
                                                       options.steps);
        b.sampler->add_hook(testbed::kHookForward, [&options](testbed::StepContext& ctx) {
            ctx.options.capture_values.insert(options.sama_layers.begin(), options.sama_layers.end());
            ctx.options.descriptor_layer = options.descriptor_layer;
        });
        b.sampler->begin(options.seed);
        branches.push_back(std::move(b));
    }

    const auto& gp = options.guidance_params;
    const ag::Var target_context_var = ag::Var::constant(target_context);
    AttentionMapSet prev_maps;
    Matrix prev_descriptors;
    StepDiagnostics diag;
    std::vector<matching::ConceptMatch> matches;
    std::vector<Matrix> masks;
    bool sama_active = false;

    // Layout forward: measures the refined concept maps against the anchors
    // and, when enabled, moves the latent down the layout-loss gradient.
    trg.add_hook(testbed::kHookPreStep, [&](testbed::StepContext& ctx) {
        ag::Var z = options.guidance ? ag::Var::parameter(ctx.latent) : ag::Var::constant(ctx.latent);
        testbed::ForwardOptions fo;
        fo.capture_cross_attention = true;
        const auto fr = model.forward(z, ctx.timestep, target_context_var, weights, fo);
        std::vector<ag::Var> refined, anchors;
        for (const auto& r : refs) {
            refined.push_back(layout::refine_activation(matching::concept_mask_var(fr.cross_attention, r, S), gp.lambda, gp.tau));
        }
        if (ctx.index == 0) {
            for (const auto& a : refined) result.anchors.push_back(a.value());
            diag.ious.assign(refs.size(), 1.0);
            diag.layout_loss = 0.0;
            return;
        }
        for (const auto& a : result.anchors) anchors.push_back(ag::Var::constant(a));
        ag::Var loss = layout::layout_loss(refined, anchors, &diag.ious);
        diag.layout_loss = loss.scalar();
        if (options.guidance) {
            loss.backward();
            diag.phi = layout::decay_schedule(ctx.index, ctx.total, gp.phi0);
            ctx.latent = layout::guidance_step(ctx.latent, z.grad(), diag.phi, &diag.guidance_applied);
        }
    });

    trg.add_hook(testbed::kHookForward, [&](testbed::StepContext& ctx) {
        ctx.options.capture_cross_attention = true;
        ctx.options.descriptor_layer = options.descriptor_layer;
        if (options.dump) ctx.options.capture_values.insert(options.sama_layers.begin(), options.sama_layers.end());
        sama_active = options.sama && ctx.index > 0 &&
                      in_window(ctx.index, ctx.total, options.window_start, options.window_end);
        matches.clear();
        masks.clear();
        if (!sama_active) return;
        for (std::size_t k = 0; k < refs.size(); ++k) {
            masks.push_back(matching::concept_mask(prev_maps, refs[k], S));
            const auto& b = branches[k];
            // Flow from previous-step descriptors; values from the current reference step.
            matches.push_back(matching::match_concept(prev_descriptors, b.prev_descriptors, masks.back(),
                                                      b.values.at(options.sama_layers.front())));
        }
        for (const auto& layer : options.sama_layers) {
            std::vector<Matrix> warped;
            for (std::size_t k = 0; k < refs.size(); ++k) {
                warped.push_back(matching::warp_values(branches[k].values.at(layer), matches[k].flow, masks[k]));
            }
            ctx.options.injections[layer] = matching::make_injection(warped, masks, N, C);
        }
    });

    trg.add_hook(testbed::kHookPostStep, [&](testbed::StepContext& ctx) {
        prev_maps = ctx.result->cross_attention;
        prev_descriptors = ctx.result->descriptors;
        diag.sama_active = sama_active;
        if (!options.dump) return;
        diag.masks = masks;
        for (const auto& m : matches) diag.flows.push_back(m.flow);
        for (const auto& layer : options.sama_layers) {
            auto inj = ctx.options.injections.find(layer);
            const Matrix& v = ctx.result->values.at(layer);
            diag.value_norms.push_back(inj == ctx.options.injections.end()
                                           ? v.norm()
                                           : inj->second.apply(ag::Var::constant(v)).value().norm());
        }
    });

    trg.begin(options.seed);
    while (!trg.done()) {
        // References step first; the target consumes their caches for this step.
        for (auto& b : branches) {
            b.sampler->step();
            const auto& fr = b.sampler->last_forward();
            b.prev_descriptors = std::move(b.descriptors);
            b.descriptors = fr.descriptors;
            b.values = fr.values;
        }
        diag = {};
        diag.step = trg.step_index();
        diag.timestep = trg.current_timestep();
        trg.step();
        result.steps.push_back(std::move(diag));
    }
    result.output.trajectory = trg.trajectory();
    result.output.latent = trg.latent();
    result.output.image = testbed::latent_to_image(trg.latent(), S, options.image_size);
    return result;
}

void write_diagnostics(const MultiResult& result, const std::filesystem::path& dir, int latent_side) {
    std::filesystem::create_directories(dir);
    std::ofstream stats(dir / "steps.tsv");
    if (!stats) throw DataError("cannot write diagnostics to " + dir.string());
    stats << "step\ttimestep\tsama\tguidance\tphi\tlayout_loss";
    for (const auto& n : result.concept_names) stats << "\tiou_" << n;
    stats << "\tvalue_norms\n";
    for (const auto& s : result.steps) {
        stats << s.step << '\t' << s.timestep << '\t' << s.sama_active << '\t' << s.guidance_applied << '\t' << s.phi
              << '\t' << s.layout_loss;
        for (double v : s.ious) stats << '\t' << v;
        stats << '\t';
        for (std::size_t i = 0; i < s.value_norms.size(); ++i) stats << (i ? "," : "") << s.value_norms[i];
        stats << '\n';
        for (std::size_t k = 0; k < s.masks.size(); ++k) {
            char name[96];
            std::snprintf(name, sizeof name, "step%03d_mask_%s.pgm", s.step, result.concept_names[k].c_str());
            write_pnm(matrix_to_gray(to_grid(s.masks[k], latent_side)), dir / name);
        }
        for (std::size_t k = 0; k < s.flows.size(); ++k) {
            Matrix flow(static_cast<Eigen::Index>(s.flows[k].size()), 1);
            for (std::size_t i = 0; i < s.flows[k].size(); ++i) {
                flow(static_cast<Eigen::Index>(i), 0) =
                    s.flows[k][i] / static_cast<double>(latent_side * latent_side - 1);
            }
            char name[96];
            std::snprintf(name, sizeof name, "step%03d_flow_%s.pgm", s.step, result.concept_names[k].c_str());
            write_pnm(matrix_to_gray(to_grid(flow, latent_side)), dir / name);
        }
    }
    for (std::size_t k = 0; k < result.anchors.size(); ++k) {
        write_pnm(matrix_to_gray(to_grid(result.anchors[k], latent_side)),
                  dir / ("anchor_" + result.concept_names[k] + ".pgm"));
    }
}

}  // namespace persona::pipeline
