// Copyright (C) 2026 Persona contributors
// SPDX-License-Identifier: Apache-2.0
//
// persona: command-line front end for dataset synthesis, training, fusion,
// generation and evaluation on the testbed.

#include "persona/checkpoint.hpp"
#include "persona/config.hpp"
#include "persona/errors.hpp"
#include "persona/fusion.hpp"
#include "persona/metrics.hpp"
#include "persona/pipeline.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;
using namespace persona;

namespace {

enum Exit { kOk = 0, kConfig = 2, kData = 3, kNumerical = 4 };

struct Invocation {
    std::string config_path;
    std::map<std::string, std::string> overrides;
};

RunConfig resolve(const Invocation& inv) {
    RunConfig c = inv.config_path.empty() ? RunConfig{} : load_config(inv.config_path);
    for (const auto& [k, v] : inv.overrides) apply_override(c, k, v);
    c.validate();
    return c;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
}

std::string checkpoint_format(const std::string& path) {
    if (path.empty()) throw ConfigError("--checkpoint is required");
    return NamedArrayArchive::load(path).get_or("format", "");
}

std::string plain_prompt(std::string prompt, const std::vector<concepts::ConceptTokenPair>& pairs) {
    for (const auto& p : pairs) {
        const std::string tag = "<" + p.name + ">";
        for (auto pos = prompt.find(tag); pos != std::string::npos; pos = prompt.find(tag)) {
            prompt.replace(pos, tag.size(), p.class_word);
        }
    }
    return prompt;
}

int cmd_make_dataset(const RunConfig& c) {
    testbed::DatasetSpec spec;
    spec.subject = testbed::builtin_shape(c.dataset_concept);
    spec.count = c.dataset_count;
    const auto ds = testbed::make_dataset(spec, c.dataset_seed);
    testbed::write_dataset(ds, c.dataset_dir);
    pipeline::write_manifest({"make-dataset", c, {{"dataset_dir", c.dataset_dir}}}, c.dataset_dir);
    spdlog::info("wrote {} samples of '{}' to {}", ds.samples.size(), spec.subject.name, c.dataset_dir);
    return kOk;
}

int cmd_train(const RunConfig& c) {
    const auto ds = testbed::read_dataset(c.dataset_dir, c.mask_fallback);
    const testbed::ToyDenoiser model(c.model_config());
    const auto result = pipeline::train_single(c, ds, model);
    fs::create_directories(c.output_dir);
    const fs::path ck = fs::path(c.output_dir) / "adapter.pnar";
    result.checkpoint.save(ck);
    write_text(fs::path(c.output_dir) / "loss.tsv", pipeline::format_loss_log(result.log));
    pipeline::write_manifest({"train-single",
                              c,
                              {{"checkpoint", ck.string()},
                               {"loss_log", (fs::path(c.output_dir) / "loss.tsv").string()},
                               {"theta0_hash", hash_hex(result.theta0_hash_after)},
                               {"probe_total_initial", std::to_string(result.probe_initial.total)},
                               {"probe_total_final", std::to_string(result.probe_final.total)}}},
                             c.output_dir);
    std::cout << "probe total loss " << result.probe_initial.total << " -> " << result.probe_final.total << '\n';
    return kOk;
}

int cmd_fuse(const RunConfig& c) {
    if (c.checkpoints.empty()) throw ConfigError("fuse: --checkpoints lists no adapter checkpoints");
    const testbed::ToyDenoiser model(read_model_config(c.checkpoints.front()));
    std::vector<AdapterCheckpoint> adapters;
    for (const auto& p : c.checkpoints) adapters.push_back(AdapterCheckpoint::load(p, model));
    const auto fused = fusion::fuse_model(model, adapters, c.fusion_mu);
    fs::create_directories(c.output_dir);
    const fs::path out = fs::path(c.output_dir) / "fused.pnar";
    fused.save(out);
    pipeline::write_manifest({"fuse", c, {{"fused", out.string()}}}, c.output_dir);
    std::cout << format_residuals(fused.residuals);
    return kOk;
}

// Weights and concepts of either checkpoint kind.
struct Loaded {
    std::unique_ptr<testbed::ToyDenoiser> model;
    std::map<std::string, Matrix> deltas;
    std::vector<concepts::ConceptTokenPair> concepts;
    std::optional<FusedModel> fused;
};

Loaded load_any(const RunConfig& c) {
    const auto format = checkpoint_format(c.checkpoint);
    Loaded l;
    l.model = std::make_unique<testbed::ToyDenoiser>(read_model_config(c.checkpoint));
    if (format == "adapter") {
        const auto ck = AdapterCheckpoint::load(c.checkpoint, *l.model);
        l.deltas = ck.deltas();
        l.concepts = ck.concepts;
    } else if (format == "fused") {
        l.fused = FusedModel::load(c.checkpoint, *l.model);
        l.deltas = l.fused->deltas;
        l.concepts = l.fused->concepts;
    } else {
        throw DataError("unrecognized checkpoint format '" + format + "'");
    }
    return l;
}

int cmd_generate(const RunConfig& c) {
    const auto l = load_any(c);
    const auto weights = materialize(*l.model, l.deltas);
    const auto gen = pipeline::generate_single(*l.model, weights, make_registry(*l.model, l.concepts), c.prompt,
                                               c.sampler_steps, c.sample_seed);
    fs::create_directories(c.output_dir);
    const fs::path img = fs::path(c.output_dir) / "image.ppm";
    write_pnm(gen.image, img);
    pipeline::write_manifest({"generate", c, {{"image", img.string()}}}, c.output_dir);
    return kOk;
}

int cmd_generate_multi(const RunConfig& c) {
    auto l = load_any(c);
    if (!l.fused) throw ConfigError("generate-multi needs a fused checkpoint");
    const auto result =
        pipeline::generate_multi(*l.model, *l.fused, c.prompt, pipeline::MultiOptions::from_config(c));
    fs::create_directories(c.output_dir);
    const fs::path img = fs::path(c.output_dir) / "image.ppm";
    write_pnm(result.output.image, img);
    const fs::path diag = fs::path(c.output_dir) / "diagnostics";
    pipeline::write_diagnostics(result, diag, l.model->config().latent_side);
    pipeline::write_manifest({"generate-multi",
                              c,
                              {{"image", img.string()},
                               {"diagnostics", diag.string()},
                               {"reference_branches", std::to_string(result.reference_branches)},
                               {"final_iou", std::to_string(result.final_iou())}}},
                             c.output_dir);
    std::cout << "reference branches " << result.reference_branches << ", final IoU " << result.final_iou() << '\n';
    return kOk;
}

int cmd_eval(const RunConfig& c) {
    if (c.reference_dirs.empty()) throw ConfigError("eval: --reference_dirs lists no datasets");
    auto l = load_any(c);
    fs::create_directories(c.output_dir);
    Image image;
    if (l.fused) {
        image = pipeline::generate_multi(*l.model, *l.fused, c.prompt, pipeline::MultiOptions::from_config(c))
                    .output.image;
    } else {
        const auto weights = materialize(*l.model, l.deltas);
        image = pipeline::generate_single(*l.model, weights, make_registry(*l.model, l.concepts), c.prompt,
                                          c.sampler_steps, c.sample_seed)
                    .image;
    }
    write_pnm(image, fs::path(c.output_dir) / "image.ppm");
    const auto backend = metrics::make_backend(c.embed_backend);
    const RowVector g = backend->embed_image(image);
    std::vector<std::pair<std::string, double>> identity;
    // Raw cosines are reported next to the clamped scores so that runs below zero still rank.
    std::ostringstream raw;
    for (const auto& dir : c.reference_dirs) {
        const auto ds = testbed::read_dataset(dir, c.mask_fallback);
        std::vector<Image> refs;
        double sum = 0.0;
        for (const auto& s : ds.samples) {
            refs.push_back(s.image);
            sum += metrics::cosine(g, backend->embed_image(s.image));
        }
        identity.emplace_back(ds.spec.subject.name, metrics::identity_score(*backend, image, refs));
        raw << fmt::format("raw_cosine.{:<13}{:.6f}\n", ds.spec.subject.name, sum / static_cast<double>(refs.size()));
    }
    const std::string text_prompt = plain_prompt(c.prompt, l.concepts);
    const double clip_t = metrics::alignment_score(*backend, image, text_prompt);
    raw << fmt::format("raw_cosine.{:<13}{:.6f}\n", "prompt", metrics::cosine(g, backend->embed_text(text_prompt)));
    const auto report = metrics::make_report(std::move(identity), clip_t);
    const fs::path out = fs::path(c.output_dir) / "report.txt";
    write_text(out, metrics::format_report(report) + raw.str());
    pipeline::write_manifest({"eval", c, {{"report", out.string()}, {"backend", backend->name()}}}, c.output_dir);
    std::cout << metrics::format_report(report) << raw.str();
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"persona: concept adapters, fusion and multi-concept generation on a toy diffusion testbed"};
    app.require_subcommand(1);
    app.set_version_flag("--version", pipeline::version());
    bool verbose = false;
    app.add_flag("-v,--verbose", verbose, "Debug logging");

    Invocation inv;
    using Handler = int (*)(const RunConfig&);
    const std::vector<std::tuple<std::string, std::string, Handler>> commands = {
        {"make-dataset", "Render a synthetic concept dataset", cmd_make_dataset},
        {"train-single", "Train a single-concept adapter", cmd_train},
        {"fuse", "Fuse adapter checkpoints into one model", cmd_fuse},
        {"generate", "Sample one image from an adapter or fused checkpoint", cmd_generate},
        {"generate-multi", "Multi-concept generation with reference branches", cmd_generate_multi},
        {"eval", "Generate and score identity and prompt alignment", cmd_eval},
    };
    std::map<CLI::App*, Handler> handlers;
    for (const auto& [name, help, fn] : commands) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("-c,--config", inv.config_path, "JSON config file")->check(CLI::ExistingFile);
        for (const auto& key : config_keys()) {
            sub->add_option_function<std::string>(
                "--" + key, [&inv, key](const std::string& v) { inv.overrides[key] = v; }, "Override config key");
        }
        handlers[sub] = fn;
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kConfig;
    }
    spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

    try {
        for (const auto& [sub, fn] : handlers) {
            if (sub->parsed()) return fn(resolve(inv));
        }
    } catch (const ConfigError& e) {
        spdlog::error("config error: {}", e.what());
        return kConfig;
    } catch (const ShapeError& e) {
        spdlog::error("config error: {}", e.what());
        return kConfig;
    } catch (const DataError& e) {
        spdlog::error("data error: {}", e.what());
        return kData;
    } catch (const NumericalError& e) {
        spdlog::error("numerical failure: {}", e.what());
        return kNumerical;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return kData;
    }
    return kConfig;
}
