// Copyright (C) 2026 Persona contributors
// SPDX-License-Identifier: Apache-2.0

#include "persona/errors.hpp"
#include "persona/pipeline.hpp"

#include <json.hpp>

#include <fstream>

#ifndef PERSONA_VERSION
#define PERSONA_VERSION "0.0.0"
#endif

namespace persona::pipeline {

std::string version() { return PERSONA_VERSION; }

void write_manifest(const Manifest& manifest, const std::filesystem::path& dir) {
    using json = nlohmann::ordered_json;
    std::filesystem::create_directories(dir);
    json j;
    j["command"] = manifest.command;
    j["persona_version"] = version();
    j["eigen_version"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                         std::to_string(EIGEN_MINOR_VERSION);
#if defined(__clang__)
    j["compiler"] = std::string("clang ") + __clang_version__;
#elif defined(__GNUC__)
    j["compiler"] = std::string("gcc ") + __VERSION__;
#endif
    j["config_hash"] = hash_hex(config_hash(manifest.config));
    j["seeds"] = {{"train_seed", manifest.config.train_seed},
                  {"sample_seed", manifest.config.sample_seed},
                  {"model_seed", manifest.config.model_seed},
                  {"dataset_seed", manifest.config.dataset_seed}};
    j["config"] = json::parse(to_json(manifest.config));
    for (const auto& [k, v] : manifest.extra) j["outputs"][k] = v;
    std::ofstream out(dir / "manifest.json");
    if (!out) throw DataError("cannot write manifest to " + dir.string());
    out << j.dump(2) << '\n';
}

}  // namespace persona::pipeline
