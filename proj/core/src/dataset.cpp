// Copyright (C) 2026 Persona contributors
// SPDX-License-Identifier: Apache-2.0

#include "persona/errors.hpp"
#include "persona/random.hpp"
#include "persona/testbed.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace persona::testbed {

namespace {

struct NamedColor {
    const char* word;
    std::array<std::uint8_t, 3> rgb;
};

const std::vector<NamedColor>& palette() {
    static const std::vector<NamedColor> colors = {
        {"red", {220, 40, 40}},    {"green", {40, 170, 70}},   {"blue", {40, 80, 210}},
        {"yellow", {235, 210, 50}}, {"white", {245, 245, 245}}, {"black", {20, 20, 20}},
        {"orange", {240, 140, 30}}, {"purple", {140, 60, 170}}, {"gray", {128, 128, 128}},
        {"pink", {240, 150, 190}},  {"cyan", {60, 200, 210}},
    };
    return colors;
}

const std::vector<std::string> kShapes = {"circle", "square", "triangle", "diamond", "ring", "cross"};

bool inside_shape(const std::string& shape, double dx, double dy, double r) {
    const double d = std::hypot(dx, dy);
    if (shape == "circle") return d <= r;
    if (shape == "square") return std::abs(dx) <= 0.85 * r && std::abs(dy) <= 0.85 * r;
    if (shape == "diamond") return std::abs(dx) + std::abs(dy) <= r;
    if (shape == "ring") return d <= r && d >= 0.55 * r;
    if (shape == "cross") {
        return (std::abs(dx) <= 0.3 * r && std::abs(dy) <= r) || (std::abs(dy) <= 0.3 * r && std::abs(dx) <= r);
    }
    if (shape == "triangle") {
        if (dy < -r || dy > 0.8 * r) return false;
        return std::abs(dx) <= (dy + r) / 1.8;
    }
    throw ConfigError("unknown shape '" + shape + "'");
}

std::string index_name(std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%03zu", i);
    return buf;
}

double luminance(const Image& img, int x, int y) {
    return (0.299 * img.at(x, y, 0) + 0.587 * img.at(x, y, 1) + 0.114 * img.at(x, y, 2)) / 255.0;
}

}  // namespace

void DatasetSpec::validate() const {
    if (count < 1) throw ConfigError("dataset count must be >= 1");
    if (image_size < 16 || image_size % 16 != 0) throw ConfigError("image_size must be a positive multiple of 16");
    if (std::find(kShapes.begin(), kShapes.end(), subject.shape) == kShapes.end()) {
        throw ConfigError("unknown shape '" + subject.shape + "'");
    }
    if (subject.name.empty()) throw ConfigError("dataset concept name must be non-empty");
    if (subject.class_word.empty()) throw ConfigError("dataset class word must be non-empty");
}

ShapeSpec builtin_shape(const std::string& name) {
    static const std::vector<ShapeSpec> shapes = {
        {"redring", "ring", "ring", {220, 40, 40}},
        {"bluesquare", "square", "square", {40, 80, 210}},
        {"greentriangle", "triangle", "triangle", {40, 170, 70}},
        {"yellowdiamond", "diamond", "diamond", {235, 210, 50}},
        {"purplecross", "cross", "cross", {140, 60, 170}},
        {"orangecircle", "circle", "circle", {240, 140, 30}},
    };
    for (const auto& s : shapes)
        if (s.name == name) return s;
    throw ConfigError("no built-in concept named '" + name + "'");
}

SynthConceptDataset make_dataset(const DatasetSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    std::vector<const NamedColor*> backgrounds;
    for (const auto& c : palette())
        if (c.rgb != spec.subject.color) backgrounds.push_back(&c);
    const int n = spec.image_size;
    std::uniform_int_distribution<std::size_t> pick_bg(0, backgrounds.size() - 1);
    std::uniform_real_distribution<double> radius(0.16 * n, 0.28 * n);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> pick_template(0, 2);

    SynthConceptDataset ds{spec, {}};
    for (int i = 0; i < spec.count; ++i) {
        const NamedColor& bg = *backgrounds[pick_bg(rng)];
        const double r = radius(rng);
        const double cx = r + unit(rng) * (n - 2 * r);
        const double cy = r + unit(rng) * (n - 2 * r);
        Sample s;
        s.image = Image(n, n, 3);
        s.mask = Matrix::Zero(n, n);
        s.background = bg.rgb;
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                const bool fg = inside_shape(spec.subject.shape, x + 0.5 - cx, y + 0.5 - cy, r);
                const auto& rgb = fg ? spec.subject.color : bg.rgb;
                for (int c = 0; c < 3; ++c) s.image.at(x, y, c) = rgb[static_cast<std::size_t>(c)];
                s.mask(y, x) = fg ? 1.0 : 0.0;
            }
        const std::string placeholder = "<" + spec.subject.name + ">";
        switch (pick_template(rng)) {
            case 0: s.prompt = "a photo of " + placeholder + " on a " + bg.word + " background"; break;
            case 1: s.prompt = "a picture of " + placeholder + " on a " + bg.word + " background"; break;
            default: s.prompt = "a photo of " + placeholder; break;
        }
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

void write_dataset(const SynthConceptDataset& dataset, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const auto& c = dataset.spec.subject;
    {
        std::ofstream meta(dir / "dataset.txt");
        if (!meta) throw DataError("cannot write " + (dir / "dataset.txt").string());
        meta << "name=" << c.name << "\nclass_word=" << c.class_word << "\nshape=" << c.shape
             << "\ncolor=" << int(c.color[0]) << ',' << int(c.color[1]) << ',' << int(c.color[2])
             << "\ncount=" << dataset.samples.size() << "\nimage_size=" << dataset.spec.image_size << '\n';
    }
    std::ofstream prompts(dir / "prompts.txt");
    if (!prompts) throw DataError("cannot write " + (dir / "prompts.txt").string());
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
        const auto& s = dataset.samples[i];
        write_pnm(s.image, dir / (index_name(i) + ".ppm"));
        write_pnm(matrix_to_gray(s.mask), dir / (index_name(i) + "_mask.pgm"));
        prompts << index_name(i) << '\t' << s.prompt << '\n';
    }
}

SynthConceptDataset read_dataset(const std::filesystem::path& dir, bool allow_mask_fallback) {
    std::ifstream meta(dir / "dataset.txt");
    if (!meta) throw DataError("dataset index " + (dir / "dataset.txt").string() + " not found");
    SynthConceptDataset ds;
    std::string line;
    while (std::getline(meta, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        try {
            if (key == "name") ds.spec.subject.name = value;
            else if (key == "class_word") ds.spec.subject.class_word = value;
            else if (key == "shape") ds.spec.subject.shape = value;
            else if (key == "count") ds.spec.count = std::stoi(value);
            else if (key == "image_size") ds.spec.image_size = std::stoi(value);
            else if (key == "color") {
                int r = 0, g = 0, b = 0;
                if (std::sscanf(value.c_str(), "%d,%d,%d", &r, &g, &b) != 3) throw DataError("bad color");
                ds.spec.subject.color = {static_cast<std::uint8_t>(r), static_cast<std::uint8_t>(g),
                                         static_cast<std::uint8_t>(b)};
            }
        } catch (const std::logic_error&) {
            throw DataError("malformed dataset index entry '" + line + "'");
        }
    }
    std::ifstream prompts(dir / "prompts.txt");
    if (!prompts) throw DataError("prompt index " + (dir / "prompts.txt").string() + " not found");
    while (std::getline(prompts, line)) {
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw DataError("malformed prompt index line '" + line + "'");
        const std::string stem = line.substr(0, tab);
        Sample s;
        s.prompt = line.substr(tab + 1);
        s.image = read_pnm(dir / (stem + ".ppm"));
        if (s.image.channels != 3) throw DataError(stem + ".ppm is not an RGB image");
        s.background = {s.image.at(0, 0, 0), s.image.at(0, 0, 1), s.image.at(0, 0, 2)};
        const auto mask_path = dir / (stem + "_mask.pgm");
        if (std::filesystem::exists(mask_path)) {
            const Image m = read_pnm(mask_path);
            if (m.width != s.image.width || m.height != s.image.height) throw DataError(stem + ": mask size mismatch");
            s.mask = (gray_to_matrix(m).array() >= 0.5).cast<double>().matrix();
        } else if (allow_mask_fallback) {
            spdlog::warn("mask missing for {}; using the luminance-threshold fallback", stem);
            s.mask = Matrix::Zero(s.image.height, s.image.width);
            const double bg = luminance(s.image, 0, 0);
            for (int y = 0; y < s.image.height; ++y)
                for (int x = 0; x < s.image.width; ++x) s.mask(y, x) = std::abs(luminance(s.image, x, y) - bg) > 0.1;
        } else {
            throw DataError("mask missing for " + stem + " (enable the luminance fallback to proceed)");
        }
        ds.samples.push_back(std::move(s));
    }
    if (ds.samples.empty()) throw DataError("dataset at " + dir.string() + " has no samples");
    ds.spec.count = static_cast<int>(ds.samples.size());
    ds.spec.validate();
    return ds;
}

}  // namespace persona::testbed
