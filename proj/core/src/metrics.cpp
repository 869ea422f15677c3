// Copyright (C) 2026 Persona contributors
// SPDX-License-Identifier: Apache-2.0

#include "persona/metrics.hpp"

#include "persona/errors.hpp"
#include "persona/random.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <mutex>
#include <sstream>

namespace persona::metrics {

namespace {

constexpr int kFeatures = 65;  // 6 moments + 24 histogram bins + 32 shape bins + 3 extents

std::mutex& registry_mutex() {
    static std::mutex m;
    return m;
}

std::map<std::string, BackendFactory>& registry() {
    static std::map<std::string, BackendFactory> r = {
        {"stub", [] { return std::make_unique<StubBackend>(); }},
    };
    return r;
}

}  // namespace

double f1_score(double dino, double clip_t) {
    const double a = dino;
    const double b = kClipScale * clip_t;
    if (a + b == 0.0) return 0.0;
    return 2.0 * a * b / (a + b);
}

double dino_multi_average(std::span<const double> per_concept) {
    if (per_concept.empty()) throw ConfigError("dino_multi_average: no per-concept scores");
    double s = 0.0;
    for (double v : per_concept) s += v;
    return s / static_cast<double>(per_concept.size());
}

MetricReport make_report(std::vector<std::pair<std::string, double>> identity, double clip_t,
                         std::optional<double> face_identity) {
    MetricReport r;
    r.identity = std::move(identity);
    std::vector<double> scores;
    for (const auto& [n, v] : r.identity) scores.push_back(v);
    r.dino = dino_multi_average(scores);
    r.clip_t = clip_t;
    r.clip_t_scaled = kClipScale * clip_t;
    r.f1 = f1_score(r.dino, clip_t);
    r.face_identity = face_identity;
    return r;
}

bool MetricReport::consistent(double tol) const {
    std::vector<double> scores;
    for (const auto& [n, v] : identity) scores.push_back(v);
    if (scores.empty()) return false;
    return std::abs(dino_multi_average(scores) - dino) <= tol &&
           std::abs(kClipScale * clip_t - clip_t_scaled) <= tol && std::abs(f1_score(dino, clip_t) - f1) <= tol;
}

std::string format_report(const MetricReport& r) {
    std::ostringstream out;
    char line[160];
    for (const auto& [name, v] : r.identity) {
        std::snprintf(line, sizeof line, "%-24s %.6f\n", ("identity." + name).c_str(), v);
        out << line;
    }
    std::snprintf(line, sizeof line, "%-24s %.6f\n%-24s %.6f\n%-24s %.6f\n%-24s %.6f\n", "dino", r.dino, "clip_t",
                  r.clip_t, "clip_t_scaled", r.clip_t_scaled, "f1", r.f1);
    out << line;
    if (r.face_identity) {
        std::snprintf(line, sizeof line, "%-24s %.6f\n", "face_identity", *r.face_identity);
        out << line;
    }
    return out.str();
}

StubBackend::StubBackend(std::uint64_t seed)
    : image_projection_(gaussian(kFeatures, kDim, 1.0, derive_seed(seed, "image"))),
      text_projection_(gaussian(kFeatures, kDim, 1.0, derive_seed(seed, "text"))) {}

RowVector StubBackend::embed_image(const Image& image) const {
    if (image.channels != 3 || image.width < 4 || image.height < 4) {
        throw ShapeError("stub backend: expected an RGB image of at least 4x4");
    }
    const int W = image.width, H = image.height;
    // Background is the most frequent border colour; everything far from it is the subject.
    std::map<std::array<int, 3>, int> border;
    auto colour = [&](int x, int y) {
        return std::array<int, 3>{image.at(x, y, 0), image.at(x, y, 1), image.at(x, y, 2)};
    };
    for (int x = 0; x < W; ++x) {
        ++border[colour(x, 0)];
        ++border[colour(x, H - 1)];
    }
    for (int y = 1; y + 1 < H; ++y) {
        ++border[colour(0, y)];
        ++border[colour(W - 1, y)];
    }
    const auto bg = std::max_element(border.begin(), border.end(), [](const auto& a, const auto& b) {
                        return a.second < b.second;
                    })->first;
    std::vector<std::pair<int, int>> fg;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const auto c = colour(x, y);
            int d = 0;
            for (int k = 0; k < 3; ++k) d = std::max(d, std::abs(c[k] - bg[k]));
            if (d > 40) fg.emplace_back(x, y);
        }
    if (fg.size() < 4) {
        fg.clear();
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) fg.emplace_back(x, y);
    }

    RowVector f = RowVector::Zero(kFeatures);
    const double n = static_cast<double>(fg.size());
    int x0 = W, x1 = 0, y0 = H, y1 = 0;
    double cx = 0.0, cy = 0.0;
    for (const auto& [x, y] : fg) {
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
        cx += x / n;
        cy += y / n;
    }
    for (int c = 0; c < 3; ++c) {
        double sum = 0.0, sq = 0.0;
        for (const auto& [x, y] : fg) {
            const double v = image.at(x, y, c) / 127.5 - 1.0;
            sum += v;
            sq += v * v;
            f(6 + c * 8 + std::min(7, image.at(x, y, c) / 32)) += 1.0 / n;
        }
        const double mean = sum / n;
        f(c * 2) = mean;
        f(c * 2 + 1) = std::sqrt(std::max(0.0, sq / n - mean * mean));
        for (int b = 0; b < 8; ++b) f(6 + c * 8 + b) -= 1.0 / 8.0;
    }
    // Shape: occupancy of the bounding box on a 4x4 grid, and the radial profile around the centroid.
    const double bw = x1 - x0 + 1, bh = y1 - y0 + 1;
    const double fill = n / (bw * bh);
    double rmax = 0.0;
    for (const auto& [x, y] : fg) rmax = std::max(rmax, std::hypot(x - cx, y - cy));
    for (const auto& [x, y] : fg) {
        const int gx = std::min(3, static_cast<int>((x - x0) * 4 / bw));
        const int gy = std::min(3, static_cast<int>((y - y0) * 4 / bh));
        f(30 + gy * 4 + gx) += 16.0 / (bw * bh);
        const double r = rmax > 0.0 ? std::hypot(x - cx, y - cy) / rmax : 0.0;
        f(46 + std::min(15, static_cast<int>(r * 16.0))) += 1.0 / n;
    }
    for (int i = 0; i < 16; ++i) {
        f(30 + i) -= fill;
        f(46 + i) -= 1.0 / 16.0;
    }
    f(62) = fill - 0.5;
    f(63) = std::log(bw / bh);
    f(64) = std::sqrt(n / (static_cast<double>(W) * H)) - 0.5;
    return f * image_projection_;
}

RowVector StubBackend::embed_text(const std::string& text) const {
    RowVector f = RowVector::Zero(kFeatures);
    std::string word;
    auto flush = [&] {
        if (!word.empty()) f(static_cast<Eigen::Index>(fnv1a(word) % kFeatures)) += 1.0;
        word.clear();
    };
    for (char ch : text) {
        if (std::isalnum(static_cast<unsigned char>(ch)) || ch == '<' || ch == '>' || ch == '_') {
            word += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        } else {
            flush();
        }
    }
    flush();
    return f * text_projection_;
}

void register_backend(const std::string& name, BackendFactory factory) {
    if (name.empty() || !factory) throw ConfigError("register_backend: name and factory required");
    std::lock_guard lock(registry_mutex());
    registry()[name] = std::move(factory);
}

std::unique_ptr<EmbedBackend> make_backend(const std::string& name) {
    std::lock_guard lock(registry_mutex());
    auto it = registry().find(name);
    if (it == registry().end()) throw ConfigError("embedding backend '" + name + "' is not registered");
    return it->second();
}

std::vector<std::string> backend_names() {
    std::lock_guard lock(registry_mutex());
    std::vector<std::string> out;
    for (const auto& [n, f] : registry()) out.push_back(n);
    return out;
}

double cosine(const RowVector& a, const RowVector& b) {
    if (a.size() != b.size()) throw ShapeError("cosine: length mismatch");
    const double na = a.norm(), nb = b.norm();
    if (na == 0.0 || nb == 0.0) return 0.0;
    return a.dot(b) / (na * nb);
}

double identity_score(const EmbedBackend& backend, const Image& generated, std::span<const Image> references) {
    if (references.empty()) throw DataError("identity score needs at least one reference image");
    const RowVector g = backend.embed_image(generated);
    double s = 0.0;
    for (const auto& r : references) s += cosine(g, backend.embed_image(r));
    return std::max(0.0, s / static_cast<double>(references.size()));
}

double alignment_score(const EmbedBackend& backend, const Image& generated, const std::string& prompt) {
    return std::clamp(cosine(backend.embed_image(generated), backend.embed_text(prompt)), 0.0, 1.0);
}

}  // namespace persona::metrics
