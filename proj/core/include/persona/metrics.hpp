// Copyright (C) 2026 Persona contributors
// SPDX-License-Identifier: Apache-2.0
//
// Evaluation arithmetic and pluggable embedding backends. Identity scores
// compare image embeddings, prompt alignment compares image and text
// embeddings; the F1 combines identity with alignment scaled by 2.5.

#pragma once

#include "persona/autograd.hpp"
#include "persona/image.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace persona::metrics {

inline constexpr double kClipScale = 2.5;

// 2ab / (a + b) with a = dino, b = 2.5 * clip_t; 0 when a + b = 0.
double f1_score(double dino, double clip_t);

// Arithmetic mean; throws ConfigError on an empty list.
double dino_multi_average(std::span<const double> per_concept);

struct MetricReport {
    std::vector<std::pair<std::string, double>> identity;  // per concept
    double dino = 0.0;                                      // mean of `identity`
    double clip_t = 0.0;
    double clip_t_scaled = 0.0;
    double f1 = 0.0;
    std::optional<double> face_identity;

    // dino, clip_t_scaled and f1 agree with the stored components.
    bool consistent(double tol = 1e-12) const;
};

MetricReport make_report(std::vector<std::pair<std::string, double>> identity, double clip_t,
                         std::optional<double> face_identity = std::nullopt);

std::string format_report(const MetricReport& report);

class EmbedBackend {
public:
    virtual ~EmbedBackend() = default;
    virtual std::string name() const = 0;
    virtual RowVector embed_image(const Image& image) const = 0;
    virtual RowVector embed_text(const std::string& text) const = 0;
};

// Fixed random projection of subject statistics (colour moments and
// histograms, bounding-box occupancy, radial profile) and hashed word
// counts. The subject is whatever differs from the dominant border colour.
// Seed-pinned.
class StubBackend final : public EmbedBackend {
public:
    static constexpr int kDim = 64;
    explicit StubBackend(std::uint64_t seed = 20240601);
    std::string name() const override { return "stub"; }
    RowVector embed_image(const Image& image) const override;
    RowVector embed_text(const std::string& text) const override;

private:
    Matrix image_projection_;
    Matrix text_projection_;
};

using BackendFactory = std::function<std::unique_ptr<EmbedBackend>()>;

void register_backend(const std::string& name, BackendFactory factory);
// Throws ConfigError for an unregistered name. "stub" is always registered.
std::unique_ptr<EmbedBackend> make_backend(const std::string& name);
std::vector<std::string> backend_names();

double cosine(const RowVector& a, const RowVector& b);

// Identity score of one generated image against a concept's reference images
// (mean cosine, clamped at 0) and prompt alignment (cosine, clamped to [0, 1]).
double identity_score(const EmbedBackend& backend, const Image& generated, std::span<const Image> references);
double alignment_score(const EmbedBackend& backend, const Image& generated, const std::string& prompt);

}  // namespace persona::metrics
