// Copyright (C) 2026 Persona contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "persona/autograd.hpp"

#include <cstdint>
#include <random>
#include <string_view>

namespace persona {

using Rng = std::mt19937_64;

inline Matrix gaussian(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    Matrix out(rows, cols);
    // Row-major fill so the stream order does not depend on Eigen storage.
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) out(i, j) = dist(rng);
    return out;
}

inline Matrix gaussian(Eigen::Index rows, Eigen::Index cols, double stddev, std::uint64_t seed) {
    Rng rng(seed);
    return gaussian(rows, cols, stddev, rng);
}

// Stable 64-bit FNV-1a; used to derive per-layer seeds and content hashes.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 1469598103934665603ULL) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::uint64_t fnv1a(const Matrix& m, std::uint64_t h = 1469598103934665603ULL) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            const double v = m(i, j);
            h = fnv1a(std::string_view(reinterpret_cast<const char*>(&v), sizeof v), h);
        }
    return h;
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
    return fnv1a(tag, seed ^ 0x9e3779b97f4a7c15ULL);
}

}  // namespace persona
