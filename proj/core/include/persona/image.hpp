// Copyright (C) 2026 Persona contributors
// SPDX-License-Identifier: Apache-2.0
//
// 8-bit raster images and binary PNM (P6 colour, P5 grayscale) files.

#pragma once

#include "persona/autograd.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace persona {

struct Image {
    int width = 0;
    int height = 0;
    int channels = 3;  // 3 (RGB) or 1 (gray)
    std::vector<std::uint8_t> data;  // row-major, interleaved

    Image() = default;
    Image(int w, int h, int c) : width(w), height(h), channels(c), data(static_cast<std::size_t>(w * h * c), 0) {}

    std::uint8_t& at(int x, int y, int c) { return data[static_cast<std::size_t>((y * width + x) * channels + c)]; }
    std::uint8_t at(int x, int y, int c) const {
        return data[static_cast<std::size_t>((y * width + x) * channels + c)];
    }

    friend bool operator==(const Image&, const Image&) = default;
};

void write_pnm(const Image& image, const std::filesystem::path& path);
Image read_pnm(const std::filesystem::path& path);

// Gray image <-> height x width matrix in [0, 1].
Matrix gray_to_matrix(const Image& image);
Image matrix_to_gray(const Matrix& values);

}  // namespace persona
