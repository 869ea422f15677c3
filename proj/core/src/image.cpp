// Copyright (C) 2026 Persona contributors
// SPDX-License-Identifier: Apache-2.0

#include "persona/image.hpp"

#include "persona/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

namespace persona {

namespace {

void skip_space_and_comments(std::istream& in) {
    for (;;) {
        int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (c == ' ' || c == '\n' || c == '\r' || c == '\t') {
            in.get();
        } else {
            return;
        }
    }
}

int read_header_int(std::istream& in, const std::filesystem::path& path) {
    skip_space_and_comments(in);
    int v = -1;
    if (!(in >> v) || v < 0) throw DataError("malformed image header in " + path.string());
    return v;
}

}  // namespace

void write_pnm(const Image& image, const std::filesystem::path& path) {
    if (image.channels != 1 && image.channels != 3) throw ShapeError("write_pnm: channels must be 1 or 3");
    if (image.data.size() != static_cast<std::size_t>(image.width * image.height * image.channels)) {
        throw ShapeError("write_pnm: pixel buffer size mismatch");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open " + path.string() + " for writing");
    out << (image.channels == 3 ? "P6" : "P5") << '\n' << image.width << ' ' << image.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.data.data()), static_cast<std::streamsize>(image.data.size()));
    if (!out) throw DataError("write failed for " + path.string());
}

Image read_pnm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::string magic;
    in >> magic;
    int channels = 0;
    if (magic == "P6") channels = 3;
    else if (magic == "P5") channels = 1;
    else throw DataError(path.string() + " is not a binary PPM/PGM file");
    const int w = read_header_int(in, path);
    const int h = read_header_int(in, path);
    const int maxval = read_header_int(in, path);
    if (maxval != 255) throw DataError(path.string() + ": only 8-bit images are supported");
    in.get();
    Image img(w, h, channels);
    in.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.data.size())) {
        throw DataError(path.string() + ": truncated pixel data");
    }
    return img;
}

Matrix gray_to_matrix(const Image& image) {
    if (image.channels != 1) throw ShapeError("gray_to_matrix: expected a single-channel image");
    Matrix m(image.height, image.width);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x) m(y, x) = image.at(x, y, 0) / 255.0;
    return m;
}

Image matrix_to_gray(const Matrix& values) {
    Image img(static_cast<int>(values.cols()), static_cast<int>(values.rows()), 1);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const double v = std::clamp(values(y, x), 0.0, 1.0);
            img.at(x, y, 0) = static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
    return img;
}

}  // namespace persona
