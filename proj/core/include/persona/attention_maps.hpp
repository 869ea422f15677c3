// Copyright (C) 2026 Persona contributors
// SPDX-License-Identifier: Apache-2.0
//
// Spatial grid helpers and the per-forward-pass record of cross-attention
// maps. Spatial fields are stored as (H*W) x C matrices with location
// x = row * W + col; single-channel maps are (H*W) x 1 columns.

#pragma once

#include "persona/autograd.hpp"

#include <span>
#include <string>
#include <vector>

namespace persona {

// Nearest-neighbour upsampling from an r x r grid to R x R (R % r == 0), as an
// (R*R) x (r*r) matrix acting on flattened fields.
Matrix upsample_matrix(int r, int R);
// Area-average downsampling from R x R to r x r, as an (r*r) x (R*R) matrix.
Matrix downsample_matrix(int R, int r);

// Flattened (row-major) column <-> H x W image.
Matrix to_grid(const Matrix& column, int side);
Matrix from_grid(const Matrix& grid);

struct CrossAttentionRecord {
    std::string layer;
    int resolution = 0;     // side length of the query grid
    ag::Var probs;          // (res*res) x tokens, averaged over heads; rows sum to 1
};

class AttentionMapSet {
public:
    void add(CrossAttentionRecord record) { layers_.push_back(std::move(record)); }
    const std::vector<CrossAttentionRecord>& layers() const { return layers_; }
    bool empty() const { return layers_.empty(); }

    // Mean over layers (upsampled to `out_res`) and over the given token
    // positions. Layers above `max_res` are skipped.
    ag::Var token_map(std::span<const int> positions, int out_res, int max_res = 1 << 30) const;

private:
    std::vector<CrossAttentionRecord> layers_;
};

}  // namespace persona
