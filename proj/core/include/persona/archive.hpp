// Copyright (C) 2026 Persona contributors
// SPDX-License-Identifier: Apache-2.0
//
// Flat named-array archive used for adapter, concept and fused checkpoints.
//
// Layout (all text lines end in '\n'):
//
//   PERSONA-ARCHIVE 1
//   <key>=<value>          zero or more header records, keys sorted
//   @array <name> <rows> <cols>
//   ...                    one line per array, names sorted
//   @end
//   <payload>              every array in listed order, row-major,
//                          IEEE-754 binary64 little-endian
//
// Keys and names may not contain whitespace, '=' or newlines. Values may not
// contain newlines. Round-trips are bit-exact.

#pragma once

#include "persona/autograd.hpp"

#include <filesystem>
#include <map>
#include <string>

namespace persona {

class NamedArrayArchive {
public:
    static constexpr int kFormatVersion = 1;

    void set(const std::string& key, const std::string& value);
    const std::string& get(const std::string& key) const;
    std::string get_or(const std::string& key, const std::string& fallback) const;
    bool has(const std::string& key) const { return header_.count(key) != 0; }

    void put(const std::string& name, Matrix array);
    const Matrix& array(const std::string& name) const;
    bool has_array(const std::string& name) const { return arrays_.count(name) != 0; }

    const std::map<std::string, std::string>& header() const { return header_; }
    const std::map<std::string, Matrix>& arrays() const { return arrays_; }

    void save(const std::filesystem::path& path) const;
    static NamedArrayArchive load(const std::filesystem::path& path);

    friend bool operator==(const NamedArrayArchive& a, const NamedArrayArchive& b);

private:
    std::map<std::string, std::string> header_;
    std::map<std::string, Matrix> arrays_;
};

// Bitwise equality, including signed zeros and NaN payloads.
bool bitwise_equal(const Matrix& a, const Matrix& b);

}  // namespace persona
