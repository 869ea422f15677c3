// Copyright (C) 2026 Persona contributors
// SPDX-License-Identifier: Apache-2.0

#include "persona/archive.hpp"

#include "persona/errors.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <tuple>
#include <vector>

namespace persona {

namespace {

constexpr const char* kMagic = "PERSONA-ARCHIVE";

void check_name(const std::string& s, const char* what) {
    if (s.empty()) throw ConfigError(std::string("archive: empty ") + what);
    for (char c : s) {
        if (c == '=' || c == '\n' || c == ' ' || c == '\t' || c == '\r') {
            throw ConfigError(std::string("archive: invalid character in ") + what + " '" + s + "'");
        }
    }
}

std::uint64_t to_le(std::uint64_t v) {
    if constexpr (std::endian::native == std::endian::little) {
        return v;
    } else {
        std::uint64_t r = 0;
        for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffULL) << (8 * (7 - i));
        return r;
    }
}

}  // namespace

void NamedArrayArchive::set(const std::string& key, const std::string& value) {
    check_name(key, "key");
    if (value.find('\n') != std::string::npos) throw ConfigError("archive: newline in value of " + key);
    header_[key] = value;
}

const std::string& NamedArrayArchive::get(const std::string& key) const {
    auto it = header_.find(key);
    if (it == header_.end()) throw DataError("archive: missing header key '" + key + "'");
    return it->second;
}

std::string NamedArrayArchive::get_or(const std::string& key, const std::string& fallback) const {
    auto it = header_.find(key);
    return it == header_.end() ? fallback : it->second;
}

void NamedArrayArchive::put(const std::string& name, Matrix array) {
    check_name(name, "array name");
    arrays_[name] = std::move(array);
}

const Matrix& NamedArrayArchive::array(const std::string& name) const {
    auto it = arrays_.find(name);
    if (it == arrays_.end()) throw DataError("archive: missing array '" + name + "'");
    return it->second;
}

void NamedArrayArchive::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("archive: cannot open '" + path.string() + "' for writing");
    out << kMagic << ' ' << kFormatVersion << '\n';
    for (const auto& [k, v] : header_) out << k << '=' << v << '\n';
    for (const auto& [name, m] : arrays_) out << "@array " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
    out << "@end\n";
    for (const auto& [name, m] : arrays_) {
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j) {
                const std::uint64_t bits = to_le(std::bit_cast<std::uint64_t>(m(i, j)));
                out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
            }
    }
    if (!out) throw DataError("archive: write failed for '" + path.string() + "'");
}

NamedArrayArchive NamedArrayArchive::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("archive: cannot open '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line)) throw DataError("archive: empty file '" + path.string() + "'");
    {
        std::istringstream ls(line);
        std::string magic;
        int version = 0;
        ls >> magic >> version;
        if (magic != kMagic) throw DataError("archive: bad magic in '" + path.string() + "'");
        if (version != kFormatVersion) {
            throw DataError("archive: unsupported format version " + std::to_string(version));
        }
    }
    NamedArrayArchive ar;
    std::vector<std::tuple<std::string, Eigen::Index, Eigen::Index>> listing;
    bool ended = false;
    while (std::getline(in, line)) {
        if (line == "@end") {
            ended = true;
            break;
        }
        if (line.rfind("@array ", 0) == 0) {
            std::istringstream ls(line.substr(7));
            std::string name;
            long long r = -1, c = -1;
            ls >> name >> r >> c;
            if (name.empty() || r < 0 || c < 0) throw DataError("archive: malformed array record: " + line);
            listing.emplace_back(name, r, c);
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos) throw DataError("archive: malformed header line: " + line);
        ar.header_[line.substr(0, eq)] = line.substr(eq + 1);
    }
    if (!ended) throw DataError("archive: missing @end in '" + path.string() + "'");
    for (const auto& [name, r, c] : listing) {
        Matrix m(r, c);
        for (Eigen::Index i = 0; i < r; ++i)
            for (Eigen::Index j = 0; j < c; ++j) {
                std::uint64_t bits = 0;
                if (!in.read(reinterpret_cast<char*>(&bits), sizeof bits)) {
                    throw DataError("archive: truncated payload for '" + name + "'");
                }
                m(i, j) = std::bit_cast<double>(to_le(bits));
            }
        ar.arrays_[name] = std::move(m);
    }
    return ar;
}

bool bitwise_equal(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j)
            if (std::bit_cast<std::uint64_t>(a(i, j)) != std::bit_cast<std::uint64_t>(b(i, j))) return false;
    return true;
}

bool operator==(const NamedArrayArchive& a, const NamedArrayArchive& b) {
    if (a.header_ != b.header_ || a.arrays_.size() != b.arrays_.size()) return false;
    auto ia = a.arrays_.begin();
    auto ib = b.arrays_.begin();
    for (; ia != a.arrays_.end(); ++ia, ++ib) {
        if (ia->first != ib->first || !bitwise_equal(ia->second, ib->second)) return false;
    }
    return true;
}

}  // namespace persona
