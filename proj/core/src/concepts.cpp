// Copyright (C) 2026 Persona contributors
// SPDX-License-Identifier: Apache-2.0

#include "persona/concepts.hpp"

#include "persona/errors.hpp"
#include "persona/random.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

namespace persona::concepts {

const std::vector<std::string>& default_words() {
    static const std::vector<std::string> words = {
        kBosToken, kUnkToken,
        "a", "an", "the", "photo", "picture", "image", "of", "on", "in", "with", "and", "next", "to",
        "near", "behind", "under", "above", "holding", "wearing", "playing", "sitting", "advertising",
        "background", "beach", "street", "room", "table", "grass", "snow", "city", "forest",
        "red", "green", "blue", "yellow", "white", "black", "orange", "purple", "gray", "pink", "cyan",
        "dog", "cat", "man", "woman", "clock", "toy", "ball", "box", "house", "car", "cup", "hat",
        "shape", "circle", "square", "triangle", "diamond", "ring", "cross", "character", "glyph",
        "style", "painting", "drawing", "small", "large", "bright", "dark",
    };
    return words;
}

ConceptRegistry::ConceptRegistry(std::shared_ptr<const BaseVocabulary> base) : base_(std::move(base)) {
    if (!base_) throw ConfigError("ConceptRegistry: null base vocabulary");
    if (base_->embeddings.rows() != static_cast<Eigen::Index>(base_->words.size())) {
        throw ShapeError("ConceptRegistry: embedding table rows must match word count");
    }
    for (std::size_t i = 0; i < base_->words.size(); ++i) word_index_.emplace(base_->words[i], static_cast<int>(i));
}

const ConceptTokenPair& ConceptRegistry::register_concept(const std::string& name, const std::string& class_word,
                                                          std::uint64_t seed) {
    auto it = word_index_.find(class_word);
    if (it == word_index_.end()) throw ConfigError("unknown class word '" + class_word + "'");
    ConceptTokenPair pair;
    pair.name = name;
    pair.class_word = class_word;
    pair.v_class = base_->embeddings.row(it->second);
    pair.v_rand = pair.v_class + gaussian(1, base_->width(), kRandInitStd, seed);
    return add(std::move(pair));
}

const ConceptTokenPair& ConceptRegistry::add(ConceptTokenPair pair) {
    if (pair.name.empty()) throw ConfigError("concept name must be non-empty");
    for (char c : pair.name) {
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) {
            throw ConfigError("concept name '" + pair.name + "' may only contain [A-Za-z0-9_-]");
        }
    }
    if (contains(pair.name)) throw ConfigError("duplicate concept name '" + pair.name + "'");
    if (pair.v_rand.size() != width() || pair.v_class.size() != width()) {
        throw ShapeError("concept '" + pair.name + "': embedding width mismatch");
    }
    pair.rand_id = static_cast<int>(vocab_size());
    pair.class_id = pair.rand_id + 1;
    index_.emplace(pair.name, concepts_.size());
    concepts_.push_back(std::move(pair));
    return concepts_.back();
}

const ConceptTokenPair& ConceptRegistry::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown concept '" + name + "'");
    return concepts_[it->second];
}

ConceptTokenPair& ConceptRegistry::get_mutable(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown concept '" + name + "'");
    return concepts_[it->second];
}

int ConceptRegistry::word_id(const std::string& word) const {
    auto it = word_index_.find(word);
    return it == word_index_.end() ? 1 : it->second;
}

RowVector ConceptRegistry::embedding(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_size()) throw ConfigError("token id out of range");
    if (static_cast<std::size_t>(id) < base_size()) return base_->embeddings.row(id);
    const auto& c = concepts_[(static_cast<std::size_t>(id) - base_size()) / 2];
    return id == c.rand_id ? c.v_rand : c.v_class;
}

std::string PromptSpec::expanded() const {
    // Bound concept names are recovered from the placeholder words.
    std::string out;
    for (const auto& w : words) {
        if (!out.empty()) out += ' ';
        if (w.size() > 2 && w.front() == '<' && w.back() == '>') {
            const std::string name = w.substr(1, w.size() - 2);
            out += "<" + name + "_rand> <" + name + "_class>";
        } else {
            out += w;
        }
    }
    return out;
}

namespace {

std::string normalize_word(std::string w) {
    while (!w.empty() && std::ispunct(static_cast<unsigned char>(w.back())) && w.back() != '>') w.pop_back();
    while (!w.empty() && std::ispunct(static_cast<unsigned char>(w.front())) && w.front() != '<') w.erase(0, 1);
    const bool placeholder = w.size() > 2 && w.front() == '<' && w.back() == '>';
    if (!placeholder) {
        std::transform(w.begin(), w.end(), w.begin(), [](unsigned char c) { return std::tolower(c); });
    }
    return w;
}

}  // namespace

PromptSpec bind_prompt(const ConceptRegistry& registry, std::string_view text) {
    PromptSpec spec;
    spec.text = std::string(text);
    std::istringstream ss(spec.text);
    std::string raw;
    while (ss >> raw) {
        std::string w = normalize_word(raw);
        if (w.empty()) continue;
        if (w.front() == '<' && w.back() == '>') {
            const std::string name = w.substr(1, w.size() - 2);
            if (!registry.contains(name)) throw ConfigError("prompt references unregistered concept '" + name + "'");
            if (std::find(spec.bound.begin(), spec.bound.end(), name) == spec.bound.end()) spec.bound.push_back(name);
        }
        spec.words.push_back(std::move(w));
    }
    return spec;
}

TokenizedPrompt tokenize(const ConceptRegistry& registry, const PromptSpec& prompt) {
    TokenizedPrompt out;
    out.ids.push_back(0);
    out.tokens.emplace_back(kBosToken);
    for (const auto& w : prompt.words) {
        if (w.size() > 2 && w.front() == '<' && w.back() == '>') {
            const auto& c = registry.get(w.substr(1, w.size() - 2));
            out.ids.push_back(c.rand_id);
            out.tokens.push_back(c.rand_token());
            out.ids.push_back(c.class_id);
            out.tokens.push_back(c.class_token());
        } else {
            out.ids.push_back(registry.word_id(w));
            out.tokens.push_back(registry.is_base_word(w) ? w : kUnkToken);
        }
    }
    return out;
}

std::vector<int> ConceptRef::all_positions() const {
    std::vector<int> out = rand_positions;
    out.insert(out.end(), class_positions.begin(), class_positions.end());
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<ConceptRef> extract_concept_tokens(const ConceptRegistry& registry, const PromptSpec& prompt) {
    const TokenizedPrompt tp = tokenize(registry, prompt);
    std::vector<ConceptRef> refs;
    for (std::size_t pos = 0; pos < tp.ids.size(); ++pos) {
        const int id = tp.ids[pos];
        if (static_cast<std::size_t>(id) < registry.base_size()) continue;
        const auto& c = registry.all()[(static_cast<std::size_t>(id) - registry.base_size()) / 2];
        auto it = std::find_if(refs.begin(), refs.end(), [&](const ConceptRef& r) { return r.name == c.name; });
        if (it == refs.end()) {
            refs.push_back({c.name, {}, {}});
            it = std::prev(refs.end());
        }
        (id == c.rand_id ? it->rand_positions : it->class_positions).push_back(static_cast<int>(pos));
    }
    return refs;
}

PromptSpec make_reference_prompt(const ConceptRegistry& registry, const std::string& name) {
    if (!registry.contains(name)) throw ConfigError("cannot build reference prompt: unknown concept '" + name + "'");
    return bind_prompt(registry, "a photo of <" + name + ">");
}

}  // namespace persona::concepts
