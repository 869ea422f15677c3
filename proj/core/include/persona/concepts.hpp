// Copyright (C) 2026 Persona contributors
// SPDX-License-Identifier: Apache-2.0
//
// Decomposed concept tokens. Each concept owns two learned tokens, an
// "adjective" token and a "noun" token initialized from a class word. In raw
// prompt text `<name>` expands to the pair `<name_rand> <name_class>`.

#pragma once

#include "persona/autograd.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace persona::concepts {

inline constexpr const char* kBosToken = "<bos>";
inline constexpr const char* kUnkToken = "<unk>";
inline constexpr double kRandInitStd = 0.01;

// Words of the built-in toy vocabulary; index 0 is <bos>, index 1 is <unk>.
const std::vector<std::string>& default_words();

struct BaseVocabulary {
    std::vector<std::string> words;
    Matrix embeddings;  // words.size() x width

    int width() const { return static_cast<int>(embeddings.cols()); }
};

struct ConceptTokenPair {
    std::string name;
    std::string class_word;
    int rand_id = -1;
    int class_id = -1;
    RowVector v_rand;
    RowVector v_class;

    std::string rand_token() const { return "<" + name + "_rand>"; }
    std::string class_token() const { return "<" + name + "_class>"; }
    // Composite two-token form.
    std::string composite() const { return rand_token() + " " + class_token(); }
};

class ConceptRegistry {
public:
    explicit ConceptRegistry(std::shared_ptr<const BaseVocabulary> base);

    // Grows the vocabulary by exactly two tokens.
    const ConceptTokenPair& register_concept(const std::string& name, const std::string& class_word,
                                             std::uint64_t seed);
    // Adds a concept with given embeddings (checkpoint restore, fusion merge).
    // Token ids are assigned here; the ids stored in `pair` are ignored.
    const ConceptTokenPair& add(ConceptTokenPair pair);

    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    const ConceptTokenPair& get(const std::string& name) const;
    ConceptTokenPair& get_mutable(const std::string& name);
    const std::vector<ConceptTokenPair>& all() const { return concepts_; }

    std::size_t base_size() const { return base_->words.size(); }
    std::size_t vocab_size() const { return base_size() + 2 * concepts_.size(); }
    int width() const { return base_->width(); }

    // Base words map to their index; unknown words map to <unk>.
    int word_id(const std::string& word) const;
    bool is_base_word(const std::string& word) const { return word_index_.count(word) != 0; }
    RowVector embedding(int id) const;
    const BaseVocabulary& base() const { return *base_; }

private:
    std::shared_ptr<const BaseVocabulary> base_;
    std::unordered_map<std::string, int> word_index_;
    std::vector<ConceptTokenPair> concepts_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct PromptSpec {
    std::string text;                       // raw text with <name> placeholders
    std::vector<std::string> words;         // normalized words; placeholders kept as <name>
    std::vector<std::string> bound;         // concept names, order of first appearance

    // Text with every placeholder expanded to its two-token form.
    std::string expanded() const;
};

// Throws ConfigError if a placeholder names an unregistered concept.
PromptSpec bind_prompt(const ConceptRegistry& registry, std::string_view text);

struct TokenizedPrompt {
    std::vector<int> ids;              // ids[0] is <bos>
    std::vector<std::string> tokens;
};

TokenizedPrompt tokenize(const ConceptRegistry& registry, const PromptSpec& prompt);

struct ConceptRef {
    std::string name;
    // Positions in the tokenized sequence (including <bos> at 0). A concept
    // mentioned twice contributes every occurrence.
    std::vector<int> rand_positions;
    std::vector<int> class_positions;

    std::vector<int> all_positions() const;
};

// K <= N concept references in order of first appearance; empty for plain prompts.
std::vector<ConceptRef> extract_concept_tokens(const ConceptRegistry& registry, const PromptSpec& prompt);

// "a photo of <name>".
PromptSpec make_reference_prompt(const ConceptRegistry& registry, const std::string& name);

}  // namespace persona::concepts
