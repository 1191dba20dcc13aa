// Copyright 2026 the tfew authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "tfew/error.hpp"

namespace tfew {

/// Fixed 64-symbol whitespace tokenizer: three specials, the ten digits, the
/// lowercase alphabet, and a small closed set of prompt words. Id 0 (<pad>)
/// doubles as the decoder start token.
class Tokenizer {
   public:
    Tokenizer() {
        add("<pad>");
        add("<eos>");
        add("<sep>");
        for (char c = '0'; c <= '9'; ++c) add(std::string(1, c));
        for (char c = 'a'; c <= 'z'; ++c) add(std::string(1, c));
        for (const char* w :
             {"yes", "no", "even", "odd", "first", "last", "most", "least", "sorted", "mixed",
              "has", "in", "copy", "count", "of", "is", "it", "the", "answer", "order", "kind",
              ":", "=", "->", "so"}) {
            add(w);
        }
    }

    int vocab_size() const { return static_cast<int>(tokens_.size()); }

    int id_of(const std::string& token) const {
        auto it = ids_.find(token);
        if (it == ids_.end()) {
            throw TemplateError("token '" + token + "' is not in the fixed vocabulary");
        }
        return it->second;
    }

    const std::string& token_of(int id) const {
        if (id < 0 || id >= vocab_size()) {
            throw InputError("token id " + std::to_string(id) + " out of range");
        }
        return tokens_[static_cast<std::size_t>(id)];
    }

    /// Whitespace-split encoding; every piece must be a vocabulary token.
    std::vector<int> encode(const std::string& text) const {
        std::vector<int> ids;
        std::istringstream is(text);
        std::string piece;
        while (is >> piece) ids.push_back(id_of(piece));
        return ids;
    }

    /// Single-space joined decoding; the exact inverse of encode.
    std::string decode(const std::vector<int>& ids) const {
        std::string out;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (i > 0) out += ' ';
            out += token_of(ids[i]);
        }
        return out;
    }

    static const Tokenizer& instance() {
        static const Tokenizer tok;
        return tok;
    }

   private:
    void add(const std::string& token) {
        ids_.emplace(token, static_cast<int>(tokens_.size()));
        tokens_.push_back(token);
    }

    std::vector<std::string> tokens_;
    std::map<std::string, int> ids_;
};

}  // namespace tfew
