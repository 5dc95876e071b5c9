// Copyright 2026 The oelm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "oelm/batch.hpp"
#include "oelm/matrix.hpp"

namespace oelm {

class Tokenizer {
 public:
  virtual ~Tokenizer() = default;
  virtual std::size_t vocab_size() const = 0;
  virtual std::vector<TokenId> encode(std::string_view text) const = 0;
  virtual std::string decode(std::span<const TokenId> ids) const = 0;
  // Inserted between packed documents.
  TokenId separator_id() const { return static_cast<TokenId>(vocab_size() - 1); }
};

// ids 0..255 are raw bytes, 256 is padding, 257 the document separator.
class ByteTokenizer final : public Tokenizer {
 public:
  static constexpr TokenId kPad = 256;
  static constexpr TokenId kSeparator = 257;

  std::size_t vocab_size() const override { return 258; }
  std::vector<TokenId> encode(std::string_view text) const override;
  // Special ids are dropped.
  std::string decode(std::span<const TokenId> ids) const override;
};

struct FilterPolicy {
  std::int64_t min_chars = 200;
  std::int64_t min_tokens = 256;
};

enum class SkipReason { kNone, kChars, kTokens };
const char* to_string(SkipReason r);

struct FilterDecision {
  bool keep = true;
  SkipReason reason = SkipReason::kNone;
  friend bool operator==(const FilterDecision&, const FilterDecision&) = default;
};

// Unicode code points in a UTF-8 string.
std::size_t count_characters(std::string_view utf8);

// Skips text strictly shorter than either threshold; the character check is
// reported first when both fail.
FilterDecision filter_sequence(std::string_view text, std::size_t token_count,
                               const FilterPolicy& policy);

struct SourceSpec {
  std::string name;
  std::filesystem::path path;
  double weight = 1.0;
};

// A source's documents, one per non-empty line of its file.
struct Source {
  SourceSpec spec;
  std::vector<std::string> documents;
};

Source load_source(const SourceSpec& spec);

struct SourceManifest {
  std::vector<SourceSpec> sources;
  FilterPolicy policy;
};

// {"sources": [{"name", "path", "weight"}...], "filter": {"min_chars", "min_tokens"}}.
// Relative paths resolve against `base_dir`.
SourceManifest parse_manifest(const nlohmann::json& j, const std::filesystem::path& base_dir);
SourceManifest load_manifest(const std::filesystem::path& path);

struct FilterStats {
  std::string source;
  std::size_t documents = 0;
  std::size_t kept = 0;
  std::size_t skipped_chars = 0;
  std::size_t skipped_tokens = 0;
};

FilterStats filter_stats(const Source& source, const Tokenizer& tokenizer,
                         const FilterPolicy& policy);

// Returns a copy of `source` holding only the surviving documents.
Source filter_source(const Source& source, const Tokenizer& tokenizer,
                     const FilterPolicy& policy);

struct Document {
  std::size_t source = 0;
  std::string text;
  std::vector<TokenId> tokens;
  friend bool operator==(const Document&, const Document&) = default;
};

// Endless weighted mixture of sources. Each draw picks source s with
// probability weight_s / sum(weights) and returns that source's next
// surviving document. A source visits its documents in an order keyed on
// (document text, seed + epoch), so dropping documents never perturbs the
// relative order of the rest; it reshuffles on every pass.
class DocumentStream {
 public:
  DocumentStream(std::vector<Source> sources, const Tokenizer& tokenizer, FilterPolicy policy,
                 std::uint64_t seed);

  Document next();
  std::size_t num_sources() const { return sources_.size(); }

 private:
  struct Cursor {
    std::vector<std::size_t> order;
    std::size_t position = 0;
    std::uint64_t epoch = 0;
    std::size_t survivors_this_epoch = 0;
  };

  void reshuffle(std::size_t s);
  std::size_t pick_source();

  std::vector<Source> sources_;
  const Tokenizer& tokenizer_;
  FilterPolicy policy_;
  std::uint64_t seed_;
  std::vector<double> cumulative_;
  std::vector<Cursor> cursors_;
  std::mt19937_64 rng_;
};

// Concatenates documents (each followed by the separator id) and slices the
// token stream into rows of `context_length`. Each batch holds
// tokens_per_batch / context_length rows; a row's targets are its inputs
// shifted left by one with the separator in the last slot.
class BatchPacker {
 public:
  BatchPacker(DocumentStream& stream, const Tokenizer& tokenizer, std::size_t context_length,
              std::size_t tokens_per_batch);

  Batch next();
  std::size_t rows_per_batch() const { return rows_; }

 private:
  std::vector<TokenId> next_row();

  DocumentStream& stream_;
  const Tokenizer& tokenizer_;
  std::size_t context_length_;
  std::size_t rows_;
  std::deque<TokenId> pending_;
};

}  // namespace oelm
