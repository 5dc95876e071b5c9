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

#include "oelm/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "oelm/error.hpp"

namespace oelm {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::vector<TokenId> ByteTokenizer::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(static_cast<TokenId>(c));
  return ids;
}

std::string ByteTokenizer::decode(std::span<const TokenId> ids) const {
  std::string out;
  out.reserve(ids.size());
  for (TokenId id : ids) {
    if (id >= 0 && id < 256) out.push_back(static_cast<char>(id));
  }
  return out;
}

const char* to_string(SkipReason r) {
  switch (r) {
    case SkipReason::kNone: return "none";
    case SkipReason::kChars: return "chars";
    case SkipReason::kTokens: return "tokens";
  }
  return "unknown";
}

std::size_t count_characters(std::string_view utf8) {
  return static_cast<std::size_t>(std::count_if(utf8.begin(), utf8.end(), [](char c) {
    return (static_cast<unsigned char>(c) & 0xC0) != 0x80;
  }));
}

FilterDecision filter_sequence(std::string_view text, std::size_t token_count,
                               const FilterPolicy& policy) {
  if (static_cast<std::int64_t>(count_characters(text)) < policy.min_chars) {
    return {false, SkipReason::kChars};
  }
  if (static_cast<std::int64_t>(token_count) < policy.min_tokens) {
    return {false, SkipReason::kTokens};
  }
  return {true, SkipReason::kNone};
}

Source load_source(const SourceSpec& spec) {
  if (!(spec.weight > 0.0) || !std::isfinite(spec.weight)) {
    fail(ErrorKind::kConfig, "source '" + spec.name + "' weight must be positive");
  }
  std::ifstream in(spec.path);
  if (!in) fail(ErrorKind::kData, "cannot read source '" + spec.name + "' at " + spec.path.string());
  Source src{spec, {}};
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) src.documents.push_back(std::move(line));
  }
  return src;
}

SourceManifest parse_manifest(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  SourceManifest m;
  try {
    for (const auto& s : j.at("sources")) {
      SourceSpec spec;
      spec.name = s.at("name").get<std::string>();
      spec.path = s.at("path").get<std::string>();
      if (spec.path.is_relative()) spec.path = base_dir / spec.path;
      spec.weight = s.value("weight", 1.0);
      if (!(spec.weight > 0.0)) {
        fail(ErrorKind::kConfig, "source '" + spec.name + "' weight must be positive");
      }
      m.sources.push_back(std::move(spec));
    }
    if (j.contains("filter")) {
      const auto& f = j.at("filter");
      m.policy.min_chars = f.value("min_chars", m.policy.min_chars);
      m.policy.min_tokens = f.value("min_tokens", m.policy.min_tokens);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kConfig, std::string("malformed source manifest: ") + e.what());
  }
  if (m.sources.empty()) fail(ErrorKind::kConfig, "source manifest lists no sources");
  if (m.policy.min_chars < 0 || m.policy.min_tokens < 0) {
    fail(ErrorKind::kConfig, "filter thresholds must be non-negative");
  }
  return m;
}

SourceManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kConfig, "cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kConfig, std::string("malformed source manifest: ") + e.what());
  }
  return parse_manifest(j, path.parent_path());
}

FilterStats filter_stats(const Source& source, const Tokenizer& tokenizer,
                         const FilterPolicy& policy) {
  FilterStats st;
  st.source = source.spec.name;
  for (const std::string& doc : source.documents) {
    ++st.documents;
    const auto verdict = filter_sequence(doc, tokenizer.encode(doc).size(), policy);
    switch (verdict.reason) {
      case SkipReason::kNone: ++st.kept; break;
      case SkipReason::kChars: ++st.skipped_chars; break;
      case SkipReason::kTokens: ++st.skipped_tokens; break;
    }
  }
  return st;
}

Source filter_source(const Source& source, const Tokenizer& tokenizer,
                     const FilterPolicy& policy) {
  Source out{source.spec, {}};
  for (const std::string& doc : source.documents) {
    if (filter_sequence(doc, tokenizer.encode(doc).size(), policy).keep) {
      out.documents.push_back(doc);
    }
  }
  return out;
}

DocumentStream::DocumentStream(std::vector<Source> sources, const Tokenizer& tokenizer,
                               FilterPolicy policy, std::uint64_t seed)
    : sources_(std::move(sources)),
      tokenizer_(tokenizer),
      policy_(policy),
      seed_(seed),
      rng_(seed) {
  if (sources_.empty()) fail(ErrorKind::kConfig, "document stream needs at least one source");
  double total = 0.0;
  for (const Source& s : sources_) {
    if (!(s.spec.weight > 0.0)) {
      fail(ErrorKind::kConfig, "source '" + s.spec.name + "' weight must be positive");
    }
    total += s.spec.weight;
    cumulative_.push_back(total);
  }
  for (double& c : cumulative_) c /= total;
  cursors_.resize(sources_.size());
  for (std::size_t s = 0; s < sources_.size(); ++s) reshuffle(s);
}

void DocumentStream::reshuffle(std::size_t s) {
  Cursor& c = cursors_[s];
  const auto& docs = sources_[s].documents;
  const std::uint64_t epoch_key = splitmix64(seed_ + c.epoch);
  std::vector<std::uint64_t> keys(docs.size());
  for (std::size_t i = 0; i < docs.size(); ++i) keys[i] = splitmix64(fnv1a(docs[i]) ^ epoch_key);
  c.order.resize(docs.size());
  std::iota(c.order.begin(), c.order.end(), std::size_t{0});
  std::stable_sort(c.order.begin(), c.order.end(), [&](std::size_t a, std::size_t b) {
    if (keys[a] != keys[b]) return keys[a] < keys[b];
    return docs[a] < docs[b];
  });
  c.position = 0;
  c.survivors_this_epoch = 0;
}

std::size_t DocumentStream::pick_source() {
  if (sources_.size() == 1) return 0;
  const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
  for (std::size_t s = 0; s < cumulative_.size(); ++s) {
    if (u < cumulative_[s]) return s;
  }
  return cumulative_.size() - 1;
}

Document DocumentStream::next() {
  const std::size_t s = pick_source();
  Cursor& c = cursors_[s];
  const Source& src = sources_[s];
  if (src.documents.empty()) {
    fail(ErrorKind::kSourceExhausted, "source '" + src.spec.name + "' has no documents");
  }
  for (;;) {
    if (c.position == c.order.size()) {
      if (c.survivors_this_epoch == 0) {
        fail(ErrorKind::kSourceExhausted,
             "source '" + src.spec.name + "' has no document that passes the filter");
      }
      ++c.epoch;
      reshuffle(s);
    }
    const std::string& text = src.documents[c.order[c.position++]];
    std::vector<TokenId> tokens = tokenizer_.encode(text);
    if (filter_sequence(text, tokens.size(), policy_).keep) {
      ++c.survivors_this_epoch;
      return Document{s, text, std::move(tokens)};
    }
  }
}

BatchPacker::BatchPacker(DocumentStream& stream, const Tokenizer& tokenizer,
                         std::size_t context_length, std::size_t tokens_per_batch)
    : stream_(stream),
      tokenizer_(tokenizer),
      context_length_(context_length),
      rows_(context_length == 0 ? 0 : tokens_per_batch / context_length) {
  if (context_length == 0) fail(ErrorKind::kConfig, "context_length must be positive");
  if (tokens_per_batch < context_length) {
    fail(ErrorKind::kConfig, "tokens_per_batch (" + std::to_string(tokens_per_batch) +
                                 ") must be at least context_length (" +
                                 std::to_string(context_length) + ")");
  }
}

std::vector<TokenId> BatchPacker::next_row() {
  const auto vocab = static_cast<TokenId>(tokenizer_.vocab_size());
  while (pending_.size() < context_length_) {
    Document doc = stream_.next();
    for (TokenId t : doc.tokens) {
      if (t < 0 || t >= vocab) {
        fail(ErrorKind::kData, "tokenizer produced id " + std::to_string(t) +
                                   " outside vocabulary of " + std::to_string(vocab));
      }
      pending_.push_back(t);
    }
    pending_.push_back(tokenizer_.separator_id());
  }
  std::vector<TokenId> row(pending_.begin(),
                           pending_.begin() + static_cast<std::ptrdiff_t>(context_length_));
  pending_.erase(pending_.begin(), pending_.begin() + static_cast<std::ptrdiff_t>(context_length_));
  return row;
}

Batch BatchPacker::next() {
  Batch b;
  b.rows = rows_;
  b.length = context_length_;
  b.separator = tokenizer_.separator_id();
  b.inputs.reserve(rows_ * context_length_);
  b.targets.reserve(rows_ * context_length_);
  for (std::size_t r = 0; r < rows_; ++r) {
    std::vector<TokenId> row = next_row();
    b.inputs.insert(b.inputs.end(), row.begin(), row.end());
    b.targets.insert(b.targets.end(), row.begin() + 1, row.end());
    b.targets.push_back(b.separator);
  }
  return b;
}

}  // namespace oelm
