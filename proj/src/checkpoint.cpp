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

#include "oelm/checkpoint.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "oelm/error.hpp"

namespace oelm {

namespace tn = tensor_names;

std::string layer_tensor_name(std::int64_t layer, std::int64_t num_layers,
                              std::string_view suffix) {
  const std::size_t width = std::max<std::size_t>(2, std::to_string(num_layers - 1).size());
  std::string index = std::to_string(layer);
  if (index.size() < width) index.insert(0, width - index.size(), '0');
  return "layer." + index + "." + std::string(suffix);
}

bool is_norm_gain(std::string_view name) { return name.ends_with("norm"); }

std::map<std::string, TensorShape> expected_tensor_shapes(const ScalePlan& plan) {
  const ModelSpec& s = plan.spec;
  const auto d = static_cast<std::size_t>(s.d_model);
  const auto hd = static_cast<std::size_t>(s.head_dim);
  const auto vocab = static_cast<std::size_t>(s.vocab_size);
  std::map<std::string, TensorShape> shapes;
  shapes[std::string(tn::kEmbedding)] = {vocab, d};
  if (!s.weight_tying) shapes[std::string(tn::kOutput)] = {vocab, d};
  shapes[std::string(tn::kFinalNorm)] = {1, d};
  for (const LayerPlan& l : plan.layers) {
    auto name = [&](std::string_view suffix) {
      return layer_tensor_name(l.index, s.num_layers, suffix);
    };
    const auto nh = static_cast<std::size_t>(l.n_heads);
    const auto nkv = static_cast<std::size_t>(l.n_kv_heads);
    const auto ffn = static_cast<std::size_t>(l.ffn_hidden);
    shapes[name(tn::kAttnNorm)] = {1, d};
    shapes[name(tn::kWq)] = {d, nh * hd};
    shapes[name(tn::kWk)] = {d, nkv * hd};
    shapes[name(tn::kWv)] = {d, nkv * hd};
    shapes[name(tn::kWo)] = {nh * hd, d};
    shapes[name(tn::kQNorm)] = {nh, hd};
    shapes[name(tn::kKNorm)] = {nkv, hd};
    shapes[name(tn::kFfnNorm)] = {1, d};
    shapes[name(tn::kGate)] = {d, ffn};
    shapes[name(tn::kUp)] = {d, ffn};
    shapes[name(tn::kDown)] = {ffn, d};
  }
  return shapes;
}

const Matrix& Checkpoint::tensor(std::string_view name) const {
  auto it = tensors.find(std::string(name));
  if (it == tensors.end()) fail(ErrorKind::kFormat, "missing tensor '" + std::string(name) + "'");
  return it->second;
}

Matrix& Checkpoint::tensor(std::string_view name) {
  return const_cast<Matrix&>(std::as_const(*this).tensor(name));
}

std::int64_t Checkpoint::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& [name, m] : tensors) n += static_cast<std::int64_t>(m.size());
  return n;
}

void validate_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.format_version != kCheckpointFormatVersion) {
    fail(ErrorKind::kFormat, "unsupported format version " +
                                 std::to_string(ckpt.format_version));
  }
  ScalePlan plan;
  try {
    plan = build_plan(ckpt.spec);
  } catch (const Error& e) {
    fail(ErrorKind::kFormat, std::string("embedded spec invalid: ") + e.what());
  }
  const auto expected = expected_tensor_shapes(plan);
  for (const auto& [name, shape] : expected) {
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) fail(ErrorKind::kShape, "missing tensor '" + name + "'");
    const TensorShape actual{it->second.rows(), it->second.cols()};
    if (actual != shape) {
      fail(ErrorKind::kShape, "tensor '" + name + "' is " + std::to_string(actual.rows) +
                                   "x" + std::to_string(actual.cols) + ", spec requires " +
                                   std::to_string(shape.rows) + "x" +
                                   std::to_string(shape.cols));
    }
  }
  for (const auto& [name, m] : ckpt.tensors) {
    if (!expected.contains(name)) {
      fail(ErrorKind::kShape, "unexpected tensor '" + name + "' for this spec");
    }
  }
}

void round_to_storage_precision(Checkpoint& ckpt) {
  for (auto& [name, m] : ckpt.tensors) {
    for (double& v : m.values()) v = static_cast<double>(static_cast<float>(v));
  }
}

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  constexpr std::size_t kChunk = 1u << 30;
  for (std::size_t off = 0; off < bytes.size(); off += kChunk) {
    const std::size_t n = std::min(kChunk, bytes.size() - off);
    crc = ::crc32(crc, bytes.data() + off, static_cast<uInt>(n));
  }
  return static_cast<std::uint32_t>(crc);
}

namespace {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void f32(float f) { u32(std::bit_cast<std::uint32_t>(f)); }
  std::vector<std::uint8_t>& buffer() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) fail(ErrorKind::kFormat, "checkpoint truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

std::string header_block(const Checkpoint& ckpt) {
  nlohmann::json j = to_json(ckpt.spec);
  if (!ckpt.init_note.empty()) j["init"] = ckpt.init_note;
  return j.dump(2) + "\n";
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  validate_checkpoint(ckpt);
  Writer w;
  w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  w.u32(ckpt.format_version);
  w.str(header_block(ckpt));
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, m] : ckpt.tensors) {
    w.str(name);
    w.u64(m.rows());
    w.u64(m.cols());
    for (double v : m.values()) w.f32(static_cast<float>(v));
  }
  const std::uint32_t crc = crc32(w.buffer());
  w.u32(crc);
  return std::move(w.buffer());
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof kCheckpointMagic + 8) fail(ErrorKind::kFormat, "checkpoint truncated");
  if (!std::equal(std::begin(kCheckpointMagic), std::end(kCheckpointMagic), bytes.begin())) {
    fail(ErrorKind::kFormat, "bad magic bytes (not an OELM checkpoint)");
  }
  const auto body = bytes.first(bytes.size() - 4);
  Reader tail(bytes.last(4));
  const std::uint32_t stored_crc = tail.u32();
  if (crc32(body) != stored_crc) fail(ErrorKind::kFormat, "CRC mismatch (corrupt or truncated)");

  Reader r(body.subspan(sizeof kCheckpointMagic));
  Checkpoint ckpt;
  ckpt.format_version = r.u32();
  if (ckpt.format_version != kCheckpointFormatVersion) {
    fail(ErrorKind::kFormat, "format version " + std::to_string(ckpt.format_version) +
                                 " unsupported (expected " +
                                 std::to_string(kCheckpointFormatVersion) + ")");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.str());
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::kFormat, std::string("malformed spec block: ") + e.what());
  }
  if (header.is_object() && header.contains("init")) {
    ckpt.init_note = header["init"].get<std::string>();
    header.erase("init");
  }
  try {
    ckpt.spec = model_spec_from_json(header);
  } catch (const Error& e) {
    fail(ErrorKind::kFormat, std::string("embedded spec rejected: ") + e.what());
  }

  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const std::uint64_t rows = r.u64();
    const std::uint64_t cols = r.u64();
    if (cols != 0 && rows > r.remaining() / 4 / cols) {
      fail(ErrorKind::kFormat, "tensor '" + name + "' larger than the file");
    }
    std::vector<double> data(rows * cols);
    for (double& v : data) v = static_cast<double>(r.f32());
    if (!ckpt.tensors.emplace(name, Matrix(rows, cols, std::move(data))).second) {
      fail(ErrorKind::kFormat, "duplicate tensor '" + name + "'");
    }
  }
  if (r.remaining() != 0) fail(ErrorKind::kFormat, "trailing bytes after tensors");
  validate_checkpoint(ckpt);
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kFormat, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::kFormat, "short write to " + path.string());
}

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kFormat, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return deserialize_checkpoint(bytes);
}

std::uint32_t file_crc32(const std::filesystem::path& path) { return crc32(read_file(path)); }

}  // namespace oelm
