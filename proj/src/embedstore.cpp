// Copyright (C) 2026 The tmd Authors
// SPDX-License-Identifier: Apache-2.0

#include "tmd/embedstore.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

#include "tmd/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

namespace tmd::store {

namespace {

using nlohmann::json;

constexpr std::string_view kRespPrefix = "resp/";
constexpr std::string_view kHiddenSuffix = "/hidden";
constexpr std::string_view kLogprobSuffix = "/logprob";
constexpr std::size_t kPreambleSize = 4 + sizeof(std::uint64_t);

std::optional<DType> parse_dtype(std::string_view name) {
  if (name == "F32") return DType::F32;
  if (name == "F64") return DType::F64;
  if (name == "U8") return DType::U8;
  return std::nullopt;
}

std::size_t checked_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t dim : shape) {
    if (dim != 0 && n > std::numeric_limits<std::size_t>::max() / dim) {
      throw DataError("tensor shape overflows");
    }
    n *= dim;
  }
  return n;
}

template <typename T>
std::vector<unsigned char> to_bytes(std::span<const T> values) {
  std::vector<unsigned char> out(values.size_bytes());
  if (!out.empty()) std::memcpy(out.data(), values.data(), out.size());
  return out;
}

template <typename T>
std::vector<T> decode_values(const Tensor& t, DType expected) {
  if (t.dtype != expected) throw DataError("tensor dtype mismatch");
  std::vector<T> out(t.bytes.size() / sizeof(T));
  if (!out.empty()) std::memcpy(out.data(), t.bytes.data(), out.size() * sizeof(T));
  return out;
}

bool all_finite(std::span<const float> values) {
  return std::all_of(values.begin(), values.end(), [](float v) { return std::isfinite(v); });
}

}  // namespace

std::string_view dtype_name(DType dtype) {
  switch (dtype) {
    case DType::F32: return "F32";
    case DType::F64: return "F64";
    case DType::U8: return "U8";
  }
  return "?";
}

std::size_t dtype_size(DType dtype) {
  switch (dtype) {
    case DType::F32: return 4;
    case DType::F64: return 8;
    case DType::U8: return 1;
  }
  return 0;
}

std::size_t Tensor::element_count() const { return checked_product(shape); }

Tensor Tensor::from_f32(std::vector<std::size_t> shape, std::span<const float> values) {
  if (checked_product(shape) != values.size()) throw DataError("tensor shape does not match data size");
  return Tensor{DType::F32, std::move(shape), to_bytes(values)};
}

Tensor Tensor::from_f64(std::vector<std::size_t> shape, std::span<const double> values) {
  if (checked_product(shape) != values.size()) throw DataError("tensor shape does not match data size");
  return Tensor{DType::F64, std::move(shape), to_bytes(values)};
}

Tensor Tensor::from_bytes(std::string_view bytes) {
  Tensor t{DType::U8, {bytes.size()}, {}};
  t.bytes.assign(bytes.begin(), bytes.end());
  return t;
}

std::vector<float> Tensor::to_f32() const { return decode_values<float>(*this, DType::F32); }
std::vector<double> Tensor::to_f64() const { return decode_values<double>(*this, DType::F64); }

std::string Tensor::to_string() const {
  if (dtype != DType::U8) throw DataError("tensor dtype mismatch");
  return std::string(bytes.begin(), bytes.end());
}

std::string encode_container(const TensorMap& tensors) {
  json index = json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, tensor] : tensors) {
    const std::size_t expected = tensor.element_count() * dtype_size(tensor.dtype);
    if (expected != tensor.bytes.size()) {
      throw DataError("tensor '" + name + "': byte length does not match shape");
    }
    index[name] = {{"dtype", dtype_name(tensor.dtype)},
                   {"shape", tensor.shape},
                   {"offset", offset},
                   {"length", tensor.bytes.size()}};
    offset += tensor.bytes.size();
  }
  const std::string header = index.dump();
  const std::uint64_t header_len = header.size();

  std::string out;
  out.reserve(kPreambleSize + header.size() + offset);
  out.append(kMagic);
  out.append(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  out.append(header);
  for (const auto& [name, tensor] : tensors) {
    out.append(reinterpret_cast<const char*>(tensor.bytes.data()), tensor.bytes.size());
  }
  return out;
}

TensorMap decode_container(std::string_view bytes, std::initializer_list<DType> allowed) {
  if (bytes.size() < kPreambleSize || bytes.substr(0, 4) != kMagic) throw DataError("bad magic");
  std::uint64_t header_len = 0;
  std::memcpy(&header_len, bytes.data() + 4, sizeof(header_len));
  if (header_len > bytes.size() - kPreambleSize) {
    throw DataError("header length exceeds file size");
  }
  const std::string_view header = bytes.substr(kPreambleSize, header_len);
  const std::string_view payload = bytes.substr(kPreambleSize + header_len);

  json index;
  try {
    index = json::parse(header);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("malformed JSON header: ") + e.what());
  }
  if (!index.is_object()) throw DataError("malformed JSON header: expected an object");

  struct Region {
    std::uint64_t offset;
    std::uint64_t length;
    const std::string* name;
  };
  std::vector<Region> regions;
  TensorMap out;
  for (const auto& [name, entry] : index.items()) {
    try {
      const auto dtype = parse_dtype(entry.at("dtype").get<std::string>());
      if (!dtype || std::find(allowed.begin(), allowed.end(), *dtype) == allowed.end()) {
        throw DataError("unsupported dtype '" + entry.at("dtype").get<std::string>() +
                        "' for tensor '" + name + "'");
      }
      Tensor t;
      t.dtype = *dtype;
      t.shape = entry.at("shape").get<std::vector<std::size_t>>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const auto length = entry.at("length").get<std::uint64_t>();
      if (t.element_count() * dtype_size(t.dtype) != length) {
        throw DataError("tensor '" + name + "': length does not match shape");
      }
      if (offset > payload.size() || length > payload.size() - offset) {
        throw DataError("tensor '" + name + "': region out of bounds");
      }
      const auto* first = reinterpret_cast<const unsigned char*>(payload.data() + offset);
      t.bytes.assign(first, first + length);
      auto [it, inserted] = out.emplace(name, std::move(t));
      regions.push_back({offset, length, &it->first});
    } catch (const json::exception& e) {
      throw DataError("malformed JSON header entry '" + name + "': " + e.what());
    }
  }

  std::sort(regions.begin(), regions.end(), [](const Region& a, const Region& b) {
    return a.offset != b.offset ? a.offset < b.offset : a.length < b.length;
  });
  const Region* furthest = nullptr;
  for (const Region& cur : regions) {
    if (cur.length == 0) continue;
    if (furthest != nullptr && cur.offset < furthest->offset + furthest->length) {
      throw DataError("tensor regions overlap: '" + *furthest->name + "' and '" + *cur.name + "'");
    }
    if (furthest == nullptr || cur.offset + cur.length > furthest->offset + furthest->length) {
      furthest = &cur;
    }
  }
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("not found: " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return data;
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

HiddenStates::HiddenStates(std::span<const float> data, std::size_t tokens, std::size_t layers,
                           std::size_t dim)
    : data_(data), tokens_(tokens), layers_(layers), dim_(dim) {
  if (data.size() != tokens * layers * dim) throw DataError("hidden state buffer has wrong size");
}

Eigen::Map<const Eigen::VectorXf> HiddenStates::at(std::size_t token, std::size_t layer) const {
  const std::size_t offset = (token * layers_ + (layer - 1)) * dim_;
  return {data_.data() + offset, static_cast<Eigen::Index>(dim_)};
}

EmbeddingStore::EmbeddingStore(std::map<std::string, ResponseTensors, std::less<>> responses,
                               std::size_t layers, std::size_t dim)
    : responses_(std::move(responses)), layers_(layers), dim_(dim) {}

bool EmbeddingStore::contains(std::string_view id) const { return responses_.find(id) != responses_.end(); }

const ResponseTensors* EmbeddingStore::find(std::string_view id) const {
  auto it = responses_.find(id);
  return it == responses_.end() ? nullptr : &it->second;
}

HiddenStates EmbeddingStore::hidden(std::string_view id) const {
  const ResponseTensors* r = find(id);
  if (r == nullptr || !r->hidden) throw DataError("missing hidden tensor for response '" + std::string(id) + "'");
  return {*r->hidden, r->tokens, layers_, dim_};
}

std::span<const float> EmbeddingStore::logprob(std::string_view id) const {
  const ResponseTensors* r = find(id);
  if (r == nullptr || !r->logprob) throw DataError("missing logprob tensor for response '" + std::string(id) + "'");
  return *r->logprob;
}

std::vector<std::string> EmbeddingStore::ids() const {
  std::vector<std::string> out;
  out.reserve(responses_.size());
  for (const auto& [id, r] : responses_) out.push_back(id);
  return out;
}

std::string write_store(std::span<const StoreRecord> records) {
  TensorMap tensors;
  std::set<std::string_view> seen;
  std::optional<std::pair<std::size_t, std::size_t>> shape;
  for (const StoreRecord& r : records) {
    if (!seen.insert(r.id).second) throw DataError("duplicate response id '" + r.id + "'");
    if (shape && (shape->first != r.layers || shape->second != r.dim)) {
      throw DataError("dimension mismatch: response '" + r.id + "' has L=" + std::to_string(r.layers) +
                      ", d=" + std::to_string(r.dim) + " but the store has L=" +
                      std::to_string(shape->first) + ", d=" + std::to_string(shape->second));
    }
    shape = {r.layers, r.dim};
    if (r.hidden.size() != r.tokens * r.layers * r.dim) {
      throw DataError("response '" + r.id + "': hidden buffer size does not match [T, L, d]");
    }
    if (r.logprob.size() != r.tokens) {
      throw DataError("response '" + r.id + "': logprob length does not match token count");
    }
    if (!all_finite(r.hidden) || !all_finite(r.logprob)) {
      throw DataError("response '" + r.id + "': non-finite value");
    }
    const std::string base = std::string(kRespPrefix) + r.id;
    tensors.emplace(base + std::string(kHiddenSuffix),
                    Tensor::from_f32({r.tokens, r.layers, r.dim}, r.hidden));
    tensors.emplace(base + std::string(kLogprobSuffix), Tensor::from_f32({r.tokens}, r.logprob));
  }
  return encode_container(tensors);
}

void write_store_file(const std::filesystem::path& path, std::span<const StoreRecord> records) {
  write_file(path, write_store(records));
}

EmbeddingStore parse_store(std::string_view bytes) {
  TensorMap tensors = decode_container(bytes, {DType::F32});

  std::map<std::string, ResponseTensors, std::less<>> responses;
  std::optional<std::pair<std::size_t, std::size_t>> layer_dim;
  for (auto& [name, tensor] : tensors) {
    std::string_view n = name;
    if (!n.starts_with(kRespPrefix)) continue;
    n.remove_prefix(kRespPrefix.size());
    if (n.ends_with(kHiddenSuffix)) {
      n.remove_suffix(kHiddenSuffix.size());
      if (tensor.shape.size() != 3) throw DataError("tensor '" + name + "' must have rank 3");
      const std::pair<std::size_t, std::size_t> ld{tensor.shape[1], tensor.shape[2]};
      if (layer_dim && *layer_dim != ld) throw DataError("dimension mismatch in tensor '" + name + "'");
      layer_dim = ld;
      ResponseTensors& r = responses[std::string(n)];
      if (r.logprob && r.tokens != tensor.shape[0]) {
        throw DataError("response '" + std::string(n) + "': hidden and logprob token counts differ");
      }
      r.tokens = tensor.shape[0];
      r.hidden = tensor.to_f32();
    } else if (n.ends_with(kLogprobSuffix)) {
      n.remove_suffix(kLogprobSuffix.size());
      if (tensor.shape.size() != 1) throw DataError("tensor '" + name + "' must have rank 1");
      ResponseTensors& r = responses[std::string(n)];
      if (r.hidden && r.tokens != tensor.shape[0]) {
        throw DataError("response '" + std::string(n) + "': hidden and logprob token counts differ");
      }
      r.tokens = tensor.shape[0];
      r.logprob = tensor.to_f32();
    }
  }

  const auto [layers, dim] = layer_dim.value_or(std::pair<std::size_t, std::size_t>{0, 0});
  return EmbeddingStore(std::move(responses), layers, dim);
}

EmbeddingStore read_store(const std::filesystem::path& path) { return parse_store(read_file(path)); }

}  // namespace tmd::store
