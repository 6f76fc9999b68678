// Copyright (C) 2026 The tmd Authors
// SPDX-License-Identifier: Apache-2.0

// Binary tensor container and the per-response embedding store built on it.
//
// Container layout (all integers little-endian):
//
//   magic        4 bytes, "TMD1"
//   header_len   u64
//   header       header_len bytes of UTF-8 JSON:
//                  {"<name>": {"dtype": "F32", "shape": [...],
//                              "offset": <bytes>, "length": <bytes>}, ...}
//   payload      raw tensor bytes; offsets are relative to the payload start
//
// Tensors are written row-major in lexicographic name order. An embedding
// store holds, for every response id r, "resp/r/hidden" with shape [T, L, d]
// and "resp/r/logprob" with shape [T], both F32.

#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tmd::store {

inline constexpr std::string_view kMagic = "TMD1";

enum class DType { F32, F64, U8 };

std::string_view dtype_name(DType dtype);
std::size_t dtype_size(DType dtype);

/// One named tensor owned by a container: raw little-endian element bytes.
struct Tensor {
  DType dtype = DType::F32;
  std::vector<std::size_t> shape;
  std::vector<unsigned char> bytes;

  std::size_t element_count() const;

  static Tensor from_f32(std::vector<std::size_t> shape, std::span<const float> values);
  static Tensor from_f64(std::vector<std::size_t> shape, std::span<const double> values);
  static Tensor from_bytes(std::string_view bytes);

  std::vector<float> to_f32() const;
  std::vector<double> to_f64() const;
  std::string to_string() const;
};

using TensorMap = std::map<std::string, Tensor>;

/// Serializes a tensor map into container bytes. Output is a pure function of
/// the map contents.
std::string encode_container(const TensorMap& tensors);

/// Parses container bytes, accepting only the listed dtypes.
/// Throws DataError on bad magic, truncated header, malformed JSON, unsupported
/// dtype, shape/length disagreement, or out-of-bounds / overlapping regions.
TensorMap decode_container(std::string_view bytes, std::initializer_list<DType> allowed);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

/// Row-major view over one response's hidden states, shape [tokens, layers, dim].
class HiddenStates {
 public:
  HiddenStates() = default;
  HiddenStates(std::span<const float> data, std::size_t tokens, std::size_t layers,
               std::size_t dim);

  std::size_t tokens() const { return tokens_; }
  std::size_t layers() const { return layers_; }
  std::size_t dim() const { return dim_; }

  /// Embedding of `token` after decoder layer `layer` (1-based).
  Eigen::Map<const Eigen::VectorXf> at(std::size_t token, std::size_t layer) const;

  std::span<const float> data() const { return data_; }

 private:
  std::span<const float> data_;
  std::size_t tokens_ = 0;
  std::size_t layers_ = 0;
  std::size_t dim_ = 0;
};

/// Input record for write_store.
struct StoreRecord {
  std::string id;
  std::size_t tokens = 0;
  std::size_t layers = 0;
  std::size_t dim = 0;
  std::vector<float> hidden;   // tokens * layers * dim, row-major
  std::vector<float> logprob;  // tokens
};

struct ResponseTensors {
  std::size_t tokens = 0;
  std::optional<std::vector<float>> hidden;
  std::optional<std::vector<float>> logprob;
};

class EmbeddingStore {
 public:
  EmbeddingStore() = default;
  EmbeddingStore(std::map<std::string, ResponseTensors, std::less<>> responses, std::size_t layers,
                 std::size_t dim);

  std::size_t num_layers() const { return layers_; }
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return responses_.size(); }

  bool contains(std::string_view id) const;
  const ResponseTensors* find(std::string_view id) const;

  /// Hidden states of `id`; throws DataError when the response or its hidden
  /// tensor is missing.
  HiddenStates hidden(std::string_view id) const;
  /// Log-probabilities of `id`; throws DataError when missing.
  std::span<const float> logprob(std::string_view id) const;

  /// Response ids in lexicographic order.
  std::vector<std::string> ids() const;
  const std::map<std::string, ResponseTensors, std::less<>>& responses() const { return responses_; }

 private:
  std::map<std::string, ResponseTensors, std::less<>> responses_;
  std::size_t layers_ = 0;
  std::size_t dim_ = 0;
};

/// Encodes records into container bytes.
/// Throws DataError on mismatched L/d ("dimension mismatch"), inconsistent
/// buffer sizes, non-finite values, or duplicate ids.
std::string write_store(std::span<const StoreRecord> records);
void write_store_file(const std::filesystem::path& path, std::span<const StoreRecord> records);

EmbeddingStore parse_store(std::string_view bytes);
/// Throws IoError when the file cannot be read, DataError when it is malformed.
EmbeddingStore read_store(const std::filesystem::path& path);

}  // namespace tmd::store
