// SPDX-License-Identifier: Apache-2.0
//
// Flat one-dimensional float32 buffers, the parameter <-> bucket mapping,
// and keep/drop bit masks. Everything downstream works on these.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pact/error.hpp"

namespace pact {

/// FNV-1a over a byte sequence. Used for mask digests and for weight
/// fingerprints in tests; not cryptographic, workers are cooperative.
uint64_t fnv1a64(const void* data, size_t len);

/// One-dimensional float32 buffer. Length is fixed at construction and all
/// elements stay finite; operations that could produce NaN/Inf validate
/// before handing a tensor back.
class FlatTensor {
 public:
  FlatTensor() = default;
  explicit FlatTensor(std::vector<float> values);

  static FlatTensor zeros(size_t len) { return FlatTensor(std::vector<float>(len, 0.0f)); }

  /// Validating constructor for values coming from outside (files, wire).
  static FlatTensor from_values(std::vector<float> values);

  size_t size() const { return values_.size(); }
  float operator[](size_t i) const { return values_[i]; }
  float& at(size_t i) { return values_[i]; }

  const float* data() const { return values_.data(); }
  float* data() { return values_.data(); }
  std::span<const float> view() const { return values_; }
  const std::vector<float>& values() const { return values_; }

  bool all_finite() const;

  bool operator==(const FlatTensor& o) const { return values_ == o.values_; }

 private:
  std::vector<float> values_;
};

/// Maps parameter names onto contiguous, non-overlapping ranges of a
/// FlatTensor, in registration order.
struct BucketView {
  struct Entry {
    std::string name;
    size_t offset = 0;
    size_t length = 0;
  };

  std::vector<Entry> entries;
  size_t total_len = 0;

  /// Throws InvalidView unless entries are contiguous and cover [0, total_len).
  void validate() const;
};

using NamedParams = std::vector<std::pair<std::string, std::vector<float>>>;

/// Concatenates named parameter tensors into one flat buffer, recording the
/// offsets so unflatten() can invert it bit-exactly.
std::pair<FlatTensor, BucketView> flatten(const NamedParams& params);

NamedParams unflatten(const FlatTensor& flat, const BucketView& view);

/// Per-element keep(1)/drop(0) mask over a FlatTensor, with a cached
/// population count and a 64-bit digest of the packed bit words.
class SparsityMask {
 public:
  SparsityMask() = default;

  static SparsityMask all_ones(size_t len);
  static SparsityMask all_zeros(size_t len);
  static SparsityMask from_bits(const std::vector<bool>& bits);

  /// Copy-and-replace mutation; the mask itself is immutable.
  SparsityMask with_bit(size_t i, bool keep) const;

  size_t size() const { return len_; }
  size_t nnz() const { return nnz_; }
  uint64_t digest() const { return digest_; }

  bool test(size_t i) const { return (words_[i >> 6] >> (i & 63)) & 1u; }

  const std::vector<uint64_t>& words() const { return words_; }

  bool operator==(const SparsityMask& o) const { return len_ == o.len_ && words_ == o.words_; }

 private:
  void refresh();  // recomputes nnz and digest from words_

  std::vector<uint64_t> words_;
  size_t len_ = 0;
  size_t nnz_ = 0;
  uint64_t digest_ = 0;
};

/// Digest of the packed bit words, serialized little-endian. Stable across
/// platforms and process restarts.
uint64_t mask_digest(const SparsityMask& mask);

}  // namespace pact
