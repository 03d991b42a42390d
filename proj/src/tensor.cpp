// SPDX-License-Identifier: Apache-2.0

#include "pact/tensor.hpp"

#include <cmath>
#include <cstring>
#include <unordered_set>

namespace pact {

uint64_t fnv1a64(const void* data, size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

FlatTensor::FlatTensor(std::vector<float> values) : values_(std::move(values)) {}

FlatTensor FlatTensor::from_values(std::vector<float> values) {
  FlatTensor t(std::move(values));
  if (!t.all_finite()) raise(Errc::NumericalFailure, "tensor contains NaN or Inf");
  return t;
}

bool FlatTensor::all_finite() const {
  for (float v : values_)
    if (!std::isfinite(v)) return false;
  return true;
}

void BucketView::validate() const {
  size_t expect = 0;
  for (const auto& e : entries) {
    if (e.offset != expect)
      raise(Errc::InvalidView, "entry '" + e.name + "' not contiguous at offset " +
                                   std::to_string(e.offset));
    if (e.length == 0) raise(Errc::InvalidView, "entry '" + e.name + "' has zero length");
    expect += e.length;
  }
  if (expect != total_len)
    raise(Errc::InvalidView, "entries cover " + std::to_string(expect) + " of " +
                                 std::to_string(total_len) + " elements");
}

std::pair<FlatTensor, BucketView> flatten(const NamedParams& params) {
  std::unordered_set<std::string> seen;
  BucketView view;
  size_t total = 0;
  for (const auto& [name, values] : params) {
    if (!seen.insert(name).second) raise(Errc::DuplicateParam, "parameter '" + name + "'");
    if (values.empty()) raise(Errc::InvalidView, "parameter '" + name + "' is empty");
    view.entries.push_back({name, total, values.size()});
    total += values.size();
  }
  view.total_len = total;

  std::vector<float> flat;
  flat.reserve(total);
  for (const auto& [name, values] : params) flat.insert(flat.end(), values.begin(), values.end());
  return {FlatTensor(std::move(flat)), std::move(view)};
}

NamedParams unflatten(const FlatTensor& flat, const BucketView& view) {
  view.validate();
  if (view.total_len != flat.size())
    raise(Errc::InvalidView, "view covers " + std::to_string(view.total_len) +
                                 " elements, tensor has " + std::to_string(flat.size()));
  NamedParams out;
  out.reserve(view.entries.size());
  for (const auto& e : view.entries) {
    out.emplace_back(e.name, std::vector<float>(flat.data() + e.offset,
                                                flat.data() + e.offset + e.length));
  }
  return out;
}

namespace {

size_t word_count(size_t len) { return (len + 63) / 64; }

}  // namespace

SparsityMask SparsityMask::all_ones(size_t len) {
  std::vector<bool> bits(len, true);
  return from_bits(bits);
}

SparsityMask SparsityMask::all_zeros(size_t len) {
  std::vector<bool> bits(len, false);
  return from_bits(bits);
}

SparsityMask SparsityMask::from_bits(const std::vector<bool>& bits) {
  SparsityMask m;
  m.len_ = bits.size();
  m.words_.assign(word_count(bits.size()), 0);
  for (size_t i = 0; i < bits.size(); ++i)
    if (bits[i]) m.words_[i >> 6] |= uint64_t{1} << (i & 63);
  m.refresh();
  return m;
}

SparsityMask SparsityMask::with_bit(size_t i, bool keep) const {
  SparsityMask m = *this;
  if (keep)
    m.words_[i >> 6] |= uint64_t{1} << (i & 63);
  else
    m.words_[i >> 6] &= ~(uint64_t{1} << (i & 63));
  m.refresh();
  return m;
}

void SparsityMask::refresh() {
  size_t n = 0;
  for (uint64_t w : words_) n += static_cast<size_t>(__builtin_popcountll(w));
  nnz_ = n;

  // Serialize words little-endian so the digest is byte-order independent.
  std::vector<unsigned char> bytes(words_.size() * 8);
  for (size_t i = 0; i < words_.size(); ++i) {
    uint64_t w = words_[i];
    for (int b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<unsigned char>((w >> (8 * b)) & 0xff);
  }
  digest_ = fnv1a64(bytes.data(), bytes.size());
}

uint64_t mask_digest(const SparsityMask& mask) { return mask.digest(); }

}  // namespace pact
