// SPDX-License-Identifier: Apache-2.0
//
// Gradient payload codecs: lossless mask-packed compression, ternary
// quantization, binary16 and TopK baselines, the NMSE metric, and the
// little-endian wire format shared by every transport.

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "pact/tensor.hpp"

namespace pact {

/// Dense buffer of the surviving gradient values, bound to the mask that
/// produced it via the mask digest.
struct PackedGradient {
  uint64_t mask_digest = 0;
  uint32_t epoch = 0;
  std::vector<float> values;  // kept elements in ascending index order
};

PackedGradient pack(const FlatTensor& grad, const SparsityMask& mask, uint32_t epoch);

/// Inverse of pack. Throws MaskMismatch when the digest does not match the
/// supplied mask (the collective layer treats that as a fallback signal) and
/// CorruptPayload when the value count disagrees with the mask.
FlatTensor unpack(const PackedGradient& packed, const SparsityMask& mask);

/// Per-element sign in {-1, 0, +1} stored 2 bits each, plus one scale.
/// Decoded values are exactly {-scale, 0, +scale}.
struct TernaryGradient {
  float scale = 0.0f;
  size_t len = 0;
  std::vector<uint8_t> sign_words;  // 4 elements per byte, little-endian pairs

  int sign_at(size_t i) const;  // -1, 0, +1; throws CorruptPayload on the reserved pattern
};

/// Stochastic ternarization: scale = max |g|, element i keeps its sign with
/// probability |g_i| / scale, else 0. Unbiased: E[decode(i)] = g_i. Draws
/// come from a deterministic generator seeded by the caller.
TernaryGradient ternarize(const FlatTensor& grad, uint64_t seed);

FlatTensor deternarize(const TernaryGradient& t);

/// Round-trip through IEEE 754 binary16 (round-to-nearest-even). Values
/// beyond the binary16 range clamp to ±65504 so tensors stay finite.
FlatTensor fp16_roundtrip(const FlatTensor& grad);

uint16_t float_to_half(float v);
float half_to_float(uint16_t h);

/// Indices and values of the k = max(1, floor(rate*len)) largest-magnitude
/// elements, indices strictly increasing. Ties select the lower index.
struct TopKPayload {
  std::vector<uint32_t> indices;
  std::vector<float> values;
  size_t original_len = 0;
};

TopKPayload topk_select(const FlatTensor& grad, float rate);

/// Scatters a TopK payload back to a dense tensor (zeros elsewhere).
FlatTensor topk_densify(const TopKPayload& payload);

/// ||x - x_hat||^2 / ||x||^2. Throws UndefinedMetric when ||x|| == 0.
float nmse(const FlatTensor& x, const FlatTensor& x_hat);

// ---------------------------------------------------------------------------
// Wire format (bit-exact, little-endian):
//   magic "PACT" | version u8=1 | payload_kind u8 | epoch u32 |
//   mask_digest u64 | value_count u64 | payload bytes
// Ternary payload: scale f32 then packed 2-bit signs (00=0, 01=+1, 10=-1,
// 11 reserved). TopK payload: u32 indices then f32 values.
// ---------------------------------------------------------------------------

namespace wire {

enum class PayloadKind : uint8_t {
  Full = 0,
  Packed = 1,
  Ternary = 2,
  Fp16 = 3,
  TopK = 4,
};

inline constexpr size_t kHeaderSize = 4 + 1 + 1 + 4 + 8 + 8;  // 26 bytes
inline constexpr uint8_t kVersion = 1;

struct FrameHeader {
  PayloadKind kind = PayloadKind::Full;
  uint32_t epoch = 0;
  uint64_t mask_digest = 0;
  uint64_t value_count = 0;
};

using Bytes = std::vector<std::byte>;

Bytes encode_header(const FrameHeader& h);
FrameHeader decode_header(const Bytes& frame);  // validates magic/version/length

Bytes encode_full(const FlatTensor& grad, uint32_t epoch);
FlatTensor decode_full(const Bytes& frame);

Bytes encode_packed(const PackedGradient& packed);
PackedGradient decode_packed(const Bytes& frame);

Bytes encode_ternary(const TernaryGradient& t, uint32_t epoch, uint64_t mask_digest);
TernaryGradient decode_ternary(const Bytes& frame, uint64_t* mask_digest_out = nullptr);

Bytes encode_fp16(const FlatTensor& grad, uint32_t epoch);
FlatTensor decode_fp16(const Bytes& frame);

Bytes encode_topk(const TopKPayload& payload, uint32_t epoch);
TopKPayload decode_topk(const Bytes& frame, size_t original_len);

}  // namespace wire

}  // namespace pact
