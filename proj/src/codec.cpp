// SPDX-License-Identifier: Apache-2.0

#include "pact/codec.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "pact/rng.hpp"

namespace pact {

PackedGradient pack(const FlatTensor& grad, const SparsityMask& mask, uint32_t epoch) {
  if (grad.size() != mask.size())
    raise(Errc::ShapeMismatch, "gradient length " + std::to_string(grad.size()) +
                                   " != mask length " + std::to_string(mask.size()));
  PackedGradient p;
  p.mask_digest = mask.digest();
  p.epoch = epoch;
  p.values.reserve(mask.nnz());
  for (size_t i = 0; i < grad.size(); ++i)
    if (mask.test(i)) p.values.push_back(grad[i]);
  return p;
}

FlatTensor unpack(const PackedGradient& packed, const SparsityMask& mask) {
  if (packed.mask_digest != mask.digest())
    raise(Errc::MaskMismatch, "payload digest does not match local mask");
  if (packed.values.size() != mask.nnz())
    raise(Errc::CorruptPayload, "payload holds " + std::to_string(packed.values.size()) +
                                    " values, mask keeps " + std::to_string(mask.nnz()));
  std::vector<float> out(mask.size(), 0.0f);
  size_t j = 0;
  for (size_t i = 0; i < mask.size(); ++i)
    if (mask.test(i)) out[i] = packed.values[j++];
  return FlatTensor(std::move(out));
}

int TernaryGradient::sign_at(size_t i) const {
  const uint8_t pair = (sign_words[i >> 2] >> (2 * (i & 3))) & 0x3;
  switch (pair) {
    case 0: return 0;
    case 1: return +1;
    case 2: return -1;
    default: raise(Errc::CorruptPayload, "reserved ternary sign pattern 11");
  }
}

TernaryGradient ternarize(const FlatTensor& grad, uint64_t seed) {
  TernaryGradient t;
  t.len = grad.size();
  t.sign_words.assign((grad.size() + 3) / 4, 0);

  float s = 0.0f;
  for (size_t i = 0; i < grad.size(); ++i) s = std::max(s, std::fabs(grad[i]));
  t.scale = s;
  if (s == 0.0f) return t;  // all signs stay 0

  Rng rng(seed);
  for (size_t i = 0; i < grad.size(); ++i) {
    const double keep_p = std::fabs(grad[i]) / static_cast<double>(s);
    if (rng.uniform() < keep_p) {
      const uint8_t pair = grad[i] > 0.0f ? 0x1 : 0x2;
      t.sign_words[i >> 2] |= static_cast<uint8_t>(pair << (2 * (i & 3)));
    }
  }
  return t;
}

FlatTensor deternarize(const TernaryGradient& t) {
  std::vector<float> out(t.len);
  for (size_t i = 0; i < t.len; ++i) out[i] = t.scale * static_cast<float>(t.sign_at(i));
  return FlatTensor(std::move(out));
}

// Scalar binary16 conversion with round-to-nearest-even. Hand-rolled so the
// clamping behaviour and rounding mode are pinned, not compiler-dependent.
uint16_t float_to_half(float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  const uint16_t sign = static_cast<uint16_t>((bits >> 16) & 0x8000u);
  const int32_t exp = static_cast<int32_t>((bits >> 23) & 0xff) - 127;
  uint32_t mant = bits & 0x7fffffu;

  if (exp == 128) {  // NaN propagates, Inf clamps like overflow
    if (mant != 0) return static_cast<uint16_t>(sign | 0x7e00u);
    return static_cast<uint16_t>(sign | 0x7bffu);
  }
  if (exp > 15) return static_cast<uint16_t>(sign | 0x7bffu);  // clamp to ±65504
  if (exp >= -14) {
    // normal half: 10-bit mantissa, round to nearest even on the cut bits
    uint32_t m = mant >> 13;
    const uint32_t rest = mant & 0x1fffu;
    if (rest > 0x1000u || (rest == 0x1000u && (m & 1u))) ++m;
    uint32_t h = (static_cast<uint32_t>(exp + 15) << 10) + m;  // mantissa carry bumps exponent
    if (h >= 0x7c00u) return static_cast<uint16_t>(sign | 0x7bffu);
    return static_cast<uint16_t>(sign | h);
  }
  if (exp >= -25) {
    // subnormal half: shift the implicit leading 1 into the mantissa
    mant |= 0x800000u;
    const int shift = -exp - 14 + 13;  // 14..24
    uint32_t m = mant >> shift;
    const uint32_t cut = mant & ((1u << shift) - 1u);
    const uint32_t half_ulp = 1u << (shift - 1);
    if (cut > half_ulp || (cut == half_ulp && (m & 1u))) ++m;
    return static_cast<uint16_t>(sign | m);
  }
  return sign;  // underflows to signed zero
}

float half_to_float(uint16_t h) {
  const uint32_t sign = static_cast<uint32_t>(h & 0x8000u) << 16;
  const uint32_t exp = (h >> 10) & 0x1f;
  const uint32_t mant = h & 0x3ffu;
  uint32_t bits;
  if (exp == 0) {
    if (mant == 0) {
      bits = sign;
    } else {
      // renormalize subnormal
      int e = 1;
      uint32_t m = mant;
      while ((m & 0x400u) == 0) {
        m <<= 1;
        --e;
      }
      bits = sign | (static_cast<uint32_t>(e + 112) << 23) | ((m & 0x3ffu) << 13);
    }
  } else if (exp == 31) {
    bits = sign | 0x7f800000u | (mant << 13);
  } else {
    bits = sign | ((exp + 112) << 23) | (mant << 13);
  }
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

FlatTensor fp16_roundtrip(const FlatTensor& grad) {
  std::vector<float> out(grad.size());
  for (size_t i = 0; i < grad.size(); ++i) out[i] = half_to_float(float_to_half(grad[i]));
  return FlatTensor(std::move(out));
}

TopKPayload topk_select(const FlatTensor& grad, float rate) {
  if (!(rate > 0.0f && rate <= 1.0f))
    raise(Errc::InvalidRate, "rate " + std::to_string(rate) + " outside (0, 1]");
  const size_t len = grad.size();
  // the epsilon absorbs float representation error in rates like 0.01,
  // whose nearest float sits just below the rational value
  const size_t k = std::max<size_t>(
      1, static_cast<size_t>(std::floor(static_cast<double>(rate) * static_cast<double>(len) +
                                        static_cast<double>(len) * 1e-7)));

  std::vector<uint32_t> order(len);
  std::iota(order.begin(), order.end(), 0u);
  // stable sort on descending magnitude keeps the lower index first on ties
  std::stable_sort(order.begin(), order.end(), [&](uint32_t a, uint32_t b) {
    return std::fabs(grad[a]) > std::fabs(grad[b]);
  });
  order.resize(std::min(k, len));
  std::sort(order.begin(), order.end());

  TopKPayload p;
  p.original_len = len;
  p.indices = std::move(order);
  p.values.reserve(p.indices.size());
  for (uint32_t i : p.indices) p.values.push_back(grad[i]);
  return p;
}

FlatTensor topk_densify(const TopKPayload& payload) {
  std::vector<float> out(payload.original_len, 0.0f);
  for (size_t j = 0; j < payload.indices.size(); ++j) {
    if (payload.indices[j] >= payload.original_len)
      raise(Errc::CorruptPayload, "topk index out of range");
    out[payload.indices[j]] = payload.values[j];
  }
  return FlatTensor(std::move(out));
}

float nmse(const FlatTensor& x, const FlatTensor& x_hat) {
  if (x.size() != x_hat.size()) raise(Errc::ShapeMismatch, "nmse operands differ in length");
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - x_hat[i];
    num += d * d;
    den += static_cast<double>(x[i]) * x[i];
  }
  if (den == 0.0) raise(Errc::UndefinedMetric, "reference norm is zero");
  return static_cast<float>(num / den);
}

// ---------------------------------------------------------------------------
// Wire encoding
// ---------------------------------------------------------------------------

namespace wire {

namespace {

constexpr char kMagic[4] = {'P', 'A', 'C', 'T'};

void put_u32(Bytes& b, uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xff));
}

void put_u64(Bytes& b, uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xff));
}

void put_f32(Bytes& b, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(b, bits);
}

uint32_t get_u32(const Bytes& b, size_t off) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(std::to_integer<uint8_t>(b[off + i])) << (8 * i);
  return v;
}

uint64_t get_u64(const Bytes& b, size_t off) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(std::to_integer<uint8_t>(b[off + i])) << (8 * i);
  return v;
}

float get_f32(const Bytes& b, size_t off) {
  const uint32_t bits = get_u32(b, off);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

void need(const Bytes& b, size_t n) {
  if (b.size() < n) raise(Errc::CorruptPayload, "frame truncated");
}

Bytes header_bytes(PayloadKind kind, uint32_t epoch, uint64_t digest, uint64_t count) {
  Bytes b;
  b.reserve(kHeaderSize);
  for (char c : kMagic) b.push_back(static_cast<std::byte>(c));
  b.push_back(static_cast<std::byte>(kVersion));
  b.push_back(static_cast<std::byte>(kind));
  put_u32(b, epoch);
  put_u64(b, digest);
  put_u64(b, count);
  return b;
}

}  // namespace

Bytes encode_header(const FrameHeader& h) {
  return header_bytes(h.kind, h.epoch, h.mask_digest, h.value_count);
}

FrameHeader decode_header(const Bytes& frame) {
  need(frame, kHeaderSize);
  for (int i = 0; i < 4; ++i)
    if (std::to_integer<char>(frame[i]) != kMagic[i]) raise(Errc::CorruptPayload, "bad magic");
  if (std::to_integer<uint8_t>(frame[4]) != kVersion)
    raise(Errc::CorruptPayload, "unsupported version");
  const uint8_t kind = std::to_integer<uint8_t>(frame[5]);
  if (kind > 4) raise(Errc::CorruptPayload, "unknown payload kind");
  FrameHeader h;
  h.kind = static_cast<PayloadKind>(kind);
  h.epoch = get_u32(frame, 6);
  h.mask_digest = get_u64(frame, 10);
  h.value_count = get_u64(frame, 18);
  return h;
}

Bytes encode_full(const FlatTensor& grad, uint32_t epoch) {
  Bytes b = header_bytes(PayloadKind::Full, epoch, 0, grad.size());
  b.reserve(b.size() + grad.size() * 4);
  for (size_t i = 0; i < grad.size(); ++i) put_f32(b, grad[i]);
  return b;
}

FlatTensor decode_full(const Bytes& frame) {
  const FrameHeader h = decode_header(frame);
  if (h.kind != PayloadKind::Full) raise(Errc::CorruptPayload, "not a full frame");
  need(frame, kHeaderSize + h.value_count * 4);
  std::vector<float> out(h.value_count);
  for (size_t i = 0; i < out.size(); ++i) out[i] = get_f32(frame, kHeaderSize + 4 * i);
  return FlatTensor(std::move(out));
}

Bytes encode_packed(const PackedGradient& packed) {
  Bytes b = header_bytes(PayloadKind::Packed, packed.epoch, packed.mask_digest,
                         packed.values.size());
  b.reserve(b.size() + packed.values.size() * 4);
  for (float v : packed.values) put_f32(b, v);
  return b;
}

PackedGradient decode_packed(const Bytes& frame) {
  const FrameHeader h = decode_header(frame);
  if (h.kind != PayloadKind::Packed) raise(Errc::CorruptPayload, "not a packed frame");
  need(frame, kHeaderSize + h.value_count * 4);
  PackedGradient p;
  p.mask_digest = h.mask_digest;
  p.epoch = h.epoch;
  p.values.resize(h.value_count);
  for (size_t i = 0; i < p.values.size(); ++i) p.values[i] = get_f32(frame, kHeaderSize + 4 * i);
  return p;
}

Bytes encode_ternary(const TernaryGradient& t, uint32_t epoch, uint64_t mask_digest) {
  Bytes b = header_bytes(PayloadKind::Ternary, epoch, mask_digest, t.len);
  put_f32(b, t.scale);
  for (uint8_t w : t.sign_words) b.push_back(static_cast<std::byte>(w));
  return b;
}

TernaryGradient decode_ternary(const Bytes& frame, uint64_t* mask_digest_out) {
  const FrameHeader h = decode_header(frame);
  if (h.kind != PayloadKind::Ternary) raise(Errc::CorruptPayload, "not a ternary frame");
  const size_t words = (h.value_count + 3) / 4;
  need(frame, kHeaderSize + 4 + words);
  TernaryGradient t;
  t.len = h.value_count;
  t.scale = get_f32(frame, kHeaderSize);
  if (!(t.scale >= 0.0f) || !std::isfinite(t.scale))
    raise(Errc::CorruptPayload, "negative or non-finite ternary scale");
  t.sign_words.resize(words);
  for (size_t i = 0; i < words; ++i)
    t.sign_words[i] = std::to_integer<uint8_t>(frame[kHeaderSize + 4 + i]);
  // reject the reserved pattern and any set bits past len up front
  for (size_t i = 0; i < t.len; ++i) (void)t.sign_at(i);
  for (size_t i = t.len; i < words * 4; ++i)
    if ((t.sign_words[i >> 2] >> (2 * (i & 3))) & 0x3)
      raise(Errc::CorruptPayload, "sign bits past payload length");
  if (t.scale == 0.0f)
    for (size_t i = 0; i < t.len; ++i)
      if (t.sign_at(i) != 0) raise(Errc::CorruptPayload, "zero scale with non-zero signs");
  if (mask_digest_out) *mask_digest_out = h.mask_digest;
  return t;
}

Bytes encode_fp16(const FlatTensor& grad, uint32_t epoch) {
  Bytes b = header_bytes(PayloadKind::Fp16, epoch, 0, grad.size());
  for (size_t i = 0; i < grad.size(); ++i) {
    const uint16_t h = float_to_half(grad[i]);
    b.push_back(static_cast<std::byte>(h & 0xff));
    b.push_back(static_cast<std::byte>((h >> 8) & 0xff));
  }
  return b;
}

FlatTensor decode_fp16(const Bytes& frame) {
  const FrameHeader h = decode_header(frame);
  if (h.kind != PayloadKind::Fp16) raise(Errc::CorruptPayload, "not an fp16 frame");
  need(frame, kHeaderSize + h.value_count * 2);
  std::vector<float> out(h.value_count);
  for (size_t i = 0; i < out.size(); ++i) {
    const uint16_t lo = std::to_integer<uint8_t>(frame[kHeaderSize + 2 * i]);
    const uint16_t hi = std::to_integer<uint8_t>(frame[kHeaderSize + 2 * i + 1]);
    out[i] = half_to_float(static_cast<uint16_t>(lo | (hi << 8)));
  }
  return FlatTensor(std::move(out));
}

Bytes encode_topk(const TopKPayload& payload, uint32_t epoch) {
  Bytes b = header_bytes(PayloadKind::TopK, epoch, 0, payload.indices.size());
  for (uint32_t i : payload.indices) put_u32(b, i);
  for (float v : payload.values) put_f32(b, v);
  return b;
}

TopKPayload decode_topk(const Bytes& frame, size_t original_len) {
  const FrameHeader h = decode_header(frame);
  if (h.kind != PayloadKind::TopK) raise(Errc::CorruptPayload, "not a topk frame");
  need(frame, kHeaderSize + h.value_count * 8);
  TopKPayload p;
  p.original_len = original_len;
  p.indices.resize(h.value_count);
  p.values.resize(h.value_count);
  for (size_t i = 0; i < p.indices.size(); ++i) p.indices[i] = get_u32(frame, kHeaderSize + 4 * i);
  const size_t voff = kHeaderSize + 4 * p.indices.size();
  for (size_t i = 0; i < p.values.size(); ++i) p.values[i] = get_f32(frame, voff + 4 * i);
  for (size_t i = 0; i < p.indices.size(); ++i) {
    if (p.indices[i] >= original_len) raise(Errc::CorruptPayload, "topk index out of range");
    if (i > 0 && p.indices[i] <= p.indices[i - 1])
      raise(Errc::CorruptPayload, "topk indices not strictly increasing");
  }
  return p;
}

}  // namespace wire

}  // namespace pact
