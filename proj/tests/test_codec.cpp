// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pact/codec.hpp"
#include "pact/rng.hpp"
#include "pact/sparsity.hpp"

using namespace pact;

namespace {

FlatTensor random_tensor(Rng& rng, size_t len) {
  std::vector<float> v(len);
  for (float& x : v) x = static_cast<float>(rng.gaussian());
  return FlatTensor(std::move(v));
}

SparsityMask random_mask(Rng& rng, size_t len, double keep_p = 0.5) {
  std::vector<bool> bits(len);
  for (size_t i = 0; i < len; ++i) bits[i] = rng.uniform() < keep_p;
  return SparsityMask::from_bits(bits);
}

}  // namespace

TEST_CASE("pack keeps surviving values in ascending index order") {
  FlatTensor g({0.0f, -0.3f, 0.0f});
  SparsityMask m = SparsityMask::from_bits({false, true, false});
  PackedGradient p = pack(g, m, 9);
  CHECK(p.values == std::vector<float>{-0.3f});
  CHECK(p.epoch == 9);
  CHECK(p.mask_digest == m.digest());
}

TEST_CASE("pack with an all-ones mask is the identity") {
  FlatTensor g({1.0f, 2.0f, 3.0f});
  PackedGradient p = pack(g, SparsityMask::all_ones(3), 0);
  CHECK(p.values == g.values());
}

TEST_CASE("pack enforces masking rather than assuming it") {
  // off-mask values are non-zero on purpose; unpack must still equal the
  // GSE-masked input
  FlatTensor g({5.0f, -0.3f, 7.0f});
  SparsityMask m = SparsityMask::from_bits({false, true, false});
  CHECK(unpack(pack(g, m, 0), m) == enforce_gradient_sparsity(g, m));
}

TEST_CASE("unpack rejects digest mismatches without partial output") {
  FlatTensor g({1.0f, 2.0f});
  SparsityMask m = SparsityMask::all_ones(2);
  PackedGradient p = pack(g, m, 0);
  p.mask_digest ^= 1;
  try {
    unpack(p, m);
    FAIL("expected MaskMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::MaskMismatch);
  }
}

TEST_CASE("unpack rejects value-count mismatches as corrupt") {
  SparsityMask m = SparsityMask::all_ones(3);
  PackedGradient p{m.digest(), 0, {1.0f, 2.0f}};  // one value short
  try {
    unpack(p, m);
    FAIL("expected CorruptPayload");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::CorruptPayload);
  }
}

TEST_CASE("unpack of an empty payload over an all-zero mask is the zero tensor") {
  SparsityMask m = SparsityMask::all_zeros(4);
  PackedGradient p{m.digest(), 0, {}};
  FlatTensor out = unpack(p, m);
  for (size_t i = 0; i < 4; ++i) CHECK(out[i] == 0.0f);
}

TEST_CASE("pack/unpack roundtrip is bit-exact over random pairs") {
  Rng rng(11);
  for (int trial = 0; trial < 2000; ++trial) {
    const size_t len = 1 + rng.index(256);
    FlatTensor g = random_tensor(rng, len);
    SparsityMask m = random_mask(rng, len, rng.uniform());
    CHECK(unpack(pack(g, m, static_cast<uint32_t>(trial)), m) ==
          enforce_gradient_sparsity(g, m));
  }
}

TEST_CASE("ternarize: saturated magnitudes quantize deterministically") {
  TernaryGradient t = ternarize(FlatTensor({1.0f, -1.0f}), 123);
  CHECK(t.scale == 1.0f);
  CHECK(t.sign_at(0) == 1);
  CHECK(t.sign_at(1) == -1);
}

TEST_CASE("ternarize of the zero tensor has zero scale and zero signs") {
  TernaryGradient t = ternarize(FlatTensor::zeros(9), 5);
  CHECK(t.scale == 0.0f);
  for (size_t i = 0; i < 9; ++i) CHECK(t.sign_at(i) == 0);
}

TEST_CASE("ternarize is unbiased: 200k seeded draws within 3 standard errors") {
  const FlatTensor g(std::vector<float>{0.5f, -0.25f, 1.0f});
  const int draws = 200000;
  std::vector<double> acc(3, 0.0);
  for (int d = 0; d < draws; ++d) {
    const TernaryGradient t = ternarize(g, derive_seed(2024, static_cast<uint64_t>(d)));
    for (size_t i = 0; i < 3; ++i) acc[i] += t.scale * t.sign_at(i);
  }
  const float s = 1.0f;  // max |g|
  for (size_t i = 0; i < 3; ++i) {
    const double mean = acc[i] / draws;
    // var = s|g| - g^2 for a single draw
    const double var = static_cast<double>(s) * std::fabs(g[i]) - static_cast<double>(g[i]) * g[i];
    const double se = std::sqrt(std::max(var, 0.0) / draws);
    CHECK(std::fabs(mean - g[i]) <= 3.0 * se + 1e-12);
  }
}

TEST_CASE("deternarize emits only {-s, 0, +s}") {
  Rng rng(13);
  FlatTensor g = random_tensor(rng, 97);
  TernaryGradient t = ternarize(g, 31337);
  FlatTensor dec = deternarize(t);
  for (size_t i = 0; i < dec.size(); ++i) {
    const bool ok = dec[i] == t.scale || dec[i] == -t.scale || dec[i] == 0.0f;
    CHECK(ok);
  }
}

TEST_CASE("reserved ternary sign pattern is a decode error") {
  TernaryGradient t;
  t.scale = 1.0f;
  t.len = 1;
  t.sign_words = {0x3};  // 11 = reserved
  try {
    t.sign_at(0);
    FAIL("expected CorruptPayload");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::CorruptPayload);
  }
}

TEST_CASE("binary16 conversion goldens from a reference converter") {
  CHECK(float_to_half(1.0f) == 0x3c00);
  CHECK(half_to_float(0x3c00) == 1.0f);
  // 1 + 2^-12 sits below the midpoint and rounds down to 1.0
  CHECK(fp16_roundtrip(FlatTensor({1.0f + 0x1.0p-12f}))[0] == 1.0f);
  // overflow clamps to the largest finite half
  CHECK(fp16_roundtrip(FlatTensor({70000.0f}))[0] == 65504.0f);
  CHECK(fp16_roundtrip(FlatTensor({-70000.0f}))[0] == -65504.0f);
  CHECK(float_to_half(65504.0f) == 0x7bff);
  // frozen pairs from an independent binary16 implementation
  CHECK(float_to_half(0.1f) == 0x2e66);
  CHECK(half_to_float(0x2e66) == 0.0999755859375f);
  CHECK(float_to_half(3.14159265f) == 0x4248);
  CHECK(half_to_float(0x4248) == 3.140625f);
  CHECK(float_to_half(-0.333251953125f) == 0xb555);
  // subnormal edge: 2^-25 is the round-to-even tie into zero, 2^-24 survives
  CHECK(float_to_half(0x1.0p-25f) == 0x0000);
  CHECK(float_to_half(0x1.0p-24f) == 0x0001);
  CHECK(half_to_float(0x0001) == doctest::Approx(5.960464477539063e-08).epsilon(1e-12));
}

TEST_CASE("binary16 roundtrip is idempotent") {
  Rng rng(41);
  FlatTensor g = random_tensor(rng, 512);
  FlatTensor once = fp16_roundtrip(g);
  FlatTensor twice = fp16_roundtrip(once);
  CHECK(once == twice);
}

TEST_CASE("topk selects the largest magnitudes with increasing indices") {
  TopKPayload p = topk_select(FlatTensor({0.1f, -0.9f, 0.5f, 0.2f}), 0.5f);
  CHECK(p.indices == std::vector<uint32_t>{1, 2});
  CHECK(p.values == std::vector<float>{-0.9f, 0.5f});
}

TEST_CASE("topk at rate 1.0 selects everything") {
  FlatTensor g({3.0f, 1.0f, 2.0f});
  TopKPayload p = topk_select(g, 1.0f);
  CHECK(p.indices == std::vector<uint32_t>{0, 1, 2});
  CHECK(topk_densify(p) == g);
}

TEST_CASE("topk rejects rates outside (0,1]") {
  CHECK_THROWS_AS(topk_select(FlatTensor({1.0f}), 0.0f), Error);
  CHECK_THROWS_AS(topk_select(FlatTensor({1.0f}), 1.5f), Error);
}

TEST_CASE("topk matches a brute-force sort oracle, ties included") {
  Rng rng(53);
  for (int trial = 0; trial < 300; ++trial) {
    const size_t len = 1 + rng.index(64);
    std::vector<float> v(len);
    // coarse quantization forces plenty of magnitude ties
    for (float& x : v) x = static_cast<float>(std::floor(rng.gaussian() * 2.0) / 2.0);
    const float rate = 0.01f + static_cast<float>(rng.uniform()) * 0.99f;
    TopKPayload p = topk_select(FlatTensor(v), rate);

    const size_t k = std::max<size_t>(
        1, static_cast<size_t>(std::floor(static_cast<double>(rate) * static_cast<double>(len))));
    std::vector<size_t> order(len);
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      if (std::fabs(v[a]) != std::fabs(v[b])) return std::fabs(v[a]) > std::fabs(v[b]);
      return a < b;
    });
    std::vector<uint32_t> expect;
    for (size_t i = 0; i < k; ++i) expect.push_back(static_cast<uint32_t>(order[i]));
    std::sort(expect.begin(), expect.end());

    CHECK(p.indices == expect);
    for (size_t i = 1; i < p.indices.size(); ++i) CHECK(p.indices[i] > p.indices[i - 1]);
  }
}

TEST_CASE("topk at rate 0.01 on 1000 elements picks k=10") {
  Rng rng(61);
  FlatTensor g = random_tensor(rng, 1000);
  CHECK(topk_select(g, 0.01f).indices.size() == 10);
}

TEST_CASE("nmse basics") {
  CHECK(nmse(FlatTensor({1.0f, 0.0f}), FlatTensor({0.0f, 0.0f})) == 1.0f);
  CHECK(nmse(FlatTensor({2.0f, -3.0f}), FlatTensor({2.0f, -3.0f})) == 0.0f);
  CHECK(nmse(FlatTensor({1.0f, 1.0f}), FlatTensor({1.0f, 0.0f})) == 0.5f);
  try {
    nmse(FlatTensor::zeros(3), FlatTensor({1.0f, 2.0f, 3.0f}));
    FAIL("expected UndefinedMetric");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::UndefinedMetric);
  }
}

// ---------------------------------------------------------------------------
// Wire format
// ---------------------------------------------------------------------------

TEST_CASE("frame header layout is bit-exact") {
  wire::FrameHeader h{wire::PayloadKind::Packed, 0x01020304u, 0x1122334455667788ULL, 5};
  wire::Bytes b = wire::encode_header(h);
  REQUIRE(b.size() == wire::kHeaderSize);
  CHECK(std::to_integer<char>(b[0]) == 'P');
  CHECK(std::to_integer<char>(b[1]) == 'A');
  CHECK(std::to_integer<char>(b[2]) == 'C');
  CHECK(std::to_integer<char>(b[3]) == 'T');
  CHECK(std::to_integer<uint8_t>(b[4]) == 1);  // version
  CHECK(std::to_integer<uint8_t>(b[5]) == 1);  // kind = packed
  // epoch, little-endian
  CHECK(std::to_integer<uint8_t>(b[6]) == 0x04);
  CHECK(std::to_integer<uint8_t>(b[7]) == 0x03);
  CHECK(std::to_integer<uint8_t>(b[8]) == 0x02);
  CHECK(std::to_integer<uint8_t>(b[9]) == 0x01);
  // digest, little-endian
  CHECK(std::to_integer<uint8_t>(b[10]) == 0x88);
  CHECK(std::to_integer<uint8_t>(b[17]) == 0x11);
  // value count
  CHECK(std::to_integer<uint8_t>(b[18]) == 5);
  for (int i = 19; i < 26; ++i) CHECK(std::to_integer<uint8_t>(b[i]) == 0);

  wire::FrameHeader back = wire::decode_header(b);
  CHECK(back.kind == h.kind);
  CHECK(back.epoch == h.epoch);
  CHECK(back.mask_digest == h.mask_digest);
  CHECK(back.value_count == h.value_count);
}

TEST_CASE("packed frame payload size is 4*nnz + header") {
  Rng rng(71);
  FlatTensor g = random_tensor(rng, 200);
  SparsityMask m = random_mask(rng, 200, 0.4);
  PackedGradient p = pack(g, m, 2);
  wire::Bytes b = wire::encode_packed(p);
  CHECK(b.size() == wire::kHeaderSize + 4 * m.nnz());
  PackedGradient back = wire::decode_packed(b);
  CHECK(back.values == p.values);
  CHECK(back.mask_digest == p.mask_digest);
  CHECK(back.epoch == p.epoch);
}

TEST_CASE("wire roundtrips for every payload kind") {
  Rng rng(81);
  const FlatTensor g = random_tensor(rng, 55);

  CHECK(wire::decode_full(wire::encode_full(g, 7)) == g);
  CHECK(wire::decode_fp16(wire::encode_fp16(g, 7)) == fp16_roundtrip(g));

  const TernaryGradient t = ternarize(g, 999);
  uint64_t digest = 0;
  const TernaryGradient tb = wire::decode_ternary(wire::encode_ternary(t, 7, 0xabcd), &digest);
  CHECK(digest == 0xabcd);
  CHECK(tb.scale == t.scale);
  CHECK(tb.len == t.len);
  CHECK(tb.sign_words == t.sign_words);

  const TopKPayload p = topk_select(g, 0.2f);
  const TopKPayload pb = wire::decode_topk(wire::encode_topk(p, 7), g.size());
  CHECK(pb.indices == p.indices);
  CHECK(pb.values == p.values);
}

TEST_CASE("ternary frame size: scale plus 2 bits per element") {
  FlatTensor g = FlatTensor::zeros(100);
  TernaryGradient t = ternarize(g, 1);
  wire::Bytes b = wire::encode_ternary(t, 0, 0);
  CHECK(b.size() == wire::kHeaderSize + 4 + 25);  // ceil(100/4) sign bytes
}

TEST_CASE("decoder rejects bad magic, bad version, truncation, reserved signs") {
  Rng rng(91);
  FlatTensor g = random_tensor(rng, 16);
  wire::Bytes b = wire::encode_full(g, 1);

  wire::Bytes bad_magic = b;
  bad_magic[0] = static_cast<std::byte>('X');
  CHECK_THROWS_AS(wire::decode_header(bad_magic), Error);

  wire::Bytes bad_version = b;
  bad_version[4] = static_cast<std::byte>(9);
  CHECK_THROWS_AS(wire::decode_header(bad_version), Error);

  wire::Bytes truncated(b.begin(), b.begin() + 30);
  CHECK_THROWS_AS(wire::decode_full(truncated), Error);

  TernaryGradient t = ternarize(random_tensor(rng, 8), 3);
  wire::Bytes tb = wire::encode_ternary(t, 0, 0);
  tb[wire::kHeaderSize + 4] = static_cast<std::byte>(0xff);  // reserved 11 patterns
  CHECK_THROWS_AS(wire::decode_ternary(tb), Error);
}

TEST_CASE("topk decoder validates indices") {
  TopKPayload p;
  p.original_len = 10;
  p.indices = {3, 3};  // not strictly increasing
  p.values = {1.0f, 2.0f};
  wire::Bytes b = wire::encode_topk(p, 0);
  CHECK_THROWS_AS(wire::decode_topk(b, 10), Error);

  TopKPayload q;
  q.original_len = 10;
  q.indices = {12};  // out of range
  q.values = {1.0f};
  CHECK_THROWS_AS(wire::decode_topk(wire::encode_topk(q, 0), 10), Error);
}
