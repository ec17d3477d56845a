#include <vector>

#include "doctest.h"
#include "etbert/errors.hpp"
#include "etbert/rng.hpp"
#include "etbert/tokens.hpp"

using namespace etbert;

TEST_CASE("special ids and vocabulary size") {
  CHECK(kPad == 0);
  CHECK(kCls == 1);
  CHECK(kSep == 2);
  CHECK(kMask == 3);
  CHECK(kSpecialCount == 4);
  CHECK(kVocabSize == 65540);
  CHECK(is_special(3));
  CHECK(!is_special(4));
}

TEST_CASE("overlapping encode worked examples") {
  CHECK(encode_bytes(bytes_t{0x00, 0x01, 0x02}) == std::vector<TokenId>{5, 262});
  CHECK(encode_bytes(bytes_t{0xff, 0xff}) == std::vector<TokenId>{65539});
  CHECK(decode_tokens(std::vector<TokenId>{5, 262}) == bytes_t{0x00, 0x01, 0x02});
  CHECK_THROWS_AS(encode_bytes(bytes_t{0x42}), TooShort);
  CHECK_THROWS_AS(encode_bytes(bytes_t{}), TooShort);
}

TEST_CASE("overlapping encode length law") {
  Rng rng(1);
  for (int t = 0; t < 100; t++) {
    size_t n = 2 + rng.uniform_u64(300);
    bytes_t b(n);
    for (auto& x : b) x = uint8_t(rng.next_u64());
    CHECK(encode_bytes(b).size() == n - 1);
  }
}

TEST_CASE("overlapping decode inverts encode") {
  Rng rng(2);
  for (int t = 0; t < 500; t++) {
    size_t n = 2 + rng.uniform_u64(128);
    bytes_t b(n);
    for (auto& x : b) x = uint8_t(rng.next_u64());
    CHECK(decode_tokens(encode_bytes(b)) == b);
  }
}

TEST_CASE("decode error cases") {
  CHECK_THROWS_AS(decode_tokens(std::vector<TokenId>{1, 5}), SpecialInPayload);
  CHECK_THROWS_AS(decode_tokens(std::vector<TokenId>{5, 1000}), OverlapMismatch);
  CHECK(decode_tokens(std::vector<TokenId>{}).empty());
}

TEST_CASE("chunked stride pairs disjoint bytes and drops an odd tail") {
  bytes_t b = {0x00, 0x01, 0x02, 0x03, 0x04};
  auto toks = encode_bytes(b, BigramStride::chunked);
  CHECK(toks.size() == 2);
  CHECK(toks[0] == 0x0001 + 4);
  CHECK(toks[1] == 0x0203 + 4);
  CHECK(decode_tokens(toks, BigramStride::chunked) == bytes_t{0x00, 0x01, 0x02, 0x03});

  Rng rng(3);
  for (int t = 0; t < 100; t++) {
    size_t n = 2 * (1 + rng.uniform_u64(100));
    bytes_t x(n);
    for (auto& v : x) v = uint8_t(rng.next_u64());
    auto enc = encode_bytes(x, BigramStride::chunked);
    CHECK(enc.size() == n / 2);
    CHECK(decode_tokens(enc, BigramStride::chunked) == x);
  }
}

TEST_CASE("pair sequence worked example") {
  TokenSequence s = build_pair_sequence({10, 11}, {12}, 8);
  CHECK(s.ids == std::vector<TokenId>{1, 10, 11, 2, 12, 2, 0, 0});
  CHECK(s.segments == std::vector<uint8_t>{0, 0, 0, 0, 1, 1, 0, 0});
  CHECK(s.real_len == 6);
  validate_sequence(s);
}

TEST_CASE("pair sequence truncates the longer side first") {
  std::vector<TokenId> a(300, 10), b(300, 11);
  TokenSequence s = build_pair_sequence(a, b, 512);
  CHECK(s.real_len == 512);
  size_t na = 0, nb = 0;
  for (TokenId id : s.ids) {
    if (id == 10) na++;
    if (id == 11) nb++;
  }
  CHECK(na == 254);
  CHECK(nb == 255);
  validate_sequence(s);
}

TEST_CASE("single sequence truncation") {
  std::vector<TokenId> x(600, 7);
  TokenSequence s = build_single_sequence(x, 128);
  CHECK(s.real_len == 128);
  CHECK(s.ids[0] == kCls);
  CHECK(s.ids[127] == kSep);
  size_t kept = 0;
  for (TokenId id : s.ids)
    if (id == 7) kept++;
  CHECK(kept == 126);
  validate_sequence(s);
}

TEST_CASE("short input pads out") {
  TokenSequence s = build_single_sequence(std::vector<TokenId>{9, 9}, 16);
  CHECK(s.real_len == 4);
  for (int i = 4; i < 16; i++) CHECK(s.ids[size_t(i)] == kPad);
  validate_sequence(s);
}

TEST_CASE("built sequences always validate") {
  Rng rng(4);
  for (int t = 0; t < 300; t++) {
    size_t la = 1 + rng.uniform_u64(40), lb = 1 + rng.uniform_u64(40);
    std::vector<TokenId> a(la), b(lb);
    for (auto& v : a) v = TokenId(4 + rng.uniform_u64(65536));
    for (auto& v : b) v = TokenId(4 + rng.uniform_u64(65536));
    int32_t max_len = int32_t(8 + rng.uniform_u64(57));
    validate_sequence(build_pair_sequence(a, b, max_len));
    validate_sequence(build_single_sequence(a, max_len));
  }
}

TEST_CASE("segments mark the two halves") {
  TokenSequence s = build_pair_sequence({20, 21, 22}, {30, 31}, 16);
  // CLS + a + SEP carry segment 0, b + its SEP carry segment 1
  CHECK(s.segments[0] == 0);
  CHECK(s.segments[4] == 0);   // SEP after a
  CHECK(s.segments[5] == 1);   // first token of b
  CHECK(s.segments[7] == 1);   // SEP after b
}
