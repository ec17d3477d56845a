#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "etbert/common.hpp"

namespace etbert {

using TokenId = int32_t;

constexpr TokenId kPad = 0;
constexpr TokenId kCls = 1;
constexpr TokenId kSep = 2;
constexpr TokenId kMask = 3;
constexpr TokenId kSpecialCount = 4;
constexpr int32_t kVocabSize = 65540;  // 4 specials + 65536 bi-grams

inline bool is_special(TokenId id) { return id < kSpecialCount; }

enum class BigramStride {
  overlapping,  // sliding window, n bytes -> n-1 tokens (default)
  chunked,      // disjoint pairs, n bytes -> floor(n/2) tokens, odd tail byte dropped
};

std::vector<TokenId> encode_bytes(std::span<const uint8_t> bytes,
                                  BigramStride stride = BigramStride::overlapping);
bytes_t decode_tokens(std::span<const TokenId> ids,
                      BigramStride stride = BigramStride::overlapping);

struct TokenSequence {
  std::vector<TokenId> ids;       // length max_len, PAD suffix
  std::vector<uint8_t> segments;  // aligned, 0 or 1
  int32_t real_len = 0;           // count of non-PAD positions

  int32_t max_len() const { return int32_t(ids.size()); }
};

// [CLS] a [SEP] b [SEP], padded; over-long input loses tail tokens from the
// currently longer segment (a on ties) until it fits.
TokenSequence build_pair_sequence(std::vector<TokenId> a, std::vector<TokenId> b, int32_t max_len);

// [CLS] x [SEP], truncated then padded; single segment.
TokenSequence build_single_sequence(std::span<const TokenId> x, int32_t max_len);

// Structural check used by tests: CLS first, PAD only as suffix, segments 0
// through the first SEP then constant per segment, real_len consistent.
void validate_sequence(const TokenSequence& seq);  // throws InternalError

}  // namespace etbert
