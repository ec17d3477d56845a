#include "etbert/tokens.hpp"

#include <string>

#include "etbert/errors.hpp"

namespace etbert {

std::vector<TokenId> encode_bytes(std::span<const uint8_t> bytes, BigramStride stride) {
  if (bytes.size() < 2) throw TooShort("need at least 2 bytes to form a bi-gram");
  std::vector<TokenId> out;
  if (stride == BigramStride::overlapping) {
    out.reserve(bytes.size() - 1);
    for (size_t i = 0; i + 1 < bytes.size(); i++)
      out.push_back(TokenId(bytes[i] << 8 | bytes[i + 1]) + kSpecialCount);
  } else {
    out.reserve(bytes.size() / 2);
    for (size_t i = 0; i + 1 < bytes.size(); i += 2)
      out.push_back(TokenId(bytes[i] << 8 | bytes[i + 1]) + kSpecialCount);
  }
  return out;
}

bytes_t decode_tokens(std::span<const TokenId> ids, BigramStride stride) {
  bytes_t out;
  for (size_t i = 0; i < ids.size(); i++) {
    TokenId id = ids[i];
    if (is_special(id))
      throw SpecialInPayload("special id " + std::to_string(id) + " at position " +
                             std::to_string(i));
    if (id >= kVocabSize) throw IdOutOfRange("token id " + std::to_string(id));
    uint32_t v = uint32_t(id - kSpecialCount);
    uint8_t hi = uint8_t(v >> 8), lo = uint8_t(v & 0xff);
    if (stride == BigramStride::overlapping) {
      if (i == 0) out.push_back(hi);
      else if (out.back() != hi)
        throw OverlapMismatch("token at position " + std::to_string(i) +
                              " does not overlap its predecessor");
      out.push_back(lo);
    } else {
      out.push_back(hi);
      out.push_back(lo);
    }
  }
  return out;
}

TokenSequence build_pair_sequence(std::vector<TokenId> a, std::vector<TokenId> b,
                                  int32_t max_len) {
  if (a.empty() || b.empty()) throw InternalError("pair sequence needs two non-empty segments");
  if (max_len < 8) throw InternalError("pair sequence needs max_len >= 8");
  size_t budget = size_t(max_len) - 3;  // CLS + 2 SEP
  while (a.size() + b.size() > budget) {
    if (a.size() >= b.size()) a.pop_back();
    else b.pop_back();
  }
  TokenSequence seq;
  seq.ids.assign(size_t(max_len), kPad);
  seq.segments.assign(size_t(max_len), 0);
  size_t w = 0;
  seq.ids[w++] = kCls;
  for (TokenId t : a) seq.ids[w++] = t;
  seq.ids[w++] = kSep;
  size_t seg1_start = w;
  for (TokenId t : b) seq.ids[w++] = t;
  seq.ids[w++] = kSep;
  for (size_t i = seg1_start; i < w; i++) seq.segments[i] = 1;
  seq.real_len = int32_t(w);
  return seq;
}

TokenSequence build_single_sequence(std::span<const TokenId> x, int32_t max_len) {
  if (x.empty()) throw InternalError("single sequence needs a non-empty payload");
  if (max_len < 3) throw InternalError("single sequence needs max_len >= 3");
  size_t keep = std::min(x.size(), size_t(max_len) - 2);
  TokenSequence seq;
  seq.ids.assign(size_t(max_len), kPad);
  seq.segments.assign(size_t(max_len), 0);
  size_t w = 0;
  seq.ids[w++] = kCls;
  for (size_t i = 0; i < keep; i++) seq.ids[w++] = x[i];
  seq.ids[w++] = kSep;
  seq.real_len = int32_t(w);
  return seq;
}

void validate_sequence(const TokenSequence& seq) {
  auto fail = [](const std::string& what) { throw InternalError("invalid sequence: " + what); };
  if (seq.ids.empty() || seq.ids.size() != seq.segments.size()) fail("shape");
  if (seq.real_len <= 0 || size_t(seq.real_len) > seq.ids.size()) fail("real_len");
  if (seq.ids[0] != kCls) fail("first id is not CLS");
  for (int32_t i = 0; i < seq.real_len; i++)
    if (seq.ids[size_t(i)] == kPad) fail("PAD inside the real prefix");
  for (size_t i = size_t(seq.real_len); i < seq.ids.size(); i++) {
    if (seq.ids[i] != kPad) fail("non-PAD in the padding suffix");
    if (seq.segments[i] != 0) fail("nonzero segment at PAD");
  }
  int32_t first_sep = -1;
  for (int32_t i = 0; i < seq.real_len && first_sep < 0; i++)
    if (seq.ids[size_t(i)] == kSep) first_sep = i;
  if (first_sep < 0) fail("no SEP");
  for (int32_t i = 0; i <= first_sep; i++)
    if (seq.segments[size_t(i)] != 0) fail("segment 1 before the first SEP ends");
  // after the first SEP the segment id is constant: 1 for a pair, 0 when the
  // sequence has a single segment (later SEPs may be payload markers)
  for (int32_t i = first_sep + 2; i < seq.real_len; i++)
    if (seq.segments[size_t(i)] != seq.segments[size_t(first_sep) + 1])
      fail("mixed segment ids after the first SEP");
}

}  // namespace etbert
