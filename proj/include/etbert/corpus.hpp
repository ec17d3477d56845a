#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "etbert/flow.hpp"
#include "etbert/rng.hpp"
#include "etbert/tokens.hpp"

namespace etbert {

struct PretrainRecord {
  std::vector<TokenId> tokens_a, tokens_b;  // payload ids only, no specials
  int sbp_label = 0;                        // 0 = same origin, 1 = unpaired
  std::string origin;
  bool operator==(const PretrainRecord&) const = default;
};

struct MaskedExample {
  TokenSequence input;
  std::vector<int32_t> mask_positions;  // sorted
  std::vector<TokenId> mask_targets;    // originals at those positions
  int sbp_label = 0;
};

struct EligibleBurst {
  std::string origin;
  bytes_t bytes;  // length >= 4
};

// Bursts whose concatenated datagram can be split into two tokenizable halves.
std::vector<EligibleBurst> collect_eligible_bursts(const std::vector<Flow>& flows,
                                                   uint64_t* dropped_short = nullptr);

// One record per burst: with p=0.5 its own second half (label 0), otherwise
// the second half of a uniformly drawn different burst (label 1).
std::vector<PretrainRecord> make_pairs(const std::vector<EligibleBurst>& bursts, Rng& rng);

// Ablation variant: units are adjacent packet pairs within a flow instead of
// split bursts; the negative pool is every eligible packet datagram.
std::vector<PretrainRecord> make_adjacent_pairs(const std::vector<Flow>& flows, Rng& rng);

// Bernoulli 15% selection over non-special positions; selected tokens become
// MASK (80%), a random bi-gram id (10%), or stay (10%). Guarantees >= 1
// selection by forcing one uniform position when the draw selects none.
MaskedExample apply_mask(const TokenSequence& seq, Rng& rng);

constexpr double kMaskSelectP = 0.15;
constexpr double kMaskReplaceP = 0.8;
constexpr double kMaskRandomP = 0.1;

void write_corpus(const std::vector<PretrainRecord>& records, const std::string& path);
std::vector<PretrainRecord> read_corpus(const std::string& path);  // MalformedRecord(line)

}  // namespace etbert
