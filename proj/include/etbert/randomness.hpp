#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "etbert/common.hpp"

namespace etbert {

struct BitSequence {
  std::vector<uint8_t> bits;  // values 0/1
  size_t n() const { return bits.size(); }
};

BitSequence bits_from_bytes(std::span<const uint8_t> bytes);  // MSB first; EmptyInput

struct TestResult {
  std::string name;
  double statistic = 0.0;
  double p_value = 0.0;
  std::optional<double> p_value2;  // serial emits two
  size_t n_used = 0;
  bool prerequisite_failed = false;
  bool warning = false;
};

TestResult monobit(const BitSequence& seq);                       // warns below n=100
TestResult block_frequency(const BitSequence& seq, size_t m = 128);  // BlockTooLong
TestResult runs(const BitSequence& seq);
TestResult longest_run(const BitSequence& seq);                   // SequenceTooShort below 128
TestResult cumulative_sums(const BitSequence& seq, bool backward = false);
TestResult approximate_entropy(const BitSequence& seq, int m = 2);
TestResult serial(const BitSequence& seq, int m = 2);

// The full battery in report order (cumulative sums in both directions).
std::vector<TestResult> run_all(const BitSequence& seq);

}  // namespace etbert
