#include "etbert/randomness.hpp"

#include <cmath>

#include "etbert/errors.hpp"
#include "etbert/specfun.hpp"

namespace etbert {

BitSequence bits_from_bytes(std::span<const uint8_t> bytes) {
  if (bytes.empty()) throw EmptyInput("no bytes to expand into bits");
  BitSequence seq;
  seq.bits.reserve(bytes.size() * 8);
  for (uint8_t b : bytes)
    for (int i = 7; i >= 0; i--) seq.bits.push_back(uint8_t(b >> i & 1));
  return seq;
}

TestResult monobit(const BitSequence& seq) {
  size_t n = seq.n();
  int64_t s = 0;
  for (uint8_t b : seq.bits) s += b ? 1 : -1;
  double s_obs = std::fabs(double(s)) / std::sqrt(double(n));
  TestResult r;
  r.name = "monobit";
  r.statistic = s_obs;
  r.p_value = erfc_q(s_obs / std::sqrt(2.0));
  r.n_used = n;
  r.warning = n < 100;
  return r;
}

TestResult block_frequency(const BitSequence& seq, size_t m) {
  size_t n = seq.n();
  if (m == 0 || m > n)
    throw BlockTooLong("block length " + std::to_string(m) + " exceeds sequence length " +
                       std::to_string(n));
  size_t blocks = n / m;
  double chi2 = 0.0;
  for (size_t b = 0; b < blocks; b++) {
    size_t ones = 0;
    for (size_t i = 0; i < m; i++) ones += seq.bits[b * m + i];
    double pi = double(ones) / double(m) - 0.5;
    chi2 += pi * pi;
  }
  chi2 *= 4.0 * double(m);
  TestResult r;
  r.name = "block_frequency";
  r.statistic = chi2;
  r.p_value = igamc(double(blocks) / 2.0, chi2 / 2.0);
  r.n_used = blocks * m;
  return r;
}

TestResult runs(const BitSequence& seq) {
  size_t n = seq.n();
  size_t ones = 0;
  for (uint8_t b : seq.bits) ones += b;
  double pi = double(ones) / double(n);
  TestResult r;
  r.name = "runs";
  r.n_used = n;
  if (std::fabs(pi - 0.5) >= 2.0 / std::sqrt(double(n))) {
    r.prerequisite_failed = true;
    r.p_value = 0.0;
    return r;
  }
  size_t v = 1;
  for (size_t i = 0; i + 1 < n; i++) v += seq.bits[i] != seq.bits[i + 1];
  r.statistic = double(v);
  double denom = 2.0 * std::sqrt(2.0 * double(n)) * pi * (1.0 - pi);
  r.p_value = erfc_q(std::fabs(double(v) - 2.0 * double(n) * pi * (1.0 - pi)) / denom);
  return r;
}

TestResult longest_run(const BitSequence& seq) {
  size_t n = seq.n();
  if (n < 128) throw SequenceTooShort("longest-run test needs 128 bits, have " + std::to_string(n));
  size_t m;
  int k, lo;
  const double* pi;
  // category probabilities tabulated for the three reference block sizes
  static const double pi8[4] = {0.21484375, 0.3671875, 0.23046875, 0.1875};
  static const double pi128[6] = {0.1174, 0.2430, 0.2493, 0.1752, 0.1027, 0.1124};
  static const double pi10k[7] = {0.0882, 0.2092, 0.2483, 0.1933, 0.1208, 0.0675, 0.0727};
  if (n < 6272) {
    m = 8; k = 3; lo = 1; pi = pi8;
  } else if (n < 750000) {
    m = 128; k = 5; lo = 4; pi = pi128;
  } else {
    m = 10000; k = 6; lo = 10; pi = pi10k;
  }
  size_t blocks = n / m;
  std::vector<size_t> nu(size_t(k) + 1, 0);
  for (size_t b = 0; b < blocks; b++) {
    size_t longest = 0, run = 0;
    for (size_t i = 0; i < m; i++) {
      run = seq.bits[b * m + i] ? run + 1 : 0;
      longest = std::max(longest, run);
    }
    int cat = std::clamp(int(longest) - lo, 0, k);
    nu[size_t(cat)]++;
  }
  double chi2 = 0.0;
  for (int c = 0; c <= k; c++) {
    double expect = double(blocks) * pi[c];
    double d = double(nu[size_t(c)]) - expect;
    chi2 += d * d / expect;
  }
  TestResult r;
  r.name = "longest_run";
  r.statistic = chi2;
  r.p_value = igamc(double(k) / 2.0, chi2 / 2.0);
  r.n_used = blocks * m;
  return r;
}

TestResult cumulative_sums(const BitSequence& seq, bool backward) {
  size_t n = seq.n();
  int64_t sum = 0, z = 0;
  for (size_t i = 0; i < n; i++) {
    uint8_t b = backward ? seq.bits[n - 1 - i] : seq.bits[i];
    sum += b ? 1 : -1;
    z = std::max(z, int64_t(std::llabs(sum)));
  }
  double zn = double(z), sq = std::sqrt(double(n));
  auto phi = [&](double k, double off) { return normal_cdf((4.0 * k + off) * zn / sq); };
  double ratio = double(n) / zn;
  double sum1 = 0.0;
  for (int64_t k = int64_t(std::floor((-ratio + 1.0) / 4.0));
       k <= int64_t(std::floor((ratio - 1.0) / 4.0)); k++)
    sum1 += phi(double(k), 1.0) - phi(double(k), -1.0);
  double sum2 = 0.0;
  for (int64_t k = int64_t(std::floor((-ratio - 3.0) / 4.0));
       k <= int64_t(std::floor((ratio - 1.0) / 4.0)); k++)
    sum2 += phi(double(k), 3.0) - phi(double(k), 1.0);
  TestResult r;
  r.name = backward ? "cusum_backward" : "cusum_forward";
  r.statistic = zn;
  r.p_value = std::clamp(1.0 - sum1 + sum2, 0.0, 1.0);
  r.n_used = n;
  r.warning = n < 100;
  return r;
}

namespace {

// circular overlapping m-bit pattern counts
std::vector<uint32_t> pattern_counts(const BitSequence& seq, int m) {
  std::vector<uint32_t> counts(size_t(1) << m, 0);
  size_t n = seq.n();
  for (size_t i = 0; i < n; i++) {
    uint32_t v = 0;
    for (int j = 0; j < m; j++) v = v << 1 | seq.bits[(i + size_t(j)) % n];
    counts[v]++;
  }
  return counts;
}

double psi_sq(const BitSequence& seq, int m) {
  if (m <= 0) return 0.0;
  double n = double(seq.n());
  double s = 0.0;
  for (uint32_t c : pattern_counts(seq, m)) s += double(c) * double(c);
  return s * double(size_t(1) << m) / n - n;
}

}  // namespace

TestResult approximate_entropy(const BitSequence& seq, int m) {
  if (m < 1) throw InternalError("approximate entropy needs m >= 1");
  size_t n = seq.n();
  auto phi = [&](int mm) {
    double acc = 0.0;
    for (uint32_t c : pattern_counts(seq, mm)) {
      if (c == 0) continue;
      double f = double(c) / double(n);
      acc += f * std::log(f);
    }
    return acc;
  };
  double apen = phi(m) - phi(m + 1);
  double chi2 = 2.0 * double(n) * (std::log(2.0) - apen);
  TestResult r;
  r.name = "approximate_entropy";
  r.statistic = apen;
  r.p_value = igamc(double(size_t(1) << (m - 1)), chi2 / 2.0);
  r.n_used = n;
  r.warning = m >= int(std::floor(std::log2(double(n)))) - 5;
  return r;
}

TestResult serial(const BitSequence& seq, int m) {
  if (m < 2) throw InternalError("serial test needs m >= 2");
  double p2m = psi_sq(seq, m);
  double p1m = psi_sq(seq, m - 1);
  double p0m = psi_sq(seq, m - 2);
  double d1 = p2m - p1m;
  double d2 = p2m - 2.0 * p1m + p0m;
  TestResult r;
  r.name = "serial";
  r.statistic = d1;
  r.p_value = igamc(std::pow(2.0, m - 2), d1 / 2.0);
  r.p_value2 = igamc(std::pow(2.0, m - 3), d2 / 2.0);
  r.n_used = seq.n();
  return r;
}

std::vector<TestResult> run_all(const BitSequence& seq) {
  std::vector<TestResult> out;
  out.push_back(monobit(seq));
  out.push_back(block_frequency(seq));
  out.push_back(runs(seq));
  out.push_back(longest_run(seq));
  out.push_back(cumulative_sums(seq, false));
  out.push_back(cumulative_sums(seq, true));
  out.push_back(approximate_entropy(seq));
  out.push_back(serial(seq));
  return out;
}

}  // namespace etbert
