#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace etbert {

struct ConfusionMatrix {
  int k = 0;
  std::vector<int64_t> counts;  // row = true class, column = predicted

  explicit ConfusionMatrix(int classes = 0) : k(classes), counts(size_t(classes * classes), 0) {}
  int64_t& at(int truth, int pred) { return counts[size_t(truth) * size_t(k) + size_t(pred)]; }
  int64_t at(int truth, int pred) const {
    return counts[size_t(truth) * size_t(k) + size_t(pred)];
  }
  int64_t total() const;
};

ConfusionMatrix confusion(std::span<const int> truths, std::span<const int> preds, int k);

struct ClassMetrics {
  double precision = 0, recall = 0, f1 = 0;
  int64_t support = 0;
};

struct MacroReport {
  double accuracy = 0;
  double macro_precision = 0, macro_recall = 0, macro_f1 = 0;
  double macro_ac_alt = 0;  // mean per-class (TP+TN)/total
  std::vector<ClassMetrics> per_class;
};

// Zero-denominator convention: the affected metric is 0.
MacroReport macro_report(const ConfusionMatrix& cm);  // EmptyMatrix when total is 0

std::string format_report(const MacroReport& rep, const std::vector<std::string>& class_names);

}  // namespace etbert
