#include "etbert/metrics.hpp"

#include <cstdio>
#include <numeric>
#include <sstream>

#include "etbert/errors.hpp"

namespace etbert {

int64_t ConfusionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), int64_t(0));
}

ConfusionMatrix confusion(std::span<const int> truths, std::span<const int> preds, int k) {
  if (truths.size() != preds.size())
    throw InternalError("truth/prediction length mismatch");
  ConfusionMatrix cm(k);
  for (size_t i = 0; i < truths.size(); i++) {
    int t = truths[i], p = preds[i];
    if (t < 0 || t >= k || p < 0 || p >= k)
      throw LabelOutOfRange("label outside [0, " + std::to_string(k) + ") at example " +
                            std::to_string(i));
    cm.at(t, p)++;
  }
  return cm;
}

MacroReport macro_report(const ConfusionMatrix& cm) {
  int64_t total = cm.total();
  if (cm.k == 0 || total == 0) throw EmptyMatrix("no evaluated examples");
  MacroReport rep;
  rep.per_class.resize(size_t(cm.k));
  int64_t trace = 0;
  for (int c = 0; c < cm.k; c++) {
    int64_t tp = cm.at(c, c);
    int64_t row = 0, col = 0;
    for (int j = 0; j < cm.k; j++) {
      row += cm.at(c, j);
      col += cm.at(j, c);
    }
    int64_t fp = col - tp, fn = row - tp;
    ClassMetrics& m = rep.per_class[size_t(c)];
    m.support = row;
    m.precision = tp + fp > 0 ? double(tp) / double(tp + fp) : 0.0;
    m.recall = tp + fn > 0 ? double(tp) / double(tp + fn) : 0.0;
    m.f1 = m.precision + m.recall > 0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
                                      : 0.0;
    int64_t tn = total - tp - fp - fn;
    rep.macro_ac_alt += double(tp + tn) / double(total);
    rep.macro_precision += m.precision;
    rep.macro_recall += m.recall;
    rep.macro_f1 += m.f1;
    trace += tp;
  }
  rep.macro_precision /= cm.k;
  rep.macro_recall /= cm.k;
  rep.macro_f1 /= cm.k;
  rep.macro_ac_alt /= cm.k;
  rep.accuracy = double(trace) / double(total);
  return rep;
}

std::string format_report(const MacroReport& rep, const std::vector<std::string>& class_names) {
  std::ostringstream out;
  size_t name_w = 5;
  for (const auto& n : class_names) name_w = std::max(name_w, n.size());
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-*s %9s %9s %9s %9s\n", int(name_w), "class", "precision",
                "recall", "f1", "support");
  out << buf;
  for (size_t c = 0; c < rep.per_class.size(); c++) {
    const ClassMetrics& m = rep.per_class[c];
    std::string name = c < class_names.size() ? class_names[c] : std::to_string(c);
    std::snprintf(buf, sizeof(buf), "%-*s %9.4f %9.4f %9.4f %9lld\n", int(name_w), name.c_str(),
                  m.precision, m.recall, m.f1, static_cast<long long>(m.support));
    out << buf;
  }
  std::snprintf(buf, sizeof(buf), "%-*s %9.4f %9.4f %9.4f\n", int(name_w), "macro",
                rep.macro_precision, rep.macro_recall, rep.macro_f1);
  out << buf;
  std::snprintf(buf, sizeof(buf), "accuracy %.4f   macro_ac_alt %.4f\n", rep.accuracy,
                rep.macro_ac_alt);
  out << buf;
  return out.str();
}

}  // namespace etbert
