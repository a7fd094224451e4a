#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <vector>

#include "fedbench/common.hpp"

namespace fedbench::metrics {

struct ConfusionMatrix {
  std::int64_t tp = 0;
  std::int64_t tn = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;

  std::int64_t total() const { return tp + tn + fp + fn; }
};

inline ConfusionMatrix confusion(std::span<const std::uint8_t> predicted,
                                 std::span<const std::uint8_t> actual) {
  if (predicted.size() != actual.size())
    throw std::invalid_argument("confusion: length mismatch");
  if (predicted.empty()) throw std::invalid_argument("confusion: empty input");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (actual[i]) {
      predicted[i] ? ++cm.tp : ++cm.fn;
    } else {
      predicted[i] ? ++cm.fp : ++cm.tn;
    }
  }
  return cm;
}

inline double accuracy(const ConfusionMatrix& cm) {
  return static_cast<double>(cm.tp + cm.tn) / static_cast<double>(cm.total());
}

// Degenerate denominators (a model predicting a single class in early
// rounds) yield 0 rather than a NaN; callers can query the *_defined
// helpers when the distinction matters.
inline bool precision_defined(const ConfusionMatrix& cm) {
  return cm.tp + cm.fp > 0;
}

inline bool recall_defined(const ConfusionMatrix& cm) {
  return cm.tp + cm.fn > 0;
}

inline double precision(const ConfusionMatrix& cm) {
  if (!precision_defined(cm)) return 0.0;
  return static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fp);
}

inline double recall(const ConfusionMatrix& cm) {
  if (!recall_defined(cm)) return 0.0;
  return static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fn);
}

inline double f1(const ConfusionMatrix& cm) {
  const double p = precision(cm);
  const double r = recall(cm);
  if (p + r == 0.0) return 0.0;
  return 2.0 * p * r / (p + r);
}

struct RoundMetrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double loss = 0.0;
  bool precision_degenerate = false;
  bool recall_degenerate = false;
};

// Classification at the fixed decision threshold: class 1 iff score > thr.
inline std::vector<std::uint8_t> labels_at_threshold(
    std::span<const double> scores, double thr = 0.5) {
  std::vector<std::uint8_t> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i)
    out[i] = scores[i] > thr ? 1 : 0;
  return out;
}

inline ConfusionMatrix confusion_at_threshold(std::span<const double> scores,
                                              std::span<const std::uint8_t> actual,
                                              double thr) {
  auto predicted = labels_at_threshold(scores, thr);
  return confusion(predicted, actual);
}

inline RoundMetrics evaluate(std::span<const double> scores,
                             std::span<const std::uint8_t> actual) {
  const ConfusionMatrix cm = confusion_at_threshold(scores, actual, 0.5);
  RoundMetrics m;
  m.accuracy = accuracy(cm);
  m.precision = precision(cm);
  m.recall = recall(cm);
  m.f1 = f1(cm);
  m.loss = mean_log_loss(scores, actual);
  m.precision_degenerate = !precision_defined(cm);
  m.recall_degenerate = !recall_defined(cm);
  return m;
}

struct RocPoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocCurve {
  std::vector<RocPoint> points;  // starts at (0,0), ends at (1,1)
  double auc = 0.0;
};

// Threshold sweep over the distinct score values in descending order. Tied
// scores collapse into a single point, which makes the trapezoidal area
// agree with the half-credit pairwise concordance statistic.
inline RocCurve roc_auc(std::span<const double> scores,
                        std::span<const std::uint8_t> actual) {
  if (scores.size() != actual.size())
    throw std::invalid_argument("roc_auc: length mismatch");
  std::int64_t npos = 0, nneg = 0;
  for (auto y : actual) y ? ++npos : ++nneg;
  if (npos == 0 || nneg == 0) throw DataError("AUC undefined: single-class input");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });

  RocCurve curve;
  curve.points.push_back(
      {std::numeric_limits<double>::infinity(), 0.0, 0.0});
  std::int64_t tp = 0, fp = 0;
  double auc = 0.0;
  double prev_fpr = 0.0, prev_tpr = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double s = scores[order[i]];
    while (i < order.size() && scores[order[i]] == s) {
      actual[order[i]] ? ++tp : ++fp;
      ++i;
    }
    const double tpr = static_cast<double>(tp) / static_cast<double>(npos);
    const double fpr = static_cast<double>(fp) / static_cast<double>(nneg);
    auc += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
    curve.points.push_back({s, fpr, tpr});
    prev_fpr = fpr;
    prev_tpr = tpr;
  }
  curve.auc = auc;
  return curve;
}

inline void write_roc_csv(const std::filesystem::path& path,
                          const RocCurve& curve) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write file: " + path.string());
  out << "threshold,fpr,tpr\n";
  for (const auto& p : curve.points)
    out << fmt17(p.threshold) << ',' << fmt17(p.fpr) << ',' << fmt17(p.tpr)
        << '\n';
  out << "auc," << fmt17(curve.auc) << ",\n";
}

}  // namespace fedbench::metrics
