#include "aoes/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "aoes/error.hpp"

namespace aoes {

double qwk(std::span<const int> pred, std::span<const int> gold, int score_min, int score_max) {
  if (pred.size() != gold.size()) throw Error(ErrorCode::kShapeMismatch, "qwk length mismatch");
  if (pred.size() < 2) throw Error(ErrorCode::kEmptyInput, "qwk needs at least 2 pairs");
  if (score_max <= score_min) throw Error(ErrorCode::kInvalidArgument, "qwk range");
  const auto r = static_cast<std::size_t>(score_max - score_min + 1);
  std::vector<double> observed(r * r, 0.0);
  std::vector<double> hist_pred(r, 0.0);
  std::vector<double> hist_gold(r, 0.0);
  for (std::size_t k = 0; k < pred.size(); ++k) {
    if (pred[k] < score_min || pred[k] > score_max || gold[k] < score_min || gold[k] > score_max) {
      throw Error(ErrorCode::kOutOfRange, "grade outside qwk range");
    }
    const auto i = static_cast<std::size_t>(pred[k] - score_min);
    const auto j = static_cast<std::size_t>(gold[k] - score_min);
    observed[i * r + j] += 1.0;
    hist_pred[i] += 1.0;
    hist_gold[j] += 1.0;
  }
  const double n = static_cast<double>(pred.size());
  const double denom_w = static_cast<double>((r - 1) * (r - 1));
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < r; ++j) {
      const double diff = static_cast<double>(i) - static_cast<double>(j);
      const double w = diff * diff / denom_w;
      num += w * observed[i * r + j];
      den += w * hist_pred[i] * hist_gold[j] / n;
    }
  }
  if (den == 0.0) throw Error(ErrorCode::kDegenerateMarginals, "expected disagreement is zero");
  return 1.0 - num / den;
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw Error(ErrorCode::kShapeMismatch, "pearson length mismatch");
  if (xs.size() < 2) throw Error(ErrorCode::kEmptyInput, "pearson needs at least 2 pairs");
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw Error(ErrorCode::kZeroVariance, "constant input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

DetectionMetrics detection_metrics(const ConfusionCounts& c) {
  DetectionMetrics m;
  m.counts = c;
  m.precision = c.tp + c.fp > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp) : 0.0;
  m.recall = c.tp + c.fn > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 0.0;
  m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

DetectionMetrics detection_metrics(std::span<const std::pair<TopicClass, TopicClass>> decisions) {
  if (decisions.empty()) throw Error(ErrorCode::kEmptyInput, "no decisions");
  ConfusionCounts c;
  for (const auto& [predicted, truth] : decisions) {
    const bool p = predicted == TopicClass::kOff;
    const bool t = truth == TopicClass::kOff;
    if (p && t) ++c.tp;
    else if (p && !t) ++c.fp;
    else if (!p && t) ++c.fn;
    else ++c.tn;
  }
  return detection_metrics(c);
}

HistogramReport histogram_report(std::span<const double> on_scores,
                                 std::span<const double> off_scores, int bins) {
  if (on_scores.empty() || off_scores.empty()) {
    throw Error(ErrorCode::kEmptyInput, "histogram needs both score lists");
  }
  if (bins < 1) throw Error(ErrorCode::kInvalidArgument, "bins must be >= 1");
  double lo = on_scores[0], hi = on_scores[0];
  for (auto list : {on_scores, off_scores}) {
    for (double v : list) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  const double width = hi > lo ? (hi - lo) / bins : 1.0;
  HistogramReport rep;
  rep.bins.resize(static_cast<std::size_t>(bins));
  for (int b = 0; b < bins; ++b) {
    rep.bins[static_cast<std::size_t>(b)].low = lo + b * width;
    rep.bins[static_cast<std::size_t>(b)].high = b + 1 == bins ? std::max(hi, lo + width) : lo + (b + 1) * width;
  }
  auto bin_of = [&](double v) {
    auto b = static_cast<int>(std::floor((v - lo) / width));
    return static_cast<std::size_t>(std::clamp(b, 0, bins - 1));
  };
  for (double v : on_scores) ++rep.bins[bin_of(v)].count_on;
  for (double v : off_scores) ++rep.bins[bin_of(v)].count_off;
  const double n_on = static_cast<double>(on_scores.size());
  const double n_off = static_cast<double>(off_scores.size());
  for (const auto& b : rep.bins) {
    rep.overlap += std::min(static_cast<double>(b.count_on) / n_on, static_cast<double>(b.count_off) / n_off);
  }
  return rep;
}

}  // namespace aoes
