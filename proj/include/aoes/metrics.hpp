#pragma once

#include <span>
#include <utility>
#include <vector>

#include "aoes/calibrate.hpp"

namespace aoes {

// Off-topic is the positive class.
struct ConfusionCounts {
  long tp = 0;
  long fp = 0;
  long fn = 0;
  long tn = 0;
};

struct DetectionMetrics {
  ConfusionCounts counts;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct AgreementReport {
  double qwk = 0.0;
  double pearson = 0.0;
  long n = 0;
};

double qwk(std::span<const int> pred, std::span<const int> gold, int score_min, int score_max);
double pearson(std::span<const double> xs, std::span<const double> ys);

// pairs of (predicted, true) classes.
DetectionMetrics detection_metrics(std::span<const std::pair<TopicClass, TopicClass>> decisions);
DetectionMetrics detection_metrics(const ConfusionCounts& counts);

struct HistogramBin {
  double low = 0.0;
  double high = 0.0;
  long count_on = 0;
  long count_off = 0;
};

struct HistogramReport {
  std::vector<HistogramBin> bins;
  double overlap = 0.0;
};

// Equal-width bins over the combined range; the last bin is closed.
HistogramReport histogram_report(std::span<const double> on_scores,
                                 std::span<const double> off_scores, int bins);

}  // namespace aoes
