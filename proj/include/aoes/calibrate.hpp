#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>

#include "aoes/corpus.hpp"

namespace aoes {

enum class ThresholdMethod { kEer, kQuantile };

struct Threshold {
  double delta = 0.0;
  ThresholdMethod method = ThresholdMethod::kEer;
  std::map<std::string, double> params;
  std::string source_stats_hash;
};

struct EerResult {
  Threshold threshold;
  double fpr = 0.0;
  double fnr = 0.0;
};

enum class TopicClass { kOn, kOff };

const char* topic_class_name(TopicClass c);

// Higher score means more off-topic. FPR counts on-topic scores above delta,
// FNR off-topic scores at or below it.
double false_positive_rate(std::span<const double> on_scores, double delta);
double false_negative_rate(std::span<const double> off_scores, double delta);

EerResult calibrate_eer(std::span<const double> on_scores, std::span<const double> off_scores);
Threshold calibrate_quantile(std::span<const double> train_scores, double q);

struct Decision {
  std::string essay_id;
  double d_total = 0.0;
  TopicClass predicted = TopicClass::kOn;
  int final_score = 0;
};

Decision decide(const std::string& essay_id, double d_total, double y_s, const Threshold& threshold,
                const Prompt& prompt);

std::string threshold_to_json(const Threshold& t);
Threshold threshold_from_json(const std::string& s);
void save_threshold(const Threshold& t, const std::filesystem::path& path);
Threshold load_threshold(const std::filesystem::path& path);

}  // namespace aoes
