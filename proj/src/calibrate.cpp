#include "aoes/calibrate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <vector>

#include "json.hpp"

#include "aoes/error.hpp"

namespace aoes {

const char* topic_class_name(TopicClass c) { return c == TopicClass::kOn ? "C_on" : "C_off"; }

double false_positive_rate(std::span<const double> on_scores, double delta) {
  if (on_scores.empty()) return 0.0;
  const auto n = std::count_if(on_scores.begin(), on_scores.end(), [&](double s) { return s > delta; });
  return static_cast<double>(n) / static_cast<double>(on_scores.size());
}

double false_negative_rate(std::span<const double> off_scores, double delta) {
  if (off_scores.empty()) return 0.0;
  const auto n =
      std::count_if(off_scores.begin(), off_scores.end(), [&](double s) { return s <= delta; });
  return static_cast<double>(n) / static_cast<double>(off_scores.size());
}

EerResult calibrate_eer(std::span<const double> on_scores, std::span<const double> off_scores) {
  if (on_scores.empty() || off_scores.empty()) {
    throw Error(ErrorCode::kEmptyInput, "EER calibration needs on- and off-topic scores");
  }
  std::vector<double> merged(on_scores.begin(), on_scores.end());
  merged.insert(merged.end(), off_scores.begin(), off_scores.end());
  for (double v : merged) {
    if (!std::isfinite(v)) throw Error(ErrorCode::kDegenerateScores, "non-finite score");
  }
  std::sort(merged.begin(), merged.end());
  merged.erase(std::unique(merged.begin(), merged.end()), merged.end());
  if (merged.size() < 2) throw Error(ErrorCode::kDegenerateScores, "all scores identical");

  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> candidates{-kInf};
  for (std::size_t i = 0; i + 1 < merged.size(); ++i) {
    candidates.push_back(merged[i] + 0.5 * (merged[i + 1] - merged[i]));
  }
  candidates.push_back(kInf);

  const double n_on = static_cast<double>(on_scores.size());
  const double n_off = static_cast<double>(off_scores.size());
  struct Best {
    double gap = kInf, f1 = -1.0, delta = 0.0, fpr = 0.0, fnr = 0.0;
  } best;
  for (double delta : candidates) {
    const double fpr = false_positive_rate(on_scores, delta);
    const double fnr = false_negative_rate(off_scores, delta);
    const double tp = (1.0 - fnr) * n_off;
    const double fp = fpr * n_on;
    const double fn = fnr * n_off;
    const double f1 = tp > 0 ? 2.0 * tp / (2.0 * tp + fp + fn) : 0.0;
    const double gap = std::abs(fpr - fnr);
    // Candidates run in increasing delta, so strict improvement keeps the lower delta on ties.
    if (gap < best.gap || (gap == best.gap && f1 > best.f1)) {
      best = {gap, f1, delta, fpr, fnr};
    }
  }
  // An infinite cut behaves like one just outside the data.
  if (best.delta == -kInf) best.delta = merged.front() - 1.0;
  if (best.delta == kInf) best.delta = merged.back() + 1.0;

  EerResult r;
  r.threshold.delta = best.delta;
  r.threshold.method = ThresholdMethod::kEer;
  r.fpr = best.fpr;
  r.fnr = best.fnr;
  r.threshold.params["fpr"] = best.fpr;
  r.threshold.params["fnr"] = best.fnr;
  return r;
}

Threshold calibrate_quantile(std::span<const double> train_scores, double q) {
  if (train_scores.empty()) throw Error(ErrorCode::kEmptyInput, "quantile calibration needs scores");
  if (!(q > 0.0 && q < 1.0)) throw Error(ErrorCode::kInvalidArgument, "quantile level must be in (0,1)");
  std::vector<double> sorted(train_scores.begin(), train_scores.end());
  std::sort(sorted.begin(), sorted.end());
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  Threshold t;
  t.delta = sorted[lo] + frac * (sorted[hi] - sorted[lo]);
  t.method = ThresholdMethod::kQuantile;
  t.params["q"] = q;
  return t;
}

Decision decide(const std::string& essay_id, double d_total, double y_s, const Threshold& threshold,
                const Prompt& prompt) {
  Decision d;
  d.essay_id = essay_id;
  d.d_total = d_total;
  if (d_total <= threshold.delta) {
    d.predicted = TopicClass::kOn;
    d.final_score = denormalize_score(y_s, prompt);
  } else {
    d.predicted = TopicClass::kOff;
    d.final_score = 0;
  }
  return d;
}

std::string threshold_to_json(const Threshold& t) {
  nlohmann::ordered_json j;
  j["delta"] = t.delta;
  j["method"] = t.method == ThresholdMethod::kEer ? "eer" : "quantile";
  j["params"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : t.params) j["params"][k] = v;
  j["source_stats_hash"] = t.source_stats_hash;
  return j.dump(2);
}

Threshold threshold_from_json(const std::string& s) {
  Threshold t;
  try {
    auto j = nlohmann::json::parse(s);
    t.delta = j.at("delta").get<double>();
    const auto method = j.at("method").get<std::string>();
    if (method == "eer") {
      t.method = ThresholdMethod::kEer;
    } else if (method == "quantile") {
      t.method = ThresholdMethod::kQuantile;
    } else {
      throw Error(ErrorCode::kBadFormat, "unknown threshold method '" + method + "'");
    }
    if (j.contains("params")) {
      for (auto it = j["params"].begin(); it != j["params"].end(); ++it) {
        t.params[it.key()] = it.value().get<double>();
      }
    }
    if (j.contains("source_stats_hash")) t.source_stats_hash = j["source_stats_hash"].get<std::string>();
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::kBadFormat, std::string("threshold JSON: ") + ex.what());
  }
  if (!std::isfinite(t.delta)) throw Error(ErrorCode::kBadFormat, "threshold delta not finite");
  return t;
}

void save_threshold(const Threshold& t, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << threshold_to_json(t) << '\n';
}

Threshold load_threshold(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return threshold_from_json(ss.str());
}

}  // namespace aoes
