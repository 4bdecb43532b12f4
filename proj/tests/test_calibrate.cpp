#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "aoes/calibrate.hpp"
#include "aoes/error.hpp"
#include "aoes/rng.hpp"
#include "oracles.hpp"

using namespace aoes;
namespace fs = std::filesystem;

namespace {

Prompt prompt_2_12() { return Prompt{"p1", {"k"}, 2, 12, ""}; }

Threshold at(double delta) {
  Threshold t;
  t.delta = delta;
  return t;
}

}  // namespace

TEST_CASE("eer on separated sets picks the gap midpoint") {
  std::vector<double> on = {1, 2, 3}, off = {10, 11, 12};
  const auto r = calibrate_eer(on, off);
  CHECK(r.threshold.delta == 6.5);
  CHECK(r.fpr == 0.0);
  CHECK(r.fnr == 0.0);
  CHECK(r.threshold.method == ThresholdMethod::kEer);
}

TEST_CASE("eer on interleaved sets") {
  std::vector<double> on = {1, 3}, off = {2, 4};
  const auto r = calibrate_eer(on, off);
  CHECK(r.threshold.delta == 2.5);
  CHECK(r.fpr == 0.5);
  CHECK(r.fnr == 0.5);
  CHECK(std::fabs(r.fpr - r.fnr) == oracle::min_eer_gap(on, off));
}

TEST_CASE("eer errors") {
  std::vector<double> five = {5, 5, 5}, none;
  try {
    calibrate_eer(five, five);
    FAIL("expected DegenerateScores");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kDegenerateScores);
  }
  try {
    calibrate_eer(none, five);
    FAIL("expected EmptyInput");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kEmptyInput);
  }
}

TEST_CASE("eer gap is minimal among all candidates") {
  Rng rng(41);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> on, off;
    const int n_on = 1 + static_cast<int>(rng.below(20)), n_off = 1 + static_cast<int>(rng.below(20));
    for (int i = 0; i < n_on; ++i) on.push_back(static_cast<double>(rng.below(15)));
    for (int i = 0; i < n_off; ++i) off.push_back(static_cast<double>(rng.below(15)) + 3.0);
    const auto r = calibrate_eer(on, off);
    CHECK(std::fabs(r.fpr - r.fnr) == doctest::Approx(oracle::min_eer_gap(on, off)));
    CHECK(r.fpr == false_positive_rate(on, r.threshold.delta));
    CHECK(r.fnr == false_negative_rate(off, r.threshold.delta));
  }
}

TEST_CASE("eer is invariant under increasing transforms") {
  Rng rng(43);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> on, off;
    for (int i = 0; i < 12; ++i) on.push_back(rng.uniform(0, 5));
    for (int i = 0; i < 9; ++i) off.push_back(rng.uniform(3, 9));
    auto tf = [](double x) { return std::exp(0.7 * x) + 2.0; };
    std::vector<double> on2, off2;
    for (double x : on) on2.push_back(tf(x));
    for (double x : off) off2.push_back(tf(x));
    const auto a = calibrate_eer(on, off), b = calibrate_eer(on2, off2);
    CHECK(a.fpr == b.fpr);
    CHECK(a.fnr == b.fnr);
  }
}

TEST_CASE("rates use strict exceedance") {
  std::vector<double> on = {1, 2, 3}, off = {2, 3, 4};
  CHECK(false_positive_rate(on, 2.0) == doctest::Approx(1.0 / 3));
  CHECK(false_negative_rate(off, 2.0) == doctest::Approx(1.0 / 3));
}

TEST_CASE("quantile threshold") {
  std::vector<double> d = {5, 1, 4, 2, 3};
  CHECK(calibrate_quantile(d, 0.5).delta == 3.0);
  std::vector<double> one = {7.25};
  CHECK(calibrate_quantile(one, 0.1).delta == 7.25);
  CHECK(calibrate_quantile(one, 0.9).delta == 7.25);
  std::vector<double> pair = {0, 10};
  CHECK(calibrate_quantile(pair, 0.25).delta == doctest::Approx(2.5));

  Rng rng(47);
  std::vector<double> u(1000);
  for (auto& x : u) x = rng.uniform();
  std::sort(u.begin(), u.end());
  const auto t = calibrate_quantile(u, 0.95);
  CHECK(std::fabs(t.delta - 0.95) <= 0.03);
  CHECK(t.method == ThresholdMethod::kQuantile);
  CHECK(t.params.at("q") == 0.95);

  std::vector<double> none;
  CHECK_THROWS_AS(calibrate_quantile(none, 0.5), Error);
  CHECK_THROWS_AS(calibrate_quantile(d, 1.0), Error);
}

TEST_CASE("decide applies the joint rule") {
  const auto p = prompt_2_12();
  auto on = decide("a", 5.0, 0.5, at(5.0), p);
  CHECK(on.predicted == TopicClass::kOn);
  CHECK(on.final_score == 7);
  auto off = decide("b", 5.0 + 1e-9, 0.9, at(5.0), p);
  CHECK(off.predicted == TopicClass::kOff);
  CHECK(off.final_score == 0);
  CHECK(off.essay_id == "b");
  CHECK(off.d_total == 5.0 + 1e-9);
}

TEST_CASE("off-topic decisions always score zero and raising delta never flips to off") {
  Rng rng(53);
  const auto p = prompt_2_12();
  for (int i = 0; i < 300; ++i) {
    const double d = rng.uniform(0, 10), y = rng.uniform(-0.5, 1.5);
    const double lo = rng.uniform(0, 10), hi = lo + rng.uniform(0, 3);
    const auto a = decide("x", d, y, at(lo), p), b = decide("x", d, y, at(hi), p);
    if (a.predicted == TopicClass::kOff) CHECK(a.final_score == 0);
    if (a.predicted == TopicClass::kOn) CHECK(b.predicted == TopicClass::kOn);
    if (a.predicted == TopicClass::kOn) {
      CHECK(a.final_score >= p.score_min);
      CHECK(a.final_score <= p.score_max);
    }
  }
}

TEST_CASE("threshold json round trip") {
  Threshold t;
  t.delta = 0.1 + 0.2;
  t.method = ThresholdMethod::kQuantile;
  t.params["q"] = 0.95;
  t.source_stats_hash = "deadbeef";
  const auto back = threshold_from_json(threshold_to_json(t));
  CHECK(back.delta == t.delta);
  CHECK(back.method == t.method);
  CHECK(back.params == t.params);
  CHECK(back.source_stats_hash == "deadbeef");

  const fs::path dir = fs::path(AOES_TEST_TMP) / "calibrate";
  fs::create_directories(dir);
  save_threshold(t, dir / "t.json");
  CHECK(load_threshold(dir / "t.json").delta == t.delta);
  CHECK_THROWS_AS(threshold_from_json(R"({"delta": 1, "method": "magic", "params": {}})"), Error);
}
