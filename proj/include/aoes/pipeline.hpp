#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "aoes/adversary.hpp"
#include "aoes/baselines.hpp"
#include "aoes/calibrate.hpp"
#include "aoes/corpus.hpp"
#include "aoes/metrics.hpp"

namespace aoes {

struct SubSeeds {
  std::uint64_t corpus = 0;
  std::uint64_t init = 0;
  std::uint64_t shuffle = 0;
  std::uint64_t perturb = 0;
};

SubSeeds derive_sub_seeds(std::uint64_t global_seed);

// Off-topic essays for one target prompt. The other prompts are rotated
// starting after the target; the first half (rounded up) feeds training and
// calibration, the rest feeds testing, so the two pools never share a prompt.
struct OffTopicPools {
  std::vector<std::string> train_prompts;
  std::vector<std::string> test_prompts;
  std::vector<Essay> train;  // train split of train_prompts
  std::vector<Essay> dev;    // dev split of train_prompts
  std::vector<Essay> test;   // test split of test_prompts
};

// Throws InsufficientResource with fewer than three prompts.
OffTopicPools off_topic_pools(const Corpus& corpus, const std::string& prompt_id);

enum class CalibrationMode { kDev, kTest };

const char* calibration_mode_name(CalibrationMode mode);

// Settings that reach the learners; shared by the single-model commands and
// the bench.
ModelSpec default_model_spec();
// Desk-scale profile used by the bench (see README).
ModelSpec bench_model_spec();
ModelSpec model_spec_from_json(const std::string& json_text, ModelSpec base);

struct BenchConfig {
  std::string dataset = "synthetic";
  std::uint64_t seed = 1;
  SynthConfig synth;
  // When set, the corpus is read from these instead of being synthesized.
  std::filesystem::path essays_path;
  std::filesystem::path prompts_path;
  ModelSpec spec = bench_model_spec();
  std::vector<SystemKind> systems = {SystemKind::kAoes,      SystemKind::kAoesNoTrm,
                                     SystemKind::kAoesL2,    SystemKind::kBaseline1,
                                     SystemKind::kBaseline2, SystemKind::kTfidf};
  // Empty prompt list means every prompt of the corpus.
  std::vector<std::string> prompts;
  // Seeds left at 0 are derived from the perturb sub-seed.
  std::vector<PerturbSpec> perturbations = default_perturbations();
  CalibrationMode calibration = CalibrationMode::kDev;
  int histogram_bins = 20;
  double budget_seconds = 0.0;  // 0 disables the budget
  bool include_layer0 = false;
  std::filesystem::path output_dir;

  static std::vector<PerturbSpec> default_perturbations();
  void validate() const;
};

BenchConfig bench_config_from_json(const std::string& json_text, BenchConfig base = {});
std::string bench_config_to_json(const BenchConfig& config);

struct MetricRow {
  std::string dataset;
  std::string model;
  std::string prompt;
  std::string metric;
  double value = 0.0;
};

struct AdversarialRow {
  std::string dataset;
  std::string model;
  std::string prompt;
  std::string perturbation;
  std::string metric;
  double value = 0.0;
};

struct BenchReport {
  std::vector<MetricRow> metrics;
  std::vector<AdversarialRow> adversarial;
  // Mean off-topic F1 over prompts, per system name.
  std::map<std::string, double> mean_f1;
  // "aoes>=<system>" for every other system that ran.
  std::map<std::string, bool> comparisons;
  int cells_trained = 0;
  int cells_resumed = 0;
};

// Runs every (system, prompt) cell, persisting artifacts under
// config.output_dir. Cells whose checkpoint already exists are reloaded
// instead of retrained.
BenchReport run_bench(const BenchConfig& config);

// Returns nullopt when the metric is absent.
std::optional<double> find_metric(const BenchReport& report, const std::string& model,
                                  const std::string& prompt, const std::string& metric);
std::optional<double> find_adversarial(const BenchReport& report, const std::string& model,
                                       const std::string& prompt, const std::string& perturbation,
                                       const std::string& metric);

std::string format_real(double v);
std::string metrics_csv(const std::vector<MetricRow>& rows);
std::string adversarial_csv(const std::vector<AdversarialRow>& rows);
std::string histogram_csv(const HistogramReport& report);
std::string summary_json(const BenchReport& report);

// Per-essay decision rows shared by detect, score and the bench.
struct DecisionRow {
  std::string essay_id;
  std::vector<double> per_layer;
  double d_total = 0.0;
  double y_h = 0.0;
  double y_t = 0.0;
  double y_s = 0.0;
  TopicClass predicted = TopicClass::kOn;
  int final_score = 0;
};

DecisionRow make_decision_row(const ScoringModel& model, const LayerStats* stats,
                              const Threshold& threshold, const Prompt& prompt,
                              const Essay& essay);
std::string decisions_csv_header(int num_layers);
std::string decision_csv_line(const DecisionRow& row);

}  // namespace aoes
