#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "aoes/corpus.hpp"
#include "aoes/oodstats.hpp"
#include "aoes/trm.hpp"

namespace aoes {

// Every comparison system, including the TF-IDF similarity detector which
// needs no training.
enum class SystemKind { kAoes, kAoesNoTrm, kAoesL2, kBaseline1, kBaseline2, kTfidf };

const char* system_kind_name(SystemKind kind);
SystemKind parse_system_kind(const std::string& name);
std::optional<ModelKind> trained_kind(SystemKind kind);

struct ModelSpec {
  EncoderConfig encoder;
  TrainConfig train;
  double head_init_scale = 0.05;
};

struct TrainedModel {
  ScoringModel model;
  TrainResult result;
};

std::vector<TrainSample> make_samples(const EncoderModel& encoder, const std::vector<Essay>& essays,
                                      const Prompt& prompt, bool on_topic);

// Shared path for all five trained variants. Off-topic essays (target 0,
// class off) are used only by the supervised baselines.
TrainedModel train_model(ModelKind kind, const std::vector<Essay>& on_topic_train,
                         const std::vector<Essay>& off_topic_train, const Prompt& prompt,
                         const ModelSpec& spec);

TrainedModel train_aoes(const std::vector<Essay>& on_topic_train, const Prompt& prompt,
                        const ModelSpec& spec);
TrainedModel train_aoes_no_trm(const std::vector<Essay>& on_topic_train, const Prompt& prompt,
                               const ModelSpec& spec);
TrainedModel train_aoes_l2(const std::vector<Essay>& on_topic_train, const Prompt& prompt,
                           const ModelSpec& spec);
// Throws MissingOffTopicTrain when `off_topic_train` is empty.
TrainedModel train_baseline1(const std::vector<Essay>& on_topic_train,
                             const std::vector<Essay>& off_topic_train, const Prompt& prompt,
                             const ModelSpec& spec);
TrainedModel train_baseline2(const std::vector<Essay>& on_topic_train,
                             const std::vector<Essay>& off_topic_train, const Prompt& prompt,
                             const ModelSpec& spec);

struct EssayScore {
  TRMOutput head;
  DetectionScore mahalanobis;  // empty per_layer for non-Mahalanobis kinds
  double detection = 0.0;      // higher = more off-topic
};

// Detection score per kind: summed Mahalanobis distance for AOES variants,
// -y_s for Baseline 1, 1 - P(on-topic) for Baseline 2. `stats` is required
// for the Mahalanobis kinds.
EssayScore score_essay(const ScoringModel& model, const LayerStats* stats, const Essay& essay);

// Smoothed TF-IDF: tf = raw count, idf = ln((1 + N) / (1 + df)) + 1, over
// alphanumeric tokens seen in the fitted documents; unseen terms are dropped.
class TfidfIndex {
 public:
  static TfidfIndex fit(const std::vector<std::string>& documents);

  std::map<std::string, double> weights(const std::string& text) const;
  // Cosine of the two weight vectors; 0 when either is empty.
  double similarity(const std::string& a, const std::string& b) const;
  double idf(const std::string& term) const;
  std::size_t num_documents() const { return n_docs_; }

 private:
  std::map<std::string, double> idf_;
  std::size_t n_docs_ = 0;
};

// The instruction text when known, otherwise the keywords joined.
std::string prompt_representation(const Prompt& prompt);

double tfidf_similarity(const TfidfIndex& index, const Prompt& prompt, const Essay& essay);

}  // namespace aoes
