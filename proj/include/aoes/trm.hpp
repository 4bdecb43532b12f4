#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "aoes/encoder.hpp"

namespace aoes {

// Head/loss variants sharing the encoder and training loop.
enum class ModelKind {
  kAoes,       // TRM head, L_MSE + lambda * (-mean log y_t)
  kAoesNoTrm,  // single linear head, L_MSE
  kAoesL2,     // TRM head, L_MSE + lambda * mean (1 - y_t)^2
  kBaseline1,  // single linear head, L_MSE over on- and off-topic (off-topic target 0)
  kBaseline2,  // linear score head + topic classifier, L_MSE + L_BCE
};

const char* model_kind_name(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);
bool uses_trm(ModelKind kind);
bool uses_mahalanobis(ModelKind kind);

struct LinearUnit {
  Vector w;
  double b = 0.0;

  double apply(const Vector& x) const { return w.dot(x) + b; }
};

// f_h gives the raw score; f_t the scaling-factor logit. Baseline 2 reuses
// f_t as its on-topic classifier logit.
struct TRMHead {
  LinearUnit f_h;
  LinearUnit f_t;

  static TRMHead zeros(int d);
  bool all_finite() const;
};

struct TRMOutput {
  double y_h = 0.0;
  double y_t = 0.0;
  double y_s = 0.0;
  double t_logit = 0.0;  // f_t pre-activation
};

double sigmoid(double z);
// log(sigmoid(z)) without overflow.
double log_sigmoid(double z);

TRMOutput head_forward(const TRMHead& head, const Vector& x_h);

enum class TopicLoss { kLog, kL2 };

struct LossTerms {
  double mse = 0.0;
  double topic = 0.0;  // L_Topic, or L_BCE for Baseline 2
  double total = 0.0;
};

struct HybridLossResult {
  LossTerms terms;
  std::vector<double> d_yh;      // dLoss/dy_h
  std::vector<double> d_yt;      // dLoss/dy_t
  std::vector<double> d_tlogit;  // dLoss/d f_t pre-activation
};

// loss = (1/N) sum (y_g - y_s)^2 + lambda * topic term.
HybridLossResult hybrid_loss(std::span<const TRMOutput> outputs, std::span<const double> targets,
                             double lambda, TopicLoss topic = TopicLoss::kLog);

struct TrainConfig {
  double lambda = 0.6;
  double lr = 5e-4;
  int warmup_steps = 500;
  int epochs = 20;
  int batch_size = 16;
  std::uint64_t seed = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

struct ScoringModel {
  ModelKind kind = ModelKind::kAoes;
  EncoderModel encoder;
  TRMHead head;
  std::string prompt_id;
  int score_min = 0;
  int score_max = 1;
};

// Head parameters drawn from uniform(-init_scale, init_scale), biases zero.
TRMHead init_head(int d, double init_scale, std::uint64_t seed);

struct TrainSample {
  std::vector<int> ids;
  double target = 0.0;  // normalized score in [0, 1]
  bool on_topic = true;
};

struct ModelGradients {
  EncoderParams encoder;
  TRMHead head;

  static ModelGradients zeros_like(const ScoringModel& model);
};

// Per-sample inference through the variant's head. For single-head variants
// y_t is reported as 1; for Baseline 2 it carries the on-topic probability
// and y_s = y_h.
struct Prediction {
  EncoderOutput encoder;
  TRMOutput head;
};
Prediction predict(const ScoringModel& model, std::span<const int> ids);

// Batch loss of the variant's objective; when `grads` is non-null the exact
// gradients are accumulated into it.
LossTerms loss_and_gradients(const ScoringModel& model, std::span<const TrainSample> batch,
                             double lambda, ModelGradients* grads);

struct StepRecord {
  int step = 0;
  double lr = 0.0;
  LossTerms loss;
};

struct TrainResult {
  std::vector<StepRecord> trace;
  int steps_per_epoch = 0;

  std::vector<double> epoch_mean_loss() const;
};

// Adam with linear warmup then constant rate; shuffle order per epoch drawn
// from config.seed. Aborts with NonFiniteLoss (carrying the step index).
TrainResult train(ScoringModel& model, std::span<const TrainSample> samples,
                  const TrainConfig& config,
                  const std::function<void(const StepRecord&)>& on_step = {});

// CSV trace: step,lr,L_MSE,L_Topic,total (Baseline 2 uses L_BCE; kinds
// without a second term omit the column).
std::string loss_trace_csv(ModelKind kind, const TrainResult& result);

}  // namespace aoes
