#include "aoes/trm.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

#include "aoes/error.hpp"
#include "aoes/rng.hpp"

namespace aoes {

const char* model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::kAoes: return "aoes";
    case ModelKind::kAoesNoTrm: return "aoes-no-trm";
    case ModelKind::kAoesL2: return "aoes-l2";
    case ModelKind::kBaseline1: return "baseline1";
    case ModelKind::kBaseline2: return "baseline2";
  }
  return "aoes";
}

ModelKind parse_model_kind(const std::string& name) {
  for (auto k : {ModelKind::kAoes, ModelKind::kAoesNoTrm, ModelKind::kAoesL2,
                 ModelKind::kBaseline1, ModelKind::kBaseline2}) {
    if (name == model_kind_name(k)) return k;
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown model kind '" + name + "'");
}

bool uses_trm(ModelKind kind) { return kind == ModelKind::kAoes || kind == ModelKind::kAoesL2; }

bool uses_mahalanobis(ModelKind kind) {
  return kind == ModelKind::kAoes || kind == ModelKind::kAoesL2 || kind == ModelKind::kAoesNoTrm;
}

TRMHead TRMHead::zeros(int d) {
  TRMHead h;
  h.f_h.w = Vector::Zero(d);
  h.f_t.w = Vector::Zero(d);
  return h;
}

bool TRMHead::all_finite() const {
  return f_h.w.allFinite() && f_t.w.allFinite() && std::isfinite(f_h.b) && std::isfinite(f_t.b);
}

TRMHead init_head(int d, double init_scale, std::uint64_t seed) {
  Rng rng(sub_seed(seed, "head.init"));
  TRMHead h = TRMHead::zeros(d);
  for (int i = 0; i < d; ++i) h.f_h.w[i] = rng.uniform(-init_scale, init_scale);
  for (int i = 0; i < d; ++i) h.f_t.w[i] = rng.uniform(-init_scale, init_scale);
  return h;
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double log_sigmoid(double z) {
  return z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

TRMOutput head_forward(const TRMHead& head, const Vector& x_h) {
  TRMOutput o;
  o.y_h = head.f_h.apply(x_h);
  o.t_logit = head.f_t.apply(x_h);
  o.y_t = sigmoid(o.t_logit);
  o.y_s = o.y_t * o.y_h;
  return o;
}

HybridLossResult hybrid_loss(std::span<const TRMOutput> outputs, std::span<const double> targets,
                             double lambda, TopicLoss topic) {
  if (outputs.empty()) throw Error(ErrorCode::kEmptyInput, "empty batch");
  if (outputs.size() != targets.size()) throw Error(ErrorCode::kShapeMismatch, "batch sizes");
  const auto n = static_cast<double>(outputs.size());
  HybridLossResult r;
  r.d_yh.resize(outputs.size());
  r.d_yt.resize(outputs.size());
  r.d_tlogit.resize(outputs.size());
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const auto& o = outputs[i];
    if (!(o.y_t > 0.0 && o.y_t < 1.0)) {
      throw Error(ErrorCode::kDegenerateYt, "y_t = " + std::to_string(o.y_t));
    }
    const double residual = targets[i] - o.y_s;
    r.terms.mse += residual * residual / n;
    const double d_ys = -2.0 / n * residual;
    const double sig_grad = o.y_t * (1.0 - o.y_t);
    r.d_yh[i] = d_ys * o.y_t;
    double d_yt = d_ys * o.y_h;
    double d_logit = d_yt * sig_grad;
    if (topic == TopicLoss::kLog) {
      r.terms.topic += -log_sigmoid(o.t_logit) / n;
      d_yt += -lambda / (n * o.y_t);
      // d/dz of -log sigmoid(z) is -(1 - sigmoid(z)).
      d_logit += -lambda / n * (1.0 - o.y_t);
    } else {
      const double gap = 1.0 - o.y_t;
      r.terms.topic += gap * gap / n;
      const double d_yt_topic = -2.0 * lambda / n * gap;
      d_yt += d_yt_topic;
      d_logit += d_yt_topic * sig_grad;
    }
    r.d_yt[i] = d_yt;
    r.d_tlogit[i] = d_logit;
  }
  r.terms.total = r.terms.mse + lambda * r.terms.topic;
  return r;
}

void TrainConfig::validate() const {
  if (!(lambda >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "lambda must be >= 0");
  if (!(lr > 0.0)) throw Error(ErrorCode::kInvalidArgument, "lr must be > 0");
  if (warmup_steps < 0 || epochs < 1 || batch_size < 1) {
    throw Error(ErrorCode::kInvalidArgument, "warmup/epochs/batch_size out of range");
  }
}

ModelGradients ModelGradients::zeros_like(const ScoringModel& model) {
  ModelGradients g;
  g.encoder = EncoderParams::zeros_like(model.encoder.params());
  g.head = TRMHead::zeros(model.encoder.config().d);
  return g;
}

Prediction predict(const ScoringModel& model, std::span<const int> ids) {
  Prediction p;
  p.encoder = forward(model.encoder, ids);
  p.head = head_forward(model.head, p.encoder.pooled);
  switch (model.kind) {
    case ModelKind::kAoes:
    case ModelKind::kAoesL2:
      break;
    case ModelKind::kAoesNoTrm:
    case ModelKind::kBaseline1:
      p.head.y_t = 1.0;
      p.head.t_logit = 0.0;
      p.head.y_s = p.head.y_h;
      break;
    case ModelKind::kBaseline2:
      p.head.y_s = p.head.y_h;
      break;
  }
  return p;
}

LossTerms loss_and_gradients(const ScoringModel& model, std::span<const TrainSample> batch,
                             double lambda, ModelGradients* grads) {
  if (batch.empty()) throw Error(ErrorCode::kEmptyInput, "empty batch");
  const auto n = static_cast<double>(batch.size());
  std::vector<Prediction> preds;
  preds.reserve(batch.size());
  for (const auto& s : batch) preds.push_back(predict(model, s.ids));

  std::vector<double> d_yh(batch.size(), 0.0);
  std::vector<double> d_logit(batch.size(), 0.0);
  LossTerms terms;

  if (uses_trm(model.kind)) {
    std::vector<TRMOutput> outs;
    std::vector<double> targets;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      outs.push_back(preds[i].head);
      targets.push_back(batch[i].target);
    }
    auto r = hybrid_loss(outs, targets, lambda,
                         model.kind == ModelKind::kAoesL2 ? TopicLoss::kL2 : TopicLoss::kLog);
    terms = r.terms;
    d_yh = std::move(r.d_yh);
    d_logit = std::move(r.d_tlogit);
  } else {
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const double residual = batch[i].target - preds[i].head.y_h;
      terms.mse += residual * residual / n;
      d_yh[i] = -2.0 / n * residual;
      if (model.kind == ModelKind::kBaseline2) {
        const double z = preds[i].head.t_logit;
        const double c = batch[i].on_topic ? 1.0 : 0.0;
        // BCE(sigmoid(z), c) = -c log s(z) - (1-c) log s(-z)
        terms.topic += -(c * log_sigmoid(z) + (1.0 - c) * log_sigmoid(-z)) / n;
        d_logit[i] = (sigmoid(z) - c) / n;
      }
    }
    terms.total = terms.mse + terms.topic;
  }

  if (grads) {
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const Vector& x = preds[i].encoder.pooled;
      grads->head.f_h.w += d_yh[i] * x;
      grads->head.f_h.b += d_yh[i];
      Vector d_x = d_yh[i] * model.head.f_h.w;
      if (model.kind != ModelKind::kAoesNoTrm && model.kind != ModelKind::kBaseline1) {
        grads->head.f_t.w += d_logit[i] * x;
        grads->head.f_t.b += d_logit[i];
        d_x += d_logit[i] * model.head.f_t.w;
      }
      EncoderUpstream up;
      up.d_pooled = std::move(d_x);
      backward(model.encoder, preds[i].encoder, up, grads->encoder);
    }
  }
  return terms;
}

namespace {

struct Slot {
  double* param;
  double* grad;
  double* m;
  double* v;
  std::size_t n;
};

std::vector<Matrix*> tensors(EncoderParams& p) {
  std::vector<Matrix*> out;
  p.visit([&](const std::string&, Matrix& m) { out.push_back(&m); });
  return out;
}

std::vector<Slot> slots(ScoringModel& model, ModelGradients& g, ModelGradients& m,
                        ModelGradients& v) {
  std::vector<Slot> out;
  auto tp = tensors(model.encoder.params());
  auto tg = tensors(g.encoder);
  auto tm = tensors(m.encoder);
  auto tv = tensors(v.encoder);
  for (std::size_t i = 0; i < tp.size(); ++i) {
    out.push_back({tp[i]->data(), tg[i]->data(), tm[i]->data(), tv[i]->data(),
                   static_cast<std::size_t>(tp[i]->size())});
  }
  auto add_unit = [&](LinearUnit& p, LinearUnit& gu, LinearUnit& mu, LinearUnit& vu) {
    out.push_back({p.w.data(), gu.w.data(), mu.w.data(), vu.w.data(),
                   static_cast<std::size_t>(p.w.size())});
    out.push_back({&p.b, &gu.b, &mu.b, &vu.b, 1});
  };
  add_unit(model.head.f_h, g.head.f_h, m.head.f_h, v.head.f_h);
  add_unit(model.head.f_t, g.head.f_t, m.head.f_t, v.head.f_t);
  return out;
}

}  // namespace

std::vector<double> TrainResult::epoch_mean_loss() const {
  std::vector<double> out;
  if (steps_per_epoch <= 0) return out;
  for (std::size_t start = 0; start < trace.size(); start += static_cast<std::size_t>(steps_per_epoch)) {
    const std::size_t end = std::min(trace.size(), start + static_cast<std::size_t>(steps_per_epoch));
    double sum = 0.0;
    for (std::size_t i = start; i < end; ++i) sum += trace[i].loss.total;
    out.push_back(sum / static_cast<double>(end - start));
  }
  return out;
}

TrainResult train(ScoringModel& model, std::span<const TrainSample> samples,
                  const TrainConfig& config, const std::function<void(const StepRecord&)>& on_step) {
  config.validate();
  if (samples.empty()) throw Error(ErrorCode::kEmptyInput, "no training samples");
  const double lambda = uses_trm(model.kind) ? config.lambda : 0.0;

  ModelGradients grads = ModelGradients::zeros_like(model);
  ModelGradients m1 = ModelGradients::zeros_like(model);
  ModelGradients m2 = ModelGradients::zeros_like(model);
  auto slot_list = slots(model, grads, m1, m2);

  Rng shuffle_rng(sub_seed(config.seed, "train.shuffle"));
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto batch = static_cast<std::size_t>(config.batch_size);

  TrainResult result;
  result.steps_per_epoch = static_cast<int>((samples.size() + batch - 1) / batch);
  int step = 0;
  std::vector<TrainSample> current;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      current.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + batch); ++i) {
        current.push_back(samples[order[i]]);
      }
      for (auto& s : slot_list) std::fill(s.grad, s.grad + s.n, 0.0);
      LossTerms terms;
      try {
        terms = loss_and_gradients(model, current, lambda, &grads);
      } catch (const Error& ex) {
        if (ex.code() == ErrorCode::kDegenerateYt || ex.code() == ErrorCode::kNonFiniteActivation) {
          throw Error(ErrorCode::kNonFiniteLoss, "step " + std::to_string(step) + ": " + ex.what());
        }
        throw;
      }
      if (!std::isfinite(terms.total)) {
        throw Error(ErrorCode::kNonFiniteLoss, "step " + std::to_string(step));
      }

      const double warm = config.warmup_steps > 0
                              ? std::min(1.0, static_cast<double>(step + 1) / config.warmup_steps)
                              : 1.0;
      const double lr = config.lr * warm;
      const double bc1 = 1.0 - std::pow(config.beta1, step + 1);
      const double bc2 = 1.0 - std::pow(config.beta2, step + 1);
      for (auto& s : slot_list) {
        for (std::size_t i = 0; i < s.n; ++i) {
          const double g = s.grad[i];
          s.m[i] = config.beta1 * s.m[i] + (1.0 - config.beta1) * g;
          s.v[i] = config.beta2 * s.v[i] + (1.0 - config.beta2) * g * g;
          s.param[i] -= lr * (s.m[i] / bc1) / (std::sqrt(s.v[i] / bc2) + config.adam_eps);
        }
      }
      StepRecord rec{step, lr, terms};
      result.trace.push_back(rec);
      if (on_step) on_step(rec);
      ++step;
    }
  }
  if (!model.encoder.params().all_finite() || !model.head.all_finite()) {
    throw Error(ErrorCode::kNonFiniteLoss, "parameters diverged by step " + std::to_string(step));
  }
  return result;
}

std::string loss_trace_csv(ModelKind kind, const TrainResult& result) {
  const bool has_topic = uses_trm(kind) || kind == ModelKind::kBaseline2;
  const char* topic_name = kind == ModelKind::kBaseline2 ? "L_BCE" : "L_Topic";
  std::string out = "step,lr,L_MSE,";
  if (has_topic) out += std::string(topic_name) + ",";
  out += "total\n";
  char buf[160];
  for (const auto& r : result.trace) {
    if (has_topic) {
      std::snprintf(buf, sizeof(buf), "%d,%.9g,%.12g,%.12g,%.12g\n", r.step, r.lr, r.loss.mse,
                    r.loss.topic, r.loss.total);
    } else {
      std::snprintf(buf, sizeof(buf), "%d,%.9g,%.12g,%.12g\n", r.step, r.lr, r.loss.mse,
                    r.loss.total);
    }
    out += buf;
  }
  return out;
}

}  // namespace aoes
