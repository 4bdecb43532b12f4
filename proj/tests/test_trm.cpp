#include "doctest.h"

#include <cmath>

#include "aoes/error.hpp"
#include "aoes/rng.hpp"
#include "aoes/trm.hpp"
#include "oracles.hpp"

using namespace aoes;

namespace {

Vocabulary vocab() {
  return Vocabulary::build({"alpha beta gamma delta epsilon zeta eta theta iota kappa lambda mu"});
}

ScoringModel tiny_model(ModelKind kind, std::uint64_t seed, double scale = 0.5) {
  EncoderConfig c;
  c.d = 8;
  c.layers = 2;
  c.max_len = 16;
  c.init_scale = scale;
  c.seed = seed;
  ScoringModel m;
  m.kind = kind;
  m.encoder = EncoderModel(c, vocab());
  m.head = init_head(8, scale, seed + 1);
  return m;
}

// Targets follow the count of a "good" token so the data is learnable.
std::vector<TrainSample> learnable_samples(int n, std::uint64_t seed, const Vocabulary& v) {
  Rng rng(seed);
  std::vector<TrainSample> out;
  for (int i = 0; i < n; ++i) {
    TrainSample s;
    const int len = 4 + static_cast<int>(rng.below(6));
    int good = 0;
    for (int t = 0; t < len; ++t) {
      const bool g = rng.bernoulli(0.5);
      good += g;
      s.ids.push_back(g ? v.id("alpha") : 2 + static_cast<int>(rng.below(v.size() - 2)));
    }
    s.target = static_cast<double>(good) / len;
    out.push_back(s);
  }
  return out;
}

TRMOutput out_of(double y_h, double t_logit) {
  TRMOutput o;
  o.y_h = y_h;
  o.t_logit = t_logit;
  o.y_t = sigmoid(t_logit);
  o.y_s = o.y_t * o.y_h;
  return o;
}

}  // namespace

TEST_CASE("head forward examples") {
  auto head = TRMHead::zeros(8);
  Vector x = Vector::Constant(8, 0.3);
  auto o = head_forward(head, x);
  CHECK(o.y_h == 0.0);
  CHECK(o.y_t == 0.5);
  CHECK(o.y_s == 0.0);

  head.f_h.b = 0.8;
  o = head_forward(head, x);
  CHECK(o.y_s == doctest::Approx(0.4));
}

TEST_CASE("y_s is exactly y_t * y_h") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    TRMHead h = init_head(8, 2.0, trial);
    h.f_h.b = rng.uniform(-3, 3);
    h.f_t.b = rng.uniform(-3, 3);
    Vector x(8);
    for (int i = 0; i < 8; ++i) x(i) = rng.uniform(-1, 1);
    const auto o = head_forward(h, x);
    CHECK(o.y_s == o.y_t * o.y_h);
    CHECK(o.y_t > 0.0);
    CHECK(o.y_t < 1.0);
  }
}

TEST_CASE("sigmoid and log_sigmoid are stable") {
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(sigmoid(800.0) == 1.0);
  CHECK(sigmoid(-800.0) >= 0.0);
  CHECK(log_sigmoid(-800.0) == doctest::Approx(-800.0));
  CHECK(log_sigmoid(0.0) == doctest::Approx(std::log(0.5)));
  CHECK(std::isfinite(log_sigmoid(-1e6)));
}

TEST_CASE("hybrid loss examples") {
  // Single sample y_g = 1, y_h = 1, logit 0.
  std::vector<TRMOutput> o = {out_of(1.0, 0.0)};
  std::vector<double> y = {1.0};
  const auto r = hybrid_loss(o, y, 0.6);
  CHECK(r.terms.mse == doctest::Approx(0.25));
  CHECK(r.terms.topic == doctest::Approx(0.6931471806));
  CHECK(r.terms.total == doctest::Approx(0.6658883083));

  // Total = MSE + lambda * topic.
  CHECK(0.1 + 0.6 * 0.2 == doctest::Approx(0.22));
  CHECK(r.terms.total == doctest::Approx(r.terms.mse + 0.6 * r.terms.topic).epsilon(1e-15));

  // y_t near 1 and y_s = y_g gives a vanishing loss.
  std::vector<TRMOutput> near = {out_of(0.7, 30.0)};
  std::vector<double> g = {near[0].y_s};
  CHECK(hybrid_loss(near, g, 0.6).terms.total < 1e-12);
}

TEST_CASE("hybrid loss gradients follow the closed forms") {
  Rng rng(8);
  std::vector<TRMOutput> o;
  std::vector<double> y;
  for (int i = 0; i < 5; ++i) {
    o.push_back(out_of(rng.uniform(-1, 2), rng.uniform(-3, 3)));
    y.push_back(rng.uniform());
  }
  const double lambda = 0.6, n = 5.0;
  for (auto topic : {TopicLoss::kLog, TopicLoss::kL2}) {
    const auto r = hybrid_loss(o, y, lambda, topic);
    for (int i = 0; i < 5; ++i) {
      const double e = y[i] - o[i].y_s;
      CHECK(r.d_yh[i] == doctest::Approx(-2.0 / n * e * o[i].y_t));
      const double topic_grad = topic == TopicLoss::kLog ? -lambda / (n * o[i].y_t)
                                                         : -2.0 * lambda * (1 - o[i].y_t) / n;
      CHECK(r.d_yt[i] == doctest::Approx(-2.0 / n * e * o[i].y_h + topic_grad));
      // Chain through the sigmoid, checked by central difference on the logit.
      auto shifted = o;
      const double h = 1e-6;
      shifted[i] = out_of(o[i].y_h, o[i].t_logit + h);
      const double up = hybrid_loss(shifted, y, lambda, topic).terms.total;
      shifted[i] = out_of(o[i].y_h, o[i].t_logit - h);
      const double dn = hybrid_loss(shifted, y, lambda, topic).terms.total;
      CHECK(oracle::rel_error(r.d_tlogit[i], (up - dn) / (2 * h)) < 1e-6);
    }
  }
}

TEST_CASE("topic loss is strictly decreasing in y_t") {
  std::vector<double> y = {0.5};
  double prev = std::numeric_limits<double>::infinity();
  for (double logit = -6; logit <= 12; logit += 0.5) {
    std::vector<TRMOutput> o = {out_of(0.5, logit)};
    const double t = hybrid_loss(o, y, 1.0).terms.topic;
    CHECK(t < prev);
    CHECK(t > 0.0);
    prev = t;
  }
}

TEST_CASE("saturated y_t raises DegenerateYt") {
  TRMOutput o;
  o.y_h = 1.0;
  o.y_t = 1.0;
  o.y_s = 1.0;
  o.t_logit = 1e3;
  std::vector<TRMOutput> v = {o};
  std::vector<double> y = {1.0};
  try {
    hybrid_loss(v, y, 0.6);
    FAIL("expected DegenerateYt");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kDegenerateYt);
  }
  CHECK_THROWS_AS(hybrid_loss({}, {}, 0.6), Error);
}

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK(c.lambda == 0.6);
  CHECK(c.lr == 5e-4);
  CHECK(c.warmup_steps == 500);
  CHECK(c.epochs == 20);
  CHECK(c.batch_size == 16);
  c.lambda = -1;
  CHECK_THROWS_AS(c.validate(), Error);
  c = {};
  c.lr = 0;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("end-to-end gradients match finite differences") {
  for (auto kind : {ModelKind::kAoes, ModelKind::kAoesL2, ModelKind::kAoesNoTrm,
                    ModelKind::kBaseline1, ModelKind::kBaseline2}) {
    auto m = tiny_model(kind, 3);
    auto batch = learnable_samples(3, 4, m.encoder.vocab());
    batch[2].on_topic = false;
    batch[2].target = 0.0;
    INFO(model_kind_name(kind));
    CHECK(oracle::model_gradient_error(m, batch, 0.6) <= 1e-4);
  }
}

TEST_CASE("lambda zero reduces to plain MSE") {
  auto m = tiny_model(ModelKind::kAoes, 5);
  const auto batch = learnable_samples(6, 6, m.encoder.vocab());
  const auto t = loss_and_gradients(m, batch, 0.0, nullptr);
  double mse = 0.0;
  for (const auto& s : batch) {
    const auto p = predict(m, s.ids);
    mse += std::pow(s.target - p.head.y_s, 2);
  }
  CHECK(t.total == doctest::Approx(mse / batch.size()).epsilon(1e-12));
}

TEST_CASE("training descends, is deterministic and raises mean y_t") {
  auto a = tiny_model(ModelKind::kAoes, 7, 0.3);
  auto b = a;
  const auto samples = learnable_samples(50, 9, a.encoder.vocab());
  TrainConfig c;
  c.lr = 3e-3;
  c.warmup_steps = 10;
  c.epochs = 15;
  c.batch_size = 10;
  c.seed = 11;

  double yt0 = 0.0;
  for (const auto& s : samples) yt0 += predict(a, s.ids).head.y_t / samples.size();

  const auto ra = train(a, samples, c);
  const auto rb = train(b, samples, c);
  const auto ep = ra.epoch_mean_loss();
  REQUIRE(ep.size() == 15);
  CHECK(ep.back() < ep.front());
  CHECK(ra.trace.size() == 75);
  CHECK(ra.trace[0].lr == doctest::Approx(3e-4));
  CHECK(ra.trace.back().lr == doctest::Approx(3e-3));
  CHECK(a.encoder.params().embedding == b.encoder.params().embedding);
  CHECK(a.head.f_t.w == b.head.f_t.w);

  double yt1 = 0.0;
  for (const auto& s : samples) yt1 += predict(a, s.ids).head.y_t / samples.size();
  CHECK(yt1 > yt0);

  const auto csv = loss_trace_csv(ModelKind::kAoes, ra);
  CHECK(csv.rfind("step,lr,L_MSE,L_Topic,total\n", 0) == 0);
  CHECK(loss_trace_csv(ModelKind::kBaseline2, ra).rfind("step,lr,L_MSE,L_BCE,total\n", 0) == 0);
  CHECK(loss_trace_csv(ModelKind::kAoesNoTrm, ra).rfind("step,lr,L_MSE,total\n", 0) == 0);
}

TEST_CASE("non-finite training aborts with the step index") {
  auto m = tiny_model(ModelKind::kAoes, 2);
  m.head.f_t.b = 1e3;
  const auto samples = learnable_samples(8, 1, m.encoder.vocab());
  TrainConfig c;
  c.epochs = 1;
  try {
    train(m, samples, c);
    FAIL("expected NonFiniteLoss");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kNonFiniteLoss);
    CHECK(std::string(e.what()).find("step 0") != std::string::npos);
  }
}

TEST_CASE("model kind names round trip") {
  for (auto k : {ModelKind::kAoes, ModelKind::kAoesNoTrm, ModelKind::kAoesL2,
                 ModelKind::kBaseline1, ModelKind::kBaseline2}) {
    CHECK(parse_model_kind(model_kind_name(k)) == k);
  }
  CHECK_THROWS_AS(parse_model_kind("bert"), Error);
}
