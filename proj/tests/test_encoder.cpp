#include "doctest.h"

#include <filesystem>
#include <map>

#include "aoes/checkpoint.hpp"
#include "aoes/encoder.hpp"
#include "aoes/error.hpp"
#include "aoes/io.hpp"
#include "aoes/rng.hpp"
#include "oracles.hpp"

using namespace aoes;
namespace fs = std::filesystem;

namespace {

Vocabulary small_vocab() {
  return Vocabulary::build({"the cat sat on the mat. a dog ran far away, fast!"});
}

EncoderModel small_model(std::uint64_t seed, bool positional = false, double scale = 0.5) {
  EncoderConfig c;
  c.d = 8;
  c.layers = 2;
  c.max_len = 16;
  c.positional = positional;
  c.init_scale = scale;
  c.seed = seed;
  return EncoderModel(c, small_vocab());
}

struct Probe {
  Vector r;
  std::vector<Vector> s;
};

Probe make_probe(int d, int n_features, std::uint64_t seed) {
  Rng rng(seed);
  Probe p;
  p.r = Vector(d);
  for (int i = 0; i < d; ++i) p.r(i) = rng.uniform(-1, 1);
  for (int l = 0; l < n_features; ++l) {
    Vector v(d);
    for (int i = 0; i < d; ++i) v(i) = rng.uniform(-1, 1);
    p.s.push_back(v);
  }
  return p;
}

// Scalar probe loss r.X_h + sum_l s_l.h^l.
double probe_loss(const EncoderModel& m, const std::vector<int>& ids, const Probe& p) {
  const auto out = forward(m, ids);
  double v = p.r.dot(out.pooled);
  const auto f = layer_features(out);
  for (std::size_t l = 0; l < f.size(); ++l) v += p.s[l].dot(f[l]);
  return v;
}

// Max relative error per parameter tensor name.
std::map<std::string, double> group_errors(EncoderModel& m, const std::vector<int>& ids,
                                           const Probe& p) {
  const auto out = forward(m, ids);
  auto up = feature_upstream(out, p.s);
  up.d_pooled = p.r;
  auto grads = EncoderParams::zeros_like(m.params());
  backward(m, out, up, grads);
  std::vector<std::pair<std::string, Matrix*>> params, gs;
  m.params().visit([&](const std::string& n, Matrix& x) { params.emplace_back(n, &x); });
  grads.visit([&](const std::string& n, Matrix& x) { gs.emplace_back(n, &x); });
  std::map<std::string, double> err;
  const double h = 1e-5;
  for (std::size_t t = 0; t < params.size(); ++t) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < params[t].second->size(); ++i) {
      double& w = params[t].second->data()[i];
      const double saved = w;
      w = saved + h;
      const double up_l = probe_loss(m, ids, p);
      w = saved - h;
      const double dn_l = probe_loss(m, ids, p);
      w = saved;
      worst = std::max(worst, oracle::rel_error(gs[t].second->data()[i], (up_l - dn_l) / (2 * h)));
    }
    err[params[t].first] = worst;
  }
  return err;
}

}  // namespace

TEST_CASE("tokenize looks up words and punctuation") {
  const auto v = small_vocab();
  auto ids = tokenize("The cat sat.", v, 16);
  REQUIRE(ids.size() == 4);
  CHECK(ids[0] == v.id("the"));
  CHECK(ids[1] == v.id("cat"));
  CHECK(ids[2] == v.id("sat"));
  CHECK(ids[3] == v.id("."));
  CHECK(v.id("zebra") == Vocabulary::kUnk);
  CHECK(tokenize("zebra", v, 16) == std::vector<int>{Vocabulary::kUnk});
  CHECK_THROWS_AS(tokenize("   ", v, 16), Error);
}

TEST_CASE("tokenize truncates to max_len") {
  std::string text;
  for (int i = 0; i < 500; ++i) text += "cat ";
  CHECK(tokenize(text, small_vocab(), 128).size() == 128);
}

TEST_CASE("vocabulary is order independent and reserves PAD/UNK") {
  auto a = Vocabulary::build({"b a", "c"});
  auto b = Vocabulary::build({"c", "a b"});
  CHECK(a.tokens() == b.tokens());
  CHECK(a.token(Vocabulary::kPad) != a.token(Vocabulary::kUnk));
  CHECK(a.size() == 5);
  for (int i = 2; i < a.size(); ++i) CHECK(a.id(a.token(i)) == i);
}

TEST_CASE("config validation") {
  EncoderConfig c;
  c.layers = 1;
  CHECK_THROWS_AS(c.validate(), Error);
  c = {};
  c.d = 4;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("zero pooler gives zero pooled output") {
  auto m = small_model(3);
  m.params().pooler_w.setZero();
  m.params().pooler_b.setZero();
  const auto out = forward(m, tokenize("a dog ran", m.vocab(), 16));
  CHECK(out.pooled.norm() == 0.0);
}

TEST_CASE("single token attention returns its value projection") {
  auto m = small_model(4);
  const std::vector<int> ids = {m.vocab().id("dog")};
  const auto out = forward(m, ids);
  CHECK(out.layers[0].attn(0, 0) == doctest::Approx(1.0));
  CHECK((out.layers[0].mixed - out.layers[0].v).norm() < 1e-15);
}

TEST_CASE("forward matches the loop oracle") {
  for (bool positional : {false, true}) {
    auto m = small_model(5, positional);
    const std::vector<int> ids = {2, 5, 7};
    const auto out = forward(m, ids);
    const auto ref = oracle::encoder_forward(m, ids);
    for (int l = 0; l <= 2; ++l) {
      for (int t = 0; t < 3; ++t) {
        for (int j = 0; j < 8; ++j) {
          const double a = out.state(l)(t, j), b = ref.states[l][t][j];
          CHECK(std::fabs(a - b) <= 1e-10 * std::max(1.0, std::fabs(b)));
        }
      }
    }
    for (int j = 0; j < 8; ++j) {
      CHECK(std::fabs(out.pooled(j) - ref.pooled[j]) <= 1e-10 * std::max(1.0, std::fabs(ref.pooled[j])));
    }
  }
}

TEST_CASE("forward is deterministic and bounded") {
  auto m = small_model(6);
  const auto ids = tokenize("the dog ran far away, fast!", m.vocab(), 16);
  const auto a = forward(m, ids), b = forward(m, ids);
  CHECK(a.pooled == b.pooled);
  CHECK(a.pooled.cwiseAbs().maxCoeff() < 1.0);
  for (const auto& f : layer_features(a, true)) CHECK(f.cwiseAbs().maxCoeff() < 1.0);
}

TEST_CASE("non-finite parameters raise NonFiniteActivation") {
  auto m = small_model(6);
  m.params().layers[0].wo(0, 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    forward(m, std::vector<int>{2, 3});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kNonFiniteActivation);
  }
}

TEST_CASE("same seed gives identical initialization") {
  auto a = small_model(9), b = small_model(9), c = small_model(10);
  CHECK(a.params().embedding == b.params().embedding);
  CHECK(a.params().layers[1].wq == b.params().layers[1].wq);
  CHECK(a.params().embedding != c.params().embedding);
  CHECK(a.params().embedding.cwiseAbs().maxCoeff() <= 0.5);
}

TEST_CASE("zero upstream gives zero gradients") {
  auto m = small_model(11);
  const auto out = forward(m, std::vector<int>{2, 3, 4});
  EncoderUpstream up;
  auto g = EncoderParams::zeros_like(m.params());
  backward(m, out, up, g);
  g.visit([](const std::string&, const Matrix& x) { CHECK(x.cwiseAbs().maxCoeff() == 0.0); });
}

TEST_CASE("unused embedding rows get zero gradient") {
  auto m = small_model(12);
  const std::vector<int> ids = {2, 3};
  const auto out = forward(m, ids);
  auto up = feature_upstream(out, make_probe(8, 2, 1).s);
  up.d_pooled = make_probe(8, 2, 2).r;
  auto g = EncoderParams::zeros_like(m.params());
  backward(m, out, up, g);
  for (int r = 0; r < g.embedding.rows(); ++r) {
    if (r == 2 || r == 3) {
      CHECK(g.embedding.row(r).norm() > 0.0);
    } else {
      CHECK(g.embedding.row(r).norm() == 0.0);
    }
  }
}

TEST_CASE("every parameter group passes the finite-difference check") {
  for (std::uint64_t seed : {21, 22, 23}) {
    for (bool positional : {false, true}) {
      auto m = small_model(seed, positional);
      Rng rng(seed);
      std::vector<int> ids;
      for (int i = 0; i < 5; ++i) ids.push_back(2 + static_cast<int>(rng.below(m.vocab().size() - 2)));
      const auto errs = group_errors(m, ids, make_probe(8, 2, seed + 100));
      for (const auto& [name, e] : errs) {
        INFO(name << " seed " << seed);
        CHECK(e <= 1e-4);
      }
      CHECK(errs.count("positional") == (positional ? 1u : 0u));
    }
  }
}

TEST_CASE("layer feature contracts") {
  EncoderConfig c;
  c.d = 12;
  c.layers = 4;
  EncoderModel m(c, small_vocab());
  const auto out = forward(m, std::vector<int>{2, 3, 4});
  const auto f = layer_features(out);
  REQUIRE(f.size() == 4);
  for (const auto& v : f) CHECK(v.size() == 12);
  CHECK(layer_features(out, true).size() == 5);

  EncoderOutput zero = out;
  for (auto& l : zero.layers) l.state.setZero();
  for (const auto& v : layer_features(zero)) CHECK(v.norm() == 0.0);

  EncoderOutput big = out;
  for (auto& l : big.layers) l.state *= 10.0;
  const auto fb = layer_features(big);
  for (std::size_t l = 0; l < f.size(); ++l) {
    for (int j = 0; j < 12; ++j) {
      if (f[l](j) != 0.0) CHECK(std::fabs(fb[l](j)) >= std::fabs(f[l](j)));
    }
  }
}

TEST_CASE("checkpoint round trip preserves every tensor") {
  ScoringModel sm;
  sm.kind = ModelKind::kAoesL2;
  sm.encoder = small_model(31, true);
  sm.head = init_head(8, 0.1, 31);
  sm.prompt_id = "p7";
  sm.score_min = 2;
  sm.score_max = 12;
  const fs::path dir = fs::path(AOES_TEST_TMP) / "encoder";
  fs::create_directories(dir);
  save_checkpoint(sm, dir / "a.bin");
  const auto back = load_checkpoint(dir / "a.bin");
  CHECK(back.kind == sm.kind);
  CHECK(back.prompt_id == "p7");
  CHECK(back.score_min == 2);
  CHECK(back.score_max == 12);
  CHECK(back.encoder.vocab().tokens() == sm.encoder.vocab().tokens());
  CHECK(back.encoder.config().positional);
  std::vector<Matrix> a, b;
  sm.encoder.params().visit([&](const std::string&, const Matrix& x) { a.push_back(x); });
  back.encoder.params().visit([&](const std::string&, const Matrix& x) { b.push_back(x); });
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  CHECK(back.head.f_t.w == sm.head.f_t.w);
  CHECK(back.head.f_h.b == sm.head.f_h.b);

  save_checkpoint(back, dir / "b.bin");
  CHECK(file_sha256(dir / "a.bin") == file_sha256(dir / "b.bin"));
}

TEST_CASE("corrupt checkpoints are rejected") {
  const fs::path dir = fs::path(AOES_TEST_TMP) / "encoder";
  fs::create_directories(dir);
  write_text_file(dir / "junk.bin", "NOTACKPT and some bytes");
  CHECK_THROWS_AS(load_checkpoint(dir / "junk.bin"), Error);
  ScoringModel sm;
  sm.encoder = small_model(32);
  sm.head = init_head(8, 0.1, 32);
  save_checkpoint(sm, dir / "t.bin");
  auto bytes = read_text_file(dir / "t.bin");
  write_text_file(dir / "t.bin", bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(load_checkpoint(dir / "t.bin"), Error);
}

TEST_CASE("sha256 known answer") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
