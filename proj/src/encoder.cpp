#include "aoes/encoder.hpp"

#include <cmath>
#include <set>

#include "aoes/error.hpp"
#include "aoes/rng.hpp"
#include "aoes/text.hpp"

namespace aoes {

Vocabulary::Vocabulary() : tokens_{"<pad>", "<unk>"} {
  index_.emplace(tokens_[0], kPad);
  index_.emplace(tokens_[1], kUnk);
}

Vocabulary Vocabulary::build(const std::vector<std::string>& texts) {
  std::set<std::string> distinct;
  for (const auto& t : texts) {
    for (auto& w : text::words(t)) distinct.insert(std::move(w));
  }
  std::vector<std::string> tokens{"<pad>", "<unk>"};
  for (const auto& w : distinct) {
    if (w != tokens[0] && w != tokens[1]) tokens.push_back(w);
  }
  return from_tokens(std::move(tokens));
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < 2) throw Error(ErrorCode::kBadFormat, "vocabulary lacks reserved ids");
  Vocabulary v;
  v.tokens_ = std::move(tokens);
  v.index_.clear();
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    if (!v.index_.emplace(v.tokens_[i], static_cast<int>(i)).second) {
      throw Error(ErrorCode::kBadFormat, "duplicate vocabulary token '" + v.tokens_[i] + "'");
    }
  }
  return v;
}

int Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end() || it->second == kPad) return kUnk;
  return it->second;
}

std::vector<int> tokenize(std::string_view s, const Vocabulary& vocab, int max_len) {
  auto words = text::words(s);
  if (words.empty()) throw Error(ErrorCode::kEmptyText, "text has no tokens");
  std::vector<int> ids;
  const auto n = std::min<std::size_t>(words.size(), static_cast<std::size_t>(max_len));
  ids.reserve(n);
  for (std::size_t i = 0; i < n; ++i) ids.push_back(vocab.id(words[i]));
  return ids;
}

void EncoderConfig::validate() const {
  if (layers < 2) throw Error(ErrorCode::kInvalidArgument, "encoder needs at least 2 layers");
  if (d < 8) throw Error(ErrorCode::kInvalidArgument, "encoder width d must be >= 8");
  if (max_len < 1) throw Error(ErrorCode::kInvalidArgument, "max_len must be positive");
  if (!(init_scale > 0.0)) throw Error(ErrorCode::kInvalidArgument, "init_scale must be > 0");
}

EncoderParams EncoderParams::zeros_like(const EncoderParams& other) {
  EncoderParams z = other;
  z.set_zero();
  return z;
}

void EncoderParams::set_zero() {
  visit([](const std::string&, Matrix& m) { m.setZero(); });
}

bool EncoderParams::all_finite() const {
  bool ok = true;
  visit([&](const std::string&, const Matrix& m) { ok = ok && m.allFinite(); });
  return ok;
}

namespace {

EncoderParams shaped_params(const EncoderConfig& c, int vocab_size) {
  EncoderParams p;
  p.embedding = Matrix::Zero(vocab_size, c.d);
  if (c.positional) p.positional = Matrix::Zero(c.max_len, c.d);
  p.layers.resize(static_cast<std::size_t>(c.layers));
  for (auto& layer : p.layers) {
    layer.wq = Matrix::Zero(c.d, c.d);
    layer.wk = Matrix::Zero(c.d, c.d);
    layer.wv = Matrix::Zero(c.d, c.d);
    layer.wo = Matrix::Zero(c.d, c.d);
    layer.bo = Matrix::Zero(1, c.d);
  }
  p.pooler_w = Matrix::Zero(c.d, c.d);
  p.pooler_b = Matrix::Zero(1, c.d);
  return p;
}

Matrix row_softmax(const Matrix& s) {
  Matrix out(s.rows(), s.cols());
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const double m = s.row(r).maxCoeff();
    out.row(r) = (s.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

}  // namespace

EncoderModel::EncoderModel(EncoderConfig config, Vocabulary vocab)
    : config_(config), vocab_(std::move(vocab)) {
  config_.validate();
  params_ = shaped_params(config_, vocab_.size());
  Rng rng(sub_seed(config_.seed, "encoder.init"));
  const double a = config_.init_scale;
  params_.visit([&](const std::string&, Matrix& m) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = rng.uniform(-a, a);
    }
  });
}

EncoderModel::EncoderModel(EncoderConfig config, Vocabulary vocab, EncoderParams params)
    : config_(config), vocab_(std::move(vocab)), params_(std::move(params)) {
  config_.validate();
  const EncoderParams ref = shaped_params(config_, vocab_.size());
  std::vector<std::pair<Eigen::Index, Eigen::Index>> want, got;
  ref.visit([&](const std::string&, const Matrix& m) { want.emplace_back(m.rows(), m.cols()); });
  params_.visit([&](const std::string&, const Matrix& m) { got.emplace_back(m.rows(), m.cols()); });
  if (want != got) throw Error(ErrorCode::kShapeMismatch, "encoder parameter shapes");
}

EncoderOutput forward(const EncoderModel& model, std::span<const int> ids) {
  if (ids.empty()) throw Error(ErrorCode::kEmptyText, "empty token sequence");
  const auto& c = model.config();
  const auto& p = model.params();
  const auto t_len = static_cast<Eigen::Index>(ids.size());
  if (t_len > c.max_len) throw Error(ErrorCode::kShapeMismatch, "sequence longer than max_len");

  EncoderOutput out;
  out.ids.assign(ids.begin(), ids.end());
  out.embeddings.resize(t_len, c.d);
  for (Eigen::Index t = 0; t < t_len; ++t) {
    const int id = ids[static_cast<std::size_t>(t)];
    if (id < 0 || id >= p.embedding.rows()) throw Error(ErrorCode::kShapeMismatch, "token id");
    out.embeddings.row(t) = p.embedding.row(id);
    if (p.positional.size() > 0) out.embeddings.row(t) += p.positional.row(t);
  }

  const double scale = 1.0 / std::sqrt(static_cast<double>(c.d));
  out.layers.resize(p.layers.size());
  const Matrix* x = &out.embeddings;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& w = p.layers[l];
    auto& tr = out.layers[l];
    tr.q = *x * w.wq;
    tr.k = *x * w.wk;
    tr.v = *x * w.wv;
    tr.attn = row_softmax((tr.q * tr.k.transpose()) * scale);
    tr.mixed = tr.attn * tr.v;
    tr.state = ((tr.mixed * w.wo).rowwise() + w.bo.row(0)).array().tanh().matrix();
    x = &tr.state;
  }
  out.final_mean = x->colwise().mean();
  out.pooled = (out.final_mean * p.pooler_w + p.pooler_b).array().tanh().matrix().transpose();

  if (!out.pooled.allFinite()) {
    throw Error(ErrorCode::kNonFiniteActivation, "pooled output");
  }
  for (std::size_t l = 0; l < out.layers.size(); ++l) {
    if (!out.layers[l].state.allFinite()) {
      throw Error(ErrorCode::kNonFiniteActivation, "layer " + std::to_string(l + 1));
    }
  }
  return out;
}

void backward(const EncoderModel& model, const EncoderOutput& out, const EncoderUpstream& up,
              EncoderParams& g) {
  const auto& c = model.config();
  const auto& p = model.params();
  const auto t_len = static_cast<Eigen::Index>(out.ids.size());
  const auto n_layers = p.layers.size();
  const double scale = 1.0 / std::sqrt(static_cast<double>(c.d));

  auto upstream_state = [&](std::size_t layer) -> Matrix {
    if (layer < up.d_states.size() && up.d_states[layer].size() > 0) {
      if (up.d_states[layer].rows() != t_len || up.d_states[layer].cols() != c.d) {
        throw Error(ErrorCode::kShapeMismatch, "upstream state gradient");
      }
      return up.d_states[layer];
    }
    return Matrix::Zero(t_len, c.d);
  };

  Matrix d_h = upstream_state(n_layers);
  if (up.d_pooled.size() > 0) {
    const RowVector u =
        (up.d_pooled.array() * (1.0 - out.pooled.array().square())).matrix().transpose();
    g.pooler_w.noalias() += out.final_mean.transpose() * u;
    g.pooler_b.row(0) += u;
    const RowVector d_mean = (u * p.pooler_w.transpose()) / static_cast<double>(t_len);
    d_h.rowwise() += d_mean;
  }

  for (std::size_t li = n_layers; li-- > 0;) {
    const auto& w = p.layers[li];
    const auto& tr = out.layers[li];
    auto& gw = g.layers[li];
    const Matrix& x = out.state(static_cast<int>(li));

    const Matrix d_y = (d_h.array() * (1.0 - tr.state.array().square())).matrix();
    gw.wo.noalias() += tr.mixed.transpose() * d_y;
    gw.bo.row(0) += d_y.colwise().sum();
    const Matrix d_mixed = d_y * w.wo.transpose();
    const Matrix d_attn = d_mixed * tr.v.transpose();
    const Matrix d_v = tr.attn.transpose() * d_mixed;
    const Eigen::VectorXd row_dot = (d_attn.array() * tr.attn.array()).rowwise().sum();
    const Matrix d_s =
        (tr.attn.array() * (d_attn.colwise() - row_dot).array()).matrix() * scale;
    const Matrix d_q = d_s * tr.k;
    const Matrix d_k = d_s.transpose() * tr.q;
    gw.wq.noalias() += x.transpose() * d_q;
    gw.wk.noalias() += x.transpose() * d_k;
    gw.wv.noalias() += x.transpose() * d_v;
    Matrix d_x = d_q * w.wq.transpose();
    d_x.noalias() += d_k * w.wk.transpose();
    d_x.noalias() += d_v * w.wv.transpose();
    d_h = d_x + upstream_state(li);
  }

  for (Eigen::Index t = 0; t < t_len; ++t) {
    g.embedding.row(out.ids[static_cast<std::size_t>(t)]) += d_h.row(t);
    if (g.positional.size() > 0) g.positional.row(t) += d_h.row(t);
  }
}

std::vector<Vector> layer_features(const EncoderOutput& out, bool include_layer0) {
  std::vector<Vector> feats;
  const int first = include_layer0 ? 0 : 1;
  for (int l = first; l <= static_cast<int>(out.layers.size()); ++l) {
    feats.push_back(out.state(l).colwise().mean().array().tanh().matrix().transpose());
  }
  return feats;
}

std::vector<Vector> layer_features(const EncoderModel& model, std::span<const int> ids,
                                   bool include_layer0) {
  return layer_features(forward(model, ids), include_layer0);
}

EncoderUpstream feature_upstream(const EncoderOutput& out, const std::vector<Vector>& d_features,
                                 bool include_layer0) {
  EncoderUpstream up;
  const std::size_t n_layers = out.layers.size();
  up.d_states.resize(n_layers + 1);
  const auto feats = layer_features(out, include_layer0);
  if (d_features.size() != feats.size()) {
    throw Error(ErrorCode::kShapeMismatch, "feature gradient count");
  }
  const std::size_t first = include_layer0 ? 0 : 1;
  for (std::size_t i = 0; i < feats.size(); ++i) {
    const Matrix& s = out.state(static_cast<int>(first + i));
    const RowVector g = (d_features[i].array() * (1.0 - feats[i].array().square())).matrix().transpose() /
                        static_cast<double>(s.rows());
    up.d_states[first + i] = g.replicate(s.rows(), 1);
  }
  return up;
}

}  // namespace aoes
