#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace aoes {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  Vocabulary();

  // Every distinct token of `texts`, ids assigned in lexicographic order so
  // the result does not depend on text order.
  static Vocabulary build(const std::vector<std::string>& texts);
  // tokens[0] and tokens[1] must be the reserved PAD/UNK entries.
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  int id(std::string_view token) const;
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Word/punctuation tokens mapped to ids, truncated to max_len.
std::vector<int> tokenize(std::string_view text, const Vocabulary& vocab, int max_len);

struct EncoderConfig {
  int d = 32;
  int layers = 4;
  int max_len = 128;
  bool positional = false;
  // Parameters are drawn from uniform(-init_scale, init_scale).
  double init_scale = 0.05;
  std::uint64_t seed = 1;

  void validate() const;
};

struct LayerParams {
  Matrix wq, wk, wv;  // d x d
  Matrix wo;          // d x d, position-wise affine
  Matrix bo;          // 1 x d
};

// Parameter tensors; the same shape doubles as a gradient accumulator.
struct EncoderParams {
  Matrix embedding;   // V x d
  Matrix positional;  // max_len x d, or empty
  std::vector<LayerParams> layers;
  Matrix pooler_w;  // d x d
  Matrix pooler_b;  // 1 x d

  static EncoderParams zeros_like(const EncoderParams& other);

  // Visits every tensor in a fixed order with a stable name.
  template <typename F>
  void visit(F&& f) {
    f("embedding", embedding);
    if (positional.size() > 0) f("positional", positional);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string p = "layer" + std::to_string(l + 1) + ".";
      f(p + "wq", layers[l].wq);
      f(p + "wk", layers[l].wk);
      f(p + "wv", layers[l].wv);
      f(p + "wo", layers[l].wo);
      f(p + "bo", layers[l].bo);
    }
    f("pooler_w", pooler_w);
    f("pooler_b", pooler_b);
  }
  template <typename F>
  void visit(F&& f) const {
    const_cast<EncoderParams*>(this)->visit(
        [&](const std::string& name, Matrix& m) { f(name, static_cast<const Matrix&>(m)); });
  }

  void set_zero();
  bool all_finite() const;
};

class EncoderModel {
 public:
  EncoderModel() = default;
  // Parameters initialized from config.seed.
  EncoderModel(EncoderConfig config, Vocabulary vocab);
  EncoderModel(EncoderConfig config, Vocabulary vocab, EncoderParams params);

  const EncoderConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  EncoderParams& params() { return params_; }
  const EncoderParams& params() const { return params_; }

 private:
  EncoderConfig config_;
  Vocabulary vocab_;
  EncoderParams params_;
};

struct LayerTrace {
  Matrix q, k, v;  // projections of the layer input
  Matrix attn;     // T x T row-stochastic
  Matrix mixed;    // attn * v
  Matrix state;    // tanh(mixed * wo + bo), T x d
};

// Forward result with everything backward needs.
struct EncoderOutput {
  std::vector<int> ids;
  Matrix embeddings;                // layer 0, T x d
  std::vector<LayerTrace> layers;   // layers 1..L
  RowVector final_mean;             // mean over tokens of layer L
  Vector pooled;                    // X_h, length d

  const Matrix& state(int layer) const {
    return layer == 0 ? embeddings : layers[static_cast<std::size_t>(layer - 1)].state;
  }
};

EncoderOutput forward(const EncoderModel& model, std::span<const int> ids);

// Upstream gradients for backward. Empty members mean zero.
struct EncoderUpstream {
  Vector d_pooled;                // length d
  std::vector<Matrix> d_states;   // size L+1 (index 0 = embeddings), each T x d or empty
};

// Accumulates (+=) parameter gradients into `grads`.
void backward(const EncoderModel& model, const EncoderOutput& out, const EncoderUpstream& upstream,
              EncoderParams& grads);

// h^l = tanh(mean over tokens of layer-l states) for l = 1..L, optionally
// preceded by the embedding layer.
std::vector<Vector> layer_features(const EncoderOutput& out, bool include_layer0 = false);
std::vector<Vector> layer_features(const EncoderModel& model, std::span<const int> ids,
                                   bool include_layer0 = false);

// Gradient of a loss on layer_features(out) with respect to the layer states,
// given the loss gradient on each feature vector. Shapes follow layer_features.
EncoderUpstream feature_upstream(const EncoderOutput& out, const std::vector<Vector>& d_features,
                                 bool include_layer0 = false);

}  // namespace aoes
