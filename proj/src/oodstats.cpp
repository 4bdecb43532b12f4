#include "aoes/oodstats.hpp"

#include <cmath>
#include <fstream>

#include "aoes/binary_io.hpp"
#include "aoes/error.hpp"

namespace aoes {

namespace {

constexpr char kStatsMagic[9] = "AOESSTAT";
constexpr std::uint32_t kStatsVersion = 1;
constexpr double kConditionLimit = 1e12;

}  // namespace

LayerGaussian make_layer(Vector mean, Matrix cov, double epsilon) {
  LayerGaussian g;
  g.mean = std::move(mean);
  g.cov = std::move(cov);
  g.epsilon = epsilon;
  const auto d = g.cov.rows();
  g.factor.compute(g.cov + epsilon * Matrix::Identity(d, d));
  if (g.factor.info() != Eigen::Success) {
    throw Error(ErrorCode::kNonFiniteFeature, "regularized covariance is not positive definite");
  }
  return g;
}

LayerStats fit(const FeatureSet& features, const FitOptions& options) {
  const std::size_t m = features.size();
  if (m < 2) throw Error(ErrorCode::kTooFewSamples, "need at least 2 samples, got " + std::to_string(m));
  const std::size_t n_layers = features[0].size();
  if (n_layers == 0) throw Error(ErrorCode::kShapeMismatch, "no layers");
  const auto d = features[0][0].size();
  for (const auto& sample : features) {
    if (sample.size() != n_layers) throw Error(ErrorCode::kShapeMismatch, "layer count differs");
    for (const auto& h : sample) {
      if (h.size() != d) throw Error(ErrorCode::kShapeMismatch, "feature width differs");
      if (!h.allFinite()) throw Error(ErrorCode::kNonFiniteFeature, "non-finite feature");
    }
  }

  LayerStats stats;
  stats.d = static_cast<int>(d);
  stats.m = m;
  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t l = 0; l < n_layers; ++l) {
    // Single pass: first and second moments.
    Vector sum = Vector::Zero(d);
    Matrix outer = Matrix::Zero(d, d);
    for (const auto& sample : features) {
      sum += sample[l];
      outer.selfadjointView<Eigen::Lower>().rankUpdate(sample[l]);
    }
    Vector mean = sum * inv_m;
    Matrix cov = outer.selfadjointView<Eigen::Lower>();
    cov = cov * inv_m - mean * mean.transpose();

    // Cancellation diagnostic: squared mean magnitude against the smallest variance.
    const double min_var = std::max(cov.diagonal().minCoeff(), 1e-300);
    bool two_pass = mean.array().square().maxCoeff() / min_var > kConditionLimit ||
                    cov.diagonal().minCoeff() < 0.0;
    if (two_pass) {
      cov.setZero();
      for (const auto& sample : features) {
        const Vector c = sample[l] - mean;
        cov.noalias() += c * c.transpose();
      }
      cov *= inv_m;
    }
    cov = 0.5 * (cov + cov.transpose()).eval();

    double eps = options.epsilon_rel * std::max(1.0, cov.trace() / static_cast<double>(d));
    if (options.force_identity) {
      cov = Matrix::Identity(d, d);
      eps = 0.0;
    }
    auto g = make_layer(std::move(mean), std::move(cov), eps);
    g.two_pass = two_pass;
    stats.layers.push_back(std::move(g));
  }
  return stats;
}

DetectionScore distance(const LayerStats& stats, const std::vector<Vector>& features) {
  if (features.size() != stats.layers.size()) {
    throw Error(ErrorCode::kShapeMismatch, "expected " + std::to_string(stats.layers.size()) +
                                               " layers, got " + std::to_string(features.size()));
  }
  DetectionScore score;
  for (std::size_t l = 0; l < features.size(); ++l) {
    const auto& g = stats.layers[l];
    if (features[l].size() != g.mean.size()) throw Error(ErrorCode::kShapeMismatch, "feature width");
    const Vector diff = features[l] - g.mean;
    const Vector y = g.factor.matrixL().solve(diff);
    const double dl = y.squaredNorm();
    score.per_layer.push_back(dl);
    score.total += dl;
  }
  return score;
}

FeatureSet extract_features(const EncoderModel& encoder, const std::vector<Essay>& essays,
                            bool include_layer0) {
  FeatureSet out;
  out.reserve(essays.size());
  for (const auto& e : essays) {
    const auto ids = tokenize(e.text, encoder.vocab(), encoder.config().max_len);
    out.push_back(layer_features(encoder, ids, include_layer0));
  }
  return out;
}

ExtractedStats batch_extract_and_fit(const EncoderModel& encoder, const std::vector<Essay>& essays,
                                     bool include_layer0, const FitOptions& options) {
  const auto features = extract_features(encoder, essays, include_layer0);
  ExtractedStats out;
  out.stats = fit(features, options);
  out.stats.include_layer0 = include_layer0;
  const std::size_t n_layers = out.stats.layers.size();
  out.summary.mean_norm.assign(n_layers, 0.0);
  for (const auto& sample : features) {
    for (std::size_t l = 0; l < n_layers; ++l) out.summary.mean_norm[l] += sample[l].norm();
  }
  for (auto& v : out.summary.mean_norm) v /= static_cast<double>(features.size());
  return out;
}

void save_stats(const LayerStats& stats, const std::string& checkpoint_hash,
                const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out.write(kStatsMagic, 8);
  binary::put_u32(out, kStatsVersion);
  binary::put_u32(out, stats.include_layer0 ? 1u : 0u);
  binary::put_u64(out, stats.layers.size());
  binary::put_u64(out, static_cast<std::uint64_t>(stats.d));
  binary::put_u64(out, stats.m);
  binary::put_string(out, checkpoint_hash);
  for (const auto& g : stats.layers) {
    binary::put_f64(out, g.epsilon);
    for (Eigen::Index i = 0; i < g.mean.size(); ++i) binary::put_f64(out, g.mean[i]);
    for (Eigen::Index i = 0; i < g.cov.size(); ++i) binary::put_f64(out, g.cov.data()[i]);
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

LayerStats load_stats(const std::filesystem::path& path, std::string* checkpoint_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  binary::expect_magic(in, kStatsMagic);
  const auto version = binary::get_u32(in);
  if (version != kStatsVersion) {
    throw Error(ErrorCode::kBadFormat, "unsupported stats version " + std::to_string(version));
  }
  LayerStats stats;
  stats.include_layer0 = (binary::get_u32(in) & 1u) != 0;
  const auto n_layers = binary::get_u64(in);
  const auto d = binary::get_u64(in);
  stats.m = binary::get_u64(in);
  if (n_layers == 0 || n_layers > 1024 || d == 0 || d > 4096) {
    throw Error(ErrorCode::kBadFormat, "implausible stats shape");
  }
  stats.d = static_cast<int>(d);
  const auto hash = binary::get_string(in, 256);
  if (checkpoint_hash) *checkpoint_hash = hash;
  const auto dd = static_cast<Eigen::Index>(d);
  for (std::uint64_t l = 0; l < n_layers; ++l) {
    const double eps = binary::get_f64(in);
    Vector mean(dd);
    for (Eigen::Index i = 0; i < dd; ++i) mean[i] = binary::get_f64(in);
    Matrix cov(dd, dd);
    for (Eigen::Index i = 0; i < cov.size(); ++i) cov.data()[i] = binary::get_f64(in);
    stats.layers.push_back(make_layer(std::move(mean), std::move(cov), eps));
  }
  return stats;
}

}  // namespace aoes
