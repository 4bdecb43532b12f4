#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Cholesky>

#include "aoes/corpus.hpp"
#include "aoes/encoder.hpp"

namespace aoes {

// features[i][l] is the layer-l feature vector of sample i.
using FeatureSet = std::vector<std::vector<Vector>>;

struct FitOptions {
  // Shrinkage eps = epsilon_rel * max(1, trace(Sigma) / d).
  double epsilon_rel = 1e-6;
  // Test hook: replace every covariance with the identity and use no shrinkage.
  bool force_identity = false;
};

struct LayerGaussian {
  Vector mean;
  Matrix cov;      // population covariance (1/M)
  double epsilon = 0.0;
  Eigen::LLT<Matrix> factor;  // of cov + epsilon * I
  bool two_pass = false;      // fallback path was used
};

struct LayerStats {
  int d = 0;
  std::size_t m = 0;
  bool include_layer0 = false;
  std::vector<LayerGaussian> layers;

  int num_layers() const { return static_cast<int>(layers.size()); }
};

struct DetectionScore {
  std::vector<double> per_layer;
  double total = 0.0;
};

LayerStats fit(const FeatureSet& features, const FitOptions& options = {});

// Rebuilds the factorization from mean/cov/epsilon (used after loading).
LayerGaussian make_layer(Vector mean, Matrix cov, double epsilon);

DetectionScore distance(const LayerStats& stats, const std::vector<Vector>& features);

struct FeatureSummary {
  std::vector<double> mean_norm;  // per layer, mean of ||h^l||
};

struct ExtractedStats {
  LayerStats stats;
  FeatureSummary summary;
};

FeatureSet extract_features(const EncoderModel& encoder, const std::vector<Essay>& essays,
                            bool include_layer0 = false);

ExtractedStats batch_extract_and_fit(const EncoderModel& encoder, const std::vector<Essay>& essays,
                                     bool include_layer0 = false, const FitOptions& options = {});

// Versioned little-endian container; `checkpoint_hash` pairs it to a model.
void save_stats(const LayerStats& stats, const std::string& checkpoint_hash,
                const std::filesystem::path& path);
LayerStats load_stats(const std::filesystem::path& path, std::string* checkpoint_hash = nullptr);

}  // namespace aoes
