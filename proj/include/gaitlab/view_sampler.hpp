#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gaitlab/dataset.hpp"
#include "gaitlab/nn/checkpoint.hpp"
#include "gaitlab/nn/layers.hpp"
#include "gaitlab/silhouette.hpp"

namespace gaitlab {

inline constexpr int kViewClasses = 7;

/// Merged view class: angle and angle+180 share a class, and the mirror
/// angle (180 - a) folds onto a, giving classes 0..6 in 15-degree steps
/// (OU-MVLP angles map exactly).
int view_label_from_degrees(double degrees);

/// Temporal mean of the clip, flattened row-major (H*W values in [0,1]).
std::vector<float> build_view_input(const Clip& clip);

struct ViewClassifierConfig {
  std::vector<int> hidden = {1024, 512, 256, 128};
  double epsilon = 0.1;  // label smoothing
  int epochs = 30;
  int batch_size = 64;
  double lr = 0.05;
  double momentum = 0.9;
  std::uint64_t seed = 0;
};

/// Cross-entropy against (1-eps)*onehot + eps/K; `probs` rows are
/// probability vectors.
double smoothed_cross_entropy(std::span<const double> probs, int target, double epsilon);

/// MLP: hidden FC layers with BN+ReLU, then a linear classification layer.
class ViewClassifier {
 public:
  ViewClassifier(int input_dim, const std::vector<int>& hidden, std::uint64_t seed = 0);

  /// Softmax probabilities, [N, 7] row-major.
  std::vector<double> predict_proba(std::span<const std::vector<float>> inputs);
  std::vector<int> predict(std::span<const std::vector<float>> inputs);

  /// One SGD step on a mini-batch; returns the mean smoothed loss.
  double train_batch(std::span<const std::vector<float>> inputs, std::span<const int> labels, double epsilon,
                     float lr, float momentum);

  int input_dim() const { return input_dim_; }
  nn::Checkpoint to_checkpoint();
  static ViewClassifier from_checkpoint(const nn::Checkpoint& ckpt);

 private:
  nn::Tensor logits(std::span<const std::vector<float>> inputs, nn::Mode mode);
  std::vector<nn::Parameter*> parameters();
  std::vector<nn::Buffer> buffers();
  void export_state_into(nn::Checkpoint& ckpt);

  int input_dim_;
  std::vector<int> hidden_;
  std::vector<nn::SeparateFC> fcs_;
  std::vector<nn::BatchNorm> bns_;
  std::vector<nn::ReLU> relus_;
  nn::SeparateFC out_;
};

struct LabeledClip {
  Clip clip;
  int label = 0;
};

/// Throws MissingClass unless every class 0..6 has an example.
ViewClassifier train_view_classifier(std::span<const LabeledClip> data, const ViewClassifierConfig& cfg);

struct SequenceViewStats {
  double v_bar = 0.0;
  double sigma_sq = 0.0;
  int m = 0;
};

/// Sample mean and (m-1)-normalized variance; m == 1 gives sigma_sq = 0.
SequenceViewStats sequence_view_stats(std::span<const int> predicted_views);

/// Non-overlapping windows of `window` frames (at least one, padded).
std::vector<Clip> view_windows(const GaitSequence& seq, int window = 16);

struct SamplerConfig {
  double dumb_prob = 0.1;
  double dumb_threshold = 1.0;

  void validate() const;
};

/// sigma_sq <= threshold, including 0.
bool is_dumb(const SequenceViewStats& stats, const SamplerConfig& cfg);

/// Picks the dumb pool with probability dumb_prob, else the other pool,
/// then uniformly inside the pool. A single non-empty pool is sampled alone.
class BiasedSampler {
 public:
  BiasedSampler(const DatasetManifest& manifest, const std::map<std::string, SequenceViewStats>& stats,
                const SamplerConfig& cfg);

  const std::string& next(Rng& rng) const;
  const std::vector<std::string>& dumb_pool() const { return dumb_; }
  const std::vector<std::string>& active_pool() const { return active_; }

 private:
  std::vector<std::string> dumb_;
  std::vector<std::string> active_;
  double dumb_prob_;
};

void write_stats_table(const std::filesystem::path& path, const std::map<std::string, SequenceViewStats>& stats);
std::map<std::string, SequenceViewStats> read_stats_table(const std::filesystem::path& path);

}  // namespace gaitlab
