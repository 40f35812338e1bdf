#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gaitlab/encoder.hpp"

namespace gaitlab {

struct TripletResult {
  double loss = 0.0;
  Tensor grad;      // d loss / d embeddings, empty unless requested
  long active = 0;  // triplets with a positive hinge, summed over parts
  long valid = 0;   // (anchor, positive, negative) triplets per part
};

/// Batch-all triplet loss on [N, P, D] embeddings: per part, the mean of
/// max(0, d(a,p) - d(a,n) + margin) over the terms that are positive, then
/// averaged over parts. Throws DegenerateBatch when no triplet exists.
TripletResult triplet_loss(const Tensor& embeddings, std::span<const int> labels, double margin,
                           bool want_grad = true);

/// Per-part bias-free FC applied to L2-normalized part features. Every
/// weight column (one output unit, all input channels) is kept unit norm.
class FineTuneHead {
 public:
  FineTuneHead(int parts, int in_dim, int out_dim, std::uint64_t seed = 0);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);
  void renormalize();
  std::vector<nn::Parameter*> parameters() { return {&fc_.weight}; }
  int out_dim() const { return fc_.out_features(); }

 private:
  nn::SeparateFC fc_;
  Tensor input_;
  std::vector<double> norms_;
  Tensor normalized_;
};

/// Encoder (with its projection head) followed by a FineTuneHead.
class TransferModel {
 public:
  TransferModel(Encoder encoder, int head_dim, std::uint64_t seed = 0);

  Tensor forward(std::span<const Clip> clips, Mode mode);
  void backward(const Tensor& dy);

  Encoder& encoder() { return encoder_; }
  FineTuneHead& head() { return head_; }

  nn::Checkpoint checkpoint();
  static TransferModel from_checkpoint(const nn::Checkpoint& ckpt);

 private:
  Encoder encoder_;
  FineTuneHead head_;
};

/// Loads encoder + projection from a pre-training checkpoint (predictor
/// tensors are ignored) and appends a fresh head.
TransferModel attach_finetune_head(const nn::Checkpoint& ckpt, int head_dim = 512, std::uint64_t seed = 0);

struct TransferConfig {
  std::string dataset = "synthetic";
  int p = 8;
  int k = 16;
  int clip_len = 30;
  double margin = 0.3;
  double lr_backbone = 1e-3;
  double lr_projection = 1e-2;
  double lr_head = 1e-1;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double lr_decay = 0.1;
  bool freeze_bn = true;
  std::vector<std::int64_t> milestones = {10000};
  std::int64_t total_steps = 12000;
  double subject_fraction = 1.0;
  bool scale_schedule = true;  // shrink milestones/steps with subject_fraction
  int head_dim = 512;
  std::int64_t checkpoint_every = 0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Batch shape and schedule per dataset. `scratch` selects the
/// training-from-scratch row: uniform lr 0.1, trainable BN, weight decay.
TransferConfig transfer_defaults(const std::string& dataset, bool scratch);

/// Milestones and total steps multiplied by `fraction` (rounded, >= 1 step).
TransferConfig scaled_schedule(TransferConfig cfg, double fraction);

/// Keeps sequences of the first ceil(fraction * S) subjects in sorted id
/// order. Throws MissingLabels if any sequence has no subject.
std::vector<GaitSequence> select_subjects(std::vector<GaitSequence> sequences, double fraction);

/// p subjects, k sequences each; sequences drawn without replacement while
/// a subject has enough of them.
class PkSampler {
 public:
  PkSampler(std::span<const GaitSequence> sequences, int p, int k);
  std::vector<size_t> next(Rng& rng) const;
  size_t subjects() const { return by_subject_.size(); }

 private:
  std::vector<std::vector<size_t>> by_subject_;
  int p_, k_;
};

struct SupervisedMetrics {
  std::int64_t step = 0;
  double loss = 0.0;
  double lr_head = 0.0;
};

class SupervisedTrainer {
 public:
  SupervisedTrainer(TransferConfig cfg, TransferModel& model, std::vector<GaitSequence> sequences);
  SupervisedMetrics step();
  std::int64_t steps_done() const { return step_; }
  /// (backbone, projection, head) learning rates at the current step.
  std::array<double, 3> group_lrs() const;

 private:
  TransferConfig cfg_;
  TransferModel& model_;
  std::vector<GaitSequence> sequences_;
  std::vector<int> labels_;
  PkSampler sampler_;
  Rng rng_;
  std::int64_t step_ = 0;
};

/// Runs to total_steps, writing metrics.jsonl and final.glck into out_dir.
std::filesystem::path run_supervised(const TransferConfig& cfg, TransferModel& model,
                                     std::vector<GaitSequence> sequences, const std::filesystem::path& out_dir,
                                     const std::function<void(const SupervisedMetrics&)>& on_step = {});

}  // namespace gaitlab
