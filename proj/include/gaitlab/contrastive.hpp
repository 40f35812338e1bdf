#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gaitlab/augmentation.hpp"
#include "gaitlab/encoder.hpp"
#include "gaitlab/view_sampler.hpp"

namespace gaitlab {

/// kDivide: logits = cos / tau. kScale: logits = cos * tau.
enum class TauMode { kDivide, kScale };

std::string to_string(TauMode mode);
TauMode tau_mode_from(const std::string& name);

inline double logit_factor(double tau, TauMode mode) { return mode == TauMode::kDivide ? 1.0 / tau : tau; }

/// -log softmax(cos(q, keys) * factor)[positive]. Throws ZeroNormVector.
double info_nce(std::span<const double> q, std::span<const std::vector<double>> keys, int positive, double tau,
                TauMode mode = TauMode::kDivide);

/// Per-view embeddings of n sequences: `*_a[i]` and `*_b[i]` come from the
/// two clips of sequence i. All tensors are [n, P, D].
struct PairBatch {
  const Tensor* key_a;
  const Tensor* key_b;
  const Tensor* query_a;  // predictor(key_a)
  const Tensor* query_b;
};

struct PairLoss {
  double loss = 0.0;
  Tensor d_query_a;  // gradients w.r.t. the queries only; keys are constants
  Tensor d_query_b;
};

/// Mean over sequences and parts of 1/2 L(q_a, k_b) + 1/2 L(q_b, k_a), with
/// each L an InfoNCE over the in-batch keys of the other view. Without
/// negatives each L is replaced by -cos(q, k+).
PairLoss symmetrized_batch_loss(const PairBatch& batch, double tau, TauMode mode = TauMode::kDivide,
                                bool negatives = true, bool want_grad = true);

/// Mean over parts and dimensions of the batch standard deviation of the
/// L2-normalized part embeddings. Near zero when the encoder collapses.
double embedding_std(const Tensor& embeddings);

struct PretrainConfig {
  int batch_size = 512;
  int clip_len = 16;
  double tau = 16.0;
  TauMode tau_mode = TauMode::kDivide;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double lr_decay = 0.1;
  std::vector<std::int64_t> milestones = {80000, 120000};
  std::int64_t total_steps = 150000;
  std::int64_t checkpoint_every = 10000;
  bool spatial = true;
  bool intraseq = true;
  bool sampling = true;
  bool negatives = true;
  double subset_frac = 1.0;
  std::uint64_t seed = 0;
  EncoderConfig encoder;
  SpatialAugConfig augment;
  SamplerConfig sampler;

  void validate() const;
};

double lr_schedule(std::int64_t step, double lr0, std::span<const std::int64_t> milestones, double decay);
inline double lr_schedule(std::int64_t step, const PretrainConfig& cfg) {
  return lr_schedule(step, cfg.lr, cfg.milestones, cfg.lr_decay);
}

struct StepMetrics {
  std::int64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double emb_std = 0.0;
};

std::string to_json_line(const StepMetrics& m);

/// Random `frac` of the sequences (at least one), order preserved.
std::vector<GaitSequence> select_subset(std::vector<GaitSequence> sequences, double frac, std::uint64_t seed);

/// Owns encoder, predictor and RNG; one `step()` is one SGD update.
class Pretrainer {
 public:
  Pretrainer(PretrainConfig cfg, std::vector<GaitSequence> sequences,
             std::optional<std::map<std::string, SequenceViewStats>> stats = std::nullopt);

  StepMetrics step();
  std::int64_t steps_done() const { return step_; }

  Encoder& encoder() { return encoder_; }
  Predictor& predictor() { return predictor_; }
  const PretrainConfig& config() const { return cfg_; }

  /// Sequence indices that make up the next batch (advances the RNG).
  std::vector<size_t> draw_batch();

  nn::Checkpoint checkpoint();
  void restore(const nn::Checkpoint& ckpt);

 private:
  std::vector<nn::Parameter*> all_parameters();

  PretrainConfig cfg_;
  std::vector<GaitSequence> sequences_;
  std::map<std::string, size_t> index_;
  std::optional<BiasedSampler> sampler_;
  Encoder encoder_;
  Predictor predictor_;
  Rng rng_;
  std::int64_t step_ = 0;
};

struct PretrainRun {
  std::vector<StepMetrics> metrics;
  std::filesystem::path final_checkpoint;
};

/// Runs to cfg.total_steps, writing `metrics.jsonl` and checkpoints
/// `ckpt_<step>.glck` / `final.glck` into out_dir. `on_step` may be empty.
PretrainRun run_pretraining(const PretrainConfig& cfg, std::vector<GaitSequence> sequences,
                            std::optional<std::map<std::string, SequenceViewStats>> stats,
                            const std::filesystem::path& out_dir,
                            const std::function<void(const StepMetrics&)>& on_step = {});

}  // namespace gaitlab
