#include "gaitlab/contrastive.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <set>

#include "gaitlab/errors.hpp"

namespace gaitlab {

namespace {

using MatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Rows are the unit-normalized part-p vectors of t; norms receives |v|.
MatD unit_rows(const Tensor& t, int part, Eigen::VectorXd* norms) {
  const int n = t.dim(0), parts = t.dim(1), d = t.dim(2);
  MatD out(n, d);
  if (norms) norms->resize(n);
  for (int i = 0; i < n; ++i) {
    const float* src = t.ptr() + (static_cast<size_t>(i) * parts + part) * d;
    double sq = 0.0;
    for (int k = 0; k < d; ++k) {
      out(i, k) = src[k];
      sq += static_cast<double>(src[k]) * src[k];
    }
    const double norm = std::sqrt(sq);
    if (norm == 0.0) {
      throw GaitError(ErrorKind::kZeroNormVector,
                      "zero-norm embedding (row " + std::to_string(i) + ", part " + std::to_string(part) + ")");
    }
    out.row(i) /= norm;
    if (norms) (*norms)(i) = norm;
  }
  return out;
}

// One direction of the loss for one part. Adds weight * dL/dq into grad.
double directional(const Tensor& q, const Tensor& k, int part, double factor, bool negatives, double weight,
                   Tensor* grad) {
  Eigen::VectorXd qnorm;
  const MatD qn = unit_rows(q, part, &qnorm);
  const MatD kn = unit_rows(k, part, nullptr);
  const int n = static_cast<int>(qn.rows());
  const MatD cos = qn * kn.transpose();

  MatD g = MatD::Zero(n, n);  // dL/dcos
  double total = 0.0;
  if (negatives) {
    for (int i = 0; i < n; ++i) {
      const double mx = (cos.row(i) * factor).maxCoeff();
      double z = 0.0;
      for (int j = 0; j < n; ++j) z += std::exp(cos(i, j) * factor - mx);
      total += -(cos(i, i) * factor - mx - std::log(z));
      for (int j = 0; j < n; ++j) g(i, j) = factor * (std::exp(cos(i, j) * factor - mx) / z - (i == j ? 1.0 : 0.0));
    }
  } else {
    for (int i = 0; i < n; ++i) {
      total -= cos(i, i);
      g(i, i) = -1.0;
    }
  }
  if (grad) {
    const int parts = q.dim(1), d = q.dim(2);
    const MatD dqn = g * kn;
    const Eigen::VectorXd radial = (g.cwiseProduct(cos)).rowwise().sum();
    for (int i = 0; i < n; ++i) {
      float* dst = grad->ptr() + (static_cast<size_t>(i) * parts + part) * d;
      const double s = weight / qnorm(i);
      for (int c = 0; c < d; ++c) dst[c] += static_cast<float>(s * (dqn(i, c) - radial(i) * qn(i, c)));
    }
  }
  return total;
}

}  // namespace

std::string to_string(TauMode mode) { return mode == TauMode::kDivide ? "divide" : "scale"; }

TauMode tau_mode_from(const std::string& name) {
  if (name == "divide") return TauMode::kDivide;
  if (name == "scale") return TauMode::kScale;
  throw GaitError(ErrorKind::kRangeError, "tau mode must be 'divide' or 'scale', got '" + name + "'");
}

double info_nce(std::span<const double> q, std::span<const std::vector<double>> keys, int positive, double tau,
                TauMode mode) {
  if (keys.empty()) throw GaitError(ErrorKind::kEmptySet, "info_nce needs at least one key");
  if (!(tau > 0)) throw GaitError(ErrorKind::kRangeError, "tau must be positive");
  auto norm = [](std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    if (s == 0.0) throw GaitError(ErrorKind::kZeroNormVector, "zero-norm vector in info_nce");
    return std::sqrt(s);
  };
  const double f = logit_factor(tau, mode);
  const double qn = norm(q);
  std::vector<double> logits;
  for (const auto& k : keys) {
    if (k.size() != q.size()) throw GaitError(ErrorKind::kShapeMismatch, "key and query dims differ");
    double dot = 0.0;
    for (size_t i = 0; i < q.size(); ++i) dot += q[i] * k[i];
    logits.push_back(f * dot / (qn * norm(k)));
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  return -(logits.at(positive) - mx - std::log(z));
}

PairLoss symmetrized_batch_loss(const PairBatch& b, double tau, TauMode mode, bool negatives, bool want_grad) {
  const Tensor& ka = *b.key_a;
  const Tensor& kb = *b.key_b;
  const Tensor& qa = *b.query_a;
  const Tensor& qb = *b.query_b;
  if (ka.rank() != 3 || !ka.same_shape(kb) || !ka.same_shape(qa) || !ka.same_shape(qb)) {
    throw GaitError(ErrorKind::kShapeMismatch, "pair loss expects four [n,P,D] tensors of one shape");
  }
  if (!(tau > 0)) throw GaitError(ErrorKind::kRangeError, "tau must be positive");
  const int n = ka.dim(0), parts = ka.dim(1);
  if (n < 1) throw GaitError(ErrorKind::kEmptySet, "empty batch");
  const double f = negatives ? logit_factor(tau, mode) : 1.0;
  const double w = 0.5 / (static_cast<double>(n) * parts);

  PairLoss out;
  if (want_grad) {
    out.d_query_a = Tensor(qa.shape);
    out.d_query_b = Tensor(qb.shape);
  }
  double total = 0.0;
  for (int p = 0; p < parts; ++p) {
    total += directional(qa, kb, p, f, negatives, w, want_grad ? &out.d_query_a : nullptr);
    total += directional(qb, ka, p, f, negatives, w, want_grad ? &out.d_query_b : nullptr);
  }
  out.loss = total * w;
  return out;
}

double embedding_std(const Tensor& e) {
  const int n = e.dim(0), parts = e.dim(1), d = e.dim(2);
  if (n < 2) return 0.0;
  double acc = 0.0;
  for (int p = 0; p < parts; ++p) {
    const MatD u = unit_rows(e, p, nullptr);
    const Eigen::RowVectorXd mean = u.colwise().mean();
    const Eigen::RowVectorXd var = (u.rowwise() - mean).array().square().colwise().sum() / (n - 1);
    acc += var.array().sqrt().sum();
  }
  return acc / (static_cast<double>(parts) * d);
}

void PretrainConfig::validate() const {
  if (!(tau > 0)) throw GaitError(ErrorKind::kRangeError, "pretrain.tau must be > 0");
  if (batch_size < 2) throw GaitError(ErrorKind::kRangeError, "pretrain.batch_size must be >= 2");
  if (clip_len < 1) throw GaitError(ErrorKind::kRangeError, "pretrain.clip_len must be >= 1");
  if (!(lr > 0)) throw GaitError(ErrorKind::kRangeError, "pretrain.lr must be > 0");
  if (total_steps < 0) throw GaitError(ErrorKind::kRangeError, "pretrain.total_steps must be >= 0");
  if (!(subset_frac > 0 && subset_frac <= 1)) {
    throw GaitError(ErrorKind::kRangeError, "pretrain.subset_frac must lie in (0,1]");
  }
  for (size_t i = 0; i < milestones.size(); ++i) {
    if ((i > 0 && milestones[i] <= milestones[i - 1]) || milestones[i] <= 0 || milestones[i] >= total_steps) {
      throw GaitError(ErrorKind::kRangeError, "pretrain.milestones must increase strictly and stay below total_steps");
    }
  }
  encoder.validate();
  augment.validate();
  sampler.validate();
}

double lr_schedule(std::int64_t step, double lr0, std::span<const std::int64_t> milestones, double decay) {
  double lr = lr0;
  for (std::int64_t m : milestones) {
    if (step >= m) lr *= decay;
  }
  return lr;
}

std::string to_json_line(const StepMetrics& m) {
  nlohmann::ordered_json j;
  j["step"] = m.step;
  j["loss"] = m.loss;
  j["lr"] = m.lr;
  j["emb_std"] = m.emb_std;
  return j.dump();
}

std::vector<GaitSequence> select_subset(std::vector<GaitSequence> sequences, double frac, std::uint64_t seed) {
  if (frac >= 1.0 || sequences.empty()) return sequences;
  const size_t keep = std::max<size_t>(1, static_cast<size_t>(std::llround(frac * sequences.size())));
  std::vector<size_t> idx(sequences.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  std::vector<GaitSequence> out;
  out.reserve(keep);
  for (size_t i : idx) out.push_back(std::move(sequences[i]));
  return out;
}

// ---------------------------------------------------------------- trainer

Pretrainer::Pretrainer(PretrainConfig cfg, std::vector<GaitSequence> sequences,
                       std::optional<std::map<std::string, SequenceViewStats>> stats)
    : cfg_(std::move(cfg)),
      sequences_(select_subset(std::move(sequences), cfg_.subset_frac, cfg_.seed ^ 0x5eed5eedULL)),
      encoder_(cfg_.encoder, cfg_.seed),
      predictor_(cfg_.encoder.parts, cfg_.encoder.embed_dim, cfg_.seed + 1),
      rng_(cfg_.seed + 2) {
  cfg_.validate();
  if (sequences_.empty()) throw GaitError(ErrorKind::kEmptyManifest, "no sequences to pre-train on");
  if (cfg_.sampling && !stats) {
    throw GaitError(ErrorKind::kConfigConflict, "sampling augmentation is enabled but no view-stats table was given");
  }
  for (size_t i = 0; i < sequences_.size(); ++i) {
    if (!index_.emplace(sequences_[i].sequence_id, i).second) {
      throw GaitError(ErrorKind::kDuplicateSequence, "duplicate sequence id " + sequences_[i].sequence_id);
    }
  }
  if (cfg_.sampling) {
    DatasetManifest m;
    for (const auto& s : sequences_) {
      ManifestEntry e;
      e.sequence_id = s.sequence_id;
      m.entries.push_back(std::move(e));
    }
    sampler_.emplace(m, *stats, cfg_.sampler);
  }
}

std::vector<size_t> Pretrainer::draw_batch() {
  const size_t n = std::min<size_t>(cfg_.batch_size, sequences_.size());
  std::vector<size_t> out;
  out.reserve(n);
  if (!sampler_) {
    std::vector<size_t> all(sequences_.size());
    std::iota(all.begin(), all.end(), 0);
    std::shuffle(all.begin(), all.end(), rng_);
    all.resize(n);
    return all;
  }
  // A sequence appearing twice would act as its own negative; redraw
  // duplicates a bounded number of times before accepting them.
  std::set<size_t> seen;
  int redraws = 0;
  while (out.size() < n) {
    const size_t idx = index_.at(sampler_->next(rng_));
    if (seen.insert(idx).second || redraws++ > 64 * static_cast<int>(n)) out.push_back(idx);
  }
  return out;
}

std::vector<nn::Parameter*> Pretrainer::all_parameters() {
  auto params = encoder_.parameters();
  for (auto* p : predictor_.parameters()) params.push_back(p);
  return params;
}

StepMetrics Pretrainer::step() {
  const auto batch = draw_batch();
  const int n = static_cast<int>(batch.size());
  std::vector<Clip> clips(2 * static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const GaitSequence& seq = sequences_[batch[i]];
    if (cfg_.intraseq) {
      auto [a, b] = sample_disjoint_clip_pair(seq, cfg_.clip_len, rng_);
      clips[i] = std::move(a);
      clips[n + i] = std::move(b);
    } else {
      clips[i] = sample_clip(seq, cfg_.clip_len, rng_);
      clips[n + i] = clips[i];
    }
  }
  if (cfg_.spatial) {
    for (auto& c : clips) c = apply_sao_spatial(c, cfg_.augment, rng_).first;
  }

  const Tensor k = encoder_.encode(clips, Mode::kTrain);
  const Tensor q = predictor_.forward(k, Mode::kTrain);
  const int parts = k.dim(1), d = k.dim(2);
  const size_t half = static_cast<size_t>(n) * parts * d;
  auto slice = [&](const Tensor& t, size_t from) {
    Tensor s({n, parts, d});
    std::copy(t.data.begin() + from, t.data.begin() + from + half, s.data.begin());
    return s;
  };
  const Tensor ka = slice(k, 0), kb = slice(k, half), qa = slice(q, 0), qb = slice(q, half);
  PairLoss loss = symmetrized_batch_loss({&ka, &kb, &qa, &qb}, cfg_.tau, cfg_.tau_mode, cfg_.negatives);

  Tensor dq(q.shape);
  std::copy(loss.d_query_a.data.begin(), loss.d_query_a.data.end(), dq.data.begin());
  std::copy(loss.d_query_b.data.begin(), loss.d_query_b.data.end(), dq.data.begin() + half);

  auto params = all_parameters();
  nn::zero_grad(params);
  const Tensor dk = predictor_.backward(dq);
  encoder_.backward(dk);

  StepMetrics m;
  m.step = step_;
  m.lr = lr_schedule(step_, cfg_);
  m.loss = loss.loss;
  m.emb_std = embedding_std(ka);
  nn::sgd_step(params, static_cast<float>(m.lr), static_cast<float>(cfg_.momentum),
               static_cast<float>(cfg_.weight_decay));
  ++step_;
  return m;
}

nn::Checkpoint Pretrainer::checkpoint() {
  nn::Checkpoint ckpt;
  ckpt.meta["kind"] = "pretrain";
  ckpt.meta["pretrain.step"] = std::to_string(step_);
  store_config(cfg_.encoder, ckpt);
  export_state(encoder_.parameters(), encoder_.buffers(), ckpt);
  export_state(predictor_.parameters(), predictor_.buffers(), ckpt);
  for (auto* p : all_parameters()) ckpt.tensors.emplace_back("momentum." + p->name, p->velocity);
  return ckpt;
}

void Pretrainer::restore(const nn::Checkpoint& ckpt) {
  import_state(ckpt, encoder_.parameters(), encoder_.buffers());
  import_state(ckpt, predictor_.parameters(), predictor_.buffers());
  for (auto* p : all_parameters()) {
    if (const Tensor* v = ckpt.find("momentum." + p->name); v && v->shape == p->velocity.shape) p->velocity = *v;
  }
  auto it = ckpt.meta.find("pretrain.step");
  step_ = it == ckpt.meta.end() ? 0 : std::stoll(it->second);
}

PretrainRun run_pretraining(const PretrainConfig& cfg, std::vector<GaitSequence> sequences,
                            std::optional<std::map<std::string, SequenceViewStats>> stats,
                            const std::filesystem::path& out_dir,
                            const std::function<void(const StepMetrics&)>& on_step) {
  Pretrainer trainer(cfg, std::move(sequences), std::move(stats));
  std::filesystem::create_directories(out_dir);
  std::ofstream log(out_dir / "metrics.jsonl");
  if (!log) throw GaitError(ErrorKind::kIoError, "cannot write " + (out_dir / "metrics.jsonl").string());
  PretrainRun run;
  while (trainer.steps_done() < cfg.total_steps) {
    const StepMetrics m = trainer.step();
    log << to_json_line(m) << '\n';
    run.metrics.push_back(m);
    if (on_step) on_step(m);
    if (cfg.checkpoint_every > 0 && trainer.steps_done() % cfg.checkpoint_every == 0 &&
        trainer.steps_done() < cfg.total_steps) {
      nn::save_checkpoint(out_dir / ("ckpt_" + std::to_string(trainer.steps_done()) + ".glck"),
                          trainer.checkpoint());
    }
  }
  log.flush();
  run.final_checkpoint = out_dir / "final.glck";
  nn::save_checkpoint(run.final_checkpoint, trainer.checkpoint());
  return run;
}

}  // namespace gaitlab
