#include "gaitlab/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <map>
#include <numeric>
#include <set>

#include "gaitlab/errors.hpp"

namespace gaitlab {

// ---------------------------------------------------------------- triplet

TripletResult triplet_loss(const Tensor& e, std::span<const int> labels, double margin, bool want_grad) {
  if (e.rank() != 3) throw GaitError(ErrorKind::kShapeMismatch, "triplet loss expects [N,P,D], got " + e.shape_str());
  const int n = e.dim(0), parts = e.dim(1), d = e.dim(2);
  if (static_cast<int>(labels.size()) != n) throw GaitError(ErrorKind::kShapeMismatch, "one label per embedding");

  TripletResult res;
  if (want_grad) res.grad = Tensor(e.shape);
  auto at = [&](int i, int p) { return e.ptr() + (static_cast<size_t>(i) * parts + p) * d; };

  std::vector<double> dist(static_cast<size_t>(n) * n);
  double total = 0.0;
  for (int p = 0; p < parts; ++p) {
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        double s = 0.0;
        const float* a = at(i, p);
        const float* b = at(j, p);
        for (int c = 0; c < d; ++c) s += (static_cast<double>(a[c]) - b[c]) * (static_cast<double>(a[c]) - b[c]);
        dist[static_cast<size_t>(i) * n + j] = std::sqrt(s);
      }
    }
    // coefficient on d(i,j) accumulated over active triplets
    std::vector<double> coef(static_cast<size_t>(n) * n, 0.0);
    double sum = 0.0;
    long active = 0;
    long valid = 0;
    for (int a = 0; a < n; ++a) {
      for (int q = 0; q < n; ++q) {
        if (q == a || labels[q] != labels[a]) continue;
        for (int m = 0; m < n; ++m) {
          if (labels[m] == labels[a]) continue;
          ++valid;
          const double t = dist[static_cast<size_t>(a) * n + q] - dist[static_cast<size_t>(a) * n + m] + margin;
          if (t > 0) {
            sum += t;
            ++active;
            coef[static_cast<size_t>(a) * n + q] += 1.0;
            coef[static_cast<size_t>(a) * n + m] -= 1.0;
          }
        }
      }
    }
    if (valid == 0) throw GaitError(ErrorKind::kDegenerateBatch, "batch holds no (anchor, positive, negative) triplet");
    res.valid = valid;
    res.active += active;
    if (active == 0) continue;
    total += sum / active;
    if (!want_grad) continue;
    const double scale = 1.0 / (static_cast<double>(active) * parts);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        const double c = coef[static_cast<size_t>(i) * n + j];
        const double dij = dist[static_cast<size_t>(i) * n + j];
        if (c == 0.0 || dij == 0.0) continue;
        const float* xi = at(i, p);
        const float* xj = at(j, p);
        float* gi = res.grad.ptr() + (static_cast<size_t>(i) * parts + p) * d;
        float* gj = res.grad.ptr() + (static_cast<size_t>(j) * parts + p) * d;
        const double w = scale * c / dij;
        for (int k = 0; k < d; ++k) {
          const double diff = static_cast<double>(xi[k]) - xj[k];
          gi[k] += static_cast<float>(w * diff);
          gj[k] -= static_cast<float>(w * diff);
        }
      }
    }
  }
  res.loss = total / parts;
  return res;
}

// ---------------------------------------------------------------- head

FineTuneHead::FineTuneHead(int parts, int in_dim, int out_dim, std::uint64_t seed)
    : fc_("finetune.fc", parts, in_dim, out_dim, false) {
  nn::Rng rng(seed);
  fc_.init(rng);
  renormalize();
}

void FineTuneHead::renormalize() {
  const int parts = fc_.parts(), in = fc_.in_features(), out = fc_.out_features();
  float* w = fc_.weight.value.ptr();
  for (int p = 0; p < parts; ++p) {
    for (int o = 0; o < out; ++o) {
      double sq = 0.0;
      for (int i = 0; i < in; ++i) sq += static_cast<double>(w[(static_cast<size_t>(p) * in + i) * out + o]) *
                                         w[(static_cast<size_t>(p) * in + i) * out + o];
      if (sq == 0.0) continue;
      const double inv = 1.0 / std::sqrt(sq);
      for (int i = 0; i < in; ++i) {
        float& v = w[(static_cast<size_t>(p) * in + i) * out + o];
        v = static_cast<float>(v * inv);
      }
    }
  }
}

Tensor FineTuneHead::forward(const Tensor& x) {
  const int n = x.dim(0), parts = x.dim(1), d = x.dim(2);
  input_ = x;
  normalized_ = x;
  norms_.assign(static_cast<size_t>(n) * parts, 0.0);
  for (int r = 0; r < n * parts; ++r) {
    float* v = normalized_.ptr() + static_cast<size_t>(r) * d;
    double sq = 0.0;
    for (int c = 0; c < d; ++c) sq += static_cast<double>(v[c]) * v[c];
    const double norm = std::sqrt(sq);
    if (norm == 0.0) throw GaitError(ErrorKind::kZeroNormVector, "zero-norm part feature entering the head");
    norms_[r] = norm;
    for (int c = 0; c < d; ++c) v[c] = static_cast<float>(v[c] / norm);
  }
  return fc_.forward(normalized_);
}

Tensor FineTuneHead::backward(const Tensor& dy) {
  Tensor dxhat = fc_.backward(dy);
  const int rows = static_cast<int>(norms_.size());
  const int d = dxhat.dim(2);
  for (int r = 0; r < rows; ++r) {
    float* g = dxhat.ptr() + static_cast<size_t>(r) * d;
    const float* u = normalized_.ptr() + static_cast<size_t>(r) * d;
    double dot = 0.0;
    for (int c = 0; c < d; ++c) dot += static_cast<double>(g[c]) * u[c];
    for (int c = 0; c < d; ++c) g[c] = static_cast<float>((g[c] - dot * u[c]) / norms_[r]);
  }
  return dxhat;
}

// ---------------------------------------------------------------- model

TransferModel::TransferModel(Encoder encoder, int head_dim, std::uint64_t seed)
    : encoder_(std::move(encoder)),
      head_(encoder_.config().parts, encoder_.config().embed_dim, head_dim, seed) {}

Tensor TransferModel::forward(std::span<const Clip> clips, Mode mode) {
  return head_.forward(encoder_.encode(clips, mode));
}

void TransferModel::backward(const Tensor& dy) { encoder_.backward(head_.backward(dy)); }

nn::Checkpoint TransferModel::checkpoint() {
  nn::Checkpoint ckpt;
  ckpt.meta["kind"] = "transfer";
  ckpt.meta["transfer.head_dim"] = std::to_string(head_.out_dim());
  store_config(encoder_.config(), ckpt);
  export_state(encoder_.parameters(), encoder_.buffers(), ckpt);
  export_state(head_.parameters(), {}, ckpt);
  return ckpt;
}

TransferModel TransferModel::from_checkpoint(const nn::Checkpoint& ckpt) {
  auto it = ckpt.meta.find("transfer.head_dim");
  if (it == ckpt.meta.end()) throw GaitError(ErrorKind::kFormatError, "checkpoint has no fine-tuning head");
  TransferModel model(load_encoder(ckpt), std::stoi(it->second));
  import_state(ckpt, model.head_.parameters(), {});
  return model;
}

TransferModel attach_finetune_head(const nn::Checkpoint& ckpt, int head_dim, std::uint64_t seed) {
  return TransferModel(load_encoder(ckpt), head_dim, seed);
}

// ---------------------------------------------------------------- config

void TransferConfig::validate() const {
  if (p < 1 || k < 1 || p * k < 2) throw GaitError(ErrorKind::kRangeError, "transfer batch p*k must exceed 1");
  if (!(margin > 0)) throw GaitError(ErrorKind::kRangeError, "transfer.margin must be > 0");
  if (clip_len < 1) throw GaitError(ErrorKind::kRangeError, "transfer.clip_len must be >= 1");
  if (!(subject_fraction > 0 && subject_fraction <= 1)) {
    throw GaitError(ErrorKind::kRangeError, "transfer.subject_fraction must lie in (0,1]");
  }
  if (lr_backbone < 0 || lr_projection < 0 || lr_head < 0) {
    throw GaitError(ErrorKind::kRangeError, "learning rates must be >= 0");
  }
  if (head_dim < 1) throw GaitError(ErrorKind::kRangeError, "transfer.head_dim must be >= 1");
  for (size_t i = 0; i < milestones.size(); ++i) {
    if ((i > 0 && milestones[i] <= milestones[i - 1]) || milestones[i] <= 0 || milestones[i] >= total_steps) {
      throw GaitError(ErrorKind::kRangeError, "transfer.milestones must increase strictly and stay below total_steps");
    }
  }
}

TransferConfig transfer_defaults(const std::string& dataset, bool scratch) {
  struct Row {
    int p, k;
    std::vector<std::int64_t> transfer_ms;
    std::int64_t transfer_total;
    std::vector<std::int64_t> scratch_ms;
    std::int64_t scratch_total;
  };
  static const std::map<std::string, Row> rows = {
      {"casiab", {8, 16, {10000}, 12000, {10000, 20000, 30000}, 40000}},
      {"casiab_star", {8, 16, {10000}, 12000, {10000, 20000, 30000}, 40000}},
      {"oumvlp", {32, 16, {50000, 60000, 70000}, 80000, {60000, 80000, 100000}, 120000}},
      {"grew", {128, 4, {50000, 60000, 70000}, 80000, {60000, 80000, 100000}, 120000}},
      {"gait3d", {64, 4, {6000, 8000, 10000}, 12000, {20000, 40000, 50000}, 60000}},
      // desk-scale corpus produced by `synth`
      {"synthetic", {4, 4, {400}, 500, {400}, 500}},
  };
  auto it = rows.find(dataset);
  if (it == rows.end()) throw GaitError(ErrorKind::kRangeError, "unknown dataset '" + dataset + "'");
  TransferConfig cfg;
  cfg.dataset = dataset;
  cfg.p = it->second.p;
  cfg.k = it->second.k;
  if (scratch) {
    cfg.milestones = it->second.scratch_ms;
    cfg.total_steps = it->second.scratch_total;
    cfg.lr_backbone = cfg.lr_projection = cfg.lr_head = 0.1;
    cfg.freeze_bn = false;
    cfg.weight_decay = 5e-4;
  } else {
    cfg.milestones = it->second.transfer_ms;
    cfg.total_steps = it->second.transfer_total;
  }
  return cfg;
}

TransferConfig scaled_schedule(TransferConfig cfg, double fraction) {
  auto scale = [&](std::int64_t v) { return std::max<std::int64_t>(1, std::llround(v * fraction)); };
  cfg.total_steps = scale(cfg.total_steps);
  std::vector<std::int64_t> ms;
  for (auto m : cfg.milestones) {
    const auto s = scale(m);
    if (s < cfg.total_steps && (ms.empty() || s > ms.back())) ms.push_back(s);
  }
  cfg.milestones = ms;
  return cfg;
}

std::vector<GaitSequence> select_subjects(std::vector<GaitSequence> sequences, double fraction) {
  std::set<std::string> subjects;
  for (const auto& s : sequences) {
    if (!s.subject_id) throw GaitError(ErrorKind::kMissingLabels, "sequence " + s.sequence_id + " has no subject id");
    subjects.insert(*s.subject_id);
  }
  const size_t keep = static_cast<size_t>(std::ceil(fraction * static_cast<double>(subjects.size()) - 1e-9));
  std::set<std::string> chosen;
  for (const auto& s : subjects) {
    if (chosen.size() >= keep) break;
    chosen.insert(s);
  }
  std::vector<GaitSequence> out;
  for (auto& s : sequences) {
    if (chosen.count(*s.subject_id)) out.push_back(std::move(s));
  }
  return out;
}

PkSampler::PkSampler(std::span<const GaitSequence> sequences, int p, int k) : p_(p), k_(k) {
  std::map<std::string, std::vector<size_t>> groups;
  for (size_t i = 0; i < sequences.size(); ++i) {
    if (!sequences[i].subject_id) {
      throw GaitError(ErrorKind::kMissingLabels, "sequence " + sequences[i].sequence_id + " has no subject id");
    }
    groups[*sequences[i].subject_id].push_back(i);
  }
  for (auto& [_, v] : groups) by_subject_.push_back(std::move(v));
  if (by_subject_.size() < 2) throw GaitError(ErrorKind::kDegenerateBatch, "need at least two subjects");
}

std::vector<size_t> PkSampler::next(Rng& rng) const {
  std::vector<size_t> subj(by_subject_.size());
  std::iota(subj.begin(), subj.end(), 0);
  std::shuffle(subj.begin(), subj.end(), rng);
  subj.resize(std::min<size_t>(subj.size(), p_));
  std::vector<size_t> out;
  for (size_t s : subj) {
    std::vector<size_t> pool = by_subject_[s];
    if (static_cast<int>(pool.size()) >= k_) {
      std::shuffle(pool.begin(), pool.end(), rng);
      out.insert(out.end(), pool.begin(), pool.begin() + k_);
    } else {
      std::uniform_int_distribution<size_t> pick(0, pool.size() - 1);
      for (int j = 0; j < k_; ++j) out.push_back(pool[pick(rng)]);
    }
  }
  return out;
}

// ---------------------------------------------------------------- trainer

SupervisedTrainer::SupervisedTrainer(TransferConfig cfg, TransferModel& model, std::vector<GaitSequence> sequences)
    : cfg_(std::move(cfg)),
      model_(model),
      sequences_(select_subjects(std::move(sequences), cfg_.subject_fraction)),
      sampler_(sequences_, cfg_.p, cfg_.k),
      rng_(cfg_.seed + 7) {
  cfg_.validate();
  std::map<std::string, int> ids;
  for (const auto& s : sequences_) labels_.push_back(ids.emplace(*s.subject_id, static_cast<int>(ids.size())).first->second);
}

std::array<double, 3> SupervisedTrainer::group_lrs() const {
  double f = 1.0;
  for (auto m : cfg_.milestones) {
    if (step_ >= m) f *= cfg_.lr_decay;
  }
  return {cfg_.lr_backbone * f, cfg_.lr_projection * f, cfg_.lr_head * f};
}

SupervisedMetrics SupervisedTrainer::step() {
  const auto batch = sampler_.next(rng_);
  std::vector<Clip> clips;
  std::vector<int> labels;
  for (size_t idx : batch) {
    clips.push_back(sample_clip(sequences_[idx], cfg_.clip_len, rng_));
    labels.push_back(labels_[idx]);
  }
  const Mode mode = cfg_.freeze_bn ? Mode::kFrozenBN : Mode::kTrain;
  const Tensor emb = model_.forward(clips, mode);
  const TripletResult t = triplet_loss(emb, labels, cfg_.margin);

  auto backbone = model_.encoder().backbone_parameters();
  auto projection = model_.encoder().head_parameters();
  auto head = model_.head().parameters();
  std::vector<nn::Parameter*> all = backbone;
  all.insert(all.end(), projection.begin(), projection.end());
  all.insert(all.end(), head.begin(), head.end());
  nn::zero_grad(all);
  model_.backward(t.grad);

  auto trainable = [&](std::vector<nn::Parameter*> ps) {
    if (cfg_.freeze_bn) std::erase_if(ps, [](const nn::Parameter* p) { return p->is_bn; });
    return ps;
  };
  const auto lrs = group_lrs();
  const auto mom = static_cast<float>(cfg_.momentum);
  const auto wd = static_cast<float>(cfg_.weight_decay);
  nn::sgd_step(trainable(backbone), static_cast<float>(lrs[0]), mom, wd);
  nn::sgd_step(trainable(projection), static_cast<float>(lrs[1]), mom, wd);
  nn::sgd_step(head, static_cast<float>(lrs[2]), mom, wd);
  model_.head().renormalize();

  SupervisedMetrics m;
  m.step = step_;
  m.loss = t.loss;
  m.lr_head = lrs[2];
  ++step_;
  return m;
}

std::filesystem::path run_supervised(const TransferConfig& cfg, TransferModel& model,
                                     std::vector<GaitSequence> sequences, const std::filesystem::path& out_dir,
                                     const std::function<void(const SupervisedMetrics&)>& on_step) {
  SupervisedTrainer trainer(cfg, model, std::move(sequences));
  std::filesystem::create_directories(out_dir);
  std::ofstream log(out_dir / "metrics.jsonl");
  if (!log) throw GaitError(ErrorKind::kIoError, "cannot write " + (out_dir / "metrics.jsonl").string());
  while (trainer.steps_done() < cfg.total_steps) {
    const SupervisedMetrics m = trainer.step();
    nlohmann::ordered_json j;
    j["step"] = m.step;
    j["loss"] = m.loss;
    j["lr"] = m.lr_head;
    log << j.dump() << '\n';
    if (on_step) on_step(m);
    if (cfg.checkpoint_every > 0 && trainer.steps_done() % cfg.checkpoint_every == 0 &&
        trainer.steps_done() < cfg.total_steps) {
      nn::save_checkpoint(out_dir / ("ckpt_" + std::to_string(trainer.steps_done()) + ".glck"), model.checkpoint());
    }
  }
  const auto path = out_dir / "final.glck";
  nn::save_checkpoint(path, model.checkpoint());
  return path;
}

}  // namespace gaitlab
