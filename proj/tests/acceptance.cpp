// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gaitlab/augmentation.hpp"
#include "gaitlab/contrastive.hpp"
#include "gaitlab/errors.hpp"
#include "gaitlab/evaluation.hpp"
#include "gaitlab/hypothesis.hpp"
#include "gaitlab/synthetic.hpp"
#include "gaitlab/transfer.hpp"
#include "helpers.hpp"

using namespace gaitlab;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + std::string("failed: ") + what;
    }
  }
  void note(const std::string& s) { detail += (detail.empty() ? "" : "; ") + s; }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------- 1

Clip speckled_clip(std::mt19937_64& rng, int frames) {
  Clip c;
  c.source_id = "c";
  for (int i = 0; i < frames; ++i) {
    auto f = testing::blob(64, 44, 32, 22 + i % 3, 24, 8 + i % 2);
    const auto noise = testing::random_frame(rng, 64, 44, 0.05);
    for (size_t p = 0; p < f.pixels.size(); ++p) f.pixels[p] |= noise.pixels[p];
    c.frames.push_back(f);
    c.frame_indices.push_back(i);
    c.timeline_indices.push_back(i);
  }
  return c;
}

Outcome augmentation_suite() {
  Outcome o;
  std::mt19937_64 r(1);
  SpatialAugConfig all;
  all.p_flip = all.p_affine = all.p_perspective = all.p_dilation = 1.0;
  bool binary = true, shape = true, involution = true, superset = true;
  for (int trial = 0; trial < 100; ++trial) {
    const Clip c = speckled_clip(r, 3);
    Rng rng(trial);
    for (const auto& f : apply_sao_spatial(c, all, rng).first.frames) {
      binary &= testing::is_binary(f);
      shape &= f.height == 64 && f.width == 44;
    }
    involution &= horizontal_flip(horizontal_flip(c)).frames == c.frames;
    const auto [dil, rec] = random_body_dilation(c, all, rng);
    for (size_t k = 0; k < c.frames.size(); ++k) {
      for (size_t p = 0; p < c.frames[k].pixels.size(); ++p) superset &= !c.frames[k].pixels[p] || dil.frames[k].pixels[p];
    }
  }
  o.require(binary, "binary closure");
  o.require(shape, "shape preservation");
  o.require(involution, "flip involution");
  o.require(superset, "dilation superset");

  const Clip c = speckled_clip(r, 2);
  bool identity = affine_frame(c.frames[0], {}).pixels == c.frames[0].pixels;
  identity &= perspective_frame(c.frames[0], {}).pixels == c.frames[0].pixels;
  SpatialAugConfig none;
  none.p_flip = none.p_affine = none.p_perspective = none.p_dilation = 0.0;
  Rng z(3);
  identity &= apply_sao_spatial(c, none, z).first.frames == c.frames;
  o.require(identity, "zero-parameter identity");

  SpatialAugConfig def;
  Rng g(7);
  const Clip one = speckled_clip(r, 1);
  const int n = 10000;
  int counts[4] = {0, 0, 0, 0};
  for (int i = 0; i < n; ++i) {
    const auto rec = apply_sao_spatial(one, def, g).second;
    counts[0] += rec.flipped;
    counts[1] += rec.affine.has_value();
    counts[2] += rec.perspective.has_value();
    counts[3] += rec.dilation.has_value();
  }
  double worst = 0;
  for (int k : counts) worst = std::max(worst, std::abs(k / double(n) - 0.5));
  o.require(worst <= 0.02, "gating frequency");
  o.note("max gate deviation " + fmt("%.4f", worst));
  return o;
}

// ---------------------------------------------------------------- 2

Tensor grid_tensor(std::mt19937_64& rng, int n, int parts, int d) {
  Tensor t({n, parts, d});
  std::uniform_int_distribution<int> u(-1024, 1024);
  for (auto& v : t.data) {
    do v = static_cast<float>(u(rng)) / 1024.f;
    while (v == 0.f);
  }
  return t;
}

Outcome loss_correctness() {
  Outcome o;
  const std::vector<double> q = {1, 0, 0};
  const std::vector<std::vector<double>> one = {{0.3, 0.2, 0.1}};
  o.require(std::abs(info_nce(q, one, 0, 16.0)) < 1e-12, "n=1 gives 0");
  const std::vector<std::vector<double>> equal = {{0, 1, 0}, {0, 0, 1}, {0, -1, 0}};
  o.require(std::abs(info_nce(q, equal, 1, 16.0) - std::log(3.0)) < 1e-12, "uniform gives ln n");

  // hand value: -ln(e^(1/16) / (e^(1/16) + 1))
  const std::vector<std::vector<double>> two = {{2, 0, 0}, {0, 5, 0}};
  const double hand = -std::log(std::exp(1.0 / 16) / (std::exp(1.0 / 16) + 1.0));
  const double got = info_nce(q, two, 0, 16.0);
  o.require(std::abs(got - hand) < 1e-5, "two-key tau=16 case");
  o.note("two-key loss " + fmt("%.6f", got) + " (quoted 0.66249 differs by " + fmt("%.2e", std::abs(got - 0.66249)) + ")");

  // 3 pairs, 2 parts, 4 dims
  std::mt19937_64 rng(3);
  const Tensor ka = grid_tensor(rng, 3, 2, 4), kb = grid_tensor(rng, 3, 2, 4);
  Tensor qa = grid_tensor(rng, 3, 2, 4), qb = grid_tensor(rng, 3, 2, 4);
  const float h = 1.f / 8192;
  double worst = 0;
  for (auto mode : {TauMode::kDivide, TauMode::kScale}) {
    const double tau = mode == TauMode::kDivide ? 0.25 : 3.0;
    const PairLoss l = symmetrized_batch_loss({&ka, &kb, &qa, &qb}, tau, mode);
    for (Tensor* t : {&qa, &qb}) {
      const Tensor& g = t == &qa ? l.d_query_a : l.d_query_b;
      for (size_t i = 0; i < t->size(); ++i) {
        const float orig = t->data[i];
        t->data[i] = orig + h;
        const double up = symmetrized_batch_loss({&ka, &kb, &qa, &qb}, tau, mode, true, false).loss;
        t->data[i] = orig - h;
        const double down = symmetrized_batch_loss({&ka, &kb, &qa, &qb}, tau, mode, true, false).loss;
        t->data[i] = orig;
        const double fd = (up - down) / (2.0 * h);
        worst = std::max(worst, std::abs(fd - g.data[i]) / std::max(std::abs(fd), 1e-3));
      }
    }
  }
  o.require(worst < 1e-4, "finite differences");
  o.note("FD rel err " + fmt("%.2e", worst));

  // Stop-gradient: with q = k the total derivative includes a key term; the
  // returned gradient must be the keys-frozen derivative exactly.
  Tensor k1 = grid_tensor(rng, 3, 2, 4), k2 = grid_tensor(rng, 3, 2, 4);
  const PairLoss tied = symmetrized_batch_loss({&k1, &k2, &k1, &k2}, 0.25);
  double key_share = 0, frozen_err = 0;
  for (Tensor* t : {&k1, &k2}) {
    const Tensor& g = t == &k1 ? tied.d_query_a : tied.d_query_b;
    for (size_t i = 0; i < t->size(); ++i) {
      const float orig = t->data[i];
      Tensor qp = *t, qm = *t;
      qp.data[i] = orig + h;
      qm.data[i] = orig - h;
      const Tensor& qa2p = t == &k1 ? qp : k1;
      const Tensor& qb2p = t == &k1 ? k2 : qp;
      const Tensor& qa2m = t == &k1 ? qm : k1;
      const Tensor& qb2m = t == &k1 ? k2 : qm;
      const double fd_frozen = (symmetrized_batch_loss({&k1, &k2, &qa2p, &qb2p}, 0.25, TauMode::kDivide, true, false).loss -
                                symmetrized_batch_loss({&k1, &k2, &qa2m, &qb2m}, 0.25, TauMode::kDivide, true, false).loss) /
                               (2.0 * h);
      t->data[i] = orig + h;
      const double up = symmetrized_batch_loss({&k1, &k2, &k1, &k2}, 0.25, TauMode::kDivide, true, false).loss;
      t->data[i] = orig - h;
      const double down = symmetrized_batch_loss({&k1, &k2, &k1, &k2}, 0.25, TauMode::kDivide, true, false).loss;
      t->data[i] = orig;
      const double fd_total = (up - down) / (2.0 * h);
      frozen_err = std::max(frozen_err, std::abs(fd_frozen - g.data[i]) / std::max(std::abs(fd_frozen), 1e-3));
      key_share = std::max(key_share, std::abs(fd_total - fd_frozen));
    }
  }
  o.require(frozen_err < 1e-4 && key_share > 1e-3, "stop-gradient");
  o.note("key-path share left out " + fmt("%.3f", key_share));
  return o;
}

// ---------------------------------------------------------------- 3

Outcome encoder_contracts() {
  Outcome o;
  std::mt19937_64 rng(4);
  auto clip = [&](int t) {
    Clip c;
    for (int i = 0; i < t; ++i) {
      auto f = testing::blob(64, 44, 32, 22, 26, 9);
      const auto speckle = testing::random_frame(rng, 64, 44, 0.1);
      for (size_t p = 0; p < f.pixels.size(); ++p) f.pixels[p] ^= speckle.pixels[p];
      c.frames.push_back(f);
    }
    return c;
  };
  Encoder full(EncoderConfig{}, 1);
  const Clip c = clip(6);
  const Tensor emb = full.encode(c, Mode::kEval);
  o.require(emb.shape == std::vector<int>{1, 16, 512}, "16x512 embedding");

  Clip perm = c;
  std::reverse(perm.frames.begin(), perm.frames.end());
  std::swap(perm.frames[0], perm.frames[3]);
  o.require(full.encode(perm, Mode::kEval).data == emb.data, "permutation invariance");
  Clip dup = c;
  dup.frames.push_back(c.frames[1]);
  dup.frames.insert(dup.frames.begin(), c.frames[4]);
  o.require(full.encode(dup, Mode::kEval).data == emb.data, "duplication invariance");

  Clip zeros, ones;
  for (int i = 0; i < 3; ++i) {
    zeros.frames.emplace_back(64, 44);
    SilhouetteFrame f(64, 44);
    std::fill(f.pixels.begin(), f.pixels.end(), 1);
    ones.frames.push_back(f);
  }
  const std::vector<Clip> batch = {zeros, ones};
  bool finite = true;
  for (const Tensor& t : {full.encode(batch, Mode::kTrain), full.encode(zeros, Mode::kEval), full.encode(ones, Mode::kEval)}) {
    finite &= std::all_of(t.data.begin(), t.data.end(), [](float v) { return std::isfinite(v); });
  }
  o.require(finite, "no NaN on degenerate input");
  return o;
}

// ---------------------------------------------------------------- 4

EmbeddingItem item(const std::string& seq, const std::string& subj, const std::string& view, const std::string& cond,
                   std::vector<float> v) {
  EmbeddingItem it;
  it.sequence_id = seq;
  it.subject_id = subj;
  it.view = view;
  it.condition = cond;
  it.values = std::move(v);
  return it;
}

double oracle_distance(const std::vector<float>& a, const std::vector<float>& b, int parts) {
  const int dim = static_cast<int>(a.size()) / parts;
  double total = 0;
  for (int p = 0; p < parts; ++p) {
    double s = 0;
    for (int j = 0; j < dim; ++j) {
      const double d = double(a[p * dim + j]) - b[p * dim + j];
      s += d * d;
    }
    total += std::sqrt(s);
  }
  return total / parts;
}

// Exhaustive reference: average over (probe view, gallery view) cells.
double oracle_rank1(const EmbeddingSet& probe, const EmbeddingSet& gallery, bool skip) {
  std::set<std::string> pv, gv;
  for (const auto& p : probe.items) pv.insert(*p.view);
  for (const auto& g : gallery.items) gv.insert(*g.view);
  double sum = 0;
  int cells = 0;
  for (const auto& a : pv) {
    for (const auto& b : gv) {
      if (a == b) continue;
      int hits = 0, used = 0;
      for (const auto& p : probe.items) {
        if (*p.view != a) continue;
        std::vector<const EmbeddingItem*> cand;
        bool present = false;
        for (const auto& g : gallery.items) {
          if (*g.view == b && g.sequence_id != p.sequence_id) {
            cand.push_back(&g);
            present |= g.subject_id == p.subject_id;
          }
        }
        if (!present && skip) continue;
        ++used;
        if (cand.empty()) continue;
        const EmbeddingItem* best = cand[0];
        for (const auto* g : cand) {
          if (oracle_distance(p.values, g->values, probe.parts) < oracle_distance(p.values, best->values, probe.parts)) {
            best = g;
          }
        }
        hits += best->subject_id == p.subject_id;
      }
      if (used > 0) {
        sum += 100.0 * hits / used;
        ++cells;
      }
    }
  }
  return cells ? sum / cells : std::nan("");
}

Outcome retrieval_oracle() {
  Outcome o;
  std::mt19937_64 rng(5);
  std::normal_distribution<float> nd;
  int agree = 0, distance_agree = 0, compared = 0;
  for (int trial = 0; trial < 100; ++trial) {
    EmbeddingSet g, p;
    g.parts = p.parts = 2;
    g.dim = p.dim = 3;
    const int subjects = 2 + static_cast<int>(rng() % 8);
    const int views = 1 + static_cast<int>(rng() % 5);
    const int n = 20 + static_cast<int>(rng() % 181);
    for (int i = 0; i < n; ++i) {
      std::vector<float> v(6);
      for (auto& x : v) x = nd(rng);
      normalize_parts(v, 2);
      auto& set = i % 2 ? g : p;
      set.items.push_back(item("s" + std::to_string(i), std::to_string(rng() % subjects), std::to_string(rng() % views),
                               "c", std::move(v)));
    }
    for (size_t i = 0; i + 1 < g.items.size(); ++i) {
      ++compared;
      distance_agree += pairwise_distance(g.items[i].values, g.items[i + 1].values, 2) ==
                        oracle_distance(g.items[i].values, g.items[i + 1].values, 2);
    }
    const double want = oracle_rank1(p, g, true);
    double got = std::nan("");
    try {
      got = rank1(p, g, Protocol{"v", true, true, true}).rank1;
    } catch (const GaitError&) {
    }
    agree += (std::isnan(want) && std::isnan(got)) || got == want;
  }
  o.require(agree == 100, "rank-1 oracle");
  o.require(distance_agree == compared, "distance oracle");
  o.note("rank-1 oracle " + std::to_string(agree) + "/100");

  // CASIA-B mock: 2 subjects x 10 conditions x 11 views
  const std::vector<std::string> views = {"000", "018", "036", "054", "072", "090", "108", "126", "144", "162", "180"};
  EmbeddingSet all;
  all.parts = 1;
  all.dim = 2;
  for (int id = 0; id < 2; ++id) {
    std::vector<std::string> conds;
    for (int i = 1; i <= 6; ++i) conds.push_back("nm-0" + std::to_string(i));
    for (const char* c : {"bg-01", "bg-02", "cl-01", "cl-02"}) conds.push_back(c);
    for (const auto& c : conds) {
      for (const auto& v : views) {
        all.items.push_back(item(std::to_string(id) + c + v, std::to_string(id), v, c, {float(id == 0), float(id == 1)}));
      }
    }
  }
  const Partition part = partition_for(all, ProtocolKind::kCasiaB);
  bool counts = part.gallery.items.size() == 2 * 11 * 4 && part.probes.size() == 3;
  for (const auto& [cond, set] : part.probes) counts &= set.items.size() == 2 * 11 * 2;
  o.require(counts, "CASIA-B partition counts");

  // OU-MVLP: subject 2 has no gallery sequence at 090
  EmbeddingSet ou_g, ou_p;
  ou_g.parts = ou_p.parts = 1;
  ou_g.dim = ou_p.dim = 3;
  ou_g.items = {item("g0", "0", "090", "01", {1, 0, 0}), item("g1", "1", "090", "01", {0, 1, 0})};
  ou_p.items = {item("p0", "0", "000", "00", {1, 0, 0}), item("p1", "1", "000", "00", {0, 1, 0}),
                item("p2", "2", "000", "00", {0, 0, 1})};
  const auto skip = rank1(ou_p, ou_g, protocol_rules(ProtocolKind::kOuMvlp));
  const auto keep = rank1(ou_p, ou_g, protocol_rules(ProtocolKind::kOuMvlpNoSkip));
  o.require(skip.probes_skipped == 1 && std::abs(skip.rank1 - keep.rank1 - 100.0 / 3) < 1e-9, "OU-MVLP skip/no-skip");
  return o;
}

// ---------------------------------------------------------------- 5-7

EncoderConfig toy_encoder() {
  EncoderConfig e;
  e.stem_channels = 8;
  e.channels = {8, 16, 16, 32};
  e.embed_dim = 32;
  return e;
}

PretrainConfig toy_pretrain(int steps) {
  PretrainConfig cfg;
  cfg.batch_size = 16;
  cfg.clip_len = 8;
  cfg.tau = 16.0;
  cfg.tau_mode = TauMode::kScale;
  cfg.spatial = false;
  cfg.sampling = false;
  cfg.milestones = {};
  cfg.total_steps = steps;
  cfg.encoder = toy_encoder();
  return cfg;
}

double mean_tail(const std::vector<double>& v, size_t n) {
  n = std::min(n, v.size());
  double s = 0;
  for (size_t i = v.size() - n; i < v.size(); ++i) s += v[i];
  return s / n;
}

Outcome collapse_demo() {
  Outcome o;
  CorpusSpec spec;
  spec.n_ids = 50;
  spec.views = {0, 45, 90, 135};
  spec.seqs_per_cell = 2;
  spec.frames = 30;
  spec.frame_jitter = 6;
  spec.noise = 0.02;
  spec.seed = 11;
  const auto corpus = build_corpus(spec);
  std::vector<double> stds[2];
  for (int neg : {1, 0}) {
    PretrainConfig cfg = toy_pretrain(500);
    cfg.batch_size = 8;
    cfg.negatives = neg;
    Pretrainer t(cfg, corpus);
    for (int i = 0; i < 500; ++i) stds[neg].push_back(t.step().emb_std);
  }
  const double with = mean_tail(stds[1], 25), without = mean_tail(stds[0], 25);
  const double floor = 0.1 * with;
  const double with_min = *std::min_element(stds[1].begin(), stds[1].end());
  o.require(without < floor, "no-negatives std below 10% of with-negatives");
  o.require(with_min > floor, "with-negatives std stays above the line");
  o.note("emb std with " + fmt("%.4f", with) + ", without " + fmt("%.5f", without));
  return o;
}

struct ToySplit {
  std::vector<GaitSequence> train, test;
};

ToySplit toy_split() {
  // 25 ids x 10 views x 2 = 500 training sequences; 20 disjoint ids held out
  CorpusSpec train;
  train.n_ids = 25;
  train.identity_pool = 45;
  train.views = {0, 18, 36, 54, 72, 90, 108, 126, 144, 162};
  train.seqs_per_cell = 2;
  train.frames = 40;
  train.frame_jitter = 8;
  train.noise = 0.02;
  train.max_view_drift = 90;
  train.seed = 1;
  CorpusSpec test = train;
  test.n_ids = 20;
  test.first_subject = 25;
  test.max_view_drift = 0;
  test.seed = 2;
  return {build_corpus(train), build_corpus(test)};
}

double synthetic_rank1(Encoder& enc, const std::vector<GaitSequence>& test) {
  return evaluate_protocol(extract_embeddings(enc, test, 16), ProtocolKind::kSynthetic).rank1;
}

std::vector<GaitSequence> hide_labels(std::vector<GaitSequence> seqs) {
  for (auto& s : seqs) s.subject_id.reset();
  return seqs;
}

// Fresh weights whose BN running statistics have seen the training data.
Encoder calibrated_random(const PretrainConfig& cfg, const std::vector<GaitSequence>& train) {
  Encoder enc(cfg.encoder, cfg.seed);
  Rng g(5);
  for (int b = 0; b < 30; ++b) {
    std::vector<Clip> clips;
    for (int i = 0; i < 2 * cfg.batch_size; ++i) clips.push_back(sample_clip(train[g() % train.size()], cfg.clip_len, g));
    enc.encode(clips, Mode::kTrain);
  }
  return enc;
}

Outcome toy_self_supervision(const ToySplit& split, nn::Checkpoint& pretrained) {
  Outcome o;
  const PretrainConfig cfg = toy_pretrain(2000);
  Encoder fresh(cfg.encoder, cfg.seed);
  const double raw = synthetic_rank1(fresh, split.test);
  Encoder calibrated = calibrated_random(cfg, split.train);
  const double base = std::max(raw, synthetic_rank1(calibrated, split.test));

  Pretrainer t(cfg, hide_labels(split.train));
  while (t.steps_done() < cfg.total_steps) t.step();
  pretrained = t.checkpoint();
  const double acc = synthetic_rank1(t.encoder(), split.test);
  o.require(acc >= 15.0, "rank-1 >= 3x chance");
  o.require(acc > base, "above random weights");
  o.note("rank-1 " + fmt("%.2f", acc) + "% vs random " + fmt("%.2f", base) + "%, chance 5%");
  return o;
}

double finetuned_rank1(TransferModel& model, const TransferConfig& cfg, const ToySplit& split) {
  SupervisedTrainer trainer(cfg, model, split.train);
  while (trainer.steps_done() < cfg.total_steps) trainer.step();
  const auto set = extract_embeddings([&](std::span<const Clip> c) { return model.forward(c, Mode::kEval); },
                                      model.encoder().config().parts, model.head().out_dim(), split.test, 16);
  return evaluate_protocol(set, ProtocolKind::kSynthetic).rank1;
}

Outcome finetune_behaviour(const ToySplit& split, const nn::Checkpoint& pretrained) {
  Outcome o;
  for (double frac : {0.1, 0.2}) {
    TransferConfig pre = scaled_schedule(transfer_defaults("synthetic", false), frac);
    TransferConfig scratch = scaled_schedule(transfer_defaults("synthetic", true), frac);
    for (auto* c : {&pre, &scratch}) {
      c->subject_fraction = frac;
      c->clip_len = 8;
      c->head_dim = 32;
    }
    TransferModel from_pre = attach_finetune_head(pretrained, pre.head_dim, 3);
    TransferModel from_random(Encoder(toy_encoder(), 0), scratch.head_dim, 3);
    const double a = finetuned_rank1(from_pre, pre, split);
    const double b = finetuned_rank1(from_random, scratch, split);
    o.require(a > b, "pre-trained beats random at " + fmt("%.0f", frac * 100) + "%");
    o.note(fmt("%.0f", frac * 100) + "% subjects: " + fmt("%.2f", a) + " vs " + fmt("%.2f", b));
  }
  return o;
}

// ---------------------------------------------------------------- 8

Point random_point(std::mt19937_64& rng, int d) {
  std::normal_distribution<double> nd;
  Point p(d);
  for (auto& v : p) v = nd(rng);
  return p;
}

Outcome hypothesis_probe() {
  Outcome o;
  std::mt19937_64 rng(8);
  int subset = 0;
  for (int t = 0; t < 10000; ++t) {
    std::vector<Point> universe;
    for (int i = 0; i < 40; ++i) universe.push_back(random_point(rng, 3));
    std::vector<int> big, pi;
    for (int i = 0; i < 40; ++i) {
      if (rng() % 2) {
        big.push_back(i);
        if (rng() % 2) pi.push_back(i);
      }
    }
    subset += verify_subset_bound(random_point(rng, 3), universe, pi, big).holds;
  }
  o.require(subset == 10000, "subset bound");

  int chains = 0;
  for (int t = 0; t < 100000; ++t) {
    const int n = 1 + static_cast<int>(rng() % 8);
    auto pi = [&](const Point& p) {
      std::vector<Point> out;
      for (int i = 0; i < 3; ++i) {
        Point q = random_point(rng, 4);
        for (size_t j = 0; j < q.size(); ++j) q[j] = p[j] + 0.3 * q[j];
        out.push_back(q);
      }
      return out;
    };
    chains += verify_transitivity(build_chain(random_point(rng, 4), pi, n)).holds;
  }
  o.require(chains == 100000, "transitivity");
  o.note("subset " + std::to_string(subset) + "/10000, chains " + std::to_string(chains) + "/100000");

  // three classes, each a path of N+1 points with step a, rows b apart
  const int n = 4;
  const double a = 0.5, b = 3.0;
  std::vector<Point> pts;
  std::vector<int> labels;
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i <= n; ++i) {
      pts.push_back({i * a, c * b});
      labels.push_back(c);
    }
  }
  const auto r = bounds_report(pts, labels, a + 1e-9, n);
  o.require(r.verdict && r.d_plus < r.d_minus, "constructed N a < b instance");
  return o;
}

// ---------------------------------------------------------------- 9

int run_cli(const fs::path& dir, const std::string& args) {
  const std::string cmd = "cd '" + dir.string() + "' && '" GAITLAB_BIN "' " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

Outcome reproducibility() {
  Outcome o;
  const char* cfg =
      "encoder.stem_channels = 4\nencoder.channels = 4, 8, 8, 8\nencoder.parts = 4\nencoder.embed_dim = 8\n"
      "pretrain.batch_size = 4\npretrain.clip_len = 4\npretrain.total_steps = 4\npretrain.milestones =\n"
      "pretrain.checkpoint_every = 2\nview.hidden = 32, 16\nview.epochs = 3\ntransfer.p = 2\ntransfer.k = 2\n"
      "transfer.clip_len = 4\ntransfer.total_steps = 3\ntransfer.milestones =\ntransfer.head_dim = 8\n";
  const std::vector<std::string> steps = {
      "synth --ids 3 --views 0,15,30,45,60,75,90 --seqs-per-cell 2 --frames 12 --out c.gssb",
      "train-view-classifier --config t.cfg --data c.gssb --out view.glck",
      "classify-views --config t.cfg --ckpt view.glck --data c.gssb --out stats.tsv",
      "pretrain --config t.cfg --data c.gssb --stats stats.tsv --out pre",
      "finetune --config t.cfg --init pre/final.glck --data c.gssb --dataset synthetic --out ft",
      "evaluate --ckpt ft/final.glck --data c.gssb --protocol synthetic --out res.json",
      "heatmap --result res.json --out heat.csv",
  };
  testing::TempDir a("accept_a"), b("accept_b");
  for (const auto& dir : {a.path, b.path}) {
    std::ofstream(dir / "t.cfg") << cfg;
    for (const auto& s : steps) o.require(run_cli(dir, s) == 0, s.substr(0, s.find(' ')));
  }
  int files = 0, same = 0;
  for (const auto& e : fs::recursive_directory_iterator(a.path)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), a.path);
    ++files;
    if (slurp(e.path()) == slurp(b.path / rel)) {
      ++same;
    } else {
      o.require(false, "identical " + rel.string());
    }
  }
  o.note(std::to_string(same) + "/" + std::to_string(files) + " output files byte-identical");
  return o;
}

}  // namespace

// With arguments, runs only the listed criteria (7 implies 6).
int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  if (only.count(7)) only.insert(6);
  int failed = 0;
  auto run = [&](int id, const char* name, const std::function<Outcome()>& fn) {
    if (!only.empty() && !only.count(id)) return;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.note(std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::printf("%s %d %s (%.0fs): %s\n", o.pass ? "PASS" : "FAIL", id, name, secs, o.detail.c_str());
    std::fflush(stdout);
  };
  run(1, "augmentation suite", augmentation_suite);
  run(2, "loss correctness", loss_correctness);
  run(3, "encoder contracts", encoder_contracts);
  run(4, "retrieval oracle", retrieval_oracle);
  run(8, "hypothesis probe", hypothesis_probe);
  run(9, "reproducibility", reproducibility);
  run(5, "collapse without negatives", collapse_demo);
  if (!only.empty() && !only.count(6)) return failed ? 1 : 0;
  const ToySplit split = toy_split();
  nn::Checkpoint pretrained;
  run(6, "toy self-supervision", [&] { return toy_self_supervision(split, pretrained); });
  run(7, "fine-tuning beats random init", [&] {
    if (pretrained.tensors.empty()) {
      Outcome o;
      o.pass = false;
      o.note("no pre-trained checkpoint");
      return o;
    }
    return finetune_behaviour(split, pretrained);
  });
  return failed ? 1 : 0;
}
