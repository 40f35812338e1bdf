#include "gaitlab/view_sampler.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "gaitlab/errors.hpp"

namespace gaitlab {

int view_label_from_degrees(double degrees) {
  double a = std::fmod(degrees, 180.0);
  if (a < 0) a += 180.0;
  if (a > 90.0) a = 180.0 - a;
  return std::clamp(static_cast<int>(std::lround(a / 15.0)), 0, kViewClasses - 1);
}

std::vector<float> build_view_input(const Clip& clip) {
  if (clip.frames.empty()) throw GaitError(ErrorKind::kEmptySet, "empty clip");
  const auto& first = clip.frames.front();
  std::vector<float> out(first.pixels.size(), 0.f);
  for (const auto& f : clip.frames) {
    if (f.pixels.size() != out.size()) throw GaitError(ErrorKind::kShapeMismatch, "frames differ in size");
    for (size_t i = 0; i < out.size(); ++i) out[i] += f.pixels[i] ? 1.f : 0.f;
  }
  const float inv = 1.f / static_cast<float>(clip.frames.size());
  for (float& v : out) v *= inv;
  return out;
}

double smoothed_cross_entropy(std::span<const double> probs, int target, double epsilon) {
  const double k = static_cast<double>(probs.size());
  double loss = 0.0;
  for (size_t c = 0; c < probs.size(); ++c) {
    const double q = (static_cast<int>(c) == target ? 1.0 - epsilon : 0.0) + epsilon / k;
    if (q > 0) loss -= q * std::log(std::max(probs[c], 1e-300));
  }
  return loss;
}

// ---------------------------------------------------------------- classifier

ViewClassifier::ViewClassifier(int input_dim, const std::vector<int>& hidden, std::uint64_t seed)
    : input_dim_(input_dim),
      hidden_(hidden),
      out_("view.out", 1, hidden.empty() ? input_dim : hidden.back(), kViewClasses) {
  nn::Rng rng(seed);
  int in = input_dim;
  fcs_.reserve(hidden.size());
  bns_.reserve(hidden.size());
  relus_.resize(hidden.size());
  for (size_t i = 0; i < hidden.size(); ++i) {
    const std::string name = "view.fc" + std::to_string(i);
    fcs_.emplace_back(name, 1, in, hidden[i]);
    fcs_.back().init(rng);
    bns_.emplace_back("view.bn" + std::to_string(i), hidden[i]);
    in = hidden[i];
  }
  out_.init(rng);
}

nn::Tensor ViewClassifier::logits(std::span<const std::vector<float>> inputs, nn::Mode mode) {
  const int n = static_cast<int>(inputs.size());
  nn::Tensor x({n, input_dim_});
  for (int i = 0; i < n; ++i) {
    if (static_cast<int>(inputs[i].size()) != input_dim_) {
      throw GaitError(ErrorKind::kShapeMismatch, "view input has " + std::to_string(inputs[i].size()) +
                                                     " values, expected " + std::to_string(input_dim_));
    }
    std::copy(inputs[i].begin(), inputs[i].end(), x.ptr() + static_cast<size_t>(i) * input_dim_);
  }
  for (size_t l = 0; l < fcs_.size(); ++l) {
    x = fcs_[l].forward(x);
    x = bns_[l].forward(x, mode);
    x = relus_[l].forward(x);
  }
  return out_.forward(x);
}

namespace {

std::vector<double> softmax_rows(const nn::Tensor& logits) {
  const int n = logits.dim(0);
  const int k = logits.dim(1);
  std::vector<double> p(static_cast<size_t>(n) * k);
  for (int i = 0; i < n; ++i) {
    const float* row = logits.ptr() + static_cast<size_t>(i) * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (int c = 0; c < k; ++c) z += p[i * k + c] = std::exp(row[c] - mx);
    for (int c = 0; c < k; ++c) p[i * k + c] /= z;
  }
  return p;
}

}  // namespace

std::vector<double> ViewClassifier::predict_proba(std::span<const std::vector<float>> inputs) {
  if (inputs.empty()) return {};
  return softmax_rows(logits(inputs, nn::Mode::kEval));
}

std::vector<int> ViewClassifier::predict(std::span<const std::vector<float>> inputs) {
  const auto p = predict_proba(inputs);
  std::vector<int> out(inputs.size());
  for (size_t i = 0; i < inputs.size(); ++i) {
    const auto* row = p.data() + i * kViewClasses;
    out[i] = static_cast<int>(std::max_element(row, row + kViewClasses) - row);
  }
  return out;
}

double ViewClassifier::train_batch(std::span<const std::vector<float>> inputs, std::span<const int> labels,
                                   double epsilon, float lr, float momentum) {
  const nn::Tensor z = logits(inputs, nn::Mode::kTrain);
  const auto p = softmax_rows(z);
  const int n = static_cast<int>(inputs.size());
  nn::Tensor dz(z.shape);
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    std::span<const double> row(p.data() + static_cast<size_t>(i) * kViewClasses, kViewClasses);
    loss += smoothed_cross_entropy(row, labels[i], epsilon);
    for (int c = 0; c < kViewClasses; ++c) {
      const double q = (c == labels[i] ? 1.0 - epsilon : 0.0) + epsilon / kViewClasses;
      dz.data[static_cast<size_t>(i) * kViewClasses + c] = static_cast<float>((row[c] - q) / n);
    }
  }
  auto params = parameters();
  nn::zero_grad(params);
  nn::Tensor d = out_.backward(dz);
  for (size_t l = fcs_.size(); l-- > 0;) {
    d = relus_[l].backward(d);
    d = bns_[l].backward(d);
    d = fcs_[l].backward(d, l > 0);
  }
  nn::sgd_step(params, lr, momentum, 0.f);
  return loss / n;
}

std::vector<nn::Parameter*> ViewClassifier::parameters() {
  std::vector<nn::Parameter*> out;
  for (size_t l = 0; l < fcs_.size(); ++l) {
    fcs_[l].collect(out);
    bns_[l].collect(out);
  }
  out_.collect(out);
  return out;
}

std::vector<nn::Buffer> ViewClassifier::buffers() {
  std::vector<nn::Buffer> out;
  for (auto& bn : bns_) bn.collect_buffers(out);
  return out;
}

nn::Checkpoint ViewClassifier::to_checkpoint() {
  nn::Checkpoint ckpt;
  ckpt.meta["kind"] = "view_classifier";
  ckpt.meta["view.input_dim"] = std::to_string(input_dim_);
  std::string h;
  for (size_t i = 0; i < hidden_.size(); ++i) h += (i ? "," : "") + std::to_string(hidden_[i]);
  ckpt.meta["view.hidden"] = h;
  export_state_into(ckpt);
  return ckpt;
}

void ViewClassifier::export_state_into(nn::Checkpoint& ckpt) {
  for (nn::Parameter* p : parameters()) ckpt.tensors.emplace_back(p->name, p->value);
  for (const auto& b : buffers()) ckpt.tensors.emplace_back(b.name, *b.tensor);
}

ViewClassifier ViewClassifier::from_checkpoint(const nn::Checkpoint& ckpt) {
  auto kind = ckpt.meta.find("kind");
  auto dim = ckpt.meta.find("view.input_dim");
  auto hid = ckpt.meta.find("view.hidden");
  if (kind == ckpt.meta.end() || kind->second != "view_classifier" || dim == ckpt.meta.end() ||
      hid == ckpt.meta.end()) {
    throw GaitError(ErrorKind::kFormatError, "not a view-classifier checkpoint");
  }
  std::vector<int> hidden;
  std::stringstream ss(hid->second);
  for (std::string tok; std::getline(ss, tok, ',');) {
    if (!tok.empty()) hidden.push_back(std::stoi(tok));
  }
  ViewClassifier model(std::stoi(dim->second), hidden);
  for (nn::Parameter* p : model.parameters()) {
    const nn::Tensor* t = ckpt.find(p->name);
    if (t == nullptr || t->shape != p->value.shape) {
      throw GaitError(ErrorKind::kShapeMismatch, "checkpoint tensor " + p->name + " missing or misshapen");
    }
    p->value.data = t->data;
  }
  for (const auto& b : model.buffers()) {
    const nn::Tensor* t = ckpt.find(b.name);
    if (t == nullptr || t->shape != b.tensor->shape) {
      throw GaitError(ErrorKind::kShapeMismatch, "checkpoint tensor " + b.name + " missing or misshapen");
    }
    b.tensor->data = t->data;
  }
  return model;
}

ViewClassifier train_view_classifier(std::span<const LabeledClip> data, const ViewClassifierConfig& cfg) {
  std::array<int, kViewClasses> counts{};
  for (const auto& d : data) {
    if (d.label < 0 || d.label >= kViewClasses) {
      throw GaitError(ErrorKind::kRangeError, "view label " + std::to_string(d.label) + " outside 0..6");
    }
    ++counts[d.label];
  }
  for (int c = 0; c < kViewClasses; ++c) {
    if (counts[c] == 0) throw GaitError(ErrorKind::kMissingClass, "no training example for view class " +
                                                                      std::to_string(c));
  }
  std::vector<std::vector<float>> inputs;
  inputs.reserve(data.size());
  for (const auto& d : data) inputs.push_back(build_view_input(d.clip));

  ViewClassifier model(static_cast<int>(inputs.front().size()), cfg.hidden, cfg.seed);
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const size_t bs = static_cast<size_t>(std::max(2, cfg.batch_size));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    // Cosine decay keeps the last epochs from bouncing around.
    const double lr = cfg.lr * 0.5 * (1.0 + std::cos(M_PI * epoch / std::max(1, cfg.epochs)));
    for (size_t start = 0; start < order.size(); start += bs) {
      const size_t end = std::min(order.size(), start + bs);
      if (end - start < 2) continue;  // batch norm needs two samples
      std::vector<std::vector<float>> xb;
      std::vector<int> yb;
      for (size_t i = start; i < end; ++i) {
        xb.push_back(inputs[order[i]]);
        yb.push_back(data[order[i]].label);
      }
      model.train_batch(xb, yb, cfg.epsilon, static_cast<float>(lr), static_cast<float>(cfg.momentum));
    }
  }
  return model;
}

// ---------------------------------------------------------------- stats

SequenceViewStats sequence_view_stats(std::span<const int> predicted_views) {
  SequenceViewStats s;
  s.m = static_cast<int>(predicted_views.size());
  if (s.m == 0) throw GaitError(ErrorKind::kEmptySet, "no predicted views");
  double sum = 0.0;
  for (int v : predicted_views) sum += v;
  s.v_bar = sum / s.m;
  if (s.m >= 2) {
    double ss = 0.0;
    for (int v : predicted_views) ss += (v - s.v_bar) * (v - s.v_bar);
    s.sigma_sq = ss / (s.m - 1);
  }
  return s;
}

std::vector<Clip> view_windows(const GaitSequence& seq, int window) {
  const int n = seq.frame_count();
  if (n == 0) throw GaitError(ErrorKind::kEmptySet, "sequence " + seq.sequence_id + " has no frames");
  std::vector<Clip> out;
  if (n < window) {
    out.push_back(full_clip(seq));
    return out;
  }
  for (int start = 0; start + window <= n; start += window) {
    std::vector<int> t(window);
    std::iota(t.begin(), t.end(), start);
    out.push_back(make_clip(seq, t));
  }
  return out;
}

void SamplerConfig::validate() const {
  if (!(dumb_prob >= 0.0 && dumb_prob <= 1.0)) {
    throw GaitError(ErrorKind::kRangeError, "sampler dumb_prob must lie in [0,1]");
  }
  if (!(dumb_threshold >= 0.0)) throw GaitError(ErrorKind::kRangeError, "sampler dumb_threshold must be >= 0");
}

bool is_dumb(const SequenceViewStats& stats, const SamplerConfig& cfg) {
  return stats.sigma_sq <= cfg.dumb_threshold;
}

BiasedSampler::BiasedSampler(const DatasetManifest& manifest, const std::map<std::string, SequenceViewStats>& stats,
                             const SamplerConfig& cfg)
    : dumb_prob_(cfg.dumb_prob) {
  cfg.validate();
  if (manifest.entries.empty()) throw GaitError(ErrorKind::kEmptyManifest, "manifest has no sequences");
  for (const auto& e : manifest.entries) {
    auto it = stats.find(e.sequence_id);
    if (it == stats.end()) {
      throw GaitError(ErrorKind::kUnknownSequence, "no view statistics for " + e.sequence_id);
    }
    (is_dumb(it->second, cfg) ? dumb_ : active_).push_back(e.sequence_id);
  }
}

const std::string& BiasedSampler::next(Rng& rng) const {
  const std::vector<std::string>* pool;
  if (dumb_.empty()) {
    pool = &active_;
  } else if (active_.empty()) {
    pool = &dumb_;
  } else {
    std::bernoulli_distribution pick_dumb(dumb_prob_);
    pool = pick_dumb(rng) ? &dumb_ : &active_;
  }
  std::uniform_int_distribution<size_t> idx(0, pool->size() - 1);
  return (*pool)[idx(rng)];
}

void write_stats_table(const std::filesystem::path& path, const std::map<std::string, SequenceViewStats>& stats) {
  std::ofstream out(path);
  if (!out) throw GaitError(ErrorKind::kIoError, "cannot write " + path.string());
  out.precision(17);
  for (const auto& [id, s] : stats) out << id << '\t' << s.v_bar << '\t' << s.sigma_sq << '\t' << s.m << '\n';
}

std::map<std::string, SequenceViewStats> read_stats_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw GaitError(ErrorKind::kIoError, "cannot read " + path.string());
  std::map<std::string, SequenceViewStats> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string id, vb, sg, m;
    if (!std::getline(ss, id, '\t') || !std::getline(ss, vb, '\t') || !std::getline(ss, sg, '\t') ||
        !std::getline(ss, m, '\t')) {
      throw GaitError(ErrorKind::kFormatError, path.string() + ":" + std::to_string(lineno) + ": expected 4 fields");
    }
    try {
      out[id] = SequenceViewStats{std::stod(vb), std::stod(sg), std::stoi(m)};
    } catch (const std::exception&) {
      throw GaitError(ErrorKind::kFormatError, path.string() + ":" + std::to_string(lineno) + ": bad number");
    }
  }
  return out;
}

}  // namespace gaitlab
