#include "gaitlab/encoder.hpp"

#include <algorithm>
#include <limits>

#include "gaitlab/errors.hpp"

namespace gaitlab {

namespace {

std::string join(const std::array<int, 4>& v) {
  return std::to_string(v[0]) + "," + std::to_string(v[1]) + "," + std::to_string(v[2]) + "," +
         std::to_string(v[3]);
}

std::array<int, 4> split4(const std::string& s) {
  std::array<int, 4> out{};
  size_t pos = 0;
  for (int i = 0; i < 4; ++i) {
    const size_t next = s.find(',', pos);
    out[i] = std::stoi(s.substr(pos, next - pos));
    pos = next + 1;
  }
  return out;
}

bool needs_downsample(int in, int out, int stride) { return stride != 1 || in != out; }

}  // namespace

// ---------------------------------------------------------------- config

int EncoderConfig::map_height() const {
  int h = input_height;
  for (int s : strides) h = (h + 2 - 3) / s + 1;
  return h;
}

int EncoderConfig::map_width() const {
  int w = input_width;
  for (int s : strides) w = (w + 2 - 3) / s + 1;
  return w;
}

void EncoderConfig::validate() const {
  if (stem_channels <= 0 || parts <= 0 || embed_dim <= 0) {
    throw GaitError(ErrorKind::kRangeError, "encoder widths must be positive");
  }
  for (int i = 0; i < 4; ++i) {
    if (channels[i] <= 0 || strides[i] <= 0) throw GaitError(ErrorKind::kRangeError, "bad encoder block spec");
  }
  if (map_height() % parts != 0) {
    throw GaitError(ErrorKind::kIndivisibleHeight, "feature map height " + std::to_string(map_height()) +
                                                       " is not divisible by " + std::to_string(parts) + " parts");
  }
}

void store_config(const EncoderConfig& cfg, nn::Checkpoint& ckpt) {
  ckpt.meta["encoder.input_height"] = std::to_string(cfg.input_height);
  ckpt.meta["encoder.input_width"] = std::to_string(cfg.input_width);
  ckpt.meta["encoder.stem_channels"] = std::to_string(cfg.stem_channels);
  ckpt.meta["encoder.channels"] = join(cfg.channels);
  ckpt.meta["encoder.strides"] = join(cfg.strides);
  ckpt.meta["encoder.parts"] = std::to_string(cfg.parts);
  ckpt.meta["encoder.embed_dim"] = std::to_string(cfg.embed_dim);
  ckpt.meta["encoder.combine"] = cfg.combine == PoolCombine::kAdd ? "add" : "concat";
}

EncoderConfig config_from(const nn::Checkpoint& ckpt) {
  EncoderConfig cfg;
  try {
    cfg.input_height = std::stoi(ckpt.meta.at("encoder.input_height"));
    cfg.input_width = std::stoi(ckpt.meta.at("encoder.input_width"));
    cfg.stem_channels = std::stoi(ckpt.meta.at("encoder.stem_channels"));
    cfg.channels = split4(ckpt.meta.at("encoder.channels"));
    cfg.strides = split4(ckpt.meta.at("encoder.strides"));
    cfg.parts = std::stoi(ckpt.meta.at("encoder.parts"));
    cfg.embed_dim = std::stoi(ckpt.meta.at("encoder.embed_dim"));
    cfg.combine = ckpt.meta.at("encoder.combine") == "concat" ? PoolCombine::kConcat : PoolCombine::kAdd;
  } catch (const std::out_of_range&) {
    throw GaitError(ErrorKind::kFormatError, "checkpoint lacks encoder configuration");
  }
  return cfg;
}

// ---------------------------------------------------------------- pooling

Tensor clips_to_input(std::span<const Clip> clips, int height, int width) {
  int total = 0;
  for (const auto& c : clips) {
    if (c.frames.empty()) throw GaitError(ErrorKind::kShapeMismatch, "empty clip " + c.source_id);
    total += c.length();
  }
  Tensor x({total, 1, height, width});
  size_t off = 0;
  for (const auto& c : clips) {
    for (const auto& f : c.frames) {
      if (f.height != height || f.width != width) {
        throw GaitError(ErrorKind::kShapeMismatch, "frame " + std::to_string(f.height) + "x" +
                                                       std::to_string(f.width) + ", expected " +
                                                       std::to_string(height) + "x" + std::to_string(width));
      }
      for (auto p : f.pixels) x.data[off++] = static_cast<float>(p);
    }
  }
  return x;
}

Tensor temporal_pool(const Tensor& frame_maps, std::span<const int> lengths, std::vector<int>* argmax) {
  const int total = frame_maps.dim(0);
  const size_t per = frame_maps.size() / static_cast<size_t>(total);
  std::vector<int> shape = frame_maps.shape;
  shape[0] = static_cast<int>(lengths.size());
  Tensor out(shape);
  if (argmax) argmax->assign(out.size(), 0);
  int start = 0;
  for (size_t b = 0; b < lengths.size(); ++b) {
    if (lengths[b] < 1) throw GaitError(ErrorKind::kRangeError, "temporal pool over zero frames");
    float* dst = out.ptr() + b * per;
    std::copy_n(frame_maps.ptr() + static_cast<size_t>(start) * per, per, dst);
    if (argmax) std::fill_n(argmax->begin() + static_cast<std::ptrdiff_t>(b * per), per, start);
    for (int t = start + 1; t < start + lengths[b]; ++t) {
      const float* src = frame_maps.ptr() + static_cast<size_t>(t) * per;
      for (size_t i = 0; i < per; ++i) {
        if (src[i] > dst[i]) {
          dst[i] = src[i];
          if (argmax) (*argmax)[b * per + i] = t;
        }
      }
    }
    start += lengths[b];
  }
  if (start != total) throw GaitError(ErrorKind::kShapeMismatch, "clip lengths do not cover the frame batch");
  return out;
}

Tensor temporal_pool_backward(const Tensor& dy, const std::vector<int>& argmax, int total_frames) {
  std::vector<int> shape = dy.shape;
  shape[0] = total_frames;
  Tensor dx(shape);
  const size_t per = dy.size() / static_cast<size_t>(dy.dim(0));
  for (size_t j = 0; j < dy.size(); ++j) {
    dx.data[static_cast<size_t>(argmax[j]) * per + j % per] += dy.data[j];
  }
  return dx;
}

Tensor horizontal_pool(const Tensor& clip_map, int parts, PoolCombine combine, std::vector<int>* argmax) {
  if (clip_map.rank() != 4) throw GaitError(ErrorKind::kShapeMismatch, "horizontal pool expects [B,C,H,W]");
  const int b = clip_map.dim(0), c = clip_map.dim(1), h = clip_map.dim(2), w = clip_map.dim(3);
  if (parts <= 0 || h % parts != 0) {
    throw GaitError(ErrorKind::kIndivisibleHeight,
                    "height " + std::to_string(h) + " not divisible by " + std::to_string(parts));
  }
  const int rows = h / parts;
  const int strip = rows * w;
  const int dim = combine == PoolCombine::kAdd ? c : 2 * c;
  Tensor out({b, parts, dim});
  if (argmax) argmax->assign(static_cast<size_t>(b) * parts * c, 0);
  for (int i = 0; i < b; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const float* plane = clip_map.ptr() + (static_cast<size_t>(i) * c + ch) * h * w;
      for (int p = 0; p < parts; ++p) {
        const float* s = plane + static_cast<size_t>(p) * strip;
        double sum = 0.0;
        float best = -std::numeric_limits<float>::infinity();
        int best_at = 0;
        for (int k = 0; k < strip; ++k) {
          sum += s[k];
          if (s[k] > best) {
            best = s[k];
            best_at = k;
          }
        }
        const float mean = static_cast<float>(sum / strip);
        float* o = out.ptr() + (static_cast<size_t>(i) * parts + p) * dim;
        if (combine == PoolCombine::kAdd) {
          o[ch] = mean + best;
        } else {
          o[ch] = mean;
          o[c + ch] = best;
        }
        if (argmax) (*argmax)[(static_cast<size_t>(i) * parts + p) * c + ch] = p * strip + best_at;
      }
    }
  }
  return out;
}

Tensor horizontal_pool_backward(const Tensor& dy, const std::vector<int>& argmax, const std::vector<int>& map_shape,
                                int parts, PoolCombine combine) {
  const int b = map_shape[0], c = map_shape[1], h = map_shape[2], w = map_shape[3];
  const int strip = (h / parts) * w;
  const int dim = combine == PoolCombine::kAdd ? c : 2 * c;
  Tensor dx(map_shape);
  for (int i = 0; i < b; ++i) {
    for (int p = 0; p < parts; ++p) {
      const float* g = dy.ptr() + (static_cast<size_t>(i) * parts + p) * dim;
      for (int ch = 0; ch < c; ++ch) {
        float* plane = dx.ptr() + (static_cast<size_t>(i) * c + ch) * h * w;
        const float g_mean = (combine == PoolCombine::kAdd ? g[ch] : g[ch]) / static_cast<float>(strip);
        const float g_max = combine == PoolCombine::kAdd ? g[ch] : g[c + ch];
        float* s = plane + static_cast<size_t>(p) * strip;
        for (int k = 0; k < strip; ++k) s[k] += g_mean;
        plane[argmax[(static_cast<size_t>(i) * parts + p) * c + ch]] += g_max;
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------- blocks

BasicBlock::BasicBlock(const std::string& name, int in_channels, int out_channels, int stride)
    : conv1_(name + ".conv1", in_channels, out_channels, 3, stride, 1),
      bn1_(name + ".bn1", out_channels),
      conv2_(name + ".conv2", out_channels, out_channels, 3, 1, 1),
      bn2_(name + ".bn2", out_channels) {
  if (needs_downsample(in_channels, out_channels, stride)) {
    down_conv_ = std::make_unique<nn::Conv2d>(name + ".downsample.conv", in_channels, out_channels, 1, stride, 0);
    down_bn_ = std::make_unique<nn::BatchNorm>(name + ".downsample.bn", out_channels);
  }
}

Tensor BasicBlock::forward(const Tensor& x, Mode mode) {
  Tensor y = relu1_.forward(bn1_.forward(conv1_.forward(x), mode));
  y = bn2_.forward(conv2_.forward(y), mode);
  if (down_conv_) {
    const Tensor s = down_bn_->forward(down_conv_->forward(x), mode);
    for (size_t i = 0; i < y.size(); ++i) y.data[i] += s.data[i];
  } else {
    for (size_t i = 0; i < y.size(); ++i) y.data[i] += x.data[i];
  }
  return relu_out_.forward(y);
}

Tensor BasicBlock::backward(const Tensor& dy) {
  const Tensor d_sum = relu_out_.backward(dy);
  Tensor dx = conv1_.backward(bn1_.backward(relu1_.backward(conv2_.backward(bn2_.backward(d_sum)))));
  if (down_conv_) {
    const Tensor ds = down_conv_->backward(down_bn_->backward(d_sum));
    for (size_t i = 0; i < dx.size(); ++i) dx.data[i] += ds.data[i];
  } else {
    for (size_t i = 0; i < dx.size(); ++i) dx.data[i] += d_sum.data[i];
  }
  return dx;
}

void BasicBlock::init(nn::Rng& rng) {
  conv1_.init(rng);
  conv2_.init(rng);
  if (down_conv_) down_conv_->init(rng);
}

void BasicBlock::collect(std::vector<nn::Parameter*>& params, std::vector<nn::Buffer>& buffers) {
  conv1_.collect(params);
  bn1_.collect(params);
  conv2_.collect(params);
  bn2_.collect(params);
  bn1_.collect_buffers(buffers);
  bn2_.collect_buffers(buffers);
  if (down_conv_) {
    down_conv_->collect(params);
    down_bn_->collect(params);
    down_bn_->collect_buffers(buffers);
  }
}

Backbone::Backbone(const EncoderConfig& cfg)
    : stem_conv_("backbone.stem.conv", 1, cfg.stem_channels, 3, 1, 1),
      stem_bn_("backbone.stem.bn", cfg.stem_channels) {
  int in = cfg.stem_channels;
  for (int i = 0; i < 4; ++i) {
    blocks_.emplace_back("backbone.rb" + std::to_string(i + 1), in, cfg.channels[i], cfg.strides[i]);
    in = cfg.channels[i];
  }
}

Tensor Backbone::forward(const Tensor& frames, Mode mode) {
  Tensor y = stem_relu_.forward(stem_bn_.forward(stem_conv_.forward(frames), mode));
  for (auto& b : blocks_) y = b.forward(y, mode);
  return y;
}

void Backbone::backward(const Tensor& dy) {
  Tensor g = dy;
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) g = it->backward(g);
  stem_conv_.backward(stem_bn_.backward(stem_relu_.backward(g)), /*input_grad=*/false);
}

void Backbone::init(nn::Rng& rng) {
  stem_conv_.init(rng);
  for (auto& b : blocks_) b.init(rng);
}

void Backbone::collect(std::vector<nn::Parameter*>& params, std::vector<nn::Buffer>& buffers) {
  stem_conv_.collect(params);
  stem_bn_.collect(params);
  stem_bn_.collect_buffers(buffers);
  for (auto& b : blocks_) b.collect(params, buffers);
}

PartMLP::PartMLP(const std::string& name, int parts, int in_dim, int hidden_dim, int out_dim)
    : fc0_(name + ".fc0", parts, in_dim, hidden_dim),
      bn0_(name + ".bn0", parts * hidden_dim),
      fc1_(name + ".fc1", parts, hidden_dim, out_dim) {}

Tensor PartMLP::forward(const Tensor& x, Mode mode) {
  return fc1_.forward(relu_.forward(bn0_.forward(fc0_.forward(x), mode)));
}

Tensor PartMLP::backward(const Tensor& dy) {
  return fc0_.backward(bn0_.backward(relu_.backward(fc1_.backward(dy))));
}

void PartMLP::init(nn::Rng& rng) {
  fc0_.init(rng);
  fc1_.init(rng);
}

void PartMLP::collect(std::vector<nn::Parameter*>& params, std::vector<nn::Buffer>& buffers) {
  fc0_.collect(params);
  bn0_.collect(params);
  bn0_.collect_buffers(buffers);
  fc1_.collect(params);
}

// ---------------------------------------------------------------- encoder

Encoder::Encoder(EncoderConfig cfg, std::uint64_t seed)
    : cfg_((cfg.validate(), cfg)),
      backbone_(cfg_),
      head_("head", cfg_.parts, cfg_.part_input_dim(), cfg_.embed_dim, cfg_.embed_dim) {
  nn::Rng rng(seed);
  backbone_.init(rng);
  head_.init(rng);
}

Tensor Encoder::forward_backbone(std::span<const Clip> clips, Mode mode) {
  const Tensor x = clips_to_input(clips, cfg_.input_height, cfg_.input_width);
  lengths_.clear();
  for (const auto& c : clips) lengths_.push_back(c.length());
  total_frames_ = x.dim(0);
  return backbone_.forward(x, mode);
}

Tensor Encoder::part_features(std::span<const Clip> clips, Mode mode) {
  const Tensor maps = forward_backbone(clips, mode);
  const Tensor pooled = temporal_pool(maps, lengths_, &tp_argmax_);
  map_shape_ = pooled.shape;
  return horizontal_pool(pooled, cfg_.parts, cfg_.combine, &hp_argmax_);
}

Tensor Encoder::encode(std::span<const Clip> clips, Mode mode) {
  return head_.forward(part_features(clips, mode), mode);
}

void Encoder::backward(const Tensor& d_embedding) {
  const Tensor d_parts = head_.backward(d_embedding);
  const Tensor d_map = horizontal_pool_backward(d_parts, hp_argmax_, map_shape_, cfg_.parts, cfg_.combine);
  backbone_.backward(temporal_pool_backward(d_map, tp_argmax_, total_frames_));
}

std::vector<nn::Parameter*> Encoder::backbone_parameters() {
  std::vector<nn::Parameter*> p;
  std::vector<nn::Buffer> b;
  backbone_.collect(p, b);
  return p;
}

std::vector<nn::Parameter*> Encoder::head_parameters() {
  std::vector<nn::Parameter*> p;
  std::vector<nn::Buffer> b;
  head_.collect(p, b);
  return p;
}

std::vector<nn::Parameter*> Encoder::parameters() {
  auto p = backbone_parameters();
  auto h = head_parameters();
  p.insert(p.end(), h.begin(), h.end());
  return p;
}

std::vector<nn::Buffer> Encoder::buffers() {
  std::vector<nn::Parameter*> p;
  std::vector<nn::Buffer> b;
  backbone_.collect(p, b);
  head_.collect(p, b);
  return b;
}

Predictor::Predictor(int parts, int dim, std::uint64_t seed) : mlp_("predictor", parts, dim, dim, dim) {
  nn::Rng rng(seed);
  mlp_.init(rng);
}

std::vector<nn::Parameter*> Predictor::parameters() {
  std::vector<nn::Parameter*> p;
  std::vector<nn::Buffer> b;
  mlp_.collect(p, b);
  return p;
}

std::vector<nn::Buffer> Predictor::buffers() {
  std::vector<nn::Parameter*> p;
  std::vector<nn::Buffer> b;
  mlp_.collect(p, b);
  return b;
}

std::int64_t backbone_parameter_count(const EncoderConfig& cfg) {
  std::int64_t total = 9LL * cfg.stem_channels + 2LL * cfg.stem_channels;
  std::int64_t in = cfg.stem_channels;
  for (int i = 0; i < 4; ++i) {
    const std::int64_t out = cfg.channels[i];
    total += 9 * in * out + 9 * out * out + 4 * out;
    if (needs_downsample(static_cast<int>(in), static_cast<int>(out), cfg.strides[i])) total += in * out + 2 * out;
    in = out;
  }
  return total;
}

void export_state(std::span<nn::Parameter* const> params, std::span<const nn::Buffer> buffers, nn::Checkpoint& ckpt) {
  for (const nn::Parameter* p : params) ckpt.tensors.emplace_back(p->name, p->value);
  for (const auto& b : buffers) ckpt.tensors.emplace_back(b.name, *b.tensor);
}

void import_state(const nn::Checkpoint& ckpt, std::span<nn::Parameter* const> params,
                  std::span<const nn::Buffer> buffers) {
  auto load = [&](const std::string& name, Tensor& dst) {
    const Tensor* src = ckpt.find(name);
    if (src == nullptr) throw GaitError(ErrorKind::kFormatError, "checkpoint lacks tensor " + name);
    if (src->shape != dst.shape) {
      throw GaitError(ErrorKind::kShapeMismatch, name + ": checkpoint " + src->shape_str() + " vs model " +
                                                     dst.shape_str());
    }
    dst.data = src->data;
  };
  for (nn::Parameter* p : params) {
    load(p->name, p->value);
    p->velocity.zero();
    p->grad.zero();
  }
  for (const auto& b : buffers) load(b.name, *b.tensor);
}

Encoder load_encoder(const nn::Checkpoint& ckpt) {
  Encoder enc(config_from(ckpt));
  import_state(ckpt, enc.parameters(), enc.buffers());
  return enc;
}

}  // namespace gaitlab
