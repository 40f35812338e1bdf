#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gaitlab/nn/checkpoint.hpp"
#include "gaitlab/nn/layers.hpp"
#include "gaitlab/silhouette.hpp"

namespace gaitlab {

using nn::Mode;
using nn::Tensor;

/// How the per-strip average and max pools are combined into a part vector.
enum class PoolCombine { kAdd, kConcat };

struct EncoderConfig {
  int input_height = kFrameHeight;
  int input_width = kFrameWidth;
  int stem_channels = 64;
  std::array<int, 4> channels = {64, 128, 256, 512};
  std::array<int, 4> strides = {2, 2, 1, 1};
  int parts = 16;
  int embed_dim = 512;
  PoolCombine combine = PoolCombine::kAdd;

  int map_height() const;
  int map_width() const;
  int part_input_dim() const { return combine == PoolCombine::kAdd ? channels[3] : 2 * channels[3]; }
  void validate() const;
};

/// Stores the config in checkpoint metadata under `encoder.*`.
void store_config(const EncoderConfig& cfg, nn::Checkpoint& ckpt);
EncoderConfig config_from(const nn::Checkpoint& ckpt);

/// Clips -> float input [sum(T), 1, H, W]; throws ShapeMismatch on bad frames.
Tensor clips_to_input(std::span<const Clip> clips, int height, int width);

/// Element-wise max over each clip's frames. `lengths` partitions dim 0 of
/// `frame_maps`; `argmax` (optional) receives the winning frame per output.
Tensor temporal_pool(const Tensor& frame_maps, std::span<const int> lengths, std::vector<int>* argmax = nullptr);
Tensor temporal_pool_backward(const Tensor& dy, const std::vector<int>& argmax, int total_frames);

/// Slices [B,C,H,W] into `parts` horizontal strips; each strip becomes
/// mean+max (kAdd, dim C) or [mean,max] (kConcat, dim 2C). Output [B,P,dim].
Tensor horizontal_pool(const Tensor& clip_map, int parts, PoolCombine combine = PoolCombine::kAdd,
                       std::vector<int>* argmax = nullptr);
Tensor horizontal_pool_backward(const Tensor& dy, const std::vector<int>& argmax, const std::vector<int>& map_shape,
                                int parts, PoolCombine combine);

class BasicBlock {
 public:
  BasicBlock(const std::string& name, int in_channels, int out_channels, int stride);
  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& dy);
  void init(nn::Rng& rng);
  void collect(std::vector<nn::Parameter*>& params, std::vector<nn::Buffer>& buffers);

 private:
  nn::Conv2d conv1_;
  nn::BatchNorm bn1_;
  nn::ReLU relu1_;
  nn::Conv2d conv2_;
  nn::BatchNorm bn2_;
  std::unique_ptr<nn::Conv2d> down_conv_;
  std::unique_ptr<nn::BatchNorm> down_bn_;
  nn::ReLU relu_out_;
};

/// Stem conv + four basic residual blocks, every layer followed by BN+ReLU.
class Backbone {
 public:
  explicit Backbone(const EncoderConfig& cfg);
  Tensor forward(const Tensor& frames, Mode mode);
  void backward(const Tensor& dy);
  void init(nn::Rng& rng);
  void collect(std::vector<nn::Parameter*>& params, std::vector<nn::Buffer>& buffers);

 private:
  nn::Conv2d stem_conv_;
  nn::BatchNorm stem_bn_;
  nn::ReLU stem_relu_;
  std::vector<BasicBlock> blocks_;
};

/// Two separate FC layers per part; BN+ReLU after the first only.
class PartMLP {
 public:
  PartMLP(const std::string& name, int parts, int in_dim, int hidden_dim, int out_dim);
  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& dy);
  void init(nn::Rng& rng);
  void collect(std::vector<nn::Parameter*>& params, std::vector<nn::Buffer>& buffers);

 private:
  nn::SeparateFC fc0_;
  nn::BatchNorm bn0_;
  nn::ReLU relu_;
  nn::SeparateFC fc1_;
};

/// Backbone -> temporal max pool -> horizontal pool -> projection head.
/// One forward per backward; the forward caches what backward needs.
class Encoder {
 public:
  explicit Encoder(EncoderConfig cfg, std::uint64_t seed = 0);

  const EncoderConfig& config() const { return cfg_; }

  /// Per-frame maps [sum(T), C, h, w].
  Tensor forward_backbone(std::span<const Clip> clips, Mode mode);
  /// Pre-projection part vectors [B, P, part_input_dim].
  Tensor part_features(std::span<const Clip> clips, Mode mode);
  /// Raw (unnormalized) embeddings [B, P, D].
  Tensor encode(std::span<const Clip> clips, Mode mode);
  Tensor encode(const Clip& clip, Mode mode) { return encode(std::span<const Clip>(&clip, 1), mode); }
  /// Propagates d(embedding) through head and backbone, accumulating grads.
  void backward(const Tensor& d_embedding);

  Tensor project(const Tensor& part_vectors, Mode mode) { return head_.forward(part_vectors, mode); }

  std::vector<nn::Parameter*> backbone_parameters();
  std::vector<nn::Parameter*> head_parameters();
  std::vector<nn::Parameter*> parameters();
  std::vector<nn::Buffer> buffers();

 private:
  EncoderConfig cfg_;
  Backbone backbone_;
  PartMLP head_;
  std::vector<int> lengths_;
  std::vector<int> tp_argmax_;
  std::vector<int> hp_argmax_;
  std::vector<int> map_shape_;
  int total_frames_ = 0;
};

/// H(k): same two-layer per-part structure as the projection head.
class Predictor {
 public:
  Predictor(int parts, int dim, std::uint64_t seed = 0);
  Tensor forward(const Tensor& embedding, Mode mode) { return mlp_.forward(embedding, mode); }
  Tensor backward(const Tensor& dy) { return mlp_.backward(dy); }
  std::vector<nn::Parameter*> parameters();
  std::vector<nn::Buffer> buffers();

 private:
  PartMLP mlp_;
};

/// Closed-form parameter count of the backbone (conv weights + BN affine).
std::int64_t backbone_parameter_count(const EncoderConfig& cfg);

/// Copies named parameters/buffers into a checkpoint, and back. Loading
/// checks shapes and throws ShapeMismatch / FormatError on disagreement.
void export_state(std::span<nn::Parameter* const> params, std::span<const nn::Buffer> buffers, nn::Checkpoint& ckpt);
void import_state(const nn::Checkpoint& ckpt, std::span<nn::Parameter* const> params,
                  std::span<const nn::Buffer> buffers);

/// Encoder from any checkpoint holding `backbone.*`/`head.*` tensors.
Encoder load_encoder(const nn::Checkpoint& ckpt);

}  // namespace gaitlab
