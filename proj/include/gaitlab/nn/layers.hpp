#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "gaitlab/nn/tensor.hpp"

namespace gaitlab::nn {

using Rng = std::mt19937_64;

/// kTrain: batch statistics, running stats updated.
/// kEval: running statistics, no caching requirements beyond backward.
/// kFrozenBN: running statistics but gradients still flow (fine-tuning).
enum class Mode { kTrain, kEval, kFrozenBN };

/// 2-D convolution via im2col; weight stored as [out, in*k*k], no bias.
class Conv2d {
 public:
  Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride, int pad);

  Tensor forward(const Tensor& x);
  /// Accumulates into weight.grad; returns d(input) unless `input_grad` is false.
  Tensor backward(const Tensor& dy, bool input_grad = true);
  void init(Rng& rng);
  void collect(std::vector<Parameter*>& out) { out.push_back(&weight); }

  int out_size(int in, int /*axis*/) const { return (in + 2 * pad_ - kernel_) / stride_ + 1; }
  int in_channels() const { return in_; }
  int out_channels() const { return out_; }

  Parameter weight;

 private:
  void im2col(const float* img, int h, int w, float* col, size_t row_stride) const;
  void col2im(const float* col, int h, int w, float* img, size_t row_stride) const;
  int chunk_size(int n, int plane) const;

  int in_, out_, kernel_, stride_, pad_;
  Tensor input_;
};

/// Batch normalization over every axis except dim 1. Works for [N,C,H,W]
/// maps and [N,F] or [N,P,C] features (flattened to F = P*C channels).
class BatchNorm {
 public:
  BatchNorm(std::string name, int channels, float momentum = 0.1f, float eps = 1e-5f);

  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& dy);
  void collect(std::vector<Parameter*>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
  void collect_buffers(std::vector<Buffer>& out) {
    out.push_back({name_ + ".running_mean", &running_mean});
    out.push_back({name_ + ".running_var", &running_var});
  }
  int channels() const { return channels_; }

  Parameter gamma;
  Parameter beta;
  Tensor running_mean;
  Tensor running_var;

 private:
  std::string name_;
  int channels_;
  float momentum_, eps_;
  Mode mode_ = Mode::kTrain;
  std::vector<int> shape_;
  Tensor xhat_;
  std::vector<float> inv_std_;
};

class ReLU {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy) const;

 private:
  Tensor output_;
};

/// One fully-connected layer per part: input [N,P,in] -> [N,P,out], no
/// weights shared across parts. With parts == 1 it is a plain linear layer.
class SeparateFC {
 public:
  SeparateFC(std::string name, int parts, int in_features, int out_features, bool bias = true);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy, bool input_grad = true);
  void init(Rng& rng);
  void collect(std::vector<Parameter*>& out) {
    out.push_back(&weight);
    if (has_bias_) out.push_back(&bias);
  }

  int parts() const { return parts_; }
  int in_features() const { return in_; }
  int out_features() const { return out_; }

  Parameter weight;  // [P, in, out]
  Parameter bias;    // [P, out]

 private:
  int parts_, in_, out_;
  bool has_bias_;
  Tensor input_;
};

void zero_grad(std::span<Parameter* const> params);

/// Heavy-ball SGD: v = momentum*v + g + wd*w; w -= lr*v.
void sgd_step(std::span<Parameter* const> params, float lr, float momentum, float weight_decay);

}  // namespace gaitlab::nn
