#include "gaitlab/nn/layers.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>
#include <Eigen/Dense>

#include "gaitlab/errors.hpp"

namespace gaitlab::nn {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using Strided = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using CStrided = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

void require(bool ok, const std::string& what) {
  if (!ok) throw GaitError(ErrorKind::kShapeMismatch, what);
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride, int pad)
    : weight(std::move(name) + ".weight", {out_channels, in_channels * kernel * kernel}),
      in_(in_channels),
      out_(out_channels),
      kernel_(kernel),
      stride_(stride),
      pad_(pad) {}

void Conv2d::init(Rng& rng) {
  // fan-out scaled Gaussian
  const double std = std::sqrt(2.0 / (static_cast<double>(out_) * kernel_ * kernel_));
  std::normal_distribution<double> dist(0.0, std);
  for (auto& w : weight.value.data) w = static_cast<float>(dist(rng));
}

void Conv2d::im2col(const float* img, int h, int w, float* col, size_t row_stride) const {
  const int ho = out_size(h, 0);
  const int wo = out_size(w, 1);
  const size_t plane = row_stride;
  for (int c = 0; c < in_; ++c) {
    for (int ky = 0; ky < kernel_; ++ky) {
      for (int kx = 0; kx < kernel_; ++kx) {
        float* dst = col + static_cast<size_t>((c * kernel_ + ky) * kernel_ + kx) * plane;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride_ - pad_ + ky;
          if (iy < 0 || iy >= h) {
            std::fill(dst + oy * wo, dst + (oy + 1) * wo, 0.f);
            continue;
          }
          const float* src = img + (static_cast<size_t>(c) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride_ - pad_ + kx;
            dst[oy * wo + ox] = (ix >= 0 && ix < w) ? src[ix] : 0.f;
          }
        }
      }
    }
  }
}

void Conv2d::col2im(const float* col, int h, int w, float* img, size_t row_stride) const {
  const int ho = out_size(h, 0);
  const int wo = out_size(w, 1);
  const size_t plane = row_stride;
  for (int c = 0; c < in_; ++c) {
    for (int ky = 0; ky < kernel_; ++ky) {
      for (int kx = 0; kx < kernel_; ++kx) {
        const float* src = col + static_cast<size_t>((c * kernel_ + ky) * kernel_ + kx) * plane;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride_ - pad_ + ky;
          if (iy < 0 || iy >= h) continue;
          float* dst = img + (static_cast<size_t>(c) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride_ - pad_ + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[oy * wo + ox];
          }
        }
      }
    }
  }
}

// Samples are processed in chunks so each GEMM sees a wide column block.
int Conv2d::chunk_size(int n, int plane) const {
  constexpr int kTargetColumns = 16384;
  return std::clamp(kTargetColumns / std::max(1, plane), 1, std::max(1, n));
}

Tensor Conv2d::forward(const Tensor& x) {
  require(x.rank() == 4 && x.dim(1) == in_, weight.name + ": expected [N," + std::to_string(in_) +
                                                ",H,W], got " + x.shape_str());
  const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const int ho = out_size(h, 0), wo = out_size(w, 1);
  const int plane = ho * wo;
  const int ckk = in_ * kernel_ * kernel_;
  // One GEMM per sample: Eigen's blocking depends on the column count, so a
  // batch-sized product would make a sample's output depend on its batch.
  const int chunk = 1;
  input_ = x;
  Tensor y({n, out_, ho, wo});
  RowMat col(ckk, static_cast<Eigen::Index>(chunk) * plane);
  RowMat res(out_, static_cast<Eigen::Index>(chunk) * plane);
  CMapMat wmat(weight.value.ptr(), out_, ckk);
  for (int s0 = 0; s0 < n; s0 += chunk) {
    const int cnt = std::min(chunk, n - s0);
    for (int j = 0; j < cnt; ++j) {
      im2col(x.ptr() + static_cast<size_t>(s0 + j) * in_ * h * w, h, w, col.data() + static_cast<size_t>(j) * plane,
             static_cast<size_t>(col.cols()));
    }
    const Eigen::Index cols = static_cast<Eigen::Index>(cnt) * plane;
    res.leftCols(cols).noalias() = wmat * col.leftCols(cols);
    for (int j = 0; j < cnt; ++j) {
      MapMat(y.ptr() + static_cast<size_t>(s0 + j) * out_ * plane, out_, plane) =
          res.middleCols(static_cast<Eigen::Index>(j) * plane, plane);
    }
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& dy, bool input_grad) {
  const int n = input_.dim(0), h = input_.dim(2), w = input_.dim(3);
  const int ho = out_size(h, 0), wo = out_size(w, 1);
  const int plane = ho * wo;
  const int ckk = in_ * kernel_ * kernel_;
  require(dy.shape == std::vector<int>({n, out_, ho, wo}), weight.name + ": gradient shape " + dy.shape_str());
  const int chunk = chunk_size(n, plane);
  Tensor dx;
  if (input_grad) dx = Tensor(input_.shape);
  RowMat col(ckk, static_cast<Eigen::Index>(chunk) * plane);
  RowMat g(out_, static_cast<Eigen::Index>(chunk) * plane);
  RowMat dcol;
  if (input_grad) dcol.resize(ckk, static_cast<Eigen::Index>(chunk) * plane);
  CMapMat wmat(weight.value.ptr(), out_, ckk);
  MapMat dw(weight.grad.ptr(), out_, ckk);
  for (int s0 = 0; s0 < n; s0 += chunk) {
    const int cnt = std::min(chunk, n - s0);
    const Eigen::Index cols = static_cast<Eigen::Index>(cnt) * plane;
    for (int j = 0; j < cnt; ++j) {
      im2col(input_.ptr() + static_cast<size_t>(s0 + j) * in_ * h * w, h, w,
             col.data() + static_cast<size_t>(j) * plane, static_cast<size_t>(col.cols()));
      g.middleCols(static_cast<Eigen::Index>(j) * plane, plane) =
          CMapMat(dy.ptr() + static_cast<size_t>(s0 + j) * out_ * plane, out_, plane);
    }
    dw.noalias() += g.leftCols(cols) * col.leftCols(cols).transpose();
    if (input_grad) {
      dcol.leftCols(cols).noalias() = wmat.transpose() * g.leftCols(cols);
      for (int j = 0; j < cnt; ++j) {
        col2im(dcol.data() + static_cast<size_t>(j) * plane, h, w, dx.ptr() + static_cast<size_t>(s0 + j) * in_ * h * w,
               static_cast<size_t>(dcol.cols()));
      }
    }
  }
  input_ = Tensor();
  return dx;
}

// ---------------------------------------------------------------- BatchNorm

BatchNorm::BatchNorm(std::string name, int channels, float momentum, float eps)
    : gamma(name + ".weight", {channels}, true),
      beta(name + ".bias", {channels}, true),
      running_mean({channels}, 0.f),
      running_var({channels}, 1.f),
      name_(std::move(name)),
      channels_(channels),
      momentum_(momentum),
      eps_(eps) {
  std::fill(gamma.value.data.begin(), gamma.value.data.end(), 1.f);
}

Tensor BatchNorm::forward(const Tensor& x, Mode mode) {
  require(x.rank() >= 2, name_ + ": rank < 2");
  const int n = x.dim(0);
  const size_t features = x.size() / static_cast<size_t>(n);
  require(features % static_cast<size_t>(channels_) == 0 &&
              (x.dim(1) == channels_ || static_cast<int>(features) == channels_),
          name_ + ": channel mismatch " + x.shape_str());
  const Eigen::Index spatial = static_cast<Eigen::Index>(features / channels_);
  const double m = static_cast<double>(n) * static_cast<double>(spatial);
  mode_ = mode;
  shape_ = x.shape;
  xhat_ = Tensor(x.shape);
  inv_std_.assign(channels_, 0.f);
  Tensor y(x.shape);

  auto seg = [&](const Tensor& t, int i, int c) {
    return Eigen::Map<const Eigen::ArrayXf>(t.ptr() + (static_cast<size_t>(i) * channels_ + c) * spatial, spatial);
  };
  auto mseg = [&](Tensor& t, int i, int c) {
    return Eigen::Map<Eigen::ArrayXf>(t.ptr() + (static_cast<size_t>(i) * channels_ + c) * spatial, spatial);
  };

  for (int c = 0; c < channels_; ++c) {
    double mean = 0.0;
    double var = 0.0;
    if (mode == Mode::kTrain) {
      // plain loops: fixed summation order regardless of buffer addresses
      for (int i = 0; i < n; ++i) {
        const float* px = x.ptr() + (static_cast<size_t>(i) * channels_ + c) * spatial;
        for (Eigen::Index k = 0; k < spatial; ++k) mean += px[k];
      }
      mean /= m;
      for (int i = 0; i < n; ++i) {
        const float* px = x.ptr() + (static_cast<size_t>(i) * channels_ + c) * spatial;
        for (Eigen::Index k = 0; k < spatial; ++k) var += (px[k] - mean) * (px[k] - mean);
      }
      var /= m;
      const double unbiased = m > 1 ? var * m / (m - 1) : var;
      running_mean.data[c] = static_cast<float>((1.0 - momentum_) * running_mean.data[c] + momentum_ * mean);
      running_var.data[c] = static_cast<float>((1.0 - momentum_) * running_var.data[c] + momentum_ * unbiased);
    } else {
      mean = running_mean.data[c];
      var = running_var.data[c];
    }
    const float inv = static_cast<float>(1.0 / std::sqrt(var + eps_));
    inv_std_[c] = inv;
    const float g = gamma.value.data[c];
    const float b = beta.value.data[c];
    const float mu = static_cast<float>(mean);
    for (int i = 0; i < n; ++i) {
      auto xh = mseg(xhat_, i, c);
      xh = (seg(x, i, c) - mu) * inv;
      mseg(y, i, c) = g * xh + b;
    }
  }
  return y;
}

Tensor BatchNorm::backward(const Tensor& dy) {
  require(dy.shape == shape_, name_ + ": gradient shape " + dy.shape_str());
  const int n = shape_[0];
  const Eigen::Index spatial = static_cast<Eigen::Index>(dy.size() / static_cast<size_t>(n) / channels_);
  const double m = static_cast<double>(n) * static_cast<double>(spatial);
  Tensor dx(shape_);
  auto seg = [&](const Tensor& t, int i, int c) {
    return Eigen::Map<const Eigen::ArrayXf>(t.ptr() + (static_cast<size_t>(i) * channels_ + c) * spatial, spatial);
  };
  for (int c = 0; c < channels_; ++c) {
    double sum_dy = 0.0;
    double sum_dy_xhat = 0.0;
    for (int i = 0; i < n; ++i) {
      const float* pd = dy.ptr() + (static_cast<size_t>(i) * channels_ + c) * spatial;
      const float* ph = xhat_.ptr() + (static_cast<size_t>(i) * channels_ + c) * spatial;
      for (Eigen::Index k = 0; k < spatial; ++k) {
        sum_dy += pd[k];
        sum_dy_xhat += static_cast<double>(pd[k]) * ph[k];
      }
    }
    gamma.grad.data[c] += static_cast<float>(sum_dy_xhat);
    beta.grad.data[c] += static_cast<float>(sum_dy);
    const float scale = gamma.value.data[c] * inv_std_[c];
    const float mean_dy = static_cast<float>(sum_dy / m);
    const float mean_dy_xhat = static_cast<float>(sum_dy_xhat / m);
    for (int i = 0; i < n; ++i) {
      Eigen::Map<Eigen::ArrayXf> out(dx.ptr() + (static_cast<size_t>(i) * channels_ + c) * spatial, spatial);
      if (mode_ == Mode::kTrain) {
        out = scale * (seg(dy, i, c) - mean_dy - seg(xhat_, i, c) * mean_dy_xhat);
      } else {
        out = scale * seg(dy, i, c);
      }
    }
  }
  xhat_ = Tensor();
  return dx;
}

// ---------------------------------------------------------------- ReLU

Tensor ReLU::forward(const Tensor& x) {
  output_ = x;
  for (auto& v : output_.data) v = v > 0.f ? v : 0.f;
  return output_;
}

Tensor ReLU::backward(const Tensor& dy) const {
  Tensor dx = dy;
  for (size_t i = 0; i < dx.size(); ++i) {
    if (output_.data[i] <= 0.f) dx.data[i] = 0.f;
  }
  return dx;
}

// ---------------------------------------------------------------- SeparateFC

SeparateFC::SeparateFC(std::string name, int parts, int in_features, int out_features, bool bias)
    : weight(name + ".weight", {parts, in_features, out_features}),
      bias(name + ".bias", {parts, out_features}),
      parts_(parts),
      in_(in_features),
      out_(out_features),
      has_bias_(bias) {}

void SeparateFC::init(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& w : weight.value.data) w = static_cast<float>(dist(rng));
  if (has_bias_) {
    for (auto& b : bias.value.data) b = static_cast<float>(dist(rng));
  }
}

Tensor SeparateFC::forward(const Tensor& x) {
  const bool flat = x.rank() == 2 && parts_ == 1 && x.dim(1) == in_;
  require(flat || (x.rank() == 3 && x.dim(1) == parts_ && x.dim(2) == in_),
          weight.name + ": expected [N," + std::to_string(parts_) + "," + std::to_string(in_) + "], got " +
              x.shape_str());
  const int n = x.dim(0);
  input_ = x;
  Tensor y = flat ? Tensor({n, out_}) : Tensor({n, parts_, out_});
  for (int p = 0; p < parts_; ++p) {
    CStrided xp(x.ptr() + static_cast<size_t>(p) * in_, n, in_, Eigen::OuterStride<>(parts_ * in_));
    Strided yp(y.ptr() + static_cast<size_t>(p) * out_, n, out_, Eigen::OuterStride<>(parts_ * out_));
    CMapMat wp(weight.value.ptr() + static_cast<size_t>(p) * in_ * out_, in_, out_);
    yp.noalias() = xp * wp;
    if (has_bias_) {
      Eigen::Map<const Eigen::RowVectorXf> bp(bias.value.ptr() + static_cast<size_t>(p) * out_, out_);
      yp.rowwise() += bp;
    }
  }
  return y;
}

Tensor SeparateFC::backward(const Tensor& dy, bool input_grad) {
  const int n = input_.dim(0);
  require(dy.size() == static_cast<size_t>(n) * parts_ * out_, weight.name + ": gradient shape " + dy.shape_str());
  Tensor dx;
  if (input_grad) dx = Tensor(input_.shape);
  for (int p = 0; p < parts_; ++p) {
    CStrided xp(input_.ptr() + static_cast<size_t>(p) * in_, n, in_, Eigen::OuterStride<>(parts_ * in_));
    CStrided gp(dy.ptr() + static_cast<size_t>(p) * out_, n, out_, Eigen::OuterStride<>(parts_ * out_));
    MapMat dw(weight.grad.ptr() + static_cast<size_t>(p) * in_ * out_, in_, out_);
    dw.noalias() += xp.transpose() * gp;
    if (has_bias_) {
      float* db = bias.grad.ptr() + static_cast<size_t>(p) * out_;
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < out_; ++j) db[j] += gp(i, j);
      }
    }
    if (input_grad) {
      CMapMat wp(weight.value.ptr() + static_cast<size_t>(p) * in_ * out_, in_, out_);
      Strided dxp(dx.ptr() + static_cast<size_t>(p) * in_, n, in_, Eigen::OuterStride<>(parts_ * in_));
      dxp.noalias() = gp * wp.transpose();
    }
  }
  input_ = Tensor();
  return dx;
}

// ---------------------------------------------------------------- optimizer

void zero_grad(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->grad.zero();
}

void sgd_step(std::span<Parameter* const> params, float lr, float momentum, float weight_decay) {
  for (Parameter* p : params) {
    auto& w = p->value.data;
    auto& g = p->grad.data;
    auto& v = p->velocity.data;
    for (size_t i = 0; i < w.size(); ++i) {
      const float d = g[i] + weight_decay * w[i];
      v[i] = momentum * v[i] + d;
      w[i] -= lr * v[i];
    }
  }
}

}  // namespace gaitlab::nn
