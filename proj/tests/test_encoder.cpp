#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "gaitlab/encoder.hpp"
#include "helpers.hpp"

using namespace gaitlab;

namespace {

EncoderConfig tiny() {
  EncoderConfig cfg;
  cfg.stem_channels = 4;
  cfg.channels = {4, 8, 8, 8};
  cfg.parts = 4;
  cfg.embed_dim = 6;
  return cfg;
}

Clip random_clip(std::mt19937_64& rng, int t) {
  Clip c;
  for (int i = 0; i < t; ++i) {
    auto f = testing::blob(64, 44, 32, 22, 26, 9);
    const auto speckle = testing::random_frame(rng, 64, 44, 0.1);
    for (size_t p = 0; p < f.pixels.size(); ++p) f.pixels[p] ^= speckle.pixels[p];
    c.frames.push_back(f);
  }
  return c;
}

bool all_finite(const Tensor& t) {
  return std::all_of(t.data.begin(), t.data.end(), [](float v) { return std::isfinite(v); });
}

}  // namespace

TEST_CASE("full-size backbone shapes") {
  Encoder enc(EncoderConfig{}, 1);
  std::mt19937_64 rng(1);
  const Clip c = random_clip(rng, 16);
  const Tensor maps = enc.forward_backbone(std::span<const Clip>(&c, 1), Mode::kEval);
  CHECK(maps.shape == std::vector<int>{16, 512, 16, 11});
  CHECK(all_finite(maps));
  const Tensor emb = enc.encode(c, Mode::kEval);
  CHECK(emb.shape == std::vector<int>{1, 16, 512});
  CHECK(all_finite(emb));
}

TEST_CASE("backbone parameter count") {
  // stem + four blocks with 1x1 projection shortcuts, 3x3 convs, BN affine
  CHECK(backbone_parameter_count(EncoderConfig{}) == 4901184);
  Encoder enc(tiny(), 0);
  std::int64_t n = 0;
  for (auto* p : enc.backbone_parameters()) n += static_cast<std::int64_t>(p->value.size());
  CHECK(n == backbone_parameter_count(tiny()));
}

TEST_CASE("per-frame maps are frame independent in eval mode") {
  Encoder enc(tiny(), 2);
  std::mt19937_64 rng(2);
  Clip a = random_clip(rng, 5);
  Clip b = a;
  b.frames[3] = random_clip(rng, 1).frames[0];
  const Tensor ma = enc.forward_backbone(std::span<const Clip>(&a, 1), Mode::kEval);
  const Tensor mb = enc.forward_backbone(std::span<const Clip>(&b, 1), Mode::kEval);
  const size_t per = ma.size() / 5;
  for (int t = 0; t < 5; ++t) {
    const bool same = std::equal(ma.data.begin() + t * per, ma.data.begin() + (t + 1) * per, mb.data.begin() + t * per);
    CHECK(same == (t != 3));
  }
}

TEST_CASE("temporal pool") {
  Tensor x({3, 2, 1, 1});
  x.data = {1, 5, 4, 2, 3, 9};
  const std::vector<int> one = {3};
  const Tensor y = temporal_pool(x, one);
  CHECK(y.shape == std::vector<int>{1, 2, 1, 1});
  CHECK(y.data == nn::FloatVec{4, 9});
  const std::vector<int> split = {1, 2};
  const Tensor z = temporal_pool(x, split);
  CHECK(z.data == nn::FloatVec{1, 5, 4, 9});
}

TEST_CASE("horizontal pool closed forms") {
  Tensor c({1, 3, 8, 5}, 1.5f);
  const Tensor p = horizontal_pool(c, 4);
  CHECK(p.shape == std::vector<int>{1, 4, 3});
  for (float v : p.data) CHECK(v == 3.0f);

  Tensor s({1, 1, 2, 2});
  s.data = {0, 4, 4, 0};  // one strip holding {0, 4, 4, 0}
  CHECK(horizontal_pool(s, 1).data == nn::FloatVec{6});
  CHECK(horizontal_pool(s, 1, PoolCombine::kConcat).data == nn::FloatVec{2, 4});

  Tensor full({1, 512, 16, 11}, 0.25f);
  CHECK(horizontal_pool(full, 16).shape == std::vector<int>{1, 16, 512});
}

TEST_CASE("encode is a set function of the frames") {
  Encoder enc(tiny(), 3);
  std::mt19937_64 rng(3);
  const Clip c = random_clip(rng, 6);
  const Tensor base = enc.encode(c, Mode::kEval);
  CHECK(enc.encode(c, Mode::kEval).data == base.data);

  Clip perm = c;
  std::reverse(perm.frames.begin(), perm.frames.end());
  std::swap(perm.frames[1], perm.frames[4]);
  CHECK(enc.encode(perm, Mode::kEval).data == base.data);

  Clip dup = c;
  dup.frames.push_back(c.frames[2]);
  dup.frames.insert(dup.frames.begin(), c.frames[0]);
  CHECK(enc.encode(dup, Mode::kEval).data == base.data);
}

TEST_CASE("finite outputs on degenerate inputs") {
  Encoder enc(tiny(), 4);
  Clip zeros, ones;
  for (int i = 0; i < 4; ++i) {
    zeros.frames.emplace_back(64, 44);
    SilhouetteFrame f(64, 44);
    std::fill(f.pixels.begin(), f.pixels.end(), 1);
    ones.frames.push_back(f);
  }
  const std::vector<Clip> batch = {zeros, ones};
  CHECK(all_finite(enc.encode(batch, Mode::kTrain)));
  CHECK(all_finite(enc.encode(zeros, Mode::kEval)));
  CHECK(all_finite(enc.encode(ones, Mode::kEval)));
}

TEST_CASE("separate FC keeps parts independent") {
  nn::SeparateFC fc("t", 4, 3, 2);
  nn::Rng rng(5);
  fc.init(rng);
  std::fill(fc.bias.value.data.begin(), fc.bias.value.data.end(), 0.f);
  Tensor zero({2, 4, 3});
  for (float v : fc.forward(zero).data) CHECK(v == 0.f);

  Tensor x({1, 4, 3});
  for (size_t i = 0; i < x.size(); ++i) x.data[i] = 0.1f * static_cast<float>(i);
  const Tensor y0 = fc.forward(x);
  x.data[3 * 3 + 1] += 1.f;  // part 3
  const Tensor y1 = fc.forward(x);
  for (int p = 0; p < 4; ++p) {
    for (int j = 0; j < 2; ++j) CHECK((y0.data[p * 2 + j] == y1.data[p * 2 + j]) == (p != 3));
  }

  Predictor pred(4, 3, 6);
  CHECK(pred.forward(Tensor({2, 4, 3}, 0.5f), Mode::kTrain).shape == std::vector<int>{2, 4, 3});
}

TEST_CASE("part locality of pre-projection vectors") {
  // zeroing the map rows of one strip changes only that part's vector
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<float> u(0.1f, 2.f);
  Tensor map({2, 5, 16, 11});
  for (auto& v : map.data) v = u(rng);
  const Tensor before = horizontal_pool(map, 4);
  for (int b = 0; b < 2; ++b) {
    for (int c = 0; c < 5; ++c) {
      for (int y = 4; y < 8; ++y) {
        for (int x = 0; x < 11; ++x) map.data[((b * 5 + c) * 16 + y) * 11 + x] = 0.f;
      }
    }
  }
  const Tensor after = horizontal_pool(map, 4);
  for (int b = 0; b < 2; ++b) {
    for (int p = 0; p < 4; ++p) {
      for (int c = 0; c < 5; ++c) {
        const size_t i = (b * 4 + p) * 5 + c;
        CHECK((before.data[i] == after.data[i]) == (p != 1));
      }
    }
  }
}

TEST_CASE("backward matches finite differences") {
  Encoder enc(tiny(), 8);
  std::mt19937_64 rng(8);
  const std::vector<Clip> clips = {random_clip(rng, 3), random_clip(rng, 2)};
  std::mt19937_64 wr(9);
  std::normal_distribution<float> nd;
  Tensor w({2, 4, 6});
  for (auto& v : w.data) v = nd(wr);
  auto loss = [&] {
    const Tensor e = enc.encode(clips, Mode::kTrain);
    double s = 0;
    for (size_t i = 0; i < e.size(); ++i) s += static_cast<double>(e.data[i]) * w.data[i];
    return s;
  };
  auto params = enc.parameters();
  nn::zero_grad(params);
  loss();
  enc.backward(w);

  int checked = 0, agree = 0;
  std::mt19937_64 pick(10);
  for (auto* p : params) {
    for (int rep = 0; rep < 3; ++rep) {
      const size_t i = pick() % p->value.size();
      const float orig = p->value.data[i];
      const float h = 1e-2f;
      p->value.data[i] = orig + h;
      const double up = loss();
      p->value.data[i] = orig - h;
      const double down = loss();
      p->value.data[i] = orig;
      const double fd = (up - down) / (2 * h);
      const double an = p->grad.data[i];
      ++checked;
      // max-pool switches make a few coordinates non-smooth
      if (std::abs(fd - an) <= 2e-2 * std::max(1.0, std::abs(fd))) ++agree;
    }
  }
  CHECK(agree >= checked * 9 / 10);
}
