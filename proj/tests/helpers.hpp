#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "gaitlab/silhouette.hpp"

namespace testing {

inline gaitlab::SilhouetteFrame random_frame(std::mt19937_64& rng, int h = 64, int w = 44, double density = 0.3) {
  gaitlab::SilhouetteFrame f(h, w);
  std::bernoulli_distribution on(density);
  for (auto& p : f.pixels) p = on(rng) ? 1 : 0;
  return f;
}

// Filled ellipse centred at (cy, cx).
inline gaitlab::SilhouetteFrame blob(int h, int w, double cy, double cx, double ry, double rx) {
  gaitlab::SilhouetteFrame f(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double dy = (y - cy) / ry, dx = (x - cx) / rx;
      if (dy * dy + dx * dx <= 1.0) f.at(y, x) = 1;
    }
  }
  return f;
}

inline gaitlab::GaitSequence numbered_sequence(int n, const std::string& id = "seq") {
  // frame t carries t in its first pixels so indices can be read back
  gaitlab::GaitSequence s;
  s.sequence_id = id;
  for (int t = 0; t < n; ++t) {
    gaitlab::SilhouetteFrame f(64, 44);
    for (int b = 0; b < 16; ++b) f.pixels[b] = (t >> b) & 1;
    f.at(63, 43) = 1;
    s.frames.push_back(f);
  }
  return s;
}

inline int frame_number(const gaitlab::SilhouetteFrame& f) {
  int t = 0;
  for (int b = 0; b < 16; ++b) t |= f.pixels[b] << b;
  return t;
}

inline bool is_binary(const gaitlab::SilhouetteFrame& f) {
  for (auto p : f.pixels) {
    if (p > 1) return false;
  }
  return true;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("gaitlab_" + tag + "_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

}  // namespace testing
