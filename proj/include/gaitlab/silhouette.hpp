#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace gaitlab {

using Rng = std::mt19937_64;

inline constexpr int kFrameHeight = 64;
inline constexpr int kFrameWidth = 44;

/// Binary mask, row-major, values exactly 0 or 1.
struct SilhouetteFrame {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;

  SilhouetteFrame() = default;
  SilhouetteFrame(int h, int w) : height(h), width(w), pixels(static_cast<size_t>(h) * w, 0) {}

  std::uint8_t at(int y, int x) const { return pixels[static_cast<size_t>(y) * width + x]; }
  std::uint8_t& at(int y, int x) { return pixels[static_cast<size_t>(y) * width + x]; }
  size_t foreground() const;
  bool operator==(const SilhouetteFrame&) const = default;
};

struct GaitSequence {
  std::vector<SilhouetteFrame> frames;
  std::string sequence_id;
  std::optional<std::string> subject_id;
  std::optional<std::string> view_label;
  std::optional<std::string> condition;

  int frame_count() const { return static_cast<int>(frames.size()); }
};

/// Fixed-length window over a sequence. `frame_indices` are source frame
/// indices; `timeline_indices` are positions on the cyclically extended
/// timeline (identical to `frame_indices` when no padding was needed).
struct Clip {
  std::vector<SilhouetteFrame> frames;
  std::string source_id;
  std::vector<int> frame_indices;
  std::vector<int> timeline_indices;

  int length() const { return static_cast<int>(frames.size()); }
};

/// Crops the body's vertical extent, scales it to `target_h` rows with
/// nearest-neighbour sampling, and centres the horizontal centre of mass.
SilhouetteFrame size_normalize(const SilhouetteFrame& raw_mask, int target_h = kFrameHeight,
                               int target_w = kFrameWidth);

/// Contiguous window when the sequence is long enough, cyclic repetition
/// starting at frame 0 otherwise.
Clip sample_clip(const GaitSequence& seq, int length, Rng& rng);

/// Two non-overlapping windows in random order. Short sequences are
/// cyclically extended to 2*length and split at a random rotation point.
std::pair<Clip, Clip> sample_disjoint_clip_pair(const GaitSequence& seq, int length, Rng& rng);

/// Builds a clip from explicit timeline positions (taken modulo frame count).
Clip make_clip(const GaitSequence& seq, std::span<const int> timeline);

/// Whole sequence as a clip, frames in order.
Clip full_clip(const GaitSequence& seq);

}  // namespace gaitlab
