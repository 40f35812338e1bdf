#include "gaitlab/silhouette.hpp"

#include <algorithm>
#include <numeric>

#include "gaitlab/errors.hpp"

namespace gaitlab {

size_t SilhouetteFrame::foreground() const {
  return static_cast<size_t>(std::count(pixels.begin(), pixels.end(), std::uint8_t{1}));
}

SilhouetteFrame size_normalize(const SilhouetteFrame& raw_mask, int target_h, int target_w) {
  int top = -1;
  int bottom = -1;
  for (int y = 0; y < raw_mask.height; ++y) {
    for (int x = 0; x < raw_mask.width; ++x) {
      if (raw_mask.at(y, x) != 0) {
        if (top < 0) top = y;
        bottom = y;
        break;
      }
    }
  }
  if (top < 0) throw GaitError(ErrorKind::kEmptySilhouette, "mask has no foreground pixel");
  const int body_h = bottom - top + 1;
  if (body_h < 2) {
    throw GaitError(ErrorKind::kDegenerateBody, "foreground height " + std::to_string(body_h) + " px");
  }

  const double scale = static_cast<double>(target_h) / body_h;
  const int scaled_w = std::max(1, static_cast<int>(std::lround(raw_mask.width * scale)));

  // Nearest-neighbour resample of rows [top, bottom] into target_h x scaled_w.
  std::vector<std::uint8_t> scaled(static_cast<size_t>(target_h) * scaled_w, 0);
  std::int64_t col_sum = 0;
  std::int64_t count = 0;
  for (int y = 0; y < target_h; ++y) {
    const int sy = std::min(bottom, top + static_cast<int>((y + 0.5) / scale));
    for (int x = 0; x < scaled_w; ++x) {
      const int sx = std::min(raw_mask.width - 1, static_cast<int>((x + 0.5) / scale));
      const std::uint8_t v = raw_mask.at(sy, sx) != 0 ? 1 : 0;
      scaled[static_cast<size_t>(y) * scaled_w + x] = v;
      if (v) {
        col_sum += x;
        ++count;
      }
    }
  }

  // round-half-up of the centre of mass, in integer arithmetic
  const std::int64_t center = (2 * col_sum + count) / (2 * count);
  const int offset = static_cast<int>(center) - target_w / 2;

  SilhouetteFrame out(target_h, target_w);
  for (int y = 0; y < target_h; ++y) {
    for (int x = 0; x < target_w; ++x) {
      const int sx = x + offset;
      if (sx >= 0 && sx < scaled_w) out.at(y, x) = scaled[static_cast<size_t>(y) * scaled_w + sx];
    }
  }
  return out;
}

Clip make_clip(const GaitSequence& seq, std::span<const int> timeline) {
  Clip clip;
  clip.source_id = seq.sequence_id;
  const int n = seq.frame_count();
  clip.frames.reserve(timeline.size());
  for (int t : timeline) {
    const int src = t % n;
    clip.frames.push_back(seq.frames[src]);
    clip.frame_indices.push_back(src);
    clip.timeline_indices.push_back(t);
  }
  return clip;
}

Clip full_clip(const GaitSequence& seq) {
  std::vector<int> idx(seq.frames.size());
  std::iota(idx.begin(), idx.end(), 0);
  return make_clip(seq, idx);
}

Clip sample_clip(const GaitSequence& seq, int length, Rng& rng) {
  if (length < 1) throw GaitError(ErrorKind::kRangeError, "clip length must be >= 1");
  if (seq.frames.empty()) throw GaitError(ErrorKind::kEmptySet, "sequence " + seq.sequence_id + " has no frames");
  const int n = seq.frame_count();
  std::vector<int> timeline(length);
  int start = 0;
  if (n >= length) {
    std::uniform_int_distribution<int> pick(0, n - length);
    start = pick(rng);
  }
  std::iota(timeline.begin(), timeline.end(), start);
  return make_clip(seq, timeline);
}

std::pair<Clip, Clip> sample_disjoint_clip_pair(const GaitSequence& seq, int length, Rng& rng) {
  if (length < 1) throw GaitError(ErrorKind::kRangeError, "clip length must be >= 1");
  if (seq.frames.empty()) throw GaitError(ErrorKind::kEmptySet, "sequence " + seq.sequence_id + " has no frames");
  const int n = seq.frame_count();
  std::vector<int> first(length);
  std::vector<int> second(length);

  if (n >= 2 * length) {
    const int slack = n - 2 * length;
    const int lead = std::uniform_int_distribution<int>(0, slack)(rng);
    const int gap = std::uniform_int_distribution<int>(0, slack - lead)(rng);
    std::iota(first.begin(), first.end(), lead);
    std::iota(second.begin(), second.end(), lead + length + gap);
  } else {
    // Rotation split of the 2L-long cyclic extension; positions stay in [0, 2L).
    const int span = 2 * length;
    const int rot = std::uniform_int_distribution<int>(0, span - 1)(rng);
    for (int i = 0; i < length; ++i) {
      first[i] = (rot + i) % span;
      second[i] = (rot + length + i) % span;
    }
  }

  Clip a = make_clip(seq, first);
  Clip b = make_clip(seq, second);
  if (std::bernoulli_distribution(0.5)(rng)) std::swap(a, b);
  return {std::move(a), std::move(b)};
}

}  // namespace gaitlab
