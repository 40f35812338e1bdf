#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "gaitlab/silhouette.hpp"

namespace gaitlab {

enum class KernelShape { kRectangle, kCross, kEllipse };

std::string to_string(KernelShape shape);
KernelShape kernel_shape_from(const std::string& name);

/// Gating probabilities and parameter ranges of the spatial augmentation.
struct SpatialAugConfig {
  double p_flip = 0.5;
  double p_affine = 0.5;
  double p_perspective = 0.5;
  double p_dilation = 0.5;
  double rotation_deg = 10.0;     // angle ~ U[-rotation_deg, +rotation_deg]
  double shear = 5e-3;            // shear level ~ U[-shear, +shear]
  double perspective_px = 10.0;   // per-axis corner displacement bound
  std::vector<KernelShape> dilation_shapes = {KernelShape::kRectangle, KernelShape::kCross, KernelShape::kEllipse};
  std::vector<int> dilation_sizes = {3, 5};
  double band_frac_min = 0.1;     // dilation band height, fraction of body height
  double band_frac_max = 0.5;

  void validate() const;
};

struct AffineParams {
  double angle_deg = 0.0;
  double shear = 0.0;
};

/// Corner displacements (dx, dy) for top-left, top-right, bottom-right,
/// bottom-left, in pixels.
struct PerspectiveParams {
  std::array<std::array<double, 2>, 4> corners{};
};

struct DilationParams {
  KernelShape shape = KernelShape::kRectangle;
  int size = 3;
  int band_top = 0;     // inclusive
  int band_bottom = 0;  // exclusive; band_top == band_bottom is empty
};

/// What fired for one clip and with which parameters; one set per clip.
struct AugRecord {
  bool flipped = false;
  std::optional<AffineParams> affine;
  std::optional<PerspectiveParams> perspective;
  std::optional<DilationParams> dilation;

  std::string describe() const;
};

SilhouetteFrame flip_frame(const SilhouetteFrame& frame);
SilhouetteFrame affine_frame(const SilhouetteFrame& frame, const AffineParams& params);
SilhouetteFrame perspective_frame(const SilhouetteFrame& frame, const PerspectiveParams& params);
SilhouetteFrame dilate_frame(const SilhouetteFrame& frame, const DilationParams& params);

/// 3x3 homography (row-major) mapping source canvas corners to the
/// displaced corners.
std::array<double, 9> perspective_homography(int height, int width, const PerspectiveParams& params);

/// Structuring element of odd `size`, row-major size*size of 0/1.
std::vector<std::uint8_t> structuring_element(KernelShape shape, int size);

Clip horizontal_flip(const Clip& clip);
std::pair<Clip, AugRecord> random_affine(const Clip& clip, const SpatialAugConfig& cfg, Rng& rng);
std::pair<Clip, AugRecord> random_perspective(const Clip& clip, const SpatialAugConfig& cfg, Rng& rng);
std::pair<Clip, AugRecord> random_body_dilation(const Clip& clip, const SpatialAugConfig& cfg, Rng& rng);

/// Gates each transform independently, then applies flip -> affine ->
/// perspective -> dilation with one parameter set for the whole clip.
std::pair<Clip, AugRecord> apply_sao_spatial(const Clip& clip, const SpatialAugConfig& cfg, Rng& rng);

/// Replays a record produced by apply_sao_spatial (or the random_* ops).
Clip apply_record(const Clip& clip, const AugRecord& record);

}  // namespace gaitlab
