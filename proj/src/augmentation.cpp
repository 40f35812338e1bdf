#include "gaitlab/augmentation.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include <Eigen/Dense>

#include "gaitlab/errors.hpp"

namespace gaitlab {

namespace {

Clip map_frames(const Clip& clip, auto&& fn) {
  Clip out = clip;
  for (auto& f : out.frames) f = fn(f);
  return out;
}

// Inverse-maps every output pixel through `inv` (output -> source coords)
// and samples the nearest source pixel; outside the canvas reads 0.
template <typename InvMap>
SilhouetteFrame warp_nearest(const SilhouetteFrame& src, InvMap&& inv) {
  SilhouetteFrame out(src.height, src.width);
  for (int y = 0; y < src.height; ++y) {
    for (int x = 0; x < src.width; ++x) {
      const auto [sx, sy] = inv(static_cast<double>(x), static_cast<double>(y));
      const int ix = static_cast<int>(std::lround(sx));
      const int iy = static_cast<int>(std::lround(sy));
      if (ix >= 0 && ix < src.width && iy >= 0 && iy < src.height) out.at(y, x) = src.at(iy, ix) >= 1 ? 1 : 0;
    }
  }
  return out;
}

std::pair<int, int> body_rows(const Clip& clip) {
  int top = -1;
  int bottom = -1;
  for (const auto& f : clip.frames) {
    for (int y = 0; y < f.height; ++y) {
      for (int x = 0; x < f.width; ++x) {
        if (f.at(y, x)) {
          if (top < 0 || y < top) top = y;
          if (y > bottom) bottom = y;
          break;
        }
      }
    }
  }
  return {top, bottom};
}

AffineParams sample_affine(const SpatialAugConfig& cfg, Rng& rng) {
  AffineParams p;
  p.angle_deg = std::uniform_real_distribution<double>(-cfg.rotation_deg, cfg.rotation_deg)(rng);
  p.shear = std::uniform_real_distribution<double>(-cfg.shear, cfg.shear)(rng);
  return p;
}

PerspectiveParams sample_perspective(const SpatialAugConfig& cfg, Rng& rng) {
  PerspectiveParams p;
  std::uniform_real_distribution<double> d(-cfg.perspective_px, cfg.perspective_px);
  for (auto& c : p.corners) {
    c[0] = d(rng);
    c[1] = d(rng);
  }
  return p;
}

DilationParams sample_dilation(const Clip& clip, const SpatialAugConfig& cfg, Rng& rng) {
  DilationParams p;
  p.shape = cfg.dilation_shapes[std::uniform_int_distribution<size_t>(0, cfg.dilation_shapes.size() - 1)(rng)];
  p.size = cfg.dilation_sizes[std::uniform_int_distribution<size_t>(0, cfg.dilation_sizes.size() - 1)(rng)];
  const auto [top, bottom] = body_rows(clip);
  if (top < 0) return p;  // no foreground: empty band
  const int body_h = bottom - top + 1;
  const double frac = std::uniform_real_distribution<double>(cfg.band_frac_min, cfg.band_frac_max)(rng);
  const int band_h = std::clamp(static_cast<int>(std::lround(frac * body_h)), 1, body_h);
  p.band_top = std::uniform_int_distribution<int>(top, bottom - band_h + 1)(rng);
  p.band_bottom = p.band_top + band_h;
  return p;
}

}  // namespace

std::string to_string(KernelShape shape) {
  switch (shape) {
    case KernelShape::kRectangle: return "rectangle";
    case KernelShape::kCross: return "cross";
    case KernelShape::kEllipse: return "ellipse";
  }
  return "rectangle";
}

KernelShape kernel_shape_from(const std::string& name) {
  if (name == "rectangle" || name == "rect") return KernelShape::kRectangle;
  if (name == "cross") return KernelShape::kCross;
  if (name == "ellipse") return KernelShape::kEllipse;
  throw GaitError(ErrorKind::kTypeError, "unknown kernel shape '" + name + "'");
}

void SpatialAugConfig::validate() const {
  for (double p : {p_flip, p_affine, p_perspective, p_dilation}) {
    if (!(p >= 0.0 && p <= 1.0)) throw GaitError(ErrorKind::kRangeError, "augmentation probability outside [0,1]");
  }
  if (rotation_deg < 0 || shear < 0 || perspective_px < 0) {
    throw GaitError(ErrorKind::kRangeError, "augmentation ranges must be non-negative half-widths");
  }
  if (dilation_shapes.empty() || dilation_sizes.empty()) {
    throw GaitError(ErrorKind::kRangeError, "dilation needs at least one kernel shape and size");
  }
  for (int s : dilation_sizes) {
    if (s < 1 || s % 2 == 0) throw GaitError(ErrorKind::kRangeError, "dilation kernel sizes must be odd");
  }
  if (!(band_frac_min >= 0 && band_frac_min <= band_frac_max && band_frac_max <= 1)) {
    throw GaitError(ErrorKind::kRangeError, "band fractions must satisfy 0 <= min <= max <= 1");
  }
}

std::string AugRecord::describe() const {
  std::ostringstream os;
  os << "flip=" << flipped;
  if (affine) os << " affine(angle=" << affine->angle_deg << ",shear=" << affine->shear << ")";
  if (perspective) {
    os << " perspective(";
    for (const auto& c : perspective->corners) os << "[" << c[0] << "," << c[1] << "]";
    os << ")";
  }
  if (dilation) {
    os << " dilation(" << to_string(dilation->shape) << "," << dilation->size << ",rows=" << dilation->band_top
       << ".." << dilation->band_bottom << ")";
  }
  return os.str();
}

SilhouetteFrame flip_frame(const SilhouetteFrame& frame) {
  SilhouetteFrame out(frame.height, frame.width);
  for (int y = 0; y < frame.height; ++y) {
    for (int x = 0; x < frame.width; ++x) out.at(y, x) = frame.at(y, frame.width - 1 - x);
  }
  return out;
}

SilhouetteFrame affine_frame(const SilhouetteFrame& frame, const AffineParams& params) {
  if (params.angle_deg == 0.0 && params.shear == 0.0) return frame;
  const double th = params.angle_deg * std::numbers::pi / 180.0;
  const double c = std::cos(th), s = std::sin(th);
  // forward A = R * Sh, Sh = [[1, shear], [0, 1]]
  Eigen::Matrix2d a;
  a << c, c * params.shear - s, s, s * params.shear + c;
  const Eigen::Matrix2d inv = a.inverse();
  const double cx = (frame.width - 1) / 2.0;
  const double cy = (frame.height - 1) / 2.0;
  return warp_nearest(frame, [&](double x, double y) {
    const Eigen::Vector2d p = inv * Eigen::Vector2d(x - cx, y - cy);
    return std::pair<double, double>{p.x() + cx, p.y() + cy};
  });
}

std::array<double, 9> perspective_homography(int height, int width, const PerspectiveParams& params) {
  const double w = width - 1, h = height - 1;
  const std::array<std::array<double, 2>, 4> src = {{{0, 0}, {w, 0}, {w, h}, {0, h}}};
  Eigen::Matrix<double, 8, 8> m;
  Eigen::Matrix<double, 8, 1> rhs;
  for (int i = 0; i < 4; ++i) {
    const double x = src[i][0], y = src[i][1];
    const double u = x + params.corners[i][0], v = y + params.corners[i][1];
    m.row(2 * i) << x, y, 1, 0, 0, 0, -u * x, -u * y;
    m.row(2 * i + 1) << 0, 0, 0, x, y, 1, -v * x, -v * y;
    rhs(2 * i) = u;
    rhs(2 * i + 1) = v;
  }
  const Eigen::Matrix<double, 8, 1> sol = m.fullPivLu().solve(rhs);
  return {sol(0), sol(1), sol(2), sol(3), sol(4), sol(5), sol(6), sol(7), 1.0};
}

SilhouetteFrame perspective_frame(const SilhouetteFrame& frame, const PerspectiveParams& params) {
  bool identity = true;
  for (const auto& c : params.corners) identity = identity && c[0] == 0.0 && c[1] == 0.0;
  if (identity) return frame;
  const auto hv = perspective_homography(frame.height, frame.width, params);
  Eigen::Matrix3d hm;
  hm << hv[0], hv[1], hv[2], hv[3], hv[4], hv[5], hv[6], hv[7], hv[8];
  const Eigen::Matrix3d inv = hm.inverse();
  return warp_nearest(frame, [&](double x, double y) {
    const Eigen::Vector3d p = inv * Eigen::Vector3d(x, y, 1.0);
    if (std::abs(p.z()) < 1e-12) return std::pair<double, double>{-1e9, -1e9};
    return std::pair<double, double>{p.x() / p.z(), p.y() / p.z()};
  });
}

std::vector<std::uint8_t> structuring_element(KernelShape shape, int size) {
  const int r = size / 2;
  std::vector<std::uint8_t> k(static_cast<size_t>(size) * size, 0);
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      bool on = true;
      if (shape == KernelShape::kCross) on = dx == 0 || dy == 0;
      if (shape == KernelShape::kEllipse) on = dx * dx + dy * dy <= r * r;
      k[static_cast<size_t>(dy + r) * size + (dx + r)] = on ? 1 : 0;
    }
  }
  return k;
}

SilhouetteFrame dilate_frame(const SilhouetteFrame& frame, const DilationParams& params) {
  SilhouetteFrame out = frame;
  const int top = std::max(0, params.band_top);
  const int bottom = std::min(frame.height, params.band_bottom);
  if (top >= bottom) return out;
  const auto k = structuring_element(params.shape, params.size);
  const int r = params.size / 2;
  for (int y = top; y < bottom; ++y) {
    for (int x = 0; x < frame.width; ++x) {
      if (out.at(y, x)) continue;
      bool hit = false;
      for (int dy = -r; dy <= r && !hit; ++dy) {
        const int sy = y + dy;
        if (sy < 0 || sy >= frame.height) continue;
        for (int dx = -r; dx <= r; ++dx) {
          const int sx = x + dx;
          if (sx < 0 || sx >= frame.width) continue;
          if (k[static_cast<size_t>(dy + r) * params.size + (dx + r)] && frame.at(sy, sx)) {
            hit = true;
            break;
          }
        }
      }
      if (hit) out.at(y, x) = 1;
    }
  }
  return out;
}

Clip horizontal_flip(const Clip& clip) { return map_frames(clip, flip_frame); }

std::pair<Clip, AugRecord> random_affine(const Clip& clip, const SpatialAugConfig& cfg, Rng& rng) {
  AugRecord rec;
  rec.affine = sample_affine(cfg, rng);
  return {apply_record(clip, rec), rec};
}

std::pair<Clip, AugRecord> random_perspective(const Clip& clip, const SpatialAugConfig& cfg, Rng& rng) {
  AugRecord rec;
  rec.perspective = sample_perspective(cfg, rng);
  return {apply_record(clip, rec), rec};
}

std::pair<Clip, AugRecord> random_body_dilation(const Clip& clip, const SpatialAugConfig& cfg, Rng& rng) {
  AugRecord rec;
  rec.dilation = sample_dilation(clip, cfg, rng);
  return {apply_record(clip, rec), rec};
}

Clip apply_record(const Clip& clip, const AugRecord& record) {
  Clip out = clip;
  for (auto& f : out.frames) {
    if (record.flipped) f = flip_frame(f);
    if (record.affine) f = affine_frame(f, *record.affine);
    if (record.perspective) f = perspective_frame(f, *record.perspective);
  }
  // dilation band is chosen on the warped clip, so it is applied last
  if (record.dilation) {
    for (auto& f : out.frames) f = dilate_frame(f, *record.dilation);
  }
  return out;
}

std::pair<Clip, AugRecord> apply_sao_spatial(const Clip& clip, const SpatialAugConfig& cfg, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const bool do_flip = u(rng) < cfg.p_flip;
  const bool do_affine = u(rng) < cfg.p_affine;
  const bool do_persp = u(rng) < cfg.p_perspective;
  const bool do_dilate = u(rng) < cfg.p_dilation;

  AugRecord rec;
  rec.flipped = do_flip;
  if (do_affine) rec.affine = sample_affine(cfg, rng);
  if (do_persp) rec.perspective = sample_perspective(cfg, rng);

  Clip warped = clip;
  for (auto& f : warped.frames) {
    if (rec.flipped) f = flip_frame(f);
    if (rec.affine) f = affine_frame(f, *rec.affine);
    if (rec.perspective) f = perspective_frame(f, *rec.perspective);
  }
  if (do_dilate) {
    rec.dilation = sample_dilation(warped, cfg, rng);
    for (auto& f : warped.frames) f = dilate_frame(f, *rec.dilation);
  }
  return {std::move(warped), rec};
}

}  // namespace gaitlab
