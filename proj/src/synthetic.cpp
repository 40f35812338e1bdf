#include "gaitlab/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "gaitlab/errors.hpp"

namespace gaitlab {

namespace {

constexpr double kPi = std::numbers::pi;

struct Point {
  double x, y;
};

double segment_distance(Point p, Point a, Point b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = p.x - (a.x + t * vx), dy = p.y - (a.y + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

struct Capsule {
  Point a, b;
  double radius;
};

struct Ellipse {
  Point c;
  double rx, ry;
};

std::string pad(int v, int width) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%0*d", width, v);
  return buf;
}

void add_boundary_noise(SilhouetteFrame& f, double p, Rng& rng) {
  if (p <= 0) return;
  const SilhouetteFrame src = f;
  std::bernoulli_distribution flip(p);
  for (int y = 0; y < f.height; ++y) {
    for (int x = 0; x < f.width; ++x) {
      const auto v = src.at(y, x);
      bool boundary = false;
      const int dy[4] = {-1, 1, 0, 0};
      const int dx[4] = {0, 0, -1, 1};
      for (int k = 0; k < 4; ++k) {
        const int ny = y + dy[k], nx = x + dx[k];
        if (ny >= 0 && ny < f.height && nx >= 0 && nx < f.width && src.at(ny, nx) != v) boundary = true;
      }
      if (boundary && flip(rng)) f.at(y, x) = v ? 0 : 1;
    }
  }
}

}  // namespace

std::string condition_code(WalkCondition c) {
  switch (c) {
    case WalkCondition::kNormal: return "nm";
    case WalkCondition::kBag: return "bg";
    case WalkCondition::kCoat: return "cl";
  }
  return "nm";
}

WalkCondition condition_from(const std::string& code) {
  std::string c = code.substr(0, 2);
  std::transform(c.begin(), c.end(), c.begin(), [](unsigned char ch) { return std::tolower(ch); });
  if (c == "nm") return WalkCondition::kNormal;
  if (c == "bg") return WalkCondition::kBag;
  if (c == "cl") return WalkCondition::kCoat;
  throw GaitError(ErrorKind::kParamOutOfRange, "unknown walking condition '" + code + "'");
}

void SyntheticIdentity::validate() const {
  auto check = [](bool ok, const char* what) {
    if (!ok) throw GaitError(ErrorKind::kParamOutOfRange, what);
  };
  check(period >= 4, "gait period must be >= 4 frames");
  check(torso_width > 0.05 && torso_width < 0.5, "torso_width outside (0.05, 0.5)");
  check(leg_ratio >= 0.3 && leg_ratio <= 0.6, "leg_ratio outside [0.3, 0.6]");
  check(head_radius > 0.03 && head_radius < 0.1, "head_radius outside (0.03, 0.1)");
  check(limb_px >= 1.5 && limb_px <= 6.0, "limb_px outside [1.5, 6]");
  check(arm_ratio >= 0.2 && arm_ratio <= 0.45, "arm_ratio outside [0.2, 0.45]");
  check(stride_rad >= 0.0 && stride_rad <= 0.8, "stride_rad outside [0, 0.8]");
  check(knee_rad >= 0.0 && knee_rad <= 1.2, "knee_rad outside [0, 1.2]");
  check(std::abs(lean) <= 0.2, "lean outside [-0.2, 0.2]");
}

SyntheticIdentity make_identity(int index, int count, std::uint64_t seed) {
  Rng rng(seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(index) * 0xBF58476D1CE4E5B9ULL + 1);
  auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  SyntheticIdentity id;
  id.leg_ratio = 0.40 + 0.14 * (index + 0.5) / std::max(1, count);
  id.torso_width = u(0.20, 0.32);
  id.head_radius = u(0.055, 0.08);
  id.limb_px = u(2.6, 4.4);
  id.arm_ratio = u(0.28, 0.38);
  id.period = std::uniform_int_distribution<int>(9, 15)(rng);
  id.stride_rad = u(0.30, 0.60);
  id.knee_rad = u(0.40, 0.80);
  id.lean = u(-0.08, 0.08);
  return id;
}

RenderedFrame render_frame(const SyntheticIdentity& id, const RenderOptions& opt, int t, int n_frames) {
  constexpr int kH = kFrameHeight, kW = kFrameWidth;
  constexpr double kBody = 62.0;
  constexpr double kGround = 62.8;

  const double view = opt.view_deg + opt.view_drift_deg * (n_frames > 1 ? static_cast<double>(t) / (n_frames - 1) : 0.0);
  const double vr = view * kPi / 180.0;
  const double lateral = std::abs(std::sin(vr));  // sagittal swing visibility
  const double frontal = std::abs(std::cos(vr));  // left/right separation visibility
  const double dir = std::cos(vr) >= 0 ? 1.0 : -1.0;
  const double r = id.limb_px / 2.0;

  const double omega = 2.0 * kPi * t / id.period + opt.phase;
  const double leg_len = id.leg_ratio * kBody;
  const double seg = leg_len / 2.0;

  struct Leg {
    double hip, knee;
  };
  const Leg legs[2] = {{id.stride_rad * std::sin(omega), id.knee_rad * std::max(0.0, std::sin(omega + 0.5))},
                       {id.stride_rad * std::sin(omega + kPi), id.knee_rad * std::max(0.0, std::sin(omega + kPi + 0.5))}};

  double drop = 0.0;
  for (const auto& l : legs) drop = std::max(drop, seg * std::cos(l.hip) + seg * std::cos(l.hip - l.knee));
  const double hip_y = kGround - r - drop;
  const double cx = (kW - 1) / 2.0;

  const double torso_len = kBody * (1.0 - id.leg_ratio) - 2.0 * id.head_radius * kBody - 1.5;
  const double shoulder_y = hip_y - torso_len;
  const double shoulder_x = cx + dir * lateral * id.lean * torso_len;
  double half_w = id.torso_width * kW * (frontal + 0.62 * lateral) / 2.0;
  half_w = std::max(half_w, r + 0.5);
  const double coat = opt.condition == WalkCondition::kCoat ? 1.35 : 1.0;

  std::vector<Capsule> caps;
  const double hip_half = half_w * 0.55 * frontal;
  for (int i = 0; i < 2; ++i) {
    const double side = i == 0 ? -1.0 : 1.0;
    const Point hip{cx + side * hip_half, hip_y};
    const Point knee{hip.x + dir * lateral * seg * std::sin(legs[i].hip), hip.y + seg * std::cos(legs[i].hip)};
    const double shin = legs[i].hip - legs[i].knee;
    const Point foot{knee.x + dir * lateral * seg * std::sin(shin), knee.y + seg * std::cos(shin)};
    caps.push_back({hip, knee, r});
    caps.push_back({knee, foot, r});
  }
  const double arm_seg = id.arm_ratio * kBody / 2.0;
  for (int i = 0; i < 2; ++i) {
    const double side = i == 0 ? -1.0 : 1.0;
    const double swing = -0.7 * legs[i].hip;
    const Point sh{shoulder_x + side * (half_w + r * 0.5) * frontal, shoulder_y + 2.0};
    const Point elbow{sh.x + dir * lateral * arm_seg * std::sin(swing), sh.y + arm_seg * std::cos(swing)};
    const double fore = swing + 0.3;
    const Point hand{elbow.x + dir * lateral * arm_seg * std::sin(fore), elbow.y + arm_seg * std::cos(fore)};
    caps.push_back({sh, elbow, r * 0.85});
    caps.push_back({elbow, hand, r * 0.85});
  }

  std::vector<Ellipse> ellipses;
  const double head_r = id.head_radius * kBody;
  ellipses.push_back({{shoulder_x, shoulder_y - 1.5 - head_r}, head_r, head_r});
  if (opt.condition == WalkCondition::kBag) {
    const double side = lateral > 0.3 ? -dir : 1.0;
    const double bx = cx + side * (half_w + 3.0);
    ellipses.push_back({{bx, shoulder_y + 2.0 + 1.8 * arm_seg}, 4.0, 5.0});
  }

  RenderedFrame out;
  out.frame = SilhouetteFrame(kH, kW);
  out.torso_top = std::max(0, static_cast<int>(std::ceil(shoulder_y)));
  out.torso_bottom = std::min(kH, static_cast<int>(std::floor(hip_y)) + 1);
  for (int y = 0; y < kH; ++y) {
    for (int x = 0; x < kW; ++x) {
      const Point p{static_cast<double>(x), static_cast<double>(y)};
      bool on = false;
      if (y >= out.torso_top && y < out.torso_bottom) {
        // trapezoid torso, slightly narrower at the hips
        const double f = (y - shoulder_y) / std::max(1.0, hip_y - shoulder_y);
        const double center = shoulder_x + (cx - shoulder_x) * f;
        double hw = half_w * (1.0 - 0.15 * f);
        if (opt.condition == WalkCondition::kCoat) hw = hw * coat + 1.0;
        on = std::abs(x - center) <= hw;
      }
      for (size_t k = 0; k < caps.size() && !on; ++k) on = segment_distance(p, caps[k].a, caps[k].b) <= caps[k].radius;
      for (size_t k = 0; k < ellipses.size() && !on; ++k) {
        const double ex = (p.x - ellipses[k].c.x) / ellipses[k].rx;
        const double ey = (p.y - ellipses[k].c.y) / ellipses[k].ry;
        on = ex * ex + ey * ey <= 1.0;
      }
      out.frame.at(y, x) = on ? 1 : 0;
    }
  }
  return out;
}

GaitSequence render_sequence(const SyntheticIdentity& id, const RenderOptions& opt, int n_frames, Rng& rng) {
  id.validate();
  if (n_frames < 1) throw GaitError(ErrorKind::kParamOutOfRange, "n_frames must be >= 1");
  if (opt.view_deg < 0 || opt.view_deg > 360) throw GaitError(ErrorKind::kParamOutOfRange, "view outside [0, 360]");
  if (opt.noise < 0 || opt.noise > 0.5) throw GaitError(ErrorKind::kParamOutOfRange, "noise outside [0, 0.5]");
  GaitSequence seq;
  seq.view_label = pad(opt.view_deg, 3);
  seq.frames.reserve(n_frames);
  for (int t = 0; t < n_frames; ++t) {
    RenderedFrame rf = render_frame(id, opt, t, n_frames);
    add_boundary_noise(rf.frame, opt.noise, rng);
    seq.frames.push_back(std::move(rf.frame));
  }
  return seq;
}

CorpusSpec casia_like_spec(int n_ids, int frames, std::uint64_t seed) {
  CorpusSpec spec;
  spec.n_ids = n_ids;
  spec.frames = frames;
  spec.seed = seed;
  spec.conditions = {WalkCondition::kNormal, WalkCondition::kBag, WalkCondition::kCoat};
  spec.seqs_per_condition = {{WalkCondition::kNormal, 6}, {WalkCondition::kBag, 2}, {WalkCondition::kCoat, 2}};
  return spec;
}

std::vector<GaitSequence> build_corpus(const CorpusSpec& spec) {
  if (spec.n_ids < 1) throw GaitError(ErrorKind::kParamOutOfRange, "n_ids must be >= 1");
  const int pool = spec.identity_pool > 0 ? spec.identity_pool : spec.first_subject + spec.n_ids;
  std::vector<GaitSequence> out;
  Rng rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int s = spec.first_subject; s < spec.first_subject + spec.n_ids; ++s) {
    const SyntheticIdentity id = make_identity(s, pool, spec.seed);
    const std::string subject = pad(s, 3);
    for (WalkCondition cond : spec.conditions) {
      const auto it = spec.seqs_per_condition.find(cond);
      const int count = it != spec.seqs_per_condition.end() ? it->second : spec.seqs_per_cell;
      for (int k = 1; k <= count; ++k) {
        for (int view : spec.views) {
          RenderOptions opt;
          opt.view_deg = view;
          opt.condition = cond;
          opt.noise = spec.noise;
          opt.phase = 2.0 * kPi * unit(rng);
          opt.view_drift_deg = spec.max_view_drift * (2.0 * unit(rng) - 1.0);
          int frames = spec.frames;
          if (spec.frame_jitter > 0) {
            frames += std::uniform_int_distribution<int>(-spec.frame_jitter, spec.frame_jitter)(rng);
            frames = std::max(1, frames);
          }
          GaitSequence seq = render_sequence(id, opt, frames, rng);
          seq.subject_id = subject;
          seq.condition = condition_code(cond) + "-" + pad(k, 2);
          seq.sequence_id = subject + "-" + *seq.condition + "-" + *seq.view_label;
          out.push_back(std::move(seq));
        }
      }
    }
  }
  return out;
}

}  // namespace gaitlab
