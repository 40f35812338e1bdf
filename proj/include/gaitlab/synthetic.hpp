#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gaitlab/silhouette.hpp"

namespace gaitlab {

enum class WalkCondition { kNormal, kBag, kCoat };

std::string condition_code(WalkCondition c);  // "nm" / "bg" / "cl"
WalkCondition condition_from(const std::string& code);

/// Body and gait parameters of one synthetic walker. Lengths are fractions
/// of the 64-row canvas unless noted.
struct SyntheticIdentity {
  double torso_width = 0.24;    // of canvas width
  double leg_ratio = 0.48;      // hip-to-ground / body height
  double head_radius = 0.065;   // of body height
  double limb_px = 3.5;         // limb thickness in pixels
  double arm_ratio = 0.33;      // of body height
  int period = 12;              // frames per gait cycle
  double stride_rad = 0.45;     // hip swing amplitude
  double knee_rad = 0.6;        // peak knee flexion
  double lean = 0.0;            // torso lean, radians

  void validate() const;
};

/// Deterministic identity for subject `index` of `count`; the leg ratio is
/// spaced by (hi-lo)/count across subjects so any two differ.
SyntheticIdentity make_identity(int index, int count, std::uint64_t seed);

struct RenderOptions {
  int view_deg = 90;
  double view_drift_deg = 0.0;  // linear view change across the sequence
  WalkCondition condition = WalkCondition::kNormal;
  double noise = 0.0;           // boundary pixel flip probability
  double phase = 0.0;           // gait phase offset, radians
};

struct RenderedFrame {
  SilhouetteFrame frame;
  int torso_top = 0;     // inclusive row range touched by the coat
  int torso_bottom = 0;  // exclusive
};

/// One frame at time index `t`, without boundary noise.
RenderedFrame render_frame(const SyntheticIdentity& id, const RenderOptions& opt, int t, int n_frames);

GaitSequence render_sequence(const SyntheticIdentity& id, const RenderOptions& opt, int n_frames, Rng& rng);

struct CorpusSpec {
  int n_ids = 10;
  int first_subject = 0;  // subject indices first_subject .. first_subject+n_ids-1
  int identity_pool = 0;  // spacing denominator for make_identity; 0 -> first_subject + n_ids
  std::vector<int> views = {0, 18, 36, 54, 72, 90, 108, 126, 144, 162, 180};
  std::vector<WalkCondition> conditions = {WalkCondition::kNormal};
  int seqs_per_cell = 2;
  std::map<WalkCondition, int> seqs_per_condition;  // overrides seqs_per_cell
  int frames = 30;
  int frame_jitter = 0;   // frame count drawn from frames +- jitter
  double noise = 0.0;
  double max_view_drift = 0.0;
  std::uint64_t seed = 0;
};

/// Walk conditions NM x6, BG x2, CL x2 over 11 views (110 sequences/subject).
CorpusSpec casia_like_spec(int n_ids, int frames, std::uint64_t seed);

/// Sequence ids are `<subject>-<cond>-<nn>-<view>`, subject ids zero-padded
/// to 3 digits, condition tags like "nm-01", view tags like "090".
std::vector<GaitSequence> build_corpus(const CorpusSpec& spec);

}  // namespace gaitlab
