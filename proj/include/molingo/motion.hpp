#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "molingo/tensor.hpp"

namespace molingo::motion {

enum class Layout : std::uint8_t { Toy = 0, Guo67Style = 1 };

// Frame layout: [root yaw rate, root planar velocity (x, z), root height,
// 3 * (J - 1) root-relative joint positions in the body frame].
struct RepresentationSpec {
  Layout layout = Layout::Toy;
  std::size_t joints = 5;
  double fps = 20.0;
  // Left/right joint pairs whose across-body vectors define the heading.
  std::array<std::size_t, 4> facing{1, 2, 3, 4};

  std::size_t dim() const { return 4 + 3 * (joints - 1); }
  void validate() const;

  // Toy skeleton: root, left hand, right hand, left foot, right foot (J = 5, D = 16).
  static RepresentationSpec toy(std::size_t joints = 5, double fps = 20.0);
  // 22-joint layout; D = 67.
  static RepresentationSpec guo67(double fps = 20.0);

  bool operator==(const RepresentationSpec&) const = default;
};

struct MotionSequence {
  Tensor frames;  // [N, D]
  RepresentationSpec spec;
  std::vector<std::string> labels;   // empty, or one per frame
  std::vector<std::string> prompts;  // sentence-level descriptions
  std::int32_t archetype = -1;       // class of the (first) segment, -1 if unknown
  std::int32_t variant = -1;
  bool composite = false;

  std::size_t length() const { return frames.empty() ? 0 : frames.dim(0); }
  // Throws ShapeError on inconsistent shapes and NonFiniteFrame on NaN/Inf.
  void validate() const;
  bool operator==(const MotionSequence&) const = default;
};

using Corpus = std::vector<MotionSequence>;

struct JointTrajectory {
  Tensor positions;  // [N, J, 3], meters
  std::size_t length() const { return positions.dim(0); }
  std::size_t joints() const { return positions.dim(1); }
};

// Forward-Euler integration of the root channels, then body-frame locals
// rotated by the integrated yaw. Frame 0 is at the origin with yaw 0.
JointTrajectory to_joint_positions(const MotionSequence& motion);

// Inverse of to_joint_positions for trajectories whose frame-0 root sits at the
// planar origin. Heading is measured from the spec's facing pairs relative to
// frame 0, so a trajectory rotated about the vertical axis round-trips rotated.
MotionSequence from_joint_positions(const JointTrajectory& trajectory, const RepresentationSpec& spec);

struct NormalizationStats {
  Tensor mean;  // [D]
  Tensor std;   // [D], floored at kMinStd

  static constexpr double kMinStd = 1e-6;
  static NormalizationStats compute(const Corpus& corpus);
  std::size_t dim() const { return mean.numel(); }
};

MotionSequence normalize(const MotionSequence& motion, const NormalizationStats& stats);
MotionSequence denormalize(const MotionSequence& motion, const NormalizationStats& stats);
Tensor normalize_frames(const Tensor& frames, const NormalizationStats& stats);
Tensor denormalize_frames(const Tensor& frames, const NormalizationStats& stats);

// Right-pads [N, D] frames by repeating the last frame up to a multiple of h.
Tensor pad_to_multiple(const Tensor& frames, std::size_t h);
std::size_t padded_length(std::size_t n, std::size_t h);

// Mean per-joint position error between two motions, in millimeters.
double mpjpe_mm(const MotionSequence& a, const MotionSequence& b);
double mpjpe_mm(const JointTrajectory& a, const JointTrajectory& b);

// ---------------------------------------------------------------------------
// Synthetic labeled corpus

struct SynthSpec {
  std::size_t classes = 5;  // number of archetypes in use, 4..5
  std::size_t min_length = 64;
  std::size_t max_length = 160;
  double fps = 20.0;
  double composite_fraction = 0.2;  // share of two-segment sequences
  double jitter = 0.1;              // relative amplitude/speed jitter
  double noise_m = 0.0;             // per-joint positional noise
  double distinct_margin_m = 0.02;  // required mean joint distance between archetypes
};

inline constexpr std::size_t kArchetypeCount = 5;
inline constexpr std::size_t kVariantsPerArchetype = 4;

std::string archetype_name(std::size_t archetype);
// Short frame-level label for an archetype variant, e.g. "walk forward fast".
std::string variant_label(std::size_t archetype, std::size_t variant);

// Deterministic in (spec, count, seed); sequences are generated independently
// from per-index derived seeds.
Corpus synth_corpus(const SynthSpec& spec, std::size_t count, std::uint64_t seed);

// Mean MPJPE (mm) over pairs of single-segment sequences of different
// archetypes, compared over their common prefix. Uses up to `max_pairs` pairs.
double mean_interclass_distance_mm(const Corpus& corpus, std::size_t max_pairs, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Corpus file

inline constexpr char kCorpusMagic[] = "MLCORPUS";
inline constexpr std::uint32_t kCorpusVersion = 1;

void write_corpus(const std::filesystem::path& path, const Corpus& corpus);
Corpus read_corpus(const std::filesystem::path& path);

}  // namespace molingo::motion
