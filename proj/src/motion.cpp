#include "molingo/motion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "molingo/errors.hpp"
#include "molingo/kinematics.hpp"

namespace molingo::motion {

void RepresentationSpec::validate() const {
  if (joints < 3) throw ShapeError("representation needs at least 3 joints");
  if (!(fps > 0.0)) throw ShapeError("representation fps must be positive");
  if (layout == Layout::Guo67Style && joints != 22) throw ShapeError("Guo67-style layout requires 22 joints");
  for (auto j : facing)
    if (j >= joints) throw ShapeError("facing joint index out of range");
}

RepresentationSpec RepresentationSpec::toy(std::size_t joints, double fps) {
  RepresentationSpec s;
  s.layout = Layout::Toy;
  s.joints = joints;
  s.fps = fps;
  // With fewer than five joints the single pair (1, 2) is counted twice.
  s.facing = joints >= 5 ? std::array<std::size_t, 4>{1, 2, 3, 4} : std::array<std::size_t, 4>{1, 2, 1, 2};
  s.validate();
  return s;
}

RepresentationSpec RepresentationSpec::guo67(double fps) {
  RepresentationSpec s;
  s.layout = Layout::Guo67Style;
  s.joints = 22;
  s.fps = fps;
  s.facing = {1, 2, 16, 17};  // hips, shoulders
  s.validate();
  return s;
}

void MotionSequence::validate() const {
  spec.validate();
  if (frames.rank() != 2 || frames.dim(0) < 1) throw ShapeError("motion frames must be [N >= 1, D]");
  if (frames.dim(1) != spec.dim()) {
    throw ShapeError("motion width " + std::to_string(frames.dim(1)) + " does not match layout width " +
                     std::to_string(spec.dim()));
  }
  if (!labels.empty() && labels.size() != length()) {
    throw ShapeError("motion has " + std::to_string(labels.size()) + " labels for " + std::to_string(length()) +
                     " frames");
  }
  const std::size_t d = frames.dim(1);
  for (std::size_t n = 0; n < length(); ++n)
    for (std::size_t c = 0; c < d; ++c)
      if (!std::isfinite(frames[n * d + c])) throw NonFiniteFrame(n, "motion");
}

JointTrajectory to_joint_positions(const MotionSequence& motion) {
  motion.validate();
  const std::size_t n = motion.length(), j = motion.spec.joints;
  JointTrajectory out{Tensor({n, j, 3})};
  kinematics::integrate(motion.frames.ptr(), n, j, motion.spec.fps, out.positions.ptr());
  return out;
}

namespace {

double wrap_angle(double a) {
  constexpr double pi = std::numbers::pi;
  a = std::fmod(a + pi, 2.0 * pi);
  if (a < 0) a += 2.0 * pi;
  return a - pi;
}

}  // namespace

MotionSequence from_joint_positions(const JointTrajectory& trajectory, const RepresentationSpec& spec) {
  spec.validate();
  const Tensor& p = trajectory.positions;
  if (p.rank() != 3 || p.dim(2) != 3 || p.dim(0) < 1) throw ShapeError("trajectory must be [N >= 1, J, 3]");
  if (p.dim(1) != spec.joints) {
    throw ShapeError("trajectory has " + std::to_string(p.dim(1)) + " joints, layout expects " +
                     std::to_string(spec.joints));
  }
  const std::size_t n = p.dim(0), joints = spec.joints, d = spec.dim();
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t i = 0; i < joints * 3; ++i)
      if (!std::isfinite(p[t * joints * 3 + i])) throw NonFiniteFrame(t, "trajectory");

  auto pos = [&](std::size_t t, std::size_t jt, std::size_t c) { return p[(t * joints + jt) * 3 + c]; };

  std::vector<double> heading(n);
  for (std::size_t t = 0; t < n; ++t) {
    const auto& f = spec.facing;
    const double ax = pos(t, f[0], 0) - pos(t, f[1], 0) + pos(t, f[2], 0) - pos(t, f[3], 0);
    const double az = pos(t, f[0], 2) - pos(t, f[1], 2) + pos(t, f[2], 2) - pos(t, f[3], 2);
    heading[t] = std::atan2(-az, ax);
  }

  MotionSequence out;
  out.spec = spec;
  out.frames = Tensor({n, d});
  // Integrated yaw follows exactly the recurrence used by to_joint_positions.
  std::vector<double> yaw(n, 0.0);
  for (std::size_t t = 0; t + 1 < n; ++t) {
    const double w = wrap_angle(heading[t + 1] - heading[t]) * spec.fps;
    out.frames[t * d + 0] = w;
    yaw[t + 1] = yaw[t] + w / spec.fps;
  }
  for (std::size_t t = 0; t < n; ++t) {
    double* f = out.frames.ptr() + t * d;
    const double c = std::cos(yaw[t]), s = std::sin(yaw[t]);
    if (t + 1 < n) {
      const double dx = (pos(t + 1, 0, 0) - pos(t, 0, 0)) * spec.fps;
      const double dz = (pos(t + 1, 0, 2) - pos(t, 0, 2)) * spec.fps;
      f[1] = c * dx - s * dz;
      f[2] = s * dx + c * dz;
    }
    f[3] = pos(t, 0, 1);
    for (std::size_t jt = 1; jt < joints; ++jt) {
      const double rx = pos(t, jt, 0) - pos(t, 0, 0);
      const double ry = pos(t, jt, 1) - pos(t, 0, 1);
      const double rz = pos(t, jt, 2) - pos(t, 0, 2);
      double* l = f + 4 + 3 * (jt - 1);
      l[0] = c * rx - s * rz;
      l[1] = ry;
      l[2] = s * rx + c * rz;
    }
  }
  // The last frame has no successor; it repeats the previous velocities.
  if (n >= 2)
    for (std::size_t c = 0; c < 3; ++c) out.frames[(n - 1) * d + c] = out.frames[(n - 2) * d + c];
  return out;
}

NormalizationStats NormalizationStats::compute(const Corpus& corpus) {
  if (corpus.empty()) throw ShapeError("cannot compute normalization stats of an empty corpus");
  const std::size_t d = corpus.front().spec.dim();
  NormalizationStats stats{Tensor({d}), Tensor({d})};
  double count = 0.0;
  for (const auto& m : corpus) {
    if (m.frames.dim(1) != d) throw ShapeError("corpus mixes representation widths");
    for (std::size_t t = 0; t < m.length(); ++t)
      for (std::size_t c = 0; c < d; ++c) stats.mean[c] += m.frames[t * d + c];
    count += static_cast<double>(m.length());
  }
  for (std::size_t c = 0; c < d; ++c) stats.mean[c] /= count;
  for (const auto& m : corpus)
    for (std::size_t t = 0; t < m.length(); ++t)
      for (std::size_t c = 0; c < d; ++c) {
        const double z = m.frames[t * d + c] - stats.mean[c];
        stats.std[c] += z * z;
      }
  for (std::size_t c = 0; c < d; ++c) stats.std[c] = std::max(std::sqrt(stats.std[c] / count), kMinStd);
  return stats;
}

Tensor normalize_frames(const Tensor& frames, const NormalizationStats& stats) {
  const std::size_t d = frames.cols();
  if (d != stats.dim()) {
    throw ShapeError("normalization stats have width " + std::to_string(stats.dim()) + ", frames have " +
                     std::to_string(d));
  }
  Tensor out = frames;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] = (out[r * d + c] - stats.mean[c]) / stats.std[c];
  return out;
}

Tensor denormalize_frames(const Tensor& frames, const NormalizationStats& stats) {
  const std::size_t d = frames.cols();
  if (d != stats.dim()) {
    throw ShapeError("normalization stats have width " + std::to_string(stats.dim()) + ", frames have " +
                     std::to_string(d));
  }
  Tensor out = frames;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] = out[r * d + c] * stats.std[c] + stats.mean[c];
  return out;
}

MotionSequence normalize(const MotionSequence& motion, const NormalizationStats& stats) {
  MotionSequence out = motion;
  out.frames = normalize_frames(motion.frames, stats);
  return out;
}

MotionSequence denormalize(const MotionSequence& motion, const NormalizationStats& stats) {
  MotionSequence out = motion;
  out.frames = denormalize_frames(motion.frames, stats);
  return out;
}

std::size_t padded_length(std::size_t n, std::size_t h) { return (n + h - 1) / h * h; }

Tensor pad_to_multiple(const Tensor& frames, std::size_t h) {
  const std::size_t n = frames.dim(0), d = frames.cols();
  const std::size_t padded = padded_length(n, h);
  Tensor out({padded, d});
  std::copy_n(frames.ptr(), n * d, out.ptr());
  for (std::size_t t = n; t < padded; ++t) std::copy_n(frames.ptr() + (n - 1) * d, d, out.ptr() + t * d);
  return out;
}

double mpjpe_mm(const JointTrajectory& a, const JointTrajectory& b) {
  if (a.positions.shape() != b.positions.shape()) {
    throw ShapeError("mpjpe: trajectory shapes differ " + shape_str(a.positions.shape()) + " vs " +
                     shape_str(b.positions.shape()));
  }
  const std::size_t points = a.positions.numel() / 3;
  double total = 0.0;
  for (std::size_t i = 0; i < points; ++i) {
    double sq = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
      const double dlt = a.positions[3 * i + c] - b.positions[3 * i + c];
      sq += dlt * dlt;
    }
    total += std::sqrt(sq);
  }
  return 1000.0 * total / static_cast<double>(points);
}

double mpjpe_mm(const MotionSequence& a, const MotionSequence& b) {
  return mpjpe_mm(to_joint_positions(a), to_joint_positions(b));
}

}  // namespace molingo::motion
