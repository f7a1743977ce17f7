#include "molingo/kinematics.hpp"

#include <cmath>
#include <vector>

namespace molingo::kinematics {

namespace {

// Root-relative integration state for every frame.
void headings(const double* frames, std::size_t n, std::size_t dim, double fps, std::vector<double>& yaw,
              std::vector<double>& px, std::vector<double>& pz) {
  yaw.assign(n, 0.0);
  px.assign(n, 0.0);
  pz.assign(n, 0.0);
  for (std::size_t t = 0; t + 1 < n; ++t) {
    const double* f = frames + t * dim;
    const double c = std::cos(yaw[t]);
    const double s = std::sin(yaw[t]);
    yaw[t + 1] = yaw[t] + f[0] / fps;
    px[t + 1] = px[t] + (c * f[1] + s * f[2]) / fps;
    pz[t + 1] = pz[t] + (-s * f[1] + c * f[2]) / fps;
  }
}

}  // namespace

void integrate(const double* frames, std::size_t frame_count, std::size_t joints, double fps,
               double* joints_out) {
  const std::size_t dim = feature_dim(joints);
  std::vector<double> yaw, px, pz;
  headings(frames, frame_count, dim, fps, yaw, px, pz);
  for (std::size_t t = 0; t < frame_count; ++t) {
    const double* f = frames + t * dim;
    double* out = joints_out + t * joints * 3;
    const double c = std::cos(yaw[t]);
    const double s = std::sin(yaw[t]);
    out[0] = px[t];
    out[1] = f[3];
    out[2] = pz[t];
    for (std::size_t j = 1; j < joints; ++j) {
      const double* l = f + 4 + 3 * (j - 1);
      out[3 * j + 0] = px[t] + c * l[0] + s * l[2];
      out[3 * j + 1] = f[3] + l[1];
      out[3 * j + 2] = pz[t] - s * l[0] + c * l[2];
    }
  }
}

void integrate_backward(const double* frames, const double* grad_joints, std::size_t frame_count,
                        std::size_t joints, double fps, double* grad_frames) {
  const std::size_t dim = feature_dim(joints);
  std::vector<double> yaw, px, pz;
  headings(frames, frame_count, dim, fps, yaw, px, pz);

  std::vector<double> gyaw(frame_count, 0.0);
  double sx = 0.0, sz = 0.0;  // suffix sums of position gradients over frames > t
  double syaw = 0.0;          // suffix sum of yaw gradients over frames > t
  for (std::size_t t = frame_count; t-- > 0;) {
    const double* f = frames + t * dim;
    const double* g = grad_joints + t * joints * 3;
    double* gf = grad_frames + t * dim;
    const double c = std::cos(yaw[t]);
    const double s = std::sin(yaw[t]);

    double gpx = 0.0, gpz = 0.0, gh = 0.0;
    for (std::size_t j = 0; j < joints; ++j) {
      gpx += g[3 * j + 0];
      gh += g[3 * j + 1];
      gpz += g[3 * j + 2];
    }
    gf[3] += gh;
    for (std::size_t j = 1; j < joints; ++j) {
      const double* l = f + 4 + 3 * (j - 1);
      double* gl = gf + 4 + 3 * (j - 1);
      const double gx = g[3 * j + 0];
      const double gz = g[3 * j + 2];
      gl[0] += c * gx - s * gz;
      gl[1] += g[3 * j + 1];
      gl[2] += s * gx + c * gz;
      gyaw[t] += gx * (-s * l[0] + c * l[2]) + gz * (-c * l[0] - s * l[2]);
    }

    // Frame t's velocity moves every later frame's root.
    gf[1] += (c * sx - s * sz) / fps;
    gf[2] += (s * sx + c * sz) / fps;
    gyaw[t] += (sx * (-s * f[1] + c * f[2]) + sz * (-c * f[1] - s * f[2])) / fps;
    // Frame t's angular velocity turns every later frame.
    gf[0] += syaw / fps;

    sx += gpx;
    sz += gpz;
    syaw += gyaw[t];
  }
}

}  // namespace molingo::kinematics
