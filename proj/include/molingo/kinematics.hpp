#pragma once

#include <cstddef>

// Raw kernels for the root-velocity motion layout. Per frame:
//   [0]      root angular velocity about +y (rad/s)
//   [1], [2] root planar velocity (x, z) in the body frame (m/s)
//   [3]      root height (m)
//   [4 + 3(j-1) ...] joint j position relative to the root, body frame (m)
// Integration is forward Euler: yaw[0] = 0, p[0] = 0,
//   yaw[n+1] = yaw[n] + w[n] / fps,  p[n+1] = p[n] + R(yaw[n]) v[n] / fps,
// with R(a)(x, z) = (cos a * x + sin a * z, -sin a * x + cos a * z).
namespace molingo::kinematics {

constexpr std::size_t feature_dim(std::size_t joints) { return 4 + 3 * (joints - 1); }

// frames: T x D (D = feature_dim(J)); joints_out: T x J x 3 with joint 0 the root.
void integrate(const double* frames, std::size_t frame_count, std::size_t joints, double fps,
               double* joints_out);

// Accumulates d(loss)/d(frames) given d(loss)/d(joints) for the map above.
void integrate_backward(const double* frames, const double* grad_joints, std::size_t frame_count,
                        std::size_t joints, double fps, double* grad_frames);

}  // namespace molingo::kinematics
