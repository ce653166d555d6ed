#pragma once

// Planar unicycle kinematics in the ego frame, pose-to-action derivation
// and rigid global <-> ego transforms.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "vlmdrive/domain.hpp"

namespace vlmdrive {

class KinematicsError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct IntegratorConfig {
  double dt = kTickSeconds;
  std::size_t horizon_steps = kHorizonSteps;
};

/// Position and heading in the global frame. yaw is measured from global +x.
struct EgoPose {
  Eigen::Vector2d position = Eigen::Vector2d::Zero();
  double yaw = 0.0;
  std::int64_t timestamp_us = 0;
};

/// Wraps an angle into (-pi, pi].
template <typename Scalar>
Scalar normalize_angle(Scalar angle) {
  const Scalar two_pi = Scalar(2) * std::numbers::pi_v<Scalar>;
  Scalar r = std::remainder(angle, two_pi);
  if (r <= -std::numbers::pi_v<Scalar>) r += two_pi;
  return r;
}

/// Unicycle states (x, y, theta) from the origin with zero heading. Row 0 is
/// the origin; row k + 1 follows action k by one explicit Euler step:
///   x' = x + v cos(theta) dt,  y' = y + v sin(theta) dt,  theta' = theta + kappa v dt.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 3> rollout_states(std::span<const BasicActionState<Scalar>> actions,
                                                        Scalar dt) {
  using std::cos;
  using std::sin;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 3> states(static_cast<Eigen::Index>(actions.size()) + 1, 3);
  states.row(0).setZero();
  for (std::size_t k = 0; k < actions.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    const Scalar v = actions[k].speed;
    const Scalar theta = states(i, 2);
    states(i + 1, 0) = states(i, 0) + v * cos(theta) * dt;
    states(i + 1, 1) = states(i, 1) + v * sin(theta) * dt;
    states(i + 1, 2) = theta + actions[k].curvature * v * dt;
  }
  return states;
}

/// Integrates horizon_steps actions into the trajectory of future positions
/// (origin excluded).
inline Trajectory integrate(std::span<const ActionState> actions, const IntegratorConfig& config = {}) {
  if (!(config.dt > 0.0) || config.horizon_steps < 1) {
    throw KinematicsError("integrator config needs dt > 0 and horizon_steps >= 1");
  }
  if (actions.size() != config.horizon_steps) {
    throw KinematicsError("expected " + std::to_string(config.horizon_steps) + " actions, got " +
                          std::to_string(actions.size()));
  }
  for (const auto& a : actions) {
    if (!std::isfinite(a.speed) || !std::isfinite(a.curvature)) {
      throw KinematicsError("non-finite action value");
    }
  }
  const auto states = rollout_states<double>(actions, config.dt);
  Trajectory out;
  out.tick = config.dt;
  out.points = states.bottomRows(states.rows() - 1).leftCols<2>();
  return out;
}

/// Heading about +z from a unit quaternion (w, x, y, z).
template <typename Scalar>
Scalar yaw_from_quaternion(const Eigen::Quaternion<Scalar>& q) {
  using std::abs;
  using std::atan2;
  if (abs(q.norm() - Scalar(1)) > Scalar(1e-6)) {
    throw KinematicsError("quaternion is not unit length");
  }
  const Scalar siny = Scalar(2) * (q.w() * q.z() + q.x() * q.y());
  const Scalar cosy = Scalar(1) - Scalar(2) * (q.y() * q.y() + q.z() * q.z());
  return normalize_angle(atan2(siny, cosy));
}

/// Maps global points (one per row) into the ego frame of `reference`:
/// p_ego = R(-yaw) (p - position). Ego +x is the vehicle's forward direction.
template <typename Derived>
Points2<typename Derived::Scalar> global_to_ego(const EgoPose& reference, const Eigen::MatrixBase<Derived>& global) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Matrix<Scalar, 2, 2> rot_inv = Eigen::Rotation2D<Scalar>(Scalar(-reference.yaw)).toRotationMatrix();
  const Eigen::Matrix<Scalar, 1, 2> origin = reference.position.template cast<Scalar>().transpose();
  return (global.rowwise() - origin) * rot_inv.transpose();
}

/// Inverse of global_to_ego.
template <typename Derived>
Points2<typename Derived::Scalar> ego_to_global(const EgoPose& reference, const Eigen::MatrixBase<Derived>& ego) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Matrix<Scalar, 2, 2> rot = Eigen::Rotation2D<Scalar>(Scalar(reference.yaw)).toRotationMatrix();
  const Eigen::Matrix<Scalar, 1, 2> origin = reference.position.template cast<Scalar>().transpose();
  return (ego * rot.transpose()).rowwise() + origin;
}

inline constexpr double kStationarySpeed = 0.1;  // m/s; curvature forced to 0 below
inline constexpr double kSpacingTolerance = 0.2;  // fraction of dt

/// Derives one action per consecutive pose pair, oldest first. Speed is the
/// planar displacement over dt; curvature is the wrapped heading change over
/// the distance travelled.
inline std::vector<ActionState> history_from_poses(std::span<const EgoPose> poses, double dt = kTickSeconds) {
  if (!(dt > 0.0)) throw KinematicsError("dt must be positive");
  if (poses.size() < 2) throw KinematicsError("need at least two poses");
  const double dt_us = dt * 1e6;
  std::vector<ActionState> actions;
  actions.reserve(poses.size() - 1);
  for (std::size_t i = 0; i + 1 < poses.size(); ++i) {
    const auto& a = poses[i];
    const auto& b = poses[i + 1];
    if (!a.position.allFinite() || !b.position.allFinite() || !std::isfinite(a.yaw) || !std::isfinite(b.yaw)) {
      throw KinematicsError("non-finite pose");
    }
    if (b.timestamp_us <= a.timestamp_us) {
      throw KinematicsError("poses are not time-ordered at index " + std::to_string(i + 1));
    }
    const double spacing = static_cast<double>(b.timestamp_us - a.timestamp_us);
    if (std::abs(spacing - dt_us) > kSpacingTolerance * dt_us) {
      throw KinematicsError("pose spacing " + std::to_string(spacing * 1e-6) + " s at index " + std::to_string(i + 1) +
                            " deviates more than 20% from dt");
    }
    const double speed = (b.position - a.position).norm() / dt;
    const double curvature = speed < kStationarySpeed ? 0.0 : normalize_angle(b.yaw - a.yaw) / (speed * dt);
    actions.push_back({speed, curvature});
  }
  return actions;
}

}  // namespace vlmdrive
