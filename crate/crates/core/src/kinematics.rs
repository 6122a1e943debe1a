//! Parameterized 3-DoF-per-leg quadruped kinematics.
//!
//! Each leg chains HAA (rotation about the base x-axis), a fixed lateral
//! offset along the rotated y-axis, then HFE and KFE (both about the
//! rotated y-axis) with thigh and shank links pointing down. Forward
//! kinematics, analytic Jacobians, closed-form inverse kinematics and
//! world-frame foot states are derived from that chain.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::telemetry::TelemetrySample;

#[derive(Debug, Error)]
pub enum KinematicsError {
    #[error("model: {0}")]
    BadModel(String),
    #[error("foot target {target:?} unreachable for leg {leg:?}: {reason}")]
    Unreachable {
        leg: Leg,
        target: [f64; 3],
        reason: String,
    },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("model config: {0}")]
    Config(String),
}

/// Leg identifiers in telemetry order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Leg {
    LF,
    RF,
    LH,
    RH,
}

pub const LEGS: [Leg; 4] = [Leg::LF, Leg::RF, Leg::LH, Leg::RH];

impl Leg {
    pub fn index(self) -> usize {
        match self {
            Leg::LF => 0,
            Leg::RF => 1,
            Leg::LH => 2,
            Leg::RH => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Leg::LF => "LF",
            Leg::RF => "RF",
            Leg::LH => "LH",
            Leg::RH => "RH",
        }
    }

    /// +1 for left legs, -1 for right legs; signs the lateral hip offset.
    fn side(self) -> f64 {
        match self {
            Leg::LF | Leg::LH => 1.0,
            Leg::RF | Leg::RH => -1.0,
        }
    }

    /// Slice of this leg's joints inside a 12-vector (HAA, HFE, KFE).
    pub fn joints(self, v: &[f64; 12]) -> [f64; 3] {
        let i = 3 * self.index();
        [v[i], v[i + 1], v[i + 2]]
    }
}

/// Kinematic and mass parameters of a generic point-foot quadruped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadrupedModel {
    /// Hip frame origins in the base frame, order LF, RF, LH, RH.
    pub hip_offsets: [[f64; 3]; 4],
    /// Lateral offset from hip along the HAA-rotated y-axis (signed by side).
    pub l_hip: f64,
    pub l_thigh: f64,
    pub l_shank: f64,
    pub base_mass: f64,
    pub gravity: f64,
}

impl Default for QuadrupedModel {
    fn default() -> Self {
        QuadrupedModel {
            hip_offsets: [
                [0.3, 0.1, 0.0],
                [0.3, -0.1, 0.0],
                [-0.3, 0.1, 0.0],
                [-0.3, -0.1, 0.0],
            ],
            l_hip: 0.1,
            l_thigh: 0.3,
            l_shank: 0.3,
            base_mass: 50.0,
            gravity: 9.81,
        }
    }
}

impl QuadrupedModel {
    pub fn validate(&self) -> Result<(), KinematicsError> {
        if self.l_thigh <= 0.0 || self.l_shank <= 0.0 {
            return Err(KinematicsError::BadModel(
                "link lengths must be positive".into(),
            ));
        }
        if self.base_mass <= 0.0 {
            return Err(KinematicsError::BadModel("base_mass must be positive".into()));
        }
        Ok(())
    }

    pub fn hip_offset(&self, leg: Leg) -> Vector3<f64> {
        Vector3::from(self.hip_offsets[leg.index()])
    }

    /// Load from a flat TOML document (the `--model` CLI file).
    pub fn load(path: &Path) -> Result<Self, KinematicsError> {
        let text = fs::read_to_string(path)?;
        let model: QuadrupedModel =
            toml::from_str(&text).map_err(|e| KinematicsError::Config(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), KinematicsError> {
        let text = toml::to_string(self).map_err(|e| KinematicsError::Config(e.to_string()))?;
        fs::write(path, text)?;
        Ok(())
    }
}

/// Foot position and velocity in the world frame plus the base-frame
/// leg Jacobian used to produce them.
#[derive(Debug, Clone)]
pub struct FootState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub leg_jacobian: Matrix3<f64>,
}

fn rot_x(a: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::x_axis(), a)
}

fn rot_y(a: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::y_axis(), a)
}

/// Base-frame foot position for one leg.
pub fn foot_position(model: &QuadrupedModel, q: [f64; 3], leg: Leg) -> Vector3<f64> {
    let [q1, q2, q3] = q;
    let knee = rot_y(q3) * Vector3::new(0.0, 0.0, -model.l_shank);
    let w = rot_y(q2) * (Vector3::new(0.0, 0.0, -model.l_thigh) + knee);
    let u = Vector3::new(0.0, leg.side() * model.l_hip, 0.0) + w;
    model.hip_offset(leg) + rot_x(q1) * u
}

/// Analytic 3x3 Jacobian of the base-frame foot position with respect to
/// the leg joints (HAA, HFE, KFE).
pub fn leg_jacobian(model: &QuadrupedModel, q: [f64; 3], leg: Leg) -> Matrix3<f64> {
    let [q1, q2, q3] = q;
    let rx = rot_x(q1);
    let ry2 = rot_y(q2);
    let shank = rot_y(q3) * Vector3::new(0.0, 0.0, -model.l_shank);
    let w = ry2 * (Vector3::new(0.0, 0.0, -model.l_thigh) + shank);
    let u = Vector3::new(0.0, leg.side() * model.l_hip, 0.0) + w;

    // d/dq of a rotation about a fixed axis is axis x (rotated vector).
    let col1 = Vector3::x().cross(&(rx * u));
    let col2 = rx * Vector3::y().cross(&w);
    let col3 = rx * (ry2 * Vector3::y().cross(&shank));
    Matrix3::from_columns(&[col1, col2, col3])
}

/// World-frame foot state for one leg of a telemetry sample:
/// v = v_b + w_b x (R r) + R J q_dot.
pub fn foot_kinematics(model: &QuadrupedModel, sample: &TelemetrySample, leg: Leg) -> FootState {
    let q = leg.joints(&sample.joint_pos);
    let qd = leg.joints(&sample.joint_vel);
    let r = foot_position(model, q, leg);
    let jac = leg_jacobian(model, q, leg);
    let rot = sample.base_orientation.to_rotation_matrix();
    let r_world = rot * r;
    let position = sample.base_position + r_world;
    let velocity = sample.base_lin_vel
        + sample.base_ang_vel.cross(&r_world)
        + rot * (jac * Vector3::from(qd));
    FootState {
        position,
        velocity,
        leg_jacobian: jac,
    }
}

/// Closed-form leg inverse kinematics for a base-frame foot target.
/// Returns (HAA, HFE, KFE) on the positive-knee branch.
pub fn leg_ik(model: &QuadrupedModel, target: Vector3<f64>, leg: Leg) -> Result<[f64; 3], KinematicsError> {
    let d = target - model.hip_offset(leg);
    let unreachable = |reason: &str| KinematicsError::Unreachable {
        leg,
        target: [target.x, target.y, target.z],
        reason: reason.into(),
    };

    // HAA: the y-component in the HAA-rotated frame must equal the signed
    // lateral offset. d_y cos q1 + d_z sin q1 = side * l_hip.
    let rho = d.y.hypot(d.z);
    let lat = leg.side() * model.l_hip;
    if rho < lat.abs() {
        return Err(unreachable("target inside the lateral hip offset cylinder"));
    }
    let phi = f64::atan2(d.z, d.y);
    let alpha = (lat / rho).clamp(-1.0, 1.0).acos();
    // Two branches; take the one that puts the foot below the hip.
    let cand = [phi + alpha, phi - alpha];
    let mut q1 = cand[0];
    let mut best_z = f64::INFINITY;
    for c in cand {
        let local = rot_x(-c) * d;
        if local.z < best_z {
            best_z = local.z;
            q1 = c;
        }
    }
    // Wrap toward zero.
    while q1 > std::f64::consts::PI {
        q1 -= 2.0 * std::f64::consts::PI;
    }
    while q1 < -std::f64::consts::PI {
        q1 += 2.0 * std::f64::consts::PI;
    }

    let local = rot_x(-q1) * d;
    let wx = local.x;
    let wz = local.z;
    let (lt, ls) = (model.l_thigh, model.l_shank);
    let r2 = wx * wx + wz * wz;
    let reach = lt + ls;
    if r2.sqrt() > reach + 1e-12 {
        return Err(unreachable("target beyond leg reach"));
    }
    if r2.sqrt() < (lt - ls).abs() - 1e-12 {
        return Err(unreachable("target inside minimum leg extension"));
    }
    let c3 = ((r2 - lt * lt - ls * ls) / (2.0 * lt * ls)).clamp(-1.0, 1.0);
    let q3 = c3.acos(); // positive-knee branch
    let k1 = lt + ls * c3;
    let k2 = ls * q3.sin();
    let q2 = f64::atan2(-wx, -wz) - f64::atan2(k2, k1);
    Ok([q1, q2, q3])
}

/// Joint rates that realize a desired world-frame foot velocity at the
/// given sample state. Inverse of the foot_kinematics velocity map.
pub fn leg_rates_for_foot_velocity(
    model: &QuadrupedModel,
    q: [f64; 3],
    leg: Leg,
    base_lin_vel: Vector3<f64>,
    base_ang_vel: Vector3<f64>,
    base_rot: &Rotation3<f64>,
    foot_vel_world: Vector3<f64>,
) -> Option<[f64; 3]> {
    let r = foot_position(model, q, leg);
    let jac = leg_jacobian(model, q, leg);
    let rel = base_rot.inverse() * (foot_vel_world - base_lin_vel - base_ang_vel.cross(&(base_rot * r)));
    let qd = jac.lu().solve(&rel)?;
    Some([qd[0], qd[1], qd[2]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::UnitQuaternion;

    fn model() -> QuadrupedModel {
        QuadrupedModel::default()
    }

    /// Finite-difference Jacobian oracle, step 1e-5.
    fn fd_jacobian(model: &QuadrupedModel, q: [f64; 3], leg: Leg) -> Matrix3<f64> {
        let h = 1e-5;
        let mut cols = [Vector3::zeros(); 3];
        for j in 0..3 {
            let mut qp = q;
            let mut qm = q;
            qp[j] += h;
            qm[j] -= h;
            cols[j] = (foot_position(model, qp, leg) - foot_position(model, qm, leg)) / (2.0 * h);
        }
        Matrix3::from_columns(&cols)
    }

    #[test]
    fn zero_config_closed_form() {
        let m = model();
        for leg in LEGS {
            let p = foot_position(&m, [0.0; 3], leg);
            let expect = m.hip_offset(leg)
                + Vector3::new(0.0, leg.side() * m.l_hip, 0.0)
                + Vector3::new(0.0, 0.0, -(m.l_thigh + m.l_shank));
            assert_relative_eq!(p, expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let m = model();
        let configs = [
            [0.0, 0.0, 0.0],
            [0.2, -0.6, 1.1],
            [-0.5, 0.9, 0.4],
            [1.0, -1.2, 2.2],
            [0.05, 0.3, 0.8],
        ];
        for leg in LEGS {
            for q in configs {
                let j = leg_jacobian(&m, q, leg);
                let jd = fd_jacobian(&m, q, leg);
                for r in 0..3 {
                    for c in 0..3 {
                        assert!(
                            (j[(r, c)] - jd[(r, c)]).abs() < 1e-6,
                            "leg {leg:?} q {q:?} entry ({r},{c}): {} vs {}",
                            j[(r, c)],
                            jd[(r, c)]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn straight_leg_is_singular() {
        let m = model();
        let j = leg_jacobian(&m, [0.0, 0.0, 0.0], Leg::LF);
        let svd = j.svd(false, false);
        let s = svd.singular_values;
        assert!(s[2] < 1e-12, "smallest singular value: {}", s[2]);
        assert!(s[1] > 1e-3, "rank should drop to exactly 2");
    }

    #[test]
    fn ik_round_trips_fk() {
        let m = model();
        let configs = [
            [0.1, 0.5, 0.9],
            [-0.3, 0.8, 1.4],
            [0.4, -0.2, 0.6],
            [0.0, 0.7, 1.0],
        ];
        for leg in LEGS {
            for q in configs {
                let p = foot_position(&m, q, leg);
                let qik = leg_ik(&m, p, leg).unwrap();
                let p2 = foot_position(&m, qik, leg);
                assert_relative_eq!(p, p2, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn ik_rejects_unreachable() {
        let m = model();
        let far = Vector3::new(2.0, 0.0, -2.0);
        assert!(matches!(
            leg_ik(&m, far, Leg::LF),
            Err(KinematicsError::Unreachable { .. })
        ));
    }

    fn base_sample() -> TelemetrySample {
        TelemetrySample {
            t: 0.0,
            base_position: Vector3::new(0.0, 0.0, 0.45),
            base_orientation: UnitQuaternion::identity(),
            base_lin_vel: Vector3::zeros(),
            base_ang_vel: Vector3::zeros(),
            joint_pos: [0.0, 0.4, 0.8, 0.0, 0.4, 0.8, 0.0, 0.4, 0.8, 0.0, 0.4, 0.8],
            joint_vel: [0.0; 12],
            joint_torque: [0.0; 12],
            battery_voltage: None,
            battery_current: None,
        }
    }

    #[test]
    fn rigid_transport_velocity() {
        let m = model();
        let mut s = base_sample();
        s.base_lin_vel = Vector3::new(1.0, 0.0, 0.0);
        for leg in LEGS {
            let fs = foot_kinematics(&m, &s, leg);
            assert_relative_eq!(fs.velocity, Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_base_motion_velocity_is_rotated_jacobian_product() {
        let m = model();
        let mut s = base_sample();
        s.base_orientation = UnitQuaternion::from_euler_angles(0.1, -0.2, 0.7);
        s.joint_vel = [0.3, -0.5, 0.2, 0.1, 0.0, -0.4, 0.6, 0.2, 0.1, -0.3, 0.5, 0.0];
        for leg in LEGS {
            let fs = foot_kinematics(&m, &s, leg);
            let q = leg.joints(&s.joint_pos);
            let qd = Vector3::from(leg.joints(&s.joint_vel));
            let expect =
                s.base_orientation.to_rotation_matrix() * (leg_jacobian(&m, q, leg) * qd);
            assert_relative_eq!(fs.velocity, expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn velocity_matches_trajectory_differentiation() {
        // Drive base pose and joints along smooth trajectories; compare
        // foot_kinematics velocity with numeric differentiation of the
        // world foot position.
        let m = model();
        let pose = |t: f64| -> TelemetrySample {
            let mut s = base_sample();
            s.t = t;
            s.base_position = Vector3::new(0.3 * t, 0.1 * t * t, 0.45 + 0.02 * (2.0 * t).sin());
            let (r, p, y) = (0.05 * (3.0 * t).sin(), 0.04 * t, 0.2 * t);
            s.base_orientation = UnitQuaternion::from_euler_angles(r, p, y);
            s.base_lin_vel = Vector3::new(0.3, 0.2 * t, 0.04 * (2.0 * t).cos());
            // Angular velocity of R(t) computed numerically below instead.
            for j in 0..12 {
                s.joint_pos[j] = base_sample().joint_pos[j] + 0.1 * ((t + j as f64) * 1.3).sin();
                s.joint_vel[j] = 0.1 * 1.3 * ((t + j as f64) * 1.3).cos();
            }
            s
        };
        let t0 = 0.7;
        let h = 1e-6;
        let (sm, s0, sp) = (pose(t0 - h), pose(t0), pose(t0 + h));
        // World angular velocity from the rotation derivative.
        let rm = sm.base_orientation.to_rotation_matrix();
        let rp = sp.base_orientation.to_rotation_matrix();
        let rdot = (rp.matrix() - rm.matrix()) / (2.0 * h);
        let omega_skew = rdot * s0.base_orientation.to_rotation_matrix().matrix().transpose();
        let omega = Vector3::new(omega_skew[(2, 1)], omega_skew[(0, 2)], omega_skew[(1, 0)]);
        let mut s = s0.clone();
        s.base_ang_vel = omega;
        for leg in LEGS {
            let fs = foot_kinematics(&m, &s, leg);
            let num = (foot_kinematics(&m, &sp, leg).position
                - foot_kinematics(&m, &sm, leg).position)
                / (2.0 * h);
            assert!(
                (fs.velocity - num).norm() < 1e-5,
                "leg {leg:?}: {} vs {}",
                fs.velocity,
                num
            );
        }
    }

    #[test]
    fn world_velocity_is_frame_consistent() {
        // Rotating the whole scene by a fixed rotation rotates velocities.
        let m = model();
        let mut s = base_sample();
        s.base_orientation = UnitQuaternion::from_euler_angles(0.2, 0.1, -0.4);
        s.base_lin_vel = Vector3::new(0.4, -0.1, 0.05);
        s.base_ang_vel = Vector3::new(0.1, 0.3, -0.2);
        s.joint_vel = [0.2, -0.1, 0.4, 0.0, 0.3, -0.2, 0.1, 0.1, 0.0, -0.3, 0.2, 0.5];
        let fixed = UnitQuaternion::from_euler_angles(0.9, -0.3, 1.7);
        let mut s2 = s.clone();
        s2.base_position = fixed * s.base_position;
        s2.base_orientation = fixed * s.base_orientation;
        s2.base_lin_vel = fixed * s.base_lin_vel;
        s2.base_ang_vel = fixed * s.base_ang_vel;
        for leg in LEGS {
            let v1 = foot_kinematics(&m, &s, leg).velocity;
            let v2 = foot_kinematics(&m, &s2, leg).velocity;
            assert_relative_eq!(fixed * v1, v2, epsilon = 1e-12);
        }
    }

    #[test]
    fn model_config_round_trip() {
        let dir = std::env::temp_dir().join("habmon_model_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.toml");
        let m = model();
        m.save(&path).unwrap();
        let back = QuadrupedModel::load(&path).unwrap();
        assert_eq!(m, back);
    }
}
