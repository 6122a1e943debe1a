//! Per-foot contact estimation: torque-based contact forces, the
//! force-to-probability sigmoid, its logistic-regression fitter, and
//! Schmitt-trigger binarization into contact states.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{self, QuadrupedModel, LEGS};
use crate::telemetry::{TelemetryLog, TelemetrySample};

/// Condition number above which a leg Jacobian is treated as singular.
pub const SINGULARITY_COND: f64 = 1e6;

/// Default binarization threshold on contact probability.
pub const DEFAULT_THRESHOLD: f64 = 0.5;
/// Default hysteresis width around the threshold.
pub const DEFAULT_HYSTERESIS: f64 = 0.1;

#[derive(Debug, Error)]
pub enum ContactError {
    #[error("classifier: {0}")]
    BadClassifier(String),
    #[error("training data degenerate: all labels are {0}")]
    DegenerateLabels(u8),
    #[error("training data has {0} samples; at least 10 are required")]
    TooFewSamples(usize),
    #[error(
        "likelihood diverged (|beta| > 1e6): data is likely perfectly separable; \
         set a positive L2 regularization weight"
    )]
    Separable,
    #[error("Newton solver failed: {0}")]
    Solver(String),
    #[error("non-finite force sample in training data")]
    NonFiniteSample,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("training file line {line}: {msg}")]
    BadTrainingLine { line: usize, msg: String },
    #[error("classifier file: {0}")]
    Config(String),
}

/// Sigmoid contact model: P(contact | f) = 1 / (1 + exp(-b1 f - b0)).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactClassifier {
    pub beta0: f64,
    /// 1/N; must be positive so probability grows with vertical load.
    pub beta1: f64,
}

impl Default for ContactClassifier {
    /// Usable robot-scale prior: decision boundary at 50 N.
    fn default() -> Self {
        ContactClassifier {
            beta0: -3.0,
            beta1: 0.06,
        }
    }
}

impl ContactClassifier {
    pub fn validate(&self) -> Result<(), ContactError> {
        if !(self.beta0.is_finite() && self.beta1.is_finite()) {
            return Err(ContactError::BadClassifier("non-finite parameters".into()));
        }
        if self.beta1 <= 0.0 {
            return Err(ContactError::BadClassifier(
                "beta1 must be positive (probability must increase with load)".into(),
            ));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ContactError> {
        let text = fs::read_to_string(path)?;
        let c: ContactClassifier =
            toml::from_str(&text).map_err(|e| ContactError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<(), ContactError> {
        let text = toml::to_string(self).map_err(|e| ContactError::Config(e.to_string()))?;
        fs::write(path, text)?;
        Ok(())
    }
}

/// Contact probability of one foot given the vertical force component.
pub fn contact_probability(c: &ContactClassifier, f_vertical: f64) -> f64 {
    1.0 / (1.0 + (-c.beta1 * f_vertical - c.beta0).exp())
}

/// Force estimate for one foot.
#[derive(Debug, Clone)]
pub enum FootForce {
    Valid {
        /// World-frame contact force, N.
        force: Vector3<f64>,
        /// World z-component of `force`.
        f_vertical: f64,
    },
    /// Leg Jacobian condition number exceeded [`SINGULARITY_COND`].
    Singular { condition: f64 },
}

impl FootForce {
    pub fn f_vertical(&self) -> Option<f64> {
        match self {
            FootForce::Valid { f_vertical, .. } => Some(*f_vertical),
            FootForce::Singular { .. } => None,
        }
    }
}

/// Per-sample contact force estimates, one entry per leg in LF RF LH RH order.
#[derive(Debug, Clone)]
pub struct ContactForceEstimate {
    pub feet: [FootForce; 4],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForceMethod {
    /// Per-leg massless-leg statics: f_base = -(J^T)^-1 tau, rotated to world.
    QuasiStatic,
    /// Stacked floating-base formulation with finite-difference base
    /// accelerations: f = pinv(J_c^T) (M u_dot + h - S^T tau).
    FullId,
}

fn condition_number(j: &Matrix3<f64>) -> f64 {
    let svd = j.svd(false, false);
    let s = svd.singular_values;
    if s[2] <= 0.0 {
        f64::INFINITY
    } else {
        s[0] / s[2]
    }
}

/// Quasi-static per-leg estimate at one sample.
fn quasi_static(model: &QuadrupedModel, sample: &TelemetrySample) -> ContactForceEstimate {
    let rot = sample.base_orientation.to_rotation_matrix();
    let feet = LEGS.map(|leg| {
        let q = leg.joints(&sample.joint_pos);
        let tau = Vector3::from(leg.joints(&sample.joint_torque));
        let jac = kinematics::leg_jacobian(model, q, leg);
        let cond = condition_number(&jac);
        if !cond.is_finite() || cond > SINGULARITY_COND {
            return FootForce::Singular { condition: cond };
        }
        match jac.transpose().lu().solve(&(-tau)) {
            Some(f_base) => {
                let force = rot * f_base;
                FootForce::Valid {
                    force,
                    f_vertical: force.z,
                }
            }
            None => FootForce::Singular { condition: cond },
        }
    });
    ContactForceEstimate { feet }
}

/// Stacked full-model estimate at one sample. `base_acc` carries the
/// finite-difference linear and angular base accelerations.
fn full_id(
    model: &QuadrupedModel,
    sample: &TelemetrySample,
    base_acc: (Vector3<f64>, Vector3<f64>),
) -> ContactForceEstimate {
    let rot = sample.base_orientation.to_rotation_matrix();
    let mut jacobians = Vec::with_capacity(4);
    let mut singular = [None; 4];
    for leg in LEGS {
        let q = leg.joints(&sample.joint_pos);
        let jac = kinematics::leg_jacobian(model, q, leg);
        let cond = condition_number(&jac);
        if !cond.is_finite() || cond > SINGULARITY_COND {
            singular[leg.index()] = Some(cond);
        }
        jacobians.push(jac);
    }

    // Generalized coordinates (v_b, w_b, qdot): 18 rows, 12 unknown force
    // components. Point-mass base, massless legs.
    let mut a = DMatrix::<f64>::zeros(18, 12);
    for leg in LEGS {
        let i = leg.index();
        let q = leg.joints(&sample.joint_pos);
        let r_world = rot * kinematics::foot_position(model, q, leg);
        let rj = rot * jacobians[i];
        for row in 0..3 {
            for col in 0..3 {
                // Linear rows: sum of foot forces.
                a[(row, 3 * i + col)] = if row == col { 1.0 } else { 0.0 };
                // Joint rows: (R J)^T f per leg.
                a[(6 + 3 * i + row, 3 * i + col)] = rj[(col, row)];
            }
        }
        // Angular rows: r x f.
        let skew = Matrix3::new(
            0.0, -r_world.z, r_world.y, //
            r_world.z, 0.0, -r_world.x, //
            -r_world.y, r_world.x, 0.0,
        );
        for row in 0..3 {
            for col in 0..3 {
                a[(3 + row, 3 * i + col)] = skew[(row, col)];
            }
        }
    }

    let (v_dot, _w_dot) = base_acc;
    let mut b = DVector::<f64>::zeros(18);
    // m v_dot - m g over the linear rows; zero-inertia angular rows; -tau
    // over the joint rows.
    let g = Vector3::new(0.0, 0.0, -model.gravity);
    let lin = model.base_mass * (v_dot - g);
    for row in 0..3 {
        b[row] = lin[row];
    }
    for (j, tau) in sample.joint_torque.iter().enumerate() {
        b[6 + j] = -tau;
    }

    let solved = a
        .svd(true, true)
        .solve(&b, 1e-10)
        .unwrap_or_else(|_| DVector::zeros(12));
    let feet = LEGS.map(|leg| {
        let i = leg.index();
        if let Some(cond) = singular[i] {
            return FootForce::Singular { condition: cond };
        }
        let force = Vector3::new(solved[3 * i], solved[3 * i + 1], solved[3 * i + 2]);
        FootForce::Valid {
            force,
            f_vertical: force.z,
        }
    });
    ContactForceEstimate { feet }
}

/// Estimate per-foot contact forces at one sample.
///
/// `FullId` needs base accelerations; pass the entry of
/// [`crate::telemetry::base_accelerations`] for this sample (zero
/// acceleration reduces it to the dynamic-free balance).
pub fn estimate_contact_forces(
    model: &QuadrupedModel,
    sample: &TelemetrySample,
    method: ForceMethod,
    base_acc: Option<(Vector3<f64>, Vector3<f64>)>,
) -> ContactForceEstimate {
    match method {
        ForceMethod::QuasiStatic => quasi_static(model, sample),
        ForceMethod::FullId => full_id(
            model,
            sample,
            base_acc.unwrap_or((Vector3::zeros(), Vector3::zeros())),
        ),
    }
}

// ---------------------------------------------------------------------------
// Logistic regression fitter
// ---------------------------------------------------------------------------

/// One training observation for the contact classifier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledForceSample {
    pub f_vertical: f64,
    pub label: bool,
}

/// Parse a two-column training file: `f_vertical label`, `#` comments.
pub fn parse_training_file(text: &str) -> Result<Vec<LabeledForceSample>, ContactError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut parts = body.split_whitespace();
        let f: f64 = parts
            .next()
            .ok_or(ContactError::BadTrainingLine {
                line,
                msg: "missing force column".into(),
            })?
            .parse()
            .map_err(|e| ContactError::BadTrainingLine {
                line,
                msg: format!("bad force value: {e}"),
            })?;
        let label: u8 = parts
            .next()
            .ok_or(ContactError::BadTrainingLine {
                line,
                msg: "missing label column".into(),
            })?
            .parse()
            .map_err(|e| ContactError::BadTrainingLine {
                line,
                msg: format!("bad label: {e}"),
            })?;
        if parts.next().is_some() {
            return Err(ContactError::BadTrainingLine {
                line,
                msg: "expected exactly two columns".into(),
            });
        }
        if label > 1 {
            return Err(ContactError::BadTrainingLine {
                line,
                msg: format!("label must be 0 or 1, got {label}"),
            });
        }
        out.push(LabeledForceSample {
            f_vertical: f,
            label: label == 1,
        });
    }
    Ok(out)
}

/// Fit the sigmoid parameters by Newton iteration on the (optionally
/// L2-penalized) Bernoulli log-likelihood. The penalty applies to the
/// slope only, so the intercept stays unbiased.
///
/// Converges when the gradient infinity-norm drops below 1e-8, errors
/// after 500 iterations, and reports perfectly separable data (diverging
/// parameters) instead of returning garbage.
pub fn fit_classifier(
    data: &[LabeledForceSample],
    reg: f64,
) -> Result<ContactClassifier, ContactError> {
    if data.len() < 10 {
        return Err(ContactError::TooFewSamples(data.len()));
    }
    if data.iter().any(|s| !s.f_vertical.is_finite()) {
        return Err(ContactError::NonFiniteSample);
    }
    let positives = data.iter().filter(|s| s.label).count();
    if positives == 0 {
        return Err(ContactError::DegenerateLabels(0));
    }
    if positives == data.len() {
        return Err(ContactError::DegenerateLabels(1));
    }

    // In one dimension the likelihood diverges exactly when the classes do
    // not overlap in f; detect that up front (the |beta| guard below stays
    // as a backstop for near-degenerate data).
    if reg == 0.0 {
        let (mut max0, mut min0) = (f64::NEG_INFINITY, f64::INFINITY);
        let (mut max1, mut min1) = (f64::NEG_INFINITY, f64::INFINITY);
        for s in data {
            if s.label {
                max1 = max1.max(s.f_vertical);
                min1 = min1.min(s.f_vertical);
            } else {
                max0 = max0.max(s.f_vertical);
                min0 = min0.min(s.f_vertical);
            }
        }
        if max0 < min1 || max1 < min0 {
            return Err(ContactError::Separable);
        }
    }

    let n = data.len() as f64;
    let p_bar = positives as f64 / n;
    let mut beta = Vector2::new((p_bar / (1.0 - p_bar)).ln(), 0.0);

    for _iter in 0..500 {
        let mut grad = Vector2::zeros();
        let mut hess = nalgebra::Matrix2::<f64>::zeros();
        for s in data {
            let z = beta[0] + beta[1] * s.f_vertical;
            let p = 1.0 / (1.0 + (-z).exp());
            let resid = p - if s.label { 1.0 } else { 0.0 };
            let w = (p * (1.0 - p)).max(1e-12);
            grad[0] += resid;
            grad[1] += resid * s.f_vertical;
            hess[(0, 0)] += w;
            hess[(0, 1)] += w * s.f_vertical;
            hess[(1, 1)] += w * s.f_vertical * s.f_vertical;
        }
        grad[1] += reg * beta[1];
        hess[(1, 0)] = hess[(0, 1)];
        hess[(1, 1)] += reg;

        if grad.amax() < 1e-8 {
            let fitted = ContactClassifier {
                beta0: beta[0],
                beta1: beta[1],
            };
            fitted.validate().map_err(|_| {
                ContactError::Solver("converged to a non-increasing sigmoid".into())
            })?;
            return Ok(fitted);
        }

        let step = hess
            .lu()
            .solve(&grad)
            .ok_or_else(|| ContactError::Solver("singular Hessian".into()))?;
        beta -= step;
        if beta.amax() > 1e6 {
            return Err(ContactError::Separable);
        }
    }
    Err(ContactError::Solver(
        "no convergence within 500 Newton iterations".into(),
    ))
}

// ---------------------------------------------------------------------------
// Binarization
// ---------------------------------------------------------------------------

/// Per-foot contact probabilities and binary states over a log's timestamps.
#[derive(Debug, Clone, Serialize)]
pub struct ContactTimeline {
    pub t: Vec<f64>,
    /// probabilities[leg][k] in [0,1].
    pub probabilities: [Vec<f64>; 4],
    /// states[leg][k]: Schmitt-trigger contact state.
    pub states: [Vec<bool>; 4],
    pub threshold: f64,
    pub hysteresis: f64,
}

/// Apply the Schmitt-trigger rule to per-foot probability sequences.
///
/// State switches on at p >= threshold + hysteresis/2, off at
/// p <= threshold - hysteresis/2; the first sample is classified against
/// the plain threshold.
pub fn binarize(
    t: Vec<f64>,
    probabilities: [Vec<f64>; 4],
    threshold: f64,
    hysteresis: f64,
) -> ContactTimeline {
    let hi = threshold + hysteresis / 2.0;
    let lo = threshold - hysteresis / 2.0;
    let states = [0, 1, 2, 3].map(|leg| {
        let probs: &Vec<f64> = &probabilities[leg];
        let mut states = Vec::with_capacity(probs.len());
        let mut state = false;
        for (k, &p) in probs.iter().enumerate() {
            if k == 0 {
                state = p >= threshold;
            } else if !state && p >= hi {
                state = true;
            } else if state && p <= lo {
                state = false;
            }
            states.push(state);
        }
        states
    });
    ContactTimeline {
        t,
        probabilities,
        states,
        threshold,
        hysteresis,
    }
}

/// Run the full per-log contact pipeline: force estimation, sigmoid,
/// Schmitt trigger. Singular samples inherit the previous probability
/// (first sample: 0).
pub fn contact_timeline(
    log: &TelemetryLog,
    model: &QuadrupedModel,
    classifier: &ContactClassifier,
    method: ForceMethod,
    threshold: f64,
    hysteresis: f64,
) -> ContactTimeline {
    let accs = match method {
        ForceMethod::FullId => Some(crate::telemetry::base_accelerations(log, 5)),
        ForceMethod::QuasiStatic => None,
    };
    let t: Vec<f64> = log.samples.iter().map(|s| s.t).collect();
    let mut probabilities: [Vec<f64>; 4] = Default::default();
    for (k, sample) in log.samples.iter().enumerate() {
        let est = estimate_contact_forces(
            model,
            sample,
            method,
            accs.as_ref().map(|a| a[k]),
        );
        for leg in LEGS {
            let i = leg.index();
            let p = match est.feet[i].f_vertical() {
                Some(f) => contact_probability(classifier, f),
                None => probabilities[i].last().copied().unwrap_or(0.0),
            };
            probabilities[i].push(p);
        }
    }
    binarize(t, probabilities, threshold, hysteresis)
}

/// Torques consistent with a desired world force on each foot:
/// tau_leg = -J^T R^T f_world. Inverse of the quasi-static estimator.
pub fn torques_for_forces(
    model: &QuadrupedModel,
    joint_pos: &[f64; 12],
    base_rot: &Rotation3<f64>,
    forces_world: &[Vector3<f64>; 4],
) -> [f64; 12] {
    let mut tau = [0.0; 12];
    for leg in LEGS {
        let i = leg.index();
        let jac = kinematics::leg_jacobian(model, leg.joints(joint_pos), leg);
        let t = -jac.transpose() * (base_rot.inverse() * forces_world[i]);
        tau[3 * i] = t[0];
        tau[3 * i + 1] = t[1];
        tau[3 * i + 2] = t[2];
    }
    tau
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::UnitQuaternion;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn sample_with(
        joint_pos: [f64; 12],
        joint_torque: [f64; 12],
        orientation: UnitQuaternion<f64>,
    ) -> TelemetrySample {
        TelemetrySample {
            t: 0.0,
            base_position: Vector3::new(0.0, 0.0, 0.45),
            base_orientation: orientation,
            base_lin_vel: Vector3::zeros(),
            base_ang_vel: Vector3::zeros(),
            joint_pos,
            joint_vel: [0.0; 12],
            joint_torque,
            battery_voltage: None,
            battery_current: None,
        }
    }

    fn bent_pose() -> [f64; 12] {
        [0.1, 0.5, 0.9, -0.1, 0.5, 0.9, 0.1, -0.5, 0.9, -0.1, -0.5, 0.9]
    }

    fn leg_side_sign(leg: crate::kinematics::Leg) -> f64 {
        use crate::kinematics::Leg;
        match leg {
            Leg::LF | Leg::LH => 1.0,
            Leg::RF | Leg::RH => -1.0,
        }
    }

    #[test]
    fn zero_torque_zero_force() {
        let m = QuadrupedModel::default();
        let s = sample_with(bent_pose(), [0.0; 12], UnitQuaternion::identity());
        let est = estimate_contact_forces(&m, &s, ForceMethod::QuasiStatic, None);
        for foot in &est.feet {
            match foot {
                FootForce::Valid { force, .. } => {
                    assert_relative_eq!(*force, Vector3::zeros(), epsilon = 1e-12)
                }
                FootForce::Singular { .. } => panic!("bent pose should be nonsingular"),
            }
        }
    }

    #[test]
    fn quasi_static_round_trip() {
        let m = QuadrupedModel::default();
        let rot = UnitQuaternion::from_euler_angles(0.2, -0.1, 0.8);
        let forces = [
            Vector3::new(3.0, -2.0, 120.0),
            Vector3::new(-1.0, 4.0, 119.0),
            Vector3::new(0.5, 0.5, 125.0),
            Vector3::new(-2.5, 1.0, 118.0),
        ];
        let tau = torques_for_forces(
            &m,
            &bent_pose(),
            &rot.to_rotation_matrix(),
            &forces,
        );
        let s = sample_with(bent_pose(), tau, rot);
        let est = estimate_contact_forces(&m, &s, ForceMethod::QuasiStatic, None);
        for (leg, want) in LEGS.iter().zip(&forces) {
            match &est.feet[leg.index()] {
                FootForce::Valid { force, f_vertical } => {
                    assert!(
                        (force - want).norm() / want.norm() < 1e-9,
                        "{force} vs {want}"
                    );
                    assert_eq!(*f_vertical, force.z);
                }
                FootForce::Singular { .. } => panic!("unexpected singularity"),
            }
        }
    }

    #[test]
    fn singular_pose_is_flagged_not_wrong() {
        let m = QuadrupedModel::default();
        // LF leg straight (HFE = KFE = 0): singular. Others bent.
        let mut q = bent_pose();
        q[1] = 0.0;
        q[2] = 0.0;
        let s = sample_with(q, [1.0; 12], UnitQuaternion::identity());
        let est = estimate_contact_forces(&m, &s, ForceMethod::QuasiStatic, None);
        assert!(matches!(est.feet[0], FootForce::Singular { .. }));
        assert!(matches!(est.feet[1], FootForce::Valid { .. }));
        assert!(matches!(est.feet[2], FootForce::Valid { .. }));
        assert!(matches!(est.feet[3], FootForce::Valid { .. }));
    }

    #[test]
    fn full_id_matches_quasi_static_on_statics() {
        // Symmetric static stance (feet mirrored about the base center) so
        // an equal weight split satisfies force and moment balance exactly.
        let m = QuadrupedModel::default();
        let quarter = m.base_mass * m.gravity / 4.0;
        let forces = [Vector3::new(0.0, 0.0, quarter); 4];
        let rot = Rotation3::identity();
        let mut pose = [0.0; 12];
        for leg in LEGS {
            let target =
                m.hip_offset(leg) + Vector3::new(0.0, 0.2 * leg_side_sign(leg), -0.45);
            let q = kinematics::leg_ik(&m, target, leg).unwrap();
            pose[3 * leg.index()..3 * leg.index() + 3].copy_from_slice(&q);
        }
        let tau = torques_for_forces(&m, &pose, &rot, &forces);
        let s = sample_with(pose, tau, UnitQuaternion::identity());
        let est = estimate_contact_forces(
            &m,
            &s,
            ForceMethod::FullId,
            Some((Vector3::zeros(), Vector3::zeros())),
        );
        for foot in &est.feet {
            match foot {
                FootForce::Valid { f_vertical, .. } => {
                    assert_relative_eq!(*f_vertical, quarter, epsilon = 1e-6)
                }
                FootForce::Singular { .. } => panic!("nonsingular pose"),
            }
        }
    }

    #[test]
    fn sigmoid_midpoint_and_values() {
        let c = ContactClassifier {
            beta0: 0.0,
            beta1: 0.06,
        };
        assert_relative_eq!(contact_probability(&c, 0.0), 0.5, epsilon = 1e-15);
        let c = ContactClassifier {
            beta0: -3.0,
            beta1: 0.06,
        };
        assert_relative_eq!(contact_probability(&c, 50.0), 0.5, epsilon = 1e-12);
        // Independent evaluation of 1/(1+e^-3).
        assert_relative_eq!(
            contact_probability(&c, 100.0),
            0.9525741268224334,
            epsilon = 1e-12
        );
    }

    #[test]
    fn sigmoid_is_monotone_and_saturates() {
        let c = ContactClassifier::default();
        let mut prev = 0.0;
        for k in -50..=50 {
            let p = contact_probability(&c, 10.0 * k as f64);
            assert!(p > prev || k == -50);
            assert!((0.0..=1.0).contains(&p));
            prev = p;
        }
        assert!(contact_probability(&c, 1e9) <= 1.0);
        assert!(contact_probability(&c, -1e9) >= 0.0);
    }

    pub(crate) fn draw_training(
        truth: &ContactClassifier,
        n: usize,
        seed: u64,
    ) -> Vec<LabeledForceSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let f = rng.gen_range(0.0..250.0);
                let p = contact_probability(truth, f);
                LabeledForceSample {
                    f_vertical: f,
                    label: rng.gen_bool(p),
                }
            })
            .collect()
    }

    #[test]
    fn fit_recovers_generating_decision_rule() {
        let truth = ContactClassifier {
            beta0: -3.0,
            beta1: 0.06,
        };
        let train = draw_training(&truth, 10_000, 11);
        let fitted = fit_classifier(&train, 0.0).unwrap();
        let fresh = draw_training(&truth, 10_000, 12);
        let agree = fresh
            .iter()
            .filter(|s| {
                (contact_probability(&fitted, s.f_vertical) > 0.5)
                    == (contact_probability(&truth, s.f_vertical) > 0.5)
            })
            .count();
        assert!(
            agree as f64 >= 0.99 * fresh.len() as f64,
            "agreement {}/{}",
            agree,
            fresh.len()
        );
    }

    #[test]
    fn fit_rejects_degenerate_labels() {
        let data: Vec<_> = (0..20)
            .map(|k| LabeledForceSample {
                f_vertical: k as f64,
                label: true,
            })
            .collect();
        assert!(matches!(
            fit_classifier(&data, 0.0),
            Err(ContactError::DegenerateLabels(1))
        ));
    }

    #[test]
    fn fit_detects_separable_data() {
        let mut data = Vec::new();
        for k in 0..50 {
            data.push(LabeledForceSample {
                f_vertical: k as f64,
                label: false,
            });
            data.push(LabeledForceSample {
                f_vertical: 100.0 + k as f64,
                label: true,
            });
        }
        assert!(matches!(
            fit_classifier(&data, 0.0),
            Err(ContactError::Separable)
        ));
        // Regularization makes the same data fittable.
        let fitted = fit_classifier(&data, 1.0).unwrap();
        assert!(fitted.beta1 > 0.0);
    }

    #[test]
    fn fit_boundary_on_symmetric_data() {
        // Symmetric overlapping pairs around f = 50.
        let mut data = Vec::new();
        for k in 0..200 {
            let d = 2.0 + 0.4 * (k % 50) as f64;
            data.push(LabeledForceSample {
                f_vertical: 50.0 - d,
                label: k % 7 == 0, // some wrong-side labels keep it non-separable
            });
            data.push(LabeledForceSample {
                f_vertical: 50.0 + d,
                label: k % 7 != 0,
            });
        }
        let fitted = fit_classifier(&data, 0.0).unwrap();
        let boundary = -fitted.beta0 / fitted.beta1;
        assert!(
            (boundary - 50.0).abs() < 1.0,
            "decision boundary at {boundary}"
        );
        // Grid-search oracle over (beta0, beta1) confirms the likelihood
        // peak sits at a boundary near 50.
        let nll = |b0: f64, b1: f64| -> f64 {
            data.iter()
                .map(|s| {
                    let z = b0 + b1 * s.f_vertical;
                    let log1pe = if z > 0.0 {
                        z + (-z).exp().ln_1p()
                    } else {
                        z.exp().ln_1p()
                    };
                    log1pe - if s.label { z } else { 0.0 }
                })
                .sum()
        };
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..60 {
            let b1 = 0.005 + 0.005 * i as f64;
            for j in -80..=-20 {
                let b0 = 0.1 * j as f64;
                let v = nll(b0, b1);
                if v < best.0 {
                    best = (v, b0, b1);
                }
            }
        }
        let grid_boundary = -best.1 / best.2;
        assert!(
            (grid_boundary - 50.0).abs() < 2.0,
            "grid-search boundary at {grid_boundary}"
        );
    }

    #[test]
    fn fit_is_shuffle_invariant_and_scale_equivariant() {
        let truth = ContactClassifier {
            beta0: -2.0,
            beta1: 0.04,
        };
        let train = draw_training(&truth, 2000, 21);
        let a = fit_classifier(&train, 0.0).unwrap();
        let mut shuffled = train.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(5));
        let b = fit_classifier(&shuffled, 0.0).unwrap();
        assert_relative_eq!(a.beta0, b.beta0, epsilon = 1e-6);
        assert_relative_eq!(a.beta1, b.beta1, epsilon = 1e-6);

        let k = 3.5;
        let scaled: Vec<_> = train
            .iter()
            .map(|s| LabeledForceSample {
                f_vertical: k * s.f_vertical,
                label: s.label,
            })
            .collect();
        let c = fit_classifier(&scaled, 0.0).unwrap();
        assert_relative_eq!(c.beta0, a.beta0, epsilon = 1e-5);
        assert_relative_eq!(c.beta1, a.beta1 / k, epsilon = 1e-6);
    }

    #[test]
    fn binarize_basic_cases() {
        let all = |p: f64, n: usize| -> [Vec<f64>; 4] {
            [(); 4].map(|_| vec![p; n])
        };
        let t: Vec<f64> = (0..10).map(|k| k as f64 * 0.1).collect();
        let tl = binarize(t.clone(), all(0.9, 10), 0.5, 0.1);
        assert!(tl.states.iter().all(|s| s.iter().all(|&x| x)));
        // Constant 0.5 with hysteresis: stays at the initial state (on,
        // because the first sample meets the plain threshold).
        let tl = binarize(t.clone(), all(0.5, 10), 0.5, 0.1);
        assert!(tl.states.iter().all(|s| s.iter().all(|&x| x)));
        let tl = binarize(t.clone(), all(0.49, 10), 0.5, 0.1);
        assert!(tl.states.iter().all(|s| s.iter().all(|&x| !x)));
    }

    #[test]
    fn binarize_dead_band_does_not_chatter() {
        let t: Vec<f64> = (0..20).map(|k| k as f64 * 0.1).collect();
        let osc: Vec<f64> = (0..20)
            .map(|k| if k % 2 == 0 { 0.54 } else { 0.56 })
            .collect();
        let probs = [osc.clone(), osc.clone(), osc.clone(), osc];
        let tl = binarize(t, probs, 0.5, 0.1);
        for leg in 0..4 {
            let first = tl.states[leg][0];
            assert!(tl.states[leg].iter().all(|&s| s == first), "chattering");
        }
    }

    #[test]
    fn binarize_invariant_under_repetition() {
        let t: Vec<f64> = (0..6).map(|k| k as f64).collect();
        let p = vec![0.2, 0.7, 0.8, 0.3, 0.9, 0.1];
        let probs = [p.clone(), p.clone(), p.clone(), p.clone()];
        let tl = binarize(t, probs, 0.5, 0.1);

        let mut t2 = Vec::new();
        let mut p2 = Vec::new();
        for (k, &v) in p.iter().enumerate() {
            t2.push(2.0 * k as f64);
            t2.push(2.0 * k as f64 + 1.0);
            p2.push(v);
            p2.push(v);
        }
        let tl2 = binarize(t2, [p2.clone(), p2.clone(), p2.clone(), p2], 0.5, 0.1);
        for leg in 0..4 {
            for (k, &s) in tl.states[leg].iter().enumerate() {
                assert_eq!(tl2.states[leg][2 * k], s);
                assert_eq!(tl2.states[leg][2 * k + 1], s);
            }
        }
    }

    #[test]
    fn classifier_file_round_trip() {
        let dir = std::env::temp_dir().join("habmon_classifier_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("classifier.toml");
        let c = ContactClassifier {
            beta0: -2.5,
            beta1: 0.055,
        };
        c.save(&path).unwrap();
        assert_eq!(ContactClassifier::load(&path).unwrap(), c);
    }

    #[test]
    fn training_file_parses_with_comments() {
        let text = "# force label\n120.5 1\n3.0 0\n\n80 1 # stance\n";
        let rows = parse_training_file(text).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[2].f_vertical, 80.0);
        assert!(rows[2].label);
        assert!(parse_training_file("1.0 2\n").is_err());
        assert!(matches!(
            parse_training_file("1.0\n"),
            Err(ContactError::BadTrainingLine { line: 1, .. })
        ));
    }
}
