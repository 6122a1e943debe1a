//! The mission slippage metric: contact-gated foot travel divided by base
//! travel over a time window, integrated trapezoidally on the log's own
//! timestamps.

use serde::Serialize;
use thiserror::Error;

use crate::contact::ContactTimeline;
use crate::kinematics::{self, QuadrupedModel, LEGS};
use crate::telemetry::TelemetryLog;

/// Base travel below which the metric is undefined.
pub const MIN_BASE_DISTANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SlippageError {
    #[error("insufficient motion: base distance {0} m is below {MIN_BASE_DISTANCE} m; the metric is undefined")]
    InsufficientMotion(f64),
    #[error("window [{0}, {1}] selects fewer than 2 samples")]
    EmptyWindow(f64, f64),
    #[error("window [{t0}, {tf}] outside log span [{lo}, {hi}]")]
    WindowOutOfRange { t0: f64, tf: f64, lo: f64, hi: f64 },
    #[error("contact timeline has {timeline} entries but the log has {log} samples")]
    TimelineMismatch { timeline: usize, log: usize },
}

/// How foot velocities are gated by contact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactWeighting {
    /// Gate by the binary Schmitt-trigger states.
    Binary,
    /// Weight by the raw contact probabilities.
    Probability,
}

/// Options for [`slippage_metric`].
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SlippageOptions {
    /// Analysis window; None means the full log span.
    pub window: Option<(f64, f64)>,
    pub weighting: ContactWeighting,
    /// Use only the horizontal (xy) velocity components.
    pub horizontal_only: bool,
}

impl Default for SlippageOptions {
    fn default() -> Self {
        SlippageOptions {
            window: None,
            weighting: ContactWeighting::Binary,
            horizontal_only: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SlippageReport {
    /// The slippage metric: sum of per-foot slip distances over base distance.
    pub s: f64,
    /// Contact-gated integral of each foot's speed, m (LF, RF, LH, RH).
    pub per_foot_slip_distance: [f64; 4],
    /// Integral of base speed, m.
    pub base_distance: f64,
    pub window: (f64, f64),
    pub weighting: ContactWeighting,
    pub horizontal_only: bool,
}

/// Compute the slippage metric from a log, a model, and a contact timeline
/// aligned with the log's timestamps.
pub fn slippage_metric(
    log: &TelemetryLog,
    model: &QuadrupedModel,
    timeline: &ContactTimeline,
    options: &SlippageOptions,
) -> Result<SlippageReport, SlippageError> {
    if timeline.t.len() != log.samples.len() {
        return Err(SlippageError::TimelineMismatch {
            timeline: timeline.t.len(),
            log: log.samples.len(),
        });
    }
    let span = (
        log.samples.first().map(|s| s.t).unwrap_or(0.0),
        log.samples.last().map(|s| s.t).unwrap_or(0.0),
    );
    let (t0, tf) = options.window.unwrap_or(span);
    if t0 < span.0 - 1e-12 || tf > span.1 + 1e-12 || t0 >= tf {
        return Err(SlippageError::WindowOutOfRange {
            t0,
            tf,
            lo: span.0,
            hi: span.1,
        });
    }
    // Window endpoints snap to the log's sample times.
    let idx: Vec<usize> = log
        .samples
        .iter()
        .enumerate()
        .filter(|(_, s)| s.t >= t0 && s.t <= tf)
        .map(|(k, _)| k)
        .collect();
    if idx.len() < 2 {
        return Err(SlippageError::EmptyWindow(t0, tf));
    }

    let speed = |v: &nalgebra::Vector3<f64>| {
        if options.horizontal_only {
            v.xy().norm()
        } else {
            v.norm()
        }
    };

    // Per-sample integrands.
    let mut base_speed = Vec::with_capacity(idx.len());
    let mut foot_gated: [Vec<f64>; 4] = Default::default();
    for &k in &idx {
        let sample = &log.samples[k];
        base_speed.push(speed(&sample.base_lin_vel));
        for leg in LEGS {
            let i = leg.index();
            let foot = kinematics::foot_kinematics(model, sample, leg);
            let gate = match options.weighting {
                ContactWeighting::Binary => {
                    if timeline.states[i][k] {
                        1.0
                    } else {
                        0.0
                    }
                }
                ContactWeighting::Probability => timeline.probabilities[i][k],
            };
            foot_gated[i].push(gate * speed(&foot.velocity));
        }
    }

    let trapezoid = |y: &[f64]| -> f64 {
        let mut acc = 0.0;
        for w in 0..idx.len() - 1 {
            let dt = log.samples[idx[w + 1]].t - log.samples[idx[w]].t;
            acc += 0.5 * (y[w] + y[w + 1]) * dt;
        }
        acc
    };

    let base_distance = trapezoid(&base_speed);
    if base_distance < MIN_BASE_DISTANCE {
        return Err(SlippageError::InsufficientMotion(base_distance));
    }
    let per_foot_slip_distance = [0, 1, 2, 3].map(|i| trapezoid(&foot_gated[i]));
    let s = per_foot_slip_distance.iter().sum::<f64>() / base_distance;
    Ok(SlippageReport {
        s,
        per_foot_slip_distance,
        base_distance,
        window: (log.samples[idx[0]].t, log.samples[*idx.last().unwrap()].t),
        weighting: options.weighting,
        horizontal_only: options.horizontal_only,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contact::binarize;
    use crate::telemetry::{LogMetadata, TelemetrySample};
    use approx::assert_relative_eq;
    use nalgebra::{UnitQuaternion, Vector3};

    /// A log whose feet are driven to produce a prescribed world foot
    /// velocity ratio against the base: joint rates solve the velocity
    /// composition for v_foot = ratio * v_base.
    fn ratio_log(ratio: f64, n: usize) -> (TelemetryLog, ContactTimeline) {
        let model = QuadrupedModel::default();
        let nominal = [0.0, 0.5, 1.0];
        let mut samples = Vec::new();
        let mut probs: [Vec<f64>; 4] = Default::default();
        let v_base = Vector3::new(0.4, 0.0, 0.0);
        for k in 0..n {
            let t = 0.01 * k as f64;
            let mut joint_pos = [0.0; 12];
            let mut joint_vel = [0.0; 12];
            for leg in LEGS {
                let i = leg.index();
                joint_pos[3 * i] = nominal[0];
                joint_pos[3 * i + 1] = nominal[1];
                joint_pos[3 * i + 2] = nominal[2];
                let qd = kinematics::leg_rates_for_foot_velocity(
                    &model,
                    nominal,
                    leg,
                    v_base,
                    Vector3::zeros(),
                    &nalgebra::Rotation3::identity(),
                    ratio * v_base,
                )
                .unwrap();
                joint_vel[3 * i] = qd[0];
                joint_vel[3 * i + 1] = qd[1];
                joint_vel[3 * i + 2] = qd[2];
            }
            samples.push(TelemetrySample {
                t,
                base_position: Vector3::new(0.4 * t, 0.0, 0.45),
                base_orientation: UnitQuaternion::identity(),
                base_lin_vel: v_base,
                base_ang_vel: Vector3::zeros(),
                joint_pos,
                joint_vel,
                joint_torque: [0.0; 12],
                battery_voltage: None,
                battery_current: None,
            });
            // Foot 0 in contact, others not.
            probs[0].push(1.0);
            for leg in 1..4 {
                probs[leg].push(0.0);
            }
        }
        let t: Vec<f64> = samples.iter().map(|s| s.t).collect();
        let log = TelemetryLog {
            metadata: LogMetadata {
                mission: "test".into(),
                plot: "p".into(),
                rate_hz: 100.0,
            },
            samples,
        };
        let timeline = binarize(t, probs, 0.5, 0.1);
        (log, timeline)
    }

    #[test]
    fn no_contact_means_zero_slip() {
        let (log, _) = ratio_log(0.5, 50);
        let t: Vec<f64> = log.samples.iter().map(|s| s.t).collect();
        let zeros = [(); 4].map(|_| vec![0.0; t.len()]);
        let timeline = binarize(t, zeros, 0.5, 0.1);
        let model = QuadrupedModel::default();
        let rep =
            slippage_metric(&log, &model, &timeline, &SlippageOptions::default()).unwrap();
        assert_eq!(rep.s, 0.0);
        assert!(rep.base_distance > 0.1);
    }

    #[test]
    fn proportional_foot_velocity_gives_the_ratio() {
        let (log, timeline) = ratio_log(0.1, 100);
        let model = QuadrupedModel::default();
        let rep =
            slippage_metric(&log, &model, &timeline, &SlippageOptions::default()).unwrap();
        assert_relative_eq!(rep.s, 0.1, epsilon = 1e-9);
    }

    #[test]
    fn insufficient_motion_is_an_error_not_zero() {
        let (mut log, timeline) = ratio_log(0.1, 20);
        for s in &mut log.samples {
            s.base_lin_vel = Vector3::zeros();
            s.joint_vel = [0.0; 12];
        }
        let model = QuadrupedModel::default();
        match slippage_metric(&log, &model, &timeline, &SlippageOptions::default()) {
            Err(SlippageError::InsufficientMotion(d)) => assert!(d < MIN_BASE_DISTANCE),
            other => panic!("expected insufficient-motion error, got {other:?}"),
        }
    }

    #[test]
    fn window_restricts_the_integrals() {
        let (log, timeline) = ratio_log(0.1, 100);
        let model = QuadrupedModel::default();
        let full =
            slippage_metric(&log, &model, &timeline, &SlippageOptions::default()).unwrap();
        let opts = SlippageOptions {
            window: Some((0.2, 0.5)),
            ..Default::default()
        };
        let windowed = slippage_metric(&log, &model, &timeline, &opts).unwrap();
        assert_relative_eq!(windowed.s, full.s, epsilon = 1e-9);
        assert!(windowed.base_distance < full.base_distance);
        assert_eq!(windowed.window, (0.2, 0.5));
    }

    #[test]
    fn out_of_span_window_rejected() {
        let (log, timeline) = ratio_log(0.1, 20);
        let model = QuadrupedModel::default();
        let opts = SlippageOptions {
            window: Some((0.0, 99.0)),
            ..Default::default()
        };
        assert!(matches!(
            slippage_metric(&log, &model, &timeline, &opts),
            Err(SlippageError::WindowOutOfRange { .. })
        ));
    }

    #[test]
    fn time_rescaling_leaves_s_unchanged() {
        let (log, timeline) = ratio_log(0.1, 60);
        let model = QuadrupedModel::default();
        let a = slippage_metric(&log, &model, &timeline, &SlippageOptions::default()).unwrap();

        let k = 3.0;
        let mut scaled = log.clone();
        for s in &mut scaled.samples {
            s.t *= k;
            s.base_lin_vel /= k;
            s.base_ang_vel /= k;
            for v in &mut s.joint_vel {
                *v /= k;
            }
        }
        let timeline2 = binarize(
            scaled.samples.iter().map(|s| s.t).collect(),
            timeline.probabilities.clone(),
            0.5,
            0.1,
        );
        let b =
            slippage_metric(&scaled, &model, &timeline2, &SlippageOptions::default()).unwrap();
        assert_relative_eq!(a.s, b.s, epsilon = 1e-12);
        assert_relative_eq!(a.base_distance, b.base_distance, epsilon = 1e-12);
    }

    #[test]
    fn world_rotation_leaves_s_unchanged() {
        let (log, timeline) = ratio_log(0.1, 60);
        let model = QuadrupedModel::default();
        let a = slippage_metric(&log, &model, &timeline, &SlippageOptions::default()).unwrap();
        let rot = UnitQuaternion::from_euler_angles(0.7, -0.3, 1.9);
        let mut rotated = log.clone();
        for s in &mut rotated.samples {
            s.base_position = rot * s.base_position;
            s.base_orientation = rot * s.base_orientation;
            s.base_lin_vel = rot * s.base_lin_vel;
            s.base_ang_vel = rot * s.base_ang_vel;
        }
        let b =
            slippage_metric(&rotated, &model, &timeline, &SlippageOptions::default()).unwrap();
        assert_relative_eq!(a.s, b.s, epsilon = 1e-12);
    }

    #[test]
    fn probability_weighting_scales_the_numerator() {
        let (log, _) = ratio_log(0.1, 50);
        let t: Vec<f64> = log.samples.iter().map(|s| s.t).collect();
        let half = [(); 4].map(|_| vec![0.5; t.len()]);
        let timeline = binarize(t, half, 0.5, 0.1);
        let model = QuadrupedModel::default();
        let opts = SlippageOptions {
            weighting: ContactWeighting::Probability,
            ..Default::default()
        };
        let rep = slippage_metric(&log, &model, &timeline, &opts).unwrap();
        // All four feet at half weight and equal speed ratio 0.1:
        // s = 4 * 0.5 * 0.1 = 0.2.
        assert_relative_eq!(rep.s, 0.2, epsilon = 1e-9);
    }
}
