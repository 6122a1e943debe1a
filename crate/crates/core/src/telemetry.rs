//! Time-ordered robot telemetry: parsing, validation, attitude and
//! power/energy summaries.
//!
//! The on-disk format is line-delimited JSON, one record per line. The first
//! line is a header object carrying `mission`, `plot` and `rate_hz`; every
//! following line is one sample with fields, in fixed order: `t`, `p` (3),
//! `q` (4, w first), `v` (3), `w` (3), `jq` (12), `jv` (12), `tau` (12) and
//! optional `bv`, `bi`. Numbers round-trip bit exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of actuated joints (4 legs x HAA, HFE, KFE).
pub const JOINT_COUNT: usize = 12;

const QUAT_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: field '{field}' expects {expect} values, got {got}")]
    Arity {
        line: usize,
        field: &'static str,
        expect: usize,
        got: usize,
    },
    #[error("line {line}: timestamp {t} does not increase over previous {prev}")]
    NonMonotonicTime { line: usize, t: f64, prev: f64 },
    #[error("line {line}: quaternion norm {norm} deviates from 1 by more than {QUAT_NORM_TOL}")]
    QuaternionNorm { line: usize, norm: f64 },
    #[error("line {line}: field '{field}' holds a non-finite value")]
    NonFinite { line: usize, field: &'static str },
    #[error("battery channel '{0}' absent from the log")]
    ChannelAbsent(&'static str),
    #[error("log holds {0} samples; at least 2 are required")]
    TooShort(usize),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One telemetry record. Base pose and twist are world-frame; the
/// orientation quaternion maps base-frame vectors into the world frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TelemetrySample {
    pub t: f64,
    pub base_position: Vector3<f64>,
    pub base_orientation: UnitQuaternion<f64>,
    pub base_lin_vel: Vector3<f64>,
    pub base_ang_vel: Vector3<f64>,
    /// Joint positions, rad. Leg order LF, RF, LH, RH; per leg HAA, HFE, KFE.
    pub joint_pos: [f64; JOINT_COUNT],
    pub joint_vel: [f64; JOINT_COUNT],
    pub joint_torque: [f64; JOINT_COUNT],
    pub battery_voltage: Option<f64>,
    pub battery_current: Option<f64>,
}

/// Log metadata carried by the header line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogMetadata {
    pub mission: String,
    pub plot: String,
    pub rate_hz: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TelemetryLog {
    pub metadata: LogMetadata,
    pub samples: Vec<TelemetrySample>,
}

/// Intrinsic Z-Y-X Euler angles of the base plus the tilt of the base
/// z-axis away from the world vertical.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BaseAttitude {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    /// arccos(cos(roll) * cos(pitch)).
    pub total_inclination: f64,
    /// Set when |pitch| is within 1e-9 of pi/2; yaw is then reported as 0.
    pub gimbal_lock: bool,
}

/// Energy/power figures over a log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerSummary {
    pub duration_s: f64,
    pub energy_wh: f64,
    pub mean_power_w: f64,
    /// Requires a pack capacity; None when no capacity was supplied.
    pub battery_percent_used: Option<f64>,
}

impl TelemetrySample {
    fn validate(&self, line: usize) -> Result<(), TelemetryError> {
        let norm = self.base_orientation.as_ref().norm();
        if (norm - 1.0).abs() > QUAT_NORM_TOL {
            return Err(TelemetryError::QuaternionNorm { line, norm });
        }
        let finite3 = |v: &Vector3<f64>| v.iter().all(|x| x.is_finite());
        if !self.t.is_finite() {
            return Err(TelemetryError::NonFinite { line, field: "t" });
        }
        if !finite3(&self.base_position) {
            return Err(TelemetryError::NonFinite { line, field: "p" });
        }
        if !finite3(&self.base_lin_vel) {
            return Err(TelemetryError::NonFinite { line, field: "v" });
        }
        if !finite3(&self.base_ang_vel) {
            return Err(TelemetryError::NonFinite { line, field: "w" });
        }
        for (field, arr) in [
            ("jq", &self.joint_pos),
            ("jv", &self.joint_vel),
            ("tau", &self.joint_torque),
        ] {
            if arr.iter().any(|x| !x.is_finite()) {
                return Err(TelemetryError::NonFinite { line, field });
            }
        }
        Ok(())
    }
}

impl TelemetryLog {
    pub fn duration(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }
}

// ---------------------------------------------------------------------------
// Parsing and serialization
// ---------------------------------------------------------------------------

fn field_f64(
    obj: &serde_json::Map<String, serde_json::Value>,
    field: &'static str,
    line: usize,
) -> Result<f64, TelemetryError> {
    obj.get(field)
        .and_then(|v| v.as_f64())
        .ok_or(TelemetryError::Malformed {
            line,
            msg: format!("missing or non-numeric field '{field}'"),
        })
}

fn field_opt_f64(
    obj: &serde_json::Map<String, serde_json::Value>,
    field: &'static str,
    line: usize,
) -> Result<Option<f64>, TelemetryError> {
    match obj.get(field) {
        None => Ok(None),
        Some(v) => v
            .as_f64()
            .map(Some)
            .ok_or(TelemetryError::Malformed {
                line,
                msg: format!("non-numeric field '{field}'"),
            }),
    }
}

fn field_array<const N: usize>(
    obj: &serde_json::Map<String, serde_json::Value>,
    field: &'static str,
    line: usize,
) -> Result<[f64; N], TelemetryError> {
    let arr = obj
        .get(field)
        .and_then(|v| v.as_array())
        .ok_or(TelemetryError::Malformed {
            line,
            msg: format!("missing or non-array field '{field}'"),
        })?;
    if arr.len() != N {
        return Err(TelemetryError::Arity {
            line,
            field,
            expect: N,
            got: arr.len(),
        });
    }
    let mut out = [0.0; N];
    for (i, v) in arr.iter().enumerate() {
        out[i] = v.as_f64().ok_or(TelemetryError::Malformed {
            line,
            msg: format!("non-numeric entry in '{field}'"),
        })?;
    }
    Ok(out)
}

/// Parse a telemetry log from its line-delimited text form.
pub fn parse_log_str(text: &str) -> Result<TelemetryLog, TelemetryError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (hline, header) = lines.next().ok_or(TelemetryError::Malformed {
        line: 1,
        msg: "empty log: missing header line".into(),
    })?;
    let metadata: LogMetadata =
        serde_json::from_str(header).map_err(|e| TelemetryError::Malformed {
            line: hline + 1,
            msg: format!("bad header: {e}"),
        })?;

    let mut samples = Vec::new();
    let mut prev_t: Option<f64> = None;
    for (idx, raw) in lines {
        let line = idx + 1;
        let value: serde_json::Value =
            serde_json::from_str(raw).map_err(|e| TelemetryError::Malformed {
                line,
                msg: e.to_string(),
            })?;
        let obj = value.as_object().ok_or(TelemetryError::Malformed {
            line,
            msg: "record is not an object".into(),
        })?;

        let t = field_f64(obj, "t", line)?;
        let p: [f64; 3] = field_array(obj, "p", line)?;
        let q: [f64; 4] = field_array(obj, "q", line)?;
        let v: [f64; 3] = field_array(obj, "v", line)?;
        let w: [f64; 3] = field_array(obj, "w", line)?;
        let sample = TelemetrySample {
            t,
            base_position: Vector3::from(p),
            // new_unchecked keeps the parsed bits; the norm invariant is
            // checked below against the raw values.
            base_orientation: UnitQuaternion::new_unchecked(nalgebra::Quaternion::new(
                q[0], q[1], q[2], q[3],
            )),
            base_lin_vel: Vector3::from(v),
            base_ang_vel: Vector3::from(w),
            joint_pos: field_array(obj, "jq", line)?,
            joint_vel: field_array(obj, "jv", line)?,
            joint_torque: field_array(obj, "tau", line)?,
            battery_voltage: field_opt_f64(obj, "bv", line)?,
            battery_current: field_opt_f64(obj, "bi", line)?,
        };
        // Quaternion invariant is on the raw values, before renormalization.
        let raw_norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        if (raw_norm - 1.0).abs() > QUAT_NORM_TOL {
            return Err(TelemetryError::QuaternionNorm {
                line,
                norm: raw_norm,
            });
        }
        sample.validate(line)?;
        if let Some(prev) = prev_t {
            if t <= prev {
                return Err(TelemetryError::NonMonotonicTime { line, t, prev });
            }
        }
        prev_t = Some(t);
        samples.push(sample);
    }
    Ok(TelemetryLog { metadata, samples })
}

/// Parse a telemetry log from a file.
pub fn parse_log(path: &Path) -> Result<TelemetryLog, TelemetryError> {
    parse_log_str(&fs::read_to_string(path)?)
}

fn push_array(out: &mut String, vals: &[f64]) {
    out.push('[');
    for (i, v) in vals.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        // serde_json::Number formatting: shortest representation that
        // round-trips, so parse(serialize(log)) is bit-exact.
        let _ = write!(out, "{}", serde_json::Number::from_f64(*v).unwrap());
    }
    out.push(']');
}

/// Serialize a log to its line-delimited text form (fixed field order).
pub fn serialize_log(log: &TelemetryLog) -> String {
    let mut out = serde_json::to_string(&log.metadata).expect("header serializes");
    out.push('\n');
    for s in &log.samples {
        let q = s.base_orientation.as_ref();
        let _ = write!(out, "{{\"t\":{}", serde_json::Number::from_f64(s.t).unwrap());
        out.push_str(",\"p\":");
        push_array(&mut out, s.base_position.as_slice());
        out.push_str(",\"q\":");
        push_array(&mut out, &[q.w, q.i, q.j, q.k]);
        out.push_str(",\"v\":");
        push_array(&mut out, s.base_lin_vel.as_slice());
        out.push_str(",\"w\":");
        push_array(&mut out, s.base_ang_vel.as_slice());
        out.push_str(",\"jq\":");
        push_array(&mut out, &s.joint_pos);
        out.push_str(",\"jv\":");
        push_array(&mut out, &s.joint_vel);
        out.push_str(",\"tau\":");
        push_array(&mut out, &s.joint_torque);
        if let Some(bv) = s.battery_voltage {
            let _ = write!(out, ",\"bv\":{}", serde_json::Number::from_f64(bv).unwrap());
        }
        if let Some(bi) = s.battery_current {
            let _ = write!(out, ",\"bi\":{}", serde_json::Number::from_f64(bi).unwrap());
        }
        out.push_str("}\n");
    }
    out
}

/// Write a log to a file in the line-delimited format.
pub fn write_log(log: &TelemetryLog, path: &Path) -> Result<(), TelemetryError> {
    fs::write(path, serialize_log(log))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Attitude
// ---------------------------------------------------------------------------

const GIMBAL_TOL: f64 = 1e-9;

/// Intrinsic Z-Y-X Euler angles of the base orientation plus total
/// inclination. In the gimbal-lock region (|pitch| within 1e-9 of pi/2)
/// yaw is reported as 0 and the `gimbal_lock` flag is set.
pub fn attitude_of(sample: &TelemetrySample) -> BaseAttitude {
    let m = sample.base_orientation.to_rotation_matrix();
    let m = m.matrix();
    // R = Rz(yaw) * Ry(pitch) * Rx(roll); m31 = -sin(pitch).
    let sp = (-m[(2, 0)]).clamp(-1.0, 1.0);
    let pitch = sp.asin();
    let (roll, yaw, gimbal_lock) = if std::f64::consts::FRAC_PI_2 - pitch.abs() < GIMBAL_TOL {
        // cos(pitch) ~ 0: roll and yaw share an axis. Convention: yaw = 0.
        let roll = if sp > 0.0 {
            f64::atan2(m[(0, 1)], m[(0, 2)])
        } else {
            f64::atan2(-m[(0, 1)], -m[(0, 2)])
        };
        (roll, 0.0, true)
    } else {
        (
            f64::atan2(m[(2, 1)], m[(2, 2)]),
            f64::atan2(m[(1, 0)], m[(0, 0)]),
            false,
        )
    };
    let total_inclination = (roll.cos() * pitch.cos()).clamp(-1.0, 1.0).acos();
    BaseAttitude {
        roll,
        pitch,
        yaw,
        total_inclination,
        gimbal_lock,
    }
}

// ---------------------------------------------------------------------------
// Power and energy
// ---------------------------------------------------------------------------

/// Trapezoidal integral of electrical power over the log, in Wh.
///
/// Both battery channels must be present on every sample. `capacity_wh`
/// enables the optional percent-used figure.
pub fn power_summary(
    log: &TelemetryLog,
    capacity_wh: Option<f64>,
) -> Result<PowerSummary, TelemetryError> {
    if log.samples.len() < 2 {
        return Err(TelemetryError::TooShort(log.samples.len()));
    }
    let mut power = Vec::with_capacity(log.samples.len());
    for s in &log.samples {
        let v = s
            .battery_voltage
            .ok_or(TelemetryError::ChannelAbsent("bv"))?;
        let i = s
            .battery_current
            .ok_or(TelemetryError::ChannelAbsent("bi"))?;
        power.push(v * i);
    }
    let mut energy_j = 0.0;
    for k in 1..log.samples.len() {
        let dt = log.samples[k].t - log.samples[k - 1].t;
        energy_j += 0.5 * (power[k] + power[k - 1]) * dt;
    }
    let duration_s = log.duration();
    let energy_wh = energy_j / 3600.0;
    Ok(PowerSummary {
        duration_s,
        energy_wh,
        mean_power_w: energy_j / duration_s,
        battery_percent_used: capacity_wh.map(|cap| 100.0 * energy_wh / cap),
    })
}

// ---------------------------------------------------------------------------
// Finite-difference base accelerations
// ---------------------------------------------------------------------------

/// Base linear and angular accelerations recovered from the logged
/// velocities by a local quadratic least-squares fit (Savitzky-Golay
/// style) over `window` samples centered on each sample. The window
/// shrinks near the log edges.
pub fn base_accelerations(log: &TelemetryLog, window: usize) -> Vec<(Vector3<f64>, Vector3<f64>)> {
    let n = log.samples.len();
    let half = (window.max(1)) / 2;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let lo = i.saturating_sub(half);
        let hi = (i + half).min(n - 1);
        let lin = fit_derivative(&log.samples[lo..=hi], log.samples[i].t, |s| s.base_lin_vel);
        let ang = fit_derivative(&log.samples[lo..=hi], log.samples[i].t, |s| s.base_ang_vel);
        out.push((lin, ang));
    }
    out
}

/// Least-squares local polynomial derivative of a vector channel at `t0`.
/// Quadratic when the window holds >= 3 samples, linear for 2, zero for 1.
fn fit_derivative<F>(window: &[TelemetrySample], t0: f64, channel: F) -> Vector3<f64>
where
    F: Fn(&TelemetrySample) -> Vector3<f64>,
{
    match window.len() {
        0 | 1 => Vector3::zeros(),
        2 => {
            let dt = window[1].t - window[0].t;
            (channel(&window[1]) - channel(&window[0])) / dt
        }
        _ => {
            // Fit y = a + b*(t - t0) + c*(t - t0)^2; the derivative at t0 is b.
            let mut ata = nalgebra::Matrix3::<f64>::zeros();
            let mut aty = [Vector3::zeros(), Vector3::zeros(), Vector3::zeros()];
            for s in window {
                let dt = s.t - t0;
                let basis = [1.0, dt, dt * dt];
                let y = channel(s);
                for r in 0..3 {
                    for c in 0..3 {
                        ata[(r, c)] += basis[r] * basis[c];
                    }
                    aty[r] += basis[r] * y;
                }
            }
            let inv = match ata.try_inverse() {
                Some(inv) => inv,
                None => return Vector3::zeros(),
            };
            let mut b = Vector3::zeros();
            for (c, rhs) in aty.iter().enumerate() {
                b += inv[(1, c)] * rhs;
            }
            b
        }
    }
}
