//! Offline analytics for legged-robot habitat-monitoring missions.
//!
//! The crate turns mission data (telemetry logs, RGB images, bounding-box
//! files) into quantitative products:
//!
//! - [`telemetry`]: log parsing, base attitude, and power/energy summaries
//! - [`kinematics`]: parameterized quadruped leg kinematics and Jacobians
//! - [`contact`]: contact-force estimation and the sigmoid contact classifier
//! - [`slippage`]: the contact-gated slip-over-travel metric
//! - [`vegcover`]: excess-green-index vegetation cover and confusion maps
//! - [`detecteval`]: detection scoring (IoU, precision/recall, mAP)
//! - [`planner`]: serpentine coverage plans over rectangular plots
//! - [`synth`]: deterministic ground-truthed fixture generators
//!
//! Everything is pure and deterministic: identical inputs produce identical
//! outputs, byte for byte. Generators take explicit seeds.

pub mod contact;
pub mod detecteval;
pub mod kinematics;
pub mod planner;
pub mod slippage;
pub mod synth;
pub mod telemetry;
pub mod vegcover;

pub use kinematics::{Leg, QuadrupedModel};
pub use telemetry::{TelemetryLog, TelemetrySample};
