//! Coverage planning for rectangular monitoring plots: a cell grid with
//! centered margins, serpentine (boustrophedon) visit order, and a
//! start/return route with dwell annotations.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default waypoint spacing, m.
pub const DEFAULT_SPACING: f64 = 1.0;
/// Default dwell per waypoint, s.
pub const DEFAULT_DWELL: f64 = 3.0;
/// Default travel speed for duration estimates, m/s.
pub const DEFAULT_SPEED: f64 = 0.8;
/// Plots smaller than this area draw a protocol warning, m^2.
pub const MIN_PROTOCOL_AREA: f64 = 16.0;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("plot: {0}")]
    BadPlot(String),
    #[error("grid degenerate: spacing {spacing} m exceeds the smaller plot dimension {min_dim} m")]
    GridDegenerate { spacing: f64, min_dim: f64 },
    #[error(
        "start point ({x}, {y}) lies inside the plot; move it outside, \
         for example to ({sx}, {sy})"
    )]
    StartInsideGrid { x: f64, y: f64, sx: f64, sy: f64 },
    #[error("plan is empty")]
    EmptyPlan,
    #[error("plan file: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// A rectangular monitoring plot. `origin` anchors the plot frame's
/// corner in the local survey frame and `orientation` rotates the plot
/// x-axis within it; waypoints are produced in the plot frame and can be
/// transformed out with [`MissionPlan::to_local_frame`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSpec {
    pub name: String,
    pub origin: [f64; 2],
    pub width: f64,
    pub height: f64,
    #[serde(default)]
    pub orientation_rad: f64,
    /// Geodetic anchor, metadata only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lon: Option<f64>,
}

impl PlotSpec {
    pub fn validate(&self) -> Result<(), PlanError> {
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err(PlanError::BadPlot(format!(
                "width and height must be positive, got {} x {}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    /// True when the plot violates the survey-protocol minimum area.
    pub fn below_protocol_area(&self) -> bool {
        self.width * self.height < MIN_PROTOCOL_AREA
    }

    pub fn load(path: &Path) -> Result<Self, PlanError> {
        let text = fs::read_to_string(path)?;
        let plot: PlotSpec = toml::from_str(&text).map_err(|e| PlanError::Config(e.to_string()))?;
        plot.validate()?;
        Ok(plot)
    }
}

/// One mission waypoint in the plot frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
    /// Travel heading, rad; the final waypoint keeps the previous heading.
    pub heading_rad: f64,
    pub dwell_s: f64,
}

/// Grid geometry: cell centers, row-major from the minimum corner.
#[derive(Debug, Clone, PartialEq)]
pub struct WaypointGrid {
    pub rows: usize,
    pub cols: usize,
    pub spacing: f64,
    /// Row-major cell centers in the plot frame.
    pub points: Vec<[f64; 2]>,
}

/// A complete mission: serpentine-ordered waypoints plus the start/return
/// route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionPlan {
    pub plot: PlotSpec,
    pub spacing: f64,
    pub start: [f64; 2],
    pub dwell_s: f64,
    pub speed_mps: f64,
    /// Visit-ordered waypoints (plot frame).
    pub waypoints: Vec<Waypoint>,
    /// Serpentine length inside the grid, m.
    pub grid_length_m: f64,
    /// Full route length including both start connectors, m.
    pub total_length_m: f64,
    /// total_length / speed + dwell per waypoint.
    pub estimated_duration_s: f64,
}

/// Cell-center waypoints over the plot: cols = floor(width/d), rows =
/// floor(height/d), cells centered with equal leftover margins.
pub fn grid_waypoints(plot: &PlotSpec, spacing: f64) -> Result<WaypointGrid, PlanError> {
    plot.validate()?;
    let min_dim = plot.width.min(plot.height);
    if spacing <= 0.0 || spacing > min_dim {
        return Err(PlanError::GridDegenerate { spacing, min_dim });
    }
    let cols = (plot.width / spacing).floor() as usize;
    let rows = (plot.height / spacing).floor() as usize;
    let margin_x = (plot.width - cols as f64 * spacing) / 2.0;
    let margin_y = (plot.height - rows as f64 * spacing) / 2.0;
    let mut points = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            points.push([
                margin_x + spacing * (c as f64 + 0.5),
                margin_y + spacing * (r as f64 + 0.5),
            ]);
        }
    }
    Ok(WaypointGrid {
        rows,
        cols,
        spacing,
        points,
    })
}

/// Row-by-row boustrophedon visit order over a rows x cols grid (even
/// rows left to right, odd rows right to left) plus the in-grid path
/// length (rows*cols - 1) * spacing.
pub fn serpentine_order(rows: usize, cols: usize, spacing: f64) -> (Vec<usize>, f64) {
    let mut order = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        if r % 2 == 0 {
            for c in 0..cols {
                order.push(r * cols + c);
            }
        } else {
            for c in (0..cols).rev() {
                order.push(r * cols + c);
            }
        }
    }
    let length = if order.is_empty() {
        0.0
    } else {
        (order.len() - 1) as f64 * spacing
    };
    (order, length)
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Assemble the full mission: start, nearest serpentine end, all
/// waypoints, return to start. Ties between the two serpentine ends break
/// toward the row-major first waypoint.
pub fn mission_with_return(
    plot: &PlotSpec,
    grid: &WaypointGrid,
    start: [f64; 2],
    dwell_s: f64,
    speed_mps: f64,
) -> Result<MissionPlan, PlanError> {
    if grid.points.is_empty() {
        return Err(PlanError::EmptyPlan);
    }
    let inside =
        start[0] >= 0.0 && start[0] <= plot.width && start[1] >= 0.0 && start[1] <= plot.height;
    if inside {
        return Err(PlanError::StartInsideGrid {
            x: start[0],
            y: start[1],
            sx: -grid.spacing,
            sy: start[1],
        });
    }
    let (order, grid_length_m) = serpentine_order(grid.rows, grid.cols, grid.spacing);
    let first = grid.points[*order.first().unwrap()];
    let last = grid.points[*order.last().unwrap()];
    // Enter at whichever serpentine end is nearer to the start point.
    let ordered: Vec<[f64; 2]> = if dist(start, last) < dist(start, first) {
        order.iter().rev().map(|&i| grid.points[i]).collect()
    } else {
        order.iter().map(|&i| grid.points[i]).collect()
    };

    let mut waypoints = Vec::with_capacity(ordered.len());
    let mut prev_heading = 0.0;
    for (k, &[x, y]) in ordered.iter().enumerate() {
        let heading = if k + 1 < ordered.len() {
            let next = ordered[k + 1];
            f64::atan2(next[1] - y, next[0] - x)
        } else {
            prev_heading
        };
        prev_heading = heading;
        waypoints.push(Waypoint {
            x,
            y,
            heading_rad: heading,
            dwell_s,
        });
    }

    let connector_in = dist(start, ordered[0]);
    let connector_out = dist(*ordered.last().unwrap(), start);
    let total_length_m = connector_in + grid_length_m + connector_out;
    Ok(MissionPlan {
        plot: plot.clone(),
        spacing: grid.spacing,
        start,
        dwell_s,
        speed_mps,
        waypoints,
        grid_length_m,
        total_length_m,
        estimated_duration_s: total_length_m / speed_mps + dwell_s * grid.points.len() as f64,
    })
}

impl MissionPlan {
    /// Waypoints transformed from the plot frame into the local survey
    /// frame (rotate by the plot orientation, then translate by origin).
    pub fn to_local_frame(&self) -> Vec<Waypoint> {
        let (s, c) = self.plot.orientation_rad.sin_cos();
        self.waypoints
            .iter()
            .map(|w| Waypoint {
                x: self.plot.origin[0] + c * w.x - s * w.y,
                y: self.plot.origin[1] + s * w.x + c * w.y,
                heading_rad: w.heading_rad + self.plot.orientation_rad,
                dwell_s: w.dwell_s,
            })
            .collect()
    }
}

/// Write the plan document (TOML). Re-import is exact.
pub fn export_plan(plan: &MissionPlan, path: &Path) -> Result<(), PlanError> {
    if plan.waypoints.is_empty() {
        return Err(PlanError::EmptyPlan);
    }
    let text = toml::to_string(plan).map_err(|e| PlanError::Config(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

pub fn import_plan(path: &Path) -> Result<MissionPlan, PlanError> {
    let text = fs::read_to_string(path)?;
    let plan: MissionPlan = toml::from_str(&text).map_err(|e| PlanError::Config(e.to_string()))?;
    if plan.waypoints.is_empty() {
        return Err(PlanError::EmptyPlan);
    }
    Ok(plan)
}

/// CSV view of the visit order: `index,x,y,heading,dwell`.
pub fn plan_to_csv(plan: &MissionPlan) -> String {
    let mut out = String::from("index,x,y,heading,dwell\n");
    for (k, w) in plan.waypoints.iter().enumerate() {
        let _ = writeln!(out, "{},{},{},{},{}", k, w.x, w.y, w.heading_rad, w.dwell_s);
    }
    out
}
