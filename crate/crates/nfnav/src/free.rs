//! Free-space clearance estimation: march rays over a room's occupancy grid
//! and report how far each heading stays on free cells.
//!
//! Doors terminate rays exactly like obstacles, so clearance never leads an
//! explorer through an opening it should treat as a room boundary.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::scene::{Position, SceneGraph, ViewpointId};
use crate::synth::{derive_headings, Cell, OccupancyGrid, SynthError};

pub const DEFAULT_STEP: f64 = 0.1;
pub const DEFAULT_MAX_RANGE: f64 = 10.0;

#[derive(Debug, Error)]
pub enum FreeError {
    #[error("ray origin ({x:.3}, {y:.3}) is not on a free cell")]
    OriginBlocked { x: f64, y: f64 },
    #[error("step must be positive and finite, got {0}")]
    BadStep(f64),
    #[error(transparent)]
    Headings(#[from] SynthError),
}

/// Per-neighbor clearance at one viewpoint. `clearance` is `None` when the
/// ray for that heading could not be cast (origin off-grid for that room's
/// grid never happens in practice, but degenerate headings are kept rather
/// than failing the whole profile).
#[derive(Clone, Debug, PartialEq)]
pub struct ClearanceEntry {
    pub heading: f64,
    pub clearance: Option<f64>,
}

/// Clearance profile of one viewpoint, keyed by neighbor.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ClearanceProfile {
    pub origin: Option<ViewpointId>,
    pub entries: BTreeMap<ViewpointId, ClearanceEntry>,
}

impl ClearanceProfile {
    pub fn clearance_toward(&self, neighbor: &ViewpointId) -> Option<f64> {
        self.entries.get(neighbor).and_then(|e| e.clearance)
    }
}

/// Distance a ray travels from `origin` along `heading` before leaving free
/// space, in multiples of `step`, clamped to `max_range`.
///
/// Marches sample points at `step` increments; a sample on an obstacle or
/// door cell — or off the grid — stops the ray, and the count of prior free
/// samples times `step` is the clearance.
pub fn raycast_clearance(
    grid: &OccupancyGrid,
    origin: &Position,
    heading: f64,
    step: f64,
    max_range: f64,
) -> Result<f64, FreeError> {
    if !(step.is_finite() && step > 0.0) {
        return Err(FreeError::BadStep(step));
    }
    if grid.cell_at(origin.x, origin.y) != Some(Cell::Free) {
        return Err(FreeError::OriginBlocked {
            x: origin.x,
            y: origin.y,
        });
    }
    let (dx, dy) = (heading.cos(), heading.sin());
    let mut k: u64 = 1;
    loop {
        let dist = k as f64 * step;
        if dist > max_range {
            return Ok(max_range);
        }
        let x = origin.x + dist * dx;
        let y = origin.y + dist * dy;
        if grid.cell_at(x, y) != Some(Cell::Free) {
            return Ok(((k - 1) as f64 * step).min(max_range));
        }
        k += 1;
    }
}

/// One raycast per neighbor heading of `v`. Entries that cannot be computed
/// are kept with `clearance: None` instead of failing the profile.
pub fn clearance_for_neighbors(
    grid: &OccupancyGrid,
    scene: &SceneGraph,
    v: &ViewpointId,
    step: f64,
    max_range: f64,
) -> Result<ClearanceProfile, FreeError> {
    let origin = scene
        .viewpoint(v)
        .map_err(|e| FreeError::Headings(SynthError::Scene(e)))?
        .position;
    let headings = derive_headings(scene, v)?;
    let mut entries = BTreeMap::new();
    for (neighbor, heading) in headings {
        let clearance = raycast_clearance(grid, &origin, heading, step, max_range).ok();
        entries.insert(neighbor, ClearanceEntry { heading, clearance });
    }
    Ok(ClearanceProfile {
        origin: Some(v.clone()),
        entries,
    })
}

/// Fixed fan of `n` evenly spaced headings instead of per-neighbor rays.
/// Headings are returned in (−π, π].
pub fn clearance_fan(
    grid: &OccupancyGrid,
    origin: &Position,
    n: usize,
    step: f64,
    max_range: f64,
) -> Result<Vec<(f64, f64)>, FreeError> {
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut heading = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
        if heading > std::f64::consts::PI {
            heading -= 2.0 * std::f64::consts::PI;
        }
        out.push((heading, raycast_clearance(grid, origin, heading, step, max_range)?));
    }
    Ok(out)
}
