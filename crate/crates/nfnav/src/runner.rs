//! Episode execution: builds observations, queries the policy, enforces the
//! action protocol, and derives the per-episode result quantities the metric
//! suite consumes.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::episodes::Episode;
use crate::free::{clearance_for_neighbors, ClearanceProfile};
use crate::policies::{Policy, PolicyError};
use crate::rng::rng_for;
use crate::scene::{ObjectId, RoomId, SceneError, SceneGraph, ViewpointId};
use crate::synth::{derive_headings, OccupancyGrid};

/// One agent action under the navigation protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Action {
    Move { to: ViewpointId },
    Found { object: Option<ObjectId> },
    NotFound,
}

/// Terminal outcome of an episode. `None` covers budget exhaustion and
/// protocol violations and is always an incorrect decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Decision {
    Found,
    NotFound,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborInfo {
    pub id: ViewpointId,
    pub edge_length: f64,
    /// Radians, 0 = +x, counter-clockwise, in (−π, π].
    pub heading: f64,
}

/// What the policy sees each step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub viewpoint: ViewpointId,
    pub room: RoomId,
    pub neighbors: Vec<NeighborInfo>,
    /// Category → detector confidence, for categories that appear visible
    /// here under the noise model.
    pub detections: BTreeMap<String, f64>,
    pub remaining_budget: usize,
    /// Per-neighbor clearance in meters; populated only when the free-space
    /// engine is enabled, `None` entries mark failed rays.
    pub clearance: Option<BTreeMap<ViewpointId, Option<f64>>>,
}

/// Full record of one episode execution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub episode_id: String,
    pub viewpoints: Vec<ViewpointId>,
    pub actions: Vec<Action>,
    pub decision: Decision,
    pub seed: u64,
}

/// Scored summary of one episode, the metric suite's input unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub episode_id: String,
    pub feasible: bool,
    pub decision: Decision,
    /// Visited at least one viewpoint of the target room.
    pub reached: bool,
    pub decision_correct: bool,
    pub p_reach: f64,
    pub p_explore: f64,
    pub coverage: f64,
    pub reference_reach_length: f64,
    pub reference_explore_length: f64,
    pub reference_coverage: f64,
    pub steps_used: usize,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("policy failed on episode `{episode}`: {source}")]
    Policy {
        episode: String,
        #[source]
        source: PolicyError,
    },
    #[error("target room `{0}` has no objects; episode should have been filtered out")]
    EmptyRoom(RoomId),
    #[error("trajectory step `{0}` -> `{1}` is not an edge")]
    BrokenTrajectory(ViewpointId, ViewpointId),
    #[error("budget must be at least 1")]
    BadBudget,
    #[error("no grid available for room `{0}`")]
    MissingGrid(RoomId),
    #[error("heading derivation failed: {0}")]
    Headings(#[from] crate::synth::SynthError),
}

/// Simulated object detector: visible categories score `base_true`, others
/// `base_false`, both jittered by seeded uniform noise; optional flip rates
/// inject false positives/negatives. Confidences are a pure function of
/// (seed, episode, viewpoint, category), so replays and parallel runs agree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub base_true: f64,
    pub base_false: f64,
    pub noise: f64,
    pub fp_rate: f64,
    pub fn_rate: f64,
    pub seed: u64,
}

impl Default for DetectorModel {
    fn default() -> Self {
        Self {
            base_true: 0.9,
            base_false: 0.05,
            noise: 0.05,
            fp_rate: 0.0,
            fn_rate: 0.0,
            seed: 0,
        }
    }
}

impl DetectorModel {
    /// Confidence for one (episode, viewpoint, category) query, or `None`
    /// when the category does not register at all (not visible, no false
    /// positive). Truly visible categories always register, possibly with a
    /// miss-level confidence after a false-negative flip.
    pub fn confidence(
        &self,
        episode_id: &str,
        viewpoint: &ViewpointId,
        category: &str,
        truly_visible: bool,
    ) -> Option<f64> {
        let mut rng = rng_for(
            self.seed,
            &["detector", episode_id, viewpoint.as_str(), category],
        );
        let flip_rate = if truly_visible { self.fn_rate } else { self.fp_rate };
        let flipped = flip_rate > 0.0 && rng.gen_range(0.0..1.0) < flip_rate;
        let appears_visible = truly_visible != flipped;
        if !truly_visible && !appears_visible {
            return None;
        }
        let base = if appears_visible {
            self.base_true
        } else {
            self.base_false
        };
        let jitter = if self.noise > 0.0 {
            rng.gen_range(-self.noise..=self.noise)
        } else {
            0.0
        };
        Some((base + jitter).clamp(0.0, 1.0))
    }

    /// Detection map at a viewpoint: every category with a visible object
    /// instance, plus false-positive entries for `extra_categories`.
    pub fn detections_at(
        &self,
        scene: &SceneGraph,
        episode_id: &str,
        viewpoint: &ViewpointId,
        extra_categories: &BTreeSet<String>,
    ) -> Result<BTreeMap<String, f64>, SceneError> {
        let visible: BTreeSet<String> = scene
            .objects_visible(viewpoint)?
            .iter()
            .map(|o| scene.object(o).expect("indexed object").category.clone())
            .collect();
        let mut detections = BTreeMap::new();
        for category in &visible {
            if let Some(c) = self.confidence(episode_id, viewpoint, category, true) {
                detections.insert(category.clone(), c);
            }
        }
        for category in extra_categories {
            if visible.contains(category) {
                continue;
            }
            if let Some(c) = self.confidence(episode_id, viewpoint, category, false) {
                detections.insert(category.clone(), c);
            }
        }
        Ok(detections)
    }
}

/// Occupancy grids and ray parameters for clearance profiles.
#[derive(Clone, Debug)]
pub struct FreeContext<'a> {
    pub grids: &'a BTreeMap<RoomId, OccupancyGrid>,
    pub step: f64,
    pub max_range: f64,
}

impl FreeContext<'_> {
    fn profile(&self, scene: &SceneGraph, v: &ViewpointId) -> Option<ClearanceProfile> {
        let room = &scene.viewpoint(v).ok()?.room_id;
        let grid = self.grids.get(room)?;
        clearance_for_neighbors(grid, scene, v, self.step, self.max_range).ok()
    }
}

fn observe(
    scene: &SceneGraph,
    episode: &Episode,
    detector: &DetectorModel,
    free: Option<&FreeContext>,
    current: &ViewpointId,
    remaining_budget: usize,
) -> Result<Observation, RunError> {
    let headings = derive_headings(scene, current)?;
    let neighbors = scene
        .neighbors(current)?
        .iter()
        .map(|(id, len)| NeighborInfo {
            id: id.clone(),
            edge_length: *len,
            heading: headings.get(id).copied().unwrap_or(0.0),
        })
        .collect();
    let extra = BTreeSet::from([episode.target_object_category.clone()]);
    let detections = detector.detections_at(scene, &episode.id, current, &extra)?;
    let clearance = free.and_then(|ctx| {
        let profile = ctx.profile(scene, current)?;
        Some(
            profile
                .entries
                .iter()
                .map(|(n, e)| (n.clone(), e.clearance))
                .collect(),
        )
    });
    Ok(Observation {
        viewpoint: current.clone(),
        room: scene.viewpoint(current)?.room_id.clone(),
        neighbors,
        detections,
        remaining_budget,
        clearance,
    })
}

/// Runs one policy on one episode. The policy is queried until it emits a
/// terminal decision, violates the protocol (non-neighbor MOVE ⇒ decision
/// NONE), or exhausts the MOVE budget (⇒ NONE). Policy-internal errors
/// surface as `RunError::Policy` so failed episodes are excluded with a
/// diagnostic rather than silently scored.
pub fn run_episode(
    policy: &mut dyn Policy,
    scene: &SceneGraph,
    episode: &Episode,
    budget: usize,
    detector: &DetectorModel,
    free: Option<&FreeContext>,
) -> Result<(Trajectory, EpisodeResult), RunError> {
    if budget == 0 {
        return Err(RunError::BadBudget);
    }
    scene.viewpoint(&episode.start_viewpoint)?;

    let mut current = episode.start_viewpoint.clone();
    let mut viewpoints = vec![current.clone()];
    let mut actions = Vec::new();
    let mut moves_used = 0usize;
    let decision = loop {
        if moves_used >= budget {
            break Decision::None;
        }
        let obs = observe(scene, episode, detector, free, &current, budget - moves_used)?;
        let action = policy.act(&obs).map_err(|source| RunError::Policy {
            episode: episode.id.clone(),
            source,
        })?;
        actions.push(action.clone());
        match action {
            Action::Move { to } => {
                if !scene.is_edge(&current, &to) {
                    break Decision::None;
                }
                current = to;
                viewpoints.push(current.clone());
                moves_used += 1;
            }
            Action::Found { .. } => break Decision::Found,
            Action::NotFound => break Decision::NotFound,
        }
    };

    let trajectory = Trajectory {
        episode_id: episode.id.clone(),
        viewpoints,
        actions,
        decision,
        seed: detector.seed,
    };
    let result = score_trajectory(&trajectory, scene, episode, moves_used)?;
    Ok((trajectory, result))
}

/// Derives the result record for a finished trajectory.
pub fn score_trajectory(
    trajectory: &Trajectory,
    scene: &SceneGraph,
    episode: &Episode,
    steps_used: usize,
) -> Result<EpisodeResult, RunError> {
    let (p_reach, p_explore) = split_lengths(trajectory, scene, &episode.target_room_id)?;
    let coverage = measure_coverage(trajectory, scene, &episode.target_room_id)?;
    let reached = trajectory
        .viewpoints
        .iter()
        .any(|v| in_room(scene, v, &episode.target_room_id));
    let decision_correct = match trajectory.decision {
        Decision::Found => episode.feasible,
        Decision::NotFound => !episode.feasible,
        Decision::None => false,
    };
    Ok(EpisodeResult {
        episode_id: episode.id.clone(),
        feasible: episode.feasible,
        decision: trajectory.decision,
        reached,
        decision_correct,
        p_reach,
        p_explore,
        coverage,
        reference_reach_length: episode.reference_reach_length,
        reference_explore_length: episode.reference_explore_length,
        reference_coverage: episode.reference_coverage,
        steps_used,
    })
}

fn in_room(scene: &SceneGraph, v: &ViewpointId, room: &RoomId) -> bool {
    scene.viewpoint(v).map(|vp| vp.room_id == *room).unwrap_or(false)
}

/// Checks edge connectivity of consecutive viewpoints.
pub fn validate_trajectory(trajectory: &Trajectory, scene: &SceneGraph) -> Result<(), RunError> {
    for pair in trajectory.viewpoints.windows(2) {
        if !scene.is_edge(&pair[0], &pair[1]) {
            return Err(RunError::BrokenTrajectory(pair[0].clone(), pair[1].clone()));
        }
    }
    Ok(())
}

/// Splits the trajectory length at the first target-room viewpoint: reach
/// length before, exploration length after. Post-entry excursions that leave
/// the room still count as exploration. A trajectory that never enters the
/// room is all reach.
pub fn split_lengths(
    trajectory: &Trajectory,
    scene: &SceneGraph,
    target_room: &RoomId,
) -> Result<(f64, f64), RunError> {
    validate_trajectory(trajectory, scene)?;
    let entry = trajectory
        .viewpoints
        .iter()
        .position(|v| in_room(scene, v, target_room));
    let mut p_reach = 0.0;
    let mut p_explore = 0.0;
    for (i, pair) in trajectory.viewpoints.windows(2).enumerate() {
        let len = scene
            .edge_length(&pair[0], &pair[1])
            .expect("validated edge");
        match entry {
            Some(e) if i >= e => p_explore += len,
            _ => p_reach += len,
        }
    }
    Ok((p_reach, p_explore))
}

/// Fraction of the target room's objects seen from the trajectory's in-room
/// viewpoints. Zero if the room was never entered; an objectless target room
/// is a dataset defect and errors out.
pub fn measure_coverage(
    trajectory: &Trajectory,
    scene: &SceneGraph,
    target_room: &RoomId,
) -> Result<f64, RunError> {
    validate_trajectory(trajectory, scene)?;
    let room_objects = scene.objects_in_room(target_room)?;
    if room_objects.is_empty() {
        return Err(RunError::EmptyRoom(target_room.clone()));
    }
    let mut seen: BTreeSet<&ObjectId> = BTreeSet::new();
    for v in &trajectory.viewpoints {
        if in_room(scene, v, target_room) {
            seen.extend(scene.objects_visible(v)?.intersection(room_objects));
        }
    }
    Ok(seen.len() as f64 / room_objects.len() as f64)
}
