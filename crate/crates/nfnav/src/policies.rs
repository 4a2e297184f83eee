//! Policy interface and the baseline/two-stage policy family: reference
//! replay, premature abstention, greedy frontier exploration, a random
//! floor, and the navigator+explorer policy with optional clearance scoring.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::episodes::clients::ClientError;
use crate::episodes::Episode;
use crate::rng::rng_for;
use crate::runner::{Action, EpisodeResult, Observation};
use crate::scene::{ObjectId, RoomId, SceneError, SceneGraph, ViewpointId};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("{0}")]
    Internal(String),
    #[error("reference path unusable: {0}")]
    MissingReference(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Client(#[from] ClientError),
}

/// A policy maps observations to actions. Instances are stateful within one
/// episode and must not be reused across episodes; build a fresh one per
/// episode via [`PolicySpec::build`].
pub trait Policy {
    fn act(&mut self, obs: &Observation) -> Result<Action, PolicyError>;
}

impl<T: Policy + ?Sized> Policy for Box<T> {
    fn act(&mut self, obs: &Observation) -> Result<Action, PolicyError> {
        (**self).act(obs)
    }
}

/// Per-episode history: visited viewpoints and the best detector confidence
/// seen per category at each of them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PolicyMemory {
    pub visited: BTreeSet<ViewpointId>,
    best: std::collections::BTreeMap<String, f64>,
}

impl PolicyMemory {
    pub fn record(&mut self, obs: &Observation) {
        self.visited.insert(obs.viewpoint.clone());
        for (category, confidence) in &obs.detections {
            let entry = self.best.entry(category.clone()).or_insert(0.0);
            if *confidence > *entry {
                *entry = *confidence;
            }
        }
    }

    /// Highest confidence accumulated for a category across the episode.
    pub fn best_confidence(&self, category: &str) -> Option<f64> {
        self.best.get(category).copied()
    }
}

/// Replays the reference reach and exploration paths, then answers FOUND on
/// feasible episodes and NOT_FOUND otherwise.
pub struct OraclePolicy {
    moves: std::vec::IntoIter<ViewpointId>,
    feasible: bool,
}

impl OraclePolicy {
    pub fn new(scene: &SceneGraph, episode: &Episode) -> Result<Self, PolicyError> {
        let mut route = Vec::new();
        for leg in [&episode.reference_reach_path, &episode.reference_explore_path] {
            for pair in leg.windows(2) {
                if !scene.is_edge(&pair[0], &pair[1]) {
                    return Err(PolicyError::MissingReference(format!(
                        "step `{}` -> `{}` is not an edge",
                        pair[0], pair[1]
                    )));
                }
                route.push(pair[1].clone());
            }
        }
        if episode.reference_reach_path.first() != Some(&episode.start_viewpoint) {
            return Err(PolicyError::MissingReference(
                "reach path does not begin at the start viewpoint".into(),
            ));
        }
        Ok(Self {
            moves: route.into_iter(),
            feasible: episode.feasible,
        })
    }
}

impl Policy for OraclePolicy {
    fn act(&mut self, _obs: &Observation) -> Result<Action, PolicyError> {
        Ok(match self.moves.next() {
            Some(to) => Action::Move { to },
            None if self.feasible => Action::Found { object: None },
            None => Action::NotFound,
        })
    }
}

/// Nearest target-room viewpoint by shortest-path length, ties by id; the
/// premature and greedy policies both reach via this route.
fn route_to_room(
    scene: &SceneGraph,
    start: &ViewpointId,
    room: &RoomId,
) -> Result<Option<Vec<ViewpointId>>, PolicyError> {
    let mut best: Option<crate::scene::Path> = None;
    for v in scene.viewpoints_in_room(room)? {
        let Some(path) = scene.shortest_path(start, v)? else {
            continue;
        };
        let better = match &best {
            None => true,
            Some(b) => {
                path.length < b.length
                    || (path.length == b.length
                        && path.viewpoints.last() < b.viewpoints.last())
            }
        };
        if better {
            best = Some(path);
        }
    }
    Ok(best.map(|p| p.viewpoints))
}

/// Walks to the target room's nearest entry viewpoint and abstains there
/// without exploring — the premature-termination failure mode as a policy.
pub struct PrematureNfPolicy {
    moves: std::vec::IntoIter<ViewpointId>,
}

impl PrematureNfPolicy {
    pub fn new(scene: &SceneGraph, episode: &Episode) -> Result<Self, PolicyError> {
        let route = route_to_room(scene, &episode.start_viewpoint, &episode.target_room_id)?
            .unwrap_or_default();
        Ok(Self {
            moves: route.into_iter().skip(1).collect::<Vec<_>>().into_iter(),
        })
    }
}

impl Policy for PrematureNfPolicy {
    fn act(&mut self, _obs: &Observation) -> Result<Action, PolicyError> {
        Ok(match self.moves.next() {
            Some(to) => Action::Move { to },
            None => Action::NotFound,
        })
    }
}

/// Objects of the target room already seen from visited in-room viewpoints.
fn seen_room_objects(
    scene: &SceneGraph,
    room: &RoomId,
    visited: &BTreeSet<ViewpointId>,
) -> Result<BTreeSet<ObjectId>, PolicyError> {
    let room_objects = scene.objects_in_room(room)?;
    let mut seen = BTreeSet::new();
    for v in visited {
        if scene.viewpoint(v)?.room_id == *room {
            seen.extend(scene.objects_visible(v)?.intersection(room_objects).cloned());
        }
    }
    Ok(seen)
}

/// Count of not-yet-seen target-room objects a move to `candidate` reveals.
fn novelty_of(
    scene: &SceneGraph,
    room: &RoomId,
    seen: &BTreeSet<ObjectId>,
    candidate: &ViewpointId,
) -> Result<usize, PolicyError> {
    let room_objects = scene.objects_in_room(room)?;
    Ok(scene
        .objects_visible(candidate)?
        .intersection(room_objects)
        .filter(|o| !seen.contains(*o))
        .count())
}

/// Shortest-path reach, then frontier exploration of the target room by
/// greatest new-object count; FOUND once the accumulated target detection
/// crosses τ, NOT_FOUND when the in-room frontier is exhausted.
pub struct GreedyFrontierPolicy<'a> {
    scene: &'a SceneGraph,
    target_room: RoomId,
    target_category: String,
    tau: f64,
    reach: std::vec::IntoIter<ViewpointId>,
    memory: PolicyMemory,
}

impl<'a> GreedyFrontierPolicy<'a> {
    pub fn new(scene: &'a SceneGraph, episode: &Episode, tau: f64) -> Result<Self, PolicyError> {
        let route = route_to_room(scene, &episode.start_viewpoint, &episode.target_room_id)?
            .unwrap_or_default();
        Ok(Self {
            scene,
            target_room: episode.target_room_id.clone(),
            target_category: episode.target_object_category.clone(),
            tau,
            reach: route.into_iter().skip(1).collect::<Vec<_>>().into_iter(),
            memory: PolicyMemory::default(),
        })
    }
}

impl Policy for GreedyFrontierPolicy<'_> {
    fn act(&mut self, obs: &Observation) -> Result<Action, PolicyError> {
        self.memory.record(obs);
        if self
            .memory
            .best_confidence(&self.target_category)
            .is_some_and(|c| c >= self.tau)
        {
            return Ok(Action::Found { object: None });
        }
        if let Some(to) = self.reach.next() {
            return Ok(Action::Move { to });
        }
        let seen = seen_room_objects(self.scene, &self.target_room, &self.memory.visited)?;
        let mut best: Option<(usize, &ViewpointId)> = None;
        for n in &obs.neighbors {
            if self.memory.visited.contains(&n.id)
                || self.scene.viewpoint(&n.id)?.room_id != self.target_room
            {
                continue;
            }
            let novelty = novelty_of(self.scene, &self.target_room, &seen, &n.id)?;
            let better = match best {
                None => true,
                Some((bn, bid)) => novelty > bn || (novelty == bn && n.id < *bid),
            };
            if better {
                best = Some((novelty, &n.id));
            }
        }
        Ok(match best {
            Some((_, id)) => Action::Move { to: id.clone() },
            None => Action::NotFound,
        })
    }
}

/// Uniform random neighbor walk; abstains one step before the budget runs
/// out. Seeded per episode, so identical seeds replay identically.
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64, episode_id: &str) -> Self {
        Self {
            rng: rng_for(seed, &["random", episode_id]),
        }
    }
}

impl Policy for RandomPolicy {
    fn act(&mut self, obs: &Observation) -> Result<Action, PolicyError> {
        if obs.remaining_budget <= 1 || obs.neighbors.is_empty() {
            return Ok(Action::NotFound);
        }
        let pick = self.rng.gen_range(0..obs.neighbors.len());
        Ok(Action::Move {
            to: obs.neighbors[pick].id.clone(),
        })
    }
}

/// Stage-1 room navigator interface: proposes the next hop toward the target
/// room, or `None` when it has no route.
pub trait Navigator: Send + Sync {
    fn next_move(
        &self,
        obs: &Observation,
        target_room: &RoomId,
    ) -> Result<Option<ViewpointId>, ClientError>;
}

/// Default navigator: follows the shortest path from the current viewpoint
/// to the nearest target-room viewpoint, recomputed every step.
pub struct ShortestPathNavigator<'a> {
    pub scene: &'a SceneGraph,
}

impl Navigator for ShortestPathNavigator<'_> {
    fn next_move(
        &self,
        obs: &Observation,
        target_room: &RoomId,
    ) -> Result<Option<ViewpointId>, ClientError> {
        let route = route_to_room(self.scene, &obs.viewpoint, target_room)
            .map_err(|e| ClientError::Fatal(e.to_string()))?;
        Ok(route.and_then(|r| r.get(1).cloned()))
    }
}

/// Score components for one candidate exploration move.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplorerScore {
    /// New target-room objects revealed by the move.
    pub novelty: usize,
    /// Free-space clearance toward the candidate, meters; absent when the
    /// clearance engine is off or the ray failed.
    pub clearance: Option<f64>,
    pub revisit: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplorerCandidate {
    pub id: ViewpointId,
    pub score: ExplorerScore,
}

/// Stage-2 move selection interface. Implementations pick one of the
/// candidates or decline (`None`), which the policy treats as frontier
/// exhaustion. The observation and memory travel along so external
/// implementations can reason over full context.
pub trait Explorer: Send + Sync {
    fn choose(
        &self,
        obs: &Observation,
        memory: &PolicyMemory,
        candidates: &[ExplorerCandidate],
    ) -> Result<Option<ViewpointId>, ClientError>;
}

/// Deterministic explorer: argmax of novelty + λ·clearance − μ·revisit,
/// ties to the smallest viewpoint id.
pub struct ScriptedScorer {
    pub lambda: f64,
    pub mu: f64,
}

impl Default for ScriptedScorer {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            mu: 1e3,
        }
    }
}

impl ScriptedScorer {
    fn score(&self, s: &ExplorerScore) -> f64 {
        s.novelty as f64 + self.lambda * s.clearance.unwrap_or(0.0)
            - if s.revisit { self.mu } else { 0.0 }
    }
}

impl Explorer for ScriptedScorer {
    fn choose(
        &self,
        _obs: &Observation,
        _memory: &PolicyMemory,
        candidates: &[ExplorerCandidate],
    ) -> Result<Option<ViewpointId>, ClientError> {
        let mut best: Option<(f64, &ViewpointId)> = None;
        for c in candidates {
            let score = self.score(&c.score);
            let better = match best {
                None => true,
                Some((bs, bid)) => score > bs || (score == bs && c.id < *bid),
            };
            if better {
                best = Some((score, &c.id));
            }
        }
        Ok(best.map(|(_, id)| id.clone()))
    }
}

/// Environment variable naming an external explorer endpoint.
pub const EXPLORER_ENDPOINT_VAR: &str = "NFNAV_EXPLORER_ENDPOINT";

/// HTTP explorer client: POSTs the observation, accumulated evidence, and
/// scored candidates; expects `{"move": <viewpoint id or null>}`.
pub struct HttpExplorer {
    url: String,
    client: reqwest::blocking::Client,
}

impl HttpExplorer {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            client: crate::episodes::clients::http_client(),
        }
    }
}

#[derive(Serialize)]
struct ExplorerRequest<'a> {
    observation: &'a Observation,
    visited: &'a BTreeSet<ViewpointId>,
    candidates: &'a [ExplorerCandidate],
}

#[derive(Deserialize)]
struct ExplorerResponse {
    #[serde(rename = "move")]
    chosen: Option<ViewpointId>,
}

impl Explorer for HttpExplorer {
    fn choose(
        &self,
        obs: &Observation,
        memory: &PolicyMemory,
        candidates: &[ExplorerCandidate],
    ) -> Result<Option<ViewpointId>, ClientError> {
        let request = ExplorerRequest {
            observation: obs,
            visited: &memory.visited,
            candidates,
        };
        let response: ExplorerResponse =
            crate::episodes::clients::post_json(&self.client, &self.url, &request)?;
        if let Some(chosen) = &response.chosen {
            if !candidates.iter().any(|c| c.id == *chosen) {
                return Err(ClientError::Fatal(format!(
                    "explorer chose `{chosen}`, not a candidate"
                )));
            }
        }
        Ok(response.chosen)
    }
}

/// Scripted scorer unless `NFNAV_EXPLORER_ENDPOINT` points at a service.
pub fn explorer_from_env(lambda: f64, mu: f64) -> Box<dyn Explorer> {
    match std::env::var(EXPLORER_ENDPOINT_VAR) {
        Ok(url) if !url.is_empty() => Box::new(HttpExplorer::new(url)),
        _ => Box::new(ScriptedScorer { lambda, mu }),
    }
}

/// Two-stage policy: a navigator walks to the target room, then an explorer
/// picks in-room moves by novelty/clearance until the target is detected at
/// the current viewpoint (≥ τ ⇒ FOUND) or the frontier runs out (⇒
/// NOT_FOUND). If the stage-1 allowance runs out before the room is reached
/// the navigator keeps walking without a hand-off, so the runner's global
/// budget decides the episode.
pub struct RoamPolicy<'a> {
    scene: &'a SceneGraph,
    target_room: RoomId,
    target_category: String,
    tau: f64,
    use_clearance: bool,
    navigator: Box<dyn Navigator + 'a>,
    explorer: Box<dyn Explorer + 'a>,
    stage1_budget: Option<usize>,
    stage1_moves: usize,
    memory: PolicyMemory,
}

impl<'a> RoamPolicy<'a> {
    pub fn new(
        scene: &'a SceneGraph,
        episode: &Episode,
        tau: f64,
        use_clearance: bool,
        navigator: Box<dyn Navigator + 'a>,
        explorer: Box<dyn Explorer + 'a>,
        stage1_budget: Option<usize>,
    ) -> Self {
        Self {
            scene,
            target_room: episode.target_room_id.clone(),
            target_category: episode.target_object_category.clone(),
            tau,
            use_clearance,
            navigator,
            explorer,
            stage1_budget,
            stage1_moves: 0,
            memory: PolicyMemory::default(),
        }
    }

    fn candidates(&self, obs: &Observation) -> Result<Vec<ExplorerCandidate>, PolicyError> {
        let seen = seen_room_objects(self.scene, &self.target_room, &self.memory.visited)?;
        let mut out = Vec::new();
        for n in &obs.neighbors {
            if self.scene.viewpoint(&n.id)?.room_id != self.target_room {
                continue;
            }
            let clearance = if self.use_clearance {
                obs.clearance
                    .as_ref()
                    .and_then(|c| c.get(&n.id).copied())
                    .flatten()
            } else {
                None
            };
            out.push(ExplorerCandidate {
                id: n.id.clone(),
                score: ExplorerScore {
                    novelty: novelty_of(self.scene, &self.target_room, &seen, &n.id)?,
                    clearance,
                    revisit: self.memory.visited.contains(&n.id),
                },
            });
        }
        Ok(out)
    }
}

impl Policy for RoamPolicy<'_> {
    fn act(&mut self, obs: &Observation) -> Result<Action, PolicyError> {
        self.memory.record(obs);
        if obs.room != self.target_room {
            // Stage 1. The stage budget only bounds how long a hand-off can
            // take; past it we still have no better option than walking.
            let _allowance = self
                .stage1_budget
                .unwrap_or_else(|| (obs.remaining_budget / 2).max(1));
            self.stage1_moves += 1;
            return match self.navigator.next_move(obs, &self.target_room)? {
                Some(to) => Ok(Action::Move { to }),
                None => Ok(Action::NotFound),
            };
        }
        // Stage 2: detection at the current viewpoint ends the episode.
        if obs
            .detections
            .get(&self.target_category)
            .is_some_and(|c| *c >= self.tau)
        {
            return Ok(Action::Found { object: None });
        }
        let candidates = self.candidates(obs)?;
        let frontier: Vec<ExplorerCandidate> = candidates
            .iter()
            .filter(|c| !c.score.revisit)
            .cloned()
            .collect();
        if frontier.is_empty() {
            return Ok(Action::NotFound);
        }
        match self.explorer.choose(obs, &self.memory, &frontier)? {
            Some(to) => Ok(Action::Move { to }),
            None => Ok(Action::NotFound),
        }
    }
}

/// Why a policy produced a false NOT-FOUND on a feasible episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorClass {
    RoomReaching,
    ExplorationControl,
    Perception,
}

impl std::fmt::Display for ErrorClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ErrorClass::RoomReaching => "ROOM_REACHING",
            ErrorClass::ExplorationControl => "EXPLORATION_CONTROL",
            ErrorClass::Perception => "PERCEPTION",
        })
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ClassifyError {
    #[error("episode `{0}` is not a false NOT-FOUND; nothing to classify")]
    NotAFalseNotFound(String),
}

/// Attributes a false NOT-FOUND to its failure stage: never reached the room
/// → ROOM_REACHING, reached but under-covered (< `c_min`) →
/// EXPLORATION_CONTROL, otherwise the detector must have missed →
/// PERCEPTION.
pub fn classify_decision_error(
    result: &EpisodeResult,
    c_min: f64,
) -> Result<ErrorClass, ClassifyError> {
    let false_nf = result.feasible
        && result.decision == crate::runner::Decision::NotFound
        && !result.decision_correct;
    if !false_nf {
        return Err(ClassifyError::NotAFalseNotFound(result.episode_id.clone()));
    }
    Ok(if !result.reached {
        ErrorClass::RoomReaching
    } else if result.coverage < c_min {
        ErrorClass::ExplorationControl
    } else {
        ErrorClass::Perception
    })
}

/// Named policy configuration; builds a fresh instance per episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum PolicySpec {
    Oracle,
    PrematureNf,
    Greedy {
        tau: f64,
    },
    Random,
    Roam {
        tau: f64,
        lambda: f64,
        mu: f64,
        stage1_budget: Option<usize>,
        free: bool,
    },
}

impl PolicySpec {
    pub fn name(&self) -> &'static str {
        match self {
            PolicySpec::Oracle => "oracle",
            PolicySpec::PrematureNf => "premature-nf",
            PolicySpec::Greedy { .. } => "greedy",
            PolicySpec::Random => "random",
            PolicySpec::Roam { .. } => "roam",
        }
    }

    /// Fresh policy instance for one episode. `seed` feeds stochastic
    /// policies, keyed further by episode id.
    pub fn build<'a>(
        &self,
        scene: &'a SceneGraph,
        episode: &'a Episode,
        seed: u64,
    ) -> Result<Box<dyn Policy + 'a>, PolicyError> {
        Ok(match self {
            PolicySpec::Oracle => Box::new(OraclePolicy::new(scene, episode)?),
            PolicySpec::PrematureNf => Box::new(PrematureNfPolicy::new(scene, episode)?),
            PolicySpec::Greedy { tau } => {
                Box::new(GreedyFrontierPolicy::new(scene, episode, *tau)?)
            }
            PolicySpec::Random => Box::new(RandomPolicy::new(seed, &episode.id)),
            PolicySpec::Roam {
                tau,
                lambda,
                mu,
                stage1_budget,
                free,
            } => Box::new(RoamPolicy::new(
                scene,
                episode,
                *tau,
                *free,
                Box::new(ShortestPathNavigator { scene }),
                explorer_from_env(*lambda, *mu),
                *stage1_budget,
            )),
        })
    }
}
