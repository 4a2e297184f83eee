//! Reference reach and exploration paths: the ground-truth-path prefix that
//! first enters the target room, landmark-cued TSP visit orders stitched over
//! the room subgraph, and greedy coverage walks with the 85% discard rule.
//!
//! These paths are the normalizers for the exploration-efficiency metrics, so
//! everything here is deterministic: tie-breaks are by smallest viewpoint id
//! and all walks are pure functions of the scene.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{ObjectId, RoomId, SceneError, SceneGraph, ViewpointId};

/// Which reference-exploration protocol produced the explore path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Protocol {
    Landmark,
    Coverage,
}

/// Reference paths and normalization quantities for one episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferencePaths {
    pub reach: Vec<ViewpointId>,
    pub explore: Vec<ViewpointId>,
    pub reach_length: f64,
    /// ℓ: length of the reference exploration walk. Zero for degenerate
    /// single-viewpoint explore paths, which dataset filtering drops.
    pub explore_length: f64,
    pub coverage: f64,
    pub protocol: Protocol,
}

/// Explore-path fragment before assembly into [`ReferencePaths`].
#[derive(Clone, Debug, PartialEq)]
pub struct ExploreFragment {
    pub explore: Vec<ViewpointId>,
    pub explore_length: f64,
    pub coverage: f64,
}

/// Coverage-protocol result: a usable fragment, or a discard under the
/// minimum-coverage rule.
#[derive(Clone, Debug, PartialEq)]
pub enum CoverageOutcome {
    Paths(ExploreFragment),
    Discard { coverage: f64 },
}

/// Landmark-protocol result: a usable fragment, or a signal to fall back to
/// the coverage protocol (no viewpoint sees the original target, or the
/// candidate set exceeds the solver cap).
#[derive(Clone, Debug, PartialEq)]
pub enum LandmarkOutcome {
    Paths(ExploreFragment),
    Fallback,
}

/// Full reference-path result for one base instance.
#[derive(Clone, Debug, PartialEq)]
pub enum ReferenceOutcome {
    Paths(ReferencePaths),
    Discard { coverage: f64 },
}

#[derive(Debug, Error)]
pub enum RefPathError {
    #[error("ground-truth path is empty")]
    EmptyGtPath,
    #[error("ground-truth path is not edge-connected at `{0}` -> `{1}`")]
    BrokenGtPath(ViewpointId, ViewpointId),
    #[error("{0} candidates exceed the solver cap of {1}")]
    CapExceeded(usize, usize),
    #[error("candidate `{0}` unreachable from the walk start")]
    UnreachableCandidate(ViewpointId),
    #[error("entry `{0}` is not in room `{1}`")]
    EntryOutsideRoom(ViewpointId, RoomId),
    #[error("room `{0}` has no objects; coverage is undefined")]
    EmptyRoom(RoomId),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

/// Knobs for reference-path construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefPathConfig {
    /// Maximum landmark-candidate count before falling back to coverage.
    pub tsp_cap: usize,
    /// Seed the greedy walk with the entry viewpoint's visible objects.
    /// `false` reproduces the published pseudocode exactly.
    pub include_entry_objects: bool,
    /// Minimum acceptable final coverage for the coverage protocol.
    pub discard_below: f64,
}

impl Default for RefPathConfig {
    fn default() -> Self {
        Self {
            tsp_cap: 15,
            include_entry_objects: true,
            discard_below: 0.85,
        }
    }
}

/// Shortest prefix of `gt_path` ending at the first viewpoint that lies in
/// the same room as the path's final viewpoint.
pub fn extract_reach_path(
    scene: &SceneGraph,
    gt_path: &[ViewpointId],
) -> Result<Vec<ViewpointId>, RefPathError> {
    let last = gt_path.last().ok_or(RefPathError::EmptyGtPath)?;
    let target_room = scene.viewpoint(last)?.room_id.clone();
    let mut reach = Vec::new();
    for vp in gt_path {
        let room = &scene.viewpoint(vp)?.room_id;
        reach.push(vp.clone());
        if *room == target_room {
            break;
        }
    }
    Ok(reach)
}

/// Visit order over `candidates` minimizing the total shortest-path walk
/// `start -> c1 -> c2 -> ...` (open path, no return). Ties are broken by the
/// lexicographically smallest candidate-id sequence. Returns the order and
/// its walk length.
///
/// The search enumerates permutations depth-first in id order, pruning
/// branches whose partial length already exceeds the best complete walk —
/// semantically identical to exhaustive enumeration, including tie handling,
/// because only strictly better totals replace the incumbent.
pub fn brute_force_tsp(
    scene: &SceneGraph,
    start: &ViewpointId,
    candidates: &BTreeSet<ViewpointId>,
    cap: usize,
) -> Result<(Vec<ViewpointId>, f64), RefPathError> {
    if candidates.len() > cap {
        return Err(RefPathError::CapExceeded(candidates.len(), cap));
    }
    scene.viewpoint(start)?;
    let nodes: Vec<ViewpointId> = candidates.iter().cloned().collect();

    // Pairwise shortest-path distances among {start} ∪ candidates.
    let mut dist: BTreeMap<(ViewpointId, ViewpointId), f64> = BTreeMap::new();
    let mut sources = vec![start.clone()];
    sources.extend(nodes.iter().cloned());
    for a in &sources {
        for b in &nodes {
            if dist.contains_key(&(a.clone(), b.clone())) {
                continue;
            }
            let path = scene
                .shortest_path(a, b)?
                .ok_or_else(|| RefPathError::UnreachableCandidate(b.clone()))?;
            dist.insert((a.clone(), b.clone()), path.length);
        }
    }

    struct Search<'a> {
        nodes: &'a [ViewpointId],
        dist: &'a BTreeMap<(ViewpointId, ViewpointId), f64>,
        best: Option<(f64, Vec<usize>)>,
    }
    impl Search<'_> {
        fn go(&mut self, at: &ViewpointId, used: &mut Vec<usize>, len: f64) {
            if let Some((best_len, _)) = &self.best {
                if len > *best_len {
                    return;
                }
            }
            if used.len() == self.nodes.len() {
                let better = match &self.best {
                    None => true,
                    Some((best_len, _)) => len < *best_len,
                };
                if better {
                    self.best = Some((len, used.clone()));
                }
                return;
            }
            for (i, node) in self.nodes.iter().enumerate() {
                if used.contains(&i) {
                    continue;
                }
                used.push(i);
                let leg = self.dist[&(at.clone(), node.clone())];
                self.go(node, used, len + leg);
                used.pop();
            }
        }
    }
    let mut search = Search {
        nodes: &nodes,
        dist: &dist,
        best: None,
    };
    search.go(start, &mut Vec::new(), 0.0);
    let (length, order) = search.best.unwrap_or((0.0, Vec::new()));
    Ok((order.into_iter().map(|i| nodes[i].clone()).collect(), length))
}

/// Coverage achieved by a set of in-room viewpoints: the fraction of the
/// room's objects visible from at least one of them.
pub fn coverage_of<'a>(
    scene: &SceneGraph,
    room: &RoomId,
    viewpoints: impl IntoIterator<Item = &'a ViewpointId>,
) -> Result<f64, RefPathError> {
    let room_objects = scene.objects_in_room(room)?;
    if room_objects.is_empty() {
        return Err(RefPathError::EmptyRoom(room.clone()));
    }
    let mut seen: BTreeSet<&ObjectId> = BTreeSet::new();
    for vp in viewpoints {
        if scene.viewpoint(vp)?.room_id == *room {
            seen.extend(scene.objects_visible(vp)?.iter().filter(|o| room_objects.contains(*o)));
        }
    }
    Ok(seen.len() as f64 / room_objects.len() as f64)
}

/// Landmark-cued exploration: visit every target-room viewpoint that sees the
/// original target, in brute-force-TSP order, stitched with shortest paths on
/// the room subgraph so the walk never leaves the room.
pub fn landmark_explore_path(
    scene: &SceneGraph,
    entry: &ViewpointId,
    original_target: &ObjectId,
    cap: usize,
) -> Result<LandmarkOutcome, RefPathError> {
    let room = scene.viewpoint(entry)?.room_id.clone();
    let in_room = scene.viewpoints_in_room(&room)?;
    let candidates: BTreeSet<ViewpointId> = scene
        .visible_from(original_target)?
        .intersection(in_room)
        .cloned()
        .collect();
    if candidates.is_empty() || candidates.len() > cap {
        return Ok(LandmarkOutcome::Fallback);
    }
    let sub = scene.room_subgraph(&room)?;
    let (order, _) = brute_force_tsp(&sub, entry, &candidates, cap)?;

    let mut explore = vec![entry.clone()];
    for next in &order {
        let at = explore.last().expect("non-empty").clone();
        if at == *next {
            continue;
        }
        let seg = sub
            .shortest_path(&at, next)?
            .ok_or_else(|| RefPathError::UnreachableCandidate(next.clone()))?;
        explore.extend(seg.viewpoints.into_iter().skip(1));
    }
    let explore_length = sub
        .path_length(&explore)
        .expect("stitched segments are edge-connected");
    let coverage = coverage_of(scene, &room, explore.iter())?;
    Ok(LandmarkOutcome::Paths(ExploreFragment {
        explore,
        explore_length,
        coverage,
    }))
}

/// Greedy coverage exploration: from `entry`, repeatedly move to the
/// unvisited in-room neighbor revealing the most unseen room objects (ties to
/// the smallest id), stopping at full coverage or a dead end; discard the
/// walk when final coverage lands below `discard_below`.
///
/// `include_entry_objects` seeds the seen-set with the entry viewpoint's
/// objects; disabling it reproduces the published pseudocode, which leaves
/// the entry's objects out of the tally.
pub fn coverage_explore_path(
    scene: &SceneGraph,
    entry: &ViewpointId,
    room: &RoomId,
    include_entry_objects: bool,
    discard_below: f64,
) -> Result<CoverageOutcome, RefPathError> {
    if scene.viewpoint(entry)?.room_id != *room {
        return Err(RefPathError::EntryOutsideRoom(entry.clone(), room.clone()));
    }
    let room_objects = scene.objects_in_room(room)?;
    if room_objects.is_empty() {
        return Err(RefPathError::EmptyRoom(room.clone()));
    }
    let in_room = scene.viewpoints_in_room(room)?;

    let mut seen: BTreeSet<ObjectId> = BTreeSet::new();
    if include_entry_objects {
        seen.extend(
            scene
                .objects_visible(entry)?
                .iter()
                .filter(|o| room_objects.contains(*o))
                .cloned(),
        );
    }
    let mut explore = vec![entry.clone()];
    let mut visited: BTreeSet<ViewpointId> = BTreeSet::from([entry.clone()]);
    loop {
        if seen.len() == room_objects.len() {
            break;
        }
        let current = explore.last().expect("non-empty");
        let next = scene
            .neighbors(current)?
            .iter()
            .filter(|(n, _)| in_room.contains(n) && !visited.contains(n))
            .map(|(n, _)| {
                let gain = scene
                    .objects_visible(n)
                    .expect("neighbor exists")
                    .iter()
                    .filter(|o| room_objects.contains(*o) && !seen.contains(*o))
                    .count();
                (n.clone(), gain)
            })
            // Adjacency lists are id-sorted, so max_by on strict `>` keeps
            // the smallest-id neighbor among equal gains.
            .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)));
        let Some((next, _)) = next else {
            break;
        };
        explore.push(next.clone());
        visited.insert(next.clone());
        seen.extend(
            scene
                .objects_visible(&next)?
                .iter()
                .filter(|o| room_objects.contains(*o))
                .cloned(),
        );
    }
    let coverage = seen.len() as f64 / room_objects.len() as f64;
    if coverage < discard_below {
        return Ok(CoverageOutcome::Discard { coverage });
    }
    let explore_length = scene
        .path_length(&explore)
        .expect("greedy walk follows edges");
    Ok(CoverageOutcome::Paths(ExploreFragment {
        explore,
        explore_length,
        coverage,
    }))
}

/// Flags instructions whose text carries a spatial cue strong enough for the
/// landmark protocol.
pub trait LandmarkExtractor {
    fn has_landmark(&self, text: &str) -> bool;
}

/// Deterministic stand-in for an LLM landmark classifier: matches a fixed
/// list of spatial prepositions.
#[derive(Clone, Copy, Debug, Default)]
pub struct KeywordLandmarkExtractor;

const SPATIAL_CUES: &[&str] = &[
    "beside", "near", "next to", "under", "above", "behind", "in front of", "on top of",
    "left of", "right of", "underneath", "close to",
];

impl LandmarkExtractor for KeywordLandmarkExtractor {
    fn has_landmark(&self, text: &str) -> bool {
        let lower = text.to_lowercase();
        SPATIAL_CUES.iter().any(|cue| lower.contains(cue))
    }
}

/// Chooses the exploration protocol for an instruction. A known landmark flag
/// wins; free text falls back to the extractor.
pub fn select_protocol(
    landmark_cued: Option<bool>,
    text: &str,
    extractor: &dyn LandmarkExtractor,
) -> Protocol {
    let cued = landmark_cued.unwrap_or_else(|| extractor.has_landmark(text));
    if cued {
        Protocol::Landmark
    } else {
        Protocol::Coverage
    }
}

/// Builds the full reference-path bundle for one base instance: reach prefix,
/// then the requested exploration protocol with landmark→coverage fallback.
pub fn build_reference_paths(
    scene: &SceneGraph,
    gt_path: &[ViewpointId],
    original_target: &ObjectId,
    protocol: Protocol,
    cfg: &RefPathConfig,
) -> Result<ReferenceOutcome, RefPathError> {
    let reach = extract_reach_path(scene, gt_path)?;
    for pair in reach.windows(2) {
        if !scene.is_edge(&pair[0], &pair[1]) {
            return Err(RefPathError::BrokenGtPath(pair[0].clone(), pair[1].clone()));
        }
    }
    let reach_length = scene.path_length(&reach).expect("validated edges");
    let entry = reach.last().expect("reach path non-empty").clone();
    let room = scene.viewpoint(&entry)?.room_id.clone();

    let (fragment, protocol) = match protocol {
        Protocol::Landmark => {
            match landmark_explore_path(scene, &entry, original_target, cfg.tsp_cap)? {
                LandmarkOutcome::Paths(f) => (f, Protocol::Landmark),
                LandmarkOutcome::Fallback => {
                    match coverage_explore_path(
                        scene,
                        &entry,
                        &room,
                        cfg.include_entry_objects,
                        cfg.discard_below,
                    )? {
                        CoverageOutcome::Paths(f) => (f, Protocol::Coverage),
                        CoverageOutcome::Discard { coverage } => {
                            return Ok(ReferenceOutcome::Discard { coverage })
                        }
                    }
                }
            }
        }
        Protocol::Coverage => {
            match coverage_explore_path(
                scene,
                &entry,
                &room,
                cfg.include_entry_objects,
                cfg.discard_below,
            )? {
                CoverageOutcome::Paths(f) => (f, Protocol::Coverage),
                CoverageOutcome::Discard { coverage } => {
                    return Ok(ReferenceOutcome::Discard { coverage })
                }
            }
        }
    };
    Ok(ReferenceOutcome::Paths(ReferencePaths {
        reach,
        explore: fragment.explore,
        reach_length,
        explore_length: fragment.explore_length,
        coverage: fragment.coverage,
        protocol,
    }))
}
