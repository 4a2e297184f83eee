//! Episode and dataset model plus the construction pipeline: sample feasible
//! base instances, derive reference paths, run the rewrite-and-verify loop to
//! mint paired NOT-FOUND episodes, filter, split, and report statistics.

pub mod clients;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::refpaths::{
    build_reference_paths, select_protocol, KeywordLandmarkExtractor, Protocol, RefPathConfig,
    RefPathError, ReferenceOutcome,
};
use crate::rng::rng_for;
use crate::scene::{ObjectId, RoomId, SceneError, SceneGraph, ViewpointId};
use clients::{with_retries, ClientError, Rewriter, Verdict, Verifier};

/// What an instruction asks for, independent of any particular episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instruction {
    pub text: String,
    pub target_object_category: String,
    pub target_room_id: RoomId,
    pub landmark_cued: bool,
}

/// One navigation task. Feasible episodes ask for an object that exists in
/// the target room; NOT-FOUND episodes carry a verified-absent substitute
/// category while sharing all navigation context with their feasible twin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub id: String,
    pub scan_id: String,
    pub start_viewpoint: ViewpointId,
    pub target_room_id: RoomId,
    pub feasible: bool,
    /// What the agent is asked to find: the original category for feasible
    /// episodes, the substitute for NOT-FOUND ones.
    pub target_object_category: String,
    pub original_target_category: String,
    pub original_target_object: ObjectId,
    pub instruction_text: String,
    pub landmark_cued: bool,
    pub gt_path: Vec<ViewpointId>,
    pub reference_reach_path: Vec<ViewpointId>,
    pub reference_explore_path: Vec<ViewpointId>,
    pub reference_reach_length: f64,
    pub reference_explore_length: f64,
    pub reference_coverage: f64,
    pub protocol: Protocol,
}

/// Feasible/NOT-FOUND twins sharing navigation context.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedInstance {
    pub found: Episode,
    pub nf: Episode,
}

#[derive(Debug, Error, PartialEq)]
pub enum PairError {
    #[error("episodes `{0}` and `{1}` disagree on {2}")]
    ContextMismatch(String, String, &'static str),
    #[error("pair must hold exactly one feasible episode")]
    FeasibilityMismatch,
}

impl PairedInstance {
    pub fn new(found: Episode, nf: Episode) -> Result<Self, PairError> {
        if !found.feasible || nf.feasible {
            return Err(PairError::FeasibilityMismatch);
        }
        let mismatch = |what: &'static str| {
            Err(PairError::ContextMismatch(
                found.id.clone(),
                nf.id.clone(),
                what,
            ))
        };
        if found.scan_id != nf.scan_id {
            return mismatch("scan_id");
        }
        if found.start_viewpoint != nf.start_viewpoint {
            return mismatch("start_viewpoint");
        }
        if found.target_room_id != nf.target_room_id {
            return mismatch("target_room_id");
        }
        if found.gt_path != nf.gt_path {
            return mismatch("gt_path");
        }
        if found.reference_reach_path != nf.reference_reach_path
            || found.reference_explore_path != nf.reference_explore_path
            || found.reference_reach_length.to_bits() != nf.reference_reach_length.to_bits()
            || found.reference_explore_length.to_bits() != nf.reference_explore_length.to_bits()
            || found.reference_coverage.to_bits() != nf.reference_coverage.to_bits()
        {
            return mismatch("reference paths");
        }
        Ok(Self { found, nf })
    }
}

/// Per-instance record of substitute categories the verifier rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Blacklist {
    entries: BTreeMap<String, BTreeSet<String>>,
}

impl Blacklist {
    pub fn rejected(&self, instance: &str) -> BTreeSet<String> {
        self.entries.get(instance).cloned().unwrap_or_default()
    }

    pub fn record(&mut self, instance: &str, category: String) {
        self.entries
            .entry(instance.to_owned())
            .or_default()
            .insert(category);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    ValSeen,
    ValUnseen,
}

impl std::fmt::Display for SplitName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SplitName::Train => "train",
            SplitName::ValSeen => "val_seen",
            SplitName::ValUnseen => "val_unseen",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub name: SplitName,
    pub pairs: Vec<PairedInstance>,
}

impl DatasetSplit {
    pub fn episodes(&self) -> impl Iterator<Item = &Episode> {
        self.pairs.iter().flat_map(|p| [&p.found, &p.nf])
    }

    pub fn scans(&self) -> BTreeSet<&str> {
        self.pairs.iter().map(|p| p.found.scan_id.as_str()).collect()
    }
}

/// A feasible instance before reference paths and pairing: the pipeline's
/// input unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseInstance {
    pub id: String,
    pub scan_id: String,
    pub start_viewpoint: ViewpointId,
    pub instruction: Instruction,
    pub target_object_id: ObjectId,
    pub gt_path: Vec<ViewpointId>,
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("no scene loaded for scan `{0}`")]
    UnknownScan(String),
    #[error("base instance `{base}` is malformed: {msg}")]
    BadBase { base: String, msg: String },
    #[error("reference paths for `{base}` failed: {source}")]
    RefPath {
        base: String,
        #[source]
        source: RefPathError,
    },
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("split constraint violated: {0}")]
    SplitConstraint(String),
    #[error(transparent)]
    Pair(#[from] PairError),
    #[error("{0} is empty")]
    EmptyInput(&'static str),
}

/// Substitute proposal with the exclusion contract enforced: the candidate
/// must avoid both the room's categories and the instance blacklist.
pub fn propose_substitute(
    rewriter: &dyn Rewriter,
    instruction_text: &str,
    avoid: &BTreeSet<String>,
    blacklisted: &BTreeSet<String>,
) -> Result<Option<String>, ClientError> {
    let candidate = with_retries(3, || rewriter.propose(instruction_text, avoid, blacklisted))?;
    if let Some(c) = &candidate {
        if avoid.contains(c) || blacklisted.contains(c) {
            return Err(ClientError::Fatal(format!(
                "rewriter proposed excluded category `{c}`"
            )));
        }
    }
    Ok(candidate)
}

/// Absence check with bounded retries on transient client failures.
pub fn verify_absence(
    verifier: &dyn Verifier,
    scene: &SceneGraph,
    room: &RoomId,
    category: &str,
) -> Result<Verdict, ClientError> {
    with_retries(3, || verifier.verify(scene, room, category))
}

/// Outcome of the rewrite-and-verify loop for one instance.
#[derive(Clone, Debug, PartialEq)]
pub enum RewriteOutcome {
    NotFound(Box<Episode>),
    Rejected,
}

/// Propose→verify loop: detected candidates are blacklisted and resampled;
/// the first verified-absent candidate becomes the NOT-FOUND twin of `found`.
/// Exhausting `max_resamples` or the candidate pool yields `Rejected`.
pub fn rewrite_and_verify(
    scene: &SceneGraph,
    found: &Episode,
    rewriter: &dyn Rewriter,
    verifier: &dyn Verifier,
    max_resamples: usize,
    blacklist: &mut Blacklist,
) -> Result<RewriteOutcome, ClientError> {
    let avoid: BTreeSet<String> = scene
        .objects()
        .iter()
        .filter(|o| o.room_id == found.target_room_id)
        .map(|o| o.category.clone())
        .collect();
    let instance = base_id_of(&found.id);
    for _ in 0..max_resamples.max(1) {
        let rejected = blacklist.rejected(&instance);
        let Some(candidate) =
            propose_substitute(rewriter, &found.instruction_text, &avoid, &rejected)?
        else {
            return Ok(RewriteOutcome::Rejected);
        };
        match verify_absence(verifier, scene, &found.target_room_id, &candidate)? {
            Verdict::Present => blacklist.record(&instance, candidate),
            Verdict::Absent => {
                let mut nf = found.clone();
                nf.id = format!("{instance}:nf");
                nf.feasible = false;
                nf.target_object_category = candidate;
                nf.instruction_text = found
                    .instruction_text
                    .replace(&found.target_object_category, &nf.target_object_category);
                return Ok(RewriteOutcome::NotFound(Box::new(nf)));
            }
        }
    }
    Ok(RewriteOutcome::Rejected)
}

fn base_id_of(episode_id: &str) -> String {
    episode_id
        .strip_suffix(":found")
        .or_else(|| episode_id.strip_suffix(":nf"))
        .unwrap_or(episode_id)
        .to_owned()
}

/// Quality-control signals gathered while processing one instance.
#[derive(Clone, Copy, Debug)]
pub struct InstanceSignals {
    pub target_defined: bool,
    pub rewrite_rejected: bool,
    pub reference_coverage: f64,
    pub reference_explore_length: f64,
}

/// Drop reasons, in the order the filter applies them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DropReason {
    /// Target room or object undefined/empty.
    TargetUndefined,
    /// No absent-but-plausible substitute could be produced.
    RewriteRejected,
    /// Reference coverage below the minimum (or degenerate zero-length
    /// exploration).
    LowCoverage,
}

impl DropReason {
    /// Short code used in drop logs.
    pub fn code(self) -> &'static str {
        match self {
            DropReason::TargetUndefined => "i",
            DropReason::RewriteRejected => "ii",
            DropReason::LowCoverage => "iii",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FilterDecision {
    Retain,
    Drop(DropReason),
}

/// Applies the three QC criteria in order. The coverage comparison is
/// inclusive: exactly meeting the threshold retains the instance.
pub fn filter_instance(signals: &InstanceSignals, min_reference_coverage: f64) -> FilterDecision {
    if !signals.target_defined {
        return FilterDecision::Drop(DropReason::TargetUndefined);
    }
    if signals.rewrite_rejected {
        return FilterDecision::Drop(DropReason::RewriteRejected);
    }
    if signals.reference_coverage < min_reference_coverage
        || signals.reference_explore_length <= 0.0
    {
        return FilterDecision::Drop(DropReason::LowCoverage);
    }
    FilterDecision::Retain
}

/// Dataset-construction parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub seed: u64,
    pub coverage_threshold: f64,
    pub max_resamples: usize,
    pub tsp_cap: usize,
    /// Seed the greedy-coverage walk with the entry viewpoint's objects.
    pub include_entry_objects: bool,
    /// Fraction of each training scan's pairs held out as val_seen.
    pub val_seen_fraction: f64,
    /// Fraction of scans held out entirely as val_unseen.
    pub unseen_scan_fraction: f64,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            coverage_threshold: 0.85,
            max_resamples: 10,
            tsp_cap: 15,
            include_entry_objects: true,
            val_seen_fraction: 0.2,
            unseen_scan_fraction: 0.25,
        }
    }
}

/// One dropped instance and why.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DroppedInstance {
    pub base_id: String,
    pub reason: DropReason,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BuildOutput {
    pub splits: Vec<DatasetSplit>,
    pub dropped: Vec<DroppedInstance>,
}

impl BuildOutput {
    pub fn pairs(&self) -> impl Iterator<Item = &PairedInstance> {
        self.splits.iter().flat_map(|s| s.pairs.iter())
    }

    pub fn episodes(&self) -> impl Iterator<Item = &Episode> {
        self.splits.iter().flat_map(|s| s.episodes())
    }
}

/// Runs the full pipeline over base instances: QC filtering, reference-path
/// construction, rewrite-and-verify pairing, and split assignment.
pub fn build_dataset(
    scenes: &BTreeMap<String, SceneGraph>,
    bases: &[BaseInstance],
    config: &BuildConfig,
    rewriter: &dyn Rewriter,
    verifier: &dyn Verifier,
) -> Result<BuildOutput, BuildError> {
    if scenes.is_empty() {
        return Err(BuildError::EmptyInput("scene set"));
    }
    if bases.is_empty() {
        return Err(BuildError::EmptyInput("base instance list"));
    }
    let ref_cfg = RefPathConfig {
        tsp_cap: config.tsp_cap,
        include_entry_objects: config.include_entry_objects,
        discard_below: config.coverage_threshold,
    };
    let extractor = KeywordLandmarkExtractor;

    let mut ordered: Vec<&BaseInstance> = bases.iter().collect();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));

    let mut pairs: Vec<PairedInstance> = Vec::new();
    let mut dropped: Vec<DroppedInstance> = Vec::new();
    let mut blacklist = Blacklist::default();
    for base in ordered {
        let scene = scenes
            .get(&base.scan_id)
            .ok_or_else(|| BuildError::UnknownScan(base.scan_id.clone()))?;
        if !target_defined(scene, base) {
            dropped.push(DroppedInstance {
                base_id: base.id.clone(),
                reason: DropReason::TargetUndefined,
            });
            continue;
        }
        check_gt_path(scene, base)?;

        let protocol = select_protocol(
            Some(base.instruction.landmark_cued),
            &base.instruction.text,
            &extractor,
        );
        let outcome = build_reference_paths(
            scene,
            &base.gt_path,
            &base.target_object_id,
            protocol,
            &ref_cfg,
        )
        .map_err(|source| BuildError::RefPath {
            base: base.id.clone(),
            source,
        })?;
        let paths = match outcome {
            ReferenceOutcome::Discard { .. } => {
                dropped.push(DroppedInstance {
                    base_id: base.id.clone(),
                    reason: DropReason::LowCoverage,
                });
                continue;
            }
            ReferenceOutcome::Paths(p) => p,
        };
        if paths.explore_length <= 0.0 || paths.coverage < config.coverage_threshold {
            dropped.push(DroppedInstance {
                base_id: base.id.clone(),
                reason: DropReason::LowCoverage,
            });
            continue;
        }

        let found = Episode {
            id: format!("{}:found", base.id),
            scan_id: base.scan_id.clone(),
            start_viewpoint: base.start_viewpoint.clone(),
            target_room_id: base.instruction.target_room_id.clone(),
            feasible: true,
            target_object_category: base.instruction.target_object_category.clone(),
            original_target_category: base.instruction.target_object_category.clone(),
            original_target_object: base.target_object_id.clone(),
            instruction_text: base.instruction.text.clone(),
            landmark_cued: base.instruction.landmark_cued,
            gt_path: base.gt_path.clone(),
            reference_reach_path: paths.reach.clone(),
            reference_explore_path: paths.explore.clone(),
            reference_reach_length: paths.reach_length,
            reference_explore_length: paths.explore_length,
            reference_coverage: paths.coverage,
            protocol: paths.protocol,
        };
        match rewrite_and_verify(
            scene,
            &found,
            rewriter,
            verifier,
            config.max_resamples,
            &mut blacklist,
        )? {
            RewriteOutcome::Rejected => {
                dropped.push(DroppedInstance {
                    base_id: base.id.clone(),
                    reason: DropReason::RewriteRejected,
                });
            }
            RewriteOutcome::NotFound(nf) => {
                pairs.push(PairedInstance::new(found, *nf)?);
            }
        }
    }

    let splits = assign_splits(pairs, config);
    validate_splits(&splits)?;
    Ok(BuildOutput { splits, dropped })
}

fn target_defined(scene: &SceneGraph, base: &BaseInstance) -> bool {
    let instruction = &base.instruction;
    if instruction.target_object_category.is_empty() {
        return false;
    }
    if !scene.contains_room(&instruction.target_room_id) {
        return false;
    }
    let room_objects = match scene.objects_in_room(&instruction.target_room_id) {
        Ok(objs) => objs,
        Err(_) => return false,
    };
    if room_objects.is_empty() {
        return false;
    }
    match scene.object(&base.target_object_id) {
        Ok(obj) => {
            obj.room_id == instruction.target_room_id
                && obj.category == instruction.target_object_category
        }
        Err(_) => false,
    }
}

fn check_gt_path(scene: &SceneGraph, base: &BaseInstance) -> Result<(), BuildError> {
    let bad = |msg: String| BuildError::BadBase {
        base: base.id.clone(),
        msg,
    };
    let first = base
        .gt_path
        .first()
        .ok_or_else(|| bad("empty ground-truth path".into()))?;
    if *first != base.start_viewpoint {
        return Err(bad(format!(
            "ground-truth path starts at `{first}`, not the start viewpoint"
        )));
    }
    for pair in base.gt_path.windows(2) {
        if !scene.is_edge(&pair[0], &pair[1]) {
            return Err(bad(format!(
                "ground-truth path step `{}` -> `{}` is not an edge",
                pair[0], pair[1]
            )));
        }
    }
    let last = base.gt_path.last().expect("non-empty");
    let last_room = &scene.viewpoint(last).map_err(BuildError::Scene)?.room_id;
    if *last_room != base.instruction.target_room_id {
        return Err(bad("ground-truth path does not end in the target room".into()));
    }
    Ok(())
}

fn assign_splits(pairs: Vec<PairedInstance>, config: &BuildConfig) -> Vec<DatasetSplit> {
    let scans: Vec<String> = pairs
        .iter()
        .map(|p| p.found.scan_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let n_unseen = if scans.len() >= 2 {
        ((scans.len() as f64 * config.unseen_scan_fraction).round() as usize)
            .clamp(1, scans.len() - 1)
    } else {
        0
    };
    let unseen_scans: BTreeSet<&String> = scans.iter().rev().take(n_unseen).collect();

    let mut train = Vec::new();
    let mut val_seen = Vec::new();
    let mut val_unseen = Vec::new();
    for pair in pairs {
        if unseen_scans.contains(&pair.found.scan_id) {
            val_unseen.push(pair);
            continue;
        }
        use rand::Rng;
        let mut rng = rng_for(config.seed, &["split", &pair.found.id]);
        if rng.gen_range(0.0..1.0) < config.val_seen_fraction {
            val_seen.push(pair);
        } else {
            train.push(pair);
        }
    }
    // val_seen scans must remain a subset of train scans: if sampling drained
    // a scan out of train entirely, pull its first val_seen pair back.
    loop {
        let train_scans: BTreeSet<&str> = train.iter().map(|p| p.found.scan_id.as_str()).collect();
        let Some(pos) = val_seen
            .iter()
            .position(|p| !train_scans.contains(p.found.scan_id.as_str()))
        else {
            break;
        };
        train.push(val_seen.remove(pos));
    }
    for split in [&mut train, &mut val_seen, &mut val_unseen] {
        split.sort_by(|a, b| a.found.id.cmp(&b.found.id));
    }
    vec![
        DatasetSplit {
            name: SplitName::Train,
            pairs: train,
        },
        DatasetSplit {
            name: SplitName::ValSeen,
            pairs: val_seen,
        },
        DatasetSplit {
            name: SplitName::ValUnseen,
            pairs: val_unseen,
        },
    ]
}

/// Enforces the split scan constraints: val_seen ⊆ train, val_unseen ∩ train
/// = ∅.
pub fn validate_splits(splits: &[DatasetSplit]) -> Result<(), BuildError> {
    let scans_of = |name: SplitName| -> BTreeSet<&str> {
        splits
            .iter()
            .filter(|s| s.name == name)
            .flat_map(|s| s.scans())
            .collect()
    };
    let train = scans_of(SplitName::Train);
    let val_seen = scans_of(SplitName::ValSeen);
    let val_unseen = scans_of(SplitName::ValUnseen);
    if !val_seen.is_subset(&train) {
        return Err(BuildError::SplitConstraint(
            "val_seen contains scans absent from train".into(),
        ));
    }
    if !val_unseen.is_disjoint(&train) {
        return Err(BuildError::SplitConstraint(
            "val_unseen shares scans with train".into(),
        ));
    }
    Ok(())
}

/// True when an NF episode's substitute category actually exists in its
/// target room — a pipeline leak.
pub fn nf_episode_leaks(scene: &SceneGraph, episode: &Episode) -> bool {
    !episode.feasible
        && scene.objects().iter().any(|o| {
            o.room_id == episode.target_room_id && o.category == episode.target_object_category
        })
}

const VERBS: &[&str] = &["find", "check", "inspect", "look at"];

/// Samples feasible base instances from a scene: a target object, a start
/// viewpoint (outside the target room when possible), a shortest annotated
/// path to a viewpoint that sees the target, and a templated instruction.
pub fn sample_base_instances(
    scene: &SceneGraph,
    n: usize,
    seed: u64,
) -> Result<Vec<BaseInstance>, BuildError> {
    use rand::Rng;
    if scene.objects().is_empty() {
        return Err(BuildError::EmptyInput("scene object list"));
    }
    let mut rng = rng_for(seed, &["bases", scene.scan_id()]);
    let mut bases = Vec::with_capacity(n);
    for i in 0..n {
        let object = &scene.objects()[rng.gen_range(0..scene.objects().len())];
        let room = object.room_id.clone();
        let out_of_room: Vec<&ViewpointId> = scene
            .viewpoints()
            .iter()
            .map(|v| &v.id)
            .filter(|v| scene.viewpoint(v).expect("own id").room_id != room)
            .collect();
        let start = if out_of_room.is_empty() {
            scene.viewpoints()[rng.gen_range(0..scene.viewpoints().len())]
                .id
                .clone()
        } else {
            out_of_room[rng.gen_range(0..out_of_room.len())].clone()
        };

        let witnesses: Vec<ViewpointId> = scene
            .visible_from(&object.id)?
            .intersection(scene.viewpoints_in_room(&room)?)
            .cloned()
            .collect();
        let mut best: Option<(f64, crate::scene::Path)> = None;
        for w in &witnesses {
            let Some(path) = scene.shortest_path(&start, w)? else {
                continue;
            };
            if best
                .as_ref()
                .map(|(len, _)| path.length < *len)
                .unwrap_or(true)
            {
                best = Some((path.length, path));
            }
        }
        let Some((_, gt)) = best else {
            return Err(BuildError::BadBase {
                base: format!("{}-b{i:04}", scene.scan_id()),
                msg: format!("no witness of `{}` reachable from `{start}`", object.id),
            });
        };

        let room_label = &scene.rooms()[&room];
        let verb = VERBS[rng.gen_range(0..VERBS.len())];
        let other_categories: Vec<&str> = scene
            .objects()
            .iter()
            .filter(|o| o.room_id == room && o.id != object.id && o.category != object.category)
            .map(|o| o.category.as_str())
            .collect();
        let landmark_cued = !other_categories.is_empty() && rng.gen_range(0.0..1.0) < 0.5;
        let text = if landmark_cued {
            let landmark = other_categories[rng.gen_range(0..other_categories.len())];
            format!(
                "go to the {room_label} and {verb} the {} near the {landmark}",
                object.category
            )
        } else {
            format!("go to the {room_label} and {verb} the {}", object.category)
        };
        bases.push(BaseInstance {
            id: format!("{}-b{i:04}", scene.scan_id()),
            scan_id: scene.scan_id().to_owned(),
            start_viewpoint: start,
            instruction: Instruction {
                text,
                target_object_category: object.category.clone(),
                target_room_id: room,
                landmark_cued,
            },
            target_object_id: object.id.clone(),
            gt_path: gt.viewpoints,
        });
    }
    Ok(bases)
}

/// Table-1-style counts for one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub name: SplitName,
    pub n_scans: usize,
    pub n_pairs: usize,
    pub n_instructions: usize,
    pub n_found: usize,
    pub n_nf: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub splits: Vec<SplitStats>,
    /// NF substitute categories by frequency, descending (ties by name).
    pub nf_target_frequency: Vec<(String, usize)>,
}

pub fn dataset_stats(splits: &[DatasetSplit]) -> DatasetStats {
    let mut nf_freq: BTreeMap<String, usize> = BTreeMap::new();
    let per_split = splits
        .iter()
        .map(|split| {
            for pair in &split.pairs {
                *nf_freq
                    .entry(pair.nf.target_object_category.clone())
                    .or_default() += 1;
            }
            SplitStats {
                name: split.name,
                n_scans: split.scans().len(),
                n_pairs: split.pairs.len(),
                n_instructions: 2 * split.pairs.len(),
                n_found: split.pairs.len(),
                n_nf: split.pairs.len(),
            }
        })
        .collect();
    let mut nf_target_frequency: Vec<(String, usize)> = nf_freq.into_iter().collect();
    nf_target_frequency.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    DatasetStats {
        splits: per_split,
        nf_target_frequency,
    }
}

/// Distribution-shift statistics between two episode sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub word_jaccard_top50: f64,
    pub word_spearman_top50: f64,
    pub word_js: f64,
    pub object_spearman: f64,
    pub object_cosine: f64,
    pub object_js: f64,
    pub object_tv: f64,
    /// Set when either side has fewer than 50 distinct tokens; the top-50
    /// statistics then cover all available tokens.
    pub truncated_top50: bool,
}

#[derive(Debug, Error, PartialEq)]
pub enum ShiftError {
    #[error("{0} dataset is empty")]
    EmptyDataset(&'static str),
}

const TOP_K_TOKENS: usize = 50;

/// Compares instruction-token and target-category distributions of two
/// datasets: Jaccard and Spearman over top-50 tokens, Jensen-Shannon (base
/// 2) over full token distributions, and Spearman/cosine/JS/total-variation
/// over target-category frequencies.
pub fn distribution_shift(a: &[Episode], b: &[Episode]) -> Result<ShiftReport, ShiftError> {
    if a.is_empty() {
        return Err(ShiftError::EmptyDataset("first"));
    }
    if b.is_empty() {
        return Err(ShiftError::EmptyDataset("second"));
    }
    let words_a = word_counts(a);
    let words_b = word_counts(b);
    let top_a = top_tokens(&words_a, TOP_K_TOKENS);
    let top_b = top_tokens(&words_b, TOP_K_TOKENS);
    let truncated = words_a.len() < TOP_K_TOKENS || words_b.len() < TOP_K_TOKENS;

    let set_a: BTreeSet<&String> = top_a.iter().collect();
    let set_b: BTreeSet<&String> = top_b.iter().collect();
    let intersection = set_a.intersection(&set_b).count();
    let union = set_a.union(&set_b).count();
    let word_jaccard_top50 = if union == 0 {
        1.0
    } else {
        intersection as f64 / union as f64
    };

    let top_union: Vec<&String> = set_a.union(&set_b).cloned().collect();
    let word_spearman_top50 = spearman_over(&top_union, &words_a, &words_b);

    let objects_a = category_counts(a);
    let objects_b = category_counts(b);
    let object_union: Vec<&String> = objects_a
        .keys()
        .chain(objects_b.keys())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    Ok(ShiftReport {
        word_jaccard_top50,
        word_spearman_top50,
        word_js: js_divergence(&words_a, &words_b),
        object_spearman: spearman_over(&object_union, &objects_a, &objects_b),
        object_cosine: cosine(&object_union, &objects_a, &objects_b),
        object_js: js_divergence(&objects_a, &objects_b),
        object_tv: total_variation(&objects_a, &objects_b),
        truncated_top50: truncated,
    })
}

fn word_counts(episodes: &[Episode]) -> BTreeMap<String, u64> {
    let mut counts = BTreeMap::new();
    for ep in episodes {
        for token in ep.instruction_text.to_lowercase().split_whitespace() {
            *counts.entry(token.to_owned()).or_default() += 1;
        }
    }
    counts
}

fn category_counts(episodes: &[Episode]) -> BTreeMap<String, u64> {
    let mut counts = BTreeMap::new();
    for ep in episodes {
        *counts.entry(ep.target_object_category.clone()).or_default() += 1;
    }
    counts
}

fn top_tokens(counts: &BTreeMap<String, u64>, k: usize) -> Vec<String> {
    let mut items: Vec<(&String, &u64)> = counts.iter().collect();
    items.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
    items.into_iter().take(k).map(|(t, _)| t.clone()).collect()
}

/// Average ranks (descending by count, ties averaged) of `items` under
/// `counts`; absent items count 0.
fn average_ranks(items: &[&String], counts: &BTreeMap<String, u64>) -> Vec<f64> {
    let values: Vec<u64> = items
        .iter()
        .map(|t| counts.get(*t).copied().unwrap_or(0))
        .collect();
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&i, &j| values[j].cmp(&values[i]));
    let mut ranks = vec![0.0; items.len()];
    let mut pos = 0;
    while pos < order.len() {
        let mut end = pos;
        while end + 1 < order.len() && values[order[end + 1]] == values[order[pos]] {
            end += 1;
        }
        // Ranks are 1-based; a run of equals shares the mean rank.
        let mean_rank = (pos + 1 + end + 1) as f64 / 2.0;
        for &idx in &order[pos..=end] {
            ranks[idx] = mean_rank;
        }
        pos = end + 1;
    }
    ranks
}

/// Spearman correlation of the rank vectors of `items` under the two count
/// maps. Identical rank vectors give 1.0 even when degenerate (all tied);
/// otherwise a zero-variance side yields 0.0.
fn spearman_over(
    items: &[&String],
    counts_a: &BTreeMap<String, u64>,
    counts_b: &BTreeMap<String, u64>,
) -> f64 {
    if items.is_empty() {
        return 1.0;
    }
    let ranks_a = average_ranks(items, counts_a);
    let ranks_b = average_ranks(items, counts_b);
    if ranks_a == ranks_b {
        return 1.0;
    }
    let n = items.len() as f64;
    let mean_a = ranks_a.iter().sum::<f64>() / n;
    let mean_b = ranks_b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (ra, rb) in ranks_a.iter().zip(&ranks_b) {
        cov += (ra - mean_a) * (rb - mean_b);
        var_a += (ra - mean_a).powi(2);
        var_b += (rb - mean_b).powi(2);
    }
    if var_a == 0.0 || var_b == 0.0 {
        return 0.0;
    }
    cov / (var_a.sqrt() * var_b.sqrt())
}

fn normalized(counts: &BTreeMap<String, u64>) -> BTreeMap<&String, f64> {
    let total: u64 = counts.values().sum();
    counts
        .iter()
        .map(|(t, &c)| (t, c as f64 / total as f64))
        .collect()
}

/// Jensen-Shannon divergence, base-2 logarithm.
fn js_divergence(counts_a: &BTreeMap<String, u64>, counts_b: &BTreeMap<String, u64>) -> f64 {
    let p = normalized(counts_a);
    let q = normalized(counts_b);
    let support: BTreeSet<&String> = p.keys().chain(q.keys()).cloned().collect();
    let mut js = 0.0;
    for t in support {
        let pi = p.get(t).copied().unwrap_or(0.0);
        let qi = q.get(t).copied().unwrap_or(0.0);
        let mi = 0.5 * (pi + qi);
        if pi > 0.0 {
            js += 0.5 * pi * (pi / mi).log2();
        }
        if qi > 0.0 {
            js += 0.5 * qi * (qi / mi).log2();
        }
    }
    js.max(0.0)
}

fn cosine(
    items: &[&String],
    counts_a: &BTreeMap<String, u64>,
    counts_b: &BTreeMap<String, u64>,
) -> f64 {
    let mut dot = 0.0;
    let mut norm_a = 0.0;
    let mut norm_b = 0.0;
    for t in items {
        let a = counts_a.get(*t).copied().unwrap_or(0) as f64;
        let b = counts_b.get(*t).copied().unwrap_or(0) as f64;
        dot += a * b;
        norm_a += a * a;
        norm_b += b * b;
    }
    if norm_a == 0.0 || norm_b == 0.0 {
        return 0.0;
    }
    dot / (norm_a.sqrt() * norm_b.sqrt())
}

/// Half the L1 distance between the normalized frequency vectors.
fn total_variation(counts_a: &BTreeMap<String, u64>, counts_b: &BTreeMap<String, u64>) -> f64 {
    let p = normalized(counts_a);
    let q = normalized(counts_b);
    let support: BTreeSet<&String> = p.keys().chain(q.keys()).cloned().collect();
    0.5 * support
        .into_iter()
        .map(|t| {
            (p.get(t).copied().unwrap_or(0.0) - q.get(t).copied().unwrap_or(0.0)).abs()
        })
        .sum::<f64>()
}
