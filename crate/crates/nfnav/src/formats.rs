//! Versioned on-disk formats: scene and grid files, the episode dataset
//! (JSONL with a header line), the pairing map, trajectory logs, results,
//! and the optional CLI config file. Every document carries a
//! `"format": "<name>/<major>.<minor>"` tag; readers accept any minor
//! revision of a known major and reject everything else.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::episodes::{DatasetSplit, Episode, PairedInstance, SplitName};
use crate::metrics::MetricReport;
use crate::policies::PolicySpec;
use crate::runner::{EpisodeResult, Trajectory};
use crate::scene::{Edge, ObjectInstance, Position, RoomId, SceneGraph, Viewpoint, ViewpointId};
use crate::synth::{Cell, GridError, OccupancyGrid};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{}: {source}", path.display())]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed format tag `{0}`")]
    BadTag(String),
    #[error("expected a `{expected}` document, found `{found}`")]
    WrongKind { expected: &'static str, found: String },
    #[error("unsupported major version in `{found}`; this reader handles {expected}/{major}.x")]
    UnsupportedMajor {
        expected: &'static str,
        major: u32,
        found: String,
    },
    #[error("file is empty; expected a header line")]
    MissingHeader,
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("grid row {row} has {got} cells, expected {expected}")]
    BadGridRow {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("unknown cell code `{0}`")]
    BadCellCode(char),
    #[error("pairing references unknown episode `{0}`")]
    DanglingPair(String),
}

fn read_text(path: &Path) -> Result<String, FormatError> {
    fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.to_owned(),
        source,
    })
}

fn write_text(path: &Path, text: String) -> Result<(), FormatError> {
    fs::write(path, text).map_err(|source| FormatError::Io {
        path: path.to_owned(),
        source,
    })
}

/// A parsed `<name>/<major>.<minor>` tag.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FormatTag {
    pub name: String,
    pub major: u32,
    pub minor: u32,
}

impl FormatTag {
    pub fn parse(s: &str) -> Result<Self, FormatError> {
        let bad = || FormatError::BadTag(s.to_owned());
        let (name, version) = s.split_once('/').ok_or_else(bad)?;
        let (major, minor) = version.split_once('.').ok_or_else(bad)?;
        if name.is_empty() {
            return Err(bad());
        }
        Ok(Self {
            name: name.to_owned(),
            major: major.parse().map_err(|_| bad())?,
            minor: minor.parse().map_err(|_| bad())?,
        })
    }
}

fn check_tag(tag: &str, expected: &'static str, major: u32) -> Result<(), FormatError> {
    let parsed = FormatTag::parse(tag)?;
    if parsed.name != expected {
        return Err(FormatError::WrongKind {
            expected,
            found: tag.to_owned(),
        });
    }
    if parsed.major != major {
        return Err(FormatError::UnsupportedMajor {
            expected,
            major,
            found: tag.to_owned(),
        });
    }
    Ok(())
}

fn tag(name: &str) -> String {
    format!("{name}/1.0")
}

// --- scene files -----------------------------------------------------------

pub const SCENE_FORMAT: &str = "scene";
pub const SCENE_MAJOR: u32 = 1;

#[derive(Serialize, Deserialize)]
struct RoomRecord {
    id: RoomId,
    label: String,
}

#[derive(Serialize, Deserialize)]
struct VisibilityRecord {
    viewpoint_id: ViewpointId,
    object_ids: Vec<crate::scene::ObjectId>,
}

#[derive(Serialize, Deserialize)]
struct SceneFile {
    format: String,
    scan_id: String,
    viewpoints: Vec<Viewpoint>,
    edges: Vec<Edge>,
    rooms: Vec<RoomRecord>,
    objects: Vec<ObjectInstance>,
    visibility: Vec<VisibilityRecord>,
}

pub fn scene_to_string(scene: &SceneGraph) -> String {
    let file = SceneFile {
        format: tag(SCENE_FORMAT),
        scan_id: scene.scan_id().to_owned(),
        viewpoints: scene.viewpoints().to_vec(),
        edges: scene.edges().to_vec(),
        rooms: scene
            .rooms()
            .iter()
            .map(|(id, label)| RoomRecord {
                id: id.clone(),
                label: label.clone(),
            })
            .collect(),
        objects: scene.objects().to_vec(),
        visibility: scene
            .visibility()
            .iter()
            .map(|(v, objs)| VisibilityRecord {
                viewpoint_id: v.clone(),
                object_ids: objs.iter().cloned().collect(),
            })
            .collect(),
    };
    let mut out = serde_json::to_string_pretty(&file).expect("serializable");
    out.push('\n');
    out
}

pub fn parse_scene(text: &str) -> Result<SceneGraph, FormatError> {
    let file: SceneFile = serde_json::from_str(text)?;
    check_tag(&file.format, SCENE_FORMAT, SCENE_MAJOR)?;
    Ok(SceneGraph::new(
        file.scan_id,
        file.viewpoints,
        file.edges,
        file.rooms.into_iter().map(|r| (r.id, r.label)).collect(),
        file.objects,
        file.visibility
            .into_iter()
            .map(|r| (r.viewpoint_id, r.object_ids.into_iter().collect()))
            .collect(),
    ))
}

pub fn write_scene(path: &Path, scene: &SceneGraph) -> Result<(), FormatError> {
    write_text(path, scene_to_string(scene))
}

pub fn read_scene(path: &Path) -> Result<SceneGraph, FormatError> {
    parse_scene(&read_text(path)?)
}

// --- grid files --------------------------------------------------------------

pub const GRID_FORMAT: &str = "grid";
pub const GRID_MAJOR: u32 = 1;

#[derive(Serialize, Deserialize)]
struct GridRecord {
    room_id: RoomId,
    origin: Position,
    cell_size: f64,
    width: usize,
    height: usize,
    /// Row-major cell codes, one string per row, bottom row first.
    rows: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct GridFile {
    format: String,
    scan_id: String,
    grids: Vec<GridRecord>,
}

pub fn grids_to_string(scan_id: &str, grids: &BTreeMap<RoomId, OccupancyGrid>) -> String {
    let file = GridFile {
        format: tag(GRID_FORMAT),
        scan_id: scan_id.to_owned(),
        grids: grids
            .iter()
            .map(|(room, g)| GridRecord {
                room_id: room.clone(),
                origin: g.origin,
                cell_size: g.cell_size,
                width: g.width,
                height: g.height,
                rows: (0..g.height)
                    .map(|iy| {
                        (0..g.width)
                            .map(|ix| g.cell(ix as i64, iy as i64).expect("in bounds").code())
                            .collect()
                    })
                    .collect(),
            })
            .collect(),
    };
    let mut out = serde_json::to_string_pretty(&file).expect("serializable");
    out.push('\n');
    out
}

pub fn parse_grids(
    text: &str,
) -> Result<(String, BTreeMap<RoomId, OccupancyGrid>), FormatError> {
    let file: GridFile = serde_json::from_str(text)?;
    check_tag(&file.format, GRID_FORMAT, GRID_MAJOR)?;
    let mut grids = BTreeMap::new();
    for record in file.grids {
        // Cells are collected row by row and validated against the declared
        // dimensions afterwards, so a hostile header cannot force a huge
        // allocation.
        let mut cells = Vec::new();
        for (iy, row) in record.rows.iter().enumerate() {
            let mut n = 0usize;
            for code in row.chars() {
                cells.push(Cell::from_code(code).ok_or(FormatError::BadCellCode(code))?);
                n += 1;
            }
            if n != record.width {
                return Err(FormatError::BadGridRow {
                    row: iy,
                    expected: record.width,
                    got: n,
                });
            }
        }
        if record.rows.len() != record.height {
            return Err(FormatError::BadGridRow {
                row: record.rows.len(),
                expected: record.height,
                got: 0,
            });
        }
        let grid = OccupancyGrid::new(
            record.origin,
            record.cell_size,
            record.width,
            record.height,
            cells,
        )?;
        grids.insert(record.room_id, grid);
    }
    Ok((file.scan_id, grids))
}

pub fn write_grids(
    path: &Path,
    scan_id: &str,
    grids: &BTreeMap<RoomId, OccupancyGrid>,
) -> Result<(), FormatError> {
    write_text(path, grids_to_string(scan_id, grids))
}

pub fn read_grids(path: &Path) -> Result<(String, BTreeMap<RoomId, OccupancyGrid>), FormatError> {
    parse_grids(&read_text(path)?)
}

// --- dataset files (JSONL) ---------------------------------------------------

pub const DATASET_FORMAT: &str = "dataset";
pub const DATASET_MAJOR: u32 = 1;

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    format: String,
    n_episodes: usize,
}

/// One dataset line: an episode and the split it belongs to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub split: SplitName,
    #[serde(flatten)]
    pub episode: Episode,
}

pub fn dataset_to_string(splits: &[DatasetSplit]) -> String {
    let records: Vec<DatasetRecord> = splits
        .iter()
        .flat_map(|s| {
            s.episodes().map(|e| DatasetRecord {
                split: s.name,
                episode: e.clone(),
            })
        })
        .collect();
    let header = DatasetHeader {
        format: tag(DATASET_FORMAT),
        n_episodes: records.len(),
    };
    let mut out = serde_json::to_string(&header).expect("serializable");
    out.push('\n');
    for record in records {
        out.push_str(&serde_json::to_string(&record).expect("serializable"));
        out.push('\n');
    }
    out
}

pub fn parse_dataset(text: &str) -> Result<Vec<DatasetRecord>, FormatError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header_line = lines.next().ok_or(FormatError::MissingHeader)?;
    let header: DatasetHeader = serde_json::from_str(header_line)?;
    check_tag(&header.format, DATASET_FORMAT, DATASET_MAJOR)?;
    let mut records = Vec::new();
    for line in lines {
        records.push(serde_json::from_str::<DatasetRecord>(line)?);
    }
    Ok(records)
}

pub fn write_dataset(path: &Path, splits: &[DatasetSplit]) -> Result<(), FormatError> {
    write_text(path, dataset_to_string(splits))
}

pub fn read_dataset(path: &Path) -> Result<Vec<DatasetRecord>, FormatError> {
    parse_dataset(&read_text(path)?)
}

/// Regroups flat dataset records and a pairing map into split datasets.
pub fn assemble_splits(
    records: &[DatasetRecord],
    pairs: &[(String, String)],
) -> Result<Vec<DatasetSplit>, FormatError> {
    let by_id: BTreeMap<&str, &DatasetRecord> = records
        .iter()
        .map(|r| (r.episode.id.as_str(), r))
        .collect();
    let mut grouped: BTreeMap<SplitName, Vec<PairedInstance>> = BTreeMap::new();
    for (found_id, nf_id) in pairs {
        let found = by_id
            .get(found_id.as_str())
            .ok_or_else(|| FormatError::DanglingPair(found_id.clone()))?;
        let nf = by_id
            .get(nf_id.as_str())
            .ok_or_else(|| FormatError::DanglingPair(nf_id.clone()))?;
        let pair = PairedInstance::new(found.episode.clone(), nf.episode.clone())
            .map_err(|e| FormatError::DanglingPair(e.to_string()))?;
        grouped.entry(found.split).or_default().push(pair);
    }
    Ok([SplitName::Train, SplitName::ValSeen, SplitName::ValUnseen]
        .into_iter()
        .map(|name| DatasetSplit {
            name,
            pairs: grouped.remove(&name).unwrap_or_default(),
        })
        .collect())
}

// --- pairing files -----------------------------------------------------------

pub const PAIRING_FORMAT: &str = "pairing";
pub const PAIRING_MAJOR: u32 = 1;

#[derive(Serialize, Deserialize)]
struct PairingFile {
    format: String,
    pairs: Vec<PairRecord>,
}

#[derive(Serialize, Deserialize)]
struct PairRecord {
    found: String,
    nf: String,
}

pub fn pairing_to_string(splits: &[DatasetSplit]) -> String {
    let file = PairingFile {
        format: tag(PAIRING_FORMAT),
        pairs: splits
            .iter()
            .flat_map(|s| &s.pairs)
            .map(|p| PairRecord {
                found: p.found.id.clone(),
                nf: p.nf.id.clone(),
            })
            .collect(),
    };
    let mut out = serde_json::to_string_pretty(&file).expect("serializable");
    out.push('\n');
    out
}

pub fn parse_pairing(text: &str) -> Result<Vec<(String, String)>, FormatError> {
    let file: PairingFile = serde_json::from_str(text)?;
    check_tag(&file.format, PAIRING_FORMAT, PAIRING_MAJOR)?;
    Ok(file.pairs.into_iter().map(|p| (p.found, p.nf)).collect())
}

pub fn write_pairing(path: &Path, splits: &[DatasetSplit]) -> Result<(), FormatError> {
    write_text(path, pairing_to_string(splits))
}

pub fn read_pairing(path: &Path) -> Result<Vec<(String, String)>, FormatError> {
    parse_pairing(&read_text(path)?)
}

// --- trajectory logs (JSONL) --------------------------------------------------

pub const TRAJECTORY_FORMAT: &str = "trajectories";
pub const TRAJECTORY_MAJOR: u32 = 1;

/// Provenance header for a trajectory log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryHeader {
    format: String,
    pub policy: PolicySpec,
    pub seed: u64,
    pub budget: usize,
    pub free: bool,
}

impl TrajectoryHeader {
    pub fn new(policy: PolicySpec, seed: u64, budget: usize, free: bool) -> Self {
        Self {
            format: tag(TRAJECTORY_FORMAT),
            policy,
            seed,
            budget,
            free,
        }
    }
}

pub fn trajectories_to_string(header: &TrajectoryHeader, trajectories: &[Trajectory]) -> String {
    let mut out = serde_json::to_string(header).expect("serializable");
    out.push('\n');
    for t in trajectories {
        out.push_str(&serde_json::to_string(t).expect("serializable"));
        out.push('\n');
    }
    out
}

pub fn parse_trajectories(
    text: &str,
) -> Result<(TrajectoryHeader, Vec<Trajectory>), FormatError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header_line = lines.next().ok_or(FormatError::MissingHeader)?;
    let header: TrajectoryHeader = serde_json::from_str(header_line)?;
    check_tag(&header.format, TRAJECTORY_FORMAT, TRAJECTORY_MAJOR)?;
    let mut trajectories = Vec::new();
    for line in lines {
        trajectories.push(serde_json::from_str::<Trajectory>(line)?);
    }
    Ok((header, trajectories))
}

pub fn write_trajectories(
    path: &Path,
    header: &TrajectoryHeader,
    trajectories: &[Trajectory],
) -> Result<(), FormatError> {
    write_text(path, trajectories_to_string(header, trajectories))
}

pub fn read_trajectories(path: &Path) -> Result<(TrajectoryHeader, Vec<Trajectory>), FormatError> {
    parse_trajectories(&read_text(path)?)
}

// --- results files -------------------------------------------------------------

pub const RESULTS_FORMAT: &str = "results";
pub const RESULTS_MAJOR: u32 = 1;

/// Aggregates plus the per-episode results they were computed from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsFile {
    format: String,
    pub policy: String,
    pub report: MetricReport,
    pub results: Vec<EpisodeResult>,
}

impl ResultsFile {
    pub fn new(policy: impl Into<String>, report: MetricReport, results: Vec<EpisodeResult>) -> Self {
        Self {
            format: tag(RESULTS_FORMAT),
            policy: policy.into(),
            report,
            results,
        }
    }
}

pub fn results_to_string(file: &ResultsFile) -> String {
    let mut out = serde_json::to_string_pretty(file).expect("serializable");
    out.push('\n');
    out
}

pub fn parse_results(text: &str) -> Result<ResultsFile, FormatError> {
    let file: ResultsFile = serde_json::from_str(text)?;
    check_tag(&file.format, RESULTS_FORMAT, RESULTS_MAJOR)?;
    Ok(file)
}

pub fn write_results(path: &Path, file: &ResultsFile) -> Result<(), FormatError> {
    write_text(path, results_to_string(file))
}

pub fn read_results(path: &Path) -> Result<ResultsFile, FormatError> {
    parse_results(&read_text(path)?)
}

// --- stats files ----------------------------------------------------------------

pub const STATS_FORMAT: &str = "stats";
pub const STATS_MAJOR: u32 = 1;

/// Dataset statistics plus the drop log from construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsFile {
    format: String,
    pub stats: crate::episodes::DatasetStats,
    pub dropped: Vec<DropRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropRecord {
    pub base_id: String,
    pub reason_code: String,
}

impl StatsFile {
    pub fn new(stats: crate::episodes::DatasetStats, dropped: Vec<DropRecord>) -> Self {
        Self {
            format: tag(STATS_FORMAT),
            stats,
            dropped,
        }
    }
}

pub fn stats_to_string(file: &StatsFile) -> String {
    let mut out = serde_json::to_string_pretty(file).expect("serializable");
    out.push('\n');
    out
}

pub fn parse_stats(text: &str) -> Result<StatsFile, FormatError> {
    let file: StatsFile = serde_json::from_str(text)?;
    check_tag(&file.format, STATS_FORMAT, STATS_MAJOR)?;
    Ok(file)
}

pub fn write_stats(path: &Path, file: &StatsFile) -> Result<(), FormatError> {
    write_text(path, stats_to_string(file))
}

// --- config files ------------------------------------------------------------------

pub const CONFIG_FORMAT: &str = "config";
pub const CONFIG_MAJOR: u32 = 1;

/// Optional config file; any field a flag also sets is overridden by the
/// flag.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FileConfig {
    format: Option<String>,
    pub seed: Option<u64>,
    pub rooms: Option<u32>,
    pub budget: Option<usize>,
    pub tau: Option<f64>,
    pub policy: Option<String>,
    pub coverage_threshold: Option<f64>,
    pub max_resamples: Option<usize>,
    pub tsp_cap: Option<usize>,
    pub free: Option<bool>,
    pub parallel: Option<usize>,
    pub lambda: Option<f64>,
    pub mu: Option<f64>,
    pub stage1_budget: Option<usize>,
    pub thresholds: Option<Vec<f64>>,
}

pub fn parse_config(text: &str) -> Result<FileConfig, FormatError> {
    let file: FileConfig = serde_json::from_str(text)?;
    if let Some(tag_str) = &file.format {
        check_tag(tag_str, CONFIG_FORMAT, CONFIG_MAJOR)?;
    }
    Ok(file)
}

pub fn read_config(path: &Path) -> Result<FileConfig, FormatError> {
    parse_config(&read_text(path)?)
}
