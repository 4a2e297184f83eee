//! Command-line pipeline: `synth` generates scans, `build-dataset` turns
//! them into paired episode datasets, `run` executes a policy, `eval` scores
//! the resulting trajectories, and `sensitivity` / `report` render tables
//! from saved results.
//!
//! Configuration comes from flags, optionally backed by a JSON config file
//! (`--config`); flags win. Every command is deterministic given identical
//! inputs and seeds. Exit codes: 0 success, 1 usage error, 2 data error,
//! 3 external-client error.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::episodes::clients::{rewriter_from_env, verifier_from_env};
use crate::episodes::{
    build_dataset, dataset_stats, sample_base_instances, BuildConfig, BuildError, Episode,
    SplitName,
};
use crate::formats::{
    self, DropRecord, FileConfig, FormatError, ResultsFile, StatsFile, TrajectoryHeader,
};
use crate::metrics::{
    aggregate_report, decision_error_report, render_csv, render_sensitivity, render_text_table,
    render_trajectory_svg, threshold_sensitivity, MetricReport,
};
use crate::policies::{PolicyError, PolicySpec};
use crate::runner::{
    run_episode, score_trajectory, Action, DetectorModel, EpisodeResult, FreeContext, RunError,
    Trajectory,
};
use crate::scene::SceneGraph;
use crate::synth::{generate_scene, CountRange, OccupancyGrid, SynthConfig};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_CLIENT: i32 = 3;

/// Command failure carrying the exit code that tells scripts whether to
/// blame the invocation (1), the inputs (2), or an external endpoint (3).
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

fn usage(message: impl Into<String>) -> CliError {
    CliError {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

fn data(err: impl fmt::Display) -> CliError {
    CliError {
        code: EXIT_DATA,
        message: err.to_string(),
    }
}

impl From<FormatError> for CliError {
    fn from(err: FormatError) -> Self {
        data(err)
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        data(err)
    }
}

impl From<BuildError> for CliError {
    fn from(err: BuildError) -> Self {
        let code = match err {
            BuildError::Client(_) => EXIT_CLIENT,
            _ => EXIT_DATA,
        };
        CliError {
            code,
            message: err.to_string(),
        }
    }
}

impl From<PolicyError> for CliError {
    fn from(err: PolicyError) -> Self {
        let code = match err {
            PolicyError::Client(_) => EXIT_CLIENT,
            _ => EXIT_DATA,
        };
        CliError {
            code,
            message: err.to_string(),
        }
    }
}

impl From<RunError> for CliError {
    fn from(err: RunError) -> Self {
        let code = match &err {
            RunError::Policy {
                source: PolicyError::Client(_),
                ..
            } => EXIT_CLIENT,
            _ => EXIT_DATA,
        };
        CliError {
            code,
            message: err.to_string(),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "nfnav",
    version,
    about = "Simulator, dataset builder, policy harness, and metric suite \
             for NOT-FOUND navigation on graph-structured indoor scenes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate seeded synthetic scans (scene + occupancy-grid files).
    Synth(SynthArgs),
    /// Build a paired feasible/NOT-FOUND episode dataset from scans.
    BuildDataset(BuildArgs),
    /// Execute a policy over a dataset, logging trajectories.
    Run(RunArgs),
    /// Score a trajectory log against its dataset and scenes.
    Eval(EvalArgs),
    /// Re-score saved results on coverage-thresholded episode subsets.
    Sensitivity(SensitivityArgs),
    /// Render metric tables, error decompositions, and trajectory plots.
    Report(ReportArgs),
}

/// Parses argv and runs the selected command; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = err.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::BuildDataset(args) => cmd_build(args),
        Command::Run(args) => cmd_run(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Sensitivity(args) => cmd_sensitivity(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.code
        }
    }
}

fn file_config(path: Option<&PathBuf>) -> Result<FileConfig, CliError> {
    Ok(match path {
        Some(p) => formats::read_config(p)?,
        None => FileConfig::default(),
    })
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    Ok(fs::create_dir_all(dir)?)
}

const SCENE_SUFFIX: &str = ".scene.json";
const GRID_SUFFIX: &str = ".grids.json";

fn load_scenes(dir: &Path) -> Result<BTreeMap<String, SceneGraph>, CliError> {
    let mut scenes = BTreeMap::new();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(SCENE_SUFFIX))
        .collect();
    paths.sort();
    for path in paths {
        let scene = formats::read_scene(&path)?;
        scenes.insert(scene.scan_id().to_owned(), scene);
    }
    if scenes.is_empty() {
        return Err(data(format!(
            "no *{SCENE_SUFFIX} files in {}",
            dir.display()
        )));
    }
    Ok(scenes)
}

type GridSet = BTreeMap<String, BTreeMap<crate::scene::RoomId, OccupancyGrid>>;

fn load_grids(dir: &Path) -> Result<GridSet, CliError> {
    let mut all = BTreeMap::new();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(GRID_SUFFIX))
        .collect();
    paths.sort();
    for path in paths {
        let (scan, grids) = formats::read_grids(&path)?;
        all.insert(scan, grids);
    }
    Ok(all)
}

// --- synth -------------------------------------------------------------------

#[derive(Args)]
struct SynthArgs {
    /// Base seed; scan i is generated from seed + i.
    #[arg(long)]
    seed: Option<u64>,
    /// Rooms per scan.
    #[arg(long)]
    rooms: Option<u32>,
    /// Number of scans to generate.
    #[arg(long, default_value_t = 1)]
    scans: u32,
    #[arg(long, default_value_t = 5)]
    min_viewpoints: u32,
    #[arg(long, default_value_t = 8)]
    max_viewpoints: u32,
    #[arg(long, default_value_t = 3)]
    min_objects: u32,
    #[arg(long, default_value_t = 6)]
    max_objects: u32,
    /// Obstacle blobs per room (varies clearance).
    #[arg(long, default_value_t = 2)]
    furniture: u32,
    /// Output directory; created if missing.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

fn cmd_synth(args: SynthArgs) -> Result<(), CliError> {
    let cfg = file_config(args.config.as_ref())?;
    let seed = args.seed.or(cfg.seed).unwrap_or(0);
    let rooms = args.rooms.or(cfg.rooms).unwrap_or(4);
    ensure_dir(&args.out)?;
    for i in 0..args.scans {
        let config = SynthConfig {
            n_rooms: rooms,
            viewpoints_per_room: CountRange::new(args.min_viewpoints, args.max_viewpoints),
            objects_per_room: CountRange::new(args.min_objects, args.max_objects),
            furniture_per_room: args.furniture,
            seed: seed + u64::from(i),
            ..SynthConfig::default()
        };
        let (scene, grids) = generate_scene(&config).map_err(data)?;
        let scan = scene.scan_id().to_owned();
        formats::write_scene(&args.out.join(format!("{scan}{SCENE_SUFFIX}")), &scene)?;
        formats::write_grids(&args.out.join(format!("{scan}{GRID_SUFFIX}")), &scan, &grids)?;
        println!(
            "wrote {scan}: {} viewpoints, {} objects, {} rooms",
            scene.viewpoints().len(),
            scene.objects().len(),
            scene.rooms().len()
        );
    }
    Ok(())
}

// --- build-dataset --------------------------------------------------------------

#[derive(Args)]
struct BuildArgs {
    /// Directory of *.scene.json scans.
    #[arg(long, value_name = "DIR")]
    scenes: PathBuf,
    /// Output directory; created if missing.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Base instances sampled per scan.
    #[arg(long, default_value_t = 20)]
    bases: usize,
    /// Minimum reference coverage; lower-coverage instances are dropped.
    #[arg(long)]
    coverage_threshold: Option<f64>,
    /// Substitute proposals per instance before rejecting it.
    #[arg(long)]
    max_resamples: Option<usize>,
    /// Candidate-count cap for exact exploration-order search.
    #[arg(long)]
    tsp_cap: Option<usize>,
    /// Fraction of each training scan's pairs held out as val_seen.
    #[arg(long, default_value_t = 0.2)]
    val_seen_fraction: f64,
    /// Fraction of scans held out entirely as val_unseen.
    #[arg(long, default_value_t = 0.25)]
    unseen_scan_fraction: f64,
    /// Ignore objects already visible from the room-entry viewpoint when
    /// seeding exploration references.
    #[arg(long)]
    no_entry_objects: bool,
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

fn cmd_build(args: BuildArgs) -> Result<(), CliError> {
    let cfg = file_config(args.config.as_ref())?;
    let config = BuildConfig {
        seed: args.seed.or(cfg.seed).unwrap_or(0),
        coverage_threshold: args
            .coverage_threshold
            .or(cfg.coverage_threshold)
            .unwrap_or(BuildConfig::default().coverage_threshold),
        max_resamples: args
            .max_resamples
            .or(cfg.max_resamples)
            .unwrap_or(BuildConfig::default().max_resamples),
        tsp_cap: args
            .tsp_cap
            .or(cfg.tsp_cap)
            .unwrap_or(BuildConfig::default().tsp_cap),
        include_entry_objects: !args.no_entry_objects,
        val_seen_fraction: args.val_seen_fraction,
        unseen_scan_fraction: args.unseen_scan_fraction,
    };
    let scenes = load_scenes(&args.scenes)?;
    let mut bases = Vec::new();
    for scene in scenes.values() {
        bases.extend(sample_base_instances(scene, args.bases, config.seed)?);
    }
    let rewriter = rewriter_from_env(crate::synth::default_vocabulary());
    let verifier = verifier_from_env(None);
    let output = build_dataset(&scenes, &bases, &config, rewriter.as_ref(), verifier.as_ref())?;

    ensure_dir(&args.out)?;
    formats::write_dataset(&args.out.join("dataset.jsonl"), &output.splits)?;
    formats::write_pairing(&args.out.join("pairing.json"), &output.splits)?;
    let dropped: Vec<DropRecord> = output
        .dropped
        .iter()
        .map(|d| DropRecord {
            base_id: d.base_id.clone(),
            reason_code: d.reason.code().to_owned(),
        })
        .collect();
    let stats = StatsFile::new(dataset_stats(&output.splits), dropped);
    formats::write_stats(&args.out.join("stats.json"), &stats)?;

    for split in &output.splits {
        println!("{}: {} pairs", split.name, split.pairs.len());
    }
    for d in &output.dropped {
        println!("DROP {} ({})", d.base_id, d.reason.code());
    }
    Ok(())
}

// --- run ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitFilter {
    Train,
    ValSeen,
    ValUnseen,
    All,
}

impl SplitFilter {
    fn keeps(self, split: SplitName) -> bool {
        match self {
            SplitFilter::Train => split == SplitName::Train,
            SplitFilter::ValSeen => split == SplitName::ValSeen,
            SplitFilter::ValUnseen => split == SplitName::ValUnseen,
            SplitFilter::All => true,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyName {
    Oracle,
    PrematureNf,
    Greedy,
    Random,
    Roam,
}

#[derive(Args)]
struct RunArgs {
    /// dataset.jsonl produced by build-dataset.
    #[arg(long, value_name = "FILE")]
    dataset: PathBuf,
    /// Directory of *.scene.json (and *.grids.json) scans.
    #[arg(long, value_name = "DIR")]
    scenes: PathBuf,
    #[arg(long, value_enum)]
    policy: Option<PolicyName>,
    /// MOVE budget per episode.
    #[arg(long)]
    budget: Option<usize>,
    /// Detection-confidence threshold for FOUND.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = SplitFilter::All)]
    split: SplitFilter,
    /// Frontier-clearance estimation from occupancy grids (roam only).
    #[arg(long, value_enum)]
    free: Option<Toggle>,
    /// Clearance weight in the frontier score (roam).
    #[arg(long)]
    lambda: Option<f64>,
    /// Revisit penalty in the frontier score (roam).
    #[arg(long)]
    mu: Option<f64>,
    /// Room-reaching step allowance before exploration hand-off (roam).
    #[arg(long)]
    stage1_budget: Option<usize>,
    /// Detector false-positive rate.
    #[arg(long, default_value_t = 0.0)]
    fp_rate: f64,
    /// Detector false-negative rate.
    #[arg(long, default_value_t = 0.0)]
    fn_rate: f64,
    /// Detector confidence jitter half-width.
    #[arg(long)]
    detector_noise: Option<f64>,
    /// Detector seed; defaults to the run seed.
    #[arg(long)]
    detector_seed: Option<u64>,
    /// Ray-march step for clearance casts, in meters.
    #[arg(long, default_value_t = 0.1)]
    free_step: f64,
    /// Clearance cast range cap, in meters.
    #[arg(long, default_value_t = 8.0)]
    free_range: f64,
    /// Episodes evaluated concurrently.
    #[arg(long)]
    parallel: Option<usize>,
    /// Output directory; created if missing.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let cfg = file_config(args.config.as_ref())?;
    let seed = args.seed.or(cfg.seed).unwrap_or(0);
    let budget = args.budget.or(cfg.budget).unwrap_or(40);
    let tau = args.tau.or(cfg.tau).unwrap_or(0.75);
    let lambda = args.lambda.or(cfg.lambda).unwrap_or(0.5);
    let mu = args.mu.or(cfg.mu).unwrap_or(1e3);
    let stage1_budget = args.stage1_budget.or(cfg.stage1_budget);
    let parallel = args.parallel.or(cfg.parallel).unwrap_or(1).max(1);
    let free_on = match args.free {
        Some(toggle) => toggle == Toggle::On,
        None => cfg.free.unwrap_or(false),
    };
    let policy_name = match (args.policy, cfg.policy.as_deref()) {
        (Some(name), _) => name,
        (None, Some(s)) => PolicyName::from_str(s, true)
            .map_err(|_| usage(format!("config file names unknown policy `{s}`")))?,
        (None, None) => return Err(usage("no policy selected; pass --policy")),
    };
    let spec = match policy_name {
        PolicyName::Oracle => PolicySpec::Oracle,
        PolicyName::PrematureNf => PolicySpec::PrematureNf,
        PolicyName::Greedy => PolicySpec::Greedy { tau },
        PolicyName::Random => PolicySpec::Random,
        PolicyName::Roam => PolicySpec::Roam {
            tau,
            lambda,
            mu,
            stage1_budget,
            free: free_on,
        },
    };
    let detector = DetectorModel {
        noise: args
            .detector_noise
            .unwrap_or(DetectorModel::default().noise),
        fp_rate: args.fp_rate,
        fn_rate: args.fn_rate,
        seed: args.detector_seed.unwrap_or(seed),
        ..DetectorModel::default()
    };

    let records = formats::read_dataset(&args.dataset)?;
    let mut episodes: Vec<&Episode> = records
        .iter()
        .filter(|r| args.split.keeps(r.split))
        .map(|r| &r.episode)
        .collect();
    episodes.sort_by(|a, b| a.id.cmp(&b.id));
    if episodes.is_empty() {
        return Err(data("no episodes left after split filtering"));
    }
    let scenes = load_scenes(&args.scenes)?;
    let grids = if free_on {
        load_grids(&args.scenes)?
    } else {
        GridSet::new()
    };

    let run_one = |episode: &&Episode| -> Result<Trajectory, CliError> {
        let scene = scenes
            .get(&episode.scan_id)
            .ok_or_else(|| data(format!("no scene loaded for scan `{}`", episode.scan_id)))?;
        let free_ctx = if free_on {
            let scan_grids = grids.get(&episode.scan_id).ok_or_else(|| {
                data(format!("no grid file loaded for scan `{}`", episode.scan_id))
            })?;
            Some(FreeContext {
                grids: scan_grids,
                step: args.free_step,
                max_range: args.free_range,
            })
        } else {
            None
        };
        let mut policy = spec.build(scene, episode, seed)?;
        let (trajectory, _) = run_episode(
            policy.as_mut(),
            scene,
            episode,
            budget,
            &detector,
            free_ctx.as_ref(),
        )?;
        Ok(trajectory)
    };
    // Episodes are independent; the input is id-sorted and rayon's indexed
    // collect preserves order, so parallel output is byte-identical to
    // sequential output.
    let trajectories: Vec<Trajectory> = if parallel > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallel)
            .build()
            .map_err(data)?;
        pool.install(|| episodes.par_iter().map(run_one).collect::<Result<_, _>>())?
    } else {
        episodes.iter().map(run_one).collect::<Result<_, _>>()?
    };

    ensure_dir(&args.out)?;
    let header = TrajectoryHeader::new(spec.clone(), seed, budget, free_on);
    let log_path = args.out.join("trajectories.jsonl");
    formats::write_trajectories(&log_path, &header, &trajectories)?;
    println!(
        "{}: {} episodes -> {}",
        spec.name(),
        trajectories.len(),
        log_path.display()
    );
    Ok(())
}

// --- eval ------------------------------------------------------------------------

#[derive(Args)]
struct EvalArgs {
    /// trajectories.jsonl produced by run.
    #[arg(long, value_name = "FILE")]
    trajectories: PathBuf,
    /// dataset.jsonl the trajectories were run on.
    #[arg(long, value_name = "FILE")]
    dataset: PathBuf,
    /// Directory of *.scene.json scans.
    #[arg(long, value_name = "DIR")]
    scenes: PathBuf,
    /// Output directory; created if missing.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Emit the table as CSV instead of aligned text.
    #[arg(long)]
    csv: bool,
}

fn moves_in(trajectory: &Trajectory) -> usize {
    trajectory
        .actions
        .iter()
        .filter(|a| matches!(a, Action::Move { .. }))
        .count()
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let (header, trajectories) = formats::read_trajectories(&args.trajectories)?;
    let records = formats::read_dataset(&args.dataset)?;
    let episodes: BTreeMap<&str, &Episode> = records
        .iter()
        .map(|r| (r.episode.id.as_str(), &r.episode))
        .collect();
    let scenes = load_scenes(&args.scenes)?;

    let mut results = Vec::with_capacity(trajectories.len());
    for trajectory in &trajectories {
        let episode = episodes.get(trajectory.episode_id.as_str()).ok_or_else(|| {
            data(format!(
                "trajectory for `{}` has no episode in the dataset",
                trajectory.episode_id
            ))
        })?;
        let scene = scenes
            .get(&episode.scan_id)
            .ok_or_else(|| data(format!("no scene loaded for scan `{}`", episode.scan_id)))?;
        results.push(score_trajectory(trajectory, scene, episode, moves_in(trajectory))?);
    }
    let report = aggregate_report(&results).map_err(data)?;
    let file = ResultsFile::new(header.policy.name(), report.clone(), results);

    ensure_dir(&args.out)?;
    formats::write_results(&args.out.join("results.json"), &file)?;
    let table = BTreeMap::from([(header.policy.name().to_owned(), report)]);
    print!(
        "{}",
        if args.csv {
            render_csv(&table)
        } else {
            render_text_table(&table)
        }
    );
    Ok(())
}

// --- sensitivity --------------------------------------------------------------------

#[derive(Args)]
struct SensitivityArgs {
    /// dataset.jsonl providing reference coverage per episode.
    #[arg(long, value_name = "FILE")]
    dataset: PathBuf,
    /// results.json files, one per policy.
    #[arg(long = "results", value_name = "FILE", required = true)]
    results: Vec<PathBuf>,
    /// Comma-separated coverage thresholds.
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
    /// Also write the rendered table to this file.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

fn load_results_by_policy(
    paths: &[PathBuf],
) -> Result<BTreeMap<String, Vec<EpisodeResult>>, CliError> {
    let mut by_policy = BTreeMap::new();
    for path in paths {
        let file = formats::read_results(path)?;
        if by_policy.insert(file.policy.clone(), file.results).is_some() {
            return Err(usage(format!(
                "two results files for policy `{}`",
                file.policy
            )));
        }
    }
    Ok(by_policy)
}

fn cmd_sensitivity(args: SensitivityArgs) -> Result<(), CliError> {
    let cfg = file_config(args.config.as_ref())?;
    let thresholds = args
        .thresholds
        .or(cfg.thresholds)
        .unwrap_or_else(|| vec![0.85, 0.90, 0.95]);
    let records = formats::read_dataset(&args.dataset)?;
    let episodes: Vec<Episode> = records.into_iter().map(|r| r.episode).collect();
    let by_policy = load_results_by_policy(&args.results)?;
    let rows = threshold_sensitivity(&by_policy, &episodes, &thresholds).map_err(data)?;
    let rendered = render_sensitivity(&rows);
    if let Some(out) = &args.out {
        fs::write(out, &rendered)?;
    }
    print!("{rendered}");
    Ok(())
}

// --- report ---------------------------------------------------------------------------

#[derive(Args)]
struct ReportArgs {
    /// results.json files, one per policy.
    #[arg(long = "results", value_name = "FILE")]
    results: Vec<PathBuf>,
    /// Emit the table as CSV instead of aligned text.
    #[arg(long)]
    csv: bool,
    /// Decompose false NOT-FOUND decisions per policy.
    #[arg(long)]
    decision_errors: bool,
    /// Coverage bar separating exploration-control from perception errors.
    #[arg(long, default_value_t = 0.5)]
    c_min: f64,
    /// Also write the rendered report to this file.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Render this episode's trajectory as SVG (requires --trajectories,
    /// --scene, --svg-out).
    #[arg(long, value_name = "EPISODE_ID")]
    plot_episode: Option<String>,
    #[arg(long, value_name = "FILE")]
    trajectories: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    scene: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    svg_out: Option<PathBuf>,
}

fn cmd_report(args: ReportArgs) -> Result<(), CliError> {
    if args.results.is_empty() && args.plot_episode.is_none() {
        return Err(usage("nothing to do; pass --results and/or --plot-episode"));
    }

    if !args.results.is_empty() {
        let mut table: BTreeMap<String, MetricReport> = BTreeMap::new();
        let mut rendered = String::new();
        let mut decompositions = String::new();
        for path in &args.results {
            let file = formats::read_results(path)?;
            if args.decision_errors {
                let report = decision_error_report(&file.results, args.c_min);
                decompositions.push_str(&format!(
                    "{}: {} false NOT-FOUND",
                    file.policy, report.n_false_not_found
                ));
                for (class, share) in &report.shares {
                    decompositions.push_str(&format!("  {class} {:.1}%", share * 100.0));
                }
                decompositions.push('\n');
            }
            if table.insert(file.policy.clone(), file.report).is_some() {
                return Err(usage(format!(
                    "two results files for policy `{}`",
                    file.policy
                )));
            }
        }
        rendered.push_str(&if args.csv {
            render_csv(&table)
        } else {
            render_text_table(&table)
        });
        if !decompositions.is_empty() {
            rendered.push('\n');
            rendered.push_str(&decompositions);
        }
        if let Some(out) = &args.out {
            fs::write(out, &rendered)?;
        }
        print!("{rendered}");
    }

    if let Some(episode_id) = &args.plot_episode {
        let (log, scene_path, svg_path) = match (&args.trajectories, &args.scene, &args.svg_out) {
            (Some(log), Some(scene), Some(svg)) => (log, scene, svg),
            _ => {
                return Err(usage(
                    "--plot-episode requires --trajectories, --scene, and --svg-out",
                ))
            }
        };
        let (_, trajectories) = formats::read_trajectories(log)?;
        let trajectory = trajectories
            .iter()
            .find(|t| &t.episode_id == episode_id)
            .ok_or_else(|| data(format!("no trajectory for episode `{episode_id}`")))?;
        let scene = formats::read_scene(scene_path)?;
        fs::write(svg_path, render_trajectory_svg(&scene, trajectory))?;
        println!("wrote {}", svg_path.display());
    }
    Ok(())
}
