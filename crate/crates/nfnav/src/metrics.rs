//! Evaluation metrics: reach/decision success rates, the path-length-
//! weighted scores, coverage aggregation, threshold sensitivity, and the
//! decision-error decomposition, plus text/CSV/SVG report emitters.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::episodes::Episode;
use crate::policies::{classify_decision_error, ErrorClass};
use crate::runner::{Decision, EpisodeResult, Trajectory};
use crate::scene::SceneGraph;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("cannot aggregate an empty result set")]
    Empty,
    #[error("episode `{0}` has zero reference exploration length; it should have been filtered out upstream")]
    DegenerateReference(String),
}

/// Per-episode score contributions, kept alongside the aggregates so tables
/// and plots can drill down.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeContribution {
    pub episode_id: String,
    pub reach_spl_term: f64,
    pub rev_spl_term: f64,
    pub reached: bool,
    pub decision_correct: bool,
    pub coverage: f64,
}

/// Aggregate metric table for one policy on one episode set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n_episodes: usize,
    pub coverage_mean: f64,
    pub mean_reach_length: f64,
    pub mean_explore_length: f64,
    pub reach_sr: f64,
    pub reach_decision_sr: f64,
    pub reach_spl: f64,
    pub rev_spl: f64,
    pub contributions: Vec<EpisodeContribution>,
}

/// Reach-efficiency term for one episode: success-gated, penalizing any
/// detour beyond the reference reach length. An episode that starts inside
/// the target room (both lengths zero) contributes its success flag.
fn reach_spl_term(result: &EpisodeResult) -> f64 {
    let s = if result.reached { 1.0 } else { 0.0 };
    let p = result.p_reach;
    let l = result.reference_reach_length;
    if p == 0.0 && l == 0.0 {
        return s;
    }
    s * l / p.max(l)
}

/// Exploration-efficiency term for one episode: the product of reach
/// success, decision correctness, coverage, an over-exploration penalty
/// ℓ/max(p, ℓ), and an under-exploration penalty min(1, p/ℓ).
fn rev_spl_term(result: &EpisodeResult) -> Result<f64, MetricError> {
    let l = result.reference_explore_length;
    if l <= 0.0 {
        return Err(MetricError::DegenerateReference(result.episode_id.clone()));
    }
    let s_r = if result.reached { 1.0 } else { 0.0 };
    let s_d = if result.decision_correct { 1.0 } else { 0.0 };
    let p = result.p_explore;
    Ok(s_r * s_d * result.coverage * (l / p.max(l)) * (p / l).min(1.0))
}

/// Mean reach-efficiency score over the result set.
pub fn reach_spl(results: &[EpisodeResult]) -> Result<f64, MetricError> {
    if results.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(results.iter().map(reach_spl_term).sum::<f64>() / results.len() as f64)
}

/// Mean exploration-efficiency score over the result set. Zero-length
/// reference explorations are upstream filtering bugs and error out.
pub fn rev_spl(results: &[EpisodeResult]) -> Result<f64, MetricError> {
    if results.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut sum = 0.0;
    for r in results {
        sum += rev_spl_term(r)?;
    }
    Ok(sum / results.len() as f64)
}

/// Fraction of episodes that visited the target room.
pub fn reach_sr(results: &[EpisodeResult]) -> Result<f64, MetricError> {
    if results.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(results.iter().filter(|r| r.reached).count() as f64 / results.len() as f64)
}

/// Fraction of episodes that both reached the room and decided correctly.
pub fn reach_decision_sr(results: &[EpisodeResult]) -> Result<f64, MetricError> {
    if results.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(results
        .iter()
        .filter(|r| r.reached && r.decision_correct)
        .count() as f64
        / results.len() as f64)
}

/// Builds the full metric table. Unreached episodes count as zero coverage
/// in the mean; episodes that ended without a decision contribute zero to
/// every success-weighted score but stay in the denominator.
pub fn aggregate_report(results: &[EpisodeResult]) -> Result<MetricReport, MetricError> {
    if results.is_empty() {
        return Err(MetricError::Empty);
    }
    let n = results.len() as f64;
    let mut contributions = Vec::with_capacity(results.len());
    for r in results {
        contributions.push(EpisodeContribution {
            episode_id: r.episode_id.clone(),
            reach_spl_term: reach_spl_term(r),
            rev_spl_term: rev_spl_term(r)?,
            reached: r.reached,
            decision_correct: r.decision_correct,
            coverage: r.coverage,
        });
    }
    Ok(MetricReport {
        n_episodes: results.len(),
        coverage_mean: results.iter().map(|r| r.coverage).sum::<f64>() / n,
        mean_reach_length: results.iter().map(|r| r.p_reach).sum::<f64>() / n,
        mean_explore_length: results.iter().map(|r| r.p_explore).sum::<f64>() / n,
        reach_sr: reach_sr(results)?,
        reach_decision_sr: reach_decision_sr(results)?,
        reach_spl: reach_spl(results)?,
        rev_spl: rev_spl(results)?,
        contributions,
    })
}

/// One row of the coverage-threshold sensitivity table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub threshold: f64,
    /// Retained episodes relative to the lowest threshold's subset.
    pub retained_fraction: f64,
    pub retained_count: usize,
    /// Policy name → (Reach&Decision SR, exploration-efficiency score) on
    /// the retained subset; `None` when the subset is empty.
    pub per_policy: BTreeMap<String, Option<(f64, f64)>>,
    pub empty: bool,
}

#[derive(Debug, Error, PartialEq)]
pub enum SensitivityError {
    #[error("no thresholds supplied")]
    NoThresholds,
    #[error("result for unknown episode `{0}`")]
    UnknownEpisode(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Re-scores existing runs on the subsets of episodes whose reference
/// coverage meets each threshold. Trajectories are fixed; only the retained
/// evaluation subset varies. Thresholds are processed in ascending order and
/// retention is reported relative to the lowest one.
pub fn threshold_sensitivity(
    results_by_policy: &BTreeMap<String, Vec<EpisodeResult>>,
    episodes: &[Episode],
    thresholds: &[f64],
) -> Result<Vec<SensitivityRow>, SensitivityError> {
    if thresholds.is_empty() {
        return Err(SensitivityError::NoThresholds);
    }
    let coverage_of: BTreeMap<&str, f64> = episodes
        .iter()
        .map(|e| (e.id.as_str(), e.reference_coverage))
        .collect();
    for results in results_by_policy.values() {
        for r in results {
            if !coverage_of.contains_key(r.episode_id.as_str()) {
                return Err(SensitivityError::UnknownEpisode(r.episode_id.clone()));
            }
        }
    }
    let mut ordered: Vec<f64> = thresholds.to_vec();
    ordered.sort_by(f64::total_cmp);

    let retained_ids = |threshold: f64| -> Vec<&str> {
        episodes
            .iter()
            .filter(|e| e.reference_coverage >= threshold)
            .map(|e| e.id.as_str())
            .collect()
    };
    let baseline = retained_ids(ordered[0]).len().max(1);

    let mut rows = Vec::with_capacity(ordered.len());
    for &threshold in &ordered {
        let ids: std::collections::BTreeSet<&str> = retained_ids(threshold).into_iter().collect();
        let mut per_policy = BTreeMap::new();
        for (policy, results) in results_by_policy {
            let subset: Vec<EpisodeResult> = results
                .iter()
                .filter(|r| ids.contains(r.episode_id.as_str()))
                .cloned()
                .collect();
            let entry = if subset.is_empty() {
                None
            } else {
                Some((reach_decision_sr(&subset)?, rev_spl(&subset)?))
            };
            per_policy.insert(policy.clone(), entry);
        }
        rows.push(SensitivityRow {
            threshold,
            retained_fraction: ids.len() as f64 / baseline as f64,
            retained_count: ids.len(),
            per_policy,
            empty: ids.is_empty(),
        });
    }
    Ok(rows)
}

/// Share of false NOT-FOUND decisions per failure stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionErrorReport {
    pub n_false_not_found: usize,
    /// Class → share of false NOT-FOUNDs; empty map when there are none.
    pub shares: BTreeMap<ErrorClass, f64>,
    pub empty: bool,
}

/// Decomposes false NOT-FOUND results into failure-stage shares that sum to
/// one. An input without any false NOT-FOUNDs yields an explicitly empty
/// report rather than an error.
pub fn decision_error_report(results: &[EpisodeResult], c_min: f64) -> DecisionErrorReport {
    let mut counts: BTreeMap<ErrorClass, usize> = BTreeMap::new();
    let mut total = 0usize;
    for r in results {
        let false_nf =
            r.feasible && r.decision == Decision::NotFound && !r.decision_correct;
        if !false_nf {
            continue;
        }
        let class = classify_decision_error(r, c_min).expect("filtered to false NOT-FOUNDs");
        *counts.entry(class).or_default() += 1;
        total += 1;
    }
    if total == 0 {
        return DecisionErrorReport {
            n_false_not_found: 0,
            shares: BTreeMap::new(),
            empty: true,
        };
    }
    DecisionErrorReport {
        n_false_not_found: total,
        shares: counts
            .into_iter()
            .map(|(class, c)| (class, c as f64 / total as f64))
            .collect(),
        empty: false,
    }
}

fn pct(x: f64) -> String {
    format!("{:.1}", x * 100.0)
}

/// Aligned text table over policies' metric reports, percentages with one
/// decimal place.
pub fn render_text_table(reports: &BTreeMap<String, MetricReport>) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<14} {:>5} {:>8} {:>8} {:>8} {:>8} {:>9} {:>9} {:>9}\n",
        "policy", "n", "cov%", "reach_m", "expl_m", "RSR%", "R&D-SR%", "RSPL%", "REV-SPL%"
    ));
    for (name, r) in reports {
        out.push_str(&format!(
            "{:<14} {:>5} {:>8} {:>8.2} {:>8.2} {:>8} {:>9} {:>9} {:>9}\n",
            name,
            r.n_episodes,
            pct(r.coverage_mean),
            r.mean_reach_length,
            r.mean_explore_length,
            pct(r.reach_sr),
            pct(r.reach_decision_sr),
            pct(r.reach_spl),
            pct(r.rev_spl),
        ));
    }
    out
}

/// CSV emitter for the same table.
pub fn render_csv(reports: &BTreeMap<String, MetricReport>) -> String {
    let mut out = String::from(
        "policy,n,coverage_pct,mean_reach_m,mean_explore_m,reach_sr_pct,reach_decision_sr_pct,reach_spl_pct,rev_spl_pct\n",
    );
    for (name, r) in reports {
        out.push_str(&format!(
            "{},{},{},{:.2},{:.2},{},{},{},{}\n",
            name,
            r.n_episodes,
            pct(r.coverage_mean),
            r.mean_reach_length,
            r.mean_explore_length,
            pct(r.reach_sr),
            pct(r.reach_decision_sr),
            pct(r.reach_spl),
            pct(r.rev_spl),
        ));
    }
    out
}

/// Sensitivity table as text, one row per threshold.
pub fn render_sensitivity(rows: &[SensitivityRow]) -> String {
    let mut out = String::from("threshold retained%   n  policy           R&D-SR%  REV-SPL%\n");
    for row in rows {
        let mut first = true;
        if row.per_policy.is_empty() {
            out.push_str(&format!(
                "{:>9.2} {:>9} {:>3}  {}\n",
                row.threshold,
                pct(row.retained_fraction),
                row.retained_count,
                if row.empty { "(empty subset)" } else { "" }
            ));
        }
        for (policy, entry) in &row.per_policy {
            let head = if first {
                format!(
                    "{:>9.2} {:>9} {:>3}",
                    row.threshold,
                    pct(row.retained_fraction),
                    row.retained_count
                )
            } else {
                " ".repeat(23)
            };
            first = false;
            match entry {
                Some((rd, rev)) => {
                    out.push_str(&format!(
                        "{head}  {:<16} {:>7}  {:>8}\n",
                        policy,
                        pct(*rd),
                        pct(*rev)
                    ));
                }
                None => {
                    out.push_str(&format!("{head}  {policy:<16} (empty subset)\n"));
                }
            }
        }
    }
    out
}

/// Renders one episode's trajectory over the scene graph as a standalone SVG
/// document: grey edges, room-tinted viewpoints, the trajectory as a red
/// polyline, start and end markers.
pub fn render_trajectory_svg(scene: &SceneGraph, trajectory: &Trajectory) -> String {
    let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
    let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for v in scene.viewpoints() {
        min_x = min_x.min(v.position.x);
        max_x = max_x.max(v.position.x);
        min_y = min_y.min(v.position.y);
        max_y = max_y.max(v.position.y);
    }
    if !min_x.is_finite() {
        (min_x, min_y, max_x, max_y) = (0.0, 0.0, 1.0, 1.0);
    }
    let pad = 1.0;
    let scale = 40.0;
    let w = (max_x - min_x + 2.0 * pad) * scale;
    let h = (max_y - min_y + 2.0 * pad) * scale;
    let tx = |x: f64| (x - min_x + pad) * scale;
    // Flip y so +y points up in the image.
    let ty = |y: f64| h - (y - min_y + pad) * scale;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\">\n"
    ));
    svg.push_str(&format!(
        "<title>{} — {:?}</title>\n",
        trajectory.episode_id, trajectory.decision
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for e in scene.edges() {
        let (Ok(u), Ok(v)) = (scene.viewpoint(&e.u), scene.viewpoint(&e.v)) else {
            continue;
        };
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"#cccccc\" stroke-width=\"2\"/>\n",
            tx(u.position.x), ty(u.position.y), tx(v.position.x), ty(v.position.y)
        ));
    }
    // Stable small palette keyed by room order.
    const ROOM_COLORS: &[&str] = &[
        "#4c78a8", "#f58518", "#54a24b", "#b279a2", "#e45756", "#72b7b2", "#eeca3b",
    ];
    let room_color: BTreeMap<_, _> = scene
        .rooms()
        .keys()
        .enumerate()
        .map(|(i, r)| (r.clone(), ROOM_COLORS[i % ROOM_COLORS.len()]))
        .collect();
    for v in scene.viewpoints() {
        let color = room_color.get(&v.room_id).copied().unwrap_or("#888888");
        svg.push_str(&format!(
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"5\" fill=\"{}\"/>\n",
            tx(v.position.x),
            ty(v.position.y),
            color
        ));
    }
    let points: Vec<String> = trajectory
        .viewpoints
        .iter()
        .filter_map(|id| scene.viewpoint(id).ok())
        .map(|v| format!("{:.1},{:.1}", tx(v.position.x), ty(v.position.y)))
        .collect();
    if points.len() >= 2 {
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#d62728\" stroke-width=\"3\" stroke-opacity=\"0.8\"/>\n",
            points.join(" ")
        ));
    }
    if let Some(first) = trajectory
        .viewpoints
        .first()
        .and_then(|id| scene.viewpoint(id).ok())
    {
        svg.push_str(&format!(
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"8\" fill=\"none\" stroke=\"#000000\" stroke-width=\"2\"/>\n",
            tx(first.position.x),
            ty(first.position.y)
        ));
    }
    if let Some(last) = trajectory
        .viewpoints
        .last()
        .and_then(|id| scene.viewpoint(id).ok())
    {
        svg.push_str(&format!(
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"12\" height=\"12\" fill=\"none\" stroke=\"#d62728\" stroke-width=\"2\"/>\n",
            tx(last.position.x) - 6.0,
            ty(last.position.y) - 6.0
        ));
    }
    svg.push_str("</svg>\n");
    svg
}
