//! Baseline trajectory metrics and the fidelity-versus-error validation.

mod ksg;
pub mod special;

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::datamodel::{interpolate, Corpus, Trajectory, Waypoint};
use crate::lexicon::normalize;

pub use ksg::{ksg_mi, MiEstimate};

/// minADE above which a prediction counts as a safety failure, in metres.
pub const SAFETY_FAILURE_M: f64 = 5.0;
pub const DEFAULT_MI_K: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("sample and ground truth do not overlap in time")]
    NoOverlap,
    #[error("no trajectory samples")]
    NoSamples,
    #[error("zero variance in {0}")]
    DegenerateVariance(&'static str),
    #[error("need at least {needed} points, got {n}")]
    TooFewPoints { n: usize, needed: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("non-finite input")]
    NonFinite,
    #[error("fidelity {0} outside [0, 1]")]
    FidelityRange(f64),
}

/// Compensated (Neumaier) summation.
pub fn stable_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Arithmetic mean; NaN for an empty slice.
pub fn mean(values: &[f64]) -> f64 {
    stable_sum(values) / values.len() as f64
}

pub fn population_std(values: &[f64]) -> f64 {
    let m = mean(values);
    let dev: Vec<f64> = values.iter().map(|v| (v - m) * (v - m)).collect();
    mean(&dev).sqrt()
}

/// Linear interpolation between order statistics; `p` in percent.
/// `sorted` must be ascending and non-empty.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = (p / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (rank - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean displacement between `sample` and the truth interpolated at the
/// sample's timestamps, over the overlapping part of the horizon.
pub fn ade(sample: &Trajectory, truth: &[Waypoint]) -> Result<f64, StatsError> {
    let (Some(first), Some(last)) = (truth.first(), truth.last()) else {
        return Err(StatsError::NoOverlap);
    };
    let errs: Vec<f64> = sample
        .points
        .iter()
        .filter(|p| p.t >= first.t && p.t <= last.t)
        .filter_map(|p| interpolate(truth, p.t).map(|(x, y)| (p.x - x).hypot(p.y - y)))
        .collect();
    if errs.is_empty() {
        return Err(StatsError::NoOverlap);
    }
    Ok(mean(&errs))
}

pub fn min_ade(samples: &[Trajectory], truth: &[Waypoint]) -> Result<f64, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::NoSamples);
    }
    let mut best = f64::INFINITY;
    for s in samples {
        best = best.min(ade(s, truth)?);
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Pearson {
    pub r: f64,
    pub t: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Two-sided p-value of a Pearson coefficient `r` over `n` points.
pub fn pearson_p_value(r: f64, n: usize) -> (f64, f64) {
    let df = (n - 2) as f64;
    let t = r * df.sqrt() / (1.0 - r * r).max(0.0).sqrt();
    (t, special::student_t_two_sided(t, df))
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<Pearson, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return Err(StatsError::TooFewPoints { n, needed: 3 });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let (mx, my) = (mean(x), mean(y));
    let dx: Vec<f64> = x.iter().map(|v| v - mx).collect();
    let dy: Vec<f64> = y.iter().map(|v| v - my).collect();
    let sxx = stable_sum(&dx.iter().map(|d| d * d).collect::<Vec<_>>());
    let syy = stable_sum(&dy.iter().map(|d| d * d).collect::<Vec<_>>());
    let sxy = stable_sum(&dx.iter().zip(&dy).map(|(a, b)| a * b).collect::<Vec<_>>());
    if sxx == 0.0 {
        return Err(StatsError::DegenerateVariance("x"));
    }
    if syy == 0.0 {
        return Err(StatsError::DegenerateVariance("y"));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let (t, p_value) = pearson_p_value(r, n);
    Ok(Pearson { r, t, p_value, n })
}

/// Fixed fidelity bins: `[0, .25)`, `[.25, .5)`, `[.5, .67)`, `[.67, 1]`.
pub const QUARTILE_EDGES: [f64; 5] = [0.0, 0.25, 0.5, 0.67, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuartileBin {
    pub label: String,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// `None` for an empty bin.
    pub mean_ade: Option<f64>,
}

pub fn quartile_bin(f: f64) -> usize {
    QUARTILE_EDGES[1..4].iter().take_while(|&&e| f >= e).count()
}

pub fn quartile_analysis(fidelity: &[f64], ade: &[f64]) -> Result<Vec<QuartileBin>, StatsError> {
    if fidelity.len() != ade.len() {
        return Err(StatsError::LengthMismatch(fidelity.len(), ade.len()));
    }
    if let Some(&f) = fidelity.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(StatsError::FidelityRange(f));
    }
    let mut bins: [Vec<f64>; 4] = Default::default();
    for (&f, &a) in fidelity.iter().zip(ade) {
        bins[quartile_bin(f)].push(a);
    }
    Ok(bins
        .iter()
        .enumerate()
        .map(|(i, vals)| {
            let (lo, hi) = (QUARTILE_EDGES[i], QUARTILE_EDGES[i + 1]);
            let label = match i {
                0 => format!("F < {hi:.2}"),
                3 => format!("F >= {lo:.2}"),
                _ => format!("{lo:.2} <= F < {hi:.2}"),
            };
            QuartileBin {
                label,
                lo,
                hi,
                count: vals.len(),
                mean_ade: (!vals.is_empty()).then(|| mean(vals)),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FidelityCorrelation {
    pub n: usize,
    pub pearson_r: f64,
    pub t: f64,
    pub p_value: f64,
    pub mi_nats: f64,
    pub mi_raw: f64,
    pub mi_k: usize,
    pub quartiles: Vec<QuartileBin>,
}

pub fn fidelity_correlation(
    fidelity: &[f64],
    ade: &[f64],
    mi_k: usize,
    seed: u64,
) -> Result<FidelityCorrelation, StatsError> {
    let quartiles = quartile_analysis(fidelity, ade)?;
    let p = pearson(fidelity, ade)?;
    let mi = ksg_mi(fidelity, ade, mi_k, seed)?;
    Ok(FidelityCorrelation {
        n: p.n,
        pearson_r: p.r,
        t: p.t,
        p_value: p.p_value,
        mi_nats: mi.nats,
        mi_raw: mi.raw,
        mi_k,
        quartiles,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineStats {
    pub records: usize,
    pub scored_records: usize,
    /// Records whose clip has no future, or whose horizon does not overlap it.
    pub unscored_records: usize,
    pub mean_minade: Option<f64>,
    pub std_minade: Option<f64>,
    pub median_minade: Option<f64>,
    pub p90: Option<f64>,
    pub p95: Option<f64>,
    pub safety_failures: usize,
    pub safety_failure_share: Option<f64>,
    pub unique_traces: usize,
    pub unique_trace_share: Option<f64>,
    pub clips: usize,
    /// Clips with at least two seeds.
    pub multi_seed_clips: usize,
    pub inconsistent_clips: Option<usize>,
    pub clip_inconsistency_share: Option<f64>,
}

/// minADE of a record against its clip's future, if it can be scored.
pub fn record_min_ade(corpus: &Corpus, record: &crate::datamodel::InferenceRecord) -> Option<f64> {
    let fut = corpus.future(&record.clip_id)?;
    min_ade(&record.trajectories, &fut.points).ok()
}

/// Baseline statistics over the non-perturbed records.
pub fn baseline_stats(corpus: &Corpus) -> BaselineStats {
    let mut ades = Vec::new();
    let mut traces: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    let mut records = 0;
    for (_, r) in corpus.baseline_records() {
        records += 1;
        if let Some(a) = record_min_ade(corpus, r) {
            ades.push(a);
        }
        traces
            .entry(r.clip_id.as_str())
            .or_default()
            .push(normalize(&r.coc_text));
    }
    let scored = ades.len();
    let mut sorted = ades.clone();
    sorted.sort_by(f64::total_cmp);
    let some = |f: &dyn Fn() -> f64| (scored > 0).then(f);
    let safety_failures = ades.iter().filter(|&&a| a > SAFETY_FAILURE_M).count();

    let unique: BTreeSet<&str> = traces.values().flatten().map(String::as_str).collect();
    let multi: Vec<&Vec<String>> = traces.values().filter(|t| t.len() >= 2).collect();
    let inconsistent = multi.iter().filter(|t| t.iter().any(|s| s != &t[0])).count();
    BaselineStats {
        records,
        scored_records: scored,
        unscored_records: records - scored,
        mean_minade: some(&|| mean(&ades)),
        std_minade: some(&|| population_std(&ades)),
        median_minade: some(&|| percentile(&sorted, 50.0)),
        p90: some(&|| percentile(&sorted, 90.0)),
        p95: some(&|| percentile(&sorted, 95.0)),
        safety_failures,
        safety_failure_share: some(&|| safety_failures as f64 / scored as f64),
        unique_traces: unique.len(),
        unique_trace_share: (records > 0).then(|| unique.len() as f64 / records as f64),
        clips: traces.len(),
        multi_seed_clips: multi.len(),
        inconsistent_clips: (!multi.is_empty()).then_some(inconsistent),
        clip_inconsistency_share: (!multi.is_empty()).then(|| inconsistent as f64 / multi.len() as f64),
    }
}
