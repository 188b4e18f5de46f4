//! Baseline/perturbed pair classification and epistemic spread.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{interpolate, InferenceRecord, Trajectory};
use crate::lexicon::{parse_trace, trace_equal, Lexicon, TraceEquality};
use crate::stats::mean;

#[derive(Debug, Error, PartialEq)]
pub enum CounterfactualError {
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("samples have different horizons")]
    MisalignedSamples,
    #[error("records do not form a baseline/perturbed pair: {0}")]
    MismatchedPair(String),
    #[error("corpus has no baseline/perturbed pairs")]
    NoPairs,
    #[error("thresholds must be positive and finite")]
    InvalidThresholds,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairThresholds {
    /// Trajectory-change threshold, metres.
    pub delta_tau: f64,
    /// Epistemic spread above which a pair counts as high-spread, metres.
    pub spread_high: f64,
}

impl Default for PairThresholds {
    fn default() -> Self {
        Self {
            delta_tau: 0.5,
            spread_high: 0.35,
        }
    }
}

impl PairThresholds {
    pub fn validate(&self) -> Result<(), CounterfactualError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(self.delta_tau) && ok(self.spread_high) {
            Ok(())
        } else {
            Err(CounterfactualError::InvalidThresholds)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Faithful,
    SilentFailure,
    ReasonOnlyShift,
    Robust,
}

impl OutcomeKind {
    pub const ALL: [OutcomeKind; 4] = [
        OutcomeKind::Faithful,
        OutcomeKind::SilentFailure,
        OutcomeKind::ReasonOnlyShift,
        OutcomeKind::Robust,
    ];

    pub fn from_changes(reasoning_changed: bool, trajectory_changed: bool) -> Self {
        match (reasoning_changed, trajectory_changed) {
            (true, true) => OutcomeKind::Faithful,
            (false, true) => OutcomeKind::SilentFailure,
            (true, false) => OutcomeKind::ReasonOnlyShift,
            (false, false) => OutcomeKind::Robust,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            OutcomeKind::Faithful => "faithful",
            OutcomeKind::SilentFailure => "silent_failure",
            OutcomeKind::ReasonOnlyShift => "reason_only_shift",
            OutcomeKind::Robust => "robust",
        }
    }

    /// Row label used in report tables.
    pub fn label(&self) -> &'static str {
        match self {
            OutcomeKind::Faithful => "Faithful (r, tau both changed)",
            OutcomeKind::SilentFailure => "Silent failure (tau only)",
            OutcomeKind::ReasonOnlyShift => "Reason-only shift (r only)",
            OutcomeKind::Robust => "Robust (neither)",
        }
    }
}

impl fmt::Display for OutcomeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbationOutcome {
    pub kind: OutcomeKind,
    pub traj_distance: f64,
    pub reasoning_changed: bool,
    /// Spread across the perturbed record's samples; `None` with one sample.
    pub epistemic_spread: Option<f64>,
}

/// Mean pointwise Euclidean distance. Equal horizons compare index by index;
/// otherwise `b` is resampled at `a`'s timestamps.
pub fn trajectory_distance(a: &Trajectory, b: &Trajectory) -> Result<f64, CounterfactualError> {
    if a.points.is_empty() || b.points.is_empty() {
        return Err(CounterfactualError::EmptyTrajectory);
    }
    let d: Vec<f64> = if a.horizon() == b.horizon() {
        a.points.iter().zip(&b.points).map(|(p, q)| p.dist(q)).collect()
    } else {
        a.points
            .iter()
            .map(|p| {
                let (x, y) = interpolate(&b.points, p.t).expect("non-empty");
                (p.x - x).hypot(p.y - y)
            })
            .collect()
    };
    Ok(mean(&d))
}

/// Per-timestep RMS standard deviation across samples (population variance),
/// averaged over the horizon.
pub fn epistemic_uncertainty(samples: &[Trajectory]) -> Result<f64, CounterfactualError> {
    let k = samples.len();
    if k < 2 {
        return Err(CounterfactualError::TooFewSamples(k));
    }
    let t = samples[0].horizon();
    if t == 0 {
        return Err(CounterfactualError::EmptyTrajectory);
    }
    if samples.iter().any(|s| s.horizon() != t) {
        return Err(CounterfactualError::MisalignedSamples);
    }
    let per_step: Vec<f64> = (0..t)
        .map(|i| {
            let xs: Vec<f64> = samples.iter().map(|s| s.points[i].x).collect();
            let ys: Vec<f64> = samples.iter().map(|s| s.points[i].y).collect();
            (variance(&xs) + variance(&ys)).sqrt()
        })
        .collect();
    Ok(mean(&per_step))
}

fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    mean(&v.iter().map(|x| (x - m) * (x - m)).collect::<Vec<_>>())
}

pub fn classify_pair(
    base: &InferenceRecord,
    pert: &InferenceRecord,
    lexicon: &Lexicon,
    th: &PairThresholds,
    mode: TraceEquality,
) -> Result<PerturbationOutcome, CounterfactualError> {
    if base.perturbed || !pert.perturbed {
        return Err(CounterfactualError::MismatchedPair(
            "expected a baseline record followed by a perturbed one".into(),
        ));
    }
    if pert.pair_id.is_none() || base.pair_id != pert.pair_id {
        return Err(CounterfactualError::MismatchedPair(format!(
            "pair ids differ: {:?} vs {:?}",
            base.pair_id, pert.pair_id
        )));
    }
    let pb = parse_trace(&base.coc_text, lexicon);
    let pp = parse_trace(&pert.coc_text, lexicon);
    let reasoning_changed = !trace_equal(&pb, &pp, mode);
    let traj_distance = trajectory_distance(base.primary_trajectory(), pert.primary_trajectory())?;
    let epistemic_spread = match epistemic_uncertainty(&pert.trajectories) {
        Ok(u) => Some(u),
        Err(CounterfactualError::TooFewSamples(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(PerturbationOutcome {
        kind: OutcomeKind::from_changes(reasoning_changed, traj_distance > th.delta_tau),
        traj_distance,
        reasoning_changed,
        epistemic_spread,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KindCount {
    pub count: usize,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbStats {
    pub pairs: usize,
    pub delta_tau: f64,
    pub spread_high: f64,
    pub kinds: BTreeMap<OutcomeKind, KindCount>,
    pub trajectories_changed: usize,
    pub trajectories_changed_share: f64,
    pub reasoning_changed: usize,
    pub reasoning_changed_share: f64,
    /// Pairs whose perturbed record has at least two samples.
    pub spread_pairs: usize,
    pub high_spread: usize,
    pub high_spread_share: Option<f64>,
    pub mean_spread: Option<f64>,
}

impl PerturbStats {
    pub fn aggregate(outcomes: &[PerturbationOutcome], th: &PairThresholds) -> Result<Self, CounterfactualError> {
        let n = outcomes.len();
        if n == 0 {
            return Err(CounterfactualError::NoPairs);
        }
        let share = |c: usize| c as f64 / n as f64;
        let kinds = OutcomeKind::ALL
            .iter()
            .map(|&k| {
                let count = outcomes.iter().filter(|o| o.kind == k).count();
                (
                    k,
                    KindCount {
                        count,
                        share: share(count),
                    },
                )
            })
            .collect();
        let changed = outcomes.iter().filter(|o| o.traj_distance > th.delta_tau).count();
        let reasoning = outcomes.iter().filter(|o| o.reasoning_changed).count();
        let spreads: Vec<f64> = outcomes.iter().filter_map(|o| o.epistemic_spread).collect();
        let high = spreads.iter().filter(|&&u| u > th.spread_high).count();
        Ok(Self {
            pairs: n,
            delta_tau: th.delta_tau,
            spread_high: th.spread_high,
            kinds,
            trajectories_changed: changed,
            trajectories_changed_share: share(changed),
            reasoning_changed: reasoning,
            reasoning_changed_share: share(reasoning),
            spread_pairs: spreads.len(),
            high_spread: high,
            high_spread_share: (!spreads.is_empty()).then(|| high as f64 / spreads.len() as f64),
            mean_spread: (!spreads.is_empty()).then(|| mean(&spreads)),
        })
    }
}

/// Default sweep grid: 0.1 to 2.0 m in 0.1 m steps.
pub fn default_sweep() -> Vec<f64> {
    (1..=20).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub delta_tau: f64,
    pub kinds: BTreeMap<OutcomeKind, KindCount>,
    pub trajectories_changed_share: f64,
}

/// Reclassifies already-measured pairs under each `delta_tau`.
pub fn sweep_delta_tau(outcomes: &[PerturbationOutcome], grid: &[f64]) -> Result<Vec<SweepRow>, CounterfactualError> {
    grid.iter()
        .map(|&delta_tau| {
            let th = PairThresholds {
                delta_tau,
                ..PairThresholds::default()
            };
            th.validate()?;
            let reclassified: Vec<PerturbationOutcome> = outcomes
                .iter()
                .map(|o| PerturbationOutcome {
                    kind: OutcomeKind::from_changes(o.reasoning_changed, o.traj_distance > delta_tau),
                    ..o.clone()
                })
                .collect();
            let s = PerturbStats::aggregate(&reclassified, &th)?;
            Ok(SweepRow {
                delta_tau,
                kinds: s.kinds,
                trajectories_changed_share: s.trajectories_changed_share,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::EgoState;
    use proptest::prelude::*;

    fn line(y: f64) -> Trajectory {
        Trajectory::from_xyt(&(0..8).map(|i| (i as f64, y, i as f64 * 0.5)).collect::<Vec<_>>()).unwrap()
    }

    fn rec(text: &str, trajs: Vec<Trajectory>, perturbed: bool) -> InferenceRecord {
        InferenceRecord {
            clip_id: "c".into(),
            chunk_id: "0".into(),
            seed: 0,
            coc_text: text.into(),
            trajectories: trajs,
            ego: EgoState {
                speed: 2.0,
                heading: 0.0,
                timestamp: 0.0,
            },
            prediction_timestamp: 0.0,
            perturbed,
            pair_id: Some("p".into()),
        }
    }

    #[test]
    fn distance_examples() {
        assert_eq!(trajectory_distance(&line(0.0), &line(0.0)).unwrap(), 0.0);
        assert!((trajectory_distance(&line(0.0), &line(2.0)).unwrap() - 2.0).abs() < 1e-12);
        let half: Vec<_> = (0..8)
            .map(|i| (i as f64, if i < 4 { 0.0 } else { 2.0 }, i as f64 * 0.5))
            .collect();
        let half = Trajectory::from_xyt(&half).unwrap();
        assert!((trajectory_distance(&line(0.0), &half).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn distance_resamples_unequal_horizons() {
        let long = Trajectory::from_xyt(
            &(0..16)
                .map(|i| (i as f64 / 2.0, 1.0, i as f64 * 0.25))
                .collect::<Vec<_>>(),
        )
        .unwrap();
        assert!((trajectory_distance(&line(0.0), &long).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uncertainty_examples() {
        assert_eq!(epistemic_uncertainty(&[line(0.0), line(0.0)]).unwrap(), 0.0);
        let shifted = line(0.0).translated(2.0, 0.0);
        assert!((epistemic_uncertainty(&[line(0.0), shifted]).unwrap() - 1.0).abs() < 1e-12);
        let diag = line(0.0).translated(2.0, 2.0);
        assert!((epistemic_uncertainty(&[line(0.0), diag]).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(
            epistemic_uncertainty(&[line(0.0)]),
            Err(CounterfactualError::TooFewSamples(1))
        );
    }

    #[test]
    fn truth_table() {
        let lex = Lexicon::default();
        let th = PairThresholds::default();
        let base = rec("Stop for the pedestrian.", vec![line(0.0)], false);
        let cases = [
            ("Slow down for the truck.", 3.0, OutcomeKind::Faithful),
            ("Stop for the pedestrian.", 3.0, OutcomeKind::SilentFailure),
            ("Slow down for the truck.", 0.0, OutcomeKind::ReasonOnlyShift),
            ("Stop for the pedestrian.", 0.0, OutcomeKind::Robust),
        ];
        for (text, dy, kind) in cases {
            let pert = rec(text, vec![line(dy), line(dy + 1.0)], true);
            let o = classify_pair(&base, &pert, &lex, &th, TraceEquality::Text).unwrap();
            assert_eq!(o.kind, kind, "{text} {dy}");
            assert!((o.epistemic_spread.unwrap() - 0.5).abs() < 1e-12);
        }
        assert!(matches!(
            classify_pair(&base, &base, &lex, &th, TraceEquality::Text),
            Err(CounterfactualError::MismatchedPair(_))
        ));
    }

    #[test]
    fn stats_one_of_each() {
        let outcomes: Vec<_> = [(true, 3.0), (false, 3.0), (true, 0.0), (false, 0.0)]
            .iter()
            .map(|&(r, d)| PerturbationOutcome {
                kind: OutcomeKind::from_changes(r, d > 0.5),
                traj_distance: d,
                reasoning_changed: r,
                epistemic_spread: None,
            })
            .collect();
        let s = PerturbStats::aggregate(&outcomes, &PairThresholds::default()).unwrap();
        assert!(s.kinds.values().all(|k| k.count == 1 && k.share == 0.25));
        assert_eq!(s.mean_spread, None);
        assert_eq!(
            PerturbStats::aggregate(&[], &PairThresholds::default()),
            Err(CounterfactualError::NoPairs)
        );
    }

    fn arb_traj(t: usize) -> impl Strategy<Value = Trajectory> {
        prop::collection::vec((-20.0f64..20.0, -20.0f64..20.0), t).prop_map(|xy| Trajectory {
            points: xy
                .into_iter()
                .enumerate()
                .map(|(i, (x, y))| crate::datamodel::Waypoint::new(x, y, i as f64))
                .collect(),
        })
    }

    proptest! {
        #[test]
        fn distance_is_metric(a in arb_traj(6), b in arb_traj(6), c in arb_traj(6)) {
            let d = |p: &Trajectory, q: &Trajectory| trajectory_distance(p, q).unwrap();
            prop_assert!((d(&a, &b) - d(&b, &a)).abs() < 1e-12);
            prop_assert_eq!(d(&a, &a), 0.0);
            prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-9);
        }

        #[test]
        fn spread_invariances(
            s in prop::collection::vec(arb_traj(5), 2..5),
            dx in -50.0f64..50.0, dy in -50.0f64..50.0, scale in 0.1f64..5.0,
        ) {
            let u = epistemic_uncertainty(&s).unwrap();
            let mut rev = s.clone();
            rev.reverse();
            prop_assert!((epistemic_uncertainty(&rev).unwrap() - u).abs() < 1e-9);
            let moved: Vec<_> = s.iter().map(|t| t.translated(dx, dy)).collect();
            prop_assert!((epistemic_uncertainty(&moved).unwrap() - u).abs() < 1e-9);
            let scaled: Vec<_> = s.iter().map(|t| Trajectory {
                points: t.points.iter().map(|p| crate::datamodel::Waypoint::new(p.x * scale, p.y * scale, p.t)).collect(),
            }).collect();
            prop_assert!((epistemic_uncertainty(&scaled).unwrap() - scale * u).abs() < 1e-8);
        }

        #[test]
        fn raising_delta_never_adds_changes(
            pairs in prop::collection::vec((any::<bool>(), 0.0f64..3.0), 1..50),
        ) {
            let outcomes: Vec<_> = pairs.iter().map(|&(r, d)| PerturbationOutcome {
                kind: OutcomeKind::from_changes(r, d > 0.5),
                traj_distance: d,
                reasoning_changed: r,
                epistemic_spread: None,
            }).collect();
            let rows = sweep_delta_tau(&outcomes, &default_sweep()).unwrap();
            for w in rows.windows(2) {
                let changed = |r: &SweepRow| r.kinds[&OutcomeKind::Faithful].count + r.kinds[&OutcomeKind::SilentFailure].count;
                prop_assert!(changed(&w[1]) <= changed(&w[0]));
            }
        }
    }
}
