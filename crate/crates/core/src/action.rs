//! Kinematic verification of claimed actions and reasoning-action consistency.
//!
//! The stop, decelerate and turn predicates are the canonical ones; the
//! remaining actions use extensions of the same thresholds:
//!
//! | claim        | holds when                    |
//! |--------------|-------------------------------|
//! | stop         | `v_T < eps_v`                 |
//! | decelerate   | `dv < -eps_a`                 |
//! | accelerate   | `dv > eps_a`                  |
//! | turn_left    | `dy > eps_l`                  |
//! | turn_right   | `dy < -eps_l`                 |
//! | keep_lane    | `|dy| < eps_l`                |
//! | nudge_left   | `dy > eps_l / 2`              |
//! | nudge_right  | `dy < -eps_l / 2`             |
//! | yield        | same as decelerate            |
//! | proceed      | not stop (`v_T >= eps_v`)     |

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{EgoState, Trajectory};
use crate::lexicon::ActionCategory;
use crate::stats::mean;

#[derive(Debug, Error, PartialEq)]
pub enum ActionError {
    #[error("final trajectory segment has zero duration")]
    DegenerateTrajectory,
    #[error("trajectory needs at least 2 points, got {0}")]
    TooShort(usize),
    #[error("thresholds must be positive and finite")]
    InvalidThresholds,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicThresholds {
    /// m/s
    pub eps_v: f64,
    /// applied to the speed change over the horizon
    pub eps_a: f64,
    /// m
    pub eps_l: f64,
}

impl Default for KinematicThresholds {
    fn default() -> Self {
        Self {
            eps_v: 0.5,
            eps_a: 1.0,
            eps_l: 1.0,
        }
    }
}

impl KinematicThresholds {
    pub fn validate(&self) -> Result<(), ActionError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(self.eps_v) && ok(self.eps_a) && ok(self.eps_l) {
            Ok(())
        } else {
            Err(ActionError::InvalidThresholds)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kinematics {
    /// Speed over the final segment.
    pub final_speed: f64,
    /// `final_speed - ego.speed`.
    pub delta_v: f64,
    /// Final minus initial lateral offset, positive to the left.
    pub delta_y: f64,
}

pub fn trajectory_kinematics(tau: &Trajectory, ego: &EgoState) -> Result<Kinematics, ActionError> {
    let pts = &tau.points;
    if pts.len() < 2 {
        return Err(ActionError::TooShort(pts.len()));
    }
    let (a, b) = (pts[pts.len() - 2], pts[pts.len() - 1]);
    let dt = b.t - a.t;
    if dt.is_nan() || dt <= 0.0 {
        return Err(ActionError::DegenerateTrajectory);
    }
    let final_speed = a.dist(&b) / dt;
    Ok(Kinematics {
        final_speed,
        delta_v: final_speed - ego.speed,
        delta_y: b.y - pts[0].y,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionFamily {
    Longitudinal,
    Lateral,
}

pub fn family(claim: ActionCategory) -> ActionFamily {
    use ActionCategory::*;
    match claim {
        Stop | Decelerate | Accelerate | Yield | Proceed => ActionFamily::Longitudinal,
        KeepLane | TurnLeft | TurnRight | NudgeLeft | NudgeRight => ActionFamily::Lateral,
    }
}

/// Whether `claim` is one of the canonical predicate families (stop,
/// decelerate, turn) used for action fidelity.
pub fn is_canonical(claim: ActionCategory) -> bool {
    use ActionCategory::*;
    matches!(claim, Stop | Decelerate | TurnLeft | TurnRight)
}

pub fn check_claim(claim: ActionCategory, kin: &Kinematics, th: &KinematicThresholds) -> bool {
    use ActionCategory::*;
    let stop = kin.final_speed < th.eps_v;
    let decel = kin.delta_v < -th.eps_a;
    match claim {
        Stop => stop,
        Decelerate | Yield => decel,
        Accelerate => kin.delta_v > th.eps_a,
        Proceed => !stop,
        KeepLane => kin.delta_y.abs() < th.eps_l,
        TurnLeft => kin.delta_y > th.eps_l,
        TurnRight => kin.delta_y < -th.eps_l,
        NudgeLeft => kin.delta_y > th.eps_l / 2.0,
        NudgeRight => kin.delta_y < -th.eps_l / 2.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MismatchKind {
    Longitudinal,
    Lateral,
    Mixed,
}

impl MismatchKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MismatchKind::Longitudinal => "longitudinal",
            MismatchKind::Lateral => "lateral",
            MismatchKind::Mixed => "mixed",
        }
    }
}

/// Per-record consistency score: fraction of satisfied claims (graded) or
/// all-or-nothing (binary).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConsistencyMode {
    #[default]
    Graded,
    Binary,
}

impl FromStr for ConsistencyMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "graded" => Ok(Self::Graded),
            "binary" => Ok(Self::Binary),
            other => Err(format!("unknown consistency mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyResult {
    pub per_claim: BTreeMap<ActionCategory, bool>,
    /// `None` when the trace claims no action.
    pub score: Option<f64>,
    pub mismatch_kind: Option<MismatchKind>,
}

impl ConsistencyResult {
    pub fn no_claim(&self) -> bool {
        self.per_claim.is_empty()
    }
}

pub fn consistency_from_kinematics(
    claims: &BTreeSet<ActionCategory>,
    kin: &Kinematics,
    th: &KinematicThresholds,
    mode: ConsistencyMode,
) -> ConsistencyResult {
    let per_claim: BTreeMap<_, _> = claims.iter().map(|&c| (c, check_claim(c, kin, th))).collect();
    let satisfied = per_claim.values().filter(|&&ok| ok).count();
    let score = (!per_claim.is_empty()).then(|| match mode {
        ConsistencyMode::Graded => satisfied as f64 / per_claim.len() as f64,
        ConsistencyMode::Binary => f64::from(u8::from(satisfied == per_claim.len())),
    });
    let failed: BTreeSet<ActionFamily> = per_claim
        .iter()
        .filter(|(_, &ok)| !ok)
        .map(|(&c, _)| family(c))
        .collect();
    let mismatch_kind = match (
        failed.contains(&ActionFamily::Longitudinal),
        failed.contains(&ActionFamily::Lateral),
    ) {
        (false, false) => None,
        (true, false) => Some(MismatchKind::Longitudinal),
        (false, true) => Some(MismatchKind::Lateral),
        (true, true) => Some(MismatchKind::Mixed),
    };
    ConsistencyResult {
        per_claim,
        score,
        mismatch_kind,
    }
}

pub fn consistency(
    claims: &BTreeSet<ActionCategory>,
    tau: &Trajectory,
    ego: &EgoState,
    th: &KinematicThresholds,
    mode: ConsistencyMode,
) -> Result<ConsistencyResult, ActionError> {
    let kin = trajectory_kinematics(tau, ego)?;
    Ok(consistency_from_kinematics(claims, &kin, th, mode))
}

/// Indicator that every canonical claim holds. Traces without a canonical
/// claim are vacuously faithful; the second value flags that case.
pub fn action_fidelity(claims: &BTreeSet<ActionCategory>, kin: &Kinematics, th: &KinematicThresholds) -> (f64, bool) {
    let mut canonical = claims.iter().copied().filter(|&c| is_canonical(c)).peekable();
    if canonical.peek().is_none() {
        return (1.0, true);
    }
    let all = canonical.all(|c| check_claim(c, kin, th));
    (f64::from(u8::from(all)), false)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActionRate {
    pub claimed: usize,
    pub satisfied: usize,
    pub satisfaction_rate: f64,
    pub failure_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyRate {
    pub claims: usize,
    pub satisfied: usize,
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MismatchBreakdown {
    pub records: usize,
    pub longitudinal: usize,
    pub lateral: usize,
    pub mixed: usize,
    pub longitudinal_share: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyStats {
    pub mode: ConsistencyMode,
    pub records: usize,
    pub scored_records: usize,
    pub no_claim_records: usize,
    pub mean_score: Option<f64>,
    pub low_threshold: f64,
    pub low_count: usize,
    pub low_share: Option<f64>,
    pub per_action: BTreeMap<ActionCategory, ActionRate>,
    pub longitudinal: FamilyRate,
    pub lateral: FamilyRate,
    pub mismatch: MismatchBreakdown,
}

impl ConsistencyStats {
    /// Records without claims count toward `no_claim_records` only.
    pub fn aggregate(results: &[ConsistencyResult], low_threshold: f64, mode: ConsistencyMode) -> Self {
        let scores: Vec<f64> = results.iter().filter_map(|r| r.score).collect();
        let low_count = scores.iter().filter(|&&s| s < low_threshold).count();
        let mut per_action: BTreeMap<ActionCategory, ActionRate> = BTreeMap::new();
        let mut fam = [(0usize, 0usize); 2];
        for r in results {
            for (&claim, &ok) in &r.per_claim {
                let e = per_action.entry(claim).or_insert(ActionRate {
                    claimed: 0,
                    satisfied: 0,
                    satisfaction_rate: 0.0,
                    failure_rate: 0.0,
                });
                e.claimed += 1;
                e.satisfied += usize::from(ok);
                let slot = &mut fam[family(claim) as usize];
                slot.0 += 1;
                slot.1 += usize::from(ok);
            }
        }
        for e in per_action.values_mut() {
            e.satisfaction_rate = e.satisfied as f64 / e.claimed as f64;
            e.failure_rate = (e.claimed - e.satisfied) as f64 / e.claimed as f64;
        }
        let family_rate = |(claims, satisfied): (usize, usize)| FamilyRate {
            claims,
            satisfied,
            rate: (claims > 0).then(|| satisfied as f64 / claims as f64),
        };
        let kinds: Vec<MismatchKind> = results.iter().filter_map(|r| r.mismatch_kind).collect();
        let count = |k: MismatchKind| kinds.iter().filter(|&&x| x == k).count();
        let mismatch = MismatchBreakdown {
            records: kinds.len(),
            longitudinal: count(MismatchKind::Longitudinal),
            lateral: count(MismatchKind::Lateral),
            mixed: count(MismatchKind::Mixed),
            longitudinal_share: (!kinds.is_empty())
                .then(|| count(MismatchKind::Longitudinal) as f64 / kinds.len() as f64),
        };
        Self {
            mode,
            records: results.len(),
            scored_records: scores.len(),
            no_claim_records: results.len() - scores.len(),
            mean_score: (!scores.is_empty()).then(|| mean(&scores)),
            low_threshold,
            low_count,
            low_share: (!scores.is_empty()).then(|| low_count as f64 / scores.len() as f64),
            per_action,
            longitudinal: family_rate(fam[ActionFamily::Longitudinal as usize]),
            lateral: family_rate(fam[ActionFamily::Lateral as usize]),
            mismatch,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use ActionCategory as A;

    fn ego(speed: f64) -> EgoState {
        EgoState {
            speed,
            heading: 0.0,
            timestamp: 0.0,
        }
    }

    fn kin(v: f64, dv: f64, dy: f64) -> Kinematics {
        Kinematics {
            final_speed: v,
            delta_v: dv,
            delta_y: dy,
        }
    }

    fn claims(c: &[A]) -> BTreeSet<A> {
        c.iter().copied().collect()
    }

    #[test]
    fn kinematics_examples() {
        let t = Trajectory::from_xyt(&[(0.0, 0.0, 0.0), (5.0, 0.0, 1.0), (5.3, 0.0, 2.0)]).unwrap();
        let k = trajectory_kinematics(&t, &ego(5.0)).unwrap();
        assert!((k.final_speed - 0.3).abs() < 1e-12);
        assert!((k.delta_v + 4.7).abs() < 1e-12);
        assert_eq!(k.delta_y, 0.0);

        let straight = Trajectory::from_xyt(&[(0.0, 0.0, 0.0), (4.0, 0.0, 1.0), (8.0, 0.0, 2.0)]).unwrap();
        let k = trajectory_kinematics(&straight, &ego(4.0)).unwrap();
        assert_eq!((k.delta_v, k.delta_y), (0.0, 0.0));

        let change = Trajectory::from_xyt(&[(0.0, 0.0, 0.0), (5.0, 1.5, 1.0), (10.0, 3.5, 2.0)]).unwrap();
        assert_eq!(trajectory_kinematics(&change, &ego(5.0)).unwrap().delta_y, 3.5);
    }

    #[test]
    fn degenerate_final_segment() {
        let t = Trajectory {
            points: vec![
                crate::datamodel::Waypoint::new(0.0, 0.0, 0.0),
                crate::datamodel::Waypoint::new(1.0, 0.0, 0.0),
            ],
        };
        assert_eq!(
            trajectory_kinematics(&t, &ego(1.0)),
            Err(ActionError::DegenerateTrajectory)
        );
    }

    #[test]
    fn claim_examples() {
        let th = KinematicThresholds::default();
        assert!(check_claim(A::Stop, &kin(0.3, 0.0, 0.0), &th));
        assert!(!check_claim(A::Decelerate, &kin(5.0, -0.5, 0.0), &th));
        assert!(check_claim(A::TurnLeft, &kin(5.0, 0.0, 1.5), &th));
        assert!(!check_claim(A::TurnRight, &kin(5.0, 0.0, 1.5), &th));
        // strict inequality at the threshold
        assert!(!check_claim(A::Stop, &kin(0.5, 0.0, 0.0), &th));
        assert!(!check_claim(A::Decelerate, &kin(0.5, -1.0, 0.0), &th));
        assert!(!check_claim(A::TurnLeft, &kin(0.5, 0.0, 1.0), &th));
    }

    #[test]
    fn consistency_examples() {
        let th = KinematicThresholds::default();
        let cont = Trajectory::from_xyt(&[(0.0, 0.0, 0.0), (8.0, 0.0, 1.0), (16.0, 0.0, 2.0)]).unwrap();
        let r = consistency(&claims(&[A::Stop]), &cont, &ego(8.0), &th, ConsistencyMode::Graded).unwrap();
        assert_eq!(r.score, Some(0.0));
        assert_eq!(r.mismatch_kind, Some(MismatchKind::Longitudinal));

        let r = consistency_from_kinematics(
            &claims(&[A::KeepLane]),
            &kin(8.0, 0.0, 0.1),
            &th,
            ConsistencyMode::Graded,
        );
        assert_eq!((r.score, r.mismatch_kind), (Some(1.0), None));

        let r = consistency_from_kinematics(
            &claims(&[A::Stop, A::NudgeLeft]),
            &kin(8.0, 0.0, 0.8),
            &th,
            ConsistencyMode::Graded,
        );
        assert_eq!(r.score, Some(0.5));
        assert_eq!(r.mismatch_kind, Some(MismatchKind::Longitudinal));

        let r = consistency_from_kinematics(
            &claims(&[A::Stop, A::NudgeLeft]),
            &kin(8.0, 0.0, 0.1),
            &th,
            ConsistencyMode::Graded,
        );
        assert_eq!((r.score, r.mismatch_kind), (Some(0.0), Some(MismatchKind::Mixed)));

        let r = consistency_from_kinematics(
            &claims(&[A::Stop, A::KeepLane]),
            &kin(8.0, 0.0, 0.1),
            &th,
            ConsistencyMode::Binary,
        );
        assert_eq!(r.score, Some(0.0));

        let r = consistency_from_kinematics(&claims(&[]), &kin(8.0, 0.0, 0.1), &th, ConsistencyMode::Graded);
        assert!(r.no_claim() && r.score.is_none());
    }

    #[test]
    fn action_fidelity_uses_canonical_claims_only() {
        let th = KinematicThresholds::default();
        assert_eq!(
            action_fidelity(&claims(&[A::KeepLane]), &kin(8.0, 0.0, 5.0), &th),
            (1.0, true)
        );
        assert_eq!(
            action_fidelity(&claims(&[A::Stop, A::KeepLane]), &kin(0.1, -8.0, 5.0), &th),
            (1.0, false)
        );
        assert_eq!(
            action_fidelity(&claims(&[A::Stop, A::TurnLeft]), &kin(0.1, -8.0, 0.0), &th),
            (0.0, false)
        );
    }

    #[test]
    fn aggregate_stats() {
        let th = KinematicThresholds::default();
        let ok = consistency_from_kinematics(
            &claims(&[A::KeepLane, A::NudgeRight]),
            &kin(8.0, 0.0, -0.7),
            &th,
            ConsistencyMode::Graded,
        );
        // nudge_right needs dy < -0.5 and keep_lane |dy| < 1: both hold
        assert_eq!(ok.score, Some(1.0));
        let s = ConsistencyStats::aggregate(&[ok.clone(), ok], 0.5, ConsistencyMode::Graded);
        assert_eq!(s.mean_score, Some(1.0));
        assert_eq!(s.low_share, Some(0.0));
        assert_eq!(s.lateral.rate, Some(1.0));
        assert_eq!(s.longitudinal.rate, None);

        let fail = consistency_from_kinematics(&claims(&[A::Stop]), &kin(8.0, 0.0, 0.0), &th, ConsistencyMode::Graded);
        let none = consistency_from_kinematics(&claims(&[]), &kin(8.0, 0.0, 0.0), &th, ConsistencyMode::Graded);
        let s = ConsistencyStats::aggregate(&[fail, none], 0.5, ConsistencyMode::Graded);
        assert_eq!((s.scored_records, s.no_claim_records, s.low_count), (1, 1, 1));
        assert_eq!(s.per_action[&A::Stop].failure_rate, 1.0);
        assert_eq!(s.mismatch.longitudinal_share, Some(1.0));
    }

    proptest! {
        #[test]
        fn stop_is_monotone(v in 0.0f64..20.0, smaller in 0.0f64..1.0) {
            let th = KinematicThresholds::default();
            if check_claim(A::Stop, &kin(v, 0.0, 0.0), &th) {
                prop_assert!(check_claim(A::Stop, &kin(v * smaller, 0.0, 0.0), &th));
            }
        }

        #[test]
        fn score_ignores_claim_order(mask in 0u32..1024, v in 0.0f64..10.0, dv in -5.0f64..5.0, dy in -4.0f64..4.0) {
            let th = KinematicThresholds::default();
            let all: Vec<A> = A::ALL.iter().copied().filter(|c| mask >> (*c as u32) & 1 == 1).collect();
            let fwd: BTreeSet<A> = all.iter().copied().collect();
            let rev: BTreeSet<A> = all.iter().rev().copied().collect();
            let k = kin(v, dv, dy);
            prop_assert_eq!(
                consistency_from_kinematics(&fwd, &k, &th, ConsistencyMode::Graded),
                consistency_from_kinematics(&rev, &k, &th, ConsistencyMode::Graded)
            );
        }
    }
}
