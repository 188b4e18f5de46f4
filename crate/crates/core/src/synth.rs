//! Synthetic corpora with exactly planted faithfulness properties.
//!
//! Every clip shares one scene: a lead car 15 m ahead, a pedestrian at
//! (8, 3) in pedestrian clips, and optionally an adjacent-lane car and a
//! crossing car. Clips without obstacle context carry the same annotations
//! 3 s away from the prediction time. Every baseline trace claims `stop`;
//! mentioned entities are the relevant ones, edited by the planted labels.
//! Trajectories are straight 8 m/s paths: compliant records brake on the final
//! segment, violating records keep going. Each record is shifted sideways so
//! its ADE is exactly `ade_intercept + fidelity_ade_slope * F_overall`.
//!
//! Rates are turned into counts with `round(rate * denominator)`:
//!
//! | rate                      | denominator                        |
//! |---------------------------|------------------------------------|
//! | `context_rate`            | clips                              |
//! | `pedestrian_scene_rate`   | context clips                      |
//! | `adjacent_vehicle_rate`   | context clips                      |
//! | `cross_traffic_rate`      | context clips                      |
//! | `hallucination_rate`      | records with context               |
//! | `miss_rate`               | records with context               |
//! | `vehicle_miss_rate`       | records with context               |
//! | `stop_violation_rate`     | baseline records                   |
//! | `clip_inconsistency_rate` | clips with at least two seeds      |
//! | `unique_trace_rate`       | baseline records                   |
//! | pair outcome rates        | pairs                              |
//! | `high_spread_rate`        | pairs                              |

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::counterfactual::OutcomeKind;
use crate::datamodel::{
    Corpus, EgoState, GroundTruthFuture, InferenceRecord, LoadError, ObstacleAnnotation, ObstacleClass, Trajectory,
    Waypoint,
};
use crate::lexicon::EntityCategory;

pub const LEDGER_FILE: &str = "ledger.jsonl";

const HORIZON: usize = 64;
const DT: f64 = 0.1;
const EGO_SPEED: f64 = 8.0;
const STOP_FINAL_SPEED: f64 = 0.2;
const PAIR_SHIFT_M: f64 = 2.0;
const CONTEXT_OFFSET_S: f64 = 3.0;
const CHANGED_SUFFIX: &str = " Decelerate due to reduced visibility.";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("infeasible spec: {0}")]
    InfeasibleSpec(String),
    #[error(transparent)]
    Write(#[from] LoadError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("spec: {0}")]
    Spec(#[from] serde_json::Error),
}

fn infeasible<T>(msg: impl Into<String>) -> Result<T, SynthError> {
    Err(SynthError::InfeasibleSpec(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantSpec {
    pub n_clips: usize,
    pub seeds_per_clip: usize,
    pub context_rate: f64,
    pub pedestrian_scene_rate: f64,
    pub adjacent_vehicle_rate: f64,
    pub cross_traffic_rate: f64,
    /// Pedestrian mentioned in a scene without one.
    pub hallucination_rate: f64,
    /// Pedestrian in the scene but not mentioned.
    pub miss_rate: f64,
    /// Lead vehicle not mentioned.
    pub vehicle_miss_rate: f64,
    pub stop_violation_rate: f64,
    pub clip_inconsistency_rate: f64,
    /// Distinct normalized traces over baseline records; `None` keeps the
    /// smallest count the other labels allow.
    pub unique_trace_rate: Option<f64>,
    /// Baseline/perturbed pairs; `None` means one per clip.
    pub n_pairs: Option<usize>,
    pub faithful_rate: f64,
    pub silent_failure_rate: f64,
    pub reason_only_rate: f64,
    pub high_spread_rate: f64,
    pub spread_high_value: f64,
    pub spread_low_value: f64,
    pub fidelity_ade_slope: f64,
    pub ade_intercept: f64,
    pub rng_seed: u64,
}

impl Default for PlantSpec {
    fn default() -> Self {
        Self {
            n_clips: 100,
            seeds_per_clip: 3,
            context_rate: 1.0,
            pedestrian_scene_rate: 0.6,
            adjacent_vehicle_rate: 0.5,
            cross_traffic_rate: 0.25,
            hallucination_rate: 0.0,
            miss_rate: 0.0,
            vehicle_miss_rate: 0.0,
            stop_violation_rate: 0.0,
            clip_inconsistency_rate: 0.0,
            unique_trace_rate: None,
            n_pairs: None,
            faithful_rate: 0.0,
            silent_failure_rate: 0.0,
            reason_only_rate: 0.0,
            high_spread_rate: 0.0,
            spread_high_value: 1.2,
            spread_low_value: 0.2,
            fidelity_ade_slope: -1.0,
            ade_intercept: 2.5,
            rng_seed: 0,
        }
    }
}

impl PlantSpec {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, SynthError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| SynthError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    fn validate(&self) -> Result<(), SynthError> {
        let rates = [
            ("context_rate", self.context_rate),
            ("pedestrian_scene_rate", self.pedestrian_scene_rate),
            ("adjacent_vehicle_rate", self.adjacent_vehicle_rate),
            ("cross_traffic_rate", self.cross_traffic_rate),
            ("hallucination_rate", self.hallucination_rate),
            ("miss_rate", self.miss_rate),
            ("vehicle_miss_rate", self.vehicle_miss_rate),
            ("stop_violation_rate", self.stop_violation_rate),
            ("clip_inconsistency_rate", self.clip_inconsistency_rate),
            ("unique_trace_rate", self.unique_trace_rate.unwrap_or(0.0)),
            ("faithful_rate", self.faithful_rate),
            ("silent_failure_rate", self.silent_failure_rate),
            ("reason_only_rate", self.reason_only_rate),
            ("high_spread_rate", self.high_spread_rate),
        ];
        for (name, r) in rates {
            if !(0.0..=1.0).contains(&r) {
                return infeasible(format!("{name} = {r} is outside [0, 1]"));
            }
        }
        if self.faithful_rate + self.silent_failure_rate + self.reason_only_rate > 1.0 + 1e-12 {
            return infeasible("pair outcome rates sum to more than 1");
        }
        if self.n_clips == 0 || self.seeds_per_clip == 0 {
            return infeasible("need at least one clip and one seed per clip");
        }
        if self.seeds_per_clip < 2 && self.clip_inconsistency_rate > 0.0 {
            return infeasible("clip inconsistency needs at least two seeds per clip");
        }
        if !(self.spread_high_value >= 0.0 && self.spread_low_value >= 0.0) {
            return infeasible("spread values must be non-negative");
        }
        if !(self.fidelity_ade_slope.is_finite() && self.ade_intercept.is_finite()) {
            return infeasible("ADE line must be finite");
        }
        Ok(())
    }
}

fn count(rate: f64, n: usize) -> usize {
    (rate * n as f64).round() as usize
}

/// Planted truth for one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub clip_id: String,
    pub seed: i64,
    pub perturbed: bool,
    pub pair_id: Option<String>,
    pub coc_text: String,
    pub has_context: bool,
    pub clip_consistent: bool,
    pub mentioned: BTreeSet<EntityCategory>,
    pub relevant: BTreeSet<EntityCategory>,
    pub hallucinated: BTreeSet<EntityCategory>,
    pub missed: BTreeSet<EntityCategory>,
    pub stop_violation: bool,
    pub entity_fidelity: Option<f64>,
    pub action_fidelity: f64,
    pub overall_fidelity: Option<f64>,
    pub target_ade: f64,
    pub pair_kind: Option<OutcomeKind>,
    pub epistemic_spread: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruthLedger {
    pub entries: Vec<LedgerEntry>,
}

/// Counts implied by a ledger.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LedgerSummary {
    pub baseline_records: usize,
    pub context_records: usize,
    pub hallucinations: usize,
    pub missed_pedestrian_scenes: usize,
    pub stop_violations: usize,
    pub clips: usize,
    pub inconsistent_clips: usize,
    pub unique_traces: usize,
    pub pair_kinds: BTreeMap<OutcomeKind, usize>,
    pub high_spread_pairs: usize,
}

impl GroundTruthLedger {
    pub fn baseline(&self) -> impl Iterator<Item = &LedgerEntry> {
        self.entries.iter().filter(|e| !e.perturbed)
    }

    pub fn summary(&self, spread_high: f64) -> LedgerSummary {
        let base: Vec<&LedgerEntry> = self.baseline().collect();
        let ctx: Vec<&&LedgerEntry> = base.iter().filter(|e| e.has_context).collect();
        let clips: BTreeSet<&str> = base.iter().map(|e| e.clip_id.as_str()).collect();
        let inconsistent: BTreeSet<&str> = base
            .iter()
            .filter(|e| !e.clip_consistent)
            .map(|e| e.clip_id.as_str())
            .collect();
        let texts: BTreeSet<String> = base.iter().map(|e| crate::lexicon::normalize(&e.coc_text)).collect();
        let pert: Vec<&LedgerEntry> = self.entries.iter().filter(|e| e.perturbed).collect();
        let mut pair_kinds: BTreeMap<OutcomeKind, usize> = OutcomeKind::ALL.iter().map(|&k| (k, 0)).collect();
        for e in &pert {
            if let Some(k) = e.pair_kind {
                *pair_kinds.entry(k).or_default() += 1;
            }
        }
        LedgerSummary {
            baseline_records: base.len(),
            context_records: ctx.len(),
            hallucinations: ctx.iter().map(|e| e.hallucinated.len()).sum(),
            missed_pedestrian_scenes: ctx
                .iter()
                .filter(|e| e.missed.contains(&EntityCategory::Pedestrian))
                .count(),
            stop_violations: base.iter().filter(|e| e.stop_violation).count(),
            clips: clips.len(),
            inconsistent_clips: inconsistent.len(),
            unique_traces: texts.len(),
            pair_kinds,
            high_spread_pairs: pert
                .iter()
                .filter(|e| e.epistemic_spread.is_some_and(|u| u > spread_high))
                .count(),
        }
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<(), SynthError> {
        let path = path.as_ref();
        let io = |source| SynthError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        for e in &self.entries {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self, SynthError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| SynthError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(Self { entries })
    }
}

struct Clip {
    id: String,
    ts: f64,
    context: bool,
    person: bool,
    adjacent: bool,
    cross: bool,
    consistent: bool,
    /// Indices into the baseline record list.
    records: Vec<usize>,
}

struct Draft {
    clip: usize,
    seed: i64,
    hallucinate: bool,
    miss_pedestrian: bool,
    miss_lead: bool,
    violation: bool,
    text: String,
}

fn sample(rng: &mut ChaCha8Rng, n: usize, k: usize) -> BTreeSet<usize> {
    index::sample(rng, n, k.min(n)).into_iter().collect()
}

/// Places `n` labels on records of `groups` (consistent flag, record ids).
/// Consistent groups take labels only as whole blocks.
fn allocate(
    rng: &mut ChaCha8Rng,
    n: usize,
    groups: &[(bool, Vec<usize>)],
    what: &str,
) -> Result<BTreeSet<usize>, SynthError> {
    let loose: Vec<usize> = groups
        .iter()
        .filter(|g| !g.0)
        .flat_map(|g| g.1.iter().copied())
        .collect();
    let mut blocks: Vec<&Vec<usize>> = groups.iter().filter(|g| g.0).map(|g| &g.1).collect();
    blocks.shuffle(rng);
    let mut chosen = BTreeSet::new();
    let mut remaining = n;
    for b in blocks {
        if remaining <= loose.len() {
            break;
        }
        if b.len() <= remaining {
            chosen.extend(b.iter().copied());
            remaining -= b.len();
        }
    }
    if remaining > loose.len() {
        return infeasible(format!(
            "cannot place {n} {what} labels: {} eligible records in inconsistent clips plus whole consistent clips",
            loose.len()
        ));
    }
    chosen.extend(sample(rng, loose.len(), remaining).into_iter().map(|i| loose[i]));
    Ok(chosen)
}

fn phrase(c: EntityCategory) -> &'static str {
    match c {
        EntityCategory::LeadVehicle => "the lead vehicle",
        EntityCategory::Pedestrian => "the pedestrian",
        EntityCategory::AdjacentVehicle => "the adjacent vehicle",
        EntityCategory::CrossTraffic => "the cross traffic",
        _ => unreachable!("synthetic traces mention scene categories only"),
    }
}

fn base_text(mentioned: &BTreeSet<EntityCategory>) -> String {
    let items: Vec<&str> = mentioned.iter().map(|&c| phrase(c)).collect();
    match items.as_slice() {
        [] => "Stop.".to_string(),
        [one] => format!("Stop because of {one}."),
        [init @ .., last] => format!("Stop because of {} and {last}.", init.join(", ")),
    }
}

fn with_variant(base: &str, v: usize) -> String {
    format!("{base} Note {v}.")
}

fn jaccard(m: &BTreeSet<EntityCategory>, r: &BTreeSet<EntityCategory>, p: &BTreeSet<EntityCategory>) -> f64 {
    let num = m.intersection(p).count();
    let den = m.union(r).count();
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

fn straight(violation: bool) -> Trajectory {
    let mut pts: Vec<Waypoint> = (1..=HORIZON)
        .map(|i| {
            let t = i as f64 * DT;
            Waypoint::new(EGO_SPEED * t, 0.0, t)
        })
        .collect();
    if !violation {
        let prev = pts[HORIZON - 2];
        pts[HORIZON - 1].x = prev.x + STOP_FINAL_SPEED * DT;
    }
    Trajectory { points: pts }
}

fn future_points() -> Vec<Waypoint> {
    straight(true).points
}

/// Lateral offset at which `traj` has ADE `target` against `future`.
fn solve_offset(traj: &Trajectory, future: &[Waypoint], target: f64) -> Result<f64, SynthError> {
    let dx: Vec<f64> = traj.points.iter().zip(future).map(|(p, q)| p.x - q.x).collect();
    let ade = |d: f64| crate::stats::mean(&dx.iter().map(|x| x.hypot(d)).collect::<Vec<_>>());
    let floor = ade(0.0);
    if target < floor - 1e-12 {
        return infeasible(format!(
            "target ADE {target:.6} below the achievable minimum {floor:.6}"
        ));
    }
    let (mut lo, mut hi) = (0.0f64, target.max(0.0));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ade(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Builds the corpus and its ledger. Deterministic for a given spec.
pub fn generate(spec: &PlantSpec) -> Result<(Corpus, GroundTruthLedger), SynthError> {
    use EntityCategory as E;
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let k = spec.seeds_per_clip;

    // scenes
    let n_ctx = count(spec.context_rate, spec.n_clips);
    let ctx_set = sample(&mut rng, spec.n_clips, n_ctx);
    let ctx_clips: Vec<usize> = ctx_set.iter().copied().collect();
    let pick_ctx = |rng: &mut ChaCha8Rng, rate: f64| -> BTreeSet<usize> {
        sample(rng, ctx_clips.len(), count(rate, ctx_clips.len()))
            .into_iter()
            .map(|i| ctx_clips[i])
            .collect()
    };
    let person = pick_ctx(&mut rng, spec.pedestrian_scene_rate);
    let adjacent = pick_ctx(&mut rng, spec.adjacent_vehicle_rate);
    let cross = pick_ctx(&mut rng, spec.cross_traffic_rate);
    let n_inconsistent = if k >= 2 {
        count(spec.clip_inconsistency_rate, spec.n_clips)
    } else {
        0
    };
    let inconsistent = sample(&mut rng, spec.n_clips, n_inconsistent);

    let mut clips: Vec<Clip> = (0..spec.n_clips)
        .map(|c| Clip {
            id: format!("clip_{c:04}"),
            ts: 10.0 + c as f64,
            context: ctx_set.contains(&c),
            person: person.contains(&c),
            adjacent: adjacent.contains(&c),
            cross: cross.contains(&c),
            consistent: !inconsistent.contains(&c),
            records: Vec::new(),
        })
        .collect();
    let mut drafts: Vec<Draft> = Vec::new();
    for (c, clip) in clips.iter_mut().enumerate() {
        for s in 0..k {
            clip.records.push(drafts.len());
            drafts.push(Draft {
                clip: c,
                seed: s as i64,
                hallucinate: false,
                miss_pedestrian: false,
                miss_lead: false,
                violation: false,
                text: String::new(),
            });
        }
    }
    let n_records = drafts.len();
    let n_ctx_records = n_ctx * k;

    // text-affecting labels
    let groups = |pred: &dyn Fn(&Clip) -> bool| -> Vec<(bool, Vec<usize>)> {
        clips
            .iter()
            .filter(|c| pred(c))
            .map(|c| (c.consistent, c.records.clone()))
            .collect()
    };
    let halluc = allocate(
        &mut rng,
        count(spec.hallucination_rate, n_ctx_records),
        &groups(&|c| c.context && !c.person),
        "hallucination",
    )?;
    let missp = allocate(
        &mut rng,
        count(spec.miss_rate, n_ctx_records),
        &groups(&|c| c.person),
        "missed-pedestrian",
    )?;
    let missl = allocate(
        &mut rng,
        count(spec.vehicle_miss_rate, n_ctx_records),
        &groups(&|c| c.context),
        "missed-vehicle",
    )?;
    let violations = sample(&mut rng, n_records, count(spec.stop_violation_rate, n_records));
    if violations.len() != count(spec.stop_violation_rate, n_records) {
        return infeasible("stop violations exceed record count");
    }
    for (i, d) in drafts.iter_mut().enumerate() {
        d.hallucinate = halluc.contains(&i);
        d.miss_pedestrian = missp.contains(&i);
        d.miss_lead = missl.contains(&i);
        d.violation = violations.contains(&i);
    }

    // entity sets
    let vehicles: BTreeSet<E> = [E::LeadVehicle, E::AdjacentVehicle, E::CrossTraffic, E::ParkedVehicle].into();
    let sets: Vec<(BTreeSet<E>, BTreeSet<E>, BTreeSet<E>)> = drafts
        .iter()
        .map(|d| {
            let clip = &clips[d.clip];
            let mut relevant: BTreeSet<E> = [E::LeadVehicle].into();
            if clip.person {
                relevant.insert(E::Pedestrian);
            }
            if clip.adjacent {
                relevant.insert(E::AdjacentVehicle);
            }
            if clip.cross {
                relevant.insert(E::CrossTraffic);
            }
            let mut present = vehicles.clone();
            if clip.person {
                present.insert(E::Pedestrian);
            }
            let mut mentioned = relevant.clone();
            if d.hallucinate {
                mentioned.insert(E::Pedestrian);
            }
            if d.miss_pedestrian {
                mentioned.remove(&E::Pedestrian);
            }
            if d.miss_lead {
                mentioned.remove(&E::LeadVehicle);
            }
            (mentioned, relevant, present)
        })
        .collect();

    // texts
    let bases: Vec<String> = sets.iter().map(|s| base_text(&s.0)).collect();
    for clip in &clips {
        let uniform = clip.records.iter().all(|&r| bases[r] == bases[clip.records[0]]);
        for (j, &r) in clip.records.iter().enumerate() {
            drafts[r].text = if !clip.consistent && uniform && j == 1 {
                with_variant(&bases[r], 1)
            } else {
                bases[r].clone()
            };
        }
    }
    let mut freq: HashMap<String, usize> = HashMap::new();
    for d in &drafts {
        *freq.entry(d.text.clone()).or_default() += 1;
    }
    if let Some(rate) = spec.unique_trace_rate {
        let target = count(rate, n_records);
        if freq.len() > target {
            return infeasible(format!(
                "{target} distinct traces requested but the planted labels already force {}",
                freq.len()
            ));
        }
        let mut next_variant = 2;
        let mut retext = |rs: &[usize], drafts: &mut Vec<Draft>, freq: &mut HashMap<String, usize>| {
            let old = drafts[rs[0]].text.clone();
            let new = with_variant(&bases[rs[0]], next_variant);
            next_variant += 1;
            for &r in rs {
                drafts[r].text = new.clone();
            }
            *freq.get_mut(&old).unwrap() -= rs.len();
            freq.insert(new, rs.len());
        };
        for clip in clips.iter().filter(|c| !c.consistent) {
            for &r in &clip.records {
                if freq.len() < target && freq[&drafts[r].text] >= 2 {
                    retext(&[r], &mut drafts, &mut freq);
                }
            }
        }
        for clip in clips.iter().filter(|c| c.consistent) {
            let t = drafts[clip.records[0]].text.clone();
            if freq.len() < target && freq[&t] > clip.records.len() {
                retext(&clip.records, &mut drafts, &mut freq);
            }
        }
        freq.retain(|_, n| *n > 0);
        if freq.len() != target {
            return infeasible(format!(
                "{target} distinct traces requested, at most {} reachable",
                freq.len()
            ));
        }
    }

    // pairs
    let n_pairs = spec.n_pairs.unwrap_or(spec.n_clips);
    if n_pairs > n_records {
        return infeasible(format!("{n_pairs} pairs requested for {n_records} baseline records"));
    }
    let paired: Vec<usize> = sample(&mut rng, n_records, n_pairs).into_iter().collect();
    let n_f = count(spec.faithful_rate, n_pairs);
    let n_s = count(spec.silent_failure_rate, n_pairs);
    let n_r = count(spec.reason_only_rate, n_pairs);
    if n_f + n_s + n_r > n_pairs {
        return infeasible("pair outcome counts exceed the number of pairs");
    }
    let mut kinds: Vec<OutcomeKind> = std::iter::repeat_n(OutcomeKind::Faithful, n_f)
        .chain(std::iter::repeat_n(OutcomeKind::SilentFailure, n_s))
        .chain(std::iter::repeat_n(OutcomeKind::ReasonOnlyShift, n_r))
        .collect();
    kinds.resize(n_pairs, OutcomeKind::Robust);
    kinds.shuffle(&mut rng);
    let high = sample(&mut rng, n_pairs, count(spec.high_spread_rate, n_pairs));

    // records
    let future = future_points();
    let mut records = Vec::with_capacity(n_records + n_pairs);
    let mut ledger = Vec::with_capacity(n_records + n_pairs);
    let pair_of: BTreeMap<usize, usize> = paired.iter().enumerate().map(|(p, &r)| (r, p)).collect();
    let mut perturbed = Vec::new();
    for (i, d) in drafts.iter().enumerate() {
        let clip = &clips[d.clip];
        let (mentioned, relevant, present) = &sets[i];
        let action = if d.violation { 0.0 } else { 1.0 };
        let entity = clip.context.then(|| jaccard(mentioned, relevant, present));
        let overall = entity.map(|e| (e + action) / 2.0);
        let target = spec.ade_intercept + spec.fidelity_ade_slope * overall.unwrap_or(action);
        let raw = straight(d.violation);
        let traj = raw.translated(0.0, solve_offset(&raw, &future, target)?);
        let ego = EgoState {
            speed: EGO_SPEED,
            heading: 0.0,
            timestamp: clip.ts,
        };
        let pair_id = pair_of.get(&i).map(|p| format!("pair_{p:04}"));
        let rec = InferenceRecord {
            clip_id: clip.id.clone(),
            chunk_id: "chunk_0".into(),
            seed: d.seed,
            coc_text: d.text.clone(),
            trajectories: vec![traj.clone()],
            ego,
            prediction_timestamp: clip.ts,
            perturbed: false,
            pair_id: pair_id.clone(),
        };
        let entry = LedgerEntry {
            clip_id: clip.id.clone(),
            seed: d.seed,
            perturbed: false,
            pair_id: pair_id.clone(),
            coc_text: d.text.clone(),
            has_context: clip.context,
            clip_consistent: clip.consistent,
            mentioned: if clip.context {
                mentioned.clone()
            } else {
                BTreeSet::new()
            },
            relevant: if clip.context {
                relevant.clone()
            } else {
                BTreeSet::new()
            },
            hallucinated: if clip.context {
                mentioned.difference(present).copied().collect()
            } else {
                BTreeSet::new()
            },
            missed: if clip.context {
                relevant.difference(mentioned).copied().collect()
            } else {
                BTreeSet::new()
            },
            stop_violation: d.violation,
            entity_fidelity: entity,
            action_fidelity: action,
            overall_fidelity: overall,
            target_ade: target,
            pair_kind: None,
            epistemic_spread: None,
        };
        if let Some(&p) = pair_of.get(&i) {
            let kind = kinds[p];
            let (text_changed, traj_changed) = match kind {
                OutcomeKind::Faithful => (true, true),
                OutcomeKind::SilentFailure => (false, true),
                OutcomeKind::ReasonOnlyShift => (true, false),
                OutcomeKind::Robust => (false, false),
            };
            let u = if high.contains(&p) {
                spec.spread_high_value
            } else {
                spec.spread_low_value
            };
            let first = if traj_changed {
                traj.translated(0.0, PAIR_SHIFT_M)
            } else {
                traj.clone()
            };
            let second = first.translated(0.0, 2.0 * u);
            let text = if text_changed {
                format!("{}{CHANGED_SUFFIX}", d.text)
            } else {
                d.text.clone()
            };
            perturbed.push((
                InferenceRecord {
                    coc_text: text.clone(),
                    trajectories: vec![first, second],
                    perturbed: true,
                    ..rec.clone()
                },
                LedgerEntry {
                    perturbed: true,
                    coc_text: text,
                    pair_kind: Some(kind),
                    epistemic_spread: Some(u),
                    ..entry.clone()
                },
            ));
        }
        records.push(rec);
        ledger.push(entry);
    }
    for (r, e) in perturbed {
        records.push(r);
        ledger.push(e);
    }

    let mut obstacles = Vec::new();
    for clip in &clips {
        let t = if clip.context {
            clip.ts
        } else {
            clip.ts + CONTEXT_OFFSET_S
        };
        let mut put = |category, x, y| {
            obstacles.push(ObstacleAnnotation {
                clip_id: clip.id.clone(),
                category,
                x,
                y,
                timestamp: t,
            })
        };
        put(ObstacleClass::Automobile, 15.0, 0.5);
        if clip.person {
            put(ObstacleClass::Person, 8.0, 3.0);
        }
        if clip.adjacent {
            put(ObstacleClass::Automobile, -3.0, 4.5);
        }
        if clip.cross {
            put(ObstacleClass::Automobile, 10.0, 12.0);
        }
    }
    let futures = clips
        .iter()
        .map(|c| GroundTruthFuture {
            clip_id: c.id.clone(),
            points: future.clone(),
        })
        .collect();
    let corpus = Corpus::from_parts(records, obstacles, futures)?;
    Ok((corpus, GroundTruthLedger { entries: ledger }))
}

/// Writes the corpus files plus `ledger.jsonl` into `dir`.
pub fn write(dir: impl AsRef<Path>, corpus: &Corpus, ledger: &GroundTruthLedger) -> Result<(), SynthError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|source| SynthError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    corpus.save(dir)?;
    ledger.write_jsonl(dir.join(LEDGER_FILE))
}
