//! Domain records and corpus ingestion.
//!
//! Coordinates are in the ego frame at prediction time: `x` is forward-positive
//! and `y` is lateral with positive values to the left. Timestamps are absolute
//! seconds within a clip.
//!
//! Three line-delimited JSON files make up a corpus:
//!
//! * `records.jsonl`: `clip_id`, `chunk_id`, `seed`, `coc_text`, `trajectories`
//!   (array of arrays of `[x, y, t]`), `ego` (`speed`, `heading`, `timestamp`),
//!   `prediction_timestamp`, `perturbed`, `pair_id`.
//! * `obstacles.jsonl`: `clip_id`, `category`, `x`, `y`, `timestamp`.
//! * `futures.jsonl`: `clip_id`, `points` (array of `[x, y, t]`).
//!
//! A perturbed record names the baseline it was derived from through a shared
//! `pair_id`: exactly one non-perturbed record must carry the same value.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default half-width of the obstacle association window, in seconds.
pub const DEFAULT_WINDOW_S: f64 = 0.5;

pub const RECORDS_FILE: &str = "records.jsonl";
pub const OBSTACLES_FILE: &str = "obstacles.jsonl";
pub const FUTURES_FILE: &str = "futures.jsonl";

const RECORD_KEYS: &[&str] = &[
    "clip_id",
    "chunk_id",
    "seed",
    "coc_text",
    "trajectories",
    "ego",
    "prediction_timestamp",
    "perturbed",
    "pair_id",
];
const EGO_KEYS: &[&str] = &["speed", "heading", "timestamp"];
const OBSTACLE_KEYS: &[&str] = &["clip_id", "category", "x", "y", "timestamp"];
const FUTURE_KEYS: &[&str] = &["clip_id", "points"];

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{file}:{line}: schema error: {message}")]
    Schema { file: String, line: usize, message: String },
    #[error("{file}:{line}: perturbed record references pair_id `{pair_id}` but no baseline record carries it")]
    DanglingPair { file: String, line: usize, pair_id: String },
    #[error("pair_id `{pair_id}` is carried by {count} baseline records, expected exactly one")]
    AmbiguousPair { pair_id: String, count: usize },
    #[error("{file}:{line}: timestamps must be strictly increasing ({context})")]
    NonMonotoneTime { file: String, line: usize, context: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error, PartialEq)]
pub enum QueryError {
    #[error("unknown clip `{0}`")]
    UnknownClip(String),
    #[error("association window must be positive and finite, got {0}")]
    InvalidWindow(f64),
}

/// Why a trajectory failed validation.
#[derive(Debug, Error, PartialEq)]
pub enum TrajectoryError {
    #[error("trajectory has {0} points, at least 2 required")]
    TooShort(usize),
    #[error("non-finite coordinate at point {0}")]
    NonFinite(usize),
    #[error("time does not increase between points {0} and {1}")]
    NonMonotone(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    /// m/s, non-negative.
    pub speed: f64,
    /// radians.
    pub heading: f64,
    /// seconds.
    pub timestamp: f64,
}

/// One `(x, y, t)` sample, serialized as a three-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
    pub t: f64,
}

impl Waypoint {
    pub fn new(x: f64, y: f64, t: f64) -> Self {
        Self { x, y, t }
    }

    pub fn dist(&self, other: &Waypoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl From<[f64; 3]> for Waypoint {
    fn from([x, y, t]: [f64; 3]) -> Self {
        Self { x, y, t }
    }
}

impl From<Waypoint> for [f64; 3] {
    fn from(w: Waypoint) -> Self {
        [w.x, w.y, w.t]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Trajectory {
    pub points: Vec<Waypoint>,
}

impl Trajectory {
    /// Builds a trajectory, rejecting anything that violates the type invariants.
    pub fn new(points: Vec<Waypoint>) -> Result<Self, TrajectoryError> {
        let tr = Self { points };
        tr.validate()?;
        Ok(tr)
    }

    pub fn from_xyt(points: &[(f64, f64, f64)]) -> Result<Self, TrajectoryError> {
        Self::new(points.iter().map(|&(x, y, t)| Waypoint::new(x, y, t)).collect())
    }

    pub fn horizon(&self) -> usize {
        self.points.len()
    }

    pub fn validate(&self) -> Result<(), TrajectoryError> {
        validate_points(&self.points)
    }

    /// Linear interpolation of the position at time `t`, clamped to the end points.
    pub fn position_at(&self, t: f64) -> Option<(f64, f64)> {
        interpolate(&self.points, t)
    }

    /// The same path shifted by a constant offset.
    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            points: self
                .points
                .iter()
                .map(|p| Waypoint::new(p.x + dx, p.y + dy, p.t))
                .collect(),
        }
    }
}

fn validate_points(points: &[Waypoint]) -> Result<(), TrajectoryError> {
    if points.len() < 2 {
        return Err(TrajectoryError::TooShort(points.len()));
    }
    for (i, p) in points.iter().enumerate() {
        if !(p.x.is_finite() && p.y.is_finite() && p.t.is_finite()) {
            return Err(TrajectoryError::NonFinite(i));
        }
    }
    for i in 1..points.len() {
        if points[i].t <= points[i - 1].t {
            return Err(TrajectoryError::NonMonotone(i - 1, i));
        }
    }
    Ok(())
}

pub(crate) fn interpolate(points: &[Waypoint], t: f64) -> Option<(f64, f64)> {
    let first = points.first()?;
    let last = points.last()?;
    if t <= first.t {
        return Some((first.x, first.y));
    }
    if t >= last.t {
        return Some((last.x, last.y));
    }
    // first index with time >= t; guaranteed in 1..len by the clamps above
    let hi = points.partition_point(|p| p.t < t);
    let (a, b) = (points[hi - 1], points[hi]);
    let w = (t - a.t) / (b.t - a.t);
    Some((a.x + w * (b.x - a.x), a.y + w * (b.y - a.y)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceRecord {
    pub clip_id: String,
    pub chunk_id: String,
    pub seed: i64,
    pub coc_text: String,
    pub trajectories: Vec<Trajectory>,
    pub ego: EgoState,
    pub prediction_timestamp: f64,
    pub perturbed: bool,
    #[serde(default)]
    pub pair_id: Option<String>,
}

impl InferenceRecord {
    /// First trajectory sample; used wherever a single plan is compared.
    pub fn primary_trajectory(&self) -> &Trajectory {
        &self.trajectories[0]
    }

    fn validate(&self) -> Result<(), String> {
        if self.coc_text.trim().is_empty() {
            return Err("coc_text must be non-empty".into());
        }
        if self.trajectories.is_empty() {
            return Err("at least one trajectory sample is required".into());
        }
        if !(self.ego.speed.is_finite() && self.ego.speed >= 0.0) {
            return Err(format!("ego.speed must be finite and >= 0, got {}", self.ego.speed));
        }
        if !self.ego.heading.is_finite() || !self.ego.timestamp.is_finite() {
            return Err("ego.heading and ego.timestamp must be finite".into());
        }
        if !self.prediction_timestamp.is_finite() {
            return Err("prediction_timestamp must be finite".into());
        }
        let horizon = self.trajectories[0].horizon();
        if self.trajectories.iter().any(|t| t.horizon() != horizon) {
            return Err("all trajectory samples must share the same horizon".into());
        }
        if self.perturbed && self.pair_id.is_none() {
            return Err("perturbed record requires a pair_id".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObstacleClass {
    Automobile,
    Person,
    Trailer,
    Tram,
}

impl ObstacleClass {
    pub const ALL: [ObstacleClass; 4] = [
        ObstacleClass::Automobile,
        ObstacleClass::Person,
        ObstacleClass::Trailer,
        ObstacleClass::Tram,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ObstacleClass::Automobile => "automobile",
            ObstacleClass::Person => "person",
            ObstacleClass::Trailer => "trailer",
            ObstacleClass::Tram => "tram",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleAnnotation {
    pub clip_id: String,
    pub category: ObstacleClass,
    pub x: f64,
    pub y: f64,
    pub timestamp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFuture {
    pub clip_id: String,
    pub points: Vec<Waypoint>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Reject keys outside the documented schema.
    pub strict: bool,
}

#[derive(Debug, Clone)]
pub struct CorpusPaths {
    pub records: PathBuf,
    pub obstacles: PathBuf,
    pub futures: PathBuf,
}

impl CorpusPaths {
    /// The conventional three file names inside `dir`.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        Self {
            records: dir.join(RECORDS_FILE),
            obstacles: dir.join(OBSTACLES_FILE),
            futures: dir.join(FUTURES_FILE),
        }
    }
}

/// A validated, immutable evaluation corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    records: Vec<InferenceRecord>,
    obstacles: BTreeMap<String, Vec<ObstacleAnnotation>>,
    futures: BTreeMap<String, GroundTruthFuture>,
    /// (baseline index, perturbed index) in perturbed-record order.
    pairs: Vec<(usize, usize)>,
}

impl Corpus {
    /// Validates in-memory parts exactly as [`load_corpus`] would.
    pub fn from_parts(
        records: Vec<InferenceRecord>,
        obstacles: Vec<ObstacleAnnotation>,
        futures: Vec<GroundTruthFuture>,
    ) -> Result<Self, LoadError> {
        for (i, r) in records.iter().enumerate() {
            check_record(r, RECORDS_FILE, i + 1)?;
        }
        for (i, o) in obstacles.iter().enumerate() {
            check_obstacle(o, OBSTACLES_FILE, i + 1)?;
        }
        for (i, f) in futures.iter().enumerate() {
            check_future(f, FUTURES_FILE, i + 1)?;
        }
        let lines: Vec<usize> = (1..=records.len()).collect();
        let futures = index_futures(futures.into_iter().enumerate().map(|(i, f)| (i + 1, f)))?;
        Self::assemble(records, &lines, obstacles, futures)
    }

    fn assemble(
        records: Vec<InferenceRecord>,
        record_lines: &[usize],
        obstacles: Vec<ObstacleAnnotation>,
        futures: BTreeMap<String, GroundTruthFuture>,
    ) -> Result<Self, LoadError> {
        let mut baselines: HashMap<&str, Vec<usize>> = HashMap::new();
        for (i, r) in records.iter().enumerate() {
            if !r.perturbed {
                if let Some(pid) = &r.pair_id {
                    baselines.entry(pid.as_str()).or_default().push(i);
                }
            }
        }
        let mut pairs = Vec::new();
        for (i, r) in records.iter().enumerate() {
            if !r.perturbed {
                continue;
            }
            let pid = r.pair_id.as_deref().unwrap_or_default();
            match baselines.get(pid).map(Vec::as_slice) {
                None | Some([]) => {
                    return Err(LoadError::DanglingPair {
                        file: RECORDS_FILE.into(),
                        line: record_lines[i],
                        pair_id: pid.to_string(),
                    })
                }
                Some([base]) => pairs.push((*base, i)),
                Some(many) => {
                    return Err(LoadError::AmbiguousPair {
                        pair_id: pid.to_string(),
                        count: many.len(),
                    })
                }
            }
        }

        let mut by_clip: BTreeMap<String, Vec<ObstacleAnnotation>> = BTreeMap::new();
        for o in obstacles {
            by_clip.entry(o.clip_id.clone()).or_default().push(o);
        }
        for list in by_clip.values_mut() {
            list.sort_by(obstacle_order);
        }

        Ok(Self {
            records,
            obstacles: by_clip,
            futures,
            pairs,
        })
    }

    pub fn records(&self) -> &[InferenceRecord] {
        &self.records
    }

    /// Non-perturbed records, in file order, with their indices.
    pub fn baseline_records(&self) -> impl Iterator<Item = (usize, &InferenceRecord)> {
        self.records.iter().enumerate().filter(|(_, r)| !r.perturbed)
    }

    /// Resolved (baseline, perturbed) pairs.
    pub fn pairs(&self) -> impl Iterator<Item = (&InferenceRecord, &InferenceRecord)> {
        self.pairs.iter().map(|&(b, p)| (&self.records[b], &self.records[p]))
    }

    pub fn pair_count(&self) -> usize {
        self.pairs.len()
    }

    pub fn future(&self, clip_id: &str) -> Option<&GroundTruthFuture> {
        self.futures.get(clip_id)
    }

    pub fn futures(&self) -> impl Iterator<Item = &GroundTruthFuture> {
        self.futures.values()
    }

    /// All obstacle annotations, grouped by clip in clip order.
    pub fn obstacles(&self) -> impl Iterator<Item = &ObstacleAnnotation> {
        self.obstacles.values().flatten()
    }

    pub fn knows_clip(&self, clip_id: &str) -> bool {
        self.obstacles.contains_key(clip_id)
            || self.futures.contains_key(clip_id)
            || self.records.iter().any(|r| r.clip_id == clip_id)
    }

    /// Distinct clip ids among baseline records, sorted.
    pub fn clip_ids(&self) -> BTreeSet<&str> {
        self.baseline_records().map(|(_, r)| r.clip_id.as_str()).collect()
    }

    /// Annotations of `clip_id` with `|timestamp - t| <= window`, ordered by
    /// timestamp, then `x`, then `y`.
    pub fn obstacles_near(&self, clip_id: &str, t: f64, window: f64) -> Result<Vec<&ObstacleAnnotation>, QueryError> {
        if !(window > 0.0 && window.is_finite()) {
            return Err(QueryError::InvalidWindow(window));
        }
        match self.obstacles.get(clip_id) {
            Some(list) => Ok(list.iter().filter(|o| (o.timestamp - t).abs() <= window).collect()),
            None if self.knows_clip(clip_id) => Ok(Vec::new()),
            None => Err(QueryError::UnknownClip(clip_id.to_string())),
        }
    }

    /// Writes the three corpus files into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), LoadError> {
        let paths = CorpusPaths::in_dir(dir);
        write_jsonl(&paths.records, self.records.iter())?;
        write_jsonl(&paths.obstacles, self.obstacles())?;
        write_jsonl(&paths.futures, self.futures.values())?;
        Ok(())
    }
}

fn obstacle_order(a: &ObstacleAnnotation, b: &ObstacleAnnotation) -> std::cmp::Ordering {
    a.timestamp
        .total_cmp(&b.timestamp)
        .then(a.x.total_cmp(&b.x))
        .then(a.y.total_cmp(&b.y))
}

/// Loads and validates a corpus from its three files.
pub fn load_corpus(paths: &CorpusPaths, opts: LoadOptions) -> Result<Corpus, LoadError> {
    let records = read_jsonl::<InferenceRecord>(&paths.records, RECORD_KEYS, opts, |v| {
        match v.get("ego").and_then(|e| e.as_object()) {
            Some(ego) => unknown_key(ego, EGO_KEYS).map(|k| format!("ego.{k}")),
            None => None,
        }
    })?;
    let mut lines = Vec::with_capacity(records.len());
    let mut recs = Vec::with_capacity(records.len());
    for (line, r) in records {
        check_record(&r, &file_label(&paths.records), line)?;
        lines.push(line);
        recs.push(r);
    }

    let obstacles = read_jsonl::<ObstacleAnnotation>(&paths.obstacles, OBSTACLE_KEYS, opts, |_| None)?;
    let mut obs = Vec::with_capacity(obstacles.len());
    for (line, o) in obstacles {
        check_obstacle(&o, &file_label(&paths.obstacles), line)?;
        obs.push(o);
    }

    let futures = read_jsonl::<GroundTruthFuture>(&paths.futures, FUTURE_KEYS, opts, |_| None)?;
    for (line, f) in &futures {
        check_future(f, &file_label(&paths.futures), *line)?;
    }
    let futures = index_futures(futures)?;

    Corpus::assemble(recs, &lines, obs, futures)
}

fn index_futures(
    futures: impl IntoIterator<Item = (usize, GroundTruthFuture)>,
) -> Result<BTreeMap<String, GroundTruthFuture>, LoadError> {
    let mut map = BTreeMap::new();
    for (line, f) in futures {
        if map.contains_key(&f.clip_id) {
            return Err(LoadError::Schema {
                file: FUTURES_FILE.into(),
                line,
                message: format!("duplicate future for clip `{}`", f.clip_id),
            });
        }
        map.insert(f.clip_id.clone(), f);
    }
    Ok(map)
}

fn file_label(path: &Path) -> String {
    path.display().to_string()
}

fn check_record(r: &InferenceRecord, file: &str, line: usize) -> Result<(), LoadError> {
    for (k, tr) in r.trajectories.iter().enumerate() {
        match tr.validate() {
            Ok(()) => {}
            Err(TrajectoryError::NonMonotone(a, b)) => {
                return Err(LoadError::NonMonotoneTime {
                    file: file.into(),
                    line,
                    context: format!("trajectory {k}, points {a} and {b}"),
                })
            }
            Err(e) => {
                return Err(LoadError::Schema {
                    file: file.into(),
                    line,
                    message: format!("trajectory {k}: {e}"),
                })
            }
        }
    }
    r.validate().map_err(|message| LoadError::Schema {
        file: file.into(),
        line,
        message,
    })
}

fn check_obstacle(o: &ObstacleAnnotation, file: &str, line: usize) -> Result<(), LoadError> {
    if o.x.is_finite() && o.y.is_finite() && o.timestamp.is_finite() {
        Ok(())
    } else {
        Err(LoadError::Schema {
            file: file.into(),
            line,
            message: "obstacle coordinates and timestamp must be finite".into(),
        })
    }
}

fn check_future(f: &GroundTruthFuture, file: &str, line: usize) -> Result<(), LoadError> {
    match validate_points(&f.points) {
        Ok(()) => Ok(()),
        Err(TrajectoryError::NonMonotone(a, b)) => Err(LoadError::NonMonotoneTime {
            file: file.into(),
            line,
            context: format!("future points {a} and {b}"),
        }),
        Err(e) => Err(LoadError::Schema {
            file: file.into(),
            line,
            message: e.to_string(),
        }),
    }
}

fn unknown_key(obj: &serde_json::Map<String, serde_json::Value>, allowed: &[&str]) -> Option<String> {
    obj.keys().find(|k| !allowed.contains(&k.as_str())).cloned()
}

fn read_jsonl<T: DeserializeOwned>(
    path: &Path,
    allowed: &[&str],
    opts: LoadOptions,
    nested_check: impl Fn(&serde_json::Value) -> Option<String>,
) -> Result<Vec<(usize, T)>, LoadError> {
    let label = file_label(path);
    let file = File::open(path).map_err(|source| LoadError::Io {
        path: label.clone(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| LoadError::Io {
            path: label.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let schema = |message: String| LoadError::Schema {
            file: label.clone(),
            line: line_no,
            message,
        };
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| schema(e.to_string()))?;
        let Some(obj) = value.as_object() else {
            return Err(schema("expected a JSON object".into()));
        };
        if opts.strict {
            if let Some(k) = unknown_key(obj, allowed).or_else(|| nested_check(&value)) {
                return Err(schema(format!("unknown key `{k}`")));
            }
        }
        let item = serde_json::from_value(value).map_err(|e| schema(e.to_string()))?;
        out.push((line_no, item));
    }
    Ok(out)
}

fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, items: impl Iterator<Item = &'a T>) -> Result<(), LoadError> {
    let io = |source| LoadError::Io {
        path: file_label(path),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| io(e.into()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn traj(pts: &[(f64, f64, f64)]) -> Trajectory {
        Trajectory::from_xyt(pts).unwrap()
    }

    fn record(clip: &str, seed: i64, text: &str) -> InferenceRecord {
        InferenceRecord {
            clip_id: clip.into(),
            chunk_id: "c0".into(),
            seed,
            coc_text: text.into(),
            trajectories: vec![traj(&[(0.0, 0.0, 10.0), (1.0, 0.0, 10.5)])],
            ego: EgoState {
                speed: 2.0,
                heading: 0.0,
                timestamp: 10.0,
            },
            prediction_timestamp: 10.0,
            perturbed: false,
            pair_id: None,
        }
    }

    fn obstacle(clip: &str, t: f64, x: f64, y: f64) -> ObstacleAnnotation {
        ObstacleAnnotation {
            clip_id: clip.into(),
            category: ObstacleClass::Automobile,
            x,
            y,
            timestamp: t,
        }
    }

    fn write_lines(dir: &Path, name: &str, lines: &[String]) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, lines.join("\n")).unwrap();
        p
    }

    fn paths_with(dir: &Path, records: &[String]) -> CorpusPaths {
        CorpusPaths {
            records: write_lines(dir, RECORDS_FILE, records),
            obstacles: write_lines(dir, OBSTACLES_FILE, &[]),
            futures: write_lines(dir, FUTURES_FILE, &[]),
        }
    }

    fn json(r: &InferenceRecord) -> String {
        serde_json::to_string(r).unwrap()
    }

    #[test]
    fn loads_three_records() {
        let dir = tempfile::tempdir().unwrap();
        let lines: Vec<String> = (0..3).map(|s| json(&record("a", s, "stop"))).collect();
        let c = load_corpus(&paths_with(dir.path(), &lines), LoadOptions::default()).unwrap();
        assert_eq!(c.records().len(), 3);
    }

    #[test]
    fn empty_text_is_schema_error_at_line() {
        let dir = tempfile::tempdir().unwrap();
        let lines = vec![json(&record("a", 0, "stop")), json(&record("a", 1, "  "))];
        let err = load_corpus(&paths_with(dir.path(), &lines), LoadOptions::default()).unwrap_err();
        assert!(matches!(err, LoadError::Schema { line: 2, .. }), "{err}");
    }

    #[test]
    fn missing_field_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&json(&record("a", 0, "go"))).unwrap();
        v.as_object_mut().unwrap().remove("seed");
        let lines = vec![json(&record("a", 0, "go")), v.to_string()];
        let err = load_corpus(&paths_with(dir.path(), &lines), LoadOptions::default()).unwrap_err();
        assert!(matches!(err, LoadError::Schema { line: 2, .. }), "{err}");
    }

    #[test]
    fn dangling_pair_detected() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = record("a", 0, "stop");
        p.perturbed = true;
        p.pair_id = Some("p1".into());
        let err = load_corpus(&paths_with(dir.path(), &[json(&p)]), LoadOptions::default()).unwrap_err();
        assert!(matches!(err, LoadError::DanglingPair { line: 1, .. }), "{err}");
    }

    #[test]
    fn perturbed_without_pair_id_rejected() {
        let mut p = record("a", 0, "stop");
        p.perturbed = true;
        let err = Corpus::from_parts(vec![p], vec![], vec![]).unwrap_err();
        assert!(matches!(err, LoadError::Schema { .. }));
    }

    #[test]
    fn pairs_resolve_and_ambiguity_rejected() {
        let mut b = record("a", 0, "stop");
        b.pair_id = Some("p1".into());
        let mut p = b.clone();
        p.perturbed = true;
        let c = Corpus::from_parts(vec![b.clone(), p.clone()], vec![], vec![]).unwrap();
        assert_eq!(c.pair_count(), 1);
        let err = Corpus::from_parts(vec![b.clone(), b, p], vec![], vec![]).unwrap_err();
        assert!(matches!(err, LoadError::AmbiguousPair { count: 2, .. }));
    }

    #[test]
    fn non_monotone_time_detected() {
        let mut r = record("a", 0, "stop");
        r.trajectories[0].points[1].t = 10.0;
        let err = Corpus::from_parts(vec![r], vec![], vec![]).unwrap_err();
        assert!(matches!(err, LoadError::NonMonotoneTime { .. }));
        let f = GroundTruthFuture {
            clip_id: "a".into(),
            points: vec![Waypoint::new(0.0, 0.0, 2.0), Waypoint::new(1.0, 0.0, 1.0)],
        };
        let err = Corpus::from_parts(vec![], vec![], vec![f]).unwrap_err();
        assert!(matches!(err, LoadError::NonMonotoneTime { .. }));
    }

    #[test]
    fn mixed_horizons_rejected() {
        let mut r = record("a", 0, "stop");
        r.trajectories
            .push(traj(&[(0.0, 0.0, 0.0), (1.0, 0.0, 1.0), (2.0, 0.0, 2.0)]));
        assert!(Corpus::from_parts(vec![r], vec![], vec![]).is_err());
    }

    #[test]
    fn strict_mode_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&json(&record("a", 0, "go"))).unwrap();
        v["extra"] = serde_json::json!(1);
        let paths = paths_with(dir.path(), &[v.to_string()]);
        assert!(load_corpus(&paths, LoadOptions { strict: false }).is_ok());
        let err = load_corpus(&paths, LoadOptions { strict: true }).unwrap_err();
        assert!(err.to_string().contains("extra"), "{err}");

        let mut v: serde_json::Value = serde_json::from_str(&json(&record("a", 0, "go"))).unwrap();
        v["ego"]["yaw_rate"] = serde_json::json!(0.1);
        let paths = paths_with(dir.path(), &[v.to_string()]);
        assert!(load_corpus(&paths, LoadOptions { strict: true }).is_err());
    }

    #[test]
    fn unknown_obstacle_category_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let paths = paths_with(dir.path(), &[json(&record("a", 0, "go"))]);
        std::fs::write(
            &paths.obstacles,
            r#"{"clip_id":"a","category":"bicycle","x":1,"y":2,"timestamp":10}"#,
        )
        .unwrap();
        let err = load_corpus(&paths, LoadOptions::default()).unwrap_err();
        assert!(matches!(err, LoadError::Schema { line: 1, .. }));
    }

    #[test]
    fn window_filter_is_closed_interval() {
        let c = Corpus::from_parts(
            vec![record("a", 0, "stop")],
            vec![
                obstacle("a", 10.4, 1.0, 0.0),
                obstacle("a", 10.6, 2.0, 0.0),
                obstacle("a", 9.5, 3.0, 0.0),
            ],
            vec![],
        )
        .unwrap();
        let near = c.obstacles_near("a", 10.0, 0.5).unwrap();
        let ts: Vec<f64> = near.iter().map(|o| o.timestamp).collect();
        assert_eq!(ts, vec![9.5, 10.4]);
    }

    #[test]
    fn window_query_edge_cases() {
        let c = Corpus::from_parts(vec![record("a", 0, "stop")], vec![], vec![]).unwrap();
        assert!(c.obstacles_near("a", 10.0, 0.5).unwrap().is_empty());
        assert_eq!(
            c.obstacles_near("zzz", 10.0, 0.5).unwrap_err(),
            QueryError::UnknownClip("zzz".into())
        );
        assert!(matches!(
            c.obstacles_near("a", 10.0, 0.0),
            Err(QueryError::InvalidWindow(_))
        ));
    }

    #[test]
    fn interpolation_clamps() {
        let t = traj(&[(0.0, 0.0, 0.0), (2.0, 4.0, 1.0)]);
        assert_eq!(t.position_at(0.5), Some((1.0, 2.0)));
        assert_eq!(t.position_at(-1.0), Some((0.0, 0.0)));
        assert_eq!(t.position_at(3.0), Some((2.0, 4.0)));
    }

    proptest! {
        #[test]
        fn save_then_load_is_identity(
            seeds in proptest::collection::vec(0i64..1000, 1..6),
            xs in proptest::collection::vec(-50.0f64..50.0, 1..6),
        ) {
            let records: Vec<_> = seeds.iter().enumerate()
                .map(|(i, &s)| record(&format!("clip{}", i % 2), s, &format!("stop {i}")))
                .collect();
            let obstacles: Vec<_> = xs.iter().map(|&x| obstacle("clip0", 10.0 + x / 100.0, x, -x / 3.0)).collect();
            let futures = vec![GroundTruthFuture {
                clip_id: "clip0".into(),
                points: vec![Waypoint::new(0.1, 0.2, 10.0), Waypoint::new(1.0 / 3.0, 0.7, 10.1)],
            }];
            let c = Corpus::from_parts(records, obstacles, futures).unwrap();
            let dir = tempfile::tempdir().unwrap();
            c.save(dir.path()).unwrap();
            let back = load_corpus(&CorpusPaths::in_dir(dir.path()), LoadOptions { strict: true }).unwrap();
            prop_assert_eq!(back, c);
        }

        #[test]
        fn window_output_is_subset(t in 0.0f64..20.0, w in 0.01f64..5.0,
            ts in proptest::collection::vec(0.0f64..20.0, 0..20)) {
            let obs: Vec<_> = ts.iter().map(|&s| obstacle("a", s, s, 0.0)).collect();
            let c = Corpus::from_parts(vec![record("a", 0, "x")], obs, vec![]).unwrap();
            let near = c.obstacles_near("a", t, w).unwrap();
            prop_assert_eq!(near.len(), ts.iter().filter(|&&s| (s - t).abs() <= w).count());
            prop_assert!(near.iter().all(|o| (o.timestamp - t).abs() <= w));
            prop_assert!(near.windows(2).all(|p| p[0].timestamp <= p[1].timestamp));
        }
    }
}
