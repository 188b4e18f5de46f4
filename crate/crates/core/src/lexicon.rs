//! Keyword-lexicon extraction of entity mentions and action claims from
//! reasoning traces, plus the manual-agreement audit sheet.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::Corpus;

const DEFAULT_LEXICON: &str = include_str!("../config/lexicon.toml");

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid lexicon: {0}")]
    Parse(String),
    #[error("category `{0}` has no usable phrase")]
    EmptyCategory(String),
}

macro_rules! category_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $label:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(&self) -> &'static str {
                match self { $($name::$variant => $label),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;

            /// Accepts the snake_case label; spaces and hyphens are read as underscores.
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let key = s.trim().to_ascii_lowercase().replace([' ', '-'], "_");
                match key.as_str() {
                    $($label => Ok($name::$variant),)+
                    _ => Err(format!("unknown {} `{}`", stringify!($name), s)),
                }
            }
        }
    };
}

category_enum!(
    /// Scene entities a trace can mention.
    EntityCategory {
        LeadVehicle => "lead_vehicle",
        Pedestrian => "pedestrian",
        AdjacentVehicle => "adjacent_vehicle",
        CrossTraffic => "cross_traffic",
        Cyclist => "cyclist",
        TrafficLight => "traffic_light",
        StopSign => "stop_sign",
        Construction => "construction",
        ParkedVehicle => "parked_vehicle",
        TruckBus => "truck_bus",
    }
);

category_enum!(
    /// Driving actions a trace can claim.
    ActionCategory {
        Stop => "stop",
        Decelerate => "decelerate",
        Accelerate => "accelerate",
        KeepLane => "keep_lane",
        TurnLeft => "turn_left",
        TurnRight => "turn_right",
        NudgeLeft => "nudge_left",
        NudgeRight => "nudge_right",
        Yield => "yield",
        Proceed => "proceed",
    }
);

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParsedTrace {
    pub entities: BTreeSet<EntityCategory>,
    pub actions: BTreeSet<ActionCategory>,
    pub normalized_text: String,
}

/// How two traces are compared when deciding whether reasoning changed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceEquality {
    /// Normalized strings must be identical.
    #[default]
    Text,
    /// Entity and action sets must be identical.
    Category,
}

impl FromStr for TraceEquality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(Self::Text),
            "category" => Ok(Self::Category),
            other => Err(format!("unknown trace equality mode `{other}`")),
        }
    }
}

/// Lowercases, deletes apostrophes, turns every other non-alphanumeric
/// character into a space (keeping hyphens that join two alphanumerics), and
/// collapses whitespace.
pub fn normalize(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut buf = String::with_capacity(text.len());
    for (i, &c) in chars.iter().enumerate() {
        if c.is_alphanumeric() {
            buf.extend(c.to_lowercase());
        } else if c == '\'' || c == '\u{2019}' {
            // contractions collapse: "don't" -> "dont"
        } else if c == '-'
            && i > 0
            && chars[i - 1].is_alphanumeric()
            && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric())
        {
            buf.push('-');
        } else {
            buf.push(' ');
        }
    }
    buf.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LexiconFile {
    #[serde(default)]
    negation: Option<NegationFile>,
    #[serde(default)]
    entities: BTreeMap<EntityCategory, Vec<String>>,
    #[serde(default)]
    actions: BTreeMap<ActionCategory, Vec<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NegationFile {
    cues: Vec<String>,
    window: usize,
}

type Phrase = Vec<String>;

/// Category → phrase mapping with a negation rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    entities: BTreeMap<EntityCategory, Vec<Phrase>>,
    actions: BTreeMap<ActionCategory, Vec<Phrase>>,
    negation_cues: BTreeSet<String>,
    negation_window: usize,
}

impl Default for Lexicon {
    fn default() -> Self {
        Self::from_toml_str(DEFAULT_LEXICON).expect("bundled lexicon is valid")
    }
}

fn tokenize_phrase(p: &str) -> Phrase {
    normalize(p)
        .split(' ')
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn phrases_for<K: Ord + Copy + fmt::Display>(
    raw: BTreeMap<K, Vec<String>>,
) -> Result<BTreeMap<K, Vec<Phrase>>, LexiconError> {
    let mut out = BTreeMap::new();
    for (cat, list) in raw {
        let phrases: Vec<Phrase> = list
            .iter()
            .map(|p| tokenize_phrase(p))
            .filter(|p| !p.is_empty())
            .collect();
        if phrases.is_empty() {
            return Err(LexiconError::EmptyCategory(cat.to_string()));
        }
        out.insert(cat, phrases);
    }
    Ok(out)
}

impl Lexicon {
    pub fn from_toml_str(s: &str) -> Result<Self, LexiconError> {
        let file: LexiconFile = toml::from_str(s).map_err(|e| LexiconError::Parse(e.to_string()))?;
        let (cues, window) = match file.negation {
            Some(n) => (n.cues, n.window),
            None => (Vec::new(), 0),
        };
        Ok(Self {
            entities: phrases_for(file.entities)?,
            actions: phrases_for(file.actions)?,
            negation_cues: cues.iter().map(|c| normalize(c)).filter(|c| !c.is_empty()).collect(),
            negation_window: window,
        })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, LexiconError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| LexiconError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn active_entities(&self) -> impl Iterator<Item = EntityCategory> + '_ {
        self.entities.keys().copied()
    }

    pub fn active_actions(&self) -> impl Iterator<Item = ActionCategory> + '_ {
        self.actions.keys().copied()
    }

    pub fn with_entity_phrase(mut self, cat: EntityCategory, phrase: &str) -> Self {
        let p = tokenize_phrase(phrase);
        if !p.is_empty() {
            self.entities.entry(cat).or_default().push(p);
        }
        self
    }

    pub fn with_action_phrase(mut self, cat: ActionCategory, phrase: &str) -> Self {
        let p = tokenize_phrase(phrase);
        if !p.is_empty() {
            self.actions.entry(cat).or_default().push(p);
        }
        self
    }

    /// Extracts category sets from `text`.
    ///
    /// A category is reported when one of its phrases occurs as a whole-token
    /// sequence that is not negated. A negation cue negates the nearest phrase
    /// occurrence(s) starting within the next `window` tokens, and nothing
    /// further: in "no pedestrians present keep lane" only the pedestrian
    /// mention is negated.
    pub fn parse(&self, text: &str) -> ParsedTrace {
        let normalized_text = normalize(text);
        let tokens: Vec<&str> = if normalized_text.is_empty() {
            Vec::new()
        } else {
            normalized_text.split(' ').collect()
        };

        enum Cat {
            E(EntityCategory),
            A(ActionCategory),
        }
        let mut hits: Vec<(usize, Cat)> = Vec::new();
        for (cat, phrases) in &self.entities {
            for p in phrases {
                hits.extend(occurrences(&tokens, p).map(|s| (s, Cat::E(*cat))));
            }
        }
        for (cat, phrases) in &self.actions {
            for p in phrases {
                hits.extend(occurrences(&tokens, p).map(|s| (s, Cat::A(*cat))));
            }
        }

        let mut negated_starts = BTreeSet::new();
        if self.negation_window > 0 {
            for (cue_pos, tok) in tokens.iter().enumerate() {
                if !self.negation_cues.contains(*tok) {
                    continue;
                }
                let nearest = hits
                    .iter()
                    .map(|(s, _)| *s)
                    .filter(|&s| s > cue_pos && s <= cue_pos + self.negation_window)
                    .min();
                if let Some(s) = nearest {
                    negated_starts.insert(s);
                }
            }
        }

        let mut out = ParsedTrace {
            normalized_text,
            ..Default::default()
        };
        for (start, cat) in hits {
            if negated_starts.contains(&start) {
                continue;
            }
            match cat {
                Cat::E(e) => {
                    out.entities.insert(e);
                }
                Cat::A(a) => {
                    out.actions.insert(a);
                }
            }
        }
        out
    }
}

fn occurrences<'a>(tokens: &'a [&str], phrase: &'a [String]) -> impl Iterator<Item = usize> + 'a {
    let n = phrase.len();
    (0..(tokens.len() + 1).saturating_sub(n))
        .filter(move |&i| tokens[i..i + n].iter().zip(phrase).all(|(a, b)| *a == b))
}

/// Free-function form of [`Lexicon::parse`].
pub fn parse_trace(text: &str, lexicon: &Lexicon) -> ParsedTrace {
    lexicon.parse(text)
}

pub fn trace_equal(a: &ParsedTrace, b: &ParsedTrace, mode: TraceEquality) -> bool {
    match mode {
        TraceEquality::Text => a.normalized_text == b.normalized_text,
        TraceEquality::Category => a.entities == b.entities && a.actions == b.actions,
    }
}

pub fn format_set<T: fmt::Display>(set: &BTreeSet<T>) -> String {
    if set.is_empty() {
        "none".to_string()
    } else {
        set.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(";")
    }
}

/// Parses an annotator's cell. `None` means the cell was left blank.
pub fn parse_set<T: FromStr<Err = String> + Ord>(cell: &str) -> Result<Option<BTreeSet<T>>, String> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(None);
    }
    if cell.eq_ignore_ascii_case("none") || cell == "-" {
        return Ok(Some(BTreeSet::new()));
    }
    cell.split([';', ','])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(T::from_str)
        .collect::<Result<BTreeSet<T>, _>>()
        .map(Some)
}

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("requested {requested} clips but the corpus has only {available}")]
    TooManyClips { requested: usize, available: usize },
    #[error("audit sheet row {row}: {message}")]
    BadRow { row: usize, message: String },
    #[error("audit sheet: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub clip_id: String,
    pub seed: i64,
    pub coc_text: String,
    pub machine_entities: String,
    pub machine_actions: String,
    pub human_entities: String,
    pub human_actions: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditSheet {
    pub seed: u64,
    pub rows: Vec<AuditRow>,
}

/// Draws `n` clips with a seeded generator and lists each clip's
/// lowest-seed baseline trace with blank annotation columns.
pub fn audit_sample(corpus: &Corpus, lexicon: &Lexicon, n: usize, seed: u64) -> Result<AuditSheet, AuditError> {
    let mut first: BTreeMap<&str, &crate::datamodel::InferenceRecord> = BTreeMap::new();
    for (_, r) in corpus.baseline_records() {
        first
            .entry(r.clip_id.as_str())
            .and_modify(|cur| {
                if r.seed < cur.seed {
                    *cur = r;
                }
            })
            .or_insert(r);
    }
    if n > first.len() {
        return Err(AuditError::TooManyClips {
            requested: n,
            available: first.len(),
        });
    }
    let clips: Vec<_> = first.values().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, clips.len(), n).into_vec();
    picked.sort_unstable();
    let rows = picked
        .into_iter()
        .map(|i| {
            let r = clips[i];
            let parsed = lexicon.parse(&r.coc_text);
            AuditRow {
                clip_id: r.clip_id.clone(),
                seed: r.seed,
                coc_text: r.coc_text.clone(),
                machine_entities: format_set(&parsed.entities),
                machine_actions: format_set(&parsed.actions),
                human_entities: String::new(),
                human_actions: String::new(),
            }
        })
        .collect();
    Ok(AuditSheet { seed, rows })
}

impl AuditSheet {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), AuditError> {
        let mut out = csv::Writer::from_writer(w);
        for row in &self.rows {
            out.serialize(row)?;
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, AuditError> {
        let mut rd = csv::Reader::from_reader(r);
        let rows = rd.deserialize().collect::<Result<Vec<AuditRow>, _>>()?;
        Ok(Self { seed: 0, rows })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditScore {
    pub rows: usize,
    pub entity_rows_scored: usize,
    pub entity_agreements: usize,
    /// Percent of scored rows whose entity sets agree exactly.
    pub entity_agreement_pct: Option<f64>,
    pub action_rows_scored: usize,
    pub action_agreements: usize,
    pub action_agreement_pct: Option<f64>,
}

/// Clip-level agreement between machine and human columns; blank human
/// cells are skipped.
pub fn score_audit(sheet: &AuditSheet) -> Result<AuditScore, AuditError> {
    let mut s = AuditScore {
        rows: sheet.rows.len(),
        entity_rows_scored: 0,
        entity_agreements: 0,
        entity_agreement_pct: None,
        action_rows_scored: 0,
        action_agreements: 0,
        action_agreement_pct: None,
    };
    let bad = |row: usize, message: String| AuditError::BadRow { row: row + 1, message };
    for (i, row) in sheet.rows.iter().enumerate() {
        if let Some(human) = parse_set::<EntityCategory>(&row.human_entities).map_err(|m| bad(i, m))? {
            let machine = parse_set::<EntityCategory>(&row.machine_entities)
                .map_err(|m| bad(i, m))?
                .unwrap_or_default();
            s.entity_rows_scored += 1;
            s.entity_agreements += usize::from(human == machine);
        }
        if let Some(human) = parse_set::<ActionCategory>(&row.human_actions).map_err(|m| bad(i, m))? {
            let machine = parse_set::<ActionCategory>(&row.machine_actions)
                .map_err(|m| bad(i, m))?
                .unwrap_or_default();
            s.action_rows_scored += 1;
            s.action_agreements += usize::from(human == machine);
        }
    }
    let pct = |a: usize, n: usize| (n > 0).then(|| 100.0 * a as f64 / n as f64);
    s.entity_agreement_pct = pct(s.entity_agreements, s.entity_rows_scored);
    s.action_agreement_pct = pct(s.action_agreements, s.action_rows_scored);
    Ok(s)
}
