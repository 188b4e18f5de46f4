//! Entity verification: spatial relevance of ground-truth obstacles and the
//! Jaccard-style entity fidelity with hallucination and miss accounting.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{ObstacleAnnotation, ObstacleClass};
use crate::lexicon::EntityCategory;
use crate::stats::{mean, population_std};

const DEFAULT_RULES: &str = include_str!("../config/rules.toml");

#[derive(Debug, Error)]
pub enum EntityError {
    #[error("no record has an obstacle within the association window")]
    NoObstacleContext,
    #[error("invalid relevance rules: {0}")]
    InvalidRules(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// An interval on the real line given by optional strict/non-strict bounds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interval {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ge: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub le: Option<f64>,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        self.gt.is_none_or(|b| v > b)
            && self.ge.is_none_or(|b| v >= b)
            && self.lt.is_none_or(|b| v < b)
            && self.le.is_none_or(|b| v <= b)
    }

    fn validate(&self) -> Result<(), String> {
        if self.gt.is_some() && self.ge.is_some() {
            return Err("interval sets both gt and ge".into());
        }
        if self.lt.is_some() && self.le.is_some() {
            return Err("interval sets both lt and le".into());
        }
        let lo = self.gt.or(self.ge);
        let hi = self.lt.or(self.le);
        if [lo, hi].iter().flatten().any(|b| !b.is_finite()) {
            return Err("interval bounds must be finite".into());
        }
        if let (Some(lo), Some(hi)) = (lo, hi) {
            if lo >= hi {
                return Err(format!("interval lower bound {lo} is not below upper bound {hi}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelevanceRule {
    pub category: EntityCategory,
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Interval>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abs_x: Option<Interval>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abs_y: Option<Interval>,
    /// Only applies while the ego vehicle moves at least this fast (m/s).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_ego_speed: Option<f64>,
}

fn yes() -> bool {
    true
}

impl RelevanceRule {
    pub fn matches(&self, o: &ObstacleAnnotation, ego_speed: f64) -> bool {
        self.enabled
            && self.min_ego_speed.is_none_or(|s| ego_speed >= s)
            && self.x.is_none_or(|i| i.contains(o.x))
            && self.abs_x.is_none_or(|i| i.contains(o.x.abs()))
            && self.abs_y.is_none_or(|i| i.contains(o.y.abs()))
    }
}

/// Class mapping plus relevance rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelevanceConfig {
    pub classes: BTreeMap<ObstacleClass, BTreeSet<EntityCategory>>,
    #[serde(rename = "rule", default)]
    pub rules: Vec<RelevanceRule>,
}

impl Default for RelevanceConfig {
    fn default() -> Self {
        Self::from_toml_str(DEFAULT_RULES).expect("bundled rules are valid")
    }
}

impl RelevanceConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, EntityError> {
        let cfg: Self = toml::from_str(s).map_err(|e| EntityError::InvalidRules(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, EntityError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| EntityError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    fn validate(&self) -> Result<(), EntityError> {
        for rule in &self.rules {
            for iv in [rule.x, rule.abs_x, rule.abs_y].iter().flatten() {
                iv.validate()
                    .map_err(|m| EntityError::InvalidRules(format!("{}: {m}", rule.category)))?;
            }
        }
        // every category with a ground-truth mapping needs a rule to ever be relevant
        let verifiable = self.verifiable();
        let covered: BTreeSet<_> = self.rules.iter().map(|r| r.category).collect();
        if let Some(c) = verifiable.difference(&covered).next() {
            return Err(EntityError::InvalidRules(format!(
                "category `{c}` has a class mapping but no rule"
            )));
        }
        Ok(())
    }

    /// Categories that at least one annotation class can evidence.
    pub fn verifiable(&self) -> BTreeSet<EntityCategory> {
        self.classes.values().flatten().copied().collect()
    }

    fn categories_of(&self, class: ObstacleClass) -> impl Iterator<Item = EntityCategory> + '_ {
        self.classes.get(&class).into_iter().flatten().copied()
    }

    /// Categories evidenced by any of `obstacles`, regardless of position.
    pub fn present<'a>(&self, obstacles: impl IntoIterator<Item = &'a ObstacleAnnotation>) -> BTreeSet<EntityCategory> {
        obstacles
            .into_iter()
            .flat_map(|o| self.categories_of(o.category))
            .collect()
    }

    /// Categories for which some obstacle of a mapped class satisfies an
    /// enabled rule.
    pub fn relevant<'a>(
        &self,
        obstacles: impl IntoIterator<Item = &'a ObstacleAnnotation>,
        ego_speed: f64,
    ) -> BTreeSet<EntityCategory> {
        let mut out = BTreeSet::new();
        for o in obstacles {
            for cat in self.categories_of(o.category) {
                if self.rules.iter().any(|r| r.category == cat && r.matches(o, ego_speed)) {
                    out.insert(cat);
                }
            }
        }
        out
    }
}

/// Slice form of [`RelevanceConfig::relevant`].
pub fn relevant_entities(
    obstacles: &[ObstacleAnnotation],
    cfg: &RelevanceConfig,
    ego_speed: f64,
) -> BTreeSet<EntityCategory> {
    cfg.relevant(obstacles.iter(), ego_speed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityResult {
    pub entity_fidelity: f64,
    pub matched: BTreeSet<EntityCategory>,
    pub hallucinated: BTreeSet<EntityCategory>,
    pub missed: BTreeSet<EntityCategory>,
}

/// `|mentioned ∩ present| / |mentioned ∪ relevant|`, defined as 1.0 when the
/// union is empty. `relevant` is folded into `present` first.
pub fn entity_fidelity(
    mentioned: &BTreeSet<EntityCategory>,
    relevant: &BTreeSet<EntityCategory>,
    present: &BTreeSet<EntityCategory>,
) -> FidelityResult {
    let present: BTreeSet<_> = present.union(relevant).copied().collect();
    let matched: BTreeSet<_> = mentioned.intersection(&present).copied().collect();
    let hallucinated: BTreeSet<_> = mentioned.difference(&present).copied().collect();
    let missed: BTreeSet<_> = relevant.difference(mentioned).copied().collect();
    let union = mentioned.union(relevant).count();
    let entity_fidelity = if union == 0 {
        1.0
    } else {
        matched.len() as f64 / union as f64
    };
    FidelityResult {
        entity_fidelity,
        matched,
        hallucinated,
        missed,
    }
}

/// Per-record input to [`EntityStats::aggregate`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntityRecord {
    pub mentioned: BTreeSet<EntityCategory>,
    pub relevant: BTreeSet<EntityCategory>,
    pub present: BTreeSet<EntityCategory>,
    /// Mentions of categories no annotation class can verify.
    pub unverifiable: BTreeSet<EntityCategory>,
    pub result: FidelityResult,
}

impl EntityRecord {
    pub fn evaluate(
        cfg: &RelevanceConfig,
        parsed_entities: &BTreeSet<EntityCategory>,
        obstacles: &[&ObstacleAnnotation],
        ego_speed: f64,
    ) -> Self {
        let verifiable = cfg.verifiable();
        let (mentioned, unverifiable): (BTreeSet<_>, BTreeSet<_>) =
            parsed_entities.iter().partition(|c| verifiable.contains(c));
        let present = cfg.present(obstacles.iter().copied());
        let relevant = cfg.relevant(obstacles.iter().copied(), ego_speed);
        let result = entity_fidelity(&mentioned, &relevant, &present);
        Self {
            mentioned,
            relevant,
            present,
            unverifiable,
            result,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryAccuracy {
    pub mentions: usize,
    pub matched: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntityStats {
    pub records_with_context: usize,
    pub mean_fidelity: f64,
    pub std_fidelity: f64,
    /// Total hallucinated category mentions.
    pub hallucination_count: usize,
    /// `hallucination_count / records_with_context`.
    pub hallucination_rate: f64,
    pub records_with_hallucination: usize,
    pub per_category: BTreeMap<EntityCategory, CategoryAccuracy>,
    pub pedestrian_relevant_scenes: usize,
    pub missed_pedestrian_scenes: usize,
    /// `missed_pedestrian_scenes / records_with_context`.
    pub missed_pedestrian_share: f64,
    pub unverifiable_mentions: usize,
}

impl EntityStats {
    pub fn aggregate(records: &[EntityRecord]) -> Result<Self, EntityError> {
        if records.is_empty() {
            return Err(EntityError::NoObstacleContext);
        }
        let n = records.len();
        let scores: Vec<f64> = records.iter().map(|r| r.result.entity_fidelity).collect();
        let hallucination_count = records.iter().map(|r| r.result.hallucinated.len()).sum();
        let mut per_category: BTreeMap<EntityCategory, CategoryAccuracy> = BTreeMap::new();
        for r in records {
            for c in &r.mentioned {
                let e = per_category.entry(*c).or_insert(CategoryAccuracy {
                    mentions: 0,
                    matched: 0,
                    accuracy: 0.0,
                });
                e.mentions += 1;
                e.matched += usize::from(r.result.matched.contains(c));
            }
        }
        for acc in per_category.values_mut() {
            acc.accuracy = acc.matched as f64 / acc.mentions as f64;
        }
        let missed_pedestrian_scenes = records
            .iter()
            .filter(|r| r.result.missed.contains(&EntityCategory::Pedestrian))
            .count();
        Ok(Self {
            records_with_context: n,
            mean_fidelity: mean(&scores),
            std_fidelity: population_std(&scores),
            hallucination_count,
            hallucination_rate: hallucination_count as f64 / n as f64,
            records_with_hallucination: records.iter().filter(|r| !r.result.hallucinated.is_empty()).count(),
            per_category,
            pedestrian_relevant_scenes: records
                .iter()
                .filter(|r| r.relevant.contains(&EntityCategory::Pedestrian))
                .count(),
            missed_pedestrian_scenes,
            missed_pedestrian_share: missed_pedestrian_scenes as f64 / n as f64,
            unverifiable_mentions: records.iter().map(|r| r.unverifiable.len()).sum(),
        })
    }
}
