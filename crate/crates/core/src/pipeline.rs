//! Per-record evaluation and the phase runners behind `run-all`.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::action::{
    action_fidelity, consistency_from_kinematics, trajectory_kinematics, ActionError, ConsistencyResult,
    ConsistencyStats, Kinematics,
};
use crate::config::{ConfigError, RunConfig};
use crate::counterfactual::{classify_pair, CounterfactualError, PerturbStats, PerturbationOutcome};
use crate::datamodel::{load_corpus, Corpus, LoadError, LoadOptions, QueryError};
use crate::entity::{EntityError, EntityRecord, EntityStats, RelevanceConfig};
use crate::lexicon::{parse_trace, Lexicon, LexiconError, ParsedTrace};
use crate::stats::{
    baseline_stats, fidelity_correlation, mean, population_std, record_min_ade, BaselineStats, FidelityCorrelation,
    StatsError,
};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("loading corpus: {0}")]
    Load(#[from] LoadError),
    #[error("lexicon: {0}")]
    Lexicon(#[from] LexiconError),
    #[error("relevance rules: {0}")]
    Rules(EntityError),
    #[error("{phase}: {message}")]
    Phase { phase: &'static str, message: String },
    #[error("worker pool: {0}")]
    Pool(String),
}

fn phase_err(phase: &'static str) -> impl Fn(&dyn std::fmt::Display) -> PipelineError {
    move |e| PipelineError::Phase {
        phase,
        message: e.to_string(),
    }
}

/// A report section that may be skipped with a reason instead of failing.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Section<T> {
    Done(T),
    Skipped { skipped: String },
}

impl<T> Section<T> {
    pub fn skipped(reason: impl Into<String>) -> Self {
        Section::Skipped { skipped: reason.into() }
    }

    pub fn done(&self) -> Option<&T> {
        match self {
            Section::Done(t) => Some(t),
            Section::Skipped { .. } => None,
        }
    }
}

/// Everything computed for one non-perturbed record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordEval {
    pub index: usize,
    pub clip_id: String,
    pub seed: i64,
    pub parsed: ParsedTrace,
    pub kinematics: Kinematics,
    pub consistency: ConsistencyResult,
    /// `None` without obstacle context.
    pub entity: Option<EntityRecord>,
    pub action_fidelity: f64,
    pub action_vacuous: bool,
    pub overall_fidelity: Option<f64>,
    pub min_ade: Option<f64>,
}

/// Loaded inputs plus the effective configuration.
pub struct Evaluator {
    pub config: RunConfig,
    pub lexicon: Lexicon,
    pub rules: RelevanceConfig,
}

impl Evaluator {
    pub fn new(config: RunConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let lexicon = match &config.lexicon {
            Some(p) => Lexicon::from_file(p)?,
            None => Lexicon::default(),
        };
        let rules = match &config.rules {
            Some(p) => RelevanceConfig::from_file(p).map_err(PipelineError::Rules)?,
            None => RelevanceConfig::default(),
        };
        Ok(Self { config, lexicon, rules })
    }

    pub fn load(&self) -> Result<Corpus, PipelineError> {
        let paths = self.config.corpus_paths()?;
        Ok(load_corpus(
            &paths,
            LoadOptions {
                strict: self.config.strict,
            },
        )?)
    }

    fn pool(&self) -> Result<rayon::ThreadPool, PipelineError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.jobs)
            .build()
            .map_err(|e| PipelineError::Pool(e.to_string()))
    }

    fn eval_record(&self, corpus: &Corpus, index: usize) -> Result<RecordEval, PipelineError> {
        let r = &corpus.records()[index];
        let parsed = parse_trace(&r.coc_text, &self.lexicon);
        let kinematics = trajectory_kinematics(r.primary_trajectory(), &r.ego)
            .map_err(|e: ActionError| phase_err("consistency")(&format!("{} seed {}: {e}", r.clip_id, r.seed)))?;
        let th = self.config.kinematic();
        let consistency = consistency_from_kinematics(&parsed.actions, &kinematics, &th, self.config.consistency_mode);
        let near = corpus
            .obstacles_near(&r.clip_id, r.prediction_timestamp, self.config.window)
            .map_err(|e: QueryError| phase_err("fidelity")(&e))?;
        let entity =
            (!near.is_empty()).then(|| EntityRecord::evaluate(&self.rules, &parsed.entities, &near, r.ego.speed));
        let (af, vacuous) = action_fidelity(&parsed.actions, &kinematics, &th);
        let overall_fidelity = entity.as_ref().map(|e| (e.result.entity_fidelity + af) / 2.0);
        Ok(RecordEval {
            index,
            clip_id: r.clip_id.clone(),
            seed: r.seed,
            parsed,
            kinematics,
            consistency,
            entity,
            action_fidelity: af,
            action_vacuous: vacuous,
            overall_fidelity,
            min_ade: record_min_ade(corpus, r),
        })
    }

    /// Evaluates every non-perturbed record, in corpus order.
    pub fn evaluate_records(&self, corpus: &Corpus) -> Result<Vec<RecordEval>, PipelineError> {
        let idx: Vec<usize> = corpus.baseline_records().map(|(i, _)| i).collect();
        self.pool()?
            .install(|| idx.par_iter().map(|&i| self.eval_record(corpus, i)).collect())
    }

    /// Classifies every pair, in perturbed-record order.
    pub fn classify_pairs(&self, corpus: &Corpus) -> Result<Vec<PairEval>, PipelineError> {
        let pairs: Vec<_> = corpus.pairs().collect();
        let th = self.config.pair();
        self.pool()?.install(|| {
            pairs
                .par_iter()
                .map(|(b, p)| {
                    classify_pair(b, p, &self.lexicon, &th, self.config.trace_eq)
                        .map(|outcome| PairEval {
                            pair_id: p.pair_id.clone().unwrap_or_default(),
                            clip_id: p.clip_id.clone(),
                            seed: p.seed,
                            outcome,
                        })
                        .map_err(|e: CounterfactualError| phase_err("perturbation")(&e))
                })
                .collect()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairEval {
    pub pair_id: String,
    pub clip_id: String,
    pub seed: i64,
    pub outcome: PerturbationOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreSummary {
    pub mean: f64,
    pub std: f64,
}

fn summary(v: &[f64]) -> ScoreSummary {
    ScoreSummary {
        mean: mean(v),
        std: population_std(v),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FidelityReport {
    pub records: usize,
    pub entity: EntityStats,
    pub action: ScoreSummary,
    /// Records whose trace has no stop, decelerate or turn claim.
    pub action_vacuous_records: usize,
    pub overall: ScoreSummary,
    /// `|overall - (entity + action) / 2|` over the same records.
    pub combiner_residual: f64,
}

pub fn fidelity_report(evals: &[RecordEval]) -> Result<Section<FidelityReport>, PipelineError> {
    let ctx: Vec<&RecordEval> = evals.iter().filter(|e| e.entity.is_some()).collect();
    if ctx.is_empty() {
        return Ok(Section::skipped("no records with obstacle context"));
    }
    let entities: Vec<EntityRecord> = ctx.iter().filter_map(|e| e.entity.clone()).collect();
    let entity = EntityStats::aggregate(&entities).map_err(|e| phase_err("fidelity")(&e))?;
    let action: Vec<f64> = ctx.iter().map(|e| e.action_fidelity).collect();
    let overall: Vec<f64> = ctx.iter().filter_map(|e| e.overall_fidelity).collect();
    let action = summary(&action);
    let overall = summary(&overall);
    Ok(Section::Done(FidelityReport {
        records: ctx.len(),
        combiner_residual: (overall.mean - (entity.mean_fidelity + action.mean) / 2.0).abs(),
        action_vacuous_records: ctx.iter().filter(|e| e.action_vacuous).count(),
        entity,
        action,
        overall,
    }))
}

pub fn consistency_report(evals: &[RecordEval], cfg: &RunConfig) -> Section<ConsistencyStats> {
    let results: Vec<ConsistencyResult> = evals.iter().map(|e| e.consistency.clone()).collect();
    if results.iter().all(|r| r.no_claim()) {
        return Section::skipped("no record claims an action");
    }
    Section::Done(ConsistencyStats::aggregate(
        &results,
        cfg.low_threshold,
        cfg.consistency_mode,
    ))
}

pub fn perturbation_report(pairs: &[PairEval], cfg: &RunConfig) -> Result<Section<PerturbStats>, PipelineError> {
    if pairs.is_empty() {
        return Ok(Section::skipped("no pairs"));
    }
    let outcomes: Vec<PerturbationOutcome> = pairs.iter().map(|p| p.outcome.clone()).collect();
    PerturbStats::aggregate(&outcomes, &cfg.pair())
        .map(Section::Done)
        .map_err(|e| phase_err("perturbation")(&e))
}

pub fn validation_report(evals: &[RecordEval], cfg: &RunConfig) -> Result<Section<FidelityCorrelation>, PipelineError> {
    let (f, a): (Vec<f64>, Vec<f64>) = evals
        .iter()
        .filter_map(|e| Some((e.overall_fidelity?, e.min_ade?)))
        .unzip();
    if f.is_empty() {
        return Ok(Section::skipped(
            "no records with both obstacle context and a ground-truth future",
        ));
    }
    match fidelity_correlation(&f, &a, cfg.mi_k, cfg.seed) {
        Ok(c) => Ok(Section::Done(c)),
        Err(e @ (StatsError::DegenerateVariance(_) | StatsError::TooFewPoints { .. })) => {
            Ok(Section::skipped(format!("validation not computable: {e}")))
        }
        Err(e) => Err(phase_err("validation")(&e)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub toolkit_version: &'static str,
    pub config: RunConfig,
    pub baseline: BaselineStats,
    pub fidelity: Section<FidelityReport>,
    pub consistency: Section<ConsistencyStats>,
    pub perturbation: Section<PerturbStats>,
    pub validation: Section<FidelityCorrelation>,
}

/// Full evaluation output, including the per-record detail behind the report.
pub struct RunOutput {
    pub report: Report,
    pub records: Vec<RecordEval>,
    pub pairs: Vec<PairEval>,
}

impl Evaluator {
    pub fn run(&self, corpus: &Corpus) -> Result<RunOutput, PipelineError> {
        let records = self.evaluate_records(corpus)?;
        let pairs = self.classify_pairs(corpus)?;
        let cfg = &self.config;
        let report = Report {
            toolkit_version: TOOLKIT_VERSION,
            config: cfg.clone(),
            baseline: baseline_stats(corpus),
            fidelity: fidelity_report(&records)?,
            consistency: consistency_report(&records, cfg),
            perturbation: perturbation_report(&pairs, cfg)?,
            validation: validation_report(&records, cfg)?,
        };
        Ok(RunOutput { report, records, pairs })
    }
}

/// Loads the corpus named by `config` and runs every phase.
pub fn run_all(config: RunConfig) -> Result<RunOutput, PipelineError> {
    let ev = Evaluator::new(config)?;
    let corpus = ev.load()?;
    ev.run(&corpus)
}
