//! The pipeline must recover exactly what the generator planted.

use proptest::prelude::*;

use vlafaith::config::RunConfig;
use vlafaith::counterfactual::OutcomeKind;
use vlafaith::pipeline::{Evaluator, RunOutput, Section};
use vlafaith::synth::{self, GroundTruthLedger, PlantSpec, SynthError};

fn evaluate(spec: &PlantSpec) -> Result<(RunOutput, GroundTruthLedger), SynthError> {
    let (corpus, ledger) = synth::generate(spec)?;
    let ev = Evaluator::new(RunConfig::default()).unwrap();
    Ok((ev.run(&corpus).unwrap(), ledger))
}

fn check_recovery(spec: &PlantSpec) -> Result<(), TestCaseError> {
    let (out, ledger) = match evaluate(spec) {
        Ok(v) => v,
        // Some random combinations cannot be planted exactly; that is reported, not faked.
        Err(SynthError::InfeasibleSpec(_)) => return Ok(()),
        Err(e) => return Err(TestCaseError::fail(e.to_string())),
    };
    let truth = ledger.summary(RunConfig::default().spread_high);
    let r = &out.report;
    prop_assert_eq!(r.baseline.records, truth.baseline_records);
    prop_assert_eq!(r.baseline.inconsistent_clips.unwrap_or(0), truth.inconsistent_clips);
    prop_assert_eq!(r.baseline.unique_traces, truth.unique_traces);

    match &r.fidelity {
        Section::Done(f) => {
            prop_assert_eq!(f.records, truth.context_records);
            prop_assert_eq!(f.entity.hallucination_count, truth.hallucinations);
            prop_assert_eq!(f.entity.missed_pedestrian_scenes, truth.missed_pedestrian_scenes);
        }
        Section::Skipped { .. } => prop_assert_eq!(truth.context_records, 0),
    }

    // Per-record scores match the ledger one to one.
    let base: Vec<_> = ledger.baseline().collect();
    prop_assert_eq!(base.len(), out.records.len());
    for (e, rec) in base.iter().zip(&out.records) {
        prop_assert_eq!(&e.clip_id, &rec.clip_id);
        prop_assert_eq!(e.action_fidelity, rec.action_fidelity);
        prop_assert_eq!(e.overall_fidelity, rec.overall_fidelity);
        let ade = rec.min_ade.unwrap();
        prop_assert!(
            (ade - e.target_ade).abs() < 1e-6,
            "ADE {} vs planted {}",
            ade,
            e.target_ade
        );
    }

    match &r.perturbation {
        Section::Done(p) => {
            for kind in OutcomeKind::ALL {
                let got = p.kinds.get(&kind).map_or(0, |k| k.count);
                prop_assert_eq!(got, truth.pair_kinds.get(&kind).copied().unwrap_or(0), "{:?}", kind);
            }
            prop_assert_eq!(p.high_spread, truth.high_spread_pairs);
        }
        Section::Skipped { .. } => prop_assert!(out.pairs.is_empty()),
    }
    Ok(())
}

#[test]
fn default_spec_is_recovered() {
    check_recovery(&PlantSpec::default()).unwrap();
}

#[test]
fn zero_rate_corpus_scores_perfectly() {
    let spec = PlantSpec {
        n_clips: 20,
        stop_violation_rate: 0.0,
        ..PlantSpec::default()
    };
    let (out, _) = evaluate(&spec).unwrap();
    let Section::Done(f) = &out.report.fidelity else {
        panic!("fidelity skipped")
    };
    assert_eq!(f.overall.mean, 1.0);
    assert_eq!(f.entity.hallucination_count, 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_specs_are_recovered(
        n_clips in 4usize..30,
        seeds in 1usize..4,
        context in 0.5f64..=1.0,
        halluc in 0.0f64..0.3,
        miss in 0.0f64..0.4,
        vmiss in 0.0f64..0.3,
        stop in 0.0f64..0.6,
        incons in 0.3f64..=1.0,
        faithful in 0.3f64..0.7,
        silent in 0.0f64..0.3,
        seed in 0u64..1000,
    ) {
        let spec = PlantSpec {
            n_clips,
            seeds_per_clip: seeds,
            context_rate: context,
            hallucination_rate: halluc,
            miss_rate: miss,
            vehicle_miss_rate: vmiss,
            stop_violation_rate: stop,
            clip_inconsistency_rate: if seeds > 1 { incons } else { 0.0 },
            faithful_rate: faithful,
            silent_failure_rate: silent,
            reason_only_rate: 0.05,
            rng_seed: seed,
            ..PlantSpec::default()
        };
        check_recovery(&spec)?;
    }
}
