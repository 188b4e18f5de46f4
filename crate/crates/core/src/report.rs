//! Report tables and their text, CSV and JSON renderings.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::action::ConsistencyStats;
use crate::counterfactual::{OutcomeKind, PerturbStats, SweepRow};
use crate::pipeline::{FidelityReport, PairEval, RecordEval, Report, Section};
use crate::stats::{BaselineStats, FidelityCorrelation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Text,
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(Format::Text),
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format `{other}` (text, csv, json)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    #[serde(skip)]
    pub name: &'static str,
    pub title: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &'static str, title: impl Into<String>, headers: &[&str]) -> Self {
        Self {
            name,
            title: title.into(),
            headers: headers.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn row(&mut self, cells: &[String]) {
        self.rows.push(cells.to_vec());
    }

    fn skipped(name: &'static str, title: &str, reason: &str) -> Self {
        let mut t = Self::new(name, title, &["Status"]);
        t.row(&[format!("skipped: {reason}")]);
        t
    }

    pub fn to_text(&self) -> String {
        let ncol = self.headers.len();
        let mut width = vec![0usize; ncol];
        for r in std::iter::once(&self.headers).chain(&self.rows) {
            for (i, c) in r.iter().enumerate() {
                width[i] = width[i].max(c.chars().count());
            }
        }
        let line = |cells: &[String]| {
            let parts: Vec<String> = cells
                .iter()
                .enumerate()
                .map(|(i, c)| format!("{c:<w$}", w = width[i]))
                .collect();
            parts.join("  ").trim_end().to_string()
        };
        let rule = "-".repeat(width.iter().sum::<usize>() + 2 * (ncol - 1));
        let mut out = format!("{}\n{rule}\n{}\n{rule}\n", self.title, line(&self.headers));
        for r in &self.rows {
            out.push_str(&line(r));
            out.push('\n');
        }
        out.push_str(&rule);
        out.push('\n');
        out
    }

    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.headers)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn pct(x: f64) -> String {
    format!("{:.1}%", 100.0 * x)
}

fn opt<T>(v: Option<T>, f: impl Fn(T) -> String) -> String {
    v.map(f).unwrap_or_else(|| "n/a".into())
}

fn frac(num: usize, den: usize) -> String {
    if den == 0 {
        format!("{num}/0")
    } else {
        format!("{num}/{den} ({})", pct(num as f64 / den as f64))
    }
}

pub fn baseline_table(b: &BaselineStats) -> Table {
    let mut t = Table::new(
        "baseline",
        format!("Baseline ({} inferences, {} clips)", b.records, b.clips),
        &["Metric", "Value"],
    );
    let m = |v: Option<f64>| opt(v, |x| format!("{x:.3}m"));
    t.row(&[
        "Mean minADE".into(),
        match (b.mean_minade, b.std_minade) {
            (Some(mu), Some(sd)) => format!("{mu:.3} ± {sd:.3}m"),
            _ => "n/a".into(),
        },
    ]);
    t.row(&["Median minADE".into(), m(b.median_minade)]);
    t.row(&["90th / 95th percentile".into(), format!("{} / {}", m(b.p90), m(b.p95))]);
    t.row(&[
        "Safety failures (>5m)".into(),
        frac(b.safety_failures, b.scored_records),
    ]);
    t.row(&[
        "Reasoning inconsistency".into(),
        match b.inconsistent_clips {
            Some(n) => format!(
                "{n}/{} clips ({})",
                b.multi_seed_clips,
                pct(n as f64 / b.multi_seed_clips as f64)
            ),
            None => "n/a (no clip has two seeds)".into(),
        },
    ]);
    t.row(&["Unique CoC traces".into(), frac(b.unique_traces, b.records)]);
    t
}

pub fn fidelity_table(s: &Section<FidelityReport>) -> Table {
    let title = "Reasoning fidelity";
    let Section::Done(f) = s else {
        return Table::skipped("fidelity", title, skipped_reason(s));
    };
    let mut t = Table::new(
        "fidelity",
        format!("{title} ({} inferences with obstacle context)", f.records),
        &["Dimension", "Score", "Std"],
    );
    t.row(&[
        "Entity Fidelity".into(),
        pct(f.entity.mean_fidelity),
        pct(f.entity.std_fidelity),
    ]);
    t.row(&["Action Fidelity".into(), pct(f.action.mean), pct(f.action.std)]);
    t.row(&["Overall Fidelity".into(), pct(f.overall.mean), pct(f.overall.std)]);
    t.row(&[
        "Hallucination Rate".into(),
        format!(
            "{} ({} instances)",
            pct(f.entity.hallucination_rate),
            f.entity.hallucination_count
        ),
        String::new(),
    ]);
    t.row(&[
        "Missed Pedestrians".into(),
        format!(
            "{} scenes ({})",
            f.entity.missed_pedestrian_scenes,
            pct(f.entity.missed_pedestrian_share)
        ),
        String::new(),
    ]);
    t
}

pub fn entity_accuracy_table(s: &Section<FidelityReport>) -> Table {
    let title = "Entity verification accuracy";
    let Section::Done(f) = s else {
        return Table::skipped("entity_accuracy", title, skipped_reason(s));
    };
    let mut t = Table::new(
        "entity_accuracy",
        title,
        &["Category", "Mentions", "Verified", "Accuracy"],
    );
    for (c, a) in &f.entity.per_category {
        t.row(&[
            c.to_string(),
            a.mentions.to_string(),
            a.matched.to_string(),
            pct(a.accuracy),
        ]);
    }
    t
}

pub fn consistency_table(s: &Section<ConsistencyStats>) -> Table {
    let title = "Reasoning-action consistency";
    let Section::Done(c) = s else {
        return Table::skipped("consistency", title, skipped_reason(s));
    };
    let mut t = Table::new(
        "consistency",
        format!(
            "{title} ({} records, {} without action claims)",
            c.records, c.no_claim_records
        ),
        &["Metric", "Value"],
    );
    t.row(&["Mean consistency".into(), opt(c.mean_score, |x| format!("{x:.3}"))]);
    t.row(&[format!("Low consistency (<{})", c.low_threshold), opt(c.low_share, pct)]);
    t.row(&["Longitudinal consistency".into(), opt(c.longitudinal.rate, pct)]);
    t.row(&["Lateral consistency".into(), opt(c.lateral.rate, pct)]);
    for (a, r) in &c.per_action {
        let ext = if crate::action::is_canonical(*a) {
            ""
        } else {
            " (extended)"
        };
        t.row(&[
            format!("{a} satisfied{ext}"),
            format!("{} ({}/{})", pct(r.satisfaction_rate), r.satisfied, r.claimed),
        ]);
    }
    let m = &c.mismatch;
    t.row(&["Longitudinal failures".into(), frac(m.longitudinal, m.records)]);
    t.row(&["Lateral failures".into(), frac(m.lateral, m.records)]);
    t.row(&["Mixed failures".into(), frac(m.mixed, m.records)]);
    t
}

pub fn perturbation_table(s: &Section<PerturbStats>) -> Table {
    let title = "Causal perturbation response";
    let Section::Done(p) = s else {
        return Table::skipped("perturbation", title, skipped_reason(s));
    };
    let mut t = Table::new(
        "perturbation",
        format!("{title} ({} valid inferences, delta_tau {} m)", p.pairs, p.delta_tau),
        &["Response", "Count", "%"],
    );
    for k in OutcomeKind::ALL {
        let c = &p.kinds[&k];
        t.row(&[k.label().into(), c.count.to_string(), pct(c.share)]);
    }
    t.row(&[
        format!("High epistemic spread (U>{}m)", p.spread_high),
        p.high_spread.to_string(),
        opt(p.high_spread_share, pct),
    ]);
    t.row(&[
        "Mean U_epistemic".into(),
        opt(p.mean_spread, |u| format!("{u:.3}m")),
        String::new(),
    ]);
    t.row(&[
        "Trajectories changed".into(),
        p.trajectories_changed.to_string(),
        pct(p.trajectories_changed_share),
    ]);
    t
}

pub fn validation_table(s: &Section<FidelityCorrelation>) -> Table {
    let title = "Fidelity versus trajectory error";
    let Section::Done(v) = s else {
        return Table::skipped("validation", title, skipped_reason(s));
    };
    let mut t = Table::new(
        "validation",
        format!("{title} (n = {})", v.n),
        &["Metric", "Value", "Count"],
    );
    t.row(&["Pearson r".into(), format!("{:.3}", v.pearson_r), v.n.to_string()]);
    t.row(&["p-value".into(), format!("{:.4}", v.p_value), String::new()]);
    t.row(&[
        format!("Mutual information (KSG, k={})", v.mi_k),
        format!("{:.3} nats", v.mi_nats),
        String::new(),
    ]);
    for q in &v.quartiles {
        t.row(&[
            format!("Mean ADE, {}", q.label),
            opt(q.mean_ade, |a| format!("{a:.3}m")),
            q.count.to_string(),
        ]);
    }
    t
}

pub fn sweep_table(rows: &[SweepRow]) -> Table {
    let mut t = Table::new(
        "sweep",
        "Outcome shares across delta_tau",
        &[
            "delta_tau",
            "Faithful",
            "Silent failure",
            "Reason-only shift",
            "Robust",
            "Changed",
        ],
    );
    for r in rows {
        let mut cells = vec![format!("{:.2}", r.delta_tau)];
        cells.extend(OutcomeKind::ALL.iter().map(|k| pct(r.kinds[k].share)));
        cells.push(pct(r.trajectories_changed_share));
        t.row(&cells);
    }
    t
}

fn skipped_reason<T>(s: &Section<T>) -> &str {
    match s {
        Section::Skipped { skipped } => skipped,
        Section::Done(_) => "",
    }
}

pub fn report_tables(r: &Report) -> Vec<Table> {
    vec![
        baseline_table(&r.baseline),
        fidelity_table(&r.fidelity),
        entity_accuracy_table(&r.fidelity),
        consistency_table(&r.consistency),
        perturbation_table(&r.perturbation),
        validation_table(&r.validation),
    ]
}

/// Notes printed under the text tables.
pub fn footer(r: &Report) -> String {
    let mut out = String::from(
        "Overall fidelity is the per-record mean of (entity + action) / 2 over records with obstacle context.\n\
         Reference arithmetic for this combiner: (35.3 + 49.6) / 2 = 42.45, which rounds to 42.5.\n",
    );
    if let Section::Done(f) = &r.fidelity {
        out.push_str(&format!(
            "This run: ({:.4} + {:.4}) / 2 = {:.4}; reported overall {:.4} (residual {:.1e}).\n",
            f.entity.mean_fidelity,
            f.action.mean,
            (f.entity.mean_fidelity + f.action.mean) / 2.0,
            f.overall.mean,
            f.combiner_residual
        ));
        if f.action_vacuous_records > 0 {
            out.push_str(&format!(
                "{} records claim no stop, decelerate or turn action and count as action-faithful.\n",
                f.action_vacuous_records
            ));
        }
    }
    out.push_str("Actions marked (extended) use predicates beyond stop, decelerate and turn.\n");
    out
}

pub fn render(tables: &[Table], format: Format) -> Result<String, csv::Error> {
    Ok(match format {
        Format::Text => tables.iter().map(Table::to_text).collect::<Vec<_>>().join("\n"),
        Format::Csv => {
            let mut s = String::new();
            for t in tables {
                s.push_str(&format!("# {}\n", t.name));
                s.push_str(&t.to_csv()?);
            }
            s
        }
        Format::Json => {
            let map: BTreeMap<&str, &Table> = tables.iter().map(|t| (t.name, t)).collect();
            serde_json::to_string_pretty(&map).expect("tables serialize") + "\n"
        }
    })
}

fn io_err(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

/// Writes `tables/<name>.csv` for every table.
pub fn write_csv_tables(dir: &Path, tables: &[Table]) -> io::Result<()> {
    let tdir = dir.join("tables");
    fs::create_dir_all(&tdir)?;
    for t in tables {
        fs::write(tdir.join(format!("{}.csv", t.name)), t.to_csv().map_err(io_err)?)?;
    }
    Ok(())
}

pub fn records_csv(records: &[RecordEval]) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "clip_id",
        "seed",
        "score",
        "mismatch_kind",
        "entity_fidelity",
        "action_fidelity",
        "overall_fidelity",
        "min_ade",
    ])?;
    let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in records {
        w.write_record([
            r.clip_id.clone(),
            r.seed.to_string(),
            f(r.consistency.score),
            r.consistency
                .mismatch_kind
                .map(|k| k.as_str().to_string())
                .unwrap_or_default(),
            f(r.entity.as_ref().map(|e| e.result.entity_fidelity)),
            r.action_fidelity.to_string(),
            f(r.overall_fidelity),
            f(r.min_ade),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("utf-8"))
}

pub fn pairs_csv(pairs: &[PairEval]) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "pair_id",
        "clip_id",
        "seed",
        "kind",
        "traj_distance",
        "reasoning_changed",
        "epistemic_spread",
    ])?;
    for p in pairs {
        w.write_record([
            p.pair_id.clone(),
            p.clip_id.clone(),
            p.seed.to_string(),
            p.outcome.kind.as_str().to_string(),
            p.outcome.traj_distance.to_string(),
            p.outcome.reasoning_changed.to_string(),
            p.outcome.epistemic_spread.map(|u| u.to_string()).unwrap_or_default(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("utf-8"))
}

/// Writes `report.json`, `report.txt`, `tables/*.csv` and per-record CSVs.
/// Every table as plain text, followed by the footer.
pub fn report_text(report: &Report) -> Result<String, csv::Error> {
    Ok(render(&report_tables(report), Format::Text)? + "\n" + &footer(report))
}

pub fn write_report(dir: &Path, report: &Report, records: &[RecordEval], pairs: &[PairEval]) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let tables = report_tables(report);
    fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(report).map_err(io::Error::other)? + "\n",
    )?;
    fs::write(dir.join("report.txt"), report_text(report).map_err(io_err)?)?;
    write_csv_tables(dir, &tables)?;
    fs::write(dir.join("records.csv"), records_csv(records).map_err(io_err)?)?;
    if !pairs.is_empty() {
        fs::write(dir.join("pairs.csv"), pairs_csv(pairs).map_err(io_err)?)?;
    }
    Ok(())
}
