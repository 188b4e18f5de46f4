use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vlafaith::action::ConsistencyMode;
use vlafaith::config::{RunConfig, JOBS_ENV};
use vlafaith::counterfactual::{default_sweep, sweep_delta_tau, PerturbationOutcome};
use vlafaith::datamodel::Corpus;
use vlafaith::lexicon::{audit_sample, score_audit, AuditSheet, TraceEquality};
use vlafaith::perturb::{perturb_frame, ImageBuffer, PerturbSpec};
use vlafaith::pipeline::{self, Evaluator, Section};
use vlafaith::report::{self, Format, Table};
use vlafaith::stats::baseline_stats;
use vlafaith::synth::{self, PlantSpec};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;

#[derive(Parser)]
#[command(
    name = "vlafaith",
    version,
    about = "Reasoning-faithfulness evaluation for driving model logs"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Load and validate a corpus, then print its size.
    LoadCheck(Common),
    /// Trajectory error and trace diversity over baseline records.
    Baseline(Common),
    /// Entity, action and overall fidelity.
    Fidelity(Common),
    /// Agreement between claimed actions and trajectory kinematics.
    Consistency(Common),
    /// Classify baseline/perturbed pairs.
    PerturbClassify(Common),
    /// Blur and occlude a PGM/PPM frame.
    Perturb(PerturbArgs),
    /// Correlation, mutual information and quartile analysis of fidelity against ADE.
    Validate(Common),
    /// Generate a synthetic corpus with planted ground truth.
    Synth(SynthArgs),
    /// Draw or score a manual parser audit sheet.
    #[command(subcommand)]
    Audit(AuditCmd),
    /// Run every phase and write the full report.
    RunAll(Common),
    /// Pair outcome shares across a range of trajectory-change thresholds.
    SweepDeltaTau(SweepArgs),
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Directory with records.jsonl, obstacles.jsonl and futures.jsonl.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    records: Option<PathBuf>,
    #[arg(long)]
    obstacles: Option<PathBuf>,
    #[arg(long)]
    futures: Option<PathBuf>,
    /// Reject unknown keys in input files.
    #[arg(long)]
    strict: bool,
    /// Lexicon TOML replacing the built-in one.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Relevance rules TOML replacing the built-in ones.
    #[arg(long)]
    rules: Option<PathBuf>,
    /// TOML run configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for report files.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "text")]
    format: Format,
    #[arg(long)]
    eps_v: Option<f64>,
    #[arg(long)]
    eps_a: Option<f64>,
    #[arg(long)]
    eps_l: Option<f64>,
    #[arg(long)]
    delta_tau: Option<f64>,
    #[arg(long)]
    spread_high: Option<f64>,
    /// Obstacle time window in seconds.
    #[arg(long)]
    window: Option<f64>,
    #[arg(long)]
    low_threshold: Option<f64>,
    #[arg(long)]
    mi_k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// How reasoning change is decided: text or category.
    #[arg(long)]
    trace_eq: Option<TraceEquality>,
    /// Score consistency all-or-nothing instead of per claim.
    #[arg(long)]
    binary_consistency: bool,
    /// Worker threads (0 = all cores).
    #[arg(long, env = JOBS_ENV)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct PerturbArgs {
    input: PathBuf,
    output: PathBuf,
    #[arg(long, default_value_t = 3.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0.10)]
    fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the perturbation log as JSON here.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// JSON plant spec; defaults apply to missing fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum AuditCmd {
    /// Sample one record per clip for manual annotation.
    Sample {
        #[command(flatten)]
        common: Box<Common>,
        #[arg(long, default_value_t = 50)]
        n: usize,
        /// Where to write the sheet; stdout if omitted.
        #[arg(long)]
        sheet: Option<PathBuf>,
    },
    /// Score an annotated sheet.
    Score { sheet: PathBuf },
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated thresholds; defaults to 0.1 to 2.0 in 0.1 steps.
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<f64>>,
}

struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

type Res<T = ()> = Result<T, Failure>;

fn effective_config(c: &Common) -> Res<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    macro_rules! take {
        ($($f:ident),*) => {$(
            if let Some(v) = c.$f.clone() {
                cfg.$f = v.into();
            }
        )*};
    }
    take!(data, records, obstacles, futures, lexicon, rules, out);
    take!(
        eps_v,
        eps_a,
        eps_l,
        delta_tau,
        spread_high,
        window,
        low_threshold,
        mi_k,
        seed,
        trace_eq,
        jobs
    );
    if c.strict {
        cfg.strict = true;
    }
    if c.binary_consistency {
        cfg.consistency_mode = ConsistencyMode::Binary;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn setup(c: &Common) -> Res<(Evaluator, Corpus)> {
    let ev = Evaluator::new(effective_config(c)?)?;
    let corpus = ev.load()?;
    Ok((ev, corpus))
}

fn print_tables(tables: &[Table], format: Format) -> Res {
    let mut out = io::stdout().lock();
    out.write_all(report::render(tables, format)?.as_bytes())?;
    Ok(())
}

/// Prints the tables and, with `--out`, saves them plus `extra` JSON.
fn emit<T: serde::Serialize>(c: &Common, cfg: &RunConfig, tables: &[Table], name: &str, extra: &T) -> Res {
    print_tables(tables, c.format)?;
    if let Some(dir) = &cfg.out {
        report::write_csv_tables(dir, tables)?;
        fs::write(
            dir.join(format!("{name}.json")),
            serde_json::to_string_pretty(extra)? + "\n",
        )?;
    }
    Ok(())
}

fn run(cli: Cli) -> Res {
    match cli.cmd {
        Cmd::LoadCheck(c) => {
            let (_, corpus) = setup(&c)?;
            println!(
                "ok: {} records ({} baseline), {} pairs, {} clips, {} obstacle annotations, {} futures",
                corpus.records().len(),
                corpus.baseline_records().count(),
                corpus.pair_count(),
                corpus.clip_ids().len(),
                corpus.obstacles().count(),
                corpus.futures().count()
            );
        }
        Cmd::Baseline(c) => {
            let (ev, corpus) = setup(&c)?;
            let b = baseline_stats(&corpus);
            emit(&c, &ev.config, &[report::baseline_table(&b)], "baseline", &b)?;
        }
        Cmd::Fidelity(c) => {
            let (ev, corpus) = setup(&c)?;
            let recs = ev.evaluate_records(&corpus)?;
            let f = pipeline::fidelity_report(&recs)?;
            let tables = [report::fidelity_table(&f), report::entity_accuracy_table(&f)];
            emit(&c, &ev.config, &tables, "fidelity", &f)?;
        }
        Cmd::Consistency(c) => {
            let (ev, corpus) = setup(&c)?;
            let recs = ev.evaluate_records(&corpus)?;
            let s = pipeline::consistency_report(&recs, &ev.config);
            emit(&c, &ev.config, &[report::consistency_table(&s)], "consistency", &s)?;
            if let Some(dir) = &ev.config.out {
                fs::write(dir.join("records.csv"), report::records_csv(&recs)?)?;
            }
        }
        Cmd::PerturbClassify(c) => {
            let (ev, corpus) = setup(&c)?;
            let pairs = ev.classify_pairs(&corpus)?;
            let s = pipeline::perturbation_report(&pairs, &ev.config)?;
            emit(&c, &ev.config, &[report::perturbation_table(&s)], "perturbation", &s)?;
            if let Some(dir) = &ev.config.out {
                fs::write(dir.join("pairs.csv"), report::pairs_csv(&pairs)?)?;
            }
        }
        Cmd::Validate(c) => {
            let (ev, corpus) = setup(&c)?;
            let recs = ev.evaluate_records(&corpus)?;
            let v = pipeline::validation_report(&recs, &ev.config)?;
            emit(&c, &ev.config, &[report::validation_table(&v)], "validation", &v)?;
        }
        Cmd::RunAll(c) => {
            let (ev, corpus) = setup(&c)?;
            let out = ev.run(&corpus)?;
            let tables = report::report_tables(&out.report);
            print_tables(&tables, c.format)?;
            if c.format == Format::Text {
                print!("\n{}", report::footer(&out.report));
            }
            if let Some(dir) = &ev.config.out {
                report::write_report(dir, &out.report, &out.records, &out.pairs)?;
            }
        }
        Cmd::SweepDeltaTau(a) => {
            let (ev, corpus) = setup(&a.common)?;
            let pairs = ev.classify_pairs(&corpus)?;
            if pairs.is_empty() {
                let s: Section<vlafaith::counterfactual::PerturbStats> = Section::skipped("no pairs");
                return emit(&a.common, &ev.config, &[report::perturbation_table(&s)], "sweep", &s);
            }
            let outcomes: Vec<PerturbationOutcome> = pairs.into_iter().map(|p| p.outcome).collect();
            let grid = a.values.unwrap_or_else(default_sweep);
            let rows = sweep_delta_tau(&outcomes, &grid)?;
            emit(&a.common, &ev.config, &[report::sweep_table(&rows)], "sweep", &rows)?;
        }
        Cmd::Perturb(a) => {
            let img = ImageBuffer::read_pnm(&a.input)?;
            let spec = PerturbSpec {
                sigma: a.sigma,
                occlusion_fraction: a.fraction,
                seed: a.seed,
            };
            let (out, log) = perturb_frame(&img, &spec)?;
            out.write_pnm(&a.output)?;
            let json = serde_json::to_string_pretty(&log)? + "\n";
            match &a.log {
                Some(p) => fs::write(p, json)?,
                None => print!("{json}"),
            }
        }
        Cmd::Synth(a) => {
            let spec = match &a.spec {
                Some(p) => PlantSpec::from_json_file(p)?,
                None => PlantSpec::default(),
            };
            let (corpus, ledger) = synth::generate(&spec)?;
            synth::write(&a.out, &corpus, &ledger)?;
            println!(
                "wrote {} records ({} pairs) to {}",
                corpus.records().len(),
                corpus.pair_count(),
                a.out.display()
            );
        }
        Cmd::Audit(AuditCmd::Sample { common, n, sheet }) => {
            let (ev, corpus) = setup(&common)?;
            let s = audit_sample(&corpus, &ev.lexicon, n, ev.config.seed)?;
            match sheet {
                Some(p) => s.write_csv(create(&p)?)?,
                None => s.write_csv(io::stdout().lock())?,
            }
        }
        Cmd::Audit(AuditCmd::Score { sheet }) => {
            let s = AuditSheet::read_csv(open(&sheet)?)?;
            println!("{}", serde_json::to_string_pretty(&score_audit(&s)?)?);
        }
    }
    Ok(())
}

fn create(p: &Path) -> Res<fs::File> {
    fs::File::create(p).map_err(|e| Failure(format!("{}: {e}", p.display())))
}

fn open(p: &Path) -> Res<fs::File> {
    fs::File::open(p).map_err(|e| Failure(format!("{}: {e}", p.display())))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_DATA)
        }
    }
}
