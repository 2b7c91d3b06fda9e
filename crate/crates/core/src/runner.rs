//! Experiment orchestration: resolved run configurations, the search
//! commands, phase-2 revalidation, transfer runs, parameter sweeps, and all
//! file outputs.
//!
//! A run directory always contains `config.snapshot`, `trace.log`,
//! `records.log`, `summary.json`/`summary.csv`, and
//! `failure_modes.json`/`failure_modes.csv`, plus `concepts.csv`,
//! `pairs.csv` and (when the target has a perception channel)
//! `recognition.json`. Reruns from the snapshot reproduce a run bit for bit
//! on synthetic and replay targets.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, ConceptSet};
use crate::evaluator::{
    evaluate, BudgetLedger, EvalContext, EvalRecord, RecognitionLog, ReplayTarget,
    SubprocessTarget, SyntheticScenario, SyntheticTarget, TargetModel,
};
use crate::gp::KernelFamily;
use crate::metrics::{
    self, concept_profiles, lift_table, summarize, transfer_report, ConceptProfile, LiftBaseline,
    LiftEntry, RunSummary, TransferReport,
};
use crate::oracle::OracleRules;
use crate::scene::build_anchor;
use crate::search::{self, Algorithm, SearchConfig, SearchResult};
use crate::seeds;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Search(#[from] search::SearchError),
    #[error(transparent)]
    Eval(#[from] crate::evaluator::EvalError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error("serialization error: {0}")]
    Serde(String),
}

impl RunError {
    /// 1 for usage/config problems, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 1,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// How the target model is provided.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetSpec {
    /// Seeded simulator with planted failure probabilities. Without a
    /// scenario file the bundled demo scenario for the domain is used.
    Synthetic { scenario: Option<PathBuf> },
    /// Answers keyed by (set, sample index) from a recorded `records.log`.
    Replay { log: PathBuf },
    /// External answerer speaking one JSON request/response per line.
    Subprocess { command: Vec<String> },
}

impl TargetSpec {
    /// Parse a CLI spec: `synthetic`, `synthetic:<scenario.toml>`,
    /// `replay:<records.log>`, or `subprocess:<command and args>`.
    pub fn parse(spec: &str) -> Result<Self, RunError> {
        let (kind, rest) = match spec.split_once(':') {
            Some((k, r)) => (k, Some(r)),
            None => (spec, None),
        };
        match kind {
            "synthetic" => Ok(TargetSpec::Synthetic {
                scenario: rest.map(PathBuf::from),
            }),
            "replay" => rest
                .map(|r| TargetSpec::Replay { log: r.into() })
                .ok_or_else(|| RunError::Config("replay target needs a log path".into())),
            "subprocess" => {
                let command: Vec<String> = rest
                    .unwrap_or("")
                    .split_whitespace()
                    .map(str::to_string)
                    .collect();
                if command.is_empty() {
                    return Err(RunError::Config("subprocess target needs a command".into()));
                }
                Ok(TargetSpec::Subprocess { command })
            }
            other => Err(RunError::Config(format!(
                "unknown target kind `{other}` (expected synthetic, replay, or subprocess)"
            ))),
        }
    }
}

/// Fully resolved run configuration; serialized verbatim as the snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub domain: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catalog_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rules_path: Option<PathBuf>,
    pub target: TargetSpec,
    pub search: SearchConfig,
    pub out_dir: PathBuf,
    pub retries: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            domain: "driving".into(),
            catalog_path: None,
            rules_path: None,
            target: TargetSpec::Synthetic { scenario: None },
            search: SearchConfig::default(),
            out_dir: PathBuf::from("runs/run"),
            retries: 2,
        }
    }
}

fn builtin_scenario(domain: &str) -> SyntheticScenario {
    match domain {
        "driving" => SyntheticScenario::load(include_str!("../data/demo_driving_scenario.toml"))
            .expect("bundled driving scenario is valid"),
        "indoor" => SyntheticScenario::load(include_str!("../data/demo_indoor_scenario.toml"))
            .expect("bundled indoor scenario is valid"),
        _ => SyntheticScenario::with_base(0.05),
    }
}

fn load_catalog(config: &RunConfig) -> Result<Catalog, RunError> {
    match &config.catalog_path {
        Some(path) => Catalog::load_file(path).map_err(|e| RunError::Config(e.to_string())),
        None => match config.domain.as_str() {
            "driving" => Ok(Catalog::builtin_driving()),
            "indoor" => Ok(Catalog::builtin_indoor()),
            other => Err(RunError::Config(format!(
                "no bundled catalog for domain `{other}`; pass --catalog"
            ))),
        },
    }
}

fn load_rules(config: &RunConfig, catalog: &Catalog) -> Result<OracleRules, RunError> {
    let rules = match &config.rules_path {
        Some(path) => OracleRules::load_file(path).map_err(|e| RunError::Config(e.to_string()))?,
        None => OracleRules::builtin_for_domain(&catalog.domain),
    };
    let compatible = match rules.domain() {
        "driving" => catalog.domain == "driving",
        "indoor" => catalog.domain == "indoor",
        _ => true,
    };
    if !compatible {
        return Err(RunError::Config(format!(
            "rules are for domain `{}` but the catalog is `{}`",
            rules.domain(),
            catalog.domain
        )));
    }
    Ok(rules)
}

/// Instantiate the target. The synthetic target's seed comes from the run
/// seed's `target` stream so reruns reproduce it.
pub fn build_target(
    spec: &TargetSpec,
    domain: &str,
    seed: u64,
) -> Result<Box<dyn TargetModel>, RunError> {
    match spec {
        TargetSpec::Synthetic { scenario } => {
            let scenario = match scenario {
                Some(path) => {
                    SyntheticScenario::load_file(path).map_err(|e| RunError::Config(e.to_string()))?
                }
                None => builtin_scenario(domain),
            };
            Ok(Box::new(SyntheticTarget::new(
                scenario,
                seeds::stream_seed(seed, "target"),
            )))
        }
        TargetSpec::Replay { log } => Ok(Box::new(
            ReplayTarget::from_log_file(log).map_err(|e| RunError::Config(e.to_string()))?,
        )),
        TargetSpec::Subprocess { command } => Ok(Box::new(
            SubprocessTarget::spawn(command).map_err(|e| RunError::Config(e.to_string()))?,
        )),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| RunError::Serde(e.to_string()))?;
    fs::write(path, text).map_err(io_err(path))
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl Iterator<Item = T>) -> Result<(), RunError> {
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    for item in items {
        let line = serde_json::to_string(&item).map_err(|e| RunError::Serde(e.to_string()))?;
        writeln!(file, "{line}").map_err(io_err(path))?;
    }
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, RunError> {
    let text = fs::read_to_string(path).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))
}

/// One line of records.log: the record plus its anchor graph for audit.
#[derive(Debug, Serialize, Deserialize)]
pub struct RecordLogEntry {
    pub record: EvalRecord,
    pub scene_graph: serde_json::Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FailureModeRow {
    pub set: ConceptSet,
    pub fr: f64,
}

/// Everything cmd_search produces, for callers that want the data as well
/// as the files.
#[derive(Debug, Serialize)]
pub struct RunOutputs {
    pub out_dir: PathBuf,
    pub summary: RunSummary,
    pub failure_modes: Vec<FailureModeRow>,
    pub profiles: Vec<ConceptProfile>,
    pub lifts: Vec<LiftEntry>,
    pub warnings: Vec<String>,
    pub spent: u64,
    #[serde(skip)]
    pub result: SearchResult,
}

fn fmt_opt(value: Option<f64>) -> String {
    value.map(|v| format!("{v:.4}")).unwrap_or_default()
}

fn write_run_outputs(
    config: &RunConfig,
    ctx: &EvalContext,
    result: &SearchResult,
) -> Result<RunOutputs, RunError> {
    let dir = &config.out_dir;
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    write_json(&dir.join("config.snapshot"), config)?;
    write_jsonl(&dir.join("trace.log"), result.trace.iter())?;

    let entries = result.all_candidates.iter().map(|record| {
        let graph = build_anchor(&ctx.catalog.with_max_depth(config.search.max_depth), &record.set)
            .map(|(_, g)| serde_json::to_value(g).unwrap_or(serde_json::Value::Null))
            .unwrap_or(serde_json::Value::Null);
        RecordLogEntry {
            record: record.clone(),
            scene_graph: graph,
        }
    });
    write_jsonl(&dir.join("records.log"), entries)?;

    let summary = summarize(&result.all_candidates, config.search.tau);
    let recognition = ctx.recognition.borrow();
    let recognition_ref = (!recognition.is_empty()).then_some(&*recognition);
    let profiles = concept_profiles(&result.all_candidates, recognition_ref, 10);
    let lifts = lift_table(&result.all_candidates, 10, 1, LiftBaseline::Independence);

    let failure_modes: Vec<FailureModeRow> = result
        .all_candidates
        .iter()
        .filter(|r| r.fr() >= config.search.tau)
        .map(|r| FailureModeRow {
            set: r.set.clone(),
            fr: r.fr(),
        })
        .collect();

    #[derive(Serialize)]
    struct SummaryFile<'a> {
        algo: Algorithm,
        seed: u64,
        summary: &'a RunSummary,
        spent: u64,
        ledger: &'a BudgetLedger,
        warnings: &'a [String],
    }
    write_json(
        &dir.join("summary.json"),
        &SummaryFile {
            algo: config.search.algo,
            seed: config.search.seed,
            summary: &summary,
            spent: result.spent,
            ledger: &result.ledger,
            warnings: &result.warnings,
        },
    )?;

    let mut csv = String::from("algo,seed,candidates,failure_modes,pfm,mfr,div,spent\n");
    csv.push_str(&format!(
        "{},{},{},{},{:.4},{:.4},{},{}\n",
        config.search.algo,
        config.search.seed,
        summary.candidates,
        summary.failure_mode_count,
        summary.pfm,
        summary.mfr,
        fmt_opt(summary.div),
        result.spent
    ));
    let path = dir.join("summary.csv");
    fs::write(&path, csv).map_err(io_err(&path))?;

    write_json(&dir.join("failure_modes.json"), &failure_modes)?;
    let mut csv = String::from("set,fr\n");
    for row in &failure_modes {
        csv.push_str(&format!("{},{:.4}\n", row.set.key(), row.fr));
    }
    let path = dir.join("failure_modes.csv");
    fs::write(&path, csv).map_err(io_err(&path))?;

    let mut csv = String::from("concept,F,R,n,regime\n");
    for p in &profiles {
        let regime = p
            .regime
            .map(|r| format!("{r:?}").to_lowercase())
            .unwrap_or_default();
        csv.push_str(&format!(
            "{},{:.4},{},{},{}\n",
            p.concept,
            p.f,
            fmt_opt(p.r),
            p.n,
            regime
        ));
    }
    let path = dir.join("concepts.csv");
    fs::write(&path, csv).map_err(io_err(&path))?;

    let mut csv = String::from("a,b,observed,baseline,lift,n\n");
    for e in &lifts {
        csv.push_str(&format!(
            "{},{},{:.4},{:.4},{:+.4},{}\n",
            e.a, e.b, e.observed, e.baseline, e.lift, e.n
        ));
    }
    let path = dir.join("pairs.csv");
    fs::write(&path, csv).map_err(io_err(&path))?;

    if let Some(log) = recognition_ref {
        write_json(&dir.join("recognition.json"), log)?;
    }

    Ok(RunOutputs {
        out_dir: dir.clone(),
        summary,
        failure_modes,
        profiles,
        lifts,
        warnings: result.warnings.clone(),
        spent: result.spent,
        result: result.clone(),
    })
}

/// Run the configured search and write the run directory.
pub fn cmd_search(config: &RunConfig) -> Result<RunOutputs, RunError> {
    config
        .search
        .validate()
        .map_err(|e| RunError::Config(e.to_string()))?;
    let catalog = load_catalog(config)?;
    let rules = load_rules(config, &catalog)?;
    let target = build_target(&config.target, &catalog.domain, config.search.seed)?;
    let mut ctx = EvalContext::new(catalog, rules);
    ctx.retries = config.retries;

    let result = search::run(&config.search, &ctx, target.as_ref())?;
    write_run_outputs(config, &ctx, &result)
}

/// Load the snapshot config of a completed run.
pub fn read_snapshot(run_dir: &Path) -> Result<RunConfig, RunError> {
    read_json(&run_dir.join("config.snapshot"))
}

/// Load the evaluation records of a completed run.
pub fn read_records(run_dir: &Path) -> Result<Vec<EvalRecord>, RunError> {
    let path = run_dir.join("records.log");
    let text = fs::read_to_string(&path)
        .map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
    let mut records = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: RecordLogEntry = serde_json::from_str(line)
            .map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
        records.push(entry.record);
    }
    Ok(records)
}

/// Top-n records by estimated fr. Sets strictly above the boundary fr are
/// all taken; the remaining slots are filled by a seeded uniform choice
/// among the boundary ties.
pub fn select_top(
    records: &[EvalRecord],
    top_n: usize,
    rng: &mut rand_chacha::ChaCha12Rng,
) -> Vec<EvalRecord> {
    let mut sorted: Vec<&EvalRecord> = records.iter().collect();
    sorted.sort_by(|a, b| b.fr().total_cmp(&a.fr()).then_with(|| a.set.key().cmp(&b.set.key())));
    if sorted.len() <= top_n {
        return sorted.into_iter().cloned().collect();
    }
    let boundary = sorted[top_n - 1].fr();
    let mut picked: Vec<EvalRecord> = sorted
        .iter()
        .filter(|r| r.fr() > boundary)
        .map(|r| (*r).clone())
        .collect();
    let mut ties: Vec<&EvalRecord> = sorted
        .iter()
        .filter(|r| r.fr() == boundary)
        .copied()
        .collect();
    while picked.len() < top_n && !ties.is_empty() {
        let idx = rng.random_range(0..ties.len());
        picked.push(ties.remove(idx).clone());
    }
    picked
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationEntry {
    pub set: ConceptSet,
    pub phase1_fr: f64,
    pub validated_fr: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub top_n: usize,
    pub samples: u64,
    pub entries: Vec<ValidationEntry>,
    pub mean_fr: f64,
    pub std_fr: f64,
    /// How many validated sets kept fr >= 0.8.
    pub count_ge_80: usize,
    pub warnings: Vec<String>,
}

/// Re-evaluate the top-n sets of a completed run with fresh samples
/// (default 20 each) and report the validated failure rates.
pub fn cmd_validate(run_dir: &Path, top_n: usize, samples: u64) -> Result<ValidationReport, RunError> {
    let config = read_snapshot(run_dir)?;
    let records = read_records(run_dir)?;
    if records.is_empty() {
        return Err(RunError::Config("run has no evaluated candidates".into()));
    }

    let mut warnings = Vec::new();
    if records.len() < top_n {
        warnings.push(format!(
            "run has only {} candidates; validating all of them",
            records.len()
        ));
    }
    let mut tie_rng = seeds::stream_rng(config.search.seed, "validate-ties");
    let top = select_top(&records, top_n, &mut tie_rng);

    let catalog = load_catalog(&config)?;
    let rules = load_rules(&config, &catalog)?;
    let target = build_target(&config.target, &catalog.domain, config.search.seed)?;
    let mut ctx = EvalContext::new(catalog, rules);
    ctx.retries = config.retries;

    let mut ledger = BudgetLedger::new(top.len() as u64 * samples);
    let mut seed_rng = seeds::stream_rng(config.search.seed, "validate-evals");
    let mut entries = Vec::new();
    for record in &top {
        let seed = seed_rng.random::<u64>();
        let validated = evaluate(
            target.as_ref(),
            &ctx,
            &record.set,
            samples,
            &mut ledger,
            seed,
            "validate",
        )?;
        entries.push(ValidationEntry {
            set: record.set.clone(),
            phase1_fr: record.fr(),
            validated_fr: validated.fr(),
        });
    }

    let n = entries.len() as f64;
    let mean_fr = entries.iter().map(|e| e.validated_fr).sum::<f64>() / n;
    let variance = entries
        .iter()
        .map(|e| (e.validated_fr - mean_fr).powi(2))
        .sum::<f64>()
        / n;
    let report = ValidationReport {
        top_n,
        samples,
        entries,
        mean_fr,
        std_fr: variance.sqrt(),
        count_ge_80: 0,
        warnings,
    };
    let report = ValidationReport {
        count_ge_80: report
            .entries
            .iter()
            .filter(|e| e.validated_fr >= 0.8)
            .count(),
        ..report
    };
    write_json(&run_dir.join("validation.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Serialize)]
pub struct TransferOutcome {
    pub report: TransferReport,
    pub out_path: PathBuf,
}

/// Evaluate a source run's top-n sets on another target, optionally running
/// a random baseline on that target for the lift multiplier.
pub fn cmd_transfer(
    source_run_dir: &Path,
    target_spec: &TargetSpec,
    top_n: usize,
    samples: u64,
    baseline_budget: u64,
) -> Result<TransferOutcome, RunError> {
    let config = read_snapshot(source_run_dir)?;
    let records = read_records(source_run_dir)?;
    if records.is_empty() {
        return Err(RunError::Config("source run has no candidates".into()));
    }

    let mut tie_rng = seeds::stream_rng(config.search.seed, "transfer-ties");
    let top = select_top(&records, top_n, &mut tie_rng);
    let source_pairs: Vec<(ConceptSet, f64)> =
        top.iter().map(|r| (r.set.clone(), r.fr())).collect();

    let catalog = load_catalog(&config)?;
    let rules = load_rules(&config, &catalog)?;
    let target = build_target(target_spec, &catalog.domain, config.search.seed)?;
    let mut ctx = EvalContext::new(catalog, rules);
    ctx.retries = config.retries;

    let mut ledger = BudgetLedger::new(top.len() as u64 * samples);
    let mut seed_rng = seeds::stream_rng(config.search.seed, "transfer-evals");
    let mut target_records = Vec::new();
    for record in &top {
        let seed = seed_rng.random::<u64>();
        target_records.push(evaluate(
            target.as_ref(),
            &ctx,
            &record.set,
            samples,
            &mut ledger,
            seed,
            "transfer",
        )?);
    }

    let baseline_mfr = if baseline_budget > 0 {
        let baseline_cfg = SearchConfig {
            algo: Algorithm::Random,
            budget: baseline_budget,
            beam_budget: 0,
            seed: seeds::stream_seed(config.search.seed, "transfer-baseline"),
            ..config.search.clone()
        };
        let baseline = search::run_random(&baseline_cfg, &ctx, target.as_ref())?;
        Some(summarize(&baseline.all_candidates, config.search.tau).mfr)
    } else {
        None
    };

    let report = transfer_report(&source_pairs, &target_records, baseline_mfr)?;
    let out_path = source_run_dir.join("transfer.json");
    write_json(&out_path, &report)?;
    Ok(TransferOutcome { report, out_path })
}

/// Parameters a sweep can vary, mirroring the CLI flags.
pub const SWEEP_PARAMS: [&str; 10] = [
    "algo",
    "budget",
    "samples",
    "beam-width",
    "max-depth",
    "lambda",
    "tau",
    "beam-budget",
    "pool-size",
    "kernel",
];

fn apply_param(config: &mut RunConfig, param: &str, value: &str) -> Result<(), RunError> {
    let bad = |what: &str| RunError::Config(format!("bad {what} value `{value}`"));
    match param {
        "algo" => {
            config.search.algo = match value {
                "random" => Algorithm::Random,
                "beam" => Algorithm::Beam,
                "gpts" => Algorithm::Gpts,
                _ => return Err(bad("algo")),
            }
        }
        "budget" => config.search.budget = value.parse().map_err(|_| bad("budget"))?,
        "samples" => config.search.samples = value.parse().map_err(|_| bad("samples"))?,
        "beam-width" => config.search.beam_width = value.parse().map_err(|_| bad("beam-width"))?,
        "max-depth" => config.search.max_depth = value.parse().map_err(|_| bad("max-depth"))?,
        "lambda" => config.search.lambda = value.parse().map_err(|_| bad("lambda"))?,
        "tau" => config.search.tau = value.parse().map_err(|_| bad("tau"))?,
        "beam-budget" => {
            config.search.beam_budget = value.parse().map_err(|_| bad("beam-budget"))?
        }
        "pool-size" => config.search.pool_size = value.parse().map_err(|_| bad("pool-size"))?,
        "kernel" => {
            config.search.kernel.family = match value {
                "dot_product" | "dot" => KernelFamily::DotProduct,
                "rbf" => KernelFamily::Rbf,
                _ => return Err(bad("kernel")),
            }
        }
        "noise" => {
            config.search.kernel.noise_variance = value.parse().map_err(|_| bad("noise"))?
        }
        "seed" => config.search.seed = value.parse().map_err(|_| bad("seed"))?,
        other => {
            return Err(RunError::Config(format!(
                "unknown sweep parameter `{other}` (one of {})",
                SWEEP_PARAMS.join(", ")
            )))
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub param: String,
    pub value: String,
    pub candidates: usize,
    pub failure_modes: usize,
    pub pfm: f64,
    pub mfr: f64,
    pub div: Option<f64>,
    pub spent: u64,
    pub out_dir: PathBuf,
}

/// One sub-run per grid value under a shared seed policy, plus a
/// consolidated comparison table in the sweep directory.
pub fn cmd_sweep(
    base: &RunConfig,
    param: &str,
    values: &[String],
) -> Result<Vec<SweepRow>, RunError> {
    if values.is_empty() {
        return Err(RunError::Config("sweep needs at least one value".into()));
    }
    let sweep_dir = base.out_dir.clone();
    fs::create_dir_all(&sweep_dir).map_err(io_err(&sweep_dir))?;

    let mut rows = Vec::new();
    for value in values {
        let mut config = base.clone();
        apply_param(&mut config, param, value)?;
        config.out_dir = sweep_dir.join(format!("{param}={value}"));
        let outputs = cmd_search(&config)?;
        rows.push(SweepRow {
            param: param.to_string(),
            value: value.clone(),
            candidates: outputs.summary.candidates,
            failure_modes: outputs.summary.failure_mode_count,
            pfm: outputs.summary.pfm,
            mfr: outputs.summary.mfr,
            div: outputs.summary.div,
            spent: outputs.spent,
            out_dir: config.out_dir.clone(),
        });
    }

    let mut csv = String::from("param,value,candidates,failure_modes,pfm,mfr,div,spent\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{:.4},{:.4},{},{}\n",
            row.param,
            row.value,
            row.candidates,
            row.failure_modes,
            row.pfm,
            row.mfr,
            fmt_opt(row.div),
            row.spent
        ));
    }
    let path = sweep_dir.join("sweep.csv");
    fs::write(&path, csv).map_err(io_err(&path))?;
    write_json(&sweep_dir.join("sweep.json"), &rows)?;
    Ok(rows)
}

/// Distinct failure-mode sets of a run, for quick inspection.
pub fn failure_mode_sets(outputs: &RunOutputs) -> BTreeSet<ConceptSet> {
    outputs
        .failure_modes
        .iter()
        .map(|row| row.set.clone())
        .collect()
}

/// Recognition log written by a run, if any.
pub fn read_recognition(run_dir: &Path) -> Result<Option<RecognitionLog>, RunError> {
    let path = run_dir.join("recognition.json");
    if !path.exists() {
        return Ok(None);
    }
    read_json(&path).map(Some)
}
