//! Target-model abstraction and the budgeted failure-rate estimator.
//!
//! `evaluate` draws m answers for one concept set, counts disagreements with
//! the oracle (refusals and exhausted transports count as failures), and
//! charges m inferences to the ledger. Three targets ship: a seeded synthetic
//! simulator with planted failure probabilities, a replay target keyed on a
//! recorded log, and a line-delimited subprocess adapter that keeps real
//! model stacks outside this crate.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, ConceptSet};
use crate::oracle::{ground_truth_for_graph, ChoiceOption, OracleError, OracleRules};
use crate::scene::{build_anchor_unchecked, describe, SceneGraph};
use crate::seeds;

pub const REFUSAL_TOKEN: &str = "<refusal>";
pub const TRANSPORT_ERROR_TOKEN: &str = "<transport-error>";

/// Everything a target sees for one sample. The subprocess wire format
/// serializes the `question`, `options`, `scene_description`, `scene_graph`
/// and `seed` fields; the rest is in-process bookkeeping.
#[derive(Debug, Clone)]
pub struct AnswerRequest<'a> {
    pub set: &'a ConceptSet,
    pub question: &'a str,
    pub options: &'a [ChoiceOption],
    pub scene_description: &'a str,
    pub scene_graph: &'a SceneGraph,
    pub sample_index: usize,
    pub seed: u64,
    /// The oracle's expected label. Simulator targets need it; it is never
    /// sent over the wire.
    pub expected: &'a str,
}

#[derive(Debug, Error)]
pub enum TargetError {
    #[error("transport error: {0}")]
    Transport(String),
}

/// A black-box answer source. `answer` returns the raw response text; the
/// estimator does the parsing and scoring.
pub trait TargetModel {
    fn name(&self) -> &str;

    fn answer(&self, request: &AnswerRequest<'_>) -> Result<String, TargetError>;

    /// Paired perception probe for one concept: did the target affirm the
    /// positive statement and reject the counterfactual? `None` when the
    /// target has no perception channel.
    fn recognition(&self, _concept: &str, _seed: u64) -> Option<(bool, bool)> {
        None
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("budget exhausted: {requested} requested, {remaining} remaining")]
    BudgetExhausted { requested: u64, remaining: u64 },
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("scenario parse error: {0}")]
    ScenarioParse(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to spawn target command `{command}`: {source}")]
    Spawn {
        command: String,
        source: std::io::Error,
    },
}

/// Tracks the global inference budget. `spent` never exceeds `total` and
/// increases by exactly m per evaluated set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetLedger {
    pub total: u64,
    pub spent: u64,
    pub phases: BTreeMap<String, u64>,
}

impl BudgetLedger {
    pub fn new(total: u64) -> Self {
        BudgetLedger {
            total,
            spent: 0,
            phases: BTreeMap::new(),
        }
    }

    pub fn remaining(&self) -> u64 {
        self.total - self.spent
    }

    /// Reserve m inferences under a phase label, atomically or not at all.
    pub fn reserve(&mut self, m: u64, phase: &str) -> Result<(), EvalError> {
        if self.spent + m > self.total {
            return Err(EvalError::BudgetExhausted {
                requested: m,
                remaining: self.remaining(),
            });
        }
        self.spent += m;
        *self.phases.entry(phase.to_string()).or_insert(0) += m;
        Ok(())
    }
}

/// One evaluated concept set: m raw answers and the failure count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub set: ConceptSet,
    pub m: u64,
    pub failures: u64,
    /// failures / m, kept alongside the exact integers for readability.
    pub fr: f64,
    pub answers: Vec<String>,
    pub seed: u64,
    pub budget_cost: u64,
    #[serde(default)]
    pub transport_errors: u64,
}

impl EvalRecord {
    pub fn fr(&self) -> f64 {
        self.failures as f64 / self.m as f64
    }
}

/// Per-concept paired-statement outcome counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecognitionCounts {
    pub pos_correct: u64,
    pub pos_total: u64,
    pub neg_correct: u64,
    pub neg_total: u64,
}

impl RecognitionCounts {
    pub fn rate(&self) -> Option<f64> {
        let total = self.pos_total + self.neg_total;
        if total == 0 {
            return None;
        }
        Some((self.pos_correct + self.neg_correct) as f64 / total as f64)
    }
}

pub type RecognitionLog = BTreeMap<String, RecognitionCounts>;

/// Shared evaluation context: the domain data, transport policy, and the
/// recognition log accumulated across a run.
pub struct EvalContext {
    pub catalog: Catalog,
    pub rules: OracleRules,
    pub retries: usize,
    pub recognition: RefCell<RecognitionLog>,
}

impl EvalContext {
    pub fn new(catalog: Catalog, rules: OracleRules) -> Self {
        EvalContext {
            catalog,
            rules,
            retries: 2,
            recognition: RefCell::new(RecognitionLog::new()),
        }
    }

    pub fn take_recognition(&self) -> RecognitionLog {
        std::mem::take(&mut self.recognition.borrow_mut())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Choice {
    Label(String),
    Refusal,
}

/// Parse a raw answer into an option label: a leading option letter
/// (case-insensitive, punctuation tolerated) or the full option text.
/// Anything else is a refusal.
pub fn parse_choice(raw: &str, options: &[ChoiceOption]) -> Choice {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Choice::Refusal;
    }
    for option in options {
        if trimmed.eq_ignore_ascii_case(option.text.trim()) {
            return Choice::Label(option.label.clone());
        }
    }
    let stripped = trimmed.trim_start_matches(['(', '[', '{', '"', '\'', '*', ' ']);
    let mut chars = stripped.chars();
    if let Some(first) = chars.next() {
        let boundary = chars.next().map_or(true, |c| !c.is_ascii_alphanumeric());
        if boundary {
            for option in options {
                if option.label.eq_ignore_ascii_case(&first.to_string()) {
                    return Choice::Label(option.label.clone());
                }
            }
        }
    }
    Choice::Refusal
}

/// Estimate the failure rate of one set with m samples at seeds
/// `seed..seed+m-1`, charging the ledger up front.
pub fn evaluate(
    target: &dyn TargetModel,
    ctx: &EvalContext,
    set: &ConceptSet,
    m: u64,
    ledger: &mut BudgetLedger,
    seed: u64,
    phase: &str,
) -> Result<EvalRecord, EvalError> {
    let (_, graph) = build_anchor_unchecked(&ctx.catalog, set).map_err(OracleError::from)?;
    let answer = ground_truth_for_graph(set, &graph, &ctx.rules)?;
    let description = describe(&ctx.catalog, set).map_err(OracleError::from)?;

    ledger.reserve(m, phase)?;

    let mut failures = 0u64;
    let mut transport_errors = 0u64;
    let mut answers = Vec::with_capacity(m as usize);

    for i in 0..m {
        let sample_seed = seed.wrapping_add(i);
        let request = AnswerRequest {
            set,
            question: &answer.question_text,
            options: &answer.options,
            scene_description: &description,
            scene_graph: &graph,
            sample_index: i as usize,
            seed: sample_seed,
            expected: &answer.expected,
        };

        let mut outcome = target.answer(&request);
        let mut attempts = 0;
        while outcome.is_err() && attempts < ctx.retries {
            attempts += 1;
            outcome = target.answer(&request);
        }

        match outcome {
            Ok(raw) => {
                let correct = matches!(
                    parse_choice(&raw, &answer.options),
                    Choice::Label(ref label) if label == &answer.expected
                );
                if !correct {
                    failures += 1;
                }
                answers.push(raw);
            }
            Err(TargetError::Transport(_)) => {
                transport_errors += 1;
                failures += 1;
                answers.push(TRANSPORT_ERROR_TOKEN.to_string());
            }
        }

        for concept in set.iter() {
            if let Some((pos_ok, neg_ok)) = target.recognition(concept, sample_seed) {
                let mut log = ctx.recognition.borrow_mut();
                let counts = log.entry(concept.to_string()).or_default();
                counts.pos_total += 1;
                counts.neg_total += 1;
                if pos_ok {
                    counts.pos_correct += 1;
                }
                if neg_ok {
                    counts.neg_correct += 1;
                }
            }
        }
    }

    Ok(EvalRecord {
        set: set.clone(),
        m,
        failures,
        fr: failures as f64 / m as f64,
        answers,
        seed,
        budget_cost: m,
        transport_errors,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PairWeight {
    a: String,
    b: String,
    weight: f64,
}

/// Desk-scale stand-in for a rendered-scene target: an additive planted
/// failure probability over atoms and unordered pairs, clamped to [0, 1].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScenario {
    #[serde(default)]
    pub base: f64,
    #[serde(default)]
    pub atoms: BTreeMap<String, f64>,
    #[serde(default)]
    pairs: Vec<PairWeight>,
    /// Per-concept probability that the perception probe answers correctly.
    /// Concepts not listed are perfectly visible.
    #[serde(default)]
    pub visibility: BTreeMap<String, f64>,
}

impl SyntheticScenario {
    pub fn with_base(base: f64) -> Self {
        SyntheticScenario {
            base,
            ..Default::default()
        }
    }

    pub fn load(source: &str) -> Result<Self, EvalError> {
        toml::from_str(source).map_err(|e| EvalError::ScenarioParse(e.to_string()))
    }

    pub fn load_file(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::load(&text)
    }

    pub fn with_pair(mut self, a: &str, b: &str, weight: f64) -> Self {
        self.pairs.push(PairWeight {
            a: a.to_string(),
            b: b.to_string(),
            weight,
        });
        self
    }

    pub fn with_atom(mut self, id: &str, weight: f64) -> Self {
        self.atoms.insert(id.to_string(), weight);
        self
    }

    pub fn pair_weight(&self, a: &str, b: &str) -> f64 {
        self.pairs
            .iter()
            .filter(|p| (p.a == a && p.b == b) || (p.a == b && p.b == a))
            .map(|p| p.weight)
            .sum()
    }

    /// clamp(base + sum of atom weights + sum of pair weights, 0, 1).
    pub fn planted_probability(&self, set: &ConceptSet) -> f64 {
        let mut p = self.base;
        for id in set.iter() {
            p += self.atoms.get(id).copied().unwrap_or(0.0);
        }
        for pair in &self.pairs {
            if set.contains(&pair.a) && set.contains(&pair.b) {
                p += pair.weight;
            }
        }
        p.clamp(0.0, 1.0)
    }
}

/// Answers the expected option with probability 1-p and the wrong option
/// with probability p, where p is the scenario's planted probability for the
/// set. Fully determined by (scenario, target seed, set, sample seed).
pub struct SyntheticTarget {
    scenario: SyntheticScenario,
    seed: u64,
}

impl SyntheticTarget {
    pub fn new(scenario: SyntheticScenario, seed: u64) -> Self {
        SyntheticTarget { scenario, seed }
    }

    pub fn scenario(&self) -> &SyntheticScenario {
        &self.scenario
    }

    fn rng(&self, salt: u64, extra: u64) -> ChaCha12Rng {
        let mixed = seeds::mix(self.seed ^ seeds::mix(salt) ^ seeds::mix(extra));
        ChaCha12Rng::seed_from_u64(mixed)
    }
}

impl TargetModel for SyntheticTarget {
    fn name(&self) -> &str {
        "synthetic"
    }

    fn answer(&self, request: &AnswerRequest<'_>) -> Result<String, TargetError> {
        let p = self.scenario.planted_probability(request.set);
        let mut rng = self.rng(seeds::text_seed(&request.set.key()), request.seed);
        let fail: bool = rng.random::<f64>() < p;
        let label = if fail {
            request
                .options
                .iter()
                .map(|o| o.label.as_str())
                .find(|l| *l != request.expected)
                .unwrap_or(request.expected)
        } else {
            request.expected
        };
        Ok(format!("({label})"))
    }

    fn recognition(&self, concept: &str, seed: u64) -> Option<(bool, bool)> {
        let v = self.scenario.visibility.get(concept).copied()?;
        let mut rng = self.rng(seeds::text_seed(concept) ^ 0x5eed, seed);
        let pos = rng.random::<f64>() < v;
        let neg = rng.random::<f64>() < v;
        Some((pos, neg))
    }
}

/// Replays answers recorded by a previous run, keyed by (set, sample index).
pub struct ReplayTarget {
    answers: HashMap<(String, usize), String>,
}

impl ReplayTarget {
    pub fn from_records(records: &[EvalRecord]) -> Self {
        let mut answers = HashMap::new();
        for record in records {
            for (i, raw) in record.answers.iter().enumerate() {
                answers.insert((record.set.key(), i), raw.clone());
            }
        }
        ReplayTarget { answers }
    }

    /// Load from a JSON-lines log. Each line must contain the `set` and
    /// `answers` fields of an evaluation record; wrapper fields are ignored.
    pub fn from_log_file(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut answers = HashMap::new();
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            let value: serde_json::Value =
                serde_json::from_str(line).map_err(|e| EvalError::ScenarioParse(e.to_string()))?;
            let record = value.get("record").unwrap_or(&value);
            let set: ConceptSet = serde_json::from_value(record["set"].clone())
                .map_err(|e| EvalError::ScenarioParse(e.to_string()))?;
            let raw_answers: Vec<String> = serde_json::from_value(record["answers"].clone())
                .map_err(|e| EvalError::ScenarioParse(e.to_string()))?;
            for (i, raw) in raw_answers.into_iter().enumerate() {
                answers.insert((set.key(), i), raw);
            }
        }
        Ok(ReplayTarget { answers })
    }
}

impl TargetModel for ReplayTarget {
    fn name(&self) -> &str {
        "replay"
    }

    fn answer(&self, request: &AnswerRequest<'_>) -> Result<String, TargetError> {
        self.answers
            .get(&(request.set.key(), request.sample_index))
            .cloned()
            .ok_or_else(|| {
                TargetError::Transport(format!(
                    "no replay entry for {} sample {}",
                    request.set,
                    request.sample_index
                ))
            })
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    question: &'a str,
    options: Vec<String>,
    scene_description: &'a str,
    scene_graph: &'a SceneGraph,
    seed: u64,
}

#[derive(Deserialize)]
struct WireResponse {
    answer: String,
}

/// Adapter for an external answerer: one JSON request per line on stdin, one
/// JSON `{"answer": ...}` line back on stdout.
pub struct SubprocessTarget {
    name: String,
    io: Mutex<SubprocessIo>,
}

struct SubprocessIo {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl SubprocessTarget {
    pub fn spawn(command: &[String]) -> Result<Self, EvalError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| EvalError::ScenarioParse("empty subprocess command".to_string()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|source| EvalError::Spawn {
                command: command.join(" "),
                source,
            })?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(SubprocessTarget {
            name: format!("subprocess:{program}"),
            io: Mutex::new(SubprocessIo {
                child,
                stdin,
                stdout,
            }),
        })
    }
}

impl Drop for SubprocessTarget {
    fn drop(&mut self) {
        if let Ok(mut io) = self.io.lock() {
            let _ = io.child.kill();
            let _ = io.child.wait();
        }
    }
}

impl TargetModel for SubprocessTarget {
    fn name(&self) -> &str {
        &self.name
    }

    fn answer(&self, request: &AnswerRequest<'_>) -> Result<String, TargetError> {
        let wire = WireRequest {
            question: request.question,
            options: request
                .options
                .iter()
                .map(|o| format!("({}) {}", o.label, o.text))
                .collect(),
            scene_description: request.scene_description,
            scene_graph: request.scene_graph,
            seed: request.seed,
        };
        let line =
            serde_json::to_string(&wire).map_err(|e| TargetError::Transport(e.to_string()))?;

        let mut io = self
            .io
            .lock()
            .map_err(|_| TargetError::Transport("subprocess mutex poisoned".to_string()))?;
        io.stdin
            .write_all(line.as_bytes())
            .and_then(|_| io.stdin.write_all(b"\n"))
            .and_then(|_| io.stdin.flush())
            .map_err(|e| TargetError::Transport(e.to_string()))?;

        let mut response = String::new();
        let n = io
            .stdout
            .read_line(&mut response)
            .map_err(|e| TargetError::Transport(e.to_string()))?;
        if n == 0 {
            return Err(TargetError::Transport("subprocess closed stdout".into()));
        }
        let parsed: WireResponse = serde_json::from_str(response.trim())
            .map_err(|e| TargetError::Transport(format!("bad response line: {e}")))?;
        Ok(parsed.answer)
    }
}
