//! The three budgeted search strategies: uniform random sampling, beam
//! search with an MMR-style diversity-aware value function, and GP Thompson
//! sampling warm-started by a beam phase.
//!
//! All three share the validity gate, the per-set m-sample estimator, and
//! the dedup rule (no set is evaluated twice in a run). The budget is given
//! in inferences; a run stops the moment budget/m sets have been evaluated.
//! Everything is driven by named seed streams, so a fixed seed reproduces a
//! run bit for bit on the synthetic and replay targets.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, CatalogError, ConceptSet};
use crate::evaluator::{evaluate, BudgetLedger, EvalContext, EvalError, EvalRecord, TargetModel};
use crate::gp::{self, encode, GpError, GpModel, KernelSpec};
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Random,
    Beam,
    Gpts,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Algorithm::Random => write!(f, "random"),
            Algorithm::Beam => write!(f, "beam"),
            Algorithm::Gpts => write!(f, "gpts"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub algo: Algorithm,
    /// Total inference budget B.
    pub budget: u64,
    /// Samples per concept set m.
    pub samples: u64,
    /// Beam width.
    pub beam_width: usize,
    /// Maximum composition depth.
    pub max_depth: usize,
    /// Diversity weight in the MMR value function.
    pub lambda: f64,
    /// Failure-mode threshold on the estimated failure rate.
    pub tau: f64,
    /// Beam-phase budget for GPTS.
    pub beam_budget: u64,
    /// Thompson proposal pool size.
    pub pool_size: usize,
    pub kernel: KernelSpec,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            algo: Algorithm::Gpts,
            budget: 1000,
            samples: 5,
            beam_width: 5,
            max_depth: 5,
            lambda: 0.25,
            tau: 0.6,
            beam_budget: 500,
            pool_size: 256,
            kernel: KernelSpec::default(),
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        if self.samples == 0 {
            return Err(SearchError::BadConfig("samples must be >= 1".into()));
        }
        if self.beam_width == 0 {
            return Err(SearchError::BadConfig("beam width must be >= 1".into()));
        }
        if self.max_depth == 0 {
            return Err(SearchError::BadConfig("max depth must be >= 1".into()));
        }
        if self.lambda < 0.0 {
            return Err(SearchError::BadConfig("lambda must be >= 0".into()));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(SearchError::BadConfig("tau must be in (0, 1]".into()));
        }
        if self.beam_budget > self.budget {
            return Err(SearchError::BadConfig(
                "beam-phase budget exceeds total budget".into(),
            ));
        }
        if self.pool_size == 0 {
            return Err(SearchError::BadConfig("pool size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid search config: {0}")]
    BadConfig(String),
    #[error("search space exhausted: no unexplored valid set found")]
    SpaceExhausted,
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
}

/// One line of the run trace: which phase evaluated which set, at what
/// level/iteration, with what estimate, and the cumulative spend after it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub phase: String,
    pub level: u32,
    pub set: ConceptSet,
    pub fr: f64,
    pub spent: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub all_candidates: Vec<EvalRecord>,
    pub failure_modes: BTreeSet<ConceptSet>,
    pub spent: u64,
    pub trace: Vec<TraceEntry>,
    pub warnings: Vec<String>,
    pub ledger: BudgetLedger,
}

/// MMR-style value: estimated failure rate minus lambda times the maximum
/// Jaccard similarity to the frontier built so far. An empty frontier means
/// no penalty.
pub fn mmr_value(fr: f64, frontier: &[ConceptSet], candidate: &ConceptSet, lambda: f64) -> f64 {
    let max_sim = frontier
        .iter()
        .map(|s| candidate.jaccard(s))
        .fold(0.0f64, f64::max);
    fr - lambda * max_sim
}

/// Iteratively select up to k candidates by MMR value against the partially
/// built frontier. Ties break toward higher fr, then the lexicographically
/// smaller canonical serialization.
pub fn mmr_select(candidates: &[(ConceptSet, f64)], k: usize, lambda: f64) -> Vec<ConceptSet> {
    let mut remaining: Vec<usize> = (0..candidates.len()).collect();
    let mut selected: Vec<ConceptSet> = Vec::new();
    while selected.len() < k && !remaining.is_empty() {
        let mut best_pos = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (pos, &idx) in remaining.iter().enumerate() {
            let (set, fr) = &candidates[idx];
            let score = mmr_value(*fr, &selected, set, lambda);
            let better = match score.total_cmp(&best_score) {
                std::cmp::Ordering::Greater => true,
                std::cmp::Ordering::Less => false,
                std::cmp::Ordering::Equal => {
                    let (best_set, best_fr) = &candidates[remaining[best_pos]];
                    match fr.total_cmp(best_fr) {
                        std::cmp::Ordering::Greater => true,
                        std::cmp::Ordering::Less => false,
                        std::cmp::Ordering::Equal => set.key() < best_set.key(),
                    }
                }
            };
            if better || pos == 0 {
                best_pos = pos;
                best_score = score;
            }
        }
        let idx = remaining.remove(best_pos);
        selected.push(candidates[idx].0.clone());
    }
    selected
}

const DRAW_ATTEMPTS: usize = 64;
const GROW_REJECTION_CAP: usize = 8;

/// Grow one valid set of the requested size by uniform valid expansions.
/// Returns None on a dead end (no valid expansion before reaching the size).
fn grow_random_set(catalog: &Catalog, size: usize, rng: &mut ChaCha12Rng) -> Option<ConceptSet> {
    let ids: Vec<&str> = catalog.ids().collect();
    let mut set = ConceptSet::new();
    while set.len() < size {
        // Rejection sampling first (uniform over valid expansions), falling
        // back to full enumeration for exact dead-end detection.
        let mut grown = false;
        for _ in 0..GROW_REJECTION_CAP * ids.len().max(1) {
            let id = ids[rng.random_range(0..ids.len())];
            if set.contains(id) {
                continue;
            }
            let candidate = set.with(id);
            if catalog
                .check_validity(&candidate)
                .map(|v| v.is_valid())
                .unwrap_or(false)
            {
                set = candidate;
                grown = true;
                break;
            }
        }
        if !grown {
            let expansions = catalog.enumerate_expansions(&set).ok()?;
            if expansions.is_empty() {
                return None;
            }
            set = expansions[rng.random_range(0..expansions.len())].clone();
        }
    }
    Some(set)
}

/// Draw an unexplored valid set, restarting on dead ends and duplicates.
fn draw_unexplored(
    catalog: &Catalog,
    max_depth: usize,
    explored: &BTreeSet<String>,
    rng: &mut ChaCha12Rng,
) -> Option<ConceptSet> {
    for _ in 0..DRAW_ATTEMPTS {
        let size = rng.random_range(1..=max_depth);
        let Some(set) = grow_random_set(catalog, size, rng) else {
            continue;
        };
        if !explored.contains(&set.key()) {
            return Some(set);
        }
    }
    None
}

struct RunState {
    records: Vec<EvalRecord>,
    explored: BTreeSet<String>,
    trace: Vec<TraceEntry>,
    warnings: Vec<String>,
    ledger: BudgetLedger,
    eval_seeds: ChaCha12Rng,
    tau: f64,
}

impl RunState {
    fn new(cfg: &SearchConfig) -> Self {
        RunState {
            records: Vec::new(),
            explored: BTreeSet::new(),
            trace: Vec::new(),
            warnings: Vec::new(),
            ledger: BudgetLedger::new(cfg.budget),
            eval_seeds: seeds::stream_rng(cfg.seed, "eval-seeds"),
            tau: cfg.tau,
        }
    }

    /// Evaluate one unexplored set; returns its fr. Oracle failures (for
    /// example an unmatchable composition) are reported as `Ok(None)`: the
    /// set is skipped and no budget is charged.
    fn evaluate_set(
        &mut self,
        ctx: &EvalContext,
        target: &dyn TargetModel,
        set: &ConceptSet,
        m: u64,
        phase: &str,
        level: u32,
    ) -> Result<Option<f64>, SearchError> {
        let seed = self.eval_seeds.random::<u64>();
        match evaluate(target, ctx, set, m, &mut self.ledger, seed, phase) {
            Ok(record) => {
                let fr = record.fr();
                self.explored.insert(set.key());
                self.trace.push(TraceEntry {
                    phase: phase.to_string(),
                    level,
                    set: set.clone(),
                    fr,
                    spent: self.ledger.spent,
                });
                self.records.push(record);
                Ok(Some(fr))
            }
            Err(EvalError::Oracle(err)) => {
                self.explored.insert(set.key());
                self.warnings
                    .push(format!("skipped {set}: {err} (no budget charged)"));
                Ok(None)
            }
            Err(err) => Err(err.into()),
        }
    }

    fn finish(self) -> SearchResult {
        let failure_modes = self
            .records
            .iter()
            .filter(|r| r.fr() >= self.tau)
            .map(|r| r.set.clone())
            .collect();
        SearchResult {
            all_candidates: self.records,
            failure_modes,
            spent: self.ledger.spent,
            trace: self.trace,
            warnings: self.warnings,
            ledger: self.ledger,
        }
    }
}

fn block_budget(cfg: &SearchConfig, inferences: u64) -> usize {
    (inferences / cfg.samples) as usize
}

fn remainder_warning(state: &mut RunState, cfg: &SearchConfig) {
    let remainder = cfg.budget % cfg.samples;
    if remainder > 0 {
        state.warnings.push(format!(
            "trailing {remainder} inferences (budget mod samples) left unspent"
        ));
    }
}

/// Uniform random search: stateless draws of valid sets, duplicates skipped.
pub fn run_random(
    cfg: &SearchConfig,
    ctx: &EvalContext,
    target: &dyn TargetModel,
) -> Result<SearchResult, SearchError> {
    cfg.validate()?;
    let catalog = ctx.catalog.with_max_depth(cfg.max_depth);
    let mut state = RunState::new(cfg);
    remainder_warning(&mut state, cfg);
    let blocks = block_budget(cfg, cfg.budget);
    let mut rng = seeds::stream_rng(cfg.seed, "random-draws");

    while state.records.len() < blocks {
        let Some(set) = draw_unexplored(&catalog, cfg.max_depth, &state.explored, &mut rng) else {
            state.warnings.push(format!(
                "search space exhausted after {} sets; {} inferences left unspent",
                state.records.len(),
                state.ledger.remaining()
            ));
            break;
        };
        let level = state.records.len() as u32 + 1;
        state.evaluate_set(ctx, target, &set, cfg.samples, "random", level)?;
    }
    Ok(state.finish())
}

/// The beam phase shared by `run_beam` and `run_gpts`: expand, evaluate,
/// re-select by MMR, until the depth bound or the block budget is reached.
fn beam_phase(
    cfg: &SearchConfig,
    ctx: &EvalContext,
    target: &dyn TargetModel,
    catalog: &Catalog,
    state: &mut RunState,
    blocks: usize,
) -> Result<(), SearchError> {
    let mut frontier: Vec<ConceptSet> = vec![ConceptSet::new()];

    for level in 1..=cfg.max_depth as u32 {
        if state.records.len() >= blocks {
            return Ok(());
        }
        let mut candidates: Vec<(ConceptSet, f64)> = Vec::new();
        for member in &frontier {
            for expansion in catalog.enumerate_expansions(member)? {
                if state.explored.contains(&expansion.key()) {
                    continue;
                }
                if let Some(fr) =
                    state.evaluate_set(ctx, target, &expansion, cfg.samples, "beam", level)?
                {
                    candidates.push((expansion, fr));
                }
                if state.records.len() >= blocks {
                    return Ok(());
                }
            }
        }
        if candidates.is_empty() {
            state.warnings.push(format!(
                "beam exhausted at level {level}: no unexplored valid expansions"
            ));
            return Ok(());
        }
        frontier = mmr_select(&candidates, cfg.beam_width, cfg.lambda);
    }
    Ok(())
}

/// Diversity-aware beam search over compositions.
pub fn run_beam(
    cfg: &SearchConfig,
    ctx: &EvalContext,
    target: &dyn TargetModel,
) -> Result<SearchResult, SearchError> {
    cfg.validate()?;
    let catalog = ctx.catalog.with_max_depth(cfg.max_depth);
    let mut state = RunState::new(cfg);
    remainder_warning(&mut state, cfg);
    let blocks = block_budget(cfg, cfg.budget);
    beam_phase(cfg, ctx, target, &catalog, &mut state, blocks)?;
    Ok(state.finish())
}

/// One Thompson proposal: a joint posterior draw over a pool of unexplored
/// valid sets, returning the argmax. Ties break toward the lexicographically
/// smaller serialization. `None` for the model means draw from the prior.
pub fn propose_thompson(
    model: Option<&GpModel>,
    catalog: &Catalog,
    max_depth: usize,
    explored: &BTreeSet<String>,
    pool_size: usize,
    kernel: KernelSpec,
    pool_rng: &mut ChaCha12Rng,
    draw_rng: &mut ChaCha12Rng,
) -> Result<ConceptSet, SearchError> {
    let mut pool: Vec<ConceptSet> = Vec::new();
    let mut keys: BTreeSet<String> = BTreeSet::new();
    let mut misses = 0usize;
    while pool.len() < pool_size && misses < DRAW_ATTEMPTS {
        let size = pool_rng.random_range(1..=max_depth);
        let candidate = grow_random_set(catalog, size, pool_rng);
        match candidate {
            Some(set) if !explored.contains(&set.key()) && !keys.contains(&set.key()) => {
                keys.insert(set.key());
                pool.push(set);
                misses = 0;
            }
            _ => misses += 1,
        }
    }
    if pool.is_empty() {
        return Err(SearchError::SpaceExhausted);
    }

    let encodings: Vec<_> = pool
        .iter()
        .map(|s| encode(s, catalog))
        .collect::<Result<_, _>>()?;
    let values = match model {
        Some(model) => model.sample_posterior(&encodings, draw_rng)?,
        None => gp::sample_prior(kernel, &encodings, draw_rng)?,
    };

    let mut best = 0;
    for i in 1..pool.len() {
        let better = match values[i].total_cmp(&values[best]) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Equal => pool[i].key() < pool[best].key(),
        };
        if better {
            best = i;
        }
    }
    Ok(pool.swap_remove(best))
}

/// GPTS: beam warm-start on `beam_budget` inferences, then iterated GP fit,
/// Thompson proposal, and evaluation for the remaining budget.
pub fn run_gpts(
    cfg: &SearchConfig,
    ctx: &EvalContext,
    target: &dyn TargetModel,
) -> Result<SearchResult, SearchError> {
    cfg.validate()?;
    let catalog = ctx.catalog.with_max_depth(cfg.max_depth);
    let mut state = RunState::new(cfg);
    remainder_warning(&mut state, cfg);

    let beam_blocks = block_budget(cfg, cfg.beam_budget);
    beam_phase(cfg, ctx, target, &catalog, &mut state, beam_blocks)?;

    let ts_blocks = block_budget(cfg, cfg.budget - cfg.beam_budget);
    let mut pool_rng = seeds::stream_rng(cfg.seed, "ts-pool");
    let mut draw_rng = seeds::stream_rng(cfg.seed, "ts-draw");

    for iteration in 1..=ts_blocks as u32 {
        if state.ledger.remaining() < cfg.samples {
            break;
        }
        let model = if state.records.is_empty() {
            None
        } else {
            let encodings: Vec<_> = state
                .records
                .iter()
                .map(|r| encode(&r.set, &catalog))
                .collect::<Result<_, _>>()?;
            let targets: Vec<f64> = state.records.iter().map(|r| r.fr()).collect();
            Some(gp::fit(&encodings, &targets, cfg.kernel)?)
        };

        let proposal = match propose_thompson(
            model.as_ref(),
            &catalog,
            cfg.max_depth,
            &state.explored,
            cfg.pool_size,
            cfg.kernel,
            &mut pool_rng,
            &mut draw_rng,
        ) {
            Ok(set) => set,
            Err(SearchError::SpaceExhausted) => {
                state.warnings.push(format!(
                    "thompson phase exhausted the search space after {} sets",
                    state.records.len()
                ));
                break;
            }
            Err(err) => return Err(err),
        };
        state.evaluate_set(ctx, target, &proposal, cfg.samples, "ts", iteration)?;
    }

    Ok(state.finish())
}

/// Dispatch on the configured algorithm.
pub fn run(
    cfg: &SearchConfig,
    ctx: &EvalContext,
    target: &dyn TargetModel,
) -> Result<SearchResult, SearchError> {
    match cfg.algo {
        Algorithm::Random => run_random(cfg, ctx, target),
        Algorithm::Beam => run_beam(cfg, ctx, target),
        Algorithm::Gpts => run_gpts(cfg, ctx, target),
    }
}
