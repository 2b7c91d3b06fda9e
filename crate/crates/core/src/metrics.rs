//! Run analysis: failure-mode classification, the PFM / MFR / Div summary,
//! per-concept profiles (conditional failure rate, recognition rate, regime),
//! pairwise lift against an independence baseline, and transfer statistics.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::ConceptSet;
use crate::evaluator::{EvalRecord, RecognitionLog};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
}

/// Sets whose estimated failure rate reaches the threshold. The boundary
/// fr = tau is included.
pub fn classify_failure_modes(records: &[EvalRecord], tau: f64) -> BTreeSet<ConceptSet> {
    records
        .iter()
        .filter(|r| r.fr() >= tau)
        .map(|r| r.set.clone())
        .collect()
}

/// Percent failure modes, mean failure rate, and failure-mode diversity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// Fraction of evaluated sets with fr >= tau.
    pub pfm: f64,
    /// Failures over all inferences of the run.
    pub mfr: f64,
    /// Mean pairwise Jaccard distance among failure modes; absent with
    /// fewer than two.
    pub div: Option<f64>,
    pub candidates: usize,
    pub failure_mode_count: usize,
    pub total_inferences: u64,
    pub total_failures: u64,
}

pub fn summarize(records: &[EvalRecord], tau: f64) -> RunSummary {
    let failing: Vec<&EvalRecord> = records.iter().filter(|r| r.fr() >= tau).collect();
    let total_inferences: u64 = records.iter().map(|r| r.m).sum();
    let total_failures: u64 = records.iter().map(|r| r.failures).sum();

    let pfm = if records.is_empty() {
        0.0
    } else {
        failing.len() as f64 / records.len() as f64
    };
    let mfr = if total_inferences == 0 {
        0.0
    } else {
        total_failures as f64 / total_inferences as f64
    };

    let div = if failing.len() < 2 {
        None
    } else {
        let mut sum = 0.0;
        let mut pairs = 0u64;
        for i in 0..failing.len() {
            for j in (i + 1)..failing.len() {
                sum += 1.0 - failing[i].set.jaccard(&failing[j].set);
                pairs += 1;
            }
        }
        Some(sum / pairs as f64)
    };

    RunSummary {
        pfm,
        mfr,
        div,
        candidates: records.len(),
        failure_mode_count: failing.len(),
        total_inferences,
        total_failures,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Reasoning,
    Recognition,
    Mixed,
}

/// Regime cutoffs: recognition rate at or above 0.7 is a reasoning failure
/// (the model sees the concept and still fails), at or below 0.3 a
/// recognition failure, anything between is mixed.
pub fn regime_for(recognition_rate: f64) -> Regime {
    if recognition_rate >= 0.7 {
        Regime::Reasoning
    } else if recognition_rate <= 0.3 {
        Regime::Recognition
    } else {
        Regime::Mixed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptProfile {
    pub concept: String,
    /// Conditional failure rate: mean fr over returned sets containing the
    /// concept.
    pub f: f64,
    /// Recognition rate from the paired-statement probe, when available.
    pub r: Option<f64>,
    /// Number of returned sets containing the concept.
    pub n: usize,
    pub regime: Option<Regime>,
}

/// Per-concept profiles over records with support at least `n_min`
/// (default 10), sorted by conditional failure rate descending.
pub fn concept_profiles(
    records: &[EvalRecord],
    recognition: Option<&RecognitionLog>,
    n_min: usize,
) -> Vec<ConceptProfile> {
    let mut by_concept: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for record in records {
        let fr = record.fr();
        for concept in record.set.iter() {
            let entry = by_concept.entry(concept).or_insert((0.0, 0));
            entry.0 += fr;
            entry.1 += 1;
        }
    }

    let mut profiles: Vec<ConceptProfile> = by_concept
        .into_iter()
        .filter(|(_, (_, n))| *n >= n_min)
        .map(|(concept, (sum, n))| {
            let r = recognition
                .and_then(|log| log.get(concept))
                .and_then(|c| c.rate());
            ConceptProfile {
                concept: concept.to_string(),
                f: sum / n as f64,
                r,
                n,
                regime: r.map(regime_for),
            }
        })
        .collect();
    profiles.sort_by(|a, b| {
        b.f.total_cmp(&a.f)
            .then_with(|| a.concept.cmp(&b.concept))
    });
    profiles
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LiftBaseline {
    /// F(A) + F(B) - F(A)F(B): the joint failure rate if the two concepts
    /// failed independently.
    Independence,
    /// max(F(A), F(B)): a conservative floor under selection bias.
    MaxAtom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftEntry {
    pub a: String,
    pub b: String,
    /// Mean fr over returned sets containing both concepts.
    pub observed: f64,
    pub baseline: f64,
    pub lift: f64,
    /// Number of returned sets containing both.
    pub n: usize,
}

/// lift = observed - baseline, exactly.
pub fn lift_value(observed: f64, baseline: f64) -> f64 {
    observed - baseline
}

/// Pairwise lift table over all concept pairs with joint support at least
/// `pair_n_min` and both atoms supported by at least `atom_n_min` records,
/// sorted by |lift| descending.
pub fn lift_table(
    records: &[EvalRecord],
    atom_n_min: usize,
    pair_n_min: usize,
    baseline: LiftBaseline,
) -> Vec<LiftEntry> {
    let mut atom: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    let mut pair: BTreeMap<(&str, &str), (f64, usize)> = BTreeMap::new();
    for record in records {
        let fr = record.fr();
        let ids: Vec<&str> = record.set.iter().collect();
        for (i, a) in ids.iter().enumerate() {
            let entry = atom.entry(a).or_insert((0.0, 0));
            entry.0 += fr;
            entry.1 += 1;
            for b in &ids[i + 1..] {
                let entry = pair.entry((a, b)).or_insert((0.0, 0));
                entry.0 += fr;
                entry.1 += 1;
            }
        }
    }

    let f = |c: &str| -> Option<(f64, usize)> {
        atom.get(c).map(|(sum, n)| (sum / *n as f64, *n))
    };

    let mut entries: Vec<LiftEntry> = pair
        .into_iter()
        .filter(|(_, (_, n))| *n >= pair_n_min.max(1))
        .filter_map(|((a, b), (sum, n))| {
            let (fa, na) = f(a)?;
            let (fb, nb) = f(b)?;
            if na < atom_n_min || nb < atom_n_min {
                return None;
            }
            let observed = sum / n as f64;
            let base = match baseline {
                LiftBaseline::Independence => fa + fb - fa * fb,
                LiftBaseline::MaxAtom => fa.max(fb),
            };
            Some(LiftEntry {
                a: a.to_string(),
                b: b.to_string(),
                observed,
                baseline: base,
                lift: lift_value(observed, base),
                n,
            })
        })
        .collect();
    entries.sort_by(|x, y| {
        y.lift
            .abs()
            .total_cmp(&x.lift.abs())
            .then_with(|| (x.a.clone(), x.b.clone()).cmp(&(y.a.clone(), y.b.clone())))
    });
    entries
}

/// Spearman rank correlation with average ranks for ties. `None` when fewer
/// than two points or either side has zero rank variance.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    pearson(&rx, &ry)
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // ranks are 1-based; ties share the average rank
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

pub const TRANSFER_BUCKETS: [(&str, f64, f64); 5] = [
    ("0%", 0.0, 0.0),
    ("1-20%", 0.0, 0.2),
    ("21-50%", 0.2, 0.5),
    ("51-80%", 0.5, 0.8),
    ("81-100%", 0.8, 1.0),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferBucket {
    pub label: String,
    pub n: usize,
    pub mean_target_fr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    /// Mean target fr over the transferred sets.
    pub mean_target_fr: f64,
    /// The target's own random-baseline MFR, when measured.
    pub baseline_mfr: Option<f64>,
    /// mean_target_fr / baseline_mfr.
    pub multiplier: Option<f64>,
    /// Source-fr bins with the mean target fr per bin.
    pub buckets: Vec<TransferBucket>,
    /// Rank correlation between source and target per-set frs.
    pub spearman: Option<f64>,
    pub pairs: Vec<TransferPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferPair {
    pub set: ConceptSet,
    pub source_fr: f64,
    pub target_fr: f64,
}

/// Transfer statistics for sets discovered on a source model and re-evaluated
/// on a target. `source` pairs each set with its source-run fr; target
/// records are matched by set.
pub fn transfer_report(
    source: &[(ConceptSet, f64)],
    target_records: &[EvalRecord],
    baseline_mfr: Option<f64>,
) -> Result<TransferReport, MetricsError> {
    if source.is_empty() {
        return Err(MetricsError::EmptyInput("source sets"));
    }
    let by_key: BTreeMap<String, &EvalRecord> = target_records
        .iter()
        .map(|r| (r.set.key(), r))
        .collect();

    let mut pairs = Vec::new();
    for (set, source_fr) in source {
        if let Some(record) = by_key.get(&set.key()) {
            pairs.push(TransferPair {
                set: set.clone(),
                source_fr: *source_fr,
                target_fr: record.fr(),
            });
        }
    }
    if pairs.is_empty() {
        return Err(MetricsError::EmptyInput("matched target records"));
    }

    let mean_target_fr =
        pairs.iter().map(|p| p.target_fr).sum::<f64>() / pairs.len() as f64;
    let multiplier = baseline_mfr
        .filter(|b| *b > 0.0)
        .map(|b| mean_target_fr / b);

    let buckets = TRANSFER_BUCKETS
        .iter()
        .map(|(label, lo, hi)| {
            let inside: Vec<&TransferPair> = pairs
                .iter()
                .filter(|p| {
                    if *lo == 0.0 && *hi == 0.0 {
                        p.source_fr == 0.0
                    } else {
                        p.source_fr > *lo && p.source_fr <= *hi
                    }
                })
                .collect();
            TransferBucket {
                label: label.to_string(),
                n: inside.len(),
                mean_target_fr: if inside.is_empty() {
                    None
                } else {
                    Some(
                        inside.iter().map(|p| p.target_fr).sum::<f64>()
                            / inside.len() as f64,
                    )
                },
            }
        })
        .collect();

    let xs: Vec<f64> = pairs.iter().map(|p| p.source_fr).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.target_fr).collect();
    let rho = spearman(&xs, &ys);

    Ok(TransferReport {
        mean_target_fr,
        baseline_mfr,
        multiplier,
        buckets,
        spearman: rho,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(ids: &[&str], failures: u64, m: u64) -> EvalRecord {
        EvalRecord {
            set: ConceptSet::from_ids(ids.iter().copied()),
            m,
            failures,
            fr: failures as f64 / m as f64,
            answers: vec![],
            seed: 0,
            budget_cost: m,
            transport_errors: 0,
        }
    }

    #[test]
    fn boundary_fr_is_a_failure_mode() {
        let records = vec![rec(&["a"], 3, 5), rec(&["b"], 59, 100)];
        let fm = classify_failure_modes(&records, 0.6);
        assert!(fm.contains(&ConceptSet::from_ids(["a"])));
        assert!(!fm.contains(&ConceptSet::from_ids(["b"])));
    }

    #[test]
    fn tau_sweep_counts_are_monotone_non_increasing() {
        let records: Vec<EvalRecord> = (0..=10).map(|i| rec(&[&format!("c{i}")], i, 10)).collect();
        let mut last = usize::MAX;
        for tau_pct in [20, 40, 60, 80, 100] {
            let count = classify_failure_modes(&records, tau_pct as f64 / 100.0).len();
            assert!(count <= last);
            last = count;
        }
    }

    #[test]
    fn summary_counts_and_rates() {
        let records = vec![rec(&["a"], 5, 5), rec(&["b"], 0, 5), rec(&["a", "b"], 4, 5)];
        let summary = summarize(&records, 0.6);
        assert_eq!(summary.candidates, 3);
        assert_eq!(summary.failure_mode_count, 2);
        assert!((summary.pfm - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(summary.total_inferences, 15);
        assert_eq!(summary.total_failures, 9);
        assert!((summary.mfr - 0.6).abs() < 1e-12);
    }

    #[test]
    fn identical_failure_modes_have_zero_div() {
        let records = vec![rec(&["a", "b"], 5, 5), rec(&["a", "b"], 4, 5)];
        assert_eq!(summarize(&records, 0.6).div, Some(0.0));
    }

    #[test]
    fn disjoint_failure_modes_have_div_one() {
        let records = vec![rec(&["a"], 5, 5), rec(&["b"], 5, 5)];
        assert_eq!(summarize(&records, 0.6).div, Some(1.0));
    }

    #[test]
    fn div_absent_below_two_failure_modes() {
        let records = vec![rec(&["a"], 5, 5), rec(&["b"], 0, 5)];
        assert_eq!(summarize(&records, 0.6).div, None);
    }

    #[test]
    fn recognition_rate_and_regimes() {
        use crate::evaluator::RecognitionCounts;
        let mut log = RecognitionLog::new();
        log.insert(
            "a".into(),
            RecognitionCounts {
                pos_correct: 8,
                pos_total: 10,
                neg_correct: 6,
                neg_total: 10,
            },
        );
        assert_eq!(log["a"].rate(), Some(0.7));
        assert_eq!(regime_for(0.7), Regime::Reasoning);
        assert_eq!(regime_for(0.976), Regime::Reasoning);
        assert_eq!(regime_for(0.209), Regime::Recognition);
        assert_eq!(regime_for(0.5), Regime::Mixed);
    }

    #[test]
    fn profiles_respect_support_filter_and_order() {
        let mut records = Vec::new();
        for i in 0..12 {
            records.push(rec(&["common", &format!("x{i}")], if i < 6 { 5 } else { 0 }, 5));
        }
        records.push(rec(&["rare"], 5, 5));
        let profiles = concept_profiles(&records, None, 10);
        assert_eq!(profiles.len(), 1);
        assert_eq!(profiles[0].concept, "common");
        assert_eq!(profiles[0].n, 12);
        assert!((profiles[0].f - 0.5).abs() < 1e-12);
        assert_eq!(profiles[0].r, None);
        assert_eq!(profiles[0].regime, None);
    }

    #[test]
    fn independence_baseline_matches_inclusion_exclusion() {
        assert!((0.3f64 + 0.2 - 0.3 * 0.2 - 0.44).abs() < 1e-12);
        let mut records = Vec::new();
        // F(a) = 0.3 over 10 records, F(b) = 0.2 over 10, pair observed 0.5 over 2.
        for i in 0..8 {
            records.push(rec(&["a", &format!("fa{i}")], if i < 2 { 5 } else { 1 }, 5));
        }
        records.push(rec(&["a", "b", "j0"], 3, 5));
        records.push(rec(&["a", "b", "j1"], 2, 5));
        for i in 0..8 {
            records.push(rec(&["b", &format!("fb{i}")], if i < 1 { 2 } else { 0 }, 5));
        }
        let f_a = records
            .iter()
            .filter(|r| r.set.contains("a"))
            .map(|r| r.fr())
            .sum::<f64>()
            / 10.0;
        let f_b = records
            .iter()
            .filter(|r| r.set.contains("b"))
            .map(|r| r.fr())
            .sum::<f64>()
            / 10.0;
        let table = lift_table(&records, 10, 1, LiftBaseline::Independence);
        let entry = table.iter().find(|e| e.a == "a" && e.b == "b").unwrap();
        assert_eq!(entry.n, 2);
        assert!((entry.observed - 0.5).abs() < 1e-12);
        assert!((entry.baseline - (f_a + f_b - f_a * f_b)).abs() < 1e-12);
        assert!((entry.lift - (entry.observed - entry.baseline)).abs() < 1e-15);
    }

    #[test]
    fn printed_lift_fixtures_round_trip() {
        let indoor = lift_value(0.354, 0.218);
        assert_eq!((indoor * 1000.0).round() / 1000.0, 0.136);
        let driving = lift_value(0.50, 0.316);
        assert_eq!((driving * 1000.0).round() / 1000.0, 0.184);
    }

    #[test]
    fn max_atom_baseline_variant() {
        let records = vec![
            rec(&["a", "b"], 5, 5),
            rec(&["a", "z0"], 2, 5),
            rec(&["b", "z1"], 1, 5),
        ];
        let table = lift_table(&records, 1, 1, LiftBaseline::MaxAtom);
        let entry = table.iter().find(|e| e.a == "a" && e.b == "b").unwrap();
        // F(a) = mean(1.0, 0.4) = 0.7, F(b) = mean(1.0, 0.2) = 0.6.
        assert!((entry.baseline - 0.7).abs() < 1e-12);
    }

    #[test]
    fn spearman_of_identical_rankings_is_one() {
        let xs = [0.1, 0.5, 0.9, 0.3];
        let ys = [0.2, 0.6, 1.0, 0.4];
        assert!((spearman(&xs, &ys).unwrap() - 1.0).abs() < 1e-12);
        let rev: Vec<f64> = ys.iter().map(|y| 1.0 - y).collect();
        assert!((spearman(&xs, &rev).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(spearman(&[0.5, 0.5], &[0.1, 0.9]), None);
    }

    #[test]
    fn transfer_multiplier_and_buckets() {
        let source = vec![
            (ConceptSet::from_ids(["a"]), 1.0),
            (ConceptSet::from_ids(["b"]), 0.9),
            (ConceptSet::from_ids(["c"]), 0.0),
        ];
        let target_records = vec![
            rec(&["a"], 16, 20),
            rec(&["b"], 15, 20),
            rec(&["c"], 16, 20),
        ];
        let report = transfer_report(&source, &target_records, Some(0.095)).unwrap();
        assert!((report.mean_target_fr - 0.7833333333333333).abs() < 1e-12);
        let mult = report.multiplier.unwrap();
        assert!((mult - report.mean_target_fr / 0.095).abs() < 1e-12);
        // All target frs equal 0.8: every nonempty bucket shows that mean.
        let constant = vec![
            rec(&["a"], 16, 20),
            rec(&["b"], 16, 20),
            rec(&["c"], 16, 20),
        ];
        let report = transfer_report(&source, &constant, None).unwrap();
        for bucket in &report.buckets {
            if bucket.n > 0 {
                assert_eq!(bucket.mean_target_fr, Some(0.8));
            }
        }
        assert_eq!(report.multiplier, None);
    }

    #[test]
    fn paper_scale_multiplier_example() {
        // mean target fr 0.78 over a 0.095 baseline is roughly an 8x lift.
        let source = vec![(ConceptSet::from_ids(["a"]), 1.0)];
        let target = vec![rec(&["a"], 78, 100)];
        let report = transfer_report(&source, &target, Some(0.095)).unwrap();
        let mult = report.multiplier.unwrap();
        assert!((mult - 8.21).abs() < 0.01);
    }

    #[test]
    fn empty_transfer_inputs_error() {
        assert!(transfer_report(&[], &[], None).is_err());
        let source = vec![(ConceptSet::from_ids(["a"]), 1.0)];
        assert!(transfer_report(&source, &[], None).is_err());
    }
}
