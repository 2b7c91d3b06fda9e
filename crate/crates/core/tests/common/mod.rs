//! Shared fixtures for the integration suites.

use fmsearch::catalog::{Catalog, ConceptSet};
use fmsearch::evaluator::{EvalRecord, SyntheticScenario};

/// Catalog of n entity concepts c00..c{n-1} with no constraints beyond the
/// depth bound.
pub fn synthetic_catalog(n: usize, max_depth: usize) -> Catalog {
    let mut text = format!("domain = \"synthetic\"\nmax_depth_default = {max_depth}\n");
    for i in 0..n {
        text.push_str(&format!(
            "[[concepts]]\n\
             id = \"c{i:02}\"\n\
             kind = \"entity\"\n\
             category = \"g\"\n\
             description = \"Concept {i}.\"\n\
             fragment = [{{ op = \"add_node\", class = \"c{i:02}\" }}]\n"
        ));
    }
    Catalog::load(&text).unwrap()
}

/// The guided-vs-random benchmark scenario: 15 concepts, five planted pair
/// modes through a shared hub atom (c00 with each of c01..c05, weight
/// 0.95), atom weights 0.1, base 0.05. Spoke atoms interfere with each
/// other (-0.15), so only sets containing a planted pair reach the 0.6
/// threshold; everything else stays far below it at depth 4.
pub fn planted_pairs_scenario() -> SyntheticScenario {
    let mut scenario = SyntheticScenario::with_base(0.05);
    for i in 0..6 {
        scenario = scenario.with_atom(&format!("c{i:02}"), 0.1);
    }
    for spoke in 1..6 {
        scenario = scenario.with_pair("c00", &format!("c{spoke:02}"), 0.95);
    }
    for i in 1..6usize {
        for j in (i + 1)..6usize {
            scenario = scenario.with_pair(&format!("c{i:02}"), &format!("c{j:02}"), -0.15);
        }
    }
    scenario
}

pub fn rec(ids: &[&str], failures: u64, m: u64) -> EvalRecord {
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
