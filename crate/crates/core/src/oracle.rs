//! Ground-truth oracles: deterministic expected answers computed from the
//! anchor scene graph, never from rendering.
//!
//! Driving uses a priority-ordered rule table over the graph (highest
//! matching rule wins). Indoor matches the scene's visual elements against a
//! rule library and picks the best-fitting rule, which supplies both the
//! question and the expected option. A generic constant oracle covers custom
//! domains where the question is irrelevant (synthetic targets).

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, ConceptSet};
use crate::scene::{build_anchor, Node, SceneError, SceneGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrivingAction {
    EmergencyStop,
    SlowDown,
    Continue,
}

impl DrivingAction {
    pub fn label(self) -> &'static str {
        match self {
            DrivingAction::EmergencyStop => "A",
            DrivingAction::SlowDown => "B",
            DrivingAction::Continue => "C",
        }
    }
}

impl fmt::Display for DrivingAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DrivingAction::EmergencyStop => write!(f, "emergency_stop"),
            DrivingAction::SlowDown => write!(f, "slow_down"),
            DrivingAction::Continue => write!(f, "continue"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucket {
    Near,
    Far,
}

/// Distance bucket of a node, from the midpoint of its symbolic range.
/// Near spans 2-4 m, far 15-25 m; 10 m splits them.
fn node_bucket(node: &Node) -> Option<Bucket> {
    let midpoint = match node.attrs.get("distance")? {
        crate::catalog::AttrValue::Range { low, high } => (low + high) / 2.0,
        crate::catalog::AttrValue::Num(x) => *x,
        _ => return None,
    };
    Some(if midpoint < 10.0 { Bucket::Near } else { Bucket::Far })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttrEquals {
    pub key: String,
    pub value: String,
}

/// Conjunctive node query: a rule fires when some node satisfies every
/// specified field. An empty predicate matches any graph.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DrivingPredicate {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_lane: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bucket: Option<Bucket>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attr_equals: Option<AttrEquals>,
}

impl DrivingPredicate {
    fn matches_node(&self, node: &Node) -> bool {
        if let Some(tag) = &self.tag {
            if tag != &node.class && !node.tags.contains(tag) {
                return false;
            }
        }
        if let Some(expect_lane) = self.in_lane {
            match node.attrs.get("location").and_then(|v| v.as_str()) {
                Some(loc) => {
                    if (loc == "lane") != expect_lane {
                        return false;
                    }
                }
                None => return false,
            }
        }
        if let Some(bucket) = self.bucket {
            if node_bucket(node) != Some(bucket) {
                return false;
            }
        }
        if let Some(eq) = &self.attr_equals {
            match node.attrs.get(&eq.key).and_then(|v| v.as_str()) {
                Some(v) if v == eq.value => {}
                _ => return false,
            }
        }
        true
    }

    pub fn matches(&self, graph: &SceneGraph) -> bool {
        graph.nodes.values().any(|n| self.matches_node(n))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrivingRule {
    pub id: String,
    pub priority: i64,
    pub action: DrivingAction,
    pub predicate: DrivingPredicate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrivingRuleSet {
    pub prompt: String,
    pub option_a: String,
    pub option_b: String,
    pub option_c: String,
    pub rules: Vec<DrivingRule>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndoorPattern {
    ModusPonens,
    ModusTollens,
    DisjunctiveSyllogism,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndoorRule {
    pub id: String,
    pub pattern: IndoorPattern,
    pub required_elements: BTreeSet<String>,
    pub question: String,
    pub option_a: String,
    pub option_b: String,
    /// "A" or "B".
    pub expected: String,
}

impl IndoorRule {
    /// Element-fit score against a scene's tags. `None` when the rule does
    /// not fire (some required element missing).
    pub fn fit(&self, elements: &BTreeSet<String>) -> Option<usize> {
        if self.required_elements.iter().all(|e| elements.contains(e)) {
            Some(self.required_elements.len())
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndoorRuleSet {
    pub rules: Vec<IndoorRule>,
}

/// Constant-answer oracle for domains without a rule table. The question is
/// a formality; synthetic targets answer by coin flip anyway.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenericRules {
    pub question: String,
    pub option_a: String,
    pub option_b: String,
    pub expected: String,
}

impl Default for GenericRules {
    fn default() -> Self {
        GenericRules {
            question: "Does the scene match its intended specification?".to_string(),
            option_a: "Yes, the scene matches".to_string(),
            option_b: "No, the scene deviates".to_string(),
            expected: "A".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "domain", rename_all = "snake_case")]
pub enum OracleRules {
    Driving(DrivingRuleSet),
    Indoor(IndoorRuleSet),
    Generic(GenericRules),
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("rules parse error: {0}")]
    Parse(String),
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("duplicate rule priority {0}")]
    DuplicatePriority(i64),
    #[error("duplicate rule id `{0}`")]
    DuplicateRuleId(String),
    #[error("rule `{0}` has empty required_elements")]
    EmptyRequiredElements(String),
    #[error("rule `{id}` expected answer `{expected}` is not A or B")]
    BadExpected { id: String, expected: String },
    #[error("graph has no ego node")]
    MissingEgo,
    #[error("unmatchable composition: no indoor rule fires for elements {0:?}")]
    Unmatchable(Vec<String>),
    #[error("rules are for domain `{rules}` but the catalog is `{catalog}`")]
    DomainMismatch { rules: String, catalog: String },
    #[error(transparent)]
    Scene(#[from] SceneError),
}

impl OracleRules {
    pub fn load(source: &str) -> Result<Self, OracleError> {
        let rules: OracleRules =
            toml::from_str(source).map_err(|e| OracleError::Parse(e.to_string()))?;
        rules.validate()?;
        Ok(rules)
    }

    pub fn load_file(path: &Path) -> Result<Self, OracleError> {
        let text = std::fs::read_to_string(path).map_err(|source| OracleError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::load(&text)
    }

    pub fn builtin_driving() -> Self {
        Self::load(include_str!("../data/driving_rules.toml"))
            .expect("bundled driving rules are valid")
    }

    pub fn builtin_indoor() -> Self {
        Self::load(include_str!("../data/indoor_rules.toml"))
            .expect("bundled indoor rules are valid")
    }

    /// The bundled rules for a catalog domain; generic for anything else.
    pub fn builtin_for_domain(domain: &str) -> Self {
        match domain {
            "driving" => Self::builtin_driving(),
            "indoor" => Self::builtin_indoor(),
            _ => OracleRules::Generic(GenericRules::default()),
        }
    }

    pub fn domain(&self) -> &'static str {
        match self {
            OracleRules::Driving(_) => "driving",
            OracleRules::Indoor(_) => "indoor",
            OracleRules::Generic(_) => "generic",
        }
    }

    fn validate(&self) -> Result<(), OracleError> {
        match self {
            OracleRules::Driving(set) => {
                let mut priorities = BTreeSet::new();
                let mut ids = BTreeSet::new();
                for rule in &set.rules {
                    if !priorities.insert(rule.priority) {
                        return Err(OracleError::DuplicatePriority(rule.priority));
                    }
                    if !ids.insert(rule.id.clone()) {
                        return Err(OracleError::DuplicateRuleId(rule.id.clone()));
                    }
                }
            }
            OracleRules::Indoor(set) => {
                let mut ids = BTreeSet::new();
                for rule in &set.rules {
                    if !ids.insert(rule.id.clone()) {
                        return Err(OracleError::DuplicateRuleId(rule.id.clone()));
                    }
                    if rule.required_elements.is_empty() {
                        return Err(OracleError::EmptyRequiredElements(rule.id.clone()));
                    }
                    if rule.expected != "A" && rule.expected != "B" {
                        return Err(OracleError::BadExpected {
                            id: rule.id.clone(),
                            expected: rule.expected.clone(),
                        });
                    }
                }
            }
            OracleRules::Generic(g) => {
                if g.expected != "A" && g.expected != "B" {
                    return Err(OracleError::BadExpected {
                        id: "generic".to_string(),
                        expected: g.expected.clone(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// One answer option offered to the target model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceOption {
    pub label: String,
    pub text: String,
}

/// The exact prompt to pose and the option the oracle expects back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedAnswer {
    pub question_text: String,
    pub options: Vec<ChoiceOption>,
    pub expected: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<DrivingAction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule_id: Option<String>,
}

impl ExpectedAnswer {
    pub fn option_labels(&self) -> Vec<String> {
        self.options.iter().map(|o| o.label.clone()).collect()
    }
}

/// Evaluate the driving rule table: the action of the highest-priority rule
/// whose predicate holds, `Continue` when none fires.
pub fn label_driving(
    graph: &SceneGraph,
    rules: &DrivingRuleSet,
) -> Result<(DrivingAction, Option<String>), OracleError> {
    if !graph.nodes.values().any(|n| n.class == "ego") {
        return Err(OracleError::MissingEgo);
    }
    let mut best: Option<&DrivingRule> = None;
    for rule in &rules.rules {
        if rule.predicate.matches(graph) && best.map_or(true, |b| rule.priority > b.priority) {
            best = Some(rule);
        }
    }
    Ok(match best {
        Some(rule) => (rule.action, Some(rule.id.clone())),
        None => (DrivingAction::Continue, None),
    })
}

/// Pick the indoor rule with the highest element-fit score; ties go to the
/// lexicographically first rule id.
pub fn match_indoor_rule<'a>(
    _set: &ConceptSet,
    graph: &SceneGraph,
    rules: &'a IndoorRuleSet,
) -> Result<&'a IndoorRule, OracleError> {
    let elements = graph.tags();
    let mut best: Option<(&IndoorRule, usize)> = None;
    for rule in &rules.rules {
        if let Some(fit) = rule.fit(&elements) {
            let better = match best {
                None => true,
                Some((b, bf)) => fit > bf || (fit == bf && rule.id < b.id),
            };
            if better {
                best = Some((rule, fit));
            }
        }
    }
    best.map(|(r, _)| r)
        .ok_or_else(|| OracleError::Unmatchable(elements.into_iter().collect()))
}

fn driving_answer(action: DrivingAction, rule_id: Option<String>, set: &DrivingRuleSet) -> ExpectedAnswer {
    ExpectedAnswer {
        question_text: set.prompt.clone(),
        options: vec![
            ChoiceOption {
                label: "A".into(),
                text: set.option_a.clone(),
            },
            ChoiceOption {
                label: "B".into(),
                text: set.option_b.clone(),
            },
            ChoiceOption {
                label: "C".into(),
                text: set.option_c.clone(),
            },
        ],
        expected: action.label().to_string(),
        action: Some(action),
        rule_id,
    }
}

fn indoor_answer(rule: &IndoorRule) -> ExpectedAnswer {
    let question_text = format!(
        "{}\n(A) {}\n(B) {}",
        rule.question, rule.option_a, rule.option_b
    );
    ExpectedAnswer {
        question_text,
        options: vec![
            ChoiceOption {
                label: "A".into(),
                text: rule.option_a.clone(),
            },
            ChoiceOption {
                label: "B".into(),
                text: rule.option_b.clone(),
            },
        ],
        expected: rule.expected.clone(),
        action: None,
        rule_id: Some(rule.id.clone()),
    }
}

fn generic_answer(g: &GenericRules) -> ExpectedAnswer {
    let question_text = format!("{}\n(A) {}\n(B) {}", g.question, g.option_a, g.option_b);
    ExpectedAnswer {
        question_text,
        options: vec![
            ChoiceOption {
                label: "A".into(),
                text: g.option_a.clone(),
            },
            ChoiceOption {
                label: "B".into(),
                text: g.option_b.clone(),
            },
        ],
        expected: g.expected.clone(),
        action: None,
        rule_id: None,
    }
}

/// Expected answer for a valid set: builds the anchor graph and dispatches
/// on the rule domain. Pure and deterministic.
pub fn ground_truth(
    catalog: &Catalog,
    rules: &OracleRules,
    set: &ConceptSet,
) -> Result<ExpectedAnswer, OracleError> {
    let (_, graph) = build_anchor(catalog, set)?;
    ground_truth_for_graph(set, &graph, rules)
}

/// Same as [`ground_truth`] but for an already-built anchor graph.
pub fn ground_truth_for_graph(
    set: &ConceptSet,
    graph: &SceneGraph,
    rules: &OracleRules,
) -> Result<ExpectedAnswer, OracleError> {
    match rules {
        OracleRules::Driving(rule_set) => {
            let (action, rule_id) = label_driving(graph, rule_set)?;
            Ok(driving_answer(action, rule_id, rule_set))
        }
        OracleRules::Indoor(rule_set) => {
            let rule = match_indoor_rule(set, graph, rule_set)?;
            Ok(indoor_answer(rule))
        }
        OracleRules::Generic(g) => Ok(generic_answer(g)),
    }
}
