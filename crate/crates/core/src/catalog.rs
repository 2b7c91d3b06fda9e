//! Concept vocabulary: catalog loading, validity grammar, and expansion
//! enumeration.
//!
//! A catalog declares the atomic concepts of a domain. Entity concepts add
//! nodes (and edges) to a scene graph; modifier concepts rewrite attributes
//! on a node contributed by some entity already in the composition. Validity
//! is decided by static rules only: exclusion groups, modifier bindability,
//! entity preconditions, and a depth bound.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Canonical, duplicate-free set of concept ids. Iteration order is the
/// lexicographic id order used everywhere for deterministic tie-breaking.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConceptSet(BTreeSet<String>);

impl ConceptSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_ids<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ConceptSet(ids.into_iter().map(Into::into).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.0.contains(id)
    }

    pub fn insert(&mut self, id: impl Into<String>) {
        self.0.insert(id.into());
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn with(&self, id: &str) -> Self {
        let mut next = self.clone();
        next.insert(id);
        next
    }

    /// Stable sorted serialization, e.g. `a+b+c`. Used as a map key and as
    /// the tie-break ordering in search.
    pub fn key(&self) -> String {
        self.0.iter().cloned().collect::<Vec<_>>().join("+")
    }

    pub fn intersection_len(&self, other: &Self) -> usize {
        self.0.intersection(&other.0).count()
    }

    pub fn union_len(&self, other: &Self) -> usize {
        self.0.union(&other.0).count()
    }

    /// Jaccard similarity over constituent concepts. Two empty sets are
    /// identical, so their similarity is 1.
    pub fn jaccard(&self, other: &Self) -> f64 {
        let union = self.union_len(other);
        if union == 0 {
            return 1.0;
        }
        self.intersection_len(other) as f64 / union as f64
    }
}

impl fmt::Display for ConceptSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.key())
    }
}

impl<S: Into<String>> FromIterator<S> for ConceptSet {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        ConceptSet(iter.into_iter().map(Into::into).collect())
    }
}

/// Attribute value on a node or edge. Ranges stay symbolic (low, high);
/// sampling a concrete value is the evaluator's concern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Range { low: f64, high: f64 },
    Bool(bool),
    Num(f64),
    Str(String),
}

impl AttrValue {
    pub fn as_str(&self) -> Option<&str> {
        match self {
            AttrValue::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_range(&self) -> Option<(f64, f64)> {
        match self {
            AttrValue::Range { low, high } => Some((*low, *high)),
            _ => None,
        }
    }
}

/// Reference to a node from within a fragment: the scene root, the node a
/// modifier is bound to, or the k-th node added by the same fragment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRef {
    Root,
    Bound,
    New(usize),
}

impl fmt::Display for NodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeRef::Root => write!(f, "root"),
            NodeRef::Bound => write!(f, "bound"),
            NodeRef::New(k) => write!(f, "new{k}"),
        }
    }
}

impl std::str::FromStr for NodeRef {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "root" => Ok(NodeRef::Root),
            "bound" => Ok(NodeRef::Bound),
            _ => s
                .strip_prefix("new")
                .and_then(|k| k.parse::<usize>().ok())
                .map(NodeRef::New)
                .ok_or_else(|| format!("invalid node reference `{s}`")),
        }
    }
}

impl Serialize for NodeRef {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for NodeRef {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(D::Error::custom)
    }
}

fn bound_ref() -> NodeRef {
    NodeRef::Bound
}

/// One graph operation emitted by a concept fragment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum GraphOp {
    AddNode {
        class: String,
        #[serde(default)]
        tags: BTreeSet<String>,
        #[serde(default)]
        attrs: BTreeMap<String, AttrValue>,
    },
    AddEdge {
        from: NodeRef,
        to: NodeRef,
        relation: String,
    },
    SetAttr {
        #[serde(default = "bound_ref")]
        target: NodeRef,
        key: String,
        value: AttrValue,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConceptKind {
    Entity,
    Modifier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeParam {
    pub low: f64,
    pub high: f64,
}

/// One catalog entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptDef {
    pub id: String,
    pub kind: ConceptKind,
    pub category: String,
    pub description: String,
    #[serde(default)]
    pub fragment: Vec<GraphOp>,
    /// Tags that must be provided by other members of the composition. For
    /// a modifier, one node must carry all of them (the binding target).
    #[serde(default)]
    pub requires: BTreeSet<String>,
    /// Filled from the catalog's `exclusion_groups` table at load time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excludes_group: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, RangeParam>,
}

impl ConceptDef {
    pub fn is_entity(&self) -> bool {
        self.kind == ConceptKind::Entity
    }

    /// Tags provided by the nodes this concept adds (class included).
    pub fn provided_tags(&self) -> BTreeSet<String> {
        let mut tags = BTreeSet::new();
        for op in &self.fragment {
            if let GraphOp::AddNode {
                class, tags: t, ..
            } = op
            {
                tags.insert(class.clone());
                tags.extend(t.iter().cloned());
            }
        }
        tags
    }

    /// True if this concept adds at least one node whose tags cover `needs`.
    pub fn provides_binding_for(&self, needs: &BTreeSet<String>) -> bool {
        self.fragment.iter().any(|op| match op {
            GraphOp::AddNode { class, tags, .. } => needs
                .iter()
                .all(|need| need == class || tags.contains(need)),
            _ => false,
        })
    }
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("catalog parse error: {0}")]
    Parse(String),
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("empty catalog")]
    Empty,
    #[error("duplicate concept id `{0}`")]
    DuplicateId(String),
    #[error("exclusion group `{group}` references unknown concept `{id}`")]
    UnknownGroupMember { group: String, id: String },
    #[error("concept `{id}` appears in exclusion groups `{first}` and `{second}`")]
    MultipleGroups {
        id: String,
        first: String,
        second: String,
    },
    #[error("concept `{id}` requires tag `{tag}` that no entity in the catalog provides")]
    DanglingRequires { id: String, tag: String },
    #[error("modifier `{0}` must not add nodes")]
    ModifierAddsNode(String),
    #[error("entity `{0}` must add at least one node")]
    EntityWithoutNode(String),
    #[error("max_depth_default must be at least 1")]
    BadMaxDepth,
    #[error("unknown concept id `{0}`")]
    UnknownConcept(String),
}

/// Reason a concept set fails validity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    EmptySet,
    ModifierOnlySet,
    ExclusionConflict { group: String, members: Vec<String> },
    UnboundModifier { modifier: String },
    MissingRequirement { concept: String, tag: String },
    DepthExceeded { max: usize, actual: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptySet => write!(f, "empty set"),
            Violation::ModifierOnlySet => write!(f, "modifier-only set"),
            Violation::ExclusionConflict { group, members } => {
                write!(f, "exclusion group {group}: {}", members.join(", "))
            }
            Violation::UnboundModifier { modifier } => {
                write!(f, "modifier {modifier} has no binding target")
            }
            Violation::MissingRequirement { concept, tag } => {
                write!(f, "{concept} requires tag {tag} not provided by the set")
            }
            Violation::DepthExceeded { max, actual } => {
                write!(f, "depth {actual} exceeds max {max}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValidityVerdict {
    Valid,
    Invalid(Vec<Violation>),
}

impl ValidityVerdict {
    pub fn is_valid(&self) -> bool {
        matches!(self, ValidityVerdict::Valid)
    }

    pub fn violations(&self) -> &[Violation] {
        match self {
            ValidityVerdict::Valid => &[],
            ValidityVerdict::Invalid(v) => v,
        }
    }
}

#[derive(Debug, Deserialize)]
struct CatalogFile {
    domain: String,
    max_depth_default: usize,
    #[serde(default)]
    exclusion_groups: BTreeMap<String, Vec<String>>,
    concepts: Vec<ConceptDef>,
}

/// Immutable concept vocabulary for one domain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Catalog {
    pub domain: String,
    pub concepts: BTreeMap<String, ConceptDef>,
    pub exclusion_groups: BTreeMap<String, Vec<String>>,
    pub max_depth: usize,
}

impl Catalog {
    /// Parse and validate a catalog from TOML text.
    pub fn load(source: &str) -> Result<Self, CatalogError> {
        let file: CatalogFile =
            toml::from_str(source).map_err(|e| CatalogError::Parse(e.to_string()))?;
        if file.concepts.is_empty() {
            return Err(CatalogError::Empty);
        }
        if file.max_depth_default == 0 {
            return Err(CatalogError::BadMaxDepth);
        }

        let mut concepts = BTreeMap::new();
        for def in file.concepts {
            match def.kind {
                ConceptKind::Modifier => {
                    if def
                        .fragment
                        .iter()
                        .any(|op| matches!(op, GraphOp::AddNode { .. }))
                    {
                        return Err(CatalogError::ModifierAddsNode(def.id));
                    }
                }
                ConceptKind::Entity => {
                    if !def
                        .fragment
                        .iter()
                        .any(|op| matches!(op, GraphOp::AddNode { .. }))
                    {
                        return Err(CatalogError::EntityWithoutNode(def.id));
                    }
                }
            }
            if concepts.contains_key(&def.id) {
                return Err(CatalogError::DuplicateId(def.id));
            }
            concepts.insert(def.id.clone(), def);
        }

        for (group, members) in &file.exclusion_groups {
            for id in members {
                let def = concepts
                    .get_mut(id)
                    .ok_or_else(|| CatalogError::UnknownGroupMember {
                        group: group.clone(),
                        id: id.clone(),
                    })?;
                if let Some(prev) = &def.excludes_group {
                    return Err(CatalogError::MultipleGroups {
                        id: id.clone(),
                        first: prev.clone(),
                        second: group.clone(),
                    });
                }
                def.excludes_group = Some(group.clone());
            }
        }

        let producible: BTreeSet<String> = concepts
            .values()
            .filter(|d| d.is_entity())
            .flat_map(|d| d.provided_tags())
            .collect();
        for def in concepts.values() {
            for tag in &def.requires {
                // The root node's own tags (ego / kitchen scene) count as
                // always present.
                if tag == "scene" || tag == "ego" {
                    continue;
                }
                if !producible.contains(tag) {
                    return Err(CatalogError::DanglingRequires {
                        id: def.id.clone(),
                        tag: tag.clone(),
                    });
                }
            }
        }

        Ok(Catalog {
            domain: file.domain,
            concepts,
            exclusion_groups: file.exclusion_groups,
            max_depth: file.max_depth_default,
        })
    }

    pub fn load_file(path: &Path) -> Result<Self, CatalogError> {
        let text = std::fs::read_to_string(path).map_err(|source| CatalogError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::load(&text)
    }

    /// The bundled driving catalog.
    pub fn builtin_driving() -> Self {
        Self::load(include_str!("../data/driving.toml")).expect("bundled driving catalog is valid")
    }

    /// The bundled indoor catalog.
    pub fn builtin_indoor() -> Self {
        Self::load(include_str!("../data/indoor.toml")).expect("bundled indoor catalog is valid")
    }

    pub fn get(&self, id: &str) -> Result<&ConceptDef, CatalogError> {
        self.concepts
            .get(id)
            .ok_or_else(|| CatalogError::UnknownConcept(id.to_string()))
    }

    /// Concept ids in canonical (lexicographic) order.
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.concepts.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn categories(&self) -> BTreeSet<&str> {
        self.concepts
            .values()
            .map(|d| d.category.as_str())
            .collect()
    }

    /// Same catalog with a different depth bound in effect.
    pub fn with_max_depth(&self, max_depth: usize) -> Self {
        let mut cat = self.clone();
        cat.max_depth = max_depth.max(1);
        cat
    }

    /// Static validity of a concept set: nonempty, not modifier-only, no two
    /// members in one exclusion group, every member's requirements satisfied
    /// by the rest of the set, and within the depth bound.
    pub fn check_validity(&self, set: &ConceptSet) -> Result<ValidityVerdict, CatalogError> {
        let mut defs = Vec::with_capacity(set.len());
        for id in set.iter() {
            defs.push(self.get(id)?);
        }

        let mut violations = Vec::new();
        if defs.is_empty() {
            violations.push(Violation::EmptySet);
            return Ok(ValidityVerdict::Invalid(violations));
        }
        if defs.iter().all(|d| !d.is_entity()) {
            violations.push(Violation::ModifierOnlySet);
        }
        if set.len() > self.max_depth {
            violations.push(Violation::DepthExceeded {
                max: self.max_depth,
                actual: set.len(),
            });
        }

        let mut by_group: BTreeMap<&str, Vec<String>> = BTreeMap::new();
        for def in &defs {
            if let Some(group) = &def.excludes_group {
                by_group
                    .entry(group.as_str())
                    .or_default()
                    .push(def.id.clone());
            }
        }
        for (group, members) in by_group {
            if members.len() > 1 {
                violations.push(Violation::ExclusionConflict {
                    group: group.to_string(),
                    members,
                });
            }
        }

        for def in &defs {
            if def.requires.is_empty() {
                continue;
            }
            match def.kind {
                // A modifier needs one node carrying all of its tags; nodes
                // come from the other entities in the set.
                ConceptKind::Modifier => {
                    let bindable = defs
                        .iter()
                        .filter(|d| d.is_entity())
                        .any(|d| d.provides_binding_for(&def.requires));
                    if !bindable {
                        violations.push(Violation::UnboundModifier {
                            modifier: def.id.clone(),
                        });
                    }
                }
                // An entity precondition is satisfied tag-by-tag by the rest
                // of the set.
                ConceptKind::Entity => {
                    for tag in &def.requires {
                        if tag == "scene" || tag == "ego" {
                            continue;
                        }
                        let provided = defs
                            .iter()
                            .filter(|d| d.is_entity() && d.id != def.id)
                            .any(|d| d.provided_tags().contains(tag));
                        if !provided {
                            violations.push(Violation::MissingRequirement {
                                concept: def.id.clone(),
                                tag: tag.clone(),
                            });
                        }
                    }
                }
            }
        }

        if violations.is_empty() {
            Ok(ValidityVerdict::Valid)
        } else {
            Ok(ValidityVerdict::Invalid(violations))
        }
    }

    pub fn is_valid(&self, set: &ConceptSet) -> Result<bool, CatalogError> {
        Ok(self.check_validity(set)?.is_valid())
    }

    /// Every single-concept extension of `set` that passes validity, in
    /// canonical id order.
    pub fn enumerate_expansions(&self, set: &ConceptSet) -> Result<Vec<ConceptSet>, CatalogError> {
        let mut out = Vec::new();
        for id in self.ids() {
            if set.contains(id) {
                continue;
            }
            let candidate = set.with(id);
            if self.check_validity(&candidate)?.is_valid() {
                out.push(candidate);
            }
        }
        Ok(out)
    }
}
