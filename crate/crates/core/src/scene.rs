//! Anchor scene graphs: the minimal symbolic structure a concept set
//! mandates, built by a canonical deterministic replay.
//!
//! Replay order is: entities sorted so that providers of required tags come
//! before their dependents (stable by id within a rank), then modifiers in id
//! order. Each modifier binds to the most recently added node carrying all of
//! its required tags. The same set therefore always produces the same graph,
//! regardless of the order concepts were discovered in.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{
    AttrValue, Catalog, CatalogError, ConceptDef, ConceptSet, GraphOp, NodeRef, Violation,
};

pub type NodeId = String;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub class: String,
    pub tags: BTreeSet<String>,
    pub attrs: BTreeMap<String, AttrValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: NodeId,
    pub dst: NodeId,
    pub relation: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attrs: BTreeMap<String, AttrValue>,
}

/// Symbolic scene: nodes, directed labeled edges, and the concept each
/// element came from. Serialized into result logs for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub nodes: BTreeMap<NodeId, Node>,
    pub edges: Vec<Edge>,
    pub provenance: BTreeMap<String, String>,
    root: NodeId,
    next_node: usize,
}

impl SceneGraph {
    /// Empty scene for a domain: driving scenes start from the ego vehicle,
    /// indoor scenes from the kitchen, anything else from a bare scene node.
    pub fn new_root(domain: &str) -> Self {
        let (id, class, tags): (&str, &str, &[&str]) = match domain {
            "driving" => ("ego", "ego", &["ego", "scene"]),
            "indoor" => ("kitchen", "kitchen", &["kitchen", "scene"]),
            _ => ("scene", "scene", &["scene"]),
        };
        let mut nodes = BTreeMap::new();
        nodes.insert(
            id.to_string(),
            Node {
                class: class.to_string(),
                tags: tags.iter().map(|t| t.to_string()).collect(),
                attrs: BTreeMap::new(),
            },
        );
        let mut provenance = BTreeMap::new();
        provenance.insert(id.to_string(), "(root)".to_string());
        SceneGraph {
            nodes,
            edges: Vec::new(),
            provenance,
            root: id.to_string(),
            next_node: 0,
        }
    }

    pub fn root(&self) -> &str {
        &self.root
    }

    /// All tags present in the scene (node classes included). This is the
    /// element set oracle rules match against.
    pub fn tags(&self) -> BTreeSet<String> {
        let mut tags = BTreeSet::new();
        for node in self.nodes.values() {
            tags.insert(node.class.clone());
            tags.extend(node.tags.iter().cloned());
        }
        tags
    }

    /// Nodes in insertion order (the root is not included).
    pub fn nodes_in_order(&self) -> Vec<(&NodeId, &Node)> {
        let mut out: Vec<(&NodeId, &Node)> = self
            .nodes
            .iter()
            .filter(|(id, _)| *id != &self.root)
            .collect();
        out.sort_by_key(|(id, _)| node_index(id));
        out
    }

    fn fresh_node_id(&mut self) -> NodeId {
        let id = format!("n{}", self.next_node);
        self.next_node += 1;
        id
    }
}

fn node_index(id: &str) -> usize {
    id.strip_prefix('n')
        .and_then(|s| s.parse().ok())
        .unwrap_or(usize::MAX)
}

/// Ordered derivation: the concept replay that produced a graph, with the
/// node each modifier was bound to.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Composition {
    pub steps: Vec<Step>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub concept: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binding: Option<NodeId>,
}

impl Composition {
    /// Unordered, duplicate-free set of the concepts applied.
    pub fn canonical_set(&self) -> ConceptSet {
        self.steps.iter().map(|s| s.concept.clone()).collect()
    }
}

#[derive(Debug, Error)]
pub enum SceneError {
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("set is invalid: {0}")]
    InvalidSet(String),
    #[error("modifier `{modifier}` has no compatible node to bind to")]
    UnboundModifier { modifier: String },
    #[error("modifier `{modifier}` applied without a binding")]
    MissingBinding { modifier: String },
    #[error("binding target `{node}` does not exist")]
    BindingNotFound { node: String },
    #[error("entity `{concept}` requires tag `{tag}` absent from the graph")]
    MissingRequirement { concept: String, tag: String },
    #[error("fragment of `{concept}` writes attribute `{key}` on `{node}` twice")]
    AttrConflict {
        concept: String,
        node: String,
        key: String,
    },
    #[error("fragment of `{concept}` references the binding but `{concept}` is an entity")]
    BoundRefInEntity { concept: String },
    #[error("could not order entities of the set; `{concept}`'s requirements never became available")]
    UnsatisfiedRequirement { concept: String },
}

pub fn invalid_set_error(violations: &[Violation]) -> SceneError {
    let text = violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ");
    SceneError::InvalidSet(text)
}

/// Apply one concept fragment to a graph, returning the extended graph.
///
/// Entities add their nodes and edges with default attributes; modifiers
/// overwrite attributes on the bound node. Writing the same attribute twice
/// within one fragment application is an error.
pub fn apply_concept(
    graph: &SceneGraph,
    def: &ConceptDef,
    binding: Option<&NodeId>,
) -> Result<SceneGraph, SceneError> {
    let mut next = graph.clone();
    let mut new_nodes: Vec<NodeId> = Vec::new();
    let mut written: BTreeSet<(NodeId, String)> = BTreeSet::new();

    if def.is_entity() {
        let present = graph.tags();
        for tag in &def.requires {
            if !present.contains(tag) {
                return Err(SceneError::MissingRequirement {
                    concept: def.id.clone(),
                    tag: tag.clone(),
                });
            }
        }
    } else if binding.is_none() {
        return Err(SceneError::MissingBinding {
            modifier: def.id.clone(),
        });
    }

    let root_id = next.root.clone();
    let resolve = |reference: NodeRef, new_nodes: &[NodeId]| -> Result<NodeId, SceneError> {
        match reference {
            NodeRef::Root => Ok(root_id.clone()),
            NodeRef::Bound => match binding {
                Some(id) => Ok(id.clone()),
                None => Err(SceneError::BoundRefInEntity {
                    concept: def.id.clone(),
                }),
            },
            NodeRef::New(k) => {
                new_nodes
                    .get(k)
                    .cloned()
                    .ok_or_else(|| SceneError::BindingNotFound {
                        node: format!("new{k}"),
                    })
            }
        }
    };

    for op in &def.fragment {
        match op {
            GraphOp::AddNode { class, tags, attrs } => {
                let id = next.fresh_node_id();
                for key in attrs.keys() {
                    written.insert((id.clone(), key.clone()));
                }
                next.nodes.insert(
                    id.clone(),
                    Node {
                        class: class.clone(),
                        tags: tags.clone(),
                        attrs: attrs.clone(),
                    },
                );
                next.provenance.insert(id.clone(), def.id.clone());
                new_nodes.push(id);
            }
            GraphOp::AddEdge { from, to, relation } => {
                let src = resolve(*from, &new_nodes)?;
                let dst = resolve(*to, &new_nodes)?;
                let key = format!("e{}:{src}->{dst}:{relation}", next.edges.len());
                next.edges.push(Edge {
                    src,
                    dst,
                    relation: relation.clone(),
                    attrs: BTreeMap::new(),
                });
                next.provenance.insert(key, def.id.clone());
            }
            GraphOp::SetAttr { target, key, value } => {
                let id = resolve(*target, &new_nodes)?;
                if !written.insert((id.clone(), key.clone())) {
                    return Err(SceneError::AttrConflict {
                        concept: def.id.clone(),
                        node: id,
                        key: key.clone(),
                    });
                }
                let node = next
                    .nodes
                    .get_mut(&id)
                    .ok_or_else(|| SceneError::BindingNotFound { node: id.clone() })?;
                node.attrs.insert(key.clone(), value.clone());
            }
        }
    }

    Ok(next)
}

/// The node a modifier binds to: the most recently added node whose tags
/// (class included) cover the modifier's requirements. Falls back to the
/// scene root when the root qualifies and no added node does.
pub fn bind_modifier(
    graph: &SceneGraph,
    def: &ConceptDef,
    _steps_so_far: &Composition,
) -> Result<NodeId, SceneError> {
    let qualifies = |node: &Node| {
        def.requires
            .iter()
            .all(|tag| tag == &node.class || node.tags.contains(tag))
    };
    for (id, node) in graph.nodes_in_order().into_iter().rev() {
        if qualifies(node) {
            return Ok(id.clone());
        }
    }
    let root = graph.nodes.get(graph.root()).expect("root node exists");
    if qualifies(root) {
        return Ok(graph.root().to_string());
    }
    Err(SceneError::UnboundModifier {
        modifier: def.id.clone(),
    })
}

/// Entities of the set in replay order: providers before dependents, id
/// order within a rank. Stalls (circular requirements) are an error.
fn entity_order<'a>(
    catalog: &'a Catalog,
    set: &ConceptSet,
) -> Result<Vec<&'a ConceptDef>, SceneError> {
    let mut pending: Vec<&ConceptDef> = Vec::new();
    for id in set.iter() {
        let def = catalog.get(id)?;
        if def.is_entity() {
            pending.push(def);
        }
    }

    let mut available: BTreeSet<String> = SceneGraph::new_root(&catalog.domain).tags();
    let mut ordered = Vec::with_capacity(pending.len());
    while !pending.is_empty() {
        let pos = pending
            .iter()
            .position(|def| def.requires.iter().all(|t| available.contains(t)));
        match pos {
            Some(i) => {
                let def = pending.remove(i);
                available.extend(def.provided_tags());
                ordered.push(def);
            }
            None => {
                return Err(SceneError::UnsatisfiedRequirement {
                    concept: pending[0].id.clone(),
                })
            }
        }
    }
    Ok(ordered)
}

/// Build the anchor graph for a valid set. Deterministic: any permutation of
/// the same set yields a bit-identical (composition, graph) pair.
pub fn build_anchor(
    catalog: &Catalog,
    set: &ConceptSet,
) -> Result<(Composition, SceneGraph), SceneError> {
    let verdict = catalog.check_validity(set)?;
    if !verdict.is_valid() {
        return Err(invalid_set_error(verdict.violations()));
    }
    build_anchor_unchecked(catalog, set)
}

/// Replay without the validity pre-check, for callers that already hold a
/// search-validated set. Binding failures still error. The depth bound in
/// particular is a search concern, not a replay concern.
pub(crate) fn build_anchor_unchecked(
    catalog: &Catalog,
    set: &ConceptSet,
) -> Result<(Composition, SceneGraph), SceneError> {
    let mut graph = SceneGraph::new_root(&catalog.domain);
    let mut comp = Composition::default();

    for def in entity_order(catalog, set)? {
        graph = apply_concept(&graph, def, None)?;
        comp.steps.push(Step {
            concept: def.id.clone(),
            binding: None,
        });
    }

    for id in set.iter() {
        let def = catalog.get(id)?;
        if def.is_entity() {
            continue;
        }
        let target = bind_modifier(&graph, def, &comp)?;
        graph = apply_concept(&graph, def, Some(&target))?;
        comp.steps.push(Step {
            concept: def.id.clone(),
            binding: Some(target),
        });
    }

    Ok((comp, graph))
}

/// Plain-text description of a set, assembled from the concept descriptions
/// in replay order. This is what image-prompt or remote evaluators receive.
pub fn describe(catalog: &Catalog, set: &ConceptSet) -> Result<String, SceneError> {
    let mut parts = Vec::new();
    for def in entity_order(catalog, set)? {
        parts.push(def.description.trim().to_string());
    }
    for id in set.iter() {
        let def = catalog.get(id)?;
        if !def.is_entity() {
            parts.push(def.description.trim().to_string());
        }
    }
    Ok(parts.join(" "))
}
