//! Knowledge-graph data model.
//!
//! Triples are turned into directed graphs in one of two ways: relations as
//! edge features ([`BuildMode::EdgeAsInput`]) or relations as intermediate
//! nodes ([`BuildMode::EdgeAsNode`]). Entities are deduplicated by their
//! canonical form; relation nodes are never merged.

use std::collections::HashMap;
use std::fmt;

use serde::de::{self, Deserializer, SeqAccess, Visitor};
use serde::ser::{SerializeSeq, Serializer};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowercase, trim, and collapse internal whitespace runs to one space.
pub fn canonical_entity(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// One (source, relation, target) assertion.
#[derive(Debug, Clone)]
pub struct Triple {
    pub source: String,
    pub relation: String,
    pub target: String,
}

impl Triple {
    /// Builds a triple, trimming each field and rejecting empty ones.
    pub fn new(source: &str, relation: &str, target: &str) -> Result<Self> {
        let t = Triple {
            source: source.trim().to_string(),
            relation: relation.trim().to_string(),
            target: target.trim().to_string(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("source", &self.source),
            ("relation", &self.relation),
            ("target", &self.target),
        ] {
            if value.trim().is_empty() {
                return Err(Error::validation(name, "triple field is empty"));
            }
        }
        Ok(())
    }

    pub fn canonical(&self) -> (String, String, String) {
        (
            canonical_entity(&self.source),
            canonical_entity(&self.relation),
            canonical_entity(&self.target),
        )
    }
}

impl PartialEq for Triple {
    fn eq(&self, other: &Self) -> bool {
        self.canonical() == other.canonical()
    }
}

impl Eq for Triple {}

impl std::hash::Hash for Triple {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.canonical().hash(state);
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.source, self.relation, self.target)
    }
}

// Triples travel as 3-element string arrays.
impl Serialize for Triple {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(3))?;
        seq.serialize_element(&self.source)?;
        seq.serialize_element(&self.relation)?;
        seq.serialize_element(&self.target)?;
        seq.end()
    }
}

impl<'de> Deserialize<'de> for Triple {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct TripleVisitor;

        impl<'de> Visitor<'de> for TripleVisitor {
            type Value = Triple;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an array of three non-empty strings")
            }

            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> std::result::Result<Triple, A::Error> {
                let mut parts: Vec<String> = Vec::with_capacity(3);
                while let Some(s) = seq.next_element::<String>()? {
                    parts.push(s);
                }
                if parts.len() != 3 {
                    return Err(de::Error::invalid_length(parts.len(), &self));
                }
                Triple::new(&parts[0], &parts[1], &parts[2]).map_err(de::Error::custom)
            }
        }

        deserializer.deserialize_seq(TripleVisitor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BuildMode {
    /// Relations become edge features.
    #[default]
    EdgeAsInput,
    /// Each relation occurrence becomes its own node between two structural edges.
    EdgeAsNode,
}

impl std::str::FromStr for BuildMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('_', "-").to_ascii_lowercase().as_str() {
            "edge-as-input" | "input" => Ok(BuildMode::EdgeAsInput),
            "edge-as-node" | "node" => Ok(BuildMode::EdgeAsNode),
            other => Err(Error::validation("build_mode", format!("unknown mode {other:?}"))),
        }
    }
}

impl fmt::Display for BuildMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BuildMode::EdgeAsInput => f.write_str("edge-as-input"),
            BuildMode::EdgeAsNode => f.write_str("edge-as-node"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Entity,
    Relation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    pub label: String,
    pub kind: NodeKind,
    pub feature: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
    pub relation: String,
    pub feature: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeGraph {
    pub build_mode: BuildMode,
    pub dim: usize,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}

impl KnowledgeGraph {
    pub fn empty(build_mode: BuildMode, dim: usize) -> Self {
        KnowledgeGraph {
            build_mode,
            dim,
            nodes: Vec::new(),
            edges: Vec::new(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn num_entities(&self) -> usize {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Entity).count()
    }

    /// Incoming edges of `node` in edge-list order, as (source node, edge index).
    pub fn neighbors_in(&self, node: usize) -> Result<Vec<(usize, usize)>> {
        if node >= self.nodes.len() {
            return Err(Error::Index {
                index: node,
                len: self.nodes.len(),
            });
        }
        Ok(self
            .edges
            .iter()
            .enumerate()
            .filter(|(_, e)| e.target == node)
            .map(|(i, e)| (e.source, i))
            .collect())
    }

    /// Checks the structural invariants: endpoints in range, uniform feature
    /// dimension, unique canonical entity labels.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id != i {
                return Err(Error::validation("nodes", format!("node {i} has id {}", n.id)));
            }
            if n.feature.len() != self.dim {
                return Err(Error::shape("node feature", &[n.feature.len()], &[self.dim]));
            }
            if n.kind == NodeKind::Entity && seen.insert(canonical_entity(&n.label), i).is_some() {
                return Err(Error::validation("nodes", format!("duplicate entity {:?}", n.label)));
            }
        }
        for e in &self.edges {
            for end in [e.source, e.target] {
                if end >= self.nodes.len() {
                    return Err(Error::Index {
                        index: end,
                        len: self.nodes.len(),
                    });
                }
            }
            if e.feature.len() != self.dim {
                return Err(Error::shape("edge feature", &[e.feature.len()], &[self.dim]));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let g: KnowledgeGraph = serde_json::from_str(text)?;
        g.validate()?;
        Ok(g)
    }
}

/// Builds a directed graph from triples; node order follows first occurrence.
///
/// `featurize` must return vectors of one fixed dimension; the dimension of
/// the first vector it produces is taken as the graph's.
pub fn build_graph<F>(triples: &[Triple], mode: BuildMode, featurize: F) -> Result<KnowledgeGraph>
where
    F: Fn(&str) -> Vec<f64>,
{
    for t in triples {
        t.validate()?;
    }
    let dim = featurize("").len();
    if dim == 0 {
        return Err(Error::validation("featurize", "feature dimension must be at least 1"));
    }
    let mut g = KnowledgeGraph::empty(mode, dim);
    let mut entity_ids: HashMap<String, usize> = HashMap::new();
    let feature = |text: &str| -> Result<Vec<f64>> {
        let v = featurize(text);
        if v.len() != dim {
            return Err(Error::shape("featurize", &[v.len()], &[dim]));
        }
        Ok(v)
    };

    let mut entity = |g: &mut KnowledgeGraph, label: &str| -> Result<usize> {
        let key = canonical_entity(label);
        if let Some(&id) = entity_ids.get(&key) {
            return Ok(id);
        }
        let id = g.nodes.len();
        g.nodes.push(Node {
            id,
            label: label.trim().to_string(),
            kind: NodeKind::Entity,
            feature: feature(label)?,
        });
        entity_ids.insert(key, id);
        Ok(id)
    };

    for t in triples {
        let src = entity(&mut g, &t.source)?;
        let dst = entity(&mut g, &t.target)?;
        match mode {
            BuildMode::EdgeAsInput => g.edges.push(Edge {
                source: src,
                target: dst,
                relation: t.relation.clone(),
                feature: feature(&t.relation)?,
            }),
            BuildMode::EdgeAsNode => {
                let rel = g.nodes.len();
                g.nodes.push(Node {
                    id: rel,
                    label: t.relation.clone(),
                    kind: NodeKind::Relation,
                    feature: feature(&t.relation)?,
                });
                for (s, d) in [(src, rel), (rel, dst)] {
                    g.edges.push(Edge {
                        source: s,
                        target: d,
                        relation: t.relation.clone(),
                        feature: vec![0.0; dim],
                    });
                }
            }
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot(text: &str) -> Vec<f64> {
        let mut v = vec![0.0; 4];
        if !text.is_empty() {
            v[text.len() % 4] = 1.0;
        }
        v
    }

    fn t(s: &str, r: &str, d: &str) -> Triple {
        Triple::new(s, r, d).unwrap()
    }

    #[test]
    fn canonical_forms() {
        assert_eq!(canonical_entity("  Dr.  Erica Pan "), "dr. erica pan");
        assert_eq!(canonical_entity("A"), "a");
        assert_eq!(canonical_entity(""), "");
    }

    #[test]
    fn counts_per_mode() {
        let triples = vec![t("A", "r1", "B"), t("B", "r2", "C")];
        let g = build_graph(&triples, BuildMode::EdgeAsInput, one_hot).unwrap();
        assert_eq!((g.num_nodes(), g.num_edges()), (3, 2));
        let g = build_graph(&triples, BuildMode::EdgeAsNode, one_hot).unwrap();
        assert_eq!((g.num_nodes(), g.num_edges()), (5, 4));
        assert!(g
            .edges
            .iter()
            .all(|e| e.feature.iter().all(|&x| x == 0.0)));
        g.validate().unwrap();
    }

    #[test]
    fn self_loop_and_merge() {
        let g = build_graph(&[t("A", "r", "A")], BuildMode::EdgeAsInput, one_hot).unwrap();
        assert_eq!((g.num_nodes(), g.num_edges()), (1, 1));
        assert_eq!(g.neighbors_in(0).unwrap(), vec![(0, 0)]);

        let g = build_graph(&[t("A", "r", "B"), t("a", " r", "b")], BuildMode::EdgeAsInput, one_hot)
            .unwrap();
        assert_eq!((g.num_nodes(), g.num_edges()), (2, 2));
        assert_eq!(g.nodes[0].label, "A");
    }

    #[test]
    fn empty_field_rejected_with_name() {
        let bad = Triple {
            source: "A".into(),
            relation: "  ".into(),
            target: "B".into(),
        };
        let err = build_graph(&[bad], BuildMode::EdgeAsInput, one_hot).unwrap_err();
        assert!(matches!(err, Error::Validation { ref field, .. } if field == "relation"));
        assert!(Triple::new("", "r", "x").is_err());
    }

    #[test]
    fn empty_triples_give_empty_graph() {
        let g = build_graph(&[], BuildMode::EdgeAsNode, one_hot).unwrap();
        assert!(g.is_empty());
        assert_eq!(g.dim, 4);
    }

    #[test]
    fn neighbors() {
        let g = build_graph(&[t("A", "r", "B")], BuildMode::EdgeAsInput, one_hot).unwrap();
        assert_eq!(g.neighbors_in(1).unwrap(), vec![(0, 0)]);
        assert_eq!(g.neighbors_in(0).unwrap(), vec![]);
        assert!(matches!(g.neighbors_in(7), Err(Error::Index { index: 7, .. })));
    }

    #[test]
    fn triple_json_is_array() {
        let json = serde_json::to_string(&t("A", "is", "B")).unwrap();
        assert_eq!(json, r#"["A","is","B"]"#);
        assert!(serde_json::from_str::<Triple>(r#"["A","is"]"#).is_err());
        assert_eq!(BuildMode::EdgeAsNode.to_string().parse::<BuildMode>().unwrap(), BuildMode::EdgeAsNode);
    }
}
