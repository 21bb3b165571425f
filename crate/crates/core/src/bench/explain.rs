use std::fmt::Write as _;

use serde::Serialize;

use crate::autodiff::Tensor;
use crate::error::Result;
use crate::kg::KnowledgeGraph;
use crate::verifier::{GraphCheck, Prepared};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeScore {
    pub edge: usize,
    pub source: String,
    pub relation: String,
    pub target: String,
    /// Attention averaged over heads and layers.
    pub raw: f64,
    /// `raw` min-max rescaled to [0, 1].
    pub score: f64,
    /// 1 is the strongest edge.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraphExplanation {
    pub graph: String,
    pub edges: Vec<EdgeScore>,
}

impl GraphExplanation {
    pub fn top(&self) -> Option<&EdgeScore> {
        self.edges.iter().find(|e| e.rank == 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Explanation {
    pub label: String,
    pub logits: [f64; 2],
    pub claim: GraphExplanation,
    pub doc: GraphExplanation,
}

/// Mean attention per real edge over all heads and layers. Attention tensors
/// hold the graph's edges first, then one self-loop per node.
pub fn mean_edge_attention(attention: &[Tensor], num_edges: usize) -> Vec<f64> {
    let mut out = vec![0.0; num_edges];
    if attention.is_empty() {
        return out;
    }
    let heads = attention[0].cols();
    for layer in attention {
        for (e, o) in out.iter_mut().enumerate() {
            *o += layer.row_slice(e).iter().sum::<f64>();
        }
    }
    let denom = (attention.len() * heads) as f64;
    out.iter_mut().for_each(|x| *x /= denom);
    out
}

/// Ranks by raw attention (ties broken by edge order) and rescales to [0, 1].
/// Equal raw values all map to 1.
pub fn score_edges(graph: &str, g: &KnowledgeGraph, raw: &[f64]) -> GraphExplanation {
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| raw[b].total_cmp(&raw[a]).then(a.cmp(&b)));
    let mut rank = vec![0; raw.len()];
    for (r, &e) in order.iter().enumerate() {
        rank[e] = r + 1;
    }
    let edges = g
        .edges
        .iter()
        .enumerate()
        .map(|(i, e)| EdgeScore {
            edge: i,
            source: g.nodes[e.source].label.clone(),
            relation: e.relation.clone(),
            target: g.nodes[e.target].label.clone(),
            raw: raw[i],
            score: if hi > lo { (raw[i] - lo) / (hi - lo) } else { 1.0 },
            rank: rank[i],
        })
        .collect();
    GraphExplanation {
        graph: graph.to_string(),
        edges,
    }
}

pub fn explain(model: &GraphCheck, p: &Prepared) -> Result<Explanation> {
    let inspection = model.inspect(p)?;
    let part = |name: &str, g: &KnowledgeGraph, att: &[Tensor]| score_edges(name, g, &mean_edge_attention(att, g.num_edges()));
    Ok(Explanation {
        label: inspection.prediction.label.to_string(),
        logits: inspection.prediction.logits,
        claim: part("claim", &p.claim_graph, &inspection.claim.attention),
        doc: part("doc", &p.doc_graph, &inspection.doc.attention),
    })
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// DOT digraph with one cluster per graph; pen width grows with the score.
pub fn to_dot(x: &Explanation, claim: &KnowledgeGraph, doc: &KnowledgeGraph) -> String {
    let mut s = String::from("digraph explanation {\n  rankdir=LR;\n");
    let _ = writeln!(s, "  label={};", quote(&format!("verdict: {}", x.label)));
    for (prefix, ex, g) in [("c", &x.claim, claim), ("d", &x.doc, doc)] {
        let _ = writeln!(s, "  subgraph cluster_{} {{\n    label={};", ex.graph, quote(&ex.graph));
        for n in &g.nodes {
            let _ = writeln!(s, "    {prefix}{} [label={}];", n.id, quote(&n.label));
        }
        s.push_str("  }\n");
        for (e, sc) in g.edges.iter().zip(&ex.edges) {
            let _ = writeln!(
                s,
                "  {prefix}{} -> {prefix}{} [label={}, penwidth={:.3}];",
                e.source,
                e.target,
                quote(&e.relation),
                0.5 + 4.5 * sc.score
            );
        }
    }
    s.push_str("}\n");
    s
}

#[derive(Serialize)]
struct SidecarRow<'a> {
    graph: &'a str,
    edge: usize,
    source: &'a str,
    relation: &'a str,
    target: &'a str,
    score: f64,
    rank: usize,
}

/// JSON list of `{graph, edge, source, relation, target, score, rank}`.
pub fn sidecar_json(x: &Explanation) -> Result<String> {
    let rows: Vec<SidecarRow> = [&x.claim, &x.doc]
        .into_iter()
        .flat_map(|g| {
            g.edges.iter().map(move |e| SidecarRow {
                graph: &g.graph,
                edge: e.edge,
                source: &e.source,
                relation: &e.relation,
                target: &e.target,
                score: e.score,
                rank: e.rank,
            })
        })
        .collect();
    Ok(serde_json::to_string_pretty(&rows)? + "\n")
}
