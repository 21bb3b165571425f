use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::report::{evaluate, EvalReport};
use crate::data::Sample;
use crate::encoder::LayerKind;
use crate::error::{Error, Result};
use crate::featurizer::FeatureConfig;
use crate::kg::{build_graph, canonical_entity, BuildMode};
use crate::trainer::{train, TrainConfig};
use crate::verifier::{GraphCheck, ModelConfig, Vocab};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub layer_kinds: Vec<LayerKind>,
    pub build_modes: Vec<BuildMode>,
    /// Fractions of the training split, each in (0, 1].
    pub fractions: Vec<f64>,
    pub graph: Vec<bool>,
}

impl Default for AblationGrid {
    fn default() -> Self {
        AblationGrid {
            layer_kinds: vec![LayerKind::Gat, LayerKind::GraphTransformer],
            build_modes: vec![BuildMode::EdgeAsInput, BuildMode::EdgeAsNode],
            fractions: vec![1.0],
            graph: vec![true],
        }
    }
}

impl AblationGrid {
    pub fn cells(&self) -> Result<Vec<(LayerKind, BuildMode, f64, bool)>> {
        if self.fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(Error::validation("fractions", "each must be in (0, 1]"));
        }
        let mut out = Vec::new();
        for &k in &self.layer_kinds {
            for &m in &self.build_modes {
                for &f in &self.fractions {
                    for &g in &self.graph {
                        out.push((k, m, f, g));
                    }
                }
            }
        }
        if out.is_empty() {
            return Err(Error::validation("grid", "no cells"));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub layer_kind: LayerKind,
    pub build_mode: BuildMode,
    pub fraction: f64,
    pub use_graph: bool,
    pub train_size: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub report: EvalReport,
}

/// Cell configuration: the base with only the grid axes replaced.
pub fn cell_config(base: &ModelConfig, kind: LayerKind, mode: BuildMode, use_graph: bool) -> ModelConfig {
    let mut cfg = base.clone();
    cfg.encoder.layer_kind = kind;
    cfg.build_mode = mode;
    cfg.use_graph = use_graph;
    cfg
}

/// One train + test evaluation per grid cell, all with the same seeds.
pub fn ablate(
    base: &ModelConfig,
    vocab: &Vocab,
    (train_set, val_set, test_set): (&[Sample], &[Sample], &[Sample]),
    tc: &TrainConfig,
    grid: &AblationGrid,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for (kind, mode, fraction, use_graph) in grid.cells()? {
        let mut model = GraphCheck::new(cell_config(base, kind, mode, use_graph), vocab.clone())?;
        let n_train = ((train_set.len() as f64 * fraction).ceil() as usize).clamp(1, train_set.len());
        let prep = |v: &[Sample]| v.iter().map(|s| model.prepare(s)).collect::<Result<Vec<_>>>();
        let (tr, va, te) = (prep(&train_set[..n_train])?, prep(val_set)?, prep(test_set)?);
        log::info!("ablation cell {kind} {mode} fraction {fraction} graph {use_graph}");
        let outcome = train(&mut model, &tr, &va, tc)?;
        let (report, _) = evaluate(&model, "test", &te, 0)?;
        rows.push(AblationRow {
            layer_kind: kind,
            build_mode: mode,
            fraction,
            use_graph,
            train_size: n_train,
            epochs_run: outcome.history.len(),
            best_epoch: outcome.best_epoch,
            report,
        });
    }
    Ok(rows)
}

pub fn render_ablation(rows: &[AblationRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<6} {:<14} {:>8} {:>5} {:>6} {:>6} {:>7} {:>7}",
        "layer", "build", "fraction", "graph", "train", "epochs", "bacc", "acc"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<6} {:<14} {:>8.2} {:>5} {:>6} {:>6} {:>7.4} {:>7.4}",
            r.layer_kind.to_string(),
            r.build_mode.to_string(),
            r.fraction,
            if r.use_graph { "on" } else { "off" },
            r.train_size,
            r.epochs_run,
            r.report.bacc,
            r.report.accuracy
        );
    }
    s
}

/// Checks |V| = |entities| + |triples| and |E| = 2|triples| for the
/// edge-as-node graph of every claim and doc; returns the graphs audited.
pub fn audit_edge_as_node(samples: &[Sample], features: &FeatureConfig) -> Result<usize> {
    let mut audited = 0;
    for (i, s) in samples.iter().enumerate() {
        for triples in [&s.claim_kg, &s.doc_kg] {
            let g = build_graph(triples, BuildMode::EdgeAsNode, features.featurizer())?;
            let entities: HashSet<String> = triples
                .iter()
                .flat_map(|t| [canonical_entity(&t.source), canonical_entity(&t.target)])
                .collect();
            if g.num_nodes() != entities.len() + triples.len() || g.num_edges() != 2 * triples.len() {
                return Err(Error::Contract(format!(
                    "sample {i}: {} nodes / {} edges for {} entities and {} triples",
                    g.num_nodes(),
                    g.num_edges(),
                    entities.len(),
                    triples.len()
                )));
            }
            audited += 1;
        }
    }
    Ok(audited)
}
