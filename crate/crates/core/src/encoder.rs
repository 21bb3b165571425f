//! Message-passing graph encoder with sum readout.
//!
//! Every layer aggregates over incoming edges plus one self-loop per node
//! (self-loops carry the zero edge feature). Attention coefficients of every
//! layer are kept for explanation. Attention rows are laid out as the graph's
//! edges in order followed by the `n` self-loops.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::kg::KnowledgeGraph;

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Gat,
    GraphTransformer,
}

impl std::str::FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gat" => Ok(LayerKind::Gat),
            "gt" | "graph-transformer" | "graph_transformer" => Ok(LayerKind::GraphTransformer),
            other => Err(Error::validation("layer_kind", format!("unknown layer kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for LayerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LayerKind::Gat => "gat",
            LayerKind::GraphTransformer => "gt",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layer_kind: LayerKind,
    pub num_layers: usize,
    pub d_in: usize,
    pub d_hidden: usize,
    pub num_heads: usize,
    pub dropout_p: f64,
}

impl Default for EncoderConfig {
    /// Full-size settings: 2 layers, 1024 in/hidden, 4 heads, dropout 0.3.
    fn default() -> Self {
        EncoderConfig {
            layer_kind: LayerKind::Gat,
            num_layers: 2,
            d_in: 1024,
            d_hidden: 1024,
            num_heads: 4,
            dropout_p: 0.3,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=4).contains(&self.num_layers) {
            return Err(Error::validation("num_layers", "must be 2, 3 or 4"));
        }
        if self.d_in == 0 || self.d_hidden == 0 || self.num_heads == 0 {
            return Err(Error::validation("encoder dims", "must be positive"));
        }
        if self.d_hidden % self.num_heads != 0 {
            return Err(Error::validation("d_hidden", "must be divisible by num_heads"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::validation("dropout_p", "must be in [0, 1)"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_hidden / self.num_heads
    }
}

#[derive(Debug, Clone)]
enum LayerParams {
    Gat {
        w: ParamId,
        w_edge: ParamId,
        att_src: ParamId,
        att_dst: ParamId,
        att_edge: ParamId,
    },
    Gt {
        w_q: ParamId,
        w_k: ParamId,
        w_v: ParamId,
        w_ke: ParamId,
        w_ve: ParamId,
        ln_gain: ParamId,
        ln_bias: ParamId,
        w_out: ParamId,
        w_res: Option<ParamId>,
    },
}

/// Values-only result of encoding one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedGraph {
    /// Node states after each layer, `[n, d_hidden]`.
    pub node_states: Vec<Tensor>,
    /// Attention per layer, `[edges + n, heads]`.
    pub attention: Vec<Tensor>,
    pub graph_embedding: Vec<f64>,
}

/// Tape handles for one encoded graph.
#[derive(Debug, Clone)]
pub struct EncodedVars {
    pub node_states: Vec<Var>,
    pub attention: Vec<Var>,
    pub graph_embedding: Var,
}

/// Graph tensors with self-loops appended.
struct GraphInputs {
    n: usize,
    nodes: Tensor,
    edges: Tensor,
    src: Vec<usize>,
    dst: Vec<usize>,
}

impl GraphInputs {
    fn new(g: &KnowledgeGraph, d_in: usize) -> Result<Self> {
        if g.dim != d_in {
            return Err(Error::shape("graph features", &[g.dim], &[d_in]));
        }
        let n = g.num_nodes();
        let rows: Vec<Vec<f64>> = g.nodes.iter().map(|v| v.feature.clone()).collect();
        let nodes = Tensor::from_rows(&rows)?;
        let mut edge_data = Vec::with_capacity((g.num_edges() + n) * d_in);
        let mut src = Vec::with_capacity(g.num_edges() + n);
        let mut dst = Vec::with_capacity(g.num_edges() + n);
        for e in &g.edges {
            edge_data.extend_from_slice(&e.feature);
            src.push(e.source);
            dst.push(e.target);
        }
        edge_data.extend(std::iter::repeat_n(0.0, n * d_in));
        src.extend(0..n);
        dst.extend(0..n);
        Ok(GraphInputs {
            n,
            nodes,
            edges: Tensor::matrix(src.len(), d_in, edge_data)?,
            src,
            dst,
        })
    }
}

fn xavier(fan_in: usize, fan_out: usize) -> f64 {
    (2.0 / (fan_in + fan_out) as f64).sqrt()
}

#[derive(Debug, Clone)]
pub struct GraphEncoder {
    cfg: EncoderConfig,
    layers: Vec<LayerParams>,
}

impl GraphEncoder {
    /// Registers trainable parameters under `encoder.layer{i}.*`.
    pub fn new<R: Rng>(cfg: EncoderConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let (d, dh, h) = (cfg.d_hidden, cfg.head_dim(), cfg.num_heads);
        let mut layers = Vec::with_capacity(cfg.num_layers);
        for l in 0..cfg.num_layers {
            let d_prev = if l == 0 { cfg.d_in } else { d };
            let p = |s: &str| format!("encoder.layer{l}.{s}");
            let layer = match cfg.layer_kind {
                LayerKind::Gat => LayerParams::Gat {
                    w: store.weight(&p("w"), &[d_prev, d], xavier(d_prev, d), true, rng)?,
                    w_edge: store.weight(&p("w_edge"), &[cfg.d_in, d], xavier(cfg.d_in, d), true, rng)?,
                    att_src: store.weight(&p("att_src"), &[1, h * dh], xavier(dh, 1), true, rng)?,
                    att_dst: store.weight(&p("att_dst"), &[1, h * dh], xavier(dh, 1), true, rng)?,
                    att_edge: store.weight(&p("att_edge"), &[1, h * dh], xavier(dh, 1), true, rng)?,
                },
                LayerKind::GraphTransformer => LayerParams::Gt {
                    w_q: store.weight(&p("w_q"), &[d_prev, d], xavier(d_prev, d), true, rng)?,
                    w_k: store.weight(&p("w_k"), &[d_prev, d], xavier(d_prev, d), true, rng)?,
                    w_v: store.weight(&p("w_v"), &[d_prev, d], xavier(d_prev, d), true, rng)?,
                    w_ke: store.weight(&p("w_ke"), &[cfg.d_in, d], xavier(cfg.d_in, d), true, rng)?,
                    w_ve: store.weight(&p("w_ve"), &[cfg.d_in, d], xavier(cfg.d_in, d), true, rng)?,
                    ln_gain: store.vector(&p("ln_gain"), d, 1.0, true)?,
                    ln_bias: store.vector(&p("ln_bias"), d, 0.0, true)?,
                    w_out: store.weight(&p("w_out"), &[d, d], xavier(d, d), true, rng)?,
                    w_res: if d_prev != d {
                        Some(store.weight(&p("w_res"), &[d_prev, d], xavier(d_prev, d), true, rng)?)
                    } else {
                        None
                    },
                },
            };
            layers.push(layer);
        }
        Ok(GraphEncoder { cfg, layers })
    }

    /// Re-attaches to parameters already present in `store` (e.g. after loading).
    pub fn attach(cfg: EncoderConfig, store: &ParamStore) -> Result<Self> {
        cfg.validate()?;
        let need = |name: String| {
            store
                .id(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
        };
        let mut layers = Vec::with_capacity(cfg.num_layers);
        for l in 0..cfg.num_layers {
            let p = |s: &str| format!("encoder.layer{l}.{s}");
            let d_prev = if l == 0 { cfg.d_in } else { cfg.d_hidden };
            layers.push(match cfg.layer_kind {
                LayerKind::Gat => LayerParams::Gat {
                    w: need(p("w"))?,
                    w_edge: need(p("w_edge"))?,
                    att_src: need(p("att_src"))?,
                    att_dst: need(p("att_dst"))?,
                    att_edge: need(p("att_edge"))?,
                },
                LayerKind::GraphTransformer => LayerParams::Gt {
                    w_q: need(p("w_q"))?,
                    w_k: need(p("w_k"))?,
                    w_v: need(p("w_v"))?,
                    w_ke: need(p("w_ke"))?,
                    w_ve: need(p("w_ve"))?,
                    ln_gain: need(p("ln_gain"))?,
                    ln_bias: need(p("ln_bias"))?,
                    w_out: need(p("w_out"))?,
                    w_res: if d_prev != cfg.d_hidden { Some(need(p("w_res"))?) } else { None },
                },
            });
        }
        Ok(GraphEncoder { cfg, layers })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    /// Encodes `g` on `tape`. Dropout (attention and inter-layer states) is
    /// active only when `train` is set.
    pub fn encode_on<R: Rng>(
        &self,
        tape: &Tape,
        store: &ParamStore,
        g: &KnowledgeGraph,
        train: bool,
        rng: &mut R,
    ) -> Result<EncodedVars> {
        if g.is_empty() {
            return Ok(EncodedVars {
                node_states: Vec::new(),
                attention: Vec::new(),
                graph_embedding: tape.constant(Tensor::zeros(&[1, self.cfg.d_hidden]))?,
            });
        }
        let inputs = GraphInputs::new(g, self.cfg.d_in)?;
        let edges = tape.constant(inputs.edges.clone())?;
        let mut x = tape.constant(inputs.nodes.clone())?;
        let mut node_states = Vec::with_capacity(self.layers.len());
        let mut attention = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let (out, att) = match layer {
                LayerParams::Gat { .. } => self.gat_layer(tape, store, layer, x, edges, &inputs, train, rng)?,
                LayerParams::Gt { .. } => self.gt_layer(tape, store, layer, x, edges, &inputs, train, rng)?,
            };
            node_states.push(out);
            attention.push(att);
            x = if l + 1 < self.layers.len() {
                tape.dropout(out, self.cfg.dropout_p, train, rng)?
            } else {
                out
            };
        }
        let graph_embedding = readout(tape, x)?;
        Ok(EncodedVars {
            node_states,
            attention,
            graph_embedding,
        })
    }

    /// Eval-mode encoding on a private tape.
    pub fn encode(&self, store: &ParamStore, g: &KnowledgeGraph) -> Result<EncodedGraph> {
        let tape = Tape::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let vars = self.encode_on(&tape, store, g, false, &mut rng)?;
        Ok(EncodedGraph {
            node_states: vars.node_states.iter().map(|&v| tape.value(v)).collect(),
            attention: vars.attention.iter().map(|&v| tape.value(v)).collect(),
            graph_embedding: tape.value(vars.graph_embedding).into_data(),
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn gat_layer<R: Rng>(
        &self,
        tape: &Tape,
        store: &ParamStore,
        layer: &LayerParams,
        x: Var,
        edges: Var,
        inp: &GraphInputs,
        train: bool,
        rng: &mut R,
    ) -> Result<(Var, Var)> {
        let LayerParams::Gat {
            w,
            w_edge,
            att_src,
            att_dst,
            att_edge,
        } = layer
        else {
            unreachable!()
        };
        let dh = self.cfg.head_dim();
        let z = tape.matmul(x, tape.param(store, *w)?)?;
        let ze = tape.matmul(edges, tape.param(store, *w_edge)?)?;
        let s_src = tape.group_sum_cols(tape.mul_row(z, tape.param(store, *att_src)?)?, dh)?;
        let s_dst = tape.group_sum_cols(tape.mul_row(z, tape.param(store, *att_dst)?)?, dh)?;
        let s_edge = tape.group_sum_cols(tape.mul_row(ze, tape.param(store, *att_edge)?)?, dh)?;
        let score = tape.add(
            tape.add(tape.gather_rows(s_src, &inp.src)?, tape.gather_rows(s_dst, &inp.dst)?)?,
            s_edge,
        )?;
        let score = tape.leaky_relu(score, LEAKY_SLOPE)?;
        let alpha = tape.segment_softmax(score, &inp.dst, inp.n)?;
        let alpha_d = tape.dropout(alpha, self.cfg.dropout_p, train, rng)?;
        let msg = tape.add(tape.gather_rows(z, &inp.src)?, ze)?;
        let msg = tape.mul(msg, tape.repeat_cols(alpha_d, dh)?)?;
        let agg = tape.scatter_add_rows(msg, &inp.dst, inp.n)?;
        Ok((tape.relu(agg)?, alpha))
    }

    #[allow(clippy::too_many_arguments)]
    fn gt_layer<R: Rng>(
        &self,
        tape: &Tape,
        store: &ParamStore,
        layer: &LayerParams,
        x: Var,
        edges: Var,
        inp: &GraphInputs,
        train: bool,
        rng: &mut R,
    ) -> Result<(Var, Var)> {
        let LayerParams::Gt {
            w_q,
            w_k,
            w_v,
            w_ke,
            w_ve,
            ln_gain,
            ln_bias,
            w_out,
            w_res,
        } = layer
        else {
            unreachable!()
        };
        let dh = self.cfg.head_dim();
        let q = tape.matmul(x, tape.param(store, *w_q)?)?;
        let k_nodes = tape.matmul(x, tape.param(store, *w_k)?)?;
        let v_nodes = tape.matmul(x, tape.param(store, *w_v)?)?;
        let k = tape.add(tape.gather_rows(k_nodes, &inp.src)?, tape.matmul(edges, tape.param(store, *w_ke)?)?)?;
        let v = tape.add(tape.gather_rows(v_nodes, &inp.src)?, tape.matmul(edges, tape.param(store, *w_ve)?)?)?;
        let q_dst = tape.gather_rows(q, &inp.dst)?;
        let score = tape.scale(
            tape.group_sum_cols(tape.mul(q_dst, k)?, dh)?,
            1.0 / (dh as f64).sqrt(),
        )?;
        let alpha = tape.segment_softmax(score, &inp.dst, inp.n)?;
        let alpha_d = tape.dropout(alpha, self.cfg.dropout_p, train, rng)?;
        let agg = tape.scatter_add_rows(tape.mul(v, tape.repeat_cols(alpha_d, dh)?)?, &inp.dst, inp.n)?;
        let normed = tape.layer_norm(agg)?;
        let normed = tape.add_row(
            tape.mul_row(normed, tape.param(store, *ln_gain)?)?,
            tape.param(store, *ln_bias)?,
        )?;
        let projected = tape.matmul(normed, tape.param(store, *w_out)?)?;
        let residual = match w_res {
            Some(w) => tape.matmul(x, tape.param(store, *w)?)?,
            None => x,
        };
        Ok((tape.add(projected, residual)?, alpha))
    }
}

/// Sum over node rows.
pub fn readout(tape: &Tape, states: Var) -> Result<Var> {
    tape.sum_rows(states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurizer::FeatureConfig;
    use crate::kg::{build_graph, BuildMode, Triple};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(kind: LayerKind) -> EncoderConfig {
        EncoderConfig {
            layer_kind: kind,
            num_layers: 2,
            d_in: 16,
            d_hidden: 8,
            num_heads: 2,
            dropout_p: 0.3,
        }
    }

    fn graph(triples: &[(&str, &str, &str)], mode: BuildMode) -> KnowledgeGraph {
        let f = FeatureConfig::new(16, 3).unwrap();
        let ts: Vec<Triple> = triples.iter().map(|(a, b, c)| Triple::new(a, b, c).unwrap()).collect();
        build_graph(&ts, mode, f.featurizer()).unwrap()
    }

    fn setup(kind: LayerKind) -> (GraphEncoder, ParamStore) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let enc = GraphEncoder::new(cfg(kind), &mut store, &mut rng).unwrap();
        (enc, store)
    }

    #[test]
    fn config_validation() {
        let mut c = cfg(LayerKind::Gat);
        c.d_hidden = 9;
        assert!(c.validate().is_err());
        c.d_hidden = 8;
        c.num_layers = 5;
        assert!(c.validate().is_err());
        assert_eq!(EncoderConfig::default().d_hidden, 1024);
        assert_eq!("gt".parse::<LayerKind>().unwrap(), LayerKind::GraphTransformer);
    }

    #[test]
    fn single_node_attends_to_itself() {
        for kind in [LayerKind::Gat, LayerKind::GraphTransformer] {
            let (enc, store) = setup(kind);
            let mut g = graph(&[("a", "r", "b")], BuildMode::EdgeAsInput);
            g.nodes.truncate(1);
            g.edges.clear();
            let out = enc.encode(&store, &g).unwrap();
            for att in &out.attention {
                assert_eq!(att.shape(), &[1, 2]);
                assert!(att.data().iter().all(|&a| (a - 1.0).abs() < 1e-12));
            }
            assert_eq!(out.graph_embedding, out.node_states[1].data().to_vec());
        }
    }

    #[test]
    fn single_node_gat_output_is_relu_of_self_message() {
        let (enc, store) = setup(LayerKind::Gat);
        let mut g = graph(&[("a", "r", "b")], BuildMode::EdgeAsInput);
        g.nodes.truncate(1);
        g.edges.clear();
        let out = enc.encode(&store, &g).unwrap();
        let w = &store.get(store.id("encoder.layer0.w").unwrap()).value;
        let v = &g.nodes[0].feature;
        for c in 0..8 {
            let pre: f64 = (0..16).map(|k| v[k] * w.get(k, c)).sum();
            assert!((out.node_states[0].get(0, c) - pre.max(0.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn mirrored_pair_is_symmetric() {
        let (enc, store) = setup(LayerKind::Gat);
        let mut g = graph(&[("a", "r", "b"), ("b", "r", "a")], BuildMode::EdgeAsInput);
        let f = g.nodes[0].feature.clone();
        g.nodes[1].feature = f;
        let out = enc.encode(&store, &g).unwrap();
        let last = out.node_states.last().unwrap();
        assert_eq!(last.row_slice(0), last.row_slice(1));
    }

    #[test]
    fn identical_keys_give_uniform_attention() {
        let (enc, store) = setup(LayerKind::GraphTransformer);
        // Star b, c, d -> a with equal node features and zero edge features.
        let mut g = graph(&[("b", "r", "a"), ("c", "r", "a"), ("d", "r", "a")], BuildMode::EdgeAsInput);
        let f = g.nodes[0].feature.clone();
        g.nodes.iter_mut().for_each(|n| n.feature = f.clone());
        g.edges.iter_mut().for_each(|e| e.feature = vec![0.0; 16]);
        let out = enc.encode(&store, &g).unwrap();
        let att = &out.attention[0];
        // Node a has id 1; its self-loop row is edges + 1.
        for e in [0, 1, 2, g.num_edges() + 1] {
            for h in 0..2 {
                assert!((att.get(e, h) - 0.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_graph_encodes_to_zero() {
        let (enc, store) = setup(LayerKind::Gat);
        let g = KnowledgeGraph::empty(BuildMode::EdgeAsInput, 16);
        let out = enc.encode(&store, &g).unwrap();
        assert_eq!(out.graph_embedding, vec![0.0; 8]);
    }

    #[test]
    fn readout_sums_rows() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap()).unwrap();
        assert_eq!(tape.value(readout(&tape, x).unwrap()).data(), &[4.0, 6.0]);
        let one = tape.constant(Tensor::row(vec![5.0, 6.0]).unwrap()).unwrap();
        assert_eq!(tape.value(readout(&tape, one).unwrap()).data(), &[5.0, 6.0]);
    }

    #[test]
    fn deterministic_with_dropout_seed() {
        let (enc, store) = setup(LayerKind::GraphTransformer);
        let g = graph(&[("a", "r", "b"), ("b", "s", "c")], BuildMode::EdgeAsInput);
        let run = |seed| {
            let tape = Tape::new();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = enc.encode_on(&tape, &store, &g, true, &mut rng).unwrap();
            tape.value(v.graph_embedding)
        };
        assert_eq!(run(1), run(1));
        assert_eq!(enc.encode(&store, &g).unwrap(), enc.encode(&store, &g).unwrap());
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        let (enc, store) = setup(LayerKind::Gat);
        let g = KnowledgeGraph {
            dim: 4,
            ..graph(&[("a", "r", "b")], BuildMode::EdgeAsInput)
        };
        assert!(matches!(enc.encode(&store, &g), Err(Error::Shape { .. })));
    }
}
