#![allow(dead_code)]

use graphcheck::autodiff::{ParamStore, Tensor};
use graphcheck::encoder::{EncoderConfig, GraphEncoder, LayerKind};
use graphcheck::featurizer::FeatureConfig;
use graphcheck::kg::{build_graph, BuildMode, KnowledgeGraph, Triple};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const NAMES: [&str; 8] = ["ada", "bo", "cy", "dee", "eli", "fay", "gus", "hal"];
pub const RELS: [&str; 4] = ["knows", "likes", "helps", "owns"];

pub fn random_triples(rng: &mut impl Rng) -> Vec<Triple> {
    let n = rng.random_range(1..=6);
    (0..n)
        .map(|_| {
            let s = NAMES[rng.random_range(0..NAMES.len())];
            let r = RELS[rng.random_range(0..RELS.len())];
            let t = NAMES[rng.random_range(0..NAMES.len())];
            Triple::new(s, r, t).unwrap()
        })
        .collect()
}

pub fn random_graph(rng: &mut impl Rng, mode: BuildMode, features: &FeatureConfig) -> KnowledgeGraph {
    build_graph(&random_triples(rng), mode, features.featurizer()).unwrap()
}

/// Relabels nodes by `perm` (old id -> new id) and shuffles the edge list.
pub fn permute(g: &KnowledgeGraph, perm: &[usize], rng: &mut impl Rng) -> KnowledgeGraph {
    let mut nodes = g.nodes.clone();
    for (old, n) in g.nodes.iter().enumerate() {
        nodes[perm[old]] = n.clone();
        nodes[perm[old]].id = perm[old];
    }
    let mut edges = g.edges.clone();
    for e in &mut edges {
        e.source = perm[e.source];
        e.target = perm[e.target];
    }
    edges.shuffle(rng);
    KnowledgeGraph {
        build_mode: g.build_mode,
        dim: g.dim,
        nodes,
        edges,
    }
}

pub fn random_perm(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

pub fn encoder(kind: LayerKind, d_in: usize, seed: u64) -> (GraphEncoder, ParamStore) {
    let cfg = EncoderConfig {
        layer_kind: kind,
        num_layers: 2,
        d_in,
        d_hidden: 16,
        num_heads: 4,
        dropout_p: 0.3,
    };
    let mut store = ParamStore::new();
    let enc = GraphEncoder::new(cfg, &mut store, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    (enc, store)
}

/// Incoming attention mass per (target node, head) for one layer, where rows
/// are the real edges followed by one self-loop per node.
pub fn incoming_sums(g: &KnowledgeGraph, att: &Tensor) -> Vec<Vec<f64>> {
    let n = g.num_nodes();
    let heads = att.cols();
    let mut sums = vec![vec![0.0; heads]; n];
    let targets = g.edges.iter().map(|e| e.target).chain(0..n);
    for (row, t) in targets.enumerate() {
        for (h, s) in sums[t].iter_mut().enumerate() {
            *s += att.data()[row * heads + h];
        }
    }
    sums
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

use graphcheck::data::Sample;
use graphcheck::verifier::{GraphCheck, ModelConfig, Prepared, VerifierConfig, Vocab};

/// Small but trainable configuration for integration tests.
pub fn small_config(kind: LayerKind, mode: BuildMode) -> ModelConfig {
    ModelConfig {
        features: FeatureConfig::new(64, 0).unwrap(),
        build_mode: mode,
        encoder: EncoderConfig {
            layer_kind: kind,
            num_layers: 2,
            d_in: 64,
            d_hidden: 16,
            num_heads: 2,
            dropout_p: 0.1,
        },
        verifier: VerifierConfig {
            d_model: 16,
            n_layers: 2,
            n_heads: 2,
            d_ff: 32,
            max_txt_len: 96,
            k_virtual: 2,
            projector_hidden: 32,
            weight_seed: 3,
            ..VerifierConfig::default()
        },
        use_graph: true,
        init_seed: 3,
    }
}

pub fn vocab_for(samples: &[Sample]) -> Vocab {
    Vocab::build(samples.iter().flat_map(|s| [s.claim.as_str(), s.doc.as_str()]))
}

pub fn prepare(model: &GraphCheck, samples: &[Sample]) -> Vec<Prepared> {
    samples.iter().map(|s| model.prepare(s).unwrap()).collect()
}
