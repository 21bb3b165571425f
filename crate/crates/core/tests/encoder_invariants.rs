mod common;

use common::*;
use graphcheck::encoder::LayerKind;
use graphcheck::featurizer::FeatureConfig;
use graphcheck::kg::{build_graph, BuildMode, Triple};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const KINDS: [LayerKind; 2] = [LayerKind::Gat, LayerKind::GraphTransformer];
const MODES: [BuildMode; 2] = [BuildMode::EdgeAsInput, BuildMode::EdgeAsNode];

#[test]
fn node_states_follow_the_permutation() {
    let features = FeatureConfig::new(12, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for kind in KINDS {
        let (enc, store) = encoder(kind, 12, 1);
        for _ in 0..10 {
            let g = random_graph(&mut rng, BuildMode::EdgeAsInput, &features);
            let perm = random_perm(g.num_nodes(), &mut rng);
            let a = enc.encode(&store, &g).unwrap();
            let b = enc.encode(&store, &permute(&g, &perm, &mut rng)).unwrap();
            let (last_a, last_b) = (a.node_states.last().unwrap(), b.node_states.last().unwrap());
            for (old, &new) in perm.iter().enumerate() {
                assert!(max_abs_diff(last_a.row_slice(old), last_b.row_slice(new)) < 1e-9);
            }
        }
    }
}

#[test]
fn one_layer_only_sees_in_neighbours() {
    // a -> b, c isolated: after one layer b depends on a, c is untouched by both.
    let features = FeatureConfig::new(12, 3).unwrap();
    let triples = [Triple::new("a", "r", "b").unwrap(), Triple::new("c", "r", "c").unwrap()];
    let g = build_graph(&triples, BuildMode::EdgeAsInput, features.featurizer()).unwrap();
    let idx = |l: &str| g.nodes.iter().position(|n| n.label == l).unwrap();
    for kind in KINDS {
        let (enc, store) = encoder(kind, 12, 2);
        let base = enc.encode(&store, &g).unwrap();
        let mut h = g.clone();
        h.nodes[idx("a")].feature = vec![0.5; 12];
        let moved = enc.encode(&store, &h).unwrap();
        let first = |e: &graphcheck::encoder::EncodedGraph, l: &str| e.node_states[0].row_slice(idx(l)).to_vec();
        assert!(max_abs_diff(&first(&base, "b"), &first(&moved, "b")) > 1e-6, "{kind}");
        assert_eq!(first(&base, "c"), first(&moved, "c"));
        // a has no in-edges apart from its self-loop.
        let mut k = g.clone();
        k.nodes[idx("b")].feature = vec![0.5; 12];
        let other = enc.encode(&store, &k).unwrap();
        assert_eq!(first(&base, "a"), first(&other, "a"));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn embedding_permutation_invariant(seed in any::<u64>(), kind_i in 0usize..2, mode_i in 0usize..2) {
        let features = FeatureConfig::new(12, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (enc, store) = encoder(KINDS[kind_i], 12, seed ^ 1);
        let g = random_graph(&mut rng, MODES[mode_i], &features);
        let perm = random_perm(g.num_nodes(), &mut rng);
        let a = enc.encode(&store, &g).unwrap().graph_embedding;
        let b = enc.encode(&store, &permute(&g, &perm, &mut rng)).unwrap().graph_embedding;
        prop_assert!(max_abs_diff(&a, &b) < 1e-9);
    }

    #[test]
    fn attention_is_normalised(seed in any::<u64>(), kind_i in 0usize..2, mode_i in 0usize..2) {
        let features = FeatureConfig::new(12, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (enc, store) = encoder(KINDS[kind_i], 12, seed ^ 2);
        let g = random_graph(&mut rng, MODES[mode_i], &features);
        let e = enc.encode(&store, &g).unwrap();
        prop_assert_eq!(e.attention.len(), 2);
        for att in &e.attention {
            prop_assert_eq!(att.rows(), g.num_edges() + g.num_nodes());
            for row in incoming_sums(&g, att) {
                for s in row {
                    prop_assert!((s - 1.0).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn outputs_are_finite(seed in any::<u64>(), kind_i in 0usize..2) {
        let features = FeatureConfig::new(12, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (enc, store) = encoder(KINDS[kind_i], 12, seed);
        let g = random_graph(&mut rng, BuildMode::EdgeAsInput, &features);
        let e = enc.encode(&store, &g).unwrap();
        prop_assert!(e.graph_embedding.iter().all(|v| v.is_finite()));
        prop_assert_eq!(e.graph_embedding.len(), 16);
    }
}
