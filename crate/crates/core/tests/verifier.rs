mod common;

use common::*;
use graphcheck::autodiff::sha256_hex;
use graphcheck::data::Label;
use graphcheck::encoder::LayerKind;
use graphcheck::extraction::{synth_dataset, SynthConfig};
use graphcheck::kg::BuildMode;
use graphcheck::verifier::{GraphCheck, ModelConfig, Prediction, UNSUPPORT_ID};
use graphcheck::Error;

fn model(cfg: ModelConfig) -> (GraphCheck, Vec<graphcheck::verifier::Prepared>) {
    let data = synth_dataset(12, 8, &SynthConfig::default()).unwrap();
    let m = GraphCheck::new(cfg, vocab_for(&data)).unwrap();
    let p = prepare(&m, &data);
    (m, p)
}

#[test]
fn ties_break_to_unsupport() {
    assert_eq!(Prediction::from_logits([0.5, 0.5]).label, Label::Unsupport);
    assert_eq!(Prediction::from_logits([0.6, 0.5]).label, Label::Support);
}

#[test]
fn only_encoder_and_projector_train_by_default() {
    let (m, p) = model(small_config(LayerKind::Gat, BuildMode::EdgeAsInput));
    assert!(m.backbone_frozen());
    for (_, param) in m.params.iter() {
        let expected = param.name.starts_with("encoder.") || param.name.starts_with("projector.");
        assert_eq!(param.trainable, expected, "{}", param.name);
    }
    let (_, grads) = m.loss_and_grads(&p[0], true, &mut rand::rng()).unwrap();
    assert!(grads.iter().all(|(id, _)| m.params.get(*id).trainable));
    assert_eq!(grads.len(), m.params.trainable_ids().len());
}

#[test]
fn calibration_unfreezes_only_answer_rows() {
    let mut cfg = small_config(LayerKind::Gat, BuildMode::EdgeAsInput);
    cfg.verifier.calibration = true;
    let (m, _) = model(cfg);
    assert!(m.backbone_frozen());
    let open: Vec<&str> = m
        .params
        .iter()
        .filter(|(_, p)| p.trainable && p.name.starts_with("verifier."))
        .map(|(_, p)| p.name.as_str())
        .collect();
    assert_eq!(open, ["verifier.answer_rows"]);
}

#[test]
fn unfrozen_backbone_is_refused() {
    let (mut m, p) = model(small_config(LayerKind::Gat, BuildMode::EdgeAsInput));
    let id = m.params.id("verifier.block0.w_q").unwrap();
    m.params.get_mut(id).trainable = true;
    assert!(!m.backbone_frozen());
    assert!(matches!(m.classify_prepared(&p[0]), Err(Error::Contract(_))));
}

#[test]
fn tokens_end_with_the_answer_slot_and_fit_the_budget() {
    let mut cfg = small_config(LayerKind::Gat, BuildMode::EdgeAsInput);
    cfg.verifier.max_txt_len = 20;
    let (m, p) = model(cfg);
    for x in &p {
        assert_eq!(x.tokens.len(), 20);
        assert_eq!(*x.tokens.last().unwrap(), m.vocab.answer_slot_id());
        assert!(!x.tokens.contains(&UNSUPPORT_ID));
    }
    let mut long = p[0].clone();
    long.tokens.extend([4; 5]);
    assert!(matches!(m.classify_prepared(&long), Err(Error::Contract(_))));
}

#[test]
fn graph_off_ignores_the_graphs() {
    let mut cfg = small_config(LayerKind::Gat, BuildMode::EdgeAsInput);
    cfg.use_graph = false;
    let (m, p) = model(cfg);
    let mut swapped = p[0].clone();
    swapped.claim_graph = p[1].claim_graph.clone();
    swapped.doc_graph = p[1].doc_graph.clone();
    assert_eq!(m.classify_prepared(&p[0]).unwrap(), m.classify_prepared(&swapped).unwrap());

    let (on, p_on) = model(small_config(LayerKind::Gat, BuildMode::EdgeAsInput));
    let mut swapped = p_on[0].clone();
    swapped.doc_graph = p_on[1].doc_graph.clone();
    assert_ne!(on.classify_prepared(&p_on[0]).unwrap().logits, on.classify_prepared(&swapped).unwrap().logits);
}

#[test]
fn one_call_per_classification() {
    let (m, p) = model(small_config(LayerKind::GraphTransformer, BuildMode::EdgeAsNode));
    m.reset_verifier_calls();
    for x in &p {
        m.classify_prepared(x).unwrap();
    }
    assert_eq!(m.verifier_calls(), p.len());
    assert_eq!(m.clone().verifier_calls(), 0);
}

#[test]
fn save_load_roundtrip() {
    for kind in [LayerKind::Gat, LayerKind::GraphTransformer] {
        let (m, p) = model(small_config(kind, BuildMode::EdgeAsInput));
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let back = GraphCheck::load(dir.path()).unwrap();
        assert_eq!(back.cfg, m.cfg);
        assert_eq!(sha256_hex(&back.frozen_checkpoint()), sha256_hex(&m.frozen_checkpoint()));
        assert_eq!(back.trainable_checkpoint(), m.trainable_checkpoint());
        for x in &p {
            assert_eq!(back.classify_prepared(x).unwrap(), m.classify_prepared(x).unwrap());
        }
    }
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let (m, _) = model(small_config(LayerKind::Gat, BuildMode::EdgeAsInput));
    let dir = tempfile::tempdir().unwrap();
    m.save(dir.path()).unwrap();
    std::fs::copy(dir.path().join("backbone.ckpt"), dir.path().join("trainable.ckpt")).unwrap();
    assert!(GraphCheck::load(dir.path()).is_err());
    let bytes = m.trainable_checkpoint();
    std::fs::write(dir.path().join("trainable.ckpt"), &bytes[..bytes.len() / 2]).unwrap();
    assert!(GraphCheck::load(dir.path()).is_err());
}

#[test]
fn fixed_weight_seed_gives_identical_backbones() {
    let (a, _) = model(small_config(LayerKind::Gat, BuildMode::EdgeAsInput));
    let (b, _) = model(small_config(LayerKind::GraphTransformer, BuildMode::EdgeAsNode));
    assert_eq!(a.frozen_checkpoint(), b.frozen_checkpoint());
    let mut cfg = small_config(LayerKind::Gat, BuildMode::EdgeAsInput);
    cfg.verifier.weight_seed += 1;
    assert_ne!(model(cfg).0.frozen_checkpoint(), a.frozen_checkpoint());
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = small_config(LayerKind::Gat, BuildMode::EdgeAsInput);
    cfg.encoder.d_in = 32;
    assert!(cfg.validate().is_err());
    let mut cfg = small_config(LayerKind::Gat, BuildMode::EdgeAsInput);
    cfg.verifier.n_heads = 3;
    assert!(cfg.validate().is_err());
}
