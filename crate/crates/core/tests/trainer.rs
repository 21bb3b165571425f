mod common;

use common::*;
use graphcheck::autodiff::{ParamStore, Tensor};
use graphcheck::encoder::LayerKind;
use graphcheck::extraction::{synth_dataset, SynthConfig};
use graphcheck::kg::BuildMode;
use graphcheck::trainer::*;
use graphcheck::verifier::GraphCheck;
use graphcheck::Error;

#[test]
fn split_sizes_use_floor_remainder() {
    let spec = SplitSpec { ratios: (6, 2, 2), seed: 1 };
    let ten: Vec<usize> = (0..10).collect();
    let (a, b, c) = split_dataset(&ten, &spec).unwrap();
    assert_eq!((a.len(), b.len(), c.len()), (6, 2, 2));
    let eleven: Vec<usize> = (0..11).collect();
    let (a, b, c) = split_dataset(&eleven, &spec).unwrap();
    assert_eq!((a.len(), b.len(), c.len()), (7, 2, 2));
    let mut all: Vec<usize> = a.iter().chain(&b).chain(&c).copied().collect();
    all.sort();
    assert_eq!(all, eleven, "a partition");
    assert_eq!(split_dataset(&eleven, &spec).unwrap(), split_dataset(&eleven, &spec).unwrap());
    assert!(split_dataset(&ten[..4], &spec).is_err());
}

#[test]
fn adamw_first_step_by_hand() {
    let mut store = ParamStore::new();
    let w = store.insert("w", Tensor::new(vec![2], vec![1.0, -2.0]).unwrap(), true, true).unwrap();
    let b = store.insert("b", Tensor::new(vec![1], vec![1.0]).unwrap(), true, false).unwrap();
    let grads = vec![
        (w, Tensor::new(vec![2], vec![0.5, -0.25]).unwrap()),
        (b, Tensor::new(vec![1], vec![0.5]).unwrap()),
    ];
    let mut state = AdamState::default();
    optimizer_step(&mut store, &grads, &mut state, &AdamW::new(0.1, 0.01)).unwrap();
    // Bias-corrected first step moves each weight by lr * sign(g) (up to eps);
    // decay subtracts lr * wd * w only where flagged.
    let eps_term = |g: f64| 0.1 * g.abs() / (g.abs() + 1e-8);
    let wv = store.get(w).value.data().to_vec();
    assert!((wv[0] - (1.0 - 0.001 - eps_term(0.5))).abs() < 1e-15);
    assert!((wv[1] - (-2.0 + 0.002 + eps_term(0.25))).abs() < 1e-15);
    assert!((store.get(b).value.data()[0] - (1.0 - eps_term(0.5))).abs() < 1e-15);

    // Second step with the same gradient: m_hat = g, v_hat = g^2 again.
    optimizer_step(&mut store, &grads, &mut state, &AdamW::new(0.1, 0.0)).unwrap();
    assert!((store.get(b).value.data()[0] - (1.0 - 2.0 * eps_term(0.5))).abs() < 1e-12);
    assert_eq!(state.step, 2);
}

#[test]
fn optimizer_refuses_frozen_and_mismatched() {
    let mut store = ParamStore::new();
    let f = store.insert("f", Tensor::zeros(&[2]), false, true).unwrap();
    let t = store.insert("t", Tensor::zeros(&[2]), true, true).unwrap();
    let opt = AdamW::new(0.1, 0.0);
    let mut state = AdamState::default();
    assert!(matches!(
        optimizer_step(&mut store, &[(f, Tensor::zeros(&[2]))], &mut state, &opt),
        Err(Error::Contract(_))
    ));
    assert!(optimizer_step(&mut store, &[(t, Tensor::zeros(&[3]))], &mut state, &opt).is_err());
}

#[test]
fn early_stopping_after_peak_at_two() {
    let mut s = EarlyStopping::new(3);
    let curve = [0.5, 0.7, 0.6, 0.65, 0.69, 0.9];
    let mut stopped = None;
    for (i, v) in curve.iter().enumerate() {
        s.update(*v);
        if s.should_stop() {
            stopped = Some(i + 1);
            break;
        }
    }
    assert_eq!(stopped, Some(5));
    assert_eq!(s.best(), Some(0.7));
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    assert_eq!(TrainConfig::default().learning_rate, 1e-5);
    for bad in [
        TrainConfig { batch_size: 0, ..TrainConfig::default() },
        TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
        TrainConfig { early_stop_patience: 20, ..TrainConfig::default() },
    ] {
        assert!(bad.validate().is_err(), "{bad:?}");
    }
}

#[test]
fn training_improves_and_restores_best() {
    let data = synth_dataset(160, 2, &SynthConfig::default()).unwrap();
    let (tr, va, _) = split_dataset(&data, &SplitSpec { ratios: (6, 2, 2), seed: 2 }).unwrap();
    let mut model = GraphCheck::new(small_config(LayerKind::Gat, BuildMode::EdgeAsInput), vocab_for(&tr)).unwrap();
    let (tr, va) = (prepare(&model, &tr), prepare(&model, &va));
    let frozen = model.frozen_checkpoint();
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        num_epochs: 6,
        early_stop_patience: 5,
        warmup_epochs: 1,
        seed: 4,
        ..TrainConfig::default()
    };
    let out = train(&mut model, &tr, &va, &cfg).unwrap();
    assert!(out.history[0].train_loss < out.initial_loss, "{out:?}");
    assert!(out.history.iter().all(|r| r.train_loss.is_finite()));
    let best = out.history.iter().map(|r| r.val_bacc).fold(f64::MIN, f64::max);
    assert_eq!(out.best_val_bacc, best);
    assert_eq!(evaluate_bacc(&model, &va).unwrap(), best, "best checkpoint restored");
    assert_eq!(model.frozen_checkpoint(), frozen);

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("history.csv");
    write_history_csv(&p, &out.history).unwrap();
    let csv = std::fs::read_to_string(p).unwrap();
    assert_eq!(csv.lines().next(), Some("epoch,train_loss,val_bacc,lr"));
    assert_eq!(csv.lines().count(), out.history.len() + 1);
}

#[test]
fn training_is_deterministic() {
    let data = synth_dataset(60, 9, &SynthConfig::default()).unwrap();
    let (tr, va, _) = split_dataset(&data, &SplitSpec { ratios: (6, 2, 2), seed: 9 }).unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        num_epochs: 2,
        early_stop_patience: 1,
        warmup_epochs: 1,
        ..TrainConfig::default()
    };
    let run = || {
        let mut m = GraphCheck::new(small_config(LayerKind::GraphTransformer, BuildMode::EdgeAsNode), vocab_for(&tr)).unwrap();
        let (a, b) = (prepare(&m, &tr), prepare(&m, &va));
        let out = train(&mut m, &a, &b, &cfg).unwrap();
        (out, m.trainable_checkpoint())
    };
    assert_eq!(run(), run());
}
