//! Frozen transformer verifier fed with graph soft-prompt tokens.
//!
//! The input sequence is `[claim-graph tokens; doc-graph tokens; text tokens]`
//! where each graph contributes `k_virtual` rows produced by a trainable
//! projector from its graph embedding. The verdict is read from the final
//! position as two logits against the answer-token rows.

mod backbone;
mod vocab;

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use backbone::{sinusoidal, Backbone};
pub use vocab::{render_template, Vocab, PAD_ID, SUPPORT_ID, UNK_ID, UNSUPPORT_ID};

use crate::autodiff::{sha256_hex, ParamId, ParamStore, Tape, Tensor, Var};
use crate::data::{Label, Sample};
use crate::encoder::{EncodedGraph, EncodedVars, EncoderConfig, GraphEncoder, LayerKind};
use crate::error::{Error, Result};
use crate::featurizer::FeatureConfig;
use crate::kg::{build_graph, BuildMode, KnowledgeGraph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_txt_len: usize,
    /// Soft-prompt rows per graph (claim and doc each get this many).
    pub k_virtual: usize,
    pub projector_hidden: usize,
    pub weight_seed: u64,
    /// Std of the frozen random attention and feed-forward weights.
    pub init_std: f64,
    pub answer_token_ids: (usize, usize),
    /// Unfreezes the two answer-token rows.
    pub calibration: bool,
    pub bidirectional: bool,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        VerifierConfig {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 128,
            max_txt_len: 1024,
            k_virtual: 4,
            projector_hidden: 128,
            weight_seed: 0,
            init_std: 0.125,
            answer_token_ids: (SUPPORT_ID, UNSUPPORT_ID),
            calibration: false,
            bidirectional: true,
        }
    }
}

impl VerifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::validation("d_model", "must be a positive multiple of n_heads"));
        }
        if self.n_layers == 0 || self.d_ff == 0 || self.k_virtual == 0 || self.projector_hidden == 0 {
            return Err(Error::validation("verifier dims", "must be positive"));
        }
        if self.max_txt_len == 0 {
            return Err(Error::validation("max_txt_len", "must be positive"));
        }
        if self.answer_token_ids != (SUPPORT_ID, UNSUPPORT_ID) {
            return Err(Error::validation("answer_token_ids", "must be the reserved support/unsupport ids"));
        }
        if !(self.init_std > 0.0) {
            return Err(Error::validation("init_std", "must be positive"));
        }
        Ok(())
    }

    pub fn max_seq_len(&self) -> usize {
        2 * self.k_virtual + self.max_txt_len
    }
}

/// Two affine layers with a relu between, `d_hidden -> k_virtual x d_model`.
#[derive(Debug, Clone)]
pub struct Projector {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    k: usize,
    d_model: usize,
}

impl Projector {
    pub fn new<R: Rng>(d_in: usize, cfg: &VerifierConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        let (h, out) = (cfg.projector_hidden, cfg.k_virtual * cfg.d_model);
        Ok(Projector {
            w1: store.weight("projector.w1", &[d_in, h], (2.0 / (d_in + h) as f64).sqrt(), true, rng)?,
            b1: store.vector("projector.b1", h, 0.0, true)?,
            w2: store.weight("projector.w2", &[h, out], (2.0 / (h + out) as f64).sqrt(), true, rng)?,
            b2: store.vector("projector.b2", out, 0.0, true)?,
            k: cfg.k_virtual,
            d_model: cfg.d_model,
        })
    }

    pub fn attach(cfg: &VerifierConfig, store: &ParamStore) -> Result<Self> {
        let need = |name: &str| {
            store
                .id(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
        };
        Ok(Projector {
            w1: need("projector.w1")?,
            b1: need("projector.b1")?,
            w2: need("projector.w2")?,
            b2: need("projector.b2")?,
            k: cfg.k_virtual,
            d_model: cfg.d_model,
        })
    }

    /// `[1, d_hidden] -> [k_virtual, d_model]`.
    pub fn forward(&self, tape: &Tape, store: &ParamStore, graph_embedding: Var) -> Result<Var> {
        let h = tape.matmul(graph_embedding, tape.param(store, self.w1)?)?;
        let h = tape.relu(tape.add_row(h, tape.param(store, self.b1)?)?)?;
        let out = tape.add_row(tape.matmul(h, tape.param(store, self.w2)?)?, tape.param(store, self.b2)?)?;
        tape.reshape(out, self.k, self.d_model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub features: FeatureConfig,
    pub build_mode: BuildMode,
    pub encoder: EncoderConfig,
    pub verifier: VerifierConfig,
    /// When false the soft-prompt rows are all zero (graph-off control).
    pub use_graph: bool,
    /// Seed for the trainable encoder and projector initialization.
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let features = FeatureConfig::default();
        ModelConfig {
            features,
            build_mode: BuildMode::EdgeAsInput,
            encoder: EncoderConfig {
                d_in: features.dim,
                d_hidden: 64,
                ..EncoderConfig::default()
            },
            verifier: VerifierConfig::default(),
            use_graph: true,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    /// Desk-scale preset: 256-dim features, a 2-layer GAT of width 32 and a
    /// 2-layer verifier with d_model 32. Both weight seeds are `seed`.
    pub fn desk(seed: u64) -> Self {
        ModelConfig {
            features: FeatureConfig { dim: 256, seed: 0 },
            build_mode: BuildMode::EdgeAsInput,
            encoder: EncoderConfig {
                layer_kind: LayerKind::Gat,
                num_layers: 2,
                d_in: 256,
                d_hidden: 32,
                num_heads: 4,
                dropout_p: 0.0,
            },
            verifier: VerifierConfig {
                d_model: 32,
                n_layers: 2,
                n_heads: 4,
                d_ff: 64,
                max_txt_len: 128,
                k_virtual: 4,
                projector_hidden: 64,
                weight_seed: seed,
                init_std: 0.125,
                ..VerifierConfig::default()
            },
            use_graph: true,
            init_seed: seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        self.encoder.validate()?;
        self.verifier.validate()?;
        if self.encoder.d_in != self.features.dim {
            return Err(Error::validation("encoder.d_in", "must equal the feature dimension"));
        }
        Ok(())
    }

    /// Short content hash of the configuration.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        sha256_hex(json.as_bytes())[..16].to_string()
    }
}

/// Sample converted to model inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub claim_graph: KnowledgeGraph,
    pub doc_graph: KnowledgeGraph,
    pub tokens: Vec<usize>,
    pub label: Label,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: Label,
    /// `[support, unsupport]`.
    pub logits: [f64; 2],
}

impl Prediction {
    /// Argmax with ties going to unsupport.
    pub fn from_logits(logits: [f64; 2]) -> Self {
        let label = if logits[0] > logits[1] {
            Label::Support
        } else {
            Label::Unsupport
        };
        Prediction { label, logits }
    }
}

/// Tape handles from one full forward pass.
#[derive(Debug)]
pub struct ForwardVars {
    pub logits: Var,
    pub claim: Option<EncodedVars>,
    pub doc: Option<EncodedVars>,
}

/// Result of a classification with the encoder outputs kept for explanation.
#[derive(Debug, Clone)]
pub struct Inspection {
    pub prediction: Prediction,
    pub claim: EncodedGraph,
    pub doc: EncodedGraph,
}

/// Complete pipeline: featurizer, graph builder, encoder, projector, and the
/// frozen verifier, with all parameters in one store.
#[derive(Debug)]
pub struct GraphCheck {
    pub cfg: ModelConfig,
    pub vocab: Vocab,
    pub params: ParamStore,
    encoder: GraphEncoder,
    projector: Projector,
    backbone: Backbone,
    verifier_calls: AtomicUsize,
}

impl Clone for GraphCheck {
    fn clone(&self) -> Self {
        GraphCheck {
            cfg: self.cfg.clone(),
            vocab: self.vocab.clone(),
            params: self.params.clone(),
            encoder: self.encoder.clone(),
            projector: self.projector.clone(),
            backbone: self.backbone.clone(),
            verifier_calls: AtomicUsize::new(0),
        }
    }
}

impl GraphCheck {
    pub fn new(cfg: ModelConfig, vocab: Vocab) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let backbone = Backbone::new(&cfg.verifier, vocab.len(), &mut params)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let encoder = GraphEncoder::new(cfg.encoder, &mut params, &mut rng)?;
        let projector = Projector::new(cfg.encoder.d_hidden, &cfg.verifier, &mut params, &mut rng)?;
        Ok(GraphCheck {
            cfg,
            vocab,
            params,
            encoder,
            projector,
            backbone,
            verifier_calls: AtomicUsize::new(0),
        })
    }

    pub fn encoder(&self) -> &GraphEncoder {
        &self.encoder
    }

    /// Number of verifier forward passes since construction or the last reset.
    pub fn verifier_calls(&self) -> usize {
        self.verifier_calls.load(Ordering::SeqCst)
    }

    pub fn reset_verifier_calls(&self) {
        self.verifier_calls.store(0, Ordering::SeqCst);
    }

    pub fn build(&self, triples: &[crate::kg::Triple]) -> Result<KnowledgeGraph> {
        build_graph(triples, self.cfg.build_mode, self.cfg.features.featurizer())
    }

    pub fn text_tokens(&self, claim: &str, doc: &str) -> Vec<usize> {
        self.vocab
            .tokenize(&render_template(claim, doc), self.cfg.verifier.max_txt_len)
    }

    pub fn prepare(&self, s: &Sample) -> Result<Prepared> {
        Ok(Prepared {
            claim_graph: self.build(&s.claim_kg)?,
            doc_graph: self.build(&s.doc_kg)?,
            tokens: self.text_tokens(&s.claim, &s.doc),
            label: s.label,
        })
    }

    /// Soft-prompt rows `[2k, d_model]` and the encoder outputs behind them.
    fn virtual_tokens<R: Rng>(
        &self,
        tape: &Tape,
        p: &Prepared,
        train: bool,
        rng: &mut R,
    ) -> Result<(Var, Option<EncodedVars>, Option<EncodedVars>)> {
        let vc = &self.cfg.verifier;
        if !self.cfg.use_graph {
            let zeros = tape.constant(Tensor::zeros(&[2 * vc.k_virtual, vc.d_model]))?;
            return Ok((zeros, None, None));
        }
        let claim = self.encoder.encode_on(tape, &self.params, &p.claim_graph, train, rng)?;
        let doc = self.encoder.encode_on(tape, &self.params, &p.doc_graph, train, rng)?;
        let vc_rows = self.projector.forward(tape, &self.params, claim.graph_embedding)?;
        let vd_rows = self.projector.forward(tape, &self.params, doc.graph_embedding)?;
        Ok((tape.concat_rows(&[vc_rows, vd_rows])?, Some(claim), Some(doc)))
    }

    /// One verifier call on a fully assembled input sequence.
    pub fn verifier_forward(&self, tape: &Tape, virtual_rows: Var, tokens: &[usize]) -> Result<Var> {
        let vc = &self.cfg.verifier;
        let seq_len = tape.dims2(virtual_rows).0 + tokens.len();
        if seq_len > vc.max_seq_len() {
            return Err(Error::Contract(format!(
                "sequence length {seq_len} exceeds budget {}",
                vc.max_seq_len()
            )));
        }
        if !self.backbone_frozen() {
            return Err(Error::Contract("backbone parameters must be frozen".into()));
        }
        let seq = match self.backbone.embed_tokens(tape, &self.params, tokens)? {
            Some(text) => tape.concat_rows(&[virtual_rows, text])?,
            None => virtual_rows,
        };
        self.verifier_calls.fetch_add(1, Ordering::SeqCst);
        self.backbone.forward(tape, &self.params, vc, seq)
    }

    pub fn forward_on<R: Rng>(&self, tape: &Tape, p: &Prepared, train: bool, rng: &mut R) -> Result<ForwardVars> {
        let (rows, claim, doc) = self.virtual_tokens(tape, p, train, rng)?;
        let logits = self.verifier_forward(tape, rows, &p.tokens)?;
        Ok(ForwardVars { logits, claim, doc })
    }

    /// Training loss and its parameter gradients for one sample.
    pub fn loss_and_grads<R: Rng>(&self, p: &Prepared, train: bool, rng: &mut R) -> Result<(f64, Vec<(ParamId, Tensor)>)> {
        let tape = Tape::new();
        let out = self.forward_on(&tape, p, train, rng)?;
        let loss = tape.cross_entropy(out.logits, p.label.index())?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Numeric("non-finite loss".into()));
        }
        let grads = tape.backward(loss)?;
        let grads = tape
            .param_grads(&grads)
            .into_iter()
            .filter(|(id, _)| self.params.get(*id).trainable)
            .collect();
        Ok((value, grads))
    }

    pub fn loss(&self, p: &Prepared) -> Result<f64> {
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward_on(&tape, p, false, &mut rng)?;
        let loss = tape.cross_entropy(out.logits, p.label.index())?;
        Ok(tape.value(loss).item())
    }

    /// Eval-mode verdict with the encoder outputs for both graphs.
    pub fn inspect(&self, p: &Prepared) -> Result<Inspection> {
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward_on(&tape, p, false, &mut rng)?;
        let l = tape.value(out.logits);
        let values = |v: Option<EncodedVars>| -> EncodedGraph {
            match v {
                Some(v) => EncodedGraph {
                    node_states: v.node_states.iter().map(|&s| tape.value(s)).collect(),
                    attention: v.attention.iter().map(|&a| tape.value(a)).collect(),
                    graph_embedding: tape.value(v.graph_embedding).into_data(),
                },
                None => EncodedGraph {
                    node_states: Vec::new(),
                    attention: Vec::new(),
                    graph_embedding: vec![0.0; self.cfg.encoder.d_hidden],
                },
            }
        };
        Ok(Inspection {
            prediction: Prediction::from_logits([l.data()[0], l.data()[1]]),
            claim: values(out.claim),
            doc: values(out.doc),
        })
    }

    pub fn classify_prepared(&self, p: &Prepared) -> Result<Prediction> {
        Ok(self.inspect(p)?.prediction)
    }

    /// Encodes both graphs, projects them, and runs the verifier once.
    pub fn classify(
        &self,
        claim: &str,
        doc: &str,
        claim_graph: &KnowledgeGraph,
        doc_graph: &KnowledgeGraph,
    ) -> Result<Prediction> {
        let p = Prepared {
            claim_graph: claim_graph.clone(),
            doc_graph: doc_graph.clone(),
            tokens: self.text_tokens(claim, doc),
            label: Label::Unsupport,
        };
        self.classify_prepared(&p)
    }

    /// True when every backbone parameter except possibly the calibrated
    /// answer rows is frozen.
    pub fn backbone_frozen(&self) -> bool {
        self.params.iter().filter(|(_, p)| p.name.starts_with("verifier.")).all(|(id, p)| {
            !p.trainable || (self.cfg.verifier.calibration && id == self.backbone.answer_rows())
        })
    }

    pub fn frozen_checkpoint(&self) -> Vec<u8> {
        self.params.frozen_bytes()
    }

    pub fn trainable_checkpoint(&self) -> Vec<u8> {
        self.params.trainable_bytes()
    }

    /// Writes `model.json`, `vocab.txt`, `backbone.ckpt` and `trainable.ckpt`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("model.json"), serde_json::to_string_pretty(&self.cfg)? + "\n")?;
        self.vocab.save(&dir.join("vocab.txt"))?;
        std::fs::write(dir.join("backbone.ckpt"), self.frozen_checkpoint())?;
        std::fs::write(dir.join("trainable.ckpt"), self.trainable_checkpoint())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let cfg: ModelConfig = serde_json::from_str(&std::fs::read_to_string(dir.join("model.json"))?)?;
        let vocab = Vocab::load(&dir.join("vocab.txt"))?;
        let mut model = GraphCheck::new(cfg, vocab)?;
        let mut loaded = 0;
        for (file, trainable) in [("backbone.ckpt", false), ("trainable.ckpt", true)] {
            let part = ParamStore::from_bytes(&std::fs::read(dir.join(file))?)?;
            if part.iter().any(|(_, p)| p.trainable != trainable) {
                return Err(Error::Checkpoint(format!("{file} has tensors with the wrong trainable flag")));
            }
            model.params.load_from(&part)?;
            loaded += part.len();
        }
        if loaded != model.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {loaded} tensors, model needs {}",
                model.params.len()
            )));
        }
        Ok(model)
    }
}
