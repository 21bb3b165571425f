use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::vocab::{SUPPORT_ID, UNSUPPORT_ID};
use super::VerifierConfig;
use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

const MASKED: f64 = -1e9;

#[derive(Debug, Clone)]
struct Block {
    w_q: ParamId,
    w_k: ParamId,
    w_v: ParamId,
    w_o: ParamId,
    ln1_gain: ParamId,
    ln1_bias: ParamId,
    ff1: ParamId,
    ff1_bias: ParamId,
    ff2: ParamId,
    ff2_bias: ParamId,
    ln2_gain: ParamId,
    ln2_bias: ParamId,
}

/// Seeded post-norm transformer over a mixed sequence of soft and text
/// tokens. All weights are frozen; the two answer rows become trainable only
/// in calibration mode.
#[derive(Debug, Clone)]
pub struct Backbone {
    tok_emb: ParamId,
    answer_rows: ParamId,
    blocks: Vec<Block>,
}

fn names(l: usize) -> impl Fn(&str) -> String {
    move |s| format!("verifier.block{l}.{s}")
}

impl Backbone {
    pub fn new(cfg: &VerifierConfig, vocab_size: usize, store: &mut ParamStore) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.weight_seed);
        let (d, ff, std) = (cfg.d_model, cfg.d_ff, cfg.init_std);
        let tok_emb = store.weight("verifier.tok_emb", &[vocab_size, d], 1.0, false, &mut rng)?;
        let answer_rows = store.weight("verifier.answer_rows", &[2, d], 1.0, cfg.calibration, &mut rng)?;
        let mut blocks = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let p = names(l);
            blocks.push(Block {
                w_q: store.weight(&p("w_q"), &[d, d], std, false, &mut rng)?,
                w_k: store.weight(&p("w_k"), &[d, d], std, false, &mut rng)?,
                w_v: store.weight(&p("w_v"), &[d, d], std, false, &mut rng)?,
                w_o: store.weight(&p("w_o"), &[d, d], std, false, &mut rng)?,
                ln1_gain: store.vector(&p("ln1_gain"), d, 1.0, false)?,
                ln1_bias: store.vector(&p("ln1_bias"), d, 0.0, false)?,
                ff1: store.weight(&p("ff1"), &[d, ff], std, false, &mut rng)?,
                ff1_bias: store.vector(&p("ff1_bias"), ff, 0.0, false)?,
                ff2: store.weight(&p("ff2"), &[ff, d], (1.0 / ff as f64).sqrt(), false, &mut rng)?,
                ff2_bias: store.vector(&p("ff2_bias"), d, 0.0, false)?,
                ln2_gain: store.vector(&p("ln2_gain"), d, 1.0, false)?,
                ln2_bias: store.vector(&p("ln2_bias"), d, 0.0, false)?,
            });
        }
        Ok(Backbone {
            tok_emb,
            answer_rows,
            blocks,
        })
    }

    pub fn attach(cfg: &VerifierConfig, store: &ParamStore) -> Result<Self> {
        let need = |name: String| {
            store
                .id(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
        };
        let mut blocks = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let p = names(l);
            blocks.push(Block {
                w_q: need(p("w_q"))?,
                w_k: need(p("w_k"))?,
                w_v: need(p("w_v"))?,
                w_o: need(p("w_o"))?,
                ln1_gain: need(p("ln1_gain"))?,
                ln1_bias: need(p("ln1_bias"))?,
                ff1: need(p("ff1"))?,
                ff1_bias: need(p("ff1_bias"))?,
                ff2: need(p("ff2"))?,
                ff2_bias: need(p("ff2_bias"))?,
                ln2_gain: need(p("ln2_gain"))?,
                ln2_bias: need(p("ln2_bias"))?,
            });
        }
        Ok(Backbone {
            tok_emb: need("verifier.tok_emb".into())?,
            answer_rows: need("verifier.answer_rows".into())?,
            blocks,
        })
    }

    pub fn answer_rows(&self) -> ParamId {
        self.answer_rows
    }

    /// Frozen embedding lookup, recorded as a constant. The reserved answer
    /// ids read from the answer rows.
    pub fn embed_tokens(&self, tape: &Tape, store: &ParamStore, ids: &[usize]) -> Result<Option<Var>> {
        if ids.is_empty() {
            return Ok(None);
        }
        let table = &store.get(self.tok_emb).value;
        let answers = &store.get(self.answer_rows).value;
        let d = table.cols();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            match id {
                SUPPORT_ID => data.extend_from_slice(answers.row_slice(0)),
                UNSUPPORT_ID => data.extend_from_slice(answers.row_slice(1)),
                _ if id < table.rows() => data.extend_from_slice(table.row_slice(id)),
                _ => return Err(Error::Index { index: id, len: table.rows() }),
            }
        }
        Ok(Some(tape.constant(Tensor::matrix(ids.len(), d, data)?)?))
    }

    /// Runs the stack over `seq` (`[T, d_model]`, positions not yet added)
    /// and returns `[1, 2]` logits `[support, unsupport]` read at the final
    /// position.
    pub fn forward(&self, tape: &Tape, store: &ParamStore, cfg: &VerifierConfig, seq: Var) -> Result<Var> {
        let (t, d) = tape.dims2(seq);
        if d != cfg.d_model {
            return Err(Error::shape("verifier input", &[t, d], &[t, cfg.d_model]));
        }
        let mut x = tape.add(seq, tape.constant(sinusoidal(t, d))?)?;
        let dh = d / cfg.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let n_blocks = self.blocks.len();
        for (l, b) in self.blocks.iter().enumerate() {
            let p = |id| tape.param(store, id);
            // Only the final position feeds the logits, so the last block
            // computes queries for that row alone.
            let last = l + 1 == n_blocks;
            let xq = if last { tape.slice_rows(x, t - 1, 1)? } else { x };
            let q = tape.matmul(xq, p(b.w_q)?)?;
            let k = tape.matmul(x, p(b.w_k)?)?;
            let v = tape.matmul(x, p(b.w_v)?)?;
            let mask = if cfg.bidirectional {
                None
            } else {
                Some(tape.constant(causal_mask(t, last))?)
            };
            let mut heads = Vec::with_capacity(cfg.n_heads);
            for h in 0..cfg.n_heads {
                let qh = tape.slice_cols(q, h * dh, dh)?;
                let kh = tape.slice_cols(k, h * dh, dh)?;
                let vh = tape.slice_cols(v, h * dh, dh)?;
                let mut scores = tape.scale(tape.matmul(qh, tape.transpose(kh)?)?, scale)?;
                if let Some(m) = mask {
                    scores = tape.add(scores, m)?;
                }
                let att = tape.softmax_rows(scores)?;
                heads.push(tape.matmul(att, vh)?);
            }
            let attn = tape.matmul(tape.concat_cols(&heads)?, p(b.w_o)?)?;
            let h1 = affine_norm(tape, tape.add(xq, attn)?, p(b.ln1_gain)?, p(b.ln1_bias)?)?;
            let ff = tape.relu(tape.add_row(tape.matmul(h1, p(b.ff1)?)?, p(b.ff1_bias)?)?)?;
            let ff = tape.add_row(tape.matmul(ff, p(b.ff2)?)?, p(b.ff2_bias)?)?;
            x = affine_norm(tape, tape.add(h1, ff)?, p(b.ln2_gain)?, p(b.ln2_bias)?)?;
        }
        let rows = tape.dims2(x).0;
        let final_state = if rows == 1 { x } else { tape.slice_rows(x, rows - 1, 1)? };
        let answers = tape.param(store, self.answer_rows)?;
        tape.matmul(final_state, tape.transpose(answers)?)
    }
}

fn affine_norm(tape: &Tape, x: Var, gain: Var, bias: Var) -> Result<Var> {
    tape.add_row(tape.mul_row(tape.layer_norm(x)?, gain)?, bias)
}

fn causal_mask(t: usize, last_only: bool) -> Tensor {
    if last_only {
        return Tensor::zeros(&[1, t]);
    }
    let mut m = Tensor::zeros(&[t, t]);
    for i in 0..t {
        for j in i + 1..t {
            m.data_mut()[i * t + j] = MASKED;
        }
    }
    m
}

/// Fixed sine/cosine position table `[t, d]`.
pub fn sinusoidal(t: usize, d: usize) -> Tensor {
    let mut data = Vec::with_capacity(t * d);
    for pos in 0..t {
        for i in 0..d {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 * freq;
            data.push(if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::matrix(t, d, data).expect("positive dims")
}
