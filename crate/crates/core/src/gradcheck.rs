//! Finite-difference gradient verification.
//!
//! Everything here only evaluates forward passes, so it stays independent of
//! the backward rules it is used to check.

use rand::SeedableRng;
use serde::Serialize;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::data::{Label, Sample};
use crate::encoder::{EncoderConfig, LayerKind};
use crate::error::Result;
use crate::featurizer::FeatureConfig;
use crate::kg::{BuildMode, Triple};
use crate::verifier::{GraphCheck, ModelConfig, Prepared, VerifierConfig, Vocab};

/// Gradients below this magnitude are compared absolutely.
pub const ABS_FLOOR: f64 = 1e-8;

/// Central differences `(f(x+h) - f(x-h)) / 2h` for every element of `x`.
pub fn central_difference(mut f: impl FnMut(&Tensor) -> Result<f64>, x: &Tensor, h: f64) -> Result<Tensor> {
    let mut grad = Tensor::zeros(x.shape());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(ABS_FLOOR)
}

pub fn max_relative_error(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| relative_error(x, y))
        .fold(0.0, f64::max)
}

/// Central differences of a scalar loss w.r.t. one stored parameter.
pub fn param_difference(
    store: &ParamStore,
    id: ParamId,
    h: f64,
    loss: impl Fn(&ParamStore) -> Result<f64>,
) -> Result<Tensor> {
    let base = store.get(id).value.clone();
    let mut probe = store.clone();
    central_difference(
        |x| {
            probe.get_mut(id).value = x.clone();
            loss(&probe)
        },
        &base,
        h,
    )
}

/// Per-parameter comparison of analytic and finite-difference gradients.
#[derive(Debug, Clone, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub values: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err() < tol
    }
}

/// Checks every trainable parameter in `store` against central differences.
pub fn check_params(
    store: &ParamStore,
    h: f64,
    loss: impl Fn(&ParamStore) -> Result<f64>,
    analytic: impl Fn(&ParamStore) -> Result<Vec<(ParamId, Tensor)>>,
) -> Result<GradCheckReport> {
    let grads = analytic(store)?;
    let mut params = Vec::new();
    for id in store.trainable_ids() {
        let a = grads
            .iter()
            .find(|(g, _)| *g == id)
            .map(|(_, t)| t.clone())
            .unwrap_or_else(|| Tensor::zeros(store.get(id).value.shape()));
        let n = param_difference(store, id, h, &loss)?;
        params.push(ParamCheck {
            name: store.get(id).name.clone(),
            values: a.len(),
            max_rel_err: max_relative_error(&a, &n),
        });
    }
    Ok(GradCheckReport { params })
}

/// Shapes of the end-to-end check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PipelineCheck {
    pub dim: usize,
    pub layer_kind: LayerKind,
    pub build_mode: BuildMode,
    pub calibration: bool,
    pub seed: u64,
}

impl Default for PipelineCheck {
    fn default() -> Self {
        PipelineCheck {
            dim: 8,
            layer_kind: LayerKind::Gat,
            build_mode: BuildMode::EdgeAsInput,
            calibration: false,
            seed: 0,
        }
    }
}

/// Tiny model and sample for the end-to-end check: a 3-entity claim graph,
/// a 4-entity doc graph, `d_in = d_hidden = dim`, two encoder layers, two
/// virtual tokens per graph and a two-layer verifier.
pub fn pipeline_fixture(c: &PipelineCheck) -> Result<(GraphCheck, Prepared)> {
    let t = |s: &str, r: &str, o: &str| Triple::new(s, r, o);
    let claim_kg = vec![t("ada", "knows", "bob")?, t("bob", "likes", "cy")?];
    let doc_kg = vec![t("ada", "knows", "bob")?, t("bob", "likes", "cy")?, t("cy", "helps", "dee")?];
    let sample = Sample {
        claim: "ada knows bob. bob likes cy.".into(),
        doc: "ada knows bob. bob likes cy. cy helps dee.".into(),
        claim_kg,
        doc_kg,
        label: Label::Unsupport,
    };
    let heads = if c.dim % 2 == 0 { 2 } else { 1 };
    let cfg = ModelConfig {
        features: FeatureConfig::new(c.dim, c.seed)?,
        build_mode: c.build_mode,
        encoder: EncoderConfig {
            layer_kind: c.layer_kind,
            num_layers: 2,
            d_in: c.dim,
            d_hidden: c.dim,
            num_heads: heads,
            dropout_p: 0.0,
        },
        verifier: VerifierConfig {
            d_model: c.dim,
            n_layers: 2,
            n_heads: heads,
            d_ff: 2 * c.dim,
            max_txt_len: 64,
            k_virtual: 2,
            projector_hidden: c.dim,
            weight_seed: c.seed,
            init_std: 0.5,
            calibration: c.calibration,
            ..VerifierConfig::default()
        },
        use_graph: true,
        init_seed: c.seed,
    };
    let vocab = Vocab::build([sample.claim.as_str(), sample.doc.as_str()]);
    let model = GraphCheck::new(cfg, vocab)?;
    let p = model.prepare(&sample)?;
    Ok((model, p))
}

/// Finite-difference check of the loss gradient w.r.t. every trainable
/// parameter of the full pipeline (eval mode, so no dropout).
pub fn check_pipeline(c: &PipelineCheck, h: f64) -> Result<GradCheckReport> {
    let (model, p) = pipeline_fixture(c)?;
    let with = |store: &ParamStore| {
        let mut m = model.clone();
        m.params = store.clone();
        m
    };
    check_params(
        &model.params,
        h,
        |store| with(store).loss(&p),
        |store| {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            Ok(with(store).loss_and_grads(&p, false, &mut rng)?.1)
        },
    )
}

fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape matches")
}

/// Max relative error of d/dx sum(w * f(x)) for a random weighting `w`.
pub fn check_op(shape: &[usize], h: f64, f: impl Fn(&Tape, Var) -> Result<Var>) -> Result<f64> {
    let x0 = random_tensor(shape, 1);
    let out_shape = {
        let tape = Tape::new();
        let x = tape.leaf(x0.clone(), true)?;
        tape.shape(f(&tape, x)?)
    };
    let w = random_tensor(&out_shape, 2);
    let run = |x: &Tensor| -> Result<(Tape, Var, Var)> {
        let tape = Tape::new();
        let xv = tape.leaf(x.clone(), true)?;
        let y = f(&tape, xv)?;
        let s = tape.sum(tape.mul(y, tape.constant(w.clone())?)?)?;
        Ok((tape, xv, s))
    };
    let (tape, xv, s) = run(&x0)?;
    let analytic = tape.backward(s)?.wrt(xv);
    let numeric = central_difference(
        |x| {
            let (t, _, s) = run(x)?;
            Ok(t.value(s).item())
        },
        &x0,
        h,
    )?;
    Ok(max_relative_error(&analytic, &numeric))
}

/// Runs `check_op` over every differentiable tape op. Binary ops are checked
/// w.r.t. each operand in turn.
pub fn check_ops(h: f64) -> Result<Vec<(&'static str, f64)>> {
    let other = random_tensor(&[3, 4], 77);
    let row = random_tensor(&[1, 4], 78);
    let rhs = random_tensor(&[4, 2], 79);
    let c = |t: &Tape, x: &Tensor| t.constant(x.clone());
    type Op<'a> = (&'static str, Vec<usize>, Box<dyn Fn(&Tape, Var) -> Result<Var> + 'a>);
    let ops: Vec<Op> = vec![
        ("relu", vec![3, 4], Box::new(|t, x| t.relu(x))),
        ("leaky_relu", vec![3, 4], Box::new(|t, x| t.leaky_relu(x, 0.2))),
        ("softmax_rows", vec![3, 4], Box::new(|t, x| t.softmax_rows(x))),
        ("layer_norm", vec![3, 4], Box::new(|t, x| t.layer_norm(x))),
        ("scale", vec![3, 4], Box::new(|t, x| t.scale(x, -1.7))),
        ("transpose", vec![3, 4], Box::new(|t, x| t.transpose(x))),
        ("slice_rows", vec![3, 4], Box::new(|t, x| t.slice_rows(x, 1, 2))),
        ("slice_cols", vec![3, 4], Box::new(|t, x| t.slice_cols(x, 1, 2))),
        ("sum", vec![3, 4], Box::new(|t, x| t.sum(x))),
        ("mean", vec![3, 4], Box::new(|t, x| t.mean(x))),
        ("sum_rows", vec![3, 4], Box::new(|t, x| t.sum_rows(x))),
        ("reshape", vec![3, 4], Box::new(|t, x| t.reshape(x, 2, 6))),
        ("gather_rows", vec![3, 4], Box::new(|t, x| t.gather_rows(x, &[2, 0, 2]))),
        ("scatter_add_rows", vec![3, 4], Box::new(|t, x| t.scatter_add_rows(x, &[1, 1, 0], 2))),
        ("segment_softmax", vec![4, 2], Box::new(|t, x| t.segment_softmax(x, &[0, 1, 0, 0], 2))),
        ("group_sum_cols", vec![3, 4], Box::new(|t, x| t.group_sum_cols(x, 2))),
        ("repeat_cols", vec![3, 2], Box::new(|t, x| t.repeat_cols(x, 3))),
        ("cross_entropy", vec![1, 3], Box::new(|t, x| t.cross_entropy(x, 1))),
        (
            "mask",
            vec![3, 4],
            Box::new(|t, x| t.mask(x, (0..12).map(|i| (i % 3) as f64).collect())),
        ),
        (
            "dropout",
            vec![3, 4],
            Box::new(|t, x| t.dropout(x, 0.3, true, &mut ChaCha8Rng::seed_from_u64(8))),
        ),
        ("add", vec![3, 4], Box::new(|t, x| t.add(x, c(t, &other)?))),
        ("sub.lhs", vec![3, 4], Box::new(|t, x| t.sub(x, c(t, &other)?))),
        ("sub.rhs", vec![3, 4], Box::new(|t, x| t.sub(c(t, &other)?, x))),
        ("mul", vec![3, 4], Box::new(|t, x| t.mul(x, c(t, &other)?))),
        ("add_row.lhs", vec![3, 4], Box::new(|t, x| t.add_row(x, c(t, &row)?))),
        ("add_row.rhs", vec![1, 4], Box::new(|t, r| t.add_row(c(t, &other)?, r))),
        ("mul_row.lhs", vec![3, 4], Box::new(|t, x| t.mul_row(x, c(t, &row)?))),
        ("mul_row.rhs", vec![1, 4], Box::new(|t, r| t.mul_row(c(t, &other)?, r))),
        ("matmul.lhs", vec![3, 4], Box::new(|t, x| t.matmul(x, c(t, &rhs)?))),
        ("matmul.rhs", vec![4, 2], Box::new(|t, b| t.matmul(c(t, &other)?, b))),
        ("concat_rows", vec![3, 4], Box::new(|t, x| t.concat_rows(&[x, c(t, &row)?, x]))),
        ("concat_cols", vec![3, 4], Box::new(|t, x| t.concat_cols(&[x, c(t, &other)?, x]))),
    ];
    ops.into_iter()
        .map(|(name, shape, f)| Ok((name, check_op(&shape, h, f)?)))
        .collect()
}
