mod config;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use graphcheck::bench::{
    ablate, audit_edge_as_node, evaluate, explain, prepare_records, render_ablation, render_table, sidecar_json,
    to_dot,
};
use graphcheck::data::{read_jsonl, read_raw_jsonl, write_jsonl, Label, Sample};
use graphcheck::encoder::LayerKind;
use graphcheck::extraction::{synth_dataset, ExtractionCache, Extractor, HttpProvider, LlmExtractor};
use graphcheck::gradcheck::{check_ops, check_pipeline, PipelineCheck};
use graphcheck::kg::BuildMode;
use graphcheck::trainer::{split_dataset, train, write_history_csv};
use graphcheck::verifier::{GraphCheck, ModelConfig, Vocab};
use serde_json::json;

use config::{parse_assignment, read_config_file, ConfigError, RunConfig};
use manifest::{beside, RunManifest};

#[derive(Parser)]
#[command(name = "graphcheck", version, about = "Graph-augmented claim verification at desk scale")]
struct Cli {
    /// Master seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[arg(long, global = true)]
    ckpt: Option<PathBuf>,
    /// Override one config key, e.g. `--set train.lr=0.01`. Repeatable.
    #[arg(long = "set", global = true, value_parser = parse_assignment, value_name = "KEY=VALUE")]
    set: Vec<(String, String)>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Default)]
struct ModelFlags {
    #[arg(long)]
    layer_kind: Option<String>,
    #[arg(long)]
    build_mode: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    /// Graph-off control: zero soft-prompt rows.
    #[arg(long)]
    no_graph: bool,
    /// Unfreeze the two answer-token rows.
    #[arg(long)]
    calibration: bool,
}

#[derive(Args, Default)]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a labeled synthetic dataset.
    Synth {
        #[arg(long)]
        n: Option<usize>,
    },
    /// Fill in missing claim_kg/doc_kg fields, or extract from one --text.
    Extract {
        #[arg(long)]
        text: Option<String>,
        /// `rules` or `http`.
        #[arg(long)]
        provider: Option<String>,
    },
    /// Build knowledge graphs for every sample.
    BuildGraph {
        #[arg(long)]
        build_mode: Option<String>,
        #[arg(long)]
        dim: Option<usize>,
    },
    /// Split, train the encoder and projector, and save the best checkpoint.
    Train {
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        /// `fail-fast` or `skip` for records without graphs.
        #[arg(long)]
        missing: Option<String>,
        /// Dataset name shown in the report.
        #[arg(long)]
        name: Option<String>,
    },
    /// Layer kind x build mode grid on one split.
    Ablate {
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Export edge attention for samples as DOT and JSON.
    Explain {
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Finite-difference check of every op and the full pipeline.
    Gradcheck {
        #[arg(long, default_value_t = 8)]
        dim: usize,
        #[arg(long, default_value_t = 1e-4)]
        h: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
}

/// Raised when gradcheck runs but exceeds the tolerance.
#[derive(Debug, thiserror::Error)]
#[error("max relative error {0:e} is not below {1:e}")]
struct GradcheckFailed(f64, f64);

fn push<T: ToString>(o: &mut Vec<(String, String)>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        o.push((key.to_string(), v.to_string()));
    }
}

impl ModelFlags {
    fn overrides(&self, o: &mut Vec<(String, String)>) {
        push(o, "encoder.layer_kind", self.layer_kind.as_ref());
        push(o, "graph.build_mode", self.build_mode.as_ref());
        push(o, "features.dim", self.dim);
        if self.no_graph {
            push(o, "model.use_graph", Some(false));
        }
        if self.calibration {
            push(o, "verifier.calibration", Some(true));
        }
    }
}

impl TrainFlags {
    fn overrides(&self, o: &mut Vec<(String, String)>) {
        push(o, "train.epochs", self.epochs);
        push(o, "train.lr", self.lr);
        push(o, "train.batch_size", self.batch_size);
        push(o, "train.patience", self.patience);
    }
}

impl Cli {
    fn run_config(&self) -> Result<RunConfig> {
        let file = match &self.config {
            Some(p) => read_config_file(p)?,
            None => Vec::new(),
        };
        let mut o = Vec::new();
        match &self.cmd {
            Cmd::Synth { n } => push(&mut o, "synth.n", *n),
            Cmd::Extract { provider, .. } => push(&mut o, "extract.provider", provider.as_ref()),
            Cmd::BuildGraph { build_mode, dim } => {
                push(&mut o, "graph.build_mode", build_mode.as_ref());
                push(&mut o, "features.dim", *dim);
            }
            Cmd::Train { model, train } => {
                model.overrides(&mut o);
                train.overrides(&mut o);
            }
            Cmd::Eval { missing, .. } => push(&mut o, "eval.missing", missing.as_ref()),
            Cmd::Ablate { train } => train.overrides(&mut o),
            Cmd::Explain { .. } | Cmd::Gradcheck { .. } => {}
        }
        o.extend(self.set.iter().cloned());
        Ok(RunConfig::resolve(&file, self.seed, &o)?)
    }
}

fn need<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| ConfigError(format!("--{flag} is required")).into())
}

fn distinct(input: &Path, output: &Path) -> Result<()> {
    let canon = |p: &Path| std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
    if canon(input) == canon(output) {
        return Err(ConfigError(format!("refusing to overwrite input {}", input.display())).into());
    }
    Ok(())
}

fn build_extractor(cfg: &RunConfig) -> Result<Extractor> {
    let x = &cfg.extract;
    if x.provider == "rules" {
        return Ok(Extractor::Rules);
    }
    let provider = HttpProvider {
        endpoint: x.endpoint.clone(),
        model: x.model.clone(),
        api_key: std::env::var(&x.api_key_env).ok(),
        timeout: Duration::from_secs(x.timeout_secs),
    };
    let cache = x.cache.as_ref().map(ExtractionCache::new).transpose()?;
    Ok(Extractor::Llm(LlmExtractor::new(Box::new(provider), cache)))
}

fn vocab_of(samples: &[Sample]) -> Vocab {
    Vocab::build(samples.iter().flat_map(|s| [s.claim.as_str(), s.doc.as_str()]))
}

fn run(cli: &Cli) -> Result<()> {
    let mut cfg = cli.run_config()?;
    match &cli.cmd {
        Cmd::Synth { .. } => {
            let out = need(&cli.out, "out")?;
            RunManifest::new("synth", &cfg, vec![], vec![out.into()]).write(&beside(out))?;
            let data = synth_dataset(cfg.synth_n, cfg.synth_seed, &cfg.synth)?;
            write_jsonl(out, &data)?;
            let support = data.iter().filter(|s| s.label == Label::Support).count();
            println!(
                "wrote {} samples ({support} support, {} unsupport) to {}",
                data.len(),
                data.len() - support,
                out.display()
            );
        }
        Cmd::Extract { text, .. } => {
            if let Some(text) = text {
                if let Some(out) = &cli.out {
                    RunManifest::new("extract", &cfg, vec![], vec![out.clone()]).write(&beside(out))?;
                }
                let triples = build_extractor(&cfg)?.extract(text)?;
                let body = serde_json::to_string(&triples)?;
                match &cli.out {
                    Some(out) => std::fs::write(out, body + "\n")?,
                    None => println!("{body}"),
                }
                return Ok(());
            }
            let (data, out) = (need(&cli.data, "data")?, need(&cli.out, "out")?);
            distinct(data, out)?;
            RunManifest::new("extract", &cfg, vec![data.into()], vec![out.into()]).write(&beside(out))?;
            let extractor = build_extractor(&cfg)?;
            let raw = read_raw_jsonl(data)?;
            let filled = raw.iter().filter(|r| r.claim_kg.is_none() || r.doc_kg.is_none()).count();
            let samples = raw.into_iter().map(|r| extractor.complete(r)).collect::<graphcheck::Result<Vec<_>>>()?;
            write_jsonl(out, &samples)?;
            println!("extracted graphs for {filled} of {} records into {}", samples.len(), out.display());
        }
        Cmd::BuildGraph { .. } => {
            let (data, out) = (need(&cli.data, "data")?, need(&cli.out, "out")?);
            distinct(data, out)?;
            let name = RunManifest::new("build-graph", &cfg, vec![data.into()], vec![out.into()]).write(&beside(out))?;
            let samples = read_jsonl(data)?;
            let (mode, features) = (cfg.model.build_mode, cfg.model.features);
            let mut lines = String::new();
            let (mut nodes, mut edges) = (0, 0);
            for (i, s) in samples.iter().enumerate() {
                let cg = graphcheck::kg::build_graph(&s.claim_kg, mode, features.featurizer())?;
                let dg = graphcheck::kg::build_graph(&s.doc_kg, mode, features.featurizer())?;
                nodes += cg.num_nodes() + dg.num_nodes();
                edges += cg.num_edges() + dg.num_edges();
                lines += &serde_json::to_string(&json!({"index": i, "claim_graph": cg, "doc_graph": dg, "manifest": name}))?;
                lines.push('\n');
            }
            std::fs::write(out, lines)?;
            if mode == BuildMode::EdgeAsNode {
                println!("edge-as-node counts audited on {} graphs", audit_edge_as_node(&samples, &features)?);
            }
            println!("{} samples, {nodes} nodes, {edges} edges ({mode}) -> {}", samples.len(), out.display());
        }
        Cmd::Train { .. } => {
            let (data, out) = (need(&cli.data, "data")?, need(&cli.out, "out")?);
            let ckpt = cli.ckpt.clone().unwrap_or_else(|| out.join("best"));
            RunManifest::new("train", &cfg, vec![data.into()], vec![out.into(), ckpt.clone()])
                .write(&out.join("manifest.json"))?;
            let samples = read_jsonl(data)?;
            let (tr, va, te) = split_dataset(&samples, &cfg.split)?;
            for (name, part) in [("train", &tr), ("val", &va), ("test", &te)] {
                write_jsonl(&out.join(format!("{name}.jsonl")), part)?;
            }
            let mut model = GraphCheck::new(cfg.model.clone(), vocab_of(&tr))?;
            let prep = |v: &[Sample]| v.iter().map(|s| model.prepare(s)).collect::<graphcheck::Result<Vec<_>>>();
            let (ptr, pva, pte) = (prep(&tr)?, prep(&va)?, prep(&te)?);
            log::info!("training on {} samples, validating on {}", ptr.len(), pva.len());
            let outcome = train(&mut model, &ptr, &pva, &cfg.train)?;
            model.save(&ckpt)?;
            write_history_csv(&out.join("history.csv"), &outcome.history)?;
            let summary = json!({"manifest": "manifest.json", "outcome": outcome});
            std::fs::write(out.join("outcome.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
            let (mut report, timing) = evaluate(&model, "test", &pte, 0)?;
            report.manifest = Some("manifest.json".into());
            std::fs::write(out.join("test_report.json"), report.to_json()?)?;
            println!(
                "best epoch {} of {} (val bacc {:.4}); checkpoint in {}",
                outcome.best_epoch,
                outcome.history.len(),
                outcome.best_val_bacc,
                ckpt.display()
            );
            print!("{}", render_table(&[(&report, Some(timing))]));
        }
        Cmd::Eval { name, .. } => {
            let (ckpt, data, out) = (need(&cli.ckpt, "ckpt")?, need(&cli.data, "data")?, need(&cli.out, "out")?);
            distinct(data, out)?;
            let model_json = std::fs::read_to_string(ckpt.join("model.json"))
                .with_context(|| format!("reading checkpoint {}", ckpt.display()))?;
            cfg.model = serde_json::from_str::<ModelConfig>(&model_json)?;
            let manifest =
                RunManifest::new("eval", &cfg, vec![ckpt.into(), data.into()], vec![out.into()]).write(&beside(out))?;
            let model = GraphCheck::load(ckpt)?;
            let (prepared, skipped) = prepare_records(&model, read_raw_jsonl(data)?, cfg.missing)?;
            let dataset = name.clone().unwrap_or_else(|| {
                data.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
            });
            let (mut report, timing) = evaluate(&model, &dataset, &prepared, skipped)?;
            report.manifest = Some(manifest);
            std::fs::write(out, report.to_json()?)?;
            print!("{}", render_table(&[(&report, Some(timing))]));
        }
        Cmd::Ablate { .. } => {
            let (data, out) = (need(&cli.data, "data")?, need(&cli.out, "out")?);
            RunManifest::new("ablate", &cfg, vec![data.into()], vec![out.into()]).write(&out.join("manifest.json"))?;
            let samples = read_jsonl(data)?;
            if cfg.ablate.build_modes.contains(&BuildMode::EdgeAsNode) {
                let n = audit_edge_as_node(&samples, &cfg.model.features)?;
                println!("edge-as-node counts audited on {n} graphs");
            }
            let (tr, va, te) = split_dataset(&samples, &cfg.split)?;
            let rows = ablate(&cfg.model, &vocab_of(&tr), (&tr, &va, &te), &cfg.train, &cfg.ablate)?;
            let table = render_ablation(&rows);
            std::fs::write(out.join("ablation.txt"), &table)?;
            let body = json!({"manifest": "manifest.json", "rows": rows});
            std::fs::write(out.join("ablation.json"), serde_json::to_string_pretty(&body)? + "\n")?;
            print!("{table}");
        }
        Cmd::Explain { index, count } => {
            let (ckpt, data, out) = (need(&cli.ckpt, "ckpt")?, need(&cli.data, "data")?, need(&cli.out, "out")?);
            RunManifest::new("explain", &cfg, vec![ckpt.into(), data.into()], vec![out.into()])
                .write(&out.join("manifest.json"))?;
            let model = GraphCheck::load(ckpt)?;
            let samples = read_jsonl(data)?;
            if *index >= samples.len() {
                return Err(ConfigError(format!("--index {index} but the dataset has {} samples", samples.len())).into());
            }
            for (i, s) in samples.iter().enumerate().skip(*index).take(*count) {
                let p = model.prepare(s)?;
                let x = explain(&model, &p)?;
                std::fs::write(out.join(format!("explain_{i}.dot")), to_dot(&x, &p.claim_graph, &p.doc_graph))?;
                std::fs::write(out.join(format!("explain_{i}.json")), sidecar_json(&x)?)?;
                let top = |g: &graphcheck::bench::GraphExplanation| {
                    g.top()
                        .map(|e| format!("({}, {}, {})", e.source, e.relation, e.target))
                        .unwrap_or_else(|| "-".into())
                };
                println!(
                    "sample {i}: {} (gold {}), top claim edge {}, top doc edge {}",
                    x.label,
                    s.label,
                    top(&x.claim),
                    top(&x.doc)
                );
            }
        }
        Cmd::Gradcheck { dim, h, tol } => {
            if let Some(out) = &cli.out {
                RunManifest::new("gradcheck", &cfg, vec![], vec![out.clone()]).write(&beside(out))?;
            }
            let ops = check_ops(*h)?;
            let mut worst = ops.iter().map(|(_, e)| *e).fold(0.0, f64::max);
            println!("ops: {} checked, max relative error {worst:.3e}", ops.len());
            let mut variants = Vec::new();
            for layer_kind in [LayerKind::Gat, LayerKind::GraphTransformer] {
                for build_mode in [BuildMode::EdgeAsInput, BuildMode::EdgeAsNode] {
                    for calibration in [false, true] {
                        let c = PipelineCheck {
                            dim: *dim,
                            layer_kind,
                            build_mode,
                            calibration,
                            seed: cfg.seed,
                        };
                        let r = check_pipeline(&c, *h)?;
                        let err = r.max_rel_err();
                        worst = worst.max(err);
                        println!(
                            "pipeline {layer_kind} {build_mode} calibration={calibration}: {} params, max relative error {err:.3e}",
                            r.params.len()
                        );
                        variants.push(json!({"check": c, "report": r}));
                    }
                }
            }
            println!("max relative error: {worst:e}");
            if let Some(out) = &cli.out {
                let body = json!({"manifest": beside(out).file_name().map(|n| n.to_string_lossy().into_owned()),
                    "h": h, "tol": tol, "ops": ops, "pipeline": variants, "max_rel_err": worst});
                std::fs::write(out, serde_json::to_string_pretty(&body)? + "\n")?;
            }
            if worst >= *tol {
                return Err(GradcheckFailed(worst, *tol).into());
            }
        }
    }
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<ConfigError>().is_some() {
        return 1;
    }
    match e.downcast_ref::<graphcheck::Error>() {
        Some(g) if g.is_validation() => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
