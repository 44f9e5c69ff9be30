use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use hopreader::config::RunConfig;
use hopreader::graph::{build_graph, load_sidecar, Sidecar};
use hopreader::harness::{self, predictions_json, TrainOptions};
use hopreader::text::{gen_synthetic, load_embeddings, load_qangaroo, save_qangaroo, tokenize_doc, SynthConfig};
use hopreader::viz::{self, VizOptions};
use hopreader::{Model, Sample};

/// Environment variable that, when set, roots every relative output path.
const OUT_ENV: &str = "HOPREADER_OUT";

#[derive(Parser)]
#[command(name = "hopreader", version, about = "Multi-hop reading comprehension over reasoning graphs")]
struct Cli {
    #[command(flatten)]
    run: RunArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration (flat object of settings).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one setting, e.g. `--set hops=3`; repeatable, applied after --config.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads for data-parallel work; results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic chain-following corpus.
    Synth {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        count: usize,
        /// Documents on the chain from subject to answer.
        #[arg(long, default_value_t = 2)]
        hops: usize,
        #[arg(long, default_value_t = 5)]
        candidates: usize,
        /// Size of the entity name pool.
        #[arg(long, default_value_t = 2000)]
        vocab: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build and serialize the reasoning graph of one sample.
    BuildGraph {
        #[arg(long)]
        data: PathBuf,
        /// Sample id, id suffix, or zero-based index.
        #[arg(long)]
        sample: String,
        /// Reasoning-span sidecar; overrides the configured one.
        #[arg(long)]
        sidecar: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes best.ckpt, metrics.jsonl and config.json.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Development set for early stopping and checkpoint selection.
        #[arg(long)]
        dev: Option<PathBuf>,
        /// Further corpora whose tokens join the vocabulary.
        #[arg(long = "vocab-from")]
        vocab_from: Vec<PathBuf>,
        /// Output directory.
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        sidecar: Option<PathBuf>,
        /// Full report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
        /// `{sample id: predicted candidate}` JSON.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Train and compare ablation variants against the full model.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, value_enum, default_value_t = Plan::Components)]
        plan: Plan,
        /// Table as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render one sample as Graphviz and HTML under OUT/<sample id>/.
    Viz {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Sample id, id suffix, or zero-based index.
        #[arg(long)]
        sample: String,
        #[arg(long)]
        sidecar: Option<PathBuf>,
        /// Also draw `complete` edges.
        #[arg(long)]
        show_complete: bool,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the finite-difference gradient suite and print the worst error per operation.
    GradCheck {
        #[arg(long, default_value_t = 10)]
        seeds: usize,
        /// Seeds for the slower end-to-end model check.
        #[arg(long, default_value_t = 3)]
        model_seeds: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Plan {
    /// Full model, graph off, and each node kind isolated.
    Components,
    /// Hop counts 3-6, then gamma 0, 0.5, 1, 1.5.
    HopsGamma,
    /// Every hop count against every gamma.
    HopsGammaCross,
}

fn output(path: &Path) -> PathBuf {
    match std::env::var_os(OUT_ENV) {
        Some(root) if path.is_relative() => Path::new(&root).join(path),
        _ => path.to_path_buf(),
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<()> {
    let path = output(path);
    ensure_parent(&path)?;
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run_config(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for s in &args.set {
        cfg.set(s)?;
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn select<'a>(samples: &'a [Sample], key: &str) -> Result<&'a Sample> {
    if let Some(s) = samples.iter().find(|s| s.id == key) {
        return Ok(s);
    }
    let suffix = format!("_{key}");
    if let Some(s) = samples.iter().find(|s| s.id.ends_with(&suffix)) {
        return Ok(s);
    }
    match key.parse::<usize>().ok().and_then(|i| samples.get(i)) {
        Some(s) => Ok(s),
        None => bail!("no sample `{key}` among {} samples", samples.len()),
    }
}

fn sidecar(flag: &Option<PathBuf>, cfg: &RunConfig) -> Result<Option<Sidecar>> {
    Ok(match flag.as_ref().or(cfg.sidecar.as_ref()) {
        Some(p) => Some(load_sidecar(p)?),
        None => None,
    })
}

fn print_report(report: &harness::EvalReport) {
    println!("accuracy {:.4} over {} samples", report.accuracy, report.scored);
    if let Some(loss) = report.loss {
        println!("loss {loss:.4}");
    }
    for b in &report.bins {
        println!("  docs {:>6}: {:.4} ({})", b.label, b.accuracy, b.count);
    }
    for c in &report.categories {
        println!("  {}: {:.4} ({})", c.label, c.accuracy, c.count);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            seed,
            count,
            hops,
            candidates,
            vocab,
            out,
        } => {
            let samples = gen_synthetic(&SynthConfig {
                seed,
                count,
                hop_length: hops,
                n_candidates: candidates,
                vocab_size: vocab,
            })?;
            let path = output(&out);
            ensure_parent(&path)?;
            save_qangaroo(&path, &samples)?;
            println!("wrote {} samples to {}", samples.len(), path.display());
        }
        Command::BuildGraph {
            data,
            sample,
            sidecar: sc,
            out,
        } => {
            let cfg = run_config(&cli.run)?;
            let samples = load_qangaroo(&data)?;
            let s = select(&samples, &sample)?;
            let sc = sidecar(&sc, &cfg)?;
            let tokens: Vec<_> = s.documents.iter().enumerate().map(|(d, t)| tokenize_doc(t, d)).collect();
            let graph = build_graph(s, &tokens, sc.as_ref().and_then(|x| x.for_sample(&s.id)), &cfg.graph_options())?;
            write(&out, &graph.to_json())?;
        }
        Command::Train {
            data,
            dev,
            vocab_from,
            out,
        } => {
            let cfg = run_config(&cli.run)?;
            let train = load_qangaroo(&data)?;
            let dev = match dev {
                Some(p) => load_qangaroo(p)?,
                None => Vec::new(),
            };
            let mut extra = Vec::new();
            for p in &vocab_from {
                extra.extend(load_qangaroo(p)?);
            }
            let pretrained = match &cfg.embeddings {
                Some(p) => Some(load_embeddings(p, cfg.word_dim, cfg.seed)?),
                None => None,
            };
            let sc = sidecar(&None, &cfg)?;
            let dir = output(&out);
            std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            std::fs::write(dir.join("config.json"), cfg.to_json())?;
            let opts = TrainOptions {
                pretrained: pretrained.as_ref(),
                sidecar: sc.as_ref(),
                vocab_extra: &extra,
                log_path: Some(dir.join("metrics.jsonl")),
                checkpoint_path: Some(dir.join("best.ckpt")),
            };
            let outcome = harness::train(&cfg, &train, &dev, &opts)?;
            let last = outcome.log.last().expect("at least one epoch");
            println!(
                "trained {} epochs (best {}{}); final train acc {:.4}",
                outcome.log.len(),
                outcome.best_epoch,
                if outcome.stopped_early { ", stopped early" } else { "" },
                last.train_acc
            );
            println!("wrote {}", dir.join("best.ckpt").display());
            println!("wrote {}", dir.join("metrics.jsonl").display());
        }
        Command::Eval {
            checkpoint,
            data,
            sidecar: sc,
            report,
            predictions,
        } => {
            let model = Model::load(&checkpoint)?;
            let samples = load_qangaroo(&data)?;
            let sc = sidecar(&sc, &model.config)?;
            let workers = cli.run.workers.unwrap_or(1);
            let r = harness::evaluate(&model, &samples, sc.as_ref(), workers)?;
            print_report(&r);
            if let Some(p) = report {
                write(&p, &serde_json::to_string_pretty(&r)?)?;
            }
            if let Some(p) = predictions {
                write(&p, &predictions_json(&r))?;
            }
        }
        Command::Ablate {
            data,
            dev,
            test,
            plan,
            out,
        } => {
            let cfg = run_config(&cli.run)?;
            let train = load_qangaroo(&data)?;
            let dev = match dev {
                Some(p) => load_qangaroo(p)?,
                None => Vec::new(),
            };
            let test = load_qangaroo(&test)?;
            let variants = match plan {
                Plan::Components => harness::gate_plan(&cfg),
                Plan::HopsGamma => harness::hop_gamma_plan(&cfg, false),
                Plan::HopsGammaCross => harness::hop_gamma_plan(&cfg, true),
            };
            let table = harness::ablate(&cfg, &variants, &train, &dev, &test)?;
            print!("{}", table.to_text());
            if let Some(p) = out {
                write(&p, &serde_json::to_string_pretty(&table)?)?;
            }
        }
        Command::Viz {
            checkpoint,
            data,
            sample,
            sidecar: sc,
            show_complete,
            out,
        } => {
            let model = Model::load(&checkpoint)?;
            let samples = load_qangaroo(&data)?;
            let s = select(&samples, &sample)?;
            let sc = sidecar(&sc, &model.config)?;
            let prep = model.prepare(s, sc.as_ref().and_then(|x| x.for_sample(&s.id)))?;
            let snap = viz::snapshot(&model, &prep, s, VizOptions { show_complete })?;
            let (dot, html) = viz::write_outputs(&output(&out), s, &snap)?;
            println!("wrote {}", dot.display());
            println!("wrote {}", html.display());
        }
        Command::GradCheck { seeds, model_seeds } => {
            let entries = hopreader::gradsuite::run_suite(seeds, model_seeds)?;
            let mut failed = 0;
            for e in &entries {
                let status = if e.passed() { "ok" } else { "FAIL" };
                println!(
                    "{:<14} max rel error {:.3e}  ({} coordinates, {} seeds)  {status}",
                    e.op, e.max_rel_error, e.coordinates, e.seeds
                );
                failed += usize::from(!e.passed());
            }
            if failed > 0 {
                bail!("{failed} operation(s) exceeded relative error {:e}", hopreader::gradsuite::TOLERANCE);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
