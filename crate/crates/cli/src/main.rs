use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use apc_core::bench::run_bench;
use apc_core::data::Dataset;
use apc_core::eval::{
    line_plot, ood_histogram, ood_table, robustness_sweep, sweep_table, Corruption, EvalModel, Metric, Series,
    SweepConfig, SweepData,
};
use apc_core::inference::sample_joint;
use apc_core::io::{
    load_checkpoint, netpbm_bytes, save_apc, save_vae, set_field, tile_grid, write_atomic, Channels, Checkpoint,
    ExperimentConfig,
};
use apc_core::model::{output_shape, Apc};
use apc_core::nn::{OutputShape, Vae};
use apc_core::training::{distill, train_apc, train_vae};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Train and evaluate autoencoding probabilistic circuits.
#[derive(Parser, Debug)]
#[command(name = "apc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Experiment configuration in TOML.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the model seed and the training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `train.iterations`.
    #[arg(long)]
    iterations: Option<usize>,
    /// Sets any config field, e.g. `--set train.batch_size=64`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train an APC end to end.
    Train(Common),
    /// Train the VAE baseline.
    TrainVae(Common),
    /// Distill a trained VAE into an APC without data.
    Distill {
        #[command(flatten)]
        common: Common,
        /// VAE checkpoint used as teacher.
        #[arg(long)]
        teacher: PathBuf,
    },
    /// Reconstruction and downstream accuracy under missing data.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// `mcar:P`, `mar:PATTERN:SEVERITY`, or `sweep` for the configured grid.
        #[arg(long, default_value = "sweep")]
        corruption: String,
    },
    /// Draw joint samples from the circuit and decode their embeddings.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 64)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Score in- and out-of-distribution inputs by embedding likelihood.
    Ood {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 30)]
        bins: usize,
    },
    /// Compare gradient estimators on a single sum unit.
    SimpleBench {
        /// Optional experiment configuration; its `[bench]` section is used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Check a configuration, the circuit it builds, and optionally a checkpoint.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn split_override(o: &str) -> Result<(&str, &str)> {
    let (k, v) = o
        .split_once('=')
        .ok_or_else(|| anyhow!("override '{o}' is not KEY=VALUE"))?;
    Ok((k.trim(), v.trim()))
}

fn apply_overrides(cfg: &mut ExperimentConfig, overrides: &[String]) -> Result<()> {
    for o in overrides {
        let (k, v) = split_override(o)?;
        cfg.set(k, v)?;
    }
    Ok(())
}

/// The configuration with flags applied, and the directory relative data
/// paths resolve against.
fn load_config(c: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    apply_overrides(&mut cfg, &c.overrides)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
        cfg.train.seed = s;
    }
    if let Some(n) = c.iterations {
        cfg.train.iterations = n;
    }
    cfg.validate()?;
    let base = c.config.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((cfg, base))
}

fn save_effective_config(out: &Path, cfg: &ExperimentConfig) -> Result<()> {
    write_atomic(&out.join("config.toml"), cfg.to_toml()?.as_bytes())?;
    Ok(())
}

fn new_apc(cfg: &ExperimentConfig, data: &Dataset) -> Result<Apc<f64>> {
    let m = &cfg.model;
    Ok(Apc::new(
        &m.builder,
        m.decoder.clone(),
        output_shape(data.kind, data.cols()),
        cfg.seed,
    )?)
}

fn new_vae(cfg: &ExperimentConfig, data: &Dataset) -> Result<Vae<f64>> {
    let m = &cfg.model;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok(Vae::new(
        &m.encoder,
        m.decoder.clone(),
        m.embedding_dim,
        output_shape(data.kind, data.cols()),
        &mut rng,
    )?)
}

fn summarize(what: &str, metrics: &[apc_core::training::StepMetrics], out: &Path) {
    if let Some(last) = metrics.last() {
        println!(
            "{what}: {} steps, final rec={:.6} kld={:.6} nll={:.6} total={:.6}",
            metrics.len(),
            last.rec,
            last.kld,
            last.nll,
            last.total
        );
    }
    println!("wrote {}", out.display());
}

fn cmd_train(c: &Common) -> Result<()> {
    let (cfg, base) = load_config(c)?;
    let data = cfg.data.train.load(&base).context("loading training data")?;
    let mut model = new_apc(&cfg, &data)?;
    let mut log = Vec::new();
    let report = train_apc(&mut model, &data, &cfg.train, Some(&mut log))?;
    write_atomic(&c.out.join("metrics.jsonl"), &log)?;
    save_apc(&c.out.join("model.ckpt"), &model, &cfg.model.builder)?;
    save_effective_config(&c.out, &cfg)?;
    summarize("train", &report.metrics, &c.out);
    Ok(())
}

fn cmd_train_vae(c: &Common) -> Result<()> {
    let (cfg, base) = load_config(c)?;
    let data = cfg.data.train.load(&base).context("loading training data")?;
    let mut vae = new_vae(&cfg, &data)?;
    let mut log = Vec::new();
    let report = train_vae(&mut vae, &data, &cfg.train, Some(&mut log))?;
    write_atomic(&c.out.join("metrics.jsonl"), &log)?;
    save_vae(&c.out.join("vae.ckpt"), &vae)?;
    save_effective_config(&c.out, &cfg)?;
    summarize("train-vae", &report.metrics, &c.out);
    Ok(())
}

fn cmd_distill(c: &Common, teacher: &Path) -> Result<()> {
    let (cfg, base) = load_config(c)?;
    let Checkpoint::Vae(teacher) = load_checkpoint::<f64>(teacher)? else {
        bail!("the teacher checkpoint must hold a VAE");
    };
    let data = cfg
        .data
        .train
        .load(&base)
        .context("loading training data for its layout")?;
    let mut student = new_apc(&cfg, &data)?;
    let mut log = Vec::new();
    let report = distill(&teacher, &mut student, data.kind, &cfg.train, Some(&mut log))?;
    write_atomic(&c.out.join("metrics.jsonl"), &log)?;
    save_apc(&c.out.join("model.ckpt"), &student, &cfg.model.builder)?;
    save_effective_config(&c.out, &cfg)?;
    if report.skipped > 0 {
        eprintln!("skipped {} steps with non-finite teacher output", report.skipped);
    }
    summarize("distill", &report.metrics, &c.out);
    Ok(())
}

fn sweep_config(cfg: &ExperimentConfig, corruption: &str) -> Result<SweepConfig> {
    if corruption == "sweep" {
        return Ok(cfg.eval.clone());
    }
    let c = Corruption::parse(corruption)?;
    Ok(SweepConfig {
        corruption: c,
        levels: vec![c.level()],
        ..cfg.eval.clone()
    })
}

fn cmd_eval(c: &Common, checkpoint: &Path, corruption: &str) -> Result<()> {
    let (cfg, base) = load_config(c)?;
    let sweep = sweep_config(&cfg, corruption)?;
    let test = cfg
        .data
        .test
        .as_ref()
        .ok_or_else(|| anyhow!("evaluation needs data.test"))?
        .load(&base)
        .context("loading test data")?;
    let needs_train = sweep.metrics.contains(&Metric::Accuracy);
    let train = if needs_train {
        Some(cfg.data.train.load(&base).context("loading training data")?)
    } else {
        None
    };
    let ck = load_checkpoint::<f64>(checkpoint)?;
    let model = match &ck {
        Checkpoint::Apc(m) => EvalModel::Apc(m),
        Checkpoint::Vae(v) => EvalModel::Vae(v),
    };
    let data = SweepData {
        test: &test,
        train: train.as_ref(),
    };
    let result = robustness_sweep(model, data, &sweep)?;
    write_atomic(&c.out.join("eval.csv"), sweep_table(&result).as_bytes())?;
    write_atomic(
        &c.out.join("eval.json"),
        serde_json::to_string_pretty(&result)?.as_bytes(),
    )?;
    let grid = result.grid();
    for m in &sweep.metrics {
        let y = result.curve(*m).expect("metric was evaluated");
        println!(
            "{}: {}",
            m.name(),
            y.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(" ")
        );
        if grid.len() > 1 {
            let svg = line_plot(
                &format!("{} under increasing corruption", result.model),
                "corruption level",
                m.name(),
                &[Series {
                    name: &result.model,
                    x: &grid,
                    y: &y,
                }],
            );
            write_atomic(&c.out.join(format!("eval-{}.svg", m.name())), svg.as_bytes())?;
        }
    }
    println!("wrote {}", c.out.display());
    Ok(())
}

fn cmd_sample(checkpoint: &Path, count: usize, seed: u64, out: &Path) -> Result<()> {
    let Checkpoint::Apc(model) = load_checkpoint::<f64>(checkpoint)? else {
        bail!("sampling needs an APC checkpoint");
    };
    if count == 0 {
        bail!("--count must be positive");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x, z) = sample_joint(&model.circuit, &mut rng, count);
    let decoded = model.decoder.decode_values(&z)?;
    let columns = (count as f64).sqrt().ceil() as usize;
    match model.decoder.output {
        OutputShape::Image { height, width } => {
            let max = x.iter().copied().fold(1.0f64, f64::max);
            let circuit_x: Vec<f64> = x.iter().map(|v| v / max).collect();
            for (name, imgs) in [("decoded", &decoded), ("circuit", &circuit_x)] {
                let (g, h, w) = tile_grid(imgs, height, width, Channels::Gray, columns)?;
                write_atomic(
                    &out.join(format!("samples-{name}.pgm")),
                    &netpbm_bytes(&g, h, w, Channels::Gray)?,
                )?;
            }
        }
        OutputShape::Flat { size } => {
            for (name, rows) in [("decoded", &decoded), ("circuit", &x)] {
                let text: String = rows
                    .chunks(size)
                    .map(|r| r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",") + "\n")
                    .collect();
                write_atomic(&out.join(format!("samples-{name}.csv")), text.as_bytes())?;
            }
        }
    }
    println!("wrote {count} samples to {}", out.display());
    Ok(())
}

fn cmd_ood(c: &Common, checkpoint: &Path, bins: usize) -> Result<()> {
    let (cfg, base) = load_config(c)?;
    let Checkpoint::Apc(model) = load_checkpoint::<f64>(checkpoint)? else {
        bail!("out-of-distribution scoring needs an APC checkpoint");
    };
    let load = |src: &Option<apc_core::io::DataSource>, what: &str| -> Result<Dataset> {
        src.as_ref()
            .ok_or_else(|| anyhow!("ood needs data.{what}"))?
            .load(&base)
            .with_context(|| format!("loading data.{what}"))
    };
    let inside = load(&cfg.data.test, "test")?;
    let outside = load(&cfg.data.ood, "ood")?;
    if outside.cols() != inside.cols() {
        bail!("ood data has {} columns, test data {}", outside.cols(), inside.cols());
    }
    let report = ood_histogram(&model, &inside, &outside, cfg.eval.embedding, bins, cfg.seed)?;
    write_atomic(&c.out.join("ood.csv"), ood_table(&report).as_bytes())?;
    write_atomic(
        &c.out.join("ood.json"),
        serde_json::to_string_pretty(&report)?.as_bytes(),
    )?;
    println!("auroc: {:.4}", report.auroc);
    println!("wrote {}", c.out.display());
    Ok(())
}

fn cmd_simple_bench(config: Option<&Path>, overrides: &[String], out: &Path) -> Result<()> {
    let mut bench = match config {
        Some(p) => ExperimentConfig::load(p)?.bench,
        None => Default::default(),
    };
    for o in overrides {
        let (k, v) = split_override(o)?;
        set_field(&mut bench, k.strip_prefix("bench.").unwrap_or(k), v)?;
    }
    bench.validate()?;
    let report = run_bench(&bench)?;
    write_atomic(&out.join("bench-summary.csv"), report.summary_table().as_bytes())?;
    write_atomic(
        &out.join("bench-trajectories.csv"),
        report.trajectory_table().as_bytes(),
    )?;
    for s in report.summary() {
        println!(
            "dim={} {}: final KLD {:.5} ± {:.5}",
            s.dim,
            s.estimator.name(),
            s.mean,
            s.std
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_validate(config: &Path, checkpoint: Option<&Path>) -> Result<bool> {
    let cfg = ExperimentConfig::load(config)?;
    let circuit = apc_core::model::build_structure::<f64>(&cfg.model.builder, cfg.seed)?;
    let report = circuit.validate();
    println!(
        "circuit: {} units, {} data variables, {} embedding variables: {report}",
        circuit.num_units(),
        circuit.num_data(),
        circuit.num_embedding()
    );
    if let Some(p) = checkpoint {
        let ck = load_checkpoint::<f64>(p)?;
        println!("checkpoint: {} model, checksums verified", ck.kind());
    }
    Ok(report.is_valid())
}

fn run(cli: Cli) -> Result<bool> {
    match &cli.command {
        Command::Train(c) => cmd_train(c)?,
        Command::TrainVae(c) => cmd_train_vae(c)?,
        Command::Distill { common, teacher } => cmd_distill(common, teacher)?,
        Command::Eval {
            common,
            checkpoint,
            corruption,
        } => cmd_eval(common, checkpoint, corruption)?,
        Command::Sample {
            checkpoint,
            count,
            seed,
            out,
        } => cmd_sample(checkpoint, *count, *seed, out)?,
        Command::Ood {
            common,
            checkpoint,
            bins,
        } => cmd_ood(common, checkpoint, *bins)?,
        Command::SimpleBench { config, overrides, out } => cmd_simple_bench(config.as_deref(), overrides, out)?,
        Command::Validate { config, checkpoint } => return cmd_validate(config, checkpoint.as_deref()),
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
