//! `dlgsal`: data generation, training, evaluation, inference, self-checks,
//! benchmarking and ablations for the dual local graph saliency model.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use dlg_core::ablation::{run_suite, RunCache, Suite};
use dlg_core::checks::{
    gradcheck_model_config, gradcheck_options, gradcheck_sample, model_gradcheck, oracle_suite,
};
use dlg_core::config::RunConfig;
use dlg_core::data::{generate_dataset, pnm, DatasetManifest, LightFieldSample, Split};
use dlg_core::dlg::{audit_complexity, fitted_slope, write_audit_csv};
use dlg_core::metrics::{report_csv, report_table};
use dlg_core::tensor::kernels::bilinear_forward;
use dlg_core::trainer::{prepare, Trainer};
use dlg_core::Tensor;

const ORACLE_TOL: f64 = 1e-5;
const GRADCHECK_TOL: f64 = 1e-3;

#[derive(Parser)]
#[command(
    name = "dlgsal",
    version,
    about = "Light-field saliency with dual local graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Plain-text key=value configuration file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory. For gen-data this is the dataset root (default: data.root).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Run seed; overrides the `seed` key.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic focal-stack dataset with train/test splits.
    GenData(Common),
    /// Train a model on the training split; writes checkpoint.dlgt and loss_curve.csv.
    Train(Common),
    /// Score a checkpoint on `eval.split`; writes metrics.csv.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to load (default: <out>/checkpoint.dlgt).
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Write saliency maps of `eval.split` as PGM files under <out>/maps.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Also write the side map of every reciprocative step (<id>_t<k>.pgm).
        #[arg(long)]
        steps_out: bool,
    },
    /// Fused DLG kernels vs the dense oracle, then a full-model gradient check.
    Check {
        #[command(flatten)]
        common: Common,
        /// Number of random oracle instances.
        #[arg(long, default_value_t = 50)]
        instances: usize,
    },
    /// Edge counts and DLG forward timings over `bench.sizes`; writes audit.csv.
    Bench(Common),
    /// Run ablation suites; writes ablation_<suite>.csv.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// components, dlg_settings, recip_steps or all.
        #[arg(long, default_value = "all")]
        suite: String,
    },
}

/// Bad invocation or configuration; exits with status 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn load_config(c: &Common) -> anyhow::Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(path) => {
            if !path.is_file() {
                return Err(usage(format!("config file not found: {}", path.display())));
            }
            RunConfig::load(path).map_err(|e| usage(e.to_string()))?
        }
        None => RunConfig::default(),
    };
    for kv in &c.set {
        cfg.set_override(kv).map_err(|e| usage(e.to_string()))?;
    }
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn out_dir(c: &Common) -> anyhow::Result<PathBuf> {
    let dir = c.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn echo(cfg: &RunConfig, dir: &Path) -> anyhow::Result<()> {
    cfg.write(&dir.join("config.txt"))?;
    Ok(())
}

fn load_split(
    cfg: &RunConfig,
    split: Split,
) -> anyhow::Result<(Vec<String>, Vec<LightFieldSample>)> {
    let manifest = DatasetManifest::load(&cfg.data_root).with_context(|| {
        format!(
            "loading dataset {} (run gen-data first)",
            cfg.data_root.display()
        )
    })?;
    let ids = manifest
        .ids(split)
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    if ids.is_empty() {
        bail!("{} has no {split} samples", cfg.data_root.display());
    }
    let samples = prepare(manifest.load_split(split)?, cfg.resize)?;
    Ok((ids, samples))
}

fn load_trainer(
    cfg: &RunConfig,
    dir: &Path,
    checkpoint: Option<PathBuf>,
) -> anyhow::Result<Trainer> {
    let path = checkpoint.unwrap_or_else(|| dir.join("checkpoint.dlgt"));
    Trainer::load(&cfg.model, &cfg.train, cfg.seed, &path)
        .with_context(|| format!("loading {}", path.display()))
}

fn gen_data(c: &Common) -> anyhow::Result<ExitCode> {
    let mut cfg = load_config(c)?;
    if let Some(root) = &c.out {
        cfg.data_root = root.clone();
    }
    let manifest = generate_dataset(&cfg.data_root, &cfg.data, cfg.seed)?;
    echo(&cfg, &cfg.data_root)?;
    println!(
        "wrote {} samples ({} train, {} test) to {}",
        manifest.entries.len(),
        manifest.ids(Split::Train).len(),
        manifest.ids(Split::Test).len(),
        cfg.data_root.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn train(c: &Common) -> anyhow::Result<ExitCode> {
    let cfg = load_config(c)?;
    let dir = out_dir(c)?;
    echo(&cfg, &dir)?;
    let (_, samples) = load_split(&cfg, Split::Train)?;
    let mut trainer = Trainer::new(&cfg.model, &cfg.train, cfg.seed)?;
    let t0 = Instant::now();
    let curve = trainer.train(&samples, Some(&dir))?;
    let last = curve.last().map_or(f64::NAN, |r| r.total);
    println!(
        "trained {} steps in {:.1}s, final loss {last:.5}; checkpoint {}",
        trainer.step(),
        t0.elapsed().as_secs_f64(),
        dir.join("checkpoint.dlgt").display()
    );
    Ok(ExitCode::SUCCESS)
}

fn eval(c: &Common, checkpoint: Option<PathBuf>) -> anyhow::Result<ExitCode> {
    let cfg = load_config(c)?;
    let dir = out_dir(c)?;
    echo(&cfg, &dir)?;
    let trainer = load_trainer(&cfg, &dir, checkpoint)?;
    let (_, samples) = load_split(&cfg, cfg.eval_split)?;
    let result = trainer.evaluate(&samples)?.finish()?;
    let rows = vec![(cfg.eval_split.to_string(), result)];
    let path = dir.join("metrics.csv");
    fs::write(&path, report_csv(&rows)).with_context(|| format!("writing {}", path.display()))?;
    print!("{}", report_table(&rows));
    Ok(ExitCode::SUCCESS)
}

/// `[1,H,W]` image of a `[.., h, w]` map, bilinearly resized to `(h, w)`.
fn plane(map: &Tensor, h: usize, w: usize) -> anyhow::Result<Tensor> {
    let s = map.shape();
    let (mh, mw) = (s[s.len() - 2], s[s.len() - 1]);
    let data = if (mh, mw) == (h, w) {
        map.data().to_vec()
    } else {
        bilinear_forward(1, mh, mw, h, w, map.data())
    };
    Ok(Tensor::new(&[1, h, w], data)?)
}

fn infer(c: &Common, checkpoint: Option<PathBuf>, steps_out: bool) -> anyhow::Result<ExitCode> {
    let cfg = load_config(c)?;
    let dir = out_dir(c)?;
    echo(&cfg, &dir)?;
    let trainer = load_trainer(&cfg, &dir, checkpoint)?;
    let (ids, samples) = load_split(&cfg, cfg.eval_split)?;
    let maps = dir.join("maps");
    fs::create_dir_all(&maps).with_context(|| format!("creating {}", maps.display()))?;
    let mut written = 0;
    for (id, sample) in ids.iter().zip(&samples) {
        let (h, w) = (sample.height(), sample.width());
        let pred = trainer.predict(sample)?;
        pnm::write(
            &maps.join(format!("{id}.pgm")),
            &plane(&pred.final_map, h, w)?,
        )?;
        written += 1;
        if steps_out {
            for (t, side) in pred.sides.iter().enumerate() {
                pnm::write(
                    &maps.join(format!("{id}_t{}.pgm", t + 1)),
                    &plane(side, h, w)?,
                )?;
                written += 1;
            }
        }
    }
    println!(
        "wrote {written} maps for {} samples to {}",
        samples.len(),
        maps.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn check(c: &Common, instances: usize) -> anyhow::Result<ExitCode> {
    let cfg = load_config(c)?;
    let dir = out_dir(c)?;
    echo(&cfg, &dir)?;
    let t0 = Instant::now();
    let oracle = oracle_suite(instances, cfg.seed)?;
    println!(
        "oracle: {} instances, max abs diff {:.3e} (border {:.3e}) in {:.1}s",
        oracle.instances,
        oracle.max_abs_diff,
        oracle.max_border_diff,
        t0.elapsed().as_secs_f64()
    );
    let t0 = Instant::now();
    let opts = gradcheck_options(cfg.seed);
    let sample = gradcheck_sample(2, 16, cfg.seed)?;
    let grad = model_gradcheck(&gradcheck_model_config(2), &sample, &opts, cfg.seed)?;
    println!(
        "gradcheck: {} groups, max rel error {:.3e} ({}) in {:.1}s",
        grad.groups.len(),
        grad.max_rel_error,
        grad.worst_group,
        t0.elapsed().as_secs_f64()
    );
    let mut report = format!(
        "oracle_instances={}\noracle_max_abs_diff={:e}\ngradcheck_max_rel_error={:e}\ngradcheck_worst_group={}\n",
        oracle.instances, oracle.max_abs_diff, grad.max_rel_error, grad.worst_group
    );
    for g in &grad.groups {
        report.push_str(&format!(
            "group {} checked={} max_rel_error={:e}\n",
            g.name, g.checked, g.max_rel_error
        ));
    }
    fs::write(dir.join("check.txt"), report)?;
    let ok = oracle.max_abs_diff <= ORACLE_TOL && grad.max_rel_error <= GRADCHECK_TOL;
    println!("{}", if ok { "check passed" } else { "check FAILED" });
    Ok(if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn bench(c: &Common) -> anyhow::Result<ExitCode> {
    let cfg = load_config(c)?;
    let dir = out_dir(c)?;
    echo(&cfg, &dir)?;
    let sizes: Vec<_> = cfg
        .bench_sizes
        .iter()
        .map(|&(h, w)| (cfg.bench_slices, h, w))
        .collect();
    let rows = audit_complexity(&sizes, &cfg.model.dlg, cfg.bench_repeats, cfg.seed)?;
    let path = dir.join("audit.csv");
    write_audit_csv(&path, &rows)?;
    for r in &rows {
        println!("{}", r.csv());
    }
    println!(
        "slope {:.3e} ms per N*H*W; wrote {}",
        fitted_slope(&rows),
        path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn ablate(c: &Common, suite: &str) -> anyhow::Result<ExitCode> {
    let suites = match suite {
        "all" => Suite::ALL.to_vec(),
        s => vec![s.parse::<Suite>().map_err(|e| usage(e.to_string()))?],
    };
    let cfg = load_config(c)?;
    let dir = out_dir(c)?;
    echo(&cfg, &dir)?;
    let (_, train) = load_split(&cfg, Split::Train)?;
    let (_, test) = load_split(&cfg, Split::Test)?;
    let mut cache = RunCache::new();
    for s in suites {
        let report = run_suite(s, &cfg, &train, &test, &mut cache)?;
        let path = dir.join(format!("ablation_{s}.csv"));
        fs::write(&path, report.to_csv()).with_context(|| format!("writing {}", path.display()))?;
        println!("{s}:");
        for v in &report.variants {
            if let Some(m) = report.mean(v) {
                println!(
                    "  {v:<12} max_f {:.4} s {:.4} max_e {:.4} mae {:.4}",
                    m.max_f, m.s_measure, m.max_e, m.mae
                );
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::GenData(c) => gen_data(&c),
        Command::Train(c) => train(&c),
        Command::Eval { common, checkpoint } => eval(&common, checkpoint),
        Command::Infer {
            common,
            checkpoint,
            steps_out,
        } => infer(&common, checkpoint, steps_out),
        Command::Check { common, instances } => check(&common, instances),
        Command::Bench(c) => bench(&c),
        Command::Ablate { common, suite } => ablate(&common, &suite),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
