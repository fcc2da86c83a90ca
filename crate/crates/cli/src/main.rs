use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use pcada::config::{Method, RunConfig};
use pcada::data::{generate, load_external, write_dataset, EvolvingDataset};
use pcada::engine::{evaluate, run_method, train_model, MaskRow, PCAdaModel, RunOutcome};
use pcada::gradsuite;
use pcada::metrics::{aggregate, write_aggregate_csv, write_per_domain_csv, RunReport};
use pcada::nn::ParamSnapshot;
use pcada::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_IO: u8 = 4;
const EXIT_OTHER: u8 = 1;

#[derive(Parser)]
#[command(name = "pcada", version, about = "Adaptation to evolving target domains")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// JSON config file; defaults apply to anything it leaves out.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-key override, e.g. `--set apm.delta_d=2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> pcada::Result<RunConfig> {
        let base = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let mut cfg = base.apply_overrides(&self.set)?;
        if let Some(s) = self.seed {
            cfg = cfg.with_seed(s);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct OutArgs {
    #[arg(long)]
    out: PathBuf,
    /// Replace existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic evolving-domain dataset.
    Generate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Meta-train one method and save the model.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Dataset directory; generated from the config when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Online pass of a trained model over the test domains.
    Test {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Model file written by `train`.
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Train then test in one go.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Every method over a list of seeds, with an aggregate table.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Seeds to run: a count `N` (meaning 0..N) or a list `a,b,c`.
        #[arg(long, default_value = "5")]
        seeds: String,
        /// Comma-separated subset of methods.
        #[arg(long)]
        methods: Option<String>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Finite-difference check of every training loss.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Corrupt the named loss to demonstrate detection.
        #[arg(long)]
        inject_fault: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config { .. } | Error::Input(_) | Error::Shape(_) | Error::Parse { .. } | Error::Json(_)) => {
            EXIT_CONFIG
        }
        Some(Error::Numeric(_)) => EXIT_NUMERIC,
        Some(Error::Io { .. }) => EXIT_IO,
        Some(Error::State(_)) | None => EXIT_OTHER,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn dispatch(cmd: Cmd) -> anyhow::Result<u8> {
    match cmd {
        Cmd::Generate { cfg, out } => cmd_generate(&cfg.resolve()?, &out),
        Cmd::Train { cfg, data, out } => cmd_train(&cfg.resolve()?, data.as_deref(), &out),
        Cmd::Test { cfg, data, model, out } => cmd_test(&cfg.resolve()?, data.as_deref(), &model, &out),
        Cmd::Run { cfg, data, out } => cmd_run(&cfg.resolve()?, data.as_deref(), &out),
        Cmd::Ablate {
            cfg,
            data,
            seeds,
            methods,
            out,
        } => cmd_ablate(&cfg.resolve()?, data.as_deref(), &seeds, methods.as_deref(), &out),
        Cmd::Gradcheck {
            seed,
            inject_fault,
            out,
        } => cmd_gradcheck(seed, inject_fault.as_deref(), out.as_deref()),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

/// Creates `dir`, refusing to reuse a non-empty one without `force`.
fn prepare_out(out: &OutArgs) -> anyhow::Result<()> {
    let dir = &out.out;
    if dir.exists() {
        let occupied = fs::read_dir(dir).map_err(|e| io_err(dir, e))?.next().is_some();
        if occupied && !out.force {
            return Err(Error::Input(format!("{} is not empty (pass --force to overwrite)", dir.display())).into());
        }
    }
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    Ok(())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))?;
    Ok(())
}

fn load_data(cfg: &RunConfig, dir: Option<&Path>) -> anyhow::Result<EvolvingDataset> {
    Ok(match dir {
        Some(d) => load_external(d).with_context(|| format!("loading dataset from {}", d.display()))?,
        None => generate(&cfg.data)?,
    })
}

fn write_masks_csv(path: &Path, masks: &[MaskRow]) -> anyhow::Result<()> {
    let dim = masks.first().map_or(0, |m| m.values.len());
    let mut text = String::from("domain,batch");
    for c in 0..dim {
        text.push_str(&format!(",c{c}"));
    }
    text.push('\n');
    for m in masks {
        text.push_str(&format!("{},{}", m.domain, m.batch));
        for v in &m.values {
            text.push_str(&format!(",{v}"));
        }
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| io_err(path, e))?;
    Ok(())
}

/// report.json, per_domain.csv, masks.csv, timing.json and config.json.
fn write_outcome(dir: &Path, cfg: &RunConfig, o: &RunOutcome) -> anyhow::Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join("report.json");
    fs::write(&path, o.report.to_json()? + "\n").map_err(|e| io_err(&path, e))?;
    write_per_domain_csv(&dir.join("per_domain.csv"), &[&o.report])?;
    write_masks_csv(&dir.join("masks.csv"), &o.masks)?;
    write_json(&dir.join("config.json"), &cfg.to_value())?;
    write_json(
        &dir.join("timing.json"),
        &json!({ "method": o.report.method, "seed": o.report.seed, "wall_clock_secs": o.report.wall_clock_secs }),
    )?;
    Ok(())
}

fn summary_line(r: &RunReport) -> String {
    let bwt = r.bwt.map_or("n/a".to_string(), |b| format!("{b:+.4}"));
    format!("{:<16} seed {:<4} ACC {:.4}  BWT {bwt}", r.method, r.seed, r.acc)
}

fn cmd_generate(cfg: &RunConfig, out: &OutArgs) -> anyhow::Result<u8> {
    // everything is validated before the directory is touched
    let ds = generate(&cfg.data)?;
    write_dataset(&out.out, &ds, out.force)?;
    write_json(&out.out.join("dataset.json"), &json!({ "seed": cfg.seed, "data": cfg.data }))?;
    println!("wrote {} domains to {}", ds.domains.len(), out.out.display());
    Ok(0)
}

fn cmd_train(cfg: &RunConfig, data: Option<&Path>, out: &OutArgs) -> anyhow::Result<u8> {
    let ds = load_data(cfg, data)?;
    prepare_out(out)?;
    let model = train_model(cfg, &ds)?;
    let path = out.out.join("model.json");
    model.snapshot().save(&path)?;
    write_json(&out.out.join("config.json"), &cfg.to_value())?;
    write_json(
        &out.out.join("train.json"),
        &json!({
            "method": cfg.method.name(),
            "seed": cfg.seed,
            "counters": model.counters.to_map(),
            "checksums": model.checksums("trained"),
        }),
    )?;
    println!("saved {} model to {}", cfg.method, path.display());
    Ok(0)
}

fn cmd_test(cfg: &RunConfig, data: Option<&Path>, model: &Path, out: &OutArgs) -> anyhow::Result<u8> {
    let ds = load_data(cfg, data)?;
    let snap = ParamSnapshot::load(model)?;
    let mut m = PCAdaModel::new(cfg, cfg.method, ds.input_dim(), ds.classes)?;
    m.load_snapshot(&snap)
        .with_context(|| format!("{} does not match the configured architecture", model.display()))?;
    prepare_out(out)?;
    let o = evaluate(cfg, &ds, m)?;
    write_outcome(&out.out, cfg, &o)?;
    println!("{}", summary_line(&o.report));
    Ok(0)
}

fn cmd_run(cfg: &RunConfig, data: Option<&Path>, out: &OutArgs) -> anyhow::Result<u8> {
    let ds = load_data(cfg, data)?;
    prepare_out(out)?;
    let o = run_method(cfg, &ds)?;
    o.trained.snapshot().save(&out.out.join("model.json"))?;
    write_outcome(&out.out, cfg, &o)?;
    println!("{}", summary_line(&o.report));
    Ok(0)
}

fn parse_seeds(arg: &str) -> anyhow::Result<Vec<u64>> {
    let bad = || Error::Config {
        key: "seeds".into(),
        msg: format!("expected a count or a comma-separated list, got `{arg}`"),
    };
    let seeds: Vec<u64> = if arg.contains(',') {
        arg.split(',')
            .map(|s| s.trim().parse().map_err(|_| bad()))
            .collect::<Result<_, _>>()?
    } else {
        (0..arg.trim().parse::<u64>().map_err(|_| bad())?).collect()
    };
    if seeds.is_empty() {
        return Err(bad().into());
    }
    Ok(seeds)
}

fn cmd_ablate(
    cfg: &RunConfig,
    data: Option<&Path>,
    seeds: &str,
    methods: Option<&str>,
    out: &OutArgs,
) -> anyhow::Result<u8> {
    let seeds = parse_seeds(seeds)?;
    let methods: Vec<Method> = match methods {
        Some(list) => list.split(',').map(|m| m.trim().parse()).collect::<Result<_, _>>()?,
        None => Method::ALL.to_vec(),
    };
    if methods.is_empty() {
        bail!(Error::Config {
            key: "methods".into(),
            msg: "no methods selected".into(),
        });
    }
    // a supplied dataset is shared by every seed; otherwise each seed draws its own
    let shared = data.map(|d| load_data(cfg, Some(d))).transpose()?;
    prepare_out(out)?;
    let jobs: Vec<(Method, u64)> = methods.iter().flat_map(|&m| seeds.iter().map(move |&s| (m, s))).collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(method, seed)| -> anyhow::Result<RunReport> {
            let mut c = cfg.clone().with_seed(seed);
            c.method = method;
            let ds = match &shared {
                Some(d) => d.clone(),
                None => generate(&c.data)?,
            };
            let o = run_method(&c, &ds)?;
            write_outcome(&out.out.join(method.name()).join(format!("seed_{seed}")), &c, &o)?;
            Ok(o.report)
        })
        .collect::<anyhow::Result<Vec<_>>>()?;

    let mut aggs = Vec::with_capacity(methods.len());
    for m in &methods {
        let reports: Vec<RunReport> = outcomes.iter().filter(|r| r.method == m.name()).cloned().collect();
        aggs.push(aggregate(&reports)?);
    }
    write_aggregate_csv(&out.out.join("aggregate.csv"), &aggs)?;
    write_json(&out.out.join("aggregate.json"), &aggs)?;
    let refs: Vec<&RunReport> = outcomes.iter().collect();
    write_per_domain_csv(&out.out.join("per_domain.csv"), &refs)?;
    write_json(&out.out.join("config.json"), &json!({ "seeds": seeds, "config": cfg.to_value() }))?;
    for a in &aggs {
        let acc = &a.metrics["acc"];
        let bwt = a
            .metrics
            .get("bwt")
            .map_or("n/a".to_string(), |b| format!("{:+.4} ± {:.4}", b.mean, b.std));
        println!("{:<16} ACC {:.4} ± {:.4}  BWT {bwt}  (n={})", a.method, acc.mean, acc.std, acc.n);
    }
    Ok(0)
}

fn cmd_gradcheck(seed: u64, fault: Option<&str>, out: Option<&Path>) -> anyhow::Result<u8> {
    let report = gradsuite::run_suite(seed, fault)?;
    println!("{:<14} {:>8} {:>14}  result", "loss", "params", "max rel err");
    for c in &report.cases {
        println!(
            "{:<14} {:>8} {:>14.3e}  {}",
            c.name,
            c.params,
            c.max_rel_error,
            if c.passed { "pass" } else { "FAIL" }
        );
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        write_json(&dir.join("gradcheck.json"), &report)?;
    }
    if report.passed() {
        Ok(0)
    } else {
        eprintln!("gradient check failed for: {}", report.failures().join(", "));
        Ok(EXIT_NUMERIC)
    }
}
