use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};
use regcgan::data::LatentSampler;
use regcgan::eval::{
    correspondence_score, ground_truth, interleave_pairs, interpolate, mean_std, uda_report, write_grid,
};
use regcgan::trainer::{load_checkpoint, train, TrainConfig, TrainState};
use regcgan::verify::{gradient_suite, Fault, SuiteOptions};
use regcgan::Error;

/// Regularized conditional GAN: training, evaluation and gradient checks.
#[derive(Parser)]
#[command(name = "regcgan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a `key = value` config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Enable the source-label classifier.
        #[arg(long)]
        uda: bool,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for manifest, checkpoints, metrics and grids.
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        metric: Metric,
        #[arg(long, default_value_t = 1)]
        trials: usize,
        /// Latent pairs per correspondence trial.
        #[arg(long, default_value_t = 500)]
        n: usize,
        /// Interpolation steps.
        #[arg(long, default_value_t = 8)]
        steps: usize,
        /// Held-out target samples for synthetic datasets.
        #[arg(long, default_value_t = 1000)]
        test_n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Artifact directory; defaults to the checkpoint's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every op and objective.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Print the per-op table even when everything passes.
        #[arg(long)]
        report: bool,
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Correspondence,
    Uda,
    Interp,
}

struct Failure {
    code: u8,
    message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Io(_) => 2,
            Error::Divergence { .. } | Error::NonFiniteGradient(_) => 4,
            _ => 3,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<String, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, uda, seed, out } => cmd_train(&config, uda, seed, &out),
        Command::Eval {
            checkpoint,
            metric,
            trials,
            n,
            steps,
            test_n,
            seed,
            out,
        } => cmd_eval(&checkpoint, metric, trials, n, steps, test_n, seed, out),
        Command::Gradcheck {
            instances,
            seed,
            report,
            inject_fault,
        } => cmd_gradcheck(instances, seed, report, inject_fault.as_deref()),
    };
    match result {
        Ok(line) => {
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// The manifest is itself a valid config file: metadata lives in comments.
fn manifest(config: &TrainConfig, out: &Path, started: u64, finished: Option<u64>) -> String {
    let mut s = String::from("# regcgan run manifest\n");
    let _ = writeln!(s, "# tool_version = {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "# out = {}", out.display());
    let _ = writeln!(s, "# started_unix = {started}");
    if let Some(f) = finished {
        let _ = writeln!(s, "# finished_unix = {f}");
    }
    s.push_str(&config.to_text());
    s
}

fn cmd_train(path: &Path, uda: bool, seed: Option<u64>, out: &Path) -> CmdResult {
    let text =
        std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut overrides = Vec::new();
    if uda {
        overrides.push(("uda", "true".to_string()));
    }
    if let Some(s) = seed {
        overrides.push(("seed", s.to_string()));
    }
    let config = TrainConfig::from_text_with(&text, &overrides)?;
    std::fs::create_dir_all(out)
        .map_err(|e| usage(format!("cannot create output directory {}: {e}", out.display())))?;
    let started = unix_now();
    let manifest_path = out.join("manifest.txt");
    std::fs::write(&manifest_path, manifest(&config, out, started, None)).map_err(Error::from)?;
    let ds = config.dataset.build()?;
    let done = train(config.clone(), &ds, Some(out))?;
    std::fs::write(&manifest_path, manifest(&config, out, started, Some(unix_now()))).map_err(Error::from)?;
    let last = done.metrics.last();
    let ckpt = done
        .checkpoints
        .last()
        .map(|p| p.display().to_string())
        .unwrap_or_default();
    Ok(format!(
        "iterations={} loss_d={} loss_g={} checkpoint={ckpt}",
        done.state.iteration,
        last.map(|m| m.loss_d.to_string()).unwrap_or_default(),
        last.map(|m| m.loss_g.to_string()).unwrap_or_default(),
    ))
}

fn load(path: &Path) -> Result<TrainState, Failure> {
    if !path.is_file() {
        return Err(usage(format!("checkpoint {} does not exist", path.display())));
    }
    Ok(load_checkpoint(path)?)
}

fn summary(xs: &[f64]) -> String {
    if xs.len() == 1 {
        return format!("{:.6}", xs[0]);
    }
    let (m, s) = mean_std(xs);
    format!("{m:.6}±{s:.6}")
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    path: &Path,
    metric: Metric,
    trials: usize,
    n: usize,
    steps: usize,
    test_n: usize,
    seed: u64,
    out: Option<PathBuf>,
) -> CmdResult {
    if trials == 0 {
        return Err(usage("--trials must be >= 1"));
    }
    let state = load(path)?;
    let out = out.unwrap_or_else(|| path.parent().map(Path::to_path_buf).unwrap_or_default());
    std::fs::create_dir_all(&out).map_err(Error::from)?;
    let ds = state.config.dataset.build()?;
    match metric {
        Metric::Correspondence => {
            let gt = ground_truth(&ds).ok_or(Error::MissingTransform)?;
            let mut summary_csv = String::from("trial,n,mean_error,baseline_error\n");
            let mut samples_csv = String::from("trial,index,error\n");
            let (mut means, mut bases) = (Vec::new(), Vec::new());
            for t in 0..trials {
                let r = correspondence_score(&state.model.gen, Some(gt), n, seed.wrapping_add(t as u64))?;
                let _ = writeln!(summary_csv, "{t},{},{},{}", r.n, r.mean_error, r.baseline_error);
                for (i, e) in r.per_sample_errors.iter().enumerate() {
                    let _ = writeln!(samples_csv, "{t},{i},{e}");
                }
                means.push(r.mean_error);
                bases.push(r.baseline_error);
            }
            std::fs::write(out.join("correspondence.csv"), summary_csv).map_err(Error::from)?;
            std::fs::write(out.join("correspondence_samples.csv"), samples_csv).map_err(Error::from)?;
            Ok(format!(
                "mean_error={} baseline_error={} n={n} trials={trials}",
                summary(&means),
                summary(&bases)
            ))
        }
        Metric::Uda => {
            if state.model.cls.is_none() {
                return Err(Error::ModelMismatch("checkpoint has no classifier; train with --uda".into()).into());
            }
            let mut csv = String::from("trial,acc_sampled,acc_test\n");
            let (mut sampled, mut test) = (Vec::new(), Vec::new());
            for t in 0..trials {
                // trials reseed only the data sampling step and retrain
                let (model, ds_t, spec) = if trials == 1 {
                    (state.model.clone(), ds.clone(), state.config.dataset.clone())
                } else {
                    let mut c = state.config.clone();
                    c.dataset = c.dataset.reseeded(t as u64);
                    let d = c.dataset.build()?;
                    let done = train(c.clone(), &d, None)?;
                    (done.state.model, d, c.dataset)
                };
                let held_out = spec.build_test(test_n)?;
                let r = uda_report(&model, &ds_t, &held_out)?;
                let _ = writeln!(csv, "{t},{},{}", r.acc_sampled, r.acc_test);
                sampled.push(r.acc_sampled);
                test.push(r.acc_test);
            }
            std::fs::write(out.join("uda.csv"), csv).map_err(Error::from)?;
            Ok(format!("acc_sampled={} acc_test={}", summary(&sampled), summary(&test)))
        }
        Metric::Interp => {
            let mut sampler = LatentSampler::new(state.model.gen.latent_dim(), seed);
            let z = sampler.sample(2)?;
            let dim = state.model.gen.latent_dim();
            let frames = interpolate(&state.model.gen, &z.data()[..dim], &z.data()[dim..], steps)?;
            let cat = |d: usize| -> Result<regcgan::tensor::Tensor, Error> {
                let parts: Vec<_> = frames.iter().map(|f| f[d].clone()).collect();
                let mut dims = parts[0].dims().to_vec();
                dims[0] = parts.len();
                regcgan::tensor::Tensor::new(&dims, parts.iter().flat_map(|p| p.data().to_vec()).collect())
            };
            let (a, b) = (cat(0)?, cat(1)?);
            if a.dims().len() == 4 {
                let p = out.join("interp.pgm");
                write_grid(&interleave_pairs(&a, &b, steps)?, steps, &p)?;
                Ok(format!("steps={steps} grid={}", p.display()))
            } else {
                let p = out.join("interp.csv");
                let k = a.dims()[1];
                let mut csv = String::from("step,domain");
                for j in 0..k {
                    let _ = write!(csv, ",x{j}");
                }
                csv.push('\n');
                for (d, t) in [&a, &b].into_iter().enumerate() {
                    for (i, row) in t.data().chunks(k).enumerate() {
                        let vals: Vec<String> = row.iter().map(f64::to_string).collect();
                        let _ = writeln!(csv, "{i},{d},{}", vals.join(","));
                    }
                }
                std::fs::write(&p, csv).map_err(Error::from)?;
                Ok(format!("steps={steps} points={}", p.display()))
            }
        }
    }
}

fn cmd_gradcheck(instances: usize, seed: u64, report: bool, fault: Option<&str>) -> CmdResult {
    let fault = match fault {
        None => None,
        Some("reg_g") => Some(Fault::RegGSignFlip),
        Some(other) => return Err(usage(format!("unknown fault {other}"))),
    };
    if instances == 0 {
        return Err(usage("--instances must be >= 1"));
    }
    let opts = SuiteOptions {
        instances,
        seed,
        fault,
        ..SuiteOptions::default()
    };
    let r = gradient_suite(&opts)?;
    let worst = r.ops.iter().map(|o| o.max_error).fold(0.0, f64::max);
    if !r.passed() {
        eprint!("{}", r.table());
        let names: Vec<&str> = r.failed().map(|o| o.name).collect();
        return Err(Failure {
            code: 1,
            message: format!("gradient check failed: {}", names.join(", ")),
        });
    }
    if report {
        print!("{}", r.table());
    }
    Ok(format!(
        "gradcheck ok ops={} instances={instances} max_rel_err={worst:.3e}",
        r.ops.len()
    ))
}
