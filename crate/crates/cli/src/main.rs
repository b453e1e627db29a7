//! `alphagan` command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 numeric abort.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use alphagan::artifacts::{self, ArtifactError, RunConfigFile};
use alphagan::autodiff::{primitive_suite, GradCheckCase, Tensor};
use alphagan::data::{DataError, DataKind, Dataset, DatasetSpec, SplitName};
use alphagan::eval::{self, EvalError, EvalOptions, Metric};
use alphagan::losses::composite_suite;
use alphagan::trainers::{metrics_csv, MetricRow, TrainError, TrainObserver, TrainedModel, Trainer};

const SEED_ENV: &str = "ALPHAGAN_SEED";
const KEEP_CHECKPOINTS: usize = 2;

#[derive(Parser)]
#[command(name = "alphagan", version, about = "Train and evaluate alpha-GAN and baseline models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a JSON config.
    Train(TrainArgs),
    /// Evaluate a checkpoint with the metric battery.
    Eval(EvalArgs),
    /// Draw samples or reconstructions from a checkpoint.
    Sample(SampleArgs),
    /// Run the gradient-check suite.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct TrainArgs {
    config: PathBuf,
    /// Output directory; overrides `out_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    checkpoint: PathBuf,
    /// Dataset spec (JSON); defaults to the one the model was trained on.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Comma-separated subset of neg_wasserstein, diversity, classifier_score, modes, latent.
    #[arg(long, value_delimiter = ',')]
    metrics: Option<Vec<String>>,
    /// Report CSV path; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 4096)]
    samples: usize,
    #[arg(long, default_value_t = 5000)]
    critic_steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SampleArgs {
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 64)]
    n: usize,
    /// Grid as COLSxROWS.
    #[arg(long, default_value = "8x8", value_parser = parse_grid)]
    grid: (usize, usize),
    /// Pair test-split inputs with their reconstructions.
    #[arg(long)]
    recon: bool,
    /// Dataset spec (JSON) for reconstructions; defaults to the training dataset.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 100)]
    points: usize,
    #[arg(long, default_value_t = 1e-6)]
    step: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Adds a case with a deliberately wrong backward rule.
    #[arg(long, hide = true)]
    inject_fault: bool,
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (c, r) = s.split_once('x').ok_or_else(|| format!("expected COLSxROWS, got `{s}`"))?;
    let p = |v: &str| v.parse::<usize>().ok().filter(|&v| v > 0).ok_or_else(|| format!("bad grid size `{s}`"));
    Ok((p(c)?, p(r)?))
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{failed} gradient check(s) failed")]
    GradCheck { failed: usize },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        let numeric = match self {
            Self::Train(e) => e.is_numeric_abort(),
            Self::Eval(EvalError::Train(e)) => e.is_numeric_abort(),
            Self::Artifact(ArtifactError::Train(e)) => e.is_numeric_abort(),
            _ => false,
        };
        if numeric {
            2
        } else {
            1
        }
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> Result<u64, CliError> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{SEED_ENV} must be an unsigned integer, got `{v}`"))),
        Err(_) => Ok(0),
    }
}

fn load_dataset(path: Option<&Path>, model: &TrainedModel) -> Result<Dataset, CliError> {
    let spec = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|source| CliError::Io {
                path: p.to_path_buf(),
                source,
            })?;
            serde_json::from_str::<DatasetSpec>(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => model.config.dataset.clone(),
    };
    let data = spec.build(model.config.seed_or_default())?;
    if data.kind != model.kind {
        return Err(CliError::Usage(format!(
            "dataset is {:?} but the model expects {:?}",
            data.kind, model.kind
        )));
    }
    Ok(data)
}

/// Writes checkpoints, sample artifacts and the metric log as training proceeds.
struct RunWriter {
    dir: PathBuf,
    rows: Vec<MetricRow>,
    checkpoints: Vec<PathBuf>,
    sample_seed: u64,
}

impl RunWriter {
    fn write_samples(&self, model: &TrainedModel) -> Result<(), CliError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.sample_seed);
        match model.kind {
            DataKind::Images { height, width } => {
                let s = model.sample(64, &mut rng)?;
                let ppm = artifacts::ppm_grid(&s, height, width, 8, 8)?;
                write(&self.dir.join(format!("samples_{:08}.ppm", model.iteration)), ppm)
            }
            DataKind::Points2d => {
                let s = model.sample(1024, &mut rng)?;
                write(
                    &self.dir.join(format!("samples_{:08}.csv", model.iteration)),
                    artifacts::points_csv(&s),
                )
            }
        }
    }

    fn checkpoint(&mut self, model: &TrainedModel) -> Result<(), CliError> {
        let path = self.dir.join(format!("checkpoint_{:08}.agan", model.iteration));
        artifacts::save_checkpoint(model, &path)?;
        self.checkpoints.push(path);
        while self.checkpoints.len() > KEEP_CHECKPOINTS {
            let old = self.checkpoints.remove(0);
            fs::remove_file(&old).map_err(|source| CliError::Io { path: old, source })?;
        }
        Ok(())
    }

    fn on_eval_inner(&mut self, model: &TrainedModel, row: &MetricRow) -> Result<(), CliError> {
        self.rows.push(row.clone());
        write(&self.dir.join("metrics.csv"), metrics_csv(&self.rows))?;
        self.checkpoint(model)?;
        self.write_samples(model)
    }
}

impl TrainObserver for RunWriter {
    fn on_eval(&mut self, model: &TrainedModel, row: &MetricRow) -> Result<(), TrainError> {
        self.on_eval_inner(model, row)
            .map_err(|e| TrainError::Observer(e.to_string()))
    }
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&args.config).map_err(|source| CliError::Io {
        path: args.config.clone(),
        source,
    })?;
    let RunConfigFile { mut config, out_dir } = RunConfigFile::parse(&text)?;
    config.seed = Some(resolve_seed(args.seed, config.seed)?);
    let dir = args
        .out
        .or(out_dir)
        .ok_or_else(|| CliError::Usage("no output directory: pass --out or set out_dir".into()))?;
    fs::create_dir_all(&dir).map_err(|source| CliError::Io {
        path: dir.clone(),
        source,
    })?;
    let dataset = config.dataset.build(config.seed_or_default())?;
    let mut writer = RunWriter {
        dir: dir.clone(),
        rows: Vec::new(),
        checkpoints: Vec::new(),
        sample_seed: config.seed_or_default(),
    };
    match Trainer::new(&config, &dataset)?.run(&mut writer) {
        Ok(outcome) => {
            eprintln!(
                "trained {} for {} iterations; artifacts in {}",
                config.algorithm,
                outcome.model.iteration,
                dir.display()
            );
            Ok(())
        }
        Err(TrainError::NonFinite {
            network,
            iteration,
            detail,
            last_good,
        }) => {
            if let Some(good) = &last_good {
                artifacts::save_checkpoint(good, &dir.join("checkpoint_last_good.agan"))?;
            }
            Err(TrainError::NonFinite {
                network,
                iteration,
                detail,
                last_good,
            }
            .into())
        }
        Err(e) => Err(e.into()),
    }
}

fn matrix_csv(t: &Tensor) -> String {
    let mut out = String::new();
    for i in 0..t.rows() {
        let line: Vec<String> = t.row(i).iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let model = artifacts::load_checkpoint(&args.checkpoint)?;
    let dataset = load_dataset(args.dataset.as_deref(), &model)?;
    let metrics: Vec<Metric> = match &args.metrics {
        Some(names) => names.iter().map(|n| n.parse()).collect::<Result<_, _>>()?,
        None => Metric::applicable(&model, &dataset),
    };
    let mut opts = EvalOptions {
        samples: args.samples,
        seed: args.seed,
        ..EvalOptions::default()
    };
    opts.critic.steps = args.critic_steps;
    opts.critic.seed = args.seed;
    let report = eval::evaluate_model(&model, &dataset, &metrics, &opts)?;
    match &args.out {
        None => print!("{}", report.csv()),
        Some(path) => {
            write(path, report.csv())?;
            let sibling = |suffix: &str| {
                let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
                path.with_file_name(format!("{stem}_{suffix}.csv"))
            };
            if let (Some(means), Some(cov)) = (&report.latent_means, &report.latent_covariance) {
                let means = Tensor::matrix(1, means.len(), means.clone()).map_err(EvalError::from)?;
                write(&sibling("latent_means"), matrix_csv(&means))?;
                write(&sibling("latent_covariance"), matrix_csv(cov))?;
            }
            if !report.critic_curves.is_empty() {
                let mut csv = String::from("step,minibatch,test\n");
                for p in &report.critic_curves {
                    csv.push_str(&format!("{},{},{}\n", p.step, p.minibatch, p.test));
                }
                write(&sibling("critic_curve"), csv)?;
            }
        }
    }
    Ok(())
}

fn cmd_sample(args: SampleArgs) -> Result<(), CliError> {
    let model = artifacts::load_checkpoint(&args.checkpoint)?;
    let (cols, rows) = args.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    if args.recon && !model.algorithm().has_encoder() {
        return Err(CliError::Usage(format!(
            "{} has no encoder: reconstructions need alpha_gan, age or vae",
            model.algorithm()
        )));
    }
    let output = if args.recon {
        let dataset = load_dataset(args.dataset.as_deref(), &model)?;
        let test = &dataset.split(SplitName::Test).data;
        let n = args.n.min(test.rows());
        let x = test.select_rows(&(0..n).collect::<Vec<_>>()).map_err(EvalError::from)?;
        let x_hat = model.reconstruct(&x, &mut rng)?;
        match model.kind {
            DataKind::Images { height, width } => {
                let paired = artifacts::paired_grid_rows(&x, &x_hat, cols)?;
                artifacts::ppm_grid(&paired, height, width, 2 * cols, rows)?
            }
            DataKind::Points2d => {
                let joined: Vec<Vec<f64>> = (0..n).map(|i| [x.row(i), x_hat.row(i)].concat()).collect();
                let t = Tensor::from_rows(&joined).map_err(EvalError::from)?;
                artifacts::points_csv(&t).into_bytes()
            }
        }
    } else {
        let s = model.sample(args.n, &mut rng)?;
        match model.kind {
            DataKind::Images { height, width } => artifacts::ppm_grid(&s, height, width, cols, rows)?,
            DataKind::Points2d => artifacts::points_csv(&s).into_bytes(),
        }
    };
    write(&args.out, output)
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<(), CliError> {
    let mut cases = primitive_suite();
    cases.extend(composite_suite());
    if args.inject_fault {
        // Square whose backward treats one factor as a constant: d/dx = x instead of 2x.
        cases.push(GradCheckCase::new(
            "faulty_square",
            1e-5,
            |rng: &mut ChaCha8Rng| {
                use rand::Rng;
                Tensor::matrix(2, 2, (0..4).map(|_| rng.gen_range(0.5..2.0)).collect()).expect("2x2")
            },
            |t: &mut alphagan::Tape, x| {
                let frozen = t.constant(t.value(x).clone());
                let sq = t.mul(x, frozen)?;
                t.sum(sq, None)
            },
        ));
    }
    println!("{:<36} {:>12} {:>10}  result", "case", "max_rel_err", "tolerance");
    let mut failed = 0;
    for case in &cases {
        let r = case.run(args.points, args.step, args.seed);
        let status = if r.passed() { "pass" } else { "FAIL" };
        failed += usize::from(!r.passed());
        println!("{:<36} {:>12.3e} {:>10.0e}  {status}", r.name, r.max_rel_err, r.tolerance);
        if let Some(e) = &r.error {
            println!("    error: {e}");
        }
    }
    if failed > 0 {
        return Err(CliError::GradCheck { failed });
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
