use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sparse_stein::datagen::{read_dataset, write_dataset};
use sparse_stein::inference::{read_samples, write_samples};
use sparse_stein::metrics::format_lcurve;
use sparse_stein::models::{read_model_file, write_model_file};
use sparse_stein_cli::config::{parse_config, ConfigError, ExperimentConfig, Method, Problem};
use sparse_stein_cli::experiment;
use sparse_stein_cli::pipeline::{self, StageError};
use sparse_stein_cli::plot::{emit_plot, PlotKind};

#[derive(Parser)]
#[command(name = "sparse-stein", version, about = "Sparsified Stein inference experiments")]
struct Cli {
    /// Worker threads for parallel stages.
    #[arg(long, global = true, env = "SPARSE_STEIN_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Overrides `output_dir` from the config.
    #[arg(long, env = "SPARSE_STEIN_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a training dataset.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Train the MAP model.
    TrainMap {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Prune a MAP model.
    Sparsify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Sample the posterior of a (sparse) model.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_method)]
        method: Option<Method>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Push-forward table along the validation path.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Penalty sweep: one MAP per lambda.
    Lcurve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// SVGD on a Gaussian target with an L1 prior.
    DemoL1 {
        #[command(flatten)]
        common: Common,
    },
    /// Render a CSV table as SVG.
    Plot {
        #[arg(long)]
        table: PathBuf,
        #[arg(long, value_enum, default_value = "line")]
        kind: PlotKind,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Full pipeline.
    Run {
        #[command(flatten)]
        common: Common,
    },
}

fn parse_method(s: &str) -> Result<Method, String> {
    match s {
        "svgd" => Ok(Method::Svgd),
        "psvgd" => Ok(Method::Psvgd),
        "hmc" => Ok(Method::Hmc),
        _ => Err(format!("unknown method '{s}' (svgd, psvgd, hmc)")),
    }
}

enum Failure {
    Config(ConfigError),
    Stage(StageError),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<StageError> for Failure {
    fn from(e: StageError) -> Self {
        Failure::Stage(e)
    }
}

fn load(common: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = parse_config(&common.config)?;
    if let Some(dir) = &common.output_dir {
        cfg.output_dir = dir.clone();
    }
    Ok(cfg)
}

fn in_dir(cfg: &ExperimentConfig, given: &Option<PathBuf>, name: &str) -> PathBuf {
    given.clone().unwrap_or_else(|| cfg.output_dir.join(name))
}

fn ensure_parent(stage: &str, path: &Path) -> Result<(), StageError> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => std::fs::create_dir_all(p).map_err(|e| StageError::new(stage, e)),
        _ => Ok(()),
    }
}

fn stage<T, E: std::fmt::Display>(name: &str, r: Result<T, E>) -> Result<T, StageError> {
    r.map_err(|e| StageError::new(name, e))
}

fn execute(command: Command) -> Result<(), Failure> {
    use pipeline::*;
    match command {
        Command::Generate { common, out } => {
            let cfg = load(&common)?;
            let out = in_dir(&cfg, &out, DATA_FILE);
            ensure_parent("generate", &out)?;
            let data = stage("generate", experiment::generate(&cfg))?;
            stage("generate", write_dataset(&out, &data))?;
        }
        Command::TrainMap { common, data, out } => {
            let cfg = load(&common)?;
            let data = stage("train-map", read_dataset(&in_dir(&cfg, &data, DATA_FILE)))?;
            let out = in_dir(&cfg, &out, MAP_FILE);
            ensure_parent("train-map", &out)?;
            let map = stage("train-map", experiment::train_map(&cfg, &data))?;
            stage("train-map", write_model_file(&out, &map))?;
        }
        Command::Sparsify { common, map, out } => {
            let cfg = load(&common)?;
            let map = stage("sparsify", read_model_file(&in_dir(&cfg, &map, MAP_FILE)))?;
            let out = in_dir(&cfg, &out, SPARSE_FILE);
            ensure_parent("sparsify", &out)?;
            let sparse = stage("sparsify", experiment::sparsify(&cfg, &map))?;
            stage("sparsify", write_model_file(&out, &sparse))?;
            println!("active parameters: {} of {}", sparse.params.len(), sparse.active.len());
        }
        Command::Sample {
            common,
            method,
            data,
            model,
            out,
        } => {
            let mut cfg = load(&common)?;
            if let Some(m) = method {
                cfg.inference.method = m;
            }
            let out = in_dir(&cfg, &out, SAMPLES_FILE);
            ensure_parent("sample", &out)?;
            let samples = if cfg.problem == Problem::GaussianDemo {
                stage("sample", experiment::demo_samples(&cfg))?
            } else {
                let data = stage("sample", read_dataset(&in_dir(&cfg, &data, DATA_FILE)))?;
                let model = stage("sample", read_model_file(&in_dir(&cfg, &model, SPARSE_FILE)))?;
                stage("sample", experiment::sample(&cfg, &data, &model))?
            };
            stage("sample", write_samples(&out, &samples))?;
            if let Some(a) = samples.acceptance {
                println!("acceptance rate: {a:.3}");
            }
        }
        Command::Evaluate {
            common,
            data,
            model,
            samples,
            out,
        } => {
            let cfg = load(&common)?;
            let samples = stage("evaluate", read_samples(&in_dir(&cfg, &samples, SAMPLES_FILE)))?;
            if cfg.problem == Problem::GaussianDemo {
                let out = in_dir(&cfg, &out, DEMO_TABLE_FILE);
                ensure_parent("evaluate", &out)?;
                let (table, mean_w1) = stage("evaluate", experiment::demo_table(&cfg, &samples))?;
                stage("evaluate", std::fs::write(&out, table))?;
                println!("mean W1 to reference: {mean_w1:.6}");
            } else {
                let data = stage("evaluate", read_dataset(&in_dir(&cfg, &data, DATA_FILE)))?;
                let model = stage("evaluate", read_model_file(&in_dir(&cfg, &model, SPARSE_FILE)))?;
                let out = in_dir(&cfg, &out, TABLE_FILE);
                ensure_parent("evaluate", &out)?;
                let ev = stage("evaluate", experiment::evaluate(&cfg, &data.noise, &model, &samples))?;
                stage("evaluate", std::fs::write(&out, &ev.table))?;
                println!("mean W1 {:.6}, point R2 {:.6}, active {}", ev.mean_w1, ev.r2, ev.active_count);
            }
        }
        Command::Lcurve { common, data, out } => {
            let cfg = load(&common)?;
            let data = stage("lcurve", read_dataset(&in_dir(&cfg, &data, DATA_FILE)))?;
            let out = in_dir(&cfg, &out, "lcurve.csv");
            ensure_parent("lcurve", &out)?;
            let curve = stage("lcurve", experiment::lcurve(&cfg, &data))?;
            stage("lcurve", std::fs::write(&out, format_lcurve(&curve)))?;
            println!("selected lambda: {}", curve.lambda_star);
        }
        Command::DemoL1 { common } => {
            let cfg = load(&common)?;
            let dir = cfg.output_dir.clone();
            stage("demo-l1", std::fs::create_dir_all(&dir))?;
            let samples = stage("demo-l1", experiment::demo_samples(&cfg))?;
            stage("demo-l1", write_samples(&dir.join(SAMPLES_FILE), &samples))?;
            let (table, _) = stage("demo-l1", experiment::demo_table(&cfg, &samples))?;
            stage("demo-l1", std::fs::write(dir.join(DEMO_TABLE_FILE), table))?;
            println!("particle mean: {:?}", samples.mean());
        }
        Command::Plot { table, kind, out } => {
            let text = stage("plot", std::fs::read_to_string(&table))?;
            let svg = stage("plot", emit_plot(&text, kind))?;
            ensure_parent("plot", &out)?;
            stage("plot", std::fs::write(&out, svg))?;
        }
        Command::Run { common } => {
            let cfg = load(&common)?;
            let m = run_pipeline(&cfg)?;
            for s in &m.stages {
                let note = if s.skipped { " (reused)" } else { "" };
                println!("{:<10} {:>9.2}s{note}", s.name, s.seconds);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Stage(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
