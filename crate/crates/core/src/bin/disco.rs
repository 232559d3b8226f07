use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use disco_core::estimation::{softer_nms, standard_nms, Detection};
use disco_core::harness::{self, ExperimentConfig, HarnessError};
use disco_core::noise_sim::{self, NoiseConfig};
use disco_core::surrogate;

const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(name = "disco", version, about = "Distribution-aware calibration of noisy boxes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Perturb clean annotations with uniform shift/scale noise.
    Perturb {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        level: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run an experiment and write report.json and metrics.csv.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (defaults to all cores).
        #[arg(long)]
        threads: Option<usize>,
        /// Also write scenes.json with the first seed's scenes and proposals.
        #[arg(long)]
        dump_scenes: bool,
    },
    /// Run an experiment once per value of one config key.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// `key=v1,v2,...`
        #[arg(long)]
        vary: String,
        /// Output directory; metrics are printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Apply NMS to a JSON array of detections.
    NmsDemo {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        mode: NmsMode,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        #[arg(long, default_value_t = 0.0)]
        score_threshold: f64,
        /// Output file; written to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum NmsMode {
    Softer,
    Standard,
}

enum Failure {
    Config(String),
    Io(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Io { .. } => Failure::Io(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        let msg = format!("{e:#}");
        if e.chain().any(|c| c.is::<std::io::Error>()) {
            Failure::Io(msg)
        } else {
            Failure::Config(msg)
        }
    }
}

impl From<disco_core::Error> for Failure {
    fn from(e: disco_core::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    ExperimentConfig::from_json(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::Io(format!("{}: {e}", p.display()))),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::Io(format!("stdout: {e}"))),
    }
}

fn perturb(input: &Path, out: &Path, level: f64, seed: u64) -> Result<(), Failure> {
    let cfg = NoiseConfig::new(level, seed)?;
    let records = noise_sim::read_annotations(input)?;
    let noisy = noise_sim::perturb_dataset(&records, &cfg).with_context(|| input.display().to_string())?;
    noise_sim::write_annotations(out, &noisy)?;
    Ok(())
}

fn dump_scenes(cfg: &ExperimentConfig, out: &Path) -> Result<(), Failure> {
    let Some(&seed) = cfg.seeds.first() else {
        return Ok(());
    };
    let estimator = disco_core::estimation::LinearEstimator::zeros(cfg.estimator.learning_rate);
    let mut records = Vec::new();
    for i in 0..cfg.scenes as u64 {
        let s = harness::pipeline::scene_seed(seed, i);
        let scene = harness::pipeline::generate_trial_scene(cfg, s)?;
        let outcome = harness::run_disco_iteration(&scene, cfg, &estimator, s)?;
        records.extend(surrogate::dump_scene(
            &format!("scene_{i:06}"),
            &scene,
            &outcome.proposals,
        )?);
    }
    let path = out.join("scenes.json");
    let text = serde_json::to_string_pretty(&records).map_err(|e| Failure::Config(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn simulate(config: &Path, out: &Path, threads: Option<usize>, dump: bool) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let report = harness::with_threads(threads, || harness::run_experiment(&cfg))??;
    harness::write_report(out, &report)?;
    if dump {
        harness::with_threads(threads, || dump_scenes(&cfg, out))??;
    }
    Ok(())
}

fn sweep(config: &Path, vary: &str, out: Option<&Path>, threads: Option<usize>) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let (key, values) = vary
        .split_once('=')
        .ok_or_else(|| Failure::Config(format!("--vary expects key=v1,v2,... (got {vary:?})")))?;
    let values: Vec<String> = values
        .split(',')
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect();
    if values.is_empty() {
        return Err(Failure::Config(format!("--vary {key}: no values")));
    }
    let result = harness::with_threads(threads, || harness::run_sweep(&cfg, key.trim(), &values))??;
    match out {
        Some(dir) => harness::write_sweep(dir, &result)?,
        None => harness::experiment::write_metrics(
            std::io::stdout().lock(),
            result.reports.iter().flat_map(|r| r.trials.iter()),
        )
        .map_err(|e| Failure::Io(format!("stdout: {e}")))?,
    }
    Ok(())
}

fn nms_demo(input: &Path, mode: NmsMode, iou: f64, score_threshold: f64, out: Option<&Path>) -> Result<(), Failure> {
    if !(0.0..=1.0).contains(&iou) {
        return Err(Failure::Config(format!("--iou must lie in [0, 1], got {iou}")));
    }
    let text = std::fs::read_to_string(input).map_err(|e| Failure::Io(format!("{}: {e}", input.display())))?;
    let dets: Vec<Detection> =
        serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", input.display())))?;
    let kept = match mode {
        NmsMode::Standard => standard_nms(&dets, iou),
        NmsMode::Softer => softer_nms(&dets, iou, score_threshold),
    };
    let text = serde_json::to_string_pretty(&kept).map_err(|e| Failure::Config(e.to_string()))?;
    write_output(out, &(text + "\n"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Perturb {
            input,
            out,
            level,
            seed,
        } => perturb(input, out, *level, *seed),
        Command::Simulate {
            config,
            out,
            threads,
            dump_scenes,
        } => simulate(config, out, *threads, *dump_scenes),
        Command::Sweep {
            config,
            vary,
            out,
            threads,
        } => sweep(config, vary, out.as_deref(), *threads),
        Command::NmsDemo {
            input,
            mode,
            iou,
            score_threshold,
            out,
        } => nms_demo(input, *mode, *iou, *score_threshold, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_IO)
        }
    }
}
