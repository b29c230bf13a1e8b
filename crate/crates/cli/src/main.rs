use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use gamorra_core::benchmark::{run_suite, BenchConfig};
use gamorra_core::experiment::{calibrate, evaluate, EvalOptions, ModelKind, Run};
use gamorra_core::metrics::{render_report, ReportFormat};
use gamorra_core::sim::{generate_sequence, read_actuals, write_actuals, GpuProfile, ScenarioConfig};
use gamorra_core::trace::{load_sequence, write_shader_store};
use gamorra_core::trainer::{build_observations, offline_train, write_log};
use gamorra_core::workload::Featurizer;
use gamorra_core::{FrameSequence, ModelWeights, PerfModel, TrainConfig, TrainerState, VectorLayout};

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;

#[derive(Parser)]
#[command(name = "gamorra", version, about = "GPU frametime workload model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trace with simulated frametimes.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        profile: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the calibration suite against a simulated GPU.
    Bench {
        #[arg(long)]
        profile: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100.0)]
        cap_ms: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fit offline weights on the first frames of a trace.
    Fit {
        #[command(flatten)]
        input: TraceArgs,
        #[arg(long)]
        perf: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stream a trace through the estimator and log every frame.
    Run {
        #[command(flatten)]
        input: TraceArgs,
        #[arg(long)]
        perf: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, value_enum, default_value_t = RunMode::Hybrid)]
        mode: RunMode,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare the workload model with the baseline predictors.
    Compare {
        #[command(flatten)]
        input: TraceArgs,
        #[arg(long)]
        perf: PathBuf,
        #[arg(long, default_value = "gm-h,gm-of,ar,fcm,frq")]
        models: String,
        /// Frames at the start of the trace used for calibration only.
        /// Defaults to the config's offline frame count.
        #[arg(long)]
        train_frames: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Profile whose frequency schedule feeds the FRQ model.
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long, default_value = "scenario")]
        scenario: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Time the predict path and report overhead and memory. Makes the
        /// report non-deterministic.
        #[arg(long)]
        measure_overhead: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(clap::Args)]
struct TraceArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    actuals: PathBuf,
    /// Shader directory; defaults to `shaders/` next to the trace.
    #[arg(long)]
    shaders: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RunMode {
    Hybrid,
    Offline,
}

struct Inputs {
    sequence: FrameSequence,
    actuals: Vec<f64>,
}

impl TraceArgs {
    fn load(&self) -> Result<Inputs> {
        let shaders = match &self.shaders {
            Some(dir) => dir.clone(),
            None => self
                .trace
                .parent()
                .unwrap_or_else(|| Path::new("."))
                .join("shaders"),
        };
        let sequence = load_sequence(&self.trace, &shaders)
            .with_context(|| format!("reading trace {}", self.trace.display()))?;
        let file = fs::File::open(&self.actuals)
            .with_context(|| format!("reading actuals {}", self.actuals.display()))?;
        let actuals = read_actuals(file)
            .with_context(|| format!("reading actuals {}", self.actuals.display()))?;
        if actuals.len() != sequence.frames.len() {
            bail!(
                "trace has {} frames but {} has {} rows",
                sequence.frames.len(),
                self.actuals.display(),
                actuals.len()
            );
        }
        Ok(Inputs { sequence, actuals })
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::load(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(TrainConfig::default()),
    }
}

fn load_perf(path: &Path) -> Result<PerfModel> {
    PerfModel::load(path).with_context(|| format!("reading perf model {}", path.display()))
}

fn load_profile(path: &Path) -> Result<GpuProfile> {
    GpuProfile::load(path).with_context(|| format!("reading profile {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = fs::File::create(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn layout(perf: &PerfModel, seq: &FrameSequence) -> VectorLayout {
    VectorLayout::with_cs(perf.function(gamorra_core::Stage::Cs).is_some() && seq.uses_compute())
}

fn simulate(scenario: &Path, profile: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let profile = load_profile(profile)?;
    let mut scenario = ScenarioConfig::load(scenario)
        .with_context(|| format!("reading scenario {}", scenario.display()))?;
    if let Some(s) = seed {
        scenario.seed = s;
    }
    let generated = generate_sequence(&profile, &scenario)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut trace = create(&out.join("trace.jsonl"))?;
    gamorra_core::write_trace(&generated.sequence, &mut trace)?;
    trace.flush()?;
    let mut actuals = create(&out.join("actuals.csv"))?;
    write_actuals(&generated.actuals, &mut actuals)?;
    actuals.flush()?;
    write_shader_store(&generated.sequence.shader_store, &out.join("shaders"))?;
    println!(
        "simulated {} frames into {}",
        generated.actuals.len(),
        out.display()
    );
    Ok(())
}

fn bench(profile: &Path, out: &Path, cap_ms: f64, seed: u64) -> Result<()> {
    let profile = load_profile(profile)?;
    let config = BenchConfig {
        cap_ms,
        seed,
        ..Default::default()
    };
    let model = run_suite(&profile, &config)?;
    let mut w = create(out)?;
    w.write_all(model.to_json()?.as_bytes())?;
    w.write_all(b"\n")?;
    w.flush()?;
    println!(
        "benchmarked {} stage functions, baseline {:.6} ms",
        model.functions.len(),
        model.beta0_baseline_ms
    );
    Ok(())
}

fn fit(input: &TraceArgs, perf: &Path, config: &Option<PathBuf>, out: &Path) -> Result<()> {
    let config = load_config(config)?;
    let perf = load_perf(perf)?;
    let data = input.load()?;
    let programs = data.sequence.programs()?;
    let featurizer = Featurizer::new(&perf, &programs, layout(&perf, &data.sequence));
    let obs = build_observations(
        &featurizer,
        &data.sequence,
        &data.actuals,
        config.offline_frame_count,
    )?;
    let report = offline_train(&obs, &config)?;
    let mut w = create(out)?;
    w.write_all(report.weights.to_json()?.as_bytes())?;
    w.write_all(b"\n")?;
    w.flush()?;
    println!(
        "fitted {} weights on {} frames: train MAE {:.6} ms, test MAE {:.6} ms ({} held out)",
        report.weights.dim,
        report.train_samples,
        report.train_mae_ms,
        report.test_mae_ms,
        report.test_samples
    );
    Ok(())
}

fn run(
    input: &TraceArgs,
    perf: &Path,
    weights: &Path,
    mode: RunMode,
    config: &Option<PathBuf>,
    out: &Path,
) -> Result<()> {
    let config = load_config(config)?;
    let perf = load_perf(perf)?;
    let weights = ModelWeights::load(weights)
        .with_context(|| format!("reading weights {}", weights.display()))?;
    let data = input.load()?;
    let programs = data.sequence.programs()?;
    let featurizer = Featurizer::new(&perf, &programs, layout(&perf, &data.sequence));
    let mut state = TrainerState::new(weights, &config)?;
    let hybrid = mode == RunMode::Hybrid;
    let mut logs = Vec::with_capacity(data.actuals.len());
    for (frame, &actual) in data.sequence.frames.iter().zip(&data.actuals) {
        let vectors = featurizer.frame_vectors(frame)?;
        logs.push(state.process_frame(&vectors, actual, hybrid)?);
    }
    let switches = logs.windows(2).filter(|w| w[0].mode != w[1].mode).count();
    write_log(&logs, create(out)?)?;
    println!("ran {} frames, {switches} mode switches", logs.len());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn compare(
    input: &TraceArgs,
    perf: &Path,
    models: &str,
    train_frames: Option<usize>,
    config: &Option<PathBuf>,
    profile: &Option<PathBuf>,
    scenario: &str,
    seed: u64,
    measure_overhead: bool,
    out: &Path,
) -> Result<()> {
    let models = ModelKind::parse_list(models)?;
    let config = load_config(config)?;
    let perf = load_perf(perf)?;
    let data = input.load()?;
    let frequencies: Option<Vec<f64>> = match profile {
        Some(p) => {
            let profile = load_profile(p)?;
            Some(
                data.sequence
                    .frames
                    .iter()
                    .map(|f| profile.frequency_at(f.frame_index))
                    .collect(),
            )
        }
        None => None,
    };
    let n_train = train_frames.unwrap_or(config.offline_frame_count);
    let n = data.actuals.len();
    if n_train == 0 || n_train >= n {
        return Err(gamorra_core::Error::InsufficientData { rows: n, dim: n_train + 1 })
            .context("the trace must be longer than the training prefix");
    }
    let part = |a: usize, b: usize| FrameSequence {
        frames: data.sequence.frames[a..b].to_vec(),
        shader_store: data.sequence.shader_store.clone(),
    };
    let (train_seq, eval_seq) = (part(0, n_train), part(n_train, n));
    let train = Run {
        sequence: &train_seq,
        actuals: &data.actuals[..n_train],
        frequencies: frequencies.as_deref().map(|f| &f[..n_train]),
    };
    let eval = Run {
        sequence: &eval_seq,
        actuals: &data.actuals[n_train..],
        frequencies: frequencies.as_deref().map(|f| &f[n_train..]),
    };
    let options = EvalOptions {
        config,
        measure_overhead,
    };
    info!("calibrating on {n_train} frames, evaluating {} frames", n - n_train);
    let calibration = calibrate(&perf, &train, &options.config)?;
    let (runs, results) = evaluate(&perf, &calibration, &eval, &models, scenario, seed, &options)?;

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let csv = render_report(&results, ReportFormat::Csv)?;
    fs::write(out.join("report.csv"), &csv)
        .with_context(|| format!("writing {}", out.join("report.csv").display()))?;
    let mut text = render_report(&results, ReportFormat::Text)?;
    let intercept = if options.config.fcm_intercept { "on" } else { "off" };
    text.push_str(&format!("note: FCM intercept {intercept}\n"));
    fs::write(out.join("report.txt"), &text)
        .with_context(|| format!("writing {}", out.join("report.txt").display()))?;

    let mut est = create(&out.join("estimates.csv"))?;
    write!(est, "frame,actual")?;
    for r in &runs {
        write!(est, ",{}", r.model)?;
    }
    writeln!(est)?;
    for (i, (frame, actual)) in eval_seq.frames.iter().zip(eval.actuals).enumerate() {
        write!(est, "{},{actual:.6}", frame.frame_index)?;
        for r in &runs {
            write!(est, ",{:.6}", r.estimates[i])?;
        }
        writeln!(est)?;
    }
    est.flush()?;
    print!("{text}");
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            scenario,
            profile,
            seed,
            out,
        } => simulate(&scenario, &profile, seed, &out),
        Command::Bench {
            profile,
            out,
            cap_ms,
            seed,
        } => bench(&profile, &out, cap_ms, seed),
        Command::Fit {
            input,
            perf,
            config,
            out,
        } => fit(&input, &perf, &config, &out),
        Command::Run {
            input,
            perf,
            weights,
            mode,
            config,
            out,
        } => run(&input, &perf, &weights, mode, &config, &out),
        Command::Compare {
            input,
            perf,
            models,
            train_frames,
            config,
            profile,
            scenario,
            seed,
            measure_overhead,
            out,
        } => compare(
            &input,
            &perf,
            &models,
            train_frames,
            &config,
            &profile,
            &scenario,
            seed,
            measure_overhead,
            &out,
        ),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use gamorra_core::Error;
    let data = err.chain().any(|e| {
        matches!(
            e.downcast_ref::<Error>(),
            Some(Error::InsufficientData { .. } | Error::TooFewSamples(_))
        )
    });
    if data {
        EXIT_DATA
    } else {
        EXIT_USAGE
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GAMORRA_LOG", "warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
