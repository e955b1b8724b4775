use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cometh::dataset::{self, benchmark_as_scenarios, load_canonicals};
use cometh::gateway::{BackendKind, Gateway, TemplateId};
use cometh::pipeline::{self, PIPELINE};
use cometh::run::{write_json, RunDir, Stage, StageOutcome};
use cometh::{grid, trace, Error, Result};
use cometh_core::gridsearch::{sweep, GridSpec};
use cometh_core::synthetic::{generate_benchmark, SampleSpec};

#[derive(Parser)]
#[command(name = "cometh", version, about = "Learn moral contexts from human judgment distributions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark dataset from the canonical distributions.
    SynthGen(SynthArgs),
    /// Sweep (delta_add, delta_merge) over synthetic benchmarks.
    Gridsearch(GridArgs),
    /// Cluster scenarios into core actions.
    Preprocess(StageArgs),
    /// Learn moral contexts per action.
    Learn(StageArgs),
    /// Extract and evaluate contextual features per learned context.
    Features(StageArgs),
    /// Train the generalization model and cross-validate it.
    Train(StageArgs),
    /// Alignment tables recomputed from the persisted artifacts.
    Evaluate(StageArgs),
    /// Run preprocess, learn, features, train and evaluate in order.
    Pipeline(StageArgs),
    /// End-to-end judge prompts: alignment and error rates.
    Baseline(StageArgs),
    /// Follow one scenario through a finished run.
    Trace(TraceArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 30)]
    per_canonical: usize,
    #[arg(long, default_value_t = 1000)]
    sample_size: u64,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON list of {label, p}; defaults to the five built-in canonicals.
    #[arg(long)]
    canonicals: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    /// Grid specification (JSON).
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    canonicals: Option<PathBuf>,
    /// Worker threads; defaults to all cores.
    #[arg(long, conflicts_with = "serial")]
    threads: Option<usize>,
    #[arg(long)]
    serial: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Mock,
    Remote,
}

#[derive(Args)]
struct StageArgs {
    #[arg(long)]
    run_dir: PathBuf,
    /// Run configuration; required the first time a run directory is used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    backend: Option<Backend>,
    /// Re-run even if the outputs are current.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TraceArgs {
    scenario_id: String,
    #[arg(long)]
    run_dir: PathBuf,
    #[arg(long, default_value = "FeatExtract1")]
    template: TemplateId,
    #[arg(long, value_enum)]
    backend: Option<Backend>,
    /// Print JSON instead of text.
    #[arg(long)]
    json: bool,
}

fn backend(b: Option<Backend>) -> Option<BackendKind> {
    b.map(|b| match b {
        Backend::Mock => BackendKind::Mock,
        Backend::Remote => BackendKind::Remote,
    })
}

fn synth_gen(args: &SynthArgs) -> Result<()> {
    let canonicals = load_canonicals(args.canonicals.as_deref())?;
    let spec = SampleSpec {
        per_canonical: args.per_canonical,
        sample_size: args.sample_size,
        noise: args.noise,
        seed: args.seed,
    };
    let samples = generate_benchmark(&spec, &canonicals).map_err(|e| Error::Config(e.to_string()))?;
    write_json(&args.out, &benchmark_as_scenarios(&samples))?;
    println!("wrote {} samples to {}", samples.len(), args.out.display());
    Ok(())
}

fn gridsearch(args: &GridArgs) -> Result<()> {
    let spec: GridSpec = dataset::read_json(&args.grid).map_err(|e| match e {
        Error::Data(m) => Error::Config(m),
        other => other,
    })?;
    let canonicals = load_canonicals(args.canonicals.as_deref())?;
    let result = if args.serial {
        sweep(&spec, &canonicals).map_err(Error::data)?
    } else {
        grid::parallel_sweep(&spec, &canonicals, args.threads)?
    };
    grid::write_outputs(&args.out, &result)?;
    let best = result.argmin_loss();
    println!(
        "{} cells; lowest mean loss {:.4} at delta_add = {}, delta_merge = {}",
        result.cells.len(),
        best.mean.loss,
        best.delta_add,
        best.delta_merge
    );
    Ok(())
}

fn stages(args: &StageArgs, stages: &[Stage]) -> Result<()> {
    let mut run = RunDir::open(&args.run_dir, args.config.as_deref(), backend(args.backend))?;
    let gateway = Gateway::new(run.config.gateway.clone())?;
    for &stage in stages {
        match pipeline::run_stage(&mut run, &gateway, stage, args.force)? {
            StageOutcome::Ran => {
                let ms = run.manifest.stages[&stage].wall_ms;
                println!("{}: done in {ms} ms", stage.name());
            }
            StageOutcome::Skipped => println!("{}: up to date", stage.name()),
        }
    }
    if gateway.backend_calls() > 0 {
        println!("{} model calls ({} backend)", gateway.backend_calls(), gateway.config().model_name);
    }
    Ok(())
}

fn trace_cmd(args: &TraceArgs) -> Result<()> {
    let run = RunDir::open(&args.run_dir, None, backend(args.backend))?;
    let gateway = Gateway::new(run.config.gateway.clone())?;
    let t = trace::trace(&run, &gateway, &args.scenario_id, args.template)?;
    let text = if args.json {
        serde_json::to_string_pretty(&t).map_err(Error::internal)? + "\n"
    } else {
        t.to_string()
    };
    // A closed pipe (`cometh trace ... | head`) is not an error.
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::io("<stdout>", e)),
        _ => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::SynthGen(a) => synth_gen(a),
        Command::Gridsearch(a) => gridsearch(a),
        Command::Preprocess(a) => stages(a, &[Stage::Preprocess]),
        Command::Learn(a) => stages(a, &[Stage::Learn]),
        Command::Features(a) => stages(a, &[Stage::Features]),
        Command::Train(a) => stages(a, &[Stage::Train]),
        Command::Evaluate(a) => stages(a, &[Stage::Evaluate]),
        Command::Pipeline(a) => stages(a, &PIPELINE),
        Command::Baseline(a) => stages(a, &[Stage::Baseline]),
        Command::Trace(a) => trace_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
