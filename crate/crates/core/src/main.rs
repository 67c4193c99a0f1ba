use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tract::harness::{self, BenchStatus, RunConfig, BENCH_FAIL_PCT, BENCH_WARN_PCT};
use tract::verify::{self, Hooks, Level};
use tract::Error;

#[derive(Parser)]
#[command(name = "tract", version, about = "First-layer gradient preconditioning: train, verify, inspect, bench")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a preset and write metrics.csv plus params.trct.
    Train(RunArgs),
    /// Run the oracle checks.
    Verify {
        #[arg(long, default_value = "quick")]
        level: String,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
    /// Gradient diagnostics for one batch at initialization.
    Inspect {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 0)]
        batch_index: usize,
    },
    /// Per-step time with TrAct off and on.
    Bench {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 20)]
        steps: usize,
        #[arg(long, default_value_t = 5)]
        rounds: usize,
    },
}

/// Run configuration. Values from `--config` are applied first; flags win.
#[derive(Args)]
struct RunArgs {
    /// key=value file using the flag names as keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    data_dir: Option<String>,
    #[arg(long)]
    train_size: Option<String>,
    #[arg(long)]
    test_size: Option<String>,
    #[arg(long)]
    data_seed: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    epochs: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    batch_size: Option<String>,
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    first_layer_optimizer: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    lr: Option<String>,
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    momentum: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    weight_decay: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    lambda: Option<String>,
    /// on|off
    #[arg(long)]
    tract: Option<String>,
    /// standard|range01|range0255
    #[arg(long)]
    standardize: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    label_smoothing: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out: Option<String>,
    /// on|off; off writes wall_seconds as 0.
    #[arg(long)]
    timing: Option<String>,
    #[arg(long)]
    run_id: Option<String>,
}

impl RunArgs {
    fn resolve(&self) -> tract::Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::InvalidArgument(format!("cannot read config {}: {e}", path.display())))?;
            cfg.apply_file_text(&text)?;
        }
        let flags = [
            ("dataset", &self.dataset),
            ("data-dir", &self.data_dir),
            ("train-size", &self.train_size),
            ("test-size", &self.test_size),
            ("data-seed", &self.data_seed),
            ("model", &self.model),
            ("epochs", &self.epochs),
            ("batch-size", &self.batch_size),
            ("optimizer", &self.optimizer),
            ("first-layer-optimizer", &self.first_layer_optimizer),
            ("lr", &self.lr),
            ("schedule", &self.schedule),
            ("momentum", &self.momentum),
            ("weight-decay", &self.weight_decay),
            ("lambda", &self.lambda),
            ("tract", &self.tract),
            ("standardize", &self.standardize),
            ("label-smoothing", &self.label_smoothing),
            ("seed", &self.seed),
            ("out", &self.out),
            ("timing", &self.timing),
            ("run-id", &self.run_id),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) | Error::Geometry(_) | Error::Shape(_) => 2,
        Error::Data(_) | Error::Format { .. } | Error::Io(_) => 3,
        _ => 1,
    }
}

fn set_threads() -> Result<(), Error> {
    let Ok(v) = std::env::var("TRACT_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidArgument(format!("TRACT_THREADS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

fn train(args: &RunArgs) -> tract::Result<u8> {
    let cfg = args.resolve()?;
    let out_dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(cfg.run_id()));
    let outcome = harness::train(&cfg)?;
    for r in &outcome.rows {
        println!(
            "epoch {:>3} {:<7} loss {:.6} top1 {:.4} lr {:.5}",
            r.epoch, r.split, r.loss, r.top1, r.lr_now
        );
    }
    harness::write_outputs(&out_dir, &outcome)?;
    println!("wrote {}", out_dir.display());
    if outcome.aborted {
        eprintln!("run aborted: non-finite loss");
        return Ok(1);
    }
    Ok(0)
}

fn run(cli: Cli) -> tract::Result<u8> {
    set_threads()?;
    match cli.cmd {
        Cmd::Train(args) => train(&args),
        Cmd::Verify { level, seed } => {
            let level: Level = level.parse()?;
            let results = verify::run_suite(level, Hooks::default(), seed);
            for r in &results {
                println!("{r}");
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            println!("{} checks, {failed} failed", results.len());
            Ok(u8::from(failed > 0))
        }
        Cmd::Inspect { run, batch_index } => {
            let report = harness::inspect(&run.resolve()?, batch_index)?;
            println!("{report}");
            Ok(0)
        }
        Cmd::Bench { run, steps, rounds } => {
            let report = harness::bench(&run.resolve()?, steps, rounds)?;
            println!("{report}");
            match report.status() {
                BenchStatus::Ok => Ok(0),
                BenchStatus::Warn => {
                    eprintln!("warning: overhead above {BENCH_WARN_PCT}%");
                    Ok(0)
                }
                BenchStatus::Fail => {
                    eprintln!("overhead above {BENCH_FAIL_PCT}%");
                    Ok(1)
                }
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
