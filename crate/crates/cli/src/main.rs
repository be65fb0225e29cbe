use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use fedspzo::cost::payload_header_bytes;
use fedspzo::harness::{
    compare, run_experiment, verify_config, ExperimentConfig, RunMetrics, RunOptions, Target, CHECKPOINT_FILE,
    METRICS_FILE,
};
use fedspzo::protocol::{decode_payload, ClientPayload, PayloadMode};

#[derive(Parser)]
#[command(name = "fedspzo", version, about = "Federated zero-order training with split perturbations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write config echo, metrics and final checkpoint.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overwrite an existing run in the output directory.
        #[arg(long)]
        force: bool,
        /// Threads for clients within a round (results do not depend on it).
        #[arg(long)]
        workers: Option<usize>,
        /// Also save the last round's client payloads.
        #[arg(long)]
        dump_payloads: bool,
    },
    /// Rounds and FLOPs each run needs to reach loss or accuracy targets.
    Compare {
        /// Metrics files, or run directories containing metrics.jsonl.
        #[arg(required = true, num_args = 2..)]
        runs: Vec<PathBuf>,
        /// Index of the run the others are normalized against.
        #[arg(long, default_value_t = 0)]
        baseline: usize,
        /// Test-loss target; defaults to the baseline's best loss.
        #[arg(long = "loss-target")]
        loss_targets: Vec<f64>,
        /// Test-accuracy target.
        #[arg(long = "acc-target")]
        acc_targets: Vec<f64>,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Decode a client payload file and dump its fields.
    InspectPayload {
        path: PathBuf,
        /// Also print a hex dump of the raw bytes.
        #[arg(long)]
        hex: bool,
    },
    /// Run the invariant checks on a config at reduced scale.
    Verify {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path, std::env::vars()).with_context(|| format!("loading {}", path.display()))
}

fn metrics_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(METRICS_FILE)
    } else {
        p.to_path_buf()
    }
}

fn run(config: &Path, out: &Path, force: bool, workers: Option<usize>, dump_payloads: bool) -> Result<()> {
    let cfg = load_config(config)?;
    let opts = RunOptions {
        force,
        workers,
        dump_payloads,
    };
    let summary = run_experiment(&cfg, out, &opts)?;
    for r in &summary.records {
        println!(
            "round {:>5}  loss {:.5}  acc {:.4}  fw_flops {:>14}  upload {:>10} B",
            r.round, r.loss, r.acc, r.fw_flops, r.upload_bytes
        );
    }
    println!("metrics: {}", out.join(METRICS_FILE).display());
    println!("checkpoint: {}", out.join(CHECKPOINT_FILE).display());
    Ok(())
}

fn compare_runs(runs: &[PathBuf], baseline: usize, loss: &[f64], acc: &[f64], json: bool) -> Result<()> {
    let runs = runs
        .iter()
        .map(|p| {
            let path = metrics_path(p);
            RunMetrics::load(&path).with_context(|| format!("reading {}", path.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    let targets: Vec<Target> = loss
        .iter()
        .map(|&v| Target::Loss(v))
        .chain(acc.iter().map(|&v| Target::Accuracy(v)))
        .collect();
    let report = compare(&runs, baseline, &targets)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{report}");
    }
    Ok(())
}

fn describe(payload: &ClientPayload, len: usize) -> String {
    let mut s = String::new();
    let mode = match payload.mode {
        PayloadMode::WithSeeds => "with-seeds",
        PayloadMode::ScalarsOnly => "scalars-only",
    };
    s.push_str(&format!("bytes        {len} (header {})\n", payload_header_bytes(payload.mode)));
    s.push_str(&format!("client_id    {}\n", payload.client_id));
    s.push_str(&format!("round_id     {}\n", payload.round_id));
    s.push_str(&format!("mode         {mode}\n"));
    s.push_str(&format!("K            {}\n", payload.k()));
    s.push_str(&format!("P1, P2       {}, {}\n", payload.p1, payload.p2));
    if let Some(root) = payload.root_seed {
        s.push_str(&format!("root_seed    {}\n", root.0));
    }
    for (k, step) in payload.steps.iter().enumerate() {
        s.push_str(&format!("step {k:>3}  g1 {:+.6e}  g2 {:+.6e}", step.g1, step.g2));
        if !step.s1.is_empty() || !step.s2.is_empty() {
            let fmt = |v: &[fedspzo::perturb::Seed]| v.iter().map(|x| x.0.to_string()).collect::<Vec<_>>().join(",");
            s.push_str(&format!("  S1 [{}]  S2 [{}]", fmt(&step.s1), fmt(&step.s2)));
        }
        s.push('\n');
    }
    s
}

fn hex_dump(bytes: &[u8]) -> String {
    bytes
        .chunks(16)
        .enumerate()
        .map(|(i, row)| {
            let hex: Vec<String> = row.iter().map(|b| format!("{b:02x}")).collect();
            format!("{:08x}  {}\n", i * 16, hex.join(" "))
        })
        .collect()
}

fn inspect(path: &Path, hex: bool) -> Result<()> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let payload = decode_payload(&bytes).with_context(|| format!("decoding {}", path.display()))?;
    print!("{}", describe(&payload, bytes.len()));
    if hex {
        print!("{}", hex_dump(&bytes));
    }
    Ok(())
}

fn verify(config: &Path) -> Result<bool> {
    let cfg = load_config(config)?;
    let checks = verify_config(&cfg)?;
    for c in &checks {
        println!("{c}");
    }
    Ok(checks.iter().all(|c| c.passed))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            out,
            force,
            workers,
            dump_payloads,
        } => run(&config, &out, force, workers, dump_payloads),
        Command::Compare {
            runs,
            baseline,
            loss_targets,
            acc_targets,
            json,
        } => compare_runs(&runs, baseline, &loss_targets, &acc_targets, json),
        Command::InspectPayload { path, hex } => inspect(&path, hex),
        Command::Verify { config } => verify(&config).and_then(|ok| {
            if ok {
                Ok(())
            } else {
                bail!("invariant checks failed")
            }
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
