//! Operator entry point: dataset loading, training, microbenchmarks, and
//! the rounding-analysis harness.

use clap::{Args, Parser, Subcommand};
use deepmpc::data::{load_mnist_dir, resolve_data_dir, Split};
use deepmpc::emulate::EmuEngine;
use deepmpc::engine::Engine;
use deepmpc::fixed::{FixedConfig, Rounding};
use deepmpc::nn::models::ModelKind;
use deepmpc::nn::optim::OptimizerKind;
use deepmpc::nn::train::{EpochMetrics, TrainSettings, Trainer};
use deepmpc::roundlab::{run_rounding_experiment, RoundingExperiment, Which};
use deepmpc::rss3::PartyEngine;
use deepmpc::secmath;
use deepmpc::transport::loopback::run_parties;
use deepmpc::transport::tcp::{parse_hosts, setup_tcp_session};
use deepmpc::transport::{CommStats, PartyId};
use std::io::Write;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "deepmpc", about = "Quantized neural network training under 3-party MPC")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model, writing per-epoch metrics as CSV.
    Train(TrainArgs),
    /// Measure communication cost of a single secure operation.
    Microbench(BenchArgs),
    /// Run a rounding-error experiment.
    Analyze(AnalyzeArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Model: A, B, C, D, or alexnet.
    #[arg(long, default_value = "A")]
    model: ModelKind,
    /// Optimizer: sgd, adam, or amsgrad.
    #[arg(long, default_value = "sgd")]
    optimizer: OptimizerKind,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 15)]
    epochs: usize,
    /// Fractional bits.
    #[arg(long, default_value_t = 16)]
    f: u32,
    /// Total value bits.
    #[arg(long, default_value_t = 31)]
    k: u32,
    /// Rounding mode: prob or nearest.
    #[arg(long, default_value = "prob")]
    rounding: Rounding,
    /// Execution mode: emulate or 3pc.
    #[arg(long, default_value = "emulate")]
    mode: String,
    /// Party id (3pc mode).
    #[arg(long)]
    party: Option<u8>,
    /// Hosts file (3pc mode), or the literal `loopback` to run all three
    /// parties as threads in this process.
    #[arg(long)]
    hosts: Option<String>,
    /// Dataset directory (defaults to $DEEPMPC_DATA, then ./data/mnist).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Metrics CSV path.
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Enable the optional dropout layer (model C).
    #[arg(long, default_value_t = false)]
    dropout: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// Operation: mul, dot, trunc, exp2, invsqrt, or div.
    #[arg(long)]
    op: String,
    /// Vector length (dot length, or element count for the others).
    #[arg(long, default_value_t = 1)]
    size: usize,
    /// Rounding mode used by truncating operations.
    #[arg(long, default_value = "prob")]
    rounding: Rounding,
    /// Hosts file or `loopback`.
    #[arg(long, default_value = "loopback")]
    hosts: String,
    /// Party id (TCP mode).
    #[arg(long)]
    party: Option<u8>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Which proposition to test: prop1, prop2, or prop3.
    #[arg(long)]
    which: Which,
    #[arg(long, default_value_t = 8)]
    m: usize,
    #[arg(long, default_value_t = 8)]
    n: usize,
    #[arg(long, default_value_t = 8)]
    p: usize,
    /// Entry-magnitude exponent: entries sampled below 2^k_bound.
    #[arg(long, default_value_t = 4)]
    k_bound: u32,
    #[arg(long, default_value_t = 1.0)]
    iota: f64,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// CSV output path (defaults to stdout).
    #[arg(long)]
    metrics: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Train(args) => run_train(args),
        Command::Microbench(args) => run_microbench(args),
        Command::Analyze(args) => run_analyze(args),
    };
    if let Err(err) = code {
        eprintln!("error: {err}");
        std::process::exit(1);
    }
}

fn config_echo(out: &mut impl Write, pairs: &[(&str, String)]) -> std::io::Result<()> {
    for (k, v) in pairs {
        writeln!(out, "# {k}={v}")?;
    }
    Ok(())
}

fn open_metrics(path: &Option<PathBuf>) -> Box<dyn Write> {
    match path {
        Some(p) => Box::new(std::fs::File::create(p).expect("create metrics file")),
        None => Box::new(std::io::stdout()),
    }
}

fn run_train(args: TrainArgs) -> Result<(), Box<dyn std::error::Error>> {
    let data_dir = resolve_data_dir(args.data.as_deref());
    let dataset = load_mnist_dir(&data_dir)?;
    let settings = TrainSettings {
        model: args.model,
        optimizer: args.optimizer,
        lr: args.lr,
        batch_size: args.batch_size,
        epochs: args.epochs,
        dropout: args.dropout,
        seed: args.seed,
    };
    let echo = vec![
        ("model", format!("{:?}", args.model)),
        ("optimizer", format!("{:?}", args.optimizer)),
        ("lr", args.lr.to_string()),
        ("batch_size", args.batch_size.to_string()),
        ("epochs", args.epochs.to_string()),
        ("f", args.f.to_string()),
        ("k", args.k.to_string()),
        ("rounding", format!("{:?}", args.rounding)),
        ("mode", args.mode.clone()),
        ("seed", args.seed.to_string()),
        ("dropout", args.dropout.to_string()),
        ("data", data_dir.display().to_string()),
    ];

    match args.mode.as_str() {
        "emulate" => {
            let mut out = open_metrics(&args.metrics);
            config_echo(&mut out, &echo)?;
            writeln!(out, "epoch,loss,error")?;
            if args.f >= 32 {
                let cfg = FixedConfig::new::<u128>(args.f, args.k)?;
                let mut e = EmuEngine::<u128>::new(cfg, args.rounding, args.seed)?;
                run_train_engine(&mut e, settings, &dataset.train, &dataset.test, true, &mut out)?;
            } else {
                let cfg = FixedConfig::new::<u64>(args.f, args.k)?;
                let mut e = EmuEngine::<u64>::new(cfg, args.rounding, args.seed)?;
                run_train_engine(&mut e, settings, &dataset.train, &dataset.test, true, &mut out)?;
            }
            Ok(())
        }
        "3pc" => {
            let cfg = FixedConfig::new::<u64>(args.f, args.k)?;
            let hosts = args
                .hosts
                .clone()
                .ok_or("3pc mode requires --hosts")?;
            let seed_bytes = session_seed(args.seed);
            if hosts == "loopback" {
                let rounding = args.rounding;
                let train = dataset.train.clone();
                let test = dataset.test.clone();
                let settings2 = settings.clone();
                let metrics = run_parties(seed_bytes, move |session| {
                    let me = session.me;
                    let mut e = PartyEngine::new(session, cfg, rounding).unwrap();
                    let mut tr = Trainer::new(&mut e, settings2.clone()).unwrap();
                    let rows = tr
                        .run(&mut e, &train, &test, PartyId(0), me == PartyId(0), |_| {})
                        .unwrap();
                    (rows, e.comm())
                });
                let mut out = open_metrics(&args.metrics);
                config_echo(&mut out, &echo)?;
                writeln!(out, "epoch,loss,error")?;
                for m in &metrics[0].0 {
                    writeln!(out, "{},{:.6},{:.4}", m.epoch, m.loss, m.test_error)?;
                }
                let total_bits: u64 = metrics.iter().map(|(_, c)| c.bits_sent).sum();
                eprintln!(
                    "communication: {:.3} GB total over {} epochs",
                    total_bits as f64 / 8e9,
                    args.epochs
                );
                Ok(())
            } else {
                let party = PartyId::new(args.party.ok_or("3pc mode requires --party")?)?;
                let endpoints = parse_hosts(&std::fs::read_to_string(&hosts)?)?;
                let session = setup_tcp_session(party, &endpoints, seed_bytes)?;
                let mut e = PartyEngine::new(session, cfg, args.rounding)?;
                let mut out = open_metrics(&args.metrics);
                config_echo(&mut out, &echo)?;
                writeln!(out, "epoch,loss,error")?;
                let mut tr = Trainer::new(&mut e, settings)?;
                let rows = tr.run(
                    &mut e,
                    &dataset.train,
                    &dataset.test,
                    PartyId(0),
                    party == PartyId(0),
                    |m| eprintln!("epoch {}: loss {:.4} error {:.4}", m.epoch, m.loss, m.test_error),
                )?;
                for m in &rows {
                    writeln!(out, "{},{:.6},{:.4}", m.epoch, m.loss, m.test_error)?;
                }
                eprintln!(
                    "party {party}: sent {:.3} GB",
                    e.comm().bits_sent as f64 / 8e9
                );
                Ok(())
            }
        }
        other => Err(format!("unknown mode `{other}` (emulate or 3pc)").into()),
    }
}

fn run_train_engine<E: Engine>(
    e: &mut E,
    settings: TrainSettings,
    train: &Split,
    test: &Split,
    have_data: bool,
    out: &mut impl Write,
) -> Result<(), Box<dyn std::error::Error>> {
    let mut tr = Trainer::new(e, settings)?;
    let rows: Vec<EpochMetrics> =
        tr.run(e, train, test, PartyId(0), have_data, |m| {
            eprintln!(
                "epoch {}: loss {:.4} error {:.4}",
                m.epoch, m.loss, m.test_error
            );
        })?;
    for m in &rows {
        writeln!(out, "{},{:.6},{:.4}", m.epoch, m.loss, m.test_error)?;
    }
    Ok(())
}

fn session_seed(seed: u64) -> [u8; 32] {
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes
}

/// One measured instance of a secure operation on the party engine.
fn bench_op(
    e: &mut PartyEngine,
    op: &str,
    size: usize,
    rounding: Rounding,
) -> deepmpc::Result<(CommStats, usize)> {
    let cfg = e.cfg();
    let f = cfg.f;
    let enc = |x: f64| (x * (2.0f64).powi(f as i32)).round() as u64;
    let mk = |e: &mut PartyEngine, v: Vec<u64>| -> deepmpc::Result<_> {
        let n = v.len();
        let vals = if e.me() == PartyId(0) { Some(v) } else { None };
        e.input(PartyId(0), vals.as_deref(), n)
    };
    match op {
        "mul" => {
            let x = mk(e, vec![enc(1.5); size])?;
            let y = mk(e, vec![enc(0.25); size])?;
            let before = e.comm();
            e.mul(&x, &y)?;
            Ok((e.comm().delta(before), size))
        }
        "dot" => {
            let x = mk(e, vec![enc(0.01); size])?;
            let y = mk(e, vec![enc(0.02); size])?;
            let before = e.comm();
            e.dot(&x, &y)?;
            Ok((e.comm().delta(before), 1))
        }
        "trunc" => {
            let x = mk(e, vec![enc(1.5) << f; size])?;
            let before = e.comm();
            e.trunc(&x, cfg.k + f, f, rounding)?;
            Ok((e.comm().delta(before), size))
        }
        "exp2" => {
            let x = mk(e, vec![enc(0.5); size])?;
            let before = e.comm();
            secmath::exp2(e, &x)?;
            Ok((e.comm().delta(before), size))
        }
        "invsqrt" => {
            let x = mk(e, vec![enc(2.0); size])?;
            let before = e.comm();
            secmath::invert_sqrt(e, &x)?;
            Ok((e.comm().delta(before), size))
        }
        "div" => {
            let x = mk(e, vec![enc(1.0); size])?;
            let y = mk(e, vec![enc(3.0); size])?;
            let before = e.comm();
            secmath::div(e, &x, &y)?;
            Ok((e.comm().delta(before), size))
        }
        other => Err(deepmpc::Error::Config(format!("unknown op `{other}`"))),
    }
}

fn run_microbench(args: BenchArgs) -> Result<(), Box<dyn std::error::Error>> {
    let cfg = FixedConfig::default64();
    let seed = session_seed(args.seed);
    if args.hosts == "loopback" {
        let op = args.op.clone();
        let rounding = args.rounding;
        let size = args.size;
        let results = run_parties(seed, move |session| {
            let mut e = PartyEngine::new(session, cfg, rounding).unwrap();
            bench_op(&mut e, &op, size, rounding).unwrap()
        });
        let total_bits: u64 = results.iter().map(|(d, _)| d.bits_sent).sum();
        let per_instance = total_bits as f64 / results[0].1 as f64;
        println!(
            "op={} size={} total_bits={} bits_per_instance={:.1} rounds={}",
            args.op, args.size, total_bits, per_instance, results[0].0.rounds
        );
        Ok(())
    } else {
        let party = PartyId::new(args.party.ok_or("TCP microbench requires --party")?)?;
        let endpoints = parse_hosts(&std::fs::read_to_string(&args.hosts)?)?;
        let session = setup_tcp_session(party, &endpoints, seed)?;
        let mut e = PartyEngine::new(session, cfg, args.rounding)?;
        let (delta, instances) = bench_op(&mut e, &args.op, args.size, args.rounding)?;
        println!(
            "party={} op={} size={} bits_sent={} rounds={} (per instance {:.1})",
            party.0,
            args.op,
            args.size,
            delta.bits_sent,
            delta.rounds,
            delta.bits_sent as f64 / instances as f64
        );
        Ok(())
    }
}

fn run_analyze(args: AnalyzeArgs) -> Result<(), Box<dyn std::error::Error>> {
    let spec = RoundingExperiment {
        m: args.m,
        n: args.n,
        p: args.p,
        k_bound: args.k_bound,
        iota: args.iota,
        trials: args.trials,
        seed: args.seed,
    };
    let report = run_rounding_experiment(&spec, args.which)?;
    let mut out = open_metrics(&args.metrics);
    config_echo(
        &mut out,
        &[
            ("which", format!("{:?}", args.which)),
            ("m", args.m.to_string()),
            ("n", args.n.to_string()),
            ("p", args.p.to_string()),
            ("k_bound", args.k_bound.to_string()),
            ("iota", args.iota.to_string()),
            ("trials", args.trials.to_string()),
            ("seed", args.seed.to_string()),
        ],
    )?;
    report.write_csv(&mut out)?;
    eprintln!(
        "{:?}: {} ({})",
        args.which,
        if report.pass { "pass" } else { "fail" },
        report.summary
    );
    if !report.pass {
        std::process::exit(2);
    }
    Ok(())
}
