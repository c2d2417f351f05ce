//! Command-line front end: train packed models on the iris data, print
//! per-phase operation-count reports, and compare packed training against
//! the plaintext reference trainer.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use packtrain_core::checkpoint;
use packtrain_core::iris;
use packtrain_core::nn::{self, Hyperparams, TrainOptions};
use packtrain_core::opcount::{measure_iteration, IterationReport, ReportRow};
use packtrain_core::plain::PlainNetwork;
use packtrain_core::{EngineContext, Error, Layout};

const IRIS_DIMS: [usize; 3] = [4, 10, 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Packing {
    Row,
    Diag,
    #[value(name = "diag-stepped")]
    DiagStepped,
}

impl Packing {
    fn layout(self) -> Layout {
        match self {
            Packing::Row => Layout::Row,
            Packing::Diag => Layout::Diagonal,
            Packing::DiagStepped => Layout::DiagonalStepped,
        }
    }

    /// Default level budget: the row pipeline spends extra mask levels per
    /// iteration and needs the deeper chain.
    fn default_levels(self) -> u32 {
        match self {
            Packing::Row => 12,
            Packing::Diag | Packing::DiagStepped => 9,
        }
    }
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// Weight packing layout.
    #[arg(long, value_enum, default_value = "diag")]
    packing: Packing,
    #[arg(long, default_value_t = 400)]
    epochs: usize,
    #[arg(long, default_value_t = 20)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    /// Level budget; defaults to 9 for diagonal packings and 12 for row.
    #[arg(long)]
    levels: Option<u32>,
    /// Standard deviation of per-slot noise injected after ciphertext
    /// multiplications; 0 disables.
    #[arg(long, default_value_t = 0.0)]
    noise_std: f64,
    #[arg(long, default_value_t = 0.1)]
    init_std: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Worker threads for per-sample passes within a batch.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Iris CSV path.
    #[arg(long, default_value = "data/iris.csv")]
    data: PathBuf,
    #[arg(long, default_value = "metrics.csv")]
    metrics_out: PathBuf,
    #[arg(long, default_value = "checkpoint.json")]
    checkpoint_out: PathBuf,
    /// Pack without padding and use the closed-form ragged transpose
    /// (diagnostic; not exact when the small axis does not divide the big
    /// one).
    #[arg(long, default_value_t = false)]
    experimental_ragged: bool,
}

#[derive(Parser, Debug)]
#[command(
    name = "packtrain",
    about = "Packed-register neural network training simulator",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train on the iris data and write metrics and a checkpoint.
    Train(RunArgs),
    /// Measure per-phase operation counts of one training iteration.
    Opcount {
        /// Comma-separated layer dimensions, e.g. 6,3,1.
        #[arg(long, default_value = "6,3,1")]
        net: String,
        #[arg(long, value_enum, default_value = "diag")]
        packing: Packing,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Train packed and plaintext models with identical seeds and compare.
    Compare(RunArgs),
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Shape(_) => 2,
        Error::Data(_) => 3,
        Error::DepthBudget { .. } | Error::DepthBudgetAt { .. } => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd_train(&args),
        Command::Opcount { net, packing, seed } => cmd_opcount(&net, packing, seed),
        Command::Compare(args) => cmd_compare(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            if matches!(err, Error::DepthBudget { .. } | Error::DepthBudgetAt { .. }) {
                eprintln!("hint: raise --levels or switch to --packing diag / diag-stepped");
            }
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn validate(args: &RunArgs) -> Result<(), Error> {
    if args.epochs == 0 {
        return Err(Error::Config("--epochs must be positive".into()));
    }
    if args.batch_size == 0 {
        return Err(Error::Config("--batch-size must be positive".into()));
    }
    if !(args.lr.is_finite() && args.lr >= 0.0) {
        return Err(Error::Config("--lr must be a non-negative number".into()));
    }
    if args.noise_std < 0.0 || args.init_std < 0.0 {
        return Err(Error::Config("noise/init std must be non-negative".into()));
    }
    if args.levels == Some(0) {
        return Err(Error::Config("--levels must be positive".into()));
    }
    Ok(())
}

type PreparedRun = (EngineContext, nn::NetworkState, nn::DataSplit, TrainOptions);

fn build_run(args: &RunArgs) -> Result<PreparedRun, Error> {
    validate(args)?;
    let levels = args.levels.unwrap_or_else(|| args.packing.default_levels());
    let ctx = EngineContext::new(levels, args.noise_std, args.seed);
    let dataset = iris::load_iris(&args.data, args.seed)?;
    let data = dataset.split();
    let hyper = Hyperparams {
        learning_rate: args.lr,
        batch_size: args.batch_size,
        epochs: args.epochs,
    };
    let inits = nn::gaussian_init(&IRIS_DIMS, args.init_std, args.seed)?;
    let pad_policy = if args.experimental_ragged {
        packtrain_core::packing::PadPolicy::Ragged
    } else {
        packtrain_core::packing::PadPolicy::PadToMultiple
    };
    let net = nn::build_network(
        &inits,
        args.packing.layout(),
        hyper,
        args.seed,
        pad_policy,
        &ctx,
    )?;
    let opts = TrainOptions {
        threads: args.threads,
        ..TrainOptions::default()
    };
    Ok((ctx, net, data, opts))
}

fn cmd_train(args: &RunArgs) -> Result<(), Error> {
    let (ctx, mut net, data, opts) = build_run(args)?;
    let started = Instant::now();
    let metrics = nn::train(&mut net, &data, &opts, &ctx)?;
    let elapsed = started.elapsed();
    metrics.write_csv(&args.metrics_out)?;
    checkpoint::save(&net, args.epochs, &ctx, &args.checkpoint_out)?;
    let totals = metrics.totals;
    println!(
        "trained {} epochs ({} packing) in {:.2?}",
        args.epochs,
        args.packing.layout().name(),
        elapsed
    );
    println!(
        "final accuracy: train {:.4}, test {:.4}",
        metrics.final_train_accuracy(),
        metrics.final_test_accuracy()
    );
    println!(
        "homomorphic ops: {} mults ({} ct, {} pt), {} rotations, {} additions",
        totals.mults(),
        totals.ct_mults,
        totals.pt_mults,
        totals.rotations,
        totals.additions
    );
    println!("minimum level reached: {}", metrics.min_level);
    println!(
        "metrics -> {}, checkpoint -> {}",
        args.metrics_out.display(),
        args.checkpoint_out.display()
    );
    Ok(())
}

fn parse_dims(net: &str) -> Result<Vec<usize>, Error> {
    let dims = net
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad layer size '{s}' in --net")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if dims.len() < 2 {
        return Err(Error::Config("--net needs at least two dimensions".into()));
    }
    if dims.contains(&0) {
        return Err(Error::Config("--net dimensions must be positive".into()));
    }
    Ok(dims)
}

/// Reference row: step label, then (mults, rotations) for the diagonal and
/// row layouts.
type ReferenceRow = (&'static str, (u64, u64), (u64, u64));

/// Reference per-phase counts for the 6-3-1 example network.
const REFERENCE_6_3_1: &[ReferenceRow] = &[
    ("FF dense 6 3", (6, 3), (3, 18)),
    ("FF square actv", (1, 0), (1, 0)),
    ("FF dense 3 1", (3, 1), (1, 3)),
    ("FF square actv", (1, 0), (1, 0)),
    ("Transition 6 3", (0, 3), (18, 18)),
    ("Transition 3 1", (0, 1), (3, 3)),
    ("BP dense 1 3", (1, 3), (3, 3)),
    ("BP square actv", (1, 0), (1, 0)),
    ("BP dense 3 6", (3, 6), (6, 18)),
    ("BP square actv", (1, 0), (1, 0)),
    ("Total", (17, 17), (38, 63)),
];

fn print_rows(phase: &str, rows: &[ReportRow]) {
    for row in rows {
        let predicted = row
            .predicted
            .map(|p| format!("{:>6} {:>6}", p.mults, p.rotations))
            .unwrap_or_else(|| format!("{:>6} {:>6}", "-", "-"));
        println!(
            "{phase:<12} {:<22} {:>6} {:>6}   {predicted}",
            row.label, row.measured.mults, row.measured.rotations
        );
    }
}

fn print_report(report: &IterationReport) {
    println!(
        "\nper-iteration operation counts, {} packing, network {:?} (batch 1)",
        report.layout.name(),
        report.dims
    );
    println!(
        "{:<12} {:<22} {:>6} {:>6}   {:>6} {:>6}",
        "phase", "step", "mult", "rot", "p.mult", "p.rot"
    );
    print_rows("feedforward", &report.feedforward);
    print_rows("transition", &report.transition);
    print_rows("backprop", &report.backprop);
    println!(
        "{:<12} {:<22} {:>6} {:>6}",
        "core total",
        "(ff + transition + bp)",
        report.core_total.mults,
        report.core_total.rotations
    );
    print_rows("update", &report.update);
    println!(
        "{:<12} {:<22} {:>6} {:>6}",
        "full total", "(everything)", report.full_total.mults, report.full_total.rotations
    );
}

fn cmd_opcount(net: &str, packing: Packing, seed: u64) -> Result<(), Error> {
    let dims = parse_dims(net)?;
    let ctx = EngineContext::exact(24);
    let report = measure_iteration(&dims, packing.layout(), seed, &ctx)?;
    print_report(&report);

    if dims == [6, 3, 1] {
        println!("\nreference counts for the 6-3-1 example (diagonal / row):");
        println!(
            "{:<18} {:>6} {:>6}   {:>6} {:>6}",
            "step", "d.mult", "d.rot", "r.mult", "r.rot"
        );
        for (label, diag, row) in REFERENCE_6_3_1 {
            println!(
                "{label:<18} {:>6} {:>6}   {:>6} {:>6}",
                diag.0, diag.1, row.0, row.1
            );
        }
    }

    // totals for both layouts, for the headline ratio
    let ctx_d = EngineContext::exact(24);
    let diag = measure_iteration(&dims, Layout::Diagonal, seed, &ctx_d)?;
    let ctx_r = EngineContext::exact(24);
    let row = measure_iteration(&dims, Layout::Row, seed, &ctx_r)?;
    println!(
        "\ncore totals (ff + transition + bp): diagonal {} mults + {} rotations = {}, \
         row {} mults + {} rotations = {}",
        diag.core_total.mults,
        diag.core_total.rotations,
        diag.core_total.total(),
        row.core_total.mults,
        row.core_total.rotations,
        row.core_total.total()
    );
    println!(
        "diagonal / row ratio: {:.3} (full step incl. gradients and update: {:.3})",
        diag.core_total.total() as f64 / row.core_total.total() as f64,
        diag.full_total.total() as f64 / row.full_total.total() as f64
    );
    Ok(())
}

fn cmd_compare(args: &RunArgs) -> Result<(), Error> {
    let (ctx, mut net, data, opts) = build_run(args)?;
    let packed_metrics = nn::train(&mut net, &data, &opts, &ctx)?;

    let inits = nn::gaussian_init(&IRIS_DIMS, args.init_std, args.seed)?;
    let hyper = Hyperparams {
        learning_rate: args.lr,
        batch_size: args.batch_size,
        epochs: args.epochs,
    };
    let mut plain_net = PlainNetwork::new(inits, hyper, args.seed);
    let plain_metrics = plain_net.train(&data, args.epochs, 0)?;

    let stem = args
        .metrics_out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "metrics".into());
    let dir = args
        .metrics_out
        .parent()
        .map(PathBuf::from)
        .unwrap_or_default();
    let cipher_path = dir.join(format!("{stem}_cipher.csv"));
    let plain_path = dir.join(format!("{stem}_plain.csv"));
    packed_metrics.write_csv(&cipher_path)?;
    plain_metrics.write_csv(&plain_path)?;

    let max_div = packed_metrics
        .epochs
        .iter()
        .zip(&plain_metrics.epochs)
        .map(|(a, b)| {
            (a.train_loss - b.train_loss)
                .abs()
                .max((a.test_loss - b.test_loss).abs())
        })
        .fold(0.0f64, f64::max);
    println!(
        "compared {} epochs ({} packing vs plaintext reference)",
        args.epochs,
        args.packing.layout().name()
    );
    println!("max per-epoch loss divergence: {max_div:.3e}");
    println!(
        "final test accuracy: packed {:.4}, plaintext {:.4}",
        packed_metrics.final_test_accuracy(),
        plain_metrics.final_test_accuracy()
    );
    println!(
        "metrics -> {} and {}",
        cipher_path.display(),
        plain_path.display()
    );
    Ok(())
}
