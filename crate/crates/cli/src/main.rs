//! Command-line interface for training, evaluating, sweeping, timing, and
//! analyzing Chebyshev graph convolution models on TU-format datasets.
//!
//! Settings resolve in three layers: built-in defaults, then `--config
//! FILE` (flat `key = value` lines), then individual flags. The effective
//! configuration is echoed into every report so a run can be reproduced
//! from its output alone. Exit codes: 0 success, 1 configuration errors,
//! 2 dataset errors.

mod config;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use chebgraph::error::{Error, Result};
use chebgraph::{
    bench_forward, bench_to_csv, cross_validate_with, eigen_histogram, fusion_sweep, make_batch,
    parse_tu, sweep_to_csv, FoldOutcome, FusionMethod, GraphRecord, Model, TuDataset,
};
use config::{parse_list, Settings};

#[derive(Parser)]
#[command(
    name = "chebgraph",
    version,
    about = "Chebyshev spectral graph convolution over multigraphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run repeated stratified cross-validation and write reports.
    Train(TrainArgs),
    /// Evaluate a saved checkpoint on a dataset.
    Eval(EvalArgs),
    /// Compare fusion methods across filter orders under shared folds.
    Sweep(SweepArgs),
    /// Time convolution forward passes on synthetic graphs.
    Bench(BenchArgs),
    /// Dataset analyses.
    Analyze(AnalyzeArgs),
}

/// Flags shared by every command. Each configuration key has a flag of the
/// same name; flags override the config file, which overrides defaults.
#[derive(Args)]
struct CommonOpts {
    /// Config file with `key = value` lines.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory for reports and checkpoints.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Worker threads for fold-level parallelism.
    #[arg(long, value_name = "N", default_value_t = 1)]
    jobs: usize,

    #[arg(long, value_name = "NAME")]
    dataset_name: Option<String>,
    #[arg(long, value_name = "DIR")]
    dataset_dir: Option<PathBuf>,
    /// single | concat | 2d | multiply | sum | multiply_shared | sum_shared
    #[arg(long)]
    fusion: Option<String>,
    /// Chebyshev filter order K.
    #[arg(long, visible_alias = "k", value_name = "K")]
    k_order: Option<usize>,
    /// Comma-separated convolution widths, e.g. `32,32,32`.
    #[arg(long, value_name = "LIST")]
    conv_widths: Option<String>,
    #[arg(long, value_name = "WIDTH")]
    fc_width: Option<usize>,
    #[arg(long, value_name = "P")]
    dropout: Option<f64>,
    #[arg(long, value_name = "LR")]
    lr: Option<f64>,
    /// Learning-rate decay factor at each milestone.
    #[arg(long, value_name = "G")]
    gamma: Option<f64>,
    #[arg(long, value_name = "N")]
    epochs: Option<usize>,
    /// Comma-separated decay epochs, e.g. `25,35,45` (empty disables).
    #[arg(long, value_name = "LIST")]
    milestones: Option<String>,
    #[arg(long, value_name = "N")]
    batch_size: Option<usize>,
    #[arg(long, value_name = "WD")]
    weight_decay: Option<f64>,
    /// Projection width C for multiply/sum fusion.
    #[arg(long, value_name = "C")]
    proj_hidden: Option<usize>,
    /// Hidden width of the edge-learning MLP.
    #[arg(long, value_name = "H")]
    edge_hidden: Option<usize>,
    /// Add a learned soft adjacency as a second relation.
    #[arg(long, value_name = "BOOL")]
    use_learned_edges: Option<bool>,
    /// Re-learn edges per layer from that layer's inputs.
    #[arg(long, value_name = "BOOL")]
    learned_edge_recompute: Option<bool>,
    #[arg(long, value_name = "K")]
    folds: Option<usize>,
    #[arg(long, value_name = "N")]
    repeats: Option<usize>,
    /// Master seed; identical seeds reproduce reports byte-for-byte.
    #[arg(long, value_name = "SEED")]
    seed: Option<u64>,
}

impl CommonOpts {
    /// Defaults ← config file ← flags.
    fn resolve(&self) -> Result<Settings> {
        let mut s = Settings::default();
        if let Some(path) = &self.config {
            s.apply_file(path)?;
        }
        if let Some(v) = &self.dataset_name {
            s.dataset_name = v.clone();
        }
        if let Some(v) = &self.dataset_dir {
            s.dataset_dir = v.clone();
        }
        if let Some(v) = &self.fusion {
            s.fusion = v.parse()?;
        }
        if let Some(v) = self.k_order {
            s.k_order = v;
        }
        if let Some(v) = &self.conv_widths {
            s.conv_widths = parse_list("conv_widths", v, "a comma-separated list of widths")?;
        }
        if let Some(v) = self.fc_width {
            s.fc_width = v;
        }
        if let Some(v) = self.dropout {
            s.dropout = v;
        }
        if let Some(v) = self.lr {
            s.lr = v;
        }
        if let Some(v) = self.gamma {
            s.gamma = v;
        }
        if let Some(v) = self.epochs {
            s.epochs = v;
        }
        if let Some(v) = &self.milestones {
            s.milestones = parse_list("milestones", v, "a comma-separated list of epochs")?;
        }
        if let Some(v) = self.batch_size {
            s.batch_size = v;
        }
        if let Some(v) = self.weight_decay {
            s.weight_decay = v;
        }
        if let Some(v) = self.proj_hidden {
            s.proj_hidden = v;
        }
        if let Some(v) = self.edge_hidden {
            s.edge_hidden = v;
        }
        if let Some(v) = self.use_learned_edges {
            s.use_learned_edges = v;
        }
        if let Some(v) = self.learned_edge_recompute {
            s.learned_edge_recompute = v;
        }
        if let Some(v) = self.folds {
            s.folds = v;
        }
        if let Some(v) = self.repeats {
            s.repeats = v;
        }
        if let Some(v) = self.seed {
            s.seed = v;
        }
        Ok(s)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonOpts,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonOpts,
    /// Checkpoint written by `train` (or `Model::save`).
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonOpts,
    /// Fusion methods to compare (default: all seven).
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    fusions: Option<Vec<String>>,
    /// Filter orders to compare (default: the configured k_order).
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    k_grid: Option<Vec<usize>>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: CommonOpts,
    /// Fusion methods to time.
    #[arg(
        long,
        value_name = "LIST",
        value_delimiter = ',',
        default_value = "single,concat,2d,multiply,sum"
    )]
    fusions: Vec<String>,
    /// Filter orders to time (default: the configured k_order).
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    k_grid: Option<Vec<usize>>,
    /// Node counts of the synthetic graphs (each gets 2n random edges).
    #[arg(long, value_name = "LIST", value_delimiter = ',', default_value = "1000,2000,4000")]
    n_grid: Vec<usize>,
    /// Input feature width of the synthetic graphs.
    #[arg(long, value_name = "F", default_value_t = 7)]
    x_in: usize,
    /// Output feature width of the timed layer.
    #[arg(long, value_name = "F", default_value_t = 32)]
    out_features: usize,
    #[arg(long, value_name = "N", default_value_t = 3)]
    warmup: usize,
    #[arg(long, value_name = "N", default_value_t = 20)]
    iters: usize,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(subcommand)]
    what: AnalyzeCommand,
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Histogram the eigenvalues of every graph's rescaled Laplacian.
    Eigvals(EigvalsArgs),
}

#[derive(Args)]
struct EigvalsArgs {
    #[command(flatten)]
    common: CommonOpts,
    /// Powers of the Laplacian to histogram.
    #[arg(long, value_name = "LIST", value_delimiter = ',', default_value = "1,2,3")]
    powers: Vec<u32>,
    /// Histogram bins over [−1, 1]; odd counts center a bin on zero.
    #[arg(long, value_name = "N", default_value_t = 21)]
    bins: usize,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        let code = match &e {
            Error::DatasetFile { .. } | Error::DatasetParse { .. } => 2,
            _ => 1,
        };
        std::process::exit(code);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => train(args),
        Command::Eval(args) => eval(args),
        Command::Sweep(args) => sweep(args),
        Command::Bench(args) => bench(args),
        Command::Analyze(args) => match args.what {
            AnalyzeCommand::Eigvals(args) => eigvals(args),
        },
    }
}

fn load_dataset(s: &Settings) -> Result<TuDataset> {
    parse_tu(&s.dataset_dir, &s.dataset_name)
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::Io {
            path: parent.to_path_buf(),
            source: e,
        })?;
    }
    fs::write(path, content).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn train(args: TrainArgs) -> Result<()> {
    let settings = args.common.resolve()?;
    let ds = load_dataset(&settings)?;
    let tc = settings.train_config(ds.n_classes);
    tc.validate()?;

    let ckpt_dir = args.common.out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(|e| Error::Io {
        path: ckpt_dir.clone(),
        source: e,
    })?;
    let sink = |r: usize, f: usize, outcome: &FoldOutcome| {
        outcome.model.save(ckpt_dir.join(format!("fold_r{r}_f{f}.json")))
    };

    let mut report = cross_validate_with(&tc, &ds, args.common.jobs, sink)?;
    report.config_echo = settings.echo();

    write_file(&args.common.out.join("report.txt"), &report.to_text())?;
    write_file(&args.common.out.join("report.csv"), &report.to_csv())?;
    print!("{}", report.to_text());
    println!("wall_clock_secs: {:.1}", report.wall_clock_secs);
    println!("reports written to {}", args.common.out.display());
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let settings = args.common.resolve()?;
    let ds = load_dataset(&settings)?;
    let model = Model::load(&args.checkpoint)?;
    if model.x_in != ds.x_in || model.config.n_classes != ds.n_classes {
        return Err(Error::Config {
            key: "checkpoint".into(),
            reason: format!(
                "checkpoint expects {} features / {} classes, dataset {} has {} / {}",
                model.x_in, model.config.n_classes, ds.name, ds.x_in, ds.n_classes
            ),
        });
    }

    let mut correct = 0usize;
    let indices: Vec<usize> = (0..ds.records.len()).collect();
    for chunk in indices.chunks(settings.batch_size) {
        let records: Vec<&GraphRecord> = chunk.iter().map(|&i| &ds.records[i]).collect();
        let batch = make_batch(&records)?;
        let predictions = model.predict(&batch)?;
        correct += predictions
            .iter()
            .zip(&batch.labels)
            .filter(|(p, l)| p == l)
            .count();
    }
    println!("checkpoint: {}", args.checkpoint.display());
    println!("dataset: {} ({} graphs)", ds.name, ds.records.len());
    println!("accuracy: {}", correct as f64 / ds.records.len() as f64);
    Ok(())
}

fn parse_fusions(list: &[String]) -> Result<Vec<FusionMethod>> {
    list.iter().map(|s| s.parse()).collect()
}

fn sweep(args: SweepArgs) -> Result<()> {
    let settings = args.common.resolve()?;
    let ds = load_dataset(&settings)?;
    let tc = settings.train_config(ds.n_classes);
    let fusions = match &args.fusions {
        Some(list) => parse_fusions(list)?,
        None => FusionMethod::all().to_vec(),
    };
    let k_grid = args.k_grid.unwrap_or_else(|| vec![settings.k_order]);

    let rows = fusion_sweep(&tc, &ds, &fusions, &k_grid, args.common.jobs)?;
    let csv = sweep_to_csv(&rows);
    write_file(&args.common.out.join("sweep.csv"), &csv)?;

    println!("{:<16} {:>2} {:>8} {:>8} {:>5}", "fusion", "K", "mean", "std", "wins");
    for row in &rows {
        println!(
            "{:<16} {:>2} {:>8.4} {:>8.4} {:>5}",
            row.fusion.to_string(),
            row.k_order,
            row.mean,
            row.std,
            row.wins
        );
    }
    println!("sweep written to {}", args.common.out.join("sweep.csv").display());
    Ok(())
}

fn bench(args: BenchArgs) -> Result<()> {
    let settings = args.common.resolve()?;
    let fusions = parse_fusions(&args.fusions)?;
    let k_grid = args.k_grid.unwrap_or_else(|| vec![settings.k_order]);
    let cases: Vec<(FusionMethod, usize)> = k_grid
        .iter()
        .flat_map(|&k| fusions.iter().map(move |&f| (f, k)))
        .collect();

    let rows = bench_forward(
        &cases,
        &args.n_grid,
        args.x_in,
        args.out_features,
        settings.proj_hidden,
        settings.seed,
        args.warmup,
        args.iters,
    )?;
    let csv = bench_to_csv(&rows);
    write_file(&args.common.out.join("bench.csv"), &csv)?;
    print!("{csv}");
    println!("timings written to {}", args.common.out.join("bench.csv").display());
    Ok(())
}

fn eigvals(args: EigvalsArgs) -> Result<()> {
    let settings = args.common.resolve()?;
    let ds = load_dataset(&settings)?;
    let hist = eigen_histogram(&ds, &args.powers, args.bins)?;
    let csv = hist.to_csv();
    write_file(&args.common.out.join("eigvals.csv"), &csv)?;

    println!("dataset: {} ({} graphs)", ds.name, ds.records.len());
    println!("eigenvalue range: [{}, {}]", hist.min_eig, hist.max_eig);
    for (pi, &p) in hist.powers.iter().enumerate() {
        println!("central-bin mass at power {p}: {}", hist.central_bin_mass(pi));
    }
    println!("histogram written to {}", args.common.out.join("eigvals.csv").display());
    Ok(())
}
