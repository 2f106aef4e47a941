use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use qkern_core::data::{prepare, PrepareOptions};
use qkern_core::experiment::{
    gen_gap, run_gram, run_mercer, shots_table, sweep_bandwidth, sweep_csv, ExperimentConfig, Manifest,
};
use qkern_core::idx::{images_to_bytes, labels_to_bytes, parse_idx, synthetic_fashion};
use qkern_core::kernels::GramMatrix;
use qkern_core::learner::{accuracy, cross_validate, predict, svm_train, validate_labels, DEFAULT_C_GRID};
use qkern_core::{Error, Result};

#[derive(Parser)]
#[command(name = "qkern", version, about = "Trace-induced quantum kernel experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse IDX files, select two classes, split, standardize and project with PCA.
    Ingest(IngestArgs),
    /// Training-set Gram matrix for a config.
    Gram(ConfigArgs),
    /// Fit a soft-margin SVM on a stored Gram matrix.
    Train(TrainArgs),
    /// Test accuracy against bandwidth and feature count.
    SweepBandwidth(ConfigArgs),
    /// Train/test gap against feature count, with the margin bound.
    GenGap(ConfigArgs),
    /// Measurement budgets of the fidelity and H-body kernels.
    Shots(ShotsArgs),
    /// Empirical Mercer decomposition of the data covariance operator.
    Mercer(ConfigArgs),
    /// Write synthetic garment images as an IDX pair.
    SynthIdx(SynthArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [0u8, 3])]
    classes: Vec<u8>,
    #[arg(long, default_value_t = 100)]
    train: usize,
    #[arg(long, default_value_t = 20)]
    test: usize,
    #[arg(long, default_value_t = 8)]
    pca: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config's estimator seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    gram: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long = "C")]
    c: Option<f64>,
    /// Comma-separated C values, or "default" for the built-in grid.
    #[arg(long)]
    cv: Option<String>,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Model JSON destination.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ShotsArgs {
    #[arg(long)]
    n: usize,
    #[arg(long = "H", value_delimiter = ',', required = true)]
    h: Vec<usize>,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    #[arg(long = "N-max")]
    n_max: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    per_class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory receiving images.idx and labels.idx.
    #[arg(long)]
    out: PathBuf,
}

fn init_threads() -> Result<()> {
    let threads = match std::env::var("QKERN_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Input(format!("QKERN_THREADS must be a count, got '{v}'")))?,
        Err(_) => 0,
    };
    if threads > 0 {
        // a second initialization only happens in-process, where the first pool is kept
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    Ok(())
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    out.with_file_name(name)
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig> {
    Ok(ExperimentConfig::load(&args.config)
        .map_err(|e| e.stage("config"))?
        .with_seed(args.seed))
}

fn read_labels(path: &Path) -> Result<Vec<i8>> {
    let text = std::fs::read_to_string(path)?;
    let labels = if text.trim_start().starts_with('[') {
        serde_json::from_str::<Vec<i8>>(&text)?
    } else {
        text.split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<i8>().map_err(|_| Error::Format(format!("bad label '{t}'"))))
            .collect::<Result<_>>()?
    };
    validate_labels(&labels)?;
    Ok(labels)
}

fn read_gram(path: &Path) -> Result<GramMatrix> {
    let text = std::fs::read_to_string(path)?;
    if path.extension().is_some_and(|e| e == "json") {
        GramMatrix::from_json(&text)
    } else {
        GramMatrix::from_csv(&text)
    }
}

fn labels_text(labels: &[i8]) -> String {
    labels.iter().map(|l| format!("{l}\n")).collect()
}

fn ingest(a: IngestArgs) -> Result<()> {
    let [first, second] = a.classes[..] else {
        return Err(Error::Input(format!("--classes takes two labels, got {}", a.classes.len())));
    };
    let raw = parse_idx(&a.images, &a.labels).map_err(|e| e.stage("parse"))?;
    let opts = PrepareOptions {
        classes: [first, second],
        train: a.train,
        test: a.test,
        pca_dim: a.pca,
        seed: a.seed,
        rescale_components: true,
    };
    let prepared = prepare(&raw, &opts).map_err(|e| e.stage("prepare"))?;
    let mut m = Manifest::new(
        "ingest",
        json!({"images": a.images, "labels": a.labels, "options": opts}),
    );
    m.seeds = vec![a.seed];
    m.emit(&a.out, prepared.to_json()?.as_bytes())?;
    m.write(&a.out)?;
    println!(
        "{} images, {} train / {} test, preprocessing {}",
        raw.len(),
        prepared.train.len(),
        prepared.test.len(),
        prepared.record.hash()
    );
    Ok(())
}

fn gram_cmd(a: ConfigArgs) -> Result<()> {
    let cfg = load_config(&a)?;
    let (g, data) = run_gram(&cfg).map_err(|e| e.stage("gram"))?;
    let body = if a.out.extension().is_some_and(|e| e == "json") {
        g.to_json()?
    } else {
        g.to_csv()
    };
    let mut m = Manifest::new("gram", json!({"config": a.config})).with_config(&cfg)?;
    m.emit(&a.out, body.as_bytes())?;
    m.emit(&sibling(&a.out, ".labels"), labels_text(&data.train.labels).as_bytes())?;
    m.write(&a.out)?;
    println!("{0}x{0} Gram ({1})", g.size(), g.estimator());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let k = read_gram(&a.gram).map_err(|e| e.stage("gram"))?;
    let y = read_labels(&a.labels).map_err(|e| e.stage("labels"))?;
    if y.len() != k.size() {
        return Err(Error::Input(format!("{} labels for a {}-point Gram", y.len(), k.size())));
    }
    let mut report = json!({});
    let c = match (&a.cv, a.c) {
        (Some(grid), _) => {
            let grid: Vec<f64> = if grid == "default" {
                DEFAULT_C_GRID.to_vec()
            } else {
                grid.split(',')
                    .map(|t| t.trim().parse::<f64>().map_err(|_| Error::Input(format!("bad C '{t}'"))))
                    .collect::<Result<_>>()?
            };
            let cv = cross_validate(&k, &y, &grid, a.folds, a.seed).map_err(|e| e.stage("cv"))?;
            report["cv"] = json!(cv.table);
            cv.best_c
        }
        (None, Some(c)) => c,
        (None, None) => return Err(Error::Input("either --C or --cv is required".into())),
    };
    let model = svm_train(&k, &y, c).map_err(|e| e.stage("train"))?;
    let train_acc = accuracy(&predict(&model, k.entries())?.labels, &y);
    report["C"] = json!(c);
    report["train_accuracy"] = json!(train_acc);
    report["support_vectors"] = json!(model.support.len());
    report["bias"] = json!(model.bias);
    if let Some(out) = &a.out {
        let mut m = Manifest::new(
            "train",
            json!({"gram": a.gram, "labels": a.labels, "C": a.c, "cv": a.cv, "folds": a.folds}),
        );
        m.seeds = vec![a.seed];
        m.emit(out, model.to_json()?.as_bytes())?;
        m.write(out)?;
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn sweep_cmd(a: ConfigArgs) -> Result<()> {
    let cfg = load_config(&a)?;
    let rows = sweep_bandwidth(&cfg).map_err(|e| e.stage("sweep-bandwidth"))?;
    let mut m = Manifest::new("sweep-bandwidth", json!({"config": a.config})).with_config(&cfg)?;
    m.emit(&a.out, sweep_csv(&rows).as_bytes())?;
    m.write(&a.out)?;
    println!("{} rows", rows.len());
    Ok(())
}

fn gen_gap_cmd(a: ConfigArgs) -> Result<()> {
    let cfg = load_config(&a)?;
    let exp = gen_gap(&cfg).map_err(|e| e.stage("gen-gap"))?;
    let mut m = Manifest::new("gen-gap", json!({"config": a.config})).with_config(&cfg)?;
    m.emit(&a.out, exp.to_csv().as_bytes())?;
    m.emit(
        &sibling(&a.out, ".summary.json"),
        serde_json::to_string_pretty(&exp.summary)?.as_bytes(),
    )?;
    m.write(&a.out)?;
    println!("{} rows, {} summary entries", exp.rows.len(), exp.summary.len());
    Ok(())
}

fn shots_cmd(a: ShotsArgs) -> Result<()> {
    let (csv, crossovers) = shots_table(a.n, &a.h, a.eps, a.n_max)?;
    let mut m = Manifest::new(
        "shots",
        json!({"n": a.n, "H": a.h, "eps": a.eps, "N_max": a.n_max}),
    );
    m.seeds = a.seed.into_iter().collect();
    m.emit(&a.out, csv.as_bytes())?;
    m.write(&a.out)?;
    for (h, n) in crossovers {
        println!("H={h} crossover N={n}");
    }
    Ok(())
}

fn mercer_cmd(a: ConfigArgs) -> Result<()> {
    let cfg = load_config(&a)?;
    let (md, report) = run_mercer(&cfg).map_err(|e| e.stage("mercer"))?;
    let mut m = Manifest::new("mercer", json!({"config": a.config})).with_config(&cfg)?;
    m.emit(&a.out, md.to_json()?.as_bytes())?;
    m.emit(&sibling(&a.out, ".basis.bin"), &md.basis_bytes())?;
    m.emit(
        &sibling(&a.out, ".report.json"),
        serde_json::to_string_pretty(&report)?.as_bytes(),
    )?;
    m.write(&a.out)?;
    println!(
        "rank {} of {}, orthogonality error {:e}",
        report.rank,
        md.dim(),
        report.orthogonality
    );
    Ok(())
}

fn synth_cmd(a: SynthArgs) -> Result<()> {
    let raw = synthetic_fashion(a.per_class, a.seed);
    let images = a.out.join("images.idx");
    let mut m = Manifest::new("synth-idx", json!({"per_class": a.per_class}));
    m.seeds = vec![a.seed];
    m.emit(&images, &images_to_bytes(&raw.images))?;
    m.emit(&a.out.join("labels.idx"), &labels_to_bytes(&raw.labels))?;
    m.write(&images)?;
    println!("{} images", raw.len());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Gram(a) => gram_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::SweepBandwidth(a) => sweep_cmd(a),
        Command::GenGap(a) => gen_gap_cmd(a),
        Command::Shots(a) => shots_cmd(a),
        Command::Mercer(a) => mercer_cmd(a),
        Command::SynthIdx(a) => synth_cmd(a),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Capacity(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qkern: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
