//! `lqe` command-line tool.
//!
//! Exit codes: 0 success, 1 usage or invalid configuration, 2 data error,
//! 3 training divergence.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use lqe_core::classical::{stratified_sample, ClassicalPipeline, DrMethod};
use lqe_core::io::{export_filters, gen_synthetic, read_cube, write_cube, ExportGrid, SynthSpec};
use lqe_core::training::{predict, train, TrainConfig};
use lqe_core::{
    compute_metrics, ConfusionMatrix, Error, FilterBankParams, Hypercube, LabelMap, LabeledCube,
};

#[derive(Parser)]
#[command(name = "lqe", version, about = "Learnable spectral filter banks for hyperspectral segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Override the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train.hypc and val.hypc from a synthetic spec.
    GenSynth(Common),
    /// Train a filter bank and head end to end.
    Train(Common),
    /// Fit a PCA or NMF pipeline and reduce cubes with it.
    Reduce(Common),
    /// Compare predicted and ground-truth label blocks.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Also write metrics.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write filter response curves as CSV.
    ExportFilters {
        /// filters.json produced by `train`.
        #[arg(long)]
        filters: PathBuf,
        /// Cube whose channel wavelengths define the normalization.
        #[arg(long)]
        cube: PathBuf,
        /// Evaluate on this many evenly spaced points instead of the channels.
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Diverged(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Diverged(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Diverged(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::InvalidConfig(_) | Error::Json(_) => Failure::Usage(msg),
            Error::Diverged { .. } => Failure::Diverged(msg),
            Error::RangeViolation { .. }
            | Error::Dimension(_)
            | Error::Data(_)
            | Error::Format(_)
            | Error::Io(_) => Failure::Data(msg),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn prepare_out(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

/// Relative paths in a config file are resolved against the file's directory.
fn resolve(config: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        config.parent().unwrap_or(Path::new(".")).join(p)
    }
}

fn load_labeled(path: &Path) -> CliResult<LabeledCube> {
    let (cube, labels) = read_cube(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    let labels = labels.ok_or_else(|| Failure::Data(format!("{}: no label block", path.display())))?;
    Ok(LabeledCube::new(cube, labels)?)
}

fn gen_synth(args: &Common) -> CliResult<()> {
    let mut spec: SynthSpec = read_json(&args.config)?;
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    let ds = gen_synthetic(&spec)?;
    prepare_out(&args.out)?;
    write_cube(args.out.join("train.hypc"), &ds.train.cube, Some(&ds.train.labels))?;
    write_cube(args.out.join("val.hypc"), &ds.val.cube, Some(&ds.val.labels))?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainJob {
    train_data: PathBuf,
    val_data: PathBuf,
    num_filters: usize,
    peaks_per_filter: usize,
    #[serde(default)]
    training: TrainConfig,
}

fn train_cmd(args: &Common) -> CliResult<()> {
    let mut job: TrainJob = read_json(&args.config)?;
    if let Some(s) = args.seed {
        job.training.seed = s;
    }
    let train_set = load_labeled(&resolve(&args.config, &job.train_data))?;
    let val_set = load_labeled(&resolve(&args.config, &job.val_data))?;
    let report = train(&train_set, &val_set, job.num_filters, job.peaks_per_filter, &job.training)?;
    prepare_out(&args.out)?;
    write_file(&args.out.join("report.json"), report.to_json()?)?;
    write_file(&args.out.join("epochs.csv"), report.epochs_csv())?;
    write_file(&args.out.join("centroids.csv"), report.centroids_csv())?;
    write_file(&args.out.join("filters.json"), report.filter_bank.to_json()?)?;
    let head = serde_json::to_string_pretty(&report.head).map_err(Error::from)?;
    write_file(&args.out.join("head.json"), head)?;

    let pred = predict(&report.filter_bank, &report.head, &val_set.cube)?;
    let labels = LabelMap::new(
        val_set.labels.batch(),
        val_set.labels.height(),
        val_set.labels.width(),
        val_set.labels.num_classes() as u16,
        val_set.labels.ignore(),
        pred,
    )?;
    write_cube(args.out.join("val_pred.hypc"), &val_set.cube, Some(&labels))?;
    println!(
        "best epoch {} of {}: val mIoU {:.2}",
        report.best_epoch,
        report.epochs.len(),
        report.best_val_miou
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct ReduceJob {
    /// Cubes the pipeline is fitted on (labels drive the class-balanced sample).
    fit_data: Vec<PathBuf>,
    /// Cubes to transform; each `name.hypc` becomes `name.reduced.hypc`.
    apply_to: Vec<PathBuf>,
    #[serde(flatten)]
    method: DrMethod,
    num_components: usize,
    sample_size: usize,
    #[serde(default)]
    seed: u64,
}

fn reduce_cmd(args: &Common) -> CliResult<()> {
    let mut job: ReduceJob = read_json(&args.config)?;
    if let Some(s) = args.seed {
        job.seed = s;
    }
    if job.fit_data.is_empty() {
        return Err(Failure::Usage("fit_data must list at least one cube".into()));
    }
    let sets = job
        .fit_data
        .iter()
        .map(|p| load_labeled(&resolve(&args.config, p)))
        .collect::<CliResult<Vec<_>>>()?;
    let sample = stratified_sample(&sets, job.sample_size, job.seed)?;
    let pipeline = ClassicalPipeline::fit(&sample.matrix, job.method, job.num_components, job.seed)?;
    prepare_out(&args.out)?;
    write_file(&args.out.join("pipeline.json"), pipeline.to_json()?)?;
    for p in &job.apply_to {
        let path = resolve(&args.config, p);
        let (cube, labels) = read_cube(&path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
        let reduced = pipeline.apply(&cube)?;
        let d = reduced.dims();
        // component index stands in for the wavelength axis
        let axis = (1..=d.channels).map(|i| i as f64).collect();
        let as_cube = Hypercube::new(d, axis, reduced.into_data())?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("cube");
        write_cube(args.out.join(format!("{stem}.reduced.hypc")), &as_cube, labels.as_ref())?;
    }
    Ok(())
}

fn eval_cmd(pred: &Path, truth: &Path, out: Option<&Path>) -> CliResult<()> {
    let p = load_labeled(pred)?;
    let t = load_labeled(truth)?;
    let (pl, tl) = (&p.labels, &t.labels);
    if (pl.batch(), pl.height(), pl.width()) != (tl.batch(), tl.height(), tl.width()) {
        return Err(Failure::Data("prediction and truth label maps differ in shape".into()));
    }
    let mut cm = ConfusionMatrix::new(tl.num_classes());
    cm.accumulate(pl.data(), tl.data(), tl.ignore())?;
    let metrics = compute_metrics(&cm)?;
    let json = serde_json::to_string_pretty(&metrics).map_err(Error::from)?;
    println!("{json}");
    print!("{}", metrics.to_table());
    if let Some(dir) = out {
        prepare_out(dir)?;
        write_file(&dir.join("metrics.json"), json)?;
    }
    Ok(())
}

fn export_cmd(filters: &Path, cube: &Path, grid: Option<usize>, out: &Path) -> CliResult<()> {
    let text = fs::read_to_string(filters).map_err(|e| Failure::Usage(format!("{}: {e}", filters.display())))?;
    let bank = FilterBankParams::from_json(&text)?;
    let (c, _) = read_cube(cube).map_err(|e| Failure::Data(format!("{}: {e}", cube.display())))?;
    let grid = grid.map_or(ExportGrid::Channels, ExportGrid::Dense);
    let csv = export_filters(&bank, c.wavelengths_nm(), &grid)?;
    prepare_out(out)?;
    write_file(&out.join("filters.csv"), csv)
}

fn run(cli: Cli) -> CliResult<()> {
    match &cli.command {
        Command::GenSynth(a) => gen_synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Reduce(a) => reduce_cmd(a),
        Command::Eval { pred, truth, out } => eval_cmd(pred, truth, out.as_deref()),
        Command::ExportFilters {
            filters,
            cube,
            grid,
            out,
        } => export_cmd(filters, cube, *grid, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
