//! Command-line front end: argument definitions, subcommand runners and
//! PNG chart rendering.

pub mod chart;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use xraycnn_core::dataset::{self, AugmentationPlan, Dataset, ImageLoader, Manifest, Split, CLASS_NAMES};
use xraycnn_core::hyperband::{self, CnnTrainable, SearchSpace};
use xraycnn_core::nn::{self, ModelSpec};
use xraycnn_core::raster::{self, FilterKind};
use xraycnn_core::report::{self, ClassReport};
use xraycnn_core::train::{self, PreparedData, TrainConfig};
use xraycnn_core::{Error, FormatFault, Result};

use crate::chart::ChartSeries;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

/// Exit status for a failed command.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        e if e.is_numerical() => EXIT_NUMERICAL,
        Error::InvalidArgument(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

#[derive(Debug, Parser)]
#[command(name = "xraycnn", version, about = "Chest X-ray CNN pipeline: prepare, tune, train, evaluate, inspect")]
pub struct Cli {
    /// Worker threads (default: number of logical cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scan a dataset folder and write a manifest.
    Prepare(PrepareArgs),
    /// Hyperband search over units, filters, kernel size and learning rate.
    Tune(TuneArgs),
    /// Train one model and write weights, history and report.
    Train(TrainArgs),
    /// Score a saved model on one split of a manifest.
    Eval(EvalArgs),
    /// Dump per-filter feature maps for one image.
    Extract(ExtractArgs),
    /// Chart a training history CSV.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Add rotated copies: Normal x2, COVID-19 x4.
    #[arg(long)]
    pub balance: bool,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 15)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 3)]
    pub factor: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub trial_log: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FilterArg {
    None,
    Contour,
    EdgeEnhanceMore,
    FindEdges,
    Sharpen,
}

impl FilterArg {
    pub fn kind(self) -> Option<FilterKind> {
        match self {
            FilterArg::None => None,
            FilterArg::Contour => Some(FilterKind::Contour),
            FilterArg::EdgeEnhanceMore => Some(FilterKind::EdgeEnhanceMore),
            FilterArg::FindEdges => Some(FilterKind::FindEdges),
            FilterArg::Sharpen => Some(FilterKind::Sharpen),
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = FilterArg::None)]
    pub filter: FilterArg,
    #[arg(long, default_value_t = 0.0)]
    pub dropout: f32,
    #[arg(long, default_value_t = 15)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.3)]
    pub val_split: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 160)]
    pub units: usize,
    #[arg(long, default_value_t = 64)]
    pub filters: usize,
    #[arg(long, default_value_t = 5)]
    pub kernel: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub history: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    #[arg(long)]
    pub out_json: PathBuf,
    #[arg(long)]
    pub out_cm: PathBuf,
    #[arg(long)]
    pub out_heatmap: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Overrides the filter recorded in the model file.
    #[arg(long, value_enum)]
    pub filter: Option<FilterArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Acc,
    Loss,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub history: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Metric::Acc)]
    pub metric: Metric,
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::invalid("--threads must be at least 1"));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Prepare(a) => prepare(&a),
        Command::Tune(a) => tune(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Eval(a) => eval(&a),
        Command::Extract(a) => extract(&a),
        Command::Plot(a) => plot(&a),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn to_json(value: &impl Serialize) -> String {
    serde_json::to_string_pretty(value).expect("plain data serializes")
}

fn counts_line(m: &Manifest, split: Split) -> String {
    let c = m.class_counts(split);
    let parts: Vec<String> = CLASS_NAMES.iter().zip(c).map(|(n, k)| format!("{n}={k}")).collect();
    format!("{split}: {}", parts.join(" "))
}

pub fn prepare(a: &PrepareArgs) -> Result<()> {
    let root = fs::canonicalize(&a.input).map_err(|e| Error::io(&a.input, e))?;
    let mut m = dataset::scan_dataset(&root)?;
    if a.balance {
        m = dataset::balance(&m, &AugmentationPlan::paper())?;
    }
    m.write(&a.output)?;
    println!("{}", counts_line(&m, Split::Train));
    println!("{}", counts_line(&m, Split::Test));
    Ok(())
}

pub fn tune(a: &TuneArgs) -> Result<()> {
    let manifest = Manifest::read(&a.manifest)?;
    let schedule = hyperband::compute_schedule(a.max_epochs, a.factor)?;
    let base = TrainConfig {
        seed: a.seed,
        ..TrainConfig::new(ModelSpec::tuned())
    };
    let data = PreparedData::load(&manifest, None, base.validation_fraction, a.seed)?;
    let trainable = CnnTrainable {
        base,
        train: data.train,
        validation: data.validation,
    };
    eprintln!(
        "hyperband: {} brackets, {} configurations, {} epochs",
        schedule.brackets.len(),
        schedule.total_configs(),
        schedule.total_epochs()
    );
    let outcome = hyperband::search_with_progress(&trainable, &SearchSpace::default(), &schedule, a.seed, |t| {
        eprintln!(
            "bracket {} round {} trial {}: {:?} epochs={} val_acc={:.4}{}",
            t.bracket,
            t.round,
            t.trial_id,
            t.assignment,
            t.epochs,
            t.val_accuracy,
            if t.failed { " (failed)" } else { "" }
        );
    })?;
    if let Some(path) = &a.trial_log {
        write(path, hyperband::trial_log_csv(&outcome.trials))?;
    }
    println!("{}", to_json(&outcome.best.assignment));
    Ok(())
}

pub fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let spec = ModelSpec {
        conv_filters: a.filters,
        kernel_size: a.kernel,
        dense_units: a.units,
        dropout_rate: a.dropout,
        ..ModelSpec::tuned()
    };
    let config = TrainConfig {
        spec,
        filter: a.filter.kind(),
        epochs: a.epochs,
        validation_fraction: a.val_split,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        seed: a.seed,
    };
    config.validate()?;
    Ok(config)
}

/// Metadata stored alongside trained weights.
pub fn model_meta(config: &TrainConfig) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("filter".to_string(), config.filter.map_or("none", FilterKind::name).to_string()),
        ("seed".to_string(), config.seed.to_string()),
        ("epochs".to_string(), config.epochs.to_string()),
        ("learning_rate".to_string(), config.learning_rate.to_string()),
    ])
}

fn filter_from_meta(meta: &BTreeMap<String, String>) -> Result<Option<FilterKind>> {
    match meta.get("filter").map(String::as_str) {
        None | Some("none") => Ok(None),
        Some(name) => name.parse().map(Some).map_err(|_| Error::ModelFormat {
            fault: FormatFault::BadHeader,
            detail: format!("unknown filter {name:?} in metadata"),
        }),
    }
}

pub fn train_cmd(a: &TrainArgs) -> Result<()> {
    let config = train_config(a)?;
    let manifest = Manifest::read(&a.manifest)?;
    let (report, params) = train::train_with_progress(&config, &manifest, |r| {
        eprintln!(
            "epoch {:>2}: train_acc={:.4} train_loss={:.4} val_acc={:.4} val_loss={:.4}",
            r.epoch, r.train_accuracy, r.train_loss, r.val_accuracy, r.val_loss
        );
    })?;
    nn::save_model_with_meta(&config.spec, &params, &model_meta(&config), &a.out)?;
    write(&a.history, train::history_csv(&report.history))?;
    write(&a.report, to_json(&report))?;
    println!(
        "test_accuracy={:.4} test_loss={:.4} train_seconds={:.1}",
        report.test_accuracy, report.test_loss, report.train_seconds
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalReport {
    split: &'static str,
    loss: f64,
    #[serde(flatten)]
    report: ClassReport,
    confusion_matrix: [[u64; 3]; 3],
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let file = nn::load_model_file(&a.model)?;
    let manifest = Manifest::read(&a.manifest)?;
    let split = match a.split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    let loader = ImageLoader {
        size: file.spec.input_height,
        ..ImageLoader::new(filter_from_meta(&file.meta)?.map(FilterKind::spec))
    };
    let data = Dataset::load(&manifest.split(split), &loader)?;
    let ev = train::evaluate(&file.spec, &file.params, &data, 32)?;
    let cm = report::confusion_matrix(&ev.labels, &ev.predictions)?;
    let out = EvalReport {
        split: split.name(),
        loss: ev.loss,
        report: report::classification_report(&cm)?,
        confusion_matrix: cm.counts,
    };
    write(&a.out_json, to_json(&out))?;
    write(&a.out_cm, cm.to_csv())?;
    if let Some(path) = &a.out_heatmap {
        chart::render_heatmap(&cm, path)?;
    }
    println!("{} accuracy={:.4} loss={:.4}", split, ev.accuracy, ev.loss);
    Ok(())
}

pub fn extract(a: &ExtractArgs) -> Result<()> {
    let file = nn::load_model_file(&a.model)?;
    let filter = match a.filter {
        Some(f) => f.kind(),
        None => filter_from_meta(&file.meta)?,
    };
    let loader = ImageLoader {
        size: file.spec.input_height,
        ..ImageLoader::new(filter.map(FilterKind::spec))
    };
    if file.spec.input_height != file.spec.input_width {
        return Err(Error::invalid("feature extraction needs a square model input"));
    }
    let img = raster::load_raster(&a.image)?;
    let prepared = loader.prepare(&img, dataset::Augmentation::None)?;
    let set = report::extract_feature_maps(&file.spec, &file.params, &raster::to_tensor(&prepared))?;
    fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    for layer in &set.layers {
        layer.save_grid(a.out_dir.join(format!("{}.png", layer.name)))?;
    }
    let counts = report::count_inactive_filters(&set);
    for c in &counts {
        println!("{c}");
    }
    write(&a.out_dir.join("inactive.json"), to_json(&counts))?;
    Ok(())
}

pub fn history_series(history: &[train::EpochRecord], metric: Metric) -> Result<Vec<ChartSeries>> {
    let pick = |f: fn(&train::EpochRecord) -> f64| history.iter().map(|r| (r.epoch as f64, f(r))).collect();
    let (tr, va): (Vec<_>, Vec<_>) = match metric {
        Metric::Acc => (pick(|r| r.train_accuracy), pick(|r| r.val_accuracy)),
        Metric::Loss => (pick(|r| r.train_loss), pick(|r| r.val_loss)),
    };
    Ok(vec![ChartSeries::new("training", tr)?, ChartSeries::new("validation", va)?])
}

pub fn plot(a: &PlotArgs) -> Result<()> {
    let text = fs::read_to_string(&a.history).map_err(|e| Error::io(&a.history, e))?;
    let history = train::parse_history_csv(&text)?;
    let title = match a.metric {
        Metric::Acc => "Accuracy",
        Metric::Loss => "Loss",
    };
    chart::render_line_chart(
        &history_series(&history, a.metric)?,
        title,
        &a.out,
        chart::CHART_WIDTH,
        chart::CHART_HEIGHT,
    )
}
