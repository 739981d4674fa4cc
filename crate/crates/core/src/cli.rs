//! The `hrsa` command line.
//!
//! Exit codes: 0 on success, 1 for validation errors (bad flags, misaligned
//! inputs, metric preconditions), 2 for I/O failures.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::geometry::{knn_overlap, linear_cka, DEFAULT_K};
use crate::probe::{cross_transfer, ProbeConfig, DEFAULT_LAMBDA, DEFAULT_MAX_ITERS};
use crate::report::{
    parse_formats, write_report, Format, Inputs, LayerSummary, ModelInput, ProcrustesSummary,
    Report, ResultEntry,
};
use crate::representation::{dimwise_correlation, procrustes_align};
use crate::store::{
    check_alignment, load_activation_set, load_item_matrix, load_label_set, ActivationSet,
    LabelSet, TaskKind,
};
use crate::sweep::{
    checkpoint_series, diagonal_summary, subsample_tokens, sweep, MetricSpec, SweepOptions,
    DEFAULT_SEED, DEFAULT_TOKEN_CAP,
};

#[derive(Debug, Parser)]
#[command(
    name = "hrsa",
    version,
    about = "Compare neural representations layer by layer at the representation, geometry and function levels"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Dimension-wise correlation and orthogonal Procrustes, layer by layer.
    Repr(PairArgs),
    /// Linear CKA and k-NN overlap, layer by layer.
    Geom(PairArgs),
    /// Frozen linear-probe transfer from X to Y.
    Func(PairArgs),
    /// Full layer-by-layer grids for every metric.
    Sweep(PairArgs),
    /// Diagonal metric means across training checkpoints.
    Series(SeriesArgs),
}

#[derive(Debug, Args)]
struct PairArgs {
    /// Dump directory of the first model.
    #[arg(long)]
    x: Option<PathBuf>,
    /// Dump directory of the second model.
    #[arg(long)]
    y: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Args)]
struct SeriesArgs {
    /// Comma-separated dump directories of the first model, one per step.
    #[arg(long, value_delimiter = ',')]
    x_dirs: Vec<PathBuf>,
    /// Comma-separated dump directories of the second model, one per step.
    #[arg(long, value_delimiter = ',')]
    y_dirs: Vec<PathBuf>,
    /// Comma-separated training steps, strictly increasing.
    #[arg(long, value_delimiter = ',')]
    steps: Vec<u64>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated metrics: dimwise, procrustes, cka, knn, knn:{k}, probe.
    #[arg(long)]
    metrics: Option<String>,
    /// k values used for a bare `knn` metric [default: 5,10,50].
    #[arg(long = "k", value_delimiter = ',')]
    k_list: Option<Vec<usize>>,
    /// Restrict to one layer index (probe default: final layer).
    #[arg(long)]
    layer: Option<usize>,
    /// Maximum token rows; larger dumps are subsampled [default: 8192].
    #[arg(long)]
    cap: Option<usize>,
    /// Seed for token subsampling [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Label directory (labels.npy + splits.json) or labels.npy path.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated output formats: json, csv, svg [default: json,csv,svg].
    #[arg(long)]
    formats: Option<String>,
    /// Column-center both inputs before Procrustes.
    #[arg(long)]
    center: bool,
    /// Compare dumps whose corpus fingerprints differ.
    #[arg(long)]
    allow_fingerprint_mismatch: bool,
    /// Worker threads for sweeps [default: available parallelism].
    #[arg(long, env = "HRSA_JOBS")]
    jobs: Option<usize>,
    /// Probe task: classification or regression.
    #[arg(long)]
    task: Option<String>,
    /// L2 penalty of the probe [default: 1e-4].
    #[arg(long)]
    lambda: Option<f64>,
    /// Probe optimizer iteration cap [default: 500].
    #[arg(long)]
    max_iters: Option<usize>,
    /// Probe on item-level dumps (items_layer_{l}.npy) instead of token rows.
    #[arg(long)]
    items: bool,
}

/// Values accepted from a `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    x_dir: Option<PathBuf>,
    y_dir: Option<PathBuf>,
    x_dirs: Option<Vec<PathBuf>>,
    y_dirs: Option<Vec<PathBuf>>,
    steps: Option<Vec<u64>>,
    metrics: Option<Vec<String>>,
    k_list: Option<Vec<usize>>,
    layer: Option<usize>,
    cap: Option<usize>,
    seed: Option<u64>,
    labels_path: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    formats: Option<Vec<String>>,
    center: Option<bool>,
    allow_fingerprint_mismatch: Option<bool>,
    jobs: Option<usize>,
    task: Option<TaskKind>,
    lambda: Option<f64>,
    max_iters: Option<usize>,
    items: Option<bool>,
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub x_dir: Option<PathBuf>,
    pub y_dir: Option<PathBuf>,
    pub metrics: Vec<MetricSpec>,
    pub k_list: Vec<usize>,
    pub layer: Option<usize>,
    pub cap: usize,
    pub seed: u64,
    pub labels_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub formats: BTreeSet<Format>,
    pub center: bool,
    pub allow_fingerprint_mismatch: bool,
    pub jobs: usize,
    pub task: Option<TaskKind>,
    pub probe: ProbeConfig,
    pub items: bool,
}

fn parse_task(s: &str) -> Result<TaskKind> {
    match s {
        "classification" => Ok(TaskKind::Classification),
        "regression" => Ok(TaskKind::Regression),
        other => Err(Error::Invalid(format!(
            "unknown task `{other}` (expected classification or regression)"
        ))),
    }
}

fn read_config(path: &Path) -> Result<ConfigFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Invalid(format!("config {}: {e}", path.display())))
}

impl RunConfig {
    fn resolve(
        common: &CommonArgs,
        file: &ConfigFile,
        x: Option<&PathBuf>,
        y: Option<&PathBuf>,
        default_metrics: &str,
    ) -> Result<Self> {
        let k_list = common
            .k_list
            .clone()
            .or_else(|| file.k_list.clone())
            .unwrap_or_else(|| DEFAULT_K.to_vec());
        let metric_text = common
            .metrics
            .clone()
            .or_else(|| file.metrics.as_ref().map(|m| m.join(",")))
            .unwrap_or_else(|| default_metrics.to_string());
        let metrics = MetricSpec::parse_list(&metric_text, &k_list)?;
        let format_text = common
            .formats
            .clone()
            .or_else(|| file.formats.as_ref().map(|f| f.join(",")))
            .unwrap_or_else(|| "json,csv,svg".to_string());
        let task = match &common.task {
            Some(t) => Some(parse_task(t)?),
            None => file.task,
        };
        Ok(RunConfig {
            x_dir: x.cloned().or_else(|| file.x_dir.clone()),
            y_dir: y.cloned().or_else(|| file.y_dir.clone()),
            metrics,
            k_list,
            layer: common.layer.or(file.layer),
            cap: common.cap.or(file.cap).unwrap_or(DEFAULT_TOKEN_CAP),
            seed: common.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
            labels_path: common.labels.clone().or_else(|| file.labels_path.clone()),
            out_dir: common
                .out
                .clone()
                .or_else(|| file.out_dir.clone())
                .ok_or_else(|| Error::Invalid("--out is required".into()))?,
            formats: parse_formats(&format_text)?,
            center: common.center || file.center.unwrap_or(false),
            allow_fingerprint_mismatch: common.allow_fingerprint_mismatch
                || file.allow_fingerprint_mismatch.unwrap_or(false),
            jobs: common.jobs.or(file.jobs).unwrap_or(0),
            task,
            probe: ProbeConfig {
                reg_lambda: common.lambda.or(file.lambda).unwrap_or(DEFAULT_LAMBDA),
                max_iters: common
                    .max_iters
                    .or(file.max_iters)
                    .unwrap_or(DEFAULT_MAX_ITERS),
            },
            items: common.items || file.items.unwrap_or(false),
        })
    }

    fn sweep_options(&self, labels: Option<LabelSet>) -> SweepOptions {
        SweepOptions {
            jobs: self.jobs,
            center_procrustes: self.center,
            allow_fingerprint_mismatch: self.allow_fingerprint_mismatch,
            probe: labels.map(|l| (l, self.probe.clone())),
        }
    }

    fn require_metrics(&self, command: &str, allowed: &[&str]) -> Result<()> {
        for m in &self.metrics {
            let family = match m {
                MetricSpec::Knn(_) => "knn",
                other => match other {
                    MetricSpec::Dimwise => "dimwise",
                    MetricSpec::Procrustes => "procrustes",
                    MetricSpec::Cka => "cka",
                    _ => "probe",
                },
            };
            if !allowed.contains(&family) {
                return Err(Error::MetricSpec(format!(
                    "{m} is not available in `{command}`"
                )));
            }
        }
        Ok(())
    }

    fn labels(&self) -> Result<Option<LabelSet>> {
        self.labels_path
            .as_ref()
            .map(|p| load_label_set(p, self.task))
            .transpose()
    }
}

fn pair_dirs(cfg: &RunConfig) -> Result<(PathBuf, PathBuf)> {
    match (&cfg.x_dir, &cfg.y_dir) {
        (Some(x), Some(y)) => Ok((x.clone(), y.clone())),
        _ => Err(Error::Invalid("both --x and --y are required".into())),
    }
}

struct LoadedPair {
    x: ActivationSet,
    y: ActivationSet,
    inputs: Inputs,
}

fn load_pair(command: &str, cfg: &RunConfig) -> Result<LoadedPair> {
    let (xd, yd) = pair_dirs(cfg)?;
    let x = load_activation_set(&xd)?;
    let y = load_activation_set(&yd)?;
    check_alignment(&x, &y).require_common(cfg.allow_fingerprint_mismatch)?;
    let inputs = Inputs {
        command: command.to_string(),
        models: vec![
            ModelInput::describe("x", &x, Some(&xd)),
            ModelInput::describe("y", &y, Some(&yd)),
        ],
        subsample: None,
    };
    Ok(LoadedPair { x, y, inputs })
}

/// Diagonal layers to evaluate for the per-layer subcommands.
fn layers_for(cfg: &RunConfig, x: &ActivationSet, y: &ActivationSet) -> Result<Vec<usize>> {
    if let Some(l) = cfg.layer {
        if l >= x.num_layers() || l >= y.num_layers() {
            return Err(Error::Invalid(format!(
                "layer {l} out of range ({} and {} layers)",
                x.num_layers(),
                y.num_layers()
            )));
        }
        return Ok(vec![l]);
    }
    if x.num_layers() != y.num_layers() {
        return Err(Error::Invalid(format!(
            "layer counts differ ({} vs {}); pick one with --layer or use `sweep`",
            x.num_layers(),
            y.num_layers()
        )));
    }
    Ok((0..x.num_layers()).collect())
}

fn summary(metric: String, layers: &[usize], values: Vec<f64>) -> ResultEntry {
    let mean = (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64);
    ResultEntry::LayerSummary(LayerSummary {
        metric,
        layers: layers.to_vec(),
        per_layer: values.into_iter().map(Some).collect(),
        mean,
    })
}

fn subsampled(pair: LoadedPair, cfg: &RunConfig) -> Result<LoadedPair> {
    let (x, y, meta) = subsample_tokens(&pair.x, &pair.y, cfg.cap, cfg.seed)?;
    let mut inputs = pair.inputs;
    inputs.subsample = Some(meta);
    Ok(LoadedPair { x, y, inputs })
}

fn run_repr(cfg: &RunConfig) -> Result<Report> {
    cfg.require_metrics("repr", &["dimwise", "procrustes"])?;
    let pair = subsampled(load_pair("repr", cfg)?, cfg)?;
    let layers = layers_for(cfg, &pair.x, &pair.y)?;
    let mut results = Vec::new();
    for &metric in &cfg.metrics {
        let mut values = Vec::new();
        for &l in &layers {
            let (a, b) = (pair.x.layers()[l].data(), pair.y.layers()[l].data());
            if a.ncols() != b.ncols() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {l}: D mismatch ({} vs {}); {metric} needs equal widths",
                    a.ncols(),
                    b.ncols()
                )));
            }
            match metric {
                MetricSpec::Dimwise => {
                    let r = dimwise_correlation(a, b)?;
                    values.push(r.mean);
                    results.push(ResultEntry::Dimwise {
                        layer: l,
                        result: r,
                    });
                }
                _ => {
                    let r = procrustes_align(a, b, cfg.center)?;
                    values.push(r.h_inv);
                    results.push(ResultEntry::Procrustes {
                        layer: l,
                        result: ProcrustesSummary {
                            dim: a.ncols(),
                            residual: r.residual,
                            h_inv: r.h_inv,
                            degenerate: r.degenerate,
                            centered: r.centered,
                        },
                    });
                }
            }
        }
        results.push(summary(metric.to_string(), &layers, values));
    }
    Ok(Report::new(pair.inputs, results))
}

fn run_geom(cfg: &RunConfig) -> Result<Report> {
    cfg.require_metrics("geom", &["cka", "knn"])?;
    let pair = subsampled(load_pair("geom", cfg)?, cfg)?;
    let layers = layers_for(cfg, &pair.x, &pair.y)?;
    let mut results = Vec::new();
    for &metric in &cfg.metrics {
        let mut values = Vec::new();
        for &l in &layers {
            let (a, b) = (pair.x.layers()[l].data(), pair.y.layers()[l].data());
            match metric {
                MetricSpec::Knn(k) => {
                    let r = knn_overlap(a, b, k)?;
                    values.push(r.mean_overlap);
                    results.push(ResultEntry::Knn {
                        layer: l,
                        k,
                        mean_overlap: r.mean_overlap,
                    });
                }
                _ => {
                    let r = linear_cka(a, b)?;
                    values.push(r.value);
                    results.push(ResultEntry::Cka {
                        layer: l,
                        result: r,
                    });
                }
            }
        }
        results.push(summary(metric.to_string(), &layers, values));
    }
    Ok(Report::new(pair.inputs, results))
}

fn run_func(cfg: &RunConfig) -> Result<Report> {
    cfg.require_metrics("func", &["probe"])?;
    let labels = cfg
        .labels()?
        .ok_or_else(|| Error::Invalid("`func` needs --labels".into()))?;
    let pair = load_pair("func", cfg)?;
    let layer = match cfg.layer {
        Some(l) => l,
        None => pair.x.num_layers().min(pair.y.num_layers()) - 1,
    };
    let (x, y) = if cfg.items {
        let (xd, yd) = pair_dirs(cfg)?;
        (
            load_item_matrix(&xd, layer)?.data().clone(),
            load_item_matrix(&yd, layer)?.data().clone(),
        )
    } else {
        let get = |s: &ActivationSet| {
            s.layer(layer)
                .map(|m| m.data().clone())
                .ok_or_else(|| Error::Invalid(format!("layer {layer} out of range")))
        };
        (get(&pair.x)?, get(&pair.y)?)
    };
    let result = cross_transfer(&x, &y, &labels, &cfg.probe)?;
    Ok(Report::new(
        pair.inputs,
        vec![ResultEntry::Transfer { layer, result }],
    ))
}

fn run_sweep(cfg: &RunConfig) -> Result<Report> {
    let needs_labels = cfg.metrics.contains(&MetricSpec::Probe);
    let labels = cfg.labels()?;
    if needs_labels && labels.is_none() {
        return Err(Error::Invalid("the probe metric needs --labels".into()));
    }
    let mut pair = load_pair("sweep", cfg)?;
    let opts = cfg.sweep_options(labels);
    let grids = sweep(&pair.x, &pair.y, &cfg.metrics, cfg.cap, cfg.seed, &opts)?;
    pair.inputs.subsample = grids.first().and_then(|g| g.meta.subsample.clone());
    let mut results = Vec::new();
    let mut summaries = Vec::new();
    for grid in grids {
        if let Ok(d) = diagonal_summary(&grid) {
            summaries.push(ResultEntry::LayerSummary(LayerSummary {
                metric: grid.metric_name.clone(),
                layers: (0..grid.rows).collect(),
                per_layer: d.per_layer,
                mean: d.mean,
            }));
        }
        results.push(ResultEntry::Grid(grid));
    }
    results.extend(summaries);
    Ok(Report::new(pair.inputs, results))
}

fn run_series(args: &SeriesArgs, file: &ConfigFile, cfg: &RunConfig) -> Result<Report> {
    let pick = |flag: &Vec<PathBuf>, from_file: &Option<Vec<PathBuf>>| {
        if flag.is_empty() {
            from_file.clone().unwrap_or_default()
        } else {
            flag.clone()
        }
    };
    let x_dirs = pick(&args.x_dirs, &file.x_dirs);
    let y_dirs = pick(&args.y_dirs, &file.y_dirs);
    let steps = if args.steps.is_empty() {
        file.steps.clone().unwrap_or_default()
    } else {
        args.steps.clone()
    };
    if steps.is_empty() {
        return Err(Error::Invalid(
            "`series` needs --steps, --x-dirs and --y-dirs".into(),
        ));
    }
    let labels = cfg.labels()?;
    let opts = cfg.sweep_options(labels);
    let series = checkpoint_series(
        &x_dirs,
        &y_dirs,
        &steps,
        &cfg.metrics,
        cfg.cap,
        cfg.seed,
        &opts,
    )?;

    let mut models = Vec::new();
    for ((xd, yd), step) in x_dirs.iter().zip(&y_dirs).zip(&steps) {
        models.push(ModelInput::describe(
            format!("x@{step}"),
            &load_activation_set(xd)?,
            Some(xd),
        ));
        models.push(ModelInput::describe(
            format!("y@{step}"),
            &load_activation_set(yd)?,
            Some(yd),
        ));
    }
    let inputs = Inputs {
        command: "series".into(),
        models,
        subsample: None,
    };
    Ok(Report::new(inputs, vec![ResultEntry::Series(series)]))
}

fn execute(cli: Cli) -> Result<Vec<PathBuf>> {
    let (report, cfg) = match &cli.command {
        Command::Series(args) => {
            let file = args
                .common
                .config
                .as_deref()
                .map(read_config)
                .transpose()?
                .unwrap_or_default();
            let cfg = RunConfig::resolve(&args.common, &file, None, None, "cka,knn,dimwise")?;
            (run_series(args, &file, &cfg)?, cfg)
        }
        Command::Repr(args) | Command::Geom(args) | Command::Func(args) | Command::Sweep(args) => {
            let file = args
                .common
                .config
                .as_deref()
                .map(read_config)
                .transpose()?
                .unwrap_or_default();
            let defaults = match &cli.command {
                Command::Repr(_) => "dimwise,procrustes",
                Command::Geom(_) => "cka,knn",
                Command::Func(_) => "probe",
                _ => "cka,knn,dimwise,procrustes",
            };
            let cfg = RunConfig::resolve(
                &args.common,
                &file,
                args.x.as_ref(),
                args.y.as_ref(),
                defaults,
            )?;
            let report = match &cli.command {
                Command::Repr(_) => run_repr(&cfg)?,
                Command::Geom(_) => run_geom(&cfg)?,
                Command::Func(_) => run_func(&cfg)?,
                _ => run_sweep(&cfg)?,
            };
            (report, cfg)
        }
    };
    write_report(&report, &cfg.out_dir, &cfg.formats)
}

/// Parse `argv` (program name first), run, and return the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match execute(cli) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_io() {
                2
            } else {
                1
            }
        }
    }
}
