//! Layer-by-layer metric grids, token subsampling and checkpoint series.
//!
//! Every cell of a grid is an independent task. Cells run on a bounded rayon
//! pool and land in a preallocated grid by index, so parallel and serial runs
//! produce identical grids.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{linear_cka, overlap_of};
use crate::numerics::{check_k, topk_cosine_neighbors, NeighborSets};
use crate::probe::{evaluate_probe, fit_probe, ProbeConfig, ProbeModel};
use crate::representation::{dimwise_correlation, procrustes_align};
use crate::store::{check_alignment, load_activation_set, ActivationSet, LabelSet, Split};
use crate::synth;

pub const DEFAULT_TOKEN_CAP: usize = 8192;
pub const DEFAULT_SEED: u64 = 0;

/// One metric as named on the command line: `dimwise`, `procrustes`, `cka`,
/// `knn:{k}` or `probe`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MetricSpec {
    Dimwise,
    Procrustes,
    Cka,
    Knn(usize),
    Probe,
}

impl MetricSpec {
    /// Metrics that compare coordinates one-to-one and so need equal widths.
    pub fn needs_same_dim(self) -> bool {
        matches!(
            self,
            MetricSpec::Dimwise | MetricSpec::Procrustes | MetricSpec::Probe
        )
    }

    pub fn k(self) -> Option<usize> {
        match self {
            MetricSpec::Knn(k) => Some(k),
            _ => None,
        }
    }

    /// Parse a comma-separated list. A bare `knn` expands to one entry per
    /// value of `k_list`.
    pub fn parse_list(list: &str, k_list: &[usize]) -> Result<Vec<MetricSpec>> {
        let mut out = Vec::new();
        for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            if item == "knn" {
                if k_list.is_empty() {
                    return Err(Error::MetricSpec(
                        "knn requested but the k list is empty".into(),
                    ));
                }
                out.extend(k_list.iter().map(|&k| MetricSpec::Knn(k)));
            } else {
                out.push(item.parse()?);
            }
        }
        if out.is_empty() {
            return Err(Error::MetricSpec("no metrics requested".into()));
        }
        let mut seen = std::collections::HashSet::new();
        out.retain(|m| seen.insert(*m));
        Ok(out)
    }
}

impl fmt::Display for MetricSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricSpec::Dimwise => f.write_str("dimwise"),
            MetricSpec::Procrustes => f.write_str("procrustes"),
            MetricSpec::Cka => f.write_str("cka"),
            MetricSpec::Knn(k) => write!(f, "knn:{k}"),
            MetricSpec::Probe => f.write_str("probe"),
        }
    }
}

impl FromStr for MetricSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dimwise" => Ok(MetricSpec::Dimwise),
            "procrustes" => Ok(MetricSpec::Procrustes),
            "cka" => Ok(MetricSpec::Cka),
            "probe" => Ok(MetricSpec::Probe),
            _ => s
                .strip_prefix("knn:")
                .and_then(|k| k.parse::<usize>().ok())
                .map(MetricSpec::Knn)
                .ok_or_else(|| Error::MetricSpec(s.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsampleMeta {
    pub cap: usize,
    pub seed: u64,
    pub original_n: usize,
    pub applied: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub model_x: String,
    pub model_y: String,
    pub n_tokens_used: usize,
    pub subsample: Option<SubsampleMeta>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NullCell {
    pub row: usize,
    pub col: usize,
    pub reason: String,
}

/// `rows x cols` metric values for every layer pair; `None` marks a cell whose
/// preconditions failed, with the reason listed in `null_cells`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricGrid {
    pub metric_name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<Vec<Option<f64>>>,
    pub k: Option<usize>,
    pub null_cells: Vec<NullCell>,
    pub meta: GridMeta,
}

impl MetricGrid {
    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.values[row][col]
    }

    /// File-system friendly form of the metric name.
    pub fn file_stem(&self) -> String {
        self.metric_name.replace(':', "_")
    }
}

#[derive(Clone, Debug, Default)]
pub struct SweepOptions {
    /// Worker threads; `0` means available parallelism.
    pub jobs: usize,
    /// Column-center both inputs before Procrustes.
    pub center_procrustes: bool,
    pub allow_fingerprint_mismatch: bool,
    /// Labels and settings for the `probe` metric.
    pub probe: Option<(LabelSet, ProbeConfig)>,
}

impl SweepOptions {
    fn pool(&self) -> Result<rayon::ThreadPool> {
        let jobs = if self.jobs == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            self.jobs
        };
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Invalid(format!("cannot start worker pool: {e}")))
    }
}

/// Per-layer work shared by many cells.
enum Prepared {
    None,
    Neighbors(
        Vec<std::result::Result<NeighborSets, String>>,
        Vec<std::result::Result<NeighborSets, String>>,
    ),
    Probes(Vec<std::result::Result<ProbeModel, String>>),
}

fn prepare(
    a: &ActivationSet,
    b: &ActivationSet,
    metric: MetricSpec,
    opts: &SweepOptions,
) -> Result<Prepared> {
    Ok(match metric {
        MetricSpec::Knn(k) => {
            let neighbors = |set: &ActivationSet| -> Vec<_> {
                set.layers()
                    .par_iter()
                    .map(|m| topk_cosine_neighbors(m.data(), k).map_err(|e| e.to_string()))
                    .collect()
            };
            Prepared::Neighbors(neighbors(a), neighbors(b))
        }
        MetricSpec::Probe => {
            let (labels, config) = opts
                .probe
                .as_ref()
                .ok_or_else(|| Error::Invalid("probe metric needs a label set".into()))?;
            Prepared::Probes(
                a.layers()
                    .par_iter()
                    .map(|m| fit_probe(m.data(), labels, config).map_err(|e| e.to_string()))
                    .collect(),
            )
        }
        _ => Prepared::None,
    })
}

fn cell(
    a: &ActivationSet,
    b: &ActivationSet,
    metric: MetricSpec,
    prepared: &Prepared,
    opts: &SweepOptions,
    i: usize,
    j: usize,
) -> std::result::Result<f64, String> {
    let (x, y) = (a.layers()[i].data(), b.layers()[j].data());
    if metric.needs_same_dim() && x.ncols() != y.ncols() {
        return Err(format!("D mismatch ({} vs {})", x.ncols(), y.ncols()));
    }
    let text = |e: Error| e.to_string();
    match (metric, prepared) {
        (MetricSpec::Dimwise, _) => dimwise_correlation(x, y).map(|r| r.mean).map_err(text),
        (MetricSpec::Procrustes, _) => procrustes_align(x, y, opts.center_procrustes)
            .map(|r| r.h_inv)
            .map_err(text),
        (MetricSpec::Cka, _) => linear_cka(x, y).map(|r| r.value).map_err(text),
        (MetricSpec::Knn(_), Prepared::Neighbors(na, nb)) => {
            let nx = na[i].as_ref().map_err(|e| format!("X layer {i}: {e}"))?;
            let ny = nb[j].as_ref().map_err(|e| format!("Y layer {j}: {e}"))?;
            overlap_of(nx, ny).map(|r| r.mean_overlap).map_err(text)
        }
        (MetricSpec::Probe, Prepared::Probes(probes)) => {
            let probe = probes[i]
                .as_ref()
                .map_err(|e| format!("probe on X layer {i}: {e}"))?;
            let labels = &opts.probe.as_ref().expect("checked in prepare").0;
            evaluate_probe(probe, y, labels, Split::Test).map_err(text)
        }
        _ => unreachable!("prepared data matches the metric"),
    }
}

fn check_global(
    a: &ActivationSet,
    b: &ActivationSet,
    metric: MetricSpec,
    opts: &SweepOptions,
) -> Result<()> {
    check_alignment(a, b).require_common(opts.allow_fingerprint_mismatch)?;
    if let MetricSpec::Knn(k) = metric {
        check_k(k, a.n_tokens())?;
    }
    if let (MetricSpec::Probe, Some((labels, _))) = (metric, &opts.probe) {
        if labels.n_items() != a.n_tokens() {
            return Err(Error::Probe(format!(
                "{} labels for {} rows; the probe metric needs one label per row and no subsampling",
                labels.n_items(),
                a.n_tokens()
            )));
        }
    }
    Ok(())
}

type CellResult = std::result::Result<f64, String>;

fn compute_cells(
    a: &ActivationSet,
    b: &ActivationSet,
    metric: MetricSpec,
    cells: &[(usize, usize)],
    opts: &SweepOptions,
) -> Result<Vec<CellResult>> {
    check_global(a, b, metric, opts)?;
    opts.pool()?.install(|| {
        let prepared = prepare(a, b, metric, opts)?;
        Ok(cells
            .par_iter()
            .map(|&(i, j)| cell(a, b, metric, &prepared, opts, i, j))
            .collect())
    })
}

/// Evaluate `metric` on every pair `(a.layer[i], b.layer[j])`.
pub fn layer_grid(
    a: &ActivationSet,
    b: &ActivationSet,
    metric: MetricSpec,
    opts: &SweepOptions,
) -> Result<MetricGrid> {
    let (rows, cols) = (a.num_layers(), b.num_layers());
    let cells: Vec<(usize, usize)> = (0..rows)
        .flat_map(|i| (0..cols).map(move |j| (i, j)))
        .collect();
    let results = compute_cells(a, b, metric, &cells, opts)?;

    let mut values = vec![vec![None; cols]; rows];
    let mut null_cells = Vec::new();
    for (&(i, j), result) in cells.iter().zip(results) {
        match result {
            Ok(v) => values[i][j] = Some(v),
            Err(reason) => null_cells.push(NullCell {
                row: i,
                col: j,
                reason,
            }),
        }
    }
    Ok(MetricGrid {
        metric_name: metric.to_string(),
        rows,
        cols,
        values,
        k: metric.k(),
        null_cells,
        meta: GridMeta {
            model_x: a.model_id.clone(),
            model_y: b.model_id.clone(),
            n_tokens_used: a.n_tokens(),
            subsample: None,
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagonalSummary {
    pub per_layer: Vec<Option<f64>>,
    /// Unweighted mean of the non-null diagonal; `None` if all are null.
    pub mean: Option<f64>,
}

fn summarize(per_layer: Vec<Option<f64>>) -> DiagonalSummary {
    let defined: Vec<f64> = per_layer.iter().flatten().copied().collect();
    let mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    DiagonalSummary { per_layer, mean }
}

pub fn diagonal_summary(grid: &MetricGrid) -> Result<DiagonalSummary> {
    if grid.rows != grid.cols {
        return Err(Error::ShapeMismatch(format!(
            "diagonal summary needs a square grid, got {}x{}",
            grid.rows, grid.cols
        )));
    }
    Ok(summarize(
        (0..grid.rows).map(|i| grid.values[i][i]).collect(),
    ))
}

/// Keep the same seeded uniform sample of at most `cap` token rows in every
/// layer of both sets. Sampled rows keep their original order.
pub fn subsample_tokens(
    a: &ActivationSet,
    b: &ActivationSet,
    cap: usize,
    seed: u64,
) -> Result<(ActivationSet, ActivationSet, SubsampleMeta)> {
    if cap < 2 {
        return Err(Error::Invalid(format!(
            "token cap must be at least 2, got {cap}"
        )));
    }
    check_alignment(a, b).require_common(true)?;
    let n = a.n_tokens();
    let meta = SubsampleMeta {
        cap,
        seed,
        original_n: n,
        applied: n > cap,
    };
    if n <= cap {
        return Ok((a.clone(), b.clone(), meta));
    }
    let rows = sample_rows(n, cap, seed);
    Ok((a.select_rows(&rows), b.select_rows(&rows), meta))
}

pub fn sample_rows(n: usize, cap: usize, seed: u64) -> Vec<usize> {
    let mut rows = index::sample(&mut synth::rng(seed), n, cap).into_vec();
    rows.sort_unstable();
    rows
}

/// Subsample if needed, then build one grid per metric.
pub fn sweep(
    a: &ActivationSet,
    b: &ActivationSet,
    metrics: &[MetricSpec],
    cap: usize,
    seed: u64,
    opts: &SweepOptions,
) -> Result<Vec<MetricGrid>> {
    check_alignment(a, b).require_common(opts.allow_fingerprint_mismatch)?;
    let (a, b, meta) = subsample_tokens(a, b, cap, seed)?;
    if meta.applied && metrics.contains(&MetricSpec::Probe) {
        return Err(Error::Invalid(format!(
            "probe metric cannot run on a token subsample (N = {} > cap {cap})",
            meta.original_n
        )));
    }
    metrics
        .iter()
        .map(|&m| {
            let mut grid = layer_grid(&a, &b, m, opts)?;
            grid.meta.subsample = Some(meta.clone());
            Ok(grid)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSeries {
    pub steps: Vec<u64>,
    /// Diagonal mean of each metric, aligned with `steps`.
    pub per_metric: BTreeMap<String, Vec<Option<f64>>>,
}

/// Diagonal-only summary of one set pair; equals
/// `diagonal_summary(layer_grid(..))` without the off-diagonal work.
pub fn diagonal_only(
    a: &ActivationSet,
    b: &ActivationSet,
    metric: MetricSpec,
    opts: &SweepOptions,
) -> Result<DiagonalSummary> {
    if a.num_layers() != b.num_layers() {
        return Err(Error::ShapeMismatch(format!(
            "diagonal summary needs equal layer counts, got {} and {}",
            a.num_layers(),
            b.num_layers()
        )));
    }
    let cells: Vec<(usize, usize)> = (0..a.num_layers()).map(|i| (i, i)).collect();
    let results = compute_cells(a, b, metric, &cells, opts)?;
    Ok(summarize(results.into_iter().map(|r| r.ok()).collect()))
}

/// Metric trajectories over training steps. `pairs[s]` holds the two sets
/// compared at `steps[s]`.
pub fn checkpoint_series_sets(
    pairs: &[(ActivationSet, ActivationSet)],
    steps: &[u64],
    metrics: &[MetricSpec],
    cap: usize,
    seed: u64,
    opts: &SweepOptions,
) -> Result<CheckpointSeries> {
    if pairs.len() != steps.len() {
        return Err(Error::Invalid(format!(
            "{} checkpoint pairs for {} steps",
            pairs.len(),
            steps.len()
        )));
    }
    if steps.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Invalid("steps must be strictly increasing".into()));
    }
    let mut per_metric: BTreeMap<String, Vec<Option<f64>>> = metrics
        .iter()
        .map(|m| (m.to_string(), Vec::with_capacity(steps.len())))
        .collect();
    for ((a, b), step) in pairs.iter().zip(steps) {
        let at_step = |e: Error| Error::Invalid(format!("step {step}: {e}"));
        check_alignment(a, b)
            .require_common(opts.allow_fingerprint_mismatch)
            .map_err(at_step)?;
        let (a, b, _) = subsample_tokens(a, b, cap, seed).map_err(at_step)?;
        for &m in metrics {
            let summary = diagonal_only(&a, &b, m, opts).map_err(at_step)?;
            per_metric
                .get_mut(&m.to_string())
                .expect("seeded above")
                .push(summary.mean);
        }
    }
    Ok(CheckpointSeries {
        steps: steps.to_vec(),
        per_metric,
    })
}

/// [`checkpoint_series_sets`] over dump directories.
pub fn checkpoint_series(
    x_dirs: &[PathBuf],
    y_dirs: &[PathBuf],
    steps: &[u64],
    metrics: &[MetricSpec],
    cap: usize,
    seed: u64,
    opts: &SweepOptions,
) -> Result<CheckpointSeries> {
    if x_dirs.len() != steps.len() || y_dirs.len() != steps.len() {
        return Err(Error::Invalid(format!(
            "{} x dirs and {} y dirs for {} steps",
            x_dirs.len(),
            y_dirs.len(),
            steps.len()
        )));
    }
    let pairs = x_dirs
        .iter()
        .zip(y_dirs)
        .map(|(x, y)| Ok((load_activation_set(x)?, load_activation_set(y)?)))
        .collect::<Result<Vec<_>>>()?;
    checkpoint_series_sets(&pairs, steps, metrics, cap, seed, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::SourceDtype;
    use nalgebra::DMatrix;

    fn set(model: &str, layers: Vec<DMatrix<f64>>) -> ActivationSet {
        ActivationSet::from_matrices(model, "fp", SourceDtype::F64, layers).unwrap()
    }

    fn random_set(model: &str, seed: u64, layers: usize, n: usize, d: usize) -> ActivationSet {
        let mut rng = synth::rng(seed);
        set(
            model,
            (0..layers)
                .map(|_| synth::gaussian(&mut rng, n, d))
                .collect(),
        )
    }

    #[test]
    fn metric_spec_parsing() {
        assert_eq!(
            MetricSpec::parse_list("cka,knn:5,dimwise,procrustes", &[]).unwrap(),
            vec![
                MetricSpec::Cka,
                MetricSpec::Knn(5),
                MetricSpec::Dimwise,
                MetricSpec::Procrustes
            ]
        );
        assert_eq!(
            MetricSpec::parse_list("knn,knn:10", &[5, 10]).unwrap(),
            vec![MetricSpec::Knn(5), MetricSpec::Knn(10)]
        );
        assert!(MetricSpec::parse_list("knn", &[]).is_err());
        assert!(MetricSpec::parse_list("cca", &[]).is_err());
        assert!(MetricSpec::parse_list("knn:x", &[]).is_err());
        assert!(MetricSpec::parse_list("", &[]).is_err());
        assert_eq!(MetricSpec::Knn(50).to_string(), "knn:50");
    }

    #[test]
    fn single_identical_layer() {
        let a = random_set("a", 1, 1, 20, 4);
        let g = layer_grid(&a, &a, MetricSpec::Cka, &SweepOptions::default()).unwrap();
        assert_eq!((g.rows, g.cols), (1, 1));
        assert!((g.get(0, 0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_sets_have_unit_diagonal() {
        let a = random_set("a", 2, 3, 30, 5);
        let g = layer_grid(&a, &a, MetricSpec::Cka, &SweepOptions::default()).unwrap();
        for i in 0..3 {
            assert!((g.get(i, i).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn width_mismatch_gives_null_cells() {
        let mut rng = synth::rng(3);
        let a = set(
            "a",
            vec![
                synth::gaussian(&mut rng, 20, 3),
                synth::gaussian(&mut rng, 20, 4),
            ],
        );
        let b = set(
            "b",
            vec![
                synth::gaussian(&mut rng, 20, 4),
                synth::gaussian(&mut rng, 20, 4),
            ],
        );
        let g = layer_grid(&a, &b, MetricSpec::Dimwise, &SweepOptions::default()).unwrap();
        assert_eq!(g.values[0], vec![None, None]);
        assert!(g.values[1].iter().all(Option::is_some));
        assert_eq!(g.null_cells.len(), 2);
        assert!(g
            .null_cells
            .iter()
            .all(|c| c.row == 0 && c.reason.starts_with("D mismatch")));

        // geometry metrics do not need equal widths
        let cka = layer_grid(&a, &b, MetricSpec::Cka, &SweepOptions::default()).unwrap();
        assert!(cka.null_cells.is_empty());
    }

    #[test]
    fn token_mismatch_is_global_error() {
        let a = random_set("a", 4, 2, 20, 3);
        let b = random_set("b", 5, 2, 19, 3);
        assert!(matches!(
            layer_grid(&a, &b, MetricSpec::Cka, &SweepOptions::default()),
            Err(Error::TokenCountMismatch { .. })
        ));
        let a = random_set("a", 4, 2, 4, 3);
        assert!(matches!(
            layer_grid(&a, &a, MetricSpec::Knn(5), &SweepOptions::default()),
            Err(Error::KOutOfRange { .. })
        ));
    }

    #[test]
    fn symmetric_metrics_transpose() {
        let a = random_set("a", 6, 3, 40, 4);
        let b = random_set("b", 7, 2, 40, 4);
        for m in [MetricSpec::Cka, MetricSpec::Knn(5), MetricSpec::Dimwise] {
            let ab = layer_grid(&a, &b, m, &SweepOptions::default()).unwrap();
            let ba = layer_grid(&b, &a, m, &SweepOptions::default()).unwrap();
            for i in 0..3 {
                for j in 0..2 {
                    assert!(
                        (ab.get(i, j).unwrap() - ba.get(j, i).unwrap()).abs() <= 1e-12,
                        "{m}"
                    );
                }
            }
        }
    }

    #[test]
    fn parallel_equals_serial() {
        let a = random_set("a", 8, 4, 60, 6);
        let b = random_set("b", 9, 4, 60, 6);
        for m in [
            MetricSpec::Cka,
            MetricSpec::Knn(5),
            MetricSpec::Dimwise,
            MetricSpec::Procrustes,
        ] {
            let serial = layer_grid(
                &a,
                &b,
                m,
                &SweepOptions {
                    jobs: 1,
                    ..Default::default()
                },
            )
            .unwrap();
            let parallel = layer_grid(
                &a,
                &b,
                m,
                &SweepOptions {
                    jobs: 4,
                    ..Default::default()
                },
            )
            .unwrap();
            assert_eq!(serial, parallel);
        }
    }

    fn grid_with_diagonal(diag: &[Option<f64>], cols: usize) -> MetricGrid {
        let rows = diag.len();
        let mut values = vec![vec![Some(0.0); cols]; rows];
        for (i, v) in diag.iter().enumerate() {
            if i < cols {
                values[i][i] = *v;
            }
        }
        MetricGrid {
            metric_name: "cka".into(),
            rows,
            cols,
            values,
            k: None,
            null_cells: vec![],
            meta: GridMeta {
                model_x: "a".into(),
                model_y: "b".into(),
                n_tokens_used: 10,
                subsample: None,
            },
        }
    }

    #[test]
    fn diagonal_summary_examples() {
        let s =
            diagonal_summary(&grid_with_diagonal(&[Some(0.4), Some(0.5), Some(0.6)], 3)).unwrap();
        assert!((s.mean.unwrap() - 0.5).abs() < 1e-15);
        let s = diagonal_summary(&grid_with_diagonal(&[Some(0.4), None, Some(0.6)], 3)).unwrap();
        assert!((s.mean.unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(s.per_layer[1], None);
        assert!(diagonal_summary(&grid_with_diagonal(&[Some(1.0), Some(1.0)], 3)).is_err());
    }

    #[test]
    fn diagonal_only_matches_full_grid() {
        let a = random_set("a", 10, 3, 30, 4);
        let b = random_set("b", 11, 3, 30, 4);
        for m in [MetricSpec::Cka, MetricSpec::Knn(3), MetricSpec::Procrustes] {
            let full = diagonal_summary(&layer_grid(&a, &b, m, &SweepOptions::default()).unwrap())
                .unwrap();
            assert_eq!(
                diagonal_only(&a, &b, m, &SweepOptions::default()).unwrap(),
                full
            );
        }
    }

    #[test]
    fn subsampling() {
        let a = random_set("a", 12, 2, 10, 3);
        let (sa, _, meta) = subsample_tokens(&a, &a, 100, 1).unwrap();
        assert_eq!(sa, a);
        assert!(!meta.applied);

        let a = random_set("a", 13, 2, 1000, 3);
        let b = random_set("b", 14, 2, 1000, 3);
        let (sa, sb, meta) = subsample_tokens(&a, &b, 100, 7).unwrap();
        assert!(meta.applied);
        assert_eq!((sa.n_tokens(), sb.n_tokens()), (100, 100));
        let rows = sample_rows(1000, 100, 7);
        assert_eq!(rows, sample_rows(1000, 100, 7));
        assert!(rows.windows(2).all(|w| w[0] < w[1]));
        for l in 0..2 {
            assert_eq!(
                sa.layers()[l].data(),
                &a.layers()[l].data().select_rows(&rows)
            );
            assert_eq!(
                sb.layers()[l].data(),
                &b.layers()[l].data().select_rows(&rows)
            );
        }
        assert!(subsample_tokens(&a, &b, 1, 0).is_err());
    }

    #[test]
    fn subsampled_grids_are_reproducible() {
        let a = random_set("a", 15, 2, 300, 4);
        let b = random_set("b", 16, 2, 300, 4);
        let run = || {
            sweep(
                &a,
                &b,
                &[MetricSpec::Cka, MetricSpec::Knn(5)],
                50,
                3,
                &SweepOptions::default(),
            )
            .unwrap()
        };
        let (first, second) = (run(), run());
        assert_eq!(
            serde_json::to_string(&first).unwrap(),
            serde_json::to_string(&second).unwrap()
        );
        assert_eq!(first[0].meta.subsample.as_ref().unwrap().seed, 3);
        assert_eq!(first[0].meta.n_tokens_used, 50);
    }

    #[test]
    fn series_examples() {
        let a = random_set("a", 17, 2, 25, 3);
        let s = checkpoint_series_sets(
            &[(a.clone(), a.clone())],
            &[0],
            &[MetricSpec::Cka],
            100,
            0,
            &SweepOptions::default(),
        )
        .unwrap();
        assert!((s.per_metric["cka"][0].unwrap() - 1.0).abs() < 1e-12);

        let b = random_set("b", 18, 2, 25, 3);
        let pairs = vec![(a.clone(), b.clone()), (a.clone(), b.clone())];
        let s = checkpoint_series_sets(
            &pairs,
            &[0, 10],
            &[MetricSpec::Cka, MetricSpec::Knn(3)],
            100,
            0,
            &SweepOptions::default(),
        )
        .unwrap();
        for series in s.per_metric.values() {
            assert_eq!(series[0], series[1]);
        }
        assert!(checkpoint_series_sets(
            &pairs,
            &[10, 10],
            &[MetricSpec::Cka],
            100,
            0,
            &SweepOptions::default()
        )
        .is_err());

        let short = random_set("c", 19, 2, 24, 3);
        let err = checkpoint_series_sets(
            &[(a.clone(), b), (a, short)],
            &[0, 5],
            &[MetricSpec::Cka],
            100,
            0,
            &SweepOptions::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("step 5"), "{err}");
    }
}
