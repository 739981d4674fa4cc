//! Report serialization: `report.json`, per-grid CSV tables and SVG heatmaps.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CkaResult;
use crate::probe::TransferResult;
use crate::representation::DimwiseCorrelation;
use crate::store::ActivationSet;
use crate::sweep::{CheckpointSeries, MetricGrid, SubsampleMeta};

pub const SCHEMA_VERSION: &str = "1.0";
pub const REPORT_FILE: &str = "report.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelInput {
    /// `x` or `y`, suffixed with the step for checkpoint series.
    pub role: String,
    pub model_id: String,
    pub corpus_fingerprint: String,
    pub num_layers: usize,
    pub n_tokens: usize,
    pub dims: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

impl ModelInput {
    pub fn describe(role: impl Into<String>, set: &ActivationSet, path: Option<&Path>) -> Self {
        ModelInput {
            role: role.into(),
            model_id: set.model_id.clone(),
            corpus_fingerprint: set.corpus_fingerprint.clone(),
            num_layers: set.num_layers(),
            n_tokens: set.n_tokens(),
            dims: set.dims(),
            path: path.map(|p| p.display().to_string()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Inputs {
    pub command: String,
    pub models: Vec<ModelInput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subsample: Option<SubsampleMeta>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcrustesSummary {
    pub dim: usize,
    pub residual: f64,
    pub h_inv: f64,
    pub degenerate: bool,
    pub centered: bool,
}

/// Per-layer values of one metric plus their unweighted mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub metric: String,
    pub layers: Vec<usize>,
    pub per_layer: Vec<Option<f64>>,
    /// `None` when no layer has a defined value.
    pub mean: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResultEntry {
    Grid(MetricGrid),
    Dimwise {
        layer: usize,
        result: DimwiseCorrelation,
    },
    Procrustes {
        layer: usize,
        result: ProcrustesSummary,
    },
    Cka {
        layer: usize,
        result: CkaResult,
    },
    Knn {
        layer: usize,
        k: usize,
        mean_overlap: f64,
    },
    LayerSummary(LayerSummary),
    Transfer {
        layer: usize,
        result: TransferResult,
    },
    Series(CheckpointSeries),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: String,
    pub created_at: String,
    pub inputs: Inputs,
    pub results: Vec<ResultEntry>,
}

impl Report {
    pub fn new(inputs: Inputs, results: Vec<ResultEntry>) -> Self {
        Report {
            schema_version: SCHEMA_VERSION.to_string(),
            created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            inputs,
            results,
        }
    }

    pub fn grids(&self) -> impl Iterator<Item = &MetricGrid> {
        self.results.iter().filter_map(|r| match r {
            ResultEntry::Grid(g) => Some(g),
            _ => None,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Invalid(format!("malformed report: {e}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Format {
    Json,
    Csv,
    Svg,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            "svg" => Ok(Format::Svg),
            other => Err(Error::Invalid(format!(
                "unknown format `{other}` (expected json, csv or svg)"
            ))),
        }
    }
}

pub fn parse_formats(list: &str) -> Result<BTreeSet<Format>> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect()
}

fn write(path: PathBuf, contents: &str, manifest: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    manifest.push(path);
    Ok(())
}

/// Write `report.json` plus, per grid, `grid_{metric}.csv` and/or
/// `heatmap_{metric}.svg`. Returns the paths written.
pub fn write_report(
    report: &Report,
    out_dir: &Path,
    formats: &BTreeSet<Format>,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut manifest = Vec::new();
    write(out_dir.join(REPORT_FILE), &report.to_json(), &mut manifest)?;
    for grid in report.grids() {
        if formats.contains(&Format::Csv) {
            write(
                out_dir.join(format!("grid_{}.csv", grid.file_stem())),
                &grid_csv(grid),
                &mut manifest,
            )?;
        }
        if formats.contains(&Format::Svg) {
            write(
                out_dir.join(format!("heatmap_{}.svg", grid.file_stem())),
                &grid_svg(grid),
                &mut manifest,
            )?;
        }
    }
    Ok(manifest)
}

/// Nine significant digits, fixed notation for moderate exponents.
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let (sign, mantissa) = match mantissa.strip_prefix('-') {
        Some(m) => ("-", m),
        None => ("", mantissa),
    };
    let digits: String = mantissa.chars().filter(|c| *c != '.').collect();
    let trim = |s: String| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    };
    if (-5..9).contains(&exp) {
        let body = if exp >= 0 {
            let split = exp as usize + 1;
            format!("{}.{}", &digits[..split], &digits[split..])
        } else {
            format!("0.{}{}", "0".repeat((-exp - 1) as usize), digits)
        };
        format!("{sign}{}", trim(body))
    } else {
        let m = trim(format!("{}.{}", &digits[..1], &digits[1..]));
        format!("{sign}{m}e{exp}")
    }
}

/// CSV with layer indices as headers; null cells are empty.
pub fn grid_csv(grid: &MetricGrid) -> String {
    let mut out = String::from("layer");
    for j in 0..grid.cols {
        let _ = write!(out, ",{j}");
    }
    out.push('\n');
    for (i, row) in grid.values.iter().enumerate() {
        let _ = write!(out, "{i}");
        for v in row {
            out.push(',');
            if let Some(v) = v {
                out.push_str(&format_sig9(*v));
            }
        }
        out.push('\n');
    }
    out
}

/// Parse a grid CSV back into values.
pub fn parse_grid_csv(text: &str) -> Result<Vec<Vec<Option<f64>>>> {
    let bad = |msg: String| Error::Invalid(format!("grid csv: {msg}"));
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty".into()))?;
    let cols = header.split(',').count() - 1;
    lines
        .map(|line| {
            let cells: Vec<&str> = line.split(',').skip(1).collect();
            if cells.len() != cols {
                return Err(bad(format!(
                    "row has {} cells, header has {cols}",
                    cells.len()
                )));
            }
            cells
                .iter()
                .map(|c| {
                    if c.is_empty() {
                        Ok(None)
                    } else {
                        c.parse::<f64>()
                            .map(Some)
                            .map_err(|_| bad(format!("bad number `{c}`")))
                    }
                })
                .collect()
        })
        .collect()
}

const LOW: (f64, f64, f64) = (68.0, 1.0, 84.0);
const HIGH: (f64, f64, f64) = (253.0, 231.0, 37.0);
const NULL_FILL: &str = "#cccccc";
const CELL: usize = 40;
const MARGIN: usize = 60;

fn color(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let mix = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!(
        "#{:02x}{:02x}{:02x}",
        mix(LOW.0, HIGH.0),
        mix(LOW.1, HIGH.1),
        mix(LOW.2, HIGH.2)
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Heatmap with a linear color scale over the non-null range. Each cell
/// carries its exact value as a tooltip.
pub fn grid_svg(grid: &MetricGrid) -> String {
    let defined: Vec<f64> = grid.values.iter().flatten().flatten().copied().collect();
    let min = defined.iter().copied().fold(f64::INFINITY, f64::min);
    let max = defined.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let degenerate = !defined.is_empty() && max == min;

    let width = MARGIN + grid.cols * CELL + 20;
    let height = MARGIN + grid.rows * CELL + 50;
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{MARGIN}" y="20" font-family="sans-serif" font-size="14">{} ({} vs {})</text>"#,
        escape(&grid.metric_name),
        escape(&grid.meta.model_x),
        escape(&grid.meta.model_y)
    );
    for j in 0..grid.cols {
        let x = MARGIN + j * CELL + CELL / 2;
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{}" font-family="sans-serif" font-size="10" text-anchor="middle">{j}</text>"#,
            MARGIN - 6
        );
    }
    for (i, row) in grid.values.iter().enumerate() {
        let y = MARGIN + i * CELL;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="10" text-anchor="end">{i}</text>"#,
            MARGIN - 6,
            y + CELL / 2 + 4
        );
        for (j, v) in row.iter().enumerate() {
            let x = MARGIN + j * CELL;
            let (fill, tip) = match v {
                Some(v) => {
                    let t = if degenerate {
                        0.5
                    } else {
                        (v - min) / (max - min)
                    };
                    (color(t), format!("row {i}, col {j}: {v}"))
                }
                None => {
                    let reason = grid
                        .null_cells
                        .iter()
                        .find(|c| c.row == i && c.col == j)
                        .map_or("null", |c| c.reason.as_str());
                    (
                        NULL_FILL.to_string(),
                        format!("row {i}, col {j}: null ({reason})"),
                    )
                }
            };
            let _ = writeln!(
                s,
                r#"<rect class="cell" x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{fill}"><title>{}</title></rect>"#,
                escape(&tip)
            );
        }
    }
    let note_y = MARGIN + grid.rows * CELL + 20;
    let note = if defined.is_empty() {
        "no defined cells".to_string()
    } else if degenerate {
        format!("degenerate range: every defined cell equals {min}")
    } else {
        format!("color scale: {min} (dark) to {max} (light)")
    };
    let _ = writeln!(
        s,
        r#"<text x="{MARGIN}" y="{note_y}" font-family="sans-serif" font-size="11">{}</text>"#,
        escape(&note)
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sweep::{GridMeta, NullCell};
    use proptest::prelude::*;

    fn grid(values: Vec<Vec<Option<f64>>>) -> MetricGrid {
        let null_cells = values
            .iter()
            .enumerate()
            .flat_map(|(i, r)| {
                r.iter()
                    .enumerate()
                    .filter(|(_, v)| v.is_none())
                    .map(move |(j, _)| NullCell {
                        row: i,
                        col: j,
                        reason: "D mismatch (3 vs 4)".into(),
                    })
            })
            .collect();
        MetricGrid {
            metric_name: "knn:5".into(),
            rows: values.len(),
            cols: values[0].len(),
            values,
            k: Some(5),
            null_cells,
            meta: GridMeta {
                model_x: "base".into(),
                model_y: "tuned".into(),
                n_tokens_used: 64,
                subsample: None,
            },
        }
    }

    fn report(grids: Vec<MetricGrid>) -> Report {
        Report::new(
            Inputs {
                command: "sweep".into(),
                models: vec![],
                subsample: None,
            },
            grids.into_iter().map(ResultEntry::Grid).collect(),
        )
    }

    #[test]
    fn sig9_formatting() {
        assert_eq!(format_sig9(1.0), "1");
        assert_eq!(format_sig9(0.5), "0.5");
        assert_eq!(format_sig9(12.0 / 13.0), "0.923076923");
        assert_eq!(format_sig9(-1234.5), "-1234.5");
        assert_eq!(format_sig9(1.0e-7), "1e-7");
        assert_eq!(format_sig9(0.000123456789123), "0.000123456789");
        assert_eq!(format_sig9(6.02214076e23), "6.02214076e23");
    }

    #[test]
    fn csv_layout_and_nulls() {
        let g = grid(vec![vec![Some(1.0), Some(0.25)], vec![None, Some(0.0)]]);
        let csv = grid_csv(&g);
        assert_eq!(csv, "layer,0,1\n0,1,0.25\n1,,0\n");
        assert_eq!(csv.lines().count(), 3);
        assert_eq!(parse_grid_csv(&csv).unwrap(), g.values);
    }

    #[test]
    fn writes_requested_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut cka = grid(vec![vec![Some(1.0), Some(0.5)], vec![Some(0.5), Some(1.0)]]);
        cka.metric_name = "cka".into();
        let r = report(vec![cka]);
        let files = write_report(&r, dir.path(), &parse_formats("csv").unwrap()).unwrap();
        assert_eq!(
            files,
            vec![
                dir.path().join("report.json"),
                dir.path().join("grid_cka.csv")
            ]
        );
        assert_eq!(fs::read_to_string(&files[1]).unwrap().lines().count(), 3);

        let files = write_report(&r, dir.path(), &parse_formats("json").unwrap()).unwrap();
        assert_eq!(files.len(), 1);
        let back = Report::from_json(&fs::read_to_string(&files[0]).unwrap()).unwrap();
        assert_eq!(back, r);

        let knn = grid(vec![vec![Some(0.3)]]);
        let files = write_report(
            &report(vec![knn]),
            dir.path(),
            &parse_formats("svg,csv").unwrap(),
        )
        .unwrap();
        assert!(files.iter().any(|f| f.ends_with("heatmap_knn_5.svg")));
        assert!(files.iter().any(|f| f.ends_with("grid_knn_5.csv")));
    }

    #[test]
    fn unknown_format_is_rejected() {
        assert!(parse_formats("json,png")
            .unwrap_err()
            .to_string()
            .contains("png"));
    }

    fn cell_fills(svg: &str) -> BTreeSet<String> {
        svg.lines()
            .filter(|l| l.contains(r#"class="cell""#))
            .map(|l| {
                l.split("fill=\"")
                    .nth(1)
                    .unwrap()
                    .split('"')
                    .next()
                    .unwrap()
                    .to_string()
            })
            .collect()
    }

    #[test]
    fn constant_grid_uses_one_mid_scale_color() {
        let svg = grid_svg(&grid(vec![vec![Some(0.7); 3]; 2]));
        let fills = cell_fills(&svg);
        assert_eq!(fills.len(), 1);
        assert_eq!(fills.into_iter().next().unwrap(), color(0.5));
        assert!(svg.contains("degenerate range"));
    }

    #[test]
    fn svg_tooltips_and_scale() {
        let g = grid(vec![
            vec![Some(0.1), Some(0.9)],
            vec![None, Some(0.123456789012345)],
        ]);
        let svg = grid_svg(&g);
        assert!(svg.contains("<title>row 1, col 1: 0.123456789012345</title>"));
        assert!(svg.contains("null (D mismatch (3 vs 4))"));
        let fills = cell_fills(&svg);
        assert!(
            fills.contains(&color(0.0)) && fills.contains(&color(1.0)) && fills.contains(NULL_FILL)
        );
        assert!(svg.starts_with("<?xml") && svg.trim_end().ends_with("</svg>"));
    }

    proptest! {
        #[test]
        fn csv_reparses_within_tolerance(vals in proptest::collection::vec(proptest::option::of(-1e6f64..1e6), 1..30)) {
            let cols = 3.min(vals.len());
            let rows: Vec<Vec<Option<f64>>> = vals.chunks(cols).filter(|c| c.len() == cols).map(|c| c.to_vec()).collect();
            prop_assume!(!rows.is_empty());
            let g = grid(rows);
            let back = parse_grid_csv(&grid_csv(&g)).unwrap();
            for (r, b) in g.values.iter().flatten().zip(back.iter().flatten()) {
                match (r, b) {
                    (Some(r), Some(b)) => prop_assert!((r - b).abs() <= 1e-8 * r.abs().max(f64::MIN_POSITIVE)),
                    (None, None) => {}
                    _ => prop_assert!(false, "null mismatch"),
                }
            }
        }

        #[test]
        fn json_roundtrips(vals in proptest::collection::vec(proptest::option::of(proptest::num::f64::NORMAL), 4)) {
            let g = grid(vec![vals[..2].to_vec(), vals[2..].to_vec()]);
            let r = report(vec![g]);
            prop_assert_eq!(Report::from_json(&r.to_json()).unwrap(), r);
        }
    }
}
