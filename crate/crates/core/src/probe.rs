//! Frozen linear readouts and cross-model transfer.
//!
//! A probe is fit on one representation's train split, frozen, then scored on
//! the same rows of another representation. Classification probes are
//! multinomial logistic regression with an L2 penalty, trained full-batch by
//! L-BFGS from zero; regression probes are closed-form ridge with an
//! unpenalized intercept.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::{DMatrix, DVector, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{LabelSet, Labels, Split, TaskKind};

pub const DEFAULT_LAMBDA: f64 = 1e-4;
pub const DEFAULT_MAX_ITERS: usize = 500;
pub const GRADIENT_TOL: f64 = 1e-8;

const LBFGS_MEMORY: usize = 10;
const ARMIJO_C1: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub reg_lambda: f64,
    pub max_iters: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            reg_lambda: DEFAULT_LAMBDA,
            max_iters: DEFAULT_MAX_ITERS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub iterations: usize,
    pub final_objective: f64,
    pub gradient_norm: f64,
    pub converged: bool,
}

/// A fitted affine readout `Z·W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeModel {
    /// `D x C`; `C = 1` for regression.
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub task_kind: TaskKind,
    pub reg_lambda: f64,
    pub train_meta: TrainMeta,
}

impl ProbeModel {
    pub fn dim(&self) -> usize {
        self.weights.nrows()
    }

    /// Raw scores for every row of `z`.
    pub fn scores(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if z.ncols() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "probe expects {} features, got {}",
                self.dim(),
                z.ncols()
            )));
        }
        let mut s = z * &self.weights;
        for mut row in s.row_iter_mut() {
            row += self.bias.transpose();
        }
        Ok(s)
    }

    /// Predicted class per row; ties resolve to the lowest class index.
    pub fn predict_classes(&self, z: &DMatrix<f64>) -> Result<Vec<usize>> {
        Ok(self
            .scores(z)?
            .row_iter()
            .map(|r| argmax(r.iter().copied()))
            .collect())
    }
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

fn check_rows(x: &DMatrix<f64>, labels: &LabelSet) -> Result<()> {
    if x.nrows() != labels.n_items() {
        return Err(Error::Probe(format!(
            "representation has {} rows but there are {} labels",
            x.nrows(),
            labels.n_items()
        )));
    }
    Ok(())
}

/// Fit a probe on the train split of `x`.
pub fn fit_probe(x: &DMatrix<f64>, labels: &LabelSet, config: &ProbeConfig) -> Result<ProbeModel> {
    check_rows(x, labels)?;
    if !(config.reg_lambda >= 0.0 && config.reg_lambda.is_finite()) {
        return Err(Error::Probe(format!(
            "lambda must be finite and >= 0, got {}",
            config.reg_lambda
        )));
    }
    let train = &labels.splits.train;
    if train.is_empty() {
        return Err(Error::Probe("train split is empty".into()));
    }
    let xt = x.select_rows(train);
    match &labels.labels {
        Labels::Classes {
            values,
            num_classes,
        } => {
            let y: Vec<usize> = train.iter().map(|&i| values[i]).collect();
            let mut present = y.clone();
            present.sort_unstable();
            present.dedup();
            if present.len() < 2 {
                return Err(Error::Probe(format!(
                    "train split holds a single class ({}); need at least 2",
                    present[0]
                )));
            }
            fit_logistic(&xt, &y, (*num_classes).max(2), config)
        }
        Labels::Targets(values) => {
            let y = DVector::from_iterator(train.len(), train.iter().map(|&i| values[i]));
            fit_ridge(&xt, &y, config.reg_lambda)
        }
    }
}

fn fit_ridge(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<ProbeModel> {
    let (n, d) = x.shape();
    let x_mean = DVector::from_iterator(d, x.column_iter().map(|c| c.mean()));
    let y_mean = y.mean();
    let mut a = DMatrix::zeros(n + d, d);
    for i in 0..n {
        for j in 0..d {
            a[(i, j)] = x[(i, j)] - x_mean[j];
        }
    }
    let root = lambda.sqrt();
    for j in 0..d {
        a[(n + j, j)] = root;
    }
    let mut b = DVector::zeros(n + d);
    for i in 0..n {
        b[i] = y[i] - y_mean;
    }
    let svd = SVD::try_new(a.clone(), true, true, f64::EPSILON, 10_000)
        .ok_or(Error::SvdNonConvergence)?;
    let cutoff = svd.singular_values.max() * (n + d) as f64 * f64::EPSILON;
    let w = svd
        .solve(&b, cutoff)
        .map_err(|e| Error::Probe(format!("ridge solve failed: {e}")))?;
    let bias = y_mean - x_mean.dot(&w);

    let resid = &a * &w - &b;
    let objective = resid.norm_squared();
    let grad = a.transpose() * resid;
    Ok(ProbeModel {
        weights: DMatrix::from_column_slice(d, 1, w.as_slice()),
        bias: DVector::from_element(1, bias),
        task_kind: TaskKind::Regression,
        reg_lambda: lambda,
        train_meta: TrainMeta {
            iterations: 1,
            final_objective: objective,
            gradient_norm: grad.norm(),
            converged: true,
        },
    })
}

/// Mean multinomial cross-entropy plus `λ/2 ‖W‖²` and its gradient. The
/// parameter vector is `W` in column-major order followed by `b`.
struct Logistic<'a> {
    x: &'a DMatrix<f64>,
    y: &'a [usize],
    classes: usize,
    lambda: f64,
}

impl Logistic<'_> {
    fn unpack(&self, theta: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let d = self.x.ncols();
        let c = self.classes;
        let w = DMatrix::from_column_slice(d, c, &theta.as_slice()[..d * c]);
        let b = DVector::from_column_slice(&theta.as_slice()[d * c..]);
        (w, b)
    }

    fn evaluate(&self, theta: &DVector<f64>) -> (f64, DVector<f64>) {
        let (n, d) = self.x.shape();
        let c = self.classes;
        let (w, b) = self.unpack(theta);
        let mut scores = self.x * &w;
        let mut loss = 0.0;
        for (i, mut row) in scores.row_iter_mut().enumerate() {
            row += b.transpose();
            let max = row.max();
            let sum: f64 = row.iter().map(|s| (s - max).exp()).sum();
            let lse = max + sum.ln();
            loss += lse - row[self.y[i]];
            for s in row.iter_mut() {
                *s = (*s - lse).exp();
            }
            row[self.y[i]] -= 1.0;
        }
        // scores now holds P - Y
        let inv_n = 1.0 / n as f64;
        let grad_w = self.x.transpose() * &scores * inv_n + &w * self.lambda;
        let grad_b = scores.row_sum().transpose() * inv_n;
        let objective = loss * inv_n + 0.5 * self.lambda * w.norm_squared();

        let mut grad = DVector::zeros(d * c + c);
        grad.as_mut_slice()[..d * c].copy_from_slice(grad_w.as_slice());
        grad.as_mut_slice()[d * c..].copy_from_slice(grad_b.as_slice());
        (objective, grad)
    }
}

fn fit_logistic(
    x: &DMatrix<f64>,
    y: &[usize],
    classes: usize,
    config: &ProbeConfig,
) -> Result<ProbeModel> {
    let problem = Logistic {
        x,
        y,
        classes,
        lambda: config.reg_lambda,
    };
    let theta0 = DVector::zeros((x.ncols() + 1) * classes);
    let (theta, meta) = lbfgs(|t| problem.evaluate(t), theta0, config.max_iters);
    let (weights, bias) = problem.unpack(&theta);
    Ok(ProbeModel {
        weights,
        bias,
        task_kind: TaskKind::Classification,
        reg_lambda: config.reg_lambda,
        train_meta: meta,
    })
}

/// Limited-memory BFGS with a backtracking Armijo line search. Fully
/// deterministic; stops when the gradient norm reaches [`GRADIENT_TOL`].
fn lbfgs<F>(f: F, mut theta: DVector<f64>, max_iters: usize) -> (DVector<f64>, TrainMeta)
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>),
{
    let (mut value, mut grad) = f(&theta);
    let mut history: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;

    while iterations < max_iters && grad.norm() > GRADIENT_TOL {
        // two-loop recursion
        let mut q = grad.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * s.dot(&q);
            q.axpy(-a, y, 1.0);
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            q *= s.dot(y) / y.norm_squared();
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let beta = rho * y.dot(&q);
            q.axpy(a - beta, s, 1.0);
        }
        let mut direction = -q;
        let mut slope = grad.dot(&direction);
        if slope >= 0.0 {
            history.clear();
            direction = -grad.clone();
            slope = -grad.norm_squared();
        }

        let mut step = if history.is_empty() {
            (1.0 / grad.norm()).min(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        while step > 1e-20 {
            let candidate = &theta + &direction * step;
            let (v, g) = f(&candidate);
            let sufficient = v <= value + ARMIJO_C1 * step * slope;
            // at the floating-point floor of the objective accept any step that still shrinks the gradient
            let flat = (v - value).abs() <= 4.0 * f64::EPSILON * value.abs().max(1.0)
                && g.norm() < grad.norm();
            if v.is_finite() && (sufficient || flat) {
                accepted = Some((candidate, v, g));
                break;
            }
            step *= 0.5;
        }
        let Some((next, v, g)) = accepted else { break };

        let s = &next - &theta;
        let y = &g - &grad;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if history.len() == LBFGS_MEMORY {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        theta = next;
        value = v;
        grad = g;
        iterations += 1;
    }

    let gradient_norm = grad.norm();
    (
        theta,
        TrainMeta {
            iterations,
            final_objective: value,
            gradient_norm,
            converged: gradient_norm <= GRADIENT_TOL,
        },
    )
}

/// Score a frozen probe on one split of `z`: accuracy for classification,
/// R² for regression.
pub fn evaluate_probe(
    probe: &ProbeModel,
    z: &DMatrix<f64>,
    labels: &LabelSet,
    split: Split,
) -> Result<f64> {
    check_rows(z, labels)?;
    let rows = labels.splits.get(split);
    if rows.is_empty() {
        return Err(Error::Probe(format!("{split} split is empty")));
    }
    let zs = z.select_rows(rows);
    match (&labels.labels, probe.task_kind) {
        (Labels::Classes { values, .. }, TaskKind::Classification) => {
            let predicted = probe.predict_classes(&zs)?;
            let correct = predicted
                .iter()
                .zip(rows)
                .filter(|(p, &i)| **p == values[i])
                .count();
            Ok(correct as f64 / rows.len() as f64)
        }
        (Labels::Targets(values), TaskKind::Regression) => {
            let pred = probe.scores(&zs)?;
            let truth: Vec<f64> = rows.iter().map(|&i| values[i]).collect();
            let mean = truth.iter().sum::<f64>() / truth.len() as f64;
            let ss_tot: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
            let ss_res: f64 = truth
                .iter()
                .zip(pred.iter())
                .map(|(t, p)| (t - p).powi(2))
                .sum();
            if ss_tot == 0.0 {
                return Err(Error::Probe(format!(
                    "R² undefined: constant targets on {split} split"
                )));
            }
            Ok(1.0 - ss_res / ss_tot)
        }
        _ => Err(Error::Probe(
            "probe task does not match the label set".into(),
        )),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitScores {
    #[serde(rename = "self")]
    pub self_score: f64,
    pub cross: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferResult {
    /// Test-split score of the probe on its own representation.
    pub self_score: f64,
    /// Test-split score of the same frozen probe on the other representation.
    pub cross_score: f64,
    /// `self_score − cross_score`.
    pub delta: f64,
    pub abs_delta: f64,
    /// Scores on every non-empty split.
    pub per_split: BTreeMap<Split, SplitScores>,
    pub train_meta: TrainMeta,
}

/// Fit on `x`, freeze, and score on both `x` and `y`.
pub fn cross_transfer(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    labels: &LabelSet,
    config: &ProbeConfig,
) -> Result<TransferResult> {
    if x.shape() != y.shape() {
        return Err(Error::ShapeMismatch(format!(
            "cross transfer needs equal shapes, got {:?} vs {:?}",
            x.shape(),
            y.shape()
        )));
    }
    let probe = fit_probe(x, labels, config)?;
    transfer_with(&probe, x, y, labels)
}

pub(crate) fn transfer_with(
    probe: &ProbeModel,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    labels: &LabelSet,
) -> Result<TransferResult> {
    let mut per_split = BTreeMap::new();
    for split in Split::ALL {
        if labels.splits.get(split).is_empty() {
            continue;
        }
        per_split.insert(
            split,
            SplitScores {
                self_score: evaluate_probe(probe, x, labels, split)?,
                cross: evaluate_probe(probe, y, labels, split)?,
            },
        );
    }
    let test = per_split
        .get(&Split::Test)
        .ok_or_else(|| Error::Probe("test split is empty".into()))?;
    let delta = test.self_score - test.cross;
    Ok(TransferResult {
        self_score: test.self_score,
        cross_score: test.cross,
        delta,
        abs_delta: delta.abs(),
        per_split,
        train_meta: probe.train_meta.clone(),
    })
}
