//! Time grids, trajectories and the discrete history operators.
//!
//! All integrals `∫₀^{t_n}` are replaced by one quadrature rule. With the
//! left rectangle rule the sample at `t_n` carries zero weight, so every
//! operator is strictly causal.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spaces::{DiagonalMetric, EnergyMetric};

#[derive(Debug, Error, PartialEq)]
pub enum HistoryError {
    #[error("time grid needs a positive finite horizon and at least one step")]
    BadGrid,
    #[error("time index {index} outside 0..={steps}")]
    IndexOutOfRange { index: usize, steps: usize },
    #[error("trajectory needs {expected} samples, got {got}")]
    SampleCount { expected: usize, got: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in sample {0}")]
    NonFinite(usize),
    #[error("trajectories live on different grids")]
    GridMismatch,
}

/// Uniform nodes `t_n = n T / N`, `n = 0..=N`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self, HistoryError> {
        if !(horizon.is_finite() && horizon > 0.0) || steps == 0 {
            return Err(HistoryError::BadGrid);
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn node(&self, n: usize) -> f64 {
        if n == self.steps {
            self.horizon
        } else {
            self.horizon * n as f64 / self.steps as f64
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|n| self.node(n)).collect()
    }

    /// The grid with `Δt` halved.
    pub fn refined(&self) -> Self {
        Self {
            horizon: self.horizon,
            steps: 2 * self.steps,
        }
    }

    fn check(&self, n: usize) -> Result<(), HistoryError> {
        if n > self.steps {
            Err(HistoryError::IndexOutOfRange {
                index: n,
                steps: self.steps,
            })
        } else {
            Ok(())
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadratureRule {
    #[default]
    LeftRectangle,
    Trapezoid,
}

impl QuadratureRule {
    /// Weight of sample `k` in the rule for `∫₀^{t_n}`.
    pub fn weight(self, n: usize, k: usize, dt: f64) -> f64 {
        if k > n || n == 0 {
            return 0.0;
        }
        match self {
            QuadratureRule::LeftRectangle => {
                if k < n {
                    dt
                } else {
                    0.0
                }
            }
            QuadratureRule::Trapezoid => {
                if k == 0 || k == n {
                    0.5 * dt
                } else {
                    dt
                }
            }
        }
    }

    /// Whether the value at `t_n` never depends on the sample at `t_n`.
    pub fn strictly_causal(self) -> bool {
        self == QuadratureRule::LeftRectangle
    }

    /// Applies the rule to scalar samples `f_0..=f_n`.
    pub fn integrate(self, values: &[f64], dt: f64) -> f64 {
        if values.len() < 2 {
            return 0.0;
        }
        let n = values.len() - 1;
        values
            .iter()
            .enumerate()
            .map(|(k, v)| self.weight(n, k, dt) * v)
            .sum()
    }
}

/// Samples of the velocity `w` at every grid node.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    grid: TimeGrid,
    samples: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn new(grid: TimeGrid, samples: Vec<DVector<f64>>) -> Result<Self, HistoryError> {
        if samples.len() != grid.len() {
            return Err(HistoryError::SampleCount {
                expected: grid.len(),
                got: samples.len(),
            });
        }
        let dim = samples[0].len();
        for (k, s) in samples.iter().enumerate() {
            if s.len() != dim {
                return Err(HistoryError::DimensionMismatch {
                    expected: dim,
                    got: s.len(),
                });
            }
            if s.iter().any(|x| !x.is_finite()) {
                return Err(HistoryError::NonFinite(k));
            }
        }
        Ok(Self { grid, samples })
    }

    pub fn zeros(grid: TimeGrid, dim: usize) -> Self {
        Self {
            grid,
            samples: vec![DVector::zeros(dim); grid.len()],
        }
    }

    pub fn from_fn(grid: TimeGrid, mut f: impl FnMut(f64) -> DVector<f64>) -> Self {
        let samples = grid.nodes().into_iter().map(&mut f).collect();
        Self { grid, samples }
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.samples[0].len()
    }

    pub fn sample(&self, n: usize) -> &DVector<f64> {
        &self.samples[n]
    }

    pub fn samples(&self) -> &[DVector<f64>] {
        &self.samples
    }

    pub fn set(&mut self, n: usize, v: DVector<f64>) {
        assert_eq!(v.len(), self.dim());
        self.samples[n] = v;
    }

    /// Discrete `‖w‖_{L²(0,t_n;V)}` under `rule`.
    pub fn l2_norm_upto(&self, n: usize, rule: QuadratureRule, metric: &EnergyMetric) -> f64 {
        let sq: Vec<f64> = self.samples[..=n]
            .iter()
            .map(|s| {
                let v = metric.norm(s);
                v * v
            })
            .collect();
        rule.integrate(&sq, self.grid.dt()).max(0.0).sqrt()
    }

    pub fn l2_norm(&self, rule: QuadratureRule, metric: &EnergyMetric) -> f64 {
        self.l2_norm_upto(self.grid.steps(), rule, metric)
    }

    pub fn difference(&self, other: &Trajectory) -> Result<Trajectory, HistoryError> {
        if self.grid != other.grid {
            return Err(HistoryError::GridMismatch);
        }
        if self.dim() != other.dim() {
            return Err(HistoryError::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(Trajectory {
            grid: self.grid,
            samples: self
                .samples
                .iter()
                .zip(&other.samples)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    pub fn l2_distance(
        &self,
        other: &Trajectory,
        rule: QuadratureRule,
        metric: &EnergyMetric,
    ) -> Result<f64, HistoryError> {
        Ok(self.difference(other)?.l2_norm(rule, metric))
    }

    /// `max_n ‖w₁(t_n) − w₂(t_n)‖_V`.
    pub fn max_distance(&self, other: &Trajectory, metric: &EnergyMetric) -> Result<f64, HistoryError> {
        Ok(self
            .difference(other)?
            .samples
            .iter()
            .map(|d| metric.norm(d))
            .fold(0.0, f64::max))
    }
}

/// `u₀ + ∫₀^{t_n} w` under `rule`.
pub fn integrate_displacement(
    traj: &Trajectory,
    n: usize,
    initial: &DVector<f64>,
    rule: QuadratureRule,
) -> Result<DVector<f64>, HistoryError> {
    traj.grid.check(n)?;
    if initial.len() != traj.dim() {
        return Err(HistoryError::DimensionMismatch {
            expected: traj.dim(),
            got: initial.len(),
        });
    }
    let dt = traj.grid.dt();
    let mut u = initial.clone();
    for k in 0..=n {
        let wk = rule.weight(n, k, dt);
        if wk != 0.0 {
            u.axpy(wk, &traj.samples[k], 1.0);
        }
    }
    Ok(u)
}

/// All displacements `u_0..=u_n` by the rule's recursion.
fn displacements(traj: &Trajectory, n: usize, initial: &DVector<f64>, rule: QuadratureRule) -> Vec<DVector<f64>> {
    let dt = traj.grid.dt();
    let mut out = Vec::with_capacity(n + 1);
    out.push(initial.clone());
    for k in 1..=n {
        let mut u = out[k - 1].clone();
        match rule {
            QuadratureRule::LeftRectangle => u.axpy(dt, &traj.samples[k - 1], 1.0),
            QuadratureRule::Trapezoid => {
                u.axpy(0.5 * dt, &traj.samples[k - 1], 1.0);
                u.axpy(0.5 * dt, &traj.samples[k], 1.0);
            }
        }
        out.push(u);
    }
    out
}

/// Scalar exponential relaxation `amplitude · exp(−s / relaxation)` times a
/// fixed linear map.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryKernel {
    pub matrix: DMatrix<f64>,
    pub amplitude: f64,
    pub relaxation: f64,
}

impl MemoryKernel {
    pub fn scale(&self, s: f64) -> f64 {
        if self.relaxation.is_infinite() {
            self.amplitude
        } else {
            self.amplitude * (-s / self.relaxation).exp()
        }
    }
}

/// `R w(t) = P (u₀ + ∫₀ᵗ w) + ∫₀ᵗ c(t − s) Q w(s) ds`.
#[derive(Clone, Debug, PartialEq)]
pub struct VolterraOperator {
    pub instant: Option<DMatrix<f64>>,
    pub initial: DVector<f64>,
    pub memory: Option<MemoryKernel>,
}

/// Accumulated slip `∫₀ᵗ ‖T (u₀ + ∫₀ˢ w)‖ ds`, one scalar per group of
/// `components` consecutive rows of `T`.
#[derive(Clone, Debug, PartialEq)]
pub struct SlipOperator {
    pub tangential: DMatrix<f64>,
    pub components: usize,
    pub initial: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum HistoryOperator {
    Zero { input_dim: usize, output_dim: usize },
    Volterra(VolterraOperator),
    Slip(SlipOperator),
    /// Outputs of the parts stacked in order.
    Stack(Vec<HistoryOperator>),
}

impl HistoryOperator {
    pub fn input_dim(&self) -> usize {
        match self {
            HistoryOperator::Zero { input_dim, .. } => *input_dim,
            HistoryOperator::Volterra(v) => v.initial.len(),
            HistoryOperator::Slip(s) => s.initial.len(),
            HistoryOperator::Stack(parts) => parts.first().map_or(0, |p| p.input_dim()),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            HistoryOperator::Zero { output_dim, .. } => *output_dim,
            HistoryOperator::Volterra(v) => v
                .instant
                .as_ref()
                .map(|p| p.nrows())
                .or_else(|| v.memory.as_ref().map(|m| m.matrix.nrows()))
                .unwrap_or(0),
            HistoryOperator::Slip(s) => s.tangential.nrows() / s.components.max(1),
            HistoryOperator::Stack(parts) => parts.iter().map(|p| p.output_dim()).sum(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            HistoryOperator::Zero { .. } => true,
            HistoryOperator::Stack(parts) => parts.iter().all(|p| p.is_zero()),
            _ => false,
        }
    }

    /// A Lipschitz constant for the operator in the sense
    /// `‖R v₁(t) − R v₂(t)‖ ≤ c ∫₀ᵗ ‖v₁ − v₂‖`, given norms of the linear
    /// pieces `V → output`. `horizon` bounds the inner integral of slips.
    pub fn lipschitz_constant(
        &self,
        input: &EnergyMetric,
        output: &DiagonalMetric,
        horizon: f64,
    ) -> f64 {
        let out_gram = DMatrix::from_diagonal(output.weights());
        self.lipschitz_with(input, &out_gram, 0, horizon).0
    }

    fn lipschitz_with(
        &self,
        input: &EnergyMetric,
        out_gram: &DMatrix<f64>,
        offset: usize,
        horizon: f64,
    ) -> (f64, usize) {
        let d = self.output_dim();
        let block = out_gram.view((offset, offset), (d, d)).into_owned();
        let norm = |m: &DMatrix<f64>| crate::spaces::dense_operator_norm(m, input.gram(), &block);
        let c = match self {
            HistoryOperator::Zero { .. } => 0.0,
            HistoryOperator::Volterra(v) => {
                let p = v.instant.as_ref().map_or(0.0, norm);
                let q = v
                    .memory
                    .as_ref()
                    .map_or(0.0, |m| m.amplitude.abs() * norm(&m.matrix));
                p + q
            }
            HistoryOperator::Slip(s) => {
                // the group norms are dominated by the full Euclidean map when
                // each group carries one lumped weight
                let rows = s.tangential.nrows();
                let mut weights = DVector::zeros(rows);
                for r in 0..rows {
                    weights[r] = block[(r / s.components, r / s.components)];
                }
                let full = crate::spaces::dense_operator_norm(
                    &s.tangential,
                    input.gram(),
                    &DMatrix::from_diagonal(&weights),
                );
                full * horizon
            }
            HistoryOperator::Stack(parts) => {
                let mut sq = 0.0;
                let mut off = offset;
                for p in parts {
                    let (c, dd) = p.lipschitz_with(input, out_gram, off, horizon);
                    sq += c * c;
                    off += dd;
                }
                sq.sqrt()
            }
        };
        (c, d)
    }
}

/// `(R w)(t_n)` from the samples of `traj` that the rule touches.
pub fn eval_history(
    op: &HistoryOperator,
    traj: &Trajectory,
    n: usize,
    rule: QuadratureRule,
) -> Result<DVector<f64>, HistoryError> {
    traj.grid.check(n)?;
    if op.input_dim() != traj.dim() {
        return Err(HistoryError::DimensionMismatch {
            expected: op.input_dim(),
            got: traj.dim(),
        });
    }
    Ok(eval_unchecked(op, traj, n, rule))
}

fn eval_unchecked(op: &HistoryOperator, traj: &Trajectory, n: usize, rule: QuadratureRule) -> DVector<f64> {
    let dt = traj.grid.dt();
    match op {
        HistoryOperator::Zero { output_dim, .. } => DVector::zeros(*output_dim),
        HistoryOperator::Volterra(v) => {
            let mut out = DVector::zeros(op.output_dim());
            if let Some(p) = &v.instant {
                let u = integrate_displacement(traj, n, &v.initial, rule).expect("checked");
                out += p * u;
            }
            if let Some(m) = &v.memory {
                let mut acc = DVector::zeros(traj.dim());
                let tn = traj.grid.node(n);
                for k in 0..=n {
                    let wk = rule.weight(n, k, dt);
                    if wk != 0.0 {
                        acc.axpy(wk * m.scale(tn - traj.grid.node(k)), &traj.samples[k], 1.0);
                    }
                }
                out += &m.matrix * acc;
            }
            out
        }
        HistoryOperator::Slip(s) => {
            let us = displacements(traj, n, &s.initial, rule);
            let groups = op.output_dim();
            let c = s.components.max(1);
            let mut out = DVector::zeros(groups);
            for (k, u) in us.iter().enumerate() {
                let wk = rule.weight(n, k, dt);
                if wk == 0.0 {
                    continue;
                }
                let tu = &s.tangential * u;
                for g in 0..groups {
                    out[g] += wk * tu.rows(g * c, c).norm();
                }
            }
            out
        }
        HistoryOperator::Stack(parts) => {
            let pieces: Vec<DVector<f64>> =
                parts.iter().map(|p| eval_unchecked(p, traj, n, rule)).collect();
            let total = pieces.iter().map(|p| p.len()).sum();
            let mut out = DVector::zeros(total);
            let mut off = 0;
            for p in pieces {
                out.rows_mut(off, p.len()).copy_from(&p);
                off += p.len();
            }
            out
        }
    }
}

/// Outcome of the sampled Lipschitz audit of a history operator.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryAuditReport {
    pub claimed: f64,
    pub max_quotient: f64,
    /// `(pair index, time index)` of the largest quotient.
    pub witness: Option<(usize, usize)>,
    pub pass: bool,
    pub skipped_nodes: usize,
}

/// For every pair and every node, `‖R v₁(t_n) − R v₂(t_n)‖ / ∫₀^{t_n} ‖v₁ − v₂‖`.
/// Nodes whose denominator vanishes, or sits at round-off level relative to
/// the trajectories themselves, are skipped.
pub fn audit_history_lipschitz(
    op: &HistoryOperator,
    rule: QuadratureRule,
    pairs: &[(Trajectory, Trajectory)],
    input: &EnergyMetric,
    output: &DiagonalMetric,
    claimed: f64,
) -> Result<HistoryAuditReport, HistoryError> {
    let mut max_q: f64 = 0.0;
    let mut witness = None;
    let mut skipped = 0;
    for (p, (a, b)) in pairs.iter().enumerate() {
        let diff = a.difference(b)?;
        let norms: Vec<f64> = diff.samples.iter().map(|d| input.norm(d)).collect();
        let sizes: Vec<f64> = a.samples.iter().zip(&b.samples).map(|(x, y)| input.norm(x) + input.norm(y)).collect();
        let dt = a.grid.dt();
        for n in 0..=a.grid.steps() {
            let den = rule.integrate(&norms[..=n], dt);
            let num = output.norm(&(eval_history(op, a, n, rule)? - eval_history(op, b, n, rule)?));
            // differences at round-off level carry no information
            if den <= f64::MIN_POSITIVE || den <= 1e-12 * rule.integrate(&sizes[..=n], dt) {
                skipped += 1;
                continue;
            }
            let q = num / den;
            if q > max_q {
                max_q = q;
                witness = Some((p, n));
            }
        }
    }
    Ok(HistoryAuditReport {
        claimed,
        max_quotient: max_q,
        witness,
        pass: max_q <= claimed * (1.0 + 1e-6) + 1e-300,
        skipped_nodes: skipped,
    })
}
