//! Finite-dimensional stand-ins for the spaces `V`, `E`, `X`, `Y`, `Z`.
//!
//! `V` carries an energy metric given by an SPD Gram matrix. The state spaces
//! `E`, `X`, `Y`, `Z` are weighted Euclidean spaces (lumped quadrature
//! weights), so their Riesz maps are diagonal. Dual vectors of `V` are stored
//! as residual vectors in DoF coordinates and paired by the plain dot product.

use std::ops::Deref;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpaceError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite entry at index {0}")]
    NonFinite(usize),
    #[error("gram matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("gram matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("weights must be positive and finite")]
    BadWeights,
    #[error("constraint entry {index} is malformed: {reason}")]
    BadConstraint { index: usize, reason: String },
    #[error("power iteration did not converge after {iterations} iterations (last estimate {last_estimate})")]
    NoConvergence {
        iterations: usize,
        last_estimate: f64,
        last_iterate: DVector<f64>,
    },
}

fn check_dim(expected: usize, got: usize) -> Result<(), SpaceError> {
    if expected == got {
        Ok(())
    } else {
        Err(SpaceError::DimensionMismatch { expected, got })
    }
}

/// A Galerkin coefficient vector with finite entries.
#[derive(Clone, Debug, PartialEq)]
pub struct DofVector(DVector<f64>);

impl DofVector {
    pub fn new(values: DVector<f64>) -> Result<Self, SpaceError> {
        if let Some(i) = values.iter().position(|x| !x.is_finite()) {
            return Err(SpaceError::NonFinite(i));
        }
        Ok(Self(values))
    }

    pub fn from_slice(values: &[f64]) -> Result<Self, SpaceError> {
        Self::new(DVector::from_column_slice(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(DVector::zeros(dim))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }
}

impl Deref for DofVector {
    type Target = DVector<f64>;
    fn deref(&self) -> &DVector<f64> {
        &self.0
    }
}

/// The discrete `V` inner product `(u, v)_V = uᵀ G v`.
#[derive(Clone, Debug)]
pub struct EnergyMetric {
    gram: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl EnergyMetric {
    pub fn new(gram: DMatrix<f64>) -> Result<Self, SpaceError> {
        if !gram.is_square() {
            return Err(SpaceError::DimensionMismatch {
                expected: gram.nrows(),
                got: gram.ncols(),
            });
        }
        let scale = gram.amax().max(f64::MIN_POSITIVE);
        let asym = (&gram - gram.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(SpaceError::NotSymmetric(asym));
        }
        let chol = Cholesky::new(gram.clone()).ok_or(SpaceError::NotPositiveDefinite)?;
        Ok(Self { gram, chol })
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(DMatrix::identity(dim, dim)).expect("identity is SPD")
    }

    pub fn dim(&self) -> usize {
        self.gram.nrows()
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn inner(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        u.dot(&(&self.gram * v))
    }

    pub fn norm(&self, u: &DVector<f64>) -> f64 {
        self.inner(u, u).max(0.0).sqrt()
    }

    /// Norm of a residual vector viewed as an element of `V*`.
    pub fn dual_norm(&self, r: &DVector<f64>) -> f64 {
        r.dot(&self.chol.solve(r)).max(0.0).sqrt()
    }

    /// Riesz map `V* → V`.
    pub fn riesz(&self, r: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(r)
    }

    pub fn cholesky_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }
}

/// `sqrt(uᵀ G u)`, checking dimensions.
pub fn v_norm(u: &DofVector, metric: &EnergyMetric) -> Result<f64, SpaceError> {
    check_dim(metric.dim(), u.dim())?;
    Ok(metric.norm(u))
}

/// A weighted Euclidean space `‖x‖² = Σ wᵢ xᵢ²`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalMetric {
    weights: DVector<f64>,
}

impl DiagonalMetric {
    pub fn new(weights: DVector<f64>) -> Result<Self, SpaceError> {
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(SpaceError::BadWeights);
        }
        Ok(Self { weights })
    }

    pub fn unit(dim: usize) -> Self {
        Self {
            weights: DVector::from_element(dim, 1.0),
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn inner(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        x.iter()
            .zip(y.iter())
            .zip(self.weights.iter())
            .map(|((a, b), w)| w * a * b)
            .sum()
    }

    pub fn norm(&self, x: &DVector<f64>) -> f64 {
        self.inner(x, x).max(0.0).sqrt()
    }

    /// Concatenation `X₁ × X₂` with the product (sum of squares) norm.
    pub fn product(&self, other: &DiagonalMetric) -> DiagonalMetric {
        let mut w = Vec::with_capacity(self.dim() + other.dim());
        w.extend(self.weights.iter());
        w.extend(other.weights.iter());
        DiagonalMetric {
            weights: DVector::from_vec(w),
        }
    }

    pub fn total_measure(&self) -> f64 {
        self.weights.sum()
    }
}

/// A linear map `M: V → X` stored as a matrix. The adjoint returns a residual
/// vector: `⟨M* x, v⟩ = (x, M v)_X`, i.e. `M* x = Mᵀ W x`.
#[derive(Clone, Debug)]
pub struct TraceOperator {
    matrix: DMatrix<f64>,
    target: DiagonalMetric,
}

impl TraceOperator {
    pub fn new(matrix: DMatrix<f64>, target: DiagonalMetric) -> Result<Self, SpaceError> {
        check_dim(target.dim(), matrix.nrows())?;
        if let Some(i) = matrix.iter().position(|x| !x.is_finite()) {
            return Err(SpaceError::NonFinite(i));
        }
        Ok(Self { matrix, target })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn target(&self) -> &DiagonalMetric {
        &self.target
    }

    pub fn source_dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn target_dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>, SpaceError> {
        check_dim(self.source_dim(), v.len())?;
        Ok(&self.matrix * v)
    }

    pub fn apply_adjoint(&self, x: &DVector<f64>) -> Result<DVector<f64>, SpaceError> {
        check_dim(self.target_dim(), x.len())?;
        let wx = x.component_mul(self.target.weights());
        Ok(self.matrix.tr_mul(&wx))
    }
}

pub fn apply_trace(m: &TraceOperator, v: &DofVector) -> Result<DVector<f64>, SpaceError> {
    m.apply(v)
}

pub fn apply_trace_adjoint(m: &TraceOperator, x: &DVector<f64>) -> Result<DofVector, SpaceError> {
    DofVector::new(m.apply_adjoint(x)?)
}

/// One nodal cap `d · v[dofs] ≤ bound` with a unit direction `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct NodalCap {
    pub dofs: Vec<usize>,
    pub direction: Vec<f64>,
    pub bound: f64,
}

impl NodalCap {
    /// `v[index] ≤ bound`.
    pub fn scalar(index: usize, bound: f64) -> Self {
        Self {
            dofs: vec![index],
            direction: vec![1.0],
            bound,
        }
    }

    pub fn value(&self, v: &DVector<f64>) -> f64 {
        self.dofs
            .iter()
            .zip(&self.direction)
            .map(|(&i, d)| d * v[i])
            .sum()
    }
}

/// The convex set `K`: either all of `V` or an intersection of nodal caps
/// acting on disjoint DoF groups.
#[derive(Clone, Debug, PartialEq)]
pub enum ConstraintSet {
    WholeSpace { dim: usize },
    NodewiseUpperBound { dim: usize, caps: Vec<NodalCap> },
}

impl ConstraintSet {
    pub fn whole_space(dim: usize) -> Self {
        ConstraintSet::WholeSpace { dim }
    }

    pub fn nodewise(dim: usize, caps: Vec<NodalCap>) -> Result<Self, SpaceError> {
        let mut seen = vec![false; dim];
        for (index, cap) in caps.iter().enumerate() {
            let bad = |reason: &str| SpaceError::BadConstraint {
                index,
                reason: reason.to_string(),
            };
            if cap.dofs.is_empty() || cap.dofs.len() != cap.direction.len() {
                return Err(bad("dofs and direction must be nonempty and equally long"));
            }
            if !cap.bound.is_finite() {
                return Err(bad("bound must be finite"));
            }
            let len: f64 = cap.direction.iter().map(|d| d * d).sum::<f64>().sqrt();
            if (len - 1.0).abs() > 1e-12 {
                return Err(bad("direction must be a unit vector"));
            }
            for &i in &cap.dofs {
                if i >= dim {
                    return Err(bad("dof index out of range"));
                }
                if seen[i] {
                    return Err(bad("caps must act on disjoint dofs"));
                }
                seen[i] = true;
            }
        }
        Ok(ConstraintSet::NodewiseUpperBound { dim, caps })
    }

    pub fn dim(&self) -> usize {
        match self {
            ConstraintSet::WholeSpace { dim } | ConstraintSet::NodewiseUpperBound { dim, .. } => {
                *dim
            }
        }
    }

    pub fn caps(&self) -> &[NodalCap] {
        match self {
            ConstraintSet::WholeSpace { .. } => &[],
            ConstraintSet::NodewiseUpperBound { caps, .. } => caps,
        }
    }

    /// Largest cap violation (≤ 0 means feasible).
    pub fn max_violation(&self, v: &DVector<f64>) -> f64 {
        self.caps()
            .iter()
            .map(|c| c.value(v) - c.bound)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, v: &DVector<f64>, tol: f64) -> bool {
        self.caps().iter().all(|c| c.value(v) <= c.bound + tol)
    }

    /// Euclidean (lumped) projection, separable over caps.
    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = v.clone();
        self.project_in_place(&mut out);
        out
    }

    pub fn project_in_place(&self, v: &mut DVector<f64>) {
        for cap in self.caps() {
            let excess = cap.value(v) - cap.bound;
            if excess > 0.0 {
                if cap.dofs.len() == 1 {
                    // exact clipping for a scalar cap
                    let i = cap.dofs[0];
                    v[i] = cap.bound / cap.direction[0];
                } else {
                    for (&i, d) in cap.dofs.iter().zip(&cap.direction) {
                        v[i] -= excess * d;
                    }
                }
            }
        }
    }
}

pub fn project_constraint(v: &DofVector, k: &ConstraintSet) -> Result<DofVector, SpaceError> {
    check_dim(k.dim(), v.dim())?;
    Ok(DofVector(k.project(v)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerIterationConfig {
    pub tol: f64,
    pub max_iter: usize,
    /// Multiplicative slack applied to obtain a certified upper bound.
    pub certify_factor: f64,
}

impl Default for PowerIterationConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 10_000,
            certify_factor: 1.0 + 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormEstimate {
    pub estimate: f64,
    /// `estimate × certify_factor`; this is what enters smallness constants.
    pub upper: f64,
    pub iterations: usize,
    /// Rayleigh-quotient history (squared norms), nondecreasing.
    pub history: Vec<f64>,
}

/// `‖M‖ = sup ‖Mv‖_X / ‖v‖_V` by power iteration on `G⁻¹ Mᵀ W M`.
pub fn estimate_operator_norm(
    m: &TraceOperator,
    metric: &EnergyMetric,
    cfg: &PowerIterationConfig,
) -> Result<NormEstimate, SpaceError> {
    let n = metric.dim();
    check_dim(n, m.source_dim())?;
    let weights = m.target().weights();
    let apply = |x: &DVector<f64>| -> DVector<f64> {
        let mx = m.matrix() * x;
        m.matrix().tr_mul(&mx.component_mul(weights))
    };
    let quotient = |x: &DVector<f64>| -> f64 {
        let mx = m.matrix() * x;
        m.target().inner(&mx, &mx) / metric.inner(x, x)
    };
    // deterministic start with no special alignment to the eigenbasis
    let mut x = DVector::from_fn(n, |i, _| 1.0 + 0.5 * ((i as f64) * 1.618_033_988_7).sin());
    x /= metric.norm(&x);
    let mut q = quotient(&x);
    let mut history = vec![q];
    if q == 0.0 {
        // M vanishes on x; try the full adjoint image before declaring zero
        let y = metric.riesz(&apply(&DVector::from_element(n, 1.0)));
        if y.amax() == 0.0 {
            return Ok(NormEstimate {
                estimate: 0.0,
                upper: 0.0,
                iterations: 0,
                history,
            });
        }
        x = &y / metric.norm(&y);
        q = quotient(&x);
        history.push(q);
    }
    for it in 1..=cfg.max_iter {
        let y = metric.riesz(&apply(&x));
        let ny = metric.norm(&y);
        if ny == 0.0 {
            break;
        }
        x = y / ny;
        let q_new = quotient(&x).max(q);
        history.push(q_new);
        let done = (q_new - q).abs() <= cfg.tol * q_new;
        q = q_new;
        if done {
            let estimate = q.sqrt();
            return Ok(NormEstimate {
                estimate,
                upper: estimate * cfg.certify_factor,
                iterations: it,
                history,
            });
        }
    }
    Err(SpaceError::NoConvergence {
        iterations: cfg.max_iter,
        last_estimate: q.sqrt(),
        last_iterate: x,
    })
}

/// Norm of a linear map `R: (Rⁿ, G_in) → (Rᵐ, G_out)` between metric spaces,
/// computed densely. Used for constant bookkeeping on small instances.
pub fn dense_operator_norm(map: &DMatrix<f64>, input: &DMatrix<f64>, output: &DMatrix<f64>) -> f64 {
    let lin = Cholesky::new(input.clone()).expect("input metric must be SPD").l();
    let lout = Cholesky::new(output.clone()).expect("output metric must be SPD").l();
    // ‖R‖ = ‖Loutᵀ R Lin⁻ᵀ‖₂
    let lin_inv_t = lin
        .transpose()
        .try_inverse()
        .expect("cholesky factor is invertible");
    let b = lout.transpose() * map * lin_inv_t;
    b.singular_values().amax()
}

/// Spectral norm of a residual-valued linear map `S: V → V*`, i.e.
/// `sup ‖Sv‖_{V*}/‖v‖_V = ‖L⁻¹ S L⁻ᵀ‖₂` with `G = L Lᵀ`.
pub fn dual_operator_norm(map: &DMatrix<f64>, metric: &EnergyMetric) -> f64 {
    let l = metric.cholesky_factor();
    let linv = l.try_inverse().expect("cholesky factor is invertible");
    let b = &linv * map * linv.transpose();
    b.singular_values().amax()
}

/// Smallest eigenvalue of the symmetric part of `S` in the `G` metric.
pub fn min_generalized_eigenvalue(map: &DMatrix<f64>, metric: &EnergyMetric) -> f64 {
    let l = metric.cholesky_factor();
    let linv = l.try_inverse().expect("cholesky factor is invertible");
    let sym = (map + map.transpose()) * 0.5;
    let b = &linv * sym * linv.transpose();
    let b = (&b + b.transpose()) * 0.5;
    SymmetricEigen::new(b).eigenvalues.min()
}
