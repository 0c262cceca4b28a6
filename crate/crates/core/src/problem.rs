//! The data bundle `(A, f, φ, j, M, K, R₁..R₄)` of the history-dependent
//! inequality and the constants that govern its solvability.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::history::HistoryOperator;
use crate::spaces::{ConstraintSet, DiagonalMetric, EnergyMetric, SpaceError, TraceOperator};

/// Every constant appearing in the structural hypotheses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisConstants {
    /// Strong monotonicity of `A(t, λ, ·)`.
    pub m_a: f64,
    /// Lipschitz constant of `A(t, ·, v)`.
    pub m_a_bar: f64,
    pub a0_max: f64,
    pub a1: f64,
    pub a2: f64,
    pub l_f: f64,
    pub alpha_phi: f64,
    pub beta_phi: f64,
    pub c0j_max: f64,
    pub c1j: f64,
    pub c2j: f64,
    pub m_j: f64,
    pub m_1: f64,
    pub c_r: [f64; 4],
    pub m_norm: f64,
}

impl HypothesisConstants {
    /// Constants with `m_A` set and every coupling switched off.
    pub fn monotone(m_a: f64) -> Self {
        Self {
            m_a,
            m_a_bar: 0.0,
            a0_max: 0.0,
            a1: 0.0,
            a2: m_a,
            l_f: 0.0,
            alpha_phi: 0.0,
            beta_phi: 0.0,
            c0j_max: 0.0,
            c1j: 0.0,
            c2j: 0.0,
            m_j: 0.0,
            m_1: 0.0,
            c_r: [0.0; 4],
            m_norm: 0.0,
        }
    }

    pub fn is_well_formed(&self) -> bool {
        let rest = [
            self.m_a_bar,
            self.a0_max,
            self.a1,
            self.a2,
            self.l_f,
            self.alpha_phi,
            self.beta_phi,
            self.c0j_max,
            self.c1j,
            self.c2j,
            self.m_j,
            self.m_1,
            self.m_norm,
        ];
        self.m_a > 0.0
            && rest.iter().chain(self.c_r.iter()).all(|c| c.is_finite() && *c >= 0.0)
    }

    /// `m_j ‖M‖² + α_φ`, the part of `m_A` consumed by the nonmonotone and
    /// quasi couplings.
    pub fn consumed(&self) -> f64 {
        self.m_j * self.m_norm * self.m_norm + self.alpha_phi
    }
}

/// `m_A − m_j ‖M‖² − α_φ`; positive iff the smallness condition holds.
pub fn smallness_margin(h: &HypothesisConstants) -> f64 {
    h.m_a - h.consumed()
}

/// `A(t, λ, v)` returned as a residual vector.
pub trait OperatorA: Send + Sync {
    fn eval(&self, t: f64, lambda: &DVector<f64>, v: &DVector<f64>) -> DVector<f64>;
}

/// `f(t, ξ)` returned as a residual vector.
pub trait Forcing: Send + Sync {
    fn eval(&self, t: f64, xi: &DVector<f64>) -> DVector<f64>;
}

/// The convex potential `φ(t, η, w, ·)`.
pub trait ConvexPotential: Send + Sync {
    fn value(&self, t: f64, eta: &DVector<f64>, w: &DVector<f64>, v: &DVector<f64>) -> f64;

    fn value_diff(
        &self,
        t: f64,
        eta: &DVector<f64>,
        w: &DVector<f64>,
        v1: &DVector<f64>,
        v2: &DVector<f64>,
    ) -> f64 {
        self.value(t, eta, w, v1) - self.value(t, eta, w, v2)
    }

    /// `argmin_y ½‖y − x‖² + ρ φ(t, η, w, y) + ι_K(y)` in the lumped metric.
    fn prox(
        &self,
        t: f64,
        eta: &DVector<f64>,
        w: &DVector<f64>,
        x: &DVector<f64>,
        rho: f64,
        k: &ConstraintSet,
    ) -> DVector<f64>;

    /// An upper bound for the `V`-Lipschitz modulus of `φ(t, η, w, ·)`.
    fn lipschitz_bound(&self, t: f64, eta: &DVector<f64>, w: &DVector<f64>) -> f64;

    /// Whether `φ` actually depends on its third argument.
    fn is_quasi(&self) -> bool {
        true
    }
}

/// The locally Lipschitz potential `j(t, ζ, ·)` on `X`.
pub trait LipschitzPotential: Send + Sync {
    fn value(&self, t: f64, zeta: &DVector<f64>, x: &DVector<f64>) -> f64;
    /// Generalized directional derivative `j⁰(t, ζ, x; d)`.
    fn dir_deriv(&self, t: f64, zeta: &DVector<f64>, x: &DVector<f64>, d: &DVector<f64>) -> f64;
    /// An element of `∂j(t, ζ, x)`, as its Riesz representative in `X`.
    fn subgrad_select(&self, t: f64, zeta: &DVector<f64>, x: &DVector<f64>) -> DVector<f64>;
}

/// Piecewise-linear-in-time data, constant outside the sampled range.
#[derive(Clone, Debug, PartialEq)]
pub enum LoadSeries {
    Constant(DVector<f64>),
    PiecewiseLinear {
        times: Vec<f64>,
        values: Vec<DVector<f64>>,
    },
}

impl LoadSeries {
    pub fn dim(&self) -> usize {
        match self {
            LoadSeries::Constant(v) => v.len(),
            LoadSeries::PiecewiseLinear { values, .. } => values[0].len(),
        }
    }

    pub fn at(&self, t: f64) -> DVector<f64> {
        match self {
            LoadSeries::Constant(v) => v.clone(),
            LoadSeries::PiecewiseLinear { times, values } => {
                if t <= times[0] {
                    return values[0].clone();
                }
                let last = times.len() - 1;
                if t >= times[last] {
                    return values[last].clone();
                }
                let k = times.partition_point(|&s| s <= t) - 1;
                let s = (t - times[k]) / (times[k + 1] - times[k]);
                &values[k] * (1.0 - s) + &values[k + 1] * s
            }
        }
    }

    pub fn sup_norm(&self) -> f64 {
        match self {
            LoadSeries::Constant(v) => v.amax(),
            LoadSeries::PiecewiseLinear { values, .. } => {
                values.iter().map(|v| v.amax()).fold(0.0, f64::max)
            }
        }
    }
}

/// `A(t, λ, v) = S v + B λ`.
#[derive(Clone, Debug)]
pub struct LinearOperatorA {
    pub stiffness: DMatrix<f64>,
    pub coupling: Option<DMatrix<f64>>,
}

impl OperatorA for LinearOperatorA {
    fn eval(&self, _t: f64, lambda: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let mut r = &self.stiffness * v;
        if let Some(b) = &self.coupling {
            r += b * lambda;
        }
        r
    }
}

/// `f(t, ξ) = f₀(t) + C ξ`.
#[derive(Clone, Debug)]
pub struct AffineForcing {
    pub base: LoadSeries,
    pub coupling: Option<DMatrix<f64>>,
}

impl Forcing for AffineForcing {
    fn eval(&self, t: f64, xi: &DVector<f64>) -> DVector<f64> {
        let mut f = self.base.at(t);
        if let Some(c) = &self.coupling {
            f += c * xi;
        }
        f
    }
}

/// `φ ≡ 0`; the prox is the projection onto `K`.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroPotential;

impl ConvexPotential for ZeroPotential {
    fn value(&self, _: f64, _: &DVector<f64>, _: &DVector<f64>, _: &DVector<f64>) -> f64 {
        0.0
    }

    fn prox(
        &self,
        _: f64,
        _: &DVector<f64>,
        _: &DVector<f64>,
        x: &DVector<f64>,
        _: f64,
        k: &ConstraintSet,
    ) -> DVector<f64> {
        k.project(x)
    }

    fn lipschitz_bound(&self, _: f64, _: &DVector<f64>, _: &DVector<f64>) -> f64 {
        0.0
    }

    fn is_quasi(&self) -> bool {
        false
    }
}

fn saturate(r: f64) -> f64 {
    r.abs() / (1.0 + r.abs())
}

pub(crate) fn soft_threshold(x: f64, tau: f64) -> f64 {
    if x > tau {
        x - tau
    } else if x < -tau {
        x + tau
    } else {
        0.0
    }
}

/// `φ(t, η, w, v) = Σᵢ ωᵢ |vᵢ|` with `ωᵢ = cᵢ + a·s(wᵢ) + b·s(ηᵢ)` and
/// `s(r) = |r| / (1 + |r|)`.
///
/// The prox is exact only for scalar caps (or no caps).
#[derive(Clone, Debug)]
pub struct WeightedAbsPotential {
    pub base: DVector<f64>,
    pub quasi_gain: f64,
    pub history_gain: f64,
    /// `sup ‖v‖₂ / ‖v‖_V`.
    pub euclid_to_v: f64,
}

impl WeightedAbsPotential {
    pub fn weights(&self, eta: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.base.len(), |i, _| {
            let h = if eta.len() > i { saturate(eta[i]) } else { 0.0 };
            self.base[i] + self.quasi_gain * saturate(w[i]) + self.history_gain * h
        })
    }

    /// `α_φ` and `β_φ` implied by the construction.
    pub fn coupling_constants(&self) -> (f64, f64) {
        (
            self.quasi_gain * self.euclid_to_v * self.euclid_to_v,
            self.history_gain * self.euclid_to_v,
        )
    }
}

impl ConvexPotential for WeightedAbsPotential {
    fn value(&self, _t: f64, eta: &DVector<f64>, w: &DVector<f64>, v: &DVector<f64>) -> f64 {
        self.weights(eta, w).dot(&v.abs())
    }

    fn prox(
        &self,
        _t: f64,
        eta: &DVector<f64>,
        w: &DVector<f64>,
        x: &DVector<f64>,
        rho: f64,
        k: &ConstraintSet,
    ) -> DVector<f64> {
        let om = self.weights(eta, w);
        let mut y = DVector::from_fn(x.len(), |i, _| soft_threshold(x[i], rho * om[i]));
        assert!(
            k.caps().iter().all(|c| c.dofs.len() == 1),
            "WeightedAbsPotential::prox needs scalar caps"
        );
        // in one dimension the constrained minimiser is the clipped free one
        k.project_in_place(&mut y);
        y
    }

    fn lipschitz_bound(&self, _t: f64, eta: &DVector<f64>, w: &DVector<f64>) -> f64 {
        self.weights(eta, w).norm() * self.euclid_to_v
    }

    fn is_quasi(&self) -> bool {
        self.quasi_gain != 0.0
    }
}

/// A scalar locally Lipschitz function, piecewise `C¹`.
pub trait ScalarPotential: Send + Sync {
    fn value(&self, r: f64) -> f64;
    fn deriv_left(&self, r: f64) -> f64;
    fn deriv_right(&self, r: f64) -> f64;

    /// `g⁰(r; d)`: for piecewise-`C¹` functions the Clarke subdifferential is
    /// the interval spanned by the one-sided derivatives.
    fn clarke(&self, r: f64, d: f64) -> f64 {
        (d * self.deriv_left(r)).max(d * self.deriv_right(r))
    }

    /// `sup |∂g|` when bounded.
    fn subgrad_bound(&self) -> Option<f64>;
    /// Growth `|∂g(r)| ≤ c₀ + c₁|r|`.
    fn growth(&self) -> (f64, f64);
    /// Relaxed monotonicity constant `m_g`.
    fn relaxed_constant(&self) -> f64;
    /// Lipschitz constant of the derivative selection where it exists.
    fn slope_lipschitz(&self) -> Option<f64>;
}

/// `g(r) = ∫₀ʳ β` with `β` continuous and piecewise linear through the
/// given knots (constant extrapolation outside).
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseLinearSlope {
    knots: Vec<(f64, f64)>,
}

impl PiecewiseLinearSlope {
    pub fn new(knots: Vec<(f64, f64)>) -> Self {
        assert!(!knots.is_empty());
        assert!(knots.windows(2).all(|w| w[1].0 > w[0].0), "knots must increase");
        Self { knots }
    }

    /// The shipped normal-damping potential: `β = 0` on `r ≤ 0`, `2r` on
    /// `[0, 1]`, `3 − r` on `[1, 2]`, `1` on `r ≥ 2`.
    pub fn normal_damping() -> Self {
        Self::new(vec![(0.0, 0.0), (1.0, 2.0), (2.0, 1.0)])
    }

    pub fn slope(&self, r: f64) -> f64 {
        let k = &self.knots;
        if r <= k[0].0 {
            return k[0].1;
        }
        let last = k.len() - 1;
        if r >= k[last].0 {
            return k[last].1;
        }
        let i = k.partition_point(|&(x, _)| x <= r) - 1;
        let s = (r - k[i].0) / (k[i + 1].0 - k[i].0);
        k[i].1 * (1.0 - s) + k[i + 1].1 * s
    }

    fn integral_from_zero(&self, r: f64) -> f64 {
        // integrate the piecewise-linear slope exactly by the trapezoid rule
        // over the breakpoints between 0 and r
        let (lo, hi, sign) = if r >= 0.0 { (0.0, r, 1.0) } else { (r, 0.0, -1.0) };
        let mut pts = vec![lo];
        pts.extend(self.knots.iter().map(|&(x, _)| x).filter(|&x| x > lo && x < hi));
        pts.push(hi);
        let mut acc = 0.0;
        for w in pts.windows(2) {
            acc += 0.5 * (self.slope(w[0]) + self.slope(w[1])) * (w[1] - w[0]);
        }
        sign * acc
    }

    fn slopes(&self) -> impl Iterator<Item = f64> + '_ {
        self.knots
            .windows(2)
            .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
    }
}

impl ScalarPotential for PiecewiseLinearSlope {
    fn value(&self, r: f64) -> f64 {
        self.integral_from_zero(r)
    }

    fn deriv_left(&self, r: f64) -> f64 {
        self.slope(r)
    }

    fn deriv_right(&self, r: f64) -> f64 {
        self.slope(r)
    }

    fn subgrad_bound(&self) -> Option<f64> {
        Some(self.knots.iter().map(|k| k.1.abs()).fold(0.0, f64::max))
    }

    fn growth(&self) -> (f64, f64) {
        (self.subgrad_bound().unwrap_or(0.0), 0.0)
    }

    fn relaxed_constant(&self) -> f64 {
        self.slopes().fold(0.0, |m, s| m.max(-s))
    }

    fn slope_lipschitz(&self) -> Option<f64> {
        Some(self.slopes().fold(0.0, |m, s| m.max(s.abs())))
    }
}

/// `g(r) = c r²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quadratic {
    pub coef: f64,
}

impl ScalarPotential for Quadratic {
    fn value(&self, r: f64) -> f64 {
        self.coef * r * r
    }
    fn deriv_left(&self, r: f64) -> f64 {
        2.0 * self.coef * r
    }
    fn deriv_right(&self, r: f64) -> f64 {
        2.0 * self.coef * r
    }
    fn subgrad_bound(&self) -> Option<f64> {
        (self.coef == 0.0).then_some(0.0)
    }
    fn growth(&self) -> (f64, f64) {
        (0.0, 2.0 * self.coef.abs())
    }
    fn relaxed_constant(&self) -> f64 {
        (-2.0 * self.coef).max(0.0)
    }
    fn slope_lipschitz(&self) -> Option<f64> {
        Some(2.0 * self.coef.abs())
    }
}

/// `g(r) = c |r|`; nonconvex for `c < 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaledAbs {
    pub coef: f64,
}

impl ScalarPotential for ScaledAbs {
    fn value(&self, r: f64) -> f64 {
        self.coef * r.abs()
    }
    fn deriv_left(&self, r: f64) -> f64 {
        if r > 0.0 {
            self.coef
        } else {
            -self.coef
        }
    }
    fn deriv_right(&self, r: f64) -> f64 {
        if r >= 0.0 {
            self.coef
        } else {
            -self.coef
        }
    }
    fn subgrad_bound(&self) -> Option<f64> {
        Some(self.coef.abs())
    }
    fn growth(&self) -> (f64, f64) {
        (self.coef.abs(), 0.0)
    }
    fn relaxed_constant(&self) -> f64 {
        // c|r| with c < 0 is not relaxed monotone with any finite constant
        if self.coef < 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    }
    fn slope_lipschitz(&self) -> Option<f64> {
        None
    }
}

/// Nodal multiplier `α(t, ζᵢ)` of the prototype `α(t, ζ) g(v)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Modulation {
    Constant(f64),
    /// `k_min + (k_max − k_min) / (1 + |r|)`.
    Damper { k_min: f64, k_max: f64 },
}

impl Modulation {
    pub fn eval(&self, r: f64) -> f64 {
        match *self {
            Modulation::Constant(c) => c,
            Modulation::Damper { k_min, k_max } => k_min + (k_max - k_min) / (1.0 + r.abs()),
        }
    }

    pub fn bound(&self) -> f64 {
        match *self {
            Modulation::Constant(c) => c,
            Modulation::Damper { k_min, k_max } => k_min.max(k_max),
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match *self {
            Modulation::Constant(_) => 0.0,
            Modulation::Damper { k_min, k_max } => (k_max - k_min).abs(),
        }
    }
}

/// `j(t, ζ, x) = Σᵢ wᵢ α(ζᵢ) g(xᵢ)` with lumped weights `wᵢ`.
pub struct NodalPrototype {
    pub weights: DiagonalMetric,
    pub modulation: Modulation,
    pub g: Box<dyn ScalarPotential>,
}

impl NodalPrototype {
    fn alpha(&self, zeta: &DVector<f64>, i: usize) -> f64 {
        self.modulation.eval(if zeta.len() > i { zeta[i] } else { 0.0 })
    }

    /// `m_j` and `m₁` for the nodal construction in the `X` metric.
    pub fn coupling_constants(&self) -> (f64, f64) {
        let m_j = self.modulation.bound() * self.g.relaxed_constant();
        let m_1 = self.modulation.lipschitz() * self.g.subgrad_bound().unwrap_or(f64::INFINITY);
        (m_j, if self.modulation.lipschitz() == 0.0 { 0.0 } else { m_1 })
    }

    /// `(c₀ⱼ, c₁ⱼ, c₂ⱼ)` growth constants of `∂j` in the `X` norm.
    pub fn growth_constants(&self) -> (f64, f64, f64) {
        let (c0g, c1g) = self.g.growth();
        let a0 = self.modulation.bound();
        (a0 * c0g * self.weights.total_measure().sqrt(), 0.0, a0 * c1g)
    }
}

impl LipschitzPotential for NodalPrototype {
    fn value(&self, _t: f64, zeta: &DVector<f64>, x: &DVector<f64>) -> f64 {
        let w = self.weights.weights();
        (0..x.len()).map(|i| w[i] * self.alpha(zeta, i) * self.g.value(x[i])).sum()
    }

    fn dir_deriv(&self, _t: f64, zeta: &DVector<f64>, x: &DVector<f64>, d: &DVector<f64>) -> f64 {
        let w = self.weights.weights();
        (0..x.len())
            .map(|i| w[i] * self.alpha(zeta, i) * self.g.clarke(x[i], d[i]))
            .sum()
    }

    fn subgrad_select(&self, _t: f64, zeta: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(x.len(), |i, _| self.alpha(zeta, i) * self.g.deriv_right(x[i]))
    }
}

/// `j⁰` of the nodal prototype.
pub fn j0_prototype(
    pot: &NodalPrototype,
    t: f64,
    zeta: &DVector<f64>,
    x: &DVector<f64>,
    d: &DVector<f64>,
) -> f64 {
    pot.dir_deriv(t, zeta, x, d)
}

/// `j ≡ 0`.
#[derive(Clone, Copy, Debug)]
pub struct NoHemivariational {
    pub dim: usize,
}

impl LipschitzPotential for NoHemivariational {
    fn value(&self, _: f64, _: &DVector<f64>, _: &DVector<f64>) -> f64 {
        0.0
    }
    fn dir_deriv(&self, _: f64, _: &DVector<f64>, _: &DVector<f64>, _: &DVector<f64>) -> f64 {
        0.0
    }
    fn subgrad_select(&self, _: f64, _: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(x.len())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelaxedMonotonicityReport {
    pub claimed: f64,
    pub min_quotient: f64,
    pub witness: Option<(f64, f64)>,
    pub pass: bool,
    pub pairs: usize,
}

/// Scans all pairs of a uniform grid on `[−radius, radius]` with
/// `sample_count` points and reports the minimum of
/// `(∂g(r₁) − ∂g(r₂))(r₁ − r₂) + m_g (r₁ − r₂)²` over the right-limit selection.
pub fn check_relaxed_monotonicity(
    g: &dyn ScalarPotential,
    claimed_m_g: f64,
    sample_count: usize,
    radius: f64,
) -> RelaxedMonotonicityReport {
    assert!(sample_count >= 1);
    let pts: Vec<f64> = if sample_count == 1 {
        vec![0.0]
    } else {
        (0..sample_count)
            .map(|i| -radius + 2.0 * radius * i as f64 / (sample_count - 1) as f64)
            .collect()
    };
    let slopes: Vec<f64> = pts.iter().map(|&r| g.deriv_right(r)).collect();
    let mut min_q = f64::INFINITY;
    let mut witness = None;
    let mut pairs = 0;
    for i in 0..pts.len() {
        for j in (i + 1)..pts.len() {
            let d = pts[i] - pts[j];
            let q = (slopes[i] - slopes[j]) * d + claimed_m_g * d * d;
            pairs += 1;
            if q < min_q {
                min_q = q;
                witness = Some((pts[i], pts[j]));
            }
        }
    }
    if pairs == 0 {
        min_q = 0.0;
    }
    let tol = 1e-12 * (1.0 + radius * radius);
    RelaxedMonotonicityReport {
        claimed: claimed_m_g,
        min_quotient: min_q,
        witness: if min_q < -tol { witness } else { None },
        pass: min_q >= -tol,
        pairs,
    }
}

/// The four history operators.
pub struct HistoryBundle {
    pub r1: HistoryOperator,
    pub r2: HistoryOperator,
    pub r3: HistoryOperator,
    pub r4: HistoryOperator,
}

impl HistoryBundle {
    pub fn all(&self) -> [&HistoryOperator; 4] {
        [&self.r1, &self.r2, &self.r3, &self.r4]
    }
}

/// Metrics of the history-state spaces `E`, `X`, `Y`, `Z`.
#[derive(Clone, Debug)]
pub struct StateSpaces {
    pub e: DiagonalMetric,
    pub x: DiagonalMetric,
    pub y: DiagonalMetric,
    pub z: DiagonalMetric,
}

pub struct AbstractProblem {
    pub name: String,
    pub metric: EnergyMetric,
    pub trace: TraceOperator,
    pub constraint: ConstraintSet,
    pub op_a: Box<dyn OperatorA>,
    pub forcing: Box<dyn Forcing>,
    pub phi: Box<dyn ConvexPotential>,
    pub j: Box<dyn LipschitzPotential>,
    pub history: HistoryBundle,
    pub spaces: StateSpaces,
    pub constants: HypothesisConstants,
    /// Typical magnitude of solutions, used to scale sampling audits.
    pub scale: f64,
    /// Horizon used when sampling times.
    pub horizon: f64,
}

impl AbstractProblem {
    pub fn dim(&self) -> usize {
        self.metric.dim()
    }

    pub fn margin(&self) -> f64 {
        smallness_margin(&self.constants)
    }

    /// Structural consistency of dimensions across the bundle.
    pub fn validate(&self) -> Result<(), SpaceError> {
        let n = self.dim();
        let mismatch = |expected: usize, got: usize| {
            if expected == got {
                Ok(())
            } else {
                Err(SpaceError::DimensionMismatch { expected, got })
            }
        };
        mismatch(n, self.trace.source_dim())?;
        mismatch(n, self.constraint.dim())?;
        mismatch(self.spaces.x.dim(), self.trace.target_dim())?;
        let outs = [
            (self.spaces.e.dim(), &self.history.r1),
            (self.spaces.x.dim(), &self.history.r2),
            (self.spaces.y.dim(), &self.history.r3),
            (self.spaces.z.dim(), &self.history.r4),
        ];
        for (d, op) in outs {
            mismatch(n, op.input_dim())?;
            mismatch(d, op.output_dim())?;
        }
        Ok(())
    }

    /// `A(t, λ, v) − f(t, ξ) + M* z` with `z ∈ ∂j(t, ζ, Mv)` selected.
    pub fn smooth_residual(
        &self,
        t: f64,
        lambda: &DVector<f64>,
        xi: &DVector<f64>,
        zeta: &DVector<f64>,
        v: &DVector<f64>,
    ) -> DVector<f64> {
        let mv = self.trace.matrix() * v;
        let z = self.j.subgrad_select(t, zeta, &mv);
        let mut r = self.op_a.eval(t, lambda, v) - self.forcing.eval(t, xi);
        r += self
            .trace
            .apply_adjoint(&z)
            .expect("subgradient selection has the trace dimension");
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn margin_arithmetic() {
        let mut h = HypothesisConstants::monotone(1.0);
        assert_eq!(smallness_margin(&h), 1.0);
        h.m_j = 0.5;
        h.m_norm = 1.0;
        h.alpha_phi = 0.6;
        assert!((smallness_margin(&h) + 0.1).abs() < 1e-15);
        assert!(h.is_well_formed());
        h.m_a = 0.0;
        assert!(!h.is_well_formed());
    }

    #[test]
    fn normal_damping_potential_shape() {
        let g = PiecewiseLinearSlope::normal_damping();
        assert_eq!(g.slope(-1.0), 0.0);
        assert_eq!(g.slope(0.5), 1.0);
        assert_eq!(g.slope(1.5), 1.5);
        assert_eq!(g.slope(7.0), 1.0);
        assert_eq!(g.subgrad_bound(), Some(2.0));
        assert_eq!(g.relaxed_constant(), 1.0);
        // g(2) = ∫₀¹ 2r + ∫₁² (3 − r) = 1 + 1.5
        assert!((g.value(2.0) - 2.5).abs() < 1e-14);
        assert!((g.value(3.0) - 3.5).abs() < 1e-14);
        assert_eq!(g.value(-4.0), 0.0);
    }

    #[test]
    fn relaxed_monotonicity_of_examples() {
        let convex = Quadratic { coef: 1.0 };
        let r = check_relaxed_monotonicity(&convex, 0.0, 101, 3.0);
        assert!(r.pass && r.min_quotient >= 0.0);

        let concave = Quadratic { coef: -0.5 };
        assert!(check_relaxed_monotonicity(&concave, 1.0, 101, 3.0).pass);
        let fail = check_relaxed_monotonicity(&concave, 0.5, 101, 3.0);
        assert!(!fail.pass);
        let (a, b) = fail.witness.unwrap();
        // replay the witness
        let d = a - b;
        assert!((concave.deriv_right(a) - concave.deriv_right(b)) * d + 0.5 * d * d < 0.0);
    }

    #[test]
    fn relaxed_monotonicity_of_damping_potential() {
        // step 6/600 = 0.01 puts grid points on the knots 1 and 2
        let g = PiecewiseLinearSlope::normal_damping();
        let ok = check_relaxed_monotonicity(&g, 1.0, 601, 3.0);
        assert!(ok.pass, "{ok:?}");
        let bad = check_relaxed_monotonicity(&g, 0.9, 601, 3.0);
        assert!(!bad.pass);
        // the worst pair spans the descending piece [1, 2]: −1 + 0.9 = −0.1
        assert!((bad.min_quotient + 0.1).abs() < 1e-9, "{}", bad.min_quotient);
    }

    #[test]
    fn clarke_derivative_of_abs() {
        let g = ScaledAbs { coef: -1.0 };
        // −|r| at 0: Clarke derivative is |d|
        assert_eq!(g.clarke(0.0, 2.0), 2.0);
        assert_eq!(g.clarke(0.0, -2.0), 2.0);
        assert_eq!(g.clarke(1.0, 2.0), -2.0);
    }

    #[test]
    fn weighted_abs_prox_is_clipped_soft_threshold() {
        let phi = WeightedAbsPotential {
            base: DVector::from_vec(vec![1.0, 1.0]),
            quasi_gain: 0.0,
            history_gain: 0.0,
            euclid_to_v: 1.0,
        };
        let k = ConstraintSet::nodewise(2, vec![crate::spaces::NodalCap::scalar(1, 0.5)]).unwrap();
        let z = DVector::zeros(2);
        let y = phi.prox(0.0, &z, &z, &DVector::from_vec(vec![2.0, 3.0]), 0.5, &k);
        assert_eq!(y.as_slice(), &[1.5, 0.5]);
    }

    #[test]
    fn load_series_interpolates() {
        let s = LoadSeries::PiecewiseLinear {
            times: vec![0.0, 1.0],
            values: vec![DVector::from_element(1, 0.0), DVector::from_element(1, 2.0)],
        };
        assert_eq!(s.at(0.25)[0], 0.5);
        assert_eq!(s.at(5.0)[0], 2.0);
        assert_eq!(s.at(-1.0)[0], 0.0);
    }
}
