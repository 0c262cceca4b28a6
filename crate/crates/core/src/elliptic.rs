//! The inequality with frozen history data: solver, Minty certificate and the
//! a priori bound.
//!
//! The solver freezes the quasi slot of `φ` in an outer loop and runs an
//! accelerated forward-backward iteration in the lumped metric inside. The
//! smooth part of the inner problem is `v ↦ A(t, λ, v) − f(t, ξ) + M* ∂j(Mv)`
//! with the subgradient re-selected at every iterate; the backward step is the
//! joint prox of `φ` and the indicator of `K`.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::problem::AbstractProblem;

/// Everything the history operators contribute at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenData {
    pub t: f64,
    pub lambda: DVector<f64>,
    pub xi: DVector<f64>,
    pub eta: DVector<f64>,
    pub zeta: DVector<f64>,
}

impl FrozenData {
    pub fn zeros(p: &AbstractProblem, t: f64) -> Self {
        Self {
            t,
            lambda: DVector::zeros(p.spaces.e.dim()),
            xi: DVector::zeros(p.spaces.x.dim()),
            eta: DVector::zeros(p.spaces.y.dim()),
            zeta: DVector::zeros(p.spaces.z.dim()),
        }
    }

    pub fn validate(&self, p: &AbstractProblem) -> Result<(), SolveError> {
        let parts = [
            ("lambda", &self.lambda, p.spaces.e.dim()),
            ("xi", &self.xi, p.spaces.x.dim()),
            ("eta", &self.eta, p.spaces.y.dim()),
            ("zeta", &self.zeta, p.spaces.z.dim()),
        ];
        for (name, v, d) in parts {
            if v.len() != d {
                return Err(SolveError::BadData(format!("{name} has length {}, expected {d}", v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) || !self.t.is_finite() {
                return Err(SolveError::BadData(format!("{name} is not finite")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveConfig {
    /// Forward-backward step; estimated from the smooth part when `None`.
    pub step: Option<f64>,
    pub inner_tol: f64,
    pub outer_tol: f64,
    pub max_inner: usize,
    pub max_outer: usize,
    pub divergence_factor: f64,
    pub accelerated: bool,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            step: None,
            inner_tol: 1e-10,
            outer_tol: 1e-10,
            max_inner: 50_000,
            max_outer: 200,
            divergence_factor: 1e6,
            accelerated: true,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("smallness condition fails: margin m_A - m_j |M|^2 - alpha_phi = {margin:.6e} <= 0")]
    Smallness { margin: f64 },
    #[error("invalid frozen data: {0}")]
    BadData(String),
    #[error("inner iteration did not reach {tol:e} in {iterations} steps (outer pass {outer}, last residual {last:e})")]
    InnerNoConvergence {
        outer: usize,
        iterations: usize,
        tol: f64,
        last: f64,
        history: Vec<f64>,
    },
    #[error("outer iteration did not settle in {iterations} passes (last change {last:e})")]
    OuterNoConvergence {
        iterations: usize,
        last: f64,
        history: Vec<f64>,
    },
    #[error("iteration diverged with step {step:e} (residual {residual:e}); try a smaller step")]
    Divergence { step: f64, residual: f64 },
    #[error("probe {0} lies outside K")]
    InfeasibleProbe(usize),
    #[error("candidate solution lies outside K (violation {0:e})")]
    InfeasibleCandidate(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrozenSolution {
    pub w: DVector<f64>,
    pub inner_iterations: usize,
    pub outer_iterations: usize,
    /// `‖w − prox(w − ρ R(w))‖` with `φ` frozen at `w` itself.
    pub residual: f64,
    /// `‖w_k − w_{k−1}‖_V` over outer passes.
    pub outer_history: Vec<f64>,
    pub step: f64,
}

fn smooth(p: &AbstractProblem, d: &FrozenData, v: &DVector<f64>) -> DVector<f64> {
    p.smooth_residual(d.t, &d.lambda, &d.xi, &d.zeta, v)
}

fn fb_map(p: &AbstractProblem, d: &FrozenData, frozen: &DVector<f64>, v: &DVector<f64>, rho: f64) -> DVector<f64> {
    let g = smooth(p, d, v);
    let x = v - g * rho;
    p.phi.prox(d.t, &d.eta, frozen, &x, rho, &p.constraint)
}

/// Forward-backward fixed-point residual `‖w − prox(w − ρ R(w))‖` with the
/// quasi slot of `φ` frozen at `w`.
pub fn frozen_residual(p: &AbstractProblem, d: &FrozenData, w: &DVector<f64>, rho: f64) -> f64 {
    (w - fb_map(p, d, w, w, rho)).norm()
}

/// Euclidean Lipschitz estimate of the smooth part near `w`, by power
/// iteration on difference quotients.
pub fn estimate_lipschitz(p: &AbstractProblem, d: &FrozenData, w: &DVector<f64>) -> f64 {
    let n = p.dim();
    let h = 1e-5 * (1.0 + w.amax()).max(p.scale);
    let base = smooth(p, d, w);
    let mut dir = DVector::from_fn(n, |i, _| 1.0 + 0.1 * ((i * 7919 % 13) as f64));
    dir /= dir.norm();
    let mut est: f64 = 0.0;
    for _ in 0..60 {
        let q = (smooth(p, d, &(w + &dir * h)) - &base) / h;
        let qn = q.norm();
        if qn == 0.0 || !qn.is_finite() {
            break;
        }
        let prev = est;
        est = est.max(qn);
        dir = q / qn;
        if (est - prev).abs() <= 1e-6 * est {
            break;
        }
    }
    est.max(f64::MIN_POSITIVE)
}

/// Default step `1 / (1.2 L)` from [`estimate_lipschitz`].
pub fn estimate_step(p: &AbstractProblem, d: &FrozenData, w: &DVector<f64>) -> f64 {
    1.0 / (1.2 * estimate_lipschitz(p, d, w))
}

enum InnerFailure {
    Diverged(f64),
    Stalled { iterations: usize, last: f64, history: Vec<f64> },
}

/// Accelerated forward-backward with adaptive restart for the problem with
/// `φ` frozen at `frozen`.
fn inner_solve(
    p: &AbstractProblem,
    d: &FrozenData,
    frozen: &DVector<f64>,
    start: &DVector<f64>,
    rho: f64,
    cfg: &SolveConfig,
) -> Result<(DVector<f64>, usize), InnerFailure> {
    let mut x = p.constraint.project(start);
    let mut y = x.clone();
    let mut momentum: f64 = 1.0;
    let mut first = None;
    let mut history = Vec::new();
    for it in 1..=cfg.max_inner {
        let x_new = fb_map(p, d, frozen, &y, rho);
        let step_res = (&x_new - &y).norm();
        if !step_res.is_finite() {
            return Err(InnerFailure::Diverged(step_res));
        }
        let first_res = *first.get_or_insert(step_res.max(cfg.inner_tol));
        if step_res > cfg.divergence_factor * first_res {
            return Err(InnerFailure::Diverged(step_res));
        }
        if it % 64 == 1 {
            history.push(step_res);
        }
        if step_res <= cfg.inner_tol {
            let cert = (&x_new - fb_map(p, d, frozen, &x_new, rho)).norm();
            if cert <= cfg.inner_tol {
                return Ok((x_new, it));
            }
        }
        if cfg.accelerated {
            let restart = (&y - &x_new).dot(&(&x_new - &x)) > 0.0;
            if restart {
                momentum = 1.0;
                y = x_new.clone();
            } else {
                let next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
                y = &x_new + (&x_new - &x) * ((momentum - 1.0) / next);
                momentum = next;
            }
        } else {
            y = x_new.clone();
        }
        x = x_new;
    }
    let last = frozen_residual(p, d, &x, rho);
    history.push(last);
    Err(InnerFailure::Stalled {
        iterations: cfg.max_inner,
        last,
        history,
    })
}

/// Solves the frozen inequality from the initial guess `start`.
pub fn solve_frozen(
    p: &AbstractProblem,
    d: &FrozenData,
    cfg: &SolveConfig,
    start: Option<&DVector<f64>>,
) -> Result<FrozenSolution, SolveError> {
    let margin = p.margin();
    if margin.is_nan() || margin <= 0.0 {
        return Err(SolveError::Smallness { margin });
    }
    d.validate(p)?;
    let init = match start {
        Some(s) => p.constraint.project(s),
        None => DVector::zeros(p.dim()),
    };
    let auto = cfg.step.is_none();
    let mut rho = cfg.step.unwrap_or_else(|| estimate_step(p, d, &init));
    let mut halvings = 0;
    'restart: loop {
        let mut w = init.clone();
        let mut total_inner = 0;
        let mut outer_history = Vec::new();
        for outer in 1..=cfg.max_outer {
            let frozen = w.clone();
            let next = match inner_solve(p, d, &frozen, &w, rho, cfg) {
                Ok((v, its)) => {
                    total_inner += its;
                    v
                }
                Err(InnerFailure::Diverged(residual)) => {
                    if auto && halvings < 40 {
                        rho *= 0.5;
                        halvings += 1;
                        continue 'restart;
                    }
                    return Err(SolveError::Divergence { step: rho, residual });
                }
                Err(InnerFailure::Stalled { iterations, last, history }) => {
                    return Err(SolveError::InnerNoConvergence {
                        outer,
                        iterations,
                        tol: cfg.inner_tol,
                        last,
                        history,
                    })
                }
            };
            let change = p.metric.norm(&(&next - &frozen));
            outer_history.push(change);
            w = next;
            let settled = !p.phi.is_quasi() || change <= cfg.outer_tol;
            if settled {
                let residual = frozen_residual(p, d, &w, rho);
                if residual <= cfg.inner_tol || !p.phi.is_quasi() {
                    return Ok(FrozenSolution {
                        w,
                        inner_iterations: total_inner,
                        outer_iterations: outer,
                        residual,
                        outer_history,
                        step: rho,
                    });
                }
            }
        }
        let last = outer_history.last().copied().unwrap_or(f64::NAN);
        return Err(SolveError::OuterNoConvergence {
            iterations: cfg.max_outer,
            last,
            history: outer_history,
        });
    }
}

/// `⟨A(t,λ,v) − f(t,ξ), v − w⟩ + φ(t,η,w,v) − φ(t,η,w,w) + j⁰(t,ζ,Mv; Mv − Mw)`.
pub fn minty_value(p: &AbstractProblem, d: &FrozenData, w: &DVector<f64>, v: &DVector<f64>) -> f64 {
    let diff = v - w;
    let r = p.op_a.eval(d.t, &d.lambda, v) - p.forcing.eval(d.t, &d.xi);
    let mv = p.trace.matrix() * v;
    let mdiff = p.trace.matrix() * &diff;
    r.dot(&diff) + p.phi.value_diff(d.t, &d.eta, w, v, w) + p.j.dir_deriv(d.t, &d.zeta, &mv, &mdiff)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MintyReport {
    pub min_value: f64,
    pub worst_probe: Option<usize>,
    pub probes: usize,
}

/// Minimum of [`minty_value`] over feasible probes.
pub fn minty_residual(
    p: &AbstractProblem,
    d: &FrozenData,
    w: &DVector<f64>,
    probes: &[DVector<f64>],
) -> Result<MintyReport, SolveError> {
    let tol = 1e-12 * (1.0 + p.scale);
    let viol = p.constraint.max_violation(w);
    if viol > tol {
        return Err(SolveError::InfeasibleCandidate(viol));
    }
    let mut min_value = f64::INFINITY;
    let mut worst = None;
    for (i, v) in probes.iter().enumerate() {
        if !p.constraint.contains(v, tol) {
            return Err(SolveError::InfeasibleProbe(i));
        }
        let m = minty_value(p, d, w, v);
        if m < min_value {
            min_value = m;
            worst = Some(i);
        }
    }
    Ok(MintyReport {
        min_value: if probes.is_empty() { 0.0 } else { min_value },
        worst_probe: worst,
        probes: probes.len(),
    })
}

/// Feasible probes around `w`: points pushed onto every cap (all at once and
/// one at a time), then projected Gaussian perturbations with `V`-norm
/// `r · scale` for `r ∈ {0.1, 1, 10}` in rotation.
pub fn generate_probes(p: &AbstractProblem, w: &DVector<f64>, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut out = Vec::with_capacity(count);
    let caps = p.constraint.caps();
    if !caps.is_empty() && count > 0 {
        let mut corner = w.clone();
        for c in caps {
            let gap = c.bound - c.value(&corner);
            for (&i, dir) in c.dofs.iter().zip(&c.direction) {
                corner[i] += gap * dir;
            }
        }
        out.push(corner);
        for c in caps.iter().take(count / 4) {
            let mut v = w.clone();
            let gap = c.bound - c.value(&v);
            for (&i, dir) in c.dofs.iter().zip(&c.direction) {
                v[i] += gap * dir;
            }
            out.push(v);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radii = [0.1, 1.0, 10.0];
    let scale = if p.scale > 0.0 { p.scale } else { 1.0 };
    let mut k = 0;
    while out.len() < count {
        let dir = DVector::from_fn(p.dim(), |_, _| StandardNormal.sample(&mut rng));
        let norm = p.metric.norm(&dir);
        if norm == 0.0 {
            continue;
        }
        let r = radii[k % 3] * scale;
        k += 1;
        out.push(p.constraint.project(&(w + dir * (r / norm))));
    }
    out.truncate(count);
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

/// Checks `(m_A − m_j‖M‖² − α_φ) ‖w − v₀‖ ≤ rhs` where `rhs` collects the
/// growth of `A`, `f`, `∂j` and the Lipschitz modulus of `φ(t, η, z₀, ·)`
/// evaluated at the reference points `v₀ ∈ K`, `z₀`, `ξ₀`.
pub fn apriori_bound_check(
    p: &AbstractProblem,
    d: &FrozenData,
    w: &DVector<f64>,
    v0: &DVector<f64>,
    z0: &DVector<f64>,
    xi0: &DVector<f64>,
) -> BoundCheck {
    let h = &p.constants;
    let nv0 = p.metric.norm(v0);
    let m = h.m_norm;
    let lhs = p.margin() * p.metric.norm(&(w - v0));
    let rhs = h.a0_max
        + h.a1 * p.spaces.e.norm(&d.lambda)
        + h.a2 * nv0
        + p.metric.dual_norm(&p.forcing.eval(d.t, xi0))
        + h.l_f * (p.spaces.x.norm(xi0) + p.spaces.x.norm(&d.xi))
        + m * (h.c0j_max + h.c1j * p.spaces.z.norm(&d.zeta) + h.c2j * m * nv0)
        + p.phi.lipschitz_bound(d.t, &d.eta, z0)
        + h.alpha_phi * p.metric.norm(&(v0 - z0));
    BoundCheck {
        lhs,
        rhs,
        pass: lhs <= rhs * (1.0 + 1e-9) + 1e-12,
    }
}
