//! The full history-dependent problem on a time grid: causal time marching,
//! the global fixed-point iteration on the history map, and the stability and
//! uniqueness harnesses.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::elliptic::{solve_frozen, FrozenData, SolveConfig, SolveError};
use crate::history::{eval_history, HistoryError, QuadratureRule, TimeGrid, Trajectory};
use crate::problem::AbstractProblem;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    March,
    Picard,
    #[default]
    Both,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvolutionConfig {
    pub grid: TimeGrid,
    pub frozen: SolveConfig,
    pub rule: QuadratureRule,
    pub picard_tol: f64,
    pub max_picard: usize,
    pub mode: Mode,
}

impl EvolutionConfig {
    pub fn new(grid: TimeGrid) -> Self {
        Self {
            grid,
            frozen: SolveConfig::default(),
            rule: QuadratureRule::LeftRectangle,
            picard_tol: 1e-8,
            max_picard: 200,
            mode: Mode::Both,
        }
    }
}

#[derive(Debug, Error)]
pub enum EvolutionError {
    #[error("refusing to run: smallness margin {margin:.6e} <= 0")]
    Refused { margin: f64 },
    #[error("frozen solve failed at time index {index} (t = {t}): {source}")]
    Node {
        index: usize,
        t: f64,
        #[source]
        source: SolveError,
    },
    #[error("implicit history at time index {index} did not settle in {sweeps} sweeps")]
    Implicit { index: usize, sweeps: usize },
    #[error("fixed-point iteration did not reach {tol:e} in {sweeps} sweeps (last change {last:e})")]
    PicardNoConvergence {
        sweeps: usize,
        tol: f64,
        last: f64,
        history: Vec<f64>,
    },
    #[error(transparent)]
    History(#[from] HistoryError),
    #[error("{0}")]
    Input(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NodeStats {
    pub inner_iterations: usize,
    pub outer_iterations: usize,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvolutionReport {
    pub trajectory: Trajectory,
    pub node_stats: Vec<NodeStats>,
    /// Discrete `L²(0,T;V)` change between successive fixed-point sweeps.
    pub picard_history: Vec<f64>,
    /// `max_n ‖·‖_V` change between successive sweeps.
    pub picard_max_history: Vec<f64>,
    pub sweeps: usize,
}

impl EvolutionReport {
    /// `r_k = d_k / d_{k−1}` over the fixed-point history.
    pub fn contraction_ratios(&self) -> Vec<f64> {
        contraction_ratios(&self.picard_history)
    }

    pub fn total_inner_iterations(&self) -> usize {
        self.node_stats.iter().map(|s| s.inner_iterations).sum()
    }

    pub fn max_residual(&self) -> f64 {
        self.node_stats.iter().map(|s| s.residual).fold(0.0, f64::max)
    }
}

/// Ratios of successive entries, skipping steps whose predecessor is zero.
pub fn contraction_ratios(history: &[f64]) -> Vec<f64> {
    history
        .windows(2)
        .filter(|w| w[0] > 0.0)
        .map(|w| w[1] / w[0])
        .collect()
}

/// History states `(λ, ξ, η, ζ)` at `t_n` produced by `traj`.
pub fn frozen_at(
    p: &AbstractProblem,
    traj: &Trajectory,
    n: usize,
    rule: QuadratureRule,
) -> Result<FrozenData, HistoryError> {
    let h = &p.history;
    Ok(FrozenData {
        t: traj.grid().node(n),
        lambda: eval_history(&h.r1, traj, n, rule)?,
        xi: eval_history(&h.r2, traj, n, rule)?,
        eta: eval_history(&h.r3, traj, n, rule)?,
        zeta: eval_history(&h.r4, traj, n, rule)?,
    })
}

fn check_margin(p: &AbstractProblem) -> Result<(), EvolutionError> {
    let margin = p.margin();
    if margin.is_nan() || margin <= 0.0 {
        Err(EvolutionError::Refused { margin })
    } else {
        Ok(())
    }
}

fn node_error(index: usize, t: f64) -> impl FnOnce(SolveError) -> EvolutionError {
    move |source| EvolutionError::Node { index, t, source }
}

/// Solves node by node; history enters explicitly under the left rectangle
/// rule and through a per-node fixed point under the trapezoid rule.
pub fn time_march(p: &AbstractProblem, cfg: &EvolutionConfig) -> Result<EvolutionReport, EvolutionError> {
    check_margin(p)?;
    let mut traj = Trajectory::zeros(cfg.grid, p.dim());
    let mut stats = Vec::with_capacity(cfg.grid.len());
    let mut warm = DVector::zeros(p.dim());
    for n in 0..=cfg.grid.steps() {
        let t = cfg.grid.node(n);
        traj.set(n, warm.clone());
        let mut sol;
        let mut sweeps = 0;
        loop {
            let data = frozen_at(p, &traj, n, cfg.rule)?;
            sol = solve_frozen(p, &data, &cfg.frozen, Some(traj.sample(n))).map_err(node_error(n, t))?;
            sweeps += 1;
            let change = p.metric.norm(&(&sol.w - traj.sample(n)));
            traj.set(n, sol.w.clone());
            if cfg.rule.strictly_causal() || n == 0 || change <= cfg.frozen.inner_tol {
                break;
            }
            if sweeps >= 50 {
                return Err(EvolutionError::Implicit { index: n, sweeps });
            }
        }
        stats.push(NodeStats {
            inner_iterations: sol.inner_iterations,
            outer_iterations: sol.outer_iterations,
            residual: sol.residual,
        });
        warm = sol.w;
    }
    Ok(EvolutionReport {
        trajectory: traj,
        node_stats: stats,
        picard_history: Vec::new(),
        picard_max_history: Vec::new(),
        sweeps: 0,
    })
}

/// One application of the history map: evaluate all history states from
/// `traj`, then solve every node with those states frozen.
pub fn picard_sweep(
    p: &AbstractProblem,
    cfg: &EvolutionConfig,
    traj: &Trajectory,
) -> Result<(Trajectory, Vec<NodeStats>), EvolutionError> {
    let mut next = traj.clone();
    let mut stats = Vec::with_capacity(cfg.grid.len());
    for n in 0..=cfg.grid.steps() {
        let data = frozen_at(p, traj, n, cfg.rule)?;
        let sol = solve_frozen(p, &data, &cfg.frozen, Some(traj.sample(n)))
            .map_err(node_error(n, data.t))?;
        stats.push(NodeStats {
            inner_iterations: sol.inner_iterations,
            outer_iterations: sol.outer_iterations,
            residual: sol.residual,
        });
        next.set(n, sol.w);
    }
    Ok((next, stats))
}

/// Iterates [`picard_sweep`] from `init` until the discrete `L²(0,T;V)` change
/// drops to `picard_tol`.
pub fn picard_global(
    p: &AbstractProblem,
    cfg: &EvolutionConfig,
    init: &Trajectory,
) -> Result<EvolutionReport, EvolutionError> {
    check_margin(p)?;
    if init.grid() != cfg.grid || init.dim() != p.dim() {
        return Err(EvolutionError::Input(
            "initial trajectory does not match the grid or the problem dimension".into(),
        ));
    }
    let mut traj = init.clone();
    let mut history = Vec::new();
    let mut max_history = Vec::new();
    for sweep in 1..=cfg.max_picard {
        let (next, stats) = picard_sweep(p, cfg, &traj)?;
        let change = next.l2_distance(&traj, cfg.rule, &p.metric)?;
        max_history.push(next.max_distance(&traj, &p.metric)?);
        history.push(change);
        traj = next;
        if change <= cfg.picard_tol {
            return Ok(EvolutionReport {
                trajectory: traj,
                node_stats: stats,
                picard_history: history,
                picard_max_history: max_history,
                sweeps: sweep,
            });
        }
    }
    Err(EvolutionError::PicardNoConvergence {
        sweeps: cfg.max_picard,
        tol: cfg.picard_tol,
        last: history.last().copied().unwrap_or(f64::NAN),
        history,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossMethodReport {
    pub march: EvolutionReport,
    pub picard: EvolutionReport,
    /// Discrete `L²(0,T;V)` distance between the two trajectories.
    pub distance: f64,
    pub max_distance: f64,
}

/// Runs both solvers, the fixed-point iteration from zero.
pub fn cross_method(p: &AbstractProblem, cfg: &EvolutionConfig) -> Result<CrossMethodReport, EvolutionError> {
    let march = time_march(p, cfg)?;
    let picard = picard_global(p, cfg, &Trajectory::zeros(cfg.grid, p.dim()))?;
    let distance = march.trajectory.l2_distance(&picard.trajectory, cfg.rule, &p.metric)?;
    let max_distance = march.trajectory.max_distance(&picard.trajectory, &p.metric)?;
    Ok(CrossMethodReport {
        march,
        picard,
        distance,
        max_distance,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct UniquenessReport {
    pub max_distance: f64,
    pub runs: Vec<EvolutionReport>,
}

/// Runs [`picard_global`] from every initial trajectory and reports the
/// largest pairwise `L²(0,T;V)` distance of the limits.
pub fn uniqueness_probe(
    p: &AbstractProblem,
    cfg: &EvolutionConfig,
    inits: &[Trajectory],
) -> Result<UniquenessReport, EvolutionError> {
    if inits.len() < 2 {
        return Err(EvolutionError::Input("need at least two initial trajectories".into()));
    }
    let runs = inits
        .iter()
        .map(|init| picard_global(p, cfg, init))
        .collect::<Result<Vec<_>, _>>()?;
    let mut max_distance: f64 = 0.0;
    for i in 0..runs.len() {
        for j in (i + 1)..runs.len() {
            let d = runs[i]
                .trajectory
                .l2_distance(&runs[j].trajectory, cfg.rule, &p.metric)?;
            max_distance = max_distance.max(d);
        }
    }
    Ok(UniquenessReport { max_distance, runs })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityReport {
    /// `‖w₁ − w₂‖_{L²(0,t_n;V)}` per node.
    pub lhs: Vec<f64>,
    /// Bound from the input differences per node.
    pub rhs: Vec<f64>,
    /// `max lhs / rhs` over nodes with `rhs > 0`.
    pub ratio: f64,
    pub pass: bool,
    /// Set when the perturbation vanishes identically.
    pub skipped: bool,
}

/// Solves the frozen problem for two families of history inputs over the
/// grid and compares `‖w₁ − w₂‖_{L²(0,t;V)}` with
/// `‖m̄_A‖Δλ‖ + L_f‖Δξ‖ + β_φ‖Δη‖ + m₁‖M‖‖Δζ‖‖_{L²(0,t)} / margin`.
/// The bound is also checked pointwise in time. Both comparisons allow
/// `100 · inner_tol · √T` for solver error.
pub fn stability_ratio(
    p: &AbstractProblem,
    cfg: &EvolutionConfig,
    base: &[FrozenData],
    perturbed: &[FrozenData],
) -> Result<StabilityReport, EvolutionError> {
    check_margin(p)?;
    let len = cfg.grid.len();
    if base.len() != len || perturbed.len() != len {
        return Err(EvolutionError::Input(format!("need {len} frozen states per family")));
    }
    let h = &p.constants;
    let s = &p.spaces;
    let margin = p.margin();
    let mut forcing = Vec::with_capacity(len);
    let mut gaps = Vec::with_capacity(len);
    let mut any = false;
    for (n, (a, b)) in base.iter().zip(perturbed).enumerate() {
        let drive = h.m_a_bar * s.e.norm(&(&a.lambda - &b.lambda))
            + h.l_f * s.x.norm(&(&a.xi - &b.xi))
            + h.beta_phi * s.y.norm(&(&a.eta - &b.eta))
            + h.m_1 * h.m_norm * s.z.norm(&(&a.zeta - &b.zeta));
        any |= drive > 0.0;
        let wa = solve_frozen(p, a, &cfg.frozen, None).map_err(node_error(n, a.t))?;
        let gap = if a == b {
            0.0
        } else {
            let wb = solve_frozen(p, b, &cfg.frozen, Some(&wa.w)).map_err(node_error(n, b.t))?;
            p.metric.norm(&(&wa.w - &wb.w))
        };
        forcing.push((drive / margin).powi(2));
        gaps.push(gap * gap);
    }
    let dt = cfg.grid.dt();
    let slack = 100.0 * cfg.frozen.inner_tol * cfg.grid.horizon().sqrt();
    let mut lhs = Vec::with_capacity(len);
    let mut rhs = Vec::with_capacity(len);
    let mut ratio: f64 = 0.0;
    let mut pass = true;
    for n in 0..len {
        let l = cfg.rule.integrate(&gaps[..=n], dt).sqrt();
        let r = cfg.rule.integrate(&forcing[..=n], dt).sqrt();
        if r > 0.0 {
            ratio = ratio.max(l / r);
        }
        pass &= l <= r + slack && gaps[n].sqrt() <= forcing[n].sqrt() + slack;
        lhs.push(l);
        rhs.push(r);
    }
    Ok(StabilityReport {
        lhs,
        rhs,
        ratio,
        pass,
        skipped: !any,
    })
}
