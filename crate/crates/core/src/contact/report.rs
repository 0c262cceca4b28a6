//! Recovery of boundary tractions from the discrete equilibrium residual and
//! pointwise checks of the contact and friction conditions.

use serde::Serialize;

use super::build::ContactProblem;
use super::mesh::BoundaryPart;
use crate::evolution::{frozen_at, EvolutionConfig, EvolutionReport};
use crate::history::{HistoryError, Trajectory};

/// Tangential speeds above this count as sliding.
pub const SLIDING_THRESHOLD: f64 = 1e-8;

/// Tractions below this fraction of the load scale have no direction.
pub const TRACTION_FLOOR: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("trajectory is not converged: node {index} has residual {residual:e} > {tol:e}")]
    NotConverged { index: usize, residual: f64, tol: f64 },
    #[error("trajectory does not match the scenario grid or dimension")]
    Mismatch,
    #[error(transparent)]
    History(#[from] HistoryError),
}

/// One boundary node at one time.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContactRecord {
    pub step: usize,
    pub t: f64,
    pub node: usize,
    pub part: BoundaryPart,
    pub normal_velocity: f64,
    pub tangential_velocity: f64,
    /// `u'_ν − g` on Γ₃; `NaN` on Γ₄.
    pub gap_residual: f64,
    pub normal_traction: f64,
    pub tangential_traction: f64,
    /// Selected damped response `k(u_ν) β(u'_ν)` on Γ₃, compliance `p(u_ν)` on Γ₄.
    pub normal_law: f64,
    /// `σ_ν + η` on Γ₃, `σ_ν + p` on Γ₄.
    pub normal_balance: f64,
    /// `(u'_ν − g)(σ_ν + η)` on Γ₃; `0` on Γ₄.
    pub product: f64,
    /// `F_b(slip)` on Γ₃, `μ(|u'_τ|) p(u_ν)` on Γ₄.
    pub friction_bound: f64,
    /// `bound − |σ_τ|`.
    pub cone_slack: f64,
    pub sliding: bool,
    /// Angle between `σ_τ` and `−u'_τ` at sliding nodes, `0` otherwise.
    pub angle: f64,
    pub slip: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComplementarityReport {
    pub records: Vec<ContactRecord>,
    /// `max (u'_ν − g)` over Γ₃.
    pub max_feasibility: f64,
    /// `max (σ_ν + η)` over Γ₃.
    pub max_sign: f64,
    pub max_product: f64,
    /// `max |σ_ν + p|` over Γ₄.
    pub max_compliance_residual: f64,
    pub min_cone_slack: f64,
    pub max_angle: f64,
    pub active_nodes: usize,
    pub sliding_nodes: usize,
    pub load_scale: f64,
}

impl ComplementarityReport {
    /// Largest violation of the unilateral conditions: positive gap residual,
    /// positive `σ_ν + η`, or nonzero product.
    pub fn unilateral_violation(&self) -> f64 {
        self.max_feasibility.max(0.0).max(self.max_sign.max(0.0)).max(self.max_product)
    }
}

/// Checks convergence of every node before building the report.
pub fn complementarity_report(
    cp: &ContactProblem,
    run: &EvolutionReport,
    cfg: &EvolutionConfig,
) -> Result<ComplementarityReport, ReportError> {
    let tol = cfg.frozen.inner_tol;
    for (index, s) in run.node_stats.iter().enumerate() {
        if s.residual.is_nan() || s.residual > tol {
            return Err(ReportError::NotConverged {
                index,
                residual: s.residual,
                tol,
            });
        }
    }
    traction_report(cp, &run.trajectory, cfg)
}

/// The report for any trajectory, without a convergence check.
pub fn traction_report(
    cp: &ContactProblem,
    traj: &Trajectory,
    cfg: &EvolutionConfig,
) -> Result<ComplementarityReport, ReportError> {
    let p = &cp.problem;
    if traj.grid() != cfg.grid || traj.dim() != p.dim() {
        return Err(ReportError::Mismatch);
    }
    let laws = &cp.scenario.spec.laws;
    let sp = &cp.spaces;
    let jnu = laws.normal_potential();
    let n3 = sp.unilateral.len();
    let mut records = Vec::new();
    for step in 0..cfg.grid.len() {
        let d = frozen_at(p, traj, step, cfg.rule)?;
        let w = traj.sample(step);
        let floor = TRACTION_FLOOR * cp.scenario.load_scale();
        let r = p.op_a.eval(d.t, &d.lambda, w) - p.forcing.eval(d.t, &d.xi);
        let traction = |node: usize, weight: f64| -> (f64, f64) {
            let (sn, st) = sp.normal_tangential(&r, node);
            (sn / weight, st / weight)
        };
        for (i, &node) in sp.unilateral.iter().enumerate() {
            let weight = sp.unilateral_weights[i];
            let (vn, vt) = sp.normal_tangential(w, node);
            let (sn, st) = traction(node, weight);
            let eta = laws.damper_at(d.zeta[i]) * crate::problem::ScalarPotential::deriv_right(&jnu, vn);
            let slip = d.eta[i];
            let bound = laws.friction_bound_at(slip);
            records.push(record(step, d.t, node, BoundaryPart::Unilateral, (vn, vt), (sn, st), eta, bound, slip, laws.gap, floor));
        }
        for (i, &node) in sp.compliance.iter().enumerate() {
            let weight = sp.compliance_weights[i];
            let (vn, vt) = sp.normal_tangential(w, node);
            let (sn, st) = traction(node, weight);
            let pr = laws.compliance_at(d.eta[n3 + i]);
            let bound = laws.friction_coefficient_at(vt.abs()) * pr;
            records.push(record(step, d.t, node, BoundaryPart::Compliance, (vn, vt), (sn, st), pr, bound, 0.0, laws.gap, floor));
        }
    }
    Ok(summarize(records, cp.scenario.load_scale()))
}

#[allow(clippy::too_many_arguments)]
fn record(
    step: usize,
    t: f64,
    node: usize,
    part: BoundaryPart,
    (vn, vt): (f64, f64),
    (sn, st): (f64, f64),
    law: f64,
    bound: f64,
    slip: f64,
    gap: f64,
    floor: f64,
) -> ContactRecord {
    let sliding = vt.abs() > SLIDING_THRESHOLD;
    let angle = if !sliding || st * vt < 0.0 {
        0.0
    } else if st.abs() <= floor && bound <= floor {
        // a vanishing bound lets the node slide freely
        0.0
    } else {
        std::f64::consts::PI
    };
    let unilateral = part == BoundaryPart::Unilateral;
    let gap_residual = if unilateral { vn - gap } else { f64::NAN };
    let balance = sn + law;
    ContactRecord {
        step,
        t,
        node,
        part,
        normal_velocity: vn,
        tangential_velocity: vt,
        gap_residual,
        normal_traction: sn,
        tangential_traction: st,
        normal_law: law,
        normal_balance: balance,
        product: if unilateral { gap_residual * balance } else { 0.0 },
        friction_bound: bound,
        cone_slack: bound - st.abs(),
        sliding,
        angle,
        slip,
    }
}

fn summarize(records: Vec<ContactRecord>, load_scale: f64) -> ComplementarityReport {
    let uni = || records.iter().filter(|r| r.part == BoundaryPart::Unilateral);
    let fold_max = |it: &mut dyn Iterator<Item = f64>| it.fold(f64::NEG_INFINITY, f64::max);
    let max_or_zero = |x: f64| if x == f64::NEG_INFINITY { 0.0 } else { x };
    ComplementarityReport {
        max_feasibility: max_or_zero(fold_max(&mut uni().map(|r| r.gap_residual))),
        max_sign: max_or_zero(fold_max(&mut uni().map(|r| r.normal_balance))),
        max_product: max_or_zero(fold_max(&mut uni().map(|r| r.product.abs()))),
        max_compliance_residual: max_or_zero(fold_max(
            &mut records
                .iter()
                .filter(|r| r.part == BoundaryPart::Compliance)
                .map(|r| r.normal_balance.abs()),
        )),
        min_cone_slack: records.iter().map(|r| r.cone_slack).fold(f64::INFINITY, f64::min),
        max_angle: records.iter().map(|r| r.angle).fold(0.0, f64::max),
        active_nodes: uni().filter(|r| r.gap_residual.abs() <= 1e-12 * (1.0 + r.normal_velocity.abs())).count(),
        sliding_nodes: records.iter().filter(|r| r.sliding).count(),
        load_scale,
        records,
    }
}

