//! Mapping of the contact scenario onto the abstract inequality.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::assembly::{assemble_spaces, isotropic_block, AssembledSpaces, AssemblyError};
use super::laws::BoundaryLaws;
use super::scenario::ContactScenario;
use crate::history::{HistoryOperator, MemoryKernel, SlipOperator, VolterraOperator};
use crate::problem::{
    soft_threshold, AbstractProblem, AffineForcing, ConvexPotential, HistoryBundle,
    HypothesisConstants, LinearOperatorA, NodalPrototype, ScalarPotential, StateSpaces,
};
use crate::spaces::{
    estimate_operator_norm, ConstraintSet, DiagonalMetric, NodalCap, NormEstimate,
    PowerIterationConfig, SpaceError,
};

#[derive(Debug, thiserror::Error)]
pub enum BuildError {
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Space(#[from] SpaceError),
}

/// One boundary node seen by the contact potential.
#[derive(Clone, Debug, PartialEq)]
struct ContactNode {
    dofs: [usize; 2],
    weight: f64,
}

fn split(node: &ContactNode, v: &DVector<f64>, nu: [f64; 2], tau: [f64; 2]) -> (f64, f64) {
    let (x, y) = (v[node.dofs[0]], v[node.dofs[1]]);
    (x * nu[0] + y * nu[1], x * tau[0] + y * tau[1])
}

/// `φ(t, η, w, v) = Σ_{Γ₃} ωᵢ F_b(ηᵢ)|v_τ| + Σ_{Γ₄} ωᵢ p(η'ᵢ)(v_ν + μ(|w_τ|)|v_τ|)`
/// with lumped weights `ωᵢ`; `η` holds the slips on Γ₃ followed by the normal
/// displacements on Γ₄.
///
/// The prox is separable per node in the `(ν, τ)` frame: a clip at the gap
/// and a soft threshold on Γ₃, a shift and a soft threshold on Γ₄. It
/// realizes `K` itself, so the constraint argument is not consulted.
#[derive(Clone, Debug)]
pub struct ContactPotential {
    laws: BoundaryLaws,
    unilateral: Vec<ContactNode>,
    compliance: Vec<ContactNode>,
    normal: [f64; 2],
    tangent: [f64; 2],
    /// `‖γ‖`, converting nodal Cauchy–Schwarz bounds into `V` bounds.
    gamma: f64,
}

impl ContactPotential {
    fn slip(&self, eta: &DVector<f64>, i: usize) -> f64 {
        eta.get(i).copied().unwrap_or(0.0)
    }

    fn penetration(&self, eta: &DVector<f64>, i: usize) -> f64 {
        eta.get(self.unilateral.len() + i).copied().unwrap_or(0.0)
    }

    /// Nodal coefficients `(F_b)` on Γ₃ and `(p, μ p)` on Γ₄.
    fn coefficients(&self, eta: &DVector<f64>, w: &DVector<f64>) -> (Vec<f64>, Vec<(f64, f64)>) {
        let fb = (0..self.unilateral.len())
            .map(|i| self.laws.friction_bound_at(self.slip(eta, i)))
            .collect();
        let comp = self
            .compliance
            .iter()
            .enumerate()
            .map(|(i, node)| {
                let p = self.laws.compliance_at(self.penetration(eta, i));
                let (_, wt) = split(node, w, self.normal, self.tangent);
                (p, self.laws.friction_coefficient_at(wt.abs()) * p)
            })
            .collect();
        (fb, comp)
    }
}

impl ConvexPotential for ContactPotential {
    fn value(&self, _t: f64, eta: &DVector<f64>, w: &DVector<f64>, v: &DVector<f64>) -> f64 {
        let (fb, comp) = self.coefficients(eta, w);
        let mut s = 0.0;
        for (node, f) in self.unilateral.iter().zip(&fb) {
            let (_, vt) = split(node, v, self.normal, self.tangent);
            s += node.weight * f * vt.abs();
        }
        for (node, (p, mp)) in self.compliance.iter().zip(&comp) {
            let (vn, vt) = split(node, v, self.normal, self.tangent);
            s += node.weight * (p * vn + mp * vt.abs());
        }
        s
    }

    fn prox(
        &self,
        _t: f64,
        eta: &DVector<f64>,
        w: &DVector<f64>,
        x: &DVector<f64>,
        rho: f64,
        _k: &ConstraintSet,
    ) -> DVector<f64> {
        let (fb, comp) = self.coefficients(eta, w);
        let mut y = x.clone();
        let (nu, tau) = (self.normal, self.tangent);
        let mut put = |node: &ContactNode, yn: f64, yt: f64| {
            y[node.dofs[0]] = yn * nu[0] + yt * tau[0];
            y[node.dofs[1]] = yn * nu[1] + yt * tau[1];
        };
        for (node, f) in self.unilateral.iter().zip(&fb) {
            let (xn, xt) = split(node, x, nu, tau);
            put(node, xn.min(self.laws.gap), soft_threshold(xt, rho * node.weight * f));
        }
        for (node, (p, mp)) in self.compliance.iter().zip(&comp) {
            let (xn, xt) = split(node, x, nu, tau);
            put(node, xn - rho * node.weight * p, soft_threshold(xt, rho * node.weight * mp));
        }
        y
    }

    fn lipschitz_bound(&self, _t: f64, eta: &DVector<f64>, w: &DVector<f64>) -> f64 {
        // |φ(v₁) − φ(v₂)| ≤ Σ ωᵢ cᵢ |Δvᵢ| ≤ (Σ ωᵢ cᵢ²)^{1/2} ‖γ‖ ‖Δv‖
        let (fb, comp) = self.coefficients(eta, w);
        let mut s = 0.0;
        for (node, f) in self.unilateral.iter().zip(&fb) {
            s += node.weight * f * f;
        }
        for (node, (p, mp)) in self.compliance.iter().zip(&comp) {
            s += node.weight * (p * p + mp * mp);
        }
        s.sqrt() * self.gamma
    }

    fn is_quasi(&self) -> bool {
        self.laws.friction_coefficient > 0.0 && self.laws.compliance_max > 0.0
    }
}

/// Both sides of `k* m_jν ‖γ‖⁴ + p* L_μ ‖γ‖² < m_𝒜`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContactSmallness {
    pub lhs: f64,
    pub rhs: f64,
    pub safety_factor: f64,
    /// `1 − lhs / rhs`.
    pub relative_margin: f64,
    pub pass: bool,
}

pub fn contact_smallness(laws: &BoundaryLaws, m_visc: f64, gamma: f64, safety_factor: f64) -> ContactSmallness {
    let m_jnu = laws.normal_potential().relaxed_constant();
    let lhs = laws.damper_max * m_jnu * gamma.powi(4)
        + laws.compliance_max * laws.friction_coefficient_lipschitz() * gamma * gamma;
    ContactSmallness {
        lhs,
        rhs: m_visc,
        safety_factor,
        relative_margin: 1.0 - lhs / m_visc,
        pass: safety_factor * lhs < m_visc,
    }
}

/// The abstract instance together with the pieces used to interpret it.
pub struct ContactProblem {
    pub scenario: ContactScenario,
    pub spaces: AssembledSpaces,
    pub problem: AbstractProblem,
    pub gamma: NormEstimate,
    pub m_norm: NormEstimate,
    pub smallness: ContactSmallness,
    /// `εᵀ W C_𝒜 ε`.
    pub stiffness: DMatrix<f64>,
    /// Maps DoFs to per-element elastic stress `ℬε`.
    pub elastic_stress: DMatrix<f64>,
    /// Tangential trace on Γ₃ and normal trace on Γ₄.
    pub unilateral_tangent: DMatrix<f64>,
    pub compliance_normal: DMatrix<f64>,
}

fn directional_rows(spaces: &AssembledSpaces, nodes: &[usize], d: [f64; 2]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(nodes.len(), spaces.dofs.dim());
    for (r, &n) in nodes.iter().enumerate() {
        for (c, &dc) in d.iter().enumerate() {
            if let Some(i) = spaces.dofs.dof(n, c) {
                m[(r, i)] = dc;
            }
        }
    }
    m
}

fn contact_nodes(spaces: &AssembledSpaces, nodes: &[usize], weights: &DVector<f64>) -> Vec<ContactNode> {
    nodes
        .iter()
        .zip(weights.iter())
        .map(|(&n, &weight)| ContactNode {
            dofs: [
                spaces.dofs.dof(n, 0).expect("contact nodes are free"),
                spaces.dofs.dof(n, 1).expect("contact nodes are free"),
            ],
            weight,
        })
        .collect()
}

/// Typical velocity magnitude: the largest free viscous response to the
/// sampled loads, or the gap when there is no load.
fn velocity_scale(stiffness: &DMatrix<f64>, scn: &ContactScenario, spaces: &AssembledSpaces) -> f64 {
    let loads = scn.load_series(&spaces.dofs);
    let chol = stiffness.clone().cholesky().expect("viscous stiffness is SPD");
    let samples: Vec<DVector<f64>> = match &loads {
        crate::problem::LoadSeries::Constant(v) => vec![v.clone()],
        crate::problem::LoadSeries::PiecewiseLinear { values, .. } => values.clone(),
    };
    let s = samples.iter().map(|f| chol.solve(f).amax()).fold(0.0, f64::max);
    if s > 0.0 {
        s
    } else {
        scn.spec.laws.gap
    }
}

pub fn build_abstract(scn: &ContactScenario) -> Result<ContactProblem, BuildError> {
    let spaces = assemble_spaces(&scn.mesh)?;
    let mat = &scn.spec.material;
    let laws = &scn.spec.laws;
    let ne = spaces.elements();
    let n = spaces.dofs.dim();

    let stiffness = spaces.stiffness(&isotropic_block(2.0 * mat.theta1, mat.theta2, ne));
    let elastic_stress = isotropic_block(2.0 * mat.lame_mu, mat.lame_lambda, ne) * &spaces.strain;
    let op_a = LinearOperatorA {
        stiffness: stiffness.clone(),
        coupling: Some(spaces.divergence()),
    };
    let forcing = AffineForcing {
        base: scn.load_series(&spaces.dofs),
        coupling: None,
    };

    let cfg = PowerIterationConfig::default();
    let gamma = estimate_operator_norm(&spaces.boundary_trace, &spaces.metric, &cfg)?;
    let m_norm = estimate_operator_norm(&spaces.normal_trace, &spaces.metric, &cfg)?;
    let g = gamma.upper;

    let phi = ContactPotential {
        laws: laws.clone(),
        unilateral: contact_nodes(&spaces, &spaces.unilateral, &spaces.unilateral_weights),
        compliance: contact_nodes(&spaces, &spaces.compliance, &spaces.compliance_weights),
        normal: spaces.normal,
        tangent: spaces.tangent,
        gamma: g,
    };
    let x_metric = DiagonalMetric::new(spaces.unilateral_weights.clone())?;
    let j = NodalPrototype {
        weights: x_metric.clone(),
        modulation: laws.damper(),
        g: Box::new(laws.normal_potential()),
    };

    let caps = phi
        .unilateral
        .iter()
        .map(|node| NodalCap {
            dofs: node.dofs.to_vec(),
            direction: spaces.normal.to_vec(),
            bound: laws.gap,
        })
        .collect();
    let constraint = ConstraintSet::nodewise(n, caps)?;

    let u0 = scn.initial_displacement(&spaces.dofs);
    let unilateral_tangent = directional_rows(&spaces, &spaces.unilateral, spaces.tangent);
    let compliance_normal = directional_rows(&spaces, &spaces.compliance, spaces.normal);
    let volterra = |instant: DMatrix<f64>, memory: Option<MemoryKernel>| {
        HistoryOperator::Volterra(VolterraOperator {
            instant: Some(instant),
            initial: u0.clone(),
            memory,
        })
    };
    let memory = (mat.kappa > 0.0).then(|| MemoryKernel {
        matrix: elastic_stress.clone(),
        amplitude: mat.kappa,
        relaxation: mat.relaxation_time,
    });
    let history = HistoryBundle {
        r1: volterra(elastic_stress.clone(), memory),
        r2: HistoryOperator::Zero {
            input_dim: n,
            output_dim: spaces.unilateral.len(),
        },
        r3: HistoryOperator::Stack(vec![
            HistoryOperator::Slip(SlipOperator {
                tangential: unilateral_tangent.clone(),
                components: 1,
                initial: u0.clone(),
            }),
            volterra(compliance_normal.clone(), None),
        ]),
        r4: volterra(spaces.normal_trace.matrix().clone(), None),
    };
    let y_weights = DVector::from_iterator(
        spaces.unilateral.len() + spaces.compliance.len(),
        spaces
            .unilateral_weights
            .iter()
            .chain(spaces.compliance_weights.iter())
            .copied(),
    );
    let state = StateSpaces {
        e: spaces.stress_metric.clone(),
        x: x_metric.clone(),
        y: DiagonalMetric::new(y_weights)?,
        z: x_metric,
    };

    let jnu = laws.normal_potential();
    let c_bar = jnu.subgrad_bound().expect("normal damping slope is bounded");
    let m_jnu = jnu.relaxed_constant();
    let horizon = scn.grid.horizon();
    let constants = HypothesisConstants {
        m_a: mat.viscosity_monotonicity(),
        m_a_bar: 1.0,
        a0_max: 0.0,
        a1: 1.0,
        a2: mat.viscosity_bound(),
        l_f: 0.0,
        alpha_phi: laws.compliance_max * laws.friction_coefficient_lipschitz() * g * g,
        beta_phi: (laws.friction_bound_lipschitz()
            + laws.compliance_lipschitz()
            + laws.friction_coefficient * laws.compliance_lipschitz())
            * g,
        c0j_max: laws.damper_max * c_bar * spaces.unilateral_weights.sum().sqrt(),
        c1j: 0.0,
        c2j: 0.0,
        m_j: laws.damper_max * m_jnu * g * g,
        m_1: c_bar * laws.damper_lipschitz() * g,
        c_r: [
            mat.elasticity_bound() * (1.0 + mat.kappa),
            0.0,
            g * (horizon + 1.0),
            g,
        ],
        m_norm: m_norm.upper,
    };
    let smallness = contact_smallness(laws, mat.viscosity_monotonicity(), g, scn.spec.audit.safety_factor);
    let scale = velocity_scale(&stiffness, scn, &spaces);

    let problem = AbstractProblem {
        name: if scn.spec.name.is_empty() {
            "contact".to_string()
        } else {
            scn.spec.name.clone()
        },
        metric: spaces.metric.clone(),
        trace: spaces.normal_trace.clone(),
        constraint,
        op_a: Box::new(op_a),
        forcing: Box::new(forcing),
        phi: Box::new(phi),
        j: Box::new(j),
        history,
        spaces: state,
        constants,
        scale,
        horizon,
    };
    problem.validate()?;
    Ok(ContactProblem {
        scenario: scn.clone(),
        spaces,
        problem,
        gamma,
        m_norm,
        smallness,
        stiffness,
        elastic_stress,
        unilateral_tangent,
        compliance_normal,
    })
}

impl ContactProblem {
    pub fn evolution_config(&self) -> crate::evolution::EvolutionConfig {
        let s = &self.scenario.spec.solver;
        let mut cfg = crate::evolution::EvolutionConfig::new(self.scenario.grid);
        cfg.rule = self.scenario.rule();
        cfg.frozen.inner_tol = s.inner_tol;
        cfg.frozen.outer_tol = s.outer_tol;
        cfg.frozen.max_inner = s.max_inner;
        cfg.frozen.max_outer = s.max_outer;
        cfg.picard_tol = s.picard_tol;
        cfg.max_picard = s.max_picard;
        cfg
    }
}
