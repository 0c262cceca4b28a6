//! Small abstract instances: frozen solves with Minty certificates, the
//! stability estimate under random history perturbations, and the
//! closed-form evolution instance under grid refinement.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use vhi_core::elliptic::{generate_probes, minty_residual, solve_frozen, FrozenData, SolveConfig};
use vhi_core::evolution::{frozen_at, stability_ratio, time_march, EvolutionConfig};
use vhi_core::history::{QuadratureRule, TimeGrid, Trajectory};
use vhi_core::instances;
use vhi_core::problem::AbstractProblem;
use vhi_core::spaces::EnergyMetric;

use crate::CliError;

pub const MINTY_PROBES: usize = 200;
pub const ODE_STEPS: [usize; 4] = [50, 100, 200, 400];

#[derive(Clone, Debug, Serialize)]
pub struct StabilitySweep {
    pub perturbations: usize,
    pub failures: usize,
    pub worst_ratio: f64,
}

/// Solves the history-frozen problem along the marched trajectory and along
/// `count` random perturbations of its history states, each of uniform size
/// in `[0.01, 2]`, and checks the stability estimate for every one.
pub fn stability_sweep(p: &AbstractProblem, cfg: &EvolutionConfig, count: usize, seed: u64) -> Result<StabilitySweep, CliError> {
    let num = |e: vhi_core::evolution::EvolutionError| CliError::Numerical(e.to_string());
    let traj = time_march(p, cfg).map_err(num)?.trajectory;
    let base: Vec<FrozenData> = (0..cfg.grid.len())
        .map(|n| frozen_at(p, &traj, n, cfg.rule))
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let size = rng.random_range(0.01..2.0);
        let perturbed: Vec<FrozenData> = base
            .iter()
            .map(|b| {
                let mut d = b.clone();
                for v in [&mut d.lambda, &mut d.xi, &mut d.eta, &mut d.zeta] {
                    for x in v.iter_mut() {
                        *x += size * rng.random_range(-1.0..1.0);
                    }
                }
                d
            })
            .collect();
        let rep = stability_ratio(p, cfg, &base, &perturbed).map_err(num)?;
        failures += usize::from(!rep.pass);
        worst = worst.max(rep.ratio);
    }
    Ok(StabilitySweep {
        perturbations: count,
        failures,
        worst_ratio: worst,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct OdeStudy {
    pub steps: Vec<usize>,
    pub errors: Vec<f64>,
    pub ratios: Vec<f64>,
}

/// Discrete `L²(0,1)` error of the marched `w(t) + ∫₀ᵗ w = 1` against
/// `e^{−t}`, per grid.
pub fn ode_study(steps: &[usize]) -> Result<OdeStudy, CliError> {
    let p = instances::scalar_ode();
    let mut errors = Vec::new();
    for &n in steps {
        let grid = TimeGrid::new(1.0, n).map_err(|e| CliError::Usage(e.to_string()))?;
        let cfg = EvolutionConfig::new(grid);
        let run = time_march(&p, &cfg).map_err(|e| CliError::Numerical(e.to_string()))?;
        let exact = Trajectory::from_fn(grid, |t| DVector::from_element(1, (-t).exp()));
        let e = run
            .trajectory
            .l2_distance(&exact, QuadratureRule::Trapezoid, &EnergyMetric::identity(1))
            .map_err(|e| CliError::Numerical(e.to_string()))?;
        errors.push(e);
    }
    let ratios = errors.windows(2).map(|w| w[0] / w[1]).collect();
    Ok(OdeStudy {
        steps: steps.to_vec(),
        errors,
        ratios,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ToyReport {
    pub instance: String,
    pub solution: Vec<f64>,
    pub residual: f64,
    pub minty_min: f64,
    pub minty_probes: usize,
    pub stability: StabilitySweep,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ode: Option<OdeStudy>,
}

pub fn run_toy(name: &str, seed: u64, tol: Option<f64>) -> Result<ToyReport, CliError> {
    let p = instances::by_name(name).ok_or_else(|| {
        CliError::Usage(format!("unknown instance {name:?}; available: {}", instances::NAMES.join(", ")))
    })?;
    let mut frozen = SolveConfig::default();
    if let Some(t) = tol {
        frozen.inner_tol = t;
        frozen.outer_tol = t;
    }
    let d = FrozenData::zeros(&p, 0.0);
    let sol = solve_frozen(&p, &d, &frozen, None).map_err(|e| CliError::Numerical(e.to_string()))?;
    let probes = generate_probes(&p, &sol.w, MINTY_PROBES, seed);
    let minty = minty_residual(&p, &d, &sol.w, &probes).map_err(|e| CliError::Numerical(e.to_string()))?;
    let mut cfg = EvolutionConfig::new(TimeGrid::new(p.horizon.max(1e-3), 10).expect("positive horizon"));
    cfg.frozen = frozen;
    let stability = stability_sweep(&p, &cfg, 10, seed)?;
    let ode = if name == "scalar-ode" { Some(ode_study(&ODE_STEPS)?) } else { None };
    Ok(ToyReport {
        instance: name.into(),
        solution: sol.w.as_slice().to_vec(),
        residual: sol.residual,
        minty_min: minty.min_value,
        minty_probes: minty.probes,
        stability,
        ode,
    })
}
