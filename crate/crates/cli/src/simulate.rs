//! `audit` and `simulate` on contact scenarios.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use vhi_core::audit::{audit_contact, AuditReport};
use vhi_core::contact::{build_abstract, complementarity_report, ComplementarityReport, ContactProblem, ContactScenario, ScenarioError};
use vhi_core::evolution::{picard_global, time_march, EvolutionConfig, EvolutionReport};
use vhi_core::history::{QuadratureRule, Trajectory};

use crate::manifest::{sha256_hex, Overrides, RunManifest};
use crate::output::{audit_table, contact_table, num, trajectory_table, Table, REFINEMENT_SCHEMA};
use crate::{CliError, Mode};

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub scenario: PathBuf,
    pub mode: Mode,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub halve_dt: u32,
    pub tol: Option<f64>,
    pub audit_only: bool,
}

/// Reads and parses a scenario; every failure is an input error.
pub fn load_scenario(path: &Path) -> Result<(ContactScenario, String), CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let scn = ContactScenario::parse(&text).map_err(|e| match e {
        ScenarioError::Parse { line, column, message } => CliError::Parse {
            path: path.to_path_buf(),
            line,
            column,
            message,
        },
        other => CliError::Usage(format!("{}: {other}", path.display())),
    })?;
    Ok((scn, sha256_hex(text.as_bytes())))
}

fn with_overrides(scn: ContactScenario, tol: Option<f64>, steps_factor: usize) -> Result<ContactScenario, CliError> {
    let mut spec = scn.spec;
    if let Some(t) = tol {
        if !(t > 0.0 && t.is_finite()) {
            return Err(CliError::Usage(format!("--tol must be positive, got {t}")));
        }
        spec.solver.inner_tol = t;
        spec.solver.outer_tol = t;
        spec.solver.picard_tol = t;
    }
    spec.time.steps *= steps_factor;
    ContactScenario::from_spec(spec).map_err(|e| CliError::Usage(e.to_string()))
}

fn build(scn: &ContactScenario) -> Result<ContactProblem, CliError> {
    build_abstract(scn).map_err(|e| CliError::Numerical(e.to_string()))
}

#[derive(Serialize)]
struct Summary {
    scenario: String,
    mode: String,
    steps: usize,
    horizon: f64,
    dofs: usize,
    seed: u64,
    gates: Gates,
    #[serde(skip_serializing_if = "Option::is_none")]
    march: Option<MethodSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    picard: Option<MethodSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cross_method: Option<CrossSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    refinement: Option<RefinementSummary>,
}

#[derive(Serialize)]
struct Gates {
    audit_pass: bool,
    smallness_margin: f64,
    contact_relative_margin: f64,
}

#[derive(Serialize)]
struct MethodSummary {
    sweeps: usize,
    inner_iterations: usize,
    max_residual: f64,
    picard_history: Vec<f64>,
    contraction_ratios: Vec<f64>,
    max_feasibility: f64,
    max_sign: f64,
    max_product: f64,
    max_compliance_residual: f64,
    min_cone_slack: f64,
    max_angle: f64,
    active_nodes: usize,
    sliding_nodes: usize,
    load_scale: f64,
}

#[derive(Serialize)]
struct CrossSummary {
    distance: f64,
    max_distance: f64,
    tolerance: f64,
    pass: bool,
}

#[derive(Serialize)]
struct RefinementSummary {
    steps: Vec<usize>,
    errors: Vec<f64>,
    monotone: bool,
}

fn method_summary(run: &EvolutionReport, rep: &ComplementarityReport) -> MethodSummary {
    MethodSummary {
        sweeps: run.sweeps,
        inner_iterations: run.total_inner_iterations(),
        max_residual: run.max_residual(),
        picard_history: run.picard_history.clone(),
        contraction_ratios: run.contraction_ratios(),
        max_feasibility: rep.max_feasibility,
        max_sign: rep.max_sign,
        max_product: rep.max_product,
        max_compliance_residual: rep.max_compliance_residual,
        min_cone_slack: rep.min_cone_slack,
        max_angle: rep.max_angle,
        active_nodes: rep.active_nodes,
        sliding_nodes: rep.sliding_nodes,
        load_scale: rep.load_scale,
    }
}

fn solve(cp: &ContactProblem, cfg: &EvolutionConfig, picard: bool) -> Result<EvolutionReport, CliError> {
    let p = &cp.problem;
    let run = if picard {
        picard_global(p, cfg, &Trajectory::zeros(cfg.grid, p.dim()))
    } else {
        time_march(p, cfg)
    };
    run.map_err(|e| CliError::Numerical(format!("{} solver: {e}", if picard { "picard" } else { "march" })))
}

/// `L²(0,T;V)` error of each level against the finest, sampled on the
/// coarse level's nodes.
pub fn refinement_errors(finest: &Trajectory, levels: &[Trajectory], cp: &ContactProblem) -> Vec<f64> {
    let fine_steps = finest.grid().steps();
    levels
        .iter()
        .map(|coarse| {
            let stride = fine_steps / coarse.grid().steps();
            let sq: Vec<f64> = (0..coarse.grid().len())
                .map(|n| {
                    let d = coarse.sample(n) - finest.sample(n * stride);
                    cp.problem.metric.inner(&d, &d)
                })
                .collect();
            QuadratureRule::Trapezoid.integrate(&sq, coarse.grid().dt()).sqrt()
        })
        .collect()
}

pub fn write_audit(dir: &Path, report: &AuditReport, files: &mut Vec<String>) -> Result<(), CliError> {
    fs::write(dir.join("audit.toml"), report.to_toml()).map_err(|e| CliError::io(dir, e))?;
    files.push("audit.toml".into());
    files.push(audit_table(report).save(dir, "audit.csv")?);
    Ok(())
}

/// The shared body of `audit` and `simulate`. Writes the manifest first,
/// then the audit, then (unless audit-only) the solutions.
pub fn run(opts: &RunOptions, command: &str) -> Result<RunManifest, CliError> {
    let (scn, sha) = load_scenario(&opts.scenario)?;
    let seed = opts.seed.unwrap_or(scn.spec.audit.seed);
    fs::create_dir_all(&opts.out).map_err(|e| CliError::io(&opts.out, e))?;
    let mut manifest = RunManifest {
        command: command.into(),
        scenario: Some(opts.scenario.clone()),
        scenario_sha256: Some(sha),
        instance: None,
        overrides: Overrides {
            mode: Some(opts.mode.name().into()),
            halve_dt: opts.halve_dt,
            tol: opts.tol,
            audit_only: opts.audit_only,
        },
        seed,
        out: opts.out.clone(),
        artifacts: Default::default(),
    };
    manifest.write(&opts.out)?;

    let scn = with_overrides(scn, opts.tol, 1)?;
    let cp = build(&scn)?;
    let audit = audit_contact(&cp, scn.spec.audit.samples, seed).map_err(|e| CliError::Numerical(e.to_string()))?;
    let mut files = Vec::new();
    write_audit(&opts.out, &audit, &mut files)?;
    if !audit.gates_pass() {
        manifest.record(&opts.out, &files)?;
        manifest.write(&opts.out)?;
        let mut failed: Vec<String> = audit.failed().map(|e| e.name.clone()).collect();
        if !audit.smallness.pass {
            failed.push(format!("smallness margin {:e}", audit.smallness.margin));
        }
        if let Some(c) = audit.contact_smallness.as_ref().filter(|c| !c.pass) {
            failed.push(format!("contact smallness (lhs {:e} vs rhs {:e})", c.safety_factor * c.lhs, c.rhs));
        }
        return Err(CliError::Gate(failed.join(", ")));
    }
    if opts.audit_only {
        manifest.record(&opts.out, &files)?;
        manifest.write(&opts.out)?;
        return Ok(manifest);
    }

    let cfg = cp.evolution_config();
    let mut summary = Summary {
        scenario: scn.spec.name.clone(),
        mode: opts.mode.name().into(),
        steps: scn.grid.steps(),
        horizon: scn.grid.horizon(),
        dofs: cp.problem.dim(),
        seed,
        gates: Gates {
            audit_pass: true,
            smallness_margin: cp.problem.margin(),
            contact_relative_margin: cp.smallness.relative_margin,
        },
        march: None,
        picard: None,
        cross_method: None,
        refinement: None,
    };
    let mut trajectories = Vec::new();
    for (picard, label) in [(false, "march"), (true, "picard")] {
        let wanted = match opts.mode {
            Mode::March => !picard,
            Mode::Picard => picard,
            Mode::Both => true,
        };
        if !wanted {
            continue;
        }
        let run = solve(&cp, &cfg, picard)?;
        let rep = complementarity_report(&cp, &run, &cfg).map_err(|e| CliError::Numerical(e.to_string()))?;
        files.push(trajectory_table(&cp, &run.trajectory, &rep).save(&opts.out, &format!("trajectory-{label}.csv"))?);
        files.push(contact_table(&rep).save(&opts.out, &format!("contact-{label}.csv"))?);
        let s = Some(method_summary(&run, &rep));
        if picard {
            summary.picard = s;
        } else {
            summary.march = s;
        }
        trajectories.push(run.trajectory);
    }
    if let [a, b] = &trajectories[..] {
        let d = a.l2_distance(b, cfg.rule, &cp.problem.metric).map_err(|e| CliError::Numerical(e.to_string()))?;
        let m = a.max_distance(b, &cp.problem.metric).map_err(|e| CliError::Numerical(e.to_string()))?;
        summary.cross_method = Some(CrossSummary {
            distance: d,
            max_distance: m,
            tolerance: 10.0 * cfg.picard_tol,
            pass: d <= 10.0 * cfg.picard_tol,
        });
    }
    if opts.halve_dt > 0 {
        let mut levels = Vec::new();
        let mut steps = Vec::new();
        for l in 0..=opts.halve_dt {
            let s = with_overrides(scn.clone(), None, 1 << l)?;
            let cpl = build(&s)?;
            let run = solve(&cpl, &cpl.evolution_config(), false)?;
            steps.push(s.grid.steps());
            levels.push(run.trajectory);
        }
        let finest = levels.pop().expect("at least two levels");
        let errors = refinement_errors(&finest, &levels, &cp);
        let mut t = Table::new(REFINEMENT_SCHEMA, &["level", "steps", "dt", "error_vs_finest"]);
        for (l, e) in errors.iter().enumerate() {
            t.row([l.to_string(), steps[l].to_string(), num(scn.grid.horizon() / steps[l] as f64), num(*e)]);
        }
        files.push(t.save(&opts.out, "refinement.csv")?);
        summary.refinement = Some(RefinementSummary {
            monotone: errors.windows(2).all(|w| w[1] < w[0]),
            steps: steps[..errors.len()].to_vec(),
            errors,
        });
    }
    let text = toml::to_string(&summary).map_err(|e| CliError::Io(e.to_string()))?;
    fs::write(opts.out.join("summary.toml"), text).map_err(|e| CliError::io(&opts.out, e))?;
    files.push("summary.toml".into());
    manifest.record(&opts.out, &files)?;
    manifest.write(&opts.out)?;
    Ok(manifest)
}
