//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//! Runs under `cargo test` with a custom harness so the lines always print.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vhi_cli::toy::{ode_study, stability_sweep};
use vhi_core::audit::audit_contact;
use vhi_core::contact::{build_abstract, complementarity_report, ContactProblem, ContactScenario, ScenarioSpec};
use vhi_core::elliptic::{generate_probes, minty_residual, solve_frozen, FrozenData, SolveConfig};
use vhi_core::evolution::{cross_method, picard_global, time_march, uniqueness_probe, EvolutionConfig, EvolutionError};
use vhi_core::history::{TimeGrid, Trajectory};
use vhi_core::instances;
use vhi_core::problem::AbstractProblem;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

const SHIPPED: [&str; 3] = ["demo", "low-load", "zero-load"];

/// Problems whose fixed-point map actually depends on the trajectory.
const HISTORY_COUPLED: [&str; 4] = ["scalar-ode", "coupled-4d", "demo", "low-load"];

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.toml"))
}

fn scenario(name: &str) -> ContactScenario {
    ContactScenario::parse(&fs::read_to_string(scenario_path(name)).unwrap()).unwrap()
}

fn contact(name: &str) -> ContactProblem {
    build_abstract(&scenario(name)).unwrap()
}

fn contact_from(spec: ScenarioSpec) -> ContactProblem {
    build_abstract(&ContactScenario::from_spec(spec).unwrap()).unwrap()
}

fn instance_config(p: &AbstractProblem, steps: usize) -> EvolutionConfig {
    EvolutionConfig::new(TimeGrid::new(p.horizon.max(1e-3), steps).unwrap())
}

// ---- oracles -------------------------------------------------------------

/// Minimiser of a unimodal 1D function by nested uniform grids, ending at
/// spacing 1e-9.
fn grid_argmin(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let (mut lo, mut hi, mut best) = (lo, hi, lo);
    for _ in 0..5 {
        let h = (hi - lo) / 2000.0;
        let mut val = f64::INFINITY;
        for i in 0..=2000 {
            let x = lo + i as f64 * h;
            let v = f(x);
            if v < val {
                val = v;
                best = x;
            }
        }
        lo = best - 2.0 * h;
        hi = best + 2.0 * h;
    }
    best
}

fn damping_primitive(r: f64) -> f64 {
    if r <= 0.0 {
        0.0
    } else if r <= 1.0 {
        r * r
    } else if r <= 2.0 {
        1.0 + 3.0 * (r - 1.0) - 0.5 * (r * r - 1.0)
    } else {
        2.5 + (r - 2.0)
    }
}

fn damping_slope(r: f64) -> f64 {
    if r <= 0.0 {
        0.0
    } else if r <= 1.0 {
        2.0 * r
    } else if r <= 2.0 {
        3.0 - r
    } else {
        1.0
    }
}

/// Solves `s w = f` on the free coordinates with the others fixed.
fn solve_with_fixed(s: &DMatrix<f64>, f: &DVector<f64>, fixed: &[Option<f64>]) -> DVector<f64> {
    let n = f.len();
    let free: Vec<usize> = (0..n).filter(|&i| fixed[i].is_none()).collect();
    let mut w = DVector::from_fn(n, |i, _| fixed[i].unwrap_or(0.0));
    if !free.is_empty() {
        let k = free.len();
        let sub = DMatrix::from_fn(k, k, |a, c| s[(free[a], free[c])]);
        let rhs = DVector::from_fn(k, |a, _| f[free[a]] - (0..n).filter(|j| fixed[*j].is_some()).map(|j| s[(free[a], j)] * w[j]).sum::<f64>());
        let x = sub.lu().solve(&rhs).unwrap();
        for (a, &i) in free.iter().enumerate() {
            w[i] = x[a];
        }
    }
    w
}

fn box_oracle() -> DVector<f64> {
    let (s, f, b) = instances::box_2d_data();
    (0..4u32)
        .map(|mask| {
            let fixed: Vec<Option<f64>> = (0..2).map(|i| (mask & (1 << i) != 0).then_some(b[i])).collect();
            (solve_with_fixed(&s, &f, &fixed), fixed)
        })
        .find(|(w, fixed)| {
            let g = &s * w - &f;
            (0..2).all(|i| if fixed[i].is_some() { g[i] <= 1e-12 } else { w[i] <= b[i] + 1e-12 })
        })
        .unwrap()
        .0
}

fn lasso_oracle() -> DVector<f64> {
    let (s, f, c) = instances::lasso_2d_data();
    (0..9)
        .map(|code| {
            let sg = [(code % 3) as f64 - 1.0, (code / 3) as f64 - 1.0];
            let fixed: Vec<Option<f64>> = sg.iter().map(|&x| (x == 0.0).then_some(0.0)).collect();
            let shifted = DVector::from_fn(2, |i, _| f[i] - c[i] * sg[i]);
            (solve_with_fixed(&s, &shifted, &fixed), sg)
        })
        .find(|(w, sg)| {
            let g = &s * w - &f;
            (0..2).all(|i| if sg[i] == 0.0 { g[i].abs() <= c[i] + 1e-12 } else { w[i] * sg[i] > 0.0 })
        })
        .unwrap()
        .0
}

fn damped_3d_oracle() -> DVector<f64> {
    let (s, f, cap) = instances::damped_3d_data();
    // the damping slope on the first coordinate is affine on each piece
    let pieces = [(f64::NEG_INFINITY, 0.0, 0.0, 0.0), (0.0, 1.0, 2.0, 0.0), (1.0, 2.0, -1.0, 3.0), (2.0, f64::INFINITY, 0.0, 1.0)];
    for &(lo, hi, a, b) in &pieces {
        for active in [false, true] {
            let mut m = s.clone();
            m[(0, 0)] += a;
            let mut rhs = f.clone();
            rhs[0] -= b;
            let w = solve_with_fixed(&m, &rhs, &[None, active.then_some(cap), None]);
            let mut g = &s * &w - &f;
            g[0] += damping_slope(w[0]);
            let kkt = if active { g[1] <= 1e-12 } else { w[1] <= cap + 1e-12 };
            if w[0] >= lo - 1e-12 && w[0] <= hi + 1e-12 && kkt && g[0].abs() < 1e-10 && g[2].abs() < 1e-10 {
                return w;
            }
        }
    }
    panic!("no piece satisfies the optimality conditions")
}

// ---- criteria ------------------------------------------------------------

fn frozen_oracles() -> Outcome {
    let mut cases: Vec<(String, AbstractProblem, DVector<f64>)> = vec![
        ("scalar-basic".into(), instances::scalar_basic(), DVector::from_element(1, 0.5)),
        ("scalar-constrained".into(), instances::scalar_constrained(), DVector::from_element(1, 10.0)),
    ];
    for f in [0.5, 2.0, -1.7] {
        let w = grid_argmin(|w| 0.5 * w * w - f * w + w.abs(), -5.0, 5.0);
        cases.push((format!("scalar-soft({f})"), instances::scalar_soft(f), DVector::from_element(1, w)));
    }
    let w = grid_argmin(|w| 0.5 * w * w - 0.7 * w, -5.0, 5.0);
    cases.push(("scalar-nonconvex".into(), instances::scalar_nonconvex(0.7), DVector::from_element(1, w)));
    for f in [3.0, 5.5, -1.0, 7.0] {
        let w = grid_argmin(|w| w * w + damping_primitive(w) - f * w, -5.0, 5.0);
        cases.push((format!("scalar-damped({f})"), instances::scalar_damped(f), DVector::from_element(1, w)));
    }
    cases.push(("box-2d".into(), instances::box_2d(), box_oracle()));
    cases.push(("lasso-2d".into(), instances::lasso_2d(), lasso_oracle()));
    cases.push(("damped-3d".into(), instances::damped_3d(), damped_3d_oracle()));

    let cfg = SolveConfig::default();
    let mut elapsed = Duration::ZERO;
    let mut worst: (f64, String) = (0.0, String::new());
    for (name, p, oracle) in &cases {
        let d = FrozenData::zeros(p, 0.0);
        let start = Instant::now();
        let w = solve_frozen(p, &d, &cfg, None).unwrap().w;
        elapsed += start.elapsed();
        let err = (w - oracle).amax();
        if err >= worst.0 {
            worst = (err, name.clone());
        }
    }
    let pass = cases.len() >= 10 && worst.0 <= 1e-6 && elapsed < Duration::from_secs(1);
    outcome(
        pass,
        format!("{} instances, worst error {:.1e} ({}), solve time {:.3}s (limits 1e-6, 1s)", cases.len(), worst.0, worst.1, elapsed.as_secs_f64()),
    )
}

fn minty_certificates() -> Outcome {
    let cfg = SolveConfig::default();
    let floor = -100.0 * cfg.inner_tol;
    let mut worst = f64::INFINITY;
    let mut undetected = Vec::new();
    for name in instances::NAMES {
        let p = instances::by_name(name).unwrap();
        let d = FrozenData::zeros(&p, 0.0);
        let w = solve_frozen(&p, &d, &cfg, None).unwrap().w;
        let probes = generate_probes(&p, &w, 200, 0);
        worst = worst.min(minty_residual(&p, &d, &w, &probes).unwrap().min_value);

        // halfway to the farthest feasible probe is feasible and not a solution
        let far = probes.iter().max_by(|a, b| (*a - &w).norm().total_cmp(&(*b - &w).norm())).unwrap();
        let wrong = &w + (far - &w) * 0.5;
        let mut test = generate_probes(&p, &wrong, 200, 1);
        test.extend((1..=20).map(|k| &wrong + (&w - &wrong) * (k as f64 / 20.0)));
        if minty_residual(&p, &d, &wrong, &test).unwrap().min_value >= 0.0 {
            undetected.push(*name);
        }
    }
    outcome(
        worst >= floor && undetected.is_empty(),
        format!("min over {} instances × 200 probes {worst:.1e} (floor {floor:.0e}); perturbed points not rejected: {undetected:?}", instances::NAMES.len()),
    )
}

fn uniqueness() -> Outcome {
    let cp = contact("demo");
    let cfg = cp.evolution_config();
    let dim = cp.problem.dim();
    let scale = cp.problem.scale.max(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let inits: Vec<Trajectory> = (0..5)
        .map(|_| Trajectory::from_fn(cfg.grid, |_| DVector::from_fn(dim, |_, _| scale * rng.random_range(-1.0..1.0))))
        .collect();
    let start = Instant::now();
    let rep = uniqueness_probe(&cp.problem, &cfg, &inits).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let tol = 100.0 * cfg.picard_tol;
    let mesh = &cp.scenario.spec.mesh;
    outcome(
        rep.max_distance <= tol && secs < 60.0,
        format!(
            "{}×{} mesh, {} steps: max pairwise distance {:.1e} (limit {tol:.0e}) in {secs:.1}s",
            mesh.nx,
            mesh.ny,
            cfg.grid.steps(),
            rep.max_distance
        ),
    )
}

/// The last three contraction ratios. A problem without history coupling
/// has a constant fixed-point map and stops after two sweeps, so fewer
/// ratios exist; then every available one is returned.
fn final_ratios(p: &AbstractProblem, cfg: &EvolutionConfig) -> Result<Vec<f64>, String> {
    let run = picard_global(p, cfg, &Trajectory::zeros(cfg.grid, p.dim())).map_err(|e| e.to_string())?;
    let ratios = run.contraction_ratios();
    Ok(ratios[ratios.len().saturating_sub(3)..].to_vec())
}

fn contraction() -> Outcome {
    let mut problems: Vec<(String, AbstractProblem, EvolutionConfig)> = Vec::new();
    for name in instances::NAMES {
        let p = instances::by_name(name).unwrap();
        let cfg = instance_config(&p, 20);
        problems.push((name.to_string(), p, cfg));
    }
    for name in SHIPPED {
        let cp = contact(name);
        let cfg = cp.evolution_config();
        problems.push((name.to_string(), cp.problem, cfg));
    }
    let mut worst: f64 = 0.0;
    let mut short = Vec::new();
    let mut failures = Vec::new();
    for (name, p, cfg) in &problems {
        match final_ratios(p, cfg) {
            Ok(r) => {
                if r.len() < 3 {
                    if HISTORY_COUPLED.contains(&name.as_str()) {
                        failures.push(format!("{name}: only {} ratios", r.len()));
                    }
                    short.push(format!("{name} {}", r.len()));
                }
                let m = r.iter().cloned().fold(0.0, f64::max);
                worst = worst.max(m);
                if m >= 0.95 {
                    failures.push(format!("{name}: {r:?}"));
                }
            }
            Err(e) => failures.push(format!("{name}: {e}")),
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "{} problems, worst final ratio {worst:.3} (limit 0.95); settled in fewer than 3 ratios: [{}]; failures: {failures:?}",
            problems.len(),
            short.join(", ")
        ),
    )
}

fn stability() -> Outcome {
    let p = instances::coupled_4d();
    let cfg = instance_config(&p, 10);
    let s = stability_sweep(&p, &cfg, 50, 17).unwrap();
    outcome(
        s.failures == 0 && s.perturbations == 50,
        format!("dim {}: {} perturbations, {} failures, worst lhs/rhs {:.3}", p.dim(), s.perturbations, s.failures, s.worst_ratio),
    )
}

fn ode_refinement() -> Outcome {
    let o = ode_study(&[50, 100, 200, 400]).unwrap();
    let pass = o.ratios.len() == 3 && o.ratios.iter().all(|r| (1.7..=2.3).contains(r));
    outcome(pass, format!("steps {:?}, error ratios {:.3?} (band [1.7, 2.3])", o.steps, o.ratios))
}

fn cross_methods() -> Outcome {
    let mut worst: (f64, String) = (0.0, String::new());
    let mut failures = Vec::new();
    let mut check = |name: &str, p: &AbstractProblem, cfg: &EvolutionConfig| match cross_method(p, cfg) {
        Ok(r) => {
            let rel = r.distance / (10.0 * cfg.picard_tol);
            if rel >= worst.0 {
                worst = (rel, name.to_string());
            }
            if rel > 1.0 {
                failures.push(format!("{name}: {:.1e}", r.distance));
            }
        }
        Err(e) => failures.push(format!("{name}: {e}")),
    };
    for name in instances::NAMES {
        let p = instances::by_name(name).unwrap();
        check(name, &p, &instance_config(&p, 20));
    }
    for name in SHIPPED {
        let cp = contact(name);
        check(name, &cp.problem, &cp.evolution_config());
    }
    outcome(
        failures.is_empty(),
        format!(
            "{} problems, worst distance {:.2} × 10·picard_tol ({}); failures: {failures:?}",
            instances::NAMES.len() + SHIPPED.len(),
            worst.0,
            worst.1
        ),
    )
}

fn audits() -> Outcome {
    let mut details = Vec::new();
    let mut pass = true;
    for name in SHIPPED {
        let cp = contact(name);
        let spec = &cp.scenario.spec.audit;
        let rep = audit_contact(&cp, spec.samples, spec.seed).unwrap();
        let margin = rep.contact_smallness.as_ref().map_or(f64::NAN, |c| c.relative_margin);
        pass &= rep.gates_pass() && margin >= 0.2;
        details.push(format!("{name} margin {:.0}%", 100.0 * margin));
    }

    let mut spec = scenario("demo").spec;
    spec.laws.friction_coefficient *= 100.0;
    let cp = contact_from(spec);
    let rep = audit_contact(&cp, 100, 0).unwrap();
    let tripped = !rep.gates_pass();
    let refused = matches!(time_march(&cp.problem, &cp.evolution_config()), Err(EvolutionError::Refused { .. }));

    // the command line refuses too and writes no solution
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(scenario_path("demo")).unwrap();
    let bad = dir.path().join("inflated.toml");
    fs::write(&bad, text.replace("friction_coefficient = 0.3", "friction_coefficient = 30.0")).unwrap();
    let out = dir.path().join("out");
    let code = run_cli(&["simulate", "--scenario", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let wrote_solution = out.join("trajectory-march.csv").exists() || out.join("trajectory-picard.csv").exists();

    pass &= tripped && refused && code == 1 && !wrote_solution;
    outcome(
        pass,
        format!("{}; μ₀×100: gate tripped {tripped}, solver refused {refused}, simulate exit {code}", details.join(", ")),
    )
}

fn complementarity() -> Outcome {
    let cp = contact("demo");
    let cfg = cp.evolution_config();
    let run = time_march(&cp.problem, &cfg).unwrap();
    let rep = complementarity_report(&cp, &run, &cfg).unwrap();
    let scale = rep.load_scale;
    let mut violations = Vec::new();
    for tol in [1e-4, 1e-6, 1e-8] {
        let mut c = cp.evolution_config();
        c.frozen.inner_tol = tol;
        c.frozen.outer_tol = tol;
        let r = time_march(&cp.problem, &c).unwrap();
        violations.push(complementarity_report(&cp, &r, &c).unwrap().unilateral_violation());
    }
    let monotone = violations.windows(2).all(|w| w[1] <= w[0]);
    outcome(
        rep.max_product <= 1e-6 * scale && rep.max_feasibility <= 1e-8 && monotone && rep.active_nodes > 0,
        format!(
            "max product {:.1e} (limit {:.1e}), max u'_ν − g {:.1e}, {} active records, violation by tolerance {:?}",
            rep.max_product,
            1e-6 * scale,
            rep.max_feasibility,
            rep.active_nodes,
            violations
        ),
    )
}

fn friction_cone() -> Outcome {
    let cp = contact("demo");
    let cfg = cp.evolution_config();
    let run = time_march(&cp.problem, &cfg).unwrap();
    let rep = complementarity_report(&cp, &run, &cfg).unwrap();
    let floor = -1e-6 * rep.load_scale;
    outcome(
        rep.min_cone_slack >= floor && rep.max_angle <= 1e-3 && rep.sliding_nodes > 0,
        format!(
            "min cone slack {:.1e} (floor {floor:.1e}), {} sliding records, max angle {:.1e} rad (limit 1e-3)",
            rep.min_cone_slack, rep.sliding_nodes, rep.max_angle
        ),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let scn = scenario_path("demo");
    let mut outputs = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("run{k}"));
        let code = run_cli(&["simulate", "--scenario", scn.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(code, 0);
        outputs.push(out);
    }
    let mut csvs: Vec<String> = fs::read_dir(&outputs[0])
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    csvs.sort();
    let differing: Vec<&String> = csvs
        .iter()
        .filter(|n| fs::read(outputs[0].join(n)).unwrap() != fs::read(outputs[1].join(n)).unwrap())
        .collect();
    outcome(
        csvs.len() >= 5 && differing.is_empty(),
        format!("{} CSV files compared, differing: {differing:?}", csvs.len()),
    )
}

fn run_cli(args: &[&str]) -> i32 {
    let mut out = Vec::new();
    let mut err = Vec::new();
    vhi_cli::run(std::iter::once("vhi").chain(args.iter().copied()), &mut out, &mut err)
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 11] = [
        ("frozen solves match oracles", frozen_oracles),
        ("Minty certificates", minty_certificates),
        ("uniqueness from random starts", uniqueness),
        ("fixed-point contraction", contraction),
        ("stability estimate", stability),
        ("closed-form evolution refinement", ode_refinement),
        ("marching agrees with fixed point", cross_methods),
        ("hypothesis audits and gate", audits),
        ("unilateral complementarity", complementarity),
        ("friction cone", friction_cone),
        ("deterministic outputs", determinism),
    ];
    let mut passed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        passed += usize::from(o.pass);
        println!(
            "{} {:>2} {name}: {} [{:.2}s]",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {passed}/{} criteria pass", criteria.len());
    if passed < criteria.len() {
        std::process::exit(1);
    }
}
