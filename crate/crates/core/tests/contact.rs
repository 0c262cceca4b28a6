use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vhi_core::contact::assembly::element_strain;
use vhi_core::contact::laws::scan_laws;
use vhi_core::contact::report::traction_report;
use vhi_core::contact::*;
use vhi_core::evolution::{picard_global, time_march, EvolutionError};
use vhi_core::history::Trajectory;
use vhi_core::spaces::dense_operator_norm;

fn load(name: &str) -> ContactScenario {
    let path = format!("{}/../../scenarios/{name}.toml", env!("CARGO_MANIFEST_DIR"));
    ContactScenario::parse(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn small_mesh(nx: usize, ny: usize) -> RectMesh {
    RectMesh::new(1.0, 0.5, nx, ny, 0.0).unwrap()
}

#[test]
fn rigid_motions_have_zero_strain() {
    let m = small_mesh(2, 1);
    for e in 0..m.triangles.len() {
        let b = element_strain(&m, e);
        let ids = m.triangles[e];
        let fields: [&dyn Fn([f64; 2]) -> [f64; 2]; 2] = [&|_| [0.3, -1.2], &|p| [-p[1], p[0]]];
        for f in fields {
            let local: Vec<f64> = ids.iter().flat_map(|&n| f(m.nodes[n])).collect();
            for row in &b {
                let s: f64 = row.iter().zip(&local).map(|(a, b)| a * b).sum();
                assert!(s.abs() < 1e-13);
            }
        }
    }
}

#[test]
fn stretching_field_has_unit_axial_strain() {
    let m = small_mesh(3, 2);
    let sp = assemble_spaces(&m).unwrap();
    let nodal: Vec<[f64; 2]> = m.nodes.iter().map(|p| [p[0], 0.0]).collect();
    let v = sp.dofs.from_nodal(&nodal);
    for e in sp.strains(&v) {
        assert!((e[0] - 1.0).abs() < 1e-12 && e[1].abs() < 1e-12 && e[2].abs() < 1e-12);
    }
}

/// Gradients of the linear shape functions from the 3×3 interpolation system.
fn oracle_gradients(p: [[f64; 2]; 3]) -> ([[f64; 2]; 3], f64) {
    let a = Matrix3::new(1.0, p[0][0], p[0][1], 1.0, p[1][0], p[1][1], 1.0, p[2][0], p[2][1]);
    let inv = a.try_inverse().unwrap();
    let mut g = [[0.0; 2]; 3];
    for (k, gk) in g.iter_mut().enumerate() {
        let c: Vector3<f64> = inv * Vector3::from_fn(|i, _| if i == k { 1.0 } else { 0.0 });
        *gk = [c[1], c[2]];
    }
    (g, 0.5 * a.determinant().abs())
}

/// `∫ C ε(u) : ε(v)` element by element with the isotropic map `C`, then the
/// clamped rows and columns removed.
fn oracle_stiffness(m: &RectMesh, two_mu: f64, lambda: f64) -> DMatrix<f64> {
    let nn = m.node_count();
    let mut k = DMatrix::zeros(2 * nn, 2 * nn);
    let d = DMatrix::from_row_slice(3, 3, &[two_mu + lambda, lambda, 0.0, lambda, two_mu + lambda, 0.0, 0.0, 0.0, two_mu]);
    let w = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 2.0]));
    for tri in &m.triangles {
        let (g, area) = oracle_gradients(tri.map(|n| m.nodes[n]));
        let mut b = DMatrix::zeros(3, 6);
        for a in 0..3 {
            b[(0, 2 * a)] = g[a][0];
            b[(1, 2 * a + 1)] = g[a][1];
            b[(2, 2 * a)] = 0.5 * g[a][1];
            b[(2, 2 * a + 1)] = 0.5 * g[a][0];
        }
        let ke = b.transpose() * &w * &d * &b * area;
        for a in 0..6 {
            for c in 0..6 {
                k[(2 * tri[a / 2] + a % 2, 2 * tri[c / 2] + c % 2)] += ke[(a, c)];
            }
        }
    }
    let free: Vec<usize> = (0..nn)
        .filter(|&n| m.part(n) != Some(BoundaryPart::Clamped))
        .flat_map(|n| [2 * n, 2 * n + 1])
        .collect();
    DMatrix::from_fn(free.len(), free.len(), |i, j| k[(free[i], free[j])])
}

#[test]
fn gram_matches_elementwise_oracle() {
    let m = small_mesh(2, 2);
    let sp = assemble_spaces(&m).unwrap();
    // the energy Gram is the isotropic map with 2μ = 1, λ = 0
    let oracle = oracle_stiffness(&m, 1.0, 0.0);
    assert_eq!(oracle.shape(), sp.metric.gram().shape());
    assert!((oracle - sp.metric.gram()).amax() < 1e-12);
    assert!(sp.metric.gram().clone().cholesky().is_some());
}

#[test]
fn abstract_operator_matches_hand_assembly() {
    let mut scn = load("demo");
    scn.spec.mesh.nx = 2;
    scn.spec.mesh.ny = 1;
    let scn = ContactScenario::from_spec(scn.spec).unwrap();
    let cp = build_abstract(&scn).unwrap();
    let mat = &scn.spec.material;
    let k = oracle_stiffness(&scn.mesh, 2.0 * mat.theta1, mat.theta2);
    assert!((&k - &cp.stiffness).amax() < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = cp.problem.dim();
    let ne = scn.mesh.triangles.len();
    let v = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let lambda = DVector::from_fn(3 * ne, |_, _| rng.random_range(-1.0..1.0));
    // history enters as ∫ λ : ε(z): Σₑ area (λₓₓ εₓₓ + λᵧᵧ εᵧᵧ + 2 λₓᵧ εₓᵧ)
    let mut expected = &k * &v;
    for i in 0..n {
        let mut z = DVector::zeros(n);
        z[i] = 1.0;
        let ez = cp.spaces.strains(&z);
        for (e, s) in ez.iter().enumerate() {
            let area = scn.mesh.area(e);
            expected[i] += area * (lambda[3 * e] * s[0] + lambda[3 * e + 1] * s[1] + 2.0 * lambda[3 * e + 2] * s[2]);
        }
    }
    let got = cp.problem.op_a.eval(0.3, &lambda, &v);
    assert!((got - expected).amax() < 1e-12);
}

#[test]
fn constants_match_independent_recomputation() {
    let scn = load("demo");
    let cp = build_abstract(&scn).unwrap();
    let sp = &cp.spaces;
    let w = DMatrix::from_diagonal(sp.boundary_trace.target().weights());
    let gamma = dense_operator_norm(sp.boundary_trace.matrix(), sp.metric.gram(), &w);
    assert!((cp.gamma.estimate - gamma).abs() <= 1e-6 * gamma, "{} {gamma}", cp.gamma.estimate);
    let wm = DMatrix::from_diagonal(sp.normal_trace.target().weights());
    let m = dense_operator_norm(sp.normal_trace.matrix(), sp.metric.gram(), &wm);
    assert!((cp.m_norm.estimate - m).abs() <= 1e-6 * m);
    assert!(m <= gamma);

    let l = &scn.spec.laws;
    let g = cp.gamma.upper;
    let c = &cp.problem.constants;
    // m_jν = 1 and c̄₀ = 2 for the shipped normal damping law
    assert!((c.m_j - l.damper_max * g * g).abs() < 1e-14);
    assert!((c.m_1 - 2.0 * (l.damper_max - l.damper_min) * g).abs() < 1e-14);
    assert!((c.alpha_phi - l.compliance_max * l.friction_coefficient * g * g).abs() < 1e-14);
    let lp = l.compliance_max / l.compliance_depth;
    let beta = (l.friction_bound * l.friction_growth + lp + l.friction_coefficient * lp) * g;
    assert!((c.beta_phi - beta).abs() < 1e-12);
    assert_eq!(c.m_a, 2.0 * scn.spec.material.theta1);
}

#[test]
fn shipped_scenarios_satisfy_smallness_with_margin() {
    for name in ["demo", "low-load", "zero-load"] {
        let cp = build_abstract(&load(name)).unwrap();
        assert!(cp.smallness.pass && cp.smallness.relative_margin >= 0.2, "{name}: {:?}", cp.smallness);
        // the contact condition implies the abstract one
        assert!(cp.problem.margin() > 0.0);
        assert!(cp.problem.margin() >= cp.smallness.rhs - cp.smallness.lhs - 1e-12);
    }
}

#[test]
fn laws_pass_dense_scans() {
    let scn = load("demo");
    for s in scan_laws(&scn.spec.laws, 20_001, 2.0) {
        assert!(s.pass, "{s:?}");
    }
}

#[test]
fn inflated_friction_coefficient_is_refused() {
    let mut spec = load("demo").spec;
    spec.laws.friction_coefficient *= 100.0;
    let cp = build_abstract(&ContactScenario::from_spec(spec).unwrap()).unwrap();
    assert!(!cp.smallness.pass);
    assert!(cp.problem.margin() <= 0.0);
    let cfg = cp.evolution_config();
    assert!(matches!(time_march(&cp.problem, &cfg), Err(EvolutionError::Refused { .. })));
}

#[test]
fn zero_data_gives_zero_solution() {
    let cp = build_abstract(&load("zero-load")).unwrap();
    let cfg = cp.evolution_config();
    let march = time_march(&cp.problem, &cfg).unwrap();
    assert!(march.trajectory.samples().iter().all(|w| w.amax() == 0.0));
    let init = Trajectory::zeros(cfg.grid, cp.problem.dim());
    let pic = picard_global(&cp.problem, &cfg, &init).unwrap();
    assert!(pic.trajectory.samples().iter().all(|w| w.amax() == 0.0));
    let rep = complementarity_report(&cp, &march, &cfg).unwrap();
    for r in &rep.records {
        assert_eq!((r.normal_traction, r.tangential_traction, r.product), (0.0, 0.0, 0.0));
    }
}

#[test]
fn demo_complementarity_and_friction_cone() {
    let cp = build_abstract(&load("demo")).unwrap();
    let cfg = cp.evolution_config();
    let run = time_march(&cp.problem, &cfg).unwrap();
    let rep = complementarity_report(&cp, &run, &cfg).unwrap();
    let scale = rep.load_scale;
    assert!(rep.max_product <= 1e-6 * scale, "{}", rep.max_product);
    assert!(rep.max_feasibility <= 1e-8);
    assert!(rep.max_sign <= 1e-6 * scale);
    assert!(rep.min_cone_slack >= -1e-6 * scale);
    assert!(rep.max_angle <= 1e-3);
    // the cap is reached and the contact pushes back strictly there
    let active: Vec<_> = rep
        .records
        .iter()
        .filter(|r| r.part == BoundaryPart::Unilateral && r.gap_residual.abs() <= 1e-12)
        .collect();
    assert!(!active.is_empty());
    assert!(active.iter().all(|r| r.normal_balance < -1e-3));
    assert!(rep.sliding_nodes > 0);
}

#[test]
fn complementarity_violation_decreases_with_tolerance() {
    let cp = build_abstract(&load("demo")).unwrap();
    let mut last = f64::INFINITY;
    for tol in [1e-4, 1e-6, 1e-8] {
        let mut cfg = cp.evolution_config();
        cfg.frozen.inner_tol = tol;
        cfg.frozen.outer_tol = tol;
        let run = time_march(&cp.problem, &cfg).unwrap();
        let v = complementarity_report(&cp, &run, &cfg).unwrap().unilateral_violation();
        assert!(v <= last, "{tol}: {v} > {last}");
        last = v;
    }
}

#[test]
fn low_load_sticks() {
    let cp = build_abstract(&load("low-load")).unwrap();
    let cfg = cp.evolution_config();
    let run = time_march(&cp.problem, &cfg).unwrap();
    let rep = complementarity_report(&cp, &run, &cfg).unwrap();
    for r in rep.records.iter().filter(|r| r.part == BoundaryPart::Unilateral) {
        assert!(r.tangential_velocity.abs() <= 1e-8, "{r:?}");
        assert!(r.tangential_traction.abs() < r.friction_bound, "{r:?}");
        assert!(r.gap_residual < 0.0);
    }
}

#[test]
fn unconverged_trajectory_is_refused() {
    let cp = build_abstract(&load("demo")).unwrap();
    let cfg = cp.evolution_config();
    let mut run = time_march(&cp.problem, &cfg).unwrap();
    run.node_stats[3].residual = 1.0;
    assert!(complementarity_report(&cp, &run, &cfg).is_err());
    // the unchecked variant still works
    assert!(traction_report(&cp, &run.trajectory, &cfg).is_ok());
}

#[test]
fn quarter_turn_rotates_the_solution() {
    let base = load("demo");
    let mut spec = base.spec.clone();
    spec.mesh.rotation_deg = 90.0;
    let turned = ContactScenario::from_spec(spec).unwrap();
    let a = build_abstract(&base).unwrap();
    let b = build_abstract(&turned).unwrap();
    let ra = time_march(&a.problem, &a.evolution_config()).unwrap();
    let rb = time_march(&b.problem, &b.evolution_config()).unwrap();
    let mut worst: f64 = 0.0;
    for n in 0..base.grid.len() {
        for &node in a.spaces.dofs.free_nodes() {
            let u = a.spaces.dofs.nodal(ra.trajectory.sample(n), node);
            let v = b.spaces.dofs.nodal(rb.trajectory.sample(n), node);
            let ru = turned.mesh.rotate(u);
            worst = worst.max((ru[0] - v[0]).abs()).max((ru[1] - v[1]).abs());
        }
    }
    assert!(worst <= 1e-7, "{worst}");
}

#[test]
fn viscous_power_dominates_energy_norm() {
    let cp = build_abstract(&load("demo")).unwrap();
    let run = time_march(&cp.problem, &cp.evolution_config()).unwrap();
    let m = cp.problem.constants.m_a;
    for w in run.trajectory.samples() {
        let power = w.dot(&(&cp.stiffness * w));
        assert!(power >= m * cp.problem.metric.inner(w, w) * (1.0 - 1e-12));
    }
}
