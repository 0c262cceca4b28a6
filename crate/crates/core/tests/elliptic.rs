use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vhi_core::elliptic::{
    apriori_bound_check, generate_probes, minty_residual, minty_value, solve_frozen, FrozenData,
    SolveConfig, SolveError,
};
use vhi_core::instances;
use vhi_core::problem::{AffineForcing, LoadSeries};

fn cfg() -> SolveConfig {
    SolveConfig::default()
}

fn solve(p: &vhi_core::problem::AbstractProblem) -> DVector<f64> {
    let d = FrozenData::zeros(p, 0.0);
    solve_frozen(p, &d, &cfg(), None).unwrap().w
}

/// Minimiser of a 1D function on a uniform grid of spacing `h`.
fn grid_argmin(f: impl Fn(f64) -> f64, lo: f64, hi: f64, h: f64) -> f64 {
    let n = ((hi - lo) / h).round() as usize;
    let mut best = (f64::INFINITY, lo);
    for i in 0..=n {
        let x = lo + i as f64 * h;
        let v = f(x);
        if v < best.0 {
            best = (v, x);
        }
    }
    best.1
}

/// The damping potential written out piece by piece.
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

#[test]
fn scalar_unconstrained_and_clipped() {
    assert!((solve(&instances::scalar_basic())[0] - 0.5).abs() < 1e-9);
    assert_eq!(solve(&instances::scalar_constrained())[0], 10.0);
}

#[test]
fn scalar_soft_threshold_matches_grid_search() {
    for f in [0.5, 2.0, -1.7] {
        let oracle = grid_argmin(|w| 0.5 * w * w - f * w + w.abs(), -5.0, 5.0, 1e-6);
        let w = solve(&instances::scalar_soft(f))[0];
        assert!((w - oracle).abs() < 1e-6, "f = {f}: {w} vs {oracle}");
    }
}

#[test]
fn scalar_nonconvex_and_damped_match_grid_search() {
    let oracle = grid_argmin(|w| w * w - 0.5 * w * w - 0.7 * w, -5.0, 5.0, 1e-6);
    assert!((solve(&instances::scalar_nonconvex(0.7))[0] - oracle).abs() < 1e-6);
    for f in [3.0, 5.5, -1.0, 7.0] {
        let oracle = grid_argmin(|w| w * w + damping_primitive(w) - f * w, -5.0, 5.0, 1e-6);
        let w = solve(&instances::scalar_damped(f))[0];
        assert!((w - oracle).abs() < 1e-6, "f = {f}: {w} vs {oracle}");
    }
}

#[test]
fn box_problem_matches_active_set_enumeration() {
    let (s, f, b) = instances::box_2d_data();
    let mut oracle = None;
    for mask in 0..4u32 {
        let active: Vec<bool> = (0..2).map(|i| mask & (1 << i) != 0).collect();
        // fix active coordinates at the bound, solve the rest
        let mut w = DVector::zeros(2);
        let free: Vec<usize> = (0..2).filter(|&i| !active[i]).collect();
        for i in 0..2 {
            if active[i] {
                w[i] = b[i];
            }
        }
        if !free.is_empty() {
            let k = free.len();
            let sub = DMatrix::from_fn(k, k, |a, c| s[(free[a], free[c])]);
            let rhs = DVector::from_fn(k, |a, _| {
                f[free[a]] - (0..2).filter(|&j| active[j]).map(|j| s[(free[a], j)] * b[j]).sum::<f64>()
            });
            let x = sub.lu().solve(&rhs).unwrap();
            for (a, &i) in free.iter().enumerate() {
                w[i] = x[a];
            }
        }
        let grad = &s * &w - &f;
        let ok = (0..2).all(|i| {
            if active[i] {
                grad[i] <= 1e-12
            } else {
                w[i] <= b[i] + 1e-12
            }
        });
        if ok {
            oracle = Some(w);
        }
    }
    let oracle = oracle.unwrap();
    let w = solve(&instances::box_2d());
    assert!((w - oracle).amax() < 1e-6);
}

#[test]
fn lasso_matches_sign_enumeration() {
    let (s, f, c) = instances::lasso_2d_data();
    let mut oracle = None;
    for code in 0..9 {
        // sign pattern in {−1, 0, +1}² encoded base 3
        let sg = [code % 3 - 1, code / 3 - 1];
        let free: Vec<usize> = (0..2).filter(|&i| sg[i] != 0).collect();
        let mut w = DVector::zeros(2);
        if !free.is_empty() {
            let k = free.len();
            let sub = DMatrix::from_fn(k, k, |a, b| s[(free[a], free[b])]);
            let rhs = DVector::from_fn(k, |a, _| f[free[a]] - c[free[a]] * sg[free[a]] as f64);
            let x = sub.lu().solve(&rhs).unwrap();
            for (a, &i) in free.iter().enumerate() {
                w[i] = x[a];
            }
        }
        let g = &s * &w - &f;
        let ok = (0..2).all(|i| match sg[i] {
            0 => g[i].abs() <= c[i] + 1e-12,
            s_ => (w[i] * s_ as f64) > 0.0,
        });
        if ok {
            oracle = Some(w);
        }
    }
    let oracle = oracle.unwrap();
    let w = solve(&instances::lasso_2d());
    assert!((w - oracle).amax() < 1e-6);
}

#[test]
fn damped_3d_matches_piecewise_enumeration() {
    let (s, f, cap) = instances::damped_3d_data();
    // β on the first coordinate is affine on each piece: β(r) = a r + b
    let pieces = [(f64::NEG_INFINITY, 0.0, 0.0, 0.0), (0.0, 1.0, 2.0, 0.0), (1.0, 2.0, -1.0, 3.0), (2.0, f64::INFINITY, 0.0, 1.0)];
    let mut found = Vec::new();
    for &(lo, hi, a, b) in &pieces {
        for active in [false, true] {
            let mut m = s.clone();
            m[(0, 0)] += a;
            let mut rhs = f.clone();
            rhs[0] -= b;
            let w = if active {
                // w₁ = cap, solve for w₀, w₂
                let idx = [0usize, 2];
                let sub = DMatrix::from_fn(2, 2, |i, j| m[(idx[i], idx[j])]);
                let r = DVector::from_fn(2, |i, _| rhs[idx[i]] - m[(idx[i], 1)] * cap);
                let x = sub.lu().solve(&r).unwrap();
                DVector::from_vec(vec![x[0], cap, x[1]])
            } else {
                m.lu().solve(&rhs).unwrap()
            };
            let mut g = &s * &w - &f;
            g[0] += damping_slope(w[0]);
            let in_piece = w[0] >= lo - 1e-12 && w[0] <= hi + 1e-12;
            let kkt = if active { g[1] <= 1e-12 } else { w[1] <= cap + 1e-12 };
            if in_piece && kkt && g[0].abs() < 1e-10 && g[2].abs() < 1e-10 {
                found.push(w);
            }
        }
    }
    assert!(!found.is_empty());
    let w = solve(&instances::damped_3d());
    for o in &found {
        assert!((&w - o).amax() < 1e-6, "{w} vs {o}");
    }
}

#[test]
fn smallness_violation_is_refused_by_name() {
    let mut p = instances::scalar_nonconvex(0.7);
    p.constants.m_j = 2.5;
    let d = FrozenData::zeros(&p, 0.0);
    match solve_frozen(&p, &d, &cfg(), None) {
        Err(SolveError::Smallness { margin }) => assert!(margin < 0.0),
        other => panic!("expected refusal, got {other:?}"),
    }
    let msg = SolveError::Smallness { margin: -0.5 }.to_string();
    assert!(msg.contains("margin"));
}

#[test]
fn inner_limit_reports_history() {
    let p = instances::coupled_4d();
    let d = FrozenData::zeros(&p, 0.3);
    let c = SolveConfig {
        max_inner: 3,
        ..cfg()
    };
    match solve_frozen(&p, &d, &c, None) {
        Err(SolveError::InnerNoConvergence { history, .. }) => assert!(!history.is_empty()),
        other => panic!("{other:?}"),
    }
}

#[test]
fn oversized_fixed_step_is_reported_as_divergence() {
    let p = instances::coupled_4d();
    let d = FrozenData::zeros(&p, 0.3);
    let c = SolveConfig {
        step: Some(5.0),
        ..cfg()
    };
    assert!(matches!(
        solve_frozen(&p, &d, &c, None),
        Err(SolveError::Divergence { .. })
    ));
}

#[test]
fn minty_certifies_solution_and_rejects_wrong_point() {
    let p = instances::scalar_basic();
    let d = FrozenData::zeros(&p, 0.0);
    let w = DVector::from_element(1, 0.5);
    // grid of K = (−∞, 10]
    let grid: Vec<DVector<f64>> = (0..=400)
        .map(|i| DVector::from_element(1, -10.0 + 0.05 * i as f64))
        .collect();
    assert!(minty_residual(&p, &d, &w, &grid).unwrap().min_value >= -1e-10);
    assert_eq!(minty_value(&p, &d, &w, &w), 0.0);

    // closed form: (2v − 1)(v − 0.4) is negative for v ∈ (0.4, 0.5)
    let wrong = DVector::from_element(1, 0.4);
    let rep = minty_residual(&p, &d, &wrong, &grid).unwrap();
    assert!(rep.min_value < 0.0);
    let v = &grid[rep.worst_probe.unwrap()][0];
    assert!((2.0 * v - 1.0) * (v - 0.4) < 0.0);

    let outside = vec![DVector::from_element(1, 11.0)];
    assert!(matches!(
        minty_residual(&p, &d, &w, &outside),
        Err(SolveError::InfeasibleProbe(0))
    ));
}

#[test]
fn minty_holds_for_every_named_static_instance() {
    let c = cfg();
    for name in instances::NAMES {
        let p = instances::by_name(name).unwrap();
        let d = FrozenData::zeros(&p, 0.25);
        let sol = solve_frozen(&p, &d, &c, None).unwrap();
        let probes = generate_probes(&p, &sol.w, 200, 7);
        assert_eq!(probes.len(), 200);
        let rep = minty_residual(&p, &d, &sol.w, &probes).unwrap();
        assert!(rep.min_value >= -100.0 * c.inner_tol, "{name}: {}", rep.min_value);
    }
}

#[test]
fn two_starting_points_agree() {
    let p = instances::coupled_4d();
    let d = FrozenData::zeros(&p, 0.6);
    let c = cfg();
    let a = solve_frozen(&p, &d, &c, None).unwrap();
    let start = DVector::from_vec(vec![3.0, -2.0, -1.0, 4.0]);
    let b = solve_frozen(&p, &d, &c, Some(&start)).unwrap();
    assert!(p.metric.norm(&(&a.w - &b.w)) <= 10.0 * c.inner_tol);
}

#[test]
fn outer_passes_contract_at_the_predicted_rate() {
    let p = instances::coupled_4d();
    let d = FrozenData::zeros(&p, 0.6);
    let c = SolveConfig {
        inner_tol: 1e-13,
        outer_tol: 1e-12,
        ..cfg()
    };
    let sol = solve_frozen(&p, &d, &c, Some(&DVector::from_element(4, 5.0))).unwrap();
    let h = &p.constants;
    let bound = (h.m_j * h.m_norm * h.m_norm + h.alpha_phi) / h.m_a + 0.1;
    let hist: Vec<f64> = sol.outer_history.iter().copied().filter(|x| *x > 1e-10).collect();
    assert!(hist.len() >= 3, "{:?}", sol.outer_history);
    let ratios: Vec<f64> = hist.windows(2).map(|w| w[1] / w[0]).collect();
    for r in ratios.iter().rev().take(5) {
        assert!(*r <= bound, "{ratios:?} vs {bound}");
    }
}

#[test]
fn load_shift_moves_solution_by_at_most_shift_over_margin() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let base = instances::damped_3d();
    let (_, f, _) = instances::damped_3d_data();
    let w0 = solve(&base);
    for _ in 0..10 {
        let e = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let delta = rng.random_range(0.01..2.0);
        let mut p = instances::damped_3d();
        p.forcing = Box::new(AffineForcing {
            base: LoadSeries::Constant(&f + &e * delta),
            coupling: None,
        });
        let w1 = solve(&p);
        let moved = p.metric.norm(&(&w1 - &w0));
        let allowed = p.metric.dual_norm(&(&e * delta)) / p.margin();
        assert!(moved <= allowed * (1.0 + 1e-6) + 1e-9, "{moved} > {allowed}");
    }
}

#[test]
fn apriori_bound_scalar_hand_assembled() {
    let p = instances::scalar_basic();
    let d = FrozenData::zeros(&p, 0.0);
    let w = DVector::from_element(1, 0.5);
    let z = DVector::zeros(1);
    let chk = apriori_bound_check(&p, &d, &w, &z, &z, &z);
    // (2 − 0 − 0)·|0.5 − 0| = 1; rhs = a₀ + |f| = 0 + 1
    assert!((chk.lhs - 1.0).abs() < 1e-15);
    assert!((chk.rhs - 1.0).abs() < 1e-15);
    assert!(chk.pass);
    let same = apriori_bound_check(&p, &d, &w, &w, &z, &z);
    assert_eq!(same.lhs, 0.0);
    assert!(same.pass);
}

#[test]
fn apriori_bound_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for seed in 0..100 {
        let p = instances::random_static(seed);
        let d = FrozenData::zeros(&p, 0.0);
        let w = solve_frozen(&p, &d, &cfg(), None).unwrap().w;
        let n = p.dim();
        let v0 = p.constraint.project(&DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0)));
        let z0 = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let xi0 = DVector::zeros(p.spaces.x.dim());
        let chk = apriori_bound_check(&p, &d, &w, &v0, &z0, &xi0);
        assert!(chk.pass, "seed {seed}: {} > {}", chk.lhs, chk.rhs);
    }
}
