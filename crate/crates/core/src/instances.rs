//! Small abstract instances with known solutions, shared by tests and the CLI.

use nalgebra::{DMatrix, DVector};

use crate::history::{HistoryOperator, MemoryKernel, SlipOperator, VolterraOperator};
use crate::problem::{
    AbstractProblem, AffineForcing, ConvexPotential, HistoryBundle, HypothesisConstants,
    LinearOperatorA, LipschitzPotential, LoadSeries, Modulation, NoHemivariational, NodalPrototype,
    PiecewiseLinearSlope, Quadratic, StateSpaces, WeightedAbsPotential,
    ZeroPotential,
};
use crate::spaces::{
    dense_operator_norm, dual_operator_norm, min_generalized_eigenvalue, ConstraintSet,
    DiagonalMetric, EnergyMetric, NodalCap, TraceOperator,
};

/// Names accepted by [`by_name`].
pub const NAMES: &[&str] = &[
    "scalar-basic",
    "scalar-constrained",
    "scalar-soft",
    "scalar-soft-active",
    "scalar-nonconvex",
    "scalar-damped",
    "box-2d",
    "lasso-2d",
    "damped-3d",
    "scalar-ode",
    "coupled-4d",
];

pub fn by_name(name: &str) -> Option<AbstractProblem> {
    Some(match name {
        "scalar-basic" => scalar_basic(),
        "scalar-constrained" => scalar_constrained(),
        "scalar-soft" => scalar_soft(0.5),
        "scalar-soft-active" => scalar_soft(2.0),
        "scalar-nonconvex" => scalar_nonconvex(0.7),
        "scalar-damped" => scalar_damped(3.0),
        "box-2d" => box_2d(),
        "lasso-2d" => lasso_2d(),
        "damped-3d" => damped_3d(),
        "scalar-ode" => scalar_ode(),
        "coupled-4d" => coupled_4d(),
        _ => return None,
    })
}

fn zero_history(n: usize, spaces: &StateSpaces) -> HistoryBundle {
    let z = |d: usize| HistoryOperator::Zero {
        input_dim: n,
        output_dim: d,
    };
    HistoryBundle {
        r1: z(spaces.e.dim()),
        r2: z(spaces.x.dim()),
        r3: z(spaces.y.dim()),
        r4: z(spaces.z.dim()),
    }
}

fn unit_spaces(x: usize) -> StateSpaces {
    StateSpaces {
        e: DiagonalMetric::unit(1),
        x: DiagonalMetric::unit(x),
        y: DiagonalMetric::unit(1),
        z: DiagonalMetric::unit(x),
    }
}

/// `‖v‖₂ ≤ e ‖v‖_V`.
fn euclid_to_v(metric: &EnergyMetric) -> f64 {
    let n = metric.dim();
    1.0 / min_generalized_eigenvalue(&DMatrix::identity(n, n), metric).sqrt()
}

struct Static {
    name: &'static str,
    stiffness: DMatrix<f64>,
    load: DVector<f64>,
    caps: Vec<NodalCap>,
    phi: Box<dyn ConvexPotential>,
    j: Option<(DMatrix<f64>, NodalPrototype)>,
    alpha_phi: f64,
}

/// A time-independent problem with Euclidean `V`, no history, and `j`
/// acting through an optional trace.
fn static_problem(s: Static) -> AbstractProblem {
    let n = s.stiffness.nrows();
    let metric = EnergyMetric::identity(n);
    let m_a = min_generalized_eigenvalue(&s.stiffness, &metric);
    let mut h = HypothesisConstants::monotone(m_a);
    h.a2 = dual_operator_norm(&s.stiffness, &metric);
    h.alpha_phi = s.alpha_phi;
    h.m_norm = 1.0;
    let (trace, j): (TraceOperator, Box<dyn LipschitzPotential>) = match s.j {
        Some((mat, proto)) => {
            let target = proto.weights.clone();
            let (m_j, m_1) = proto.coupling_constants();
            let (c0, c1, c2) = proto.growth_constants();
            h.m_j = m_j;
            h.m_1 = m_1;
            h.c0j_max = c0;
            h.c1j = c1;
            h.c2j = c2;
            let trace = TraceOperator::new(mat, target).expect("trace dimensions");
            h.m_norm = dense_operator_norm(
                trace.matrix(),
                metric.gram(),
                &DMatrix::from_diagonal(trace.target().weights()),
            );
            (trace, Box::new(proto))
        }
        None => (
            TraceOperator::new(DMatrix::identity(n, n), DiagonalMetric::unit(n)).expect("identity"),
            Box::new(NoHemivariational { dim: n }),
        ),
    };
    let spaces = unit_spaces(trace.target_dim());
    let constraint = if s.caps.is_empty() {
        ConstraintSet::whole_space(n)
    } else {
        ConstraintSet::nodewise(n, s.caps).expect("caps")
    };
    let scale = 1.0 + s.load.amax();
    AbstractProblem {
        name: s.name.to_string(),
        history: zero_history(n, &spaces),
        metric,
        trace,
        constraint,
        op_a: Box::new(LinearOperatorA {
            stiffness: s.stiffness,
            coupling: None,
        }),
        forcing: Box::new(AffineForcing {
            base: LoadSeries::Constant(s.load),
            coupling: None,
        }),
        phi: s.phi,
        j,
        spaces,
        constants: h,
        scale,
        horizon: 1.0,
    }
}

fn scalar(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

fn abs_potential(weights: &[f64]) -> Box<dyn ConvexPotential> {
    Box::new(WeightedAbsPotential {
        base: DVector::from_column_slice(weights),
        quasi_gain: 0.0,
        history_gain: 0.0,
        euclid_to_v: 1.0,
    })
}

/// `2w = 1` on `w ≤ 10`; solution `0.5`.
pub fn scalar_basic() -> AbstractProblem {
    static_problem(Static {
        name: "scalar-basic",
        stiffness: scalar(2.0),
        load: DVector::from_element(1, 1.0),
        caps: vec![NodalCap::scalar(0, 10.0)],
        phi: Box::new(ZeroPotential),
        j: None,
        alpha_phi: 0.0,
    })
}

/// `2w = 30` on `w ≤ 10`; solution `10`.
pub fn scalar_constrained() -> AbstractProblem {
    let mut p = scalar_basic();
    p.name = "scalar-constrained".into();
    p.forcing = Box::new(AffineForcing {
        base: LoadSeries::Constant(DVector::from_element(1, 30.0)),
        coupling: None,
    });
    p.scale = 31.0;
    p
}

/// `w + ∂|w| ∋ f`; solution `sign(f) max(|f| − 1, 0)`.
pub fn scalar_soft(f: f64) -> AbstractProblem {
    static_problem(Static {
        name: "scalar-soft",
        stiffness: scalar(1.0),
        load: DVector::from_element(1, f),
        caps: vec![],
        phi: abs_potential(&[1.0]),
        j: None,
        alpha_phi: 0.0,
    })
}

/// `2w + ∂j(w) ∋ f` with `j(r) = −r²/2`; solution `w = f`.
pub fn scalar_nonconvex(f: f64) -> AbstractProblem {
    static_problem(Static {
        name: "scalar-nonconvex",
        stiffness: scalar(2.0),
        load: DVector::from_element(1, f),
        caps: vec![],
        phi: Box::new(ZeroPotential),
        j: Some((
            scalar(1.0),
            NodalPrototype {
                weights: DiagonalMetric::unit(1),
                modulation: Modulation::Constant(1.0),
                g: Box::new(Quadratic { coef: -0.5 }),
            },
        )),
        alpha_phi: 0.0,
    })
}

/// `2w + β(w) = f` with the normal damping slope `β`; for `f = 3` the
/// solution `0.75` sits on the rising piece.
pub fn scalar_damped(f: f64) -> AbstractProblem {
    static_problem(Static {
        name: "scalar-damped",
        stiffness: scalar(2.0),
        load: DVector::from_element(1, f),
        caps: vec![],
        phi: Box::new(ZeroPotential),
        j: Some((
            scalar(1.0),
            NodalPrototype {
                weights: DiagonalMetric::unit(1),
                modulation: Modulation::Constant(1.0),
                g: Box::new(PiecewiseLinearSlope::normal_damping()),
            },
        )),
        alpha_phi: 0.0,
    })
}

pub fn box_2d_data() -> (DMatrix<f64>, DVector<f64>, [f64; 2]) {
    (
        DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]),
        DVector::from_vec(vec![4.0, 5.0]),
        [1.0, 1.5],
    )
}

/// Quadratic minimisation on a box `v ≤ b`.
pub fn box_2d() -> AbstractProblem {
    let (s, f, b) = box_2d_data();
    static_problem(Static {
        name: "box-2d",
        stiffness: s,
        load: f,
        caps: vec![NodalCap::scalar(0, b[0]), NodalCap::scalar(1, b[1])],
        phi: Box::new(ZeroPotential),
        j: None,
        alpha_phi: 0.0,
    })
}

pub fn lasso_2d_data() -> (DMatrix<f64>, DVector<f64>, [f64; 2]) {
    (
        DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
        DVector::from_vec(vec![1.5, -0.4]),
        [0.5, 0.3],
    )
}

/// `½vᵀSv − fᵀv + Σ cᵢ|vᵢ|`.
pub fn lasso_2d() -> AbstractProblem {
    let (s, f, c) = lasso_2d_data();
    static_problem(Static {
        name: "lasso-2d",
        stiffness: s,
        load: f,
        caps: vec![],
        phi: abs_potential(&c),
        j: None,
        alpha_phi: 0.0,
    })
}

pub fn damped_3d_data() -> (DMatrix<f64>, DVector<f64>, f64) {
    (
        DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.5]),
        DVector::from_vec(vec![6.0, 1.0, -0.5]),
        0.9,
    )
}

/// Three coupled unknowns, the damping slope on the first and a cap on the
/// second.
pub fn damped_3d() -> AbstractProblem {
    let (s, f, cap) = damped_3d_data();
    static_problem(Static {
        name: "damped-3d",
        stiffness: s,
        load: f,
        caps: vec![NodalCap::scalar(1, cap)],
        phi: Box::new(ZeroPotential),
        j: Some((
            DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]),
            NodalPrototype {
                weights: DiagonalMetric::unit(1),
                modulation: Modulation::Constant(1.0),
                g: Box::new(PiecewiseLinearSlope::normal_damping()),
            },
        )),
        alpha_phi: 0.0,
    })
}

/// `w(t) + ∫₀ᵗ w = 1` on `[0, 1]`, solved by `e^{−t}`.
pub fn scalar_ode() -> AbstractProblem {
    let mut p = static_problem(Static {
        name: "scalar-ode",
        stiffness: scalar(1.0),
        load: DVector::from_element(1, 1.0),
        caps: vec![],
        phi: Box::new(ZeroPotential),
        j: None,
        alpha_phi: 0.0,
    });
    p.op_a = Box::new(LinearOperatorA {
        stiffness: scalar(1.0),
        coupling: Some(scalar(1.0)),
    });
    p.history.r1 = HistoryOperator::Volterra(VolterraOperator {
        instant: Some(scalar(1.0)),
        initial: DVector::zeros(1),
        memory: None,
    });
    p.constants.m_a_bar = 1.0;
    p.constants.a1 = 1.0;
    p.constants.c_r[0] = 1.0;
    p
}

/// Four unknowns with every coupling switched on: a non-Euclidean metric, a
/// history-dependent `A` and `f`, a quasi and history-dependent `φ`, the
/// damping prototype with a state-dependent modulation, a cap, and nonzero
/// history operators of every kind.
pub fn coupled_4d() -> AbstractProblem {
    let n = 4;
    let gram = DMatrix::from_row_slice(
        4,
        4,
        &[
            2.0, 0.3, 0.0, 0.1, 0.3, 1.5, 0.2, 0.0, 0.0, 0.2, 1.0, 0.1, 0.1, 0.0, 0.1, 1.2,
        ],
    );
    let metric = EnergyMetric::new(gram.clone()).expect("SPD gram");
    let stiffness = &gram * 3.0
        + DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, 0.2, 0.0, 0.0, 0.2, 0.5, 0.1, 0.0, 0.0, 0.1, 0.8, 0.0, 0.0, 0.0, 0.0, 0.4,
            ],
        );
    let coupling_a = DMatrix::from_row_slice(4, 2, &[0.5, 0.0, 0.1, 0.3, 0.0, 0.2, -0.2, 0.1]);
    let trace = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.5, 0.0, 0.0, 1.0, 0.0, -0.5]);
    let x_metric = DiagonalMetric::new(DVector::from_vec(vec![1.0, 0.5])).expect("weights");
    let coupling_f = DMatrix::from_row_slice(4, 2, &[0.2, 0.0, 0.0, 0.1, 0.1, 0.1, 0.0, -0.2]);
    let spaces = StateSpaces {
        e: DiagonalMetric::unit(2),
        x: x_metric.clone(),
        y: DiagonalMetric::unit(4),
        z: x_metric.clone(),
    };
    let e = euclid_to_v(&metric);
    let phi = WeightedAbsPotential {
        base: DVector::from_vec(vec![0.3, 0.2, 0.4, 0.1]),
        quasi_gain: 0.2,
        history_gain: 0.3,
        euclid_to_v: e,
    };
    let proto = NodalPrototype {
        weights: x_metric.clone(),
        modulation: Modulation::Damper {
            k_min: 0.1,
            k_max: 0.4,
        },
        g: Box::new(PiecewiseLinearSlope::normal_damping()),
    };
    let trace = TraceOperator::new(trace, x_metric.clone()).expect("trace");
    let x_gram = DMatrix::from_diagonal(x_metric.weights());
    let e_gram = DMatrix::identity(2, 2);
    let g_inv = metric.gram().clone().try_inverse().expect("SPD");

    let mut h = HypothesisConstants::monotone(min_generalized_eigenvalue(&stiffness, &metric));
    h.m_a_bar = dense_operator_norm(&coupling_a, &e_gram, &g_inv);
    h.a1 = h.m_a_bar;
    h.a2 = dual_operator_norm(&stiffness, &metric);
    h.l_f = dense_operator_norm(&coupling_f, &x_gram, &g_inv);
    let (alpha_phi, beta_phi) = phi.coupling_constants();
    h.alpha_phi = alpha_phi;
    h.beta_phi = beta_phi;
    let (m_j, m_1) = proto.coupling_constants();
    h.m_j = m_j;
    h.m_1 = m_1;
    let (c0, c1, c2) = proto.growth_constants();
    h.c0j_max = c0;
    h.c1j = c1;
    h.c2j = c2;
    h.m_norm = dense_operator_norm(trace.matrix(), metric.gram(), &x_gram);

    let initial = DVector::from_vec(vec![0.1, -0.2, 0.0, 0.05]);
    let history = HistoryBundle {
        r1: HistoryOperator::Volterra(VolterraOperator {
            instant: Some(DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.5, 0.0, 0.0, 0.8, 0.0, 0.3])),
            initial: initial.clone(),
            memory: Some(MemoryKernel {
                matrix: DMatrix::from_row_slice(2, 4, &[0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.5, 0.5]),
                amplitude: 0.6,
                relaxation: 0.5,
            }),
        }),
        r2: HistoryOperator::Volterra(VolterraOperator {
            instant: Some(DMatrix::from_row_slice(2, 4, &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0])),
            initial: initial.clone(),
            memory: None,
        }),
        r3: HistoryOperator::Slip(SlipOperator {
            tangential: DMatrix::identity(4, 4),
            components: 1,
            initial: initial.clone(),
        }),
        r4: HistoryOperator::Volterra(VolterraOperator {
            instant: Some(trace.matrix().clone()),
            initial,
            memory: None,
        }),
    };
    let horizon = 1.0;
    for (i, (op, out)) in [
        (&history.r1, &spaces.e),
        (&history.r2, &spaces.x),
        (&history.r3, &spaces.y),
        (&history.r4, &spaces.z),
    ]
    .into_iter()
    .enumerate()
    {
        h.c_r[i] = op.lipschitz_constant(&metric, out, horizon);
    }

    AbstractProblem {
        name: "coupled-4d".into(),
        metric,
        trace,
        constraint: ConstraintSet::nodewise(n, vec![NodalCap::scalar(2, 0.3)]).expect("cap"),
        op_a: Box::new(LinearOperatorA {
            stiffness,
            coupling: Some(coupling_a),
        }),
        forcing: Box::new(AffineForcing {
            base: LoadSeries::PiecewiseLinear {
                times: vec![0.0, 1.0],
                values: vec![
                    DVector::from_vec(vec![1.0, -1.0, 2.0, 0.5]),
                    DVector::from_vec(vec![3.0, 0.5, 4.0, -1.0]),
                ],
            },
            coupling: Some(coupling_f),
        }),
        phi: Box::new(phi),
        j: Box::new(proto),
        history,
        spaces,
        constants: h,
        scale: 2.0,
        horizon,
    }
}

/// A random static instance of dimension `2..=6`: SPD stiffness, random
/// load, caps on some coordinates, an `ℓ¹` potential, and the damping
/// prototype on the first coordinate with a modulation small enough to keep
/// the smallness margin positive.
pub fn random_static(seed: u64) -> AbstractProblem {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=6usize);
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let stiffness = a.transpose() * &a + DMatrix::identity(n, n);
    let load = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
    let mut caps = Vec::new();
    for i in 0..n {
        if rng.random_bool(0.5) {
            caps.push(NodalCap::scalar(i, rng.random_range(-0.5..1.0)));
        }
    }
    let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..0.5)).collect();
    let k = rng.random_range(0.0..0.9);
    let mut trace = DMatrix::zeros(1, n);
    trace[(0, 0)] = 1.0;
    static_problem(Static {
        name: "random-static",
        stiffness,
        load,
        caps,
        phi: abs_potential(&weights),
        j: Some((
            trace,
            NodalPrototype {
                weights: DiagonalMetric::unit(1),
                modulation: Modulation::Constant(k),
                g: Box::new(PiecewiseLinearSlope::normal_damping()),
            },
        )),
        alpha_phi: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_named_instance_is_consistent() {
        for name in NAMES {
            let p = by_name(name).unwrap();
            p.validate().unwrap();
            assert!(p.constants.is_well_formed(), "{name}");
            assert!(p.margin() > 0.0, "{name}: {}", p.margin());
        }
        assert!(by_name("nope").is_none());
        for seed in 0..20 {
            let p = random_static(seed);
            p.validate().unwrap();
            assert!(p.margin() > 0.0);
        }
    }

    #[test]
    fn coupled_constants_are_positive() {
        let p = coupled_4d();
        let h = &p.constants;
        assert!(h.m_a > 1.0);
        assert!(h.alpha_phi > 0.0 && h.beta_phi > 0.0 && h.m_j > 0.0 && h.m_1 > 0.0);
        assert!(h.c_r.iter().all(|c| *c > 0.0));
    }
}
