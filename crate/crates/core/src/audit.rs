//! Sampling audits of the structural hypotheses.
//!
//! Every sampled check draws its inputs from a generator seeded by
//! `(seed, sample index)`, so a single sample can be regenerated without the
//! others and a failing sample carries everything needed to replay it.
//! Audits are necessary-condition checks: a pass means no violation was
//! found among the samples drawn.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::contact::{ContactProblem, ContactSmallness};
use crate::contact::laws::scan_laws;
use crate::history::{audit_history_lipschitz, HistoryError, QuadratureRule, TimeGrid, Trajectory};
use crate::problem::{check_relaxed_monotonicity, AbstractProblem};

/// Radii of the sampling shells, in units of the problem scale.
pub const RADII: [f64; 3] = [0.1, 1.0, 10.0];

/// Relative slack applied to every sampled inequality.
pub const SLACK: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Check {
    /// Strong monotonicity of `A(t, λ, ·)` with the `λ` coupling.
    OperatorA,
    /// Lipschitz continuity of `A(t, ·, v)`.
    OperatorALambda,
    /// Affine growth of `A`.
    OperatorAGrowth,
    /// Lipschitz continuity of `f(t, ·)`.
    Forcing,
    /// Monotonicity of `A + M*∂j(M·)` at fixed history.
    MultivaluedMonotone,
    /// `w`-coupling of the four-point inequality for `φ`.
    PhiAlpha,
    /// `η`-coupling of the four-point inequality for `φ`.
    PhiBeta,
    /// Midpoint convexity of `φ(t, η, w, ·)`.
    PhiConvex,
    /// Relaxed monotonicity of `∂j(t, ζ, ·)`.
    JRelaxed,
    /// `ζ`-coupling of the relaxed monotonicity of `∂j`.
    JCoupling,
    /// Affine growth of `∂j`.
    JGrowth,
    /// `‖M‖` against sampled quotients.
    TraceNorm,
    /// Lipschitz constants of the history operators.
    History(usize),
}

impl Check {
    pub const SAMPLED: [Check; 12] = [
        Check::OperatorA,
        Check::OperatorALambda,
        Check::OperatorAGrowth,
        Check::Forcing,
        Check::MultivaluedMonotone,
        Check::PhiAlpha,
        Check::PhiBeta,
        Check::PhiConvex,
        Check::JRelaxed,
        Check::JCoupling,
        Check::JGrowth,
        Check::TraceNorm,
    ];

    pub fn name(self) -> String {
        match self {
            Check::OperatorA => "A-strong-monotonicity".into(),
            Check::OperatorALambda => "A-history-lipschitz".into(),
            Check::OperatorAGrowth => "A-growth".into(),
            Check::Forcing => "f-lipschitz".into(),
            Check::MultivaluedMonotone => "A-plus-j-monotone".into(),
            Check::PhiAlpha => "phi-alpha".into(),
            Check::PhiBeta => "phi-beta".into(),
            Check::PhiConvex => "phi-convexity".into(),
            Check::JRelaxed => "j-relaxed-monotone".into(),
            Check::JCoupling => "j-zeta-coupling".into(),
            Check::JGrowth => "j-subgradient-growth".into(),
            Check::TraceNorm => "trace-norm".into(),
            Check::History(i) => format!("R{}-lipschitz", i + 1),
        }
    }

    /// Whether the claimed constant is a lower bound (monotonicity type).
    fn lower(self) -> bool {
        matches!(self, Check::OperatorA | Check::MultivaluedMonotone | Check::PhiConvex)
    }

    fn claimed(self, p: &AbstractProblem) -> f64 {
        let h = &p.constants;
        match self {
            Check::OperatorA => h.m_a,
            Check::OperatorALambda => h.m_a_bar,
            Check::OperatorAGrowth => h.a2,
            Check::Forcing => h.l_f,
            Check::MultivaluedMonotone | Check::PhiConvex => 0.0,
            Check::PhiAlpha => h.alpha_phi,
            Check::PhiBeta => h.beta_phi,
            Check::JRelaxed => h.m_j,
            Check::JCoupling => h.m_1,
            Check::JGrowth => h.c0j_max,
            Check::TraceNorm => h.m_norm,
            Check::History(i) => h.c_r[i],
        }
    }
}

/// Inputs of one failing sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub seed: u64,
    pub sample: usize,
    /// `slack < 0` is a violation.
    pub slack: f64,
    pub inputs: BTreeMap<String, Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub name: String,
    pub check: Option<Check>,
    pub claimed: f64,
    /// Smallest (monotonicity type) or largest (Lipschitz type) sampled quotient.
    pub estimate: f64,
    pub samples: usize,
    pub pass: bool,
    pub summary: String,
    pub witness: Option<Witness>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Margin {
    pub m_a: f64,
    pub consumed: f64,
    pub margin: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditReport {
    pub instance: String,
    pub seed: u64,
    pub samples: usize,
    pub smallness: Margin,
    pub contact_smallness: Option<ContactSmallness>,
    pub entries: Vec<AuditEntry>,
    /// Hypotheses with no finite-sample test.
    pub by_construction: Vec<String>,
}

impl AuditReport {
    pub fn gates_pass(&self) -> bool {
        self.smallness.pass
            && self.contact_smallness.as_ref().is_none_or(|c| c.pass)
            && self.entries.iter().all(|e| e.pass)
    }

    pub fn failed(&self) -> impl Iterator<Item = &AuditEntry> {
        self.entries.iter().filter(|e| !e.pass)
    }

    pub fn entry(&self, name: &str) -> Option<&AuditEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report fields are serializable")
    }
}

pub fn h0_margin(p: &AbstractProblem) -> Margin {
    let h = &p.constants;
    Margin {
        m_a: h.m_a,
        consumed: h.consumed(),
        margin: p.margin(),
        pass: p.margin() > 0.0,
    }
}

/// The generator for sample `k`: one ChaCha stream per sample.
pub fn sample_rng(seed: u64, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    rng
}

fn sampling_scale(p: &AbstractProblem) -> f64 {
    if p.scale.is_finite() && p.scale > 1.0 {
        p.scale
    } else {
        1.0
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// A point of `V` with energy norm `radius`; every fourth draw is pushed onto
/// the boundary of the constraint set.
fn draw_v(p: &AbstractProblem, rng: &mut ChaCha8Rng, radius: f64, on_boundary: bool) -> DVector<f64> {
    let mut v = gaussian(rng, p.dim());
    let n = p.metric.norm(&v);
    if n > 0.0 {
        v *= radius / n;
    }
    if on_boundary {
        for c in p.constraint.caps() {
            let gap = c.bound - c.value(&v);
            for (&i, dir) in c.dofs.iter().zip(&c.direction) {
                v[i] += gap * dir;
            }
        }
    }
    v
}

fn draw_state(rng: &mut ChaCha8Rng, n: usize, radius: f64) -> DVector<f64> {
    gaussian(rng, n) * radius
}

type Inputs = BTreeMap<String, Vec<f64>>;

fn draw(check: Check, p: &AbstractProblem, seed: u64, k: usize) -> Inputs {
    let mut rng = sample_rng(seed, k);
    let r = RADII[k % 3] * sampling_scale(p);
    let boundary = k % 4 == 3;
    let s = &p.spaces;
    let t = rng.random_range(0.0..=p.horizon.max(0.0));
    let mut m: Inputs = BTreeMap::new();
    m.insert("t".into(), vec![t]);
    let mut put = |name: &str, v: DVector<f64>| {
        m.insert(name.into(), v.as_slice().to_vec());
    };
    let v1 = draw_v(p, &mut rng, r, boundary);
    // odd samples pair nearby points so local kinks are seen
    let v2 = if k % 2 == 1 {
        &v1 + draw_v(p, &mut rng, 0.1 * r, false)
    } else {
        draw_v(p, &mut rng, r, false)
    };
    match check {
        Check::OperatorA => {
            let l1 = draw_state(&mut rng, s.e.dim(), r);
            let l2 = if k.is_multiple_of(2) { l1.clone() } else { draw_state(&mut rng, s.e.dim(), r) };
            put("lambda1", l1);
            put("lambda2", l2);
        }
        Check::OperatorALambda | Check::OperatorAGrowth => {
            put("lambda1", draw_state(&mut rng, s.e.dim(), r));
            put("lambda2", draw_state(&mut rng, s.e.dim(), r));
        }
        Check::Forcing => {
            put("xi1", draw_state(&mut rng, s.x.dim(), r));
            put("xi2", draw_state(&mut rng, s.x.dim(), r));
        }
        Check::MultivaluedMonotone => {
            put("lambda1", draw_state(&mut rng, s.e.dim(), r));
            put("zeta1", draw_state(&mut rng, s.z.dim(), r));
        }
        Check::PhiAlpha | Check::PhiBeta | Check::PhiConvex => {
            put("eta1", draw_state(&mut rng, s.y.dim(), r));
            put("eta2", draw_state(&mut rng, s.y.dim(), r));
            put("w1", draw_v(p, &mut rng, r, false));
            put("w2", draw_v(p, &mut rng, r, false));
        }
        Check::JRelaxed | Check::JCoupling | Check::JGrowth => {
            put("zeta1", draw_state(&mut rng, s.z.dim(), r));
            put("zeta2", draw_state(&mut rng, s.z.dim(), r));
        }
        Check::TraceNorm | Check::History(_) => {}
    }
    put("v1", v1);
    put("v2", v2);
    m
}

/// `(quotient, slack)` of one sample; the quotient is `None` when its
/// denominator vanishes.
fn evaluate(check: Check, p: &AbstractProblem, claimed: f64, inputs: &Inputs) -> (Option<f64>, f64) {
    let get = |name: &str| DVector::from_column_slice(&inputs[name]);
    let t = inputs["t"][0];
    let v1 = get("v1");
    let v2 = get("v2");
    let dv = &v1 - &v2;
    let ndv = p.metric.norm(&dv);
    let h = &p.constants;
    let s = &p.spaces;
    let tol = |terms: &[f64]| SLACK * (1.0 + terms.iter().map(|x| x.abs()).sum::<f64>());
    let ratio = |num: f64, den: f64| if den > 0.0 { Some(num / den) } else { None };
    match check {
        Check::OperatorA => {
            let (l1, l2) = (get("lambda1"), get("lambda2"));
            let lhs = (p.op_a.eval(t, &l1, &v1) - p.op_a.eval(t, &l2, &v2)).dot(&dv);
            let coupling = h.m_a_bar * s.e.norm(&(&l1 - &l2)) * ndv;
            let rhs = claimed * ndv * ndv - coupling;
            (ratio(lhs + coupling, ndv * ndv), lhs - rhs + tol(&[lhs, rhs, coupling]))
        }
        Check::OperatorALambda => {
            let (l1, l2) = (get("lambda1"), get("lambda2"));
            let num = p.metric.dual_norm(&(p.op_a.eval(t, &l1, &v1) - p.op_a.eval(t, &l2, &v1)));
            let den = s.e.norm(&(&l1 - &l2));
            (ratio(num, den), claimed * den - num + tol(&[num]))
        }
        Check::OperatorAGrowth => {
            let l1 = get("lambda1");
            let a = p.metric.dual_norm(&p.op_a.eval(t, &l1, &v1));
            let fixed = h.a0_max + h.a1 * s.e.norm(&l1);
            let nv = p.metric.norm(&v1);
            (ratio(a - fixed, nv), fixed + claimed * nv - a + tol(&[a, fixed]))
        }
        Check::Forcing => {
            let (x1, x2) = (get("xi1"), get("xi2"));
            let num = p.metric.dual_norm(&(p.forcing.eval(t, &x1) - p.forcing.eval(t, &x2)));
            let den = s.x.norm(&(&x1 - &x2));
            (ratio(num, den), claimed * den - num + tol(&[num]))
        }
        Check::MultivaluedMonotone => {
            let (l, z) = (get("lambda1"), get("zeta1"));
            let side = |v: &DVector<f64>| {
                let mv = p.trace.matrix() * v;
                let sel = p.j.subgrad_select(t, &z, &mv);
                p.op_a.eval(t, &l, v) + p.trace.apply_adjoint(&sel).expect("trace dimension")
            };
            let lhs = (side(&v1) - side(&v2)).dot(&dv);
            (ratio(lhs, ndv * ndv), lhs - claimed * ndv * ndv + tol(&[lhs]))
        }
        Check::PhiAlpha | Check::PhiBeta => {
            let (e1, w1) = (get("eta1"), get("w1"));
            let (e2, w2) = if check == Check::PhiAlpha { (e1.clone(), get("w2")) } else { (get("eta2"), w1.clone()) };
            let lhs = p.phi.value_diff(t, &e1, &w1, &v2, &v1) + p.phi.value_diff(t, &e2, &w2, &v1, &v2);
            let gap = if check == Check::PhiAlpha { p.metric.norm(&(&w1 - &w2)) } else { s.y.norm(&(&e1 - &e2)) };
            let den = gap * ndv;
            (ratio(lhs, den), claimed * den - lhs + tol(&[lhs]))
        }
        Check::PhiConvex => {
            let (e, w) = (get("eta1"), get("w1"));
            let mid = (&v1 + &v2) * 0.5;
            let a = p.phi.value(t, &e, &w, &v1);
            let b = p.phi.value(t, &e, &w, &v2);
            let c = p.phi.value(t, &e, &w, &mid);
            let gap = 0.5 * (a + b) - c;
            (ratio(gap, ndv * ndv), gap + tol(&[a, b, c]))
        }
        Check::JRelaxed | Check::JCoupling => {
            let z1 = get("zeta1");
            let z2 = if check == Check::JRelaxed { z1.clone() } else { get("zeta2") };
            let x1 = p.trace.matrix() * &v1;
            let x2 = p.trace.matrix() * &v2;
            let dx = &x1 - &x2;
            let ndx = s.x.norm(&dx);
            let lhs = p.j.dir_deriv(t, &z1, &x1, &(-&dx)) + p.j.dir_deriv(t, &z2, &x2, &dx);
            if check == Check::JRelaxed {
                (ratio(lhs, ndx * ndx), claimed * ndx * ndx - lhs + tol(&[lhs]))
            } else {
                let relaxed = h.m_j * ndx * ndx;
                let den = s.z.norm(&(&z1 - &z2)) * ndx;
                (ratio(lhs - relaxed, den), relaxed + claimed * den - lhs + tol(&[lhs, relaxed]))
            }
        }
        Check::JGrowth => {
            let z = get("zeta1");
            let x = p.trace.matrix() * &v1;
            let sel = s.x.norm(&p.j.subgrad_select(t, &z, &x));
            let rest = h.c1j * s.z.norm(&z) + h.c2j * s.x.norm(&x);
            (Some(sel - rest), claimed + rest - sel + tol(&[sel, rest]))
        }
        Check::TraceNorm => {
            let num = s.x.norm(&(p.trace.matrix() * &v1));
            let den = p.metric.norm(&v1);
            (ratio(num, den), claimed * den - num + tol(&[num]))
        }
        Check::History(_) => unreachable!("history checks use trajectory pairs"),
    }
}

/// Runs `f` over `0..n` on scoped worker threads; results come back in index
/// order, so reductions over them are deterministic.
fn sweep<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let workers = std::thread::available_parallelism().map_or(1, |w| w.get()).min(n.max(1));
    let chunk = n.div_ceil(workers.max(1)).max(1);
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..n)
            .step_by(chunk)
            .map(|lo| {
                let f = &f;
                scope.spawn(move || (lo..(lo + chunk).min(n)).map(f).collect::<Vec<T>>())
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("audit worker panicked")).collect()
    })
}

fn summarize(samples: usize, pass: bool, worst: Option<usize>) -> String {
    if pass {
        format!("no violation found in {samples} samples")
    } else {
        format!("violation at sample {}", worst.unwrap_or(0))
    }
}

/// One sampled check against the constant stored in the problem.
pub fn audit_check(p: &AbstractProblem, check: Check, samples: usize, seed: u64) -> AuditEntry {
    audit_claim(p, check, check.claimed(p), samples, seed)
}

/// One sampled check against an explicit claim.
pub fn audit_claim(p: &AbstractProblem, check: Check, claimed: f64, samples: usize, seed: u64) -> AuditEntry {
    assert!(samples >= 1, "at least one sample");
    let results = sweep(samples, |k| {
        let inputs = draw(check, p, seed, k);
        let (q, slack) = evaluate(check, p, claimed, &inputs);
        (q, slack, inputs)
    });
    let mut estimate: Option<f64> = None;
    let mut worst: Option<usize> = None;
    for (k, (q, slack, _)) in results.iter().enumerate() {
        if let Some(q) = *q {
            estimate = Some(match estimate {
                None => q,
                Some(e) if check.lower() => e.min(q),
                Some(e) => e.max(q),
            });
        }
        if *slack < 0.0 && worst.is_none_or(|w| *slack < results[w].1) {
            worst = Some(k);
        }
    }
    let pass = worst.is_none();
    AuditEntry {
        name: check.name(),
        check: Some(check),
        claimed,
        estimate: estimate.unwrap_or(0.0),
        samples,
        pass,
        summary: summarize(samples, pass, worst),
        witness: worst.map(|k| Witness {
            seed,
            sample: k,
            slack: results[k].1,
            inputs: results[k].2.clone(),
        }),
    }
}

/// Re-evaluates a witness from its stored inputs and returns the slack.
pub fn replay_witness(p: &AbstractProblem, entry: &AuditEntry) -> Option<f64> {
    let w = entry.witness.as_ref()?;
    match entry.check? {
        Check::History(_) => None,
        check => Some(evaluate(check, p, entry.claimed, &w.inputs).1),
    }
}

/// Regenerates the inputs of sample `k` of a sampled check.
pub fn regenerate(p: &AbstractProblem, check: Check, seed: u64, k: usize) -> BTreeMap<String, Vec<f64>> {
    draw(check, p, seed, k)
}

fn random_trajectory(p: &AbstractProblem, grid: TimeGrid, rng: &mut ChaCha8Rng, radius: f64) -> Trajectory {
    Trajectory::from_fn(grid, |_| draw_v(p, rng, radius, false))
}

/// Lipschitz audits of `R₁..R₄` on random trajectory pairs; each pair yields
/// one quotient per grid node.
pub fn audit_history(
    p: &AbstractProblem,
    grid: TimeGrid,
    rule: QuadratureRule,
    pairs: usize,
    seed: u64,
) -> Result<Vec<AuditEntry>, HistoryError> {
    let s = sampling_scale(p);
    let traj: Vec<(Trajectory, Trajectory)> = (0..pairs.max(1))
        .map(|k| {
            let mut rng = sample_rng(seed, k);
            let r = RADII[k % 3] * s;
            let a = random_trajectory(p, grid, &mut rng, r);
            let b = random_trajectory(p, grid, &mut rng, r);
            (a, b)
        })
        .collect();
    let outputs = [&p.spaces.e, &p.spaces.x, &p.spaces.y, &p.spaces.z];
    let mut out = Vec::new();
    for (i, op) in p.history.all().into_iter().enumerate() {
        let claimed = p.constants.c_r[i];
        let rep = audit_history_lipschitz(op, rule, &traj, &p.metric, outputs[i], claimed)?;
        let samples = traj.len() * grid.len() - rep.skipped_nodes;
        let witness = if rep.pass {
            None
        } else {
            rep.witness.map(|(pair, node)| Witness {
                seed,
                sample: pair,
                slack: claimed - rep.max_quotient,
                inputs: BTreeMap::from([("node".to_string(), vec![node as f64])]),
            })
        };
        out.push(AuditEntry {
            name: Check::History(i).name(),
            check: Some(Check::History(i)),
            claimed,
            estimate: rep.max_quotient,
            samples,
            pass: rep.pass,
            summary: summarize(samples, rep.pass, rep.witness.map(|w| w.0)),
            witness,
        });
    }
    Ok(out)
}

pub const BY_CONSTRUCTION: [&str; 2] = [
    "upper semicontinuity of j0 along weakly convergent sequences: holds by construction for shipped prototypes (continuity + finite dimension)",
    "lower semicontinuity of phi in its quasi argument along weakly convergent sequences: holds by construction for shipped prototypes (continuity + finite dimension)",
];

/// Every sampled check plus the history audits and the smallness margin.
pub fn audit_problem(
    p: &AbstractProblem,
    grid: TimeGrid,
    rule: QuadratureRule,
    samples: usize,
    seed: u64,
) -> Result<AuditReport, HistoryError> {
    let mut entries: Vec<AuditEntry> = Check::SAMPLED.iter().map(|&c| audit_check(p, c, samples, seed)).collect();
    entries.extend(audit_history(p, grid, rule, samples.div_ceil(50).max(2), seed)?);
    Ok(AuditReport {
        instance: p.name.clone(),
        seed,
        samples,
        smallness: h0_margin(p),
        contact_smallness: None,
        entries,
        by_construction: BY_CONSTRUCTION.iter().map(|s| s.to_string()).collect(),
    })
}

/// The abstract audit of a contact instance plus the scalar law scans, the
/// relaxed monotonicity of the normal damping potential and the contact
/// smallness condition.
pub fn audit_contact(cp: &ContactProblem, samples: usize, seed: u64) -> Result<AuditReport, HistoryError> {
    let scn = &cp.scenario;
    let mut rep = audit_problem(&cp.problem, scn.grid, scn.rule(), samples, seed)?;
    let laws = &scn.spec.laws;
    let scans = 20 * samples.max(50) + 1;
    for s in scan_laws(laws, scans, 10.0 * (1.0 + laws.compliance_depth + laws.gap)) {
        rep.entries.push(AuditEntry {
            name: format!("law-{}", s.name),
            check: None,
            claimed: s.declared,
            estimate: s.observed,
            samples: scans,
            pass: s.pass,
            summary: summarize(scans, s.pass, None),
            witness: None,
        });
    }
    let jnu = laws.normal_potential();
    let rm = check_relaxed_monotonicity(&jnu, crate::problem::ScalarPotential::relaxed_constant(&jnu), 601, 3.0);
    rep.entries.push(AuditEntry {
        name: "normal-damping-relaxed-monotone".into(),
        check: None,
        claimed: rm.claimed,
        estimate: rm.min_quotient,
        samples: rm.pairs,
        pass: rm.pass,
        summary: summarize(rm.pairs, rm.pass, None),
        witness: rm.witness.map(|(a, b)| Witness {
            seed,
            sample: 0,
            slack: rm.min_quotient,
            inputs: BTreeMap::from([("r1".to_string(), vec![a]), ("r2".to_string(), vec![b])]),
        }),
    });
    rep.contact_smallness = Some(cp.smallness.clone());
    Ok(rep)
}
