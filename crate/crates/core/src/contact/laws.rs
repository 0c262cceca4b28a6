//! Constitutive data: the viscoelastic material and the contact laws.

use serde::{Deserialize, Serialize};

use crate::problem::{Modulation, PiecewiseLinearSlope, ScalarPotential};

/// Per-element symmetric tensor stored as `(xx, yy, xy)`.
pub type Sym2 = [f64; 3];

/// Frobenius inner product of two symmetric tensors.
pub fn sym_inner(a: &Sym2, b: &Sym2) -> f64 {
    a[0] * b[0] + a[1] * b[1] + 2.0 * a[2] * b[2]
}

/// `2μ ε + λ tr(ε) I`.
pub fn isotropic(two_mu: f64, lambda: f64, e: &Sym2) -> Sym2 {
    let tr = e[0] + e[1];
    [two_mu * e[0] + lambda * tr, two_mu * e[1] + lambda * tr, two_mu * e[2]]
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("invalid {field}: {reason}")]
pub struct LawError {
    pub field: &'static str,
    pub reason: String,
}

fn check(ok: bool, field: &'static str, reason: &str) -> Result<(), LawError> {
    if ok {
        Ok(())
    } else {
        Err(LawError {
            field,
            reason: reason.to_string(),
        })
    }
}

/// Viscosity `𝒜ε = 2θ₁ε + θ₂ tr(ε) I`, elasticity `ℬε = 2μ_e ε + λ_e tr(ε) I`
/// and relaxation `𝒞(s) = κ e^{−s/τ} ℬ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Material {
    pub theta1: f64,
    pub theta2: f64,
    pub lame_lambda: f64,
    pub lame_mu: f64,
    #[serde(default)]
    pub kappa: f64,
    #[serde(default = "unit")]
    pub relaxation_time: f64,
}

fn unit() -> f64 {
    1.0
}

impl Material {
    pub fn validate(&self) -> Result<(), LawError> {
        let all = [
            self.theta1,
            self.theta2,
            self.lame_lambda,
            self.lame_mu,
            self.kappa,
            self.relaxation_time,
        ];
        check(all.iter().all(|x| x.is_finite()), "material", "all constants must be finite")?;
        check(self.theta1 > 0.0, "theta1", "must be positive")?;
        check(self.theta1 + self.theta2 > 0.0, "theta2", "θ₁ + θ₂ must be positive")?;
        check(self.kappa >= 0.0, "kappa", "must be nonnegative")?;
        check(self.relaxation_time > 0.0, "relaxation_time", "must be positive")
    }

    pub fn viscosity(&self, e: &Sym2) -> Sym2 {
        isotropic(2.0 * self.theta1, self.theta2, e)
    }

    pub fn elasticity(&self, e: &Sym2) -> Sym2 {
        isotropic(2.0 * self.lame_mu, self.lame_lambda, e)
    }

    /// Scalar factor `κ e^{−s/τ}` of the relaxation tensor.
    pub fn relaxation(&self, s: f64) -> f64 {
        self.kappa * (-s / self.relaxation_time).exp()
    }

    /// Strong monotonicity of `𝒜`: `2θ₁`, reduced when `θ₂ < 0` because
    /// `tr(ε)² ≤ 2|ε|²` in two dimensions.
    pub fn viscosity_monotonicity(&self) -> f64 {
        2.0 * self.theta1 + 2.0 * self.theta2.min(0.0)
    }

    /// `|𝒜ε| ≤ (2θ₁ + 2|θ₂|)|ε|`.
    pub fn viscosity_bound(&self) -> f64 {
        2.0 * self.theta1 + 2.0 * self.theta2.abs()
    }

    /// `|ℬε| ≤ (2μ_e + 2|λ_e|)|ε|`.
    pub fn elasticity_bound(&self) -> f64 {
        2.0 * self.lame_mu.abs() + 2.0 * self.lame_lambda.abs()
    }
}

/// `σ = 𝒜ε(u') + ℬε(u) + Σₖ ωₖ 𝒞(t − sₖ) ε(u'(sₖ))`, where `memory` lists
/// the quadrature terms `(ωₖ, t − sₖ, ε(u'(sₖ)))`.
pub fn constitutive_stress(
    material: &Material,
    strain_rate: &Sym2,
    strain: &Sym2,
    memory: &[(f64, f64, Sym2)],
) -> Sym2 {
    let v = material.viscosity(strain_rate);
    let e = material.elasticity(strain);
    let mut s = [v[0] + e[0], v[1] + e[1], v[2] + e[2]];
    for (weight, age, rate) in memory {
        let c = weight * material.relaxation(*age);
        let b = material.elasticity(rate);
        for i in 0..3 {
            s[i] += c * b[i];
        }
    }
    s
}

/// Parameters of the boundary laws on the unilateral and compliance parts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryLaws {
    /// `F₀` in `F_b(r) = F₀(1 + c_f r/(1 + r))`.
    pub friction_bound: f64,
    /// `c_f`.
    pub friction_growth: f64,
    /// `k₁`, the damper value at large normal displacement.
    pub damper_min: f64,
    /// `k*`, the damper value at zero normal displacement.
    pub damper_max: f64,
    /// `p*`, saturation value of the normal compliance.
    pub compliance_max: f64,
    /// `r*`, penetration at which the compliance saturates.
    pub compliance_depth: f64,
    /// `μ₀` in `μ(r) = μ₀/(1 + r)`.
    pub friction_coefficient: f64,
    /// Bound `g` on the normal velocity.
    pub gap: f64,
}

impl BoundaryLaws {
    pub fn validate(&self) -> Result<(), LawError> {
        let all = [
            self.friction_bound,
            self.friction_growth,
            self.damper_min,
            self.damper_max,
            self.compliance_max,
            self.compliance_depth,
            self.friction_coefficient,
            self.gap,
        ];
        check(all.iter().all(|x| x.is_finite()), "laws", "all constants must be finite")?;
        check(self.friction_bound >= 0.0, "friction_bound", "must be nonnegative")?;
        check(self.friction_growth >= 0.0, "friction_growth", "must be nonnegative")?;
        check(self.damper_min >= 0.0, "damper_min", "must be nonnegative")?;
        check(self.damper_max >= self.damper_min, "damper_max", "must be at least damper_min")?;
        check(self.compliance_max >= 0.0, "compliance_max", "must be nonnegative")?;
        check(self.compliance_depth > 0.0, "compliance_depth", "must be positive")?;
        check(self.friction_coefficient >= 0.0, "friction_coefficient", "must be nonnegative")?;
        check(self.gap > 0.0, "gap", "must be positive")
    }

    /// `F_b(r)`; the slip argument is nonnegative, `|r|` is used regardless.
    pub fn friction_bound_at(&self, r: f64) -> f64 {
        let a = r.abs();
        self.friction_bound * (1.0 + self.friction_growth * a / (1.0 + a))
    }

    pub fn friction_bound_lipschitz(&self) -> f64 {
        self.friction_bound * self.friction_growth
    }

    pub fn friction_bound_max(&self) -> f64 {
        self.friction_bound * (1.0 + self.friction_growth)
    }

    pub fn damper(&self) -> Modulation {
        Modulation::Damper {
            k_min: self.damper_min,
            k_max: self.damper_max,
        }
    }

    pub fn damper_at(&self, r: f64) -> f64 {
        self.damper().eval(r)
    }

    pub fn damper_lipschitz(&self) -> f64 {
        self.damper().lipschitz()
    }

    /// `p(r) = p* clamp(r, 0, r*)/r*`.
    pub fn compliance_at(&self, r: f64) -> f64 {
        self.compliance_max * r.clamp(0.0, self.compliance_depth) / self.compliance_depth
    }

    pub fn compliance_lipschitz(&self) -> f64 {
        self.compliance_max / self.compliance_depth
    }

    /// `μ(r) = μ₀/(1 + |r|)`.
    pub fn friction_coefficient_at(&self, r: f64) -> f64 {
        self.friction_coefficient / (1.0 + r.abs())
    }

    pub fn friction_coefficient_lipschitz(&self) -> f64 {
        self.friction_coefficient
    }

    /// The potential `j_ν` whose slope is the normal damping law.
    pub fn normal_potential(&self) -> PiecewiseLinearSlope {
        PiecewiseLinearSlope::normal_damping()
    }
}

/// Largest violation found when scanning a law against a declared bound.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LawScan {
    pub name: &'static str,
    pub declared: f64,
    pub observed: f64,
    pub pass: bool,
}

/// Dense 1-D scans of every law: declared Lipschitz constants, bounds, the
/// vanishing of `p` for separation and `k ∈ [k₁, k*]`.
pub fn scan_laws(laws: &BoundaryLaws, samples: usize, radius: f64) -> Vec<LawScan> {
    let n = samples.max(2);
    let grid: Vec<f64> = (0..n).map(|i| -radius + 2.0 * radius * i as f64 / (n - 1) as f64).collect();
    let tol = 1e-12;
    let lip = |name: &'static str, f: &dyn Fn(f64) -> f64, declared: f64| {
        let observed = grid
            .windows(2)
            .map(|w| (f(w[1]) - f(w[0])).abs() / (w[1] - w[0]))
            .fold(0.0, f64::max);
        LawScan {
            name,
            declared,
            observed,
            pass: observed <= declared * (1.0 + 1e-9) + tol,
        }
    };
    let bound = |name: &'static str, f: &dyn Fn(f64) -> f64, declared: f64| {
        let observed = grid.iter().map(|&r| f(r).abs()).fold(0.0, f64::max);
        LawScan {
            name,
            declared,
            observed,
            pass: observed <= declared + tol,
        }
    };
    let g = laws.normal_potential();
    let k_range = grid
        .iter()
        .map(|&r| {
            let k = laws.damper_at(r);
            (laws.damper_min - k).max(k - laws.damper_max).max(0.0)
        })
        .fold(0.0, f64::max);
    let p_negative = grid
        .iter()
        .filter(|&&r| r < 0.0)
        .map(|&r| laws.compliance_at(r).abs())
        .fold(0.0, f64::max);
    vec![
        lip("friction bound Lipschitz", &|r| laws.friction_bound_at(r), laws.friction_bound_lipschitz()),
        bound("friction bound magnitude", &|r| laws.friction_bound_at(r), laws.friction_bound_max()),
        lip("damper Lipschitz", &|r| laws.damper_at(r), laws.damper_lipschitz()),
        LawScan {
            name: "damper range",
            declared: 0.0,
            observed: k_range,
            pass: k_range <= tol,
        },
        lip("compliance Lipschitz", &|r| laws.compliance_at(r), laws.compliance_lipschitz()),
        bound("compliance magnitude", &|r| laws.compliance_at(r), laws.compliance_max),
        LawScan {
            name: "compliance vanishes for separation",
            declared: 0.0,
            observed: p_negative,
            pass: p_negative == 0.0,
        },
        lip(
            "friction coefficient Lipschitz",
            &|r| laws.friction_coefficient_at(r),
            laws.friction_coefficient_lipschitz(),
        ),
        bound(
            "friction coefficient magnitude",
            &|r| laws.friction_coefficient_at(r),
            laws.friction_coefficient,
        ),
        bound(
            "normal damping slope bound",
            &|r| g.deriv_right(r),
            g.subgrad_bound().unwrap_or(f64::INFINITY),
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laws() -> BoundaryLaws {
        BoundaryLaws {
            friction_bound: 0.3,
            friction_growth: 0.5,
            damper_min: 0.01,
            damper_max: 0.02,
            compliance_max: 0.1,
            compliance_depth: 0.05,
            friction_coefficient: 0.3,
            gap: 0.05,
        }
    }

    #[test]
    fn laws_match_their_formulas() {
        let l = laws();
        assert!((l.friction_bound_at(1.0) - 0.3 * 1.25).abs() < 1e-15);
        assert_eq!(l.damper_at(0.0), 0.02);
        assert!((l.damper_at(1.0) - 0.015).abs() < 1e-15);
        assert_eq!(l.compliance_at(-1.0), 0.0);
        assert!((l.compliance_at(0.025) - 0.05).abs() < 1e-15);
        assert!((l.compliance_at(1.0) - 0.1).abs() < 1e-15);
        assert!((l.friction_coefficient_at(1.0) - 0.15).abs() < 1e-15);
    }

    #[test]
    fn scans_pass_for_declared_constants() {
        for s in scan_laws(&laws(), 4001, 5.0) {
            assert!(s.pass, "{s:?}");
        }
    }

    #[test]
    fn compliance_lipschitz_constant_is_attained() {
        let s = scan_laws(&laws(), 4001, 1.0);
        let c = s.iter().find(|s| s.name == "compliance Lipschitz").unwrap();
        assert!(c.observed > 0.99 * c.declared, "{c:?}");
    }

    #[test]
    fn stress_without_memory_by_hand() {
        let m = Material {
            theta1: 1.0,
            theta2: 0.5,
            lame_lambda: 2.0,
            lame_mu: 3.0,
            kappa: 0.0,
            relaxation_time: 1.0,
        };
        let rate = [1.0, 2.0, 0.5];
        let strain = [0.1, -0.2, 0.3];
        let s = constitutive_stress(&m, &rate, &strain, &[]);
        // 2·1·rate + 0.5·3·I  plus  6·strain + 2·(−0.1)·I
        let expect = [2.0 + 1.5 + 0.6 - 0.2, 4.0 + 1.5 - 1.2 - 0.2, 1.0 + 1.8];
        for i in 0..3 {
            assert!((s[i] - expect[i]).abs() < 1e-14);
        }
        assert_eq!(constitutive_stress(&m, &[0.0; 3], &[0.0; 3], &[]), [0.0; 3]);
    }

    #[test]
    fn memory_term_converges_to_closed_form() {
        // constant unit rate: ∫₀ᵗ κ e^{−(t−s)/τ} ds = κ τ (1 − e^{−t/τ})
        let m = Material {
            theta1: 1.0,
            theta2: 0.0,
            lame_lambda: 0.0,
            lame_mu: 0.5,
            kappa: 0.7,
            relaxation_time: 0.4,
        };
        let t = 1.0;
        let exact = 0.7 * 0.4 * (1.0 - (-t / 0.4f64).exp());
        let err = |n: usize| {
            let dt = t / n as f64;
            let memory: Vec<_> = (0..n).map(|k| (dt, t - k as f64 * dt, [1.0, 0.0, 0.0])).collect();
            (constitutive_stress(&m, &[0.0; 3], &[0.0; 3], &memory)[0] - exact).abs()
        };
        let r = err(40) / err(80);
        assert!((1.7..=2.3).contains(&r), "{r}");
    }

    #[test]
    fn monotonicity_constant_accounts_for_negative_theta2() {
        let mut m = Material {
            theta1: 1.0,
            theta2: 0.5,
            lame_lambda: 1.0,
            lame_mu: 1.0,
            kappa: 0.0,
            relaxation_time: 1.0,
        };
        assert_eq!(m.viscosity_monotonicity(), 2.0);
        m.theta2 = -0.25;
        assert_eq!(m.viscosity_monotonicity(), 1.5);
        // the pure shear direction attains 2θ₁, the dilatation 2θ₁ + 2θ₂
        let e = [1.0, 1.0, 0.0];
        let q = sym_inner(&m.viscosity(&e), &e) / sym_inner(&e, &e);
        assert!((q - 1.5).abs() < 1e-15);
    }
}
