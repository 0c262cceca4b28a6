//! Scenario files: mesh, material, laws, loads, grid and tolerances in TOML.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::assembly::DofMap;
use super::laws::{BoundaryLaws, LawError, Material};
use super::mesh::{BoundaryPart, Edge, MeshError, RectMesh};
use crate::history::{QuadratureRule, TimeGrid};
use crate::problem::LoadSeries;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSpec {
    pub length: f64,
    pub height: f64,
    pub nx: usize,
    pub ny: usize,
    /// Rigid rotation of geometry and loads, in degrees.
    #[serde(default)]
    pub rotation_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSpec {
    pub horizon: f64,
    pub steps: usize,
    #[serde(default)]
    pub rule: QuadratureRule,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSpec {
    pub inner_tol: f64,
    pub outer_tol: f64,
    pub picard_tol: f64,
    pub max_inner: usize,
    pub max_outer: usize,
    pub max_picard: usize,
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self {
            inner_tol: 1e-10,
            outer_tol: 1e-10,
            picard_tol: 1e-8,
            max_inner: 50_000,
            max_outer: 200,
            max_picard: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditSpec {
    pub samples: usize,
    pub seed: u64,
    /// Factor applied to the left side of the contact smallness condition.
    pub safety_factor: f64,
}

impl Default for AuditSpec {
    fn default() -> Self {
        Self {
            samples: 500,
            seed: 0,
            safety_factor: 1.05,
        }
    }
}

/// Vector-valued samples, linear between `times` and constant outside.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesSpec {
    pub times: Vec<f64>,
    pub values: Vec<[f64; 2]>,
}

/// Traction per unit length on a whole edge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TractionSpec {
    pub edge: Edge,
    pub times: Vec<f64>,
    pub values: Vec<[f64; 2]>,
}

/// Point forces on listed nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodalLoadSpec {
    pub nodes: Vec<usize>,
    pub times: Vec<f64>,
    pub values: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoadSpec {
    /// Body force per unit area.
    pub body: Option<SeriesSpec>,
    pub traction: Vec<TractionSpec>,
    pub nodal: Vec<NodalLoadSpec>,
}

/// Initial displacement on listed nodes; zero elsewhere.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialSpec {
    pub nodes: Vec<usize>,
    pub values: Vec<[f64; 2]>,
}

/// The document as written on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    #[serde(default)]
    pub name: String,
    pub mesh: MeshSpec,
    pub material: Material,
    pub laws: BoundaryLaws,
    pub time: TimeSpec,
    #[serde(default)]
    pub loads: LoadSpec,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub audit: AuditSpec,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ScenarioError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Law(#[from] LawError),
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(msg.into())
}

/// 1-based line and column of a byte offset.
pub fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(text.len());
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let start = before.rfind('\n').map_or(0, |i| i + 1);
    (line, before[start..].chars().count() + 1)
}

/// A validated scenario with its mesh and grid built.
#[derive(Clone, Debug, PartialEq)]
pub struct ContactScenario {
    pub spec: ScenarioSpec,
    pub mesh: RectMesh,
    pub grid: TimeGrid,
}

fn check_series(what: &str, times: &[f64], values: usize) -> Result<(), ScenarioError> {
    if times.is_empty() || times.len() != values {
        return Err(invalid(format!("{what}: times and values must be nonempty and equally long")));
    }
    if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid(format!("{what}: times must be finite and strictly increasing")));
    }
    Ok(())
}

fn finite(what: &str, values: &[[f64; 2]]) -> Result<(), ScenarioError> {
    if values.iter().flatten().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(invalid(format!("{what}: values must be finite")))
    }
}

fn interpolate(times: &[f64], values: &[[f64; 2]], t: f64) -> [f64; 2] {
    if t <= times[0] {
        return values[0];
    }
    let last = times.len() - 1;
    if t >= times[last] {
        return values[last];
    }
    let k = times.partition_point(|&s| s <= t) - 1;
    let s = (t - times[k]) / (times[k + 1] - times[k]);
    [
        values[k][0] * (1.0 - s) + values[k + 1][0] * s,
        values[k][1] * (1.0 - s) + values[k + 1][1] * s,
    ]
}

impl ContactScenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let spec: ScenarioSpec = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((1, 1), |s| line_column(text, s.start));
            ScenarioError::Parse {
                line,
                column,
                message: e.message().trim().to_string(),
            }
        })?;
        Self::from_spec(spec)
    }

    pub fn from_spec(spec: ScenarioSpec) -> Result<Self, ScenarioError> {
        let m = &spec.mesh;
        let mesh = RectMesh::new(m.length, m.height, m.nx, m.ny, m.rotation_deg.to_radians())?;
        spec.material.validate()?;
        spec.laws.validate()?;
        let grid = TimeGrid::new(spec.time.horizon, spec.time.steps)
            .map_err(|e| invalid(format!("time: {e}")))?;
        let s = &spec.solver;
        for (name, tol) in [
            ("inner_tol", s.inner_tol),
            ("outer_tol", s.outer_tol),
            ("picard_tol", s.picard_tol),
        ] {
            if !(tol.is_finite() && tol > 0.0) {
                return Err(invalid(format!("solver.{name} must be positive")));
            }
        }
        if s.max_inner == 0 || s.max_outer == 0 || s.max_picard == 0 {
            return Err(invalid("solver iteration limits must be positive"));
        }
        let a = &spec.audit;
        if !(a.safety_factor.is_finite() && a.safety_factor >= 1.0) {
            return Err(invalid("audit.safety_factor must be at least 1"));
        }
        if let Some(b) = &spec.loads.body {
            check_series("loads.body", &b.times, b.values.len())?;
            finite("loads.body", &b.values)?;
        }
        for (i, tr) in spec.loads.traction.iter().enumerate() {
            let what = format!("loads.traction[{i}]");
            check_series(&what, &tr.times, tr.values.len())?;
            finite(&what, &tr.values)?;
            if !matches!(tr.edge, Edge::Top | Edge::Right) {
                return Err(invalid(format!("{what}: tractions act on the top or right edge only")));
            }
        }
        let n = mesh.node_count();
        for (i, nl) in spec.loads.nodal.iter().enumerate() {
            let what = format!("loads.nodal[{i}]");
            check_series(&what, &nl.times, nl.values.len())?;
            finite(&what, &nl.values)?;
            if let Some(&bad) = nl.nodes.iter().find(|&&k| k >= n) {
                return Err(invalid(format!("{what}: node {bad} out of range")));
            }
        }
        let init = &spec.initial;
        if init.nodes.len() != init.values.len() {
            return Err(invalid("initial: nodes and values must be equally long"));
        }
        finite("initial", &init.values)?;
        for (&k, v) in init.nodes.iter().zip(&init.values) {
            if k >= n {
                return Err(invalid(format!("initial: node {k} out of range")));
            }
            if mesh.part(k) == Some(BoundaryPart::Clamped) && (v[0] != 0.0 || v[1] != 0.0) {
                return Err(invalid(format!("initial: node {k} is clamped and must not move")));
            }
        }
        Ok(Self { spec, mesh, grid })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.spec).expect("scenario serializes")
    }

    pub fn rule(&self) -> QuadratureRule {
        self.spec.time.rule
    }

    /// Every load sample time, merged and sorted.
    fn load_times(&self) -> Vec<f64> {
        let l = &self.spec.loads;
        let mut ts: Vec<f64> = l
            .body
            .iter()
            .flat_map(|b| b.times.iter())
            .chain(l.traction.iter().flat_map(|t| t.times.iter()))
            .chain(l.nodal.iter().flat_map(|t| t.times.iter()))
            .copied()
            .collect();
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        ts
    }

    /// Consistent nodal forces (reference frame rotated with the mesh) at `t`.
    pub fn nodal_forces(&self, t: f64) -> Vec<[f64; 2]> {
        let mesh = &self.mesh;
        let mut f = vec![[0.0; 2]; mesh.node_count()];
        let l = &self.spec.loads;
        if let Some(b) = &l.body {
            let v = mesh.rotate(interpolate(&b.times, &b.values, t));
            for e in 0..mesh.triangles.len() {
                let share = mesh.area(e) / 3.0;
                for &n in &mesh.triangles[e] {
                    f[n][0] += share * v[0];
                    f[n][1] += share * v[1];
                }
            }
        }
        for tr in &l.traction {
            let v = mesh.rotate(interpolate(&tr.times, &tr.values, t));
            for (a, b) in mesh.edge_segments(tr.edge) {
                let share = 0.5 * mesh.segment_length(a, b);
                for n in [a, b] {
                    f[n][0] += share * v[0];
                    f[n][1] += share * v[1];
                }
            }
        }
        for nl in &l.nodal {
            let v = mesh.rotate(interpolate(&nl.times, &nl.values, t));
            for &n in &nl.nodes {
                f[n][0] += v[0];
                f[n][1] += v[1];
            }
        }
        f
    }

    /// The load functional as a time series of residual vectors.
    pub fn load_series(&self, dofs: &DofMap) -> LoadSeries {
        let times = self.load_times();
        if times.len() <= 1 {
            let t = times.first().copied().unwrap_or(0.0);
            return LoadSeries::Constant(dofs.from_nodal(&self.nodal_forces(t)));
        }
        let values: Vec<DVector<f64>> = times.iter().map(|&t| dofs.from_nodal(&self.nodal_forces(t))).collect();
        LoadSeries::PiecewiseLinear { times, values }
    }

    /// Largest load component magnitude as written (tractions, body forces
    /// and point forces alike).
    pub fn load_scale(&self) -> f64 {
        let l = &self.spec.loads;
        l.body
            .iter()
            .flat_map(|b| b.values.iter())
            .chain(l.traction.iter().flat_map(|t| t.values.iter()))
            .chain(l.nodal.iter().flat_map(|t| t.values.iter()))
            .flatten()
            .fold(0.0, |m: f64, x| m.max(x.abs()))
    }

    /// Initial displacement as a DoF vector.
    pub fn initial_displacement(&self, dofs: &DofMap) -> DVector<f64> {
        let mut nodal = vec![[0.0; 2]; self.mesh.node_count()];
        for (&k, v) in self.spec.initial.nodes.iter().zip(&self.spec.initial.values) {
            nodal[k] = self.mesh.rotate(*v);
        }
        dofs.from_nodal(&nodal)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[mesh]
length = 2.0
height = 1.0
nx = 4
ny = 2

[material]
theta1 = 1.0
theta2 = 0.5
lame_lambda = 1.0
lame_mu = 1.0

[laws]
friction_bound = 0.3
friction_growth = 0.5
damper_min = 0.01
damper_max = 0.02
compliance_max = 0.1
compliance_depth = 0.05
friction_coefficient = 0.3
gap = 0.05

[time]
horizon = 1.0
steps = 4

[[loads.traction]]
edge = "top"
times = [0.0, 1.0]
values = [[0.0, 0.0], [0.0, -2.0]]
"#;

    #[test]
    fn minimal_file_parses_with_defaults() {
        let s = ContactScenario::parse(MINIMAL).unwrap();
        assert_eq!(s.spec.solver, SolverSpec::default());
        assert_eq!(s.rule(), QuadratureRule::LeftRectangle);
        assert_eq!(s.load_scale(), 2.0);
        let back = ContactScenario::parse(&s.to_toml()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn traction_is_distributed_consistently() {
        let s = ContactScenario::parse(MINIMAL).unwrap();
        let f = s.nodal_forces(0.5);
        let total: f64 = f.iter().map(|v| v[1]).sum();
        // −1 per unit length on a top edge of length 2
        assert!((total + 2.0).abs() < 1e-14);
        assert!((f[s.mesh.node_id(2, 2)][1] + 0.5).abs() < 1e-14);
        assert!((f[s.mesh.node_id(4, 2)][1] + 0.25).abs() < 1e-14);
    }

    #[test]
    fn unknown_key_reports_position() {
        let text = MINIMAL.replace("gap = 0.05", "gap = 0.05\ngapp = 1.0");
        match ContactScenario::parse(&text) {
            Err(ScenarioError::Parse { line, column, message }) => {
                assert_eq!(line, 23, "{message}");
                assert_eq!(column, 1);
                assert!(message.contains("gapp"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn syntax_error_reports_position() {
        let text = MINIMAL.replace("nx = 4", "nx = = 4");
        assert!(matches!(ContactScenario::parse(&text), Err(ScenarioError::Parse { line: 5, .. })));
    }

    #[test]
    fn semantic_errors_are_rejected() {
        let bad_edge = MINIMAL.replace("edge = \"top\"", "edge = \"bottom\"");
        assert!(matches!(ContactScenario::parse(&bad_edge), Err(ScenarioError::Invalid(_))));
        let bad_gap = MINIMAL.replace("gap = 0.05", "gap = -1.0");
        assert!(matches!(ContactScenario::parse(&bad_gap), Err(ScenarioError::Law(_))));
        let clamped = format!("{MINIMAL}\n[initial]\nnodes = [0]\nvalues = [[0.1, 0.0]]\n");
        assert!(matches!(ContactScenario::parse(&clamped), Err(ScenarioError::Invalid(_))));
    }

    #[test]
    fn line_column_counts_from_one() {
        assert_eq!(line_column("ab\ncd", 0), (1, 1));
        assert_eq!(line_column("ab\ncd", 4), (2, 2));
    }
}
