//! Linear-triangle assembly: strain operator, energy Gram matrix, traces.

use nalgebra::{DMatrix, DVector};

use super::laws::Sym2;
use super::mesh::{BoundaryPart, Edge, RectMesh};
use crate::spaces::{DiagonalMetric, EnergyMetric, SpaceError, TraceOperator};

#[derive(Debug, thiserror::Error)]
pub enum AssemblyError {
    #[error("element {0} has non-positive area")]
    Degenerate(usize),
    #[error("energy Gram matrix is not positive definite")]
    Singular(#[source] SpaceError),
    #[error(transparent)]
    Space(#[from] SpaceError),
}

/// Numbering of the unknowns after eliminating clamped nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct DofMap {
    slot: Vec<Option<usize>>,
    nodes: Vec<usize>,
}

impl DofMap {
    pub fn new(mesh: &RectMesh) -> Self {
        let mut slot = vec![None; mesh.node_count()];
        let mut nodes = Vec::new();
        for (n, s) in slot.iter_mut().enumerate() {
            if mesh.part(n) != Some(BoundaryPart::Clamped) {
                *s = Some(nodes.len());
                nodes.push(n);
            }
        }
        Self { slot, nodes }
    }

    pub fn dim(&self) -> usize {
        2 * self.nodes.len()
    }

    /// DoF of component `c` at `node`, `None` if the node is clamped.
    pub fn dof(&self, node: usize, c: usize) -> Option<usize> {
        self.slot[node].map(|s| 2 * s + c)
    }

    /// Free nodes in DoF order.
    pub fn free_nodes(&self) -> &[usize] {
        &self.nodes
    }

    /// Nodal vector `(u_x, u_y)` of `v`; zero at clamped nodes.
    pub fn nodal(&self, v: &DVector<f64>, node: usize) -> [f64; 2] {
        match self.slot[node] {
            Some(s) => [v[2 * s], v[2 * s + 1]],
            None => [0.0, 0.0],
        }
    }

    /// DoF vector from per-node values (clamped entries are dropped).
    pub fn from_nodal(&self, values: &[[f64; 2]]) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim());
        for (s, &n) in self.nodes.iter().enumerate() {
            v[2 * s] = values[n][0];
            v[2 * s + 1] = values[n][1];
        }
        v
    }
}

/// Everything the contact problem needs from the mesh.
#[derive(Clone, Debug)]
pub struct AssembledSpaces {
    pub dofs: DofMap,
    /// `ε: DoFs → (xx, yy, xy)` per element, `3·n_el × n_dof`.
    pub strain: DMatrix<f64>,
    /// `area · (1, 1, 2)` per element, so that the weighted sum is `∫ σ : τ`.
    pub stress_metric: DiagonalMetric,
    pub metric: EnergyMetric,
    pub unilateral: Vec<usize>,
    pub compliance: Vec<usize>,
    /// Lumped weights of the nodes in `unilateral`.
    pub unilateral_weights: DVector<f64>,
    pub compliance_weights: DVector<f64>,
    pub normal: [f64; 2],
    pub tangent: [f64; 2],
    /// Normal trace on the unilateral part, the operator `M`.
    pub normal_trace: TraceOperator,
    /// Full trace on all non-clamped boundary nodes.
    pub boundary_trace: TraceOperator,
}

/// Strain-displacement rows of one element: `(xx, yy, xy)` against the six
/// local DoFs `(x₀, y₀, x₁, y₁, x₂, y₂)`.
pub fn element_strain(mesh: &RectMesh, e: usize) -> [[f64; 6]; 3] {
    let g = mesh.gradients(e);
    let mut b = [[0.0; 6]; 3];
    for a in 0..3 {
        b[0][2 * a] = g[a][0];
        b[1][2 * a + 1] = g[a][1];
        b[2][2 * a] = 0.5 * g[a][1];
        b[2][2 * a + 1] = 0.5 * g[a][0];
    }
    b
}

/// Block-diagonal matrix of `ε ↦ 2μ ε + λ tr(ε) I` over `elements` blocks.
pub fn isotropic_block(two_mu: f64, lambda: f64, elements: usize) -> DMatrix<f64> {
    let mut c = DMatrix::zeros(3 * elements, 3 * elements);
    for e in 0..elements {
        let o = 3 * e;
        c[(o, o)] = two_mu + lambda;
        c[(o, o + 1)] = lambda;
        c[(o + 1, o)] = lambda;
        c[(o + 1, o + 1)] = two_mu + lambda;
        c[(o + 2, o + 2)] = two_mu;
    }
    c
}

fn nodal_trace(
    dofs: &DofMap,
    nodes: &[usize],
    directions: &[[f64; 2]],
    weights: &[f64],
) -> Result<TraceOperator, SpaceError> {
    let rows = nodes.len() * directions.len();
    let mut m = DMatrix::zeros(rows, dofs.dim());
    let mut w = DVector::zeros(rows);
    for (k, &n) in nodes.iter().enumerate() {
        for (c, d) in directions.iter().enumerate() {
            let r = k * directions.len() + c;
            w[r] = weights[n];
            for (comp, dc) in d.iter().enumerate() {
                if let Some(i) = dofs.dof(n, comp) {
                    m[(r, i)] = *dc;
                }
            }
        }
    }
    TraceOperator::new(m, DiagonalMetric::new(w)?)
}

pub fn assemble_spaces(mesh: &RectMesh) -> Result<AssembledSpaces, AssemblyError> {
    let dofs = DofMap::new(mesh);
    let ne = mesh.triangles.len();
    let mut strain = DMatrix::zeros(3 * ne, dofs.dim());
    let mut sw = DVector::zeros(3 * ne);
    for e in 0..ne {
        let area = mesh.area(e);
        if area <= 0.0 {
            return Err(AssemblyError::Degenerate(e));
        }
        let b = element_strain(mesh, e);
        for (a, &node) in mesh.triangles[e].iter().enumerate() {
            for c in 0..2 {
                if let Some(i) = dofs.dof(node, c) {
                    for r in 0..3 {
                        strain[(3 * e + r, i)] += b[r][2 * a + c];
                    }
                }
            }
        }
        sw[3 * e] = area;
        sw[3 * e + 1] = area;
        sw[3 * e + 2] = 2.0 * area;
    }
    let stress_metric = DiagonalMetric::new(sw)?;
    let gram = strain.tr_mul(&(DMatrix::from_diagonal(stress_metric.weights()) * &strain));
    let metric = EnergyMetric::new(gram).map_err(AssemblyError::Singular)?;

    let bottom = mesh.lumped_weights(&[Edge::Bottom]);
    let unilateral = mesh.nodes_on(BoundaryPart::Unilateral);
    let compliance = mesh.nodes_on(BoundaryPart::Compliance);
    let normal = mesh.bottom_normal();
    let tangent = mesh.bottom_tangent();
    let unilateral_weights = DVector::from_iterator(unilateral.len(), unilateral.iter().map(|&n| bottom[n]));
    let compliance_weights = DVector::from_iterator(compliance.len(), compliance.iter().map(|&n| bottom[n]));
    let normal_trace = nodal_trace(&dofs, &unilateral, &[normal], &bottom)?;

    let boundary = mesh.lumped_weights(&[Edge::Bottom, Edge::Right, Edge::Top]);
    let boundary_nodes: Vec<usize> = (0..mesh.node_count())
        .filter(|&n| matches!(mesh.part(n), Some(p) if p != BoundaryPart::Clamped))
        .collect();
    let boundary_trace = nodal_trace(&dofs, &boundary_nodes, &[[1.0, 0.0], [0.0, 1.0]], &boundary)?;

    Ok(AssembledSpaces {
        dofs,
        strain,
        stress_metric,
        metric,
        unilateral,
        compliance,
        unilateral_weights,
        compliance_weights,
        normal,
        tangent,
        normal_trace,
        boundary_trace,
    })
}

impl AssembledSpaces {
    pub fn elements(&self) -> usize {
        self.strain.nrows() / 3
    }

    /// Per-element strain of a DoF vector.
    pub fn strains(&self, v: &DVector<f64>) -> Vec<Sym2> {
        let e = &self.strain * v;
        (0..self.elements()).map(|k| [e[3 * k], e[3 * k + 1], e[3 * k + 2]]).collect()
    }

    /// `εᵀ W C ε` for a block-diagonal stress map `C`.
    pub fn stiffness(&self, c: &DMatrix<f64>) -> DMatrix<f64> {
        let wc = DMatrix::from_diagonal(self.stress_metric.weights()) * c;
        self.strain.tr_mul(&(wc * &self.strain))
    }

    /// `εᵀ W`, the map taking a per-element stress to a residual vector.
    pub fn divergence(&self) -> DMatrix<f64> {
        self.strain.transpose() * DMatrix::from_diagonal(self.stress_metric.weights())
    }

    /// `(v_ν, v_τ)` at `node`.
    pub fn normal_tangential(&self, v: &DVector<f64>, node: usize) -> (f64, f64) {
        let u = self.dofs.nodal(v, node);
        (
            u[0] * self.normal[0] + u[1] * self.normal[1],
            u[0] * self.tangent[0] + u[1] * self.tangent[1],
        )
    }
}
