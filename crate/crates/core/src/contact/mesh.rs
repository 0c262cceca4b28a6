//! Structured triangulation of a rectangle with tagged boundary nodes.

use serde::{Deserialize, Serialize};

/// Which part of the boundary a node belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryPart {
    /// Left edge, clamped.
    Clamped,
    /// Top and right edges, prescribed traction.
    Traction,
    /// Bottom nodes with `0 < x ≤ L/2`: velocity cap, damped response and
    /// slip-dependent friction.
    Unilateral,
    /// Bottom nodes with `x > L/2`: normal compliance and Coulomb friction.
    Compliance,
}

/// Which straight edge of the rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Edge {
    Bottom,
    Right,
    Top,
    Left,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MeshError {
    #[error("mesh extents must be positive and finite")]
    BadExtent,
    #[error("need at least two elements along x and one along y")]
    TooCoarse,
    #[error("element {0} has non-positive area")]
    Degenerate(usize),
}

/// `nx × ny` rectangles, each split along its rising diagonal, optionally
/// rotated rigidly about the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct RectMesh {
    pub length: f64,
    pub height: f64,
    pub nx: usize,
    pub ny: usize,
    /// Rigid rotation applied to all coordinates (radians).
    pub rotation: f64,
    pub nodes: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
}

impl RectMesh {
    pub fn new(length: f64, height: f64, nx: usize, ny: usize, rotation: f64) -> Result<Self, MeshError> {
        if !(length.is_finite() && height.is_finite() && length > 0.0 && height > 0.0 && rotation.is_finite()) {
            return Err(MeshError::BadExtent);
        }
        if nx < 2 || ny < 1 {
            return Err(MeshError::TooCoarse);
        }
        let (s, c) = rotation.sin_cos();
        let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                let x = length * i as f64 / nx as f64;
                let y = height * j as f64 / ny as f64;
                nodes.push([c * x - s * y, s * x + c * y]);
            }
        }
        let id = |i: usize, j: usize| j * (nx + 1) + i;
        let mut triangles = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                triangles.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                triangles.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
        let mesh = Self {
            length,
            height,
            nx,
            ny,
            rotation,
            nodes,
            triangles,
        };
        for e in 0..mesh.triangles.len() {
            if mesh.area(e) <= 0.0 {
                return Err(MeshError::Degenerate(e));
            }
        }
        Ok(mesh)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_id(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    /// Grid indices `(i, j)` of a node.
    pub fn grid_index(&self, node: usize) -> (usize, usize) {
        (node % (self.nx + 1), node / (self.nx + 1))
    }

    /// Position before the rigid rotation.
    pub fn reference_position(&self, node: usize) -> [f64; 2] {
        let (i, j) = self.grid_index(node);
        [
            self.length * i as f64 / self.nx as f64,
            self.height * j as f64 / self.ny as f64,
        ]
    }

    pub fn rotate(&self, v: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.rotation.sin_cos();
        [c * v[0] - s * v[1], s * v[0] + c * v[1]]
    }

    pub fn area(&self, e: usize) -> f64 {
        let [a, b, c] = self.triangles[e].map(|n| self.nodes[n]);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    /// Constant shape-function gradients `(∂x N, ∂y N)` of the three vertices.
    pub fn gradients(&self, e: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.triangles[e].map(|n| self.nodes[n]);
        let two_a = 2.0 * self.area(e);
        [
            [(b[1] - c[1]) / two_a, (c[0] - b[0]) / two_a],
            [(c[1] - a[1]) / two_a, (a[0] - c[0]) / two_a],
            [(a[1] - b[1]) / two_a, (b[0] - a[0]) / two_a],
        ]
    }

    /// Boundary tag of a node, `None` for interior nodes.
    pub fn part(&self, node: usize) -> Option<BoundaryPart> {
        let (i, j) = self.grid_index(node);
        if i == 0 {
            Some(BoundaryPart::Clamped)
        } else if j == 0 {
            let x = self.length * i as f64 / self.nx as f64;
            if x <= 0.5 * self.length * (1.0 + 1e-12) {
                Some(BoundaryPart::Unilateral)
            } else {
                Some(BoundaryPart::Compliance)
            }
        } else if j == self.ny || i == self.nx {
            Some(BoundaryPart::Traction)
        } else {
            None
        }
    }

    pub fn nodes_on(&self, part: BoundaryPart) -> Vec<usize> {
        (0..self.node_count()).filter(|&n| self.part(n) == Some(part)).collect()
    }

    /// Segments `(a, b)` of an edge, ordered along the edge.
    pub fn edge_segments(&self, edge: Edge) -> Vec<(usize, usize)> {
        let (nx, ny) = (self.nx, self.ny);
        match edge {
            Edge::Bottom => (0..nx).map(|i| (self.node_id(i, 0), self.node_id(i + 1, 0))).collect(),
            Edge::Top => (0..nx).map(|i| (self.node_id(i, ny), self.node_id(i + 1, ny))).collect(),
            Edge::Left => (0..ny).map(|j| (self.node_id(0, j), self.node_id(0, j + 1))).collect(),
            Edge::Right => (0..ny).map(|j| (self.node_id(nx, j), self.node_id(nx, j + 1))).collect(),
        }
    }

    pub fn segment_length(&self, a: usize, b: usize) -> f64 {
        let (p, q) = (self.nodes[a], self.nodes[b]);
        ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt()
    }

    /// Row sums of the boundary mass matrix of the given edges.
    pub fn lumped_weights(&self, edges: &[Edge]) -> Vec<f64> {
        let mut w = vec![0.0; self.node_count()];
        for &edge in edges {
            for (a, b) in self.edge_segments(edge) {
                let h = 0.5 * self.segment_length(a, b);
                w[a] += h;
                w[b] += h;
            }
        }
        w
    }

    /// Outward unit normal of the bottom edge.
    pub fn bottom_normal(&self) -> [f64; 2] {
        self.rotate([0.0, -1.0])
    }

    /// Unit tangent `τ = (−ν_y, ν_x)` of the bottom edge.
    pub fn bottom_tangent(&self) -> [f64; 2] {
        let n = self.bottom_normal();
        [-n[1], n[0]]
    }
}
