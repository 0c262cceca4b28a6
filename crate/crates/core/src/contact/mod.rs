//! Quasistatic viscoelastic frictional contact on a rectangle, discretized by
//! linear triangles and mapped onto the abstract inequality.

pub mod assembly;
pub mod build;
pub mod laws;
pub mod mesh;
pub mod report;
pub mod scenario;

pub use assembly::{assemble_spaces, AssembledSpaces, DofMap};
pub use build::{build_abstract, contact_smallness, ContactPotential, ContactProblem, ContactSmallness};
pub use laws::{constitutive_stress, BoundaryLaws, Material};
pub use mesh::{BoundaryPart, Edge, RectMesh};
pub use report::{complementarity_report, traction_report, ComplementarityReport, ContactRecord};
pub use scenario::{ContactScenario, ScenarioError, ScenarioSpec};
