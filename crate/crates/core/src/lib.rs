//! Solvers for history-dependent quasi variational–hemivariational
//! inequalities and a quasistatic viscoelastic contact model built on them.

pub mod audit;
pub mod contact;
pub mod elliptic;
pub mod evolution;
pub mod history;
pub mod instances;
pub mod problem;
pub mod spaces;
