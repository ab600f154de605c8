//! H(div)-conforming hybridizable discontinuous Galerkin solver for the
//! Brinkman equations written in velocity gradient, velocity and pressure.

pub mod error;
pub mod fespace;
pub mod forms;
pub mod hybrid;
pub mod linalg;
pub mod mesh;
pub mod refelem;
pub mod verify;

pub use error::{Error, Result};
pub use fespace::SpaceSet;
pub use forms::{Coefficients, Point, Tensor};
pub use hybrid::{solve, SolutionFields, SolveOutput, SourceData};
pub use mesh::{AffineMap, CellKind, Facet, FacetGeometry, Mesh, TriangleSplit};
pub use verify::{make_case, run_convergence, ConvergenceTable, ErrorReport, ManufacturedCase};
