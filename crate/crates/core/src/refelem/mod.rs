//! Reference-element data: quadrature rules and polynomial bases.

pub mod basis;
pub mod poly;
pub mod quadrature;

pub use basis::{
    expected_dimension, legendre_values, make_basis, normal_trace_degree_check, reference_facets,
    Family, ReferenceBasis, ScalarTable, VectorTable, MAX_DEGREE,
};
pub use quadrature::{gauss_legendre_unit, quadrature, Domain, QuadratureRule};
