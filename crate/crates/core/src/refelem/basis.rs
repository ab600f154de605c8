//! Reference polynomial bases: `P_k` on the simplex and square, `P_k²`,
//! Raviart–Thomas on the simplex, and BDM / BDFM on the square.
//!
//! Each space is spanned by monomials following its textbook definition and
//! then orthonormalized in `L²` of the reference cell. Scalar bases keep the
//! constant function first, so dropping it leaves a basis of the mean-zero
//! subspace.

use crate::error::{Error, Result};
use crate::mesh::CellKind;

use super::poly::{curl, homogeneous_monomials, monomials_up_to, vec_div, vec_eval, Poly, VecPoly};
use super::quadrature::{quadrature, Domain, QuadratureRule};

/// Highest polynomial degree any family is built for.
pub const MAX_DEGREE: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    /// Scalar `P_k` (total degree, on both cell kinds).
    P,
    /// Vector `P_k²`.
    VectorP,
    /// `RT_k = P_k² ⊕ x P̃_k`, simplex only.
    RaviartThomas,
    /// `BDM_k = P_k² ⊕ curl{x y^{k+1}, y x^{k+1}}`, square only.
    Bdm,
    /// `BDFM_k = P_k² ⊕ [x P̃_k ; y P̃_k]`, square only.
    Bdfm,
}

impl Family {
    pub fn is_vector(self) -> bool {
        !matches!(self, Family::P)
    }
}

#[derive(Debug, Clone)]
enum Shape {
    Scalar {
        value: Poly,
        grad: [Poly; 2],
    },
    Vector {
        value: VecPoly,
        grad: [[Poly; 2]; 2],
        div: Poly,
    },
}

impl Shape {
    fn scalar(p: Poly) -> Self {
        let grad = [p.dx(), p.dy()];
        Shape::Scalar { value: p, grad }
    }

    fn vector(v: VecPoly) -> Self {
        let grad = [[v[0].dx(), v[0].dy()], [v[1].dx(), v[1].dy()]];
        let div = vec_div(&v);
        Shape::Vector {
            value: v,
            grad,
            div,
        }
    }
}

/// Scalar basis tabulated at points; entry `f * num_points + q`.
#[derive(Debug, Clone)]
pub struct ScalarTable {
    pub num_funcs: usize,
    pub num_points: usize,
    pub values: Vec<f64>,
    pub grads: Vec<[f64; 2]>,
}

impl ScalarTable {
    pub fn value(&self, f: usize, q: usize) -> f64 {
        self.values[f * self.num_points + q]
    }

    pub fn grad(&self, f: usize, q: usize) -> [f64; 2] {
        self.grads[f * self.num_points + q]
    }
}

/// Vector basis tabulated at points; `grads[..][r][c] = ∂v_r/∂x_c`.
#[derive(Debug, Clone)]
pub struct VectorTable {
    pub num_funcs: usize,
    pub num_points: usize,
    pub values: Vec<[f64; 2]>,
    pub grads: Vec<[[f64; 2]; 2]>,
    pub divs: Vec<f64>,
}

impl VectorTable {
    pub fn value(&self, f: usize, q: usize) -> [f64; 2] {
        self.values[f * self.num_points + q]
    }

    pub fn grad(&self, f: usize, q: usize) -> [[f64; 2]; 2] {
        self.grads[f * self.num_points + q]
    }

    pub fn div(&self, f: usize, q: usize) -> f64 {
        self.divs[f * self.num_points + q]
    }
}

#[derive(Debug, Clone)]
pub struct ReferenceBasis {
    family: Family,
    cell: CellKind,
    degree: usize,
    funcs: Vec<Shape>,
}

/// Analytic dimension of a family.
pub fn expected_dimension(family: Family, cell: CellKind, k: usize) -> usize {
    let p = (k + 1) * (k + 2) / 2;
    match (family, cell) {
        (Family::P, _) => p,
        (Family::VectorP, _) => 2 * p,
        (Family::RaviartThomas, _) => (k + 1) * (k + 3),
        (Family::Bdm, _) if k == 0 => 3,
        (Family::Bdm, _) => (k + 1) * (k + 2) + 2,
        (Family::Bdfm, _) => (k + 1) * (k + 4),
    }
}

fn reference_domain(cell: CellKind) -> Domain {
    match cell {
        CellKind::Triangle => Domain::Simplex,
        CellKind::Quad => Domain::Square,
    }
}

/// Reference facets as `(start, end, outward unit normal)`, local facet `i`
/// joining reference vertices `i` and `i+1`.
pub fn reference_facets(cell: CellKind) -> Vec<([f64; 2], [f64; 2], [f64; 2])> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    match cell {
        CellKind::Triangle => vec![
            ([0.0, 0.0], [1.0, 0.0], [0.0, -1.0]),
            ([1.0, 0.0], [0.0, 1.0], [s, s]),
            ([0.0, 1.0], [0.0, 0.0], [-1.0, 0.0]),
        ],
        CellKind::Quad => vec![
            ([0.0, 0.0], [1.0, 0.0], [0.0, -1.0]),
            ([1.0, 0.0], [1.0, 1.0], [1.0, 0.0]),
            ([1.0, 1.0], [0.0, 1.0], [0.0, 1.0]),
            ([0.0, 1.0], [0.0, 0.0], [-1.0, 0.0]),
        ],
    }
}

fn spanning_set(family: Family, cell: CellKind, k: u32) -> Result<Vec<Shape>> {
    let vec_pk = || -> Vec<VecPoly> {
        let mut out = Vec::new();
        for m in monomials_up_to(k) {
            out.push([m.clone(), Poly::zero()]);
        }
        for m in monomials_up_to(k) {
            out.push([Poly::zero(), m]);
        }
        out
    };
    let shapes = match (family, cell) {
        (Family::P, _) => monomials_up_to(k).into_iter().map(Shape::scalar).collect(),
        (Family::VectorP, _) => vec_pk().into_iter().map(Shape::vector).collect(),
        (Family::RaviartThomas, CellKind::Triangle) => {
            let mut v = vec_pk();
            for m in homogeneous_monomials(k) {
                v.push([m.shifted(1, 0), m.shifted(0, 1)]);
            }
            v.into_iter().map(Shape::vector).collect()
        }
        (Family::Bdm, CellKind::Quad) => {
            let mut v = vec_pk();
            v.push(curl(&Poly::monomial(1, k + 1)));
            // the two generators coincide (both xy) at k = 0
            if k > 0 {
                v.push(curl(&Poly::monomial(k + 1, 1)));
            }
            v.into_iter().map(Shape::vector).collect()
        }
        (Family::Bdfm, CellKind::Quad) => {
            let mut v = vec_pk();
            for m in homogeneous_monomials(k) {
                v.push([m.shifted(1, 0), Poly::zero()]);
            }
            for m in homogeneous_monomials(k) {
                v.push([Poly::zero(), m.shifted(0, 1)]);
            }
            v.into_iter().map(Shape::vector).collect()
        }
        (f, c) => {
            return Err(Error::Unsupported(format!(
                "{f:?} is not defined on {c:?} cells"
            )));
        }
    };
    Ok(shapes)
}

pub fn make_basis(family: Family, cell: CellKind, k: usize) -> Result<ReferenceBasis> {
    if k > MAX_DEGREE {
        return Err(Error::Unsupported(format!(
            "degree {k} exceeds the supported maximum {MAX_DEGREE}"
        )));
    }
    let span = spanning_set(family, cell, k as u32)?;
    let rule = quadrature(reference_domain(cell), 2 * k + 4)?;
    let raw = ReferenceBasis {
        family,
        cell,
        degree: k,
        funcs: span,
    };
    let gram = raw.gram(&rule);
    let n = gram.len();

    // Cholesky G = L Lᵀ; orthonormal functions are L⁻¹ s.
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = gram[i][j];
            for p in 0..j {
                s -= l[i][p] * l[j][p];
            }
            if i == j {
                if s <= 1e-12 * gram[i][i].max(1e-300) {
                    return Err(Error::Unsupported(format!(
                        "{family:?} spanning set on {cell:?} is linearly dependent at k = {k}"
                    )));
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    let mut linv = vec![vec![0.0; n]; n];
    for col in 0..n {
        for i in col..n {
            let mut s = if i == col { 1.0 } else { 0.0 };
            for p in col..i {
                s -= l[i][p] * linv[p][col];
            }
            linv[i][col] = s / l[i][i];
        }
    }

    let funcs = (0..n)
        .map(|i| match &raw.funcs[0] {
            Shape::Scalar { .. } => {
                let mut p = Poly::zero();
                for (j, c) in linv[i].iter().enumerate().take(i + 1) {
                    if let Shape::Scalar { value, .. } = &raw.funcs[j] {
                        p.axpy(*c, value);
                    }
                }
                Shape::scalar(p)
            }
            Shape::Vector { .. } => {
                let mut v: VecPoly = [Poly::zero(), Poly::zero()];
                for (j, c) in linv[i].iter().enumerate().take(i + 1) {
                    if let Shape::Vector { value, .. } = &raw.funcs[j] {
                        v[0].axpy(*c, &value[0]);
                        v[1].axpy(*c, &value[1]);
                    }
                }
                Shape::vector(v)
            }
        })
        .collect();

    Ok(ReferenceBasis {
        family,
        cell,
        degree: k,
        funcs,
    })
}

impl ReferenceBasis {
    pub fn family(&self) -> Family {
        self.family
    }

    pub fn cell(&self) -> CellKind {
        self.cell
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn num_funcs(&self) -> usize {
        self.funcs.len()
    }

    pub fn is_vector(&self) -> bool {
        self.family.is_vector()
    }

    /// Highest polynomial degree among the basis functions.
    pub fn max_poly_degree(&self) -> usize {
        match self.family {
            Family::P | Family::VectorP => self.degree,
            Family::RaviartThomas | Family::Bdm | Family::Bdfm => self.degree + 1,
        }
    }

    fn gram(&self, rule: &QuadratureRule) -> Vec<Vec<f64>> {
        let n = self.funcs.len();
        let mut g = vec![vec![0.0; n]; n];
        for (p, w) in rule.points.iter().zip(&rule.weights) {
            let vals: Vec<[f64; 2]> = self.funcs.iter().map(|f| eval_shape(f, *p)).collect();
            for i in 0..n {
                for j in 0..=i {
                    let v = w * (vals[i][0] * vals[j][0] + vals[i][1] * vals[j][1]);
                    g[i][j] += v;
                    if i != j {
                        g[j][i] += v;
                    }
                }
            }
        }
        g
    }

    /// Gram matrix on a rule exact for all products of basis functions.
    pub fn gram_matrix(&self) -> Vec<Vec<f64>> {
        let rule = quadrature(reference_domain(self.cell), 2 * self.max_poly_degree() + 2)
            .expect("reference rule");
        self.gram(&rule)
    }

    pub fn tabulate_scalar(&self, points: &[[f64; 2]]) -> Result<ScalarTable> {
        if self.is_vector() {
            return Err(Error::Unsupported(format!(
                "{:?} is vector-valued; use tabulate_vector",
                self.family
            )));
        }
        let np = points.len();
        let mut values = Vec::with_capacity(self.funcs.len() * np);
        let mut grads = Vec::with_capacity(self.funcs.len() * np);
        for f in &self.funcs {
            if let Shape::Scalar { value, grad } = f {
                for p in points {
                    values.push(value.eval(*p));
                    grads.push([grad[0].eval(*p), grad[1].eval(*p)]);
                }
            }
        }
        Ok(ScalarTable {
            num_funcs: self.funcs.len(),
            num_points: np,
            values,
            grads,
        })
    }

    pub fn tabulate_vector(&self, points: &[[f64; 2]]) -> Result<VectorTable> {
        if !self.is_vector() {
            return Err(Error::Unsupported(
                "scalar basis; use tabulate_scalar".to_string(),
            ));
        }
        let np = points.len();
        let nf = self.funcs.len();
        let mut values = Vec::with_capacity(nf * np);
        let mut grads = Vec::with_capacity(nf * np);
        let mut divs = Vec::with_capacity(nf * np);
        for f in &self.funcs {
            if let Shape::Vector { value, grad, div } = f {
                for p in points {
                    values.push(vec_eval(value, *p));
                    grads.push([
                        [grad[0][0].eval(*p), grad[0][1].eval(*p)],
                        [grad[1][0].eval(*p), grad[1][1].eval(*p)],
                    ]);
                    divs.push(div.eval(*p));
                }
            }
        }
        Ok(VectorTable {
            num_funcs: nf,
            num_points: np,
            values,
            grads,
            divs,
        })
    }
}

fn eval_shape(s: &Shape, p: [f64; 2]) -> [f64; 2] {
    match s {
        Shape::Scalar { value, .. } => [value.eval(p), 0.0],
        Shape::Vector { value, .. } => vec_eval(value, p),
    }
}

/// Whether every basis function's normal trace on reference facet `facet`
/// is a polynomial of degree at most `basis.degree()`, decided by a
/// least-squares fit on `degree + 4` facet points.
pub fn normal_trace_degree_check(basis: &ReferenceBasis, facet: usize) -> Result<bool> {
    if !basis.is_vector() {
        return Err(Error::Unsupported(
            "normal traces need a vector family".into(),
        ));
    }
    let facets = reference_facets(basis.cell);
    let (a, b, n) = *facets.get(facet).ok_or(Error::IndexOutOfRange {
        what: "reference facet",
        index: facet,
        len: facets.len(),
    })?;
    let k = basis.degree;
    let m = k + 4;
    let samples: Vec<f64> = (0..m).map(|i| (i as f64 + 0.5) / m as f64).collect();
    let points: Vec<[f64; 2]> = samples
        .iter()
        .map(|&s| [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])])
        .collect();
    let tab = basis.tabulate_vector(&points)?;

    // Legendre design matrix on [0, 1], degrees 0..=k
    let design: Vec<Vec<f64>> = samples
        .iter()
        .map(|&s| legendre_values(k, 2.0 * s - 1.0))
        .collect();
    let ncol = k + 1;
    let mut normal = crate::linalg::DenseMatrix::zeros(ncol, ncol);
    for row in &design {
        for i in 0..ncol {
            for j in 0..ncol {
                normal[(i, j)] += row[i] * row[j];
            }
        }
    }
    let lu = normal.lu()?;
    for f in 0..tab.num_funcs {
        let y: Vec<f64> = (0..m)
            .map(|q| {
                let v = tab.value(f, q);
                v[0] * n[0] + v[1] * n[1]
            })
            .collect();
        let rhs: Vec<f64> = (0..ncol)
            .map(|i| design.iter().zip(&y).map(|(r, yi)| r[i] * yi).sum())
            .collect();
        let c = lu.solve(&rhs);
        let scale = y.iter().fold(1.0_f64, |s, v| s.max(v.abs()));
        let resid = design
            .iter()
            .zip(&y)
            .map(|(r, yi)| (r.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() - yi).abs())
            .fold(0.0_f64, f64::max);
        if resid > 1e-10 * scale {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Legendre polynomials `P_0..=P_k` at `t ∈ [-1, 1]`.
pub fn legendre_values(k: usize, t: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(k + 1);
    out.push(1.0);
    if k >= 1 {
        out.push(t);
    }
    for n in 1..k {
        let nf = n as f64;
        let next = ((2.0 * nf + 1.0) * t * out[n] - nf * out[n - 1]) / (nf + 1.0);
        out.push(next);
    }
    out
}
