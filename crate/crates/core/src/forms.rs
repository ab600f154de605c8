//! Element-local integrals: the bilinear-form blocks, the blocks of the local
//! hybridized problems, L² and H(div) projections, and the local
//! postprocessing of the velocity.
//!
//! Local numbering on a cell:
//! * gradient space: `a = r * n_row + i`, basis `g_a = e_r ⊗ φ_i` (row `r` of the
//!   matrix field is the Piola-mapped row function `φ_i`);
//! * velocity: nodal basis dual to the facet normal moments
//!   `∫_F v·n_K ψ_i` followed by interior moments `∫_K v_r w_j`, `w_j ∈ P_{k−1}`;
//! * facet unknowns: `lf * 2(k+1) + comp * (k+1) + i` with `comp = 0` for
//!   `ψ_i t_F` and `comp = 1` for `ψ_i n_F`;
//! * multipliers `λ`: `lf * (k+1) + i`, basis `ψ_i` on facet `lf`.

use crate::error::{Error, Result};
use crate::fespace::{compose_tabulate, facet_legendre, piola_tabulate, SpaceSet, VLayout};
use crate::linalg::DenseMatrix;
use crate::mesh::{AffineMap, FacetGeometry, Mesh};
use crate::refelem::{
    quadrature, reference_facets, Domain, QuadratureRule, ScalarTable, VectorTable,
};

pub type Point = [f64; 2];
pub type Tensor = [[f64; 2]; 2];

/// Constant coefficients `ν` and `γ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients {
    pub nu: f64,
    pub gamma: Tensor,
}

impl Coefficients {
    pub fn new(nu: f64, gamma: Tensor) -> Result<Self> {
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "viscosity must be positive (got {nu})"
            )));
        }
        let sym =
            (gamma[0][1] - gamma[1][0]).abs() <= 1e-14 * (gamma[0][0].abs() + gamma[1][1].abs());
        let det = gamma[0][0] * gamma[1][1] - gamma[0][1] * gamma[1][0];
        if !sym || gamma[0][0] <= 0.0 || det <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "γ must be symmetric positive definite (got {gamma:?})"
            )));
        }
        Ok(Self { nu, gamma })
    }

    /// `γ = s I`.
    pub fn scalar(nu: f64, gamma: f64) -> Result<Self> {
        Self::new(nu, [[gamma, 0.0], [0.0, gamma]])
    }

    pub fn apply_gamma(&self, v: Point) -> Point {
        let g = self.gamma;
        [
            g[0][0] * v[0] + g[0][1] * v[1],
            g[1][0] * v[0] + g[1][1] * v[1],
        ]
    }

    /// Largest eigenvalue of `γ`.
    pub fn gamma_max(&self) -> f64 {
        let g = self.gamma;
        let tr = g[0][0] + g[1][1];
        let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
        tr / 2.0 + ((tr * tr / 4.0 - det).max(0.0)).sqrt()
    }
}

/// Tabulated data on one facet of a cell.
#[derive(Debug, Clone)]
pub struct FacetContext {
    pub facet: usize,
    pub local: usize,
    pub geometry: FacetGeometry,
    /// Outward normal of the cell.
    pub normal: Point,
    /// `n_F · n_K`.
    pub sign: f64,
    pub boundary: bool,
    pub ref_points: Vec<Point>,
    pub points: Vec<Point>,
    /// Physical weights (include the facet length).
    pub weights: Vec<f64>,
    /// Facet parameter of each point.
    pub params: Vec<f64>,
    /// `psi[q][i] = ψ_i(s_q)`.
    pub psi: Vec<Vec<f64>>,
    pub g_row: VectorTable,
    pub v: VectorTable,
    pub q: ScalarTable,
}

impl FacetContext {
    pub fn num_points(&self) -> usize {
        self.points.len()
    }
}

/// Per-cell tabulation of every space at physical quadrature points.
#[derive(Debug, Clone)]
pub struct ElementContext {
    pub cell: usize,
    pub k: usize,
    pub map: AffineMap,
    pub measure: f64,
    pub ref_points: Vec<Point>,
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
    pub g_row: VectorTable,
    pub v: VectorTable,
    pub q: ScalarTable,
    pub facets: Vec<FacetContext>,
    /// Maps spanning-set coefficients to nodal ones: `nodal_j = Σ_m c[m][j] span_m`.
    pub nodal: DenseMatrix,
    pub layout: VLayout,
    pub n_row: usize,
}

fn nodal_vector_table(span: &VectorTable, c: &DenseMatrix) -> VectorTable {
    let nf = span.num_funcs;
    let np = span.num_points;
    let mut values = vec![[0.0; 2]; nf * np];
    let mut grads = vec![[[0.0; 2]; 2]; nf * np];
    let mut divs = vec![0.0; nf * np];
    for j in 0..nf {
        for m in 0..nf {
            let cm = c[(m, j)];
            if cm == 0.0 {
                continue;
            }
            for q in 0..np {
                let src = m * np + q;
                let dst = j * np + q;
                values[dst][0] += cm * span.values[src][0];
                values[dst][1] += cm * span.values[src][1];
                for r in 0..2 {
                    for s in 0..2 {
                        grads[dst][r][s] += cm * span.grads[src][r][s];
                    }
                }
                divs[dst] += cm * span.divs[src];
            }
        }
    }
    VectorTable {
        num_funcs: nf,
        num_points: np,
        values,
        grads,
        divs,
    }
}

impl ElementContext {
    /// Context with the default assembly rule of degree `2k + 2`.
    pub fn assembly(mesh: &Mesh, spaces: &SpaceSet, cell: usize) -> Result<Self> {
        let d = 2 * spaces.k + 2;
        Self::new(mesh, spaces, cell, d, d)
    }

    /// Context on rules of the given degrees (raised to `2k + 2` if lower, so
    /// that the nodal velocity basis is exact).
    pub fn new(
        mesh: &Mesh,
        spaces: &SpaceSet,
        cell: usize,
        volume_degree: usize,
        facet_degree: usize,
    ) -> Result<Self> {
        let k = spaces.k;
        let kind = mesh.kind();
        let map = mesh.affine_map(cell)?;
        let vol_domain = match kind {
            crate::mesh::CellKind::Triangle => Domain::Simplex,
            crate::mesh::CellKind::Quad => Domain::Square,
        };
        let vrule = quadrature(vol_domain, volume_degree.max(2 * k + 2))?;
        let frule = quadrature(Domain::Segment, facet_degree.max(2 * k + 2))?;
        let points: Vec<Point> = vrule.points.iter().map(|p| map.apply(*p)).collect();
        let weights: Vec<f64> = vrule.weights.iter().map(|w| w * map.det).collect();

        let g_row = piola_tabulate(&map, &spaces.g_row, &vrule.points)?;
        let span = piola_tabulate(&map, &spaces.v_span, &vrule.points)?;
        let q = compose_tabulate(&map, &spaces.q, &vrule.points)?;
        let interior = match &spaces.interior {
            Some(b) => Some(compose_tabulate(&map, b, &vrule.points)?),
            None => None,
        };

        let verts = mesh.cell(cell);
        let nv = verts.len();
        let ref_facets = reference_facets(kind);
        let mut facet_spans = Vec::with_capacity(nv);
        let mut facets = Vec::with_capacity(nv);
        for (lf, &f) in mesh.cell_facets(cell).iter().enumerate() {
            let (a, b, _) = ref_facets[lf];
            let ref_points: Vec<Point> = frule
                .points
                .iter()
                .map(|p| [a[0] + p[0] * (b[0] - a[0]), a[1] + p[0] * (b[1] - a[1])])
                .collect();
            let geometry = mesh.facet_geometry(f)?;
            let sign = mesh.orientation(cell, f);
            let forward = verts[lf] < verts[(lf + 1) % nv];
            let params: Vec<f64> = frule
                .points
                .iter()
                .map(|p| if forward { p[0] } else { 1.0 - p[0] })
                .collect();
            let psi = params
                .iter()
                .map(|&s| facet_legendre(k, geometry.length, s))
                .collect();
            facet_spans.push(piola_tabulate(&map, &spaces.v_span, &ref_points)?);
            facets.push(FacetContext {
                facet: f,
                local: lf,
                normal: [sign * geometry.normal[0], sign * geometry.normal[1]],
                sign,
                boundary: mesh.facet(f).is_boundary(),
                points: ref_points.iter().map(|p| map.apply(*p)).collect(),
                weights: frule.weights.iter().map(|w| w * geometry.length).collect(),
                params,
                psi,
                g_row: piola_tabulate(&map, &spaces.g_row, &ref_points)?,
                v: VectorTable {
                    num_funcs: 0,
                    num_points: 0,
                    values: Vec::new(),
                    grads: Vec::new(),
                    divs: Vec::new(),
                },
                q: compose_tabulate(&map, &spaces.q, &ref_points)?,
                geometry,
                ref_points,
            });
        }

        // dof matrix D[i][m] = dof_i(span_m)
        let layout = spaces.v_layout();
        let nvf = spaces.num_v();
        let pf = layout.per_facet;
        let mut dmat = DenseMatrix::zeros(nvf, nvf);
        for (lf, fc) in facets.iter().enumerate() {
            let fs = &facet_spans[lf];
            for i in 0..pf {
                for m in 0..nvf {
                    let mut s = 0.0;
                    for qp in 0..fc.num_points() {
                        let v = fs.value(m, qp);
                        s += fc.weights[qp]
                            * fc.psi[qp][i]
                            * (v[0] * fc.normal[0] + v[1] * fc.normal[1]);
                    }
                    dmat[(lf * pf + i, m)] = s;
                }
            }
        }
        if let Some(w) = &interior {
            let ni = w.num_funcs;
            for r in 0..2 {
                for j in 0..ni {
                    let row = layout.facet_dofs() + r * ni + j;
                    for m in 0..nvf {
                        let mut s = 0.0;
                        for (qp, wt) in weights.iter().enumerate() {
                            s += wt * span.value(m, qp)[r] * w.value(j, qp);
                        }
                        dmat[(row, m)] = s;
                    }
                }
            }
        }
        let nodal = dmat
            .lu()
            .map_err(|_| Error::SingularLocalSystem { cell, degree: k })?
            .solve_matrix(&DenseMatrix::identity(nvf));
        let v = nodal_vector_table(&span, &nodal);
        for (fc, fs) in facets.iter_mut().zip(&facet_spans) {
            fc.v = nodal_vector_table(fs, &nodal);
        }

        Ok(Self {
            cell,
            k,
            measure: mesh.cell_measure(cell),
            map,
            ref_points: vrule.points,
            points,
            weights,
            g_row,
            v,
            q,
            facets,
            nodal,
            layout,
            n_row: spaces.g_row.num_funcs(),
        })
    }

    pub fn num_points(&self) -> usize {
        self.points.len()
    }

    pub fn num_g(&self) -> usize {
        2 * self.n_row
    }

    pub fn num_v(&self) -> usize {
        self.v.num_funcs
    }

    pub fn num_q(&self) -> usize {
        self.q.num_funcs
    }

    /// Local facet unknowns (tangential and normal, boundary included).
    pub fn num_hat(&self) -> usize {
        self.facets.len() * 2 * (self.k + 1)
    }

    pub fn num_lambda(&self) -> usize {
        self.facets.len() * (self.k + 1)
    }

    /// Velocity (nodal basis) at arbitrary reference points.
    pub fn v_at(&self, spaces: &SpaceSet, ref_points: &[Point]) -> Result<VectorTable> {
        let span = piola_tabulate(&self.map, &spaces.v_span, ref_points)?;
        Ok(nodal_vector_table(&span, &self.nodal))
    }

    /// Matrix field `Σ_a c_a g_a` at volume point `q`.
    pub fn eval_g(&self, coeffs: &[f64], q: usize) -> Tensor {
        eval_g_table(&self.g_row, self.n_row, coeffs, q)
    }

    pub fn eval_v(&self, coeffs: &[f64], q: usize) -> Point {
        eval_vector(&self.v, coeffs, q)
    }

    pub fn eval_grad_v(&self, coeffs: &[f64], q: usize) -> Tensor {
        let mut out = [[0.0; 2]; 2];
        for (j, c) in coeffs.iter().enumerate() {
            let g = self.v.grad(j, q);
            for r in 0..2 {
                for s in 0..2 {
                    out[r][s] += c * g[r][s];
                }
            }
        }
        out
    }

    pub fn eval_q(&self, coeffs: &[f64], q: usize) -> f64 {
        coeffs
            .iter()
            .enumerate()
            .map(|(j, c)| c * self.q.value(j, q))
            .sum()
    }
}

pub fn eval_vector(table: &VectorTable, coeffs: &[f64], q: usize) -> Point {
    let mut out = [0.0; 2];
    for (j, c) in coeffs.iter().enumerate() {
        let v = table.value(j, q);
        out[0] += c * v[0];
        out[1] += c * v[1];
    }
    out
}

pub fn eval_g_table(rows: &VectorTable, n_row: usize, coeffs: &[f64], q: usize) -> Tensor {
    let mut out = [[0.0; 2]; 2];
    for (r, row) in out.iter_mut().enumerate() {
        for i in 0..n_row {
            let c = coeffs[r * n_row + i];
            let v = rows.value(i, q);
            row[0] += c * v[0];
            row[1] += c * v[1];
        }
    }
    out
}

/// Dense element matrices. Pairings are written `(trial, test)`; rows index
/// the test space unless noted.
#[derive(Debug, Clone)]
pub struct ElementBlocks {
    /// `(L, ν g)`: gradient × gradient.
    pub m_ll: DenseMatrix,
    /// `(∇u, ν g)`: gradient × velocity.
    pub d: DenseMatrix,
    /// `⟨tr_t u, tr_t(ν g n)⟩_∂K`: gradient × velocity.
    pub t_vol: DenseMatrix,
    /// `⟨û_t, tr_t(ν g n)⟩_∂K`: gradient × local tangential unknowns
    /// (`lf * (k+1) + i`).
    pub t_hat: DenseMatrix,
    /// `(p, div v)`: pressure × velocity. The mass block `(div u, q)` is the
    /// same matrix.
    pub b_div: DenseMatrix,
    /// `(γ u, v)`: velocity × velocity.
    pub m_gamma: DenseMatrix,
    /// `(v, div g)`: gradient × velocity.
    pub div_g: DenseMatrix,
    /// `(∇p, v)`: velocity × pressure.
    pub grad_q: DenseMatrix,
    /// `⟨v·n_K, μ⟩`: velocity × multiplier.
    pub normal_trace: DenseMatrix,
    /// `⟨û, g n_K⟩`: gradient × all local facet unknowns.
    pub lift_g: DenseMatrix,
    /// `⟨û·n_K, μ⟩`: multiplier × all local facet unknowns.
    pub lift_mu: DenseMatrix,
}

pub fn element_blocks(ctx: &ElementContext, coeffs: &Coefficients) -> ElementBlocks {
    let nu = coeffs.nu;
    let nr = ctx.n_row;
    let ng = ctx.num_g();
    let nv = ctx.num_v();
    let nq = ctx.num_q();
    let pf = ctx.k + 1;
    let nfac = ctx.facets.len();
    let np = ctx.num_points();

    let mut m_ll = DenseMatrix::zeros(ng, ng);
    let mut d = DenseMatrix::zeros(ng, nv);
    let mut div_g = DenseMatrix::zeros(ng, nv);
    for i in 0..nr {
        for j in 0..nr {
            let mut s = 0.0;
            for q in 0..np {
                let (a, b) = (ctx.g_row.value(i, q), ctx.g_row.value(j, q));
                s += ctx.weights[q] * (a[0] * b[0] + a[1] * b[1]);
            }
            m_ll[(i, j)] = nu * s;
            m_ll[(nr + i, nr + j)] = nu * s;
        }
    }
    for r in 0..2 {
        for i in 0..nr {
            let a = r * nr + i;
            for v in 0..nv {
                let (mut sd, mut sdiv) = (0.0, 0.0);
                for q in 0..np {
                    let w = ctx.weights[q];
                    let phi = ctx.g_row.value(i, q);
                    let gv = ctx.v.grad(v, q);
                    sd += w * (gv[r][0] * phi[0] + gv[r][1] * phi[1]);
                    sdiv += w * ctx.v.value(v, q)[r] * ctx.g_row.div(i, q);
                }
                d[(a, v)] = nu * sd;
                div_g[(a, v)] = sdiv;
            }
        }
    }

    let mut b_div = DenseMatrix::zeros(nq, nv);
    let mut grad_q = DenseMatrix::zeros(nv, nq);
    for p in 0..nq {
        for v in 0..nv {
            let (mut sb, mut sg) = (0.0, 0.0);
            for q in 0..np {
                let w = ctx.weights[q];
                sb += w * ctx.q.value(p, q) * ctx.v.div(v, q);
                let gp = ctx.q.grad(p, q);
                let vv = ctx.v.value(v, q);
                sg += w * (gp[0] * vv[0] + gp[1] * vv[1]);
            }
            b_div[(p, v)] = sb;
            grad_q[(v, p)] = sg;
        }
    }

    let mut m_gamma = DenseMatrix::zeros(nv, nv);
    for u in 0..nv {
        for v in 0..=u {
            let mut s = 0.0;
            for q in 0..np {
                let gu = coeffs.apply_gamma(ctx.v.value(u, q));
                let vv = ctx.v.value(v, q);
                s += ctx.weights[q] * (gu[0] * vv[0] + gu[1] * vv[1]);
            }
            m_gamma[(v, u)] = s;
            m_gamma[(u, v)] = s;
        }
    }

    let nhat = ctx.num_hat();
    let mut t_vol = DenseMatrix::zeros(ng, nv);
    let mut t_hat = DenseMatrix::zeros(ng, nfac * pf);
    let mut normal_trace = DenseMatrix::zeros(nv, nfac * pf);
    let mut lift_g = DenseMatrix::zeros(ng, nhat);
    let mut lift_mu = DenseMatrix::zeros(nfac * pf, nhat);
    for fc in &ctx.facets {
        let n = fc.normal;
        let t = fc.geometry.tangent;
        let nf_dir = fc.geometry.normal;
        let lf = fc.local;
        for qp in 0..fc.num_points() {
            let w = fc.weights[qp];
            let psi = &fc.psi[qp];
            for i in 0..nr {
                let phi = fc.g_row.value(i, qp);
                let phin = phi[0] * n[0] + phi[1] * n[1];
                for r in 0..2 {
                    let a = r * nr + i;
                    for v in 0..nv {
                        let vv = fc.v.value(v, qp);
                        let vt = vv[0] * t[0] + vv[1] * t[1];
                        t_vol[(a, v)] += nu * w * vt * phin * t[r];
                    }
                    for (j, pj) in psi.iter().enumerate() {
                        t_hat[(a, lf * pf + j)] += nu * w * pj * phin * t[r];
                        lift_g[(a, lf * 2 * pf + j)] += w * pj * t[r] * phin;
                        lift_g[(a, lf * 2 * pf + pf + j)] += w * pj * nf_dir[r] * phin;
                    }
                }
            }
            for v in 0..nv {
                let vv = fc.v.value(v, qp);
                let vn = vv[0] * n[0] + vv[1] * n[1];
                for (j, pj) in psi.iter().enumerate() {
                    normal_trace[(v, lf * pf + j)] += w * vn * pj;
                }
            }
            for (i, pi) in psi.iter().enumerate() {
                for (j, pj) in psi.iter().enumerate() {
                    lift_mu[(lf * pf + i, lf * 2 * pf + pf + j)] += w * fc.sign * pi * pj;
                }
            }
        }
    }

    ElementBlocks {
        m_ll,
        d,
        t_vol,
        t_hat,
        b_div,
        m_gamma,
        div_g,
        grad_q,
        normal_trace,
        lift_g,
        lift_mu,
    }
}

/// `(f, v)` for every local velocity basis function, on a rule of degree `degree`.
pub fn load_vector(
    ctx: &ElementContext,
    spaces: &SpaceSet,
    f: &dyn Fn(Point) -> Point,
    degree: usize,
) -> Result<Vec<f64>> {
    let rule = volume_rule(spaces, degree)?;
    let table = ctx.v_at(spaces, &rule.points)?;
    let mut out = vec![0.0; ctx.num_v()];
    for (q, (p, w)) in rule.points.iter().zip(&rule.weights).enumerate() {
        let fv = f(ctx.map.apply(*p));
        let w = w * ctx.map.det;
        for (j, o) in out.iter_mut().enumerate() {
            let v = table.value(j, q);
            *o += w * (fv[0] * v[0] + fv[1] * v[1]);
        }
    }
    Ok(out)
}

/// `(g, q)` for every local pressure basis function.
pub fn pressure_load(
    ctx: &ElementContext,
    spaces: &SpaceSet,
    g: &dyn Fn(Point) -> f64,
    degree: usize,
) -> Result<Vec<f64>> {
    let rule = volume_rule(spaces, degree)?;
    let table = compose_tabulate(&ctx.map, &spaces.q, &rule.points)?;
    let mut out = vec![0.0; ctx.num_q()];
    for (q, (p, w)) in rule.points.iter().zip(&rule.weights).enumerate() {
        let gv = g(ctx.map.apply(*p)) * w * ctx.map.det;
        for (j, o) in out.iter_mut().enumerate() {
            *o += gv * table.value(j, q);
        }
    }
    Ok(out)
}

pub fn volume_rule(spaces: &SpaceSet, degree: usize) -> Result<QuadratureRule> {
    let domain = match spaces.kind {
        crate::mesh::CellKind::Triangle => Domain::Simplex,
        crate::mesh::CellKind::Quad => Domain::Square,
    };
    quadrature(domain, degree)
}

/// Projections of exact fields onto the local spaces of one cell.
///
/// The context's rules determine the integration accuracy; build it with a
/// high degree when projecting non-polynomial data.
pub struct ProjectionSet<'a> {
    pub ctx: &'a ElementContext,
}

impl<'a> ProjectionSet<'a> {
    pub fn new(ctx: &'a ElementContext) -> Self {
        Self { ctx }
    }

    fn row_gram(&self) -> DenseMatrix {
        let c = self.ctx;
        DenseMatrix::from_fn(c.n_row, c.n_row, |i, j| {
            (0..c.num_points())
                .map(|q| {
                    let (a, b) = (c.g_row.value(i, q), c.g_row.value(j, q));
                    c.weights[q] * (a[0] * b[0] + a[1] * b[1])
                })
                .sum()
        })
    }

    /// `P_G`: L² projection onto the gradient space.
    pub fn p_g(&self, field: &dyn Fn(Point) -> Tensor) -> Result<Vec<f64>> {
        let c = self.ctx;
        let lu = self.row_gram().lu()?;
        let vals: Vec<Tensor> = c.points.iter().map(|p| field(*p)).collect();
        let mut out = Vec::with_capacity(c.num_g());
        for r in 0..2 {
            let rhs: Vec<f64> = (0..c.n_row)
                .map(|i| {
                    (0..c.num_points())
                        .map(|q| {
                            let phi = c.g_row.value(i, q);
                            c.weights[q] * (vals[q][r][0] * phi[0] + vals[q][r][1] * phi[1])
                        })
                        .sum()
                })
                .collect();
            out.extend(lu.solve(&rhs));
        }
        Ok(out)
    }

    /// `P_V`: L² projection onto the local velocity space.
    pub fn p_v(&self, field: &dyn Fn(Point) -> Point) -> Result<Vec<f64>> {
        let c = self.ctx;
        let nv = c.num_v();
        let gram = DenseMatrix::from_fn(nv, nv, |i, j| {
            (0..c.num_points())
                .map(|q| {
                    let (a, b) = (c.v.value(i, q), c.v.value(j, q));
                    c.weights[q] * (a[0] * b[0] + a[1] * b[1])
                })
                .sum()
        });
        let vals: Vec<Point> = c.points.iter().map(|p| field(*p)).collect();
        let rhs: Vec<f64> = (0..nv)
            .map(|i| {
                (0..c.num_points())
                    .map(|q| {
                        let a = c.v.value(i, q);
                        c.weights[q] * (vals[q][0] * a[0] + vals[q][1] * a[1])
                    })
                    .sum()
            })
            .collect();
        Ok(gram.lu()?.solve(&rhs))
    }

    /// `P_Q`: L² projection onto `P_k`.
    pub fn p_q(&self, field: &dyn Fn(Point) -> f64) -> Result<Vec<f64>> {
        let c = self.ctx;
        let nq = c.num_q();
        let gram = DenseMatrix::from_fn(nq, nq, |i, j| {
            (0..c.num_points())
                .map(|q| c.weights[q] * c.q.value(i, q) * c.q.value(j, q))
                .sum()
        });
        let vals: Vec<f64> = c.points.iter().map(|p| field(*p)).collect();
        let rhs: Vec<f64> = (0..nq)
            .map(|i| {
                (0..c.num_points())
                    .map(|q| c.weights[q] * vals[q] * c.q.value(i, q))
                    .sum()
            })
            .collect();
        Ok(gram.lu()?.solve(&rhs))
    }

    /// `Π_V`: facet normal moments against `P_k(F)` and interior moments
    /// against `div G(K) = P_{k−1}²`. With the nodal basis the coefficients
    /// are the moments themselves.
    pub fn pi_v(&self, spaces: &SpaceSet, field: &dyn Fn(Point) -> Point) -> Result<Vec<f64>> {
        let c = self.ctx;
        let pf = c.k + 1;
        let mut out = vec![0.0; c.num_v()];
        for fc in &c.facets {
            for qp in 0..fc.num_points() {
                let u = field(fc.points[qp]);
                let un = u[0] * fc.normal[0] + u[1] * fc.normal[1];
                for (i, pi) in fc.psi[qp].iter().enumerate() {
                    out[fc.local * pf + i] += fc.weights[qp] * un * pi;
                }
            }
        }
        if let Some(basis) = &spaces.interior {
            let w = compose_tabulate(&c.map, basis, &c.ref_points)?;
            let ni = w.num_funcs;
            let base = c.layout.facet_dofs();
            for q in 0..c.num_points() {
                let u = field(c.points[q]);
                for r in 0..2 {
                    for j in 0..ni {
                        out[base + r * ni + j] += c.weights[q] * u[r] * w.value(j, q);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// `P_{M^t}` on one facet: coefficients of `ψ_i t_F` (orthonormal basis).
pub fn p_mt(
    geometry: &FacetGeometry,
    k: usize,
    field: &dyn Fn(Point) -> Point,
    degree: usize,
) -> Result<Vec<f64>> {
    let rule = quadrature(Domain::Segment, degree)?;
    let mut out = vec![0.0; k + 1];
    for (p, w) in rule.points.iter().zip(&rule.weights) {
        let x = geometry.point_at(p[0]);
        let u = field(x);
        let ut = u[0] * geometry.tangent[0] + u[1] * geometry.tangent[1];
        let psi = facet_legendre(k, geometry.length, p[0]);
        for (o, pi) in out.iter_mut().zip(&psi) {
            *o += w * geometry.length * ut * pi;
        }
    }
    Ok(out)
}

/// Target space of [`l2_project`].
#[derive(Clone, Copy)]
pub enum ProjectionTarget<'f> {
    G(&'f dyn Fn(Point) -> Tensor),
    Q(&'f dyn Fn(Point) -> f64),
    V(&'f dyn Fn(Point) -> Point),
}

/// L² projection onto the local gradient, pressure or velocity space.
pub fn l2_project(ctx: &ElementContext, target: ProjectionTarget<'_>) -> Result<Vec<f64>> {
    let p = ProjectionSet::new(ctx);
    match target {
        ProjectionTarget::G(f) => p.p_g(f),
        ProjectionTarget::Q(f) => p.p_q(f),
        ProjectionTarget::V(f) => p.p_v(f),
    }
}

/// Postprocessed velocity in `P_{k+1}²`: `(∇u*, ∇w) = (L^h, ∇w)` for all `w`
/// and `(u*, 1) = (u^h, 1)` per component, solved with one Lagrange row per
/// component. Returns coefficients in the composed `P_{k+1}` basis, component
/// by component.
pub fn postprocess_velocity(
    ctx: &ElementContext,
    spaces: &SpaceSet,
    l: &[f64],
    u: &[f64],
) -> Result<[Vec<f64>; 2]> {
    let w = compose_tabulate(&ctx.map, &spaces.post, &ctx.ref_points)?;
    let n = w.num_funcs;
    let np = ctx.num_points();
    let mut a = DenseMatrix::zeros(n + 1, n + 1);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = (0..np)
                .map(|q| {
                    let (gi, gj) = (w.grad(i, q), w.grad(j, q));
                    ctx.weights[q] * (gi[0] * gj[0] + gi[1] * gj[1])
                })
                .sum();
        }
        let mean: f64 = (0..np).map(|q| ctx.weights[q] * w.value(i, q)).sum();
        a[(i, n)] = mean;
        a[(n, i)] = mean;
    }
    let lu = a.lu().map_err(|_| Error::SingularLocalSystem {
        cell: ctx.cell,
        degree: ctx.k,
    })?;
    let lvals: Vec<Tensor> = (0..np).map(|q| ctx.eval_g(l, q)).collect();
    let uvals: Vec<Point> = (0..np).map(|q| ctx.eval_v(u, q)).collect();
    let mut out: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for (r, o) in out.iter_mut().enumerate() {
        let mut rhs = vec![0.0; n + 1];
        for (i, b) in rhs.iter_mut().take(n).enumerate() {
            *b = (0..np)
                .map(|q| {
                    let g = w.grad(i, q);
                    ctx.weights[q] * (lvals[q][r][0] * g[0] + lvals[q][r][1] * g[1])
                })
                .sum();
        }
        rhs[n] = (0..np).map(|q| ctx.weights[q] * uvals[q][r]).sum();
        let sol = lu.solve(&rhs);
        *o = sol[..n].to_vec();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::CellKind;
    use crate::refelem::{make_basis, Family};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(kind: CellKind, n: usize, k: usize, cell: usize) -> (Mesh, SpaceSet, ElementContext) {
        let mesh = Mesh::structured(n, kind).unwrap();
        let spaces = SpaceSet::new(kind, k).unwrap();
        let ctx = ElementContext::assembly(&mesh, &spaces, cell).unwrap();
        (mesh, spaces, ctx)
    }

    fn unit() -> Coefficients {
        Coefficients::scalar(1.0, 1.0).unwrap()
    }

    #[test]
    fn coefficient_validation() {
        assert!(Coefficients::scalar(0.0, 1.0).is_err());
        assert!(Coefficients::scalar(1.0, -1.0).is_err());
        assert!(Coefficients::new(1.0, [[1.0, 0.5], [0.0, 1.0]]).is_err());
        let c = Coefficients::new(1.0, [[2.0, 1.0], [1.0, 2.0]]).unwrap();
        assert!((c.gamma_max() - 3.0).abs() < 1e-14);
    }

    #[test]
    fn nodal_basis_is_dual_to_moments() {
        for kind in [CellKind::Quad, CellKind::Triangle] {
            let (_, spaces, ctx) = setup(kind, 3, 2, 4);
            let nv = ctx.num_v();
            for j in 0..nv {
                let coeffs: Vec<f64> = (0..nv).map(|i| if i == j { 1.0 } else { 0.0 }).collect();
                let field = |x: Point| {
                    let t = ctx.v_at(&spaces, &[ctx.map.inverse(x)]).unwrap();
                    eval_vector(&t, &coeffs, 0)
                };
                let got = ProjectionSet::new(&ctx).pi_v(&spaces, &field).unwrap();
                for (a, b) in got.iter().zip(&coeffs) {
                    assert!((a - b).abs() < 1e-11, "{kind:?} fn {j}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn gradient_mass_block_is_gram_of_mapped_rows() {
        // oracle: direct quadrature of the Piola-mapped rows on the unit cell
        let mesh = Mesh::structured(1, CellKind::Quad).unwrap();
        let spaces = SpaceSet::new(CellKind::Quad, 1).unwrap();
        let ctx = ElementContext::assembly(&mesh, &spaces, 0).unwrap();
        let blocks = element_blocks(&ctx, &unit());
        let basis = make_basis(Family::Bdm, CellKind::Quad, 1).unwrap();
        let rule = quadrature(Domain::Square, 10).unwrap();
        let t = basis.tabulate_vector(&rule.points).unwrap();
        let nr = basis.num_funcs();
        for i in 0..nr {
            for j in 0..nr {
                let g: f64 = (0..rule.len())
                    .map(|q| {
                        let (a, b) = (t.value(i, q), t.value(j, q));
                        rule.weights[q] * (a[0] * b[0] + a[1] * b[1])
                    })
                    .sum();
                assert!((blocks.m_ll[(i, j)] - g).abs() < 1e-12);
                assert!((blocks.m_ll[(nr + i, nr + j)] - g).abs() < 1e-12);
                assert_eq!(blocks.m_ll[(i, nr + j)], 0.0);
            }
        }
    }

    #[test]
    fn integration_by_parts_identity() {
        // (∇u, g) = −(u, div g) + ⟨u, g n⟩ for random coefficient vectors
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for kind in [CellKind::Quad, CellKind::Triangle] {
            let (_, _, ctx) = setup(kind, 2, 2, 1);
            let blocks = element_blocks(&ctx, &unit());
            let ug: Vec<f64> = (0..ctx.num_v())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let gg: Vec<f64> = (0..ctx.num_g())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let lhs: f64 = blocks
                .d
                .mul_vec(&ug)
                .iter()
                .zip(&gg)
                .map(|(a, b)| a * b)
                .sum();
            let vol: f64 = blocks
                .div_g
                .mul_vec(&ug)
                .iter()
                .zip(&gg)
                .map(|(a, b)| a * b)
                .sum();
            let mut bnd = 0.0;
            for fc in &ctx.facets {
                for q in 0..fc.num_points() {
                    let u = eval_vector(&fc.v, &ug, q);
                    let g = eval_g_table(&fc.g_row, ctx.n_row, &gg, q);
                    for r in 0..2 {
                        bnd += fc.weights[q]
                            * u[r]
                            * (g[r][0] * fc.normal[0] + g[r][1] * fc.normal[1]);
                    }
                }
            }
            assert!(
                (lhs - (-vol + bnd)).abs() < 1e-10 * lhs.abs().max(1.0),
                "{kind:?}"
            );
        }
    }

    #[test]
    fn matching_traces_cancel_trace_term() {
        // constant u with û_t = tr_t(u): T_vol u − T_hat û = 0
        for kind in [CellKind::Quad, CellKind::Triangle] {
            let (_, spaces, ctx) = setup(kind, 2, 1, 0);
            let blocks = element_blocks(&ctx, &unit());
            let c = [0.3, -0.7];
            let u = ProjectionSet::new(&ctx).pi_v(&spaces, &|_| c).unwrap();
            let pf = ctx.k + 1;
            let mut uhat = vec![0.0; ctx.facets.len() * pf];
            for fc in &ctx.facets {
                let coeffs = p_mt(&fc.geometry, ctx.k, &|_| c, 4).unwrap();
                uhat[fc.local * pf..(fc.local + 1) * pf].copy_from_slice(&coeffs);
            }
            let a = blocks.t_vol.mul_vec(&u);
            let b = blocks.t_hat.mul_vec(&uhat);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn block_symmetry_and_definiteness() {
        let (_, _, ctx) = setup(CellKind::Triangle, 2, 2, 3);
        let blocks = element_blocks(&ctx, &Coefficients::scalar(0.5, 2.0).unwrap());
        let m = &blocks.m_ll;
        let g = &blocks.m_gamma;
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                assert!((m[(i, j)] - m[(j, i)]).abs() < 1e-14);
            }
        }
        for i in 0..g.rows() {
            for j in 0..g.cols() {
                assert!((g[(i, j)] - g[(j, i)]).abs() < 1e-14);
            }
            assert!(g[(i, i)] > 0.0);
        }
        assert!(m.lu().is_ok());
        assert!(g.lu().is_ok());
    }

    #[test]
    fn projection_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in [CellKind::Quad, CellKind::Triangle] {
            for k in 1..=2 {
                let (_, spaces, ctx) = setup(kind, 2, k, 1);
                let proj = ProjectionSet::new(&ctx);
                let cg: Vec<f64> = (0..ctx.num_g())
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect();
                let cv: Vec<f64> = (0..ctx.num_v())
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect();
                let cq: Vec<f64> = (0..ctx.num_q())
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect();
                let eval_at = |x: Point| ctx.map.inverse(x);
                let gfield = |x: Point| {
                    let t = piola_tabulate(&ctx.map, &spaces.g_row, &[eval_at(x)]).unwrap();
                    eval_g_table(&t, ctx.n_row, &cg, 0)
                };
                let vfield =
                    |x: Point| eval_vector(&ctx.v_at(&spaces, &[eval_at(x)]).unwrap(), &cv, 0);
                let qfield = |x: Point| {
                    let t = compose_tabulate(&ctx.map, &spaces.q, &[eval_at(x)]).unwrap();
                    (0..cq.len()).map(|j| cq[j] * t.value(j, 0)).sum::<f64>()
                };
                let check = |a: &[f64], b: &[f64]| {
                    for (x, y) in a.iter().zip(b) {
                        assert!((x - y).abs() < 1e-10, "{kind:?} k={k}");
                    }
                };
                check(&proj.p_g(&gfield).unwrap(), &cg);
                check(&proj.p_v(&vfield).unwrap(), &cv);
                check(&proj.pi_v(&spaces, &vfield).unwrap(), &cv);
                check(&proj.p_q(&qfield).unwrap(), &cq);
                check(
                    &l2_project(&ctx, ProjectionTarget::Q(&|_| 2.5)).unwrap()[1..],
                    &vec![0.0; ctx.num_q() - 1],
                );
            }
        }
    }

    #[test]
    fn pq_orthogonality_on_one_cell() {
        let (_, _, ctx) = {
            let mesh = Mesh::structured(4, CellKind::Quad).unwrap();
            let spaces = SpaceSet::new(CellKind::Quad, 2).unwrap();
            let ctx = ElementContext::new(&mesh, &spaces, 5, 14, 14).unwrap();
            (mesh, spaces, ctx)
        };
        let tau = 2.0 * std::f64::consts::PI;
        let f = |x: Point| (tau * x[0]).sin() * (tau * x[1]).sin();
        let c = ProjectionSet::new(&ctx).p_q(&f).unwrap();
        for j in 0..ctx.num_q() {
            let r: f64 = (0..ctx.num_points())
                .map(|q| {
                    ctx.weights[q] * (f(ctx.points[q]) - ctx.eval_q(&c, q)) * ctx.q.value(j, q)
                })
                .sum();
            assert!(r.abs() < 1e-12);
        }
    }

    #[test]
    fn commuting_property_on_one_cell() {
        let tau = 2.0 * std::f64::consts::PI;
        let u = |x: Point| {
            let s = (tau * x[0]).sin() * (tau * x[1]).sin();
            [s, s]
        };
        let divu = |x: Point| {
            tau * ((tau * x[0]).cos() * (tau * x[1]).sin()
                + (tau * x[0]).sin() * (tau * x[1]).cos())
        };
        for kind in [CellKind::Quad, CellKind::Triangle] {
            for k in 1..=2 {
                let mesh = Mesh::structured(4, kind).unwrap();
                let spaces = SpaceSet::new(kind, k).unwrap();
                let ctx = ElementContext::new(&mesh, &spaces, 3, 2 * k + 14, 2 * k + 14).unwrap();
                let proj = ProjectionSet::new(&ctx);
                let pi = proj.pi_v(&spaces, &u).unwrap();
                let pq = proj.p_q(&divu).unwrap();
                let mut diff = 0.0;
                let mut norm = 0.0;
                for q in 0..ctx.num_points() {
                    let d: f64 = (0..ctx.num_v()).map(|j| pi[j] * ctx.v.div(j, q)).sum();
                    let e = ctx.eval_q(&pq, q);
                    diff += ctx.weights[q] * (d - e).powi(2);
                    norm += ctx.weights[q] * e * e;
                }
                assert!(
                    diff.sqrt() <= 1e-9 * norm.sqrt().max(1e-300),
                    "{kind:?} k={k} {} {}",
                    diff.sqrt(),
                    norm.sqrt()
                );
            }
        }
    }

    #[test]
    fn postprocess_reproduces_polynomials() {
        for kind in [CellKind::Quad, CellKind::Triangle] {
            let k = 1;
            let (_, spaces, ctx) = setup(kind, 2, k, 2);
            let proj = ProjectionSet::new(&ctx);
            // w = (x² − y, xy + 1) ∈ P_2²; L = ∇w lies in P_1² rows
            let w = |x: Point| [x[0] * x[0] - x[1], x[0] * x[1] + 1.0];
            let gw = |x: Point| [[2.0 * x[0], -1.0], [x[1], x[0]]];
            let l = proj.p_g(&gw).unwrap();
            let u = proj.p_v(&w).unwrap();
            let post = postprocess_velocity(&ctx, &spaces, &l, &u).unwrap();
            let t = compose_tabulate(&ctx.map, &spaces.post, &ctx.ref_points).unwrap();
            for q in 0..ctx.num_points() {
                let exact = w(ctx.points[q]);
                for r in 0..2 {
                    let v: f64 = (0..t.num_funcs).map(|j| post[r][j] * t.value(j, q)).sum();
                    assert!((v - exact[r]).abs() < 1e-10, "{kind:?}");
                }
            }
            // L = 0, u = const
            let l0 = vec![0.0; ctx.num_g()];
            let uc = proj.p_v(&|_| [1.5, -2.0]).unwrap();
            let post = postprocess_velocity(&ctx, &spaces, &l0, &uc).unwrap();
            for q in 0..ctx.num_points() {
                let v0: f64 = (0..t.num_funcs).map(|j| post[0][j] * t.value(j, q)).sum();
                assert!((v0 - 1.5).abs() < 1e-12);
            }
        }
    }
}
