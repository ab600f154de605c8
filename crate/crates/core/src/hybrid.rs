//! Hybridized solver and the monolithic reference solver.
//!
//! On each cell the unknowns `X = (L, u, p_⊥, λ)` solve
//!
//! ```text
//!  M_gg L + (u, div g)                 = ⟨û, g n⟩
//! −ν (div g, ·)ᵀ L + (∇p_⊥, v) + (γu, v) − ⟨λ, v·n⟩ = (f, v)
//!  (div u, q_⊥)                        = (g, q_⊥)
//!  ⟨u·n, μ⟩                            = ⟨û·n, μ⟩
//! ```
//!
//! so `X = X_src + X_lift û`. The facet unknowns `û = (û_t, û_n)` and the
//! cell means `p̄` then solve
//!
//! ```text
//! [ A  Bᵀ 0 ] [ û ]   [ F      ]
//! [ B  0  c ] [ p̄ ] = [ −(g,1) ]
//! [ 0  cᵀ 0 ] [ ρ ]   [ 0      ]
//! ```
//!
//! with `A = (ν L_lift, L_lift) + (γ u_lift, u_lift)`,
//! `F = (f, u_lift) − (ν L_src, L_lift) − (γ u_src, u_lift)`,
//! `B(û; p̄) = −⟨p̄, û·n⟩` and `c_K = |K|` enforcing a zero-mean pressure.

use rayon::prelude::*;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::fespace::{build_dofmap, compose_tabulate, piola_tabulate, DofMap, SpaceSet, SpaceTag};
use crate::forms::{
    element_blocks, eval_g_table, eval_vector, load_vector, postprocess_velocity, pressure_load,
    Coefficients, ElementBlocks, ElementContext, Point, Tensor,
};
use crate::linalg::{solve_refined, DenseLu, DenseMatrix, SparseMatrix, SymmetricLdlt};
use crate::mesh::{CellKind, Mesh};
use crate::verify::{format_sci, format_sci_prec};

/// Right-hand-side data and the quadrature degree used to integrate it.
#[derive(Clone, Copy)]
pub struct SourceData<'a> {
    pub f: &'a (dyn Fn(Point) -> Point + Sync),
    pub g: &'a (dyn Fn(Point) -> f64 + Sync),
    pub degree: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalSizes {
    pub g: usize,
    pub v: usize,
    pub perp: usize,
    pub lambda: usize,
    pub hat: usize,
}

impl LocalSizes {
    pub fn of(ctx: &ElementContext) -> Self {
        Self {
            g: ctx.num_g(),
            v: ctx.num_v(),
            perp: ctx.num_q() - 1,
            lambda: ctx.num_lambda(),
            hat: ctx.num_hat(),
        }
    }

    pub fn total(&self) -> usize {
        self.g + self.v + self.perp + self.lambda
    }

    fn u0(&self) -> usize {
        self.g
    }

    fn p0(&self) -> usize {
        self.g + self.v
    }

    fn l0(&self) -> usize {
        self.g + self.v + self.perp
    }
}

/// Condensed data of one cell.
#[derive(Debug, Clone)]
pub struct LocalSolver {
    pub cell: usize,
    pub sizes: LocalSizes,
    /// Response of `X` to each local facet unknown (`total × hat`).
    pub lift: DenseMatrix,
    /// Response of `X` to `(f, g)` with `û = 0`.
    pub source: Vec<f64>,
    /// Local contribution to `A`.
    pub a: DenseMatrix,
    /// Local contribution to `F`.
    pub f: Vec<f64>,
    /// `B_K(û) = −⟨1, û·n_K⟩` per local facet unknown.
    pub b: Vec<f64>,
    /// `(g, 1)_K`.
    pub g_mean: f64,
    pub measure: f64,
}

/// Assembled matrix of the local problem.
pub fn local_matrix(
    blocks: &ElementBlocks,
    coeffs: &Coefficients,
    sizes: &LocalSizes,
) -> DenseMatrix {
    let n = sizes.total();
    let nu = coeffs.nu;
    let (u0, p0, l0) = (sizes.u0(), sizes.p0(), sizes.l0());
    let mut m = DenseMatrix::zeros(n, n);
    for a in 0..sizes.g {
        for b in 0..sizes.g {
            m[(a, b)] = blocks.m_ll[(a, b)] / nu;
        }
        for v in 0..sizes.v {
            m[(a, u0 + v)] = blocks.div_g[(a, v)];
            m[(u0 + v, a)] = -nu * blocks.div_g[(a, v)];
        }
    }
    for v in 0..sizes.v {
        for w in 0..sizes.v {
            m[(u0 + v, u0 + w)] = blocks.m_gamma[(v, w)];
        }
        for p in 0..sizes.perp {
            m[(u0 + v, p0 + p)] = blocks.grad_q[(v, p + 1)];
            m[(p0 + p, u0 + v)] = blocks.b_div[(p + 1, v)];
        }
        for l in 0..sizes.lambda {
            m[(u0 + v, l0 + l)] = -blocks.normal_trace[(v, l)];
            m[(l0 + l, u0 + v)] = blocks.normal_trace[(v, l)];
        }
    }
    m
}

/// Right-hand sides of the local problem: one column per facet unknown, and
/// the source column.
pub fn local_rhs(
    blocks: &ElementBlocks,
    sizes: &LocalSizes,
    f_load: &[f64],
    g_load: &[f64],
) -> (DenseMatrix, Vec<f64>) {
    let n = sizes.total();
    let mut lift = DenseMatrix::zeros(n, sizes.hat);
    for j in 0..sizes.hat {
        for a in 0..sizes.g {
            lift[(a, j)] = blocks.lift_g[(a, j)];
        }
        for l in 0..sizes.lambda {
            lift[(sizes.l0() + l, j)] = blocks.lift_mu[(l, j)];
        }
    }
    let mut src = vec![0.0; n];
    src[sizes.u0()..sizes.u0() + sizes.v].copy_from_slice(f_load);
    src[sizes.p0()..sizes.p0() + sizes.perp].copy_from_slice(&g_load[1..]);
    (lift, src)
}

pub fn factorize_local(
    ctx: &ElementContext,
    blocks: &ElementBlocks,
    coeffs: &Coefficients,
    f_load: &[f64],
    g_load: &[f64],
) -> Result<LocalSolver> {
    let sizes = LocalSizes::of(ctx);
    let m = local_matrix(blocks, coeffs, &sizes);
    let lu = DenseLu::factorize(&m).map_err(|_| Error::SingularLocalSystem {
        cell: ctx.cell,
        degree: ctx.k,
    })?;
    let (rhs_lift, rhs_src) = local_rhs(blocks, &sizes, f_load, g_load);
    let lift = lu.solve_matrix(&rhs_lift);
    let source = lu.solve(&rhs_src);

    let block = |mat: &DenseMatrix, start: usize, len: usize| {
        DenseMatrix::from_fn(len, mat.cols(), |i, j| mat[(start + i, j)])
    };
    let l_lift = block(&lift, 0, sizes.g);
    let u_lift = block(&lift, sizes.u0(), sizes.v);
    let l_src = &source[..sizes.g];
    let u_src = &source[sizes.u0()..sizes.u0() + sizes.v];

    let mut a = l_lift.tr_matmul(&blocks.m_ll.matmul(&l_lift));
    a.add_assign(&u_lift.tr_matmul(&blocks.m_gamma.matmul(&u_lift)));
    let ml = blocks.m_ll.mul_vec(l_src);
    let mu = blocks.m_gamma.mul_vec(u_src);
    let mut f = u_lift.tr_mul_vec(f_load);
    for (fi, (x, y)) in f
        .iter_mut()
        .zip(l_lift.tr_mul_vec(&ml).iter().zip(u_lift.tr_mul_vec(&mu)))
    {
        *fi -= x + y;
    }

    let pf = ctx.k + 1;
    let mut b = vec![0.0; sizes.hat];
    for fc in &ctx.facets {
        for (q, w) in fc.weights.iter().enumerate() {
            for i in 0..pf {
                b[fc.local * 2 * pf + pf + i] -= fc.sign * w * fc.psi[q][i];
            }
        }
    }
    // (g, 1)_K from the constant pressure function
    let c0 = ctx.q.value(0, 0);
    Ok(LocalSolver {
        cell: ctx.cell,
        sizes,
        lift,
        source,
        a,
        f,
        b,
        g_mean: g_load[0] / c0,
        measure: ctx.measure,
    })
}

/// Factorizes every cell (in parallel).
pub fn build_local_solvers(
    mesh: &Mesh,
    spaces: &SpaceSet,
    coeffs: &Coefficients,
    data: SourceData<'_>,
) -> Result<Vec<LocalSolver>> {
    (0..mesh.num_cells())
        .into_par_iter()
        .map(|c| {
            let ctx = ElementContext::assembly(mesh, spaces, c)?;
            let blocks = element_blocks(&ctx, coeffs);
            let fl = load_vector(&ctx, spaces, data.f, data.degree)?;
            let gl = pressure_load(&ctx, spaces, data.g, data.degree)?;
            factorize_local(&ctx, &blocks, coeffs, &fl, &gl)
        })
        .collect()
}

/// Global facet-and-mean system together with the local solvers.
#[derive(Debug)]
pub struct HybridSystem {
    pub kind: CellKind,
    pub k: usize,
    pub locals: Vec<LocalSolver>,
    pub matrix: SparseMatrix,
    pub rhs: Vec<f64>,
    pub num_tangential: usize,
    pub num_normal: usize,
    pub num_cells: usize,
    hat_maps: Vec<Vec<Option<usize>>>,
}

impl HybridSystem {
    pub fn dim(&self) -> usize {
        self.rhs.len()
    }

    /// Global index of each local facet unknown of cell `c` (`None` on ∂Ω).
    pub fn hat_map(&self, c: usize) -> &[Option<usize>] {
        &self.hat_maps[c]
    }

    pub fn pbar_offset(&self) -> usize {
        self.num_tangential + self.num_normal
    }

    /// Rows and columns of the `A` block (all facet unknowns).
    pub fn facet_block(&self) -> DenseMatrix {
        let n = self.pbar_offset();
        DenseMatrix::from_fn(n, n, |i, j| self.matrix.get(i, j))
    }

    /// Total number of unknowns eliminated inside the cells.
    pub fn num_local(&self) -> usize {
        self.locals.iter().map(|l| l.sizes.total()).sum()
    }
}

pub fn assemble_global(
    mesh: &Mesh,
    spaces: &SpaceSet,
    locals: Vec<LocalSolver>,
) -> Result<HybridSystem> {
    let k = spaces.k;
    let pf = k + 1;
    let mt = build_dofmap(mesh, SpaceTag::MT0, k)?;
    let mn = build_dofmap(mesh, SpaceTag::MN0, k)?;
    let nt = mt.num_dofs();
    let nn = mn.num_dofs();
    let nc = mesh.num_cells();
    let dim = nt + nn + nc + 1;
    let mult = dim - 1;

    let hat_maps: Vec<Vec<Option<usize>>> = (0..nc)
        .map(|c| {
            let (t, n) = (mt.cell_dofs(c), mn.cell_dofs(c));
            let mut out = Vec::with_capacity(2 * t.len());
            for lf in 0..spaces.num_facets() {
                for i in 0..pf {
                    out.push(t[lf * pf + i].map(|d| d.index));
                }
                for i in 0..pf {
                    out.push(n[lf * pf + i].map(|d| nt + d.index));
                }
            }
            out
        })
        .collect();

    let mut matrix = SparseMatrix::new(dim, dim);
    let mut rhs = vec![0.0; dim];
    for (c, loc) in locals.iter().enumerate() {
        let map = &hat_maps[c];
        let prow = nt + nn + c;
        for (i, gi) in map.iter().enumerate() {
            let Some(gi) = *gi else { continue };
            for (j, gj) in map.iter().enumerate() {
                if let Some(gj) = *gj {
                    matrix.push(gi, gj, loc.a[(i, j)]);
                }
            }
            rhs[gi] += loc.f[i];
            matrix.push(gi, prow, loc.b[i]);
            matrix.push(prow, gi, loc.b[i]);
        }
        matrix.push(prow, mult, loc.measure);
        matrix.push(mult, prow, loc.measure);
        rhs[prow] = -loc.g_mean;
    }
    matrix.finalize();
    Ok(HybridSystem {
        kind: mesh.kind(),
        k,
        locals,
        matrix,
        rhs,
        num_tangential: nt,
        num_normal: nn,
        num_cells: nc,
        hat_maps,
    })
}

/// Solution of the global system.
#[derive(Debug, Clone)]
pub struct HybridSolution {
    pub uhat_t: Vec<f64>,
    pub uhat_n: Vec<f64>,
    pub pbar: Vec<f64>,
    /// Multiplier of the zero-mean row; zero for compatible data.
    pub multiplier: f64,
}

pub fn solve_hybrid(system: &HybridSystem) -> Result<HybridSolution> {
    let nt = system.num_tangential;
    let nn = system.num_normal;
    let mut signs = vec![1_i8; system.dim()];
    signs[nt + nn..].fill(-1);
    // without a facet neighbour (single-cell mesh) a pressure pivot is zero
    let x = match SymmetricLdlt::factorize(&system.matrix, &signs) {
        Ok(ldlt) => ldlt.solve_refined(&system.matrix, &system.rhs)?,
        Err(Error::SingularMatrix { .. }) => {
            let lu = system.matrix.factorize()?;
            solve_refined(&system.matrix, &lu, &system.rhs)?
        }
        Err(e) => return Err(e),
    };
    Ok(HybridSolution {
        uhat_t: x[..nt].to_vec(),
        uhat_n: x[nt..nt + nn].to_vec(),
        pbar: x[nt + nn..nt + nn + system.num_cells].to_vec(),
        multiplier: x[x.len() - 1],
    })
}

/// Discrete fields, stored as per-cell local coefficient vectors.
#[derive(Debug, Clone)]
pub struct SolutionFields {
    pub kind: CellKind,
    pub k: usize,
    /// Gradient coefficients per cell.
    pub l: Vec<Vec<f64>>,
    /// Velocity coefficients per cell (local nodal basis, outward moments).
    pub u: Vec<Vec<f64>>,
    /// Pressure coefficients per cell (`p̄ + p_⊥`).
    pub p: Vec<Vec<f64>>,
    /// Tangential facet unknowns, `M_t_h(0)` numbering.
    pub uhat_t: Vec<f64>,
    /// Normal facet unknowns, `M_n_h(0)` numbering (empty for the direct solver).
    pub uhat_n: Vec<f64>,
    /// Multipliers per cell (empty for the direct solver).
    pub lambda: Vec<Vec<f64>>,
    /// Postprocessed velocity, `P_{k+1}` coefficients per component.
    pub ustar: Option<Vec<[Vec<f64>; 2]>>,
}

impl SolutionFields {
    /// Zero fields shaped for `mesh` and `spaces`.
    pub fn zeros(mesh: &Mesh, spaces: &SpaceSet) -> Result<Self> {
        let nc = mesh.num_cells();
        let k = spaces.k;
        Ok(Self {
            kind: mesh.kind(),
            k,
            l: vec![vec![0.0; spaces.num_g()]; nc],
            u: vec![vec![0.0; spaces.num_v()]; nc],
            p: vec![vec![0.0; spaces.num_q()]; nc],
            uhat_t: vec![0.0; build_dofmap(mesh, SpaceTag::MT0, k)?.num_dofs()],
            uhat_n: Vec::new(),
            lambda: Vec::new(),
            ustar: None,
        })
    }

    /// Global `V_h^div(0)` coefficients (shared facet values averaged).
    pub fn u_global(&self, vmap: &DofMap) -> Vec<f64> {
        let mut out = vec![0.0; vmap.num_dofs()];
        let mut count = vec![0.0_f64; vmap.num_dofs()];
        for (c, u) in self.u.iter().enumerate() {
            for (d, val) in vmap.cell_dofs(c).iter().zip(u) {
                if let Some(d) = d {
                    out[d.index] += d.sign * val;
                    count[d.index] += 1.0;
                }
            }
        }
        out.iter_mut()
            .zip(&count)
            .for_each(|(o, n)| *o /= n.max(1.0));
        out
    }

    /// Cell means of the pressure.
    pub fn pressure_means(&self, spaces: &SpaceSet) -> Result<Vec<f64>> {
        let c0 = spaces.q.tabulate_scalar(&[[0.0, 0.0]])?.value(0, 0);
        Ok(self.p.iter().map(|p| p[0] * c0).collect())
    }
}

pub fn recover(
    mesh: &Mesh,
    spaces: &SpaceSet,
    system: &HybridSystem,
    solution: &HybridSolution,
    postprocess: bool,
) -> Result<SolutionFields> {
    let c0 = spaces.q.tabulate_scalar(&[[0.0, 0.0]])?.value(0, 0);
    let nt = system.num_tangential;
    let per_cell: Vec<Result<_>> = system
        .locals
        .par_iter()
        .map(|loc| {
            let c = loc.cell;
            let s = loc.sizes;
            let uhat: Vec<f64> = system
                .hat_map(c)
                .iter()
                .map(|g| match g {
                    Some(g) if *g < nt => solution.uhat_t[*g],
                    Some(g) => solution.uhat_n[*g - nt],
                    None => 0.0,
                })
                .collect();
            let mut x = loc.source.clone();
            let lx = loc.lift.mul_vec(&uhat);
            x.iter_mut().zip(&lx).for_each(|(a, b)| *a += b);
            let l = x[..s.g].to_vec();
            let u = x[s.u0()..s.u0() + s.v].to_vec();
            let mut p = Vec::with_capacity(s.perp + 1);
            p.push(solution.pbar[c] / c0);
            p.extend_from_slice(&x[s.p0()..s.p0() + s.perp]);
            let lambda = x[s.l0()..].to_vec();
            let ustar = if postprocess {
                let ctx = ElementContext::assembly(mesh, spaces, c)?;
                Some(postprocess_velocity(&ctx, spaces, &l, &u)?)
            } else {
                None
            };
            Ok((l, u, p, lambda, ustar))
        })
        .collect();
    let mut fields = SolutionFields {
        kind: mesh.kind(),
        k: spaces.k,
        l: Vec::with_capacity(per_cell.len()),
        u: Vec::with_capacity(per_cell.len()),
        p: Vec::with_capacity(per_cell.len()),
        uhat_t: solution.uhat_t.clone(),
        uhat_n: solution.uhat_n.clone(),
        lambda: Vec::with_capacity(per_cell.len()),
        ustar: if postprocess {
            Some(Vec::with_capacity(per_cell.len()))
        } else {
            None
        },
    };
    for r in per_cell {
        let (l, u, p, lambda, ustar) = r?;
        fields.l.push(l);
        fields.u.push(u);
        fields.p.push(p);
        fields.lambda.push(lambda);
        if let (Some(all), Some(us)) = (fields.ustar.as_mut(), ustar) {
            all.push(us);
        }
    }
    Ok(fields)
}

/// Result of a full hybridized solve.
#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub fields: SolutionFields,
    /// Size of the global system.
    pub n_global: usize,
    /// Unknowns eliminated cell by cell.
    pub n_local: usize,
    pub multiplier: f64,
}

/// Local factorization, global assembly and solve, recovery, and optional
/// postprocessing.
pub fn solve(
    mesh: &Mesh,
    spaces: &SpaceSet,
    coeffs: &Coefficients,
    data: SourceData<'_>,
    postprocess: bool,
) -> Result<SolveOutput> {
    let locals = build_local_solvers(mesh, spaces, coeffs, data)?;
    let system = assemble_global(mesh, spaces, locals)?;
    let sol = solve_hybrid(&system)?;
    let fields = recover(mesh, spaces, &system, &sol, postprocess)?;
    Ok(SolveOutput {
        fields,
        n_global: system.dim(),
        n_local: system.num_local(),
        multiplier: sol.multiplier,
    })
}

/// Monolithic solve over gradient, velocity in `V_h^div(0)`, pressure (with
/// one mean multiplier) and tangential facet unknowns.
pub fn direct_assemble_solve(
    mesh: &Mesh,
    spaces: &SpaceSet,
    coeffs: &Coefficients,
    data: SourceData<'_>,
) -> Result<SolutionFields> {
    let k = spaces.k;
    let gmap = build_dofmap(mesh, SpaceTag::G, k)?;
    let vmap = build_dofmap(mesh, SpaceTag::VDiv0, k)?;
    let qmap = build_dofmap(mesh, SpaceTag::QRing, k)?;
    let tmap = build_dofmap(mesh, SpaceTag::MT0, k)?;
    let (ng, nv, nq, nt) = (
        gmap.num_dofs(),
        vmap.num_dofs(),
        qmap.num_dofs(),
        tmap.num_dofs(),
    );
    let (v0, q0, t0) = (ng, ng + nv, ng + nv + nq);
    let mult = t0 + nt;
    let dim = mult + 1;
    let mut a = SparseMatrix::new(dim, dim);
    let mut rhs = vec![0.0; dim];

    for c in 0..mesh.num_cells() {
        let ctx = ElementContext::assembly(mesh, spaces, c)?;
        let bl = element_blocks(&ctx, coeffs);
        let fl = load_vector(&ctx, spaces, data.f, data.degree)?;
        let gl = pressure_load(&ctx, spaces, data.g, data.degree)?;
        let gd = gmap.cell_dofs(c);
        let vd = vmap.cell_dofs(c);
        let qd = qmap.cell_dofs(c);
        let td = tmap.cell_dofs(c);
        let global =
            |d: &Option<crate::fespace::SignedDof>, off: usize| d.map(|d| (off + d.index, d.sign));

        for (ia, da) in gd.iter().enumerate() {
            let (ra, _) = global(da, 0).expect("gradient dofs are never eliminated");
            for (ib, db) in gd.iter().enumerate() {
                let (cb, _) = global(db, 0).expect("gradient dofs are never eliminated");
                a.push(ra, cb, bl.m_ll[(ia, ib)]);
            }
            for (iv, dv) in vd.iter().enumerate() {
                if let Some((cv, sv)) = global(dv, v0) {
                    let val = -bl.d[(ia, iv)] + bl.t_vol[(ia, iv)];
                    a.push(ra, cv, sv * val);
                    a.push(cv, ra, -sv * val);
                }
            }
            for (it, dt) in td.iter().enumerate() {
                if let Some((ct, st)) = global(dt, t0) {
                    a.push(ra, ct, -st * bl.t_hat[(ia, it)]);
                    a.push(ct, ra, st * bl.t_hat[(ia, it)]);
                }
            }
        }
        for (iv, dv) in vd.iter().enumerate() {
            let Some((rv, sv)) = global(dv, v0) else {
                continue;
            };
            for (iw, dw) in vd.iter().enumerate() {
                if let Some((cw, sw)) = global(dw, v0) {
                    a.push(rv, cw, sv * sw * bl.m_gamma[(iv, iw)]);
                }
            }
            for (iq, dq) in qd.iter().enumerate() {
                let (cq, _) = global(dq, q0).expect("pressure dofs are never eliminated");
                a.push(rv, cq, -sv * bl.b_div[(iq, iv)]);
                a.push(cq, rv, sv * bl.b_div[(iq, iv)]);
            }
            rhs[rv] += sv * fl[iv];
        }
        for (iq, dq) in qd.iter().enumerate() {
            let (rq, _) = global(dq, q0).expect("pressure dofs are never eliminated");
            let mean: f64 = (0..ctx.num_points())
                .map(|q| ctx.weights[q] * ctx.q.value(iq, q))
                .sum();
            a.push(rq, mult, mean);
            a.push(mult, rq, mean);
            rhs[rq] += gl[iq];
        }
    }
    a.finalize();
    let lu = a.factorize()?;
    let x = solve_refined(&a, &lu, &rhs)?;

    let mut fields = SolutionFields::zeros(mesh, spaces)?;
    for c in 0..mesh.num_cells() {
        for (i, d) in gmap.cell_dofs(c).iter().enumerate() {
            fields.l[c][i] = d.map_or(0.0, |d| x[d.index]);
        }
        for (i, d) in vmap.cell_dofs(c).iter().enumerate() {
            fields.u[c][i] = d.map_or(0.0, |d| d.sign * x[v0 + d.index]);
        }
        for (i, d) in qmap.cell_dofs(c).iter().enumerate() {
            fields.p[c][i] = d.map_or(0.0, |d| x[q0 + d.index]);
        }
    }
    fields.uhat_t = x[t0..t0 + nt].to_vec();
    Ok(fields)
}

/// Plain-text dump: a header, per-cell coefficient records, then samples on
/// a uniform `(samples + 1)²` grid with columns
/// `x y u1 u2 p L11 L12 L21 L22 ustar1 ustar2` (`ustar` is `nan` when absent).
pub fn solution_dump(
    mesh: &Mesh,
    spaces: &SpaceSet,
    fields: &SolutionFields,
    samples: usize,
) -> Result<String> {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# solution kind={} k={} cells={}",
        mesh.kind().name(),
        spaces.k,
        mesh.num_cells()
    );
    let join = |v: &[f64]| {
        v.iter()
            .map(|&x| format_sci_prec(x, 16))
            .collect::<Vec<_>>()
            .join(" ")
    };
    for c in 0..mesh.num_cells() {
        let _ = writeln!(out, "cell {c} L {}", join(&fields.l[c]));
        let _ = writeln!(out, "cell {c} u {}", join(&fields.u[c]));
        let _ = writeln!(out, "cell {c} p {}", join(&fields.p[c]));
        if let Some(us) = &fields.ustar {
            let _ = writeln!(
                out,
                "cell {c} ustar {} | {}",
                join(&us[c][0]),
                join(&us[c][1])
            );
        }
    }
    let _ = writeln!(out, "# x y u1 u2 p L11 L12 L21 L22 ustar1 ustar2");
    let m = samples.max(1);
    for j in 0..=m {
        for i in 0..=m {
            let x = [i as f64 / m as f64, j as f64 / m as f64];
            let c = mesh.locate(x).ok_or(Error::IndexOutOfRange {
                what: "sample point",
                index: j * (m + 1) + i,
                len: (m + 1) * (m + 1),
            })?;
            let v = evaluate_at(mesh, spaces, fields, c, x)?;
            let _ = writeln!(
                out,
                "{}",
                [
                    x[0],
                    x[1],
                    v.u[0],
                    v.u[1],
                    v.p,
                    v.l[0][0],
                    v.l[0][1],
                    v.l[1][0],
                    v.l[1][1],
                    v.ustar.map_or(f64::NAN, |s| s[0]),
                    v.ustar.map_or(f64::NAN, |s| s[1])
                ]
                .map(format_sci)
                .join(" "),
            );
        }
    }
    Ok(out)
}

/// Field values at a point of cell `c`.
#[derive(Debug, Clone, Copy)]
pub struct PointValues {
    pub l: Tensor,
    pub u: Point,
    pub p: f64,
    pub ustar: Option<Point>,
}

pub fn evaluate_at(
    mesh: &Mesh,
    spaces: &SpaceSet,
    fields: &SolutionFields,
    c: usize,
    x: Point,
) -> Result<PointValues> {
    let map = mesh.affine_map(c)?;
    let xi = [map.inverse(x)];
    let ctx = ElementContext::assembly(mesh, spaces, c)?;
    let g = piola_tabulate(&map, &spaces.g_row, &xi)?;
    let v = ctx.v_at(spaces, &xi)?;
    let q = compose_tabulate(&map, &spaces.q, &xi)?;
    let p = (0..q.num_funcs)
        .map(|j| fields.p[c][j] * q.value(j, 0))
        .sum();
    let ustar = match &fields.ustar {
        Some(us) => {
            let t = compose_tabulate(&map, &spaces.post, &xi)?;
            let comp = |r: usize| {
                (0..t.num_funcs)
                    .map(|j| us[c][r][j] * t.value(j, 0))
                    .sum::<f64>()
            };
            Some([comp(0), comp(1)])
        }
        None => None,
    };
    Ok(PointValues {
        l: eval_g_table(&g, spaces.g_row.num_funcs(), &fields.l[c], 0),
        u: eval_vector(&v, &fields.u[c], 0),
        p,
        ustar,
    })
}
