//! Manufactured solutions, error norms, convergence studies and the
//! structural checks on computed fields.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fespace::{build_dofmap, compose_tabulate, facet_legendre, SpaceSet, SpaceTag};
use crate::forms::{
    eval_g_table, eval_vector, p_mt, pressure_load, Coefficients, ElementContext, Point,
    ProjectionSet, Tensor,
};
use crate::hybrid::{evaluate_at, solve, SolutionFields, SourceData};
use crate::mesh::{CellKind, Mesh, TriangleSplit};

/// `u = (s, s)` with `s = sin(2πx) sin(2πy)` and
/// `p = sin(mπx) sin(mπy) − mean`, with `f` and `g` derived by hand.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManufacturedCase {
    pub test_id: Option<u8>,
    pub nu: f64,
    pub gamma: f64,
    pub m: u32,
    p_mean: f64,
}

const TAU: f64 = 2.0 * PI;

impl ManufacturedCase {
    /// Case with arbitrary `(ν, γ, m)`, checked against finite differences.
    pub fn custom(nu: f64, gamma: f64, m: u32) -> Result<Self> {
        Coefficients::scalar(nu, gamma)?;
        if m == 0 {
            return Err(Error::InvalidParameter(
                "pressure frequency m must be positive".into(),
            ));
        }
        let mp = m as f64 * PI;
        let side = (1.0 - mp.cos()) / mp;
        let case = Self {
            test_id: None,
            nu,
            gamma,
            m,
            p_mean: side * side,
        };
        case.validate()?;
        Ok(case)
    }

    pub fn coefficients(&self) -> Coefficients {
        Coefficients::scalar(self.nu, self.gamma).expect("validated at construction")
    }

    fn s(x: Point) -> (f64, f64, f64) {
        let (sx, cx) = (TAU * x[0]).sin_cos();
        let (sy, cy) = (TAU * x[1]).sin_cos();
        (sx * sy, TAU * cx * sy, TAU * sx * cy)
    }

    pub fn u(&self, x: Point) -> Point {
        let s = Self::s(x).0;
        [s, s]
    }

    /// `L = ∇u`, row `r` holding the gradient of `u_r`.
    pub fn grad_u(&self, x: Point) -> Tensor {
        let (_, sx, sy) = Self::s(x);
        [[sx, sy], [sx, sy]]
    }

    pub fn p(&self, x: Point) -> f64 {
        let a = self.m as f64 * PI;
        (a * x[0]).sin() * (a * x[1]).sin() - self.p_mean
    }

    pub fn grad_p(&self, x: Point) -> Point {
        let a = self.m as f64 * PI;
        let (sx, cx) = (a * x[0]).sin_cos();
        let (sy, cy) = (a * x[1]).sin_cos();
        [a * cx * sy, a * sx * cy]
    }

    /// `f = −ν div L + γ u + ∇p`, using `Δs = −8π² s`.
    pub fn f(&self, x: Point) -> Point {
        let s = Self::s(x).0;
        let gp = self.grad_p(x);
        let base = (2.0 * TAU * TAU * self.nu + self.gamma) * s;
        [base + gp[0], base + gp[1]]
    }

    /// `g = div u`.
    pub fn g(&self, x: Point) -> f64 {
        let (_, sx, sy) = Self::s(x);
        sx + sy
    }

    /// Compares `L`, `f` and `g` with sixth-order central differences of
    /// `u`, `L` and `p` at 100 seeded random points.
    pub fn validate(&self) -> Result<()> {
        let h = 1e-3;
        let d = |fun: &dyn Fn(Point) -> f64, x: Point, axis: usize| -> f64 {
            let at = |t: f64| {
                let mut y = x;
                y[axis] += t * h;
                fun(y)
            };
            (45.0 * (at(1.0) - at(-1.0)) - 9.0 * (at(2.0) - at(-2.0)) + (at(3.0) - at(-3.0)))
                / (60.0 * h)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let check = |name: &str, got: f64, expect: f64, scale: f64| -> Result<()> {
            if (got - expect).abs() > 1e-6 * expect.abs().max(scale) {
                return Err(Error::ManufacturedData(format!(
                    "{name}: closed form {got:e}, finite difference {expect:e}"
                )));
            }
            Ok(())
        };
        let scale_f = 8.0 * PI * PI * self.nu + self.gamma + self.m as f64 * PI;
        for _ in 0..100 {
            let x = [rng.random_range(0.01..0.99), rng.random_range(0.01..0.99)];
            let l = self.grad_u(x);
            for r in 0..2 {
                for c in 0..2 {
                    let fd = d(&|y| self.u(y)[r], x, c);
                    check("L", l[r][c], fd, TAU)?;
                }
            }
            let f = self.f(x);
            for r in 0..2 {
                let div_l = d(&|y| self.grad_u(y)[r][0], x, 0) + d(&|y| self.grad_u(y)[r][1], x, 1);
                let fd = -self.nu * div_l + self.gamma * self.u(x)[r] + d(&|y| self.p(y), x, r);
                check("f", f[r], fd, scale_f)?;
            }
            let fd = d(&|y| self.u(y)[0], x, 0) + d(&|y| self.u(y)[1], x, 1);
            check("g", self.g(x), fd, TAU)?;
        }
        Ok(())
    }

    /// `Θ = ν^{1/2} ‖L‖_{k+1} + γ_max^{1/2} ‖u‖_{k+1}` in closed form.
    pub fn theta(&self, k: usize) -> f64 {
        let mut u2 = 0.0;
        let mut l2 = 0.0;
        for j in 0..=k + 1 {
            let count = (j + 1) as f64;
            u2 += 2.0 * count * TAU.powi(2 * j as i32) / 4.0;
            l2 += count * TAU.powi(2 * j as i32 + 2);
        }
        self.nu.sqrt() * l2.sqrt() + self.gamma.sqrt() * u2.sqrt()
    }
}

/// The three experiments: `(ν, γ, m) = (1, 1, 2), (1, 1, 20), (10⁻⁴, 1, 2)`.
pub fn make_case(test_id: u8) -> Result<ManufacturedCase> {
    let (nu, gamma, m) = match test_id {
        1 => (1.0, 1.0, 2),
        2 => (1.0, 1.0, 20),
        3 => (1e-4, 1.0, 2),
        other => {
            return Err(Error::InvalidParameter(format!(
                "unknown test id {other} (expected 1, 2 or 3)"
            )))
        }
    };
    let mut case = ManufacturedCase::custom(nu, gamma, m)?;
    case.test_id = Some(test_id);
    Ok(case)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorReport {
    pub err_l: f64,
    pub err_u: f64,
    pub err_p: f64,
    pub err_ustar: Option<f64>,
    /// `‖Π_V u − u^h‖`.
    pub err_eu: f64,
    /// `‖P_G L − L^h‖`.
    pub err_el: f64,
    /// `|||(e_u, e_û)|||₁` over all cell boundaries.
    pub h1_discrete: f64,
    /// `(Σ ν h_F ‖δ_L n‖²_F)^{1/2}`.
    pub delta_l_facet: f64,
    /// `‖λ^h‖_{∂T_h}` when multipliers are available.
    pub lambda_norm: Option<f64>,
    /// `ν‖e_L‖² + (γ e_u, e_u)`.
    pub energy: f64,
    /// `⟨tr_t(ν δ_L n), tr_t e_u − e_û⟩ − (γ δ_u, e_u)`.
    pub energy_rhs: f64,
}

#[derive(Default, Clone, Copy)]
struct Sums {
    l: f64,
    u: f64,
    p: f64,
    ustar: f64,
    eu: f64,
    el: f64,
    h1: f64,
    dl: f64,
    lambda: f64,
    energy: f64,
    energy_rhs: f64,
}

impl std::ops::Add for Sums {
    type Output = Sums;
    fn add(self, o: Sums) -> Sums {
        Sums {
            l: self.l + o.l,
            u: self.u + o.u,
            p: self.p + o.p,
            ustar: self.ustar + o.ustar,
            eu: self.eu + o.eu,
            el: self.el + o.el,
            h1: self.h1 + o.h1,
            dl: self.dl + o.dl,
            lambda: self.lambda + o.lambda,
            energy: self.energy + o.energy,
            energy_rhs: self.energy_rhs + o.energy_rhs,
        }
    }
}

fn frob(a: Tensor) -> f64 {
    a[0][0] * a[0][0] + a[0][1] * a[0][1] + a[1][0] * a[1][0] + a[1][1] * a[1][1]
}

fn sub2(a: Tensor, b: Tensor) -> Tensor {
    [
        [a[0][0] - b[0][0], a[0][1] - b[0][1]],
        [a[1][0] - b[1][0], a[1][1] - b[1][1]],
    ]
}

/// Error norms of computed fields on a rule of degree `degree` (at least
/// `2k + 6` is recommended).
pub fn error_norms_with_degree(
    mesh: &Mesh,
    spaces: &SpaceSet,
    fields: &SolutionFields,
    case: &ManufacturedCase,
    degree: usize,
) -> Result<ErrorReport> {
    let k = spaces.k;
    let pf = k + 1;
    let tmap = build_dofmap(mesh, SpaceTag::MT0, k)?;
    let coeffs = case.coefficients();
    let nu = case.nu;
    let u_fn = |x: Point| case.u(x);
    let l_fn = |x: Point| case.grad_u(x);
    let sums: Vec<Result<Sums>> = (0..mesh.num_cells())
        .into_par_iter()
        .map(|c| {
            let ctx = ElementContext::new(mesh, spaces, c, degree, degree)?;
            let proj = ProjectionSet::new(&ctx);
            let pi = proj.pi_v(spaces, &u_fn)?;
            let pg = proj.p_g(&l_fn)?;
            let eu: Vec<f64> = pi.iter().zip(&fields.u[c]).map(|(a, b)| a - b).collect();
            let el: Vec<f64> = pg.iter().zip(&fields.l[c]).map(|(a, b)| a - b).collect();
            let post = match &fields.ustar {
                Some(us) => Some((
                    compose_tabulate(&ctx.map, &spaces.post, &ctx.ref_points)?,
                    &us[c],
                )),
                None => None,
            };
            let mut s = Sums::default();
            for q in 0..ctx.num_points() {
                let w = ctx.weights[q];
                let x = ctx.points[q];
                let lh = ctx.eval_g(&fields.l[c], q);
                let uh = ctx.eval_v(&fields.u[c], q);
                let ph = ctx.eval_q(&fields.p[c], q);
                let ue = case.u(x);
                s.l += w * frob(sub2(case.grad_u(x), lh));
                s.u += w * ((ue[0] - uh[0]).powi(2) + (ue[1] - uh[1]).powi(2));
                s.p += w * (case.p(x) - ph).powi(2);
                if let Some((t, us)) = &post {
                    for (r, uer) in ue.iter().enumerate() {
                        let v: f64 = (0..t.num_funcs).map(|j| us[r][j] * t.value(j, q)).sum();
                        s.ustar += w * (uer - v).powi(2);
                    }
                }
                let e = ctx.eval_v(&eu, q);
                let eg = coeffs.apply_gamma(e);
                s.eu += w * (e[0] * e[0] + e[1] * e[1]);
                s.energy += w * (eg[0] * e[0] + eg[1] * e[1]);
                s.h1 += w * frob(ctx.eval_grad_v(&eu, q));
                let elq = ctx.eval_g(&el, q);
                s.el += w * frob(elq);
                s.energy += nu * w * frob(elq);
                // (γ δ_u, e_u) with δ_u = u − Π_V u
                let piu = ctx.eval_v(&pi, q);
                let du = coeffs.apply_gamma([ue[0] - piu[0], ue[1] - piu[1]]);
                s.energy_rhs -= w * (du[0] * e[0] + du[1] * e[1]);
            }
            let tdofs = tmap.cell_dofs(c);
            for fc in &ctx.facets {
                let h = fc.geometry.length;
                let t = fc.geometry.tangent;
                let n = fc.normal;
                let pmt = p_mt(&fc.geometry, k, &u_fn, degree)?;
                let ehat: Vec<f64> = (0..pf)
                    .map(|i| {
                        let uh = tdofs[fc.local * pf + i].map_or(0.0, |d| fields.uhat_t[d.index]);
                        pmt[i] - uh
                    })
                    .collect();
                for q in 0..fc.num_points() {
                    let w = fc.weights[q];
                    let e = eval_vector(&fc.v, &eu, q);
                    let eh: f64 = (0..pf).map(|i| ehat[i] * fc.psi[q][i]).sum();
                    let jump = e[0] * t[0] + e[1] * t[1] - eh;
                    s.h1 += w * jump * jump / h;
                    let lq = case.grad_u(fc.points[q]);
                    let pgq = eval_g_table(&fc.g_row, ctx.n_row, &pg, q);
                    let dl = sub2(lq, pgq);
                    let dln = [
                        dl[0][0] * n[0] + dl[0][1] * n[1],
                        dl[1][0] * n[0] + dl[1][1] * n[1],
                    ];
                    s.dl += nu * h * w * (dln[0] * dln[0] + dln[1] * dln[1]);
                    s.energy_rhs += nu * w * (dln[0] * t[0] + dln[1] * t[1]) * jump;
                }
                if let Some(lam) = fields.lambda.get(c) {
                    for q in 0..fc.num_points() {
                        let v: f64 = (0..pf).map(|i| lam[fc.local * pf + i] * fc.psi[q][i]).sum();
                        s.lambda += fc.weights[q] * v * v;
                    }
                }
            }
            Ok(s)
        })
        .collect();
    let mut total = Sums::default();
    for s in sums {
        total = total + s?;
    }
    Ok(ErrorReport {
        err_l: total.l.sqrt(),
        err_u: total.u.sqrt(),
        err_p: total.p.sqrt(),
        err_ustar: fields.ustar.as_ref().map(|_| total.ustar.sqrt()),
        err_eu: total.eu.sqrt(),
        err_el: total.el.sqrt(),
        h1_discrete: total.h1.sqrt(),
        delta_l_facet: total.dl.sqrt(),
        lambda_norm: if fields.lambda.is_empty() {
            None
        } else {
            Some(total.lambda.sqrt())
        },
        energy: total.energy,
        energy_rhs: total.energy_rhs,
    })
}

/// Error norms on the default rule of degree `2k + 6`.
pub fn error_norms(
    mesh: &Mesh,
    spaces: &SpaceSet,
    fields: &SolutionFields,
    case: &ManufacturedCase,
) -> Result<ErrorReport> {
    error_norms_with_degree(mesh, spaces, fields, case, 2 * spaces.k + 6)
}

/// Observed order `log₂(e_prev / e_next)` for a halving of `h`.
pub fn observed_order(prev: f64, next: f64) -> Option<f64> {
    if prev > 0.0 && next > 0.0 {
        Some((prev / next).log2())
    } else {
        None
    }
}

/// `|||(e_u, e_û)|||₁ / ‖e_L‖` per level; `None` when `‖e_L‖ < 1e−14`.
pub fn stability_ratio(reports: &[ErrorReport]) -> Vec<Option<f64>> {
    reports
        .iter()
        .map(|r| {
            if r.err_el < 1e-14 {
                None
            } else {
                Some(r.h1_discrete / r.err_el)
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ConvergenceRow {
    pub level: usize,
    pub n: usize,
    pub n_ele: usize,
    pub n_global: usize,
    pub n_local: usize,
    pub errors: ErrorReport,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ConvergenceTable {
    pub kind: CellKind,
    pub k: usize,
    pub case: ManufacturedCase,
    pub rows: Vec<ConvergenceRow>,
}

/// Column accessors in table order: `L, u, p, u*, e_u`.
pub const COLUMNS: [&str; 5] = ["L", "u", "p", "ustar", "eu"];

fn column(e: &ErrorReport, i: usize) -> f64 {
    match i {
        0 => e.err_l,
        1 => e.err_u,
        2 => e.err_p,
        3 => e.err_ustar.unwrap_or(f64::NAN),
        _ => e.err_eu,
    }
}

/// C-style `%.6e` (e.g. `4.211000e-03`).
pub fn format_sci(x: f64) -> String {
    format_sci_prec(x, 6)
}

/// C-style `%.*e` with `digits` after the decimal point.
pub fn format_sci_prec(x: f64, digits: usize) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    let s = format!("{x:.digits$e}");
    match s.split_once('e') {
        Some((mant, exp)) => {
            let (sign, digits) = match exp.strip_prefix('-') {
                Some(d) => ('-', d),
                None => ('+', exp),
            };
            format!("{mant}e{sign}{digits:0>2}")
        }
        None => s,
    }
}

impl ConvergenceTable {
    pub fn error(&self, row: usize, col: usize) -> f64 {
        column(&self.rows[row].errors, col)
    }

    /// Observed order of column `col` at `row` (from row 1 on).
    pub fn order(&self, row: usize, col: usize) -> Option<f64> {
        if row == 0 {
            return None;
        }
        observed_order(self.error(row - 1, col), self.error(row, col))
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("level,n_ele,n_global,n_local,err_L,ord_L,err_u,ord_u,err_p,ord_p,err_ustar,ord_ustar,err_eu,ord_eu\n");
        for (i, r) in self.rows.iter().enumerate() {
            let _ = write!(out, "{},{},{},{}", r.level, r.n_ele, r.n_global, r.n_local);
            for c in 0..COLUMNS.len() {
                let ord = self.order(i, c).map(format_sci).unwrap_or_default();
                let _ = write!(out, ",{},{}", format_sci(self.error(i, c)), ord);
            }
            out.push('\n');
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let header = [
            "level", "N_ele", "N_global", "N_local", "err L", "ord", "err u", "ord", "err p",
            "ord", "err u*", "ord", "err e_u", "ord",
        ];
        let mut cells: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for (i, r) in self.rows.iter().enumerate() {
            let mut row = vec![
                r.level.to_string(),
                r.n_ele.to_string(),
                r.n_global.to_string(),
                r.n_local.to_string(),
            ];
            for c in 0..COLUMNS.len() {
                row.push(format_sci(self.error(i, c)));
                row.push(
                    self.order(i, c)
                        .map_or("-".to_string(), |o| format!("{o:.2}")),
                );
            }
            cells.push(row);
        }
        let widths: Vec<usize> = (0..header.len())
            .map(|j| {
                cells
                    .iter()
                    .map(|r| r[j].chars().count())
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = String::new();
        for (i, row) in cells.iter().enumerate() {
            out.push('|');
            for (cell, w) in row.iter().zip(&widths) {
                let _ = write!(out, " {cell:>w$} |");
            }
            out.push('\n');
            if i == 0 {
                out.push('|');
                for w in &widths {
                    let _ = write!(out, "{}:|", "-".repeat(w + 1));
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Coarsest subdivision used by the studies: 8 (quads) or 4 (triangles).
pub fn base_subdivisions(kind: CellKind) -> usize {
    match kind {
        CellKind::Quad => 8,
        CellKind::Triangle => 4,
    }
}

/// Study on `levels` uniform refinements of the base mesh.
pub fn run_convergence(
    case: &ManufacturedCase,
    kind: CellKind,
    k: usize,
    levels: usize,
) -> Result<ConvergenceTable> {
    if levels == 0 {
        return Err(Error::InvalidParameter(
            "at least one level is required".into(),
        ));
    }
    let base = base_subdivisions(kind);
    let ns: Vec<usize> = (0..levels).map(|l| base << l).collect();
    run_convergence_on(case, kind, k, &ns, StudyOptions::default())
}

/// Knobs of a convergence study.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StudyOptions {
    /// Data quadrature degree; `2k + 6` when unset.
    pub rhs_degree: Option<usize>,
    pub split: TriangleSplit,
}

/// Study on explicit subdivision counts.
pub fn run_convergence_on(
    case: &ManufacturedCase,
    kind: CellKind,
    k: usize,
    ns: &[usize],
    options: StudyOptions,
) -> Result<ConvergenceTable> {
    let spaces = SpaceSet::new(kind, k)?;
    let coeffs = case.coefficients();
    let f = |x: Point| case.f(x);
    let g = |x: Point| case.g(x);
    let data = SourceData {
        f: &f,
        g: &g,
        degree: options.rhs_degree.unwrap_or(2 * k + 6),
    };
    let mut rows = Vec::with_capacity(ns.len());
    for (level, &n) in ns.iter().enumerate() {
        let wrap = |e: Error| Error::Level {
            level,
            n,
            source: Box::new(e),
        };
        let start = Instant::now();
        let mesh = Mesh::structured_split(n, kind, options.split).map_err(wrap)?;
        let out = solve(&mesh, &spaces, &coeffs, data, true).map_err(wrap)?;
        let errors = error_norms(&mesh, &spaces, &out.fields, case).map_err(wrap)?;
        rows.push(ConvergenceRow {
            level,
            n,
            n_ele: mesh.num_cells(),
            n_global: out.n_global,
            n_local: out.n_local,
            errors,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(ConvergenceTable {
        kind,
        k,
        case: *case,
        rows,
    })
}

/// Structural properties of a computed solution.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StructuralReport {
    /// Largest facet-L² norm of the normal-velocity jump over interior facets.
    pub max_normal_jump: f64,
    /// Largest facet-L² norm of `u^h·n` over boundary facets.
    pub max_boundary_flux: f64,
    /// Largest `|(div u^h − g, q)_K|` over cells and pressure basis functions.
    pub max_mass_residual: f64,
    /// `|∫ p^h|`.
    pub pressure_integral: f64,
}

/// Checks normal continuity (by evaluating both neighbours at the same
/// physical points), local mass balance and the pressure mean. `g_degree`
/// is the quadrature degree the solve used for `g`.
pub fn structural_checks(
    mesh: &Mesh,
    spaces: &SpaceSet,
    fields: &SolutionFields,
    g: &(dyn Fn(Point) -> f64 + Sync),
    g_degree: usize,
) -> Result<StructuralReport> {
    let k = spaces.k;
    let rule = crate::refelem::quadrature(crate::refelem::Domain::Segment, 2 * k + 4)?;
    let mut report = StructuralReport::default();
    for f in 0..mesh.num_facets() {
        let facet = mesh.facet(f);
        let geo = mesh.facet_geometry(f)?;
        let mut acc = 0.0;
        for (p, w) in rule.points.iter().zip(&rule.weights) {
            let x = geo.point_at(p[0]);
            let a = evaluate_at(mesh, spaces, fields, facet.owner, x)?.u;
            let an = a[0] * geo.normal[0] + a[1] * geo.normal[1];
            let bn = match facet.neighbor {
                Some(nb) => {
                    let b = evaluate_at(mesh, spaces, fields, nb, x)?.u;
                    b[0] * geo.normal[0] + b[1] * geo.normal[1]
                }
                None => 0.0,
            };
            acc += w * geo.length * (an - bn).powi(2);
        }
        let norm = acc.sqrt();
        if facet.is_boundary() {
            report.max_boundary_flux = report.max_boundary_flux.max(norm);
        } else {
            report.max_normal_jump = report.max_normal_jump.max(norm);
        }
    }
    for c in 0..mesh.num_cells() {
        let ctx = ElementContext::new(mesh, spaces, c, 2 * k + 2, 2 * k + 2)?;
        let g_moments = pressure_load(&ctx, spaces, g, g_degree)?;
        for (j, gm) in g_moments.iter().enumerate() {
            let div_moment: f64 = (0..ctx.num_points())
                .map(|q| {
                    let div: f64 = (0..ctx.num_v())
                        .map(|v| fields.u[c][v] * ctx.v.div(v, q))
                        .sum();
                    ctx.weights[q] * div * ctx.q.value(j, q)
                })
                .sum();
            report.max_mass_residual = report.max_mass_residual.max((div_moment - gm).abs());
        }
        report.pressure_integral += (0..ctx.num_points())
            .map(|q| ctx.weights[q] * ctx.eval_q(&fields.p[c], q))
            .sum::<f64>();
    }
    report.pressure_integral = report.pressure_integral.abs();
    Ok(report)
}

/// L² distances between two solutions on the same mesh:
/// `[L, u, p (after mean alignment), û_t]`.
pub fn field_discrepancy(
    mesh: &Mesh,
    spaces: &SpaceSet,
    a: &SolutionFields,
    b: &SolutionFields,
) -> Result<[f64; 4]> {
    let k = spaces.k;
    let mut sums = [0.0; 4];
    let mut mean_a = 0.0;
    let mut mean_b = 0.0;
    for c in 0..mesh.num_cells() {
        let ctx = ElementContext::new(mesh, spaces, c, 2 * k + 4, 2 * k + 4)?;
        for q in 0..ctx.num_points() {
            mean_a += ctx.weights[q] * ctx.eval_q(&a.p[c], q);
            mean_b += ctx.weights[q] * ctx.eval_q(&b.p[c], q);
        }
    }
    let shift = mean_a - mean_b;
    let pf = k + 1;
    let tmap = build_dofmap(mesh, SpaceTag::MT0, k)?;
    for c in 0..mesh.num_cells() {
        let ctx = ElementContext::new(mesh, spaces, c, 2 * k + 4, 2 * k + 4)?;
        for q in 0..ctx.num_points() {
            let w = ctx.weights[q];
            sums[0] += w * frob(sub2(ctx.eval_g(&a.l[c], q), ctx.eval_g(&b.l[c], q)));
            let (ua, ub) = (ctx.eval_v(&a.u[c], q), ctx.eval_v(&b.u[c], q));
            sums[1] += w * ((ua[0] - ub[0]).powi(2) + (ua[1] - ub[1]).powi(2));
            sums[2] += w * (ctx.eval_q(&a.p[c], q) - ctx.eval_q(&b.p[c], q) - shift).powi(2);
        }
        for fc in &ctx.facets {
            let dofs = tmap.cell_dofs(c);
            for q in 0..fc.num_points() {
                let d: f64 = (0..pf)
                    .map(|i| {
                        dofs[fc.local * pf + i]
                            .map_or(0.0, |d| a.uhat_t[d.index] - b.uhat_t[d.index])
                            * fc.psi[q][i]
                    })
                    .sum();
                sums[3] += fc.weights[q] * d * d;
            }
        }
    }
    Ok(sums.map(f64::sqrt))
}

/// Largest coefficient defect of `P(w) = w` over every cell and facet, for
/// `P_G`, `P_V`, `Π_V`, `P_Q` and `P_{M_t}` applied to random members of
/// their own spaces.
pub fn projection_identity_defect(mesh: &Mesh, spaces: &SpaceSet, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = spaces.k;
    let mut worst = 0.0_f64;
    let defect = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
    };
    for c in 0..mesh.num_cells() {
        let ctx = ElementContext::new(mesh, spaces, c, 2 * k + 2, 2 * k + 2)?;
        let proj = ProjectionSet::new(&ctx);
        let mut draw =
            |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let (cg, cv, cq) = (draw(ctx.num_g()), draw(ctx.num_v()), draw(ctx.num_q()));
        let reference = |x: Point| ctx.map.inverse(x);
        let gfield = |x: Point| {
            let t = crate::fespace::piola_tabulate(&ctx.map, &spaces.g_row, &[reference(x)])
                .expect("tabulation");
            eval_g_table(&t, ctx.n_row, &cg, 0)
        };
        let vfield = |x: Point| {
            eval_vector(
                &ctx.v_at(spaces, &[reference(x)]).expect("tabulation"),
                &cv,
                0,
            )
        };
        let qfield = |x: Point| {
            let t = compose_tabulate(&ctx.map, &spaces.q, &[reference(x)]).expect("tabulation");
            (0..cq.len()).map(|j| cq[j] * t.value(j, 0)).sum::<f64>()
        };
        worst = worst.max(defect(&proj.p_g(&gfield)?, &cg));
        worst = worst.max(defect(&proj.p_v(&vfield)?, &cv));
        worst = worst.max(defect(&proj.pi_v(spaces, &vfield)?, &cv));
        worst = worst.max(defect(&proj.p_q(&qfield)?, &cq));
        for fc in &ctx.facets {
            let geo = &fc.geometry;
            let cm = draw(k + 1);
            let field = |x: Point| {
                let d = [geo.end[0] - geo.start[0], geo.end[1] - geo.start[1]];
                let s = ((x[0] - geo.start[0]) * d[0] + (x[1] - geo.start[1]) * d[1])
                    / (geo.length * geo.length);
                let v: f64 = facet_legendre(k, geo.length, s)
                    .iter()
                    .zip(&cm)
                    .map(|(p, c)| p * c)
                    .sum();
                [v * geo.tangent[0], v * geo.tangent[1]]
            };
            worst = worst.max(defect(&p_mt(geo, k, &field, 2 * k + 2)?, &cm));
        }
    }
    Ok(worst)
}

/// Largest relative defect `‖div Π_V u − P_Q div u‖_K / ‖P_Q div u‖_K` over
/// all cells, on a rule of degree `2k + 14`.
pub fn commuting_defect(
    mesh: &Mesh,
    spaces: &SpaceSet,
    u: &dyn Fn(Point) -> Point,
    div_u: &dyn Fn(Point) -> f64,
) -> Result<f64> {
    let k = spaces.k;
    let mut worst = 0.0_f64;
    for c in 0..mesh.num_cells() {
        let ctx = ElementContext::new(mesh, spaces, c, 2 * k + 14, 2 * k + 14)?;
        let proj = ProjectionSet::new(&ctx);
        let pi = proj.pi_v(spaces, u)?;
        let pq = proj.p_q(div_u)?;
        let (mut diff, mut norm) = (0.0, 0.0);
        for q in 0..ctx.num_points() {
            let d: f64 = (0..ctx.num_v()).map(|j| pi[j] * ctx.v.div(j, q)).sum();
            let e = ctx.eval_q(&pq, q);
            diff += ctx.weights[q] * (d - e).powi(2);
            norm += ctx.weights[q] * e * e;
        }
        if norm > 0.0 {
            worst = worst.max((diff / norm).sqrt());
        } else {
            worst = worst.max(diff.sqrt());
        }
    }
    Ok(worst)
}
