//! Physical-element spaces and global degree-of-freedom maps.
//!
//! Vector fields (the rows of the gradient space and the velocity space) are
//! mapped by the contravariant Piola transform; scalar fields by composition
//! with the inverse affine map. Facet functions are Legendre polynomials in
//! the facet parameter `s ∈ [0, 1]`, which runs from the lower-numbered to the
//! higher-numbered facet vertex so both neighbours see the same functions.

use crate::error::{Error, Result};
use crate::mesh::{AffineMap, CellKind, FacetGeometry, Mesh};
use crate::refelem::{
    legendre_values, make_basis, Family, ReferenceBasis, ScalarTable, VectorTable,
};

/// Piola-maps a reference vector tabulation onto a cell.
pub fn piola_transform(map: &AffineMap, reference: &VectorTable) -> VectorTable {
    let j = map.jacobian;
    let ji = map.inverse_jacobian;
    let inv_det = 1.0 / map.det;
    let values = reference
        .values
        .iter()
        .map(|v| {
            [
                inv_det * (j[0][0] * v[0] + j[0][1] * v[1]),
                inv_det * (j[1][0] * v[0] + j[1][1] * v[1]),
            ]
        })
        .collect();
    // ∇v = J ∇̂v̂ J⁻¹ / det
    let grads = reference
        .grads
        .iter()
        .map(|g| {
            let mut jg = [[0.0; 2]; 2];
            for r in 0..2 {
                for c in 0..2 {
                    jg[r][c] = j[r][0] * g[0][c] + j[r][1] * g[1][c];
                }
            }
            let mut out = [[0.0; 2]; 2];
            for r in 0..2 {
                for c in 0..2 {
                    out[r][c] = inv_det * (jg[r][0] * ji[0][c] + jg[r][1] * ji[1][c]);
                }
            }
            out
        })
        .collect();
    let divs = reference.divs.iter().map(|d| inv_det * d).collect();
    VectorTable {
        num_funcs: reference.num_funcs,
        num_points: reference.num_points,
        values,
        grads,
        divs,
    }
}

/// Tabulates a vector family at reference points and Piola-maps it.
pub fn piola_tabulate(
    map: &AffineMap,
    basis: &ReferenceBasis,
    points: &[[f64; 2]],
) -> Result<VectorTable> {
    if map.det.abs() < 1e-300 {
        return Err(Error::DegenerateCell {
            cell: usize::MAX,
            det: map.det,
        });
    }
    Ok(piola_transform(map, &basis.tabulate_vector(points)?))
}

/// Composes a reference scalar tabulation with the inverse map.
pub fn compose_transform(map: &AffineMap, reference: &ScalarTable) -> ScalarTable {
    let ji = map.inverse_jacobian;
    // ∇v = J⁻ᵀ ∇̂v̂
    let grads = reference
        .grads
        .iter()
        .map(|g| {
            [
                ji[0][0] * g[0] + ji[1][0] * g[1],
                ji[0][1] * g[0] + ji[1][1] * g[1],
            ]
        })
        .collect();
    ScalarTable {
        num_funcs: reference.num_funcs,
        num_points: reference.num_points,
        values: reference.values.clone(),
        grads,
    }
}

pub fn compose_tabulate(
    map: &AffineMap,
    basis: &ReferenceBasis,
    points: &[[f64; 2]],
) -> Result<ScalarTable> {
    Ok(compose_transform(map, &basis.tabulate_scalar(points)?))
}

/// `L²(F)`-orthonormal Legendre basis of `P_k(F)` at facet parameter `s`:
/// `ψ_i(s) = sqrt((2i+1)/h_F) P_i(2s − 1)`.
pub fn facet_legendre(k: usize, length: f64, s: f64) -> Vec<f64> {
    let mut v = legendre_values(k, 2.0 * s - 1.0);
    for (i, x) in v.iter_mut().enumerate() {
        *x *= ((2 * i + 1) as f64 / length).sqrt();
    }
    v
}

/// A facet function `ψ_i(s) · direction` with a fixed unit direction.
#[derive(Debug, Clone, Copy)]
pub struct FacetVectorFunction {
    pub index: usize,
    pub direction: [f64; 2],
    pub length: f64,
}

impl FacetVectorFunction {
    pub fn eval(&self, s: f64) -> [f64; 2] {
        let psi = facet_legendre(self.index, self.length, s)[self.index];
        [psi * self.direction[0], psi * self.direction[1]]
    }
}

/// Basis of `M_t(F)`: `ψ_i t_F` for `i = 0..=k`.
pub fn tangent_facet_basis(geometry: &FacetGeometry, k: usize) -> Vec<FacetVectorFunction> {
    (0..=k)
        .map(|index| FacetVectorFunction {
            index,
            direction: geometry.tangent,
            length: geometry.length,
        })
        .collect()
}

/// Basis of the normal facet block: `ψ_i n_F` for `i = 0..=k`.
pub fn normal_facet_basis(geometry: &FacetGeometry, k: usize) -> Vec<FacetVectorFunction> {
    (0..=k)
        .map(|index| FacetVectorFunction {
            index,
            direction: geometry.normal,
            length: geometry.length,
        })
        .collect()
}

/// Reference bases used by the method at degree `k`.
#[derive(Debug, Clone)]
pub struct SpaceSet {
    pub kind: CellKind,
    pub k: usize,
    /// One row of the gradient space: `P_k²` (triangles) or `BDM_k` (quads).
    pub g_row: ReferenceBasis,
    /// Spanning set of the velocity space: `RT_k` or `BDFM_k`.
    pub v_span: ReferenceBasis,
    /// Pressure space `P_k`.
    pub q: ReferenceBasis,
    /// `P_{k−1}` test functions for interior velocity moments (absent at `k = 0`).
    pub interior: Option<ReferenceBasis>,
    /// `P_{k+1}` for the postprocessed velocity.
    pub post: ReferenceBasis,
}

impl SpaceSet {
    pub fn new(kind: CellKind, k: usize) -> Result<Self> {
        if k > 4 {
            return Err(Error::Unsupported(format!(
                "degree k = {k} (supported: 0..=4)"
            )));
        }
        let (g_family, v_family) = match kind {
            CellKind::Triangle => (Family::VectorP, Family::RaviartThomas),
            CellKind::Quad => (Family::Bdm, Family::Bdfm),
        };
        let interior = if k > 0 {
            Some(make_basis(Family::P, kind, k - 1)?)
        } else {
            None
        };
        let spaces = Self {
            kind,
            k,
            g_row: make_basis(g_family, kind, k)?,
            v_span: make_basis(v_family, kind, k)?,
            q: make_basis(Family::P, kind, k)?,
            interior,
            post: make_basis(Family::P, kind, k + 1)?,
        };
        let layout = spaces.v_layout();
        if layout.total() != spaces.v_span.num_funcs() {
            return Err(Error::Unsupported(format!(
                "velocity degrees of freedom ({}) do not match dim V(K) ({})",
                layout.total(),
                spaces.v_span.num_funcs()
            )));
        }
        Ok(spaces)
    }

    pub fn num_g(&self) -> usize {
        2 * self.g_row.num_funcs()
    }

    pub fn num_v(&self) -> usize {
        self.v_span.num_funcs()
    }

    pub fn num_q(&self) -> usize {
        self.q.num_funcs()
    }

    pub fn num_facets(&self) -> usize {
        self.kind.num_facets()
    }

    /// Facet functions per facet, `dim P_k(F)`.
    pub fn num_facet_funcs(&self) -> usize {
        self.k + 1
    }

    pub fn v_layout(&self) -> VLayout {
        VLayout {
            num_facets: self.num_facets(),
            per_facet: self.k + 1,
            interior: 2 * self.interior.as_ref().map_or(0, |b| b.num_funcs()),
        }
    }
}

/// Local velocity dofs: facet normal moments first (`facet * per_facet + i`),
/// then interior moments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VLayout {
    pub num_facets: usize,
    pub per_facet: usize,
    pub interior: usize,
}

impl VLayout {
    pub fn facet_dofs(&self) -> usize {
        self.num_facets * self.per_facet
    }

    pub fn total(&self) -> usize {
        self.facet_dofs() + self.interior
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpaceTag {
    /// Gradient space `G_h`.
    G,
    /// `V_h^div(0)`.
    VDiv0,
    /// Zero-mean pressure space (mean carried as a constraint).
    QRing,
    /// Piecewise constants.
    QBar,
    /// Cellwise mean-zero part of `Q_h`.
    QPerp,
    /// Tangential facet unknowns, boundary eliminated.
    MT0,
    /// Normal facet unknowns, boundary eliminated.
    MN0,
    /// Discontinuous `P_k(∂K)` multipliers.
    MPartial,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedDof {
    pub index: usize,
    pub sign: f64,
}

#[derive(Debug, Clone)]
pub struct DofMap {
    tag: SpaceTag,
    k: usize,
    num_dofs: usize,
    zero_mean: bool,
    cells: Vec<Vec<Option<SignedDof>>>,
}

impl DofMap {
    pub fn tag(&self) -> SpaceTag {
        self.tag
    }

    pub fn degree(&self) -> usize {
        self.k
    }

    pub fn num_dofs(&self) -> usize {
        self.num_dofs
    }

    /// Whether the space carries the global zero-mean constraint.
    pub fn zero_mean(&self) -> bool {
        self.zero_mean
    }

    /// Local-to-global map of cell `c`; `None` marks an eliminated dof.
    pub fn cell_dofs(&self, c: usize) -> &[Option<SignedDof>] {
        &self.cells[c]
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }
}

/// Index of each facet among the interior facets.
pub fn interior_facet_numbering(mesh: &Mesh) -> Vec<Option<usize>> {
    let mut next = 0;
    mesh.facets()
        .iter()
        .map(|f| {
            if f.is_boundary() {
                None
            } else {
                next += 1;
                Some(next - 1)
            }
        })
        .collect()
}

pub fn build_dofmap(mesh: &Mesh, tag: SpaceTag, k: usize) -> Result<DofMap> {
    let spaces = SpaceSet::new(mesh.kind(), k)?;
    let nc = mesh.num_cells();
    let nf = spaces.num_facets();
    let pf = spaces.num_facet_funcs();
    let plain = |per_cell: usize| -> Vec<Vec<Option<SignedDof>>> {
        (0..nc)
            .map(|c| {
                (0..per_cell)
                    .map(|i| {
                        Some(SignedDof {
                            index: c * per_cell + i,
                            sign: 1.0,
                        })
                    })
                    .collect()
            })
            .collect()
    };
    let numbering = interior_facet_numbering(mesh);
    let n_interior_facets = mesh.num_interior_facets();
    let facet_block = |c: usize, signed: bool| -> Vec<Option<SignedDof>> {
        let mut out = Vec::with_capacity(nf * pf);
        for &f in mesh.cell_facets(c) {
            let sign = if signed { mesh.orientation(c, f) } else { 1.0 };
            for i in 0..pf {
                out.push(numbering[f].map(|g| SignedDof {
                    index: g * pf + i,
                    sign,
                }));
            }
        }
        out
    };

    let (cells, num_dofs) = match tag {
        SpaceTag::G => (plain(spaces.num_g()), nc * spaces.num_g()),
        SpaceTag::QRing => (plain(spaces.num_q()), nc * spaces.num_q()),
        SpaceTag::QBar => (plain(1), nc),
        SpaceTag::QPerp => (plain(spaces.num_q() - 1), nc * (spaces.num_q() - 1)),
        SpaceTag::MPartial => (plain(nf * pf), nc * nf * pf),
        SpaceTag::MT0 | SpaceTag::MN0 => (
            (0..nc).map(|c| facet_block(c, false)).collect(),
            n_interior_facets * pf,
        ),
        SpaceTag::VDiv0 => {
            let layout = spaces.v_layout();
            let base = n_interior_facets * pf;
            let cells = (0..nc)
                .map(|c| {
                    let mut dofs = facet_block(c, true);
                    dofs.extend((0..layout.interior).map(|j| {
                        Some(SignedDof {
                            index: base + c * layout.interior + j,
                            sign: 1.0,
                        })
                    }));
                    dofs
                })
                .collect();
            (cells, base + nc * layout.interior)
        }
    };
    Ok(DofMap {
        tag,
        k,
        num_dofs,
        zero_mean: tag == SpaceTag::QRing,
        cells,
    })
}
