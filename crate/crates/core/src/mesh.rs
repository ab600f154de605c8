//! Structured triangular and rectangular meshes of the unit square.
//!
//! Cell vertex ordering is counter-clockwise and matches the reference
//! element: triangles map `(0,0),(1,0),(0,1)` to `v0,v1,v2`; quads map the
//! corners of `[0,1]²` to `v0..v3`. Local facet `i` joins local vertices `i`
//! and `i+1` (cyclically).
//!
//! Every facet stores one global unit normal pointing away from its owner,
//! the lower-indexed incident cell (outward on the boundary). Facet vertices
//! are stored in increasing global index; facet-local parameters run from the
//! first to the second vertex on both sides of the facet.

use std::fmt::Write as _;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellKind {
    Triangle,
    Quad,
}

impl CellKind {
    pub fn num_vertices(self) -> usize {
        match self {
            CellKind::Triangle => 3,
            CellKind::Quad => 4,
        }
    }

    pub fn num_facets(self) -> usize {
        self.num_vertices()
    }

    /// Measure of the reference cell.
    pub fn reference_measure(self) -> f64 {
        match self {
            CellKind::Triangle => 0.5,
            CellKind::Quad => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CellKind::Triangle => "tri",
            CellKind::Quad => "quad",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Facet {
    /// Global vertex indices, `vertices[0] < vertices[1]`.
    pub vertices: [usize; 2],
    /// Lower-indexed incident cell.
    pub owner: usize,
    /// Higher-indexed incident cell; `None` on the boundary.
    pub neighbor: Option<usize>,
    /// Local facet index inside the owner / neighbor.
    pub owner_local: usize,
    pub neighbor_local: Option<usize>,
}

impl Facet {
    pub fn is_boundary(&self) -> bool {
        self.neighbor.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FacetGeometry {
    pub normal: Point,
    pub tangent: Point,
    pub length: f64,
    pub midpoint: Point,
    /// First facet vertex (parameter `s = 0`).
    pub start: Point,
    /// Last facet vertex (parameter `s = 1`).
    pub end: Point,
}

impl FacetGeometry {
    pub fn point_at(&self, s: f64) -> Point {
        [
            self.start[0] + s * (self.end[0] - self.start[0]),
            self.start[1] + s * (self.end[1] - self.start[1]),
        ]
    }
}

/// Affine map `x = offset + jacobian · ξ` from the reference cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineMap {
    pub offset: Point,
    pub jacobian: [[f64; 2]; 2],
    pub det: f64,
    pub inverse_jacobian: [[f64; 2]; 2],
}

impl AffineMap {
    pub fn new(offset: Point, jacobian: [[f64; 2]; 2]) -> Option<Self> {
        let det = jacobian[0][0] * jacobian[1][1] - jacobian[0][1] * jacobian[1][0];
        if det.abs() <= f64::EPSILON * (jacobian_scale(&jacobian).powi(2)) || det == 0.0 {
            return None;
        }
        let inv = [
            [jacobian[1][1] / det, -jacobian[0][1] / det],
            [-jacobian[1][0] / det, jacobian[0][0] / det],
        ];
        Some(Self {
            offset,
            jacobian,
            det,
            inverse_jacobian: inv,
        })
    }

    pub fn apply(&self, xi: Point) -> Point {
        let j = &self.jacobian;
        [
            self.offset[0] + j[0][0] * xi[0] + j[0][1] * xi[1],
            self.offset[1] + j[1][0] * xi[0] + j[1][1] * xi[1],
        ]
    }

    pub fn inverse(&self, x: Point) -> Point {
        let d = [x[0] - self.offset[0], x[1] - self.offset[1]];
        let k = &self.inverse_jacobian;
        [
            k[0][0] * d[0] + k[0][1] * d[1],
            k[1][0] * d[0] + k[1][1] * d[1],
        ]
    }
}

fn jacobian_scale(j: &[[f64; 2]; 2]) -> f64 {
    j.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// How each square of a structured triangle mesh is cut in two.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum TriangleSplit {
    /// Lower-left to upper-right diagonal everywhere.
    Diagonal,
    /// Lower-right to upper-left diagonal everywhere.
    AntiDiagonal,
    /// Lower-left to upper-right where `i + j` is even, the other diagonal
    /// where it is odd.
    #[default]
    Alternating,
}

impl TriangleSplit {
    fn anti(self, i: usize, j: usize) -> bool {
        match self {
            TriangleSplit::Diagonal => false,
            TriangleSplit::AntiDiagonal => true,
            TriangleSplit::Alternating => (i + j) % 2 == 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    kind: CellKind,
    n: usize,
    split: TriangleSplit,
    vertices: Vec<Point>,
    cells: Vec<Vec<usize>>,
    facets: Vec<Facet>,
    cell_facets: Vec<Vec<usize>>,
}

impl Mesh {
    /// Builds the `n × n` structured mesh of the unit square with the
    /// default (alternating) triangle split.
    pub fn structured(n: usize, kind: CellKind) -> Result<Self> {
        Self::structured_split(n, kind, TriangleSplit::default())
    }

    /// As [`Mesh::structured`] with a chosen triangle split (ignored for quads).
    pub fn structured_split(n: usize, kind: CellKind, split: TriangleSplit) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidSubdivision(n));
        }
        let h = 1.0 / n as f64;
        let vid = |i: usize, j: usize| j * (n + 1) + i;
        let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
        for j in 0..=n {
            for i in 0..=n {
                vertices.push([i as f64 * h, j as f64 * h]);
            }
        }
        let mut cells = Vec::new();
        for j in 0..n {
            for i in 0..n {
                let (p00, p10, p11, p01) =
                    (vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1));
                match kind {
                    CellKind::Quad => cells.push(vec![p00, p10, p11, p01]),
                    CellKind::Triangle if split.anti(i, j) => {
                        cells.push(vec![p00, p10, p01]);
                        cells.push(vec![p10, p11, p01]);
                    }
                    CellKind::Triangle => {
                        cells.push(vec![p00, p10, p11]);
                        cells.push(vec![p00, p11, p01]);
                    }
                }
            }
        }

        let mut facets: Vec<Facet> = Vec::new();
        let mut cell_facets = vec![Vec::new(); cells.len()];
        let mut lookup = std::collections::HashMap::new();
        for (c, verts) in cells.iter().enumerate() {
            let nv = verts.len();
            for lf in 0..nv {
                let a = verts[lf];
                let b = verts[(lf + 1) % nv];
                let key = (a.min(b), a.max(b));
                match lookup.get(&key) {
                    None => {
                        lookup.insert(key, facets.len());
                        cell_facets[c].push(facets.len());
                        facets.push(Facet {
                            vertices: [key.0, key.1],
                            owner: c,
                            neighbor: None,
                            owner_local: lf,
                            neighbor_local: None,
                        });
                    }
                    Some(&f) => {
                        let facet: &mut Facet = &mut facets[f];
                        facet.neighbor = Some(c);
                        facet.neighbor_local = Some(lf);
                        cell_facets[c].push(f);
                    }
                }
            }
        }

        let mesh = Self {
            kind,
            n,
            split,
            vertices,
            cells,
            facets,
            cell_facets,
        };
        for c in 0..mesh.num_cells() {
            mesh.affine_map(c)?;
        }
        Ok(mesh)
    }

    pub fn kind(&self) -> CellKind {
        self.kind
    }

    pub fn split(&self) -> TriangleSplit {
        self.split
    }

    /// Subdivisions per side.
    pub fn subdivisions(&self) -> usize {
        self.n
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn num_facets(&self) -> usize {
        self.facets.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn cell(&self, c: usize) -> &[usize] {
        &self.cells[c]
    }

    pub fn facets(&self) -> &[Facet] {
        &self.facets
    }

    pub fn facet(&self, f: usize) -> &Facet {
        &self.facets[f]
    }

    /// Global facet indices of cell `c` in local facet order.
    pub fn cell_facets(&self, c: usize) -> &[usize] {
        &self.cell_facets[c]
    }

    pub fn num_interior_facets(&self) -> usize {
        self.facets.iter().filter(|f| !f.is_boundary()).count()
    }

    pub fn num_boundary_facets(&self) -> usize {
        self.num_facets() - self.num_interior_facets()
    }

    pub fn affine_map(&self, c: usize) -> Result<AffineMap> {
        let verts = self.cells.get(c).ok_or(Error::IndexOutOfRange {
            what: "cell",
            index: c,
            len: self.cells.len(),
        })?;
        let v0 = self.vertices[verts[0]];
        let v1 = self.vertices[verts[1]];
        let v2 = match self.kind {
            CellKind::Triangle => self.vertices[verts[2]],
            CellKind::Quad => self.vertices[verts[3]],
        };
        let jac = [
            [v1[0] - v0[0], v2[0] - v0[0]],
            [v1[1] - v0[1], v2[1] - v0[1]],
        ];
        match AffineMap::new(v0, jac) {
            Some(map) if map.det > 0.0 => Ok(map),
            Some(map) => Err(Error::DegenerateCell {
                cell: c,
                det: map.det,
            }),
            None => Err(Error::DegenerateCell { cell: c, det: 0.0 }),
        }
    }

    /// Physical measure of cell `c`.
    pub fn cell_measure(&self, c: usize) -> f64 {
        let map = self
            .affine_map(c)
            .expect("mesh cells are validated at construction");
        map.det * self.kind.reference_measure()
    }

    /// Diameter of cell `c`.
    pub fn cell_diameter(&self, c: usize) -> f64 {
        let v = &self.cells[c];
        let mut d: f64 = 0.0;
        for i in 0..v.len() {
            for j in i + 1..v.len() {
                d = d.max(dist(self.vertices[v[i]], self.vertices[v[j]]));
            }
        }
        d
    }

    pub fn facet_geometry(&self, f: usize) -> Result<FacetGeometry> {
        let facet = self.facets.get(f).ok_or(Error::IndexOutOfRange {
            what: "facet",
            index: f,
            len: self.facets.len(),
        })?;
        let a = self.vertices[facet.vertices[0]];
        let b = self.vertices[facet.vertices[1]];
        let length = dist(a, b);
        let t = [(b[0] - a[0]) / length, (b[1] - a[1]) / length];
        let mut normal = [t[1], -t[0]];
        // point away from the owner's centroid
        let cen = self.centroid(facet.owner);
        let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
        if normal[0] * (mid[0] - cen[0]) + normal[1] * (mid[1] - cen[1]) < 0.0 {
            normal = [-normal[0], -normal[1]];
        }
        let tangent = [-normal[1], normal[0]];
        Ok(FacetGeometry {
            normal,
            tangent,
            length,
            midpoint: mid,
            start: a,
            end: b,
        })
    }

    /// Sign of the global facet normal relative to the outward normal of `c`.
    pub fn orientation(&self, c: usize, f: usize) -> f64 {
        if self.facets[f].owner == c {
            1.0
        } else {
            -1.0
        }
    }

    pub fn centroid(&self, c: usize) -> Point {
        let v = &self.cells[c];
        let mut s = [0.0, 0.0];
        for &i in v {
            s[0] += self.vertices[i][0];
            s[1] += self.vertices[i][1];
        }
        [s[0] / v.len() as f64, s[1] / v.len() as f64]
    }

    /// Cell containing `x` (points on shared edges go to either neighbour).
    pub fn locate(&self, x: Point) -> Option<usize> {
        if !(0.0..=1.0).contains(&x[0]) || !(0.0..=1.0).contains(&x[1]) {
            return None;
        }
        let n = self.n;
        let i = ((x[0] * n as f64).floor() as usize).min(n - 1);
        let j = ((x[1] * n as f64).floor() as usize).min(n - 1);
        let square = j * n + i;
        match self.kind {
            CellKind::Quad => Some(square),
            CellKind::Triangle => {
                let h = 1.0 / n as f64;
                let (dx, dy) = (x[0] - i as f64 * h, x[1] - j as f64 * h);
                let upper = if self.split.anti(i, j) {
                    dx + dy > h
                } else {
                    dy > dx
                };
                Some(2 * square + usize::from(upper))
            }
        }
    }

    /// Plain-text listing, one record per line.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# mesh kind={} n={} vertices={} cells={} facets={}",
            self.kind.name(),
            self.n,
            self.num_vertices(),
            self.num_cells(),
            self.num_facets()
        );
        for (i, v) in self.vertices.iter().enumerate() {
            let _ = writeln!(out, "vertex {i} {:.17e} {:.17e}", v[0], v[1]);
        }
        for (i, c) in self.cells.iter().enumerate() {
            let ids: Vec<String> = c.iter().map(|v| v.to_string()).collect();
            let fs: Vec<String> = self.cell_facets[i].iter().map(|v| v.to_string()).collect();
            let _ = writeln!(
                out,
                "cell {i} vertices {} facets {}",
                ids.join(" "),
                fs.join(" ")
            );
        }
        for (i, f) in self.facets.iter().enumerate() {
            let nb = f
                .neighbor
                .map_or_else(|| "boundary".to_string(), |c| c.to_string());
            let _ = writeln!(
                out,
                "facet {i} vertices {} {} owner {} neighbor {nb}",
                f.vertices[0], f.vertices[1], f.owner
            );
        }
        out
    }
}

fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_on_first_levels() {
        assert_eq!(Mesh::structured(8, CellKind::Quad).unwrap().num_cells(), 64);
        assert_eq!(
            Mesh::structured(4, CellKind::Triangle).unwrap().num_cells(),
            32
        );
    }

    #[test]
    fn facet_counts() {
        for n in 1..6 {
            let q = Mesh::structured(n, CellKind::Quad).unwrap();
            assert_eq!(q.num_cells(), n * n);
            assert_eq!(q.num_facets(), 2 * n * (n + 1));
            assert_eq!(q.num_boundary_facets(), 4 * n);
            let t = Mesh::structured(n, CellKind::Triangle).unwrap();
            assert_eq!(t.num_cells(), 2 * n * n);
            assert_eq!(t.num_facets(), n * n + 2 * n * (n + 1));
        }
        let q = Mesh::structured(2, CellKind::Quad).unwrap();
        assert_eq!(q.num_facets(), 12);
        assert_eq!(q.num_interior_facets(), 4);
        assert_eq!(q.num_boundary_facets(), 8);
    }

    #[test]
    fn zero_subdivisions_rejected() {
        assert!(matches!(
            Mesh::structured(0, CellKind::Quad),
            Err(Error::InvalidSubdivision(0))
        ));
    }

    #[test]
    fn affine_map_examples() {
        let m = Mesh::structured(1, CellKind::Quad).unwrap();
        let map = m.affine_map(0).unwrap();
        assert_eq!(map.jacobian, [[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(map.det, 1.0);

        let m = Mesh::structured(8, CellKind::Quad).unwrap();
        assert!((m.affine_map(5).unwrap().det - 1.0 / 64.0).abs() < 1e-15);

        let m = Mesh::structured(4, CellKind::Triangle).unwrap();
        let map = m.affine_map(0).unwrap();
        assert_eq!(m.vertices()[m.cell(0)[0]], [0.0, 0.0]);
        assert!((map.det - 1.0 / 16.0).abs() < 1e-15);
        assert!(m.affine_map(9999).is_err());
    }

    #[test]
    fn degenerate_map_rejected() {
        assert!(AffineMap::new([0.0, 0.0], [[1.0, 2.0], [0.5, 1.0]]).is_none());
    }

    #[test]
    fn jacobian_times_inverse_is_identity() {
        let m = Mesh::structured(3, CellKind::Triangle).unwrap();
        for c in 0..m.num_cells() {
            let a = m.affine_map(c).unwrap();
            let (j, k) = (a.jacobian, a.inverse_jacobian);
            for r in 0..2 {
                for s in 0..2 {
                    let v = j[r][0] * k[0][s] + j[r][1] * k[1][s];
                    let e = if r == s { 1.0 } else { 0.0 };
                    assert!((v - e).abs() < 1e-14);
                }
            }
            let x = a.apply([0.3, 0.2]);
            let xi = a.inverse(x);
            assert!((xi[0] - 0.3).abs() < 1e-14 && (xi[1] - 0.2).abs() < 1e-14);
        }
    }

    #[test]
    fn areas_sum_to_one() {
        for kind in [CellKind::Quad, CellKind::Triangle] {
            for n in [1, 2, 3, 7, 16] {
                let m = Mesh::structured(n, kind).unwrap();
                let total: f64 = (0..m.num_cells()).map(|c| m.cell_measure(c)).sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn facet_geometry_examples() {
        let m = Mesh::structured(2, CellKind::Quad).unwrap();
        // bottom-left horizontal boundary facet
        let f = (0..m.num_facets())
            .find(|&f| {
                let g = m.facet_geometry(f).unwrap();
                g.start == [0.0, 0.0] && g.end == [0.5, 0.0]
            })
            .unwrap();
        let g = m.facet_geometry(f).unwrap();
        assert!(m.facet(f).is_boundary());
        assert_eq!(g.length, 0.5);
        assert_eq!(g.normal, [0.0, -1.0]);

        // vertical interior facet between cells 0 and 1 points into cell 1
        let f = m.cell_facets(0)[1];
        let g = m.facet_geometry(f).unwrap();
        assert_eq!(m.facet(f).owner, 0);
        assert_eq!(m.facet(f).neighbor, Some(1));
        assert_eq!(g.normal, [1.0, 0.0]);

        let t = Mesh::structured(1, CellKind::Triangle).unwrap();
        let diag = (0..t.num_facets())
            .find(|&f| !t.facet(f).is_boundary())
            .unwrap();
        let g = t.facet_geometry(diag).unwrap();
        assert!((g.length - 2f64.sqrt()).abs() < 1e-15);
        assert!(t.facet_geometry(100).is_err());
    }

    #[test]
    fn normals_unit_and_tangent_orthogonal() {
        let m = Mesh::structured(3, CellKind::Triangle).unwrap();
        for f in 0..m.num_facets() {
            let g = m.facet_geometry(f).unwrap();
            let nn = g.normal[0].hypot(g.normal[1]);
            assert!((nn - 1.0).abs() < 1e-15);
            assert!((g.normal[0] * g.tangent[0] + g.normal[1] * g.tangent[1]).abs() < 1e-15);
            if m.facet(f).is_boundary() {
                // outward: midpoint + eps * n leaves the unit square
                let p = [
                    g.midpoint[0] + 1e-3 * g.normal[0],
                    g.midpoint[1] + 1e-3 * g.normal[1],
                ];
                assert!(p[0] < 0.0 || p[0] > 1.0 || p[1] < 0.0 || p[1] > 1.0);
            }
        }
    }

    #[test]
    fn interior_facets_shared_by_two_cells_with_opposite_orientation() {
        for kind in [CellKind::Quad, CellKind::Triangle] {
            let m = Mesh::structured(4, kind).unwrap();
            let mut count = vec![0usize; m.num_facets()];
            for c in 0..m.num_cells() {
                for &f in m.cell_facets(c) {
                    count[f] += 1;
                }
            }
            for (f, facet) in m.facets().iter().enumerate() {
                let expect = if facet.is_boundary() { 1 } else { 2 };
                assert_eq!(count[f], expect);
                if let Some(nb) = facet.neighbor {
                    assert!(facet.owner < nb);
                    assert_eq!(m.orientation(facet.owner, f) * m.orientation(nb, f), -1.0);
                }
            }
        }
    }

    #[test]
    fn refinement_halves_diameter() {
        for kind in [CellKind::Quad, CellKind::Triangle] {
            let a = Mesh::structured(4, kind).unwrap().cell_diameter(0);
            let b = Mesh::structured(8, kind).unwrap().cell_diameter(0);
            assert_eq!(a, 2.0 * b);
        }
    }

    #[test]
    fn dump_lists_every_record() {
        let m = Mesh::structured(2, CellKind::Quad).unwrap();
        let text = m.dump();
        assert_eq!(text.lines().filter(|l| l.starts_with("vertex")).count(), 9);
        assert_eq!(text.lines().filter(|l| l.starts_with("cell")).count(), 4);
        assert_eq!(text.lines().filter(|l| l.starts_with("facet")).count(), 12);
    }

    #[test]
    fn locate_finds_containing_cell() {
        let cases = [
            (CellKind::Quad, TriangleSplit::Diagonal),
            (CellKind::Triangle, TriangleSplit::Diagonal),
            (CellKind::Triangle, TriangleSplit::AntiDiagonal),
            (CellKind::Triangle, TriangleSplit::Alternating),
        ];
        for (kind, split) in cases {
            let mesh = Mesh::structured_split(3, kind, split).unwrap();
            for c in 0..mesh.num_cells() {
                let x = mesh.centroid(c);
                assert_eq!(mesh.locate(x), Some(c));
            }
            assert_eq!(mesh.locate([1.5, 0.2]), None);
            assert!(mesh.locate([1.0, 1.0]).is_some());
        }
    }
}
