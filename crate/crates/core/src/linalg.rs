//! Dense and sparse linear algebra used by the element kernels and the
//! global solvers.
//!
//! Dense matrices are small (a few hundred rows at most) and are factorized
//! with a hand-written LU with partial pivoting. The global saddle-point
//! systems go through [`SparseMatrix`] and a sparse LU backed by `faer`.

use std::ops::{Index, IndexMut};

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};

use crate::error::{Error, Result};

/// Relative pivot threshold for dense factorization.
pub const PIVOT_TOLERANCE: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major buffer has wrong length");
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, values: &[f64]) {
        assert_eq!(values.len(), self.rows);
        for (i, v) in values.iter().enumerate() {
            self[(i, j)] = *v;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `selfᵀ x`
    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, xi) in x.iter().enumerate() {
            if *xi == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a * xi;
            }
        }
        out
    }

    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, other.rows);
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        out
    }

    /// `selfᵀ other`
    pub fn tr_matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.rows, other.rows);
        let mut out = DenseMatrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = other.row(k);
            for (i, a) in a_row.iter().enumerate() {
                if *a == 0.0 {
                    continue;
                }
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, b) in dst.iter_mut().zip(b_row) {
                    *d += a * b;
                }
            }
        }
        out
    }

    pub fn scaled(mut self, s: f64) -> Self {
        self.data.iter_mut().for_each(|v| *v *= s);
        self
    }

    pub fn add_assign(&mut self, other: &DenseMatrix) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn lu(&self) -> Result<DenseLu> {
        DenseLu::factorize(self)
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// LU factorization with partial (row) pivoting, `P A = L U`.
#[derive(Debug, Clone)]
pub struct DenseLu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl DenseLu {
    pub fn factorize(a: &DenseMatrix) -> Result<Self> {
        if a.rows != a.cols {
            return Err(Error::InvalidParameter(format!(
                "dense LU needs a square matrix, got {}x{}",
                a.rows, a.cols
            )));
        }
        let n = a.rows;
        let mut lu = a.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let threshold = PIVOT_TOLERANCE * a.max_abs();

        for col in 0..n {
            let (piv, piv_abs) =
                (col..n)
                    .map(|r| (r, lu[r * n + col].abs()))
                    .fold(
                        (col, -1.0),
                        |best, cur| if cur.1 > best.1 { cur } else { best },
                    );
            if piv_abs <= threshold || piv_abs == 0.0 {
                return Err(Error::SingularMatrix {
                    column: col,
                    pivot: piv_abs,
                    threshold,
                });
            }
            if piv != col {
                for j in 0..n {
                    lu.swap(piv * n + j, col * n + j);
                }
                perm.swap(piv, col);
            }
            let d = lu[col * n + col];
            for r in col + 1..n {
                let f = lu[r * n + col] / d;
                if f == 0.0 {
                    continue;
                }
                lu[r * n + col] = f;
                for j in col + 1..n {
                    lu[r * n + j] -= f * lu[col * n + j];
                }
            }
        }
        Ok(Self { n, lu, perm })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[i * n + j] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= self.lu[i * n + j] * x[j];
            }
            x[i] = s / self.lu[i * n + i];
        }
        x
    }

    /// Solves for every column of `b`.
    pub fn solve_matrix(&self, b: &DenseMatrix) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(b.rows, b.cols);
        for j in 0..b.cols {
            let x = self.solve(&b.column(j));
            out.set_column(j, &x);
        }
        out
    }
}

pub fn dense_solve(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    Ok(a.lu()?.solve(b))
}

/// Sparse matrix: triplets are accumulated, then [`SparseMatrix::finalize`]
/// sums duplicates into compressed row storage.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    triplets: Vec<(usize, usize, f64)>,
    compressed: Option<Csr>,
}

#[derive(Debug, Clone, PartialEq)]
struct Csr {
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            triplets: Vec::new(),
            compressed: None,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_finalized(&self) -> bool {
        self.compressed.is_some()
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        assert!(
            self.compressed.is_none(),
            "cannot add entries to a finalized sparse matrix"
        );
        assert!(row < self.rows && col < self.cols, "triplet out of bounds");
        if value != 0.0 {
            self.triplets.push((row, col, value));
        }
    }

    pub fn finalize(&mut self) {
        if self.compressed.is_some() {
            return;
        }
        let mut trip = std::mem::take(&mut self.triplets);
        trip.sort_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0usize; self.rows + 1];
        let mut indices = Vec::with_capacity(trip.len());
        let mut values: Vec<f64> = Vec::with_capacity(trip.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in trip {
            if last == Some((r, c)) {
                *values.last_mut().expect("duplicate follows an entry") += v;
            } else {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..self.rows {
            indptr[r + 1] += indptr[r];
        }
        self.compressed = Some(Csr {
            indptr,
            indices,
            values,
        });
    }

    fn csr(&self) -> &Csr {
        self.compressed
            .as_ref()
            .expect("sparse matrix used before finalize()")
    }

    pub fn nnz(&self) -> usize {
        self.csr().values.len()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let csr = self.csr();
        let range = csr.indptr[row]..csr.indptr[row + 1];
        match csr.indices[range.clone()].binary_search(&col) {
            Ok(pos) => csr.values[range.start + pos],
            Err(_) => 0.0,
        }
    }

    /// Iterates `(row, col, value)` of the finalized matrix in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let csr = self.csr();
        (0..self.rows).flat_map(move |r| {
            (csr.indptr[r]..csr.indptr[r + 1]).map(move |p| (r, csr.indices[p], csr.values[p]))
        })
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        let csr = self.csr();
        (0..self.rows)
            .map(|r| {
                (csr.indptr[r]..csr.indptr[r + 1])
                    .map(|p| csr.values[p] * x[csr.indices[p]])
                    .sum()
            })
            .collect()
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.rows, self.cols);
        for (r, c, v) in self.entries() {
            d[(r, c)] = v;
        }
        d
    }

    pub fn factorize(&self) -> Result<SparseLu> {
        SparseLu::factorize(self)
    }
}

/// Sparse LU with partial pivoting; factor once, solve many.
pub struct SparseLu {
    n: usize,
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
}

impl std::fmt::Debug for SparseLu {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SparseLu").field("n", &self.n).finish()
    }
}

impl SparseLu {
    pub fn factorize(a: &SparseMatrix) -> Result<Self> {
        if a.rows != a.cols {
            return Err(Error::InvalidParameter(format!(
                "sparse solve needs a square matrix, got {}x{}",
                a.rows, a.cols
            )));
        }
        let triplets: Vec<Triplet<usize, usize, f64>> =
            a.entries().map(|(r, c, v)| Triplet::new(r, c, v)).collect();
        let mat = SparseColMat::<usize, f64>::try_new_from_triplets(a.rows, a.cols, &triplets)
            .map_err(|e| Error::SparseSolve(format!("{e:?}")))?;
        let lu = mat
            .sp_lu()
            .map_err(|e| Error::SparseSolve(format!("{e:?}")))?;
        Ok(Self { n: a.rows, lu })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        assert_eq!(b.len(), self.n);
        let rhs = Col::<f64>::from_fn(self.n, |i| b[i]);
        let x = self.lu.solve(&rhs);
        let out: Vec<f64> = (0..self.n).map(|i| x[i]).collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::SparseSolve(
                "non-finite solution (numerically singular matrix)".into(),
            ));
        }
        Ok(out)
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Relative residual threshold accepted by [`sparse_solve`].
pub const SPARSE_RESIDUAL_TOLERANCE: f64 = 1e-8;

/// Factorizes and solves `A x = b` with one step of iterative refinement.
pub fn sparse_solve(a: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let lu = a.factorize()?;
    solve_refined(a, &lu, b)
}

/// Solves with an existing factorization plus one refinement step, and checks
/// the residual.
pub fn solve_refined(a: &SparseMatrix, lu: &SparseLu, b: &[f64]) -> Result<Vec<f64>> {
    refine(a, b, 1, |r| lu.solve(r))
}

/// Forward and inverse elimination orders for [`SymmetricLdlt`].
fn saddle_ordering(a: &SparseMatrix, signs: &[i8]) -> Result<(Vec<usize>, Vec<usize>)> {
    use faer::dyn_stack::{MemBuffer, MemStack};
    use faer::sparse::linalg::amd;

    let n = a.rows;
    let positive: Vec<usize> = (0..n).filter(|&i| signs[i] > 0).collect();
    let mut compact = vec![usize::MAX; n];
    for (ci, &i) in positive.iter().enumerate() {
        compact[i] = ci;
    }
    let np = positive.len();
    let mut triplets = Vec::new();
    for (r, c, _) in a.entries() {
        if r <= c && compact[r] != usize::MAX && compact[c] != usize::MAX {
            triplets.push(Triplet::new(compact[r], compact[c], 1.0));
        }
    }
    let mut order = vec![0usize; np];
    if np > 0 {
        let pattern = SparseColMat::<usize, f64>::try_new_from_triplets(np, np, &triplets)
            .map_err(|e| Error::SparseSolve(format!("{e:?}")))?;
        let mut order_inv = vec![0usize; np];
        let mut mem = MemBuffer::new(amd::order_scratch::<usize>(np, pattern.compute_nnz()));
        amd::order(
            &mut order,
            &mut order_inv,
            pattern.symbolic(),
            amd::Control::default(),
            MemStack::new(&mut mem),
        )
        .map_err(|e| Error::SparseSolve(format!("{e:?}")))?;
    }
    let mut position = vec![usize::MAX; n];
    for (t, &ci) in order.iter().enumerate() {
        position[positive[ci]] = t;
    }
    // last positive neighbour of each negative row
    let mut after = vec![None::<usize>; n];
    for (r, c, _) in a.entries() {
        if signs[r] <= 0 && signs[c] > 0 {
            let p = position[c];
            after[r] = Some(after[r].map_or(p, |q: usize| q.max(p)));
        }
    }
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); np];
    let mut tail = Vec::new();
    for i in (0..n).filter(|&i| signs[i] <= 0) {
        match after[i] {
            Some(p) => buckets[p].push(i),
            None => tail.push(i),
        }
    }
    let mut fwd = Vec::with_capacity(n);
    for (t, &ci) in order.iter().enumerate() {
        fwd.push(positive[ci]);
        fwd.extend_from_slice(&buckets[t]);
    }
    fwd.extend(tail);
    let mut inv = vec![0usize; n];
    for (t, &i) in fwd.iter().enumerate() {
        inv[i] = t;
    }
    Ok((fwd, inv))
}

fn refine(
    a: &SparseMatrix,
    b: &[f64],
    max_steps: usize,
    solve: impl Fn(&[f64]) -> Result<Vec<f64>>,
) -> Result<Vec<f64>> {
    let bn = norm2(b).max(f64::MIN_POSITIVE);
    let residual =
        |x: &[f64]| -> Vec<f64> { a.mul_vec(x).iter().zip(b).map(|(ax, bi)| bi - ax).collect() };
    let mut x = solve(b)?;
    let mut r = residual(&x);
    let mut res = norm2(&r);
    for _ in 0..max_steps {
        if res <= 1e-14 * bn {
            break;
        }
        let dx = solve(&r)?;
        let trial: Vec<f64> = x.iter().zip(&dx).map(|(xi, d)| xi + d).collect();
        let r_trial = residual(&trial);
        let res_trial = norm2(&r_trial);
        if res_trial >= res {
            break;
        }
        x = trial;
        r = r_trial;
        res = res_trial;
    }
    if res > SPARSE_RESIDUAL_TOLERANCE * bn {
        return Err(Error::SparseSolve(format!(
            "residual {res:e} exceeds {SPARSE_RESIDUAL_TOLERANCE:e} * |b| = {:e}",
            SPARSE_RESIDUAL_TOLERANCE * bn
        )));
    }
    Ok(x)
}

/// Sparse `L D Lᵀ` of a symmetric saddle point matrix without pivoting.
///
/// Rows with expected sign `+1` are ordered by approximate minimum degree;
/// each `-1` row is placed right after the last of its `+1` neighbours so
/// its pivot has already picked up a nonzero Schur complement. A zero pivot
/// is reported as [`Error::SingularMatrix`].
pub struct SymmetricLdlt {
    n: usize,
    symbolic: faer::sparse::linalg::cholesky::SymbolicCholesky<usize>,
    values: Vec<f64>,
}

impl std::fmt::Debug for SymmetricLdlt {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SymmetricLdlt").field("n", &self.n).finish()
    }
}

impl SymmetricLdlt {
    /// Factorizes the upper triangle of `a`; `signs[i]` is the expected sign
    /// of pivot `i` (`+1` for the positive definite block, `-1` otherwise).
    pub fn factorize(a: &SparseMatrix, signs: &[i8]) -> Result<Self> {
        use faer::dyn_stack::{MemBuffer, MemStack};
        use faer::linalg::cholesky::ldlt::factor::LdltRegularization;
        use faer::sparse::linalg::cholesky::{factorize_symbolic_cholesky, SymmetricOrdering};

        if a.rows != a.cols || signs.len() != a.rows {
            return Err(Error::InvalidParameter(format!(
                "symmetric factorization needs a square matrix and one sign per row, got {}x{} and {} signs",
                a.rows,
                a.cols,
                signs.len()
            )));
        }
        let n = a.rows;
        let triplets: Vec<Triplet<usize, usize, f64>> = a
            .entries()
            .filter(|&(r, c, _)| r <= c)
            .map(|(r, c, v)| Triplet::new(r, c, v))
            .collect();
        let upper = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
            .map_err(|e| Error::SparseSolve(format!("{e:?}")))?;
        let (fwd, inv) = saddle_ordering(a, signs)?;
        let perm = faer::perm::PermRef::new_checked(&fwd, &inv, n);
        let symbolic = factorize_symbolic_cholesky(
            upper.symbolic(),
            faer::Side::Upper,
            SymmetricOrdering::Custom(perm),
            Default::default(),
        )
        .map_err(|e| Error::SparseSolve(format!("{e:?}")))?;
        let mut values = vec![0.0; symbolic.len_val()];
        let par = faer::Par::Seq;
        let mut mem =
            MemBuffer::new(symbolic.factorize_numeric_ldlt_scratch::<f64>(par, Default::default()));
        symbolic
            .factorize_numeric_ldlt(
                &mut values,
                upper.as_ref(),
                faer::Side::Upper,
                LdltRegularization::default(),
                par,
                MemStack::new(&mut mem),
                Default::default(),
            )
            .map_err(|e| match e {
                faer::linalg::cholesky::ldlt::factor::LdltError::ZeroPivot { index } => {
                    Error::SingularMatrix {
                        column: fwd[index],
                        pivot: 0.0,
                        threshold: 0.0,
                    }
                }
            })?;
        Ok(Self {
            n,
            symbolic,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        use faer::dyn_stack::{MemBuffer, MemStack};
        use faer::sparse::linalg::cholesky::LdltRef;

        assert_eq!(b.len(), self.n);
        let mut x = b.to_vec();
        let par = faer::Par::Seq;
        let mut mem = MemBuffer::new(self.symbolic.solve_in_place_scratch::<f64>(1, par));
        LdltRef::new(&self.symbolic, &self.values).solve_in_place_with_conj(
            faer::Conj::No,
            MatMut::from_column_major_slice_mut(&mut x, self.n, 1),
            par,
            MemStack::new(&mut mem),
        );
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SparseSolve(
                "non-finite solution (numerically singular matrix)".into(),
            ));
        }
        Ok(x)
    }

    /// Solves `a x = b` with iterative refinement against the unregularized
    /// matrix and checks the residual.
    pub fn solve_refined(&self, a: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>> {
        refine(a, b, 30, |r| self.solve(r))
    }
}
