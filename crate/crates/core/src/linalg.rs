//! Dense small-matrix kernel.
//!
//! Everything here works on the shapes the index computations need: `2n x n`
//! differentials, `n x n` Gram matrices and `2n x 2n` stacked determinants,
//! with `n` at most a handful. Storage is row-major `Vec<f64>`.
//!
//! Layout convention: a differential is stored as a `2n x n` matrix whose
//! entry `[j][i]` is `df_j / dx_i` (ambient row `j`, domain column `i`).
//! Routines that need the `n x 2n` orientation (stacked determinants) build
//! it with [`Matrix::transpose`].

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Largest `n` accepted by [`permutations_signed`].
pub const MAX_PERMUTATION_ORDER: usize = 8;

/// Relative threshold on `det U / (max column norm)^(2n)` below which a
/// differential is treated as rank-deficient.
pub const RANK_THRESHOLD: f64 = 1e-12;

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major data. Panics if the length is wrong.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data has wrong length");
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix {
            rows: r,
            cols: c,
            data,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "inner dimensions differ");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(r, k)];
                if a == 0.0 {
                    continue;
                }
                for c in 0..other.cols {
                    out[(r, c)] += a * other[(k, c)];
                }
            }
        }
        out
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// `self + s * other`.
    pub fn add_scaled(&self, other: &Matrix, s: f64) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + s * b)
                .collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn column_norm(&self, c: usize) -> f64 {
        (0..self.rows)
            .map(|r| self[(r, c)] * self[(r, c)])
            .sum::<f64>()
            .sqrt()
    }

    /// Square submatrix on the given rows (0-based, in the given order).
    pub fn select_rows(&self, rows: &[usize]) -> Matrix {
        Matrix::from_fn(rows.len(), self.cols, |r, c| self[(rows[r], c)])
    }

    /// Vertical concatenation `[self; other]`.
    pub fn vstack(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "column counts differ");
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Matrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn determinant(&self) -> f64 {
        assert_eq!(self.rows, self.cols, "determinant of a non-square matrix");
        let mut buf = self.data.clone();
        det_in_place(&mut buf, self.rows)
    }

    /// Inverse by Gauss-Jordan elimination with partial pivoting.
    pub fn inverse(&self) -> Option<Matrix> {
        assert_eq!(self.rows, self.cols, "inverse of a non-square matrix");
        let n = self.rows;
        let mut a = self.data.clone();
        let mut inv = Matrix::identity(n).data;
        for col in 0..n {
            let pivot = pivot_row(&a, n, col);
            if a[pivot * n + col] == 0.0 {
                return None;
            }
            if pivot != col {
                swap_rows(&mut a, n, pivot, col);
                swap_rows(&mut inv, n, pivot, col);
            }
            let p = a[col * n + col];
            for c in 0..n {
                a[col * n + c] /= p;
                inv[col * n + c] /= p;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let factor = a[r * n + col];
                if factor == 0.0 {
                    continue;
                }
                for c in 0..n {
                    a[r * n + c] -= factor * a[col * n + c];
                    inv[r * n + c] -= factor * inv[col * n + c];
                }
            }
        }
        Some(Matrix::from_row_major(n, n, inv))
    }

    /// Solves `self * x = b` by LU with partial pivoting. `None` when a pivot
    /// is exactly zero.
    pub fn solve(&self, b: &[f64]) -> Option<Vec<f64>> {
        assert_eq!(self.rows, self.cols);
        assert_eq!(b.len(), self.rows);
        let n = self.rows;
        let mut a = self.data.clone();
        let mut x = b.to_vec();
        for col in 0..n {
            let pivot = pivot_row(&a, n, col);
            if a[pivot * n + col] == 0.0 {
                return None;
            }
            if pivot != col {
                swap_rows(&mut a, n, pivot, col);
                x.swap(pivot, col);
            }
            for r in col + 1..n {
                let factor = a[r * n + col] / a[col * n + col];
                if factor == 0.0 {
                    continue;
                }
                for c in col..n {
                    a[r * n + c] -= factor * a[col * n + c];
                }
                x[r] -= factor * x[col];
            }
        }
        for r in (0..n).rev() {
            let mut s = x[r];
            for c in r + 1..n {
                s -= a[r * n + c] * x[c];
            }
            x[r] = s / a[r * n + r];
        }
        Some(x)
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

#[inline]
fn pivot_row(a: &[f64], n: usize, col: usize) -> usize {
    let mut best = col;
    let mut best_abs = a[col * n + col].abs();
    for r in col + 1..n {
        let v = a[r * n + col].abs();
        if v > best_abs {
            best = r;
            best_abs = v;
        }
    }
    best
}

#[inline]
fn swap_rows(a: &mut [f64], n: usize, r1: usize, r2: usize) {
    for c in 0..n {
        a.swap(r1 * n + c, r2 * n + c);
    }
}

/// Determinant of the `n x n` row-major matrix in `buf` by LU with partial
/// pivoting. The buffer is overwritten.
pub fn det_in_place(buf: &mut [f64], n: usize) -> f64 {
    debug_assert_eq!(buf.len(), n * n);
    // closed forms keep exact antisymmetry under column swaps
    match n {
        0 => return 1.0,
        1 => return buf[0],
        2 => return buf[0] * buf[3] - buf[1] * buf[2],
        _ => {}
    }
    let mut det = 1.0;
    for col in 0..n {
        let pivot = pivot_row(buf, n, col);
        let p = buf[pivot * n + col];
        if p == 0.0 {
            return 0.0;
        }
        if pivot != col {
            swap_rows(buf, n, pivot, col);
            det = -det;
        }
        det *= p;
        for r in col + 1..n {
            let factor = buf[r * n + col] / p;
            if factor == 0.0 {
                continue;
            }
            for c in col + 1..n {
                buf[r * n + c] -= factor * buf[col * n + c];
            }
        }
    }
    det
}

/// A full-rank `2n x n` matrix: the value of a differential.
#[derive(Clone, Debug, PartialEq)]
pub struct StiefelPoint {
    n: usize,
    entries: Matrix,
}

impl StiefelPoint {
    /// Wraps a `2n x n` matrix. Only the shape is checked here; rank is
    /// checked by [`gram`].
    pub fn new(entries: Matrix) -> Result<Self> {
        let n = entries.cols();
        if n == 0 || entries.rows() != 2 * n {
            return Err(Error::DimensionMismatch(format!(
                "a Stiefel point must be 2n x n, got {}x{}",
                entries.rows(),
                entries.cols()
            )));
        }
        Ok(StiefelPoint { n, entries })
    }

    /// The standard embedding `[I_n; 0_n]`.
    pub fn standard(n: usize) -> Self {
        let mut m = Matrix::zeros(2 * n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        StiefelPoint { n, entries: m }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn entries(&self) -> &Matrix {
        &self.entries
    }

    pub fn into_entries(self) -> Matrix {
        self.entries
    }

    /// `phi^j_i` with 0-based ambient index `j` and domain index `i`.
    #[inline]
    pub fn get(&self, j: usize, i: usize) -> f64 {
        self.entries[(j, i)]
    }
}

/// Strictly increasing `n`-subset of `{1, ..., 2n}` (1-based, as in the
/// sign exponent formula).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct IndexSet {
    n: usize,
    indices: Vec<usize>,
}

impl IndexSet {
    pub fn new(n: usize, indices: Vec<usize>) -> Result<Self> {
        let valid = n > 0
            && indices.len() == n
            && indices.windows(2).all(|w| w[0] < w[1])
            && indices.first().is_some_and(|&j| j >= 1)
            && indices.last().is_some_and(|&j| j <= 2 * n);
        if !valid {
            return Err(Error::InvalidIndexSet(format!("{indices:?} for n = {n}")));
        }
        Ok(IndexSet { n, indices })
    }

    /// All `C(2n, n)` index sets in lexicographic order.
    pub fn all(n: usize) -> Vec<IndexSet> {
        let mut out = Vec::new();
        let mut current = Vec::with_capacity(n);
        fn rec(start: usize, n: usize, current: &mut Vec<usize>, out: &mut Vec<IndexSet>) {
            if current.len() == n {
                out.push(IndexSet {
                    n,
                    indices: current.clone(),
                });
                return;
            }
            let remaining = n - current.len();
            for j in start..=(2 * n + 1 - remaining) {
                current.push(j);
                rec(j + 1, n, current, out);
                current.pop();
            }
        }
        if n > 0 {
            rec(1, n, &mut current, &mut out);
        }
        out
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    /// 1-based indices.
    #[inline]
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// 0-based row indices, for addressing matrices.
    pub fn rows(&self) -> Vec<usize> {
        self.indices.iter().map(|j| j - 1).collect()
    }

    pub fn complement(&self) -> IndexSet {
        let indices = (1..=2 * self.n)
            .filter(|j| !self.indices.contains(j))
            .collect();
        IndexSet { n: self.n, indices }
    }
}

/// Sign exponent `n(n-1)/2 + j_1 + ... + j_n`.
pub fn mu(set: &IndexSet) -> i64 {
    let n = set.n as i64;
    n * (n - 1) / 2 + set.indices.iter().map(|&j| j as i64).sum::<i64>()
}

/// `(-1)^mu(J)` as a float.
#[inline]
pub fn mu_sign(set: &IndexSet) -> f64 {
    if mu(set) % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Determinant of the rows of `phi` whose indices are *not* in `set`, taken
/// in increasing order, columns in natural order.
pub fn complementary_minor(phi: &StiefelPoint, set: &IndexSet) -> f64 {
    let rows = set.complement().rows();
    phi.entries.select_rows(&rows).determinant()
}

/// Determinant of the rows of `phi` whose indices are in `set`.
pub fn minor(phi: &StiefelPoint, set: &IndexSet) -> f64 {
    phi.entries.select_rows(&set.rows()).determinant()
}

/// Gram matrix of a differential and the quantities derived from it.
#[derive(Clone, Debug)]
pub struct GramData {
    /// `U = phi^T phi`.
    pub gram: Matrix,
    /// `U^{-1}`, entries `u_ij`.
    pub gram_inv: Matrix,
    pub det: f64,
    /// `(det U)^{-1/2}`.
    pub u: f64,
}

pub fn gram(phi: &StiefelPoint) -> Result<GramData> {
    let n = phi.n;
    let e = &phi.entries;
    let g = Matrix::from_fn(n, n, |a, b| {
        (0..2 * n).map(|k| e[(k, a)] * e[(k, b)]).sum::<f64>()
    });
    let det = g.determinant();
    let scale = (0..n).map(|c| e.column_norm(c)).fold(0.0_f64, f64::max);
    let threshold = RANK_THRESHOLD * scale.powi(2 * n as i32);
    if !(det > threshold) || scale == 0.0 {
        return Err(Error::RankDeficient { det_gram: det });
    }
    let gram_inv = g.inverse().ok_or(Error::RankDeficient { det_gram: det })?;
    Ok(GramData {
        gram: g,
        gram_inv,
        det,
        u: det.powf(-0.5),
    })
}

/// A permutation of `{0, ..., n-1}` together with its sign.
pub type SignedPermutation = (Vec<usize>, i8);

/// All `n!` permutations of `{0, ..., n-1}` with their parity signs, in
/// lexicographic order.
pub fn permutations_signed(n: usize) -> Result<Vec<SignedPermutation>> {
    if n == 0 || n > MAX_PERMUTATION_ORDER {
        return Err(Error::TooLarge {
            n,
            max: MAX_PERMUTATION_ORDER,
        });
    }
    let mut out = Vec::new();
    let mut perm: Vec<usize> = (0..n).collect();
    loop {
        out.push((perm.clone(), permutation_sign(&perm)));
        if !next_permutation(&mut perm) {
            break;
        }
    }
    Ok(out)
}

/// Sign of a permutation by cycle decomposition.
pub fn permutation_sign(perm: &[usize]) -> i8 {
    let mut seen = vec![false; perm.len()];
    let mut sign = 1i8;
    for start in 0..perm.len() {
        if seen[start] {
            continue;
        }
        let mut len = 0;
        let mut k = start;
        while !seen[k] {
            seen[k] = true;
            k = perm[k];
            len += 1;
        }
        if len % 2 == 0 {
            sign = -sign;
        }
    }
    sign
}

fn next_permutation(p: &mut [usize]) -> bool {
    if p.len() < 2 {
        return false;
    }
    let mut i = p.len() - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = p.len() - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Leibniz-formula determinant, independent of the LU path.
    fn det_leibniz(m: &Matrix) -> f64 {
        let n = m.rows();
        permutations_signed(n)
            .unwrap()
            .iter()
            .map(|(p, s)| *s as f64 * (0..n).map(|r| m[(r, p[r])]).product::<f64>())
            .sum()
    }

    fn embedding(scale: f64) -> StiefelPoint {
        StiefelPoint::new(Matrix::from_rows(&[
            vec![scale, 0.0],
            vec![0.0, scale],
            vec![0.0, 0.0],
            vec![0.0, 0.0],
        ]))
        .unwrap()
    }

    fn set(n: usize, j: &[usize]) -> IndexSet {
        IndexSet::new(n, j.to_vec()).unwrap()
    }

    #[test]
    fn mu_examples() {
        assert_eq!(mu(&set(2, &[1, 2])), 4);
        assert_eq!(mu(&set(2, &[3, 4])), 8);
        assert_eq!(mu(&set(4, &[1, 2, 3, 4])), 16);
    }

    #[test]
    fn mu_of_complement_sums_to_constant() {
        for n in 1..=4 {
            let expected = (n * (n - 1) + (2 * n) * (2 * n + 1) / 2) as i64;
            for j in IndexSet::all(n) {
                assert_eq!(mu(&j) + mu(&j.complement()), expected);
            }
        }
    }

    #[test]
    fn index_set_validation() {
        assert!(IndexSet::new(2, vec![2, 1]).is_err());
        assert!(IndexSet::new(2, vec![0, 1]).is_err());
        assert!(IndexSet::new(2, vec![1, 5]).is_err());
        assert!(IndexSet::new(2, vec![1]).is_err());
        assert_eq!(IndexSet::all(2).len(), 6);
        assert_eq!(IndexSet::all(4).len(), 70);
    }

    #[test]
    fn complementary_minor_of_standard_embedding() {
        let phi = embedding(1.0);
        assert_eq!(complementary_minor(&phi, &set(2, &[3, 4])), 1.0);
        assert_eq!(complementary_minor(&phi, &set(2, &[1, 2])), 0.0);
    }

    #[test]
    fn gram_of_embeddings() {
        let g = gram(&embedding(1.0)).unwrap();
        assert_eq!(g.gram, Matrix::identity(2));
        assert_eq!(g.det, 1.0);
        assert_eq!(g.u, 1.0);
        let g = gram(&embedding(2.0)).unwrap();
        assert_eq!(g.gram, Matrix::identity(2).scaled(4.0));
        assert_eq!(g.det, 16.0);
        assert_eq!(g.u, 0.25);
    }

    #[test]
    fn gram_rejects_rank_deficient() {
        let phi = StiefelPoint::new(Matrix::from_rows(&[
            vec![1.0, 2.0],
            vec![2.0, 4.0],
            vec![0.0, 0.0],
            vec![3.0, 6.0],
        ]))
        .unwrap();
        assert!(matches!(gram(&phi), Err(Error::RankDeficient { .. })));
        assert!(gram(&StiefelPoint::new(Matrix::zeros(4, 2)).unwrap()).is_err());
    }

    #[test]
    fn stiefel_shape_is_checked() {
        assert!(StiefelPoint::new(Matrix::zeros(3, 2)).is_err());
        assert!(StiefelPoint::new(Matrix::zeros(0, 0)).is_err());
    }

    #[test]
    fn permutation_examples() {
        assert_eq!(permutations_signed(1).unwrap(), vec![(vec![0], 1)]);
        assert_eq!(
            permutations_signed(2).unwrap(),
            vec![(vec![0, 1], 1), (vec![1, 0], -1)]
        );
        let p3 = permutations_signed(3).unwrap();
        assert_eq!(p3.len(), 6);
        assert_eq!(p3.iter().map(|(_, s)| *s as i32).sum::<i32>(), 0);
        assert_eq!(permutations_signed(5).unwrap().len(), 120);
        assert!(matches!(
            permutations_signed(9),
            Err(Error::TooLarge { .. })
        ));
        assert!(permutations_signed(0).is_err());
    }

    #[test]
    fn inverse_and_solve() {
        let a = Matrix::from_rows(&[
            vec![4.0, 1.0, 0.5],
            vec![1.0, 3.0, -1.0],
            vec![0.5, -1.0, 2.0],
        ]);
        let inv = a.inverse().unwrap();
        let id = a.matmul(&inv);
        for r in 0..3 {
            for c in 0..3 {
                let e = if r == c { 1.0 } else { 0.0 };
                assert!((id[(r, c)] - e).abs() < 1e-14);
            }
        }
        let x = a.solve(&[1.0, 2.0, 3.0]).unwrap();
        let b = a.matmul(&Matrix::from_row_major(3, 1, x));
        assert!((b[(0, 0)] - 1.0).abs() < 1e-14);
        assert!((b[(2, 0)] - 3.0).abs() < 1e-14);
        assert!(Matrix::zeros(2, 2).inverse().is_none());
    }

    fn arb_matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
        proptest::collection::vec(-2.0f64..2.0, rows * cols)
            .prop_map(move |d| Matrix::from_row_major(rows, cols, d))
    }

    fn arb_stiefel(n: usize) -> impl Strategy<Value = StiefelPoint> {
        arb_matrix(2 * n, n)
            .prop_map(|m| StiefelPoint::new(m).unwrap())
            .prop_filter("full rank", |p| gram(p).is_ok_and(|g| g.det > 1e-6))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn gram_identity(phi in (1usize..=3).prop_flat_map(arb_stiefel)) {
            let g = gram(&phi).unwrap();
            let sum: f64 = IndexSet::all(phi.n()).iter().map(|j| minor(&phi, j).powi(2)).sum();
            prop_assert!((g.det - sum).abs() / g.det < 1e-9);
            let id = g.gram.matmul(&g.gram_inv);
            for r in 0..phi.n() {
                for c in 0..phi.n() {
                    let e = if r == c { 1.0 } else { 0.0 };
                    prop_assert!((id[(r, c)] - e).abs() < 1e-10 * g.gram.max_abs().max(1.0) * g.gram_inv.max_abs().max(1.0));
                }
            }
        }

        #[test]
        fn lu_determinant_matches_leibniz(m in (1usize..=5).prop_flat_map(|n| arb_matrix(n, n))) {
            let lu = m.determinant();
            let lb = det_leibniz(&m);
            prop_assert!((lu - lb).abs() <= 1e-12 * (1.0 + lb.abs()) * 10f64.powi(m.rows() as i32));
        }

        #[test]
        fn complementary_minor_matches_leibniz(phi in arb_stiefel(2), j in 0usize..6) {
            let set = &IndexSet::all(2)[j];
            let sub = phi.entries().select_rows(&set.complement().rows());
            prop_assert!((complementary_minor(&phi, set) - det_leibniz(&sub)).abs() < 1e-12);
        }

        #[test]
        fn complementary_minor_alternates(phi in arb_stiefel(2), j in 0usize..6) {
            let set = &IndexSet::all(2)[j];
            let comp = set.complement().rows();
            let mut swapped = phi.entries().clone();
            for c in 0..2 {
                let a = swapped[(comp[0], c)];
                swapped[(comp[0], c)] = swapped[(comp[1], c)];
                swapped[(comp[1], c)] = a;
            }
            let swapped = StiefelPoint::new(swapped).unwrap();
            let a = complementary_minor(&phi, set);
            let b = complementary_minor(&swapped, set);
            prop_assert!((a + b).abs() <= 1e-14 * (1.0 + a.abs()));
        }

        #[test]
        fn u_scales_homogeneously(phi in (1usize..=3).prop_flat_map(arb_stiefel), c in 0.1f64..10.0) {
            let n = phi.n();
            let scaled = StiefelPoint::new(phi.entries().scaled(c)).unwrap();
            let u0 = gram(&phi).unwrap().u;
            let u1 = gram(&scaled).unwrap().u;
            prop_assert!((u1 - c.powi(-(n as i32)) * u0).abs() <= 1e-10 * u1.abs());
        }
    }
}
