//! Compressed sparse row matrices, a Jacobi-preconditioned conjugate-gradient solver and a
//! banded Cholesky factorization for the small-bandwidth matrices of structured grids.

use crate::error::{check_len, invalid, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
    symmetric: bool,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut counts = vec![0usize; n_rows + 1];
        for &(i, j, _) in triplets {
            if i >= n_rows || j >= n_cols {
                return Err(invalid(format!(
                    "triplet ({i}, {j}) outside a {n_rows}x{n_cols} matrix"
                )));
            }
            counts[i + 1] += 1;
        }
        for i in 0..n_rows {
            counts[i + 1] += counts[i];
        }
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        let mut next = counts.clone();
        for &(i, j, v) in triplets {
            cols[next[i]] = j;
            vals[next[i]] = v;
            next[i] += 1;
        }

        let mut row_offsets = Vec::with_capacity(n_rows + 1);
        let mut col_indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_offsets.push(0);
        let mut row: Vec<(usize, f64)> = Vec::new();
        for i in 0..n_rows {
            row.clear();
            row.extend((counts[i]..counts[i + 1]).map(|k| (cols[k], vals[k])));
            row.sort_unstable_by_key(|&(j, _)| j);
            for &(j, v) in &row {
                if col_indices.len() > row_offsets[i] && *col_indices.last().unwrap() == j {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_indices.push(j);
                    values.push(v);
                }
            }
            row_offsets.push(col_indices.len());
        }

        Ok(Self { n_rows, n_cols, row_offsets, col_indices, values, symmetric: false })
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        Self {
            n_rows: n,
            n_cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: diag.to_vec(),
            symmetric: true,
        }
    }

    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            row_offsets: vec![0; n_rows + 1],
            col_indices: Vec::new(),
            values: Vec::new(),
            symmetric: n_rows == n_cols,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_symmetric_flagged(&self) -> bool {
        self.symmetric
    }

    /// Marks the matrix as symmetric after checking every stored entry against its mirror.
    pub fn mark_symmetric(mut self, tol: f64) -> Result<Self> {
        if !self.check_symmetry(tol) {
            return Err(invalid("matrix is not symmetric"));
        }
        self.symmetric = true;
        Ok(self)
    }

    pub fn check_symmetry(&self, tol: f64) -> bool {
        if self.n_rows != self.n_cols {
            return false;
        }
        self.iter().all(|(i, j, v)| {
            let scale = v.abs().max(1.0);
            (self.get(j, i) - v).abs() <= tol * scale
        })
    }

    /// Iterates over stored entries as `(row, col, value)`.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |i| {
            (self.row_offsets[i]..self.row_offsets[i + 1])
                .map(move |k| (i, self.col_indices[k], self.values[k]))
        })
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_offsets[i]..self.row_offsets[i + 1]).map(move |k| (self.col_indices[k], self.values[k]))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_offsets[i]..self.row_offsets[i + 1];
        match self.col_indices[range.clone()].binary_search(&j) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows.min(self.n_cols)).map(|i| self.get(i, i)).collect()
    }

    pub fn spmv(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = vec![0.0; self.n_rows];
        self.spmv_into(x, &mut y)?;
        Ok(y)
    }

    pub fn spmv_into(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        check_len(self.n_cols, x.len())?;
        check_len(self.n_rows, y.len())?;
        self.spmv_unchecked(x, y);
        Ok(())
    }

    #[inline]
    pub(crate) fn spmv_unchecked(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let (lo, hi) = (self.row_offsets[i], self.row_offsets[i + 1]);
            *yi = self.col_indices[lo..hi]
                .iter()
                .zip(&self.values[lo..hi])
                .map(|(&j, &v)| v * x[j])
                .sum();
        }
    }

    /// `alpha * self + beta * other`, on the union of both sparsity patterns.
    pub fn lin_comb(&self, alpha: f64, other: &CsrMatrix, beta: f64) -> Result<Self> {
        check_len(self.n_rows, other.n_rows)?;
        check_len(self.n_cols, other.n_cols)?;
        let triplets: Vec<_> = self
            .iter()
            .map(|(i, j, v)| (i, j, alpha * v))
            .chain(other.iter().map(|(i, j, v)| (i, j, beta * v)))
            .collect();
        let mut out = Self::from_triplets(self.n_rows, self.n_cols, &triplets)?;
        out.symmetric = self.symmetric && other.symmetric;
        Ok(out)
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    /// Row-major dense copy, for tests and small oracles.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n_cols]; self.n_rows];
        for (i, j, v) in self.iter() {
            d[i][j] += v;
        }
        d
    }

    /// `x . (self x)`
    pub fn quadratic_form(&self, x: &[f64]) -> Result<f64> {
        let y = self.spmv(x)?;
        Ok(dot(x, &y))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// `||b - A x|| / ||b||` of the returned iterate (absolute norm when `b = 0`).
    pub final_residual_norm: f64,
    pub converged: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgOptions {
    pub tol: f64,
    /// `None` means `10 n`.
    pub max_iter: Option<usize>,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: None }
    }
}

/// Solves `A x = b` from a zero initial guess.
pub fn cg_solve(a: &CsrMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, SolveReport)> {
    let mut x = vec![0.0; b.len()];
    let report = cg_solve_into(a, b, &mut x, CgOptions { tol, max_iter: Some(max_iter) }, None)?;
    Ok((x, report))
}

/// Jacobi-preconditioned CG starting from the contents of `x`.
///
/// When `history` is given, the residual 2-norm of every iterate is appended to it.
pub fn cg_solve_into(
    a: &CsrMatrix,
    b: &[f64],
    x: &mut [f64],
    opts: CgOptions,
    mut history: Option<&mut Vec<f64>>,
) -> Result<SolveReport> {
    let n = a.n_rows();
    if a.n_cols() != n {
        return Err(invalid("conjugate gradients needs a square matrix"));
    }
    check_len(n, b.len())?;
    check_len(n, x.len())?;
    if !(opts.tol > 0.0) {
        return Err(invalid(format!("tolerance must be positive, got {}", opts.tol)));
    }
    let max_iter = opts.max_iter.unwrap_or(10 * n.max(1));

    let b_norm = norm2(b);
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveReport { iterations: 0, final_residual_norm: 0.0, converged: true });
    }
    let target = opts.tol * b_norm;

    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();

    let mut r = vec![0.0; n];
    let mut ap = vec![0.0; n];
    a.spmv_unchecked(x, &mut ap);
    for i in 0..n {
        r[i] = b[i] - ap[i];
    }
    let mut r_norm = norm2(&r);
    if let Some(h) = history.as_deref_mut() {
        h.push(r_norm);
    }

    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut iterations = 0;

    while iterations < max_iter {
        if r_norm <= target {
            // confirm against the true residual, recurrences drift
            a.spmv_unchecked(x, &mut ap);
            for i in 0..n {
                r[i] = b[i] - ap[i];
            }
            r_norm = norm2(&r);
            if r_norm <= target {
                break;
            }
            for i in 0..n {
                z[i] = r[i] * inv_diag[i];
            }
            p.copy_from_slice(&z);
            rz = dot(&r, &z);
        }
        a.spmv_unchecked(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        iterations += 1;
        r_norm = norm2(&r);
        if let Some(h) = history.as_deref_mut() {
            h.push(r_norm);
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }

    let converged = r_norm <= target;
    Ok(SolveReport { iterations, final_residual_norm: r_norm / b_norm, converged })
}

/// Like [`cg_solve_into`] but turns non-convergence into an error.
pub fn cg_solve_strict(a: &CsrMatrix, b: &[f64], x: &mut [f64], opts: CgOptions) -> Result<SolveReport> {
    let report = cg_solve_into(a, b, x, opts, None)?;
    if report.converged {
        Ok(report)
    } else {
        Err(Error::SolverDivergence { iterations: report.iterations, residual: report.final_residual_norm })
    }
}

/// Cholesky factor `L` of a symmetric positive definite band matrix, `A = L L^T`.
///
/// Row `i` of `L` is stored at `band[i * (bw + 1)..]`, entry `L[i][j]` at offset `j + bw - i`.
#[derive(Clone, Debug, PartialEq)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

impl BandedCholesky {
    /// Largest `|i - j|` over the stored entries of `a`.
    pub fn bandwidth(a: &CsrMatrix) -> usize {
        a.iter().map(|(i, j, _)| i.abs_diff(j)).max().unwrap_or(0)
    }

    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        if a.n_rows != a.n_cols {
            return Err(Error::DimensionMismatch { expected: a.n_rows, found: a.n_cols });
        }
        if !a.check_symmetry(1e-12) {
            return Err(invalid("banded Cholesky needs a symmetric matrix"));
        }
        let (n, bw) = (a.n_rows, Self::bandwidth(a));
        let w = bw + 1;
        let mut band = vec![0.0; n * w];
        for (i, j, v) in a.iter() {
            if j <= i {
                band[i * w + j + bw - i] = v;
            }
        }
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let k0 = lo.max(j.saturating_sub(bw));
                let mut s = band[i * w + j + bw - i];
                for k in k0..j {
                    s -= band[i * w + k + bw - i] * band[j * w + k + bw - j];
                }
                if i == j {
                    if !(s > 0.0) {
                        return Err(invalid(format!("matrix is not positive definite (pivot {s:e} at row {i})")));
                    }
                    band[i * w + bw] = s.sqrt();
                } else {
                    band[i * w + j + bw - i] = s / band[j * w + bw];
                }
            }
        }
        Ok(Self { n, bw, band })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, x: &mut [f64]) -> Result<()> {
        check_len(self.n, x.len())?;
        let (bw, w) = (self.bw, self.bw + 1);
        for i in 0..self.n {
            let row = &self.band[i * w..(i + 1) * w];
            let lo = i.saturating_sub(bw);
            let mut s = x[i];
            for k in lo..i {
                s -= row[k + bw - i] * x[k];
            }
            x[i] = s / row[bw];
        }
        for i in (0..self.n).rev() {
            let xi = x[i] / self.band[i * w + bw];
            x[i] = xi;
            let lo = i.saturating_sub(bw);
            let row = &self.band[i * w..(i + 1) * w];
            for k in lo..i {
                x[k] -= row[k + bw - i] * xi;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        // Gaussian elimination with partial pivoting
        let n = b.len();
        for k in 0..n {
            let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
            a.swap(k, p);
            b.swap(k, p);
            for i in k + 1..n {
                let f = a[i][k] / a[k][k];
                for j in k..n {
                    a[i][j] -= f * a[k][j];
                }
                b[i] -= f * b[k];
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
            x[i] = (b[i] - s) / a[i][i];
        }
        x
    }

    fn random_spd(n: usize, seed: u64) -> CsrMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let mut trip = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let mut v: f64 = (0..n).map(|k| b[k][i] * b[k][j]).sum();
                if i == j {
                    v += n as f64 * 0.1;
                }
                trip.push((i, j, v));
            }
        }
        CsrMatrix::from_triplets(n, n, &trip).unwrap()
    }

    #[test]
    fn spmv_examples() {
        let id = CsrMatrix::identity(3);
        assert_eq!(id.spmv(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        let z = CsrMatrix::zeros(3, 3);
        assert_eq!(z.spmv(&[4.0, -1.0, 7.0]).unwrap(), vec![0.0; 3]);
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 2.0)]).unwrap();
        assert_eq!(a.spmv(&[1.0, 1.0]).unwrap(), vec![3.0, 3.0]);
    }

    #[test]
    fn spmv_dimension_mismatch() {
        let a = CsrMatrix::identity(3);
        assert!(matches!(a.spmv(&[1.0, 2.0]), Err(Error::DimensionMismatch { expected: 3, found: 2 })));
    }

    #[test]
    fn triplets_are_summed_and_sorted() {
        let a = CsrMatrix::from_triplets(2, 3, &[(0, 2, 1.0), (0, 0, 1.0), (0, 2, 2.5), (1, 1, -1.0)]).unwrap();
        assert_eq!(a.row_offsets(), &[0, 2, 3]);
        assert_eq!(a.col_indices(), &[0, 2, 1]);
        assert_eq!(a.get(0, 2), 3.5);
        assert!(CsrMatrix::from_triplets(2, 2, &[(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn cg_identity_one_iteration() {
        let (x, rep) = cg_solve(&CsrMatrix::identity(2), &[5.0, -3.0], 1e-10, 20).unwrap();
        assert_eq!(x, vec![5.0, -3.0]);
        assert_eq!(rep.iterations, 1);
        assert!(rep.converged);
    }

    #[test]
    fn cg_diagonal() {
        let a = CsrMatrix::from_diagonal(&[1.0, 4.0]);
        let (x, rep) = cg_solve(&a, &[1.0, 4.0], 1e-10, 20).unwrap();
        assert!(rep.converged);
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn cg_matches_dense_elimination() {
        let a = random_spd(10, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let b: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let expected = dense_solve(a.to_dense(), b.clone());
        let (x, rep) = cg_solve(&a, &b, 1e-14, 200).unwrap();
        assert!(rep.converged);
        for (xi, ei) in x.iter().zip(&expected) {
            assert!((xi - ei).abs() < 1e-10, "{xi} vs {ei}");
        }
    }

    #[test]
    fn cg_zero_rhs_and_bad_tolerance() {
        let a = random_spd(4, 1);
        let (x, rep) = cg_solve(&a, &[0.0; 4], 1e-10, 10).unwrap();
        assert_eq!(x, vec![0.0; 4]);
        assert_eq!(rep.iterations, 0);
        assert!(cg_solve(&a, &[1.0; 4], 0.0, 10).is_err());
    }

    #[test]
    fn cg_reports_non_convergence() {
        let a = random_spd(30, 3);
        let (_, rep) = cg_solve(&a, &[1.0; 30], 1e-14, 1).unwrap();
        assert!(!rep.converged);
        let mut x = vec![0.0; 30];
        let opts = CgOptions { tol: 1e-14, max_iter: Some(1) };
        assert!(matches!(cg_solve_strict(&a, &[1.0; 30], &mut x, opts), Err(Error::SolverDivergence { .. })));
    }

    #[test]
    fn symmetry_flag() {
        let a = random_spd(5, 2).mark_symmetric(1e-14).unwrap();
        assert!(a.is_symmetric_flagged());
        let b = CsrMatrix::from_triplets(2, 2, &[(0, 1, 1.0)]).unwrap();
        assert!(b.mark_symmetric(1e-12).is_err());
    }

    #[test]
    fn lin_comb_union_pattern() {
        let a = CsrMatrix::identity(2);
        let b = CsrMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        let c = a.lin_comb(2.0, &b, -0.5).unwrap();
        assert_eq!(c.to_dense(), vec![vec![2.0, -0.5], vec![-0.5, 2.0]]);
    }

    #[test]
    fn banded_cholesky_matches_dense_solve() {
        let a = random_spd(10, 11);
        let b: Vec<f64> = (0..10).map(|i| (i as f64).sin()).collect();
        let chol = BandedCholesky::factor(&a).unwrap();
        let mut x = b.clone();
        chol.solve_in_place(&mut x).unwrap();
        let oracle = dense_solve(a.to_dense(), b);
        for (u, v) in x.iter().zip(&oracle) {
            assert!((u - v).abs() < 1e-10);
        }
        // tridiagonal [-1, 2, -1] has bandwidth 1
        let n = 6;
        let trip: Vec<_> = (0..n)
            .flat_map(|i| {
                let mut t = vec![(i, i, 2.0)];
                if i + 1 < n {
                    t.extend([(i, i + 1, -1.0), (i + 1, i, -1.0)]);
                }
                t
            })
            .collect();
        let t = CsrMatrix::from_triplets(n, n, &trip).unwrap();
        assert_eq!(BandedCholesky::bandwidth(&t), 1);
        let mut x = t.spmv(&[1.0, -2.0, 3.0, 0.5, 0.0, 4.0]).unwrap();
        BandedCholesky::factor(&t).unwrap().solve_in_place(&mut x).unwrap();
        for (u, v) in x.iter().zip([1.0, -2.0, 3.0, 0.5, 0.0, 4.0]) {
            assert!((u - v).abs() < 1e-12);
        }
        let indefinite = CsrMatrix::from_diagonal(&[1.0, -1.0]);
        assert!(BandedCholesky::factor(&indefinite).is_err());
    }
}
