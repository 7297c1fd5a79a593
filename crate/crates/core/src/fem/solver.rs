//! Sparse linear algebra: CSR storage, ILU(0), BiCGStab, restarted GMRES and
//! a dense LU fallback for tiny systems.

use crate::fem::{NodalField, SparseSystem};
use crate::{Error, Result};

/// Systems at or below this size are solved by dense LU.
const DENSE_LIMIT: usize = 64;

/// Compressed sparse row matrix with sorted column indices per row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row `(column, value)` lists; duplicates are summed.
    pub fn from_row_entries(ncols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let nrows = rows.len();
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let mut last = usize::MAX;
            for (c, v) in row {
                if c == last {
                    *values.last_mut().expect("entry exists") += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                    last = c;
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.nrows) {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *yi = s;
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec(x, &mut y);
        y
    }

    /// `self + s * other` for matrices with identical shape.
    pub fn add_scaled(&self, s: f64, other: &CsrMatrix) -> CsrMatrix {
        let rows = (0..self.nrows)
            .map(|i| self.row(i).chain(other.row(i).map(|(c, v)| (c, s * v))).collect())
            .collect();
        CsrMatrix::from_row_entries(self.ncols, rows)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        d
    }
}

/// Incomplete LU factorization without fill, stored on the pattern of `A`.
#[derive(Clone, Debug)]
pub struct Ilu0 {
    lu: CsrMatrix,
    diag: Vec<usize>,
}

impl Ilu0 {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        let mut lu = a.clone();
        let n = lu.nrows;
        let mut diag = vec![usize::MAX; n];
        for (i, d) in diag.iter_mut().enumerate() {
            let r = lu.row_ptr[i]..lu.row_ptr[i + 1];
            if let Ok(k) = lu.col_idx[r.clone()].binary_search(&i) {
                *d = r.start + k;
            } else {
                return Err(Error::SolverDiverged {
                    iterations: 0,
                    residual: f64::NAN,
                });
            }
        }
        // position lookup for the current row
        let mut pos = vec![usize::MAX; n];
        for i in 0..n {
            let (start, end) = (lu.row_ptr[i], lu.row_ptr[i + 1]);
            for k in start..end {
                pos[lu.col_idx[k]] = k;
            }
            for k in start..end {
                let j = lu.col_idx[k];
                if j >= i {
                    break;
                }
                let pivot = lu.values[diag[j]];
                let lij = lu.values[k] / pivot;
                lu.values[k] = lij;
                for kk in diag[j] + 1..lu.row_ptr[j + 1] {
                    let p = pos[lu.col_idx[kk]];
                    if p != usize::MAX {
                        lu.values[p] -= lij * lu.values[kk];
                    }
                }
            }
            for k in start..end {
                pos[lu.col_idx[k]] = usize::MAX;
            }
            if lu.values[diag[i]] == 0.0 {
                return Err(Error::SolverDiverged {
                    iterations: 0,
                    residual: f64::NAN,
                });
            }
        }
        Ok(Self { lu, diag })
    }

    /// Solves `LU z = r` in place.
    pub fn apply(&self, z: &mut [f64]) {
        let lu = &self.lu;
        for i in 0..lu.nrows {
            let mut s = z[i];
            for k in lu.row_ptr[i]..self.diag[i] {
                s -= lu.values[k] * z[lu.col_idx[k]];
            }
            z[i] = s;
        }
        for i in (0..lu.nrows).rev() {
            let mut s = z[i];
            for k in self.diag[i] + 1..lu.row_ptr[i + 1] {
                s -= lu.values[k] * z[lu.col_idx[k]];
            }
            z[i] = s / lu.values[self.diag[i]];
        }
    }
}

/// Krylov method for the preconditioned iterative path.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Krylov {
    /// BiCGStab, falling back to GMRES on breakdown.
    #[default]
    BiCgStab,
    Gmres,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    /// Relative residual target `‖b - Ax‖ ≤ tol ‖b‖`.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// GMRES restart length.
    pub restart: usize,
    pub method: Krylov,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-12,
            max_iterations: 20_000,
            restart: 80,
            method: Krylov::BiCgStab,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn residual(a: &CsrMatrix, b: &[f64], x: &[f64]) -> Vec<f64> {
    let mut r = a.mul(x);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    r
}

/// Right-preconditioned restarted GMRES. `x` holds the initial guess and
/// receives the solution. Convergence is judged on the true residual.
pub fn gmres(a: &CsrMatrix, precond: Option<&Ilu0>, b: &[f64], x: &mut [f64], opts: &SolverOptions) -> Result<SolveStats> {
    let n = a.nrows();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let target = opts.tolerance * bnorm;
    let m = opts.restart.max(1).min(n.max(1));
    let mut total = 0;
    let mut v: Vec<Vec<f64>> = vec![vec![0.0; n]; m + 1];
    let mut h = vec![vec![0.0; m]; m + 1];
    let mut cs = vec![0.0; m];
    let mut sn = vec![0.0; m];
    let mut g = vec![0.0; m + 1];
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n];

    loop {
        let r = residual(a, b, x);
        let beta = norm(&r);
        if beta <= target {
            return Ok(SolveStats {
                iterations: total,
                relative_residual: beta / bnorm,
            });
        }
        if total >= opts.max_iterations {
            return Err(Error::SolverDiverged {
                iterations: total,
                residual: beta / bnorm,
            });
        }
        for (vi, ri) in v[0].iter_mut().zip(&r) {
            *vi = ri / beta;
        }
        g.iter_mut().for_each(|gi| *gi = 0.0);
        g[0] = beta;
        let mut k_used = 0;
        for j in 0..m {
            z.copy_from_slice(&v[j]);
            if let Some(p) = precond {
                p.apply(&mut z);
            }
            a.matvec(&z, &mut w);
            // modified Gram-Schmidt
            for i in 0..=j {
                let hij = dot(&w, &v[i]);
                h[i][j] = hij;
                for (wk, vk) in w.iter_mut().zip(&v[i]) {
                    *wk -= hij * vk;
                }
            }
            let hn = norm(&w);
            h[j + 1][j] = hn;
            if hn > 0.0 {
                for (vk, wk) in v[j + 1].iter_mut().zip(&w) {
                    *vk = wk / hn;
                }
            }
            for i in 0..j {
                let t = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let denom = h[j][j].hypot(h[j + 1][j]);
            if denom == 0.0 {
                cs[j] = 1.0;
                sn[j] = 0.0;
            } else {
                cs[j] = h[j][j] / denom;
                sn[j] = h[j + 1][j] / denom;
            }
            h[j][j] = denom;
            h[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            total += 1;
            k_used = j + 1;
            // stop a little below the target so the true residual also passes
            if g[j + 1].abs() <= 0.5 * target || hn == 0.0 || total >= opts.max_iterations {
                break;
            }
        }
        // back substitution for the Krylov coefficients
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for l in i + 1..k_used {
                s -= h[i][l] * y[l];
            }
            y[i] = s / h[i][i];
        }
        z.iter_mut().for_each(|zi| *zi = 0.0);
        for (i, yi) in y.iter().enumerate() {
            for (zk, vk) in z.iter_mut().zip(&v[i]) {
                *zk += yi * vk;
            }
        }
        if let Some(p) = precond {
            p.apply(&mut z);
        }
        for (xk, zk) in x.iter_mut().zip(&z) {
            *xk += zk;
        }
    }
}

fn apply_precond(precond: Option<&Ilu0>, z: &mut [f64]) {
    if let Some(p) = precond {
        p.apply(z);
    }
}

/// Right-preconditioned BiCGStab, restarted from the true residual whenever
/// the recursive one meets the target. Returns `Ok(None)` on breakdown, with
/// `x` holding the best iterate so far.
pub fn bicgstab(a: &CsrMatrix, precond: Option<&Ilu0>, b: &[f64], x: &mut [f64], opts: &SolverOptions) -> Result<Option<SolveStats>> {
    let n = a.nrows();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(Some(SolveStats {
            iterations: 0,
            relative_residual: 0.0,
        }));
    }
    let target = opts.tolerance * bnorm;
    let mut total = 0;
    let (mut p, mut v, mut s, mut t) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let (mut ph, mut sh) = (vec![0.0; n], vec![0.0; n]);
    loop {
        let mut r = residual(a, b, x);
        let rnorm = norm(&r);
        if rnorm <= target {
            return Ok(Some(SolveStats {
                iterations: total,
                relative_residual: rnorm / bnorm,
            }));
        }
        if total >= opts.max_iterations {
            return Err(Error::SolverDiverged {
                iterations: total,
                residual: rnorm / bnorm,
            });
        }
        let r0 = r.clone();
        let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
        p.iter_mut().for_each(|e| *e = 0.0);
        v.iter_mut().for_each(|e| *e = 0.0);
        loop {
            let rho_next = dot(&r0, &r);
            if rho_next == 0.0 || omega == 0.0 {
                return Ok(None);
            }
            let beta = (rho_next / rho) * (alpha / omega);
            rho = rho_next;
            for i in 0..n {
                p[i] = r[i] + beta * (p[i] - omega * v[i]);
            }
            ph.copy_from_slice(&p);
            apply_precond(precond, &mut ph);
            a.matvec(&ph, &mut v);
            let r0v = dot(&r0, &v);
            if r0v == 0.0 {
                return Ok(None);
            }
            alpha = rho / r0v;
            for i in 0..n {
                s[i] = r[i] - alpha * v[i];
            }
            sh.copy_from_slice(&s);
            apply_precond(precond, &mut sh);
            a.matvec(&sh, &mut t);
            let tt = dot(&t, &t);
            omega = if tt == 0.0 { 0.0 } else { dot(&t, &s) / tt };
            for i in 0..n {
                x[i] += alpha * ph[i] + omega * sh[i];
                r[i] = s[i] - omega * t[i];
            }
            total += 1;
            if !x.iter().all(|v| v.is_finite()) {
                return Ok(None);
            }
            // a little below the target so the true residual also passes
            if norm(&r) <= 0.5 * target || total >= opts.max_iterations {
                break;
            }
        }
    }
}

/// Dense LU with partial pivoting; `a` is consumed.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty range");
        if a[piv][col].abs() <= 1e-14 * scale {
            return Err(Error::SolverDiverged {
                iterations: 0,
                residual: f64::INFINITY,
            });
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * b[k]).sum();
        b[i] = (b[i] - s) / a[i][i];
    }
    Ok(b)
}

/// Solves a free-vertex system in place of `x` (initial guess on entry).
pub fn solve_free(a: &CsrMatrix, precond: Option<&Ilu0>, b: &[f64], x: &mut [f64], opts: &SolverOptions) -> Result<SolveStats> {
    let n = a.nrows();
    if n == 0 {
        return Ok(SolveStats {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    if n <= DENSE_LIMIT && precond.is_none() {
        let sol = dense_solve(a.to_dense(), b.to_vec())?;
        x.copy_from_slice(&sol);
        let bnorm = norm(b);
        let rel = if bnorm == 0.0 { 0.0 } else { norm(&residual(a, b, x)) / bnorm };
        if rel > opts.tolerance {
            return Err(Error::SolverDiverged {
                iterations: 1,
                residual: rel,
            });
        }
        return Ok(SolveStats {
            iterations: 1,
            relative_residual: rel,
        });
    }
    let owned;
    let p = match precond {
        Some(p) => p,
        None => {
            owned = Ilu0::new(a)?;
            &owned
        }
    };
    if opts.method == Krylov::BiCgStab {
        let start = x.to_vec();
        if let Some(stats) = bicgstab(a, Some(p), b, x, opts)? {
            return Ok(stats);
        }
        x.copy_from_slice(&start);
    }
    gmres(a, Some(p), b, x, opts)
}

/// Solves the assembled system and merges the Dirichlet values into a full
/// nodal field.
pub fn solve(system: &SparseSystem, opts: &SolverOptions) -> Result<NodalField> {
    let mut x = vec![0.0; system.matrix.nrows()];
    solve_free(&system.matrix, None, &system.rhs, &mut x, opts)?;
    Ok(system.expand(&x))
}

/// As [`solve`], starting the iteration from the interior values of `guess`.
pub fn solve_from(system: &SparseSystem, guess: &NodalField, opts: &SolverOptions) -> Result<NodalField> {
    let mut x = system.restrict(guess);
    solve_free(&system.matrix, None, &system.rhs, &mut x, opts)?;
    Ok(system.expand(&x))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiag(n: usize, lo: f64, d: f64, up: f64) -> CsrMatrix {
        let rows = (0..n)
            .map(|i| {
                let mut r = vec![(i, d)];
                if i > 0 {
                    r.push((i - 1, lo));
                }
                if i + 1 < n {
                    r.push((i + 1, up));
                }
                r
            })
            .collect();
        CsrMatrix::from_row_entries(n, rows)
    }

    #[test]
    fn csr_sums_duplicates() {
        let m = CsrMatrix::from_row_entries(2, vec![vec![(1, 1.0), (0, 2.0), (1, 3.0)], vec![]]);
        assert_eq!(m.get(0, 1), 4.0);
        assert_eq!(m.get(0, 0), 2.0);
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.mul(&[1.0, 1.0]), vec![6.0, 0.0]);
    }

    #[test]
    fn ilu0_is_exact_for_tridiagonal() {
        let a = tridiag(50, -1.3, 2.5, -0.7);
        let ilu = Ilu0::new(&a).unwrap();
        let b: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let mut z = b.clone();
        ilu.apply(&mut z);
        let r = residual(&a, &b, &z);
        assert!(norm(&r) < 1e-13);
    }

    #[test]
    fn gmres_nonsymmetric() {
        let n = 400;
        let a = tridiag(n, -1.6, 2.2, -0.4);
        let b: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64 * 0.1).cos()).collect();
        let opts = SolverOptions {
            restart: 10,
            ..Default::default()
        };
        let mut x = vec![0.0; n];
        let stats = gmres(&a, None, &b, &mut x, &opts).unwrap();
        assert!(stats.relative_residual <= 1e-12);
        assert!(norm(&residual(&a, &b, &x)) <= 1e-12 * norm(&b));
    }

    #[test]
    fn gmres_reports_non_convergence() {
        let n = 200;
        let a = tridiag(n, -1.0, 2.0, -1.0);
        let b = vec![1.0; n];
        let opts = SolverOptions {
            tolerance: 1e-14,
            max_iterations: 5,
            restart: 5,
            method: Krylov::Gmres,
        };
        let mut x = vec![0.0; n];
        match gmres(&a, None, &b, &mut x, &opts) {
            Err(Error::SolverDiverged { iterations, residual }) => {
                assert_eq!(iterations, 5);
                assert!(residual > 1e-14);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn bicgstab_matches_gmres() {
        let n = 300;
        let a = tridiag(n, -1.9, 2.4, -0.3);
        let ilu = Ilu0::new(&tridiag(n, -1.9, 2.4, 0.0)).unwrap();
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let opts = SolverOptions::default();
        let mut x = vec![0.0; n];
        let stats = bicgstab(&a, Some(&ilu), &b, &mut x, &opts).unwrap().expect("no breakdown");
        assert!(norm(&residual(&a, &b, &x)) <= 1e-12 * norm(&b));
        let mut y = vec![0.0; n];
        gmres(&a, Some(&ilu), &b, &mut y, &opts).unwrap();
        assert!(x.iter().zip(&y).all(|(p, q)| (p - q).abs() < 1e-9));
        assert!(stats.iterations > 0);
    }

    #[test]
    fn bicgstab_warm_start_at_solution() {
        let a = tridiag(80, -1.0, 3.0, -1.0);
        let b = vec![1.0; 80];
        let mut x = vec![0.0; 80];
        solve_free(&a, None, &b, &mut x, &SolverOptions::default()).unwrap();
        let stats = bicgstab(&a, None, &b, &mut x, &SolverOptions::default()).unwrap().unwrap();
        assert_eq!(stats.iterations, 0);
    }

    #[test]
    fn one_by_one_system() {
        let a = CsrMatrix::from_row_entries(1, vec![vec![(0, 4.0)]]);
        let mut x = vec![0.0];
        solve_free(&a, None, &[2.0], &mut x, &SolverOptions::default()).unwrap();
        assert_eq!(x, vec![0.5]);
    }

    #[test]
    fn dense_solve_pivots() {
        let x = dense_solve(vec![vec![0.0, 1.0], vec![1.0, 1.0]], vec![2.0, 3.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15);
        assert!(dense_solve(vec![vec![1.0, 1.0], vec![1.0, 1.0]], vec![1.0, 1.0]).is_err());
    }
}
