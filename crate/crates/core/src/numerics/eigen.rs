//! Symmetric eigensolver: Householder reduction to tridiagonal form followed by
//! the implicit QL iteration (the EISPACK `tql2` scheme). Single eigenvectors of
//! isolated eigenvalues are recovered by tridiagonal inverse iteration and a
//! back-transformation through the stored reflectors, which avoids forming the
//! full orthogonal factor on the hot path.

use super::matrix::{axpy, dot, normalize, Matrix, SymMatrix};
use crate::error::{Error, Result};

const MAX_QL_SWEEPS: usize = 64;

/// Eigenvalues in ascending order with matching orthonormal eigenvectors
/// stored as the columns of `vectors`.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn vector(&self, i: usize) -> Vec<f64> {
        self.vectors.column(i)
    }

    /// `V diag(values) V'`.
    pub fn reconstruct(&self) -> SymMatrix {
        let n = self.dim();
        let v = &self.vectors;
        SymMatrix::from_fn(n, |i, j| {
            (0..n).map(|k| v[(i, k)] * self.values[k] * v[(j, k)]).sum()
        })
    }
}

struct Reflector {
    v: Vec<f64>,
    beta: f64,
}

/// Orthogonal similarity `A = Q T Q'` with `T` symmetric tridiagonal.
pub struct Tridiagonal {
    diag: Vec<f64>,
    /// `off[i] = T[i + 1][i]`.
    off: Vec<f64>,
    /// Reflector `k` acts on coordinates `k + 1..n`.
    reflectors: Vec<Option<Reflector>>,
}

impl Tridiagonal {
    pub fn new(a: &SymMatrix) -> Result<Self> {
        if !a.is_finite() {
            return Err(Error::invalid("matrix has non-finite entries"));
        }
        let n = a.dim();
        let mut w = a.as_matrix().as_slice().to_vec();
        let mut diag = vec![0.0; n];
        let mut off = vec![0.0; n.saturating_sub(1)];
        let mut reflectors = Vec::with_capacity(n.saturating_sub(2));
        let mut p = vec![0.0; n];

        for k in 0..n.saturating_sub(2) {
            let m = n - k - 1;
            diag[k] = w[k * n + k];
            let x = &w[k * n + k + 1..k * n + n];
            let tail = dot(&x[1..], &x[1..]);
            let x0 = x[0];
            if tail == 0.0 {
                off[k] = x0;
                reflectors.push(None);
                continue;
            }
            let xnorm = (x0 * x0 + tail).sqrt();
            let alpha = if x0 >= 0.0 { -xnorm } else { xnorm };
            let mut v = x.to_vec();
            v[0] -= alpha;
            let beta = 2.0 / dot(&v, &v);
            off[k] = alpha;

            let base = (k + 1) * n + (k + 1);
            for i in 0..m {
                let row = &w[base + i * n..base + i * n + m];
                p[i] = beta * dot(row, &v);
            }
            let kk = 0.5 * beta * dot(&v, &p[..m]);
            for i in 0..m {
                p[i] -= kk * v[i];
            }
            for i in 0..m {
                let row = &mut w[base + i * n..base + i * n + m];
                let (vi, wi) = (v[i], p[i]);
                for j in 0..m {
                    row[j] -= vi * p[j] + wi * v[j];
                }
            }
            reflectors.push(Some(Reflector { v, beta }));
        }
        if n >= 2 {
            diag[n - 2] = w[(n - 2) * n + (n - 2)];
            off[n - 2] = w[(n - 1) * n + (n - 2)];
        }
        if n >= 1 {
            diag[n - 1] = w[(n - 1) * n + (n - 1)];
        }
        Ok(Self { diag, off, reflectors })
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// All eigenvalues, ascending.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        let mut d = self.diag.clone();
        let mut e = self.ql_offdiag();
        implicit_ql(&mut d, &mut e, None)?;
        d.sort_by(f64::total_cmp);
        Ok(d)
    }

    fn ql_offdiag(&self) -> Vec<f64> {
        let mut e = self.off.clone();
        e.push(0.0);
        e
    }

    fn norm_bound(&self) -> f64 {
        let n = self.dim();
        (0..n)
            .map(|i| {
                self.diag[i].abs()
                    + if i > 0 { self.off[i - 1].abs() } else { 0.0 }
                    + if i + 1 < n { self.off[i].abs() } else { 0.0 }
            })
            .fold(0.0, f64::max)
    }

    /// Unit eigenvector of the original matrix for a (simple) eigenvalue
    /// `lambda`, by inverse iteration on `T` and back-transformation.
    pub fn eigenvector(&self, lambda: f64) -> Vec<f64> {
        let n = self.dim();
        if n == 1 {
            return vec![1.0];
        }
        let tiny = f64::EPSILON * self.norm_bound().max(f64::MIN_POSITIVE);
        // Deterministic start vector with no special alignment.
        let mut y: Vec<f64> = (0..n).map(|i| 1.0 + 0.37 * ((i * 7919) % 101) as f64 / 101.0).collect();
        normalize(&mut y);
        for _ in 0..3 {
            y = shifted_tridiag_solve(&self.diag, &self.off, lambda, &y, tiny);
            if normalize(&mut y) == 0.0 || y.iter().any(|v| !v.is_finite()) {
                y = vec![0.0; n];
                y[0] = 1.0;
            }
        }
        self.back_transform(&mut y);
        normalize(&mut y);
        y
    }

    /// `x <- Q x`.
    pub fn back_transform(&self, x: &mut [f64]) {
        for (k, r) in self.reflectors.iter().enumerate().rev() {
            if let Some(r) = r {
                let sub = &mut x[k + 1..];
                let s = r.beta * dot(&r.v, sub);
                axpy(-s, &r.v, sub);
            }
        }
    }

    /// Explicit `Q'` (rows are the columns of `Q`).
    fn q_transpose(&self) -> Matrix {
        let n = self.dim();
        let mut qt = Matrix::identity(n);
        let mut tmp = vec![0.0; n];
        for (k, r) in self.reflectors.iter().enumerate() {
            let Some(r) = r else { continue };
            // rows k+1.. of qt <- H rows
            tmp.iter_mut().for_each(|t| *t = 0.0);
            for (i, &vi) in r.v.iter().enumerate() {
                axpy(vi, qt.row(k + 1 + i), &mut tmp);
            }
            for (i, &vi) in r.v.iter().enumerate() {
                axpy(-r.beta * vi, &tmp, qt.row_mut(k + 1 + i));
            }
        }
        qt
    }
}

/// Implicit QL on a symmetric tridiagonal matrix. `e[i]` couples `i` and
/// `i + 1`; `e[n - 1]` must be zero. When `zt` is given its rows are rotated
/// alongside, so rows end up as eigenvectors.
fn implicit_ql(d: &mut [f64], e: &mut [f64], mut zt: Option<&mut Matrix>) -> Result<()> {
    let n = d.len();
    if n == 0 {
        return Ok(());
    }
    let eps = f64::EPSILON;
    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut sweeps = 0;
            loop {
                sweeps += 1;
                if sweeps > MAX_QL_SWEEPS {
                    return Err(Error::numerical("implicit QL did not converge"));
                }
                let g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let h = g - d[l];
                for di in d.iter_mut().take(n).skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    let h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    if let Some(z) = zt.as_deref_mut() {
                        rotate_rows(z, i, c, s);
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

/// Rows `i`, `i + 1` of `z`: `(z_i, z_{i+1}) <- (c z_i - s z_{i+1}, s z_i + c z_{i+1})`.
fn rotate_rows(z: &mut Matrix, i: usize, c: f64, s: f64) {
    let n = z.cols();
    let data = z.as_mut_slice();
    let (head, tail) = data.split_at_mut((i + 1) * n);
    let zi = &mut head[i * n..];
    let zj = &mut tail[..n];
    for k in 0..n {
        let h = zj[k];
        zj[k] = s * zi[k] + c * h;
        zi[k] = c * zi[k] - s * h;
    }
}

/// Solves `(T - sigma I) x = b` by Gaussian elimination with partial pivoting;
/// zero pivots are replaced by `tiny`.
fn shifted_tridiag_solve(d: &[f64], off: &[f64], sigma: f64, b: &[f64], tiny: f64) -> Vec<f64> {
    let n = d.len();
    let mut main: Vec<f64> = d.iter().map(|x| x - sigma).collect();
    let mut sup: Vec<f64> = off.to_vec();
    sup.push(0.0);
    let mut sup2 = vec![0.0; n];
    let mut rhs = b.to_vec();
    for i in 0..n - 1 {
        let sub = off[i];
        if main[i].abs() >= sub.abs() {
            if main[i] == 0.0 {
                main[i] = tiny;
            }
            let l = sub / main[i];
            main[i + 1] -= l * sup[i];
            rhs[i + 1] -= l * rhs[i];
        } else {
            let l = main[i] / sub;
            let next_main = main[i + 1];
            let next_sup = sup[i + 1];
            main[i] = sub;
            main[i + 1] = sup[i] - l * next_main;
            sup[i] = next_main;
            sup2[i] = next_sup;
            sup[i + 1] = -l * next_sup;
            rhs.swap(i, i + 1);
            rhs[i + 1] -= l * rhs[i];
        }
    }
    if main[n - 1] == 0.0 {
        main[n - 1] = tiny;
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut acc = rhs[i];
        if i + 1 < n {
            acc -= sup[i] * x[i + 1];
        }
        if i + 2 < n {
            acc -= sup2[i] * x[i + 2];
        }
        x[i] = acc / main[i];
    }
    x
}

/// Full eigendecomposition of a symmetric matrix, eigenvalues ascending.
pub fn sym_eig(a: &SymMatrix) -> Result<EigenDecomposition> {
    let n = a.dim();
    let tri = Tridiagonal::new(a)?;
    let mut zt = tri.q_transpose();
    let mut d = tri.diag.clone();
    let mut e = tri.ql_offdiag();
    implicit_ql(&mut d, &mut e, Some(&mut zt))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[i].total_cmp(&d[j]));
    let values = order.iter().map(|&i| d[i]).collect();
    let vectors = Matrix::from_fn(n, n, |i, j| zt[(order[j], i)]);
    Ok(EigenDecomposition { values, vectors })
}

/// Eigenvalues only, ascending.
pub fn sym_eigenvalues(a: &SymMatrix) -> Result<Vec<f64>> {
    Tridiagonal::new(a)?.eigenvalues()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::{gaussian_matrix, Seed};

    fn random_sym(n: usize, seed: u64) -> SymMatrix {
        let g = gaussian_matrix(n, n, 1.0, Seed(seed));
        SymMatrix::symmetrize(&g).unwrap()
    }

    #[test]
    fn identity_has_unit_spectrum() {
        let e = sym_eig(&SymMatrix::identity(3)).unwrap();
        assert_eq!(e.values, vec![1.0, 1.0, 1.0]);
        let vtv = e.vectors.t_matmul(&e.vectors).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((vtv[(i, j)] - target).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn diagonal_is_sorted_with_permuted_basis() {
        let e = sym_eig(&SymMatrix::diagonal(&[3.0, 1.0, 2.0])).unwrap();
        assert_eq!(e.values, vec![1.0, 2.0, 3.0]);
        let expected_axis = [1usize, 2, 0];
        for (col, &axis) in expected_axis.iter().enumerate() {
            assert!((e.vectors[(axis, col)].abs() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn random_reconstruction_seed_7() {
        let a = random_sym(8, 7);
        let e = sym_eig(&a).unwrap();
        let r = e.reconstruct();
        let mut diff = a.clone();
        diff.add_scaled(-1.0, &r).unwrap();
        assert!(diff.frobenius_norm() <= 1e-9 * a.frobenius_norm());
    }

    #[test]
    fn residuals_orthonormality_and_trace() {
        for &(n, seed) in &[(1usize, 1u64), (2, 2), (5, 3), (40, 4), (120, 5)] {
            let a = random_sym(n, seed);
            let e = sym_eig(&a).unwrap();
            let scale = a.frobenius_norm().max(1.0);
            for k in 0..n {
                let v = e.vector(k);
                let av = a.matvec(&v);
                let res: f64 = av.iter().zip(&v).map(|(x, y)| (x - e.values[k] * y).powi(2)).sum::<f64>().sqrt();
                assert!(res <= 1e-10 * scale, "n={n} k={k} residual {res}");
            }
            let vtv = e.vectors.t_matmul(&e.vectors).unwrap();
            for i in 0..n {
                for j in 0..n {
                    let target = if i == j { 1.0 } else { 0.0 };
                    assert!((vtv[(i, j)] - target).abs() < 1e-10);
                }
            }
            assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
            let tr: f64 = e.values.iter().sum();
            assert!((tr - a.trace()).abs() <= 1e-10 * scale);
            let only = sym_eigenvalues(&a).unwrap();
            for (x, y) in only.iter().zip(&e.values) {
                assert!((x - y).abs() <= 1e-11 * scale);
            }
        }
    }

    #[test]
    fn inverse_iteration_matches_full_decomposition() {
        let a = random_sym(60, 11);
        let e = sym_eig(&a).unwrap();
        let tri = Tridiagonal::new(&a).unwrap();
        for &k in &[0usize, 30, 59] {
            let v = tri.eigenvector(e.values[k]);
            let overlap = dot(&v, &e.vector(k)).abs();
            assert!((overlap - 1.0).abs() < 1e-9, "k={k} overlap={overlap}");
        }
    }

    #[test]
    fn rejects_non_finite() {
        let mut m = Matrix::identity(2);
        m[(0, 1)] = f64::NAN;
        m[(1, 0)] = f64::NAN;
        let s = SymMatrix::symmetrize(&m).unwrap();
        assert!(matches!(sym_eig(&s), Err(Error::InvalidInput(_))));
    }
}
