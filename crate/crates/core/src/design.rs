//! Balanced classification designs.
//!
//! A design is described lattice-first: each random effect `r = 1..=k` has a
//! grouping of the `n` units (the incidence matrix `U_r` has a single 1 per
//! row), and the subspaces `S_r = col(U_r)` are partially ordered by
//! inclusion. Stratum `r` is the orthogonal complement in `S_r` of every
//! strictly smaller subspace; its orthonormal basis is produced by
//! Gram-Schmidt on the columns of `U_r`. Stratum 0 is the intercept `1_n`.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::{axpy, dot, Matrix, SymMatrix};

const RANK_TOL: f64 = 1e-8;
const SPARSE_DROP: f64 = 1e-14;

/// The built-in balanced designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DesignKind {
    /// `I` groups of `J` units.
    Oneway {
        #[serde(rename = "I")]
        i: usize,
        #[serde(rename = "J")]
        j: usize,
    },
    /// `I` groups, `J` subgroups per group, `K` units per subgroup.
    NestedTwoway {
        #[serde(rename = "I")]
        i: usize,
        #[serde(rename = "J")]
        j: usize,
        #[serde(rename = "K")]
        k: usize,
    },
    /// `I` replicates crossing `J` sires with `K` dams, `L` offspring per cross.
    CrossedTwoway {
        #[serde(rename = "I")]
        i: usize,
        #[serde(rename = "J")]
        j: usize,
        #[serde(rename = "K")]
        k: usize,
        #[serde(rename = "L")]
        l: usize,
    },
}

/// Sparse column of a stratum basis.
#[derive(Debug, Clone)]
pub struct SparseVec {
    pub idx: Vec<usize>,
    pub val: Vec<f64>,
}

impl SparseVec {
    fn from_dense(x: &[f64]) -> Self {
        let mut idx = Vec::new();
        let mut val = Vec::new();
        for (i, &v) in x.iter().enumerate() {
            if v.abs() > SPARSE_DROP {
                idx.push(i);
                val.push(v);
            }
        }
        Self { idx, val }
    }

    pub fn dot_dense(&self, x: &[f64]) -> f64 {
        self.idx.iter().zip(&self.val).map(|(&i, &v)| v * x[i]).sum()
    }

    pub fn to_dense(&self, n: usize) -> Vec<f64> {
        let mut x = vec![0.0; n];
        for (&i, &v) in self.idx.iter().zip(&self.val) {
            x[i] = v;
        }
        x
    }
}

#[derive(Debug, Clone)]
pub struct DesignSpec {
    pub kind: DesignKind,
    pub n: usize,
    pub k: usize,
    /// `m[r - 1] = m_r`, the number of levels of effect `r`.
    pub m: Vec<usize>,
    /// `c[r - 1] = n / m_r`.
    pub c: Vec<f64>,
    /// `d[r] = dim` of stratum `r`, for `r = 0..=k`.
    pub d: Vec<usize>,
    /// `lattice[s][r]` is true when `S_s` is contained in `S_r` (`s, r = 0..=k`).
    pub lattice: Vec<Vec<bool>>,
    /// `groups[r - 1][u]` is the level of effect `r` for unit `u`.
    pub groups: Vec<Vec<usize>>,
    /// Orthonormal basis of each stratum `r = 0..=k`.
    pub basis: Vec<Vec<SparseVec>>,
}

/// Per-stratum mean-square matrices `MS_1..MS_k`.
#[derive(Debug, Clone)]
pub struct MeanSquares {
    pub ms: Vec<SymMatrix>,
}

impl MeanSquares {
    pub fn k(&self) -> usize {
        self.ms.len()
    }

    pub fn p(&self) -> usize {
        self.ms.first().map_or(0, SymMatrix::dim)
    }
}

/// Weights `a_1..a_k` on the mean squares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CoeffVector(pub Vec<f64>);

impl CoeffVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl DesignKind {
    fn validate(&self) -> Result<()> {
        let check = |name: &str, v: usize| {
            if v < 2 {
                Err(Error::InvalidDesign(format!("{name} = {v} but at least 2 is required")))
            } else {
                Ok(())
            }
        };
        match *self {
            DesignKind::Oneway { i, j } => {
                check("I", i)?;
                check("J", j)
            }
            DesignKind::NestedTwoway { i, j, k } => {
                check("I", i)?;
                check("J", j)?;
                check("K", k)
            }
            DesignKind::CrossedTwoway { i, j, k, l } => {
                check("I", i)?;
                check("J", j)?;
                check("K", k)?;
                check("L", l)
            }
        }
    }

    /// Unit-to-level maps for effects `1..=k` (units in lexicographic order,
    /// last index fastest) and the inclusion lattice over `0..=k`.
    fn structure(&self) -> (usize, Vec<Vec<usize>>, Vec<(usize, usize)>) {
        match *self {
            DesignKind::Oneway { i, j } => {
                let n = i * j;
                let g1 = (0..n).map(|u| u / j).collect();
                let g2 = (0..n).collect();
                (n, vec![g1, g2], vec![(1, 2)])
            }
            DesignKind::NestedTwoway { i, j, k } => {
                let n = i * j * k;
                let g1 = (0..n).map(|u| u / (j * k)).collect();
                let g2 = (0..n).map(|u| u / k).collect();
                let g3 = (0..n).collect();
                (n, vec![g1, g2, g3], vec![(1, 2), (2, 3)])
            }
            DesignKind::CrossedTwoway { i, j, k, l } => {
                let n = i * j * k * l;
                let idx = |u: usize| {
                    let ll = u % l;
                    let kk = (u / l) % k;
                    let jj = (u / (l * k)) % j;
                    let ii = u / (l * k * j);
                    (ii, jj, kk, ll)
                };
                let g1 = (0..n).map(|u| idx(u).0).collect();
                let g2 = (0..n).map(|u| {
                    let (a, b, _, _) = idx(u);
                    a * j + b
                }).collect();
                let g3 = (0..n).map(|u| {
                    let (a, _, c, _) = idx(u);
                    a * k + c
                }).collect();
                let g4 = (0..n).map(|u| u / l).collect();
                let g5 = (0..n).collect();
                (n, vec![g1, g2, g3, g4, g5], vec![(1, 2), (1, 3), (2, 4), (3, 4), (4, 5)])
            }
        }
    }

    pub fn hash_hex(&self) -> String {
        let json = serde_json::to_string(self).expect("design kind serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl DesignSpec {
    pub fn build(kind: DesignKind) -> Result<Self> {
        kind.validate()?;
        let (n, groups, covers) = kind.structure();
        let k = groups.len();

        let mut lattice = vec![vec![false; k + 1]; k + 1];
        for (r, row) in lattice.iter_mut().enumerate() {
            row[r] = true;
        }
        lattice[0].fill(true);
        for &(s, r) in &covers {
            lattice[s][r] = true;
        }
        // transitive closure
        for via in 0..=k {
            for s in 0..=k {
                for r in 0..=k {
                    if lattice[s][via] && lattice[via][r] {
                        lattice[s][r] = true;
                    }
                }
            }
        }

        let m: Vec<usize> = groups.iter().map(|g| g.iter().max().map_or(0, |x| x + 1)).collect();
        let c: Vec<f64> = m.iter().map(|&mr| n as f64 / mr as f64).collect();

        // Strata in order of increasing subspace dimension, a linear extension
        // of the inclusion order.
        let mut order: Vec<usize> = (1..=k).collect();
        order.sort_by_key(|&r| m[r - 1]);

        let mut basis: Vec<Vec<SparseVec>> = vec![Vec::new(); k + 1];
        let inv = 1.0 / (n as f64).sqrt();
        basis[0].push(SparseVec { idx: (0..n).collect(), val: vec![inv; n] });

        for &r in &order {
            let below: Vec<usize> = (0..=k).filter(|&s| s != r && lattice[s][r]).collect();
            let mut accepted: Vec<SparseVec> = Vec::new();
            let mut members: Vec<Vec<usize>> = vec![Vec::new(); m[r - 1]];
            for (u, &g) in groups[r - 1].iter().enumerate() {
                members[g].push(u);
            }
            for unit_set in &members {
                let mut x = vec![0.0; n];
                for &u in unit_set {
                    x[u] = 1.0;
                }
                let start = (unit_set.len() as f64).sqrt();
                // Two passes of modified Gram-Schmidt.
                for _ in 0..2 {
                    for s in &below {
                        for b in &basis[*s] {
                            project_out(&mut x, b);
                        }
                    }
                    for b in &accepted {
                        project_out(&mut x, b);
                    }
                }
                let nrm = dot(&x, &x).sqrt();
                if nrm > RANK_TOL * start {
                    x.iter_mut().for_each(|v| *v /= nrm);
                    accepted.push(SparseVec::from_dense(&x));
                }
            }
            basis[r] = accepted;
        }

        let d: Vec<usize> = basis.iter().map(Vec::len).collect();
        if d.iter().sum::<usize>() != n {
            return Err(Error::InvalidDesign(format!(
                "strata dimensions {d:?} do not sum to n = {n}"
            )));
        }
        if d.contains(&0) {
            return Err(Error::InvalidDesign(format!("empty stratum in {d:?}")));
        }
        Ok(Self { kind, n, k, m, c, d, lattice, groups, basis })
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let kind: DesignKind = serde_json::from_str(s)?;
        Self::build(kind)
    }

    /// `s ⪯ r` for `s, r` in `0..=k`.
    pub fn precedes(&self, s: usize, r: usize) -> bool {
        self.lattice[s][r]
    }

    /// Dense `n x d_r` basis of stratum `r`.
    pub fn basis_matrix(&self, r: usize) -> Matrix {
        let cols: Vec<Vec<f64>> = self.basis[r].iter().map(|b| b.to_dense(self.n)).collect();
        Matrix::from_columns(&cols).expect("equal-length columns")
    }

    /// Dense incidence matrix `U_r`, `r = 1..=k`.
    pub fn incidence(&self, r: usize) -> Matrix {
        let g = &self.groups[r - 1];
        Matrix::from_fn(self.n, self.m[r - 1], |u, col| if g[u] == col { 1.0 } else { 0.0 })
    }

    /// Dense projection `pi_r` onto stratum `r`.
    pub fn projection(&self, r: usize) -> SymMatrix {
        let v = self.basis_matrix(r);
        SymMatrix::from_upper(v.matmul(&v.transpose()).expect("conformal"))
    }

    /// Dense `B(a) = sum_r a_r pi_r / d_r`.
    pub fn estimation_matrix(&self, a: &CoeffVector) -> Result<SymMatrix> {
        self.check_coeffs(a)?;
        let mut b = SymMatrix::zeros(self.n);
        for r in 1..=self.k {
            if a.0[r - 1] != 0.0 {
                b.add_scaled(a.0[r - 1] / self.d[r] as f64, &self.projection(r))?;
            }
        }
        Ok(b)
    }

    /// `U_r' V_t` (`m_r x d_t`), computed from the sparse basis.
    pub fn incidence_times_basis(&self, r: usize, t: usize) -> Matrix {
        let g = &self.groups[r - 1];
        let mut out = Matrix::zeros(self.m[r - 1], self.d[t]);
        for (col, b) in self.basis[t].iter().enumerate() {
            for (&u, &v) in b.idx.iter().zip(&b.val) {
                out[(g[u], col)] += v;
            }
        }
        out
    }

    pub(crate) fn check_coeffs(&self, a: &CoeffVector) -> Result<()> {
        if a.len() != self.k {
            return Err(Error::shape(format!("coefficient vector has length {} but k = {}", a.len(), self.k)));
        }
        if a.0.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite coefficient"));
        }
        Ok(())
    }

    /// Matrix `H_rs = 1{s ⪯ r} c_r` over `r, s = 1..=k`.
    pub fn h_matrix(&self) -> Matrix {
        Matrix::from_fn(self.k, self.k, |r, s| if self.precedes(s + 1, r + 1) { self.c[r] } else { 0.0 })
    }

    /// Coefficients of the unbiased MANOVA estimator of `Sigma_r`: column `r`
    /// of `H^{-1}`, obtained by Moebius inversion over the lattice.
    pub fn manova_coefficients(&self, r: usize) -> Result<CoeffVector> {
        if r == 0 || r > self.k {
            return Err(Error::invalid(format!("component {r} outside 1..={}", self.k)));
        }
        let mut order: Vec<usize> = (1..=self.k).collect();
        order.sort_by_key(|&t| self.m[t - 1]);
        let mut a = vec![0.0; self.k];
        for &t in &order {
            let ct = self.c[t - 1];
            if !(ct > 0.0) {
                return Err(Error::numerical("singular H: non-positive group size"));
            }
            let own = if t == r { 1.0 / ct } else { 0.0 };
            let lower: f64 = (1..=self.k).filter(|&s| s != t && self.precedes(s, t)).map(|s| a[s - 1]).sum();
            a[t - 1] = own - lower;
        }
        Ok(CoeffVector(a))
    }

    /// `V_r' Y` (`d_r x p`) for a row-major `n x p` data matrix.
    pub fn stratum_coordinates(&self, y: &Matrix, r: usize) -> Result<Matrix> {
        if y.rows() != self.n {
            return Err(Error::shape(format!("data has {} rows but the design has n = {}", y.rows(), self.n)));
        }
        let p = y.cols();
        let mut out = Matrix::zeros(self.d[r], p);
        for (col, b) in self.basis[r].iter().enumerate() {
            let row = out.row_mut(col);
            for (&u, &v) in b.idx.iter().zip(&b.val) {
                axpy(v, y.row(u), row);
            }
        }
        Ok(out)
    }

    /// Canonical mean squares `MS_r = Y' (pi_r / d_r) Y`, `r = 1..=k`.
    pub fn mean_squares(&self, y: &Matrix) -> Result<MeanSquares> {
        let mut ms = Vec::with_capacity(self.k);
        for r in 1..=self.k {
            let w = self.stratum_coordinates(y, r)?;
            ms.push(w.gram().scaled(1.0 / self.d[r] as f64));
        }
        Ok(MeanSquares { ms })
    }
}

fn project_out(x: &mut [f64], b: &SparseVec) {
    let s = b.dot_dense(x);
    if s != 0.0 {
        for (&i, &v) in b.idx.iter().zip(&b.val) {
            x[i] -= s * v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covmodel::sigma_hat;
    use crate::numerics::{gaussian_matrix, sym_eigenvalues, Seed};

    fn oneway(i: usize, j: usize) -> DesignSpec {
        DesignSpec::build(DesignKind::Oneway { i, j }).unwrap()
    }

    #[test]
    fn oneway_dimensions() {
        let d = oneway(3, 2);
        assert_eq!(d.n, 6);
        assert_eq!(d.m, vec![3, 6]);
        assert_eq!(d.c, vec![2.0, 1.0]);
        assert_eq!(d.d, vec![1, 2, 3]);
        let big = oneway(300, 2);
        assert_eq!(big.n, 600);
        assert_eq!(big.d, vec![1, 299, 300]);
    }

    #[test]
    fn nested_and_crossed_dimensions() {
        let d = DesignSpec::build(DesignKind::NestedTwoway { i: 2, j: 2, k: 2 }).unwrap();
        assert_eq!(d.n, 8);
        assert_eq!(d.c, vec![4.0, 2.0, 1.0]);
        assert_eq!(d.d, vec![1, 1, 2, 4]);
        let (i, j, k, l) = (3, 2, 3, 2);
        let x = DesignSpec::build(DesignKind::CrossedTwoway { i, j, k, l }).unwrap();
        assert_eq!(x.d, vec![1, i - 1, i * j - i, i * k - i, i * (j - 1) * (k - 1), i * j * k * (l - 1)]);
        assert!(x.precedes(2, 4) && x.precedes(3, 4) && !x.precedes(2, 3) && x.precedes(1, 5));
    }

    #[test]
    fn rejects_small_sizes() {
        assert!(matches!(DesignSpec::build(DesignKind::Oneway { i: 1, j: 2 }), Err(Error::InvalidDesign(_))));
        assert!(matches!(DesignSpec::build(DesignKind::NestedTwoway { i: 2, j: 1, k: 2 }), Err(Error::InvalidDesign(_))));
    }

    #[test]
    fn projections_are_orthogonal_and_complete() {
        for kind in [
            DesignKind::Oneway { i: 4, j: 3 },
            DesignKind::NestedTwoway { i: 3, j: 2, k: 2 },
            DesignKind::CrossedTwoway { i: 2, j: 2, k: 3, l: 2 },
        ] {
            let d = DesignSpec::build(kind).unwrap();
            let pis: Vec<SymMatrix> = (0..=d.k).map(|r| d.projection(r)).collect();
            let mut total = SymMatrix::zeros(d.n);
            for (r, pr) in pis.iter().enumerate() {
                total.add_scaled(1.0, pr).unwrap();
                for (s, ps) in pis.iter().enumerate().skip(r + 1) {
                    let prod = pr.as_matrix().matmul(ps.as_matrix()).unwrap();
                    assert!(prod.max_abs() < 1e-10, "pi_{r} pi_{s} != 0");
                }
            }
            let mut diff = total;
            diff.add_scaled(-1.0, &SymMatrix::identity(d.n)).unwrap();
            assert!(diff.as_matrix().max_abs() < 1e-10);
            for r in 1..=d.k {
                let u = d.incidence(r);
                let mut e = u.t_matmul(&u).unwrap();
                let mut target = Matrix::identity(d.m[r - 1]);
                target.scale(d.c[r - 1]);
                e.add_scaled(-1.0, &target).unwrap();
                assert!(e.max_abs() < 1e-10);
            }
        }
    }

    #[test]
    fn manova_columns_match_closed_forms() {
        let d = oneway(5, 3);
        assert_eq!(d.manova_coefficients(1).unwrap().0, vec![1.0 / 3.0, -1.0 / 3.0]);
        assert_eq!(d.manova_coefficients(2).unwrap().0, vec![0.0, 1.0]);
        let nd = DesignSpec::build(DesignKind::NestedTwoway { i: 3, j: 2, k: 4 }).unwrap();
        assert_eq!(nd.manova_coefficients(1).unwrap().0, vec![1.0 / 8.0, -1.0 / 8.0, 0.0]);
        assert!(d.manova_coefficients(0).is_err());
        assert!(d.manova_coefficients(3).is_err());
    }

    #[test]
    fn unbiasedness_trace_conditions() {
        for kind in [
            DesignKind::Oneway { i: 4, j: 3 },
            DesignKind::NestedTwoway { i: 3, j: 2, k: 2 },
            DesignKind::CrossedTwoway { i: 2, j: 2, k: 2, l: 2 },
        ] {
            let d = DesignSpec::build(kind).unwrap();
            for r in 1..=d.k {
                let a = d.manova_coefficients(r).unwrap();
                let b = d.estimation_matrix(&a).unwrap();
                for s in 1..=d.k {
                    let u = d.incidence(s);
                    let tr = u.t_matmul(&b.as_matrix().matmul(&u).unwrap()).unwrap();
                    let t: f64 = (0..u.cols()).map(|i| tr[(i, i)]).sum();
                    let target = if s == r { 1.0 } else { 0.0 };
                    assert!((t - target).abs() < 1e-12, "{kind:?} r={r} s={s} trace={t}");
                }
                let bound = a.0.iter().enumerate().map(|(i, x)| x.abs() / d.d[i + 1] as f64).fold(0.0, f64::max);
                let eig = sym_eigenvalues(&b).unwrap();
                let op = eig.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                assert!(op <= bound + 1e-12);
            }
        }
    }

    #[test]
    fn mean_squares_examples() {
        let d = oneway(3, 2);
        let zero = Matrix::zeros(6, 2);
        let ms = d.mean_squares(&zero).unwrap();
        assert!(ms.ms.iter().all(|m| m.as_matrix().max_abs() == 0.0));

        let constant = Matrix::from_fn(6, 2, |_, j| 3.0 + j as f64);
        let ms = d.mean_squares(&constant).unwrap();
        assert!(ms.ms.iter().all(|m| m.as_matrix().max_abs() < 1e-12));

        let y = Matrix::from_vec(6, 1, vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0]).unwrap();
        let ms = d.mean_squares(&y).unwrap();
        assert!((ms.ms[0][(0, 0)] - 2.0).abs() < 1e-12);
        assert!(ms.ms[1][(0, 0)].abs() < 1e-12);

        assert!(matches!(d.mean_squares(&Matrix::zeros(5, 1)), Err(Error::Shape(_))));
    }

    #[test]
    fn quadratic_form_paths_agree() {
        let d = DesignSpec::build(DesignKind::NestedTwoway { i: 3, j: 3, k: 2 }).unwrap();
        let y = gaussian_matrix(d.n, 4, 1.0, Seed(3));
        let ms = d.mean_squares(&y).unwrap();
        let a = CoeffVector(vec![0.7, -0.2, 0.4]);
        let via_ms = sigma_hat(&ms, &a).unwrap();
        let b = d.estimation_matrix(&a).unwrap();
        let direct = y.t_matmul(&b.as_matrix().matmul(&y).unwrap()).unwrap();
        let scale = direct.max_abs();
        for i in 0..4 {
            for j in 0..4 {
                assert!((via_ms[(i, j)] - direct[(i, j)]).abs() <= 1e-10 * scale);
            }
        }
    }

    #[test]
    fn design_json_round_trip() {
        let d = DesignSpec::from_json(r#"{"kind":"oneway","I":300,"J":2}"#).unwrap();
        assert_eq!(d.kind, DesignKind::Oneway { i: 300, j: 2 });
        let s = serde_json::to_string(&d.kind).unwrap();
        assert_eq!(s, r#"{"kind":"oneway","I":300,"J":2}"#);
    }
}
