//! Deterministic outlier predictions: the functions `t_r`, `w_rs`, the matrix
//! `T(lambda)` on the spike subspace, predicted outlier locations with their
//! eigenvector alignments and Gaussian fluctuation variances, and the
//! population locus.

use serde::Serialize;

use crate::covmodel::SpikeSubspace;
use crate::design::{DesignKind, DesignSpec};
use crate::error::{Error, Result};
use crate::mp_law::{BulkLaw, Side};
use crate::numerics::{dot, sphere_grid, sym_eig, sym_eigenvalues, Matrix, SymMatrix};

const CLUSTER_TOL: f64 = 1e-9;
const MAX_DOUBLINGS: usize = 200;

/// `t_r`, their `lambda`-derivatives and `m0` at one spectral argument.
#[derive(Debug, Clone, Serialize)]
pub struct TFunctions {
    pub lambda: f64,
    pub m0: f64,
    /// `d m0 / d lambda`.
    pub dm0: f64,
    pub t: Vec<f64>,
    pub dt: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OutlierPrediction {
    pub lambda: f64,
    pub multiplicity: usize,
    /// Kernel vector of `T(lambda)` in spike-subspace coordinates (simple roots only).
    pub v_subspace: Option<Vec<f64>>,
    /// `(v' dT v)^{-1/2}`.
    pub alignment: Option<f64>,
    pub nu: Option<f64>,
    pub side: Side,
    /// Distance to the nearest other predicted outlier.
    pub separation: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TaylorBiases {
    pub c1: f64,
    pub c2: f64,
    pub biased_location: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocusPoint {
    pub s: Vec<f64>,
}

pub fn t_vector<B: BulkLaw + ?Sized>(law: &B, lambda: f64) -> Result<TFunctions> {
    let m0 = law.m0(lambda)?;
    let dm0 = law.spectrum().dm0(m0);
    let (t, dtdm) = law.t_of_m(m0);
    let dt = dtdm.iter().map(|d| d * dm0).collect();
    Ok(TFunctions { lambda, m0, dm0, t, dt })
}

pub fn w_matrix<B: BulkLaw + ?Sized>(law: &B, lambda: f64) -> Result<Matrix> {
    let m0 = law.m0(lambda)?;
    Ok(law.w_of_m(m0))
}

/// `-(1/m0) Id - sum_r t_r V̊_r Theta_r V̊_r'` on the spike subspace.
pub fn t_matrix(tf: &TFunctions, subspace: &SpikeSubspace) -> SymMatrix {
    let l = subspace.dim();
    let mut k = SymMatrix::identity(l).scaled(-1.0 / tf.m0);
    for (r, &t) in tf.t.iter().enumerate() {
        if t != 0.0 && !subspace.thetas[r].is_empty() {
            k.add_scaled(-t, &subspace.component(r)).expect("subspace dimension");
        }
    }
    k
}

/// `lambda Id - sum_r t_r Sigma_r` restricted to the spike subspace.
pub fn t_matrix_sigma_form(tf: &TFunctions, subspace: &SpikeSubspace, sigma2: &[f64]) -> SymMatrix {
    let l = subspace.dim();
    let mut k = SymMatrix::identity(l).scaled(tf.lambda - tf.t.iter().zip(sigma2).map(|(t, s)| t * s).sum::<f64>());
    for (r, &t) in tf.t.iter().enumerate() {
        if t != 0.0 && !subspace.thetas[r].is_empty() {
            k.add_scaled(-t, &subspace.component(r)).expect("subspace dimension");
        }
    }
    k
}

/// `dT/dlambda = Id - sum_r (dt_r/dlambda) Sigma_r` on the spike subspace.
pub fn t_derivative(tf: &TFunctions, subspace: &SpikeSubspace, sigma2: &[f64]) -> SymMatrix {
    let l = subspace.dim();
    let mut d = SymMatrix::identity(l).scaled(1.0 - tf.dt.iter().zip(sigma2).map(|(dt, s)| dt * s).sum::<f64>());
    for (r, &dt) in tf.dt.iter().enumerate() {
        if dt != 0.0 && !subspace.thetas[r].is_empty() {
            d.add_scaled(-dt, &subspace.component(r)).expect("subspace dimension");
        }
    }
    d
}

/// `nu = 2 / (N q^2) * ((q - 1)^2 / dm0 + sum_rs w_rs g_r g_s)` with
/// `q = v' dT v` and `g_r = v' Sigma_r v`.
pub fn nu_formula(n_eff: f64, v_dt_v: f64, dm0: f64, w: &Matrix, quad: &[f64]) -> f64 {
    let mut cross = 0.0;
    for r in 0..quad.len() {
        for s in 0..quad.len() {
            cross += w[(r, s)] * quad[r] * quad[s];
        }
    }
    2.0 / (n_eff * v_dt_v * v_dt_v) * ((v_dt_v - 1.0).powi(2) / dm0 + cross)
}

/// Fluctuation variance of a simple outlier with kernel vector `v`
/// (subspace coordinates).
pub fn clt_variance<B: BulkLaw + ?Sized>(law: &B, tf: &TFunctions, v: &[f64], subspace: &SpikeSubspace) -> Result<f64> {
    let sigma2 = law.sigma2();
    let dt = t_derivative(tf, subspace, sigma2);
    let q = dt.quadratic_form(v);
    let quad: Vec<f64> = (0..law.k())
        .map(|r| {
            let extra = if subspace.thetas[r].is_empty() { 0.0 } else { subspace.component(r).quadratic_form(v) };
            sigma2[r] * dot(v, v) + extra
        })
        .collect();
    let w = law.w_of_m(tf.m0);
    Ok(nu_formula(law.n_eff(), q, tf.dm0, &w, &quad))
}

fn curve_values<B: BulkLaw + ?Sized>(law: &B, subspace: &SpikeSubspace, lambda: f64) -> Result<Vec<f64>> {
    let tf = t_vector(law, lambda)?;
    sym_eigenvalues(&t_matrix(&tf, subspace))
}

fn bisect_curve<B: BulkLaw + ?Sized>(law: &B, subspace: &SpikeSubspace, idx: usize, mut lo: f64, mut hi: f64) -> Result<f64> {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= 1e-14 * mid.abs().max(1.0) || mid <= lo || mid >= hi {
            break;
        }
        if curve_values(law, subspace, mid)?[idx] < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Roots of `det T(lambda)` outside the `delta_inner`-neighbourhood of the
/// support, sorted in decreasing order.
pub fn predicted_outliers<B: BulkLaw + ?Sized>(law: &B, subspace: &SpikeSubspace, delta_inner: f64) -> Result<Vec<OutlierPrediction>> {
    let l = subspace.dim();
    if l == 0 {
        return Ok(Vec::new());
    }
    if !(delta_inner > 0.0) {
        return Err(Error::invalid("delta_inner must be positive"));
    }
    let support = law.support()?;
    let mut roots: Vec<f64> = Vec::new();
    for (glo, ghi) in support.gaps(delta_inner) {
        let lo = if glo.is_finite() {
            glo
        } else {
            let mut step = ghi.abs().max(1.0);
            let mut x = ghi - step;
            let mut n = 0;
            while *curve_values(law, subspace, x)?.last().unwrap() >= 0.0 {
                step *= 2.0;
                x = ghi - step;
                n += 1;
                if n > MAX_DOUBLINGS {
                    return Err(Error::numerical("could not bracket the lower unbounded region"));
                }
            }
            x
        };
        let hi = if ghi.is_finite() {
            ghi
        } else {
            let mut step = glo.abs().max(1.0);
            let mut x = glo + step;
            let mut n = 0;
            while curve_values(law, subspace, x)?[0] <= 0.0 {
                step *= 2.0;
                x = glo + step;
                n += 1;
                if n > MAX_DOUBLINGS {
                    return Err(Error::numerical("could not bracket the upper unbounded region"));
                }
            }
            x
        };
        if !(hi > lo) {
            continue;
        }
        let flo = curve_values(law, subspace, lo)?;
        let fhi = curve_values(law, subspace, hi)?;
        for idx in 0..l {
            if flo[idx] < 0.0 && fhi[idx] > 0.0 {
                roots.push(bisect_curve(law, subspace, idx, lo, hi)?);
            }
        }
    }
    roots.sort_by(|a, b| b.total_cmp(a));

    let mut clusters: Vec<Vec<f64>> = Vec::new();
    for r in roots {
        match clusters.last_mut() {
            Some(c) if (c[0] - r).abs() <= CLUSTER_TOL * r.abs().max(1.0) => c.push(r),
            _ => clusters.push(vec![r]),
        }
    }

    let sigma2 = law.sigma2();
    let centres: Vec<f64> = clusters.iter().map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    let mut out = Vec::with_capacity(clusters.len());
    for (i, c) in clusters.iter().enumerate() {
        let lambda = centres[i];
        let multiplicity = c.len();
        let separation = centres
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &x)| (x - lambda).abs())
            .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.min(d))));
        let (mut v_subspace, mut alignment, mut nu) = (None, None, None);
        if multiplicity == 1 {
            let tf = t_vector(law, lambda)?;
            let eig = sym_eig(&t_matrix(&tf, subspace))?;
            let idx = (0..l).min_by(|&a, &b| eig.values[a].abs().total_cmp(&eig.values[b].abs())).unwrap();
            let v = eig.vector(idx);
            let q = t_derivative(&tf, subspace, sigma2).quadratic_form(&v);
            alignment = Some(q.powf(-0.5));
            nu = Some(clt_variance(law, &tf, &v, subspace)?);
            v_subspace = Some(v);
        }
        out.push(OutlierPrediction { lambda, multiplicity, v_subspace, alignment, nu, side: support.side(lambda), separation });
    }
    Ok(out)
}

/// Large-spike bias constants for the one-way MANOVA estimator of `Sigma_1`.
pub fn taylor_biases_oneway(design: &DesignSpec, sigma2: &[f64], theta1: f64, theta2: f64, rho: f64, n_eff: f64) -> Result<TaylorBiases> {
    let (i, j) = match design.kind {
        DesignKind::Oneway { i, j } => (i as f64, j as f64),
        _ => return Err(Error::invalid("Taylor bias constants are defined for one-way designs")),
    };
    if sigma2.len() != 2 {
        return Err(Error::shape("one-way designs have two noise levels"));
    }
    if theta1 == 0.0 && rho != 0.0 && theta2 != 0.0 {
        return Err(Error::invalid("theta1 = 0 with a non-zero alignment"));
    }
    let n = design.n as f64;
    let (s1, s2) = (sigma2[0], sigma2[1]);
    let c1 = n_eff * (j * s1 + s2) / ((i - 1.0) * j);
    let c2 = n_eff * (s1 + (n - 1.0) * s2 / (n * (j - 1.0))) / ((i - 1.0) * j);
    let mut biased_location = theta1 + s1 + c1;
    if theta2 != 0.0 && rho != 0.0 {
        biased_location += theta2 / theta1 * rho * rho * c2;
    }
    Ok(TaylorBiases { c1, c2, biased_location })
}

/// Points of `{s : det(Id + sum_r s_r V̊_r Theta_r V̊_r') = 0}` along the rays
/// of a direction grid: on the ray `s = rho u`, the roots are `rho = -1/mu`
/// for each negative eigenvalue `mu` of `sum_r u_r V̊_r Theta_r V̊_r'`.
pub fn population_locus(subspace: &SpikeSubspace, grid: usize) -> Result<Vec<LocusPoint>> {
    let l = subspace.dim();
    if l == 0 {
        return Err(Error::invalid("the population locus needs at least one spike"));
    }
    let k = subspace.thetas.len();
    let comps: Vec<SymMatrix> = (0..k).map(|r| subspace.component(r)).collect();
    let mut out = Vec::new();
    for u in sphere_grid(k, grid)? {
        let a = SymMatrix::linear_combination(&u, &comps)?;
        let scale = a.frobenius_norm().max(1e-300);
        for mu in sym_eigenvalues(&a)? {
            if mu < -1e-12 * scale {
                out.push(LocusPoint { s: u.iter().map(|x| -x / mu).collect() });
            }
        }
    }
    Ok(out)
}
