//! Population covariances, data simulation and noise-level plug-ins.
//!
//! Each random effect has covariance `Sigma_r = sigma_r^2 Id + V_r Theta_r V_r'`.
//! A spike's `theta` is the *excess* over the noise level: the population
//! eigenvalue along `v` is `mu = theta + sigma_r^2`.

use serde::{Deserialize, Serialize};

use crate::design::{CoeffVector, DesignSpec, MeanSquares};
use crate::error::{Error, Result};
use crate::numerics::{dot, normalize, sym_eigenvalues, Matrix, Seed, SymMatrix};
use crate::numerics::rng::fill_gaussian;

const ORTHO_TOL: f64 = 1e-10;
const SUBSPACE_RANK_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Spike {
    /// Excess over `sigma2`; must be positive.
    pub theta: f64,
    /// Unit vector of length `p`.
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpikedCovariance {
    pub sigma2: f64,
    pub spikes: Vec<Spike>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub p: usize,
    pub components: Vec<SpikedCovariance>,
    pub mean: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum VectorJson {
    Basis(String),
    Dense { dense: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SpikeJson {
    theta: f64,
    v: VectorJson,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ComponentJson {
    sigma2: f64,
    #[serde(default)]
    spikes: Vec<SpikeJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelJson {
    p: usize,
    components: Vec<ComponentJson>,
    #[serde(default)]
    mean: Option<Vec<f64>>,
}

fn parse_vector(v: VectorJson, p: usize) -> Result<Vec<f64>> {
    match v {
        VectorJson::Basis(s) => {
            let idx: usize = s
                .strip_prefix('e')
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::invalid(format!("unrecognised vector shorthand {s:?}")))?;
            if idx == 0 || idx > p {
                return Err(Error::invalid(format!("basis vector {s} outside 1..={p}")));
            }
            let mut x = vec![0.0; p];
            x[idx - 1] = 1.0;
            Ok(x)
        }
        VectorJson::Dense { dense } => {
            if dense.len() != p {
                return Err(Error::shape(format!("spike vector has length {} but p = {p}", dense.len())));
            }
            if dense.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid("non-finite spike vector entry"));
            }
            let mut x = dense;
            if normalize(&mut x) == 0.0 {
                return Err(Error::invalid("zero spike vector"));
            }
            Ok(x)
        }
    }
}

impl SpikedCovariance {
    pub fn isotropic(sigma2: f64) -> Self {
        Self { sigma2, spikes: Vec::new() }
    }

    pub fn with_spike(mut self, theta: f64, v: Vec<f64>) -> Self {
        self.spikes.push(Spike { theta, v });
        self
    }

    /// Dense `p x p` covariance.
    pub fn matrix(&self, p: usize) -> SymMatrix {
        let mut s = SymMatrix::identity(p).scaled(self.sigma2);
        for sp in &self.spikes {
            let outer = SymMatrix::from_outer_products(p, &[(sp.theta, &sp.v)]);
            s.add_scaled(1.0, &outer).expect("same dimension");
        }
        s
    }

    /// `v' Sigma v`.
    pub fn quadratic_form(&self, v: &[f64]) -> f64 {
        self.sigma2 * dot(v, v) + self.spikes.iter().map(|s| s.theta * dot(&s.v, v).powi(2)).sum::<f64>()
    }

    /// Operator norm.
    pub fn norm(&self) -> f64 {
        let top = self.spikes.iter().map(|s| s.theta).fold(0.0, f64::max);
        (self.sigma2 + top).abs().max(self.sigma2.abs())
    }
}

impl ModelSpec {
    pub fn new(p: usize, components: Vec<SpikedCovariance>) -> Result<Self> {
        let m = Self { p, components, mean: None };
        m.validate()?;
        Ok(m)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: ModelJson = serde_json::from_str(s)?;
        let p = raw.p;
        let mut components = Vec::with_capacity(raw.components.len());
        for c in raw.components {
            let mut spikes = Vec::with_capacity(c.spikes.len());
            for s in c.spikes {
                spikes.push(Spike { theta: s.theta, v: parse_vector(s.v, p)? });
            }
            components.push(SpikedCovariance { sigma2: c.sigma2, spikes });
        }
        let m = Self { p, components, mean: raw.mean };
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        let raw = ModelJson {
            p: self.p,
            components: self
                .components
                .iter()
                .map(|c| ComponentJson {
                    sigma2: c.sigma2,
                    spikes: c
                        .spikes
                        .iter()
                        .map(|s| SpikeJson { theta: s.theta, v: VectorJson::Dense { dense: s.v.clone() } })
                        .collect(),
                })
                .collect(),
            mean: self.mean.clone(),
        };
        serde_json::to_string(&raw).expect("model serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::invalid("p must be at least 1"));
        }
        if let Some(mu) = &self.mean {
            if mu.len() != self.p {
                return Err(Error::shape(format!("mean has length {} but p = {}", mu.len(), self.p)));
            }
        }
        for (r, c) in self.components.iter().enumerate() {
            if !(c.sigma2 >= 0.0) || !c.sigma2.is_finite() {
                return Err(Error::invalid(format!("component {}: sigma2 must be finite and >= 0", r + 1)));
            }
            for (i, s) in c.spikes.iter().enumerate() {
                if !(s.theta > 0.0) || !s.theta.is_finite() {
                    return Err(Error::invalid(format!("component {}: theta must be positive", r + 1)));
                }
                if s.v.len() != self.p {
                    return Err(Error::shape(format!("component {}: spike vector length {} != p", r + 1, s.v.len())));
                }
                for (j, t) in c.spikes.iter().enumerate().take(i + 1) {
                    let target = if i == j { 1.0 } else { 0.0 };
                    if (dot(&s.v, &t.v) - target).abs() > ORTHO_TOL {
                        return Err(Error::invalid(format!(
                            "component {}: spike vectors are not orthonormal",
                            r + 1
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn sigma2(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.sigma2).collect()
    }

    pub fn spike_count(&self) -> usize {
        self.components.iter().map(|c| c.spikes.len()).sum()
    }

    pub fn covariances(&self) -> Vec<SymMatrix> {
        self.components.iter().map(|c| c.matrix(self.p)).collect()
    }

    pub fn check_design(&self, design: &DesignSpec) -> Result<()> {
        if design.k != self.k() {
            return Err(Error::shape(format!(
                "model has {} components but the design has k = {}",
                self.k(),
                design.k
            )));
        }
        Ok(())
    }
}

/// Orthonormal basis of the combined span of all spike vectors.
#[derive(Debug, Clone)]
pub struct SpikeSubspace {
    /// `p x L`, orthonormal columns.
    pub basis: Matrix,
    /// `coords[r]` is the `L x l_r` matrix of component `r`'s spike vectors.
    pub coords: Vec<Matrix>,
    /// `thetas[r]` holds component `r`'s spike sizes.
    pub thetas: Vec<Vec<f64>>,
}

impl SpikeSubspace {
    pub fn from_model(model: &ModelSpec) -> Self {
        let p = model.p;
        let mut cols: Vec<Vec<f64>> = Vec::new();
        for c in &model.components {
            for s in &c.spikes {
                let mut x = s.v.clone();
                for _ in 0..2 {
                    for q in &cols {
                        let h = dot(q, &x);
                        x.iter_mut().zip(q).for_each(|(xi, qi)| *xi -= h * qi);
                    }
                }
                if normalize(&mut x) > SUBSPACE_RANK_TOL {
                    cols.push(x);
                }
            }
        }
        let l = cols.len();
        let basis = if l == 0 { Matrix::zeros(p, 0) } else { Matrix::from_columns(&cols).expect("equal lengths") };
        let coords = model
            .components
            .iter()
            .map(|c| Matrix::from_fn(l, c.spikes.len(), |i, j| dot(&cols[i], &c.spikes[j].v)))
            .collect();
        let thetas = model.components.iter().map(|c| c.spikes.iter().map(|s| s.theta).collect()).collect();
        Self { basis, coords, thetas }
    }

    pub fn dim(&self) -> usize {
        self.basis.cols()
    }

    /// `V̊_r Theta_r V̊_r'` (`L x L`).
    pub fn component(&self, r: usize) -> SymMatrix {
        let l = self.dim();
        let v = &self.coords[r];
        SymMatrix::from_fn(l, |i, j| (0..v.cols()).map(|c| self.thetas[r][c] * v[(i, c)] * v[(j, c)]).sum())
    }

    /// Coordinates in `R^p` of a subspace vector.
    pub fn lift(&self, x: &[f64]) -> Vec<f64> {
        self.basis.matvec(x)
    }
}

/// Draws `Y = 1 mu' + sum_r U_r alpha_r` with `alpha_r` rows i.i.d. `N(0, Sigma_r)`.
pub fn simulate(design: &DesignSpec, model: &ModelSpec, seed: Seed) -> Result<Matrix> {
    model.validate()?;
    model.check_design(design)?;
    let p = model.p;
    let mut rng = seed.rng();
    let mut y = Matrix::zeros(design.n, p);
    for (r, comp) in model.components.iter().enumerate() {
        let mr = design.m[r];
        let mut alpha = if comp.sigma2 > 0.0 {
            fill_gaussian(&mut rng, mr, p, comp.sigma2.sqrt())
        } else {
            Matrix::zeros(mr, p)
        };
        if !comp.spikes.is_empty() {
            let g = fill_gaussian(&mut rng, mr, comp.spikes.len(), 1.0);
            for i in 0..mr {
                let row = alpha.row_mut(i);
                for (j, s) in comp.spikes.iter().enumerate() {
                    let w = g[(i, j)] * s.theta.sqrt();
                    row.iter_mut().zip(&s.v).for_each(|(a, v)| *a += w * v);
                }
            }
        }
        for (u, &grp) in design.groups[r].iter().enumerate() {
            let src = alpha.row(grp).to_vec();
            y.row_mut(u).iter_mut().zip(&src).for_each(|(a, b)| *a += b);
        }
    }
    if let Some(mu) = &model.mean {
        for u in 0..design.n {
            y.row_mut(u).iter_mut().zip(mu).for_each(|(a, b)| *a += b);
        }
    }
    Ok(y)
}

/// `sum_r a_r MS_r`.
pub fn sigma_hat(ms: &MeanSquares, a: &CoeffVector) -> Result<SymMatrix> {
    if a.len() != ms.k() {
        return Err(Error::shape(format!("{} coefficients for {} mean squares", a.len(), ms.k())));
    }
    SymMatrix::linear_combination(&a.0, &ms.ms)
}

/// Trimmed-trace estimate of one noise level from an estimated covariance.
pub fn trimmed_noise_level(sigma: &SymMatrix, trim: usize) -> Result<f64> {
    let p = sigma.dim();
    if trim >= p {
        return Err(Error::invalid(format!("trim = {trim} must be below p = {p}")));
    }
    let mut ev = sym_eigenvalues(sigma)?;
    ev.sort_by(|a, b| b.abs().total_cmp(&a.abs()));
    let kept = &ev[trim..];
    Ok((kept.iter().sum::<f64>() / kept.len() as f64).max(0.0))
}

/// `sigma_r^2` estimates from the MANOVA estimators, dropping the `trim`
/// largest-magnitude eigenvalues of each before averaging.
pub fn estimate_noise_variances(ms: &MeanSquares, design: &DesignSpec, trim: usize) -> Result<Vec<f64>> {
    if ms.k() != design.k {
        return Err(Error::shape(format!("{} mean squares for a design with k = {}", ms.k(), design.k)));
    }
    (1..=design.k)
        .map(|r| {
            let a = design.manova_coefficients(r)?;
            trimmed_noise_level(&sigma_hat(ms, &a)?, trim)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::DesignKind;

    fn e(p: usize, i: usize) -> Vec<f64> {
        let mut x = vec![0.0; p];
        x[i] = 1.0;
        x
    }

    #[test]
    fn json_shorthand_and_normalisation() {
        let m = ModelSpec::from_json(
            r#"{"p":3,"components":[{"sigma2":0.0,"spikes":[{"theta":6.0,"v":"e1"}]},
               {"sigma2":1.0,"spikes":[{"theta":29.0,"v":{"dense":[1.0,1.0,0.0]}}]}],"mean":null}"#,
        )
        .unwrap();
        assert_eq!(m.components[0].spikes[0].v, vec![1.0, 0.0, 0.0]);
        let h = 0.5f64.sqrt();
        assert!((m.components[1].spikes[0].v[0] - h).abs() < 1e-15);
        let again = ModelSpec::from_json(&m.to_json()).unwrap();
        for (a, b) in again.components.iter().zip(&m.components) {
            assert_eq!(a.sigma2, b.sigma2);
            for (x, y) in a.spikes[0].v.iter().zip(&b.spikes[0].v) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn json_rejections() {
        let zero = r#"{"p":2,"components":[{"sigma2":1.0,"spikes":[{"theta":1.0,"v":{"dense":[0.0,0.0]}}]}]}"#;
        assert!(matches!(ModelSpec::from_json(zero), Err(Error::InvalidInput(_))));
        let far = r#"{"p":2,"components":[{"sigma2":1.0,"spikes":[{"theta":1.0,"v":"e3"}]}]}"#;
        assert!(ModelSpec::from_json(far).is_err());
        let nonortho = r#"{"p":2,"components":[{"sigma2":1.0,"spikes":[{"theta":1.0,"v":"e1"},{"theta":2.0,"v":{"dense":[1.0,1.0]}}]}]}"#;
        assert!(ModelSpec::from_json(nonortho).is_err());
    }

    #[test]
    fn zero_model_simulates_zeros() {
        let d = DesignSpec::build(DesignKind::Oneway { i: 4, j: 2 }).unwrap();
        let m = ModelSpec::new(3, vec![SpikedCovariance::isotropic(0.0), SpikedCovariance::isotropic(0.0)]).unwrap();
        let y = simulate(&d, &m, Seed(9)).unwrap();
        assert!(y.as_slice().iter().all(|&x| x == 0.0));
        let bad = ModelSpec::new(3, vec![SpikedCovariance::isotropic(0.0)]).unwrap();
        assert!(matches!(simulate(&d, &bad, Seed(9)), Err(Error::Shape(_))));
    }

    #[test]
    fn group_effect_is_shared_within_groups() {
        let d = DesignSpec::build(DesignKind::Oneway { i: 5, j: 3 }).unwrap();
        let m = ModelSpec::new(2, vec![SpikedCovariance::isotropic(1.0), SpikedCovariance::isotropic(0.0)]).unwrap();
        let y = simulate(&d, &m, Seed(2)).unwrap();
        for g in 0..5 {
            assert_eq!(y.row(3 * g), y.row(3 * g + 1));
            assert_eq!(y.row(3 * g), y.row(3 * g + 2));
        }
        let ms = d.mean_squares(&y).unwrap();
        assert!(ms.ms[1].as_matrix().max_abs() < 1e-12);
    }

    #[test]
    fn manova_of_zero_data_is_zero() {
        let d = DesignSpec::build(DesignKind::Oneway { i: 4, j: 2 }).unwrap();
        let ms = d.mean_squares(&Matrix::zeros(8, 3)).unwrap();
        let s = sigma_hat(&ms, &d.manova_coefficients(1).unwrap()).unwrap();
        assert_eq!(s.as_matrix().max_abs(), 0.0);
        let e2 = sigma_hat(&ms, &CoeffVector(vec![0.0, 1.0])).unwrap();
        assert_eq!(e2, ms.ms[1]);
    }

    #[test]
    fn subspace_handles_dependent_spikes() {
        let p = 5;
        let h = 0.5;
        let s3 = 3f64.sqrt() / 2.0;
        let v: Vec<f64> = (0..p).map(|i| if i == 0 { h } else if i == 1 { s3 } else { 0.0 }).collect();
        let m = ModelSpec::new(
            p,
            vec![
                SpikedCovariance::isotropic(0.0).with_spike(6.0, e(p, 0)),
                SpikedCovariance::isotropic(1.0).with_spike(29.0, v.clone()),
                SpikedCovariance::isotropic(1.0).with_spike(3.0, e(p, 1)),
            ],
        )
        .unwrap();
        let sub = SpikeSubspace::from_model(&m);
        assert_eq!(sub.dim(), 2);
        let btb = sub.basis.t_matmul(&sub.basis).unwrap();
        let mut diff = btb;
        diff.add_scaled(-1.0, &Matrix::identity(2)).unwrap();
        assert!(diff.max_abs() < 1e-10);
        let back = sub.lift(&sub.coords[1].column(0));
        for (a, b) in back.iter().zip(&v) {
            assert!((a - b).abs() < 1e-9);
        }
        let c = sub.component(1);
        let lifted = sub.basis.matmul(&c.as_matrix().matmul(&sub.basis.transpose()).unwrap()).unwrap();
        assert!((lifted[(0, 1)] - 29.0 * h * s3).abs() < 1e-9);
    }

    #[test]
    fn trimmed_noise_examples() {
        let s = SymMatrix::diagonal(&[10.0, 1.0, 1.0, 1.0]);
        assert!((trimmed_noise_level(&s, 1).unwrap() - 1.0).abs() < 1e-14);
        assert!((trimmed_noise_level(&SymMatrix::identity(4), 0).unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(trimmed_noise_level(&SymMatrix::identity(4).scaled(-1.0), 0).unwrap(), 0.0);
        assert!(trimmed_noise_level(&s, 4).is_err());
    }
}
