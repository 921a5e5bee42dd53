//! The deterministic bulk law `mu_0` of a mean-square combination.
//!
//! Everything reduces to the Stieltjes-transform equation
//!
//! ```text
//! z = -1/m + sum_j w_j kappa_j / (1 + kappa_j m)
//! ```
//!
//! where `kappa_j` are the distinct non-zero eigenvalues of the block matrix
//! `F` and `w_j` their multiplicities divided by `N`. For balanced designs
//! `kappa_s = (N/d_s) a_s C_s` with weight `d_s/N`, so the equation is known in
//! closed form ([`MPContext`]); for arbitrary `F` the spectrum is computed
//! numerically ([`GeneralF`]).

use num_complex::Complex64;
use serde::Serialize;

use crate::design::{CoeffVector, DesignSpec};
use crate::error::{Error, Result};
use crate::numerics::{sym_eig, Matrix, Poly, SymMatrix};

const POLE_TOL: f64 = 1e-14;
const SUPPORT_MARGIN: f64 = 1e-8;
/// Atoms below this fraction of the largest |kappa| are dropped.
const ATOM_TOL: f64 = 1e-12;

/// Distinct non-zero eigenvalues of `F` with weights `multiplicity / N`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Spectrum {
    pub atoms: Vec<(f64, f64)>,
}

/// Support of `mu_0`: closed intervals plus a possible point mass at 0.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupportInfo {
    pub intervals: Vec<(f64, f64)>,
    pub has_zero_atom: bool,
    /// `F = 0`: the law is the point mass at 0.
    pub degenerate: bool,
}

impl SupportInfo {
    fn components(&self) -> Vec<(f64, f64)> {
        let mut c = self.intervals.clone();
        if self.has_zero_atom && !c.iter().any(|&(lo, hi)| lo <= 0.0 && 0.0 <= hi) {
            c.push((0.0, 0.0));
            c.sort_by(|a, b| a.0.total_cmp(&b.0));
        }
        c
    }

    /// Largest point of the support (0 for the degenerate law).
    pub fn max_edge(&self) -> f64 {
        self.components().iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max).max(if self.degenerate { 0.0 } else { f64::NEG_INFINITY })
    }

    pub fn min_edge(&self) -> f64 {
        self.components().iter().map(|c| c.0).fold(f64::INFINITY, f64::min).min(if self.degenerate { 0.0 } else { f64::INFINITY })
    }

    /// Lower end of the outlier search region `(max supp + delta, inf)`.
    pub fn i_delta_lower(&self, delta: f64) -> f64 {
        self.max_edge() + delta
    }

    /// Whether `x` lies in the closed `margin`-neighbourhood of the support.
    pub fn contains(&self, x: f64, margin: f64) -> bool {
        self.components().iter().any(|&(lo, hi)| x >= lo - margin && x <= hi + margin)
    }

    /// Open gaps of `R \ supp_margin`, ascending, including the two unbounded ends.
    pub fn gaps(&self, margin: f64) -> Vec<(f64, f64)> {
        let comps = self.components();
        if comps.is_empty() {
            return vec![(f64::NEG_INFINITY, f64::INFINITY)];
        }
        let mut out = vec![(f64::NEG_INFINITY, comps[0].0 - margin)];
        for w in comps.windows(2) {
            let (lo, hi) = (w[0].1 + margin, w[1].0 - margin);
            if lo < hi {
                out.push((lo, hi));
            }
        }
        out.push((comps.last().unwrap().1 + margin, f64::INFINITY));
        out
    }

    /// `above`, `below` or `between` relative to the support.
    pub fn side(&self, x: f64) -> Side {
        if x > self.max_edge() {
            Side::Above
        } else if x < self.min_edge() {
            Side::Below
        } else {
            Side::Between
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Above,
    Below,
    Between,
}

#[derive(Clone, Copy, PartialEq)]
enum Break {
    Singular,
    Critical(f64),
}

impl Spectrum {
    /// Groups values whose relative difference is below `tol`, dropping zeros.
    pub fn from_eigenvalues(values: &[f64], n_eff: f64, tol: f64) -> Self {
        let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.abs() > tol * scale.max(1.0)).collect();
        sorted.sort_by(f64::total_cmp);
        let mut atoms: Vec<(f64, f64, usize)> = Vec::new();
        for v in sorted {
            match atoms.last_mut() {
                Some((sum, _, cnt)) if (v - *sum / *cnt as f64).abs() <= tol * scale.max(1.0) => {
                    *sum += v;
                    *cnt += 1;
                }
                _ => atoms.push((v, 0.0, 1)),
            }
        }
        Self { atoms: atoms.into_iter().map(|(s, _, c)| (s / c as f64, c as f64 / n_eff)).collect() }
    }

    fn from_weighted(pairs: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let mut atoms: Vec<(f64, f64)> = Vec::new();
        for (kappa, w) in pairs {
            if kappa == 0.0 || w == 0.0 {
                continue;
            }
            match atoms.iter_mut().find(|(k, _)| *k == kappa) {
                Some(slot) => slot.1 += w,
                None => atoms.push((kappa, w)),
            }
        }
        // Rounding residue in the coefficients (cos(pi/2) and the like) leaves
        // atoms near 0 whose far-away poles wreck the root finding.
        let scale = atoms.iter().fold(0.0f64, |m, a| m.max(a.0.abs()));
        atoms.retain(|a| a.0.abs() > ATOM_TOL * scale);
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self { atoms }
    }

    pub fn is_null(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Total weight, the rank of `F` divided by `N`.
    pub fn total_weight(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum()
    }

    fn check_pole(&self, m: f64) -> Result<()> {
        if m == 0.0 {
            return Err(Error::Pole { location: 0.0 });
        }
        for &(k, _) in &self.atoms {
            if (1.0 + k * m).abs() <= POLE_TOL {
                return Err(Error::Pole { location: -1.0 / k });
            }
        }
        Ok(())
    }

    pub fn z0(&self, m: f64) -> Result<f64> {
        self.check_pole(m)?;
        Ok(self.z0_unchecked(m))
    }

    fn z0_unchecked(&self, m: f64) -> f64 {
        -1.0 / m + self.atoms.iter().map(|&(k, w)| w * k / (1.0 + k * m)).sum::<f64>()
    }

    pub fn z0_prime(&self, m: f64) -> f64 {
        1.0 / (m * m) - self.atoms.iter().map(|&(k, w)| w * k * k / (1.0 + k * m).powi(2)).sum::<f64>()
    }

    pub fn z0_complex(&self, m: Complex64) -> Result<Complex64> {
        if m.norm() == 0.0 {
            return Err(Error::Pole { location: 0.0 });
        }
        let mut z = -m.inv();
        for &(k, w) in &self.atoms {
            let den = 1.0 + k * m;
            if den.norm() <= POLE_TOL {
                return Err(Error::Pole { location: -1.0 / k });
            }
            z += w * k / den;
        }
        Ok(z)
    }

    fn z0_prime_complex(&self, m: Complex64) -> Complex64 {
        let mut d = (m * m).inv();
        for &(k, w) in &self.atoms {
            let den = 1.0 + k * m;
            d -= w * k * k / (den * den);
        }
        d
    }

    fn product_except(&self, skip: Option<usize>, power: u32) -> Poly {
        let mut p = Poly::constant(1.0);
        for (i, &(k, _)) in self.atoms.iter().enumerate() {
            if Some(i) != skip {
                for _ in 0..power {
                    p = p.mul(&Poly::linear(1.0, k));
                }
            }
        }
        p
    }

    /// `z0'(m) m^2 prod (1 + kappa_j m)^2`, a polynomial of degree `2q`.
    fn critical_poly(&self) -> Poly {
        let mut acc = self.product_except(None, 2);
        let m2 = Poly::new(vec![0.0, 0.0, 1.0]);
        for (j, &(k, w)) in self.atoms.iter().enumerate() {
            let term = m2.mul(&self.product_except(Some(j), 2)).scale(-w * k * k);
            acc = acc.add(&term);
        }
        acc
    }

    /// `(z0(m) - lambda) m prod (1 + kappa_j m)` up to sign, degree `q + 1`.
    fn stieltjes_poly(&self, lambda: f64) -> Poly {
        let full = self.product_except(None, 1);
        let mut acc = Poly::new(vec![0.0, lambda]).mul(&full).add(&full);
        let m1 = Poly::new(vec![0.0, 1.0]);
        for (j, &(k, w)) in self.atoms.iter().enumerate() {
            acc = acc.add(&m1.mul(&self.product_except(Some(j), 1)).scale(-w * k));
        }
        acc
    }

    /// Support of the law, assembled as the complement of the images of the
    /// increasing branches of `z0` on the real line.
    pub fn support(&self) -> Result<SupportInfo> {
        if self.is_null() {
            return Ok(SupportInfo { intervals: Vec::new(), has_zero_atom: true, degenerate: true });
        }
        let crit = self.critical_poly().real_roots_with_multiplicity()?;
        let mut breaks: Vec<(f64, Break)> = vec![(0.0, Break::Singular)];
        for &(k, _) in &self.atoms {
            breaks.push((-1.0 / k, Break::Singular));
        }
        for &(c, mult) in &crit {
            if mult % 2 == 0 || breaks.iter().any(|&(b, kind)| kind == Break::Singular && (b - c).abs() <= 1e-12 * b.abs().max(1e-300)) {
                continue;
            }
            breaks.push((c, Break::Critical(self.z0_unchecked(c))));
        }
        breaks.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut images: Vec<(f64, f64)> = Vec::new();
        for i in 0..=breaks.len() {
            let left = if i == 0 { None } else { Some(breaks[i - 1]) };
            let right = breaks.get(i).copied();
            let probe = match (left, right) {
                (None, Some((b, _))) => b - b.abs().max(1.0),
                (Some((a, _)), None) => a + a.abs().max(1.0),
                (Some((a, _)), Some((b, _))) => {
                    if !(b > a) {
                        continue;
                    }
                    0.5 * (a + b)
                }
                (None, None) => unreachable!(),
            };
            if !(self.z0_prime(probe) > 0.0) {
                continue;
            }
            let lo = match left {
                None => 0.0,
                Some((_, Break::Singular)) => f64::NEG_INFINITY,
                Some((_, Break::Critical(z))) => z,
            };
            let hi = match right {
                None => 0.0,
                Some((_, Break::Singular)) => f64::INFINITY,
                Some((_, Break::Critical(z))) => z,
            };
            if lo < hi {
                images.push((lo, hi));
            }
        }
        images.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for (lo, hi) in images {
            match merged.last_mut() {
                Some(last) if lo < last.1 => last.1 = last.1.max(hi),
                _ => merged.push((lo, hi)),
            }
        }
        if merged.first().map(|x| x.0) != Some(f64::NEG_INFINITY) || merged.last().map(|x| x.1) != Some(f64::INFINITY) {
            return Err(Error::numerical(format!("unbounded support assembled from {merged:?}")));
        }
        let mut intervals = Vec::new();
        let mut has_zero_atom = false;
        for w in merged.windows(2) {
            let (lo, hi) = (w[0].1, w[1].0);
            if hi > lo {
                intervals.push((lo, hi));
            } else if lo == 0.0 && hi == 0.0 {
                has_zero_atom = true;
            }
        }
        Ok(SupportInfo { intervals, has_zero_atom, degenerate: false })
    }

    /// Real Stieltjes transform at `lambda` outside the support.
    pub fn m0_real(&self, lambda: f64) -> Result<f64> {
        if !lambda.is_finite() {
            return Err(Error::invalid("non-finite spectral argument"));
        }
        if self.is_null() {
            if lambda == 0.0 {
                return Err(Error::InSupport { lambda });
            }
            return Ok(-1.0 / lambda);
        }
        let roots = self.stieltjes_poly(lambda).real_roots_with_multiplicity()?;
        let tol = 1e-10 * lambda.abs().max(1.0);
        let mut best: Option<(f64, f64)> = None;
        for (r, _) in roots {
            if self.check_pole(r).is_err() {
                continue;
            }
            let m = self.polish(r, lambda);
            if !(self.z0_prime(m) > 0.0) {
                continue;
            }
            let res = (self.z0_unchecked(m) - lambda).abs();
            if res <= tol && best.is_none_or(|(_, b)| res < b) {
                best = Some((m, res));
            }
        }
        if let Some((m, _)) = best {
            return Ok(m);
        }
        if self.support()?.contains(lambda, SUPPORT_MARGIN * lambda.abs().max(1.0)) {
            Err(Error::InSupport { lambda })
        } else {
            Err(Error::numerical(format!("no admissible Stieltjes root at lambda = {lambda}")))
        }
    }

    fn polish(&self, mut m: f64, lambda: f64) -> f64 {
        for _ in 0..4 {
            let d = self.z0_prime(m);
            if !(d > 0.0) {
                break;
            }
            let step = (self.z0_unchecked(m) - lambda) / d;
            let next = m - step;
            if !next.is_finite() || next.signum() != m.signum() {
                break;
            }
            let before = (self.z0_unchecked(m) - lambda).abs();
            if (self.z0_unchecked(next) - lambda).abs() > before {
                break;
            }
            m = next;
            if step.abs() <= 1e-16 * m.abs() {
                break;
            }
        }
        m
    }

    /// `d m0 / d lambda = 1 / z0'(m0)`.
    pub fn dm0(&self, m: f64) -> f64 {
        1.0 / self.z0_prime(m)
    }

    /// Stieltjes transform at a non-real `z`, by Newton continuation from far
    /// above the real axis.
    pub fn m0_complex(&self, z: Complex64) -> Result<Complex64> {
        if z.im == 0.0 {
            return Err(Error::invalid("m0_complex needs a non-real argument"));
        }
        if z.im < 0.0 {
            return self.m0_complex(z.conj()).map(|m| m.conj());
        }
        if self.is_null() {
            return Ok(-z.inv());
        }
        let scale = self.atoms.iter().fold(z.norm().max(1.0), |s, &(k, w)| s.max(k.abs() * w.max(1.0)));
        let eta_far = (10.0 * scale).max(z.im);
        let mut m = -Complex64::new(z.re, eta_far).inv();
        let steps = ((eta_far / z.im).log2().ceil() as usize).max(1);
        for step in 0..=steps {
            let eta = if step == steps { z.im } else { z.im * (eta_far / z.im).powf(1.0 - step as f64 / steps as f64) };
            let target = Complex64::new(z.re, eta);
            m = self.newton_complex(m, target)?;
        }
        let res = (self.z0_complex(m)? - z).norm();
        if res > 1e-10 * z.norm().max(1.0) || m.im <= 0.0 {
            return Err(Error::numerical(format!("complex Stieltjes solve did not converge at {z} (residual {res:e})")));
        }
        Ok(m)
    }

    fn newton_complex(&self, mut m: Complex64, z: Complex64) -> Result<Complex64> {
        let tol = 1e-14 * z.norm().max(1.0);
        for _ in 0..200 {
            let f = self.z0_complex(m)? - z;
            if f.norm() <= tol {
                return Ok(m);
            }
            let mut step = f / self.z0_prime_complex(m);
            let mut next = m - step;
            let mut tries = 0;
            while (next.im <= 0.0 || !next.re.is_finite() || self.z0_complex(next).map_or(true, |v| (v - z).norm() >= f.norm()))
                && tries < 40
            {
                step *= 0.5;
                next = m - step;
                tries += 1;
            }
            if tries == 40 {
                return Ok(m);
            }
            if step.norm() <= 1e-16 * m.norm() {
                return Ok(next);
            }
            m = next;
        }
        Ok(m)
    }

    /// Smoothed CDF of `mu_0` on a grid, from `Im m0(x + i eta) / pi`.
    /// A point mass at 0 is added exactly rather than smoothed.
    pub fn bulk_cdf(&self, eta: f64, points: usize) -> Result<BulkCdf> {
        let support = self.support()?;
        let atom = if support.has_zero_atom { (1.0 - self.total_weight()).max(0.0) } else { 0.0 };
        if support.degenerate {
            return Ok(BulkCdf { xs: vec![0.0], fs: vec![1.0], atom: 1.0 });
        }
        let pad = 20.0 * eta;
        let (lo, hi) = (support.min_edge() - pad, support.max_edge() + pad);
        let n = points.max(2);
        let xs: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
        let mut dens = Vec::with_capacity(n);
        for &x in &xs {
            let m = self.m0_complex(Complex64::new(x, eta))?;
            let atom_part = atom * eta / (x * x + eta * eta);
            dens.push(((m.im - atom_part) / std::f64::consts::PI).max(0.0));
        }
        let mut fs = vec![0.0; n];
        for i in 1..n {
            fs[i] = fs[i - 1] + 0.5 * (dens[i] + dens[i - 1]) * (xs[i] - xs[i - 1]);
        }
        let total = fs[n - 1];
        if !(total > 0.0) {
            return Err(Error::numerical("smoothed density integrates to zero"));
        }
        let continuous = 1.0 - atom;
        for (f, &x) in fs.iter_mut().zip(&xs) {
            *f = *f / total * continuous + if x >= 0.0 { atom } else { 0.0 };
        }
        Ok(BulkCdf { xs, fs, atom })
    }
}

/// Tabulated CDF with linear interpolation.
#[derive(Debug, Clone)]
pub struct BulkCdf {
    pub xs: Vec<f64>,
    pub fs: Vec<f64>,
    pub atom: f64,
}

impl BulkCdf {
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x < self.xs[0] {
            return 0.0;
        }
        if x >= self.xs[n - 1] {
            return 1.0;
        }
        let i = self.xs.partition_point(|&t| t <= x) - 1;
        let (x0, x1) = (self.xs[i], self.xs[i + 1]);
        let t = (x - x0) / (x1 - x0);
        self.fs[i] + t * (self.fs[i + 1] - self.fs[i])
    }

    /// Kolmogorov distance between the empirical law of `sample` and this CDF.
    pub fn ks_distance(&self, sample: &[f64]) -> f64 {
        let mut s = sample.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len() as f64;
        s.iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = self.eval(x);
                (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
            })
            .fold(0.0, f64::max)
    }
}

/// Anything that supplies the bulk law and the functions `t_r`, `w_rs` as
/// functions of the Stieltjes variable `m`.
pub trait BulkLaw {
    fn n_eff(&self) -> f64;
    fn k(&self) -> usize;
    fn spectrum(&self) -> &Spectrum;
    fn sigma2(&self) -> &[f64];
    /// `t(m)` and `dt/dm`.
    fn t_of_m(&self, m: f64) -> (Vec<f64>, Vec<f64>);
    fn w_of_m(&self, m: f64) -> Matrix;

    fn support(&self) -> Result<SupportInfo> {
        self.spectrum().support()
    }

    fn m0(&self, lambda: f64) -> Result<f64> {
        self.spectrum().m0_real(lambda)
    }
}

/// Closed-form balanced-design path.
#[derive(Debug, Clone)]
pub struct MPContext {
    pub n_eff: f64,
    pub k: usize,
    /// `d[s - 1] = d_s`.
    pub d: Vec<f64>,
    /// `cs[s - 1] = C_s = sum_{r ⪰ s} c_r sigma_r^2`.
    pub cs: Vec<f64>,
    pub a: Vec<f64>,
    pub c: Vec<f64>,
    pub sigma2: Vec<f64>,
    /// `lattice[s][r]` over `0..=k`.
    pub lattice: Vec<Vec<bool>>,
    kappa: Vec<f64>,
    spectrum: Spectrum,
}

impl MPContext {
    pub fn new(design: &DesignSpec, sigma2: &[f64], a: &CoeffVector, n_eff: f64) -> Result<Self> {
        design.check_coeffs(a)?;
        let k = design.k;
        if sigma2.len() != k {
            return Err(Error::shape(format!("{} noise levels for k = {k}", sigma2.len())));
        }
        if sigma2.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::invalid("noise levels must be finite and >= 0"));
        }
        if !(n_eff >= 1.0) || !n_eff.is_finite() {
            return Err(Error::invalid(format!("effective dimension {n_eff} must be >= 1")));
        }
        let cs: Vec<f64> = (1..=k)
            .map(|s| (1..=k).filter(|&r| design.precedes(s, r)).map(|r| design.c[r - 1] * sigma2[r - 1]).sum())
            .collect();
        let d: Vec<f64> = design.d[1..].iter().map(|&x| x as f64).collect();
        let kappa: Vec<f64> = (0..k).map(|s| n_eff / d[s] * a.0[s] * cs[s]).collect();
        let spectrum = Spectrum::from_weighted((0..k).map(|s| (kappa[s], d[s] / n_eff)));
        Ok(Self {
            n_eff,
            k,
            d,
            cs,
            a: a.0.clone(),
            c: design.c.clone(),
            sigma2: sigma2.to_vec(),
            lattice: design.lattice.clone(),
            kappa,
            spectrum,
        })
    }

    pub fn z0_eval(&self, m: f64) -> Result<f64> {
        self.spectrum.z0(m)
    }

    pub fn z0_eval_complex(&self, m: Complex64) -> Result<Complex64> {
        self.spectrum.z0_complex(m)
    }

    pub fn m0_real(&self, lambda: f64) -> Result<f64> {
        self.spectrum.m0_real(lambda)
    }

    pub fn support(&self) -> Result<SupportInfo> {
        self.spectrum.support()
    }

    /// `b_s(m)` and `db_s/dm`, `s = 1..=k`.
    pub fn b_of_m(&self, m: f64) -> (Vec<f64>, Vec<f64>) {
        let mut b = Vec::with_capacity(self.k);
        let mut db = Vec::with_capacity(self.k);
        for s in 0..self.k {
            let den = 1.0 + self.kappa[s] * m;
            b.push(self.a[s] / den);
            db.push(-self.a[s] * self.kappa[s] / (den * den));
        }
        (b, db)
    }
}

impl BulkLaw for MPContext {
    fn n_eff(&self) -> f64 {
        self.n_eff
    }

    fn k(&self) -> usize {
        self.k
    }

    fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    fn sigma2(&self) -> &[f64] {
        &self.sigma2
    }

    fn t_of_m(&self, m: f64) -> (Vec<f64>, Vec<f64>) {
        let (b, db) = self.b_of_m(m);
        let mut t = vec![0.0; self.k];
        let mut dt = vec![0.0; self.k];
        for r in 1..=self.k {
            for s in 1..=self.k {
                if self.lattice[s][r] {
                    t[r - 1] += b[s - 1];
                    dt[r - 1] += db[s - 1];
                }
            }
            t[r - 1] *= self.c[r - 1];
            dt[r - 1] *= self.c[r - 1];
        }
        (t, dt)
    }

    fn w_of_m(&self, m: f64) -> Matrix {
        let (b, _) = self.b_of_m(m);
        Matrix::from_fn(self.k, self.k, |r, s| {
            let sum: f64 = (1..=self.k)
                .filter(|&t| self.lattice[t][r + 1] && self.lattice[t][s + 1])
                .map(|t| self.n_eff / self.d[t - 1] * b[t - 1] * b[t - 1])
                .sum();
            self.c[r] * self.c[s] * sum
        })
    }
}

/// Dense path for an arbitrary block matrix `F = D_sigma G D_sigma`.
#[derive(Debug, Clone)]
pub struct GeneralF {
    pub n_eff: f64,
    /// Block sizes `m_r`.
    pub dims: Vec<usize>,
    pub sigma2: Vec<f64>,
    /// `G` with blocks `N U_r' B U_s`.
    pub g: SymMatrix,
    /// Eigenvalues of `F`, ascending.
    pub eigenvalues: Vec<f64>,
    spectrum: Spectrum,
    /// Rows `alpha` of `Q' D G`, with `F = Q diag(eigenvalues) Q'`.
    p: Matrix,
    /// `block_weights[(r, alpha)] = sum_{i in block r} p[(alpha, i)]^2`.
    block_weights: Matrix,
}

impl GeneralF {
    pub fn from_g(g: SymMatrix, dims: Vec<usize>, sigma2: &[f64], n_eff: f64) -> Result<Self> {
        let total: usize = dims.iter().sum();
        if g.dim() != total || dims.len() != sigma2.len() {
            return Err(Error::shape(format!("block sizes {dims:?} do not fit a {0}x{0} matrix", g.dim())));
        }
        if !(n_eff >= 1.0) {
            return Err(Error::invalid("effective dimension must be >= 1"));
        }
        let mut dsig = Vec::with_capacity(total);
        for (r, &m) in dims.iter().enumerate() {
            dsig.extend(std::iter::repeat_n(sigma2[r].sqrt(), m));
        }
        let f = SymMatrix::from_fn(total, |i, j| dsig[i] * g[(i, j)] * dsig[j]);
        let eig = sym_eig(&f)?;
        let dg = Matrix::from_fn(total, total, |i, j| dsig[i] * g[(i, j)]);
        let p = eig.vectors.t_matmul(&dg)?;
        let k = dims.len();
        let mut block_weights = Matrix::zeros(k, total);
        let mut start = 0;
        for (r, &m) in dims.iter().enumerate() {
            for alpha in 0..total {
                block_weights[(r, alpha)] = (start..start + m).map(|i| p[(alpha, i)].powi(2)).sum();
            }
            start += m;
        }
        let spectrum = Spectrum::from_eigenvalues(&eig.values, n_eff, 1e-10);
        Ok(Self { n_eff, dims, sigma2: sigma2.to_vec(), g, eigenvalues: eig.values, spectrum, p, block_weights })
    }

    /// Builds `G_rs = N U_r' B(a) U_s` from a balanced design.
    pub fn from_design(design: &DesignSpec, a: &CoeffVector, sigma2: &[f64], n_eff: f64) -> Result<Self> {
        design.check_coeffs(a)?;
        let k = design.k;
        let offsets: Vec<usize> = design.m.iter().scan(0, |acc, &m| {
            let o = *acc;
            *acc += m;
            Some(o)
        }).collect();
        let total: usize = design.m.iter().sum();
        let mut g = Matrix::zeros(total, total);
        for t in 1..=k {
            if a.0[t - 1] == 0.0 {
                continue;
            }
            let scale = n_eff * a.0[t - 1] / design.d[t] as f64;
            let uv: Vec<Matrix> = (1..=k).map(|r| design.incidence_times_basis(r, t)).collect();
            for r in 0..k {
                for s in r..k {
                    let block = uv[r].matmul(&uv[s].transpose())?;
                    for i in 0..design.m[r] {
                        for j in 0..design.m[s] {
                            let v = scale * block[(i, j)];
                            g[(offsets[r] + i, offsets[s] + j)] += v;
                            if r != s {
                                g[(offsets[s] + j, offsets[r] + i)] += v;
                            }
                        }
                    }
                }
            }
        }
        Self::from_g(SymMatrix::symmetrize(&g)?, design.m.clone(), sigma2, n_eff)
    }

    /// `F = diag(values[r] Id_{dims[r]})` with unit noise levels.
    pub fn block_diagonal(values: &[f64], dims: &[usize], n_eff: f64) -> Result<Self> {
        let mut diag = Vec::new();
        for (&v, &m) in values.iter().zip(dims) {
            diag.extend(std::iter::repeat_n(v, m));
        }
        Self::from_g(SymMatrix::diagonal(&diag), dims.to_vec(), &vec![1.0; dims.len()], n_eff)
    }

    pub fn m0_general(&self, z: Complex64) -> Result<Complex64> {
        self.spectrum.m0_complex(z)
    }

    /// `t_r` at a complex Stieltjes value.
    pub fn t_complex(&self, m: Complex64) -> Vec<Complex64> {
        let k = self.dims.len();
        let mut start = 0;
        let mut out = Vec::with_capacity(k);
        for r in 0..k {
            let diag: f64 = (start..start + self.dims[r]).map(|i| self.g[(i, i)]).sum();
            let corr: Complex64 = self
                .eigenvalues
                .iter()
                .enumerate()
                .map(|(alpha, &lam)| self.block_weights[(r, alpha)] / (1.0 + m * lam))
                .sum();
            out.push((diag - m * corr) / self.n_eff);
            start += self.dims[r];
        }
        out
    }

    /// `G - m G D (Id + m F)^{-1} D G` at a real `m`.
    fn resolvent_block(&self, m: f64) -> Matrix {
        let total = self.g.dim();
        let mut h = self.g.as_matrix().clone();
        for (alpha, &lam) in self.eigenvalues.iter().enumerate() {
            let coef = -m / (1.0 + m * lam);
            let row = self.p.row(alpha);
            for i in 0..total {
                let ci = coef * row[i];
                if ci == 0.0 {
                    continue;
                }
                let hrow = h.row_mut(i);
                for j in 0..total {
                    hrow[j] += ci * row[j];
                }
            }
        }
        h
    }
}

impl BulkLaw for GeneralF {
    fn n_eff(&self) -> f64 {
        self.n_eff
    }

    fn k(&self) -> usize {
        self.dims.len()
    }

    fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    fn sigma2(&self) -> &[f64] {
        &self.sigma2
    }

    fn t_of_m(&self, m: f64) -> (Vec<f64>, Vec<f64>) {
        let t = self.t_complex(Complex64::new(m, 0.0)).into_iter().map(|x| x.re).collect();
        let dt = (0..self.dims.len())
            .map(|r| {
                -self
                    .eigenvalues
                    .iter()
                    .enumerate()
                    .map(|(alpha, &lam)| self.block_weights[(r, alpha)] / (1.0 + m * lam).powi(2))
                    .sum::<f64>()
                    / self.n_eff
            })
            .collect();
        (t, dt)
    }

    fn w_of_m(&self, m: f64) -> Matrix {
        let h = self.resolvent_block(m);
        let k = self.dims.len();
        let offsets: Vec<usize> = self.dims.iter().scan(0, |acc, &d| {
            let o = *acc;
            *acc += d;
            Some(o)
        }).collect();
        Matrix::from_fn(k, k, |r, s| {
            let mut sum = 0.0;
            for i in offsets[r]..offsets[r] + self.dims[r] {
                for j in offsets[s]..offsets[s] + self.dims[s] {
                    sum += h[(i, j)].powi(2);
                }
            }
            sum / self.n_eff
        })
    }
}
