//! Real polynomials (coefficients in ascending order) and real-root isolation.
//!
//! Roots are isolated recursively: the real roots of `p'` split the line into
//! intervals on which `p` is monotone, so each interval holds at most one root
//! and bisection finds it. A critical point where `p` vanishes is a multiple
//! root whose multiplicity is one more than its multiplicity in `p'`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Poly {
    coeffs: Vec<f64>,
}

impl Poly {
    /// `coeffs[i]` multiplies `x^i`. Exact trailing zeros are dropped.
    pub fn new(mut coeffs: Vec<f64>) -> Self {
        while coeffs.len() > 1 && *coeffs.last().unwrap() == 0.0 {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(0.0);
        }
        Self { coeffs }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(vec![c])
    }

    /// `c0 + c1 x`.
    pub fn linear(c0: f64, c1: f64) -> Self {
        Self::new(vec![c0, c1])
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    /// `sum |c_i| |x|^i`, the natural size of rounding error in `eval(x)`.
    pub fn scale_at(&self, x: f64) -> f64 {
        let ax = x.abs();
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * ax + c.abs())
    }

    pub fn derivative(&self) -> Poly {
        if self.coeffs.len() <= 1 {
            return Poly::constant(0.0);
        }
        Poly::new(self.coeffs.iter().enumerate().skip(1).map(|(i, &c)| i as f64 * c).collect())
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = vec![0.0; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, &a) in self.coeffs.iter().enumerate() {
            for (j, &b) in other.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly::new(out)
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let n = self.coeffs.len().max(other.coeffs.len());
        Poly::new(
            (0..n)
                .map(|i| self.coeffs.get(i).copied().unwrap_or(0.0) + other.coeffs.get(i).copied().unwrap_or(0.0))
                .collect(),
        )
    }

    pub fn scale(&self, s: f64) -> Poly {
        Poly::new(self.coeffs.iter().map(|c| c * s).collect())
    }

    /// Distinct real roots with multiplicities, ascending.
    pub fn real_roots_with_multiplicity(&self) -> Result<Vec<(f64, usize)>> {
        if self.is_zero() {
            return Err(Error::invalid("zero polynomial has no isolated roots"));
        }
        Ok(isolate(self))
    }
}

fn isolate(p: &Poly) -> Vec<(f64, usize)> {
    match p.degree() {
        0 => Vec::new(),
        1 => vec![(-p.coeffs[0] / p.coeffs[1], 1)],
        _ => {
            let dp = p.derivative();
            let crit = isolate(&dp);
            let lead = *p.coeffs.last().unwrap();
            let bound = 1.0 + p.coeffs[..p.degree()].iter().map(|c| (c / lead).abs()).fold(0.0, f64::max);

            let mut roots = Vec::new();
            let mut breakpoints = vec![(-bound, false)];
            for &(c, mult) in &crit {
                let is_root = p.eval(c).abs() <= 1e-12 * p.scale_at(c);
                if is_root {
                    roots.push((c, mult + 1));
                }
                breakpoints.push((c, is_root));
            }
            breakpoints.push((bound, false));
            breakpoints.sort_by(|a, b| a.0.total_cmp(&b.0));

            for w in breakpoints.windows(2) {
                let ((a, ra), (b, rb)) = (w[0], w[1]);
                if ra || rb || a >= b {
                    continue;
                }
                let (fa, fb) = (p.eval(a), p.eval(b));
                if fa == 0.0 {
                    roots.push((a, 1));
                } else if fa.signum() != fb.signum() && fb != 0.0 {
                    roots.push((bisect(p, a, b, fa), 1));
                }
            }
            if let Some(&(b, rb)) = breakpoints.last() {
                if !rb && p.eval(b) == 0.0 {
                    roots.push((b, 1));
                }
            }
            roots.sort_by(|a, b| a.0.total_cmp(&b.0));
            roots.dedup_by(|a, b| a.0 == b.0);
            roots
        }
    }
}

/// Bisection to machine precision on a bracket with `sign(p(a)) = sign(fa)`.
fn bisect(p: &Poly, mut a: f64, mut b: f64, fa: f64) -> f64 {
    let sa = fa.signum();
    for _ in 0..2000 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let fm = p.eval(mid);
        if fm == 0.0 {
            return mid;
        }
        if fm.signum() == sa {
            a = mid;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

/// Real roots of the polynomial with ascending coefficients `coeffs`,
/// listed with multiplicity and in ascending order, optionally restricted to
/// the closed interval `interval`.
pub fn real_poly_roots(coeffs: &[f64], interval: Option<(f64, f64)>) -> Result<Vec<f64>> {
    if coeffs.iter().any(|c| !c.is_finite()) {
        return Err(Error::invalid("non-finite polynomial coefficient"));
    }
    let p = Poly::new(coeffs.to_vec());
    let roots = p.real_roots_with_multiplicity()?;
    let mut out = Vec::new();
    for (r, m) in roots {
        if let Some((lo, hi)) = interval {
            if r < lo || r > hi {
                continue;
            }
        }
        out.extend(std::iter::repeat_n(r, m));
    }
    Ok(out)
}
