//! Spike estimation by sweeping the linear combination `a` over the unit
//! sphere.
//!
//! For each direction the outliers of `Sigma_hat(a) = sum_s a_s MS_s` beyond
//! the bulk are located, and `t(lambda_hat, a)` is evaluated at each one. A
//! spike of component `r` shows up where `t_s = 0` for every `s != r`; there
//! `lambda_hat / t_r` estimates the spike and the sample eigenvector estimates
//! its direction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covmodel::estimate_noise_variances;
use crate::design::{CoeffVector, DesignSpec, MeanSquares};
use crate::error::{Error, Result};
use crate::mp_law::{BulkLaw, MPContext};
use crate::numerics::{circle_direction, dot, normalize, sphere_triangulation, sym_eig, Matrix, SymMatrix, Tridiagonal};

const MAX_REFINE_ITERS: usize = 200;
const DEDUP_TOL: f64 = 1e-4;
const T_R_FLOOR: f64 = 1e-8;
/// Rank deficiency below which the pencil is not projected.
const RANK_TOL: f64 = 1e-10;
const MIN_GRID: usize = 16;

/// Where the noise levels fed to the bulk law come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sigma2Source {
    Known(Vec<f64>),
    /// Trimmed-trace estimates from the MANOVA estimators, dropping `trim`
    /// largest-magnitude eigenvalues of each.
    Estimated { trim: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    /// Target component, 1-based.
    pub r: usize,
    pub delta: f64,
    pub grid: usize,
    pub refine_tol: f64,
    pub sigma2_source: Sigma2Source,
}

impl SweepConfig {
    pub fn new(r: usize) -> Self {
        Self { r, delta: 0.5, grid: 200, refine_tol: 1e-8, sigma2_source: Sigma2Source::Estimated { trim: 1 } }
    }

    pub fn with_sigma2(mut self, source: Sigma2Source) -> Self {
        self.sigma2_source = source;
        self
    }

    fn validate(&self, k: usize) -> Result<()> {
        if self.r == 0 || self.r > k {
            return Err(Error::invalid(format!("component r = {} outside 1..={k}", self.r)));
        }
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return Err(Error::invalid(format!("delta = {} must be positive", self.delta)));
        }
        if self.grid < MIN_GRID {
            return Err(Error::invalid(format!("grid = {} is too coarse (minimum {MIN_GRID})", self.grid)));
        }
        if !(self.refine_tol > 0.0) {
            return Err(Error::invalid("refine_tol must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpikeEstimate {
    pub mu_hat: f64,
    pub v_hat: Vec<f64>,
    /// Unit direction at which the estimate was taken.
    pub a: Vec<f64>,
    pub lambda_hat: f64,
    pub t_at_solution: Vec<f64>,
    /// `m0(lambda_hat) t(lambda_hat)`, the observed locus point.
    pub s_point: Vec<f64>,
}

/// One outlier seen during the sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocusObservation {
    pub a: Vec<f64>,
    pub lambda_hat: f64,
    pub s: Vec<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ObservedLocus {
    pub points: Vec<LocusObservation>,
}

/// Estimates together with the bookkeeping of the sweep.
#[derive(Debug, Clone, Serialize)]
pub struct EstimationReport {
    pub estimates: Vec<SpikeEstimate>,
    pub sigma2: Vec<f64>,
    /// Brackets whose refinement lost the outlier into the bulk.
    pub abandoned: usize,
    pub warnings: Vec<String>,
}

/// The matrices `MS_s`, optionally projected onto the range of their sum.
struct Pencil {
    mats: Vec<SymMatrix>,
    basis: Option<Matrix>,
}

impl Pencil {
    fn new(ms: &MeanSquares) -> Result<Self> {
        let p = ms.p();
        let total = SymMatrix::linear_combination(&vec![1.0; ms.k()], &ms.ms)?;
        // A cheap test first: full rank needs at least p degrees of freedom.
        let eig = sym_eig(&total)?;
        let top = eig.values.last().copied().unwrap_or(0.0).abs();
        let keep: Vec<usize> = (0..p).filter(|&i| eig.values[i] > RANK_TOL * top).collect();
        if keep.len() == p || keep.is_empty() {
            return Ok(Self { mats: ms.ms.clone(), basis: None });
        }
        let q = Matrix::from_columns(&keep.iter().map(|&i| eig.vector(i)).collect::<Vec<_>>())?;
        let mats = ms.ms.iter().map(|m| m.congruence(&q)).collect::<Result<Vec<_>>>()?;
        Ok(Self { mats, basis: Some(q) })
    }

    fn assemble(&self, a: &[f64]) -> Result<SymMatrix> {
        SymMatrix::linear_combination(a, &self.mats)
    }

    fn lift(&self, v: Vec<f64>) -> Vec<f64> {
        match &self.basis {
            Some(q) => {
                let mut x = q.matvec(&v);
                normalize(&mut x);
                x
            }
            None => v,
        }
    }
}

/// Outliers above the bulk at one direction, largest first.
struct DirectionEval {
    a: Vec<f64>,
    tri: Tridiagonal,
    /// `(lambda, t, m0)` per outlier.
    outliers: Vec<(f64, Vec<f64>, f64)>,
}

impl DirectionEval {
    fn g(&self, rank: usize, r: usize) -> Option<Vec<f64>> {
        self.outliers.get(rank).map(|(_, t, _)| other_components(t, r))
    }
}

fn other_components(t: &[f64], r: usize) -> Vec<f64> {
    t.iter().enumerate().filter(|&(s, _)| s + 1 != r).map(|(_, &x)| x).collect()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Spike estimator for one data set.
pub struct Estimator<'a> {
    design: &'a DesignSpec,
    pencil: Pencil,
    sigma2: Vec<f64>,
    n_eff: f64,
    cfg: SweepConfig,
}

impl<'a> Estimator<'a> {
    pub fn new(ms: &MeanSquares, design: &'a DesignSpec, cfg: SweepConfig) -> Result<Self> {
        let k = design.k;
        if ms.k() != k {
            return Err(Error::shape(format!("{} mean squares for a design with k = {k}", ms.k())));
        }
        if k > 3 {
            return Err(Error::Unsupported(format!("spike estimation for k = {k} > 3")));
        }
        cfg.validate(k)?;
        let sigma2 = match &cfg.sigma2_source {
            Sigma2Source::Known(s) => {
                if s.len() != k {
                    return Err(Error::shape(format!("{} noise levels for k = {k}", s.len())));
                }
                s.clone()
            }
            Sigma2Source::Estimated { trim } => estimate_noise_variances(ms, design, *trim)?,
        };
        Ok(Self { design, pencil: Pencil::new(ms)?, sigma2, n_eff: ms.p() as f64, cfg })
    }

    pub fn sigma2(&self) -> &[f64] {
        &self.sigma2
    }

    /// Whether the pencil was projected onto a proper subspace.
    pub fn is_reduced(&self) -> bool {
        self.pencil.basis.is_some()
    }

    fn eval(&self, a: &[f64]) -> Result<DirectionEval> {
        let coeffs = CoeffVector(a.to_vec());
        let ctx = MPContext::new(self.design, &self.sigma2, &coeffs, self.n_eff)?;
        let lower = ctx.support()?.i_delta_lower(self.cfg.delta);
        let tri = Tridiagonal::new(&self.pencil.assemble(a)?)?;
        let values = tri.eigenvalues()?;
        let mut outliers = Vec::new();
        for &lambda in values.iter().rev().take_while(|&&l| l >= lower) {
            let m0 = ctx.m0_real(lambda)?;
            let (t, _) = ctx.t_of_m(m0);
            outliers.push((lambda, t, m0));
        }
        Ok(DirectionEval { a: a.to_vec(), tri, outliers })
    }

    fn directions(&self) -> Result<Vec<Vec<f64>>> {
        match self.design.k {
            1 => Ok(vec![vec![1.0], vec![-1.0]]),
            2 => {
                let g = crate::numerics::circle_points(self.cfg.grid);
                Ok((0..g).map(|i| circle_direction(2.0 * std::f64::consts::PI * i as f64 / g as f64)).collect())
            }
            3 => Ok(sphere_triangulation(self.cfg.grid).0),
            k => Err(Error::Unsupported(format!("k = {k}"))),
        }
    }

    fn sweep(&self, dirs: &[Vec<f64>]) -> Result<Vec<DirectionEval>> {
        dirs.par_iter().map(|a| self.eval(a)).collect()
    }

    /// All outliers seen on the grid, with their locus points.
    pub fn observed_locus(&self) -> Result<ObservedLocus> {
        let evals = self.sweep(&self.directions()?)?;
        let points = evals
            .iter()
            .flat_map(|e| {
                e.outliers.iter().map(move |(lambda, t, m0)| LocusObservation {
                    a: e.a.clone(),
                    lambda_hat: *lambda,
                    s: t.iter().map(|x| m0 * x).collect(),
                })
            })
            .collect();
        Ok(ObservedLocus { points })
    }

    pub fn estimate(&self) -> Result<EstimationReport> {
        let dirs = self.directions()?;
        let evals = self.sweep(&dirs)?;
        let r = self.cfg.r;
        let mut solutions: Vec<(Vec<f64>, usize)> = Vec::new();
        let mut abandoned = 0;
        match self.design.k {
            1 => {
                for (rank, _) in evals[0].outliers.iter().enumerate() {
                    solutions.push((vec![1.0], rank));
                }
            }
            2 => {
                let n = evals.len();
                for i in 0..n {
                    let (e0, e1) = (&evals[i], &evals[(i + 1) % n]);
                    let phi0 = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                    let phi1 = phi0 + 2.0 * std::f64::consts::PI / n as f64;
                    for rank in 0..e0.outliers.len().min(e1.outliers.len()) {
                        let g0 = e0.g(rank, r).unwrap()[0];
                        let g1 = e1.g(rank, r).unwrap()[0];
                        if g0 == 0.0 {
                            solutions.push((e0.a.clone(), rank));
                        } else if g1 != 0.0 && g0.signum() != g1.signum() {
                            match self.refine_circle(phi0, g0, phi1, g1, rank)? {
                                Some(a) => solutions.push((a, rank)),
                                None => abandoned += 1,
                            }
                        }
                    }
                }
            }
            _ => {
                let (_, tris) = sphere_triangulation(self.cfg.grid);
                for tri in &tris {
                    let es = [&evals[tri[0]], &evals[tri[1]], &evals[tri[2]]];
                    let count = es.iter().map(|e| e.outliers.len()).min().unwrap();
                    for rank in 0..count {
                        let gs: Vec<Vec<f64>> = es.iter().map(|e| e.g(rank, r).unwrap()).collect();
                        let Some(w) = barycentric_zero(&gs) else { continue };
                        let mut start: Vec<f64> = (0..3).map(|i| (0..3).map(|j| w[j] * es[j].a[i]).sum()).collect();
                        if normalize(&mut start) == 0.0 {
                            continue;
                        }
                        match self.refine_sphere(&start, rank)? {
                            Some(a) => solutions.push((a, rank)),
                            None => abandoned += 1,
                        }
                    }
                }
            }
        }

        let mut warnings = Vec::new();
        let mut estimates: Vec<SpikeEstimate> = Vec::new();
        for (a, rank) in solutions {
            let e = self.eval(&a)?;
            let Some((lambda, t, m0)) = e.outliers.get(rank).cloned() else {
                abandoned += 1;
                continue;
            };
            let tr = t[r - 1];
            if tr.abs() < T_R_FLOOR {
                warnings.push(format!("discarded outlier {lambda:.6} at a = {a:?}: t_r = {tr:.3e}"));
                continue;
            }
            let s_point: Vec<f64> = t.iter().map(|x| m0 * x).collect();
            if estimates.iter().any(|x| dist(&x.s_point, &s_point) < DEDUP_TOL) {
                continue;
            }
            let v_hat = self.pencil.lift(e.tri.eigenvector(lambda));
            estimates.push(SpikeEstimate { mu_hat: lambda / tr, v_hat, a, lambda_hat: lambda, t_at_solution: t, s_point });
        }
        estimates.sort_by(|x, y| y.mu_hat.total_cmp(&x.mu_hat));
        Ok(EstimationReport { estimates, sigma2: self.sigma2.clone(), abandoned, warnings })
    }

    /// `g` at angle `phi` for the outlier of the given rank, or `None` when
    /// that outlier has merged into the bulk.
    fn g_circle(&self, phi: f64, rank: usize) -> Result<Option<f64>> {
        let e = self.eval(&circle_direction(phi))?;
        Ok(e.g(rank, self.cfg.r).map(|g| g[0]))
    }

    /// Illinois iteration on a sign-change bracket in angle.
    fn refine_circle(&self, mut pa: f64, mut ga: f64, mut pb: f64, mut gb: f64, rank: usize) -> Result<Option<Vec<f64>>> {
        let tol = self.cfg.refine_tol;
        if ga.abs() <= tol {
            return Ok(Some(circle_direction(pa)));
        }
        if gb.abs() <= tol {
            return Ok(Some(circle_direction(pb)));
        }
        for _ in 0..MAX_REFINE_ITERS {
            let mut pc = pb - gb * (pb - pa) / (gb - ga);
            if !(pc > pa.min(pb) && pc < pa.max(pb)) {
                pc = 0.5 * (pa + pb);
            }
            let Some(gc) = self.g_circle(pc, rank)? else { return Ok(None) };
            if gc.abs() <= tol || (pb - pa).abs() < 1e-15 {
                return Ok(Some(circle_direction(pc)));
            }
            if gc.signum() != gb.signum() {
                pa = pb;
                ga = gb;
            } else {
                ga *= 0.5;
            }
            pb = pc;
            gb = gc;
        }
        Ok(Some(circle_direction(pb)))
    }

    /// Damped Newton on a tangent-plane chart of the sphere.
    fn refine_sphere(&self, start: &[f64], rank: usize) -> Result<Option<Vec<f64>>> {
        let r = self.cfg.r;
        let tol = self.cfg.refine_tol;
        let mut a = start.to_vec();
        let Some(mut g) = self.eval(&a)?.g(rank, r) else { return Ok(None) };
        for _ in 0..MAX_REFINE_ITERS {
            if max_abs(&g) <= tol {
                return Ok(Some(a));
            }
            let (e1, e2) = tangent_basis(&a);
            let h = 1e-6;
            let mut jac = [[0.0; 2]; 2];
            for (col, e) in [&e1, &e2].into_iter().enumerate() {
                let b = chart(&a, e, h, &[0.0; 3]);
                let Some(gb) = self.eval(&b)?.g(rank, r) else { return Ok(None) };
                for row in 0..2 {
                    jac[row][col] = (gb[row] - g[row]) / h;
                }
            }
            let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
            if det.abs() < 1e-300 {
                return Ok(None);
            }
            let mut dx = [
                -(jac[1][1] * g[0] - jac[0][1] * g[1]) / det,
                -(-jac[1][0] * g[0] + jac[0][0] * g[1]) / det,
            ];
            let len = dx[0].hypot(dx[1]);
            if len > 0.2 {
                dx = [dx[0] * 0.2 / len, dx[1] * 0.2 / len];
            }
            let mut accepted = false;
            for _ in 0..30 {
                let b = chart(&a, &e1, dx[0], &e2.iter().map(|x| x * dx[1]).collect::<Vec<_>>());
                if let Some(gb) = self.eval(&b)?.g(rank, r) {
                    if max_abs(&gb) < max_abs(&g) {
                        a = b;
                        g = gb;
                        accepted = true;
                        break;
                    }
                }
                dx = [dx[0] * 0.5, dx[1] * 0.5];
            }
            if !accepted {
                return Ok(None);
            }
        }
        Ok(if max_abs(&g) <= tol * 1e3 { Some(a) } else { None })
    }
}

fn dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// `normalize(a + x e + extra)`.
fn chart(a: &[f64], e: &[f64], x: f64, extra: &[f64]) -> Vec<f64> {
    let mut b: Vec<f64> = (0..a.len()).map(|i| a[i] + x * e[i] + extra[i]).collect();
    normalize(&mut b);
    b
}

fn tangent_basis(a: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for j in 0..3 {
        let mut e = vec![0.0; 3];
        e[j] = 1.0;
        let mut proj = dot(&e, a);
        for (i, x) in e.iter_mut().enumerate() {
            *x -= proj * a[i];
        }
        for prev in out.iter() {
            proj = dot(&e, prev);
            for (i, x) in e.iter_mut().enumerate() {
                *x -= proj * prev[i];
            }
        }
        if normalize(&mut e) > 1e-6 {
            out.push(e);
        }
        if out.len() == 2 {
            break;
        }
    }
    let e2 = out.pop().unwrap();
    let e1 = out.pop().unwrap();
    (e1, e2)
}

/// Barycentric weights of the origin in the triangle spanned by three
/// points of the plane, if it lies inside.
fn barycentric_zero(g: &[Vec<f64>]) -> Option<[f64; 3]> {
    let (x1, y1, x2, y2, x3, y3) = (g[0][0], g[0][1], g[1][0], g[1][1], g[2][0], g[2][1]);
    let det = (y2 - y3) * (x1 - x3) + (x3 - x2) * (y1 - y3);
    if det.abs() < 1e-300 {
        return None;
    }
    let w1 = ((y2 - y3) * (-x3) + (x3 - x2) * (-y3)) / det;
    let w2 = ((y3 - y1) * (-x3) + (x1 - x3) * (-y3)) / det;
    let w3 = 1.0 - w1 - w2;
    (w1 >= 0.0 && w2 >= 0.0 && w3 >= 0.0).then_some([w1, w2, w3])
}

/// Runs the sweep and returns the estimates, largest first.
pub fn estimate_spikes(ms: &MeanSquares, design: &DesignSpec, cfg: &SweepConfig) -> Result<Vec<SpikeEstimate>> {
    Ok(Estimator::new(ms, design, cfg.clone())?.estimate()?.estimates)
}

pub fn observed_locus(ms: &MeanSquares, design: &DesignSpec, cfg: &SweepConfig) -> Result<ObservedLocus> {
    Estimator::new(ms, design, cfg.clone())?.observed_locus()
}

/// One row per estimate: `mu_hat, lambda_hat, a_*, t_*, s_*`.
pub fn estimates_to_csv(estimates: &[SpikeEstimate], k: usize) -> String {
    let mut head = vec!["mu_hat".to_string(), "lambda_hat".to_string()];
    for prefix in ["a", "t", "s"] {
        head.extend((1..=k).map(|i| format!("{prefix}_{i}")));
    }
    let mut out = head.join(",");
    out.push('\n');
    for e in estimates {
        let mut row = vec![e.mu_hat, e.lambda_hat];
        row.extend(&e.a);
        row.extend(&e.t_at_solution);
        row.extend(&e.s_point);
        out.push_str(&row.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    out
}

pub fn locus_to_csv(locus: &ObservedLocus, k: usize) -> String {
    let mut head = vec!["lambda_hat".to_string()];
    for prefix in ["a", "s"] {
        head.extend((1..=k).map(|i| format!("{prefix}_{i}")));
    }
    let mut out = head.join(",");
    out.push('\n');
    for p in &locus.points {
        let mut row = vec![p.lambda_hat];
        row.extend(&p.a);
        row.extend(&p.s);
        out.push_str(&row.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    out
}
