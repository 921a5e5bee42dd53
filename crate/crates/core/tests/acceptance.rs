//! End-to-end acceptance checks. Each test prints one PASS/FAIL line to
//! stderr (bypassing the libtest capture) and asserts the verdict, except
//! the spurious-rate check which only warns.

use std::io::Write;
use std::time::Instant;

use num_complex::Complex64;
use varspike::covmodel::{sigma_hat, simulate};
use varspike::design::{CoeffVector, DesignKind, DesignSpec};
use varspike::harness::tables::reference_table;
use varspike::harness::{reproduce_table, TableReport};
use varspike::mp_law::{BulkLaw, GeneralF, MPContext};
use varspike::numerics::{sym_eigenvalues, Seed, SymMatrix};
use varspike::spike_theory::{predicted_outliers, t_derivative, t_matrix, t_matrix_sigma_form, t_vector};
use varspike::{ModelSpec, SpikeSubspace, SpikedCovariance};

const SEED: u64 = 20_240_601;

fn verdict(id: u32, name: &str, ok: bool, detail: &str) {
    let tag = if ok { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {id:>2} [{tag}] {name}: {detail}");
}

fn warn(id: u32, name: &str, ok: bool, detail: &str) {
    let tag = if ok { "PASS" } else { "WARN" };
    let _ = writeln!(std::io::stderr(), "criterion {id:>2} [{tag}] {name}: {detail}");
}

fn mean_of(report: &TableReport, row: &str, column: f64) -> f64 {
    report.cell(row, column).and_then(|c| c.mean).unwrap_or(f64::NAN)
}

fn unit(p: usize, i: usize) -> Vec<f64> {
    let mut e = vec![0.0; p];
    e[i] = 1.0;
    e
}

fn d1() -> DesignSpec {
    DesignSpec::build(DesignKind::Oneway { i: 300, j: 2 }).unwrap()
}

/// Sigma_1 = 6 e1 e1', Sigma_2 = 29 v v' + Id with v at 60 degrees to e1.
fn two_spike_model() -> ModelSpec {
    let p = 300;
    let mut v = vec![0.0; p];
    v[0] = 0.5;
    v[1] = 3f64.sqrt() / 2.0;
    ModelSpec::new(p, vec![SpikedCovariance::isotropic(0.0).with_spike(6.0, unit(p, 0)), SpikedCovariance::isotropic(1.0).with_spike(29.0, v)]).unwrap()
}

#[test]
fn criterion_01_rank_one_d1() {
    let cases = [(2.0, 2.00, 0.20, 0.84, 95.0), (6.0, 5.98, 0.53, 0.95, 100.0), (10.0, 9.96, 0.85, 0.97, 100.0)];
    let start = Instant::now();
    let reference = reference_table("d1-rank1").unwrap();
    let mut ok = true;
    let mut detail = Vec::new();
    for (mu, mean_ref, sd_ref, align_ref, pct_min) in cases {
        let col = reference.columns.iter().position(|&c| c == mu).unwrap();
        assert_eq!(reference.rows["estimated_eigenvalue"][col], Some((mean_ref, Some(sd_ref))));
        let report = reproduce_table(&format!("d1-rank1-mu{mu}"), 100, SEED).unwrap();
        let est = mean_of(&report, "estimated_eigenvalue", mu);
        let align = mean_of(&report, "estimated_alignment_e1", mu);
        let pct = mean_of(&report, "percent_estimated", mu);
        let tol = 3.0 * sd_ref / 10.0 + 0.02;
        let here = (est - mean_ref).abs() <= tol && (align - align_ref).abs() <= 0.02 && pct >= pct_min;
        ok &= here;
        detail.push(format!("mu={mu}: eig {est:.3} vs {mean_ref} (tol {tol:.3}), align {align:.3} vs {align_ref}, pct {pct:.0}>={pct_min}"));
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(1, "D1 rank-1 table", ok, &format!("{}; {secs:.0}s", detail.join("; ")));
    assert!(ok);
}

#[test]
fn criterion_02_d2_weak_spike_never_estimated() {
    let report = reproduce_table("d2-rank1-mu2", 100, SEED).unwrap();
    let pct = mean_of(&report, "percent_estimated", 2.0);
    let ok = pct == 0.0;
    verdict(2, "D2 mu=2 never estimated", ok, &format!("percent estimated {pct:.0}"));
    assert!(ok);
}

#[test]
fn criterion_03_aligned_de_aliasing() {
    let report = reproduce_table("d1-aligned-mu6", 100, SEED).unwrap();
    let est = mean_of(&report, "estimated_eigenvalue", 6.0);
    let est_e2 = mean_of(&report, "estimated_alignment_e2", 6.0);
    let manova_e2 = mean_of(&report, "manova_alignment_e2", 6.0);
    let tol = 3.0 * 1.07 / 10.0 + 0.02;
    let ok = (est - 6.11).abs() <= tol && (est_e2 - 0.01).abs() <= 0.03 && (manova_e2 - 0.14).abs() <= 0.03;
    verdict(
        3,
        "D1 aligned de-aliasing",
        ok,
        &format!("eig {est:.3} vs 6.11 (tol {tol:.3}), estimate e2 {est_e2:.3} vs 0.01, MANOVA e2 {manova_e2:.3} vs 0.14"),
    );
    assert!(ok);
}

#[test]
fn criterion_04_multispike() {
    let report = reproduce_table("d1-multispike", 100, SEED).unwrap();
    let targets = [(10.0, 11.08), (8.0, 8.65), (6.0, 6.38), (4.0, 4.36), (2.0, 2.80)];
    let mut ok = true;
    let mut detail = Vec::new();
    for (col, target) in targets {
        let cell = report.cell("estimated_eigenvalue", col).unwrap();
        let (m, sd) = (cell.mean.unwrap_or(f64::NAN), cell.sd.unwrap_or(f64::NAN));
        let tol = 3.0 * sd / (cell.n as f64).sqrt() + 0.05;
        ok &= (m - target).abs() <= tol;
        detail.push(format!("{m:.2} vs {target} (tol {tol:.2}, n {})", cell.n));
    }
    verdict(4, "D1 multi-spike means", ok, &detail.join(", "));
    assert!(ok);
}

/// det of `lambda Id - t_1 Sigma_1 - t_2 Sigma_2` on span(e1, e2), written
/// out by hand for the two-spike model.
fn det_k<B: BulkLaw>(law: &B, lambda: f64) -> f64 {
    let m0 = law.m0(lambda).unwrap();
    let (t, _) = law.t_of_m(m0);
    let (c, s) = (0.5, 3f64.sqrt() / 2.0);
    let s1 = [[6.0, 0.0], [0.0, 0.0]];
    let s2 = [[1.0 + 29.0 * c * c, 29.0 * c * s], [29.0 * c * s, 1.0 + 29.0 * s * s]];
    let k = |i: usize, j: usize| if i == j { lambda } else { 0.0 } - t[0] * s1[i][j] - t[1] * s2[i][j];
    k(0, 0) * k(1, 1) - k(0, 1) * k(1, 0)
}

#[test]
fn criterion_05_outlier_locations() {
    let design = d1();
    let model = two_spike_model();
    let sub = SpikeSubspace::from_model(&model);
    let a = design.manova_coefficients(1).unwrap();
    let law = MPContext::new(&design, &model.sigma2(), &a, (model.p - sub.dim()) as f64).unwrap();
    let support = law.support().unwrap();
    let predictions = predicted_outliers(&law, &sub, 1e-4).unwrap();
    let predicted: Vec<f64> = predictions.iter().map(|o| o.lambda).collect();
    // Theoretical sd of each outlier; a Gaussian's median |deviation| is 0.674 sd.
    let spread: Vec<f64> = predictions.iter().map(|o| o.nu.unwrap_or(f64::NAN).sqrt()).collect();

    // Independent oracle: scan det K for sign changes, then bisect.
    let mut oracle = Vec::new();
    let (step, lo, hi) = (0.005, -100.0, 100.0);
    let mut prev: Option<(f64, f64)> = None;
    let mut x = lo;
    while x <= hi {
        if support.contains(x, 1e-4) {
            prev = None;
        } else {
            let f = det_k(&law, x);
            if let Some((px, pf)) = prev {
                if pf.signum() != f.signum() {
                    let (mut a, mut b, mut fa) = (px, x, pf);
                    for _ in 0..80 {
                        let mid = 0.5 * (a + b);
                        let fm = det_k(&law, mid);
                        if fm.signum() == fa.signum() {
                            a = mid;
                            fa = fm;
                        } else {
                            b = mid;
                        }
                    }
                    oracle.push(0.5 * (a + b));
                }
            }
            prev = Some((x, f));
        }
        x += step;
    }
    oracle.sort_by(|a, b| b.total_cmp(a));
    let roots_agree = oracle.len() == predicted.len() && oracle.iter().zip(&predicted).all(|(o, p)| (o - p).abs() < 1e-6);

    let mut distances = Vec::new();
    for i in 0..200 {
        let y = simulate(&design, &model, Seed(SEED).for_replicate(i)).unwrap();
        let ms = design.mean_squares(&y).unwrap();
        let ev = sym_eigenvalues(&sigma_hat(&ms, &a).unwrap()).unwrap();
        for &lam in &predicted {
            distances.push(ev.iter().map(|x| (x - lam).abs()).fold(f64::INFINITY, f64::min));
        }
    }
    distances.sort_by(f64::total_cmp);
    let median = distances[distances.len() / 2];
    let ok = predicted.len() == 3 && roots_agree && median < 0.25;
    verdict(
        5,
        "outlier locations",
        ok,
        &format!("predicted {predicted:.4?}, oracle {oracle:.4?}, median matched distance {median:.4} (< 0.25; theoretical outlier sd {spread:.2?})"),
    );
    assert!(ok);
}

#[test]
fn criterion_06_fluctuation_clt() {
    let report = reproduce_table("clt-single", 1000, SEED).unwrap();
    let m = mean_of(&report, "standardized_mean", 6.0);
    let v = mean_of(&report, "standardized_variance", 6.0);
    let ok = (-0.1..=0.1).contains(&m) && (0.85..=1.15).contains(&v);
    verdict(6, "fluctuation CLT", ok, &format!("standardized mean {m:.4}, variance {v:.4}"));
    assert!(ok);
}

#[test]
fn criterion_07_bulk_law_and_confinement() {
    let design = d1();
    let p = 300;
    let model = ModelSpec::new(p, vec![SpikedCovariance::isotropic(0.0), SpikedCovariance::isotropic(1.0)]).unwrap();
    let a = design.manova_coefficients(1).unwrap();
    let law = MPContext::new(&design, &model.sigma2(), &a, p as f64).unwrap();
    let cdf = law.spectrum().bulk_cdf(1e-3, 4000).unwrap();
    let support = law.support().unwrap();
    let (mut worst_ks, mut confined) = (0.0f64, 0);
    for i in 0..100 {
        let y = simulate(&design, &model, Seed(SEED).for_replicate(i)).unwrap();
        let ev = sym_eigenvalues(&sigma_hat(&design.mean_squares(&y).unwrap(), &a).unwrap()).unwrap();
        worst_ks = worst_ks.max(cdf.ks_distance(&ev));
        if ev.iter().all(|&x| support.contains(x, 0.3)) {
            confined += 1;
        }
    }
    let ok = worst_ks < 0.06 && confined >= 99;
    verdict(7, "bulk law and confinement", ok, &format!("max KS {worst_ks:.4}, confined {confined}/100"));
    assert!(ok);
}

fn trace_conditions_hold(kind: DesignKind) -> bool {
    let d = DesignSpec::build(kind).unwrap();
    (1..=d.k).all(|r| {
        let b = d.estimation_matrix(&d.manova_coefficients(r).unwrap()).unwrap();
        (1..=d.k).all(|s| {
            let u = d.incidence(s);
            let g = u.t_matmul(&b.as_matrix().matmul(&u).unwrap()).unwrap();
            let tr: f64 = (0..u.cols()).map(|i| g[(i, i)]).sum();
            (tr - if s == r { 1.0 } else { 0.0 }).abs() < 1e-12
        })
    })
}

#[test]
fn criterion_08_analytic_suite() {
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };

    let (j, k) = (3usize, 4usize);
    let one = DesignSpec::build(DesignKind::Oneway { i: 5, j }).unwrap();
    check("one-way a1", one.manova_coefficients(1).unwrap().0 == vec![1.0 / j as f64, -1.0 / j as f64]);
    check("one-way a2", one.manova_coefficients(2).unwrap().0 == vec![0.0, 1.0]);
    let nested = DesignSpec::build(DesignKind::NestedTwoway { i: 3, j, k }).unwrap();
    let jk = (j * k) as f64;
    check("nested a1", nested.manova_coefficients(1).unwrap().0 == vec![1.0 / jk, -1.0 / jk, 0.0]);
    for kind in [DesignKind::Oneway { i: 4, j: 3 }, DesignKind::NestedTwoway { i: 3, j: 2, k: 2 }, DesignKind::CrossedTwoway { i: 2, j: 3, k: 2, l: 2 }] {
        check("trace conditions", trace_conditions_hold(kind));
    }

    // Null one-way restricted to stratum 2: 5m^2 + 5m + 1 = 0 at lambda = 5.
    let square = MPContext::new(&DesignSpec::build(DesignKind::Oneway { i: 300, j: 2 }).unwrap(), &[0.0, 1.0], &CoeffVector(vec![0.0, 1.0]), 300.0).unwrap();
    check("m0 quadratic", (square.m0(5.0).unwrap() - (-5.0 + 5f64.sqrt()) / 10.0).abs() < 1e-12);
    let half = MPContext::new(&DesignSpec::build(DesignKind::Oneway { i: 600, j: 2 }).unwrap(), &[0.0, 1.0], &CoeffVector(vec![0.0, 1.0]), 300.0).unwrap();
    let s = half.support().unwrap();
    let r2 = 2f64.sqrt();
    check(
        "support edges",
        s.intervals.len() == 1 && (s.intervals[0].0 - (3.0 - 2.0 * r2) / 2.0).abs() < 1e-9 && (s.intervals[0].1 - (3.0 + 2.0 * r2) / 2.0).abs() < 1e-9,
    );

    let design = d1();
    let model = two_spike_model();
    let sub = SpikeSubspace::from_model(&model);
    let sigma2 = model.sigma2();
    let law = MPContext::new(&design, &sigma2, &design.manova_coefficients(1).unwrap(), 298.0).unwrap();
    let sup = law.support().unwrap();
    for lambda in [-40.0, -6.0, -3.0, 3.0, 4.5, 6.5, 9.0, 30.0] {
        if sup.contains(lambda, 0.0) {
            continue;
        }
        let tf = t_vector(&law, lambda).unwrap();
        let (kt, ks) = (t_matrix(&tf, &sub), t_matrix_sigma_form(&tf, &sub, &sigma2));
        let l = sub.dim();
        check("T-form equivalence", (0..l).all(|i| (0..l).all(|j| (kt[(i, j)] - ks[(i, j)]).abs() < 1e-9)));
        let mut d = t_derivative(&tf, &sub, &sigma2);
        d.add_scaled(-1.0, &SymMatrix::identity(l)).unwrap();
        check("dT - Id PSD", sym_eigenvalues(&d).unwrap()[0] >= -1e-9);
    }

    let small = DesignSpec::build(DesignKind::NestedTwoway { i: 4, j: 3, k: 2 }).unwrap();
    let sig = [0.7, 1.3, 0.9];
    for r in 1..=3 {
        let a = small.manova_coefficients(r).unwrap();
        let bal = MPContext::new(&small, &sig, &a, 10.0).unwrap();
        let gen = GeneralF::from_design(&small, &a, &sig, 10.0).unwrap();
        let edge = bal.support().unwrap().max_edge();
        for lambda in [edge + 0.5, edge + 3.0, -40.0] {
            let (mb, mg) = (bal.m0(lambda).unwrap(), gen.m0(lambda).unwrap());
            let (tb, _) = bal.t_of_m(mb);
            let (tg, _) = gen.t_of_m(mb);
            let (wb, wg) = (bal.w_of_m(mb), gen.w_of_m(mb));
            let agree = (mb - mg).abs() < 1e-8
                && (0..3).all(|s| (tb[s] - tg[s]).abs() < 1e-8 && (0..3).all(|u| (wb[(s, u)] - wg[(s, u)]).abs() < 1e-8));
            check("balanced vs general", agree);
        }
    }

    failures.dedup();
    let ok = failures.is_empty();
    verdict(8, "exact analytic suite", ok, if ok { "all identities hold" } else { "failed" });
    assert!(ok, "{failures:?}");
}

#[test]
fn criterion_09_spurious_rate_soft() {
    let report = reproduce_table("d1-spurious-mu30", 100, SEED).unwrap();
    let pct = mean_of(&report, "percent_spurious", 30.0);
    let positive = mean_of(&report, "percent_spurious_positive", 30.0);
    let ok = (pct - 18.0).abs() <= 10.0;
    warn(9, "spurious rate (soft)", ok, &format!("percent spurious {pct:.0} vs 18 (+-10); with a positive estimate {positive:.0}"));
}

fn z_grid() -> Vec<Complex64> {
    let mut zs = Vec::new();
    for re in [-3.0, -0.5, 0.3, 1.0, 2.5, 6.0] {
        for im in [0.05, 0.5, 2.0] {
            zs.push(Complex64::new(re, im));
        }
    }
    zs
}

#[test]
fn criterion_10_transform_identities() {
    let n_eff = 200.0;
    let f = SymMatrix::from_fn(150, |i, j| {
        if i == j {
            ((i * 37 % 11) as f64 - 4.0) / 3.0
        } else {
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            0.3 * (((i + 2 * j) * 13 % 7) as f64 - 3.0) / 150f64.sqrt() * sign
        }
    });
    let law = GeneralF::from_g(f, vec![150], &[1.0], n_eff).unwrap();
    let (a1, a2, m1, m2) = (1.0, -0.6, 120usize, 80usize);
    let full = GeneralF::block_diagonal(&[a1, a2], &[m1, m2], n_eff).unwrap();
    let single = GeneralF::block_diagonal(&[a1], &[m1], n_eff).unwrap();
    let (mut worst_t, mut worst_sub) = (0.0f64, 0.0f64);
    for z in z_grid() {
        let m0 = law.m0_general(z).unwrap();
        worst_t = worst_t.max((m0 * law.t_complex(m0)[0] - (z * m0 + 1.0)).norm());
        let m = full.m0_general(z).unwrap();
        let omega = z - (m2 as f64 / n_eff) * a2 / (1.0 + a2 * m);
        let m_check = single.m0_general(omega).unwrap();
        worst_sub = worst_sub.max((m - m_check).norm()).max((full.t_complex(m)[0] - single.t_complex(m_check)[0]).norm());
    }
    let ok = worst_t < 1e-8 && worst_sub < 1e-8;
    verdict(10, "transform identities", ok, &format!("T-transform residual {worst_t:.1e}, subordination residual {worst_sub:.1e}"));
    assert!(ok);
}
