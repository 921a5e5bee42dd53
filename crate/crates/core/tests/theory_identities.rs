use num_complex::Complex64;
use varspike::design::{DesignKind, DesignSpec};
use varspike::mp_law::{BulkLaw, GeneralF, MPContext};
use varspike::numerics::{sym_eigenvalues, Matrix, SymMatrix};
use varspike::spike_theory::{t_derivative, t_matrix, t_matrix_sigma_form, t_vector};
use varspike::{ModelSpec, SpikeSubspace, SpikedCovariance};

fn z_grid() -> Vec<Complex64> {
    let mut zs = Vec::new();
    for &re in &[-3.0, -0.5, 0.3, 1.0, 2.5, 6.0] {
        for &im in &[0.05, 0.5, 2.0] {
            zs.push(Complex64::new(re, im));
        }
    }
    zs
}

/// A fixed symmetric `F` with a spread of positive and negative eigenvalues.
fn test_f(n: usize) -> SymMatrix {
    SymMatrix::from_fn(n, |i, j| {
        if i == j {
            ((i * 37 % 11) as f64 - 4.0) / 3.0
        } else {
            0.3 * (((i + 2 * j) * 13 % 7) as f64 - 3.0) / (n as f64).sqrt() * if (i + j) % 2 == 0 { 1.0 } else { -1.0 }
        }
    })
}

#[test]
fn t_transform_relation_single_component() {
    let n_eff = 200.0;
    let law = GeneralF::from_g(test_f(150), vec![150], &[1.0], n_eff).unwrap();
    for z in z_grid() {
        let m0 = law.m0_general(z).unwrap();
        let t1 = law.t_complex(m0)[0];
        let err = (m0 * t1 - (z * m0 + 1.0)).norm();
        assert!(err < 1e-8, "z = {z}: |m0 t1 - (z m0 + 1)| = {err:e}");
    }
}

#[test]
fn subordination_identity_two_blocks() {
    let n_eff = 200.0;
    let (a1, a2) = (1.0, -0.6);
    let (m1, m2) = (120usize, 80usize);
    let full = GeneralF::block_diagonal(&[a1, a2], &[m1, m2], n_eff).unwrap();
    let single = GeneralF::block_diagonal(&[a1], &[m1], n_eff).unwrap();
    for z in z_grid() {
        let m0 = full.m0_general(z).unwrap();
        let omega = z - (m2 as f64 / n_eff) * a2 / (1.0 + a2 * m0);
        assert!(omega.im > 0.0);
        let m_check = single.m0_general(omega).unwrap();
        assert!((m0 - m_check).norm() < 1e-8, "z = {z}: {m0} vs {m_check}");
        let t1 = full.t_complex(m0)[0];
        let t1_check = single.t_complex(m_check)[0];
        assert!((t1 - t1_check).norm() < 1e-8, "z = {z}: t1 {t1} vs {t1_check}");
        // Both sides solve the displayed two-term equation.
        let rhs = -1.0 / m0 + (m1 as f64 / n_eff) * a1 / (1.0 + a1 * m0) + (m2 as f64 / n_eff) * a2 / (1.0 + a2 * m0);
        assert!((rhs - z).norm() < 1e-10);
    }
}

fn fig_model(p: usize) -> ModelSpec {
    let mut e1 = vec![0.0; p];
    e1[0] = 1.0;
    let mut v = vec![0.0; p];
    v[0] = 0.5;
    v[1] = 3f64.sqrt() / 2.0;
    ModelSpec::new(p, vec![SpikedCovariance::isotropic(0.0).with_spike(6.0, e1), SpikedCovariance::isotropic(1.0).with_spike(29.0, v)]).unwrap()
}

#[test]
fn t_forms_agree_and_derivative_dominates_identity() {
    let design = DesignSpec::build(DesignKind::Oneway { i: 300, j: 2 }).unwrap();
    let model = fig_model(300);
    let sub = SpikeSubspace::from_model(&model);
    let sigma2 = model.sigma2();
    let a = design.manova_coefficients(1).unwrap();
    let law = MPContext::new(&design, &sigma2, &a, 300.0).unwrap();
    let sup = law.support().unwrap();
    let mut checked = 0;
    for &lambda in &[-40.0, -6.0, -3.0, -2.2, 2.2, 3.0, 4.5, 6.5, 9.0, 30.0] {
        if sup.contains(lambda, 0.0) {
            continue;
        }
        let tf = t_vector(&law, lambda).unwrap();
        let k = t_matrix(&tf, &sub);
        let ks = t_matrix_sigma_form(&tf, &sub, &sigma2);
        for i in 0..sub.dim() {
            for j in 0..sub.dim() {
                assert!((k[(i, j)] - ks[(i, j)]).abs() < 1e-9, "lambda {lambda}");
            }
        }
        let mut d = t_derivative(&tf, &sub, &sigma2);
        d.add_scaled(-1.0, &SymMatrix::identity(sub.dim())).unwrap();
        let min = sym_eigenvalues(&d).unwrap()[0];
        assert!(min >= -1e-9, "lambda {lambda}: min eig of dT - Id = {min}");
        checked += 1;
    }
    assert!(checked >= 8);
}

#[test]
fn balanced_and_general_paths_agree_on_nested_design() {
    let design = DesignSpec::build(DesignKind::NestedTwoway { i: 4, j: 3, k: 2 }).unwrap();
    let sigma2 = [0.7, 1.3, 0.9];
    let n_eff = 10.0;
    for r in 1..=3 {
        let a = design.manova_coefficients(r).unwrap();
        let bal = MPContext::new(&design, &sigma2, &a, n_eff).unwrap();
        let gen = GeneralF::from_design(&design, &a, &sigma2, n_eff).unwrap();
        let edge = bal.support().unwrap().max_edge();
        for &lambda in &[edge + 0.5, edge + 3.0, -40.0] {
            let mb = bal.m0(lambda).unwrap();
            let mg = gen.m0(lambda).unwrap();
            assert!((mb - mg).abs() < 1e-8, "r {r} lambda {lambda}: {mb} vs {mg}");
            let (tb, _) = bal.t_of_m(mb);
            let (tg, _) = gen.t_of_m(mb);
            let wb: Matrix = bal.w_of_m(mb);
            let wg: Matrix = gen.w_of_m(mb);
            for s in 0..3 {
                assert!((tb[s] - tg[s]).abs() < 1e-8, "t_{s}");
                for u in 0..3 {
                    assert!((wb[(s, u)] - wg[(s, u)]).abs() < 1e-8, "w_{s}{u}");
                }
            }
        }
    }
}
