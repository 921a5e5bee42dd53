//! The limiting bulk law of a MANOVA estimator: support, density, and a
//! comparison with one simulated spectrum.

use num_complex::Complex64;
use varspike::covmodel::simulate;
use varspike::numerics::{sym_eigenvalues, Seed};
use varspike::{sigma_hat, BulkLaw, DesignKind, DesignSpec, MPContext, ModelSpec, SpikedCovariance};

fn main() -> varspike::Result<()> {
    let design = DesignSpec::build(DesignKind::Oneway { i: 300, j: 2 })?;
    let p = 300;
    let model = ModelSpec::new(p, vec![SpikedCovariance::isotropic(0.5), SpikedCovariance::isotropic(1.0)])?;
    let a = design.manova_coefficients(1)?;
    let law = MPContext::new(&design, &model.sigma2(), &a, p as f64)?;
    let support = law.support()?;
    println!("support intervals: {:?}", support.intervals);

    println!("density on a grid:");
    let (lo, hi) = (support.min_edge() - 0.5, support.max_edge() + 0.5);
    for i in 0..=20 {
        let x = lo + (hi - lo) * i as f64 / 20.0;
        let m = law.spectrum().m0_complex(Complex64::new(x, 1e-4))?;
        let density = m.im / std::f64::consts::PI;
        println!("  {x:7.3}  {density:.4}  {}", "#".repeat((density * 40.0) as usize));
    }

    let ms = design.mean_squares(&simulate(&design, &model, Seed(1))?)?;
    let ev = sym_eigenvalues(&sigma_hat(&ms, &a)?)?;
    let cdf = law.spectrum().bulk_cdf(1e-3, 4000)?;
    println!("Kolmogorov distance of one draw: {:.4}", cdf.ks_distance(&ev));
    println!("sample range [{:.3}, {:.3}]", ev[0], ev[ev.len() - 1]);
    Ok(())
}
