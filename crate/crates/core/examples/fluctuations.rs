//! Gaussian fluctuations of an outlier eigenvalue around its predicted
//! location, standardized by the predicted variance.

use varspike::covmodel::simulate;
use varspike::harness::tables::clt_prediction;
use varspike::numerics::{sym_eigenvalues, Seed};
use varspike::{sigma_hat, DesignKind, DesignSpec, ModelSpec, SpikedCovariance};

fn main() -> varspike::Result<()> {
    let p = 300;
    let design = DesignSpec::build(DesignKind::Oneway { i: 300, j: 2 })?;
    let mut e1 = vec![0.0; p];
    e1[0] = 1.0;
    let model = ModelSpec::new(p, vec![SpikedCovariance::isotropic(0.0).with_spike(6.0, e1), SpikedCovariance::isotropic(1.0)])?;
    let (lambda, nu) = clt_prediction(&design, &model)?;
    println!("predicted outlier {lambda:.4}, variance {nu:.4}");
    let a = design.manova_coefficients(1)?;
    let reps = 200;
    let z: Vec<f64> = (0..reps)
        .map(|i| {
            let ms = design.mean_squares(&simulate(&design, &model, Seed(i)).unwrap()).unwrap();
            let top = *sym_eigenvalues(&sigma_hat(&ms, &a).unwrap()).unwrap().last().unwrap();
            (top - lambda) / nu.sqrt()
        })
        .collect();
    let mean = z.iter().sum::<f64>() / reps as f64;
    let var = z.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
    println!("standardized fluctuations over {reps} draws: mean {mean:.3}, variance {var:.3}");
    Ok(())
}
