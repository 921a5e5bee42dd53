//! Predicted outlier eigenvalues of the MANOVA estimator of Sigma_1 when a
//! large spike in Sigma_2 leaks into it.

use varspike::spike_theory::predicted_outliers;
use varspike::{DesignKind, DesignSpec, MPContext, ModelSpec, SpikeSubspace, SpikedCovariance};

fn main() -> varspike::Result<()> {
    let p = 300;
    let design = DesignSpec::build(DesignKind::Oneway { i: 300, j: 2 })?;
    let mut e1 = vec![0.0; p];
    e1[0] = 1.0;
    let mut v = vec![0.0; p];
    v[0] = 0.5;
    v[1] = 3f64.sqrt() / 2.0;
    let model = ModelSpec::new(
        p,
        vec![SpikedCovariance::isotropic(0.0).with_spike(6.0, e1), SpikedCovariance::isotropic(1.0).with_spike(29.0, v)],
    )?;
    let sub = SpikeSubspace::from_model(&model);
    let a = design.manova_coefficients(1)?;
    let law = MPContext::new(&design, &model.sigma2(), &a, (p - sub.dim()) as f64)?;
    println!("bulk support: {:?}", law.support()?.intervals);
    for o in predicted_outliers(&law, &sub, 1e-4)? {
        println!(
            "lambda {:8.4}  side {:?}  alignment {:.3}  fluctuation sd {:.3}",
            o.lambda,
            o.side,
            o.alignment.unwrap_or(f64::NAN),
            o.nu.unwrap_or(f64::NAN).sqrt()
        );
    }
    Ok(())
}
