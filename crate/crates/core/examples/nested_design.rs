//! Spike estimation with three variance components in a nested design.

use varspike::covmodel::simulate;
use varspike::numerics::Seed;
use varspike::{estimate_spikes, DesignKind, DesignSpec, ModelSpec, Sigma2Source, SpikedCovariance, SweepConfig};

fn main() -> varspike::Result<()> {
    let design = DesignSpec::build(DesignKind::NestedTwoway { i: 60, j: 3, k: 2 })?;
    let p = 40;
    let mut e1 = vec![0.0; p];
    e1[0] = 1.0;
    let model = ModelSpec::new(
        p,
        vec![
            SpikedCovariance::isotropic(0.0),
            SpikedCovariance::isotropic(0.2).with_spike(15.0, e1),
            SpikedCovariance::isotropic(1.0),
        ],
    )?;
    let ms = design.mean_squares(&simulate(&design, &model, Seed(5))?)?;
    let cfg = SweepConfig { grid: 40, ..SweepConfig::new(2) }.with_sigma2(Sigma2Source::Known(model.sigma2()));
    for e in estimate_spikes(&ms, &design, &cfg)? {
        println!("mu_hat {:.3}, |e1| {:.3}, a = {:.3?}", e.mu_hat, e.v_hat[0].abs(), e.a);
    }
    Ok(())
}
