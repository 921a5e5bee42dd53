//! Observed locus of a simulated data set next to the population locus,
//! printed as CSV for plotting.

use varspike::covmodel::simulate;
use varspike::estimator::locus_to_csv;
use varspike::numerics::Seed;
use varspike::spike_theory::population_locus;
use varspike::{observed_locus, DesignKind, DesignSpec, ModelSpec, Sigma2Source, SpikeSubspace, SpikedCovariance, SweepConfig};

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
    let ms = design.mean_squares(&simulate(&design, &model, Seed(11))?)?;
    let cfg = SweepConfig { grid: 100, ..SweepConfig::new(1) }.with_sigma2(Sigma2Source::Known(model.sigma2()));
    let observed = observed_locus(&ms, &design, &cfg)?;
    println!("# observed");
    print!("{}", locus_to_csv(&observed, 2));
    println!("# population");
    println!("s_1,s_2");
    for pt in population_locus(&SpikeSubspace::from_model(&model), 100)? {
        println!("{},{}", pt.s[0], pt.s[1]);
    }
    Ok(())
}
