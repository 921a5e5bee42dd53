//! Balanced designs: strata dimensions, MANOVA coefficients and the mean
//! squares of a simulated data set.

use varspike::covmodel::simulate;
use varspike::numerics::Seed;
use varspike::{sigma_hat, DesignKind, DesignSpec, ModelSpec, SpikedCovariance};

fn main() -> varspike::Result<()> {
    let kinds = [
        DesignKind::Oneway { i: 6, j: 3 },
        DesignKind::NestedTwoway { i: 4, j: 3, k: 2 },
        DesignKind::CrossedTwoway { i: 3, j: 2, k: 2, l: 2 },
    ];
    for kind in kinds {
        let d = DesignSpec::build(kind)?;
        println!("{:?}: n = {}, k = {}, stratum dims {:?}, c = {:?}", d.kind, d.n, d.k, d.d, d.c);
        for r in 1..=d.k {
            println!("  MANOVA coefficients for Sigma_{r}: {:?}", d.manova_coefficients(r)?.0);
        }
    }

    // Unbiasedness in practice: average the MANOVA estimate over a few draws.
    let d = DesignSpec::build(DesignKind::Oneway { i: 50, j: 4 })?;
    let model = ModelSpec::new(3, vec![SpikedCovariance::isotropic(2.0), SpikedCovariance::isotropic(1.0)])?;
    let a = d.manova_coefficients(1)?;
    let reps = 200;
    let mut diag = [0.0; 3];
    for rep in 0..reps {
        let ms = d.mean_squares(&simulate(&d, &model, Seed(rep))?)?;
        let s = sigma_hat(&ms, &a)?;
        for (i, x) in diag.iter_mut().enumerate() {
            *x += s[(i, i)] / reps as f64;
        }
    }
    println!("mean diagonal of the Sigma_1 estimate over {reps} draws: {diag:.3?} (truth 2.0)");
    Ok(())
}
