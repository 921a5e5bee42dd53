// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod covmodel;
pub mod design;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod mp_law;
pub mod numerics;
pub mod spike_theory;

pub use covmodel::{sigma_hat, ModelSpec, SpikeSubspace, SpikedCovariance};
pub use design::{CoeffVector, DesignKind, DesignSpec, MeanSquares};
pub use error::{Error, Result};
pub use estimator::{estimate_spikes, observed_locus, EstimationReport, Estimator, Sigma2Source, SpikeEstimate, SweepConfig};
pub use mp_law::{BulkLaw, GeneralF, MPContext, Spectrum, SupportInfo};
pub use harness::{reproduce_table, RunManifest, TableReport};
