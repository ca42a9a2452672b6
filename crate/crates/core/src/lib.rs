//! Kernel max-margin classification under performative distribution shift.
//!
//! A deployed classifier changes the data it is later evaluated on. This
//! crate retrains a kernel max-margin classifier repeatedly on the data each
//! deployment induces, estimating how sensitive the data is to the model and
//! adapting the balancing parameter so that the iteration contracts.
//!
//! ```
//! use np2m2::{gen_linear_synthetic, run_rrm, KernelSpec, MapSpec, RrmSettings};
//!
//! let data = gen_linear_synthetic(50, 4, 2, 2.0, 7).unwrap();
//! let map = MapSpec::feature_linear(0.5);
//! let settings = RrmSettings { t_max: 10, burn_in: 2, ..Default::default() };
//! let trace = run_rrm(&data, &KernelSpec::linear(), &map, &settings).unwrap();
//! assert_eq!(trace.records.len(), 10);
//! ```

pub mod baselines;
pub mod dataset;
pub mod error;
pub mod fmt;
pub mod kernel;
pub mod metrics;
pub mod rng;
pub mod rrm;
pub mod shift;
pub mod solver;

pub use baselines::{lr_fit, run_rgd_lr, run_rrm_lr, LinearModel, LrSettings};
pub use dataset::{
    gen_circles, gen_linear_synthetic, load_csv, nearmiss3_undersample, CsvColumns, Dataset, PerformativeMask,
};
pub use error::{Error, Result};
pub use kernel::{KernelKind, KernelModel, KernelSpec};
pub use metrics::{accuracy, summarize, Summary};
pub use rrm::{contraction_audit, run_rrm, IterationRecord, RrmSettings, RrmTrace, ViolatorFilter};
pub use shift::{DecisionFunction, FlipRule, MapKind, MapSpec};
pub use solver::{solve, SolveReport, SolveSettings};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/datasets.md")]
    mod datasets {}
    #[doc = include_str!("../../../book/src/kernels.md")]
    mod kernels {}
    #[doc = include_str!("../../../book/src/solver.md")]
    mod solver {}
    #[doc = include_str!("../../../book/src/maps.md")]
    mod maps {}
    #[doc = include_str!("../../../book/src/rrm.md")]
    mod rrm {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/baselines.md")]
    mod baselines {}
}
