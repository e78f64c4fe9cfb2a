//! Bayesian optimization with linearized-Laplace neural-network surrogates.
//!
//! A small MLP is trained to a MAP estimate, a Gaussian posterior is placed over its
//! weights with a generalized Gauss-Newton precision, and predictions go through the
//! network linearized at the MAP. Prior precision and noise are tuned on the Laplace
//! evidence, either once after training or periodically during it. An RBF Gaussian
//! process and random search serve as baselines.

pub mod acquisition;
pub mod bo;
pub mod data;
pub mod error;
pub mod laplace;
pub mod linalg;
pub mod nn;
pub mod objectives;
pub mod rng;
pub mod surrogate;
pub mod train;

pub use acquisition::{cb, ei, optimize_acq, AcqOptConfig, Acquisition, AcquisitionKind, Bounds, Proposal};
pub use bo::{best_so_far, init_design, run_bo, test_mse, BoAbort, BoConfig, BoTrace, IterationRecord, Strategy};
pub use data::Data;
pub use error::{Error, Result};
pub use laplace::{
    fit_online, fit_posthoc, Hyperparams, LaplaceConfig, LaplaceFit, LaplacePosterior, SubsetMask, WeightSpace,
};
pub use nn::{Activation, MlpConfig, ParamVector};
pub use objectives::{Objective, RegressionDataset, SyntheticKind};
pub use surrogate::{
    surrogate_fit_predict, FittedSurrogate, PredictiveDist, Surrogate, SurrogateKind, SurrogateSettings,
};
pub use train::{train_map, TrainConfig};
