//! Multivariate ordinal time series built from bivariate copula models with
//! cumulative-logit autoregressive marginals, estimated pair by pair and
//! combined into a single system.

pub mod combine;
pub mod copula;
pub mod data;
pub mod error;
pub mod forecast;
pub mod marginal;
pub mod normal;
pub mod optim;
pub mod pairlik;
pub mod reference;
pub mod simulate;
pub mod transform;

pub use copula::{CopulaFamily, CopulaSpec, Correlation};
pub use data::{Panel, StatePanel};
pub use error::{Error, Result};
pub use marginal::{Coding, MarginalParams, MarginalSpec, StateSpace};
pub use optim::OptimizerConfig;
pub use pairlik::{fit_pair, Design, FitOptions, PairFit, PairModel, PairSpec};
