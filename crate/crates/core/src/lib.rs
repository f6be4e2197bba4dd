//! Approximate Bayesian inference for cumulative (ordered) probit regression.
//!
//! Three deterministic fitters share one data model:
//!
//! * [`mfvb`]: fully factorized mean-field variational Bayes,
//! * [`pmf`]: partially factorized mean-field, which keeps the exact
//!   conditional `p(beta | z)` and optimizes one truncated normal per observation,
//! * [`ep`]: expectation propagation with rank-one Gaussian sites.
//!
//! [`ebayes`] estimates the cutpoints by alternating any fitter with Newton
//! steps, [`predict`] turns a fit into class probabilities, [`oracle`] provides
//! a data-augmentation Gibbs sampler and the accuracy score used to check the
//! approximations, and [`simbench`] runs the simulation experiments.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments, clippy::needless_range_loop)]

pub mod ebayes;
pub mod ep;
mod error;
pub mod mfvb;
pub mod model;
pub mod numkern;
pub mod oracle;
pub mod pmf;
pub mod predict;
pub mod simbench;
#[cfg(test)]
mod testutil;

pub use ebayes::{estimate_thresholds, fit_method, fit_method_from, grad_alpha, FitterOptions, EbFit, EbOptions, Method, MethodFit};
pub use ep::{ep_log_marginal, fit_ep, fit_ep_from, hybrid_moments, EpFit, EpGlobal, EpOptions, EpSites, HybridMoments};
pub use error::{Error, Result};
pub use mfvb::{elbo_mfvb, fit_mfvb, fit_mfvb_from, MfvbFit, MfvbOptions, MfvbState};
pub use model::{validate, FitReport, GaussianPosterior, GaussianPrior, OrdinalDataset, Thresholds};
pub use numkern::{Interval, RngStream, SpdMatrix};
pub use oracle::{accuracy_score, gibbs_chains, gibbs_fit, ApproxMarginal, GibbsOptions, Kde, PosteriorSamples};
pub use pmf::{elbo_pmf, fit_pmf, fit_pmf_from, pmf_sample_beta, PmfFit, PmfOptions, PmfPosterior, PmfState};
pub use predict::{classify, predict_fit, predict_gaussian, predict_pmf, PredictiveDistribution};
