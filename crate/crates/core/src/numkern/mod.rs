//! Scalar special functions, truncated-normal kernels, SPD linear algebra and
//! reproducible random streams shared by every fitter.

mod linalg;
mod rng;
mod special;
mod tn;

pub use linalg::{rank_one_inverse_update, relative_frobenius, spd_factor_solve, Cholesky, Rhs, SpdMatrix};
pub(crate) use linalg::{add_scaled_outer, symmetrize};
pub use rng::RngStream;
pub use special::{
    interval_stats, log_interval_mass, log_norm_cdf, log_norm_pdf, mills_ratio, norm_cdf, norm_pdf,
    norm_quantile, norm_sf, x_norm_pdf, zeta1, zeta2, IntervalStats, TAIL_SWITCH,
};
pub(crate) use tn::{standard_tn_sample, tn_mean_stats};
pub use tn::{tn_moments, tn_sample, Interval};
