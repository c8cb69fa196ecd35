//! Numerical building blocks shared by the theory, optimisation and
//! diagnostics modules.

pub mod normal;
pub mod optim;
pub mod quadrature;
pub mod stats;

pub use normal::{log_norm_cdf, mills_ratio, norm_cdf, norm_log_pdf, norm_pdf, norm_quantile};
