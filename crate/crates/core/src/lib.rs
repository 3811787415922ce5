//! Moment-based semiparametric estimation for non-Gaussian data.
//!
//! The crate is organised bottom-up:
//!
//! * [`moments`]: sample and analytic cumulants, cumulant/raw-moment conversion.
//! * [`stochpoly`]: stochastic polynomials, basis families and the matrix of
//!   centered correlants.
//! * [`pmm`]: the polynomial maximization method (PMM2/PMM3), variance
//!   reduction coefficients and automatic method dispatch.
//! * [`regression`]: response models shared by the regression estimators.
//! * [`sls`]: second-order least squares.
//! * [`volterra`]: second-order Volterra models and kernel adaptation.
//! * [`signals`]: seeded signal generators and spectral metrics.
//! * [`changepoint`]: polynomial CUSUM with distribution-free thresholds.
//! * [`harness`]: seeded Monte-Carlo scenarios and result persistence.

pub mod changepoint;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod moments;
pub mod pmm;
pub mod regression;
pub mod signals;
pub mod sls;
pub mod stochpoly;
pub mod volterra;

pub use error::{Error, Result};
pub use moments::{CumulantSet, Distribution, InitialMomentVector};
pub use pmm::{MethodChoice, MomentModel, PmmEstimate};
pub use stochpoly::{BasisFamily, CorrelantMatrix, StochasticPolynomial};
pub use volterra::{AdaptationReport, VolterraKernels};

pub use nalgebra::{DMatrix, DVector};
