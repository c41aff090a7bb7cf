//! Factor-adjusted decorrelated score (FADS) testing for grouped,
//! high-dimensional Cox regression.
//!
//! The test asks whether one covariate group carries signal for the hazard
//! once every other group is accounted for. The group is summarised by a few
//! latent factors (PCA), the nuisance groups are fitted with a LASSO-penalised
//! partial likelihood, and the factor score is decorrelated from the nuisance
//! score through a Dantzig-type projection before forming a chi-squared
//! statistic.
//!
//! ```
//! use fads::sim::{Case, SimConfig, generate_dataset};
//! use fads::test_procedure::{run_fads_test, FadsConfig};
//! use rand::SeedableRng;
//!
//! let cfg = SimConfig { case: Case::One, n: 120, p: 80, ..SimConfig::ci() };
//! let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
//! let sample = generate_dataset(&cfg, 0.0, 2.2, &mut rng).unwrap();
//! let result = run_fads_test(&sample.data, "x1", &FadsConfig::default()).unwrap();
//! let p = result.p_value.unwrap();
//! assert!((0.0..=1.0).contains(&p));
//! ```

pub mod chisq;
pub mod dantzig;
pub mod error;
pub mod factor;
pub mod io;
pub mod linalg;
pub mod penalized;
pub mod sim;
pub mod survival;
pub mod test_procedure;

pub use error::{FadsError, Result};
pub use survival::{FeatureAssembly, SurvivalDataset};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/partial-likelihood.md")]
    mod partial_likelihood {}
    #[doc = include_str!("../../../book/src/factors.md")]
    mod factors {}
    #[doc = include_str!("../../../book/src/penalized-fit.md")]
    mod penalized_fit {}
    #[doc = include_str!("../../../book/src/decorrelated-score.md")]
    mod decorrelated_score {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
}
