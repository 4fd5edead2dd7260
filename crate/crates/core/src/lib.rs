//! Segmentation quality estimation without ground truth, and unsupervised
//! discovery of performance gaps between demographic subgroups.
//!
//! A predicted mask is scored by reverse classification accuracy: the image
//! is registered onto similar reference images with known segmentations,
//! the prediction is carried along the recovered deformations, and the
//! overlap with each reference's ground truth stands in for the unknown
//! Dice score. Averaging those estimates per subgroup yields a signed gap
//! that tracks the true performance gap.
//!
//! ```
//! use ubd::phantom::{generate_phantom, PhantomSpec, Sex};
//! use ubd::metrics::dsc;
//!
//! let (_image, mask) = generate_phantom(&PhantomSpec::new(1, 64, Sex::F)).unwrap();
//! let score = dsc(&mask, &mask).unwrap();
//! assert_eq!(score.get("lung"), Some(1.0));
//! ```

pub mod audit;
pub mod error;
pub mod imaging;
pub mod metrics;
pub mod phantom;
pub mod plot;
pub mod rca;
pub mod registration;
pub mod similarity;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/conventions.md")]
    mod conventions {}
    #[doc = include_str!("../../../book/src/registration.md")]
    mod registration {}
    #[doc = include_str!("../../../book/src/rca.md")]
    mod rca {}
    #[doc = include_str!("../../../book/src/audit.md")]
    mod audit {}
    #[doc = include_str!("../../../book/src/synthetic-grid.md")]
    mod synthetic_grid {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
