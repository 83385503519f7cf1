//! Numerical core of a log-domain coronary subtraction toolkit.
//!
//! The crate covers the non-neural parts of a two-stage angiography
//! subtraction pipeline:
//!
//! * [`vesselness`]: multiscale Hessian (Frangi) vesselness used as a geometric prior.
//! * [`gsm`]: the prior-driven sigmoid gate and residual feature modulation.
//! * [`topo_loss`]: soft Dice, cross-entropy and soft-clDice losses with analytic gradients.
//! * [`anm`]: coordinate attention, mask-guided pooling, noise-parameter heads and
//!   heteroscedastic noise synthesis.
//! * [`stat_loss`]: local-moment alignment loss.
//! * [`subtraction`]: Beer–Lambert frame synthesis, log subtraction and vessel phantoms.
//! * [`metrics`]: Dice, IoU, clDice, HD95, PSNR, SSIM and region-restricted variants.

pub mod anm;
pub mod error;
pub mod gradcheck;
pub mod gsm;
pub mod image;
pub mod io;
pub mod metrics;
pub mod morphology;
pub mod rng;
pub mod stat_loss;
pub mod subtraction;
pub mod tensor;
pub mod topo_loss;
pub mod vesselness;

pub use error::{CdsaError, Result};
pub use image::{BinaryMask, Image};
pub use rng::SeededRng;
pub use tensor::Tensor4;
