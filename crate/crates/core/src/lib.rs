//! Multi-image compression with sine-activated coordinate networks.
//!
//! `M` images are represented by `N <= M` trainable weight sets. Image `i` is
//! rendered by the network whose weights are the fixed linear combination
//! `w_i = sum_j alpha_ij theta_j`, and all sets are trained jointly on the
//! weighted sum of per-image losses.

pub mod bundle;
pub mod convergence;
pub mod error;
pub mod experiments;
pub mod imaging;
pub mod siren;
pub mod trainer;
pub mod weight_space;

pub use bundle::{deserialize, serialize, Bundle, BundleError};
pub use error::{Error, Result};
pub use imaging::{coord_grid, load_png, psnr, reconstruct, save_png, CoordGrid, ImageDims, ImageTensor, ValueRange};
pub use siren::{forward, init_weights, loss_and_grad, param_count, GradientSet, NetworkArch, WeightSet};
pub use trainer::{train, Optimizer, TrainConfig, TrainHistory};
pub use weight_space::{aggregate_grads, bpp, combine, default_combiner, CombinerSpec, ThetaBank};
