//! Graph-regularized, locality-constrained sparse coding for image
//! denoising.

pub mod coder;
pub mod denoiser;
pub mod dictionary;
pub mod error;
pub mod graph;
pub mod harness;
pub mod matrix_io;
pub mod patch;
pub mod prox;

pub use error::{CpscError, Result};
pub use denoiser::{denoise, DenoiseConfig, DenoiseOutput, DenoiseTrace};
pub use dictionary::{init_dct_dictionary, Dictionary};
pub use patch::{extract_patches, psnr, ImagePlane, PatchSet};
