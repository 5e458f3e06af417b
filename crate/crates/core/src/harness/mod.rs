//! Batch experiment front end: image files, seeded noise, configuration
//! and PSNR reports.

pub mod config;
pub mod experiment;
pub mod noise;
pub mod pgm;
pub mod synth;
