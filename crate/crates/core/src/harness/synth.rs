//! Deterministic synthetic test images with flat regions, edges, a smooth
//! ramp and periodic texture.

use crate::error::Result;
use crate::patch::ImagePlane;

pub fn synthetic_image(width: usize, height: usize) -> Result<ImagePlane> {
    let (w, h) = (width as f64, height as f64);
    ImagePlane::from_fn(width, height, |r, c| {
        let (y, x) = (r as f64 / h, c as f64 / w);
        let mut v = 60.0 + 80.0 * x;
        if (0.15..0.45).contains(&y) && (0.1..0.4).contains(&x) {
            v = 200.0;
        }
        let (dy, dx) = (y - 0.65, x - 0.65);
        if dy * dy + dx * dx < 0.04 {
            v = 30.0;
        }
        if y > 0.8 {
            v += 40.0 * (std::f64::consts::TAU * c as f64 / 6.0).sin();
        }
        v.clamp(0.0, 255.0)
    })
}
