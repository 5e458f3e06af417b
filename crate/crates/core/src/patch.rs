//! Grayscale image planes, overlapping patch extraction and the closed-form
//! patch-to-image aggregation.

use nalgebra::DMatrix;

use crate::error::{CpscError, Result};

/// Single-channel intensity grid, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePlane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ImagePlane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(CpscError::arg("image dimensions must be nonzero"));
        }
        if data.len() != width * height {
            return Err(CpscError::arg(format!(
                "{}x{} image needs {} intensities, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(CpscError::arg(format!("non-finite intensity at index {pos}")));
        }
        Ok(ImagePlane { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                data.push(f(row, col));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    pub fn same_shape(&self, other: &ImagePlane) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Copies the `width x height` window whose top-left corner is `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, width: usize, height: usize) -> Result<ImagePlane> {
        if row + height > self.height || col + width > self.width {
            return Err(CpscError::arg(format!(
                "crop {width}x{height} at ({row}, {col}) exceeds {}x{} image",
                self.width, self.height
            )));
        }
        ImagePlane::from_fn(width, height, |r, c| self.get(row + r, col + c))
    }

    /// Clamps every intensity into `[0, peak]`.
    pub fn clamped(&self, peak: f64) -> ImagePlane {
        ImagePlane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| v.clamp(0.0, peak)).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Population standard deviation of the intensities.
    pub fn std_dev(&self) -> f64 {
        let m = self.mean();
        (self.data.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.data.len() as f64).sqrt()
    }
}

/// Vectorized, mean-removed overlapping patches of one image.
///
/// Column `i` of `vectors` is the patch whose top-left pixel is
/// `origins[i]`, stored row by row, minus `means[i]`.
#[derive(Clone, Debug)]
pub struct PatchSet {
    pub patch_side: usize,
    pub stride: usize,
    pub vectors: DMatrix<f64>,
    pub means: Vec<f64>,
    pub origins: Vec<(usize, usize)>,
    pub image_width: usize,
    pub image_height: usize,
    /// Number of patch positions per row and per column of the grid.
    pub grid: (usize, usize),
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.patch_side * self.patch_side
    }

    /// Adds each patch mean back onto the matching column of `centered`.
    pub fn with_means(&self, centered: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = centered.clone();
        for (mut col, &m) in out.column_iter_mut().zip(&self.means) {
            col.add_scalar_mut(m);
        }
        out
    }

    /// Number of patches covering every pixel, row-major.
    pub fn cover_counts(&self) -> Vec<u32> {
        let mut counts = vec![0u32; self.image_width * self.image_height];
        for &(r0, c0) in &self.origins {
            for dr in 0..self.patch_side {
                let base = (r0 + dr) * self.image_width + c0;
                for c in &mut counts[base..base + self.patch_side] {
                    *c += 1;
                }
            }
        }
        counts
    }
}

fn grid_positions(extent: usize, side: usize, stride: usize) -> usize {
    (extent - side) / stride + 1
}

/// Extracts every `patch_side x patch_side` window on the stride grid.
/// Borders are not padded; the grid stops at the last full window.
pub fn extract_patches(img: &ImagePlane, patch_side: usize, stride: usize) -> Result<PatchSet> {
    if patch_side == 0 || stride == 0 {
        return Err(CpscError::arg("patch side and stride must be positive"));
    }
    if patch_side > img.width().min(img.height()) {
        return Err(CpscError::arg(format!(
            "patch side {patch_side} exceeds {}x{} image",
            img.width(),
            img.height()
        )));
    }
    let rows = grid_positions(img.height(), patch_side, stride);
    let cols = grid_positions(img.width(), patch_side, stride);
    let dim = patch_side * patch_side;
    let count = rows * cols;

    let mut vectors = DMatrix::zeros(dim, count);
    let mut means = Vec::with_capacity(count);
    let mut origins = Vec::with_capacity(count);
    for gr in 0..rows {
        for gc in 0..cols {
            let (r0, c0) = (gr * stride, gc * stride);
            let idx = origins.len();
            let mut col = vectors.column_mut(idx);
            for dr in 0..patch_side {
                for dc in 0..patch_side {
                    col[dr * patch_side + dc] = img.get(r0 + dr, c0 + dc);
                }
            }
            let mean = col.sum() / dim as f64;
            col.add_scalar_mut(-mean);
            means.push(mean);
            origins.push((r0, c0));
        }
    }
    Ok(PatchSet {
        patch_side,
        stride,
        vectors,
        means,
        origins,
        image_width: img.width(),
        image_height: img.height(),
        grid: (rows, cols),
    })
}

/// Closed-form image update.
///
/// Solves `(I + mu * sum_i U_i^T U_i) X = Y + mu * sum_i U_i^T x_i` where
/// `x_i` are the columns of `estimates` (full patch intensities, means
/// included). The system matrix is diagonal with entries
/// `1 + mu * cover_count(p)`, so the solve is a per-pixel division.
pub fn aggregate_image(
    noisy: &ImagePlane,
    layout: &PatchSet,
    estimates: &DMatrix<f64>,
    mu: f64,
) -> Result<ImagePlane> {
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(CpscError::arg(format!("aggregation weight must be nonnegative, got {mu}")));
    }
    if noisy.width() != layout.image_width || noisy.height() != layout.image_height {
        return Err(CpscError::arg(format!(
            "patch layout is for a {}x{} image, got {}x{}",
            layout.image_width,
            layout.image_height,
            noisy.width(),
            noisy.height()
        )));
    }
    if estimates.nrows() != layout.dim() || estimates.ncols() != layout.len() {
        return Err(CpscError::arg(format!(
            "expected {}x{} patch estimates, got {}x{}",
            layout.dim(),
            layout.len(),
            estimates.nrows(),
            estimates.ncols()
        )));
    }
    let width = noisy.width();
    let side = layout.patch_side;
    let mut numer = noisy.pixels().to_vec();
    let mut denom = vec![1.0; numer.len()];
    for (col, &(r0, c0)) in estimates.column_iter().zip(&layout.origins) {
        for dr in 0..side {
            let base = (r0 + dr) * width + c0;
            for dc in 0..side {
                numer[base + dc] += mu * col[dr * side + dc];
                denom[base + dc] += mu;
            }
        }
    }
    let data = numer.iter().zip(&denom).map(|(n, d)| n / d).collect();
    ImagePlane::new(width, noisy.height(), data)
}

/// Peak signal-to-noise ratio in dB. Identical images give `+inf`.
pub fn psnr(a: &ImagePlane, b: &ImagePlane, peak: f64) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(CpscError::arg(format!(
            "psnr of {}x{} and {}x{} images",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let mse = mse(a, b);
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

pub fn mse(a: &ImagePlane, b: &ImagePlane) -> f64 {
    a.pixels()
        .iter()
        .zip(b.pixels())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64
}
