//! Gaussian/Laplacian pyramids with the 5-tap generating kernel and the
//! mask-weighted multiresolution spline built on them.
//!
//! The generating kernel is `w = [1/4 - a/2, 1/4, a, 1/4, 1/4 - a/2]`,
//! applied separably with reflect-101 boundaries. Reduction keeps even-index
//! rows/columns, so a dimension `n` becomes `(n + 1) / 2`.

use crate::error::{Error, Result};
use crate::image::GrayImage;

/// The classic Gaussian-like kernel parameter.
pub const DEFAULT_KERNEL_A: f64 = 0.4;

fn kernel(a: f64) -> [f64; 5] {
    [0.25 - a / 2.0, 0.25, a, 0.25, 0.25 - a / 2.0]
}

#[inline]
fn reflect101(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let mut i = i;
    while i < 0 || i >= n {
        if i < 0 {
            i = -i;
        }
        if i >= n {
            i = 2 * (n - 1) - i;
        }
    }
    i as usize
}

fn reduced_dim(n: usize) -> usize {
    n.div_ceil(2)
}

// Convolve rows with `taps` and keep even-index columns.
fn reduce_axis_h(img: &GrayImage, taps: &[f64; 5]) -> GrayImage {
    let (h, w) = (img.height(), img.width());
    let wr = reduced_dim(w);
    let mut out = GrayImage::zeros(h, wr);
    for y in 0..h {
        let row = img.row(y);
        for xo in 0..wr {
            let center = 2 * xo as isize;
            let mut acc = 0.0;
            for (m, &t) in taps.iter().enumerate() {
                acc += t * row[reflect101(center + m as isize - 2, w)];
            }
            out.set(y, xo, acc);
        }
    }
    out
}

fn transpose(img: &GrayImage) -> GrayImage {
    let (h, w) = (img.height(), img.width());
    let mut out = GrayImage::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            out.set(x, y, img.at(y, x));
        }
    }
    out
}

/// Low-pass filter and halve both dimensions (`n -> (n+1)/2`).
pub fn reduce(img: &GrayImage, kernel_a: f64) -> Result<GrayImage> {
    if img.height() < 2 || img.width() < 2 {
        return Err(Error::DimensionMismatch(format!(
            "cannot reduce a {}x{} image",
            img.height(),
            img.width()
        )));
    }
    let taps = kernel(kernel_a);
    let tmp = reduce_axis_h(img, &taps);
    Ok(transpose(&reduce_axis_h(&transpose(&tmp), &taps)))
}

// Zero-interleave one axis up to `target` columns and convolve with 2*taps.
fn expand_axis_h(img: &GrayImage, target: usize, taps: &[f64; 5]) -> GrayImage {
    let (h, w) = (img.height(), img.width());
    let mut up = GrayImage::zeros(h, target);
    for y in 0..h {
        for x in 0..w {
            if 2 * x < target {
                up.set(y, 2 * x, img.at(y, x));
            }
        }
    }
    let mut out = GrayImage::zeros(h, target);
    for y in 0..h {
        let row = up.row(y);
        for x in 0..target {
            let mut acc = 0.0;
            for (m, &t) in taps.iter().enumerate() {
                acc += 2.0 * t * row[reflect101(x as isize + m as isize - 2, target)];
            }
            out.set(y, x, acc);
        }
    }
    out
}

/// Upsample to `target_h` x `target_w`, the inverse size step of [`reduce`].
pub fn expand(img: &GrayImage, target_h: usize, target_w: usize, kernel_a: f64) -> Result<GrayImage> {
    if reduced_dim(target_h) != img.height() || reduced_dim(target_w) != img.width() {
        return Err(Error::DimensionMismatch(format!(
            "cannot expand {}x{} to {target_h}x{target_w}",
            img.height(),
            img.width()
        )));
    }
    let taps = kernel(kernel_a);
    let tmp = expand_axis_h(img, target_w, &taps);
    Ok(transpose(&expand_axis_h(&transpose(&tmp), target_h, &taps)))
}

/// Band-pass decomposition: `bands[k] = G_k - expand(G_{k+1})`, finest first,
/// plus the final low-pass residual `top`.
#[derive(Debug, Clone)]
pub struct LaplacianPyramid {
    pub bands: Vec<GrayImage>,
    pub top: GrayImage,
    pub kernel_a: f64,
}

impl LaplacianPyramid {
    pub fn levels(&self) -> usize {
        self.bands.len()
    }
}

/// Blend weights in [0,1]; 1 selects image A in [`spline_blend`].
#[derive(Debug, Clone)]
pub struct BlendMask {
    weights: GrayImage,
}

impl BlendMask {
    pub fn new(weights: GrayImage) -> Result<Self> {
        if weights.pixels().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidParameter(
                "mask weights must lie in [0,1]".into(),
            ));
        }
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &GrayImage {
        &self.weights
    }

    /// Pointwise complement, `1 - w`.
    pub fn complement(&self) -> Self {
        Self {
            weights: self.weights.map(|v| 1.0 - v),
        }
    }
}

/// Gaussian pyramid of `levels + 1` images, finest first.
fn gaussian_pyramid(img: &GrayImage, levels: usize, kernel_a: f64) -> Result<Vec<GrayImage>> {
    let mut out = Vec::with_capacity(levels + 1);
    out.push(img.clone());
    for _ in 0..levels {
        let next = reduce(out.last().unwrap(), kernel_a)?;
        out.push(next);
    }
    Ok(out)
}

/// Build a `levels`-band Laplacian pyramid.
pub fn build_laplacian(img: &GrayImage, levels: usize, kernel_a: f64) -> Result<LaplacianPyramid> {
    if levels == 0 {
        return Err(Error::InvalidParameter("need at least one level".into()));
    }
    let gauss = gaussian_pyramid(img, levels, kernel_a)?;
    let mut bands = Vec::with_capacity(levels);
    for k in 0..levels {
        let up = expand(
            &gauss[k + 1],
            gauss[k].height(),
            gauss[k].width(),
            kernel_a,
        )?;
        let mut band = gauss[k].clone();
        for y in 0..band.height() {
            for x in 0..band.width() {
                band.set(y, x, band.at(y, x) - up.at(y, x));
            }
        }
        bands.push(band);
    }
    Ok(LaplacianPyramid {
        bands,
        top: gauss[levels].clone(),
        kernel_a,
    })
}

/// Invert [`build_laplacian`]: `G_k = L_k + expand(G_{k+1})`, returning `G_0`.
pub fn reconstruct(pyr: &LaplacianPyramid) -> Result<GrayImage> {
    let mut g = pyr.top.clone();
    for band in pyr.bands.iter().rev() {
        let up = expand(&g, band.height(), band.width(), pyr.kernel_a)?;
        let mut next = band.clone();
        for y in 0..next.height() {
            for x in 0..next.width() {
                next.set(y, x, next.at(y, x) + up.at(y, x));
            }
        }
        g = next;
    }
    Ok(g)
}

/// Multiresolution spline of two images under a mask (1 selects `a`).
///
/// Each Laplacian band of the output combines the inputs' bands weighted by
/// the Gaussian pyramid of the mask, so transition width scales with the
/// band's wavelength. Both weight pyramids are built explicitly, which makes
/// `spline_blend(a, b, m) == spline_blend(b, a, 1-m)` hold bitwise whenever
/// the complement `1-m` is itself exact (binary masks in particular).
pub fn spline_blend(
    a: &GrayImage,
    b: &GrayImage,
    mask: &BlendMask,
    levels: usize,
    kernel_a: f64,
) -> Result<GrayImage> {
    if !a.same_dims(b) || !a.same_dims(mask.weights()) {
        return Err(Error::DimensionMismatch(
            "spline_blend inputs must share dimensions".into(),
        ));
    }
    let la = build_laplacian(a, levels, kernel_a)?;
    let lb = build_laplacian(b, levels, kernel_a)?;
    let wa = gaussian_pyramid(mask.weights(), levels, kernel_a)?;
    let wb = gaussian_pyramid(mask.complement().weights(), levels, kernel_a)?;

    let combine = |xa: &GrayImage, xb: &GrayImage, ga: &GrayImage, gb: &GrayImage| {
        let mut out = GrayImage::zeros(xa.height(), xa.width());
        for y in 0..out.height() {
            for x in 0..out.width() {
                out.set(y, x, ga.at(y, x) * xa.at(y, x) + gb.at(y, x) * xb.at(y, x));
            }
        }
        out
    };

    let bands = (0..levels)
        .map(|k| combine(&la.bands[k], &lb.bands[k], &wa[k], &wb[k]))
        .collect();
    let top = combine(&la.top, &lb.top, &wa[levels], &wb[levels]);
    reconstruct(&LaplacianPyramid {
        bands,
        top,
        kernel_a,
    })
}

/// Band count used when splining a `patch`-sized block:
/// `max(2, floor(log2 patch) - 2)`.
pub fn auto_levels(patch: usize) -> usize {
    let log2 = (usize::BITS - 1 - patch.leading_zeros()) as usize;
    log2.saturating_sub(2).max(2)
}
