//! Training-set ingestion and a deterministic synthetic photo/sketch
//! generator, so the whole pipeline is testable at desk scale without a
//! face dataset.
//!
//! Synthetic photos are smooth random fields; the matching sketch applies a
//! fixed "artist style" (tone curve plus unsharp masking) identically to
//! every photo, which is exactly the consistency the dictionaries need to
//! learn anything.

use std::f64::consts::TAU;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{crop_centered, largest_grid_dim, load_image, GrayImage};
use crate::mrf::TrainingPair;

/// Parameters of the synthetic photo-to-sketch style.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticStyle {
    pub seed: u64,
    /// Tone-curve exponent, > 0.
    pub gamma: f64,
    /// Unsharp-mask strength, >= 0.
    pub edge_gain: f64,
    /// Box-blur radius for the unsharp mask, in pixels.
    pub blur_radius: usize,
}

impl Default for SyntheticStyle {
    fn default() -> Self {
        Self {
            seed: 0,
            gamma: 2.0,
            edge_gain: 1.5,
            blur_radius: 2,
        }
    }
}

impl SyntheticStyle {
    fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if !(self.edge_gain >= 0.0 && self.edge_gain.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "edge_gain must be nonnegative, got {}",
                self.edge_gain
            )));
        }
        Ok(())
    }
}

/// Box blur with a (2r+1)-sided window; out-of-bounds samples are dropped
/// (the window mean uses only in-bounds pixels), so constants are preserved.
pub fn box_blur(img: &GrayImage, radius: usize) -> GrayImage {
    if radius == 0 {
        return img.clone();
    }
    let (h, w) = (img.height(), img.width());
    let r = radius as isize;
    let mut out = GrayImage::zeros(h, w);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0;
            let mut n = 0u32;
            for dy in -r..=r {
                for dx in -r..=r {
                    let (sy, sx) = (y + dy, x + dx);
                    if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                        acc += img.at(sy as usize, sx as usize);
                        n += 1;
                    }
                }
            }
            out.set(y as usize, x as usize, acc / n as f64);
        }
    }
    out
}

/// The photo-to-sketch map applied to every synthetic pair:
/// `clamp(photo^gamma + edge_gain * (photo - boxblur(photo)))`.
pub fn apply_style(photo: &GrayImage, style: &SyntheticStyle) -> GrayImage {
    let blurred = box_blur(photo, style.blur_radius);
    let mut out = GrayImage::zeros(photo.height(), photo.width());
    for y in 0..photo.height() {
        for x in 0..photo.width() {
            let v = photo.at(y, x);
            let s = v.powf(style.gamma) + style.edge_gain * (v - blurred.at(y, x));
            out.set(y, x, s.clamp(0.0, 1.0));
        }
    }
    out
}

/// Both pipeline grids must divide the generated images, and the node counts
/// must be odd for the full-coverage schedule (including the 10/5 variant
/// used in blend comparisons). A dimension works exactly when it is a
/// positive multiple of 20.
pub fn check_synthetic_dim(dim: usize) -> Result<()> {
    if dim == 0 || !dim.is_multiple_of(20) {
        return Err(Error::InvalidParameter(format!(
            "dimension {dim} is not a positive multiple of 20; the 20/10 grid \
             needs (dim - 20) % 20 == 0 with an odd node count"
        )));
    }
    Ok(())
}

fn smooth_field(h: usize, w: usize, rng: &mut ChaCha8Rng) -> GrayImage {
    // sum of 6 products of sinusoids at random low frequencies and phases
    struct Wave {
        fy: f64,
        fx: f64,
        py: f64,
        px: f64,
    }
    let waves: Vec<Wave> = (0..6)
        .map(|_| Wave {
            fy: rng.gen_range(0.5..2.5),
            fx: rng.gen_range(0.5..2.5),
            py: rng.gen_range(0.0..TAU),
            px: rng.gen_range(0.0..TAU),
        })
        .collect();
    let mut img = GrayImage::zeros(h, w);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for y in 0..h {
        for x in 0..w {
            let mut v = 0.0;
            for wave in &waves {
                v += (TAU * wave.fy * y as f64 / h as f64 + wave.py).sin()
                    * (TAU * wave.fx * x as f64 / w as f64 + wave.px).sin();
            }
            lo = lo.min(v);
            hi = hi.max(v);
            img.set(y, x, v);
        }
    }
    let span = hi - lo;
    if span == 0.0 {
        return GrayImage::constant(h, w, 0.5);
    }
    img.map(|v| (v - lo) / span)
}

/// Generate `n` deterministic photo/sketch pairs of size `h` x `w`.
pub fn gen_synthetic_pairs(
    n: usize,
    h: usize,
    w: usize,
    style: &SyntheticStyle,
) -> Result<Vec<TrainingPair>> {
    style.validate()?;
    check_synthetic_dim(h)?;
    check_synthetic_dim(w)?;
    (0..n)
        .map(|j| {
            let mut rng = ChaCha8Rng::seed_from_u64(
                style.seed.wrapping_add((j as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)),
            );
            let photo = smooth_field(h, w, &mut rng);
            let sketch = apply_style(&photo, style);
            TrainingPair::new(photo, sketch)
        })
        .collect()
}

/// Load a training manifest: one `photo_path<TAB>sketch_path` per line,
/// paths relative to the manifest file. All pairs are center-cropped to the
/// common largest grid-valid dimensions for the given patch/overlap.
pub fn load_manifest(
    path: impl AsRef<Path>,
    patch: usize,
    overlap: usize,
) -> Result<Vec<TrainingPair>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));

    let mut raw: Vec<(GrayImage, GrayImage)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (photo_rel, sketch_rel) = line.split_once('\t').ok_or(Error::Manifest {
            line: line_no,
            msg: "expected photo_path<TAB>sketch_path".into(),
        })?;
        let photo = load_image(base.join(photo_rel)).map_err(|e| Error::Manifest {
            line: line_no,
            msg: e.to_string(),
        })?;
        let sketch = load_image(base.join(sketch_rel)).map_err(|e| Error::Manifest {
            line: line_no,
            msg: e.to_string(),
        })?;
        if !photo.same_dims(&sketch) {
            return Err(Error::Manifest {
                line: line_no,
                msg: format!(
                    "photo {}x{} and sketch {}x{} differ in size",
                    photo.height(),
                    photo.width(),
                    sketch.height(),
                    sketch.width()
                ),
            });
        }
        raw.push((photo, sketch));
    }
    if raw.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }

    let min_h = raw.iter().map(|(p, _)| p.height()).min().unwrap();
    let min_w = raw.iter().map(|(p, _)| p.width()).min().unwrap();
    let target_h = largest_grid_dim(min_h, patch, overlap).ok_or_else(|| {
        Error::InvalidGrid(format!("smallest pair height {min_h} is below one patch"))
    })?;
    let target_w = largest_grid_dim(min_w, patch, overlap).ok_or_else(|| {
        Error::InvalidGrid(format!("smallest pair width {min_w} is below one patch"))
    })?;

    raw.into_iter()
        .map(|(photo, sketch)| {
            TrainingPair::new(
                crop_centered(&photo, target_h, target_w)?,
                crop_centered(&sketch, target_h, target_w)?,
            )
        })
        .collect()
}
