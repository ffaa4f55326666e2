//! Overlapping-patch grid arithmetic, extraction, and the two baseline
//! reassembly strategies: overlap averaging and minimum-error boundary cut.

use crate::error::{Error, Result};
use crate::image::GrayImage;

/// Tiling of an image by square overlapping patches.
///
/// Patch (i, j) has its up-left corner at pixel (i * stride, j * stride)
/// where `stride = patch - overlap`. The grid covers the image exactly:
/// `image_h == (rows - 1) * stride + patch` and likewise for the width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    pub patch: usize,
    pub overlap: usize,
    pub stride: usize,
    pub rows: usize,
    pub cols: usize,
    pub image_h: usize,
    pub image_w: usize,
}

impl GridSpec {
    /// Total number of patches.
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Row-major linear index of cell (row, col).
    pub fn index_of(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.rows && col < self.cols);
        row * self.cols + col
    }

    /// Pixel coordinates of the up-left corner of cell (row, col).
    pub fn origin_of(&self, row: usize, col: usize) -> (usize, usize) {
        (row * self.stride, col * self.stride)
    }
}

/// One patch-sized block of intensities tied to its grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub grid_row: usize,
    pub grid_col: usize,
    /// Pixel row of the up-left corner (`grid_row * stride`).
    pub top: usize,
    /// Pixel column of the up-left corner (`grid_col * stride`).
    pub left: usize,
    /// Row-major `patch` x `patch` intensity block.
    pub data: Vec<f64>,
}

impl Patch {
    #[inline]
    pub fn at(&self, y: usize, x: usize, patch: usize) -> f64 {
        self.data[y * patch + x]
    }
}

/// Build the grid covering `image_h` x `image_w` exactly.
pub fn make_grid(image_h: usize, image_w: usize, patch: usize, overlap: usize) -> Result<GridSpec> {
    if overlap == 0 || patch <= overlap {
        return Err(Error::InvalidParameter(format!(
            "need patch > overlap > 0, got patch {patch}, overlap {overlap}"
        )));
    }
    let stride = patch - overlap;
    if image_h < patch || image_w < patch {
        return Err(Error::InvalidGrid(format!(
            "image {image_h}x{image_w} smaller than a {patch}x{patch} patch"
        )));
    }
    if !(image_h - patch).is_multiple_of(stride) || !(image_w - patch).is_multiple_of(stride) {
        return Err(Error::InvalidGrid(format!(
            "image {image_h}x{image_w} does not divide into {patch}/{overlap} patches; crop first"
        )));
    }
    Ok(GridSpec {
        patch,
        overlap,
        stride,
        rows: (image_h - patch) / stride + 1,
        cols: (image_w - patch) / stride + 1,
        image_h,
        image_w,
    })
}

/// Extract all patches in row-major order (grid_row major, grid_col minor).
pub fn extract_patches(img: &GrayImage, grid: &GridSpec) -> Result<Vec<Patch>> {
    if img.height() != grid.image_h || img.width() != grid.image_w {
        return Err(Error::DimensionMismatch(format!(
            "image {}x{} does not match grid {}x{}",
            img.height(),
            img.width(),
            grid.image_h,
            grid.image_w
        )));
    }
    let mut patches = Vec::with_capacity(grid.len());
    for i in 0..grid.rows {
        for j in 0..grid.cols {
            let (top, left) = grid.origin_of(i, j);
            let block = img.block(top, left, grid.patch, grid.patch);
            patches.push(Patch {
                grid_row: i,
                grid_col: j,
                top,
                left,
                data: block.pixels().to_vec(),
            });
        }
    }
    Ok(patches)
}

// Check one patch per cell and coordinates consistent with the grid, then
// return patches indexed row-major.
fn index_patches<'a>(patches: &'a [Patch], grid: &GridSpec) -> Result<Vec<&'a Patch>> {
    let mut by_cell: Vec<Option<&Patch>> = vec![None; grid.len()];
    for p in patches {
        if p.grid_row >= grid.rows || p.grid_col >= grid.cols {
            return Err(Error::InvalidGrid(format!(
                "patch cell ({},{}) outside {}x{} grid",
                p.grid_row, p.grid_col, grid.rows, grid.cols
            )));
        }
        if p.data.len() != grid.patch * grid.patch {
            return Err(Error::DimensionMismatch(format!(
                "patch data length {} for patch size {}",
                p.data.len(),
                grid.patch
            )));
        }
        let (top, left) = grid.origin_of(p.grid_row, p.grid_col);
        if p.top != top || p.left != left {
            return Err(Error::InvalidGrid(format!(
                "patch ({},{}) has corner ({},{}), expected ({top},{left})",
                p.grid_row, p.grid_col, p.top, p.left
            )));
        }
        let slot = &mut by_cell[grid.index_of(p.grid_row, p.grid_col)];
        if slot.is_some() {
            return Err(Error::InvalidGrid(format!(
                "duplicate patch for cell ({},{})",
                p.grid_row, p.grid_col
            )));
        }
        *slot = Some(p);
    }
    by_cell
        .into_iter()
        .enumerate()
        .map(|(idx, slot)| {
            slot.ok_or_else(|| {
                Error::InvalidGrid(format!(
                    "missing patch for cell ({},{})",
                    idx / grid.cols,
                    idx % grid.cols
                ))
            })
        })
        .collect()
}

/// Reassemble by averaging every patch value covering each pixel.
pub fn assemble_average(patches: &[Patch], grid: &GridSpec) -> Result<GrayImage> {
    let ordered = index_patches(patches, grid)?;
    let mut sum = vec![0.0f64; grid.image_h * grid.image_w];
    let mut count = vec![0u32; grid.image_h * grid.image_w];
    for p in ordered {
        for y in 0..grid.patch {
            for x in 0..grid.patch {
                let idx = (p.top + y) * grid.image_w + (p.left + x);
                sum[idx] += p.at(y, x, grid.patch);
                count[idx] += 1;
            }
        }
    }
    let pixels = sum
        .iter()
        .zip(&count)
        .map(|(&s, &c)| s / c as f64)
        .collect();
    GrayImage::new(grid.image_h, grid.image_w, pixels)
}

/// Minimum-cost monotone vertical seam through a `rows` x `cols` error
/// surface (row-major). Returns one column index per row; the seam advances
/// by at most one column between rows. Ties resolve to the smallest column.
fn min_vertical_seam(err: &[f64], rows: usize, cols: usize) -> Vec<usize> {
    let mut cost = vec![0.0f64; rows * cols];
    cost[..cols].copy_from_slice(&err[..cols]);
    for r in 1..rows {
        for c in 0..cols {
            let lo = c.saturating_sub(1);
            let hi = (c + 1).min(cols - 1);
            let mut best = f64::INFINITY;
            for pc in lo..=hi {
                let v = cost[(r - 1) * cols + pc];
                if v < best {
                    best = v;
                }
            }
            cost[r * cols + c] = err[r * cols + c] + best;
        }
    }
    let last = rows - 1;
    let mut seam = vec![0usize; rows];
    let mut best_c = 0;
    for c in 1..cols {
        if cost[last * cols + c] < cost[last * cols + best_c] {
            best_c = c;
        }
    }
    seam[last] = best_c;
    for r in (0..last).rev() {
        let c = seam[r + 1];
        let lo = c.saturating_sub(1);
        let hi = (c + 1).min(cols - 1);
        let mut pick = lo;
        for pc in lo..=hi {
            if cost[r * cols + pc] < cost[r * cols + pick] {
                pick = pc;
            }
        }
        seam[r] = pick;
    }
    seam
}

/// Reassemble with minimum-error boundary cuts.
///
/// Patches are placed left-to-right, top-to-bottom. In each overlap strip a
/// monotone minimum-cost seam over squared pixel differences decides which
/// side keeps the canvas and which takes the incoming patch; pixels on the
/// seam itself take the incoming values. Where a patch has both a left and a
/// top overlap, the vertical seam owns the shared corner square.
pub fn assemble_mincut(patches: &[Patch], grid: &GridSpec) -> Result<GrayImage> {
    let ordered = index_patches(patches, grid)?;
    let (pw, ov) = (grid.patch, grid.overlap);
    let mut canvas = GrayImage::zeros(grid.image_h, grid.image_w);
    for p in ordered {
        // take[y * pw + x]: does local pixel (y, x) come from the incoming patch?
        let mut take = vec![true; pw * pw];
        if p.grid_col > 0 {
            // vertical seam in the left strip: pw rows x ov cols
            let mut err = vec![0.0f64; pw * ov];
            for y in 0..pw {
                for x in 0..ov {
                    let d = p.at(y, x, pw) - canvas.at(p.top + y, p.left + x);
                    err[y * ov + x] = d * d;
                }
            }
            let seam = min_vertical_seam(&err, pw, ov);
            for y in 0..pw {
                for x in 0..ov {
                    take[y * pw + x] = x >= seam[y];
                }
            }
        }
        if p.grid_row > 0 {
            // horizontal seam in the top strip: transpose into the same DP
            let mut err = vec![0.0f64; pw * ov];
            for x in 0..pw {
                for y in 0..ov {
                    let d = p.at(y, x, pw) - canvas.at(p.top + y, p.left + x);
                    err[x * ov + y] = d * d;
                }
            }
            let seam = min_vertical_seam(&err, pw, ov);
            // the corner square (x < ov) stays with the vertical seam's choice
            let x0 = if p.grid_col > 0 { ov } else { 0 };
            for x in x0..pw {
                for y in 0..ov {
                    take[y * pw + x] = y >= seam[x];
                }
            }
        }
        for y in 0..pw {
            for x in 0..pw {
                if take[y * pw + x] {
                    canvas.set(p.top + y, p.left + x, p.at(y, x, pw));
                }
            }
        }
    }
    Ok(canvas)
}
