//! Grayscale image representation and file I/O.
//!
//! Images are real-valued in [0,1] in memory and 8-bit on disk. Binary PGM
//! (P5) is the interchange format; grayscale PNG is also accepted. Loading a
//! color PNG converts to luminance with the usual 0.299/0.587/0.114 weights.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const LUMA_R: f64 = 0.299;
const LUMA_G: f64 = 0.587;
const LUMA_B: f64 = 0.114;

/// Dense grayscale raster, row-major, one `f64` per pixel.
///
/// Intensities are in [0,1] straight after a load; intermediate math may
/// leave that range and is only clamped when saving.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidImage(format!(
                "zero-dimension image ({height}x{width})"
            )));
        }
        if pixels.len() != height * width {
            return Err(Error::InvalidImage(format!(
                "pixel buffer length {} does not match {height}x{width}",
                pixels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    /// Image of constant intensity `value`.
    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            pixels: vec![value; height * width],
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::constant(height, width, 0.0)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f64 {
        debug_assert!(y < self.height && x < self.width);
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        debug_assert!(y < self.height && x < self.width);
        self.pixels[y * self.width + x] = v;
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.pixels[y * self.width..(y + 1) * self.width]
    }

    /// Map every pixel through `f`, producing a new image.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            pixels: self.pixels.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn same_dims(&self, other: &GrayImage) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Copy of the `h`x`w` block whose up-left corner is (`top`, `left`).
    pub fn block(&self, top: usize, left: usize, h: usize, w: usize) -> GrayImage {
        assert!(top + h <= self.height && left + w <= self.width, "block out of bounds");
        let mut pixels = Vec::with_capacity(h * w);
        for y in top..top + h {
            pixels.extend_from_slice(&self.pixels[y * self.width + left..y * self.width + left + w]);
        }
        GrayImage {
            height: h,
            width: w,
            pixels,
        }
    }

    /// Overwrite the block at (`top`, `left`) with `src`.
    pub fn write_block(&mut self, top: usize, left: usize, src: &GrayImage) {
        assert!(
            top + src.height <= self.height && left + src.width <= self.width,
            "block out of bounds"
        );
        for y in 0..src.height {
            let dst_off = (top + y) * self.width + left;
            self.pixels[dst_off..dst_off + src.width]
                .copy_from_slice(&src.pixels[y * src.width..(y + 1) * src.width]);
        }
    }
}

/// Root mean squared difference between two equal-size images.
pub fn rmse(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::DimensionMismatch(format!(
            "rmse: {}x{} vs {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    let sum: f64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum();
    Ok((sum / a.pixels.len() as f64).sqrt())
}

/// Largest dimension `<= dim` usable for a full-coverage grid of the given
/// patch size and overlap, i.e. satisfying
/// `(dim - patch) % (2 * (patch - overlap)) == 0`.
pub fn largest_grid_dim(dim: usize, patch: usize, overlap: usize) -> Option<usize> {
    assert!(patch > overlap && overlap > 0, "need patch > overlap > 0");
    let step = 2 * (patch - overlap);
    if dim < patch {
        return None;
    }
    Some(dim - (dim - patch) % step)
}

/// Center-crop to exactly `target_h` x `target_w`. When the amount removed on
/// an axis is odd, the extra row/column comes off the bottom/right.
pub fn crop_centered(img: &GrayImage, target_h: usize, target_w: usize) -> Result<GrayImage> {
    if target_h > img.height || target_w > img.width || target_h == 0 || target_w == 0 {
        return Err(Error::DimensionMismatch(format!(
            "cannot crop {}x{} to {}x{}",
            img.height, img.width, target_h, target_w
        )));
    }
    let top = (img.height - target_h) / 2;
    let left = (img.width - target_w) / 2;
    Ok(img.block(top, left, target_h, target_w))
}

/// Center-crop `img` to the largest dimensions that admit a full-coverage
/// patch grid (see [`largest_grid_dim`]).
pub fn crop_to_grid(img: &GrayImage, patch: usize, overlap: usize) -> Result<GrayImage> {
    let h = largest_grid_dim(img.height, patch, overlap);
    let w = largest_grid_dim(img.width, patch, overlap);
    match (h, w) {
        (Some(h), Some(w)) => crop_centered(img, h, w),
        _ => Err(Error::InvalidGrid(format!(
            "image {}x{} smaller than one {patch}x{patch} patch",
            img.height, img.width
        ))),
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encode as binary PGM (P5, maxval 255). Pixels are clamped to [0,1] and
/// rounded half-up to 8 bits.
pub fn to_pgm_bytes(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.pixels.iter().map(|&v| quantize(v)));
    out
}

struct PgmParser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PgmParser<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    // Skips whitespace and `#` comments between header tokens.
    fn skip_separators(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<&'a [u8]> {
        self.skip_separators();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::InvalidImage("truncated PGM header".into()));
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn number(&mut self) -> Result<usize> {
        let tok = self.token()?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::InvalidImage("malformed PGM header number".into()))
    }
}

/// Decode a binary PGM (P5) byte stream. Accepts 8- and 16-bit samples and
/// maps [0, maxval] onto [0, 1] by division.
pub fn from_pgm_bytes(bytes: &[u8]) -> Result<GrayImage> {
    let mut p = PgmParser::new(bytes);
    let magic = p.token()?;
    if magic != b"P5" {
        return Err(Error::UnsupportedFormat(format!(
            "expected PGM magic P5, got {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let width = p.number()?;
    let height = p.number()?;
    let maxval = p.number()?;
    if width == 0 || height == 0 {
        return Err(Error::InvalidImage(format!(
            "zero-dimension image ({height}x{width})"
        )));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::InvalidImage(format!("bad PGM maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    p.pos += 1;
    let n = width * height;
    let wide = maxval > 255;
    let need = n * if wide { 2 } else { 1 };
    let raster = bytes
        .get(p.pos..p.pos + need)
        .ok_or_else(|| Error::InvalidImage("truncated PGM raster".into()))?;
    let maxval = maxval as f64;
    let pixels = if wide {
        raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / maxval)
            .collect()
    } else {
        raster.iter().map(|&b| b as f64 / maxval).collect()
    };
    GrayImage::new(height, width, pixels)
}

fn load_png(path: &Path) -> Result<GrayImage> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::InvalidImage(format!("{}: {e}", path.display())))?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::InvalidImage(format!("{}: {e}", path.display())))?;
    let (w, h) = (info.width as usize, info.height as usize);
    if w == 0 || h == 0 {
        return Err(Error::InvalidImage("zero-dimension image".into()));
    }
    let data = &buf[..info.buffer_size()];
    use png::{BitDepth, ColorType};
    let pixels: Vec<f64> = match (info.color_type, info.bit_depth) {
        (ColorType::Grayscale, BitDepth::Eight) => {
            data.iter().map(|&v| v as f64 / 255.0).collect()
        }
        (ColorType::Grayscale, BitDepth::Sixteen) => data
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 65535.0)
            .collect(),
        (ColorType::GrayscaleAlpha, BitDepth::Eight) => {
            data.chunks_exact(2).map(|c| c[0] as f64 / 255.0).collect()
        }
        (ColorType::Rgb, BitDepth::Eight) => data
            .chunks_exact(3)
            .map(|c| (LUMA_R * c[0] as f64 + LUMA_G * c[1] as f64 + LUMA_B * c[2] as f64) / 255.0)
            .collect(),
        (ColorType::Rgba, BitDepth::Eight) => data
            .chunks_exact(4)
            .map(|c| (LUMA_R * c[0] as f64 + LUMA_G * c[1] as f64 + LUMA_B * c[2] as f64) / 255.0)
            .collect(),
        (ct, bd) => {
            return Err(Error::UnsupportedFormat(format!(
                "PNG {ct:?}/{bd:?} not supported"
            )))
        }
    };
    GrayImage::new(h, w, pixels)
}

fn save_png(img: &GrayImage, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::InvalidImage(format!("{}: {e}", path.display())))?;
    let data: Vec<u8> = img.pixels.iter().map(|&v| quantize(v)).collect();
    writer
        .write_image_data(&data)
        .map_err(|e| Error::InvalidImage(format!("{}: {e}", path.display())))
}

fn extension_of(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

/// Load a grayscale image from a `.pgm`/`.pnm` or `.png` file.
pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    match extension_of(path).as_str() {
        "pgm" | "pnm" => {
            let mut bytes = Vec::new();
            File::open(path)
                .and_then(|mut f| f.read_to_end(&mut bytes))
                .map_err(|e| Error::io(path, e))?;
            from_pgm_bytes(&bytes)
        }
        "png" => load_png(path),
        other => Err(Error::UnsupportedFormat(format!(
            "unrecognized image extension {other:?} on {}",
            path.display()
        ))),
    }
}

/// Save as 8-bit grayscale; format follows the file extension.
pub fn save_image(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match extension_of(path).as_str() {
        "pgm" | "pnm" => {
            let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
            f.write_all(&to_pgm_bytes(img))
                .map_err(|e| Error::io(path, e))
        }
        "png" => save_png(img, path),
        other => Err(Error::UnsupportedFormat(format!(
            "unrecognized image extension {other:?} on {}",
            path.display()
        ))),
    }
}
