//! Images and the pixel-level primitives used by the PIHA-style pipeline.

use thiserror::Error;

use crate::extractors::BitString;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImageError {
    #[error("invalid image dimensions {height}x{width}x{channels}")]
    InvalidDims { height: usize, width: usize, channels: usize },
    #[error("pixel buffer has {got} values, expected {expected}")]
    BufferLength { expected: usize, got: usize },
    #[error("expected {expected} channels, got {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("sum-pooling a {height}x{width} plane with block {block} leaves no output")]
    EmptyOutput { height: usize, width: usize, block: usize },
    #[error("plane {height}x{width} is too small for a 3x3 neighbourhood")]
    TooSmall { height: usize, width: usize },
    #[error("blur sigma must be positive and finite, got {0}")]
    BadSigma(f64),
}

/// 8-bit image, row-major and channel-interleaved.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<u8>) -> Result<Self, ImageError> {
        if height == 0 || width == 0 || !(channels == 1 || channels == 3) {
            return Err(ImageError::InvalidDims { height, width, channels });
        }
        let expected = height * width * channels;
        if pixels.len() != expected {
            return Err(ImageError::BufferLength { expected, got: pixels.len() });
        }
        Ok(Self { height, width, channels, pixels })
    }

    /// Image with every channel of every pixel set to `value`.
    pub fn filled(height: usize, width: usize, channels: usize, value: u8) -> Result<Self, ImageError> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of scalar inputs, `height × width × channels`.
    pub fn dim(&self) -> usize {
        self.pixels.len()
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> u8 {
        self.pixels[(row * self.width + col) * self.channels + channel]
    }

    /// Pixel values mapped to `[0, 1]`.
    pub fn normalized(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| f64::from(p) / 255.0).collect()
    }

    /// Euclidean distance between two same-shape images in normalized pixel units.
    pub fn normalized_distance(&self, other: &Image) -> f64 {
        let sum: f64 = self
            .pixels
            .iter()
            .zip(&other.pixels)
            .map(|(&a, &b)| {
                let diff = (f64::from(a) - f64::from(b)) / 255.0;
                diff * diff
            })
            .sum();
        sum.sqrt()
    }
}

/// Single-channel real-valued plane.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayPlane {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl GrayPlane {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self, ImageError> {
        if height == 0 || width == 0 {
            return Err(ImageError::InvalidDims { height, width, channels: 1 });
        }
        if values.len() != height * width {
            return Err(ImageError::BufferLength { expected: height * width, got: values.len() });
        }
        Ok(Self { height, width, values })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }
}

/// Normalized 3×3 Gaussian kernel, indexed `[row + 1][col + 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianKernel3 {
    weights: [[f64; 3]; 3],
}

impl GaussianKernel3 {
    pub fn new(sigma: f64) -> Result<Self, ImageError> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(ImageError::BadSigma(sigma));
        }
        let mut weights = [[0.0; 3]; 3];
        let mut total = 0.0;
        for (r, row) in weights.iter_mut().enumerate() {
            for (c, w) in row.iter_mut().enumerate() {
                let (i, j) = (r as f64 - 1.0, c as f64 - 1.0);
                *w = (-(i * i + j * j) / (2.0 * sigma * sigma)).exp();
                total += *w;
            }
        }
        for w in weights.iter_mut().flatten() {
            *w /= total;
        }
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &[[f64; 3]; 3] {
        &self.weights
    }
}

/// Convolves every channel with a 3×3 Gaussian, replicate-padding the borders.
/// Results are rounded to the nearest integer and clamped to `[0, 255]`.
pub fn gaussian_blur_3x3(img: &Image, kernel: &GaussianKernel3) -> Image {
    let (h, w, ch) = (img.height, img.width, img.channels);
    let mut out = vec![0u8; img.pixels.len()];
    for row in 0..h {
        for col in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (kr, krow) in kernel.weights.iter().enumerate() {
                    let r = (row + kr).saturating_sub(1).min(h - 1);
                    for (kc, &weight) in krow.iter().enumerate() {
                        let cc = (col + kc).saturating_sub(1).min(w - 1);
                        acc += weight * f64::from(img.get(r, cc, c));
                    }
                }
                out[(row * w + col) * ch + c] = acc.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Image { height: h, width: w, channels: ch, pixels: out }
}

/// Hue channel of an RGB image, rescaled from degrees to `[0, 255]`.
/// Achromatic pixels get hue 0.
pub fn rgb_to_hue(img: &Image) -> Result<GrayPlane, ImageError> {
    if img.channels != 3 {
        return Err(ImageError::ChannelMismatch { expected: 3, got: img.channels });
    }
    let values = img.pixels.chunks_exact(3).map(|px| hue_degrees(px[0], px[1], px[2]) * 255.0 / 360.0).collect();
    GrayPlane::new(img.height, img.width, values)
}

fn hue_degrees(r: u8, g: u8, b: u8) -> f64 {
    let (r, g, b) = (f64::from(r), f64::from(g), f64::from(b));
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    if delta == 0.0 {
        return 0.0;
    }
    let h = if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    if h >= 360.0 {
        h - 360.0
    } else {
        h
    }
}

/// Non-overlapping `block × block` sum pooling; partial edge blocks are dropped.
pub fn sum_pool(plane: &GrayPlane, block: usize) -> Result<GrayPlane, ImageError> {
    let out_h = plane.height.checked_div(block).unwrap_or(0);
    let out_w = plane.width.checked_div(block).unwrap_or(0);
    if out_h == 0 || out_w == 0 {
        return Err(ImageError::EmptyOutput { height: plane.height, width: plane.width, block });
    }
    let mut values = vec![0.0; out_h * out_w];
    for (i, v) in values.iter_mut().enumerate() {
        let (br, bc) = (i / out_w, i % out_w);
        for r in br * block..(br + 1) * block {
            let start = r * plane.width + bc * block;
            *v += plane.values[start..start + block].iter().sum::<f64>();
        }
    }
    GrayPlane::new(out_h, out_w, values)
}

// Clockwise from the top-left neighbour; the first neighbour is the code's MSB.
const LBP_OFFSETS: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1)];

/// Radius-1, 8-neighbour local binary pattern over interior pixels.
///
/// Bit is set when the neighbour is `>=` the centre. Codes are concatenated
/// row-major, each contributing 8 bits MSB-first.
pub fn lbp(plane: &GrayPlane) -> Result<BitString, ImageError> {
    let (h, w) = (plane.height, plane.width);
    if h < 3 || w < 3 {
        return Err(ImageError::TooSmall { height: h, width: w });
    }
    let mut codes = Vec::with_capacity((h - 2) * (w - 2));
    for row in 1..h - 1 {
        for col in 1..w - 1 {
            let center = plane.get(row, col);
            let code = LBP_OFFSETS.iter().fold(0u8, |code, &(dr, dc)| {
                let n = plane.get(row.wrapping_add_signed(dr), col.wrapping_add_signed(dc));
                (code << 1) | u8::from(n >= center)
            });
            codes.push(code);
        }
    }
    Ok(BitString::from_bytes(codes))
}
