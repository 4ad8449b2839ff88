//! Grayscale images and the pixel-level primitives used by detection.

use std::path::Path;

use ::image::{DynamicImage, ImageFormat, ImageReader};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Row-major grayscale image with intensities in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage);
        }
        if data.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                got: data.len(),
            });
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 255.0) {
            return Err(Error::InvalidArgument(format!(
                "intensity {bad} outside [0, 255]"
            )));
        }
        Ok(Self { width, height, data })
    }

    /// Builds an image from a per-pixel function; values are clamped to `[0, 255]`.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y).clamp(0.0, 255.0));
            }
        }
        Self { width, height, data }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self::from_fn(width, height, |_, _| value)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Quantizes to 8 bits (round to nearest).
    pub fn to_luma8(&self) -> ::image::GrayImage {
        let bytes = self.data.iter().map(|v| v.round() as u8).collect();
        ::image::GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer length matches dimensions")
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.to_luma8()
            .save_with_format(path, ImageFormat::Png)
            .map_err(|e| Error::UnreadableFile {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })
    }
}

/// Loads PGM (P2/P5) or PNG (8/16-bit gray, 8-bit RGB) as a gray image.
///
/// 16-bit data is stretched min/max to `[0, 255]` per image; RGB is
/// converted with Rec.601 luminance weights.
pub fn load_gray(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let unreadable = |reason: String| Error::UnreadableFile {
        path: path.to_path_buf(),
        reason,
    };
    let reader = ImageReader::open(path)
        .map_err(|e| unreadable(e.to_string()))?
        .with_guessed_format()
        .map_err(|e| unreadable(e.to_string()))?;
    let format = reader.format();
    match format {
        Some(ImageFormat::Png) | Some(ImageFormat::Pnm) => {}
        Some(other) => return Err(Error::UnsupportedFormat(format!("{other:?}"))),
        None => return Err(Error::UnsupportedFormat("unknown".into())),
    }
    let decoded = reader.decode().map_err(|e| unreadable(e.to_string()))?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::EmptyImage);
    }
    let data: Vec<f64> = match decoded {
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(f64::from).collect(),
        DynamicImage::ImageLuma16(buf) => {
            let raw = buf.into_raw();
            let lo = *raw.iter().min().unwrap_or(&0) as f64;
            let hi = *raw.iter().max().unwrap_or(&0) as f64;
            let span = hi - lo;
            raw.into_iter()
                .map(|v| {
                    if span > 0.0 {
                        (v as f64 - lo) / span * 255.0
                    } else {
                        0.0
                    }
                })
                .collect()
        }
        DynamicImage::ImageRgb8(buf) if format == Some(ImageFormat::Png) => buf
            .pixels()
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .collect(),
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "{:?} pixel layout {:?}",
                format,
                other.color()
            )))
        }
    };
    GrayImage::new(w, h, data)
}

/// Per-pixel image derivatives, same dimensions as the source.
#[derive(Debug, Clone)]
pub struct GradientField {
    width: usize,
    height: usize,
    gx: Vec<f64>,
    gy: Vec<f64>,
}

impl GradientField {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.gx[i], self.gy[i])
    }

    pub fn gx(&self) -> &[f64] {
        &self.gx
    }

    pub fn gy(&self) -> &[f64] {
        &self.gy
    }
}

/// Sobel gradient normalized to unit response on a unit ramp.
///
/// Implemented separably: a derivative along the axis (central difference
/// inside, one-sided on the border) followed by `[1 2 1]/4` smoothing across
/// it with replicated borders. Interior values equal the 3x3 Sobel kernel
/// divided by 8.
pub fn gradient(img: &GrayImage) -> Result<GradientField> {
    let (w, h) = (img.width, img.height);
    if w < 3 || h < 3 {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            min: 3,
        });
    }
    let px = |x: usize, y: usize| img.data[y * w + x];

    let mut dx = vec![0.0; w * h];
    let mut dy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            dx[y * w + x] = if x == 0 {
                px(1, y) - px(0, y)
            } else if x == w - 1 {
                px(w - 1, y) - px(w - 2, y)
            } else {
                0.5 * (px(x + 1, y) - px(x - 1, y))
            };
            dy[y * w + x] = if y == 0 {
                px(x, 1) - px(x, 0)
            } else if y == h - 1 {
                px(x, h - 1) - px(x, h - 2)
            } else {
                0.5 * (px(x, y + 1) - px(x, y - 1))
            };
        }
    }

    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        let (ym, yp) = (y.saturating_sub(1), (y + 1).min(h - 1));
        for x in 0..w {
            let (xm, xp) = (x.saturating_sub(1), (x + 1).min(w - 1));
            gx[y * w + x] = 0.25 * (dx[ym * w + x] + 2.0 * dx[y * w + x] + dx[yp * w + x]);
            gy[y * w + x] = 0.25 * (dy[y * w + xm] + 2.0 * dy[y * w + x] + dy[y * w + xp]);
        }
    }
    Ok(GradientField {
        width: w,
        height: h,
        gx,
        gy,
    })
}

/// Min and max intensity in the `(2w+1)^2` window around the nearest pixel
/// to `center`, clipped to the image.
pub fn local_intensity_range(img: &GrayImage, center: (f64, f64), window: usize) -> (f64, f64) {
    let w = window.max(1) as i64;
    let cx = center.0.round() as i64;
    let cy = center.1.round() as i64;
    let x0 = (cx - w).clamp(0, img.width as i64 - 1) as usize;
    let x1 = (cx + w).clamp(0, img.width as i64 - 1) as usize;
    let y0 = (cy - w).clamp(0, img.height as i64 - 1) as usize;
    let y1 = (cy + w).clamp(0, img.height as i64 - 1) as usize;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for y in y0..=y1 {
        for &v in &img.data[y * img.width + x0..=y * img.width + x1] {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    (lo, hi)
}

/// How a gray image is split into foreground (dark) and background.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThresholdSpec {
    /// Foreground iff intensity < level.
    Global { level: f64 },
    /// Foreground iff intensity < (mean over the `block`x`block` window) - offset.
    Adaptive { block: usize, offset: f64 },
}

impl std::fmt::Display for ThresholdSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Global { level } => write!(f, "global({level})"),
            Self::Adaptive { block, offset } => write!(f, "adaptive({block}, {offset})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryImage {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                got: data.len(),
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    /// Foreground lookup that treats out-of-bounds as background.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.data[y as usize * self.width + x as usize]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|b| **b).count()
    }
}

pub fn threshold(img: &GrayImage, spec: &ThresholdSpec) -> Result<BinaryImage> {
    let (w, h) = (img.width, img.height);
    match *spec {
        ThresholdSpec::Global { level } => Ok(BinaryImage {
            width: w,
            height: h,
            data: img.data.iter().map(|&v| v < level).collect(),
        }),
        ThresholdSpec::Adaptive { block, offset } => {
            if block < 3 || block % 2 == 0 {
                return Err(Error::InvalidBlockSize(block));
            }
            let integral = IntegralImage::new(img);
            let r = block / 2;
            let mut data = Vec::with_capacity(w * h);
            for y in 0..h {
                let (y0, y1) = (y.saturating_sub(r), (y + r).min(h - 1));
                for x in 0..w {
                    let (x0, x1) = (x.saturating_sub(r), (x + r).min(w - 1));
                    let mean = integral.mean(x0, y0, x1, y1);
                    data.push(img.data[y * w + x] < mean - offset);
                }
            }
            Ok(BinaryImage {
                width: w,
                height: h,
                data,
            })
        }
    }
}

/// Summed-area table with one row/column of zero padding.
struct IntegralImage {
    stride: usize,
    sums: Vec<f64>,
}

impl IntegralImage {
    fn new(img: &GrayImage) -> Self {
        let stride = img.width + 1;
        let mut sums = vec![0.0; stride * (img.height + 1)];
        for y in 0..img.height {
            let mut row = 0.0;
            for x in 0..img.width {
                row += img.data[y * img.width + x];
                sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + row;
            }
        }
        Self { stride, sums }
    }

    /// Mean over the inclusive rectangle.
    fn mean(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        let s = self.stride;
        let total = self.sums[(y1 + 1) * s + x1 + 1] - self.sums[y0 * s + x1 + 1]
            - self.sums[(y1 + 1) * s + x0]
            + self.sums[y0 * s + x0];
        total / ((x1 - x0 + 1) * (y1 - y0 + 1)) as f64
    }
}

/// 3x3 box dilation; out-of-bounds counts as background.
pub fn dilate(bin: &BinaryImage) -> BinaryImage {
    box_filter(bin, false, |acc, v| acc || v)
}

/// 3x3 box erosion; out-of-bounds counts as foreground so borders are not eaten.
pub fn erode(bin: &BinaryImage) -> BinaryImage {
    box_filter(bin, true, |acc, v| acc && v)
}

/// Morphological closing (dilate, then erode) with a 3x3 box.
pub fn close(bin: &BinaryImage) -> BinaryImage {
    erode(&dilate(bin))
}

fn box_filter(bin: &BinaryImage, outside: bool, op: impl Fn(bool, bool) -> bool) -> BinaryImage {
    let (w, h) = (bin.width, bin.height);
    let at = |x: i64, y: i64| {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            outside
        } else {
            bin.data[y as usize * w + x as usize]
        }
    };
    // separable: horizontal pass then vertical pass
    let mut tmp = vec![false; w * h];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            tmp[y as usize * w + x as usize] = op(op(at(x - 1, y), at(x, y)), at(x + 1, y));
        }
    }
    let at_tmp = |x: i64, y: i64| {
        if y < 0 || y >= h as i64 {
            outside
        } else {
            tmp[y as usize * w + x as usize]
        }
    };
    let mut data = vec![false; w * h];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            data[y as usize * w + x as usize] =
                op(op(at_tmp(x, y - 1), at_tmp(x, y)), at_tmp(x, y + 1));
        }
    }
    BinaryImage {
        width: w,
        height: h,
        data,
    }
}

/// Separable Gaussian blur with replicated borders (kernel radius `ceil(4 sigma)`).
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> GrayImage {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (4.0 * sigma).ceil() as i64;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= norm);

    let (w, h) = (img.width as i64, img.height as i64);
    let mut tmp = vec![0.0; img.data.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, i) in kernel.iter().zip(-radius..=radius) {
                let xx = (x + i).clamp(0, w - 1);
                acc += k * img.data[(y * w + xx) as usize];
            }
            tmp[(y * w + x) as usize] = acc;
        }
    }
    let mut data = vec![0.0; img.data.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, i) in kernel.iter().zip(-radius..=radius) {
                let yy = (y + i).clamp(0, h - 1);
                acc += k * tmp[(yy * w + x) as usize];
            }
            data[(y * w + x) as usize] = acc.clamp(0.0, 255.0);
        }
    }
    GrayImage {
        width: img.width,
        height: img.height,
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(w: usize, h: usize) -> GrayImage {
        GrayImage::from_fn(w, h, |x, _| x as f64)
    }

    #[test]
    fn rejects_bad_buffers() {
        assert!(matches!(GrayImage::new(0, 3, vec![]), Err(Error::EmptyImage)));
        assert!(GrayImage::new(2, 2, vec![0.0; 3]).is_err());
        assert!(GrayImage::new(1, 1, vec![256.0]).is_err());
        assert!(GrayImage::new(1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let g = gradient(&GrayImage::filled(7, 5, 128.0)).unwrap();
        assert!(g.gx().iter().chain(g.gy()).all(|v| *v == 0.0));
    }

    #[test]
    fn gradient_of_ramp_is_unit() {
        let g = gradient(&ramp(9, 6)).unwrap();
        for y in 0..6 {
            for x in 0..9 {
                let (gx, gy) = g.at(x, y);
                assert!((gx - 1.0).abs() < 1e-12, "gx at ({x},{y}) = {gx}");
                assert!(gy.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_interior_matches_sobel_over_8() {
        let img = GrayImage::from_fn(6, 6, |x, y| ((x * 37 + y * 91) % 17) as f64 * 7.0);
        let g = gradient(&img).unwrap();
        let p = |x: usize, y: usize| img.get(x, y);
        for y in 1..5 {
            for x in 1..5 {
                let sx = (p(x + 1, y - 1) + 2.0 * p(x + 1, y) + p(x + 1, y + 1))
                    - (p(x - 1, y - 1) + 2.0 * p(x - 1, y) + p(x - 1, y + 1));
                let sy = (p(x - 1, y + 1) + 2.0 * p(x, y + 1) + p(x + 1, y + 1))
                    - (p(x - 1, y - 1) + 2.0 * p(x, y - 1) + p(x + 1, y - 1));
                let (gx, gy) = g.at(x, y);
                assert!((gx - sx / 8.0).abs() < 1e-12);
                assert!((gy - sy / 8.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_rejects_tiny_images() {
        assert!(matches!(
            gradient(&GrayImage::filled(2, 9, 0.0)),
            Err(Error::ImageTooSmall { .. })
        ));
    }

    /// Blurred disk: the gradient magnitude on the rim must match the analytic
    /// derivative of a Gaussian-smoothed step, `A / (s * sqrt(2 pi))`.
    #[test]
    fn blurred_disk_rim_gradient_matches_gaussian_edge() {
        let (r, s, amp) = (30.0, 2.5, 200.0);
        // 8x supersampled disk, then blurred
        let sharp = GrayImage::from_fn(101, 101, |x, y| {
            let mut inside = 0;
            for i in 0..8 {
                for j in 0..8 {
                    let dx = x as f64 - 50.0 + (i as f64 + 0.5) / 8.0 - 0.5;
                    let dy = y as f64 - 50.0 + (j as f64 + 0.5) / 8.0 - 0.5;
                    if dx * dx + dy * dy <= r * r {
                        inside += 1;
                    }
                }
            }
            230.0 - amp * inside as f64 / 64.0
        });
        let img = gaussian_blur(&sharp, s);
        let g = gradient(&img).unwrap();
        let expected = amp / (s * (2.0 * std::f64::consts::PI).sqrt());
        // the maximum along each of several rays should sit on the rim
        for k in 0..16 {
            let a = k as f64 * std::f64::consts::PI / 8.0;
            let mut best = (0.0, 0.0);
            for step in 0..400 {
                let rr = 20.0 + step as f64 * 0.05;
                let x = (50.0 + rr * a.cos()).round() as usize;
                let y = (50.0 + rr * a.sin()).round() as usize;
                let (gx, gy) = g.at(x, y);
                let m = gx.hypot(gy);
                if m > best.0 {
                    best = (m, rr);
                }
            }
            assert!((best.1 - r).abs() < 1.5, "peak at radius {}", best.1);
            assert!(
                (best.0 - expected).abs() / expected < 0.05,
                "peak {} vs analytic {}",
                best.0,
                expected
            );
        }
    }

    #[test]
    fn intensity_range_cases() {
        let flat = GrayImage::filled(10, 10, 128.0);
        assert_eq!(local_intensity_range(&flat, (5.0, 5.0), 3), (128.0, 128.0));

        let step = GrayImage::from_fn(10, 10, |x, _| if x < 5 { 0.0 } else { 255.0 });
        assert_eq!(local_intensity_range(&step, (5.0, 5.0), 2), (0.0, 255.0));
        // clipped at the border
        assert_eq!(local_intensity_range(&step, (0.0, 0.0), 2), (0.0, 0.0));
    }

    #[test]
    fn intensity_range_matches_enumeration_on_blurred_step() {
        let sharp = GrayImage::from_fn(40, 30, |x, _| if x < 20 { 10.0 } else { 240.0 });
        let img = gaussian_blur(&sharp, 2.0);
        for &(cx, cy) in &[(20.0, 15.0), (19.4, 3.2), (2.0, 28.0), (37.0, 0.0)] {
            let (lo, hi) = local_intensity_range(&img, (cx, cy), 5);
            let (mut elo, mut ehi) = (f64::INFINITY, f64::NEG_INFINITY);
            for y in 0..30i64 {
                for x in 0..40i64 {
                    if (x - (cx as f64).round() as i64).abs() <= 5
                        && (y - (cy as f64).round() as i64).abs() <= 5
                    {
                        let v = img.get(x as usize, y as usize);
                        elo = elo.min(v);
                        ehi = ehi.max(v);
                    }
                }
            }
            assert_eq!((lo, hi), (elo, ehi));
            assert!(hi >= lo);
        }
    }

    #[test]
    fn global_threshold_on_checker() {
        let img = GrayImage::from_fn(6, 6, |x, y| if (x + y) % 2 == 0 { 0.0 } else { 255.0 });
        let bin = threshold(&img, &ThresholdSpec::Global { level: 128.0 }).unwrap();
        for y in 0..6 {
            for x in 0..6 {
                assert_eq!(bin.get(x, y), (x + y) % 2 == 0);
            }
        }
    }

    #[test]
    fn adaptive_threshold_constant_is_background() {
        let img = GrayImage::filled(8, 8, 77.0);
        let bin = threshold(&img, &ThresholdSpec::Adaptive { block: 3, offset: 0.0 }).unwrap();
        assert_eq!(bin.count(), 0);
    }

    #[test]
    fn adaptive_threshold_rejects_bad_blocks() {
        let img = GrayImage::filled(8, 8, 77.0);
        for block in [0, 1, 2, 4, 30] {
            assert!(matches!(
                threshold(&img, &ThresholdSpec::Adaptive { block, offset: 0.0 }),
                Err(Error::InvalidBlockSize(_))
            ));
        }
    }

    /// A dark disk under a strong linear illumination ramp: a single global
    /// level cannot separate it, the adaptive one must (IoU against the
    /// rendered mask > 0.95).
    #[test]
    fn adaptive_threshold_recovers_shaded_disk() {
        let (cx, cy, r) = (60.0, 50.0, 20.0);
        let inside = |x: usize, y: usize| {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            dx * dx + dy * dy <= r * r
        };
        let img = GrayImage::from_fn(120, 100, |x, y| {
            let light = 100.0 + 0.4 * x as f64;
            if inside(x, y) {
                0.35 * light
            } else {
                light
            }
        });
        let bin = close(
            &threshold(&img, &ThresholdSpec::Adaptive { block: 63, offset: 10.0 }).unwrap(),
        );
        let (mut inter, mut union) = (0usize, 0usize);
        for y in 0..100 {
            for x in 0..120 {
                let (a, b) = (bin.get(x, y), inside(x, y));
                inter += (a && b) as usize;
                union += (a || b) as usize;
            }
        }
        let iou = inter as f64 / union as f64;
        assert!(iou > 0.95, "iou {iou}");
    }

    #[test]
    fn closing_heals_single_pixel_gap() {
        let mut bin = BinaryImage::from_fn(9, 9, |x, y| (2..7).contains(&x) && (2..7).contains(&y));
        bin.data[4 * 9 + 4] = false;
        let closed = close(&bin);
        assert!(closed.get(4, 4));
        assert_eq!(closed.count(), 25);
    }

    proptest! {
        #[test]
        fn gradient_is_linear(
            seed in 0u64..1000,
            a in 0.0f64..1.0,
            b in 0.0f64..1.0,
        ) {
            let f1 = |x: usize, y: usize| ((x * 31 + y * 17 + seed as usize) % 101) as f64;
            let f2 = |x: usize, y: usize| ((x * 7 + y * 53 + 3 * seed as usize) % 97) as f64;
            let i1 = GrayImage::from_fn(11, 9, f1);
            let i2 = GrayImage::from_fn(11, 9, f2);
            let mix = GrayImage::from_fn(11, 9, |x, y| a * f1(x, y) + b * f2(x, y));
            let (g1, g2, gm) = (gradient(&i1).unwrap(), gradient(&i2).unwrap(), gradient(&mix).unwrap());
            for i in 0..gm.gx().len() {
                prop_assert!((gm.gx()[i] - (a * g1.gx()[i] + b * g2.gx()[i])).abs() < 1e-12);
                prop_assert!((gm.gy()[i] - (a * g1.gy()[i] + b * g2.gy()[i])).abs() < 1e-12);
            }
        }

        #[test]
        fn adaptive_threshold_is_local(px in 0usize..40, py in 0usize..40, v in 0.0f64..255.0) {
            let img = GrayImage::from_fn(40, 40, |x, y| ((x * 13 + y * 29) % 211) as f64);
            let spec = ThresholdSpec::Adaptive { block: 5, offset: 3.0 };
            let before = threshold(&img, &spec).unwrap();
            let mut data = img.data().to_vec();
            data[py * 40 + px] = v;
            let after = threshold(&GrayImage::new(40, 40, data).unwrap(), &spec).unwrap();
            for y in 0..40usize {
                for x in 0..40usize {
                    if x.abs_diff(px) > 2 || y.abs_diff(py) > 2 {
                        prop_assert_eq!(before.get(x, y), after.get(x, y));
                    }
                }
            }
        }
    }
}
