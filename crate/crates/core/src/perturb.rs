//! Visual perturbation of camera frames: Gaussian blur followed by a black
//! rectangular occlusion.

use std::path::Path;

use image::{ColorType, DynamicImage, ImageFormat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PerturbError {
    #[error("pixel buffer has {got} values, expected {expected}")]
    BadBuffer { expected: usize, got: usize },
    #[error("unsupported channel count {0}")]
    Channels(u8),
    #[error("sigma must be positive and finite, got {0}")]
    Sigma(f64),
    #[error("occlusion fraction must lie in (0, 1), got {0}")]
    Fraction(f64),
    #[error("occlusion of {0} covers less than one pixel")]
    TooSmall(f64),
    #[error("image I/O: {0}")]
    Image(#[from] image::ImageError),
}

/// Row-major, interleaved intensities in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub channels: u8,
    pub pixels: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: u8, pixels: Vec<f64>) -> Result<Self, PerturbError> {
        if channels != 1 && channels != 3 {
            return Err(PerturbError::Channels(channels));
        }
        let expected = width * height * channels as usize;
        if pixels.len() != expected {
            return Err(PerturbError::BadBuffer {
                expected,
                got: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, channels: u8, value: f64) -> Self {
        Self {
            width,
            height,
            channels,
            pixels: vec![value; width * height * channels as usize],
        }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels as usize + c
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.pixels[self.index(x, y, c)]
    }

    pub fn read_pnm(path: impl AsRef<Path>) -> Result<Self, PerturbError> {
        let img = image::open(path)?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        let (channels, bytes) = match img {
            DynamicImage::ImageLuma8(g) => (1, g.into_raw()),
            other => (3, other.to_rgb8().into_raw()),
        };
        Self::new(w, h, channels, bytes.into_iter().map(f64::from).collect())
    }

    /// Writes binary PGM (one channel) or PPM (three channels), rounding to 8 bits.
    pub fn write_pnm(&self, path: impl AsRef<Path>) -> Result<(), PerturbError> {
        let bytes: Vec<u8> = self.pixels.iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect();
        let color = if self.channels == 1 {
            ColorType::L8
        } else {
            ColorType::Rgb8
        };
        image::save_buffer_with_format(
            path,
            &bytes,
            self.width as u32,
            self.height as u32,
            color,
            ImageFormat::Pnm,
        )?;
        Ok(())
    }
}

/// Normalized 1-D Gaussian of radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let w: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

fn convolve_axis(img: &ImageBuffer, kernel: &[f64], horizontal: bool) -> ImageBuffer {
    let r = (kernel.len() / 2) as i64;
    let (w, h) = (img.width as i64, img.height as i64);
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            for c in 0..img.channels as usize {
                let mut acc = 0.0;
                for (k, &wt) in kernel.iter().enumerate() {
                    let off = k as i64 - r;
                    let (sx, sy) = if horizontal {
                        ((x + off).clamp(0, w - 1), y)
                    } else {
                        (x, (y + off).clamp(0, h - 1))
                    };
                    acc += wt * img.get(sx as usize, sy as usize, c);
                }
                let i = out.index(x as usize, y as usize, c);
                out.pixels[i] = acc.clamp(0.0, 255.0);
            }
        }
    }
    out
}

/// Separable Gaussian blur with edge replication.
pub fn gaussian_blur(img: &ImageBuffer, sigma: f64) -> Result<ImageBuffer, PerturbError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(PerturbError::Sigma(sigma));
    }
    let k = gaussian_kernel(sigma);
    Ok(convolve_axis(&convolve_axis(img, &k, true), &k, false))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.width && y >= self.y && y < self.y + self.height
    }
}

/// Side lengths for a rectangle of roughly `target` pixels whose width is as
/// close as possible to `w0` while the area stays within 1% (at least one
/// pixel) of the target.
fn occlusion_sides(target: usize, w0: usize, width: usize, height: usize) -> (usize, usize) {
    let sides = |w: usize| {
        let h = ((target as f64 / w as f64).round() as usize).clamp(1, height);
        (w, h)
    };
    let err = |(w, h): (usize, usize)| (w * h).abs_diff(target);
    let tol = ((target as f64 * 0.01).round() as usize).max(1);
    let w0 = w0.clamp(1, width);
    let mut best = sides(w0);
    for d in 0..width {
        let mut found = false;
        for w in [w0.checked_sub(d), Some(w0 + d)].into_iter().flatten() {
            if (1..=width).contains(&w) {
                let s = sides(w);
                if err(s) <= tol {
                    return s;
                }
                if err(s) < err(best) {
                    best = s;
                }
                found = true;
            }
        }
        if !found {
            break;
        }
    }
    best
}

/// Blacks out a seeded rectangle covering `fraction` of the frame.
pub fn occlude(img: &ImageBuffer, fraction: f64, seed: u64) -> Result<(ImageBuffer, Rect), PerturbError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(PerturbError::Fraction(fraction));
    }
    let target_f = fraction * (img.width * img.height) as f64;
    if target_f < 1.0 {
        return Err(PerturbError::TooSmall(fraction));
    }
    let target = target_f.round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let aspect: f64 = rng.random_range(0.5..=2.0);
    let w0 = (fraction.sqrt() * img.width as f64 * aspect).round() as usize;
    let (w, h) = occlusion_sides(target, w0, img.width, img.height);
    let x = rng.random_range(0..=img.width - w);
    let y = rng.random_range(0..=img.height - h);
    let rect = Rect {
        x,
        y,
        width: w,
        height: h,
    };
    let mut out = img.clone();
    for yy in y..y + h {
        for xx in x..x + w {
            for c in 0..img.channels as usize {
                let i = out.index(xx, yy, c);
                out.pixels[i] = 0.0;
            }
        }
    }
    Ok((out, rect))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbSpec {
    pub sigma: f64,
    pub occlusion_fraction: f64,
    pub seed: u64,
}

impl Default for PerturbSpec {
    fn default() -> Self {
        Self {
            sigma: 3.0,
            occlusion_fraction: 0.10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbLog {
    pub sigma: f64,
    pub occlusion_fraction: f64,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub rect: Rect,
    pub target_area: usize,
}

/// Blur, then occlude.
pub fn perturb_frame(img: &ImageBuffer, spec: &PerturbSpec) -> Result<(ImageBuffer, PerturbLog), PerturbError> {
    let blurred = gaussian_blur(img, spec.sigma)?;
    let (out, rect) = occlude(&blurred, spec.occlusion_fraction, spec.seed)?;
    let log = PerturbLog {
        sigma: spec.sigma,
        occlusion_fraction: spec.occlusion_fraction,
        seed: spec.seed,
        width: img.width,
        height: img.height,
        rect,
        target_area: (spec.occlusion_fraction * (img.width * img.height) as f64).round() as usize,
    };
    Ok((out, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_image(w: usize, h: usize, c: u8, seed: u64) -> ImageBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let px = (0..w * h * c as usize).map(|_| rng.random_range(0.0..=255.0)).collect();
        ImageBuffer::new(w, h, c, px).unwrap()
    }

    /// Direct 2-D convolution with the outer-product kernel.
    fn direct_blur(img: &ImageBuffer, sigma: f64) -> ImageBuffer {
        let r = (3.0 * sigma).ceil() as i64;
        let mut w2 = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                w2.push(((dx, dy), (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp()));
            }
        }
        let total: f64 = w2.iter().map(|(_, w)| w).sum();
        let mut out = img.clone();
        let (w, h) = (img.width as i64, img.height as i64);
        for y in 0..h {
            for x in 0..w {
                for c in 0..img.channels as usize {
                    let acc: f64 = w2
                        .iter()
                        .map(|&((dx, dy), wt)| {
                            wt * img.get((x + dx).clamp(0, w - 1) as usize, (y + dy).clamp(0, h - 1) as usize, c)
                        })
                        .sum();
                    let i = out.index(x as usize, y as usize, c);
                    out.pixels[i] = acc / total;
                }
            }
        }
        out
    }

    #[test]
    fn blur_keeps_constant_image() {
        let img = ImageBuffer::filled(40, 30, 3, 123.0);
        let out = gaussian_blur(&img, 3.0).unwrap();
        assert!(out.pixels.iter().all(|v| (v - 123.0).abs() < 1e-9));
    }

    #[test]
    fn separable_matches_direct() {
        for seed in 0..3 {
            let img = random_image(32, 32, 1, seed);
            let a = gaussian_blur(&img, 3.0).unwrap();
            let b = direct_blur(&img, 3.0);
            let max = a
                .pixels
                .iter()
                .zip(&b.pixels)
                .map(|(p, q)| (p - q).abs())
                .fold(0.0, f64::max);
            assert!(max < 1.0, "max deviation {max}");
        }
    }

    #[test]
    fn impulse_spreads_symmetrically() {
        let mut img = ImageBuffer::filled(41, 41, 1, 0.0);
        let c = img.index(20, 20, 0);
        img.pixels[c] = 255.0;
        let out = gaussian_blur(&img, 3.0).unwrap();
        let total: f64 = out.pixels.iter().sum();
        assert!((total - 255.0).abs() / 255.0 < 0.005);
        for d in 1..10 {
            let v = out.get(20 + d, 20, 0);
            assert!((v - out.get(20 - d, 20, 0)).abs() < 1e-12);
            assert!((v - out.get(20, 20 + d, 0)).abs() < 1e-12);
        }
    }

    #[test]
    fn tiny_sigma_is_near_identity() {
        let img = random_image(16, 16, 3, 7);
        let out = gaussian_blur(&img, 0.1).unwrap();
        let max = img
            .pixels
            .iter()
            .zip(&out.pixels)
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max);
        assert!(max < 1.0);
    }

    #[test]
    fn occlusion_examples() {
        let img = ImageBuffer::filled(100, 100, 1, 200.0);
        for seed in 0..200 {
            let (out, rect) = occlude(&img, 0.10, seed).unwrap();
            assert!((990..=1010).contains(&rect.area()), "seed {seed}: {rect:?}");
            for y in 0..100 {
                for x in 0..100 {
                    let want = if rect.contains(x, y) { 0.0 } else { 200.0 };
                    assert_eq!(out.get(x, y, 0), want);
                }
            }
        }
        assert_eq!(occlude(&img, 0.1, 4).unwrap(), occlude(&img, 0.1, 4).unwrap());
        assert!(matches!(occlude(&img, 0.0, 1), Err(PerturbError::Fraction(_))));
    }

    #[test]
    fn frame_is_deterministic() {
        let img = random_image(48, 32, 3, 1);
        let spec = PerturbSpec {
            seed: 11,
            ..PerturbSpec::default()
        };
        let (a, la) = perturb_frame(&img, &spec).unwrap();
        let (b, lb) = perturb_frame(&img, &spec).unwrap();
        assert_eq!(la, lb);
        assert!(a.pixels.iter().zip(&b.pixels).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn pnm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for c in [1u8, 3] {
            let img = random_image(9, 7, c, 3);
            let img = ImageBuffer::new(9, 7, c, img.pixels.iter().map(|v| v.round()).collect()).unwrap();
            let p = dir.path().join(format!("f{c}.pnm"));
            img.write_pnm(&p).unwrap();
            assert_eq!(ImageBuffer::read_pnm(&p).unwrap(), img);
        }
    }

    proptest! {
        #[test]
        fn blur_stays_in_range_and_keeps_mean(seed in 0u64..1000, sigma in 0.3f64..3.0) {
            let img = random_image(24, 24, 1, seed);
            let out = gaussian_blur(&img, sigma).unwrap();
            prop_assert!(out.pixels.iter().all(|v| (0.0..=255.0).contains(v)));
            let m0: f64 = img.pixels.iter().sum::<f64>() / img.pixels.len() as f64;
            let m1: f64 = out.pixels.iter().sum::<f64>() / out.pixels.len() as f64;
            prop_assert!((m0 - m1).abs() / m0 < 0.05);
        }

        #[test]
        fn occlusion_area_near_target(w in 10usize..200, h in 10usize..200, f in 0.02f64..0.5, seed: u64) {
            let img = ImageBuffer::filled(w, h, 1, 1.0);
            let (_, r) = occlude(&img, f, seed).unwrap();
            let target = (f * (w * h) as f64).round() as usize;
            prop_assert!(r.x + r.width <= w && r.y + r.height <= h);
            prop_assert!(r.area().abs_diff(target) <= (w + h));
        }
    }
}
