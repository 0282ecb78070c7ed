//! Frequency-domain style transfer.
//!
//! Each source channel keeps its own phase spectrum, while the amplitude
//! spectrum inside a small square window around the zero frequency is taken
//! from a target-domain image. Low-frequency amplitude carries global colour
//! and illumination; phase carries the scene structure, so masks stay valid.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::{imageops, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::datamodel::{save_manifest, DatasetManifest, SampleRecord};
use crate::error::{Error, Result};
use crate::util;

/// A real-valued 2-D grid in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Argument(format!(
                "grid of {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    /// One channel of an RGB image as intensities in [0, 255].
    pub fn from_channel(img: &RgbImage, channel: usize) -> Self {
        let (w, h) = img.dimensions();
        Self {
            height: h as usize,
            width: w as usize,
            data: img.pixels().map(|p| f64::from(p.0[channel])).collect(),
        }
    }
}

/// Row/column separable 2-D DFT with cached 1-D plans.
pub struct Fft2d {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2d {
    pub fn new(height: usize, width: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            height,
            width,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    fn run(&self, data: &mut [Complex64], inverse: bool) {
        let (h, w) = (self.height, self.width);
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        for r in data.chunks_exact_mut(w) {
            row.process(r);
        }
        let mut column = vec![Complex64::default(); h];
        for c in 0..w {
            for (r, v) in column.iter_mut().enumerate() {
                *v = data[r * w + c];
            }
            col.process(&mut column);
            for (r, v) in column.iter().enumerate() {
                data[r * w + c] = *v;
            }
        }
        if inverse {
            let scale = 1.0 / (h * w) as f64;
            for v in data.iter_mut() {
                *v *= scale;
            }
        }
    }

    /// Unnormalized forward transform of a real grid.
    pub fn forward(&self, grid: &Grid) -> Vec<Complex64> {
        let mut data: Vec<Complex64> = grid.data.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.run(&mut data, false);
        data
    }

    /// Inverse transform scaled by 1/(HW).
    pub fn inverse(&self, spectrum: &[Complex64]) -> Vec<Complex64> {
        let mut data = spectrum.to_vec();
        self.run(&mut data, true);
        data
    }
}

fn check_finite(grid: &Grid) -> Result<()> {
    if grid.data.len() != grid.height * grid.width {
        return Err(Error::Argument("grid size does not match its dimensions".into()));
    }
    if grid.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("grid contains non-finite values".into()));
    }
    Ok(())
}

/// Magnitude and angle of the unnormalized 2-D DFT, in natural (uncentred) bin order.
pub fn amplitude_phase(channel: &Grid) -> Result<(Grid, Grid)> {
    check_finite(channel)?;
    let spectrum = Fft2d::new(channel.height, channel.width).forward(channel);
    let (h, w) = (channel.height, channel.width);
    Ok((
        Grid { height: h, width: w, data: spectrum.iter().map(|c| c.norm()).collect() },
        Grid { height: h, width: w, data: spectrum.iter().map(|c| c.arg()).collect() },
    ))
}

/// Inverse of [`amplitude_phase`]; the imaginary residue is dropped.
pub fn from_amplitude_phase(amplitude: &Grid, phase: &Grid) -> Result<Grid> {
    if (amplitude.height, amplitude.width) != (phase.height, phase.width) {
        return Err(Error::Argument("amplitude and phase grids differ in size".into()));
    }
    let spectrum: Vec<Complex64> = amplitude
        .data
        .iter()
        .zip(&phase.data)
        .map(|(&a, &p)| Complex64::from_polar(a, p))
        .collect();
    let fft = Fft2d::new(amplitude.height, amplitude.width);
    Ok(Grid {
        height: amplitude.height,
        width: amplitude.width,
        data: fft.inverse(&spectrum).iter().map(|c| c.re).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSampling {
    /// One seed-chosen target image styles every source image.
    Fixed,
    /// A seed-chosen target per source image.
    #[default]
    RandomPerImage,
}

fn default_beta() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralConfig {
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub target_sampling: TargetSampling,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            beta: default_beta(),
            target_sampling: TargetSampling::default(),
            seed: 0,
        }
    }
}

impl SpectralConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.5).contains(&self.beta) {
            return Err(Error::Argument(format!("beta must lie in [0, 0.5], got {}", self.beta)));
        }
        Ok(())
    }
}

/// `floor(beta * min(H, W))`.
pub fn window_half_width(beta: f64, height: usize, width: usize) -> usize {
    (beta * height.min(width) as f64).floor() as usize
}

fn signed_frequency(k: usize, n: usize) -> isize {
    if 2 * k < n {
        k as isize
    } else {
        k as isize - n as isize
    }
}

/// Whether natural-order bin (row, col) lies in the swap window.
///
/// The window covers signed frequencies strictly within `half_width` of zero on
/// both axes, so it is empty for a half-width of 0, always contains the zero
/// bin otherwise, and is closed under negation. The latter keeps the swapped
/// spectrum Hermitian for real input.
pub fn in_window(row: usize, col: usize, height: usize, width: usize, half_width: usize) -> bool {
    let b = half_width as isize;
    signed_frequency(row, height).abs() < b && signed_frequency(col, width).abs() < b
}

/// Real-valued output of a channel swap, before clipping and quantization.
#[derive(Debug, Clone)]
pub struct BlendedChannel {
    pub values: Grid,
    /// Largest absolute imaginary part discarded by the inverse transform.
    pub max_imaginary: f64,
}

pub fn spectral_blend_channel(source: &Grid, target: &Grid, beta: f64) -> Result<BlendedChannel> {
    check_finite(source)?;
    check_finite(target)?;
    if (source.height, source.width) != (target.height, target.width) {
        return Err(Error::Argument(format!(
            "source is {}x{} but target is {}x{}",
            source.height, source.width, target.height, target.width
        )));
    }
    let (h, w) = (source.height, source.width);
    let half = window_half_width(beta, h, w);
    if half == 0 {
        return Ok(BlendedChannel { values: source.clone(), max_imaginary: 0.0 });
    }
    let fft = Fft2d::new(h, w);
    let mut spectrum = fft.forward(source);
    let target_spectrum = fft.forward(target);
    for row in 0..h {
        for col in 0..w {
            if !in_window(row, col, h, w, half) {
                continue;
            }
            let idx = row * w + col;
            let amplitude = target_spectrum[idx].norm();
            let s = spectrum[idx];
            let norm = s.norm();
            spectrum[idx] = if norm > 0.0 { s * (amplitude / norm) } else { Complex64::new(amplitude, 0.0) };
        }
    }
    let out = fft.inverse(&spectrum);
    Ok(BlendedChannel {
        max_imaginary: out.iter().map(|c| c.im.abs()).fold(0.0, f64::max),
        values: Grid { height: h, width: w, data: out.iter().map(|c| c.re).collect() },
    })
}

/// Bilinear resize to the given dimensions; a no-op copy if they already match.
pub fn resample_bilinear(img: &RgbImage, width: u32, height: u32) -> RgbImage {
    if img.dimensions() == (width, height) {
        return img.clone();
    }
    imageops::resize(img, width, height, imageops::FilterType::Triangle)
}

/// Restyles `source` with the low-frequency amplitude of `target`.
///
/// Both images must share dimensions; resample the target first with
/// [`resample_bilinear`] if needed.
pub fn spectral_blend(source: &RgbImage, target: &RgbImage, config: &SpectralConfig) -> Result<RgbImage> {
    config.validate()?;
    if source.dimensions() != target.dimensions() {
        return Err(Error::Argument(format!(
            "source is {:?} but target is {:?}",
            source.dimensions(),
            target.dimensions()
        )));
    }
    let (w, h) = source.dimensions();
    if window_half_width(config.beta, h as usize, w as usize) == 0 {
        return Ok(source.clone());
    }
    let mut out = RgbImage::new(w, h);
    for channel in 0..3 {
        let blended = spectral_blend_channel(
            &Grid::from_channel(source, channel),
            &Grid::from_channel(target, channel),
            config.beta,
        )?;
        for (px, v) in out.pixels_mut().zip(&blended.values.data) {
            px.0[channel] = v.clamp(0.0, 255.0).round() as u8;
        }
    }
    Ok(out)
}

/// Everything needed to stylize a source manifest toward a target pool.
#[derive(Debug, Clone)]
pub struct StyleJob<'a> {
    pub target_pool: &'a DatasetManifest,
    pub config: SpectralConfig,
    pub out_dir: PathBuf,
}

fn file_stem(sample_id: &str) -> String {
    sample_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

/// Stylizes every source image and writes them, copied masks and a manifest under `out_dir`.
///
/// Target choice is derived from (seed, sample_id), so the output does not
/// depend on processing order.
pub fn batch_stylize(
    source: &DatasetManifest,
    target_pool: &DatasetManifest,
    config: &SpectralConfig,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    config.validate()?;
    if target_pool.is_empty() && !source.is_empty() {
        return Err(Error::Argument(format!("target pool `{}` is empty", target_pool.name)));
    }
    let image_dir = out_dir.join("images");
    let mask_dir = out_dir.join("masks");
    for dir in [&image_dir, &mask_dir] {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let pick = |tag: &str| -> usize {
        let mut rng = ChaCha8Rng::seed_from_u64(util::derive_seed(config.seed, tag));
        rng.random_range(0..target_pool.len())
    };
    let fixed_target = (config.target_sampling == TargetSampling::Fixed && !target_pool.is_empty())
        .then(|| pick("fixed-target"));
    let mut targets: HashMap<usize, RgbImage> = HashMap::new();

    let mut samples = Vec::with_capacity(source.len());
    for sample in &source.samples {
        let stem = file_stem(&sample.sample_id);
        let image_path = image_dir.join(format!("{stem}.png"));
        let mask_path = mask_dir.join(format!("{stem}.png"));
        let src = util::read_rgb(&sample.image_path)?;
        let (w, h) = src.dimensions();
        if window_half_width(config.beta, h as usize, w as usize) == 0 {
            std::fs::copy(&sample.image_path, &image_path).map_err(|e| Error::io(&image_path, e))?;
        } else {
            let idx = fixed_target.unwrap_or_else(|| pick(&sample.sample_id));
            if !targets.contains_key(&idx) {
                targets.insert(idx, util::read_rgb(&target_pool.samples[idx].image_path)?);
            }
            let target = resample_bilinear(&targets[&idx], w, h);
            util::write_png(&image_path, &spectral_blend(&src, &target, config)?)?;
        }
        std::fs::copy(&sample.mask_path, &mask_path).map_err(|e| Error::io(&mask_path, e))?;
        samples.push(SampleRecord {
            image_path,
            mask_path,
            ..sample.clone()
        });
    }
    let manifest = DatasetManifest {
        name: format!("{}-stylized", source.name),
        samples,
        ..source.clone()
    };
    save_manifest(&manifest, &out_dir.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_grid(h: usize, w: usize, seed: u64) -> Grid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Grid { height: h, width: w, data: (0..h * w).map(|_| rng.random_range(0.0..255.0)).collect() }
    }

    /// Direct O(N^2) DFT, independent of the FFT path.
    fn naive_dft(grid: &Grid) -> Vec<Complex64> {
        let (h, w) = (grid.height, grid.width);
        let mut out = vec![Complex64::default(); h * w];
        for ky in 0..h {
            for kx in 0..w {
                let mut acc = Complex64::default();
                for y in 0..h {
                    for x in 0..w {
                        let angle = -2.0 * std::f64::consts::PI
                            * ((ky * y) as f64 / h as f64 + (kx * x) as f64 / w as f64);
                        acc += Complex64::from_polar(grid.at(y, x), angle);
                    }
                }
                out[ky * w + kx] = acc;
            }
        }
        out
    }

    #[test]
    fn constant_grid_is_dc_only() {
        let (amp, _) = amplitude_phase(&Grid::new(4, 6, vec![3.0; 24]).unwrap()).unwrap();
        assert!((amp.data[0] - 72.0).abs() < 1e-9);
        assert!(amp.data[1..].iter().all(|a| a.abs() < 1e-9));
        let (amp, _) = amplitude_phase(&Grid::zeros(5, 5)).unwrap();
        assert!(amp.data.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn fft_matches_naive_dft() {
        let g = random_grid(6, 10, 4);
        let (amp, phase) = amplitude_phase(&g).unwrap();
        for (i, c) in naive_dft(&g).iter().enumerate() {
            assert!((c.norm() - amp.data[i]).abs() < 1e-7);
            if c.norm() > 1e-6 {
                let d = (c.arg() - phase.data[i]).rem_euclid(2.0 * std::f64::consts::PI);
                assert!(d.min(2.0 * std::f64::consts::PI - d) < 1e-8);
            }
        }
    }

    #[test]
    fn round_trip_8x8() {
        let g = random_grid(8, 8, 11);
        let (amp, phase) = amplitude_phase(&g).unwrap();
        let back = from_amplitude_phase(&amp, &phase).unwrap();
        let err = g.data.iter().zip(&back.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn non_finite_input_rejected() {
        assert!(amplitude_phase(&Grid::new(1, 2, vec![1.0, f64::NAN]).unwrap()).is_err());
    }

    #[test]
    fn window_shape() {
        assert!(!in_window(0, 0, 8, 8, 0));
        assert!(in_window(0, 0, 8, 8, 1));
        assert!(!in_window(1, 0, 8, 8, 1));
        assert!(in_window(7, 1, 8, 8, 2));
        assert!(!in_window(4, 0, 8, 8, 4));
        assert_eq!(window_half_width(0.05, 64, 80), 3);
        assert_eq!(window_half_width(0.5, 64, 64), 32);
    }

    fn constant_rgb(v: u8, w: u32, h: u32) -> RgbImage {
        RgbImage::from_pixel(w, h, image::Rgb([v, v, v]))
    }

    #[test]
    fn zero_beta_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let src = RgbImage::from_fn(16, 12, |_, _| image::Rgb([rng.random(), rng.random(), rng.random()]));
        let tgt = constant_rgb(9, 16, 12);
        let cfg = SpectralConfig { beta: 0.0, ..Default::default() };
        assert_eq!(spectral_blend(&src, &tgt, &cfg).unwrap(), src);
    }

    #[test]
    fn self_target_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let src = RgbImage::from_fn(16, 16, |_, _| image::Rgb([rng.random(), rng.random(), rng.random()]));
        let cfg = SpectralConfig { beta: 0.3, ..Default::default() };
        let out = spectral_blend(&src, &src, &cfg).unwrap();
        for (a, b) in out.as_raw().iter().zip(src.as_raw()) {
            assert!(a.abs_diff(*b) <= 1);
        }
    }

    #[test]
    fn constant_source_takes_target_mean() {
        let cfg = SpectralConfig { beta: 0.1, ..Default::default() };
        let out = spectral_blend(&constant_rgb(100, 20, 20), &constant_rgb(50, 20, 20), &cfg).unwrap();
        assert!(out.as_raw().iter().all(|&v| v == 50));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let cfg = SpectralConfig::default();
        assert!(spectral_blend(&constant_rgb(1, 8, 8), &constant_rgb(1, 8, 9), &cfg).is_err());
        let bad = SpectralConfig { beta: 0.6, ..Default::default() };
        assert!(spectral_blend(&constant_rgb(1, 8, 8), &constant_rgb(1, 8, 8), &bad).is_err());
    }
}
