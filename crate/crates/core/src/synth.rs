//! Synthetic test imagery: smooth fields of anisotropic Gaussian blobs.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image2D, Image3D};

/// Parameters of a random blob field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlobFieldConfig {
    pub n_blobs: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Largest ratio between the two axes of a blob.
    pub max_elongation: f64,
    /// Blob centers keep this fraction of each side away from the border.
    pub margin: f64,
}

impl Default for BlobFieldConfig {
    fn default() -> Self {
        Self {
            n_blobs: 60,
            sigma_min: 6.0,
            sigma_max: 12.0,
            max_elongation: 2.0,
            margin: 0.12,
        }
    }
}

impl BlobFieldConfig {
    fn validate(&self) -> Result<()> {
        if !(self.sigma_min > 0.0 && self.sigma_max >= self.sigma_min) {
            return Err(Error::Config("blob sigmas must satisfy 0 < min <= max".into()));
        }
        if !(self.max_elongation >= 1.0) || !(0.0..0.5).contains(&self.margin) {
            return Err(Error::Config("bad blob elongation or margin".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Blob2 {
    center: [f64; 2],
    amplitude: f64,
    /// Inverse covariance.
    precision: [[f64; 2]; 2],
    reach2: f64,
}

impl Blob2 {
    #[inline]
    fn eval(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.center[0];
        let dy = y - self.center[1];
        let q = self.precision[0][0] * dx * dx
            + 2.0 * self.precision[0][1] * dx * dy
            + self.precision[1][1] * dy * dy;
        if dx * dx + dy * dy > self.reach2 {
            return 0.0;
        }
        self.amplitude * (-0.5 * q).exp()
    }
}

fn random_blobs(width: usize, height: usize, cfg: &BlobFieldConfig, seed: u64) -> Vec<Blob2> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..cfg.n_blobs)
        .map(|_| {
            let mx = cfg.margin * width as f64;
            let my = cfg.margin * height as f64;
            let cx = mx + rng.random::<f64>() * ((width - 1) as f64 - 2.0 * mx);
            let cy = my + rng.random::<f64>() * ((height - 1) as f64 - 2.0 * my);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let amplitude = sign * (0.4 + 0.6 * rng.random::<f64>());
            let s_major = cfg.sigma_min + rng.random::<f64>() * (cfg.sigma_max - cfg.sigma_min);
            let elong = 1.0 + rng.random::<f64>() * (cfg.max_elongation - 1.0);
            let s_minor = (s_major / elong).max(cfg.sigma_min.min(s_major));
            let theta = rng.random::<f64>() * PI;
            let (s, c) = theta.sin_cos();
            let (a, b) = (1.0 / (s_major * s_major), 1.0 / (s_minor * s_minor));
            let precision = [
                [a * c * c + b * s * s, (a - b) * c * s],
                [(a - b) * c * s, a * s * s + b * c * c],
            ];
            Blob2 {
                center: [cx, cy],
                amplitude,
                precision,
                reach2: (6.0 * s_major).powi(2),
            }
        })
        .collect()
}

/// Seeded blob-field image, affinely rescaled into `[0.1, 0.9]`.
pub fn blob_field(width: usize, height: usize, cfg: &BlobFieldConfig, seed: u64) -> Result<Image2D> {
    cfg.validate()?;
    let blobs = random_blobs(width, height, cfg, seed);
    let raw = Image2D::from_fn(width, height, |x, y| blobs.iter().map(|b| b.eval(x, y)).sum())?;
    rescale(raw, 0.1, 0.9)
}

fn rescale(img: Image2D, lo: f64, hi: f64) -> Result<Image2D> {
    let (min, max) = img.min_max();
    if max - min <= 0.0 {
        return Ok(img);
    }
    let k = (hi - lo) / (max - min);
    img.map(|v| lo + (v - min) * k)
}

/// Single isotropic Gaussian blob of height `amplitude` over `background`.
pub fn gaussian_blob(
    width: usize,
    height: usize,
    center: [f64; 2],
    sigma: f64,
    background: f64,
    amplitude: f64,
) -> Result<Image2D> {
    let k = 0.5 / (sigma * sigma);
    Image2D::from_fn(width, height, |x, y| {
        let r2 = (x - center[0]).powi(2) + (y - center[1]).powi(2);
        background + amplitude * (-k * r2).exp()
    })
}

/// Seeded volume of isotropic Gaussian blobs, rescaled into `[0.1, 0.9]`.
pub fn blob_volume(
    n: usize,
    n_blobs: usize,
    sigma_min: f64,
    sigma_max: f64,
    seed: u64,
) -> Result<Image3D> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let margin = 0.15 * n as f64;
    let span = (n - 1) as f64 - 2.0 * margin;
    let blobs: Vec<([f64; 3], f64, f64)> = (0..n_blobs)
        .map(|_| {
            let c = [
                margin + rng.random::<f64>() * span,
                margin + rng.random::<f64>() * span,
                margin + rng.random::<f64>() * span,
            ];
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let amp = sign * (0.4 + 0.6 * rng.random::<f64>());
            let s = sigma_min + rng.random::<f64>() * (sigma_max - sigma_min);
            (c, amp, 0.5 / (s * s))
        })
        .collect();
    let vol = Image3D::from_fn(n, n, n, |x, y, z| {
        blobs
            .iter()
            .map(|(c, a, k)| {
                let r2 = (x - c[0]).powi(2) + (y - c[1]).powi(2) + (z - c[2]).powi(2);
                a * (-k * r2).exp()
            })
            .sum()
    })?;
    let (min, max) = vol
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let k = 0.8 / (max - min);
    let (nx, ny, nz) = vol.dims();
    Image3D::new(nx, ny, nz, vol.data().iter().map(|v| 0.1 + (v - min) * k).collect())
}

/// Parameters of a random wave texture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveFieldConfig {
    pub n_waves: usize,
    pub wavelength_min: f64,
    pub wavelength_max: f64,
    /// Gain of the `tanh` contrast curve applied to the wave sum; 0 keeps
    /// the sum linear.
    pub saturation: f64,
}

impl Default for WaveFieldConfig {
    fn default() -> Self {
        Self {
            n_waves: 3,
            wavelength_min: 10.0,
            wavelength_max: 14.0,
            saturation: 1.0,
        }
    }
}

/// Seeded sum of plane cosine waves with directions evenly spaced over a
/// half turn (random common offset), random phases and wavelengths uniform
/// on `[wavelength_min, wavelength_max]`, passed through `tanh(saturation * .)`
/// and rescaled into `[0.1, 0.9]`.
pub fn wave_field(width: usize, height: usize, cfg: &WaveFieldConfig, seed: u64) -> Result<Image2D> {
    if cfg.n_waves == 0
        || !(cfg.wavelength_min > 0.0 && cfg.wavelength_max >= cfg.wavelength_min)
        || !(cfg.saturation >= 0.0)
    {
        return Err(Error::Config(
            "wave field needs n_waves >= 1, 0 < min <= max wavelength and saturation >= 0".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = rng.random::<f64>() * PI;
    let n = cfg.n_waves;
    let waves: Vec<[f64; 3]> = (0..n)
        .map(|k| {
            let theta = offset + PI * k as f64 / n as f64;
            let lambda = cfg.wavelength_min + rng.random::<f64>() * (cfg.wavelength_max - cfg.wavelength_min);
            let f = 2.0 * PI / lambda;
            [f * theta.cos(), f * theta.sin(), 2.0 * PI * rng.random::<f64>()]
        })
        .collect();
    let raw = Image2D::from_fn(width, height, |x, y| {
        let sum: f64 = waves.iter().map(|[a, b, p]| (a * x + b * y + p).cos()).sum();
        if cfg.saturation > 0.0 {
            (cfg.saturation * sum).tanh()
        } else {
            sum
        }
    })?;
    rescale(raw, 0.1, 0.9)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_field_is_seeded_and_in_range() {
        let cfg = BlobFieldConfig::default();
        let a = blob_field(96, 80, &cfg, 5).unwrap();
        let b = blob_field(96, 80, &cfg, 5).unwrap();
        assert_eq!(a, b);
        let (lo, hi) = a.min_max();
        assert!((lo - 0.1).abs() < 1e-12 && (hi - 0.9).abs() < 1e-12);
        assert_ne!(a, blob_field(96, 80, &cfg, 6).unwrap());
    }

    #[test]
    fn single_wave_is_a_grating() {
        let cfg = WaveFieldConfig {
            n_waves: 1,
            wavelength_min: 8.0,
            wavelength_max: 8.0,
            saturation: 0.0,
        };
        let img = wave_field(64, 64, &cfg, 3).unwrap();
        let (lo, hi) = img.min_max();
        assert!(lo >= 0.1 - 1e-12 && hi <= 0.9 + 1e-12);
        assert_eq!(img, wave_field(64, 64, &cfg, 3).unwrap());
        let default = wave_field(64, 64, &WaveFieldConfig::default(), 3).unwrap();
        let (lo, hi) = default.min_max();
        assert!((lo - 0.1).abs() < 1e-12 && (hi - 0.9).abs() < 1e-12);
        let bad = WaveFieldConfig {
            n_waves: 0,
            ..Default::default()
        };
        assert!(wave_field(8, 8, &bad, 3).is_err());
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = BlobFieldConfig {
            sigma_min: 0.0,
            ..Default::default()
        };
        assert!(blob_field(32, 32, &cfg, 0).is_err());
    }
}
