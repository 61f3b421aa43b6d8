//! Feature points: strict local maxima of the affine detector over space
//! and scale, filtered by a multi-direction (corner) test.

use serde::{Deserialize, Serialize};

use crate::diffops::{self, gaussian_kernel};
use crate::error::{Error, Result};
use crate::image::{Image2D, InvariantField};
use crate::invariants::detector_field;
use crate::par;
use crate::scalespace::ScaleSpace2D;

/// Detector response of one scale-space level, with the pre-smoothed image
/// it was computed from.
#[derive(Debug, Clone)]
pub struct DetectorLevel {
    pub t: f64,
    pub image: Image2D,
    pub response: InvariantField,
}

/// Per-level detector fields aligned with a scale-space.
#[derive(Debug, Clone)]
pub struct DetectorStack {
    levels: Vec<DetectorLevel>,
}

impl DetectorStack {
    pub fn levels(&self) -> &[DetectorLevel] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.levels[0].response.width()
    }

    pub fn height(&self) -> usize {
        self.levels[0].response.height()
    }

    /// Largest valid response over all levels.
    pub fn max_response(&self) -> f64 {
        self.levels
            .iter()
            .flat_map(|l| l.response.valid_values())
            .fold(0.0, f64::max)
    }
}

/// Applies the detector to every level after Gaussian pre-smoothing.
pub fn build_detector_stack(ss: &ScaleSpace2D, presmooth_sigma: f64) -> Result<DetectorStack> {
    let levels = ss
        .levels()
        .iter()
        .map(|l| {
            let image = diffops::gaussian_smooth(&l.image, presmooth_sigma)?;
            let response = detector_field(&image);
            Ok(DetectorLevel {
                t: l.t,
                image,
                response,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DetectorStack { levels })
}

/// A detected space-scale maximum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeaturePoint {
    pub x: usize,
    pub y: usize,
    pub level: usize,
    pub t: f64,
    pub response: f64,
}

impl FeaturePoint {
    pub fn position(&self) -> [f64; 2] {
        [self.x as f64, self.y as f64]
    }
}

/// Detection thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    /// Fraction of the global stack maximum a response must reach.
    pub threshold_rel: f64,
    /// Minimum `lambda_min / lambda_max` of the second-moment matrix.
    pub min_corner_ratio: f64,
    /// Gaussian window of the second-moment matrix, pixels.
    pub window_sigma: f64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            threshold_rel: 0.05,
            min_corner_ratio: 0.1,
            window_sigma: 2.0,
        }
    }
}

impl DetectConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold_rel > 0.0 && self.threshold_rel < 1.0) {
            return Err(Error::Config(format!(
                "threshold_rel must be in (0, 1), got {}",
                self.threshold_rel
            )));
        }
        if !(self.min_corner_ratio >= 0.0 && self.min_corner_ratio < 1.0) {
            return Err(Error::Config(format!(
                "min_corner_ratio must be in [0, 1), got {}",
                self.min_corner_ratio
            )));
        }
        if !(self.window_sigma >= 0.0) {
            return Err(Error::Config("window_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// Gaussian-weighted average of `[u_x^2, u_x u_y; u_x u_y, u_y^2]` around
/// `(x, y)`, using central differences. Window taps without a full stencil
/// are skipped and the weights renormalized.
pub fn second_moment_matrix(img: &Image2D, x: usize, y: usize, window_sigma: f64) -> [[f64; 2]; 2] {
    let kernel = if window_sigma > 0.0 {
        gaussian_kernel(window_sigma)
    } else {
        vec![1.0]
    };
    let r = (kernel.len() / 2) as isize;
    let (w, h) = (img.width() as isize, img.height() as isize);
    let (mut sxx, mut sxy, mut syy, mut wsum) = (0.0, 0.0, 0.0, 0.0);
    for (j, ky) in kernel.iter().enumerate() {
        let py = y as isize + j as isize - r;
        if py < 1 || py > h - 2 {
            continue;
        }
        for (i, kx) in kernel.iter().enumerate() {
            let px = x as isize + i as isize - r;
            if px < 1 || px > w - 2 {
                continue;
            }
            let (px, py) = (px as usize, py as usize);
            let gx = 0.5 * (img.get(px + 1, py) - img.get(px - 1, py));
            let gy = 0.5 * (img.get(px, py + 1) - img.get(px, py - 1));
            let wt = kx * ky;
            sxx += wt * gx * gx;
            sxy += wt * gx * gy;
            syy += wt * gy * gy;
            wsum += wt;
        }
    }
    if wsum == 0.0 {
        return [[0.0; 2]; 2];
    }
    [[sxx / wsum, sxy / wsum], [sxy / wsum, syy / wsum]]
}

/// Eigen-decomposition of a symmetric 2x2 matrix:
/// `(lambda_min, lambda_max, unit eigenvector of lambda_max)`.
pub fn sym2_eigen(m: &[[f64; 2]; 2]) -> (f64, f64, [f64; 2]) {
    let (a, b, d) = (m[0][0], m[0][1], m[1][1]);
    let mean = 0.5 * (a + d);
    let diff = 0.5 * (a - d);
    let rad = (diff * diff + b * b).sqrt();
    let (lo, hi) = (mean - rad, mean + rad);
    let v = if b == 0.0 {
        if a >= d {
            [1.0, 0.0]
        } else {
            [0.0, 1.0]
        }
    } else {
        let (vx, vy) = (hi - d, b);
        let n = (vx * vx + vy * vy).sqrt();
        [vx / n, vy / n]
    };
    (lo, hi, v)
}

/// `lambda_min / lambda_max`, 0 for a zero matrix.
pub fn corner_ratio(m: &[[f64; 2]; 2]) -> f64 {
    let (lo, hi, _) = sym2_eigen(m);
    if hi <= 0.0 {
        0.0
    } else {
        (lo / hi).max(0.0)
    }
}

fn is_strict_max(stack: &DetectorStack, level: usize, x: usize, y: usize, v: f64) -> bool {
    let (w, h) = (stack.width() as isize, stack.height() as isize);
    let lo = level.saturating_sub(1);
    let hi = (level + 1).min(stack.len() - 1);
    for l in lo..=hi {
        let field = &stack.levels[l].response;
        for dy in -1..=1isize {
            for dx in -1..=1isize {
                if l == level && dx == 0 && dy == 0 {
                    continue;
                }
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx < 0 || ny < 0 || nx >= w || ny >= h {
                    continue;
                }
                if let Some(n) = field.at(nx as usize, ny as usize) {
                    if n >= v {
                        return false;
                    }
                }
            }
        }
    }
    true
}

/// Space-scale maxima passing the relative threshold and the corner test,
/// sorted by descending response (ties by level, then y, then x).
pub fn detect(stack: &DetectorStack, cfg: &DetectConfig) -> Result<Vec<FeaturePoint>> {
    cfg.validate()?;
    if stack.is_empty() {
        return Ok(Vec::new());
    }
    let global_max = stack.max_response();
    if global_max <= 0.0 {
        return Ok(Vec::new());
    }
    let threshold = cfg.threshold_rel * global_max;
    let (w, h) = (stack.width(), stack.height());
    let rows = par::map_range(stack.len() * h, |idx| {
        let (level, y) = (idx / h, idx % h);
        let lv = &stack.levels[level];
        let mut found = Vec::new();
        for x in 0..w {
            let Some(v) = lv.response.at(x, y) else {
                continue;
            };
            if v <= 0.0 || v < threshold || !is_strict_max(stack, level, x, y, v) {
                continue;
            }
            if cfg.min_corner_ratio > 0.0 {
                let m = second_moment_matrix(&lv.image, x, y, cfg.window_sigma);
                if corner_ratio(&m) < cfg.min_corner_ratio {
                    continue;
                }
            }
            found.push(FeaturePoint {
                x,
                y,
                level,
                t: lv.t,
                response: v,
            });
        }
        found
    });
    let mut points: Vec<FeaturePoint> = rows.into_iter().flatten().collect();
    points.sort_by(|a, b| {
        b.response
            .total_cmp(&a.response)
            .then(a.level.cmp(&b.level))
            .then(a.y.cmp(&b.y))
            .then(a.x.cmp(&b.x))
    });
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalespace::{build_scale_space, FlowMode, ScaleLevel};
    use crate::synth::gaussian_blob;

    fn single_level(img: Image2D) -> ScaleSpace2D {
        ScaleSpace2D::new(vec![ScaleLevel { t: 0.0, image: img }]).unwrap()
    }

    #[test]
    fn constant_image_has_no_features() {
        let img = Image2D::constant(32, 32, 0.5).unwrap();
        let ss = build_scale_space(&img, 4, 3.0, FlowMode::Affine, 0.1).unwrap();
        let stack = build_detector_stack(&ss, 1.0).unwrap();
        assert!(stack
            .levels()
            .iter()
            .all(|l| l.response.valid_values().all(|v| v == 0.0)));
        assert!(detect(&stack, &DetectConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn single_level_stack_is_detector_field() {
        let img = gaussian_blob(24, 24, [11.0, 12.0], 3.0, 0.2, 0.5).unwrap();
        let stack = build_detector_stack(&single_level(img.clone()), 0.0).unwrap();
        assert_eq!(stack.levels()[0].response, detector_field(&img));
        assert!(stack.levels()[0].response.valid_values().all(|v| v >= 0.0));
    }

    #[test]
    fn one_blob_one_feature() {
        let img = gaussian_blob(64, 64, [31.0, 33.0], 5.0, 0.2, 0.6).unwrap();
        let ss = build_scale_space(&img, 4, 6.0, FlowMode::Affine, 0.1).unwrap();
        let stack = build_detector_stack(&ss, 1.0).unwrap();
        let pts = detect(&stack, &DetectConfig::default()).unwrap();
        assert_eq!(pts.len(), 1, "{pts:?}");
        // Oracle: brute-force argmax over the whole stack.
        let mut best = (0.0, 0, 0, 0);
        for (l, lv) in stack.levels().iter().enumerate() {
            for y in 0..64 {
                for x in 0..64 {
                    if let Some(v) = lv.response.at(x, y) {
                        if v > best.0 {
                            best = (v, l, x, y);
                        }
                    }
                }
            }
        }
        let p = pts[0];
        assert_eq!((p.level, p.x, p.y), (best.1, best.2, best.3));
        assert!(p.x.abs_diff(31) <= 1 && p.y.abs_diff(33) <= 1);
    }

    #[test]
    fn two_blobs_two_equal_features() {
        let a = gaussian_blob(96, 48, [24.0, 24.0], 5.0, 0.0, 0.6).unwrap();
        let b = gaussian_blob(96, 48, [72.0, 24.0], 5.0, 0.0, 0.6).unwrap();
        let img = Image2D::new(
            96,
            48,
            a.data().iter().zip(b.data()).map(|(p, q)| 0.2 + p + q).collect(),
        )
        .unwrap();
        let stack = build_detector_stack(&single_level(img), 1.0).unwrap();
        let pts = detect(&stack, &DetectConfig::default()).unwrap();
        assert_eq!(pts.len(), 2, "{pts:?}");
        assert!((pts[0].response - pts[1].response).abs() <= 1e-6 * pts[0].response);
    }

    #[test]
    fn second_moment_cases() {
        let flat = Image2D::constant(16, 16, 0.3).unwrap();
        assert_eq!(second_moment_matrix(&flat, 8, 8, 2.0), [[0.0; 2]; 2]);
        let ramp = Image2D::from_fn(16, 16, |x, _| x).unwrap();
        let m = second_moment_matrix(&ramp, 8, 8, 2.0);
        assert_eq!(corner_ratio(&m), 0.0);
        assert!(m[0][0] > 0.0);
        let bowl = Image2D::from_fn(33, 33, |x, y| (x - 16.0).powi(2) + (y - 16.0).powi(2)).unwrap();
        let m = second_moment_matrix(&bowl, 16, 16, 2.0);
        let (lo, hi, _) = sym2_eigen(&m);
        assert!((hi - lo).abs() <= 1e-9 * hi);
        assert!(m[0][1].abs() <= 1e-9 * hi);
    }

    #[test]
    fn eigen_decomposition() {
        let (lo, hi, v) = sym2_eigen(&[[2.0, 1.0], [1.0, 2.0]]);
        assert!((lo - 1.0).abs() < 1e-12 && (hi - 3.0).abs() < 1e-12);
        assert!((v[0] - v[1]).abs() < 1e-12);
    }

    #[test]
    fn config_ranges() {
        let bad = DetectConfig {
            threshold_rel: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = DetectConfig {
            min_corner_ratio: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
