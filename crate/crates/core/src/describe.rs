//! Affine region normalization, 64-d gradient-statistics descriptors and
//! nearest-neighbour matching.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{second_moment_matrix, sym2_eigen, FeaturePoint};
use crate::image::Image2D;
use crate::interp::sample_bicubic;
use crate::par;

pub const PATCH_SIZE: usize = 20;
pub const DESCRIPTOR_LEN: usize = 64;
/// Eigenvalue floor relative to the largest eigenvalue of the shape matrix.
pub const EIGEN_FLOOR_REL: f64 = 1e-12;
/// Match acceptance cap used when the ratio test cannot run.
pub const SINGLE_CANDIDATE_CAP: f64 = 0.8;
/// Shape adaptation stops once `lambda_min / lambda_max` reaches this.
pub const ADAPT_ISOTROPY: f64 = 0.95;
pub const ADAPT_MAX_ITER: usize = 10;
/// Adapted shapes more elongated than this are treated as edges.
pub const ADAPT_MAX_ANISOTROPY: f64 = 64.0;

/// Mean-free, unit-variance square patch sampled in the normalized frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    data: Vec<f64>,
}

impl Patch {
    pub fn from_data(data: Vec<f64>) -> Result<Self> {
        if data.len() != PATCH_SIZE * PATCH_SIZE {
            return Err(Error::Invariant(format!(
                "patch must have {} samples",
                PATCH_SIZE * PATCH_SIZE
            )));
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    fn get(&self, x: isize, y: isize) -> f64 {
        let n = PATCH_SIZE as isize;
        let (x, y) = (x.clamp(0, n - 1) as usize, y.clamp(0, n - 1) as usize);
        self.data[y * PATCH_SIZE + x]
    }
}

/// Why a feature produced no descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SkipReason {
    SingularShape,
    OutOfBounds,
    FlatPatch,
}

/// 64 components, unit L2 norm, or all zeros for a flat patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Descriptor(pub Vec<f64>);

impl Descriptor {
    pub fn is_sentinel(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    pub fn distance(&self, other: &Descriptor) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Region normalization parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionConfig {
    /// Patch half-width in normalized units (pixels after unimodular
    /// shape normalization).
    pub patch_radius: f64,
    /// Gaussian window of the shape (second-moment) matrix.
    pub shape_sigma: f64,
}

impl Default for RegionConfig {
    fn default() -> Self {
        Self {
            patch_radius: 16.0,
            shape_sigma: 6.0,
        }
    }
}

/// Symmetric inverse square root of an SPD 2x2 matrix, rescaled to unit
/// determinant. Eigenvalues are floored at `1e-12 * lambda_max`.
pub fn shape_normalizer(m: &[[f64; 2]; 2]) -> Option<[[f64; 2]; 2]> {
    let (lo, hi, v) = sym2_eigen(m);
    if !(hi > 0.0) || lo < EIGEN_FLOOR_REL * hi {
        return None;
    }
    let lo = lo.max(EIGEN_FLOOR_REL * hi);
    let (a, b) = (hi.powf(-0.5), lo.powf(-0.5));
    // Unit determinant: divide by sqrt(a b).
    let k = (a * b).sqrt().recip();
    let (a, b) = (a * k, b * k);
    let (c, s) = (v[0], v[1]);
    Some([
        [a * c * c + b * s * s, (a - b) * c * s],
        [(a - b) * c * s, a * s * s + b * c * c],
    ])
}

fn mul2(a: &[[f64; 2]; 2], b: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    [
        [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
        [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
    ]
}

/// Second-moment matrix of the image seen through `p = c + n q`, with an
/// isotropic Gaussian window in `q` and gradients taken in `q` units.
fn warped_second_moment(
    img: &Image2D,
    c: [f64; 2],
    n: &[[f64; 2]; 2],
    sigma: f64,
) -> Option<[[f64; 2]; 2]> {
    let r = (3.0 * sigma).ceil() as i64;
    let at = |u: f64, v: f64| {
        sample_bicubic(img, c[0] + n[0][0] * u + n[0][1] * v, c[1] + n[1][0] * u + n[1][1] * v).ok()
    };
    let (mut sxx, mut sxy, mut syy, mut wsum) = (0.0, 0.0, 0.0, 0.0);
    for j in -r..=r {
        for i in -r..=r {
            let (u, v) = (i as f64, j as f64);
            let w = (-(u * u + v * v) / (2.0 * sigma * sigma)).exp();
            let gx = 0.5 * (at(u + 1.0, v)? - at(u - 1.0, v)?);
            let gy = 0.5 * (at(u, v + 1.0)? - at(u, v - 1.0)?);
            sxx += w * gx * gx;
            sxy += w * gx * gy;
            syy += w * gy * gy;
            wsum += w;
        }
    }
    Some([[sxx / wsum, sxy / wsum], [sxy / wsum, syy / wsum]])
}

/// Iterative shape adaptation: starting from the plain second-moment
/// normalizer, re-estimate the second-moment matrix in the normalized frame
/// until it is isotropic. Returns the symmetric unit-determinant map
/// `(N N^T)^(1/2)` of the final normalizer `N`.
pub fn adapted_normalizer(
    img: &Image2D,
    fp: &FeaturePoint,
    cfg: &RegionConfig,
) -> std::result::Result<[[f64; 2]; 2], SkipReason> {
    let m = second_moment_matrix(img, fp.x, fp.y, cfg.shape_sigma);
    let mut n = shape_normalizer(&m).ok_or(SkipReason::SingularShape)?;
    let c = [fp.x as f64, fp.y as f64];
    for _ in 0..ADAPT_MAX_ITER {
        let m = warped_second_moment(img, c, &n, cfg.shape_sigma).ok_or(SkipReason::OutOfBounds)?;
        let (lo, hi, _) = sym2_eigen(&m);
        if hi > 0.0 && lo >= ADAPT_ISOTROPY * hi {
            break;
        }
        let step = shape_normalizer(&m).ok_or(SkipReason::SingularShape)?;
        n = mul2(&n, &step);
        let (lo, hi, _) = sym2_eigen(&mul2(&n, &[[n[0][0], n[1][0]], [n[0][1], n[1][1]]]));
        if hi > ADAPT_MAX_ANISOTROPY * lo {
            return Err(SkipReason::SingularShape);
        }
    }
    // Symmetric square root of N N^T, i.e. the inverse square root of N^-T N^-1.
    let nnt = mul2(&n, &[[n[0][0], n[1][0]], [n[0][1], n[1][1]]]);
    let inv = {
        let d = nnt[0][0] * nnt[1][1] - nnt[0][1] * nnt[1][0];
        [[nnt[1][1] / d, -nnt[0][1] / d], [-nnt[1][0] / d, nnt[0][0] / d]]
    };
    shape_normalizer(&inv).ok_or(SkipReason::SingularShape)
}

/// Samples a `20x20` patch around `fp` through the shape-adapted
/// normalizing map, then standardizes it.
pub fn normalize_region(
    img: &Image2D,
    fp: &FeaturePoint,
    cfg: &RegionConfig,
) -> std::result::Result<Patch, SkipReason> {
    let n = adapted_normalizer(img, fp, cfg)?;
    let (cx, cy) = (fp.x as f64, fp.y as f64);
    let step = cfg.patch_radius / (PATCH_SIZE as f64 / 2.0);
    let mut data = Vec::with_capacity(PATCH_SIZE * PATCH_SIZE);
    for j in 0..PATCH_SIZE {
        let v = (j as f64 - (PATCH_SIZE as f64 - 1.0) / 2.0) * step;
        for i in 0..PATCH_SIZE {
            let u = (i as f64 - (PATCH_SIZE as f64 - 1.0) / 2.0) * step;
            let x = cx + n[0][0] * u + n[0][1] * v;
            let y = cy + n[1][0] * u + n[1][1] * v;
            data.push(sample_bicubic(img, x, y).map_err(|_| SkipReason::OutOfBounds)?);
        }
    }
    let mean = data.iter().sum::<f64>() / data.len() as f64;
    let var = data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / data.len() as f64;
    let scale = mean.abs().max(1.0);
    if var <= (1e-12 * scale).powi(2) {
        return Err(SkipReason::FlatPatch);
    }
    let sd = var.sqrt();
    Ok(Patch {
        data: data.into_iter().map(|v| (v - mean) / sd).collect(),
    })
}

/// 4x4 grid of 5x5 cells, each contributing `(sum gx, sum gy, sum |gx|,
/// sum |gy|)` of central-difference gradients; L2-normalized.
pub fn compute_descriptor(patch: &Patch) -> Descriptor {
    let cell = PATCH_SIZE / 4;
    let mut d = vec![0.0; DESCRIPTOR_LEN];
    for y in 0..PATCH_SIZE {
        for x in 0..PATCH_SIZE {
            let (xi, yi) = (x as isize, y as isize);
            let gx = 0.5 * (patch.get(xi + 1, yi) - patch.get(xi - 1, yi));
            let gy = 0.5 * (patch.get(xi, yi + 1) - patch.get(xi, yi - 1));
            let base = 4 * ((y / cell) * 4 + x / cell);
            d[base] += gx;
            d[base + 1] += gy;
            d[base + 2] += gx.abs();
            d[base + 3] += gy.abs();
        }
    }
    let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 1e-12) {
        return Descriptor(vec![0.0; DESCRIPTOR_LEN]);
    }
    Descriptor(d.into_iter().map(|v| v / norm).collect())
}

/// A described feature: index into the detected list plus its descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct DescribedFeature {
    pub index: usize,
    pub point: FeaturePoint,
    pub descriptor: Descriptor,
}

/// Describes every feature that survives region normalization, sampling
/// from `images[fp.level]`.
pub fn describe_features(
    images: &[&Image2D],
    features: &[FeaturePoint],
    cfg: &RegionConfig,
) -> Vec<DescribedFeature> {
    let indexed: Vec<(usize, FeaturePoint)> = features.iter().copied().enumerate().collect();
    par::map_slice(&indexed, |&(index, fp)| {
        let img = images[fp.level.min(images.len() - 1)];
        normalize_region(img, &fp, cfg).ok().map(|patch| DescribedFeature {
            index,
            point: fp,
            descriptor: compute_descriptor(&patch),
        })
    })
    .into_iter()
    .flatten()
    .collect()
}

/// Putative correspondence between two descriptor lists.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    #[serde(rename = "a")]
    pub index_a: usize,
    #[serde(rename = "b")]
    pub index_b: usize,
    #[serde(rename = "dist")]
    pub distance: f64,
}

/// Nearest-neighbour matching with Lowe's ratio test and greedy one-to-one
/// selection by ascending distance. `ratio = 1` disables the ratio test.
pub fn match_descriptors(a: &[Descriptor], b: &[Descriptor], ratio: f64) -> Result<Vec<Match>> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Config(format!("ratio must be in (0, 1], got {ratio}")));
    }
    let b_live: Vec<usize> = (0..b.len()).filter(|&j| !b[j].is_sentinel()).collect();
    if b_live.is_empty() {
        return Ok(Vec::new());
    }
    let candidates = par::map_range(a.len(), |i| {
        if a[i].is_sentinel() {
            return None;
        }
        let mut best = (f64::INFINITY, usize::MAX);
        let mut second = f64::INFINITY;
        for &j in &b_live {
            let d = a[i].distance(&b[j]);
            if d < best.0 {
                second = best.0;
                best = (d, j);
            } else if d < second {
                second = d;
            }
        }
        let accept = if b_live.len() < 2 {
            best.0 <= SINGLE_CANDIDATE_CAP
        } else {
            ratio >= 1.0 || best.0 <= ratio * second
        };
        accept.then_some(Match {
            index_a: i,
            index_b: best.1,
            distance: best.0,
        })
    });
    let mut candidates: Vec<Match> = candidates.into_iter().flatten().collect();
    candidates.sort_by(|p, q| {
        p.distance
            .total_cmp(&q.distance)
            .then(p.index_a.cmp(&q.index_a))
            .then(p.index_b.cmp(&q.index_b))
    });
    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut out = Vec::new();
    for m in candidates {
        if !used_a[m.index_a] && !used_b[m.index_b] {
            used_a[m.index_a] = true;
            used_b[m.index_b] = true;
            out.push(m);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::gaussian_blob;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fp(x: usize, y: usize) -> FeaturePoint {
        FeaturePoint {
            x,
            y,
            level: 0,
            t: 0.0,
            response: 1.0,
        }
    }

    fn random_descriptor(rng: &mut ChaCha8Rng) -> Descriptor {
        let v: Vec<f64> = (0..DESCRIPTOR_LEN).map(|_| rng.random::<f64>() - 0.5).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        Descriptor(v.into_iter().map(|x| x / n).collect())
    }

    #[test]
    fn isotropic_shape_gives_identity_normalizer() {
        let n = shape_normalizer(&[[3.0, 0.0], [0.0, 3.0]]).unwrap();
        assert!((n[0][0] - 1.0).abs() < 1e-12 && n[0][1].abs() < 1e-12 && (n[1][1] - 1.0).abs() < 1e-12);
        assert!(shape_normalizer(&[[1.0, 0.0], [0.0, 0.0]]).is_none());
        assert!(shape_normalizer(&[[0.0, 0.0], [0.0, 0.0]]).is_none());
    }

    #[test]
    fn normalizer_whitens() {
        let m = [[4.0, 1.0], [1.0, 2.0]];
        let n = shape_normalizer(&m).unwrap();
        // N^T M N must be a multiple of the identity, with det N = 1.
        let nm = [
            [n[0][0] * m[0][0] + n[1][0] * m[1][0], n[0][0] * m[0][1] + n[1][0] * m[1][1]],
            [n[0][1] * m[0][0] + n[1][1] * m[1][0], n[0][1] * m[0][1] + n[1][1] * m[1][1]],
        ];
        let r = [
            [nm[0][0] * n[0][0] + nm[0][1] * n[1][0], nm[0][0] * n[0][1] + nm[0][1] * n[1][1]],
            [nm[1][0] * n[0][0] + nm[1][1] * n[1][0], nm[1][0] * n[0][1] + nm[1][1] * n[1][1]],
        ];
        assert!((r[0][0] - r[1][1]).abs() < 1e-12 && r[0][1].abs() < 1e-12);
        assert!((n[0][0] * n[1][1] - n[0][1] * n[1][0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stretched_blob_normalizes_to_same_patch() {
        // Oracle: the same blob sampled directly on a stretched grid.
        let (c, sigma) = (63.0, 6.0);
        let blob = |sx: f64, sy: f64| {
            Image2D::from_fn(128, 128, |x, y| {
                let (dx, dy) = ((x - c) / sx, (y - c) / sy);
                0.2 + 0.6 * (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
            })
            .unwrap()
        };
        let cfg = RegionConfig::default();
        let p0 = normalize_region(&blob(1.0, 1.0), &fp(63, 63), &cfg).unwrap();
        let p1 = normalize_region(&blob(2.0, 0.5), &fp(63, 63), &cfg).unwrap();
        let rms = (p0
            .data()
            .iter()
            .zip(p1.data())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / p0.data().len() as f64)
            .sqrt();
        assert!(rms <= 0.1, "rms {rms}");
    }

    #[test]
    fn flat_region_is_skipped() {
        let img = Image2D::constant(64, 64, 0.5).unwrap();
        assert_eq!(
            normalize_region(&img, &fp(32, 32), &RegionConfig::default()),
            Err(SkipReason::SingularShape)
        );
        let p = Patch::from_data(vec![0.0; 400]).unwrap();
        assert!(compute_descriptor(&p).is_sentinel());
    }

    #[test]
    fn border_feature_is_skipped() {
        let img = gaussian_blob(64, 64, [6.0, 32.0], 4.0, 0.1, 0.5).unwrap();
        assert_eq!(
            normalize_region(&img, &fp(6, 32), &RegionConfig::default()),
            Err(SkipReason::OutOfBounds)
        );
    }

    #[test]
    fn descriptor_is_unit_norm_and_repeatable() {
        let img = gaussian_blob(80, 80, [37.0, 41.0], 6.0, 0.2, 0.5).unwrap();
        let patch = normalize_region(&img, &fp(40, 40), &RegionConfig::default()).unwrap();
        let d1 = compute_descriptor(&patch);
        let d2 = compute_descriptor(&patch.clone());
        assert_eq!(d1.0.len(), DESCRIPTOR_LEN);
        let n: f64 = d1.0.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-9);
        assert_eq!(d1.distance(&d2), 0.0);
    }

    #[test]
    fn descriptor_tolerates_small_noise() {
        let img = gaussian_blob(80, 80, [37.0, 41.0], 6.0, 0.2, 0.5).unwrap();
        let patch = normalize_region(&img, &fp(40, 40), &RegionConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noisy = Patch::from_data(
            patch.data().iter().map(|v| v + 0.01 * rng.random::<f64>()).collect(),
        )
        .unwrap();
        let d = compute_descriptor(&patch).distance(&compute_descriptor(&noisy));
        assert!(d < 0.3, "distance {d}");
    }

    #[test]
    fn matching_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<Descriptor> = (0..10).map(|_| random_descriptor(&mut rng)).collect();
        assert!(match_descriptors(&a, &[], 0.8).unwrap().is_empty());
        let same = match_descriptors(&a, &a, 0.8).unwrap();
        assert_eq!(same.len(), 10);
        assert!(same.iter().all(|m| m.index_a == m.index_b && m.distance == 0.0));
        assert!(match_descriptors(&a, &a, 0.0).is_err());
    }

    #[test]
    fn recovers_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a: Vec<Descriptor> = (0..10).map(|_| random_descriptor(&mut rng)).collect();
        let perm = [3usize, 7, 0, 9, 1, 4, 8, 2, 6, 5];
        let b: Vec<Descriptor> = perm.iter().map(|&i| a[i].clone()).collect();
        let mut matches = match_descriptors(&a, &b, 0.8).unwrap();
        matches.sort_by_key(|m| m.index_a);
        // Oracle: brute-force assignment over distinct vectors is the inverse permutation.
        for m in &matches {
            assert_eq!(perm[m.index_b], m.index_a);
        }
        assert_eq!(matches.len(), 10);
    }

    #[test]
    fn single_candidate_uses_absolute_cap() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = vec![random_descriptor(&mut rng)];
        let far = Descriptor(a[0].0.iter().map(|v| -v).collect());
        assert!(match_descriptors(&a, &[far], 0.8).unwrap().is_empty());
        assert_eq!(match_descriptors(&a, &a, 0.8).unwrap().len(), 1);
    }
}
