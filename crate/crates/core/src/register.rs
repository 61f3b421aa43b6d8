//! Robust affine estimation from point correspondences and the end-to-end
//! pair registration pipeline.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::describe::{describe_features, match_descriptors, Match, RegionConfig};
use crate::error::{Error, Result};
use crate::features::{build_detector_stack, detect, DetectConfig, FeaturePoint};
use crate::image::Image2D;
use crate::interp::sample_bicubic_clamped;
use crate::par;
use crate::scalespace::{build_scale_space, FlowMode};
use crate::transform::{Affine2, EquiAffine2};

/// Smallest acceptable `lambda_min / lambda_max` of the source scatter.
const COLLINEAR_TOL: f64 = 1e-10;
/// Upper bound on refit/re-validate rounds after RANSAC.
const MAX_REFITS: usize = 10;

/// Least-squares affine map with `A p_i + t ~ q_i`; exact for three
/// non-collinear pairs.
pub fn fit_affine_lsq(src: &[[f64; 2]], dst: &[[f64; 2]]) -> Result<Affine2> {
    if src.len() != dst.len() {
        return Err(Error::Invariant("point lists differ in length".into()));
    }
    if src.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "affine fit needs 3 pairs, got {}",
            src.len()
        )));
    }
    let n = src.len() as f64;
    let mean = |pts: &[[f64; 2]]| {
        let s = pts.iter().fold([0.0, 0.0], |a, p| [a[0] + p[0], a[1] + p[1]]);
        [s[0] / n, s[1] / n]
    };
    let (ms, md) = (mean(src), mean(dst));
    // Centered normal equations: scatter S = sum dp dp^T, cross C = sum dq dp^T.
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    let mut c = [[0.0; 2]; 2];
    for (p, q) in src.iter().zip(dst) {
        let (px, py) = (p[0] - ms[0], p[1] - ms[1]);
        let (qx, qy) = (q[0] - md[0], q[1] - md[1]);
        sxx += px * px;
        sxy += px * py;
        syy += py * py;
        c[0][0] += qx * px;
        c[0][1] += qx * py;
        c[1][0] += qy * px;
        c[1][1] += qy * py;
    }
    let det = sxx * syy - sxy * sxy;
    let tr = sxx + syy;
    if !(tr > 0.0) || det <= COLLINEAR_TOL * tr * tr {
        return Err(Error::DegenerateConfiguration(
            "source points are collinear or coincident".into(),
        ));
    }
    let inv = [[syy / det, -sxy / det], [-sxy / det, sxx / det]];
    let a = [
        [
            c[0][0] * inv[0][0] + c[0][1] * inv[1][0],
            c[0][0] * inv[0][1] + c[0][1] * inv[1][1],
        ],
        [
            c[1][0] * inv[0][0] + c[1][1] * inv[1][0],
            c[1][0] * inv[0][1] + c[1][1] * inv[1][1],
        ],
    ];
    let t = [
        md[0] - a[0][0] * ms[0] - a[0][1] * ms[1],
        md[1] - a[1][0] * ms[0] - a[1][1] * ms[1],
    ];
    Affine2::new(a, t).map_err(|_| Error::DegenerateConfiguration("fitted map is singular".into()))
}

/// Exact affine map through three pairs (solves the 3x3 system directly).
fn fit_three(src: [[f64; 2]; 3], dst: [[f64; 2]; 3]) -> Option<Affine2> {
    let area = (src[1][0] - src[0][0]) * (src[2][1] - src[0][1])
        - (src[2][0] - src[0][0]) * (src[1][1] - src[0][1]);
    let span = (0..3)
        .flat_map(|i| (0..3).map(move |j| (i, j)))
        .map(|(i, j)| (src[i][0] - src[j][0]).powi(2) + (src[i][1] - src[j][1]).powi(2))
        .fold(0.0, f64::max);
    if !(span > 0.0) || area.abs() <= 1e-6 * span {
        return None;
    }
    let m = Matrix3::new(
        src[0][0], src[0][1], 1.0, src[1][0], src[1][1], 1.0, src[2][0], src[2][1], 1.0,
    );
    let lu = m.lu();
    let rx = lu.solve(&Vector3::new(dst[0][0], dst[1][0], dst[2][0]))?;
    let ry = lu.solve(&Vector3::new(dst[0][1], dst[1][1], dst[2][1]))?;
    Affine2::new([[rx[0], rx[1]], [ry[0], ry[1]]], [rx[2], ry[2]]).ok()
}

/// RANSAC parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacConfig {
    pub n_iter: usize,
    /// Inlier threshold on `|model(p) - q|`, pixels.
    pub inlier_tol: f64,
    pub seed: u64,
    /// Rescale the final matrix to unit determinant.
    pub project_unimodular: bool,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            n_iter: 1000,
            inlier_tol: 3.0,
            seed: 0,
            project_unimodular: false,
        }
    }
}

/// Outcome of robust estimation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegistrationResult {
    pub transform: Affine2,
    /// Indices into the match list.
    pub inlier_indices: Vec<usize>,
    /// RMS residual over inliers, pixels.
    pub rms_residual: f64,
    pub n_iterations_used: usize,
}

#[inline]
fn residual(t: &Affine2, p: [f64; 2], q: [f64; 2]) -> f64 {
    let r = t.apply(p);
    ((r[0] - q[0]).powi(2) + (r[1] - q[1]).powi(2)).sqrt()
}

fn score(t: &Affine2, src: &[[f64; 2]], dst: &[[f64; 2]], tol: f64) -> (Vec<usize>, f64) {
    let mut inliers = Vec::new();
    let mut ss = 0.0;
    for (i, (p, q)) in src.iter().zip(dst).enumerate() {
        let r = residual(t, *p, *q);
        if r <= tol {
            inliers.push(i);
            ss += r * r;
        }
    }
    let rms = if inliers.is_empty() {
        f64::INFINITY
    } else {
        (ss / inliers.len() as f64).sqrt()
    };
    (inliers, rms)
}

/// Random generator for RANSAC iteration `iteration` under `seed`: an
/// independent ChaCha stream per iteration, so the result does not depend
/// on how iterations are scheduled across threads.
pub fn iteration_rng(seed: u64, iteration: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64);
    rng
}

/// RANSAC over correspondences `src[i] -> dst[i]` followed by a
/// least-squares refit on the consensus set. Reported inliers are
/// re-validated against the reported transform.
pub fn ransac_affine_points(
    src: &[[f64; 2]],
    dst: &[[f64; 2]],
    cfg: &RansacConfig,
) -> Result<RegistrationResult> {
    if src.len() != dst.len() {
        return Err(Error::Invariant("point lists differ in length".into()));
    }
    if src.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "RANSAC needs at least 3 matches, got {}",
            src.len()
        )));
    }
    if cfg.n_iter == 0 || !(cfg.inlier_tol > 0.0) {
        return Err(Error::Config("n_iter must be >= 1 and inlier_tol > 0".into()));
    }
    let n = src.len();
    let trials = par::map_range(cfg.n_iter, |it| {
        let mut rng = iteration_rng(cfg.seed, it);
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let mut k = rng.random_range(0..n - 2);
        let (lo, hi) = (i.min(j), i.max(j));
        if k >= lo {
            k += 1;
        }
        if k >= hi {
            k += 1;
        }
        let model = fit_three([src[i], src[j], src[k]], [dst[i], dst[j], dst[k]])?;
        let (inliers, rms) = score(&model, src, dst, cfg.inlier_tol);
        Some((inliers.len(), rms, it, inliers))
    });
    let best = trials
        .into_iter()
        .flatten()
        .min_by(|a, b| {
            b.0.cmp(&a.0)
                .then(a.1.total_cmp(&b.1))
                .then(a.2.cmp(&b.2))
        })
        .ok_or_else(|| {
            Error::DegenerateConfiguration("every minimal sample was degenerate".into())
        })?;
    let mut inliers = best.3;
    let mut transform = refit(src, dst, &inliers, cfg)?;
    for _ in 0..MAX_REFITS {
        let (next, _) = score(&transform, src, dst, cfg.inlier_tol);
        if next == inliers || next.len() < 3 {
            break;
        }
        inliers = next;
        transform = refit(src, dst, &inliers, cfg)?;
    }
    let (inliers, rms) = score(&transform, src, dst, cfg.inlier_tol);
    Ok(RegistrationResult {
        transform,
        rms_residual: if inliers.is_empty() { 0.0 } else { rms },
        inlier_indices: inliers,
        n_iterations_used: cfg.n_iter,
    })
}

fn refit(src: &[[f64; 2]], dst: &[[f64; 2]], idx: &[usize], cfg: &RansacConfig) -> Result<Affine2> {
    let s: Vec<[f64; 2]> = idx.iter().map(|&i| src[i]).collect();
    let d: Vec<[f64; 2]> = idx.iter().map(|&i| dst[i]).collect();
    let t = fit_affine_lsq(&s, &d)?;
    if cfg.project_unimodular {
        Ok(t.project_unimodular()?.to_affine())
    } else {
        Ok(t)
    }
}

/// RANSAC on descriptor matches between two feature lists.
pub fn ransac_affine(
    matches: &[Match],
    pts_a: &[[f64; 2]],
    pts_b: &[[f64; 2]],
    cfg: &RansacConfig,
) -> Result<RegistrationResult> {
    let mut src = Vec::with_capacity(matches.len());
    let mut dst = Vec::with_capacity(matches.len());
    for m in matches {
        let (p, q) = (
            pts_a.get(m.index_a).ok_or_else(|| Error::Invariant(format!("match index {} out of range", m.index_a)))?,
            pts_b.get(m.index_b).ok_or_else(|| Error::Invariant(format!("match index {} out of range", m.index_b)))?,
        );
        src.push(*p);
        dst.push(*q);
    }
    ransac_affine_points(&src, &dst, cfg)
}

/// Every knob of the end-to-end pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub presmooth_sigma: f64,
    pub mode: FlowMode,
    pub n_levels: usize,
    pub t_max: f64,
    pub dt: f64,
    pub detect: DetectConfig,
    pub region: RegionConfig,
    pub ratio: f64,
    pub ransac: RansacConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            presmooth_sigma: 1.0,
            mode: FlowMode::Affine,
            n_levels: 8,
            t_max: 14.0,
            dt: 0.1,
            detect: DetectConfig::default(),
            region: RegionConfig::default(),
            ratio: 0.8,
            ransac: RansacConfig::default(),
        }
    }
}

/// Detected and described features of one image.
#[derive(Debug, Clone)]
pub struct ImageFeatures {
    /// All detected points, response-sorted.
    pub points: Vec<FeaturePoint>,
    /// Points that survived region normalization, with descriptors.
    pub described: Vec<crate::describe::DescribedFeature>,
}

/// Scale-space, detection and description of one image.
pub fn extract_features(img: &Image2D, cfg: &PipelineConfig) -> Result<ImageFeatures> {
    let ss = build_scale_space(img, cfg.n_levels, cfg.t_max, cfg.mode, cfg.dt)?;
    let stack = build_detector_stack(&ss, cfg.presmooth_sigma)?;
    let points = detect(&stack, &cfg.detect)?;
    let images: Vec<&Image2D> = stack.levels().iter().map(|l| &l.image).collect();
    let described = describe_features(&images, &points, &cfg.region);
    Ok(ImageFeatures { points, described })
}

/// Matches between described features; indices refer to the `described` lists.
pub fn match_features(a: &ImageFeatures, b: &ImageFeatures, ratio: f64) -> Result<Vec<Match>> {
    let da: Vec<_> = a.described.iter().map(|f| f.descriptor.clone()).collect();
    let db: Vec<_> = b.described.iter().map(|f| f.descriptor.clone()).collect();
    match_descriptors(&da, &db, ratio)
}

/// Everything `register_pair` produces.
#[derive(Debug, Clone)]
pub struct PairRegistration {
    pub result: RegistrationResult,
    pub features_a: ImageFeatures,
    pub features_b: ImageFeatures,
    pub matches: Vec<Match>,
    /// RGB overlay: red/blue = A, green = B resampled into A's frame.
    pub overlay: Vec<[f64; 3]>,
}

/// Full pipeline: scale-space, detection, description, matching, RANSAC.
/// The transform maps points of `img_a` onto `img_b`.
pub fn register_pair(img_a: &Image2D, img_b: &Image2D, cfg: &PipelineConfig) -> Result<PairRegistration> {
    let features_a = extract_features(img_a, cfg)?;
    let features_b = extract_features(img_b, cfg)?;
    let matches = match_features(&features_a, &features_b, cfg.ratio)?;
    if matches.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "only {} descriptor matches survived",
            matches.len()
        )));
    }
    let pa: Vec<[f64; 2]> = features_a.described.iter().map(|f| f.point.position()).collect();
    let pb: Vec<[f64; 2]> = features_b.described.iter().map(|f| f.point.position()).collect();
    let result = ransac_affine(&matches, &pa, &pb, &cfg.ransac)?;
    let overlay = overlay(img_a, img_b, &result.transform);
    Ok(PairRegistration {
        result,
        features_a,
        features_b,
        matches,
        overlay,
    })
}

/// Channel blend of `a` with `b` pulled back through `a_to_b`.
pub fn overlay(a: &Image2D, b: &Image2D, a_to_b: &Affine2) -> Vec<[f64; 3]> {
    par::map_grid(a.width(), a.height(), |x, y| {
        let q = a_to_b.apply([x as f64, y as f64]);
        let inside = q[0] >= 0.0
            && q[1] >= 0.0
            && q[0] <= (b.width() - 1) as f64
            && q[1] <= (b.height() - 1) as f64;
        let vb = if inside {
            sample_bicubic_clamped(b, q[0], q[1])
        } else {
            0.0
        };
        let va = a.get(x, y);
        [va, vb, va]
    })
}

/// Registration accuracy against a known transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegistrationMetrics {
    pub mean_corner_error: f64,
    pub max_corner_error: f64,
    pub det_deviation: f64,
}

/// Endpoint errors of `estimate` against `truth` at the four frame corners.
pub fn eval_registration(estimate: &Affine2, truth: &EquiAffine2, width: usize, height: usize) -> RegistrationMetrics {
    let (w, h) = ((width.max(1) - 1) as f64, (height.max(1) - 1) as f64);
    let corners = [[0.0, 0.0], [w, 0.0], [0.0, h], [w, h]];
    let errors: Vec<f64> = corners
        .iter()
        .map(|&c| {
            let (p, q) = (estimate.apply(c), truth.apply(c));
            ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
        })
        .collect();
    RegistrationMetrics {
        mean_corner_error: errors.iter().sum::<f64>() / 4.0,
        max_corner_error: errors.iter().fold(0.0, |m, &e| m.max(e)),
        det_deviation: (estimate.det() - 1.0).abs(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::random_equiaffine;
    use rand_distr::{Distribution, Normal};

    fn known() -> Affine2 {
        Affine2::new([[1.2, 0.3], [-0.2, 0.9]], [5.0, -3.0]).unwrap()
    }

    fn close(a: &Affine2, b: &Affine2, tol: f64) -> bool {
        let (ma, mb) = (a.matrix(), b.matrix());
        (0..2).all(|r| (0..2).all(|c| (ma[r][c] - mb[r][c]).abs() <= tol))
            && (0..2).all(|i| (a.translation_part()[i] - b.translation_part()[i]).abs() <= tol)
    }

    #[test]
    fn three_pairs_are_interpolated() {
        let t = known();
        let src = [[0.0, 0.0], [10.0, 1.0], [3.0, 7.0]];
        let dst: Vec<_> = src.iter().map(|&p| t.apply(p)).collect();
        assert!(close(&fit_affine_lsq(&src, &dst).unwrap(), &t, 1e-9));
        let same = fit_affine_lsq(&src, &src).unwrap();
        assert!(close(&same, &Affine2::IDENTITY, 1e-12));
    }

    #[test]
    fn collinear_sources_rejected() {
        let src = [[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [5.0, 5.0]];
        assert!(matches!(
            fit_affine_lsq(&src, &src),
            Err(Error::DegenerateConfiguration(_))
        ));
        assert!(matches!(
            ransac_affine_points(&src[..3], &src[..3], &RansacConfig::default()),
            Err(Error::DegenerateConfiguration(_))
        ));
        assert!(matches!(
            ransac_affine_points(&src[..2], &src[..2], &RansacConfig::default()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn noisy_fit_is_accurate() {
        let t = known();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let src: Vec<[f64; 2]> = (0..10)
            .map(|_| [rng.random::<f64>() * 255.0, rng.random::<f64>() * 255.0])
            .collect();
        let dst: Vec<[f64; 2]> = src
            .iter()
            .map(|&p| {
                let q = t.apply(p);
                [q[0] + noise.sample(&mut rng), q[1] + noise.sample(&mut rng)]
            })
            .collect();
        let fit = fit_affine_lsq(&src, &dst).unwrap();
        for c in [[0.0, 0.0], [255.0, 0.0], [0.0, 255.0], [255.0, 255.0]] {
            let (p, q) = (fit.apply(c), t.apply(c));
            assert!(((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt() < 1.0);
        }
    }

    #[test]
    fn perfect_matches_recovered() {
        let g = random_equiaffine(5, 1.8, 0.3, 10.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let src: Vec<[f64; 2]> = (0..20)
            .map(|_| [rng.random::<f64>() * 200.0, rng.random::<f64>() * 200.0])
            .collect();
        let dst: Vec<_> = src.iter().map(|&p| g.apply(p)).collect();
        let r = ransac_affine_points(&src, &dst, &RansacConfig::default()).unwrap();
        assert_eq!(r.inlier_indices.len(), 20);
        assert!(close(&r.transform, &g.to_affine(), 1e-6));
        assert_eq!(r.n_iterations_used, 1000);
    }

    #[test]
    fn deterministic_per_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let src: Vec<[f64; 2]> = (0..30).map(|_| [rng.random::<f64>() * 100.0, rng.random::<f64>() * 100.0]).collect();
        let dst: Vec<[f64; 2]> = (0..30).map(|_| [rng.random::<f64>() * 100.0, rng.random::<f64>() * 100.0]).collect();
        let cfg = RansacConfig { seed: 77, ..Default::default() };
        assert_eq!(
            ransac_affine_points(&src, &dst, &cfg).unwrap(),
            ransac_affine_points(&src, &dst, &cfg).unwrap()
        );
    }

    #[test]
    fn eval_metrics() {
        let g = random_equiaffine(1, 1.5, 0.2, 4.0).unwrap();
        let m = eval_registration(&g.to_affine(), &g, 256, 256);
        assert_eq!(m.mean_corner_error, 0.0);
        assert_eq!(m.max_corner_error, 0.0);
        assert!(m.det_deviation < 1e-12);
        let m = eval_registration(&Affine2::IDENTITY, &EquiAffine2::translation(5.0, 0.0), 100, 50);
        assert_eq!(m.mean_corner_error, 5.0);
    }

    #[test]
    fn blank_pair_has_insufficient_data() {
        let img = Image2D::constant(64, 64, 0.5).unwrap();
        let cfg = PipelineConfig {
            n_levels: 2,
            t_max: 1.0,
            ..Default::default()
        };
        assert!(matches!(
            register_pair(&img, &img, &cfg),
            Err(Error::InsufficientData(_))
        ));
    }
}
