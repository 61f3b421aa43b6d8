//! Second-order equi-affine differential invariants.
//!
//! In 2D the fundamental pair is
//!
//! ```text
//! J = u_y^2 u_xx - 2 u_x u_y u_xy + u_x^2 u_yy
//! H = u_xx u_yy - u_xy^2
//! ```
//!
//! and the detector is the regularized affine gradient magnitude
//! `sqrt(H^2 / (J^2 + 1))`. In 3D the invariants are `det(Hess u)` and
//! `grad u^T (Hess u)^-1 grad u`, the latter evaluated through the adjugate.
//!
//! Fields are computed from whatever image is passed in; smoothing is the
//! caller's choice (see [`invariant_fields`]).

use serde::Serialize;

use crate::diffops::{self, Jet2, Jet3};
use crate::error::{Error, Result};
use crate::image::{Field2D, Field3D, Image2D, Image3D, InvariantField};
use crate::par;

#[inline]
pub fn j_of(j: &Jet2) -> f64 {
    j.uy * j.uy * j.uxx - 2.0 * j.ux * j.uy * j.uxy + j.ux * j.ux * j.uyy
}

#[inline]
pub fn h_of(j: &Jet2) -> f64 {
    j.uxx * j.uyy - j.uxy * j.uxy
}

#[inline]
pub fn detector_of(j: &Jet2) -> f64 {
    let (h, jj) = (h_of(j), j_of(j));
    (h * h / (jj * jj + 1.0)).sqrt()
}

pub fn field_j(img: &Image2D) -> InvariantField {
    diffops::map_jets(img, j_of)
}

pub fn field_h(img: &Image2D) -> InvariantField {
    diffops::map_jets(img, h_of)
}

/// `sqrt(H^2 / (J^2 + 1))`: finite and nonnegative everywhere.
pub fn detector_field(img: &Image2D) -> InvariantField {
    diffops::map_jets(img, detector_of)
}

/// `H / J`, invalid where `|J| <= min_abs_j`.
pub fn field_h_over_j(img: &Image2D, min_abs_j: f64) -> InvariantField {
    let (w, h) = (img.width(), img.height());
    let pairs = par::map_grid(w, h, |x, y| {
        if diffops::has_stencil(img, x, y) {
            let jet = diffops::jet_at(img, x, y);
            let jj = j_of(&jet);
            if jj.abs() > min_abs_j {
                return (h_of(&jet) / jj, true);
            }
        }
        (0.0, false)
    });
    let (values, valid) = pairs.into_iter().unzip();
    Field2D::new(w, h, values, valid)
}

/// The three 2D fields computed on one (optionally pre-smoothed) image.
#[derive(Debug, Clone)]
pub struct InvariantSet {
    pub h: InvariantField,
    pub j: InvariantField,
    pub detector: InvariantField,
}

/// Smooths `img` with `sigma` and computes `H`, `J` and the detector.
pub fn invariant_fields(img: &Image2D, sigma: f64) -> Result<InvariantSet> {
    let smooth = diffops::gaussian_smooth(img, sigma)?;
    Ok(InvariantSet {
        h: field_h(&smooth),
        j: field_j(&smooth),
        detector: detector_field(&smooth),
    })
}

#[inline]
fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Adjugate (transposed cofactor matrix) of a 3x3 matrix.
#[inline]
fn adj3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let c = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    [
        [c(1, 2, 1, 2), -c(0, 2, 1, 2), c(0, 1, 1, 2)],
        [-c(1, 2, 0, 2), c(0, 2, 0, 2), -c(0, 1, 0, 2)],
        [c(1, 2, 0, 1), -c(0, 2, 0, 1), c(0, 1, 0, 1)],
    ]
}

#[inline]
pub fn h3_of(j: &Jet3) -> f64 {
    det3(&j.hess)
}

/// `grad^T adj(Hess) grad`, equal to `det(Hess) * grad^T Hess^-1 grad`.
#[inline]
pub fn j3_numerator_of(j: &Jet3) -> f64 {
    let a = adj3(&j.hess);
    let g = j.grad;
    (0..3)
        .map(|r| g[r] * (0..3).map(|c| a[r][c] * g[c]).sum::<f64>())
        .sum()
}

/// `det(Hess u)` at every interior voxel.
pub fn field_h3(vol: &Image3D) -> Field3D {
    diffops::map_jets3(vol, h3_of)
}

/// Relative singularity threshold for the 3D ratio invariant.
pub const SINGULAR_REL: f64 = 1e-12;

/// Returns `(numerator, ratio)` where `numerator = grad^T adj(Hess) grad` and
/// `ratio = numerator / det(Hess) = grad^T Hess^-1 grad`.
///
/// The ratio is invalid wherever `|det| <= 1e-12 * scale^3`, with `scale`
/// the largest absolute Hessian entry over the volume interior.
pub fn field_j3(vol: &Image3D) -> (Field3D, Field3D) {
    let hess = diffops::map_jets3(vol, |j| {
        j.hess.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
    });
    let scale = hess.valid_values().fold(0.0f64, f64::max);
    let threshold = SINGULAR_REL * scale.powi(3);
    let numerator = diffops::map_jets3(vol, j3_numerator_of);
    let dims = vol.dims();
    let (nx, ny, nz) = dims;
    let pairs = par::map_volume(nx, ny, nz, |x, y, z| {
        if diffops::is_interior3(x, y, z, dims) {
            let jet = diffops::jet3_at(vol, x, y, z);
            let det = h3_of(&jet);
            if det.abs() > threshold {
                return (j3_numerator_of(&jet) / det, true);
            }
        }
        (0.0, false)
    });
    let (values, valid) = pairs.into_iter().unzip();
    (numerator, Field3D::new(nx, ny, nz, values, valid))
}

/// SL(2) part of the moving frame at a point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MovingFrame {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl MovingFrame {
    pub fn det(&self) -> f64 {
        self.alpha * self.delta - self.beta * self.gamma
    }
}

/// Derivatives of `u` in the transformed coordinates `(z, w)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProlongedJet {
    pub uz: f64,
    pub uw: f64,
    pub uzz: f64,
    pub uzw: f64,
    pub uww: f64,
}

/// Chain-rule prolongation of a 2-jet through the linear part of a group
/// element `[[alpha, beta], [gamma, delta]]`.
pub fn prolong(jet: &Jet2, f: &MovingFrame) -> ProlongedJet {
    let MovingFrame {
        alpha: a,
        beta: b,
        gamma: c,
        delta: d,
    } = *f;
    ProlongedJet {
        uz: d * jet.ux - c * jet.uy,
        uw: -b * jet.ux + a * jet.uy,
        uzz: d * d * jet.uxx - 2.0 * c * d * jet.uxy + c * c * jet.uyy,
        uww: b * b * jet.uxx - 2.0 * a * b * jet.uxy + a * a * jet.uyy,
        uzw: -b * d * jet.uxx + (a * d + b * c) * jet.uxy - a * c * jet.uyy,
    }
}

/// Solves the normalization `u_z = 0, u_w = 1, det = 1` plus the second-order
/// condition for the group parameters:
///
/// ```text
/// gamma = u_x, delta = u_y,
/// beta  = (u_y u_xy - u_x u_yy) / J,
/// alpha = (u_y u_xx - u_x u_xy) / J.
/// ```
///
/// Fails on a vanishing gradient or a vanishing `J`.
pub fn moving_frame_params(jet: &Jet2) -> Result<MovingFrame> {
    let grad2 = jet.ux * jet.ux + jet.uy * jet.uy;
    if grad2 == 0.0 {
        return Err(Error::DegeneratePoint("zero gradient".into()));
    }
    let j = j_of(jet);
    let scale = grad2 * (jet.uxx.abs() + 2.0 * jet.uxy.abs() + jet.uyy.abs());
    if j.abs() <= f64::EPSILON * scale || j == 0.0 {
        return Err(Error::DegeneratePoint(format!("J = {j} vanishes")));
    }
    Ok(MovingFrame {
        alpha: (jet.uy * jet.uxx - jet.ux * jet.uxy) / j,
        beta: (jet.uy * jet.uxy - jet.ux * jet.uyy) / j,
        gamma: jet.ux,
        delta: jet.uy,
    })
}
