//! Equi-affine and general affine maps of the plane, plus the 3D equi-affine
//! maps used to warp volumes.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|det(m) - 1|` for an equi-affine map.
pub const UNIMODULAR_TOL: f64 = 1e-9;

pub type Mat2 = [[f64; 2]; 2];

#[inline]
fn det2(m: &Mat2) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

#[inline]
fn mul2(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}

#[inline]
fn apply2(m: &Mat2, t: &[f64; 2], p: [f64; 2]) -> [f64; 2] {
    [
        m[0][0] * p[0] + m[0][1] * p[1] + t[0],
        m[1][0] * p[0] + m[1][1] * p[1] + t[1],
    ]
}

fn rotation(theta: f64) -> Mat2 {
    let (s, c) = theta.sin_cos();
    [[c, -s], [s, c]]
}

/// Element of SA(2): `p -> m p + t` with `det(m) = 1`.
///
/// The matrix entries are `[[alpha, beta], [gamma, delta]]` and the
/// translation is `(a, b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TransformJson", into = "TransformJson")]
pub struct EquiAffine2 {
    m: Mat2,
    t: [f64; 2],
}

/// General invertible affine map `p -> m p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TransformJson", into = "TransformJson")]
pub struct Affine2 {
    m: Mat2,
    t: [f64; 2],
}

/// On-disk form shared by both transform types: `{"m":[[a,b],[c,d]],"t":[x,y]}`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TransformJson {
    pub m: Mat2,
    pub t: [f64; 2],
}

impl EquiAffine2 {
    pub const IDENTITY: EquiAffine2 = EquiAffine2 {
        m: [[1.0, 0.0], [0.0, 1.0]],
        t: [0.0, 0.0],
    };

    pub fn new(m: Mat2, t: [f64; 2]) -> Result<Self> {
        if m.iter().flatten().chain(t.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Invariant("non-finite transform entry".into()));
        }
        let det = det2(&m);
        if (det - 1.0).abs() > UNIMODULAR_TOL {
            return Err(Error::Invariant(format!(
                "equi-affine matrix must have det 1, got {det}"
            )));
        }
        Ok(Self { m, t })
    }

    pub fn translation(a: f64, b: f64) -> Self {
        Self {
            m: Self::IDENTITY.m,
            t: [a, b],
        }
    }

    pub fn matrix(&self) -> Mat2 {
        self.m
    }

    pub fn translation_part(&self) -> [f64; 2] {
        self.t
    }

    pub fn det(&self) -> f64 {
        det2(&self.m)
    }

    #[inline]
    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        apply2(&self.m, &self.t, p)
    }

    /// `self.compose(other)` maps `p` to `self(other(p))`.
    pub fn compose(&self, other: &EquiAffine2) -> EquiAffine2 {
        EquiAffine2 {
            m: mul2(&self.m, &other.m),
            t: apply2(&self.m, &self.t, other.t),
        }
    }

    /// Closed-form inverse: `p = [[delta, -beta], [-gamma, alpha]] (q - t)`.
    pub fn invert(&self) -> EquiAffine2 {
        let [[a, b], [c, d]] = self.m;
        let inv = [[d, -b], [-c, a]];
        let t = [-self.t[0], -self.t[1]];
        EquiAffine2 {
            m: inv,
            t: apply2(&inv, &[0.0, 0.0], t),
        }
    }

    /// Conjugates by a translation to `center`: the result applies `self`
    /// in coordinates centered at `center`.
    pub fn centered_at(&self, center: [f64; 2]) -> EquiAffine2 {
        let mc = apply2(&self.m, &[0.0, 0.0], center);
        EquiAffine2 {
            m: self.m,
            t: [
                self.t[0] + center[0] - mc[0],
                self.t[1] + center[1] - mc[1],
            ],
        }
    }

    pub fn to_affine(&self) -> Affine2 {
        Affine2 {
            m: self.m,
            t: self.t,
        }
    }
}

impl Affine2 {
    pub const IDENTITY: Affine2 = Affine2 {
        m: [[1.0, 0.0], [0.0, 1.0]],
        t: [0.0, 0.0],
    };

    pub fn new(m: Mat2, t: [f64; 2]) -> Result<Self> {
        if m.iter().flatten().chain(t.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Invariant("non-finite transform entry".into()));
        }
        if det2(&m) == 0.0 {
            return Err(Error::Invariant("affine matrix is singular".into()));
        }
        Ok(Self { m, t })
    }

    pub fn matrix(&self) -> Mat2 {
        self.m
    }

    pub fn translation_part(&self) -> [f64; 2] {
        self.t
    }

    pub fn det(&self) -> f64 {
        det2(&self.m)
    }

    #[inline]
    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        apply2(&self.m, &self.t, p)
    }

    pub fn invert(&self) -> Affine2 {
        let [[a, b], [c, d]] = self.m;
        let det = det2(&self.m);
        let inv = [[d / det, -b / det], [-c / det, a / det]];
        let t = apply2(&inv, &[0.0, 0.0], self.t);
        Affine2 {
            m: inv,
            t: [-t[0], -t[1]],
        }
    }

    /// Rescales the linear part to unit determinant, `m / sqrt(det m)`.
    pub fn project_unimodular(&self) -> Result<EquiAffine2> {
        let det = self.det();
        if det <= 0.0 {
            return Err(Error::DegenerateConfiguration(format!(
                "cannot project orientation-reversing or singular map (det {det})"
            )));
        }
        let k = det.sqrt().recip();
        let m = [
            [self.m[0][0] * k, self.m[0][1] * k],
            [self.m[1][0] * k, self.m[1][1] * k],
        ];
        EquiAffine2::new(m, self.t)
    }
}

impl TryFrom<TransformJson> for EquiAffine2 {
    type Error = Error;
    fn try_from(j: TransformJson) -> Result<Self> {
        EquiAffine2::new(j.m, j.t)
    }
}

impl From<EquiAffine2> for TransformJson {
    fn from(g: EquiAffine2) -> Self {
        TransformJson { m: g.m, t: g.t }
    }
}

impl TryFrom<TransformJson> for Affine2 {
    type Error = Error;
    fn try_from(j: TransformJson) -> Result<Self> {
        Affine2::new(j.m, j.t)
    }
}

impl From<Affine2> for TransformJson {
    fn from(g: Affine2) -> Self {
        TransformJson { m: g.m, t: g.t }
    }
}

/// Seeded random equi-affine map `R(phi) R(theta) diag(sqrt(a), 1/sqrt(a)) R(-theta) + t`.
///
/// The anisotropy `a` (ratio of the singular values of the matrix) is
/// uniform on `[1, max_anisotropy]`, the stretch axis `theta` is uniform over
/// all directions, the net rotation `phi` is uniform on
/// `[-max_rotation, max_rotation]` and each translation component is uniform
/// on `[-max_translation, max_translation]`.
pub fn random_equiaffine(
    seed: u64,
    max_anisotropy: f64,
    max_rotation: f64,
    max_translation: f64,
) -> Result<EquiAffine2> {
    if !(max_anisotropy >= 1.0) || !max_anisotropy.is_finite() {
        return Err(Error::Config(format!(
            "max_anisotropy must be >= 1, got {max_anisotropy}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = (1.0 + rng.random::<f64>() * (max_anisotropy - 1.0)).sqrt();
    let theta = (rng.random::<f64>() - 0.5) * std::f64::consts::PI;
    let phi = (2.0 * rng.random::<f64>() - 1.0) * max_rotation;
    let tx = (2.0 * rng.random::<f64>() - 1.0) * max_translation;
    let ty = (2.0 * rng.random::<f64>() - 1.0) * max_translation;

    let stretch = [[s, 0.0], [0.0, 1.0 / s]];
    let m = mul2(
        &mul2(&rotation(phi + theta), &stretch),
        &rotation(-theta),
    );
    // Remove rounding drift from the trigonometric products.
    let k = det2(&m).sqrt().recip();
    let m = [[m[0][0] * k, m[0][1] * k], [m[1][0] * k, m[1][1] * k]];
    EquiAffine2::new(m, [tx, ty])
}

/// Element of SA(3): `p -> m p + t` with `det(m) = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquiAffine3 {
    m: Matrix3<f64>,
    t: Vector3<f64>,
}

impl EquiAffine3 {
    pub fn new(m: [[f64; 3]; 3], t: [f64; 3]) -> Result<Self> {
        let m = Matrix3::from_fn(|r, c| m[r][c]);
        let det = m.determinant();
        if (det - 1.0).abs() > UNIMODULAR_TOL {
            return Err(Error::Invariant(format!(
                "equi-affine matrix must have det 1, got {det}"
            )));
        }
        Ok(Self {
            m,
            t: Vector3::from(t),
        })
    }

    pub fn matrix(&self) -> [[f64; 3]; 3] {
        let m = &self.m;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }

    pub fn det(&self) -> f64 {
        self.m.determinant()
    }

    #[inline]
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let q = self.m * Vector3::from(p) + self.t;
        [q.x, q.y, q.z]
    }

    pub fn invert(&self) -> EquiAffine3 {
        // det = 1, so the adjugate is the inverse.
        let inv = self.m.try_inverse().expect("unimodular matrix is invertible");
        EquiAffine3 {
            m: inv,
            t: -(inv * self.t),
        }
    }

    pub fn centered_at(&self, c: [f64; 3]) -> EquiAffine3 {
        let c = Vector3::from(c);
        EquiAffine3 {
            m: self.m,
            t: self.t + c - self.m * c,
        }
    }
}

/// Seeded random SA(3) map `Q diag(s1, s2, s3) Q^T` with a random rotation
/// `Q`, `s1 s2 s3 = 1` and anisotropy `s1 / s3` uniform on
/// `[1, max_anisotropy]`.
pub fn random_equiaffine3(seed: u64, max_anisotropy: f64) -> Result<EquiAffine3> {
    if !(max_anisotropy >= 1.0) {
        return Err(Error::Config(format!(
            "max_anisotropy must be >= 1, got {max_anisotropy}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let axis = loop {
        let v = Vector3::new(
            2.0 * rng.random::<f64>() - 1.0,
            2.0 * rng.random::<f64>() - 1.0,
            2.0 * rng.random::<f64>() - 1.0,
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            break v;
        }
    };
    let angle = (2.0 * rng.random::<f64>() - 1.0) * std::f64::consts::PI;
    let q = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).into_inner();
    // Log singular values l3 <= l2 <= l1 with l1 - l3 = ln(anisotropy).
    let span = (1.0 + rng.random::<f64>() * (max_anisotropy - 1.0)).ln();
    let f = rng.random::<f64>();
    let l3 = -span * (1.0 + f) / 3.0;
    let d = Matrix3::from_diagonal(&Vector3::new((l3 + span).exp(), (l3 + f * span).exp(), l3.exp()));
    let m = q * d * q.transpose();
    let m = m / m.determinant().cbrt();
    Ok(EquiAffine3 {
        m,
        t: Vector3::zeros(),
    })
}
