//! Central finite differences (unit spacing) on images and volumes.
//!
//! Stencils never reach outside the grid: the one-pixel (voxel) border ring
//! is flagged invalid instead of being filled with one-sided estimates.

use crate::error::{Error, Result};
use crate::image::{is_interior, DerivField, Field2D, Field3D, Image2D, Image3D};
use crate::par;

/// First and second derivatives at one pixel.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Jet2 {
    pub ux: f64,
    pub uy: f64,
    pub uxx: f64,
    pub uxy: f64,
    pub uyy: f64,
}

/// Gradient and Hessian at one voxel.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Jet3 {
    pub grad: [f64; 3],
    pub hess: [[f64; 3]; 3],
}

/// Central-difference jet at an interior pixel. Caller guarantees
/// `1 <= x <= w-2` and `1 <= y <= h-2`.
#[inline]
pub fn jet_at(img: &Image2D, x: usize, y: usize) -> Jet2 {
    let c = img.get(x, y);
    let (l, r) = (img.get(x - 1, y), img.get(x + 1, y));
    let (d, u) = (img.get(x, y - 1), img.get(x, y + 1));
    Jet2 {
        ux: 0.5 * (r - l),
        uy: 0.5 * (u - d),
        uxx: r - 2.0 * c + l,
        uyy: u - 2.0 * c + d,
        uxy: 0.25
            * (img.get(x + 1, y + 1) - img.get(x + 1, y - 1) - img.get(x - 1, y + 1)
                + img.get(x - 1, y - 1)),
    }
}

/// The 3x3 neighbourhood of `(x, y)` in row-major order (`dy` outer, `dx`
/// inner, both from -1 to 1), replicating border pixels.
#[inline]
pub fn neighborhood(img: &Image2D, x: usize, y: usize) -> [f64; 9] {
    let (w, h) = (img.width(), img.height());
    if x >= 1 && y >= 1 && x + 1 < w && y + 1 < h {
        let d = img.data();
        let (a, b, c) = ((y - 1) * w + x - 1, y * w + x - 1, (y + 1) * w + x - 1);
        return [
            d[a], d[a + 1], d[a + 2],
            d[b], d[b + 1], d[b + 2],
            d[c], d[c + 1], d[c + 2],
        ];
    }
    let (xi, yi) = (x as isize, y as isize);
    let mut out = [0.0; 9];
    for (k, v) in out.iter_mut().enumerate() {
        *v = img.get_clamped(xi + (k % 3) as isize - 1, yi + (k / 3) as isize - 1);
    }
    out
}

/// Central-difference jet of a 3x3 neighbourhood laid out as in [`neighborhood`].
#[inline]
pub fn jet_of_neighborhood(n: &[f64; 9]) -> Jet2 {
    let (c, l, r, d, u) = (n[4], n[3], n[5], n[1], n[7]);
    Jet2 {
        ux: 0.5 * (r - l),
        uy: 0.5 * (u - d),
        uxx: r - 2.0 * c + l,
        uyy: u - 2.0 * c + d,
        uxy: 0.25 * (n[8] - n[2] - n[6] + n[0]),
    }
}

/// Same stencils with replicate (Neumann) boundary handling, valid anywhere.
#[inline]
pub fn jet_at_clamped(img: &Image2D, x: usize, y: usize) -> Jet2 {
    jet_of_neighborhood(&neighborhood(img, x, y))
}

/// Central-difference gradient and Hessian at an interior voxel.
#[inline]
pub fn jet3_at(vol: &Image3D, x: usize, y: usize, z: usize) -> Jet3 {
    let at = |dx: isize, dy: isize, dz: isize| {
        vol.get(
            (x as isize + dx) as usize,
            (y as isize + dy) as usize,
            (z as isize + dz) as usize,
        )
    };
    let unit = |axis: usize, s: isize| -> (isize, isize, isize) {
        match axis {
            0 => (s, 0, 0),
            1 => (0, s, 0),
            _ => (0, 0, s),
        }
    };
    let c = at(0, 0, 0);
    let mut jet = Jet3::default();
    for a in 0..3 {
        let (px, py, pz) = unit(a, 1);
        let (mx, my, mz) = unit(a, -1);
        let (p, m) = (at(px, py, pz), at(mx, my, mz));
        jet.grad[a] = 0.5 * (p - m);
        jet.hess[a][a] = p - 2.0 * c + m;
        for b in (a + 1)..3 {
            let (ax, ay, az) = unit(a, 1);
            let (bx, by, bz) = unit(b, 1);
            let v = 0.25
                * (at(ax + bx, ay + by, az + bz) - at(ax - bx, ay - by, az - bz)
                    - at(-ax + bx, -ay + by, -az + bz)
                    + at(-ax - bx, -ay - by, -az - bz));
            jet.hess[a][b] = v;
            jet.hess[b][a] = v;
        }
    }
    jet
}

#[inline]
pub(crate) fn is_interior3(x: usize, y: usize, z: usize, dims: (usize, usize, usize)) -> bool {
    x >= 1 && y >= 1 && z >= 1 && x + 1 < dims.0 && y + 1 < dims.1 && z + 1 < dims.2
}

/// Evaluates `f` on the jet of every interior pixel.
pub fn map_jets<F>(img: &Image2D, f: F) -> Field2D
where
    F: Fn(&Jet2) -> f64 + Sync + Send,
{
    Field2D::from_interior(img.width(), img.height(), |x, y| f(&jet_at(img, x, y)))
}

/// Evaluates `f` on the jet of every interior voxel; the border is invalid.
pub fn map_jets3<F>(vol: &Image3D, f: F) -> Field3D
where
    F: Fn(&Jet3) -> f64 + Sync + Send,
{
    let dims = vol.dims();
    let (nx, ny, nz) = dims;
    let values = par::map_volume(nx, ny, nz, |x, y, z| {
        if is_interior3(x, y, z, dims) {
            f(&jet3_at(vol, x, y, z))
        } else {
            0.0
        }
    });
    let valid = par::map_volume(nx, ny, nz, |x, y, z| is_interior3(x, y, z, dims));
    Field3D::new(nx, ny, nz, values, valid)
}

pub fn dx(img: &Image2D) -> DerivField {
    map_jets(img, |j| j.ux)
}

pub fn dy(img: &Image2D) -> DerivField {
    map_jets(img, |j| j.uy)
}

pub fn dxx(img: &Image2D) -> DerivField {
    map_jets(img, |j| j.uxx)
}

pub fn dyy(img: &Image2D) -> DerivField {
    map_jets(img, |j| j.uyy)
}

pub fn dxy(img: &Image2D) -> DerivField {
    map_jets(img, |j| j.uxy)
}

/// `(u_x, u_y)` sharing the border-invalid mask.
pub fn gradient2d(img: &Image2D) -> (DerivField, DerivField) {
    (dx(img), dy(img))
}

/// `(u_xx, u_xy, u_yy)` sharing the border-invalid mask.
pub fn hessian2d(img: &Image2D) -> (DerivField, DerivField, DerivField) {
    (dxx(img), dxy(img), dyy(img))
}

/// Partial derivative along `axis` (0 = x, 1 = y, 2 = z) of a volume.
pub fn partial3(vol: &Image3D, axis: usize) -> Field3D {
    map_jets3(vol, move |j| j.grad[axis])
}

/// Second partial `d^2 u / d(axis_a) d(axis_b)` of a volume.
pub fn second_partial3(vol: &Image3D, a: usize, b: usize) -> Field3D {
    map_jets3(vol, move |j| j.hess[a][b])
}

/// `[u_x, u_y, u_z]`.
pub fn gradient3d(vol: &Image3D) -> [Field3D; 3] {
    [partial3(vol, 0), partial3(vol, 1), partial3(vol, 2)]
}

/// Upper triangle of the Hessian: `[u_xx, u_xy, u_xz, u_yy, u_yz, u_zz]`.
pub fn hessian3d(vol: &Image3D) -> [Field3D; 6] {
    [
        second_partial3(vol, 0, 0),
        second_partial3(vol, 0, 1),
        second_partial3(vol, 0, 2),
        second_partial3(vol, 1, 1),
        second_partial3(vol, 1, 2),
        second_partial3(vol, 2, 2),
    ]
}

/// Normalized 1D Gaussian kernel truncated at `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    let k = 0.5 / (sigma * sigma);
    let raw: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-k * d * d).exp()
        })
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// Separable Gaussian blur with replicate borders; `sigma = 0` is the identity.
pub fn gaussian_smooth(img: &Image2D, sigma: f64) -> Result<Image2D> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Config(format!("sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as isize;
    let (w, h) = (img.width(), img.height());
    let horizontal = Image2D::new(
        w,
        h,
        par::map_grid(w, h, |x, y| {
            kernel
                .iter()
                .enumerate()
                .map(|(i, k)| k * img.get_clamped(x as isize + i as isize - r, y as isize))
                .sum()
        }),
    )?;
    Image2D::new(
        w,
        h,
        par::map_grid(w, h, |x, y| {
            kernel
                .iter()
                .enumerate()
                .map(|(i, k)| k * horizontal.get_clamped(x as isize, y as isize + i as isize - r))
                .sum()
        }),
    )
}

/// True when `(x, y)` has a full 3x3 neighbourhood.
pub fn has_stencil(img: &Image2D, x: usize, y: usize) -> bool {
    is_interior(x, y, img.width(), img.height())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_field(f: &Field2D, expect: impl Fn(usize, usize) -> f64) {
        for y in 0..f.height() {
            for x in 0..f.width() {
                match f.at(x, y) {
                    Some(v) => {
                        let e = expect(x, y);
                        assert!((v - e).abs() <= 1e-9 * e.abs().max(1.0), "({x},{y}): {v} vs {e}");
                    }
                    None => assert!(!is_interior(x, y, f.width(), f.height())),
                }
            }
        }
    }

    #[test]
    fn constant_has_zero_derivatives() {
        let img = Image2D::constant(6, 5, 0.4).unwrap();
        for f in [dx(&img), dy(&img), dxx(&img), dxy(&img), dyy(&img)] {
            assert!(f.valid_values().all(|v| v == 0.0));
            assert_eq!(f.valid_values().count(), 4 * 3);
        }
    }

    #[test]
    fn exact_on_linear() {
        let img = Image2D::from_fn(9, 7, |x, y| 3.0 * x + 2.0 * y).unwrap();
        assert_field(&dx(&img), |_, _| 3.0);
        assert_field(&dy(&img), |_, _| 2.0);
        for f in [dxx(&img), dxy(&img), dyy(&img)] {
            assert_field(&f, |_, _| 0.0);
        }
    }

    #[test]
    fn exact_on_quadratics() {
        let sq = Image2D::from_fn(9, 7, |x, _| x * x).unwrap();
        assert_field(&dx(&sq), |x, _| 2.0 * x as f64);
        assert_field(&dxx(&sq), |_, _| 2.0);
        assert_field(&dyy(&sq), |_, _| 0.0);
        assert_field(&dxy(&sq), |_, _| 0.0);
        let xy = Image2D::from_fn(9, 7, |x, y| x * y).unwrap();
        assert_field(&dxy(&xy), |_, _| 1.0);
        let bowl = Image2D::from_fn(9, 7, |x, y| x * x + y * y).unwrap();
        let (hxx, hxy, hyy) = hessian2d(&bowl);
        assert_field(&hxx, |_, _| 2.0);
        assert_field(&hxy, |_, _| 0.0);
        assert_field(&hyy, |_, _| 2.0);
    }

    #[test]
    fn hessian3d_of_sphere_bowl() {
        let vol = Image3D::from_fn(6, 5, 7, |x, y, z| x * x + y * y + z * z).unwrap();
        let h = hessian3d(&vol);
        let expect = [2.0, 0.0, 0.0, 2.0, 0.0, 2.0];
        for (f, e) in h.iter().zip(expect) {
            assert!(f.valid_values().all(|v| (v - e).abs() < 1e-12));
        }
        let g = gradient3d(&vol);
        assert_eq!(g[2].at(2, 2, 3), Some(6.0));
        assert_eq!(g[0].at(0, 2, 3), None);
    }

    #[test]
    fn smoothing_identity_and_constants() {
        let img = Image2D::from_fn(11, 9, |x, y| (x * 0.7).sin() + y).unwrap();
        assert_eq!(gaussian_smooth(&img, 0.0).unwrap(), img);
        let c = Image2D::constant(11, 9, 0.25).unwrap();
        let s = gaussian_smooth(&c, 2.3).unwrap();
        assert!(s.data().iter().all(|v| (v - 0.25).abs() < 1e-15));
        assert!(gaussian_smooth(&c, -1.0).is_err());
    }

    #[test]
    fn impulse_response_matches_kernel() {
        let mut data = vec![0.0; 21 * 21];
        data[10 * 21 + 10] = 1.0;
        let img = Image2D::new(21, 21, data).unwrap();
        let s = gaussian_smooth(&img, 1.0).unwrap();
        // Oracle: continuous normalized 2D Gaussian at the origin.
        let expect = 1.0 / (2.0 * std::f64::consts::PI);
        assert!((s.get(10, 10) - expect).abs() / expect < 0.02);
    }

    #[test]
    fn second_order_convergence() {
        // f = sin(x/10) sin(y/10) at spacing h: sample f(h i, h j) and rescale.
        let max_err = |h: f64| {
            let n = (60.0 / h) as usize;
            let img = Image2D::from_fn(n, n, |x, y| (h * x / 10.0).sin() * (h * y / 10.0).sin()).unwrap();
            let d = dxx(&img);
            let mut err: f64 = 0.0;
            for y in 1..n - 1 {
                for x in 1..n - 1 {
                    let (px, py) = (h * x as f64, h * y as f64);
                    let exact = -(px / 10.0).sin() * (py / 10.0).sin() / 100.0;
                    err = err.max((d.get(x, y) / (h * h) - exact).abs());
                }
            }
            err
        };
        let ratio = max_err(1.0) / max_err(0.5);
        assert!(ratio >= 3.5, "convergence ratio {ratio}");
    }
}
