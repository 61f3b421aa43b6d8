//! Catmull-Rom interpolation and inverse-mapping warps.

use crate::error::{Error, Result};
use crate::image::{Image2D, Image3D, Mask};
use crate::par;
use crate::transform::{EquiAffine2, EquiAffine3};

/// Slack for preimages that land a rounding error outside the grid.
const DOMAIN_EPS: f64 = 1e-9;

#[inline]
fn catmull_rom_weights(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

/// Splits a coordinate in `[0, n-1]` into a base index and a fraction,
/// with the last sample folded into the final cell.
#[inline]
fn split(c: f64, n: usize) -> (usize, f64) {
    let i = c.floor() as usize;
    if i + 1 >= n {
        (n - 2, 1.0)
    } else {
        (i, c - i as f64)
    }
}

fn check_domain(x: f64, y: f64, w: usize, h: usize) -> Result<(f64, f64)> {
    let (max_x, max_y) = ((w - 1) as f64, (h - 1) as f64);
    let inside = |c: f64, m: f64| c >= -DOMAIN_EPS && c <= m + DOMAIN_EPS;
    if !(inside(x, max_x) && inside(y, max_y)) {
        return Err(Error::Domain { x, y, max_x, max_y });
    }
    Ok((x.clamp(0.0, max_x), y.clamp(0.0, max_y)))
}

/// Catmull-Rom bicubic sample at real coordinates `(x, y)`.
///
/// Cells whose 4x4 support would leave the grid fall back to bilinear
/// interpolation. Coordinates outside `[0, w-1] x [0, h-1]` are rejected.
pub fn sample_bicubic(img: &Image2D, x: f64, y: f64) -> Result<f64> {
    let (x, y) = check_domain(x, y, img.width(), img.height())?;
    Ok(bicubic_in_domain(img, x, y))
}

fn bicubic_in_domain(img: &Image2D, x: f64, y: f64) -> f64 {
    let (w, h) = (img.width(), img.height());
    let (ix, fx) = split(x, w);
    let (iy, fy) = split(y, h);
    if ix >= 1 && ix + 2 < w && iy >= 1 && iy + 2 < h {
        let wx = catmull_rom_weights(fx);
        let wy = catmull_rom_weights(fy);
        let mut acc = 0.0;
        for (j, wyj) in wy.iter().enumerate() {
            let row = iy + j - 1;
            let mut r = 0.0;
            for (i, wxi) in wx.iter().enumerate() {
                r += wxi * img.get(ix + i - 1, row);
            }
            acc += wyj * r;
        }
        acc
    } else {
        let top = (1.0 - fx) * img.get(ix, iy) + fx * img.get(ix + 1, iy);
        let bottom = (1.0 - fx) * img.get(ix, iy + 1) + fx * img.get(ix + 1, iy + 1);
        (1.0 - fy) * top + fy * bottom
    }
}

/// Bicubic sample with coordinates clamped into the grid first.
pub fn sample_bicubic_clamped(img: &Image2D, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (img.width() - 1) as f64);
    let y = y.clamp(0.0, (img.height() - 1) as f64);
    bicubic_in_domain(img, x, y)
}

/// Returns `(warped, mask)` with `warped(q) = img(g^-1 q)`.
///
/// Pixels whose preimage leaves the source domain are flagged invalid in the
/// mask; their intensity is taken from the nearest source border sample so
/// the image has no artificial step edges.
pub fn warp_image(img: &Image2D, g: &EquiAffine2) -> (Image2D, Mask) {
    let inv = g.invert();
    let (w, h) = (img.width(), img.height());
    let (max_x, max_y) = ((w - 1) as f64, (h - 1) as f64);
    let samples = par::map_grid(w, h, |x, y| {
        let [px, py] = inv.apply([x as f64, y as f64]);
        let inside = px >= -DOMAIN_EPS
            && px <= max_x + DOMAIN_EPS
            && py >= -DOMAIN_EPS
            && py <= max_y + DOMAIN_EPS;
        (sample_bicubic_clamped(img, px, py), inside)
    });
    let (data, valid): (Vec<f64>, Vec<bool>) = samples.into_iter().unzip();
    let out = Image2D::new(w, h, data).expect("bicubic samples of a finite image are finite");
    (out, Mask::new(w, h, valid))
}

/// Catmull-Rom tricubic sample, trilinear within one voxel of the border.
pub fn sample_tricubic(vol: &Image3D, x: f64, y: f64, z: f64) -> Result<f64> {
    let (nx, ny, nz) = vol.dims();
    let bounds = [(x, nx), (y, ny), (z, nz)];
    if bounds
        .iter()
        .any(|&(c, n)| !(c >= -DOMAIN_EPS && c <= (n - 1) as f64 + DOMAIN_EPS))
    {
        return Err(Error::Domain {
            x,
            y,
            max_x: (nx - 1) as f64,
            max_y: (ny - 1) as f64,
        });
    }
    Ok(tricubic_clamped(vol, x, y, z))
}

fn tricubic_clamped(vol: &Image3D, x: f64, y: f64, z: f64) -> f64 {
    let (nx, ny, nz) = vol.dims();
    let (ix, fx) = split(x.clamp(0.0, (nx - 1) as f64), nx);
    let (iy, fy) = split(y.clamp(0.0, (ny - 1) as f64), ny);
    let (iz, fz) = split(z.clamp(0.0, (nz - 1) as f64), nz);
    let cubic = |i: usize, n: usize| i >= 1 && i + 2 < n;
    if cubic(ix, nx) && cubic(iy, ny) && cubic(iz, nz) {
        let (wx, wy, wz) = (
            catmull_rom_weights(fx),
            catmull_rom_weights(fy),
            catmull_rom_weights(fz),
        );
        let mut acc = 0.0;
        for (k, wzk) in wz.iter().enumerate() {
            let mut plane = 0.0;
            for (j, wyj) in wy.iter().enumerate() {
                let mut row = 0.0;
                for (i, wxi) in wx.iter().enumerate() {
                    row += wxi * vol.get(ix + i - 1, iy + j - 1, iz + k - 1);
                }
                plane += wyj * row;
            }
            acc += wzk * plane;
        }
        acc
    } else {
        let lerp = |a: f64, b: f64, t: f64| (1.0 - t) * a + t * b;
        let edge = |j: usize, k: usize| lerp(vol.get(ix, iy + j, iz + k), vol.get(ix + 1, iy + j, iz + k), fx);
        let face = |k: usize| lerp(edge(0, k), edge(1, k), fy);
        lerp(face(0), face(1), fz)
    }
}

/// Volume analogue of [`warp_image`]: `warped(q) = vol(g^-1 q)`, with an
/// x-fastest validity mask.
pub fn warp_volume(vol: &Image3D, g: &EquiAffine3) -> (Image3D, Vec<bool>) {
    let inv = g.invert();
    let (nx, ny, nz) = vol.dims();
    let inside = |c: f64, n: usize| c >= -DOMAIN_EPS && c <= (n - 1) as f64 + DOMAIN_EPS;
    let samples = par::map_volume(nx, ny, nz, |x, y, z| {
        let [px, py, pz] = inv.apply([x as f64, y as f64, z as f64]);
        (
            tricubic_clamped(vol, px, py, pz),
            inside(px, nx) && inside(py, ny) && inside(pz, nz),
        )
    });
    let (data, valid): (Vec<f64>, Vec<bool>) = samples.into_iter().unzip();
    (
        Image3D::new(nx, ny, nz, data).expect("tricubic samples are finite"),
        valid,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_constants() {
        let img = Image2D::constant(8, 6, 0.37).unwrap();
        for &(x, y) in &[(0.0, 0.0), (3.3, 2.7), (6.9, 4.99), (7.0, 5.0), (0.4, 3.1)] {
            assert!((sample_bicubic(&img, x, y).unwrap() - 0.37).abs() < 1e-15);
        }
    }

    #[test]
    fn exact_on_linear() {
        let img = Image2D::from_fn(10, 10, |x, y| 2.0 * x + 3.0 * y).unwrap();
        assert!((sample_bicubic(&img, 2.5, 3.25).unwrap() - 14.75).abs() < 1e-12);
        // Bilinear fallback near the border is exact on linears too.
        assert!((sample_bicubic(&img, 0.25, 8.5).unwrap() - 26.0).abs() < 1e-12);
    }

    #[test]
    fn exact_on_quadratic_interior() {
        // Catmull-Rom reproduces polynomials up to degree two on uniform grids.
        let img = Image2D::from_fn(8, 8, |x, _| x * x).unwrap();
        assert!((sample_bicubic(&img, 2.5, 3.0).unwrap() - 6.25).abs() < 1e-12);
        let img = Image2D::from_fn(8, 8, |x, y| x * x - 0.5 * x * y + 2.0 * y * y).unwrap();
        for &(x, y) in &[(2.3, 3.7), (1.1, 4.9), (4.5, 2.25)] {
            let f = x * x - 0.5 * x * y + 2.0 * y * y;
            assert!((sample_bicubic(&img, x, y).unwrap() - f).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_out_of_domain() {
        let img = Image2D::constant(5, 5, 0.0).unwrap();
        assert!(matches!(
            sample_bicubic(&img, -0.5, 1.0),
            Err(Error::Domain { .. })
        ));
        assert!(sample_bicubic(&img, 2.0, 4.01).is_err());
        assert!(sample_bicubic(&img, 4.0, 4.0).is_ok());
    }

    #[test]
    fn identity_warp_is_exact() {
        let img = Image2D::from_fn(17, 11, |x, y| (0.3 * x).sin() * (0.2 * y).cos()).unwrap();
        let (out, mask) = warp_image(&img, &EquiAffine2::IDENTITY);
        assert_eq!(out, img);
        assert_eq!(mask.count(), 17 * 11);
    }

    #[test]
    fn translation_of_constant() {
        let img = Image2D::constant(12, 12, 0.8).unwrap();
        let (out, mask) = warp_image(&img, &EquiAffine2::translation(5.0, 0.0));
        assert!(out.data().iter().all(|&v| (v - 0.8).abs() < 1e-15));
        assert!(!mask.get(2, 5));
        assert!(mask.get(7, 5));
    }

    #[test]
    fn tricubic_exact_on_quadratic() {
        let vol = Image3D::from_fn(8, 8, 8, |x, y, z| x * x + y * z - z).unwrap();
        let (x, y, z) = (3.4, 2.6, 4.1);
        let v = sample_tricubic(&vol, x, y, z).unwrap();
        assert!((v - (x * x + y * z - z)).abs() < 1e-11);
    }
}
