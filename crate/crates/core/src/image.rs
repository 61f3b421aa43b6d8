//! Scalar grids: 2D images, 3D volumes, validity masks and derived fields.
//!
//! Pixel `(i, j)` sits at real coordinates `(i, j)`; the origin is the image
//! corner. Data are row-major for images and x-fastest for volumes.

use crate::error::{Error, Result};
use crate::par;

/// Grayscale image with finite intensities, nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image2D {
    pub const MIN_SIDE: usize = 3;

    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width < Self::MIN_SIDE || height < Self::MIN_SIDE {
            return Err(Error::Invariant(format!(
                "image must be at least 3x3, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::Invariant(format!(
                "data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invariant(format!(
                "non-finite intensity at pixel ({}, {})",
                i % width,
                i / width
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Skips the finiteness scan; used by time steppers that check for
    /// blow-up themselves and report it as an instability.
    pub(crate) fn new_unchecked_finite(width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            data,
        }
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    /// Samples `f(x, y)` at every pixel center.
    pub fn from_fn<F>(width: usize, height: usize, f: F) -> Result<Self>
    where
        F: Fn(f64, f64) -> f64 + Sync + Send,
    {
        let data = par::map_grid(width, height, |x, y| f(x as f64, y as f64));
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Replicate-border access for signed indices.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let xi = x.clamp(0, self.width as isize - 1) as usize;
        let yi = y.clamp(0, self.height as isize - 1) as usize;
        self.data[yi * self.width + xi]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Pointwise map, keeping dimensions.
    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Result<Self> {
        Self::new(self.width, self.height, self.data.iter().map(|&v| f(v)).collect())
    }
}

/// Per-pixel validity flags on a 2D grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), width * height, "mask size mismatch");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn all(width: usize, height: usize, value: bool) -> Self {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn and(&self, other: &Mask) -> Mask {
        assert_eq!((self.width, self.height), (other.width, other.height));
        Mask::new(
            self.width,
            self.height,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a && b)
                .collect(),
        )
    }

    /// Shrinks the valid set by `radius` pixels (square structuring element).
    /// Pixels closer than `radius` to the grid edge are also cleared.
    pub fn erode(&self, radius: usize) -> Mask {
        let (w, h) = (self.width, self.height);
        let r = radius as isize;
        let data = par::map_grid(w, h, |x, y| {
            let (x, y) = (x as isize, y as isize);
            if x < r || y < r || x >= w as isize - r || y >= h as isize - r {
                return false;
            }
            (-r..=r).all(|dy| {
                (-r..=r).all(|dx| self.data[((y + dy) as usize) * w + (x + dx) as usize])
            })
        });
        Mask::new(w, h, data)
    }
}

/// Scalar volume with finite values, x-fastest layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Image3D {
    nx: usize,
    ny: usize,
    nz: usize,
    data: Vec<f64>,
}

impl Image3D {
    pub fn new(nx: usize, ny: usize, nz: usize, data: Vec<f64>) -> Result<Self> {
        if nx < 3 || ny < 3 || nz < 3 {
            return Err(Error::Invariant(format!(
                "volume must be at least 3x3x3, got {nx}x{ny}x{nz}"
            )));
        }
        if data.len() != nx * ny * nz {
            return Err(Error::Invariant(format!(
                "data length {} does not match {nx}x{ny}x{nz}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invariant("non-finite voxel value".into()));
        }
        Ok(Self { nx, ny, nz, data })
    }

    pub fn from_fn<F>(nx: usize, ny: usize, nz: usize, f: F) -> Result<Self>
    where
        F: Fn(f64, f64, f64) -> f64 + Sync + Send,
    {
        let data = par::map_volume(nx, ny, nz, |x, y, z| f(x as f64, y as f64, z as f64));
        Self::new(nx, ny, nz, data)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.nx, self.ny, self.nz)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[(z * self.ny + y) * self.nx + x]
    }

    /// Extracts the z = `z` plane as a 2D image.
    pub fn slice_z(&self, z: usize) -> Result<Image2D> {
        let plane = self.nx * self.ny;
        Image2D::new(self.nx, self.ny, self.data[z * plane..(z + 1) * plane].to_vec())
    }
}

/// A scalar field aligned with a 2D image, with per-pixel validity.
/// Used for derivative estimates and invariant fields alike.
#[derive(Debug, Clone, PartialEq)]
pub struct Field2D {
    width: usize,
    height: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

/// Finite-difference derivative estimate on a 2D grid.
pub type DerivField = Field2D;
/// Differential invariant (or detector) field on a 2D grid.
pub type InvariantField = Field2D;

impl Field2D {
    pub fn new(width: usize, height: usize, values: Vec<f64>, valid: Vec<bool>) -> Self {
        assert_eq!(values.len(), width * height);
        assert_eq!(valid.len(), width * height);
        Self {
            width,
            height,
            values,
            valid,
        }
    }

    /// Builds a field from a per-pixel function evaluated on the interior
    /// (one-pixel border excluded). Border values are 0 and flagged invalid.
    pub fn from_interior<F>(width: usize, height: usize, f: F) -> Self
    where
        F: Fn(usize, usize) -> f64 + Sync + Send,
    {
        let values = par::map_grid(width, height, |x, y| {
            if is_interior(x, y, width, height) {
                f(x, y)
            } else {
                0.0
            }
        });
        let valid = border_mask(width, height);
        Self::new(width, height, values, valid)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn mask(&self) -> Mask {
        Mask::new(self.width, self.height, self.valid.clone())
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    /// Returns `Some(value)` when the pixel is valid.
    pub fn at(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.width + x;
        self.valid[i].then_some(self.values[i])
    }

    /// Iterates over valid values.
    pub fn valid_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values
            .iter()
            .zip(&self.valid)
            .filter_map(|(&v, &ok)| ok.then_some(v))
    }

    /// Min and max over valid pixels, `None` when nothing is valid.
    pub fn valid_range(&self) -> Option<(f64, f64)> {
        self.valid_values().fold(None, |acc, v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
    }

    /// Values as an image (invalid pixels carry their stored value, normally 0).
    pub fn to_image(&self) -> Result<Image2D> {
        Image2D::new(self.width, self.height, self.values.clone())
    }
}

/// Scalar field on a volume grid, with per-voxel validity.
#[derive(Debug, Clone, PartialEq)]
pub struct Field3D {
    nx: usize,
    ny: usize,
    nz: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl Field3D {
    pub fn new(nx: usize, ny: usize, nz: usize, values: Vec<f64>, valid: Vec<bool>) -> Self {
        assert_eq!(values.len(), nx * ny * nz);
        assert_eq!(valid.len(), nx * ny * nz);
        Self {
            nx,
            ny,
            nz,
            values,
            valid,
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.nx, self.ny, self.nz)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.values[(z * self.ny + y) * self.nx + x]
    }

    pub fn at(&self, x: usize, y: usize, z: usize) -> Option<f64> {
        let i = (z * self.ny + y) * self.nx + x;
        self.valid[i].then_some(self.values[i])
    }

    pub fn valid_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values
            .iter()
            .zip(&self.valid)
            .filter_map(|(&v, &ok)| ok.then_some(v))
    }

    pub fn slice_z(&self, z: usize) -> Field2D {
        let plane = self.nx * self.ny;
        Field2D::new(
            self.nx,
            self.ny,
            self.values[z * plane..(z + 1) * plane].to_vec(),
            self.valid[z * plane..(z + 1) * plane].to_vec(),
        )
    }
}

#[inline]
pub(crate) fn is_interior(x: usize, y: usize, width: usize, height: usize) -> bool {
    x >= 1 && y >= 1 && x + 1 < width && y + 1 < height
}

pub(crate) fn border_mask(width: usize, height: usize) -> Vec<bool> {
    par::map_grid(width, height, |x, y| is_interior(x, y, width, height))
}
