//! Helpers shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

use equiaffine::image::{Field2D, Image2D};
use equiaffine::EquiAffine2;

/// Empirical quantile (nearest rank on the sorted sample).
pub fn quantile(values: &mut [f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of an empty sample");
    values.sort_by(f64::total_cmp);
    values[((values.len() - 1) as f64 * q).round() as usize]
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    let d = a.abs().max(b.abs()).max(floor);
    if d == 0.0 {
        0.0
    } else {
        (a - b).abs() / d
    }
}

pub fn rms(values: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        s += v * v;
        n += 1;
    }
    (s / n.max(1) as f64).sqrt()
}

/// Field as an image, invalid cells set to zero.
pub fn field_image(f: &Field2D) -> Image2D {
    let data = f
        .values()
        .iter()
        .zip(f.valid())
        .map(|(&v, &ok)| if ok { v } else { 0.0 })
        .collect();
    Image2D::new(f.width(), f.height(), data).unwrap()
}

/// Equi-affine stretch with singular-value ratio exactly `anisotropy` along a
/// seeded random axis, about the origin.
pub fn stretch(seed: u64, anisotropy: f64) -> EquiAffine2 {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let theta = rng.random::<f64>() * std::f64::consts::PI;
    let (c, s) = (theta.cos(), theta.sin());
    let k = anisotropy.sqrt();
    let (a, b) = (k, 1.0 / k);
    let m = [
        [a * c * c + b * s * s, (a - b) * c * s],
        [(a - b) * c * s, a * s * s + b * c * c],
    ];
    let d = (m[0][0] * m[1][1] - m[0][1] * m[1][0]).sqrt();
    EquiAffine2::new([[m[0][0] / d, m[0][1] / d], [m[1][0] / d, m[1][1] / d]], [0.0, 0.0]).unwrap()
}

pub fn center(w: usize, h: usize) -> [f64; 2] {
    [(w - 1) as f64 / 2.0, (h - 1) as f64 / 2.0]
}

/// Path of the compiled command-line binary.
pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_equiaffine"))
}

/// Runs the binary; returns `(exit code, stderr)`.
pub fn run_cli(args: &[&str]) -> (i32, String) {
    let out = Command::new(bin()).args(args).output().expect("spawn equiaffine");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

/// Runs the binary and panics with its stderr on failure.
pub fn run_ok(args: &[&str]) {
    let (code, err) = run_cli(args);
    assert_eq!(code, 0, "equiaffine {args:?} failed: {err}");
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Sorted `(relative path, bytes)` of every file under `dir`.
pub fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
