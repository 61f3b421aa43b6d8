//! PDE scale-spaces: the affine-invariant geometric heat equation
//! `u_t = (u_x^2 u_yy - 2 u_x u_y u_xy + u_y^2 u_xx)^(1/3)` and the linear
//! heat equation `u_t = Laplacian(u)` as a baseline.
//!
//! Both use explicit Euler steps with replicate (Neumann) boundaries. The
//! affine update is limited to the previous 3x3 neighbourhood range, which
//! makes the discrete scheme obey the maximum principle exactly.

use serde::{Deserialize, Serialize};

use crate::diffops;
use crate::error::{Error, Result};
use crate::image::{Image2D, InvariantField};
use crate::invariants::j_of;
use crate::par;

/// Largest stable step of the explicit 5-point linear scheme.
pub const LINEAR_DT_MAX: f64 = 0.25;

/// Time stepping and sampling for an evolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    pub dt: f64,
    /// Output times; must start at 0 and increase strictly.
    pub t_samples: Vec<f64>,
    /// Gradient floor used by [`curvature_field`].
    pub eps_g: f64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            t_samples: vec![0.0],
            eps_g: 1e-8,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.eps_g > 0.0) {
            return Err(Error::Config("eps_g must be positive".into()));
        }
        match self.t_samples.first() {
            Some(&t0) if t0 == 0.0 => {}
            _ => return Err(Error::Config("t_samples must start at 0".into())),
        }
        if self
            .t_samples
            .windows(2)
            .any(|w| !(w[1] > w[0]) || !w[1].is_finite())
        {
            return Err(Error::Config("t_samples must be strictly increasing".into()));
        }
        Ok(())
    }
}

/// One sampled level of a scale-space.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleLevel {
    pub t: f64,
    pub image: Image2D,
}

/// Ordered family of evolved images; level 0 is the input at `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleSpace2D {
    levels: Vec<ScaleLevel>,
}

impl ScaleSpace2D {
    pub fn new(levels: Vec<ScaleLevel>) -> Result<Self> {
        let first = levels
            .first()
            .ok_or_else(|| Error::Invariant("scale-space needs at least one level".into()))?;
        if first.t != 0.0 {
            return Err(Error::Invariant("scale-space must start at t = 0".into()));
        }
        let dims = (first.image.width(), first.image.height());
        for w in levels.windows(2) {
            if !(w[1].t > w[0].t) {
                return Err(Error::Invariant("scale-space times must increase".into()));
            }
        }
        if levels
            .iter()
            .any(|l| (l.image.width(), l.image.height()) != dims)
        {
            return Err(Error::Invariant("scale-space levels differ in size".into()));
        }
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[ScaleLevel] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.t).collect()
    }
}

/// Which PDE generates the scale-space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FlowMode {
    Affine,
    Linear,
}

impl FlowMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FlowMode::Affine => "affine",
            FlowMode::Linear => "linear",
        }
    }
}

/// Level-set curvature `div(grad u / |grad u|)` with a gradient floor:
/// `(u_x^2 u_yy - 2 u_x u_y u_xy + u_y^2 u_xx) / (u_x^2 + u_y^2 + eps_g)^(3/2)`.
pub fn curvature_field(img: &Image2D, eps_g: f64) -> InvariantField {
    diffops::map_jets(img, |j| {
        let g2 = j.ux * j.ux + j.uy * j.uy + eps_g;
        j_of(j) / (g2 * g2.sqrt())
    })
}

fn affine_step(u: &Image2D, dt: f64) -> Image2D {
    let (w, h) = (u.width(), u.height());
    let data = par::map_grid(w, h, |x, y| {
        let n = diffops::neighborhood(u, x, y);
        let next = n[4] + dt * j_of(&diffops::jet_of_neighborhood(&n)).cbrt();
        let (lo, hi) = n
            .iter()
            .fold((n[4], n[4]), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        // NaN passes through clamp untouched and is caught by the caller.
        if next.is_nan() {
            next
        } else {
            next.clamp(lo, hi)
        }
    });
    Image2D::new_unchecked_finite(w, h, data)
}

fn linear_step(u: &Image2D, dt: f64) -> Image2D {
    let (w, h) = (u.width(), u.height());
    let data = par::map_grid(w, h, |x, y| {
        let n = diffops::neighborhood(u, x, y);
        n[4] + dt * (n[1] + n[3] + n[5] + n[7] - 4.0 * n[4])
    });
    Image2D::new_unchecked_finite(w, h, data)
}

fn evolve<S>(img: &Image2D, cfg: &EvolutionConfig, step: S) -> Result<ScaleSpace2D>
where
    S: Fn(&Image2D, f64) -> Image2D,
{
    cfg.validate()?;
    let mut levels = vec![ScaleLevel {
        t: 0.0,
        image: img.clone(),
    }];
    let mut u = img.clone();
    let mut t = 0.0;
    let mut n_steps = 0usize;
    for &target in &cfg.t_samples[1..] {
        while t < target {
            let h = cfg.dt.min(target - t);
            // Absorb a float sliver rather than taking a near-zero step.
            let h = if target - (t + h) < 1e-12 * cfg.dt { target - t } else { h };
            u = step(&u, h);
            n_steps += 1;
            if u.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericalInstability {
                    step: n_steps,
                    dt: cfg.dt,
                    message: format!("non-finite intensity at t = {}", t + h),
                });
            }
            t += h;
            if (t - target).abs() < 1e-12 * cfg.dt {
                t = target;
            }
        }
        levels.push(ScaleLevel {
            t: target,
            image: u.clone(),
        });
    }
    ScaleSpace2D::new(levels)
}

/// Explicit Euler integration of the affine-invariant geometric heat
/// equation, using a signed real cube root.
pub fn evolve_affine_heat(img: &Image2D, cfg: &EvolutionConfig) -> Result<ScaleSpace2D> {
    evolve(img, cfg, affine_step)
}

/// Explicit Euler integration of the linear heat equation; `dt <= 0.25`.
pub fn evolve_linear_heat(img: &Image2D, cfg: &EvolutionConfig) -> Result<ScaleSpace2D> {
    if cfg.dt > LINEAR_DT_MAX {
        return Err(Error::Config(format!(
            "linear heat step dt = {} exceeds stability limit {LINEAR_DT_MAX}",
            cfg.dt
        )));
    }
    evolve(img, cfg, linear_step)
}

/// Uniform time schedule `t_k = k t_max / (n_levels - 1)`.
pub fn uniform_times(n_levels: usize, t_max: f64) -> Result<Vec<f64>> {
    if !(2..=16).contains(&n_levels) {
        return Err(Error::Config(format!(
            "n_levels must be in [2, 16], got {n_levels}"
        )));
    }
    if !(t_max > 0.0) || !t_max.is_finite() {
        return Err(Error::Config(format!("t_max must be positive, got {t_max}")));
    }
    let step = t_max / (n_levels - 1) as f64;
    Ok((0..n_levels).map(|k| k as f64 * step).collect())
}

/// Scale-space with `n_levels` uniformly spaced samples on `[0, t_max]`.
pub fn build_scale_space(
    img: &Image2D,
    n_levels: usize,
    t_max: f64,
    mode: FlowMode,
    dt: f64,
) -> Result<ScaleSpace2D> {
    let cfg = EvolutionConfig {
        dt,
        t_samples: uniform_times(n_levels, t_max)?,
        ..Default::default()
    };
    match mode {
        FlowMode::Affine => evolve_affine_heat(img, &cfg),
        FlowMode::Linear => evolve_linear_heat(img, &cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    fn cfg(dt: f64, times: &[f64]) -> EvolutionConfig {
        EvolutionConfig {
            dt,
            t_samples: times.to_vec(),
            ..Default::default()
        }
    }

    #[test]
    fn curvature_of_circles() {
        // Bowl centered at (16, 16); (26, 16) lies on the level circle of radius 10.
        let img = Image2D::from_fn(40, 32, |x, y| (x - 16.0).powi(2) + (y - 16.0).powi(2)).unwrap();
        let k = curvature_field(&img, 1e-12);
        let v = k.at(26, 16).unwrap();
        assert!((v - 0.1).abs() / 0.1 < 0.01, "curvature {v}");
        let lin = Image2D::from_fn(8, 8, |x, y| x - 2.0 * y).unwrap();
        assert!(curvature_field(&lin, 1e-8).valid_values().all(|v| v == 0.0));
        let flat = Image2D::constant(8, 8, 0.3).unwrap();
        assert!(curvature_field(&flat, 1e-8).valid_values().all(|v| v == 0.0));
    }

    #[test]
    fn config_validation() {
        assert!(cfg(0.0, &[0.0]).validate().is_err());
        assert!(cfg(0.1, &[1.0]).validate().is_err());
        assert!(cfg(0.1, &[0.0, 1.0, 1.0]).validate().is_err());
        let img = Image2D::constant(5, 5, 0.0).unwrap();
        assert!(evolve_linear_heat(&img, &cfg(0.3, &[0.0, 1.0])).is_err());
    }

    #[test]
    fn constants_are_fixed_points() {
        let img = Image2D::constant(16, 12, 0.42).unwrap();
        for ss in [
            evolve_affine_heat(&img, &cfg(0.1, &[0.0, 1.0, 3.0])).unwrap(),
            evolve_linear_heat(&img, &cfg(0.25, &[0.0, 1.0, 3.0])).unwrap(),
        ] {
            assert_eq!(ss.len(), 3);
            assert!(ss.levels().iter().all(|l| l.image == img));
        }
    }

    #[test]
    fn single_sample_returns_input() {
        let img = synth::gaussian_blob(12, 12, [6.0, 6.0], 2.0, 0.1, 0.5).unwrap();
        let ss = evolve_affine_heat(&img, &cfg(0.1, &[0.0])).unwrap();
        assert_eq!(ss.len(), 1);
        assert_eq!(ss.levels()[0].image, img);
    }

    #[test]
    fn disc_shrinks_within_range() {
        let disc = Image2D::from_fn(48, 48, |x, y| {
            let r = ((x - 23.5).powi(2) + (y - 23.5).powi(2)).sqrt();
            if r < 10.0 { 1.0 } else { 0.0 }
        })
        .unwrap();
        let disc = diffops::gaussian_smooth(&disc, 1.0).unwrap();
        let (lo, hi) = disc.min_max();
        let ss = evolve_affine_heat(&disc, &cfg(0.1, &[0.0, 4.0])).unwrap();
        let out = &ss.levels()[1].image;
        let (lo2, hi2) = out.min_max();
        assert!(lo2 >= lo - 1e-6 && hi2 <= hi + 1e-6);
        // Area above the half level shrinks.
        let area = |im: &Image2D| im.data().iter().filter(|&&v| v > 0.5).count();
        assert!(area(out) < area(&disc));
    }

    #[test]
    fn linear_conserves_mean() {
        let img = synth::gaussian_blob(20, 16, [4.0, 5.0], 2.0, 0.2, 0.7).unwrap();
        let ss = evolve_linear_heat(&img, &cfg(0.25, &[0.0, 3.0, 7.5])).unwrap();
        for l in ss.levels() {
            assert!((l.image.mean() - img.mean()).abs() < 1e-9);
        }
    }

    #[test]
    fn schedule() {
        assert_eq!(
            uniform_times(8, 14.0).unwrap(),
            vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0]
        );
        assert!(uniform_times(2, 0.0).is_err());
        assert!(uniform_times(1, 5.0).is_err());
        assert!(uniform_times(17, 5.0).is_err());
    }

    #[test]
    fn partial_final_step_lands_on_sample() {
        let img = synth::gaussian_blob(12, 12, [6.0, 6.0], 2.0, 0.1, 0.5).unwrap();
        let ss = evolve_linear_heat(&img, &cfg(0.25, &[0.0, 0.6])).unwrap();
        assert_eq!(ss.times(), vec![0.0, 0.6]);
    }
}
