//! Command-line front end. Every command reads its inputs, runs one chain of
//! library operations and writes its outputs plus a `manifest.json` holding
//! the fully resolved command, so a run can be replayed exactly.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::describe::{DescribedFeature, RegionConfig};
use crate::error::{Error, Result};
use crate::features::{build_detector_stack, detect, DetectConfig, FeaturePoint};
use crate::image::{Field2D, Image2D, Mask};
use crate::interp::warp_image;
use crate::invariants::{self, field_h3, field_j3};
use crate::io::{self, VolumeDims};
use crate::register::{
    eval_registration, extract_features, match_features, register_pair, PipelineConfig, RansacConfig,
};
use crate::scalespace::{build_scale_space, FlowMode};
use crate::synth::{blob_field, BlobFieldConfig};
use crate::transform::{random_equiaffine, Affine2, EquiAffine2, TransformJson};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "equiaffine", version, about = "Equi-affine invariants, affine scale-space features and registration")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize, PartialEq)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Command {
    /// Generate a seeded synthetic blob-field image.
    Synth(SynthArgs),
    /// Warp an image by an equi-affine map about its center.
    Warp(WarpArgs),
    /// Compute H, J and detector fields (2D) or H3, J3 fields (3D volumes).
    Invariants(InvariantsArgs),
    /// Write the sampled levels of a scale-space.
    Scalespace(ScalespaceArgs),
    /// Detect space-scale feature points.
    Detect(DetectArgs),
    /// Describe and match features between two images.
    Match(MatchArgs),
    /// Register image B onto image A with RANSAC.
    Register(RegisterArgs),
    /// Compare an estimated transform with the ground truth.
    Eval(EvalArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct OutputArgs {
    /// Output directory (created if missing).
    #[arg(short = 'o', long = "output-dir")]
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct SynthArgs {
    #[command(flatten)]
    pub out: OutputArgs,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 512)]
    pub width: usize,
    #[arg(long, default_value_t = 512)]
    pub height: usize,
    #[arg(long, default_value_t = 160)]
    pub blobs: usize,
    #[arg(long = "blob-sigma-min", default_value_t = 6.0)]
    pub blob_sigma_min: f64,
    #[arg(long = "blob-sigma-max", default_value_t = 12.0)]
    pub blob_sigma_max: f64,
    /// Output file name inside the output directory (.png or .pgm).
    #[arg(long, default_value = "image.png")]
    pub name: String,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct WarpArgs {
    #[arg(short = 'i', long = "input")]
    pub input: PathBuf,
    #[command(flatten)]
    pub out: OutputArgs,
    /// Transform JSON, applied in coordinates centered on the image.
    #[arg(long, conflicts_with = "seed")]
    pub transform: Option<PathBuf>,
    /// Draw a random equi-affine map instead of reading one.
    #[arg(long, required_unless_present = "transform")]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 2.0)]
    pub anisotropy: f64,
    /// Largest net rotation, radians.
    #[arg(long, default_value_t = 0.15)]
    pub rotation: f64,
    /// Largest translation per axis, pixels.
    #[arg(long, default_value_t = 8.0)]
    pub translation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimensionality {
    #[value(name = "2d")]
    #[serde(rename = "2d")]
    TwoD,
    #[value(name = "3d")]
    #[serde(rename = "3d")]
    ThreeD,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct InvariantsArgs {
    #[arg(short = 'i', long = "input")]
    pub input: PathBuf,
    #[command(flatten)]
    pub out: OutputArgs,
    /// Gaussian pre-smoothing before differentiation (2D only).
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// 2d for images, 3d for raw volumes; inferred from the extension if absent.
    #[arg(long)]
    pub dims: Option<Dimensionality>,
    /// Also write binary previews marking |v| >= fraction * max|v|.
    #[arg(long = "threshold-preview")]
    pub threshold_preview: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct ScaleArgs {
    #[arg(long, value_enum, default_value_t = FlowMode::Affine)]
    pub mode: FlowMode,
    #[arg(long, default_value_t = 8)]
    pub levels: usize,
    #[arg(long = "t-max", default_value_t = 14.0)]
    pub t_max: f64,
    #[arg(long, default_value_t = 0.1)]
    pub dt: f64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct ScalespaceArgs {
    #[arg(short = 'i', long = "input")]
    pub input: PathBuf,
    #[command(flatten)]
    pub out: OutputArgs,
    #[command(flatten)]
    pub scale: ScaleArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct DetectKnobs {
    /// Pre-smoothing applied to each level before the detector.
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.05)]
    pub threshold: f64,
    #[arg(long = "corner-ratio", default_value_t = 0.1)]
    pub corner_ratio: f64,
    #[arg(long = "window-sigma", default_value_t = 2.0)]
    pub window_sigma: f64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct DetectArgs {
    #[arg(short = 'i', long = "input")]
    pub input: PathBuf,
    #[command(flatten)]
    pub out: OutputArgs,
    #[command(flatten)]
    pub scale: ScaleArgs,
    #[command(flatten)]
    pub detect: DetectKnobs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct MatchKnobs {
    #[arg(long, default_value_t = 0.8)]
    pub ratio: f64,
    #[arg(long = "patch-radius", default_value_t = 16.0)]
    pub patch_radius: f64,
    #[arg(long = "shape-sigma", default_value_t = 6.0)]
    pub shape_sigma: f64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct MatchArgs {
    /// Exactly two images, A then B.
    #[arg(short = 'i', long = "input", num_args = 1, required = true)]
    pub input: Vec<PathBuf>,
    #[command(flatten)]
    pub out: OutputArgs,
    #[command(flatten)]
    pub scale: ScaleArgs,
    #[command(flatten)]
    pub detect: DetectKnobs,
    #[command(flatten)]
    pub matching: MatchKnobs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct RegisterArgs {
    /// Exactly two images, A then B.
    #[arg(short = 'i', long = "input", num_args = 1, required = true)]
    pub input: Vec<PathBuf>,
    #[command(flatten)]
    pub out: OutputArgs,
    #[command(flatten)]
    pub scale: ScaleArgs,
    #[command(flatten)]
    pub detect: DetectKnobs,
    #[command(flatten)]
    pub matching: MatchKnobs,
    #[arg(long, default_value_t = 1000)]
    pub iters: usize,
    #[arg(long, default_value_t = 3.0)]
    pub tol: f64,
    #[arg(long)]
    pub seed: u64,
    /// Rescale the estimated matrix to unit determinant.
    #[arg(long)]
    pub unimodular: bool,
    /// Ground-truth transform; when given, accuracy metrics are reported.
    #[arg(long)]
    pub transform: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct EvalArgs {
    /// Estimated transform JSON.
    #[arg(long)]
    pub transform: PathBuf,
    /// Ground-truth equi-affine transform JSON.
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub width: usize,
    #[arg(long)]
    pub height: usize,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Overrides the recorded output directory.
    #[command(flatten)]
    pub out: OutputArgs,
}

/// Contents of `manifest.json`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config: Command,
}

impl Command {
    fn output_dir(&self) -> &Path {
        match self {
            Command::Synth(a) => &a.out.output_dir,
            Command::Warp(a) => &a.out.output_dir,
            Command::Invariants(a) => &a.out.output_dir,
            Command::Scalespace(a) => &a.out.output_dir,
            Command::Detect(a) => &a.out.output_dir,
            Command::Match(a) => &a.out.output_dir,
            Command::Register(a) => &a.out.output_dir,
            Command::Eval(a) => &a.out.output_dir,
            Command::Replay(a) => &a.out.output_dir,
        }
    }

    fn set_output_dir(&mut self, dir: PathBuf) {
        let slot = match self {
            Command::Synth(a) => &mut a.out.output_dir,
            Command::Warp(a) => &mut a.out.output_dir,
            Command::Invariants(a) => &mut a.out.output_dir,
            Command::Scalespace(a) => &mut a.out.output_dir,
            Command::Detect(a) => &mut a.out.output_dir,
            Command::Match(a) => &mut a.out.output_dir,
            Command::Register(a) => &mut a.out.output_dir,
            Command::Eval(a) => &mut a.out.output_dir,
            Command::Replay(a) => &mut a.out.output_dir,
        };
        *slot = dir;
    }
}

/// Runs a parsed command.
pub fn run(command: Command) -> Result<()> {
    if let Command::Replay(args) = &command {
        let manifest: Manifest = io::read_json(&args.manifest)?;
        let mut recorded = manifest.config;
        if matches!(recorded, Command::Replay(_)) {
            return Err(Error::Config("a manifest cannot record a replay".into()));
        }
        recorded.set_output_dir(args.out.output_dir.clone());
        return run(recorded);
    }
    let dir = command.output_dir().to_path_buf();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    match &command {
        Command::Synth(a) => cmd_synth(a)?,
        Command::Warp(a) => cmd_warp(a)?,
        Command::Invariants(a) => cmd_invariants(a)?,
        Command::Scalespace(a) => cmd_scalespace(a)?,
        Command::Detect(a) => cmd_detect(a)?,
        Command::Match(a) => cmd_match(a)?,
        Command::Register(a) => cmd_register(a)?,
        Command::Eval(a) => cmd_eval(a)?,
        Command::Replay(_) => unreachable!("handled above"),
    }
    io::write_json(
        &dir.join("manifest.json"),
        &Manifest {
            tool: "equiaffine".into(),
            version: VERSION.into(),
            config: command,
        },
    )
}

/// Parses `args` and runs; returns the process exit code. Errors are
/// reported on stderr as one JSON object.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => crate::error::ErrorClass::Config.exit_code(),
            };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let class = e.class();
            let report = serde_json::json!({
                "error": class.name(),
                "code": class.exit_code(),
                "message": e.to_string(),
            });
            eprintln!("{report}");
            class.exit_code()
        }
    }
}

fn pipeline_config(scale: &ScaleArgs, detect: &DetectKnobs, matching: Option<&MatchKnobs>) -> PipelineConfig {
    let mut cfg = PipelineConfig {
        presmooth_sigma: detect.sigma,
        mode: scale.mode,
        n_levels: scale.levels,
        t_max: scale.t_max,
        dt: scale.dt,
        detect: DetectConfig {
            threshold_rel: detect.threshold,
            min_corner_ratio: detect.corner_ratio,
            window_sigma: detect.window_sigma,
        },
        ..Default::default()
    };
    if let Some(m) = matching {
        cfg.ratio = m.ratio;
        cfg.region = RegionConfig {
            patch_radius: m.patch_radius,
            shape_sigma: m.shape_sigma,
        };
    }
    cfg
}

fn two_inputs(input: &[PathBuf]) -> Result<(Image2D, Image2D)> {
    if input.len() != 2 {
        return Err(Error::Config(format!(
            "expected exactly two --input images, got {}",
            input.len()
        )));
    }
    Ok((io::read_image(&input[0])?, io::read_image(&input[1])?))
}

fn image_center(img: &Image2D) -> [f64; 2] {
    [
        (img.width() - 1) as f64 / 2.0,
        (img.height() - 1) as f64 / 2.0,
    ]
}

fn mask_pgm(path: &Path, mask: &Mask) -> Result<()> {
    let data = mask.data().iter().map(|&v| if v { 255 } else { 0 }).collect();
    io::write_pgm8(path, mask.width(), mask.height(), data)
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let cfg = BlobFieldConfig {
        n_blobs: a.blobs,
        sigma_min: a.blob_sigma_min,
        sigma_max: a.blob_sigma_max,
        ..Default::default()
    };
    let img = blob_field(a.width, a.height, &cfg, a.seed)?;
    io::write_image(&a.out.output_dir.join(&a.name), &img)
}

/// Output name of a warped image: same extension as the input.
pub fn warped_name(input: &Path) -> String {
    let ext = input
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_else(|| "png".into());
    let ext = if ext == "pgm" || ext == "pnm" { "pgm" } else { "png" };
    format!("warped.{ext}")
}

fn cmd_warp(a: &WarpArgs) -> Result<()> {
    let img = io::read_image(&a.input)?;
    let local = match (&a.transform, a.seed) {
        (Some(path), _) => io::read_json::<EquiAffine2>(path)?,
        (None, Some(seed)) => random_equiaffine(seed, a.anisotropy, a.rotation, a.translation)?,
        (None, None) => return Err(Error::Config("warp needs --transform or --seed".into())),
    };
    let g = local.centered_at(image_center(&img));
    let (warped, mask) = warp_image(&img, &g);
    let dir = &a.out.output_dir;
    io::write_image(&dir.join(warped_name(&a.input)), &warped)?;
    mask_pgm(&dir.join("mask.pgm"), &mask)?;
    io::write_json(&dir.join("transform.json"), &g)
}

#[derive(Serialize)]
struct FieldSidecar {
    width: usize,
    height: usize,
    min: f64,
    max: f64,
}

fn dump_field2(dir: &Path, name: &str, field: &Field2D, preview: Option<f64>) -> Result<()> {
    io::write_raw_f32(&dir.join(format!("{name}.raw")), field.values())?;
    let range = io::write_field_pgm(&dir.join(format!("{name}.pgm")), field)?;
    io::write_json(
        &dir.join(format!("{name}.json")),
        &FieldSidecar {
            width: field.width(),
            height: field.height(),
            min: range.min,
            max: range.max,
        },
    )?;
    if let Some(th) = preview {
        io::write_threshold_preview(&dir.join(format!("{name}_preview.pgm")), field, th)?;
    }
    Ok(())
}

fn cmd_invariants(a: &InvariantsArgs) -> Result<()> {
    if let Some(th) = a.threshold_preview {
        if !(0.0..=1.0).contains(&th) {
            return Err(Error::Config("--threshold-preview must be in [0, 1]".into()));
        }
    }
    let dims = a.dims.unwrap_or_else(|| {
        match a.input.extension().and_then(|e| e.to_str()) {
            Some("raw") => Dimensionality::ThreeD,
            _ => Dimensionality::TwoD,
        }
    });
    let dir = &a.out.output_dir;
    match dims {
        Dimensionality::TwoD => {
            let img = io::read_image(&a.input)?;
            let set = invariants::invariant_fields(&img, a.sigma)?;
            dump_field2(dir, "h", &set.h, a.threshold_preview)?;
            dump_field2(dir, "j", &set.j, a.threshold_preview)?;
            dump_field2(dir, "detector", &set.detector, a.threshold_preview)?;
        }
        Dimensionality::ThreeD => {
            let vol = io::read_volume(&a.input)?;
            let (nx, ny, nz) = vol.dims();
            let vd = VolumeDims { nx, ny, nz };
            let h3 = field_h3(&vol);
            let (num, ratio) = field_j3(&vol);
            let with_nan = |f: &crate::image::Field3D| -> Vec<f64> {
                f.values()
                    .iter()
                    .zip(f.valid())
                    .map(|(&v, &ok)| if ok { v } else { f64::NAN })
                    .collect()
            };
            io::write_volume(&dir.join("h3.raw"), vd, &with_nan(&h3))?;
            io::write_volume(&dir.join("j3_numerator.raw"), vd, &with_nan(&num))?;
            io::write_volume(&dir.join("j3_ratio.raw"), vd, &with_nan(&ratio))?;
            for z in [nz / 4, nz / 2, (3 * nz) / 4] {
                let slice = vol.slice_z(z)?;
                io::write_image(&dir.join(format!("slice_z{z:03}.pgm")), &slice)?;
                for (name, field) in [("h3", h3.slice_z(z)), ("j3", ratio.slice_z(z))] {
                    let path = dir.join(format!("{name}_z{z:03}.pgm"));
                    match a.threshold_preview {
                        Some(th) => io::write_threshold_preview(&path, &field, th)?,
                        None => {
                            io::write_field_pgm(&path, &field)?;
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct ScalespaceManifest {
    times: Vec<f64>,
    mode: FlowMode,
}

fn cmd_scalespace(a: &ScalespaceArgs) -> Result<()> {
    let img = io::read_image(&a.input)?;
    let ss = build_scale_space(&img, a.scale.levels, a.scale.t_max, a.scale.mode, a.scale.dt)?;
    let dir = &a.out.output_dir;
    for (k, level) in ss.levels().iter().enumerate() {
        io::write_image(&dir.join(format!("level_{k:02}.pgm")), &level.image)?;
    }
    io::write_json(
        &dir.join("scalespace.json"),
        &ScalespaceManifest {
            times: ss.times(),
            mode: a.scale.mode,
        },
    )
}

fn cmd_detect(a: &DetectArgs) -> Result<()> {
    let img = io::read_image(&a.input)?;
    let cfg = pipeline_config(&a.scale, &a.detect, None);
    let ss = build_scale_space(&img, cfg.n_levels, cfg.t_max, cfg.mode, cfg.dt)?;
    let stack = build_detector_stack(&ss, cfg.presmooth_sigma)?;
    let points: Vec<FeaturePoint> = detect(&stack, &cfg.detect)?;
    io::write_json(&a.out.output_dir.join("features.json"), &points)
}

#[derive(Serialize)]
struct DescribedRecord {
    x: usize,
    y: usize,
    level: usize,
    t: f64,
    response: f64,
}

fn described_records(list: &[DescribedFeature]) -> Vec<DescribedRecord> {
    list.iter()
        .map(|f| DescribedRecord {
            x: f.point.x,
            y: f.point.y,
            level: f.point.level,
            t: f.point.t,
            response: f.point.response,
        })
        .collect()
}

fn cmd_match(a: &MatchArgs) -> Result<()> {
    let (img_a, img_b) = two_inputs(&a.input)?;
    let cfg = pipeline_config(&a.scale, &a.detect, Some(&a.matching));
    let fa = extract_features(&img_a, &cfg)?;
    let fb = extract_features(&img_b, &cfg)?;
    let matches = match_features(&fa, &fb, cfg.ratio)?;
    let dir = &a.out.output_dir;
    io::write_json(&dir.join("features_a.json"), &described_records(&fa.described))?;
    io::write_json(&dir.join("features_b.json"), &described_records(&fb.described))?;
    io::write_json(&dir.join("matches.json"), &matches)
}

#[derive(Serialize)]
struct InlierRecord {
    a: usize,
    b: usize,
    dist: f64,
    xa: f64,
    ya: f64,
    xb: f64,
    yb: f64,
}

#[derive(Serialize)]
struct RegisterMetrics {
    n_features_a: usize,
    n_features_b: usize,
    n_matches: usize,
    n_inliers: usize,
    rms_residual: f64,
    n_iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_corner_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_corner_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    det_deviation: Option<f64>,
}

fn cmd_register(a: &RegisterArgs) -> Result<()> {
    let (img_a, img_b) = two_inputs(&a.input)?;
    let mut cfg = pipeline_config(&a.scale, &a.detect, Some(&a.matching));
    cfg.ransac = RansacConfig {
        n_iter: a.iters,
        inlier_tol: a.tol,
        seed: a.seed,
        project_unimodular: a.unimodular,
    };
    let truth = a
        .transform
        .as_ref()
        .map(|p| io::read_json::<EquiAffine2>(p))
        .transpose()?;
    let reg = register_pair(&img_a, &img_b, &cfg)?;
    let dir = &a.out.output_dir;
    io::write_json(&dir.join("transform.json"), &reg.result.transform)?;
    let inliers: Vec<InlierRecord> = reg
        .result
        .inlier_indices
        .iter()
        .map(|&k| {
            let m = reg.matches[k];
            let pa = reg.features_a.described[m.index_a].point;
            let pb = reg.features_b.described[m.index_b].point;
            InlierRecord {
                a: m.index_a,
                b: m.index_b,
                dist: m.distance,
                xa: pa.x as f64,
                ya: pa.y as f64,
                xb: pb.x as f64,
                yb: pb.y as f64,
            }
        })
        .collect();
    io::write_json(&dir.join("inliers.json"), &inliers)?;
    let eval = truth.map(|g| eval_registration(&reg.result.transform, &g, img_a.width(), img_a.height()));
    io::write_json(
        &dir.join("metrics.json"),
        &RegisterMetrics {
            n_features_a: reg.features_a.described.len(),
            n_features_b: reg.features_b.described.len(),
            n_matches: reg.matches.len(),
            n_inliers: reg.result.inlier_indices.len(),
            rms_residual: reg.result.rms_residual,
            n_iterations: reg.result.n_iterations_used,
            mean_corner_error: eval.map(|m| m.mean_corner_error),
            max_corner_error: eval.map(|m| m.max_corner_error),
            det_deviation: eval.map(|m| m.det_deviation),
        },
    )?;
    io::write_rgb_png(&dir.join("overlay.png"), img_a.width(), img_a.height(), &reg.overlay)
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let est: Affine2 = io::read_json::<TransformJson>(&a.transform)?.try_into()?;
    let truth: EquiAffine2 = io::read_json(&a.truth)?;
    let metrics = eval_registration(&est, &truth, a.width, a.height);
    io::write_json(&a.out.output_dir.join("metrics.json"), &metrics)
}
