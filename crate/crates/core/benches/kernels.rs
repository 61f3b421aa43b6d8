//! Kernel benchmarks. With the `parallel` feature every kernel is timed on a
//! one-thread rayon pool and on the default pool; build with
//! `--no-default-features` to time the plain sequential loops.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use equiaffine::features::{build_detector_stack, detect, DetectConfig};
use equiaffine::invariants::invariant_fields;
use equiaffine::register::{ransac_affine_points, RansacConfig};
use equiaffine::scalespace::{build_scale_space, FlowMode};
use equiaffine::synth::{blob_field, BlobFieldConfig};
use equiaffine::transform::random_equiaffine;
use equiaffine::Image2D;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn image(n: usize) -> Image2D {
    let cfg = BlobFieldConfig {
        n_blobs: n * n / 1600,
        ..Default::default()
    };
    blob_field(n, n, &cfg, 1).unwrap()
}

fn correspondences() -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g = random_equiaffine(2, 2.0, 1.0, 10.0).unwrap();
    let mut src = Vec::new();
    let mut dst = Vec::new();
    for k in 0..200 {
        let p = [rng.random::<f64>() * 512.0, rng.random::<f64>() * 512.0];
        src.push(p);
        dst.push(if k % 2 == 0 {
            g.apply(p)
        } else {
            [rng.random::<f64>() * 512.0, rng.random::<f64>() * 512.0]
        });
    }
    (src, dst)
}

/// One-thread pool and the default pool, labelled by thread count.
#[cfg(feature = "parallel")]
fn backends() -> Vec<(String, rayon::ThreadPool)> {
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let pool = rayon::ThreadPoolBuilder::new().build().unwrap();
    let threads = pool.current_num_threads();
    vec![
        ("rayon-single".to_string(), single),
        (format!("rayon-pool-{threads}"), pool),
    ]
}

#[cfg(feature = "parallel")]
fn on_backends<F: Fn() + Sync + Send>(c: &mut Criterion, group: &str, size: usize, f: F) {
    let mut g = c.benchmark_group(group);
    g.sample_size(10);
    for (label, pool) in backends() {
        g.bench_with_input(BenchmarkId::new(label, size), &size, |b, _| b.iter(|| pool.install(&f)));
    }
    g.finish();
}

#[cfg(not(feature = "parallel"))]
fn on_backends<F: Fn()>(c: &mut Criterion, group: &str, size: usize, f: F) {
    let mut g = c.benchmark_group(group);
    g.sample_size(10);
    g.bench_with_input(BenchmarkId::new("sequential", size), &size, |b, _| b.iter(&f));
    g.finish();
}

fn kernels(c: &mut Criterion) {
    for n in [128, 256] {
        let img = image(n);
        on_backends(c, "affine_heat_t1", n, || {
            build_scale_space(&img, 2, 1.0, FlowMode::Affine, 0.1).unwrap();
        });
        on_backends(c, "invariant_fields", n, || {
            invariant_fields(&img, 1.0).unwrap();
        });
        let ss = build_scale_space(&img, 4, 6.0, FlowMode::Affine, 0.1).unwrap();
        on_backends(c, "detect", n, || {
            detect(&build_detector_stack(&ss, 1.0).unwrap(), &DetectConfig::default()).unwrap();
        });
    }
    let (src, dst) = correspondences();
    let cfg = RansacConfig {
        n_iter: 1000,
        inlier_tol: 3.0,
        seed: 7,
        project_unimodular: false,
    };
    on_backends(c, "ransac_200", 200, || {
        ransac_affine_points(&src, &dst, &cfg).unwrap();
    });
}

criterion_group!(benches, kernels);
criterion_main!(benches);
