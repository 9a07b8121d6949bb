use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use voxprior_core::autodiff::{backward, conv3d, conv_transpose3d, Tensor};
use voxprior_core::nets::{CompletionConfig, CompletionNet};
use voxprior_core::render::{camera_from_angles, render_view};
use voxprior_core::synth::{generate_shape, Family, ShapeSpec};
use voxprior_core::voxel::{chamfer_distance, sample_isosurface_points};

fn ramp(n: usize, shape: &[usize]) -> Tensor {
    Tensor::new((0..n).map(|i| ((i * 7919) % 97) as f64 / 97.0 - 0.5).collect(), shape).unwrap()
}

fn convolutions(c: &mut Criterion) {
    let x = ramp(4 * 8 * 4096, &[4, 8, 16, 16, 16]);
    let w = ramp(16 * 8 * 64, &[16, 8, 4, 4, 4]);
    c.bench_function("conv3d 16^3 8->16 k4 s2", |b| {
        b.iter(|| conv3d(black_box(&x), &w, None, 2, 1).unwrap())
    });
    let x = ramp(4 * 16 * 512, &[4, 16, 8, 8, 8]);
    let w = ramp(16 * 8 * 64, &[16, 8, 4, 4, 4]).requiring_grad();
    c.bench_function("conv_transpose3d 8^3 16->8 forward+backward", |b| {
        b.iter(|| {
            let y = conv_transpose3d(black_box(&x), &w, None, 2, 1).unwrap();
            backward(&y.sum().unwrap(), &[&w], false).unwrap()
        })
    });
    let net = CompletionNet::new(CompletionConfig::default(), 0).unwrap();
    let input = ramp(4 * 4 * 1024, &[4, 4, 32, 32]);
    c.bench_function("completion forward batch 4", |b| b.iter(|| net.forward(black_box(&input)).unwrap()));
}

fn rendering(c: &mut Criterion) {
    let grid = generate_shape(&ShapeSpec::random(Family::Chair, 1), 32).unwrap();
    let cam = camera_from_angles(0.6, 0.4, 2.0, 64, 64).unwrap();
    c.bench_function("render 32^3 at 64x64", |b| b.iter(|| render_view(black_box(&grid), &cam).unwrap()));
}

fn chamfer(c: &mut Criterion) {
    let a = generate_shape(&ShapeSpec::random(Family::Table, 2), 32).unwrap();
    let b = generate_shape(&ShapeSpec::random(Family::Table, 3), 32).unwrap();
    for n in [1024, 8192] {
        let p = sample_isosurface_points(&a, n, 0.5, 0).unwrap();
        let q = sample_isosurface_points(&b, n, 0.5, 1).unwrap();
        c.bench_function(&format!("chamfer {n} points"), |bench| {
            bench.iter(|| chamfer_distance(black_box(&p), &q).unwrap())
        });
    }
}

criterion_group!(benches, convolutions, rendering, chamfer);
criterion_main!(benches);
