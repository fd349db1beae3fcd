use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use stemsynth::calibration::{calibrate_image, CalibrationConfig, ProfileStats};
use stemsynth::enhance::FilterConfig;
use stemsynth::eval::score_pair;
use stemsynth::synthesis::{lattice_presets, synth_sample, SynthConfig};
use stemsynth_bench::haadf_sample;

fn synthesis(c: &mut Criterion) {
    let stats = ProfileStats::preset("haadf-real").unwrap();
    let mut g = c.benchmark_group("synthesize");
    for size in [128, 256] {
        let cfg = SynthConfig {
            size,
            ..Default::default()
        };
        let mut i = 0;
        g.bench_with_input(BenchmarkId::from_parameter(size), &cfg, |b, cfg| {
            b.iter(|| {
                i += 1;
                synth_sample(lattice_presets(), &stats, cfg, 1, i).unwrap()
            })
        });
    }
    g.finish();
}

fn calibration(c: &mut Criterion) {
    let s = haadf_sample(256, 3);
    let cfg = CalibrationConfig::default();
    let mut g = c.benchmark_group("calibrate");
    g.sample_size(10);
    g.bench_function("256", |b| {
        b.iter(|| calibrate_image(black_box(&s.noisy), s.profile.mode, &cfg, "bench", None).unwrap())
    });
    g.finish();
}

fn enhancement(c: &mut Criterion) {
    let s = haadf_sample(256, 5);
    let mut g = c.benchmark_group("enhance");
    for name in ["wiener", "bilateral", "absf", "fftpeak"] {
        let f = FilterConfig::by_name(name).unwrap();
        g.bench_function(name, |b| b.iter(|| f.apply(black_box(&s.noisy)).unwrap()));
    }
    g.finish();
}

fn metrics(c: &mut Criterion) {
    let s = haadf_sample(256, 7);
    c.bench_function("psnr+ssim 256", |b| {
        b.iter(|| score_pair(black_box(&s.noisy), &s.clean).unwrap())
    });
}

criterion_group!(pipeline, synthesis, calibration, enhancement, metrics);
criterion_main!(pipeline);
