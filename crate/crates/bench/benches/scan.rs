use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dlssm::ssm::{direct_convolve, fft_convolve, parallel_scan, sequential_scan, ImpulseKernel};
use dlssm_bench::{legendre_system, signal};

fn scan_paths(c: &mut Criterion) {
    let mut group = c.benchmark_group("scan");
    for &(order, len) in &[(16, 256), (64, 784), (128, 2048)] {
        let sys = legendre_system(order);
        let u = signal(len, 1);
        let kernel = ImpulseKernel::new(&sys, len);
        let id = format!("q{order}_T{len}");
        group.bench_with_input(BenchmarkId::new("sequential", &id), &u, |b, u| {
            b.iter(|| sequential_scan(&sys, u, &vec![0.0; order]).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("parallel", &id), &u, |b, u| {
            b.iter(|| parallel_scan(&sys, u).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("direct", &id), &u, |b, u| {
            b.iter(|| direct_convolve(&kernel, u).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("fft", &id), &u, |b, u| {
            b.iter(|| fft_convolve(&kernel, u).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, scan_paths);
criterion_main!(benches);
