use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use invdim_bench::fixture;
use invdim_core::bounds::{growth_rates, Direction};
use invdim_core::boxdim::{box_count, neighborhood_volume};
use invdim_core::linalg::{singular_values, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bench_singular_values(c: &mut Criterion) {
    let mut group = c.benchmark_group("singular_values");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in [2usize, 3, 4] {
        let entries: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a = Matrix::from_row_major(n, &entries).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &a, |b, a| b.iter(|| singular_values(a).unwrap()));
    }
    group.finish();
}

fn bench_box_count(c: &mut Criterion) {
    let mut group = c.benchmark_group("box_count");
    for budget in [10_000usize, 100_000] {
        let (_, cloud) = fixture("henon", budget);
        group.throughput(Throughput::Elements(budget as u64));
        group.bench_with_input(BenchmarkId::new("henon", budget), &cloud, |b, cloud| {
            b.iter(|| box_count(cloud, 1.0 / 256.0).unwrap())
        });
    }
    group.finish();
}

fn bench_neighborhood_volume(c: &mut Criterion) {
    let mut group = c.benchmark_group("neighborhood_volume");
    group.sample_size(10);
    for name in ["henon", "cat_map"] {
        let (_, cloud) = fixture(name, 100_000);
        for r in [1.0 / 32.0, 1.0 / 128.0] {
            group.bench_with_input(BenchmarkId::new(name, r), &cloud, |b, cloud| {
                b.iter(|| neighborhood_volume(cloud, r).unwrap())
            });
        }
    }
    group.finish();
}

fn bench_growth_rates(c: &mut Criterion) {
    let mut group = c.benchmark_group("growth_rates");
    group.sample_size(10);
    let (sys, cloud) = fixture("henon", 10_000);
    for direction in [Direction::Forward, Direction::Inverse] {
        group.bench_function(format!("henon/{direction:?}/m32"), |b| {
            b.iter(|| growth_rates(&sys, &cloud, 32, direction).unwrap())
        });
    }
    group.finish();
}

criterion_group!(kernels, bench_singular_values, bench_box_count, bench_neighborhood_volume, bench_growth_rates);
criterion_main!(kernels);
