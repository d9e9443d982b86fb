//! Rayon versus sequential execution of the main kernels.
//!
//! Group names do not depend on the feature set, so the two builds can be
//! compared through criterion baselines:
//!
//! ```text
//! cargo bench -p kpme -- --save-baseline rayon
//! cargo bench -p kpme --no-default-features -- --baseline rayon
//! ```
//!
//! With the `parallel` feature each kernel is also timed inside a
//! one-thread pool, and the simulated world with and without a thread cap.

use std::f64::consts::PI;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;

use kpme::alphaskp::{sinc_rule_for_eps, skp_from_quadrature, EwaldConfig};
use kpme::geometry::{Box3, CellGrid, ChargeVector, Normalization, PointCloud};
use kpme::kron::{kron_matvec_shuffle, KronFactor, KronOperand};
use kpme::oracle::dense_reciprocal_apply;
use kpme::parallel::{run_distributed, KpmeSetup, RankGrid, SimWorld};

struct Fixture {
    cells: CellGrid,
    setup: KpmeSetup,
    cloud: PointCloud,
    q: ChargeVector,
}

fn fixture(shape: [usize; 3]) -> Fixture {
    let m = 4;
    let cfg = EwaldConfig::new(4.0, m).unwrap();
    let bbox = Box3::new([0.0; 3], 0.25 / (PI * m as f64)).unwrap();
    let dec = skp_from_quadrature(&sinc_rule_for_eps(1e-8, m).unwrap(), &cfg).unwrap();
    Fixture {
        cells: CellGrid::new(bbox, shape).unwrap(),
        setup: KpmeSetup::new(cfg, dec, 8, Normalization::unit(bbox.center())).unwrap(),
        cloud: PointCloud::uniform(&bbox, 2000, 1),
        q: ChargeVector::uniform(2000, 1),
    }
}

fn shuffle_operand(n: usize) -> (KronOperand, Vec<f64>) {
    let f = |s: f64| DMatrix::from_fn(n, n, |i, j| ((i * n + j) as f64 * s).sin());
    let op = KronOperand::dense(vec![f(0.3), f(0.7), f(1.1)]).unwrap();
    let x = (0..n * n * n).map(|k| (k as f64).cos()).collect();
    (op, x)
}

#[cfg(feature = "parallel")]
type Pool = rayon::ThreadPool;
#[cfg(not(feature = "parallel"))]
struct Pool;

fn within<R: Send>(pool: Option<&Pool>, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    if let Some(p) = pool {
        return p.install(f);
    }
    let _ = pool;
    f()
}

/// The kernels timed under every configuration.
fn kernels(c: &mut Criterion, tag: &str, pool: Option<&Pool>) {
    let mut g = c.benchmark_group(format!("kernels/{tag}"));
    g.sample_size(10);
    let fx = fixture([2, 2, 2]);
    let world = SimWorld::new(RankGrid::new([2, 2, 2]).unwrap());
    g.bench_function("kpme_apply_2x2x2", |b| {
        b.iter(|| within(pool, || run_distributed(&world, &fx.cells, &fx.setup, &fx.cloud, &fx.q).unwrap()))
    });
    let small = PointCloud::uniform(fx.cells.bbox(), 300, 2);
    let sq = ChargeVector::uniform(300, 2);
    g.bench_function("direct_sum_300", |b| {
        b.iter(|| within(pool, || dense_reciprocal_apply(&small, &small, &sq, &fx.setup.cfg, &fx.setup.norm).unwrap()))
    });
    let (op, x) = shuffle_operand(24);
    g.bench_function("shuffle_24", |b| {
        b.iter(|| within(pool, || kron_matvec_shuffle(black_box(&op), black_box(&x)).unwrap()))
    });
    let factored = KronOperand::new(
        (0..3)
            .map(|_| KronFactor::factored(DMatrix::from_element(24, 10, 0.5), DMatrix::from_element(10, 24, 0.25)).unwrap())
            .collect(),
    )
    .unwrap();
    g.bench_function("shuffle_factored_24", |b| {
        b.iter(|| within(pool, || kron_matvec_shuffle(&factored, black_box(&x)).unwrap()))
    });
    g.finish();
}

fn by_build(c: &mut Criterion) {
    kernels(c, "build", None);
}

#[cfg(feature = "parallel")]
fn one_thread_pool(c: &mut Criterion) {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    kernels(c, "one_thread_pool", Some(&pool));
}

#[cfg(not(feature = "parallel"))]
fn one_thread_pool(_: &mut Criterion) {}

fn rank_threads(c: &mut Criterion) {
    let mut g = c.benchmark_group("rank_threads");
    g.sample_size(10);
    let fx = fixture([2, 2, 2]);
    let grid = RankGrid::new([2, 2, 2]).unwrap();
    for cap in [1, grid.size()] {
        let world = SimWorld::with_thread_cap(grid, cap);
        g.bench_with_input(BenchmarkId::from_parameter(cap), &world, |b, w| {
            b.iter(|| run_distributed(w, &fx.cells, &fx.setup, &fx.cloud, &fx.q).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, by_build, one_thread_pool, rank_threads);
criterion_main!(benches);
