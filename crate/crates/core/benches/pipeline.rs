//! Sequential vs parallel execution for the three batch loops.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use winshift::phantom::{self, BoostDistribution, Phantom, PhantomSpec};
use winshift::pipeline::SlicePipeline;
use winshift::{
    augment, par, stats, Execution, ForegroundStats, Normalization, ViewingWindow,
    WindowShiftPolicy,
};

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn cohort() -> Vec<Phantom> {
    phantom::generate_cohort(
        16,
        &PhantomSpec::default(),
        &BoostDistribution::Uniform {
            low: 0.0,
            high: 100.0,
        },
        1,
        Execution::Parallel,
    )
    .unwrap()
}

fn stats_scan(c: &mut Criterion) {
    let cohort = cohort();
    let mut g = c.benchmark_group("stats_scan");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                let shards = par::map(exec, &cohort, |p| {
                    let mut s = ForegroundStats::new(stats::default_foreground());
                    s.accumulate(&p.volume, &p.mask).unwrap();
                    s
                });
                black_box(ForegroundStats::merge_all(stats::default_foreground(), &shards).unwrap())
            })
        });
    }
    g.finish();
}

fn augment_batch(c: &mut Criterion) {
    let cohort = cohort();
    let base = ViewingWindow::from_level_width(90.0, 200.0).unwrap();
    let shift = WindowShiftPolicy::new(60.0, 160.0, 0.3).unwrap();
    let mut specs = augment::preset("window_shift", &shift, &base)
        .unwrap()
        .specs()
        .to_vec();
    specs.extend(
        augment::preset("nnunet", &shift, &base)
            .unwrap()
            .specs()
            .to_vec(),
    );
    let policy = augment::AugmentationPolicy::new(specs)
        .unwrap()
        .with_geometric();
    let pipe = SlicePipeline::new(base, Normalization::new(0.5, 0.2).unwrap(), policy, 3);
    let slices: Vec<_> = cohort
        .iter()
        .flat_map(|p| {
            (0..p.volume.dims()[2]).map(move |z| {
                (
                    p.volume.source_id(),
                    z,
                    p.volume.axial_slice(z),
                    p.mask.axial_slice(z),
                )
            })
        })
        .collect();
    let mut g = c.benchmark_group("augment_batch");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                black_box(par::map(exec, &slices, |(id, z, hu, mask)| {
                    pipe.augment(hu, mask, id, *z, 0).unwrap()
                }))
            })
        });
    }
    g.finish();
}

fn cohort_generation(c: &mut Criterion) {
    let mut g = c.benchmark_group("cohort_generation");
    g.sample_size(10);
    let boosts = BoostDistribution::Uniform {
        low: 0.0,
        high: 100.0,
    };
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                black_box(
                    phantom::generate_cohort(8, &PhantomSpec::default(), &boosts, 5, exec).unwrap(),
                )
            })
        });
    }
    g.finish();
}

criterion_group!(benches, stats_scan, augment_batch, cohort_generation);
criterion_main!(benches);
