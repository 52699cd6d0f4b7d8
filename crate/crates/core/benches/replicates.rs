use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use toydown::analytics::fragmentation;
use toydown::districts::{square, PlaneGrid};
use toydown::exec::Execution;
use toydown::hierarchy::{build_homogeneous, LeafPopulations};
use toydown::mechanisms::toydown_noise;
use toydown::postprocess::topdown_sweep;
use toydown::{BudgetAllocation, Hierarchy, Mode, Seed, TypeSchema};

const EXECUTIONS: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn toydown_replicates(c: &mut Criterion) {
    let counts = build_homogeneous(&[10, 10, 10], TypeSchema::total(), LeafPopulations::Constant(vec![25.0])).unwrap();
    let alloc = BudgetAllocation::equal(1.0, 4).unwrap();
    let mut group = c.benchmark_group("toydown_256_replicates");
    for (name, exec) in EXECUTIONS {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                exec.map(256, |r| {
                    let (noisy, _) = toydown_noise(&counts, &alloc, false, Seed(1).replicate(r)).unwrap();
                    topdown_sweep(&noisy, Mode::NonNeg).unwrap().table().get(1, 0)
                })
            })
        });
    }
    group.finish();
}

fn square_frag_draws(c: &mut Criterion) {
    let h = Hierarchy::homogeneous(&[16, 4, 25]).unwrap();
    let grid = PlaneGrid::square_tiling(&h).unwrap();
    let mut group = c.benchmark_group("square_frag_512_draws");
    for (name, exec) in EXECUTIONS {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                exec.map(512, |i| {
                    let d = square(&h, &grid, 4, &mut Seed(2).replicate(i).rng()).unwrap();
                    fragmentation(&h, &d).score
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, toydown_replicates, square_frag_draws);
criterion_main!(benches);
