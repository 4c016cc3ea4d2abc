use cellmorph::engine::{run_script, EngineConfig, Run};
use cellmorph::par::{self, Execution};
use cellmorph::placement::{placement_for, sample_surface, PlacementRequest, Region};
use cellmorph::{cell_self_stress, fixtures, CellSpec, Member, NodeId, Point3};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, Execution); 2] = [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)];

fn config(mode: Execution) -> EngineConfig {
    EngineConfig {
        execution: mode,
        ..EngineConfig::default()
    }
}

fn scripts(c: &mut Criterion) {
    let mut g = c.benchmark_group("script");
    g.sample_size(10);
    for (name, script) in [
        ("icosahedron", fixtures::icosahedron_script()),
        ("tet-block-2x1x1", fixtures::tet_block_script(2, 1, 1)),
    ] {
        for (label, mode) in MODES {
            let cfg = config(mode);
            g.bench_with_input(BenchmarkId::new(name, label), &script, |b, s| {
                b.iter(|| run_script(s, &cfg).expect("fixture runs"))
            });
        }
    }
    g.finish();
}

fn cell_batch(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let specs: Vec<CellSpec> = std::iter::from_fn(|| {
        let pts: [Point3; 5] =
            std::array::from_fn(|_| Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        Some(CellSpec::from_points([1, 2, 3, 4, 5].map(NodeId), pts).ok())
    })
    .flatten()
    .take(4096)
    .collect();
    let mut g = c.benchmark_group("cell-batch-4096");
    for (label, mode) in MODES {
        g.bench_function(label, |b| b.iter(|| par::map(&specs, mode, |s| cell_self_stress(s).expect("general position"))));
    }
    g.finish();
}

fn sampling(c: &mut Criterion) {
    let cfg = EngineConfig::default();
    let script = fixtures::triplex_script();
    let mut run = Run::new();
    for s in &script.steps[..2] {
        run.apply(s.step.clone(), &cfg).expect("fixture step");
    }
    let req = PlacementRequest {
        remove: vec![Member::new(2u32, 4u32), Member::new(3u32, 5u32)],
        fixed: None,
    };
    let placement = placement_for(&run.design, &req).expect("triplex fusion");
    let pts: Vec<Point3> = run.design.state.nodes().values().copied().collect();
    let region = Region::around(&pts, 0.5);
    let mut g = c.benchmark_group("quadric-samples-2000");
    for (label, mode) in MODES {
        g.bench_function(label, |b| {
            b.iter(|| sample_surface(&placement.constraints[0], 2000, &region, 9, mode).expect("samples"))
        });
    }
    g.finish();
}

criterion_group!(benches, scripts, cell_batch, sampling);
criterion_main!(benches);
