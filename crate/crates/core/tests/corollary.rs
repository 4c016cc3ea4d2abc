//! Random growth sequences checked against a separately assembled
//! equilibrium matrix.

use std::collections::BTreeMap;

use cellmorph::engine::{run_script, EngineConfig, Run};
use cellmorph::{fixtures, NodeId, StructureState};
use nalgebra::DMatrix;
use proptest::prelude::*;

/// Row `3i + k` is node `i`'s `k`-th force component.
fn oracle_matrix(s: &StructureState) -> DMatrix<f64> {
    let row: BTreeMap<NodeId, usize> = s.nodes().keys().enumerate().map(|(i, n)| (*n, i)).collect();
    let mut a = DMatrix::zeros(3 * row.len(), s.members().len());
    for (j, m) in s.members().iter().enumerate() {
        let (p, q) = (s.nodes()[&m.lo()], s.nodes()[&m.hi()]);
        let d = [q.x - p.x, q.y - p.y, q.z - p.z];
        for k in 0..3 {
            a[(3 * row[&m.lo()] + k, j)] = -d[k];
            a[(3 * row[&m.hi()] + k, j)] = d[k];
        }
    }
    a
}

fn oracle_nullity(a: &DMatrix<f64>) -> usize {
    let sv = a.clone().svd(false, false).singular_values;
    let top = sv.iter().cloned().fold(0.0, f64::max);
    a.ncols() - sv.iter().filter(|v| **v > 1e-9 * top).count()
}

fn basis_rank(s: &StructureState) -> usize {
    if s.dim_w() == 0 {
        return 0;
    }
    let w = DMatrix::from_fn(s.members().len(), s.dim_w(), |i, k| s.basis()[k][i]);
    let sv = w.svd(false, false).singular_values;
    let top = sv.iter().cloned().fold(0.0, f64::max);
    sv.iter().filter(|v| **v > 1e-9 * top).count()
}

fn check_sequence(seed: u64, cells: usize) {
    let cfg = EngineConfig::default();
    let script = fixtures::random_script(seed, cells, 0.5, &cfg).unwrap();
    let mut run = Run::new();
    let mut previous = 0usize;
    let mut first = true;
    for step in &script.steps {
        let log = run.apply(step.step.clone(), &cfg).unwrap().clone();
        let s = &run.design.state;
        let a = oracle_matrix(s);
        let nullity = oracle_nullity(&a);
        let rigid = if first { 6 } else { 0 };
        assert_eq!(
            nullity as i64 - previous as i64,
            log.delta_edges - 3 * log.delta_nodes + rigid,
            "seed {seed} step {}",
            log.index
        );
        assert_eq!(basis_rank(s), nullity, "seed {seed} step {}", log.index);
        assert_eq!(s.dim_w(), nullity);
        for col in s.basis() {
            let v = nalgebra::DVector::from_column_slice(col);
            let r = (&a * &v).amax() / v.amax();
            assert!(r <= 1e-9, "seed {seed} step {}: residual {r:e}", log.index);
        }
        previous = nullity;
        first = false;
    }
    assert_eq!(run_script(&script, &cfg).unwrap().design, run.design);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn corollary_holds_on_random_sequences(seed in 0u64..1_000_000, cells in 5usize..=12) {
        check_sequence(seed, cells);
    }
}

#[test]
fn growth_without_fusion() {
    let cfg = EngineConfig::default();
    let script = fixtures::random_script(11, 8, 0.0, &cfg).unwrap();
    let run = run_script(&script, &cfg).unwrap();
    assert!(run.log.iter().all(|l| l.generic && l.mechanisms == 0));
}
