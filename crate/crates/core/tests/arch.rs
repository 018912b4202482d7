use mpx_core::arch::{
    cycle_model, default_cost_table, dequant_overhead_fraction, simulate, CostTable,
    SystolicConfig,
};
use mpx_core::mpgemm::{GemmProblem, Pipeline};
use mpx_core::pe::PeKind;
use proptest::prelude::*;

fn kind_strategy() -> impl Strategy<Value = PeKind> {
    proptest::sample::select(PeKind::ALL.to_vec())
}

fn pipeline_strategy() -> impl Strategy<Value = Pipeline> {
    prop_oneof![Just(Pipeline::Before), Just(Pipeline::After)]
}

fn cycles(m: usize, n: usize, k: usize, g: usize, cfg: &SystolicConfig, pl: Pipeline) -> u64 {
    let p = GemmProblem::new(m, n, k, g).unwrap();
    cycle_model(&p, cfg, pl, &default_cost_table()).unwrap().total
}

proptest! {
    #[test]
    fn cycles_monotone_in_each_dimension(
        m in 1usize..64, n in 1usize..512, groups in 1usize..32,
        g in prop_oneof![Just(1usize), Just(16), Just(128)],
        r in 1usize..9, c in 1usize..9, kind in kind_strategy(), pl in pipeline_strategy(),
    ) {
        let cfg = SystolicConfig { rows: r, cols: c, ..SystolicConfig::new(kind) };
        let k = g * groups;
        let base = cycles(m, n, k, g, &cfg, pl);
        prop_assert!(cycles(m + 1, n, k, g, &cfg, pl) >= base);
        prop_assert!(cycles(m, n + 1, k, g, &cfg, pl) >= base);
        prop_assert!(cycles(m, n, k + g, g, &cfg, pl) >= base);
    }

    #[test]
    fn after_dominates_when_a_tile_row_covers_the_batch(
        m in 1usize..=4, n in 1usize..4096, groups in 1usize..64,
        g in prop_oneof![Just(4usize), Just(32), Just(128)], kind in kind_strategy(),
    ) {
        let cfg = SystolicConfig::new(kind);
        let k = g * groups;
        prop_assert!(cycles(m, n, k, g, &cfg, Pipeline::After) <= cycles(m, n, k, g, &cfg, Pipeline::Before));
    }

    #[test]
    fn energy_decomposes(
        m in 1usize..64, n in 1usize..2048, groups in 1usize..32,
        kind in kind_strategy(), pl in pipeline_strategy(), buffer in 1u64..(1 << 22),
    ) {
        let cfg = SystolicConfig { buffer_bytes: buffer, ..SystolicConfig::new(kind) };
        let p = GemmProblem::new(m, n, 32 * groups, 32).unwrap();
        let r = simulate(&p, &cfg, pl, &default_cost_table()).unwrap();
        let b = r.energy_breakdown;
        prop_assert!(b.dram >= 0.0 && b.buffer >= 0.0 && b.core >= 0.0 && b.static_ >= 0.0);
        prop_assert!((b.dram + b.buffer + b.core + b.static_ - r.energy_total).abs() <= 1e-9 * r.energy_total);
        prop_assert!((0.0..=1.0).contains(&r.dequant_overhead_fraction));
    }
}

#[test]
fn dominance_fails_for_groups_smaller_than_the_array() {
    // Small groups make the per-group epilogue longer than dequantizing the
    // weights once, so dominance is not universal.
    let cfg = SystolicConfig::new(PeKind::Int8Mul);
    assert_eq!(cycles(4, 4, 256, 2, &cfg, Pipeline::After) - 262, 128);
    assert_eq!(cycles(4, 4, 256, 2, &cfg, Pipeline::Before) - 262, 64);
}

#[test]
fn after_dominates_on_decoder_shapes() {
    for kind in PeKind::ALL {
        let cfg = SystolicConfig::new(kind);
        for m in [1, 2, 4, 8, 16, 32] {
            for (n, k) in [(12288, 4096), (4096, 4096), (16384, 4096), (4096, 16384)] {
                assert!(cycles(m, n, k, 128, &cfg, Pipeline::After) <= cycles(m, n, k, 128, &cfg, Pipeline::Before));
            }
        }
    }
}

#[test]
fn overhead_shrinks_with_batch() {
    let t = default_cost_table();
    let cfg = SystolicConfig::new(PeKind::Int8Mul);
    let frac = |m, pl| {
        let p = GemmProblem::new(m, 4096, 4096, 128).unwrap();
        dequant_overhead_fraction(&p, &cfg, pl, &t).unwrap()
    };
    assert!(frac(2, Pipeline::Before) > 0.15);
    assert!(frac(2, Pipeline::Before) > frac(32, Pipeline::Before));
    for pl in [Pipeline::Before, Pipeline::After] {
        let seq: Vec<f64> = (1..=32).map(|m| frac(m, pl)).collect();
        assert!(seq.windows(2).all(|w| w[1] <= w[0]), "{pl}: {seq:?}");
    }
}

#[test]
fn epilogue_vanishes_for_one_group() {
    let t = default_cost_table();
    let cfg = SystolicConfig::new(PeKind::MixPeA8);
    let p = GemmProblem::new(4, 4096, 4096, 4096).unwrap();
    assert!(dequant_overhead_fraction(&p, &cfg, Pipeline::After, &t).unwrap() < 1e-3);
}

#[test]
fn single_tile_instance() {
    // m = R, n = C, k = 1, g = 1: (1 + R + C - 2) plus a C-wide epilogue.
    for (r, c) in [(4, 4), (2, 8), (8, 3)] {
        let cfg = SystolicConfig { rows: r, cols: c, ..SystolicConfig::new(PeKind::Int8Mul) };
        let p = GemmProblem::new(r, c, 1, 1).unwrap();
        let b = cycle_model(&p, &cfg, Pipeline::After, &default_cost_table()).unwrap();
        assert_eq!(b.compute, (r + c - 1) as u64);
        assert_eq!(b.dequant_overhead, 1);
    }
}

#[test]
fn configs_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("costs.toml");
    let t = default_cost_table();
    std::fs::write(&path, t.to_toml().unwrap()).unwrap();
    assert_eq!(CostTable::load(&path).unwrap(), t);

    let cfg = SystolicConfig { rows: 8, activation_bits: Some(8), ..SystolicConfig::new(PeKind::OlAccelLike) };
    assert_eq!(SystolicConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    assert!(SystolicConfig::from_toml("rows = 4\ncols = 4\npe_kind = \"warp-drive\"\nfrequency_hz = 1.0\nbuffer_bytes = 1\ngroup_size = 1\n").is_err());
}

#[test]
fn cost_table_rejects_bad_values() {
    let mut t = default_cost_table();
    t.pe.get_mut(&PeKind::MixPeA8).unwrap().area = -1.0;
    assert!(CostTable::from_toml(&t.to_toml().unwrap()).is_err());
}
