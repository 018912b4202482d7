mod common;

use mpx_core::mpgemm::{
    dequant_op_ratio, gemm_dequant_after, gemm_dequant_before, precompute_token_group_sums,
    quantize_activations_int8, w4a8_group_dot, Activations, GemmProblem, OpCounters, Pipeline,
};
use mpx_core::pe::{PeKind, U4};
use mpx_core::quant::{quantize, GroupPadding, QuantScheme};
use mpx_core::Tensor;
use num_bigint::BigInt;
use num_rational::Ratio;
use proptest::prelude::*;

struct Instance {
    problem: GemmProblem,
    x: Tensor,
    w: Tensor,
}

fn instance(m: usize, n: usize, k: usize, g: usize, seed: u64) -> Instance {
    Instance {
        problem: GemmProblem::new(m, n, k, g).unwrap(),
        x: common::uniform(m, k, -4.0, 4.0, seed),
        w: common::uniform(n, k, -1.0, 1.0, seed ^ 0x5eed),
    }
}

/// Both pipelines against the dense oracle, for both MixPE kinds.
fn check_equivalence(inst: &Instance, tol: f64) {
    let p = &inst.problem;
    let wq = quantize(&inst.w, &QuantScheme::uint4_grouped(p.g)).unwrap();
    let w_hat = wq.dequantize();

    let xq = quantize_activations_int8(&inst.x).unwrap();
    let oracle = common::dense_gemm(&xq.dequantize(), &w_hat);
    let (before, _) = gemm_dequant_before(Activations::Int8(&xq), &wq, p).unwrap();
    let (after, _) = gemm_dequant_after(Activations::Int8(&xq), &wq, p, PeKind::MixPeA8).unwrap();
    assert!(common::rel_err(&before, &oracle) <= tol);
    assert!(common::rel_err(&after, &oracle) <= tol, "{}", common::rel_err(&after, &oracle));

    let xh = inst.x.to_half();
    let oracle = common::dense_gemm(&xh.to_tensor(), &w_hat);
    let (before, _) = gemm_dequant_before(Activations::Fp16(&xh), &wq, p).unwrap();
    let (after, _) = gemm_dequant_after(Activations::Fp16(&xh), &wq, p, PeKind::MixPeA16).unwrap();
    assert!(common::rel_err(&before, &oracle) <= tol);
    assert!(common::rel_err(&after, &oracle) <= tol);
}

#[test]
fn spec_shape_matches_dense_oracle() {
    check_equivalence(&instance(4, 8, 256, 128, 1), 1e-12);
}

#[test]
fn single_element_example() {
    use mpx_core::quant::{QuantParams, QuantizedTensor, Signedness};
    let p = QuantParams { scale: 2.0, zero_point: 1, bits: 4, signedness: Signedness::Unsigned };
    let wq = QuantizedTensor::from_parts(1, 1, vec![3], vec![p], QuantScheme::uint4_grouped(1)).unwrap();
    let x = Tensor::row_vector(vec![5.0]);
    let problem = GemmProblem::new(1, 1, 1, 1).unwrap();
    let (y, c) = gemm_dequant_before(Activations::Real(&x), &wq, &problem).unwrap();
    assert_eq!(y.as_slice(), &[20.0]);
    assert_eq!((c.dequant_mults, c.dequant_subs, c.pe_ops), (1, 1, 1));
}

#[test]
fn unit_scale_is_plain_integer_gemm() {
    use mpx_core::quant::{QuantParams, QuantizedTensor, Signedness};
    let (m, n, k) = (3, 5, 16);
    let codes: Vec<i32> = (0..n * k).map(|i| (i * 7 % 16) as i32).collect();
    let p = QuantParams { scale: 1.0, zero_point: 0, bits: 4, signedness: Signedness::Unsigned };
    let wq = QuantizedTensor::from_parts(n, k, codes.clone(), vec![p; n], QuantScheme::uint4_grouped(k)).unwrap();
    // Each row holds 127, so the per-token scale is 1 and codes are exact.
    let xs: Vec<i32> = (0..m * k)
        .map(|i| if i % k == 0 { 127 } else { (i as i32 * 37 % 255) - 127 })
        .collect();
    let x = Tensor::new(m, k, xs.iter().map(|&v| f64::from(v)).collect()).unwrap();
    let xq = quantize_activations_int8(&x).unwrap();
    assert!(xq.params().iter().all(|p| p.scale == 1.0));
    let problem = GemmProblem::new(m, n, k, k).unwrap();
    let (y, _) = gemm_dequant_after(Activations::Int8(&xq), &wq, &problem, PeKind::MixPeA8).unwrap();
    let (y_real, _) = gemm_dequant_before(Activations::Real(&x), &wq, &problem).unwrap();
    for r in 0..m {
        for c in 0..n {
            let want: i64 = (0..k).map(|i| i64::from(codes[c * k + i]) * i64::from(xs[r * k + i])).sum();
            assert_eq!(y.get(r, c), want as f64);
            assert_eq!(y_real.get(r, c), want as f64);
        }
    }
}

#[test]
fn token_group_sums() {
    let x = Tensor::row_vector(vec![1.0, 2.0, 3.0, 4.0]);
    let p = GemmProblem::new(1, 1, 4, 2).unwrap();
    assert_eq!(precompute_token_group_sums(&x, &p).unwrap().as_slice(), &[3.0, 7.0]);
    let z = Tensor::zeros(3, 8);
    let p = GemmProblem::new(3, 1, 8, 4).unwrap();
    assert!(precompute_token_group_sums(&z, &p).unwrap().as_slice().iter().all(|&v| v == 0.0));

    let x = common::uniform(5, 96, -3.0, 3.0, 4);
    let p = GemmProblem::new(5, 1, 96, 32).unwrap();
    let sums = precompute_token_group_sums(&x, &p).unwrap();
    for r in 0..5 {
        let direct: f64 = x.row(r).iter().sum();
        let grouped: f64 = sums.row(r).iter().sum();
        assert!((direct - grouped).abs() <= 1e-12 * direct.abs().max(1.0));
    }
}

#[test]
fn dequant_ratio_examples() {
    let r = |k, g| dequant_op_ratio(&GemmProblem::new(2, 8, k, g).unwrap());
    assert_eq!(r(256, 128), Ratio::new(1, 128));
    assert_eq!(r(256, 1), Ratio::from_integer(1));
    assert_eq!(r(256, 256), Ratio::new(1, 256));
}

#[test]
fn measured_counters_follow_the_law() {
    for (m, n, k, g) in [(1, 1, 4, 2), (3, 7, 64, 16), (2, 16, 256, 128), (5, 3, 96, 32)] {
        let inst = instance(m, n, k, g, (m * n * k) as u64);
        let wq = quantize(&inst.w, &QuantScheme::uint4_grouped(g)).unwrap();
        let xq = quantize_activations_int8(&inst.x).unwrap();
        let p = inst.problem;
        let (_, before) = gemm_dequant_before(Activations::Int8(&xq), &wq, &p).unwrap();
        let (_, after) = gemm_dequant_after(Activations::Int8(&xq), &wq, &p, PeKind::MixPeA8).unwrap();
        assert_eq!(before, OpCounters::analytic(&p, Pipeline::Before));
        assert_eq!(after, OpCounters::analytic(&p, Pipeline::After));

        let (m, n, k, g) = (m as u64, n as u64, k as u64, g as u64);
        assert_eq!(before.dequant_mults, m * n * k);
        assert_eq!(after.group_dequants, m * n * k / g);
        assert_eq!(Ratio::new(after.group_dequants, before.dequant_mults), Ratio::new(1, g));
        // z-correction work: sums once per token, one correction per group
        // per output, never m * n * k.
        assert_eq!(after.token_sum_adds + after.zero_point_corrections, m * k + m * n * (k / g));
        assert_eq!(after.dequant_mults + after.dequant_subs, 0);
    }
}

#[test]
fn zero_padded_groups_match_explicit_padding() {
    let x = common::uniform(3, 10, -1.0, 1.0, 9);
    let w = common::uniform(4, 10, -1.0, 1.0, 10);
    let p = GemmProblem { m: 3, n: 4, k: 10, g: 4, padding: GroupPadding::ZeroPad };
    p.validate().unwrap();
    let inst = Instance { problem: p, x, w };
    let wq = quantize(&inst.w, &QuantScheme::uint4_grouped(4).with_padding(GroupPadding::ZeroPad)).unwrap();
    let xq = quantize_activations_int8(&inst.x).unwrap();
    let (after, c) = gemm_dequant_after(Activations::Int8(&xq), &wq, &p, PeKind::MixPeA8).unwrap();
    let oracle = common::dense_gemm(&xq.dequantize(), &wq.dequantize());
    assert!(common::rel_err(&after, &oracle) <= 1e-12);
    assert_eq!(c.group_dequants, 3 * 4 * 3);
    assert!(GemmProblem::new(3, 4, 10, 4).is_err());
}

#[test]
fn rejects_mismatches() {
    let inst = instance(2, 4, 64, 32, 3);
    let wq = quantize(&inst.w, &QuantScheme::uint4_grouped(32)).unwrap();
    let xq = quantize_activations_int8(&inst.x).unwrap();
    let xh = inst.x.to_half();
    let p = inst.problem;
    let wrong_g = GemmProblem::new(2, 4, 64, 16).unwrap();
    assert!(gemm_dequant_before(Activations::Int8(&xq), &wq, &wrong_g).is_err());
    let wrong_m = GemmProblem::new(3, 4, 64, 32).unwrap();
    assert!(gemm_dequant_after(Activations::Int8(&xq), &wq, &wrong_m, PeKind::MixPeA8).is_err());
    assert!(gemm_dequant_after(Activations::Fp16(&xh), &wq, &p, PeKind::MixPeA8).is_err());
    assert!(gemm_dequant_after(Activations::Int8(&xq), &wq, &p, PeKind::MixPeA16).is_err());
    for kind in [PeKind::Int8Mul, PeKind::Fp16Mul, PeKind::BitFusionLike, PeKind::OlAccelLike] {
        assert!(gemm_dequant_after(Activations::Int8(&xq), &wq, &p, kind).is_err());
    }
    let w8 = quantize(&inst.w, &QuantScheme::new(8, mpx_core::quant::Signedness::Unsigned, mpx_core::quant::Granularity::PerGroup(32))).unwrap();
    assert!(gemm_dequant_after(Activations::Int8(&xq), &w8, &p, PeKind::MixPeA8).is_err());
}

#[test]
fn outputs_are_deterministic() {
    let inst = instance(6, 16, 256, 64, 77);
    let wq = quantize(&inst.w, &QuantScheme::uint4_grouped(64)).unwrap();
    let xq = quantize_activations_int8(&inst.x).unwrap();
    let run = || gemm_dequant_after(Activations::Int8(&xq), &wq, &inst.problem, PeKind::MixPeA8).unwrap().0;
    let a = run();
    for _ in 0..4 {
        assert_eq!(run(), a);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pipelines_agree(m in 1usize..9, n in 1usize..17, groups in 1usize..5,
                       g in prop_oneof![Just(8usize), Just(32), Just(64)], seed in any::<u64>()) {
        check_equivalence(&instance(m, n, g * groups, g, seed), 1e-10);
    }

    #[test]
    fn group_dot_is_exact(codes in proptest::collection::vec((0u8..16, any::<i8>()), 1..512)) {
        let w: Vec<U4> = codes.iter().map(|&(w, _)| U4::new(w).unwrap()).collect();
        let x: Vec<i8> = codes.iter().map(|&(_, x)| x).collect();
        let oracle: BigInt = codes.iter().map(|&(w, x)| BigInt::from(w) * BigInt::from(x)).sum();
        prop_assert_eq!(BigInt::from(w4a8_group_dot(&w, &x)), oracle);
    }

    #[test]
    fn counter_ratio_is_one_over_g(m in 1usize..64, n in 1usize..4096, groups in 1usize..64,
                                   g in prop_oneof![Just(1usize), Just(32), Just(64), Just(128)]) {
        let p = GemmProblem::new(m, n, g * groups, g).unwrap();
        let before = OpCounters::analytic(&p, Pipeline::Before);
        let after = OpCounters::analytic(&p, Pipeline::After);
        prop_assert_eq!(Ratio::new(after.group_dequants, before.dequant_mults), Ratio::new(1, g as u64));
        prop_assert_eq!(dequant_op_ratio(&p), Ratio::new(1, g as u64));
    }
}
