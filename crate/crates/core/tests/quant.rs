mod common;

use mpx_core::quant::{
    code_range, group_param_count, quantize, Granularity, GroupPadding, Mapping, QuantParams,
    QuantScheme, Signedness,
};
use mpx_core::{Error, Tensor};
use proptest::prelude::*;

fn squared_error(x: &Tensor, scheme: &QuantScheme) -> f64 {
    let x_hat = quantize(x, scheme).unwrap().dequantize();
    x.as_slice()
        .iter()
        .zip(x_hat.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

fn scheme_strategy() -> impl Strategy<Value = QuantScheme> {
    (
        prop_oneof![Just(4u32), Just(8u32)],
        prop_oneof![Just(Signedness::Signed), Just(Signedness::Unsigned)],
        prop_oneof![
            Just(Granularity::PerTensor),
            Just(Granularity::PerRow),
            Just(Granularity::PerGroup(4)),
            Just(Granularity::PerGroup(8)),
            Just(Granularity::PerGroup(16)),
        ],
    )
        .prop_map(|(b, s, g)| QuantScheme::new(b, s, g))
}

fn tensor_strategy() -> impl Strategy<Value = Tensor> {
    (1usize..5, 1usize..3, -6i32..6).prop_flat_map(|(rows, blocks, e)| {
        let cols = 16 * blocks;
        let mag = 2f64.powi(e);
        proptest::collection::vec(-mag..mag, rows * cols)
            .prop_map(move |v| Tensor::new(rows, cols, v).unwrap())
    })
}

proptest! {
    #[test]
    fn round_trip_within_half_step(x in tensor_strategy(), scheme in scheme_strategy()) {
        let q = quantize(&x, &scheme).unwrap();
        let x_hat = q.dequantize();
        for r in 0..x.rows() {
            for c in 0..x.cols() {
                let s = q.params_at(r, c).scale;
                let err = (x.get(r, c) - x_hat.get(r, c)).abs();
                prop_assert!(err <= s / 2.0 * (1.0 + 1e-9), "err {err} > s/2 = {}", s / 2.0);
            }
        }
    }

    #[test]
    fn codes_and_zero_points_stay_in_range(x in tensor_strategy(), scheme in scheme_strategy()) {
        let q = quantize(&x, &scheme).unwrap();
        let (lo, hi) = code_range(scheme.bits, scheme.signedness);
        prop_assert!(q.values().iter().all(|&v| (lo..=hi).contains(&v)));
        prop_assert!(q.params().iter().all(|p| p.scale > 0.0 && (lo..=hi).contains(&p.zero_point)));
    }

    #[test]
    fn param_count_matches_granularity(x in tensor_strategy(), scheme in scheme_strategy()) {
        let q = quantize(&x, &scheme).unwrap();
        let want = match scheme.granularity {
            Granularity::PerTensor => 1,
            Granularity::PerRow => x.rows(),
            Granularity::PerGroup(g) => x.rows() * x.cols() / g,
        };
        prop_assert_eq!(q.params().len(), want);
    }

    #[test]
    fn finer_partitions_never_have_larger_steps(x in tensor_strategy(), bits in prop_oneof![Just(4u32), Just(8u32)]) {
        let s = |g| quantize(&x, &QuantScheme::new(bits, Signedness::Unsigned, g)).unwrap();
        let (tensor, row, group) = (s(Granularity::PerTensor), s(Granularity::PerRow), s(Granularity::PerGroup(8)));
        for r in 0..x.rows() {
            for c in 0..x.cols() {
                prop_assert!(group.params_at(r, c).scale <= row.params_at(r, c).scale);
                prop_assert!(row.params_at(r, c).scale <= tensor.params_at(r, c).scale);
            }
        }
    }

    #[test]
    fn zero_is_exact(x in tensor_strategy(), scheme in scheme_strategy()) {
        // Every partition's grid contains 0.
        let q = quantize(&x, &scheme).unwrap();
        for p in q.params() {
            let code = p.quantize_value(0.0).unwrap();
            prop_assert_eq!(p.dequantize_value(code), 0.0);
        }
    }

    #[test]
    fn symmetric_codes_are_odd_functions(v in proptest::collection::vec(-10.0f64..10.0, 1..64)) {
        let n = v.len();
        let x = Tensor::new(1, n, v.clone()).unwrap();
        let neg = Tensor::new(1, n, v.iter().map(|a| -a).collect()).unwrap();
        let scheme = QuantScheme::int8_per_token();
        let (a, b) = (quantize(&x, &scheme).unwrap(), quantize(&neg, &scheme).unwrap());
        for (p, q) in a.values().iter().zip(b.values()) {
            prop_assert_eq!(*p, -*q);
        }
    }
}

#[test]
fn signed_example_matches_direct_evaluation() {
    let x = Tensor::row_vector(vec![-1.0, -0.3, 0.0, 0.41, 1.0]);
    let q = quantize(&x, &QuantScheme::new(8, Signedness::Signed, Granularity::PerTensor)).unwrap();
    let p = q.params()[0];
    // s = (1 - (-1)) / 255, z = round(-128 - (-1)/s) = round(-0.5) = 0.
    assert_eq!(p.scale, 2.0 / 255.0);
    assert_eq!(p.zero_point, 0);
    for (i, &v) in x.as_slice().iter().enumerate() {
        let code = (v / p.scale).round_ties_even().clamp(-128.0, 127.0) as i32;
        assert_eq!(q.values()[i], code);
        assert!((f64::from(code) * p.scale - v).abs() <= p.scale / 2.0);
    }
}

#[test]
fn unsigned_zero_point_maps_min_to_zero_code() {
    let x = Tensor::row_vector(vec![-3.0, -1.0, 2.0, 4.5]);
    let q = quantize(&x, &QuantScheme::new(4, Signedness::Unsigned, Granularity::PerTensor)).unwrap();
    let p = q.params()[0];
    assert_eq!(p.scale, 7.5 / 15.0);
    assert_eq!(p.zero_point, 6);
    assert_eq!(q.values(), &[0, 4, 10, 15]);
}

#[test]
fn uint4_grouped_is_the_weight_default() {
    let s = QuantScheme::uint4_grouped(128);
    assert_eq!((s.bits, s.signedness, s.mapping), (4, Signedness::Unsigned, Mapping::Asymmetric));
    assert_eq!(s.granularity, Granularity::PerGroup(128));
    assert_eq!(s.padding, GroupPadding::Strict);
}

#[test]
fn group_param_count_examples() {
    let strict = GroupPadding::Strict;
    assert_eq!(group_param_count(4, 256, Granularity::PerGroup(128), strict).unwrap(), 8);
    assert_eq!(group_param_count(4, 256, Granularity::PerRow, strict).unwrap(), 4);
    assert_eq!(group_param_count(4, 256, Granularity::PerTensor, strict).unwrap(), 1);
    assert!(matches!(
        group_param_count(4, 250, Granularity::PerGroup(128), strict),
        Err(Error::GroupSize { group_size: 128, k: 250 })
    ));
    assert_eq!(
        group_param_count(4, 250, Granularity::PerGroup(128), GroupPadding::ZeroPad).unwrap(),
        8
    );
}

#[test]
fn zero_pad_matches_explicit_padding() {
    let x = common::uniform(3, 10, -2.0, 3.0, 11);
    let padded = Tensor::from_fn(3, 12, |r, c| if c < 10 { x.get(r, c) } else { 0.0 });
    let scheme = QuantScheme::uint4_grouped(4);
    let a = quantize(&x, &scheme.with_padding(GroupPadding::ZeroPad)).unwrap();
    let b = quantize(&padded, &scheme).unwrap();
    assert_eq!(a.params(), b.params());
    for r in 0..3 {
        assert_eq!(a.row_codes(r), &b.row_codes(r)[..10]);
    }
}

#[test]
fn granularity_refinement_on_seeded_data() {
    for seed in 0..8 {
        let x = common::heavy_range(16, 512, 32, seed);
        for bits in [4, 8] {
            let e = |g| squared_error(&x, &QuantScheme::new(bits, Signedness::Unsigned, g));
            let g64 = e(Granularity::PerGroup(64));
            let g128 = e(Granularity::PerGroup(128));
            let row = e(Granularity::PerRow);
            let tensor = e(Granularity::PerTensor);
            assert!(g64 <= g128 && g128 <= row && row <= tensor, "seed {seed} bits {bits}");
        }
    }
}

#[test]
fn constant_partitions() {
    let fit = |v: &[f64], s: Signedness| QuantParams::fit(v, &QuantScheme::new(4, s, Granularity::PerTensor)).unwrap();
    // All-zero partitions fall back to s = 1 and the code of 0.
    let p = fit(&[0.0, 0.0], Signedness::Unsigned);
    assert_eq!((p.scale, p.zero_point), (1.0, 0));
    let p = fit(&[0.0, 0.0], Signedness::Signed);
    assert_eq!((p.scale, p.zero_point), (1.0, -8));
    // A non-zero constant keeps 0 in range and reconstructs exactly.
    let x = Tensor::row_vector(vec![5.0, 5.0]);
    let q = quantize(&x, &QuantScheme::new(4, Signedness::Unsigned, Granularity::PerTensor)).unwrap();
    assert_eq!(q.values(), &[15, 15]);
    assert_eq!(q.dequantize().as_slice(), x.as_slice());
}
