//! Property tests over the pure-function surfaces.

use egomotion::arch::{parse_arch, LayerSpec, NetworkSpec};
use egomotion::data::{rotation_bin, warp, BinEdges, PlanarTransform, IMG_SIDE};
use egomotion::ops::softmax_xent;
use egomotion::tensor::Tensor;
use proptest::prelude::*;

fn arb_layer() -> impl Strategy<Value = LayerSpec> {
    prop_oneof![
        (1usize..512).prop_map(|width| LayerSpec::Conv {
            width,
            kernel: 5,
            stride: 1,
            pad: 0,
            relu_after: true,
        }),
        Just(LayerSpec::Pool {
            kernel: 2,
            stride: 2
        }),
        (1usize..2000).prop_map(|width| LayerSpec::Fc {
            width,
            relu_after: true,
        }),
        Just(LayerSpec::Dropout),
    ]
}

fn arb_spec() -> impl Strategy<Value = NetworkSpec> {
    (proptest::collection::vec(arb_layer(), 1..8), any::<bool>()).prop_map(
        |(mut layers, with_output)| {
            if with_output {
                layers.push(LayerSpec::Output);
            }
            NetworkSpec { layers }
        },
    )
}

proptest! {
    /// Printing a valid spec and parsing it back is the identity.
    #[test]
    fn parse_print_round_trip(spec in arb_spec()) {
        let printed = spec.print();
        let back = parse_arch(&printed).unwrap();
        prop_assert_eq!(back, spec);
    }

    /// Rotation bins match a linear interval scan everywhere in range.
    #[test]
    fn rotation_bin_matches_interval_scan(theta in -30.0f64..30.0) {
        let scan = (0..20)
            .find(|k| {
                let lo = -30.0 + *k as f64 * 3.0;
                theta >= lo && theta < lo + 3.0
            })
            .unwrap();
        prop_assert_eq!(rotation_bin(theta), scan);
    }

    /// Uniform config-supplied bins agree with the scan oracle and clamp.
    #[test]
    fn bin_edges_match_interval_scan(v in -10.0f64..10.0, bins in 1usize..40) {
        let e = BinEdges::new(-4.0, 6.0, bins).unwrap();
        let got = e.index_of(v).unwrap();
        let width = 10.0 / bins as f64;
        let scan = if v < -4.0 {
            0
        } else if v >= 6.0 {
            bins - 1
        } else {
            (0..bins)
                .find(|k| {
                    let lo = -4.0 + *k as f64 * width;
                    v >= lo && v < lo + width
                })
                .unwrap_or(bins - 1)
        };
        prop_assert_eq!(got, scan);
    }

    /// Warps keep pixel values inside [0,1], and the identity transform is
    /// the identity on pixels.
    #[test]
    fn warp_stays_in_unit_interval(
        seed in proptest::collection::vec(0.0f32..1.0, IMG_SIDE * IMG_SIDE),
        tx in -3i32..=3,
        ty in -3i32..=3,
        theta in -30.0f64..30.0,
    ) {
        let out = warp(&seed, IMG_SIDE, &PlanarTransform { tx, ty, theta_deg: theta });
        prop_assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
        let id = warp(&seed, IMG_SIDE, &PlanarTransform::IDENTITY);
        prop_assert_eq!(id, seed);
    }

    /// Softmax rows are probability distributions.
    #[test]
    fn softmax_rows_sum_to_one(
        logits in proptest::collection::vec(-40.0f64..40.0, 24),
        label in 0usize..6,
    ) {
        let t = Tensor::new(vec![4, 6], logits).unwrap();
        let r = softmax_xent(&t, &[label, label, label, label]).unwrap();
        for row in r.probs.data().chunks(6) {
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12, "row sums to {}", sum);
            prop_assert!(row.iter().all(|p| *p >= 0.0));
        }
        prop_assert!(r.loss >= 0.0);
    }

    /// Slow-feature similarity labeling is symmetric in the two frames.
    #[test]
    fn sfa_similarity_is_symmetric(
        tx1 in -3i32..=3, ty1 in -3i32..=3, th1 in -30.0f64..30.0,
        tx2 in -3i32..=3, ty2 in -3i32..=3, th2 in -30.0f64..30.0,
    ) {
        let a = PlanarTransform { tx: tx1, ty: ty1, theta_deg: th1 };
        let b = PlanarTransform { tx: tx2, ty: ty2, theta_deg: th2 };
        let sim = |rel: PlanarTransform| {
            rel.tx.abs() <= 1 && rel.ty.abs() <= 1 && rel.theta_deg.abs() <= 3.0
        };
        prop_assert_eq!(sim(a.relative_to(&b)), sim(b.relative_to(&a)));
    }
}
