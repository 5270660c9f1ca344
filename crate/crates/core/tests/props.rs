//! Property tests over the serialization round-trips and the metric/loss
//! invariants.

mod common;

use proptest::prelude::*;

use common::random_box;
use stn_detect::checkpoint::Checkpoint;
use stn_detect::data::{load_labels, serialize_labels};
use stn_detect::detector::{ciou, BBox, Detection};
use stn_detect::metrics::{average_precision, evaluate, iou};
use stn_detect::rng::Rng;

fn arb_entry() -> impl Strategy<Value = (String, Vec<usize>, Vec<f64>)> {
    (1usize..4, 1usize..4, "[a-z]{1,8}").prop_flat_map(|(a, b, name)| {
        proptest::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), a * b)
            .prop_map(move |data| (name.clone(), vec![a, b], data))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn checkpoint_roundtrip_bitexact(entries in proptest::collection::vec(arb_entry(), 1..5)) {
        let mut ck = Checkpoint::new();
        for (i, (name, shape, data)) in entries.iter().enumerate() {
            ck.push(format!("{name}_{i}"), shape, data.clone());
        }
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.entries.len(), ck.entries.len());
        for (a, b) in ck.entries.iter().zip(&back.entries) {
            prop_assert_eq!(&a.name, &b.name);
            prop_assert_eq!(&a.shape, &b.shape);
            let bits_a: Vec<u64> = a.data.iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.data.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn label_roundtrip_canonical(seed in 0u64..1000, n in 0usize..6) {
        let mut rng = Rng::new(seed);
        let mut boxes: Vec<BBox> = Vec::new();
        for _ in 0..n {
            let cls = rng.next_below(3);
            boxes.push(random_box(&mut rng, cls));
        }
        let text = serialize_labels(&boxes);
        let parsed = load_labels(&text, 3).unwrap();
        let again = serialize_labels(&parsed);
        prop_assert_eq!(&again, &text);
        // parsing the canonical form is stable
        let parsed2 = load_labels(&again, 3).unwrap();
        prop_assert_eq!(serialize_labels(&parsed2), text);
    }

    #[test]
    fn ciou_bounds_and_identity(seed in 0u64..2000) {
        let mut rng = Rng::new(seed);
        let a = random_box(&mut rng, 0);
        let b = random_box(&mut rng, 0);
        let v = ciou(&a, &b).unwrap();
        prop_assert!(v > -1.0 && v <= 1.0, "ciou {} out of range", v);
        // 1 - ciou >= 1 - iou >= 0
        let i = iou(&a, &b).unwrap();
        prop_assert!(v <= i + 1e-15);
        prop_assert_eq!(ciou(&a, &a).unwrap(), 1.0);
        if v == 1.0 {
            prop_assert_eq!(a, b);
        }
        // symmetry of the iou and center terms: swapping the roles only
        // changes the aspect term's sign inside a square
        let swapped = ciou(&b, &a).unwrap();
        prop_assert!((v - swapped).abs() < 0.5); // both share iou and rho terms
    }

    #[test]
    fn ciou_translation_invariance(seed in 0u64..500) {
        let mut rng = Rng::new(seed);
        let a = BBox::checked(0, 0.3, 0.3, 0.2, 0.15).unwrap();
        let b = BBox::checked(0, 0.35, 0.32, 0.1, 0.25).unwrap();
        let dx = rng.uniform(-0.1, 0.3);
        let dy = rng.uniform(-0.1, 0.3);
        let shift = |b: &BBox| BBox {
            cx: b.cx + dx,
            cy: b.cy + dy,
            ..*b
        };
        let before = ciou(&a, &b).unwrap();
        let after = ciou(&shift(&a), &shift(&b)).unwrap();
        prop_assert!((before - after).abs() < 1e-9);
    }

    #[test]
    fn ap_non_increasing_in_iou_threshold(seed in 0u64..300) {
        let mut rng = Rng::new(seed);
        let gts: Vec<Vec<BBox>> = (0..3)
            .map(|_| (0..rng.next_below(4)).map(|_| random_box(&mut rng, 0)).collect())
            .collect();
        let dets: Vec<Vec<Detection>> = gts
            .iter()
            .map(|g| {
                let mut v: Vec<Detection> = g
                    .iter()
                    .map(|b| Detection { bbox: *b, score: rng.uniform(0.1, 1.0) })
                    .collect();
                for _ in 0..rng.next_below(3) {
                    v.push(Detection { bbox: random_box(&mut rng, 0), score: rng.uniform(0.1, 1.0) });
                }
                v
            })
            .collect();
        let mut prev = f64::INFINITY;
        for thr in [0.5, 0.6, 0.7, 0.8, 0.9] {
            let ap = average_precision(&dets, &gts, thr).unwrap();
            prop_assert!(ap <= prev + 1e-12, "AP increased from {} to {} at {}", prev, ap, thr);
            prev = ap;
        }
    }

    #[test]
    fn adding_false_positive_never_raises_precision_or_ap(seed in 0u64..300) {
        let mut rng = Rng::new(seed);
        let gts = vec![(0..1 + rng.next_below(3)).map(|_| random_box(&mut rng, 0)).collect::<Vec<_>>()];
        let mut dets: Vec<Detection> = Vec::new();
        for b in &gts[0] {
            let keep = rng.next_f64() < 0.8;
            let score = rng.uniform(0.3, 1.0);
            if keep {
                dets.push(Detection { bbox: *b, score });
            }
        }
        let before_ap = average_precision(&[dets.clone()], &gts, 0.5).unwrap();
        let before = evaluate(&[dets.clone()], &gts, 0.0, 1).unwrap();
        // a detection far from every gt (itself tiny, in a corner)
        dets.push(Detection {
            bbox: BBox::checked(0, 0.98, 0.98, 0.02, 0.02).unwrap(),
            score: rng.uniform(0.0, 1.0),
        });
        let after_ap = average_precision(&[dets.clone()], &gts, 0.5).unwrap();
        let after = evaluate(&[dets], &gts, 0.0, 1).unwrap();
        prop_assert!(after_ap <= before_ap + 1e-12);
        prop_assert!(after.precision <= before.precision + 1e-12);
    }

    #[test]
    fn evaluation_invariant_under_image_permutation(seed in 0u64..200) {
        let mut rng = Rng::new(seed);
        let gts: Vec<Vec<BBox>> = (0..4)
            .map(|_| (0..rng.next_below(3)).map(|_| random_box(&mut rng, 0)).collect())
            .collect();
        let dets: Vec<Vec<Detection>> = gts
            .iter()
            .map(|g| {
                g.iter()
                    .map(|b| Detection { bbox: *b, score: rng.uniform(0.1, 1.0) })
                    .collect()
            })
            .collect();
        let r1 = evaluate(&dets, &gts, 0.25, 1).unwrap();
        let perm = [2usize, 0, 3, 1];
        let dets_p: Vec<_> = perm.iter().map(|&i| dets[i].clone()).collect();
        let gts_p: Vec<_> = perm.iter().map(|&i| gts[i].clone()).collect();
        let r2 = evaluate(&dets_p, &gts_p, 0.25, 1).unwrap();
        prop_assert_eq!(r1.precision.to_bits(), r2.precision.to_bits());
        prop_assert_eq!(r1.recall.to_bits(), r2.recall.to_bits());
        prop_assert!((r1.map50 - r2.map50).abs() < 1e-12);
    }
}
