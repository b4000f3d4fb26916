use proptest::prelude::*;

use carcensus::catalog::{BodyType, Catalog, Country, Make, VehicleCategory, BODY_TYPES, COUNTRIES, MAKES};
use carcensus::detection::{iou, match_greedy, BoundingBox, Detection};
use carcensus::features::{aggregate_features, RegionCensus, PERCENT_GROUPS};

fn catalog() -> Catalog {
    let cats = (0..40)
        .map(|i| VehicleCategory {
            category_id: format!("k{i}"),
            make: Make::parse(MAKES[i % MAKES.len()]).unwrap(),
            model: format!("model{i}"),
            body_type: BodyType::parse(BODY_TYPES[(i * 7) % BODY_TYPES.len()]).unwrap(),
            year_min: 1990 + (i as i32 * 3) % 25,
            year_max: 1990 + (i as i32 * 3) % 25,
            country: Country::parse(COUNTRIES[(i * 5) % COUNTRIES.len()]).unwrap(),
            city_mpg: (i % 9 != 0).then_some(15.0 + i as f64 * 0.5),
            highway_mpg: (i % 9 != 0).then_some(22.0 + i as f64 * 0.5),
            price_usd: 8_000.0 + 1_500.0 * i as f64,
            is_hybrid: false,
            is_electric: i % 9 == 0,
        })
        .collect();
    Catalog::new(cats).unwrap()
}

fn census(cats: &[usize], images: u64) -> RegionCensus {
    RegionCensus {
        region_id: "r".into(),
        image_count: images,
        detections: cats
            .iter()
            .map(|c| {
                Detection::new("img", "r", BoundingBox::new(0.0, 0.0, 50.0, 50.0), 0.0)
                    .with_classes(&[(&format!("k{c}"), 0.8)])
            })
            .collect(),
    }
}

proptest! {
    #[test]
    fn percentage_groups_sum_to_one_hundred(cats in prop::collection::vec(0usize..40, 1..120), images in 1u64..50) {
        let f = aggregate_features(&census(&cats, images), &catalog()).unwrap();
        prop_assert_eq!(f.len(), 88);
        for g in PERCENT_GROUPS {
            let s: f64 = f.as_slice()[g].iter().sum();
            prop_assert!((s - 100.0).abs() <= 1e-6);
        }
        prop_assert!((f[0] - cats.len() as f64 / images as f64).abs() <= 1e-12);
    }

    #[test]
    fn detection_order_does_not_matter(cats in prop::collection::vec(0usize..40, 1..60), rot in 0usize..60) {
        let mut shuffled = cats.clone();
        let r = rot % shuffled.len();
        shuffled.rotate_left(r);
        let a = aggregate_features(&census(&cats, 3), &catalog()).unwrap();
        let b = aggregate_features(&census(&shuffled, 3), &catalog()).unwrap();
        for i in 0..88 {
            prop_assert!((a[i] - b[i]).abs() <= 1e-9);
        }
    }

    #[test]
    fn repeating_the_census_leaves_features_unchanged(cats in prop::collection::vec(0usize..40, 1..40), k in 2usize..5) {
        let repeated: Vec<usize> = cats.iter().cycle().take(cats.len() * k).copied().collect();
        let a = aggregate_features(&census(&cats, 4), &catalog()).unwrap();
        let b = aggregate_features(&census(&repeated, 4 * k as u64), &catalog()).unwrap();
        for i in 0..88 {
            prop_assert!((a[i] - b[i]).abs() <= 1e-9);
        }
    }

    #[test]
    fn iou_is_bounded_symmetric_and_translation_invariant(
        a in (0.0f64..500.0, 0.0f64..500.0, 0.5f64..200.0, 0.5f64..200.0),
        b in (0.0f64..500.0, 0.0f64..500.0, 0.5f64..200.0, 0.5f64..200.0),
        t in (-300.0f64..300.0, -300.0f64..300.0),
    ) {
        let a = BoundingBox::new(a.0, a.1, a.2, a.3);
        let b = BoundingBox::new(b.0, b.1, b.2, b.3);
        let v = iou(&a, &b);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(v, iou(&b, &a));
        prop_assert!((v - iou(&a.translate(t.0, t.1), &b.translate(t.0, t.1))).abs() <= 1e-9);
        prop_assert!((iou(&a, &a) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn greedy_matching_uses_each_truth_at_most_once(
        dets in prop::collection::vec((0.0f64..100.0, 0.0f64..100.0), 0..15),
        truths in prop::collection::vec((0.0f64..100.0, 0.0f64..100.0), 0..8),
    ) {
        let boxes = |v: &[(f64, f64)]| v.iter().map(|p| BoundingBox::new(p.0, p.1, 30.0, 30.0)).collect::<Vec<_>>();
        let m = match_greedy(&boxes(&dets), &boxes(&truths), 0.5);
        prop_assert_eq!(m.len(), dets.len());
        prop_assert!(m.iter().filter(|x| **x).count() <= truths.len());
    }
}
