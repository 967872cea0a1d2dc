use kdmsi::data::{derive_image_label, split_dataset, tile_scene, ImageLabel, ImagePair, PixelMask, SplitRatios};
use kdmsi::kd::{ChangeProbabilityMap, Provenance};
use kdmsi::metrics::{class_iou, confusion, f1, mean_iou, overall_accuracy, Class, ConfusionMatrix, F1Mode};
use kdmsi::msi::{pseudo_label, scaled_side};
use kdmsi::optim::PolySchedule;
use kdmsi::tensor::Tensor;
use proptest::prelude::*;

fn mask(h: usize, w: usize) -> impl Strategy<Value = PixelMask> {
    prop::collection::vec(0u8..=1, h * w).prop_map(move |d| PixelMask::new(h, w, d).unwrap())
}

fn cm() -> impl Strategy<Value = ConfusionMatrix> {
    (0u64..500, 0u64..500, 0u64..500, 0u64..500).prop_map(|(a, b, c, d)| ConfusionMatrix::new(a, b, c, d))
}

proptest! {
    #[test]
    fn confusion_total_and_accumulation(a in mask(8, 8), b in mask(8, 8), c in mask(8, 8)) {
        let ab = confusion(&a, &b).unwrap();
        prop_assert_eq!(ab.total(), 64);
        let mut x = ab;
        x += confusion(&c, &b).unwrap();
        let mut y = confusion(&c, &b).unwrap();
        y += ab;
        prop_assert_eq!(x, y);
    }

    #[test]
    fn metrics_lie_in_unit_interval(m in cm()) {
        for v in [overall_accuracy(&m), class_iou(&m, Class::Change), mean_iou(&m), f1(&m, F1Mode::Change), f1(&m, F1Mode::Macro)] {
            prop_assert!((0.0..=1.0).contains(&v), "{v}");
        }
    }

    #[test]
    fn split_is_a_partition(n in 3usize..200, seed in any::<u64>()) {
        let ids: Vec<String> = (0..n).map(|i| format!("id{i}")).collect();
        let s = split_dataset(&ids, SplitRatios::default(), seed).unwrap();
        let mut all: Vec<&String> = s.train.iter().chain(&s.val).chain(&s.test).collect();
        all.sort();
        all.dedup();
        prop_assert_eq!(all.len(), n);
        prop_assert_eq!(s.train.len() + s.val.len() + s.test.len(), n);
    }

    #[test]
    fn pseudo_labels_shrink_as_threshold_rises(v in prop::collection::vec(0.0f64..=1.0, 64), t1 in 0.01f64..0.99, t2 in 0.01f64..0.99) {
        let map = ChangeProbabilityMap::from_tensor(Tensor::from_vec(1, 8, 8, v).unwrap(), Provenance::Msi).unwrap();
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let a = pseudo_label(&map, lo).unwrap().labels;
        let b = pseudo_label(&map, hi).unwrap().labels;
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!(x >= y);
        }
    }

    #[test]
    fn tiles_cover_the_scene_without_overlap(m in mask(40, 40)) {
        let tile = 8;
        let pair = ImagePair::new("scene", Tensor::zeros(3, 40, 40), Tensor::zeros(3, 40, 40)).unwrap();
        let tiles = tile_scene(&pair, &m, tile).unwrap();
        prop_assert_eq!(tiles.len(), 25);
        let changed: usize = tiles.iter().map(|(_, t)| t.count_changed()).sum();
        prop_assert_eq!(changed, m.count_changed());
    }

    #[test]
    fn image_label_matches_any_change(m in mask(6, 6)) {
        let y = derive_image_label(&m, 0.0);
        prop_assert_eq!(y == ImageLabel::Change, m.count_changed() > 0);
    }

    #[test]
    fn scaled_side_is_a_positive_multiple(n in 1usize..300, s in 0.1f64..3.0, k in 1usize..33) {
        let side = scaled_side(n, s, k);
        prop_assert!(side >= k);
        prop_assert_eq!(side % k, 0);
    }

    #[test]
    fn poly_schedule_is_monotone(total in 1usize..500, p in 0.1f64..3.0) {
        let s = PolySchedule { initial_lr: 0.01, total_steps: total, power: p };
        prop_assert_eq!(s.lr(0), 0.01);
        for t in 1..total {
            prop_assert!(s.lr(t) <= s.lr(t - 1));
        }
    }
}
