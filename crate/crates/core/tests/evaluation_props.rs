mod common;

use proptest::prelude::*;
use sliceforest::evaluation::{edit_distance, GroundTruth};
use sliceforest::image_model::{Dims, LabelMap};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn self_distance_is_zero(seed in any::<u64>(), w in 4usize..20, h in 4usize..20, depth in 1usize..6) {
        let x = common::random_reconstruction(&mut common::rng(seed), Dims::new(w, h), depth);
        let gt = GroundTruth::from_reconstruction(&x).unwrap();
        let report = edit_distance(&x, &gt).unwrap();
        prop_assert_eq!(report.total, 0);
        prop_assert!(report.is_consistent());
    }

    #[test]
    fn removing_links_counts_each_once(seed in any::<u64>(), depth in 2usize..6, drop in 0usize..8) {
        let mut x = common::random_reconstruction(&mut common::rng(seed), Dims::new(12, 12), depth);
        let gt = GroundTruth::from_reconstruction(&x).unwrap();
        let drop = drop.min(x.links.len());
        x.links.truncate(x.links.len() - drop);
        let report = edit_distance(&x, &gt).unwrap();
        prop_assert_eq!(report.inter_split, drop);
        prop_assert_eq!(report.total, drop);
    }

    #[test]
    fn relabeling_segments_changes_nothing(seed in any::<u64>(), depth in 1usize..5, shift in 1u32..1000) {
        let x = common::random_reconstruction(&mut common::rng(seed), Dims::new(10, 10), depth);
        let gt = GroundTruth::from_reconstruction(&x).unwrap();
        let mut y = x.clone();
        for map in &mut y.labels {
            for id in &mut map.ids {
                if *id != 0 {
                    *id += shift;
                }
            }
        }
        for link in &mut y.links {
            for e in link.sources.iter_mut().chain(link.targets.iter_mut()) {
                e.label += shift;
            }
        }
        prop_assert_eq!(edit_distance(&y, &gt).unwrap().total, 0);
    }
}

#[test]
fn merged_and_split_segments_are_counted() {
    let dims = Dims::new(4, 1);
    let gt = GroundTruth::from_labels(
        vec![LabelMap {
            dims,
            ids: vec![1, 1, 2, 2],
        }],
        [],
    )
    .unwrap();
    let mut merged = common::random_reconstruction(&mut common::rng(0), dims, 1);
    merged.links.clear();
    merged.labels = vec![LabelMap {
        dims,
        ids: vec![5, 5, 5, 5],
    }];
    // Neither reference segment covers more than half of the merged one, so
    // it stays unmatched: two missed reference segments, one extra segment.
    let r = edit_distance(&merged, &gt).unwrap();
    assert_eq!((r.intra_merge, r.intra_split), (2, 1));

    merged.labels = vec![LabelMap {
        dims,
        ids: vec![1, 3, 2, 4],
    }];
    let r = edit_distance(&merged, &gt).unwrap();
    // Each half is split in two; one piece per reference segment counts as
    // the match, the other as an extra.
    assert_eq!((r.intra_merge, r.intra_split), (0, 2));
}
