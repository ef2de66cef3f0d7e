mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use sparsecoder::mask::{AttentionMaskSpec, AttentionPattern, DenseMask};

fn spec_strategy() -> impl Strategy<Value = (usize, usize, Vec<usize>, Vec<usize>)> {
    (1usize..48, 2usize..20).prop_flat_map(|(n, w)| {
        (Just(n), Just(w), proptest::collection::vec(0..n, 0..6), proptest::collection::vec(0..n, 0..12))
    })
}

proptest! {
    #[test]
    fn structural_pairs_match_oracle((n, w, g, i) in spec_strategy()) {
        let spec = AttentionMaskSpec::new(n, w, &g, &i).unwrap();
        let got: BTreeSet<_> = spec.iter_allowed_pairs().collect();
        prop_assert_eq!(&got, &common::oracle_pairs(n, w, &g, &i));
        let dense: BTreeSet<_> = DenseMask::build(n, w, &g, &i).allowed_pairs().into_iter().collect();
        prop_assert_eq!(&got, &dense);
        prop_assert_eq!(spec.nonzero_count(), got.len());
    }

    #[test]
    fn rows_are_sorted_and_contain_diagonal((n, w, g, i) in spec_strategy()) {
        let spec = AttentionMaskSpec::new(n, w, &g, &i).unwrap();
        let pattern = AttentionPattern::from_spec(&spec);
        prop_assert_eq!(pattern.nnz(), spec.nonzero_count());
        for r in 0..n {
            let row = pattern.row(r);
            prop_assert!(row.windows(2).all(|p| p[0] < p[1]));
            prop_assert!(row.contains(&(r as u32)));
            prop_assert_eq!(row.len(), spec.row_count(r));
        }
    }

    #[test]
    fn mask_is_symmetric((n, w, g, i) in spec_strategy()) {
        let spec = AttentionMaskSpec::new(n, w, &g, &i).unwrap();
        for (a, b) in spec.iter_allowed_pairs() {
            prop_assert!(spec.allows(b, a));
        }
    }

    #[test]
    fn pattern_counts_bound_union((n, w, g, i) in spec_strategy()) {
        let c = AttentionMaskSpec::new(n, w, &g, &i).unwrap().pattern_counts();
        prop_assert!(c.union <= c.local + c.global + c.identifier);
        prop_assert!(c.union >= c.local.max(c.global).max(c.identifier));
    }

    #[test]
    fn padding_rows_see_only_themselves((n, w, g, i) in spec_strategy(), extra in 0usize..5) {
        let spec = AttentionMaskSpec::new(n, w, &g, &i).unwrap();
        let padded = AttentionPattern::from_spec_padded(&spec, n + extra);
        let plain = AttentionPattern::from_spec(&spec);
        for r in 0..n {
            prop_assert_eq!(padded.row(r), plain.row(r));
        }
        for r in n..n + extra {
            prop_assert_eq!(padded.row(r), &[r as u32][..]);
        }
    }
}

#[test]
fn out_of_range_and_small_window_are_errors() {
    assert!(AttentionMaskSpec::new(4, 2, &[4], &[]).is_err());
    assert!(AttentionMaskSpec::new(4, 1, &[], &[]).is_err());
    assert!(AttentionMaskSpec::new(0, 2, &[], &[]).unwrap().nonzero_count() == 0);
}

#[test]
fn odd_window_matches_even_below() {
    let a: Vec<_> = AttentionMaskSpec::new(20, 5, &[3], &[7, 15]).unwrap().iter_allowed_pairs().collect();
    let b: Vec<_> = AttentionMaskSpec::new(20, 4, &[3], &[7, 15]).unwrap().iter_allowed_pairs().collect();
    assert_eq!(a, b);
}
