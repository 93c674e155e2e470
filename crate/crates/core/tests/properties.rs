use guzheng_ipt::data::{NoteEvent, TechniqueClass};
use guzheng_ipt::fusion::{argmax_segments, decision_fusion, suppress_onsets};
use guzheng_ipt::metrics::{match_notes, note_prf};
use proptest::prelude::*;

fn probs(n: usize, t: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(0.0f64..1.0, t), n)
}

fn case() -> impl Strategy<Value = (Vec<u8>, Vec<Vec<f64>>)> {
    (1usize..=8, 1usize..=64).prop_flat_map(|(n, t)| (prop::collection::vec(0u8..=1, t), probs(n, t)))
}

fn notes() -> impl Strategy<Value = Vec<NoteEvent>> {
    prop::collection::vec((0u32..200, 0usize..3), 0..10).prop_map(|v| {
        v.into_iter()
            .map(|(k, c)| {
                let on = f64::from(k) * 0.02;
                NoteEvent::new(on, on + 0.1, TechniqueClass::ALL[c]).unwrap()
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn fused_segments_tile_the_sequence((onsets, ipt) in case()) {
        let r = decision_fusion(&onsets, &ipt).unwrap();
        prop_assert_eq!(r.segments[0].start, 0);
        prop_assert_eq!(r.segments.last().unwrap().end, onsets.len() - 1);
        for w in r.segments.windows(2) {
            prop_assert_eq!(w[0].end + 1, w[1].start);
            prop_assert_eq!(onsets[w[1].start], 1);
        }
        for i in 0..onsets.len() {
            prop_assert_eq!(r.one_hot.iter().map(|row| u32::from(row[i])).sum::<u32>(), 1);
        }
    }

    #[test]
    fn all_onsets_reduce_to_argmax((_, ipt) in case()) {
        let every = vec![1u8; ipt[0].len()];
        let fused = decision_fusion(&every, &ipt).unwrap();
        let plain = argmax_segments(&ipt).unwrap();
        prop_assert_eq!(fused.frame_classes(), plain.frame_classes());
    }

    #[test]
    fn suppression_keeps_a_subset_with_gaps(onsets in prop::collection::vec(0u8..=1, 0..200), gap in 1usize..6) {
        let kept = suppress_onsets(&onsets, gap);
        let idx: Vec<usize> = (0..kept.len()).filter(|&i| kept[i] == 1).collect();
        prop_assert!(idx.iter().all(|&i| onsets[i] == 1));
        prop_assert!(idx.windows(2).all(|w| w[1] - w[0] >= gap));
        prop_assert_eq!(idx.first().copied(), onsets.iter().position(|&o| o == 1));
    }

    #[test]
    fn matching_is_one_to_one_and_admissible(r in notes(), e in notes()) {
        let m = match_notes(&r, &e, 0.05);
        let mut ri: Vec<usize> = m.iter().map(|p| p.0).collect();
        let mut ei: Vec<usize> = m.iter().map(|p| p.1).collect();
        ri.sort_unstable();
        ri.dedup();
        ei.sort_unstable();
        ei.dedup();
        prop_assert_eq!(ri.len(), m.len());
        prop_assert_eq!(ei.len(), m.len());
        for &(i, j) in &m {
            prop_assert_eq!(r[i].technique, e[j].technique);
            prop_assert!((r[i].onset - e[j].onset).abs() <= 0.05 + 1e-9);
        }
        let s = note_prf(&r, &e, 0.05);
        let t = note_prf(&e, &r, 0.05);
        prop_assert_eq!(s.f1, t.f1);
        prop_assert_eq!(s.precision, t.recall);
    }

    #[test]
    fn self_match_is_perfect(r in notes()) {
        prop_assume!(!r.is_empty());
        let s = note_prf(&r, &r, 0.05);
        prop_assert_eq!(s.f1, 1.0);
    }
}
