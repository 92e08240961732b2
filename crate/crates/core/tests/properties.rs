use std::collections::BTreeMap;

use atba::align::{align_transitions, build_cost_matrix};
use atba::boundary::{greedy_suppression, score_boundaries};
use atba::eval::{iou_iod, mof, segment_scores};
use atba::oracles::{brute_force_with_ties, exhaustive_segmentation_aligner, log_likelihood};
use atba::synth::{generate_video, GeneratorSpec};
use atba::{atba_pipeline, Config, ProbabilitySequence, PseudoLabels, TransitionScoreMatrix};
use proptest::prelude::*;

fn score_matrix() -> impl Strategy<Value = TransitionScoreMatrix> {
    (2usize..=6)
        .prop_flat_map(|m| ((m - 1).max(1)..=12, Just(m)))
        .prop_flat_map(|(k, m)| {
            let value = prop_oneof![(-2i32..=2).prop_map(|v| f64::from(v) * 0.5), -1.0..1.0f64];
            prop::collection::vec(prop::collection::vec(value, m - 1), k)
        })
        .prop_map(|rows| TransitionScoreMatrix::from_rows(&rows).unwrap())
}

fn labels(max_frames: usize, classes: u32) -> impl Strategy<Value = PseudoLabels> {
    prop::collection::vec(1..=classes, 1..max_frames).prop_map(|v| PseudoLabels::new(v).unwrap())
}

fn label_pair() -> impl Strategy<Value = (PseudoLabels, PseudoLabels)> {
    (1usize..40).prop_flat_map(|t| {
        let runs = |t| {
            prop::collection::vec((1u32..5, 1usize..6), 1..t + 1).prop_map(move |runs| {
                let mut v: Vec<u32> = runs.iter().flat_map(|&(c, n)| std::iter::repeat_n(c, n)).take(t).collect();
                let last = *v.last().unwrap();
                v.resize(t, last);
                PseudoLabels::new(v).unwrap()
            })
        };
        (runs(t), runs(t))
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 500, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn dynamic_program_matches_brute_force(scores in score_matrix()) {
        let fast = align_transitions(&build_cost_matrix(&scores).unwrap()).unwrap();
        let (slow, optima) = brute_force_with_ties(&scores).unwrap();
        prop_assert_eq!(fast.cost, slow.cost);
        // both sides prefer dropping later candidates on ties
        prop_assert_eq!(&fast.matched, &slow.matched, "{} optima", optima);
        prop_assert!(fast.boundaries.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn suppression_is_monotone_in_cap(scores in prop::collection::vec(0.0..1.0f64, 2..60), radius in 0usize..6, cap in 0usize..10) {
        let small = greedy_suppression(&scores, radius, cap);
        let large = greedy_suppression(&scores, radius, cap + 1);
        prop_assert_eq!(&large[..small.len()], &small[..]);
        // selection order is by non-increasing score
        prop_assert!(large.windows(2).all(|w| scores[w[0] - 1] >= scores[w[1] - 1]));
    }

    #[test]
    fn label_segmentation_round_trip(l in labels(50, 4)) {
        let s = l.to_segmentation();
        prop_assert_eq!(s.to_labels(), l.clone());
        prop_assert_eq!(s.frames(), l.len());
        prop_assert!(s.segments().windows(2).all(|w| w[0].class != w[1].class && w[0].end + 1 == w[1].start));
    }

    #[test]
    fn iod_never_below_iou((pred, truth) in label_pair()) {
        for (iou, iod) in segment_scores(&pred.to_segmentation(), &truth.to_segmentation()).unwrap() {
            prop_assert!(iod >= iou);
            prop_assert!((0.0..=1.0).contains(&iou) && (0.0..=1.0).contains(&iod));
        }
        let m = mof(&pred, &truth).unwrap();
        prop_assert!((0.0..=100.0).contains(&m));
        prop_assert_eq!(mof(&pred, &pred).unwrap(), 100.0);
    }

    #[test]
    fn metrics_invariant_under_relabeling((pred, truth) in label_pair(), perm in Just((1u32..=4).collect::<Vec<_>>()).prop_shuffle()) {
        let map: BTreeMap<u32, u32> = (1u32..=4).zip(perm).collect();
        let relabel = |l: &PseudoLabels| PseudoLabels::new(l.labels().iter().map(|c| map[c]).collect()).unwrap();
        let (p2, t2) = (relabel(&pred), relabel(&truth));
        prop_assert_eq!(mof(&pred, &truth).unwrap(), mof(&p2, &t2).unwrap());
        prop_assert_eq!(
            iou_iod(&pred.to_segmentation(), &truth.to_segmentation()).unwrap(),
            iou_iod(&p2.to_segmentation(), &t2.to_segmentation()).unwrap()
        );
    }

    #[test]
    fn similarity_scores_bounded(rows in (2usize..5).prop_flat_map(|c| prop::collection::vec(prop::collection::vec(0.01..1.0f64, c), 1..40))) {
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| { let s: f64 = r.iter().sum(); r.iter().map(|x| x / s).collect() }).collect();
        let seq = ProbabilitySequence::from_rows(&rows).unwrap();
        let scores = score_boundaries(&seq, &Config::default()).unwrap();
        prop_assert_eq!(scores.len(), rows.len());
        // |template| sums to (w^2 - 2w + 1) / w^2 < 1 and |similarity| <= 1
        prop_assert!(scores.scores().iter().all(|v| v.abs() <= 1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 40, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn generated_videos_are_valid(seed in any::<u64>(), index in 0usize..1000, kappa in 0.0..1.0f64, delta in 0.0..1.0f64, smoothing in 0usize..12) {
        let spec = GeneratorSpec { seed, confusion: kappa, distractor_rate: delta, smoothing, ..GeneratorSpec::default() };
        let v = generate_video(&spec, index).unwrap();
        prop_assert!(v.probabilities.validate().passed());
        prop_assert!(v.transcript.actions().windows(2).all(|w| w[0] != w[1]));
        prop_assert_eq!(v.truth.to_segmentation().classes(), v.transcript.actions().to_vec());
        prop_assert!(v.truth.to_segmentation().segments().iter().all(|s| s.len() >= spec.segment_floor()));
        if delta == 0.0 && smoothing == 0 && kappa < 0.5 {
            prop_assert_eq!(v.probabilities.argmax_labels(), v.truth);
        }
    }

    #[test]
    fn exhaustive_aligner_dominates_in_likelihood(seed in any::<u64>(), kappa in 0.05..0.5f64) {
        let spec = GeneratorSpec {
            seed, frames: (120, 200), actions: (2, 4), min_segment: 15, confusion: kappa, smoothing: 4,
            distractor_rate: 0.5, ..GeneratorSpec::default()
        };
        let v = generate_video(&spec, 0).unwrap();
        let ours = atba_pipeline(&v.probabilities, &v.transcript, &Config::default()).unwrap().labels;
        let best = exhaustive_segmentation_aligner(&v.probabilities, &v.transcript).unwrap();
        prop_assert!(log_likelihood(&v.probabilities, &best) >= log_likelihood(&v.probabilities, &ours) - 1e-9);
        prop_assert_eq!(best.to_segmentation().classes(), v.transcript.actions().to_vec());
    }
}
