use std::sync::Arc;

use audioshield::attack::{genetic_attack, AttackConfig};
use audioshield::audio::{to_mono, AudioClip};
use audioshield::classifier::{Classifier, ClassifierError, ProbVector};
use audioshield::detection::{
    cp_vector, l1_distance, l1_score, learn_l1_threshold, learn_vote_threshold_from_counts, majority_from_counts,
    sad_vector, EnsembleVerdict,
};
use audioshield::learners::{fit_tree, LabeledVector, TreeParams};
use proptest::collection::vec;
use proptest::prelude::*;

/// Normalized probability vector of dimension `c` from positive weights.
fn probs(c: usize) -> impl Strategy<Value = Vec<f64>> {
    vec(0.001f64..1.0, c).prop_map(|w| {
        let s: f64 = w.iter().sum();
        w.iter().map(|v| v / s).collect()
    })
}

/// Raw vector plus `k` member vectors over `c` classes.
fn verdict_parts() -> impl Strategy<Value = (Vec<f64>, Vec<Vec<f64>>)> {
    (2usize..8, 1usize..8).prop_flat_map(|(c, k)| (probs(c), vec(probs(c), k)))
}

fn verdict(raw: &[f64], members: &[Vec<f64>]) -> EnsembleVerdict {
    EnsembleVerdict::from_probs(
        ProbVector::from_slice(raw).unwrap(),
        members.iter().map(|m| ProbVector::from_slice(m).unwrap()).collect(),
    )
    .unwrap()
}

/// Class "loud" grows smoothly with RMS.
struct Energy(Arc<[String]>);

impl Classifier for Energy {
    fn class_names(&self) -> &[String] {
        &self.0
    }
    fn predict(&self, clip: &AudioClip) -> Result<ProbVector, ClassifierError> {
        let loud = 1.0 / (1.0 + (-(clip.rms() - 0.1) * 100.0).exp());
        ProbVector::new(vec![1.0 - loud, loud], self.0.clone())
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn verdict_fields_are_consistent((raw, members) in verdict_parts()) {
        let v = verdict(&raw, &members);
        let k = members.len();
        prop_assert_eq!(v.votes.len(), k);
        prop_assert_eq!(v.vote_count, v.votes.iter().filter(|&&b| b).count());
        let top = v.raw_probs.argmax();
        for (vote, p) in v.votes.iter().zip(&v.member_probs) {
            prop_assert_eq!(*vote, p.argmax() != top);
        }
        prop_assert!((0.0..=2.0 + 1e-12).contains(&v.l1_score));
    }

    #[test]
    fn sad_is_bounded_by_ensemble_size((raw, members) in verdict_parts()) {
        let v = verdict(&raw, &members);
        let sad = sad_vector(&v);
        prop_assert_eq!(sad.len(), raw.len());
        prop_assert!(sad.iter().all(|&s| (0.0..=members.len() as f64).contains(&s)));
    }

    #[test]
    fn cp_blocks_each_sum_to_one((raw, members) in verdict_parts()) {
        let cp = cp_vector(&verdict(&raw, &members));
        prop_assert_eq!(cp.len(), (members.len() + 1) * raw.len());
        for block in cp.chunks(raw.len()) {
            prop_assert!((block.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn l1_is_a_metric_on_pairs(a in probs(5), b in probs(5)) {
        let d = l1_distance(&a, &b);
        prop_assert!(d >= 0.0);
        prop_assert_eq!(d, l1_distance(&b, &a));
        prop_assert_eq!(l1_distance(&a, &a), 0.0);
        prop_assert_eq!(d == 0.0, a == b);
        let r = ProbVector::from_slice(&a).unwrap();
        prop_assert_eq!(l1_score(&r, &[ProbVector::from_slice(&b).unwrap()]).unwrap(), d);
    }

    #[test]
    fn majority_is_monotone_in_votes(k in 1usize..12, count in 0usize..12) {
        let count = count.min(k);
        if majority_from_counts(count, k) && count < k {
            prop_assert!(majority_from_counts(count + 1, k));
        }
    }

    #[test]
    fn vote_threshold_lies_in_range(
        k in 1usize..8,
        counts in vec((0usize..8, any::<bool>()), 2..40),
    ) {
        let mut set: Vec<(usize, bool)> = counts.into_iter().map(|(v, y)| (v.min(k), y)).collect();
        set[0].1 = true;
        set[1].1 = false;
        let m = learn_vote_threshold_from_counts(&set, k).unwrap();
        prop_assert!(m.threshold.fract() == 0.0 && (0.0..=k as f64).contains(&m.threshold));
        prop_assert!((0.0..=1.0).contains(&m.training_f1));
    }

    #[test]
    fn l1_threshold_is_nonnegative(scores in vec((0.0f64..2.0, any::<bool>()), 2..40)) {
        let mut set = scores;
        set[0].1 = true;
        set[1].1 = false;
        if let Ok(m) = learn_l1_threshold(&set) {
            prop_assert!(m.threshold >= 0.0);
        }
    }

    #[test]
    fn tree_leaves_are_fractions_and_fits_repeat(
        rows in vec((vec(-3.0f64..3.0, 2), any::<bool>()), 1..30),
        depth in 0usize..5,
    ) {
        let data: Vec<LabeledVector> = rows.into_iter().map(|(x, y)| LabeledVector::new(x, y)).collect();
        let params = TreeParams { max_depth: depth, min_leaf: 1 };
        let a = fit_tree(&data, &params, 0).unwrap();
        let b = fit_tree(&data, &params, 0).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.depth() <= depth);
        for v in &data {
            prop_assert!((0.0..=1.0).contains(&a.leaf_value(&v.features)));
        }
    }

    #[test]
    fn to_mono_is_idempotent(frames in vec((-1.0f64..=1.0, -1.0f64..=1.0), 1..200)) {
        let interleaved: Vec<f64> = frames.iter().flat_map(|&(l, r)| [l, r]).collect();
        let once = to_mono(&AudioClip::new(interleaved, 16000, 2).unwrap());
        prop_assert_eq!(to_mono(&once), once);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn attack_stays_in_epsilon_ball(
        source in vec(-0.2f64..0.2, 200..600),
        epsilon in 0.001f64..0.5,
        seed in any::<u64>(),
        target in 0usize..2,
    ) {
        let model = Energy(vec!["quiet".to_string(), "loud".to_string()].into());
        let clip = AudioClip::mono(source, 16000);
        let config = AttackConfig { epsilon, max_iterations: 15, population_size: 8, elite_count: 2, seed, ..AttackConfig::default() };
        let result = genetic_attack(&clip, &model.0[target].clone(), &model, &config).unwrap();
        for (a, b) in clip.samples().iter().zip(result.adversarial_clip.samples()) {
            prop_assert!((a - b).abs() <= epsilon + 1e-12);
            prop_assert!(b.abs() <= 1.0);
        }
        prop_assert!(result.fitness_history.windows(2).all(|w| w[1] >= w[0]));
        let label = model.predict(&result.adversarial_clip).unwrap().argmax();
        prop_assert_eq!(result.success, label == target);
    }
}
