mod common;

use ambulate::eval::{aggregate_votes, compute_metrics, metrics_from_confusion, EpochPred};
use common::{brute_kappa, brute_mf1};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn kappa_and_mf1_match_brute_force_on_200_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for v in 0..200 {
        let k = rng.random_range(2..=6);
        let n = rng.random_range(1..=300);
        let t: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        // bias the predictions toward the truth so κ spans a useful range
        let hit = rng.random_range(0.0..1.0);
        let p: Vec<usize> = t
            .iter()
            .map(|&y| if rng.random_bool(hit) { y } else { rng.random_range(0..k) })
            .collect();
        let m = compute_metrics(&t, &p, k).unwrap();
        assert_eq!(m.kappa, brute_kappa(&t, &p, k), "vector {v}");
        assert_eq!(m.mf1, brute_mf1(&t, &p, k), "vector {v}");
    }
}

#[test]
fn kappa_of_the_two_by_two_example() {
    let m = metrics_from_confusion(vec![vec![40, 10], vec![20, 30]]);
    assert!((m.kappa - 0.4).abs() < 1e-12, "{}", m.kappa);
    assert!((m.plain_acc - 0.7).abs() < 1e-12);
}

fn epoch(subject: &str, test: &str, i: usize, truth: usize, post: Vec<f64>) -> EpochPred {
    EpochPred { record: i, subject_id: subject.into(), test_id: test.into(), epoch_index: i, true_label: truth, posteriors: post }
}

proptest! {
    #[test]
    fn confusion_is_consistent(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..200)) {
        let (t, p): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let m = compute_metrics(&t, &p, 4).unwrap();
        let total: u64 = m.confusion.iter().flatten().sum();
        prop_assert_eq!(total as usize, t.len());
        for c in 0..4 {
            let row: u64 = m.confusion[c].iter().sum();
            prop_assert_eq!(row as usize, t.iter().filter(|&&x| x == c).count());
        }
        prop_assert!(m.kappa <= 1.0 + 1e-12);
        prop_assert!((0.0..=1.0).contains(&m.acc));
        prop_assert!((0.0..=1.0).contains(&m.mf1));
        let perfect = compute_metrics(&t, &t, 4).unwrap();
        prop_assert_eq!(perfect.kappa, 1.0);
        prop_assert_eq!(perfect.mf1, 1.0);
    }

    #[test]
    fn votes_ignore_input_order(
        rows in prop::collection::vec((0usize..3, 0usize..2, prop::collection::vec(0.0f64..1.0, 3)), 1..60),
        shuffle_seed in any::<u64>(),
    ) {
        let mut eps: Vec<EpochPred> = rows
            .iter()
            .enumerate()
            .map(|(i, (s, t, post))| {
                let subject = format!("s{s}");
                epoch(&subject, &format!("{subject}-t{t}"), i, s % 3, post.clone())
            })
            .collect();
        let a = aggregate_votes(&eps, 3);
        eps.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
        let b = aggregate_votes(&eps, 3);
        prop_assert_eq!(a.0.len(), b.0.len());
        for (x, y) in a.0.iter().zip(&b.0).chain(a.1.iter().zip(&b.1)) {
            prop_assert_eq!(&x.id, &y.id);
            prop_assert_eq!(x.pred, y.pred);
            prop_assert_eq!(&x.votes, &y.votes);
            for (u, v) in x.mean_posteriors.iter().zip(&y.mean_posteriors) {
                prop_assert!((u - v).abs() < 1e-12);
            }
        }
        let n_votes: usize = a.0.iter().map(|t| t.votes.iter().sum::<usize>()).sum();
        prop_assert_eq!(n_votes, eps.len());
    }

    #[test]
    fn unanimous_tests_take_the_common_label(k in 1usize..10, label in 0usize..3) {
        let mut post = vec![0.1; 3];
        post[label] = 0.8;
        let eps: Vec<EpochPred> = (0..k).map(|i| epoch("s", "t", i, label, post.clone())).collect();
        let (tests, subjects) = aggregate_votes(&eps, 3);
        prop_assert_eq!(tests[0].pred, label);
        prop_assert_eq!(subjects[0].pred, label);
    }
}
