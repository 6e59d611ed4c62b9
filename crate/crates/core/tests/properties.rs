//! Randomized invariants.

mod common;

use common::{random_noise, random_query};
use crlearn::fisher::query_fisher;
use crlearn::model::{j_to_lambda, lambda_to_j};
use crlearn::noise::noisy_likelihood;
use crlearn::oracle::generate_dataset;
use crlearn::qopt::{mix_uniform, project_capped_simplex, sample_batch, QueryDistribution};
use crlearn::{GrowthPolicy, JParams, Oracle, QuerySpace, RngStream};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn j_params() -> impl Strategy<Value = JParams> {
    proptest::array::uniform6(-8e6..8e6f64).prop_map(JParams::from_array)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn likelihood_is_a_probability(j in j_params(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = random_noise(&mut rng);
        let q = random_query(&mut rng, 2e-5);
        let p = noisy_likelihood(&j_to_lambda(&j), &n, &q);
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn query_fisher_is_rank_one_psd(j in j_params(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = random_noise(&mut rng);
        let f = query_fisher(&j_to_lambda(&j), &n, &random_query(&mut rng, 2e-5));
        prop_assert!((&f - f.transpose()).norm() <= 1e-12 * f.norm().max(1e-300));
        let eig = f.symmetric_eigen();
        let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
        let mut sorted: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        sorted.sort_by(|a, b| b.total_cmp(a));
        prop_assert!(sorted[5] >= -1e-9 * top.max(1e-300));
        prop_assert!(sorted[1].abs() <= 1e-9 * top.max(1e-300));
    }

    #[test]
    fn parameter_maps_round_trip(j in j_params()) {
        let back = lambda_to_j(&j_to_lambda(&j)).to_array();
        let scale = j.to_array().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in back.iter().zip(j.to_array()) {
            prop_assert!((a - b).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn capped_projection_is_feasible(v in proptest::collection::vec(-3.0..3.0f64, 2..40), cap in 0.05..1.0f64) {
        let n = v.len();
        let cap = cap.max(1.0 / n as f64 + 1e-9);
        let ub = vec![cap; n];
        let p = project_capped_simplex(&v, &ub);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().all(|&x| (-1e-12..=cap + 1e-12).contains(&x)));
    }

    #[test]
    fn mixing_keeps_a_distribution(w in proptest::collection::vec(0.0..1.0f64, 2..30), n_tot in 1usize..1_000_000) {
        prop_assume!(w.iter().sum::<f64>() > 1e-6);
        let q = QueryDistribution::from_unnormalized(w).unwrap();
        let m = mix_uniform(&q, n_tot);
        prop_assert!((m.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(m.weights().iter().all(|&x| x > 0.0));
    }

    #[test]
    fn pruned_batches_never_exceed_the_ledger(ledger in proptest::collection::vec(0usize..4, 3..20), n_b in 1usize..30, seed in any::<u64>()) {
        let total: usize = ledger.iter().sum();
        let q = QueryDistribution::uniform(ledger.len());
        let mut rng = RngStream::new(seed, 0);
        match sample_batch(&q, n_b, Some(&ledger), &mut rng) {
            Err(_) => prop_assert!(total < n_b),
            Ok(batch) => {
                prop_assert_eq!(batch.len(), n_b);
                let mut used = vec![0usize; ledger.len()];
                batch.iter().for_each(|&i| used[i] += 1);
                prop_assert!(used.iter().zip(&ledger).all(|(u, l)| u <= l));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn replay_conserves_shots(seed in any::<u64>(), draws in 1usize..60) {
        let p = crlearn::config::preset("D-config2").unwrap();
        let space = QuerySpace::uniform_grid(1e-7, 6e-7, 3, GrowthPolicy::Fixed).unwrap();
        let mut d = generate_dataset(&p.lambda(), &p.noise, &space, 4, &mut RngStream::new(seed, 0)).unwrap();
        let start = d.total_remaining();
        let mut rng = RngStream::new(seed, 1);
        let mut served = 0;
        for k in 0..draws {
            if d.measure(&space.query(k % space.len()), &mut rng).is_ok() {
                served += 1;
            }
        }
        prop_assert_eq!(d.total_remaining() + served, start);
        prop_assert_eq!(d.ledger().iter().sum::<usize>(), d.total_remaining());
    }

    #[test]
    fn generation_is_deterministic(seed in any::<u64>()) {
        let p = crlearn::config::preset("D-config2").unwrap();
        let space = QuerySpace::uniform_grid(1e-7, 6e-7, 3, GrowthPolicy::Fixed).unwrap();
        let make = || {
            let d = generate_dataset(&p.lambda(), &p.noise, &space, 2, &mut RngStream::new(seed, 0)).unwrap();
            let mut buf = Vec::new();
            d.write_to(&mut buf).unwrap();
            buf
        };
        prop_assert_eq!(make(), make());
    }
}
