//! Closed forms against independent brute-force references.

mod common;

use common::*;
use crlearn::fisher::{fisher_in_j, query_fisher};
use crlearn::model::{j_to_lambda, likelihood_noiseless};
use crlearn::noise::depolarization_prob;
use crlearn::{DecoherenceModel, Preparation};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn born_rule_matches_matrix_exponential() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let j = random_j(&mut rng);
        let q = random_query(&mut rng, 1e-6);
        let closed = likelihood_noiseless(&j_to_lambda(&j), &q);
        assert!((closed - born_p0(&j, &q)).abs() < 1e-10, "{q}");
    }
}

#[test]
fn config2_born_rule_at_fixed_times() {
    let j = crlearn::config::preset("D-config2").unwrap().theta;
    for t in [0.0, 1e-7, 3.3e-7, 6e-7] {
        for q in crlearn::QuerySpace::default_grid(crlearn::GrowthPolicy::Fixed).queries().take(6) {
            let q = crlearn::Query::new(q.meas, q.prep, t);
            assert!((likelihood_noiseless(&j_to_lambda(&j), &q) - born_p0(&j, &q)).abs() < 1e-12);
        }
    }
}

#[test]
fn unitarity_matches_kraus_channel() {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..30 {
        let t1 = (rng.random_range(2e-5..2e-4), rng.random_range(2e-5..2e-4));
        let t2 = (t1.0 * rng.random_range(0.1..2.0), t1.1 * rng.random_range(0.1..2.0));
        let t = rng.random_range(0.0..4e-4);
        let d = DecoherenceModel::two_qubit(t1.0, t2.0, t1.1, t2.1).unwrap();
        let closed = depolarization_prob(&d, t, Preparation::U0);
        assert!((closed - kraus_depolarization(t1, t2, t)).abs() < 1e-10);
    }
}

#[test]
fn fisher_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checked = 0;
    while checked < 40 {
        let j = random_j(&mut rng);
        let n = random_noise(&mut rng);
        let q = random_query(&mut rng, 1e-6);
        let l = j_to_lambda(&j);
        let analytic = query_fisher(&l, &n, &q);
        let fd = fd_fisher_lambda(&l, &n, &q);
        if fd.norm() < 1e-12 {
            continue;
        }
        assert!(rel_frobenius(&analytic, &fd) < 1e-5, "{q}");
        let in_j = fisher_in_j(&analytic, &j).unwrap();
        assert!(rel_frobenius(&in_j, &fd_fisher_j(&j, &n, &q)) < 1e-4, "{q}");
        checked += 1;
    }
}

#[test]
fn grid_search_reference_finds_the_even_split() {
    let scores = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    let best = grid_search_a_optimal(&scores, 100);
    assert!((best - 4.0).abs() < 1e-12);
}
