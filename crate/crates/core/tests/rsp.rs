mod common;

use bellforge_core::linalg::max_abs_diff;
use bellforge_core::qstate::{fidelity, PureState};
use bellforge_core::rsp::{abort_probability, attempt_rng, rsp_attempt, rsp_batch, rsp_povm};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn success_probability_is_one_over_d_for_random_targets() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for d in [2, 3, 4] {
        for t in 0..100 {
            let target = common::haar_state(d, "q", &mut rng);
            let mut stream = attempt_rng(t, 0);
            let mut attempt = rsp_attempt(&target, &mut stream).unwrap();
            assert!((attempt.success_probability - 1.0 / d as f64).abs() < 1e-12);
            while !attempt.success {
                attempt = rsp_attempt(&target, &mut stream).unwrap();
            }
            let bob = attempt.bob_state.unwrap();
            assert!((fidelity(&target, &bob).unwrap() - 1.0).abs() < 1e-10);
        }
    }
}

#[test]
fn conjugating_twice_gives_the_same_measurement() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let phi = common::haar_state(3, "q", &mut rng);
        let conj = phi.amplitudes().map(|z| z.conj());
        let back = PureState::new(conj.map(|z| z.conj()), phi.layout().clone()).unwrap();
        let a = rsp_povm(&phi).unwrap();
        let b = rsp_povm(&back).unwrap();
        for (x, y) in a.elements().iter().zip(b.elements()) {
            assert_eq!(max_abs_diff(x, y), 0.0);
        }
    }
}

#[test]
fn abort_rate_respects_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let target = common::haar_state(2, "q", &mut rng);
    for k in [1usize, 2, 4] {
        let trials = 10_000u64;
        let aborts = (0..trials)
            .filter(|&s| rsp_batch(&target, k, s).unwrap().first_success.is_none())
            .count() as f64;
        let rate = aborts / trials as f64;
        let p = abort_probability(2, 2 * k);
        let sigma = (p * (1.0 - p) / trials as f64).sqrt();
        assert!((rate - p).abs() <= 4.0 * sigma + 1e-12, "k={k}: {rate} vs {p}");
        assert!(rate <= 2f64.powi(-(k as i32)) + 3.0 * sigma);
    }
}
