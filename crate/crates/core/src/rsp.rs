//! Remote state preparation on a maximally entangled pair.

#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::{outer, CVector};
use crate::qstate::{max_entangled, MixedState, Povm, PureState, QStateError};

/// {|φ*⟩⟨φ*|, I − |φ*⟩⟨φ*|}; outcome 0 is success.
pub fn rsp_povm(target: &PureState) -> Result<Povm, QStateError> {
    let conj: CVector = target.amplitudes().map(|z| z.conj());
    Povm::binary(outer(&conj))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RspAttempt {
    pub target: PureState,
    pub success: bool,
    pub success_probability: f64,
    pub bob_state: Option<MixedState>,
}

/// Measures Alice's half of Φ⁺(d) with [`rsp_povm`]; Bob's half is kept on success.
pub fn rsp_attempt<R: Rng + ?Sized>(target: &PureState, rng: &mut R) -> Result<RspAttempt, QStateError> {
    let d = target.dim();
    let povm = rsp_povm(target)?;
    let pair = max_entangled(d)?;
    let measured = pair.measure_on(&povm, &["A"], rng)?;
    let success = measured.outcome == 0;
    let bob_state = if success {
        Some(measured.post.reduce(&["B"])?)
    } else {
        None
    };
    Ok(RspAttempt {
        target: target.clone(),
        success,
        success_probability: measured.probabilities[0],
        bob_state,
    })
}

/// Bob's state after the failure outcome.
pub fn rsp_failure_state(target: &PureState) -> Result<MixedState, QStateError> {
    let povm = rsp_povm(target)?;
    max_entangled(target.dim())?.branch(&povm, &["A"], 1)?.reduce(&["B"])
}

/// m = ⌈k·d⌉ attempts for success probability 1/d.
pub fn batch_size(k: usize, d: usize) -> usize {
    k * d
}

/// Probability that all `m` attempts fail.
pub fn abort_probability(d: usize, m: usize) -> f64 {
    (1.0 - 1.0 / d as f64).powi(m as i32)
}

/// Bits to send the first-success index, plus one for ABORT.
pub fn index_cost_bits(m: usize) -> u32 {
    m.max(1).next_power_of_two().trailing_zeros() + 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RspBatch {
    pub k: usize,
    pub m: usize,
    /// 1-based index of the first successful attempt; `None` is ABORT.
    pub first_success: Option<usize>,
    /// Bob's answer when the batch aborts.
    pub fallback_bit: bool,
}

impl RspBatch {
    /// Serialized index: 0 encodes ABORT.
    pub fn encoded(&self) -> usize {
        self.first_success.unwrap_or(0)
    }
}

/// Stream for one attempt of a batch.
pub fn attempt_rng(batch_seed: u64, attempt: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(batch_seed);
    rng.set_stream(attempt as u64);
    rng
}

/// Runs m = ⌈k·d⌉ independent attempts, each on its own derived stream.
pub fn rsp_batch(target: &PureState, k: usize, batch_seed: u64) -> Result<RspBatch, QStateError> {
    let m = batch_size(k.max(1), target.dim());
    let mut first_success = None;
    for j in 0..m {
        let attempt = rsp_attempt(target, &mut attempt_rng(batch_seed, j))?;
        if attempt.success {
            first_success = Some(j + 1);
            break;
        }
    }
    let fallback_bit = attempt_rng(batch_seed, usize::MAX).random::<bool>();
    Ok(RspBatch {
        k,
        m,
        first_success,
        fallback_bit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, identity, max_abs_diff, re};
    use crate::qstate::{fidelity, RegisterLayout};

    fn qubit(a: crate::linalg::C64, b: crate::linalg::C64) -> PureState {
        PureState::new(
            CVector::from_vec(alloc::vec![a, b]),
            RegisterLayout::new([("q", 2)]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn povm_examples() {
        let zero = qubit(re(1.0), re(0.0));
        let p = rsp_povm(&zero).unwrap();
        assert!(
            max_abs_diff(
                &p.elements()[0],
                &outer(&CVector::from_vec(alloc::vec![re(1.0), re(0.0)]))
            ) < 1e-15
        );
        assert!(
            max_abs_diff(
                &p.elements()[1],
                &outer(&CVector::from_vec(alloc::vec![re(0.0), re(1.0)]))
            ) < 1e-15
        );

        let h = 1.0 / 2f64.sqrt();
        let plus_i = qubit(re(h), c(0.0, h));
        let p = rsp_povm(&plus_i).unwrap();
        let minus_i = CVector::from_vec(alloc::vec![re(h), c(0.0, -h)]);
        assert!(max_abs_diff(&p.elements()[0], &outer(&minus_i)) < 1e-15);
        let sum = &p.elements()[0] + &p.elements()[1];
        assert!(max_abs_diff(&sum, &identity(2)) < 1e-12);
    }

    #[test]
    fn plus_state_is_prepared_with_probability_half() {
        let h = 1.0 / 2f64.sqrt();
        let plus = qubit(re(h), re(h));
        // ⟨φ*|(I/d)|φ*⟩ = 1/d
        let mut rng = attempt_rng(1, 0);
        let mut seen = false;
        for _ in 0..20 {
            let a = rsp_attempt(&plus, &mut rng).unwrap();
            assert!((a.success_probability - 0.5).abs() < 1e-12);
            if let Some(bob) = &a.bob_state {
                assert!((fidelity(&plus, bob).unwrap() - 1.0).abs() < 1e-10);
                seen = true;
            }
        }
        assert!(seen);
        let fail = rsp_failure_state(&plus).unwrap();
        assert!((fail.trace() - 1.0).abs() < 1e-12);
        assert!(fidelity(&plus, &fail).unwrap() < 1e-12);
    }

    #[test]
    fn batch_arithmetic() {
        assert_eq!(batch_size(4, 2), 8);
        assert!((abort_probability(2, 8) - 0.00390625).abs() < 1e-15);
        assert!((abort_probability(2, 2) - 0.25).abs() < 1e-15);
        assert_eq!(index_cost_bits(8), 4);
        assert_eq!(index_cost_bits(2), 2);
        assert_eq!(index_cost_bits(5), 4);
    }

    #[test]
    fn batches_are_reproducible() {
        let zero = qubit(re(1.0), re(0.0));
        let a = rsp_batch(&zero, 2, 42).unwrap();
        let b = rsp_batch(&zero, 2, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.m, 4);
        if a.first_success.is_none() {
            assert_eq!(a.encoded(), 0);
        }
    }
}
