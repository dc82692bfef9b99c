//! Deterministic port-based teleportation with the pretty-good measurement.
//!
//! Registers are named `A0` (input), `A1..AN` (sender ports) and `B1..BN`
//! (receiver ports). All pairs are |Φ⁺⟩.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use thiserror::Error;

use crate::linalg::{self, hermitian_eigen, re, CMatrix, CVector, C64};
use crate::qstate::{
    self, fidelity, max_entangled_on, partial_trace_raw, MixedState, Povm, PureState, QStateError, RegisterLayout,
    Split, MAX_DENSE_DIM, MAX_TOTAL_DIM,
};

/// Relative cutoff below which eigenvalues of S count as zero.
pub const PINV_CUTOFF: f64 = 1e-12;
/// Completeness tolerance for the constructed measurement.
pub const PBT_POVM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PbtError {
    #[error("port count must be at least 1")]
    NoPorts,
    #[error("port dimension must be at least 2, got {0}")]
    PortDimension(usize),
    #[error("dimension {dim} exceeds cap {cap}")]
    CapExceeded { dim: usize, cap: usize },
    #[error("resource and measurement disagree on (N, d)")]
    Mismatch,
    #[error(transparent)]
    State(#[from] QStateError),
}

pub type Result<T> = core::result::Result<T, PbtError>;

pub fn sender_port(i: usize) -> String {
    format!("A{i}")
}

pub fn receiver_port(i: usize) -> String {
    format!("B{i}")
}

fn checked_pow(d: usize, e: usize, cap: usize) -> Result<usize> {
    let mut acc = 1usize;
    for _ in 0..e {
        acc = acc.saturating_mul(d);
        if acc > cap {
            return Err(PbtError::CapExceeded { dim: acc, cap });
        }
    }
    Ok(acc)
}

fn validate(n: usize, d: usize) -> Result<()> {
    if n == 0 {
        return Err(PbtError::NoPorts);
    }
    if d < 2 {
        return Err(PbtError::PortDimension(d));
    }
    Ok(())
}

/// N maximally entangled pairs shared between sender and receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct PbtResource {
    pub n: usize,
    pub d: usize,
    pub state: PureState,
}

pub fn build_resource(n: usize, d: usize) -> Result<PbtResource> {
    validate(n, d)?;
    let half = checked_pow(d, n, MAX_TOTAL_DIM)?;
    checked_pow(d, 2 * n, MAX_TOTAL_DIM)?;
    let names = (1..=n)
        .map(|i| (sender_port(i), d))
        .chain((1..=n).map(|i| (receiver_port(i), d)));
    let layout = RegisterLayout::new(names)?;
    let mut v = CVector::zeros(half * half);
    let amp = 1.0 / (half as f64).sqrt();
    for a in 0..half {
        v[a * half + a] = re(amp);
    }
    Ok(PbtResource {
        n,
        d,
        state: PureState::new(v, layout)?,
    })
}

/// Signal states and square-root measurement on `A0 A1..AN`.
#[derive(Debug, Clone, PartialEq)]
pub struct PbtMeasurement {
    pub n: usize,
    pub d: usize,
    pub signal_states: Vec<MixedState>,
    pub elements: Povm,
}

fn measurement_layout(n: usize, d: usize) -> Result<RegisterLayout> {
    let names = core::iter::once((String::from("A0"), d)).chain((1..=n).map(|i| (sender_port(i), d)));
    Ok(RegisterLayout::new(names)?)
}

/// Unnormalized vectors |Φ⁺⟩_{A0 Ai} ⊗ |k⟩ over the remaining sender ports, as columns.
fn signal_columns(n: usize, d: usize, i: usize) -> Vec<Vec<(usize, f64)>> {
    let rest = d.pow((n - 1) as u32);
    let big = d.pow(n as u32);
    let stride_i = d.pow((n - i) as u32);
    let amp = 1.0 / (d as f64).sqrt();
    let mut cols = Vec::with_capacity(rest);
    for k in 0..rest {
        // spread k over the ports other than i
        let mut a = 0usize;
        let mut kk = k;
        for j in (1..=n).rev() {
            if j == i {
                continue;
            }
            let digit = kk % d;
            kk /= d;
            a += digit * d.pow((n - j) as u32);
        }
        let col = (0..d).map(|m| (m * big + a + m * stride_i, amp)).collect();
        cols.push(col);
    }
    cols
}

pub fn build_pbt_povm(n: usize, d: usize) -> Result<PbtMeasurement> {
    validate(n, d)?;
    let dim = checked_pow(d, n + 1, MAX_DENSE_DIM)?;
    let layout = measurement_layout(n, d)?;
    let norm = 1.0 / d.pow((n - 1) as u32) as f64;

    let columns: Vec<_> = (1..=n).map(|i| signal_columns(n, d, i)).collect();
    let mut signals = Vec::with_capacity(n);
    let mut s = CMatrix::zeros(dim, dim);
    for cols in &columns {
        let mut sigma = CMatrix::zeros(dim, dim);
        for col in cols {
            for &(r, x) in col {
                for &(c, y) in col {
                    sigma[(r, c)] += re(x * y * norm);
                }
            }
        }
        s += &sigma;
        signals.push(MixedState::new(sigma, layout.clone())?);
    }

    let (values, vectors) = hermitian_eigen(&s);
    let lambda_max = values.last().copied().unwrap_or(0.0);
    let cutoff = PINV_CUTOFF * lambda_max;
    let inv_sqrt = linalg::spectral_map(&values, &vectors, |l| if l > cutoff { 1.0 / l.sqrt() } else { 0.0 });
    let support = linalg::spectral_map(&values, &vectors, |l| if l > cutoff { 1.0 } else { 0.0 });
    let remainder = (linalg::identity(dim) - support).map(|z| z / n as f64);

    let mut elements = Vec::with_capacity(n);
    for cols in &columns {
        let mut w = CMatrix::zeros(dim, cols.len());
        for (k, col) in cols.iter().enumerate() {
            for &(r, x) in col {
                let scale = re(x * norm.sqrt());
                for row in 0..dim {
                    w[(row, k)] += inv_sqrt[(row, r)] * scale;
                }
            }
        }
        let pi = &w * w.adjoint() + &remainder;
        elements.push(linalg::symmetrize(&pi));
    }
    Ok(PbtMeasurement {
        n,
        d,
        signal_states: signals,
        elements: Povm::with_tolerance(elements, PBT_POVM_TOL)?,
    })
}

impl PbtMeasurement {
    pub fn dim(&self) -> usize {
        self.elements.dim()
    }

    /// E_i(|m⟩⟨m'|) on the receiver ports `B1..BN` (unnormalized, outcome `i` is 0-based).
    pub fn channel_block(&self, i: usize, m: usize, m2: usize) -> CMatrix {
        let big = self.d.pow(self.n as u32);
        let pi = &self.elements.elements()[i];
        let scale = 1.0 / big as f64;
        CMatrix::from_fn(big, big, |a, a2| pi[(m2 * big + a2, m * big + a)] * scale)
    }

    /// Port-selected channel Λ_i(|m⟩⟨m'|) on the kept port `B_{i+1}`.
    pub fn port_block(&self, i: usize, m: usize, m2: usize) -> CMatrix {
        let split = Split::new(&alloc::vec![self.d; self.n], &[i]);
        partial_trace_raw(&self.channel_block(i, m, m2), &split)
    }

    /// Summed port-selected channel applied to half of Φ⁺, on (reference, port).
    pub fn choi(&self) -> CMatrix {
        let d = self.d;
        let mut j = CMatrix::zeros(d * d, d * d);
        for i in 0..self.n {
            for m in 0..d {
                for m2 in 0..d {
                    let block = self.port_block(i, m, m2);
                    for b in 0..d {
                        for b2 in 0..d {
                            j[(m * d + b, m2 * d + b2)] += block[(b, b2)] / d as f64;
                        }
                    }
                }
            }
        }
        j
    }
}

/// Outcome of one teleportation.
#[derive(Debug, Clone, PartialEq)]
pub struct Teleported {
    pub port: usize,
    pub probabilities: Vec<f64>,
    pub output: MixedState,
    pub joint: PureState,
}

fn purify(input: &MixedState) -> Result<PureState> {
    let d = input.dim();
    let (values, vectors) = hermitian_eigen(input.matrix());
    let layout = RegisterLayout::new([("R", d), ("A0", d)])?;
    let mut v = CVector::zeros(d * d);
    for k in 0..d {
        let w = values[k].max(0.0).sqrt();
        for m in 0..d {
            v[k * d + m] = vectors[(m, k)] * w;
        }
    }
    Ok(PureState::normalized(v, layout)?)
}

/// Teleports `input` and reports the selected port (1-based) and the receiver's state on it.
pub fn teleport<R: Rng + ?Sized>(
    input: &MixedState,
    resource: &PbtResource,
    meas: &PbtMeasurement,
    rng: &mut R,
) -> Result<Teleported> {
    if resource.n != meas.n || resource.d != meas.d {
        return Err(PbtError::Mismatch);
    }
    if input.dim() != meas.d {
        return Err(QStateError::DimensionMismatch {
            expected: meas.d,
            found: input.dim(),
        }
        .into());
    }
    let joint = purify(input)?.tensor(&resource.state)?;
    let targets: Vec<String> = core::iter::once(String::from("A0"))
        .chain((1..=meas.n).map(sender_port))
        .collect();
    let targets: Vec<&str> = targets.iter().map(String::as_str).collect();
    let measured = joint.measure_on(&meas.elements, &targets, rng)?;
    let port = measured.outcome + 1;
    let output = measured.post.reduce(&[&receiver_port(port)])?;
    Ok(Teleported {
        port,
        probabilities: measured.probabilities,
        output,
        joint: measured.post,
    })
}

/// Exact outcome-averaged entanglement fidelity of the measurement.
pub fn entanglement_fidelity_of(meas: &PbtMeasurement) -> Result<f64> {
    let d = meas.d;
    let layout = RegisterLayout::new([("R", d), ("B", d)])?;
    let out = MixedState::new(meas.choi(), layout)?;
    let phi = max_entangled_on(d, "R", "B")?;
    Ok(fidelity(&phi, &out)?)
}

pub fn entanglement_fidelity(n: usize, d: usize) -> Result<f64> {
    entanglement_fidelity_of(&build_pbt_povm(n, d)?)
}

/// Monte Carlo estimate: mean fidelity over sampled outcome branches.
pub fn entanglement_fidelity_sampled<R: Rng + ?Sized>(
    meas: &PbtMeasurement,
    trials: usize,
    rng: &mut R,
) -> Result<f64> {
    let d = meas.d;
    let phi = max_entangled_on(d, "R", "B")?;
    let layout = RegisterLayout::new([("R", d), ("B", d)])?;
    let mut branches = Vec::with_capacity(meas.n);
    let mut probs = Vec::with_capacity(meas.n);
    for i in 0..meas.n {
        let mut j = CMatrix::zeros(d * d, d * d);
        for m in 0..d {
            for m2 in 0..d {
                let block = meas.port_block(i, m, m2);
                for b in 0..d {
                    for b2 in 0..d {
                        j[(m * d + b, m2 * d + b2)] = block[(b, b2)] / d as f64;
                    }
                }
            }
        }
        let p = linalg::trace(&j).re;
        probs.push(p);
        let f = if p > 1e-14 {
            let state = MixedState::new(j.map(|z: C64| z / p), layout.clone())?;
            fidelity(&phi, &state)?
        } else {
            0.0
        };
        branches.push(f);
    }
    if trials == 0 {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    for _ in 0..trials {
        acc += branches[qstate::sample_index(&probs, rng)?];
    }
    Ok(acc / trials as f64)
}

/// Bits the sender transmits: log₂ N.
pub fn classical_cost(n: usize) -> f64 {
    (n as f64).log2()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_abs_diff, min_eigenvalue};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn resource_examples() {
        let r1 = build_resource(1, 2).unwrap();
        let phi = qstate::max_entangled_on(2, "A1", "B1").unwrap();
        assert_eq!(r1.state, phi);

        let r2 = build_resource(2, 2).unwrap();
        assert_eq!(r2.state.layout().names(), ["A1", "A2", "B1", "B2"]);
        // direct construction: amplitude 1/2 where (a1,a2) = (b1,b2)
        for idx in 0..16 {
            let (a, b) = (idx >> 2, idx & 3);
            let want = if a == b { 0.5 } else { 0.0 };
            assert!((r2.state.amplitudes()[idx] - re(want)).norm() < 1e-15);
        }
        let bob = r2.state.reduce(&["B1", "B2"]).unwrap();
        assert!(max_abs_diff(bob.matrix(), &linalg::identity(4).map(|z| z / 4.0)) < 1e-12);
        assert!(matches!(
            build_resource(11, 2),
            Err(PbtError::CapExceeded { .. }) | Err(PbtError::State(QStateError::CapExceeded { .. }))
        ));
    }

    #[test]
    fn single_port_measurement_is_identity() {
        let m = build_pbt_povm(1, 2).unwrap();
        assert_eq!(m.elements.len(), 1);
        assert!(max_abs_diff(&m.elements.elements()[0], &linalg::identity(4)) < 1e-12);
    }

    #[test]
    fn two_port_measurement_is_complete_and_positive() {
        let m = build_pbt_povm(2, 2).unwrap();
        let sum = m
            .elements
            .elements()
            .iter()
            .fold(CMatrix::zeros(8, 8), |acc, e| acc + e);
        assert!(max_abs_diff(&sum, &linalg::identity(8)) < 1e-9);
        for e in m.elements.elements() {
            assert!(min_eigenvalue(e) >= -1e-10);
        }
        for s in &m.signal_states {
            assert!((s.trace() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn classical_cost_examples() {
        assert_eq!(classical_cost(1), 0.0);
        assert_eq!(classical_cost(8), 3.0);
        assert!((classical_cost(5) - 2.321928).abs() < 1e-6);
    }

    #[test]
    fn single_port_output_is_maximally_mixed() {
        let res = build_resource(1, 2).unwrap();
        let meas = build_pbt_povm(1, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input = PureState::basis(RegisterLayout::new([("q", 2)]).unwrap(), 0)
            .unwrap()
            .to_mixed()
            .unwrap();
        let t = teleport(&input, &res, &meas, &mut rng).unwrap();
        assert_eq!(t.port, 1);
        assert!(max_abs_diff(t.output.matrix(), &linalg::identity(2).map(|z| z / 2.0)) < 1e-12);
        let f = entanglement_fidelity_of(&meas).unwrap();
        assert!((f - 0.25).abs() < 1e-12);
    }

    #[test]
    fn fidelity_matches_trace_formula() {
        // F = d⁻² Σ tr(Π_i σ_i), derived independently from the instrument.
        for (n, d) in [(2, 2), (3, 2), (4, 2), (2, 3)] {
            let meas = build_pbt_povm(n, d).unwrap();
            let mut oracle = 0.0;
            for (pi, s) in meas.elements.elements().iter().zip(&meas.signal_states) {
                oracle += linalg::trace(&(pi * s.matrix())).re;
            }
            oracle /= (d * d) as f64;
            let f = entanglement_fidelity_of(&meas).unwrap();
            assert!((f - oracle).abs() < 1e-10, "n={n} d={d}: {f} vs {oracle}");
        }
    }

    #[test]
    fn sampled_fidelity_is_close_to_exact() {
        let meas = build_pbt_povm(3, 2).unwrap();
        let exact = entanglement_fidelity_of(&meas).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let est = entanglement_fidelity_sampled(&meas, 2000, &mut rng).unwrap();
        // symmetric ports give identical branch fidelities
        assert!((est - exact).abs() < 1e-9);
    }
}
