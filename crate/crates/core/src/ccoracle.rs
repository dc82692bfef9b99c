//! Exact distributional communication complexity of tiny functions, and
//! majority-vote amplification.
//!
//! For a fixed μ, deterministic protocols are optimal, so every value here is
//! a maximum over deterministic strategies. Bob's decisions are chosen
//! greedily per (transcript, y), which is exact because μ decomposes.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::truth::TruthTable;

/// Largest number of candidate strategies the enumerators will visit.
pub const SEARCH_CAP: u128 = 100_000_000;
/// Largest |X| or |Y| handled by the protocol-tree solver.
pub const TREE_MAX_SIDE: usize = 8;
const SUCCESS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CcError {
    #[error("search space of {size} strategies exceeds cap {cap}")]
    SpaceTooLarge { size: u128, cap: u128 },
    #[error("input side of size {0} exceeds the tree solver limit")]
    SideTooLarge(usize),
    #[error("protocol needs at least one round")]
    NoRounds,
}

pub type Result<T> = core::result::Result<T, CcError>;

/// Alice's message map and Bob's decision map for a one-way protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalOneWayStrategy {
    pub bits: u32,
    /// message[x]
    pub message: Vec<usize>,
    /// decision[message * |Y| + y]
    pub decision: Vec<u8>,
}

impl ClassicalOneWayStrategy {
    pub fn success(&self, t: &TruthTable) -> f64 {
        let ny = t.ny();
        let mut acc = 0.0;
        for x in 0..t.nx() {
            for y in 0..ny {
                if self.decision[self.message[x] * ny + y] == t.f(x, y) {
                    acc += t.mu(x, y);
                }
            }
        }
        acc
    }
}

/// Number of partitions of an `n`-set into at most `k` blocks.
pub fn partition_count(n: usize, k: usize) -> u128 {
    // Stirling numbers of the second kind, row by row.
    let mut row = vec![0u128; k + 1];
    row[0] = 1;
    for _ in 0..n {
        let mut next = vec![0u128; k + 1];
        for j in 1..=k {
            next[j] = row[j - 1].saturating_add((j as u128).saturating_mul(row[j]));
        }
        row = next;
    }
    row.iter().fold(0u128, |a, &b| a.saturating_add(b))
}

struct OneWaySearch<'a> {
    t: &'a TruthTable,
    k: usize,
    assign: Vec<usize>,
    // weights[block][y] = (mass where f = 0, mass where f = 1)
    weights: Vec<Vec<[f64; 2]>>,
    best: f64,
    best_assign: Vec<usize>,
}

impl OneWaySearch<'_> {
    fn value(&self) -> f64 {
        self.weights.iter().flat_map(|b| b.iter().map(|w| w[0].max(w[1]))).sum()
    }

    fn add(&mut self, x: usize, block: usize, sign: f64) {
        for y in 0..self.t.ny() {
            self.weights[block][y][self.t.f(x, y) as usize] += sign * self.t.mu(x, y);
        }
    }

    fn run(&mut self, x: usize) {
        if x == self.t.nx() {
            let v = self.value();
            if v > self.best + 1e-15 {
                self.best = v;
                self.best_assign = self.assign.clone();
            }
            return;
        }
        let used = self.weights.len();
        for block in 0..used {
            self.add(x, block, 1.0);
            self.assign[x] = block;
            self.run(x + 1);
            self.add(x, block, -1.0);
        }
        if used < self.k {
            self.weights.push(vec![[0.0; 2]; self.t.ny()]);
            self.add(x, used, 1.0);
            self.assign[x] = used;
            self.run(x + 1);
            self.weights.pop();
        }
    }
}

/// Optimal one-way strategy with a `c`-bit message, by enumerating the
/// partitions of X induced by message maps.
pub fn best_one_way_strategy(t: &TruthTable, c: u32) -> Result<ClassicalOneWayStrategy> {
    let nx = t.nx();
    let k = 1usize.checked_shl(c).unwrap_or(usize::MAX).min(nx);
    let size = partition_count(nx, k);
    if size > SEARCH_CAP {
        return Err(CcError::SpaceTooLarge { size, cap: SEARCH_CAP });
    }
    let mut search = OneWaySearch {
        t,
        k,
        assign: vec![0; nx],
        weights: Vec::new(),
        best: -1.0,
        best_assign: vec![0; nx],
    };
    search.run(0);
    let ny = t.ny();
    let blocks = search.best_assign.iter().max().map_or(1, |m| m + 1);
    let mut decision = vec![0u8; blocks * ny];
    for b in 0..blocks {
        for y in 0..ny {
            let mut w = [0.0; 2];
            for x in (0..nx).filter(|&x| search.best_assign[x] == b) {
                w[t.f(x, y) as usize] += t.mu(x, y);
            }
            decision[b * ny + y] = (w[1] > w[0]) as u8;
        }
    }
    Ok(ClassicalOneWayStrategy {
        bits: c,
        message: search.best_assign,
        decision,
    })
}

pub fn best_success_one_way(t: &TruthTable, c: u32) -> Result<f64> {
    Ok(best_one_way_strategy(t, c)?.success(t))
}

struct TreeSolver<'a> {
    t: &'a TruthTable,
    alphabets: &'a [usize],
    memo: Vec<f64>,
}

impl TreeSolver<'_> {
    fn key(&self, xs: usize, ys: usize, level: usize) -> usize {
        let y_masks = 1 << self.t.ny();
        (level * (1 << self.t.nx()) + xs) * y_masks + ys
    }

    fn leaf(&self, xs: usize, ys: usize) -> f64 {
        let mut acc = 0.0;
        for y in (0..self.t.ny()).filter(|y| ys >> y & 1 == 1) {
            let mut w = [0.0; 2];
            for x in (0..self.t.nx()).filter(|x| xs >> x & 1 == 1) {
                w[self.t.f(x, y) as usize] += self.t.mu(x, y);
            }
            acc += w[0].max(w[1]);
        }
        acc
    }

    fn value(&mut self, xs: usize, ys: usize, level: usize) -> f64 {
        if xs == 0 || ys == 0 {
            return 0.0;
        }
        if level == self.alphabets.len() {
            return self.leaf(xs, ys);
        }
        let key = self.key(xs, ys, level);
        if self.memo[key] >= 0.0 {
            return self.memo[key];
        }
        let k = self.alphabets[level];
        let alice = level.is_multiple_of(2);
        let own = if alice { xs } else { ys };
        let v = if k as u32 >= own.count_ones() {
            // finest partition is optimal
            let mut acc = 0.0;
            let mut rest = own;
            while rest != 0 {
                let bit = rest & rest.wrapping_neg();
                rest ^= bit;
                acc += self.child(alice, bit, xs, ys, level);
            }
            acc
        } else {
            let mut table = vec![vec![-1.0f64; own + 1]; k + 1];
            self.partition(own, k, alice, xs, ys, level, &mut table)
        };
        self.memo[key] = v;
        v
    }

    fn child(&mut self, alice: bool, block: usize, xs: usize, ys: usize, level: usize) -> f64 {
        if alice {
            self.value(block, ys, level + 1)
        } else {
            self.value(xs, block, level + 1)
        }
    }

    /// Best split of `set` into at most `k` blocks.
    #[allow(clippy::too_many_arguments)]
    fn partition(
        &mut self,
        set: usize,
        k: usize,
        alice: bool,
        xs: usize,
        ys: usize,
        level: usize,
        table: &mut Vec<Vec<f64>>,
    ) -> f64 {
        if set == 0 {
            return 0.0;
        }
        if table[k][set] >= 0.0 {
            return table[k][set];
        }
        let v = if k == 1 {
            self.child(alice, set, xs, ys, level)
        } else {
            let low = set & set.wrapping_neg();
            let others = set ^ low;
            let mut best = f64::NEG_INFINITY;
            // blocks containing the lowest element
            let mut sub = others;
            loop {
                let block = sub | low;
                let v = self.child(alice, block, xs, ys, level)
                    + self.partition(set ^ block, k - 1, alice, xs, ys, level, table);
                if v > best {
                    best = v;
                }
                if sub == 0 {
                    break;
                }
                sub = (sub - 1) & others;
            }
            best
        };
        table[k][set] = v;
        v
    }
}

/// Best success of an alternating protocol (Alice first) whose i-th message
/// takes one of `alphabets[i]` values.
pub fn best_success_alphabets(t: &TruthTable, alphabets: &[usize]) -> Result<f64> {
    for side in [t.nx(), t.ny()] {
        if side > TREE_MAX_SIDE {
            return Err(CcError::SideTooLarge(side));
        }
    }
    let levels = alphabets.len();
    let mut solver = TreeSolver {
        t,
        alphabets,
        memo: vec![-1.0; (levels + 1) * (1 << t.nx()) * (1 << t.ny())],
    };
    let all_x = (1usize << t.nx()) - 1;
    let all_y = (1usize << t.ny()) - 1;
    Ok(solver.value(all_x, all_y, 0))
}

/// Best success over protocols with at most `rounds` alternating messages
/// (Alice first) of fixed lengths totalling `c` bits.
pub fn best_success_tree(t: &TruthTable, c: u32, rounds: usize) -> Result<f64> {
    if rounds == 0 {
        return Err(CcError::NoRounds);
    }
    let mut best = 0.0f64;
    let mut lengths = vec![0u32; rounds];
    loop {
        if lengths.iter().sum::<u32>() == c {
            let alphabets: Vec<usize> = lengths
                .iter()
                .map(|&b| 1usize.checked_shl(b).unwrap_or(usize::MAX).min(1 << TREE_MAX_SIDE))
                .collect();
            best = best.max(best_success_alphabets(t, &alphabets)?);
        }
        // next composition in lexicographic order
        let mut i = 0;
        loop {
            if i == rounds {
                return Ok(best);
            }
            if lengths[i] < c {
                lengths[i] += 1;
                break;
            }
            lengths[i] = 0;
            i += 1;
        }
    }
}

/// Bits needed classically, or unreachable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CcBits {
    Finite(u32),
    Unreachable,
}

impl CcBits {
    pub fn as_f64(&self) -> f64 {
        match self {
            CcBits::Finite(c) => *c as f64,
            CcBits::Unreachable => f64::INFINITY,
        }
    }
}

/// Success of the best one-way protocol for each message length, up to
/// the length that computes f exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct CCQueryResult {
    pub function_id: String,
    pub table: TruthTable,
    /// success[c] for c = 0..=x_bits
    pub success: Vec<f64>,
}

impl CCQueryResult {
    pub fn compute(function_id: impl Into<String>, t: &TruthTable) -> Result<Self> {
        let success = (0..=t.x_bits)
            .map(|c| best_success_one_way(t, c))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            function_id: function_id.into(),
            table: t.clone(),
            success,
        })
    }

    pub fn min_bits(&self, p: f64) -> CcBits {
        self.success
            .iter()
            .position(|&s| s >= p - SUCCESS_TOL)
            .map_or(CcBits::Unreachable, |c| CcBits::Finite(c as u32))
    }
}

/// C_μ(f, p): fewest one-way bits reaching success `p`.
pub fn distributional_cc(t: &TruthTable, p: f64) -> Result<CcBits> {
    for c in 0..=t.x_bits {
        if best_success_one_way(t, c)? >= p - SUCCESS_TOL {
            return Ok(CcBits::Finite(c));
        }
    }
    Ok(CcBits::Unreachable)
}

/// l = ⌈3/ε²⌉ repetitions.
pub fn chernoff_repeats(epsilon: f64) -> u64 {
    (3.0 / (epsilon * epsilon) - 1e-9).ceil() as u64
}

/// 1 − exp(−lε²/2).
pub fn chernoff_floor(l: u64, epsilon: f64) -> f64 {
    1.0 - (-(l as f64) * epsilon * epsilon / 2.0).exp()
}

/// Exact probability that the majority of `l` runs with success `p` is
/// correct; ties output 0, which is correct half the time.
pub fn majority_success_exact(p: f64, l: u64) -> f64 {
    let mut acc = 0.0;
    let mut binom = 1.0f64;
    for j in 0..=l {
        if j > 0 {
            binom = binom * (l - j + 1) as f64 / j as f64;
        }
        let prob = binom * p.powi(j as i32) * (1.0 - p).powi((l - j) as i32);
        if 2 * j > l {
            acc += prob;
        } else if 2 * j == l {
            acc += prob / 2.0;
        }
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MajorityRun {
    pub trials: u64,
    pub successes: u64,
    pub rate: f64,
    /// Binomial standard error of `rate`.
    pub sigma: f64,
}

/// Simulates majority voting over `l` independent runs, each correct with
/// probability `p`, for a uniformly random correct answer.
pub fn majority_amplify(p: f64, l: u64, trials: u64, seed: u64) -> MajorityRun {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut successes = 0u64;
    for _ in 0..trials {
        let answer: bool = rng.random();
        let mut ones = 0u64;
        for _ in 0..l {
            let correct = rng.random::<f64>() < p;
            if correct == answer {
                ones += 1;
            }
        }
        let vote = 2 * ones > l;
        if vote == answer {
            successes += 1;
        }
    }
    let rate = successes as f64 / trials.max(1) as f64;
    MajorityRun {
        trials,
        successes,
        rate,
        sigma: (rate * (1.0 - rate) / trials.max(1) as f64).sqrt(),
    }
}

/// Upper bound on C(f, 2/3) from C(f, 1/2 + ε): 3·C/ε².
pub fn pumping_ceiling(c_at_p: f64, epsilon: f64) -> f64 {
    3.0 * c_at_p / (epsilon * epsilon)
}

/// Lower bound on C(f, 1/2 + ε) from C(f, 2/3): (ε²/3)·C.
pub fn pumping_floor(c_two_thirds: f64, epsilon: f64) -> f64 {
    epsilon * epsilon / 3.0 * c_two_thirds
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PumpingCheck {
    pub epsilon: f64,
    pub c_at_p: CcBits,
    pub c_two_thirds: CcBits,
    pub floor: f64,
    pub holds: bool,
}

/// Checks C(f, 1/2 + ε) ≥ (ε²/3)·C(f, 2/3) with both sides from exhaustive tables.
pub fn verify_pumping(t: &TruthTable, epsilon: f64) -> Result<PumpingCheck> {
    let c_at_p = distributional_cc(t, 0.5 + epsilon)?;
    let c_two_thirds = distributional_cc(t, 2.0 / 3.0)?;
    let floor = pumping_floor(c_two_thirds.as_f64(), epsilon);
    Ok(PumpingCheck {
        epsilon,
        c_at_p,
        c_two_thirds,
        floor,
        holds: c_at_p.as_f64() >= floor - SUCCESS_TOL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qrac_table() {
        let t = TruthTable::qrac();
        let r = CCQueryResult::compute("qrac", &t).unwrap();
        assert_eq!(r.success, [0.5, 0.75, 1.0]);
        assert_eq!(r.min_bits(0.76), CcBits::Finite(2));
        assert_eq!(r.min_bits(0.75), CcBits::Finite(1));
        assert_eq!(r.min_bits(0.5), CcBits::Finite(0));
        assert_eq!(r.min_bits(1.01), CcBits::Unreachable);
        assert_eq!(distributional_cc(&t, 0.76).unwrap(), CcBits::Finite(2));
    }

    #[test]
    fn constant_guess_at_zero_bits() {
        let t = TruthTable::equality(2);
        assert!((best_success_one_way(&t, 0).unwrap() - t.best_constant()).abs() < 1e-15);
        assert!((best_success_one_way(&t, 2).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn partition_counts() {
        assert_eq!(partition_count(4, 4), 15);
        assert_eq!(partition_count(4, 2), 8);
        assert_eq!(partition_count(8, 8), 4140);
        assert_eq!(partition_count(3, 1), 1);
    }

    #[test]
    fn tree_examples() {
        let qrac = TruthTable::qrac();
        for c in 0..=2 {
            let one = best_success_one_way(&qrac, c).unwrap();
            let tree = best_success_tree(&qrac, c, 1).unwrap();
            assert!((one - tree).abs() < 1e-12);
        }
        assert!((best_success_tree(&qrac, 2, 2).unwrap() - 1.0).abs() < 1e-12);
        // Bob can send his index, Alice answers: still needs a reply to Bob.
        let xor1 = TruthTable::inner_xor(1);
        assert!((best_success_tree(&xor1, 1, 2).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(best_success_tree(&xor1, 1, 0), Err(CcError::NoRounds)));
    }

    #[test]
    fn chernoff_examples() {
        assert_eq!(chernoff_repeats(1.0 / 6.0), 108);
        assert_eq!(chernoff_repeats(0.5), 12);
        assert_eq!(chernoff_repeats(0.1), 300);
    }

    #[test]
    fn majority_edge_cases() {
        assert_eq!(majority_amplify(1.0, 51, 200, 1).rate, 1.0);
        assert!((majority_success_exact(1.0, 51) - 1.0).abs() < 1e-15);
        assert!((majority_success_exact(0.5, 51) - 0.5).abs() < 1e-12);
        // l = 1 is a single run
        assert!((majority_success_exact(0.6, 1) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn pumping_arithmetic() {
        assert!((pumping_floor(108.0, 1.0 / 6.0) - 1.0).abs() < 1e-12);
        assert!((pumping_ceiling(1.0, 1.0 / 6.0) - 108.0).abs() < 1e-9);
    }
}
