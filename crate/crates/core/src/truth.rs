//! Boolean functions with an input distribution.

use alloc::vec::Vec;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TruthError {
    #[error("table has {found} entries, expected {expected}")]
    Size { expected: usize, found: usize },
    #[error("function values must be 0 or 1")]
    NotBoolean,
    #[error("distribution has a negative entry")]
    Negative,
    #[error("distribution sums to {0}, not 1")]
    NotNormalized(f64),
}

pub const MU_TOL: f64 = 1e-12;

/// f: X × Y → {0,1} and μ over X × Y, stored row-major in `x * |Y| + y`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthTable {
    pub x_bits: u32,
    pub y_bits: u32,
    f: Vec<u8>,
    mu: Vec<f64>,
}

impl TruthTable {
    pub fn new(x_bits: u32, y_bits: u32, f: Vec<u8>, mu: Vec<f64>) -> Result<Self, TruthError> {
        let size = (1usize << x_bits) * (1usize << y_bits);
        for len in [f.len(), mu.len()] {
            if len != size {
                return Err(TruthError::Size {
                    expected: size,
                    found: len,
                });
            }
        }
        if f.iter().any(|&v| v > 1) {
            return Err(TruthError::NotBoolean);
        }
        if mu.iter().any(|&p| !(p >= 0.0)) {
            return Err(TruthError::Negative);
        }
        let total: f64 = mu.iter().sum();
        if (total - 1.0).abs() > MU_TOL {
            return Err(TruthError::NotNormalized(total));
        }
        Ok(Self { x_bits, y_bits, f, mu })
    }

    /// Table from a closure, uniform μ.
    pub fn uniform(x_bits: u32, y_bits: u32, f: impl Fn(usize, usize) -> bool) -> Self {
        let (nx, ny) = (1usize << x_bits, 1usize << y_bits);
        let w = 1.0 / (nx * ny) as f64;
        let values = (0..nx * ny).map(|k| f(k / ny, k % ny) as u8).collect();
        Self {
            x_bits,
            y_bits,
            f: values,
            mu: alloc::vec![w; nx * ny],
        }
    }

    /// f(x, y) = bit y of x, for two-bit x and one-bit y.
    pub fn qrac() -> Self {
        Self::uniform(2, 1, |x, y| (x >> y) & 1 == 1)
    }

    /// Equality on n bits with half the mass on the diagonal.
    pub fn equality(n: u32) -> Self {
        let size = 1usize << n;
        let diag = 0.5 / size as f64;
        let off = if size > 1 {
            0.5 / (size * (size - 1)) as f64
        } else {
            0.0
        };
        let mut f = Vec::with_capacity(size * size);
        let mut mu = Vec::with_capacity(size * size);
        for x in 0..size {
            for y in 0..size {
                f.push((x == y) as u8);
                mu.push(if x == y {
                    if size > 1 {
                        diag
                    } else {
                        1.0
                    }
                } else {
                    off
                });
            }
        }
        Self {
            x_bits: n,
            y_bits: n,
            f,
            mu,
        }
    }

    /// Parity of x ⊕ y on n bits, uniform μ.
    pub fn inner_xor(n: u32) -> Self {
        Self::uniform(n, n, |x, y| (x ^ y).count_ones() % 2 == 1)
    }

    /// ⟨x, y⟩ mod 2 on n bits, uniform μ.
    pub fn inner_product(n: u32) -> Self {
        Self::uniform(n, n, |x, y| (x & y).count_ones() % 2 == 1)
    }

    pub fn constant(x_bits: u32, y_bits: u32, value: bool) -> Self {
        Self::uniform(x_bits, y_bits, |_, _| value)
    }

    pub fn nx(&self) -> usize {
        1 << self.x_bits
    }

    pub fn ny(&self) -> usize {
        1 << self.y_bits
    }

    /// Input length used for C_μ(f, n, p): the larger of the two.
    pub fn n(&self) -> u32 {
        self.x_bits.max(self.y_bits)
    }

    #[inline]
    pub fn f(&self, x: usize, y: usize) -> u8 {
        self.f[x * self.ny() + y]
    }

    #[inline]
    pub fn mu(&self, x: usize, y: usize) -> f64 {
        self.mu[x * self.ny() + y]
    }

    pub fn values(&self) -> &[u8] {
        &self.f
    }

    pub fn distribution(&self) -> &[f64] {
        &self.mu
    }

    /// Same μ, values flipped.
    pub fn negated(&self) -> Self {
        Self {
            f: self.f.iter().map(|v| 1 - v).collect(),
            ..self.clone()
        }
    }

    /// max over b of Σ μ·[f = b]: the best constant guess.
    pub fn best_constant(&self) -> f64 {
        let ones: f64 = self
            .f
            .iter()
            .zip(&self.mu)
            .filter(|(v, _)| **v == 1)
            .map(|(_, p)| p)
            .sum();
        ones.max(1.0 - ones)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qrac_table() {
        let t = TruthTable::qrac();
        assert_eq!((t.nx(), t.ny()), (4, 2));
        for x in 0..4 {
            assert_eq!(t.f(x, 0), (x & 1) as u8);
            assert_eq!(t.f(x, 1), ((x >> 1) & 1) as u8);
        }
        assert!((t.distribution().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn equality_distribution_is_half_diagonal() {
        let t = TruthTable::equality(2);
        let diag: f64 = (0..4).map(|x| t.mu(x, x)).sum();
        assert!((diag - 0.5).abs() < 1e-15);
        assert!((t.distribution().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(TruthTable::equality(0).best_constant(), 1.0);
    }

    #[test]
    fn validation() {
        assert_eq!(
            TruthTable::new(1, 1, alloc::vec![0, 1, 2, 0], alloc::vec![0.25; 4]),
            Err(TruthError::NotBoolean)
        );
        assert!(matches!(
            TruthTable::new(1, 1, alloc::vec![0; 4], alloc::vec![0.3; 4]),
            Err(TruthError::NotNormalized(_))
        ));
        assert!(matches!(
            TruthTable::new(1, 1, alloc::vec![0; 3], alloc::vec![0.25; 4]),
            Err(TruthError::Size { .. })
        ));
    }
}
