//! Exact finite-dimensional state engine over named registers.
//!
//! States carry a [`RegisterLayout`]; operators are addressed by register
//! name, so callers never compute strides by hand. Amplitude and matrix
//! indices are row-major with the first register most significant.
//!
//! Pure states go up to [`MAX_TOTAL_DIM`] amplitudes. Density matrices are
//! dense and capped at [`MAX_DENSE_DIM`].

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use thiserror::Error;

use crate::linalg::{self, hermiticity_defect, isometry_defect, psd_sqrt, re, trace, CMatrix, CVector, C64};

/// Largest total dimension of any layout.
pub const MAX_TOTAL_DIM: usize = 1 << 20;
/// Largest dimension of a dense operator (density matrix, POVM element).
pub const MAX_DENSE_DIM: usize = 1 << 11;

pub const NORM_TOL: f64 = 1e-12;
pub const DENSITY_TOL: f64 = 1e-10;
pub const UNITARY_TOL: f64 = 1e-10;
pub const POVM_TOL: f64 = 1e-10;
const IMPOSSIBLE_EVENT: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QStateError {
    #[error("duplicate register name `{0}`")]
    DuplicateRegister(String),
    #[error("unknown register `{0}`")]
    UnknownRegister(String),
    #[error("register `{name}` has dimension {dim}, registers need dimension >= 2")]
    RegisterTooSmall { name: String, dim: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("operator is not unitary (deviation {0:e})")]
    NotUnitary(f64),
    #[error("state is not normalized (squared norm {0})")]
    NotNormalized(f64),
    #[error("matrix is not a density operator: {0}")]
    NotDensity(&'static str),
    #[error("invalid POVM: {0}")]
    InvalidPovm(&'static str),
    #[error("dimension {dim} exceeds cap {cap}")]
    CapExceeded { dim: usize, cap: usize },
    #[error("every outcome has vanishing probability")]
    ImpossibleEvent,
}

pub type Result<T> = core::result::Result<T, QStateError>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Register {
    pub name: String,
    pub dim: usize,
}

/// Ordered list of uniquely named registers.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RegisterLayout {
    registers: Vec<Register>,
}

impl RegisterLayout {
    pub fn new<S: Into<String>>(registers: impl IntoIterator<Item = (S, usize)>) -> Result<Self> {
        let mut layout = Self::default();
        for (name, dim) in registers {
            layout.push(name.into(), dim)?;
        }
        Ok(layout)
    }

    pub fn empty() -> Self {
        Self::default()
    }

    fn push(&mut self, name: String, dim: usize) -> Result<()> {
        if dim < 2 {
            return Err(QStateError::RegisterTooSmall { name, dim });
        }
        if self.position(&name).is_some() {
            return Err(QStateError::DuplicateRegister(name));
        }
        let total = self.dim().saturating_mul(dim);
        if total > MAX_TOTAL_DIM {
            return Err(QStateError::CapExceeded {
                dim: total,
                cap: MAX_TOTAL_DIM,
            });
        }
        self.registers.push(Register { name, dim });
        Ok(())
    }

    pub fn registers(&self) -> &[Register] {
        &self.registers
    }

    pub fn len(&self) -> usize {
        self.registers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.registers.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.registers.iter().map(|r| r.dim).product()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.registers.iter().map(|r| r.dim).collect()
    }

    pub fn names(&self) -> Vec<&str> {
        self.registers.iter().map(|r| r.name.as_str()).collect()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.registers.iter().position(|r| r.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.position(name).is_some()
    }

    pub fn dim_of(&self, name: &str) -> Result<usize> {
        self.position(name)
            .map(|p| self.registers[p].dim)
            .ok_or_else(|| QStateError::UnknownRegister(name.to_string()))
    }

    /// Positions of `names`, in the order given.
    pub fn positions(&self, names: &[&str]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(names.len());
        for name in names {
            let p = self
                .position(name)
                .ok_or_else(|| QStateError::UnknownRegister((*name).to_string()))?;
            if out.contains(&p) {
                return Err(QStateError::DuplicateRegister((*name).to_string()));
            }
            out.push(p);
        }
        Ok(out)
    }

    pub fn concat(&self, other: &RegisterLayout) -> Result<RegisterLayout> {
        let mut out = self.clone();
        for r in &other.registers {
            out.push(r.name.clone(), r.dim)?;
        }
        Ok(out)
    }

    /// Sub-layout made of `positions`, in the order given.
    pub fn select(&self, positions: &[usize]) -> RegisterLayout {
        RegisterLayout {
            registers: positions.iter().map(|&p| self.registers[p].clone()).collect(),
        }
    }

    /// Positions not in `positions`, in layout order.
    pub fn complement(&self, positions: &[usize]) -> Vec<usize> {
        (0..self.len()).filter(|p| !positions.contains(p)).collect()
    }

    /// Same dimensions, new names.
    pub fn renamed<S: Into<String>>(&self, names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() != self.len() {
            return Err(QStateError::DimensionMismatch {
                expected: self.len(),
                found: names.len(),
            });
        }
        RegisterLayout::new(names.into_iter().zip(self.dims()))
    }
}

/// Row bookkeeping for viewing a layout as (targets) ⊗ (rest).
///
/// `index[t * rest_dim + r]` is the full index whose target digits encode `t`
/// (targets in the order given) and whose remaining digits encode `r` (rest in
/// layout order).
#[derive(Debug, Clone)]
pub struct Split {
    pub target_dim: usize,
    pub rest_dim: usize,
    pub rest: Vec<usize>,
    index: Vec<usize>,
}

impl Split {
    pub fn new(dims: &[usize], targets: &[usize]) -> Self {
        let mut strides = vec![1usize; dims.len()];
        for k in (0..dims.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * dims[k + 1];
        }
        let rest: Vec<usize> = (0..dims.len()).filter(|p| !targets.contains(p)).collect();
        let offsets = |positions: &[usize]| -> Vec<usize> {
            let mut offs = vec![0usize];
            for &p in positions {
                let mut next = Vec::with_capacity(offs.len() * dims[p]);
                for &o in &offs {
                    for digit in 0..dims[p] {
                        next.push(o + digit * strides[p]);
                    }
                }
                offs = next;
            }
            offs
        };
        let t_off = offsets(targets);
        let r_off = offsets(&rest);
        let mut index = Vec::with_capacity(t_off.len() * r_off.len());
        for &t in &t_off {
            for &r in &r_off {
                index.push(t + r);
            }
        }
        Split {
            target_dim: t_off.len(),
            rest_dim: r_off.len(),
            rest,
            index,
        }
    }

    #[inline]
    pub fn full(&self, t: usize, r: usize) -> usize {
        self.index[t * self.rest_dim + r]
    }
}

/// Left-multiplies the target factor of every column of `m` by `op`, in place.
pub fn apply_in_place(m: &mut CMatrix, split: &Split, op: &CMatrix) {
    let t = split.target_dim;
    let mut buf = CVector::zeros(t);
    for col in 0..m.ncols() {
        for r in 0..split.rest_dim {
            for i in 0..t {
                buf[i] = m[(split.full(i, r), col)];
            }
            let out = op * &buf;
            for i in 0..t {
                m[(split.full(i, r), col)] = out[i];
            }
        }
    }
}

/// Applies `op` (out × in) to the target factor of every column of `m` and
/// returns rows indexed `r * out + o` (rest first, new factor last).
pub fn apply_moving(m: &CMatrix, split: &Split, op: &CMatrix) -> CMatrix {
    let t = split.target_dim;
    let out_dim = op.nrows();
    let mut result = CMatrix::zeros(split.rest_dim * out_dim, m.ncols());
    let mut buf = CVector::zeros(t);
    for col in 0..m.ncols() {
        for r in 0..split.rest_dim {
            for i in 0..t {
                buf[i] = m[(split.full(i, r), col)];
            }
            let out = op * &buf;
            for o in 0..out_dim {
                result[(r * out_dim + o, col)] = out[o];
            }
        }
    }
    result
}

/// Partial trace of a square matrix over everything except the split targets.
pub fn partial_trace_raw(m: &CMatrix, split: &Split) -> CMatrix {
    let t = split.target_dim;
    let mut out = CMatrix::zeros(t, t);
    for i in 0..t {
        for j in 0..t {
            let mut acc = C64::new(0.0, 0.0);
            for r in 0..split.rest_dim {
                acc += m[(split.full(i, r), split.full(j, r))];
            }
            out[(i, j)] = acc;
        }
    }
    out
}

/// Reduced operator `tr_rest |v⟩⟨v|` on the split targets.
pub fn reduce_vector(v: &CVector, split: &Split) -> CMatrix {
    let t = split.target_dim;
    let mut psi = CMatrix::zeros(t, split.rest_dim);
    for i in 0..t {
        for r in 0..split.rest_dim {
            psi[(i, r)] = v[split.full(i, r)];
        }
    }
    &psi * psi.adjoint()
}

/// Reorders the rows and columns of a square matrix so that the split
/// targets come first, followed by the rest (in layout order).
pub fn permute_square(m: &CMatrix, split: &Split) -> CMatrix {
    let d = split.target_dim * split.rest_dim;
    let order: Vec<usize> = (0..split.target_dim)
        .flat_map(|t| (0..split.rest_dim).map(move |r| (t, r)))
        .map(|(t, r)| split.full(t, r))
        .collect();
    CMatrix::from_fn(d, d, |i, j| m[(order[i], order[j])])
}

fn check_isometry(u: &CMatrix) -> Result<()> {
    let defect = isometry_defect(u);
    if defect > UNITARY_TOL {
        return Err(QStateError::NotUnitary(defect));
    }
    Ok(())
}

fn check_op_dim(op: &CMatrix, expected: usize) -> Result<()> {
    if op.ncols() != expected {
        return Err(QStateError::DimensionMismatch {
            expected,
            found: op.ncols(),
        });
    }
    Ok(())
}

fn output_layout(rest: RegisterLayout, outputs: &[(&str, usize)]) -> Result<RegisterLayout> {
    let extra = RegisterLayout::new(outputs.iter().filter(|(_, d)| *d > 1).map(|(n, d)| (n.to_string(), *d)))?;
    rest.concat(&extra)
}

fn outputs_dim(outputs: &[(&str, usize)]) -> usize {
    outputs.iter().map(|(_, d)| *d).product()
}

pub fn sample_index<R: Rng + ?Sized>(probabilities: &[f64], rng: &mut R) -> Result<usize> {
    let total: f64 = probabilities.iter().sum();
    if !(total > IMPOSSIBLE_EVENT) {
        return Err(QStateError::ImpossibleEvent);
    }
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probabilities.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return Ok(i);
        }
    }
    Ok(last)
}

/// A normalized state vector over a register layout.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    amplitudes: CVector,
    layout: RegisterLayout,
}

/// A density operator over a register layout.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedState {
    matrix: CMatrix,
    layout: RegisterLayout,
}

/// Positive operator-valued measure.
#[derive(Debug, Clone, PartialEq)]
pub struct Povm {
    elements: Vec<CMatrix>,
}

/// Result of sampling a measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct Measured<S> {
    pub outcome: usize,
    pub probabilities: Vec<f64>,
    pub post: S,
}

impl PureState {
    pub fn new(amplitudes: CVector, layout: RegisterLayout) -> Result<Self> {
        if amplitudes.len() != layout.dim() {
            return Err(QStateError::DimensionMismatch {
                expected: layout.dim(),
                found: amplitudes.len(),
            });
        }
        let norm2 = amplitudes.norm_squared();
        if (norm2 - 1.0).abs() > NORM_TOL {
            return Err(QStateError::NotNormalized(norm2));
        }
        Ok(Self { amplitudes, layout })
    }

    /// Rescales `amplitudes` to unit norm.
    pub fn normalized(amplitudes: CVector, layout: RegisterLayout) -> Result<Self> {
        let n = amplitudes.norm();
        if !(n > 0.0) {
            return Err(QStateError::NotNormalized(0.0));
        }
        Self::new(amplitudes / re(n), layout)
    }

    pub(crate) fn from_parts_unchecked(amplitudes: CVector, layout: RegisterLayout) -> Self {
        Self { amplitudes, layout }
    }

    /// Computational basis state `index`.
    pub fn basis(layout: RegisterLayout, index: usize) -> Result<Self> {
        let dim = layout.dim();
        if index >= dim {
            return Err(QStateError::DimensionMismatch {
                expected: dim,
                found: index,
            });
        }
        let mut v = CVector::zeros(dim);
        v[index] = re(1.0);
        Ok(Self { amplitudes: v, layout })
    }

    /// The scalar state on no registers.
    pub fn unit() -> Self {
        Self {
            amplitudes: CVector::from_element(1, re(1.0)),
            layout: RegisterLayout::empty(),
        }
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    pub fn layout(&self) -> &RegisterLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn with_layout(&self, layout: RegisterLayout) -> Result<Self> {
        if layout.dims() != self.layout.dims() {
            return Err(QStateError::DimensionMismatch {
                expected: self.dim(),
                found: layout.dim(),
            });
        }
        Ok(Self {
            amplitudes: self.amplitudes.clone(),
            layout,
        })
    }

    pub fn tensor(&self, other: &PureState) -> Result<PureState> {
        let layout = self.layout.concat(&other.layout)?;
        Ok(Self {
            amplitudes: linalg::kron_vec(&self.amplitudes, &other.amplitudes),
            layout,
        })
    }

    /// Appends a fresh register prepared in |0⟩.
    pub fn with_ancilla(&self, name: &str, dim: usize) -> Result<PureState> {
        if dim <= 1 {
            return Ok(self.clone());
        }
        self.tensor(&PureState::basis(RegisterLayout::new([(name, dim)])?, 0)?)
    }

    pub fn inner(&self, other: &PureState) -> Result<C64> {
        if self.dim() != other.dim() {
            return Err(QStateError::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(self.amplitudes.dotc(&other.amplitudes))
    }

    pub fn to_mixed(&self) -> Result<MixedState> {
        if self.dim() > MAX_DENSE_DIM {
            return Err(QStateError::CapExceeded {
                dim: self.dim(),
                cap: MAX_DENSE_DIM,
            });
        }
        Ok(MixedState {
            matrix: linalg::outer(&self.amplitudes),
            layout: self.layout.clone(),
        })
    }

    /// Applies `u` to `targets` (in the order given), identity elsewhere.
    pub fn apply_on(&self, u: &CMatrix, targets: &[&str]) -> Result<PureState> {
        let pos = self.layout.positions(targets)?;
        let split = Split::new(&self.layout.dims(), &pos);
        check_op_dim(u, split.target_dim)?;
        if !u.is_square() {
            return Err(QStateError::DimensionMismatch {
                expected: u.ncols(),
                found: u.nrows(),
            });
        }
        check_isometry(u)?;
        let mut m = CMatrix::from_column_slice(self.dim(), 1, self.amplitudes.as_slice());
        apply_in_place(&mut m, &split, u);
        Ok(Self {
            amplitudes: m.column(0).into_owned(),
            layout: self.layout.clone(),
        })
    }

    /// Applies an isometry from `inputs` onto freshly named `outputs`.
    /// Output registers are appended after the untouched ones; outputs of
    /// dimension 1 are dropped.
    pub fn transform(&self, u: &CMatrix, inputs: &[&str], outputs: &[(&str, usize)]) -> Result<PureState> {
        let pos = self.layout.positions(inputs)?;
        let split = Split::new(&self.layout.dims(), &pos);
        check_op_dim(u, split.target_dim)?;
        if u.nrows() != outputs_dim(outputs) {
            return Err(QStateError::DimensionMismatch {
                expected: outputs_dim(outputs),
                found: u.nrows(),
            });
        }
        check_isometry(u)?;
        let layout = output_layout(self.layout.select(&split.rest), outputs)?;
        let m = CMatrix::from_column_slice(self.dim(), 1, self.amplitudes.as_slice());
        let out = apply_moving(&m, &split, u);
        Ok(Self {
            amplitudes: out.column(0).into_owned(),
            layout,
        })
    }

    /// Reduced state on `keep`, in layout order.
    pub fn reduce(&self, keep: &[&str]) -> Result<MixedState> {
        let mut pos = self.layout.positions(keep)?;
        pos.sort_unstable();
        let layout = self.layout.select(&pos);
        if layout.dim() > MAX_DENSE_DIM {
            return Err(QStateError::CapExceeded {
                dim: layout.dim(),
                cap: MAX_DENSE_DIM,
            });
        }
        let split = Split::new(&self.layout.dims(), &pos);
        Ok(MixedState {
            matrix: reduce_vector(&self.amplitudes, &split),
            layout,
        })
    }

    /// Born probabilities of `povm` applied to `targets`.
    pub fn probabilities_on(&self, povm: &Povm, targets: &[&str]) -> Result<Vec<f64>> {
        let pos = self.layout.positions(targets)?;
        let split = Split::new(&self.layout.dims(), &pos);
        if povm.dim() != split.target_dim {
            return Err(QStateError::DimensionMismatch {
                expected: split.target_dim,
                found: povm.dim(),
            });
        }
        let rho = reduce_vector(&self.amplitudes, &split);
        Ok(povm.probabilities(&rho))
    }

    pub fn measure<R: Rng + ?Sized>(&self, povm: &Povm, rng: &mut R) -> Result<Measured<PureState>> {
        let names = self.layout.names();
        self.measure_on(povm, &names, rng)
    }

    /// Samples `povm` on `targets`; the post-state is √Π ψ / √p.
    pub fn measure_on<R: Rng + ?Sized>(
        &self,
        povm: &Povm,
        targets: &[&str],
        rng: &mut R,
    ) -> Result<Measured<PureState>> {
        let probabilities = self.probabilities_on(povm, targets)?;
        let outcome = sample_index(&probabilities, rng)?;
        let post = self.branch(povm, targets, outcome)?;
        Ok(Measured {
            outcome,
            probabilities,
            post,
        })
    }

    /// Normalized post-measurement state for a fixed outcome.
    pub fn branch(&self, povm: &Povm, targets: &[&str], outcome: usize) -> Result<PureState> {
        let pos = self.layout.positions(targets)?;
        let split = Split::new(&self.layout.dims(), &pos);
        let kraus = psd_sqrt(&povm.elements[outcome]);
        let mut m = CMatrix::from_column_slice(self.dim(), 1, self.amplitudes.as_slice());
        apply_in_place(&mut m, &split, &kraus);
        let v = m.column(0).into_owned();
        let p = v.norm_squared();
        if p < IMPOSSIBLE_EVENT {
            return Err(QStateError::ImpossibleEvent);
        }
        Ok(Self {
            amplitudes: v / re(p.sqrt()),
            layout: self.layout.clone(),
        })
    }
}

impl MixedState {
    pub fn new(matrix: CMatrix, layout: RegisterLayout) -> Result<Self> {
        let state = Self::from_parts(matrix, layout)?;
        if hermiticity_defect(&state.matrix) > DENSITY_TOL {
            return Err(QStateError::NotDensity("not Hermitian"));
        }
        if (state.trace() - 1.0).abs() > DENSITY_TOL {
            return Err(QStateError::NotDensity("trace differs from 1"));
        }
        if !linalg::is_psd(&state.matrix, DENSITY_TOL) {
            return Err(QStateError::NotDensity("negative eigenvalue"));
        }
        Ok(state)
    }

    fn from_parts(matrix: CMatrix, layout: RegisterLayout) -> Result<Self> {
        let dim = layout.dim();
        if dim > MAX_DENSE_DIM {
            return Err(QStateError::CapExceeded {
                dim,
                cap: MAX_DENSE_DIM,
            });
        }
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(QStateError::DimensionMismatch {
                expected: dim,
                found: matrix.nrows(),
            });
        }
        Ok(Self { matrix, layout })
    }

    pub fn maximally_mixed(layout: RegisterLayout) -> Result<Self> {
        let d = layout.dim();
        Self::from_parts(linalg::identity(d).map(|z| z / d as f64), layout)
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn layout(&self) -> &RegisterLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> f64 {
        trace(&self.matrix).re
    }

    pub fn with_layout(&self, layout: RegisterLayout) -> Result<Self> {
        if layout.dims() != self.layout.dims() {
            return Err(QStateError::DimensionMismatch {
                expected: self.dim(),
                found: layout.dim(),
            });
        }
        Ok(Self {
            matrix: self.matrix.clone(),
            layout,
        })
    }

    pub fn tensor(&self, other: &MixedState) -> Result<MixedState> {
        let layout = self.layout.concat(&other.layout)?;
        Self::from_parts(linalg::kron(&self.matrix, &other.matrix), layout)
    }

    /// Traces out every register not in `keep`; kept registers stay in layout order.
    pub fn partial_trace(&self, keep: &[&str]) -> Result<MixedState> {
        let mut pos = self.layout.positions(keep)?;
        pos.sort_unstable();
        let split = Split::new(&self.layout.dims(), &pos);
        Ok(Self {
            matrix: partial_trace_raw(&self.matrix, &split),
            layout: self.layout.select(&pos),
        })
    }

    pub fn apply_on(&self, u: &CMatrix, targets: &[&str]) -> Result<MixedState> {
        let pos = self.layout.positions(targets)?;
        let split = Split::new(&self.layout.dims(), &pos);
        check_op_dim(u, split.target_dim)?;
        if !u.is_square() {
            return Err(QStateError::DimensionMismatch {
                expected: u.ncols(),
                found: u.nrows(),
            });
        }
        check_isometry(u)?;
        Ok(Self {
            matrix: conjugate_in_place(&self.matrix, &split, u),
            layout: self.layout.clone(),
        })
    }

    /// Mixed-state counterpart of [`PureState::transform`].
    pub fn transform(&self, u: &CMatrix, inputs: &[&str], outputs: &[(&str, usize)]) -> Result<MixedState> {
        let pos = self.layout.positions(inputs)?;
        let split = Split::new(&self.layout.dims(), &pos);
        check_op_dim(u, split.target_dim)?;
        if u.nrows() != outputs_dim(outputs) {
            return Err(QStateError::DimensionMismatch {
                expected: outputs_dim(outputs),
                found: u.nrows(),
            });
        }
        check_isometry(u)?;
        let layout = output_layout(self.layout.select(&split.rest), outputs)?;
        let matrix = conjugate_moving(&self.matrix, &split, u);
        Self::from_parts(matrix, layout)
    }

    pub fn probabilities_on(&self, povm: &Povm, targets: &[&str]) -> Result<Vec<f64>> {
        let pos = self.layout.positions(targets)?;
        let split = Split::new(&self.layout.dims(), &pos);
        if povm.dim() != split.target_dim {
            return Err(QStateError::DimensionMismatch {
                expected: split.target_dim,
                found: povm.dim(),
            });
        }
        Ok(povm.probabilities(&partial_trace_raw(&self.matrix, &split)))
    }

    /// Samples `povm` on the whole state; post-state √Π ρ √Π / p.
    pub fn measure<R: Rng + ?Sized>(&self, povm: &Povm, rng: &mut R) -> Result<Measured<MixedState>> {
        if povm.dim() != self.dim() {
            return Err(QStateError::DimensionMismatch {
                expected: self.dim(),
                found: povm.dim(),
            });
        }
        let names = self.layout.names();
        self.measure_on(povm, &names, rng)
    }

    pub fn measure_on<R: Rng + ?Sized>(
        &self,
        povm: &Povm,
        targets: &[&str],
        rng: &mut R,
    ) -> Result<Measured<MixedState>> {
        let probabilities = self.probabilities_on(povm, targets)?;
        let outcome = sample_index(&probabilities, rng)?;
        let post = self.branch(povm, targets, outcome)?;
        Ok(Measured {
            outcome,
            probabilities,
            post,
        })
    }

    pub fn branch(&self, povm: &Povm, targets: &[&str], outcome: usize) -> Result<MixedState> {
        let pos = self.layout.positions(targets)?;
        let split = Split::new(&self.layout.dims(), &pos);
        let kraus = psd_sqrt(&povm.elements[outcome]);
        let m = conjugate_in_place(&self.matrix, &split, &kraus);
        let p = trace(&m).re;
        if p < IMPOSSIBLE_EVENT {
            return Err(QStateError::ImpossibleEvent);
        }
        Ok(Self {
            matrix: m.map(|z| z / p),
            layout: self.layout.clone(),
        })
    }
}

/// `(K ⊗ I) ρ (K ⊗ I)†` with `K` square on the split targets.
pub fn conjugate_in_place(rho: &CMatrix, split: &Split, k: &CMatrix) -> CMatrix {
    let mut m = rho.clone();
    apply_in_place(&mut m, split, k);
    let mut m = m.adjoint();
    apply_in_place(&mut m, split, k);
    m.adjoint()
}

/// `(K ⊗ I) ρ (K ⊗ I)†` with the output factor of `K` moved last.
pub fn conjugate_moving(rho: &CMatrix, split: &Split, k: &CMatrix) -> CMatrix {
    let left = apply_moving(rho, split, k);
    apply_moving(&left.adjoint(), split, k).adjoint()
}

impl Povm {
    pub fn new(elements: Vec<CMatrix>) -> Result<Self> {
        Self::with_tolerance(elements, POVM_TOL)
    }

    /// Validates positivity and completeness at `tol`.
    pub fn with_tolerance(elements: Vec<CMatrix>, tol: f64) -> Result<Self> {
        let first = elements.first().ok_or(QStateError::InvalidPovm("no elements"))?;
        let dim = first.nrows();
        if dim > MAX_DENSE_DIM {
            return Err(QStateError::CapExceeded {
                dim,
                cap: MAX_DENSE_DIM,
            });
        }
        let mut sum = CMatrix::zeros(dim, dim);
        for e in &elements {
            if e.nrows() != dim || e.ncols() != dim {
                return Err(QStateError::InvalidPovm("elements differ in dimension"));
            }
            if hermiticity_defect(e) > tol {
                return Err(QStateError::InvalidPovm("element not Hermitian"));
            }
            if !linalg::is_psd(e, tol) {
                return Err(QStateError::InvalidPovm("element not positive semidefinite"));
            }
            sum += e;
        }
        if linalg::max_abs_diff(&sum, &linalg::identity(dim)) > tol {
            return Err(QStateError::InvalidPovm("elements do not sum to identity"));
        }
        Ok(Self { elements })
    }

    /// Two-outcome measurement {E, I − E}.
    pub fn binary(effect: CMatrix) -> Result<Self> {
        let complement = linalg::identity(effect.nrows()) - &effect;
        Self::new(vec![effect, complement])
    }

    pub fn dim(&self) -> usize {
        self.elements[0].nrows()
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn elements(&self) -> &[CMatrix] {
        &self.elements
    }

    /// tr(Π_i ρ) for each element, clipped at zero.
    pub fn probabilities(&self, rho: &CMatrix) -> Vec<f64> {
        self.elements
            .iter()
            .map(|e| e.component_mul(&rho.transpose()).sum().re.max(0.0))
            .collect()
    }
}

/// Either kind of state, for operations that accept both.
#[derive(Debug, Clone, Copy)]
pub enum StateRef<'a> {
    Pure(&'a PureState),
    Mixed(&'a MixedState),
}

impl<'a> From<&'a PureState> for StateRef<'a> {
    fn from(s: &'a PureState) -> Self {
        StateRef::Pure(s)
    }
}

impl<'a> From<&'a MixedState> for StateRef<'a> {
    fn from(s: &'a MixedState) -> Self {
        StateRef::Mixed(s)
    }
}

impl StateRef<'_> {
    fn dim(&self) -> usize {
        match self {
            StateRef::Pure(p) => p.dim(),
            StateRef::Mixed(m) => m.dim(),
        }
    }
}

/// Fidelity: |⟨a|b⟩|² for pure pairs, ⟨a|ρ|a⟩ for pure/mixed, and the
/// Uhlmann form (tr√(√ρ σ √ρ))² for mixed pairs.
pub fn fidelity<'a, 'b>(a: impl Into<StateRef<'a>>, b: impl Into<StateRef<'b>>) -> Result<f64> {
    let (a, b) = (a.into(), b.into());
    if a.dim() != b.dim() {
        return Err(QStateError::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let f = match (a, b) {
        (StateRef::Pure(x), StateRef::Pure(y)) => x.amplitudes.dotc(&y.amplitudes).norm_sqr(),
        (StateRef::Pure(x), StateRef::Mixed(m)) | (StateRef::Mixed(m), StateRef::Pure(x)) => {
            x.amplitudes.dotc(&(&m.matrix * &x.amplitudes)).re
        }
        (StateRef::Mixed(x), StateRef::Mixed(y)) => {
            let s = psd_sqrt(&x.matrix);
            let inner = &s * &y.matrix * &s;
            let (vals, _) = linalg::hermitian_eigen(&inner);
            let t: f64 = vals.iter().map(|&l| if l > 0.0 { l.sqrt() } else { 0.0 }).sum();
            t * t
        }
    };
    Ok(f.clamp(0.0, 1.0))
}

/// (1/√d) Σ_i |i⟩|i⟩ on registers named `a` and `b`.
pub fn max_entangled_on(d: usize, a: &str, b: &str) -> Result<PureState> {
    let layout = RegisterLayout::new([(a, d), (b, d)])?;
    let mut v = CVector::zeros(d * d);
    let amp = 1.0 / (d as f64).sqrt();
    for i in 0..d {
        v[i * d + i] = re(amp);
    }
    Ok(PureState::from_parts_unchecked(v, layout))
}

/// Maximally entangled pair on registers `A` and `B`.
pub fn max_entangled(d: usize) -> Result<PureState> {
    max_entangled_on(d, "A", "B")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, max_abs_diff};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn qubit(name: &str, index: usize) -> PureState {
        PureState::basis(RegisterLayout::new([(name, 2)]).unwrap(), index).unwrap()
    }

    fn pauli_x() -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[re(0.0), re(1.0), re(1.0), re(0.0)])
    }

    fn proj(i: usize, d: usize) -> CMatrix {
        let mut m = CMatrix::zeros(d, d);
        m[(i, i)] = re(1.0);
        m
    }

    #[test]
    fn tensor_of_basis_states() {
        let s = qubit("a", 0).tensor(&qubit("b", 1)).unwrap();
        let want = [0.0, 1.0, 0.0, 0.0];
        for (i, w) in want.iter().enumerate() {
            assert_eq!(s.amplitudes()[i], re(*w));
        }
        assert_eq!(s.layout().names(), ["a", "b"]);
    }

    #[test]
    fn tensor_rejects_name_collision() {
        let err = qubit("a", 0).tensor(&qubit("a", 1)).unwrap_err();
        assert_eq!(err, QStateError::DuplicateRegister("a".into()));
    }

    #[test]
    fn tensor_with_maximally_mixed_keeps_unit_trace() {
        let rho = qubit("a", 1).to_mixed().unwrap();
        let mm = MixedState::maximally_mixed(RegisterLayout::new([("b", 2)]).unwrap()).unwrap();
        let t = rho.tensor(&mm).unwrap();
        assert!((t.trace() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn partial_trace_of_bell_pair_is_maximally_mixed() {
        let phi = max_entangled(2).unwrap().to_mixed().unwrap();
        for keep in ["A", "B"] {
            let r = phi.partial_trace(&[keep]).unwrap();
            assert!(max_abs_diff(r.matrix(), &linalg::identity(2).map(|z| z * 0.5)) < 1e-12);
            assert_eq!(r.layout().names(), [keep]);
        }
    }

    #[test]
    fn partial_trace_keep_all_and_product() {
        let s = qubit("A", 0).tensor(&qubit("B", 1)).unwrap().to_mixed().unwrap();
        let same = s.partial_trace(&["B", "A"]).unwrap();
        assert_eq!(same.layout().names(), ["A", "B"]);
        assert!(max_abs_diff(same.matrix(), s.matrix()) < 1e-15);
        let a = s.partial_trace(&["A"]).unwrap();
        assert!(max_abs_diff(a.matrix(), &proj(0, 2)) < 1e-15);
        assert_eq!(
            s.partial_trace(&["C"]).unwrap_err(),
            QStateError::UnknownRegister("C".into())
        );
    }

    #[test]
    fn apply_x_and_inverse() {
        let s = qubit("q", 0);
        let flipped = s.apply_on(&pauli_x(), &["q"]).unwrap();
        assert_eq!(flipped.amplitudes()[1], re(1.0));
        let id = s.apply_on(&linalg::identity(2), &["q"]).unwrap();
        assert_eq!(id, s);

        let theta = 0.37f64;
        let u = CMatrix::from_row_slice(
            2,
            2,
            &[
                c(theta.cos(), 0.0),
                c(0.0, -theta.sin()),
                c(0.0, -theta.sin()),
                c(theta.cos(), 0.0),
            ],
        );
        let two = qubit("a", 0).tensor(&qubit("b", 1)).unwrap();
        let back = two
            .apply_on(&u, &["b"])
            .unwrap()
            .apply_on(&u.adjoint(), &["b"])
            .unwrap();
        assert!((back.amplitudes() - two.amplitudes()).norm() < 1e-12);
    }

    #[test]
    fn apply_rejects_bad_operators() {
        let s = qubit("q", 0);
        let not_unitary = pauli_x().map(|z| z * 2.0);
        assert!(matches!(
            s.apply_on(&not_unitary, &["q"]),
            Err(QStateError::NotUnitary(_))
        ));
        assert!(matches!(
            s.apply_on(&linalg::identity(4), &["q"]),
            Err(QStateError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn target_order_matters() {
        // CNOT with control on the first listed register.
        let mut cnot = CMatrix::zeros(4, 4);
        for (i, j) in [(0, 0), (1, 1), (2, 3), (3, 2)] {
            cnot[(i, j)] = re(1.0);
        }
        let s = qubit("a", 0).tensor(&qubit("b", 1)).unwrap();
        let ab = s.apply_on(&cnot, &["a", "b"]).unwrap();
        assert_eq!(ab, s);
        let ba = s.apply_on(&cnot, &["b", "a"]).unwrap();
        assert_eq!(ba.amplitudes()[3], re(1.0));
    }

    #[test]
    fn measurement_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let z = Povm::new(vec![proj(0, 2), proj(1, 2)]).unwrap();
        let zero = qubit("q", 0).to_mixed().unwrap();
        let m = zero.measure(&z, &mut rng).unwrap();
        assert_eq!(m.outcome, 0);
        assert_eq!(m.probabilities, [1.0, 0.0]);
        assert!(max_abs_diff(m.post.matrix(), &proj(0, 2)) < 1e-12);

        let mm = MixedState::maximally_mixed(RegisterLayout::new([("q", 2)]).unwrap()).unwrap();
        let m = mm.measure(&z, &mut rng).unwrap();
        assert!((m.probabilities[0] - 0.5).abs() < 1e-15);
        assert!((m.probabilities[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn measuring_half_of_bell_pair_with_plus_projector() {
        // ⟨+|(I/2)|+⟩ = 1/2
        let plus = CVector::from_vec(vec![re(1.0 / 2f64.sqrt()), re(1.0 / 2f64.sqrt())]);
        let povm = Povm::binary(linalg::outer(&plus)).unwrap();
        let phi = max_entangled(2).unwrap();
        let p = phi.probabilities_on(&povm, &["A"]).unwrap();
        let direct = plus.dotc(&(linalg::identity(2).map(|z| z * 0.5) * &plus)).re;
        assert!((p[0] - direct).abs() < 1e-12);
        assert!((p[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn impossible_measurement_is_an_error() {
        let zero_povm = Povm {
            elements: vec![CMatrix::zeros(2, 2), CMatrix::zeros(2, 2)],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let err = qubit("q", 0).measure(&zero_povm, &mut rng).unwrap_err();
        assert_eq!(err, QStateError::ImpossibleEvent);
    }

    #[test]
    fn fidelity_examples() {
        let z0 = qubit("q", 0);
        let z1 = qubit("q", 1);
        assert!((fidelity(&z0, &z0).unwrap() - 1.0).abs() < 1e-15);
        assert!(fidelity(&z0, &z1).unwrap().abs() < 1e-15);
        let mm = MixedState::maximally_mixed(RegisterLayout::new([("q", 2)]).unwrap()).unwrap();
        assert!((fidelity(&z0, &mm).unwrap() - 0.5).abs() < 1e-12);
        assert!((fidelity(&z0.to_mixed().unwrap(), &mm).unwrap() - 0.5).abs() < 1e-10);
        let pair = max_entangled(2).unwrap();
        assert!(fidelity(&z0, &pair).is_err());
    }

    #[test]
    fn max_entangled_examples() {
        let p3 = max_entangled(3).unwrap();
        for i in 0..9 {
            let want = if i % 4 == 0 { 1.0 / 3f64.sqrt() } else { 0.0 };
            assert!((p3.amplitudes()[i] - re(want)).norm() < 1e-15);
        }
        let r = p3.reduce(&["B"]).unwrap();
        assert!(max_abs_diff(r.matrix(), &linalg::identity(3).map(|z| z / 3.0)) < 1e-12);
        assert!(matches!(max_entangled(1), Err(QStateError::RegisterTooSmall { .. })));
    }

    #[test]
    fn transform_moves_outputs_last() {
        // |1⟩_a ⊗ |0⟩_b → isometry on (a) onto a 4-dim register c
        let s = qubit("a", 1).tensor(&qubit("b", 0)).unwrap();
        let mut iso = CMatrix::zeros(4, 2);
        iso[(0, 0)] = re(1.0);
        iso[(3, 1)] = re(1.0);
        let t = s.transform(&iso, &["a"], &[("c", 4)]).unwrap();
        assert_eq!(t.layout().names(), ["b", "c"]);
        assert_eq!(t.amplitudes()[3], re(1.0));
        let tm = s.to_mixed().unwrap().transform(&iso, &["a"], &[("c", 4)]).unwrap();
        assert!(max_abs_diff(tm.matrix(), t.to_mixed().unwrap().matrix()) < 1e-15);
    }

    #[test]
    fn layout_cap_is_enforced() {
        let err = RegisterLayout::new([("a", 1 << 11), ("b", 1 << 10)]).unwrap_err();
        assert!(matches!(err, QStateError::CapExceeded { .. }));
    }
}
