//! Two-party quantum communication protocols without shared entanglement.
//!
//! A protocol is an odd-length list of alternating [`Move`]s starting and
//! ending with Alice, followed by Bob's two-outcome measurement. Each move
//! applies a unitary selected by the mover's input to
//! (incoming message, own memory, fresh ancilla in |0⟩) and produces
//! (outgoing message, own memory). A memory register that the party's next
//! move does not take as input is discarded.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use thiserror::Error;

use crate::linalg::{self, complete_basis, orthonormal_basis, pow2_ceil, re, CMatrix, CVector};
use crate::qstate::{Povm, PureState, QStateError, RegisterLayout, Split};
pub use crate::truth::TruthTable;

pub const UNITARY_TOL: f64 = 1e-10;
/// Relative tolerance for span and rank decisions.
pub const RANK_TOL: f64 = 1e-10;
/// Largest deviation from isometry tolerated when compressing memory.
pub const COMPRESSION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtoError {
    #[error("malformed protocol: {0}")]
    Shape(String),
    #[error("move {index}, input {input}: unitary deviates by {defect:e}")]
    NotUnitary { index: usize, input: usize, defect: f64 },
    #[error("move {index}: message dimension {dim} is not a power of two")]
    NonPowerOfTwo { index: usize, dim: usize },
    #[error("protocol is not in single-qubit-round form")]
    NotSingleQubit,
    #[error("move {index}: memory compression is not isometric (deviation {defect:e})")]
    RankFailure { index: usize, defect: f64 },
    #[error("input ({x}, {y}) out of range")]
    InputOutOfRange { x: usize, y: usize },
    #[error(transparent)]
    State(#[from] QStateError),
}

pub type Result<T> = core::result::Result<T, ProtoError>;

fn shape(msg: impl Into<String>) -> ProtoError {
    ProtoError::Shape(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Party {
    Alice,
    Bob,
}

impl Party {
    pub fn other(self) -> Party {
        match self {
            Party::Alice => Party::Bob,
            Party::Bob => Party::Alice,
        }
    }

    fn pick(self, x: usize, y: usize) -> usize {
        match self {
            Party::Alice => x,
            Party::Bob => y,
        }
    }
}

/// One local step: `unitaries[input]` maps (msg_in ⊗ mem_in ⊗ ancilla) to
/// (msg_out ⊗ mem_out), first factor most significant.
#[derive(Debug, Clone, PartialEq)]
pub struct Move {
    pub party: Party,
    pub msg_in: usize,
    pub mem_in: usize,
    pub ancilla: usize,
    pub msg_out: usize,
    pub mem_out: usize,
    pub unitaries: Vec<CMatrix>,
}

impl Move {
    pub fn in_dim(&self) -> usize {
        self.msg_in * self.mem_in * self.ancilla
    }

    pub fn out_dim(&self) -> usize {
        self.msg_out * self.mem_out
    }
}

/// Bob's binary observable per y on (message ⊗ memory); element `b` outputs b.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalMeasurement {
    pub msg_in: usize,
    pub mem_in: usize,
    pub povms: Vec<Povm>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommProtocol {
    truth: TruthTable,
    moves: Vec<Move>,
    measurement: FinalMeasurement,
}

impl CommProtocol {
    pub fn new(truth: TruthTable, moves: Vec<Move>, measurement: FinalMeasurement) -> Result<Self> {
        if moves.is_empty() || moves.len().is_multiple_of(2) {
            return Err(shape("protocol needs an odd number of moves"));
        }
        let mut last_mem: [Option<usize>; 2] = [None, None];
        for (t, mv) in moves.iter().enumerate() {
            let want = if t % 2 == 0 { Party::Alice } else { Party::Bob };
            if mv.party != want {
                return Err(shape(format!("move {t} must belong to {want:?}")));
            }
            let inputs = match mv.party {
                Party::Alice => truth.nx(),
                Party::Bob => truth.ny(),
            };
            if mv.unitaries.len() != inputs {
                return Err(shape(format!(
                    "move {t} has {} unitaries for {inputs} inputs",
                    mv.unitaries.len()
                )));
            }
            let expected_msg = if t == 0 { 1 } else { moves[t - 1].msg_out };
            if mv.msg_in != expected_msg {
                return Err(shape(format!(
                    "move {t} takes a message of dimension {}, previous move sends {expected_msg}",
                    mv.msg_in
                )));
            }
            if mv.msg_out < 2 || mv.mem_in == 0 || mv.mem_out == 0 || mv.ancilla == 0 {
                return Err(shape(format!("move {t} has a degenerate register")));
            }
            let slot = mv.party as usize;
            if mv.mem_in > 1 && last_mem[slot] != Some(mv.mem_in) {
                return Err(shape(format!(
                    "move {t} expects memory of dimension {} that was never produced",
                    mv.mem_in
                )));
            }
            if mv.in_dim() != mv.out_dim() {
                return Err(shape(format!(
                    "move {t} maps dimension {} to {}",
                    mv.in_dim(),
                    mv.out_dim()
                )));
            }
            for (input, u) in mv.unitaries.iter().enumerate() {
                if u.nrows() != mv.out_dim() || u.ncols() != mv.in_dim() {
                    return Err(shape(format!("move {t} input {input}: wrong matrix shape")));
                }
                let defect = linalg::unitarity_defect(u);
                if defect > UNITARY_TOL {
                    return Err(ProtoError::NotUnitary {
                        index: t,
                        input,
                        defect,
                    });
                }
            }
            last_mem[slot] = Some(mv.mem_out);
        }
        let last = moves.last().map(|m| m.msg_out).unwrap_or(1);
        if measurement.msg_in != last {
            return Err(shape("final measurement does not match the last message"));
        }
        if measurement.mem_in > 1 && last_mem[Party::Bob as usize] != Some(measurement.mem_in) {
            return Err(shape("final measurement expects memory Bob does not hold"));
        }
        if measurement.povms.len() != truth.ny() {
            return Err(shape("one observable per y is required"));
        }
        for p in &measurement.povms {
            if p.len() != 2 || p.dim() != measurement.msg_in * measurement.mem_in {
                return Err(shape("observables must be two-outcome on message ⊗ memory"));
            }
        }
        Ok(Self {
            truth,
            moves,
            measurement,
        })
    }

    pub fn truth(&self) -> &TruthTable {
        &self.truth
    }

    pub fn moves(&self) -> &[Move] {
        &self.moves
    }

    pub fn measurement(&self) -> &FinalMeasurement {
        &self.measurement
    }

    /// r, where the protocol has 2r − 1 moves.
    pub fn rounds(&self) -> usize {
        self.moves.len().div_ceil(2)
    }

    /// Qubits transmitted, Σ log₂ msg_out.
    pub fn qubit_cost(&self) -> f64 {
        self.moves.iter().map(|m| (m.msg_out as f64).log2()).sum()
    }

    pub fn is_single_qubit(&self) -> bool {
        self.moves.iter().all(|m| m.msg_out == 2)
    }

    /// Whether no move takes memory as input.
    pub fn is_memoryless(&self) -> bool {
        self.moves.iter().all(|m| m.mem_in == 1) && self.measurement.mem_in == 1
    }

    /// The same party's previous move.
    pub fn previous_move(&self, t: usize) -> Option<usize> {
        t.checked_sub(2)
    }

    /// Bob's last move, if any.
    pub fn last_bob_move(&self) -> Option<usize> {
        (self.moves.len() >= 2).then(|| self.moves.len() - 2)
    }

    fn check_inputs(&self, x: usize, y: usize) -> Result<()> {
        if x >= self.truth.nx() || y >= self.truth.ny() {
            return Err(ProtoError::InputOutOfRange { x, y });
        }
        Ok(())
    }

    /// Joint pure state after the first `upto` moves. The current message is
    /// register `msg`; the memory written by move t is `mem{t}`.
    pub fn state_after(&self, x: usize, y: usize, upto: usize) -> Result<PureState> {
        self.check_inputs(x, y)?;
        let mut state = PureState::unit();
        for (t, mv) in self.moves.iter().enumerate().take(upto) {
            state = state.with_ancilla("anc", mv.ancilla)?;
            let mut inputs: Vec<String> = Vec::new();
            if mv.msg_in > 1 {
                inputs.push("msg".into());
            }
            if mv.mem_in > 1 {
                inputs.push(memory_name(self.previous_move(t).unwrap_or(t)));
            }
            if mv.ancilla > 1 {
                inputs.push("anc".into());
            }
            let inputs: Vec<&str> = inputs.iter().map(String::as_str).collect();
            let mem = memory_name(t);
            let u = &mv.unitaries[mv.party.pick(x, y)];
            state = state.transform(u, &inputs, &[("msg", mv.msg_out), (&mem, mv.mem_out)])?;
        }
        Ok(state)
    }

    fn measurement_targets(&self) -> Vec<String> {
        let mut targets = vec![String::from("msg")];
        if self.measurement.mem_in > 1 {
            if let Some(tb) = self.last_bob_move() {
                targets.push(memory_name(tb));
            }
        }
        targets
    }

    /// Exact distribution of Bob's output bit.
    pub fn output_distribution(&self, x: usize, y: usize) -> Result<[f64; 2]> {
        let state = self.state_after(x, y, self.moves.len())?;
        let targets = self.measurement_targets();
        let targets: Vec<&str> = targets.iter().map(String::as_str).collect();
        let p = state.probabilities_on(&self.measurement.povms[y], &targets)?;
        Ok([p[0], p[1]])
    }

    /// P(b = f(x, y)).
    pub fn run_exact(&self, x: usize, y: usize) -> Result<f64> {
        let dist = self.output_distribution(x, y)?;
        Ok(dist[self.truth.f(x, y) as usize])
    }

    /// Σ μ(x,y) P(b = f(x,y)).
    pub fn success_probability(&self) -> Result<f64> {
        let mut acc = 0.0;
        for x in 0..self.truth.nx() {
            for y in 0..self.truth.ny() {
                let w = self.truth.mu(x, y);
                if w > 0.0 {
                    acc += w * self.run_exact(x, y)?;
                }
            }
        }
        Ok(acc)
    }

    /// ε = p_succ − 1/2.
    pub fn advantage(&self) -> Result<f64> {
        Ok(self.success_probability()? - 0.5)
    }

    /// Same protocol computing ¬f, with every observable's outcomes swapped.
    pub fn negated(&self) -> Result<Self> {
        let povms = self
            .measurement
            .povms
            .iter()
            .map(|p| Povm::new(vec![p.elements()[1].clone(), p.elements()[0].clone()]))
            .collect::<core::result::Result<Vec<_>, _>>()?;
        Self::new(
            self.truth.negated(),
            self.moves.clone(),
            FinalMeasurement {
                povms,
                ..self.measurement.clone()
            },
        )
    }
}

pub fn memory_name(t: usize) -> String {
    format!("mem{t}")
}

/// Columns of the state viewed as a (targets × rest) matrix.
fn register_columns(state: &PureState, targets: &[&str]) -> Result<CMatrix> {
    let pos = state.layout().positions(targets)?;
    let split = Split::new(&state.layout().dims(), &pos);
    let v = state.amplitudes();
    Ok(CMatrix::from_fn(split.target_dim, split.rest_dim, |t, r| {
        v[split.full(t, r)]
    }))
}

fn columns_of(m: &CMatrix) -> impl Iterator<Item = CVector> + '_ {
    (0..m.ncols()).map(move |j| m.column(j).into_owned())
}

fn ry(theta: f64) -> CMatrix {
    let (c, s) = ((theta / 2.0).cos(), (theta / 2.0).sin());
    CMatrix::from_row_slice(2, 2, &[re(c), re(-s), re(s), re(c)])
}

/// The 2→1 random access code: x ∈ {0,1}², Bob learns bit y of x.
pub fn builtin_qrac() -> CommProtocol {
    let truth = TruthTable::qrac();
    // Bloch angle π/4 + kπ/2 with k for (x0, x1) = (0,0), (1,0), (1,1), (0,1)
    let k_of = [0.0, 1.0, 3.0, 2.0];
    let unitaries = (0..4)
        .map(|x| ry(core::f64::consts::FRAC_PI_4 + k_of[x] * core::f64::consts::FRAC_PI_2))
        .collect();
    let h = core::f64::consts::FRAC_1_SQRT_2;
    let proj = |v: [f64; 2]| linalg::outer(&CVector::from_vec(vec![re(v[0]), re(v[1])]));
    let povms = vec![
        Povm::new(vec![proj([1.0, 0.0]), proj([0.0, 1.0])]).expect("Z basis"),
        Povm::new(vec![proj([h, h]), proj([h, -h])]).expect("X basis"),
    ];
    CommProtocol::new(
        truth,
        vec![Move {
            party: Party::Alice,
            msg_in: 1,
            mem_in: 1,
            ancilla: 2,
            msg_out: 2,
            mem_out: 1,
            unitaries,
        }],
        FinalMeasurement {
            msg_in: 2,
            mem_in: 1,
            povms,
        },
    )
    .expect("built-in protocol is valid")
}

/// Matrix of the map that runs `body` on each basis state of `inputs` and
/// reads the result with registers in `outputs` order.
fn compile(
    inputs: &[(String, usize)],
    outputs: &[String],
    body: impl Fn(PureState) -> Result<PureState>,
) -> Result<CMatrix> {
    let layout = RegisterLayout::new(inputs.iter().filter(|(_, d)| *d > 1).cloned())?;
    let dim = layout.dim();
    let mut columns = Vec::with_capacity(dim);
    for k in 0..dim {
        let out = body(PureState::basis(layout.clone(), k)?)?;
        let present: Vec<&str> = outputs
            .iter()
            .map(String::as_str)
            .filter(|n| out.layout().contains(n))
            .collect();
        if present.len() != out.layout().len() {
            return Err(shape("compiled step leaves registers unaccounted for"));
        }
        let dims: Vec<(&str, usize)> = present
            .iter()
            .map(|n| (*n, out.layout().dim_of(n).unwrap_or(1)))
            .collect();
        let total = out.dim();
        let ordered = out.transform(&linalg::identity(total), &present, &dims)?;
        columns.push(ordered.amplitudes().clone());
    }
    let rows = columns.first().map_or(1, |c| c.len());
    Ok(CMatrix::from_fn(rows, dim, |r, c| columns[c][r]))
}

fn product(regs: &[(String, usize)]) -> usize {
    regs.iter().map(|(_, d)| *d).product()
}

fn names(regs: &[(String, usize)]) -> Vec<String> {
    regs.iter().map(|(n, _)| n.clone()).collect()
}

/// Per-party bookkeeping while splitting messages into single qubits.
#[derive(Default, Clone)]
struct SideState {
    /// memory registers in storage order
    memory: Vec<(String, usize)>,
    /// current name of the original memory register
    original: Option<String>,
    /// received qubits of the incoming message, most significant first
    buffer: Vec<String>,
    /// outgoing qubits not yet sent
    pending: Vec<String>,
}

struct Namer(usize);

impl Namer {
    fn fresh(&mut self, prefix: &str) -> String {
        self.0 += 1;
        format!("{prefix}{}", self.0)
    }
}

/// Splits every q-qubit message into q one-qubit transmissions. Between two
/// payload qubits the receiver stores the qubit it got and returns a fresh
/// |0⟩ shuttle; the sender parks the shuttle where the sent qubit was.
pub fn to_single_qubit_rounds(p: &CommProtocol) -> Result<CommProtocol> {
    for (index, mv) in p.moves.iter().enumerate() {
        if !mv.msg_out.is_power_of_two() {
            return Err(ProtoError::NonPowerOfTwo { index, dim: mv.msg_out });
        }
    }
    let nx = p.truth.nx();
    let ny = p.truth.ny();
    let inputs_of = |party: Party| if party == Party::Alice { nx } else { ny };
    let mut namer = Namer(0);
    let mut sides = [SideState::default(), SideState::default()];
    let mut moves: Vec<Move> = Vec::new();
    let mut incoming = 1usize;

    for mv in &p.moves {
        let me = mv.party as usize;
        let them = mv.party.other() as usize;
        let q = mv.msg_out.trailing_zeros() as usize;

        // first sub-move: the original unitary on the reassembled message
        let side = sides[me].clone();
        let mut ins: Vec<(String, usize)> = Vec::new();
        ins.push(("msg".into(), incoming));
        ins.extend(side.memory.iter().cloned());
        ins.push(("anc".into(), mv.ancilla));
        let mut u_inputs: Vec<String> = side.buffer.clone();
        if incoming > 1 {
            u_inputs.push("msg".into());
        }
        let consumed_original = if mv.mem_in > 1 {
            let name = side
                .original
                .clone()
                .ok_or_else(|| shape("memory expected but not held"))?;
            u_inputs.push(name.clone());
            Some(name)
        } else {
            None
        };
        if mv.ancilla > 1 {
            u_inputs.push("anc".into());
        }
        let payload: Vec<String> = (0..q).map(|_| namer.fresh("p")).collect();
        let new_original = (mv.mem_out > 1).then(|| namer.fresh("o"));
        let mut u_outputs: Vec<(String, usize)> = payload.iter().map(|n| (n.clone(), 2)).collect();
        if let Some(o) = &new_original {
            u_outputs.push((o.clone(), mv.mem_out));
        }
        let mut memory: Vec<(String, usize)> = side
            .memory
            .iter()
            .filter(|(n, _)| !side.buffer.contains(n) && Some(n) != consumed_original.as_ref())
            .cloned()
            .collect();
        if let Some(o) = &new_original {
            memory.push((o.clone(), mv.mem_out));
        }
        memory.extend(payload[1..].iter().map(|n| (n.clone(), 2)));
        let mut outs = vec![payload[0].clone()];
        outs.extend(names(&memory));
        let mut unitaries = Vec::with_capacity(inputs_of(mv.party));
        for u in &mv.unitaries {
            let u_in: Vec<&str> = u_inputs.iter().map(String::as_str).collect();
            let u_out: Vec<(&str, usize)> = u_outputs.iter().map(|(n, d)| (n.as_str(), *d)).collect();
            unitaries.push(compile(&ins, &outs, |s| Ok(s.transform(u, &u_in, &u_out)?))?);
        }
        moves.push(Move {
            party: mv.party,
            msg_in: incoming,
            mem_in: product(&side.memory),
            ancilla: mv.ancilla,
            msg_out: 2,
            mem_out: product(&memory),
            unitaries,
        });
        sides[me] = SideState {
            memory,
            original: new_original,
            buffer: Vec::new(),
            pending: payload[1..].to_vec(),
        };
        sides[them].buffer.clear();

        // remaining qubits: receiver stores and returns a shuttle, sender forwards
        for _ in 1..q {
            let recv = sides[them].clone();
            let stored = namer.fresh("b");
            let mut ins = vec![("msg".to_string(), 2)];
            ins.extend(recv.memory.iter().cloned());
            ins.push(("anc".into(), 2));
            let mut outs = vec!["anc".to_string()];
            outs.extend(names(&recv.memory));
            outs.push("msg".into());
            let swap = compile(&ins, &outs, Ok)?;
            let mut memory = recv.memory.clone();
            memory.push((stored.clone(), 2));
            moves.push(Move {
                party: mv.party.other(),
                msg_in: 2,
                mem_in: product(&recv.memory),
                ancilla: 2,
                msg_out: 2,
                mem_out: product(&memory),
                unitaries: vec![swap; inputs_of(mv.party.other())],
            });
            sides[them].memory = memory;
            sides[them].buffer.push(stored);

            let send = sides[me].clone();
            let next = send.pending[0].clone();
            let junk = namer.fresh("j");
            let mut ins = vec![("msg".to_string(), 2)];
            ins.extend(send.memory.iter().cloned());
            let mut outs = vec![next.clone()];
            outs.extend(
                send.memory
                    .iter()
                    .map(|(n, _)| if *n == next { "msg".to_string() } else { n.clone() }),
            );
            let forward = compile(&ins, &outs, Ok)?;
            let memory: Vec<(String, usize)> = send
                .memory
                .iter()
                .map(|(n, d)| {
                    if *n == next {
                        (junk.clone(), *d)
                    } else {
                        (n.clone(), *d)
                    }
                })
                .collect();
            moves.push(Move {
                party: mv.party,
                msg_in: 2,
                mem_in: product(&send.memory),
                ancilla: 1,
                msg_out: 2,
                mem_out: product(&memory),
                unitaries: vec![forward; inputs_of(mv.party)],
            });
            sides[me].memory = memory;
            sides[me].pending.remove(0);
        }
        incoming = 2;
    }

    // Bob's observable on (last qubit, memory): reorder to the original layout
    let bob = sides[Party::Bob as usize].clone();
    let mut ins = vec![("msg".to_string(), 2)];
    ins.extend(bob.memory.iter().cloned());
    let mut front: Vec<String> = bob.buffer.clone();
    front.push("msg".into());
    if p.measurement.mem_in > 1 {
        front.push(
            bob.original
                .clone()
                .ok_or_else(|| shape("final memory expected but not held"))?,
        );
    }
    let rest: Vec<String> = names(&bob.memory).into_iter().filter(|n| !front.contains(n)).collect();
    let rest_dim: usize = bob
        .memory
        .iter()
        .filter(|(n, _)| rest.contains(n))
        .map(|(_, d)| *d)
        .product();
    let mut order = front.clone();
    order.extend(rest);
    let w = compile(&ins, &order, Ok)?;
    let povms = p
        .measurement
        .povms
        .iter()
        .map(|povm| {
            let elements = povm
                .elements()
                .iter()
                .map(|e| linalg::symmetrize(&(w.adjoint() * linalg::kron(e, &linalg::identity(rest_dim)) * &w)))
                .collect();
            Povm::new(elements)
        })
        .collect::<core::result::Result<Vec<_>, _>>()?;
    CommProtocol::new(
        p.truth.clone(),
        moves,
        FinalMeasurement {
            msg_in: 2,
            mem_in: product(&bob.memory),
            povms,
        },
    )
}

/// Orthonormal basis of the span of `party`'s memory after move `t` over
/// every input of the other party, for the given own input. Empty when the
/// move keeps no memory.
pub fn memory_span_basis(p: &CommProtocol, t: usize, input: usize) -> Result<Vec<CVector>> {
    let mv = p.moves.get(t).ok_or_else(|| shape(format!("no move {t}")))?;
    if mv.mem_out == 1 {
        return Ok(Vec::new());
    }
    let others = match mv.party {
        Party::Alice => p.truth.ny(),
        Party::Bob => p.truth.nx(),
    };
    let mem = memory_name(t);
    let mut vectors = Vec::new();
    for v in 0..others {
        let (x, y) = match mv.party {
            Party::Alice => (input, v),
            Party::Bob => (v, input),
        };
        let state = p.state_after(x, y, t + 1)?;
        vectors.extend(columns_of(&register_columns(&state, &[&mem])?));
    }
    Ok(orthonormal_basis(&vectors, RANK_TOL))
}

/// Closure bound on the memory span: every message basis state in, every
/// message basis state out, starting from the previous span.
pub fn memory_closure_basis(p: &CommProtocol, t: usize, input: usize) -> Result<Vec<CVector>> {
    let mv = &p.moves[t];
    if mv.mem_out == 1 {
        return Ok(Vec::new());
    }
    let prev: Vec<CVector> = match p.previous_move(t) {
        Some(tp) if mv.mem_in > 1 => memory_closure_basis(p, tp, input)?,
        _ => vec![CVector::from_element(1, re(1.0))],
    };
    let u = &mv.unitaries[input];
    let mut vectors = Vec::new();
    for c_in in 0..mv.msg_in {
        for s in &prev {
            let mut v = CVector::zeros(mv.in_dim());
            for (k, amp) in s.iter().enumerate() {
                v[(c_in * mv.mem_in + k) * mv.ancilla] = *amp;
            }
            let out = u * v;
            for c_out in 0..mv.msg_out {
                vectors.push(CVector::from_fn(mv.mem_out, |m, _| out[c_out * mv.mem_out + m]));
            }
        }
    }
    Ok(orthonormal_basis(&vectors, RANK_TOL))
}

/// A protocol in which no party keeps quantum memory between its moves.
#[derive(Debug, Clone, PartialEq)]
pub struct MemorylessProtocol {
    pub protocol: CommProtocol,
    /// Qubits transmitted by the memoryless protocol.
    pub qubit_cost: f64,
    /// Qubits transmitted by the protocol it was built from.
    pub source_cost: f64,
}

impl MemorylessProtocol {
    pub fn new(protocol: CommProtocol, source_cost: f64) -> Result<Self> {
        if !protocol.is_memoryless() {
            return Err(shape("protocol keeps memory between moves"));
        }
        Ok(Self {
            qubit_cost: protocol.qubit_cost(),
            protocol,
            source_cost,
        })
    }

    /// Q² + 2Q for the source cost Q.
    pub fn cost_bound(&self) -> f64 {
        self.source_cost * self.source_cost + 2.0 * self.source_cost
    }

    pub fn within_bound(&self) -> bool {
        self.qubit_cost <= self.cost_bound() + 1e-9
    }
}

/// Isometry whose columns are `basis`, padded with zero columns to `width`.
fn padded_isometry(basis: &[CVector], rows: usize, width: usize) -> CMatrix {
    CMatrix::from_fn(rows, width, |r, c| basis.get(c).map_or(re(0.0), |b| b[r]))
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Removes all local memory: after each move the mover compresses its memory
/// onto the span it can occupy (given its own input) and sends it along with
/// the message; the other party's compressed memory rides along unchanged.
/// Each message is (qubit, Alice's memory, Bob's memory).
pub fn to_memoryless(p: &CommProtocol) -> Result<MemorylessProtocol> {
    if !p.is_single_qubit() {
        return Err(ProtoError::NotSingleQubit);
    }
    if p.is_memoryless() {
        return MemorylessProtocol::new(p.clone(), p.qubit_cost());
    }
    let moves = &p.moves;
    let count = moves.len();
    let inputs_of = |party: Party| match party {
        Party::Alice => p.truth.nx(),
        Party::Bob => p.truth.ny(),
    };
    // memory written at t is needed later iff the party's next step reads it
    let consumed: Vec<bool> = (0..count)
        .map(|t| match t + 2 < count {
            true => moves[t + 2].mem_in > 1,
            false => moves[t].party == Party::Bob && p.measurement.mem_in > 1,
        })
        .collect();
    let mut spans: Vec<Vec<Vec<CVector>>> = Vec::with_capacity(count);
    let mut widths = Vec::with_capacity(count);
    for t in 0..count {
        if consumed[t] && moves[t].mem_out > 1 {
            let per_input = (0..inputs_of(moves[t].party))
                .map(|u| memory_span_basis(p, t, u))
                .collect::<Result<Vec<_>>>()?;
            let k = per_input.iter().map(Vec::len).max().unwrap_or(1);
            widths.push(pow2_ceil(k));
            spans.push(per_input);
        } else {
            widths.push(1);
            spans.push(Vec::new());
        }
    }
    // compressed widths carried in the message after move t: [alice, bob]
    let mut carried = vec![[1usize; 2]; count];
    for t in 0..count {
        let mut c = if t == 0 { [1, 1] } else { carried[t - 1] };
        c[moves[t].party as usize] = widths[t];
        carried[t] = c;
    }

    let mut out_moves = Vec::with_capacity(count);
    for t in 0..count {
        let mv = &moves[t];
        let me = mv.party as usize;
        let q_in = mv.msg_in;
        let c_in = if t == 0 { [1, 1] } else { carried[t - 1] };
        let c_out = carried[t];
        let k_prev = if mv.mem_in > 1 { c_in[me] } else { 1 };
        let keep = c_out[me];
        let core_in = q_in * k_prev;
        let core_out = if consumed[t] && mv.mem_out > 1 {
            2 * keep
        } else {
            2 * mv.mem_out
        };
        let lcm = core_in / gcd(core_in, core_out) * core_out;
        let ancilla = lcm / core_in;
        let trash = lcm / core_out;
        let (keep_dim, trash_dim) = if consumed[t] && mv.mem_out > 1 {
            (keep, trash)
        } else {
            (1, mv.mem_out * trash)
        };

        let mut unitaries = Vec::with_capacity(mv.unitaries.len());
        for (u_index, u) in mv.unitaries.iter().enumerate() {
            let decompress = match p.previous_move(t) {
                Some(tp) if mv.mem_in > 1 => padded_isometry(&spans[tp][u_index], mv.mem_in, k_prev),
                _ => linalg::identity(1),
            };
            let compress = if consumed[t] && mv.mem_out > 1 {
                padded_isometry(&spans[t][u_index], mv.mem_out, keep).adjoint()
            } else {
                linalg::identity(mv.mem_out)
            };
            // (q_in ⊗ k_prev) → (msg_out ⊗ kept memory) through the original unitary
            let mut anc0 = CMatrix::zeros(mv.ancilla, 1);
            anc0[(0, 0)] = re(1.0);
            let embed = linalg::kron(&linalg::kron(&linalg::identity(q_in), &decompress), &anc0);
            let core = linalg::kron(&linalg::identity(mv.msg_out), &compress) * u * embed;

            // reachable inputs (incoming qubit ⊗ compressed memory) over the other party's inputs
            let reach = reachable_inputs(
                p,
                t,
                u_index,
                k_prev,
                spans.get(p.previous_move(t).unwrap_or(usize::MAX)),
            )?;
            let images: Vec<CVector> = reach.iter().map(|s| &core * s).collect();
            let gram = CMatrix::from_fn(images.len(), images.len(), |i, j| images[i].dotc(&images[j]));
            let defect = linalg::max_abs_diff(&gram, &linalg::identity(images.len()));
            if defect > COMPRESSION_TOL {
                return Err(ProtoError::RankFailure { index: t, defect });
            }
            let pad_in = |v: &CVector| {
                let mut w = CVector::zeros(lcm);
                for (i, a) in v.iter().enumerate() {
                    w[i * ancilla] = *a;
                }
                w
            };
            let pad_out = |v: &CVector| {
                let mut w = CVector::zeros(lcm);
                for (i, a) in v.iter().enumerate() {
                    w[i * trash] = *a;
                }
                w
            };
            let ins: Vec<CVector> = reach.iter().map(pad_in).collect();
            let outs: Vec<CVector> = images.iter().map(pad_out).collect();
            let ins = complete_basis(&orthonormal_basis(&ins, RANK_TOL), lcm);
            let outs = complete_basis(&orthonormal_basis(&outs, RANK_TOL), lcm);
            let mut local = CMatrix::zeros(lcm, lcm);
            for (a, b) in ins.iter().zip(&outs) {
                local += b * a.adjoint();
            }
            // lift to (q, cA, cB, anc) → (q, cA, cB, trash), other memory untouched
            let mine = if me == 0 { "cA" } else { "cB" };
            let reg_in = vec![
                ("q".to_string(), q_in),
                ("cA".to_string(), c_in[0]),
                ("cB".to_string(), c_in[1]),
                ("anc".to_string(), ancilla),
            ];
            let mut local_in: Vec<&str> = vec!["q"];
            if mv.mem_in > 1 {
                local_in.push(mine);
            }
            local_in.push("anc");
            let local_in: Vec<&str> = local_in
                .into_iter()
                .filter(|n| reg_in.iter().any(|(m, d)| m == n && *d > 1))
                .collect();
            let local_out = [("q", 2), ("keep", keep_dim), ("trash", trash_dim)];
            let mut order = vec!["q".to_string()];
            order.push(if me == 0 { "keep".into() } else { "cA".into() });
            order.push(if me == 0 { "cB".into() } else { "keep".into() });
            order.push("trash".into());
            let full = compile(&reg_in, &order, |s| Ok(s.transform(&local, &local_in, &local_out)?))?;
            unitaries.push(full);
        }
        let msg_in = q_in * c_in[0] * c_in[1];
        let msg_out = 2 * c_out[0] * c_out[1];
        out_moves.push(Move {
            party: mv.party,
            msg_in,
            mem_in: 1,
            ancilla,
            msg_out,
            mem_out: trash_dim,
            unitaries,
        });
    }

    // decompress Bob's memory inside the final observable
    let last = carried[count - 1];
    let tb = p.last_bob_move();
    let povms = p
        .measurement
        .povms
        .iter()
        .enumerate()
        .map(|(y, povm)| {
            let (x_map, k) = match tb {
                Some(tb) if p.measurement.mem_in > 1 => {
                    (padded_isometry(&spans[tb][y], p.measurement.mem_in, last[1]), last[1])
                }
                _ => (linalg::identity(1), 1),
            };
            let lift = linalg::kron(&linalg::identity(2), &x_map);
            let valid = lift.adjoint() * &lift;
            let mut elements: Vec<CMatrix> = povm.elements().iter().map(|e| lift.adjoint() * e * &lift).collect();
            elements[0] += linalg::identity(2 * k) - &valid;
            // message order is (q, cA, cB); Alice's slot is ignored
            let ca = last[0];
            let elements = elements
                .iter()
                .map(|e| {
                    let mut full = CMatrix::zeros(2 * ca * k, 2 * ca * k);
                    for q1 in 0..2 {
                        for q2 in 0..2 {
                            for a in 0..ca {
                                for b1 in 0..k {
                                    for b2 in 0..k {
                                        full[((q1 * ca + a) * k + b1, (q2 * ca + a) * k + b2)] =
                                            e[(q1 * k + b1, q2 * k + b2)];
                                    }
                                }
                            }
                        }
                    }
                    linalg::symmetrize(&full)
                })
                .collect();
            Povm::new(elements)
        })
        .collect::<core::result::Result<Vec<_>, _>>()?;
    let msg_in = out_moves.last().map_or(1, |m| m.msg_out);
    let protocol = CommProtocol::new(
        p.truth.clone(),
        out_moves,
        FinalMeasurement {
            msg_in,
            mem_in: 1,
            povms,
        },
    )?;
    MemorylessProtocol::new(protocol, p.qubit_cost())
}

/// Orthonormal basis of the (incoming qubit ⊗ compressed memory) states the
/// mover of step `t` can face with input `u`.
fn reachable_inputs(
    p: &CommProtocol,
    t: usize,
    u: usize,
    k_prev: usize,
    prev_span: Option<&Vec<Vec<CVector>>>,
) -> Result<Vec<CVector>> {
    let mv = &p.moves[t];
    let others = match mv.party {
        Party::Alice => p.truth.ny(),
        Party::Bob => p.truth.nx(),
    };
    let mut targets: Vec<String> = Vec::new();
    if mv.msg_in > 1 {
        targets.push("msg".into());
    }
    let compress = match (p.previous_move(t), prev_span) {
        (Some(tp), Some(span)) if mv.mem_in > 1 => {
            targets.push(memory_name(tp));
            padded_isometry(&span[u], mv.mem_in, k_prev).adjoint()
        }
        _ => linalg::identity(1),
    };
    let lift = linalg::kron(&linalg::identity(mv.msg_in), &compress);
    let targets: Vec<&str> = targets.iter().map(String::as_str).collect();
    let mut vectors = Vec::new();
    for v in 0..others {
        let (x, y) = match mv.party {
            Party::Alice => (u, v),
            Party::Bob => (v, u),
        };
        let state = p.state_after(x, y, t)?;
        let cols = if targets.is_empty() {
            CMatrix::from_element(1, 1, re(1.0))
        } else {
            register_columns(&state, &targets)?
        };
        vectors.extend(columns_of(&(&lift * cols)));
    }
    Ok(orthonormal_basis(&vectors, RANK_TOL))
}

/// Shape limits for [`random_protocol`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomShape {
    pub rounds: usize,
    pub x_bits: u32,
    pub y_bits: u32,
    /// Largest message dimension (a power of two).
    pub max_msg: usize,
    /// Largest memory dimension (a power of two).
    pub max_mem: usize,
}

impl Default for RandomShape {
    fn default() -> Self {
        Self {
            rounds: 2,
            x_bits: 1,
            y_bits: 1,
            max_msg: 4,
            max_mem: 4,
        }
    }
}

fn random_pow2<R: Rng + ?Sized>(lo: usize, hi: usize, rng: &mut R) -> usize {
    let (a, b) = (lo.trailing_zeros(), hi.trailing_zeros());
    1 << rng.random_range(a..=b)
}

/// Random two-outcome projective observable of random rank.
fn random_observable<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Povm {
    let v = linalg::haar_unitary(dim, rng);
    let rank = rng.random_range(1..dim.max(2));
    let mut p = CMatrix::zeros(dim, dim);
    for k in 0..rank.min(dim) {
        let col = v.column(k).into_owned();
        p += linalg::outer(&col);
    }
    let p = linalg::symmetrize(&p);
    let q = linalg::identity(dim) - &p;
    Povm::new(vec![p, q]).expect("projective pair")
}

/// Protocol with Haar-random unitaries, a random truth table under uniform
/// μ, and random register sizes within `shape`. Memory is always kept.
pub fn random_protocol<R: Rng + ?Sized>(shape: RandomShape, rng: &mut R) -> CommProtocol {
    let rounds = shape.rounds.max(1);
    let nx = 1usize << shape.x_bits;
    let ny = 1usize << shape.y_bits;
    let f: Vec<u8> = (0..nx * ny).map(|_| rng.random_range(0..2)).collect();
    let truth =
        TruthTable::new(shape.x_bits, shape.y_bits, f, vec![1.0 / (nx * ny) as f64; nx * ny]).expect("uniform table");
    let mut moves: Vec<Move> = Vec::new();
    let mut mem = [1usize, 1usize];
    let mut msg = 1usize;
    for t in 0..2 * rounds - 1 {
        let party = if t % 2 == 0 { Party::Alice } else { Party::Bob };
        let mem_in = mem[party as usize];
        let need = msg * mem_in;
        let (msg_out, mem_out) = loop {
            let m = random_pow2(2, shape.max_msg, rng);
            let k = random_pow2(1, shape.max_mem, rng);
            if m * k >= need {
                break (m, k);
            }
        };
        let ancilla = msg_out * mem_out / need;
        let dim = msg_out * mem_out;
        let inputs = if party == Party::Alice { nx } else { ny };
        moves.push(Move {
            party,
            msg_in: msg,
            mem_in,
            ancilla,
            msg_out,
            mem_out,
            unitaries: (0..inputs).map(|_| linalg::haar_unitary(dim, rng)).collect(),
        });
        mem[party as usize] = mem_out;
        msg = msg_out;
    }
    let mem_in = mem[Party::Bob as usize];
    let povms = (0..ny).map(|_| random_observable(msg * mem_in, rng)).collect();
    CommProtocol::new(
        truth,
        moves,
        FinalMeasurement {
            msg_in: msg,
            mem_in,
            povms,
        },
    )
    .expect("generated protocol is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qrac_success_is_cos_squared_pi_over_eight() {
        let p = builtin_qrac();
        let want = (core::f64::consts::PI / 8.0).cos().powi(2);
        for x in 0..4 {
            for y in 0..2 {
                assert!((p.run_exact(x, y).unwrap() - want).abs() < 1e-12);
            }
        }
        assert!((p.success_probability().unwrap() - want).abs() < 1e-12);
        assert_eq!(p.rounds(), 1);
        assert_eq!(p.qubit_cost(), 1.0);
    }

    #[test]
    fn negation_keeps_success() {
        let p = builtin_qrac();
        let n = p.negated().unwrap();
        for x in 0..4 {
            for y in 0..2 {
                assert!((p.run_exact(x, y).unwrap() - n.run_exact(x, y).unwrap()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn coin_observable_gives_half() {
        let p = builtin_qrac();
        let half = linalg::identity(2).map(|z| z * 0.5);
        let coin = Povm::new(vec![half.clone(), half]).unwrap();
        let m = FinalMeasurement {
            msg_in: 2,
            mem_in: 1,
            povms: vec![coin.clone(), coin],
        };
        let q = CommProtocol::new(p.truth().clone(), p.moves().to_vec(), m).unwrap();
        assert!((q.success_probability().unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_qubit_source_is_unchanged() {
        let p = builtin_qrac();
        let s = to_single_qubit_rounds(&p).unwrap();
        assert_eq!(s, p);
        let m = to_memoryless(&s).unwrap();
        assert_eq!(m.qubit_cost, 1.0);
        assert_eq!(m.protocol, p);
        assert!(memory_span_basis(&p, 0, 0).unwrap().is_empty());
    }

    #[test]
    fn validation_rejects_bad_shapes() {
        let p = builtin_qrac();
        let mut moves = p.moves().to_vec();
        moves[0].unitaries.pop();
        assert!(matches!(
            CommProtocol::new(p.truth().clone(), moves, p.measurement().clone()),
            Err(ProtoError::Shape(_))
        ));
        let mut moves = p.moves().to_vec();
        moves[0].unitaries[1] = moves[0].unitaries[1].map(|z| z * 2.0);
        assert!(matches!(
            CommProtocol::new(p.truth().clone(), moves, p.measurement().clone()),
            Err(ProtoError::NotUnitary { .. })
        ));
    }
}
