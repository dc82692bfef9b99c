//! Bell functionals from quantum communication protocols.
//!
//! A memoryless protocol is run with every message sent through port-based
//! teleportation and no classical communication: each receiver applies its
//! move to every port it holds and teleports every result onward. The
//! teleportation outcomes form a tree whose root-to-leaf paths select Bob's
//! terminal guesses. This module builds the resulting correlations, the
//! linear functional over paths, its local bound, and the one-way route
//! through remote state preparation.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::ccoracle::{self, CcBits, CcError};
use crate::linalg::{self, re, CMatrix, C64};
use crate::pbt::{build_pbt_povm, PbtError};
use crate::proto::{CommProtocol, MemorylessProtocol, ProtoError};
use crate::qstate::{max_entangled, sample_index, Povm, QStateError};
use crate::rsp::{index_cost_bits, rsp_povm};
use crate::truth::TruthTable;

/// Largest |Alice alphabet| · |Bob alphabet| for exact tables.
pub const TABLE_CAP: u64 = 1 << 16;
/// Largest number of moves for exact tables.
pub const EXACT_MAX_MOVES: usize = 3;
/// Largest enumerated side of the local-strategy search.
pub const LHV_CAP: u128 = 10_000_000;
const PROB_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BellError {
    #[error("schedule does not match protocol: {0}")]
    Schedule(String),
    #[error("{what} of {size} exceeds cap {cap}")]
    Cap { what: &'static str, size: u128, cap: u128 },
    #[error("protocol must consist of a single move with a pure message")]
    NotOneWay,
    #[error("delta must lie in (0, 1), got {0}")]
    InvalidDelta(f64),
    #[error("table and functional disagree: {0}")]
    Mismatch(String),
    #[error("negative probability {0:e}")]
    NegativeProbability(f64),
    #[error(transparent)]
    Proto(#[from] ProtoError),
    #[error(transparent)]
    Pbt(#[from] PbtError),
    #[error(transparent)]
    Cc(#[from] CcError),
    #[error(transparent)]
    State(#[from] QStateError),
}

pub type Result<T> = core::result::Result<T, BellError>;

/// Ports N_t and port dimension per teleportation step, one step per move.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PortSchedule {
    pub ports: Vec<usize>,
    pub dims: Vec<usize>,
    /// Replace teleportation by a perfect channel (requires one port per step).
    pub ideal: bool,
}

impl PortSchedule {
    /// Port dimensions taken from the protocol's messages.
    pub fn for_protocol(p: &CommProtocol, ports: &[usize]) -> Result<Self> {
        let s = Self {
            ports: ports.to_vec(),
            dims: p.moves().iter().map(|m| m.msg_out).collect(),
            ideal: false,
        };
        s.check(p)?;
        Ok(s)
    }

    /// One perfect channel per move.
    pub fn ideal(p: &CommProtocol) -> Self {
        Self {
            ports: vec![1; p.moves().len()],
            dims: p.moves().iter().map(|m| m.msg_out).collect(),
            ideal: true,
        }
    }

    pub fn check(&self, p: &CommProtocol) -> Result<()> {
        let moves = p.moves();
        if self.ports.len() != moves.len() || self.dims.len() != moves.len() {
            return Err(BellError::Schedule(format!(
                "{} steps for {} moves",
                self.ports.len(),
                moves.len()
            )));
        }
        for (t, mv) in moves.iter().enumerate() {
            if self.ports[t] == 0 {
                return Err(BellError::Schedule(format!("step {t} has no ports")));
            }
            if self.dims[t] != mv.msg_out {
                return Err(BellError::Schedule(format!(
                    "step {t} ports have dimension {}, message has {}",
                    self.dims[t], mv.msg_out
                )));
            }
            if mv.mem_in != 1 {
                return Err(BellError::Schedule(format!("move {t} reads local memory")));
            }
            if self.ideal && self.ports[t] != 1 {
                return Err(BellError::Schedule("ideal channels use one port".into()));
            }
        }
        if p.measurement().mem_in != 1 {
            return Err(BellError::Schedule("final observable reads local memory".into()));
        }
        Ok(())
    }

    /// Σ log₂ N_t.
    pub fn budget_bits(&self) -> f64 {
        self.ports.iter().map(|&n| (n as f64).log2()).sum()
    }
}

/// The outcome tree: level t < T has one node per port of step t − 1 (one
/// root), each with N_t values; level T holds Bob's binary guesses.
/// Alice owns even levels, Bob odd levels (T is odd).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutcomeTree {
    ports: Vec<usize>,
    /// weight of node (level, g) inside its owner's tuple index
    weights: Vec<Vec<u64>>,
    sizes: [u64; 2],
}

impl OutcomeTree {
    pub fn new(ports: &[usize]) -> Result<Self> {
        if ports.is_empty() || ports.len().is_multiple_of(2) || ports.contains(&0) {
            return Err(BellError::Schedule("need an odd number of non-empty steps".into()));
        }
        let levels = ports.len() + 1;
        let mut sizes = [1u64; 2];
        let mut weights = Vec::with_capacity(levels);
        let mut nodes = 1u64;
        let overflow = || BellError::Cap {
            what: "outcome alphabet",
            size: u128::MAX,
            cap: u64::MAX as u128,
        };
        for level in 0..levels {
            let a = if level < ports.len() { ports[level] as u64 } else { 2 };
            let owner = level % 2;
            let mut w = Vec::with_capacity(nodes as usize);
            for _ in 0..nodes {
                w.push(sizes[owner]);
                sizes[owner] = sizes[owner].checked_mul(a).ok_or_else(overflow)?;
            }
            weights.push(w);
            if level < ports.len() {
                nodes = nodes.checked_mul(a).ok_or_else(overflow)?;
            }
        }
        Ok(Self {
            ports: ports.to_vec(),
            weights,
            sizes,
        })
    }

    pub fn ports(&self) -> &[usize] {
        &self.ports
    }

    pub fn levels(&self) -> usize {
        self.ports.len() + 1
    }

    pub fn alphabet(&self, level: usize) -> usize {
        self.ports.get(level).copied().unwrap_or(2)
    }

    /// Size of Alice's and Bob's output tuple alphabets.
    pub fn alice_size(&self) -> u64 {
        self.sizes[0]
    }

    pub fn bob_size(&self) -> u64 {
        self.sizes[1]
    }

    /// Number of root-to-leaf paths, Π N_t.
    pub fn path_count(&self) -> usize {
        self.ports.iter().product()
    }

    fn digit(&self, alpha: u64, beta: u64, level: usize, node: usize) -> usize {
        let idx = if level.is_multiple_of(2) { alpha } else { beta };
        ((idx / self.weights[level][node]) % self.alphabet(level) as u64) as usize
    }

    /// The realized path index (level 0 most significant) and Bob's guess on it.
    pub fn decide(&self, alpha: u64, beta: u64) -> (usize, u8) {
        let mut node = 0usize;
        for level in 0..self.ports.len() {
            let v = self.digit(alpha, beta, level, node);
            node = node * self.ports[level] + v;
        }
        (node, self.digit(alpha, beta, self.ports.len(), node) as u8)
    }

    fn index_of(&self, digits: &[Vec<u16>]) -> (u64, u64) {
        let mut idx = [0u64; 2];
        for (level, values) in digits.iter().enumerate() {
            for (g, v) in values.iter().enumerate() {
                idx[level % 2] += self.weights[level][g] * *v as u64;
            }
        }
        (idx[0], idx[1])
    }
}

/// One teleportation step as an instrument: `blocks[i][m·d + m']` is the
/// image of |m⟩⟨m'| on all ports for outcome i, `port[i][..]` the same
/// traced onto port i.
struct Instrument {
    n: usize,
    d: usize,
    blocks: Vec<Vec<CMatrix>>,
    port: Vec<Vec<CMatrix>>,
}

impl Instrument {
    fn new(n: usize, d: usize, ideal: bool, full: bool) -> Result<Self> {
        if ideal {
            let unit = |m: usize, m2: usize| {
                let mut e = CMatrix::zeros(d, d);
                e[(m, m2)] = re(1.0);
                e
            };
            let blocks: Vec<CMatrix> = (0..d * d).map(|k| unit(k / d, k % d)).collect();
            return Ok(Self {
                n: 1,
                d,
                blocks: vec![blocks.clone()],
                port: vec![blocks],
            });
        }
        let meas = build_pbt_povm(n, d)?;
        let mut blocks = Vec::with_capacity(n);
        let mut port = Vec::with_capacity(n);
        for i in 0..n {
            if full {
                blocks.push((0..d * d).map(|k| meas.channel_block(i, k / d, k % d)).collect());
            }
            port.push((0..d * d).map(|k| meas.port_block(i, k / d, k % d)).collect());
        }
        Ok(Self { n, d, blocks, port })
    }

    /// Σ ρ[m,m'] · maps[m·d + m'].
    fn apply(maps: &[CMatrix], rho: &CMatrix, d: usize) -> CMatrix {
        let mut out = CMatrix::zeros(maps[0].nrows(), maps[0].ncols());
        for m in 0..d {
            for m2 in 0..d {
                let w = rho[(m, m2)];
                if w != re(0.0) {
                    out += &maps[m * d + m2] * w;
                }
            }
        }
        out
    }
}

fn instruments(s: &PortSchedule, full: bool) -> Result<Vec<Instrument>> {
    let mut out: Vec<Instrument> = Vec::with_capacity(s.ports.len());
    for (t, (&n, &d)) in s.ports.iter().zip(&s.dims).enumerate() {
        if let Some(prev) = (0..t).find(|&k| s.ports[k] == n && s.dims[k] == d) {
            let copy = Instrument {
                n,
                d,
                blocks: out[prev].blocks.clone(),
                port: out[prev].port.clone(),
            };
            out.push(copy);
            continue;
        }
        out.push(Instrument::new(n, d, s.ideal, full)?);
    }
    Ok(out)
}

/// Move t with fresh ancilla in |0⟩ as an isometry msg_in → msg_out ⊗ trash.
fn move_isometry(p: &CommProtocol, t: usize, x: usize, y: usize) -> CMatrix {
    let mv = &p.moves()[t];
    let u = &mv.unitaries[if t.is_multiple_of(2) { x } else { y }];
    CMatrix::from_fn(u.nrows(), mv.msg_in, |r, m| u[(r, m * mv.ancilla)])
}

/// ρ ↦ Tr_trash V ρ V†.
fn move_channel(v: &CMatrix, rho: &CMatrix, msg_out: usize) -> CMatrix {
    let trash = v.nrows() / msg_out;
    let full = v * rho * v.adjoint();
    CMatrix::from_fn(msg_out, msg_out, |a, b| {
        (0..trash).map(|k| full[(a * trash + k, b * trash + k)]).sum()
    })
}

/// X ↦ V† (X ⊗ I_trash) V.
fn move_adjoint(v: &CMatrix, x: &CMatrix) -> CMatrix {
    let trash = v.nrows() / x.nrows();
    v.adjoint() * linalg::kron(x, &linalg::identity(trash)) * v
}

/// tr[M (H_{c_0} ⊗ … ⊗ H_{c_{n−1}})] for every combination, port 0 most
/// significant.
fn contract_all(m: &CMatrix, d: usize, n: usize, effects: &[CMatrix]) -> Vec<C64> {
    let mut current = vec![m.clone()];
    let mut dim = m.nrows();
    for _ in 0..n {
        let rest = dim / d;
        let mut next = Vec::with_capacity(current.len() * effects.len());
        for mat in &current {
            for h in effects {
                let mut out = CMatrix::zeros(rest, rest);
                for k in 0..d {
                    for l in 0..d {
                        let w = h[(l, k)];
                        if w == re(0.0) {
                            continue;
                        }
                        out += mat.view((k * rest, l * rest), (rest, rest)) * w;
                    }
                }
                next.push(out);
            }
        }
        current = next;
        dim = rest;
    }
    current.into_iter().map(|c| c[(0, 0)]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableMode {
    Exact,
    Sampled { trials: u64, seed: u64 },
}

/// Joint distribution of (Alice's tuple α, Bob's tuple β) for every (x, y),
/// stored as `rows[x·|Y| + y][α·|B| + β]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationTable {
    pub tree: OutcomeTree,
    pub nx: usize,
    pub ny: usize,
    pub mode: TableMode,
    pub rows: Vec<Vec<f64>>,
}

impl CorrelationTable {
    pub fn prob(&self, x: usize, y: usize, alpha: u64, beta: u64) -> f64 {
        self.rows[x * self.ny + y][(alpha * self.tree.bob_size() + beta) as usize]
    }

    /// P(path, guess) for every path, from the full joint.
    pub fn path_marginals(&self, x: usize, y: usize) -> Vec<[f64; 2]> {
        let mut out = vec![[0.0; 2]; self.tree.path_count()];
        let bs = self.tree.bob_size();
        for (k, &p) in self.rows[x * self.ny + y].iter().enumerate() {
            if p != 0.0 {
                let (path, o) = self.tree.decide(k as u64 / bs, k as u64 % bs);
                out[path][o as usize] += p;
            }
        }
        out
    }
}

fn check_table_caps(p: &CommProtocol, tree: &OutcomeTree) -> Result<()> {
    if p.moves().len() > EXACT_MAX_MOVES {
        return Err(BellError::Cap {
            what: "move count",
            size: p.moves().len() as u128,
            cap: EXACT_MAX_MOVES as u128,
        });
    }
    let size = tree.alice_size() as u128 * tree.bob_size() as u128;
    if size > TABLE_CAP as u128 {
        return Err(BellError::Cap {
            what: "outcome alphabet product",
            size,
            cap: TABLE_CAP as u128,
        });
    }
    Ok(())
}

/// Effects of a subtree on its incoming message, with the subtree's outcome
/// digits per relative level.
type Effects = Vec<(CMatrix, Vec<Vec<u16>>)>;

#[allow(clippy::needless_range_loop)]
fn exact_row(
    p: &CommProtocol,
    s: &PortSchedule,
    inst: &[Instrument],
    tree: &OutcomeTree,
    x: usize,
    y: usize,
) -> Result<Vec<f64>> {
    let steps = p.moves().len();
    let mut eff: Effects = p.measurement().povms[y]
        .elements()
        .iter()
        .enumerate()
        .map(|(o, e)| (e.clone(), vec![vec![o as u16]]))
        .collect();
    for t in (1..steps).rev() {
        let ins = &inst[t];
        let ops: Vec<CMatrix> = eff.iter().map(|(e, _)| e.clone()).collect();
        let v = move_isometry(p, t, x, y);
        let combos = eff.len().pow(ins.n as u32);
        let mut next: Effects = Vec::with_capacity(ins.n * combos);
        for i in 0..ins.n {
            let vals: Vec<Vec<C64>> = ins.blocks[i]
                .iter()
                .map(|b| contract_all(b, ins.d, ins.n, &ops))
                .collect();
            for combo in 0..combos {
                let y_op = CMatrix::from_fn(ins.d, ins.d, |m2, m| vals[m * ins.d + m2][combo]);
                let op = move_adjoint(&v, &y_op);
                next.push((op, merge_labels(i, combo, ins.n, &eff)));
            }
        }
        eff = next;
    }
    let ins = &inst[0];
    let v = move_isometry(p, 0, x, y);
    let rho = move_channel(&v, &CMatrix::from_element(1, 1, re(1.0)), s.dims[0]);
    let ops: Vec<CMatrix> = eff.iter().map(|(e, _)| e.clone()).collect();
    let mut row = vec![0.0; (tree.alice_size() * tree.bob_size()) as usize];
    for a in 0..ins.n {
        let tau = Instrument::apply(&ins.blocks[a], &rho, ins.d);
        let vals = contract_all(&tau, ins.d, ins.n, &ops);
        for (combo, val) in vals.iter().enumerate() {
            let digits = merge_labels(a, combo, ins.n, &eff);
            let (alpha, beta) = tree.index_of(&digits);
            let mut pr = val.re;
            if pr < 0.0 {
                if pr < -PROB_TOL {
                    return Err(BellError::NegativeProbability(pr));
                }
                pr = 0.0;
            }
            row[(alpha * tree.bob_size() + beta) as usize] = pr;
        }
    }
    Ok(row)
}

/// Digits of a node with value `i` whose children carry the subtree labels
/// selected by `combo` (first child most significant).
fn merge_labels(i: usize, combo: usize, n: usize, eff: &Effects) -> Vec<Vec<u16>> {
    let k = eff.len();
    let mut picks = vec![0usize; n];
    let mut c = combo;
    for slot in picks.iter_mut().rev() {
        *slot = c % k;
        c /= k;
    }
    let depth = eff.first().map_or(0, |(_, l)| l.len());
    let mut out = Vec::with_capacity(depth + 1);
    out.push(vec![i as u16]);
    for level in 0..depth {
        let mut row = Vec::new();
        for &pick in &picks {
            row.extend_from_slice(&eff[pick].1[level]);
        }
        out.push(row);
    }
    out
}

/// Instruments and tree for building a correlation table one (x, y) row
/// at a time. Rows are independent, so callers may compute them in parallel.
pub struct CorrelationEngine<'a> {
    protocol: &'a CommProtocol,
    schedule: &'a PortSchedule,
    inst: Vec<Instrument>,
    tree: OutcomeTree,
}

impl<'a> CorrelationEngine<'a> {
    pub fn new(p: &'a MemorylessProtocol, s: &'a PortSchedule) -> Result<Self> {
        let protocol = &p.protocol;
        s.check(protocol)?;
        let tree = OutcomeTree::new(&s.ports)?;
        check_table_caps(protocol, &tree)?;
        Ok(Self {
            protocol,
            schedule: s,
            inst: instruments(s, true)?,
            tree,
        })
    }

    /// (|X|, |Y|); row index is x·|Y| + y.
    pub fn inputs(&self) -> (usize, usize) {
        (self.protocol.truth().nx(), self.protocol.truth().ny())
    }

    pub fn row(&self, x: usize, y: usize, mode: TableMode) -> Result<Vec<f64>> {
        let exact = exact_row(self.protocol, self.schedule, &self.inst, &self.tree, x, y)?;
        Ok(match mode {
            TableMode::Exact => exact,
            TableMode::Sampled { trials, seed } => {
                sample_row(&exact, trials, &mut row_rng(seed, x * self.inputs().1 + y))
            }
        })
    }

    pub fn assemble(self, rows: Vec<Vec<f64>>, mode: TableMode) -> Result<CorrelationTable> {
        let (nx, ny) = self.inputs();
        if rows.len() != nx * ny {
            return Err(BellError::Mismatch(format!(
                "{} rows for {} inputs",
                rows.len(),
                nx * ny
            )));
        }
        Ok(CorrelationTable {
            tree: self.tree,
            nx,
            ny,
            mode,
            rows,
        })
    }
}

/// Correlations of the port-teleported memoryless protocol.
pub fn generate_correlations(p: &MemorylessProtocol, s: &PortSchedule, mode: TableMode) -> Result<CorrelationTable> {
    let engine = CorrelationEngine::new(p, s)?;
    let (nx, ny) = engine.inputs();
    let rows = (0..nx * ny)
        .map(|k| engine.row(k / ny, k % ny, mode))
        .collect::<Result<Vec<_>>>()?;
    engine.assemble(rows, mode)
}

/// Generator for one (x, y) row of a sampled table.
pub fn row_rng(seed: u64, row: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(row as u64);
    rng
}

fn sample_row<R: Rng + ?Sized>(exact: &[f64], trials: u64, rng: &mut R) -> Vec<f64> {
    let mut cumulative = Vec::with_capacity(exact.len());
    let mut acc = 0.0;
    for p in exact {
        acc += p;
        cumulative.push(acc);
    }
    let mut counts = vec![0u64; exact.len()];
    for _ in 0..trials {
        let u = rng.random::<f64>() * acc;
        let k = cumulative.partition_point(|&c| c <= u).min(exact.len() - 1);
        counts[k] += 1;
    }
    counts.into_iter().map(|c| c as f64 / trials.max(1) as f64).collect()
}

/// Port-selected channels for following single outcome paths, without the
/// joint table and its caps. Per-(x, y) work is independent.
pub struct PathEngine<'a> {
    protocol: &'a CommProtocol,
    schedule: &'a PortSchedule,
    inst: Vec<Instrument>,
}

impl<'a> PathEngine<'a> {
    pub fn new(p: &'a MemorylessProtocol, s: &'a PortSchedule) -> Result<Self> {
        s.check(&p.protocol)?;
        Ok(Self {
            protocol: &p.protocol,
            schedule: s,
            inst: instruments(s, false)?,
        })
    }

    pub fn inputs(&self) -> (usize, usize) {
        (self.protocol.truth().nx(), self.protocol.truth().ny())
    }

    fn start(&self, x: usize, y: usize) -> CMatrix {
        let v = move_isometry(self.protocol, 0, x, y);
        move_channel(&v, &CMatrix::from_element(1, 1, re(1.0)), self.schedule.dims[0])
    }

    /// P(path, guess) for every path, level 0 most significant.
    pub fn distribution(&self, x: usize, y: usize) -> Vec<[f64; 2]> {
        let mut out = Vec::with_capacity(self.schedule.ports.iter().product());
        self.walk(x, y, 0, self.start(x, y), &mut out);
        out
    }

    fn walk(&self, x: usize, y: usize, t: usize, rho: CMatrix, out: &mut Vec<[f64; 2]>) {
        let ins = &self.inst[t];
        for i in 0..ins.n {
            let selected = Instrument::apply(&ins.port[i], &rho, ins.d);
            if t + 1 == self.schedule.ports.len() {
                let povm = &self.protocol.measurement().povms[y];
                let mut pair = [0.0; 2];
                for (o, e) in povm.elements().iter().enumerate() {
                    pair[o] = linalg::trace(&(e * &selected)).re.max(0.0);
                }
                out.push(pair);
            } else {
                let v = move_isometry(self.protocol, t + 1, x, y);
                let next = move_channel(&v, &selected, self.schedule.dims[t + 1]);
                self.walk(x, y, t + 1, next, out);
            }
        }
    }

    /// Probability that the realized leaf guesses f(x, y).
    pub fn success(&self, x: usize, y: usize) -> f64 {
        let f = self.protocol.truth().f(x, y) as usize;
        self.distribution(x, y).iter().map(|pair| pair[f]).sum()
    }

    /// Trials, out of `trials`, in which one sampled path guesses f(x, y).
    pub fn sampled_hits(&self, x: usize, y: usize, trials: u64, seed: u64) -> Result<u64> {
        let steps = self.schedule.ports.len();
        let mut rng = row_rng(seed, x * self.inputs().1 + y);
        let start = self.start(x, y);
        let mut hits = 0u64;
        for _ in 0..trials {
            let mut rho = start.clone();
            for (step, ins) in self.inst.iter().enumerate() {
                let branches: Vec<CMatrix> = (0..ins.n)
                    .map(|i| Instrument::apply(&ins.port[i], &rho, ins.d))
                    .collect();
                let weights: Vec<f64> = branches.iter().map(|b| linalg::trace(b).re.max(0.0)).collect();
                let i = sample_index(&weights, &mut rng)?;
                let chosen = &branches[i] / re(weights[i]);
                rho = if step + 1 < steps {
                    let v = move_isometry(self.protocol, step + 1, x, y);
                    move_channel(&v, &chosen, self.schedule.dims[step + 1])
                } else {
                    chosen
                };
            }
            let probs = self.protocol.measurement().povms[y].probabilities(&rho);
            if sample_index(&probs, &mut rng)? == self.protocol.truth().f(x, y) as usize {
                hits += 1;
            }
        }
        Ok(hits)
    }
}

/// P(path, guess) for every path by following only the selected ports.
pub fn path_distribution(p: &MemorylessProtocol, s: &PortSchedule, x: usize, y: usize) -> Result<Vec<[f64; 2]>> {
    Ok(PathEngine::new(p, s)?.distribution(x, y))
}

/// Success when both parties exchange every selected port index and Bob
/// outputs the guess on the realized leaf, and the bits it uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassicalSimulation {
    pub success: f64,
    pub bits: f64,
}

pub fn simulate_with_classical_comm(
    table: &CorrelationTable,
    s: &PortSchedule,
    truth: &TruthTable,
) -> Result<ClassicalSimulation> {
    if table.tree.ports() != s.ports.as_slice() {
        return Err(BellError::Mismatch("table built for another schedule".into()));
    }
    let mut success = 0.0;
    for x in 0..table.nx {
        for y in 0..table.ny {
            let f = truth.f(x, y) as usize;
            let hit: f64 = table.path_marginals(x, y).iter().map(|pair| pair[f]).sum();
            success += truth.mu(x, y) * hit;
        }
    }
    Ok(ClassicalSimulation {
        success,
        bits: s.budget_bits(),
    })
}

/// Exact success of the same simulation without building the joint table.
pub fn path_success(p: &MemorylessProtocol, s: &PortSchedule) -> Result<f64> {
    let engine = PathEngine::new(p, s)?;
    let t = p.protocol.truth();
    let mut success = 0.0;
    for x in 0..t.nx() {
        for y in 0..t.ny() {
            success += t.mu(x, y) * engine.success(x, y);
        }
    }
    Ok(success)
}

/// Monte Carlo estimate of [`path_success`]: each trial follows one path,
/// sampling the selected port and Bob's guess. Per-(x, y) streams.
pub fn path_success_sampled(p: &MemorylessProtocol, s: &PortSchedule, trials: u64, seed: u64) -> Result<f64> {
    let engine = PathEngine::new(p, s)?;
    let t = p.protocol.truth();
    let mut success = 0.0;
    for x in 0..t.nx() {
        for y in 0..t.ny() {
            let hits = engine.sampled_hits(x, y, trials, seed)?;
            success += t.mu(x, y) * hits as f64 / trials.max(1) as f64;
        }
    }
    Ok(success)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundMethod {
    /// Maximum over deterministic local assignments of the functional.
    ExactLhv,
    /// Best classical protocol with the functional's message alphabets.
    CcDerived,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassicalBound {
    pub delta: f64,
    pub method: BoundMethod,
}

/// Σ μ(x,y) Σ_paths p(path, o_path = f(x,y) | x, y) ≤ 1/2 + δ.
#[derive(Debug, Clone, PartialEq)]
pub struct BellFunctional {
    pub truth: TruthTable,
    pub tree: OutcomeTree,
    pub budget_bits: f64,
    pub bound: Option<ClassicalBound>,
}

impl BellFunctional {
    /// Coefficient of p(α, β | x, y): μ(x,y) if the realized leaf guesses f.
    pub fn coefficient(&self, x: usize, y: usize, alpha: u64, beta: u64) -> f64 {
        let (_, o) = self.tree.decide(alpha, beta);
        if o == self.truth.f(x, y) {
            self.truth.mu(x, y)
        } else {
            0.0
        }
    }

    /// Path terms per terminal bit: |X|·|Y|·(number of paths).
    pub fn path_terms(&self) -> usize {
        self.truth.nx() * self.truth.ny() * self.tree.path_count()
    }

    pub fn with_bound(mut self, bound: ClassicalBound) -> Self {
        self.bound = Some(bound);
        self
    }
}

pub fn build_linear_bell(t: &TruthTable, s: &PortSchedule) -> Result<BellFunctional> {
    Ok(BellFunctional {
        truth: t.clone(),
        tree: OutcomeTree::new(&s.ports)?,
        budget_bits: s.budget_bits(),
        bound: None,
    })
}

/// Quantum-to-classical ratio of shifted values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ratio {
    Finite(f64),
    /// The classical shifted value is zero.
    Infinite,
}

pub fn violation_ratio(bq: f64, bc: f64) -> Ratio {
    if bc <= 0.0 {
        Ratio::Infinite
    } else {
        Ratio::Finite(bq / bc)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BellReport {
    pub quantum_value: f64,
    pub shifted: f64,
    pub bound: Option<ClassicalBound>,
    pub ratio: Option<Ratio>,
    pub ports: Vec<usize>,
    pub budget_bits: f64,
    pub mode: TableMode,
}

impl BellReport {
    pub fn violated(&self) -> Option<bool> {
        self.bound.map(|b| self.shifted > b.delta + 1e-12)
    }
}

/// B̃ = Σ μ Σ_{α,β} c(α,β) p(α,β|x,y) and B = B̃ − 1/2.
pub fn bell_value(table: &CorrelationTable, functional: &BellFunctional) -> Result<BellReport> {
    if table.tree != functional.tree || table.nx != functional.truth.nx() || table.ny != functional.truth.ny() {
        return Err(BellError::Mismatch("alphabets or inputs differ".into()));
    }
    let bs = table.tree.bob_size();
    let mut value = 0.0;
    for x in 0..table.nx {
        for y in 0..table.ny {
            for (k, &p) in table.rows[x * table.ny + y].iter().enumerate() {
                if p != 0.0 {
                    value += p * functional.coefficient(x, y, k as u64 / bs, k as u64 % bs);
                }
            }
        }
    }
    let shifted = value - 0.5;
    Ok(BellReport {
        quantum_value: value,
        shifted,
        bound: functional.bound,
        ratio: functional.bound.map(|b| violation_ratio(shifted, b.delta)),
        ports: table.tree.ports().to_vec(),
        budget_bits: functional.budget_bits,
        mode: table.mode,
    })
}

/// δ for the functional, by exhaustive local strategies or the classical oracle.
pub fn lhv_bound(functional: &BellFunctional, method: BoundMethod) -> Result<f64> {
    let t = &functional.truth;
    match method {
        BoundMethod::CcDerived => {
            let mut best = ccoracle::best_success_alphabets(t, functional.tree.ports())?;
            let bits = (functional.budget_bits + 1e-9).floor() as u32;
            let rounds = functional.tree.ports().len();
            best = best.max(ccoracle::best_success_tree(t, bits, rounds)?);
            Ok(best - 0.5)
        }
        BoundMethod::ExactLhv => Ok(exact_lhv_value(functional)? - 0.5),
    }
}

/// max over α: X → A, β: Y → B of the functional, enumerating the smaller
/// side and best-responding on the other per input.
pub fn exact_lhv_value(functional: &BellFunctional) -> Result<f64> {
    let t = &functional.truth;
    let tree = &functional.tree;
    let (nx, ny) = (t.nx(), t.ny());
    let (a, b) = (tree.alice_size() as u128, tree.bob_size() as u128);
    let alice_space = a.checked_pow(nx as u32).unwrap_or(u128::MAX);
    let bob_space = b.checked_pow(ny as u32).unwrap_or(u128::MAX);
    let enumerate_alice = alice_space <= bob_space;
    let space = alice_space.min(bob_space);
    if space > LHV_CAP {
        return Err(BellError::Cap {
            what: "local strategy space",
            size: space,
            cap: LHV_CAP,
        });
    }
    let (outer_n, inner_n, outer_a, inner_a) = if enumerate_alice {
        (nx, ny, a as u64, b as u64)
    } else {
        (ny, nx, b as u64, a as u64)
    };
    let gain = |outer: usize, inner: usize, so: u64, si: u64| {
        let (x, y, alpha, beta) = if enumerate_alice {
            (outer, inner, so, si)
        } else {
            (inner, outer, si, so)
        };
        functional.coefficient(x, y, alpha, beta)
    };
    let mut best = 0.0f64;
    let mut choice = vec![0u64; outer_n];
    loop {
        let mut total = 0.0;
        for inner in 0..inner_n {
            let mut top = 0.0f64;
            for si in 0..inner_a {
                let v: f64 = (0..outer_n).map(|o| gain(o, inner, choice[o], si)).sum();
                top = top.max(v);
            }
            total += top;
        }
        best = best.max(total);
        let mut k = 0;
        loop {
            if k == outer_n {
                return Ok(best);
            }
            choice[k] += 1;
            if choice[k] < outer_a {
                break;
            }
            choice[k] = 0;
            k += 1;
        }
    }
}

/// 1/(6√3).
pub fn ratio_constant() -> f64 {
    1.0 / (6.0 * 3f64.sqrt())
}

/// c·√(C(f, 2/3) / C_Pq).
pub fn ratio_lower_bound(c_two_thirds: f64, c_pq: f64) -> f64 {
    ratio_constant() * (c_two_thirds / c_pq).sqrt()
}

/// δ ≤ √(3·C(f, p_c) / C(f, 2/3)).
pub fn delta_upper_bound(c_pc: f64, c_two_thirds: f64) -> f64 {
    (3.0 * c_pc / c_two_thirds).sqrt()
}

/// (1/6)/δ.
pub fn ratio_from_delta(delta: f64) -> Ratio {
    violation_ratio(1.0 / 6.0, delta)
}

/// (1 − 2^(−Q))^(2Q).
pub fn fidelity_factor(q: f64) -> f64 {
    (1.0 - (-q).exp2()).powf(2.0 * q)
}

/// (1/2)(1 − 1/n) / √(5 log n / (c·n^(1/3))).
pub fn example_one_way_ratio(n: f64, c: f64) -> f64 {
    0.5 * (1.0 - 1.0 / n) / (5.0 * n.log2() / (c * n.cbrt())).sqrt()
}

/// (1/2)(1 − 1/n)² / √(c·10 log² n / n^(1/4)).
pub fn example_two_way_ratio(n: f64, c: f64) -> f64 {
    let l = n.log2();
    0.5 * (1.0 - 1.0 / n).powi(2) / (c * 10.0 * l * l / n.powf(0.25)).sqrt()
}

/// p(a, b | x, y) for binary a (1 = Alice succeeded) and binary b.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxTable {
    pub nx: usize,
    pub ny: usize,
    /// `p[x·|Y| + y][a][b]`
    pub p: Vec<[[f64; 2]; 2]>,
}

impl BoxTable {
    /// a = α(x), b = β(y).
    pub fn deterministic(alpha: &[u8], beta: &[u8]) -> Self {
        let (nx, ny) = (alpha.len(), beta.len());
        let mut p = vec![[[0.0; 2]; 2]; nx * ny];
        for x in 0..nx {
            for y in 0..ny {
                p[x * ny + y][alpha[x] as usize][beta[y] as usize] = 1.0;
            }
        }
        Self { nx, ny, p }
    }

    /// Σ w_k · box_k.
    pub fn mixture(boxes: &[(f64, BoxTable)]) -> Self {
        let (nx, ny) = (boxes[0].1.nx, boxes[0].1.ny);
        let mut p = vec![[[0.0; 2]; 2]; nx * ny];
        for (w, b) in boxes {
            for (acc, entry) in p.iter_mut().zip(&b.p) {
                for a in 0..2 {
                    for o in 0..2 {
                        acc[a][o] += w * entry[a][o];
                    }
                }
            }
        }
        Self { nx, ny, p }
    }

    pub fn success_probability(&self, x: usize, y: usize) -> f64 {
        let e = &self.p[x * self.ny + y][1];
        e[0] + e[1]
    }

    /// p_A = Σ μ p(a=1|x,y) and p_B = Σ μ p(a=1, b=f|x,y) / p_A.
    pub fn stats(&self, t: &TruthTable) -> OneWayStats {
        let mut p_a = 0.0;
        let mut joint = 0.0;
        for x in 0..self.nx {
            for y in 0..self.ny {
                let w = t.mu(x, y);
                p_a += w * self.success_probability(x, y);
                joint += w * self.p[x * self.ny + y][1][t.f(x, y) as usize];
            }
        }
        OneWayStats {
            p_a,
            p_b: if p_a > 0.0 { joint / p_a } else { 0.0 },
            truth: t.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OneWayStats {
    pub p_a: f64,
    pub p_b: f64,
    pub truth: TruthTable,
}

/// RSP correlations of a one-move protocol: Alice tests her half of Φ⁺ for
/// the conjugate message state, Bob measures his observable on his half.
pub fn one_way_correlations(p: &CommProtocol) -> Result<(BoxTable, OneWayStats)> {
    let moves = p.moves();
    if moves.len() != 1 || moves[0].mem_out != 1 {
        return Err(BellError::NotOneWay);
    }
    let d = moves[0].msg_out;
    let t = p.truth();
    let pair = max_entangled(d)?;
    let mut table = vec![[[0.0; 2]; 2]; t.nx() * t.ny()];
    for x in 0..t.nx() {
        let v = move_isometry(p, 0, x, 0);
        let layout = crate::qstate::RegisterLayout::new([("m", d)])?;
        let target = crate::qstate::PureState::new(v.column(0).into_owned(), layout)?;
        let alice = rsp_povm(&target)?;
        for y in 0..t.ny() {
            let bob = &p.measurement().povms[y];
            let mut joint = Vec::with_capacity(4);
            // a = 1 is the success outcome (element 0 of the RSP measurement)
            for ma in [&alice.elements()[1], &alice.elements()[0]] {
                for eb in bob.elements() {
                    joint.push(linalg::kron(ma, eb));
                }
            }
            let probs = pair.probabilities_on(&Povm::new(joint)?, &["A", "B"])?;
            table[x * t.ny() + y] = [[probs[0], probs[1]], [probs[2], probs[3]]];
        }
    }
    let table = BoxTable {
        nx: t.nx(),
        ny: t.ny(),
        p: table,
    };
    let stats = table.stats(t);
    Ok((table, stats))
}

/// Both sides of the nonlinear inequality
/// ⌈log 1/p_A + log log 1/δ⌉ + 1 ≥ C_μ(f, n, (1 − δ)p_B + δ/2),
/// its pumping-composed form, and the heuristic log 1/p_A ≳ C(p_B, n).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonlinearVerdict {
    pub delta: f64,
    pub lhs: f64,
    pub target: f64,
    pub rhs: CcBits,
    pub holds: bool,
    pub pumping_rhs: f64,
    pub pumping_holds: bool,
    pub heuristic_lhs: f64,
    pub heuristic_rhs: CcBits,
    pub heuristic_violated: bool,
}

pub fn nonlinear_bell_check(stats: &OneWayStats, delta: f64) -> Result<NonlinearVerdict> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(BellError::InvalidDelta(delta));
    }
    let t = &stats.truth;
    let lhs = if stats.p_a > 0.0 {
        ((1.0 / stats.p_a).log2() + (1.0 / delta).log2().log2() - 1e-12).ceil() + 1.0
    } else {
        f64::INFINITY
    };
    let target = (1.0 - delta) * stats.p_b + delta / 2.0;
    let rhs = ccoracle::distributional_cc(t, target)?;
    let c23 = ccoracle::distributional_cc(t, 2.0 / 3.0)?.as_f64();
    let pumping_rhs = if target <= 2.0 / 3.0 {
        (target - 0.5).powi(2) / 3.0 * c23
    } else {
        c23
    };
    let heuristic_lhs = if stats.p_a > 0.0 {
        (1.0 / stats.p_a).log2()
    } else {
        f64::INFINITY
    };
    let heuristic_rhs = ccoracle::distributional_cc(t, stats.p_b)?;
    Ok(NonlinearVerdict {
        delta,
        lhs,
        target,
        rhs,
        holds: lhs >= rhs.as_f64(),
        pumping_rhs,
        pumping_holds: lhs >= pumping_rhs - 1e-12,
        heuristic_lhs,
        heuristic_rhs,
        heuristic_violated: heuristic_lhs < heuristic_rhs.as_f64(),
    })
}

/// max over δ of C_μ(f, n, (1 − δ)p + δ/2) − log log 1/δ, minus 2.
pub fn qubit_lower_bound(t: &TruthTable, p_succ: f64, deltas: &[f64]) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    for &delta in deltas {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(BellError::InvalidDelta(delta));
        }
        let c = ccoracle::distributional_cc(t, (1.0 - delta) * p_succ + delta / 2.0)?.as_f64();
        best = best.max(c - (1.0 / delta).log2().log2());
    }
    Ok(best - 2.0)
}

/// δ values 2^(−k) for k = 1..=k_max.
pub fn delta_sweep(k_max: u32) -> Vec<f64> {
    (1..=k_max).map(|k| (-(k as f64)).exp2()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OneWayBellReport {
    pub k: usize,
    pub instances: usize,
    pub budget_bits: u32,
    pub lhs: f64,
    pub delta: f64,
    pub shifted: f64,
    pub ratio: Ratio,
}

/// Σ μ Σ_{i ≤ m} p(i first success, o_i = f) with ABORT worth 1/2, for
/// m = ⌈k/p_A⌉ merged instances, against the best classical protocol with
/// ⌈log m⌉ + 1 bits.
pub fn one_way_linear_bell(table: &BoxTable, stats: &OneWayStats, k: usize) -> Result<OneWayBellReport> {
    if stats.p_a <= 0.0 {
        return Err(BellError::Mismatch("Alice never succeeds".into()));
    }
    let t = &stats.truth;
    let m = ((k.max(1) as f64) / stats.p_a - 1e-9).ceil() as usize;
    let mut lhs = 0.0;
    for x in 0..table.nx {
        for y in 0..table.ny {
            let q = table.success_probability(x, y);
            let hit = table.p[x * table.ny + y][1][t.f(x, y) as usize];
            let first: f64 = (0..m).map(|i| (1.0 - q).powi(i as i32)).sum::<f64>() * hit;
            lhs += t.mu(x, y) * (first + 0.5 * (1.0 - q).powi(m as i32));
        }
    }
    let bits = index_cost_bits(m);
    let delta = ccoracle::best_success_one_way(t, bits)? - 0.5;
    Ok(OneWayBellReport {
        k,
        instances: m,
        budget_bits: bits,
        lhs,
        delta,
        shifted: lhs - 0.5,
        ratio: violation_ratio(lhs - 0.5, delta),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::proto::{builtin_qrac, to_memoryless};

    fn qrac() -> MemorylessProtocol {
        to_memoryless(&builtin_qrac()).unwrap()
    }

    #[test]
    fn tree_indexing() {
        let tree = OutcomeTree::new(&[2, 3, 2]).unwrap();
        assert_eq!(tree.alice_size(), 2 * 2u64.pow(6));
        assert_eq!(tree.bob_size(), 3u64.pow(2) * 2u64.pow(12));
        assert_eq!(tree.path_count(), 12);
        let one = OutcomeTree::new(&[4]).unwrap();
        assert_eq!((one.alice_size(), one.bob_size()), (4, 16));
        // Alice picks port 2, Bob's guesses are the bits of β
        assert_eq!(one.decide(2, 0b0100), (2, 1));
        assert_eq!(one.decide(3, 0b0100), (3, 0));
        assert!(OutcomeTree::new(&[2, 2]).is_err());
    }

    #[test]
    fn contraction_matches_kron() {
        let m = CMatrix::from_fn(8, 8, |r, c| C64::new((r * 8 + c) as f64, (r as f64) - (c as f64)));
        let e0 = CMatrix::from_fn(2, 2, |r, c| C64::new((r + 2 * c) as f64, 1.0));
        let e1 = linalg::identity(2);
        let effects = [e0.clone(), e1.clone()];
        let vals = contract_all(&m, 2, 3, &effects);
        for combo in 0..8usize {
            let pick = |k: usize| &effects[(combo >> (2 - k)) & 1];
            let full = linalg::kron(&linalg::kron(pick(0), pick(1)), pick(2));
            let want = linalg::trace(&(&m * full));
            assert!((vals[combo] - want).norm() < 1e-9);
        }
    }

    #[test]
    fn single_port_is_a_coin_for_qrac() {
        let p = qrac();
        let s = PortSchedule::for_protocol(&p.protocol, &[1]).unwrap();
        let table = generate_correlations(&p, &s, TableMode::Exact).unwrap();
        let sim = simulate_with_classical_comm(&table, &s, p.protocol.truth()).unwrap();
        assert!((sim.success - 0.5).abs() < 1e-12);
        assert_eq!(sim.bits, 0.0);
    }

    #[test]
    fn ideal_channel_reproduces_source() {
        let p = qrac();
        let s = PortSchedule::ideal(&p.protocol);
        let table = generate_correlations(&p, &s, TableMode::Exact).unwrap();
        let sim = simulate_with_classical_comm(&table, &s, p.protocol.truth()).unwrap();
        let want = p.protocol.success_probability().unwrap();
        assert!((sim.success - want).abs() < 1e-12);
    }

    #[test]
    fn ratio_arithmetic() {
        assert_eq!(violation_ratio(1.0 / 6.0, 1.0 / 6.0), Ratio::Finite(1.0));
        assert_eq!(violation_ratio(0.1, 0.0), Ratio::Infinite);
        assert!((ratio_lower_bound(108.0, 1.0) - 1.0).abs() < 1e-12);
        assert!((delta_upper_bound(1.0, 108.0) - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn constant_function_has_full_classical_value() {
        let t = TruthTable::constant(1, 1, false);
        let f = build_linear_bell(
            &t,
            &PortSchedule {
                ports: vec![2],
                dims: vec![2],
                ideal: false,
            },
        )
        .unwrap();
        assert_eq!(f.path_terms(), 4 * 2);
        assert!((lhv_bound(&f, BoundMethod::ExactLhv).unwrap() - 0.5).abs() < 1e-12);
        assert!((lhv_bound(&f, BoundMethod::CcDerived).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn qrac_one_way_stats() {
        let (table, stats) = one_way_correlations(&builtin_qrac()).unwrap();
        assert!((stats.p_a - 0.5).abs() < 1e-12);
        let want = (core::f64::consts::PI / 8.0).cos().powi(2);
        assert!((stats.p_b - want).abs() < 1e-10);
        for row in &table.p {
            let total: f64 = row.iter().flatten().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
        let v = nonlinear_bell_check(&stats, 1.0 / 16.0).unwrap();
        assert_eq!(v.lhs, 4.0);
        assert_eq!(v.rhs, CcBits::Finite(2));
        assert!(v.holds);
        assert!(v.heuristic_violated);
        let lin = one_way_linear_bell(&table, &stats, 1).unwrap();
        assert_eq!((lin.instances, lin.budget_bits), (2, 2));
        assert!((lin.delta - 0.5).abs() < 1e-12);
        assert!(lin.lhs <= 1.0);
    }

    #[test]
    fn invalid_delta_is_rejected() {
        let (_, stats) = one_way_correlations(&builtin_qrac()).unwrap();
        assert!(matches!(
            nonlinear_bell_check(&stats, 1.0),
            Err(BellError::InvalidDelta(_))
        ));
        assert!(matches!(
            nonlinear_bell_check(&stats, 0.0),
            Err(BellError::InvalidDelta(_))
        ));
    }
}
