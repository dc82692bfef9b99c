//! JSON form of communication protocols.

use std::path::Path;

use bellforge_core::linalg::{CMatrix, C64};
use bellforge_core::proto::{builtin_qrac, CommProtocol, FinalMeasurement, Move, Party};
use bellforge_core::qstate::Povm;
use bellforge_core::truth::TruthTable;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const PROTOCOL_SCHEMA: &str = "bellforge.protocol/1";
/// Largest allowed gap between a stated ε and the derived one.
pub const EPSILON_TOL: f64 = 1e-9;

/// Row-major matrix with interleaved real and imaginary parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSpec {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixSpec {
    pub fn from_matrix(m: &CMatrix) -> Self {
        let mut data = Vec::with_capacity(2 * m.nrows() * m.ncols());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                data.push(m[(r, c)].re);
                data.push(m[(r, c)].im);
            }
        }
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }

    pub fn to_matrix(&self) -> Result<CMatrix, CliError> {
        if self.data.len() != 2 * self.rows * self.cols {
            return Err(CliError::Usage(format!(
                "matrix of {}x{} needs {} numbers, found {}",
                self.rows,
                self.cols,
                2 * self.rows * self.cols,
                self.data.len()
            )));
        }
        Ok(CMatrix::from_fn(self.rows, self.cols, |r, c| {
            let k = 2 * (r * self.cols + c);
            C64::new(self.data[k], self.data[k + 1])
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthSpec {
    pub x_bits: u32,
    pub y_bits: u32,
    /// f(x, y) at index x·|Y| + y.
    pub f: Vec<u8>,
    /// μ(x, y) at index x·|Y| + y; uniform when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<Vec<f64>>,
}

impl TruthSpec {
    pub fn from_table(t: &TruthTable) -> Self {
        Self {
            x_bits: t.x_bits,
            y_bits: t.y_bits,
            f: t.values().to_vec(),
            mu: Some(t.distribution().to_vec()),
        }
    }

    pub fn to_table(&self) -> Result<TruthTable, CliError> {
        let size = 1usize
            .checked_shl(self.x_bits + self.y_bits)
            .filter(|_| self.x_bits + self.y_bits < 32)
            .ok_or_else(|| CliError::Cap(format!("{} input bits", self.x_bits + self.y_bits)))?;
        let mu = self.mu.clone().unwrap_or_else(|| vec![1.0 / size as f64; size]);
        TruthTable::new(self.x_bits, self.y_bits, self.f.clone(), mu).map_err(CliError::usage)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartySpec {
    Alice,
    Bob,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoveSpec {
    pub party: PartySpec,
    pub msg_in: usize,
    pub mem_in: usize,
    pub ancilla: usize,
    pub msg_out: usize,
    pub mem_out: usize,
    /// One unitary on (msg_in, mem_in, ancilla) → (msg_out, mem_out) per input of the mover.
    pub unitaries: Vec<MatrixSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementSpec {
    pub msg_in: usize,
    pub mem_in: usize,
    /// Elements (E_0, E_1) per y on (msg_in, mem_in).
    pub povms: Vec<[MatrixSpec; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolFile {
    pub schema: String,
    pub truth: TruthSpec,
    /// Stated advantage; checked against the protocol when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    pub moves: Vec<MoveSpec>,
    pub measurement: MeasurementSpec,
}

impl ProtocolFile {
    pub fn from_protocol(p: &CommProtocol) -> Self {
        let moves = p
            .moves()
            .iter()
            .map(|m| MoveSpec {
                party: match m.party {
                    Party::Alice => PartySpec::Alice,
                    Party::Bob => PartySpec::Bob,
                },
                msg_in: m.msg_in,
                mem_in: m.mem_in,
                ancilla: m.ancilla,
                msg_out: m.msg_out,
                mem_out: m.mem_out,
                unitaries: m.unitaries.iter().map(MatrixSpec::from_matrix).collect(),
            })
            .collect();
        let fm = p.measurement();
        let povms = fm
            .povms
            .iter()
            .map(|povm| {
                let e = povm.elements();
                [MatrixSpec::from_matrix(&e[0]), MatrixSpec::from_matrix(&e[1])]
            })
            .collect();
        Self {
            schema: PROTOCOL_SCHEMA.into(),
            truth: TruthSpec::from_table(p.truth()),
            epsilon: p.advantage().ok(),
            moves,
            measurement: MeasurementSpec {
                msg_in: fm.msg_in,
                mem_in: fm.mem_in,
                povms,
            },
        }
    }

    pub fn to_protocol(&self) -> Result<CommProtocol, CliError> {
        if self.schema != PROTOCOL_SCHEMA {
            return Err(CliError::Usage(format!(
                "unsupported protocol schema `{}`, expected `{PROTOCOL_SCHEMA}`",
                self.schema
            )));
        }
        let truth = self.truth.to_table()?;
        let mut moves = Vec::with_capacity(self.moves.len());
        for m in &self.moves {
            moves.push(Move {
                party: match m.party {
                    PartySpec::Alice => Party::Alice,
                    PartySpec::Bob => Party::Bob,
                },
                msg_in: m.msg_in,
                mem_in: m.mem_in,
                ancilla: m.ancilla,
                msg_out: m.msg_out,
                mem_out: m.mem_out,
                unitaries: m
                    .unitaries
                    .iter()
                    .map(MatrixSpec::to_matrix)
                    .collect::<Result<_, _>>()?,
            });
        }
        let mut povms = Vec::with_capacity(self.measurement.povms.len());
        for [e0, e1] in &self.measurement.povms {
            povms.push(Povm::new(vec![e0.to_matrix()?, e1.to_matrix()?]).map_err(CliError::usage)?);
        }
        let measurement = FinalMeasurement {
            msg_in: self.measurement.msg_in,
            mem_in: self.measurement.mem_in,
            povms,
        };
        let p = CommProtocol::new(truth, moves, measurement).map_err(CliError::usage)?;
        if let Some(stated) = self.epsilon {
            let derived = p.advantage().map_err(CliError::usage)?;
            if (stated - derived).abs() > EPSILON_TOL {
                return Err(CliError::Usage(format!(
                    "stated epsilon {stated} differs from the protocol's advantage {derived}"
                )));
            }
        }
        Ok(p)
    }
}

/// `builtin:qrac` or a path to a protocol file.
pub fn load_protocol(reference: &str, path: Option<&Path>) -> Result<CommProtocol, CliError> {
    if let Some(name) = reference.strip_prefix("builtin:") {
        return match name {
            "qrac" => Ok(builtin_qrac()),
            other => Err(CliError::Usage(format!("unknown builtin protocol `{other}`"))),
        };
    }
    let path = path.ok_or_else(|| CliError::Usage(format!("protocol `{reference}` has no resolved path")))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read protocol {}: {e}", path.display())))?;
    let file: ProtocolFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("invalid protocol {}: {e}", path.display())))?;
    file.to_protocol()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qrac_survives_the_file_form() {
        let p = builtin_qrac();
        let file = ProtocolFile::from_protocol(&p);
        let text = serde_json::to_string(&file).unwrap();
        let back: ProtocolFile = serde_json::from_str(&text).unwrap();
        let q = back.to_protocol().unwrap();
        assert!((q.success_probability().unwrap() - p.success_probability().unwrap()).abs() < 1e-15);
    }

    #[test]
    fn wrong_epsilon_is_rejected() {
        let mut file = ProtocolFile::from_protocol(&builtin_qrac());
        file.epsilon = Some(0.1);
        assert_eq!(file.to_protocol().unwrap_err().exit_code(), 1);
    }

    #[test]
    fn short_matrix_data_is_rejected() {
        let m = MatrixSpec {
            rows: 2,
            cols: 2,
            data: vec![1.0; 7],
        };
        assert!(matches!(m.to_matrix(), Err(CliError::Usage(_))));
    }
}
