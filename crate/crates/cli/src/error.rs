use core::fmt::Display;

use bellforge_core::bellkit::BellError;
use bellforge_core::ccoracle::CcError;
use bellforge_core::pbt::PbtError;
use bellforge_core::proto::ProtoError;
use bellforge_core::qstate::QStateError;
use thiserror::Error;

/// Failure classes with fixed exit codes.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Cap(String),
    #[error("{0}")]
    Invariant(String),
}

impl CliError {
    pub fn usage(e: impl Display) -> Self {
        CliError::Usage(e.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Cap(_) => 2,
            CliError::Invariant(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Cap(_) => "resource_cap",
            CliError::Invariant(_) => "invariant",
        }
    }

    /// Single-line JSON for stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "error": self.kind(),
            "exit_code": self.exit_code(),
            "reason": self.to_string(),
        })
        .to_string()
    }
}

fn state_is_cap(e: &QStateError) -> bool {
    matches!(e, QStateError::CapExceeded { .. })
}

impl From<QStateError> for CliError {
    fn from(e: QStateError) -> Self {
        if state_is_cap(&e) {
            CliError::Cap(e.to_string())
        } else {
            CliError::Invariant(e.to_string())
        }
    }
}

impl From<PbtError> for CliError {
    fn from(e: PbtError) -> Self {
        match &e {
            PbtError::CapExceeded { .. } => CliError::Cap(e.to_string()),
            PbtError::State(s) if state_is_cap(s) => CliError::Cap(e.to_string()),
            PbtError::NoPorts | PbtError::PortDimension(_) => CliError::Usage(e.to_string()),
            _ => CliError::Invariant(e.to_string()),
        }
    }
}

impl From<CcError> for CliError {
    fn from(e: CcError) -> Self {
        match e {
            CcError::NoRounds => CliError::Usage(e.to_string()),
            _ => CliError::Cap(e.to_string()),
        }
    }
}

impl From<ProtoError> for CliError {
    fn from(e: ProtoError) -> Self {
        match &e {
            ProtoError::State(s) if state_is_cap(s) => CliError::Cap(e.to_string()),
            _ => CliError::Invariant(e.to_string()),
        }
    }
}

impl From<BellError> for CliError {
    fn from(e: BellError) -> Self {
        match e {
            BellError::Cap { .. } => CliError::Cap(e.to_string()),
            BellError::Schedule(_) | BellError::NotOneWay | BellError::InvalidDelta(_) => {
                CliError::Usage(e.to_string())
            }
            BellError::Proto(p) => p.into(),
            BellError::Pbt(p) => p.into(),
            BellError::Cc(c) => c.into(),
            BellError::State(s) => s.into(),
            BellError::Mismatch(_) | BellError::NegativeProbability(_) => CliError::Invariant(e.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), 1);
        assert_eq!(CliError::from(PbtError::CapExceeded { dim: 1, cap: 0 }).exit_code(), 2);
        assert_eq!(CliError::from(BellError::NegativeProbability(-1.0)).exit_code(), 3);
        assert_eq!(CliError::from(BellError::InvalidDelta(2.0)).exit_code(), 1);
        let line: serde_json::Value = serde_json::from_str(&CliError::Cap("big".into()).to_json()).unwrap();
        assert_eq!(line["exit_code"], 2);
    }
}
