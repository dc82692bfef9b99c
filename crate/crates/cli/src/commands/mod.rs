//! The four report-producing commands.

mod bell_certify;
mod cc;
mod oneway;
mod pbt_bench;

use serde::Serialize;

use crate::config::{Command, RunConfig};
use crate::error::CliError;
use crate::report::Finished;

pub use bell_certify::bell_certify;
pub use cc::cc;
pub use oneway::oneway;
pub use pbt_bench::pbt_bench;

/// Runs the configured command on a pool of `threads` workers.
pub fn run(cfg: &RunConfig, threads: usize) -> Result<Finished, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {threads} threads: {e}")))?;
    pool.install(|| match cfg.command {
        Command::PbtBench => pbt_bench(cfg),
        Command::BellCertify => bell_certify(cfg),
        Command::Oneway => oneway(cfg),
        Command::Cc => cc(cfg),
    })
}

/// Bits needed classically, as a number or "unreachable".
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(untagged)]
pub enum BitsOut {
    Finite(u32),
    Unreachable(&'static str),
}

impl From<bellforge_core::ccoracle::CcBits> for BitsOut {
    fn from(b: bellforge_core::ccoracle::CcBits) -> Self {
        match b {
            bellforge_core::ccoracle::CcBits::Finite(c) => BitsOut::Finite(c),
            bellforge_core::ccoracle::CcBits::Unreachable => BitsOut::Unreachable("unreachable"),
        }
    }
}

impl BitsOut {
    pub fn cell(&self) -> String {
        match self {
            BitsOut::Finite(c) => c.to_string(),
            BitsOut::Unreachable(s) => s.to_string(),
        }
    }
}

/// A ratio of shifted values, or "infinite" when the classical side is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(untagged)]
pub enum RatioOut {
    Finite(f64),
    Infinite(&'static str),
}

impl From<bellforge_core::bellkit::Ratio> for RatioOut {
    fn from(r: bellforge_core::bellkit::Ratio) -> Self {
        match r {
            bellforge_core::bellkit::Ratio::Finite(v) => RatioOut::Finite(v),
            bellforge_core::bellkit::Ratio::Infinite => RatioOut::Infinite("infinite"),
        }
    }
}

/// A ratio with the method of the classical bound it divides by.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatioNum {
    pub value: RatioOut,
    pub method: crate::report::Method,
}

impl RatioNum {
    pub fn new(r: bellforge_core::bellkit::Ratio, method: crate::report::Method) -> Self {
        Self {
            value: r.into(),
            method,
        }
    }
}

impl RatioOut {
    pub fn cell(&self) -> String {
        match self {
            RatioOut::Finite(v) => crate::report::cell(*v),
            RatioOut::Infinite(s) => s.to_string(),
        }
    }
}

/// The protocol of a bell-certify or oneway run.
fn load(cfg: &RunConfig, reference: &str) -> Result<bellforge_core::proto::CommProtocol, CliError> {
    crate::protocol_file::load_protocol(reference, cfg.protocol_path.as_deref())
}
