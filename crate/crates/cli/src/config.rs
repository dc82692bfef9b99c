//! Command-line flags, config files and the resolved run configuration.

use std::path::{Path, PathBuf};

use bellforge_core::bellkit::delta_sweep;
use bellforge_core::truth::TruthTable;
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::protocol_file::TruthSpec;

pub const DEFAULT_TRIALS: u64 = 100_000;
pub const DEFAULT_TOLERANCE: f64 = 1e-9;
pub const THREADS_ENV: &str = "BELLFORGE_THREADS";
/// Largest input size per party accepted by `cc`.
pub const CC_MAX_BITS: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Exact,
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Subcommand)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Fidelity of port-based teleportation against 1 − d²/N.
    PbtBench,
    /// Bell functional, quantum value and local bounds for a protocol.
    BellCertify,
    /// Remote-state-preparation inequalities for a one-way protocol.
    Oneway,
    /// Exact classical communication tables and amplification checks.
    Cc,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::PbtBench => "pbt-bench",
            Command::BellCertify => "bell-certify",
            Command::Oneway => "oneway",
            Command::Cc => "cc",
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "bellforge",
    version,
    about = "Bell inequalities from quantum communication protocols"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for sampled runs; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Exact probabilities or Monte Carlo estimates.
    #[arg(long, global = true, value_enum)]
    pub mode: Option<Mode>,
    /// Samples per row in sampled mode.
    #[arg(long, global = true)]
    pub trials: Option<u64>,
    /// Output file, written atomically; stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "json")]
    pub format: Format,
    /// Add wall-clock seconds to the report.
    #[arg(long, global = true)]
    pub timing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionSpec {
    Qrac,
    Equality {
        n: u32,
    },
    InnerProduct {
        n: u32,
    },
    Xor {
        n: u32,
    },
    Constant {
        x_bits: u32,
        y_bits: u32,
        value: bool,
    },
    Table {
        id: String,
        x_bits: u32,
        y_bits: u32,
        f: Vec<u8>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mu: Option<Vec<f64>>,
    },
}

impl FunctionSpec {
    pub fn id(&self) -> String {
        match self {
            FunctionSpec::Qrac => "qrac".into(),
            FunctionSpec::Equality { n } => format!("eq{n}"),
            FunctionSpec::InnerProduct { n } => format!("ip{n}"),
            FunctionSpec::Xor { n } => format!("xor{n}"),
            FunctionSpec::Constant { value, .. } => format!("const{}", u8::from(*value)),
            FunctionSpec::Table { id, .. } => id.clone(),
        }
    }

    fn bits(&self) -> (u32, u32) {
        match self {
            FunctionSpec::Qrac => (2, 1),
            FunctionSpec::Equality { n } | FunctionSpec::InnerProduct { n } | FunctionSpec::Xor { n } => (*n, *n),
            FunctionSpec::Constant { x_bits, y_bits, .. } => (*x_bits, *y_bits),
            FunctionSpec::Table { x_bits, y_bits, .. } => (*x_bits, *y_bits),
        }
    }

    /// Builds the table; inputs beyond [`CC_MAX_BITS`] are a resource cap.
    pub fn table(&self) -> Result<TruthTable, CliError> {
        let (xb, yb) = self.bits();
        if xb.max(yb) > CC_MAX_BITS {
            return Err(CliError::Cap(format!(
                "function {} has {} input bits per party, exhaustive search allows {CC_MAX_BITS}",
                self.id(),
                xb.max(yb)
            )));
        }
        Ok(match self {
            FunctionSpec::Qrac => TruthTable::qrac(),
            FunctionSpec::Equality { n } => TruthTable::equality(*n),
            FunctionSpec::InnerProduct { n } => TruthTable::inner_product(*n),
            FunctionSpec::Xor { n } => TruthTable::inner_xor(*n),
            FunctionSpec::Constant { x_bits, y_bits, value } => TruthTable::constant(*x_bits, *y_bits, *value),
            FunctionSpec::Table {
                x_bits, y_bits, f, mu, ..
            } => TruthSpec {
                x_bits: *x_bits,
                y_bits: *y_bits,
                f: f.clone(),
                mu: mu.clone(),
            }
            .to_table()?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MajoritySpec {
    pub p: f64,
    pub l: u64,
}

/// Contents of a `--config` file. Fields not used by a command are ignored.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub protocol: Option<String>,
    pub schedule: Option<Vec<usize>>,
    pub d: Option<usize>,
    pub ports: Option<Vec<usize>>,
    pub mode: Option<Mode>,
    pub trials: Option<u64>,
    pub seed: Option<u64>,
    pub tolerance: Option<f64>,
    pub deltas: Option<Vec<f64>>,
    pub k: Option<Vec<usize>>,
    pub lhv_sweep: Option<bool>,
    pub functions: Option<Vec<FunctionSpec>>,
    pub rounds: Option<usize>,
    pub targets: Option<Vec<f64>>,
    pub epsilons: Option<Vec<f64>>,
    pub chernoff: Option<Vec<f64>>,
    pub majority: Option<MajoritySpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Params {
    PbtBench {
        d: usize,
        ports: Vec<usize>,
    },
    BellCertify {
        protocol: String,
        #[serde(skip_serializing_if = "Option::is_none")]
        schedule: Option<Vec<usize>>,
    },
    Oneway {
        protocol: String,
        deltas: Vec<f64>,
        k: Vec<usize>,
        lhv_sweep: bool,
    },
    Cc {
        functions: Vec<FunctionSpec>,
        rounds: usize,
        targets: Vec<f64>,
        epsilons: Vec<f64>,
        chernoff: Vec<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        majority: Option<MajoritySpec>,
    },
}

/// Resolved configuration; the serialized form is echoed in reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub mode: Mode,
    pub trials: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub tolerance: f64,
    #[serde(flatten)]
    pub params: Params,
    #[serde(skip)]
    pub protocol_path: Option<PathBuf>,
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[serde(skip)]
    pub format: Format,
    #[serde(skip)]
    pub timing: bool,
}

impl RunConfig {
    /// Merges flags over the config file and validates paths and values
    /// before any computation.
    pub fn resolve(cli: &Cli) -> Result<Self, CliError> {
        let (file, base) = match &cli.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
                let file: ConfigFile = serde_json::from_str(&text)
                    .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
                (file, path.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (ConfigFile::default(), PathBuf::new()),
        };
        Self::from_parts(cli, file, &base)
    }

    pub fn from_parts(cli: &Cli, file: ConfigFile, base: &Path) -> Result<Self, CliError> {
        let mode = cli.mode.or(file.mode).unwrap_or(Mode::Exact);
        let trials = cli.trials.or(file.trials).unwrap_or(DEFAULT_TRIALS);
        let seed = cli.seed.or(file.seed);
        let tolerance = file.tolerance.unwrap_or(DEFAULT_TOLERANCE);
        if !(tolerance >= 0.0 && tolerance.is_finite()) {
            return Err(CliError::Usage(format!(
                "tolerance must be a finite non-negative number, got {tolerance}"
            )));
        }
        if mode == Mode::Sampled {
            if seed.is_none() {
                return Err(CliError::Usage("sampled mode needs --seed or a config seed".into()));
            }
            if trials == 0 {
                return Err(CliError::Usage("sampled mode needs at least one trial".into()));
            }
        }
        if let Some(out) = &cli.out {
            let parent = out.parent().filter(|p| !p.as_os_str().is_empty());
            if let Some(dir) = parent {
                if !dir.is_dir() {
                    return Err(CliError::Usage(format!(
                        "output directory {} does not exist",
                        dir.display()
                    )));
                }
            }
        }
        let mut protocol_path = None;
        let mut protocol = |file: &ConfigFile| -> Result<String, CliError> {
            let reference = file
                .protocol
                .clone()
                .ok_or_else(|| CliError::Usage("config needs a `protocol` entry".into()))?;
            if !reference.starts_with("builtin:") {
                let path = base.join(&reference);
                if !path.is_file() {
                    return Err(CliError::Usage(format!("protocol file {} not found", path.display())));
                }
                protocol_path = Some(path);
            }
            Ok(reference)
        };
        let params = match cli.command {
            Command::PbtBench => {
                let ports = file.ports.clone().unwrap_or_default();
                if ports.is_empty() {
                    return Err(CliError::Usage("pbt-bench needs a non-empty `ports` list".into()));
                }
                let d = file.d.unwrap_or(2);
                if d < 2 || ports.contains(&0) {
                    return Err(CliError::Usage("need d >= 2 and at least one port".into()));
                }
                Params::PbtBench { d, ports }
            }
            Command::BellCertify => {
                if file.schedule.as_ref().is_some_and(|s| s.is_empty() || s.contains(&0)) {
                    return Err(CliError::Usage("schedule entries must be positive".into()));
                }
                Params::BellCertify {
                    protocol: protocol(&file)?,
                    schedule: file.schedule.clone(),
                }
            }
            Command::Oneway => {
                let deltas = file.deltas.clone().unwrap_or_else(|| delta_sweep(10));
                if deltas.is_empty() {
                    return Err(CliError::Usage("`deltas` is empty".into()));
                }
                if let Some(bad) = deltas.iter().find(|d| !(**d > 0.0 && **d < 1.0)) {
                    return Err(CliError::Usage(format!("delta must lie in (0, 1), got {bad}")));
                }
                let k = file.k.clone().unwrap_or_else(|| vec![1]);
                if k.contains(&0) {
                    return Err(CliError::Usage("k values must be positive".into()));
                }
                Params::Oneway {
                    protocol: protocol(&file)?,
                    deltas,
                    k,
                    lhv_sweep: file.lhv_sweep.unwrap_or(false),
                }
            }
            Command::Cc => {
                let epsilons = file.epsilons.clone().unwrap_or_else(|| vec![0.05, 0.1, 0.15]);
                let chernoff = file.chernoff.clone().unwrap_or_else(|| vec![1.0 / 6.0]);
                if let Some(bad) = epsilons.iter().chain(&chernoff).find(|e| !(**e > 0.0 && **e <= 0.5)) {
                    return Err(CliError::Usage(format!("epsilon must lie in (0, 1/2], got {bad}")));
                }
                if let Some(bad) = file.targets.iter().flatten().find(|p| !(**p >= 0.0 && **p <= 1.0)) {
                    return Err(CliError::Usage(format!("target must lie in [0, 1], got {bad}")));
                }
                if let Some(m) = file.majority {
                    if seed.is_none() {
                        return Err(CliError::Usage("majority amplification needs a seed".into()));
                    }
                    if !(0.0..=1.0).contains(&m.p) || m.l == 0 {
                        return Err(CliError::Usage("majority needs p in [0, 1] and l >= 1".into()));
                    }
                }
                let rounds = file.rounds.unwrap_or(1);
                if rounds == 0 {
                    return Err(CliError::Usage("rounds must be positive".into()));
                }
                Params::Cc {
                    functions: file.functions.clone().unwrap_or_else(|| vec![FunctionSpec::Qrac]),
                    rounds,
                    targets: file.targets.clone().unwrap_or_default(),
                    epsilons,
                    chernoff,
                    majority: file.majority,
                }
            }
        };
        Ok(Self {
            command: cli.command,
            mode,
            trials,
            seed,
            tolerance,
            params,
            protocol_path,
            out: cli.out.clone(),
            format: cli.format,
            timing: cli.timing,
        })
    }
}

/// Worker count from `BELLFORGE_THREADS`, defaulting to the machine's parallelism.
pub fn thread_count() -> Result<usize, CliError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}
