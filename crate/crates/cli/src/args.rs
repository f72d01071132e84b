use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(name = "catmap", version, about = "Quantum Arnold cat map simulator and experiment harness")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct Common {
    /// Lattice bits: the lattice is 2^nq x 2^nq and the register has 3 nq - 1 qubits.
    #[arg(long = "nq", global = true, default_value_t = 7)]
    pub n_q: u32,
    /// Seed for every noise stream and sampler.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Initial density: `line`, `point:I,J` or `image:PATH` (PGM).
    #[arg(long, global = true, default_value = "line")]
    pub initial: InitialArg,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// PGM sample encoding.
    #[arg(long, global = true, value_enum, default_value_t = ImageFormat::Binary)]
    pub format: ImageFormat,
    /// Largest register the quantum commands will allocate (at most 30).
    #[arg(long, global = true, default_value_t = 27)]
    pub max_qubits: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InitialArg {
    Line,
    Point(usize, usize),
    Image(PathBuf),
}

impl FromStr for InitialArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "line" {
            return Ok(InitialArg::Line);
        }
        if let Some(rest) = s.strip_prefix("point:") {
            let (i, j) = rest
                .split_once(',')
                .ok_or_else(|| format!("expected point:I,J, got {s:?}"))?;
            let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("bad coordinate {v:?}"));
            return Ok(InitialArg::Point(parse(i)?, parse(j)?));
        }
        if let Some(path) = s.strip_prefix("image:") {
            if path.is_empty() {
                return Err("image: needs a path".into());
            }
            return Ok(InitialArg::Image(PathBuf::from(path)));
        }
        Err(format!("unknown initial state {s:?}; use line, point:I,J or image:PATH"))
    }
}

impl fmt::Display for InitialArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialArg::Line => write!(f, "line"),
            InitialArg::Point(i, j) => write!(f, "point:{i},{j}"),
            InitialArg::Image(p) => write!(f, "image:{}", p.display()),
        }
    }
}

impl Serialize for InitialArg {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    Ascii,
    Binary,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorMode {
    /// Rigid shift by max(1, round(eps_cl N)) cells.
    Shift,
    /// Flip the lowest bit of both coordinates.
    Lsb,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Axes {
    X,
    Y,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RegisterArg {
    X,
    Y,
}

/// Classical lattice error.
#[derive(Clone, Debug, Args, Serialize)]
pub struct ErrorArgs {
    #[arg(long = "error", value_enum, default_value_t = ErrorMode::Shift)]
    pub mode: ErrorMode,
    /// Error amplitude in torus units; defaults to one cell (1/N).
    #[arg(long)]
    pub eps_cl: Option<f64>,
    #[arg(long, value_enum, default_value_t = Axes::Both)]
    pub axes: Axes,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case", tag = "name")]
pub enum Command {
    /// Evolve the initial density with the exact lattice map.
    ClassicalEvolve {
        #[arg(long, default_value_t = 10)]
        steps: usize,
        /// Use the reversed-order map.
        #[arg(long)]
        reversed: bool,
    },
    /// Evolve the initial state through the gate-level circuit.
    QuantumEvolve {
        #[arg(long, default_value_t = 10)]
        steps: usize,
        #[arg(long, default_value_t = 0.0)]
        eps: f64,
        /// Also write the final amplitudes as a binary snapshot.
        #[arg(long)]
        save_state: bool,
    },
    /// Time-inversion test: forward t_r, invert momenta, t_r reversed steps.
    Echo {
        #[arg(long, default_value_t = 10)]
        tr: usize,
        #[arg(long, default_value_t = 0.0)]
        eps: f64,
        /// Apply a classical error at the inversion.
        #[arg(long)]
        classical_error: bool,
        #[command(flatten)]
        error: ErrorArgs,
        /// Run the preparation circuit with noise as well.
        #[arg(long)]
        noisy_prep: bool,
    },
    /// Fidelity between noisy and exact evolution, or the drop after a classical error.
    Fidelity {
        #[arg(long, default_value_t = 0.01)]
        eps: f64,
        #[arg(long, default_value_t = 400)]
        tmax: usize,
        /// Number of noise seeds, starting at --seed.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        /// Instead of gate noise, apply a classical error after this iteration.
        #[arg(long)]
        error_at: Option<usize>,
        #[command(flatten)]
        error: ErrorArgs,
    },
    /// Classical echo fidelity f_c(2 t_e) against t_e.
    ClassicalEcho {
        #[arg(long, default_value_t = 12)]
        te_max: usize,
        #[command(flatten)]
        error: ErrorArgs,
        /// Also run the protocol on the gate-level engine with this noise amplitude.
        #[arg(long)]
        quantum_eps: Option<f64>,
    },
    /// Fidelity time t_f over an n_q x eps grid with a power-law fit.
    TfScan {
        #[arg(long, value_delimiter = ',', default_value = "4,5,6")]
        nqs: Vec<u32>,
        #[arg(long, value_delimiter = ',', default_value = "0.01,0.03,0.1")]
        eps: Vec<f64>,
        /// Seeds per grid point, starting at --seed.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        /// Iteration cap per grid point is tmax_factor / (eps^2 n_q).
        #[arg(long, default_value_t = 5.0)]
        tmax_factor: f64,
    },
    /// Strongest Fourier components of one register after an exact QFT.
    Harmonics {
        #[arg(long, value_enum, default_value_t = RegisterArg::X)]
        register: RegisterArg,
        #[arg(short, long, default_value_t = 8)]
        k: usize,
        /// Iterations before the transform.
        #[arg(long, default_value_t = 0)]
        steps: usize,
        #[arg(long, default_value_t = 0.0)]
        eps: f64,
    },
    /// Probability of non-return after a noisy echo, and the inferred noise amplitude.
    Nonreturn {
        #[arg(long, default_value_t = 0.03)]
        eps: f64,
        #[arg(long, default_value_t = 200)]
        tr: usize,
        #[arg(long, default_value_t = 10_000)]
        shots: usize,
        /// Decay constant C in t_f = C / (eps^2 n_q), from a tf-scan.
        #[arg(long, default_value_t = crate::run::DEFAULT_PREFACTOR)]
        prefactor: f64,
    },
    /// Gate counts of one map iteration.
    GateCount,
    /// Exhaustive adder and map checks.
    Verify,
    /// Re-run the command recorded in a metadata file.
    Replay { metadata: PathBuf },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::ClassicalEvolve { .. } => "classical-evolve",
            Command::QuantumEvolve { .. } => "quantum-evolve",
            Command::Echo { .. } => "echo",
            Command::Fidelity { .. } => "fidelity",
            Command::ClassicalEcho { .. } => "classical-echo",
            Command::TfScan { .. } => "tf-scan",
            Command::Harmonics { .. } => "harmonics",
            Command::Nonreturn { .. } => "nonreturn",
            Command::GateCount => "gate-count",
            Command::Verify => "verify",
            Command::Replay { .. } => "replay",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initial_round_trips() {
        for s in ["line", "point:3,7", "image:a/b.pgm"] {
            assert_eq!(s.parse::<InitialArg>().unwrap().to_string(), s);
        }
        assert!("point:3".parse::<InitialArg>().is_err());
        assert!("image:".parse::<InitialArg>().is_err());
    }

    #[test]
    fn clap_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
