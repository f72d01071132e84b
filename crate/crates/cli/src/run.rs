use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use catmap::circuit::{self, build_cat_iteration};
use catmap::classical::{self, ShiftAxes};
use catmap::experiments::{
    self, DecayModel, EchoConfig, FidelitySeries, Initial, NoisyRun, TfScanConfig, TF_LEVEL,
};
use catmap::io::{self, PgmFormat, SeriesHeader};
use catmap::{CellIndex, Direction, ErrorSpec, GateCount, LatticeSpec, NoiseModel};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::{Axes, Cli, Command, Common, ErrorArgs, ErrorMode, ImageFormat, InitialArg, RegisterArg};

/// Decay constant `C` measured by the default `tf-scan` grid.
pub const DEFAULT_PREFACTOR: f64 = 0.86;

pub const MAX_NQ: u32 = 14;
/// Absolute register ceiling, matching the engine's allocation limit.
const HARD_MAX_QUBITS: usize = catmap::engine::MAX_STATE_QUBITS;
/// Keeps the measurement sampler's stream apart from the noise stream.
const SAMPLER_SALT: u64 = 0x5a4d_9e37_79b9_7f4a;

#[derive(Debug)]
pub enum Failure {
    /// Bad arguments or unreadable inputs, detected before any work starts.
    Validation(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<catmap::Error> for Failure {
    fn from(e: catmap::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure::Validation(msg.into()))
}

#[derive(Serialize)]
struct RunMetadata<'a> {
    version: &'static str,
    command: &'static str,
    argv: &'a [String],
    config: &'a Cli,
    gate_counts: Option<GateCount>,
    wall_seconds: f64,
    outputs: Vec<String>,
    summary: Value,
}

struct Outcome {
    line: String,
    summary: Value,
    gate_counts: Option<GateCount>,
    outputs: Vec<PathBuf>,
}

struct Ctx {
    spec: LatticeSpec,
    initial: Initial,
    out: PathBuf,
    format: PgmFormat,
    seed: u64,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

pub fn execute(cli: &Cli, argv: &[String]) -> Result<(), Failure> {
    if let Command::Replay { metadata } = &cli.command {
        return replay(metadata);
    }
    let ctx = validate(cli)?;
    fs::create_dir_all(&ctx.out).with_context(|| format!("creating {}", ctx.out.display()))?;
    let t0 = Instant::now();
    let outcome = dispatch(&cli.command, &ctx)?;
    let meta = RunMetadata {
        version: env!("CARGO_PKG_VERSION"),
        command: cli.command.name(),
        argv,
        config: cli,
        gate_counts: outcome.gate_counts,
        wall_seconds: t0.elapsed().as_secs_f64(),
        outputs: outcome.outputs.iter().map(|p| p.display().to_string()).collect(),
        summary: outcome.summary,
    };
    let json = serde_json::to_vec_pretty(&meta).context("serializing metadata")?;
    io::write_atomic(&ctx.path("metadata.json"), &json)?;
    println!("{}", outcome.line);
    Ok(())
}

fn replay(path: &Path) -> Result<(), Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Validation(format!("reading {}: {e}", path.display())))?;
    let meta: Value =
        serde_json::from_str(&text).map_err(|e| Failure::Validation(format!("parsing {}: {e}", path.display())))?;
    let argv: Vec<String> = meta
        .get("argv")
        .and_then(|a| serde_json::from_value(a.clone()).ok())
        .ok_or_else(|| Failure::Validation(format!("{} has no argv record", path.display())))?;
    let cli = <Cli as clap::Parser>::try_parse_from(&argv)
        .map_err(|e| Failure::Validation(format!("recorded arguments no longer parse: {e}")))?;
    if matches!(cli.command, Command::Replay { .. }) {
        return invalid("a replay record cannot point at another replay");
    }
    execute(&cli, &argv)
}

fn check_eps(name: &str, v: f64) -> Result<(), Failure> {
    if !(v.is_finite() && v >= 0.0) {
        return invalid(format!("{name} must be a finite non-negative number, got {v}"));
    }
    Ok(())
}

fn check_register(common: &Common, n_q: u32) -> Result<(), Failure> {
    let qubits = 3 * n_q as usize - 1;
    if common.max_qubits > HARD_MAX_QUBITS {
        return invalid(format!("--max-qubits {} exceeds {HARD_MAX_QUBITS}", common.max_qubits));
    }
    if qubits > common.max_qubits {
        return invalid(format!(
            "n_q = {n_q} needs {qubits} qubits, above --max-qubits {} (raise it, up to {HARD_MAX_QUBITS})",
            common.max_qubits
        ));
    }
    Ok(())
}

fn check_nq(n_q: u32) -> Result<LatticeSpec, Failure> {
    if !(1..=MAX_NQ).contains(&n_q) {
        return invalid(format!("--nq must be in 1..={MAX_NQ}, got {n_q}"));
    }
    LatticeSpec::new(n_q).map_err(|e| Failure::Validation(e.to_string()))
}

fn load_initial(arg: &InitialArg, spec: LatticeSpec) -> Result<Initial, Failure> {
    Ok(match arg {
        InitialArg::Line => Initial::Line,
        InitialArg::Point(i, j) => {
            let cell = spec
                .check(CellIndex::new(*i, *j))
                .map_err(|e| Failure::Validation(e.to_string()))?;
            Initial::Point(cell)
        }
        InitialArg::Image(path) => Initial::Density(
            io::read_density_pgm(path, spec)
                .map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?,
        ),
    })
}

fn error_spec(args: &ErrorArgs, spec: LatticeSpec) -> Result<ErrorSpec, Failure> {
    match args.mode {
        ErrorMode::Lsb => Ok(ErrorSpec::LsbFlip),
        ErrorMode::Shift => {
            let eps = args.eps_cl.unwrap_or(1.0 / spec.size() as f64);
            check_eps("--eps-cl", eps)?;
            let axes = match args.axes {
                Axes::X => ShiftAxes::X,
                Axes::Y => ShiftAxes::Y,
                Axes::Both => ShiftAxes::Both,
            };
            ErrorSpec::from_epsilon(eps, spec, axes).map_err(|e| Failure::Validation(e.to_string()))
        }
    }
}

fn validate(cli: &Cli) -> Result<Ctx, Failure> {
    let common = &cli.common;
    let spec = check_nq(common.n_q)?;
    let quantum = match &cli.command {
        Command::ClassicalEvolve { steps, .. } => {
            if *steps == 0 {
                return invalid("--steps must be at least 1");
            }
            false
        }
        Command::QuantumEvolve { steps, eps, .. } => {
            check_eps("--eps", *eps)?;
            if *steps == 0 {
                return invalid("--steps must be at least 1");
            }
            true
        }
        Command::Echo { eps, error, .. } => {
            check_eps("--eps", *eps)?;
            error_spec(error, spec)?;
            true
        }
        Command::Fidelity {
            eps,
            tmax,
            seeds,
            error_at,
            error,
        } => {
            check_eps("--eps", *eps)?;
            if *tmax == 0 || *seeds == 0 {
                return invalid("--tmax and --seeds must be at least 1");
            }
            if let Some(te) = error_at {
                if te >= tmax {
                    return invalid(format!("--error-at {te} must be below --tmax {tmax}"));
                }
                error_spec(error, spec)?;
            }
            true
        }
        Command::ClassicalEcho {
            te_max,
            error,
            quantum_eps,
        } => {
            if *te_max == 0 {
                return invalid("--te-max must be at least 1");
            }
            error_spec(error, spec)?;
            if let Some(e) = quantum_eps {
                check_eps("--quantum-eps", *e)?;
            }
            quantum_eps.is_some()
        }
        Command::TfScan {
            nqs,
            eps,
            seeds,
            tmax_factor,
        } => {
            for &n in nqs {
                check_nq(n)?;
                check_register(common, n)?;
            }
            for &e in eps {
                if !(e.is_finite() && e > 0.0) {
                    return invalid(format!("scan amplitudes must be positive, got {e}"));
                }
            }
            if nqs.len() * eps.len() < 6 || *seeds < 3 {
                return invalid("tf-scan needs at least 6 grid points and 3 seeds");
            }
            if !(tmax_factor.is_finite() && *tmax_factor > 0.0) {
                return invalid("--tmax-factor must be positive");
            }
            match &common.initial {
                InitialArg::Line => {}
                InitialArg::Point(i, j) => {
                    let n = 1usize << nqs.iter().min().copied().unwrap_or(1);
                    if *i >= n || *j >= n {
                        return invalid(format!("point ({i}, {j}) outside the smallest scan lattice"));
                    }
                }
                InitialArg::Image(_) => return invalid("tf-scan needs a line or point initial state"),
            }
            false
        }
        Command::Harmonics { k, eps, .. } => {
            check_eps("--eps", *eps)?;
            if *k == 0 || *k > spec.size() {
                return invalid(format!("-k must be in 1..={}", spec.size()));
            }
            true
        }
        Command::Nonreturn {
            eps,
            shots,
            prefactor,
            ..
        } => {
            check_eps("--eps", *eps)?;
            if *shots == 0 {
                return invalid("--shots must be at least 1");
            }
            if !(prefactor.is_finite() && *prefactor > 0.0) {
                return invalid("--prefactor must be positive");
            }
            true
        }
        Command::GateCount => false,
        Command::Verify => {
            if common.n_q > 8 {
                return invalid("verify is exhaustive and supports --nq up to 8");
            }
            false
        }
        Command::Replay { .. } => unreachable!("handled before validation"),
    };
    if quantum {
        check_register(common, common.n_q)?;
    }
    let initial = match &cli.command {
        // The scan builds its own lattices.
        Command::TfScan { .. } => match &common.initial {
            InitialArg::Point(i, j) => Initial::Point(CellIndex::new(*i, *j)),
            _ => Initial::Line,
        },
        _ => load_initial(&common.initial, spec)?,
    };
    Ok(Ctx {
        spec,
        initial,
        out: common.out.clone(),
        format: match common.format {
            ImageFormat::Ascii => PgmFormat::Ascii,
            ImageFormat::Binary => PgmFormat::Binary,
        },
        seed: common.seed,
    })
}

fn dispatch(command: &Command, ctx: &Ctx) -> Result<Outcome, Failure> {
    let spec = ctx.spec;
    let n_q = spec.n_q();
    let counts = || Some(build_cat_iteration(spec).count());
    match command {
        Command::ClassicalEvolve { steps, reversed } => {
            let grid = ctx.initial.density(spec)?;
            let dir = if *reversed { Direction::Reversed } else { Direction::Forward };
            let evolved = grid.evolve(*steps, dir);
            let path = ctx.path(&format!("classical_t{steps:04}.pgm"));
            io::write_density_pgm(&evolved, &path, ctx.format)?;
            let overlap = classical::bhattacharyya_fidelity(&evolved, &grid)?;
            let support = evolved.weights().iter().filter(|w| **w > 0.0).count();
            Ok(Outcome {
                line: format!("classical-evolve nq={n_q} steps={steps} support={support} overlap_with_initial={overlap:.6}"),
                summary: json!({ "steps": steps, "reversed": reversed, "support": support, "overlap_with_initial": overlap }),
                gate_counts: None,
                outputs: vec![path],
            })
        }
        Command::QuantumEvolve { steps, eps, save_state } => {
            let mut st = ctx.initial.prepare(spec, None)?;
            let circ = build_cat_iteration(spec);
            let mut noise = NoiseModel::new(*eps, ctx.seed)?;
            for _ in 0..*steps {
                st.apply_circuit(&circ, Some(&mut noise))?;
            }
            let mut outputs = vec![ctx.path(&format!("quantum_t{steps:04}.pgm"))];
            io::write_density_pgm(&st.density_xy(), &outputs[0], ctx.format)?;
            if *save_state {
                let p = ctx.path(&format!("state_t{steps:04}.bin"));
                io::write_snapshot(&st, &p)?;
                outputs.push(p);
            }
            let norm = st.norm_sqr();
            let leak = st.carry_leakage();
            Ok(Outcome {
                line: format!("quantum-evolve nq={n_q} steps={steps} eps={eps} norm={norm:.12} carry_leakage={leak:.3e}"),
                summary: json!({ "steps": steps, "eps": eps, "norm": norm, "carry_leakage": leak, "draws": noise.draws() }),
                gate_counts: counts(),
                outputs,
            })
        }
        Command::Echo {
            tr,
            eps,
            classical_error,
            error,
            noisy_prep,
        } => {
            let mut cfg = EchoConfig::new(spec, *tr, ctx.initial.clone());
            cfg.epsilon_q = *eps;
            cfg.seed = ctx.seed;
            cfg.noisy_prep = *noisy_prep;
            if *classical_error {
                cfg.classical_error = Some(error_spec(error, spec)?);
            }
            let mut times = vec![0, tr / 2, *tr, 2 * tr];
            times.dedup();
            cfg.snapshot_times = times;
            let res = experiments::run_echo(&cfg)?;
            let mut outputs = Vec::new();
            for snap in &res.snapshots {
                let p = ctx.path(&format!("echo_t{:04}.pgm", snap.t));
                io::write_density_pgm(&snap.density, &p, ctx.format)?;
                outputs.push(p);
            }
            let f = res.return_fidelity;
            Ok(Outcome {
                line: format!("echo nq={n_q} tr={tr} eps={eps} return_fidelity={f:.9}"),
                summary: json!({
                    "tr": tr,
                    "eps": eps,
                    "classical_error": cfg.classical_error,
                    "return_fidelity": f,
                    "draws": res.draws,
                }),
                gate_counts: counts(),
                outputs,
            })
        }
        Command::Fidelity {
            eps,
            tmax,
            seeds,
            error_at: Some(te),
            error,
        } => {
            let _ = (eps, seeds);
            let err = error_spec(error, spec)?;
            let series = experiments::classical_error_fidelity_drop(spec, &ctx.initial, *te, err, *tmax)?;
            let path = ctx.path("fidelity_classical_error.csv");
            io::write_series_csv(&series, SeriesHeader::Fidelity, &path)?;
            let drop = series.value_at(*te).unwrap_or(f64::NAN);
            Ok(Outcome {
                line: format!("fidelity nq={n_q} classical error at t={te}: f_c={drop:.6}"),
                summary: json!({ "error": err, "error_at": te, "tmax": tmax, "f_c": drop }),
                gate_counts: counts(),
                outputs: vec![path],
            })
        }
        Command::Fidelity {
            eps,
            tmax,
            seeds,
            error_at: None,
            ..
        } => {
            let runs: Vec<NoisyRun> = (0..*seeds)
                .map(|k| NoisyRun {
                    epsilon: *eps,
                    seed: ctx.seed.wrapping_add(k),
                })
                .collect();
            let series = experiments::fidelity_ensemble(spec, &ctx.initial, &runs, *tmax, None)?;
            let mut outputs = Vec::new();
            for (run, s) in runs.iter().zip(&series) {
                let p = ctx.path(&format!("fidelity_seed{}.csv", run.seed));
                io::write_series_csv(s, SeriesHeader::Fidelity, &p)?;
                outputs.push(p);
            }
            let mean = FidelitySeries::mean(&series)?;
            let p = ctx.path("fidelity_mean.csv");
            io::write_series_csv(&mean, SeriesHeader::Fidelity, &p)?;
            outputs.push(p);
            let f_end = mean.last().map(|p| p.1).unwrap_or(f64::NAN);
            let t_f = mean.crossing(TF_LEVEL);
            Ok(Outcome {
                line: format!("fidelity nq={n_q} eps={eps} seeds={seeds} mean f({tmax})={f_end:.6} t_f={t_f:?}"),
                summary: json!({ "eps": eps, "tmax": tmax, "seeds": runs.iter().map(|r| r.seed).collect::<Vec<_>>(), "mean_final": f_end, "t_f": t_f }),
                gate_counts: counts(),
                outputs,
            })
        }
        Command::ClassicalEcho {
            te_max,
            error,
            quantum_eps,
        } => {
            let err = error_spec(error, spec)?;
            let grid = ctx.initial.density(spec)?;
            let series = experiments::classical_echo_series(&grid, 1..=*te_max, Some(err))?;
            let path = ctx.path("classical_echo.csv");
            io::write_series_csv(&series, SeriesHeader::EchoFidelity, &path)?;
            let mut outputs = vec![path];
            let t_f = series.crossing(TF_LEVEL);
            let mut summary = json!({ "error": err, "te_max": te_max, "t_f": t_f });
            if let Some(q) = quantum_eps {
                let points = (1..=*te_max)
                    .map(|te| {
                        let seed = ctx.seed.wrapping_add(te as u64);
                        Ok((te, experiments::quantum_echo_fidelity(&grid, te, Some(err), *q, seed)?))
                    })
                    .collect::<catmap::Result<Vec<_>>>()?;
                let qs = FidelitySeries::from_points(points)?;
                let p = ctx.path("quantum_echo.csv");
                io::write_series_csv(&qs, SeriesHeader::EchoFidelity, &p)?;
                outputs.push(p);
                let worst = qs
                    .values()
                    .zip(series.values())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                summary["quantum_eps"] = json!(q);
                summary["max_quantum_classical_difference"] = json!(worst);
            }
            Ok(Outcome {
                line: format!("classical-echo nq={n_q} te_max={te_max} t_f={t_f:?}"),
                summary,
                gate_counts: quantum_eps.and_then(|_| counts()),
                outputs,
            })
        }
        Command::TfScan {
            nqs,
            eps,
            seeds,
            tmax_factor,
        } => {
            let mut cfg = TfScanConfig::new(
                nqs.clone(),
                eps.clone(),
                (0..*seeds).map(|k| ctx.seed.wrapping_add(k)).collect(),
            );
            cfg.t_max_factor = *tmax_factor;
            let result = experiments::tf_scan(&cfg, &ctx.initial)?;
            let path = ctx.path("tf_scan.csv");
            io::write_tf_scan_csv(&result, &path)?;
            let fit = &result.fit;
            Ok(Outcome {
                line: format!(
                    "tf-scan points={} C={:.4} slope={:.4} unit_slope_C={:.4}",
                    fit.points, fit.prefactor, fit.slope, fit.prefactor_unit_slope
                ),
                summary: serde_json::to_value(&result).context("serializing scan")?,
                gate_counts: None,
                outputs: vec![path],
            })
        }
        Command::Harmonics { register, k, steps, eps } => {
            let mut st = ctx.initial.prepare(spec, None)?;
            let circ = build_cat_iteration(spec);
            let mut noise = NoiseModel::new(*eps, ctx.seed)?;
            for _ in 0..*steps {
                st.apply_circuit(&circ, Some(&mut noise))?;
            }
            let layout = st.layout();
            let reg = match register {
                RegisterArg::X => layout.x,
                RegisterArg::Y => layout.y,
            };
            let h = experiments::harmonics(&st, reg, *k)?;
            let shown: Vec<String> = h.iter().map(|p| format!("{}:{:.6}", p.frequency, p.weight)).collect();
            Ok(Outcome {
                line: format!("harmonics nq={n_q} register={register:?} {}", shown.join(" ")),
                summary: json!({ "steps": steps, "eps": eps, "harmonics": h }),
                gate_counts: counts(),
                outputs: Vec::new(),
            })
        }
        Command::Nonreturn {
            eps,
            tr,
            shots,
            prefactor,
        } => {
            let mut cfg = EchoConfig::new(spec, *tr, ctx.initial.clone());
            cfg.epsilon_q = *eps;
            cfg.seed = ctx.seed;
            let res = experiments::run_echo(&cfg)?;
            let support = ctx.initial.x_support(spec)?;
            let model = DecayModel {
                prefactor: *prefactor,
                t: 2 * tr,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed ^ SAMPLER_SALT);
            let nr = experiments::nonreturn_probability(&res.state, &support, *shots, &mut rng, &model)?;
            Ok(Outcome {
                line: format!(
                    "nonreturn nq={n_q} eps={eps} tr={tr} shots={shots} P_nr={:.4} exact={:.4} eps_hat={:.4}",
                    nr.p_nr, nr.p_nr_exact, nr.epsilon_hat
                ),
                summary: json!({
                    "eps": eps,
                    "tr": tr,
                    "prefactor": prefactor,
                    "result": nr,
                    "return_fidelity": res.return_fidelity,
                    "w_x": res.state.marginal_x(),
                }),
                gate_counts: counts(),
                outputs: Vec::new(),
            })
        }
        Command::GateCount => {
            let circ = build_cat_iteration(spec);
            let c = circ.count();
            let path = ctx.path(&format!("circuit_nq{n_q}.txt"));
            io::write_atomic(&path, circ.to_listing().as_bytes())?;
            Ok(Outcome {
                line: format!(
                    "qubits={} toffoli={} cnot={} total={}",
                    spec.qubit_count(),
                    c.toffoli,
                    c.cnot,
                    c.total
                ),
                summary: json!({ "qubits": spec.qubit_count(), "counts": c }),
                gate_counts: Some(c),
                outputs: vec![path],
            })
        }
        Command::Verify => {
            let adder = circuit::verify_adder(n_q as usize)?;
            let map = circuit::verify_map(spec);
            let summary = json!({ "adder": adder, "map": map });
            if !(adder.ok() && map.ok()) {
                return Err(Failure::Runtime(anyhow::anyhow!("verification failed: {summary}")));
            }
            Ok(Outcome {
                line: format!(
                    "verify nq={n_q} adder={}/{} map={} cells x 2 directions ok",
                    adder.passed, adder.checked, map.checked
                ),
                summary,
                gate_counts: counts(),
                outputs: Vec::new(),
            })
        }
        Command::Replay { .. } => unreachable!("handled before dispatch"),
    }
}
