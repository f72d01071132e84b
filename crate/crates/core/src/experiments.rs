//! Echo, fidelity-decay, scaling and readout experiments.
//!
//! Everything here is deterministic given its configuration and seeds.
//! Independent noisy runs that share an exact reference are evolved in
//! lockstep, in parallel, against a single reference state.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::{self, build_cat_iteration, build_cat_iteration_reversed, Register};
use crate::classical::{self, CellIndex, DensityGrid, Direction, ErrorSpec, LatticeSpec};
use crate::engine::StateVector;
use crate::noise::NoiseModel;
use crate::{Error, Result};

/// Fidelity level that defines `t_f`.
pub const TF_LEVEL: f64 = 0.5;

/// Source of the initial density.
#[derive(Clone, Debug, PartialEq)]
pub enum Initial {
    /// Uniform line `x = N/2`, prepared by the line-prep circuit.
    Line,
    Point(CellIndex),
    /// Arbitrary density; amplitudes `sqrt(rho)`.
    Density(DensityGrid),
}

impl Initial {
    pub fn density(&self, spec: LatticeSpec) -> Result<DensityGrid> {
        match self {
            Initial::Line => Ok(DensityGrid::line(spec)),
            Initial::Point(cell) => DensityGrid::point_mass(spec, *cell),
            Initial::Density(grid) => {
                check_spec(grid.spec(), spec)?;
                Ok(grid.clone())
            }
        }
    }

    /// The initial state. Only the line preparation has gates, so only it
    /// consumes noise draws when a model is passed.
    pub fn prepare(&self, spec: LatticeSpec, noise: Option<&mut NoiseModel>) -> Result<StateVector> {
        match self {
            Initial::Line => {
                let mut st = StateVector::zero(spec)?;
                st.apply_circuit(&circuit::build_line_prep(spec), noise)?;
                Ok(st)
            }
            Initial::Point(cell) => StateVector::init_basis(cell.i, cell.j, spec),
            Initial::Density(grid) => {
                check_spec(grid.spec(), spec)?;
                StateVector::init_from_density(grid)
            }
        }
    }

    /// The `x` values that carry initial probability.
    pub fn x_support(&self, spec: LatticeSpec) -> Result<Vec<usize>> {
        let wx = self.density(spec)?.marginal_x();
        Ok((0..wx.len()).filter(|&x| wx[x] > 0.0).collect())
    }
}

fn check_spec(left: LatticeSpec, right: LatticeSpec) -> Result<()> {
    if left != right {
        return Err(Error::SpecMismatch {
            left: left.size(),
            right: right.size(),
        });
    }
    Ok(())
}

/// Forward `t_r` iterations, momentum inversion, `t_r` reversed iterations,
/// inversion again.
#[derive(Clone, Debug)]
pub struct EchoConfig {
    pub spec: LatticeSpec,
    pub t_r: usize,
    pub epsilon_q: f64,
    /// Applied once, right after the first inversion.
    pub classical_error: Option<ErrorSpec>,
    pub initial: Initial,
    pub seed: u64,
    /// Times in `0..=2 t_r` at which to record the density.
    pub snapshot_times: Vec<usize>,
    /// Run the preparation circuit with noise as well.
    pub noisy_prep: bool,
}

impl EchoConfig {
    pub fn new(spec: LatticeSpec, t_r: usize, initial: Initial) -> Self {
        Self {
            spec,
            t_r,
            epsilon_q: 0.0,
            classical_error: None,
            initial,
            seed: 1,
            snapshot_times: Vec::new(),
            noisy_prep: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Snapshot {
    pub t: usize,
    pub density: DensityGrid,
}

#[derive(Clone, Debug)]
pub struct EchoResult {
    /// Densities in the physical frame: during the backward half the
    /// momentum inversion is undone before recording, so the snapshot at
    /// `2 t_r` is the returned density.
    pub snapshots: Vec<Snapshot>,
    /// `|<final|initial>|^2`.
    pub return_fidelity: f64,
    pub initial: StateVector,
    pub state: StateVector,
    pub draws: u64,
}

pub fn run_echo(config: &EchoConfig) -> Result<EchoResult> {
    let spec = config.spec;
    let t_r = config.t_r;
    if let Some(&t) = config.snapshot_times.iter().find(|&&t| t > 2 * t_r) {
        return Err(Error::Domain(format!("snapshot time {t} beyond 2 t_r = {}", 2 * t_r)));
    }
    if let Some(err) = &config.classical_error {
        err.validate(spec)?;
    }
    let mut noise = NoiseModel::new(config.epsilon_q, config.seed)?;
    let initial = config
        .initial
        .prepare(spec, config.noisy_prep.then_some(&mut noise))?;
    let wanted = |t: usize| config.snapshot_times.contains(&t);
    let mut snapshots = Vec::new();
    let mut st = initial.clone();
    if wanted(0) {
        snapshots.push(Snapshot { t: 0, density: st.density_xy() });
    }
    let forward = build_cat_iteration(spec);
    for t in 1..=t_r {
        st.apply_circuit(&forward, Some(&mut noise))?;
        if wanted(t) {
            snapshots.push(Snapshot { t, density: st.density_xy() });
        }
    }
    st.apply_lattice_permutation(|c| classical::momentum_negate(c, spec))?;
    if let Some(err) = config.classical_error {
        st.apply_lattice_permutation(|c| err.apply(c, spec))?;
    }
    let reversed = build_cat_iteration_reversed(spec);
    for k in 1..=t_r {
        st.apply_circuit(&reversed, Some(&mut noise))?;
        if wanted(t_r + k) {
            snapshots.push(Snapshot {
                t: t_r + k,
                density: st.density_xy().momentum_negated(),
            });
        }
    }
    st.apply_lattice_permutation(|c| classical::momentum_negate(c, spec))?;
    let return_fidelity = initial.fidelity(&st)?;
    Ok(EchoResult {
        snapshots,
        return_fidelity,
        initial,
        state: st,
        draws: noise.draws(),
    })
}

/// `(t, f)` points with strictly increasing `t`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FidelitySeries {
    points: Vec<(usize, f64)>,
}

impl FidelitySeries {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_points(points: Vec<(usize, f64)>) -> Result<Self> {
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Format("series times must increase strictly".into()));
        }
        if let Some(&(t, f)) = points.iter().find(|p| !p.1.is_finite()) {
            return Err(Error::Format(format!("non-finite value {f} at t = {t}")));
        }
        Ok(Self { points })
    }

    fn push(&mut self, t: usize, f: f64) {
        debug_assert!(self.points.last().is_none_or(|&(last, _)| last < t));
        self.points.push((t, f));
    }

    pub fn points(&self) -> &[(usize, f64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn times(&self) -> impl Iterator<Item = usize> + '_ {
        self.points.iter().map(|p| p.0)
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.1)
    }

    pub fn value_at(&self, t: usize) -> Option<f64> {
        self.points
            .binary_search_by_key(&t, |p| p.0)
            .ok()
            .map(|k| self.points[k].1)
    }

    pub fn last(&self) -> Option<(usize, f64)> {
        self.points.last().copied()
    }

    /// First time the series falls below `level`, linearly interpolated
    /// between the two bracketing samples.
    pub fn crossing(&self, level: f64) -> Option<f64> {
        let k = self.points.iter().position(|p| p.1 < level)?;
        if k == 0 {
            return Some(self.points[0].0 as f64);
        }
        let (t0, f0) = self.points[k - 1];
        let (t1, f1) = self.points[k];
        Some(t0 as f64 + (f0 - level) / (f0 - f1) * (t1 - t0) as f64)
    }

    /// Pointwise mean of series sampled at the same times.
    pub fn mean(series: &[FidelitySeries]) -> Result<FidelitySeries> {
        let first = series
            .first()
            .ok_or_else(|| Error::InsufficientData("no series to average".into()))?;
        if series.iter().any(|s| !s.times().eq(first.times())) {
            return Err(Error::Format("series sampled at different times".into()));
        }
        let n = series.len() as f64;
        let points = first
            .points
            .iter()
            .enumerate()
            .map(|(k, &(t, _))| (t, series.iter().map(|s| s.points[k].1).sum::<f64>() / n))
            .collect();
        Ok(FidelitySeries { points })
    }
}

/// One noisy trajectory: amplitude and seed of its noise stream.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisyRun {
    pub epsilon: f64,
    pub seed: u64,
}

/// `f(t) = |<psi_eps(t)|psi_0(t)>|^2` for `t = 0..=t_max`, one series per run.
///
/// All runs start from the exactly prepared initial state and share one
/// exact reference trajectory. With `stop_below`, a run stops after its
/// first sample below that level; the loop ends once every run has stopped.
pub fn fidelity_ensemble(
    spec: LatticeSpec,
    initial: &Initial,
    runs: &[NoisyRun],
    t_max: usize,
    stop_below: Option<f64>,
) -> Result<Vec<FidelitySeries>> {
    if t_max < 1 {
        return Err(Error::Domain("t_max must be at least 1".into()));
    }
    let mut reference = initial.prepare(spec, None)?;
    let mut active = runs
        .iter()
        .map(|r| Ok(Some((reference.clone(), NoiseModel::new(r.epsilon, r.seed)?))))
        .collect::<Result<Vec<_>>>()?;
    let mut out: Vec<FidelitySeries> = runs
        .iter()
        .map(|_| {
            let mut s = FidelitySeries::new();
            s.push(0, 1.0);
            s
        })
        .collect();
    let forward = build_cat_iteration(spec);
    for t in 1..=t_max {
        if active.iter().all(Option::is_none) {
            break;
        }
        reference.apply_circuit(&forward, None)?;
        let fids = active
            .par_iter_mut()
            .map(|slot| match slot {
                Some((st, noise)) => {
                    st.apply_circuit(&forward, Some(noise))?;
                    Ok(Some(reference.fidelity(st)?))
                }
                None => Ok(None),
            })
            .collect::<Result<Vec<_>>>()?;
        for ((slot, series), f) in active.iter_mut().zip(&mut out).zip(fids) {
            if let Some(f) = f {
                series.push(t, f);
                if stop_below.is_some_and(|level| f < level) {
                    *slot = None;
                }
            }
        }
    }
    Ok(out)
}

pub fn fidelity_vs_time(
    spec: LatticeSpec,
    initial: &Initial,
    epsilon_q: f64,
    t_max: usize,
    seed: u64,
) -> Result<FidelitySeries> {
    let run = NoisyRun { epsilon: epsilon_q, seed };
    Ok(fidelity_ensemble(spec, initial, &[run], t_max, None)?.remove(0))
}

/// `f_c(t, t_e)` for `t = 0..=t_max`: both states evolve exactly and the
/// error permutation hits one of them after iteration `t_e`.
pub fn classical_error_fidelity_drop(
    spec: LatticeSpec,
    initial: &Initial,
    t_e: usize,
    error: ErrorSpec,
    t_max: usize,
) -> Result<FidelitySeries> {
    if t_e >= t_max {
        return Err(Error::Domain(format!("t_e = {t_e} must be below t_max = {t_max}")));
    }
    error.validate(spec)?;
    let forward = build_cat_iteration(spec);
    let mut reference = initial.prepare(spec, None)?;
    let mut series = FidelitySeries::new();
    // Until t_e the perturbed run is the reference itself.
    series.push(0, reference.fidelity(&reference)?);
    for t in 1..=t_e {
        reference.apply_circuit(&forward, None)?;
        if t < t_e {
            series.push(t, reference.fidelity(&reference)?);
        }
    }
    let mut perturbed = reference.clone();
    perturbed.apply_lattice_permutation(|c| error.apply(c, spec))?;
    series.push(t_e, reference.fidelity(&perturbed)?);
    for t in t_e + 1..=t_max {
        reference.apply_circuit(&forward, None)?;
        perturbed.apply_circuit(&forward, None)?;
        series.push(t, reference.fidelity(&perturbed)?);
    }
    Ok(series)
}

/// Classical echo with an optional error at the inversion: forward `t_e`,
/// invert, error, reversed `t_e`, invert. Returns the Bhattacharyya
/// fidelity against the initial density.
pub fn classical_echo_fidelity(grid: &DensityGrid, t_e: usize, error: Option<ErrorSpec>) -> Result<f64> {
    if t_e < 1 {
        return Err(Error::Domain("t_e must be at least 1".into()));
    }
    let mut g = grid.evolve(t_e, Direction::Forward).momentum_negated();
    if let Some(err) = error {
        g = g.with_error(&err)?;
    }
    let back = g.evolve(t_e, Direction::Reversed).momentum_negated();
    classical::bhattacharyya_fidelity(&back, grid)
}

/// The same protocol on the gate-level engine with noise `epsilon_q`.
pub fn quantum_echo_fidelity(
    grid: &DensityGrid,
    t_e: usize,
    error: Option<ErrorSpec>,
    epsilon_q: f64,
    seed: u64,
) -> Result<f64> {
    if t_e < 1 {
        return Err(Error::Domain("t_e must be at least 1".into()));
    }
    let mut config = EchoConfig::new(grid.spec(), t_e, Initial::Density(grid.clone()));
    config.epsilon_q = epsilon_q;
    config.classical_error = error;
    config.seed = seed;
    Ok(run_echo(&config)?.return_fidelity)
}

/// `f_c(2 t_e)` against `t_e` for the classical pipeline.
pub fn classical_echo_series(
    grid: &DensityGrid,
    t_es: impl IntoIterator<Item = usize>,
    error: Option<ErrorSpec>,
) -> Result<FidelitySeries> {
    let points = t_es
        .into_iter()
        .map(|t| Ok((t, classical_echo_fidelity(grid, t, error)?)))
        .collect::<Result<Vec<_>>>()?;
    FidelitySeries::from_points(points)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TfEstimate {
    /// Interpolated crossing of `f = 1/2`; equals `t_max` when saturated.
    pub t_f: f64,
    /// No crossing up to `t_max`.
    pub saturated: bool,
}

impl TfEstimate {
    fn from_series(series: &FidelitySeries, t_max: usize) -> Self {
        match series.crossing(TF_LEVEL) {
            Some(t_f) => TfEstimate { t_f, saturated: false },
            None => TfEstimate {
                t_f: t_max as f64,
                saturated: true,
            },
        }
    }
}

pub fn find_tf(
    spec: LatticeSpec,
    epsilon_q: f64,
    initial: &Initial,
    seed: u64,
    t_max: usize,
) -> Result<TfEstimate> {
    let run = NoisyRun { epsilon: epsilon_q, seed };
    let series = fidelity_ensemble(spec, initial, &[run], t_max, Some(TF_LEVEL))?;
    Ok(TfEstimate::from_series(&series[0], t_max))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TfScanConfig {
    pub n_qs: Vec<u32>,
    pub epsilons: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Each grid point runs up to `ceil(t_max_factor / (eps^2 n_q))` iterations.
    pub t_max_factor: f64,
}

impl TfScanConfig {
    pub fn new(n_qs: Vec<u32>, epsilons: Vec<f64>, seeds: Vec<u64>) -> Self {
        Self {
            n_qs,
            epsilons,
            seeds,
            t_max_factor: 5.0,
        }
    }

    pub fn t_max(&self, n_q: u32, epsilon: f64) -> usize {
        (self.t_max_factor / (epsilon * epsilon * n_q as f64)).ceil() as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TfRow {
    pub n_q: u32,
    pub epsilon: f64,
    pub seed: u64,
    pub t_f: f64,
    pub saturated: bool,
}

impl TfRow {
    /// `eps^2 n_q`.
    pub fn x(&self) -> f64 {
        self.epsilon * self.epsilon * self.n_q as f64
    }
}

/// Least-squares fit `ln t_f = ln C + slope * ln(eps^2 n_q)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TfFit {
    pub prefactor: f64,
    pub slope: f64,
    /// `C` with the slope pinned to -1: geometric mean of `t_f eps^2 n_q`.
    pub prefactor_unit_slope: f64,
    /// `ln t_f` minus the fitted line, per unsaturated row.
    pub residuals: Vec<f64>,
    pub r_squared: f64,
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TfScanResult {
    pub rows: Vec<TfRow>,
    pub fit: TfFit,
}

impl TfScanResult {
    /// Median `t_f` per `eps^2 n_q` over unsaturated rows, ascending in `x`.
    pub fn medians(&self) -> Vec<(f64, f64)> {
        let mut groups: Vec<(f64, Vec<f64>)> = Vec::new();
        for row in self.rows.iter().filter(|r| !r.saturated) {
            match groups.iter_mut().find(|g| g.0 == row.x()) {
                Some(g) => g.1.push(row.t_f),
                None => groups.push((row.x(), vec![row.t_f])),
            }
        }
        groups.sort_by(|a, b| a.0.total_cmp(&b.0));
        groups.into_iter().map(|(x, v)| (x, median(v))).collect()
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn fit_tf(rows: &[TfRow]) -> Result<TfFit> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| !r.saturated && r.t_f > 0.0)
        .map(|r| (r.x().ln(), r.t_f.ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if pts.len() < 3 || sxx <= 0.0 {
        return Err(Error::InsufficientData(format!(
            "{} unsaturated points; need 3 spanning two values of eps^2 n_q",
            pts.len()
        )));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals: Vec<f64> = pts.iter().map(|p| p.1 - intercept - slope * p.0).collect();
    let ss_res: f64 = residuals.iter().map(|r| r * r).sum();
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    Ok(TfFit {
        prefactor: intercept.exp(),
        slope,
        prefactor_unit_slope: (my + mx).exp(),
        residuals,
        r_squared: if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 },
        points: pts.len(),
    })
}

/// `t_f` over the `n_q x eps` grid. Seeds at one grid point run in parallel
/// against a shared exact reference.
pub fn tf_scan(config: &TfScanConfig, initial: &Initial) -> Result<TfScanResult> {
    let grid_points = config.n_qs.len() * config.epsilons.len();
    if grid_points < 6 || config.seeds.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{grid_points} grid points and {} seeds; need at least 6 and 3",
            config.seeds.len()
        )));
    }
    if let Some(e) = config.epsilons.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
        return Err(Error::Domain(format!("scan amplitude {e} must be positive")));
    }
    let mut rows = Vec::new();
    for &n_q in &config.n_qs {
        let spec = LatticeSpec::new(n_q)?;
        for &epsilon in &config.epsilons {
            let t_max = config.t_max(n_q, epsilon);
            let runs: Vec<NoisyRun> = config.seeds.iter().map(|&seed| NoisyRun { epsilon, seed }).collect();
            let series = fidelity_ensemble(spec, initial, &runs, t_max, Some(TF_LEVEL))?;
            for (run, s) in runs.iter().zip(&series) {
                let est = TfEstimate::from_series(s, t_max);
                rows.push(TfRow {
                    n_q,
                    epsilon,
                    seed: run.seed,
                    t_f: est.t_f,
                    saturated: est.saturated,
                });
            }
        }
    }
    let fit = fit_tf(&rows)?;
    Ok(TfScanResult { rows, fit })
}

/// Decay model `f = exp(-ln 2 * t * eps^2 n_q / C)` used to turn a
/// measured return probability into a noise amplitude.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayModel {
    pub prefactor: f64,
    /// Noisy iterations between preparation and readout.
    pub t: usize,
}

impl DecayModel {
    pub fn fidelity(&self, epsilon: f64, n_q: u32) -> f64 {
        (-std::f64::consts::LN_2 * self.t as f64 * epsilon * epsilon * n_q as f64 / self.prefactor).exp()
    }

    /// Inverse of [`DecayModel::fidelity`]; infinite for `f <= 0`.
    pub fn epsilon(&self, f: f64, n_q: u32) -> f64 {
        if f >= 1.0 {
            return 0.0;
        }
        (self.prefactor * (1.0 / f).ln() / (std::f64::consts::LN_2 * self.t as f64 * n_q as f64)).sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonReturn {
    pub shots: usize,
    /// Sampled fraction of `x` outcomes outside the initial support.
    pub p_nr: f64,
    /// Exact probability mass outside the support.
    pub p_nr_exact: f64,
    /// Binomial standard error of `p_nr` at the exact probability.
    pub sigma: f64,
    /// Noise amplitude inferred from `f = 1 - p_nr`.
    pub epsilon_hat: f64,
}

/// Measures the `x` register `shots` times and counts non-returns.
pub fn nonreturn_probability<R: Rng + ?Sized>(
    state: &StateVector,
    support: &[usize],
    shots: usize,
    rng: &mut R,
    model: &DecayModel,
) -> Result<NonReturn> {
    if shots < 1 {
        return Err(Error::Domain("shots must be at least 1".into()));
    }
    let spec = state.spec();
    if let Some(&x) = support.iter().find(|&&x| x >= spec.size()) {
        return Err(Error::Domain(format!("support value {x} outside 0..{}", spec.size())));
    }
    let x = state.layout().x;
    let wx = state.marginal(x);
    let inside: f64 = support.iter().map(|&v| wx[v]).sum();
    let p_nr_exact = (1.0 - inside).clamp(0.0, 1.0);
    let outcomes = state.sample_register(x, shots, rng)?;
    let misses = outcomes.iter().filter(|v| !support.contains(v)).count();
    let p_nr = misses as f64 / shots as f64;
    Ok(NonReturn {
        shots,
        p_nr,
        p_nr_exact,
        sigma: (p_nr_exact * (1.0 - p_nr_exact) / shots as f64).sqrt(),
        epsilon_hat: model.epsilon(1.0 - p_nr, spec.n_q()),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    /// Signed frequency in `-N/2 + 1 ..= N/2`.
    pub frequency: i64,
    pub weight: f64,
}

/// The `k` strongest Fourier components of `register`'s amplitude, read off
/// after an exact QFT. Ties are ordered by `|frequency|`, then frequency.
pub fn harmonics(state: &StateVector, register: Register, k: usize) -> Result<Vec<Harmonic>> {
    let n = 1usize << register.width;
    if k > n {
        return Err(Error::Domain(format!("k = {k} exceeds register size {n}")));
    }
    let mut st = state.clone();
    st.apply_circuit(&circuit::build_qft(st.qubit_count(), register)?, None)?;
    let probs = st.marginal(register);
    let mut out: Vec<Harmonic> = probs
        .iter()
        .enumerate()
        .map(|(v, &w)| {
            let f = circuit::bit_reverse(v, register.width);
            let frequency = if f > n / 2 { f as i64 - n as i64 } else { f as i64 };
            Harmonic { frequency, weight: w }
        })
        .collect();
    out.sort_by(|a, b| {
        b.weight
            .total_cmp(&a.weight)
            .then(a.frequency.abs().cmp(&b.frequency.abs()))
            .then(a.frequency.cmp(&b.frequency))
    });
    out.truncate(k);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classical::ShiftAxes;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(n_q: u32) -> LatticeSpec {
        LatticeSpec::new(n_q).unwrap()
    }

    fn blob(s: LatticeSpec) -> DensityGrid {
        let n = s.size() as f64;
        let w = (0..s.cells())
            .map(|k| {
                let c = s.unflat(k);
                let dx = c.i as f64 / n - 0.4;
                let dy = c.j as f64 / n - 0.6;
                (-(dx * dx + dy * dy) / 0.01).exp()
            })
            .collect();
        DensityGrid::from_weights(s, w).unwrap()
    }

    #[test]
    fn exact_echo_returns() {
        for n_q in 3..=5 {
            for t_r in [1, 7] {
                let mut cfg = EchoConfig::new(spec(n_q), t_r, Initial::Density(blob(spec(n_q))));
                cfg.snapshot_times = vec![0, t_r, 2 * t_r];
                let r = run_echo(&cfg).unwrap();
                assert!((r.return_fidelity - 1.0).abs() < 1e-9);
                assert_eq!(r.draws, 0);
                let first = &r.snapshots[0].density;
                let last = &r.snapshots[2].density;
                for (a, b) in first.weights().iter().zip(last.weights()) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn echo_snapshots_follow_the_classical_orbit() {
        let s = spec(4);
        let g = blob(s);
        let mut cfg = EchoConfig::new(s, 5, Initial::Density(g.clone()));
        cfg.snapshot_times = (0..=10).collect();
        let r = run_echo(&cfg).unwrap();
        for snap in &r.snapshots {
            let t = if snap.t <= 5 { snap.t } else { 10 - snap.t };
            let want = g.evolve(t, Direction::Forward);
            for (a, b) in snap.density.weights().iter().zip(want.weights()) {
                assert!((a - b).abs() < 1e-12, "t={}", snap.t);
            }
        }
        cfg.snapshot_times = vec![11];
        assert!(run_echo(&cfg).is_err());
    }

    #[test]
    fn noisy_echo_is_reproducible() {
        let mut cfg = EchoConfig::new(spec(4), 4, Initial::Line);
        cfg.epsilon_q = 0.05;
        cfg.seed = 11;
        let a = run_echo(&cfg).unwrap();
        let b = run_echo(&cfg).unwrap();
        assert_eq!(a.return_fidelity, b.return_fidelity);
        assert_eq!(a.state, b.state);
        assert!(a.return_fidelity < 1.0);
        assert_eq!(a.draws, 2 * 8 * 42);
        cfg.noisy_prep = true;
        let c = run_echo(&cfg).unwrap();
        assert_eq!(c.draws, 2 * (8 * 42 + 5));
    }

    #[test]
    fn classical_and_quantum_echo_agree_without_noise() {
        let s = spec(5);
        let g = blob(s);
        let err = ErrorSpec::from_epsilon(1.0 / 32.0, s, ShiftAxes::Both).unwrap();
        for t_e in 1..=4 {
            let c = classical_echo_fidelity(&g, t_e, Some(err)).unwrap();
            let q = quantum_echo_fidelity(&g, t_e, Some(err), 0.0, 1).unwrap();
            assert!((c - q).abs() < 1e-9, "t_e={t_e}: {c} vs {q}");
            assert!((classical_echo_fidelity(&g, t_e, None).unwrap() - 1.0).abs() < 1e-12);
        }
        assert!(classical_echo_fidelity(&g, 0, None).is_err());
    }

    #[test]
    fn zero_noise_fidelity_is_one() {
        let series = fidelity_vs_time(spec(3), &Initial::Line, 0.0, 20, 1).unwrap();
        assert_eq!(series.len(), 21);
        assert!(series.values().all(|f| (f - 1.0).abs() < 1e-12));
    }

    #[test]
    fn ensemble_matches_single_runs() {
        let s = spec(4);
        let runs = [
            NoisyRun { epsilon: 0.05, seed: 1 },
            NoisyRun { epsilon: 0.1, seed: 2 },
        ];
        let ens = fidelity_ensemble(s, &Initial::Line, &runs, 30, None).unwrap();
        for (run, series) in runs.iter().zip(&ens) {
            assert_eq!(
                series,
                &fidelity_vs_time(s, &Initial::Line, run.epsilon, 30, run.seed).unwrap()
            );
        }
    }

    #[test]
    fn crossing_interpolates() {
        let s = FidelitySeries::from_points(vec![(0, 1.0), (1, 0.8), (2, 0.4), (3, 0.3)]).unwrap();
        assert!((s.crossing(0.5).unwrap() - 1.75).abs() < 1e-12);
        assert!(s.crossing(0.1).is_none());
        assert!(FidelitySeries::from_points(vec![(1, 1.0), (1, 0.5)]).is_err());
        let m = FidelitySeries::mean(&[s.clone(), s.clone()]).unwrap();
        assert_eq!(m, s);
    }

    #[test]
    fn find_tf_saturates_without_noise() {
        let est = find_tf(spec(3), 0.0, &Initial::Line, 1, 50).unwrap();
        assert!(est.saturated);
        assert_eq!(est.t_f, 50.0);
        let est = find_tf(spec(3), 0.3, &Initial::Line, 1, 500).unwrap();
        assert!(!est.saturated && est.t_f > 0.0 && est.t_f < 500.0);
    }

    #[test]
    fn error_drop_is_constant_after_the_error() {
        let s = spec(4);
        let series =
            classical_error_fidelity_drop(s, &Initial::Density(blob(s)), 5, ErrorSpec::LsbFlip, 12).unwrap();
        assert_eq!(series.len(), 13);
        for (t, f) in series.points() {
            if *t < 5 {
                assert!((f - 1.0).abs() < 1e-12);
            }
        }
        let fe = series.value_at(5).unwrap();
        assert!(fe < 1.0);
        for t in 6..=12 {
            assert!((series.value_at(t).unwrap() - fe).abs() < 1e-12);
        }
        assert!(classical_error_fidelity_drop(s, &Initial::Line, 5, ErrorSpec::LsbFlip, 5).is_err());
    }

    #[test]
    fn fit_recovers_a_power_law() {
        let rows: Vec<TfRow> = [(4, 0.01), (4, 0.1), (6, 0.03), (5, 0.05)]
            .iter()
            .map(|&(n_q, epsilon)| TfRow {
                n_q,
                epsilon,
                seed: 0,
                t_f: 0.63 / (epsilon * epsilon * n_q as f64),
                saturated: false,
            })
            .collect();
        let fit = fit_tf(&rows).unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-12);
        assert!((fit.prefactor - 0.63).abs() < 1e-12);
        assert!((fit.prefactor_unit_slope - 0.63).abs() < 1e-12);
        assert!(fit.residuals.iter().all(|r| r.abs() < 1e-12));
        assert!(fit_tf(&rows[..2]).is_err());
    }

    #[test]
    fn scan_rejects_small_grids() {
        let cfg = TfScanConfig::new(vec![3, 4], vec![0.1, 0.2], vec![1, 2, 3]);
        assert!(matches!(tf_scan(&cfg, &Initial::Line), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn decay_model_round_trip() {
        let m = DecayModel { prefactor: 0.5, t: 400 };
        let f = m.fidelity(0.02, 7);
        assert!((m.epsilon(f, 7) - 0.02).abs() < 1e-12);
        assert_eq!(m.epsilon(1.0, 7), 0.0);
        assert!(m.epsilon(0.0, 7).is_infinite());
    }

    #[test]
    fn nonreturn_without_noise_is_zero() {
        let s = spec(4);
        let mut cfg = EchoConfig::new(s, 6, Initial::Line);
        cfg.seed = 2;
        let r = run_echo(&cfg).unwrap();
        let support = Initial::Line.x_support(s).unwrap();
        assert_eq!(support, vec![8]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = DecayModel { prefactor: 0.5, t: 12 };
        let nr = nonreturn_probability(&r.state, &support, 1000, &mut rng, &m).unwrap();
        assert_eq!(nr.p_nr, 0.0);
        assert!(nr.p_nr_exact < 1e-12);
        assert_eq!(nr.epsilon_hat, 0.0);
        assert!(nonreturn_probability(&r.state, &support, 0, &mut rng, &m).is_err());
    }

    #[test]
    fn harmonics_of_simple_states() {
        let s = spec(4);
        let n = s.size();
        let u = StateVector::init_from_density(&DensityGrid::uniform(s)).unwrap();
        let h = harmonics(&u, u.layout().y, 3).unwrap();
        assert_eq!(h[0].frequency, 0);
        assert!((h[0].weight - 1.0).abs() < 1e-12);
        assert!(h[1].weight < 1e-20);

        let line = Initial::Line.prepare(s, None).unwrap();
        let h = harmonics(&line, line.layout().x, n).unwrap();
        assert!(h.iter().all(|p| (p.weight - 1.0 / n as f64).abs() < 1e-12));
        assert!(harmonics(&line, line.layout().x, n + 1).is_err());
    }
}
