//! Exact integer model of the discretized cat map on an `N x N` torus lattice.
//!
//! One iteration is a kick `j <- j + i` followed by a rotation `i <- i + j`,
//! both mod `N`. Everything here is a lattice permutation, so densities are
//! pushed forward without interpolation and total weight is conserved.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Largest `n_q` accepted by [`LatticeSpec::new`]; keeps `N^2` within `u64`.
pub const MAX_LATTICE_BITS: u32 = 31;

/// Lattice of `N = 2^n_q` cells per axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatticeSpec {
    n_q: u32,
}

impl LatticeSpec {
    pub fn new(n_q: u32) -> Result<Self> {
        if n_q == 0 || n_q > MAX_LATTICE_BITS {
            return Err(Error::InvalidLattice(n_q));
        }
        Ok(Self { n_q })
    }

    /// Qubits per register.
    #[inline]
    pub fn n_q(&self) -> u32 {
        self.n_q
    }

    /// Cells per axis, `N`.
    #[inline]
    pub fn size(&self) -> usize {
        1usize << self.n_q
    }

    #[inline]
    pub fn mask(&self) -> usize {
        self.size() - 1
    }

    /// Number of lattice cells, `N^2`.
    #[inline]
    pub fn cells(&self) -> usize {
        self.size() * self.size()
    }

    /// Qubits used by the quantum algorithm: two registers plus `n_q - 1` carries.
    #[inline]
    pub fn qubit_count(&self) -> usize {
        3 * self.n_q as usize - 1
    }

    pub fn check(&self, cell: CellIndex) -> Result<CellIndex> {
        let n = self.size();
        if cell.i < n && cell.j < n {
            Ok(cell)
        } else {
            Err(Error::CellOutOfRange { i: cell.i, j: cell.j, n })
        }
    }

    /// Flat index `i + N*j`, matching the `x + N*y` layout of the state vector.
    #[inline]
    pub fn flat(&self, cell: CellIndex) -> usize {
        cell.i + (cell.j << self.n_q)
    }

    #[inline]
    pub fn unflat(&self, index: usize) -> CellIndex {
        CellIndex {
            i: index & self.mask(),
            j: index >> self.n_q,
        }
    }
}

/// Lattice cell: position `x_i = i/N`, momentum `y_j = j/N`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellIndex {
    pub i: usize,
    pub j: usize,
}

impl CellIndex {
    pub const fn new(i: usize, j: usize) -> Self {
        Self { i, j }
    }
}

/// Stretching factor and Kolmogorov-Sinai entropy of the cat map.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CatConstants {
    pub lambda: f64,
    pub h: f64,
}

impl CatConstants {
    pub fn new() -> Self {
        let lambda = (3.0 + 5f64.sqrt()) / 2.0;
        Self {
            lambda,
            h: lambda.ln(),
        }
    }
}

impl Default for CatConstants {
    fn default() -> Self {
        Self::new()
    }
}

/// Kolmogorov-Sinai entropy `h = ln((3 + sqrt 5)/2)` in nats per iteration.
pub fn ks_entropy() -> f64 {
    CatConstants::new().h
}

/// Factor order of one iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// Kick then rotation.
    Forward,
    /// Rotation then kick; used for the backward half of an echo.
    Reversed,
}

#[inline]
pub fn cat_step(cell: CellIndex, spec: LatticeSpec) -> CellIndex {
    let m = spec.mask();
    let j = (cell.j + cell.i) & m;
    let i = (j + cell.i) & m;
    CellIndex { i, j }
}

#[inline]
pub fn cat_step_reversed(cell: CellIndex, spec: LatticeSpec) -> CellIndex {
    let m = spec.mask();
    let i = (cell.i + cell.j) & m;
    let j = (cell.j + i) & m;
    CellIndex { i, j }
}

#[inline]
pub fn step(cell: CellIndex, spec: LatticeSpec, direction: Direction) -> CellIndex {
    match direction {
        Direction::Forward => cat_step(cell, spec),
        Direction::Reversed => cat_step_reversed(cell, spec),
    }
}

/// Time inversion `j -> (N - j) mod N`.
#[inline]
pub fn momentum_negate(cell: CellIndex, spec: LatticeSpec) -> CellIndex {
    CellIndex {
        i: cell.i,
        j: spec.size().wrapping_sub(cell.j) & spec.mask(),
    }
}

/// Which axes a one-cell shift displaces.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShiftAxes {
    X,
    Y,
    #[default]
    Both,
}

/// A classical error realized as a rigid lattice permutation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorSpec {
    /// Flip the least significant bit of both coordinates.
    LsbFlip,
    /// Translate by `(di, dj)` cells.
    Shift { di: usize, dj: usize },
}

impl ErrorSpec {
    /// Shift of `max(1, round(eps_cl * N))` cells along `axes`.
    pub fn from_epsilon(eps_cl: f64, spec: LatticeSpec, axes: ShiftAxes) -> Result<Self> {
        if !(eps_cl.is_finite() && eps_cl >= 0.0) {
            return Err(Error::Domain(format!("classical error amplitude {eps_cl}")));
        }
        let delta = ((eps_cl * spec.size() as f64).round() as usize).max(1);
        let err = match axes {
            ShiftAxes::X => ErrorSpec::Shift { di: delta, dj: 0 },
            ShiftAxes::Y => ErrorSpec::Shift { di: 0, dj: delta },
            ShiftAxes::Both => ErrorSpec::Shift {
                di: delta,
                dj: delta,
            },
        };
        err.validate(spec)?;
        Ok(err)
    }

    pub fn validate(&self, spec: LatticeSpec) -> Result<()> {
        if let ErrorSpec::Shift { di, dj } = *self {
            let delta = di.max(dj);
            if delta >= spec.size() {
                return Err(Error::ShiftTooLarge {
                    delta,
                    n: spec.size(),
                });
            }
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, cell: CellIndex, spec: LatticeSpec) -> CellIndex {
        let m = spec.mask();
        match *self {
            ErrorSpec::LsbFlip => CellIndex {
                i: cell.i ^ 1,
                j: cell.j ^ 1,
            },
            ErrorSpec::Shift { di, dj } => CellIndex {
                i: (cell.i + di) & m,
                j: (cell.j + dj) & m,
            },
        }
    }
}

/// Non-negative weights on the `N x N` lattice, normalized to total 1.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityGrid {
    spec: LatticeSpec,
    weights: Vec<f64>,
}

/// Normalization tolerance for densities handed in from outside.
pub const NORM_TOLERANCE: f64 = 1e-9;

impl DensityGrid {
    /// Normalizes `weights` (indexed `i + N*j`) to unit total.
    pub fn from_weights(spec: LatticeSpec, mut weights: Vec<f64>) -> Result<Self> {
        if weights.len() != spec.cells() {
            return Err(Error::Format(format!(
                "expected {} weights, got {}",
                spec.cells(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Domain("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::NotNormalized(total));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(Self { spec, weights })
    }

    /// Wraps already-normalized weights without rescaling.
    pub fn from_normalized(spec: LatticeSpec, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != spec.cells() {
            return Err(Error::Format(format!(
                "expected {} weights, got {}",
                spec.cells(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Domain("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::NotNormalized(total));
        }
        Ok(Self { spec, weights })
    }

    pub fn point_mass(spec: LatticeSpec, cell: CellIndex) -> Result<Self> {
        spec.check(cell)?;
        let mut weights = vec![0.0; spec.cells()];
        weights[spec.flat(cell)] = 1.0;
        Ok(Self { spec, weights })
    }

    pub fn uniform(spec: LatticeSpec) -> Self {
        let w = 1.0 / spec.cells() as f64;
        Self {
            spec,
            weights: vec![w; spec.cells()],
        }
    }

    /// Uniform weight on the vertical line `i = N/2`.
    pub fn line(spec: LatticeSpec) -> Self {
        let n = spec.size();
        let mut weights = vec![0.0; spec.cells()];
        for j in 0..n {
            weights[spec.flat(CellIndex::new(n / 2, j))] = 1.0 / n as f64;
        }
        Self { spec, weights }
    }

    #[inline]
    pub fn spec(&self) -> LatticeSpec {
        self.spec
    }

    #[inline]
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn weight(&self, cell: CellIndex) -> f64 {
        self.weights[self.spec.flat(cell)]
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Cells carrying nonzero weight, in flat-index order.
    pub fn support(&self) -> impl Iterator<Item = CellIndex> + '_ {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(k, _)| self.spec.unflat(k))
    }

    /// `W_x(i) = sum_j rho_ij`.
    pub fn marginal_x(&self) -> Vec<f64> {
        let n = self.spec.size();
        let mut out = vec![0.0; n];
        for (k, w) in self.weights.iter().enumerate() {
            out[k & self.spec.mask()] += w;
        }
        out
    }

    /// Pushforward of the weights through a lattice map. `f` must be a bijection.
    pub fn permuted(&self, f: impl Fn(CellIndex) -> CellIndex) -> Self {
        let mut out = vec![0.0; self.weights.len()];
        for (k, w) in self.weights.iter().enumerate() {
            let dst = f(self.spec.unflat(k));
            out[self.spec.flat(dst)] = *w;
        }
        Self {
            spec: self.spec,
            weights: out,
        }
    }

    /// Pushes every cell's weight through `steps` iterations of the map.
    pub fn evolve(&self, steps: usize, direction: Direction) -> Self {
        let spec = self.spec;
        // Compose once per cell instead of re-scattering the whole grid per step.
        self.permuted(|mut c| {
            for _ in 0..steps {
                c = step(c, spec, direction);
            }
            c
        })
    }

    pub fn momentum_negated(&self) -> Self {
        let spec = self.spec;
        self.permuted(|c| momentum_negate(c, spec))
    }

    pub fn with_error(&self, error: &ErrorSpec) -> Result<Self> {
        error.validate(self.spec)?;
        let spec = self.spec;
        Ok(self.permuted(|c| error.apply(c, spec)))
    }
}

pub fn evolve_density(grid: &DensityGrid, steps: usize, direction: Direction) -> DensityGrid {
    grid.evolve(steps, direction)
}

pub fn apply_classical_error(grid: &DensityGrid, error: &ErrorSpec) -> Result<DensityGrid> {
    grid.with_error(error)
}

/// `(sum_ij sqrt(a_ij b_ij))^2`, summed in flat-index order.
pub fn bhattacharyya_fidelity(a: &DensityGrid, b: &DensityGrid) -> Result<f64> {
    if a.spec != b.spec {
        return Err(Error::SpecMismatch {
            left: a.spec.size(),
            right: b.spec.size(),
        });
    }
    let bc: f64 = a
        .weights
        .iter()
        .zip(&b.weights)
        .map(|(x, y)| (x * y).sqrt())
        .sum();
    Ok((bc * bc).clamp(0.0, 1.0))
}

/// Iterations for an initial error `err` to be stretched to order one: `ln(1/err)/h`.
pub fn divergence_time(err: f64) -> Result<f64> {
    if !(err > 0.0 && err < 1.0) {
        return Err(Error::Domain(format!("error size {err} not in (0, 1)")));
    }
    Ok((1.0 / err).ln() / ks_entropy())
}

/// `t_E = ln N / h`.
pub fn ehrenfest_time(spec: LatticeSpec) -> f64 {
    (spec.size() as f64).ln() / ks_entropy()
}

/// Euclidean distance on the torus, in cells.
pub fn torus_distance(a: CellIndex, b: CellIndex, spec: LatticeSpec) -> f64 {
    let n = spec.size();
    let axis = |p: usize, q: usize| {
        let d = p.abs_diff(q);
        d.min(n - d) as f64
    };
    axis(a.i, b.i).hypot(axis(a.j, b.j))
}

/// First iteration at which two orbits, started at `start` and `start + offset`,
/// are at least `threshold` cells apart. `None` if not reached by `t_max`.
pub fn separation_time(
    start: CellIndex,
    offset: (isize, isize),
    threshold: f64,
    spec: LatticeSpec,
    t_max: usize,
) -> Option<usize> {
    let n = spec.size() as isize;
    let mut a = start;
    let mut b = CellIndex {
        i: (start.i as isize + offset.0).rem_euclid(n) as usize,
        j: (start.j as isize + offset.1).rem_euclid(n) as usize,
    };
    for t in 0..=t_max {
        if torus_distance(a, b, spec) >= threshold {
            return Some(t);
        }
        a = cat_step(a, spec);
        b = cat_step(b, spec);
    }
    None
}
