//! Unitary eigenphase noise.
//!
//! Every gate acts nontrivially on a two-dimensional block: the target qubit
//! restricted to the subspace where all controls are 1. A noisy application
//! diagonalizes that block, `B = sum_k lambda_k v_k v_k^dagger`, and replaces
//! it by `sum_k lambda_k exp(i eta_k) v_k v_k^dagger` with `eta_1, eta_2`
//! drawn independently and uniformly from `(-eps, eps)`. The identity part
//! outside the block is left untouched.
//!
//! Eigenpair order, which fixes which draw goes where:
//!
//! - NOT / CNOT / TOFFOLI: `(+1, |+>)`, then `(-1, |->)`.
//! - HADAMARD: `(+1, (cos pi/8, sin pi/8))`, then `(-1, (-sin pi/8, cos pi/8))`.
//! - PHASE / CPHASE: `(1, |0>)`, then `(exp(i theta), |1>)`.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_8};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::circuit::{Gate, GateKind};
use crate::{Error, Result};

/// Row-major 2x2 complex matrix acting on `(|0>, |1>)` of the target qubit.
pub type Block = [[Complex64; 2]; 2];

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Seeded stream of phase kicks. Two draws per noisy gate application.
#[derive(Clone, Debug)]
pub struct NoiseModel {
    epsilon: f64,
    seed: u64,
    rng: ChaCha8Rng,
    draws: u64,
}

impl NoiseModel {
    pub fn new(epsilon: f64, seed: u64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(Error::Domain(format!("noise amplitude {epsilon}")));
        }
        Ok(Self {
            epsilon,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            draws: 0,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of kicks drawn so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }

    /// With zero amplitude no kicks are drawn and gates stay exact.
    pub fn is_exact(&self) -> bool {
        self.epsilon == 0.0
    }

    /// Next `(eta_1, eta_2)` pair.
    pub fn draw_kicks(&mut self) -> (f64, f64) {
        let eps = self.epsilon;
        let e1 = self.rng.random_range(-eps..eps);
        let e2 = self.rng.random_range(-eps..eps);
        self.draws += 2;
        (e1, e2)
    }
}

type Eigenpair = (Complex64, [Complex64; 2]);

fn spectral(gate: &Gate) -> [Eigenpair; 2] {
    let r = |v: f64| Complex64::new(v, 0.0);
    match gate.kind() {
        GateKind::Not | GateKind::Cnot | GateKind::Toffoli => {
            let s = FRAC_1_SQRT_2;
            [(ONE, [r(s), r(s)]), (-ONE, [r(s), r(-s)])]
        }
        GateKind::Hadamard => {
            let (s, c) = FRAC_PI_8.sin_cos();
            [(ONE, [r(c), r(s)]), (-ONE, [r(-s), r(c)])]
        }
        GateKind::Phase | GateKind::CPhase => {
            let theta = gate.theta().expect("phase gates carry an angle");
            [(ONE, [ONE, ZERO]), (Complex64::cis(theta), [ZERO, ONE])]
        }
    }
}

fn assemble(pairs: &[Eigenpair; 2], kicks: [f64; 2]) -> Block {
    let mut m = [[ZERO; 2]; 2];
    for ((lambda, v), eta) in pairs.iter().zip(kicks) {
        let l = lambda * Complex64::cis(eta);
        for (r, row) in m.iter_mut().enumerate() {
            for (c, entry) in row.iter_mut().enumerate() {
                *entry += l * v[r] * v[c].conj();
            }
        }
    }
    m
}

/// The gate's exact action on its active block.
pub fn ideal_block(gate: &Gate) -> Block {
    let s = FRAC_1_SQRT_2;
    let r = |v: f64| Complex64::new(v, 0.0);
    match *gate {
        Gate::Not(_) | Gate::Cnot { .. } | Gate::Toffoli { .. } => [[ZERO, ONE], [ONE, ZERO]],
        Gate::Hadamard(_) => [[r(s), r(s)], [r(s), r(-s)]],
        Gate::Phase { theta, .. } | Gate::CPhase { theta, .. } => {
            [[ONE, ZERO], [ZERO, Complex64::cis(theta)]]
        }
    }
}

/// Active block with eigenphases kicked by `eta1` and `eta2`.
pub fn perturbed_block(gate: &Gate, eta1: f64, eta2: f64) -> Block {
    assemble(&spectral(gate), [eta1, eta2])
}
