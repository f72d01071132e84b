//! Dense state-vector simulation over the `3 n_q - 1` qubit register.
//!
//! Basis index `x + N*y + N^2*c`: bit `q` of the index is qubit `q`.
//! Gate kernels touch disjoint amplitude pairs and may run in parallel;
//! reductions (norms, inner products, marginals) are always summed
//! sequentially in ascending index order so results do not depend on the
//! thread count.

use num_complex::Complex64;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;

use crate::circuit::{Circuit, Gate, GateKind, Register, RegisterLayout};
use crate::classical::{CellIndex, DensityGrid, LatticeSpec, NORM_TOLERANCE};
use crate::noise::{self, Block, NoiseModel};
use crate::{Error, Result};

/// Hard ceiling on the register size (16 GiB of amplitudes).
pub const MAX_STATE_QUBITS: usize = 30;

/// Gates on smaller states run on the calling thread.
const PAR_MIN_LEN: usize = 1 << 16;
/// Minimum number of independent spans worth handing to the thread pool.
const PAR_MIN_SPANS: usize = 64;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    spec: LatticeSpec,
    amps: Vec<Complex64>,
}

impl StateVector {
    /// `|0...0>`.
    pub fn zero(spec: LatticeSpec) -> Result<Self> {
        let qubits = spec.qubit_count();
        if qubits > MAX_STATE_QUBITS {
            return Err(Error::StateTooLarge {
                qubits,
                limit: MAX_STATE_QUBITS,
            });
        }
        let mut amps = vec![ZERO; 1 << qubits];
        amps[0] = Complex64::new(1.0, 0.0);
        Ok(Self { spec, amps })
    }

    pub fn init_basis(x: usize, y: usize, spec: LatticeSpec) -> Result<Self> {
        let cell = spec.check(CellIndex::new(x, y))?;
        let mut s = Self::zero(spec)?;
        s.amps[0] = ZERO;
        s.amps[spec.flat(cell)] = Complex64::new(1.0, 0.0);
        Ok(s)
    }

    /// Amplitudes `sqrt(rho_ij)` with zero phase on the carry-free slice.
    pub fn init_from_density(grid: &DensityGrid) -> Result<Self> {
        let total = grid.total();
        if (total - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::NotNormalized(total));
        }
        let mut s = Self::zero(grid.spec())?;
        for (a, w) in s.amps.iter_mut().zip(grid.weights()) {
            *a = Complex64::new(w.sqrt(), 0.0);
        }
        Ok(s)
    }

    pub fn from_amplitudes(spec: LatticeSpec, amps: Vec<Complex64>) -> Result<Self> {
        let qubits = spec.qubit_count();
        if qubits > MAX_STATE_QUBITS || amps.len() != 1 << qubits {
            return Err(Error::Format(format!(
                "{} amplitudes for {qubits} qubits",
                amps.len()
            )));
        }
        let s = Self { spec, amps };
        let norm = s.norm_sqr();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::NotNormalized(norm));
        }
        Ok(s)
    }

    #[inline]
    pub fn spec(&self) -> LatticeSpec {
        self.spec
    }

    #[inline]
    pub fn qubit_count(&self) -> usize {
        self.spec.qubit_count()
    }

    #[inline]
    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn layout(&self) -> RegisterLayout {
        RegisterLayout::for_lattice(self.spec)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(Complex64::norm_sqr).sum()
    }

    /// Applies one gate. With a noise model of nonzero amplitude, two kicks
    /// are drawn before the amplitudes are touched.
    pub fn apply_gate(&mut self, gate: &Gate, noise: Option<&mut NoiseModel>) -> Result<()> {
        gate.validate(self.qubit_count())?;
        let kernel = Kernel::prepare(gate, noise);
        kernel.run(&mut self.amps, gate.target().0, gate.control_mask(), true);
        Ok(())
    }

    /// Applies every gate in order; noise draws follow the same order.
    ///
    /// Large registers are processed in cache-sized blocks: runs of gates that
    /// together touch at most `BLOCK_QUBITS` qubits are applied to one block
    /// before moving to the next. The arithmetic per amplitude is the same as
    /// gate-by-gate application, so results are bitwise identical.
    pub fn apply_circuit(&mut self, circuit: &Circuit, noise: Option<&mut NoiseModel>) -> Result<()> {
        self.apply_circuit_blocked(circuit, noise, BLOCK_QUBITS)
    }

    fn apply_circuit_blocked(
        &mut self,
        circuit: &Circuit,
        mut noise: Option<&mut NoiseModel>,
        block_qubits: usize,
    ) -> Result<()> {
        let qubits = self.qubit_count();
        if circuit.qubit_count() != qubits {
            return Err(Error::QubitCountMismatch {
                expected: qubits,
                found: circuit.qubit_count(),
            });
        }
        for gate in circuit.gates() {
            gate.validate(qubits)?;
        }
        if qubits <= block_qubits {
            for gate in circuit.gates() {
                let kernel = Kernel::prepare(gate, noise.as_deref_mut());
                kernel.run(&mut self.amps, gate.target().0, gate.control_mask(), true);
            }
            return Ok(());
        }
        let mut buf = vec![ZERO; 1 << block_qubits];
        let gates = circuit.gates();
        let mut start = 0;
        while start < gates.len() {
            let mut touched = 0usize;
            let mut end = start;
            while end < gates.len() {
                let m = touched | gate_mask(&gates[end]);
                if m.count_ones() as usize > block_qubits {
                    break;
                }
                touched = m;
                end += 1;
            }
            let group: Vec<_> = gates[start..end]
                .iter()
                .map(|g| (Kernel::prepare(g, noise.as_deref_mut()), g))
                .collect();
            let inner = fill_low_bits(touched, block_qubits);
            let local: Vec<_> = group
                .iter()
                .map(|(k, g)| (*k, compress(1 << g.target().0, inner).trailing_zeros() as usize, compress(g.control_mask(), inner)))
                .collect();
            run_blocked(&mut self.amps, &mut buf, inner, qubits, &local);
            start = end;
        }
        Ok(())
    }

    /// Moves the amplitude at `(x, y, c)` to `(perm(x, y), c)`.
    pub fn apply_lattice_permutation(&mut self, perm: impl Fn(CellIndex) -> CellIndex) -> Result<()> {
        let spec = self.spec;
        let cells = spec.cells();
        let mut table = Vec::with_capacity(cells);
        let mut seen = vec![false; cells];
        for k in 0..cells {
            let dst = spec.check(perm(spec.unflat(k)))?;
            let d = spec.flat(dst);
            if std::mem::replace(&mut seen[d], true) {
                return Err(Error::NotBijective);
            }
            table.push(d);
        }
        let mut out = vec![ZERO; self.amps.len()];
        for (src_slice, dst_slice) in self.amps.chunks(cells).zip(out.chunks_mut(cells)) {
            for (k, a) in src_slice.iter().enumerate() {
                dst_slice[table[k]] = *a;
            }
        }
        self.amps = out;
        Ok(())
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &StateVector) -> Result<Complex64> {
        if self.spec != other.spec {
            return Err(Error::SpecMismatch {
                left: self.spec.size(),
                right: other.spec.size(),
            });
        }
        Ok(self
            .amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    /// `|<self|other>|^2`.
    pub fn fidelity(&self, other: &StateVector) -> Result<f64> {
        Ok(self.inner(other)?.norm_sqr())
    }

    /// `rho_ij = sum_c |a(i, j, c)|^2`.
    pub fn density_xy(&self) -> DensityGrid {
        let cells = self.spec.cells();
        let mut w = vec![0.0; cells];
        for chunk in self.amps.chunks(cells) {
            for (acc, a) in w.iter_mut().zip(chunk) {
                *acc += a.norm_sqr();
            }
        }
        // Probabilities sum to the state norm; the grid keeps them as they are.
        DensityGrid::from_weights(self.spec, w).expect("a normalized state has nonzero weight")
    }

    /// Probability distribution of one register's value.
    pub fn marginal(&self, register: Register) -> Vec<f64> {
        let mut out = vec![0.0; 1 << register.width];
        for (k, a) in self.amps.iter().enumerate() {
            out[register.extract(k)] += a.norm_sqr();
        }
        out
    }

    /// `W_x`.
    pub fn marginal_x(&self) -> Vec<f64> {
        self.marginal(self.layout().x)
    }

    pub fn marginal_y(&self) -> Vec<f64> {
        self.marginal(self.layout().y)
    }

    /// Total probability with a nonzero carry register.
    pub fn carry_leakage(&self) -> f64 {
        self.amps[self.spec.cells()..]
            .iter()
            .map(Complex64::norm_sqr)
            .sum()
    }

    /// Independent measurement outcomes of `register`.
    pub fn sample_register<R: Rng + ?Sized>(&self, register: Register, shots: usize, rng: &mut R) -> Result<Vec<usize>> {
        if shots == 0 {
            return Err(Error::Domain("shots must be at least 1".into()));
        }
        let dist = WeightedIndex::new(self.marginal(register))
            .map_err(|e| Error::Domain(format!("register distribution: {e}")))?;
        Ok((0..shots).map(|_| dist.sample(rng)).collect())
    }

    /// Snapshot layout: `n_q` as u32 LE, amplitude count as u64 LE, then
    /// `re, im` pairs as f64 LE in basis-index order.
    pub fn to_snapshot_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 16 * self.amps.len());
        out.extend_from_slice(&self.spec.n_q().to_le_bytes());
        out.extend_from_slice(&(self.amps.len() as u64).to_le_bytes());
        for a in &self.amps {
            out.extend_from_slice(&a.re.to_le_bytes());
            out.extend_from_slice(&a.im.to_le_bytes());
        }
        out
    }

    pub fn from_snapshot_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Format(format!("snapshot: {msg}"));
        if bytes.len() < 12 {
            return Err(bad("truncated header"));
        }
        let n_q = u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes"));
        let count = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
        let spec = LatticeSpec::new(n_q)?;
        if spec.qubit_count() > MAX_STATE_QUBITS || count != 1 << spec.qubit_count() {
            return Err(bad("amplitude count does not match n_q"));
        }
        let body = &bytes[12..];
        if body.len() != 16 * count {
            return Err(bad("body length"));
        }
        let amps = body
            .chunks_exact(16)
            .map(|c| {
                Complex64::new(
                    f64::from_le_bytes(c[..8].try_into().expect("8 bytes")),
                    f64::from_le_bytes(c[8..].try_into().expect("8 bytes")),
                )
            })
            .collect();
        Ok(Self { spec, amps })
    }
}

pub fn fidelity(a: &StateVector, b: &StateVector) -> Result<f64> {
    a.fidelity(b)
}

/// Gate action on one target pair, with any noise kicks already drawn.
#[derive(Clone, Copy, Debug)]
enum Kernel {
    Swap,
    Hadamard,
    Phase(Complex64),
    /// Kicked bit flip `1/2 [[k1 - k2, k1 + k2], [k1 + k2, k1 - k2]]` with
    /// `k = exp(i eta)`, evaluated in the `|+>, |->` basis.
    NoisyFlip(Complex64, Complex64),
    Block(Block),
}

impl Kernel {
    fn prepare(gate: &Gate, noise: Option<&mut NoiseModel>) -> Self {
        match noise {
            Some(model) if !model.is_exact() => {
                let (e1, e2) = model.draw_kicks();
                match gate.kind() {
                    GateKind::Not | GateKind::Cnot | GateKind::Toffoli => {
                        Kernel::NoisyFlip(Complex64::cis(e1) * 0.5, Complex64::cis(e2) * 0.5)
                    }
                    _ => Kernel::Block(noise::perturbed_block(gate, e1, e2)),
                }
            }
            _ => match gate.kind() {
                GateKind::Not | GateKind::Cnot | GateKind::Toffoli => Kernel::Swap,
                GateKind::Hadamard => Kernel::Hadamard,
                GateKind::Phase | GateKind::CPhase => {
                    Kernel::Phase(Complex64::cis(gate.theta().expect("phase gates carry an angle")))
                }
            },
        }
    }

    fn run(&self, amps: &mut [Complex64], target: usize, cmask: usize, parallel: bool) {
        match *self {
            Kernel::Swap => for_each_pair(amps, target, cmask, parallel, |a, b| std::mem::swap(a, b)),
            Kernel::Hadamard => {
                let s = std::f64::consts::FRAC_1_SQRT_2;
                for_each_pair(amps, target, cmask, parallel, |a, b| {
                    let (u, v) = (*a, *b);
                    *a = (u + v) * s;
                    *b = (u - v) * s;
                });
            }
            Kernel::Phase(phase) => for_each_pair(amps, target, cmask, parallel, |_, b| *b *= phase),
            Kernel::NoisyFlip(k1, k2) => for_each_pair(amps, target, cmask, parallel, |a, b| {
                let plus = k1 * (*a + *b);
                let minus = k2 * (*a - *b);
                *a = plus - minus;
                *b = plus + minus;
            }),
            Kernel::Block([[m00, m01], [m10, m11]]) => {
                for_each_pair(amps, target, cmask, parallel, |a, b| {
                    let (u, v) = (*a, *b);
                    *a = m00 * u + m01 * v;
                    *b = m10 * u + m11 * v;
                })
            }
        }
    }
}

/// Qubits below this many fit one block in L2 (16 bytes per amplitude).
const BLOCK_QUBITS: usize = 16;

fn gate_mask(gate: &Gate) -> usize {
    gate.control_mask() | 1 << gate.target().0
}

/// Adds the lowest clear bits to `mask` until it has `count` bits set.
fn fill_low_bits(mut mask: usize, count: usize) -> usize {
    let mut bit = 0;
    while (mask.count_ones() as usize) < count {
        mask |= 1 << bit;
        bit += 1;
    }
    mask
}

/// Packs the bits of `value` selected by `mask` into the low bits.
fn compress(value: usize, mask: usize) -> usize {
    let mut out = 0;
    let mut k = 0;
    let mut m = mask;
    while m != 0 {
        let low = m & m.wrapping_neg();
        if value & low != 0 {
            out |= 1 << k;
        }
        k += 1;
        m &= m - 1;
    }
    out
}

/// Inverse of `compress`: spreads the low bits of `value` over `mask`.
fn deposit(value: usize, mask: usize) -> usize {
    let mut out = 0;
    let mut k = 0;
    let mut m = mask;
    while m != 0 {
        let low = m & m.wrapping_neg();
        if value >> k & 1 != 0 {
            out |= low;
        }
        k += 1;
        m &= m - 1;
    }
    out
}

/// Gathers each block spanned by the `inner` qubits into `buf`, applies
/// the local kernels and scatters it back.
fn run_blocked(
    amps: &mut [Complex64],
    buf: &mut [Complex64],
    inner: usize,
    qubits: usize,
    kernels: &[(Kernel, usize, usize)],
) {
    let seg_bits = inner.trailing_ones() as usize;
    let seg = 1usize << seg_bits;
    let inner_bits = inner.count_ones() as usize;
    let offsets: Vec<usize> = (0..1usize << (inner_bits - seg_bits))
        .map(|h| deposit(h << seg_bits, inner))
        .collect();
    let outer = !inner & ((1 << qubits) - 1);
    for o in 0..1usize << (qubits - inner_bits) {
        let base = deposit(o, outer);
        for (dst, &off) in buf.chunks_exact_mut(seg).zip(&offsets) {
            dst.copy_from_slice(&amps[base + off..base + off + seg]);
        }
        for &(kernel, target, cmask) in kernels {
            kernel.run(buf, target, cmask, false);
        }
        for (src, &off) in buf.chunks_exact(seg).zip(&offsets) {
            amps[base + off..base + off + seg].copy_from_slice(src);
        }
    }
}

/// Calls `f(|..0..>, |..1..>)` for every target pair whose controls are all set.
///
/// The index space is cut into spans of `2^(highest gate qubit + 1)`
/// amplitudes; every pair lies inside one span, so spans are processed
/// independently (in parallel when there are enough of them).
fn for_each_pair<F>(amps: &mut [Complex64], target: usize, cmask: usize, parallel: bool, f: F)
where
    F: Fn(&mut Complex64, &mut Complex64) + Sync + Send,
{
    let tbit = 1usize << target;
    let fixed = cmask | tbit;
    let span = (fixed + 1).next_power_of_two().min(amps.len());
    let spans = amps.len() / span;
    if parallel && amps.len() >= PAR_MIN_LEN && spans >= PAR_MIN_SPANS {
        amps.par_chunks_mut(span)
            .for_each(|chunk| pairs_in_span(chunk, tbit, cmask, &f));
    } else {
        amps.chunks_mut(span)
            .for_each(|chunk| pairs_in_span(chunk, tbit, cmask, &f));
    }
}

#[inline(always)]
fn pairs_in_span<F>(chunk: &mut [Complex64], tbit: usize, cmask: usize, f: &F)
where
    F: Fn(&mut Complex64, &mut Complex64),
{
    let fixed = cmask | tbit;
    // Free bits below the lowest gate qubit form contiguous runs.
    let run = fixed & fixed.wrapping_neg();
    // `i` walks the indices with all gate-qubit bits clear: set the fixed
    // bits, add one, clear them again.
    let mut i = 0usize;
    if run >= 4 {
        while i < chunk.len() {
            let i0 = i | cmask;
            let (lo, hi) = chunk.split_at_mut(i0 | tbit);
            for (a, b) in lo[i0..i0 + run].iter_mut().zip(&mut hi[..run]) {
                f(a, b);
            }
            i = ((i | fixed | (run - 1)) + 1) & !fixed;
        }
    } else {
        while i < chunk.len() {
            let i0 = i | cmask;
            let (lo, hi) = chunk.split_at_mut(i0 | tbit);
            f(&mut lo[i0], &mut hi[0]);
            i = ((i | fixed) + 1) & !fixed;
        }
    }
}
