//! Gate sequences for the quantum cat map.
//!
//! Qubit layout for a lattice with `n_q` bits per axis:
//!
//! | register | qubits                  | meaning                      |
//! |----------|-------------------------|------------------------------|
//! | x        | `0 .. n_q`              | position, qubit 0 is the LSB |
//! | y        | `n_q .. 2 n_q`          | momentum, qubit `n_q` is LSB |
//! | carry    | `2 n_q .. 3 n_q - 1`    | carries `c_1 .. c_{n_q-1}`   |

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::classical::{self, CellIndex, LatticeSpec};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Qubit(pub usize);

impl fmt::Display for Qubit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Gate {
    Not(Qubit),
    Hadamard(Qubit),
    Cnot { control: Qubit, target: Qubit },
    Toffoli { controls: [Qubit; 2], target: Qubit },
    Phase { theta: f64, target: Qubit },
    CPhase { theta: f64, control: Qubit, target: Qubit },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GateKind {
    Not,
    Hadamard,
    Cnot,
    Toffoli,
    Phase,
    CPhase,
}

impl GateKind {
    pub fn name(self) -> &'static str {
        match self {
            GateKind::Not => "NOT",
            GateKind::Hadamard => "HADAMARD",
            GateKind::Cnot => "CNOT",
            GateKind::Toffoli => "TOFFOLI",
            GateKind::Phase => "PHASE",
            GateKind::CPhase => "CPHASE",
        }
    }
}

impl Gate {
    pub fn cnot(control: usize, target: usize) -> Self {
        Gate::Cnot {
            control: Qubit(control),
            target: Qubit(target),
        }
    }

    pub fn toffoli(c1: usize, c2: usize, target: usize) -> Self {
        Gate::Toffoli {
            controls: [Qubit(c1), Qubit(c2)],
            target: Qubit(target),
        }
    }

    pub fn kind(&self) -> GateKind {
        match self {
            Gate::Not(_) => GateKind::Not,
            Gate::Hadamard(_) => GateKind::Hadamard,
            Gate::Cnot { .. } => GateKind::Cnot,
            Gate::Toffoli { .. } => GateKind::Toffoli,
            Gate::Phase { .. } => GateKind::Phase,
            Gate::CPhase { .. } => GateKind::CPhase,
        }
    }

    pub fn target(&self) -> Qubit {
        match *self {
            Gate::Not(t) | Gate::Hadamard(t) => t,
            Gate::Cnot { target, .. }
            | Gate::Toffoli { target, .. }
            | Gate::Phase { target, .. }
            | Gate::CPhase { target, .. } => target,
        }
    }

    pub fn controls(&self) -> &[Qubit] {
        match self {
            Gate::Cnot { control, .. } | Gate::CPhase { control, .. } => std::slice::from_ref(control),
            Gate::Toffoli { controls, .. } => controls,
            _ => &[],
        }
    }

    /// Rotation angle for the phase kinds.
    pub fn theta(&self) -> Option<f64> {
        match *self {
            Gate::Phase { theta, .. } | Gate::CPhase { theta, .. } => Some(theta),
            _ => None,
        }
    }

    /// Bitmask over the control qubits.
    pub fn control_mask(&self) -> usize {
        self.controls().iter().fold(0, |m, q| m | (1 << q.0))
    }

    pub fn inverse(&self) -> Self {
        match *self {
            Gate::Phase { theta, target } => Gate::Phase {
                theta: -theta,
                target,
            },
            Gate::CPhase {
                theta,
                control,
                target,
            } => Gate::CPhase {
                theta: -theta,
                control,
                target,
            },
            g => g,
        }
    }

    /// Action on a computational basis index, for the permutation kinds only.
    #[inline]
    pub fn apply_to_basis(&self, index: usize) -> Option<usize> {
        match self.kind() {
            GateKind::Not | GateKind::Cnot | GateKind::Toffoli => {
                let cm = self.control_mask();
                if index & cm == cm {
                    Some(index ^ (1 << self.target().0))
                } else {
                    Some(index)
                }
            }
            _ => None,
        }
    }

    pub(crate) fn validate(&self, qubit_count: usize) -> Result<()> {
        let t = self.target();
        let ctl = self.controls();
        let invalid = |reason| Error::InvalidGate {
            gate: self.to_string(),
            reason,
        };
        if t.0 >= qubit_count || ctl.iter().any(|c| c.0 >= qubit_count) {
            return Err(invalid("qubit out of range"));
        }
        if ctl.contains(&t) || (ctl.len() == 2 && ctl[0] == ctl[1]) {
            return Err(invalid("repeated qubit"));
        }
        if let Some(theta) = self.theta() {
            if !theta.is_finite() {
                return Err(invalid("non-finite angle"));
            }
        }
        Ok(())
    }
}

/// `KIND q_a q_b q_c [theta]`, controls first, target last.
impl fmt::Display for Gate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind().name())?;
        for q in self.controls() {
            write!(f, " {q}")?;
        }
        write!(f, " {}", self.target())?;
        if let Some(theta) = self.theta() {
            write!(f, " {theta:.17e}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Circuit {
    qubit_count: usize,
    gates: Vec<Gate>,
}

impl Circuit {
    pub fn new(qubit_count: usize) -> Self {
        Self {
            qubit_count,
            gates: Vec::new(),
        }
    }

    pub fn qubit_count(&self) -> usize {
        self.qubit_count
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn len(&self) -> usize {
        self.gates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }

    pub fn push(&mut self, gate: Gate) -> Result<()> {
        gate.validate(self.qubit_count)?;
        self.gates.push(gate);
        Ok(())
    }

    /// Appends all gates of `other`, which must act on the same qubit count.
    pub fn append(&mut self, other: &Circuit) -> Result<()> {
        if other.qubit_count != self.qubit_count {
            return Err(Error::QubitCountMismatch {
                expected: self.qubit_count,
                found: other.qubit_count,
            });
        }
        self.gates.extend_from_slice(&other.gates);
        Ok(())
    }

    /// Reversed sequence of inverted gates.
    pub fn inverse(&self) -> Self {
        Self {
            qubit_count: self.qubit_count,
            gates: self.gates.iter().rev().map(Gate::inverse).collect(),
        }
    }

    /// Removes and returns the gate at `index`.
    pub fn remove(&mut self, index: usize) -> Gate {
        self.gates.remove(index)
    }

    pub fn count(&self) -> GateCount {
        count_gates(self)
    }

    /// Runs a permutation-only circuit on one basis index.
    /// Returns `None` if the circuit contains a non-permutation gate.
    pub fn apply_to_basis(&self, index: usize) -> Option<usize> {
        self.gates
            .iter()
            .try_fold(index, |idx, g| g.apply_to_basis(idx))
    }

    /// One gate per line.
    pub fn to_listing(&self) -> String {
        let mut out = String::new();
        for g in &self.gates {
            out.push_str(&g.to_string());
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateCount {
    pub not: usize,
    pub hadamard: usize,
    pub cnot: usize,
    pub toffoli: usize,
    pub phase: usize,
    pub cphase: usize,
    pub total: usize,
}

pub fn count_gates(circuit: &Circuit) -> GateCount {
    let mut c = GateCount::default();
    for g in circuit.gates() {
        match g.kind() {
            GateKind::Not => c.not += 1,
            GateKind::Hadamard => c.hadamard += 1,
            GateKind::Cnot => c.cnot += 1,
            GateKind::Toffoli => c.toffoli += 1,
            GateKind::Phase => c.phase += 1,
            GateKind::CPhase => c.cphase += 1,
        }
        c.total += 1;
    }
    c
}

/// Contiguous block of qubits, least significant first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Register {
    pub start: usize,
    pub width: usize,
}

impl Register {
    pub const fn new(start: usize, width: usize) -> Self {
        Self { start, width }
    }

    #[inline]
    pub fn bit(&self, k: usize) -> usize {
        debug_assert!(k < self.width);
        self.start + k
    }

    fn end(&self) -> usize {
        self.start + self.width
    }

    fn overlaps(&self, other: &Register) -> bool {
        self.start < other.end() && other.start < self.end()
    }

    /// Reads the register value out of a basis index.
    #[inline]
    pub fn extract(&self, index: usize) -> usize {
        (index >> self.start) & ((1 << self.width) - 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterLayout {
    pub x: Register,
    pub y: Register,
    pub carry: Register,
}

impl RegisterLayout {
    pub fn for_lattice(spec: LatticeSpec) -> Self {
        let n = spec.n_q() as usize;
        Self {
            x: Register::new(0, n),
            y: Register::new(n, n),
            carry: Register::new(2 * n, n - 1),
        }
    }

    pub fn qubit_count(&self) -> usize {
        self.x.width + self.y.width + self.carry.width
    }
}

/// Ripple-carry adder `dst := (dst + src) mod 2^n`, leaving `src` and the
/// carry register unchanged. Uses `4n - 6` Toffoli and `4n - 5` CNOT gates
/// for `n >= 2`, a single CNOT for `n = 1`.
pub fn build_mod_adder(
    qubit_count: usize,
    src: Register,
    dst: Register,
    carry: Register,
) -> Result<Circuit> {
    let n = src.width;
    if n == 0 || dst.width != n || carry.width + 1 != n {
        return Err(Error::InvalidRegisters(format!(
            "widths src={}, dst={}, carry={} (need n, n, n-1 with n >= 1)",
            src.width, dst.width, carry.width
        )));
    }
    if src.overlaps(&dst) || src.overlaps(&carry) || dst.overlaps(&carry) {
        return Err(Error::InvalidRegisters("registers overlap".into()));
    }
    let a = |k| src.bit(k);
    let b = |k| dst.bit(k);
    // c(k) is the carry into bit k, 1 <= k <= n-1.
    let c = |k: usize| carry.bit(k - 1);

    let mut circ = Circuit::new(qubit_count);
    if n == 1 {
        circ.push(Gate::cnot(a(0), b(0)))?;
        return Ok(circ);
    }
    circ.push(Gate::toffoli(a(0), b(0), c(1)))?;
    for i in 1..n - 1 {
        circ.push(Gate::toffoli(a(i), b(i), c(i + 1)))?;
        circ.push(Gate::cnot(a(i), b(i)))?;
        circ.push(Gate::toffoli(c(i), b(i), c(i + 1)))?;
    }
    // Top bit: sum only, the outgoing carry is dropped (mod 2^n).
    circ.push(Gate::cnot(a(n - 1), b(n - 1)))?;
    circ.push(Gate::cnot(c(n - 1), b(n - 1)))?;
    for i in (1..n - 1).rev() {
        circ.push(Gate::toffoli(c(i), b(i), c(i + 1)))?;
        circ.push(Gate::cnot(a(i), b(i)))?;
        circ.push(Gate::toffoli(a(i), b(i), c(i + 1)))?;
        circ.push(Gate::cnot(a(i), b(i)))?;
        circ.push(Gate::cnot(c(i), b(i)))?;
    }
    circ.push(Gate::toffoli(a(0), b(0), c(1)))?;
    circ.push(Gate::cnot(a(0), b(0)))?;
    Ok(circ)
}

/// One map iteration: `y += x`, then `x += y`.
pub fn build_cat_iteration(spec: LatticeSpec) -> Circuit {
    let l = RegisterLayout::for_lattice(spec);
    let q = l.qubit_count();
    let mut circ = build_mod_adder(q, l.x, l.y, l.carry).expect("layout registers are valid");
    circ.append(&build_mod_adder(q, l.y, l.x, l.carry).expect("layout registers are valid"))
        .expect("same qubit count");
    circ
}

/// Reversed factor order: `x += y`, then `y += x`.
pub fn build_cat_iteration_reversed(spec: LatticeSpec) -> Circuit {
    let l = RegisterLayout::for_lattice(spec);
    let q = l.qubit_count();
    let mut circ = build_mod_adder(q, l.y, l.x, l.carry).expect("layout registers are valid");
    circ.append(&build_mod_adder(q, l.x, l.y, l.carry).expect("layout registers are valid"))
        .expect("same qubit count");
    circ
}

pub fn build_iteration(spec: LatticeSpec, direction: classical::Direction) -> Circuit {
    match direction {
        classical::Direction::Forward => build_cat_iteration(spec),
        classical::Direction::Reversed => build_cat_iteration_reversed(spec),
    }
}

/// Prepares the line `x = N/2` with uniform momentum from `|0...0>`:
/// one NOT on the top x qubit and a Hadamard on every y qubit.
pub fn build_line_prep(spec: LatticeSpec) -> Circuit {
    let l = RegisterLayout::for_lattice(spec);
    let mut circ = Circuit::new(l.qubit_count());
    circ.push(Gate::Not(Qubit(l.x.bit(l.x.width - 1))))
        .expect("valid qubit");
    for k in 0..l.y.width {
        circ.push(Gate::Hadamard(Qubit(l.y.bit(k)))).expect("valid qubit");
    }
    circ
}

/// QFT on `register` without the final swaps: register qubit `k` ends up
/// holding output frequency bit `width - 1 - k`. Use [`bit_reverse`] to map
/// the register value read after the transform back to a frequency.
///
/// Convention: `|x> -> N^{-1/2} sum_f exp(+2 pi i x f / N) |f>`.
pub fn build_qft(qubit_count: usize, register: Register) -> Result<Circuit> {
    if register.end() > qubit_count || register.width == 0 {
        return Err(Error::InvalidRegisters(format!(
            "register {register:?} does not fit {qubit_count} qubits"
        )));
    }
    let mut circ = Circuit::new(qubit_count);
    for k in (0..register.width).rev() {
        circ.push(Gate::Hadamard(Qubit(register.bit(k))))?;
        for m in 1..=k {
            circ.push(Gate::CPhase {
                theta: PI / (1u64 << m) as f64,
                control: Qubit(register.bit(k - m)),
                target: Qubit(register.bit(k)),
            })?;
        }
    }
    Ok(circ)
}

#[inline]
pub fn bit_reverse(value: usize, width: usize) -> usize {
    if width == 0 {
        return 0;
    }
    value.reverse_bits() >> (usize::BITS as usize - width)
}

/// Outcome of an exhaustive adder check.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdderReport {
    pub width: usize,
    pub checked: usize,
    pub passed: usize,
    /// First failing `(a, b)`, if any.
    pub counterexample: Option<(usize, usize)>,
}

impl AdderReport {
    pub fn ok(&self) -> bool {
        self.counterexample.is_none() && self.passed == self.checked
    }
}

/// Exhaustive check of the standard `n`-bit adder on all `4^n` inputs.
pub fn verify_adder(n: usize) -> Result<AdderReport> {
    if n == 0 || n > 8 {
        return Err(Error::Domain(format!("adder width {n} not in 1..=8")));
    }
    let spec = LatticeSpec::new(n as u32)?;
    let l = RegisterLayout::for_lattice(spec);
    let circ = build_mod_adder(l.qubit_count(), l.x, l.y, l.carry)?;
    Ok(verify_adder_circuit(&circ, &l))
}

/// Checks `|a>|b>|0> -> |a>|(a+b) mod 2^n>|0>` with `a` in `layout.x` and `b`
/// in `layout.y`, by classical basis-state propagation.
pub fn verify_adder_circuit(circuit: &Circuit, layout: &RegisterLayout) -> AdderReport {
    let n = layout.x.width;
    let size = 1usize << n;
    let mut report = AdderReport {
        width: n,
        checked: 0,
        passed: 0,
        counterexample: None,
    };
    for a in 0..size {
        for b in 0..size {
            report.checked += 1;
            let input = (a << layout.x.start) | (b << layout.y.start);
            let expected = (a << layout.x.start) | (((a + b) % size) << layout.y.start);
            if circuit.apply_to_basis(input) == Some(expected) {
                report.passed += 1;
            } else if report.counterexample.is_none() {
                report.counterexample = Some((a, b));
            }
        }
    }
    report
}

/// Result of comparing the iteration circuits with the classical map.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapReport {
    pub n_q: u32,
    pub checked: usize,
    pub forward_mismatch: Option<CellIndex>,
    pub reversed_mismatch: Option<CellIndex>,
}

impl MapReport {
    pub fn ok(&self) -> bool {
        self.forward_mismatch.is_none() && self.reversed_mismatch.is_none()
    }
}

/// Exhaustive comparison of both iteration circuits against the classical
/// map on every basis state `|x>|y>|0>`.
pub fn verify_map(spec: LatticeSpec) -> MapReport {
    let fwd = build_cat_iteration(spec);
    let rev = build_cat_iteration_reversed(spec);
    let mismatch = |circ: &Circuit, f: fn(CellIndex, LatticeSpec) -> CellIndex| {
        (0..spec.cells()).map(|k| spec.unflat(k)).find(|&cell| {
            let want = spec.flat(f(cell, spec));
            circ.apply_to_basis(spec.flat(cell)) != Some(want)
        })
    };
    MapReport {
        n_q: spec.n_q(),
        checked: spec.cells(),
        forward_mismatch: mismatch(&fwd, classical::cat_step),
        reversed_mismatch: mismatch(&rev, classical::cat_step_reversed),
    }
}
