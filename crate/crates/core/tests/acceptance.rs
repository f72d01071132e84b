//! Acceptance criteria, one test each. Every check prints a PASS/FAIL line;
//! tolerances are pinned here.
//!
//! Several checks run hundreds of iterations on a 20-qubit register, so the
//! full suite takes minutes.

use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

use catmap::circuit::{self, bit_reverse, build_cat_iteration, build_cat_iteration_reversed, build_qft};
use catmap::classical::{self, ShiftAxes};
use catmap::experiments::{
    self, DecayModel, EchoConfig, FidelitySeries, Initial, NoisyRun, TfScanConfig, TfScanResult,
};
use catmap::io;
use catmap::{DensityGrid, Direction, ErrorSpec, LatticeSpec, NoiseModel, StateVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Report {
    criterion: u32,
    failures: Vec<String>,
}

impl Report {
    fn new(criterion: u32) -> Self {
        Self {
            criterion,
            failures: Vec::new(),
        }
    }

    fn check(&mut self, name: &str, ok: bool, detail: impl AsRef<str>) {
        let tag = if ok { "PASS" } else { "FAIL" };
        println!("criterion {:>2} [{tag}] {name}: {}", self.criterion, detail.as_ref());
        if !ok {
            self.failures.push(name.to_owned());
        }
    }

    fn finish(self) {
        assert!(
            self.failures.is_empty(),
            "criterion {} failed: {}",
            self.criterion,
            self.failures.join(", ")
        );
    }
}

fn spec(n_q: u32) -> LatticeSpec {
    LatticeSpec::new(n_q).unwrap()
}

fn smile() -> DensityGrid {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("assets/smile.pgm");
    io::read_density_pgm(&path, spec(7)).unwrap()
}

const SCAN_NQ: [u32; 3] = [4, 5, 6];
const SCAN_EPS: [f64; 3] = [0.01, 0.03, 0.1];
const SCAN_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

/// The scaling scan, shared by the scaling and non-return criteria.
fn scan() -> &'static (TfScanResult, f64) {
    static SCAN: OnceLock<(TfScanResult, f64)> = OnceLock::new();
    SCAN.get_or_init(|| {
        let cfg = TfScanConfig::new(SCAN_NQ.to_vec(), SCAN_EPS.to_vec(), SCAN_SEEDS.to_vec());
        let t0 = Instant::now();
        let result = experiments::tf_scan(&cfg, &Initial::Line).unwrap();
        (result, t0.elapsed().as_secs_f64())
    })
}

#[test]
fn criterion_01_gate_counts() {
    let mut r = Report::new(1);
    let t0 = Instant::now();
    for n_q in 3..=10u32 {
        let n = n_q as usize;
        let count = build_cat_iteration(spec(n_q)).count();
        r.check(
            &format!("counts n_q={n_q}"),
            count.toffoli == 8 * n - 12 && count.cnot == 8 * n - 10 && count.total == 16 * n - 22,
            format!("toffoli={} cnot={} total={}", count.toffoli, count.cnot, count.total),
        );
    }
    let s4 = spec(4);
    let c4 = build_cat_iteration(s4).count();
    r.check(
        "n_q=4 register and gates",
        s4.qubit_count() == 11 && c4.total == 42,
        format!("qubits={} total={}", s4.qubit_count(), c4.total),
    );
    let s20 = spec(20);
    r.check("n_q=20 qubits", s20.qubit_count() == 59, format!("qubits={}", s20.qubit_count()));
    let secs = t0.elapsed().as_secs_f64();
    r.check("runtime < 1 s", secs < 1.0, format!("{secs:.3} s"));
    r.finish();
}

#[test]
fn criterion_02_adder_oracle() {
    let mut r = Report::new(2);
    let t0 = Instant::now();
    for n in 1..=6 {
        let rep = circuit::verify_adder(n).unwrap();
        r.check(
            &format!("adder n={n}"),
            rep.ok() && rep.checked == 1 << (2 * n),
            format!("{}/{} inputs", rep.passed, rep.checked),
        );
    }
    let secs = t0.elapsed().as_secs_f64();
    r.check("runtime < 30 s", secs < 30.0, format!("{secs:.2} s"));
    r.finish();
}

#[test]
fn criterion_03_map_oracle() {
    let mut r = Report::new(3);
    let t0 = Instant::now();
    for n_q in 2..=6u32 {
        let s = spec(n_q);
        let rep = circuit::verify_map(s);
        r.check(
            &format!("gate-level map n_q={n_q}"),
            rep.ok() && rep.checked == s.cells(),
            format!(
                "{} cells, forward mismatch {:?}, reversed mismatch {:?}",
                rep.checked, rep.forward_mismatch, rep.reversed_mismatch
            ),
        );
    }
    // The same on the state-vector engine for the smaller lattices.
    for n_q in 2..=5u32 {
        let s = spec(n_q);
        let fwd = build_cat_iteration(s);
        let rev = build_cat_iteration_reversed(s);
        let mut bad = 0;
        for k in 0..s.cells() {
            let cell = s.unflat(k);
            for (circ, want) in [
                (&fwd, classical::cat_step(cell, s)),
                (&rev, classical::cat_step_reversed(cell, s)),
            ] {
                let mut st = StateVector::init_basis(cell.i, cell.j, s).unwrap();
                st.apply_circuit(circ, None).unwrap();
                if (st.amplitudes()[s.flat(want)].norm_sqr() - 1.0).abs() > 1e-12 {
                    bad += 1;
                }
            }
        }
        r.check(
            &format!("state-vector map n_q={n_q}"),
            bad == 0,
            format!("{} basis states x 2 directions, {bad} wrong", s.cells()),
        );
    }
    let secs = t0.elapsed().as_secs_f64();
    r.check("runtime < 60 s", secs < 60.0, format!("{secs:.2} s"));
    r.finish();
}

#[test]
fn criterion_04_exact_echo() {
    let mut r = Report::new(4);
    let t0 = Instant::now();
    let grid = smile();
    for t_r in [10, 200] {
        let mut cfg = EchoConfig::new(spec(7), t_r, Initial::Density(grid.clone()));
        cfg.snapshot_times = vec![0, t_r, 2 * t_r];
        let res = experiments::run_echo(&cfg).unwrap();
        let err = (res.return_fidelity - 1.0).abs();
        r.check(
            &format!("t_r={t_r} return fidelity"),
            err < 1e-9,
            format!("f = {:.15}, |f - 1| = {err:.2e}", res.return_fidelity),
        );
        let back = &res.snapshots[2].density;
        let f_density = classical::bhattacharyya_fidelity(back, &grid).unwrap();
        r.check(
            &format!("t_r={t_r} returned density"),
            (f_density - 1.0).abs() < 1e-9,
            format!("Bhattacharyya vs initial = {f_density:.15}"),
        );
    }
    let secs = t0.elapsed().as_secs_f64();
    r.check("runtime < 5 min", secs < 300.0, format!("{secs:.1} s"));
    r.finish();
}

#[test]
fn criterion_05_unitarity_under_noise() {
    let mut r = Report::new(5);
    for n_q in [5u32, 7] {
        let s = spec(n_q);
        let mut st = Initial::Line.prepare(s, None).unwrap();
        let circ = build_cat_iteration(s);
        let mut noise = NoiseModel::new(0.03, 1).unwrap();
        for _ in 0..400 {
            st.apply_circuit(&circ, Some(&mut noise)).unwrap();
        }
        let drift = (st.norm_sqr() - 1.0).abs();
        r.check(
            &format!("n_q={n_q} norm after 400 noisy iterations"),
            drift < 1e-9,
            format!("|norm - 1| = {drift:.2e}"),
        );
    }
    r.finish();
}

#[test]
fn criterion_06_fidelity_decay() {
    let mut r = Report::new(6);
    let s = spec(7);
    let eps = [0.003, 0.01, 0.03];
    let runs: Vec<NoisyRun> = eps
        .iter()
        .flat_map(|&epsilon| (1..=5).map(move |seed| NoisyRun { epsilon, seed }))
        .collect();
    let t0 = Instant::now();
    let series = experiments::fidelity_ensemble(s, &Initial::Line, &runs, 400, None).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let means: Vec<FidelitySeries> = series
        .chunks(5)
        .map(|c| FidelitySeries::mean(c).unwrap())
        .collect();
    for (e, m) in eps.iter().zip(&means) {
        let at = |t| m.value_at(t).unwrap();
        println!(
            "criterion  6 [INFO] eps={e}: mean f(100)={:.4} f(200)={:.4} f(400)={:.4}",
            at(100),
            at(200),
            at(400)
        );
    }
    for k in 0..2 {
        let worst = means[k]
            .values()
            .zip(means[k + 1].values())
            .map(|(hi, lo)| lo - hi)
            .fold(f64::NEG_INFINITY, f64::max);
        r.check(
            &format!("ordering eps={} above eps={}", eps[k], eps[k + 1]),
            worst <= 0.02,
            format!("largest violation over t<=400: {worst:.4} (tolerance 0.02)"),
        );
    }
    let f400 = means[1].value_at(400).unwrap();
    r.check(
        "f(400) at eps=0.01",
        (0.5..=0.97).contains(&f400),
        format!("{f400:.4} in [0.5, 0.97]"),
    );
    println!(
        "criterion  6 [INFO] 15 noisy runs + shared reference, 400 iterations: {secs:.1} s"
    );
    r.finish();
}

#[test]
fn criterion_07_scaling_law() {
    let mut r = Report::new(7);
    let (result, secs) = scan();
    let fit = &result.fit;
    for (x, med) in result.medians() {
        println!("criterion  7 [INFO] eps^2 n_q = {x:.2e}: median t_f = {med:.2}");
    }
    let saturated = result.rows.iter().filter(|row| row.saturated).count();
    r.check(
        "slope",
        (fit.slope + 1.0).abs() <= 0.15,
        format!("{:.4} (target -1 +- 0.15), {} points, {saturated} saturated", fit.slope, fit.points),
    );
    r.check(
        "prefactor C",
        (0.2..=2.0).contains(&fit.prefactor),
        format!(
            "{:.4} in [0.2, 2.0] (unit-slope fit: {:.4})",
            fit.prefactor, fit.prefactor_unit_slope
        ),
    );
    let med = result.medians();
    let monotone = med.windows(2).all(|w| w[1].1 < w[0].1);
    r.check("median t_f decreasing in eps^2 n_q", monotone, format!("{} grid points", med.len()));
    r.check("runtime < 30 min", *secs < 1800.0, format!("{secs:.1} s"));
    r.finish();
}

/// `R^2` of the least-squares line through `(x, y)`.
fn r_squared(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, sxy * sxy / (sxx * syy))
}

#[test]
fn criterion_08_classical_echo_fidelity() {
    let mut r = Report::new(8);
    let s = spec(7);
    let grid = smile();
    let err = ErrorSpec::from_epsilon(1.0 / 128.0, s, ShiftAxes::Both).unwrap();
    let series = experiments::classical_echo_series(&grid, 1..=12, Some(err)).unwrap();
    for (t_e, f) in series.points() {
        println!("criterion  8 [INFO] t_e={t_e:>2}: classical f_c(2 t_e) = {f:.6}");
    }
    let pts: Vec<(f64, f64)> = series
        .points()
        .iter()
        .filter(|p| p.0 >= 2)
        .map(|&(t, f)| (t as f64, f.ln()))
        .collect();
    let finite = pts.iter().all(|p| p.1.is_finite());
    let (slope, r2) = if finite { r_squared(&pts) } else { (f64::NAN, f64::NAN) };
    r.check(
        "ln f_c linear in t_e over [2, 12]",
        finite && slope < 0.0 && r2 >= 0.95,
        format!("slope {slope:.4}, R^2 = {r2:.4} (need >= 0.95)"),
    );
    let t_f = series.crossing(0.5);
    r.check(
        "classical t_f",
        t_f.is_some_and(|t| (4.0..=10.0).contains(&t)),
        format!("{t_f:?} in [4, 10] (1.4 ln 128 = {:.2})", 1.4 * 128f64.ln()),
    );
    let mut worst = 0.0f64;
    for t_e in 1..=10 {
        let fq = experiments::quantum_echo_fidelity(&grid, t_e, Some(err), 0.01, t_e as u64).unwrap();
        let fc = series.value_at(t_e).unwrap();
        println!("criterion  8 [INFO] t_e={t_e:>2}: quantum eps=0.01 f_c = {fq:.6}, classical {fc:.6}");
        worst = worst.max((fq - fc).abs());
    }
    r.check(
        "quantum pipeline matches classical",
        worst <= 0.1,
        format!("max |f_q - f_c| over t_e<=10 = {worst:.4} (tolerance 0.1)"),
    );
    r.finish();
}

#[test]
fn criterion_09_classical_error_collapse() {
    let mut r = Report::new(9);
    let s = spec(7);
    let grid = smile();
    let t_e = 200;
    let series =
        experiments::classical_error_fidelity_drop(s, &Initial::Density(grid.clone()), t_e, ErrorSpec::LsbFlip, 230)
            .unwrap();
    let before = series
        .points()
        .iter()
        .filter(|p| p.0 < t_e)
        .map(|p| (p.1 - 1.0).abs())
        .fold(0.0, f64::max);
    r.check("f_c = 1 before t_e", before < 1e-12, format!("max |f_c - 1| = {before:.2e}"));
    let drop = series.value_at(t_e).unwrap();
    r.check("f_c below 0.05 at t_e", drop < 0.05, format!("f_c({t_e}) = {drop:.6}"));
    let spread = series
        .points()
        .iter()
        .filter(|p| p.0 >= t_e)
        .map(|p| (p.1 - drop).abs())
        .fold(0.0, f64::max);
    r.check(
        "f_c constant after t_e",
        spread < 1e-12,
        format!("max deviation over t in [{t_e}, 230] = {spread:.2e}"),
    );
    let evolved = grid.evolve(t_e, Direction::Forward);
    let oracle = classical::bhattacharyya_fidelity(&evolved.with_error(&ErrorSpec::LsbFlip).unwrap(), &evolved).unwrap();
    r.check(
        "Bhattacharyya cross-check",
        (oracle - drop).abs() < 1e-9,
        format!("classical {oracle:.12} vs quantum {drop:.12}"),
    );
    r.finish();
}

#[test]
fn criterion_10_nonreturn_estimator() {
    let mut r = Report::new(10);
    let s = spec(7);
    let n = s.size();
    let eps = 0.03;
    let mut cfg = EchoConfig::new(s, 200, Initial::Line);
    cfg.epsilon_q = eps;
    cfg.seed = 1;
    let res = experiments::run_echo(&cfg).unwrap();
    let wx = res.state.marginal_x();
    let background = wx
        .iter()
        .enumerate()
        .filter(|(x, _)| *x != n / 2)
        .map(|(_, w)| *w)
        .fold(0.0, f64::max);
    println!(
        "criterion 10 [INFO] W_x(N/2) = {:.4}, largest other W_x = {background:.2e}, return fidelity {:.4}",
        wx[n / 2], res.return_fidelity
    );

    let (scan, _) = scan();
    let model = DecayModel {
        prefactor: scan.fit.prefactor_unit_slope,
        t: 400,
    };
    let support = Initial::Line.x_support(s).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let nr = experiments::nonreturn_probability(&res.state, &support, 10_000, &mut rng, &model).unwrap();
    let dev = (nr.p_nr - nr.p_nr_exact).abs();
    r.check(
        "sampled P_nr within 5 sigma",
        dev <= 5.0 * nr.sigma,
        format!(
            "P_nr = {:.4}, exact {:.4}, |diff| = {dev:.4}, 5 sigma = {:.4}",
            nr.p_nr,
            nr.p_nr_exact,
            5.0 * nr.sigma
        ),
    );
    r.check(
        "eps_hat within a factor of 2",
        (eps / 2.0..=eps * 2.0).contains(&nr.epsilon_hat),
        format!("eps_hat = {:.4} for eps = {eps} (C = {:.4})", nr.epsilon_hat, model.prefactor),
    );
    r.finish();
}

/// Dense DFT on one register: `|x> -> N^{-1/2} sum_f exp(2 pi i x f / N) |f>`,
/// with the output frequency stored bit-reversed as the circuit leaves it.
fn dft_oracle(amps: &[Complex64], start: usize, width: usize) -> Vec<Complex64> {
    let n = 1usize << width;
    let mask = (n - 1) << start;
    let mut out = vec![Complex64::new(0.0, 0.0); amps.len()];
    for (idx, a) in amps.iter().enumerate() {
        if *a == Complex64::new(0.0, 0.0) {
            continue;
        }
        let x = (idx & mask) >> start;
        let rest = idx & !mask;
        for f in 0..n {
            let phase = 2.0 * std::f64::consts::PI * (x * f) as f64 / n as f64;
            let dst = rest | (bit_reverse(f, width) << start);
            out[dst] += a * Complex64::cis(phase) / (n as f64).sqrt();
        }
    }
    out
}

#[test]
fn criterion_11_qft() {
    let mut r = Report::new(11);
    let s = spec(4);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let dim = 1usize << s.qubit_count();
        let mut amps: Vec<Complex64> = (0..dim)
            .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        amps.iter_mut().for_each(|a| *a /= norm);
        let st = StateVector::from_amplitudes(s, amps).unwrap();
        let layout = st.layout();
        for reg in [layout.x, layout.y] {
            let mut out = st.clone();
            out.apply_circuit(&build_qft(s.qubit_count(), reg).unwrap(), None).unwrap();
            let want = dft_oracle(st.amplitudes(), reg.start, reg.width);
            for (a, b) in out.amplitudes().iter().zip(&want) {
                worst = worst.max((a - b).norm());
            }
        }
    }
    r.check("QFT vs dense DFT", worst < 1e-10, format!("max amplitude error {worst:.2e}"));
    let u = StateVector::init_from_density(&DensityGrid::uniform(s)).unwrap();
    let h = experiments::harmonics(&u, u.layout().y, s.size()).unwrap();
    let rest: f64 = h[1..].iter().map(|p| p.weight).sum();
    r.check(
        "uniform input has one zero-frequency harmonic",
        h[0].frequency == 0 && (h[0].weight - 1.0).abs() < 1e-10 && rest < 1e-10,
        format!("top ({}, {:.12}), remaining weight {rest:.2e}", h[0].frequency, h[0].weight),
    );
    r.finish();
}

#[test]
fn criterion_12_performance() {
    let mut r = Report::new(12);
    let s = spec(7);
    let circ = build_cat_iteration(s);
    let start = Initial::Line.prepare(s, None).unwrap();
    let mut exact = start.clone();
    let t0 = Instant::now();
    for _ in 0..400 {
        exact.apply_circuit(&circ, None).unwrap();
    }
    let exact_s = t0.elapsed().as_secs_f64();
    let mut noisy = start;
    let mut noise = NoiseModel::new(0.01, 1).unwrap();
    let t0 = Instant::now();
    for _ in 0..400 {
        noisy.apply_circuit(&circ, Some(&mut noise)).unwrap();
    }
    let noisy_s = t0.elapsed().as_secs_f64();
    let gates = 400.0 * circ.len() as f64;
    println!(
        "criterion 12 [INFO] exact: {:.0} gates/s ({:.1} ms/iteration); noisy: {:.0} gates/s ({:.1} ms/iteration); {} threads",
        gates / exact_s,
        1e3 * exact_s / 400.0,
        gates / noisy_s,
        1e3 * noisy_s / 400.0,
        rayon::current_num_threads()
    );
    let total = exact_s + noisy_s;
    r.check(
        "400 noisy + 400 exact iterations at n_q=7",
        total < 300.0,
        format!("{total:.1} s (limit 300 s)"),
    );
    r.finish();
}
