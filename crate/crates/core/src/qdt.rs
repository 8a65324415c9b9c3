//! Parallel single-qubit detector tomography.
//!
//! Every qubit is prepared in the same input state and measured in the same
//! basis, so twelve circuits cover any number of qubits. Each basis is fitted
//! as a binary detector `{M_0, I − M_0}` by maximum likelihood; the six effects
//! are then `p_B · M_{B,b}` with the known basis probabilities `p_B`.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Matrix4, Vector4};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::pauli::Basis;
use crate::povm::{from_pauli_coords, pauli_coords, BasisDistribution, DualFrame, EffectLabel, LocalPovm, Mat2};
use crate::schedule::QdtBatch;
use crate::sim::{QdtRecord, SettingBlock};

pub const QDT_CIRCUITS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum InputState {
    Zero,
    One,
    Plus,
    PlusY,
}

impl InputState {
    pub const ALL: [InputState; 4] = [InputState::Zero, InputState::One, InputState::Plus, InputState::PlusY];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            InputState::Zero => "0",
            InputState::One => "1",
            InputState::Plus => "+",
            InputState::PlusY => "+y",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|i| i.label() == s)
    }

    pub fn amplitudes(self) -> [Complex64; 2] {
        let h = core::f64::consts::FRAC_1_SQRT_2;
        match self {
            InputState::Zero => [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)],
            InputState::One => [Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)],
            InputState::Plus => [Complex64::new(h, 0.0), Complex64::new(h, 0.0)],
            InputState::PlusY => [Complex64::new(h, 0.0), Complex64::new(0.0, h)],
        }
    }

    pub fn density(self) -> Mat2 {
        let mut c = [1.0, 0.0, 0.0, 0.0];
        match self {
            InputState::Zero => c[3] = 1.0,
            InputState::One => c[3] = -1.0,
            InputState::Plus => c[1] = 1.0,
            InputState::PlusY => c[2] = 1.0,
        }
        from_pauli_coords(c)
    }
}

/// The twelve `(input, basis)` circuits, input-major.
pub fn qdt_circuit_list() -> [(InputState, Basis); QDT_CIRCUITS] {
    core::array::from_fn(|i| (InputState::ALL[i / 3], Basis::ALL[i % 3]))
}

/// Count data for one qubit. Counts are real so exact probabilities can be
/// supplied as fractional counts.
#[derive(Debug, Clone, PartialEq)]
pub struct QubitTomography {
    pub dist: BasisDistribution,
    /// `counts[input][basis][outcome]`.
    pub counts: [[[f64; 2]; 3]; 4],
    /// Prepared states, ideal unless overridden.
    pub inputs: [Mat2; 4],
}

impl QubitTomography {
    pub fn new(dist: BasisDistribution) -> Self {
        Self {
            dist,
            counts: [[[0.0; 2]; 3]; 4],
            inputs: InputState::ALL.map(InputState::density),
        }
    }

    /// Exact outcome probabilities of `truth` as unit-total counts.
    pub fn exact(truth: &LocalPovm) -> Result<Self> {
        let p = Basis::ALL.map(|b| truth.basis_probability(b));
        let dist = BasisDistribution::unchecked(p[0], p[1], p[2])?;
        let mut t = Self::new(dist);
        for input in InputState::ALL {
            let rho = input.density();
            for basis in Basis::ALL {
                for b in 0..2u8 {
                    let e = truth.effect(EffectLabel::new(basis, b));
                    t.counts[input.index()][basis.index()][b as usize] = (rho * e).trace().re / p[basis.index()];
                }
            }
        }
        Ok(t)
    }

    pub fn add(&mut self, input: InputState, basis: Basis, outcome: u8, count: f64) {
        self.counts[input.index()][basis.index()][outcome as usize & 1] += count;
    }

    pub fn with_inputs(mut self, inputs: [Mat2; 4]) -> Result<Self> {
        for (i, rho) in inputs.iter().enumerate() {
            let [t, x, y, z] = pauli_coords(rho);
            let herm = (rho - rho.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
            if herm > 1e-12 || (t - 1.0).abs() > 1e-12 || x * x + y * y + z * z > 1.0 + 1e-12 {
                return Err(Error::InvalidTomography(format!("input {i} is not a density matrix")));
            }
        }
        self.inputs = inputs;
        Ok(self)
    }

    pub fn shots(&self, input: InputState, basis: Basis) -> f64 {
        let c = self.counts[input.index()][basis.index()];
        c[0] + c[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TomographyData {
    pub qubits: Vec<QubitTomography>,
}

impl TomographyData {
    /// Aggregates one batch of QDT records; `dists[q]` are qubit `q`'s basis probabilities.
    pub fn from_records<'a>(
        records: impl IntoIterator<Item = &'a QdtRecord>,
        batch: QdtBatch,
        dists: &[BasisDistribution],
    ) -> Result<Self> {
        let mut qubits: Vec<QubitTomography> = dists.iter().map(|d| QubitTomography::new(*d)).collect();
        for r in records.into_iter().filter(|r| r.batch == batch) {
            if r.counts.len() != qubits.len() {
                return Err(Error::QubitMismatch {
                    expected: qubits.len(),
                    found: r.counts.len(),
                });
            }
            for (t, c) in qubits.iter_mut().zip(&r.counts) {
                t.add(r.input, r.basis, 0, f64::from(c[0]));
                t.add(r.input, r.basis, 1, f64::from(c[1]));
            }
        }
        Ok(Self { qubits })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoverySettings {
    pub max_iterations: usize,
    /// Exit once one iteration improves the per-shot log-likelihood by less than this.
    pub tolerance: f64,
    /// Eigenvalues down to `-psd_tolerance` are clipped rather than rejected.
    pub psd_tolerance: f64,
    /// Keep the objective value after every iteration.
    pub record_trace: bool,
}

impl Default for RecoverySettings {
    fn default() -> Self {
        Self {
            max_iterations: 20_000,
            tolerance: 1e-15,
            psd_tolerance: 1e-9,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasisFit {
    /// Pauli coordinates of `M_0`.
    pub m0: [f64; 4],
    /// Per-shot log-likelihood.
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recovery {
    pub povm: LocalPovm,
    pub bases: [BasisFit; 3],
    /// Largest per-basis iteration count.
    pub iterations: usize,
    pub converged: bool,
}

/// Binary-detector likelihood problem for one basis.
struct BinaryProblem {
    /// Pauli coordinates of each input, `(1, r)`.
    inputs: [Vector4<f64>; 4],
    /// Frequencies `n_kb / N`.
    freq: [[f64; 2]; 4],
    /// Coordinates of the noiseless `M_0`.
    ideal: Vector4<f64>,
}

impl BinaryProblem {
    /// `p_k = Tr[ρ_k M_0]`.
    fn probs(&self, m: &Vector4<f64>) -> [f64; 4] {
        core::array::from_fn(|k| 0.5 * self.inputs[k].dot(m))
    }

    fn objective(&self, m: &Vector4<f64>) -> f64 {
        let p = self.probs(m);
        let mut l = 0.0;
        for (k, &pk) in p.iter().enumerate() {
            for (f, q) in [(self.freq[k][0], pk), (self.freq[k][1], 1.0 - pk)] {
                if f > 0.0 {
                    if !(q > 0.0) {
                        return f64::NEG_INFINITY;
                    }
                    l += f * libm::log(q);
                }
            }
        }
        l
    }

    fn closed_form(&self) -> Option<Vector4<f64>> {
        // p_k = ½ r_k·m is linear in m; invert at the empirical frequencies
        let a = Matrix4::from_rows(&self.inputs.map(|r| (r * 0.5).transpose()));
        let f = Vector4::from(core::array::from_fn::<f64, 4, _>(|k| {
            let n = self.freq[k][0] + self.freq[k][1];
            self.freq[k][0] / n
        }));
        a.try_inverse().map(|inv| inv * f)
    }

    /// One diluted fixed-point update `Π_j ← Λ^{-½} R_j Π_j R_j Λ^{-½}`.
    fn fixed_point(&self, m: &Vector4<f64>, eps: f64) -> Option<Vector4<f64>> {
        let p = self.probs(m);
        let id = Vector4::new(2.0, 0.0, 0.0, 0.0);
        let effects = [*m, id - m];
        let mut r = [Vector4::zeros(); 2];
        for k in 0..4 {
            for j in 0..2 {
                let pj = if j == 0 { p[k] } else { 1.0 - p[k] };
                if self.freq[k][j] > 0.0 {
                    r[j] += self.inputs[k] * (self.freq[k][j] / pj);
                }
            }
        }
        let mut updated = [Mat2::zeros(); 2];
        for j in 0..2 {
            let rj = (from_pauli_coords(id.into()) + from_pauli_coords(r[j].into()) * Complex64::new(eps, 0.0))
                / Complex64::new(1.0 + eps, 0.0);
            updated[j] = rj * from_pauli_coords(effects[j].into()) * rj;
        }
        let lambda = Vector4::from(pauli_coords(&(updated[0] + updated[1])));
        let inv_sqrt = from_pauli_coords(hermitian_map(&lambda, |x| if x > 0.0 { 1.0 / libm::sqrt(x) } else { f64::NAN }).into());
        let next = Vector4::from(pauli_coords(&(inv_sqrt * updated[0] * inv_sqrt)));
        next.iter().all(|x| x.is_finite()).then_some(next)
    }

    /// Newton step with backtracking; returns an improving feasible point.
    fn newton(&self, m: &Vector4<f64>, current: f64) -> Option<(Vector4<f64>, f64)> {
        let p = self.probs(m);
        let mut grad = Vector4::zeros();
        let mut hess = Matrix4::zeros();
        for k in 0..4 {
            let g = self.inputs[k] * 0.5;
            let (f0, f1, q0, q1) = (self.freq[k][0], self.freq[k][1], p[k], 1.0 - p[k]);
            let d1 = if f0 > 0.0 { f0 / q0 } else { 0.0 } - if f1 > 0.0 { f1 / q1 } else { 0.0 };
            let d2 = if f0 > 0.0 { f0 / (q0 * q0) } else { 0.0 } + if f1 > 0.0 { f1 / (q1 * q1) } else { 0.0 };
            grad += g * d1;
            hess -= g * g.transpose() * d2;
        }
        let step = hess.try_inverse().map(|h| -(h * grad))?;
        let mut s = 1.0;
        for _ in 0..30 {
            let cand = m + step * s;
            if feasible(&cand, 0.0) {
                let l = self.objective(&cand);
                if l > current {
                    return Some((cand, l));
                }
            }
            s *= 0.5;
        }
        None
    }

    fn solve(&self, settings: &RecoverySettings) -> BasisFit {
        if let Some(m) = self.closed_form() {
            if feasible(&m, settings.psd_tolerance) {
                let m = clip(&m);
                let l = self.objective(&m);
                if l.is_finite() {
                    return BasisFit {
                        m0: m.into(),
                        log_likelihood: l,
                        iterations: 0,
                        converged: true,
                        trace: if settings.record_trace { vec![l] } else { Vec::new() },
                    };
                }
            }
        }
        let mut m = self.start();
        let mut l = self.objective(&m);
        let mut eps = 1.0;
        let mut trace = Vec::new();
        if settings.record_trace {
            trace.push(l);
        }
        let mut converged = false;
        let mut iterations = 0;
        while iterations < settings.max_iterations {
            iterations += 1;
            let before = l;
            // fixed-point ascent, diluting until the objective does not drop
            loop {
                match self.fixed_point(&m, eps) {
                    Some(next) => {
                        let ln = self.objective(&next);
                        if ln >= l {
                            m = next;
                            l = ln;
                            break;
                        }
                    }
                    None => {}
                }
                eps *= 0.5;
                if eps < 1e-12 {
                    break;
                }
            }
            eps = (eps * 2.0).min(1.0);
            if let Some((next, ln)) = self.newton(&m, l) {
                m = next;
                l = ln;
            }
            if settings.record_trace {
                trace.push(l);
            }
            if l - before <= settings.tolerance {
                converged = true;
                break;
            }
        }
        BasisFit {
            m0: clip(&m).into(),
            log_likelihood: l,
            iterations,
            converged,
            trace,
        }
    }

    /// Ideal projector for this basis, pulled toward `I/2` if it rules out an observed outcome.
    fn start(&self) -> Vector4<f64> {
        let mut m = self.ideal;
        let half = Vector4::new(1.0, 0.0, 0.0, 0.0);
        let mut mix: f64 = 0.0;
        while !self.objective(&m).is_finite() && mix < 1.0 {
            mix = if mix == 0.0 { 0.1 } else { (mix * 2.0).min(1.0) };
            m = self.ideal * (1.0 - mix) + half * mix;
        }
        m
    }
}

/// Applies `f` to the eigenvalues of the Hermitian matrix with Pauli coordinates `c`.
fn hermitian_map(c: &Vector4<f64>, f: impl Fn(f64) -> f64) -> Vector4<f64> {
    let v = Vector4::new(0.0, c[1], c[2], c[3]);
    let r = v.norm();
    let (hi, lo) = (f(0.5 * (c[0] + r)), f(0.5 * (c[0] - r)));
    if r == 0.0 {
        return Vector4::new(2.0 * hi, 0.0, 0.0, 0.0);
    }
    let mut out = v * ((hi - lo) / r);
    out[0] = hi + lo;
    out
}

/// `0 ≤ M_0 ≤ I` up to `tol`.
fn feasible(m: &Vector4<f64>, tol: f64) -> bool {
    let r = libm::sqrt(m[1] * m[1] + m[2] * m[2] + m[3] * m[3]);
    0.5 * (m[0] - r) >= -tol && 0.5 * (m[0] + r) <= 1.0 + tol
}

fn clip(m: &Vector4<f64>) -> Vector4<f64> {
    hermitian_map(m, |x| x.clamp(0.0, 1.0))
}

/// Maximum-likelihood effects for one qubit.
///
/// On `NonConvergence` the error carries the best iterate.
pub fn recover_local_povm(data: &QubitTomography, settings: &RecoverySettings) -> Result<Recovery> {
    if !(settings.tolerance > 0.0) || !(settings.psd_tolerance >= 0.0) || settings.max_iterations == 0 {
        return Err(Error::InvalidTomography("solver settings out of range".into()));
    }
    let inputs = data.inputs.map(|rho| Vector4::from(pauli_coords(&rho)));
    if Matrix4::from_rows(&inputs.map(|r| r.transpose())).determinant().abs() < 1e-9 {
        return Err(Error::InvalidTomography("input states are not informationally complete".into()));
    }
    let fits = Basis::ALL.map(|basis| {
        let mut freq = [[0.0; 2]; 4];
        let mut total = 0.0;
        for input in InputState::ALL {
            let c = data.counts[input.index()][basis.index()];
            if c.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::InvalidTomography(format!("counts {c:?} for input {} in {basis}", input.label())));
            }
            if !(c[0] + c[1] > 0.0) {
                return Err(Error::InvalidTomography(format!("no shots for input {} in {basis}", input.label())));
            }
            freq[input.index()] = c;
            total += c[0] + c[1];
        }
        for f in freq.iter_mut().flatten() {
            *f /= total;
        }
        let mut ideal = Vector4::new(1.0, 0.0, 0.0, 0.0);
        ideal[1 + basis.index()] = 1.0;
        Ok(BinaryProblem { inputs, freq, ideal }.solve(settings))
    });
    let [x, y, z] = fits;
    let bases = [x?, y?, z?];
    let mut effects = [Mat2::zeros(); 6];
    for basis in Basis::ALL {
        let p = Complex64::new(data.dist.prob(basis), 0.0);
        let m0 = from_pauli_coords(bases[basis.index()].m0);
        effects[EffectLabel::new(basis, 0).index()] = m0 * p;
        effects[EffectLabel::new(basis, 1).index()] = (Mat2::identity() - m0) * p;
    }
    let povm = LocalPovm::new(effects)?;
    let recovery = Recovery {
        iterations: bases.iter().map(|b| b.iterations).max().unwrap_or(0),
        converged: bases.iter().all(|b| b.converged),
        povm,
        bases,
    };
    if DualFrame::canonical(&recovery.povm).is_err() {
        return Err(Error::DegenerateData { qubit: 0 });
    }
    if !recovery.converged {
        return Err(Error::NonConvergence { best: Box::new(recovery) });
    }
    Ok(recovery)
}

/// Independent per-qubit recoveries.
pub fn recover_all(data: &TomographyData, settings: &RecoverySettings) -> Result<Vec<Recovery>> {
    data.qubits
        .iter()
        .enumerate()
        .map(|(q, t)| {
            recover_local_povm(t, settings).map_err(|e| match e {
                Error::DegenerateData { .. } => Error::DegenerateData { qubit: q },
                other => other,
            })
        })
        .collect()
}

/// Outcome counts on `qubit` over shots whose setting measured `basis` there.
pub fn marginalize_counts(blocks: &[SettingBlock], qubit: usize, basis: Basis) -> Result<[u64; 2]> {
    if blocks.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut counts = [0u64; 2];
    for b in blocks.iter().filter(|b| b.setting.bases().get(qubit) == Some(&basis)) {
        for &(o, c) in &b.counts {
            counts[o.bit(qubit) as usize] += u64::from(c);
        }
    }
    if counts[0] + counts[1] == 0 {
        return Err(Error::EmptyTally {
            qubit,
            basis: basis.as_char(),
        });
    }
    Ok(counts)
}
