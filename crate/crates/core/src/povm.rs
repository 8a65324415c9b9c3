//! Six-outcome Pauli POVMs and their canonical dual frames.
//!
//! A 2×2 Hermitian matrix `H` is handled through its Pauli coordinates
//! `c = (Tr H, Tr HX, Tr HY, Tr HZ)`, so that `H = ½ Σ_k c_k σ_k`. With
//! `G = Σ_i c_i c_iᵀ` over the six effects, the dual of effect `i` takes its
//! traceless coordinates from `2 G⁻¹ c_i` and has `Tr D_i = 1`. Because
//! `Σ_i c_i` is the coordinate vector of `I`, this is still a dual frame, and
//! identity terms contribute exactly their coefficient to every ω.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{Matrix2, Matrix4, Vector4};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::pauli::{Basis, Observable, Pauli};

pub type Mat2 = Matrix2<Complex64>;

/// Default lower bound on each basis probability.
pub const DEFAULT_FLOOR: f64 = 0.01;
/// Effects may have eigenvalues down to `-PSD_TOLERANCE`.
pub const PSD_TOLERANCE: f64 = 1e-9;
/// Frame operators with a larger condition number are rejected.
pub const MAX_FRAME_CONDITION: f64 = 1e8;

/// Pauli coordinates `(Tr H, Tr HX, Tr HY, Tr HZ)`.
pub fn pauli_coords(m: &Mat2) -> [f64; 4] {
    let b = (m[(0, 1)] + m[(1, 0)].conj()) * 0.5;
    [
        m[(0, 0)].re + m[(1, 1)].re,
        2.0 * b.re,
        -2.0 * b.im,
        m[(0, 0)].re - m[(1, 1)].re,
    ]
}

/// Inverse of [`pauli_coords`].
pub fn from_pauli_coords(c: [f64; 4]) -> Mat2 {
    let [t, x, y, z] = c;
    Matrix2::new(
        Complex64::new(0.5 * (t + z), 0.0),
        Complex64::new(0.5 * x, -0.5 * y),
        Complex64::new(0.5 * x, 0.5 * y),
        Complex64::new(0.5 * (t - z), 0.0),
    )
}

/// Eigenvalues `(λ_min, λ_max)` of a Hermitian 2×2 matrix.
pub fn hermitian_eigenvalues(m: &Mat2) -> (f64, f64) {
    let [t, x, y, z] = pauli_coords(m);
    let r = libm::sqrt(x * x + y * y + z * z);
    (0.5 * (t - r), 0.5 * (t + r))
}

/// `½‖A − B‖₁` for Hermitian 2×2 matrices.
pub fn trace_distance(a: &Mat2, b: &Mat2) -> f64 {
    let (lo, hi) = hermitian_eigenvalues(&(a - b));
    0.5 * (lo.abs() + hi.abs())
}

/// `|v⟩⟨v|` for the `outcome` eigenvector of `basis` (outcome 0 ↔ eigenvalue +1).
pub fn projector(basis: Basis, outcome: u8) -> Mat2 {
    let sign = if outcome == 0 { 1.0 } else { -1.0 };
    let mut c = [1.0, 0.0, 0.0, 0.0];
    c[1 + basis.index()] = sign;
    from_pauli_coords(c)
}

/// Probabilities of measuring along X, Y and Z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisDistribution {
    probs: [f64; 3],
}

impl BasisDistribution {
    /// Validates against [`DEFAULT_FLOOR`].
    pub fn new(p_x: f64, p_y: f64, p_z: f64) -> Result<Self> {
        Self::with_floor(p_x, p_y, p_z, DEFAULT_FLOOR)
    }

    pub fn with_floor(p_x: f64, p_y: f64, p_z: f64, floor: f64) -> Result<Self> {
        let d = Self::unchecked(p_x, p_y, p_z)?;
        if let Some(p) = d.probs.iter().find(|&&p| p < floor - 1e-15) {
            return Err(Error::InvalidDistribution(format!("probability {p} below floor {floor}")));
        }
        Ok(d)
    }

    /// Skips the floor check (degenerate test distributions such as `(1, 0, 0)`).
    /// Entries must still be non-negative and sum to one.
    pub fn unchecked(p_x: f64, p_y: f64, p_z: f64) -> Result<Self> {
        let probs = [p_x, p_y, p_z];
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidDistribution(format!("{probs:?} has negative or non-finite entries")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidDistribution(format!("{probs:?} sums to {sum}")));
        }
        Ok(Self { probs })
    }

    pub fn symmetric() -> Self {
        Self {
            probs: [1.0 / 3.0; 3],
        }
    }

    pub fn prob(&self, basis: Basis) -> f64 {
        self.probs[basis.index()]
    }

    pub fn probs(&self) -> [f64; 3] {
        self.probs
    }
}

/// Outcome label of a six-effect local POVM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EffectLabel {
    pub basis: Basis,
    pub outcome: u8,
}

impl EffectLabel {
    pub fn new(basis: Basis, outcome: u8) -> Self {
        Self { basis, outcome }
    }

    /// Position in the canonical order `X0, X1, Y0, Y1, Z0, Z1`.
    pub fn index(self) -> usize {
        2 * self.basis.index() + self.outcome as usize
    }

    pub fn all() -> [EffectLabel; 6] {
        let mut out = [EffectLabel::new(Basis::X, 0); 6];
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = EffectLabel::new(Basis::ALL[i / 2], (i % 2) as u8);
        }
        out
    }
}

/// Six PSD effects in canonical label order summing to the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalPovm {
    effects: [Mat2; 6],
}

impl LocalPovm {
    pub fn new(effects: [Mat2; 6]) -> Result<Self> {
        for (label, e) in EffectLabel::all().iter().zip(&effects) {
            let herm = (e - e.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
            if herm > PSD_TOLERANCE {
                return Err(Error::InvalidPovm(format!("effect {label:?} is not Hermitian")));
            }
            let (lo, _) = hermitian_eigenvalues(e);
            if lo < -PSD_TOLERANCE {
                return Err(Error::InvalidPovm(format!("effect {label:?} has eigenvalue {lo}")));
            }
        }
        let sum: Mat2 = effects.iter().sum();
        let dev = (sum - Mat2::identity()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if dev > PSD_TOLERANCE {
            return Err(Error::InvalidPovm(format!("effects sum deviates from identity by {dev}")));
        }
        Ok(Self { effects })
    }

    /// Used where completeness and positivity hold by construction.
    pub(crate) fn from_effects_unchecked(effects: [Mat2; 6]) -> Self {
        Self { effects }
    }

    /// `{p_B |b⟩⟨b|}` over bases and eigenprojectors.
    pub fn ideal(dist: &BasisDistribution) -> Self {
        let mut effects = [Mat2::zeros(); 6];
        for label in EffectLabel::all() {
            effects[label.index()] = projector(label.basis, label.outcome) * Complex64::new(dist.prob(label.basis), 0.0);
        }
        Self { effects }
    }

    pub fn effect(&self, label: EffectLabel) -> &Mat2 {
        &self.effects[label.index()]
    }

    pub fn effects(&self) -> &[Mat2; 6] {
        &self.effects
    }

    /// `p_B = ½ Tr[Π_{B,0} + Π_{B,1}]`, exact for any basis-local noise.
    pub fn basis_probability(&self, basis: Basis) -> f64 {
        let i = 2 * basis.index();
        0.5 * (pauli_coords(&self.effects[i])[0] + pauli_coords(&self.effects[i + 1])[0])
    }

    /// Largest trace distance between corresponding effects.
    pub fn max_trace_distance(&self, other: &LocalPovm) -> f64 {
        self.effects
            .iter()
            .zip(&other.effects)
            .map(|(a, b)| trace_distance(a, b))
            .fold(0.0, f64::max)
    }
}

/// Canonical duals of a [`LocalPovm`], paired by label.
#[derive(Debug, Clone, PartialEq)]
pub struct DualFrame {
    duals: [Mat2; 6],
    coords: [[f64; 4]; 6],
    condition: f64,
}

impl DualFrame {
    pub fn canonical(povm: &LocalPovm) -> Result<Self> {
        let coords: Vec<Vector4<f64>> = povm.effects.iter().map(|e| Vector4::from(pauli_coords(e))).collect();
        let frame: Matrix4<f64> = coords.iter().map(|c| c * c.transpose()).sum();
        let eig = frame.symmetric_eigenvalues();
        let lo = eig.min();
        let hi = eig.max();
        let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if !(condition < MAX_FRAME_CONDITION) {
            return Err(Error::NotInformationallyComplete { condition });
        }
        let inv = frame
            .try_inverse()
            .ok_or(Error::NotInformationallyComplete { condition })?;
        let mut duals = [Mat2::zeros(); 6];
        let mut dual_coords = [[0.0; 4]; 6];
        for (i, c) in coords.iter().enumerate() {
            let d = inv * c * 2.0;
            dual_coords[i] = [1.0, d[1], d[2], d[3]];
            duals[i] = from_pauli_coords(dual_coords[i]);
        }
        Ok(Self {
            duals,
            coords: dual_coords,
            condition,
        })
    }

    pub fn dual(&self, label: EffectLabel) -> &Mat2 {
        &self.duals[label.index()]
    }

    pub fn condition_number(&self) -> f64 {
        self.condition
    }

    /// `Tr[D_{basis,outcome} σ_axis]`.
    pub fn pauli_weight(&self, axis: Pauli, basis: Basis, outcome: u8) -> f64 {
        self.coords[EffectLabel::new(basis, outcome).index()][axis.index()]
    }

    /// `Σ_i Tr[D_i A] Π_i`; equals `A` for every Hermitian `A`.
    pub fn reconstruct(&self, povm: &LocalPovm, a: &Mat2) -> Mat2 {
        let ac = pauli_coords(a);
        povm.effects
            .iter()
            .zip(&self.coords)
            .map(|(e, d)| {
                let w = 0.5 * (0..4).map(|k| d[k] * ac[k]).sum::<f64>();
                e * Complex64::new(w, 0.0)
            })
            .sum()
    }
}

/// Per-qubit local POVMs with their dual frames, plus a flattened
/// `Tr[D σ]` lookup table for fast ω evaluation.
#[derive(Debug, Clone)]
pub struct ProductPovm {
    locals: Vec<(LocalPovm, DualFrame)>,
    table: Vec<[[f64; 6]; 4]>,
}

impl ProductPovm {
    pub fn new(locals: Vec<LocalPovm>) -> Result<Self> {
        let locals = locals
            .into_iter()
            .map(|p| DualFrame::canonical(&p).map(|d| (p, d)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_pairs(locals))
    }

    pub fn from_pairs(locals: Vec<(LocalPovm, DualFrame)>) -> Self {
        let table = locals
            .iter()
            .map(|(_, d)| {
                let mut t = [[0.0; 6]; 4];
                for (axis, row) in t.iter_mut().enumerate() {
                    for (e, slot) in row.iter_mut().enumerate() {
                        *slot = d.coords[e][axis];
                    }
                }
                t
            })
            .collect();
        Self { locals, table }
    }

    pub fn ideal(dists: &[BasisDistribution]) -> Result<Self> {
        Self::new(dists.iter().map(LocalPovm::ideal).collect())
    }

    pub fn num_qubits(&self) -> usize {
        self.locals.len()
    }

    pub fn local(&self, qubit: usize) -> &LocalPovm {
        &self.locals[qubit].0
    }

    pub fn dual(&self, qubit: usize) -> &DualFrame {
        &self.locals[qubit].1
    }

    /// `table[axis][effect]` for one qubit.
    pub fn weight_table(&self, qubit: usize) -> &[[f64; 6]; 4] {
        &self.table[qubit]
    }

    pub fn locals(&self) -> impl Iterator<Item = &LocalPovm> {
        self.locals.iter().map(|(p, _)| p)
    }

    /// ω for one `(setting, outcome)` pair; `outcome[q]` is 0 or 1.
    pub fn omega_value(&self, obs: &Observable, setting: &[Basis], outcome: &[u8]) -> Result<f64> {
        let n = obs.num_qubits();
        for len in [self.num_qubits(), setting.len(), outcome.len()] {
            if len != n {
                return Err(Error::QubitMismatch { expected: n, found: len });
            }
        }
        let effect: Vec<usize> = setting
            .iter()
            .zip(outcome)
            .map(|(b, &o)| EffectLabel::new(*b, o).index())
            .collect();
        let mut omega = 0.0;
        'terms: for (c, p) in obs.terms() {
            let mut prod = *c;
            for &(q, axis) in p.axes() {
                let w = self.table[q][Pauli::from(axis).index()][effect[q]];
                if w == 0.0 {
                    continue 'terms;
                }
                prod *= w;
            }
            omega += prod;
        }
        Ok(omega)
    }
}

/// Locally biased basis probabilities from per-qubit coefficient mass.
///
/// `p_B(q) ∝ Σ |c_P|` over strings acting as `B` on `q`. Untouched qubits get
/// the symmetric distribution; every entry is raised to at least `floor` and
/// the rest rescaled proportionally.
pub fn lbcs_bias(obs: &Observable, floor: f64) -> Result<Vec<BasisDistribution>> {
    if !(floor > 0.0 && floor <= 1.0 / 3.0 + 1e-15) {
        return Err(Error::InvalidDistribution(format!("floor {floor} outside (0, 1/3]")));
    }
    let mut mass = alloc::vec![[0.0f64; 3]; obs.num_qubits()];
    for (c, p) in obs.terms() {
        for &(q, b) in p.axes() {
            mass[q][b.index()] += c.abs();
        }
    }
    mass.iter()
        .map(|m| {
            let total: f64 = m.iter().sum();
            if !(total > 0.0) {
                return Ok(BasisDistribution::symmetric());
            }
            let p = clamp_to_floor([m[0] / total, m[1] / total, m[2] / total], floor);
            BasisDistribution::with_floor(p[0], p[1], p[2], floor)
        })
        .collect()
}

fn clamp_to_floor(raw: [f64; 3], floor: f64) -> [f64; 3] {
    let mut fixed = [false; 3];
    loop {
        let free_mass = 1.0 - floor * fixed.iter().filter(|&&f| f).count() as f64;
        let free_sum: f64 = (0..3).filter(|&i| !fixed[i]).map(|i| raw[i]).sum();
        let mut out = [floor; 3];
        let mut changed = false;
        let free = fixed.map(|f| !f);
        for i in (0..3).filter(|&i| free[i]) {
            out[i] = raw[i] * free_mass / free_sum;
            if out[i] < floor {
                fixed[i] = true;
                changed = true;
            }
        }
        if !changed {
            return out;
        }
    }
}
