//! Static and telegraph-fluctuating readout noise.
//!
//! Readout noise acts after the (noiseless) basis rotation as a 2×2
//! column-stochastic assignment matrix per qubit. A telegraph process switches
//! an extra flip channel between a good and a bad regime; at time `t` the
//! effective matrix is `flip(regime(t)) · static`.

use alloc::format;
use alloc::vec::Vec;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};
use crate::pauli::Basis;
use crate::povm::{EffectLabel, LocalPovm, Mat2};
use crate::rng::{keyed_rng, Domain};

const STOCHASTIC_TOLERANCE: f64 = 1e-12;

/// `m[reported][ideal]`: probability of reporting `reported` given `ideal`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssignmentMatrix {
    m: [[f64; 2]; 2],
}

impl AssignmentMatrix {
    pub fn new(m: [[f64; 2]; 2]) -> Result<Self> {
        for col in 0..2 {
            let sum = m[0][col] + m[1][col];
            if (sum - 1.0).abs() > STOCHASTIC_TOLERANCE {
                return Err(Error::InvalidAssignment(format!("column {col} sums to {sum}")));
            }
        }
        if m.iter().flatten().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::InvalidAssignment(format!("{m:?} has entries outside [0, 1]")));
        }
        Ok(Self { m })
    }

    pub fn identity() -> Self {
        Self {
            m: [[1.0, 0.0], [0.0, 1.0]],
        }
    }

    /// Same flip probability in both directions.
    pub fn symmetric_flip(p: f64) -> Result<Self> {
        Self::flips(p, p)
    }

    /// `p01`: ideal 0 reported as 1; `p10`: ideal 1 reported as 0.
    pub fn flips(p01: f64, p10: f64) -> Result<Self> {
        Self::new([[1.0 - p01, p10], [p01, 1.0 - p10]])
    }

    pub fn get(&self, reported: u8, ideal: u8) -> f64 {
        self.m[reported as usize][ideal as usize]
    }

    pub fn entries(&self) -> [[f64; 2]; 2] {
        self.m
    }

    /// Probability that ideal 0 is reported as 1.
    pub fn p01(&self) -> f64 {
        self.m[1][0]
    }

    /// Probability that ideal 1 is reported as 0.
    pub fn p10(&self) -> f64 {
        self.m[0][1]
    }

    /// `after · before`: apply `before` first.
    pub fn then(&self, after: &AssignmentMatrix) -> AssignmentMatrix {
        let mut m = [[0.0; 2]; 2];
        for (r, row) in m.iter_mut().enumerate() {
            for (c, slot) in row.iter_mut().enumerate() {
                *slot = (0..2).map(|k| after.m[r][k] * self.m[k][c]).sum();
            }
        }
        AssignmentMatrix { m }
    }

    /// Weighted mixture `Σ w_i A_i` with weights summing to one.
    pub fn mixture(parts: impl IntoIterator<Item = (f64, AssignmentMatrix)>) -> AssignmentMatrix {
        let mut m = [[0.0; 2]; 2];
        for (w, a) in parts {
            for r in 0..2 {
                for c in 0..2 {
                    m[r][c] += w * a.m[r][c];
                }
            }
        }
        AssignmentMatrix { m }
    }
}

/// `Π̃_{B,b} = Σ_{b'} A[b|b'] Π_{B,b'}`.
pub fn noisy_effects(ideal: &LocalPovm, a: &AssignmentMatrix) -> LocalPovm {
    noisy_effects_per_basis(ideal, &[*a; 3])
}

/// As [`noisy_effects`] with a separate matrix per measurement basis.
pub fn noisy_effects_per_basis(ideal: &LocalPovm, a: &[AssignmentMatrix; 3]) -> LocalPovm {
    let mut effects = [Mat2::zeros(); 6];
    for label in EffectLabel::all() {
        let am = &a[label.basis.index()];
        effects[label.index()] = (0..2u8)
            .map(|ideal_bit| {
                ideal.effect(EffectLabel::new(label.basis, ideal_bit)) * Complex64::new(am.get(label.outcome, ideal_bit), 0.0)
            })
            .sum();
    }
    LocalPovm::from_effects_unchecked(effects)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Good,
    Bad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialRegime {
    Good,
    Bad,
    /// Drawn from the stationary distribution of the two-state chain.
    Stationary,
}

/// Unbalanced random telegraph switching of the readout flip probability.
///
/// Flip probabilities are `e` for 0→1 and `one_to_zero_ratio · e` for 1→0
/// (symmetric by default).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TelegraphProcess {
    pub e_good: f64,
    pub e_bad: f64,
    /// Good→bad switching rate in 1/s.
    pub rate_good_to_bad: f64,
    /// Bad→good switching rate in 1/s.
    pub rate_bad_to_good: f64,
    pub initial: InitialRegime,
    pub one_to_zero_ratio: f64,
}

impl TelegraphProcess {
    pub fn new(e_good: f64, e_bad: f64, rate_good_to_bad: f64, rate_bad_to_good: f64, initial: InitialRegime) -> Result<Self> {
        Self {
            e_good,
            e_bad,
            rate_good_to_bad,
            rate_bad_to_good,
            initial,
            one_to_zero_ratio: 1.0,
        }
        .validated()
    }

    pub fn with_asymmetry(mut self, one_to_zero_ratio: f64) -> Result<Self> {
        self.one_to_zero_ratio = one_to_zero_ratio;
        self.validated()
    }

    fn validated(self) -> Result<Self> {
        if !(0.0 <= self.e_good && self.e_good <= self.e_bad && self.e_bad <= 0.5) {
            return Err(Error::InvalidTelegraph(format!(
                "need 0 <= e_good ({}) <= e_bad ({}) <= 0.5",
                self.e_good, self.e_bad
            )));
        }
        if !(self.rate_good_to_bad >= 0.0 && self.rate_bad_to_good >= 0.0)
            || !self.rate_good_to_bad.is_finite()
            || !self.rate_bad_to_good.is_finite()
        {
            return Err(Error::InvalidTelegraph("rates must be finite and non-negative".into()));
        }
        if !(self.one_to_zero_ratio >= 0.0 && self.one_to_zero_ratio * self.e_bad <= 0.5) {
            return Err(Error::InvalidTelegraph(format!("asymmetry {} out of range", self.one_to_zero_ratio)));
        }
        Ok(self)
    }

    pub fn flip(&self, regime: Regime) -> AssignmentMatrix {
        let e = match regime {
            Regime::Good => self.e_good,
            Regime::Bad => self.e_bad,
        };
        AssignmentMatrix {
            m: [[1.0 - e, self.one_to_zero_ratio * e], [e, 1.0 - self.one_to_zero_ratio * e]],
        }
    }

    /// Long-run fraction of time spent in the bad regime.
    pub fn stationary_bad_fraction(&self) -> f64 {
        let total = self.rate_good_to_bad + self.rate_bad_to_good;
        if total > 0.0 {
            self.rate_good_to_bad / total
        } else {
            0.0
        }
    }

    fn exit_rate(&self, regime: Regime) -> f64 {
        match regime {
            Regime::Good => self.rate_good_to_bad,
            Regime::Bad => self.rate_bad_to_good,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub regime: Regime,
}

/// Piecewise-constant regime timeline covering `[0, duration]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeTrajectory {
    duration: f64,
    segments: Vec<Segment>,
}

impl RegimeTrajectory {
    /// Builds a timeline from `(start, regime)` change points; the first must start at 0.
    pub fn from_changes(duration: f64, changes: &[(f64, Regime)]) -> Result<Self> {
        if !(duration > 0.0) {
            return Err(Error::InvalidTelegraph(format!("duration {duration} must be positive")));
        }
        if changes.first().map(|c| c.0) != Some(0.0) {
            return Err(Error::InvalidTelegraph("first change point must be at t = 0".into()));
        }
        let mut segments: Vec<Segment> = Vec::new();
        for (i, &(start, regime)) in changes.iter().enumerate() {
            let end = changes.get(i + 1).map_or(duration, |c| c.0);
            if !(start < end) || end > duration {
                return Err(Error::InvalidTelegraph(format!("change points must increase within [0, {duration})")));
            }
            match segments.last_mut() {
                Some(last) if last.regime == regime => last.end = end,
                _ => segments.push(Segment { start, end, regime }),
            }
        }
        Ok(Self { duration, segments })
    }

    /// A single bad window `[start, end)` inside an otherwise good timeline.
    pub fn bad_window(duration: f64, start: f64, end: f64) -> Result<Self> {
        let mut changes = Vec::new();
        if start > 0.0 {
            changes.push((0.0, Regime::Good));
        }
        changes.push((start.max(0.0), Regime::Bad));
        if end < duration {
            changes.push((end, Regime::Good));
        }
        Self::from_changes(duration, &changes)
    }

    pub fn constant(duration: f64, regime: Regime) -> Result<Self> {
        Self::from_changes(duration, &[(0.0, regime)])
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn regime_at(&self, time: f64) -> Result<Regime> {
        if !(0.0..=self.duration).contains(&time) {
            return Err(Error::TimeOutsideTrajectory {
                time,
                duration: self.duration,
            });
        }
        let i = self.segments.partition_point(|s| s.end <= time);
        Ok(self.segments[i.min(self.segments.len() - 1)].regime)
    }

    /// Fraction of `[0, duration]` spent in the bad regime.
    pub fn bad_fraction(&self) -> f64 {
        self.segments
            .iter()
            .filter(|s| s.regime == Regime::Bad)
            .map(|s| s.end - s.start)
            .sum::<f64>()
            / self.duration
    }
}

/// Samples a timeline with exponential holding times.
pub fn sample_regime_trajectory(process: &TelegraphProcess, duration: f64, seed: u64) -> Result<RegimeTrajectory> {
    let mut rng = keyed_rng(seed, Domain::Trajectory, 0, 0);
    sample_regime_trajectory_with(process, duration, &mut rng)
}

pub fn sample_regime_trajectory_with(process: &TelegraphProcess, duration: f64, rng: &mut impl Rng) -> Result<RegimeTrajectory> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::InvalidTelegraph(format!("duration {duration} must be positive")));
    }
    let mut regime = match process.initial {
        InitialRegime::Good => Regime::Good,
        InitialRegime::Bad => Regime::Bad,
        InitialRegime::Stationary => {
            if rng.random::<f64>() < process.stationary_bad_fraction() {
                Regime::Bad
            } else {
                Regime::Good
            }
        }
    };
    let mut changes = Vec::new();
    let mut t = 0.0;
    while t < duration {
        changes.push((t, regime));
        let rate = process.exit_rate(regime);
        if rate <= 0.0 {
            break;
        }
        let hold = Exp::new(rate).map_err(|_| Error::InvalidTelegraph("bad rate".into()))?.sample(rng);
        t += hold;
        regime = match regime {
            Regime::Good => Regime::Bad,
            Regime::Bad => Regime::Good,
        };
    }
    // holding times below the float resolution of `t` collapse onto one point
    changes.dedup_by(|b, a| {
        if b.0 <= a.0 {
            a.1 = b.1;
            true
        } else {
            false
        }
    });
    RegimeTrajectory::from_changes(duration, &changes)
}

/// A telegraph process together with its realized timeline.
#[derive(Debug, Clone, PartialEq)]
pub struct Fluctuation {
    pub process: TelegraphProcess,
    pub trajectory: RegimeTrajectory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QubitDetector {
    pub static_matrix: AssignmentMatrix,
    /// Optional basis-dependent static matrices, replacing `static_matrix`.
    pub per_basis: Option<[AssignmentMatrix; 3]>,
    pub fluctuation: Option<Fluctuation>,
}

impl QubitDetector {
    pub fn static_only(static_matrix: AssignmentMatrix) -> Self {
        Self {
            static_matrix,
            per_basis: None,
            fluctuation: None,
        }
    }
}

/// Per-qubit readout noise, independent across qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    qubits: Vec<QubitDetector>,
}

impl DetectorModel {
    pub fn new(qubits: Vec<QubitDetector>) -> Self {
        Self { qubits }
    }

    pub fn noiseless(num_qubits: usize) -> Self {
        Self::uniform(num_qubits, AssignmentMatrix::identity())
    }

    pub fn uniform(num_qubits: usize, a: AssignmentMatrix) -> Self {
        Self::new((0..num_qubits).map(|_| QubitDetector::static_only(a)).collect())
    }

    pub fn from_static(matrices: Vec<AssignmentMatrix>) -> Self {
        Self::new(matrices.into_iter().map(QubitDetector::static_only).collect())
    }

    pub fn num_qubits(&self) -> usize {
        self.qubits.len()
    }

    pub fn qubit(&self, q: usize) -> &QubitDetector {
        &self.qubits[q]
    }

    pub fn qubit_mut(&mut self, q: usize) -> &mut QubitDetector {
        &mut self.qubits[q]
    }

    /// Attaches a telegraph process with an explicit timeline.
    pub fn with_fluctuation(mut self, qubit: usize, process: TelegraphProcess, trajectory: RegimeTrajectory) -> Result<Self> {
        let n = self.qubits.len();
        let slot = self.qubits.get_mut(qubit).ok_or(Error::QubitOutOfRange { index: qubit, num_qubits: n })?;
        slot.fluctuation = Some(Fluctuation { process, trajectory });
        Ok(self)
    }

    /// Attaches a telegraph process, sampling its timeline from a per-qubit stream.
    pub fn with_sampled_fluctuation(self, qubit: usize, process: TelegraphProcess, duration: f64, seed: u64) -> Result<Self> {
        let mut rng = keyed_rng(seed, Domain::Trajectory, qubit as u64, 1);
        let trajectory = sample_regime_trajectory_with(&process, duration, &mut rng)?;
        self.with_fluctuation(qubit, process, trajectory)
    }

    fn detector(&self, qubit: usize) -> Result<&QubitDetector> {
        self.qubits.get(qubit).ok_or(Error::QubitOutOfRange {
            index: qubit,
            num_qubits: self.qubits.len(),
        })
    }

    /// Effective matrix at `time`; the telegraph flip acts after the static matrix.
    pub fn effective_assignment(&self, qubit: usize, time: f64) -> Result<AssignmentMatrix> {
        let d = self.detector(qubit)?;
        compose(d, d.static_matrix, time)
    }

    pub fn effective_assignment_in_basis(&self, qubit: usize, basis: Basis, time: f64) -> Result<AssignmentMatrix> {
        let d = self.detector(qubit)?;
        let base = d.per_basis.map_or(d.static_matrix, |m| m[basis.index()]);
        compose(d, base, time)
    }

    /// Duration-weighted average of the noisy effects over `trajectory`,
    /// using this qubit's static matrix and telegraph flip probabilities.
    pub fn time_averaged_effects(&self, ideal: &LocalPovm, qubit: usize, trajectory: &RegimeTrajectory) -> Result<LocalPovm> {
        let d = self.detector(qubit)?;
        let averaged = |base: AssignmentMatrix| match &d.fluctuation {
            None => base,
            Some(f) => AssignmentMatrix::mixture(trajectory.segments().iter().map(|s| {
                ((s.end - s.start) / trajectory.duration(), base.then(&f.process.flip(s.regime)))
            })),
        };
        let per_basis = match d.per_basis {
            Some(m) => [averaged(m[0]), averaged(m[1]), averaged(m[2])],
            None => [averaged(d.static_matrix); 3],
        };
        Ok(noisy_effects_per_basis(ideal, &per_basis))
    }

    /// The POVM actually implemented at `time` for each qubit.
    pub fn effects_at(&self, ideal: &[LocalPovm], time: f64) -> Result<Vec<LocalPovm>> {
        ideal
            .iter()
            .enumerate()
            .map(|(q, p)| {
                let per_basis = [
                    self.effective_assignment_in_basis(q, Basis::X, time)?,
                    self.effective_assignment_in_basis(q, Basis::Y, time)?,
                    self.effective_assignment_in_basis(q, Basis::Z, time)?,
                ];
                Ok(noisy_effects_per_basis(p, &per_basis))
            })
            .collect()
    }
}

fn compose(d: &QubitDetector, base: AssignmentMatrix, time: f64) -> Result<AssignmentMatrix> {
    match &d.fluctuation {
        None => Ok(base),
        Some(f) => Ok(base.then(&f.process.flip(f.trajectory.regime_at(time)?))),
    }
}
