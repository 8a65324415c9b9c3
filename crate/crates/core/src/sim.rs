//! Setting and shot sampling under a detector model and a job schedule.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::noise::DetectorModel;
use crate::pauli::{Basis, ProductState, MAX_QUBITS};
use crate::povm::BasisDistribution;
use crate::qdt::InputState;
use crate::rng::{keyed_rng, Domain};
use crate::schedule::{Caps, CircuitRef, QdtBatch, Schedule};

/// Joint measurement outcome; bit `q` holds qubit `q`'s reported bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Outcome(pub u64);

impl Outcome {
    pub fn bit(self, qubit: usize) -> u8 {
        ((self.0 >> qubit) & 1) as u8
    }

    pub fn from_bits(bits: &[u8]) -> Self {
        Outcome(bits.iter().enumerate().fold(0, |acc, (q, &b)| acc | (u64::from(b & 1) << q)))
    }

    /// Qubit 0 first.
    pub fn to_bitstring(self, num_qubits: usize) -> String {
        (0..num_qubits).map(|q| if self.bit(q) == 1 { '1' } else { '0' }).collect()
    }

    pub fn parse(bits: &str, num_qubits: usize) -> Result<Self> {
        if bits.len() != num_qubits {
            return Err(Error::QubitMismatch {
                expected: num_qubits,
                found: bits.len(),
            });
        }
        let mut v = 0u64;
        for (q, c) in bits.chars().enumerate() {
            match c {
                '0' => {}
                '1' => v |= 1 << q,
                other => return Err(Error::InvalidState(format!("outcome character {other:?}"))),
            }
        }
        Ok(Outcome(v))
    }
}

/// One basis per qubit.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MeasurementSetting {
    bases: Vec<Basis>,
}

impl MeasurementSetting {
    pub fn new(bases: Vec<Basis>) -> Result<Self> {
        if bases.is_empty() || bases.len() > MAX_QUBITS {
            return Err(Error::TooManyQubits {
                max: MAX_QUBITS,
                found: bases.len(),
            });
        }
        Ok(Self { bases })
    }

    pub fn uniform(num_qubits: usize, basis: Basis) -> Result<Self> {
        Self::new(vec![basis; num_qubits])
    }

    pub fn parse(s: &str) -> Result<Self> {
        let bases = s
            .chars()
            .map(|c| Basis::from_char(c).ok_or_else(|| Error::InvalidState(format!("basis character {c:?}"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(bases)
    }

    pub fn bases(&self) -> &[Basis] {
        &self.bases
    }

    pub fn basis(&self, qubit: usize) -> Basis {
        self.bases[qubit]
    }

    pub fn num_qubits(&self) -> usize {
        self.bases.len()
    }
}

impl fmt::Display for MeasurementSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.bases {
            write!(f, "{}", b.as_char())?;
        }
        Ok(())
    }
}

/// Aggregated outcomes of the `T` shots taken for one setting.
#[derive(Debug, Clone, PartialEq)]
pub struct SettingBlock {
    pub setting_index: usize,
    pub setting: MeasurementSetting,
    /// Distinct outcomes in increasing order with their counts.
    pub counts: Vec<(Outcome, u32)>,
    pub job_index: usize,
    pub timestamp: f64,
}

impl SettingBlock {
    pub fn shots(&self) -> u32 {
        self.counts.iter().map(|c| c.1).sum()
    }

    /// Expands the tally into one bit vector per shot, in outcome order.
    pub fn shot_bits(&self) -> Vec<Vec<u8>> {
        let n = self.setting.num_qubits();
        self.counts
            .iter()
            .flat_map(|&(o, c)| (0..c).map(move |_| (0..n).map(|q| o.bit(q)).collect()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentPlan {
    pub settings: usize,
    pub shots_per_setting: u32,
    pub caps: Caps,
    pub seed: u64,
}

impl ExperimentPlan {
    pub fn new(settings: usize, shots_per_setting: u32, caps: Caps, seed: u64) -> Result<Self> {
        if settings == 0 || shots_per_setting == 0 {
            return Err(Error::InvalidPlan(format!("S = {settings} and T = {shots_per_setting} must be at least 1")));
        }
        caps.validate()?;
        if shots_per_setting > caps.shots_per_circuit {
            return Err(Error::InfeasibleCaps(format!(
                "T = {shots_per_setting} exceeds the shots-per-circuit cap {}",
                caps.shots_per_circuit
            )));
        }
        Ok(Self {
            settings,
            shots_per_setting,
            caps,
            seed,
        })
    }

    pub fn total_shots(&self) -> u64 {
        self.settings as u64 * u64::from(self.shots_per_setting)
    }
}

/// Draws `count` settings, the qubit bases of each from `dists`.
pub fn sample_settings(dists: &[BasisDistribution], count: usize, seed: u64) -> Result<Vec<MeasurementSetting>> {
    if dists.is_empty() || dists.len() > MAX_QUBITS {
        return Err(Error::TooManyQubits {
            max: MAX_QUBITS,
            found: dists.len(),
        });
    }
    Ok((0..count)
        .map(|i| {
            let mut rng = keyed_rng(seed, Domain::Settings, i as u64, 0);
            let bases = dists
                .iter()
                .map(|d| {
                    let u: f64 = rng.random();
                    let [px, py, _] = d.probs();
                    if u < px {
                        Basis::X
                    } else if u < px + py {
                        Basis::Y
                    } else {
                        Basis::Z
                    }
                })
                .collect();
            MeasurementSetting { bases }
        })
        .collect())
}

/// Probability that each qubit reports 1: `Σ_b A[1|b] · P(b | ρ_q, basis_q)`.
pub fn reported_one_probabilities(
    state: &ProductState,
    bases: &[Basis],
    model: &DetectorModel,
    time: f64,
) -> Result<Vec<f64>> {
    bases
        .iter()
        .enumerate()
        .map(|(q, &b)| {
            let a = model.effective_assignment_in_basis(q, b, time)?;
            Ok(a.get(1, 0) * state.outcome_probability(q, b, 0) + a.get(1, 1) * state.outcome_probability(q, b, 1))
        })
        .collect()
}

/// Samples `shots` joint outcomes, one uniform per qubit per shot in
/// shot-major order, and tallies them.
pub fn sample_outcomes(p_one: &[f64], shots: u32, rng: &mut impl Rng) -> Vec<(Outcome, u32)> {
    let mut tally: BTreeMap<Outcome, u32> = BTreeMap::new();
    for _ in 0..shots {
        let mut bits = 0u64;
        for (q, &p) in p_one.iter().enumerate() {
            if rng.random::<f64>() < p {
                bits |= 1 << q;
            }
        }
        *tally.entry(Outcome(bits)).or_insert(0) += 1;
    }
    tally.into_iter().collect()
}

/// Per-qubit tally of one QDT circuit execution.
#[derive(Debug, Clone, PartialEq)]
pub struct QdtRecord {
    pub job_index: usize,
    pub timestamp: f64,
    pub input: InputState,
    pub basis: Basis,
    pub batch: QdtBatch,
    /// `counts[q][b]`: shots in which qubit `q` reported `b`.
    pub counts: Vec<[u32; 2]>,
}

/// Runs a QDT circuit with `input` prepared on every qubit.
pub fn simulate_qdt_shots(
    input: InputState,
    basis: Basis,
    shots: u32,
    model: &DetectorModel,
    time: f64,
    rng: &mut impl Rng,
) -> Result<Vec<[u32; 2]>> {
    let n = model.num_qubits();
    let state = ProductState::new(vec![input.amplitudes(); n])?;
    let p_one = reported_one_probabilities(&state, &vec![basis; n], model, time)?;
    let mut counts = vec![[0u32; 2]; n];
    for (o, c) in sample_outcomes(&p_one, shots, rng) {
        for (q, slot) in counts.iter_mut().enumerate() {
            slot[o.bit(q) as usize] += c;
        }
    }
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq)]
pub enum CircuitOutput {
    Experiment(SettingBlock),
    Qdt(QdtRecord),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimulationOutput {
    /// Experiment blocks in schedule order.
    pub blocks: Vec<SettingBlock>,
    pub qdt: Vec<QdtRecord>,
}

/// Samples every circuit of a schedule. Circuit `(job, position)` draws from
/// its own keyed stream, so circuits may be run in any order or in parallel.
#[derive(Debug, Clone, Copy)]
pub struct ShotSampler<'a> {
    state: &'a ProductState,
    settings: &'a [MeasurementSetting],
    shots_per_setting: u32,
    model: &'a DetectorModel,
    schedule: &'a Schedule,
    seed: u64,
}

impl<'a> ShotSampler<'a> {
    pub fn new(
        state: &'a ProductState,
        settings: &'a [MeasurementSetting],
        shots_per_setting: u32,
        model: &'a DetectorModel,
        schedule: &'a Schedule,
        seed: u64,
    ) -> Result<Self> {
        let n = state.num_qubits();
        if model.num_qubits() != n {
            return Err(Error::QubitMismatch {
                expected: n,
                found: model.num_qubits(),
            });
        }
        if let Some(s) = settings.iter().find(|s| s.num_qubits() != n) {
            return Err(Error::QubitMismatch {
                expected: n,
                found: s.num_qubits(),
            });
        }
        let mut seen = vec![false; settings.len()];
        for job in schedule.jobs() {
            for c in &job.circuits {
                if let CircuitRef::Experiment { setting } = c.circuit {
                    let slot = seen
                        .get_mut(setting)
                        .ok_or_else(|| Error::ScheduleMismatch(format!("setting {setting} is not in the plan")))?;
                    if *slot {
                        return Err(Error::ScheduleMismatch(format!("setting {setting} scheduled twice")));
                    }
                    if c.shots != shots_per_setting {
                        return Err(Error::ScheduleMismatch(format!(
                            "setting {setting} has {} shots, plan says {shots_per_setting}",
                            c.shots
                        )));
                    }
                    *slot = true;
                }
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::ScheduleMismatch(format!("setting {missing} is never scheduled")));
        }
        Ok(Self {
            state,
            settings,
            shots_per_setting,
            model,
            schedule,
            seed,
        })
    }

    pub fn schedule(&self) -> &Schedule {
        self.schedule
    }

    /// Every `(job, position)` pair in schedule order.
    pub fn circuit_keys(&self) -> Vec<(usize, usize)> {
        self.schedule
            .jobs()
            .iter()
            .enumerate()
            .flat_map(|(j, job)| (0..job.circuits.len()).map(move |p| (j, p)))
            .collect()
    }

    pub fn circuit(&self, job: usize, position: usize) -> Result<CircuitOutput> {
        let j = &self.schedule.jobs()[job];
        let c = &j.circuits[position];
        let mut rng = keyed_rng(self.seed, Domain::Shots, j.index as u64, position as u64);
        match c.circuit {
            CircuitRef::Experiment { setting } => {
                let s = &self.settings[setting];
                let p_one = reported_one_probabilities(self.state, s.bases(), self.model, j.slot_start)?;
                Ok(CircuitOutput::Experiment(SettingBlock {
                    setting_index: setting,
                    setting: s.clone(),
                    counts: sample_outcomes(&p_one, c.shots, &mut rng),
                    job_index: j.index,
                    timestamp: j.slot_start,
                }))
            }
            CircuitRef::Qdt { input, basis, batch } => Ok(CircuitOutput::Qdt(QdtRecord {
                job_index: j.index,
                timestamp: j.slot_start,
                input,
                basis,
                batch,
                counts: simulate_qdt_shots(input, basis, c.shots, self.model, j.slot_start, &mut rng)?,
            })),
        }
    }

    /// Collects circuit outputs that were produced in `circuit_keys` order.
    pub fn assemble(&self, outputs: impl IntoIterator<Item = CircuitOutput>) -> SimulationOutput {
        let mut out = SimulationOutput::default();
        for o in outputs {
            match o {
                CircuitOutput::Experiment(b) => out.blocks.push(b),
                CircuitOutput::Qdt(r) => out.qdt.push(r),
            }
        }
        out
    }

    pub fn run(&self) -> Result<SimulationOutput> {
        let outputs = self
            .circuit_keys()
            .into_iter()
            .map(|(j, p)| self.circuit(j, p))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.assemble(outputs))
    }

    pub fn shots_per_setting(&self) -> u32 {
        self.shots_per_setting
    }
}

/// Experiment blocks only; see [`ShotSampler`] for QDT records.
pub fn simulate_shots(
    state: &ProductState,
    settings: &[MeasurementSetting],
    shots_per_setting: u32,
    model: &DetectorModel,
    schedule: &Schedule,
    seed: u64,
) -> Result<Vec<SettingBlock>> {
    Ok(ShotSampler::new(state, settings, shots_per_setting, model, schedule, seed)?.run()?.blocks)
}
