//! Regular and blended job schedules, per-job drift monitoring and QDT
//! consistency checks.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::pauli::Basis;
use crate::qdt::{qdt_circuit_list, InputState, QDT_CIRCUITS};
use crate::sim::{QdtRecord, SettingBlock};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Caps {
    pub circuits_per_job: usize,
    pub shots_per_circuit: u32,
    /// Wall time occupied by one job.
    pub slot_seconds: f64,
}

impl Default for Caps {
    fn default() -> Self {
        Self {
            circuits_per_job: 300,
            shots_per_circuit: 100,
            slot_seconds: 10.0,
        }
    }
}

impl Caps {
    pub fn validate(&self) -> Result<()> {
        if self.circuits_per_job == 0 || self.shots_per_circuit == 0 {
            return Err(Error::InvalidPlan("caps must be at least 1".into()));
        }
        if !(self.slot_seconds > 0.0 && self.slot_seconds.is_finite()) {
            return Err(Error::InvalidPlan(format!("slot length {} must be positive", self.slot_seconds)));
        }
        Ok(())
    }
}

/// Blended QDT runs inside experiment jobs; baseline QDT runs as a separate batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum QdtBatch {
    Blended,
    Baseline,
}

impl QdtBatch {
    pub fn as_str(self) -> &'static str {
        match self {
            QdtBatch::Blended => "blended",
            QdtBatch::Baseline => "baseline",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CircuitRef {
    Experiment { setting: usize },
    Qdt { input: InputState, basis: Basis, batch: QdtBatch },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Circuit {
    pub circuit: CircuitRef,
    pub shots: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Job {
    pub index: usize,
    pub circuits: Vec<Circuit>,
    pub slot_start: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleMode {
    Regular,
    Blended,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    mode: ScheduleMode,
    caps: Caps,
    jobs: Vec<Job>,
}

impl Schedule {
    fn from_job_circuits(mode: ScheduleMode, caps: Caps, jobs: Vec<Vec<Circuit>>) -> Self {
        let jobs = jobs
            .into_iter()
            .enumerate()
            .map(|(index, circuits)| Job {
                index,
                circuits,
                slot_start: index as f64 * caps.slot_seconds,
            })
            .collect();
        Self { mode, caps, jobs }
    }

    pub fn mode(&self) -> ScheduleMode {
        self.mode
    }

    pub fn caps(&self) -> &Caps {
        &self.caps
    }

    pub fn jobs(&self) -> &[Job] {
        &self.jobs
    }

    /// Wall time from the first slot start to the end of the last slot.
    pub fn duration(&self) -> f64 {
        self.jobs.len() as f64 * self.caps.slot_seconds
    }

    pub fn total_shots(&self) -> u64 {
        self.circuits().map(|c| u64::from(c.shots)).sum()
    }

    pub fn experiment_shots(&self) -> u64 {
        self.circuits()
            .filter(|c| matches!(c.circuit, CircuitRef::Experiment { .. }))
            .map(|c| u64::from(c.shots))
            .sum()
    }

    /// Total shots spent on one QDT circuit within one batch.
    pub fn qdt_shots(&self, input: InputState, basis: Basis, batch: QdtBatch) -> u64 {
        let target = CircuitRef::Qdt { input, basis, batch };
        self.circuits().filter(|c| c.circuit == target).map(|c| u64::from(c.shots)).sum()
    }

    fn circuits(&self) -> impl Iterator<Item = &Circuit> {
        self.jobs.iter().flat_map(|j| j.circuits.iter())
    }

    /// Prepends a separate baseline QDT batch, shifting later jobs in time.
    pub fn with_baseline_qdt(self, shots_per_circuit: u64) -> Result<Schedule> {
        let mut jobs = qdt_batch_jobs(shots_per_circuit, QdtBatch::Baseline, &self.caps)?;
        jobs.extend(self.jobs.into_iter().map(|j| j.circuits));
        Ok(Self::from_job_circuits(self.mode, self.caps, jobs))
    }
}

/// Splits `count` items into `parts` contiguous runs of nearly equal length.
fn even_split(count: usize, parts: usize) -> impl Iterator<Item = core::ops::Range<usize>> {
    (0..parts).map(move |j| (j * count / parts)..((j + 1) * count / parts))
}

fn experiment_circuits(range: core::ops::Range<usize>, shots: u32) -> impl Iterator<Item = Circuit> {
    range.map(move |setting| Circuit {
        circuit: CircuitRef::Experiment { setting },
        shots,
    })
}

/// Merges two sequences so that the `b` items sit at evenly spaced positions.
fn interleave(a: Vec<Circuit>, b: Vec<Circuit>) -> Vec<Circuit> {
    let (na, nb) = (a.len(), b.len());
    let total = na + nb;
    let mut out = Vec::with_capacity(total);
    let (mut ia, mut ib) = (a.into_iter(), b.into_iter());
    let (mut taken_a, mut taken_b) = (0, 0);
    for pos in 0..total {
        // the k-th b item lands near position (k + 1/2) · total / nb
        let take_b = taken_b < nb && (taken_a == na || (2 * taken_b + 1) * total <= (2 * pos + 1) * nb);
        if take_b {
            out.extend(ib.next());
            taken_b += 1;
        } else {
            out.extend(ia.next());
            taken_a += 1;
        }
    }
    out
}

fn qdt_batch_jobs(shots_per_circuit: u64, batch: QdtBatch, caps: &Caps) -> Result<Vec<Vec<Circuit>>> {
    caps.validate()?;
    let cap = u64::from(caps.shots_per_circuit);
    let mut instances = Vec::new();
    for (input, basis) in qdt_circuit_list() {
        let mut left = shots_per_circuit;
        while left > 0 {
            let shots = left.min(cap);
            instances.push(Circuit {
                circuit: CircuitRef::Qdt { input, basis, batch },
                shots: shots as u32,
            });
            left -= shots;
        }
    }
    Ok(instances.chunks(caps.circuits_per_job).map(<[Circuit]>::to_vec).collect())
}

/// Every job carries `qdt_repeats` copies of each of the 12 QDT circuits,
/// spread evenly among its experiment circuits.
pub fn blended_schedule(
    num_settings: usize,
    shots_per_setting: u32,
    qdt_repeats: usize,
    qdt_shots: u32,
    caps: Caps,
) -> Result<Schedule> {
    caps.validate()?;
    if num_settings == 0 {
        return Err(Error::InvalidPlan("a blended schedule needs at least one experiment circuit".into()));
    }
    if qdt_repeats == 0 {
        return Err(Error::InvalidPlan("a blended schedule needs at least one QDT repeat per job".into()));
    }
    let qdt_per_job = QDT_CIRCUITS * qdt_repeats;
    if qdt_per_job >= caps.circuits_per_job {
        return Err(Error::InfeasibleCaps(format!(
            "{qdt_per_job} QDT circuits per job leave no room under the cap of {}",
            caps.circuits_per_job
        )));
    }
    check_shots(shots_per_setting, &caps)?;
    check_shots(qdt_shots, &caps)?;
    let per_job = caps.circuits_per_job - qdt_per_job;
    let num_jobs = num_settings.div_ceil(per_job);
    let qdt_block: Vec<Circuit> = (0..qdt_repeats)
        .flat_map(|_| qdt_circuit_list())
        .map(|(input, basis)| Circuit {
            circuit: CircuitRef::Qdt {
                input,
                basis,
                batch: QdtBatch::Blended,
            },
            shots: qdt_shots,
        })
        .collect();
    let jobs = even_split(num_settings, num_jobs)
        .map(|r| interleave(experiment_circuits(r, shots_per_setting).collect(), qdt_block.clone()))
        .collect();
    Ok(Schedule::from_job_circuits(ScheduleMode::Blended, caps, jobs))
}

/// All QDT circuits as a leading batch, then the experiment jobs.
pub fn regular_schedule(num_settings: usize, shots_per_setting: u32, qdt_shots_per_circuit: u64, caps: Caps) -> Result<Schedule> {
    caps.validate()?;
    if num_settings > 0 {
        check_shots(shots_per_setting, &caps)?;
    }
    let mut jobs = qdt_batch_jobs(qdt_shots_per_circuit, QdtBatch::Baseline, &caps)?;
    let num_jobs = num_settings.div_ceil(caps.circuits_per_job);
    jobs.extend(even_split(num_settings, num_jobs).map(|r| experiment_circuits(r, shots_per_setting).collect()));
    Ok(Schedule::from_job_circuits(ScheduleMode::Regular, caps, jobs))
}

fn check_shots(shots: u32, caps: &Caps) -> Result<()> {
    if shots == 0 || shots > caps.shots_per_circuit {
        return Err(Error::InfeasibleCaps(format!(
            "{shots} shots per circuit outside 1..={}",
            caps.shots_per_circuit
        )));
    }
    Ok(())
}

/// Count of one outcome among the shots that matched a restriction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Tally {
    pub hits: u64,
    pub shots: u64,
}

impl Tally {
    pub fn frequency(&self) -> Option<f64> {
        (self.shots > 0).then(|| self.hits as f64 / self.shots as f64)
    }

    /// Binomial standard error `sqrt(p(1 − p)/n)`.
    pub fn sigma(&self) -> Option<f64> {
        self.frequency().map(|p| libm::sqrt(p * (1.0 - p) / self.shots as f64))
    }

    pub fn add(&mut self, other: Tally) {
        self.hits += other.hits;
        self.shots += other.shots;
    }
}

/// Tally of `outcome` on `qubit` over blocks whose setting measures `basis` there.
pub fn tally_blocks<'a>(blocks: impl IntoIterator<Item = &'a SettingBlock>, qubit: usize, basis: Basis, outcome: u8) -> Tally {
    let mut t = Tally::default();
    for b in blocks {
        if b.setting.bases().get(qubit) != Some(&basis) {
            continue;
        }
        for &(o, c) in &b.counts {
            t.shots += u64::from(c);
            if o.bit(qubit) == outcome {
                t.hits += u64::from(c);
            }
        }
    }
    t
}

/// Tally of `outcome` on `qubit` over QDT records of one circuit and batch.
pub fn tally_qdt<'a>(
    records: impl IntoIterator<Item = &'a QdtRecord>,
    qubit: usize,
    input: InputState,
    basis: Basis,
    batch: QdtBatch,
    outcome: u8,
) -> Tally {
    let mut t = Tally::default();
    for r in records {
        if r.input != input || r.basis != basis || r.batch != batch {
            continue;
        }
        if let Some(c) = r.counts.get(qubit) {
            t.shots += u64::from(c[0] + c[1]);
            t.hits += u64::from(c[outcome as usize & 1]);
        }
    }
    t
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftPoint {
    pub job: usize,
    pub time: f64,
    pub tally: Tally,
    pub frequency: Option<f64>,
    pub sigma: Option<f64>,
    /// The job had no shots matching the restriction.
    pub gap: bool,
}

/// Per-job frequency of `expected_outcome` in execution order.
pub fn drift_monitor(blocks: &[SettingBlock], qubit: usize, basis: Basis, expected_outcome: u8) -> Vec<DriftPoint> {
    let mut order: Vec<&SettingBlock> = blocks.iter().collect();
    order.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp).then(a.job_index.cmp(&b.job_index)));
    let mut points: Vec<DriftPoint> = Vec::new();
    for b in order {
        if points.last().map(|p| p.job) != Some(b.job_index) {
            points.push(DriftPoint {
                job: b.job_index,
                time: b.timestamp,
                tally: Tally::default(),
                frequency: None,
                sigma: None,
                gap: true,
            });
        }
        let p = points.last_mut().expect("pushed above");
        p.tally.add(tally_blocks([b], qubit, basis, expected_outcome));
    }
    for p in &mut points {
        p.frequency = p.tally.frequency();
        p.sigma = p.tally.sigma();
        p.gap = p.tally.shots == 0;
    }
    points
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gap {
    pub first: &'static str,
    pub second: &'static str,
    /// `frequency(first) − frequency(second)`.
    pub gap: Option<f64>,
    pub sigma: Option<f64>,
    pub exceeds_three_sigma: bool,
    /// One side had no shots.
    pub empty: bool,
}

fn gap(first: (&'static str, Tally), second: (&'static str, Tally)) -> Gap {
    let (fa, fb) = (first.1.frequency(), second.1.frequency());
    let (g, s) = match (fa, fb, first.1.sigma(), second.1.sigma()) {
        (Some(a), Some(b), Some(sa), Some(sb)) => (Some(a - b), Some(libm::sqrt(sa * sa + sb * sb))),
        _ => (None, None),
    };
    Gap {
        first: first.0,
        second: second.0,
        gap: g,
        sigma: s,
        exceeds_three_sigma: matches!((g, s), (Some(g), Some(s)) if g.abs() > 3.0 * s),
        empty: g.is_none(),
    }
}

/// Pairwise gaps between blended QDT, baseline QDT and experiment frequencies.
pub fn compare_qdt_consistency(blended: Tally, baseline: Tally, experiment: Tally) -> [Gap; 3] {
    [
        gap(("blended", blended), ("experiment", experiment)),
        gap(("baseline", baseline), ("experiment", experiment)),
        gap(("blended", blended), ("baseline", baseline)),
    ]
}
