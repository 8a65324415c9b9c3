//! Config-driven experiment pipeline.

use std::fs;

use icmeas_core::estimator::{curve_from_stats, estimate_from_stats, log_grid, BlockStats, CurvePoint, OmegaEvaluator};
use icmeas_core::noise::{Regime, RegimeTrajectory, TelegraphProcess};
use icmeas_core::pauli::{chemistry_like_observable, random_observable};
use icmeas_core::povm::{lbcs_bias, pauli_coords};
use icmeas_core::qdt::{recover_local_povm, InputState};
use icmeas_core::rng::{keyed_rng, sub_seed, Domain};
use icmeas_core::schedule::{
    blended_schedule, compare_qdt_consistency, drift_monitor, regular_schedule, tally_blocks, tally_qdt, DriftPoint, Gap, QdtBatch, Tally,
};
use icmeas_core::sim::{sample_settings, ShotSampler, SimulationOutput};
use icmeas_core::{
    AssignmentMatrix, Basis, BasisDistribution, DetectorModel, Error as CoreError, EstimateReport, LocalPovm, Observable, ProductPovm,
    ProductState, Recovery, RecoverySettings, Schedule, SettingBlock, TomographyData,
};
use rand::Rng;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, ObservableSpec, SchemeKind, TelegraphSpec};
use crate::error::{ConfigError, Context, HarnessError, Result};

pub const LABEL_IDEAL: &str = "ideal";
pub const LABEL_QDT: &str = "qdt";
pub const LABEL_BASELINE: &str = "qdt_baseline";

/// Report label for the effects recovered from one QDT batch.
pub fn batch_label(batch: QdtBatch) -> &'static str {
    match batch {
        QdtBatch::Blended => LABEL_QDT,
        QdtBatch::Baseline => LABEL_BASELINE,
    }
}

pub fn known_label(s: &str) -> Option<&'static str> {
    [LABEL_IDEAL, LABEL_QDT, LABEL_BASELINE].into_iter().find(|l| *l == s)
}

fn origin(config: &ExperimentConfig) -> String {
    config.source.as_ref().map_or_else(|| "<config>".into(), |p| p.display().to_string())
}

/// Parts shared by every repetition.
#[derive(Debug, Clone)]
pub struct Setup {
    pub observable: Observable,
    pub state: ProductState,
    pub dists: Vec<BasisDistribution>,
    pub reference: f64,
    pub schedule: Schedule,
    /// Static readout noise; telegraph timelines are attached per repetition.
    pub static_model: DetectorModel,
}

pub fn build_observable(config: &ExperimentConfig) -> Result<Observable> {
    let at = || format!("{}: observable", origin(config));
    match &config.observable {
        ObservableSpec::File { path } => {
            let path = config.resolve(path);
            let text = fs::read_to_string(&path).map_err(HarnessError::io(&path))?;
            Observable::parse(&text).context(|| format!("{}: {}", at(), path.display()))
        }
        ObservableSpec::Random { qubits, terms, scale, seed } => {
            random_observable(*qubits, *terms, *scale, seed.unwrap_or(config.seed)).context(at)
        }
        ObservableSpec::Chemistry {
            qubits,
            terms,
            scale,
            offdiagonal_ratio,
            seed,
        } => chemistry_like_observable(*qubits, *terms, *scale, *offdiagonal_ratio, seed.unwrap_or(config.seed)).context(at),
    }
}

pub fn build_state(config: &ExperimentConfig, observable: &Observable) -> Result<ProductState> {
    let at = || format!("{}: state", origin(config));
    let spec = &config.state;
    match (&spec.bits, &spec.bloch, spec.diagonal_ground) {
        (Some(bits), None, false) => ProductState::from_bitstring(bits).context(at),
        (None, Some(angles), false) => {
            ProductState::from_bloch_angles(&angles.iter().map(|a| (a[0], a[1])).collect::<Vec<_>>()).context(at)
        }
        (None, None, true) => {
            let bits = observable.lowest_diagonal_bits().context(at)?;
            ProductState::from_bits(&bits).context(at)
        }
        _ => Err(ConfigError::Invalid {
            field: "state".into(),
            message: "give exactly one of `bits`, `bloch` or `diagonal_ground`".into(),
        }
        .into()),
    }
}

pub fn build_dists(config: &ExperimentConfig, observable: &Observable) -> Result<Vec<BasisDistribution>> {
    match config.scheme.kind {
        SchemeKind::Cs => Ok(vec![BasisDistribution::symmetric(); observable.num_qubits()]),
        SchemeKind::Lbcs => lbcs_bias(observable, config.scheme.floor).context(|| format!("{}: scheme", origin(config))),
    }
}

pub fn build_schedule(config: &ExperimentConfig) -> Result<Schedule> {
    let at = || format!("{}: schedule", origin(config));
    let (plan, qdt, caps) = (&config.plan, &config.qdt, config.schedule.caps());
    let schedule = match (config.schedule.mode, qdt.enabled) {
        (crate::config::ModeSpec::Blended, _) => {
            let s = blended_schedule(plan.settings, plan.shots, qdt.repeats, qdt.shots, caps).context(at)?;
            if qdt.baseline_shots > 0 {
                s.with_baseline_qdt(qdt.baseline_shots).context(at)?
            } else {
                s
            }
        }
        (crate::config::ModeSpec::Regular, enabled) => {
            regular_schedule(plan.settings, plan.shots, if enabled { qdt.baseline_shots } else { 0 }, caps).context(at)?
        }
    };
    Ok(schedule)
}

/// Static assignment matrices declared by `[noise]`.
pub fn build_static_model(config: &ExperimentConfig, num_qubits: usize) -> Result<DetectorModel> {
    let at = || format!("{}: noise", origin(config));
    let noise = &config.noise;
    let matrices: Vec<AssignmentMatrix> = if let Some(p) = noise.flip {
        vec![AssignmentMatrix::symmetric_flip(p).context(at)?; num_qubits]
    } else if let Some([lo, hi]) = noise.flip_range {
        (0..num_qubits)
            .map(|q| {
                let u: f64 = keyed_rng(config.seed, Domain::Noise, q as u64, 0).random();
                AssignmentMatrix::symmetric_flip(lo + (hi - lo) * u).context(at)
            })
            .collect::<Result<_>>()?
    } else if let Some(flips) = &noise.flips {
        flips.iter().map(|&[a, b]| AssignmentMatrix::flips(a, b).context(at)).collect::<Result<_>>()?
    } else {
        vec![AssignmentMatrix::identity(); num_qubits]
    };
    if matrices.len() != num_qubits {
        return Err(ConfigError::Invalid {
            field: "noise.flips".into(),
            message: format!("{} entries for {num_qubits} qubits", matrices.len()),
        }
        .into());
    }
    Ok(DetectorModel::from_static(matrices))
}

fn telegraph_process(spec: &TelegraphSpec) -> icmeas_core::Result<TelegraphProcess> {
    TelegraphProcess::new(spec.e_good, spec.e_bad, spec.rate_good_to_bad, spec.rate_bad_to_good, spec.initial.into())?
        .with_asymmetry(spec.one_to_zero_ratio)
}

/// Timeline from fixed windows, clipped to `[0, duration]`.
fn windowed_trajectory(spec: &TelegraphSpec, windows: &[[f64; 2]], duration: f64) -> icmeas_core::Result<RegimeTrajectory> {
    let scale = if spec.relative_windows { duration } else { 1.0 };
    let mut changes: Vec<(f64, Regime)> = vec![(0.0, Regime::Good)];
    for &[s, e] in windows {
        let (s, e) = ((s * scale).min(duration), (e * scale).min(duration));
        if s >= e {
            continue;
        }
        match changes.last_mut() {
            Some(last) if last.0 == s => last.1 = Regime::Bad,
            _ => changes.push((s, Regime::Bad)),
        }
        if e < duration {
            changes.push((e, Regime::Good));
        }
    }
    RegimeTrajectory::from_changes(duration, &changes)
}

/// Adds the configured telegraph processes; sampled timelines use `seed`.
pub fn attach_telegraph(config: &ExperimentConfig, model: DetectorModel, duration: f64, seed: u64) -> Result<DetectorModel> {
    let mut model = model;
    for (i, spec) in config.noise.telegraph.iter().enumerate() {
        let at = || format!("{}: noise.telegraph[{i}]", origin(config));
        let process = telegraph_process(spec).context(at)?;
        model = match &spec.bad_windows {
            Some(w) => {
                let trajectory = windowed_trajectory(spec, w, duration).context(at)?;
                model.with_fluctuation(spec.qubit, process, trajectory).context(at)?
            }
            None => model.with_sampled_fluctuation(spec.qubit, process, duration, seed).context(at)?,
        };
    }
    Ok(model)
}

pub fn prepare(config: &ExperimentConfig) -> Result<Setup> {
    let observable = build_observable(config)?;
    let state = build_state(config, &observable)?;
    let n = observable.num_qubits();
    if state.num_qubits() != n {
        return Err(ConfigError::Invalid {
            field: "state".into(),
            message: format!("{} qubits but the observable has {n}", state.num_qubits()),
        }
        .into());
    }
    if let Some(t) = config.noise.telegraph.iter().find(|t| t.qubit >= n) {
        return Err(ConfigError::Invalid {
            field: "noise.telegraph".into(),
            message: format!("qubit {} out of range for {n} qubits", t.qubit),
        }
        .into());
    }
    let reference = observable.exact_expectation(&state).context(|| format!("{}: reference energy", origin(config)))?;
    Ok(Setup {
        dists: build_dists(config, &observable)?,
        schedule: build_schedule(config)?,
        static_model: build_static_model(config, n)?,
        observable,
        state,
        reference,
    })
}

/// Samples every circuit in parallel; the result is independent of thread count.
pub fn simulate(sampler: &ShotSampler<'_>) -> icmeas_core::Result<SimulationOutput> {
    let outputs = sampler
        .circuit_keys()
        .par_iter()
        .map(|&(job, pos)| sampler.circuit(job, pos))
        .collect::<icmeas_core::Result<Vec<_>>>()?;
    Ok(sampler.assemble(outputs))
}

/// Per-block statistics in parallel, folded sequentially in block order.
pub fn block_stats(observable: &Observable, povm: &ProductPovm, blocks: &[SettingBlock]) -> icmeas_core::Result<Vec<BlockStats>> {
    let eval = OmegaEvaluator::new(observable, povm)?;
    blocks.par_iter().map(|b| eval.block_stats(b)).collect()
}

pub fn curve_grid(settings: usize, min: usize, points: usize) -> Vec<usize> {
    log_grid(min.min(settings).max(1), settings, points)
}

#[derive(Debug, Clone)]
pub struct Estimate {
    pub label: &'static str,
    pub povm: ProductPovm,
    pub report: EstimateReport,
    pub curve: Vec<CurvePoint>,
}

pub fn estimate_with(
    label: &'static str,
    observable: &Observable,
    povm: ProductPovm,
    blocks: &[SettingBlock],
    grid: &[usize],
    reference: Option<f64>,
) -> icmeas_core::Result<Estimate> {
    let stats = block_stats(observable, &povm, blocks)?;
    let report = estimate_from_stats(&stats)?;
    if report.variance_clamped {
        log::warn!("{label}: negative plug-in variance clamped to zero");
    }
    let curve = curve_from_stats(&stats, grid, reference)?;
    Ok(Estimate {
        label,
        povm,
        report,
        curve,
    })
}

pub fn recovery_settings(config: &ExperimentConfig) -> RecoverySettings {
    RecoverySettings {
        max_iterations: config.qdt.max_iterations,
        tolerance: config.qdt.tolerance,
        ..RecoverySettings::default()
    }
}

/// Per-qubit maximum-likelihood fits; a fit that stops short of the
/// tolerance is kept with a warning.
pub fn recover(data: &TomographyData, settings: &RecoverySettings) -> icmeas_core::Result<Vec<Recovery>> {
    data.qubits
        .par_iter()
        .enumerate()
        .map(|(q, t)| match recover_local_povm(t, settings) {
            Ok(r) => Ok(r),
            Err(CoreError::NonConvergence { best }) => {
                log::warn!("qubit {q}: detector tomography stopped after {} iterations without converging", best.iterations);
                Ok(*best)
            }
            Err(CoreError::DegenerateData { .. }) => Err(CoreError::DegenerateData { qubit: q }),
            Err(e) => Err(e),
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct BatchFit {
    pub batch: QdtBatch,
    pub data: TomographyData,
    pub recoveries: Vec<Recovery>,
}

impl BatchFit {
    pub fn povm(&self) -> icmeas_core::Result<ProductPovm> {
        ProductPovm::new(self.recoveries.iter().map(|r| r.povm.clone()).collect())
    }
}

#[derive(Debug, Clone)]
pub struct Monitoring {
    pub qubit: usize,
    pub basis: Basis,
    pub outcome: u8,
    /// QDT input whose state matches the monitored qubit, if any.
    pub input: Option<InputState>,
    pub drift: Vec<DriftPoint>,
    pub consistency: Option<[Gap; 3]>,
}

/// QDT input with the same Bloch vector as `state`'s qubit.
pub fn matching_input(state: &ProductState, qubit: usize) -> Option<InputState> {
    let b = state.bloch(qubit);
    InputState::ALL.into_iter().find(|i| {
        let c = pauli_coords(&i.density());
        (0..3).all(|k| (c[k + 1] - b[k]).abs() < 1e-9)
    })
}

pub fn tomography_tally(data: &TomographyData, qubit: usize, input: InputState, basis: Basis, outcome: u8) -> Tally {
    let c = data.qubits[qubit].counts[input.index()][basis.index()];
    Tally {
        hits: c[outcome as usize] as u64,
        shots: (c[0] + c[1]) as u64,
    }
}

pub fn monitor(
    blocks: &[SettingBlock],
    output: &SimulationOutput,
    state: &ProductState,
    qubit: usize,
    basis: Basis,
    outcome: Option<u8>,
) -> Monitoring {
    let outcome = outcome.unwrap_or(u8::from(state.outcome_probability(qubit, basis, 1) > 0.5));
    let input = matching_input(state, qubit);
    let consistency = input.map(|i| {
        let t = |batch| tally_qdt(&output.qdt, qubit, i, basis, batch, outcome);
        compare_qdt_consistency(t(QdtBatch::Blended), t(QdtBatch::Baseline), tally_blocks(blocks, qubit, basis, outcome))
    });
    Monitoring {
        qubit,
        basis,
        outcome,
        input,
        drift: drift_monitor(blocks, qubit, basis, outcome),
        consistency,
    }
}

#[derive(Debug, Clone)]
pub struct Repetition {
    pub index: usize,
    pub seed: u64,
    pub model: DetectorModel,
    pub output: SimulationOutput,
    pub fits: Vec<BatchFit>,
    /// `ideal` first, then one per QDT batch present.
    pub estimates: Vec<Estimate>,
    pub monitor: Option<Monitoring>,
}

impl Repetition {
    pub fn estimate(&self, label: &str) -> Option<&Estimate> {
        self.estimates.iter().find(|e| e.label == label)
    }

    /// The estimate that threshold checks apply to.
    pub fn primary(&self, config: &ExperimentConfig) -> &Estimate {
        let qdt = config.qdt.use_qdt_effects.then(|| self.estimate(LABEL_QDT).or_else(|| self.estimate(LABEL_BASELINE)));
        qdt.flatten().unwrap_or(&self.estimates[0])
    }
}

pub fn repetition_seed(config: &ExperimentConfig, index: usize) -> u64 {
    sub_seed(config.seed, Domain::Repetition, index as u64)
}

pub fn run_repetition(config: &ExperimentConfig, setup: &Setup, index: usize) -> Result<Repetition> {
    let seed = repetition_seed(config, index);
    let at = |what: &str| {
        let o = origin(config);
        let what = what.to_string();
        move || format!("{o}: repetition {index}: {what}")
    };
    let model = attach_telegraph(config, setup.static_model.clone(), setup.schedule.duration(), seed)?;
    let settings = sample_settings(&setup.dists, config.plan.settings, seed).context(at("settings"))?;
    let sampler =
        ShotSampler::new(&setup.state, &settings, config.plan.shots, &model, &setup.schedule, seed).context(at("shot sampling"))?;
    let output = simulate(&sampler).context(at("shot sampling"))?;
    drop(settings);

    let grid = curve_grid(config.plan.settings, config.report.curve_min_settings, config.report.curve_points);
    let reference = Some(setup.reference);
    let ideal = ProductPovm::ideal(&setup.dists).context(at("ideal effects"))?;
    let mut estimates =
        vec![estimate_with(LABEL_IDEAL, &setup.observable, ideal, &output.blocks, &grid, reference).context(at("ideal estimate"))?];

    let mut fits = Vec::new();
    let settings = recovery_settings(config);
    for batch in [QdtBatch::Blended, QdtBatch::Baseline] {
        if !output.qdt.iter().any(|r| r.batch == batch) {
            continue;
        }
        let label = batch_label(batch);
        let data = TomographyData::from_records(&output.qdt, batch, &setup.dists).context(at(label))?;
        let recoveries = recover(&data, &settings).context(at(&format!("{label} detector tomography")))?;
        let fit = BatchFit { batch, data, recoveries };
        let povm = fit.povm().context(at(&format!("{label} effects")))?;
        estimates.push(estimate_with(label, &setup.observable, povm, &output.blocks, &grid, reference).context(at(label))?);
        fits.push(fit);
    }

    let monitor = config.monitor.as_ref().map(|m| {
        let basis = m.basis().expect("validated");
        monitor(&output.blocks, &output, &setup.state, m.qubit, basis, m.outcome)
    });
    Ok(Repetition {
        index,
        seed,
        model,
        output,
        fits,
        estimates,
        monitor,
    })
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub config: ExperimentConfig,
    pub setup: Setup,
    pub repetitions: Vec<Repetition>,
}

/// Runs every repetition concurrently; results are in repetition order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunResult> {
    config.validate()?;
    let setup = prepare(config)?;
    let repetitions = (0..config.repetitions)
        .into_par_iter()
        .map(|i| run_repetition(config, &setup, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(RunResult {
        config: config.clone(),
        setup,
        repetitions,
    })
}

/// Side-by-side results of a scheme pair, one row per repetition.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub repetition: usize,
    pub qubits: usize,
    pub settings: u64,
    pub shots_per_setting: u32,
    pub first: SchemeResult,
    pub second: SchemeResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeResult {
    pub scheme: SchemeKind,
    pub label: &'static str,
    pub std_err: Option<f64>,
    pub abs_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    /// Repetitions where the second scheme has the smaller standard error.
    pub fn second_wins(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| matches!((r.first.std_err, r.second.std_err), (Some(a), Some(b)) if b < a))
            .count()
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("qubits,repetition,S,T,first_scheme,first_std_err,first_abs_err,second_scheme,second_std_err,second_abs_err\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.qubits,
                r.repetition,
                r.settings,
                r.shots_per_setting,
                r.first.scheme.as_str(),
                crate::formats::opt(r.first.std_err),
                crate::formats::num(r.first.abs_err),
                r.second.scheme.as_str(),
                crate::formats::opt(r.second.std_err),
                crate::formats::num(r.second.abs_err),
            ));
        }
        out
    }
}

fn mismatch(message: String) -> HarnessError {
    ConfigError::Invalid {
        field: "pair".into(),
        message,
    }
    .into()
}

/// Runs two configs that differ only in the measurement scheme.
pub fn compare_schemes(first: &ExperimentConfig, second: &ExperimentConfig) -> Result<Comparison> {
    first.validate()?;
    second.validate()?;
    let (oa, ob) = (build_observable(first)?, build_observable(second)?);
    if oa.num_qubits() != ob.num_qubits() {
        return Err(mismatch(format!("{} vs {} qubits", oa.num_qubits(), ob.num_qubits())));
    }
    if oa != ob {
        return Err(mismatch("observables differ".into()));
    }
    if build_state(first, &oa)? != build_state(second, &ob)? {
        return Err(mismatch("states differ".into()));
    }
    if first.noise != second.noise {
        return Err(mismatch("noise models differ".into()));
    }
    if first.plan != second.plan || first.seed != second.seed || first.repetitions != second.repetitions {
        return Err(mismatch("plans, seeds or repetition counts differ".into()));
    }
    let (ra, rb) = rayon::join(|| run_experiment(first), || run_experiment(second));
    let (ra, rb) = (ra?, rb?);
    let side = |run: &RunResult, rep: &Repetition| {
        let e = rep.primary(&run.config);
        SchemeResult {
            scheme: run.config.scheme.kind,
            label: e.label,
            std_err: e.report.standard_error,
            abs_err: (e.report.mean - run.setup.reference).abs(),
        }
    };
    let rows = ra
        .repetitions
        .iter()
        .zip(&rb.repetitions)
        .map(|(a, b)| ComparisonRow {
            repetition: a.index,
            qubits: oa.num_qubits(),
            settings: a.estimates[0].report.settings,
            shots_per_setting: a.estimates[0].report.shots_per_setting,
            first: side(&ra, a),
            second: side(&rb, b),
        })
        .collect();
    Ok(Comparison { rows })
}

/// A standalone detector tomography run.
#[derive(Debug, Clone)]
pub struct QdtRun {
    pub data: TomographyData,
    pub recoveries: Vec<Recovery>,
    /// Effects the detector implemented on average over the run.
    pub truth: Vec<LocalPovm>,
    pub schedule: Schedule,
}

impl QdtRun {
    /// Largest per-effect trace distance to the truth, per qubit.
    pub fn distances(&self) -> Vec<f64> {
        self.recoveries.iter().zip(&self.truth).map(|(r, t)| r.povm.max_trace_distance(t)).collect()
    }
}

fn averaged_truth(model: &DetectorModel, dists: &[BasisDistribution], duration: f64) -> icmeas_core::Result<Vec<LocalPovm>> {
    dists
        .iter()
        .enumerate()
        .map(|(q, d)| {
            let ideal = LocalPovm::ideal(d);
            match &model.qubit(q).fluctuation {
                Some(f) => model.time_averaged_effects(&ideal, q, &f.trajectory),
                None => model.time_averaged_effects(&ideal, q, &RegimeTrajectory::constant(duration.max(1.0), Regime::Good)?),
            }
        })
        .collect()
}

/// Simulates one batch of `shots_per_circuit` shots on each of the 12 QDT circuits and fits it.
pub fn run_qdt(config: &ExperimentConfig, shots_per_circuit: u64) -> Result<QdtRun> {
    config.validate()?;
    let setup = prepare(config)?;
    let at = || format!("{}: detector tomography", origin(config));
    let schedule = regular_schedule(0, 1, shots_per_circuit, config.schedule.caps()).context(at)?;
    let seed = repetition_seed(config, 0);
    let model = attach_telegraph(config, setup.static_model.clone(), schedule.duration(), seed)?;
    let sampler = ShotSampler::new(&setup.state, &[], 1, &model, &schedule, seed).context(at)?;
    let output = simulate(&sampler).context(at)?;
    let data = TomographyData::from_records(&output.qdt, QdtBatch::Baseline, &setup.dists).context(at)?;
    let recoveries = recover(&data, &recovery_settings(config)).context(at)?;
    let truth = averaged_truth(&model, &setup.dists, schedule.duration()).context(at)?;
    Ok(QdtRun {
        data,
        recoveries,
        truth,
        schedule,
    })
}

/// Fits counts read from a tomography table.
pub fn recover_counts(config: &ExperimentConfig, data: &TomographyData) -> Result<Vec<Recovery>> {
    recover(data, &recovery_settings(config)).context(|| format!("{}: detector tomography", origin(config)))
}
