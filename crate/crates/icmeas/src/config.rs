//! TOML experiment configuration.

use std::fs;
use std::path::{Path, PathBuf};

use icmeas_core::noise::InitialRegime;
use icmeas_core::povm::DEFAULT_FLOOR;
use icmeas_core::schedule::{Caps, ScheduleMode};
use icmeas_core::Basis;
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// One document fully determines an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub observable: ObservableSpec,
    pub state: StateSpec,
    #[serde(default)]
    pub scheme: SchemeSpec,
    pub plan: PlanSpec,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub qdt: QdtSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monitor: Option<MonitorSpec>,
    #[serde(default)]
    pub report: ReportSpec,
    /// File the config was read from; relative paths resolve against its directory.
    #[serde(skip)]
    pub source: Option<PathBuf>,
}

fn default_repetitions() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ObservableSpec {
    File {
        path: PathBuf,
    },
    Random {
        qubits: usize,
        terms: usize,
        #[serde(default = "default_scale")]
        scale: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    /// Diagonal-dominated synthetic Hamiltonian.
    Chemistry {
        qubits: usize,
        terms: usize,
        #[serde(default = "default_scale")]
        scale: f64,
        #[serde(default = "default_offdiagonal")]
        offdiagonal_ratio: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
}

fn default_scale() -> f64 {
    1.0
}

fn default_offdiagonal() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSpec {
    /// Computational basis state, qubit 0 first.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bits: Option<String>,
    /// Per-qubit `[theta, phi]` in radians.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bloch: Option<Vec<[f64; 2]>>,
    /// Use the computational basis state of lowest diagonal energy.
    #[serde(default, skip_serializing_if = "is_false")]
    pub diagonal_ground: bool,
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    Cs,
    Lbcs,
}

impl SchemeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SchemeKind::Cs => "cs",
            SchemeKind::Lbcs => "lbcs",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSpec {
    pub kind: SchemeKind,
    #[serde(default = "default_floor")]
    pub floor: f64,
}

fn default_floor() -> f64 {
    DEFAULT_FLOOR
}

impl Default for SchemeSpec {
    fn default() -> Self {
        Self {
            kind: SchemeKind::Cs,
            floor: DEFAULT_FLOOR,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSpec {
    pub settings: usize,
    pub shots: u32,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    /// Symmetric flip probability on every qubit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flip: Option<f64>,
    /// Per-qubit symmetric flips drawn uniformly from `[lo, hi]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flip_range: Option<[f64; 2]>,
    /// Explicit per-qubit `[p(1|0), p(0|1)]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flips: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub telegraph: Vec<TelegraphSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TelegraphSpec {
    pub qubit: usize,
    pub e_good: f64,
    pub e_bad: f64,
    #[serde(default)]
    pub rate_good_to_bad: f64,
    #[serde(default)]
    pub rate_bad_to_good: f64,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default = "default_ratio")]
    pub one_to_zero_ratio: f64,
    /// Fixed bad windows `[start, end]`; when absent the timeline is sampled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bad_windows: Option<Vec<[f64; 2]>>,
    /// Read `bad_windows` as fractions of the schedule duration.
    #[serde(default)]
    pub relative_windows: bool,
}

fn default_ratio() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialSpec {
    #[default]
    Good,
    Bad,
    Stationary,
}

impl From<InitialSpec> for InitialRegime {
    fn from(s: InitialSpec) -> Self {
        match s {
            InitialSpec::Good => InitialRegime::Good,
            InitialSpec::Bad => InitialRegime::Bad,
            InitialSpec::Stationary => InitialRegime::Stationary,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeSpec {
    #[default]
    Blended,
    Regular,
}

impl From<ModeSpec> for ScheduleMode {
    fn from(m: ModeSpec) -> Self {
        match m {
            ModeSpec::Blended => ScheduleMode::Blended,
            ModeSpec::Regular => ScheduleMode::Regular,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    #[serde(default)]
    pub mode: ModeSpec,
    #[serde(default = "cap_circuits")]
    pub circuits_per_job: usize,
    #[serde(default = "cap_shots")]
    pub shots_per_circuit: u32,
    #[serde(default = "cap_slot")]
    pub slot_seconds: f64,
}

fn cap_circuits() -> usize {
    Caps::default().circuits_per_job
}

fn cap_shots() -> u32 {
    Caps::default().shots_per_circuit
}

fn cap_slot() -> f64 {
    Caps::default().slot_seconds
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            mode: ModeSpec::Blended,
            circuits_per_job: cap_circuits(),
            shots_per_circuit: cap_shots(),
            slot_seconds: cap_slot(),
        }
    }
}

impl ScheduleSpec {
    pub fn caps(&self) -> Caps {
        Caps {
            circuits_per_job: self.circuits_per_job,
            shots_per_circuit: self.shots_per_circuit,
            slot_seconds: self.slot_seconds,
        }
    }
}

/// Detector tomography allocation.
///
/// Blended mode places `repeats` copies of each QDT circuit with `shots`
/// shots in every job. `baseline_shots` adds a separate batch of that many
/// shots per circuit ahead of the experiment; regular mode runs only this batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QdtSpec {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default = "cap_shots")]
    pub shots: u32,
    #[serde(default)]
    pub baseline_shots: u64,
    /// Which estimate gates `--max-sigma` threshold checks.
    #[serde(default = "yes")]
    pub use_qdt_effects: bool,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn yes() -> bool {
    true
}

fn default_repeats() -> usize {
    4
}

fn default_max_iterations() -> usize {
    icmeas_core::RecoverySettings::default().max_iterations
}

fn default_tolerance() -> f64 {
    icmeas_core::RecoverySettings::default().tolerance
}

impl Default for QdtSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            repeats: default_repeats(),
            shots: cap_shots(),
            baseline_shots: 0,
            use_qdt_effects: true,
            max_iterations: default_max_iterations(),
            tolerance: default_tolerance(),
        }
    }
}

/// Readout drift monitor on one qubit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorSpec {
    pub qubit: usize,
    #[serde(default = "default_basis")]
    pub basis: String,
    /// Defaults to the qubit's bit when the state is computational and the basis is Z.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<u8>,
}

fn default_basis() -> String {
    "Z".into()
}

impl MonitorSpec {
    pub fn basis(&self) -> Option<Basis> {
        let mut chars = self.basis.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Basis::from_char(c.to_ascii_uppercase()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSpec {
    /// Points on the logarithmic error-vs-shots grid.
    #[serde(default = "default_curve_points")]
    pub curve_points: usize,
    /// Smallest settings count on the curve.
    #[serde(default = "default_curve_min")]
    pub curve_min_settings: usize,
}

fn default_curve_points() -> usize {
    12
}

fn default_curve_min() -> usize {
    10
}

impl Default for ReportSpec {
    fn default() -> Self {
        Self {
            curve_points: default_curve_points(),
            curve_min_settings: default_curve_min(),
        }
    }
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

fn probability(field: &str, p: f64, max: f64) -> Result<(), ConfigError> {
    if (0.0..=max).contains(&p) {
        Ok(())
    } else {
        Err(invalid(field, format!("{p} outside [0, {max}]")))
    }
}

impl ExperimentConfig {
    /// Reads and parses; call [`validate`](Self::validate) after applying overrides.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::parse(&text).map_err(|e| match e {
            ConfigError::Toml { source, .. } => ConfigError::Toml {
                path: Some(path.to_path_buf()),
                source,
            },
            other => other,
        })?;
        config.source = Some(path.to_path_buf());
        Ok(config)
    }

    /// Parses without validating or resolving paths.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Toml { path: None, source })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// `path` relative to the config file's directory.
    pub fn resolve(&self, path: &Path) -> PathBuf {
        match self.source.as_deref().and_then(Path::parent) {
            Some(dir) if path.is_relative() => dir.join(path),
            _ => path.to_path_buf(),
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(self.output_dir.as_deref().unwrap_or(Path::new("icmeas-out")))
    }

    /// Qubit count implied by the observable spec, if known without reading files.
    pub fn declared_qubits(&self) -> Option<usize> {
        match &self.observable {
            ObservableSpec::File { .. } => None,
            ObservableSpec::Random { qubits, .. } | ObservableSpec::Chemistry { qubits, .. } => Some(*qubits),
        }
    }

    /// Qubit count given by the state spec itself.
    pub fn state_qubits(&self) -> Option<usize> {
        match (&self.state.bits, &self.state.bloch) {
            (Some(b), None) => Some(b.chars().count()),
            (None, Some(a)) => Some(a.len()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.repetitions == 0 {
            return Err(invalid("repetitions", "must be at least 1"));
        }
        match &self.observable {
            ObservableSpec::File { path } => {
                let p = self.resolve(path);
                if !p.is_file() {
                    return Err(invalid("observable.path", format!("{} does not exist", p.display())));
                }
            }
            ObservableSpec::Random { qubits, terms, scale, .. } => {
                check_generator(*qubits, *terms, *scale)?;
            }
            ObservableSpec::Chemistry {
                qubits,
                terms,
                scale,
                offdiagonal_ratio,
                ..
            } => {
                check_generator(*qubits, *terms, *scale)?;
                if !(offdiagonal_ratio.is_finite() && *offdiagonal_ratio >= 0.0) {
                    return Err(invalid("observable.offdiagonal_ratio", "must be finite and non-negative"));
                }
            }
        }
        match (&self.state.bits, &self.state.bloch, self.state.diagonal_ground) {
            (None, None, true) => {}
            (Some(bits), None, false) => {
                if bits.is_empty() || !bits.chars().all(|c| c == '0' || c == '1') {
                    return Err(invalid("state.bits", format!("`{bits}` is not a nonempty bitstring")));
                }
            }
            (None, Some(angles), false) => {
                if angles.is_empty() || angles.iter().flatten().any(|a| !a.is_finite()) {
                    return Err(invalid("state.bloch", "need one finite [theta, phi] per qubit"));
                }
            }
            _ => return Err(invalid("state", "give exactly one of `bits`, `bloch` or `diagonal_ground`")),
        }
        let n = match (self.state_qubits(), self.declared_qubits()) {
            (Some(n), Some(m)) if n != m => {
                return Err(invalid("state", format!("{n} qubits but the observable has {m}")));
            }
            // None: qubit-indexed checks wait until the observable file is read.
            (n, m) => n.or(m),
        };
        if !(0.0..1.0 / 3.0).contains(&self.scheme.floor) {
            return Err(invalid("scheme.floor", format!("{} outside [0, 1/3)", self.scheme.floor)));
        }
        if self.plan.settings == 0 {
            return Err(invalid("plan.settings", "must be at least 1"));
        }
        if self.plan.shots == 0 || self.plan.shots > self.schedule.shots_per_circuit {
            return Err(invalid(
                "plan.shots",
                format!("{} outside 1..={}", self.plan.shots, self.schedule.shots_per_circuit),
            ));
        }
        self.validate_noise(n)?;
        self.validate_schedule()?;
        if let Some(m) = &self.monitor {
            if n.is_some_and(|n| m.qubit >= n) {
                return Err(invalid("monitor.qubit", format!("{} out of range for {} qubits", m.qubit, n.unwrap_or(0))));
            }
            if m.basis().is_none() {
                return Err(invalid("monitor.basis", format!("`{}` is not X, Y or Z", m.basis)));
            }
            if m.outcome.is_some_and(|o| o > 1) {
                return Err(invalid("monitor.outcome", "must be 0 or 1"));
            }
        }
        if self.report.curve_points < 2 || self.report.curve_min_settings == 0 {
            return Err(invalid("report", "need curve_points >= 2 and curve_min_settings >= 1"));
        }
        Ok(())
    }

    fn validate_noise(&self, n: Option<usize>) -> Result<(), ConfigError> {
        let noise = &self.noise;
        let given = [noise.flip.is_some(), noise.flip_range.is_some(), noise.flips.is_some()];
        if given.iter().filter(|&&g| g).count() > 1 {
            return Err(invalid("noise", "give at most one of `flip`, `flip_range`, `flips`"));
        }
        if let Some(p) = noise.flip {
            probability("noise.flip", p, 0.5)?;
        }
        if let Some([lo, hi]) = noise.flip_range {
            probability("noise.flip_range", lo, 0.5)?;
            probability("noise.flip_range", hi, 0.5)?;
            if lo > hi {
                return Err(invalid("noise.flip_range", "lower bound exceeds upper bound"));
            }
        }
        if let Some(flips) = &noise.flips {
            if n.is_some_and(|n| flips.len() != n) {
                return Err(invalid("noise.flips", format!("{} entries for {} qubits", flips.len(), n.unwrap_or(0))));
            }
            for &[a, b] in flips {
                probability("noise.flips", a, 1.0)?;
                probability("noise.flips", b, 1.0)?;
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for (i, t) in noise.telegraph.iter().enumerate() {
            let field = format!("noise.telegraph[{i}]");
            if n.is_some_and(|n| t.qubit >= n) {
                return Err(invalid(&field, format!("qubit {} out of range for {} qubits", t.qubit, n.unwrap_or(0))));
            }
            if !seen.insert(t.qubit) {
                return Err(invalid(&field, format!("qubit {} has two telegraph processes", t.qubit)));
            }
            if let Some(windows) = &t.bad_windows {
                let mut last = f64::NEG_INFINITY;
                for &[s, e] in windows {
                    if !(s.is_finite() && e.is_finite() && s >= 0.0 && s < e && s >= last) {
                        return Err(invalid(&field, "bad windows must be increasing, non-overlapping [start, end]"));
                    }
                    if t.relative_windows && e > 1.0 {
                        return Err(invalid(&field, "relative windows must lie within [0, 1]"));
                    }
                    last = e;
                }
            }
        }
        Ok(())
    }

    fn validate_schedule(&self) -> Result<(), ConfigError> {
        let s = &self.schedule;
        if s.circuits_per_job == 0 || s.shots_per_circuit == 0 || !(s.slot_seconds > 0.0 && s.slot_seconds.is_finite()) {
            return Err(invalid("schedule", "caps must be positive"));
        }
        let q = &self.qdt;
        if !q.enabled {
            if s.mode == ModeSpec::Blended {
                return Err(invalid("qdt.enabled", "blended scheduling needs QDT; use mode = \"regular\""));
            }
            return Ok(());
        }
        match s.mode {
            ModeSpec::Blended => {
                if q.repeats == 0 || 12 * q.repeats >= s.circuits_per_job {
                    return Err(invalid(
                        "qdt.repeats",
                        format!("12 x {} QDT circuits must leave room under {} per job", q.repeats, s.circuits_per_job),
                    ));
                }
                if q.shots == 0 || q.shots > s.shots_per_circuit {
                    return Err(invalid("qdt.shots", format!("{} outside 1..={}", q.shots, s.shots_per_circuit)));
                }
            }
            ModeSpec::Regular => {
                if q.baseline_shots == 0 {
                    return Err(invalid("qdt.baseline_shots", "regular scheduling runs QDT as a baseline batch; must be positive"));
                }
            }
        }
        if !(q.tolerance > 0.0) || q.max_iterations == 0 {
            return Err(invalid("qdt", "tolerance and max_iterations must be positive"));
        }
        Ok(())
    }
}

fn check_generator(qubits: usize, terms: usize, scale: f64) -> Result<(), ConfigError> {
    if qubits == 0 || qubits > icmeas_core::pauli::MAX_QUBITS {
        return Err(invalid("observable.qubits", format!("{qubits} outside 1..={}", icmeas_core::pauli::MAX_QUBITS)));
    }
    if terms == 0 {
        return Err(invalid("observable.terms", "must be at least 1"));
    }
    if !(scale.is_finite() && scale > 0.0) {
        return Err(invalid("observable.scale", "must be finite and positive"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 3
[observable]
kind = "random"
qubits = 2
terms = 5
[state]
bits = "01"
[plan]
settings = 10
shots = 5
"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let c = ExperimentConfig::parse(MINIMAL).unwrap();
        c.validate().unwrap();
        assert_eq!(c.repetitions, 1);
        assert_eq!(c.scheme.kind, SchemeKind::Cs);
        assert_eq!(c.schedule.caps(), Caps::default());
        assert_eq!(c.qdt.repeats, 4);
        let again = ExperimentConfig::parse(&c.to_toml()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = MINIMAL.replace("settings = 10", "settings = 10\nsetings = 3");
        assert!(matches!(ExperimentConfig::parse(&text), Err(ConfigError::Toml { .. })));
    }

    #[test]
    fn range_errors_name_the_field() {
        let cases = [
            ("bits = \"01\"", "bits = \"011\"", "state"),
            ("shots = 5", "shots = 500", "plan.shots"),
            ("settings = 10", "settings = 0", "plan.settings"),
        ];
        for (from, to, field) in cases {
            let c = ExperimentConfig::parse(&MINIMAL.replace(from, to)).unwrap();
            match c.validate() {
                Err(ConfigError::Invalid { field: f, .. }) => assert_eq!(f, field),
                other => panic!("{to}: {other:?}"),
            }
        }
        let text = format!("{MINIMAL}[noise]\nflip = 0.7\n");
        assert!(ExperimentConfig::parse(&text).unwrap().validate().is_err());
        let text = format!("{MINIMAL}[noise]\nflip = 0.1\nflip_range = [0.0, 0.1]\n");
        assert!(ExperimentConfig::parse(&text).unwrap().validate().is_err());
    }

    #[test]
    fn missing_observable_file_is_reported() {
        let text = MINIMAL.replace("kind = \"random\"\nqubits = 2\nterms = 5", "kind = \"file\"\npath = \"/nonexistent/h.txt\"");
        let c = ExperimentConfig::parse(&text).unwrap();
        assert!(matches!(c.validate(), Err(ConfigError::Invalid { field, .. }) if field == "observable.path"));
    }

    #[test]
    fn blended_qdt_must_fit_the_job_cap() {
        let text = format!("{MINIMAL}[schedule]\ncircuits_per_job = 48\n");
        assert!(ExperimentConfig::parse(&text).unwrap().validate().is_err());
        let text = format!("{MINIMAL}[schedule]\nmode = \"regular\"\n");
        assert!(ExperimentConfig::parse(&text).unwrap().validate().is_err());
        let text = format!("{MINIMAL}[schedule]\nmode = \"regular\"\n[qdt]\nbaseline_shots = 1000\n");
        ExperimentConfig::parse(&text).unwrap().validate().unwrap();
    }
}
