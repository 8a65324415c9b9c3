//! Artifact bundles: one directory per repetition holding the raw streams,
//! fitted effects and reports, plus replay of the reports from those files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use icmeas_core::schedule::{compare_qdt_consistency, drift_monitor, tally_blocks, QdtBatch, Tally};
use icmeas_core::{Basis, Observable, ProductPovm, SettingBlock, TomographyData};
use serde::{Deserialize, Serialize};

use crate::error::{Context, HarnessError, Result};
use crate::formats::{self, LineError};
use crate::pipeline::{curve_grid, known_label, estimate_with, tomography_tally, Estimate, Repetition, RunResult};
use crate::report::{CurveRow, ReportDocument, ReportRow, REPORT_SCHEMA};

pub const BUNDLE_SCHEMA: &str = "icmeas.bundle/1";
pub const MANIFEST: &str = "bundle.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub repetition: usize,
    pub seed: u64,
    pub qubits: usize,
    pub reference: f64,
    pub curve_grid: Vec<usize>,
    pub observable: String,
    pub shots: String,
    pub estimates: Vec<ManifestEstimate>,
    /// Tomography tables by batch name.
    pub tomography: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEstimate {
    pub label: String,
    pub povm: String,
}

pub fn repetition_dir(root: &Path, index: usize) -> PathBuf {
    root.join(format!("rep-{index:03}"))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(HarnessError::io(path))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(HarnessError::io(path))
}

fn at_line(path: &Path) -> impl FnOnce(LineError) -> HarnessError + '_ {
    move |e| HarnessError::Format {
        path: path.to_path_buf(),
        line: e.line,
        message: e.message,
    }
}

pub fn document(run: &RunResult, rep: &Repetition) -> ReportDocument {
    document_from(rep.index, rep.seed, run.setup.reference, &rep.estimates)
}

fn document_from(repetition: usize, seed: u64, reference: f64, estimates: &[Estimate]) -> ReportDocument {
    ReportDocument {
        schema: REPORT_SCHEMA.into(),
        repetition,
        seed,
        reference: Some(reference),
        reports: estimates.iter().map(|e| ReportRow::new(e.label, &e.report, Some(reference))).collect(),
        curves: estimates
            .iter()
            .flat_map(|e| e.curve.iter().map(|p| CurveRow::new(e.label, p)))
            .collect(),
    }
}

/// Writes the top-level config copy, summary and every repetition bundle.
pub fn write_run(run: &RunResult, root: &Path) -> Result<()> {
    fs::create_dir_all(root).map_err(HarnessError::io(root))?;
    write_file(&root.join("config.toml"), &run.config.to_toml())?;
    let mut summary = String::from("repetition,label,S,T,mean,variance,std_err,abs_err,saving_factor\n");
    for rep in &run.repetitions {
        let doc = write_bundle(run, rep, &repetition_dir(root, rep.index))?;
        for r in &doc.reports {
            summary.push_str(&format!("{},{}\n", rep.index, r.csv_fields()));
        }
    }
    write_file(&root.join("summary.csv"), &summary)
}

pub fn write_bundle(run: &RunResult, rep: &Repetition, dir: &Path) -> Result<ReportDocument> {
    fs::create_dir_all(dir).map_err(HarnessError::io(dir))?;
    let config = &run.config;
    write_file(&dir.join("observable.txt"), &run.setup.observable.to_text())?;
    let shots_path = dir.join("shots.csv");
    let file = File::create(&shots_path).map_err(HarnessError::io(&shots_path))?;
    let mut w = BufWriter::new(file);
    formats::write_shots(&mut w, &rep.output.blocks)
        .and_then(|_| w.flush())
        .map_err(HarnessError::io(&shots_path))?;
    write_file(&dir.join("schedule.csv"), &formats::write_schedule(&run.setup.schedule))?;
    if !config.noise.telegraph.is_empty() {
        write_file(&dir.join("trajectory.csv"), &formats::write_trajectories(&rep.model))?;
    }
    let mut estimates = Vec::new();
    for e in &rep.estimates {
        let name = format!("povm_{}.txt", e.label);
        write_file(&dir.join(&name), &formats::write_povm(e.povm.locals()))?;
        estimates.push(ManifestEstimate {
            label: e.label.into(),
            povm: name,
        });
    }
    let mut tomography = Vec::new();
    for fit in &rep.fits {
        let name = format!("qdt_{}.csv", fit.batch.as_str());
        write_file(&dir.join(&name), &formats::write_tomography(&fit.data))?;
        tomography.push((fit.batch.as_str().to_string(), name));
    }
    if let Some(m) = &rep.monitor {
        write_file(&dir.join("monitor.csv"), &formats::write_monitor(&m.drift))?;
        if let Some(gaps) = &m.consistency {
            write_file(&dir.join("consistency.csv"), &formats::write_consistency(gaps))?;
        }
    }
    let doc = document(run, rep);
    write_file(&dir.join("report.csv"), &doc.report_csv())?;
    write_file(&dir.join("curve.csv"), &doc.curve_csv())?;
    write_file(&dir.join("report.json"), &doc.json())?;
    let manifest = Manifest {
        schema: BUNDLE_SCHEMA.into(),
        repetition: rep.index,
        seed: rep.seed,
        qubits: run.setup.observable.num_qubits(),
        reference: run.setup.reference,
        curve_grid: curve_grid(config.plan.settings, config.report.curve_min_settings, config.report.curve_points),
        observable: "observable.txt".into(),
        shots: "shots.csv".into(),
        estimates,
        tomography,
    };
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    write_file(&dir.join(MANIFEST), &json)?;
    Ok(doc)
}

/// A bundle read back from disk.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub observable: Observable,
    pub blocks: Vec<SettingBlock>,
}

pub fn load_bundle(dir: &Path) -> Result<Bundle> {
    let manifest_path = dir.join(MANIFEST);
    if !manifest_path.is_file() {
        return Err(HarnessError::Usage(format!("{} is not a bundle (no {MANIFEST})", dir.display())));
    }
    let manifest: Manifest = serde_json::from_str(&read_file(&manifest_path)?).map_err(|e| HarnessError::Format {
        path: manifest_path.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    if manifest.schema != BUNDLE_SCHEMA {
        return Err(HarnessError::Format {
            path: manifest_path,
            line: 0,
            message: format!("unsupported schema `{}`", manifest.schema),
        });
    }
    let obs_path = dir.join(&manifest.observable);
    let observable = Observable::parse(&read_file(&obs_path)?).context(|| obs_path.display().to_string())?;
    let shots_path = dir.join(&manifest.shots);
    let blocks = formats::parse_shots(&read_file(&shots_path)?).map_err(at_line(&shots_path))?;
    Ok(Bundle {
        dir: dir.to_path_buf(),
        manifest,
        observable,
        blocks,
    })
}

/// Recomputes every report row and curve from the bundle's files.
pub fn replay(dir: &Path) -> Result<ReportDocument> {
    let bundle = load_bundle(dir)?;
    let m = &bundle.manifest;
    if m.estimates.is_empty() || bundle.blocks.is_empty() {
        return Err(HarnessError::Usage(format!("bundle {} is empty", dir.display())));
    }
    let mut estimates = Vec::new();
    for entry in &m.estimates {
        let path = dir.join(&entry.povm);
        let locals = formats::parse_povm(&read_file(&path)?).map_err(at_line(&path))?;
        let povm = ProductPovm::new(locals).context(|| path.display().to_string())?;
        let label = known_label(&entry.label).ok_or_else(|| HarnessError::Format {
                path: dir.join(MANIFEST),
                line: 0,
                message: format!("unknown estimate label `{}`", entry.label),
            })?;
        let e = estimate_with(label, &bundle.observable, povm, &bundle.blocks, &m.curve_grid, Some(m.reference))
            .context(|| format!("{}: {label}", dir.display()))?;
        estimates.push(e);
    }
    Ok(document_from(m.repetition, m.seed, m.reference, &estimates))
}

/// Drift series and, when `input` is given, QDT/experiment consistency from a bundle.
pub fn monitor_bundle(dir: &Path, qubit: usize, basis: Basis, outcome: u8, input: Option<icmeas_core::InputState>) -> Result<String> {
    let bundle = load_bundle(dir)?;
    if qubit >= bundle.manifest.qubits {
        return Err(HarnessError::Usage(format!("qubit {qubit} out of range for {} qubits", bundle.manifest.qubits)));
    }
    let mut out = formats::write_monitor(&drift_monitor(&bundle.blocks, qubit, basis, outcome));
    if let Some(input) = input {
        let mut tallies = [Tally::default(); 2];
        for (batch, file) in &bundle.manifest.tomography {
            let path = dir.join(file);
            let dists = vec![icmeas_core::BasisDistribution::symmetric(); bundle.manifest.qubits];
            let data: TomographyData = formats::parse_tomography(&read_file(&path)?, &dists).map_err(at_line(&path))?;
            let slot = usize::from(batch != QdtBatch::Blended.as_str());
            tallies[slot] = tomography_tally(&data, qubit, input, basis, outcome);
        }
        let gaps = compare_qdt_consistency(tallies[0], tallies[1], tally_blocks(&bundle.blocks, qubit, basis, outcome));
        out.push('\n');
        out.push_str(&formats::write_consistency(&gaps));
    }
    Ok(out)
}
