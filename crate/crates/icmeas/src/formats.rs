//! Text and CSV formats for POVMs, shot streams, tomography counts,
//! schedules, trajectories and monitor series.

use std::fmt::Write as _;
use std::io::{self, Write};

use icmeas_core::noise::{DetectorModel, Regime};
use icmeas_core::povm::{EffectLabel, Mat2};
use icmeas_core::qdt::{InputState, QubitTomography};
use icmeas_core::schedule::{CircuitRef, DriftPoint, Gap, Schedule};
use icmeas_core::{Basis, BasisDistribution, LocalPovm, MeasurementSetting, Outcome, SettingBlock, TomographyData};
use num_complex::Complex64;

/// A parse failure at a 1-based line.
#[derive(Debug, Clone, PartialEq)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

fn err<T>(line: usize, message: impl Into<String>) -> Result<T, LineError> {
    Err(LineError {
        line,
        message: message.into(),
    })
}

/// Shortest decimal that round-trips.
pub fn num(x: f64) -> String {
    format!("{x}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".into(), num)
}

fn parse_f64(line: usize, s: &str) -> Result<f64, LineError> {
    s.trim().parse().or_else(|_| err(line, format!("bad number `{s}`")))
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r').trim()))
        .filter(|(_, l)| !l.is_empty())
}

// POVM documents -----------------------------------------------------------

/// Per qubit: the basis probabilities, then six effects as rows of
/// `(re, im)` pairs for entries 00, 01, 10, 11.
pub fn write_povm<'a>(locals: impl IntoIterator<Item = &'a LocalPovm>) -> String {
    let locals: Vec<&LocalPovm> = locals.into_iter().collect();
    let mut out = String::new();
    writeln!(out, "povm {}", locals.len()).unwrap();
    for (q, p) in locals.into_iter().enumerate() {
        writeln!(out, "qubit {q}").unwrap();
        let probs = Basis::ALL.map(|b| format!("{:.16e}", p.basis_probability(b)));
        writeln!(out, "probs {}", probs.join(" ")).unwrap();
        for label in EffectLabel::all() {
            let e = p.effect(label);
            write!(out, "{}{}", label.basis.as_char(), label.outcome).unwrap();
            for z in [e[(0, 0)], e[(0, 1)], e[(1, 0)], e[(1, 1)]] {
                write!(out, " {:.16e} {:.16e}", z.re, z.im).unwrap();
            }
            out.push('\n');
        }
    }
    out
}

pub fn parse_povm(text: &str) -> Result<Vec<LocalPovm>, LineError> {
    let mut lines = content_lines(text).filter(|(_, l)| !l.starts_with('#'));
    let (ln, header) = lines.next().ok_or(LineError {
        line: 1,
        message: "empty POVM document".into(),
    })?;
    let n: usize = match header.split_whitespace().collect::<Vec<_>>()[..] {
        ["povm", n] => n.parse().or_else(|_| err(ln, "bad qubit count"))?,
        _ => return err(ln, "expected `povm <N>`"),
    };
    let mut out = Vec::with_capacity(n);
    for q in 0..n {
        let (ln, l) = lines.next().ok_or(LineError {
            line: ln,
            message: format!("missing qubit {q}"),
        })?;
        if l != format!("qubit {q}") {
            return err(ln, format!("expected `qubit {q}`"));
        }
        let (pln, probs) = lines.next().ok_or(LineError {
            line: ln,
            message: "missing probs".into(),
        })?;
        let probs: Vec<f64> = match probs.strip_prefix("probs ") {
            Some(rest) => rest.split_whitespace().map(|t| parse_f64(pln, t)).collect::<Result<_, _>>()?,
            None => return err(pln, "expected `probs px py pz`"),
        };
        if probs.len() != 3 {
            return err(pln, "expected three basis probabilities");
        }
        let mut effects = [Mat2::zeros(); 6];
        let mut last = pln;
        for label in EffectLabel::all() {
            let (eln, l) = lines.next().ok_or(LineError {
                line: last,
                message: "missing effect row".into(),
            })?;
            last = eln;
            let mut tokens = l.split_whitespace();
            let tag = format!("{}{}", label.basis.as_char(), label.outcome);
            if tokens.next() != Some(tag.as_str()) {
                return err(eln, format!("expected effect `{tag}`"));
            }
            let v: Vec<f64> = tokens.map(|t| parse_f64(eln, t)).collect::<Result<_, _>>()?;
            if v.len() != 8 {
                return err(eln, "an effect row holds 8 numbers");
            }
            let z = |i: usize| Complex64::new(v[2 * i], v[2 * i + 1]);
            effects[label.index()] = Mat2::new(z(0), z(1), z(2), z(3));
        }
        let povm = LocalPovm::new(effects).or_else(|e| err(pln, e.to_string()))?;
        for (b, p) in Basis::ALL.iter().zip(&probs) {
            if (povm.basis_probability(*b) - p).abs() > 1e-9 {
                return err(pln, format!("probability for {b} disagrees with the effects"));
            }
        }
        out.push(povm);
    }
    if let Some((ln, _)) = lines.next() {
        return err(ln, "trailing content");
    }
    Ok(out)
}

// Shot streams ---------------------------------------------------------------

pub const SHOTS_HEADER: &str = "job,timestamp,setting,outcome,count";

/// One row per distinct outcome; `# block <setting index>` opens each block.
pub fn write_shots(w: &mut impl Write, blocks: &[SettingBlock]) -> io::Result<()> {
    writeln!(w, "{SHOTS_HEADER}")?;
    for b in blocks {
        writeln!(w, "# block {}", b.setting_index)?;
        let setting = b.setting.to_string();
        let n = b.setting.num_qubits();
        let t = num(b.timestamp);
        for &(o, c) in &b.counts {
            writeln!(w, "{},{},{},{},{}", b.job_index, t, setting, o.to_bitstring(n), c)?;
        }
    }
    Ok(())
}

pub fn parse_shots(text: &str) -> Result<Vec<SettingBlock>, LineError> {
    let mut lines = content_lines(text);
    match lines.next() {
        Some((_, SHOTS_HEADER)) => {}
        Some((ln, _)) => return err(ln, format!("expected header `{SHOTS_HEADER}`")),
        None => return err(1, "empty shot stream"),
    }
    let mut blocks: Vec<SettingBlock> = Vec::new();
    let mut open = false;
    for (ln, l) in lines {
        if let Some(rest) = l.strip_prefix('#') {
            let index = match rest.trim().strip_prefix("block ") {
                Some(i) => i.trim().parse::<usize>().or_else(|_| err(ln, "bad block index"))?,
                None => continue,
            };
            blocks.push(SettingBlock {
                setting_index: index,
                setting: placeholder_setting(),
                counts: Vec::new(),
                job_index: 0,
                timestamp: 0.0,
            });
            open = false;
            continue;
        }
        let fields: Vec<&str> = l.split(',').collect();
        let [job, time, setting, outcome, count] = fields[..] else {
            return err(ln, "expected 5 comma-separated fields");
        };
        let Some(block) = blocks.last_mut() else {
            return err(ln, "row before the first `# block` marker");
        };
        let job: usize = job.parse().or_else(|_| err(ln, "bad job index"))?;
        let time = parse_f64(ln, time)?;
        let setting = MeasurementSetting::parse(setting).or_else(|e| err(ln, e.to_string()))?;
        let outcome = Outcome::parse(outcome, setting.num_qubits()).or_else(|e| err(ln, e.to_string()))?;
        let count: u32 = count.parse().or_else(|_| err(ln, "bad count"))?;
        if !open {
            block.setting = setting;
            block.job_index = job;
            block.timestamp = time;
            open = true;
        } else if block.setting != setting || block.job_index != job || block.timestamp.to_bits() != time.to_bits() {
            return err(ln, "row disagrees with its block's job, timestamp or setting");
        }
        if block.counts.last().is_some_and(|&(o, _)| o >= outcome) {
            return err(ln, "outcomes within a block must be strictly increasing");
        }
        block.counts.push((outcome, count));
    }
    if let Some(b) = blocks.iter().find(|b| b.counts.is_empty()) {
        return err(0, format!("block {} has no rows", b.setting_index));
    }
    Ok(blocks)
}

fn placeholder_setting() -> MeasurementSetting {
    MeasurementSetting::uniform(1, Basis::Z).expect("one qubit")
}

// Tomography counts -----------------------------------------------------------

pub const QDT_HEADER: &str = "qubit,input,basis,outcome,count";

pub fn write_tomography(data: &TomographyData) -> String {
    let mut out = format!("{QDT_HEADER}\n");
    for (q, t) in data.qubits.iter().enumerate() {
        for input in InputState::ALL {
            for basis in Basis::ALL {
                for outcome in 0..2 {
                    let c = t.counts[input.index()][basis.index()][outcome];
                    writeln!(out, "{q},{},{},{outcome},{}", input.label(), basis.as_char(), num(c)).unwrap();
                }
            }
        }
    }
    out
}

/// Counts for `dists.len()` qubits; repeated cells accumulate.
pub fn parse_tomography(text: &str, dists: &[BasisDistribution]) -> Result<TomographyData, LineError> {
    let mut lines = content_lines(text).filter(|(_, l)| !l.starts_with('#'));
    match lines.next() {
        Some((_, QDT_HEADER)) => {}
        Some((ln, _)) => return err(ln, format!("expected header `{QDT_HEADER}`")),
        None => return err(1, "empty tomography table"),
    }
    let mut qubits: Vec<QubitTomography> = dists.iter().map(|d| QubitTomography::new(*d)).collect();
    for (ln, l) in lines {
        let fields: Vec<&str> = l.split(',').collect();
        let [q, input, basis, outcome, count] = fields[..] else {
            return err(ln, "expected 5 comma-separated fields");
        };
        let q: usize = q.parse().or_else(|_| err(ln, "bad qubit"))?;
        let Some(slot) = qubits.get_mut(q) else {
            return err(ln, format!("qubit {q} out of range for {} qubits", dists.len()));
        };
        let input = InputState::from_label(input).ok_or(LineError {
            line: ln,
            message: format!("unknown input `{input}`"),
        })?;
        let basis = single_basis(basis).ok_or(LineError {
            line: ln,
            message: format!("unknown basis `{basis}`"),
        })?;
        let outcome: u8 = match outcome {
            "0" => 0,
            "1" => 1,
            _ => return err(ln, "outcome must be 0 or 1"),
        };
        let count = parse_f64(ln, count)?;
        if !(count >= 0.0 && count.is_finite()) {
            return err(ln, "count must be non-negative");
        }
        slot.add(input, basis, outcome, count);
    }
    Ok(TomographyData { qubits })
}

fn single_basis(s: &str) -> Option<Basis> {
    let mut c = s.chars();
    match (c.next(), c.next()) {
        (Some(ch), None) => Basis::from_char(ch),
        _ => None,
    }
}

// Plot-ready exports ----------------------------------------------------------

pub fn write_schedule(schedule: &Schedule) -> String {
    let mut out = String::from("job,slot_start,circuit_kind,circuit_id,shots\n");
    for job in schedule.jobs() {
        for c in &job.circuits {
            let (kind, id) = match c.circuit {
                CircuitRef::Experiment { setting } => ("experiment", setting.to_string()),
                CircuitRef::Qdt { input, basis, batch } => ("qdt", format!("{}:{}:{}", input.label(), basis.as_char(), batch.as_str())),
            };
            writeln!(out, "{},{},{kind},{id},{}", job.index, num(job.slot_start), c.shots).unwrap();
        }
    }
    out
}

/// Step-function samples of each fluctuating qubit: one row per segment
/// start plus the end of the timeline.
pub fn write_trajectories(model: &DetectorModel) -> String {
    let mut out = String::from("time,qubit,regime,flip_probability\n");
    for q in 0..model.num_qubits() {
        let Some(f) = &model.qubit(q).fluctuation else {
            continue;
        };
        let segments = f.trajectory.segments();
        let row = |out: &mut String, t: f64, regime: Regime| {
            let name = match regime {
                Regime::Good => "good",
                Regime::Bad => "bad",
            };
            writeln!(out, "{},{q},{name},{}", num(t), num(f.process.flip(regime).p01())).unwrap();
        };
        for s in segments {
            row(&mut out, s.start, s.regime);
        }
        if let Some(last) = segments.last() {
            row(&mut out, last.end, last.regime);
        }
    }
    out
}

pub fn write_monitor(points: &[DriftPoint]) -> String {
    let mut out = String::from("job,time,frequency,sigma\n");
    for p in points {
        writeln!(out, "{},{},{},{}", p.job, num(p.time), opt(p.frequency), opt(p.sigma)).unwrap();
    }
    out
}

pub fn write_consistency(gaps: &[Gap]) -> String {
    let mut out = String::from("first,second,gap,sigma,exceeds_three_sigma\n");
    for g in gaps {
        writeln!(out, "{},{},{},{},{}", g.first, g.second, opt(g.gap), opt(g.sigma), g.exceeds_three_sigma).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use icmeas_core::noise::{noisy_effects, AssignmentMatrix};
    use icmeas_core::povm::lbcs_bias;
    use icmeas_core::Observable;

    #[test]
    fn povm_round_trips_bit_exactly() {
        let obs = Observable::parse("qubits 3\n0.7 ZZI\n-0.2 XIY\n0.1 IYZ\n").unwrap();
        let dists = lbcs_bias(&obs, 0.01).unwrap();
        let locals: Vec<LocalPovm> = dists
            .iter()
            .enumerate()
            .map(|(q, d)| noisy_effects(&LocalPovm::ideal(d), &AssignmentMatrix::flips(0.013 * q as f64, 0.021).unwrap()))
            .collect();
        let text = write_povm(locals.iter());
        let back = parse_povm(&text).unwrap();
        assert_eq!(back, locals);
        assert_eq!(write_povm(back.iter()), text);
    }

    #[test]
    fn povm_parse_errors_carry_lines() {
        let locals = [LocalPovm::ideal(&BasisDistribution::symmetric())];
        let text = write_povm(locals.iter());
        let broken = text.replacen("Y1", "Y2", 1);
        assert_eq!(parse_povm(&broken).unwrap_err().line, 7);
        let bad_probs = text.replacen("probs 3.3333333333333331e-1", "probs 4e-1", 1);
        assert!(parse_povm(&bad_probs).is_err());
        assert!(parse_povm("").is_err());
    }

    fn block(index: usize, setting: &str, counts: &[(&str, u32)], job: usize) -> SettingBlock {
        let setting = MeasurementSetting::parse(setting).unwrap();
        let n = setting.num_qubits();
        SettingBlock {
            setting_index: index,
            setting,
            counts: counts.iter().map(|&(o, c)| (Outcome::parse(o, n).unwrap(), c)).collect(),
            job_index: job,
            timestamp: job as f64 * 10.0,
        }
    }

    #[test]
    fn shot_stream_round_trips_adjacent_equal_settings() {
        let blocks = vec![
            block(0, "XZ", &[("00", 3), ("10", 1)], 0),
            block(1, "XZ", &[("01", 4)], 0),
            block(2, "YY", &[("00", 1), ("01", 1), ("11", 2)], 1),
        ];
        let mut buf = Vec::new();
        write_shots(&mut buf, &blocks).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("job,timestamp,setting,outcome,count\n# block 0\n0,0,XZ,00,3\n"));
        assert_eq!(parse_shots(&text).unwrap(), blocks);
    }

    #[test]
    fn malformed_shot_rows_are_rejected() {
        let head = "job,timestamp,setting,outcome,count\n";
        assert!(parse_shots(&format!("{head}0,0,XZ,00,3\n")).is_err());
        assert!(parse_shots(&format!("{head}# block 0\n0,0,XZ,001,3\n")).is_err());
        assert!(parse_shots(&format!("{head}# block 0\n0,0,XZ,01,3\n0,0,XZ,00,3\n")).is_err());
        assert!(parse_shots(&format!("{head}# block 0\n0,0,XZ,00,3\n1,0,XZ,01,3\n")).is_err());
        assert!(parse_shots(&format!("{head}# block 0\n")).is_err());
        assert!(parse_shots("job,setting\n").is_err());
    }

    #[test]
    fn tomography_table_round_trips() {
        let d = BasisDistribution::new(0.2, 0.3, 0.5).unwrap();
        let truth = noisy_effects(&LocalPovm::ideal(&d), &AssignmentMatrix::symmetric_flip(0.02).unwrap());
        let mut t = QubitTomography::new(d);
        for (i, input) in InputState::ALL.into_iter().enumerate() {
            for b in Basis::ALL {
                t.add(input, b, 0, (i * 7 + b.index()) as f64);
                t.add(input, b, 1, 3.0);
            }
        }
        let data = TomographyData {
            qubits: vec![t, QubitTomography::exact(&truth).unwrap()],
        };
        let text = write_tomography(&data);
        assert_eq!(text.lines().count(), 1 + 2 * 24);
        let back = parse_tomography(&text, &[d, d]).unwrap();
        assert_eq!(back.qubits[0].counts, data.qubits[0].counts);
        assert_eq!(back.qubits[1].counts, data.qubits[1].counts);
        assert!(parse_tomography(&text, &[d]).is_err());
        assert!(parse_tomography(&text.replace(",+y,", ",-y,"), &[d, d]).is_err());
    }
}
