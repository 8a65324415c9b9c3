//! Repeated-settings Monte Carlo estimation.
//!
//! For `S` settings with `T` shots each, the estimate is the mean of
//! `ω = Σ_P c_P Π_q Tr[D_q σ_{P_q}]` over all shots. With population moments
//! its variance is `(⟨⟨ω⟩_i²⟩ − ⟨ω⟩²)/S + (⟨ω²⟩ − ⟨⟨ω⟩_i²⟩)/(ST)` and the
//! saving factor is `F = 1 − (⟨ω²⟩ − ⟨⟨ω⟩_i²⟩)/(⟨ω²⟩ − ⟨ω⟩²)`. Reports from
//! data use the unbiased sample versions: the squared block means overstate
//! `⟨⟨ω⟩_i²⟩` by the within-setting spread over `T`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::pauli::{Basis, Observable, Pauli, ProductState};
use crate::povm::{EffectLabel, ProductPovm};
use crate::sim::{MeasurementSetting, Outcome, SettingBlock};

/// Largest system for which ω tables are built by a Walsh–Hadamard transform.
const MAX_TRANSFORM_QUBITS: usize = 16;
/// Total variance at or below this fraction of `⟨ω²⟩` counts as zero.
const ZERO_VARIANCE: f64 = 1e-12;

/// Per-setting totals over its shots.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BlockStats {
    pub sum: f64,
    pub sum_sq: f64,
    pub shots: u32,
}

struct Term {
    coeff: f64,
    /// `(qubit, axis index)` pairs.
    axes: Vec<(usize, usize)>,
}

/// Precompiled `ω` evaluation for an observable under a product POVM.
pub struct OmegaEvaluator<'a> {
    povm: &'a ProductPovm,
    terms: Vec<Term>,
    num_qubits: usize,
}

impl<'a> OmegaEvaluator<'a> {
    pub fn new(obs: &Observable, povm: &'a ProductPovm) -> Result<Self> {
        if povm.num_qubits() != obs.num_qubits() {
            return Err(Error::QubitMismatch {
                expected: obs.num_qubits(),
                found: povm.num_qubits(),
            });
        }
        let terms = obs
            .terms()
            .iter()
            .map(|(c, p)| Term {
                coeff: *c,
                axes: p.axes().iter().map(|&(q, b)| (q, Pauli::from(b).index())).collect(),
            })
            .collect();
        Ok(Self {
            povm,
            terms,
            num_qubits: obs.num_qubits(),
        })
    }

    fn check(&self, setting: &MeasurementSetting) -> Result<()> {
        if setting.num_qubits() != self.num_qubits {
            return Err(Error::QubitMismatch {
                expected: self.num_qubits,
                found: setting.num_qubits(),
            });
        }
        Ok(())
    }

    /// `Tr[D σ_axis]` for outcomes 0 and 1 of `basis` on `qubit`.
    fn weights(&self, qubit: usize, axis: usize, basis: Basis) -> [f64; 2] {
        let row = &self.povm.weight_table(qubit)[axis];
        [row[EffectLabel::new(basis, 0).index()], row[EffectLabel::new(basis, 1).index()]]
    }

    pub fn omega(&self, setting: &MeasurementSetting, outcome: Outcome) -> Result<f64> {
        self.check(setting)?;
        let mut omega = 0.0;
        for t in &self.terms {
            let mut prod = t.coeff;
            for &(q, axis) in &t.axes {
                prod *= self.weights(q, axis, setting.basis(q))[outcome.bit(q) as usize];
                if prod == 0.0 {
                    break;
                }
            }
            omega += prod;
        }
        Ok(omega)
    }

    /// `ω` for each distinct outcome of the block, in block order.
    pub fn block_omegas(&self, block: &SettingBlock) -> Result<Vec<f64>> {
        let setting = &block.setting;
        self.check(setting)?;
        // per active term: coefficient and per-axis outcome weights
        let mut active: Vec<(f64, Vec<(usize, [f64; 2])>)> = Vec::new();
        'terms: for t in &self.terms {
            let mut factors = Vec::with_capacity(t.axes.len());
            for &(q, axis) in &t.axes {
                let w = self.weights(q, axis, setting.basis(q));
                if w == [0.0, 0.0] {
                    continue 'terms;
                }
                factors.push((q, w));
            }
            active.push((t.coeff, factors));
        }
        let direct_cost: usize = block.counts.len() * active.iter().map(|a| a.1.len() + 1).sum::<usize>();
        let transform_cost = if self.num_qubits <= MAX_TRANSFORM_QUBITS {
            active.iter().map(|a| 1usize << a.1.len()).sum::<usize>() + self.num_qubits * (1 << self.num_qubits)
        } else {
            usize::MAX
        };
        if direct_cost <= transform_cost {
            Ok(block
                .counts
                .iter()
                .map(|&(o, _)| {
                    active
                        .iter()
                        .map(|(c, f)| f.iter().fold(*c, |acc, &(q, w)| acc * w[o.bit(q) as usize]))
                        .sum()
                })
                .collect())
        } else {
            let table = transform_table(self.num_qubits, &active);
            Ok(block.counts.iter().map(|&(o, _)| table[o.0 as usize]).collect())
        }
    }

    pub fn block_stats(&self, block: &SettingBlock) -> Result<BlockStats> {
        let omegas = self.block_omegas(block)?;
        let mut s = BlockStats::default();
        for (&(_, c), w) in block.counts.iter().zip(omegas) {
            let c64 = f64::from(c);
            s.sum += c64 * w;
            s.sum_sq += c64 * w * w;
            s.shots += c;
        }
        Ok(s)
    }
}

/// `ω(o)` for every outcome `o`. Each factor `w(b) = m + d·(−1)^b` is expanded
/// over subsets of the term support; a Walsh–Hadamard transform then sums the
/// signed subset coefficients.
fn transform_table(n: usize, active: &[(f64, Vec<(usize, [f64; 2])>)]) -> Vec<f64> {
    let mut g = vec![0.0; 1 << n];
    for (c, factors) in active {
        let w = factors.len();
        for subset in 0..(1usize << w) {
            let mut mask = 0usize;
            let mut prod = *c;
            for (i, &(q, [w0, w1])) in factors.iter().enumerate() {
                if subset >> i & 1 == 1 {
                    prod *= 0.5 * (w0 - w1);
                    mask |= 1 << q;
                } else {
                    prod *= 0.5 * (w0 + w1);
                }
            }
            g[mask] += prod;
        }
    }
    let mut h = 1;
    while h < g.len() {
        for chunk in g.chunks_exact_mut(2 * h) {
            let (lo, hi) = chunk.split_at_mut(h);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        h *= 2;
    }
    g
}

/// Population or sample moments of ω.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    /// `⟨ω⟩`
    pub mean: f64,
    /// `⟨ω²⟩`
    pub second: f64,
    /// `⟨⟨ω⟩_i²⟩`
    pub conditional_second: f64,
}

impl Moments {
    /// Variance of the mean without clamping.
    pub fn raw_variance(&self, settings: f64, shots_per_setting: f64) -> f64 {
        let between = self.conditional_second - self.mean * self.mean;
        let within = self.second - self.conditional_second;
        between / settings + within / (settings * shots_per_setting)
    }

    /// The `T → ∞` limit `(⟨⟨ω⟩_i²⟩ − ⟨ω⟩²)/S`.
    pub fn settings_limited_variance(&self, settings: f64) -> f64 {
        (self.conditional_second - self.mean * self.mean) / settings
    }

    pub fn saving_factor(&self) -> Result<f64> {
        let total = self.second - self.mean * self.mean;
        if !(total > ZERO_VARIANCE * self.second.abs()) {
            return Err(Error::NotApplicable("saving factor of a zero-variance estimator"));
        }
        Ok((1.0 - (self.second - self.conditional_second) / total).clamp(0.0, 1.0))
    }

    /// Unbiased variance of the mean from sample moments over `settings`
    /// blocks of equal size: the sample variance of the block means over `S`.
    pub fn sample_variance(&self, settings: f64) -> f64 {
        (self.conditional_second - self.mean * self.mean) / (settings - 1.0)
    }

    /// Saving factor from sample moments, with the within- and between-setting
    /// spreads each corrected for finite `S` and `T`. `None` below two of either.
    pub fn sample_saving_factor(&self, settings: f64, shots_per_setting: f64) -> Option<f64> {
        if settings < 2.0 || shots_per_setting < 2.0 {
            return None;
        }
        let within = (self.second - self.conditional_second) * shots_per_setting / (shots_per_setting - 1.0);
        let between = (self.conditional_second - self.mean * self.mean) * settings / (settings - 1.0) - within / shots_per_setting;
        let total = between + within;
        if !(total > ZERO_VARIANCE * self.second.abs()) {
            return None;
        }
        Some((between / total).clamp(0.0, 1.0))
    }
}

/// Running totals; merging is associative and commutative up to rounding.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MomentAccumulator {
    pub settings: u64,
    pub shots_per_setting: Option<u32>,
    pub sum: f64,
    pub sum_sq: f64,
    pub sum_setting_mean_sq: f64,
}

impl MomentAccumulator {
    pub fn add(&mut self, stats: &BlockStats) -> Result<()> {
        if stats.shots == 0 {
            return Err(Error::InvalidPlan("setting block without shots".into()));
        }
        match self.shots_per_setting {
            Some(t) if t != stats.shots => {
                return Err(Error::RaggedShots {
                    first: t,
                    other: stats.shots,
                })
            }
            _ => self.shots_per_setting = Some(stats.shots),
        }
        let m = stats.sum / f64::from(stats.shots);
        self.settings += 1;
        self.sum += stats.sum;
        self.sum_sq += stats.sum_sq;
        self.sum_setting_mean_sq += m * m;
        Ok(())
    }

    pub fn merge(&mut self, other: &MomentAccumulator) -> Result<()> {
        match (self.shots_per_setting, other.shots_per_setting) {
            (Some(a), Some(b)) if a != b => return Err(Error::RaggedShots { first: a, other: b }),
            (None, t) => self.shots_per_setting = t,
            _ => {}
        }
        self.settings += other.settings;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
        self.sum_setting_mean_sq += other.sum_setting_mean_sq;
        Ok(())
    }

    pub fn total_shots(&self) -> u64 {
        self.settings * u64::from(self.shots_per_setting.unwrap_or(0))
    }

    pub fn moments(&self) -> Result<Moments> {
        let n = self.total_shots() as f64;
        if self.settings == 0 {
            return Err(Error::EmptyInput);
        }
        Ok(Moments {
            mean: self.sum / n,
            second: self.sum_sq / n,
            conditional_second: self.sum_setting_mean_sq / self.settings as f64,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateReport {
    pub mean: f64,
    /// `None` below two settings.
    pub variance: Option<f64>,
    pub standard_error: Option<f64>,
    pub settings: u64,
    pub shots_per_setting: u32,
    pub moments: Moments,
    /// `None` when the total variance vanishes.
    pub saving_factor: Option<f64>,
    /// The variance estimate came out negative from rounding and was set to zero.
    pub variance_clamped: bool,
}

impl EstimateReport {
    pub fn from_accumulator(acc: &MomentAccumulator) -> Result<Self> {
        let moments = acc.moments()?;
        let t = acc.shots_per_setting.unwrap_or(0);
        let raw = moments.sample_variance(acc.settings as f64);
        let (variance, clamped) = if acc.settings < 2 {
            (None, false)
        } else if raw < 0.0 {
            (Some(0.0), true)
        } else {
            (Some(raw), false)
        };
        Ok(Self {
            mean: moments.mean,
            variance,
            standard_error: variance.map(libm::sqrt),
            settings: acc.settings,
            shots_per_setting: t,
            moments,
            saving_factor: moments.sample_saving_factor(acc.settings as f64, f64::from(t)),
            variance_clamped: clamped,
        })
    }

    pub fn total_shots(&self) -> u64 {
        self.settings * u64::from(self.shots_per_setting)
    }
}

/// Per-block ω totals in block order.
pub fn block_contributions(obs: &Observable, povm: &ProductPovm, blocks: &[SettingBlock]) -> Result<Vec<BlockStats>> {
    let eval = OmegaEvaluator::new(obs, povm)?;
    blocks.iter().map(|b| eval.block_stats(b)).collect()
}

pub fn estimate_from_stats(stats: &[BlockStats]) -> Result<EstimateReport> {
    if stats.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut acc = MomentAccumulator::default();
    for s in stats {
        acc.add(s)?;
    }
    EstimateReport::from_accumulator(&acc)
}

pub fn estimate(obs: &Observable, povm: &ProductPovm, blocks: &[SettingBlock]) -> Result<EstimateReport> {
    if blocks.is_empty() {
        return Err(Error::EmptyInput);
    }
    estimate_from_stats(&block_contributions(obs, povm, blocks)?)
}

pub fn saving_factor(acc: &MomentAccumulator) -> Result<f64> {
    acc.moments()?.saving_factor()
}

pub fn absolute_error(report: &EstimateReport, reference: f64) -> f64 {
    (report.mean - reference).abs()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub settings: u64,
    pub shots: u64,
    pub mean: f64,
    pub standard_error: Option<f64>,
    pub absolute_error: Option<f64>,
}

/// Re-estimates on growing prefixes of the blocks; `grid` lists prefix sizes in settings.
pub fn curve_from_stats(stats: &[BlockStats], grid: &[usize], reference: Option<f64>) -> Result<Vec<CurvePoint>> {
    if grid.windows(2).any(|w| w[0] >= w[1]) || grid.first() == Some(&0) || grid.last().is_some_and(|&g| g > stats.len()) {
        return Err(Error::InvalidPlan(format!(
            "curve grid must increase within 1..={} settings",
            stats.len()
        )));
    }
    let mut acc = MomentAccumulator::default();
    let mut consumed = 0;
    let mut out = Vec::with_capacity(grid.len());
    for &g in grid {
        for s in &stats[consumed..g] {
            acc.add(s)?;
        }
        consumed = g;
        let r = EstimateReport::from_accumulator(&acc)?;
        out.push(CurvePoint {
            settings: r.settings,
            shots: r.total_shots(),
            mean: r.mean,
            standard_error: r.standard_error,
            absolute_error: reference.map(|e| absolute_error(&r, e)),
        });
    }
    Ok(out)
}

pub fn error_vs_shots_curve(
    blocks: &[SettingBlock],
    obs: &Observable,
    povm: &ProductPovm,
    grid: &[usize],
    reference: Option<f64>,
) -> Result<Vec<CurvePoint>> {
    curve_from_stats(&block_contributions(obs, povm, blocks)?, grid, reference)
}

/// About `points` prefix sizes, log-spaced from `min` to `max` settings.
pub fn log_grid(min: usize, max: usize, points: usize) -> Vec<usize> {
    let min = min.max(1).min(max);
    if points < 2 || min == max {
        return vec![max];
    }
    let (a, b) = (libm::log(min as f64), libm::log(max as f64));
    let mut g: Vec<usize> = (0..points)
        .map(|i| libm::round(libm::exp(a + (b - a) * i as f64 / (points - 1) as f64)) as usize)
        .collect();
    g.dedup();
    *g.last_mut().expect("points >= 2") = max;
    g
}

/// Exact moments by enumerating all settings and outcomes.
///
/// Settings are drawn from `truth`'s basis probabilities, outcomes follow the
/// Born rule for `truth` on `state`, and ω uses `estimator`'s duals.
pub fn exact_moments(obs: &Observable, estimator: &ProductPovm, truth: &ProductPovm, state: &ProductState) -> Result<Moments> {
    const MAX_ENUMERATED: usize = 10;
    let n = obs.num_qubits();
    if n > MAX_ENUMERATED {
        return Err(Error::TooManyQubits {
            max: MAX_ENUMERATED,
            found: n,
        });
    }
    for found in [truth.num_qubits(), state.num_qubits()] {
        if found != n {
            return Err(Error::QubitMismatch { expected: n, found });
        }
    }
    let eval = OmegaEvaluator::new(obs, estimator)?;
    // per qubit, basis and outcome: P(b | B) for the true detector
    let cond: Vec<[[f64; 2]; 3]> = (0..n)
        .map(|q| {
            let [a0, a1] = state.amplitudes(q);
            let rho = nalgebra::Matrix2::new(a0 * a0.conj(), a0 * a1.conj(), a1 * a0.conj(), a1 * a1.conj());
            let local = truth.local(q);
            Basis::ALL.map(|b| {
                let p = local.basis_probability(b);
                [0u8, 1].map(|o| (rho * local.effect(EffectLabel::new(b, o))).trace().re / p)
            })
        })
        .collect();
    let (mut mean, mut second, mut cond_second) = (0.0, 0.0, 0.0);
    let mut idx = vec![0usize; n];
    loop {
        let bases: Vec<Basis> = idx.iter().map(|&i| Basis::ALL[i]).collect();
        let p_setting: f64 = (0..n).map(|q| truth.local(q).basis_probability(bases[q])).product();
        if p_setting > 0.0 {
            let setting = MeasurementSetting::new(bases.clone())?;
            let (mut m, mut s2) = (0.0, 0.0);
            for o in 0..(1u64 << n) {
                let p: f64 = (0..n).map(|q| cond[q][bases[q].index()][(o >> q & 1) as usize]).product();
                if p == 0.0 {
                    continue;
                }
                let w = eval.omega(&setting, Outcome(o))?;
                m += p * w;
                s2 += p * w * w;
            }
            mean += p_setting * m;
            second += p_setting * s2;
            cond_second += p_setting * m * m;
        }
        // odometer over 3^n settings
        let mut q = 0;
        while q < n {
            idx[q] += 1;
            if idx[q] < 3 {
                break;
            }
            idx[q] = 0;
            q += 1;
        }
        if q == n {
            break;
        }
    }
    Ok(Moments {
        mean,
        second,
        conditional_second: cond_second,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{noisy_effects, AssignmentMatrix, DetectorModel};
    use crate::pauli::{random_observable, PauliString};
    use crate::povm::{BasisDistribution, LocalPovm};
    use crate::schedule::{regular_schedule, Caps};
    use crate::sim::{sample_settings, simulate_shots};
    use proptest::prelude::*;

    fn synthetic(setting_omegas: &[&[(f64, u32)]]) -> Vec<BlockStats> {
        setting_omegas
            .iter()
            .map(|s| {
                let mut b = BlockStats::default();
                for &(w, c) in s.iter() {
                    b.sum += w * f64::from(c);
                    b.sum_sq += w * w * f64::from(c);
                    b.shots += c;
                }
                b
            })
            .collect()
    }

    fn simulate(state: &ProductState, dists: &[BasisDistribution], model: &DetectorModel, s: usize, t: u32, seed: u64) -> Vec<SettingBlock> {
        let settings = sample_settings(dists, s, seed).unwrap();
        let schedule = regular_schedule(s, t, 0, Caps::default()).unwrap();
        simulate_shots(state, &settings, t, model, &schedule, seed).unwrap()
    }

    #[test]
    fn identity_observable_has_zero_variance() {
        let obs = Observable::new(3, [(0.7, PauliString::identity())]).unwrap();
        let dists = vec![BasisDistribution::symmetric(); 3];
        let povm = ProductPovm::ideal(&dists).unwrap();
        let blocks = simulate(&ProductState::from_bitstring("010").unwrap(), &dists, &DetectorModel::noiseless(3), 50, 10, 1);
        let r = estimate(&obs, &povm, &blocks).unwrap();
        assert!((r.mean - 0.7).abs() < 1e-14);
        assert!(r.variance.unwrap() < 1e-28);
        assert_eq!(r.saving_factor, None);
        assert!(matches!(r.moments.saving_factor(), Err(Error::NotApplicable(_))));
    }

    #[test]
    fn single_shot_variance_limit() {
        let stats = synthetic(&[&[(1.0, 1)], &[(-2.0, 1)], &[(0.5, 1)], &[(3.0, 1)]]);
        let r = estimate_from_stats(&stats).unwrap();
        let m = r.moments;
        assert!((m.conditional_second - m.second).abs() < 1e-15);
        let want = (m.second - m.mean * m.mean) / 3.0;
        assert!((r.variance.unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn synthetic_two_setting_table() {
        // setting A: block mean 0.2 from ω = ±1, setting B: ω = 0
        let stats = synthetic(&[&[(1.0, 6), (-1.0, 4)], &[(0.0, 10)]]);
        let r = estimate_from_stats(&stats).unwrap();
        assert!((r.moments.mean - 0.1).abs() < 1e-16);
        assert_eq!(r.moments.second, 0.5);
        assert!((r.moments.conditional_second - 0.02).abs() < 1e-16);
        // sample variance of {0.2, 0} over S = 2
        assert!((r.variance.unwrap() - 0.01).abs() < 1e-15);
        assert_eq!(r.saving_factor, Some(0.0));
    }

    #[test]
    fn saving_factor_bounds() {
        let equal_means = Moments {
            mean: 0.3,
            second: 1.0,
            conditional_second: 0.09,
        };
        assert_eq!(equal_means.saving_factor().unwrap(), 0.0);
        let deterministic = Moments {
            mean: 0.3,
            second: 1.0,
            conditional_second: 1.0,
        };
        assert_eq!(deterministic.saving_factor().unwrap(), 1.0);
        let noisy = Moments {
            mean: 0.0,
            second: 1.0,
            conditional_second: -0.1,
        };
        assert_eq!(noisy.saving_factor().unwrap(), 0.0);
    }

    #[test]
    fn absolute_error_examples() {
        let r = estimate_from_stats(&synthetic(&[&[(1.0, 3)], &[(1.0, 3)]])).unwrap();
        assert_eq!(absolute_error(&r, 1.0), 0.0);
        assert!((absolute_error(&r, 1.0383) - 3.83e-2).abs() < 1e-15);
    }

    #[test]
    fn ragged_and_empty_rejected() {
        assert!(matches!(estimate_from_stats(&[]), Err(Error::EmptyInput)));
        let stats = synthetic(&[&[(1.0, 3)], &[(1.0, 4)]]);
        assert!(matches!(estimate_from_stats(&stats), Err(Error::RaggedShots { first: 3, other: 4 })));
        let mut a = MomentAccumulator::default();
        a.add(&stats[0]).unwrap();
        let mut b = MomentAccumulator::default();
        b.add(&stats[1]).unwrap();
        assert!(a.merge(&b).is_err());
    }

    #[test]
    fn curve_prefixes() {
        let obs = random_observable(3, 20, 1.0, 2).unwrap();
        let dists = vec![BasisDistribution::symmetric(); 3];
        let povm = ProductPovm::ideal(&dists).unwrap();
        let blocks = simulate(&ProductState::from_bitstring("011").unwrap(), &dists, &DetectorModel::noiseless(3), 200, 5, 3);
        let curve = error_vs_shots_curve(&blocks, &obs, &povm, &[1, 10, 200], Some(0.0)).unwrap();
        assert_eq!(curve[0].standard_error, None);
        assert_eq!(curve[1].shots, 50);
        let full = estimate(&obs, &povm, &blocks).unwrap();
        assert_eq!(curve[2].mean, full.mean);
        assert_eq!(curve[2].standard_error, full.standard_error);
        assert!(error_vs_shots_curve(&blocks, &obs, &povm, &[5, 5], None).is_err());
        assert!(error_vs_shots_curve(&blocks, &obs, &povm, &[201], None).is_err());
        assert_eq!(log_grid(10, 1000, 3), vec![10, 100, 1000]);
    }

    #[test]
    fn transform_and_direct_agree() {
        let obs = random_observable(5, 200, 1.0, 8).unwrap();
        let dist = BasisDistribution::new(0.2, 0.3, 0.5).unwrap();
        // asymmetric flips make every dual weight nonzero
        let noisy: Vec<LocalPovm> = (0..5)
            .map(|q| noisy_effects(&LocalPovm::ideal(&dist), &AssignmentMatrix::flips(0.01 * q as f64, 0.03).unwrap()))
            .collect();
        let povm = ProductPovm::new(noisy).unwrap();
        let eval = OmegaEvaluator::new(&obs, &povm).unwrap();
        let setting = MeasurementSetting::parse("XYZZX").unwrap();
        let block = SettingBlock {
            setting_index: 0,
            setting: setting.clone(),
            counts: (0..32).map(|o| (Outcome(o), 1)).collect(),
            job_index: 0,
            timestamp: 0.0,
        };
        let fast = eval.block_omegas(&block).unwrap();
        for (o, w) in fast.iter().enumerate() {
            let slow = eval.omega(&setting, Outcome(o as u64)).unwrap();
            assert!((w - slow).abs() < 1e-11, "{o}: {w} vs {slow}");
            let bits: Vec<u8> = (0..5).map(|q| (o >> q & 1) as u8).collect();
            let reference = povm.omega_value(&obs, setting.bases(), &bits).unwrap();
            assert!((slow - reference).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_moments_match_symmetric_theory() {
        // for Z on |0⟩ under the symmetric ideal POVM, ω ∈ {0, 3}: ⟨ω⟩ = 1, ⟨ω²⟩ = 3
        let obs = Observable::new(1, [(1.0, PauliString::from_dense("Z").unwrap())]).unwrap();
        let povm = ProductPovm::ideal(&[BasisDistribution::symmetric()]).unwrap();
        let m = exact_moments(&obs, &povm, &povm, &ProductState::from_bitstring("0").unwrap()).unwrap();
        assert!((m.mean - 1.0).abs() < 1e-14);
        assert!((m.second - 3.0).abs() < 1e-14);
        assert!((m.conditional_second - 3.0).abs() < 1e-14);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn permutation_invariance_and_linearity(seed in any::<u64>()) {
            let o1 = random_observable(3, 12, 1.0, seed).unwrap();
            let o2 = random_observable(3, 9, 2.0, seed ^ 1).unwrap();
            let dists = vec![BasisDistribution::new(0.2, 0.3, 0.5).unwrap(); 3];
            let povm = ProductPovm::ideal(&dists).unwrap();
            let state = ProductState::from_bloch_angles(&[(0.4, 0.0), (1.0, 1.0), (2.0, -1.0)]).unwrap();
            let model = DetectorModel::uniform(3, AssignmentMatrix::symmetric_flip(0.05).unwrap());
            let mut blocks = simulate(&state, &dists, &model, 40, 8, seed);
            let a = estimate(&o1, &povm, &blocks).unwrap();
            let b = estimate(&o2, &povm, &blocks).unwrap();
            let combo = estimate(&o1.combine(0.5, &o2, -2.0).unwrap(), &povm, &blocks).unwrap();
            prop_assert!((combo.mean - (0.5 * a.mean - 2.0 * b.mean)).abs() < 1e-12 * (1.0 + combo.mean.abs()));

            blocks.reverse();
            let r = estimate(&o1, &povm, &blocks).unwrap();
            prop_assert!((r.mean - a.mean).abs() < 1e-12);
            prop_assert!((r.variance.unwrap() - a.variance.unwrap()).abs() < 1e-12);
        }

        #[test]
        fn merge_matches_sequential(split in 1usize..39, seed in any::<u64>()) {
            let obs = random_observable(2, 8, 1.0, seed).unwrap();
            let dists = vec![BasisDistribution::symmetric(); 2];
            let povm = ProductPovm::ideal(&dists).unwrap();
            let blocks = simulate(&ProductState::from_bitstring("01").unwrap(), &dists, &DetectorModel::noiseless(2), 40, 4, seed);
            let stats = block_contributions(&obs, &povm, &blocks).unwrap();
            let mut left = MomentAccumulator::default();
            let mut right = MomentAccumulator::default();
            stats[..split].iter().for_each(|s| left.add(s).unwrap());
            stats[split..].iter().for_each(|s| right.add(s).unwrap());
            right.merge(&left).unwrap();
            let merged = EstimateReport::from_accumulator(&right).unwrap();
            let seq = estimate_from_stats(&stats).unwrap();
            prop_assert!((merged.mean - seq.mean).abs() <= 1e-10 * (1.0 + seq.mean.abs()));
            prop_assert!((merged.variance.unwrap() - seq.variance.unwrap()).abs() <= 1e-10 * (1e-12 + seq.variance.unwrap()));
        }
    }
}
