//! Pauli-string observables on product states.
//!
//! Qubit `q` corresponds to character `q` of a dense axis string, reading left
//! to right, and likewise to character `q` of a computational bitstring.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, ParseErrorKind, Result};
use crate::rng::{keyed_rng, Domain};

/// Largest register supported; outcomes are packed into a `u64`.
pub const MAX_QUBITS: usize = 64;

/// A measurement direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Basis {
    X,
    Y,
    Z,
}

impl Basis {
    pub const ALL: [Basis; 3] = [Basis::X, Basis::Y, Basis::Z];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Basis> {
        Self::ALL.get(i).copied()
    }

    pub fn as_char(self) -> char {
        match self {
            Basis::X => 'X',
            Basis::Y => 'Y',
            Basis::Z => 'Z',
        }
    }

    pub fn from_char(c: char) -> Option<Basis> {
        match c {
            'X' => Some(Basis::X),
            'Y' => Some(Basis::Y),
            'Z' => Some(Basis::Z),
            _ => None,
        }
    }
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

/// A single-qubit Pauli operator including the identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub const ALL: [Pauli; 4] = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_char(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }
}

impl From<Basis> for Pauli {
    fn from(b: Basis) -> Pauli {
        match b {
            Basis::X => Pauli::X,
            Basis::Y => Pauli::Y,
            Basis::Z => Pauli::Z,
        }
    }
}

/// A tensor product of Pauli operators, stored sparsely.
///
/// Only non-identity factors are kept, sorted by qubit. The empty string is
/// the identity.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct PauliString {
    axes: Vec<(usize, Basis)>,
}

impl PauliString {
    pub fn identity() -> Self {
        Self::default()
    }

    /// Builds a string from `(qubit, axis)` pairs; a qubit may appear once.
    pub fn from_axes(axes: impl IntoIterator<Item = (usize, Basis)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (q, b) in axes {
            if map.insert(q, b).is_some() {
                return Err(Error::InvalidState(format!("qubit {q} repeated in Pauli string")));
            }
        }
        Ok(Self {
            axes: map.into_iter().collect(),
        })
    }

    /// Parses a dense string such as `"XIZY"`.
    pub fn from_dense(s: &str) -> Result<Self> {
        let mut axes = Vec::new();
        for (q, c) in s.chars().enumerate() {
            match c {
                'I' => {}
                other => match Basis::from_char(other) {
                    Some(b) => axes.push((q, b)),
                    None => {
                        return Err(Error::Parse {
                            line: 0,
                            kind: ParseErrorKind::IllegalCharacter(other),
                        })
                    }
                },
            }
        }
        Ok(Self { axes })
    }

    /// Non-identity factors sorted by qubit.
    pub fn axes(&self) -> &[(usize, Basis)] {
        &self.axes
    }

    pub fn get(&self, qubit: usize) -> Pauli {
        match self.axes.binary_search_by_key(&qubit, |&(q, _)| q) {
            Ok(i) => self.axes[i].1.into(),
            Err(_) => Pauli::I,
        }
    }

    pub fn weight(&self) -> usize {
        self.axes.len()
    }

    pub fn is_identity(&self) -> bool {
        self.axes.is_empty()
    }

    pub fn max_qubit(&self) -> Option<usize> {
        self.axes.last().map(|&(q, _)| q)
    }

    pub fn to_dense(&self, num_qubits: usize) -> String {
        (0..num_qubits).map(|q| self.get(q).as_char()).collect()
    }
}

/// A real-weighted sum of Pauli strings on `num_qubits` qubits.
///
/// Terms are kept merged and sorted by string, so two observables built from
/// the same terms in any order compare equal.
#[derive(Debug, Clone, PartialEq)]
pub struct Observable {
    num_qubits: usize,
    terms: Vec<(f64, PauliString)>,
}

impl Observable {
    pub fn new(num_qubits: usize, terms: impl IntoIterator<Item = (f64, PauliString)>) -> Result<Self> {
        if num_qubits == 0 {
            return Err(Error::InvalidState("observable needs at least one qubit".into()));
        }
        if num_qubits > MAX_QUBITS {
            return Err(Error::TooManyQubits {
                max: MAX_QUBITS,
                found: num_qubits,
            });
        }
        let mut merged: BTreeMap<PauliString, f64> = BTreeMap::new();
        for (c, p) in terms {
            if !c.is_finite() {
                return Err(Error::NonFiniteCoefficient(c));
            }
            if let Some(q) = p.max_qubit() {
                if q >= num_qubits {
                    return Err(Error::QubitOutOfRange { index: q, num_qubits });
                }
            }
            *merged.entry(p).or_insert(0.0) += c;
        }
        Ok(Self {
            num_qubits,
            terms: merged.into_iter().map(|(p, c)| (c, p)).collect(),
        })
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn terms(&self) -> &[(f64, PauliString)] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &Observable, b: f64) -> Result<Observable> {
        if self.num_qubits != other.num_qubits {
            return Err(Error::QubitMismatch {
                expected: self.num_qubits,
                found: other.num_qubits,
            });
        }
        let terms = self
            .terms
            .iter()
            .map(|(c, p)| (a * c, p.clone()))
            .chain(other.terms.iter().map(|(c, p)| (b * c, p.clone())));
        Observable::new(self.num_qubits, terms)
    }

    /// Parses the Hamiltonian text format.
    ///
    /// ```text
    /// # comment
    /// qubits 3
    /// -0.5 ZZI
    /// 0.25 X0 Z2
    /// ```
    ///
    /// The first non-comment line declares the register size. Each further
    /// line is a coefficient followed by either a dense axis string of exactly
    /// `N` characters from `IXYZ`, or sparse tokens like `X0 Z3`.
    pub fn parse(text: &str) -> Result<Observable> {
        let mut num_qubits = None;
        let mut terms = Vec::new();
        for (idx, raw) in text.split('\n').enumerate() {
            let line_no = idx + 1;
            let err = |kind| Error::Parse { line: line_no, kind };
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            let line = match line.find('#') {
                Some(i) => &line[..i],
                None => line,
            };
            let mut tokens = line.split_whitespace();
            let Some(first) = tokens.next() else { continue };
            let Some(n) = num_qubits else {
                if first != "qubits" {
                    return Err(err(ParseErrorKind::MissingHeader));
                }
                let value = tokens
                    .next()
                    .ok_or_else(|| err(ParseErrorKind::BadHeader("missing qubit count".into())))?;
                let n: usize = value
                    .parse()
                    .map_err(|_| err(ParseErrorKind::BadHeader(format!("`{value}` is not a count"))))?;
                if n == 0 || n > MAX_QUBITS {
                    return Err(err(ParseErrorKind::BadHeader(format!(
                        "qubit count must be in 1..={MAX_QUBITS}"
                    ))));
                }
                if let Some(extra) = tokens.next() {
                    return Err(err(ParseErrorKind::BadHeader(format!("unexpected `{extra}`"))));
                }
                num_qubits = Some(n);
                continue;
            };
            let coeff: f64 = first
                .parse()
                .map_err(|_| err(ParseErrorKind::MalformedCoefficient(first.to_string())))?;
            if !coeff.is_finite() {
                return Err(err(ParseErrorKind::NonFinite));
            }
            let rest: Vec<&str> = tokens.collect();
            let string = match rest.as_slice() {
                [] => return Err(err(ParseErrorKind::MissingAxes)),
                [single] if !is_sparse_token(single) => parse_dense(single, n).map_err(err)?,
                many => parse_sparse(many, n).map_err(err)?,
            };
            terms.push((coeff, string));
        }
        let n = num_qubits.ok_or(Error::Parse {
            line: 0,
            kind: ParseErrorKind::MissingHeader,
        })?;
        Observable::new(n, terms)
    }

    /// Serializes to the dense text format accepted by [`Observable::parse`].
    pub fn to_text(&self) -> String {
        let mut out = format!("qubits {}\n", self.num_qubits);
        for (c, p) in &self.terms {
            out.push_str(&format!("{:?} {}\n", c, p.to_dense(self.num_qubits)));
        }
        out
    }

    /// `Σ_P c_P Π_q ⟨ψ_q|σ_{P,q}|ψ_q⟩`.
    pub fn exact_expectation(&self, state: &ProductState) -> Result<f64> {
        if state.num_qubits() != self.num_qubits {
            return Err(Error::QubitMismatch {
                expected: self.num_qubits,
                found: state.num_qubits(),
            });
        }
        let bloch: Vec<[f64; 3]> = (0..self.num_qubits).map(|q| state.bloch(q)).collect();
        Ok(self
            .terms
            .iter()
            .map(|(c, p)| c * p.axes().iter().map(|&(q, b)| bloch[q][b.index()]).product::<f64>())
            .sum())
    }

    /// Computational basis state (qubit 0 first) minimizing the energy of
    /// the purely diagonal terms, found by enumeration; ties go to the
    /// smallest bit pattern.
    pub fn lowest_diagonal_bits(&self) -> Result<Vec<bool>> {
        const MAX_ENUMERATED: usize = 24;
        if self.num_qubits > MAX_ENUMERATED {
            return Err(Error::TooManyQubits {
                max: MAX_ENUMERATED,
                found: self.num_qubits,
            });
        }
        let diagonal: Vec<(f64, u64)> = self
            .terms
            .iter()
            .filter(|(_, p)| p.axes().iter().all(|&(_, b)| b == Basis::Z))
            .map(|(c, p)| (*c, p.axes().iter().fold(0u64, |m, &(q, _)| m | 1 << q)))
            .collect();
        let energy = |bits: u64| -> f64 {
            diagonal
                .iter()
                .map(|&(c, mask)| if (bits & mask).count_ones() % 2 == 0 { c } else { -c })
                .sum()
        };
        let mut best = (f64::INFINITY, 0u64);
        for bits in 0..1u64 << self.num_qubits {
            let e = energy(bits);
            if e < best.0 {
                best = (e, bits);
            }
        }
        Ok((0..self.num_qubits).map(|q| best.1 >> q & 1 == 1).collect())
    }
}

fn is_sparse_token(tok: &str) -> bool {
    let mut chars = tok.chars();
    matches!(chars.next(), Some('X' | 'Y' | 'Z' | 'I'))
        && tok.len() > 1
        && chars.all(|c| c.is_ascii_digit())
}

fn parse_dense(tok: &str, n: usize) -> core::result::Result<PauliString, ParseErrorKind> {
    if let Some(bad) = tok.chars().find(|c| !matches!(c, 'I' | 'X' | 'Y' | 'Z')) {
        return Err(ParseErrorKind::IllegalCharacter(bad));
    }
    let len = tok.chars().count();
    if len != n {
        return Err(ParseErrorKind::LengthMismatch { expected: n, found: len });
    }
    PauliString::from_dense(tok).map_err(|_| ParseErrorKind::BadToken(tok.to_string()))
}

fn parse_sparse(tokens: &[&str], n: usize) -> core::result::Result<PauliString, ParseErrorKind> {
    let mut seen = BTreeSet::new();
    let mut axes = Vec::new();
    for tok in tokens {
        if !is_sparse_token(tok) {
            return Err(ParseErrorKind::BadToken(tok.to_string()));
        }
        let (head, digits) = tok.split_at(1);
        let index: usize = digits.parse().map_err(|_| ParseErrorKind::BadToken(tok.to_string()))?;
        if index >= n {
            return Err(ParseErrorKind::QubitOutOfRange { index, num_qubits: n });
        }
        if !seen.insert(index) {
            return Err(ParseErrorKind::RepeatedQubit(index));
        }
        if let Some(b) = head.chars().next().and_then(Basis::from_char) {
            axes.push((index, b));
        }
    }
    PauliString::from_axes(axes).map_err(|_| ParseErrorKind::BadToken(tokens.join(" ")))
}

/// Uniformly random distinct Pauli strings with coefficients in `[-scale, scale]`.
pub fn random_observable(num_qubits: usize, num_terms: usize, coefficient_scale: f64, seed: u64) -> Result<Observable> {
    check_size(num_qubits)?;
    let available = 4u128.checked_pow(num_qubits as u32).unwrap_or(u128::MAX);
    if num_terms as u128 > available {
        return Err(Error::TooManyTerms {
            requested: num_terms,
            available,
        });
    }
    let mut rng = keyed_rng(seed, Domain::Observable, num_qubits as u64, num_terms as u64);
    let mut chosen = BTreeSet::new();
    let mut terms = Vec::with_capacity(num_terms);
    // Dense enumeration once the request covers a large share of the space.
    if num_terms as u128 * 2 > available {
        let mut all: Vec<u64> = (0..available as u64).collect();
        for i in 0..num_terms {
            let j = rng.random_range(i..all.len());
            all.swap(i, j);
        }
        for &code in &all[..num_terms] {
            let string = decode_string(code, num_qubits);
            terms.push((uniform_coefficient(&mut rng, coefficient_scale), string));
        }
    } else {
        while terms.len() < num_terms {
            let axes = (0..num_qubits).filter_map(|q| match rng.random_range(0..4u8) {
                0 => None,
                k => Some((q, Basis::ALL[k as usize - 1])),
            });
            let string = PauliString {
                axes: axes.collect(),
            };
            if chosen.insert(string.clone()) {
                terms.push((uniform_coefficient(&mut rng, coefficient_scale), string));
            }
        }
    }
    Observable::new(num_qubits, terms)
}

/// A chemistry-flavoured synthetic Hamiltonian.
///
/// The diagonal block (identity, every `Z_i`, every `Z_i Z_j`, in that order,
/// truncated to `num_terms`) carries coefficients uniform in `[-scale, scale]`.
/// The remaining terms are distinct off-diagonal strings of weight at most
/// four with an even number of `Y` factors (real Hermitian), weighted by
/// `offdiagonal_ratio * scale`. On computational-basis states only the
/// diagonal block contributes to the energy.
pub fn chemistry_like_observable(
    num_qubits: usize,
    num_terms: usize,
    scale: f64,
    offdiagonal_ratio: f64,
    seed: u64,
) -> Result<Observable> {
    check_size(num_qubits)?;
    let mut rng = keyed_rng(seed, Domain::Observable, num_qubits as u64, u64::MAX - num_terms as u64);
    let mut diagonal = Vec::new();
    diagonal.push(PauliString::identity());
    for q in 0..num_qubits {
        diagonal.push(PauliString {
            axes: alloc::vec![(q, Basis::Z)],
        });
    }
    for q in 0..num_qubits {
        for r in q + 1..num_qubits {
            diagonal.push(PauliString {
                axes: alloc::vec![(q, Basis::Z), (r, Basis::Z)],
            });
        }
    }
    diagonal.truncate(num_terms);
    let mut chosen: BTreeSet<PauliString> = diagonal.iter().cloned().collect();
    let mut terms: Vec<(f64, PauliString)> = diagonal
        .into_iter()
        .map(|p| (uniform_coefficient(&mut rng, scale), p))
        .collect();
    let max_weight = num_qubits.min(4);
    let mut attempts = 0usize;
    while terms.len() < num_terms {
        attempts += 1;
        if attempts > 1000 * num_terms.max(1) {
            return Err(Error::TooManyTerms {
                requested: num_terms,
                available: chosen.len() as u128,
            });
        }
        let weight = rng.random_range(1..=max_weight);
        let mut qubits = BTreeSet::new();
        while qubits.len() < weight {
            qubits.insert(rng.random_range(0..num_qubits));
        }
        let axes: Vec<(usize, Basis)> = qubits
            .into_iter()
            .map(|q| (q, Basis::ALL[rng.random_range(0..3usize)]))
            .collect();
        let ys = axes.iter().filter(|(_, b)| *b == Basis::Y).count();
        let off_diagonal = axes.iter().any(|(_, b)| *b != Basis::Z);
        if !off_diagonal || ys % 2 == 1 {
            continue;
        }
        let string = PauliString { axes };
        if chosen.insert(string.clone()) {
            terms.push((uniform_coefficient(&mut rng, scale * offdiagonal_ratio), string));
        }
    }
    Observable::new(num_qubits, terms)
}

fn check_size(num_qubits: usize) -> Result<()> {
    if num_qubits == 0 || num_qubits > MAX_QUBITS {
        return Err(Error::TooManyQubits {
            max: MAX_QUBITS,
            found: num_qubits,
        });
    }
    Ok(())
}

fn uniform_coefficient(rng: &mut impl Rng, scale: f64) -> f64 {
    let u: f64 = rng.random();
    // `+ 0.0` folds a negative zero into positive zero
    scale * (2.0 * u - 1.0) + 0.0
}

fn decode_string(mut code: u64, num_qubits: usize) -> PauliString {
    let mut axes = Vec::new();
    for q in 0..num_qubits {
        let k = (code % 4) as usize;
        code /= 4;
        if k > 0 {
            axes.push((q, Basis::ALL[k - 1]));
        }
    }
    PauliString { axes }
}

/// A separable pure state, one normalized 2-vector per qubit.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductState {
    qubits: Vec<[Complex64; 2]>,
}

impl ProductState {
    pub fn new(qubits: Vec<[Complex64; 2]>) -> Result<Self> {
        if qubits.is_empty() || qubits.len() > MAX_QUBITS {
            return Err(Error::TooManyQubits {
                max: MAX_QUBITS,
                found: qubits.len(),
            });
        }
        for (q, v) in qubits.iter().enumerate() {
            let norm = v[0].norm_sqr() + v[1].norm_sqr();
            if (norm - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidState(format!("qubit {q} has squared norm {norm}")));
            }
        }
        Ok(Self { qubits })
    }

    /// Computational basis state; `bits[q]` is the value of qubit `q`.
    pub fn from_bits(bits: &[bool]) -> Result<Self> {
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        Self::new(bits.iter().map(|&b| if b { [zero, one] } else { [one, zero] }).collect())
    }

    /// Parses a string of `0`/`1` characters.
    pub fn from_bitstring(bits: &str) -> Result<Self> {
        let parsed: Option<Vec<bool>> = bits
            .chars()
            .map(|c| match c {
                '0' => Some(false),
                '1' => Some(true),
                _ => None,
            })
            .collect();
        let parsed = parsed.ok_or_else(|| Error::InvalidState(format!("`{bits}` is not a bitstring")))?;
        Self::from_bits(&parsed)
    }

    /// `cos(θ/2)|0⟩ + e^{iφ} sin(θ/2)|1⟩` per qubit.
    pub fn from_bloch_angles(angles: &[(f64, f64)]) -> Result<Self> {
        Self::new(
            angles
                .iter()
                .map(|&(theta, phi)| {
                    let (s, c) = libm::sincos(theta / 2.0);
                    [Complex64::new(c, 0.0), Complex64::from_polar(s, phi)]
                })
                .collect(),
        )
    }

    pub fn num_qubits(&self) -> usize {
        self.qubits.len()
    }

    pub fn amplitudes(&self, qubit: usize) -> [Complex64; 2] {
        self.qubits[qubit]
    }

    /// Bloch vector `(⟨X⟩, ⟨Y⟩, ⟨Z⟩)` of one qubit.
    pub fn bloch(&self, qubit: usize) -> [f64; 3] {
        let [a, b] = self.qubits[qubit];
        let cross = a.conj() * b;
        [2.0 * cross.re, 2.0 * cross.im, a.norm_sqr() - b.norm_sqr()]
    }

    /// Born probability of outcome `bit` when measuring `qubit` along `basis`.
    /// Outcome 0 is the +1 eigenvector.
    pub fn outcome_probability(&self, qubit: usize, basis: Basis, bit: u8) -> f64 {
        let r = self.bloch(qubit)[basis.index()];
        let p0 = (0.5 * (1.0 + r)).clamp(0.0, 1.0);
        if bit == 0 {
            p0
        } else {
            1.0 - p0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::Rng;
    use proptest::prelude::*;

    fn zz() -> PauliString {
        PauliString::from_axes([(0, Basis::Z), (1, Basis::Z)]).unwrap()
    }

    #[test]
    fn parses_dense_term() {
        let obs = Observable::parse("qubits 2\n0.5 ZZ").unwrap();
        assert_eq!(obs, Observable::new(2, [(0.5, zz())]).unwrap());
    }

    #[test]
    fn merges_duplicate_terms() {
        let obs = Observable::parse("qubits 1\n1.0 I\n2.0 I").unwrap();
        assert_eq!(obs.terms(), &[(3.0, PauliString::identity())]);
    }

    #[test]
    fn rejects_illegal_character_with_line() {
        let err = Observable::parse("qubits 2\n0.5 ZQ").unwrap_err();
        match err {
            Error::Parse { line, kind } => {
                assert_eq!(line, 2);
                assert_eq!(kind, ParseErrorKind::IllegalCharacter('Q'));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn reports_malformed_coefficient_and_length() {
        let e = Observable::parse("# hdr\nqubits 3\n\nabc XYZ").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 4, kind: ParseErrorKind::MalformedCoefficient(_) }));
        let e = Observable::parse("qubits 3\n1.0 XY").unwrap_err();
        assert!(matches!(
            e,
            Error::Parse { line: 2, kind: ParseErrorKind::LengthMismatch { expected: 3, found: 2 } }
        ));
        let e = Observable::parse("0.5 Z").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, kind: ParseErrorKind::MissingHeader }));
    }

    #[test]
    fn sparse_tokens_comments_and_crlf() {
        let a = Observable::parse("qubits 4\r\n0.25 X0 Z3 # trailing\r\n-1 IIII\r\n").unwrap();
        let b = Observable::parse("qubits 4\n-1 IIII\n0.25 XIIZ\n").unwrap();
        assert_eq!(a, b);
        let e = Observable::parse("qubits 2\n1 X0 X0").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, kind: ParseErrorKind::RepeatedQubit(0) }));
        let e = Observable::parse("qubits 2\n1 X5").unwrap_err();
        assert!(matches!(e, Error::Parse { kind: ParseErrorKind::QubitOutOfRange { .. }, .. }));
    }

    #[test]
    fn line_order_is_irrelevant() {
        let a = Observable::parse("qubits 2\n1 XX\n2 ZI\n3 IY").unwrap();
        let b = Observable::parse("qubits 2\n3 IY\n1 XX\n2 ZI").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn eigenstate_expectations() {
        let zero = ProductState::from_bitstring("0").unwrap();
        let z = Observable::parse("qubits 1\n1 Z").unwrap();
        let x = Observable::parse("qubits 1\n1 X").unwrap();
        assert_eq!(z.exact_expectation(&zero).unwrap(), 1.0);
        assert_eq!(x.exact_expectation(&zero).unwrap(), 0.0);
    }

    #[test]
    fn two_qubit_expectation_matches_dense_contraction() {
        let obs = Observable::parse("qubits 2\n0.5 ZZ\n0.25 XI").unwrap();
        let state = ProductState::from_bitstring("01").unwrap();
        let e = obs.exact_expectation(&state).unwrap();
        assert!((e - oracle::dense_expectation(&obs, &state)).abs() < 1e-15);
        assert!((e + 0.5).abs() < 1e-15);
    }

    #[test]
    fn expectation_rejects_mismatch() {
        let obs = Observable::parse("qubits 2\n1 ZZ").unwrap();
        let state = ProductState::from_bitstring("0").unwrap();
        assert!(matches!(obs.exact_expectation(&state), Err(Error::QubitMismatch { .. })));
    }

    #[test]
    fn random_observable_sizes_and_determinism() {
        let a = random_observable(8, 361, 1.0, 7).unwrap();
        assert_eq!(a.len(), 361);
        assert!(a.terms().iter().all(|(c, _)| c.abs() <= 1.0));
        assert_eq!(a, random_observable(8, 361, 1.0, 7).unwrap());
        assert_ne!(a, random_observable(8, 361, 1.0, 8).unwrap());

        let single = random_observable(1, 1, 0.0, 99).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single.terms()[0].0, 0.0);

        let full = random_observable(2, 16, 1.0, 1).unwrap();
        assert_eq!(full.len(), 16);
        assert!(matches!(random_observable(2, 17, 1.0, 1), Err(Error::TooManyTerms { .. })));
    }

    #[test]
    fn chemistry_like_shape() {
        let h = chemistry_like_observable(8, 361, 0.1, 0.05, 3).unwrap();
        assert_eq!(h.len(), 361);
        let diag = h
            .terms()
            .iter()
            .filter(|(_, p)| p.axes().iter().all(|&(_, b)| b == Basis::Z))
            .count();
        assert_eq!(diag, 1 + 8 + 28);
        for (_, p) in h.terms() {
            assert!(p.weight() <= 4);
            assert_eq!(p.axes().iter().filter(|(_, b)| *b == Basis::Y).count() % 2, 0);
        }
    }

    #[test]
    fn bloch_angles_state() {
        let s = ProductState::from_bloch_angles(&[(core::f64::consts::FRAC_PI_2, 0.0)]).unwrap();
        let [x, y, z] = s.bloch(0);
        assert!((x - 1.0).abs() < 1e-15 && y.abs() < 1e-15 && z.abs() < 1e-15);
        assert!((s.outcome_probability(0, Basis::X, 0) - 1.0).abs() < 1e-15);
    }

    /// Dense statevector contraction, independent of the product formula.
    pub(crate) mod oracle {
        use super::*;

        fn apply(p: Pauli, amp: [Complex64; 2]) -> [Complex64; 2] {
            let i = Complex64::new(0.0, 1.0);
            match p {
                Pauli::I => amp,
                Pauli::X => [amp[1], amp[0]],
                Pauli::Y => [-i * amp[1], i * amp[0]],
                Pauli::Z => [amp[0], -amp[1]],
            }
        }

        fn statevector(state: &ProductState) -> Vec<Complex64> {
            let n = state.num_qubits();
            (0..1usize << n)
                .map(|idx| {
                    (0..n)
                        .map(|q| state.amplitudes(q)[(idx >> q) & 1])
                        .product::<Complex64>()
                })
                .collect()
        }

        pub fn dense_expectation(obs: &Observable, state: &ProductState) -> f64 {
            let n = state.num_qubits();
            let psi = statevector(state);
            let mut total = 0.0;
            for (c, p) in obs.terms() {
                let mut phi = psi.clone();
                for q in 0..n {
                    let op = p.get(q);
                    for idx in 0..phi.len() {
                        if (idx >> q) & 1 == 0 {
                            let j = idx | (1 << q);
                            let out = apply(op, [phi[idx], phi[j]]);
                            phi[idx] = out[0];
                            phi[j] = out[1];
                        }
                    }
                }
                let inner: Complex64 = psi.iter().zip(&phi).map(|(a, b)| a.conj() * b).sum();
                total += c * inner.re;
            }
            total
        }
    }

    fn arb_state(n: usize) -> impl Strategy<Value = ProductState> {
        proptest::collection::vec((0.0..core::f64::consts::PI, 0.0..6.3f64), n)
            .prop_map(|a| ProductState::from_bloch_angles(&a).unwrap())
    }

    #[test]
    fn lowest_diagonal_state_minimizes_the_diagonal_energy() {
        let obs = Observable::parse("qubits 3\n0.5 ZII\n-0.25 IZZ\n0.125 IIZ\n2.0 XXI\n").unwrap();
        let bits = obs.lowest_diagonal_bits().unwrap();
        let best = ProductState::from_bits(&bits).unwrap();
        let diagonal = Observable::parse("qubits 3\n0.5 ZII\n-0.25 IZZ\n0.125 IIZ\n").unwrap();
        let e_best = diagonal.exact_expectation(&best).unwrap();
        for k in 0..8u8 {
            let other: Vec<bool> = (0..3).map(|q| k >> q & 1 == 1).collect();
            let e = diagonal.exact_expectation(&ProductState::from_bits(&other).unwrap()).unwrap();
            assert!(e_best <= e + 1e-12);
        }
        assert_eq!(bits, vec![true, true, true]);
    }

    proptest! {
        #[test]
        fn expectation_matches_dense_oracle(n in 1usize..=6, terms in 1usize..20, seed in any::<u64>(), state_seed in any::<u64>()) {
            let obs = random_observable(n, terms.min(1 << (2 * n)), 1.0, seed).unwrap();
            let mut rng = keyed_rng(state_seed, Domain::Settings, 0, 0);
            let angles: Vec<(f64, f64)> = (0..n).map(|_| (rng.random_range(0.0..core::f64::consts::PI), rng.random_range(0.0..core::f64::consts::TAU))).collect();
            let state = ProductState::from_bloch_angles(&angles).unwrap();
            let fast = obs.exact_expectation(&state).unwrap();
            prop_assert!((fast - oracle::dense_expectation(&obs, &state)).abs() < 1e-10);
        }

        #[test]
        fn expectation_is_linear(a in -3.0..3.0f64, b in -3.0..3.0f64, s1 in any::<u64>(), s2 in any::<u64>(), state in arb_state(4)) {
            let o1 = random_observable(4, 12, 1.0, s1).unwrap();
            let o2 = random_observable(4, 9, 1.0, s2).unwrap();
            let lhs = o1.combine(a, &o2, b).unwrap().exact_expectation(&state).unwrap();
            let rhs = a * o1.exact_expectation(&state).unwrap() + b * o2.exact_expectation(&state).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn text_round_trip(n in 1usize..=7, terms in 1usize..30, scale in 1e-6..1e3f64, seed in any::<u64>()) {
            let obs = random_observable(n, terms.min(1 << (2 * n)), scale, seed).unwrap();
            let text = obs.to_text();
            let back = Observable::parse(&text).unwrap();
            prop_assert_eq!(&back, &obs);
            prop_assert_eq!(back.to_text(), text);
        }
    }

    #[test]
    fn dense_and_sparse_forms_agree() {
        let v = vec![(0usize, Basis::X), (3, Basis::Y)];
        let p = PauliString::from_axes(v).unwrap();
        assert_eq!(p.to_dense(5), "XIIYI");
        assert_eq!(PauliString::from_dense("XIIYI").unwrap(), p);
        assert_eq!(p.get(3), Pauli::Y);
        assert_eq!(p.get(1), Pauli::I);
    }
}
