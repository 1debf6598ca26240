//! Gray-labeled square QAM constellations and a-priori metric tables.
//!
//! Labels use the antipodal convention: binary 0 is `Bit::Plus` (+1) and
//! binary 1 is `Bit::Minus` (-1), so a positive LLR favors binary 0.
//! Bit `b = 0` is the most significant bit of the in-phase group; the first
//! `Q/2` bits select the in-phase level, the rest the quadrature level.
//! Points are stored at the index equal to their binary label.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModemError {
    #[error("label has {actual} bits, constellation expects {expected}")]
    LabelLength { expected: usize, actual: usize },
    #[error("unknown constellation `{0}` (expected qpsk, qam16 or qam64)")]
    UnknownKind(String),
    #[error("prior LLR ({level}, {bit}) is not finite")]
    NonFinitePrior { level: usize, bit: usize },
    #[error("prior matrix is {levels}x{bits}, expected {expected_levels}x{expected_bits}")]
    PriorShape {
        levels: usize,
        bits: usize,
        expected_levels: usize,
        expected_bits: usize,
    },
}

/// One label bit in antipodal form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Bit {
    /// Binary 0, label value +1.
    Plus,
    /// Binary 1, label value -1.
    Minus,
}

impl Bit {
    pub fn from_binary(bit: u8) -> Self {
        if bit == 0 {
            Bit::Plus
        } else {
            Bit::Minus
        }
    }

    pub fn binary(self) -> u8 {
        match self {
            Bit::Plus => 0,
            Bit::Minus => 1,
        }
    }

    pub fn sign(self) -> f64 {
        match self {
            Bit::Plus => 1.0,
            Bit::Minus => -1.0,
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Bit::Plus => Bit::Minus,
            Bit::Minus => Bit::Plus,
        }
    }

    /// Hard decision on an LLR; zero decides for `Plus`.
    pub fn from_llr(llr: f64) -> Self {
        if llr >= 0.0 {
            Bit::Plus
        } else {
            Bit::Minus
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConstellationKind {
    Qpsk,
    Qam16,
    Qam64,
}

impl ConstellationKind {
    pub fn bits_per_symbol(self) -> usize {
        match self {
            ConstellationKind::Qpsk => 2,
            ConstellationKind::Qam16 => 4,
            ConstellationKind::Qam64 => 6,
        }
    }
}

impl FromStr for ConstellationKind {
    type Err = ModemError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "qpsk" => Ok(ConstellationKind::Qpsk),
            "qam16" | "16qam" => Ok(ConstellationKind::Qam16),
            "qam64" | "64qam" => Ok(ConstellationKind::Qam64),
            _ => Err(ModemError::UnknownKind(s.to_string())),
        }
    }
}

impl fmt::Display for ConstellationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConstellationKind::Qpsk => "qpsk",
            ConstellationKind::Qam16 => "qam16",
            ConstellationKind::Qam64 => "qam64",
        })
    }
}

#[derive(Debug, Clone)]
pub struct Constellation {
    kind: ConstellationKind,
    q_bits: usize,
    points: Vec<Complex64>,
    // signs[p * q_bits + b] = label value of bit b of point p
    signs: Vec<f64>,
}

impl Constellation {
    pub fn new(kind: ConstellationKind) -> Self {
        let q_bits = kind.bits_per_symbol();
        let axis_bits = q_bits / 2;
        let levels = 1usize << axis_bits;
        // Level index i carries Gray code i ^ (i >> 1); invert to place points by code.
        let mut level_of_code = vec![0.0; levels];
        for i in 0..levels {
            level_of_code[i ^ (i >> 1)] = (2 * i) as f64 - (levels - 1) as f64;
        }
        // Mean energy of the unnormalized grid is 2 (M - 1) / 3 per point.
        let scale = (3.0 / (2.0 * (levels * levels - 1) as f64)).sqrt();

        let size = 1usize << q_bits;
        let mut points = Vec::with_capacity(size);
        let mut signs = Vec::with_capacity(size * q_bits);
        for label in 0..size {
            let in_phase = level_of_code[label >> axis_bits];
            let quadrature = level_of_code[label & (levels - 1)];
            points.push(Complex64::new(in_phase, quadrature) * scale);
            for b in 0..q_bits {
                let binary = (label >> (q_bits - 1 - b)) & 1;
                signs.push(if binary == 0 { 1.0 } else { -1.0 });
            }
        }
        Self {
            kind,
            q_bits,
            points,
            signs,
        }
    }

    pub fn kind(&self) -> ConstellationKind {
        self.kind
    }

    /// Bits per symbol (`Q`).
    pub fn bits_per_symbol(&self) -> usize {
        self.q_bits
    }

    pub fn size(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn point(&self, index: usize) -> Complex64 {
        self.points[index]
    }

    /// Label value (+1 / -1) of bit `b` of point `index`.
    #[inline]
    pub fn sign(&self, index: usize, b: usize) -> f64 {
        self.signs[index * self.q_bits + b]
    }

    /// Label values of all bits of point `index`.
    #[inline]
    pub fn signs(&self, index: usize) -> &[f64] {
        &self.signs[index * self.q_bits..(index + 1) * self.q_bits]
    }

    pub fn bit(&self, index: usize, b: usize) -> Bit {
        if self.sign(index, b) > 0.0 {
            Bit::Plus
        } else {
            Bit::Minus
        }
    }

    pub fn label(&self, index: usize) -> Vec<Bit> {
        (0..self.q_bits).map(|b| self.bit(index, b)).collect()
    }

    /// Index of the point carrying `label`.
    pub fn index_of(&self, label: &[Bit]) -> Result<usize, ModemError> {
        if label.len() != self.q_bits {
            return Err(ModemError::LabelLength {
                expected: self.q_bits,
                actual: label.len(),
            });
        }
        Ok(label
            .iter()
            .fold(0usize, |acc, bit| (acc << 1) | bit.binary() as usize))
    }

    pub fn map_bits(&self, label: &[Bit]) -> Result<Complex64, ModemError> {
        self.index_of(label).map(|i| self.points[i])
    }
}

/// Row-major `levels x bits` matrix of LLRs in natural-log units.
#[derive(Debug, Clone, PartialEq)]
pub struct LlrMatrix {
    levels: usize,
    bits: usize,
    data: Vec<f64>,
}

/// A-priori LLRs `L^A`, one row per transmit antenna.
pub type PriorLlrs = LlrMatrix;

impl LlrMatrix {
    pub fn zeros(levels: usize, bits: usize) -> Self {
        Self::filled(levels, bits, 0.0)
    }

    pub fn filled(levels: usize, bits: usize, value: f64) -> Self {
        Self {
            levels,
            bits,
            data: vec![value; levels * bits],
        }
    }

    pub fn from_rows(levels: usize, bits: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), levels * bits, "LLR entry count");
        Self { levels, bits, data }
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    #[inline]
    pub fn get(&self, level: usize, b: usize) -> f64 {
        self.data[level * self.bits + b]
    }

    #[inline]
    pub fn set(&mut self, level: usize, b: usize, value: f64) {
        self.data[level * self.bits + b] = value;
    }

    #[inline]
    pub fn row(&self, level: usize) -> &[f64] {
        &self.data[level * self.bits..(level + 1) * self.bits]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn max_abs_diff(&self, other: &LlrMatrix) -> f64 {
        assert_eq!((self.levels, self.bits), (other.levels, other.bits));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn check_prior(&self, levels: usize, bits: usize) -> Result<(), ModemError> {
        if self.levels != levels || self.bits != bits {
            return Err(ModemError::PriorShape {
                levels: self.levels,
                bits: self.bits,
                expected_levels: levels,
                expected_bits: bits,
            });
        }
        for j in 0..levels {
            for b in 0..bits {
                if !self.get(j, b).is_finite() {
                    return Err(ModemError::NonFinitePrior { level: j, bit: b });
                }
            }
        }
        Ok(())
    }
}

/// Prior increments of one tree level, indexed by constellation point.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorRow {
    /// `-sum_b x_b L_b / 2 + K_j` with `K_j = sum_b |L_b| / 2`.
    pub modified: Vec<f64>,
    /// `-log Pr{s_j}`.
    pub exact: Vec<f64>,
}

/// Builds the prior increments of one level from its `Q` a-priori LLRs.
pub fn prior_table(c: &Constellation, priors: &[f64]) -> PriorRow {
    assert_eq!(priors.len(), c.bits_per_symbol(), "one LLR per label bit");
    let offset: f64 = priors.iter().map(|l| (-l.abs()).exp().ln_1p()).sum();
    let modified: Vec<f64> = (0..c.size())
        .map(|p| {
            c.signs(p)
                .iter()
                .zip(priors)
                .map(|(x, l)| 0.5 * (l.abs() - x * l))
                .sum()
        })
        .collect();
    let exact = modified.iter().map(|m| m + offset).collect();
    PriorRow { modified, exact }
}

/// Per-level prior rows for a whole symbol vector.
#[derive(Debug, Clone)]
pub struct PriorTable {
    points: usize,
    modified: Vec<f64>,
    exact: Vec<f64>,
}

impl PriorTable {
    pub fn new(c: &Constellation, priors: &PriorLlrs) -> Self {
        let mut modified = Vec::with_capacity(priors.levels() * c.size());
        let mut exact = Vec::with_capacity(priors.levels() * c.size());
        for j in 0..priors.levels() {
            let row = prior_table(c, priors.row(j));
            modified.extend(row.modified);
            exact.extend(row.exact);
        }
        Self {
            points: c.size(),
            modified,
            exact,
        }
    }

    #[inline]
    pub fn modified(&self, level: usize) -> &[f64] {
        &self.modified[level * self.points..(level + 1) * self.points]
    }

    #[inline]
    pub fn exact(&self, level: usize) -> &[f64] {
        &self.exact[level * self.points..(level + 1) * self.points]
    }
}
