//! Iterative detection and decoding loop and Monte-Carlo sweeps.
//!
//! A frame is one coded block spread over `tones` independent narrowband
//! MIMO channels (block fading, one channel draw per tone). The detector and
//! the max-log BCJR exchange extrinsic LLRs through a random interleaver.
//! Complexity is the number of tree nodes the detector visits, summed over
//! all tones and iterations.
//!
//! Frames are independent: frame `i` of a point draws everything from a
//! generator seeded with `seed ^ i`, so results do not depend on how frames
//! are scheduled across threads.

use std::fmt;
use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::channel::{draw_channel, snr_to_noise, transmit};
use crate::coding::{bcjr_decode, encode, CodingError, MEMORY};
use crate::modem::{Constellation, ConstellationKind, LlrMatrix};
use crate::numerics::{matched_filter, sorted_qr, ComplexMatrix, ComplexVector};
use crate::oracle::{lsd_candidate_list, lsd_llrs, CandidateList, OracleError};
use crate::stsd::{detect, DetectError};

/// Target frame error rate defining the SNR operating point.
pub const TARGET_FER: f64 = 0.01;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("frame_bits = {frame_bits} but tones * M_T * Q = {expected}")]
    FrameBits { frame_bits: usize, expected: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Coding(#[from] CodingError),
    #[error("failed to write CSV: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectorKind {
    /// Single tree search with extrinsic LLR clipping.
    Sts,
    /// List sphere decoder; the list is built once per frame without priors.
    Lsd { list_size: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameConfig {
    pub transmit: usize,
    pub receive: usize,
    pub constellation: ConstellationKind,
    pub tones: usize,
    pub frame_bits: usize,
    pub iterations: usize,
    /// Normalized clip level `L_max * N_o`; `f64::INFINITY` disables clipping.
    pub clip_norm: f64,
    pub snr_db: f64,
    pub seed: u64,
    pub detector: DetectorKind,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            transmit: 4,
            receive: 4,
            constellation: ConstellationKind::Qam16,
            tones: 64,
            frame_bits: 1024,
            iterations: 1,
            clip_norm: f64::INFINITY,
            snr_db: 15.0,
            seed: 0,
            detector: DetectorKind::Sts,
        }
    }
}

impl FrameConfig {
    /// Sets `frame_bits` from the antenna, tone and constellation counts.
    pub fn with_consistent_frame_bits(mut self) -> Self {
        self.frame_bits = self.tones * self.transmit * self.constellation.bits_per_symbol();
        self
    }

    pub fn info_bits(&self) -> usize {
        self.frame_bits / 2 - MEMORY
    }

    pub fn noise_var(&self) -> f64 {
        snr_to_noise(self.snr_db, self.transmit)
    }

    /// Clip level handed to the detector, `clip_norm / N_o`.
    pub fn clip_level(&self) -> f64 {
        self.clip_norm / self.noise_var()
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let expected = self.tones * self.transmit * self.constellation.bits_per_symbol();
        if self.frame_bits != expected {
            return Err(HarnessError::FrameBits {
                frame_bits: self.frame_bits,
                expected,
            });
        }
        if self.transmit == 0 || self.receive < self.transmit {
            return Err(HarnessError::Config(format!(
                "need M_R >= M_T >= 1, got M_T = {}, M_R = {}",
                self.transmit, self.receive
            )));
        }
        if self.tones == 0 || self.iterations == 0 {
            return Err(HarnessError::Config("tones and iterations must be >= 1".into()));
        }
        if self.frame_bits < 2 * (MEMORY + 1) {
            return Err(HarnessError::Config("frame too short for the terminated code".into()));
        }
        if self.clip_norm.is_nan() || self.clip_norm < 0.0 {
            return Err(HarnessError::Config(format!("clip level {} is negative", self.clip_norm)));
        }
        if !self.snr_db.is_finite() {
            return Err(HarnessError::Config("SNR must be finite".into()));
        }
        if let DetectorKind::Lsd { list_size } = self.detector {
            if !self.clip_norm.is_finite() {
                return Err(HarnessError::Config(
                    "the list sphere decoder needs a finite clip level".into(),
                ));
            }
            let c = Constellation::new(self.constellation);
            if list_size == 0 || (list_size as f64) > (c.size() as f64).powi(self.transmit as i32) {
                return Err(HarnessError::Config(format!("list size {list_size} out of range")));
            }
        }
        Ok(())
    }
}

/// Per-iteration outcome of one frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameOutcome {
    /// Whether any info bit was wrong after iteration `i + 1`.
    pub errors: Vec<bool>,
    /// Detector nodes visited in iteration `i + 1`, summed over tones.
    pub nodes: Vec<u64>,
}

impl FrameOutcome {
    pub fn frame_error(&self) -> bool {
        *self.errors.last().expect("at least one iteration")
    }

    pub fn cumulative_nodes(&self) -> u64 {
        self.nodes.iter().sum()
    }
}

/// Uniform random permutation; `interleaved[i] = coded[perm[i]]`.
pub fn random_interleaver<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..len).collect();
    perm.shuffle(rng);
    perm
}

pub fn interleave<T: Copy>(perm: &[usize], data: &[T]) -> Vec<T> {
    perm.iter().map(|&p| data[p]).collect()
}

pub fn deinterleave<T: Copy + Default>(perm: &[usize], data: &[T]) -> Vec<T> {
    let mut out = vec![T::default(); data.len()];
    for (&p, &v) in perm.iter().zip(data) {
        out[p] = v;
    }
    out
}

struct Tone {
    r: ComplexMatrix,
    y: ComplexVector,
    // level k of the tree detects antenna order[k]
    order: Vec<usize>,
    list: Option<CandidateList>,
}

/// Simulates one frame through all `cfg.iterations` detector/decoder passes.
pub fn run_frame<R: Rng + ?Sized>(cfg: &FrameConfig, rng: &mut R) -> Result<FrameOutcome, HarnessError> {
    cfg.validate()?;
    let c = Constellation::new(cfg.constellation);
    let (mt, q) = (cfg.transmit, c.bits_per_symbol());
    let noise_var = cfg.noise_var();
    let clip = cfg.clip_level();

    let info: Vec<u8> = (0..cfg.info_bits()).map(|_| rng.random_range(0..2u8)).collect();
    let coded = encode(&info);
    debug_assert_eq!(coded.len(), cfg.frame_bits);
    let perm = random_interleaver(rng, cfg.frame_bits);
    let tx_bits = interleave(&perm, &coded);

    let mut tones = Vec::with_capacity(cfg.tones);
    for t in 0..cfg.tones {
        let symbols: Vec<_> = (0..mt)
            .map(|a| {
                let bits = &tx_bits[(t * mt + a) * q..(t * mt + a + 1) * q];
                c.point(bits.iter().fold(0usize, |acc, &b| (acc << 1) | b as usize))
            })
            .collect();
        let s = ComplexVector::new(symbols);
        // Redraw numerically singular channels.
        let (h, (qm, r, order)) = loop {
            let h = draw_channel(rng, cfg.receive, mt);
            if let Ok(f) = sorted_qr(&h) {
                break (h, f);
            }
        };
        let y = transmit(&h, &s, noise_var, rng).expect("dimensions fixed by construction");
        let y = matched_filter(&qm, &y).expect("dimensions fixed by construction");
        tones.push(Tone { r, y, order, list: None });
    }

    let mut priors_stream = vec![0.0f64; cfg.frame_bits];
    let mut extrinsic_stream = vec![0.0f64; cfg.frame_bits];
    let mut outcome = FrameOutcome {
        errors: Vec::with_capacity(cfg.iterations),
        nodes: Vec::with_capacity(cfg.iterations),
    };
    let mut priors = LlrMatrix::zeros(mt, q);

    for _ in 0..cfg.iterations {
        let mut nodes = 0u64;
        for (t, tone) in tones.iter_mut().enumerate() {
            let base = t * mt * q;
            for (level, &antenna) in tone.order.iter().enumerate() {
                for b in 0..q {
                    priors.set(level, b, priors_stream[base + antenna * q + b]);
                }
            }
            let llrs = match cfg.detector {
                DetectorKind::Sts => {
                    let res = detect(tone.y.as_slice(), &tone.r, &priors, noise_var, clip, &c)?;
                    nodes += res.nodes_visited;
                    res.extrinsic_llrs
                }
                DetectorKind::Lsd { list_size } => {
                    if tone.list.is_none() {
                        let list = lsd_candidate_list(tone.y.as_slice(), &tone.r, noise_var, &c, list_size)?;
                        nodes += list.nodes_visited;
                        tone.list = Some(list);
                    }
                    let list = tone.list.as_ref().expect("built above");
                    lsd_llrs(list, tone.y.as_slice(), &tone.r, &priors, noise_var, clip, &c)?
                }
            };
            for (level, &antenna) in tone.order.iter().enumerate() {
                for b in 0..q {
                    extrinsic_stream[base + antenna * q + b] = llrs.get(level, b);
                }
            }
        }

        let decoded = bcjr_decode(&deinterleave(&perm, &extrinsic_stream))?;
        outcome.errors.push(decoded.info_hard != info);
        outcome.nodes.push(nodes);
        priors_stream = interleave(&perm, &decoded.extrinsic);
    }
    Ok(outcome)
}

/// Frame `index` of a point with master seed `seed`.
pub fn run_indexed_frame(cfg: &FrameConfig, index: u64) -> Result<FrameOutcome, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ index);
    run_frame(cfg, &mut rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopRule {
    pub min_frames: u64,
    pub min_errors: u64,
    pub max_frames: u64,
}

impl Default for StopRule {
    fn default() -> Self {
        Self {
            min_frames: 1000,
            min_errors: 50,
            max_frames: 100_000,
        }
    }
}

impl StopRule {
    fn done(&self, frames: u64, errors: u64) -> bool {
        frames >= self.min_frames && (errors >= self.min_errors || frames >= self.max_frames)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Frames of a batch run on the rayon pool. Identical to `Sequential`
    /// without the `parallel` feature.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffPoint {
    pub snr_db: f64,
    pub clip_norm: f64,
    pub iterations: usize,
    pub frames: u64,
    pub frame_errors: u64,
    pub fer: f64,
    pub mean_cumulative_nodes: f64,
}

const BATCH: u64 = 128;

fn run_batch(cfg: &FrameConfig, start: u64, end: u64, exec: Execution) -> Result<Vec<FrameOutcome>, HarnessError> {
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => (start..end)
            .into_par_iter()
            .map(|i| run_indexed_frame(cfg, i))
            .collect(),
        _ => (start..end).map(|i| run_indexed_frame(cfg, i)).collect(),
    }
}

/// Monte-Carlo estimate of one grid point.
pub fn run_point(cfg: &FrameConfig, stop: &StopRule, exec: Execution) -> Result<TradeoffPoint, HarnessError> {
    cfg.validate()?;
    let cap = stop.max_frames.max(stop.min_frames).max(1);
    let stop = StopRule { max_frames: cap, ..*stop };
    let (mut frames, mut errors, mut nodes) = (0u64, 0u64, 0u128);
    'outer: while frames < cap {
        let end = (frames + BATCH).min(cap);
        for outcome in run_batch(cfg, frames, end, exec)? {
            frames += 1;
            errors += u64::from(outcome.frame_error());
            nodes += u128::from(outcome.cumulative_nodes());
            if stop.done(frames, errors) {
                break 'outer;
            }
        }
    }
    Ok(TradeoffPoint {
        snr_db: cfg.snr_db,
        clip_norm: cfg.clip_norm,
        iterations: cfg.iterations,
        frames,
        frame_errors: errors,
        fer: errors as f64 / frames as f64,
        mean_cumulative_nodes: nodes as f64 / frames as f64,
    })
}

/// Runs every grid point in order.
pub fn run_sweep(grid: &[FrameConfig], stop: &StopRule, exec: Execution) -> Result<Vec<TradeoffPoint>, HarnessError> {
    if stop.min_frames == 0 {
        return Err(HarnessError::Config("min_frames must be >= 1".into()));
    }
    grid.iter().map(|cfg| run_point(cfg, stop, exec)).collect()
}

pub const CSV_HEADER: &str = "snr_db,clip_norm,iterations,frames,frame_errors,fer,mean_cumulative_nodes";

impl fmt::Display for TradeoffPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{},{}",
            self.snr_db,
            self.clip_norm,
            self.iterations,
            self.frames,
            self.frame_errors,
            self.fer,
            self.mean_cumulative_nodes
        )
    }
}

pub fn write_csv<W: Write>(mut out: W, points: &[TradeoffPoint]) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for p in points {
        writeln!(out, "{p}")?;
    }
    Ok(())
}

pub fn to_csv(points: &[TradeoffPoint]) -> String {
    let mut buf = Vec::new();
    write_csv(&mut buf, points).expect("writing to memory");
    String::from_utf8(buf).expect("CSV is ASCII")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("no point of the curve reaches FER <= {TARGET_FER}")]
pub struct Unreached;

// Pool-adjacent-violators fit of a non-increasing sequence.
fn antitonic_fit(values: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::new();
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (b, nb) = blocks[blocks.len() - 1];
            let (a, na) = blocks[blocks.len() - 2];
            if a >= b {
                break;
            }
            blocks.pop();
            let last = blocks.last_mut().expect("len > 1");
            *last = ((a * na as f64 + b * nb as f64) / (na + nb) as f64, na + nb);
        }
    }
    blocks.into_iter().flat_map(|(v, n)| std::iter::repeat_n(v, n)).collect()
}

/// Smallest SNR reaching FER <= 1 %, interpolating log10(FER) linearly in
/// dB between the bracketing points. `curve` is sorted by SNR.
pub fn operating_point(curve: &[(f64, f64)]) -> Result<f64, Unreached> {
    let fer = antitonic_fit(&curve.iter().map(|p| p.1).collect::<Vec<_>>());
    let idx = fer.iter().position(|&f| f <= TARGET_FER).ok_or(Unreached)?;
    if idx == 0 {
        return Ok(curve[0].0);
    }
    let (s0, s1) = (curve[idx - 1].0, curve[idx].0);
    let (f0, f1) = (fer[idx - 1], fer[idx]);
    let frac = if f1 > 0.0 {
        (f0.log10() - TARGET_FER.log10()) / (f0.log10() - f1.log10())
    } else {
        (f0 - TARGET_FER) / (f0 - f1)
    };
    Ok(s0 + frac * (s1 - s0))
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let center = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / (1.0 + z2 / n);
    ((center - half).max(0.0), (center + half).min(1.0))
}
