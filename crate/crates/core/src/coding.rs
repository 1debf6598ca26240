//! Rate-1/2, constraint-length-7 convolutional code (generators 133, 171
//! octal) and a max-log BCJR soft-in soft-out decoder.
//!
//! LLRs are `log Pr{bit = 0} / Pr{bit = 1}`: positive values favor binary 0.

use thiserror::Error;

pub const CONSTRAINT_LENGTH: usize = 7;
pub const MEMORY: usize = CONSTRAINT_LENGTH - 1;
pub const NUM_STATES: usize = 1 << MEMORY;
/// Generator polynomials in octal notation, first coded output first.
pub const GENERATORS_OCTAL: [u32; 2] = [0o133, 0o171];

/// Largest info length accepted by [`codeword_oracle`].
pub const ORACLE_MAX_INFO_BITS: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodingError {
    #[error("coded length {0} is not 2 * (k + {MEMORY}) for any k >= 0")]
    CodedLength(usize),
    #[error("codeword enumeration limited to {ORACLE_MAX_INFO_BITS} info bits, got {0}")]
    OracleSize(usize),
    #[error("non-finite input LLR at position {0}")]
    NonFinite(usize),
}

/// Tap pattern of generator `g`, current input first (MSB of the octal value).
pub fn taps(g: usize) -> [u8; CONSTRAINT_LENGTH] {
    let poly = GENERATORS_OCTAL[g];
    let mut out = [0u8; CONSTRAINT_LENGTH];
    for (k, t) in out.iter_mut().enumerate() {
        *t = ((poly >> (CONSTRAINT_LENGTH - 1 - k)) & 1) as u8;
    }
    out
}

// State bit k (LSB first) holds the input from k + 1 steps ago.
#[inline]
fn branch(state: usize, input: u8) -> (usize, [u8; 2]) {
    let reg = (state << 1) | input as usize; // bit k = input k steps ago
    let mut out = [0u8; 2];
    for (g, o) in out.iter_mut().enumerate() {
        let poly = GENERATORS_OCTAL[g] as usize;
        let mut acc = 0usize;
        for k in 0..CONSTRAINT_LENGTH {
            // tap for delay k is octal bit (K - 1 - k)
            acc ^= ((poly >> (CONSTRAINT_LENGTH - 1 - k)) & 1) & ((reg >> k) & 1);
        }
        *o = acc as u8;
    }
    (reg & (NUM_STATES - 1), out)
}

/// Number of info bits carried by a terminated codeword of `coded_len` bits.
pub fn info_len(coded_len: usize) -> Result<usize, CodingError> {
    if !coded_len.is_multiple_of(2) || coded_len < 2 * MEMORY {
        return Err(CodingError::CodedLength(coded_len));
    }
    Ok(coded_len / 2 - MEMORY)
}

/// Encodes `info` followed by six zero tail bits. Output bits alternate
/// between the two generators.
pub fn encode(info: &[u8]) -> Vec<u8> {
    let mut state = 0usize;
    let mut out = Vec::with_capacity(2 * (info.len() + MEMORY));
    for &u in info.iter().chain(std::iter::repeat_n(&0u8, MEMORY)) {
        let (next, bits) = branch(state, u & 1);
        out.extend_from_slice(&bits);
        state = next;
    }
    debug_assert_eq!(state, 0);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct BcjrOutput {
    /// A-posteriori minus input LLR, per coded bit.
    pub extrinsic: Vec<f64>,
    /// A-posteriori LLRs per coded bit.
    pub posterior: Vec<f64>,
    /// A-posteriori LLRs of the info bits (tail excluded).
    pub info_posterior: Vec<f64>,
    /// Hard decisions on the info bits.
    pub info_hard: Vec<u8>,
}

#[inline]
fn branch_metric(llrs: &[f64], bits: [u8; 2]) -> f64 {
    // x = +1 for binary 0: metric sum_i x_i L_i / 2
    let s0 = if bits[0] == 0 { llrs[0] } else { -llrs[0] };
    let s1 = if bits[1] == 0 { llrs[1] } else { -llrs[1] };
    0.5 * (s0 + s1)
}

struct Trellis {
    next: [[usize; 2]; NUM_STATES],
    out: [[[u8; 2]; 2]; NUM_STATES],
}

impl Trellis {
    fn new() -> Self {
        let mut next = [[0; 2]; NUM_STATES];
        let mut out = [[[0; 2]; 2]; NUM_STATES];
        for s in 0..NUM_STATES {
            for u in 0..2u8 {
                let (n, o) = branch(s, u);
                next[s][u as usize] = n;
                out[s][u as usize] = o;
            }
        }
        Self { next, out }
    }
}

/// Max-log BCJR over the 64-state trellis of a terminated codeword.
pub fn bcjr_decode(coded_llrs: &[f64]) -> Result<BcjrOutput, CodingError> {
    let k = info_len(coded_llrs.len())?;
    if let Some(pos) = coded_llrs.iter().position(|v| !v.is_finite()) {
        return Err(CodingError::NonFinite(pos));
    }
    let steps = k + MEMORY;
    let trellis = Trellis::new();
    let neg = f64::NEG_INFINITY;

    let mut alpha = vec![[neg; NUM_STATES]; steps + 1];
    alpha[0][0] = 0.0;
    for t in 0..steps {
        let llr = &coded_llrs[2 * t..2 * t + 2];
        let inputs: &[u8] = if t < k { &[0, 1] } else { &[0] };
        let (head, tail) = alpha.split_at_mut(t + 1);
        let (cur, nxt) = (&head[t], &mut tail[0]);
        for s in 0..NUM_STATES {
            if cur[s] == neg {
                continue;
            }
            for &u in inputs {
                let m = cur[s] + branch_metric(llr, trellis.out[s][u as usize]);
                let n = trellis.next[s][u as usize];
                if m > nxt[n] {
                    nxt[n] = m;
                }
            }
        }
    }

    let mut beta = vec![[neg; NUM_STATES]; steps + 1];
    beta[steps][0] = 0.0;
    for t in (0..steps).rev() {
        let llr = &coded_llrs[2 * t..2 * t + 2];
        let inputs: &[u8] = if t < k { &[0, 1] } else { &[0] };
        let (head, tail) = beta.split_at_mut(t + 1);
        let (cur, nxt) = (&mut head[t], &tail[0]);
        for s in 0..NUM_STATES {
            let mut best = neg;
            for &u in inputs {
                let n = trellis.next[s][u as usize];
                if nxt[n] == neg {
                    continue;
                }
                let m = nxt[n] + branch_metric(llr, trellis.out[s][u as usize]);
                if m > best {
                    best = m;
                }
            }
            cur[s] = best;
        }
    }

    let mut posterior = vec![0.0; 2 * steps];
    let mut info_posterior = vec![0.0; k];
    for t in 0..steps {
        let llr = &coded_llrs[2 * t..2 * t + 2];
        let inputs: &[u8] = if t < k { &[0, 1] } else { &[0] };
        // best[bit position][bit value]; index 2 is the input bit
        let mut best = [[neg; 2]; 3];
        for s in 0..NUM_STATES {
            if alpha[t][s] == neg {
                continue;
            }
            for &u in inputs {
                let n = trellis.next[s][u as usize];
                if beta[t + 1][n] == neg {
                    continue;
                }
                let bits = trellis.out[s][u as usize];
                let m = alpha[t][s] + branch_metric(llr, bits) + beta[t + 1][n];
                for (pos, &v) in [bits[0], bits[1], u].iter().enumerate() {
                    let slot = &mut best[pos][v as usize];
                    if m > *slot {
                        *slot = m;
                    }
                }
            }
        }
        for i in 0..2 {
            posterior[2 * t + i] = llr_from(best[i]);
        }
        if t < k {
            info_posterior[t] = llr_from(best[2]);
        }
    }

    let extrinsic = posterior.iter().zip(coded_llrs).map(|(p, l)| p - l).collect();
    let info_hard = info_posterior.iter().map(|&l| u8::from(l < 0.0)).collect();
    Ok(BcjrOutput {
        extrinsic,
        posterior,
        info_posterior,
        info_hard,
    })
}

// Tail steps force some coded bits to a single value; report them with an
// infinite-free saturated difference so downstream arithmetic stays finite.
fn llr_from(best: [f64; 2]) -> f64 {
    match (best[0].is_finite(), best[1].is_finite()) {
        (true, true) => best[0] - best[1],
        (true, false) => SATURATED_LLR,
        (false, true) => -SATURATED_LLR,
        (false, false) => 0.0,
    }
}

/// Magnitude reported for coded bits whose value is fixed by the trellis.
pub const SATURATED_LLR: f64 = 1e3;

/// Max-log a-posteriori coded-bit LLRs by enumerating all `2^k` codewords.
pub fn codeword_oracle(coded_llrs: &[f64], k: usize) -> Result<Vec<f64>, CodingError> {
    if k > ORACLE_MAX_INFO_BITS {
        return Err(CodingError::OracleSize(k));
    }
    if coded_llrs.len() != 2 * (k + MEMORY) {
        return Err(CodingError::CodedLength(coded_llrs.len()));
    }
    let n = coded_llrs.len();
    let mut best = vec![[f64::NEG_INFINITY; 2]; n];
    let mut info = vec![0u8; k];
    for word in 0u32..(1u32 << k) {
        for (i, b) in info.iter_mut().enumerate() {
            *b = ((word >> i) & 1) as u8;
        }
        let code = encode(&info);
        let metric: f64 = code
            .iter()
            .zip(coded_llrs)
            .map(|(&c, &l)| if c == 0 { 0.5 * l } else { -0.5 * l })
            .sum();
        for (slot, &c) in best.iter_mut().zip(&code) {
            if metric > slot[c as usize] {
                slot[c as usize] = metric;
            }
        }
    }
    Ok(best.into_iter().map(llr_from).collect())
}
