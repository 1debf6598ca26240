//! Brute-force references and the list sphere decoder baseline.
//!
//! [`exhaustive_llrs`] enumerates every symbol vector and evaluates the full
//! metric `|y~ - R s|^2 / N_o - log Pr{s}` without any tree structure. It is
//! the ground truth the tree search is checked against.

use num_complex::Complex64;
use thiserror::Error;

use crate::modem::{Bit, Constellation, LlrMatrix, PriorLlrs};
use crate::numerics::ComplexMatrix;

/// Largest number of leaves the exhaustive reference will enumerate.
pub const MAX_LEAVES: usize = 1 << 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("search space of {leaves} leaves exceeds the limit of {limit}")]
    SearchSpace { leaves: f64, limit: usize },
    #[error("list size {size} outside 1..={max}")]
    ListSize { size: usize, max: usize },
    #[error("inconsistent problem dimensions")]
    Dimensions,
}

/// Which a-priori term the exhaustive metric uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricForm {
    /// `-log Pr{s_j}` from the bit probabilities.
    Exact,
    /// `sum_b (|L^A_b| - x_b L^A_b) / 2`.
    Modified,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub map_symbols: Vec<usize>,
    pub map_metric: f64,
    /// Best metric among vectors whose bit `(j, b)` differs from the MAP label.
    pub counter_metrics: LlrMatrix,
    pub intrinsic_llrs: LlrMatrix,
    pub extrinsic_llrs: LlrMatrix,
}

impl OracleResult {
    pub fn map_label(&self, c: &Constellation) -> Vec<Bit> {
        self.map_symbols.iter().flat_map(|&s| c.label(s)).collect()
    }
}

// -log of the probability of one label bit: log(1 + exp(-x L)).
fn bit_neg_log_prob(x: f64, llr: f64) -> f64 {
    let t = -x * llr;
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn prior_term(c: &Constellation, point: usize, llrs: &[f64], form: MetricForm) -> f64 {
    c.signs(point)
        .iter()
        .zip(llrs)
        .map(|(&x, &l)| match form {
            MetricForm::Exact => bit_neg_log_prob(x, l),
            MetricForm::Modified => 0.5 * (l.abs() - x * l),
        })
        .sum()
}

fn channel_metric(y: &[Complex64], r: &ComplexMatrix, c: &Constellation, symbols: &[usize], noise_var: f64) -> f64 {
    let n = y.len();
    (0..n)
        .map(|j| {
            let est: Complex64 = (j..n).map(|i| r[(j, i)] * c.point(symbols[i])).sum();
            (y[j] - est).norm_sqr() / noise_var
        })
        .sum()
}

/// Full metric of one symbol vector.
pub fn vector_metric(
    y: &[Complex64],
    r: &ComplexMatrix,
    c: &Constellation,
    symbols: &[usize],
    priors: &PriorLlrs,
    noise_var: f64,
    form: MetricForm,
) -> f64 {
    let prior: f64 = symbols
        .iter()
        .enumerate()
        .map(|(j, &s)| prior_term(c, s, priors.row(j), form))
        .sum();
    channel_metric(y, r, c, symbols, noise_var) + prior
}

fn check_dims(y: &[Complex64], r: &ComplexMatrix, priors: &PriorLlrs, c: &Constellation) -> Result<(), OracleError> {
    let n = y.len();
    if r.rows() != n || r.cols() != n || priors.levels() != n || priors.bits() != c.bits_per_symbol() {
        return Err(OracleError::Dimensions);
    }
    Ok(())
}

fn leaf_count(c: &Constellation, levels: usize) -> f64 {
    (c.size() as f64).powi(levels as i32)
}

/// Advances a mixed-radix counter; returns false after the last vector.
fn next_vector(symbols: &mut [usize], radix: usize) -> bool {
    for s in symbols.iter_mut() {
        *s += 1;
        if *s < radix {
            return true;
        }
        *s = 0;
    }
    false
}

/// Max-log intrinsic and extrinsic LLRs by enumerating all `|O|^M_T` vectors.
pub fn exhaustive_llrs(
    y: &[Complex64],
    r: &ComplexMatrix,
    priors: &PriorLlrs,
    noise_var: f64,
    c: &Constellation,
    form: MetricForm,
) -> Result<OracleResult, OracleError> {
    check_dims(y, r, priors, c)?;
    let n = y.len();
    let q = c.bits_per_symbol();
    let leaves = leaf_count(c, n);
    if leaves > MAX_LEAVES as f64 {
        return Err(OracleError::SearchSpace {
            leaves,
            limit: MAX_LEAVES,
        });
    }

    // best[j][b][0] for bit value +1, [1] for -1
    let mut best = vec![[f64::INFINITY; 2]; n * q];
    let mut map_symbols = vec![0; n];
    let mut map_metric = f64::INFINITY;
    let mut symbols = vec![0usize; n];
    loop {
        let d = vector_metric(y, r, c, &symbols, priors, noise_var, form);
        if d < map_metric {
            map_metric = d;
            map_symbols.copy_from_slice(&symbols);
        }
        for (j, &s) in symbols.iter().enumerate() {
            for b in 0..q {
                let slot = usize::from(c.sign(s, b) < 0.0);
                let entry = &mut best[j * q + b][slot];
                if d < *entry {
                    *entry = d;
                }
            }
        }
        if !next_vector(&mut symbols, c.size()) {
            break;
        }
    }

    let mut counter = LlrMatrix::zeros(n, q);
    let mut intrinsic = LlrMatrix::zeros(n, q);
    let mut extrinsic = LlrMatrix::zeros(n, q);
    for j in 0..n {
        for b in 0..q {
            let [plus, minus] = best[j * q + b];
            let ld = minus - plus;
            counter.set(j, b, if c.sign(map_symbols[j], b) > 0.0 { minus } else { plus });
            intrinsic.set(j, b, ld);
            extrinsic.set(j, b, ld - priors.get(j, b));
        }
    }
    Ok(OracleResult {
        map_symbols,
        map_metric,
        counter_metrics: counter,
        intrinsic_llrs: intrinsic,
        extrinsic_llrs: extrinsic,
    })
}

/// Oracle extrinsic LLRs clamped to `[-clip, clip]`.
pub fn clipped_reference(oracle: &OracleResult, clip_level: f64) -> LlrMatrix {
    let data = oracle
        .extrinsic_llrs
        .as_slice()
        .iter()
        .map(|v| v.clamp(-clip_level, clip_level))
        .collect();
    LlrMatrix::from_rows(oracle.extrinsic_llrs.levels(), oracle.extrinsic_llrs.bits(), data)
}

/// Candidate list of the list sphere decoder, built without priors.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateList {
    /// Symbol vectors, best channel metric first.
    pub candidates: Vec<Vec<usize>>,
    /// Nodes entered while building the list (root excluded).
    pub nodes_visited: u64,
}

/// Depth-first search for the `list_size` symbol vectors with the smallest
/// channel metric `|y~ - R s|^2 / N_o`.
///
/// The search radius is infinite until the list is full and then equals the
/// worst metric in the list; a node is pruned when its partial distance
/// reaches the radius.
pub fn lsd_candidate_list(
    y: &[Complex64],
    r: &ComplexMatrix,
    noise_var: f64,
    c: &Constellation,
    list_size: usize,
) -> Result<CandidateList, OracleError> {
    let n = y.len();
    if r.rows() != n || r.cols() != n || n == 0 {
        return Err(OracleError::Dimensions);
    }
    let leaves = leaf_count(c, n);
    if list_size == 0 || list_size as f64 > leaves {
        return Err(OracleError::ListSize {
            size: list_size,
            max: leaves.min(usize::MAX as f64) as usize,
        });
    }

    let inv_noise = 1.0 / noise_var;
    // (metric, symbols), kept sorted ascending
    let mut list: Vec<(f64, Vec<usize>)> = Vec::with_capacity(list_size + 1);
    let mut symbols = vec![0usize; n];
    let mut partial = vec![0.0f64; n + 1];
    let mut children: Vec<Vec<(f64, usize)>> = vec![Vec::with_capacity(c.size()); n];
    let mut cursor = vec![0usize; n];
    let mut nodes = 0u64;

    let expand = |level: usize, symbols: &[usize], out: &mut Vec<(f64, usize)>| {
        let row = r.row(level);
        let mut residual = y[level];
        for i in level + 1..n {
            residual -= row[i] * c.point(symbols[i]);
        }
        let diag = row[level];
        out.clear();
        out.extend(
            c.points()
                .iter()
                .enumerate()
                .map(|(p, s)| ((residual - diag * s).norm_sqr() * inv_noise, p)),
        );
        out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    };

    let mut level = n - 1;
    expand(level, &symbols, &mut children[level]);
    loop {
        if cursor[level] == children[level].len() {
            if level == n - 1 {
                break;
            }
            level += 1;
            continue;
        }
        let (inc, point) = children[level][cursor[level]];
        cursor[level] += 1;
        let d = partial[level + 1] + inc;
        let radius = if list.len() == list_size {
            list[list_size - 1].0
        } else {
            f64::INFINITY
        };
        if d >= radius {
            // siblings are sorted, none of them fits either
            cursor[level] = children[level].len();
            continue;
        }
        nodes += 1;
        symbols[level] = point;
        if level == 0 {
            let pos = list.partition_point(|(m, _)| *m <= d);
            list.insert(pos, (d, symbols.clone()));
            list.truncate(list_size);
        } else {
            partial[level] = d;
            level -= 1;
            expand(level, &symbols, &mut children[level]);
            cursor[level] = 0;
        }
    }

    Ok(CandidateList {
        candidates: list.into_iter().map(|(_, s)| s).collect(),
        nodes_visited: nodes,
    })
}

/// Max-log extrinsic LLRs over a fixed candidate list with the full
/// (modified-prior) metric. Bits without a counter-hypothesis in the list get
/// magnitude `clip_level`, signed toward the value present in the list.
pub fn lsd_llrs(
    list: &CandidateList,
    y: &[Complex64],
    r: &ComplexMatrix,
    priors: &PriorLlrs,
    noise_var: f64,
    clip_level: f64,
    c: &Constellation,
) -> Result<LlrMatrix, OracleError> {
    check_dims(y, r, priors, c)?;
    let (n, q) = (y.len(), c.bits_per_symbol());
    let mut best = vec![[f64::INFINITY; 2]; n * q];
    for cand in &list.candidates {
        let d = vector_metric(y, r, c, cand, priors, noise_var, MetricForm::Modified);
        for (j, &s) in cand.iter().enumerate() {
            for b in 0..q {
                let slot = usize::from(c.sign(s, b) < 0.0);
                let entry = &mut best[j * q + b][slot];
                if d < *entry {
                    *entry = d;
                }
            }
        }
    }
    let mut out = LlrMatrix::zeros(n, q);
    for j in 0..n {
        for b in 0..q {
            let [plus, minus] = best[j * q + b];
            let le = if plus == f64::INFINITY {
                -clip_level
            } else if minus == f64::INFINITY {
                clip_level
            } else {
                (minus - plus - priors.get(j, b)).clamp(-clip_level, clip_level)
            };
            out.set(j, b, le);
        }
    }
    Ok(out)
}

/// List sphere decoder: builds the list and evaluates the LLRs in one call.
/// Returns the extrinsic LLRs and the list-building node count.
pub fn lsd_baseline(
    y: &[Complex64],
    r: &ComplexMatrix,
    priors: &PriorLlrs,
    noise_var: f64,
    list_size: usize,
    clip_level: f64,
    c: &Constellation,
) -> Result<(LlrMatrix, u64), OracleError> {
    let list = lsd_candidate_list(y, r, noise_var, c, list_size)?;
    let llrs = lsd_llrs(&list, y, r, priors, noise_var, clip_level, c)?;
    Ok((llrs, list.nodes_visited))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modem::ConstellationKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(
        rng: &mut ChaCha8Rng,
        n: usize,
        c: &Constellation,
    ) -> (Vec<Complex64>, ComplexMatrix, PriorLlrs) {
        let mut r = ComplexMatrix::zeros(n, n);
        for i in 0..n {
            r[(i, i)] = Complex64::new(rng.random_range(0.3..1.5), 0.0);
            for j in i + 1..n {
                r[(i, j)] = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            }
        }
        let y = (0..n)
            .map(|_| Complex64::new(rng.random_range(-1.2..1.2), rng.random_range(-1.2..1.2)))
            .collect();
        let q = c.bits_per_symbol();
        let priors = LlrMatrix::from_rows(n, q, (0..n * q).map(|_| rng.random_range(-4.0..4.0)).collect());
        (y, r, priors)
    }

    #[test]
    fn single_antenna_reference() {
        let c = Constellation::new(ConstellationKind::Qpsk);
        let y = [Complex64::new(0.9, 0.9)];
        let res = exhaustive_llrs(
            &y,
            &ComplexMatrix::identity(1),
            &LlrMatrix::zeros(1, 2),
            1.0,
            &c,
            MetricForm::Modified,
        )
        .unwrap();
        assert!((res.map_metric - 0.0744).abs() < 1e-4);
        for b in 0..2 {
            assert!((res.counter_metrics.get(0, b) - 2.62).abs() < 1e-12);
            assert!((res.extrinsic_llrs.get(0, b) + 2.546).abs() < 1e-3);
        }
    }

    #[test]
    fn noiseless_uniform_prior() {
        let c = Constellation::new(ConstellationKind::Qam16);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (_, r, _) = random_problem(&mut rng, 2, &c);
        let sent = [7usize, 12];
        let y: Vec<Complex64> = (0..2)
            .map(|j| (j..2).map(|i| r[(j, i)] * c.point(sent[i])).sum())
            .collect();
        let res = exhaustive_llrs(&y, &r, &LlrMatrix::zeros(2, 4), 0.1, &c, MetricForm::Modified).unwrap();
        assert!(res.map_metric.abs() < 1e-20);
        assert_eq!(res.map_symbols, sent);
        for j in 0..2 {
            for b in 0..4 {
                assert_eq!(res.intrinsic_llrs.get(j, b).signum(), c.sign(sent[j], b));
            }
        }
    }

    #[test]
    fn exact_and_modified_forms_agree() {
        let c = Constellation::new(ConstellationKind::Qpsk);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let (y, r, priors) = random_problem(&mut rng, 3, &c);
            let a = exhaustive_llrs(&y, &r, &priors, 0.5, &c, MetricForm::Exact).unwrap();
            let b = exhaustive_llrs(&y, &r, &priors, 0.5, &c, MetricForm::Modified).unwrap();
            assert!(a.intrinsic_llrs.max_abs_diff(&b.intrinsic_llrs) < 1e-9);
            assert!(a.extrinsic_llrs.max_abs_diff(&b.extrinsic_llrs) < 1e-9);
            assert_eq!(a.map_symbols, b.map_symbols);
            for j in 0..3 {
                for bit in 0..2 {
                    assert!(a.map_metric <= a.counter_metrics.get(j, bit));
                }
            }
        }
    }

    #[test]
    fn exact_prior_matches_probability() {
        // -log of 1 / (1 + exp(-x L)) computed naively for moderate LLRs.
        for &(x, l) in &[(1.0, 2.0), (-1.0, 2.0), (1.0, -0.3), (-1.0, 30.0)] {
            let naive = (1.0 + f64::exp(-x * l)).ln();
            assert!((bit_neg_log_prob(x, l) - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn guard_and_clamp() {
        let c = Constellation::new(ConstellationKind::Qam64);
        let n = 4; // 64^4 = 2^24 leaves
        let err = exhaustive_llrs(
            &vec![Complex64::new(0.0, 0.0); n],
            &ComplexMatrix::identity(n),
            &LlrMatrix::zeros(n, 6),
            1.0,
            &c,
            MetricForm::Exact,
        )
        .unwrap_err();
        assert!(matches!(err, OracleError::SearchSpace { .. }));

        let oracle = OracleResult {
            map_symbols: vec![0],
            map_metric: 0.0,
            counter_metrics: LlrMatrix::zeros(1, 2),
            intrinsic_llrs: LlrMatrix::zeros(1, 2),
            extrinsic_llrs: LlrMatrix::from_rows(1, 2, vec![-2.546, 0.7]),
        };
        assert_eq!(clipped_reference(&oracle, f64::INFINITY), oracle.extrinsic_llrs);
        assert_eq!(clipped_reference(&oracle, 0.0).as_slice(), &[0.0, 0.0]);
        assert_eq!(clipped_reference(&oracle, 1.0).as_slice(), &[-1.0, 0.7]);
    }

    #[test]
    fn full_list_matches_exhaustive() {
        let c = Constellation::new(ConstellationKind::Qpsk);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let (y, r, priors) = random_problem(&mut rng, 2, &c);
            let (llrs, nodes) = lsd_baseline(&y, &r, &priors, 0.7, 16, f64::INFINITY, &c).unwrap();
            let oracle = exhaustive_llrs(&y, &r, &priors, 0.7, &c, MetricForm::Modified).unwrap();
            assert!(llrs.max_abs_diff(&oracle.extrinsic_llrs) < 1e-9);
            assert_eq!(nodes, 4 + 16);
        }
    }

    #[test]
    fn single_entry_list_saturates() {
        let c = Constellation::new(ConstellationKind::Qpsk);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (y, r, priors) = random_problem(&mut rng, 2, &c);
        let (llrs, _) = lsd_baseline(&y, &r, &priors, 0.7, 1, 3.0, &c).unwrap();
        assert!(llrs.as_slice().iter().all(|v| v.abs() == 3.0));
    }

    #[test]
    fn partial_list_bounded_by_oracle() {
        let c = Constellation::new(ConstellationKind::Qpsk);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let (y, r, priors) = random_problem(&mut rng, 2, &c);
            let clip = 5.0;
            let (llrs, _) = lsd_baseline(&y, &r, &priors, 0.7, 8, clip, &c).unwrap();
            let oracle = exhaustive_llrs(&y, &r, &priors, 0.7, &c, MetricForm::Modified).unwrap();
            for (l, o) in llrs.as_slice().iter().zip(oracle.extrinsic_llrs.as_slice()) {
                assert!(l.abs() <= clip.max(o.abs()) + 1e-12);
            }
        }
    }

    #[test]
    fn list_holds_best_channel_metrics() {
        let c = Constellation::new(ConstellationKind::Qam16);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (y, r, _) = random_problem(&mut rng, 2, &c);
        let list = lsd_candidate_list(&y, &r, 0.3, &c, 10).unwrap();
        let zero = LlrMatrix::zeros(2, 4);
        let mut all: Vec<f64> = (0..256)
            .map(|k| vector_metric(&y, &r, &c, &[k % 16, k / 16], &zero, 0.3, MetricForm::Modified))
            .collect();
        all.sort_by(f64::total_cmp);
        let got: Vec<f64> = list
            .candidates
            .iter()
            .map(|s| vector_metric(&y, &r, &c, s, &zero, 0.3, MetricForm::Modified))
            .collect();
        for (g, e) in got.iter().zip(&all[..10]) {
            assert!((g - e).abs() < 1e-12);
        }
        assert!(matches!(
            lsd_candidate_list(&y, &r, 0.3, &c, 0),
            Err(OracleError::ListSize { .. })
        ));
        assert!(matches!(
            lsd_candidate_list(&y, &r, 0.3, &c, 257),
            Err(OracleError::ListSize { .. })
        ));
    }
}
