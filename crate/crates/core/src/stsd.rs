//! Soft-input soft-output single tree search sphere decoder.
//!
//! The search walks the detection tree depth-first from the last antenna
//! (level `M_T - 1`, zero-based) down to level 0, visiting children in
//! ascending order of their partial distance. A single traversal tracks the
//! MAP hypothesis together with one *extrinsic* metric per label bit, so the
//! extrinsic LLRs come straight out of the search instead of being derived
//! from intrinsic ones afterwards. Clipping of the extrinsic LLRs is applied
//! inside the search, which tightens the pruning threshold: a clip level of
//! zero degenerates to a hard-output MAP search and an infinite clip level is
//! max-log optimal.
//!
//! Distance increments use the modified a-priori term
//! `-sum_b x_b L^A_b / 2 + sum_b |L^A_b| / 2`, which is non-negative and
//! differs from `-log Pr{s_j}` only by a per-level constant.

use num_complex::Complex64;
use thiserror::Error;

use crate::modem::{Bit, Constellation, LlrMatrix, ModemError, PriorLlrs, PriorTable};
use crate::numerics::ComplexMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectError {
    #[error("R must be square upper triangular with {expected} rows, got {rows}x{cols}")]
    Shape {
        expected: usize,
        rows: usize,
        cols: usize,
    },
    #[error("R has a non-zero entry below the diagonal at ({row}, {col})")]
    NotTriangular { row: usize, col: usize },
    #[error("R diagonal entry {0} is not real and positive")]
    NonPositiveDiagonal(usize),
    #[error("noise variance must be positive and finite, got {0}")]
    NoiseVariance(f64),
    #[error("clip level must be >= 0 (or +inf), got {0}")]
    ClipLevel(f64),
    #[error("LLR matrices have different shapes")]
    LlrShape,
    #[error(transparent)]
    Prior(#[from] ModemError),
}

/// Maps an intrinsic metric to the extrinsic metric of a bit with label `bit`.
#[inline]
pub fn gamma_ie(lambda: f64, prior: f64, bit: Bit) -> f64 {
    if lambda == f64::INFINITY {
        return lambda;
    }
    match bit {
        Bit::Plus => lambda - prior,
        Bit::Minus => lambda + prior,
    }
}

/// Inverse of [`gamma_ie`].
#[inline]
pub fn gamma_ei(lambda: f64, prior: f64, bit: Bit) -> f64 {
    if lambda == f64::INFINITY {
        return lambda;
    }
    match bit {
        Bit::Plus => lambda + prior,
        Bit::Minus => lambda - prior,
    }
}

/// Distance increment of one tree level, evaluated from scratch:
/// `|y_j - sum_i R_{j,i} s_i|^2 / N_o + prior`.
///
/// `r_row` holds `R_{j,j..}` and `symbols` the matching `s_j..s_{M_T}`,
/// candidate first.
pub fn distance_increment(
    y_j: Complex64,
    r_row: &[Complex64],
    symbols: &[Complex64],
    noise_var: f64,
    prior: f64,
) -> f64 {
    debug_assert_eq!(r_row.len(), symbols.len());
    let estimate: Complex64 = r_row.iter().zip(symbols).map(|(r, s)| r * s).sum();
    (y_j - estimate).norm_sqr() / noise_var + prior
}

/// A node of the detection tree.
///
/// `symbols` always has `M_T` entries (constellation indices); only those at
/// positions `level..` are meaningful. The root has `level == M_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchNode {
    pub level: usize,
    pub symbols: Vec<usize>,
    pub partial_distance: f64,
}

impl SearchNode {
    pub fn root(levels: usize) -> Self {
        Self {
            level: levels,
            symbols: vec![0; levels],
            partial_distance: 0.0,
        }
    }

    pub fn child(&self, child: &Child) -> Self {
        let mut symbols = self.symbols.clone();
        symbols[self.level - 1] = child.point;
        Self {
            level: self.level - 1,
            symbols,
            partial_distance: child.partial_distance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Child {
    pub point: usize,
    pub increment: f64,
    pub partial_distance: f64,
}

/// The STS list: MAP hypothesis, its metric and the extrinsic metrics.
#[derive(Debug, Clone)]
pub struct SearchState {
    map_symbols: Vec<usize>,
    map_metric: f64,
    extrinsic: LlrMatrix,
    clip_level: f64,
}

type MetricMap = fn(f64, f64, Bit) -> f64;

impl SearchState {
    pub fn new(levels: usize, bits: usize, clip_level: f64) -> Self {
        Self {
            map_symbols: vec![0; levels],
            map_metric: f64::INFINITY,
            extrinsic: LlrMatrix::filled(levels, bits, f64::INFINITY),
            clip_level,
        }
    }

    pub fn map_symbols(&self) -> &[usize] {
        &self.map_symbols
    }

    pub fn map_metric(&self) -> f64 {
        self.map_metric
    }

    pub fn extrinsic_metrics(&self) -> &LlrMatrix {
        &self.extrinsic
    }

    pub fn clip_level(&self) -> f64 {
        self.clip_level
    }

    /// List administration for a leaf with symbols `leaf` and metric `distance`.
    pub fn leaf_update(&mut self, c: &Constellation, leaf: &[usize], distance: f64, priors: &PriorLlrs) {
        self.leaf_update_with(c, leaf, distance, priors, gamma_ie);
    }

    fn leaf_update_with(
        &mut self,
        c: &Constellation,
        leaf: &[usize],
        distance: f64,
        priors: &PriorLlrs,
        to_extrinsic: MetricMap,
    ) {
        let q = c.bits_per_symbol();
        if distance < self.map_metric {
            // The former MAP hypothesis becomes the counter-hypothesis of every
            // bit that flips.
            for (j, (&new, &old)) in leaf.iter().zip(&self.map_symbols).enumerate() {
                if new == old {
                    continue;
                }
                for b in 0..q {
                    let bit = c.bit(new, b);
                    if bit != c.bit(old, b) {
                        let value = to_extrinsic(self.map_metric, priors.get(j, b), bit);
                        self.extrinsic.set(j, b, value);
                    }
                }
            }
            self.map_metric = distance;
            self.map_symbols.copy_from_slice(leaf);
            let cap = distance + self.clip_level;
            for v in self.extrinsic.as_mut_slice() {
                if cap < *v {
                    *v = cap;
                }
            }
        } else {
            for (j, (&sym, &map)) in leaf.iter().zip(&self.map_symbols).enumerate() {
                if sym == map {
                    continue;
                }
                for b in 0..q {
                    let map_bit = c.bit(map, b);
                    if c.bit(sym, b) != map_bit {
                        let value = to_extrinsic(distance, priors.get(j, b), map_bit);
                        if value < self.extrinsic.get(j, b) {
                            self.extrinsic.set(j, b, value);
                        }
                    }
                }
            }
        }
    }

    /// Largest intrinsic metric the subtree below the node at `level` with
    /// symbols `path[level..]` could still improve. The node is pruned when
    /// its partial distance exceeds this value.
    pub fn pruning_threshold(&self, c: &Constellation, level: usize, path: &[usize], priors: &PriorLlrs) -> f64 {
        let q = c.bits_per_symbol();
        let mut threshold = self.map_metric;
        for (i, &map) in self.map_symbols.iter().enumerate() {
            let below = i < level;
            for b in 0..q {
                let map_sign = c.sign(map, b);
                if below || c.sign(path[i], b) != map_sign {
                    let bit = if map_sign > 0.0 { Bit::Plus } else { Bit::Minus };
                    let a = gamma_ei(self.extrinsic.get(i, b), priors.get(i, b), bit);
                    if a > threshold {
                        threshold = a;
                    }
                }
            }
        }
        threshold
    }

    // Threshold valid for every node on `level`, whatever its label.
    fn level_bound(&self, c: &Constellation, priors: &PriorLlrs) -> f64 {
        let q = c.bits_per_symbol();
        let mut bound = self.map_metric;
        for (i, &map) in self.map_symbols.iter().enumerate() {
            for b in 0..q {
                let a = gamma_ei(self.extrinsic.get(i, b), priors.get(i, b), c.bit(map, b));
                if a > bound {
                    bound = a;
                }
            }
        }
        bound
    }

    /// Extrinsic LLRs from the final list, clamped to `[-clip, clip]`.
    pub fn extrinsic_llrs(&self, c: &Constellation) -> LlrMatrix {
        let (levels, q) = (self.extrinsic.levels(), self.extrinsic.bits());
        let mut out = LlrMatrix::zeros(levels, q);
        for j in 0..levels {
            for b in 0..q {
                let lambda = self.extrinsic.get(j, b);
                let llr = match c.bit(self.map_symbols[j], b) {
                    Bit::Plus => lambda - self.map_metric,
                    Bit::Minus => self.map_metric - lambda,
                };
                out.set(j, b, llr.clamp(-self.clip_level, self.clip_level));
            }
        }
        out
    }
}

/// Output of one detection call.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    /// `L^E`, one row per tree level.
    pub extrinsic_llrs: LlrMatrix,
    /// Constellation indices of the MAP symbol vector.
    pub map_symbols: Vec<usize>,
    pub map_metric: f64,
    /// Nodes entered during the search, leaves included, root excluded.
    pub nodes_visited: u64,
}

impl DetectionResult {
    /// MAP label, row-major `M_T x Q`.
    pub fn map_label(&self, c: &Constellation) -> Vec<Bit> {
        self.map_symbols.iter().flat_map(|&s| c.label(s)).collect()
    }
}

/// A validated detection problem `y~ = R s + n` with a-priori information.
#[derive(Debug)]
pub struct SearchProblem<'a> {
    y: &'a [Complex64],
    r: &'a ComplexMatrix,
    constellation: &'a Constellation,
    priors: &'a PriorLlrs,
    noise_var: f64,
    table: PriorTable,
}

impl<'a> SearchProblem<'a> {
    pub fn new(
        y: &'a [Complex64],
        r: &'a ComplexMatrix,
        priors: &'a PriorLlrs,
        noise_var: f64,
        constellation: &'a Constellation,
    ) -> Result<Self, DetectError> {
        let n = y.len();
        if r.rows() != n || r.cols() != n {
            return Err(DetectError::Shape {
                expected: n,
                rows: r.rows(),
                cols: r.cols(),
            });
        }
        for i in 0..n {
            for j in 0..i {
                if r[(i, j)] != Complex64::new(0.0, 0.0) {
                    return Err(DetectError::NotTriangular { row: i, col: j });
                }
            }
            let d = r[(i, i)];
            if d.im != 0.0 || d.re.is_nan() || d.re <= 0.0 {
                return Err(DetectError::NonPositiveDiagonal(i));
            }
        }
        if !(noise_var > 0.0 && noise_var.is_finite()) {
            return Err(DetectError::NoiseVariance(noise_var));
        }
        priors.check_prior(n, constellation.bits_per_symbol())?;
        Ok(Self {
            y,
            r,
            constellation,
            priors,
            noise_var,
            table: PriorTable::new(constellation, priors),
        })
    }

    pub fn levels(&self) -> usize {
        self.y.len()
    }

    /// `y~_j - sum_{i > j} R_{j,i} s_i` for the symbols fixed above `level`.
    fn residual(&self, level: usize, symbols: &[usize]) -> Complex64 {
        let row = self.r.row(level);
        let mut acc = self.y[level];
        for i in level + 1..self.levels() {
            acc -= row[i] * self.constellation.point(symbols[i]);
        }
        acc
    }

    fn fill_children(&self, level: usize, symbols: &[usize], out: &mut Vec<(f64, usize)>) {
        let residual = self.residual(level, symbols);
        let diag = self.r[(level, level)].re;
        let inv_noise = 1.0 / self.noise_var;
        let prior = self.table.modified(level);
        out.clear();
        out.extend(
            self.constellation
                .points()
                .iter()
                .zip(prior)
                .enumerate()
                .map(|(p, (s, a))| ((residual - s * diag).norm_sqr() * inv_noise + a, p)),
        );
        out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    }

    /// Children of a non-leaf node in ascending order of distance increment.
    pub fn enumerate_children(&self, node: &SearchNode) -> Vec<Child> {
        assert!(node.level >= 1 && node.level <= self.levels(), "node has no children");
        let level = node.level - 1;
        let mut buf = Vec::with_capacity(self.constellation.size());
        self.fill_children(level, &node.symbols, &mut buf);
        buf.into_iter()
            .map(|(increment, point)| Child {
                point,
                increment,
                partial_distance: node.partial_distance + increment,
            })
            .collect()
    }

    /// Runs the tree search with extrinsic LLR clipping at `clip_level`.
    pub fn search(&self, clip_level: f64) -> Result<DetectionResult, DetectError> {
        self.search_with(clip_level, gamma_ie)
    }

    fn search_with(&self, clip_level: f64, to_extrinsic: MetricMap) -> Result<DetectionResult, DetectError> {
        if clip_level.is_nan() || clip_level < 0.0 {
            return Err(DetectError::ClipLevel(clip_level));
        }
        let c = self.constellation;
        let levels = self.levels();
        let mut state = SearchState::new(levels, c.bits_per_symbol(), clip_level);

        let mut symbols = vec![0usize; levels];
        // partial[j] is the partial distance of the node on level j; partial[levels] is the root.
        let mut partial = vec![0.0f64; levels + 1];
        let mut children: Vec<Vec<(f64, usize)>> =
            (0..levels).map(|_| Vec::with_capacity(c.size())).collect();
        let mut cursor = vec![0usize; levels];
        let mut nodes: u64 = 0;

        let mut level = levels - 1;
        self.fill_children(level, &symbols, &mut children[level]);
        loop {
            if cursor[level] == children[level].len() {
                if level == levels - 1 {
                    break;
                }
                level += 1;
                continue;
            }
            let (increment, point) = children[level][cursor[level]];
            cursor[level] += 1;
            let distance = partial[level + 1] + increment;
            symbols[level] = point;

            if distance > state.pruning_threshold(c, level, &symbols, self.priors) {
                // Siblings come in ascending order; once the label-independent
                // bound is exceeded none of them can survive.
                if distance > state.level_bound(c, self.priors) {
                    cursor[level] = children[level].len();
                }
                continue;
            }
            nodes += 1;

            if level == 0 {
                state.leaf_update_with(c, &symbols, distance, self.priors, to_extrinsic);
            } else {
                partial[level] = distance;
                level -= 1;
                self.fill_children(level, &symbols, &mut children[level]);
                cursor[level] = 0;
            }
        }

        Ok(DetectionResult {
            extrinsic_llrs: state.extrinsic_llrs(c),
            map_symbols: state.map_symbols.clone(),
            map_metric: state.map_metric,
            nodes_visited: nodes,
        })
    }
}

/// Detects one received vector `y~ = Q^H y` given the triangular factor `R`.
///
/// `clip_level` bounds the extrinsic LLR magnitudes (natural-log units,
/// `f64::INFINITY` disables clipping).
pub fn detect(
    y: &[Complex64],
    r: &ComplexMatrix,
    priors: &PriorLlrs,
    noise_var: f64,
    clip_level: f64,
    constellation: &Constellation,
) -> Result<DetectionResult, DetectError> {
    SearchProblem::new(y, r, priors, noise_var, constellation)?.search(clip_level)
}

/// [`detect`] with a replacement for the intrinsic-to-extrinsic map used by
/// the list administration. Only meant for fault-injection tests of the
/// conformance checker.
#[doc(hidden)]
pub fn detect_with_mapping(
    y: &[Complex64],
    r: &ComplexMatrix,
    priors: &PriorLlrs,
    noise_var: f64,
    clip_level: f64,
    constellation: &Constellation,
    to_extrinsic: fn(f64, f64, Bit) -> f64,
) -> Result<DetectionResult, DetectError> {
    SearchProblem::new(y, r, priors, noise_var, constellation)?.search_with(clip_level, to_extrinsic)
}

/// `L^D = L^E + L^A`.
pub fn intrinsic_from_extrinsic(extrinsic: &LlrMatrix, priors: &PriorLlrs) -> Result<LlrMatrix, DetectError> {
    if extrinsic.levels() != priors.levels() || extrinsic.bits() != priors.bits() {
        return Err(DetectError::LlrShape);
    }
    let data = extrinsic
        .as_slice()
        .iter()
        .zip(priors.as_slice())
        .map(|(e, a)| e + a)
        .collect();
    Ok(LlrMatrix::from_rows(extrinsic.levels(), extrinsic.bits(), data))
}
