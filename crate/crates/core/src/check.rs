//! Tree-search versus brute-force conformance batteries.
//!
//! Every instance is generated from its own seed so a failure can be
//! reproduced from the seed printed in the report.

use std::fmt;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::channel::{draw_channel, snr_to_noise, transmit};
use crate::modem::{Constellation, ConstellationKind, LlrMatrix, PriorLlrs};
use crate::numerics::{matched_filter, sorted_qr, ComplexMatrix, ComplexVector};
use crate::oracle::{clipped_reference, exhaustive_llrs, MetricForm, OracleResult};
use crate::stsd::{detect, DetectError, DetectionResult};

/// Absolute agreement bound for LLRs.
pub const ABS_TOL: f64 = 1e-12;
/// Relative agreement bound for LLRs.
pub const REL_TOL: f64 = 1e-9;

/// Normalized clip levels `L_max * N_o`, largest first.
pub const CLIP_GRID: [f64; 7] = [f64::INFINITY, 4.0, 2.0, 1.0, 0.5, 0.2, 0.0];

/// `|a - b| <= 1e-12` or `|a - b| <= 1e-9 * max(|a|, |b|)`.
pub fn llr_close(a: f64, b: f64) -> bool {
    if a == b {
        return true;
    }
    let diff = (a - b).abs();
    diff <= ABS_TOL || diff <= REL_TOL * a.abs().max(b.abs())
}

/// A random detection problem already reduced to triangular form.
#[derive(Debug, Clone)]
pub struct Instance {
    pub seed: u64,
    pub constellation: Constellation,
    pub y: Vec<Complex64>,
    pub r: ComplexMatrix,
    pub priors: PriorLlrs,
    pub noise_var: f64,
}

impl Instance {
    /// Square Rayleigh channel after sorted QR, uniform random symbols, SNR
    /// uniform in [0, 20] dB and a-priori LLRs drawn from N(0, prior_std^2).
    pub fn random(seed: u64, antennas: usize, kind: ConstellationKind, prior_std: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = Constellation::new(kind);
        // hp is the channel with columns in detection order
        let (q_mat, r, hp) = loop {
            let h = draw_channel(&mut rng, antennas, antennas);
            if let Ok((q, r, perm)) = sorted_qr(&h) {
                break (q, r, h.permute_columns(&perm));
            }
        };
        let snr_db = rng.random_range(0.0..20.0);
        let noise_var = snr_to_noise(snr_db, antennas);
        let s = ComplexVector::new((0..antennas).map(|_| c.point(rng.random_range(0..c.size()))).collect());
        let y = transmit(&hp, &s, noise_var, &mut rng).expect("square system");
        let y = matched_filter(&q_mat, &y).expect("square system").as_slice().to_vec();
        let q = c.bits_per_symbol();
        let priors = if prior_std > 0.0 {
            let normal = Normal::new(0.0, prior_std).expect("valid std");
            LlrMatrix::from_rows(antennas, q, (0..antennas * q).map(|_| normal.sample(&mut rng)).collect())
        } else {
            LlrMatrix::zeros(antennas, q)
        };
        Self {
            seed,
            constellation: c,
            y,
            r,
            priors,
            noise_var,
        }
    }

    pub fn detect(&self, clip_level: f64) -> Result<DetectionResult, DetectError> {
        detect(&self.y, &self.r, &self.priors, self.noise_var, clip_level, &self.constellation)
    }

    pub fn oracle(&self, form: MetricForm) -> OracleResult {
        exhaustive_llrs(&self.y, &self.r, &self.priors, self.noise_var, &self.constellation, form)
            .expect("instance within the exhaustive search limit")
    }

    /// `sum_{k=1}^{M_T} |O|^k`.
    pub fn full_tree_nodes(&self) -> u64 {
        let m = self.constellation.size() as u64;
        (1..=self.y.len() as u32).map(|k| m.pow(k)).sum()
    }
}

/// Instance seed derived from the master seed, configuration and index.
pub fn instance_seed(master: u64, config: usize, index: usize) -> u64 {
    master
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(((config as u64) << 40) | index as u64)
}

/// System configurations with at most 4096 leaves.
pub fn default_configs() -> Vec<(usize, ConstellationKind)> {
    let mut out = Vec::new();
    for antennas in 1..=3 {
        for kind in [ConstellationKind::Qpsk, ConstellationKind::Qam16] {
            if (1usize << (kind.bits_per_symbol() * antennas)) <= 4096 {
                out.push((antennas, kind));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Counterexample {
    pub battery: &'static str,
    pub seed: u64,
    pub antennas: usize,
    pub constellation: ConstellationKind,
    pub clip_norm: f64,
    pub detail: String,
}

impl fmt::Display for Counterexample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: seed {} (M_T = {}, {}, clip*N_o = {}): {}",
            self.battery, self.seed, self.antennas, self.constellation, self.clip_norm, self.detail
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatteryResult {
    pub name: &'static str,
    pub cases: u64,
    pub failures: u64,
    pub max_deviation: f64,
}

impl BatteryResult {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            cases: 0,
            failures: 0,
            max_deviation: 0.0,
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub batteries: Vec<BatteryResult>,
    pub first_failure: Option<Counterexample>,
    /// Largest |L^E| deviation from the clipped oracle across all clip levels.
    pub max_llr_deviation: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.batteries.iter().all(BatteryResult::passed)
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.batteries {
            writeln!(
                f,
                "[{}] {:<24} cases={:<8} failures={:<6} max_deviation={:.3e}",
                if b.passed() { "PASS" } else { "FAIL" },
                b.name,
                b.cases,
                b.failures,
                b.max_deviation
            )?;
        }
        writeln!(f, "max |L^E deviation| = {:.3e}", self.max_llr_deviation)?;
        if let Some(cx) = &self.first_failure {
            writeln!(f, "first counterexample: {cx}")?;
        }
        Ok(())
    }
}

/// Detector under test: instance and absolute clip level in, result out.
pub type DetectorFn<'a> = dyn Fn(&Instance, f64) -> Result<DetectionResult, DetectError> + 'a;

/// Runs the batteries with the real tree search.
pub fn run_check(seed: u64, instances_per_config: usize) -> CheckReport {
    run_check_with(seed, instances_per_config, &default_configs(), &|inst, clip| inst.detect(clip))
}

pub fn run_check_with(
    seed: u64,
    instances_per_config: usize,
    configs: &[(usize, ConstellationKind)],
    detector: &DetectorFn<'_>,
) -> CheckReport {
    let mut maxlog = BatteryResult::new("max-log equivalence");
    let mut clipped = BatteryResult::new("clipped equivalence");
    let mut map = BatteryResult::new("MAP label");
    let mut forms = BatteryResult::new("metric-form invariance");
    let mut nodes = BatteryResult::new("node-count properties");
    let mut first: Option<Counterexample> = None;
    let mut max_dev = 0.0f64;

    fn fail(first: &mut Option<Counterexample>, cx: Counterexample) {
        if first.is_none() {
            *first = Some(cx);
        }
    }

    for (ci, &(antennas, kind)) in configs.iter().enumerate() {
        for i in 0..instances_per_config {
            let inst = Instance::random(instance_seed(seed, ci, i), antennas, kind, 2.0);
            let exact = inst.oracle(MetricForm::Exact);
            let modified = inst.oracle(MetricForm::Modified);
            let cx = |battery, clip_norm, detail: String| Counterexample {
                battery,
                seed: inst.seed,
                antennas,
                constellation: kind,
                clip_norm,
                detail,
            };

            forms.cases += 1;
            let dev = exact.intrinsic_llrs.max_abs_diff(&modified.intrinsic_llrs);
            forms.max_deviation = forms.max_deviation.max(dev);
            if dev > 1e-9 || exact.map_symbols != modified.map_symbols {
                forms.failures += 1;
                fail(&mut first, cx(forms.name, f64::INFINITY, format!("deviation {dev:e}")));
            }

            let mut previous_nodes = u64::MAX;
            for &clip_norm in &CLIP_GRID {
                let clip = clip_norm / inst.noise_var;
                let battery = if clip_norm.is_infinite() { &mut maxlog } else { &mut clipped };
                battery.cases += 1;
                let res = match detector(&inst, clip) {
                    Ok(r) => r,
                    Err(e) => {
                        battery.failures += 1;
                        fail(&mut first, cx(battery.name, clip_norm, format!("detector error: {e}")));
                        continue;
                    }
                };
                let reference = clipped_reference(&modified, clip);
                let mut worst = 0.0f64;
                let mut ok = true;
                for (a, b) in res.extrinsic_llrs.as_slice().iter().zip(reference.as_slice()) {
                    worst = worst.max((a - b).abs());
                    ok &= llr_close(*a, *b);
                }
                battery.max_deviation = battery.max_deviation.max(worst);
                max_dev = max_dev.max(worst);
                if !ok {
                    battery.failures += 1;
                    fail(&mut first, cx(battery.name, clip_norm, format!("|L^E deviation| {worst:e}")));
                }

                map.cases += 1;
                if res.map_symbols != modified.map_symbols {
                    map.failures += 1;
                    fail(
                        &mut first,
                        cx(
                            map.name,
                            clip_norm,
                            format!("got {:?}, expected {:?}", res.map_symbols, modified.map_symbols),
                        ),
                    );
                }

                nodes.cases += 1;
                if res.nodes_visited > inst.full_tree_nodes() || res.nodes_visited > previous_nodes {
                    nodes.failures += 1;
                    fail(
                        &mut first,
                        cx(
                            nodes.name,
                            clip_norm,
                            format!("{} nodes after {} at a larger clip level", res.nodes_visited, previous_nodes),
                        ),
                    );
                }
                previous_nodes = res.nodes_visited;
            }
        }
    }

    CheckReport {
        batteries: vec![maxlog, clipped, map, forms, nodes],
        first_failure: first,
        max_llr_deviation: max_dev,
    }
}
