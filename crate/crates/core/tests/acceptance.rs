//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Run alone with `cargo test -p siso-stsd --test acceptance`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use siso_stsd::check::{default_configs, instance_seed, llr_close, Instance};
use siso_stsd::cli::{execute, parse_args};
use siso_stsd::coding::{bcjr_decode, codeword_oracle, encode, taps, GENERATORS_OCTAL, MEMORY};
use siso_stsd::harness::{
    run_sweep, to_csv, wilson_interval, DetectorKind, Execution, FrameConfig, StopRule, TradeoffPoint,
};
use siso_stsd::oracle::{clipped_reference, MetricForm};
use siso_stsd::stsd::intrinsic_from_extrinsic;

const MASTER_SEED: u64 = 20_260_401;
/// 6 configurations x 1700 = 10200 instances.
const INSTANCES_PER_CONFIG: usize = 1700;
const CLIPS: [f64; 5] = [0.0, 0.2, 1.0, 2.0, 4.0];
/// Seed and operating points for the link-level criteria.
const LINK_SEED: u64 = 2026;
const TREND_SNR_DB: f64 = 13.0;
const WATERFALL_SNR_DB: f64 = 10.0;
const LSD_SNR_DB: f64 = 11.0;
const LINK_FRAMES: u64 = 1000;
/// "Comparable" node count: at most this multiple of the LSD count.
const COMPARABLE_NODES: f64 = 2.0;
const Z95: f64 = 1.959_963_984_540_054;

type Outcome = Result<String, String>;

fn instances(prior_std: f64) -> impl Iterator<Item = Instance> {
    default_configs().into_iter().enumerate().flat_map(move |(ci, (antennas, kind))| {
        (0..INSTANCES_PER_CONFIG)
            .map(move |i| Instance::random(instance_seed(MASTER_SEED, ci, i), antennas, kind, prior_std))
    })
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let (mut n, mut worst) = (0usize, 0.0f64);
    for inst in instances(2.0) {
        n += 1;
        let res = inst.detect(f64::INFINITY).map_err(|e| format!("seed {}: {e}", inst.seed))?;
        let oracle = inst.oracle(MetricForm::Modified);
        for (a, b) in res.extrinsic_llrs.as_slice().iter().zip(oracle.extrinsic_llrs.as_slice()) {
            worst = worst.max((a - b).abs());
            if !llr_close(*a, *b) {
                return Err(format!("seed {}: L^E {a} vs exhaustive {b}", inst.seed));
            }
        }
        if res.map_label(&inst.constellation) != oracle.map_label(&inst.constellation) {
            return Err(format!("seed {}: MAP label differs", inst.seed));
        }
    }
    if n < 10_000 {
        return Err(format!("only {n} instances"));
    }
    let secs = t.elapsed().as_secs_f64();
    if secs > 300.0 {
        return Err(format!("runtime {secs:.1} s exceeds 5 min"));
    }
    Ok(format!("{n} instances, max |L^E dev| = {worst:.2e}, {secs:.1} s"))
}

fn criterion_2() -> Outcome {
    let (mut n, mut worst) = (0usize, 0.0f64);
    for inst in instances(2.0) {
        let oracle = inst.oracle(MetricForm::Modified);
        for clip_norm in CLIPS {
            n += 1;
            let clip = clip_norm / inst.noise_var;
            let res = inst.detect(clip).map_err(|e| format!("seed {}: {e}", inst.seed))?;
            let reference = clipped_reference(&oracle, clip);
            for (a, b) in res.extrinsic_llrs.as_slice().iter().zip(reference.as_slice()) {
                worst = worst.max((a - b).abs());
                if !llr_close(*a, *b) {
                    return Err(format!("seed {} clip {clip_norm}: {a} vs {b}", inst.seed));
                }
            }
            if res.map_symbols != oracle.map_symbols {
                return Err(format!("seed {} clip {clip_norm}: MAP label differs", inst.seed));
            }
        }
    }
    Ok(format!("{n} detections over clip*N_o in {CLIPS:?}, max dev = {worst:.2e}"))
}

fn criterion_3() -> Outcome {
    let (mut n, mut worst) = (0usize, 0.0f64);
    for inst in instances(2.0) {
        n += 1;
        let exact = inst.oracle(MetricForm::Exact);
        let modified = inst.oracle(MetricForm::Modified);
        let dev = exact.intrinsic_llrs.max_abs_diff(&modified.intrinsic_llrs);
        worst = worst.max(dev);
        if dev > 1e-9 {
            return Err(format!("seed {}: forms differ by {dev:e}", inst.seed));
        }
    }
    Ok(format!("{n} instances, max dev = {worst:.2e}"))
}

fn criterion_4() -> Outcome {
    let descending = [f64::INFINITY, 4.0, 2.0, 1.0, 0.2, 0.0];
    let (mut three, mut strict) = (0usize, 0usize);
    for inst in instances(2.0) {
        let mut previous = u64::MAX;
        let mut counts = Vec::new();
        for &clip_norm in &descending {
            let nodes = inst
                .detect(clip_norm / inst.noise_var)
                .map_err(|e| format!("seed {}: {e}", inst.seed))?
                .nodes_visited;
            if nodes > previous {
                return Err(format!("seed {}: {nodes} nodes at clip {clip_norm} > {previous}", inst.seed));
            }
            if nodes > inst.full_tree_nodes() {
                return Err(format!("seed {}: {nodes} exceeds the full tree", inst.seed));
            }
            previous = nodes;
            counts.push(nodes);
        }
        if inst.y.len() == 3 {
            three += 1;
            strict += usize::from(counts.last() < counts.first());
        }
    }
    let share = strict as f64 / three as f64;
    if share < 0.9 {
        return Err(format!("strict reduction on only {:.1}% of M_T = 3 instances", 100.0 * share));
    }
    Ok(format!("monotone and bounded; strict reduction on {:.1}% of {three} M_T = 3 instances", 100.0 * share))
}

fn criterion_5() -> Outcome {
    let (mut n, mut worst) = (0usize, 0.0f64);
    for inst in instances(0.0) {
        n += 1;
        let res = inst.detect(f64::INFINITY).map_err(|e| format!("seed {}: {e}", inst.seed))?;
        let oracle = inst.oracle(MetricForm::Modified);
        let ld = intrinsic_from_extrinsic(&res.extrinsic_llrs, &inst.priors).map_err(|e| e.to_string())?;
        if ld != res.extrinsic_llrs {
            return Err(format!("seed {}: L^D != L^E with zero priors", inst.seed));
        }
        for (a, b) in ld.as_slice().iter().zip(oracle.intrinsic_llrs.as_slice()) {
            worst = worst.max((a - b).abs());
            if (a - b).abs() > 1e-12 {
                return Err(format!("seed {}: L^D {a} vs exhaustive {b}", inst.seed));
            }
        }
    }
    Ok(format!("{n} instances, max |L^D dev| = {worst:.2e}"))
}

fn criterion_6() -> Outcome {
    let expected = [[1, 0, 1, 1, 0, 1, 1], [1, 1, 1, 1, 0, 0, 1]];
    let mut impulse = vec![0u8; 1 + MEMORY];
    impulse[0] = 1;
    let coded = encode(&impulse);
    for (g, want) in expected.into_iter().enumerate() {
        if taps(g) != want {
            return Err(format!("taps of {:o} = {:?}", GENERATORS_OCTAL[g], taps(g)));
        }
    }
    for t in 0..=MEMORY {
        if [coded[2 * t], coded[2 * t + 1]] != [expected[0][t], expected[1][t]] {
            return Err(format!("impulse response differs at step {t}"));
        }
    }

    let k = 10;
    let mut rng = ChaCha8Rng::seed_from_u64(MASTER_SEED);
    let mut worst = 0.0f64;
    let trials = 200;
    for trial in 0..trials {
        let info: Vec<u8> = (0..k).map(|_| rng.random_range(0..2)).collect();
        let code = encode(&info);
        let sigma = rng.random_range(0.3..2.0);
        let noise = Normal::new(0.0, sigma).unwrap();
        let llrs: Vec<f64> = code
            .iter()
            .map(|&b| {
                let x = if b == 0 { 1.0 } else { -1.0 };
                2.0 * (x + noise.sample(&mut rng)) / (sigma * sigma)
            })
            .collect();
        let bcjr = bcjr_decode(&llrs).map_err(|e| e.to_string())?;
        let oracle = codeword_oracle(&llrs, k).map_err(|e| e.to_string())?;
        for (a, b) in bcjr.posterior.iter().zip(&oracle) {
            worst = worst.max((a - b).abs());
            if (a - b).abs() > 1e-9 {
                return Err(format!("trial {trial}: posterior {a} vs oracle {b}"));
            }
        }
    }
    Ok(format!("impulse responses match; {trials} inputs, max dev = {worst:.2e}"))
}

fn link_config(clip_norm: f64, iterations: usize, snr_db: f64, detector: DetectorKind) -> FrameConfig {
    FrameConfig {
        clip_norm,
        iterations,
        snr_db,
        seed: LINK_SEED,
        detector,
        ..FrameConfig::default()
    }
    .with_consistent_frame_bits()
}

fn fixed_frames() -> StopRule {
    StopRule {
        min_frames: LINK_FRAMES,
        min_errors: 0,
        max_frames: LINK_FRAMES,
    }
}

fn interval(p: &TradeoffPoint) -> (f64, f64) {
    wilson_interval(p.frame_errors, p.frames, Z95)
}

/// True when `better` has a lower FER than `worse` with disjoint 95% intervals.
fn significantly_lower(better: &TradeoffPoint, worse: &TradeoffPoint) -> bool {
    interval(better).1 < interval(worse).0
}

fn summary(p: &TradeoffPoint) -> String {
    format!("FER {:.3} nodes {:.0}", p.fer, p.mean_cumulative_nodes)
}

fn criterion_7() -> Outcome {
    let t = Instant::now();
    let clips = [0.2, 2.0, f64::INFINITY];
    let mut grid = Vec::new();
    for clip in clips {
        for iters in [1, 2] {
            grid.push(link_config(clip, iters, TREND_SNR_DB, DetectorKind::Sts));
        }
    }
    let trend = run_sweep(&grid, &fixed_frames(), Execution::default()).map_err(|e| e.to_string())?;
    let mut notes = Vec::new();

    // (a) at clip 2 and without clipping
    for pair in trend.chunks(2).skip(1) {
        let (one, two) = (&pair[0], &pair[1]);
        if !(0.01..=0.3).contains(&one.fer) {
            return Err(format!("(a) FER(I=1) = {} outside [0.01, 0.3] at clip {}", one.fer, one.clip_norm));
        }
        if !significantly_lower(two, one) {
            return Err(format!("(a) clip {}: FER(I=2) {} vs FER(I=1) {}", one.clip_norm, two.fer, one.fer));
        }
        notes.push(format!("clip {}: I=1 {} / I=2 {}", one.clip_norm, one.fer, two.fer));
    }
    // (b)
    for pair in trend.chunks(2) {
        if pair[1].mean_cumulative_nodes <= pair[0].mean_cumulative_nodes {
            return Err(format!("(b) clip {}: nodes do not grow with I", pair[0].clip_norm));
        }
    }

    // (c) at I = 2 in the waterfall
    let grid: Vec<_> = clips
        .iter()
        .map(|&clip| link_config(clip, 2, WATERFALL_SNR_DB, DetectorKind::Sts))
        .collect();
    let shape = run_sweep(&grid, &fixed_frames(), Execution::default()).map_err(|e| e.to_string())?;
    for w in shape.windows(2) {
        if !significantly_lower(&w[1], &w[0]) || w[1].mean_cumulative_nodes <= w[0].mean_cumulative_nodes {
            return Err(format!(
                "(c) clip {} -> {}: {} -> {}",
                w[0].clip_norm,
                w[1].clip_norm,
                summary(&w[0]),
                summary(&w[1])
            ));
        }
    }
    let shape_notes: Vec<_> = shape.iter().map(|p| format!("clip {}: {}", p.clip_norm, summary(p))).collect();
    Ok(format!(
        "{} frames/point; {TREND_SNR_DB} dB [{}]; {WATERFALL_SNR_DB} dB I=2 [{}]; {:.0} s",
        LINK_FRAMES,
        notes.join(", "),
        shape_notes.join(", "),
        t.elapsed().as_secs_f64()
    ))
}

fn criterion_8() -> Outcome {
    let sts = link_config(2.0, 2, LSD_SNR_DB, DetectorKind::Sts);
    let lsd = link_config(2.0, 2, LSD_SNR_DB, DetectorKind::Lsd { list_size: 16 });
    let points = run_sweep(&[sts, lsd], &fixed_frames(), Execution::default()).map_err(|e| e.to_string())?;
    let (sts, lsd) = (&points[0], &points[1]);
    let ratio = sts.mean_cumulative_nodes / lsd.mean_cumulative_nodes;
    let line = format!("{LSD_SNR_DB} dB I=2: STS {} vs LSD(16) {}, node ratio {ratio:.2}", summary(sts), summary(lsd));
    if !significantly_lower(sts, lsd) {
        return Err(format!("FER not lower: {line}"));
    }
    if ratio > COMPARABLE_NODES {
        return Err(format!("node count not comparable: {line}"));
    }
    Ok(line)
}

fn criterion_9() -> Outcome {
    let dir = std::env::temp_dir().join(format!("siso-stsd-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for (run, extra) in [(0, ""), (1, ""), (2, " --sequential")] {
        let path = dir.join(format!("run{run}.csv"));
        let argv = format!(
            "siso-stsd sweep --mt 2 --mr 2 --mod qpsk --tones 16 --clip 0.5,inf --iters 1,2 --snr 4:2:8 \
             --frames 300 --errors 10 --seed 99 --out {}{extra}",
            path.display()
        );
        let spec = parse_args(argv.split_whitespace()).map_err(|e| e.to_string())?;
        execute(&spec).map_err(|e| e.to_string())?;
        outputs.push(std::fs::read(&path).map_err(|e| e.to_string())?);
    }
    let _ = std::fs::remove_dir_all(&dir);
    if outputs[0] != outputs[1] {
        return Err("repeated runs differ".into());
    }
    if outputs[0] != outputs[2] {
        return Err("sequential and parallel runs differ".into());
    }
    // and the library path agrees with the CLI output
    let spec = parse_args(
        "siso-stsd sweep --mt 2 --mr 2 --mod qpsk --tones 16 --clip 0.5,inf --iters 1,2 --snr 4:2:8 \
         --frames 300 --errors 10 --seed 99"
            .split_whitespace(),
    )
    .map_err(|e| e.to_string())?;
    let points = run_sweep(&spec.grid(), &spec.stop, Execution::Sequential).map_err(|e| e.to_string())?;
    if to_csv(&points).into_bytes() != outputs[0] {
        return Err("library CSV differs from CLI CSV".into());
    }
    Ok(format!("3 runs byte-identical ({} bytes)", outputs[0].len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("1 max-log SISO equivalence", criterion_1),
        ("2 clipped equivalence", criterion_2),
        ("3 metric-form invariance", criterion_3),
        ("4 complexity properties", criterion_4),
        ("5 zero-prior reduction", criterion_5),
        ("6 BCJR oracle", criterion_6),
        ("7 end-to-end trends", criterion_7),
        ("8 LSD comparison", criterion_8),
        ("9 determinism", criterion_9),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        match run() {
            Ok(msg) => println!("[PASS] criterion {name}: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("[FAIL] criterion {name}: {msg}");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
