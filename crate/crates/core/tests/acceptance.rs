//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as part of `cargo test`. Set `ACCEPTANCE_ONLY=1,5,8` to run a subset.
//! The process exits non-zero if any selected criterion fails.

mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use convlstm_anomaly::data::{generate, load_clip, save_clip, AnomalyKind, AnomalySpec, ObjectSpec, SceneSpec, ShapeKind, VideoClip};
use convlstm_anomaly::eval::{
    best_f1, evaluate, filter_extrema, frames_to_windows, persistence1d, propose_regions, regularity,
    sliding_errors, sweep, DetectOptions, ErrorSource,
};
use convlstm_anomaly::interval::Interval;
use convlstm_anomaly::net::{
    cell_step, decode_checkpoint, encode_checkpoint, CellParams, CellState, Model, NetworkConfig,
};
use convlstm_anomaly::train::{named_rng, train, TrainConfig};
use convlstm_anomaly::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_tensor(shape: &[usize], limit: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-limit..=limit))
}

// 1 -------------------------------------------------------------------------

fn gradient_check() -> Outcome {
    const EPS: f64 = 1e-5;
    // relative error denominators are floored here; central differences of a
    // loss near 0.1 carry about 1e-12 of rounding noise
    const FLOOR: f64 = 1e-6;
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for seed in 0..3u64 {
        let cfg = NetworkConfig {
            frame_size: 16,
            input_len: 3,
            output_len: 3,
            patch_factor: 2,
            filter_size: 3,
            layer_channels: vec![4, 4],
            conditioned: seed == 1,
            ..NetworkConfig::default()
        };
        let mut rng = named_rng(seed, "acceptance.gradcheck");
        let mut model = Model::init(cfg, &mut rng).map_err(|e| e.to_string())?;
        // move peepholes and biases off zero so every path carries gradient
        for t in model.params.tensors_mut() {
            for v in t.data_mut() {
                *v += rng.gen_range(-0.3..0.3);
            }
        }
        let x = Tensor::from_fn([3, 1, 16, 16], |_| rng.gen_range(0.0..1.0));
        let y = Tensor::from_fn([3, 1, 16, 16], |_| rng.gen_range(0.0..1.0));
        let analytic = model.loss_and_grads(&x, &y).map_err(|e| e.to_string())?.grads;
        for (ti, grad) in analytic.iter().enumerate() {
            for j in 0..grad.len() {
                let orig = model.params.tensors()[ti].data()[j];
                model.params.tensors_mut()[ti].data_mut()[j] = orig + EPS;
                let up = model.loss(&x, &y).unwrap();
                model.params.tensors_mut()[ti].data_mut()[j] = orig - EPS;
                let down = model.loss(&x, &y).unwrap();
                model.params.tensors_mut()[ti].data_mut()[j] = orig;
                let numeric = (up - down) / (2.0 * EPS);
                let a = grad.data()[j];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
                worst = worst.max(rel);
                checked += 1;
            }
        }
    }
    check(
        worst < 1e-4,
        format!("{checked} parameters over 3 seeds, max relative error {worst:.2e} (< 1e-4)"),
    )
}

// 2 -------------------------------------------------------------------------

fn cell_oracle() -> Outcome {
    let mut rng = named_rng(2, "acceptance.cell");
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let cin = rng.gen_range(1..=3);
        let hid = rng.gen_range(1..=4);
        let k = [1, 3, 5][rng.gen_range(0..3)];
        let (h, w) = (rng.gen_range(2..=7), rng.gen_range(2..=7));
        let mut p = CellParams::zeros(cin, hid, k, (h, w));
        for t in p.tensors_mut() {
            let shape = t.shape().to_vec();
            *t = random_tensor(&shape, 1.0, &mut rng);
        }
        let x = random_tensor(&[cin, h, w], 1.0, &mut rng);
        let prev = CellState {
            h: random_tensor(&[hid, h, w], 1.0, &mut rng),
            c: random_tensor(&[hid, h, w], 2.0, &mut rng),
        };
        let got = cell_step(&p, &x, &prev).map_err(|e| e.to_string())?;
        let want = common::scalar_cell_step(&p, &x, &prev);
        worst = worst.max(got.h.max_abs_diff(&want.h)).max(got.c.max_abs_diff(&want.c));
    }
    check(worst <= 1e-10, format!("100 random cells, max |difference| {worst:.2e} (<= 1e-10)"))
}

// 3 -------------------------------------------------------------------------

fn overfit() -> Outcome {
    let mut square = ObjectSpec::new(ShapeKind::Square, 4);
    square.position = Some((2.0, 5.0));
    square.velocity = Some((1.0, 1.0));
    let clip = generate(&SceneSpec::new(16, vec![square]), 20, 0).map_err(|e| e.to_string())?;
    let cfg = NetworkConfig {
        frame_size: 16,
        patch_factor: 4,
        filter_size: 3,
        layer_channels: vec![32, 32],
        ..NetworkConfig::default()
    };
    let mut model = Model::init(cfg, &mut named_rng(1, "model.init")).map_err(|e| e.to_string())?;
    let combined = |m: &Model| -> f64 {
        let e = sliding_errors(m, &clip, ErrorSource::Combined).unwrap();
        e.iter().sum::<f64>() / e.len() as f64
    };
    let initial = combined(&model);
    let tc = TrainConfig {
        learning_rate: 1e-4,
        decay: 0.9,
        max_iterations: 2000,
        validation_fraction: 0.0,
        seed: 1,
        ..TrainConfig::default()
    };
    train(&mut model, std::slice::from_ref(&clip), &tc).map_err(|e| e.to_string())?;
    let last = combined(&model);
    let ratio = last / initial;
    check(
        ratio < 0.01,
        format!("combined loss {initial:.4} -> {last:.2e} after 2000 RMSProp steps, ratio {:.3}% (< 1%)", ratio * 100.0),
    )
}

// 4 -------------------------------------------------------------------------

fn composite_vs_future_only() -> Outcome {
    // one bouncing square, random start and diagonal direction per clip
    let scene = SceneSpec::new(16, vec![ObjectSpec::new(ShapeKind::Square, 4)]);
    let clips = |seeds: std::ops::Range<u64>, len| -> Result<Vec<VideoClip>, String> {
        seeds.map(|s| generate(&scene, len, s).map_err(|e| e.to_string())).collect()
    };
    let train_set = clips(100..108, 40)?;
    let held_out = clips(900..904, 30)?;

    let mut composite = Vec::new();
    let mut baseline = Vec::new();
    for seed in 0..3u64 {
        for is_composite in [true, false] {
            let cfg = NetworkConfig {
                frame_size: 16,
                patch_factor: 4,
                filter_size: 5,
                layer_channels: vec![16, 16],
                composite: is_composite,
                ..NetworkConfig::default()
            };
            let mut model = Model::init(cfg, &mut named_rng(seed, "model.init")).map_err(|e| e.to_string())?;
            let tc = TrainConfig {
                learning_rate: 1e-3,
                max_iterations: 3000,
                seed,
                ..TrainConfig::default()
            };
            train(&mut model, &train_set, &tc).map_err(|e| e.to_string())?;
            let mut errors = Vec::new();
            for clip in &held_out {
                errors.extend(sliding_errors(&model, clip, ErrorSource::Prediction).map_err(|e| e.to_string())?);
            }
            let mse = errors.iter().sum::<f64>() / errors.len() as f64;
            if is_composite { composite.push(mse) } else { baseline.push(mse) }
        }
    }
    let median = |v: &[f64]| {
        let mut v = v.to_vec();
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let (mc, mb) = (median(&composite), median(&baseline));
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.5}")).collect::<Vec<_>>().join("/");
    check(
        mc <= mb,
        format!(
            "held-out future MSE median composite {mc:.5} vs future-only {mb:.5} (per seed {} vs {})",
            fmt(&composite),
            fmt(&baseline)
        ),
    )
}

// 5 -------------------------------------------------------------------------

fn persistence_oracle() -> Outcome {
    let mut rng = named_rng(5, "acceptance.persistence");
    let mut mismatches = 0;
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let n = rng.gen_range(1..=50);
        let s: Vec<f64> = if i % 2 == 0 {
            (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()
        } else {
            (0..n).map(|_| rng.gen_range(0..5) as f64 * 0.25).collect()
        };
        let got = persistence1d(&s);
        let want = common::path_persistence(&s);
        let pairs: Vec<(usize, usize)> = got.iter().map(|p| (p.min_index, p.max_index)).collect();
        if pairs != want {
            mismatches += 1;
            continue;
        }
        for (p, (m, x)) in got.iter().zip(&want) {
            worst = worst.max((p.persistence() - (s[*x] - s[*m])).abs());
        }
    }
    check(
        mismatches == 0 && worst <= 1e-12,
        format!("1000 series (half with plateaus), {mismatches} pairing mismatches, max persistence error {worst:.1e}"),
    )
}

// 6 -------------------------------------------------------------------------

fn regularity_invariants() -> Outcome {
    let mut rng = named_rng(6, "acceptance.regularity");
    let mut failures = Vec::new();
    let mut worst_arbitrary = 0.0f64;
    for case in 0..500 {
        let n = rng.gen_range(1..=60);
        // errors with 20 significant bits and scale factors with up to 20, so
        // every product c*e is exact in f64
        let e: Vec<f64> = (0..n).map(|_| rng.gen_range(1..1u64 << 20) as f64 / 1024.0).collect();
        let g = regularity(&e).unwrap();
        let (min, max) = (
            e.iter().copied().fold(f64::INFINITY, f64::min),
            e.iter().copied().fold(0.0, f64::max),
        );
        let argmin = (0..n).fold(0, |a, i| if e[i] < e[a] { i } else { a });
        if g[argmin] != 1.0 {
            failures.push(format!("case {case}: g(argmin) = {}", g[argmin]));
        }
        if g.iter().any(|&v| v < min / max || v > 1.0) {
            failures.push(format!("case {case}: value outside [min/max, 1]"));
        }
        let c = rng.gen_range(1..1u64 << 20) as f64 * 2f64.powi(rng.gen_range(-30..30));
        let scaled: Vec<f64> = e.iter().map(|v| v * c).collect();
        if regularity(&scaled).unwrap() != g {
            failures.push(format!("case {case}: scaling by {c} changed g"));
        }
        // arbitrary real c: products round, so only closeness is meaningful
        let c: f64 = rng.gen_range(1e-3..1e3);
        let gs = regularity(&e.iter().map(|v| v * c).collect::<Vec<_>>()).unwrap();
        for (a, b) in g.iter().zip(&gs) {
            worst_arbitrary = worst_arbitrary.max((a - b).abs());
        }
        if regularity(&vec![0.0; n]).unwrap() != vec![1.0; n] {
            failures.push(format!("case {case}: all-zero errors not all ones"));
        }
    }
    if worst_arbitrary > 1e-14 {
        failures.push(format!("arbitrary scaling moved g by {worst_arbitrary:.1e}"));
    }
    check(
        failures.is_empty(),
        if failures.is_empty() {
            format!("500 series: g(argmin) = 1, bounds hold, bit-identical under exact scalings, arbitrary c within {worst_arbitrary:.1e}, zeros -> ones")
        } else {
            failures.join("; ")
        },
    )
}

// 7 -------------------------------------------------------------------------

fn anomaly_benchmark() -> Outcome {
    let scene = SceneSpec::new(16, vec![ObjectSpec::new(ShapeKind::Square, 4)]);
    let normal: Vec<VideoClip> = (100..110)
        .map(|s| generate(&scene, 100, s))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let mut rng = named_rng(7, "acceptance.benchmark");
    let mut test = Vec::new();
    for s in 700..705 {
        let start = rng.gen_range(60..=120);
        let mut spec = scene.clone();
        spec.anomalies.push(AnomalySpec {
            kind: AnomalyKind::SpeedUp { object: 0, factor: 3.0 },
            start,
            end: start + 119,
        });
        test.push(generate(&spec, 300, s).map_err(|e| e.to_string())?);
    }

    let cfg = NetworkConfig {
        frame_size: 16,
        patch_factor: 4,
        filter_size: 3,
        layer_channels: vec![16, 16],
        ..NetworkConfig::default()
    };
    let window = cfg.window_len();
    let mut model = Model::init(cfg, &mut named_rng(0, "model.init")).map_err(|e| e.to_string())?;
    let tc = TrainConfig {
        learning_rate: 1e-3,
        seed: 0,
        ..TrainConfig::default()
    };
    train(&mut model, &normal, &tc).map_err(|e| e.to_string())?;

    let mut scored = Vec::new();
    let mut separated = true;
    let mut means = Vec::new();
    for clip in &test {
        let errors = sliding_errors(&model, clip, ErrorSource::Combined).map_err(|e| e.to_string())?;
        let g = regularity(&errors).map_err(|e| e.to_string())?;
        let gt = frames_to_windows(&clip.ground_truth, window, g.len());
        let (mut anomalous, mut ordinary) = (Vec::new(), Vec::new());
        for (i, &v) in g.iter().enumerate() {
            if gt.iter().any(|iv| iv.contains(i)) { anomalous.push(v) } else { ordinary.push(v) }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (a, o) = (mean(&anomalous), mean(&ordinary));
        separated &= a < o;
        means.push(format!("{a:.3}<{o:.3}"));
        scored.push((g, gt));
    }
    let rows = sweep(&scored, &DetectOptions::default()).map_err(|e| e.to_string())?;
    let best = best_f1(&rows).ok_or("empty sweep")?;
    let (p, r) = (best.report.precision(), best.report.recall());
    check(
        separated && r == 1.0 && p >= 0.6,
        format!(
            "mean regularity anomalous<normal per clip [{}]; best threshold {:.2}: recall {r:.2}, precision {p:.2}",
            means.join(" "),
            best.threshold
        ),
    )
}

// 8 -------------------------------------------------------------------------

fn evaluation_fixtures() -> Outcome {
    let iv = |s, e| Interval { start: s, end: e };
    let spans = |r: Vec<convlstm_anomaly::eval::AnomalyRegion>| r.iter().map(|r| (r.start, r.end)).collect::<Vec<_>>();
    let mut failures = Vec::new();
    let mut expect = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };
    expect("single minimum", spans(propose_regions(&[100], &[], 300, 50, 50)) == vec![(50, 150)]);
    expect("merged minima, inner maximum ignored", spans(propose_regions(&[100, 130], &[115], 300, 50, 50)) == vec![(50, 180)]);
    expect("midpoint trim", spans(propose_regions(&[100], &[180], 300, 50, 50)) == vec![(50, 140)]);

    let r = evaluate(&[iv(10, 20), iv(40, 60)], &[iv(10, 20), iv(40, 60)], 0.5).unwrap();
    expect("exact match", r.precision() == 1.0 && r.recall() == 1.0);
    let r = evaluate(&[iv(10, 30), iv(20, 40)], &[iv(5, 45)], 0.5).unwrap();
    expect("single TP", (r.true_positives, r.false_positives, r.false_negatives) == (1, 0, 0));
    let r = evaluate(&[iv(0, 99)], &[iv(80, 99)], 0.5).unwrap();
    expect("20% overlap", (r.true_positives, r.false_positives, r.false_negatives) == (0, 1, 1));

    let s = [1.0, 0.3, 0.8, 0.2, 0.9, 0.25, 1.0];
    expect("worked persistence threshold", filter_extrema(&persistence1d(&s), 0.55).0 == vec![3, 5]);
    check(
        failures.is_empty(),
        if failures.is_empty() {
            "3 region-proposal and 3 matching fixtures exact".to_string()
        } else {
            format!("failed: {}", failures.join(", "))
        },
    )
}

// 9 -------------------------------------------------------------------------

fn round_trips() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = NetworkConfig {
        frame_size: 16,
        input_len: 3,
        output_len: 3,
        patch_factor: 2,
        filter_size: 3,
        layer_channels: vec![4, 4],
        conditioned: true,
        ..NetworkConfig::default()
    };
    let model = Model::init(cfg.clone(), &mut named_rng(9, "model.init")).unwrap();
    let bytes = encode_checkpoint(&model);
    let loaded = decode_checkpoint(&bytes, Path::new("mem")).map_err(|e| e.to_string())?;
    let ckpt_ok = encode_checkpoint(&loaded) == bytes
        && loaded.config == model.config
        && loaded
            .params
            .tensors()
            .iter()
            .zip(model.params.tensors())
            .all(|(a, b)| a.data().iter().zip(b.data()).all(|(x, y)| *x == (*y as f32) as f64));

    let clip = generate(
        &SceneSpec::new(16, vec![ObjectSpec::new(ShapeKind::Disc, 6), ObjectSpec::new(ShapeKind::Cross, 5)]),
        12,
        9,
    )
    .unwrap();
    let mut noisy = clip.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for f in &mut noisy.frames {
        for v in f.data_mut() {
            *v = rng.gen_range(0.0..=1.0);
        }
    }
    save_clip(&noisy, dir.path()).map_err(|e| e.to_string())?;
    let back = load_clip(dir.path()).map_err(|e| e.to_string())?;
    let pgm_err = back
        .frames
        .iter()
        .zip(&noisy.frames)
        .map(|(a, b)| a.max_abs_diff(b))
        .fold(0.0, f64::max);

    let run = || {
        let mut m = Model::init(cfg.clone(), &mut named_rng(3, "model.init")).unwrap();
        let tc = TrainConfig {
            max_iterations: 6,
            eval_interval: 3,
            seed: 3,
            ..TrainConfig::default()
        };
        let out = train(&mut m, std::slice::from_ref(&clip), &tc).unwrap();
        (out.history, encode_checkpoint(&m))
    };
    let same_traj = run() == run();
    check(
        ckpt_ok && pgm_err <= 1.0 / 255.0 && same_traj,
        format!("checkpoint bytes identical: {ckpt_ok}; PGM max error {pgm_err:.2e} (<= 1/255); same-seed trajectories identical: {same_traj}"),
    )
}

// ---------------------------------------------------------------------------

type Criterion = (u32, &'static str, fn() -> Outcome, Duration);

fn main() {
    let criteria: [Criterion; 9] = [
        (1, "gradient correctness", gradient_check, Duration::from_secs(120)),
        (2, "cell oracle", cell_oracle, Duration::from_secs(10)),
        (3, "overfit", overfit, Duration::from_secs(600)),
        (4, "composite vs future-only", composite_vs_future_only, Duration::from_secs(2700)),
        (5, "persistence oracle", persistence_oracle, Duration::from_secs(30)),
        (6, "regularity invariants", regularity_invariants, Duration::from_secs(60)),
        (7, "synthetic anomaly benchmark", anomaly_benchmark, Duration::from_secs(1800)),
        (8, "evaluation fixtures", evaluation_fixtures, Duration::from_secs(10)),
        (9, "round-trips", round_trips, Duration::from_secs(60)),
    ];
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = 0;
    for (n, name, f, budget) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = f();
        let took = t0.elapsed();
        let (status, detail) = match outcome {
            Ok(d) if took <= budget => ("PASS", d),
            Ok(d) => ("FAIL", format!("{d}; took {:.0}s, budget {}s", took.as_secs_f64(), budget.as_secs())),
            Err(d) => ("FAIL", d),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!("criterion {n} ({name}): {status} [{:.1}s] {detail}", took.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
