//! Acceptance suite. Runs as a plain binary so every criterion prints one
//! `PASS` or `FAIL` line regardless of output capture.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;

use qrefine::classifier::{
    dispersion_metric, train_softmax_head, LinearMember, ScoreKind, ScoreVector, SoftmaxHead,
};
use qrefine::dataset::{GlyphFixture, GlyphSpec};
use qrefine::features::{toy_extractor, BackendDescriptor, BackendKind, Sharing};
use qrefine::qlearn::{
    compute_reward, q_update, run_episode, MetricCaching, QTable, Reward, State,
};
use qrefine::{
    ActionBank, ActionSpec, Classifier, FeatureBackend, FeatureVector, FilterMode, HardFilter,
    Image, Pipeline, RLConfig, TrainConfig,
};
use qrefine_cli::{cmd_eval, cmd_train, RunConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !($cond) {
            return Err(format!($($msg)+));
        }
    };
}

fn reward_table() -> Outcome {
    // Every ordered pair over {0.1, 0.3} and their midpoint: three of each branch.
    let values = [0.1, 0.2, 0.3];
    let mut seen = [0usize; 3];
    for &m in &values {
        for &m1 in &values {
            let want = match (m1 > m, m1 == m) {
                (true, _) => 1i8,
                (false, true) => 0,
                (false, false) => -1,
            };
            let got = i8::from(compute_reward(m, m1).map_err(|e| e.to_string())?);
            ensure!(got == want, "reward({m}, {m1}) = {got}, expected {want}");
            seen[(want + 1) as usize] += 1;
        }
    }
    ensure!(seen == [3, 3, 3], "branch coverage {seen:?}");
    for (m, m1, want) in [(0.10, 0.25, 1), (0.30, 0.30, 0), (0.40, 0.15, -1)] {
        ensure!(
            i8::from(compute_reward(m, m1).unwrap()) == want,
            "({m}, {m1})"
        );
    }
    Ok("9/9 pairs, 3 per branch".into())
}

fn update_arithmetic() -> Outcome {
    let cfg = RLConfig::default();
    let err = |e: qrefine::Error| e.to_string();
    let zero = QTable::new(2).map_err(err)?;
    let once = q_update(
        &zero,
        State::NotImproved,
        1,
        Reward::Better,
        State::Improved,
        &cfg,
    )
    .map_err(err)?;
    let twice = q_update(
        &once,
        State::NotImproved,
        1,
        Reward::Better,
        State::Improved,
        &cfg,
    )
    .map_err(err)?;
    // Hand evaluation: 0 + 0.4 (1 + 0.3 * 0 - 0) and 0.4 + 0.4 (1 + 0.3 * 0 - 0.4).
    let first = 0.0 + 0.4 * (1.0 + 0.3 * 0.0 - 0.0);
    let second = first + 0.4 * (1.0 + 0.3 * 0.0 - first);
    let q1 = once.get(0, 1).map_err(err)?;
    let q2 = twice.get(0, 1).map_err(err)?;
    ensure!(
        (q1 - first).abs() <= 1e-12 && (q1 - 0.4).abs() <= 1e-12,
        "first update {q1}"
    );
    ensure!(
        (q2 - second).abs() <= 1e-12 && (q2 - 0.64).abs() <= 1e-12,
        "second update {q2}"
    );
    let untouched = [once.get(0, 0), once.get(1, 0), once.get(1, 1)];
    ensure!(
        untouched.iter().all(|v| *v.as_ref().unwrap() == 0.0),
        "other entries moved"
    );
    Ok(format!("{q1} then {q2}"))
}

fn episode_schedule() -> Outcome {
    let bound = 10.0 / 7.0;
    let mut checked = 0;
    for a in [2usize, 3] {
        for seed in 0..25 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let metrics: Vec<f64> = (0..a).map(|_| rng.random_range(0.0..1.0)).collect();
            let baseline = rng.random_range(0.0..1.0);
            let cfg = RLConfig::default().with_seed(seed);
            let trace = run_episode(a, baseline, |i| Ok(metrics[i]), &cfg, MetricCaching::Cached)
                .map_err(|e| e.to_string())?;
            ensure!(
                trace.iterations.len() == a * 20,
                "a={a}: {} iterations",
                trace.iterations.len()
            );
            for r in &trace.iterations {
                ensure!(
                    r.q_snapshot.max_abs() <= bound,
                    "a={a} seed={seed}: |Q| > 10/7"
                );
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} episodes, lengths 40/60, |Q| <= 10/7"))
}

/// Feature = top-left pixel, so translations place metrics by hand.
struct CornerProbe(BackendDescriptor);

impl FeatureBackend for CornerProbe {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.0
    }
    fn dim(&self) -> usize {
        2
    }
    fn extract(&self, img: &Image) -> qrefine::Result<FeatureVector> {
        FeatureVector::new(vec![img.get(0, 0, 0) as f64 / 255.0, 0.0])
    }
}

fn oracle_agreement() -> Outcome {
    let backend = CornerProbe(BackendDescriptor {
        kind: BackendKind::Toy,
        source: None,
        expected_input: None,
        deterministic: true,
        sharing: Sharing::Concurrent,
    });
    let model: Classifier = SoftmaxHead::from_parts(2, 2, vec![4.0, 0.0, 0.0, 0.0], vec![0.0, 0.0])
        .map_err(|e| e.to_string())?
        .into();
    let bank = ActionBank::new(
        "shifts",
        vec![
            ActionSpec::translate(-1, 0),
            ActionSpec::translate(-2, 0),
            ActionSpec::translate(-3, 0),
        ],
    )
    .map_err(|e| e.to_string())?;
    let pipe = Pipeline::new(
        &backend,
        &model,
        &bank,
        HardFilter::new(FilterMode::Always),
        RLConfig::default(),
    )
    .map_err(|e| e.to_string())?;

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut agree = 0;
    let mut landscapes = [0usize; 3];
    for case in 0..100u64 {
        // Four distinct intensities: the baseline pixel and one per action.
        let mut pool: Vec<u8> = (0..=255).collect();
        pool.shuffle(&mut rng);
        let img = Image::new(1, 4, 1, pool[..4].to_vec()).map_err(|e| e.to_string())?;
        let brute = pipe
            .brute_force_best_action(&img)
            .map_err(|e| e.to_string())?;
        let r = pipe
            .classify_seeded(&img, None, case)
            .map_err(|e| e.to_string())?;
        let mut all = brute.metrics.clone();
        all.push(r.metric_before);
        all.sort_by(f64::total_cmp);
        ensure!(
            all.windows(2).all(|w| w[0] != w[1]),
            "case {case}: metrics not distinct"
        );
        let oracle = compute_reward(r.metric_before, brute.metrics[brute.best]).unwrap();
        let chosen = compute_reward(r.metric_before, r.metric_after).unwrap();
        landscapes[(i8::from(oracle) + 1) as usize] += 1;
        if chosen == oracle {
            agree += 1;
        }
    }
    ensure!(agree == 100, "{agree}/100 agree");
    Ok(format!(
        "100/100 agree (best reward -1/0/+1: {landscapes:?})"
    ))
}

fn reference_rotate(img: &Image, degrees: f64) -> Vec<f64> {
    let (h, w) = (img.height(), img.width());
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let theta = degrees.to_radians();
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let (mx, my) = (x as f64 - cx, cy - y as f64);
            let (r, phi) = (mx.hypot(my), my.atan2(mx) - theta);
            let (sx, sy) = (cx + r * phi.cos(), cy - r * phi.sin());
            let mut acc = 0.0;
            for yy in (sy.floor() as i64 - 1)..=(sy.ceil() as i64 + 1) {
                for xx in (sx.floor() as i64 - 1)..=(sx.ceil() as i64 + 1) {
                    if yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
                        continue;
                    }
                    let k = (1.0 - (sx - xx as f64).abs()).max(0.0)
                        * (1.0 - (sy - yy as f64).abs()).max(0.0);
                    acc += k * img.get(yy as usize, xx as usize, 0) as f64;
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn transform_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let err = |e: qrefine::Error| e.to_string();
    for i in 0..10 {
        let n = 6 + 5 * i;
        let channels = if i % 2 == 0 { 1 } else { 3 };
        let img = Image::from_fn(n, n, channels, |_, _, _| rng.random()).map_err(err)?;
        let mut four = img.clone();
        for _ in 0..4 {
            four = ActionSpec::rotate(90.0).apply(&four).map_err(err)?;
        }
        ensure!(four == img, "90 x 4 not identity on image {i}");
        let half = ActionSpec::rotate(180.0).apply(&img).map_err(err)?;
        ensure!(
            ActionSpec::rotate(180.0).apply(&half).map_err(err)? == img,
            "180 x 2 not identity on image {i}"
        );
    }
    let img = Image::from_fn(48, 48, 1, |_, _, _| rng.random()).map_err(err)?;
    let ours = ActionSpec::rotate(12.5).apply(&img).map_err(err)?;
    let reference = reference_rotate(&img, 12.5);
    let (mut within, mut interior) = (0, 0);
    for y in 1..47 {
        for x in 1..47 {
            interior += 1;
            within += ((ours.get(y, x, 0) as f64 - reference[y * 48 + x]).abs() <= 1.0) as usize;
        }
    }
    let share = within as f64 / interior as f64;
    ensure!(
        share >= 0.99,
        "12.5 deg: {share:.4} of interior pixels within 1"
    );
    Ok(format!(
        "10/10 images exact; 12.5 deg {:.2}% within 1",
        100.0 * share
    ))
}

fn classifier_numerics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h = 1e-5;
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let dim = rng.random_range(1..=8);
        let n = rng.random_range(2..=4);
        let head = SoftmaxHead::from_parts(
            dim,
            n,
            (0..dim * n).map(|_| rng.random_range(-1.0..1.0)).collect(),
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .map_err(|e| e.to_string())?;
        let xs: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let batch: Vec<(&[f64], usize)> = xs
            .iter()
            .map(|x| (x.as_slice(), rng.random_range(0..n)))
            .collect();
        let (_, grad) = head.loss_and_gradient(&batch);
        for i in 0..dim * n {
            let (mut p, mut m) = (head.clone(), head.clone());
            p.weights_mut()[i] += h;
            m.weights_mut()[i] -= h;
            let fd = (p.loss_and_gradient(&batch).0 - m.loss_and_gradient(&batch).0) / (2.0 * h);
            worst = worst.max(rel(grad.weights[i], fd));
        }

        let member = LinearMember {
            w: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
            b: rng.random_range(-0.5..0.5),
        };
        let ys: Vec<f64> = (0..4)
            .map(|_| if rng.random() { 1.0 } else { -1.0 })
            .collect();
        let hinge: Vec<(&[f64], f64)> = xs
            .iter()
            .map(|x| x.as_slice())
            .zip(ys.iter().copied())
            .collect();
        if hinge
            .iter()
            .all(|(x, y)| (y * member.decision(x) - 1.0).abs() > 1e-3)
        {
            let (_, gw, _) = member.hinge_loss_and_subgradient(&hinge, 1e-2);
            for (i, &g) in gw.iter().enumerate().take(dim) {
                let (mut p, mut m) = (member.clone(), member.clone());
                p.w[i] += h;
                m.w[i] -= h;
                let fd = (p.hinge_loss_and_subgradient(&hinge, 1e-2).0
                    - m.hinge_loss_and_subgradient(&hinge, 1e-2).0)
                    / (2.0 * h);
                worst = worst.max(rel(g, fd));
            }
        }

        let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect();
        let s = head.predict_scores(&x).map_err(|e| e.to_string())?;
        ensure!(
            (s.scores.iter().sum::<f64>() - 1.0).abs() <= 1e-6,
            "softmax sum off"
        );
    }
    ensure!(worst <= 1e-4, "gradient relative error {worst:e}");

    let population_sd = |v: &[f64]| {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
    };
    for (scores, hand) in [
        (vec![0.25, 0.25, 0.25, 0.25], 0.0),
        (vec![1.0, 0.0], 0.5),
        (vec![0.7, 0.1, 0.1, 0.1], (0.27f64 / 4.0).sqrt()),
    ] {
        let got = dispersion_metric(&ScoreVector {
            scores: scores.clone(),
            kind: ScoreKind::Softmax,
        })
        .map_err(|e| e.to_string())?;
        ensure!(
            (got - hand).abs() <= 1e-9 && (got - population_sd(&scores)).abs() <= 1e-9,
            "{scores:?} -> {got}"
        );
    }
    Ok(format!(
        "worst gradient relative error {worst:.1e}; hand metrics exact"
    ))
}

fn glyph_direction() -> Outcome {
    let toy = toy_extractor();
    let bank = ActionBank::new(
        "glyph",
        vec![ActionSpec::rotate(180.0), ActionSpec::rotate(90.0)],
    )
    .map_err(|e| e.to_string())?;
    let mut lines = Vec::new();
    for seed in [1u64, 2, 3, 4, 5] {
        let spec = GlyphSpec {
            seed,
            ..GlyphSpec::default()
        };
        ensure!(
            spec.classes == 2 && spec.image_size == 64 && spec.rotated_fraction == 0.3,
            "fixture spec drifted"
        );
        let fx = GlyphFixture::generate(&spec).map_err(|e| e.to_string())?;
        let xs: Vec<FeatureVector> = fx
            .train
            .samples
            .iter()
            .map(|s| toy.extract(&s.image).unwrap())
            .collect();
        let model: Classifier = train_softmax_head(
            &xs,
            &fx.train.labels(),
            2,
            &TrainConfig {
                seed,
                ..Default::default()
            },
        )
        .map_err(|e| e.to_string())?
        .into();
        let pipe = Pipeline::new(
            &toy,
            &model,
            &bank,
            HardFilter::new(FilterMode::OracleMisclassified),
            RLConfig::default().with_seed(seed),
        )
        .map_err(|e| e.to_string())?;
        let r = pipe.evaluate(&fx.test).map_err(|e| e.to_string())?;
        let gain = r.refined_accuracy - r.baseline_accuracy;
        ensure!(
            gain >= 0.15 && r.refined_accuracy >= r.baseline_accuracy,
            "seed {seed}: baseline {:.4}, refined {:.4}",
            r.baseline_accuracy,
            r.refined_accuracy
        );
        lines.push(format!(
            "{:.3}->{:.3}",
            r.baseline_accuracy, r.refined_accuracy
        ));
    }
    Ok(format!("5/5 seeds, gain >= 0.15 ({})", lines.join(", ")))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = RunConfig {
        seed: 11,
        ..RunConfig::default()
    };
    let mut models = Vec::new();
    for (i, workers) in [(0, 1usize), (1, 4)] {
        cfg.output.model = dir.path().join(format!("model{i}.qrcm"));
        cfg.workers = Some(workers);
        qrefine_cli::with_workers(&cfg, || cmd_train(&cfg))
            .unwrap()
            .map_err(|e| format!("{e:#}"))?;
        models.push(std::fs::read(&cfg.output.model).map_err(|e| e.to_string())?);
    }
    ensure!(models[0] == models[1], "model files differ");

    let mut reports = Vec::new();
    for workers in [1usize, 4] {
        cfg.output.report = dir.path().join("report.json");
        cfg.output.trace = Some(dir.path().join("trace.jsonl"));
        cfg.output.samples = true;
        cfg.workers = Some(workers);
        qrefine_cli::with_workers(&cfg, || cmd_eval(&cfg))
            .unwrap()
            .map_err(|e| format!("{e:#}"))?;
        reports.push((
            std::fs::read(&cfg.output.report).map_err(|e| e.to_string())?,
            std::fs::read(cfg.output.trace.as_ref().unwrap()).map_err(|e| e.to_string())?,
        ));
    }
    ensure!(reports[0].0 == reports[1].0, "reports differ");
    ensure!(reports[0].1 == reports[1].1, "traces differ");
    Ok(format!(
        "model {} bytes and report {} bytes identical across runs",
        models[0].len(),
        reports[0].0.len()
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("reward table", reward_table),
        ("update arithmetic", update_arithmetic),
        ("episode schedule", episode_schedule),
        ("oracle agreement", oracle_agreement),
        ("transform exactness", transform_exactness),
        ("classifier numerics", classifier_numerics),
        ("glyph refinement direction", glyph_direction),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let started = std::time::Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.2}s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why} [{secs:.2}s]");
            }
        }
    }
    println!("acceptance: {}/{} criteria passed", 8 - failed, 8);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
