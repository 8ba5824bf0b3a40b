//! Acceptance gate: one PASS/FAIL line per criterion, each checked against
//! its runtime budget. Exits nonzero if any criterion fails.

use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use crest::config::RunConfig;
use crest::run::{execute, METRICS_FILE};
use crest_core::crest::{sampling_rates, select_pseudo_labeled, GenerationReport};
use crest_core::data::build_longtail_profile;
use crest_core::metrics::{confusion, mean_recall, per_class_precision_recall};
use crest_core::model::{grad_check, init_model, Target};
use crest_core::rebalance::{align, scaled_target, temperature_schedule, MarginalState, TargetDistribution};
use crest_core::rng::SeedTree;
use crest_core::ssl::PseudoLabel;
use rand::{Rng, RngCore};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn rng(label: &str) -> impl RngCore {
    SeedTree::new(20240611).child(label).stream()
}

fn random_simplex(r: &mut impl RngCore, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| r.random_range(1e-3..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

fn sampling_rate_formula() -> Check {
    let cifar = build_longtail_profile(10, 100.0, 5000).map_err(|e| e.to_string())?;
    for &alpha in &[0.0, 1.0 / 3.0, 0.5, 1.0, 2.0] {
        let mu = sampling_rates(&cifar, alpha);
        ensure(rel_err(mu[9], 1.0) <= 1e-12, || {
            format!("mu_L = {} for alpha {alpha}", mu[9])
        })?;
        if alpha == 0.0 {
            ensure(mu.iter().all(|&m| m == 1.0), || format!("alpha 0 gave {mu:?}"))?;
        }
    }
    let mu = sampling_rates(&cifar, 1.0 / 3.0);
    let expected = 0.01_f64.cbrt();
    ensure(rel_err(mu[0], expected) <= 1e-12, || {
        format!("mu_1 = {}, want {expected}", mu[0])
    })?;
    ensure((mu[0] - 0.2154).abs() < 5e-5, || format!("mu_1 = {}", mu[0]))?;
    for l in 0..10 {
        let want = (cifar.counts()[9 - l] as f64 / 5000.0).powf(1.0 / 3.0);
        ensure(rel_err(mu[l], want) <= 1e-12, || {
            format!("mu_{} = {}, want {want}", l + 1, mu[l])
        })?;
    }
    Ok(format!("mu_1 = {:.6}", mu[0]))
}

fn temperature_formula() -> Check {
    for &last in &[1usize, 2, 3, 5, 8, 10] {
        for &t_min in &[0.0, 0.25, 0.5, 0.9, 1.0] {
            let ts: Vec<f64> = (0..=last)
                .map(|g| temperature_schedule(g, last, t_min))
                .collect::<Result<_, _>>()
                .map_err(|e| e.to_string())?;
            ensure(ts[0] == 1.0, || format!("t_0 = {} (G={last})", ts[0]))?;
            ensure(ts[last] == t_min, || format!("t_G = {} want {t_min}", ts[last]))?;
            let step = -(1.0 - t_min) / last as f64;
            for w in ts.windows(2) {
                ensure((w[1] - w[0] - step).abs() <= 1e-15, || {
                    format!("increment {} want {step} (G={last}, t_min={t_min})", w[1] - w[0])
                })?;
            }
        }
    }
    let t = temperature_schedule(2, 5, 0.5).map_err(|e| e.to_string())?;
    ensure((t - 0.8).abs() <= 1e-15, || format!("t_2 = {t}"))?;
    ensure(temperature_schedule(6, 5, 0.5).is_err(), || "g > G accepted".into())?;
    Ok("36 schedules".into())
}

fn alignment_suite() -> Check {
    let mut r = rng("alignment");
    // Target equal to the running marginal cancels.
    for _ in 0..100 {
        let q = random_simplex(&mut r, 5);
        let p = random_simplex(&mut r, 5);
        let state = MarginalState::from_probs(p.clone(), 0.99).map_err(|e| e.to_string())?;
        let target = TargetDistribution::fixed(state.probs().to_vec()).map_err(|e| e.to_string())?;
        let out = align(&q, &target, &state);
        for (a, b) in out.iter().zip(&q) {
            ensure(rel_err(*a, *b) <= 1e-12, || format!("identity: {out:?} vs {q:?}"))?;
        }
    }
    let uniform = scaled_target(&[0.7, 0.2, 0.08, 0.02], 0.0).map_err(|e| e.to_string())?;
    ensure(uniform.iter().all(|&v| (v - 0.25).abs() <= 1e-15), || {
        format!("t=0 gave {uniform:?}")
    })?;

    let state = MarginalState::from_probs(vec![0.6, 0.4], 0.99).map_err(|e| e.to_string())?;
    let target = TargetDistribution::fixed(vec![0.5, 0.5]).map_err(|e| e.to_string())?;
    let out = align(&[0.8, 0.2], &target, &state);
    ensure(
        (out[0] - 0.7273).abs() <= 1e-4 && (out[1] - 0.2727).abs() <= 1e-4,
        || format!("hand example gave {out:?}"),
    )?;

    for i in 0..10_000 {
        let n = 2 + i % 9;
        let q = random_simplex(&mut r, n);
        let p = random_simplex(&mut r, n);
        let marginal = random_simplex(&mut r, n);
        let t: f64 = r.random_range(0.0..=1.0);
        let state = MarginalState::from_probs(marginal, 0.99).map_err(|e| e.to_string())?;
        let target = TargetDistribution::new(p, t).map_err(|e| e.to_string())?;
        let out = align(&q, &target, &state);
        let s: f64 = out.iter().sum();
        ensure(
            (s - 1.0).abs() <= 1e-9 && out.iter().all(|v| v.is_finite() && *v >= 0.0),
            || format!("off simplex: {out:?}"),
        )?;
    }
    Ok("10000 random inputs".into())
}

fn longtail_construction() -> Check {
    let p = build_longtail_profile(10, 100.0, 5000).map_err(|e| e.to_string())?;
    let c = p.counts();
    ensure(c[0] == 5000 && c[9] == 50, || format!("endpoints {c:?}"))?;
    ensure(c.windows(2).all(|w| w[0] >= w[1]), || format!("not monotone {c:?}"))?;
    let u = build_longtail_profile(10, 1.0, 5000).map_err(|e| e.to_string())?;
    ensure(u.counts().iter().all(|&n| n == 5000), || {
        format!("gamma 1 gave {:?}", u.counts())
    })?;
    Ok(format!("{c:?}"))
}

fn gradient_check() -> Check {
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let model = init_model(3, 4, 3, seed).map_err(|e| e.to_string())?;
        let mut r = SeedTree::new(seed).child("grad-batch").stream();
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..3).map(|_| r.random_range(-2.0..2.0)).collect())
            .collect();
        let targets: Vec<Target> = (0..6)
            .map(|i| {
                if i % 2 == 0 {
                    Target::Hard(r.random_range(0..3))
                } else {
                    Target::Soft(random_simplex(&mut r, 3))
                }
            })
            .collect();
        let weights: Vec<f64> = (0..6).map(|_| r.random_range(0.1..2.0)).collect();
        let err = grad_check(&model, &rows, &targets, &weights).map_err(|e| e.to_string())?;
        worst = worst.max(err);
        ensure(err < 1e-4, || format!("seed {seed}: relative error {err:e}"))?;
    }
    Ok(format!("worst relative error {worst:.2e}"))
}

fn selection_oracle() -> Check {
    let mut r = rng("selection");
    for case in 0..200 {
        let classes = r.random_range(1..=5);
        let n = r.random_range(0..=100);
        // Coarse confidences force ties.
        let pls: Vec<PseudoLabel> = (0..n)
            .map(|i| PseudoLabel {
                index: i,
                label: r.random_range(0..classes),
                confidence: r.random_range(0..20) as f64 / 20.0,
                distribution: Vec::new(),
            })
            .collect();
        let rates: Vec<f64> = (0..classes).map(|_| r.random_range(0.0..=1.0)).collect();
        let got = select_pseudo_labeled(&pls, &rates).map_err(|e| e.to_string())?;

        let mut expected = Vec::new();
        for (class, &mu) in rates.iter().enumerate() {
            let members: Vec<&PseudoLabel> = pls.iter().filter(|p| p.label == class).collect();
            let want = members.len() as f64 * mu;
            let mut k = 0;
            while (k as f64) < want - 1e-9 {
                k += 1;
            }
            if !members.is_empty() && mu > 0.0 {
                k = k.max(1);
            }
            for p in &members {
                let ahead = members
                    .iter()
                    .filter(|o| o.confidence > p.confidence || (o.confidence == p.confidence && o.index < p.index))
                    .count();
                if ahead < k {
                    expected.push(p.index);
                }
            }
        }
        expected.sort_unstable();
        let chosen: Vec<usize> = got.chosen.iter().map(|p| p.index).collect();
        ensure(chosen == expected, || {
            format!("case {case}: got {chosen:?}, want {expected:?}")
        })?;
    }
    Ok("200 sets".into())
}

fn run_config(text: &str) -> Result<(Vec<GenerationReport>, String), String> {
    let cfg = RunConfig::parse(text).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let outcome = execute(&cfg, dir.path()).map_err(|e| e.to_string())?;
    let csv = fs::read_to_string(dir.path().join(METRICS_FILE)).map_err(|e| e.to_string())?;
    Ok((outcome.reports, csv))
}

fn degenerate_equivalence() -> Check {
    let cfg = r#"{
        "schema_version": 1,
        "dataset": {"synthetic": {"num_classes": 4, "gamma": 10, "n1": 60, "dim": 6,
            "separation": 4.0, "noise_sigma": 1.0, "seed": 4, "test_per_class": 20}},
        "beta": 0.2, "mode": "crest", "seed": 4, "output_dir": "unused",
        "crest": {"alpha": 0.0, "last_generation": 3, "ssl": {"steps": 60, "hidden": 16}}
    }"#;
    let parsed = RunConfig::parse(cfg).map_err(|e| e.to_string())?;
    let (split, _) = parsed.materialize().map_err(|e| e.to_string())?;
    let (reports, _) = run_config(cfg)?;
    let u = split.unlabeled.len();
    for r in &reports {
        ensure(!r.alignment, || "alignment was on".into())?;
        ensure(r.selected_total == u, || {
            format!("generation {}: |S| = {} of {u}", r.generation, r.selected_total)
        })?;
        let want = split.labeled.len() + if r.generation == 0 { 0 } else { u };
        ensure(r.labeled_size == want, || {
            format!("generation {}: |X'| = {}", r.generation, r.labeled_size)
        })?;
    }
    Ok(format!("{} generations, |U| = {u}", reports.len()))
}

const SEEDS: [u64; 3] = [1, 2, 3];

fn synthetic_config(seed: u64, mode: &str, last_generation: usize) -> String {
    format!(
        r#"{{
        "schema_version": 1,
        "dataset": {{"synthetic": {{"num_classes": 10, "gamma": 100, "n1": 500, "dim": 16,
            "separation": 4.0, "noise_sigma": 1.0, "seed": {seed}, "test_per_class": 100}}}},
        "beta": 0.1, "mode": "{mode}", "seed": {seed}, "output_dir": "unused",
        "crest": {{"last_generation": {last_generation}}}
    }}"#
    )
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

struct Baseline {
    sizes: Vec<f64>,
    report: GenerationReport,
}

fn baseline_runs() -> Result<Vec<Baseline>, String> {
    SEEDS
        .iter()
        .map(|&seed| {
            let text = synthetic_config(seed, "baseline", 0);
            let cfg = RunConfig::parse(&text).map_err(|e| e.to_string())?;
            let (split, _) = cfg.materialize().map_err(|e| e.to_string())?;
            let sizes = split.labeled.class_counts().iter().map(|&c| c as f64).collect();
            let (mut reports, _) = run_config(&text)?;
            Ok(Baseline {
                sizes,
                report: reports.remove(0),
            })
        })
        .collect()
}

fn bias_reproduction(runs: &[Baseline]) -> Check {
    let mut rec = Vec::new();
    let mut prec = Vec::new();
    for b in runs {
        let t = &b.report.test;
        rec.push(spearman(&b.sizes, &t.recall));
        // Classes that are never predicted have no precision.
        let (sizes, precision): (Vec<f64>, Vec<f64>) = b
            .sizes
            .iter()
            .zip(&t.precision)
            .zip(&t.precision_defined)
            .filter(|(_, &d)| d)
            .map(|((&s, &p), _)| (s, p))
            .unzip();
        prec.push(spearman(&sizes, &precision));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (r, p) = (mean(&rec), mean(&prec));
    let detail = format!("recall rho {r:.3} {rec:.3?}, precision rho {p:.3} {prec:.3?}");
    ensure(r > 0.0 && p < 0.0, || detail.clone())?;
    Ok(detail)
}

fn minority_half(recall: &[f64]) -> f64 {
    let half = &recall[recall.len() / 2..];
    half.iter().sum::<f64>() / half.len() as f64
}

fn improvement_trend(baselines: &[Baseline]) -> Check {
    let mut gains = Vec::new();
    let mut minority = Vec::new();
    let mut own_gen0 = Vec::new();
    for (b, &seed) in baselines.iter().zip(&SEEDS) {
        let (reports, _) = run_config(&synthetic_config(seed, "crest_plus", 2))?;
        let last = reports.last().ok_or("no generations")?;
        gains.push(last.test_mean_recall - b.report.test_mean_recall);
        minority.push((minority_half(&b.report.test.recall), minority_half(&last.test.recall)));
        own_gen0.push(reports[0].test_mean_recall);
    }
    let n = gains.len() as f64;
    let gain = gains.iter().sum::<f64>() / n;
    let before = minority.iter().map(|m| m.0).sum::<f64>() / n;
    let after = minority.iter().map(|m| m.1).sum::<f64>() / n;
    let detail = format!(
        "mean recall gain {gain:+.4} {gains:.4?}; minority half {before:.4} -> {after:.4}; CReST+ gen-0 {own_gen0:.4?}"
    );
    ensure(gain >= 0.02 && after > before, || detail.clone())?;
    Ok(detail)
}

fn determinism() -> Check {
    let text = synthetic_config(7, "crest_plus", 1).replace(
        r#""last_generation": 1"#,
        r#""last_generation": 1, "ssl": {"steps": 300}"#,
    );
    let (_, a) = run_config(&text)?;
    let (_, b) = run_config(&text)?;
    ensure(a == b, || "metrics.csv differs between runs".into())?;
    Ok(format!("{} bytes identical", a.len()))
}

fn metrics_oracle() -> Check {
    let mut r = rng("metrics");
    for case in 0..100 {
        let classes = r.random_range(2..=6);
        let n = r.random_range(1..=60);
        let truths: Vec<usize> = (0..n).map(|_| r.random_range(0..classes)).collect();
        let preds: Vec<usize> = (0..n).map(|_| r.random_range(0..classes)).collect();
        let cm = confusion(&preds, &truths, classes).map_err(|e| e.to_string())?;
        let pr = per_class_precision_recall(&cm);
        for c in 0..classes {
            for p in 0..classes {
                let count = (0..n).filter(|&i| truths[i] == c && preds[i] == p).count() as u64;
                ensure(cm.get(c, p) == count, || format!("case {case}: cell ({c},{p})"))?;
            }
            let tp = (0..n).filter(|&i| truths[i] == c && preds[i] == c).count() as f64;
            let support = truths.iter().filter(|&&t| t == c).count() as f64;
            let predicted = preds.iter().filter(|&&p| p == c).count() as f64;
            let want_p = if predicted > 0.0 { tp / predicted } else { 0.0 };
            let want_r = if support > 0.0 { tp / support } else { 0.0 };
            ensure(pr.precision[c] == want_p, || format!("case {case}: precision[{c}]"))?;
            ensure(pr.recall[c] == want_r, || format!("case {case}: recall[{c}]"))?;
        }
        let all_present = (0..classes).all(|c| truths.contains(&c));
        match mean_recall(&cm) {
            Ok(m) => {
                ensure(all_present, || format!("case {case}: mean recall with a missing class"))?;
                let want = pr.recall.iter().sum::<f64>() / classes as f64;
                ensure((m - want).abs() <= 1e-15, || {
                    format!("case {case}: mean recall {m} vs {want}")
                })?;
            }
            Err(_) => ensure(!all_present, || format!("case {case}: mean recall refused"))?,
        }
    }
    Ok("100 prediction sets".into())
}

fn main() -> ExitCode {
    let mut failures = 0;
    let mut record = |name: &str, budget: Duration, f: &mut dyn FnMut() -> Check| {
        let start = Instant::now();
        let result = f();
        let elapsed = start.elapsed();
        let result = match result {
            Ok(d) if elapsed > budget => Err(format!("{d}; exceeded {budget:?}")),
            other => other,
        };
        let (status, detail) = match &result {
            Ok(d) => ("PASS", d.as_str()),
            Err(d) => ("FAIL", d.as_str()),
        };
        println!("{status} {name} [{:.2}s] {detail}", elapsed.as_secs_f64());
        if result.is_err() {
            failures += 1;
        }
    };
    let s = Duration::from_secs;
    record("sampling-rate formula", s(1), &mut sampling_rate_formula);
    record("temperature schedule", s(1), &mut temperature_formula);
    record("distribution alignment", s(5), &mut alignment_suite);
    record("long-tail construction", s(1), &mut longtail_construction);
    record("gradient correctness", s(30), &mut gradient_check);
    record("selection oracle", s(10), &mut selection_oracle);
    record("degenerate equivalence", s(60), &mut degenerate_equivalence);

    // The improvement check compares against the same baseline runs.
    let mut baselines = None;
    record("bias reproduction", s(600), &mut || {
        let runs = baseline_runs()?;
        let result = bias_reproduction(&runs);
        baselines = Some(runs);
        result
    });
    record("improvement trend", s(1800), &mut || match &baselines {
        Some(b) => improvement_trend(b),
        None => Err("baseline runs unavailable".into()),
    });
    record("determinism", s(300), &mut determinism);
    record("metrics oracle", s(5), &mut metrics_oracle);

    if failures == 0 {
        println!("all acceptance criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("{failures} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
