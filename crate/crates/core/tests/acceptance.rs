//! End-to-end acceptance checks. Each test prints a single `[PASS]` or
//! `[FAIL]` line (run with `--nocapture` to see them) before asserting.

use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::Instant;

use d2q::data::{Dataset, InteractionRecord};
use d2q::distribution::fit_ecdf;
use d2q::harness::{cmd_sweep, RunConfig, SweepResult};
use d2q::metrics::{mae, xauc_exact, xauc_sampled, xgauc};
use d2q::model::{backward, batch_loss, Architecture, Batch, HeadTarget, LossKind, ModelConfig, NetParams, OutputHead};
use d2q::predictors::{
    backdoor_estimate, backdoor_with_predictor, make_wlr_labels, train_predictor, wlr_adapted, MethodKind,
};
use d2q::synthgen::{make_toy_world, ToyWorldSpec};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(id: u32, name: &str, ok: bool, detail: String) {
    println!("[{}] criterion {id} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
}

struct Sweep {
    result: SweepResult,
    seconds: f64,
}

fn default_sweep() -> &'static Sweep {
    static SWEEP: OnceLock<Sweep> = OnceLock::new();
    SWEEP.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let config = RunConfig {
            output_dir: dir.path().to_path_buf(),
            ..RunConfig::default()
        };
        let t = Instant::now();
        let result = cmd_sweep(&config).unwrap();
        let seconds = t.elapsed().as_secs_f64();
        for s in result.summary() {
            println!(
                "  {:7} m={:3} seeds={} xgauc={:.4} (sd {:.4}) mae={:.3} spread={:.3}",
                s.method.name(),
                s.m,
                s.seeds,
                s.xgauc,
                s.xgauc_sd,
                s.mae,
                s.mae_spread
            );
        }
        Sweep { result, seconds }
    })
}

#[test]
fn c1_method_ordering() {
    let s = default_sweep();
    let r = &s.result;
    let d2q = r.best_m(MethodKind::D2q).unwrap();
    let res = r.best_m(MethodKind::Resd2q).unwrap();
    let wlr = r.best_m(MethodKind::Wlr).unwrap();
    let vr = r.best_m(MethodKind::Vr).unwrap();
    let gap = 0.005;
    let checks = [
        ("D2Q > WLR", d2q.xgauc - wlr.xgauc > gap),
        ("WLR > VR", wlr.xgauc - vr.xgauc > gap),
        ("Res-D2Q >= D2Q", res.xgauc - d2q.xgauc > gap),
    ];
    let summary = r.summary();
    let wlr_worst_mae = summary
        .iter()
        .filter(|c| c.method != MethodKind::Wlr)
        .all(|c| c.mae < wlr.mae);
    let budget = s.seconds < 20.0 * 60.0;
    let ok = checks.iter().all(|c| c.1) && wlr_worst_mae && budget;
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    report(
        1,
        "ordering",
        ok,
        format!(
            "xgauc D2Q(m={}) {:.4}, Res-D2Q(m={}) {:.4}, WLR {:.4}, VR {:.4}; WLR mae {:.3} worst={wlr_worst_mae}; \
             {:.0}s; failed gaps {failed:?}",
            d2q.m, d2q.xgauc, res.m, res.xgauc, wlr.xgauc, vr.xgauc, wlr.mae, s.seconds
        ),
    );
    assert!(ok);
}

#[test]
fn c2_group_count_curve() {
    let r = &default_sweep().result;
    let curve: Vec<(usize, f64)> = r
        .summary()
        .into_iter()
        .filter(|c| c.method == MethodKind::D2q)
        .map(|c| (c.m, c.xgauc))
        .collect();
    let at = |m: usize| curve.iter().find(|c| c.0 == m).map(|c| c.1).unwrap();
    let best = r.best_m(MethodKind::D2q).unwrap();
    let improves = curve.iter().any(|&(m, x)| m > 1 && x > at(1));
    let drops = at(256) < best.xgauc;
    let ok = improves && drops && best.m != 256;
    let pts: Vec<String> = curve.iter().map(|(m, x)| format!("{m}:{x:.4}")).collect();
    report(
        2,
        "xgauc vs m",
        ok,
        format!(
            "[{}] best m={} improves={improves} drops={drops}",
            pts.join(" "),
            best.m
        ),
    );
    assert!(ok);
}

#[test]
fn c3_backdoor_oracle() {
    let durations = vec![10.0, 30.0, 60.0];
    let p_duration = vec![0.4, 0.35, 0.25];
    let (nu, nv, nd) = (3, 3, 3);
    let mut expected = Vec::new();
    for u in 0..nu {
        for v in 0..nv {
            for (k, d) in durations.iter().enumerate() {
                let frac = 0.15 + 0.08 * (u * 3 + v) as f64 + 0.03 * k as f64;
                expected.push(d * frac);
            }
        }
    }
    // P(V | D): long durations favour the last video.
    let exposure = vec![0.5, 0.3, 0.2, 0.3, 0.4, 0.3, 0.1, 0.3, 0.6];
    let world = make_toy_world(ToyWorldSpec {
        n_users: nu,
        n_videos: nv,
        durations: durations.clone(),
        p_duration: p_duration.clone(),
        expected_watch: expected.clone(),
        exposure: Some(exposure),
        relative_noise: 0.1,
    })
    .unwrap();

    let mut exact = true;
    for u in 0..nu {
        for v in 0..nv {
            let brute: f64 = (0..nd).map(|d| p_duration[d] * expected[(u * nv + v) * nd + d]).sum();
            exact &= backdoor_estimate(&world, u, v).unwrap() == brute;
        }
    }

    let data = world.sample(1_000_000, 11).unwrap();
    let p = train_predictor(
        MethodKind::D2q,
        &data,
        3,
        &ModelConfig {
            seed: 3,
            ..ModelConfig::desk()
        },
    )
    .unwrap();
    let mut worst: f64 = 0.0;
    for u in 0..nu {
        for v in 0..nv {
            let truth = backdoor_estimate(&world, u, v).unwrap();
            let est = backdoor_with_predictor(&p, &world, u, v).unwrap();
            worst = worst.max((est - truth).abs() / truth);
        }
    }
    let ok = exact && worst <= 0.05;
    report(
        3,
        "backdoor",
        ok,
        format!("enumeration exact={exact}, worst relative error {worst:.4}"),
    );
    assert!(ok);
}

#[test]
fn c4_duration_debiasing() {
    let r = &default_sweep().result;
    let d2q = r.best_m(MethodKind::D2q).unwrap();
    let wlr = r.best_m(MethodKind::Wlr).unwrap();
    let ok = d2q.mae_spread < wlr.mae_spread;
    report(
        4,
        "per-group mae spread",
        ok,
        format!("D2Q(m={}) {:.3} vs WLR {:.3}", d2q.m, d2q.mae_spread, wlr.mae_spread),
    );
    assert!(ok);
}

/// Exponential(1/50) CDF.
fn exp_cdf(x: f64) -> f64 {
    1.0 - (-x / 50.0).exp()
}

fn ks_gap(n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<f64> = (0..n).map(|_| -50.0 * (1.0 - rng.gen::<f64>()).ln()).collect();
    let e = fit_ecdf(&xs).unwrap();
    let nf = n as f64;
    e.sorted_values()
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = exp_cdf(x);
            (f - i as f64 / nf).abs().max((f - (i + 1) as f64 / nf).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn c5_ecdf_suite() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let values: Vec<f64> = (0..5000).map(|_| rng.gen_range(0.0..1000.0)).collect();
    let e = fit_ecdf(&values).unwrap();
    let roundtrip = e.sorted_values().iter().all(|&x| e.inverse(e.label(x)).unwrap() == x);

    let mut runner = TestRunner::new(Config {
        cases: 10_000,
        ..Config::default()
    });
    let monotone = runner
        .run(
            &(
                prop::collection::vec(0.0f64..500.0, 1..100),
                -10.0f64..600.0,
                -10.0f64..600.0,
                0.0f64..=1.0,
                0.0f64..=1.0,
            ),
            |(vals, a, b, q1, q2)| {
                let e = fit_ecdf(&vals).unwrap();
                let (lo, hi) = (a.min(b), a.max(b));
                prop_assert!(e.label(lo) <= e.label(hi));
                let (ql, qh) = (q1.min(q2), q1.max(q2));
                prop_assert!(e.inverse(ql).unwrap() <= e.inverse(qh).unwrap());
                Ok(())
            },
        )
        .is_ok();

    let gaps: Vec<(f64, f64)> = (0..5).map(|s| (ks_gap(100, s), ks_gap(10_000, s))).collect();
    let converges = gaps.iter().all(|(small, big)| big < small);
    let ok = roundtrip && monotone && converges;
    let shown: Vec<String> = gaps.iter().map(|(a, b)| format!("{a:.3}->{b:.4}")).collect();
    report(
        5,
        "ecdf",
        ok,
        format!(
            "roundtrip={roundtrip} monotone(1e4)={monotone} ks [{}]",
            shown.join(" ")
        ),
    );
    assert!(ok);
}

fn grad_config(tower: Option<Vec<usize>>, head: OutputHead) -> ModelConfig {
    ModelConfig {
        dense_embed_dim: 2,
        id_embed_total_dim: 4,
        duration_embed_dim: 2,
        projection_out_dim: 5,
        mlp_dims: vec![4, 3],
        output_head: head,
        duration_tower: tower,
        ..ModelConfig::desk()
    }
}

fn grad_batch(n: usize, heads: usize, loss: LossKind, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Batch {
        dense: (0..n * 2).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        ids: (0..n)
            .flat_map(|_| [rng.gen_range(0..3u32), rng.gen_range(0..4u32)])
            .collect(),
        duration: (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect(),
        targets: Vec::new(),
    };
    for _ in 0..heads {
        let labels = match loss {
            LossKind::Mse => (0..n).map(|_| rng.gen_range(0.0..1.0)).collect(),
            LossKind::WeightedLogLoss => (0..n).map(|_| f64::from(rng.gen_bool(0.5))).collect(),
        };
        let weights = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
        b.targets.push(HeadTarget { loss, labels, weights });
    }
    b
}

#[test]
fn c6_gradient_check() {
    let t = Instant::now();
    let cases = [
        ("vr linear", grad_config(None, OutputHead::Linear), 1, LossKind::Mse),
        ("d2q sigmoid", grad_config(None, OutputHead::Sigmoid), 1, LossKind::Mse),
        (
            "res-d2q tower",
            grad_config(Some(vec![3, 2]), OutputHead::Sigmoid),
            1,
            LossKind::Mse,
        ),
        (
            "wlr two heads",
            grad_config(None, OutputHead::Sigmoid),
            2,
            LossKind::WeightedLogLoss,
        ),
    ];
    let mut worst: Vec<(&str, f64)> = Vec::new();
    for (i, (name, c, heads, loss)) in cases.iter().enumerate() {
        let arch = Architecture::new(c, 2, &[3, 4], *heads).unwrap();
        let p = NetParams::init(&arch, 40 + i as u64);
        let b = grad_batch(7, *heads, *loss, 90 + i as u64);
        let g = backward(&p, &b).unwrap().to_flat();
        let flat = p.to_flat();
        let h = 1e-5;
        let mut err: f64 = 0.0;
        for j in 0..flat.len() {
            let mut up = flat.clone();
            up[j] += h;
            let mut down = flat.clone();
            down[j] -= h;
            let lu = batch_loss(&NetParams::from_flat(&arch, &up).unwrap(), &b).unwrap();
            let ld = batch_loss(&NetParams::from_flat(&arch, &down).unwrap(), &b).unwrap();
            let num = (lu - ld) / (2.0 * h);
            err = err.max((num - g[j]).abs() / num.abs().max(g[j].abs()).max(1e-6));
        }
        worst.push((name, err));
    }
    let secs = t.elapsed().as_secs_f64();
    let ok = worst.iter().all(|w| w.1 <= 1e-4) && secs < 60.0;
    let shown: Vec<String> = worst.iter().map(|(n, e)| format!("{n} {e:.2e}")).collect();
    report(6, "gradients", ok, format!("[{}] in {secs:.1}s", shown.join(", ")));
    assert!(ok);
}

#[test]
fn c7_metric_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for inst in 0..20 {
        let truth: Vec<f64> = (0..200).map(|_| rng.gen_range(0.0f64..60.0).round()).collect();
        let pred: Vec<f64> = truth.iter().map(|t| t + rng.gen_range(-20.0..20.0)).collect();
        let exact = xauc_exact(&pred, &truth).unwrap();
        let sampled = xauc_sampled(&pred, &truth, 1_000_000, inst).unwrap();
        worst = worst.max((exact - sampled).abs());
    }

    // Two users of two records each, one perfectly ordered and one reversed.
    let half = xgauc(&[1.0, 2.0, 2.0, 1.0], &[1.0, 2.0, 1.0, 2.0], &[1, 1, 2, 2]).unwrap();
    // Six records at 1.0 and two at 0.0: (6 * 1 + 2 * 0) / 8.
    let users = [1, 1, 1, 1, 1, 1, 2, 2];
    let truth = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 1.0, 2.0];
    let pred = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 2.0, 1.0];
    let weighted = xgauc(&pred, &truth, &users).unwrap();
    let hand = half == 0.5 && weighted == 0.75;

    let a: Vec<f64> = (0..1000).map(|_| rng.gen_range(0.0..300.0)).collect();
    let b: Vec<f64> = (0..1000).map(|_| rng.gen_range(0.0..300.0)).collect();
    let mut sum = 0.0;
    for (x, y) in a.iter().zip(&b) {
        sum += (x - y).abs();
    }
    let naive = sum / a.len() as f64;
    let mae_diff = (mae(&a, &b).unwrap() - naive).abs();

    let ok = worst <= 0.01 && hand && mae_diff <= 1e-12;
    report(
        7,
        "metrics",
        ok,
        format!("max |sampled-exact| {worst:.4}; xgauc {half} / {weighted}; mae diff {mae_diff:.1e}"),
    );
    assert!(ok);
}

fn continuous_dataset(watch: &[f64]) -> Dataset {
    let records = watch
        .iter()
        .enumerate()
        .map(|(i, &w)| InteractionRecord {
            user_id: (i % 50) as u64,
            video_id: i as u64,
            duration: 400.0,
            watch_time: w,
            dense_features: vec![],
            id_features: vec![],
        })
        .collect();
    Dataset::with_inferred_schema(records).unwrap()
}

#[test]
fn c8_wlr_formulas() {
    let spot = wlr_adapted(0.5, 0.4) == 0.6 && wlr_adapted(0.75, 0.0) == 3.0;

    // Ten values 1..10: the 0.6 quantile of the mid-rank ECDF sits between
    // the 6th (0.55) and 7th (0.65) order statistics, so 7..10 are positive.
    let ranks = make_wlr_labels(&continuous_dataset(&(1..=10).map(f64::from).collect::<Vec<_>>())).unwrap();
    let rank_ok = ranks.threshold == 6.5 && ranks.labels == [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0];

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let watch: Vec<f64> = (0..100_000).map(|_| rng.gen_range(0.0..400.0)).collect();
    let l = make_wlr_labels(&continuous_dataset(&watch)).unwrap();
    let frac = l.labels.iter().sum::<f64>() / l.labels.len() as f64;
    let frac_ok = (frac - 0.4).abs() <= 0.02;

    let ok = spot && rank_ok && frac_ok;
    report(
        8,
        "wlr",
        ok,
        format!("spot={spot} ranks={rank_ok} positive fraction {frac:.4}"),
    );
    assert!(ok);
}

fn small_config(dir: &std::path::Path, record_wall_time: bool) -> RunConfig {
    let mut c = RunConfig {
        output_dir: dir.to_path_buf(),
        train_size: 6000,
        test_size: 2000,
        seeds: vec![1, 2],
        group_counts: vec![1, 4],
        record_wall_time,
        ..RunConfig::default()
    };
    c.gen.n_users = 40;
    c.gen.n_videos = 200;
    c.model.epochs = 1;
    c
}

#[test]
fn c9_determinism() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let read = |d: &std::path::Path| std::fs::read(d.join("results.csv")).unwrap();

    let ca = small_config(a.path(), true);
    cmd_sweep(&ca).unwrap();
    let first = read(a.path());
    cmd_sweep(&ca).unwrap();
    let same_dir = read(a.path()) == first;

    let fixed_a = tempfile::tempdir().unwrap();
    cmd_sweep(&small_config(fixed_a.path(), false)).unwrap();
    cmd_sweep(&small_config(b.path(), false)).unwrap();
    let fresh = read(fixed_a.path()) == read(b.path());

    let mut per_method: BTreeMap<String, usize> = BTreeMap::new();
    for line in String::from_utf8(first).unwrap().lines().skip(1) {
        *per_method
            .entry(line.split(',').next().unwrap().to_string())
            .or_default() += 1;
    }
    let ok = same_dir && fresh;
    report(
        9,
        "determinism",
        ok,
        format!("rerun identical={same_dir}, fresh dirs identical={fresh}, rows {per_method:?}"),
    );
    assert!(ok);
}
