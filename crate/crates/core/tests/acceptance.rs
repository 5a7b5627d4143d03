//! Exit criteria A1-A8. Criteria run sequentially inside one test so their
//! runtimes are measured without contention; each prints one PASS/FAIL line.

mod common;

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use fkan::data::{image_to_dataset, sdf_sphere_volume, synthetic_image};
use fkan::layers::{init_model, matched_baseline, FourierLayerParams, ModelConfig};
use fkan::metrics::{image_psnr_metric, iou, psnr, ssim, volume_iou_metric, Psnr};
use fkan::train::{auto_batch_size, Trainer};
use fkan::{count_params, Array2, Checkpoint, OccupancyVolume, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

struct Outcome {
    id: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
    limit: Duration,
}

fn run(id: &'static str, limit_secs: u64, f: impl FnOnce() -> (bool, String)) -> Outcome {
    let t = Instant::now();
    let (ok, detail) = f();
    let elapsed = t.elapsed();
    let limit = Duration::from_secs(limit_secs);
    let o = Outcome {
        id,
        pass: ok && elapsed <= limit,
        detail,
        elapsed,
        limit,
    };
    println!(
        "{} {}: {} [{:.1}s / limit {}s]",
        if o.pass { "PASS" } else { "FAIL" },
        o.id,
        o.detail,
        o.elapsed.as_secs_f64(),
        o.limit.as_secs()
    );
    o
}

/// A1: reverse-mode gradients of the L2 loss against central differences.
fn a1_gradients() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA1);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    let mut failures = 0usize;
    for trial in 0..20 {
        let d_i = rng.random_range(1..=3);
        let layers = rng.random_range(1..=2);
        let cfg = ModelConfig {
            input_dim: d_i,
            output_dim: rng.random_range(1..=2),
            latent_dim: rng.random_range(1..=8),
            grid_size: rng.random_range(1..=4),
            hidden_widths: (0..layers).map(|_| rng.random_range(1..=8)).collect(),
            omega0: 30.0,
            seed: trial,
            ..ModelConfig::default()
        };
        let model = init_model(&cfg).unwrap();
        let n = 4;
        let x = random_array(&mut rng, n, d_i, -1.0, 1.0);
        let y = random_array(&mut rng, n, cfg.output_dim, 0.0, 1.0);

        let mut tape = fkan::Tape::new();
        let xv = tape.constant(x.transpose());
        let yv = tape.constant(y.transpose());
        let rec = model.record(&mut tape, xv).unwrap();
        let loss = tape.l2_loss(rec.output, yv).unwrap();
        let grads = tape.backward(loss).unwrap();

        let fd = finite_difference_grads(&model, &x, &y, 1e-4);
        for (v, f) in rec.params.iter().zip(&fd) {
            for (&g, &e) in grads[*v].data().iter().zip(f.data()) {
                checked += 1;
                let d = (g - e).abs();
                if d > 1e-8 {
                    worst = worst.max(d / g.abs().max(e.abs()));
                }
                if !grad_close(g, e, 1e-4, 1e-8) {
                    failures += 1;
                }
            }
        }
    }
    (
        failures == 0,
        format!(
            "{checked} gradient entries, {failures} outside tolerance, worst rel err {worst:.2e}"
        ),
    )
}

/// A2: metric implementations against brute-force loops.
fn a2_metrics() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA2);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let w = rng.random_range(3..=24);
        let h = rng.random_range(3..=24);
        let c = if rng.random_bool(0.5) { 1 } else { 3 };
        let a = random_image(&mut rng, w, h, c);
        let b = random_image(&mut rng, w, h, c);
        let p = psnr(&a, &b).unwrap().db();
        worst = worst.max((p - psnr_oracle(&a, &b)).abs());
        let s = ssim(&a, &b).unwrap();
        worst = worst.max((s - ssim_oracle(&a, &b)).abs());

        let r = rng.random_range(2..=8);
        let va = random_volume(&mut rng, r, 0.4);
        let vb = random_volume(&mut rng, r, 0.4);
        worst = worst.max((iou(&va, &vb).unwrap() - iou_oracle(&va, &vb)).abs());
    }

    let img = random_image(&mut rng, 16, 16, 3);
    let mut exact = psnr(&img, &img).unwrap() == Psnr::Identical;
    exact &= ssim(&img, &img).unwrap() == 1.0;
    let vol = random_volume(&mut rng, 6, 0.3);
    exact &= iou(&vol, &vol).unwrap() == 1.0;
    let mut left = OccupancyVolume::empty(4);
    let mut right = OccupancyVolume::empty(4);
    left.set(0, 0, 0, 1.0);
    right.set(3, 3, 3, 1.0);
    exact &= iou(&left, &right).unwrap() == 0.0;

    (
        worst < 1e-9 && exact,
        format!("max |impl - oracle| = {worst:.2e} over 150 comparisons; identity/disjoint cases exact: {exact}"),
    )
}

fn desk_image_target() -> fkan::ImageBuffer {
    synthetic_image(64, 64, &[2.0, 16.0]).unwrap()
}

fn desk_model_config(input_dim: usize, output_dim: usize) -> ModelConfig {
    ModelConfig {
        input_dim,
        output_dim,
        latent_dim: 64,
        grid_size: 32,
        hidden_widths: vec![64, 64],
        omega0: 30.0,
        seed: 0,
        ..ModelConfig::default()
    }
}

fn desk_train_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 0,
        lr: 1e-4,
        seed: 0,
        metric_every: 1,
        record_wall_time: true,
    }
}

struct ImageRun {
    steps_to_35: Option<u64>,
    steps_to_30: Option<u64>,
    final_psnr: f64,
    params: usize,
    elapsed: Duration,
}

fn fit_image(cfg: &ModelConfig, steps: usize) -> ImageRun {
    let target = desk_image_target();
    let ds = image_to_dataset(&target).unwrap();
    let model = init_model(cfg).unwrap();
    let params = model.num_params();
    let t = Instant::now();
    let (_, report) = fkan::train(
        model,
        &ds,
        &desk_train_config(steps),
        image_psnr_metric(&target),
    )
    .unwrap();
    ImageRun {
        steps_to_35: report.first_step_reaching(35.0),
        steps_to_30: report.first_step_reaching(30.0),
        final_psnr: report.last().unwrap().metric,
        params,
        elapsed: t.elapsed(),
    }
}

/// A5: sphere occupancy at desk scale.
fn a5_occupancy() -> (bool, String) {
    let (vol, ds) = sdf_sphere_volume(48, 0.5).unwrap();
    let model = init_model(&desk_model_config(3, 1)).unwrap();
    let batch = auto_batch_size(ds.len());
    let cfg = TrainConfig {
        epochs: 200,
        batch_size: batch,
        metric_every: 10 * ds.len().div_ceil(batch.max(1)),
        ..desk_train_config(200)
    };
    let (trained, report) = fkan::train(model, &ds, &cfg, volume_iou_metric(&vol, 0.5)).unwrap();
    let pred = trained.predict(ds.coords()).unwrap();
    let got = iou(
        &fkan::data::predictions_to_volume(&pred, 0.5).unwrap(),
        &vol,
    )
    .unwrap();
    let steps = report.last().unwrap().step;
    (
        got >= 0.97,
        format!("IoU {got:.4} (need >= 0.97) after {steps} steps, batch {batch}"),
    )
}

/// A7: determinism of the convergence CSV and bit-exact resume.
fn a7_determinism() -> (bool, String) {
    let dir = tempfile::tempdir().unwrap();
    let target = synthetic_image(24, 24, &[1.0, 4.0]).unwrap();
    let ds = image_to_dataset(&target).unwrap();
    let mcfg = ModelConfig {
        latent_dim: 16,
        grid_size: 8,
        hidden_widths: vec![16, 16],
        output_dim: 1,
        seed: 7,
        ..ModelConfig::default()
    };
    let tcfg = TrainConfig {
        epochs: 60,
        record_wall_time: false,
        ..desk_train_config(60)
    };
    let csv = |name: &str| {
        let model = init_model(&mcfg).unwrap();
        let (_, rep) = fkan::train(model, &ds, &tcfg, image_psnr_metric(&target)).unwrap();
        let path = dir.path().join(name);
        rep.write_csv(&path).unwrap();
        std::fs::read(path).unwrap()
    };
    let same_csv = csv("a.csv") == csv("b.csv");

    // Resume through the binary checkpoint, full batch and mini-batch.
    let resume_ok = |batch_size: usize, split: u64| {
        let cfg = TrainConfig {
            batch_size,
            epochs: 6,
            ..tcfg.clone()
        };
        let mut metric = image_psnr_metric(&target);
        let mut full = Trainer::new(init_model(&mcfg).unwrap(), &ds, cfg.clone()).unwrap();
        let total = full.total_steps();
        full.run(total, &mut metric).unwrap();

        let mut first = Trainer::new(init_model(&mcfg).unwrap(), &ds, cfg.clone()).unwrap();
        first.run(split, &mut metric).unwrap();
        let ck = Checkpoint {
            train_config: Some(cfg.clone()),
            state: first.state(),
        };
        let path = dir.path().join(format!("ck_{batch_size}_{split}.fkan"));
        ck.save(&path).unwrap();
        drop(first);
        let loaded = Checkpoint::load(&path).unwrap();
        let mut second = Trainer::resume(loaded.state, &ds, cfg).unwrap();
        second.run(total, &mut metric).unwrap();

        let (m1, r1) = full.finish();
        let (m2, r2) = second.finish();
        let bits = |m: &fkan::Model| -> Vec<u64> {
            m.params()
                .iter()
                .flat_map(|p| p.data().iter().map(|v| v.to_bits()))
                .collect()
        };
        bits(&m1) == bits(&m2) && r1.to_csv() == r2.to_csv()
    };
    let full_batch = resume_ok(0, 4);
    // 576 samples in batches of 100: resume mid-epoch and on an epoch boundary
    let mini_mid = resume_ok(100, 9);
    let mini_edge = resume_ok(100, 12);
    (
        same_csv && full_batch && mini_mid && mini_edge,
        format!(
            "identical CSV: {same_csv}; resume bit-exact: full batch {full_batch}, mini-batch mid-epoch {mini_mid}, at epoch boundary {mini_edge}"
        ),
    )
}

/// A8: Fourier layer periodicity and coefficient linearity.
fn a8_fourier_invariants() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA8);
    let mut worst_period = 0.0f64;
    let mut worst_linear = 0.0f64;
    for _ in 0..100 {
        let d = rng.random_range(1..=3);
        let h = rng.random_range(1..=6);
        let k = rng.random_range(1..=8);
        let n = rng.random_range(1..=5);
        let mk = |rng: &mut ChaCha8Rng| {
            FourierLayerParams::from_arrays(
                d,
                h,
                k,
                random_array(rng, h, d * k, -1.0, 1.0),
                random_array(rng, h, d * k, -1.0, 1.0),
            )
            .unwrap()
        };
        let p = mk(&mut rng);
        let q = mk(&mut rng);
        let x = random_array(&mut rng, n, d, -1.0, 1.0);
        let base = p.forward(&x).unwrap();
        for m in 0..d {
            let mut shifted = x.clone();
            for r in 0..n {
                shifted[(r, m)] += 2.0 * PI;
            }
            worst_period = worst_period.max(base.max_abs_diff(&p.forward(&shifted).unwrap()));
        }
        let sum = FourierLayerParams::from_arrays(
            d,
            h,
            k,
            Array2::from_fn(h, d * k, |r, c| p.a[(r, c)] + q.a[(r, c)]),
            Array2::from_fn(h, d * k, |r, c| p.b[(r, c)] + q.b[(r, c)]),
        )
        .unwrap();
        let lhs = sum.forward(&x).unwrap();
        let qv = q.forward(&x).unwrap();
        let rhs = Array2::from_fn(n, h, |r, c| base[(r, c)] + qv[(r, c)]);
        worst_linear = worst_linear.max(lhs.max_abs_diff(&rhs));
    }
    (
        worst_period <= 1e-9 && worst_linear <= 1e-9,
        format!("periodicity max diff {worst_period:.2e}, linearity max diff {worst_linear:.2e} (tol 1e-9)"),
    )
}

#[test]
fn acceptance_criteria() {
    let mut outcomes = Vec::new();

    outcomes.push(run("A1 gradient correctness", 30, a1_gradients));
    outcomes.push(run("A2 metric oracles", 10, a2_metrics));

    let fkan_cfg = desk_model_config(2, 1);
    let fkan_run = fit_image(&fkan_cfg, 2000);
    outcomes.push(run("A3 desk image fit", 300, || {
        (
            fkan_run.steps_to_35.is_some() && fkan_run.elapsed <= Duration::from_secs(300),
            format!(
                "PSNR >= 35 dB at step {:?}, final {:.2} dB after 2000 steps, training took {:.1}s",
                fkan_run.steps_to_35,
                fkan_run.final_psnr,
                fkan_run.elapsed.as_secs_f64()
            ),
        )
    }));

    outcomes.push(run("A4 spectral bias vs matched tanh-MLP", 600, || {
        let (base_cfg, base_params) = matched_baseline(&fkan_cfg, fkan_run.params).unwrap();
        let base = fit_image(&base_cfg, 2000);
        let matched = base_params.abs_diff(fkan_run.params) * 100 <= fkan_run.params;
        let faster = match (fkan_run.steps_to_30, base.steps_to_30) {
            (Some(f), Some(b)) => f < b,
            (Some(_), None) => true,
            _ => false,
        };
        (
            matched && faster,
            format!(
                "30 dB at step {:?} (FKAN, {} params) vs {:?} (tanh-MLP, {} params, final {:.2} dB)",
                fkan_run.steps_to_30, fkan_run.params, base.steps_to_30, base_params, base.final_psnr
            ),
        )
    }));

    outcomes.push(run("A5 desk occupancy", 600, a5_occupancy));

    outcomes.push(run("A6 parameter count", 1, || {
        let n = count_params(&ModelConfig::default());
        (
            n == 425_731,
            format!("count_params(default, d_i=2, d_o=3) = {n}"),
        )
    }));

    outcomes.push(run("A7 determinism and resume", 120, a7_determinism));
    outcomes.push(run("A8 Fourier invariants", 5, a8_fourier_invariants));

    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
