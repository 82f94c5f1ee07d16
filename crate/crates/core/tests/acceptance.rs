//! Acceptance checks. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any failed.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{
    central_difference, relative_error, spearman, stacked_product, tv_matrix_direct,
    tv_stacked_direct,
};
use gisc_core::harness::{run_sweep, ExperimentConfig, SceneSource, SWEEP_ETAS};
use gisc_core::{
    assemble_system, check_synchronization, generate_sequence, objective,
    objective_gradient_smooth, simulate_scan, solve, tv_value_matrix, tv_value_stacked,
    MeasurementSystem, Mode, NoiseSpec, PatternSequence, ScanGeometry, Scene, SolverConfig,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, q: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, q, |_, _| rng.gen::<f64>())
}

fn scan(scene: &Scene, seq: &PatternSequence) -> MeasurementSystem {
    let (m, n, q) = (seq.m(), scene.n(), scene.q());
    let g = ScanGeometry::synchronized(m, n, q).unwrap();
    let rec = simulate_scan(scene, seq, &g, &NoiseSpec::none()).unwrap();
    assemble_system(&rec, seq).unwrap()
}

fn descends(trace: &[f64]) -> Option<usize> {
    trace
        .windows(2)
        .position(|w| w[1] > w[0] + 1e-10 * w[0].abs())
        .map(|k| k + 1)
}

fn forward_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let n = rng.gen_range(2..=8);
        let m = rng.gen_range(1..=n);
        let q = rng.gen_range(1..=6);
        let mode = if case % 2 == 0 {
            Mode::Method1
        } else {
            Mode::Method2
        };
        let seq = generate_sequence(m, n, q, mode, rng.gen()).unwrap();
        let scene = Scene::new(random_matrix(&mut rng, n, q), 8).unwrap();
        let sys = scan(&scene, &seq);
        let err = relative_error(
            sys.stacked_signal().as_slice(),
            stacked_product(&seq, scene.data()).as_slice(),
        );
        worst = worst.max(err);
        ensure(err <= 1e-12, || {
            format!("case {case} (n={n} m={m} q={q} {mode}): {err:e}")
        })?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(10), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!("100 instances, worst {worst:.1e}, {elapsed:.2?}"))
}

fn method_degeneracy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1002);
    let mut worst = 0.0f64;
    for case in 0..20 {
        let n = rng.gen_range(2..=10);
        let m = rng.gen_range(1..=n);
        let q = rng.gen_range(1..=8);
        let single = generate_sequence(m, n, q, Mode::Method1, rng.gen()).unwrap();
        let replicated = PatternSequence::from_patterns(
            vec![single.patterns()[0].clone(); q + m - 1],
            Mode::Method2,
            0,
        )
        .unwrap();
        let scene = Scene::new(random_matrix(&mut rng, n, q), 8).unwrap();
        let y1 = scan(&scene, &single).signal().clone();
        let y2 = scan(&scene, &replicated).signal().clone();
        ensure(y1.shape() == y2.shape(), || {
            format!("case {case}: shapes differ")
        })?;
        let err = relative_error(y2.as_slice(), y1.as_slice());
        worst = worst.max(err);
        ensure(err <= 1e-12, || format!("case {case}: {err:e}"))?;
    }
    Ok(format!("20 instances, worst {worst:.1e}"))
}

fn exact_recovery(traces: &mut Vec<Vec<f64>>) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1003);
    let scene = Scene::new(random_matrix(&mut rng, 32, 32), 8).unwrap();
    let config = SolverConfig {
        nonneg_clip: false,
        ..SolverConfig::with_lambda(0.0)
    };
    let mut report = Vec::new();
    for mode in [Mode::Method1, Mode::Method2] {
        let sys = (1..100)
            .map(|seed| scan(&scene, &generate_sequence(32, 32, 32, mode, seed).unwrap()))
            .find(|sys| {
                sys.blocks()
                    .iter()
                    .all(|b| b.clone().singular_values().min() > 1e-3)
            })
            .ok_or("no invertible instance")?;
        let result = solve(&sys, &config).map_err(|e| e.to_string())?;
        let err = (&result.estimate - scene.data()).norm() / scene.data().norm();
        traces.push(result.objective_trace);
        ensure(err <= 1e-6, || format!("{mode}: relative error {err:e}"))?;
        report.push(format!("{mode} {err:.1e}"));
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!("{}, {elapsed:.2?}", report.join(", ")))
}

fn tv_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1004);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let n = rng.gen_range(2..=10);
        let q = rng.gen_range(2..=10);
        let eps = [0.0, 1e-8, 1e-3][case % 3];
        let x = DMatrix::from_fn(n, q, |_, _| rng.gen_range(-1.0..1.0));
        let pairs = [
            (
                tv_value_stacked(x.as_slice(), n, q, eps).unwrap(),
                tv_stacked_direct(x.as_slice(), n, q, eps),
            ),
            (tv_value_matrix(&x, eps).unwrap(), tv_matrix_direct(&x, eps)),
        ];
        for (got, want) in pairs {
            let err = (got - want).abs() / want.abs().max(f64::MIN_POSITIVE);
            worst = worst.max(err);
            ensure(err <= 1e-12, || {
                format!("case {case} (n={n} q={q}): {err:e}")
            })?;
        }
    }
    Ok(format!("100 instances, worst {worst:.1e}"))
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1005);
    let mut worst = 0.0f64;
    for case in 0..30 {
        let n = rng.gen_range(2..=8);
        let q = rng.gen_range(1..=64 / n);
        let m = rng.gen_range(1..=n);
        let mode = if case % 2 == 0 {
            Mode::Method1
        } else {
            Mode::Method2
        };
        let lambda = rng.gen_range(0.0..2.0);
        let scene = Scene::new(random_matrix(&mut rng, n, q), 8).unwrap();
        let sys = scan(
            &scene,
            &generate_sequence(m, n, q, mode, rng.gen()).unwrap(),
        );
        let x = random_matrix(&mut rng, n, q);
        let config = SolverConfig::with_lambda(lambda);
        let analytic = objective_gradient_smooth(&sys, &x, &config).unwrap();
        let numeric = central_difference(
            |p| objective(&sys, p, lambda, config.tv_epsilon).unwrap(),
            &x,
            1e-6,
        );
        let err = (&analytic - &numeric).amax() / analytic.amax().max(f64::MIN_POSITIVE);
        worst = worst.max(err);
        ensure(err <= 1e-5, || {
            format!("case {case} (n={n} q={q} {mode}): {err:e}")
        })?;
    }
    Ok(format!("30 instances, worst {worst:.1e}"))
}

fn descent(traces: &[Vec<f64>]) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1006);
    let mut all = traces.to_vec();
    for case in 0..40 {
        let n = rng.gen_range(4..=24);
        let q = rng.gen_range(1..=24);
        let m = rng.gen_range(1..=n);
        let mode = if case % 2 == 0 {
            Mode::Method1
        } else {
            Mode::Method2
        };
        let scene = Scene::new(random_matrix(&mut rng, n, q), 8).unwrap();
        let sys = scan(
            &scene,
            &generate_sequence(m, n, q, mode, rng.gen()).unwrap(),
        );
        let lambda = [0.0, 0.01, 0.1, 1.0][case % 4];
        let result = solve(&sys, &SolverConfig::with_lambda(lambda)).map_err(|e| e.to_string())?;
        all.push(result.objective_trace);
    }
    let steps: usize = all.iter().map(|t| t.len().saturating_sub(1)).sum();
    for (run, trace) in all.iter().enumerate() {
        if let Some(step) = descends(trace) {
            return Err(format!("run {run}: objective rose at step {step}"));
        }
    }
    Ok(format!("{} runs, {steps} steps", all.len()))
}

fn blocks_config(scene: &str, etas: Vec<f64>, seeds: Vec<u64>) -> ExperimentConfig {
    ExperimentConfig {
        scene: SceneSource::Builtin(scene.into()),
        n: 64,
        q: 64,
        etas,
        modes: vec![Mode::Method1, Mode::Method2],
        seeds,
        solver: SolverConfig::with_lambda(0.1),
        ..ExperimentConfig::default()
    }
}

fn mean_psnr(records: &[&gisc_core::harness::RunRecord]) -> Result<f64, String> {
    let mut sum = 0.0;
    for r in records {
        let m = r.outcome.as_ref().map_err(|e| format!("run failed: {e}"))?;
        sum += m.psnr_db.unwrap_or(f64::INFINITY);
    }
    Ok(sum / records.len() as f64)
}

fn psnr_trend() -> Outcome {
    let start = Instant::now();
    let config = blocks_config("blocks", SWEEP_ETAS.to_vec(), (1..=5).collect());
    let manifest = run_sweep(&config).map_err(|e| e.to_string())?;
    let mut report = Vec::new();
    for mode in [Mode::Method1, Mode::Method2] {
        let mut means = Vec::new();
        for &eta in &SWEEP_ETAS {
            let runs: Vec<_> = manifest
                .records
                .iter()
                .filter(|r| r.mode == mode && r.eta == eta)
                .collect();
            means.push(mean_psnr(&runs)?);
        }
        let curve = means
            .iter()
            .map(|v| format!("{v:.1}"))
            .collect::<Vec<_>>()
            .join("/");
        ensure(means.windows(2).all(|w| w[1] >= w[0]), || {
            format!("{mode} mean PSNR not non-decreasing: {curve}")
        })?;
        let rho = spearman(&SWEEP_ETAS, &means);
        ensure(rho >= 0.9, || format!("{mode} Spearman {rho:.3}"))?;
        report.push(format!("{mode} {curve} dB (rho {rho:.2})"));
    }
    let elapsed = start.elapsed();
    ensure(elapsed <= Duration::from_secs(1800), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!("{}; {elapsed:.1?}", report.join("; ")))
}

fn method2_beats_method1() -> Outcome {
    let config = blocks_config("repeated-stripes", vec![0.25], (1..=10).collect());
    let manifest = run_sweep(&config).map_err(|e| e.to_string())?;
    let by_mode = |mode: Mode| {
        let runs: Vec<_> = manifest.records.iter().filter(|r| r.mode == mode).collect();
        mean_psnr(&runs)
    };
    let (m1, m2) = (by_mode(Mode::Method1)?, by_mode(Mode::Method2)?);
    ensure(m2 >= m1, || {
        format!("method-2 {m2:.2} dB < method-1 {m1:.2} dB")
    })?;
    Ok(format!("method-2 {m2:.2} dB >= method-1 {m1:.2} dB"))
}

fn synchronization() -> Outcome {
    let ok = check_synchronization(248.0, 2.0, 496.0, 1e-9).map_err(|e| e.to_string())?;
    ensure(ok, || "248 um, 2 Hz, 496 um/s rejected".into())?;
    let off = check_synchronization(248.0, 2.0, 500.0, 1e-3).map_err(|e| e.to_string())?;
    ensure(!off, || "500 um/s accepted at tolerance 1e-3".into())?;
    Ok("496 um/s synchronized, 500 um/s rejected".into())
}

fn determinism() -> Outcome {
    let config = ExperimentConfig {
        scene: SceneSource::Builtin("letters".into()),
        n: 32,
        q: 48,
        etas: vec![0.25, 0.75],
        seeds: vec![1, 2],
        noise_sigma: 0.01,
        solver: SolverConfig::with_lambda(0.05),
        ..ExperimentConfig::default()
    };
    let a = run_sweep(&config)
        .map_err(|e| e.to_string())?
        .to_text(false);
    let b = run_sweep(&config)
        .map_err(|e| e.to_string())?
        .to_text(false);
    ensure(a == b, || "manifests differ".into())?;
    Ok(format!("{} manifest bytes identical", a.len()))
}

fn main() {
    let mut failed = 0;
    let mut report = |name: &str, run: &mut dyn FnMut() -> Outcome| {
        let outcome =
            catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    };
    let mut traces = Vec::new();
    report("forward-model oracle equivalence", &mut forward_oracle);
    report("method-1 / method-2 degeneracy", &mut method_degeneracy);
    report("exact recovery at full sampling", &mut || {
        exact_recovery(&mut traces)
    });
    report("TV stencil oracles", &mut tv_oracles);
    report("gradient check", &mut gradient_check);
    report("descent property", &mut || descent(&traces));
    report("PSNR trend over sampling rate", &mut psnr_trend);
    report(
        "method-2 beats method-1 on repeated stripes",
        &mut method2_beats_method1,
    );
    report("synchronization check", &mut synchronization);
    report("sweep determinism", &mut determinism);
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
