//! `gisc`: simulate push-broom ghost-imaging scans, reconstruct them, and run
//! sampling-rate sweeps comparing the single-pattern and per-frame-pattern
//! acquisition modes.

mod settings;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use gisc_core::harness::{
    compare_methods, eta_to_m, run_sweep, ExperimentConfig, RunManifest, SWEEP_ETAS,
};
use gisc_core::{
    assemble_system, fit_psnr_curve, generate_sequence, load_scene, psnr, save_scene,
    simulate_scan, solve, Mode, NoiseSpec, PatternSequence, ScanGeometry, ScanRecord, Scene,
};

use settings::{Flags, Settings};

#[derive(Debug, Parser)]
#[command(
    name = "gisc",
    version,
    about = "Push-broom ghost-imaging LiDAR experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a pattern sequence and write it to the --out file.
    GeneratePatterns,
    /// Scan a scene; writes scene.pgm, patterns.bin and scan.bin into --out.
    Simulate,
    /// Reconstruct a recorded scan; writes recon.pgm and trace.csv into --out.
    Reconstruct {
        /// Scan file written by `simulate`.
        #[arg(long)]
        scan: PathBuf,
        /// Pattern file matching the scan.
        #[arg(long)]
        patterns: PathBuf,
        /// Ground-truth raster; when given, the PSNR is reported.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Run every (mode, eta, seed) combination and write the manifest,
    /// summary.csv and reconstructed images into --out.
    Sweep,
    /// Per-rate mean PSNR of both modes from a sweep manifest.
    Compare {
        /// manifest.txt written by `sweep`.
        manifest: PathBuf,
    },
    /// Score an estimate against a reference, or fit PSNR curves to a manifest.
    Metrics {
        #[arg(long, requires = "estimate", conflicts_with = "manifest")]
        reference: Option<PathBuf>,
        #[arg(long, requires = "reference")]
        estimate: Option<PathBuf>,
        /// Fit a quadratic PSNR-vs-rate curve per mode.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load_truth(settings: &Settings) -> Result<Scene> {
    let config = ExperimentConfig {
        scene: settings.require_scene()?,
        n: settings.n,
        q: settings.q,
        bit_depth: settings.bit_depth,
        ..ExperimentConfig::default()
    };
    Ok(config.load_scene()?)
}

fn generate_patterns(settings: &Settings) -> Result<()> {
    let (eta, mode, seed) = settings.single_run("generate-patterns")?;
    let (n, q) = match settings.scene {
        Some(_) => {
            let scene = load_truth(settings)?;
            (scene.n(), scene.q())
        }
        None => (settings.n, settings.q),
    };
    let m = eta_to_m(eta, n)?;
    let seq = generate_sequence(m, n, q, mode, seed)?;
    let out = settings.require_out()?;
    seq.save(out)?;
    println!(
        "wrote {} pattern(s) of {m}x{n} to {}",
        seq.len(),
        out.display()
    );
    Ok(())
}

fn simulate(settings: &Settings) -> Result<()> {
    let (eta, mode, seed) = settings.single_run("simulate")?;
    // scan the quantized scene so the written scene.pgm is the exact ground truth
    let scene = load_truth(settings)?;
    let peak = scene.peak();
    let scene = Scene::new(
        scene.data().map(|v| (v * peak).round() / peak),
        scene.bit_depth(),
    )?;
    let (n, q) = (scene.n(), scene.q());
    let m = eta_to_m(eta, n)?;
    let seq = generate_sequence(m, n, q, mode, seed)?;
    let noise = if settings.noise_sigma > 0.0 {
        NoiseSpec::gaussian(settings.noise_sigma, seed)?
    } else {
        NoiseSpec::none()
    };
    let record = simulate_scan(&scene, &seq, &ScanGeometry::synchronized(m, n, q)?, &noise)?;
    let out = settings.require_out()?;
    create_dir(out)?;
    save_scene(&scene, out.join("scene.pgm"))?;
    seq.save(out.join("patterns.bin"))?;
    record.save(out.join("scan.bin"))?;
    println!(
        "{mode}: {} frames of {m} detector rows over {q} strips of {n} pixels -> {}",
        record.frame_count(),
        out.display()
    );
    Ok(())
}

fn reconstruct(
    settings: &Settings,
    scan: &Path,
    patterns: &Path,
    reference: Option<&Path>,
) -> Result<()> {
    let record = ScanRecord::load(scan)?;
    let seq = PatternSequence::load(patterns, record.meta().mode, 0)?;
    let system = assemble_system(&record, &seq)?;
    let result = solve(&system, &settings.solver)?;
    let estimate = Scene::from_clipped(result.estimate.clone(), settings.bit_depth)?;
    let out = settings.require_out()?;
    create_dir(out)?;
    save_scene(&estimate, out.join("recon.pgm"))?;
    result.save_trace_csv(out.join("trace.csv"))?;
    println!(
        "lambda={} iters={} converged={} objective={}",
        result.lambda,
        result.iterations,
        result.converged,
        result.final_objective()
    );
    if let Some(path) = reference {
        let truth = load_scene(path, settings.bit_depth)?;
        let report = psnr(&truth, &estimate)?;
        println!("mse={} psnr_db={}", report.mse, report.psnr_or_inf());
    }
    Ok(())
}

/// Returns whether every run succeeded.
fn sweep(settings: &Settings) -> Result<bool> {
    let out = settings.require_out()?;
    let config = ExperimentConfig {
        scene: settings.require_scene()?,
        n: settings.n,
        q: settings.q,
        bit_depth: settings.bit_depth,
        etas: settings.etas.clone().unwrap_or_else(|| SWEEP_ETAS.to_vec()),
        modes: settings
            .modes
            .clone()
            .unwrap_or_else(|| vec![Mode::Method1, Mode::Method2]),
        seeds: settings.seeds.clone().unwrap_or_else(|| vec![1]),
        noise_sigma: settings.noise_sigma,
        solver: settings.solver.clone(),
        out_dir: Some(out.to_path_buf()),
    };
    let manifest = run_sweep(&config)?;
    print!("{}", manifest.to_csv());
    if config.modes.len() == 2 && manifest.failures() == 0 {
        let table = compare_methods(&manifest)?;
        let path = out.join("comparison.csv");
        std::fs::write(&path, table.to_csv())
            .with_context(|| format!("writing {}", path.display()))?;
    }
    let failures = manifest.failures();
    if failures > 0 {
        eprintln!(
            "{failures} of {} runs failed; see {}",
            manifest.records.len(),
            out.join("manifest.txt").display()
        );
    }
    Ok(failures == 0)
}

fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(RunManifest::parse(&text)?)
}

fn compare(settings: &Settings, manifest: &Path) -> Result<()> {
    let table = compare_methods(&read_manifest(manifest)?)?;
    let csv = table.to_csv();
    print!("{csv}");
    if let Some(dir) = &settings.out {
        create_dir(dir)?;
        let path = dir.join("comparison.csv");
        std::fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn metrics(
    settings: &Settings,
    pair: Option<(&Path, &Path)>,
    manifest: Option<&Path>,
) -> Result<()> {
    if let Some((reference, estimate)) = pair {
        let report = psnr(
            &load_scene(reference, settings.bit_depth)?,
            &load_scene(estimate, settings.bit_depth)?,
        )?;
        println!("mse={} psnr_db={}", report.mse, report.psnr_or_inf());
        return Ok(());
    }
    let Some(path) = manifest else {
        bail!("metrics needs --reference with --estimate, or --manifest");
    };
    let manifest = read_manifest(path)?;
    let mut rows = Vec::new();
    for mode in [Mode::Method1, Mode::Method2] {
        let points: Vec<(f64, f64)> = manifest
            .records
            .iter()
            .filter(|r| r.mode == mode)
            .filter_map(|r| r.outcome.as_ref().ok()?.psnr_db.map(|db| (r.eta, db)))
            .collect();
        if points.is_empty() {
            continue;
        }
        let c = fit_psnr_curve(&points, 2)?.coefficients;
        rows.push(format!("{},{},{},{}", mode.code(), c[0], c[1], c[2]));
    }
    println!("mode,c0,c1,c2");
    for row in rows {
        println!("{row}");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    let settings = Settings::resolve(&cli.flags)?;
    match &cli.command {
        Command::GeneratePatterns => generate_patterns(&settings)?,
        Command::Simulate => simulate(&settings)?,
        Command::Reconstruct {
            scan,
            patterns,
            reference,
        } => reconstruct(&settings, scan, patterns, reference.as_deref())?,
        Command::Sweep => return sweep(&settings),
        Command::Compare { manifest } => compare(&settings, manifest)?,
        Command::Metrics {
            reference,
            estimate,
            manifest,
        } => metrics(
            &settings,
            reference.as_deref().zip(estimate.as_deref()),
            manifest.as_deref(),
        )?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
