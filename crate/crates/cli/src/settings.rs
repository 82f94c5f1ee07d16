//! Settings shared by every subcommand: command-line flags layered over an
//! optional TOML file. A flag always wins over the file; the file wins over
//! built-in defaults.
//!
//! ```toml
//! [scene]
//! builtin = "blocks"      # or: path = "target.pgm"
//! n = 64
//! q = 64
//! bit_depth = 8
//!
//! [scan]
//! eta = [0.25, 0.5, 1.0]
//! mode = "both"           # "1", "2" or "both"
//! seed = [1, 2, 3]
//! noise_sigma = 0.0
//!
//! [solver]
//! lambda = 0.1            # omit for the data-scaled default
//! max_iters = 2000
//! tol = 1e-6
//! tv_epsilon = 1e-8
//! nonneg_clip = true
//! prox_iters = 10
//!
//! [output]
//! out = "runs/blocks"
//! ```
//!
//! Relative paths in the file are resolved against the file's directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use gisc_core::harness::SceneSource;
use gisc_core::scene::DEFAULT_BIT_DEPTH;
use gisc_core::{Mode, SolverConfig};
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
pub enum ModeChoice {
    #[value(name = "1")]
    #[serde(rename = "1")]
    One,
    #[value(name = "2")]
    #[serde(rename = "2")]
    Two,
    #[value(name = "both")]
    #[serde(rename = "both")]
    Both,
}

impl ModeChoice {
    fn modes(self) -> Vec<Mode> {
        match self {
            ModeChoice::One => vec![Mode::Method1],
            ModeChoice::Two => vec![Mode::Method2],
            ModeChoice::Both => vec![Mode::Method1, Mode::Method2],
        }
    }
}

#[derive(Debug, Default, Args)]
pub struct Flags {
    /// TOML file with [scene], [scan], [solver] and [output] sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Grayscale raster (PGM or PNG) used as the ground-truth scene.
    #[arg(long, global = true, conflicts_with = "builtin")]
    pub scene: Option<PathBuf>,
    /// Procedural scene: letters, blocks, gradient or repeated-stripes.
    #[arg(long, global = true)]
    pub builtin: Option<String>,
    /// Across-track pixels of a builtin scene.
    #[arg(long, global = true)]
    pub n: Option<usize>,
    /// Strips of a builtin scene.
    #[arg(long, global = true)]
    pub q: Option<usize>,
    #[arg(long, global = true)]
    pub bit_depth: Option<u32>,
    /// Sampling rate m/n; repeat for a sweep.
    #[arg(long, global = true)]
    pub eta: Vec<f64>,
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ModeChoice>,
    /// Pattern seed; repeat for a sweep.
    #[arg(long, global = true)]
    pub seed: Vec<u64>,
    /// TV weight; omit for the data-scaled default.
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    #[arg(long, global = true)]
    pub max_iters: Option<usize>,
    /// Relative-change stopping threshold.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Standard deviation of additive Gaussian detector noise.
    #[arg(long, global = true)]
    pub noise_sigma: Option<f64>,
    /// Output file or directory, depending on the subcommand.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SceneSection {
    path: Option<PathBuf>,
    builtin: Option<String>,
    n: Option<usize>,
    q: Option<usize>,
    bit_depth: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ScanSection {
    eta: Option<Vec<f64>>,
    mode: Option<ModeChoice>,
    seed: Option<Vec<u64>>,
    noise_sigma: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SolverSection {
    lambda: Option<f64>,
    max_iters: Option<usize>,
    tol: Option<f64>,
    tv_epsilon: Option<f64>,
    nonneg_clip: Option<bool>,
    prox_iters: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct OutputSection {
    out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FileConfig {
    scene: SceneSection,
    scan: ScanSection,
    solver: SolverSection,
    output: OutputSection,
}

/// Fully merged settings. List-valued entries stay `None` when neither the
/// flags nor the file set them, so each subcommand can pick its own default.
#[derive(Debug, Clone)]
pub struct Settings {
    pub scene: Option<SceneSource>,
    pub n: usize,
    pub q: usize,
    pub bit_depth: u32,
    pub etas: Option<Vec<f64>>,
    pub modes: Option<Vec<Mode>>,
    pub seeds: Option<Vec<u64>>,
    pub noise_sigma: f64,
    pub solver: SolverConfig,
    pub out: Option<PathBuf>,
}

fn non_empty<T>(v: Vec<T>) -> Option<Vec<T>> {
    (!v.is_empty()).then_some(v)
}

impl Settings {
    pub fn resolve(flags: &Flags) -> Result<Settings> {
        let (file, base) = match &flags.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                let parsed: FileConfig = toml::from_str(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?;
                let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
                (parsed, base)
            }
            None => (FileConfig::default(), PathBuf::new()),
        };
        let rebase = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };

        if file.scene.path.is_some() && file.scene.builtin.is_some() {
            bail!("config sets both scene.path and scene.builtin");
        }
        let scene = match (&flags.scene, &flags.builtin) {
            (Some(path), _) => Some(SceneSource::File(path.clone())),
            (None, Some(name)) => Some(SceneSource::Builtin(name.clone())),
            (None, None) => match (file.scene.path, file.scene.builtin) {
                (Some(path), _) => Some(SceneSource::File(rebase(path))),
                (None, Some(name)) => Some(SceneSource::Builtin(name)),
                (None, None) => None,
            },
        };

        let defaults = SolverConfig::default();
        let s = &file.solver;
        let solver = SolverConfig {
            lambda: flags.lambda.or(s.lambda),
            max_iters: flags
                .max_iters
                .or(s.max_iters)
                .unwrap_or(defaults.max_iters),
            rel_tol: flags.tol.or(s.tol).unwrap_or(defaults.rel_tol),
            tv_epsilon: s.tv_epsilon.unwrap_or(defaults.tv_epsilon),
            nonneg_clip: s.nonneg_clip.unwrap_or(defaults.nonneg_clip),
            prox_iters: s.prox_iters.unwrap_or(defaults.prox_iters),
        };
        solver.validate()?;

        Ok(Settings {
            scene,
            n: flags.n.or(file.scene.n).unwrap_or(64),
            q: flags.q.or(file.scene.q).unwrap_or(64),
            bit_depth: flags
                .bit_depth
                .or(file.scene.bit_depth)
                .unwrap_or(DEFAULT_BIT_DEPTH),
            etas: non_empty(flags.eta.clone()).or(file.scan.eta),
            modes: flags.mode.or(file.scan.mode).map(ModeChoice::modes),
            seeds: non_empty(flags.seed.clone()).or(file.scan.seed),
            noise_sigma: flags.noise_sigma.or(file.scan.noise_sigma).unwrap_or(0.0),
            solver,
            out: flags.out.clone().or(file.output.out.map(rebase)),
        })
    }

    pub fn require_scene(&self) -> Result<SceneSource> {
        self.scene
            .clone()
            .context("no scene given: use --scene FILE or --builtin NAME")
    }

    pub fn require_out(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .context("no output location given: use --out")
    }

    /// The one sampling rate, mode and seed of a single-run subcommand.
    /// Mode defaults to method 2 and seed to 1; the rate has no default.
    pub fn single_run(&self, command: &str) -> Result<(f64, Mode, u64)> {
        let eta = match self.etas.as_deref() {
            Some([eta]) => *eta,
            Some(_) => bail!("{command} takes exactly one --eta"),
            None => bail!("{command} needs --eta"),
        };
        let mode = match self.modes.as_deref() {
            None => Mode::Method2,
            Some([mode]) => *mode,
            Some(_) => bail!("{command} takes --mode 1 or --mode 2, not both"),
        };
        let seed = match self.seeds.as_deref() {
            None => 1,
            Some([seed]) => *seed,
            Some(_) => bail!("{command} takes exactly one --seed"),
        };
        Ok((eta, mode, seed))
    }
}
