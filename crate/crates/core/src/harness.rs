//! Experiment runner: builtin stand-in scenes, sampling-rate sweeps over
//! (mode, eta, seed), run manifests and method-1 / method-2 comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{GiscError, Result};
use crate::forward::{assemble_system, simulate_scan, NoiseSpec, ScanGeometry};
use crate::metrics::psnr;
use crate::scene::{generate_sequence, load_scene, save_scene, Mode, Scene, DEFAULT_BIT_DEPTH};
use crate::solver::{solve, SolverConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Default sampling-rate sweep.
pub const SWEEP_ETAS: [f64; 6] = [0.25, 0.5, 0.625, 0.75, 0.875, 1.0];

pub const BUILTIN_SCENES: [&str; 4] = ["letters", "blocks", "gradient", "repeated-stripes"];

const NOISE_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Detector rows for sampling rate `eta`: `round(eta * n)`, halves rounding up.
pub fn eta_to_m(eta: f64, n: usize) -> Result<usize> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(GiscError::Config(format!(
            "sampling rate {eta} outside (0, 1]"
        )));
    }
    let m = (eta * n as f64 + 0.5).floor() as usize;
    if m < 1 {
        return Err(GiscError::Config(format!(
            "sampling rate {eta} leaves no detector rows at n = {n}"
        )));
    }
    Ok(m.min(n))
}

// 5 x 7 glyphs, one string per glyph row, '#' = lit
const GLYPHS: [(char, [&str; 7]); 4] = [
    (
        'S',
        [
            ".###.", "#...#", "#....", ".###.", "....#", "#...#", ".###.",
        ],
    ),
    (
        'I',
        [
            "#####", "..#..", "..#..", "..#..", "..#..", "..#..", "#####",
        ],
    ),
    (
        'O',
        [
            ".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###.",
        ],
    ),
    (
        'M',
        [
            "#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#",
        ],
    ),
];

fn letters(n: usize, q: usize) -> DMatrix<f64> {
    // glyph rows run across-track, glyph columns along-track
    let text_cols = 4 * 5 + 3;
    let scale = (n / 9).min(q / (text_cols + 2)).max(1);
    let top = n.saturating_sub(7 * scale) / 2;
    let left = q.saturating_sub(text_cols * scale) / 2;
    let mut x = DMatrix::zeros(n, q);
    for (g, (_, rows)) in GLYPHS.iter().enumerate() {
        for (gr, row) in rows.iter().enumerate() {
            for (gc, ch) in row.chars().enumerate() {
                if ch != '#' {
                    continue;
                }
                for dr in 0..scale {
                    for dc in 0..scale {
                        let r = top + gr * scale + dr;
                        let c = left + (g * 6 + gc) * scale + dc;
                        if r < n && c < q {
                            x[(r, c)] = 1.0;
                        }
                    }
                }
            }
        }
    }
    x
}

fn blocks(n: usize, q: usize) -> DMatrix<f64> {
    let rect = |x: &mut DMatrix<f64>, r0: f64, r1: f64, c0: f64, c1: f64, v: f64| {
        let (r0, r1) = ((r0 * n as f64) as usize, ((r1 * n as f64) as usize).max(1));
        let (c0, c1) = ((c0 * q as f64) as usize, ((c1 * q as f64) as usize).max(1));
        for r in r0..r1.min(n) {
            for c in c0..c1.min(q) {
                x[(r, c)] = v;
            }
        }
    };
    let mut x = DMatrix::from_element(n, q, 0.1);
    rect(&mut x, 0.125, 0.5, 0.125, 0.4375, 0.8);
    rect(&mut x, 0.5625, 0.875, 0.0625, 0.5, 0.45);
    rect(&mut x, 0.25, 0.75, 0.5625, 0.875, 1.0);
    rect(&mut x, 0.375, 0.625, 0.625, 0.8125, 0.3);
    x
}

fn gradient(n: usize, q: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, q, |r, c| {
        0.05 + 0.7 * (c + 1) as f64 / q as f64 + 0.2 * r as f64 / (n - 1) as f64
    })
}

fn repeated_stripes(n: usize, q: usize) -> DMatrix<f64> {
    let width = (n / 8).max(1);
    DMatrix::from_fn(n, q, |r, c| {
        if c % 4 == 3 {
            0.1
        } else if (r / width).is_multiple_of(2) {
            0.9
        } else {
            0.2
        }
    })
}

/// Procedural stand-ins for the experimental targets. `repeated-stripes`
/// repeats identical strips along track.
pub fn builtin_scene(name: &str, n: usize, q: usize) -> Result<Scene> {
    if n < 2 || q < 1 {
        return Err(GiscError::Dimension(format!(
            "builtin scenes need n >= 2 and q >= 1, got {n} x {q}"
        )));
    }
    let data = match name {
        "letters" => letters(n, q),
        "blocks" => blocks(n, q),
        "gradient" => gradient(n, q),
        "repeated-stripes" => repeated_stripes(n, q),
        other => return Err(GiscError::Lookup(other.to_string())),
    };
    Scene::new(data, DEFAULT_BIT_DEPTH)
}

#[derive(Debug, Clone, PartialEq)]
pub enum SceneSource {
    Builtin(String),
    File(PathBuf),
}

impl std::fmt::Display for SceneSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SceneSource::Builtin(name) => write!(f, "builtin:{name}"),
            SceneSource::File(path) => write!(f, "file:{}", path.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scene: SceneSource,
    /// Builtin scene size; file scenes take their size from the raster.
    pub n: usize,
    pub q: usize,
    pub bit_depth: u32,
    pub etas: Vec<f64>,
    pub modes: Vec<Mode>,
    pub seeds: Vec<u64>,
    /// Additive Gaussian detector noise; 0 disables it.
    pub noise_sigma: f64,
    pub solver: SolverConfig,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scene: SceneSource::Builtin("blocks".into()),
            n: 64,
            q: 64,
            bit_depth: DEFAULT_BIT_DEPTH,
            etas: SWEEP_ETAS.to_vec(),
            modes: vec![Mode::Method1, Mode::Method2],
            seeds: vec![1],
            noise_sigma: 0.0,
            solver: SolverConfig::default(),
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.etas.is_empty() || self.modes.is_empty() || self.seeds.is_empty() {
            return Err(GiscError::Config(
                "sweep needs at least one sampling rate, mode and seed".into(),
            ));
        }
        // a file scene's height is only known once loaded, so for it the
        // detector-row check happens per run
        for &eta in &self.etas {
            match self.scene {
                SceneSource::Builtin(_) => eta_to_m(eta, self.n).map(|_| ())?,
                SceneSource::File(_) if !(eta > 0.0 && eta <= 1.0) => {
                    return Err(GiscError::Config(format!(
                        "sampling rate {eta} outside (0, 1]"
                    )))
                }
                SceneSource::File(_) => {}
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(GiscError::Config(format!(
                "noise sigma {} must be >= 0",
                self.noise_sigma
            )));
        }
        self.solver.validate()
    }

    pub fn load_scene(&self) -> Result<Scene> {
        match &self.scene {
            SceneSource::Builtin(name) => builtin_scene(name, self.n, self.q),
            SceneSource::File(path) => load_scene(path, self.bit_depth),
        }
    }

    /// Key/value echo of every setting, in a fixed order.
    pub fn echo(&self) -> Vec<(String, String)> {
        let join = |v: Vec<String>| v.join(",");
        let s = &self.solver;
        vec![
            ("scene".into(), self.scene.to_string()),
            ("n".into(), self.n.to_string()),
            ("q".into(), self.q.to_string()),
            ("bit_depth".into(), self.bit_depth.to_string()),
            (
                "eta".into(),
                join(self.etas.iter().map(|e| e.to_string()).collect()),
            ),
            (
                "mode".into(),
                join(self.modes.iter().map(|m| m.to_string()).collect()),
            ),
            (
                "seed".into(),
                join(self.seeds.iter().map(|e| e.to_string()).collect()),
            ),
            ("noise_sigma".into(), self.noise_sigma.to_string()),
            (
                "lambda".into(),
                s.lambda
                    .map_or_else(|| "auto".to_string(), |l| l.to_string()),
            ),
            ("max_iters".into(), s.max_iters.to_string()),
            ("tol".into(), s.rel_tol.to_string()),
            ("tv_epsilon".into(), s.tv_epsilon.to_string()),
            ("nonneg_clip".into(), s.nonneg_clip.to_string()),
            ("prox_iters".into(), s.prox_iters.to_string()),
        ]
    }
}

/// Scores of one successful run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub psnr_db: Option<f64>,
    pub mse: f64,
    pub iterations: usize,
    pub converged: bool,
    pub lambda: f64,
    pub wall_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub mode: Mode,
    pub eta: f64,
    pub m: usize,
    pub seed: u64,
    pub outcome: std::result::Result<RunMetrics, String>,
    /// Reconstructed image, relative to the manifest directory.
    pub image: Option<String>,
}

impl RunRecord {
    fn key(&self) -> (Mode, u64, u64) {
        (self.mode, self.eta.to_bits(), self.seed)
    }

    pub fn image_name(mode: Mode, eta: f64, seed: u64) -> String {
        format!("recon_m{}_eta{eta:.4}_s{seed}.pgm", mode.code())
    }
}

/// Output of a single pipeline run (generate, scan, assemble, solve, score).
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub estimate: Scene,
    pub metrics: RunMetrics,
}

/// Runs the full pipeline for one (mode, eta, seed) triple.
pub fn run_single(
    scene: &Scene,
    mode: Mode,
    eta: f64,
    seed: u64,
    noise_sigma: f64,
    solver: &SolverConfig,
) -> Result<RunOutput> {
    let start = Instant::now();
    let (n, q) = (scene.n(), scene.q());
    let m = eta_to_m(eta, n)?;
    let seq = generate_sequence(m, n, q, mode, seed)?;
    let geometry = ScanGeometry::synchronized(m, n, q)?;
    let noise = if noise_sigma > 0.0 {
        NoiseSpec::gaussian(noise_sigma, seed ^ NOISE_SEED_SALT)?
    } else {
        NoiseSpec::none()
    };
    let record = simulate_scan(scene, &seq, &geometry, &noise)?;
    let system = assemble_system(&record, &seq)?;
    let result = solve(&system, solver)?;
    // PSNR is always scored on the [0, 1] range
    let estimate = Scene::from_clipped(result.estimate, scene.bit_depth())?;
    let report = psnr(scene, &estimate)?;
    Ok(RunOutput {
        estimate,
        metrics: RunMetrics {
            psnr_db: report.psnr_db,
            mse: report.mse,
            iterations: result.iterations,
            converged: result.converged,
            lambda: result.lambda,
            wall_s: start.elapsed().as_secs_f64(),
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub version: String,
    pub config: Vec<(String, String)>,
    pub records: Vec<RunRecord>,
}

fn fmt_psnr(p: Option<f64>) -> String {
    p.map_or_else(|| "inf".to_string(), |v| v.to_string())
}

fn parse_psnr(s: &str) -> std::result::Result<Option<f64>, String> {
    if s == "inf" {
        Ok(None)
    } else {
        s.parse()
            .map(Some)
            .map_err(|e| format!("psnr_db `{s}`: {e}"))
    }
}

impl RunManifest {
    pub fn failures(&self) -> usize {
        self.records.iter().filter(|r| r.outcome.is_err()).count()
    }

    /// Line-delimited `key=value` text. With `include_wall` unset the text is
    /// a pure function of the configuration.
    pub fn to_text(&self, include_wall: bool) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "kind=header version={}", self.version);
        for (k, v) in &self.config {
            let _ = writeln!(out, "kind=config key={k} value={v}");
        }
        for r in &self.records {
            let _ = write!(
                out,
                "kind=run mode={} eta={} m={} seed={}",
                r.mode.code(),
                r.eta,
                r.m,
                r.seed
            );
            if let Some(image) = &r.image {
                let _ = write!(out, " image={image}");
            }
            match &r.outcome {
                Ok(metrics) => {
                    let _ = write!(
                        out,
                        " status=ok psnr_db={} mse={} iters={} converged={} lambda={}",
                        fmt_psnr(metrics.psnr_db),
                        metrics.mse,
                        metrics.iterations,
                        metrics.converged,
                        metrics.lambda
                    );
                    if include_wall {
                        let _ = write!(out, " wall_s={:.3}", metrics.wall_s);
                    }
                }
                Err(msg) => {
                    let _ = write!(out, " status=failed error={}", msg.replace('\n', " "));
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad =
            |line: usize, msg: String| GiscError::Config(format!("manifest line {line}: {msg}"));
        let mut version = None;
        let mut config = Vec::new();
        let mut records = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            // an error message is free text and always last
            let (head, error) = match line.find(" error=") {
                Some(pos) => (&line[..pos], Some(line[pos + 7..].to_string())),
                None => (line, None),
            };
            let fields: BTreeMap<&str, &str> = head
                .split_whitespace()
                .filter_map(|tok| tok.split_once('='))
                .collect();
            let get = |k: &str| {
                fields
                    .get(k)
                    .copied()
                    .ok_or_else(|| bad(line_no, format!("missing `{k}`")))
            };
            match get("kind")? {
                "header" => version = Some(get("version")?.to_string()),
                "config" => {
                    let value = head.split_once(" value=").map_or("", |(_, v)| v);
                    config.push((get("key")?.to_string(), value.to_string()));
                }
                "run" => {
                    let num = |k: &str| -> Result<f64> {
                        get(k)?
                            .parse()
                            .map_err(|e| bad(line_no, format!("{k}: {e}")))
                    };
                    let mode_code = num("mode")? as u32;
                    let mode = Mode::from_code(mode_code)
                        .ok_or_else(|| bad(line_no, format!("mode {mode_code}")))?;
                    let outcome = match get("status")? {
                        "ok" => Ok(RunMetrics {
                            psnr_db: parse_psnr(get("psnr_db")?).map_err(|e| bad(line_no, e))?,
                            mse: num("mse")?,
                            iterations: num("iters")? as usize,
                            converged: get("converged")? == "true",
                            lambda: num("lambda")?,
                            wall_s: fields
                                .get("wall_s")
                                .and_then(|v| v.parse().ok())
                                .unwrap_or(0.0),
                        }),
                        _ => Err(error.unwrap_or_default()),
                    };
                    records.push(RunRecord {
                        mode,
                        eta: num("eta")?,
                        m: num("m")? as usize,
                        seed: get("seed")?
                            .parse()
                            .map_err(|e| bad(line_no, format!("seed: {e}")))?,
                        outcome,
                        image: fields.get("image").map(|s| s.to_string()),
                    });
                }
                other => return Err(bad(line_no, format!("unknown kind `{other}`"))),
            }
        }
        Ok(RunManifest {
            version: version.ok_or_else(|| GiscError::Config("manifest has no header".into()))?,
            config,
            records,
        })
    }

    /// `eta,mode,seed,psnr_db,mse,iters,converged,wall_s`; failed runs leave
    /// the metric columns empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("eta,mode,seed,psnr_db,mse,iters,converged,wall_s\n");
        for r in &self.records {
            let _ = match &r.outcome {
                Ok(m) => writeln!(
                    out,
                    "{},{},{},{},{},{},{},{:.3}",
                    r.eta,
                    r.mode.code(),
                    r.seed,
                    fmt_psnr(m.psnr_db),
                    m.mse,
                    m.iterations,
                    m.converged,
                    m.wall_s
                ),
                Err(_) => writeln!(out, "{},{},{},,,,,", r.eta, r.mode.code(), r.seed),
            };
        }
        out
    }

    /// Writes `manifest.txt` and `summary.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let write = |name: &str, body: String| {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| GiscError::io(path, e))
        };
        write("manifest.txt", self.to_text(true))?;
        write("summary.csv", self.to_csv())
    }
}

/// Runs every (mode, eta, seed) triple. Stage failures are recorded per run and
/// do not stop the sweep; only an unusable configuration or scene is an error.
pub fn run_sweep(config: &ExperimentConfig) -> Result<RunManifest> {
    config.validate()?;
    let scene = config.load_scene()?;
    if let Some(dir) = &config.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| GiscError::io(dir, e))?;
        save_scene(&scene, dir.join("scene.pgm"))?;
    }
    let mut triples = Vec::new();
    for &mode in &config.modes {
        for &eta in &config.etas {
            for &seed in &config.seeds {
                triples.push((mode, eta, seed));
            }
        }
    }
    let mut records: Vec<RunRecord> = triples
        .into_par_iter()
        .map(|(mode, eta, seed)| {
            let m = eta_to_m(eta, scene.n()).unwrap_or(0);
            let mut image = None;
            let outcome = run_single(&scene, mode, eta, seed, config.noise_sigma, &config.solver)
                .and_then(|out| {
                    if let Some(dir) = &config.out_dir {
                        let name = RunRecord::image_name(mode, eta, seed);
                        save_scene(&out.estimate, dir.join(&name))?;
                        image = Some(name);
                    }
                    Ok(out.metrics)
                })
                .map_err(|e| e.to_string());
            RunRecord {
                mode,
                eta,
                m,
                seed,
                outcome,
                image,
            }
        })
        .collect();
    records.sort_by(|a, b| {
        a.mode
            .cmp(&b.mode)
            .then(a.eta.total_cmp(&b.eta))
            .then(a.seed.cmp(&b.seed))
    });
    let mut echo = config.echo();
    if matches!(config.scene, SceneSource::File(_)) {
        echo.push(("scene_shape".into(), format!("{}x{}", scene.n(), scene.q())));
    }
    let manifest = RunManifest {
        version: VERSION.to_string(),
        config: echo,
        records,
    };
    if let Some(dir) = &config.out_dir {
        manifest.write(dir)?;
    }
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub eta: f64,
    pub mean_psnr_method1: f64,
    pub mean_psnr_method2: f64,
    /// `method2 - method1`; 0 when both are infinite.
    pub difference: f64,
    pub pairs: usize,
}

impl ComparisonRow {
    pub fn sign(&self) -> std::cmp::Ordering {
        self.difference
            .partial_cmp(&0.0)
            .unwrap_or(std::cmp::Ordering::Equal)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    /// `(method2 higher, equal, method1 higher)` counts over sampling rates.
    pub fn sign_summary(&self) -> (usize, usize, usize) {
        use std::cmp::Ordering::*;
        self.rows
            .iter()
            .fold((0, 0, 0), |(g, e, l), r| match r.sign() {
                Greater => (g + 1, e, l),
                Equal => (g, e + 1, l),
                Less => (g, e, l + 1),
            })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("eta,mean_psnr_method1,mean_psnr_method2,difference,pairs\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.eta, r.mean_psnr_method1, r.mean_psnr_method2, r.difference, r.pairs
            );
        }
        let (g, e, l) = self.sign_summary();
        let _ = writeln!(out, "# method2_higher={g} equal={e} method1_higher={l}");
        out
    }
}

fn mean_psnr(values: &[f64]) -> f64 {
    if values.iter().any(|v| v.is_infinite()) {
        f64::INFINITY
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Per-eta mean PSNR of each method over seeds shared by both methods. Every
/// successful run must have a successful counterpart in the other method.
pub fn compare_methods(manifest: &RunManifest) -> Result<ComparisonTable> {
    let mut by_key: BTreeMap<(Mode, u64, u64), f64> = BTreeMap::new();
    let mut missing = Vec::new();
    for r in &manifest.records {
        match &r.outcome {
            Ok(m) => {
                by_key.insert(r.key(), m.psnr_db.unwrap_or(f64::INFINITY));
            }
            Err(_) => missing.push(format!(
                "mode={} eta={} seed={} (failed)",
                r.mode.code(),
                r.eta,
                r.seed
            )),
        }
    }
    let mut per_eta: BTreeMap<u64, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (&(mode, eta_bits, seed), &value) in &by_key {
        let other = match mode {
            Mode::Method1 => Mode::Method2,
            Mode::Method2 => Mode::Method1,
        };
        if !by_key.contains_key(&(other, eta_bits, seed)) {
            missing.push(format!(
                "mode={} eta={} seed={seed}",
                other.code(),
                f64::from_bits(eta_bits)
            ));
            continue;
        }
        let entry = per_eta.entry(eta_bits).or_default();
        match mode {
            Mode::Method1 => entry.0.push(value),
            Mode::Method2 => entry.1.push(value),
        }
    }
    if !missing.is_empty() {
        return Err(GiscError::Pairing(missing));
    }
    let mut rows: Vec<ComparisonRow> = per_eta
        .into_iter()
        .map(|(bits, (m1, m2))| {
            let (a, b) = (mean_psnr(&m1), mean_psnr(&m2));
            let difference = if a.is_infinite() && b.is_infinite() {
                0.0
            } else {
                b - a
            };
            ComparisonRow {
                eta: f64::from_bits(bits),
                mean_psnr_method1: a,
                mean_psnr_method2: b,
                difference,
                pairs: m1.len(),
            }
        })
        .collect();
    rows.sort_by(|a, b| a.eta.total_cmp(&b.eta));
    Ok(ComparisonTable { rows })
}
