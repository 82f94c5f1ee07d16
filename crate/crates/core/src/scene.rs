//! Ground-truth scenes and binary speckle-pattern sequences.
//!
//! A [`Scene`] is stored as an `n x q` matrix: row `r` is the across-track
//! pixel, column `i` is strip `X_i` along the flight direction. Raster files
//! use the same orientation, so image height is `n` and image width is `q`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::{DynamicImage, ImageError};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{GiscError, Result};

pub const DEFAULT_BIT_DEPTH: u32 = 8;

const PATTERN_MAGIC: &[u8; 8] = b"GISCPAT1";

/// Illumination scheme over the scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    /// One invariant pattern for the whole scan.
    Method1,
    /// A fresh pattern every time a new strip enters the footprint.
    Method2,
}

impl Mode {
    pub fn code(self) -> u32 {
        match self {
            Mode::Method1 => 1,
            Mode::Method2 => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Mode> {
        match code {
            1 => Some(Mode::Method1),
            2 => Some(Mode::Method2),
            _ => None,
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.code())
    }
}

/// Reflectivity image, values in `[0, 1]`, `n >= 2` rows by `q >= 1` strips.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    data: DMatrix<f64>,
    bit_depth: u32,
}

impl Scene {
    pub fn new(data: DMatrix<f64>, bit_depth: u32) -> Result<Self> {
        if data.nrows() < 2 || data.ncols() < 1 {
            return Err(GiscError::Dimension(format!(
                "scene must be at least 2 x 1, got {} x {}",
                data.nrows(),
                data.ncols()
            )));
        }
        if !(1..=16).contains(&bit_depth) {
            return Err(GiscError::Domain(format!(
                "bit depth must be in 1..=16, got {bit_depth}"
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(GiscError::Domain(format!("scene value {v} outside [0, 1]")));
        }
        Ok(Scene { data, bit_depth })
    }

    /// Builds a scene after clipping every value into `[0, 1]`.
    pub fn from_clipped(mut data: DMatrix<f64>, bit_depth: u32) -> Result<Self> {
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(GiscError::Domain(format!("non-finite scene value {v}")));
        }
        data.apply(|v| *v = v.clamp(0.0, 1.0));
        Scene::new(data, bit_depth)
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_data(self) -> DMatrix<f64> {
        self.data
    }

    /// Across-track resolution.
    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    /// Number of strips.
    pub fn q(&self) -> usize {
        self.data.ncols()
    }

    pub fn bit_depth(&self) -> u32 {
        self.bit_depth
    }

    pub fn peak(&self) -> f64 {
        ((1u64 << self.bit_depth) - 1) as f64
    }

    /// Column-stacked strips `[X_1; X_2; ...; X_q]`.
    pub fn stacked(&self) -> Vec<f64> {
        self.data.as_slice().to_vec()
    }
}

/// One `m x n` binary illumination pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecklePattern {
    data: DMatrix<f64>,
}

impl SpecklePattern {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        check_dims(data.nrows(), data.ncols())?;
        if data.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(GiscError::Domain(
                "pattern entries must be exactly 0 or 1".into(),
            ));
        }
        Ok(SpecklePattern { data })
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn m(&self) -> usize {
        self.data.nrows()
    }

    pub fn n(&self) -> usize {
        self.data.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternSequence {
    patterns: Vec<SpecklePattern>,
    mode: Mode,
    seed: u64,
}

impl PatternSequence {
    /// Wraps explicit patterns. Method1 requires exactly one pattern.
    pub fn from_patterns(patterns: Vec<SpecklePattern>, mode: Mode, seed: u64) -> Result<Self> {
        let first = patterns
            .first()
            .ok_or_else(|| GiscError::Dimension("empty pattern sequence".into()))?;
        let (m, n) = (first.m(), first.n());
        if patterns.iter().any(|p| p.m() != m || p.n() != n) {
            return Err(GiscError::Dimension(
                "all patterns in a sequence must share (m, n)".into(),
            ));
        }
        if mode == Mode::Method1 && patterns.len() != 1 {
            return Err(GiscError::Dimension(format!(
                "method-1 sequence holds one pattern, got {}",
                patterns.len()
            )));
        }
        Ok(PatternSequence {
            patterns,
            mode,
            seed,
        })
    }

    pub fn patterns(&self) -> &[SpecklePattern] {
        &self.patterns
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn m(&self) -> usize {
        self.patterns[0].m()
    }

    pub fn n(&self) -> usize {
        self.patterns[0].n()
    }

    /// Pattern illuminating the scene at 1-based time step `k`.
    pub fn pattern_at(&self, k: usize) -> Option<&SpecklePattern> {
        match self.mode {
            Mode::Method1 => self.patterns.first(),
            Mode::Method2 => k.checked_sub(1).and_then(|idx| self.patterns.get(idx)),
        }
    }

    /// Strip count this sequence can cover (Method2 only; `None` for Method1).
    pub fn strip_capacity(&self) -> Option<usize> {
        match self.mode {
            Mode::Method1 => None,
            Mode::Method2 => (self.len() + 1).checked_sub(self.m()),
        }
    }

    /// Writes the flat binary pattern file: magic, `m`, `n`, `L` as LE u32, then
    /// `L * m * n` bytes in pattern-major, row-major order.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(PATTERN_MAGIC)?;
        for v in [self.m(), self.n(), self.len()] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.len() * self.m() * self.n());
        for p in &self.patterns {
            for r in 0..p.m() {
                for c in 0..p.n() {
                    buf.push(p.data[(r, c)] as u8);
                }
            }
        }
        w.write_all(&buf)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| GiscError::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| GiscError::io(path, e))
    }

    /// Reads a pattern file. The file does not record the mode or seed, so the
    /// caller supplies them; a single-pattern file is valid for either mode.
    pub fn load(path: impl AsRef<Path>, mode: Mode, seed: u64) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| GiscError::io(path, e))?;
        let mut bytes = Vec::new();
        BufReader::new(file)
            .read_to_end(&mut bytes)
            .map_err(|e| GiscError::io(path, e))?;
        if bytes.len() < 20 || &bytes[..8] != PATTERN_MAGIC {
            return Err(GiscError::format(path, "missing GISCPAT1 header"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap());
        let (m, n, len) = (word(0) as usize, word(1) as usize, word(2) as usize);
        let body = &bytes[20..];
        if body.len() != len * m * n {
            return Err(GiscError::format(
                path,
                format!(
                    "expected {} pattern bytes, found {}",
                    len * m * n,
                    body.len()
                ),
            ));
        }
        let mut patterns = Vec::with_capacity(len);
        for chunk in body.chunks_exact(m * n) {
            if chunk.iter().any(|&b| b > 1) {
                return Err(GiscError::format(path, "pattern byte outside {0, 1}"));
            }
            let data = DMatrix::from_row_iterator(m, n, chunk.iter().map(|&b| b as f64));
            patterns.push(SpecklePattern::new(data)?);
        }
        PatternSequence::from_patterns(patterns, mode, seed)
    }
}

fn check_dims(m: usize, n: usize) -> Result<()> {
    if m < 1 || n < m {
        return Err(GiscError::Dimension(format!(
            "pattern needs 1 <= m <= n, got m={m}, n={n}"
        )));
    }
    Ok(())
}

/// Deterministic generator for the `index`-th pattern of seed `seed`.
fn pattern_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn draw_pattern(m: usize, n: usize, seed: u64, index: u64) -> SpecklePattern {
    let mut rng = pattern_rng(seed, index);
    let data = DMatrix::from_row_iterator(
        m,
        n,
        (0..m * n).map(|_| if rng.gen::<bool>() { 1.0 } else { 0.0 }),
    );
    SpecklePattern { data }
}

/// I.i.d. Bernoulli(0.5) pattern; identical for identical `(m, n, seed)`.
pub fn generate_pattern(m: usize, n: usize, seed: u64) -> Result<SpecklePattern> {
    check_dims(m, n)?;
    Ok(draw_pattern(m, n, seed, 0))
}

/// Pattern sequence for a scan of `q` strips: one pattern for Method1,
/// `q + m - 1` patterns for Method2. Pattern `k` depends only on `(seed, k)`,
/// and the Method1 pattern equals the first Method2 pattern.
pub fn generate_sequence(
    m: usize,
    n: usize,
    q: usize,
    mode: Mode,
    seed: u64,
) -> Result<PatternSequence> {
    check_dims(m, n)?;
    if q < 1 {
        return Err(GiscError::Dimension("strip count q must be >= 1".into()));
    }
    let len = match mode {
        Mode::Method1 => 1,
        Mode::Method2 => q + m - 1,
    };
    let patterns = (0..len as u64)
        .map(|k| draw_pattern(m, n, seed, k))
        .collect();
    Ok(PatternSequence {
        patterns,
        mode,
        seed,
    })
}

// The file opened, so a decode failure (including a truncated body) is a
// problem with its contents.
fn decode_error(path: &Path, err: ImageError) -> GiscError {
    GiscError::format(path, err.to_string())
}

/// Loads a grayscale raster (binary/ASCII PGM, or PNG) as a scene. Image rows
/// become across-track pixels and image columns become strips.
pub fn load_scene(path: impl AsRef<Path>, bit_depth: u32) -> Result<Scene> {
    let path = path.as_ref();
    let img = image::ImageReader::open(path)
        .map_err(|e| GiscError::io(path, e))?
        .with_guessed_format()
        .map_err(|e| GiscError::io(path, e))?
        .decode()
        .map_err(|e| decode_error(path, e))?;
    let (width, height) = (img.width() as usize, img.height() as usize);
    let (file_depth, samples): (u32, Vec<f64>) = match img {
        DynamicImage::ImageLuma8(buf) => (8, buf.into_raw().into_iter().map(f64::from).collect()),
        DynamicImage::ImageLuma16(buf) => (16, buf.into_raw().into_iter().map(f64::from).collect()),
        other => {
            return Err(GiscError::format(
                path,
                format!("not a grayscale raster ({:?})", other.color()),
            ))
        }
    };
    if file_depth != bit_depth {
        return Err(GiscError::format(
            path,
            format!("raster is {file_depth}-bit, requested bit depth {bit_depth}"),
        ));
    }
    let peak = ((1u64 << bit_depth) - 1) as f64;
    let data = DMatrix::from_row_iterator(height, width, samples.into_iter().map(|s| s / peak));
    Scene::new(data, bit_depth).map_err(|e| GiscError::format(path, e.to_string()))
}

/// Writes a scene as binary PGM at its bit depth (8 or 16 bits).
pub fn save_scene(scene: &Scene, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let peak = scene.peak();
    let wide = match scene.bit_depth {
        8 => false,
        16 => true,
        other => {
            return Err(GiscError::Unsupported(format!(
                "graymap output supports 8 or 16 bits, scene has {other}"
            )))
        }
    };
    let file = File::create(path).map_err(|e| GiscError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut body = Vec::with_capacity(scene.data.len() * if wide { 2 } else { 1 });
    // raster order is row-major: one image row per across-track pixel
    for v in scene.data.transpose().iter() {
        let level = (v.clamp(0.0, 1.0) * peak).round() as u16;
        if wide {
            body.extend_from_slice(&level.to_be_bytes());
        } else {
            body.push(level as u8);
        }
    }
    write!(w, "P5\n{} {}\n{}\n", scene.q(), scene.n(), peak as u32)
        .and_then(|_| w.write_all(&body))
        .and_then(|_| w.flush())
        .map_err(|e| GiscError::io(path, e))
}
