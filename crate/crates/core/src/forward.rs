//! Push-broom scan simulation and measurement-system assembly.
//!
//! Indices in the docs are 1-based. At time step `k` detector row `j` sees
//! strip `i = k - j + 1`, so strip `i` is read by row `j` at step
//! `i + j - 1` and the staggered matrix `A_i` has row `j` equal to row `j` of
//! pattern `I^(i+j-1)`. Readouts whose strip falls outside `1..=q` see a
//! black background and read zero.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{GiscError, Result};
use crate::scene::{Mode, PatternSequence, Scene};

pub const DEFAULT_SYNC_TOLERANCE: f64 = 1e-9;

const SCAN_MAGIC: &[u8; 8] = b"GISCSCN1";

/// Returns whether `|v - r f| / (r f) <= tol`.
pub fn check_synchronization(r: f64, f: f64, v: f64, tol: f64) -> Result<bool> {
    if !(r > 0.0 && f > 0.0 && v > 0.0) {
        return Err(GiscError::Domain(format!(
            "strip resolution, frequency and velocity must be positive (r={r}, f={f}, v={v})"
        )));
    }
    if tol.is_nan() || tol < 0.0 {
        return Err(GiscError::Domain(format!(
            "tolerance must be >= 0, got {tol}"
        )));
    }
    let nominal = r * f;
    Ok((v - nominal).abs() / nominal <= tol)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanGeometry {
    pub m: usize,
    pub n: usize,
    pub q: usize,
    /// Strip resolution along the flight direction (length units).
    pub strip_resolution: f64,
    /// Pulse / readout frequency (Hz).
    pub frequency: f64,
    /// Platform velocity (length units per second).
    pub velocity: f64,
}

impl ScanGeometry {
    pub fn new(
        m: usize,
        n: usize,
        q: usize,
        strip_resolution: f64,
        frequency: f64,
        velocity: f64,
    ) -> Result<Self> {
        if m < 1 || n < 2 || q < 1 {
            return Err(GiscError::Geometry(format!(
                "need m >= 1, n >= 2, q >= 1 (m={m}, n={n}, q={q})"
            )));
        }
        if m > n {
            return Err(GiscError::Geometry(format!(
                "sampling rate m/n = {m}/{n} exceeds 1"
            )));
        }
        if !(strip_resolution > 0.0 && frequency > 0.0 && velocity > 0.0) {
            return Err(GiscError::Geometry(
                "strip resolution, frequency and velocity must be positive".into(),
            ));
        }
        Ok(ScanGeometry {
            m,
            n,
            q,
            strip_resolution,
            frequency,
            velocity,
        })
    }

    /// Unit-scaled geometry with `v = r f` exactly.
    pub fn synchronized(m: usize, n: usize, q: usize) -> Result<Self> {
        ScanGeometry::new(m, n, q, 1.0, 1.0, 1.0)
    }

    pub fn sampling_rate(&self) -> f64 {
        self.m as f64 / self.n as f64
    }

    /// Number of detector frames needed to sample every strip `m` times.
    pub fn frame_count(&self) -> usize {
        self.q + self.m - 1
    }

    pub fn is_synchronized(&self, tol: f64) -> Result<bool> {
        check_synchronization(self.strip_resolution, self.frequency, self.velocity, tol)
    }
}

/// `eta = m / n`.
pub fn sampling_rate(geometry: &ScanGeometry) -> f64 {
    geometry.sampling_rate()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    None,
    AdditiveGaussian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        NoiseSpec {
            kind: NoiseKind::None,
            sigma: 0.0,
            seed: 0,
        }
    }

    pub fn gaussian(sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(GiscError::Domain(format!(
                "noise sigma must be >= 0, got {sigma}"
            )));
        }
        Ok(NoiseSpec {
            kind: NoiseKind::AdditiveGaussian,
            sigma,
            seed,
        })
    }

    fn is_active(&self) -> bool {
        self.kind == NoiseKind::AdditiveGaussian && self.sigma > 0.0
    }
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec::none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanMeta {
    pub m: usize,
    pub n: usize,
    pub q: usize,
    pub mode: Mode,
    pub seed: u64,
    pub noise: NoiseSpec,
}

/// Detector time series: row `k - 1` holds frame `D^(k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanRecord {
    frames: DMatrix<f64>,
    meta: ScanMeta,
}

impl ScanRecord {
    pub fn new(frames: DMatrix<f64>, meta: ScanMeta) -> Result<Self> {
        if frames.nrows() != meta.q + meta.m - 1 || frames.ncols() != meta.m {
            return Err(GiscError::Dimension(format!(
                "expected {} frames of {} readouts, got {} x {}",
                meta.q + meta.m - 1,
                meta.m,
                frames.nrows(),
                frames.ncols()
            )));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(GiscError::Domain("non-finite detector readout".into()));
        }
        Ok(ScanRecord { frames, meta })
    }

    pub fn frames(&self) -> &DMatrix<f64> {
        &self.frames
    }

    pub fn meta(&self) -> &ScanMeta {
        &self.meta
    }

    pub fn frame_count(&self) -> usize {
        self.frames.nrows()
    }

    /// Readout `D_j^(k)`, both indices 1-based.
    pub fn readout(&self, k: usize, j: usize) -> f64 {
        self.frames[(k - 1, j - 1)]
    }

    /// Header `GISCSCN1`, then `m, n, q, mode` as LE u32, then the readouts
    /// frame by frame as LE f64.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(SCAN_MAGIC)?;
        let meta = &self.meta;
        for v in [
            meta.m as u32,
            meta.n as u32,
            meta.q as u32,
            meta.mode.code(),
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        for k in 0..self.frames.nrows() {
            for j in 0..self.frames.ncols() {
                w.write_all(&self.frames[(k, j)].to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| GiscError::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| GiscError::io(path, e))
    }

    /// Reads a scan file. Seed and noise are not stored, so the returned
    /// metadata carries seed 0 and no noise.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| GiscError::io(path, e))?;
        let mut bytes = Vec::new();
        BufReader::new(file)
            .read_to_end(&mut bytes)
            .map_err(|e| GiscError::io(path, e))?;
        if bytes.len() < 24 || &bytes[..8] != SCAN_MAGIC {
            return Err(GiscError::format(path, "missing GISCSCN1 header"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap());
        let (m, n, q) = (word(0) as usize, word(1) as usize, word(2) as usize);
        let mode = Mode::from_code(word(3))
            .ok_or_else(|| GiscError::format(path, format!("unknown mode code {}", word(3))))?;
        if m < 1 || q < 1 {
            return Err(GiscError::format(path, "header has zero m or q"));
        }
        let count = (q + m - 1) * m;
        let body = &bytes[24..];
        if body.len() != count * 8 {
            return Err(GiscError::format(
                path,
                format!("expected {} readout bytes, found {}", count * 8, body.len()),
            ));
        }
        let frames = DMatrix::from_row_iterator(
            q + m - 1,
            m,
            body.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap())),
        );
        let meta = ScanMeta {
            m,
            n,
            q,
            mode,
            seed: 0,
            noise: NoiseSpec::none(),
        };
        ScanRecord::new(frames, meta).map_err(|e| GiscError::format(path, e.to_string()))
    }
}

fn check_sequence(seq: &PatternSequence, m: usize, n: usize, q: usize) -> Result<()> {
    if seq.m() != m || seq.n() != n {
        return Err(GiscError::Dimension(format!(
            "patterns are {} x {}, expected {m} x {n}",
            seq.m(),
            seq.n()
        )));
    }
    if seq.mode() == Mode::Method2 && seq.len() != q + m - 1 {
        return Err(GiscError::Dimension(format!(
            "method-2 scan of {q} strips needs {} patterns, sequence has {}",
            q + m - 1,
            seq.len()
        )));
    }
    Ok(())
}

/// Simulates the `q + m - 1` detector frames of a push-broom scan.
pub fn simulate_scan(
    scene: &Scene,
    seq: &PatternSequence,
    geometry: &ScanGeometry,
    noise: &NoiseSpec,
) -> Result<ScanRecord> {
    let (m, n, q) = (geometry.m, geometry.n, geometry.q);
    if scene.n() != n || scene.q() != q {
        return Err(GiscError::Dimension(format!(
            "scene is {} x {}, geometry expects {n} x {q}",
            scene.n(),
            scene.q()
        )));
    }
    check_sequence(seq, m, n, q)?;
    if !geometry.is_synchronized(DEFAULT_SYNC_TOLERANCE)? {
        return Err(GiscError::Geometry(format!(
            "velocity {} does not match strip resolution x frequency {}",
            geometry.velocity,
            geometry.strip_resolution * geometry.frequency
        )));
    }
    let normal = if noise.is_active() {
        Some(Normal::new(0.0, noise.sigma).map_err(|e| GiscError::Domain(e.to_string()))?)
    } else {
        None
    };
    let x = scene.data();
    let frame_count = geometry.frame_count();
    let rows: Vec<Vec<f64>> = (1..=frame_count)
        .into_par_iter()
        .map(|k| {
            let pattern = seq.pattern_at(k).expect("sequence length checked").data();
            let mut frame: Vec<f64> = (1..=m)
                .map(|j| match (k + 1).checked_sub(j) {
                    Some(i) if (1..=q).contains(&i) => {
                        pattern.row(j - 1).transpose().dot(&x.column(i - 1))
                    }
                    _ => 0.0,
                })
                .collect();
            if let Some(normal) = &normal {
                let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
                rng.set_stream(k as u64);
                for v in &mut frame {
                    *v += normal.sample(&mut rng);
                }
            }
            frame
        })
        .collect();
    let frames = DMatrix::from_row_iterator(frame_count, m, rows.into_iter().flatten());
    ScanRecord::new(
        frames,
        ScanMeta {
            m,
            n,
            q,
            mode: seq.mode(),
            seed: seq.seed(),
            noise: *noise,
        },
    )
}

/// Staggered matrix `A_i` (1-based strip index): row `j` is row `j` of pattern
/// `I^(i+j-1)`. Method1 returns the invariant pattern for every `i`.
pub fn assemble_strip_matrix(seq: &PatternSequence, i: usize) -> Result<DMatrix<f64>> {
    let (m, n) = (seq.m(), seq.n());
    match seq.mode() {
        Mode::Method1 => {
            if i < 1 {
                return Err(GiscError::Index {
                    index: i,
                    max: usize::MAX,
                });
            }
            Ok(seq.patterns()[0].data().clone())
        }
        Mode::Method2 => {
            let q = seq.strip_capacity().unwrap_or(0);
            if i < 1 || i > q {
                return Err(GiscError::Index { index: i, max: q });
            }
            let mut a = DMatrix::zeros(m, n);
            for j in 1..=m {
                let pattern = seq.patterns()[i + j - 2].data();
                a.row_mut(j - 1).copy_from(&pattern.row(j - 1));
            }
            Ok(a)
        }
    }
}

/// Linear system `Y = A X` relating the reordered detector signal to the
/// scene. The signal is held as an `m x q` matrix whose column `i` is `Y_i`;
/// Method1 keeps one block `A'`, Method2 keeps the `q` blocks `A_i` of the
/// block-diagonal `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSystem {
    mode: Mode,
    blocks: Vec<DMatrix<f64>>,
    signal: DMatrix<f64>,
}

impl MeasurementSystem {
    pub fn new(mode: Mode, blocks: Vec<DMatrix<f64>>, signal: DMatrix<f64>) -> Result<Self> {
        let first = blocks
            .first()
            .ok_or_else(|| GiscError::Dimension("measurement system has no blocks".into()))?;
        let (m, n) = first.shape();
        if blocks.iter().any(|b| b.shape() != (m, n)) {
            return Err(GiscError::Dimension("blocks differ in shape".into()));
        }
        if signal.nrows() != m || signal.ncols() < 1 {
            return Err(GiscError::Dimension(format!(
                "signal is {} x {}, blocks have {m} rows",
                signal.nrows(),
                signal.ncols()
            )));
        }
        let expected = match mode {
            Mode::Method1 => 1,
            Mode::Method2 => signal.ncols(),
        };
        if blocks.len() != expected {
            return Err(GiscError::Dimension(format!(
                "{mode:?} needs {expected} blocks, got {}",
                blocks.len()
            )));
        }
        Ok(MeasurementSystem {
            mode,
            blocks,
            signal,
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn m(&self) -> usize {
        self.blocks[0].nrows()
    }

    pub fn n(&self) -> usize {
        self.blocks[0].ncols()
    }

    pub fn q(&self) -> usize {
        self.signal.ncols()
    }

    /// `Y'` (Method1) or the columns of the stacked `Y` (Method2), `m x q`.
    pub fn signal(&self) -> &DMatrix<f64> {
        &self.signal
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    /// `A_i` for 1-based strip `i`.
    pub fn strip_matrix(&self, i: usize) -> &DMatrix<f64> {
        match self.mode {
            Mode::Method1 => &self.blocks[0],
            Mode::Method2 => &self.blocks[i - 1],
        }
    }

    /// Stacked `Y = [Y_1; ...; Y_q]`.
    pub fn stacked_signal(&self) -> DVector<f64> {
        DVector::from_column_slice(self.signal.as_slice())
    }

    /// Dense `(m q) x (n q)` block-diagonal matrix. Only sensible at small sizes.
    pub fn dense_matrix(&self) -> DMatrix<f64> {
        let (m, n, q) = (self.m(), self.n(), self.q());
        let mut a = DMatrix::zeros(m * q, n * q);
        for i in 0..q {
            a.view_mut((i * m, i * n), (m, n))
                .copy_from(self.strip_matrix(i + 1));
        }
        a
    }

    /// `A X` with `X` an `n x q` scene matrix; returns `m x q`.
    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        match self.mode {
            Mode::Method1 => &self.blocks[0] * x,
            Mode::Method2 => {
                let mut out = DMatrix::zeros(self.m(), self.q());
                for (i, block) in self.blocks.iter().enumerate() {
                    out.column_mut(i).gemv(1.0, block, &x.column(i), 0.0);
                }
                out
            }
        }
    }

    /// `A^T R` with `R` an `m x q` residual; returns `n x q`.
    pub fn adjoint(&self, r: &DMatrix<f64>) -> DMatrix<f64> {
        match self.mode {
            Mode::Method1 => self.blocks[0].tr_mul(r),
            Mode::Method2 => {
                let mut out = DMatrix::zeros(self.n(), self.q());
                for (i, block) in self.blocks.iter().enumerate() {
                    out.column_mut(i).gemv_tr(1.0, block, &r.column(i), 0.0);
                }
                out
            }
        }
    }

    /// `||Y - A X||^2` (Frobenius norm for Method1).
    pub fn misfit(&self, x: &DMatrix<f64>) -> f64 {
        (self.apply(x) - &self.signal).norm_squared()
    }
}

/// Reorders the detector frames into `Y_i = [D_1^(i), ..., D_m^(i+m-1)]^T`
/// and pairs them with the staggered matrices.
pub fn assemble_system(record: &ScanRecord, seq: &PatternSequence) -> Result<MeasurementSystem> {
    let meta = record.meta();
    if meta.mode != seq.mode() {
        return Err(GiscError::Consistency(format!(
            "scan recorded with {:?}, patterns are {:?}",
            meta.mode,
            seq.mode()
        )));
    }
    check_sequence(seq, meta.m, meta.n, meta.q)
        .map_err(|e| GiscError::Consistency(e.to_string()))?;
    let (m, q) = (meta.m, meta.q);
    let signal = DMatrix::from_fn(m, q, |j, i| record.frames()[(i + j, j)]);
    let blocks = match seq.mode() {
        Mode::Method1 => vec![seq.patterns()[0].data().clone()],
        Mode::Method2 => (1..=q)
            .map(|i| assemble_strip_matrix(seq, i))
            .collect::<Result<Vec<_>>>()?,
    };
    MeasurementSystem::new(seq.mode(), blocks, signal)
}
