//! Simulation and reconstruction toolkit for push-broom ghost-imaging LiDAR.
//!
//! A line-array detector looks across the flight direction while a binary
//! speckle pattern illuminates the footprint. Platform motion carries each
//! strip of the scene past all `m` detector rows, so after `q + m - 1` frames
//! every one of `q` strips has been measured `m` times. The scene (`n`
//! across-track pixels per strip) is then recovered by TV-regularized least
//! squares, with sampling rate `eta = m / n` allowed to drop below one.
//!
//! - [`scene`] — scenes, speckle patterns, raster and pattern-file I/O
//! - [`forward`] — scan simulation, scan geometry, measurement systems
//! - [`tv`] — total-variation stencils
//! - [`solver`] — reconstruction
//! - [`metrics`] — MSE / PSNR and curve fitting
//! - [`harness`] — builtin scenes, sweeps, manifests, method comparison

pub mod error;
pub mod forward;
pub mod harness;
pub mod metrics;
pub mod scene;
pub mod solver;
pub mod tv;

pub use error::{GiscError, Result};
pub use forward::{
    assemble_strip_matrix, assemble_system, check_synchronization, sampling_rate, simulate_scan,
    MeasurementSystem, NoiseKind, NoiseSpec, ScanGeometry, ScanMeta, ScanRecord,
};
pub use metrics::{fit_psnr_curve, mse, psnr, PolynomialFit, QualityReport};
pub use scene::{
    generate_pattern, generate_sequence, load_scene, save_scene, Mode, PatternSequence, Scene,
    SpecklePattern,
};
pub use solver::{
    objective, objective_gradient_smooth, solve, solve_method1, solve_method2,
    ReconstructionResult, SolverConfig,
};
pub use tv::{tv_value_matrix, tv_value_stacked};
