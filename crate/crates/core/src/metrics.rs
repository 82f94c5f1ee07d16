//! MSE and PSNR in integer-scale units, and polynomial fits of PSNR against
//! sampling rate.

use nalgebra::{DMatrix, DVector};

use crate::error::{GiscError, Result};
use crate::scene::Scene;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityReport {
    /// Mean squared error with both images scaled by `2^bit_depth - 1`.
    pub mse: f64,
    /// `None` when the images are identical (infinite PSNR).
    pub psnr_db: Option<f64>,
    pub bit_depth: u32,
}

impl QualityReport {
    pub fn is_infinite(&self) -> bool {
        self.psnr_db.is_none()
    }

    /// PSNR as a plain float, `+inf` for identical images.
    pub fn psnr_or_inf(&self) -> f64 {
        self.psnr_db.unwrap_or(f64::INFINITY)
    }
}

fn check_pair(reference: &Scene, estimate: &Scene) -> Result<()> {
    if reference.data().shape() != estimate.data().shape() {
        return Err(GiscError::Dimension(format!(
            "reference is {:?}, estimate is {:?}",
            reference.data().shape(),
            estimate.data().shape()
        )));
    }
    if reference.bit_depth() != estimate.bit_depth() {
        return Err(GiscError::Dimension(format!(
            "bit depths differ: {} vs {}",
            reference.bit_depth(),
            estimate.bit_depth()
        )));
    }
    Ok(())
}

pub fn mse(reference: &Scene, estimate: &Scene) -> Result<f64> {
    check_pair(reference, estimate)?;
    let peak = reference.peak();
    let sum: f64 = reference
        .data()
        .iter()
        .zip(estimate.data().iter())
        .map(|(a, b)| {
            let d = (a - b) * peak;
            d * d
        })
        .sum();
    Ok(sum / reference.data().len() as f64)
}

/// `PSNR = 10 log10(peak^2 / MSE)` with `peak = 2^bit_depth - 1`.
pub fn psnr(reference: &Scene, estimate: &Scene) -> Result<QualityReport> {
    let mse = mse(reference, estimate)?;
    let peak = reference.peak();
    let psnr_db = (mse > 0.0).then(|| 10.0 * (peak * peak / mse).log10());
    Ok(QualityReport {
        mse,
        psnr_db,
        bit_depth: reference.bit_depth(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialFit {
    /// Ascending powers: `psnr ~ c[0] + c[1] eta + c[2] eta^2 + ...`.
    pub coefficients: Vec<f64>,
    /// `observed - fitted`, in input order.
    pub residuals: Vec<f64>,
}

impl PolynomialFit {
    pub fn degree(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn eval(&self, eta: f64) -> f64 {
        self.coefficients
            .iter()
            .rev()
            .fold(0.0, |acc, c| acc * eta + c)
    }
}

/// Least-squares polynomial fit of PSNR against `eta`.
pub fn fit_psnr_curve(points: &[(f64, f64)], degree: usize) -> Result<PolynomialFit> {
    if let Some((eta, db)) = points
        .iter()
        .find(|(e, p)| !e.is_finite() || !p.is_finite())
    {
        return Err(GiscError::Fit(format!("non-finite point ({eta}, {db})")));
    }
    let mut etas: Vec<f64> = points.iter().map(|p| p.0).collect();
    etas.sort_by(f64::total_cmp);
    etas.dedup();
    if etas.len() < degree + 1 {
        return Err(GiscError::Fit(format!(
            "degree {degree} needs {} distinct sampling rates, got {}",
            degree + 1,
            etas.len()
        )));
    }
    let design = DMatrix::from_fn(points.len(), degree + 1, |r, c| points[r].0.powi(c as i32));
    let observed = DVector::from_iterator(points.len(), points.iter().map(|p| p.1));
    let coefficients = design
        .clone()
        .svd(true, true)
        .solve(&observed, 1e-14)
        .map_err(|e| GiscError::Fit(e.to_string()))?;
    let residuals = (&observed - &design * &coefficients)
        .iter()
        .copied()
        .collect();
    Ok(PolynomialFit {
        coefficients: coefficients.iter().copied().collect(),
        residuals,
    })
}
