//! Isotropic total variation over a scene matrix (`n` across-track rows by
//! `q` strips) and the pieces a first-order solver needs: value, smoothed
//! gradient, and the proximal operator.
//!
//! Each TV term is anchored at a pixel `(r, j)` and pairs the across-track
//! difference `x[r+1, j] - x[r, j]` with the along-track difference
//! `x[r, j+1] - x[r, j]`. Anchors on the last row or the last strip carry no
//! term. In the stacked vector the first rule is the exclusion of indices that
//! are multiples of `n`, the second is the upper bound `q n - n`.

use nalgebra::DMatrix;

use crate::error::{GiscError, Result};

/// Which anchors contribute, and what a missing along-track difference means.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stencil {
    /// Literal stacked-vector summation: empty when `q == 1`.
    Stacked,
    /// Matrix form. With a single strip it falls back to the across-track sum
    /// `sum |x[r+1] - x[r]|` so the objective stays meaningful.
    Matrix,
}

impl Stencil {
    /// Anchor strips that carry a term and whether they also have an
    /// along-track neighbour.
    fn anchor_strips(self, q: usize) -> (usize, bool) {
        match (self, q) {
            (Stencil::Matrix, 1) => (1, false),
            _ => (q - 1, true),
        }
    }

    /// Upper bound on `||K||^2` for the stacked difference operator.
    fn operator_norm_sq(self, q: usize) -> f64 {
        if self.anchor_strips(q).1 {
            8.0
        } else {
            4.0
        }
    }
}

#[inline]
fn magnitude(a: f64, b: f64, eps: f64) -> f64 {
    if eps > 0.0 {
        (a * a + b * b + eps * eps).sqrt() - eps
    } else {
        a.hypot(b)
    }
}

fn check_shape(len: usize, n: usize, q: usize) -> Result<()> {
    if n < 2 || q < 1 {
        return Err(GiscError::Dimension(format!(
            "TV needs n >= 2 and q >= 1, got n={n}, q={q}"
        )));
    }
    if len != n * q {
        return Err(GiscError::Dimension(format!(
            "vector of length {len} does not hold {q} strips of {n}"
        )));
    }
    Ok(())
}

/// TV of a column-stacked scene `x` (strip-major, length `n q`), with smoothing
/// `sqrt(a^2 + b^2 + eps^2) - eps` when `eps > 0`.
pub fn tv_value_stacked(x: &[f64], n: usize, q: usize, eps: f64) -> Result<f64> {
    check_shape(x.len(), n, q)?;
    Ok(tv_value(x, n, q, Stencil::Stacked, eps))
}

/// TV of an `n x q` scene matrix.
pub fn tv_value_matrix(x: &DMatrix<f64>, eps: f64) -> Result<f64> {
    check_shape(x.len(), x.nrows(), x.ncols())?;
    Ok(tv_value(
        x.as_slice(),
        x.nrows(),
        x.ncols(),
        Stencil::Matrix,
        eps,
    ))
}

pub(crate) fn tv_value(x: &[f64], n: usize, q: usize, stencil: Stencil, eps: f64) -> f64 {
    let (strips, along) = stencil.anchor_strips(q);
    let mut total = 0.0;
    for j in 0..strips {
        let col = j * n;
        for r in 0..n - 1 {
            let base = x[col + r];
            let a = x[col + r + 1] - base;
            let b = if along { x[col + n + r] - base } else { 0.0 };
            total += magnitude(a, b, eps);
        }
    }
    total
}

/// Gradient of the smoothed TV; requires `eps > 0`.
pub(crate) fn tv_gradient(x: &[f64], n: usize, q: usize, stencil: Stencil, eps: f64) -> Vec<f64> {
    debug_assert!(eps > 0.0);
    let (strips, along) = stencil.anchor_strips(q);
    let mut grad = vec![0.0; x.len()];
    for j in 0..strips {
        let col = j * n;
        for r in 0..n - 1 {
            let idx = col + r;
            let a = x[idx + 1] - x[idx];
            let b = if along { x[idx + n] - x[idx] } else { 0.0 };
            let s = (a * a + b * b + eps * eps).sqrt();
            let (ga, gb) = (a / s, b / s);
            grad[idx] -= ga + gb;
            grad[idx + 1] += ga;
            if along {
                grad[idx + n] += gb;
            }
        }
    }
    grad
}

/// Proximal operator of `weight * TV` (unsmoothed) by projected gradient on
/// the dual, accelerated. The dual field is kept between calls so outer
/// iterations can warm-start.
#[derive(Debug, Clone)]
pub(crate) struct TvProx {
    n: usize,
    q: usize,
    stencil: Stencil,
    iters: usize,
    // dual variables per anchor: (across, along)
    dual: Vec<[f64; 2]>,
}

impl TvProx {
    pub(crate) fn new(n: usize, q: usize, stencil: Stencil, iters: usize) -> Self {
        let (strips, _) = stencil.anchor_strips(q);
        TvProx {
            n,
            q,
            stencil,
            iters,
            dual: vec![[0.0; 2]; strips * (n - 1)],
        }
    }

    fn anchors(&self) -> (usize, bool) {
        self.stencil.anchor_strips(self.q)
    }

    /// `out = z - K^T p`.
    fn primal(&self, z: &[f64], p: &[[f64; 2]], out: &mut [f64]) {
        out.copy_from_slice(z);
        let (strips, along) = self.anchors();
        let n = self.n;
        for j in 0..strips {
            for r in 0..n - 1 {
                let [pa, pb] = p[j * (n - 1) + r];
                let idx = j * n + r;
                out[idx] += pa + pb;
                out[idx + 1] -= pa;
                if along {
                    out[idx + n] -= pb;
                }
            }
        }
    }

    pub(crate) fn apply(&mut self, z: &[f64], weight: f64) -> Vec<f64> {
        let mut x = vec![0.0; z.len()];
        if weight <= 0.0 || self.dual.is_empty() {
            x.copy_from_slice(z);
            return x;
        }
        let (strips, along) = self.anchors();
        let n = self.n;
        let step = 1.0 / self.stencil.operator_norm_sq(self.q);
        let project = |v: [f64; 2]| {
            let norm = v[0].hypot(v[1]);
            if norm > weight {
                [v[0] * weight / norm, v[1] * weight / norm]
            } else {
                v
            }
        };
        for p in self.dual.iter_mut() {
            *p = project(*p);
        }
        let mut p_prev = self.dual.clone();
        let mut extrap = self.dual.clone();
        let mut t = 1.0f64;
        for _ in 0..self.iters {
            self.primal(z, &extrap, &mut x);
            for j in 0..strips {
                for r in 0..n - 1 {
                    let idx = j * n + r;
                    let a = x[idx + 1] - x[idx];
                    let b = if along { x[idx + n] - x[idx] } else { 0.0 };
                    let k = j * (n - 1) + r;
                    let e = extrap[k];
                    self.dual[k] = project([e[0] + step * a, e[1] + step * b]);
                }
            }
            let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            let beta = (t - 1.0) / t_next;
            for ((e, p), old) in extrap.iter_mut().zip(&self.dual).zip(p_prev.iter_mut()) {
                *e = [p[0] + beta * (p[0] - old[0]), p[1] + beta * (p[1] - old[1])];
                *old = *p;
            }
            t = t_next;
        }
        self.primal(z, &self.dual, &mut x);
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_is_zero() {
        let x = vec![0.3; 12];
        assert_eq!(tv_value_stacked(&x, 4, 3, 0.0).unwrap(), 0.0);
        assert_eq!(tv_value_stacked(&x, 4, 3, 1e-8).unwrap(), 0.0);
        let m = DMatrix::from_element(4, 3, 0.7);
        assert_eq!(tv_value_matrix(&m, 1e-8).unwrap(), 0.0);
    }

    #[test]
    fn stacked_index_convention() {
        // n=2, q=2: only i=1 contributes, sqrt((x2-x1)^2 + (x3-x1)^2) = 0
        assert_eq!(
            tv_value_stacked(&[0.0, 0.0, 0.0, 1.0], 2, 2, 0.0).unwrap(),
            0.0
        );
        // n=3, q=2: i in {1,2}, i=3 excluded
        let x = [0.0, 1.0, 0.0, 0.0, 1.0, 0.0];
        assert_eq!(tv_value_stacked(&x, 3, 2, 0.0).unwrap(), 2.0);
        assert!(tv_value_stacked(&x, 4, 2, 0.0).is_err());
    }

    #[test]
    fn matrix_small_cases() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        assert_eq!(tv_value_matrix(&a, 0.0).unwrap(), 0.0);
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 1.0]);
        assert!((tv_value_matrix(&b, 0.0).unwrap() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn single_strip_fallback() {
        let x = DMatrix::from_column_slice(4, 1, &[0.0, 1.0, 0.5, 0.5]);
        assert_eq!(tv_value_matrix(&x, 0.0).unwrap(), 1.5);
        assert_eq!(tv_value_stacked(x.as_slice(), 4, 1, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn smoothing_offset() {
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 1.0]);
        let eps: f64 = 1e-3;
        let expect = (2.0 + eps * eps).sqrt() - eps;
        assert!((tv_value_matrix(&b, eps).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn gradient_zero_at_constant() {
        let x = vec![0.4; 20];
        let g = tv_gradient(&x, 5, 4, Stencil::Matrix, 1e-8);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn prox_zero_weight_is_identity() {
        let z: Vec<f64> = (0..12).map(|v| v as f64 * 0.1).collect();
        let mut prox = TvProx::new(4, 3, Stencil::Stacked, 10);
        assert_eq!(prox.apply(&z, 0.0), z);
    }

    #[test]
    fn prox_decreases_prox_objective() {
        let z: Vec<f64> = (0..30).map(|v| ((v * 7919) % 13) as f64 / 13.0).collect();
        let weight = 0.2;
        let mut prox = TvProx::new(6, 5, Stencil::Matrix, 200);
        let x = prox.apply(&z, weight);
        let objective = |x: &[f64]| {
            let d: f64 = x.iter().zip(&z).map(|(a, b)| (a - b).powi(2)).sum();
            0.5 * d + weight * tv_value(x, 6, 5, Stencil::Matrix, 0.0)
        };
        let at_prox = objective(&x);
        assert!(at_prox < objective(&z));
        // no small perturbation does better
        for k in 0..30 {
            for delta in [1e-3, -1e-3] {
                let mut y = x.clone();
                y[k] += delta;
                assert!(objective(&y) >= at_prox - 1e-6, "coordinate {k}");
            }
        }
    }
}
