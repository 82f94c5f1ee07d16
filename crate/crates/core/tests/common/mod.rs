//! Independent oracles shared by the integration and acceptance tests. None of
//! these go through the library's assembly, stencil or gradient code.

#![allow(dead_code)]

use gisc_core::{Mode, PatternSequence};
use nalgebra::{DMatrix, DVector};

/// `A_i` built row by row from its definition, 1-based `i`.
pub fn strip_matrix_by_definition(seq: &PatternSequence, i: usize) -> DMatrix<f64> {
    let (m, n) = (seq.m(), seq.n());
    let mut a = DMatrix::zeros(m, n);
    for j in 1..=m {
        let k = match seq.mode() {
            Mode::Method1 => 1,
            Mode::Method2 => i + j - 1,
        };
        let pattern = seq.patterns()[k - 1].data();
        for c in 0..n {
            a[(j - 1, c)] = pattern[(j - 1, c)];
        }
    }
    a
}

/// Dense block-diagonal `A` of size `(m q) x (n q)`.
pub fn dense_block_diagonal(seq: &PatternSequence, q: usize) -> DMatrix<f64> {
    let (m, n) = (seq.m(), seq.n());
    let mut a = DMatrix::zeros(m * q, n * q);
    for i in 1..=q {
        let block = strip_matrix_by_definition(seq, i);
        for r in 0..m {
            for c in 0..n {
                a[((i - 1) * m + r, (i - 1) * n + c)] = block[(r, c)];
            }
        }
    }
    a
}

/// `Y = A X` with `X` the column-stacked scene.
pub fn stacked_product(seq: &PatternSequence, scene: &DMatrix<f64>) -> DVector<f64> {
    let x = DVector::from_column_slice(scene.as_slice());
    dense_block_diagonal(seq, scene.ncols()) * x
}

fn term(a: f64, b: f64, eps: f64) -> f64 {
    if eps > 0.0 {
        (a * a + b * b + eps * eps).sqrt() - eps
    } else {
        (a * a + b * b).sqrt()
    }
}

/// Stacked-vector TV by literal 1-based summation over `1 <= i <= qn - n`,
/// skipping every `i` that is a multiple of `n`.
pub fn tv_stacked_direct(x: &[f64], n: usize, q: usize, eps: f64) -> f64 {
    let at = |i: usize| x[i - 1];
    let mut total = 0.0;
    let upper = q * n - n;
    for i in 1..=upper {
        if i % n == 0 {
            continue;
        }
        total += term(at(i + 1) - at(i), at(i + n) - at(i), eps);
    }
    total
}

/// Matrix TV by literal 1-based summation over `1 <= i <= n-1`, `1 <= j <= q-1`.
pub fn tv_matrix_direct(x: &DMatrix<f64>, eps: f64) -> f64 {
    let (n, q) = x.shape();
    let at = |i: usize, j: usize| x[(i - 1, j - 1)];
    let mut total = 0.0;
    for i in 1..n {
        for j in 1..q {
            total += term(at(i + 1, j) - at(i, j), at(i, j + 1) - at(i, j), eps);
        }
    }
    total
}

/// Central differences of `f` at `x` with step `h`.
pub fn central_difference(
    f: impl Fn(&DMatrix<f64>) -> f64,
    x: &DMatrix<f64>,
    h: f64,
) -> DMatrix<f64> {
    let mut grad = DMatrix::zeros(x.nrows(), x.ncols());
    let mut probe = x.clone();
    for idx in 0..x.len() {
        let orig = probe[idx];
        probe[idx] = orig + h;
        let up = f(&probe);
        probe[idx] = orig - h;
        let down = f(&probe);
        probe[idx] = orig;
        grad[idx] = (up - down) / (2.0 * h);
    }
    grad
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && values[order[end + 1]] == values[order[start]] {
            end += 1;
        }
        let avg = (start + end) as f64 / 2.0 + 1.0;
        for &idx in &order[start..=end] {
            ranks[idx] = avg;
        }
        start = end + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mx, my) = (mean(&rx), mean(&ry));
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if norm == 0.0 {
        diff
    } else {
        diff / norm
    }
}
