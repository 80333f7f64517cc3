//! Dense linear algebra, activations, the loss, and the finite-difference
//! oracle used to check every analytic gradient in the crate.
//!
//! Everything here computes in `f64`. Embeddings are stored as `f32` on disk
//! and widened when a task view is built.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norm guard for the cosine classifier.
pub const NORM_EPS: f64 = 1e-8;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::dim("ragged rows"));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `W x + b`.
pub fn affine_forward(x: &[f64], w: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if w.cols != x.len() || w.rows != b.len() {
        return Err(Error::dim(format!(
            "affine: W is {}x{}, x has {}, b has {}",
            w.rows,
            w.cols,
            x.len(),
            b.len()
        )));
    }
    Ok((0..w.rows).map(|i| dot(w.row(i), x) + b[i]).collect())
}

/// Accumulates `dW += dy x^T` and `db += dy`; returns `W^T dy` when asked.
/// Shapes are the caller's responsibility.
pub fn affine_backward(
    x: &[f64],
    w: &DenseMatrix,
    dy: &[f64],
    dw: &mut DenseMatrix,
    db: &mut [f64],
    want_dx: bool,
) -> Option<Vec<f64>> {
    debug_assert_eq!(dw.rows, w.rows);
    debug_assert_eq!(dw.cols, w.cols);
    for (i, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        db[i] += g;
        for (d, &xv) in dw.row_mut(i).iter_mut().zip(x) {
            *d += g * xv;
        }
    }
    want_dx.then(|| {
        let mut dx = vec![0.0; w.cols];
        for (i, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (d, &wv) in dx.iter_mut().zip(w.row(i)) {
                *d += g * wv;
            }
        }
        dx
    })
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// Gradient through `relu`, given the pre-activation.
pub fn relu_backward(pre: &[f64], dy: &[f64]) -> Vec<f64> {
    pre.iter()
        .zip(dy)
        .map(|(&p, &g)| if p > 0.0 { g } else { 0.0 })
        .collect()
}

// Double-double helpers: the cosine is evaluated with ~106 bits and rounded
// once, so inputs that differ by an exact positive scale give identical logits.

#[derive(Clone, Copy)]
struct Dd(f64, f64);

impl Dd {
    #[inline]
    fn two_sum(a: f64, b: f64) -> Dd {
        let s = a + b;
        let bb = s - a;
        Dd(s, (a - (s - bb)) + (b - bb))
    }

    #[inline]
    fn two_prod(a: f64, b: f64) -> Dd {
        let p = a * b;
        Dd(p, a.mul_add(b, -p))
    }

    #[inline]
    fn add(self, o: Dd) -> Dd {
        let s = Dd::two_sum(self.0, o.0);
        let t = Dd::two_sum(self.1, o.1);
        let hi = Dd::two_sum(s.0, s.1 + t.0);
        Dd::two_sum(hi.0, hi.1 + t.1)
    }

    #[inline]
    fn mul(self, o: Dd) -> Dd {
        let p = Dd::two_prod(self.0, o.0);
        Dd::two_sum(p.0, p.1 + (self.0 * o.1 + self.1 * o.0))
    }

    fn div(self, o: Dd) -> Dd {
        let q1 = self.0 / o.0;
        let r = self.add(o.mul(Dd(-q1, 0.0)));
        let q2 = r.0 / o.0;
        let r = r.add(o.mul(Dd(-q2, 0.0)));
        let q3 = r.0 / o.0;
        Dd::two_sum(q1, q2).add(Dd(q3, 0.0))
    }

    fn sqrt(self) -> Dd {
        if self.0 <= 0.0 {
            return Dd(0.0, 0.0);
        }
        let x = self.0.sqrt();
        let sq = Dd::two_prod(x, x);
        let r = self.add(Dd(-sq.0, -sq.1));
        Dd::two_sum(x, r.0 / (2.0 * x))
    }

    fn dot(a: &[f64], b: &[f64]) -> Dd {
        a.iter()
            .zip(b)
            .fold(Dd(0.0, 0.0), |acc, (&x, &y)| acc.add(Dd::two_prod(x, y)))
    }
}

/// `sigma * (W_x . f) / (max(|W_x|, eps) * max(|f|, eps))` for every row `x`.
pub fn cosine_logits(f: &[f64], w: &DenseMatrix, sigma: f64, eps: f64) -> Result<Vec<f64>> {
    if w.cols != f.len() {
        return Err(Error::dim(format!(
            "cosine: W has {} columns, f has {}",
            w.cols,
            f.len()
        )));
    }
    let guard = |n: Dd| if n.0 > eps { n } else { Dd(eps, 0.0) };
    let nf = guard(Dd::dot(f, f).sqrt());
    Ok((0..w.rows)
        .map(|x| {
            let wx = w.row(x);
            let nw = guard(Dd::dot(wx, wx).sqrt());
            let c = Dd::dot(wx, f).div(nw.mul(nf));
            let z = Dd(sigma, 0.0).mul(c);
            z.0 + z.1
        })
        .collect())
}

/// Reverse pass of [`cosine_logits`]: accumulates into `dw` and returns `df`.
///
/// A norm clamped at `eps` is treated as a constant.
pub fn cosine_logits_backward(
    f: &[f64],
    w: &DenseMatrix,
    sigma: f64,
    eps: f64,
    dz: &[f64],
    dw: &mut DenseMatrix,
) -> Vec<f64> {
    let nf_raw = l2_norm(f);
    let f_active = nf_raw > eps;
    let nf = if f_active { nf_raw } else { eps };
    let mut df = vec![0.0; f.len()];
    for (x, &g) in dz.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let wx = w.row(x);
        let nw_raw = l2_norm(wx);
        let w_active = nw_raw > eps;
        let nw = if w_active { nw_raw } else { eps };
        let s = dot(wx, f);
        let k = g * sigma / (nw * nf);
        let kf = if f_active { k * s / (nf * nf) } else { 0.0 };
        let kw = if w_active { k * s / (nw * nw) } else { 0.0 };
        for ((d, &wv), &fv) in df.iter_mut().zip(wx).zip(f) {
            *d += k * wv - kf * fv;
        }
        for ((d, &wv), &fv) in dw.row_mut(x).iter_mut().zip(wx).zip(f) {
            *d += k * fv - kw * wv;
        }
    }
    df
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Softmax cross-entropy with the max-shift; returns the loss and
/// `softmax(logits) - onehot(label)`.
pub fn softmax_ce_loss(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::Index {
            index: label,
            len: logits.len(),
        });
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = logits.iter().map(|&z| z - m).collect();
    let sum: f64 = shifted.iter().map(|v| v.exp()).sum();
    let loss = sum.ln() - shifted[label];
    let mut d: Vec<f64> = shifted.iter().map(|v| v.exp() / sum).collect();
    d[label] -= 1.0;
    Ok((loss, d))
}

/// Central differences `(L(p + h e_i) - L(p - h e_i)) / 2h` per coordinate.
pub fn finite_diff_grad<F>(mut loss_fn: F, params: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let plus = loss_fn(&p);
            p[i] = orig - h;
            let minus = loss_fn(&p);
            p[i] = orig;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Largest `|a - b| / max(|a|, |b|, floor)` over paired entries.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
