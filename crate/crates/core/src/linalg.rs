//! Sparse symmetric positive definite solvers for the Dirichlet systems.
//!
//! Rows are numbered in BFS order from the ball centre. A vertex at distance
//! `r` only couples to distances `r-1..=r+1`, so every row's nonzeros lie in a
//! narrow band to the left of the diagonal. The envelope (skyline) Cholesky
//! factor has no fill outside that band.

use crate::error::{Error, Result};

/// Symmetric matrix in CSR form; both triangles stored.
#[derive(Debug, Clone)]
pub struct SymCsr {
    n: usize,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SymCsr {
    /// Builds from per-row `(col, value)` lists. Duplicates are summed.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        offsets.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                if last == Some(c) {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                    last = Some(c);
                }
            }
            offsets.push(cols.len());
        }
        SymCsr { n, offsets, cols, vals }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (s, e) = (self.offsets[i], self.offsets[i + 1]);
        self.cols[s..e].iter().copied().zip(self.vals[s..e].iter().copied())
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row(i).map(|(c, v)| v * x[c]).sum();
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).find(|&(c, _)| c == i).map_or(0.0, |(_, v)| v)).collect()
    }

    /// Sum over rows of the squared envelope width: the factorization cost.
    pub fn envelope_cost(&self) -> usize {
        (0..self.n)
            .map(|i| {
                let first = self.row(i).map(|(c, _)| c).min().unwrap_or(i).min(i);
                let w = i - first + 1;
                w * w
            })
            .sum()
    }
}

/// Cholesky factor `K = L L^T` stored row-wise over each row's envelope.
#[derive(Debug, Clone)]
pub struct EnvelopeCholesky {
    first: Vec<usize>,
    rows: Vec<Vec<f64>>,
}

impl EnvelopeCholesky {
    pub fn factor(k: &SymCsr) -> Result<Self> {
        let n = k.dim();
        let mut first = Vec::with_capacity(n);
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            let f = k.row(i).map(|(c, _)| c).filter(|&c| c <= i).min().unwrap_or(i);
            let mut row = vec![0.0; i - f + 1];
            for (c, v) in k.row(i) {
                if c <= i {
                    row[c - f] = v;
                }
            }
            for j in f..i {
                let fj = first[j];
                let lo = f.max(fj);
                let rj: &Vec<f64> = &rows[j];
                let mut s = row[j - f];
                for m in lo..j {
                    s -= row[m - f] * rj[m - fj];
                }
                row[j - f] = s / rj[j - fj];
            }
            let d = row[i - f] - row[..i - f].iter().map(|x| x * x).sum::<f64>();
            if d <= 0.0 || !d.is_finite() {
                return Err(Error::Numeric {
                    message: format!("matrix is not positive definite at row {i}"),
                    residual: d,
                });
            }
            row[i - f] = d.sqrt();
            first.push(f);
            rows.push(row);
        }
        Ok(EnvelopeCholesky { first, rows })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.rows.len();
        let mut y = b.to_vec();
        for i in 0..n {
            let f = self.first[i];
            let row = &self.rows[i];
            let s: f64 = (f..i).map(|m| row[m - f] * y[m]).sum();
            y[i] = (y[i] - s) / row[i - f];
        }
        for i in (0..n).rev() {
            let f = self.first[i];
            let row = &self.rows[i];
            y[i] /= row[i - f];
            let xi = y[i];
            for m in f..i {
                y[m] -= row[m - f] * xi;
            }
        }
        y
    }
}

/// Jacobi-preconditioned conjugate gradients; stops at relative residual `tol`.
pub fn conjugate_gradient(k: &SymCsr, b: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = k.dim();
    let diag = k.diagonal();
    let bnorm = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(ri, d)| ri / d).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut kp = vec![0.0; n];
    for _ in 0..max_iter {
        k.mul_vec(&p, &mut kp);
        let alpha = rz / p.iter().zip(&kp).map(|(a, b)| a * b).sum::<f64>();
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * kp[i];
        }
        let rnorm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        if rnorm <= tol * bnorm {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let rnorm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
    Err(Error::Numeric { message: "conjugate gradients did not converge".into(), residual: rnorm / bnorm })
}
