//! Sparse symmetric matrices, dense eigensolvers and Sylvester inertia counts.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Symmetric matrix stored as its diagonal plus the strict upper triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    diag: Vec<f64>,
    /// `(row, col, value)` with `row < col`; each pair appears once.
    upper: Vec<(usize, usize, f64)>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        SymMatrix {
            diag: vec![0.0; n],
            upper: Vec::new(),
        }
    }

    pub fn from_parts(diag: Vec<f64>, upper: Vec<(usize, usize, f64)>) -> Self {
        let upper = upper
            .into_iter()
            .map(|(i, j, v)| if i < j { (i, j, v) } else { (j, i, v) })
            .collect();
        SymMatrix { diag, upper }
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn diag_mut(&mut self) -> &mut [f64] {
        &mut self.diag
    }

    pub fn upper(&self) -> &[(usize, usize, f64)] {
        &self.upper
    }

    /// Adds `v` to the symmetric pair `(i, j)`; `i == j` touches the diagonal.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        if i == j {
            self.diag[i] += v;
            return;
        }
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        if let Some(entry) = self.upper.iter_mut().find(|e| e.0 == a && e.1 == b) {
            entry.2 += v;
        } else {
            self.upper.push((a, b, v));
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return self.diag[i];
        }
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        self.upper
            .iter()
            .filter(|e| e.0 == a && e.1 == b)
            .map(|e| e.2)
            .sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for (i, &d) in self.diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        for &(i, j, v) in &self.upper {
            m[(i, j)] += v;
            m[(j, i)] += v;
        }
        m
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y: Vec<f64> = self.diag.iter().zip(x).map(|(d, xi)| d * xi).collect();
        for &(i, j, v) in &self.upper {
            y[i] += v * x[j];
            y[j] += v * x[i];
        }
        y
    }

    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        let mut s: f64 = self
            .diag
            .iter()
            .zip(x)
            .map(|(d, xi)| d * xi * xi)
            .sum();
        for &(i, j, v) in &self.upper {
            s += 2.0 * v * x[i] * x[j];
        }
        s
    }

    /// Largest absolute row sum, an upper bound for the spectral norm.
    pub fn inf_norm(&self) -> f64 {
        let mut rows: Vec<f64> = self.diag.iter().map(|d| d.abs()).collect();
        for &(i, j, v) in &self.upper {
            rows[i] += v.abs();
            rows[j] += v.abs();
        }
        rows.into_iter().fold(0.0, f64::max)
    }

    pub fn trace(&self) -> f64 {
        self.diag.iter().sum()
    }

    pub fn bandwidth(&self) -> usize {
        self.upper.iter().map(|&(i, j, _)| j - i).max().unwrap_or(0)
    }

    /// Coordinate-triplet text dump: a `# rows cols nnz` header line then one
    /// `row col value` line per stored entry, both triangles written.
    pub fn write_triplets<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.dim();
        let nnz = n + 2 * self.upper.len();
        writeln!(w, "# {n} {n} {nnz}")?;
        let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(nnz);
        for (i, &d) in self.diag.iter().enumerate() {
            entries.push((i, i, d));
        }
        for &(i, j, v) in &self.upper {
            entries.push((i, j, v));
            entries.push((j, i, v));
        }
        entries.sort_by_key(|a| (a.0, a.1));
        for (i, j, v) in entries {
            writeln!(w, "{i} {j} {v:.17e}")?;
        }
        Ok(())
    }

    /// Number of eigenvalues strictly below `shift`.
    pub fn count_below(&self, shift: f64) -> usize {
        let lim = pivot_floor(self);
        if self.bandwidth() <= 1 {
            // tridiagonal Sturm sequence
            let n = self.dim();
            let mut off = vec![0.0; n];
            for &(i, j, v) in &self.upper {
                if j == i + 1 {
                    off[i] += v;
                }
            }
            let mut count = 0;
            let mut q = 0.0f64;
            for i in 0..n {
                let prev = if i == 0 { 0.0 } else { off[i - 1] * off[i - 1] / q };
                q = self.diag[i] - shift - prev;
                if q.abs() < lim {
                    q = -lim;
                }
                if q < 0.0 {
                    count += 1;
                }
            }
            return count;
        }
        BandLdl::new(self, shift).negative
    }
}

fn pivot_floor(m: &SymMatrix) -> f64 {
    (f64::MIN_POSITIVE * 1e10).max(1e-300) * (1.0 + m.inf_norm())
}

/// Banded `L D L^T` factorization without pivoting, used only for its
/// inertia. Vanishing pivots are replaced by a tiny negative value in the
/// same way the tridiagonal Sturm count does.
struct BandLdl {
    negative: usize,
}

impl BandLdl {
    fn new(m: &SymMatrix, shift: f64) -> Self {
        let n = m.dim();
        let bw = m.bandwidth();
        let lim = pivot_floor(m);
        // band[i][k] holds A(i, i - bw + k) for k in 0..=bw (lower band, row-wise)
        let w = bw + 1;
        let mut band = vec![0.0; n * w];
        for i in 0..n {
            band[i * w + bw] = m.diag[i] - shift;
        }
        for &(i, j, v) in &m.upper {
            // lower entry (j, i) with j > i
            band[j * w + (bw - (j - i))] += v;
        }
        let mut d = vec![0.0; n];
        let mut negative = 0;
        for i in 0..n {
            let jlo = i.saturating_sub(bw);
            // L(i, j) * d(j) stored in place of A(i, j) for j < i
            for j in jlo..i {
                let mut s = band[i * w + (bw - (i - j))];
                let klo = jlo.max(j.saturating_sub(bw));
                for k in klo..j {
                    let lik = band[i * w + (bw - (i - k))];
                    let ljk = band[j * w + (bw - (j - k))];
                    s -= lik * ljk * d[k];
                }
                band[i * w + (bw - (i - j))] = s / d[j];
            }
            let mut s = band[i * w + bw];
            for k in jlo..i {
                let lik = band[i * w + (bw - (i - k))];
                s -= lik * lik * d[k];
            }
            if s.abs() < lim {
                s = -lim;
            }
            d[i] = s;
            if s < 0.0 {
                negative += 1;
            }
        }
        BandLdl { negative }
    }
}

/// All eigenvalues (ascending) and the matching orthonormal eigenvectors.
pub fn dense_eigh(m: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    if n == 0 {
        return Ok((Vec::new(), DMatrix::zeros(0, 0)));
    }
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::NoConvergence("symmetric QR iteration".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (c, &k) in order.iter().enumerate() {
        vectors.set_column(c, &eig.eigenvectors.column(k));
    }
    Ok((values, vectors))
}

pub fn dense_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let vals = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::NoConvergence("symmetric QR iteration".into()))?
        .eigenvalues;
    let mut v: Vec<f64> = vals.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Cyclic Jacobi rotations; slow but independent of the QR path above.
pub fn jacobi_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = m.nrows();
    let mut a = m.clone();
    let scale = a.iter().fold(0.0f64, |s, x| s.max(x.abs())).max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off.sqrt() <= 1e-15 * scale * (n as f64) {
            let mut v: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
            v.sort_by(f64::total_cmp);
            return Ok(v);
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    Err(Error::NoConvergence("cyclic Jacobi".into()))
}

/// Sorted clusters `(value, multiplicity)` of a monotone counting function
/// inside `[lo, hi]`. `count(x)` must be non-decreasing; jumps are located by
/// interval bisection to width `tol`.
pub fn locate_jumps<F: FnMut(f64) -> usize>(
    mut count: F,
    lo: f64,
    hi: f64,
    tol: f64,
) -> Vec<(f64, usize)> {
    let clo = count(lo);
    let chi = count(hi);
    let mut out = Vec::new();
    split(&mut count, lo, hi, clo, chi, tol, &mut out);
    out
}

fn split<F: FnMut(f64) -> usize>(
    count: &mut F,
    a: f64,
    b: f64,
    ca: usize,
    cb: usize,
    tol: f64,
    out: &mut Vec<(f64, usize)>,
) {
    if cb <= ca {
        return;
    }
    if b - a <= tol {
        out.push((0.5 * (a + b), cb - ca));
        return;
    }
    let mid = 0.5 * (a + b);
    if mid <= a || mid >= b {
        out.push((mid, cb - ca));
        return;
    }
    let cm = count(mid).clamp(ca, cb);
    split(count, a, mid, ca, cm, tol, out);
    split(count, mid, b, cm, cb, tol, out);
}

pub fn dvector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}
