//! Dense linear algebra used by mode extraction and stepsize selection.
//!
//! * [`truncated_svd`]: Householder QR followed by one-sided Jacobi on the
//!   triangular factor.
//! * [`eig_small`]: Hessenberg reduction plus Francis double-shift QR with
//!   eigenvector back-substitution, for small real non-symmetric matrices.
//! * [`max_singular_value`]: restarted Lanczos on `A^T A` for any
//!   [`LinearMap`].
//!
//! All routines are deterministic: fixed sweep orders, fixed start vectors.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A real linear operator given by its forward and adjoint actions.
pub trait LinearMap: Send + Sync {
    fn dim_in(&self) -> usize;
    fn dim_out(&self) -> usize;
    /// `out = A x`.
    fn apply(&self, x: &[f64], out: &mut [f64]);
    /// `out = A^T y`.
    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]);
}

/// Identity on `R^n`.
#[derive(Debug, Clone, Copy)]
pub struct Identity(pub usize);

impl LinearMap for Identity {
    fn dim_in(&self) -> usize {
        self.0
    }
    fn dim_out(&self) -> usize {
        self.0
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
    }
    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        out.copy_from_slice(y);
    }
}

/// A dense real matrix as a linear map.
#[derive(Debug, Clone)]
pub struct DenseMap(pub DMatrix<f64>);

impl LinearMap for DenseMap {
    fn dim_in(&self) -> usize {
        self.0.ncols()
    }
    fn dim_out(&self) -> usize {
        self.0.nrows()
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let a = &self.0;
        out.fill(0.0);
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                for (o, &aij) in out.iter_mut().zip(a.column(j).iter()) {
                    *o += aij * xj;
                }
            }
        }
    }
    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.0.column(j).iter().zip(y).map(|(a, b)| a * b).sum();
        }
    }
}

/// A dense complex matrix acting on `(Re x; Im x)`, producing `(Re Ax; Im Ax)`.
/// Its singular values are those of the complex matrix, each repeated twice.
#[derive(Debug, Clone)]
pub struct ComplexDenseMap(pub DMatrix<Complex64>);

impl LinearMap for ComplexDenseMap {
    fn dim_in(&self) -> usize {
        2 * self.0.ncols()
    }
    fn dim_out(&self) -> usize {
        2 * self.0.nrows()
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let (rows, cols) = self.0.shape();
        let mut acc = vec![Complex64::new(0.0, 0.0); rows];
        for j in 0..cols {
            let xj = Complex64::new(x[j], x[cols + j]);
            for (i, a) in self.0.column(j).iter().enumerate() {
                acc[i] += a * xj;
            }
        }
        for (i, v) in acc.iter().enumerate() {
            out[i] = v.re;
            out[rows + i] = v.im;
        }
    }
    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        let (rows, cols) = self.0.shape();
        for j in 0..cols {
            let mut acc = Complex64::new(0.0, 0.0);
            for (i, a) in self.0.column(j).iter().enumerate() {
                acc += a.conj() * Complex64::new(y[i], y[rows + i]);
            }
            out[j] = acc.re;
            out[cols + j] = acc.im;
        }
    }
}

const MAX_OPERATOR_APPLICATIONS: usize = 10_000;
const LANCZOS_BLOCK: usize = 48;

/// Largest singular value of `map`: restarted Lanczos on `A^T A` with full
/// reorthogonalization, from a fixed pseudo-random start. Returns 0 for the
/// zero operator.
pub fn max_singular_value(map: &dyn LinearMap) -> Result<f64> {
    let (n, m) = (map.dim_in(), map.dim_out());
    if n == 0 || m == 0 {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    let mut start: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    normalize(&mut start);
    let mut av = vec![0.0; m];
    let mut applications = 0;
    let mut prev_theta = f64::NAN;
    loop {
        let block = LANCZOS_BLOCK.min(n);
        let mut basis: Vec<Vec<f64>> = vec![start.clone()];
        let mut alphas = Vec::with_capacity(block);
        let mut betas: Vec<f64> = Vec::with_capacity(block);
        let mut last_beta = 0.0;
        for j in 0..block {
            let mut w = vec![0.0; n];
            map.apply(&basis[j], &mut av);
            map.apply_adjoint(&av, &mut w);
            applications += 1;
            let alpha = dot(&basis[j], &w);
            if !alpha.is_finite() {
                return Err(Error::Numerical("Lanczos produced a non-finite iterate".into()));
            }
            alphas.push(alpha);
            for _ in 0..2 {
                for q in &basis {
                    let c = dot(q, &w);
                    w.iter_mut().zip(q).for_each(|(wi, qi)| *wi -= c * qi);
                }
            }
            let beta = norm2(&w);
            last_beta = beta;
            if j + 1 == block || beta <= 1e-13 * alpha.abs().max(f64::MIN_POSITIVE) {
                break;
            }
            betas.push(beta);
            w.iter_mut().for_each(|x| *x /= beta);
            basis.push(w);
        }

        let k = alphas.len();
        let mut t = DMatrix::<f64>::zeros(k, k);
        for i in 0..k {
            t[(i, i)] = alphas[i];
            if i + 1 < k {
                t[(i, i + 1)] = betas[i];
                t[(i + 1, i)] = betas[i];
            }
        }
        let eig = nalgebra::SymmetricEigen::new(t);
        let top =
            (0..k).max_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(b.cmp(&a))).unwrap_or(0);
        let theta = eig.eigenvalues[top];
        if !(theta > 0.0) {
            return Ok(0.0);
        }
        let y = eig.eigenvectors.column(top);
        let residual = (last_beta * y[k - 1]).abs();
        if residual <= 1e-10 * theta || (theta - prev_theta).abs() <= 1e-14 * theta {
            return Ok(theta.sqrt());
        }
        if applications >= MAX_OPERATOR_APPLICATIONS {
            return Err(Error::Numerical(format!(
                "singular value estimate did not converge in {MAX_OPERATOR_APPLICATIONS} operator applications"
            )));
        }
        prev_theta = theta;
        start.fill(0.0);
        for (q, &c) in basis.iter().zip(y.iter()) {
            start.iter_mut().zip(q).for_each(|(s, qi)| *s += c * qi);
        }
        normalize(&mut start);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normalize(v: &mut [f64]) {
    let n = norm2(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Rank-`r` truncated SVD `X ~ U diag(S) V^T`.
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub v: DMatrix<f64>,
    /// Set when the requested rank exceeded the numerical rank and was
    /// lowered to it.
    pub rank_reduced: bool,
}

impl TruncatedSvd {
    pub fn rank(&self) -> usize {
        self.s.len()
    }
}

pub fn truncated_svd(x: &DMatrix<f64>, r: usize) -> Result<TruncatedSvd> {
    let (rows, cols) = x.shape();
    if r == 0 || r > rows.min(cols) {
        return Err(Error::Input(format!("rank {r} outside 1..={} for a {rows}x{cols} matrix", rows.min(cols))));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("matrix has non-finite entries".into()));
    }
    let (u, s, v) = thin_svd(x)?;
    let numerical_rank = numerical_rank(&s, rows.max(cols));
    if numerical_rank == 0 {
        return Err(Error::Numerical("matrix is numerically zero".into()));
    }
    let keep = r.min(numerical_rank);
    Ok(TruncatedSvd {
        u: u.columns(0, keep).into_owned(),
        s: s[..keep].to_vec(),
        v: v.columns(0, keep).into_owned(),
        rank_reduced: keep < r,
    })
}

/// Singular values (descending) of `x`.
pub fn singular_values(x: &DMatrix<f64>) -> Result<Vec<f64>> {
    Ok(thin_svd(x)?.1)
}

fn numerical_rank(s: &[f64], dim: usize) -> usize {
    let Some(&top) = s.first() else { return 0 };
    if top == 0.0 {
        return 0;
    }
    let tol = top * dim as f64 * f64::EPSILON;
    s.iter().take_while(|&&v| v > tol).count()
}

/// Thin SVD with `k = min(rows, cols)` triplets, singular values descending,
/// each `u` column's largest-magnitude entry made positive.
pub(crate) fn thin_svd(x: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    let (rows, cols) = x.shape();
    if rows < cols {
        let (u, s, v) = thin_svd(&x.transpose())?;
        return Ok((v, s, u));
    }
    let qr = x.clone().qr();
    let q = qr.q();
    let r = qr.r();
    let (ur, s, v) = jacobi_svd(r)?;
    let mut u = q * ur;
    let mut v = v;
    for j in 0..s.len() {
        let col = u.column(j);
        let mut best = 0;
        for i in 1..col.len() {
            if col[i].abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            u.column_mut(j).neg_mut();
            v.column_mut(j).neg_mut();
        }
    }
    Ok((u, s, v))
}

const JACOBI_MAX_SWEEPS: usize = 80;

/// One-sided (Hestenes) Jacobi SVD of a square matrix.
fn jacobi_svd(mut a: DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    let n = a.ncols();
    let rows = a.nrows();
    let mut v = DMatrix::<f64>::identity(n, n);
    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..rows {
                    let (ap, aq) = (a[(i, p)], a[(i, q)]);
                    alpha += ap * ap;
                    beta += aq * aq;
                    gamma += ap * aq;
                }
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let (ap, aq) = (a[(i, p)], a[(i, q)]);
                    a[(i, p)] = c * ap - s * aq;
                    a[(i, q)] = s * ap + c * aq;
                }
                for i in 0..n {
                    let (vp, vq) = (v[(i, p)], v[(i, q)]);
                    v[(i, p)] = c * vp - s * vq;
                    v[(i, q)] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical(format!("Jacobi SVD did not converge in {JACOBI_MAX_SWEEPS} sweeps")));
    }

    let norms: Vec<f64> = (0..n).map(|j| a.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));

    let mut u = DMatrix::<f64>::zeros(rows, n);
    let mut vs = DMatrix::<f64>::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    for (k, &j) in order.iter().enumerate() {
        let sigma = norms[j];
        s.push(sigma);
        if sigma > 0.0 {
            u.set_column(k, &(a.column(j) / sigma));
        }
        vs.set_column(k, &v.column(j));
    }
    Ok((u, s, vs))
}

/// Eigen-decomposition of a small real matrix.
#[derive(Debug, Clone)]
pub struct SmallEig {
    pub values: Vec<Complex64>,
    /// Eigenvectors as columns, unit 2-norm, largest-magnitude entry real
    /// and positive.
    pub vectors: DMatrix<Complex64>,
}

/// Full spectrum of a real square matrix. Complex eigenvalues come out as
/// adjacent pairs, the one with positive imaginary part first, and the second
/// member of each pair (value and vector) is the exact conjugate of the first.
pub fn eig_small(a: &DMatrix<f64>) -> Result<SmallEig> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::dim(format!("eig_small needs a square matrix, got {}x{}", n, a.ncols())));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("matrix has non-finite entries".into()));
    }
    if n == 0 {
        return Ok(SmallEig { values: vec![], vectors: DMatrix::zeros(0, 0) });
    }
    let mut h = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    hessenberg(&mut h, &mut v);
    let (d, e) = schur_vectors(&mut h, &mut v)?;

    let mut values = Vec::with_capacity(n);
    let mut vectors = DMatrix::<Complex64>::zeros(n, n);
    let mut j = 0;
    while j < n {
        if e[j] == 0.0 {
            let mut col: Vec<Complex64> = (0..n).map(|i| Complex64::new(v[(i, j)], 0.0)).collect();
            normalize_phase(&mut col);
            values.push(Complex64::new(d[j], 0.0));
            vectors.set_column(j, &nalgebra::DVector::from_vec(col));
            j += 1;
        } else {
            // columns (j, j+1) hold Re and Im of the eigenvector for d + i e
            let (re_col, im_col, imag) = if e[j] > 0.0 { (j, j + 1, e[j]) } else { (j, j + 1, -e[j]) };
            let sign = if e[j] > 0.0 { 1.0 } else { -1.0 };
            let mut col: Vec<Complex64> =
                (0..n).map(|i| Complex64::new(v[(i, re_col)], sign * v[(i, im_col)])).collect();
            normalize_phase(&mut col);
            let lead = Complex64::new(d[j], imag);
            values.push(lead);
            values.push(lead.conj());
            let conj: Vec<Complex64> = col.iter().map(|c| c.conj()).collect();
            vectors.set_column(j, &nalgebra::DVector::from_vec(col));
            vectors.set_column(j + 1, &nalgebra::DVector::from_vec(conj));
            j += 2;
        }
    }
    Ok(SmallEig { values, vectors })
}

/// Unit 2-norm, then rotate so the largest-magnitude entry (first on ties)
/// is positive real.
fn normalize_phase(col: &mut [Complex64]) {
    let norm = col.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 {
        return;
    }
    let mut best = 0;
    for i in 1..col.len() {
        if col[i].norm() > col[best].norm() {
            best = i;
        }
    }
    let phase = col[best] / col[best].norm();
    let scale = phase.conj() / norm;
    for c in col.iter_mut() {
        *c *= scale;
    }
    col[best] = Complex64::new(col[best].re, 0.0);
}

/// Householder reduction to upper Hessenberg form, accumulating the
/// orthogonal similarity into `v`.
fn hessenberg(h: &mut DMatrix<f64>, v: &mut DMatrix<f64>) {
    let n = h.nrows();
    if n < 3 {
        return;
    }
    let high = n - 1;
    let mut ort = vec![0.0; n];
    for m in 1..high {
        let scale: f64 = (m..=high).map(|i| h[(i, m - 1)].abs()).sum();
        if scale == 0.0 {
            continue;
        }
        let mut hh = 0.0;
        for i in (m..=high).rev() {
            ort[i] = h[(i, m - 1)] / scale;
            hh += ort[i] * ort[i];
        }
        let mut g = hh.sqrt();
        if ort[m] > 0.0 {
            g = -g;
        }
        hh -= ort[m] * g;
        ort[m] -= g;

        for j in m..n {
            let mut f = 0.0;
            for i in (m..=high).rev() {
                f += ort[i] * h[(i, j)];
            }
            f /= hh;
            for i in m..=high {
                h[(i, j)] -= f * ort[i];
            }
        }
        for i in 0..=high {
            let mut f = 0.0;
            for j in (m..=high).rev() {
                f += ort[j] * h[(i, j)];
            }
            f /= hh;
            for j in m..=high {
                h[(i, j)] -= f * ort[j];
            }
        }
        ort[m] *= scale;
        h[(m, m - 1)] = scale * g;
    }

    v.fill_with_identity();
    for m in (1..high).rev() {
        if h[(m, m - 1)] == 0.0 {
            continue;
        }
        for i in m + 1..=high {
            ort[i] = h[(i, m - 1)];
        }
        for j in m..=high {
            let mut g = 0.0;
            for i in m..=high {
                g += ort[i] * v[(i, j)];
            }
            g = (g / ort[m]) / h[(m, m - 1)];
            for i in m..=high {
                v[(i, j)] += g * ort[i];
            }
        }
    }
}

fn cdiv(xr: f64, xi: f64, yr: f64, yi: f64) -> (f64, f64) {
    let q = Complex64::new(xr, xi) / Complex64::new(yr, yi);
    (q.re, q.im)
}

/// Francis double-shift QR on an upper Hessenberg `h`, then back-substitution
/// for the eigenvectors, transformed back through `v`. Returns real and
/// imaginary parts of the eigenvalues; on return `v` holds the real
/// eigenvector data (pairs stored as Re/Im column pairs).
fn schur_vectors(h: &mut DMatrix<f64>, v: &mut DMatrix<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    let nn = h.nrows();
    let mut d = vec![0.0; nn];
    let mut e = vec![0.0; nn];
    let low = 0usize;
    let high = nn - 1;
    let eps = f64::EPSILON;
    let mut exshift = 0.0;
    let (mut p, mut q, mut r, mut s, mut z): (f64, f64, f64, f64, f64);
    (r, s, z) = (0.0, 0.0, 0.0);
    let (mut t, mut w, mut x, mut y);

    let mut norm = 0.0;
    for i in 0..nn {
        for j in i.saturating_sub(1)..nn {
            norm += h[(i, j)].abs();
        }
    }

    let max_sweeps = 100 * nn.max(1);
    let mut sweeps = 0usize;
    let mut iter = 0usize;
    let mut n = nn as isize - 1;
    while n >= low as isize {
        let nu = n as usize;
        let mut l = nu;
        while l > low {
            s = h[(l - 1, l - 1)].abs() + h[(l, l)].abs();
            if s == 0.0 {
                s = norm;
            }
            if h[(l, l - 1)].abs() < eps * s {
                break;
            }
            l -= 1;
        }

        if l == nu {
            h[(nu, nu)] += exshift;
            d[nu] = h[(nu, nu)];
            e[nu] = 0.0;
            n -= 1;
            iter = 0;
        } else if l + 1 == nu {
            w = h[(nu, nu - 1)] * h[(nu - 1, nu)];
            p = (h[(nu - 1, nu - 1)] - h[(nu, nu)]) / 2.0;
            q = p * p + w;
            z = q.abs().sqrt();
            h[(nu, nu)] += exshift;
            h[(nu - 1, nu - 1)] += exshift;
            x = h[(nu, nu)];

            if q >= 0.0 {
                z = if p >= 0.0 { p + z } else { p - z };
                d[nu - 1] = x + z;
                d[nu] = d[nu - 1];
                if z != 0.0 {
                    d[nu] = x - w / z;
                }
                e[nu - 1] = 0.0;
                e[nu] = 0.0;
                x = h[(nu, nu - 1)];
                s = x.abs() + z.abs();
                p = x / s;
                q = z / s;
                r = (p * p + q * q).sqrt();
                p /= r;
                q /= r;
                for j in nu - 1..nn {
                    z = h[(nu - 1, j)];
                    h[(nu - 1, j)] = q * z + p * h[(nu, j)];
                    h[(nu, j)] = q * h[(nu, j)] - p * z;
                }
                for i in 0..=nu {
                    z = h[(i, nu - 1)];
                    h[(i, nu - 1)] = q * z + p * h[(i, nu)];
                    h[(i, nu)] = q * h[(i, nu)] - p * z;
                }
                for i in low..=high {
                    z = v[(i, nu - 1)];
                    v[(i, nu - 1)] = q * z + p * v[(i, nu)];
                    v[(i, nu)] = q * v[(i, nu)] - p * z;
                }
            } else {
                d[nu - 1] = x + p;
                d[nu] = x + p;
                e[nu - 1] = z;
                e[nu] = -z;
            }
            n -= 2;
            iter = 0;
        } else {
            x = h[(nu, nu)];
            y = 0.0;
            w = 0.0;
            if l < nu {
                y = h[(nu - 1, nu - 1)];
                w = h[(nu, nu - 1)] * h[(nu - 1, nu)];
            }

            // exceptional shifts
            if iter == 10 {
                exshift += x;
                for i in low..=nu {
                    h[(i, i)] -= x;
                }
                s = h[(nu, nu - 1)].abs() + h[(nu - 1, nu - 2)].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            if iter == 30 {
                s = (y - x) / 2.0;
                s = s * s + w;
                if s > 0.0 {
                    s = s.sqrt();
                    if y < x {
                        s = -s;
                    }
                    s = x - w / ((y - x) / 2.0 + s);
                    for i in low..=nu {
                        h[(i, i)] -= s;
                    }
                    exshift += s;
                    x = 0.964;
                    y = x;
                    w = x;
                }
            }

            iter += 1;
            sweeps += 1;
            if sweeps > max_sweeps {
                return Err(Error::Numerical(format!("QR iteration did not converge within {max_sweeps} sweeps")));
            }

            // look for two consecutive small sub-diagonal elements
            let mut m = nu - 2;
            loop {
                z = h[(m, m)];
                r = x - z;
                s = y - z;
                p = (r * s - w) / h[(m + 1, m)] + h[(m, m + 1)];
                q = h[(m + 1, m + 1)] - z - r - s;
                r = h[(m + 2, m + 1)];
                s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                if h[(m, m - 1)].abs() * (q.abs() + r.abs())
                    < eps * (p.abs() * (h[(m - 1, m - 1)].abs() + z.abs() + h[(m + 1, m + 1)].abs()))
                {
                    break;
                }
                m -= 1;
            }

            for i in m + 2..=nu {
                h[(i, i - 2)] = 0.0;
                if i > m + 2 {
                    h[(i, i - 3)] = 0.0;
                }
            }

            // double QR step on rows l..=n, columns m..=n
            let mut k = m;
            while k < nu {
                let notlast = k != nu - 1;
                if k != m {
                    p = h[(k, k - 1)];
                    q = h[(k + 1, k - 1)];
                    r = if notlast { h[(k + 2, k - 1)] } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x == 0.0 {
                        k += 1;
                        continue;
                    }
                    p /= x;
                    q /= x;
                    r /= x;
                }
                s = (p * p + q * q + r * r).sqrt();
                if p < 0.0 {
                    s = -s;
                }
                if s != 0.0 {
                    if k != m {
                        h[(k, k - 1)] = -s * x;
                    } else if l != m {
                        h[(k, k - 1)] = -h[(k, k - 1)];
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    z = r / s;
                    q /= p;
                    r /= p;

                    for j in k..nn {
                        p = h[(k, j)] + q * h[(k + 1, j)];
                        if notlast {
                            p += r * h[(k + 2, j)];
                            h[(k + 2, j)] -= p * z;
                        }
                        h[(k, j)] -= p * x;
                        h[(k + 1, j)] -= p * y;
                    }
                    for i in 0..=nu.min(k + 3) {
                        p = x * h[(i, k)] + y * h[(i, k + 1)];
                        if notlast {
                            p += z * h[(i, k + 2)];
                            h[(i, k + 2)] -= p * r;
                        }
                        h[(i, k)] -= p;
                        h[(i, k + 1)] -= p * q;
                    }
                    for i in low..=high {
                        p = x * v[(i, k)] + y * v[(i, k + 1)];
                        if notlast {
                            p += z * v[(i, k + 2)];
                            v[(i, k + 2)] -= p * r;
                        }
                        v[(i, k)] -= p;
                        v[(i, k + 1)] -= p * q;
                    }
                }
                k += 1;
            }
        }
    }

    if norm == 0.0 {
        return Ok((d, e));
    }

    // back-substitute to find vectors of the upper triangular form
    for n in (0..nn).rev() {
        p = d[n];
        q = e[n];
        if q == 0.0 {
            let mut l = n;
            h[(n, n)] = 1.0;
            for i in (0..n).rev() {
                w = h[(i, i)] - p;
                r = 0.0;
                for j in l..=n {
                    r += h[(i, j)] * h[(j, n)];
                }
                if e[i] < 0.0 {
                    z = w;
                    s = r;
                } else {
                    l = i;
                    if e[i] == 0.0 {
                        h[(i, n)] = if w != 0.0 { -r / w } else { -r / (eps * norm) };
                    } else {
                        x = h[(i, i + 1)];
                        y = h[(i + 1, i)];
                        q = (d[i] - p) * (d[i] - p) + e[i] * e[i];
                        t = (x * s - z * r) / q;
                        h[(i, n)] = t;
                        h[(i + 1, n)] = if x.abs() > z.abs() { (-r - w * t) / x } else { (-s - y * t) / z };
                    }
                    t = h[(i, n)].abs();
                    if (eps * t) * t > 1.0 {
                        for j in i..=n {
                            h[(j, n)] /= t;
                        }
                    }
                }
            }
        } else if q < 0.0 {
            let mut l = n - 1;
            if h[(n, n - 1)].abs() > h[(n - 1, n)].abs() {
                h[(n - 1, n - 1)] = q / h[(n, n - 1)];
                h[(n - 1, n)] = -(h[(n, n)] - p) / h[(n, n - 1)];
            } else {
                let (cr, ci) = cdiv(0.0, -h[(n - 1, n)], h[(n - 1, n - 1)] - p, q);
                h[(n - 1, n - 1)] = cr;
                h[(n - 1, n)] = ci;
            }
            h[(n, n - 1)] = 0.0;
            h[(n, n)] = 1.0;
            if n >= 2 {
                for i in (0..=n - 2).rev() {
                    let mut ra = 0.0;
                    let mut sa = 0.0;
                    for j in l..=n {
                        ra += h[(i, j)] * h[(j, n - 1)];
                        sa += h[(i, j)] * h[(j, n)];
                    }
                    w = h[(i, i)] - p;
                    if e[i] < 0.0 {
                        z = w;
                        r = ra;
                        s = sa;
                    } else {
                        l = i;
                        if e[i] == 0.0 {
                            let (cr, ci) = cdiv(-ra, -sa, w, q);
                            h[(i, n - 1)] = cr;
                            h[(i, n)] = ci;
                        } else {
                            x = h[(i, i + 1)];
                            y = h[(i + 1, i)];
                            let mut vr = (d[i] - p) * (d[i] - p) + e[i] * e[i] - q * q;
                            let vi = (d[i] - p) * 2.0 * q;
                            if vr == 0.0 && vi == 0.0 {
                                vr = eps * norm * (w.abs() + q.abs() + x.abs() + y.abs() + z.abs());
                            }
                            let (cr, ci) = cdiv(x * r - z * ra + q * sa, x * s - z * sa - q * ra, vr, vi);
                            h[(i, n - 1)] = cr;
                            h[(i, n)] = ci;
                            if x.abs() > z.abs() + q.abs() {
                                h[(i + 1, n - 1)] = (-ra - w * h[(i, n - 1)] + q * h[(i, n)]) / x;
                                h[(i + 1, n)] = (-sa - w * h[(i, n)] - q * h[(i, n - 1)]) / x;
                            } else {
                                let (cr, ci) = cdiv(-r - y * h[(i, n - 1)], -s - y * h[(i, n)], z, q);
                                h[(i + 1, n - 1)] = cr;
                                h[(i + 1, n)] = ci;
                            }
                        }
                        t = h[(i, n - 1)].abs().max(h[(i, n)].abs());
                        if (eps * t) * t > 1.0 {
                            for j in i..=n {
                                h[(j, n - 1)] /= t;
                                h[(j, n)] /= t;
                            }
                        }
                    }
                }
            }
        }
    }

    // back transformation
    for j in (low..nn).rev() {
        for i in low..=high {
            let mut acc = 0.0;
            for k in low..=j.min(high) {
                acc += v[(i, k)] * h[(k, j)];
            }
            v[(i, j)] = acc;
        }
    }
    Ok((d, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    fn eig_residual(a: &DMatrix<f64>, eig: &SmallEig) -> f64 {
        let ac = a.map(|v| Complex64::new(v, 0.0));
        let mut worst = 0.0f64;
        for (i, &lambda) in eig.values.iter().enumerate() {
            let w = eig.vectors.column(i);
            let res = (&ac * w - w * lambda).norm() / w.norm();
            worst = worst.max(res);
        }
        worst
    }

    #[test]
    fn identity_singular_values() {
        let svd = truncated_svd(&DMatrix::identity(2, 2), 2).unwrap();
        assert!((svd.s[0] - 1.0).abs() < 1e-15 && (svd.s[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn diag_rank_one() {
        let x = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
        let svd = truncated_svd(&x, 1).unwrap();
        assert_eq!(svd.s.len(), 1);
        assert!((svd.s[0] - 3.0).abs() < 1e-14);
        assert!((svd.u[(0, 0)].abs() - 1.0).abs() < 1e-14);
        assert!(svd.u[(0, 0)] > 0.0);
    }

    #[test]
    fn rank_reduced_flag() {
        // rank-1 matrix, rank 2 requested
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let svd = truncated_svd(&x, 2).unwrap();
        assert!(svd.rank_reduced);
        assert_eq!(svd.rank(), 1);
        assert!(truncated_svd(&x, 3).is_err());
    }

    #[test]
    fn reconstruction_and_orthogonality() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(m, n) in &[(4, 3), (3, 7), (30, 12), (12, 12)] {
            let x = random_matrix(m, n, &mut rng);
            let k = m.min(n);
            let svd = truncated_svd(&x, k).unwrap();
            let rebuilt =
                &svd.u * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(svd.s.clone())) * svd.v.transpose();
            assert!((&x - rebuilt).norm() / x.norm() < 1e-13);
            assert!((svd.u.transpose() * &svd.u - DMatrix::identity(k, k)).norm() < 1e-12);
            assert!((svd.v.transpose() * &svd.v - DMatrix::identity(k, k)).norm() < 1e-12);
            assert!(svd.s.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn rotation_eigenvalues() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let eig = eig_small(&a).unwrap();
        assert!((eig.values[0] - Complex64::new(0.0, 1.0)).norm() < 1e-15);
        assert_eq!(eig.values[1], eig.values[0].conj());
        assert!(eig_residual(&a, &eig) < 1e-14);
    }

    #[test]
    fn diagonal_eigenpairs() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]);
        let eig = eig_small(&a).unwrap();
        let mut vals: Vec<f64> = eig.values.iter().map(|v| v.re).collect();
        vals.sort_by(f64::total_cmp);
        assert_eq!(vals, vec![2.0, 3.0]);
        for (i, v) in eig.values.iter().enumerate() {
            let idx = if v.re == 2.0 { 0 } else { 1 };
            assert!((eig.vectors[(idx, i)] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn companion_matrix_roots() {
        // z^2 - z + 0.5 = 0 -> 0.5 +- 0.5i
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -0.5, 1.0, 1.0]);
        let eig = eig_small(&a).unwrap();
        assert!((eig.values[0] - Complex64::new(0.5, 0.5)).norm() < 1e-14);
        assert_eq!(eig.values[1], eig.values[0].conj());
    }

    #[test]
    fn random_residuals_and_pairing() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..100 {
            let n = 1 + trial % 12;
            let a = random_matrix(n, n, &mut rng);
            let eig = eig_small(&a).unwrap();
            assert!(eig_residual(&a, &eig) <= 1e-8, "trial {trial}");
            let mut i = 0;
            while i < n {
                if eig.values[i].im != 0.0 {
                    assert!(eig.values[i].im > 0.0);
                    assert_eq!(eig.values[i + 1], eig.values[i].conj());
                    for k in 0..n {
                        assert_eq!(eig.vectors[(k, i + 1)], eig.vectors[(k, i)].conj());
                    }
                    i += 2;
                } else {
                    i += 1;
                }
            }
        }
    }

    #[test]
    fn deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_matrix(9, 9, &mut rng);
        let e1 = eig_small(&a).unwrap();
        let e2 = eig_small(&a).unwrap();
        assert_eq!(e1.values, e2.values);
        assert_eq!(e1.vectors, e2.vectors);
    }

    #[test]
    fn singular_value_estimate_basic() {
        assert!((max_singular_value(&Identity(4)).unwrap() - 1.0).abs() < 1e-12);
        let d = DenseMap(DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]));
        assert!((max_singular_value(&d).unwrap() - 3.0).abs() < 1e-9);
        let z = DenseMap(DMatrix::zeros(3, 2));
        assert_eq!(max_singular_value(&z).unwrap(), 0.0);
    }

    #[test]
    fn singular_value_estimate_matches_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let a = random_matrix(5, 3, &mut rng);
            let exact = truncated_svd(&a, 3).unwrap().s[0];
            let est = max_singular_value(&DenseMap(a)).unwrap();
            assert!((est - exact).abs() <= 1e-6 * exact);
        }
    }

    #[test]
    fn complex_map_singular_value() {
        // diag(2i, 1) has sigma_1 = 2
        let a = DMatrix::from_row_slice(
            2,
            2,
            &[Complex64::new(0.0, 2.0), Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)],
        );
        let est = max_singular_value(&ComplexDenseMap(a)).unwrap();
        assert!((est - 2.0).abs() < 1e-9);
    }
}
