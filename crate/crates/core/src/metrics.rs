//! Evaluation: eigenvalue error statistics across trials, MPSNR and MSSIM.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::Field;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
/// Dynamic range `L`; fields are normalized to unit range.
pub const SSIM_RANGE: f64 = 1.0;

/// Matched eigenvalues: `trials[k][j]` is trial `k`'s estimate of `targets[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSet {
    pub targets: Vec<Complex64>,
    pub trials: Vec<Vec<Complex64>>,
}

impl TrialSet {
    pub fn new(targets: Vec<Complex64>) -> Self {
        TrialSet { targets, trials: Vec::new() }
    }

    pub fn push(&mut self, matched: Vec<Complex64>) -> Result<()> {
        if matched.len() != self.targets.len() {
            return Err(Error::dim(format!("{} matches for {} targets", matched.len(), self.targets.len())));
        }
        self.trials.push(matched);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    fn column(&self, target: usize) -> Result<Vec<Complex64>> {
        if target >= self.targets.len() {
            return Err(Error::Input(format!("target {target} out of range")));
        }
        Ok(self.trials.iter().map(|t| t[target]).collect())
    }

    pub fn mse(&self, target: usize) -> Result<f64> {
        eig_mse(&self.column(target)?, self.targets[target])
    }

    pub fn std(&self, target: usize) -> Result<f64> {
        eig_std(&self.column(target)?)
    }
}

/// `(1/K) sum |lambda_k - truth|^2`.
pub fn eig_mse(estimates: &[Complex64], truth: Complex64) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::Input("empty trial set".into()));
    }
    Ok(estimates.iter().map(|l| (l - truth).norm_sqr()).sum::<f64>() / estimates.len() as f64)
}

/// Population standard deviation around the complex mean.
pub fn eig_std(estimates: &[Complex64]) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::Input("empty trial set".into()));
    }
    let k = estimates.len() as f64;
    let mean = estimates.iter().sum::<Complex64>() / k;
    Ok((estimates.iter().map(|l| (l - mean).norm_sqr()).sum::<f64>() / k).sqrt())
}

/// Greedy nearest-neighbour matching. Targets are taken in the given order
/// (callers pass them by descending importance); each claims the closest
/// unused estimate with `Im >= 0`. `None` once candidates run out.
pub fn match_eigenvalues(estimates: &[Complex64], targets: &[Complex64]) -> Vec<Option<Complex64>> {
    let mut used = vec![false; estimates.len()];
    targets
        .iter()
        .map(|t| {
            let best = estimates
                .iter()
                .enumerate()
                .filter(|(i, l)| !used[*i] && l.im >= 0.0)
                .min_by(|(_, a), (_, b)| (*a - t).norm().total_cmp(&(*b - t).norm()))
                .map(|(i, l)| (i, *l));
            best.map(|(i, l)| {
                used[i] = true;
                l
            })
        })
        .collect()
}

fn check_shapes(truth: &Field, estimate: &Field) -> Result<()> {
    if truth.dims() != estimate.dims() {
        return Err(Error::dim(format!("shape mismatch: {:?} vs {:?}", truth.dims(), estimate.dims())));
    }
    Ok(())
}

/// Per-frame `10 log10(N / ||x_t - y_t||^2)`, averaged; a perfect frame
/// makes the result `+inf`.
pub fn mpsnr(truth: &Field, estimate: &Field) -> Result<f64> {
    check_shapes(truth, estimate)?;
    let n = truth.frame_len() as f64;
    let m = truth.m();
    let total: f64 = (0..m)
        .map(|t| {
            let err: f64 = truth.frame(t).iter().zip(estimate.frame(t)).map(|(a, b)| (a - b) * (a - b)).sum();
            10.0 * (n / err).log10()
        })
        .sum();
    Ok(total / m as f64)
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable weighted average over every fully contained window.
fn filter_valid(img: &[f64], n1: usize, n2: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (o1, o2) = (n1 - SSIM_WINDOW + 1, n2 - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; n1 * o2];
    for i in 0..n1 {
        for j in 0..o2 {
            rows[i * o2 + j] = (0..SSIM_WINDOW).map(|d| k[d] * img[i * n2 + j + d]).sum();
        }
    }
    let mut out = vec![0.0; o1 * o2];
    for i in 0..o1 {
        for j in 0..o2 {
            out[i * o2 + j] = (0..SSIM_WINDOW).map(|d| k[d] * rows[(i + d) * o2 + j]).sum();
        }
    }
    out
}

/// SSIM of one frame pair.
pub fn ssim_frame(x: &[f64], y: &[f64], n1: usize, n2: usize) -> Result<f64> {
    if n1 < SSIM_WINDOW || n2 < SSIM_WINDOW {
        return Err(Error::Input(format!("frame {n1}x{n2} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    if x.len() != n1 * n2 || y.len() != n1 * n2 {
        return Err(Error::dim("frame length does not match n1*n2"));
    }
    let k = gaussian_kernel();
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<f64>>();
    let mx = filter_valid(x, n1, n2, &k);
    let my = filter_valid(y, n1, n2, &k);
    let sxx = filter_valid(&prod(x, x), n1, n2, &k);
    let syy = filter_valid(&prod(y, y), n1, n2, &k);
    let sxy = filter_valid(&prod(x, y), n1, n2, &k);
    let c1 = (SSIM_K1 * SSIM_RANGE).powi(2);
    let c2 = (SSIM_K2 * SSIM_RANGE).powi(2);
    let mut total = 0.0;
    for p in 0..mx.len() {
        let (ux, uy) = (mx[p], my[p]);
        let vx = sxx[p] - ux * ux;
        let vy = syy[p] - uy * uy;
        let cxy = sxy[p] - ux * uy;
        total += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    Ok(total / mx.len() as f64)
}

/// Frame-averaged SSIM.
pub fn mssim(truth: &Field, estimate: &Field) -> Result<f64> {
    check_shapes(truth, estimate)?;
    let (n1, n2, m) = (truth.n1(), truth.n2(), truth.m());
    let mut total = 0.0;
    for t in 0..m {
        total += ssim_frame(truth.frame(t), estimate.frame(t), n1, n2)?;
    }
    Ok(total / m as f64)
}
