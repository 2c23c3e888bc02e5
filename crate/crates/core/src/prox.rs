//! Proximity operators and projections used by the splitting solvers.
//!
//! Everything here works in place on `&mut [f64]`; the allocating wrappers
//! exist for callers that want a fresh vector.

use crate::error::{Error, Result};

/// How a vector is partitioned into groups for the mixed `l1,2` norm.
#[derive(Debug, Clone, PartialEq)]
pub enum GroupLayout {
    /// Consecutive runs of the given sizes.
    Contiguous { sizes: Vec<usize> },
    /// Group `g` holds indices `g, g + stride, ..., g + (size-1)*stride`
    /// for `g < group_count`; requires `stride == group_count`.
    Strided { group_count: usize, size: usize },
}

impl GroupLayout {
    pub fn contiguous(sizes: Vec<usize>) -> Result<Self> {
        if sizes.contains(&0) {
            return Err(Error::Input("group sizes must be positive".into()));
        }
        Ok(GroupLayout::Contiguous { sizes })
    }

    pub fn uniform(group_count: usize, size: usize) -> Self {
        GroupLayout::Contiguous { sizes: vec![size; group_count] }
    }

    /// `size` interleaved blocks of length `group_count`; group `g` collects
    /// the `g`-th entry of every block.
    pub fn strided(group_count: usize, size: usize) -> Self {
        GroupLayout::Strided { group_count, size }
    }

    pub fn group_count(&self) -> usize {
        match self {
            GroupLayout::Contiguous { sizes } => sizes.len(),
            GroupLayout::Strided { group_count, .. } => *group_count,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            GroupLayout::Contiguous { sizes } => sizes.iter().sum(),
            GroupLayout::Strided { group_count, size } => group_count * size,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check(&self, len: usize, weights: Option<&[f64]>) -> Result<()> {
        if self.len() != len {
            return Err(Error::dim(format!("group layout covers {} entries, vector has {len}", self.len())));
        }
        if let Some(w) = weights {
            if w.len() != self.group_count() {
                return Err(Error::dim(format!("{} group weights for {} groups", w.len(), self.group_count())));
            }
        }
        Ok(())
    }

    /// Sum of group 2-norms.
    pub fn l12_norm(&self, x: &[f64]) -> f64 {
        match self {
            GroupLayout::Contiguous { sizes } => {
                let mut start = 0;
                let mut total = 0.0;
                for &s in sizes {
                    total += x[start..start + s].iter().map(|v| v * v).sum::<f64>().sqrt();
                    start += s;
                }
                total
            }
            GroupLayout::Strided { group_count, size } => {
                (0..*group_count).map(|g| (0..*size).map(|k| x[g + k * group_count].powi(2)).sum::<f64>().sqrt()).sum()
            }
        }
    }
}

/// Group-wise soft shrinkage: each group is scaled by
/// `max(1 - gamma * nu_g / ||x_g||, 0)`, zero-norm groups stay zero.
pub fn prox_l12(x: &[f64], gamma: f64, layout: &GroupLayout, weights: Option<&[f64]>) -> Result<Vec<f64>> {
    layout.check(x.len(), weights)?;
    if !(gamma > 0.0) {
        return Err(Error::Input(format!("gamma must be positive, got {gamma}")));
    }
    let mut out = x.to_vec();
    prox_l12_inplace(&mut out, gamma, layout, weights);
    Ok(out)
}

pub(crate) fn prox_l12_inplace(x: &mut [f64], gamma: f64, layout: &GroupLayout, weights: Option<&[f64]>) {
    let threshold = |g: usize| gamma * weights.map_or(1.0, |w| w[g]);
    match layout {
        GroupLayout::Contiguous { sizes } => {
            let mut start = 0;
            for (g, &s) in sizes.iter().enumerate() {
                let seg = &mut x[start..start + s];
                let norm = seg.iter().map(|v| v * v).sum::<f64>().sqrt();
                let factor = shrink_factor(norm, threshold(g));
                seg.iter_mut().for_each(|v| *v *= factor);
                start += s;
            }
        }
        GroupLayout::Strided { group_count, size } => {
            let gc = *group_count;
            if *size == 3 && weights.is_none() {
                // the TV case: three direction blocks
                let (a, rest) = x.split_at_mut(gc);
                let (b, c) = rest.split_at_mut(gc);
                for g in 0..gc {
                    let norm = (a[g] * a[g] + b[g] * b[g] + c[g] * c[g]).sqrt();
                    let factor = shrink_factor(norm, gamma);
                    a[g] *= factor;
                    b[g] *= factor;
                    c[g] *= factor;
                }
                return;
            }
            for g in 0..gc {
                let norm = (0..*size).map(|k| x[g + k * gc].powi(2)).sum::<f64>().sqrt();
                let factor = shrink_factor(norm, threshold(g));
                for k in 0..*size {
                    x[g + k * gc] *= factor;
                }
            }
        }
    }
}

#[inline]
fn shrink_factor(norm: f64, threshold: f64) -> f64 {
    if norm <= threshold || norm == 0.0 {
        0.0
    } else {
        1.0 - threshold / norm
    }
}

/// Euclidean projection onto `{y : ||y - c|| <= eps}`.
pub fn project_l2_ball(x: &[f64], center: &[f64], eps: f64) -> Result<Vec<f64>> {
    if x.len() != center.len() {
        return Err(Error::dim(format!("vector length {} vs center length {}", x.len(), center.len())));
    }
    if !(eps >= 0.0) {
        return Err(Error::Input(format!("radius must be nonnegative, got {eps}")));
    }
    let mut out = x.to_vec();
    project_l2_ball_inplace(&mut out, center, eps);
    Ok(out)
}

pub(crate) fn project_l2_ball_inplace(x: &mut [f64], center: &[f64], eps: f64) {
    let dist = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum::<f64>().sqrt();
    if dist <= eps {
        return;
    }
    let scale = eps / dist;
    for (a, c) in x.iter_mut().zip(center) {
        *a = c + scale * (*a - c);
    }
}

/// Euclidean projection onto `{y : ||y||_1 <= eta}`. Sort-based threshold
/// search over the entries that can survive, so the result is exact and
/// independent of input order.
pub fn project_l1_ball(x: &[f64], eta: f64) -> Result<Vec<f64>> {
    if !(eta >= 0.0) {
        return Err(Error::Input(format!("radius must be nonnegative, got {eta}")));
    }
    let mut out = x.to_vec();
    project_l1_ball_inplace(&mut out, eta);
    Ok(out)
}

pub(crate) fn project_l1_ball_inplace(x: &mut [f64], eta: f64) {
    let l1: f64 = x.iter().map(|v| v.abs()).sum();
    if l1 <= eta {
        return;
    }
    if eta == 0.0 {
        x.fill(0.0);
        return;
    }
    let tau = l1_threshold(x, l1, eta);
    for v in x.iter_mut() {
        let mag = v.abs() - tau;
        *v = if mag > 0.0 { mag.copysign(*v) } else { 0.0 };
    }
}

/// Threshold `tau` with `sum max(|x_i| - tau, 0) = eta`, assuming `||x||_1 > eta > 0`.
fn l1_threshold(x: &[f64], l1: f64, eta: f64) -> f64 {
    // tau >= (||x||_1 - eta) / n, so smaller entries never matter.
    let lower = (l1 - eta) / x.len() as f64;
    let mut cand: Vec<f64> = x.iter().map(|v| v.abs()).filter(|&a| a > lower).collect();
    cand.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (k, &u) in cand.iter().enumerate() {
        cum += u;
        let t = (cum - eta) / (k + 1) as f64;
        if u > t {
            tau = t;
        } else {
            break;
        }
    }
    tau.max(0.0)
}

/// A convex function exposed through its proximity operator.
pub trait Prox: Send + Sync {
    /// Replace `x` with `prox_{gamma f}(x)`.
    fn prox(&self, x: &mut [f64], gamma: f64);
}

/// `f = 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroFn;

impl Prox for ZeroFn {
    fn prox(&self, _x: &mut [f64], _gamma: f64) {}
}

/// `f(x) = sum_g nu_g ||x_g||_2`, optionally scaled.
#[derive(Debug, Clone)]
pub struct L12Norm {
    pub layout: GroupLayout,
    pub weights: Option<Vec<f64>>,
}

impl Prox for L12Norm {
    fn prox(&self, x: &mut [f64], gamma: f64) {
        prox_l12_inplace(x, gamma, &self.layout, self.weights.as_deref());
    }
}

/// Indicator of the 2-norm ball of radius `eps` around `center`.
#[derive(Debug, Clone)]
pub struct L2Ball {
    pub center: Vec<f64>,
    pub eps: f64,
}

impl Prox for L2Ball {
    fn prox(&self, x: &mut [f64], _gamma: f64) {
        project_l2_ball_inplace(x, &self.center, self.eps);
    }
}

/// Indicator of the 1-norm ball of radius `eta` around the origin.
#[derive(Debug, Clone, Copy)]
pub struct L1Ball {
    pub eta: f64,
}

impl Prox for L1Ball {
    fn prox(&self, x: &mut [f64], _gamma: f64) {
        project_l1_ball_inplace(x, self.eta);
    }
}

/// Prox of the convex conjugate through the Moreau identity:
/// `prox_{gamma f*}(x) = x - gamma prox_{f/gamma}(x/gamma)`.
pub fn moreau_conjugate_prox(f: &dyn Prox, gamma: f64, x: &[f64]) -> Vec<f64> {
    let mut out = x.to_vec();
    moreau_conjugate_inplace(f, gamma, &mut out, &mut vec![0.0; x.len()]);
    out
}

/// In-place Moreau step; `scratch` must have the length of `x`.
pub(crate) fn moreau_conjugate_inplace(f: &dyn Prox, gamma: f64, x: &mut [f64], scratch: &mut [f64]) {
    for (s, v) in scratch.iter_mut().zip(x.iter()) {
        *s = v / gamma;
    }
    f.prox(scratch, 1.0 / gamma);
    for (v, s) in x.iter_mut().zip(scratch.iter()) {
        *v -= gamma * s;
    }
}
