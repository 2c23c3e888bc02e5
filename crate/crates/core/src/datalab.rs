//! Synthetic fields with known modes, noise injection and radius calibration.
//!
//! Randomness comes from `ChaCha8Rng::seed_from_u64(seed)`; uniforms are the
//! top 53 bits of `next_u64`, Gaussians use Box-Muller, and integer draws use
//! a 128-bit multiply-shift. These choices are part of the output contract.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::field::Field;

/// Spatial shape of a synthetic mode, on unit-square coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pattern {
    Constant,
    /// `exp(2 pi i (ky y + kx x))`.
    Wave {
        ky: f64,
        kx: f64,
    },
    /// A wave under a Gaussian envelope centred at `(cy, cx)`.
    Blob {
        cy: f64,
        cx: f64,
        width: f64,
        ky: f64,
        kx: f64,
    },
}

impl Pattern {
    fn eval(&self, y: f64, x: f64) -> Complex64 {
        match *self {
            Pattern::Constant => Complex64::new(1.0, 0.0),
            Pattern::Wave { ky, kx } => Complex64::from_polar(1.0, 2.0 * PI * (ky * y + kx * x)),
            Pattern::Blob { cy, cx, width, ky, kx } => {
                let r2 = (y - cy).powi(2) + (x - cx).powi(2);
                Complex64::from_polar((-r2 / (2.0 * width * width)).exp(), 2.0 * PI * (ky * y + kx * x))
            }
        }
    }
}

/// One generator component. A complex `lambda` stands for a conjugate pair
/// (this mode and its conjugate); a real `lambda` is a single real mode using
/// the real parts of pattern and amplitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticMode {
    pub lambda: Complex64,
    pub amplitude: Complex64,
    pub pattern: Pattern,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n1: usize,
    pub n2: usize,
    pub m: usize,
    pub modes: Vec<SyntheticMode>,
    /// Target value range. If it contains zero the field is only rescaled;
    /// otherwise a constant offset (an extra `lambda = 1` mode) is added.
    pub range: (f64, f64),
}

/// Built-in conjugate pairs, strongest first: localized wave packets on a
/// quiescent background.
pub fn builtin_pairs() -> Vec<SyntheticMode> {
    vec![
        SyntheticMode {
            lambda: Complex64::from_polar(1.0, PI / 8.0),
            amplitude: Complex64::new(1.0, 0.0),
            pattern: Pattern::Blob { cy: 0.5, cx: 0.35, width: 0.12, ky: 0.0, kx: 1.5 },
        },
        SyntheticMode {
            lambda: Complex64::from_polar(0.98, PI / 4.0),
            amplitude: Complex64::from_polar(0.6, 0.5),
            pattern: Pattern::Blob { cy: 0.28, cx: 0.72, width: 0.1, ky: 2.0, kx: -1.0 },
        },
        SyntheticMode {
            lambda: Complex64::from_polar(0.95, 3.0 * PI / 8.0),
            amplitude: Complex64::from_polar(0.35, -1.0),
            pattern: Pattern::Blob { cy: 0.74, cx: 0.7, width: 0.08, ky: 0.0, kx: 3.0 },
        },
        SyntheticMode {
            lambda: Complex64::from_polar(0.9, PI / 2.0),
            amplitude: Complex64::new(0.2, 0.0),
            pattern: Pattern::Blob { cy: 0.25, cx: 0.25, width: 0.08, ky: 1.0, kx: 1.0 },
        },
    ]
}

impl SyntheticSpec {
    /// The first `pairs` built-in pairs on an `n1 x n2 x m` grid, scaled into
    /// `[-0.5, 0.5]`.
    pub fn standard(n1: usize, n2: usize, m: usize, pairs: usize) -> Result<Self> {
        let table = builtin_pairs();
        if pairs == 0 || pairs > table.len() {
            return Err(Error::Input(format!("pair count must be in 1..={}, got {pairs}", table.len())));
        }
        Ok(SyntheticSpec { n1, n2, m, modes: table[..pairs].to_vec(), range: (-0.5, 0.5) })
    }

    fn validate(&self) -> Result<()> {
        if self.n1 == 0 || self.n2 == 0 || self.m == 0 {
            return Err(Error::Input("grid dimensions must be positive".into()));
        }
        if self.modes.is_empty() {
            return Err(Error::Input("synthetic spec has no modes".into()));
        }
        for mode in &self.modes {
            if !(mode.lambda.norm() <= 1.0 + 1e-12) {
                return Err(Error::Input(format!("|lambda| must be at most 1, got {}", mode.lambda.norm())));
            }
        }
        let (lo, hi) = self.range;
        if !(lo < hi) {
            return Err(Error::Input(format!("invalid target range [{lo}, {hi}]")));
        }
        Ok(())
    }
}

/// Exact decomposition of a generated field: `field = sum_i phi_i xi_i lambda_i^t`
/// over all modes (conjugates listed right after their leader).
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub lambdas: Vec<Complex64>,
    pub amplitudes: Vec<Complex64>,
    /// Unit-norm mode shapes as columns (`N x r`).
    pub modes: DMatrix<Complex64>,
    /// For each mode, the index of its conjugate partner (`None` for real modes).
    pub partner: Vec<Option<usize>>,
    /// Real field contributed by each component (a pair counts once), in
    /// generator order; the leader mode of component `k` is `component_modes[k]`.
    pub components: Vec<Field>,
    pub component_modes: Vec<usize>,
}

impl GroundTruth {
    /// Indices of pair leaders and real modes (one per component).
    pub fn leaders(&self) -> &[usize] {
        &self.component_modes
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Field, GroundTruth)> {
    spec.validate()?;
    let (n1, n2, m) = (spec.n1, spec.n2, spec.m);
    let n = n1 * n2;

    let mut lambdas = Vec::new();
    let mut amplitudes = Vec::new();
    let mut columns: Vec<Vec<Complex64>> = Vec::new();
    let mut partner = Vec::new();
    let mut component_modes = Vec::new();

    for mode in &spec.modes {
        let mut phi: Vec<Complex64> = (0..n)
            .map(|k| {
                let (i, j) = (k / n2, k % n2);
                mode.pattern.eval((i as f64 + 0.5) / n1 as f64, (j as f64 + 0.5) / n2 as f64)
            })
            .collect();
        let is_pair = mode.lambda.im != 0.0;
        if !is_pair {
            phi.iter_mut().for_each(|c| *c = Complex64::new(c.re, 0.0));
        }
        let norm = phi.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Input("synthetic pattern is identically zero on this grid".into()));
        }
        phi.iter_mut().for_each(|c| *c /= norm);
        let base = lambdas.len();
        component_modes.push(base);
        if is_pair {
            let lead = Complex64::new(mode.lambda.re, mode.lambda.im.abs());
            let amp = if mode.lambda.im > 0.0 { mode.amplitude } else { mode.amplitude.conj() };
            let phi = if mode.lambda.im > 0.0 { phi } else { phi.iter().map(|c| c.conj()).collect() };
            lambdas.push(lead);
            lambdas.push(lead.conj());
            amplitudes.push(amp);
            amplitudes.push(amp.conj());
            columns.push(phi.iter().map(|c| c.conj()).collect());
            columns.insert(base, phi);
            partner.push(Some(base + 1));
            partner.push(Some(base));
        } else {
            lambdas.push(Complex64::new(mode.lambda.re, 0.0));
            amplitudes.push(Complex64::new(mode.amplitude.re, 0.0));
            columns.push(phi);
            partner.push(None);
        }
    }

    let mut total = vec![0.0; n * m];
    for &i in &component_modes {
        let c = component_values(&columns[i], amplitudes[i], lambdas[i], partner[i].is_some(), m);
        total.iter_mut().zip(&c).for_each(|(t, v)| *t += v);
    }
    let (fmin, fmax) = total.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if fmax - fmin <= 0.0 && fmax == 0.0 {
        return Err(Error::Input("synthetic spec produces an all-zero field".into()));
    }

    let (lo, hi) = spec.range;
    let (scale, offset) = if lo <= 0.0 && hi >= 0.0 {
        let mut s = f64::INFINITY;
        if fmax > 0.0 {
            s = s.min(hi / fmax);
        }
        if fmin < 0.0 {
            s = s.min(lo / fmin);
        }
        (s, 0.0)
    } else if fmax > fmin {
        let s = (hi - lo) / (fmax - fmin);
        (s, lo - s * fmin)
    } else {
        (1.0, (lo + hi) / 2.0 - fmax)
    };
    if !scale.is_finite() || scale <= 0.0 {
        return Err(Error::Input("synthetic field cannot be scaled into the target range".into()));
    }
    amplitudes.iter_mut().for_each(|a| *a *= scale);

    if offset != 0.0 {
        let base = lambdas.len();
        component_modes.push(base);
        lambdas.push(Complex64::new(1.0, 0.0));
        amplitudes.push(Complex64::new(offset * (n as f64).sqrt(), 0.0));
        columns.push(vec![Complex64::new(1.0 / (n as f64).sqrt(), 0.0); n]);
        partner.push(None);
    }

    let mut components = Vec::with_capacity(component_modes.len());
    let mut field = vec![0.0; n * m];
    for &i in &component_modes {
        let c = component_values(&columns[i], amplitudes[i], lambdas[i], partner[i].is_some(), m);
        field.iter_mut().zip(&c).for_each(|(t, v)| *t += v);
        components.push(Field::new(n1, n2, m, c)?);
    }

    let r = lambdas.len();
    let modes = DMatrix::from_fn(n, r, |i, j| columns[j][i]);
    let truth = GroundTruth { lambdas, amplitudes, modes, partner, components, component_modes };
    Ok((Field::new(n1, n2, m, field)?, truth))
}

/// Real field of one mode, doubled for a conjugate pair.
fn component_values(phi: &[Complex64], amplitude: Complex64, lambda: Complex64, pair: bool, m: usize) -> Vec<f64> {
    let n = phi.len();
    let mult = if pair { 2.0 } else { 1.0 };
    let mut values = vec![0.0; n * m];
    let mut power = Complex64::new(1.0, 0.0);
    for t in 0..m {
        let coef = amplitude * power;
        for (v, p) in values[t * n..(t + 1) * n].iter_mut().zip(phi) {
            *v = mult * (p * coef).re;
        }
        power *= lambda;
    }
    values
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    SaltPepper,
    Missing,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub ps: f64,
    pub kind: NoiseKind,
    pub seed: u64,
}

/// The generator's stream of uniforms, Gaussians and bounded integers.
pub struct NoiseStream {
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(seed: u64) -> Self {
        NoiseStream { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal pair by Box-Muller.
    pub fn gaussian_pair(&mut self) -> (f64, f64) {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (2.0 * PI * u2).sin_cos();
        (r * c, r * s)
    }

    /// Integer in `0..bound` (`bound > 0`).
    pub fn below(&mut self, bound: usize) -> usize {
        ((self.rng.next_u64() as u128 * bound as u128) >> 64) as usize
    }
}

/// Adds Gaussian noise everywhere, then overwrites exactly
/// `floor(ps * len)` distinct entries with outliers.
pub fn corrupt(field: &Field, noise: &NoiseSpec) -> Result<Field> {
    if !(noise.sigma >= 0.0) || !noise.sigma.is_finite() {
        return Err(Error::Input(format!("sigma must be finite and nonnegative, got {}", noise.sigma)));
    }
    if !(0.0..1.0).contains(&noise.ps) {
        return Err(Error::Input(format!("ps must lie in [0, 1), got {}", noise.ps)));
    }
    let (lo, hi) = field.range();
    let mut values = field.values().to_vec();
    let len = values.len();
    let mut stream = NoiseStream::new(noise.seed);

    if noise.sigma > 0.0 {
        let mut k = 0;
        while k < len {
            let (a, b) = stream.gaussian_pair();
            values[k] += noise.sigma * a;
            if k + 1 < len {
                values[k + 1] += noise.sigma * b;
            }
            k += 2;
        }
    }

    let count = (noise.ps * len as f64).floor() as usize;
    if count > 0 {
        let mut order: Vec<usize> = (0..len).collect();
        for i in 0..count {
            let j = i + stream.below(len - i);
            order.swap(i, j);
        }
        for &pos in &order[..count] {
            values[pos] = match noise.kind {
                NoiseKind::Missing => 0.0,
                NoiseKind::SaltPepper => {
                    if stream.uniform() < 0.5 {
                        lo
                    } else {
                        hi
                    }
                }
            };
        }
    }
    let d = field.dims();
    Field::new(d.n1, d.n2, d.m, values)
}

/// Fidelity radius `alpha * sigma * sqrt((1 - ps) * NM)`.
pub fn radius_eps(sigma: f64, ps: f64, n_total: usize, alpha: f64) -> f64 {
    alpha * sigma * ((1.0 - ps) * n_total as f64).sqrt()
}

/// Sparse budget for salt-and-pepper noise, `alpha * ps * NM / 2`.
pub fn radius_eta_saltpepper(ps: f64, n_total: usize, alpha: f64) -> f64 {
    alpha * ps * n_total as f64 / 2.0
}

/// Sparse budget for missing values, `alpha * ps * ||obs||_1 / (1 - ps)`.
pub fn radius_eta_missing(observed: &Field, ps: f64, alpha: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&ps) {
        return Err(Error::Input(format!("ps must lie in [0, 1), got {ps}")));
    }
    let l1: f64 = observed.values().iter().map(|v| v.abs()).sum();
    Ok(alpha * ps * l1 / (1.0 - ps))
}

/// Paper-calibrated `alpha` for the low, medium and high noise levels.
pub const ALPHA_LOW: f64 = 0.95;
pub const ALPHA_MEDIUM: f64 = 0.91;
pub const ALPHA_HIGH: f64 = 0.89;
