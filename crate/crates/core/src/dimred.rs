//! Sparse, TV-regularized amplitude estimation against the noisy observation.
//!
//! ```text
//! min_{xi_R, s} ||D_w T_R xi_R||_{1,2} + mu ||nu_ (.) xi_R||_{1,2}
//!     s.t. ||T_R xi_R + s - obs||_2 <= eps,  ||s||_1 <= eta
//! ```
//!
//! `xi_R = (Re xi; Im xi)` and each mode's `(Re xi_i, Im xi_i)` forms one group.

use num_complex::Complex64;

use crate::denselin::{max_singular_value, ComplexDenseMap, Identity, LinearMap};
use crate::diffops::{dw_norm_bound, DiffOperator, DiffWeights};
use crate::dmdcore::{fit_amplitudes_ls, vandermonde, DmdModes, ModeDictionary, OwnedRealDictionary, PairTag};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::ppds::{self, Iterate, PpdsProblem, SolveOptions, SolveReport, StepSizes};
use crate::prox::{project_l1_ball, GroupLayout, L12Norm, L1Ball, L2Ball};

pub const DEFAULT_MU: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct DimredConfig {
    pub eps: f64,
    pub eta: f64,
    pub w: f64,
    pub mu: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl DimredConfig {
    pub fn new(eps: f64, eta: f64, w: f64) -> Self {
        DimredConfig { eps, eta, w, mu: DEFAULT_MU, tol: ppds::DEFAULT_TOL, max_iter: ppds::DEFAULT_MAX_ITER }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eps", self.eps), ("eta", self.eta), ("mu", self.mu)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        DiffWeights::new(self.w).map_err(|e| Error::Config(e.to_string()))?;
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::Config("tol and max_iter must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DimredResult {
    pub xi: Vec<Complex64>,
    pub s: Field,
    /// `Re(T xi)`.
    pub reconstruction: Field,
    /// Modes with a nonzero amplitude.
    pub active_groups: Vec<usize>,
    /// `||Re(T xi) + s - obs||_2`.
    pub residual: f64,
    /// Both constraints hold with `1e-6` relative slack.
    pub feasible: bool,
    pub report: SolveReport,
}

/// The realified dictionary `T_R` and the doubled weights `(nu; nu)`.
pub fn realify(modes: &DmdModes, nu: &[f64], m: usize) -> Result<(OwnedRealDictionary, Vec<f64>)> {
    if nu.len() != modes.rank() {
        return Err(Error::dim(format!("{} weights for {} modes", nu.len(), modes.rank())));
    }
    let all: Vec<usize> = (0..modes.rank()).collect();
    modes.check_pair_closed(&all)?;
    let mut doubled = nu.to_vec();
    doubled.extend_from_slice(nu);
    Ok((OwnedRealDictionary(ModeDictionary::new(modes, m)), doubled))
}

/// `sigma_1(C)^2 sigma_1(Phi)^2`, the bound used for `||T_R||^2`.
pub fn dictionary_norm_bound(modes: &DmdModes, m: usize) -> Result<f64> {
    let sc = max_singular_value(&ComplexDenseMap(vandermonde(&modes.lambda, m)))?;
    let sp = max_singular_value(&ComplexDenseMap(modes.phi.clone()))?;
    let bound = sc * sc * sp * sp;
    if bound == 0.0 {
        return Err(Error::Config("mode dictionary is the zero operator".into()));
    }
    Ok(bound)
}

/// `(gamma_xi, gamma_s)` and `(gamma_z1, gamma_z2)`.
pub fn dimred_stepsizes(modes: &DmdModes, m: usize, w: f64) -> Result<StepSizes> {
    let weights = DiffWeights::new(w)?;
    let bound = dictionary_norm_bound(modes, m)?;
    Ok(StepSizes { gamma_y: vec![1.0 / (bound * (1.0 + dw_norm_bound(weights))), 1.0], gamma_z: vec![0.5, 0.5] })
}

/// `D_w T_R`.
struct DiffOfDictionary {
    diff: DiffOperator,
    dict: OwnedRealDictionary,
}

impl LinearMap for DiffOfDictionary {
    fn dim_in(&self) -> usize {
        self.dict.dim_in()
    }
    fn dim_out(&self) -> usize {
        self.diff.dim_out()
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let mut mid = vec![0.0; self.dict.dim_out()];
        self.dict.apply(x, &mut mid);
        self.diff.apply(&mid, out);
    }
    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        let mut mid = vec![0.0; self.dict.dim_out()];
        self.diff.apply_adjoint(y, &mut mid);
        self.dict.apply_adjoint(&mid, out);
    }
}

fn to_real(xi: &[Complex64]) -> Vec<f64> {
    xi.iter().map(|c| c.re).chain(xi.iter().map(|c| c.im)).collect()
}

fn from_real(x: &[f64]) -> Vec<Complex64> {
    let r = x.len() / 2;
    (0..r).map(|i| Complex64::new(x[i], x[r + i])).collect()
}

/// Makes `xi` conjugate-symmetric without changing `Re(T xi)`: each pair
/// gets the average of leader and conjugated follower, real modes drop
/// their (unobservable) imaginary part.
pub fn symmetrize(modes: &DmdModes, xi: &mut [Complex64]) {
    for i in 0..modes.rank() {
        match modes.pairs[i] {
            PairTag::Leader(j) => {
                let avg = (xi[i] + xi[j].conj()) / 2.0;
                xi[i] = avg;
                xi[j] = avg.conj();
            }
            PairTag::Real => {
                if modes.phi.column(i).iter().all(|c| c.im == 0.0) {
                    xi[i] = Complex64::new(xi[i].re, 0.0);
                }
            }
            PairTag::Follower(_) => {}
        }
    }
}

/// `||D_w Re(T xi)||_{1,2} + mu sum_i nu_i |xi_i|`.
pub fn dimred_objective(modes: &DmdModes, m: usize, nu: &[f64], xi: &[Complex64], w: f64, mu: f64) -> Result<f64> {
    let (dict, _) = realify(modes, nu, m)?;
    let weights = DiffWeights::new(w)?;
    let (n1, n2) = modes.frame;
    let x = to_real(xi);
    let mut field = vec![0.0; dict.dim_out()];
    dict.apply(&x, &mut field);
    let f = Field::new(n1, n2, m, field)?;
    let tv = crate::denoise::tv_norm(&f, weights.w())?;
    let sparse: f64 = xi.iter().zip(nu).map(|(c, v)| v * c.norm()).sum();
    Ok(tv + mu * sparse)
}

/// Amplitudes from `xi_init`, with `s = 0` and zero duals at the start.
pub fn solve_dimred(
    observed: &Field,
    modes: &DmdModes,
    nu: &[f64],
    xi_init: &[Complex64],
    config: &DimredConfig,
) -> Result<DimredResult> {
    config.validate()?;
    let dims = observed.dims();
    let (n, m) = (dims.len(), dims.m);
    if observed.frame_len() != modes.frame_len() || (dims.n1, dims.n2) != modes.frame {
        return Err(Error::dim("modes and observation have different frame shapes"));
    }
    if xi_init.len() != modes.rank() {
        return Err(Error::dim(format!("{} initial amplitudes for {} modes", xi_init.len(), modes.rank())));
    }
    if nu.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Input("mode weights must be positive".into()));
    }
    let r = modes.rank();
    let (dict, nu_doubled) = realify(modes, nu, m)?;
    let bound = dictionary_norm_bound(modes, m)?;
    let weights = DiffWeights::new(config.w)?;
    let diff = DiffOperator::new(weights, dims);

    let mut p = PpdsProblem::new();
    let group_weights: Vec<f64> = nu_doubled[..r].iter().map(|v| config.mu * v).collect();
    let xi_block = p.add_primal(
        "xi",
        2 * r,
        Box::new(L12Norm { layout: GroupLayout::strided(r, 2), weights: Some(group_weights) }),
    );
    let s_block = p.add_primal("s", n, Box::new(L1Ball { eta: config.eta }));
    let z1 = p.add_dual("z1", 3 * n, Box::new(L12Norm { layout: GroupLayout::strided(n, 3), weights: None }));
    let z2 = p.add_dual("z2", n, Box::new(L2Ball { center: observed.values().to_vec(), eps: config.eps }));
    p.couple(z1, xi_block, Box::new(DiffOfDictionary { diff, dict: dict.clone() }), bound * diff.norm_sq_bound())?;
    p.couple(z2, xi_block, Box::new(dict.clone()), bound)?;
    p.couple(z2, s_block, Box::new(Identity(n)), 1.0)?;

    let steps = ppds::derive_stepsizes(&p)?;
    let init = Iterate::with_zero_duals(&p, vec![to_real(xi_init), vec![0.0; n]]);
    let options = SolveOptions { tol: config.tol, max_iter: config.max_iter, monitor: vec![0, 1] };
    let (sol, report) = ppds::solve(&p, &steps, init, &options)?;

    let mut xi = from_real(&sol.primal[0]);
    symmetrize(modes, &mut xi);
    let active_groups: Vec<usize> = (0..r).filter(|&i| xi[i] != Complex64::new(0.0, 0.0)).collect();
    let s0 = sol.primal[1].clone();
    let (xi, s, recon, residual) = restore_feasibility(observed, modes, &dict, &active_groups, xi, s0, config)?;
    let feasible = residual <= config.eps * (1.0 + 1e-6) + 1e-12;

    Ok(DimredResult {
        xi,
        s: Field::new(dims.n1, dims.n2, m, s)?,
        reconstruction: Field::new(dims.n1, dims.n2, m, recon)?,
        active_groups,
        residual,
        feasible,
        report,
    })
}

fn residual_norm(observed: &[f64], recon: &[f64], s: &[f64]) -> f64 {
    observed.iter().zip(recon).zip(s).map(|((o, x), e)| (x + e - o).powi(2)).sum::<f64>().sqrt()
}

/// Finishes an iterate that is still (slightly) outside the data-fidelity
/// ball. First `s` is replaced by the best outlier estimate for the current
/// amplitudes, which leaves the objective unchanged. If that is not enough,
/// `xi` moves along the segment towards the least-residual amplitudes on the
/// active modes, as little as bisection allows. Inactive groups stay zero.
#[allow(clippy::type_complexity)]
fn restore_feasibility(
    observed: &Field,
    modes: &DmdModes,
    dict: &OwnedRealDictionary,
    active: &[usize],
    xi: Vec<Complex64>,
    s: Vec<f64>,
    config: &DimredConfig,
) -> Result<(Vec<Complex64>, Vec<f64>, Vec<f64>, f64)> {
    let obs = observed.values();
    let n = obs.len();
    let eval = |xi: &[Complex64]| {
        let mut recon = vec![0.0; n];
        dict.apply(&to_real(xi), &mut recon);
        recon
    };
    let best_s = |recon: &[f64]| -> Result<Vec<f64>> {
        let r: Vec<f64> = obs.iter().zip(recon).map(|(o, x)| o - x).collect();
        project_l1_ball(&r, config.eta)
    };
    let target = config.eps * (1.0 + 1e-7);

    let recon = eval(&xi);
    let res = residual_norm(obs, &recon, &s);
    if res <= target {
        return Ok((xi, s, recon, res));
    }
    let s1 = best_s(&recon)?;
    let res1 = residual_norm(obs, &recon, &s1);
    if res1 <= target || active.is_empty() {
        return Ok((xi, s1, recon, res1));
    }

    let anchor = least_residual_amplitudes(observed, modes, active, config.eta, &s1)?;
    let at = |theta: f64| -> Result<(Vec<Complex64>, Vec<f64>, Vec<f64>, f64)> {
        let x: Vec<Complex64> = xi.iter().zip(&anchor).map(|(a, b)| a + (b - a) * theta).collect();
        let recon = eval(&x);
        let s = best_s(&recon)?;
        let res = residual_norm(obs, &recon, &s);
        Ok((x, s, recon, res))
    };
    let far = at(1.0)?;
    if far.3 > target {
        // The constraint set misses the active-mode subspace entirely;
        // keep the solver's point with the improved outlier estimate.
        return Ok((xi, s1, recon, res1));
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut best = far;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let cand = at(mid)?;
        if cand.3 <= target {
            hi = mid;
            best = cand;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    Ok(best)
}

/// Alternating minimization of `||Re(T xi) + s - obs||` over amplitudes on
/// `active` and `s` in the `eta` l1-ball.
fn least_residual_amplitudes(
    observed: &Field,
    modes: &DmdModes,
    active: &[usize],
    eta: f64,
    s_start: &[f64],
) -> Result<Vec<Complex64>> {
    let dims = observed.dims();
    let sub = DmdModes::from_parts(
        modes.phi.select_columns(active),
        active.iter().map(|&i| modes.lambda[i]).collect(),
        modes.frame,
    )?;
    let keep: Vec<usize> = (0..active.len()).collect();
    let obs = observed.values();
    let mut s = s_start.to_vec();
    let mut xi_sub = Vec::new();
    let mut last = f64::INFINITY;
    for _ in 0..100 {
        let target: Vec<f64> = obs.iter().zip(&s).map(|(o, e)| o - e).collect();
        xi_sub = fit_amplitudes_ls(&sub, &Field::new(dims.n1, dims.n2, dims.m, target)?)?.xi;
        let recon = crate::dmdcore::reconstruct(&sub, &xi_sub, &keep, dims.m)?;
        let r: Vec<f64> = obs.iter().zip(recon.values()).map(|(o, x)| o - x).collect();
        s = project_l1_ball(&r, eta)?;
        let res = r.iter().zip(&s).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        if last - res <= 1e-12 * last.max(1.0) {
            break;
        }
        last = res;
    }
    let mut xi = vec![Complex64::new(0.0, 0.0); modes.rank()];
    for (k, &i) in active.iter().enumerate() {
        xi[i] = xi_sub[k];
    }
    Ok(xi)
}

/// Least-squares amplitudes against `reference` (typically the denoised
/// field), the usual starting point for [`solve_dimred`].
pub fn initial_amplitudes(modes: &DmdModes, reference: &Field) -> Result<Vec<Complex64>> {
    Ok(fit_amplitudes_ls(modes, reference)?.xi)
}
