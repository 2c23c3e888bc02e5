//! Mixed-noise preprocessing: total-variation denoising under an l2 fidelity
//! ball and an l1 budget for sparse outliers.
//!
//! ```text
//! min_{x, s} ||D_w x||_{1,2}  s.t.  ||x + s - obs||_2 <= eps,  ||s||_1 <= eta
//! ```

use crate::denselin::Identity;
use crate::diffops::{apply_dw, dw_norm_bound, DiffOperator, DiffWeights};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::ppds::{self, Iterate, PpdsProblem, SolveOptions, SolveReport, StepSizes};
use crate::prox::{project_l2_ball_inplace, GroupLayout, L12Norm, L1Ball, L2Ball, ZeroFn};

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseConfig {
    pub eps: f64,
    pub eta: f64,
    pub w: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl DenoiseConfig {
    pub fn new(eps: f64, eta: f64, w: f64) -> Self {
        DenoiseConfig { eps, eta, w, tol: ppds::DEFAULT_TOL, max_iter: ppds::DEFAULT_MAX_ITER }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps >= 0.0 && self.eps.is_finite()) || !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!(
                "radii must be finite and nonnegative (eps = {}, eta = {})",
                self.eps, self.eta
            )));
        }
        DiffWeights::new(self.w).map_err(|e| Error::Config(e.to_string()))?;
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::Config("tol and max_iter must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DenoiseResult {
    /// Clean estimate.
    pub x: Field,
    /// Sparse-noise estimate.
    pub s: Field,
    pub report: SolveReport,
}

/// `(gamma_x, gamma_s)` and `(gamma_z1, gamma_z2)`.
pub fn preprocessing_stepsizes(w: f64) -> Result<StepSizes> {
    let weights = DiffWeights::new(w)?;
    Ok(StepSizes { gamma_y: vec![1.0 / (1.0 + dw_norm_bound(weights)), 1.0], gamma_z: vec![0.5, 0.5] })
}

/// `||D_w x||_{1,2}` with pixel-wise groups across the three directions.
pub fn tv_norm(x: &Field, w: f64) -> Result<f64> {
    let weights = DiffWeights::new(w)?;
    let d = apply_dw(x.values(), weights, x.dims())?;
    Ok(GroupLayout::strided(x.dims().len(), 3).l12_norm(&d))
}

fn build_problem(observed: &Field, config: &DenoiseConfig) -> Result<PpdsProblem> {
    let dims = observed.dims();
    let n = dims.len();
    let weights = DiffWeights::new(config.w)?;
    let mut p = PpdsProblem::new();
    let x = p.add_primal("x", n, Box::new(ZeroFn));
    let s = p.add_primal("s", n, Box::new(L1Ball { eta: config.eta }));
    let z1 = p.add_dual("z1", 3 * n, Box::new(L12Norm { layout: GroupLayout::strided(n, 3), weights: None }));
    let z2 = p.add_dual("z2", n, Box::new(L2Ball { center: observed.values().to_vec(), eps: config.eps }));
    let dw = DiffOperator::new(weights, dims);
    let bound = dw.norm_sq_bound();
    p.couple(z1, x, Box::new(dw), bound)?;
    p.couple(z2, x, Box::new(Identity(n)), 1.0)?;
    p.couple(z2, s, Box::new(Identity(n)), 1.0)?;
    Ok(p)
}

/// Solves the preprocessing problem starting from `x = observed`, `s = 0`.
pub fn solve_preprocessing(observed: &Field, config: &DenoiseConfig) -> Result<DenoiseResult> {
    let zeros = vec![0.0; observed.dims().len()];
    solve_preprocessing_from(observed, config, observed.values(), &zeros)
}

/// Same problem from a caller-chosen starting point (duals start at zero).
///
/// The returned `x` is the last iterate projected onto the fidelity ball
/// around `observed - s`, so `(x, s)` is always feasible; the projection moves
/// `x` only by the remaining constraint violation.
pub fn solve_preprocessing_from(
    observed: &Field,
    config: &DenoiseConfig,
    x0: &[f64],
    s0: &[f64],
) -> Result<DenoiseResult> {
    config.validate()?;
    if !observed.is_finite() {
        return Err(Error::Input("observed field has non-finite values".into()));
    }
    let dims = observed.dims();
    let n = dims.len();
    if x0.len() != n || s0.len() != n {
        return Err(Error::dim("initial point does not match the observed field"));
    }

    if config.eps == 0.0 && config.eta == 0.0 {
        // the feasible set is the single point (observed, 0)
        let report = SolveReport { iterations: 0, residuals: vec![0.0, 0.0], converged: true, history: Vec::new() };
        return Ok(DenoiseResult { x: observed.clone(), s: Field::zeros(dims.n1, dims.n2, dims.m)?, report });
    }

    let problem = build_problem(observed, config)?;
    let steps = preprocessing_stepsizes(config.w)?;
    let init = Iterate::with_zero_duals(&problem, vec![x0.to_vec(), s0.to_vec()]);
    let options = SolveOptions { tol: config.tol, max_iter: config.max_iter, monitor: vec![0, 1] };
    let (sol, report) = ppds::solve(&problem, &steps, init, &options)?;

    let mut blocks = sol.primal.into_iter();
    let mut x = blocks.next().unwrap_or_default();
    let s = blocks.next().unwrap_or_default();
    let center: Vec<f64> = observed.values().iter().zip(&s).map(|(o, si)| o - si).collect();
    project_l2_ball_inplace(&mut x, &center, config.eps);

    Ok(DenoiseResult {
        x: Field::new(dims.n1, dims.n2, dims.m, x)?,
        s: Field::new(dims.n1, dims.n2, dims.m, s)?,
        report,
    })
}
