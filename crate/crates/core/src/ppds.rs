//! Preconditioned primal-dual splitting for problems of the form
//!
//! ```text
//! min_{y_1..y_N}  sum_i g_i(y_i) + sum_j h_j( sum_i L_ji y_i )
//! ```
//!
//! with per-block stepsizes `gamma_y_i = 1 / sum_j ||L_ji||^2` and
//! `gamma_z_j = 1 / N`. Dual updates go through the Moreau identity, so every
//! block only needs the prox of its own function.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::denselin::{max_singular_value, norm2, LinearMap};
use crate::error::{Error, Result};
use crate::prox::{moreau_conjugate_inplace, Prox};

pub const DEFAULT_TOL: f64 = 1e-4;
pub const DEFAULT_MAX_ITER: usize = 20_000;

struct Block {
    name: String,
    dim: usize,
    func: Box<dyn Prox>,
}

struct Coupling {
    dual: usize,
    primal: usize,
    op: Box<dyn LinearMap>,
    norm_sq_bound: f64,
}

/// Blocks, functions and couplings of one splitting problem.
#[derive(Default)]
pub struct PpdsProblem {
    primal: Vec<Block>,
    dual: Vec<Block>,
    couplings: Vec<Coupling>,
}

impl PpdsProblem {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a primal block `y_i` with function `g_i`; returns its index.
    pub fn add_primal(&mut self, name: &str, dim: usize, g: Box<dyn Prox>) -> usize {
        self.primal.push(Block { name: name.to_string(), dim, func: g });
        self.primal.len() - 1
    }

    /// Adds a dual block `z_j` for the function `h_j`; returns its index.
    pub fn add_dual(&mut self, name: &str, dim: usize, h: Box<dyn Prox>) -> usize {
        self.dual.push(Block { name: name.to_string(), dim, func: h });
        self.dual.len() - 1
    }

    /// Declares `L_ji` with a bound on its squared operator norm.
    pub fn couple(&mut self, dual: usize, primal: usize, op: Box<dyn LinearMap>, norm_sq_bound: f64) -> Result<()> {
        let (Some(d), Some(p)) = (self.dual.get(dual), self.primal.get(primal)) else {
            return Err(Error::Config(format!("coupling ({dual}, {primal}) references a missing block")));
        };
        if op.dim_in() != p.dim || op.dim_out() != d.dim {
            return Err(Error::dim(format!(
                "coupling {} <- {} maps {} -> {}, blocks are {} and {}",
                d.name,
                p.name,
                op.dim_in(),
                op.dim_out(),
                p.dim,
                d.dim
            )));
        }
        if !(norm_sq_bound >= 0.0) || !norm_sq_bound.is_finite() {
            return Err(Error::Config(format!("invalid norm bound {norm_sq_bound}")));
        }
        self.couplings.push(Coupling { dual, primal, op, norm_sq_bound });
        Ok(())
    }

    pub fn primal_dims(&self) -> Vec<usize> {
        self.primal.iter().map(|b| b.dim).collect()
    }

    pub fn dual_dims(&self) -> Vec<usize> {
        self.dual.iter().map(|b| b.dim).collect()
    }

    /// Checks every coupling: the adjoint identity on a few seeded random
    /// pairs (relative `tol`) and that the declared bound is at least the
    /// estimated squared norm.
    pub fn check_couplings(&self, tol: f64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(0xc0ff_ee00);
        for c in &self.couplings {
            let (n, m) = (c.op.dim_in(), c.op.dim_out());
            for _ in 0..3 {
                let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
                let y: Vec<f64> = (0..m).map(|_| rng.random::<f64>() - 0.5).collect();
                let mut ax = vec![0.0; m];
                let mut aty = vec![0.0; n];
                c.op.apply(&x, &mut ax);
                c.op.apply_adjoint(&y, &mut aty);
                let lhs: f64 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
                let rhs: f64 = x.iter().zip(&aty).map(|(a, b)| a * b).sum();
                let scale = norm2(&ax) * norm2(&y) + norm2(&x) * norm2(&aty);
                if (lhs - rhs).abs() > tol * scale.max(f64::MIN_POSITIVE) {
                    return Err(Error::Numerical(format!(
                        "adjoint mismatch for coupling {} <- {}",
                        self.dual[c.dual].name, self.primal[c.primal].name
                    )));
                }
            }
            let sigma = max_singular_value(c.op.as_ref())?;
            if sigma * sigma > c.norm_sq_bound * (1.0 + 1e-9) {
                return Err(Error::Numerical(format!(
                    "norm bound {} below estimate {} for coupling {} <- {}",
                    c.norm_sq_bound,
                    sigma * sigma,
                    self.dual[c.dual].name,
                    self.primal[c.primal].name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepSizes {
    pub gamma_y: Vec<f64>,
    pub gamma_z: Vec<f64>,
}

pub fn derive_stepsizes(problem: &PpdsProblem) -> Result<StepSizes> {
    let n = problem.primal.len();
    if n == 0 {
        return Err(Error::Config("problem has no primal blocks".into()));
    }
    let mut gamma_y = Vec::with_capacity(n);
    for (i, block) in problem.primal.iter().enumerate() {
        let sum: f64 = problem.couplings.iter().filter(|c| c.primal == i).map(|c| c.norm_sq_bound).sum();
        if sum <= 0.0 {
            return Err(Error::Config(format!("primal block {} has zero total coupling norm", block.name)));
        }
        gamma_y.push(1.0 / sum);
    }
    let gamma_z = vec![1.0 / n as f64; problem.dual.len()];
    Ok(StepSizes { gamma_y, gamma_z })
}

/// Values of all blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Iterate {
    pub primal: Vec<Vec<f64>>,
    pub dual: Vec<Vec<f64>>,
}

impl Iterate {
    /// Given primal values, zero duals.
    pub fn with_zero_duals(problem: &PpdsProblem, primal: Vec<Vec<f64>>) -> Self {
        let dual = problem.dual.iter().map(|b| vec![0.0; b.dim]).collect();
        Iterate { primal, dual }
    }
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Primal block indices whose relative change gates convergence;
    /// empty means all primal blocks.
    pub monitor: Vec<usize>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { tol: DEFAULT_TOL, max_iter: DEFAULT_MAX_ITER, monitor: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// Final relative change of each monitored block, in `monitor` order.
    pub residuals: Vec<f64>,
    pub converged: bool,
    /// Relative change of the full iterate (all blocks) at each iteration.
    pub history: Vec<f64>,
}

fn relative_change(new: &[f64], old: &[f64]) -> f64 {
    let diff = new.iter().zip(old).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let base = norm2(old);
    if base < 1e-12 {
        diff
    } else {
        diff / base
    }
}

pub fn solve(
    problem: &PpdsProblem,
    steps: &StepSizes,
    init: Iterate,
    options: &SolveOptions,
) -> Result<(Iterate, SolveReport)> {
    let np = problem.primal.len();
    let nd = problem.dual.len();
    if init.primal.len() != np || init.dual.len() != nd {
        return Err(Error::dim("initial iterate block count does not match the problem"));
    }
    for (v, b) in init.primal.iter().zip(&problem.primal).chain(init.dual.iter().zip(&problem.dual)) {
        if v.len() != b.dim {
            return Err(Error::dim(format!("block {} has length {}, expected {}", b.name, v.len(), b.dim)));
        }
    }
    if steps.gamma_y.len() != np || steps.gamma_z.len() != nd {
        return Err(Error::dim("stepsize count does not match the problem"));
    }
    if !(options.tol > 0.0) || options.max_iter == 0 {
        return Err(Error::Config("tolerance and iteration cap must be positive".into()));
    }
    let monitor: Vec<usize> = if options.monitor.is_empty() { (0..np).collect() } else { options.monitor.clone() };
    if monitor.iter().any(|&i| i >= np) {
        return Err(Error::Config("monitored block index out of range".into()));
    }

    let Iterate { primal: mut y, dual: mut z } = init;
    let mut y_new: Vec<Vec<f64>> = y.iter().map(|v| vec![0.0; v.len()]).collect();
    let mut y_bar: Vec<Vec<f64>> = y_new.clone();
    let mut z_new: Vec<Vec<f64>> = z.iter().map(|v| vec![0.0; v.len()]).collect();
    let mut tmp_primal: Vec<Vec<f64>> = y_new.clone();
    let mut tmp_dual: Vec<Vec<f64>> = z_new.clone();
    let mut scratch: Vec<Vec<f64>> = z_new.clone();

    let mut history = Vec::new();
    let mut residuals = vec![f64::INFINITY; monitor.len()];
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=options.max_iter {
        iterations = iter;

        for i in 0..np {
            let gamma = steps.gamma_y[i];
            let out = &mut y_new[i];
            out.copy_from_slice(&y[i]);
            for c in problem.couplings.iter().filter(|c| c.primal == i) {
                let t = &mut tmp_primal[i];
                c.op.apply_adjoint(&z[c.dual], t);
                out.iter_mut().zip(t.iter()).for_each(|(o, g)| *o -= gamma * g);
            }
            problem.primal[i].func.prox(out, gamma);
            check_finite(out, &problem.primal[i].name, iter)?;
            for ((b, n), o) in y_bar[i].iter_mut().zip(out.iter()).zip(&y[i]) {
                *b = 2.0 * n - o;
            }
        }

        for j in 0..nd {
            let gamma = steps.gamma_z[j];
            let out = &mut z_new[j];
            out.copy_from_slice(&z[j]);
            for c in problem.couplings.iter().filter(|c| c.dual == j) {
                let t = &mut tmp_dual[j];
                c.op.apply(&y_bar[c.primal], t);
                out.iter_mut().zip(t.iter()).for_each(|(o, a)| *o += gamma * a);
            }
            moreau_conjugate_inplace(problem.dual[j].func.as_ref(), gamma, out, &mut scratch[j]);
            check_finite(out, &problem.dual[j].name, iter)?;
        }

        for (r, &i) in residuals.iter_mut().zip(&monitor) {
            *r = relative_change(&y_new[i], &y[i]);
        }
        let mut diff2 = 0.0;
        let mut base2 = 0.0;
        for (new, old) in y_new.iter().zip(&y).chain(z_new.iter().zip(&z)) {
            for (a, b) in new.iter().zip(old) {
                diff2 += (a - b) * (a - b);
                base2 += b * b;
            }
        }
        history.push(if base2.sqrt() < 1e-12 { diff2.sqrt() } else { (diff2 / base2).sqrt() });

        std::mem::swap(&mut y, &mut y_new);
        std::mem::swap(&mut z, &mut z_new);

        // With zero initial duals the first primal step can be a no-op, so a
        // single quiet iteration says nothing about convergence.
        if iter > 1 && residuals.iter().all(|&r| r < options.tol) {
            converged = true;
            break;
        }
    }

    Ok((Iterate { primal: y, dual: z }, SolveReport { iterations, residuals, converged, history }))
}

fn check_finite(v: &[f64], block: &str, iteration: usize) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence { block: block.to_string(), iteration })
    }
}
