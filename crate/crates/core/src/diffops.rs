//! Weighted forward differences with Neumann boundaries.
//!
//! `D_w x` stacks three blocks of length `NM`, in this order: vertical
//! (`w * D_v x`), horizontal (`w * D_h x`) and temporal (`(1 - w) * D_t x`).
//! Each directional difference is `x[k + 1] - x[k]` along its axis and is
//! exactly zero on the trailing row, column or frame.

use crate::denselin::LinearMap;
use crate::error::{Error, Result};
use crate::field::Dims;

/// Spatial/temporal balance `w` in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffWeights {
    w: f64,
}

impl DiffWeights {
    pub fn new(w: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::Input(format!("difference weight w must lie in [0, 1], got {w}")));
        }
        Ok(DiffWeights { w })
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    fn spatial(&self) -> f64 {
        self.w
    }

    fn temporal(&self) -> f64 {
        1.0 - self.w
    }
}

/// Upper bound on `||D_w||_op^2`: each forward difference has squared norm
/// at most 4.
pub fn dw_norm_bound(weights: DiffWeights) -> f64 {
    let w = weights.w();
    8.0 * w * w + 4.0 * (1.0 - w) * (1.0 - w)
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::dim(format!("{what}: expected length {want}, got {got}")));
    }
    Ok(())
}

pub fn apply_dw(x: &[f64], weights: DiffWeights, dims: Dims) -> Result<Vec<f64>> {
    check_len("D_w input", x.len(), dims.len())?;
    let mut out = vec![0.0; 3 * dims.len()];
    dw_forward(x, &mut out, weights, dims);
    Ok(out)
}

pub fn apply_dw_adjoint(y: &[f64], weights: DiffWeights, dims: Dims) -> Result<Vec<f64>> {
    check_len("D_w adjoint input", y.len(), 3 * dims.len())?;
    let mut out = vec![0.0; dims.len()];
    dw_adjoint(y, &mut out, weights, dims);
    Ok(out)
}

/// `out = D_w x`; `out` has length `3 NM`.
pub(crate) fn dw_forward(x: &[f64], out: &mut [f64], weights: DiffWeights, dims: Dims) {
    let (n1, n2, m) = (dims.n1, dims.n2, dims.m);
    let n = n1 * n2;
    let nm = n * m;
    let (ws, wt) = (weights.spatial(), weights.temporal());
    let (vert, rest) = out.split_at_mut(nm);
    let (horz, temp) = rest.split_at_mut(nm);

    for t in 0..m {
        let base = t * n;
        for i in 0..n1 {
            let row = base + i * n2;
            if i + 1 < n1 {
                for j in 0..n2 {
                    vert[row + j] = ws * (x[row + n2 + j] - x[row + j]);
                }
            } else {
                vert[row..row + n2].fill(0.0);
            }
            for j in 0..n2 - 1 {
                horz[row + j] = ws * (x[row + j + 1] - x[row + j]);
            }
            horz[row + n2 - 1] = 0.0;
        }
        if t + 1 < m {
            for k in base..base + n {
                temp[k] = wt * (x[k + n] - x[k]);
            }
        } else {
            temp[base..base + n].fill(0.0);
        }
    }
}

/// `out = D_w^T y`; `out` has length `NM`.
pub(crate) fn dw_adjoint(y: &[f64], out: &mut [f64], weights: DiffWeights, dims: Dims) {
    let (n1, n2, m) = (dims.n1, dims.n2, dims.m);
    let n = n1 * n2;
    let nm = n * m;
    let (ws, wt) = (weights.spatial(), weights.temporal());
    let vert = &y[..nm];
    let horz = &y[nm..2 * nm];
    let temp = &y[2 * nm..];

    for t in 0..m {
        let base = t * n;
        for i in 0..n1 {
            let row = base + i * n2;
            for j in 0..n2 {
                let k = row + j;
                let mut acc = 0.0;
                // (D^T y)[k] = y[k - 1] - y[k], each term present only where
                // the forward stencil is defined.
                if i > 0 {
                    acc += vert[k - n2];
                }
                if i + 1 < n1 {
                    acc -= vert[k];
                }
                let mut h = 0.0;
                if j > 0 {
                    h += horz[k - 1];
                }
                if j + 1 < n2 {
                    h -= horz[k];
                }
                let mut tt = 0.0;
                if t > 0 {
                    tt += temp[k - n];
                }
                if t + 1 < m {
                    tt -= temp[k];
                }
                out[k] = ws * (acc + h) + wt * tt;
            }
        }
    }
}

/// `D_w` as a linear map for the splitting solver.
#[derive(Debug, Clone, Copy)]
pub struct DiffOperator {
    pub weights: DiffWeights,
    pub dims: Dims,
}

impl DiffOperator {
    pub fn new(weights: DiffWeights, dims: Dims) -> Self {
        DiffOperator { weights, dims }
    }

    pub fn norm_sq_bound(&self) -> f64 {
        dw_norm_bound(self.weights)
    }
}

impl LinearMap for DiffOperator {
    fn dim_in(&self) -> usize {
        self.dims.len()
    }

    fn dim_out(&self) -> usize {
        3 * self.dims.len()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        dw_forward(x, out, self.weights, self.dims);
    }

    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        dw_adjoint(y, out, self.weights, self.dims);
    }
}
