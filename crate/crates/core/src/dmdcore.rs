//! Standard DMD: mode extraction, least-squares amplitudes, importance
//! scores, mode selection and reconstruction.

use std::cmp::Ordering;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::denselin::{eig_small, thin_svd, truncated_svd, LinearMap};
use crate::error::{Error, Result};
use crate::field::Field;

/// Conjugate-pair bookkeeping for one mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairTag {
    Real,
    /// Positive imaginary part; holds the partner's index.
    Leader(usize),
    /// Exact conjugate of the leader at the held index.
    Follower(usize),
}

#[derive(Debug, Clone)]
pub struct DmdModes {
    /// Spatial modes as columns, `N x r`.
    pub phi: DMatrix<Complex64>,
    pub lambda: Vec<Complex64>,
    /// Reduced operator (`r x r`); empty when modes were assembled directly.
    pub a_tilde: DMatrix<f64>,
    pub pairs: Vec<PairTag>,
    /// Frame shape `(n1, n2)`.
    pub frame: (usize, usize),
    /// Set when the requested rank exceeded the numerical rank of the data.
    pub rank_reduced: bool,
}

impl DmdModes {
    /// Modes from given columns and eigenvalues. Complex eigenvalues must come
    /// in conjugate pairs whose mode columns are conjugate to `1e-10`.
    pub fn from_parts(phi: DMatrix<Complex64>, lambda: Vec<Complex64>, frame: (usize, usize)) -> Result<Self> {
        if phi.ncols() != lambda.len() {
            return Err(Error::dim(format!("{} mode columns for {} eigenvalues", phi.ncols(), lambda.len())));
        }
        if phi.nrows() != frame.0 * frame.1 {
            return Err(Error::dim(format!(
                "mode length {} does not match a {}x{} frame",
                phi.nrows(),
                frame.0,
                frame.1
            )));
        }
        let pairs = tag_pairs(&phi, &lambda)?;
        Ok(DmdModes { phi, lambda, a_tilde: DMatrix::zeros(0, 0), pairs, frame, rank_reduced: false })
    }

    pub fn rank(&self) -> usize {
        self.lambda.len()
    }

    pub fn frame_len(&self) -> usize {
        self.phi.nrows()
    }

    pub fn partner(&self, i: usize) -> Option<usize> {
        match self.pairs[i] {
            PairTag::Real => None,
            PairTag::Leader(j) | PairTag::Follower(j) => Some(j),
        }
    }

    /// `||phi_i||_2`.
    pub fn mode_norm(&self, i: usize) -> f64 {
        self.phi.column(i).iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Checks that `keep` contains both members of every pair it touches.
    pub fn check_pair_closed(&self, keep: &[usize]) -> Result<()> {
        for &i in keep {
            if i >= self.rank() {
                return Err(Error::Input(format!("mode index {i} out of range (rank {})", self.rank())));
            }
            if let Some(j) = self.partner(i) {
                if !keep.contains(&j) {
                    return Err(Error::Input(format!("mode set contains {i} but not its conjugate {j}")));
                }
            }
        }
        Ok(())
    }
}

/// Pairs each eigenvalue with positive imaginary part to an exact conjugate.
fn tag_pairs(phi: &DMatrix<Complex64>, lambda: &[Complex64]) -> Result<Vec<PairTag>> {
    let r = lambda.len();
    let mut tags = vec![PairTag::Real; r];
    let mut used = vec![false; r];
    for i in 0..r {
        if lambda[i].im == 0.0 || used[i] {
            continue;
        }
        if lambda[i].im < 0.0 {
            continue;
        }
        let j = (0..r)
            .find(|&j| !used[j] && j != i && lambda[j] == lambda[i].conj())
            .ok_or_else(|| Error::Input(format!("eigenvalue {} has no conjugate partner", lambda[i])))?;
        let scale = phi.column(i).iter().map(|c| c.norm()).fold(0.0, f64::max).max(1.0);
        for (a, b) in phi.column(i).iter().zip(phi.column(j).iter()) {
            if (a.conj() - b).norm() > 1e-10 * scale {
                return Err(Error::Input(format!("modes {i} and {j} are not conjugate")));
            }
        }
        used[i] = true;
        used[j] = true;
        tags[i] = PairTag::Leader(j);
        tags[j] = PairTag::Follower(i);
    }
    if let Some(k) = (0..r).find(|&k| lambda[k].im != 0.0 && !used[k]) {
        return Err(Error::Input(format!("eigenvalue {} has no conjugate partner", lambda[k])));
    }
    Ok(tags)
}

fn snapshot_matrix(data: &Field) -> DMatrix<f64> {
    DMatrix::from_column_slice(data.frame_len(), data.m(), data.values())
}

/// Smallest rank whose leading singular values of the shifted-out snapshot
/// matrix hold at least `fraction` of the total energy.
pub fn rank_for_energy(data: &Field, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Input(format!("energy fraction must lie in (0, 1], got {fraction}")));
    }
    if data.m() < 2 {
        return Err(Error::Input("need at least two snapshots".into()));
    }
    let x = snapshot_matrix(data).columns(0, data.m() - 1).into_owned();
    let (_, s, _) = thin_svd(&x)?;
    let total: f64 = s.iter().map(|v| v * v).sum();
    if total == 0.0 {
        return Err(Error::Numerical("snapshot matrix is zero".into()));
    }
    let mut acc = 0.0;
    for (k, v) in s.iter().enumerate() {
        acc += v * v;
        if acc >= fraction * total * (1.0 - 1e-12) {
            return Ok(k + 1);
        }
    }
    Ok(s.len())
}

pub fn extract_modes(data: &Field, r: usize) -> Result<DmdModes> {
    let (n, m) = (data.frame_len(), data.m());
    if m < 2 {
        return Err(Error::Input("need at least two snapshots".into()));
    }
    if r == 0 || r > n.min(m - 1) {
        return Err(Error::Input(format!("rank {r} outside 1..={}", n.min(m - 1))));
    }
    if !data.is_finite() {
        return Err(Error::Input("data has non-finite values".into()));
    }
    let all = snapshot_matrix(data);
    let x = all.columns(0, m - 1).into_owned();
    let xp = all.columns(1, m - 1).into_owned();
    let svd = truncated_svd(&x, r)?;
    let r = svd.rank();

    let mut b = &xp * &svd.v;
    for (j, &s) in svd.s.iter().enumerate() {
        b.column_mut(j).scale_mut(1.0 / s);
    }
    let a_tilde = svd.u.transpose() * &b;
    let eig = eig_small(&a_tilde)?;

    let bc = b.map(|v| Complex64::new(v, 0.0));
    let mut phi = &bc * &eig.vectors;
    // followers are rebuilt as exact conjugates of their leaders
    for i in 0..r {
        if eig.values[i].im > 0.0 && i + 1 < r && eig.values[i + 1] == eig.values[i].conj() {
            let lead: Vec<Complex64> = phi.column(i).iter().map(|c| c.conj()).collect();
            phi.set_column(i + 1, &nalgebra::DVector::from_vec(lead));
        }
    }
    let pairs = tag_pairs(&phi, &eig.values)?;
    Ok(DmdModes {
        phi,
        lambda: eig.values,
        a_tilde,
        pairs,
        frame: (data.n1(), data.n2()),
        rank_reduced: svd.rank_reduced,
    })
}

/// Vandermonde matrix `C[i, t] = lambda_i^t`, `t = 0..m`.
pub fn vandermonde(lambda: &[Complex64], m: usize) -> DMatrix<Complex64> {
    DMatrix::from_fn(lambda.len(), m, |i, t| lambda[i].powu(t as u32))
}

#[derive(Debug, Clone)]
pub struct AmplitudeFit {
    pub xi: Vec<Complex64>,
    /// `||X - Phi diag(xi) C||_F`.
    pub residual: f64,
    /// The normal system was rank deficient; `xi` is its minimum-norm solution.
    pub singular: bool,
}

/// Real parameterization of conjugate-symmetric amplitudes: one real
/// parameter per real mode, `(Re, Im)` of the leader per pair.
fn amplitude_columns(modes: &DmdModes) -> Vec<(usize, bool)> {
    let mut cols = Vec::new();
    for (i, tag) in modes.pairs.iter().enumerate() {
        match tag {
            PairTag::Real => cols.push((i, false)),
            PairTag::Leader(_) => {
                cols.push((i, false));
                cols.push((i, true));
            }
            PairTag::Follower(_) => {}
        }
    }
    cols
}

/// Least-squares amplitudes over all frames, with `xi` of each follower the
/// conjugate of its leader's.
pub fn fit_amplitudes_ls(modes: &DmdModes, data: &Field) -> Result<AmplitudeFit> {
    let n = modes.frame_len();
    if data.frame_len() != n {
        return Err(Error::dim(format!("modes have length {n}, frames have {}", data.frame_len())));
    }
    let m = data.m();
    let cols = amplitude_columns(modes);
    let p = cols.len();
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut rhs = vec![0.0; p];
    let mut a_t = DMatrix::<f64>::zeros(n, p);
    let mut power: Vec<Complex64> = vec![Complex64::new(1.0, 0.0); modes.rank()];
    for t in 0..m {
        for (k, &(i, imag)) in cols.iter().enumerate() {
            let lam = power[i];
            let pair = !matches!(modes.pairs[i], PairTag::Real);
            for (row, ph) in modes.phi.column(i).iter().enumerate() {
                let v = ph * lam;
                a_t[(row, k)] = match (pair, imag) {
                    (false, _) => v.re,
                    (true, false) => 2.0 * v.re,
                    (true, true) => -2.0 * v.im,
                };
            }
        }
        let frame = data.frame(t);
        for k in 0..p {
            let ck = a_t.column(k);
            rhs[k] += ck.iter().zip(frame).map(|(a, b)| a * b).sum::<f64>();
            for l in k..p {
                let g = ck.dot(&a_t.column(l));
                gram[(k, l)] += g;
                if l != k {
                    gram[(l, k)] += g;
                }
            }
        }
        for (pw, lam) in power.iter_mut().zip(&modes.lambda) {
            *pw *= lam;
        }
    }

    let mut theta = vec![0.0; p];
    let mut singular = false;
    if p > 0 {
        let (u, s, v) = thin_svd(&gram)?;
        let tol = s[0] * p as f64 * f64::EPSILON;
        for (k, &sk) in s.iter().enumerate().take(p) {
            if sk <= tol || sk == 0.0 {
                singular = true;
                continue;
            }
            let coef = u.column(k).iter().zip(&rhs).map(|(a, b)| a * b).sum::<f64>() / sk;
            for (th, vk) in theta.iter_mut().zip(v.column(k).iter()) {
                *th += coef * vk;
            }
        }
    }

    let mut xi = vec![Complex64::new(0.0, 0.0); modes.rank()];
    let mut k = 0;
    while k < p {
        let (i, _) = cols[k];
        match modes.pairs[i] {
            PairTag::Real => {
                xi[i] = Complex64::new(theta[k], 0.0);
                k += 1;
            }
            PairTag::Leader(j) => {
                xi[i] = Complex64::new(theta[k], theta[k + 1]);
                xi[j] = xi[i].conj();
                k += 2;
            }
            PairTag::Follower(_) => unreachable!("followers have no columns"),
        }
    }

    let all: Vec<usize> = (0..modes.rank()).collect();
    let recon = reconstruct(modes, &xi, &all, m)?;
    let residual = recon.values().iter().zip(data.values()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    Ok(AmplitudeFit { xi, residual, singular })
}

/// `p_i = |xi_i| ||phi_i|| sum_{j<m} |lambda_i|^j`.
pub fn mode_importance(modes: &DmdModes, xi: &[Complex64], m: usize) -> Result<Vec<f64>> {
    if xi.len() != modes.rank() {
        return Err(Error::dim(format!("{} amplitudes for {} modes", xi.len(), modes.rank())));
    }
    Ok((0..modes.rank())
        .map(|i| xi[i].norm() * modes.mode_norm(i) * geometric_sum(modes.lambda[i].norm(), m))
        .collect())
}

/// `sum_{j<m} a^j`.
pub fn geometric_sum(a: f64, m: usize) -> f64 {
    if (a - 1.0).abs() < 1e-6 {
        let mut total = 0.0;
        let mut term = 1.0;
        for _ in 0..m {
            total += term;
            term *= a;
        }
        total
    } else {
        (1.0 - a.powi(m as i32)) / (1.0 - a)
    }
}

/// `nu_i = p_i^-1 / sum_{p_j != 0} p_j^-1`, and 1 where `p_i = 0`.
pub fn importance_weights(p: &[f64]) -> Vec<f64> {
    let norm: f64 = p.iter().filter(|&&v| v != 0.0).map(|v| 1.0 / v).sum();
    p.iter().map(|&v| if v == 0.0 { 1.0 } else { (1.0 / v) / norm }).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Amplitudes {
    pub xi: Vec<Complex64>,
    pub importance: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Amplitudes {
    pub fn new(modes: &DmdModes, xi: Vec<Complex64>, m: usize) -> Result<Self> {
        let importance = mode_importance(modes, &xi, m)?;
        let weights = importance_weights(&importance);
        Ok(Amplitudes { xi, importance, weights })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Selection {
    /// The `k` most important modes (before pair closure).
    Count(usize),
    /// Every mode with importance at least this value.
    Threshold(f64),
}

/// Mode order by importance, ties broken by larger `|lambda|`, then smaller
/// phase folded into `[0, pi]`, then index.
pub fn importance_order(modes: &DmdModes, importance: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..importance.len()).collect();
    let phase = |i: usize| modes.lambda[i].im.abs().atan2(modes.lambda[i].re);
    order.sort_by(|&a, &b| {
        importance[b]
            .total_cmp(&importance[a])
            .then_with(|| modes.lambda[b].norm().total_cmp(&modes.lambda[a].norm()))
            .then_with(|| phase(a).partial_cmp(&phase(b)).unwrap_or(Ordering::Equal))
            .then(a.cmp(&b))
    });
    order
}

/// Selected mode indices (ascending), closed under conjugate pairing.
pub fn select_modes(modes: &DmdModes, importance: &[f64], selection: Selection) -> Result<Vec<usize>> {
    if importance.len() != modes.rank() {
        return Err(Error::dim(format!("{} importance values for {} modes", importance.len(), modes.rank())));
    }
    let order = importance_order(modes, importance);
    let chosen: Vec<usize> = match selection {
        Selection::Count(k) => {
            if k > modes.rank() {
                return Err(Error::Input(format!("cannot select {k} of {} modes", modes.rank())));
            }
            order[..k].to_vec()
        }
        Selection::Threshold(t) => order.into_iter().filter(|&i| importance[i] >= t).collect(),
    };
    let mut keep = vec![false; modes.rank()];
    for i in chosen {
        keep[i] = true;
        if let Some(j) = modes.partner(i) {
            keep[j] = true;
        }
    }
    Ok((0..modes.rank()).filter(|&i| keep[i]).collect())
}

/// `Re(Phi_keep diag(xi_keep) C_keep)` as an `m`-frame field.
pub fn reconstruct(modes: &DmdModes, xi: &[Complex64], keep: &[usize], m: usize) -> Result<Field> {
    if xi.len() != modes.rank() {
        return Err(Error::dim(format!("{} amplitudes for {} modes", xi.len(), modes.rank())));
    }
    modes.check_pair_closed(keep)?;
    let n = modes.frame_len();
    let mut values = vec![0.0; n * m];
    for &i in keep {
        let phi = modes.phi.column(i);
        for t in 0..m {
            let coef = xi[i] * modes.lambda[i].powu(t as u32);
            for (v, ph) in values[t * n..(t + 1) * n].iter_mut().zip(phi.iter()) {
                *v += (ph * coef).re;
            }
        }
    }
    Field::new(modes.frame.0, modes.frame.1, m, values)
}

/// The amplitude-to-field operator `T = C^T (Khatri-Rao) Phi`, applied
/// mode by mode without materializing it.
#[derive(Debug, Clone)]
pub struct ModeDictionary {
    phi_re: Vec<Vec<f64>>,
    phi_im: Vec<Vec<f64>>,
    vander: DMatrix<Complex64>,
    n: usize,
    m: usize,
}

impl ModeDictionary {
    pub fn new(modes: &DmdModes, m: usize) -> Self {
        let r = modes.rank();
        ModeDictionary {
            phi_re: (0..r).map(|i| modes.phi.column(i).iter().map(|c| c.re).collect()).collect(),
            phi_im: (0..r).map(|i| modes.phi.column(i).iter().map(|c| c.im).collect()).collect(),
            vander: vandermonde(&modes.lambda, m),
            n: modes.frame_len(),
            m,
        }
    }

    pub fn rank(&self) -> usize {
        self.phi_re.len()
    }

    pub fn vandermonde(&self) -> &DMatrix<Complex64> {
        &self.vander
    }

    /// `T xi` (complex, length `N M`).
    pub fn apply(&self, xi: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.n * self.m];
        for (i, x) in xi.iter().enumerate().take(self.rank()) {
            for t in 0..self.m {
                let coef = x * self.vander[(i, t)];
                for (k, o) in out[t * self.n..(t + 1) * self.n].iter_mut().enumerate() {
                    *o += Complex64::new(self.phi_re[i][k], self.phi_im[i][k]) * coef;
                }
            }
        }
        out
    }

    /// The real map `(Re xi; Im xi) -> Re(T xi)`.
    pub fn realified(&self) -> RealDictionary<'_> {
        RealDictionary { dict: self }
    }
}

/// `T_R = [Re T, -Im T]` as a linear map from `R^{2r}` to `R^{NM}`.
#[derive(Debug, Clone, Copy)]
pub struct RealDictionary<'a> {
    dict: &'a ModeDictionary,
}

/// Owned variant of [`RealDictionary`] for solvers that need `'static` maps.
#[derive(Debug, Clone)]
pub struct OwnedRealDictionary(pub ModeDictionary);

fn real_apply(d: &ModeDictionary, x: &[f64], out: &mut [f64]) {
    let r = d.rank();
    out.fill(0.0);
    for i in 0..r {
        let xi = Complex64::new(x[i], x[r + i]);
        if xi == Complex64::new(0.0, 0.0) {
            continue;
        }
        let (pre, pim) = (&d.phi_re[i], &d.phi_im[i]);
        for t in 0..d.m {
            let c = xi * d.vander[(i, t)];
            for ((o, a), b) in out[t * d.n..(t + 1) * d.n].iter_mut().zip(pre).zip(pim) {
                *o += a * c.re - b * c.im;
            }
        }
    }
}

fn real_adjoint(d: &ModeDictionary, y: &[f64], out: &mut [f64]) {
    let r = d.rank();
    for i in 0..r {
        let (pre, pim) = (&d.phi_re[i], &d.phi_im[i]);
        let mut q = Complex64::new(0.0, 0.0);
        for t in 0..d.m {
            let frame = &y[t * d.n..(t + 1) * d.n];
            let mut sre = 0.0;
            let mut sim = 0.0;
            for ((v, a), b) in frame.iter().zip(pre).zip(pim) {
                sre += a * v;
                sim += b * v;
            }
            q += Complex64::new(sre, sim) * d.vander[(i, t)];
        }
        out[i] = q.re;
        out[r + i] = -q.im;
    }
}

impl LinearMap for RealDictionary<'_> {
    fn dim_in(&self) -> usize {
        2 * self.dict.rank()
    }
    fn dim_out(&self) -> usize {
        self.dict.n * self.dict.m
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        real_apply(self.dict, x, out);
    }
    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        real_adjoint(self.dict, y, out);
    }
}

impl LinearMap for OwnedRealDictionary {
    fn dim_in(&self) -> usize {
        2 * self.0.rank()
    }
    fn dim_out(&self) -> usize {
        self.0.n * self.0.m
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        real_apply(&self.0, x, out);
    }
    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        real_adjoint(&self.0, y, out);
    }
}
