//! Deterministic recursions: the rank-one optimality sequence `γ_t`, AMP
//! state evolution `(μ, Σ, b)` for separable nonlinearities, GLM state
//! evolution `(μ, Σ, Σ̄, ξ, η)`, and the GLM optimality sequence
//! `(β_s, σ_s, σ̃_s)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::denoiser::{DenoiserSpec, SeView, FD_STEP};
use crate::error::{Error, Result};
use crate::prior::{Channel, JointPrior};
use crate::quadrature::{qmc_gaussian, QuadratureRule};

/// Tensor grids are used up to this many Gaussian coordinates.
pub const TENSOR_MAX_DIM: usize = 3;
pub const QMC_POINTS: usize = 1 << 16;
pub const QMC_SEED: u64 = 0x5eed_0f_a3b;
/// Eigenvalues below `-INDEFINITE_TOL` are reported as degenerate.
pub const INDEFINITE_TOL: f64 = 1e-9;
/// `σ_s` below this is treated as exact recovery.
pub const SIGMA_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundSeq {
    /// Rank-one: `gamma[t] = γ_t`, `γ_0 = 0`. Empty for GLM.
    pub gamma: Vec<f64>,
    /// GLM: `beta[s] = β_s`, `β_0 = 0`. Empty for rank-one.
    pub beta: Vec<f64>,
    /// GLM: `sigma[s] = σ_s` for `s ≥ 1`; slot 0 holds 0.
    pub sigma: Vec<f64>,
    pub sigma_tilde: Vec<f64>,
    /// `mmse(γ_t)` or `mmse(β_s)`, same indexing as the SNR list.
    pub mmse_curve: Vec<f64>,
    /// `√(1 − mmse / E[Θ²])`.
    pub optimal_correlation: Vec<f64>,
}

fn correlation_from_mmse(mmse: f64, second: f64) -> f64 {
    if second <= 0.0 {
        return 0.0;
    }
    (1.0 - mmse / second).clamp(0.0, 1.0).sqrt()
}

/// `γ_0 = 0`, `γ_{t+1}² = E[Θ²] − mmse(γ_t)`.
pub fn gamma_recursion(prior: &JointPrior, t_max: usize, rule: &QuadratureRule) -> Result<LowerBoundSeq> {
    prior.validate()?;
    let second = prior.second_moment();
    let mut seq = LowerBoundSeq::default();
    let mut gamma = 0.0;
    for t in 0..=t_max {
        let m = prior.mmse(gamma, rule);
        seq.gamma.push(gamma);
        seq.mmse_curve.push(m);
        seq.optimal_correlation.push(correlation_from_mmse(m, second));
        if t < t_max {
            gamma = (second - m).max(0.0).sqrt();
        }
    }
    Ok(seq)
}

/// Weighted point set over `(θ, u)` from a prior and a correlated Gaussian
/// vector. Row layout: `[θ, u, g_1, …, g_k]`.
pub(crate) struct Cloud {
    pub width: usize,
    pub data: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Cloud {
    pub fn rows(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.data.chunks(self.width).zip(self.weights.iter().copied())
    }
}

/// Factor `cov = L Lᵀ` by a clipped eigen square root, dropping null directions.
fn sqrt_factor(cov: &DMatrix<f64>, iteration: usize) -> Result<DMatrix<f64>> {
    let k = cov.nrows();
    if k == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let sym = (cov + cov.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let top = eig.eigenvalues.iter().copied().fold(0.0_f64, f64::max);
    let mut cols = Vec::new();
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam < -INDEFINITE_TOL {
            return Err(Error::SeDegenerate { iteration, eigenvalue: lam });
        }
        if lam > 1e-14 * top.max(1e-300) && lam > 0.0 {
            cols.push(eig.eigenvectors.column(i) * lam.sqrt());
        }
    }
    if cols.is_empty() {
        return Ok(DMatrix::zeros(k, 0));
    }
    Ok(DMatrix::from_columns(&cols))
}

pub(crate) fn cloud(prior: &JointPrior, cov: &DMatrix<f64>, rule: &QuadratureRule, iteration: usize) -> Result<Cloud> {
    let factor = sqrt_factor(cov, iteration)?;
    let k = cov.nrows();
    let r = factor.ncols();
    let m = prior.latent_dim();
    let dim = m + r;
    let width = 2 + k;
    let mut data = Vec::new();
    let mut weights = Vec::new();
    let mut push = |zeta: &[f64], w: f64, comp: &crate::prior::Component| {
        data.push(comp.theta.at(&zeta[..m]));
        data.push(comp.u.at(&zeta[..m]));
        for i in 0..k {
            let mut g = 0.0;
            for j in 0..r {
                g += factor[(i, j)] * zeta[m + j];
            }
            data.push(g);
        }
        weights.push(w);
    };
    let comps = prior.components();
    if dim <= TENSOR_MAX_DIM {
        let n = rule.order();
        let total = n.pow(dim as u32);
        let mut zeta = vec![0.0; dim];
        for comp in &comps {
            for idx in 0..total {
                let mut rest = idx;
                let mut w = comp.weight;
                for z in zeta.iter_mut() {
                    let node = rest % n;
                    rest /= n;
                    *z = rule.nodes[node];
                    w *= rule.weights[node];
                }
                push(&zeta, w, comp);
            }
        }
    } else {
        let pts = qmc_gaussian(dim, QMC_POINTS, QMC_SEED);
        let base = 1.0 / QMC_POINTS as f64;
        for comp in &comps {
            for zeta in pts.chunks(dim) {
                push(zeta, comp.weight * base, comp);
            }
        }
    }
    Ok(Cloud { width, data, weights })
}

fn sub_cov(full: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| full[(idx[i], idx[j])])
}

fn union(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut v: Vec<usize> = a.iter().chain(b).copied().collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// AMP state evolution for the symmetric model.
///
/// Storage is 0-based; use the 1-based accessors.
#[derive(Debug, Clone, PartialEq)]
pub struct SEState {
    /// `mu[k] = μ_{k+1}`.
    pub mu: Vec<f64>,
    /// `sigma[(i, j)] = Σ_{i+1, j+1}`.
    pub sigma: DMatrix<f64>,
    /// `onsager[(t, s-1)] = b_{t,s}`, `1 ≤ s ≤ t`.
    pub onsager: DMatrix<f64>,
    /// GLM only: `sigma_bar[(i, j)] = Σ̄_{ij}`, `0 ≤ i, j ≤ T`.
    pub sigma_bar: Option<DMatrix<f64>>,
    /// GLM only: `xi[(t, s-1)] = ξ_{t,s}`.
    pub xi: Option<DMatrix<f64>>,
    /// GLM only: `eta[(t-1, s-1)] = η_{t,s}`.
    pub eta: Option<DMatrix<f64>>,
}

impl SEState {
    pub fn iterations(&self) -> usize {
        self.mu.len()
    }
    pub fn mu_at(&self, t: usize) -> f64 {
        self.mu[t - 1]
    }
    pub fn sigma_at(&self, s: usize, t: usize) -> f64 {
        self.sigma[(s - 1, t - 1)]
    }
    pub fn b(&self, t: usize, s: usize) -> f64 {
        self.onsager[(t, s - 1)]
    }
    pub fn diag(&self) -> Vec<f64> {
        (0..self.mu.len()).map(|k| self.sigma[(k, k)]).collect()
    }
}

fn fill_xs(xs: &mut [f64], support: &[usize], mu: &[f64], theta: f64, g: &[f64]) {
    for (k, &j) in support.iter().enumerate() {
        xs[j - 1] = mu[j - 1] * theta + g[k];
    }
}

/// State evolution `(μ, Σ, b)` through `t_max` iterates.
pub fn amp_se(prior: &JointPrior, denoisers: &DenoiserSpec, t_max: usize, rule: &QuadratureRule) -> Result<SEState> {
    if t_max == 0 {
        return Err(Error::InvalidArgument("amp_se needs t_max >= 1".into()));
    }
    if let Some(len) = denoisers.len() {
        if len < t_max {
            return Err(Error::InvalidArgument(format!("{len} denoiser rows for t_max = {t_max}")));
        }
    }
    prior.validate()?;
    let mut mu: Vec<f64> = Vec::with_capacity(t_max);
    let mut sigma = DMatrix::zeros(t_max, t_max);
    for t in 0..t_max {
        let diag: Vec<f64> = (0..t).map(|k| sigma[(k, k)]).collect();
        let view = SeView { mu: &mu, diag: &diag };
        let supp_t = denoisers.support(t);

        let cov = sub_cov(&sigma, &supp_t.iter().map(|j| j - 1).collect::<Vec<_>>());
        let pts = cloud(prior, &cov, rule, t)?;
        let mut xs = vec![0.0; t];
        let mut overlap = 0.0;
        for (row, w) in pts.rows() {
            fill_xs(&mut xs, &supp_t, &mu, row[0], &row[2..]);
            overlap += w * row[0] * denoisers.eval(t, &xs, &row[1..2], &view);
        }

        for s in 0..=t {
            let supp_s = denoisers.support(s);
            let joint = union(&supp_s, &supp_t);
            let cov = sub_cov(&sigma, &joint.iter().map(|j| j - 1).collect::<Vec<_>>());
            let pts = cloud(prior, &cov, rule, t)?;
            let mut acc = 0.0;
            for (row, w) in pts.rows() {
                fill_xs(&mut xs, &joint, &mu, row[0], &row[2..]);
                let fs = denoisers.eval(s, &xs[..s], &row[1..2], &view);
                let ft = denoisers.eval(t, &xs, &row[1..2], &view);
                acc += w * fs * ft;
            }
            sigma[(s, t)] = acc;
            sigma[(t, s)] = acc;
        }
        mu.push(overlap);
    }
    let mut state = SEState {
        mu,
        sigma,
        onsager: DMatrix::zeros(t_max, t_max),
        sigma_bar: None,
        xi: None,
        eta: None,
    };
    state.onsager = onsager_coeffs(&state, denoisers, prior, rule)?;
    Ok(state)
}

/// `b_{t,s} = E[∂_s f_t(μ_{≤t}Θ + G_{≤t}; U)]` for `1 ≤ s ≤ t < T`.
pub fn onsager_coeffs(
    se: &SEState,
    denoisers: &DenoiserSpec,
    prior: &JointPrior,
    rule: &QuadratureRule,
) -> Result<DMatrix<f64>> {
    let big_t = se.iterations();
    let diag = se.diag();
    let view = SeView { mu: &se.mu, diag: &diag };
    let mut b = DMatrix::zeros(big_t, big_t);
    for t in 1..big_t {
        let supp = denoisers.support(t);
        if supp.is_empty() {
            continue;
        }
        let cov = sub_cov(&se.sigma, &supp.iter().map(|j| j - 1).collect::<Vec<_>>());
        let pts = cloud(prior, &cov, rule, t)?;
        let mut xs = vec![0.0; t];
        for &s in &supp {
            let mut acc = 0.0;
            for (row, w) in pts.rows() {
                fill_xs(&mut xs, &supp, &se.mu, row[0], &row[2..]);
                acc += w * denoisers.deriv(t, s, &xs, &row[1..2], &view);
            }
            b[(t, s - 1)] = acc;
        }
    }
    Ok(b)
}

/// GLM optimality sequence.
pub fn glm_beta_recursion(
    prior_tv: &JointPrior,
    channel: &Channel,
    side_wu: &JointPrior,
    delta: f64,
    t_max: usize,
    rule: &QuadratureRule,
) -> Result<LowerBoundSeq> {
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!("delta = {delta} must be positive")));
    }
    prior_tv.validate()?;
    side_wu.validate()?;
    let second = prior_tv.second_moment();
    let side_pts = side_wu.points(rule);
    let mut seq = LowerBoundSeq::default();
    let m0 = prior_tv.mmse(0.0, rule);
    seq.beta.push(0.0);
    seq.sigma.push(0.0);
    seq.sigma_tilde.push(0.0);
    seq.mmse_curve.push(m0);
    seq.optimal_correlation.push(correlation_from_mmse(m0, second));

    let (mut sigma, mut sigma_tilde) = ((second / delta).sqrt(), 0.0);
    for s in 1..=t_max {
        if sigma < SIGMA_FLOOR {
            return Err(Error::RecursionDegenerate { step: s, sigma, partial: Box::new(seq) });
        }
        let mut acc = 0.0;
        for &(w_noise, u, pw) in &side_pts {
            for (z0, w0) in rule.iter() {
                for (z1, w1) in rule.iter() {
                    let y = channel.apply(sigma * z0 + sigma_tilde * z1, w_noise);
                    let e = channel.posterior_z0(sigma, sigma_tilde, y, u, z1)?;
                    acc += pw * w0 * w1 * e * e;
                }
            }
        }
        let beta = (acc.max(0.0)).sqrt() / sigma;
        let m = prior_tv.mmse(beta, rule);
        seq.beta.push(beta);
        seq.sigma.push(sigma);
        seq.sigma_tilde.push(sigma_tilde);
        seq.mmse_curve.push(m);
        seq.optimal_correlation.push(correlation_from_mmse(m, second));
        sigma = (m / delta).max(0.0).sqrt();
        sigma_tilde = ((second - m) / delta).max(0.0).sqrt();
    }
    Ok(seq)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub monotone: bool,
    pub max_violation: f64,
}

/// Evaluates `a ↦ a⁻²·E[E[Z₀ | h(aZ₀ + √(ω₀²−a²)Z₁, W), U, Z₁]²]` on the grid.
pub fn beta_monotonicity_check(
    channel: &Channel,
    side_wu: &JointPrior,
    omega0_sq: f64,
    grid: &[f64],
    rule: &QuadratureRule,
) -> Result<MonotonicityReport> {
    if !(omega0_sq > 0.0) {
        return Err(Error::InvalidArgument("omega0^2 must be positive".into()));
    }
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("grid must be sorted ascending".into()));
    }
    let omega0 = omega0_sq.sqrt();
    if grid.iter().any(|a| !(*a > 0.0 && *a <= omega0 * (1.0 + 1e-12))) {
        return Err(Error::InvalidArgument("grid points must lie in (0, omega0]".into()));
    }
    let side_pts = side_wu.points(rule);
    let mut values = Vec::with_capacity(grid.len());
    for &a in grid {
        let st = (omega0_sq - a * a).max(0.0).sqrt();
        let mut acc = 0.0;
        for &(w_noise, u, pw) in &side_pts {
            for (z0, w0) in rule.iter() {
                for (z1, w1) in rule.iter() {
                    let y = channel.apply(a * z0 + st * z1, w_noise);
                    let e = channel.posterior_z0(a, st, y, u, z1)?;
                    acc += pw * w0 * w1 * e * e;
                }
            }
        }
        values.push(acc / (a * a));
    }
    let max_violation = values.windows(2).map(|w| (w[1] - w[0]).max(0.0)).fold(0.0, f64::max);
    Ok(MonotonicityReport { grid: grid.to_vec(), values, monotone: max_violation <= 1e-9, max_violation })
}

/// GLM state evolution: `f_t(a_{≤t}; y, u)` on the response side and
/// `g_t(b_{≤t}; v)` on the signal side, through `t_max` signal iterates.
#[allow(clippy::too_many_arguments)]
pub fn glm_amp_se(
    prior_tv: &JointPrior,
    side_wu: &JointPrior,
    channel: &Channel,
    f: &DenoiserSpec,
    g: &DenoiserSpec,
    delta: f64,
    t_max: usize,
    rule: &QuadratureRule,
) -> Result<SEState> {
    if t_max == 0 {
        return Err(Error::InvalidArgument("glm_amp_se needs t_max >= 1".into()));
    }
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!("delta = {delta} must be positive")));
    }
    prior_tv.validate()?;
    side_wu.validate()?;
    let mut mu: Vec<f64> = Vec::with_capacity(t_max);
    let mut sigma = DMatrix::zeros(t_max, t_max);
    let mut sigma_bar = DMatrix::zeros(t_max + 1, t_max + 1);
    let mut xi = DMatrix::zeros(t_max, t_max);
    let mut eta = DMatrix::zeros(t_max, t_max);
    sigma_bar[(0, 0)] = prior_tv.second_moment() / delta;
    let empty = SeView::EMPTY;

    for t in 0..t_max {
        // response side: f_t over (Ḡ0, Ḡ_{≤t}), Y = h(Ḡ0, W)
        let supp_t = f.support(t);
        for s in 0..=t {
            let joint = union(&union(&[0], &f.support(s)), &supp_t);
            let cov = sub_cov(&sigma_bar, &joint);
            let pts = cloud(side_wu, &cov, rule, t)?;
            let mut xs = vec![0.0; t];
            let (mut acc, mut dmu) = (0.0, 0.0);
            let mut dxi = vec![0.0; t];
            for (row, w) in pts.rows() {
                let (w_noise, u) = (row[0], row[1]);
                let g0 = row[2];
                for (k, &j) in joint.iter().enumerate().skip(1) {
                    xs[j - 1] = row[2 + k];
                }
                let y = channel.apply(g0, w_noise);
                let ft = f.eval(t, &xs, &[y, u], &empty);
                acc += w * f.eval(s, &xs[..s], &[y, u], &empty) * ft;
                if s == t {
                    let hi = f.eval(t, &xs, &[channel.apply(g0 + FD_STEP, w_noise), u], &empty);
                    let lo = f.eval(t, &xs, &[channel.apply(g0 - FD_STEP, w_noise), u], &empty);
                    dmu += w * (hi - lo) / (2.0 * FD_STEP);
                    for &j in &supp_t {
                        dxi[j - 1] += w * f.deriv(t, j, &xs, &[y, u], &empty);
                    }
                }
            }
            sigma[(s, t)] = acc;
            sigma[(t, s)] = acc;
            if s == t {
                mu.push(dmu);
                for j in 1..=t {
                    xi[(t, j - 1)] = dxi[j - 1];
                }
            }
        }

        // signal side: g_{t+1} over (Θ, V, G_{≤t+1})
        let tg = t + 1;
        let diag: Vec<f64> = (0..tg).map(|k| sigma[(k, k)]).collect();
        let view = SeView { mu: &mu, diag: &diag };
        let supp_g = g.support(tg);
        for i in 1..=tg {
            let joint = union(&g.support(i), &supp_g);
            let cov = sub_cov(&sigma, &joint.iter().map(|j| j - 1).collect::<Vec<_>>());
            let pts = cloud(prior_tv, &cov, rule, tg)?;
            let mut xs = vec![0.0; tg];
            let (mut acc, mut over) = (0.0, 0.0);
            let mut deta = vec![0.0; tg];
            for (row, w) in pts.rows() {
                fill_xs(&mut xs, &joint, &mu, row[0], &row[2..]);
                let gt = g.eval(tg, &xs, &row[1..2], &view);
                acc += w * g.eval(i, &xs[..i], &row[1..2], &view) * gt;
                if i == tg {
                    over += w * row[0] * gt;
                    for &j in &supp_g {
                        deta[j - 1] += w * g.deriv(tg, j, &xs, &row[1..2], &view);
                    }
                }
            }
            sigma_bar[(i, tg)] = acc / delta;
            sigma_bar[(tg, i)] = acc / delta;
            if i == tg {
                sigma_bar[(0, tg)] = over / delta;
                sigma_bar[(tg, 0)] = over / delta;
                for j in 1..=tg {
                    eta[(tg - 1, j - 1)] = deta[j - 1] / delta;
                }
            }
        }
    }
    Ok(SEState {
        mu,
        sigma,
        onsager: DMatrix::zeros(t_max, t_max),
        sigma_bar: Some(sigma_bar),
        xi: Some(xi),
        eta: Some(eta),
    })
}
