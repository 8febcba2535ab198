//! Noiseless real phase retrieval: the preprocessed spectral initialization
//! with its asymptotic overlap, and the baseline first-order updates
//! (gradient descent, prox-linear and its one-step variant, truncated
//! amplitude flow).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::amp::GlmSample;
use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::quadrature::{argmin_scalar, gauss_legendre, root_bisect, QuadratureRule};

pub const DEFAULT_EPSILON: f64 = 1e-3;
/// Initial upper end of the `λ` search interval.
pub const LAMBDA_MAX: f64 = 50.0;
/// The interval doubles until it brackets the solution or reaches this.
pub const LAMBDA_CEILING: f64 = 1e7;
/// Relative residual accepted for the leading eigenpair of `D_n`.
pub const EIGEN_RESIDUAL_TOL: f64 = 1e-8;
const OPERATOR_NORM_MAX_ITER: usize = 2000;

/// `T(y) = (y − 1)/(y + √(1+ε) − 1)`.
#[inline]
pub fn preprocess_t(y: f64, epsilon: f64) -> f64 {
    (y - 1.0) / (y + (1.0 + epsilon).sqrt() - 1.0)
}

/// Gaussian expectations of functions of `G²`.
///
/// The integrand `T(G²)` has a dip of width `√(√(1+ε)−1)` at the origin, far
/// below what a Gauss–Hermite rule resolves, so the integral over `g ≥ 0` is
/// split into panels graded towards zero, each with a Gauss–Legendre rule.
#[derive(Debug, Clone)]
pub struct EvenGaussIntegrator {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl EvenGaussIntegrator {
    pub fn new(epsilon: f64, panel_order: usize) -> Result<Self> {
        let leg: QuadratureRule = gauss_legendre(panel_order)?;
        let width = ((1.0 + epsilon).sqrt() - 1.0).sqrt();
        let mut breaks = vec![0.0];
        let mut b = width / 64.0;
        while b < 1.0 {
            breaks.push(b);
            b *= 2.0;
        }
        let mut b = 1.0;
        while b <= 13.0 {
            breaks.push(b);
            b += 0.5;
        }
        let norm = (2.0 / std::f64::consts::PI).sqrt();
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for w in breaks.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let half = 0.5 * (hi - lo);
            let mid = 0.5 * (hi + lo);
            for (x, wt) in leg.iter() {
                let g = mid + half * x;
                nodes.push(g);
                weights.push(wt * half * norm * (-0.5 * g * g).exp());
            }
        }
        Ok(EvenGaussIntegrator { nodes, weights })
    }

    /// `E[h(G²)]`.
    pub fn expect(&self, h: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(g, w)| w * h(g * g)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralTheory {
    pub epsilon: f64,
    pub delta: f64,
    pub lambda_bar: f64,
    pub lambda_star: f64,
    pub a: f64,
    /// Gauss–Legendre order per panel.
    pub order: usize,
    /// `δ ≤ 1 + ε`: no positive overlap.
    pub sub_threshold: bool,
}

/// Asymptotic overlap `a` of the spectral estimate with the signal.
///
/// `rule.order()` sets the Gauss–Legendre order of each panel.
pub fn spectral_overlap_theory(delta: f64, epsilon: f64, rule: &QuadratureRule) -> Result<SpectralTheory> {
    if !(delta > 0.0 && epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("delta = {delta} and epsilon = {epsilon} must be positive")));
    }
    let order = rule.order().clamp(8, 64);
    let mut out =
        SpectralTheory { epsilon, delta, lambda_bar: f64::NAN, lambda_star: f64::NAN, a: 0.0, order, sub_threshold: true };
    if delta <= 1.0 + epsilon {
        return Ok(out);
    }
    let ig = EvenGaussIntegrator::new(epsilon, order)?;
    let t = |y: f64| preprocess_t(y, epsilon);
    let phi = |l: f64| l * ig.expect(|y| t(y) * y / (l - t(y)));
    let psi = |l: f64| l / delta + l * ig.expect(|y| t(y) / (l - t(y)));
    let lo = 1.0 + 1e-9;
    // ψ is convex on (1, ∞); widen the window while the minimizer sits on its edge
    let mut hi = LAMBDA_MAX;
    let lambda_bar = loop {
        let cand = argmin_scalar(psi, lo, hi, 1e-10 * hi)?;
        if cand < hi * (1.0 - 1e-6) || hi >= LAMBDA_CEILING {
            break cand;
        }
        hi *= 2.0;
    };
    let zeta = |l: f64| psi(l.max(lambda_bar));
    let gap = |l: f64| zeta(l) - phi(l);
    let mut hi = LAMBDA_MAX.max(2.0 * lambda_bar);
    while gap(hi) < 0.0 && hi < LAMBDA_CEILING {
        hi *= 2.0;
    }
    let lambda_star = match root_bisect(gap, lo, hi, 1e-12 * hi) {
        Ok(l) => l,
        Err(Error::Bracket { .. }) => {
            return Err(Error::TheoryDomain(format!("no solution of zeta = phi in (1, {hi}] at delta = {delta}")))
        }
        Err(e) => return Err(e),
    };
    let num = 1.0 / delta - ig.expect(|y| (t(y) / (lambda_star - t(y))).powi(2));
    let den = 1.0 / delta + ig.expect(|y| (t(y) / (lambda_star - t(y))).powi(2) * (y - 1.0));
    let a2 = (num / den).clamp(0.0, 1.0);
    out.lambda_bar = lambda_bar;
    out.lambda_star = lambda_star;
    out.a = a2.sqrt();
    out.sub_threshold = false;
    Ok(out)
}

/// Normalized correlation `|⟨x, θ⟩|/(‖x‖‖θ‖)`, zero for a zero vector.
pub fn correlation(x: &[f64], theta: &[f64]) -> f64 {
    let nx = par::dot(x, x).sqrt();
    let nt = par::dot(theta, theta).sqrt();
    if nx == 0.0 || nt == 0.0 {
        return 0.0;
    }
    (par::dot(x, theta).abs() / (nx * nt)).min(1.0)
}

/// `θ⁰ = √d·v₁(D_n)` with `D_n = Σ T(δ·y_i) x_i x_iᵀ`, sign-fixed so that
/// `⟨θ⁰, θ⟩ ≥ 0`. Returns the estimate and its normalized correlation.
///
/// Responses are rescaled by `δ` because rows of `X` have squared norm
/// `d/n`, so `δ·y_i` has the law of `G²` for which `T` is designed.
pub fn spectral_init(sample: &GlmSample, epsilon: f64) -> Result<(Vec<f64>, f64)> {
    let d = sample.d;
    let weights: Vec<f64> = sample.y.iter().map(|y| preprocess_t(sample.delta * y, epsilon)).collect();
    let mut scaled = sample.x.clone();
    for (i, w) in weights.iter().enumerate() {
        scaled.row_mut(i).scale_mut(*w);
    }
    let dn: DMatrix<f64> = sample.x.tr_mul(&scaled);
    let dn = (&dn + dn.transpose()) * 0.5;
    let eig = dn.clone().symmetric_eigen();
    let (k, lam) = eig
        .eigenvalues
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    let v1: DVector<f64> = eig.eigenvectors.column(k).into_owned();
    let residual = (&dn * &v1 - &v1 * lam).norm();
    let scale = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-300);
    if residual > EIGEN_RESIDUAL_TOL * scale {
        return Err(Error::Convergence { iterations: 0, residual: residual / scale });
    }
    let root_d = (d as f64).sqrt();
    let mut theta0: Vec<f64> = v1.iter().map(|v| v * root_d / v1.norm()).collect();
    if par::dot(&theta0, &sample.theta) < 0.0 {
        theta0.iter_mut().for_each(|v| *v = -*v);
    }
    let overlap = correlation(&theta0, &sample.theta);
    Ok((theta0, overlap))
}

fn mul(exec: Exec, x: &DMatrix<f64>, xt: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    debug_assert_eq!(xt.ncols(), x.nrows());
    par::col_dots(exec, xt, v)
}

fn mul_t(exec: Exec, x: &DMatrix<f64>, w: &[f64]) -> Vec<f64> {
    par::col_dots(exec, x, w)
}

/// Step sizes and inner-solver budget for the baseline algorithms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgoParams {
    pub eta: f64,
    pub xi: f64,
    /// Prox-linear smoothness; `None` means `2‖X‖²_op`.
    pub l: Option<f64>,
    pub alpha_taf: f64,
    pub gamma_taf: f64,
    pub inner_iterations: usize,
    /// ADMM penalty; `None` means `L`.
    pub rho: Option<f64>,
    pub inner_tol: f64,
}

impl Default for AlgoParams {
    fn default() -> Self {
        AlgoParams {
            eta: 0.1,
            xi: 0.1,
            l: None,
            alpha_taf: 0.6,
            gamma_taf: 0.7,
            inner_iterations: 300,
            rho: None,
            inner_tol: 1e-6,
        }
    }
}

/// `θ + (4ηδ²/n)·Xᵀ[(y − |Xθ|²) ⊙ Xθ]`.
pub fn grad_descent_step(x: &DMatrix<f64>, xt: &DMatrix<f64>, y: &[f64], theta: &[f64], eta: f64, delta: f64) -> Vec<f64> {
    grad_descent_step_with(Exec::Parallel, x, xt, y, theta, eta, delta)
}

pub fn grad_descent_step_with(
    exec: Exec,
    x: &DMatrix<f64>,
    xt: &DMatrix<f64>,
    y: &[f64],
    theta: &[f64],
    eta: f64,
    delta: f64,
) -> Vec<f64> {
    let n = x.nrows() as f64;
    let z = mul(exec, x, xt, theta);
    let r: Vec<f64> = z.iter().zip(y).map(|(zi, yi)| (yi - zi * zi) * zi).collect();
    let g = mul_t(exec, x, &r);
    let c = 4.0 * eta * delta * delta / n;
    theta.iter().zip(&g).map(|(t, gi)| t + c * gi).collect()
}

#[inline]
fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `θ + 2ξ·Xᵀ(s ⊙ Xθ)` with `s_i = sign(y_i − ⟨x_i, θ⟩²)`.
pub fn one_step_prox_linear(x: &DMatrix<f64>, xt: &DMatrix<f64>, y: &[f64], theta: &[f64], xi: f64) -> Vec<f64> {
    one_step_prox_linear_with(Exec::Parallel, x, xt, y, theta, xi)
}

pub fn one_step_prox_linear_with(
    exec: Exec,
    x: &DMatrix<f64>,
    xt: &DMatrix<f64>,
    y: &[f64],
    theta: &[f64],
    xi: f64,
) -> Vec<f64> {
    let z = mul(exec, x, xt, theta);
    let r: Vec<f64> = z.iter().zip(y).map(|(zi, yi)| sign0(yi - zi * zi) * zi).collect();
    let g = mul_t(exec, x, &r);
    theta.iter().zip(&g).map(|(t, gi)| t + 2.0 * xi * gi).collect()
}

/// `θ − α Σ_{i∈I}(⟨x_i,θ⟩ − √y_i·sign⟨x_i,θ⟩)·x_i` over
/// `I = {i : |⟨x_i,θ⟩| ≥ √y_i/(1+γ)}`.
pub fn taf_step(x: &DMatrix<f64>, xt: &DMatrix<f64>, y: &[f64], theta: &[f64], alpha: f64, gamma: f64) -> Vec<f64> {
    taf_step_with(Exec::Parallel, x, xt, y, theta, alpha, gamma)
}

pub fn taf_step_with(
    exec: Exec,
    x: &DMatrix<f64>,
    xt: &DMatrix<f64>,
    y: &[f64],
    theta: &[f64],
    alpha: f64,
    gamma: f64,
) -> Vec<f64> {
    let z = mul(exec, x, xt, theta);
    let r: Vec<f64> = z
        .iter()
        .zip(y)
        .map(|(zi, yi)| {
            let amp = yi.max(0.0).sqrt();
            if zi.abs() >= amp / (1.0 + gamma) && *zi != 0.0 {
                zi - amp * sign0(*zi)
            } else {
                0.0
            }
        })
        .collect();
    let g = mul_t(exec, x, &r);
    theta.iter().zip(&g).map(|(t, gi)| t - alpha * gi).collect()
}

/// `‖X‖_op` by power iteration on `XᵀX`.
pub fn operator_norm(x: &DMatrix<f64>, tol: f64) -> Result<f64> {
    let d = x.ncols();
    if d == 0 || x.nrows() == 0 || x.iter().all(|v| *v == 0.0) {
        return Err(Error::InvalidArgument("operator norm of a zero or empty matrix".into()));
    }
    let mut v = DVector::from_fn(d, |j, _| 1.0 + (j as f64 * 0.618_033_988_749_895).fract());
    v /= v.norm();
    let mut est = 0.0;
    for it in 0..OPERATOR_NORM_MAX_ITER {
        let w = x.tr_mul(&(x * &v));
        let nw = w.norm();
        if nw == 0.0 {
            return Ok(0.0);
        }
        let next = nw.sqrt();
        v = w / nw;
        if it > 0 && (next - est).abs() <= tol * next {
            return Ok(next);
        }
        est = next;
    }
    Err(Error::Convergence { iterations: OPERATOR_NORM_MAX_ITER, residual: est })
}

/// Inner-solver diagnostics of one prox-linear step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxInfo {
    pub iterations: usize,
    pub objective: f64,
    pub objective_at_start: f64,
    /// Budget exhausted before the stopping rule fired.
    pub stagnated: bool,
}

/// One prox-linear step: approximately minimizes
/// `(L/2)‖ϑ−θ‖² + Σ_i |⟨x_i,θ⟩² + 2⟨x_i,θ⟩⟨x_i,ϑ−θ⟩ − y_i|` by ADMM on
/// `r = A(ϑ−θ) + c`, `A = 2·diag(Xθ)·X`, `c = (Xθ)² − y`.
///
/// The returned iterate never has a larger subproblem objective than `θ`.
pub fn prox_linear_step(
    x: &DMatrix<f64>,
    xt: &DMatrix<f64>,
    y: &[f64],
    theta: &[f64],
    l: f64,
    params: &AlgoParams,
) -> Result<(Vec<f64>, ProxInfo)> {
    prox_linear_step_with(Exec::Parallel, x, xt, y, theta, l, params)
}

pub fn prox_linear_step_with(
    exec: Exec,
    x: &DMatrix<f64>,
    xt: &DMatrix<f64>,
    y: &[f64],
    theta: &[f64],
    l: f64,
    params: &AlgoParams,
) -> Result<(Vec<f64>, ProxInfo)> {
    if !(l > 0.0) {
        return Err(Error::InvalidArgument(format!("L = {l} must be positive")));
    }
    let (n, d) = (x.nrows(), x.ncols());
    let rho = params.rho.unwrap_or(l);
    let z = mul(exec, x, xt, theta);
    let c: Vec<f64> = z.iter().zip(y).map(|(zi, yi)| zi * zi - yi).collect();
    let a_mul = |v: &[f64]| -> Vec<f64> { mul(exec, x, xt, v).iter().zip(&z).map(|(p, zi)| 2.0 * zi * p).collect() };
    let at_mul = |w: &[f64]| -> Vec<f64> {
        let s: Vec<f64> = w.iter().zip(&z).map(|(wi, zi)| 2.0 * zi * wi).collect();
        mul_t(exec, x, &s)
    };
    let objective = |step: &[f64], a_step: &[f64]| -> f64 {
        0.5 * l * par::dot(step, step) + a_step.iter().zip(&c).map(|(p, ci)| (p + ci).abs()).sum::<f64>()
    };
    let obj0 = c.iter().map(|v| v.abs()).sum::<f64>();
    let mut best = (vec![0.0; d], obj0);
    let mut step = vec![0.0; d];
    let mut r: Vec<f64> = c.clone();
    let mut w = vec![0.0; n];
    let mut stagnated = true;
    let mut iterations = 0;
    let mut last_best = obj0;
    for it in 0..params.inner_iterations {
        iterations = it + 1;
        // (L I + ρAᵀA) step = ρAᵀ(r − c − w), conjugate gradient from the last step
        let rhs_vec: Vec<f64> = (0..n).map(|i| r[i] - c[i] - w[i]).collect();
        let rhs: Vec<f64> = at_mul(&rhs_vec).iter().map(|v| rho * v).collect();
        let op = |v: &[f64]| -> Vec<f64> {
            let av = a_mul(v);
            let atav = at_mul(&av);
            v.iter().zip(&atav).map(|(vi, ai)| l * vi + rho * ai).collect()
        };
        conjugate_gradient(op, &rhs, &mut step, 1e-10, 100);
        let a_step = a_mul(&step);
        for i in 0..n {
            let t = a_step[i] + c[i] + w[i];
            r[i] = t.signum() * (t.abs() - 1.0 / rho).max(0.0);
        }
        let mut primal = 0.0;
        for i in 0..n {
            let res = a_step[i] + c[i] - r[i];
            w[i] += res;
            primal += res * res;
        }
        let obj = objective(&step, &a_step);
        if obj < best.1 {
            best = (step.clone(), obj);
        }
        if (it + 1) % 10 == 0 {
            let rel = (last_best - best.1) / best.1.abs().max(1e-300);
            let scale = par::dot(&c, &c).sqrt().max(1e-300);
            if rel < params.inner_tol && primal.sqrt() <= 1e-3 * scale {
                stagnated = false;
                break;
            }
            last_best = best.1;
        }
    }
    if obj0 == 0.0 {
        stagnated = false;
    }
    let out: Vec<f64> = theta.iter().zip(&best.0).map(|(t, s)| t + s).collect();
    Ok((out, ProxInfo { iterations, objective: best.1, objective_at_start: obj0, stagnated }))
}

fn conjugate_gradient(op: impl Fn(&[f64]) -> Vec<f64>, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) {
    let ax = op(x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut p = r.clone();
    let mut rs = par::dot(&r, &r);
    let b_norm = par::dot(b, b).sqrt().max(1e-300);
    for _ in 0..max_iter {
        if rs.sqrt() <= tol * b_norm {
            break;
        }
        let ap = op(&p);
        let alpha = rs / par::dot(&p, &ap);
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rs_new = par::dot(&r, &r);
        let beta = rs_new / rs;
        for i in 0..p.len() {
            p[i] = r[i] + beta * p[i];
        }
        rs = rs_new;
    }
}
