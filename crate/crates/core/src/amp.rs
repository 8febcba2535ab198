//! Finite-n samplers and AMP iterations for the spiked symmetric model and
//! for generalized linear models, plus the empirical-versus-SE checker.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::denoiser::{DenoiserSpec, SeView};
use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::prior::{Channel, JointPrior};
use crate::rng;
use crate::state_evolution::{amp_se, glm_beta_recursion, LowerBoundSeq, SEState};

/// Iterates with norm above `DIVERGENCE_FACTOR·√n` abort the run.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    Gaussian,
    Rademacher,
}

#[derive(Debug, Clone)]
pub struct SpikedSample {
    pub n: usize,
    pub x: DMatrix<f64>,
    pub theta: Vec<f64>,
    pub u: Vec<f64>,
    pub noise_kind: NoiseKind,
    pub seed: u64,
}

/// `X = θθᵀ/n + W` with symmetric `W`.
pub fn sample_spiked(prior: &JointPrior, n: usize, noise_kind: NoiseKind, seed: u64) -> Result<SpikedSample> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("n = {n} must be at least 2")));
    }
    prior.validate()?;
    let mut rng = rng::from_seed(seed);
    let (theta, u): (Vec<f64>, Vec<f64>) = (0..n).map(|_| prior.sample(&mut rng)).unzip();
    let scale = 1.0 / (n as f64).sqrt();
    let mut x = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            let w = match noise_kind {
                NoiseKind::Gaussian => {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    if i == j {
                        z * std::f64::consts::SQRT_2 * scale
                    } else {
                        z * scale
                    }
                }
                NoiseKind::Rademacher => {
                    let bit: bool = rng.random();
                    if i == j {
                        0.0
                    } else if bit {
                        scale
                    } else {
                        -scale
                    }
                }
            };
            let v = w + theta[i] * theta[j] / n as f64;
            x[(i, j)] = v;
            x[(j, i)] = v;
        }
    }
    Ok(SpikedSample { n, x, theta, u, noise_kind, seed })
}

#[derive(Debug, Clone)]
pub struct GlmSample {
    pub n: usize,
    pub d: usize,
    pub delta: f64,
    /// `n × d` design.
    pub x: DMatrix<f64>,
    /// Its transpose, kept for contiguous row access.
    pub xt: DMatrix<f64>,
    pub theta: Vec<f64>,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    pub channel: Channel,
    pub seed: u64,
}

impl GlmSample {
    /// `X·g`.
    pub fn mul(&self, exec: Exec, g: &[f64]) -> Vec<f64> {
        par::col_dots(exec, &self.xt, g)
    }

    /// `Xᵀ·f`.
    pub fn mul_t(&self, exec: Exec, f: &[f64]) -> Vec<f64> {
        par::col_dots(exec, &self.x, f)
    }
}

pub fn sample_glm(
    prior_tv: &JointPrior,
    side_wu: &JointPrior,
    channel: &Channel,
    n: usize,
    d: usize,
    seed: u64,
) -> Result<GlmSample> {
    let mut rng = rng::from_seed(seed);
    sample_glm_with(prior_tv, side_wu, channel, n, d, seed, &mut rng)
}

pub(crate) fn sample_glm_with<R: Rng + ?Sized>(
    prior_tv: &JointPrior,
    side_wu: &JointPrior,
    channel: &Channel,
    n: usize,
    d: usize,
    seed: u64,
    rng: &mut R,
) -> Result<GlmSample> {
    if n < 2 || d < 2 {
        return Err(Error::InvalidArgument(format!("n = {n}, d = {d} must both be at least 2")));
    }
    prior_tv.validate()?;
    side_wu.validate()?;
    let (theta, v): (Vec<f64>, Vec<f64>) = (0..d).map(|_| prior_tv.sample(rng)).unzip();
    let (w, u): (Vec<f64>, Vec<f64>) = (0..n).map(|_| side_wu.sample(rng)).unzip();
    let scale = 1.0 / (n as f64).sqrt();
    let x = DMatrix::from_fn(n, d, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z * scale
    });
    let xt = x.transpose();
    let lin = par::col_dots(Exec::Sequential, &xt, &theta);
    let y = lin.iter().zip(&w).map(|(z, wi)| channel.apply(*z, *wi)).collect();
    Ok(GlmSample { n, d, delta: n as f64 / d as f64, x, xt, theta, v, w, u, y, channel: *channel, seed })
}

/// Iterate history of one AMP run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AmpRun {
    /// `a[k] = a^{k+1}`.
    pub a: Vec<Vec<f64>>,
    /// GLM only: `b[k] = b^{k+1}`.
    pub b: Vec<Vec<f64>>,
    /// Estimates, indexed as documented by each runner.
    pub theta_hat: Vec<Vec<f64>>,
    /// `⟨a^{k+1}, θ⟩/n` (symmetric) or `⟨b^{k+1}, θ⟩/d` (GLM).
    pub overlaps: Vec<f64>,
    /// The recursion reached numerically exact recovery and stopped early.
    pub converged: bool,
}

fn inner(a: &[f64], b: &[f64]) -> f64 {
    par::dot(a, b)
}

fn guard(vec: &[f64], iteration: usize, dim: usize) -> Result<()> {
    let norm = inner(vec, vec).sqrt();
    if !norm.is_finite() || norm > DIVERGENCE_FACTOR * (dim as f64).sqrt() {
        return Err(Error::Divergence { iteration, norm });
    }
    Ok(())
}

fn eval_rows(
    exec: Exec,
    spec: &DenoiserSpec,
    t: usize,
    iterates: &[Vec<f64>],
    side: &[&[f64]],
    view: &SeView,
) -> Vec<f64> {
    let len = side.first().map(|s| s.len()).unwrap_or_else(|| iterates[0].len());
    par::map_indexed(exec, len, |i| {
        let xs: Vec<f64> = iterates[..t].iter().map(|a| a[i]).collect();
        let sd: Vec<f64> = side.iter().map(|s| s[i]).collect();
        spec.eval(t, &xs, &sd, view)
    })
}

/// `a^{t+1} = X f_t(a^{≤t}; u) − Σ_s b_{t,s} f_{s−1}(a^{≤s−1}; u)`.
///
/// `theta_hat[k] = f_{k+1}(a^{≤k+1}; u)` whenever the spec defines row `k+1`
/// and `se` carries the matching scalars.
pub fn run_amp_symmetric(sample: &SpikedSample, denoisers: &DenoiserSpec, se: &SEState, t: usize) -> Result<AmpRun> {
    run_amp_symmetric_with(Exec::Parallel, sample, denoisers, se, &se.onsager, t)
}

pub fn run_amp_symmetric_with(
    exec: Exec,
    sample: &SpikedSample,
    denoisers: &DenoiserSpec,
    se: &SEState,
    onsager: &DMatrix<f64>,
    t: usize,
) -> Result<AmpRun> {
    if se.iterations() < t || onsager.nrows() < t {
        return Err(Error::InvalidArgument(format!("state evolution covers {} iterations, need {t}", se.iterations())));
    }
    if let Some(len) = denoisers.len() {
        if len < t {
            return Err(Error::InvalidArgument(format!("{len} denoiser rows for {t} iterations")));
        }
    }
    let n = sample.n;
    let diag = se.diag();
    let view = SeView { mu: &se.mu, diag: &diag };
    let side: [&[f64]; 1] = [&sample.u];
    let mut run = AmpRun::default();
    let mut fs: Vec<Vec<f64>> = Vec::with_capacity(t);
    for k in 0..t {
        let fk = eval_rows(exec, denoisers, k, &run.a, &side, &view);
        let mut next = par::col_dots(exec, &sample.x, &fk);
        for s in 1..=k {
            let coef = onsager[(k, s - 1)];
            if coef != 0.0 {
                for (ai, fi) in next.iter_mut().zip(&fs[s - 1]) {
                    *ai -= coef * fi;
                }
            }
        }
        fs.push(fk);
        guard(&next, k + 1, n)?;
        run.overlaps.push(inner(&next, &sample.theta) / n as f64);
        run.a.push(next);
        let defined = denoisers.len().is_none_or(|len| len > k + 1) && se.iterations() > k;
        if defined {
            run.theta_hat.push(eval_rows(exec, denoisers, k + 1, &run.a, &side, &view));
        }
    }
    Ok(run)
}

/// Bayes AMP for the symmetric model: `f_t = E[Θ | a^t, U]` at the SNR of
/// the state evolution. `theta_hat[k]` is the estimate after `a^{k+1}`, with
/// mean squared error tracking `mmse(γ_{k+1})`.
pub fn run_bayes_amp_symmetric(sample: &SpikedSample, prior: &JointPrior, t: usize) -> Result<AmpRun> {
    let rule = crate::quadrature::gauss_hermite(crate::quadrature::DEFAULT_ORDER)?;
    let spec = DenoiserSpec::BayesPosteriorMean { prior: prior.clone() };
    let se = amp_se(prior, &spec, t + 1, &rule)?;
    run_amp_symmetric(sample, &spec, &se, t)
}

/// `b^{t+1} = Xᵀ f_t(a^{≤t}; y, u) − Σ_s ξ_{t,s} g_s(b^{≤s}; v)` and
/// `a^t = X g_t(b^{≤t}; v) − Σ_s η_{t,s} f_{s−1}(a^{≤s−1}; y, u)`.
///
/// Produces `b^1..b^t` and `a^1..a^{t−1}`; `theta_hat[k] = g_{k+1}(b^{≤k+1}; v)`.
pub fn run_glm_amp(sample: &GlmSample, f: &DenoiserSpec, g: &DenoiserSpec, se: &SEState, t: usize) -> Result<AmpRun> {
    run_glm_amp_with(Exec::Parallel, sample, f, g, se, t)
}

pub fn run_glm_amp_with(
    exec: Exec,
    sample: &GlmSample,
    f: &DenoiserSpec,
    g: &DenoiserSpec,
    se: &SEState,
    t: usize,
) -> Result<AmpRun> {
    let (xi, eta) = match (&se.xi, &se.eta) {
        (Some(xi), Some(eta)) => (xi, eta),
        _ => return Err(Error::InvalidArgument("state evolution lacks GLM Onsager terms".into())),
    };
    if t == 0 || se.iterations() < t {
        return Err(Error::InvalidArgument(format!("state evolution covers {} iterations, need {t}", se.iterations())));
    }
    let diag = se.diag();
    let view = SeView { mu: &se.mu, diag: &diag };
    let empty = SeView::EMPTY;
    let f_side: [&[f64]; 2] = [&sample.y, &sample.u];
    let g_side: [&[f64]; 1] = [&sample.v];
    let mut run = AmpRun::default();
    let mut fs: Vec<Vec<f64>> = Vec::new();
    let mut gs: Vec<Vec<f64>> = Vec::new();
    for k in 0..t {
        // response side
        if k > 0 {
            let gk = eval_rows(exec, g, k, &run.b, &g_side, &view);
            let mut a = sample.mul(exec, &gk);
            for s in 1..=k {
                let coef = eta[(k - 1, s - 1)];
                if coef != 0.0 {
                    for (ai, fi) in a.iter_mut().zip(&fs[s - 1]) {
                        *ai -= coef * fi;
                    }
                }
            }
            guard(&a, k, sample.n)?;
            gs.push(gk);
            run.a.push(a);
        }
        let fk = eval_rows(exec, f, k, &run.a, &f_side, &empty);
        let mut b = sample.mul_t(exec, &fk);
        for s in 1..=k {
            let coef = xi[(k, s - 1)];
            if coef != 0.0 {
                for (bi, gi) in b.iter_mut().zip(&gs[s - 1]) {
                    *bi -= coef * gi;
                }
            }
        }
        fs.push(fk);
        guard(&b, k + 1, sample.d)?;
        run.overlaps.push(inner(&b, &sample.theta) / sample.d as f64);
        run.b.push(b);
        run.theta_hat.push(eval_rows(exec, g, k + 1, &run.b, &g_side, &view));
    }
    Ok(run)
}

/// Scalar state of Bayes AMP for phase retrieval at one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
struct PrStep {
    beta: f64,
    sigma: f64,
    sigma_tilde: f64,
}

/// Cap on the overlap of the spectral side information.
const A_HAT_MAX: f64 = 1.0 - 1e-12;

/// Posterior mean of a standard Gaussian `Θ` given `b = β²Θ + βG` and
/// `v = aΘ + √(1−a²)G'`.
fn pr_signal_denoiser(b: f64, v: f64, beta: f64, a: f64) -> f64 {
    let r = a * a / (1.0 - a * a);
    (b + a * v / (1.0 - a * a)) / (1.0 + beta * beta + r)
}

/// Bayes AMP for noiseless phase retrieval with Gaussian signal and the
/// spectral estimate `θ⁰` as side information of overlap `a_hat`.
///
/// `theta_hat[k]` is the posterior-mean estimate after `k` products with
/// `X`; `theta_hat[0] = a_hat·θ⁰`. Its correlation tracks
/// `optimal_correlation[k+1]` of the GLM lower-bound recursion.
pub fn run_bayes_amp_pr(sample: &GlmSample, theta0: &[f64], a_hat: f64, t: usize) -> Result<AmpRun> {
    run_bayes_amp_pr_with(Exec::Parallel, sample, theta0, a_hat, t)
}

pub fn run_bayes_amp_pr_with(exec: Exec, sample: &GlmSample, theta0: &[f64], a_hat: f64, t: usize) -> Result<AmpRun> {
    if sample.channel != Channel::SquaredNoiseless {
        return Err(Error::InvalidArgument("Bayes AMP for phase retrieval needs the squared channel".into()));
    }
    if theta0.len() != sample.d {
        return Err(Error::InvalidArgument("initialization length differs from d".into()));
    }
    if !(0.0..=1.0).contains(&a_hat) {
        return Err(Error::InvalidArgument(format!("a_hat = {a_hat} outside [0, 1]")));
    }
    let a = a_hat.min(A_HAT_MAX);
    let rule = crate::quadrature::gauss_hermite(crate::quadrature::DEFAULT_ORDER)?;
    let (seq, mut converged) = match glm_beta_recursion(
        &JointPrior::GaussianWithOverlap { a },
        &Channel::SquaredNoiseless,
        &JointPrior::point_mass(),
        sample.delta,
        t + 1,
        &rule,
    ) {
        Ok(seq) => (seq, false),
        Err(Error::RecursionDegenerate { partial, .. }) => (*partial, true),
        Err(e) => return Err(e),
    };
    pr_iterate(exec, sample, theta0, a, &seq, t, &mut converged).map(|mut run| {
        run.converged = converged;
        run
    })
}

fn pr_iterate(
    exec: Exec,
    sample: &GlmSample,
    v: &[f64],
    a: f64,
    seq: &LowerBoundSeq,
    t: usize,
    converged: &mut bool,
) -> Result<AmpRun> {
    let step = |s: usize| -> Option<PrStep> {
        (s < seq.beta.len()).then(|| PrStep { beta: seq.beta[s], sigma: seq.sigma[s], sigma_tilde: seq.sigma_tilde[s] })
    };
    let delta = sample.delta;
    let mut run = AmpRun::default();
    // g_1 with β_1 = 0 (the first response step carries no information)
    let beta1 = step(1).map(|s| s.beta).unwrap_or(0.0);
    let b1 = vec![0.0; sample.d];
    let mut g_prev: Vec<f64> = v.iter().zip(&b1).map(|(vi, bi)| pr_signal_denoiser(*bi, *vi, beta1, a)).collect();
    let mut f_prev = vec![0.0; sample.n];
    run.theta_hat.push(g_prev.clone());
    run.b.push(b1);
    run.overlaps.push(0.0);
    for k in 1..=t {
        let Some(next) = step(k + 1) else {
            *converged = true;
            run.theta_hat.push(run.theta_hat[run.theta_hat.len() - 1].clone());
            continue;
        };
        // a^k = X g_k − η_k f_{k−1}
        let eta = seq.mmse_curve[k] / delta;
        let mut a_vec = sample.mul(exec, &g_prev);
        for (ai, fi) in a_vec.iter_mut().zip(&f_prev) {
            *ai -= eta * fi;
        }
        guard(&a_vec, k, sample.n)?;
        // f_k(a; y) = E[Z₀ | y, Z₁ = a/σ̃] / σ at (σ_{k+1}, σ̃_{k+1})
        let (sig, sig_t) = (next.sigma, next.sigma_tilde);
        let fk: Vec<f64> = par::map_indexed(exec, sample.n, |i| {
            let z1 = if sig_t > 0.0 { a_vec[i] / sig_t } else { 0.0 };
            sample.channel.posterior_z0(sig, sig_t, sample.y[i].max(0.0), 0.0, z1).unwrap_or(0.0) / sig
        });
        // ξ_k = −β_{k+1}² (Stein's identity on the jointly Gaussian pair)
        let xi = -next.beta * next.beta;
        let mut b = sample.mul_t(exec, &fk);
        for (bi, gi) in b.iter_mut().zip(&g_prev) {
            *bi -= xi * gi;
        }
        guard(&b, k + 1, sample.d)?;
        let g_next: Vec<f64> = b.iter().zip(v).map(|(bi, vi)| pr_signal_denoiser(*bi, *vi, next.beta, a)).collect();
        run.overlaps.push(inner(&b, &sample.theta) / sample.d as f64);
        run.a.push(a_vec);
        run.b.push(b);
        run.theta_hat.push(g_next.clone());
        g_prev = g_next;
        f_prev = fk;
    }
    Ok(run)
}

/// One comparison between an empirical average and its SE prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub name: String,
    pub s: usize,
    pub t: usize,
    pub empirical: f64,
    pub predicted: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeReport {
    pub rows: Vec<Deviation>,
    pub max_abs_deviation: f64,
    pub all_pass: bool,
}

/// Compares `(1/n)Σψ(a_i^{≤t}, θ_i, u_i)` with `E[ψ(μΘ + G, Θ, U)]` for the
/// constant, the overlap, pairwise inner products and, where the run has
/// estimates, their squared error.
pub fn empirical_vs_se(run: &AmpRun, sample: &SpikedSample, se: &SEState, prior: &JointPrior, tol: f64) -> SeReport {
    let n = sample.n as f64;
    let second = prior.second_moment();
    let mut rows = Vec::new();
    let mut push = |name: &str, s: usize, t: usize, empirical: f64, predicted: f64| {
        rows.push(Deviation {
            name: name.into(),
            s,
            t,
            empirical,
            predicted,
            pass: (empirical - predicted).abs() <= tol,
        });
    };
    push("constant", 0, 0, 1.0, 1.0);
    let big_t = run.a.len().min(se.iterations());
    for t in 1..=big_t {
        let at = &run.a[t - 1];
        push("overlap", 0, t, inner(at, &sample.theta) / n, se.mu_at(t) * second);
        for s in 1..=t {
            let as_ = &run.a[s - 1];
            let pred = se.mu_at(s) * se.mu_at(t) * second + se.sigma_at(s, t);
            push("inner", s, t, inner(as_, at) / n, pred);
        }
        if let Some(est) = run.theta_hat.get(t - 1) {
            if se.iterations() > t {
                let err: f64 = est.iter().zip(&sample.theta).map(|(e, th)| (e - th).powi(2)).sum::<f64>() / n;
                let pred = second - 2.0 * se.mu_at(t + 1) + se.sigma_at(t + 1, t + 1);
                push("squared_error", 0, t, err, pred);
            }
        }
    }
    let max_abs_deviation = rows.iter().map(|r| (r.empirical - r.predicted).abs()).fold(0.0, f64::max);
    let all_pass = rows.iter().all(|r| r.pass);
    SeReport { rows, max_abs_deviation, all_pass }
}

/// Result of simulating a GFOM through its AMP rewriting.
#[derive(Debug, Clone, PartialEq)]
pub struct GfomCheck {
    /// `gfom[k] = u^{k+1}` from the direct recursion.
    pub gfom: Vec<Vec<f64>>,
    /// `recovered[k]`: the same iterate rebuilt from the AMP iterates.
    pub recovered: Vec<Vec<f64>>,
    pub max_abs_diff: f64,
}

/// Runs `u^{t+1} = X F_t(u^{≤t}; u) + G_t(u^{≤t}; u)` directly and through the
/// change of variables `f_t = F_t ∘ φ_t`, with an arbitrary Onsager matrix.
pub fn gfom_via_amp<F, G>(
    x: &DMatrix<f64>,
    side: &[f64],
    big_f: F,
    big_g: G,
    onsager: &DMatrix<f64>,
    t: usize,
) -> Result<GfomCheck>
where
    F: Fn(usize, &[f64], f64) -> f64,
    G: Fn(usize, &[f64], f64) -> f64,
{
    let n = x.nrows();
    if x.ncols() != n || side.len() != n {
        return Err(Error::InvalidArgument("GFOM check needs a square X and matching side vector".into()));
    }
    if onsager.nrows() < t || onsager.ncols() < t {
        return Err(Error::InvalidArgument("Onsager matrix too small".into()));
    }
    let column = |hist: &[Vec<f64>], i: usize| -> Vec<f64> { hist.iter().map(|h| h[i]).collect() };
    let matvec = |v: &[f64]| -> Vec<f64> { (x * nalgebra::DVector::from_column_slice(v)).iter().copied().collect() };

    let mut us: Vec<Vec<f64>> = Vec::new();
    for k in 0..t {
        let fk: Vec<f64> = (0..n).map(|i| big_f(k, &column(&us, i), side[i])).collect();
        let gk: Vec<f64> = (0..n).map(|i| big_g(k, &column(&us, i), side[i])).collect();
        let next: Vec<f64> = matvec(&fk).iter().zip(&gk).map(|(a, b)| a + b).collect();
        us.push(next);
    }

    // φ_t(a^{≤t}) per coordinate, and f_t = F_t ∘ φ_t
    let mut phi: Vec<Vec<f64>> = Vec::new();
    let mut f_hist: Vec<Vec<f64>> = Vec::new();
    for k in 0..t {
        let fk: Vec<f64> = (0..n).map(|i| big_f(k, &column(&phi, i), side[i])).collect();
        let gk: Vec<f64> = (0..n).map(|i| big_g(k, &column(&phi, i), side[i])).collect();
        let mut a = matvec(&fk);
        let mut correction = vec![0.0; n];
        for s in 1..=k {
            let coef = onsager[(k, s - 1)];
            for i in 0..n {
                correction[i] += coef * f_hist[s - 1][i];
            }
        }
        for i in 0..n {
            a[i] -= correction[i];
        }
        let rebuilt: Vec<f64> = (0..n).map(|i| a[i] + gk[i] + correction[i]).collect();
        f_hist.push(fk);
        phi.push(rebuilt);
    }
    let max_abs_diff = us
        .iter()
        .zip(&phi)
        .flat_map(|(p, q)| p.iter().zip(q).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max);
    Ok(GfomCheck { gfom: us, recovered: phi, max_abs_diff })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::LinearRow;
    use approx::assert_abs_diff_eq;

    #[test]
    fn spiked_sample_is_reproducible_and_symmetric() {
        let p = JointPrior::RademacherNoSide;
        let a = sample_spiked(&p, 2, NoiseKind::Gaussian, 9).unwrap();
        let b = sample_spiked(&p, 2, NoiseKind::Gaussian, 9).unwrap();
        assert_eq!(a.x, b.x);
        let s = sample_spiked(&p, 30, NoiseKind::Rademacher, 1).unwrap();
        assert_eq!(s.x, s.x.transpose());
        for i in 0..30 {
            for j in 0..30 {
                let w = (s.x[(i, j)] - s.theta[i] * s.theta[j] / 30.0) * 30f64.sqrt();
                if i == j {
                    assert_abs_diff_eq!(w, 0.0, epsilon = 1e-12);
                } else {
                    assert_abs_diff_eq!(w.abs(), 1.0, epsilon = 1e-12);
                }
            }
        }
        assert!(sample_spiked(&p, 1, NoiseKind::Gaussian, 0).is_err());
    }

    #[test]
    fn glm_sample_channels() {
        let g = JointPrior::GaussianWithOverlap { a: 0.0 };
        let s = sample_glm(&g, &JointPrior::point_mass(), &Channel::SquaredNoiseless, 50, 20, 3).unwrap();
        assert!(s.y.iter().all(|y| *y >= 0.0));
        assert_eq!((s.x.nrows(), s.x.ncols()), (50, 20));
        let s = sample_glm(&g, &g, &Channel::LinearGaussian { tau: 0.0 }, 10, 4, 3).unwrap();
        let direct = &s.x * nalgebra::DVector::from_column_slice(&s.theta);
        for (a, b) in direct.iter().zip(&s.y) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_denoiser_run_is_zero() {
        let sample = sample_spiked(&JointPrior::RademacherNoSide, 20, NoiseKind::Gaussian, 4).unwrap();
        let spec = DenoiserSpec::Linear { rows: vec![LinearRow { constant: 0.0, side: vec![], x: vec![] }; 3] };
        let rule = crate::quadrature::gauss_hermite(16).unwrap();
        let se = amp_se(&JointPrior::RademacherNoSide, &spec, 3, &rule).unwrap();
        let run = run_amp_symmetric(&sample, &spec, &se, 3).unwrap();
        assert!(run.a.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn first_iterate_is_x_times_side() {
        let prior = JointPrior::RademacherWithOverlap { a: 1.0 };
        let sample = sample_spiked(&prior, 12, NoiseKind::Gaussian, 5).unwrap();
        let spec = DenoiserSpec::Linear { rows: vec![LinearRow { constant: 0.0, side: vec![1.0], x: vec![] }] };
        let rule = crate::quadrature::gauss_hermite(16).unwrap();
        let se = amp_se(&prior, &spec, 1, &rule).unwrap();
        let run = run_amp_symmetric(&sample, &spec, &se, 1).unwrap();
        let direct = &sample.x * nalgebra::DVector::from_column_slice(&sample.u);
        for (a, b) in run.a[0].iter().zip(direct.iter()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
        let rep = empirical_vs_se(&run, &sample, &se, &prior, 10.0);
        assert_eq!(rep.rows[0].empirical - rep.rows[0].predicted, 0.0);
    }

    #[test]
    fn glm_amp_matches_direct_arithmetic() {
        let tau = 0.3;
        let g0 = JointPrior::GaussianWithOverlap { a: 0.0 };
        let sample = sample_glm(&g0, &g0, &Channel::LinearGaussian { tau }, 8, 4, 11).unwrap();
        let f = DenoiserSpec::Linear {
            rows: vec![
                LinearRow { constant: 0.0, side: vec![1.0, 0.0], x: vec![] },
                LinearRow { constant: 0.0, side: vec![0.5, 0.0], x: vec![-0.7] },
            ],
        };
        let g = DenoiserSpec::Linear {
            rows: vec![
                LinearRow::default(),
                LinearRow { constant: 0.0, side: vec![], x: vec![1.3] },
                LinearRow { constant: 0.0, side: vec![], x: vec![0.2, 0.9] },
            ],
        };
        let rule = crate::quadrature::gauss_hermite(16).unwrap();
        let se = crate::state_evolution::glm_amp_se(&g0, &g0, &sample.channel, &f, &g, sample.delta, 2, &rule).unwrap();
        let run = run_glm_amp(&sample, &f, &g, &se, 2).unwrap();
        let xi = se.xi.clone().unwrap();
        let eta = se.eta.clone().unwrap();
        let x = &sample.x;
        let y = nalgebra::DVector::from_column_slice(&sample.y);
        let b1 = x.transpose() * &y;
        let g1 = &b1 * 1.3;
        let a1 = x * &g1 - &y * eta[(0, 0)];
        let f1 = &y * 0.5 - &a1 * 0.7;
        let b2 = x.transpose() * &f1 - &g1 * xi[(1, 0)];
        for (p, q) in run.b[0].iter().zip(b1.iter()) {
            assert_abs_diff_eq!(*p, *q, epsilon = 1e-12);
        }
        for (p, q) in run.a[0].iter().zip(a1.iter()) {
            assert_abs_diff_eq!(*p, *q, epsilon = 1e-12);
        }
        for (p, q) in run.b[1].iter().zip(b2.iter()) {
            assert_abs_diff_eq!(*p, *q, epsilon = 1e-12);
        }
        assert_eq!((run.a[0].len(), run.b[0].len()), (8, 4));
        assert_abs_diff_eq!(xi[(1, 0)], -0.7, epsilon = 1e-12);
        assert_abs_diff_eq!(eta[(0, 0)], 1.3 / sample.delta, epsilon = 1e-12);
    }

    #[test]
    fn gfom_change_of_variables_is_exact() {
        let sample = sample_spiked(&JointPrior::RademacherWithOverlap { a: 0.5 }, 8, NoiseKind::Gaussian, 2).unwrap();
        let big_f = |t: usize, us: &[f64], u: f64| match t {
            0 => u * u - 0.5,
            _ => us[t - 1].powi(3) - 0.4 * us[0] + u,
        };
        let big_g = |t: usize, us: &[f64], u: f64| match t {
            0 => 0.3 * u,
            _ => 0.1 * us[t - 1] * us[0] - u,
        };
        let onsager = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.8, 0.0, 0.0, -0.3, 1.7, 0.0]);
        let check = gfom_via_amp(&sample.x, &sample.u, big_f, big_g, &onsager, 3).unwrap();
        assert!(check.max_abs_diff < 1e-10, "{}", check.max_abs_diff);
    }
}
