//! Gram–Schmidt orthogonalization of AMP iterates in L², driven only by the
//! state-evolution Gram data, and the resulting overlap bound check.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::amp::{run_amp_symmetric_with, SpikedSample};
use crate::denoiser::DenoiserSpec;
use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::prior::JointPrior;
use crate::quadrature::QuadratureRule;
use crate::state_evolution::{amp_se, LowerBoundSeq, SEState};

/// Residual norm² at or below this marks a degenerate direction.
pub const DEGENERACY_TOL: f64 = 1e-10;
const CAUCHY_SCHWARZ_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthogonalizedSpec {
    /// Row `t` holds `c_{t,0..=t}`.
    pub c: Vec<Vec<f64>>,
    /// `x[t] = 1` when `f_t` adds a new direction.
    pub x: Vec<u8>,
    /// `alpha[t] = α_{t+1}`.
    pub alpha: Vec<f64>,
}

impl OrthogonalizedSpec {
    pub fn len(&self) -> usize {
        self.c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c.is_empty()
    }

    /// Dense lower-triangular `C`.
    pub fn c_matrix(&self) -> DMatrix<f64> {
        let t = self.c.len();
        DMatrix::from_fn(t, t, |i, j| if j <= i { self.c[i][j] } else { 0.0 })
    }
}

/// Orthogonalizes `Y_t = f_t(…)`, `t = 0..T`, using `E[Y_s Y_t] = Σ_{s+1,t+1}`
/// and `E[Θ Y_t] = μ_{t+1}`.
pub fn orthogonalize(se: &SEState, prior: &JointPrior) -> Result<OrthogonalizedSpec> {
    let big_t = se.iterations();
    let second = prior.second_moment();
    let gram = &se.sigma;
    for t in 0..big_t {
        let bound = (second * gram[(t, t)].max(0.0)).sqrt();
        if se.mu[t].abs() > bound * (1.0 + 1e-9) + CAUCHY_SCHWARZ_SLACK {
            return Err(Error::InconsistentSe { row: t, overlap: se.mu[t], bound });
        }
    }
    let inner = |p: &[f64], q: &[f64]| -> f64 {
        let mut acc = 0.0;
        for i in 0..p.len() {
            if p[i] == 0.0 {
                continue;
            }
            for j in 0..q.len() {
                acc += p[i] * gram[(i, j)] * q[j];
            }
        }
        acc
    };
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut out = OrthogonalizedSpec { c: Vec::new(), x: Vec::new(), alpha: Vec::new() };
    for t in 0..big_t {
        let mut r = vec![0.0; big_t];
        r[t] = 1.0;
        // modified Gram–Schmidt: project the running residual
        for q in &basis {
            let p = inner(&r, q);
            for (ri, qi) in r.iter_mut().zip(q) {
                *ri -= p * qi;
            }
        }
        let norm2 = inner(&r, &r);
        if norm2 <= DEGENERACY_TOL {
            out.x.push(0);
            out.alpha.push(0.0);
            out.c.push(r[..=t].to_vec());
            continue;
        }
        let scale = norm2.sqrt();
        let q: Vec<f64> = r.iter().map(|v| v / scale).collect();
        let overlap: f64 = q.iter().zip(&se.mu).map(|(a, b)| a * b).sum();
        out.x.push(1);
        out.alpha.push(overlap);
        out.c.push(q[..=t].to_vec());
        basis.push(q);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaBoundReport {
    /// `norms[k] = ‖α_{≤k+1}‖₂`.
    pub norms: Vec<f64>,
    /// `gamma[k] = γ_{k+1}`.
    pub gamma: Vec<f64>,
    pub pass: Vec<bool>,
    pub all_pass: bool,
}

/// Checks `‖α_{≤t}‖₂ ≤ γ_t + slack` for each `t = 1..=T`.
pub fn verify_alpha_bound(spec: &OrthogonalizedSpec, lb: &LowerBoundSeq, slack: f64) -> Result<AlphaBoundReport> {
    let big_t = spec.alpha.len();
    if lb.gamma.len() < big_t + 1 {
        return Err(Error::InvalidArgument(format!(
            "bound sequence has {} entries, need {}",
            lb.gamma.len(),
            big_t + 1
        )));
    }
    let mut norms = Vec::with_capacity(big_t);
    let mut acc = 0.0;
    for a in &spec.alpha {
        acc += a * a;
        norms.push(acc.sqrt());
    }
    let gamma = lb.gamma[1..=big_t].to_vec();
    let pass: Vec<bool> = norms.iter().zip(&gamma).map(|(n, g)| *n <= g + slack).collect();
    let all_pass = pass.iter().all(|p| *p);
    Ok(AlphaBoundReport { norms, gamma, pass, all_pass })
}

/// SNR of the collapsed observation `T₀ = ‖α‖₂Θ + G`.
pub fn sufficient_statistic_overlap(alpha: &[f64]) -> f64 {
    alpha.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// `g_t = Σ_s c_ts f_s` as a denoiser over the orthogonalized iterates.
pub fn orthogonalized_denoiser(base: &DenoiserSpec, se: &SEState, spec: &OrthogonalizedSpec) -> DenoiserSpec {
    DenoiserSpec::Orthogonalized {
        base: Box::new(base.clone()),
        base_mu: se.mu.clone(),
        base_diag: se.diag(),
        c: spec.c.clone(),
    }
}

/// Onsager matrix of the orthogonalized iteration, `C·B·C⁻¹`, where `B` is
/// the base Onsager matrix. With it the new iterates are exactly `v = C·a`.
pub fn orthogonalized_onsager(spec: &OrthogonalizedSpec, base_onsager: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let c = spec.c_matrix();
    let t = c.nrows();
    if base_onsager.nrows() < t || base_onsager.ncols() < t {
        return Err(Error::InvalidArgument("Onsager matrix smaller than the orthogonalized spec".into()));
    }
    let b = base_onsager.view((0, 0), (t, t)).into_owned();
    let c_inv = c
        .clone()
        .solve_lower_triangular(&DMatrix::identity(t, t))
        .ok_or_else(|| Error::InvalidArgument("orthogonalization matrix is singular".into()))?;
    let mut out = &c * b * c_inv;
    for i in 0..t {
        for j in i + 1..t {
            out[(i, j)] = 0.0;
        }
    }
    Ok(out)
}

/// Orthogonalized AMP iterates on one spiked sample.
#[derive(Debug, Clone, PartialEq)]
pub struct OampRun {
    pub spec: OrthogonalizedSpec,
    /// `v[k] = v^{k+1}`.
    pub v: Vec<Vec<f64>>,
}

/// Runs `t` steps of AMP with the orthogonalized denoisers built from `base`.
pub fn run_oamp_symmetric(
    exec: Exec,
    sample: &SpikedSample,
    base: &DenoiserSpec,
    prior: &JointPrior,
    t: usize,
    rule: &QuadratureRule,
) -> Result<OampRun> {
    let se = amp_se(prior, base, t, rule)?;
    let spec = orthogonalize(&se, prior)?;
    let g = orthogonalized_denoiser(base, &se, &spec);
    let onsager = orthogonalized_onsager(&spec, &se.onsager)?;
    let run = run_amp_symmetric_with(exec, sample, &g, &se, &onsager, t)?;
    Ok(OampRun { spec, v: run.a })
}

/// Empirical departures from orthonormality of `z^k = v^k − α_k θ` over the
/// non-degenerate directions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrthogonalityStats {
    /// `max_{s≠t} |⟨z^s, z^t⟩/n|`.
    pub max_cross: f64,
    /// `max_t |⟨z^t, θ⟩/n|`.
    pub max_signal: f64,
    /// `max_t |⟨z^t, z^t⟩/n − 1|`.
    pub max_norm_dev: f64,
}

pub fn orthogonality_stats(run: &OampRun, theta: &[f64]) -> OrthogonalityStats {
    let n = theta.len() as f64;
    let z: Vec<Vec<f64>> = run
        .v
        .iter()
        .enumerate()
        .filter(|(k, _)| run.spec.x[*k] == 1)
        .map(|(k, v)| v.iter().zip(theta).map(|(vi, ti)| vi - run.spec.alpha[k] * ti).collect())
        .collect();
    let mut out = OrthogonalityStats { max_cross: 0.0, max_signal: 0.0, max_norm_dev: 0.0 };
    for (i, zi) in z.iter().enumerate() {
        out.max_signal = out.max_signal.max((par::dot(zi, theta) / n).abs());
        out.max_norm_dev = out.max_norm_dev.max((par::dot(zi, zi) / n - 1.0).abs());
        for zj in &z[..i] {
            out.max_cross = out.max_cross.max((par::dot(zi, zj) / n).abs());
        }
    }
    out
}
