//! Separable nonlinearities `f_t(x_1, …, x_t; side)`.
//!
//! `side` carries the non-iterate arguments: `[u]` for the symmetric model
//! and the signal side of a GLM (`[v]`), `[y, u]` for the response side.

use serde::{Deserialize, Serialize};

use crate::prior::JointPrior;

/// Finite-difference step for weak derivatives.
pub const FD_STEP: f64 = 1e-5;

/// State-evolution quantities a denoiser may read at evaluation time.
#[derive(Debug, Clone, Copy)]
pub struct SeView<'a> {
    /// `mu[k] = μ_{k+1}`.
    pub mu: &'a [f64],
    /// `diag[k] = Σ_{k+1,k+1}`.
    pub diag: &'a [f64],
}

impl<'a> SeView<'a> {
    pub const EMPTY: SeView<'static> = SeView { mu: &[], diag: &[] };
}

/// `f = c + Σ_j side_j·side[j] + Σ_s x[s-1]·x_s`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearRow {
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub side: Vec<f64>,
    #[serde(default)]
    pub x: Vec<f64>,
}

/// Additively separable polynomial: `c + Σ_j Σ_k side[j][k-1]·side_j^k + Σ_s Σ_k x[s-1][k-1]·x_s^k`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolyRow {
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub side: Vec<Vec<f64>>,
    #[serde(default)]
    pub x: Vec<Vec<f64>>,
}

/// Piecewise-linear table in the latest iterate (in `side[0]` for `t = 0`),
/// flat outside the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableRow {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DenoiserSpec {
    /// `f_t(x; u) = E[Θ | μ_tΘ + G = x_t, U = u]` with `G ~ N(0, Σ_tt)`;
    /// `f_0(u) = E[Θ | U = u]`.
    BayesPosteriorMean { prior: JointPrior },
    Linear { rows: Vec<LinearRow> },
    Polynomial { rows: Vec<PolyRow> },
    Tabulated { rows: Vec<TableRow> },
    /// `g_t = Σ_{s≤t} c[t][s]·f_s` where the `f_s` read the base iterates
    /// `a^{≤s}`, recovered from `v^{k} = Σ_{j<k} c[k-1][j]·a^{j+1}`.
    Orthogonalized {
        base: Box<DenoiserSpec>,
        base_mu: Vec<f64>,
        base_diag: Vec<f64>,
        c: Vec<Vec<f64>>,
    },
}

fn horner_tail(coefs: &[f64], x: f64) -> f64 {
    // Σ_{k≥1} coefs[k-1] x^k
    coefs.iter().rev().fold(0.0, |acc, c| (acc + c) * x)
}

fn horner_tail_deriv(coefs: &[f64], x: f64) -> f64 {
    let mut acc = 0.0;
    for (k, c) in coefs.iter().enumerate().rev() {
        acc = acc * x + (k as f64 + 1.0) * c;
    }
    acc
}

fn interp(row: &TableRow, x: f64) -> f64 {
    let g = &row.grid;
    if g.is_empty() {
        return 0.0;
    }
    if x <= g[0] {
        return row.values[0];
    }
    if x >= g[g.len() - 1] {
        return row.values[g.len() - 1];
    }
    let k = g.partition_point(|v| *v <= x).max(1) - 1;
    let w = (x - g[k]) / (g[k + 1] - g[k]);
    row.values[k] * (1.0 - w) + row.values[k + 1] * w
}

impl DenoiserSpec {
    /// Number of rows available, or `None` when every `t` is defined.
    pub fn len(&self) -> Option<usize> {
        match self {
            DenoiserSpec::BayesPosteriorMean { .. } => None,
            DenoiserSpec::Linear { rows } => Some(rows.len()),
            DenoiserSpec::Polynomial { rows } => Some(rows.len()),
            DenoiserSpec::Tabulated { rows } => Some(rows.len()),
            DenoiserSpec::Orthogonalized { c, .. } => Some(c.len()),
        }
    }

    /// Polynomial nonlinearities fall under the polynomial growth setting,
    /// the rest are Lipschitz.
    pub fn is_polynomial(&self) -> bool {
        matches!(self, DenoiserSpec::Linear { .. } | DenoiserSpec::Polynomial { .. })
    }

    /// 1-based iterate indices `f_t` reads.
    pub fn support(&self, t: usize) -> Vec<usize> {
        if t == 0 {
            return Vec::new();
        }
        let nonzero = |v: &[f64]| v.iter().any(|c| *c != 0.0);
        match self {
            DenoiserSpec::BayesPosteriorMean { .. } | DenoiserSpec::Tabulated { .. } => vec![t],
            DenoiserSpec::Linear { rows } => (1..=t)
                .filter(|&s| rows.get(t).and_then(|r| r.x.get(s - 1)).is_some_and(|c| *c != 0.0))
                .collect(),
            DenoiserSpec::Polynomial { rows } => (1..=t)
                .filter(|&s| rows.get(t).and_then(|r| r.x.get(s - 1)).is_some_and(|c| nonzero(c)))
                .collect(),
            DenoiserSpec::Orthogonalized { .. } => (1..=t).collect(),
        }
    }

    /// `f_t(xs; side)` with `xs = (x_1, …, x_t)`.
    pub fn eval(&self, t: usize, xs: &[f64], side: &[f64], se: &SeView) -> f64 {
        match self {
            DenoiserSpec::BayesPosteriorMean { prior } => {
                let u = side.first().copied().unwrap_or(0.0);
                if t == 0 {
                    return prior.posterior_mean(0.0, 0.0, u);
                }
                let (mu, var) = (se.mu[t - 1], se.diag[t - 1]);
                if var <= 1e-300 {
                    return prior.posterior_mean(0.0, 0.0, u);
                }
                let sd = var.sqrt();
                prior.posterior_mean(mu / sd, xs[t - 1] / sd, u)
            }
            DenoiserSpec::Linear { rows } => {
                let row = &rows[t];
                let mut v = row.constant;
                v += row.side.iter().zip(side).map(|(c, s)| c * s).sum::<f64>();
                v += row.x.iter().zip(xs).map(|(c, x)| c * x).sum::<f64>();
                v
            }
            DenoiserSpec::Polynomial { rows } => {
                let row = &rows[t];
                let mut v = row.constant;
                v += row.side.iter().zip(side).map(|(c, s)| horner_tail(c, *s)).sum::<f64>();
                v += row.x.iter().zip(xs).map(|(c, x)| horner_tail(c, *x)).sum::<f64>();
                v
            }
            DenoiserSpec::Tabulated { rows } => {
                let arg = if t == 0 { side.first().copied().unwrap_or(0.0) } else { xs[t - 1] };
                interp(&rows[t], arg)
            }
            DenoiserSpec::Orthogonalized { base, base_mu, base_diag, c } => {
                let a = recover_base_iterates(c, xs);
                let view = SeView { mu: base_mu, diag: base_diag };
                c[t].iter()
                    .enumerate()
                    .map(|(s, cts)| if *cts == 0.0 { 0.0 } else { cts * base.eval(s, &a[..s], side, &view) })
                    .sum()
            }
        }
    }

    /// `∂f_t/∂x_s` (1-based `s`), analytic where available, otherwise a
    /// central difference with step [`FD_STEP`].
    pub fn deriv(&self, t: usize, s: usize, xs: &[f64], side: &[f64], se: &SeView) -> f64 {
        debug_assert!(s >= 1 && s <= t);
        match self {
            DenoiserSpec::BayesPosteriorMean { prior } => {
                if s != t {
                    return 0.0;
                }
                let (mu, var) = (se.mu[t - 1], se.diag[t - 1]);
                if var <= 1e-300 {
                    return 0.0;
                }
                let sd = var.sqrt();
                let u = side.first().copied().unwrap_or(0.0);
                let (_, post_var) = prior.posterior_moments(mu / sd, xs[t - 1] / sd, u);
                mu / var * post_var
            }
            DenoiserSpec::Linear { rows } => rows[t].x.get(s - 1).copied().unwrap_or(0.0),
            DenoiserSpec::Polynomial { rows } => rows[t]
                .x
                .get(s - 1)
                .map(|c| horner_tail_deriv(c, xs[s - 1]))
                .unwrap_or(0.0),
            DenoiserSpec::Tabulated { .. } | DenoiserSpec::Orthogonalized { .. } => {
                self.finite_difference(t, s, xs, side, se)
            }
        }
    }

    pub fn finite_difference(&self, t: usize, s: usize, xs: &[f64], side: &[f64], se: &SeView) -> f64 {
        let mut buf = xs.to_vec();
        buf[s - 1] = xs[s - 1] + FD_STEP;
        let hi = self.eval(t, &buf, side, se);
        buf[s - 1] = xs[s - 1] - FD_STEP;
        let lo = self.eval(t, &buf, side, se);
        (hi - lo) / (2.0 * FD_STEP)
    }
}

/// Inverts `v^{k} = Σ_{j<k} c[k-1][j]·a^{j+1}` for `a` (forward substitution).
pub fn recover_base_iterates(c: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    let mut a = vec![0.0; v.len()];
    for k in 0..v.len() {
        let row = &c[k];
        let mut acc = v[k];
        for j in 0..k {
            acc -= row[j] * a[j];
        }
        a[k] = acc / row[k];
    }
    a
}
