//! Scalar joint laws of a signal coordinate and its side information, the
//! posterior-mean denoiser under a Gaussian observation, and the scalar mmse.
//!
//! Every law is stored as a finite mixture of components in which `Θ` and
//! `U` are affine in a latent standard Gaussian vector `ζ` of dimension at
//! most two. Discrete priors have no latent dimension; the Gaussian prior
//! uses two (`Θ = ζ₁`, `U = aζ₁ + √(1−a²)ζ₂`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::QuadratureRule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum JointPrior {
    /// `Θ ~ N(0,1)`, `U = aΘ + √(1−a²)G'`.
    GaussianWithOverlap { a: f64 },
    RademacherNoSide,
    /// `Θ` uniform on `{±1}`, `U = aΘ + √(1−a²)G'`.
    RademacherWithOverlap { a: f64 },
    /// `Θ = 1/√p` with probability `p`, else `0`; no side information.
    SparseTwoPoint { p: f64 },
    /// Joint atoms `[θ, u, mass]`.
    DiscreteGrid { atoms: Vec<[f64; 3]> },
}

/// `c + coef · ζ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub c: f64,
    pub coef: [f64; 2],
}

impl Affine {
    const fn constant(c: f64) -> Self {
        Affine { c, coef: [0.0, 0.0] }
    }

    #[inline]
    pub fn at(&self, zeta: &[f64]) -> f64 {
        let mut v = self.c;
        for (k, z) in zeta.iter().enumerate().take(2) {
            v += self.coef[k] * z;
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub theta: Affine,
    pub u: Affine,
}

fn overlap_noise(a: f64) -> f64 {
    (1.0 - a * a).max(0.0).sqrt()
}

#[inline]
pub(crate) fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl JointPrior {
    /// Single atom at `(0, 0)`: the absent side channel.
    pub fn point_mass() -> Self {
        JointPrior::DiscreteGrid { atoms: vec![[0.0, 0.0, 1.0]] }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        match self {
            JointPrior::GaussianWithOverlap { a } | JointPrior::RademacherWithOverlap { a } => {
                if !(0.0..=1.0).contains(a) {
                    return bad(format!("overlap a = {a} outside [0, 1]"));
                }
            }
            JointPrior::SparseTwoPoint { p } => {
                if !(*p > 0.0 && *p <= 1.0) {
                    return bad(format!("sparsity p = {p} outside (0, 1]"));
                }
            }
            JointPrior::DiscreteGrid { atoms } => {
                if atoms.is_empty() {
                    return bad("discrete grid has no atoms".into());
                }
                if atoms.iter().any(|at| !(at[2] >= 0.0) || !at[0].is_finite() || !at[1].is_finite()) {
                    return bad("discrete grid atoms need finite values and nonnegative mass".into());
                }
                let total: f64 = atoms.iter().map(|at| at[2]).sum();
                if (total - 1.0).abs() > 1e-12 {
                    return bad(format!("discrete grid masses sum to {total}"));
                }
            }
            JointPrior::RademacherNoSide => {}
        }
        Ok(())
    }

    pub fn second_moment(&self) -> f64 {
        match self {
            JointPrior::GaussianWithOverlap { .. }
            | JointPrior::RademacherNoSide
            | JointPrior::RademacherWithOverlap { .. } => 1.0,
            JointPrior::SparseTwoPoint { p } => p * (1.0 / p),
            JointPrior::DiscreteGrid { atoms } => atoms.iter().map(|at| at[2] * at[0] * at[0]).sum(),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            JointPrior::SparseTwoPoint { p } => p.sqrt(),
            JointPrior::DiscreteGrid { atoms } => atoms.iter().map(|at| at[2] * at[0]).sum(),
            _ => 0.0,
        }
    }

    /// Number of latent Gaussian coordinates in the mixture representation.
    pub fn latent_dim(&self) -> usize {
        match self {
            JointPrior::GaussianWithOverlap { a } if *a > 0.0 => 2,
            JointPrior::GaussianWithOverlap { .. } => 1,
            JointPrior::RademacherWithOverlap { a } if *a < 1.0 => 1,
            _ => 0,
        }
    }

    pub fn components(&self) -> Vec<Component> {
        match self {
            JointPrior::GaussianWithOverlap { a } => {
                let u = if *a > 0.0 {
                    Affine { c: 0.0, coef: [*a, overlap_noise(*a)] }
                } else {
                    Affine::constant(0.0)
                };
                vec![Component { weight: 1.0, theta: Affine { c: 0.0, coef: [1.0, 0.0] }, u }]
            }
            JointPrior::RademacherNoSide => [-1.0, 1.0]
                .iter()
                .map(|&t| Component { weight: 0.5, theta: Affine::constant(t), u: Affine::constant(0.0) })
                .collect(),
            JointPrior::RademacherWithOverlap { a } => [-1.0, 1.0]
                .iter()
                .map(|&t| Component {
                    weight: 0.5,
                    theta: Affine::constant(t),
                    u: Affine { c: a * t, coef: [overlap_noise(*a), 0.0] },
                })
                .collect(),
            JointPrior::SparseTwoPoint { p } => vec![
                Component { weight: 1.0 - p, theta: Affine::constant(0.0), u: Affine::constant(0.0) },
                Component { weight: *p, theta: Affine::constant(1.0 / p.sqrt()), u: Affine::constant(0.0) },
            ],
            JointPrior::DiscreteGrid { atoms } => atoms
                .iter()
                .map(|at| Component { weight: at[2], theta: Affine::constant(at[0]), u: Affine::constant(at[1]) })
                .collect(),
        }
    }

    /// Tensor quadrature points `(θ, u, weight)` of the law.
    pub fn points(&self, rule: &QuadratureRule) -> Vec<(f64, f64, f64)> {
        let m = self.latent_dim();
        let mut out = Vec::new();
        for comp in self.components() {
            match m {
                0 => out.push((comp.theta.c, comp.u.c, comp.weight)),
                1 => {
                    for (z, w) in rule.iter() {
                        out.push((comp.theta.at(&[z]), comp.u.at(&[z]), comp.weight * w));
                    }
                }
                _ => {
                    for (z0, w0) in rule.iter() {
                        for (z1, w1) in rule.iter() {
                            let zeta = [z0, z1];
                            out.push((comp.theta.at(&zeta), comp.u.at(&zeta), comp.weight * w0 * w1));
                        }
                    }
                }
            }
        }
        out
    }

    /// Draws `(θ, u)` from the law.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        use rand_distr::{Distribution, StandardNormal};
        let comps = self.components();
        let mut pick = rng.random::<f64>();
        let mut chosen = comps[comps.len() - 1];
        for comp in &comps {
            if pick < comp.weight {
                chosen = *comp;
                break;
            }
            pick -= comp.weight;
        }
        let zeta = match self.latent_dim() {
            0 => [0.0, 0.0],
            1 => [StandardNormal.sample(rng), 0.0],
            _ => [StandardNormal.sample(rng), StandardNormal.sample(rng)],
        };
        (chosen.theta.at(&zeta), chosen.u.at(&zeta))
    }

    /// `(E[Θ | γΘ+G = y, U = u], Var[Θ | γΘ+G = y, U = u])`.
    pub fn posterior_moments(&self, gamma: f64, y: f64, u: f64) -> (f64, f64) {
        match self {
            JointPrior::GaussianWithOverlap { a } => {
                if *a >= 1.0 {
                    return (u, 0.0);
                }
                let side = a * a / (1.0 - a * a);
                let precision = 1.0 + gamma * gamma + side;
                let mean = (gamma * y + a * u / (1.0 - a * a)) / precision;
                (mean, 1.0 / precision)
            }
            JointPrior::RademacherNoSide => {
                let m = (gamma * y).tanh();
                (m, 1.0 - m * m)
            }
            JointPrior::RademacherWithOverlap { a } => {
                if *a >= 1.0 {
                    let m = u.signum() * (u != 0.0) as u8 as f64;
                    return (m, 1.0 - m * m);
                }
                let m = (gamma * y + a * u / (1.0 - a * a)).tanh();
                (m, 1.0 - m * m)
            }
            JointPrior::SparseTwoPoint { p } => {
                let hi = 1.0 / p.sqrt();
                if *p >= 1.0 {
                    return (hi, 0.0);
                }
                let logit = (p / (1.0 - p)).ln() + gamma * y * hi - 0.5 * gamma * gamma * hi * hi;
                let q = logistic(logit);
                (q * hi, q * (1.0 - q) * hi * hi)
            }
            JointPrior::DiscreteGrid { atoms } => {
                let matches: Vec<&[f64; 3]> = atoms.iter().filter(|at| (at[1] - u).abs() <= 1e-12).collect();
                let support: Vec<&[f64; 3]> = if matches.iter().any(|at| at[2] > 0.0) {
                    matches
                } else {
                    atoms.iter().collect()
                };
                let logs: Vec<f64> = support
                    .iter()
                    .map(|at| {
                        if at[2] > 0.0 {
                            at[2].ln() + gamma * y * at[0] - 0.5 * gamma * gamma * at[0] * at[0]
                        } else {
                            f64::NEG_INFINITY
                        }
                    })
                    .collect();
                let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
                for (at, l) in support.iter().zip(&logs) {
                    let w = (l - top).exp();
                    z += w;
                    m1 += w * at[0];
                    m2 += w * at[0] * at[0];
                }
                let mean = m1 / z;
                (mean, (m2 / z - mean * mean).max(0.0))
            }
        }
    }

    pub fn posterior_mean(&self, gamma: f64, y: f64, u: f64) -> f64 {
        self.posterior_moments(gamma, y, u).0
    }

    /// `E[Θ²] − E[E[Θ | γΘ+G, U]²]`, by quadrature over `G` and the latent coordinates.
    pub fn mmse(&self, gamma: f64, rule: &QuadratureRule) -> f64 {
        let mut second = 0.0;
        for (theta, u, w) in self.points(rule) {
            let mut inner = 0.0;
            for (g, wg) in rule.iter() {
                let m = self.posterior_mean(gamma, gamma * theta + g, u);
                inner += wg * m * m;
            }
            second += w * inner;
        }
        let ex2 = self.second_moment();
        (ex2 - second).clamp(0.0, ex2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Channel {
    /// `h(x, w) = x²`.
    SquaredNoiseless,
    /// `h(x, w) = x + τw`.
    LinearGaussian { tau: f64 },
}

impl Channel {
    #[inline]
    pub fn apply(&self, x: f64, w: f64) -> f64 {
        match self {
            Channel::SquaredNoiseless => x * x,
            Channel::LinearGaussian { tau } => x + tau * w,
        }
    }

    /// `E[Z₀ | h(σZ₀ + σ̃Z₁, W) = y, U = u, Z₁ = z1]`.
    ///
    /// The linear kind assumes `W ~ N(0, 1)` independent of `U`.
    pub fn posterior_z0(&self, sigma: f64, sigma_tilde: f64, y: f64, _u: f64, z1: f64) -> Result<f64> {
        let m = sigma_tilde * z1;
        match self {
            Channel::SquaredNoiseless => {
                if y < 0.0 {
                    return Err(Error::InvalidObservation(y));
                }
                let r = y.sqrt();
                let w_plus = logistic(2.0 * r * m / (sigma * sigma));
                let s_minus = (-r - m) / sigma;
                Ok(s_minus + w_plus * 2.0 * r / sigma)
            }
            Channel::LinearGaussian { tau } => Ok(sigma * (y - m) / (sigma * sigma + tau * tau)),
        }
    }

    /// Derivative of [`Channel::posterior_z0`] with respect to `m = σ̃·z1` at fixed `y`.
    pub fn posterior_z0_dm(&self, sigma: f64, sigma_tilde: f64, y: f64, z1: f64) -> Result<f64> {
        let m = sigma_tilde * z1;
        match self {
            Channel::SquaredNoiseless => {
                if y < 0.0 {
                    return Err(Error::InvalidObservation(y));
                }
                let w_plus = logistic(2.0 * y.sqrt() * m / (sigma * sigma));
                Ok(-1.0 / sigma + w_plus * (1.0 - w_plus) * 4.0 * y / sigma.powi(3))
            }
            Channel::LinearGaussian { tau } => Ok(-sigma / (sigma * sigma + tau * tau)),
        }
    }
}

/// Free-function form of [`Channel::posterior_z0`].
pub fn channel_posterior_z0(
    channel: &Channel,
    sigma: f64,
    sigma_tilde: f64,
    y: f64,
    u: f64,
    z1: f64,
) -> Result<f64> {
    channel.posterior_z0(sigma, sigma_tilde, y, u, z1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::gauss_hermite;
    use approx::assert_abs_diff_eq;

    fn phi(x: f64) -> f64 {
        (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }

    #[test]
    fn second_moments() {
        assert_eq!(JointPrior::GaussianWithOverlap { a: 0.5 }.second_moment(), 1.0);
        assert_eq!(JointPrior::RademacherNoSide.second_moment(), 1.0);
        assert_abs_diff_eq!(JointPrior::SparseTwoPoint { p: 0.25 }.second_moment(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn posterior_mean_examples() {
        let g = JointPrior::GaussianWithOverlap { a: 0.0 };
        assert_abs_diff_eq!(g.posterior_mean(1.0, 0.8, 3.0), 0.4, epsilon = 1e-15);
        let r = JointPrior::RademacherNoSide;
        assert_eq!(r.posterior_mean(1.0, 0.0, 0.0), 0.0);
        assert_abs_diff_eq!(r.posterior_mean(0.7, 1.3, 0.0), (0.91f64).tanh(), epsilon = 1e-15);
    }

    #[test]
    fn gaussian_overlap_matches_bivariate_conditioning() {
        // (Θ, Y, U) jointly Gaussian; condition by the Schur complement.
        let (a, gamma, y, u) = (0.6f64, 0.5f64, 0.2f64, 1.0f64);
        let cov_ty = [gamma, a];
        let cov_yy = [[gamma * gamma + 1.0, gamma * a], [gamma * a, 1.0]];
        let det = cov_yy[0][0] * cov_yy[1][1] - cov_yy[0][1] * cov_yy[1][0];
        let inv = [
            [cov_yy[1][1] / det, -cov_yy[0][1] / det],
            [-cov_yy[1][0] / det, cov_yy[0][0] / det],
        ];
        let k0 = cov_ty[0] * inv[0][0] + cov_ty[1] * inv[1][0];
        let k1 = cov_ty[0] * inv[0][1] + cov_ty[1] * inv[1][1];
        let expected = k0 * y + k1 * u;
        let got = JointPrior::GaussianWithOverlap { a }.posterior_mean(gamma, y, u);
        assert_abs_diff_eq!(got, expected, epsilon = 1e-14);
    }

    #[test]
    fn mmse_examples() {
        let rule = gauss_hermite(64).unwrap();
        assert_abs_diff_eq!(JointPrior::GaussianWithOverlap { a: 0.0 }.mmse(1.0, &rule), 0.5, epsilon = 1e-12);
        let sparse = JointPrior::SparseTwoPoint { p: 0.3 };
        let var = sparse.second_moment() - sparse.mean().powi(2);
        assert_abs_diff_eq!(sparse.mmse(0.0, &rule), var, epsilon = 1e-12);
        // 1 − E tanh(1 + G), by a fine Riemann sum on the density.
        let h = 1e-4;
        let oracle: f64 = (-120_000..=120_000)
            .map(|k| {
                let z = k as f64 * h;
                (1.0 + z).tanh() * phi(z) * h
            })
            .sum();
        let got = JointPrior::RademacherNoSide.mmse(1.0, &rule);
        assert_abs_diff_eq!(got, 1.0 - oracle, epsilon = 1e-9);
        assert_abs_diff_eq!(got, 0.4496, epsilon = 5e-4);
    }

    #[test]
    fn squared_channel_examples() {
        let ch = Channel::SquaredNoiseless;
        assert_abs_diff_eq!(ch.posterior_z0(0.7, 0.0, 2.3, 0.0, 1.1).unwrap(), 0.0, epsilon = 1e-15);
        let direct = (1.0 * phi(1.0) + (-3.0) * phi(-3.0)) / (phi(1.0) + phi(3.0));
        let got = ch.posterior_z0(1.0, 1.0, 4.0, 0.0, 1.0).unwrap();
        assert_abs_diff_eq!(got, direct, epsilon = 1e-14);
        assert_abs_diff_eq!(got, 0.928_06, epsilon = 1e-5);
        assert!(matches!(ch.posterior_z0(1.0, 1.0, -0.1, 0.0, 1.0), Err(Error::InvalidObservation(_))));
    }

    #[test]
    fn linear_channel_example() {
        let ch = Channel::LinearGaussian { tau: 0.5 };
        let got = ch.posterior_z0(0.8, 0.0, 1.7, 0.0, 9.0).unwrap();
        assert_abs_diff_eq!(got, 0.8 * 1.7 / (0.64 + 0.25), epsilon = 1e-15);
    }

    #[test]
    fn dm_derivative_matches_finite_difference() {
        for ch in [Channel::SquaredNoiseless, Channel::LinearGaussian { tau: 0.3 }] {
            let (s, st, y, z1) = (0.6, 0.9, 1.4, 0.35);
            let h = 1e-6;
            let fd = (ch.posterior_z0(s, st, y, 0.0, z1 + h / st).unwrap()
                - ch.posterior_z0(s, st, y, 0.0, z1 - h / st).unwrap())
                / (2.0 * h);
            assert_abs_diff_eq!(ch.posterior_z0_dm(s, st, y, z1).unwrap(), fd, epsilon = 1e-6);
        }
    }

    #[test]
    fn validation() {
        assert!(JointPrior::GaussianWithOverlap { a: 1.2 }.validate().is_err());
        assert!(JointPrior::SparseTwoPoint { p: 0.0 }.validate().is_err());
        assert!(JointPrior::DiscreteGrid { atoms: vec![[1.0, 0.0, 0.5]] }.validate().is_err());
        assert!(JointPrior::point_mass().validate().is_ok());
    }

    #[test]
    fn discrete_grid_conditions_on_side_information() {
        let prior = JointPrior::DiscreteGrid { atoms: vec![[1.0, 1.0, 0.5], [-1.0, -1.0, 0.5]] };
        assert_abs_diff_eq!(prior.posterior_mean(0.3, -2.0, 1.0), 1.0, epsilon = 1e-15);
        let flat = JointPrior::DiscreteGrid { atoms: vec![[1.0, 0.0, 0.5], [-1.0, 0.0, 0.5]] };
        assert_abs_diff_eq!(flat.posterior_mean(0.8, 0.4, 0.0), (0.32f64).tanh(), epsilon = 1e-14);
    }
}
