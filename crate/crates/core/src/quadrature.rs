//! Scalar calculus over the standard Gaussian.
//!
//! Gauss–Hermite rules use the probabilists' weight, so `Σ w_i = 1` and
//! `Σ w_i f(x_i) ≈ E f(Z)` for `Z ~ N(0, 1)`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

pub const DEFAULT_ORDER: usize = 64;
pub const MAX_ORDER: usize = 512;

const GOLDEN_CAP: usize = 200;
const BISECT_CAP: usize = 200;

/// Gauss–Hermite rule with nodes sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }
}

/// Orthonormal Hermite recurrence at `x`: returns `(p_n(x) / p_n'(x), ln Σ_{k<n} p_k(x)²)`.
///
/// Values are rescaled on the fly because `p_k` overflows for large `n` and `|x|`.
fn hermite_probe(n: usize, x: f64) -> (f64, f64) {
    let (mut p_prev, mut p) = (0.0_f64, 1.0_f64);
    let (mut d_prev, mut d) = (0.0_f64, 0.0_f64);
    let mut sum = 0.0_f64;
    let mut log_scale = 0.0_f64;
    for k in 0..n {
        sum += p * p;
        let kf = k as f64;
        let next = (x * p - kf.sqrt() * p_prev) / (kf + 1.0).sqrt();
        let d_next = (p + x * d - kf.sqrt() * d_prev) / (kf + 1.0).sqrt();
        p_prev = p;
        p = next;
        d_prev = d;
        d = d_next;
        let big = p.abs().max(p_prev.abs());
        if big > 1e100 {
            let r = 1.0 / big;
            p *= r;
            p_prev *= r;
            d *= r;
            d_prev *= r;
            sum *= r * r;
            log_scale -= r.ln();
        }
    }
    (p / d, sum.ln() + 2.0 * log_scale)
}

/// Golub–Welsch nodes, Newton-polished, with Christoffel weights `1 / Σ p_k(x_i)²`.
pub fn gauss_hermite(order: usize) -> Result<QuadratureRule> {
    if !(1..=MAX_ORDER).contains(&order) {
        return Err(Error::InvalidArgument(format!(
            "quadrature order {order} outside 1..={MAX_ORDER}"
        )));
    }
    let jacobi = DMatrix::from_fn(order, order, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let mut nodes: Vec<f64> = jacobi.symmetric_eigenvalues().iter().copied().collect();
    nodes.sort_by(f64::total_cmp);

    let mut weights = Vec::with_capacity(order);
    for x in nodes.iter_mut() {
        for _ in 0..2 {
            let (ratio, _) = hermite_probe(order, *x);
            if ratio.is_finite() {
                *x -= ratio;
            }
        }
        let (_, log_sum) = hermite_probe(order, *x);
        weights.push((-log_sum).exp());
    }

    for i in 0..order / 2 {
        let j = order - 1 - i;
        let x = 0.5 * (nodes[j] - nodes[i]);
        let w = 0.5 * (weights[i] + weights[j]);
        nodes[i] = -x;
        nodes[j] = x;
        weights[i] = w;
        weights[j] = w;
    }
    if order % 2 == 1 {
        nodes[order / 2] = 0.0;
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(QuadratureRule { nodes, weights })
}

/// `E f(Z)` by the rule.
pub fn expect_1d<F: FnMut(f64) -> f64>(rule: &QuadratureRule, mut f: F) -> Result<f64> {
    let mut acc = 0.0;
    for (x, w) in rule.iter() {
        let v = f(x);
        if !v.is_finite() {
            return Err(Error::NumericDomain { node: x });
        }
        acc += w * v;
    }
    Ok(acc)
}

/// `E f(Z0, Z1)` over independent standard Gaussians, tensor rule.
pub fn expect_2d<F: FnMut(f64, f64) -> f64>(rule: &QuadratureRule, mut f: F) -> Result<f64> {
    let mut acc = 0.0;
    for (x0, w0) in rule.iter() {
        let mut inner = 0.0;
        for (x1, w1) in rule.iter() {
            let v = f(x0, x1);
            if !v.is_finite() {
                return Err(Error::NumericDomain { node: x0 });
            }
            inner += w1 * v;
        }
        acc += w0 * inner;
    }
    Ok(acc)
}

/// Golden-section search. Returns the abscissa of the minimum.
pub fn argmin_scalar<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    if !(lo < hi) || !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "golden section needs lo < hi and tol > 0 (lo={lo}, hi={hi}, tol={tol})"
        )));
    }
    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..GOLDEN_CAP {
        if b - a <= tol {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    Ok(0.5 * (a + b))
}

/// Bisection on a sign-changing bracket.
pub fn root_bisect<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    let (mut a, mut b) = (lo.min(hi), lo.max(hi));
    let (mut fa, fb) = (f(a), f(b));
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if !(fa * fb < 0.0) {
        return Err(Error::Bracket { lo: a, hi: b, f_lo: fa, f_hi: fb });
    }
    for _ in 0..BISECT_CAP {
        let m = 0.5 * (a + b);
        if b - a <= tol {
            break;
        }
        let fm = f(m);
        if fm == 0.0 {
            return Ok(m);
        }
        if fa * fm < 0.0 {
            b = m;
        } else {
            a = m;
            fa = fm;
        }
    }
    Ok(0.5 * (a + b))
}

/// Gauss–Legendre rule on `[-1, 1]`, weights summing to 2.
pub fn gauss_legendre(order: usize) -> Result<QuadratureRule> {
    if !(1..=MAX_ORDER).contains(&order) {
        return Err(Error::InvalidArgument(format!(
            "quadrature order {order} outside 1..={MAX_ORDER}"
        )));
    }
    let jacobi = DMatrix::from_fn(order, order, |i, j| {
        if i + 1 == j || j + 1 == i {
            let k = i.max(j) as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = jacobi.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..order)
        .map(|i| (eig.eigenvalues[i], 2.0 * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0));
    Ok(QuadratureRule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    })
}

/// Randomly shifted Halton points pushed through the Gaussian quantile.
///
/// Returns `count` points of dimension `dim`, row-major.
pub fn qmc_gaussian(dim: usize, count: usize, seed: u64) -> Vec<f64> {
    const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];
    assert!(dim <= PRIMES.len(), "qmc dimension {dim} unsupported");
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
    let mut out = Vec::with_capacity(dim * count);
    for i in 0..count {
        for (k, &base) in PRIMES.iter().take(dim).enumerate() {
            let mut idx = i as u64 + 1;
            let (mut f, mut r) = (1.0, 0.0);
            while idx > 0 {
                f /= base as f64;
                r += f * (idx % base) as f64;
                idx /= base;
            }
            let u = (r + shift[k]).fract().clamp(1e-15, 1.0 - 1e-15);
            out.push(normal.inverse_cdf(u));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn double_factorial(k: usize) -> f64 {
        (1..=k).rev().step_by(2).map(|v| v as f64).product()
    }

    #[test]
    fn small_orders() {
        let r1 = gauss_hermite(1).unwrap();
        assert_eq!(r1.nodes, vec![0.0]);
        assert_abs_diff_eq!(r1.weights[0], 1.0, epsilon = 1e-15);
        let r2 = gauss_hermite(2).unwrap();
        assert_abs_diff_eq!(r2.nodes[0], -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(r2.nodes[1], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(r2.weights[0], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn order_bounds() {
        assert!(matches!(gauss_hermite(0), Err(Error::InvalidArgument(_))));
        assert!(matches!(gauss_hermite(513), Err(Error::InvalidArgument(_))));
        assert!(gauss_hermite(512).is_ok());
    }

    #[test]
    fn moments_exact_to_degree_2n_minus_1() {
        for order in [1usize, 2, 3, 5, 8, 16, 31, 64] {
            let rule = gauss_hermite(order).unwrap();
            for k in 0..2 * order {
                let m: f64 = rule.iter().map(|(x, w)| w * x.powi(k as i32)).sum();
                let exact = if k % 2 == 1 { 0.0 } else { double_factorial(k.saturating_sub(1)) };
                let scale: f64 = rule.iter().map(|(x, w)| w * x.abs().powi(k as i32)).sum::<f64>().max(1.0);
                assert!(
                    (m - exact).abs() <= 1e-9 * scale,
                    "order {order} degree {k}: {m} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn order_512_is_symmetric_and_normalized() {
        let rule = gauss_hermite(512).unwrap();
        let total: f64 = rule.weights.iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        for i in 0..512 {
            assert_eq!(rule.nodes[i], -rule.nodes[511 - i]);
        }
        let var: f64 = rule.iter().map(|(x, w)| w * x * x).sum();
        assert_abs_diff_eq!(var, 1.0, epsilon = 1e-10);
        assert!(rule.weights.iter().all(|w| *w >= 0.0));
    }

    #[test]
    fn smooth_expectation_matches_a_trapezoid_oracle() {
        // trapezoid on the density over [-12, 12] is spectrally accurate here
        let h = 1e-3;
        let oracle: f64 = (-12_000..=12_000)
            .map(|k| {
                let x = k as f64 * h;
                x.tanh().powi(2) * (-0.5 * x * x).exp()
            })
            .sum::<f64>()
            * h
            / (2.0 * std::f64::consts::PI).sqrt();
        let rule = gauss_hermite(64).unwrap();
        let got = expect_1d(&rule, |x| x.tanh().powi(2)).unwrap();
        assert_abs_diff_eq!(got, oracle, epsilon = 1e-6);
        assert_abs_diff_eq!(oracle, 0.394294, epsilon = 1e-6);
    }

    #[test]
    fn golden_section_examples() {
        let x = argmin_scalar(|x| (x - 2.0).powi(2), 0.0, 5.0, 1e-8).unwrap();
        assert_abs_diff_eq!(x, 2.0, epsilon = 1e-8);
        let x = argmin_scalar(|x| x, 1.0, 3.0, 1e-8).unwrap();
        assert_abs_diff_eq!(x, 1.0, epsilon = 1e-8);
        let x = argmin_scalar(|x| (x - 1.5).cosh(), 0.0, 4.0, 1e-10).unwrap();
        assert_abs_diff_eq!(x, 1.5, epsilon = 1e-7);
        assert!(argmin_scalar(|x| x, 2.0, 2.0, 1e-8).is_err());
    }

    #[test]
    fn bisection_examples() {
        assert_abs_diff_eq!(root_bisect(|x| x - 3.0, 0.0, 10.0, 1e-12).unwrap(), 3.0, epsilon = 1e-11);
        assert_abs_diff_eq!(
            root_bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-12).unwrap(),
            2f64.sqrt(),
            epsilon = 1e-11
        );
        assert_abs_diff_eq!(
            root_bisect(|x| x.tanh() - 0.5, 0.0, 3.0, 1e-12).unwrap(),
            0.5f64.atanh(),
            epsilon = 1e-11
        );
        assert!(matches!(root_bisect(|x| x * x + 1.0, -1.0, 1.0, 1e-9), Err(Error::Bracket { .. })));
    }

    #[test]
    fn legendre_integrates_polynomials() {
        let rule = gauss_legendre(10).unwrap();
        let int: f64 = rule.iter().map(|(x, w)| w * x.powi(18)).sum();
        assert_abs_diff_eq!(int, 2.0 / 19.0, epsilon = 1e-13);
    }

    #[test]
    fn qmc_points_have_unit_variance() {
        let pts = qmc_gaussian(3, 1 << 14, 11);
        for k in 0..3 {
            let var: f64 = pts.chunks(3).map(|p| p[k] * p[k]).sum::<f64>() / (1 << 14) as f64;
            assert_abs_diff_eq!(var, 1.0, epsilon = 0.01);
        }
    }
}
