//! Scalar helpers shared by the estimators. All logarithms are natural.

use libm::{exp, log, log1p};

/// Probability clip used wherever a cross-entropy or KL term is evaluated.
pub const EPS_CLIP: f64 = 1e-12;

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + exp(-z))
    } else {
        let e = exp(z);
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    log(p) - log1p(-p)
}

#[inline]
pub fn clip_prob(p: f64) -> f64 {
    p.clamp(EPS_CLIP, 1.0 - EPS_CLIP)
}

/// `x * ln(x / y)` with the `0 ln 0 = 0` convention.
#[inline]
pub fn xlogx_over_y(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * (log(x) - log(y))
    }
}

/// Entropy of a Bernoulli(p) in nats.
#[inline]
pub fn binary_entropy(p: f64) -> f64 {
    -(xlogx_over_y(p, 1.0) + xlogx_over_y(1.0 - p, 1.0))
}

/// `KL(Bern(p) || Bern(q))` in nats.
#[inline]
pub fn bernoulli_kl(p: f64, q: f64) -> f64 {
    xlogx_over_y(p, q) + xlogx_over_y(1.0 - p, 1.0 - q)
}

/// Cross entropy of estimate `q` against a (possibly soft) target `p`.
#[inline]
pub fn cross_entropy(p: f64, q: f64) -> f64 {
    let mut ce = 0.0;
    if p > 0.0 {
        ce -= p * log(q);
    }
    if p < 1.0 {
        ce -= (1.0 - p) * log(1.0 - q);
    }
    ce
}

/// Pairwise (tree) summation; result does not depend on how the caller
/// later splits the slice across threads.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 64;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
}

impl MeanEstimate {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self { mean: f64::NAN, std_error: f64::NAN };
        }
        let mean = pairwise_sum(xs) / n as f64;
        if n < 2 {
            return Self { mean, std_error: 0.0 };
        }
        let mut sq = alloc::vec::Vec::with_capacity(n);
        sq.extend(xs.iter().map(|x| (x - mean) * (x - mean)));
        let var = pairwise_sum(&sq) / (n - 1) as f64;
        Self { mean, std_error: libm::sqrt(var / n as f64) }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `H x = g` for a small symmetric positive definite `H` (row-major,
/// `n x n`) by Cholesky. Returns `None` if `H` is not positive definite.
pub fn solve_spd(h: &[f64], g: &[f64]) -> Option<alloc::vec::Vec<f64>> {
    let n = g.len();
    debug_assert_eq!(h.len(), n * n);
    let mut l = alloc::vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = h[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i * n + i] = libm::sqrt(s);
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = alloc::vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i * n + k] * y[k]).sum();
        y[i] = (g[i] - s) / l[i * n + i];
    }
    let mut x = alloc::vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k * n + i] * x[k]).sum();
        x[i] = (y[i] - s) / l[i * n + i];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sigmoid_matches_closed_form() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_relative_eq!(sigmoid(1.0), 1.0 / (1.0 + (-1.0f64).exp()), epsilon = 1e-15);
        assert_relative_eq!(sigmoid(1.0), 0.731_058_578_630_004_9, epsilon = 1e-12);
        assert!(sigmoid(800.0) <= 1.0 && sigmoid(-800.0) >= 0.0);
        assert_relative_eq!(logit(sigmoid(0.3)), 0.3, epsilon = 1e-12);
    }

    #[test]
    fn entropy_and_kl() {
        assert_relative_eq!(binary_entropy(0.5), core::f64::consts::LN_2, epsilon = 1e-15);
        assert_eq!(binary_entropy(0.0), 0.0);
        assert_eq!(binary_entropy(1.0), 0.0);
        assert_eq!(bernoulli_kl(0.3, 0.3), 0.0);
        // CE = H + KL
        let (p, q) = (0.2, 0.7);
        assert_relative_eq!(cross_entropy(p, q), binary_entropy(p) + bernoulli_kl(p, q), epsilon = 1e-14);
    }

    #[test]
    fn pairwise_sum_is_accurate() {
        let xs: alloc::vec::Vec<f64> = (0..10_000).map(|i| 0.1 + i as f64 * 1e-3).collect();
        let exact = 10_000.0 * 0.1 + 1e-3 * (9_999.0 * 10_000.0 / 2.0);
        assert_relative_eq!(pairwise_sum(&xs), exact, epsilon = 1e-9);
        let m = MeanEstimate::of(&[1.0, 2.0, 3.0]);
        assert_eq!(m.mean, 2.0);
        assert_relative_eq!(m.std_error, (1.0f64 / 3.0).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn cholesky_solve() {
        let h = [4.0, 2.0, 0.6, 2.0, 5.0, 1.0, 0.6, 1.0, 3.0];
        let x = [1.0, -2.0, 0.5];
        let g: alloc::vec::Vec<f64> = (0..3).map(|i| (0..3).map(|j| h[i * 3 + j] * x[j]).sum()).collect();
        let sol = solve_spd(&h, &g).unwrap();
        for (a, b) in sol.iter().zip(x) {
            assert_relative_eq!(*a, b, epsilon = 1e-12);
        }
        assert!(solve_spd(&[1.0, 2.0, 2.0, 1.0], &[1.0, 1.0]).is_none());
    }
}
