//! Plain `f64` bivariate Gaussian helpers used outside the autodiff graph.

use std::f64::consts::PI;

use crate::domain::{Mat2, Vec2};

pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Eigenvalues of a symmetric 2x2 matrix, ascending.
pub fn eigenvalues(s: &Mat2) -> (f64, f64) {
    let tr = s[0][0] + s[1][1];
    let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
    let disc = ((tr * tr) / 4.0 - det).max(0.0).sqrt();
    (tr / 2.0 - disc, tr / 2.0 + disc)
}

pub fn det(s: &Mat2) -> f64 {
    s[0][0] * s[1][1] - s[0][1] * s[1][0]
}

/// `ln N(x; μ, Σ)`.
pub fn log_density(x: Vec2, mu: Vec2, sigma: &Mat2) -> f64 {
    let d = det(sigma);
    let (dx, dy) = (x[0] - mu[0], x[1] - mu[1]);
    // Σ⁻¹ = adj(Σ) / det
    let q =
        (sigma[1][1] * dx * dx - (sigma[0][1] + sigma[1][0]) * dx * dy + sigma[0][0] * dy * dy) / d;
    -LN_2PI - 0.5 * d.ln() - 0.5 * q
}

pub fn density(x: Vec2, mu: Vec2, sigma: &Mat2) -> f64 {
    log_density(x, mu, sigma).exp()
}

pub fn logsumexp(v: &[f64]) -> f64 {
    let mx = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + v.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}

/// `R(θ) diag(σ1², σ2²) R(θ)ᵀ`.
pub fn cov_from_axes(sigma1: f64, sigma2: f64, theta: f64) -> Mat2 {
    rotate_cov(&[[sigma1 * sigma1, 0.0], [0.0, sigma2 * sigma2]], theta)
}

/// `R(θ) Σ R(θ)ᵀ`.
pub fn rotate_cov(s: &Mat2, theta: f64) -> Mat2 {
    let (sn, c) = theta.sin_cos();
    let r = [[c, -sn], [sn, c]];
    let mut rs = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            rs[i][j] = r[i][0] * s[0][j] + r[i][1] * s[1][j];
        }
    }
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = rs[i][0] * r[j][0] + rs[i][1] * r[j][1];
        }
    }
    // Exact symmetry.
    let off = 0.5 * (out[0][1] + out[1][0]);
    out[0][1] = off;
    out[1][0] = off;
    out
}

/// Peak density of an isotropic Gaussian with std-dev `sigma`: `1 / (2π σ²)`.
pub fn isotropic_peak_density(sigma: f64) -> f64 {
    1.0 / (2.0 * PI * sigma * sigma)
}

pub fn distance(a: Vec2, b: Vec2) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

pub fn squared_distance(a: Vec2, b: Vec2) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_density_at_mean() {
        let v = log_density([1.0, 2.0], [1.0, 2.0], &[[1.0, 0.0], [0.0, 1.0]]);
        assert!((v + LN_2PI).abs() < 1e-15);
        assert!((LN_2PI - (2.0 * PI).ln()).abs() < 1e-15);
    }

    #[test]
    fn density_matches_axis_form() {
        let (s1, s2, th) = (0.7, 1.9, 0.6);
        let sigma = cov_from_axes(s1, s2, th);
        let (x, mu) = ([0.4, -1.3], [0.1, 0.2]);
        let (sn, c) = th.sin_cos();
        let (dx, dy) = (x[0] - mu[0], x[1] - mu[1]);
        let u = c * dx + sn * dy;
        let w = -sn * dx + c * dy;
        let want = -LN_2PI - (s1 * s2).ln() - 0.5 * (u * u / (s1 * s1) + w * w / (s2 * s2));
        assert!((log_density(x, mu, &sigma) - want).abs() < 1e-12);
    }

    #[test]
    fn eigenvalues_of_rotated_axes() {
        let (lo, hi) = eigenvalues(&cov_from_axes(0.5, 2.0, 1.1));
        assert!((lo - 0.25).abs() < 1e-12 && (hi - 4.0).abs() < 1e-12);
    }

    #[test]
    fn peak_density_at_ten_centimetres() {
        assert!((isotropic_peak_density(0.1) - 15.915_494_309_189_533).abs() < 1e-9);
    }
}
