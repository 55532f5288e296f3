//! Dense-matrix spectra, independent of the discriminant route.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::grid::FourierField;

fn coefficient(c: &[Complex64], k: i64) -> Complex64 {
    let m = k.unsigned_abs() as usize;
    if k == 0 || m > c.len() {
        Complex64::new(0.0, 0.0)
    } else if k > 0 {
        c[m - 1]
    } else {
        c[m - 1].conj()
    }
}

/// Eigenvalues of `-d²/dx² + u` on the modes `e^{iπmx}` with `m ≡ parity
/// (mod 2)`, `|m| ≤ max_mode`. Even parity is periodic, odd antiperiodic.
pub fn block_eigenvalues(u: &FourierField, parity: i64, max_mode: i64) -> Vec<f64> {
    let c = u.to_complex();
    let modes: Vec<i64> = (-max_mode..=max_mode).filter(|m| (m - parity).rem_euclid(2) == 0).collect();
    let n = modes.len();
    let h = DMatrix::from_fn(n, n, |i, j| {
        let (a, b) = (modes[i], modes[j]);
        let diag = if i == j { (PI * a as f64).powi(2) } else { 0.0 };
        Complex64::new(diag, 0.0) + coefficient(&c, (a - b) / 2)
    });
    let mut ev: Vec<f64> = SymmetricEigen::new(h).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

fn default_truncation(n_max: usize, u: &FourierField) -> i64 {
    (4 * n_max + 2 * u.modes() + 40) as i64
}

/// The lowest `2 n_max + 1` periodic/antiperiodic eigenvalues.
pub fn matrix_oracle_spectrum(u: &FourierField, n_max: usize) -> Vec<f64> {
    let m = default_truncation(n_max, u);
    let mut all = block_eigenvalues(u, 0, m);
    all.extend(block_eigenvalues(u, 1, m));
    all.sort_by(|a, b| a.total_cmp(b));
    all.truncate(2 * n_max + 1);
    all
}

/// `Δ(λ)` from the periodic block through the normalized Hill determinant
/// `Δ − 2 = (2cos√λ − 2) Π_k (p_k − λ)/(p⁰_k − λ)`.
pub fn matrix_discriminant(u: &FourierField, lambdas: &[f64], max_mode: i64) -> Vec<f64> {
    let p = block_eigenvalues(u, 0, max_mode);
    let z = FourierField::zeros(u.modes(), u.grid_size()).expect("valid truncation");
    let p0 = block_eigenvalues(&z, 0, max_mode);
    lambdas
        .iter()
        .map(|&l| {
            let free = super::transfer::free_excess(l, 1.0);
            let ratio: f64 = p.iter().zip(&p0).map(|(a, b)| (a - l) / (b - l)).product();
            2.0 + free * ratio
        })
        .collect()
}

fn cos_moment(pairs: &[[f64; 2]], j: i64) -> f64 {
    // ∫_0^1 u(x) cos(jπx) dx
    let j = j.abs();
    let mut s = 0.0;
    for (i, p) in pairs.iter().enumerate() {
        let k = (i + 1) as i64;
        if j == 2 * k {
            s += SQRT_2 * p[0] * 0.5;
        }
        if j % 2 == 1 {
            let kf = k as f64;
            let jf = j as f64;
            s += SQRT_2 * p[1] * 4.0 * kf / ((4.0 * kf * kf - jf * jf) * PI);
        }
    }
    s
}

/// Dirichlet eigenvalues on `[z, z + 1]` by a sine-basis Galerkin matrix.
pub fn matrix_dirichlet(u: &FourierField, z: f64, n_max: usize, basis: usize) -> Vec<f64> {
    let shifted = u.translated(z);
    let pairs = shifted.pairs();
    let h = DMatrix::from_fn(basis, basis, |i, j| {
        let (n, m) = ((i + 1) as i64, (j + 1) as i64);
        let diag = if n == m { (PI * n as f64).powi(2) } else { 0.0 };
        diag + cos_moment(pairs, n - m) - cos_moment(pairs, n + m)
    });
    let mut ev: Vec<f64> = SymmetricEigen::new(h).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev.truncate(n_max);
    ev
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn free_operator_spectrum() {
        let u = FourierField::zeros(4, 12).unwrap();
        let ev = matrix_oracle_spectrum(&u, 4);
        assert_abs_diff_eq!(ev[0], 0.0, epsilon = 1e-12);
        for n in 1..=4 {
            let nn = (n as f64 * PI).powi(2);
            assert_abs_diff_eq!(ev[2 * n - 1], nn, epsilon = 1e-9);
            assert_abs_diff_eq!(ev[2 * n], nn, epsilon = 1e-9);
        }
    }

    #[test]
    fn weyl_count() {
        let u = FourierField::on_min_grid(4, &[(1, 0.3), (-2, 0.2)]).unwrap();
        let m = 60;
        let mut all = block_eigenvalues(&u, 0, m);
        all.extend(block_eigenvalues(&u, 1, m));
        for lam in [50.0, 400.0, 1500.0] {
            let count = all.iter().filter(|&&e| e < lam).count() as f64;
            // Each n ≥ 1 contributes two eigenvalues below (nπ)², plus λ_0.
            let weyl = 2.0 * (lam.sqrt() / PI).floor() + 1.0;
            assert!((count - weyl).abs() <= 2.0, "count {count} weyl {weyl}");
        }
    }

    #[test]
    fn cos_moment_against_quadrature() {
        let u = FourierField::on_min_grid(3, &[(1, 0.3), (-1, 0.2), (-2, -0.4), (3, 0.1)]).unwrap();
        for j in 0..9 {
            let n = 20000;
            let q: f64 = (0..n)
                .map(|i| {
                    let x = (i as f64 + 0.5) / n as f64;
                    u.eval(x) * (j as f64 * PI * x).cos()
                })
                .sum::<f64>()
                / n as f64;
            assert_abs_diff_eq!(cos_moment(u.pairs(), j), q, epsilon = 1e-8);
        }
    }

    #[test]
    fn free_dirichlet() {
        let u = FourierField::zeros(2, 6).unwrap();
        let ev = matrix_dirichlet(&u, 0.3, 3, 16);
        for n in 1..=3 {
            assert_abs_diff_eq!(ev[n - 1], (n as f64 * PI).powi(2), epsilon = 1e-10);
        }
    }
}
