//! Fundamental solutions of `-y'' + u y = λ y` on `[0, 1]`.
//!
//! The equation is integrated in the frame of the free solutions: with
//! `R(x)` the free transfer matrix and `Y = R U`, the correction `U` obeys
//! `U' = E U` where `E` is proportional to `u(x)`. Only `W = U - I` is
//! integrated, which keeps `Δ ∓ 2` accurate near band edges.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::FourierField;
use crate::ode::{integrate, OdeOptions};

/// A Hill potential `u(x) + offset`, evaluated by Horner's rule in `e^{2πix}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Potential {
    c: Vec<Complex64>,
    offset: f64,
    bound: f64,
    min: f64,
    max: f64,
}

impl Potential {
    pub fn new(u: &FourierField) -> Self {
        Self::with_offset(u, 0.0)
    }

    /// The operator-level potential `u + offset`.
    pub fn with_offset(u: &FourierField, offset: f64) -> Self {
        let c = u.to_complex();
        let bound = 2.0 * c.iter().map(|z| z.norm()).sum::<f64>();
        // Dense sampling, padded by the derivative bound over half a cell.
        let n = (8 * u.modes()).max(64);
        let vals: Vec<f64> = (0..n).map(|i| u.eval(i as f64 / n as f64)).collect();
        let slope: f64 = 2.0
            * c.iter()
                .enumerate()
                .map(|(i, z)| 2.0 * PI * (i + 1) as f64 * z.norm())
                .sum::<f64>();
        let pad = slope * 0.5 / n as f64;
        let min = vals.iter().cloned().fold(f64::INFINITY, f64::min) - pad;
        let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + pad;
        Potential {
            c,
            offset,
            bound,
            min: min.max(-bound) + offset,
            max: max.min(bound) + offset,
        }
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Lower bound for `min_x u`.
    pub fn min_value(&self) -> f64 {
        self.min
    }

    /// Upper bound for `max_x u`.
    pub fn max_value(&self) -> f64 {
        self.max
    }

    /// `Σ |coefficients|`, an upper bound for `max |u - offset|`.
    pub fn sup_bound(&self) -> f64 {
        self.bound
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.offset + self.eval_mean_free(x)
    }

    /// `u(x)` without the offset.
    pub fn eval_mean_free(&self, x: f64) -> f64 {
        if self.c.is_empty() {
            return 0.0;
        }
        let (s, cs) = (2.0 * PI * x).sin_cos();
        let z = Complex64::new(cs, s);
        let mut acc = Complex64::new(0.0, 0.0);
        for ck in self.c.iter().rev() {
            acc = acc * z + ck;
        }
        2.0 * (acc * z).re
    }

    pub fn is_zero(&self) -> bool {
        self.offset == 0.0 && self.c.iter().all(|z| z.re == 0.0 && z.im == 0.0)
    }
}

/// Free solutions `c = cos(√λ x)`, `s = sin(√λ x)/√λ` and `g = ∂s/∂λ`,
/// continued analytically through `λ = 0`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Free {
    pub c: f64,
    pub s: f64,
    pub g: f64,
}

pub(crate) fn free(lambda: f64, x: f64) -> Free {
    let t = lambda * x * x;
    let (c, s) = if lambda > 0.0 {
        let k = lambda.sqrt();
        let (sn, cs) = (k * x).sin_cos();
        (cs, sn / k)
    } else if lambda < 0.0 {
        let k = (-lambda).sqrt();
        ((k * x).cosh(), (k * x).sinh() / k)
    } else {
        (1.0, x)
    };
    let g = if t.abs() < 0.5 {
        // Σ_{j≥1} j (-λ)^{j-1} (-1) x^{2j+1} / (2j+1)!
        let mut term = -x * x * x / 6.0;
        let mut sum = term;
        for j in 1..30 {
            let jf = j as f64;
            term *= -t * (jf + 1.0) / (jf * (2.0 * jf + 2.0) * (2.0 * jf + 3.0));
            sum += term;
            if term.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        sum
    } else {
        (x * c - s) / (2.0 * lambda)
    };
    Free { c, s, g }
}

/// `σ·2cos√λ − 2` without cancellation.
pub(crate) fn free_excess(lambda: f64, sigma: f64) -> f64 {
    if lambda >= 0.0 {
        let h = 0.5 * lambda.sqrt();
        if sigma > 0.0 {
            -4.0 * h.sin().powi(2)
        } else {
            -4.0 * h.cos().powi(2)
        }
    } else {
        let h = 0.5 * (-lambda).sqrt();
        if sigma > 0.0 {
            4.0 * h.sinh().powi(2)
        } else {
            -4.0 * h.cosh().powi(2)
        }
    }
}

/// Values of the fundamental solutions at the end of the interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferData {
    pub lambda: f64,
    pub y1: f64,
    pub y1p: f64,
    pub y2: f64,
    pub y2p: f64,
    /// `∂/∂λ` of `(y1, y1p, y2, y2p)` when requested.
    pub d_lambda: Option<[f64; 4]>,
    /// `Δ − 2` and `−Δ − 2` evaluated without cancellation.
    pub excess: [f64; 2],
}

impl TransferData {
    pub fn wronskian(&self) -> f64 {
        self.y1 * self.y2p - self.y1p * self.y2
    }

    pub fn delta(&self) -> f64 {
        self.y1 + self.y2p
    }

    pub fn delta_dot(&self) -> Option<f64> {
        self.d_lambda.map(|d| d[0] + d[3])
    }
}

#[inline]
fn coupling(f: &Free, u: f64) -> [f64; 4] {
    [-u * f.c * f.s, -u * f.s * f.s, u * f.c * f.c, u * f.c * f.s]
}

#[inline]
fn coupling_dlambda(f: &Free, u: f64, x: f64) -> [f64; 4] {
    let a = 0.5 * x * f.s * f.s - f.c * f.g;
    [u * a, -2.0 * u * f.s * f.g, -u * x * f.c * f.s, -u * a]
}

#[inline]
fn mat_mul(a: &[f64; 4], b: &[f64; 4]) -> [f64; 4] {
    [
        a[0] * b[0] + a[1] * b[2],
        a[0] * b[1] + a[1] * b[3],
        a[2] * b[0] + a[3] * b[2],
        a[2] * b[1] + a[3] * b[3],
    ]
}

/// Integrates to `x_end`, returning `(W, U_λ)`; `U_λ` is zero when not
/// requested.
fn correction(pot: &Potential, lambda: f64, x_end: f64, with_d: bool, opts: &OdeOptions) -> Result<([f64; 4], [f64; 4])> {
    let underflow = |e: crate::ode::StepUnderflow| Error::StepUnderflow { x: e.x, lambda };
    if pot.c.iter().all(|z| z.re == 0.0 && z.im == 0.0) {
        return Ok(([0.0; 4], [0.0; 4]));
    }
    if !with_d {
        let w = integrate(
            |x, w: &[f64; 4], d: &mut [f64; 4]| {
                let e = coupling(&free(lambda, x), pot.eval_mean_free(x));
                let uu = [1.0 + w[0], w[1], w[2], 1.0 + w[3]];
                *d = mat_mul(&e, &uu);
            },
            0.0,
            x_end,
            [0.0; 4],
            opts,
        )
        .map_err(underflow)?;
        return Ok((w, [0.0; 4]));
    }
    let y = integrate(
        |x, y: &[f64; 8], d: &mut [f64; 8]| {
            let fr = free(lambda, x);
            let u = pot.eval_mean_free(x);
            let e = coupling(&fr, u);
            let el = coupling_dlambda(&fr, u, x);
            let uu = [1.0 + y[0], y[1], y[2], 1.0 + y[3]];
            let ul = [y[4], y[5], y[6], y[7]];
            let dw = mat_mul(&e, &uu);
            let a = mat_mul(&el, &uu);
            let b = mat_mul(&e, &ul);
            d[..4].copy_from_slice(&dw);
            for i in 0..4 {
                d[4 + i] = a[i] + b[i];
            }
        },
        0.0,
        x_end,
        [0.0; 8],
        opts,
    )
    .map_err(underflow)?;
    Ok(([y[0], y[1], y[2], y[3]], [y[4], y[5], y[6], y[7]]))
}

/// Fundamental matrix entries at `x_end` (normally 1).
pub fn transfer_at(pot: &Potential, lambda: f64, x_end: f64, with_d: bool, opts: &OdeOptions) -> Result<TransferData> {
    if !lambda.is_finite() {
        return Err(Error::NonFinite(format!("spectral parameter {lambda}")));
    }
    // The offset is a pure spectral shift.
    let lam = lambda - pot.offset;
    let (w, ul) = correction(pot, lam, x_end, with_d, opts)?;
    let fr = free(lam, x_end);
    let r = [fr.c, fr.s, -lam * fr.s, fr.c];
    let rw = mat_mul(&r, &w);
    let y = [r[0] + rw[0], r[1] + rw[1], r[2] + rw[2], r[3] + rw[3]];
    let tr_rw = rw[0] + rw[3];
    let excess = if x_end == 1.0 {
        // Δ² − 4 = (y1 − y2')² + 4 y2 y1' keeps the error proportional to the
        // small entries near a narrow gap; the free part of y1 − y2' cancels
        // exactly.
        let split = rw[0] - rw[3];
        let disc = split * split + 4.0 * y[1] * y[2];
        let d = y[0] + y[3];
        [
            if d > 0.0 { disc / (d + 2.0) } else { free_excess(lam, 1.0) + tr_rw },
            if d < 0.0 { disc / (2.0 - d) } else { free_excess(lam, -1.0) - tr_rw },
        ]
    } else {
        let d = y[0] + y[3];
        [d - 2.0, -d - 2.0]
    };
    let d_lambda = if with_d {
        let rl = [-0.5 * fr.s, fr.g, -fr.s - lam * fr.g, -0.5 * fr.s];
        let uu = [1.0 + w[0], w[1], w[2], 1.0 + w[3]];
        let a = mat_mul(&rl, &uu);
        let b = mat_mul(&r, &ul);
        // Matrix order is (y1, y2, y1', y2'); reported order is (y1, y1', y2, y2').
        Some([a[0] + b[0], a[2] + b[2], a[1] + b[1], a[3] + b[3]])
    } else {
        None
    };
    Ok(TransferData {
        lambda,
        y1: y[0],
        y2: y[1],
        y1p: y[2],
        y2p: y[3],
        d_lambda,
        excess,
    })
}

/// Fundamental solutions at `x = 1`.
pub fn transfer(u: &FourierField, lambda: f64, with_d: bool) -> Result<TransferData> {
    transfer_at(&Potential::new(u), lambda, 1.0, with_d, &OdeOptions::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn e1(a: f64) -> FourierField {
        FourierField::on_min_grid(4, &[(1, a)]).unwrap()
    }

    #[test]
    fn free_positive_lambda() {
        let u = FourierField::zeros(4, 12).unwrap();
        for lam in [0.0, 1.0, 9.87, 50.0, 400.0] {
            let t = transfer(&u, lam, true).unwrap();
            assert_abs_diff_eq!(t.y1, lam.sqrt().cos(), epsilon = 1e-14);
            assert_abs_diff_eq!(t.y2p, lam.sqrt().cos(), epsilon = 1e-14);
        }
    }

    #[test]
    fn free_negative_lambda() {
        let u = FourierField::zeros(4, 12).unwrap();
        let t = transfer(&u, -3.0, false).unwrap();
        assert_abs_diff_eq!(t.y1, 3f64.sqrt().cosh(), epsilon = 1e-13);
    }

    #[test]
    fn wronskian_is_one() {
        let u = e1(0.3);
        for lam in [-5.0, 0.0, 50.0] {
            let t = transfer(&u, lam, false).unwrap();
            assert_abs_diff_eq!(t.wronskian(), 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn wronskian_along_the_interval() {
        let pot = Potential::new(&FourierField::on_min_grid(4, &[(1, 0.3), (-2, 0.2)]).unwrap());
        for i in 1..=10 {
            let x = i as f64 / 10.0;
            let t = transfer_at(&pot, 30.0, x, false, &OdeOptions::default()).unwrap();
            assert_abs_diff_eq!(t.wronskian(), 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn direct_integration_agrees() {
        // Integrate the original second-order system as an independent check.
        let u = FourierField::on_min_grid(4, &[(1, 0.3), (-3, -0.15)]).unwrap();
        let pot = Potential::new(&u);
        for lam in [-2.0, 3.0, 40.0, 170.0] {
            let y = integrate(
                |x, y: &[f64; 4], d: &mut [f64; 4]| {
                    let q = u.eval(x) - lam;
                    d[0] = y[2];
                    d[1] = y[3];
                    d[2] = q * y[0];
                    d[3] = q * y[1];
                },
                0.0,
                1.0,
                [1.0, 0.0, 0.0, 1.0],
                &OdeOptions::default(),
            )
            .unwrap();
            let t = transfer_at(&pot, lam, 1.0, false, &OdeOptions::default()).unwrap();
            assert_abs_diff_eq!(t.y1, y[0], epsilon = 1e-10);
            assert_abs_diff_eq!(t.y2, y[1], epsilon = 1e-10);
            assert_abs_diff_eq!(t.y1p, y[2], epsilon = 1e-9);
            assert_abs_diff_eq!(t.y2p, y[3], epsilon = 1e-10);
        }
    }

    #[test]
    fn lambda_derivative_matches_central_difference() {
        let u = FourierField::on_min_grid(4, &[(1, 0.3), (-2, 0.1)]).unwrap();
        for lam in [-1.0, 0.0, 1e-3, 12.0, 90.0] {
            let t = transfer(&u, lam, true).unwrap();
            let h = 1e-4 * (1.0 + lam.abs());
            let p = transfer(&u, lam + h, false).unwrap();
            let m = transfer(&u, lam - h, false).unwrap();
            let d = t.d_lambda.unwrap();
            let fd = [
                (p.y1 - m.y1) / (2.0 * h),
                (p.y1p - m.y1p) / (2.0 * h),
                (p.y2 - m.y2) / (2.0 * h),
                (p.y2p - m.y2p) / (2.0 * h),
            ];
            for i in 0..4 {
                assert_abs_diff_eq!(d[i], fd[i], epsilon = 1e-6 * (1.0 + fd[i].abs()));
            }
        }
    }

    #[test]
    fn excess_agrees_with_delta() {
        let u = e1(0.2);
        for lam in [-0.5, 2.0, 9.8, 39.0] {
            let t = transfer(&u, lam, false).unwrap();
            assert_abs_diff_eq!(t.excess[0], t.delta() - 2.0, epsilon = 1e-12);
            assert_abs_diff_eq!(t.excess[1], -t.delta() - 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn offset_is_spectral_shift() {
        let u = e1(0.2);
        let a = transfer_at(&Potential::with_offset(&u, 1.0), 11.0, 1.0, false, &OdeOptions::default()).unwrap();
        let b = transfer(&u, 10.0, false).unwrap();
        assert_abs_diff_eq!(a.delta(), b.delta(), epsilon = 1e-14);
    }

    #[test]
    fn horner_matches_direct_sum() {
        let u = FourierField::on_min_grid(6, &[(1, 0.3), (-2, 0.2), (6, -0.05), (-5, 0.4)]).unwrap();
        let p = Potential::new(&u);
        for i in 0..17 {
            let x = i as f64 / 17.0;
            assert_abs_diff_eq!(p.eval(x), u.eval(x), epsilon = 1e-14);
            assert!(p.eval(x) >= p.min_value() && p.eval(x) <= p.max_value());
        }
    }

    #[test]
    fn free_g_series_matches_closed_form() {
        for lam in [-0.3, -1e-6, 1e-6, 0.3, 0.49] {
            let f = free(lam, 1.0);
            let k = lam.abs().sqrt();
            let closed = if lam > 0.0 {
                ((k).cos() - (k).sin() / k) / (2.0 * lam)
            } else {
                ((k).cosh() - (k).sinh() / k) / (2.0 * lam)
            };
            assert_abs_diff_eq!(f.g, closed, epsilon = 1e-9);
        }
    }
}
