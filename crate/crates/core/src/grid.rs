//! Zero-mean real periodic fields in the `√2 cos / √2 sin` basis.
//!
//! A [`FourierField`] stores the pairs `(û_k, û_{-k})`, `k = 1..=K`, of
//!
//! ```text
//! u(x) = Σ_k û_k √2 cos 2πkx + û_{-k} √2 sin 2πkx
//! ```
//!
//! together with the size `N` of the collocation grid used for pointwise
//! products. `N ≥ 3K` keeps cubic products alias free.

use std::cell::RefCell;
use std::f64::consts::{PI, SQRT_2};
use std::fmt;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative size of a sample mean that [`analyze`] reports as a warning.
pub const MEAN_WARN_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid of {grid} points cannot carry {modes} modes alias free (need N >= {required}, N even)")]
    GridTooSmall {
        modes: usize,
        grid: usize,
        required: usize,
    },
    #[error("field needs at least one mode")]
    NoModes,
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("sample count {0} is not even")]
    OddSampleCount(usize),
    #[error("Sobolev index p = {0} is negative")]
    NegativeIndex(f64),
    #[error("truncation mismatch: ({0}, {1}) vs ({2}, {3})")]
    Mismatch(usize, usize, usize, usize),
    #[error("mode index {index} outside 1..={modes}")]
    ModeOutOfRange { index: i64, modes: usize },
    #[error("malformed field JSON: {0}")]
    Json(String),
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

pub(crate) fn fft_forward(buf: &mut [Complex64]) {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(buf.len()).process(buf));
}

pub(crate) fn fft_inverse(buf: &mut [Complex64]) {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(buf.len()).process(buf));
}

/// Smallest even grid strictly above `3 * modes`, which keeps quadratic
/// products exact on the retained modes and cubic means exact.
pub fn min_grid(modes: usize) -> usize {
    let n = 3 * modes + 1;
    n + n % 2
}

fn check_grid(modes: usize, grid: usize) -> Result<(), GridError> {
    if modes == 0 {
        return Err(GridError::NoModes);
    }
    if grid < 3 * modes || grid % 2 == 1 {
        return Err(GridError::GridTooSmall {
            modes,
            grid,
            required: 3 * modes + (3 * modes) % 2,
        });
    }
    Ok(())
}

/// Result of an operation that may produce a constant component; the constant
/// is projected out and reported.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanFree {
    pub field: FourierField,
    pub mean: f64,
}

#[derive(Clone, PartialEq)]
pub struct FourierField {
    coeffs: Vec<[f64; 2]>,
    grid: usize,
}

impl fmt::Debug for FourierField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FourierField")
            .field("K", &self.modes())
            .field("N", &self.grid)
            .field("coeffs", &self.coeffs)
            .finish()
    }
}

impl FourierField {
    pub fn zeros(modes: usize, grid: usize) -> Result<Self, GridError> {
        check_grid(modes, grid)?;
        Ok(Self {
            coeffs: vec![[0.0; 2]; modes],
            grid,
        })
    }

    pub fn from_pairs(coeffs: Vec<[f64; 2]>, grid: usize) -> Result<Self, GridError> {
        check_grid(coeffs.len(), grid)?;
        Ok(Self { coeffs, grid })
    }

    /// Builds a field from signed mode indices: `k > 0` addresses `û_k`
    /// (cosine), `k < 0` addresses `û_{-|k|}` (sine).
    pub fn with_modes(modes: usize, grid: usize, entries: &[(i64, f64)]) -> Result<Self, GridError> {
        let mut f = Self::zeros(modes, grid)?;
        for &(k, v) in entries {
            f.set(k, v)?;
        }
        Ok(f)
    }

    /// Field with `K` modes on the smallest admissible grid.
    pub fn on_min_grid(modes: usize, entries: &[(i64, f64)]) -> Result<Self, GridError> {
        Self::with_modes(modes, min_grid(modes), entries)
    }

    pub fn modes(&self) -> usize {
        self.coeffs.len()
    }

    pub fn grid_size(&self) -> usize {
        self.grid
    }

    pub fn pairs(&self) -> &[[f64; 2]] {
        &self.coeffs
    }

    pub fn pairs_mut(&mut self) -> &mut [[f64; 2]] {
        &mut self.coeffs
    }

    fn slot(&self, k: i64) -> Result<(usize, usize), GridError> {
        let m = k.unsigned_abs() as usize;
        if k == 0 || m > self.modes() {
            return Err(GridError::ModeOutOfRange {
                index: k,
                modes: self.modes(),
            });
        }
        Ok((m - 1, if k > 0 { 0 } else { 1 }))
    }

    /// Coefficient of `e_k` (signed index convention of [`Self::with_modes`]).
    pub fn get(&self, k: i64) -> f64 {
        self.slot(k).map(|(i, j)| self.coeffs[i][j]).unwrap_or(0.0)
    }

    pub fn set(&mut self, k: i64, v: f64) -> Result<(), GridError> {
        let (i, j) = self.slot(k)?;
        self.coeffs[i][j] = v;
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|p| p[0] == 0.0 && p[1] == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|p| p[0].is_finite() && p[1].is_finite())
    }

    /// Point values `u(i/N)`, `i = 0..N`.
    pub fn synthesize(&self) -> Vec<f64> {
        synthesize_unchecked(&self.coeffs, self.grid)
    }

    /// Direct evaluation at an arbitrary point (no FFT).
    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let a = 2.0 * PI * (i + 1) as f64 * x;
                SQRT_2 * (p[0] * a.cos() + p[1] * a.sin())
            })
            .sum()
    }

    /// `||u||_p`; `p < 0` is rejected.
    pub fn sobolev_norm(&self, p: f64) -> Result<f64, GridError> {
        if p < 0.0 || p.is_nan() {
            return Err(GridError::NegativeIndex(p));
        }
        Ok(self.sobolev_norm_sq_unchecked(p).sqrt())
    }

    pub(crate) fn sobolev_norm_sq_unchecked(&self, p: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| (2.0 * PI * (i + 1) as f64).powf(2.0 * p) * (c[0] * c[0] + c[1] * c[1]))
            .sum()
    }

    /// `L²` norm, `||u||_0`.
    pub fn l2_norm(&self) -> f64 {
        self.sobolev_norm_sq_unchecked(0.0).sqrt()
    }

    /// Spectral derivative of the given order.
    pub fn derivative(&self, order: u32) -> FourierField {
        let mut out = self.clone();
        for _ in 0..order {
            for (i, c) in out.coeffs.iter_mut().enumerate() {
                let w = 2.0 * PI * (i + 1) as f64;
                *c = [w * c[1], -w * c[0]];
            }
        }
        out
    }

    /// `L²` inner product.
    pub fn inner(&self, other: &FourierField) -> f64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a[0] * b[0] + a[1] * b[1])
            .sum()
    }

    fn check_same(&self, other: &FourierField) -> Result<(), GridError> {
        if self.modes() != other.modes() || self.grid != other.grid {
            return Err(GridError::Mismatch(
                self.modes(),
                self.grid,
                other.modes(),
                other.grid,
            ));
        }
        Ok(())
    }

    /// Pointwise product on the grid, truncated back to `K` modes.
    pub fn product_dealiased(&self, other: &FourierField) -> Result<MeanFree, GridError> {
        self.check_same(other)?;
        let a = self.synthesize();
        let b = other.synthesize();
        let prod: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
        Ok(analyze_unchecked(&prod, self.modes(), self.grid))
    }

    /// Applies `g` pointwise on the grid and projects back (mean removed).
    pub fn map_pointwise(&self, g: impl Fn(f64) -> f64) -> MeanFree {
        let vals: Vec<f64> = self.synthesize().into_iter().map(g).collect();
        analyze_unchecked(&vals, self.modes(), self.grid)
    }

    pub fn scaled(&self, s: f64) -> FourierField {
        let mut out = self.clone();
        out.scale(s);
        out
    }

    pub fn scale(&mut self, s: f64) {
        for c in &mut self.coeffs {
            c[0] *= s;
            c[1] *= s;
        }
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &FourierField) -> Result<(), GridError> {
        if self.modes() != other.modes() {
            return Err(GridError::Mismatch(
                self.modes(),
                self.grid,
                other.modes(),
                other.grid,
            ));
        }
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            a[0] += s * b[0];
            a[1] += s * b[1];
        }
        Ok(())
    }

    /// The translate `x ↦ u(x + s)`.
    pub fn translated(&self, s: f64) -> FourierField {
        let mut out = self.clone();
        for (i, c) in out.coeffs.iter_mut().enumerate() {
            let th = 2.0 * PI * (i + 1) as f64 * s;
            let (sn, cs) = th.sin_cos();
            *c = [c[0] * cs + c[1] * sn, -c[0] * sn + c[1] * cs];
        }
        out
    }

    /// Re-embeds the field with a different truncation; modes beyond the new
    /// cutoff are dropped.
    pub fn resized(&self, modes: usize, grid: usize) -> Result<FourierField, GridError> {
        let mut out = FourierField::zeros(modes, grid)?;
        for (dst, src) in out.coeffs.iter_mut().zip(&self.coeffs) {
            *dst = *src;
        }
        Ok(out)
    }

    /// Complex exponential coefficients `c_k`, `k = 1..=K`, with
    /// `u = Σ_{k≠0} c_k e^{2πikx}` and `c_{-k} = conj(c_k)`.
    pub fn to_complex(&self) -> Vec<Complex64> {
        self.coeffs
            .iter()
            .map(|c| Complex64::new(c[0], -c[1]) / SQRT_2)
            .collect()
    }

    pub fn from_complex(c: &[Complex64], grid: usize) -> Result<FourierField, GridError> {
        let coeffs = c
            .iter()
            .map(|z| [SQRT_2 * z.re, -SQRT_2 * z.im])
            .collect();
        FourierField::from_pairs(coeffs, grid)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&FieldJson::from(self)).expect("field serializes")
    }

    pub fn from_json(s: &str) -> Result<FourierField, GridError> {
        let raw: FieldJson = serde_json::from_str(s).map_err(|e| GridError::Json(e.to_string()))?;
        raw.try_into()
    }
}

/// On-disk form: `{"K": .., "N": .., "coeffs": [[k, û_k, û_{-k}], ..]}`.
#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FieldJson {
    #[serde(rename = "K")]
    pub modes: usize,
    #[serde(rename = "N")]
    pub grid: usize,
    pub coeffs: Vec<(usize, f64, f64)>,
}

impl From<&FourierField> for FieldJson {
    fn from(f: &FourierField) -> Self {
        FieldJson {
            modes: f.modes(),
            grid: f.grid,
            coeffs: f
                .coeffs
                .iter()
                .enumerate()
                .map(|(i, c)| (i + 1, c[0], c[1]))
                .collect(),
        }
    }
}

impl TryFrom<FieldJson> for FourierField {
    type Error = GridError;

    fn try_from(raw: FieldJson) -> Result<Self, GridError> {
        let mut f = FourierField::zeros(raw.modes, raw.grid)?;
        for (k, a, b) in raw.coeffs {
            if k == 0 || k > raw.modes {
                return Err(GridError::ModeOutOfRange {
                    index: k as i64,
                    modes: raw.modes,
                });
            }
            f.coeffs[k - 1] = [a, b];
        }
        Ok(f)
    }
}

impl Serialize for FourierField {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        FieldJson::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for FourierField {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = FieldJson::deserialize(d)?;
        raw.try_into().map_err(serde::de::Error::custom)
    }
}

/// Point values on the uniform grid `x_i = i/N`.
pub fn synthesize(coeffs: &[[f64; 2]], grid: usize) -> Result<Vec<f64>, GridError> {
    check_grid(coeffs.len(), grid)?;
    Ok(synthesize_unchecked(coeffs, grid))
}

fn synthesize_unchecked(coeffs: &[[f64; 2]], grid: usize) -> Vec<f64> {
    let mut buf = vec![Complex64::new(0.0, 0.0); grid];
    for (i, c) in coeffs.iter().enumerate() {
        let z = Complex64::new(c[0], -c[1]) / SQRT_2;
        buf[i + 1] = z;
        buf[grid - i - 1] = z.conj();
    }
    fft_inverse(&mut buf);
    buf.into_iter().map(|z| z.re).collect()
}

/// Projects samples onto the first `modes` basis pairs. The sample mean is
/// discarded; a warning is logged when it is not negligible.
pub fn analyze(samples: &[f64], modes: usize) -> Result<MeanFree, GridError> {
    let n = samples.len();
    if n % 2 == 1 {
        return Err(GridError::OddSampleCount(n));
    }
    check_grid(modes, n)?;
    if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
        return Err(GridError::NonFinite(i));
    }
    let out = analyze_unchecked(samples, modes, n);
    let scale = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if out.mean.abs() > MEAN_WARN_TOL * scale.max(f64::MIN_POSITIVE) {
        log::warn!("analyze: discarding sample mean {:e}", out.mean);
    }
    Ok(out)
}

pub(crate) fn analyze_unchecked(samples: &[f64], modes: usize, grid: usize) -> MeanFree {
    let n = samples.len();
    let mut buf: Vec<Complex64> = samples.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_forward(&mut buf);
    let inv = 1.0 / n as f64;
    let coeffs = (1..=modes)
        .map(|k| {
            let c = buf[k] * inv;
            [SQRT_2 * c.re, -SQRT_2 * c.im]
        })
        .collect();
    MeanFree {
        field: FourierField { coeffs, grid },
        mean: buf[0].re * inv,
    }
}

/// Sequence of mode pairs in the weighted space `h^p`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeVector {
    pub pairs: Vec<[f64; 2]>,
    pub p: f64,
}

impl ModeVector {
    /// `|v|_p = (Σ_j (2πj)^{2p+1} |v_j|²)^{1/2}`.
    pub fn norm(&self) -> f64 {
        self.pairs
            .iter()
            .enumerate()
            .map(|(i, v)| (2.0 * PI * (i + 1) as f64).powf(2.0 * self.p + 1.0) * (v[0] * v[0] + v[1] * v[1]))
            .sum::<f64>()
            .sqrt()
    }

    /// Image of `u` under the linearization at the origin,
    /// `v_s = |2πs|^{-1/2} û_s`.
    pub fn linearized(u: &FourierField, p: f64) -> ModeVector {
        let pairs = u
            .pairs()
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let w = (2.0 * PI * (i + 1) as f64).sqrt().recip();
                [w * c[0], w * c[1]]
            })
            .collect();
        ModeVector { pairs, p }
    }

    pub fn is_finite(&self) -> bool {
        self.pairs.iter().all(|v| v[0].is_finite() && v[1].is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn zero_field_synthesizes_to_zero() {
        let u = FourierField::zeros(8, 24).unwrap();
        assert!(u.synthesize().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn basis_cosine_samples() {
        let u = FourierField::with_modes(4, 16, &[(1, 1.0)]).unwrap();
        for (i, v) in u.synthesize().iter().enumerate() {
            let x = i as f64 / 16.0;
            assert_abs_diff_eq!(*v, SQRT_2 * (2.0 * PI * x).cos(), epsilon = 1e-14);
        }
    }

    #[test]
    fn mixed_modes_match_direct_evaluation() {
        let (a, b) = (0.37, -1.21);
        let u = FourierField::with_modes(8, 64, &[(2, a), (-3, b)]).unwrap();
        for (i, v) in u.synthesize().iter().enumerate() {
            let x = i as f64 / 64.0;
            let direct = a * SQRT_2 * (4.0 * PI * x).cos() + b * SQRT_2 * (6.0 * PI * x).sin();
            assert_abs_diff_eq!(*v, direct, epsilon = 1e-13);
        }
    }

    #[test]
    fn grid_too_small_is_rejected() {
        let err = FourierField::zeros(10, 20).unwrap_err();
        assert_eq!(
            err,
            GridError::GridTooSmall {
                modes: 10,
                grid: 20,
                required: 30
            }
        );
        assert!(synthesize(&[[0.0; 2]; 4], 11).is_err());
    }

    #[test]
    fn constant_samples_project_to_zero() {
        let out = analyze(&[2.5; 32], 8).unwrap();
        assert!(out.field.is_zero());
        assert_abs_diff_eq!(out.mean, 2.5, epsilon = 1e-15);
    }

    #[test]
    fn sine_samples_recover_negative_mode() {
        let s: Vec<f64> = (0..32)
            .map(|i| SQRT_2 * (2.0 * PI * i as f64 / 32.0).sin())
            .collect();
        let out = analyze(&s, 8).unwrap().field;
        assert_abs_diff_eq!(out.get(-1), 1.0, epsilon = 1e-13);
        for k in 1..=8i64 {
            if k != 1 {
                assert_abs_diff_eq!(out.get(k), 0.0, epsilon = 1e-13);
                assert_abs_diff_eq!(out.get(-k), 0.0, epsilon = 1e-13);
            }
        }
        assert_abs_diff_eq!(out.get(1), 0.0, epsilon = 1e-13);
    }

    #[test]
    fn analyze_rejects_non_finite_and_odd_input() {
        let mut s = vec![0.0; 32];
        s[5] = f64::NAN;
        assert_eq!(analyze(&s, 8).unwrap_err(), GridError::NonFinite(5));
        assert!(matches!(analyze(&[0.0; 31], 8), Err(GridError::OddSampleCount(31))));
    }

    #[test]
    fn sobolev_norms_of_first_mode() {
        let u = FourierField::with_modes(4, 12, &[(1, 1.0)]).unwrap();
        assert_abs_diff_eq!(u.sobolev_norm(0.0).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(u.sobolev_norm(1.0).unwrap(), 2.0 * PI, epsilon = 1e-13);
        assert_eq!(FourierField::zeros(4, 12).unwrap().sobolev_norm(2.5).unwrap(), 0.0);
        assert!(u.sobolev_norm(-0.5).is_err());
    }

    #[test]
    fn derivative_rules() {
        let u = FourierField::with_modes(4, 12, &[(1, 1.0)]).unwrap();
        let du = u.derivative(1);
        assert_abs_diff_eq!(du.get(1), 0.0);
        assert_abs_diff_eq!(du.get(-1), -2.0 * PI, epsilon = 1e-14);

        let v = FourierField::with_modes(4, 12, &[(3, 1.0)]).unwrap();
        let d3 = v.derivative(3);
        let mag = (d3.get(3).powi(2) + d3.get(-3).powi(2)).sqrt();
        assert_abs_diff_eq!(mag, (6.0 * PI).powi(3), epsilon = 1e-9);

        let w = FourierField::with_modes(6, 18, &[(1, 0.3), (-2, 0.7), (5, -0.2)]).unwrap();
        let twice = w.derivative(1).derivative(1);
        let direct = w.derivative(2);
        for (a, b) in twice.pairs().iter().zip(direct.pairs()) {
            assert_abs_diff_eq!(a[0], b[0], epsilon = 1e-13 * (1.0 + b[0].abs()));
            assert_abs_diff_eq!(a[1], b[1], epsilon = 1e-13 * (1.0 + b[1].abs()));
        }
    }

    #[test]
    fn product_of_cosines() {
        let f = FourierField::with_modes(4, 12, &[(1, 1.0)]).unwrap();
        let z = FourierField::zeros(4, 12).unwrap();
        assert!(f.product_dealiased(&z).unwrap().field.is_zero());
        // (√2 cos 2πx)² = 1 + cos 4πx
        let p = f.product_dealiased(&f).unwrap();
        assert_abs_diff_eq!(p.mean, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(p.field.get(2), 1.0 / SQRT_2, epsilon = 1e-14);
        assert_abs_diff_eq!(p.field.get(1), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn product_mismatch_rejected() {
        let a = FourierField::zeros(4, 12).unwrap();
        let b = FourierField::zeros(4, 16).unwrap();
        assert!(a.product_dealiased(&b).is_err());
    }

    #[test]
    fn json_roundtrip_is_bit_exact() {
        let u = FourierField::with_modes(5, 16, &[(1, 0.1), (-2, 1.0 / 3.0), (5, -7.25e-17)]).unwrap();
        let back = FourierField::from_json(&u.to_json()).unwrap();
        assert_eq!(u, back);
        assert!(FourierField::from_json(r#"{"K":2,"N":6,"coeffs":[[3,1,0]]}"#).is_err());
        assert!(FourierField::from_json(r#"{"K":2,"N":6,"coeffs":[],"x":1}"#).is_err());
    }

    #[test]
    fn translation_matches_direct_shift() {
        let u = FourierField::with_modes(4, 12, &[(1, 0.4), (-3, -0.2), (2, 0.1)]).unwrap();
        let v = u.translated(0.23);
        for i in 0..10 {
            let x = i as f64 / 10.0;
            assert_abs_diff_eq!(v.eval(x), u.eval(x + 0.23), epsilon = 1e-13);
        }
    }

    fn arb_field() -> impl Strategy<Value = FourierField> {
        prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..12).prop_map(|v| {
            let k = v.len();
            FourierField::from_pairs(v.into_iter().map(|(a, b)| [a, b]).collect(), min_grid(k) + 2)
                .unwrap()
        })
    }

    proptest! {
        #[test]
        fn roundtrip_identity(u in arb_field()) {
            let back = analyze(&u.synthesize(), u.modes()).unwrap();
            for (a, b) in u.pairs().iter().zip(back.field.pairs()) {
                prop_assert!((a[0] - b[0]).abs() < 1e-13 && (a[1] - b[1]).abs() < 1e-13);
            }
            prop_assert!(back.mean.abs() < 1e-14);
        }

        #[test]
        fn parseval(u in arb_field()) {
            let s = u.synthesize();
            let quad = s.iter().map(|v| v * v).sum::<f64>() / s.len() as f64;
            prop_assert!((quad - u.inner(&u)).abs() < 1e-12);
        }

        #[test]
        fn derivative_is_antisymmetric(u in arb_field(), v in arb_field()) {
            let k = u.modes().min(v.modes());
            let u = u.resized(k, min_grid(k)).unwrap();
            let v = v.resized(k, min_grid(k)).unwrap();
            let lhs = u.derivative(1).inner(&v);
            let rhs = -u.inner(&v.derivative(1));
            prop_assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()));
        }

        #[test]
        fn product_integral_matches_quadrature(u in arb_field()) {
            let v = u.translated(0.1).derivative(1);
            let s: f64 = u.synthesize().iter().zip(v.synthesize()).map(|(a, b)| a * b).sum::<f64>()
                / u.grid_size() as f64;
            prop_assert!((s - u.inner(&v)).abs() < 1e-12 * (1.0 + s.abs()));
            let p = u.product_dealiased(&v).unwrap();
            prop_assert!((p.mean - s).abs() < 1e-12 * (1.0 + s.abs()));
        }
    }
}
