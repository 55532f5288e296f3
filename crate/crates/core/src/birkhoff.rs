//! Action variables and related functionals.
//!
//! The action of gap `n` is
//!
//! ```text
//! I_n = (2/π) ∫_{gap n} arccosh(|Δ(λ)|/2) dλ,
//! ```
//!
//! which is the `λ Δ̇ / √(Δ² − 4)` form integrated by parts (the boundary
//! terms vanish at the gap edges). Both forms are implemented; the first one
//! is used by default because its integrand is well conditioned near the
//! edges.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{FourierField, ModeVector};
use crate::hill::{periodic_spectrum_with, Discriminant, Hill, HillSpectrum, PeriodicSpectrum, SpectrumTolerances};
use crate::kdvflow::{evolve_with, hamiltonian, Perturbation};

/// Relative convergence target of the action quadrature.
pub const ACTION_RTOL: f64 = 1e-9;
/// Absolute floor per unit gap index; the discriminant noise makes
/// `I_n` uncertain at roughly `2πn·1e-14`.
pub const ACTION_ATOL: f64 = 1e-12;
const MAX_NODES: usize = 1 << 12;

fn sigma_index(n: usize) -> usize {
    if n % 2 == 0 {
        0
    } else {
        1
    }
}

/// `arccosh(1 + d/2)` for `d ≥ 0`, accurate for small `d`.
fn arccosh_excess(d: f64) -> f64 {
    let y = 0.5 * d.max(0.0);
    (y + (y * (y + 2.0)).sqrt()).ln_1p()
}

/// `(2/π) ∫_lo^hi h(λ) dλ` with `λ = m + r sin θ` and the trapezoid rule on
/// `θ_j = −π/2 + πj/L`, `j = 1..L−1`; `node(λ, |cos θ|)` must return
/// `h(λ)|cos θ|`, and `ends` is the sum of its limits at `θ = ±π/2`.
/// Doubles `L` until the sum settles to `rtol` relative or to an absolute
/// floor set by the discriminant noise of gap `gap`.
fn gap_quadrature<F>(lo: f64, hi: f64, gap: usize, rtol: f64, ends: f64, node: F) -> Result<f64>
where
    F: Fn(f64, f64) -> Result<f64> + Sync,
{
    let mid = 0.5 * (lo + hi);
    let r = 0.5 * (hi - lo);
    let eval = |l: usize, j: usize| -> Result<f64> {
        let th = -0.5 * PI + PI * j as f64 / l as f64;
        node(mid + r * th.sin(), th.cos().abs())
    };
    let mut l = 8usize;
    let mut sum: f64 =
        0.5 * ends + (1..l).into_par_iter().map(|j| eval(l, j)).collect::<Result<Vec<_>>>()?.iter().sum::<f64>();
    let mut est = 2.0 * r / l as f64 * sum;
    loop {
        let nl = 2 * l;
        // New nodes are the odd indices of the refined rule.
        let add: f64 = (0..l)
            .into_par_iter()
            .map(|i| eval(nl, 2 * i + 1))
            .collect::<Result<Vec<_>>>()?
            .iter()
            .sum();
        sum += add;
        l = nl;
        let next = 2.0 * r / l as f64 * sum;
        let change = (next - est).abs();
        est = next;
        if change <= rtol * est.abs() + ACTION_ATOL * gap as f64 {
            return Ok(est);
        }
        if l >= MAX_NODES {
            return Err(Error::Quadrature { gap, change: change / est.abs().max(1e-300) });
        }
    }
}

/// Action of gap `n` from a computed periodic spectrum.
pub fn action_in(d: &impl Discriminant, spec: &PeriodicSpectrum, n: usize) -> Result<f64> {
    if !spec.is_open(n) {
        return Ok(0.0);
    }
    let (lo, hi) = spec.gap_edges(n);
    let si = sigma_index(n);
    let i = gap_quadrature(lo, hi, n, ACTION_RTOL, 0.0, |lam, c| {
        let e = d.evaluate(lam, false)?.excess[si];
        Ok(arccosh_excess(e) * c)
    })?;
    Ok(i)
}

/// The same action from the `λ Δ̇ / √(Δ² − 4)` integrand.
pub fn action_ddelta_form(d: &impl Discriminant, spec: &PeriodicSpectrum, n: usize) -> Result<f64> {
    if !spec.is_open(n) {
        return Ok(0.0);
    }
    let (lo, hi) = spec.gap_edges(n);
    let si = sigma_index(n);
    let sigma = if si == 0 { 1.0 } else { -1.0 };
    // ∫ σΔ̇/√(Δ²−4) over the gap vanishes, so λ can be centred at the midpoint.
    let mid = 0.5 * (lo + hi);
    let r = 0.5 * (hi - lo);
    // At an edge σΔ − 2 ≈ |Δ̇|·r·cos²θ/2, so the integrand tends to
    // (λ − m)·sgn(σΔ̇)·√(|Δ̇|/2r).
    let mut ends = 0.0;
    for edge in [lo, hi] {
        let dd = sigma * d.evaluate(edge, true)?.delta_dot().unwrap_or(0.0);
        ends += (edge - mid) * dd.signum() * (dd.abs() / (2.0 * r)).sqrt();
    }
    let i = gap_quadrature(lo, hi, n, 1e-9, ends, |lam, c| {
        let t = d.evaluate(lam, true)?;
        let e = t.excess[si].max(0.0);
        let root = (e * (e + 4.0)).sqrt();
        if root == 0.0 {
            return Ok(0.0);
        }
        let dd = t.delta_dot().unwrap_or(0.0) * sigma;
        Ok((lam - mid) * dd * c / root)
    })?;
    // Integration by parts of the arccosh form flips the sign.
    Ok(-i)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionSpectrum {
    #[serde(rename = "I")]
    pub values: Vec<f64>,
    /// Estimated `Σ_{n > n_max} I_n`.
    pub tail: f64,
    pub n_max: usize,
    #[serde(skip)]
    pub gaps: Vec<f64>,
}

impl ActionSpectrum {
    pub fn zeros(n_max: usize) -> Self {
        ActionSpectrum { values: vec![0.0; n_max], tail: 0.0, n_max, gaps: vec![0.0; n_max] }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        let n = values.len();
        let tail = geometric_tail(&values);
        ActionSpectrum { values, tail, n_max: n, gaps: vec![f64::NAN; n] }
    }

    /// `|I|~_p = 2 Σ (2πj)^{2p+1} I_j`.
    pub fn weighted_norm(&self, p: f64) -> f64 {
        2.0 * self
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| (2.0 * PI * (i + 1) as f64).powf(2.0 * p + 1.0) * v)
            .sum::<f64>()
    }

    pub fn l2(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,I_n,gap_n\n");
        for (i, v) in self.values.iter().enumerate() {
            s.push_str(&format!("{},{},{}\n", i + 1, crate::io::fmt_float(*v), crate::io::fmt_float(self.gaps[i])));
        }
        s
    }
}

/// Geometric extrapolation of the sum beyond the last computed term.
pub fn geometric_tail(terms: &[f64]) -> f64 {
    let n = terms.len();
    if n == 0 {
        return 0.0;
    }
    let last = terms[n - 1].abs();
    if last == 0.0 {
        return 0.0;
    }
    if n == 1 {
        return f64::INFINITY;
    }
    let prev = terms[n - 2].abs();
    let q = last / prev;
    if prev == 0.0 || q >= 1.0 {
        f64::INFINITY
    } else {
        last * q / (1.0 - q)
    }
}

/// Actions from an existing spectrum.
pub fn actions_from(d: &impl Discriminant, spec: &PeriodicSpectrum) -> Result<ActionSpectrum> {
    let n_max = spec.n_max();
    let values: Vec<f64> = (1..=n_max).into_par_iter().map(|n| action_in(d, spec, n)).collect::<Result<_>>()?;
    let gaps = crate::hill::gap_lengths(&spec.lambda);
    Ok(ActionSpectrum { tail: geometric_tail(&values), values, n_max, gaps })
}

/// Actions `I_1..I_{n_max}` of `u`.
pub fn actions(u: &FourierField, n_max: usize) -> Result<ActionSpectrum> {
    if u.is_zero() {
        return Ok(ActionSpectrum::zeros(n_max));
    }
    let hill = Hill::new(u);
    let spec = periodic_spectrum_with(&hill, n_max, &SpectrumTolerances::default())?;
    actions_from(&hill, &spec)
}

/// Single action `I_n`.
pub fn action(u: &FourierField, n: usize) -> Result<f64> {
    let hill = Hill::new(u);
    let spec = periodic_spectrum_with(&hill, n, &SpectrumTolerances::default())?;
    action_in(&hill, &spec, n)
}

/// `|2 Σ (2πj) I_j − ||u||_0²| / ||u||_0²`, zero for the zero field.
pub fn percival_residual(u: &FourierField, n_max: usize) -> Result<f64> {
    let norm = u.inner(u);
    if norm == 0.0 {
        return Ok(0.0);
    }
    let a = actions(u, n_max)?;
    Ok(percival_residual_of(&a, norm))
}

pub fn percival_residual_of(a: &ActionSpectrum, norm_sq: f64) -> f64 {
    if norm_sq == 0.0 {
        return 0.0;
    }
    (a.weighted_norm(0.0) - norm_sq).abs() / norm_sq
}

/// Cheap stand-in for the actions: `(û_j² + û_{−j}²)/(2·2πj)` for
/// `j = 1..=n`, exact for the linearized transform at the origin.
pub fn proxy_actions(u: &FourierField, n: usize) -> Vec<f64> {
    (1..=n)
        .map(|j| {
            let (a, b) = (u.get(j as i64), u.get(-(j as i64)));
            (a * a + b * b) / (4.0 * PI * j as f64)
        })
        .collect()
}

/// Smallest pair magnitude for which an angle is reported.
pub const ANGLE_FLOOR: f64 = 1e-14;

/// Argument of `(û_n, û_{-n})` in `[0, 2π)`; first-order proxy for the
/// Birkhoff angle of mode `n`.
pub fn angle_proxy(u: &FourierField, n: usize) -> Result<f64> {
    if n == 0 || n > u.modes() {
        return Err(Error::Domain(format!("mode {n} outside 1..={}", u.modes())));
    }
    let (a, b) = (u.get(n as i64), u.get(-(n as i64)));
    if a.hypot(b) <= ANGLE_FLOOR {
        return Err(Error::Domain(format!("angle of mode {n} undefined (pair below floor)")));
    }
    Ok(b.atan2(a).rem_euclid(2.0 * PI))
}

/// `f_n = 2 log((−1)^n y2'(1, μ_n))`.
pub fn f_coordinate(u: &FourierField, n: usize, spec: &HillSpectrum) -> Result<f64> {
    if n == 0 || n > spec.mu.len() {
        return Err(Error::Domain(format!("gap {n} not in spectrum")));
    }
    if spec.z != 0.0 {
        return Err(Error::Domain("f coordinate needs the unshifted Dirichlet spectrum".into()));
    }
    let t = Hill::new(u).transfer(spec.mu[n - 1], false)?;
    let s = if n % 2 == 0 { 1.0 } else { -1.0 };
    let arg = s * t.y2p;
    if !(arg > 0.0) {
        return Err(Error::Domain(format!("f coordinate of gap {n}: (-1)^n y2'(1, mu_n) = {arg} is not positive")));
    }
    Ok(2.0 * arg.ln())
}

/// `P_j = Σ_i (2πi)^j I_i`.
pub fn moment(a: &ActionSpectrum, j: i32) -> f64 {
    a.values.iter().enumerate().map(|(i, v)| (2.0 * PI * (i + 1) as f64).powi(j) * v).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentSet {
    pub p_minus1: f64,
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
}

impl MomentSet {
    pub fn of(a: &ActionSpectrum) -> Self {
        MomentSet { p_minus1: moment(a, -1), p1: moment(a, 1), p2: moment(a, 2), p3: moment(a, 3) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VReport {
    pub v: f64,
    pub hamiltonian: f64,
    pub moments: MomentSet,
    pub l2_actions: f64,
    /// `8 P_1 P_{-1}`.
    pub upper_simple: f64,
    /// Lower bound `(π/10)||I||² / (1 + 2 P_{-1}^{1/2})`.
    pub lower: f64,
    /// Upper bound `(8³(1+P_{-1}^{1/2})^{1/2} P_{-1}² + 6π e^{P_{-1}^{1/2}/2} ||I||)||I||`.
    pub upper: f64,
    pub actions: ActionSpectrum,
}

impl VReport {
    pub fn within_bounds(&self, neg_tol: f64) -> bool {
        self.v >= -neg_tol && self.v <= self.upper_simple && self.lower <= self.v && self.v <= self.upper
    }
}

pub fn v_report(u: &FourierField, a: ActionSpectrum) -> VReport {
    let m = MomentSet::of(&a);
    let h = hamiltonian(u);
    let l2 = a.l2();
    let s = m.p_minus1.max(0.0).sqrt();
    VReport {
        v: m.p3 - h,
        hamiltonian: h,
        moments: m,
        l2_actions: l2,
        upper_simple: 8.0 * m.p1 * m.p_minus1,
        lower: PI / 10.0 * l2 * l2 / (1.0 + 2.0 * s),
        upper: (512.0 * (1.0 + s).sqrt() * m.p_minus1.powi(2) + 6.0 * PI * (0.5 * s).exp() * l2) * l2,
        actions: a,
    }
}

/// Actions `I_1..I_{n_max}` followed by the linearized actions of modes
/// `n_max + 1..=K`. By quasi-linearity the two agree to relative order of
/// the gap size high in the spectrum, which makes moments such as `P_3`
/// usable at a modest `n_max`.
pub fn completed_actions(u: &FourierField, n_max: usize) -> Result<ActionSpectrum> {
    let mut values = actions(u, n_max)?.values;
    let k = u.modes();
    if k > n_max {
        values.extend_from_slice(&proxy_actions(u, k)[n_max..]);
    }
    Ok(ActionSpectrum::from_values(values))
}

/// `V = P_3(I(u)) − H(u)` with the inequalities it should satisfy, over the
/// completed action sequence.
pub fn v_functional(u: &FourierField, n_max: usize) -> Result<VReport> {
    Ok(v_report(u, completed_actions(u, n_max)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KorotyaevReport {
    pub m: u32,
    /// `|v|_m / (||u||_m (1 + ||u||_m)^{2(m+2)/3})` per member (NaN for zero).
    pub ratios: Vec<f64>,
    pub constant: f64,
    pub passes: bool,
}

/// `|v|_m² = 2 Σ (2πj)^{2m+1} I_j`.
pub fn v_norm(a: &ActionSpectrum, m: u32) -> f64 {
    a.weighted_norm(m as f64).max(0.0).sqrt()
}

/// Smallest constant `C_m` with `|v|_m ≤ C_m y (1+y)^{2(m+2)/3}`, `y = ||u||_m`,
/// over a family of potentials.
pub fn korotyaev_check(family: &[FourierField], m: u32, n_max: usize) -> Result<KorotyaevReport> {
    let ratios: Vec<f64> = family
        .par_iter()
        .map(|u| {
            let y = u.sobolev_norm_sq_unchecked(m as f64).sqrt();
            if y == 0.0 {
                return Ok(f64::NAN);
            }
            let a = actions(u, n_max)?;
            Ok(v_norm(&a, m) / (y * (1.0 + y).powf(2.0 * (m as f64 + 2.0) / 3.0)))
        })
        .collect::<Result<_>>()?;
    let constant = ratios.iter().filter(|r| r.is_finite()).fold(0.0f64, |a, &b| a.max(b));
    Ok(KorotyaevReport { m, passes: constant.is_finite(), ratios, constant })
}

/// Linear least-squares fit `y ≈ a + b x`; returns `(a, b)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let b = sxy / sxx;
    (my - b * mx, b)
}

/// Unwraps a sequence of angles into a continuous curve.
pub fn unwrap(angles: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(angles.len());
    let mut off = 0.0f64;
    for (i, &a) in angles.iter().enumerate() {
        if i > 0 {
            let d: f64 = a + off - out[i - 1];
            if d > PI {
                off -= 2.0 * PI * ((d + PI) / (2.0 * PI)).floor();
            } else if d < -PI {
                off += 2.0 * PI * ((-d + PI) / (2.0 * PI)).floor();
            }
        }
        out.push(a + off);
    }
    out
}

/// Rotation rate of the angle proxy of mode `n` along the unperturbed flow.
///
/// With `u_t = −u_xxx` the proxy turns clockwise, so the frequency is
/// reported as minus the fitted slope. `sample_every` steps must keep the
/// per-sample rotation below `π`.
pub fn frequency_estimate(u0: &FourierField, n: usize, t_obs: f64, dt: f64, sample_every: usize) -> Result<f64> {
    let mut ts = vec![];
    let mut ph = vec![];
    evolve_with(u0, t_obs, dt, &Perturbation::none(), sample_every, |t, u| {
        ts.push(t);
        ph.push(angle_proxy(u, n)?);
        Ok(())
    })?;
    if ts.len() < 3 {
        return Err(Error::Domain("observation window too short for a frequency fit".into()));
    }
    let (_, slope) = linear_fit(&ts, &unwrap(&ph));
    Ok(-slope)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    /// Modes used in the fits.
    pub modes: Vec<usize>,
    /// `|2(2πj) I_j − (û_j² + û_{−j}²)|`.
    pub difference: Vec<f64>,
    /// `û_j² + û_{−j}²`.
    pub linear: Vec<f64>,
    /// Power-law exponents of the two tails, when resolvable. `-inf` marks a
    /// tail that drops below the resolution floor within the range.
    pub difference_exponent: Option<f64>,
    pub linear_exponent: Option<f64>,
    /// `None` means inconclusive.
    pub passes: Option<bool>,
}

/// Values at or below this are treated as unresolved.
const TAIL_FLOOR: f64 = 1e-30;

fn power_fit(js: &[usize], vals: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = js
        .iter()
        .zip(vals)
        .filter(|(_, v)| **v > TAIL_FLOOR)
        .map(|(j, v)| ((*j as f64).ln(), v.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    Some(linear_fit(&x, &y).1)
}

/// Compares the mode-wise nonlinear and linear parts of the Birkhoff
/// weights over `j = j_lo..=j_hi`.
pub fn quasilinearity_probe(u: &FourierField, j_lo: usize, j_hi: usize) -> Result<TailReport> {
    if j_hi < j_lo + 2 || j_lo == 0 {
        return Err(Error::Domain("need at least three modes for a tail fit".into()));
    }
    let a = actions(u, j_hi)?;
    let modes: Vec<usize> = (j_lo..=j_hi).collect();
    let lin = ModeVector::linearized(u, 0.0);
    let linear: Vec<f64> = modes
        .iter()
        .map(|&j| {
            let p = lin.pairs.get(j - 1).copied().unwrap_or([0.0; 2]);
            2.0 * PI * j as f64 * (p[0] * p[0] + p[1] * p[1])
        })
        .collect();
    let difference: Vec<f64> =
        modes.iter().zip(&linear).map(|(&j, l)| (2.0 * (2.0 * PI * j as f64) * a.values[j - 1] - l).abs()).collect();
    let le = power_fit(&modes, &linear);
    let de = power_fit(&modes, &difference).or_else(|| {
        // Resolved at the start, unresolved at the end: faster than any power.
        let first = difference.first().is_some_and(|v| *v > TAIL_FLOOR);
        let last = difference.last().is_some_and(|v| *v <= TAIL_FLOOR);
        (first && last).then_some(f64::NEG_INFINITY)
    });
    let passes = match (de, le) {
        (Some(d), Some(l)) => Some(d <= l - 1.0),
        // No linear tail: the difference must still decay.
        (Some(d), None) if linear.iter().all(|v| *v == 0.0) => Some(d < -1.0),
        (None, _) if difference.iter().all(|v| *v <= TAIL_FLOOR) => Some(true),
        _ => None,
    };
    Ok(TailReport { modes, difference, linear, difference_exponent: de, linear_exponent: le, passes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn e1(a: f64) -> FourierField {
        FourierField::on_min_grid(8, &[(1, a)]).unwrap()
    }

    #[test]
    fn zero_field_has_zero_actions() {
        let a = actions(&FourierField::zeros(4, 14).unwrap(), 5).unwrap();
        assert!(a.values.iter().all(|v| *v == 0.0));
        assert_eq!(percival_residual(&FourierField::zeros(4, 14).unwrap(), 5).unwrap(), 0.0);
    }

    #[test]
    fn first_action_of_small_cosine() {
        let a = 0.1;
        let i1 = action(&e1(a), 1).unwrap();
        let expect = a * a / (4.0 * PI);
        assert!((i1 - expect).abs() < 0.05 * expect, "{i1} vs {expect}");
    }

    #[test]
    fn percival_small_cosine() {
        assert!(percival_residual(&e1(0.1), 10).unwrap() < 1e-4);
    }

    #[test]
    fn both_action_forms_agree() {
        let u = FourierField::on_min_grid(8, &[(1, 0.3), (-2, 0.2)]).unwrap();
        let hill = Hill::new(&u);
        let spec = periodic_spectrum_with(&hill, 3, &SpectrumTolerances::default()).unwrap();
        for n in 1..=3 {
            let a = action_in(&hill, &spec, n).unwrap();
            let b = action_ddelta_form(&hill, &spec, n).unwrap();
            assert!((a - b).abs() <= 1e-6 * a.abs() + 1e-14, "gap {n}: {a} vs {b}");
        }
    }

    #[test]
    fn actions_are_translation_invariant() {
        let u = FourierField::on_min_grid(8, &[(1, 0.2), (-2, 0.1)]).unwrap();
        let a = actions(&u, 4).unwrap();
        let b = actions(&u.translated(0.37), 4).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() <= 1e-6 * x.abs() + 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn angle_proxy_basics() {
        assert_eq!(angle_proxy(&e1(1.0), 1).unwrap(), 0.0);
        let s = FourierField::on_min_grid(2, &[(-1, 1.0)]).unwrap();
        assert_abs_diff_eq!(angle_proxy(&s, 1).unwrap(), PI / 2.0, epsilon = 1e-15);
        assert!(angle_proxy(&e1(1.0), 2).is_err());
    }

    #[test]
    fn f_coordinate_of_zero_field() {
        let z = FourierField::zeros(4, 14).unwrap();
        let spec = crate::hill::hill_spectrum(&z, 3, 0.0).unwrap();
        for n in 1..=3 {
            assert_abs_diff_eq!(f_coordinate(&z, n, &spec).unwrap(), 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn f_coordinate_vanishes_for_even_potentials() {
        // Even u: y1(1) = y2'(1), so at a Dirichlet eigenvalue y2'(1) = ±1.
        let u = e1(0.3);
        let spec = crate::hill::hill_spectrum(&u, 4, 0.0).unwrap();
        for n in 1..=4 {
            assert_abs_diff_eq!(f_coordinate(&u, n, &spec).unwrap(), 0.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn f_coordinate_is_continuous() {
        let field = |d: f64| FourierField::on_min_grid(8, &[(1, 0.2), (-1, d), (-2, 0.1)]).unwrap();
        let f1 = |u: &FourierField| f_coordinate(u, 1, &crate::hill::hill_spectrum(u, 1, 0.0).unwrap()).unwrap();
        let base = f1(&field(0.0));
        assert!(base.abs() > 1e-6);
        let mut prev = f64::INFINITY;
        for d in [1e-2, 1e-3, 1e-4] {
            let diff = (f1(&field(d)) - base).abs();
            assert!(diff < prev, "{diff} after {prev}");
            prev = diff;
        }
        assert!(prev < 1e-2);
    }

    #[test]
    fn moments_of_single_action() {
        let a = ActionSpectrum::from_values(vec![0.25, 0.0, 0.0]);
        for j in [-1, 1, 2, 3] {
            assert_abs_diff_eq!(moment(&a, j), (2.0 * PI).powi(j) * 0.25, epsilon = 1e-14);
        }
        assert_eq!(moment(&ActionSpectrum::zeros(3), 3), 0.0);
    }

    #[test]
    fn third_moment_matches_quadratic_energy() {
        let u = e1(0.1);
        let a = actions(&u, 6).unwrap();
        let q = 0.5 * u.sobolev_norm(1.0).unwrap().powi(2);
        assert!((moment(&a, 3) - q).abs() < 0.1 * q);
    }

    #[test]
    fn v_functional_bounds_two_mode() {
        let u = FourierField::on_min_grid(8, &[(1, 0.2), (-2, 0.1)]).unwrap();
        let r = v_functional(&u, 24).unwrap();
        assert!(r.v >= -1e-8 && r.v <= r.upper_simple, "{r:?}");
        assert_eq!(v_functional(&FourierField::zeros(4, 14).unwrap(), 4).unwrap().v, 0.0);
    }

    #[test]
    fn v_is_close_to_three_times_squared_actions_near_zero() {
        let u = e1(0.05);
        let r = v_functional(&u, 12).unwrap();
        let q = 3.0 * r.l2_actions.powi(2);
        assert!((r.v - q).abs() < 0.05 * q, "V = {} vs {}", r.v, q);
    }

    #[test]
    fn korotyaev_family_is_bounded() {
        let fam: Vec<FourierField> = [0.1, 0.5, 1.0, 2.0].iter().map(|&a| e1(a)).collect();
        let r = korotyaev_check(&fam, 1, 12).unwrap();
        assert!(r.passes && r.constant > 0.0);
        let r0 = korotyaev_check(&fam[..1], 0, 12).unwrap();
        // |v|_0 = ||u||_0: the ratio is 1/(1+y)^{4/3}.
        let y: f64 = 0.1;
        assert!((r0.ratios[0] - 1.0 / (1.0 + y).powf(4.0 / 3.0)).abs() < 1e-4);
    }

    #[test]
    fn unwrap_restores_linear_phase() {
        let raw: Vec<f64> = (0..50).map(|i| (-(i as f64) * 0.9).rem_euclid(2.0 * PI)).collect();
        let w = unwrap(&raw);
        for (i, v) in w.iter().enumerate() {
            assert_abs_diff_eq!(v - w[0], -(i as f64) * 0.9, epsilon = 1e-12);
        }
    }

    #[test]
    fn linear_rotation_rate_of_proxy() {
        let u = FourierField::with_modes(8, 32, &[(2, 1e-8)]).unwrap();
        let w = frequency_estimate(&u, 2, 0.01, 1e-5, 1).unwrap();
        assert!((w - (4.0 * PI).powi(3)).abs() < 1e-6 * (4.0 * PI).powi(3), "{w}");
    }

    #[test]
    fn quasilinearity_single_mode() {
        let r = quasilinearity_probe(&e1(0.3), 2, 10).unwrap();
        assert_eq!(r.passes, Some(true), "{r:?}");
        let z = quasilinearity_probe(&FourierField::zeros(12, 38).unwrap(), 2, 10).unwrap();
        assert_eq!(z.passes, Some(true));
    }
}
