//! Averaging apparatus for perturbed KdV: resonance sets of the frequency
//! map, time averages of the action production along the unperturbed flow,
//! admissible Gaussian sampling and divergence of perturbation fields.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::birkhoff::{actions, ActionSpectrum};
use crate::error::{Error, Result};
use crate::grid::FourierField;
use crate::kdvflow::{evolve_with, spectral_tail, Perturbation, TrajectoryRecord};

/// `Ω(δ, m, K)`: some `0 < |k|₁ ≤ K` with `|Σ_{i≤m} W_i k_i| < δ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResonanceQuery {
    pub delta: f64,
    pub m: usize,
    pub k_res: usize,
}

impl ResonanceQuery {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = vec![];
        if !(self.delta > 0.0) {
            errs.push(format!("resonance delta must be > 0, got {}", self.delta));
        }
        if self.m == 0 {
            errs.push("resonance m must be >= 1".into());
        }
        if self.k_res == 0 {
            errs.push("resonance K must be >= 1".into());
        }
        errs
    }
}

/// Which frequencies enter the resonance test.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrequencyModel {
    /// `W_n = (2πn)³ − 6 I_n`, valid near the origin.
    #[default]
    FirstOrder,
    /// Slopes of the angle proxies along the flow.
    Empirical,
}

/// First-order frequencies `W_n = (2πn)³ − 6 I_n`, `n = 1..=m`.
pub fn frequency_vector(a: &ActionSpectrum, m: usize) -> Vec<f64> {
    first_order_frequencies(&a.values, m)
}

pub fn first_order_frequencies(actions: &[f64], m: usize) -> Vec<f64> {
    (1..=m)
        .map(|n| (2.0 * PI * n as f64).powi(3) - 6.0 * actions.get(n - 1).copied().unwrap_or(0.0))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Resonance {
    pub resonant: bool,
    /// Minimizing lattice vector.
    pub k: Vec<i64>,
    /// `|⟨W, k⟩|` at the minimizer.
    pub value: f64,
}

fn dot(w: &[f64], k: &[i64]) -> f64 {
    w.iter().zip(k).map(|(a, b)| a * *b as f64).sum::<f64>().abs()
}

/// Ranks by value, then `|k|₁`, then lexicographic order, so any complete
/// enumeration picks the same minimizer.
fn better(v: f64, k: &[i64], best: &Option<(f64, Vec<i64>)>) -> bool {
    match best {
        None => true,
        Some((bv, bk)) => {
            let l1 = |x: &[i64]| x.iter().map(|c| c.unsigned_abs()).sum::<u64>();
            (v, l1(k), k) < (*bv, l1(bk), bk.as_slice())
        }
    }
}

fn finish(best: Option<(f64, Vec<i64>)>, delta: f64) -> Resonance {
    let (value, k) = best.expect("lattice ball is never empty");
    Resonance { resonant: value < delta, k, value }
}

fn check_query(w: &[f64], q: &ResonanceQuery) -> Result<()> {
    let mut errs = q.validate();
    if w.len() < q.m {
        errs.push(format!("need {} frequencies, got {}", q.m, w.len()));
    }
    if errs.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(errs))
    }
}

/// Exhaustive search over the cube `[−K, K]^m` with the `|k|₁` filter.
pub fn resonance_indicator(w: &[f64], q: &ResonanceQuery) -> Result<Resonance> {
    check_query(w, q)?;
    let (m, kk) = (q.m, q.k_res as i64);
    let w = &w[..m];
    let mut k = vec![-kk; m];
    let mut best = None;
    loop {
        let l1: i64 = k.iter().map(|c| c.abs()).sum();
        if l1 > 0 && l1 <= kk {
            let v = dot(w, &k);
            if better(v, &k, &best) {
                best = Some((v, k.clone()));
            }
        }
        // Odometer increment.
        let mut i = 0;
        while i < m {
            if k[i] < kk {
                k[i] += 1;
                break;
            }
            k[i] = -kk;
            i += 1;
        }
        if i == m {
            break;
        }
    }
    Ok(finish(best, q.delta))
}

/// The same search organized by shells `|k|₁ = s`, built recursively from
/// signed compositions; an independent enumeration for cross-checking.
pub fn resonance_by_shells(w: &[f64], q: &ResonanceQuery) -> Result<Resonance> {
    check_query(w, q)?;
    fn shell(w: &[f64], s: i64, pos: usize, k: &mut Vec<i64>, best: &mut Option<(f64, Vec<i64>)>) {
        if pos == k.len() - 1 {
            for last in if s == 0 { vec![0] } else { vec![s, -s] } {
                k[pos] = last;
                let v = dot(w, k);
                if better(v, k, best) {
                    *best = Some((v, k.clone()));
                }
            }
            return;
        }
        for a in 0..=s {
            for sign in if a == 0 { vec![0] } else { vec![a, -a] } {
                k[pos] = sign;
                shell(w, s - a, pos + 1, k, best);
            }
        }
    }
    let w = &w[..q.m];
    let mut best = None;
    let mut k = vec![0; q.m];
    for s in 1..=q.k_res as i64 {
        shell(w, s, 0, &mut k, &mut best);
    }
    Ok(finish(best, q.delta))
}

/// Trapezoidal time fraction of a sampled path spent in `Ω(δ, m, K)`.
pub fn occupation_of_series(times: &[f64], freqs: &[Vec<f64>], q: &ResonanceQuery) -> Result<f64> {
    if times.len() != freqs.len() || times.is_empty() {
        return Err(Error::Domain("times and frequency samples must be non-empty and aligned".into()));
    }
    let flags = freqs
        .iter()
        .map(|w| Ok(if resonance_indicator(w, q)?.resonant { 1.0 } else { 0.0 }))
        .collect::<Result<Vec<f64>>>()?;
    if times.len() == 1 {
        return Ok(flags[0]);
    }
    let span = times[times.len() - 1] - times[0];
    let inside: f64 = times.windows(2).zip(flags.windows(2)).map(|(t, f)| 0.5 * (f[0] + f[1]) * (t[1] - t[0])).sum();
    Ok(inside / span)
}

/// Occupation fraction along a trajectory that carries action samples,
/// using the first-order frequency model.
pub fn occupation_fraction(traj: &TrajectoryRecord, q: &ResonanceQuery) -> Result<f64> {
    let freqs = traj
        .samples
        .iter()
        .map(|s| {
            s.actions
                .as_ref()
                .map(|a| first_order_frequencies(a, q.m))
                .ok_or_else(|| Error::Domain("trajectory has no action samples".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    occupation_of_series(&traj.times(), &freqs, q)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AveragingOptions {
    pub n_max: usize,
    /// Length of the averaging window along the unperturbed flow.
    pub t_avg: f64,
    pub dt: f64,
    /// Number of window subintervals; snapshots sit at their ends.
    pub snapshots: usize,
    /// Finite-difference step relative to `||u||_0/||f(u)||_0`.
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
    /// Resonance test applied at the base point.
    #[serde(default)]
    pub query: Option<ResonanceQuery>,
    /// Largest accepted error bar relative to `max_k |⟨F_k⟩|`.
    #[serde(default)]
    pub err_tol: Option<f64>,
    /// Largest accepted spectral tail of a representative.
    #[serde(default = "default_tail_tol")]
    pub tail_tol: f64,
}

fn default_fd_step() -> f64 {
    1e-3
}

fn default_tail_tol() -> f64 {
    1e-20
}

impl AveragingOptions {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = vec![];
        if self.n_max == 0 {
            errs.push("averaging n_max must be >= 1".into());
        }
        if !(self.t_avg > 0.0) {
            errs.push(format!("t_avg must be > 0, got {}", self.t_avg));
        }
        if !(self.dt > 0.0) {
            errs.push(format!("averaging dt must be > 0, got {}", self.dt));
        }
        if self.snapshots < 4 || self.snapshots % 2 != 0 {
            errs.push(format!("snapshots must be even and >= 4, got {}", self.snapshots));
        }
        if !(self.fd_step > 0.0) {
            errs.push(format!("fd_step must be > 0, got {}", self.fd_step));
        }
        if let Some(q) = &self.query {
            errs.extend(q.validate());
        }
        errs
    }
}

/// `dI/dτ` per unit `ε` at `u`: the derivative of the actions along the
/// perturbation field, by central differences.
pub fn action_production(u: &FourierField, pert: &Perturbation, n_max: usize, fd_step: f64) -> Result<Vec<f64>> {
    let f = pert.field(u)?;
    let fnorm = f.l2_norm();
    if fnorm == 0.0 {
        return Ok(vec![0.0; n_max]);
    }
    let h = fd_step * u.l2_norm().max(1e-12) / fnorm;
    let mut plus = u.clone();
    plus.axpy(h, &f)?;
    let mut minus = u.clone();
    minus.axpy(-h, &f)?;
    let (ap, am) = (actions(&plus, n_max)?, actions(&minus, n_max)?);
    Ok(ap.values.iter().zip(&am.values).map(|(p, m)| (p - m) / (2.0 * h)).collect())
}

/// `exp(−1/(s(1 − s)))` on `(0, 1)`: time averages with this weight converge
/// faster than any power of the window on non-resonant tori.
fn bump(s: f64) -> f64 {
    if s <= 0.0 || s >= 1.0 {
        0.0
    } else {
        (-1.0 / (s * (1.0 - s))).exp()
    }
}

fn weighted_mean(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len() - 1;
    let w: Vec<f64> = (0..=n).map(|i| bump(i as f64 / n as f64)).collect();
    let sw: f64 = w.iter().sum();
    let dim = rows[0].len();
    (0..dim).map(|k| rows.iter().zip(&w).map(|(r, wi)| r[k] * wi).sum::<f64>() / sw).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AveragedRate {
    /// Time average of `dI_k/dτ` over the window.
    pub mean: Vec<f64>,
    /// `|full window − half window|`.
    pub err: Vec<f64>,
    /// Actions at the base point.
    pub actions: Vec<f64>,
    pub resonance: Option<Resonance>,
}

/// Averages the action production of `pert` over the unperturbed orbit of
/// `u`, standing in for the average over the invariant torus of `u`.
pub fn empirical_averaged_rhs(u: &FourierField, pert: &Perturbation, opts: &AveragingOptions) -> Result<AveragedRate> {
    let errs = opts.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let base = actions(u, opts.n_max)?;
    let resonance = match &opts.query {
        Some(q) => Some(resonance_indicator(&frequency_vector(&base, q.m), q)?),
        None => None,
    };
    let steps = (opts.t_avg / opts.dt).round().max(1.0) as usize;
    if steps % opts.snapshots != 0 {
        return Err(Error::Domain(format!(
            "window of {steps} steps is not a multiple of {} snapshots",
            opts.snapshots
        )));
    }
    let mut snaps = vec![];
    evolve_with(u, steps as f64 * opts.dt, opts.dt, &Perturbation::none(), steps / opts.snapshots, |_, v| {
        snaps.push(v.clone());
        Ok(())
    })?;
    let rows = snaps
        .par_iter()
        .map(|v| action_production(v, pert, opts.n_max, opts.fd_step))
        .collect::<Result<Vec<_>>>()?;
    let full = weighted_mean(&rows);
    let half = weighted_mean(&rows[..=opts.snapshots / 2]);
    let err: Vec<f64> = full.iter().zip(&half).map(|(a, b)| (a - b).abs()).collect();
    if let Some(tol) = opts.err_tol {
        let scale = full.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let worst = err.iter().fold(0.0f64, |m, v| m.max(*v));
        if worst > tol * scale {
            return Err(Error::Resolution(format!(
                "averaging window too short: error bar {worst:e} above {tol:e} x {scale:e}"
            )));
        }
    }
    Ok(AveragedRate { mean: full, err, actions: base.values, resonance })
}

/// Averaged action curve `J(τ)` next to the actions `I(τ)` of the perturbed
/// flow at the same slow times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AveragedCurve {
    pub taus: Vec<f64>,
    pub j: Vec<Vec<f64>>,
    pub err: Vec<Vec<f64>>,
    /// Actions of the perturbed trajectory.
    pub actual: Vec<Vec<f64>>,
    pub resonant: Vec<bool>,
    pub abort: Option<String>,
}

impl AveragedCurve {
    /// `sup_τ |I(τ) − J(τ)|~_p`.
    pub fn sup_deviation(&self, p: f64) -> f64 {
        self.actual
            .iter()
            .zip(&self.j)
            .map(|(a, j)| {
                let d: Vec<f64> = a.iter().zip(j).map(|(x, y)| (x - y).abs()).collect();
                ActionSpectrum::from_values(d).weighted_norm(p)
            })
            .fold(0.0, f64::max)
    }

    /// `sup_τ |err(τ)|~_p`.
    pub fn sup_error(&self, p: f64) -> f64 {
        self.err.iter().map(|e| ActionSpectrum::from_values(e.clone()).weighted_norm(p)).fold(0.0, f64::max)
    }

    /// `sup_τ |I(τ) − I'(τ)|~_p` against another curve on the same grid.
    pub fn actual_distance(&self, other: &AveragedCurve, p: f64) -> f64 {
        self.actual
            .iter()
            .zip(&other.actual)
            .map(|(a, b)| {
                let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect();
                ActionSpectrum::from_values(d).weighted_norm(p)
            })
            .fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let n = self.j.first().map_or(0, |v| v.len());
        let mut head = vec!["tau".to_string()];
        head.extend((1..=n).map(|k| format!("J_{k}")));
        head.extend((1..=n).map(|k| format!("err_{k}")));
        head.extend((1..=n).map(|k| format!("I_{k}")));
        head.push("resonant".into());
        let mut out = head.join(",");
        out.push('\n');
        for i in 0..self.j.len() {
            let mut row = vec![crate::io::fmt_float(self.taus[i])];
            row.extend(self.j[i].iter().map(|v| crate::io::fmt_float(*v)));
            row.extend(self.err[i].iter().map(|v| crate::io::fmt_float(*v)));
            row.extend(self.actual[i].iter().map(|v| crate::io::fmt_float(*v)));
            row.push(self.resonant[i].to_string());
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Actions below this are advanced additively instead of by log-rates.
const LOG_RATE_FLOOR: f64 = 1e-14;

/// Quasi-static two-scale integration of `J̇ = ⟨F⟩(J)`.
///
/// The perturbed flow itself supplies a representative potential at every
/// slow node; `⟨F⟩` is averaged along its unperturbed orbit and transferred
/// to `J` through the per-mode rate `⟨F_k⟩/I_k`, then `J` is advanced with
/// the trapezoid rule on `log J`.
///
/// `taus` is the slow grid, starting at 0 and strictly increasing.
pub fn averaged_trajectory(
    u0: &FourierField,
    pert: &Perturbation,
    taus: &[f64],
    dt: f64,
    opts: &AveragingOptions,
) -> Result<AveragedCurve> {
    let mut errs = opts.validate();
    errs.extend(pert.validate());
    if taus.first() != Some(&0.0) || taus.windows(2).any(|w| !(w[1] > w[0])) {
        errs.push("slow grid must start at 0 and increase strictly".into());
    }
    if !(dt > 0.0) {
        errs.push(format!("flow dt must be > 0, got {dt}"));
    }
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let eps = if pert.is_active() { pert.eps } else { 0.0 };
    let mut curve =
        AveragedCurve { taus: vec![], j: vec![], err: vec![], actual: vec![], resonant: vec![], abort: None };
    let mut rep = u0.clone();
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    for (i, &tau) in taus.iter().enumerate() {
        let dtau = if i > 0 { tau - taus[i - 1] } else { 0.0 };
        if i > 0 {
            if eps > 0.0 {
                let fast = dtau / eps;
                let steps = (fast / dt).round().max(1.0) as usize;
                rep = evolve_with(&rep, steps as f64 * (fast / steps as f64), fast / steps as f64, pert, steps, |_, _| Ok(()))?;
            }
            let tail = spectral_tail(&rep);
            if tail > opts.tail_tol {
                curve.abort = Some(format!("representative at tau = {tau} has spectral tail {tail:e}"));
                return Ok(curve);
            }
        }
        let rate = match empirical_averaged_rhs(&rep, pert, opts) {
            Ok(r) => r,
            Err(e) if i > 0 => {
                curve.abort = Some(e.to_string());
                return Ok(curve);
            }
            Err(e) => return Err(e),
        };
        let rho: Vec<f64> = rate
            .mean
            .iter()
            .zip(&rate.actions)
            .map(|(f, a)| if *a > LOG_RATE_FLOOR { f / a } else { 0.0 })
            .collect();
        let rel: Vec<f64> = rate
            .err
            .iter()
            .zip(&rate.actions)
            .map(|(e, a)| if *a > LOG_RATE_FLOOR { e / a } else { 0.0 })
            .collect();
        let (j, err) = match (&prev, curve.j.last(), curve.err.last()) {
            (Some((rho0, rel0)), Some(j0), Some(e0)) => {
                let mut j = vec![0.0; opts.n_max];
                let mut e = vec![0.0; opts.n_max];
                for k in 0..opts.n_max {
                    if j0[k] > LOG_RATE_FLOOR && rate.actions[k] > LOG_RATE_FLOOR {
                        let g = (0.5 * dtau * (rho0[k] + rho[k])).exp();
                        j[k] = j0[k] * g;
                        e[k] = e0[k] * g + j[k] * 0.5 * dtau * (rel0[k] + rel[k]);
                    } else {
                        j[k] = j0[k] + dtau * rate.mean[k];
                        e[k] = e0[k] + dtau * rate.err[k];
                    }
                }
                (j, e)
            }
            _ => (rate.actions.clone(), vec![0.0; opts.n_max]),
        };
        curve.taus.push(tau);
        curve.j.push(j);
        curve.err.push(err);
        curve.actual.push(rate.actions.clone());
        curve.resonant.push(rate.resonance.as_ref().is_some_and(|r| r.resonant));
        prev = Some((rho, rel));
    }
    Ok(curve)
}

/// Slow grid with step `fine` up to `switch` and step `coarse` after it,
/// ending exactly at `t_slow`.
pub fn graded_grid(t_slow: f64, switch: f64, fine: f64, coarse: f64) -> Vec<f64> {
    let mut g = vec![0.0];
    let mut k = 1;
    while (k as f64) * fine < switch.min(t_slow) - 1e-12 {
        g.push(k as f64 * fine);
        k += 1;
    }
    let start = switch.min(t_slow);
    let n = ((t_slow - start) / coarse).ceil().max(0.0) as usize;
    g.push(start);
    for i in 1..=n {
        g.push(start + (t_slow - start) * i as f64 / n as f64);
    }
    g.dedup();
    g
}

/// Variance law of an admissible Gaussian measure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianMeasureSpec {
    /// `σ_j = scale · j^{ζ'}`.
    pub scale: f64,
    /// `ζ'`, must be below `−1`.
    pub zeta: f64,
    /// Sobolev index `p` of the `v`-weights.
    pub p: f64,
    pub modes: usize,
    pub grid: usize,
}

impl GaussianMeasureSpec {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = vec![];
        if !(self.scale >= 0.0 && self.scale.is_finite()) {
            errs.push(format!("gaussian scale must be >= 0, got {}", self.scale));
        }
        if !(self.zeta < -1.0) {
            errs.push(format!("gaussian exponent zeta' must be < -1, got {}", self.zeta));
        }
        if !(self.p >= 0.0) {
            errs.push(format!("gaussian Sobolev index must be >= 0, got {}", self.p));
        }
        if let Err(e) = FourierField::zeros(self.modes, self.grid) {
            errs.push(e.to_string());
        }
        errs
    }

    pub fn sigma(&self, j: usize) -> f64 {
        self.scale * (j as f64).powf(self.zeta)
    }

    /// Variance of each real coefficient of mode `j`.
    pub fn variance(&self, j: usize) -> f64 {
        self.sigma(j) / (2.0 * PI * j as f64).powf(1.0 + 2.0 * self.p)
    }

    /// `Σ_{j > K} σ_j`.
    pub fn sigma_tail(&self) -> f64 {
        let far = self.modes + 100_000;
        let near: f64 = (self.modes + 1..=far).map(|j| self.sigma(j)).sum();
        near + self.scale * (far as f64 + 0.5).powf(1.0 + self.zeta) / (-1.0 - self.zeta)
    }
}

pub fn sample_gaussian(spec: &GaussianMeasureSpec, rng: &mut impl Rng) -> Result<FourierField> {
    let errs = spec.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let mut u = FourierField::zeros(spec.modes, spec.grid)?;
    for (i, p) in u.pairs_mut().iter_mut().enumerate() {
        let s = spec.variance(i + 1).sqrt();
        let (x, y): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
        *p = [s * x, s * y];
    }
    Ok(u)
}

/// `u` rescaled so that `||u||_p = target`.
pub fn scaled_to_norm(u: &FourierField, p: f64, target: f64) -> Result<FourierField> {
    let n = u.sobolev_norm(p)?;
    if n == 0.0 {
        return Err(Error::Domain("cannot rescale the zero field".into()));
    }
    Ok(u.scaled(target / n))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    /// Trace of the Jacobian of `f` over the retained `2K` coordinates.
    pub divergence: f64,
    /// Diagonal entries in the order `û_1, û_{−1}, û_2, ...`.
    pub diagonal: Vec<f64>,
}

/// Divergence per unit `ε` of the perturbation field at `u` by central
/// differences in each coordinate direction.
pub fn divergence_estimate(pert: &Perturbation, u: &FourierField, h: f64) -> Result<DivergenceReport> {
    if !(h > 0.0) {
        return Err(Error::Domain(format!("difference step must be > 0, got {h}")));
    }
    let k = u.modes() as i64;
    let dirs: Vec<i64> = (1..=k).flat_map(|j| [j, -j]).collect();
    let diagonal = dirs
        .par_iter()
        .map(|&d| {
            let mut p = u.clone();
            let mut m = u.clone();
            p.set(d, u.get(d) + h)?;
            m.set(d, u.get(d) - h)?;
            let v = (pert.field(&p)?.get(d) - pert.field(&m)?.get(d)) / (2.0 * h);
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("divergence probe in direction {d}")));
            }
            Ok(v)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(DivergenceReport { divergence: diagonal.iter().sum(), diagonal })
}
