//! KdV with weak damping and additive white-in-time forcing,
//!
//! ```text
//! u_t = -u_xxx + 6 u u_x + ε u_xx + √ε η,   η = ∂_t Σ_j b_j β_j(t) e_j,
//! ```
//!
//! ensembles over independent noise streams, and statistics of the actions
//! and angle proxies along the slow time `τ = εt`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::birkhoff::{actions, angle_proxy, proxy_actions};
use crate::error::{Error, Result};
use crate::grid::FourierField;
use crate::kdvflow::{Ceiling, Perturbation, Stepper};

/// Per-mode noise amplitudes `b_j = b_{−j}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseLaw {
    /// `b_j = scale · j^{−q}`.
    Power { scale: f64, q: f64 },
    /// `b_1, b_2, ...`; modes past the end are unforced.
    Explicit { amplitudes: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub law: NoiseLaw,
    /// Master seed; realization `r` uses stream `r` of this seed.
    pub seed: u64,
}

impl NoiseSpec {
    pub fn power(scale: f64, q: f64, seed: u64) -> Self {
        NoiseSpec { law: NoiseLaw::Power { scale, q }, seed }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = vec![];
        match &self.law {
            NoiseLaw::Power { scale, q } => {
                if !(*scale > 0.0 && scale.is_finite()) {
                    errs.push(format!("noise scale must be > 0, got {scale}"));
                }
                if !(*q > 1.5 && q.is_finite()) {
                    errs.push(format!("noise decay exponent q must be > 3/2, got {q}"));
                }
            }
            NoiseLaw::Explicit { amplitudes } => {
                if amplitudes.is_empty() {
                    errs.push("explicit noise amplitudes are empty".into());
                }
                if let Some((j, b)) = amplitudes.iter().enumerate().find(|(_, b)| !(**b > 0.0 && b.is_finite())) {
                    errs.push(format!("noise amplitude b_{} must be > 0, got {b}", j + 1));
                }
            }
        }
        errs
    }

    fn checked(&self) -> Result<()> {
        let errs = self.validate();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// `b_j` for `j = 1..=modes`.
    pub fn amplitudes(&self, modes: usize) -> Result<Vec<f64>> {
        self.checked()?;
        Ok(match &self.law {
            NoiseLaw::Power { scale, q } => (1..=modes).map(|j| scale * (j as f64).powf(-q)).collect(),
            NoiseLaw::Explicit { amplitudes } => {
                (0..modes).map(|i| amplitudes.get(i).copied().unwrap_or(0.0)).collect()
            }
        })
    }

    /// `Σ_{|j| ≤ K} b_j²`, the energy input per unit slow time.
    pub fn forcing_power(&self, modes: usize) -> Result<f64> {
        Ok(2.0 * self.amplitudes(modes)?.iter().map(|b| b * b).sum::<f64>())
    }

    /// `Σ_{|j| > K} b_j²`, dropped by truncating the noise at `K` modes.
    pub fn neglected_mass(&self, modes: usize) -> Result<f64> {
        self.checked()?;
        Ok(match &self.law {
            NoiseLaw::Power { scale, q } => {
                // Direct sum over a long stretch, then the integral remainder.
                let far = modes + 100_000;
                let near: f64 = (modes + 1..=far).map(|j| (j as f64).powf(-2.0 * q)).sum();
                let rest = (far as f64 + 0.5).powf(1.0 - 2.0 * q) / (2.0 * q - 1.0);
                2.0 * scale * scale * (near + rest)
            }
            NoiseLaw::Explicit { amplitudes } => 2.0 * amplitudes.iter().skip(modes).map(|b| b * b).sum::<f64>(),
        })
    }
}

/// Stream `index` of the generator seeded by `seed`.
pub fn noise_stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `Σ_j b_j ξ_j √dt e_j` over `j = ±1..±K` with independent standard
/// normal `ξ_j`.
pub fn noise_increment(b: &[f64], grid: usize, dt: f64, rng: &mut impl Rng) -> Result<FourierField> {
    if !(dt >= 0.0) {
        return Err(Error::Domain(format!("time step must be >= 0, got {dt}")));
    }
    let mut f = FourierField::zeros(b.len(), grid)?;
    let s = dt.sqrt();
    for (p, bj) in f.pairs_mut().iter_mut().zip(b) {
        let (x, y): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
        if dt > 0.0 {
            *p = [bj * s * x, bj * s * y];
        }
    }
    Ok(f)
}

/// Variance added to each real coefficient of mode `k` over one step: the
/// exact Ornstein–Uhlenbeck increment `ε b² (1 − e^{−2γ dt})/(2γ)` with
/// `γ = ε(2πk)²`.
pub fn step_variance(b: f64, k: usize, eps: f64, dt: f64) -> f64 {
    let gamma = eps * (2.0 * PI * k as f64).powi(2);
    let x = 2.0 * gamma * dt;
    if x < 1e-12 {
        eps * b * b * dt
    } else {
        eps * b * b * (-(-x).exp_m1()) / (2.0 * gamma)
    }
}

/// Deterministic ETDRK4 step with damping `ε u_xx`, followed by the noise
/// increment of the linear damped equation sampled from its exact law.
/// The increment covariance is isotropic in each `(û_k, û_{−k})` pair, so
/// the dispersive rotation over the step does not change it.
#[derive(Clone, Debug)]
pub struct StochasticStepper {
    det: Stepper,
    std: Vec<f64>,
    rng: ChaCha8Rng,
    active: bool,
}

impl StochasticStepper {
    pub fn new(modes: usize, grid: usize, dt: f64, eps: f64, noise: &NoiseSpec, stream: u64) -> Result<Self> {
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(Error::Domain(format!("eps must be finite and >= 0, got {eps}")));
        }
        let b = noise.amplitudes(modes)?;
        let det = Stepper::new(modes, grid, dt, &Perturbation::dissipative(eps))?;
        let std = b
            .iter()
            .enumerate()
            .map(|(i, &bj)| step_variance(bj, i + 1, eps, dt).sqrt())
            .collect();
        Ok(StochasticStepper { det, std, rng: noise_stream(noise.seed, stream), active: eps > 0.0 })
    }

    /// Drops the `6uu_x` term.
    pub fn linear_only(mut self) -> Self {
        self.det = self.det.linear_only();
        self
    }

    pub fn dt(&self) -> f64 {
        self.det.dt()
    }

    pub fn advance(&mut self, c: &mut [Complex64]) {
        self.det.advance(c);
        if !self.active {
            return;
        }
        // c_k = (û_k − i û_{−k})/√2
        for (ck, s) in c.iter_mut().zip(&self.std) {
            let (x, y): (f64, f64) = (self.rng.sample(StandardNormal), self.rng.sample(StandardNormal));
            *ck += Complex64::new(x, -y) * (s * std::f64::consts::FRAC_1_SQRT_2);
        }
    }
}

/// Time step that divides the linear period `2π/(2πn)³` of mode `n` into
/// `steps` equal parts.
pub fn stroboscopic_dt(n: usize, steps: usize) -> f64 {
    2.0 * PI / (2.0 * PI * n as f64).powi(3) / steps as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    pub eps: f64,
    /// Final slow time; the fast horizon is `t_slow/ε`.
    pub t_slow: f64,
    pub dt: f64,
    pub realizations: usize,
    /// Steps between samples.
    pub sample_every: usize,
    /// Number of proxy actions recorded at every sample.
    #[serde(default = "default_proxy_modes")]
    pub proxy_modes: usize,
    /// Modes whose angle proxy is recorded.
    #[serde(default)]
    pub angle_modes: Vec<usize>,
    /// Full spectral actions `I_1..I_n` at every sample (expensive).
    #[serde(default)]
    pub actions_n_max: Option<usize>,
    #[serde(default = "default_true")]
    pub nonlinear: bool,
}

fn default_proxy_modes() -> usize {
    4
}

fn default_true() -> bool {
    true
}

impl EnsembleSpec {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = vec![];
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            errs.push(format!("ensemble eps must be > 0, got {}", self.eps));
        }
        if !(self.t_slow >= 0.0 && self.t_slow.is_finite()) {
            errs.push(format!("t_slow must be >= 0, got {}", self.t_slow));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            errs.push(format!("dt must be > 0, got {}", self.dt));
        }
        if self.realizations == 0 {
            errs.push("realizations must be >= 1".into());
        }
        if self.sample_every == 0 {
            errs.push("sample_every must be >= 1".into());
        }
        errs
    }

    /// Number of fast steps to reach `t_slow`.
    pub fn steps(&self) -> usize {
        (self.t_slow / self.eps / self.dt).round() as usize
    }
}

/// One realization's sampled observables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealizationDigest {
    pub index: usize,
    /// `[sample][mode]`.
    pub proxy: Vec<Vec<f64>>,
    pub actions: Option<Vec<Vec<f64>>>,
    /// `[sample][angle mode]`; `None` where the pair is below the floor.
    pub angles: Vec<Vec<Option<f64>>>,
    /// `(||u||_0², ||u_x||²)` at every sample.
    pub energy: Vec<[f64; 2]>,
    pub abort: Option<String>,
}

pub const QUANTILES: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 0.9];

/// Cross-realization statistics of one observable along the slow grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeStats {
    pub mode: usize,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// `[sample][QUANTILES index]`.
    pub quantiles: Vec<[f64; 5]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub spec: EnsembleSpec,
    pub noise: NoiseSpec,
    pub taus: Vec<f64>,
    pub digests: Vec<RealizationDigest>,
    pub completed: usize,
    pub proxy_stats: Vec<ModeStats>,
    pub action_stats: Option<Vec<ModeStats>>,
    pub neglected_mass: f64,
}

/// Type-7 quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.len() == 1 {
        return sorted[0];
    }
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn stats_of(series: &[&Vec<Vec<f64>>], modes: usize, samples: usize) -> Vec<ModeStats> {
    (0..modes)
        .map(|m| {
            let mut st = ModeStats { mode: m + 1, mean: vec![], variance: vec![], quantiles: vec![] };
            for s in 0..samples {
                let mut v: Vec<f64> = series.iter().map(|d| d[s][m]).collect();
                let n = v.len() as f64;
                let mean = v.iter().sum::<f64>() / n;
                let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
                v.sort_by(f64::total_cmp);
                st.mean.push(mean);
                st.variance.push(var);
                st.quantiles.push(QUANTILES.map(|q| quantile(&v, q)));
            }
            st
        })
        .collect()
}

impl EnsembleResult {
    fn complete(&self) -> impl Iterator<Item = &RealizationDigest> {
        self.digests.iter().filter(|d| d.abort.is_none())
    }

    /// Recomputes the statistics from the digests.
    pub fn recompute_stats(&mut self) {
        let samples = self.taus.len();
        let proxy: Vec<&Vec<Vec<f64>>> = self.complete().map(|d| &d.proxy).collect();
        let acts: Option<Vec<&Vec<Vec<f64>>>> = self.complete().map(|d| d.actions.as_ref()).collect();
        let completed = proxy.len();
        let (ps, acs) = if proxy.is_empty() {
            (vec![], None)
        } else {
            let ac = match (acts, self.spec.actions_n_max) {
                (Some(a), Some(n)) => Some(stats_of(&a, n, samples)),
                _ => None,
            };
            (stats_of(&proxy, self.spec.proxy_modes, samples), ac)
        };
        self.completed = completed;
        self.proxy_stats = ps;
        self.action_stats = acs;
    }

    /// CSV rows `(tau, realization, I_1.., proxy_I_1.., angle_1..)`.
    pub fn to_csv(&self) -> String {
        let n_act = self.spec.actions_n_max.unwrap_or(0);
        let mut head = vec!["tau".to_string(), "realization".into()];
        head.extend((1..=n_act).map(|j| format!("I_{j}")));
        head.extend((1..=self.spec.proxy_modes).map(|j| format!("proxy_I_{j}")));
        head.extend(self.spec.angle_modes.iter().map(|j| format!("angle_{j}")));
        let mut out = head.join(",");
        out.push('\n');
        for d in &self.digests {
            for (s, tau) in self.taus.iter().enumerate().take(d.proxy.len()) {
                let mut row = vec![crate::io::fmt_float(*tau), d.index.to_string()];
                if let Some(a) = &d.actions {
                    row.extend(a[s].iter().map(|v| crate::io::fmt_float(*v)));
                }
                row.extend(d.proxy[s].iter().map(|v| crate::io::fmt_float(*v)));
                row.extend(d.angles[s].iter().map(|a| a.map_or(String::new(), crate::io::fmt_float)));
                out.push_str(&row.join(","));
                out.push('\n');
            }
        }
        out
    }
}

fn run_realization(u0: &FourierField, spec: &EnsembleSpec, noise: &NoiseSpec, index: usize) -> Result<RealizationDigest> {
    let mut st = StochasticStepper::new(u0.modes(), u0.grid_size(), spec.dt, spec.eps, noise, index as u64)?;
    if !spec.nonlinear {
        st = st.linear_only();
    }
    let mut d = RealizationDigest {
        index,
        proxy: vec![],
        actions: spec.actions_n_max.map(|_| vec![]),
        angles: vec![],
        energy: vec![],
        abort: None,
    };
    let record = |u: &FourierField, d: &mut RealizationDigest| -> Result<()> {
        d.proxy.push(proxy_actions(u, spec.proxy_modes));
        if let (Some(n), Some(a)) = (spec.actions_n_max, d.actions.as_mut()) {
            a.push(actions(u, n)?.values);
        }
        d.angles.push(spec.angle_modes.iter().map(|&n| angle_proxy(u, n).ok()).collect());
        d.energy.push([u.inner(u), u.sobolev_norm_sq_unchecked(1.0)]);
        Ok(())
    };
    record(u0, &mut d)?;
    let ceiling = Ceiling::for_initial(u0);
    let mut c = u0.to_complex();
    let grid = u0.grid_size();
    let steps = spec.steps();
    for i in 1..=steps {
        st.advance(&mut c);
        if i % spec.sample_every == 0 {
            let t = i as f64 * spec.dt;
            let res = ceiling.check(t, &c).and_then(|_| {
                let u = FourierField::from_complex(&c, grid)?;
                record(&u, &mut d)
            });
            if let Err(e) = res {
                d.abort = Some(e.to_string());
                break;
            }
        }
    }
    Ok(d)
}

/// Runs `spec.realizations` independent paths from `u0`. Realization `r`
/// draws from stream `r` of the master seed, so the result does not depend
/// on scheduling. Fails when fewer than 80% of the paths complete.
pub fn ensemble(u0: &FourierField, spec: &EnsembleSpec, noise: &NoiseSpec) -> Result<EnsembleResult> {
    let mut errs = spec.validate();
    errs.extend(noise.validate());
    if let Some(m) = spec.angle_modes.iter().find(|m| **m == 0 || **m > u0.modes()) {
        errs.push(format!("angle mode {m} outside 1..={}", u0.modes()));
    }
    if spec.proxy_modes > u0.modes() {
        errs.push(format!("proxy_modes {} exceeds K = {}", spec.proxy_modes, u0.modes()));
    }
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let steps = spec.steps();
    let taus: Vec<f64> = (0..=steps)
        .step_by(spec.sample_every)
        .map(|i| i as f64 * spec.dt * spec.eps)
        .collect();
    let digests = (0..spec.realizations)
        .into_par_iter()
        .map(|r| run_realization(u0, spec, noise, r))
        .collect::<Result<Vec<_>>>()?;
    let mut res = EnsembleResult {
        spec: spec.clone(),
        noise: noise.clone(),
        taus,
        digests,
        completed: 0,
        proxy_stats: vec![],
        action_stats: None,
        neglected_mass: noise.neglected_mass(u0.modes())?,
    };
    res.recompute_stats();
    if 5 * res.completed < 4 * spec.realizations {
        let first = res.digests.iter().find_map(|d| d.abort.clone()).unwrap_or_default();
        return Err(Error::Domain(format!(
            "only {}/{} realizations completed (first abort: {first})",
            res.completed, spec.realizations
        )));
    }
    Ok(res)
}

/// Largest gap between matching quantile curves of one proxy action in two
/// ensembles sampled on the same slow grid.
pub fn law_distance(a: &EnsembleResult, b: &EnsembleResult, mode: usize) -> Result<f64> {
    if a.taus.len() != b.taus.len() || a.taus.iter().zip(&b.taus).any(|(x, y)| (x - y).abs() > 1e-9 * (1.0 + x.abs())) {
        return Err(Error::Domain("ensembles are sampled on different slow grids".into()));
    }
    let (sa, sb) = match (a.proxy_stats.get(mode - 1), b.proxy_stats.get(mode - 1)) {
        (Some(x), Some(y)) => (x, y),
        _ => return Err(Error::Domain(format!("mode {mode} not recorded"))),
    };
    Ok(sa.quantiles
        .iter()
        .zip(&sb.quantiles)
        .flat_map(|(p, q)| p.iter().zip(q).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max))
}

/// Weighted angle histogram against the uniform law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformityReport {
    pub mode: usize,
    /// Normalized bin masses.
    pub histogram: Vec<f64>,
    /// `½ Σ |p_b − 1/B|`.
    pub tv: f64,
    /// Weight carried by samples with undefined angle.
    pub excluded_mass: f64,
    /// `(Σw)²/Σw²` over the included samples.
    pub effective_samples: f64,
    /// Expected distance of an exactly uniform sample of that size.
    pub noise_floor: f64,
}

/// Weighted histogram of angles in `[0, 2π)` on `bins` equal bins.
pub fn histogram_tv(angles: &[(f64, f64)], bins: usize) -> Result<UniformityReport> {
    if bins < 2 {
        return Err(Error::Domain("need at least two bins".into()));
    }
    let mut h = vec![0.0; bins];
    let (mut sw, mut sw2) = (0.0, 0.0);
    for &(a, w) in angles {
        if !(w >= 0.0) || !a.is_finite() {
            return Err(Error::Domain(format!("bad angle sample ({a}, {w})")));
        }
        let b = ((a.rem_euclid(2.0 * PI) / (2.0 * PI)) * bins as f64) as usize;
        h[b.min(bins - 1)] += w;
        sw += w;
        sw2 += w * w;
    }
    if sw <= 0.0 {
        return Err(Error::Domain("no angle mass to histogram".into()));
    }
    for v in h.iter_mut() {
        *v /= sw;
    }
    let u = 1.0 / bins as f64;
    let tv = 0.5 * h.iter().map(|p| (p - u).abs()).sum::<f64>();
    let n = sw * sw / sw2;
    // E|p̂ − p| ≈ √(2p(1 − p)/(πn)) per bin.
    let floor = 0.5 * bins as f64 * (2.0 * u * (1.0 - u) / (PI * n)).sqrt();
    Ok(UniformityReport { mode: 0, histogram: h, tv, excluded_mass: 0.0, effective_samples: n, noise_floor: floor })
}

/// `f(τ) ∝ e^{−τ/scale}` normalized to unit trapezoidal mass on `taus`.
pub fn exponential_weight(taus: &[f64], scale: f64) -> Vec<f64> {
    let f: Vec<f64> = taus.iter().map(|t| (-t / scale).exp()).collect();
    let mass = trapezoid_weights(taus).iter().zip(&f).map(|(w, v)| w * v).sum::<f64>();
    f.into_iter().map(|v| v / mass).collect()
}

fn trapezoid_weights(taus: &[f64]) -> Vec<f64> {
    let n = taus.len();
    (0..n)
        .map(|i| {
            let l = if i > 0 { taus[i] - taus[i - 1] } else { 0.0 };
            let r = if i + 1 < n { taus[i + 1] - taus[i] } else { 0.0 };
            0.5 * (l + r)
        })
        .collect()
}

/// `f`-weighted time-and-ensemble histogram of the angle proxy of `mode`.
/// `weight` holds `f(τ_i)` on the slow grid and must integrate to one.
pub fn angle_equidistribution(result: &EnsembleResult, mode: usize, weight: &[f64], bins: usize) -> Result<UniformityReport> {
    let col = result
        .spec
        .angle_modes
        .iter()
        .position(|m| *m == mode)
        .ok_or_else(|| Error::Domain(format!("angle of mode {mode} not recorded")))?;
    if weight.len() != result.taus.len() {
        return Err(Error::Domain(format!("weight has {} values for {} samples", weight.len(), result.taus.len())));
    }
    if weight.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(Error::Domain("weight must be finite and >= 0".into()));
    }
    let tw = trapezoid_weights(&result.taus);
    let mass: f64 = tw.iter().zip(weight).map(|(a, b)| a * b).sum();
    if (mass - 1.0).abs() > 1e-6 {
        return Err(Error::Domain(format!("weight integrates to {mass}, not 1")));
    }
    let mut samples = vec![];
    let mut excluded = 0.0;
    let mut total = 0.0;
    for d in result.complete() {
        for (s, row) in d.angles.iter().enumerate() {
            let w = tw[s] * weight[s];
            total += w;
            match row[col] {
                Some(a) => samples.push((a, w)),
                None => excluded += w,
            }
        }
    }
    let mut rep = histogram_tv(&samples, bins)?;
    rep.mode = mode;
    rep.excluded_mass = if total > 0.0 { excluded / total } else { 0.0 };
    Ok(rep)
}

/// Sample variance of one real coefficient against the exact law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceCheck {
    pub mode: usize,
    pub sample: f64,
    pub exact: f64,
    pub std_error: f64,
}

impl VarianceCheck {
    pub fn z_score(&self) -> f64 {
        (self.sample - self.exact) / self.std_error
    }
}

/// Linear damped-forced equation from `u = 0` to fast time `t`: compares the
/// pooled variance of `û_{±j}` over `m` paths with
/// `ε b_j² (1 − e^{−2γt})/(2γ)`, whose limit is `b_j²/(2(2πj)²)`.
pub fn ou_calibration(noise: &NoiseSpec, modes: usize, eps: f64, t: f64, dt: f64, m: usize) -> Result<Vec<VarianceCheck>> {
    if m < 2 {
        return Err(Error::Domain("need at least two paths".into()));
    }
    let grid = crate::grid::min_grid(modes);
    let steps = (t / dt).round() as usize;
    let b = noise.amplitudes(modes)?;
    let finals = (0..m)
        .into_par_iter()
        .map(|r| {
            let mut st = StochasticStepper::new(modes, grid, dt, eps, noise, r as u64)?.linear_only();
            let mut c = vec![Complex64::new(0.0, 0.0); modes];
            for _ in 0..steps {
                st.advance(&mut c);
            }
            Ok(FourierField::from_complex(&c, grid)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((1..=modes)
        .map(|j| {
            let xs: Vec<f64> = finals.iter().flat_map(|u| [u.get(j as i64), u.get(-(j as i64))]).collect();
            let n = xs.len() as f64;
            // Known zero mean.
            let sample = xs.iter().map(|x| x * x).sum::<f64>() / n;
            let exact = step_variance(b[j - 1], j, eps, steps as f64 * dt);
            VarianceCheck { mode: j, sample, exact, std_error: exact * (2.0 / n).sqrt() }
        })
        .collect())
}

/// Itô energy balance `dE||u||²/dτ = −2E||u_x||² + Σ b_j²` over the sampled
/// window, per realization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    /// Mean over paths of `Δ||u||² + 2∫||u_x||² dτ − Δτ Σ b_j²`.
    pub residual: f64,
    /// Standard error of that mean.
    pub std_error: f64,
    pub forcing_power: f64,
}

pub fn energy_balance(result: &EnsembleResult, modes: usize) -> Result<BalanceReport> {
    let power = result.noise.forcing_power(modes)?;
    let tw = trapezoid_weights(&result.taus);
    let span = result.taus.last().copied().unwrap_or(0.0) - result.taus[0];
    let xs: Vec<f64> = result
        .complete()
        .map(|d| {
            let e = &d.energy;
            let diss: f64 = e.iter().zip(&tw).map(|(v, w)| v[1] * w).sum();
            e[e.len() - 1][0] - e[0][0] + 2.0 * diss - span * power
        })
        .collect();
    if xs.len() < 2 {
        return Err(Error::Domain("need at least two completed paths".into()));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(BalanceReport { residual: mean, std_error: (var / n).sqrt(), forcing_power: power })
}

/// True when every entry is strictly below its predecessor.
pub fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kdvflow::step;

    fn spec() -> NoiseSpec {
        NoiseSpec::power(0.5, 2.0, 7)
    }

    #[test]
    fn zero_step_gives_zero_increment() {
        let mut rng = noise_stream(1, 0);
        assert!(noise_increment(&[1.0, 0.5], 8, 0.0, &mut rng).unwrap().is_zero());
    }

    #[test]
    fn increment_variance_matches() {
        let b = [0.7, 0.2];
        let dt = 1e-3;
        let mut rng = noise_stream(3, 0);
        let n = 100_000;
        let mut acc = [0.0; 2];
        for _ in 0..n {
            let f = noise_increment(&b, 8, dt, &mut rng).unwrap();
            acc[0] += f.get(1).powi(2);
            acc[1] += f.get(-2).powi(2);
        }
        for (i, bj) in b.iter().enumerate() {
            let exact = bj * bj * dt;
            let se = exact * (2.0 / n as f64).sqrt();
            assert!((acc[i] / n as f64 - exact).abs() < 3.0 * se);
        }
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let b = [1.0; 4];
        let x = noise_increment(&b, 16, 1.0, &mut noise_stream(5, 0)).unwrap();
        let y = noise_increment(&b, 16, 1.0, &mut noise_stream(5, 0)).unwrap();
        let z = noise_increment(&b, 16, 1.0, &mut noise_stream(6, 0)).unwrap();
        let w = noise_increment(&b, 16, 1.0, &mut noise_stream(5, 1)).unwrap();
        assert_eq!(x, y);
        assert_ne!(x, z);
        assert_ne!(x, w);
    }

    #[test]
    fn zero_eps_is_the_deterministic_step() {
        let u = FourierField::with_modes(8, 32, &[(1, 0.3), (-3, 0.1)]).unwrap();
        let mut st = StochasticStepper::new(8, 32, 1e-4, 0.0, &spec(), 0).unwrap();
        let mut c = u.to_complex();
        st.advance(&mut c);
        let a = FourierField::from_complex(&c, 32).unwrap();
        assert_eq!(a, step(&u, 1e-4, &Perturbation::none()).unwrap());
    }

    #[test]
    fn validation_rejects_slow_decay_and_nonpositive_amplitudes() {
        assert!(!NoiseSpec::power(1.0, 1.0, 0).validate().is_empty());
        let e = NoiseSpec { law: NoiseLaw::Explicit { amplitudes: vec![1.0, 0.0] }, seed: 0 };
        assert!(!e.validate().is_empty());
    }

    #[test]
    fn neglected_mass_matches_direct_sum() {
        let s = NoiseSpec::power(1.0, 2.0, 0);
        let direct: f64 = 2.0 * (9..2_000_000).map(|j| (j as f64).powi(-4)).sum::<f64>();
        assert!((s.neglected_mass(8).unwrap() - direct).abs() < 1e-15);
    }

    #[test]
    fn step_variance_limits() {
        // Long steps saturate at the stationary variance b²/(2(2πk)²).
        let v = step_variance(0.5, 2, 0.1, 1e4);
        assert!((v - 0.25 / (2.0 * (4.0 * PI).powi(2))).abs() < 1e-15);
        assert_eq!(step_variance(0.5, 1, 1e-20, 1e-3), 1e-20 * 0.25 * 1e-3);
    }

    #[test]
    fn ou_variance_law() {
        let checks = ou_calibration(&spec(), 4, 0.05, 20.0, 0.01, 200).unwrap();
        for c in &checks {
            assert!(c.z_score().abs() < 3.0, "{c:?}");
        }
    }

    #[test]
    fn ensemble_is_reproducible_and_single_path_stats() {
        let u = FourierField::with_modes(4, 16, &[(1, 0.2)]).unwrap();
        let es = EnsembleSpec {
            eps: 0.01,
            t_slow: 0.002,
            dt: 1e-3,
            realizations: 3,
            sample_every: 50,
            proxy_modes: 2,
            angle_modes: vec![1],
            actions_n_max: None,
            nonlinear: true,
        };
        let a = ensemble(&u, &es, &spec()).unwrap();
        let b = ensemble(&u, &es, &spec()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.taus.len(), 5);
        let one = ensemble(&u, &EnsembleSpec { realizations: 1, ..es }, &spec()).unwrap();
        let st = &one.proxy_stats[0];
        for (s, q) in st.quantiles.iter().enumerate() {
            let v = one.digests[0].proxy[s][0];
            assert_eq!(st.mean[s], v);
            assert!(q.iter().all(|x| *x == v));
        }
        assert_eq!(a.digests[0], one.digests[0]);
    }

    #[test]
    fn histogram_calibration() {
        let n = 20_000;
        let uni: Vec<(f64, f64)> = (0..n).map(|i| ((i as f64 + 0.5) * 2.0 * PI / n as f64, 1.0)).collect();
        assert!(histogram_tv(&uni, 16).unwrap().tv < 1e-12);
        let mut rng = noise_stream(11, 0);
        let rnd: Vec<(f64, f64)> = (0..n).map(|_| (rng.random::<f64>() * 2.0 * PI, 1.0)).collect();
        let r = histogram_tv(&rnd, 16).unwrap();
        assert!(r.tv < 3.0 * r.noise_floor, "{r:?}");
        let point: Vec<(f64, f64)> = (0..n).map(|_| (1.0, 1.0)).collect();
        assert!((histogram_tv(&point, 16).unwrap().tv - (1.0 - 1.0 / 16.0)).abs() < 1e-12);
    }

    #[test]
    fn exponential_weight_has_unit_mass() {
        let taus: Vec<f64> = (0..=100).map(|i| i as f64 * 0.005).collect();
        let w = exponential_weight(&taus, 0.05);
        let m: f64 = trapezoid_weights(&taus).iter().zip(&w).map(|(a, b)| a * b).sum();
        assert!((m - 1.0).abs() < 1e-12);
    }
}
