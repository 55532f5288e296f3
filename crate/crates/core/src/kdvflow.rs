//! Pseudospectral integration of KdV and its deterministic perturbations
//!
//! ```text
//! u_t = -u_xxx + 6 u u_x + ε·f(u)
//! ```
//!
//! The stiff linear part (and the dissipative channel `ε u_xx`) is solved
//! exactly in coefficient space; the rest goes through the 4th-order
//! exponential time-differencing scheme of Cox and Matthews (ETDRK4).

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{fft_forward, fft_inverse, FourierField};

/// Pointwise nonlinearity `g` used by the smoothing channel `f(u) = κ * g(u)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    Square,
    Cube,
    Sine,
}

impl Nonlinearity {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Nonlinearity::Square => v * v,
            Nonlinearity::Cube => v * v * v,
            Nonlinearity::Sine => v.sin(),
        }
    }

    pub fn derivative(self, v: f64) -> f64 {
        match self {
            Nonlinearity::Square => 2.0 * v,
            Nonlinearity::Cube => 3.0 * v * v,
            Nonlinearity::Sine => v.cos(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PerturbationKind {
    None,
    /// `f(u) = u_xx`.
    Dissipative,
    /// `f(u) = force(x)`, independent of the state.
    ExternalForce { force: FourierField },
    /// `f(u) = κ * g(u)` with `κ̂_k = e^{-decay·|k|}` (unit mass).
    SmoothingMap { decay: f64, nonlinearity: Nonlinearity },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "PerturbationRepr", from = "PerturbationRepr")]
pub struct Perturbation {
    pub kind: PerturbationKind,
    pub eps: f64,
}

/// Flat on-disk form, e.g. `{"kind": "dissipative", "eps": 0.01}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum PerturbationRepr {
    None {
        #[serde(default)]
        eps: f64,
    },
    Dissipative {
        eps: f64,
    },
    ExternalForce {
        eps: f64,
        force: FourierField,
    },
    SmoothingMap {
        eps: f64,
        decay: f64,
        nonlinearity: Nonlinearity,
    },
}

impl From<Perturbation> for PerturbationRepr {
    fn from(p: Perturbation) -> Self {
        let eps = p.eps;
        match p.kind {
            PerturbationKind::None => PerturbationRepr::None { eps },
            PerturbationKind::Dissipative => PerturbationRepr::Dissipative { eps },
            PerturbationKind::ExternalForce { force } => PerturbationRepr::ExternalForce { eps, force },
            PerturbationKind::SmoothingMap { decay, nonlinearity } => PerturbationRepr::SmoothingMap { eps, decay, nonlinearity },
        }
    }
}

impl From<PerturbationRepr> for Perturbation {
    fn from(r: PerturbationRepr) -> Self {
        match r {
            PerturbationRepr::None { eps } => Perturbation { kind: PerturbationKind::None, eps },
            PerturbationRepr::Dissipative { eps } => Perturbation::dissipative(eps),
            PerturbationRepr::ExternalForce { eps, force } => Perturbation::external_force(eps, force),
            PerturbationRepr::SmoothingMap { eps, decay, nonlinearity } => Perturbation::smoothing_map(eps, decay, nonlinearity),
        }
    }
}

impl Perturbation {
    pub fn none() -> Self {
        Perturbation { kind: PerturbationKind::None, eps: 0.0 }
    }

    pub fn dissipative(eps: f64) -> Self {
        Perturbation { kind: PerturbationKind::Dissipative, eps }
    }

    pub fn external_force(eps: f64, force: FourierField) -> Self {
        Perturbation { kind: PerturbationKind::ExternalForce { force }, eps }
    }

    pub fn smoothing_map(eps: f64, decay: f64, nonlinearity: Nonlinearity) -> Self {
        Perturbation { kind: PerturbationKind::SmoothingMap { decay, nonlinearity }, eps }
    }

    /// `ε = 0` behaves as no perturbation regardless of kind.
    pub fn is_active(&self) -> bool {
        self.eps != 0.0 && self.kind != PerturbationKind::None
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = vec![];
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            errs.push(format!("perturbation eps must be finite and >= 0, got {}", self.eps));
        }
        if let PerturbationKind::SmoothingMap { decay, .. } = self.kind {
            if !(decay > 0.0 && decay.is_finite()) {
                errs.push(format!("smoothing kernel decay must be > 0, got {decay}"));
            }
        }
        errs
    }

    /// The perturbation vector field `f(u)` (without the factor `ε`).
    pub fn field(&self, u: &FourierField) -> Result<FourierField> {
        match &self.kind {
            PerturbationKind::None => Ok(FourierField::zeros(u.modes(), u.grid_size())?),
            PerturbationKind::Dissipative => Ok(u.derivative(2)),
            PerturbationKind::ExternalForce { force } => Ok(force.resized(u.modes(), u.grid_size())?),
            PerturbationKind::SmoothingMap { decay, nonlinearity } => {
                let mut f = u.map_pointwise(|v| nonlinearity.apply(v)).field;
                for (i, p) in f.pairs_mut().iter_mut().enumerate() {
                    let w = (-decay * (i + 1) as f64).exp();
                    p[0] *= w;
                    p[1] *= w;
                }
                Ok(f)
            }
        }
    }
}

/// `H(u) = ∫ (u_x²/2 + u³) dx`.
pub fn hamiltonian(u: &FourierField) -> f64 {
    let s = u.synthesize();
    let cubic = s.iter().map(|v| v * v * v).sum::<f64>() / s.len() as f64;
    0.5 * u.sobolev_norm_sq_unchecked(1.0) + cubic
}

/// Default step: a fraction of the nonlinear CFL time of the top mode.
pub fn default_dt(u: &FourierField) -> f64 {
    let k = u.modes() as f64;
    let amp = u.synthesize().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    (0.05 / (2.0 * PI * k * (6.0 * amp + 1.0))).min(2.5e-4)
}

/// Exponential time-differencing RK4 stepper with fixed `dt`.
#[derive(Clone, Debug)]
pub struct Stepper {
    modes: usize,
    grid: usize,
    dt: f64,
    nonlinear: bool,
    coef: EtdCoefficients,
    forcing: Option<Vec<Complex64>>,
    smoothing: Option<(Vec<f64>, Nonlinearity)>,
    buf: Vec<Complex64>,
}

/// Per-mode ETDRK4 weights for `c' = L c + N(c)` with diagonal `L`.
#[derive(Clone, Debug)]
struct EtdCoefficients {
    e: Vec<Complex64>,
    e2: Vec<Complex64>,
    q: Vec<Complex64>,
    f1: Vec<Complex64>,
    f2: Vec<Complex64>,
    f3: Vec<Complex64>,
}

impl EtdCoefficients {
    /// φ-type weights averaged over a unit circle around `hL`, which avoids
    /// the cancellation of the closed forms near `hL = 0`.
    fn new(symbols: &[Complex64], h: f64) -> Self {
        const M: usize = 64;
        let roots: Vec<Complex64> =
            (0..M).map(|j| Complex64::from_polar(1.0, 2.0 * PI * (j as f64 + 0.5) / M as f64)).collect();
        let mut out = EtdCoefficients {
            e: Vec::with_capacity(symbols.len()),
            e2: Vec::with_capacity(symbols.len()),
            q: Vec::with_capacity(symbols.len()),
            f1: Vec::with_capacity(symbols.len()),
            f2: Vec::with_capacity(symbols.len()),
            f3: Vec::with_capacity(symbols.len()),
        };
        for &l in symbols {
            let z0 = l * h;
            let (mut q, mut f1, mut f2, mut f3) = (Complex64::default(), Complex64::default(), Complex64::default(), Complex64::default());
            for r in &roots {
                let z = z0 + r;
                let ez = z.exp();
                let z3 = z * z * z;
                q += ((z * 0.5).exp() - 1.0) / z;
                f1 += (-4.0 - z + ez * (4.0 - 3.0 * z + z * z)) / z3;
                f2 += (2.0 + z + ez * (z - 2.0)) / z3;
                f3 += (-4.0 - 3.0 * z - z * z + ez * (4.0 - z)) / z3;
            }
            let w = h / M as f64;
            out.e.push(z0.exp());
            out.e2.push((z0 * 0.5).exp());
            out.q.push(q * w);
            out.f1.push(f1 * w);
            out.f2.push(f2 * w);
            out.f3.push(f3 * w);
        }
        out
    }
}

impl Stepper {
    pub fn new(modes: usize, grid: usize, dt: f64, pert: &Perturbation) -> Result<Stepper> {
        FourierField::zeros(modes, grid)?;
        if !(dt >= 0.0 && dt.is_finite()) {
            return Err(Error::Domain(format!("time step must be finite and >= 0, got {dt}")));
        }
        let errs = pert.validate();
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        let eps = if pert.is_active() { pert.eps } else { 0.0 };
        let damp = matches!(pert.kind, PerturbationKind::Dissipative) && eps > 0.0;
        let symbols: Vec<Complex64> = (1..=modes)
            .map(|k| {
                let w = 2.0 * PI * k as f64;
                Complex64::new(if damp { -eps * w * w } else { 0.0 }, w * w * w)
            })
            .collect();
        let forcing = match &pert.kind {
            PerturbationKind::ExternalForce { force } if eps > 0.0 => {
                let f = force.resized(modes, grid)?.to_complex();
                Some(f.into_iter().map(|z| z * eps).collect())
            }
            _ => None,
        };
        let smoothing = match pert.kind {
            PerturbationKind::SmoothingMap { decay, nonlinearity } if eps > 0.0 => Some((
                (1..=modes).map(|k| eps * (-decay * k as f64).exp()).collect(),
                nonlinearity,
            )),
            _ => None,
        };
        Ok(Stepper {
            modes,
            grid,
            dt,
            nonlinear: true,
            coef: EtdCoefficients::new(&symbols, dt),
            forcing,
            smoothing,
            buf: vec![Complex64::new(0.0, 0.0); grid],
        })
    }

    /// Drops the `6uu_x` term, leaving the linear (perturbed) Airy flow.
    pub fn linear_only(mut self) -> Self {
        self.nonlinear = false;
        self
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    /// Non-stiff right-hand side in complex coefficients.
    fn rhs(&mut self, c: &[Complex64], out: &mut [Complex64]) {
        if !self.nonlinear && self.smoothing.is_none() {
            for o in out.iter_mut() {
                *o = Complex64::new(0.0, 0.0);
            }
            if let Some(f) = &self.forcing {
                out.copy_from_slice(f);
            }
            return;
        }
        let n = self.grid;
        let adv = if self.nonlinear { 6.0 * PI } else { 0.0 };
        for z in self.buf.iter_mut() {
            *z = Complex64::new(0.0, 0.0);
        }
        for (k, ck) in c.iter().enumerate() {
            self.buf[k + 1] = *ck;
            self.buf[n - k - 1] = ck.conj();
        }
        fft_inverse(&mut self.buf);
        let inv = 1.0 / n as f64;
        match &self.smoothing {
            Some((_, g)) => {
                // Pack u² and g(u) into one complex transform.
                for z in self.buf.iter_mut() {
                    let v = z.re;
                    *z = Complex64::new(v * v, g.apply(v));
                }
                fft_forward(&mut self.buf);
                let w = &self.smoothing.as_ref().unwrap().0;
                for k in 1..=self.modes {
                    let a = self.buf[k];
                    let b = self.buf[n - k].conj();
                    let sq = (a + b) * 0.5 * inv;
                    let gk = (a - b) * Complex64::new(0.0, -0.5) * inv;
                    out[k - 1] = Complex64::new(0.0, adv * k as f64) * sq + gk * w[k - 1];
                }
            }
            None => {
                for z in self.buf.iter_mut() {
                    *z = Complex64::new(z.re * z.re, 0.0);
                }
                fft_forward(&mut self.buf);
                for k in 1..=self.modes {
                    out[k - 1] = Complex64::new(0.0, adv * k as f64) * self.buf[k] * inv;
                }
            }
        }
        if let Some(f) = &self.forcing {
            for (o, fk) in out.iter_mut().zip(f) {
                *o += fk;
            }
        }
    }

    /// Advances complex coefficients `c_1..c_K` by one ETDRK4 step.
    pub fn advance(&mut self, c: &mut [Complex64]) {
        let m = self.modes;
        let zero = Complex64::new(0.0, 0.0);
        let (mut nv, mut na, mut nb, mut nc) = (vec![zero; m], vec![zero; m], vec![zero; m], vec![zero; m]);
        let mut a = vec![zero; m];
        let mut tmp = vec![zero; m];
        self.rhs(c, &mut nv);
        {
            let k = &self.coef;
            for i in 0..m {
                a[i] = k.e2[i] * c[i] + k.q[i] * nv[i];
            }
        }
        self.rhs(&a, &mut na);
        {
            let k = &self.coef;
            for i in 0..m {
                tmp[i] = k.e2[i] * c[i] + k.q[i] * na[i];
            }
        }
        self.rhs(&tmp, &mut nb);
        {
            let k = &self.coef;
            for i in 0..m {
                tmp[i] = k.e2[i] * a[i] + k.q[i] * (2.0 * nb[i] - nv[i]);
            }
        }
        self.rhs(&tmp, &mut nc);
        let k = &self.coef;
        for i in 0..m {
            c[i] = k.e[i] * c[i] + k.f1[i] * nv[i] + 2.0 * k.f2[i] * (na[i] + nb[i]) + k.f3[i] * nc[i];
        }
    }

    pub fn step_field(&mut self, u: &FourierField) -> Result<FourierField> {
        let mut c = u.resized(self.modes, self.grid)?.to_complex();
        self.advance(&mut c);
        Ok(FourierField::from_complex(&c, self.grid)?)
    }
}

/// One step of the (perturbed) flow.
pub fn step(u: &FourierField, dt: f64, pert: &Perturbation) -> Result<FourierField> {
    Stepper::new(u.modes(), u.grid_size(), dt, pert)?.step_field(u)
}

pub(crate) fn h1_norm_complex(c: &[Complex64]) -> f64 {
    // ||u||_1² = 2 Σ (2πk)² |c_k|²
    (2.0 * c
        .iter()
        .enumerate()
        .map(|(i, z)| (2.0 * PI * (i + 1) as f64).powi(2) * z.norm_sqr())
        .sum::<f64>())
    .sqrt()
}

/// Blow-up guard: `||u||_1` above `factor × initial ||u||_1` aborts.
#[derive(Clone, Copy, Debug)]
pub struct Ceiling {
    pub value: f64,
}

impl Ceiling {
    pub const FACTOR: f64 = 1e6;

    pub fn for_initial(u0: &FourierField) -> Self {
        let n = u0.sobolev_norm_sq_unchecked(1.0).sqrt();
        Ceiling { value: Self::FACTOR * n.max(1e-300) }
    }

    pub fn check(&self, t: f64, c: &[Complex64]) -> Result<()> {
        let n = h1_norm_complex(c);
        if !n.is_finite() || n > self.value {
            return Err(Error::BlowUp { t, norm: n, ceiling: self.value });
        }
        Ok(())
    }
}

/// What to record along a trajectory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Observables {
    /// Sobolev indices `p` for `||u||_p` columns.
    pub sobolev: Vec<f64>,
    /// Record `λ_0..λ_{2n}` at every sample.
    pub spectrum_n_max: Option<usize>,
    /// Record `I_1..I_n` at every sample.
    pub actions_n_max: Option<usize>,
    /// Modes whose angle proxy is recorded.
    pub angle_modes: Vec<usize>,
    /// Store the field every this many samples.
    pub checkpoint_every: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub tau: f64,
    pub norm0: f64,
    pub norms: Vec<f64>,
    pub hamiltonian: f64,
    pub lambda: Option<Vec<f64>>,
    pub actions: Option<Vec<f64>>,
    pub angles: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub samples: Vec<Sample>,
    pub sobolev: Vec<f64>,
    pub checkpoints: Vec<(f64, FourierField)>,
    /// Set when the run stopped early.
    pub abort: Option<String>,
}

impl TrajectoryRecord {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut head = vec!["t".to_string(), "tau".into(), "norm0".into()];
        head.extend(self.sobolev.iter().map(|p| format!("norm{p}")));
        head.push("H".into());
        let first = self.samples.first();
        let n_act = first.and_then(|s| s.actions.as_ref()).map_or(0, |a| a.len());
        let n_lam = first.and_then(|s| s.lambda.as_ref()).map_or(0, |a| a.len());
        let n_ang = first.map_or(0, |s| s.angles.len());
        head.extend((1..=n_act).map(|j| format!("I_{j}")));
        head.extend((0..n_lam).map(|j| format!("lambda_{j}")));
        head.extend((1..=n_ang).map(|j| format!("angle_{j}")));
        let mut out = head.join(",");
        out.push('\n');
        for s in &self.samples {
            let mut row = vec![crate::io::fmt_float(s.t), crate::io::fmt_float(s.tau), crate::io::fmt_float(s.norm0)];
            row.extend(s.norms.iter().map(|v| crate::io::fmt_float(*v)));
            row.push(crate::io::fmt_float(s.hamiltonian));
            if let Some(a) = &s.actions {
                row.extend(a.iter().map(|v| crate::io::fmt_float(*v)));
            }
            if let Some(l) = &s.lambda {
                row.extend(l.iter().map(|v| crate::io::fmt_float(*v)));
            }
            row.extend(s.angles.iter().map(|a| a.map_or(String::new(), crate::io::fmt_float)));
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Runs the flow and calls `visit(t, u)` at `t = 0` and every
/// `sample_every` steps (and at the final time). Stops at the first error
/// returned by `visit` or by the blow-up guard.
pub fn evolve_with<F>(u0: &FourierField, t_end: f64, dt: f64, pert: &Perturbation, sample_every: usize, mut visit: F) -> Result<FourierField>
where
    F: FnMut(f64, &FourierField) -> Result<()>,
{
    if !(t_end >= 0.0) {
        return Err(Error::Domain(format!("final time must be >= 0, got {t_end}")));
    }
    let mut stepper = Stepper::new(u0.modes(), u0.grid_size(), dt, pert)?;
    let ceiling = Ceiling::for_initial(u0);
    visit(0.0, u0)?;
    if t_end == 0.0 {
        return Ok(u0.clone());
    }
    if dt <= 0.0 {
        return Err(Error::Domain("time step must be positive".into()));
    }
    let steps = (t_end / dt).round().max(1.0) as usize;
    let every = sample_every.max(1);
    let mut c = u0.to_complex();
    let grid = u0.grid_size();
    for i in 1..=steps {
        stepper.advance(&mut c);
        let t = i as f64 * dt;
        if i % every == 0 || i == steps {
            ceiling.check(t, &c)?;
            visit(t, &FourierField::from_complex(&c, grid)?)?;
        }
    }
    Ok(FourierField::from_complex(&c, grid)?)
}

fn observe(u: &FourierField, t: f64, eps: f64, obs: &Observables) -> Result<Sample> {
    let lambda = match obs.spectrum_n_max {
        Some(n) => Some(crate::hill::periodic_spectrum(u, n)?.lambda),
        None => None,
    };
    let actions = match obs.actions_n_max {
        Some(n) => Some(crate::birkhoff::actions(u, n)?.values),
        None => None,
    };
    Ok(Sample {
        t,
        tau: eps * t,
        norm0: u.l2_norm(),
        norms: obs.sobolev.iter().map(|&p| u.sobolev_norm_sq_unchecked(p).sqrt()).collect(),
        hamiltonian: hamiltonian(u),
        lambda,
        actions,
        angles: obs
            .angle_modes
            .iter()
            .map(|&n| crate::birkhoff::angle_proxy(u, n).ok())
            .collect(),
    })
}

/// Repeated stepping with scheduled observables. Errors after the first
/// sample produce a partial record with `abort` set.
pub fn evolve(u0: &FourierField, t_end: f64, dt: f64, pert: &Perturbation, obs: &Observables, sample_every: usize) -> Result<TrajectoryRecord> {
    if obs.sobolev.iter().any(|p| *p < 0.0) {
        return Err(Error::Domain("Sobolev indices must be >= 0".into()));
    }
    let eps = if pert.is_active() { pert.eps } else { 0.0 };
    let mut rec = TrajectoryRecord {
        samples: vec![],
        sobolev: obs.sobolev.clone(),
        checkpoints: vec![],
        abort: None,
    };
    let mut count = 0usize;
    let res = evolve_with(u0, t_end, dt, pert, sample_every, |t, u| {
        rec.samples.push(observe(u, t, eps, obs)?);
        if let Some(every) = obs.checkpoint_every {
            if count % every.max(1) == 0 {
                rec.checkpoints.push((t, u.clone()));
            }
        }
        count += 1;
        Ok(())
    });
    match res {
        Ok(_) => Ok(rec),
        Err(e) if !rec.samples.is_empty() => {
            rec.abort = Some(e.to_string());
            Ok(rec)
        }
        Err(e) => Err(e),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub lambda: f64,
    /// `None` when the run could not be certified.
    pub sup_norm: Option<f64>,
    pub inf_norm: Option<f64>,
    /// `min_t ||u(t)||_k ≥ λ ||u0||_0` at every sample.
    pub lower_bound_holds: Option<bool>,
    /// Largest relative spectral tail energy seen along the run.
    pub tail: f64,
    pub note: Option<String>,
}

/// Fraction of `||u||_0²` carried by the top eighth of the modes.
pub fn spectral_tail(u: &FourierField) -> f64 {
    let k = u.modes();
    let start = k - (k / 8).max(1);
    let total: f64 = u.inner(u);
    if total == 0.0 {
        return 0.0;
    }
    u.pairs()[start..].iter().map(|p| p[0] * p[0] + p[1] * p[1]).sum::<f64>() / total
}

/// Evolves `λ·u0` for each `λ` and reports extrema of `||u(t)||_k`.
pub fn scaling_experiment(u0: &FourierField, lambdas: &[f64], k: f64, t_win: f64, dt: f64, tail_tol: f64) -> Result<Vec<ScalingRow>> {
    use rayon::prelude::*;
    if k < 1.0 {
        return Err(Error::Domain(format!("Sobolev index must be >= 1, got {k}")));
    }
    let base = u0.l2_norm();
    lambdas
        .par_iter()
        .map(|&lam| {
            if lam == 0.0 {
                return Ok(ScalingRow {
                    lambda: 0.0,
                    sup_norm: Some(0.0),
                    inf_norm: Some(0.0),
                    lower_bound_holds: Some(true),
                    tail: 0.0,
                    note: Some("zero initial datum".into()),
                });
            }
            let v0 = u0.scaled(lam);
            let h = dt.min(default_dt(&v0));
            let (mut sup, mut inf, mut tail) = (f64::NEG_INFINITY, f64::INFINITY, 0.0f64);
            let mut holds = true;
            let bound = lam * base;
            let run = evolve_with(&v0, t_win, h, &Perturbation::none(), 1, |_, u| {
                let n = u.sobolev_norm_sq_unchecked(k).sqrt();
                sup = sup.max(n);
                inf = inf.min(n);
                holds &= n >= bound;
                tail = tail.max(spectral_tail(u));
                if tail > tail_tol {
                    return Err(Error::Resolution(format!("spectral tail {tail:e} above {tail_tol:e}")));
                }
                Ok(())
            });
            Ok(match run {
                Ok(_) => ScalingRow {
                    lambda: lam,
                    sup_norm: Some(sup),
                    inf_norm: Some(inf),
                    lower_bound_holds: Some(holds),
                    tail,
                    note: None,
                },
                Err(e @ (Error::Resolution(_) | Error::BlowUp { .. })) => ScalingRow {
                    lambda: lam,
                    sup_norm: None,
                    inf_norm: None,
                    lower_bound_holds: None,
                    tail,
                    note: Some(e.to_string()),
                },
                Err(e) => return Err(e),
            })
        })
        .collect()
}
