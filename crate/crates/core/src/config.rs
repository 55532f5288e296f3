//! Declarative experiment description, read from TOML.
//!
//! ```toml
//! kind = "actions"
//! modes = 16
//! n_max = 8
//!
//! [initial]
//! recipe = "coefficients"
//! entries = [[1, 0.1], [-2, 0.05]]
//! ```

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::averaging::{sample_gaussian, scaled_to_norm, GaussianMeasureSpec, ResonanceQuery};
use crate::error::{Error, Result};
use crate::grid::{min_grid, FourierField};
use crate::kdvflow::{Observables, Perturbation, PerturbationKind};
use crate::stochastic::{NoiseLaw, NoiseSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Spectrum,
    Actions,
    Evolve,
    Perturb,
    Ensemble,
    Resonance,
    Scaling,
    Measure,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 8] = [
        ExperimentKind::Spectrum,
        ExperimentKind::Actions,
        ExperimentKind::Evolve,
        ExperimentKind::Perturb,
        ExperimentKind::Ensemble,
        ExperimentKind::Resonance,
        ExperimentKind::Scaling,
        ExperimentKind::Measure,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Spectrum => "spectrum",
            ExperimentKind::Actions => "actions",
            ExperimentKind::Evolve => "evolve",
            ExperimentKind::Perturb => "perturb",
            ExperimentKind::Ensemble => "ensemble",
            ExperimentKind::Resonance => "resonance",
            ExperimentKind::Scaling => "scaling",
            ExperimentKind::Measure => "measure",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown experiment kind {s:?}"))
    }
}

/// How the initial field is built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "recipe", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    /// `(k, û_k)` pairs; negative `k` addresses the sine coefficient.
    Coefficients { entries: Vec<(i64, f64)> },
    /// One draw from an admissible Gaussian measure, seeded by the master
    /// seed and optionally rescaled to `||u||_norm_index = norm`.
    Gaussian {
        scale: f64,
        zeta: f64,
        p: f64,
        #[serde(default)]
        norm: Option<f64>,
        #[serde(default)]
        norm_index: f64,
    },
    /// A field in the grid JSON format; relative paths resolve against the
    /// config file.
    File { path: PathBuf },
}

/// Time stepping for `evolve`, `perturb` and `resonance`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSpec {
    pub t_end: f64,
    /// Defaults to `kdvflow::default_dt` of the initial field.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default = "one")]
    pub sample_every: usize,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub eps: f64,
    pub t_slow: f64,
    pub dt: f64,
    pub realizations: usize,
    pub sample_every: usize,
    #[serde(default = "four")]
    pub proxy_modes: usize,
    #[serde(default)]
    pub angle_modes: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actions_n_max: Option<usize>,
    /// Scale of the weight `e^{−τ/scale}` used for angle histograms.
    #[serde(default = "weight_scale")]
    pub weight_scale: f64,
    #[serde(default = "sixteen")]
    pub bins: usize,
}

fn four() -> usize {
    4
}

fn sixteen() -> usize {
    16
}

fn weight_scale() -> f64 {
    0.02
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingSection {
    pub lambdas: Vec<f64>,
    #[serde(default = "four_f")]
    pub k: f64,
    pub t_win: f64,
    pub dt: f64,
    #[serde(default = "tail_tol")]
    pub tail_tol: f64,
}

fn four_f() -> f64 {
    4.0
}

fn tail_tol() -> f64 {
    1e-16
}

/// Samples of an admissible Gaussian measure for the `measure` kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSection {
    pub samples: usize,
    pub scale: f64,
    pub zeta: f64,
    pub p: f64,
    /// Rescale every sample to this `||u||_0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm: Option<f64>,
    /// Finite-difference step of the divergence estimate.
    #[serde(default = "fd_h")]
    pub fd_step: f64,
}

fn fd_h() -> f64 {
    1e-4
}

/// Thresholds of the hard checks attached to each experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Percival residual `|Σ I_n − ||u||²/2|` for `actions`.
    pub percival: f64,
    /// Relative drift of `||u||_0` and `H` for unperturbed `evolve`.
    pub conservation: f64,
    /// Slack of the dissipative decay bound in `perturb`.
    pub decay: f64,
    /// Largest accepted negative `V` in `measure`.
    pub v_floor: f64,
    /// Slack of `λ_{2n−1} ≤ μ_n ≤ λ_{2n}` in `spectrum`.
    pub interlacing: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { percival: 1e-8, conservation: 1e-6, decay: 1e-12, v_floor: 1e-8, interlacing: 1e-9 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Truncation `K`.
    pub modes: usize,
    /// Grid `N`; defaults to the smallest even `N > 3K`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    #[serde(default = "n_max")]
    pub n_max: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Dirichlet shift for `spectrum`.
    #[serde(default)]
    pub z: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialData>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<TimeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observables: Option<Observables>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<Perturbation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseLaw>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<EnsembleSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resonance: Option<ResonanceQuery>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaling: Option<ScalingSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure: Option<MeasureSection>,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Directory that relative `file` recipes resolve against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

fn n_max() -> usize {
    8
}

/// Largest step for which the explicit treatment of `6uu_x` stays inside
/// the RK4 stability interval at the top mode.
pub fn stability_dt(modes: usize, sup_u: f64) -> f64 {
    2.5 / (2.0 * PI * modes as f64 * (6.0 * sup_u + 1.0))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(vec![e.message().to_string()]))
    }

    /// Reads a TOML config, or the `config` entry of an artifact sidecar
    /// when the path ends in `.json`.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let toml_text = if path.extension().is_some_and(|e| e == "json") {
            let v: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| Error::Config(vec![format!("sidecar: {e}")]))?;
            v.get("config")
                .and_then(|c| c.as_str())
                .ok_or_else(|| Error::Config(vec!["sidecar has no string field `config`".into()]))?
                .to_string()
        } else {
            text
        };
        let mut cfg = Self::from_toml(&toml_text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn grid_size(&self) -> usize {
        self.grid.unwrap_or_else(|| min_grid(self.modes.max(1)))
    }

    pub fn noise_spec(&self) -> Option<NoiseSpec> {
        self.noise.clone().map(|law| NoiseSpec { law, seed: self.seed })
    }

    pub fn perturbation(&self) -> Perturbation {
        self.perturbation.clone().unwrap_or_else(Perturbation::none)
    }

    /// Cross-field checks that do not need the initial field.
    pub fn validate(&self) -> Vec<String> {
        use ExperimentKind::*;
        let mut errs = vec![];
        let k = self.modes;
        if k == 0 {
            errs.push("modes K must be >= 1".into());
        }
        let n = self.grid_size();
        if n < 3 * k {
            errs.push(format!("grid N = {n} violates N >= 3K = {}", 3 * k));
        } else if n % 2 == 1 {
            errs.push(format!("grid N = {n} must be even"));
        }
        if self.n_max == 0 {
            errs.push("n_max must be >= 1".into());
        }
        if !self.z.is_finite() {
            errs.push("z must be finite".into());
        }
        if let Some(o) = &self.observables {
            if o.sobolev.iter().any(|p| !(*p >= 0.0)) {
                errs.push("observables.sobolev indices must be >= 0".into());
            }
        }
        let need = |errs: &mut Vec<String>, present: bool, section: &str| {
            if !present {
                errs.push(format!("{} experiment needs a [{section}] section", self.kind));
            }
        };
        if self.kind != Measure {
            need(&mut errs, self.initial.is_some(), "initial");
        }
        match &self.initial {
            Some(InitialData::Coefficients { entries }) => {
                for (m, v) in entries {
                    if *m == 0 || m.unsigned_abs() as usize > k {
                        errs.push(format!("initial coefficient index {m} outside ±1..=±{k}"));
                    }
                    if !v.is_finite() {
                        errs.push(format!("initial coefficient {m} is not finite"));
                    }
                }
            }
            Some(InitialData::Gaussian { scale, zeta, p, norm, norm_index }) => {
                let g = GaussianMeasureSpec { scale: *scale, zeta: *zeta, p: *p, modes: k.max(1), grid: n };
                errs.extend(g.validate().into_iter().filter(|e| !e.contains("grid")));
                if norm.is_some_and(|v| !(v > 0.0 && v.is_finite())) {
                    errs.push("initial norm must be > 0".into());
                }
                if !(*norm_index >= 0.0) {
                    errs.push("initial norm_index must be >= 0".into());
                }
            }
            Some(InitialData::File { .. }) | None => {}
        }
        if let Some(t) = &self.time {
            if !(t.t_end >= 0.0 && t.t_end.is_finite()) {
                errs.push(format!("time.t_end must be >= 0, got {}", t.t_end));
            }
            if let Some(dt) = t.dt {
                if !(dt > 0.0 && dt.is_finite()) {
                    errs.push(format!("time.dt must be > 0, got {dt}"));
                }
            }
            if t.sample_every == 0 {
                errs.push("time.sample_every must be >= 1".into());
            }
        }
        if let Some(p) = &self.perturbation {
            errs.extend(p.validate());
            if let PerturbationKind::ExternalForce { force } = &p.kind {
                if force.modes() != k || force.grid_size() != n {
                    errs.push(format!(
                        "external force truncation ({}, {}) differs from (K, N) = ({k}, {n})",
                        force.modes(),
                        force.grid_size()
                    ));
                }
            }
            if let PerturbationKind::SmoothingMap { decay, .. } = &p.kind {
                // Kernel decay e^{-σ|k|} is of every negative order; nothing
                // further to match against.
                if !(*decay > 0.0) {
                    errs.push("smoothing kernel decay must be > 0".into());
                }
            }
        }
        if let Some(q) = &self.resonance {
            errs.extend(q.validate());
        }
        match self.kind {
            Spectrum | Actions => {}
            Evolve => {
                need(&mut errs, self.time.is_some(), "time");
                if self.perturbation.as_ref().is_some_and(|p| p.is_active()) {
                    errs.push("evolve runs the unperturbed flow; use kind = \"perturb\" with a [perturbation]".into());
                }
            }
            Perturb => {
                need(&mut errs, self.time.is_some(), "time");
                need(&mut errs, self.perturbation.is_some(), "perturbation");
            }
            Resonance => {
                need(&mut errs, self.time.is_some(), "time");
                need(&mut errs, self.resonance.is_some(), "resonance");
            }
            Ensemble => {
                need(&mut errs, self.ensemble.is_some(), "ensemble");
                need(&mut errs, self.noise.is_some(), "noise");
                if let Some(s) = self.noise_spec() {
                    errs.extend(s.validate());
                }
                if let Some(e) = &self.ensemble {
                    errs.extend(self.ensemble_spec(e).validate());
                    if let Some(m) = e.angle_modes.iter().find(|m| **m == 0 || **m > k) {
                        errs.push(format!("angle mode {m} outside 1..={k}"));
                    }
                    if e.proxy_modes == 0 || e.proxy_modes > k {
                        errs.push(format!("proxy_modes {} outside 1..={k}", e.proxy_modes));
                    }
                    if !(e.weight_scale > 0.0) {
                        errs.push("ensemble.weight_scale must be > 0".into());
                    }
                    if e.bins < 2 {
                        errs.push("ensemble.bins must be >= 2".into());
                    }
                }
            }
            Scaling => {
                need(&mut errs, self.scaling.is_some(), "scaling");
                if let Some(s) = &self.scaling {
                    if s.lambdas.is_empty() || s.lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
                        errs.push("scaling.lambdas must be a nonempty list of values >= 0".into());
                    }
                    if !(s.k >= 1.0) {
                        errs.push(format!("scaling.k must be >= 1, got {}", s.k));
                    }
                    if !(s.t_win > 0.0 && s.dt > 0.0) {
                        errs.push("scaling.t_win and scaling.dt must be > 0".into());
                    }
                }
            }
            Measure => {
                need(&mut errs, self.measure.is_some(), "measure");
                if let Some(m) = &self.measure {
                    if m.samples == 0 {
                        errs.push("measure.samples must be >= 1".into());
                    }
                    let g = GaussianMeasureSpec { scale: m.scale, zeta: m.zeta, p: m.p, modes: k.max(1), grid: n };
                    errs.extend(g.validate().into_iter().filter(|e| !e.contains("grid")));
                    if m.norm.is_some_and(|v| !(v > 0.0)) {
                        errs.push("measure.norm must be > 0".into());
                    }
                    if !(m.fd_step > 0.0) {
                        errs.push("measure.fd_step must be > 0".into());
                    }
                }
            }
        }
        errs
    }

    pub fn ensemble_spec(&self, e: &EnsembleSection) -> crate::stochastic::EnsembleSpec {
        crate::stochastic::EnsembleSpec {
            eps: e.eps,
            t_slow: e.t_slow,
            dt: e.dt,
            realizations: e.realizations,
            sample_every: e.sample_every,
            proxy_modes: e.proxy_modes,
            angle_modes: e.angle_modes.clone(),
            actions_n_max: e.actions_n_max,
            nonlinear: true,
        }
    }

    /// Builds the initial field. Errors here are configuration errors.
    pub fn initial_field(&self) -> Result<FourierField> {
        let (k, n) = (self.modes, self.grid_size());
        let u = match &self.initial {
            None => FourierField::zeros(k, n)?,
            Some(InitialData::Coefficients { entries }) => FourierField::with_modes(k, n, entries)?,
            Some(InitialData::Gaussian { scale, zeta, p, norm, norm_index }) => {
                let spec = GaussianMeasureSpec { scale: *scale, zeta: *zeta, p: *p, modes: k, grid: n };
                let u = sample_gaussian(&spec, &mut ChaCha8Rng::seed_from_u64(self.seed))?;
                match norm {
                    Some(target) => scaled_to_norm(&u, *norm_index, *target)?,
                    None => u,
                }
            }
            Some(InitialData::File { path }) => {
                let full = match &self.base_dir {
                    Some(b) if path.is_relative() => b.join(path),
                    _ => path.clone(),
                };
                let text =
                    std::fs::read_to_string(&full).map_err(|e| Error::Config(vec![format!("{}: {e}", full.display())]))?;
                let u = FourierField::from_json(&text)?;
                if u.modes() != k || u.grid_size() != n {
                    return Err(Error::Config(vec![format!(
                        "initial field file has (K, N) = ({}, {}), config has ({k}, {n})",
                        u.modes(),
                        u.grid_size()
                    )]));
                }
                u
            }
        };
        Ok(u)
    }

    /// Step for the flow: the configured one, checked against the stability
    /// bound for `u0`, or the default.
    pub fn flow_dt(&self, u0: &FourierField) -> Result<f64> {
        let sup = u0.synthesize().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let limit = stability_dt(u0.modes(), sup);
        match self.time.as_ref().and_then(|t| t.dt) {
            Some(dt) if dt > limit => Err(Error::Config(vec![format!(
                "time.dt = {dt} exceeds the stability bound {limit:.3e} for K = {} and max|u0| = {sup:.3e}",
                u0.modes()
            )])),
            Some(dt) => Ok(dt),
            None => Ok(crate::kdvflow::default_dt(u0)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ACTIONS: &str = r#"
kind = "actions"
modes = 16
n_max = 6

[initial]
recipe = "coefficients"
entries = [[1, 0.1], [-2, 0.05]]
"#;

    #[test]
    fn parses_and_round_trips() {
        let c = ExperimentConfig::from_toml(ACTIONS).unwrap();
        assert_eq!(c.kind, ExperimentKind::Actions);
        assert_eq!(c.grid_size(), 50);
        assert!(c.validate().is_empty());
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = ACTIONS.replace("n_max = 6", "n_maxx = 6");
        let err = ExperimentConfig::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("n_maxx"), "{err}");
        let text = ACTIONS.replace("[initial]", "[tolerances]\npercivl = 1.0\n[initial]");
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn small_grid_names_the_constraint() {
        let text = ACTIONS.replace("n_max = 6", "n_max = 6\ngrid = 32");
        let errs = ExperimentConfig::from_toml(&text).unwrap().validate();
        assert_eq!(errs.len(), 1);
        assert!(errs[0].contains("N >= 3K"), "{errs:?}");
    }

    #[test]
    fn missing_sections_are_reported() {
        let text = ACTIONS.replace("kind = \"actions\"", "kind = \"ensemble\"");
        let errs = ExperimentConfig::from_toml(&text).unwrap().validate();
        assert!(errs.iter().any(|e| e.contains("[ensemble]")));
        assert!(errs.iter().any(|e| e.contains("[noise]")));
    }

    #[test]
    fn gaussian_recipe_is_seeded() {
        let text = r#"
kind = "actions"
modes = 8
seed = 5
[initial]
recipe = "gaussian"
scale = 1.0
zeta = -2.0
p = 3.0
norm = 0.5
"#;
        let c = ExperimentConfig::from_toml(text).unwrap();
        let a = c.initial_field().unwrap();
        assert_eq!(a, c.initial_field().unwrap());
        assert!((a.l2_norm() - 0.5).abs() < 1e-14);
        let mut d = c.clone();
        d.seed = 6;
        assert_ne!(a, d.initial_field().unwrap());
    }

    #[test]
    fn dt_above_stability_bound_is_a_config_error() {
        let text = r#"
kind = "evolve"
modes = 16
[initial]
recipe = "coefficients"
entries = [[1, 1.0]]
[time]
t_end = 0.1
dt = 0.01
"#;
        let c = ExperimentConfig::from_toml(text).unwrap();
        let u = c.initial_field().unwrap();
        assert!(matches!(c.flow_dt(&u), Err(Error::Config(_))));
    }
}
