//! Runs one configured experiment and writes its artifacts.

use std::path::{Path, PathBuf};
use std::time::SystemTime;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::averaging::{
    divergence_estimate, first_order_frequencies, occupation_fraction, resonance_by_shells, resonance_indicator,
    sample_gaussian, scaled_to_norm, GaussianMeasureSpec,
};
use crate::birkhoff::{actions, percival_residual_of, proxy_actions, v_report, ActionSpectrum, MomentSet};
use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{Error, Result};
use crate::grid::FourierField;
use crate::hill::hill_spectrum;
use crate::io::{columns_csv, fmt_float, to_value, ArtifactDir, CheckResult};
use crate::kdvflow::{evolve, scaling_experiment, PerturbationKind, TrajectoryRecord};
use crate::stochastic::{angle_equidistribution, energy_balance, ensemble, exponential_weight, noise_stream};

pub const STATUS_OK: i32 = 0;
pub const STATUS_CHECK_FAILED: i32 = 1;
pub const STATUS_INVALID: i32 = 2;
pub const STATUS_ABORTED: i32 = 3;

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub status: i32,
    pub kind: ExperimentKind,
    pub dir: Option<PathBuf>,
    pub checks: Vec<CheckResult>,
    /// Validation errors (status 2) or the abort reason (status 3).
    pub errors: Vec<String>,
}

impl RunReport {
    fn invalid(kind: ExperimentKind, errors: Vec<String>) -> Self {
        RunReport { status: STATUS_INVALID, kind, dir: None, checks: vec![], errors }
    }
}

/// What an experiment body hands back: its checks and, for partial runs,
/// the reason it stopped.
struct Outcome {
    checks: Vec<CheckResult>,
    abort: Option<String>,
}

impl Outcome {
    fn done(checks: Vec<CheckResult>) -> Self {
        Outcome { checks, abort: None }
    }
}

/// Validates `config`, runs it and writes artifacts into `out`.
///
/// Status 0: all checks passed; 1: a check failed; 2: invalid config, no
/// artifacts; 3: runtime abort, partial artifacts plus an abort marker.
pub fn run(config: &ExperimentConfig, out: &Path) -> RunReport {
    let errs = config.validate();
    if !errs.is_empty() {
        return RunReport::invalid(config.kind, errs);
    }
    let u0 = match config.initial_field() {
        Ok(u) => u,
        Err(Error::Config(e)) => return RunReport::invalid(config.kind, e),
        Err(e) => return RunReport::invalid(config.kind, vec![e.to_string()]),
    };
    let dt = match config.kind {
        ExperimentKind::Evolve | ExperimentKind::Perturb | ExperimentKind::Resonance => match config.flow_dt(&u0) {
            Ok(dt) => dt,
            Err(Error::Config(e)) => return RunReport::invalid(config.kind, e),
            Err(e) => return RunReport::invalid(config.kind, vec![e.to_string()]),
        },
        _ => 0.0,
    };
    let started = SystemTime::now();
    let mut art = match ArtifactDir::create(out, config) {
        Ok(a) => a,
        Err(e) => {
            return RunReport {
                status: STATUS_ABORTED,
                kind: config.kind,
                dir: Some(out.to_path_buf()),
                checks: vec![],
                errors: vec![e.to_string()],
            }
        }
    };
    log::info!("running {} experiment into {}", config.kind, out.display());
    let res = match config.kind {
        ExperimentKind::Spectrum => spectrum(config, &u0, &mut art),
        ExperimentKind::Actions => actions_run(config, &u0, &mut art),
        ExperimentKind::Evolve | ExperimentKind::Perturb => flow(config, &u0, dt, &mut art),
        ExperimentKind::Resonance => resonance(config, &u0, dt, &mut art),
        ExperimentKind::Ensemble => ensemble_run(config, &u0, &mut art),
        ExperimentKind::Scaling => scaling(config, &u0, &mut art),
        ExperimentKind::Measure => measure(config, &mut art),
    };
    let (status, checks, errors) = match res {
        Ok(Outcome { checks, abort: None }) => {
            let ok = checks.iter().all(|c| c.passed);
            (if ok { STATUS_OK } else { STATUS_CHECK_FAILED }, checks, vec![])
        }
        Ok(Outcome { checks, abort: Some(reason) }) => (STATUS_ABORTED, checks, vec![reason]),
        Err(e) => (STATUS_ABORTED, vec![], vec![e.to_string()]),
    };
    if status == STATUS_ABORTED {
        if let Err(e) = art.mark_aborted(&errors.join("; ")) {
            log::error!("cannot write abort marker: {e}");
        }
    }
    if let Err(e) = art.write_meta(started, status) {
        log::error!("cannot write run metadata: {e}");
    }
    RunReport { status, kind: config.kind, dir: Some(out.to_path_buf()), checks, errors }
}

fn spectrum(cfg: &ExperimentConfig, u: &FourierField, art: &mut ArtifactDir) -> Result<Outcome> {
    let s = hill_spectrum(u, cfg.n_max, cfg.z)?;
    let tol = cfg.tolerances.interlacing;
    let bad: Vec<usize> = (1..=s.n_max)
        .filter(|&n| !(s.lambda[2 * n - 1] - tol <= s.mu[n - 1] && s.mu[n - 1] <= s.lambda[2 * n] + tol))
        .collect();
    let ordered = s.lambda.windows(2).all(|w| w[1] >= w[0]);
    let checks = vec![
        CheckResult::new("interlacing", bad.is_empty(), format!("gaps violating lambda_2n-1 <= mu_n <= lambda_2n: {bad:?}")),
        CheckResult::new("ordered", ordered, "periodic eigenvalues nondecreasing"),
    ];
    art.table("spectrum", &s.to_csv(), to_value(&s), &checks)?;
    Ok(Outcome::done(checks))
}

fn actions_run(cfg: &ExperimentConfig, u: &FourierField, art: &mut ArtifactDir) -> Result<Outcome> {
    let a = actions(u, cfg.n_max)?;
    let norm_sq = u.inner(u);
    let truncated = percival_residual_of(&a, norm_sq);
    // Modes above n_max enter through their linearized actions.
    let mut full = a.values.clone();
    if u.modes() > cfg.n_max {
        full.extend_from_slice(&proxy_actions(u, u.modes())[cfg.n_max..]);
    }
    let completed = ActionSpectrum::from_values(full);
    let residual = percival_residual_of(&completed, norm_sq);
    let v = v_report(u, completed);
    let nonneg = a.values.iter().all(|v| *v >= 0.0);
    let checks = vec![
        CheckResult::new(
            "percival",
            residual < cfg.tolerances.percival,
            format!("relative residual {residual:e} (tolerance {:e})", cfg.tolerances.percival),
        ),
        CheckResult::new("nonnegative", nonneg, "I_n >= 0 for every computed gap"),
    ];
    let summary = json!({
        "I": a.values,
        "tail": a.tail,
        "n_max": a.n_max,
        "percival_residual": residual,
        "percival_residual_truncated": truncated,
        "moments": to_value(&MomentSet::of(&a)),
        "v": v.v,
        "hamiltonian": v.hamiltonian,
    });
    art.table("actions", &a.to_csv(), summary, &checks)?;
    Ok(Outcome::done(checks))
}

fn write_trajectory(art: &mut ArtifactDir, rec: &TrajectoryRecord, summary: Value, checks: &[CheckResult]) -> Result<()> {
    art.table("trajectory", &rec.to_csv(), summary, checks)?;
    if !rec.checkpoints.is_empty() {
        let cps: Vec<Value> = rec.checkpoints.iter().map(|(t, u)| json!({ "t": t, "field": to_value(u) })).collect();
        art.document("checkpoints", Value::Array(cps))?;
    }
    Ok(())
}

fn flow(cfg: &ExperimentConfig, u0: &FourierField, dt: f64, art: &mut ArtifactDir) -> Result<Outcome> {
    let time = cfg.time.as_ref().expect("validated");
    let obs = cfg.observables.clone().unwrap_or_default();
    let pert = cfg.perturbation();
    let rec = evolve(u0, time.t_end, dt, &pert, &obs, time.sample_every)?;
    let s0 = &rec.samples[0];
    let mut checks = vec![];
    let rel = |a: f64, b: f64| if b == 0.0 { a.abs() } else { (a - b).abs() / b.abs() };
    let norm_drift = rec.samples.iter().map(|s| rel(s.norm0, s0.norm0)).fold(0.0, f64::max);
    let h_drift = rec.samples.iter().map(|s| rel(s.hamiltonian, s0.hamiltonian)).fold(0.0, f64::max);
    if !pert.is_active() {
        let tol = cfg.tolerances.conservation;
        checks.push(CheckResult::new("l2_conservation", norm_drift <= tol, format!("max relative drift {norm_drift:e}")));
        checks.push(CheckResult::new("hamiltonian_conservation", h_drift <= tol, format!("max relative drift {h_drift:e}")));
    } else if pert.kind == PerturbationKind::Dissipative {
        let slack = 1.0 + cfg.tolerances.decay;
        let worst = rec
            .samples
            .iter()
            .map(|s| s.norm0 / ((-pert.eps * s.t).exp() * s0.norm0 * slack))
            .fold(0.0, f64::max);
        checks.push(CheckResult::new(
            "dissipative_decay",
            s0.norm0 == 0.0 || worst <= 1.0,
            format!("max ||u(t)||_0 / (e^(-eps t) ||u(0)||_0) = {worst}"),
        ));
    }
    let summary = json!({
        "dt": dt,
        "samples": rec.samples.len(),
        "max_relative_l2_drift": norm_drift,
        "max_relative_h_drift": h_drift,
        "abort": rec.abort,
    });
    write_trajectory(art, &rec, summary, &checks)?;
    Ok(Outcome { checks, abort: rec.abort.clone() })
}

fn resonance(cfg: &ExperimentConfig, u0: &FourierField, dt: f64, art: &mut ArtifactDir) -> Result<Outcome> {
    let time = cfg.time.as_ref().expect("validated");
    let q = cfg.resonance.expect("validated");
    let mut obs = cfg.observables.clone().unwrap_or_default();
    obs.actions_n_max = Some(obs.actions_n_max.unwrap_or(0).max(q.m));
    let rec = evolve(u0, time.t_end, dt, &cfg.perturbation(), &obs, time.sample_every)?;
    let mut cols: Vec<Vec<String>> = vec![vec![]; 5];
    let mut agree = true;
    for s in &rec.samples {
        let w = first_order_frequencies(s.actions.as_deref().unwrap_or(&[]), q.m);
        let r = resonance_indicator(&w, &q)?;
        let r2 = resonance_by_shells(&w, &q)?;
        agree &= r == r2;
        let k: Vec<String> = r.k.iter().map(|v| v.to_string()).collect();
        cols[0].push(fmt_float(s.t));
        cols[1].push(fmt_float(s.tau));
        cols[2].push(r.resonant.to_string());
        cols[3].push(k.join(";"));
        cols[4].push(fmt_float(r.value));
    }
    let occ = occupation_fraction(&rec, &q)?;
    let checks = vec![
        CheckResult::new("enumerations_agree", agree, "odometer and shell enumerations return the same minimizer"),
        CheckResult::new("occupation_range", (0.0..=1.0).contains(&occ), format!("occupation {occ}")),
    ];
    let csv = columns_csv(&["t", "tau", "in_resonance", "min_k", "min_value"], &cols);
    let summary = json!({
        "query": to_value(&q),
        "frequency_model": "first_order",
        "occupation": occ,
        "dt": dt,
        "abort": rec.abort,
    });
    art.table("resonance", &csv, summary, &checks)?;
    write_trajectory(art, &rec, json!({ "dt": dt, "abort": rec.abort }), &[])?;
    Ok(Outcome { checks, abort: rec.abort.clone() })
}

fn ensemble_run(cfg: &ExperimentConfig, u0: &FourierField, art: &mut ArtifactDir) -> Result<Outcome> {
    let sec = cfg.ensemble.as_ref().expect("validated");
    let spec = cfg.ensemble_spec(sec);
    let noise = cfg.noise_spec().expect("validated");
    let res = ensemble(u0, &spec, &noise)?;
    let weight = exponential_weight(&res.taus, sec.weight_scale);
    let tv: Vec<Value> = spec
        .angle_modes
        .iter()
        .map(|&n| {
            angle_equidistribution(&res, n, &weight, sec.bins).map(|r| {
                json!({ "mode": n, "tv": r.tv, "noise_floor": r.noise_floor, "excluded_mass": r.excluded_mass })
            })
        })
        .collect::<Result<_>>()?;
    let balance = energy_balance(&res, u0.modes()).ok();
    let nonneg = res.digests.iter().all(|d| d.proxy.iter().flatten().all(|v| *v >= 0.0))
        && res.digests.iter().all(|d| d.actions.iter().flatten().flatten().all(|v| *v >= -1e-12));
    let aborted: Vec<(usize, String)> =
        res.digests.iter().filter_map(|d| d.abort.clone().map(|a| (d.index, a))).collect();
    let checks = vec![
        CheckResult::new(
            "completed",
            res.completed == spec.realizations,
            format!("{}/{} realizations completed", res.completed, spec.realizations),
        ),
        CheckResult::new("nonnegative_actions", nonneg, "proxy and spectral actions nonnegative along every path"),
    ];
    let summary = json!({
        "master_seed": noise.seed,
        "streams": (0..spec.realizations).collect::<Vec<_>>(),
        "completed": res.completed,
        "aborted": aborted,
        "neglected_forcing_mass": res.neglected_mass,
        "proxy_stats": to_value(&res.proxy_stats),
        "action_stats": to_value(&res.action_stats),
        "angle_tv": tv,
        "angle_weight_scale": sec.weight_scale,
        "angle_note": "angles are the coefficient-pair proxy, valid to first order in amplitude",
        "energy_balance": to_value(&balance),
    });
    art.table("ensemble", &res.to_csv(), summary, &checks)?;
    Ok(Outcome::done(checks))
}

fn scaling(cfg: &ExperimentConfig, u0: &FourierField, art: &mut ArtifactDir) -> Result<Outcome> {
    let s = cfg.scaling.as_ref().expect("validated");
    let rows = scaling_experiment(u0, &s.lambdas, s.k, s.t_win, s.dt, s.tail_tol)?;
    let opt = |v: Option<f64>| v.map_or(String::new(), fmt_float);
    let cols = vec![
        rows.iter().map(|r| fmt_float(r.lambda)).collect(),
        rows.iter().map(|r| opt(r.sup_norm)).collect(),
        rows.iter().map(|r| opt(r.inf_norm)).collect(),
        rows.iter().map(|r| r.lower_bound_holds.map_or(String::new(), |b| b.to_string())).collect(),
        rows.iter().map(|r| fmt_float(r.tail)).collect(),
        rows.iter().map(|r| r.note.clone().unwrap_or_default().replace(',', ";")).collect(),
    ];
    let lower = rows.iter().all(|r| r.lower_bound_holds != Some(false));
    let checks = vec![CheckResult::new(
        "lower_bound",
        lower,
        format!("||u(t)||_{} >= lambda ||u0||_0 at every sample of every certified run", s.k),
    )];
    let csv = columns_csv(&["lambda", "sup_norm", "inf_norm", "lower_bound_holds", "tail", "note"], &cols);
    art.table("scaling", &csv, to_value(&rows), &checks)?;
    Ok(Outcome::done(checks))
}

fn measure(cfg: &ExperimentConfig, art: &mut ArtifactDir) -> Result<Outcome> {
    let m = cfg.measure.as_ref().expect("validated");
    let spec = GaussianMeasureSpec { scale: m.scale, zeta: m.zeta, p: m.p, modes: cfg.modes, grid: cfg.grid_size() };
    let pert = cfg.perturbation();
    let rows = (0..m.samples)
        .into_par_iter()
        .map(|i| {
            let u = sample_gaussian(&spec, &mut noise_stream(cfg.seed, i as u64))?;
            let u = match m.norm {
                Some(t) if !u.is_zero() => scaled_to_norm(&u, 0.0, t)?,
                _ => u,
            };
            let mut full = actions(&u, cfg.n_max)?.values;
            if u.modes() > cfg.n_max {
                full.extend_from_slice(&proxy_actions(&u, u.modes())[cfg.n_max..]);
            }
            let v = v_report(&u, ActionSpectrum::from_values(full));
            let div = if pert.is_active() { Some(divergence_estimate(&pert, &u, m.fd_step)?.divergence) } else { None };
            Ok((u.l2_norm(), u.sobolev_norm_sq_unchecked(m.p).sqrt(), v, div))
        })
        .collect::<Result<Vec<_>>>()?;
    let cols = vec![
        (0..rows.len()).map(|i| i.to_string()).collect(),
        rows.iter().map(|r| fmt_float(r.0)).collect(),
        rows.iter().map(|r| fmt_float(r.1)).collect(),
        rows.iter().map(|r| fmt_float(r.2.v)).collect(),
        rows.iter().map(|r| r.3.map_or(String::new(), fmt_float)).collect(),
    ];
    let floor = cfg.tolerances.v_floor;
    let bad: Vec<usize> = rows.iter().enumerate().filter(|(_, r)| !r.2.within_bounds(floor)).map(|(i, _)| i).collect();
    let checks = vec![CheckResult::new("v_bounds", bad.is_empty(), format!("samples outside the V bounds: {bad:?}"))];
    let divs: Vec<f64> = rows.iter().filter_map(|r| r.3).collect();
    let summary = json!({
        "sigma_tail": spec.sigma_tail(),
        "min_v": rows.iter().map(|r| r.2.v).fold(f64::INFINITY, f64::min),
        "max_abs_divergence": divs.iter().map(|d| d.abs()).fold(0.0, f64::max),
        "reduction": "divergence is the trace of the Galerkin Jacobian of the perturbation field",
    });
    let csv = columns_csv(&["sample", "norm0", "normP", "V", "divergence"], &cols);
    art.table("measure", &csv, summary, &checks)?;
    Ok(Outcome::done(checks))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml(text).unwrap()
    }

    #[test]
    fn invalid_grid_is_status_2() {
        let c = cfg("kind = \"spectrum\"\nmodes = 8\ngrid = 16\n[initial]\nrecipe = \"coefficients\"\nentries = []\n");
        let dir = tempfile::tempdir().unwrap();
        let r = run(&c, dir.path());
        assert_eq!(r.status, STATUS_INVALID);
        assert!(r.errors[0].contains("N >= 3K"));
        assert!(std::fs::read_dir(dir.path()).unwrap().next().is_none());
    }

    #[test]
    fn zero_field_spectrum_is_free() {
        let c = cfg("kind = \"spectrum\"\nmodes = 4\nn_max = 3\n[initial]\nrecipe = \"coefficients\"\nentries = []\n");
        let dir = tempfile::tempdir().unwrap();
        let r = run(&c, dir.path());
        assert_eq!(r.status, STATUS_OK, "{r:?}");
        let csv = std::fs::read_to_string(dir.path().join("spectrum.csv")).unwrap();
        let row: Vec<f64> = csv.lines().nth(2).unwrap().split(',').skip(1).take(2).map(|v| v.parse().unwrap()).collect();
        let free = std::f64::consts::PI.powi(2);
        assert!((row[0] - free).abs() < 1e-9 && (row[1] - free).abs() < 1e-9, "{row:?}");
    }

    #[test]
    fn outputs_are_byte_identical() {
        let text = "kind = \"actions\"\nmodes = 8\nn_max = 4\n[initial]\nrecipe = \"coefficients\"\nentries = [[1, 0.1]]\n";
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        assert_eq!(run(&cfg(text), a.path()).status, STATUS_OK);
        assert_eq!(run(&cfg(text), b.path()).status, STATUS_OK);
        for f in ["actions.csv", "actions.json"] {
            assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
        }
    }
}
