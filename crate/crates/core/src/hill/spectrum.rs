//! Periodic and Dirichlet spectra from the discriminant.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::transfer::{transfer_at, Potential, TransferData};
use crate::error::{Error, Result};
use crate::grid::FourierField;
use crate::ode::OdeOptions;
use crate::roots::brent;

/// Anything that can evaluate the discriminant of a Hill operator.
pub trait Discriminant: Sync {
    fn evaluate(&self, lambda: f64, with_d: bool) -> Result<TransferData>;
    /// A value below `λ_0`.
    fn lower_bound(&self) -> f64;
    /// An upper bound for `max |u|`, used to place the scan cutoff.
    fn sup_bound(&self) -> f64;
    /// Constant added to the potential at operator level.
    fn shift(&self) -> f64 {
        0.0
    }
}

/// The Hill operator `-d²/dx² + u + offset`.
#[derive(Clone, Debug)]
pub struct Hill {
    field: FourierField,
    pot: Potential,
    pub ode: OdeOptions,
}

impl Hill {
    pub fn new(u: &FourierField) -> Self {
        Self::with_offset(u, 0.0)
    }

    pub fn with_offset(u: &FourierField, offset: f64) -> Self {
        Hill {
            field: u.clone(),
            pot: Potential::with_offset(u, offset),
            ode: OdeOptions::default(),
        }
    }

    pub fn field(&self) -> &FourierField {
        &self.field
    }

    pub fn potential(&self) -> &Potential {
        &self.pot
    }

    /// Operator with the translated potential `u(· + z)`.
    pub fn translated(&self, z: f64) -> Hill {
        let mut h = Hill::with_offset(&self.field.translated(z), self.pot.offset());
        h.ode = self.ode;
        h
    }

    pub fn transfer(&self, lambda: f64, with_d: bool) -> Result<TransferData> {
        transfer_at(&self.pot, lambda, 1.0, with_d, &self.ode)
    }

    pub fn discriminant(&self, lambda: f64) -> Result<f64> {
        Ok(self.transfer(lambda, false)?.delta())
    }
}

impl Discriminant for Hill {
    fn evaluate(&self, lambda: f64, with_d: bool) -> Result<TransferData> {
        self.transfer(lambda, with_d)
    }

    fn lower_bound(&self) -> f64 {
        self.pot.min_value() - 1.0
    }

    fn sup_bound(&self) -> f64 {
        self.pot.sup_bound() + self.pot.offset().abs()
    }

    fn shift(&self) -> f64 {
        self.pot.offset()
    }
}

/// Evaluates `Δ(λ, u)` and optionally `Δ̇(λ, u)`.
pub fn discriminant(u: &FourierField, lambda: f64, with_d: bool) -> Result<(f64, Option<f64>)> {
    let t = Hill::new(u).transfer(lambda, with_d)?;
    Ok((t.delta(), t.delta_dot()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumTolerances {
    /// Scan step in `√λ`.
    pub scan_step: f64,
    /// `σΔ − 2` at the gap extremum below which the gap is closed.
    pub closed_floor: f64,
    /// Gaps with `g_n < snap·(1 + n²π²)` are snapped closed.
    pub snap: f64,
    /// Interlacing slack, relative to `1 + |λ|`.
    pub interlace: f64,
}

impl Default for SpectrumTolerances {
    fn default() -> Self {
        SpectrumTolerances {
            scan_step: PI / 8.0,
            closed_floor: 1e-24,
            snap: 1e-12,
            interlace: 1e-9,
        }
    }
}

/// Periodic spectrum `λ_0 < λ_1 ≤ λ_2 < …` plus the structural points used
/// to locate it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodicSpectrum {
    pub lambda: Vec<f64>,
    /// Zeros of `Δ`, one per band, `c_1 < c_2 < … < c_{n_max+1}`.
    pub band_centers: Vec<f64>,
    /// Extremum of `σΔ` in each gap closure.
    pub extrema: Vec<f64>,
    /// `σ_n Δ(extremum_n) − 2`, i.e. how far the gap is open.
    pub extremum_excess: Vec<f64>,
}

impl PeriodicSpectrum {
    pub fn n_max(&self) -> usize {
        self.extrema.len()
    }

    pub fn gap_edges(&self, n: usize) -> (f64, f64) {
        (self.lambda[2 * n - 1], self.lambda[2 * n])
    }

    /// Half-width of the smallest gap distinguishable from a closed one:
    /// near the gap `σΔ − 2 ≈ ((g/2)² − (λ − m)²)/(4m)`.
    pub fn edge_resolution(&self, n: usize, tol: &SpectrumTolerances) -> f64 {
        2.0 * self.extrema[n - 1].abs().sqrt() * tol.closed_floor.sqrt()
    }

    pub fn is_open(&self, n: usize) -> bool {
        let (a, b) = self.gap_edges(n);
        b > a
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HillSpectrum {
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub gaps: Vec<f64>,
    pub z: f64,
    pub n_max: usize,
    pub tolerances: SpectrumTolerances,
}

impl HillSpectrum {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,lambda_lo,lambda_hi,gap,mu\n");
        let f = crate::io::fmt_float;
        s.push_str(&format!("0,{},{},,\n", f(self.lambda[0]), f(self.lambda[0])));
        for n in 1..=self.n_max {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                n,
                f(self.lambda[2 * n - 1]),
                f(self.lambda[2 * n]),
                f(self.gaps[n - 1]),
                f(self.mu[n - 1])
            ));
        }
        s
    }
}

fn xtol(x: f64) -> f64 {
    8.0 * f64::EPSILON * (1.0 + x.abs())
}

fn sigma_index(n: usize) -> usize {
    // Gap n sits where (-1)^n Δ >= 2.
    if n % 2 == 0 {
        0
    } else {
        1
    }
}

/// Upper end of the scan for `n_max` gaps.
pub fn scan_cutoff(d: &impl Discriminant, n_max: usize) -> f64 {
    d.shift() + ((n_max as f64 + 1.0) * PI).powi(2)
}

/// `(λ, Δ(λ))` on the scan grid.
pub fn delta_scan(d: &impl Discriminant, n_max: usize, step: f64) -> Result<Vec<(f64, f64)>> {
    let lo = d.lower_bound();
    let cutoff = scan_cutoff(d, n_max);
    let smax = (cutoff - lo).max(0.0).sqrt();
    let count = (smax / step).ceil() as usize;
    (0..=count)
        .into_par_iter()
        .map(|i| {
            let s = smax * i as f64 / count as f64;
            let lam = lo + s * s;
            Ok((lam, d.evaluate(lam, false)?.delta()))
        })
        .collect()
}

/// Periodic spectrum up to gap `n_max`.
pub fn periodic_spectrum_with(d: &impl Discriminant, n_max: usize, tol: &SpectrumTolerances) -> Result<PeriodicSpectrum> {
    if n_max == 0 {
        return Err(Error::Domain("n_max must be at least 1".into()));
    }
    let scan = delta_scan(d, n_max, tol.scan_step)?;
    let brackets: Vec<(f64, f64)> = scan
        .windows(2)
        .filter(|w| (w[0].1 >= 0.0) != (w[1].1 >= 0.0))
        .map(|w| (w[0].0, w[1].0))
        .collect();
    if scan[0].1 <= 2.0 {
        return Err(Error::Resolution(format!(
            "discriminant {} at the scan start {} should exceed 2 below the ground state",
            scan[0].1, scan[0].0
        )));
    }
    if brackets.len() != n_max + 1 {
        return Err(Error::MissedRoot {
            expected: n_max + 1,
            found: brackets.len(),
            cutoff: scan.last().map(|p| p.0).unwrap_or(f64::NAN),
            scan,
        });
    }
    let delta = |l: f64| d.evaluate(l, false).map(|t| t.delta());
    let centers: Vec<f64> = brackets
        .par_iter()
        .map(|&(a, b)| brent(delta, a, b, xtol(b)).map(|r| r.expect("scan bracket")))
        .collect::<Result<_>>()?;

    let gaps: Vec<(f64, f64, f64, f64)> = (1..=n_max)
        .into_par_iter()
        .map(|n| {
            let (a, b) = (centers[n - 1], centers[n]);
            let ddot = |l: f64| d.evaluate(l, true).map(|t| t.delta_dot().unwrap_or(f64::NAN));
            let m = brent(ddot, a, b, xtol(b))?.ok_or_else(|| Error::MissedRoot {
                expected: 1,
                found: 0,
                cutoff: b,
                scan: vec![],
            })?;
            let si = sigma_index(n);
            let excess = |l: f64| d.evaluate(l, false).map(|t| t.excess[si]);
            let dm = excess(m)?;
            if dm <= tol.closed_floor {
                return Ok((m, m, m, dm));
            }
            let lo = brent(excess, a, m, xtol(m))?.unwrap_or(m);
            let hi = brent(excess, m, b, xtol(m))?.unwrap_or(m);
            let nn = (n as f64 * PI).powi(2);
            if hi - lo < tol.snap * (1.0 + nn) {
                Ok((m, m, m, dm))
            } else {
                Ok((lo, hi, m, dm))
            }
        })
        .collect::<Result<_>>()?;

    let excess0 = |l: f64| d.evaluate(l, false).map(|t| t.excess[0]);
    let lam0 = brent(excess0, scan[0].0, centers[0], xtol(centers[0]))?.ok_or_else(|| Error::MissedRoot {
        expected: 1,
        found: 0,
        cutoff: centers[0],
        scan: vec![],
    })?;

    let mut lambda = vec![lam0];
    for g in &gaps {
        lambda.push(g.0);
        lambda.push(g.1);
    }
    Ok(PeriodicSpectrum {
        lambda,
        band_centers: centers,
        extrema: gaps.iter().map(|g| g.2).collect(),
        extremum_excess: gaps.iter().map(|g| g.3).collect(),
    })
}

pub fn periodic_spectrum(u: &FourierField, n_max: usize) -> Result<PeriodicSpectrum> {
    periodic_spectrum_with(&Hill::new(u), n_max, &SpectrumTolerances::default())
}

/// `g_n = λ_{2n} − λ_{2n−1}`.
pub fn gap_lengths(lambda: &[f64]) -> Vec<f64> {
    (1..=(lambda.len() - 1) / 2)
        .map(|n| (lambda[2 * n] - lambda[2 * n - 1]).max(0.0))
        .collect()
}

/// Dirichlet eigenvalues for `y(z) = y(z + 1) = 0`, located inside the
/// gap closures of `spec`.
pub fn dirichlet_in(hill: &Hill, spec: &PeriodicSpectrum, z: f64, tol: &SpectrumTolerances) -> Result<Vec<f64>> {
    let shifted = hill.translated(z);
    let n_max = spec.n_max();
    (1..=n_max)
        .into_par_iter()
        .map(|n| {
            let (a, b) = (spec.band_centers[n - 1], spec.band_centers[n]);
            let y2 = |l: f64| shifted.transfer(l, false).map(|t| t.y2);
            let mu = brent(y2, a, b, xtol(b))?.ok_or_else(|| Error::MissedRoot {
                expected: 1,
                found: 0,
                cutoff: b,
                scan: vec![],
            })?;
            let (lo, hi) = spec.gap_edges(n);
            let slack = (tol.interlace * (1.0 + mu.abs())).max(2.0 * spec.edge_resolution(n, tol));
            if mu < lo - slack || mu > hi + slack {
                return Err(Error::Interlacing { gap: n, lo, mu, hi });
            }
            Ok(mu.clamp(lo, hi))
        })
        .collect()
}

pub fn dirichlet_spectrum(u: &FourierField, n_max: usize, z: f64) -> Result<Vec<f64>> {
    let hill = Hill::new(u);
    let tol = SpectrumTolerances::default();
    let spec = periodic_spectrum_with(&hill, n_max, &tol)?;
    dirichlet_in(&hill, &spec, z, &tol)
}

/// Full spectral record for `u` with Dirichlet data at shift `z`.
pub fn hill_spectrum(u: &FourierField, n_max: usize, z: f64) -> Result<HillSpectrum> {
    let hill = Hill::new(u);
    let tol = SpectrumTolerances::default();
    let spec = periodic_spectrum_with(&hill, n_max, &tol)?;
    let mu = dirichlet_in(&hill, &spec, z, &tol)?;
    Ok(HillSpectrum {
        gaps: gap_lengths(&spec.lambda),
        lambda: spec.lambda,
        mu,
        z,
        n_max,
        tolerances: tol,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceReconstruction {
    pub z: Vec<f64>,
    pub values: Vec<f64>,
    /// Largest magnitude of the last retained term over the z-grid.
    pub last_term: f64,
}

/// `u(z) ≈ λ_0 + Σ_j (λ_{2j−1} + λ_{2j} − 2μ_j(z))`.
pub fn trace_reconstruct_with(hill: &Hill, n_max: usize, zs: &[f64]) -> Result<TraceReconstruction> {
    let tol = SpectrumTolerances::default();
    let spec = periodic_spectrum_with(hill, n_max, &tol)?;
    let rows: Vec<(f64, f64, f64)> = zs
        .par_iter()
        .map(|&z| {
            let mu = dirichlet_in(hill, &spec, z, &tol)?;
            let terms: Vec<f64> = (1..=n_max)
                .map(|j| spec.lambda[2 * j - 1] + spec.lambda[2 * j] - 2.0 * mu[j - 1])
                .collect();
            let first = terms.first().copied().unwrap_or(0.0).abs();
            let last = terms.last().copied().unwrap_or(0.0).abs();
            Ok((spec.lambda[0] + terms.iter().sum::<f64>(), last, first))
        })
        .collect::<Result<_>>()?;
    let last_term = rows.iter().fold(0.0f64, |m, r| m.max(r.1));
    let first_term = rows.iter().fold(0.0f64, |m, r| m.max(r.2));
    if n_max >= 4 && first_term > 0.0 && last_term > 0.5 * first_term && last_term > 1e-10 {
        return Err(Error::Resolution(format!(
            "trace series terms do not decay (first {first_term:e}, last {last_term:e})"
        )));
    }
    Ok(TraceReconstruction {
        z: zs.to_vec(),
        values: rows.iter().map(|r| r.0).collect(),
        last_term,
    })
}

pub fn trace_reconstruct(u: &FourierField, n_max: usize, zs: &[f64]) -> Result<TraceReconstruction> {
    trace_reconstruct_with(&Hill::new(u), n_max, zs)
}
