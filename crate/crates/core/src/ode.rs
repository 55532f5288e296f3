//! Adaptive Gragg–Bulirsch–Stoer extrapolation for small smooth systems.

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step as a fraction of the interval.
    pub first_step: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rtol: 1e-13,
            atol: 1e-15,
            first_step: 0.25,
            max_steps: 100_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepUnderflow {
    pub x: f64,
    pub h: f64,
}

const MAX_COLS: usize = 10;
const MIN_COL: usize = 2;

/// Substep counts of the modified midpoint rule (harmonic sequence, even).
fn substeps(k: usize) -> usize {
    2 * (k + 1)
}

fn midpoint<const D: usize, F>(f: &mut F, x: f64, y: &[f64; D], dydx: &[f64; D], big_h: f64, n: usize) -> [f64; D]
where
    F: FnMut(f64, &[f64; D], &mut [f64; D]),
{
    let h = big_h / n as f64;
    let mut zm = *y;
    let mut zn = [0.0; D];
    for i in 0..D {
        zn[i] = y[i] + h * dydx[i];
    }
    let mut d = [0.0; D];
    for m in 1..n {
        f(x + m as f64 * h, &zn, &mut d);
        for i in 0..D {
            let t = zm[i] + 2.0 * h * d[i];
            zm[i] = zn[i];
            zn[i] = t;
        }
    }
    f(x + big_h, &zn, &mut d);
    let mut out = [0.0; D];
    for i in 0..D {
        out[i] = 0.5 * (zm[i] + zn[i] + h * d[i]);
    }
    out
}

/// Integrates `y' = f(x, y)` from `x0` to `x1`.
pub fn integrate<const D: usize, F>(
    mut f: F,
    x0: f64,
    x1: f64,
    y0: [f64; D],
    opts: &OdeOptions,
) -> Result<[f64; D], StepUnderflow>
where
    F: FnMut(f64, &[f64; D], &mut [f64; D]),
{
    let span = x1 - x0;
    if span == 0.0 {
        return Ok(y0);
    }
    let dir = span.signum();
    let mut x = x0;
    let mut y = y0;
    let mut h = span * opts.first_step;
    let mut dydx = [0.0; D];
    let mut table = [[0.0; D]; MAX_COLS];
    let min_h = 1e-14 * span.abs().max(x0.abs());

    for _ in 0..opts.max_steps {
        if (x1 - x) * dir <= 0.0 {
            return Ok(y);
        }
        let last = (x + h - x1) * dir >= 0.0;
        if last {
            h = x1 - x;
        }
        f(x, &y, &mut dydx);
        let mut accepted = None;
        let mut err_last = f64::INFINITY;
        for k in 0..MAX_COLS {
            table[k] = midpoint(&mut f, x, &y, &dydx, h, substeps(k));
            // Aitken–Neville extrapolation in h².
            for j in (0..k).rev() {
                let r = (substeps(k) as f64 / substeps(j) as f64).powi(2) - 1.0;
                for i in 0..D {
                    table[j][i] = table[j + 1][i] + (table[j + 1][i] - table[j][i]) / r;
                }
            }
            if k >= MIN_COL {
                // table[0] is the highest-order value, table[1] one order less.
                let mut err: f64 = 0.0;
                for i in 0..D {
                    let sc = opts.atol + opts.rtol * y[i].abs().max(table[0][i].abs());
                    err = err.max(((table[0][i] - table[1][i]) / sc).abs());
                }
                err_last = err;
                if err <= 1.0 {
                    accepted = Some((k, err));
                    break;
                }
            }
        }
        match accepted {
            Some((k, err)) => {
                x = if last { x1 } else { x + h };
                y = table[0];
                let fac = if err == 0.0 {
                    4.0
                } else {
                    (0.94 * (0.65 / err).powf(1.0 / (2 * k + 1) as f64)).clamp(0.2, 4.0)
                };
                // Prefer growing the step when convergence was cheap.
                let fac = if k <= 4 { fac.max(1.5).min(4.0) } else if k >= 7 { fac.min(0.7) } else { fac };
                h *= fac;
            }
            None => {
                let fac = (0.94 * (0.65 / err_last).powf(1.0 / (2 * MAX_COLS - 1) as f64)).clamp(0.1, 0.5);
                h *= if err_last.is_finite() { fac } else { 0.1 };
            }
        }
        if h.abs() < min_h {
            return Err(StepUnderflow { x, h });
        }
    }
    Err(StepUnderflow { x, h })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn harmonic_oscillator() {
        let w = 7.3;
        let y = integrate(
            |_, y: &[f64; 2], d: &mut [f64; 2]| {
                d[0] = y[1];
                d[1] = -w * w * y[0];
            },
            0.0,
            1.0,
            [1.0, 0.0],
            &OdeOptions::default(),
        )
        .unwrap();
        assert_relative_eq!(y[0], w.cos(), epsilon = 1e-12);
        assert_relative_eq!(y[1], -w * w.sin(), epsilon = 1e-11);
    }

    #[test]
    fn exponential_growth_and_backward() {
        let y = integrate(|_, y: &[f64; 1], d: &mut [f64; 1]| d[0] = 3.0 * y[0], 0.0, 2.0, [1.0], &OdeOptions::default()).unwrap();
        assert_relative_eq!(y[0], 6f64.exp(), max_relative = 1e-12);
        let back = integrate(|_, y: &[f64; 1], d: &mut [f64; 1]| d[0] = 3.0 * y[0], 2.0, 0.0, y, &OdeOptions::default()).unwrap();
        assert_relative_eq!(back[0], 1.0, max_relative = 1e-12);
    }

    #[test]
    fn non_autonomous() {
        // y' = cos(x) y, y = exp(sin x)
        let y = integrate(|x, y: &[f64; 1], d: &mut [f64; 1]| d[0] = x.cos() * y[0], 0.0, 3.0, [1.0], &OdeOptions::default()).unwrap();
        assert_relative_eq!(y[0], 3f64.sin().exp(), max_relative = 1e-12);
    }

    #[test]
    fn zero_span_is_identity() {
        let y = integrate(|_, _: &[f64; 1], d: &mut [f64; 1]| d[0] = 1.0, 1.0, 1.0, [5.0], &OdeOptions::default()).unwrap();
        assert_eq!(y[0], 5.0);
    }
}
