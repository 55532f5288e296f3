//! Bracketed scalar root finding and minimization.

/// Brent's method on `[a, b]` with `f(a)`, `f(b)` of opposite sign (or zero).
/// Returns `None` when the interval does not bracket a root.
pub fn brent<F, E>(mut f: F, mut a: f64, mut b: f64, xtol: f64) -> Result<Option<f64>, E>
where
    F: FnMut(f64) -> Result<f64, E>,
{
    let mut fa = f(a)?;
    let mut fb = f(b)?;
    if fa == 0.0 {
        return Ok(Some(a));
    }
    if fb == 0.0 {
        return Ok(Some(b));
    }
    if fa.signum() == fb.signum() {
        return Ok(None);
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..200 {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return Ok(Some(b));
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b)?;
    }
    Ok(Some(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    type R = Result<f64, ()>;

    #[test]
    fn finds_simple_roots() {
        let r = brent(|x| -> R { Ok(x * x - 2.0) }, 0.0, 2.0, 1e-15).unwrap().unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-14);
        let r = brent(|x| -> R { Ok(x.cos()) }, 1.0, 2.0, 1e-15).unwrap().unwrap();
        assert!((r - std::f64::consts::FRAC_PI_2).abs() < 1e-14);
    }

    #[test]
    fn rejects_non_bracket() {
        assert_eq!(brent(|x| -> R { Ok(x * x + 1.0) }, -1.0, 1.0, 1e-12).unwrap(), None);
    }

    #[test]
    fn propagates_errors() {
        let r: Result<Option<f64>, &str> = brent(|_| Err("boom"), 0.0, 1.0, 1e-12);
        assert_eq!(r, Err("boom"));
    }
}
