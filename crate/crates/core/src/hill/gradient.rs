//! Finite-difference `L²` gradients and the Gardner bracket.

use crate::error::{Error, Result};
use crate::grid::FourierField;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdOptions {
    pub h: f64,
    /// Combine steps `h` and `h/2` to cancel the `O(h²)` term.
    pub richardson: bool,
}

impl Default for FdOptions {
    fn default() -> Self {
        FdOptions { h: 1e-4, richardson: false }
    }
}

fn central<F>(f: &F, u: &FourierField, h: f64) -> Result<FourierField>
where
    F: Fn(&FourierField) -> Result<f64> + Sync,
{
    use rayon::prelude::*;
    let k = u.modes() as i64;
    let dirs: Vec<i64> = (1..=k).flat_map(|j| [j, -j]).collect();
    let vals: Vec<f64> = dirs
        .par_iter()
        .map(|&dir| {
            let mut p = u.clone();
            let mut m = u.clone();
            p.set(dir, u.get(dir) + h)?;
            m.set(dir, u.get(dir) - h)?;
            let (fp, fm) = (f(&p)?, f(&m)?);
            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::NonFinite(format!("functional at probe direction {dir}")));
            }
            Ok((fp - fm) / (2.0 * h))
        })
        .collect::<Result<_>>()?;
    let mut g = FourierField::zeros(u.modes(), u.grid_size())?;
    for (dir, v) in dirs.iter().zip(vals) {
        g.set(*dir, v)?;
    }
    Ok(g)
}

/// Gradient of a scalar functional in the retained basis directions.
pub fn functional_gradient_fd<F>(f: F, u: &FourierField, opts: &FdOptions) -> Result<FourierField>
where
    F: Fn(&FourierField) -> Result<f64> + Sync,
{
    let g = central(&f, u, opts.h)?;
    if !opts.richardson {
        return Ok(g);
    }
    let mut fine = central(&f, u, 0.5 * opts.h)?;
    fine.scale(4.0 / 3.0);
    fine.axpy(-1.0 / 3.0, &g)?;
    Ok(fine)
}

/// `{F, G} = ∫ (∂_x ∇F) ∇G dx`.
pub fn gardner_bracket(grad_f: &FourierField, grad_g: &FourierField) -> Result<f64> {
    if grad_f.modes() != grad_g.modes() {
        return Err(crate::grid::GridError::Mismatch(
            grad_f.modes(),
            grad_f.grid_size(),
            grad_g.modes(),
            grad_g.grid_size(),
        )
        .into());
    }
    Ok(grad_f.derivative(1).inner(grad_g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kdvflow::hamiltonian;
    use approx::assert_abs_diff_eq;

    fn sample() -> FourierField {
        FourierField::on_min_grid(6, &[(1, 0.3), (-2, 0.1), (3, -0.05)]).unwrap()
    }

    #[test]
    fn quadratic_functional() {
        let u = sample();
        let g = functional_gradient_fd(|v| Ok(0.5 * v.inner(v)), &u, &FdOptions::default()).unwrap();
        for (a, b) in g.pairs().iter().zip(u.pairs()) {
            assert_abs_diff_eq!(a[0], b[0], epsilon = 1e-10);
            assert_abs_diff_eq!(a[1], b[1], epsilon = 1e-10);
        }
    }

    #[test]
    fn hamiltonian_gradient() {
        let u = FourierField::on_min_grid(12, &[(1, 0.3), (-2, 0.1), (3, -0.05)]).unwrap();
        let g = functional_gradient_fd(|v| Ok(hamiltonian(v)), &u, &FdOptions { h: 1e-4, richardson: true }).unwrap();
        let mut expect = u.derivative(2).scaled(-1.0);
        let sq = u.product_dealiased(&u).unwrap().field;
        expect.axpy(3.0, &sq).unwrap();
        for (a, b) in g.pairs().iter().zip(expect.pairs()) {
            assert_abs_diff_eq!(a[0], b[0], epsilon = 1e-8);
            assert_abs_diff_eq!(a[1], b[1], epsilon = 1e-8);
        }
    }

    #[test]
    fn bracket_is_antisymmetric() {
        let a = sample();
        let b = a.translated(0.2).derivative(1);
        assert_abs_diff_eq!(gardner_bracket(&a, &a).unwrap(), 0.0, epsilon = 1e-14);
        let ab = gardner_bracket(&a, &b).unwrap();
        let ba = gardner_bracket(&b, &a).unwrap();
        assert_abs_diff_eq!(ab, -ba, epsilon = 1e-12);
    }

    #[test]
    fn l2_norm_commutes_with_hamiltonian() {
        let u = FourierField::on_min_grid(12, &[(1, 0.3), (-2, 0.1)]).unwrap();
        let opts = FdOptions { h: 1e-4, richardson: true };
        let g1 = functional_gradient_fd(|v| Ok(0.5 * v.inner(v)), &u, &opts).unwrap();
        let g2 = functional_gradient_fd(|v| Ok(hamiltonian(v)), &u, &opts).unwrap();
        assert_abs_diff_eq!(gardner_bracket(&g1, &g2).unwrap(), 0.0, epsilon = 1e-8);
    }
}
