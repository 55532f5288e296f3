use kdvlab::averaging::{empirical_averaged_rhs, action_production, AveragingOptions};
use kdvlab::kdvflow::Perturbation;
use kdvlab::FourierField;

fn opts(t_avg: f64, snapshots: usize) -> AveragingOptions {
    AveragingOptions {
        n_max: 3,
        t_avg,
        dt: 1e-4,
        snapshots,
        fd_step: 1e-3,
        query: None,
        err_tol: None,
        tail_tol: 1e-20,
    }
}

fn u0() -> FourierField {
    FourierField::on_min_grid(16, &[(1, 0.2), (3, 0.05)]).unwrap()
}

fn force() -> Perturbation {
    Perturbation::external_force(1.0, FourierField::on_min_grid(16, &[(3, 1.0)]).unwrap())
}

#[test]
fn oscillating_force_averages_out_and_error_bar_shrinks() {
    let u = u0();
    let inst = action_production(&u, &force(), 3, 1e-3).unwrap()[2].abs();
    assert!(inst > 1e-4, "instantaneous production {inst}");
    let short = empirical_averaged_rhs(&u, &force(), &opts(0.0064, 8)).unwrap();
    let long = empirical_averaged_rhs(&u, &force(), &opts(0.1024, 128)).unwrap();
    assert!(long.err[2] < short.err[2], "{} vs {}", long.err[2], short.err[2]);
    assert!(long.mean[2].abs() < 1e-2 * inst, "{} vs {inst}", long.mean[2]);
}

#[test]
fn dissipative_average_is_window_independent() {
    let u = u0();
    let p = Perturbation::dissipative(1.0);
    let a = empirical_averaged_rhs(&u, &p, &opts(0.0256, 32)).unwrap();
    let b = empirical_averaged_rhs(&u, &p, &opts(0.0512, 64)).unwrap();
    for k in 0..3 {
        let scale = a.mean[k].abs().max(1e-14);
        assert!((a.mean[k] - b.mean[k]).abs() < 1e-2 * scale + a.err[k] + b.err[k], "mode {}", k + 1);
        assert!(a.mean[k] < 0.0 || a.actions[k] < 1e-14);
    }
}
