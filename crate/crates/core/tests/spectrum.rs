use approx::assert_relative_eq;
use kdvlab::hill::{dirichlet_spectrum, gap_lengths, matrix_dirichlet, matrix_oracle_spectrum, periodic_spectrum, SpectrumTolerances};
use kdvlab::FourierField;

fn field(entries: &[(i64, f64)]) -> FourierField {
    FourierField::on_min_grid(16, entries).unwrap()
}

#[test]
fn half_period_potential_closes_odd_gaps() {
    // u(x + 1/2) = u(x): the antiperiodic problem on [0, 1] is periodic on
    // the half period, so every odd gap is a double eigenvalue.
    let u = field(&[(2, 0.3), (-4, 0.1)]);
    let s = periodic_spectrum(&u, 6).unwrap();
    let gaps = gap_lengths(&s.lambda);
    let snap = SpectrumTolerances::default().snap;
    for n in [1usize, 3, 5] {
        assert!(gaps[n - 1] <= snap * (1.0 + (n as f64 * std::f64::consts::PI).powi(2)), "gap {n}: {}", gaps[n - 1]);
    }
    for n in [2usize, 4] {
        assert!(gaps[n - 1] > 1e-6, "gap {n} should be open: {}", gaps[n - 1]);
    }
}

#[test]
fn periodic_spectrum_matches_matrix_oracle() {
    let u = field(&[(1, 0.4), (-3, 0.2), (5, 0.05)]);
    let s = periodic_spectrum(&u, 6).unwrap();
    let m = matrix_oracle_spectrum(&u, 6);
    for (a, b) in s.lambda.iter().zip(&m) {
        assert_relative_eq!(*a, *b, epsilon = 1e-8, max_relative = 1e-10);
    }
}

#[test]
fn dirichlet_matches_sine_galerkin_and_interlaces() {
    let u = field(&[(1, 0.4), (-2, 0.15)]);
    let s = periodic_spectrum(&u, 5).unwrap();
    for z in [0.0, 0.17, 0.5, 0.83] {
        let mu = dirichlet_spectrum(&u, 5, z).unwrap();
        let oracle = matrix_dirichlet(&u, z, 5, 160);
        for n in 1..=5 {
            assert_relative_eq!(mu[n - 1], oracle[n - 1], max_relative = 1e-7);
            assert!(s.lambda[2 * n - 1] - 1e-9 <= mu[n - 1] && mu[n - 1] <= s.lambda[2 * n] + 1e-9, "z = {z}, n = {n}");
        }
    }
}

#[test]
fn ground_state_sits_between_min_and_mean() {
    let u = field(&[(1, 1.0), (-2, 0.5), (3, 0.2)]);
    let lo = u.synthesize().into_iter().fold(f64::INFINITY, f64::min);
    let l0 = periodic_spectrum(&u, 2).unwrap().lambda[0];
    assert!(lo <= l0 && l0 <= 0.0, "{lo} <= {l0} <= 0");
}
