use kdvlab::averaging::{occupation_of_series, resonance_by_shells, resonance_indicator, ResonanceQuery};
use kdvlab::birkhoff::{actions, percival_residual, proxy_actions};
use kdvlab::config::ExperimentConfig;
use kdvlab::hill::periodic_spectrum;
use kdvlab::kdvflow::{Perturbation, Stepper};
use kdvlab::FourierField;
use proptest::prelude::*;

fn small_field() -> impl Strategy<Value = FourierField> {
    prop::collection::vec(-0.15f64..0.15, 6).prop_map(|c| {
        let entries: Vec<(i64, f64)> = c.iter().enumerate().map(|(i, v)| (if i % 2 == 0 { 1 } else { -1 } * (i as i64 / 2 + 1), *v)).collect();
        FourierField::on_min_grid(8, &entries).unwrap()
    })
}

/// `u(-x)`: sine coefficients change sign.
fn reflected(u: &FourierField) -> FourierField {
    let mut v = u.clone();
    for k in 1..=u.modes() as i64 {
        v.set(-k, -u.get(-k)).unwrap();
    }
    v
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn spectrum_is_invariant_under_translation_and_reflection(u in small_field(), s in 0.0f64..1.0) {
        let a = periodic_spectrum(&u, 3).unwrap().lambda;
        let b = periodic_spectrum(&u.translated(s), 3).unwrap().lambda;
        let c = periodic_spectrum(&reflected(&u), 3).unwrap().lambda;
        for i in 0..a.len() {
            prop_assert!((a[i] - b[i]).abs() < 1e-9 * (1.0 + a[i].abs()));
            prop_assert!((a[i] - c[i]).abs() < 1e-9 * (1.0 + a[i].abs()));
        }
    }

    #[test]
    fn actions_are_nonnegative_and_reflection_invariant(u in small_field()) {
        let a = actions(&u, 3).unwrap().values;
        let b = actions(&reflected(&u), 3).unwrap().values;
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(*x >= 0.0);
            prop_assert!((x - y).abs() <= 1e-9 * x.max(1e-12));
        }
    }

    #[test]
    fn percival_holds_and_proxy_is_first_order(u in small_field()) {
        prop_assume!(u.l2_norm() > 1e-3);
        prop_assert!(percival_residual(&u, 6).unwrap() < 1e-7);
        let a = actions(&u, 1).unwrap().values[0];
        let p = proxy_actions(&u, 1)[0];
        // The leading correction is cubic in the amplitude.
        prop_assert!((a - p).abs() <= 5.0 * u.l2_norm() * p + 1e-14, "{a} vs {p}");
    }

    #[test]
    fn l2_drift_shrinks_at_fourth_order(u in small_field()) {
        // The Galerkin system conserves the L2 norm exactly, so any drift is
        // time-stepping error and must fall by ~16 when dt halves.
        let drift = |dt: f64| {
            let mut st = Stepper::new(8, u.grid_size(), dt, &Perturbation::none()).unwrap();
            let mut c = u.to_complex();
            for _ in 0..(0.01 / dt).round() as usize {
                st.advance(&mut c);
            }
            (FourierField::from_complex(&c, u.grid_size()).unwrap().l2_norm() - u.l2_norm()).abs()
        };
        let (coarse, fine) = (drift(1e-4), drift(5e-5));
        prop_assert!(coarse <= 1e-5 * u.l2_norm().max(1e-12), "coarse drift {coarse}");
        prop_assert!(fine <= coarse / 8.0 + 1e-14, "{coarse} -> {fine}");
    }
}

proptest! {
    #[test]
    fn enumerations_agree(w in prop::collection::vec(-300.0f64..300.0, 1..4), delta in 1e-3f64..10.0, k_res in 1usize..7) {
        let q = ResonanceQuery { delta, m: w.len(), k_res };
        prop_assert_eq!(resonance_indicator(&w, &q).unwrap(), resonance_by_shells(&w, &q).unwrap());
    }

    #[test]
    fn occupation_is_monotone_in_delta(phase in 0.0f64..6.3, d1 in 1e-3f64..5.0, d2 in 1e-3f64..5.0) {
        let times: Vec<f64> = (0..40).map(|i| i as f64 * 0.05).collect();
        let freqs: Vec<Vec<f64>> = times.iter().map(|t| vec![1.0, 2.0 + 0.4 * (3.0 * t + phase).sin()]).collect();
        let (lo, hi) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
        let f = |delta| occupation_of_series(&times, &freqs, &ResonanceQuery { delta, m: 2, k_res: 3 }).unwrap();
        prop_assert!(f(lo) <= f(hi));
    }

    #[test]
    fn config_round_trips(entries in prop::collection::vec((1i64..8, -1.0f64..1.0), 0..5), seed in any::<u64>()) {
        let body: Vec<String> = entries.iter().map(|(k, v)| format!("[{k}, {v:?}]")).collect();
        let text = format!("kind = \"actions\"\nmodes = 8\nseed = {seed}\n[initial]\nrecipe = \"coefficients\"\nentries = [{}]\n", body.join(", "));
        let c = ExperimentConfig::from_toml(&text).unwrap();
        prop_assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
    }
}
