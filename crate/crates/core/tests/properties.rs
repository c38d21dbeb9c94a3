use dualbath::bath::{d_m, Channel};
use dualbath::output::number;
use dualbath::sectors::{sector_eigens, SectorTable};
use dualbath::spinbath::{evolve, mqs_reference, SpinBathSettings};
use dualbath::tls::{gibbs_p1, integrate, sector_weights, DynamicsSettings};
use dualbath::{BathParams, InitialTls, Mat2, PolaronConstants, Spectrum, SystemParams};
use proptest::prelude::*;

fn close(a: Mat2, b: Mat2, tol: f64) -> bool {
    (a - b).norm() <= tol
}

proptest! {
    #[test]
    fn sector_weights_form_a_distribution(half in 1u32..=12, beta in 1e-3f64..1e3, alpha in -5.0f64..5.0) {
        let w = sector_weights(2 * half, beta, alpha);
        prop_assert!(w.iter().all(|x| x.weight >= 0.0 && x.alpha_e >= 0.0));
        prop_assert!((w.iter().map(|x| x.weight).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sector_dimensions_add_up(half in 1u32..=30) {
        let n = 2 * half;
        prop_assert_eq!(SectorTable::new(n).unwrap().dimension(), 1u128 << n);
    }

    #[test]
    fn phase_factor_has_unit_modulus(m in -12i32..=12, t in 0.0f64..50.0, k1 in 0.0f64..1.0, k3 in 0.0f64..1.0, wc in 0.2f64..5.0, beta in 0.1f64..200.0) {
        let p = BathParams::new(k1, (k1 * k3).sqrt(), k3, wc, beta);
        prop_assert!(((d_m(m, t, &p) + 1.0).norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn correlation_is_hermitian_in_time(t in 0.0f64..30.0, k1 in 1e-3f64..1.0, wc in 0.2f64..5.0, beta in 0.1f64..200.0) {
        let s = Spectrum::Cubic(BathParams::new(k1, 0.0, 0.1, wc, beta));
        for ch in [Channel::TT, Channel::SS] {
            let (a, b) = (s.response(ch, t), s.response(ch, -t));
            prop_assert!((a - b.conj()).norm() <= 1e-12 * (1.0 + a.norm()));
            prop_assert!(a.re <= s.response(ch, 0.0).re * (1.0 + 1e-12));
        }
    }

    #[test]
    fn sector_propagator_is_a_unitary_group(m in -6i32..=6, eps in -2.0f64..2.0, jt in 0.0f64..2.0, gt in -1.0f64..1.0, t1 in 0.0f64..10.0, t2 in 0.0f64..10.0) {
        let k = PolaronConstants { theta: 1.0, j_tilde: jt, gamma_tilde: gt, eta: 0.1 };
        let e = sector_eigens(m, eps, &k, 0.3);
        let u = e.propagator(t1);
        prop_assert!(close(u * u.adjoint(), Mat2::identity(), 1e-12));
        prop_assert!(close(e.propagator(t1 + t2), u * e.propagator(t2), 1e-10));
    }

    #[test]
    fn mqs_reference_is_a_density_matrix_shape(half in 1u32..=6, t in 0.0f64..10.0, k3 in 0.01f64..1.0) {
        let n = 2 * half;
        let s = Spectrum::Cubic(BathParams::new(0.0, 0.0, k3, 1.0, 100.0));
        let r = mqs_reference(t, n, &s).unwrap();
        let size = n as usize + 1;
        let trace: f64 = (0..size).map(|i| r[i * size + i].re).sum();
        prop_assert!((trace - 1.0).abs() < 1e-12);
        for a in 0..size {
            for b in 0..size {
                prop_assert!((r[a * size + b] - r[b * size + a].conj()).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn gibbs_population_is_below_half(eps in 1e-3f64..5.0, j in 0.0f64..5.0, beta in 0.0f64..100.0) {
        let p = gibbs_p1(eps, j, beta);
        prop_assert!((0.0..=0.5).contains(&p));
    }

    #[test]
    fn csv_numbers_round_trip(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
        prop_assert_eq!(number(x).parse::<f64>().unwrap(), x);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn spin_bath_blocks_stay_hermitian(half in 1u32..=2, k1 in 0.0f64..0.3, k3 in 0.05f64..0.5, gamma in 0.0f64..3.0, j in 0.1f64..1.0, up in any::<bool>()) {
        let system = SystemParams { epsilon: 1.0, j, alpha: 0.2, gamma, n: 2 * half };
        let spectrum = Spectrum::Cubic(BathParams::new(k1, 0.0, k3, 1.0, 10.0));
        let mut settings = SpinBathSettings::new(1.5);
        settings.initial = if up { InitialTls::Up } else { InitialTls::Down };
        let coarse = evolve(&system, &spectrum, &settings).unwrap();
        settings.dt = Some(0.5 * coarse.dt);
        let fine = evolve(&system, &spectrum, &settings).unwrap();
        prop_assert!(coarse.hermiticity <= 1e-6 && fine.hermiticity <= 1e-6);
        // Σ_m [Θ_S]_mm is conserved by the generator, so only roundoff is left at either step
        prop_assert!(coarse.trace_drift() <= 1e-12 && fine.trace_drift() <= 1e-12);
        for th in &fine.theta {
            prop_assert!((th[1].norm() - th[2].norm()).abs() < 1e-12);
        }
        let last = coarse.theta.len() - 1;
        let gap = (0..4).map(|k| (coarse.theta[last][k] - fine.theta[fine.theta.len() - 1][k]).norm()).fold(0.0, f64::max);
        prop_assert!(gap < 1e-6, "dt halving moved Θ by {}", gap);
    }
}

#[test]
fn step_halving_on_figure_parameters() {
    for kappa2 in [0.0, 0.02] {
        let spectrum = Spectrum::Cubic(BathParams::new(0.05, kappa2, 0.1, 2.0, 2.0));
        for gamma in [0.0, 0.2, 0.6, 1.0] {
            let system = SystemParams {
                epsilon: 1.0,
                j: 1.0,
                alpha: 1.0,
                gamma,
                n: 10,
            };
            let coarse = integrate(&system, &spectrum, &DynamicsSettings::new(20.0)).unwrap();
            let fine = DynamicsSettings {
                dt: Some(0.5 * coarse.dt),
                stride: 2,
                ..DynamicsSettings::new(20.0)
            };
            let fine = integrate(&system, &spectrum, &fine).unwrap();
            assert_eq!(coarse.t.len(), fine.t.len());
            let gap = coarse
                .sigma_z
                .iter()
                .zip(&fine.sigma_z)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(gap <= 1e-5, "kappa2={kappa2} gamma={gamma}: {gap:e}");
        }
    }
}

#[test]
fn initial_state_sets_starting_population() {
    let spectrum = Spectrum::Cubic(BathParams::new(0.05, 0.0, 0.1, 2.0, 2.0));
    let system = SystemParams {
        epsilon: 1.0,
        j: 1.0,
        alpha: 1.0,
        gamma: 0.4,
        n: 6,
    };
    for (initial, z) in [(InitialTls::Down, -1.0), (InitialTls::Up, 1.0)] {
        let tr = integrate(
            &system,
            &spectrum,
            &DynamicsSettings {
                initial,
                ..DynamicsSettings::new(0.1)
            },
        )
        .unwrap();
        assert!((tr.sigma_z[0] - z).abs() < 1e-12);
        assert_eq!(tr.t.last().copied(), Some(0.1));
    }
}
