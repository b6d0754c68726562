mod common;

use common::PROBLEMS;
use num_complex::Complex64;
use proptest::prelude::*;

use psr_core::config::{parse_config, to_config_text};
use psr_core::ladder::{build_ladder_generator, evolve_ladder, LadderDistribution};
use psr_core::lindblad::{build_generator, evolve, reduce_observables, CouplingMatrix, DensityMatrix};
use psr_core::meanfield::{build_meanfield_rhs, evolve_meanfield, MeanFieldState};
use psr_core::observables::{detect_bursts, extension_factor, lifetime, Audit, Engine, RunResult, Series};
use psr_core::ode::{integrate, IntegrationSpec};
use psr_core::params::{
    apply_cavity, collectivity_regime, geometry_to_mu, normalize, validate, CavityConfig,
    PhysicalParams, SampleGeometry, SeedPolicy, Transition,
};
use psr_core::scenarios::{preset, PRESET_NAMES};

fn physical(n: usize, rabi: f64, mu0: f64, mu1: f64) -> PhysicalParams {
    let mut p = PhysicalParams::positronium(n);
    p.rabi = rabi;
    p.mu0 = mu0;
    p.mu1 = mu1;
    p.collective_01 = true;
    p.collective_12 = true;
    p
}

fn simplex() -> impl Strategy<Value = [f64; 4]> {
    prop::array::uniform4(0.0f64..1.0).prop_map(|w| {
        let s: f64 = w.iter().sum::<f64>() + 1e-9;
        [w[0] / s, w[1] / s, w[2] / s, 1.0 - (w[0] + w[1] + w[2]) / s]
    })
}

fn complex() -> impl Strategy<Value = Complex64> {
    (-0.5f64..0.5, -0.5f64..0.5).prop_map(|(re, im)| Complex64::new(re, im))
}

fn meanfield_state() -> impl Strategy<Value = MeanFieldState> {
    (simplex(), complex(), complex(), complex()).prop_map(|(p, s01, s12, s02)| MeanFieldState {
        p,
        s01,
        s12,
        s02,
    })
}

/// Single-atom density matrix `lambda |psi><psi| + (1 - lambda) diag(q)`.
fn physical_state() -> impl Strategy<Value = MeanFieldState> {
    (prop::array::uniform4(complex()), simplex(), 0.0f64..1.0).prop_map(|(amp, q, lambda)| {
        let norm = amp.iter().map(|a| a.norm_sqr()).sum::<f64>().max(1e-12).sqrt();
        let psi: Vec<Complex64> = amp.iter().map(|a| a / norm).collect();
        let mut p = [0.0; 4];
        for l in 0..4 {
            p[l] = lambda * psi[l].norm_sqr() + (1.0 - lambda) * q[l];
        }
        let coh = |a: usize, b: usize| psi[b] * psi[a].conj() * lambda;
        MeanFieldState {
            p,
            s01: coh(0, 1),
            s12: coh(1, 2),
            s02: coh(0, 2),
        }
    })
}

fn series_of(t: &[f64], p3: impl Fn(f64) -> f64) -> Series {
    let mut s = Series::default();
    for &x in t {
        let a = p3(x);
        s.push(x, [0.0, 0.0, 1.0 - a, a], [0.0; 3]);
    }
    s
}

fn grid(t_end: f64, n: usize) -> Vec<f64> {
    IntegrationSpec::new(0.0, t_end, n).sample_times()
}

proptest! {
    #[test]
    fn normalize_is_idempotent(
        g0 in 1e-3f64..10.0, g1 in 1e-3f64..10.0, g2 in 1e-3f64..10.0, rabi in 0.0f64..1e3,
    ) {
        let mut p = physical(10, rabi, 0.3, 0.2);
        p.gamma0 = g0;
        p.gamma1 = g1;
        p.gamma2 = g2;
        let once = normalize(&p);
        prop_assert_eq!(normalize(&once), once.clone());
        prop_assert_eq!(once.gamma2, 1.0);
    }

    #[test]
    fn cavity_touches_only_gamma0(g in 0.0f64..5.0, kappa in 1e-3f64..10.0, rabi in 0.0f64..500.0) {
        let p = physical(1000, rabi, 0.4, 0.1);
        let out = apply_cavity(&p, &CavityConfig { g, kappa }).unwrap();
        prop_assert_eq!(out.params.gamma0, g * g / kappa);
        let mut rest = out.params.clone();
        rest.gamma0 = p.gamma0;
        prop_assert_eq!(rest, p);
    }

    #[test]
    fn regime_is_monotone_in_density(a in 1e6f64..1e18, b in 1e6f64..1e18, d in 1e-5f64..1e-2) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let r_lo = collectivity_regime(&SampleGeometry::positronium(lo, d)).unwrap();
        let r_hi = collectivity_regime(&SampleGeometry::positronium(hi, d)).unwrap();
        prop_assert!(r_lo <= r_hi);
    }

    #[test]
    fn mu_is_bounded_and_falls_with_diameter(d1 in 1e-6f64..1e-1, d2 in 1e-6f64..1e-1) {
        let (small, large) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
        for t in [Transition::T01, Transition::T12] {
            let a = geometry_to_mu(&SampleGeometry::positronium(1e12, small), t).unwrap();
            let b = geometry_to_mu(&SampleGeometry::positronium(1e12, large), t).unwrap();
            prop_assert!(a > 0.0 && a <= 1.0 && b > 0.0 && b <= a);
        }
    }

    #[test]
    fn output_grid_matches_request(t0 in -5.0f64..5.0, span in 0.1f64..20.0, n in 2usize..200) {
        let spec = IntegrationSpec::new(t0, t0 + span, n).with_tolerances(1e-8, 1e-12);
        let tr = integrate(|_, y: &[f64], dy: &mut [f64]| dy[0] = -y[0], &[1.0], &spec).unwrap();
        let times: Vec<f64> = tr.samples.iter().map(|s| s.t).collect();
        prop_assert_eq!(times, spec.sample_times());
        prop_assert_eq!(tr.samples[0].t, t0);
        prop_assert_eq!(tr.samples[n - 1].t, t0 + span);
    }

    #[test]
    fn integration_is_deterministic(rate in 0.1f64..5.0, w in 0.5f64..20.0) {
        let spec = IntegrationSpec::new(0.0, 3.0, 31).with_tolerances(1e-9, 1e-12);
        let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = -rate * y[0] + w * y[1];
            dy[1] = -w * y[0] - rate * y[1];
        };
        let a = integrate(rhs, &[1.0, 0.0], &spec).unwrap();
        let b = integrate(rhs, &[1.0, 0.0], &spec).unwrap();
        prop_assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn mu_of_n_minus_one_is_the_only_collective_parameter(
        x in meanfield_state(),
        n in 2usize..1_000_000,
        mu0 in 0.0f64..1.0,
        mu1 in 0.0f64..1.0,
        rabi in 0.0f64..1e3,
    ) {
        let a = build_meanfield_rhs(&validate(&physical(n, rabi, mu0, mu1)).unwrap());
        let b = build_meanfield_rhs(&validate(&physical(2 * n - 1, rabi, mu0 / 2.0, mu1 / 2.0)).unwrap());
        prop_assert_eq!(a.eval_state(&x), b.eval_state(&x));
    }

    #[test]
    fn zero_collectivity_reproduces_one_atom(x in meanfield_state(), n in 2usize..1_000_000, rabi in 0.0f64..1e3) {
        let one = build_meanfield_rhs(&validate(&physical(1, rabi, 0.7, 0.7)).unwrap());
        let many = build_meanfield_rhs(&validate(&physical(n, rabi, 0.0, 0.0)).unwrap());
        prop_assert_eq!(one.eval_state(&x), many.eval_state(&x));
    }

    #[test]
    fn bursts_are_affine_invariant(
        raw in prop::collection::vec(0u32..64, 3..200),
        scale_exp in -4i32..5,
        shift in -8i32..8,
    ) {
        let x: Vec<f64> = raw.iter().map(|&v| v as f64 / 64.0).collect();
        let a = 2f64.powi(scale_exp);
        let y: Vec<f64> = x.iter().map(|v| a * v + shift as f64).collect();
        prop_assert_eq!(detect_bursts(&x, 0.05).unwrap(), detect_bursts(&y, 0.05).unwrap());
    }

    #[test]
    fn lifetime_is_stable_under_grid_halving(tau in 0.2f64..5.0, span in 3.0f64..10.0, n in 200usize..1000) {
        let f = |t: f64| 1.0 - (-t / tau).exp();
        let coarse = lifetime(&series_of(&grid(span * tau, n), f)).unwrap().value();
        let fine = lifetime(&series_of(&grid(span * tau, 2 * n - 1), f)).unwrap().value();
        prop_assert!((coarse - fine).abs() < 0.01 * fine, "{coarse} vs {fine}");
    }

    #[test]
    fn extension_of_a_run_against_itself_is_one(tau in 0.2f64..5.0, n in 50usize..500) {
        let s = series_of(&grid(10.0, n), |t| 1.0 - (-t / tau).exp());
        let r = RunResult::new(Engine::Meanfield, PhysicalParams::positronium(1), s, Audit::default(), None).unwrap();
        prop_assert_eq!(extension_factor(&r, &r).unwrap(), 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn halving_rtol_never_increases_error(which in 0usize..4, log_rtol in -12.0f64..-3.0) {
        let problem = PROBLEMS[which];
        let rtol = 10f64.powf(log_rtol);
        let (e1, e2) = (problem.error(rtol), problem.error(rtol / 2.0));
        prop_assert!(e2 <= e1, "{problem:?} rtol {rtol:e}: {e1:e} -> {e2:e}");
    }

    #[test]
    fn meanfield_conserves_probability(
        state in physical_state(),
        n in 1usize..1_000_000,
        mu0 in 0.0f64..0.01,
        mu1 in 0.0f64..0.01,
        rabi in 0.0f64..50.0,
    ) {
        let rhs = build_meanfield_rhs(&validate(&physical(n, rabi, mu0, mu1)).unwrap());
        let spec = IntegrationSpec::new(0.0, 3.0, 61).with_tolerances(1e-9, 1e-12);
        let (traj, audit) = evolve_meanfield(&state, &rhs, &spec).unwrap();
        for (_, s) in &traj {
            prop_assert!((s.p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        prop_assert!(audit.max_p3_decrease <= 1e-12);
    }

    #[test]
    fn ladder_conserves_and_orders_means(n in 2usize..40, mu1 in 0.05f64..1.0, frac in 0.0f64..1.0) {
        let mut p = physical(n, 0.0, 0.0, mu1);
        p.collective_01 = false;
        let gen = build_ladder_generator(&validate(&p).unwrap()).unwrap();
        let k = ((n as f64) * frac).round() as usize;
        let p0 = LadderDistribution::point(n, k, 0).unwrap();
        let spec = IntegrationSpec::new(0.0, 20.0, 41).with_tolerances(1e-10, 1e-13);
        let (traj, audit) = evolve_ladder(&p0, &gen, &spec).unwrap();
        prop_assert!(audit.max_norm_drift < 1e-9);
        for w in traj.windows(2) {
            let (a, b) = (w[0].1, w[1].1);
            prop_assert!(b[1] <= a[1] + 1e-12, "p1 rose: {} -> {}", a[1], b[1]);
            prop_assert!(b[3] >= a[3] - 1e-12, "p3 fell: {} -> {}", a[3], b[3]);
            prop_assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn exact_two_atoms_stay_physical_and_symmetric(
        rabi in 0.0f64..20.0,
        mu0 in 0.0f64..1.0,
        mu1 in 0.0f64..1.0,
        a in 0usize..4,
        b in 0usize..4,
    ) {
        let params = validate(&physical(2, rabi, mu0, mu1)).unwrap();
        let mut gen = build_generator(&params, &CouplingMatrix::uniform(2, mu0, mu1)).unwrap();
        let spec = IntegrationSpec::new(0.0, 2.0, 21);
        let (ab, audit) = evolve(&DensityMatrix::basis_state(&[a, b]).unwrap(), &mut gen, &spec).unwrap();
        let (ba, _) = evolve(&DensityMatrix::basis_state(&[b, a]).unwrap(), &mut gen, &spec).unwrap();
        prop_assert!(audit.max_trace_drift < 1e-9);
        prop_assert!(audit.min_eigenvalue > -1e-9);
        prop_assert!(audit.max_p3_decrease <= 1e-12);
        for ((_, x), (_, y)) in ab.iter().zip(&ba) {
            let (ox, oy) = (reduce_observables(x), reduce_observables(y));
            for l in 0..4 {
                prop_assert!((ox.p[l] - oy.p[l]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn config_text_round_trips(
        which in 0usize..3,
        rabi in 0.0f64..1e3,
        mu1 in 0.0f64..1.0,
        n in 1usize..10_000_000,
        samples in 2usize..5000,
        eps in 0.0f64..1.0,
        named in any::<bool>(),
    ) {
        let mut s = preset(PRESET_NAMES[which]).unwrap();
        // The undriven preset carries a ladder companion, which needs rabi = 0.
        if s.params.rabi > 0.0 {
            s.params.rabi = rabi;
        }
        s.params.mu1 = mu1;
        s.params.n_atoms = n;
        s.spec.sample_count = samples;
        s.initial.seed = SeedPolicy::Tipping { epsilon: eps };
        if !named {
            s.preset = None;
        }
        prop_assert_eq!(parse_config(&to_config_text(&s)).unwrap(), s);
    }
}
