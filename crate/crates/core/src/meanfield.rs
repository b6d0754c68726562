//! Mean-field engine: one representative atom whose collective decay is
//! driven by the ensemble-averaged coherences.
//!
//! Interatomic correlators are factorized, `<A_j B_l> -> <A><B>` for
//! `j != l`, which turns each collective channel into a self-consistent
//! field acting on the single-atom state with strength
//! `kappa_i = gamma_i * mu_i * (N - 1) / 2`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{integrate_observed, IntegrationSpec, StepStats};
use crate::params::{SeedPolicy, ValidatedParams};

/// Length of the flattened state: four populations and three complex
/// coherences.
pub const STATE_LEN: usize = 10;

const P_TOL: f64 = 1e-9;
const SUM_TOL: f64 = 1e-8;
const COH_TOL: f64 = 1e-8;
/// Evolution aborts once a tolerance is exceeded by this factor.
const ABORT_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanFieldState {
    pub p: [f64; 4],
    /// `<S_01>`, `<S_12>`, `<S_02>` with `S_ab = |a><b|`.
    pub s01: Complex64,
    pub s12: Complex64,
    pub s02: Complex64,
}

impl MeanFieldState {
    pub fn diagonal(p: [f64; 4]) -> Self {
        MeanFieldState {
            p,
            ..Default::default()
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.p[0], self.p[1], self.p[2], self.p[3], self.s01.re, self.s01.im, self.s12.re,
            self.s12.im, self.s02.re, self.s02.im,
        ]
    }

    pub fn from_slice(y: &[f64]) -> Self {
        MeanFieldState {
            p: [y[0], y[1], y[2], y[3]],
            s01: Complex64::new(y[4], y[5]),
            s12: Complex64::new(y[6], y[7]),
            s02: Complex64::new(y[8], y[9]),
        }
    }

    pub fn magnitudes(&self) -> [f64; 3] {
        [self.s01.norm(), self.s12.norm(), self.s02.norm()]
    }

    /// Largest `|s_ab|^2 - p_a p_b` over the three coherences.
    pub fn coherence_excess(&self) -> f64 {
        let p = &self.p;
        [
            self.s01.norm_sqr() - p[0] * p[1],
            self.s12.norm_sqr() - p[1] * p[2],
            self.s02.norm_sqr() - p[0] * p[2],
        ]
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Apply a seed policy to the initial coherences.
///
/// Tipping sets every zero coherence to `eps * sqrt(p_a p_b)`. The floor
/// policy seeds the same way and additionally keeps the collective
/// coherences from collapsing during evolution (see
/// [`MeanFieldRhs::with_floor`]).
pub fn seed_coherences(state: &MeanFieldState, policy: &SeedPolicy) -> Result<MeanFieldState> {
    policy.validate()?;
    let eps = match policy.epsilon() {
        None => return Ok(*state),
        Some(e) => e,
    };
    let p = state.p;
    let tip = |s: Complex64, a: usize, b: usize| {
        if s == Complex64::default() {
            Complex64::new(eps * (p[a] * p[b]).max(0.0).sqrt(), 0.0)
        } else {
            s
        }
    };
    Ok(MeanFieldState {
        p,
        s01: tip(state.s01, 0, 1),
        s12: tip(state.s12, 1, 2),
        s02: tip(state.s02, 0, 2),
    })
}

/// Right-hand side of the mean-field equations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanFieldRhs {
    pub gamma0: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub rabi: f64,
    /// Collective field strength on 0 -> 1.
    pub kappa0: f64,
    /// Collective field strength on 1 -> 2.
    pub kappa1: f64,
    /// Fluctuation floor on collective coherences, relative to `sqrt(p_a p_b)`.
    pub floor: Option<f64>,
}

pub fn collective_strength(gamma: f64, mu: f64, n_atoms: usize) -> f64 {
    0.5 * gamma * mu * (n_atoms as f64 - 1.0)
}

pub fn build_meanfield_rhs(params: &ValidatedParams) -> MeanFieldRhs {
    let n = params.n_atoms();
    MeanFieldRhs {
        gamma0: params.gamma0(),
        gamma1: params.gamma1(),
        gamma2: params.gamma2(),
        rabi: params.rabi(),
        kappa0: collective_strength(params.gamma0(), params.mu0(), n),
        kappa1: collective_strength(params.gamma1(), params.mu1(), n),
        floor: None,
    }
}

impl MeanFieldRhs {
    /// Hold each active collective coherence at or above
    /// `eps * sqrt(p_a p_b)` by relaxing its magnitude towards that level
    /// at the upper level's decay rate. Stands in for the spontaneous
    /// fluctuations that a factorized state cannot carry.
    pub fn with_floor(mut self, eps: f64) -> Self {
        self.floor = Some(eps);
        self
    }

    /// Seed-dependent rhs for an initial condition: a floor policy installs
    /// the floor, other policies leave the rhs unchanged.
    pub fn with_seed(self, policy: &SeedPolicy) -> Self {
        match policy {
            SeedPolicy::Floor { epsilon } => self.with_floor(*epsilon),
            _ => self,
        }
    }

    pub fn eval_state(&self, x: &MeanFieldState) -> MeanFieldState {
        let [p0, p1, p2, _] = x.p;
        let (s01, s12, s02) = (x.s01, x.s12, x.s02);
        let (g0, g1, g2, om) = (self.gamma0, self.gamma1, self.gamma2, self.rabi);
        let (k0, k1) = (self.kappa0, self.kappa1);
        let i = Complex64::new(0.0, 1.0);

        let flow0 = 2.0 * k0 * s01.norm_sqr();
        let flow1 = 2.0 * k1 * s12.norm_sqr();
        let drive = 2.0 * om * s02.im;
        let dp = [
            drive - g0 * p0 - flow0,
            g0 * p0 - g1 * p1 + flow0 - flow1,
            -drive + g1 * p1 - g2 * p2 + flow1,
            g2 * p2,
        ];
        let mut d01 = i * om * s12.conj() - 0.5 * (g0 + g1) * s01 + k0 * (p0 - p1) * s01
            - k1 * s12.conj() * s02;
        let mut d12 = -i * om * s01.conj() - 0.5 * (g1 + g2) * s12 + k0 * s01.conj() * s02
            + k1 * (p1 - p2) * s12;
        let d02 = i * om * (p2 - p0) - 0.5 * (g0 + g2) * s02 + (k1 - k0) * s01 * s12;

        if let Some(eps) = self.floor {
            let relax = |s: Complex64, pa: f64, pb: f64, rate: f64| -> Complex64 {
                let target = eps * (pa * pb).max(0.0).sqrt();
                let mag = s.norm();
                if mag >= target {
                    return Complex64::default();
                }
                let dir = if mag > 0.0 { s / mag } else { Complex64::new(1.0, 0.0) };
                dir * (rate * (target - mag))
            };
            if k0 > 0.0 {
                d01 += relax(s01, p0, p1, g0);
            }
            if k1 > 0.0 {
                d12 += relax(s12, p1, p2, g1);
            }
        }

        MeanFieldState {
            p: dp,
            s01: d01,
            s12: d12,
            s02: d02,
        }
    }

    pub fn eval(&self, y: &[f64], dy: &mut [f64]) {
        let d = self.eval_state(&MeanFieldState::from_slice(y));
        dy.copy_from_slice(&d.to_vec());
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldAudit {
    pub max_sum_drift: f64,
    pub max_coherence_excess: f64,
    pub min_population: f64,
    pub max_p3_decrease: f64,
}

impl Default for MeanFieldAudit {
    fn default() -> Self {
        MeanFieldAudit {
            max_sum_drift: 0.0,
            max_coherence_excess: f64::NEG_INFINITY,
            min_population: f64::INFINITY,
            max_p3_decrease: 0.0,
        }
    }
}

/// Evolve, streaming samples to `observe`. Aborts when a state invariant is
/// exceeded by ten times its tolerance.
pub fn evolve_meanfield_with<O>(
    state0: &MeanFieldState,
    rhs: &MeanFieldRhs,
    spec: &IntegrationSpec,
    mut observe: O,
) -> Result<(MeanFieldAudit, StepStats)>
where
    O: FnMut(f64, &MeanFieldState),
{
    let mut audit = MeanFieldAudit::default();
    let mut last_p3 = f64::NEG_INFINITY;
    let stats = integrate_observed(
        |_t, y: &[f64], dy: &mut [f64]| rhs.eval(y, dy),
        &state0.to_vec(),
        spec,
        |t, y: &[f64]| -> Result<()> {
            let s = MeanFieldState::from_slice(y);
            let drift = (s.p.iter().sum::<f64>() - 1.0).abs();
            let excess = s.coherence_excess();
            let pmin = s.p.iter().cloned().fold(f64::INFINITY, f64::min);
            let pmax = s.p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            audit.max_sum_drift = audit.max_sum_drift.max(drift);
            audit.max_coherence_excess = audit.max_coherence_excess.max(excess);
            audit.min_population = audit.min_population.min(pmin);
            audit.max_p3_decrease = audit.max_p3_decrease.max(last_p3 - s.p[3]);
            last_p3 = s.p[3];
            let k = ABORT_FACTOR;
            if drift > k * SUM_TOL
                || excess > k * COH_TOL
                || pmin < -k * P_TOL
                || pmax > 1.0 + k * P_TOL
            {
                return Err(Error::Invariant {
                    t,
                    detail: format!(
                        "population sum drift {drift:e}, coherence excess {excess:e}, \
                         populations in [{pmin:e}, {pmax}]"
                    ),
                });
            }
            observe(t, &s);
            Ok(())
        },
    )?;
    Ok((audit, stats))
}

pub fn evolve_meanfield(
    state0: &MeanFieldState,
    rhs: &MeanFieldRhs,
    spec: &IntegrationSpec,
) -> Result<(Vec<(f64, MeanFieldState)>, MeanFieldAudit)> {
    let mut out = Vec::with_capacity(spec.sample_count);
    let (audit, _) = evolve_meanfield_with(state0, rhs, spec, |t, s| out.push((t, *s)))?;
    Ok((out, audit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{validate, PhysicalParams};
    use approx::assert_abs_diff_eq;
    use nalgebra::Matrix4;

    type C = Complex64;

    fn params(n: usize, rabi: f64, mu0: f64, mu1: f64) -> ValidatedParams {
        let mut p = PhysicalParams::positronium(n);
        p.rabi = rabi;
        p.mu0 = mu0;
        p.mu1 = mu1;
        p.collective_01 = true;
        p.collective_12 = true;
        validate(&p).unwrap()
    }

    fn ket_bra(a: usize, b: usize) -> Matrix4<C> {
        let mut m = Matrix4::zeros();
        m[(a, b)] = C::new(1.0, 0.0);
        m
    }

    fn dissipator(l: &Matrix4<C>, rho: &Matrix4<C>) -> Matrix4<C> {
        let ld = l.adjoint();
        l * rho * ld - (ld * l * rho + rho * ld * l) * C::new(0.5, 0.0)
    }

    /// Single-atom density-matrix route: Lindblad terms for one atom plus
    /// `-kappa [<L> L^dag - <L>^* L, rho]` per collective channel.
    fn matrix_route(rhs: &MeanFieldRhs, s: &MeanFieldState) -> MeanFieldState {
        let mut rho = Matrix4::<C>::zeros();
        for a in 0..4 {
            rho[(a, a)] = C::new(s.p[a], 0.0);
        }
        // <S_ab> = rho[b][a]
        for (a, b, v) in [(0, 1, s.s01), (1, 2, s.s12), (0, 2, s.s02)] {
            rho[(b, a)] = v;
            rho[(a, b)] = v.conj();
        }
        let i = C::new(0.0, 1.0);
        let h = (ket_bra(0, 2) + ket_bra(2, 0)) * C::new(rhs.rabi, 0.0);
        let mut d = (h * rho - rho * h) * (-i);
        let l0 = ket_bra(1, 0);
        let l1 = ket_bra(2, 1);
        d += dissipator(&l0, &rho) * C::new(rhs.gamma0, 0.0);
        d += dissipator(&l1, &rho) * C::new(rhs.gamma1, 0.0);
        d += dissipator(&ket_bra(3, 2), &rho) * C::new(rhs.gamma2, 0.0);
        for (l, k) in [(l0, rhs.kappa0), (l1, rhs.kappa1)] {
            let avg = (l * rho).trace();
            let f = l.adjoint() * avg - l * avg.conj();
            d -= (f * rho - rho * f) * C::new(k, 0.0);
        }
        MeanFieldState {
            p: [d[(0, 0)].re, d[(1, 1)].re, d[(2, 2)].re, d[(3, 3)].re],
            s01: d[(1, 0)],
            s12: d[(2, 1)],
            s02: d[(2, 0)],
        }
    }

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (*seed >> 11) as f64 / (1u64 << 53) as f64
    }

    fn random_state(seed: &mut u64) -> MeanFieldState {
        let raw: Vec<f64> = (0..4).map(|_| lcg(seed)).collect();
        let tot: f64 = raw.iter().sum();
        let p = [raw[0] / tot, raw[1] / tot, raw[2] / tot, raw[3] / tot];
        let mut coh = |a: usize, b: usize| {
            let r = lcg(seed) * (p[a] * p[b]).sqrt();
            C::from_polar(r, 2.0 * std::f64::consts::PI * lcg(seed))
        };
        MeanFieldState {
            p,
            s01: coh(0, 1),
            s12: coh(1, 2),
            s02: coh(0, 2),
        }
    }

    fn close(a: &MeanFieldState, b: &MeanFieldState, tol: f64) -> bool {
        let (x, y) = (a.to_vec(), b.to_vec());
        x.iter().zip(&y).all(|(u, v)| (u - v).abs() <= tol)
    }

    #[test]
    fn scalar_equations_match_matrix_route() {
        let mut seed = 1;
        for (n, rabi, mu0, mu1) in [(1, 3.0, 0.0, 0.0), (50, 7.0, 0.3, 0.8), (1_000_000, 500.0, 0.16, 0.006)] {
            let rhs = build_meanfield_rhs(&params(n, rabi, mu0, mu1));
            for _ in 0..20 {
                let s = random_state(&mut seed);
                let a = rhs.eval_state(&s);
                let b = matrix_route(&rhs, &s);
                let scale = 1.0 + rabi + rhs.kappa0 + rhs.kappa1;
                assert!(close(&a, &b, 1e-13 * scale), "{a:?}\n{b:?}");
            }
        }
    }

    #[test]
    fn single_atom_has_no_collective_terms() {
        let rhs = build_meanfield_rhs(&params(1, 2.0, 1.0, 1.0));
        assert_eq!((rhs.kappa0, rhs.kappa1), (0.0, 0.0));
    }

    #[test]
    fn invariant_under_fixed_mu_times_n_minus_one() {
        let a = build_meanfield_rhs(&params(1001, 3.0, 0.4, 0.2));
        let b = build_meanfield_rhs(&params(2001, 3.0, 0.2, 0.1));
        let mut seed = 9;
        for _ in 0..100 {
            let s = random_state(&mut seed);
            assert_eq!(a.eval_state(&s).to_vec(), b.eval_state(&s).to_vec());
        }
    }

    #[test]
    fn tipping_seed() {
        let s = MeanFieldState::diagonal([0.0, 0.7, 0.3, 0.0]);
        let seeded = seed_coherences(&s, &SeedPolicy::Tipping { epsilon: 1e-3 }).unwrap();
        assert_abs_diff_eq!(seeded.s12.re, 1e-3 * 0.21f64.sqrt(), epsilon = 1e-18);
        assert_eq!(seeded.s01, C::default());
        assert_eq!(seeded.s02, C::default());
        assert_eq!(seed_coherences(&s, &SeedPolicy::None).unwrap(), s);
        assert!(seed_coherences(&s, &SeedPolicy::Tipping { epsilon: -0.1 }).is_err());
        assert!(seed_coherences(&s, &SeedPolicy::Tipping { epsilon: 1.5 }).is_err());
    }

    #[test]
    fn annihilated_state_is_stationary() {
        let rhs = build_meanfield_rhs(&params(10_000, 500.0, 1.0, 1.0)).with_floor(0.01);
        let d = rhs.eval_state(&MeanFieldState::diagonal([0.0, 0.0, 0.0, 1.0]));
        assert!(d.to_vec().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn floor_only_raises_small_collective_coherences() {
        let base = build_meanfield_rhs(&params(100, 0.0, 0.5, 0.5));
        let floored = base.with_floor(0.1);
        let mut s = MeanFieldState::diagonal([0.3, 0.4, 0.3, 0.0]);
        let lift = floored.eval_state(&s).s01 - base.eval_state(&s).s01;
        assert_abs_diff_eq!(lift.re, base.gamma0 * 0.1 * 0.12f64.sqrt(), epsilon = 1e-15);
        s.s01 = C::new(0.2, 0.0);
        assert_eq!(floored.eval_state(&s).s01, base.eval_state(&s).s01);
        let indep = build_meanfield_rhs(&params(100, 0.0, 0.0, 0.0)).with_floor(0.1);
        let s = MeanFieldState::diagonal([0.3, 0.4, 0.3, 0.0]);
        assert_eq!(indep.eval_state(&s).s01, C::default());
    }

    #[test]
    fn superradiant_burst_from_tipped_inversion() {
        let rhs = build_meanfield_rhs(&params(6001, 0.0, 0.0, 1.0)).without_annihilation_for_test();
        let run = |eps: f64| {
            let s0 = seed_coherences(
                // a fully inverted start has sqrt(p1 p2) = 0, so tipping needs some 1S weight
                &MeanFieldState::diagonal([0.0, 0.999, 0.001, 0.0]),
                &SeedPolicy::Tipping { epsilon: eps },
            )
            .unwrap();
            let spec = IntegrationSpec::new(0.0, 0.5, 2001).with_tolerances(1e-10, 1e-13);
            let (traj, _) = evolve_meanfield(&s0, &rhs, &spec).unwrap();
            // emission rate gamma1 p1 + 2 kappa1 |s12|^2
            let rate: Vec<f64> = traj
                .iter()
                .map(|(_, s)| rhs.gamma1 * s.p[1] + 2.0 * rhs.kappa1 * s.s12.norm_sqr())
                .collect();
            let (imax, _) = rate
                .iter()
                .enumerate()
                .fold((0, f64::MIN), |acc, (i, &r)| if r > acc.1 { (i, r) } else { acc });
            assert!(imax > 0 && imax < rate.len() - 1);
            traj[imax].0
        };
        assert!(run(1e-2) < run(1e-3));
    }

    impl MeanFieldRhs {
        fn without_annihilation_for_test(mut self) -> Self {
            self.gamma2 = 0.0;
            self
        }
    }

    #[test]
    fn independent_drive_keeps_2p_empty() {
        let rhs = build_meanfield_rhs(&params(1, 500.0, 0.0, 0.0));
        let spec = IntegrationSpec::new(0.0, 20.0, 201).with_tolerances(1e-9, 1e-12);
        let (traj, audit) = evolve_meanfield(&MeanFieldState::diagonal([0.0, 0.0, 1.0, 0.0]), &rhs, &spec).unwrap();
        assert!(traj.iter().all(|(_, s)| s.p[1] < 0.1));
        assert!(audit.max_sum_drift < 1e-8);
        assert!(audit.max_p3_decrease <= 0.0);
    }
}
