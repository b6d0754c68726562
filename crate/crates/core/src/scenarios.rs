//! Named parameter sets, engine dispatch, reference runs and sweeps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ladder::{self, LadderDistribution};
use crate::lindblad::{self, CouplingMatrix, DensityMatrix};
use crate::meanfield::{self, MeanFieldState};
use crate::observables::{Audit, Engine, RunResult, Series};
use crate::ode::IntegrationSpec;
use crate::params::{
    geometry_to_mu, validate, validate_with_cavity, CavityConfig, CavityEffect, InitialCondition,
    PhysicalParams, SampleGeometry, SeedPolicy, Transition, ValidatedParams, GAMMA1_OVER_GAMMA2,
    LAMBDA_12_CM,
};

pub const PRESET_NAMES: [&str; 3] = ["fig2", "fig3a", "fig3b"];

/// Atom count of the scale-matched ladder companion of the undriven preset.
pub const FIG2_COMPANION_N: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    /// Preset this scenario derives from, if any.
    pub preset: Option<String>,
    /// Free-space parameters in units of `gamma2`.
    pub params: PhysicalParams,
    /// Cavity replacing `gamma0` by `g^2 / kappa`, same units as `params`.
    pub cavity: Option<CavityConfig>,
    pub initial: InitialCondition,
    pub engine: Engine,
    pub spec: IntegrationSpec,
    /// Also run the independent-atom mean-field reference.
    pub reference_run: bool,
    /// Atom count of a scale-matched ladder companion run.
    pub ladder_companion_n: Option<usize>,
}

/// Cylinder diameter giving `mu1 = 0.006` on the 2P -> 1S transition.
fn fig2_geometry() -> SampleGeometry {
    SampleGeometry::positronium(1e13, LAMBDA_12_CM / 0.006f64.sqrt())
}

fn default_spec(t_end: f64, samples: usize) -> IntegrationSpec {
    IntegrationSpec::new(0.0, t_end, samples).with_tolerances(1e-9, 1e-12)
}

/// Undriven burst scenario: 70 % in 2P, 30 % in 1S, `N = 10^6`,
/// `mu1 = 0.006`.
pub fn preset_fig2() -> Scenario {
    let n = 1_000_000;
    let mut params = PhysicalParams::positronium(n);
    params.mu1 = 0.006;
    params.collective_12 = true;
    Scenario {
        name: "fig2".into(),
        preset: Some("fig2".into()),
        params,
        cavity: None,
        initial: InitialCondition {
            fractions: [0.0, 0.7, 0.3, 0.0],
            seed: SeedPolicy::Tipping {
                epsilon: SeedPolicy::default_epsilon(n),
            },
        },
        engine: Engine::Meanfield,
        spec: default_spec(10.0, 1001),
        reference_run: true,
        ladder_companion_n: Some(FIG2_COMPANION_N),
    }
}

/// Driven trapping with collectivity on 3D -> 2P only, `Omega = 500`,
/// starting in 1S. `mu0` follows from the same cylinder as the undriven
/// preset.
pub fn preset_fig3a() -> Scenario {
    let n = 1_000_000;
    let geom = fig2_geometry();
    let mut params = PhysicalParams::positronium(n);
    params.rabi = 500.0;
    params.mu0 = geometry_to_mu(&geom, Transition::T01).expect("fixed geometry is valid");
    params.mu1 = geometry_to_mu(&geom, Transition::T12).expect("fixed geometry is valid");
    params.collective_01 = true;
    params.collective_12 = false;
    Scenario {
        name: "fig3a".into(),
        preset: Some("fig3a".into()),
        params,
        cavity: None,
        initial: InitialCondition {
            fractions: [0.0, 0.0, 1.0, 0.0],
            seed: SeedPolicy::Floor {
                epsilon: SeedPolicy::default_epsilon(n),
            },
        },
        engine: Engine::Meanfield,
        spec: default_spec(100.0, 2001),
        reference_run: true,
        ladder_companion_n: None,
    }
}

/// Cavity-enhanced trapping: `N = 10^4`, collective on both transitions in
/// the small-sample limit, `g^2 / kappa = 1.6 gamma1`.
pub fn preset_fig3b() -> Scenario {
    let n = 10_000;
    let mut params = PhysicalParams::positronium(n);
    params.rabi = 500.0;
    params.mu0 = 1.0;
    params.mu1 = 1.0;
    params.collective_01 = true;
    params.collective_12 = true;
    let kappa = 1.0;
    Scenario {
        name: "fig3b".into(),
        preset: Some("fig3b".into()),
        params,
        cavity: Some(CavityConfig {
            g: (1.6 * GAMMA1_OVER_GAMMA2 * kappa).sqrt(),
            kappa,
        }),
        initial: InitialCondition {
            fractions: [0.0, 0.0, 1.0, 0.0],
            seed: SeedPolicy::Floor {
                epsilon: SeedPolicy::default_epsilon(n),
            },
        },
        engine: Engine::Meanfield,
        spec: default_spec(300.0, 3001),
        reference_run: true,
        ladder_companion_n: None,
    }
}

pub fn preset(name: &str) -> Result<Scenario> {
    match name {
        "fig2" => Ok(preset_fig2()),
        "fig3a" => Ok(preset_fig3a()),
        "fig3b" => Ok(preset_fig3b()),
        other => Err(Error::Config {
            message: format!("unknown preset `{other}`; known: {}", PRESET_NAMES.join(", ")),
            key: Some("preset".into()),
            line: None,
        }),
    }
}

/// Exact-engine version of a preset at `n_atoms` atoms. Driven presets are
/// shortened to `t in [0, 2]`, the undriven one keeps its window.
pub fn exact_variant(base: &Scenario, n_atoms: usize) -> Scenario {
    let mut s = base.clone();
    s.name = format!("{}-exact-n{n_atoms}", base.name);
    s.engine = Engine::Exact;
    s.params.n_atoms = n_atoms;
    s.reference_run = false;
    s.ladder_companion_n = None;
    let t_end = if base.params.rabi > 0.0 { 2.0 } else { base.spec.t_end };
    s.spec = IntegrationSpec {
        t_end,
        sample_count: 101,
        ..base.spec
    };
    s
}

impl Scenario {
    /// Effective parameters (cavity applied) in units of `gamma2`.
    pub fn validated(&self) -> Result<(ValidatedParams, Option<CavityEffect>)> {
        validate_with_cavity(&self.params, self.cavity.as_ref())
    }

    pub fn validate(&self) -> Result<()> {
        let (vp, _) = self.validated()?;
        self.initial.validate()?;
        self.initial.seed.validate()?;
        self.spec.validate().map_err(|e| Error::Config {
            message: e.to_string(),
            key: Some("integration".into()),
            line: None,
        })?;
        let n = vp.n_atoms();
        match self.engine {
            Engine::Exact if n > lindblad::MAX_ATOMS => {
                return Err(Error::Capability {
                    engine: "exact",
                    n,
                    cap: lindblad::MAX_ATOMS,
                })
            }
            Engine::Ladder => {
                if n > ladder::MAX_ATOMS {
                    return Err(Error::Capability {
                        engine: "ladder",
                        n,
                        cap: ladder::MAX_ATOMS,
                    });
                }
                self.check_ladder_compatible()?;
            }
            _ => {}
        }
        if let Some(m) = self.ladder_companion_n {
            if m == 0 || m > ladder::MAX_ATOMS {
                return Err(Error::param(
                    "ladder_companion_n",
                    format!("must lie in [1, {}], got {m}", ladder::MAX_ATOMS),
                ));
            }
            self.check_ladder_compatible()?;
        }
        Ok(())
    }

    fn check_ladder_compatible(&self) -> Result<()> {
        if self.params.rabi != 0.0 {
            return Err(Error::param("rabi", "ladder engine requires rabi = 0"));
        }
        if self.initial.fractions[0] != 0.0 {
            return Err(Error::param("f0", "ladder engine requires f0 = 0"));
        }
        Ok(())
    }

    /// Same drive, cavity and start with all collectivity removed.
    pub fn reference(&self) -> Scenario {
        let mut r = self.clone();
        r.name = format!("{}-reference", self.name);
        r.params = self.params.independent();
        r.engine = Engine::Meanfield;
        r.reference_run = false;
        r.ladder_companion_n = None;
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub scenario: Scenario,
    pub cavity_effect: Option<CavityEffect>,
    pub result: RunResult,
    pub reference: Option<RunResult>,
    pub companion: Option<RunResult>,
}

fn run_exact(vp: &ValidatedParams, initial: &InitialCondition, spec: &IntegrationSpec) -> Result<(Series, Audit)> {
    let rho0 = DensityMatrix::from_initial(vp.n_atoms(), initial)?;
    let mut gen = lindblad::build_generator(vp, &CouplingMatrix::for_params(vp))?;
    let mut series = Series::default();
    let (a, stats) = lindblad::evolve_with(&rho0, &mut gen, spec, |t, _, o| {
        series.push(t, o.p, o.magnitudes())
    })?;
    let audit = Audit {
        final_sum_error: final_sum_error(&series),
        max_sum_drift: a.max_trace_drift,
        max_p3_decrease: a.max_p3_decrease.max(0.0),
        max_trace_drift: Some(a.max_trace_drift),
        min_eigenvalue: Some(a.min_eigenvalue),
        accepted_steps: stats.accepted,
        rejected_steps: stats.rejected,
        ..Default::default()
    };
    Ok((series, audit))
}

fn run_meanfield(vp: &ValidatedParams, initial: &InitialCondition, spec: &IntegrationSpec) -> Result<(Series, Audit)> {
    let s0 = meanfield::seed_coherences(&MeanFieldState::diagonal(initial.fractions), &initial.seed)?;
    let rhs = meanfield::build_meanfield_rhs(vp).with_seed(&initial.seed);
    let mut series = Series::default();
    let (a, stats) = meanfield::evolve_meanfield_with(&s0, &rhs, spec, |t, s| {
        series.push(t, s.p, s.magnitudes())
    })?;
    let audit = Audit {
        final_sum_error: final_sum_error(&series),
        max_sum_drift: a.max_sum_drift,
        max_p3_decrease: a.max_p3_decrease.max(0.0),
        max_coherence_excess: Some(a.max_coherence_excess),
        accepted_steps: stats.accepted,
        rejected_steps: stats.rejected,
        ..Default::default()
    };
    Ok((series, audit))
}

fn ladder_start(n: usize, initial: &InitialCondition) -> Result<LadderDistribution> {
    let f = initial.fractions;
    let k = (f[1] * n as f64).round() as usize;
    let m = ((f[3] * n as f64).round() as usize).min(n - k);
    LadderDistribution::point(n, k, m)
}

fn run_ladder(gen: &ladder::LadderGenerator, initial: &InitialCondition, spec: &IntegrationSpec) -> Result<(Series, Audit)> {
    let p0 = ladder_start(gen.n_atoms, initial)?;
    let mut series = Series::default();
    let (a, stats) = ladder::evolve_ladder_with(&p0, gen, spec, |t, d| {
        series.push(t, d.populations(), [0.0; 3])
    })?;
    let audit = Audit {
        final_sum_error: final_sum_error(&series),
        max_sum_drift: a.max_norm_drift,
        max_p3_decrease: a.max_m_decrease.max(0.0) / gen.n_atoms as f64,
        pruned_mass: Some(a.pruned_mass),
        accepted_steps: stats.accepted,
        rejected_steps: stats.rejected,
        ..Default::default()
    };
    Ok((series, audit))
}

fn final_sum_error(series: &Series) -> f64 {
    series
        .p
        .last()
        .map(|p| (p.iter().sum::<f64>() - 1.0).abs())
        .unwrap_or(0.0)
}

/// Run one engine on the scenario without reference or companion.
pub fn run_single(s: &Scenario, reference_tau: Option<f64>) -> Result<RunResult> {
    let (vp, _) = s.validated()?;
    let (series, audit) = match s.engine {
        Engine::Exact => run_exact(&vp, &s.initial, &s.spec)?,
        Engine::Meanfield => run_meanfield(&vp, &s.initial, &s.spec)?,
        Engine::Ladder => run_ladder(&ladder::build_ladder_generator(&vp)?, &s.initial, &s.spec)?,
    };
    RunResult::new(s.engine, vp.as_physical().clone(), series, audit, reference_tau)
}

/// Run the scenario, its independent reference (if requested) and its
/// ladder companion (if requested).
pub fn run_scenario(s: &Scenario) -> Result<ScenarioOutcome> {
    s.validate()?;
    let (vp, effect) = s.validated()?;
    let reference = if s.reference_run {
        let r = s.reference();
        let first = run_single(&r, None)?;
        let tau = first.metrics.tau_lifetime;
        // the reference is measured against itself, giving exactly 1
        let ext = (!tau.is_lower_bound()).then_some(tau.value());
        Some(RunResult::new(first.engine, first.params, first.series, first.audit, ext)?)
    } else {
        None
    };
    let reference_tau = reference
        .as_ref()
        .filter(|r| !r.metrics.tau_lifetime.is_lower_bound())
        .map(|r| r.metrics.tau_lifetime.value());
    let result = run_single(s, reference_tau)?;
    let companion = match s.ladder_companion_n {
        Some(m) => {
            let gen = ladder::scale_matched_generator(&vp, m)?;
            let (series, audit) = run_ladder(&gen, &s.initial, &s.spec)?;
            let mut p = vp.as_physical().clone();
            p.n_atoms = m;
            p.mu1 = gen.mu;
            Some(RunResult::new(Engine::Ladder, p, series, audit, None)?)
        }
        None => None,
    };
    Ok(ScenarioOutcome {
        scenario: s.clone(),
        cavity_effect: effect,
        result,
        reference,
        companion,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Rabi,
    Mu0,
    Mu1,
    NAtoms,
    Gamma0,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rabi" => Ok(SweepAxis::Rabi),
            "mu0" => Ok(SweepAxis::Mu0),
            "mu1" => Ok(SweepAxis::Mu1),
            "n_atoms" => Ok(SweepAxis::NAtoms),
            "gamma0" => Ok(SweepAxis::Gamma0),
            other => Err(Error::param(
                "sweep_axis",
                format!("expected rabi, mu0, mu1, n_atoms or gamma0; got `{other}`"),
            )),
        }
    }
}

impl SweepAxis {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepAxis::Rabi => "rabi",
            SweepAxis::Mu0 => "mu0",
            SweepAxis::Mu1 => "mu1",
            SweepAxis::NAtoms => "n_atoms",
            SweepAxis::Gamma0 => "gamma0",
        }
    }
}

/// `base` with one axis set to `value`. A seed at the default `1/sqrt(N)`
/// scale follows `N` on the `n_atoms` axis.
pub fn with_axis(base: &Scenario, axis: SweepAxis, value: f64) -> Result<Scenario> {
    let mut s = base.clone();
    s.name = format!("{}-{}={value}", base.name, axis.as_str());
    match axis {
        SweepAxis::Rabi => s.params.rabi = value,
        SweepAxis::Mu0 => s.params.mu0 = value,
        SweepAxis::Mu1 => s.params.mu1 = value,
        SweepAxis::Gamma0 => s.params.gamma0 = value,
        SweepAxis::NAtoms => {
            if value.fract() != 0.0 || value < 1.0 || !value.is_finite() {
                return Err(Error::param("n_atoms", format!("must be a positive integer, got {value}")));
            }
            let n = value as usize;
            let old = SeedPolicy::default_epsilon(base.params.n_atoms);
            let new = SeedPolicy::default_epsilon(n);
            s.initial.seed = match s.initial.seed {
                SeedPolicy::Tipping { epsilon } if epsilon == old => SeedPolicy::Tipping { epsilon: new },
                SeedPolicy::Floor { epsilon } if epsilon == old => SeedPolicy::Floor { epsilon: new },
                other => other,
            };
            s.params.n_atoms = n;
        }
    }
    s.validate()?;
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub outcome: ScenarioOutcome,
}

/// One run per value, each with its own reference. Every value is checked
/// before any run starts; results come back ordered by value.
pub fn sweep(base: &Scenario, axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(Error::param("sweep_values", "at least one value required"));
    }
    let scenarios: Vec<(f64, Scenario)> = values
        .iter()
        .map(|&v| with_axis(base, axis, v).map(|s| (v, s)))
        .collect::<Result<_>>()?;
    let mut points: Vec<SweepPoint> = scenarios
        .into_par_iter()
        .map(|(value, s)| run_scenario(&s).map(|outcome| SweepPoint { value, outcome }))
        .collect::<Result<_>>()?;
    points.sort_by(|a, b| a.value.total_cmp(&b.value));
    Ok(points)
}

/// Largest population deviation between two series on the same grid.
pub fn max_population_deviation(a: &Series, b: &Series) -> f64 {
    a.p.iter()
        .zip(&b.p)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v).abs()))
        .fold(0.0, f64::max)
}

fn oracle_spec(t_end: f64, samples: usize) -> IntegrationSpec {
    IntegrationSpec::new(0.0, t_end, samples).with_tolerances(1e-11, 1e-14)
}

/// Ladder against the exact engine for two-level collective decay:
/// `mu1 = 1`, no annihilation, every atom starting in 2P.
pub fn oracle_ladder_vs_exact(n_atoms: usize) -> Result<f64> {
    let mut p = PhysicalParams::positronium(n_atoms);
    p.mu1 = 1.0;
    p.collective_12 = true;
    let vp = validate(&p)?.without_annihilation();
    let spec = oracle_spec(60.0, 121);
    let initial = InitialCondition::level(1);
    let (exact, _) = run_exact(&vp, &initial, &spec)?;
    let (lad, _) = run_ladder(&ladder::build_ladder_generator(&vp)?, &initial, &spec)?;
    Ok(max_population_deviation(&exact, &lad))
}

/// Mean-field against the exact engine under the driven trapping setup
/// (`Omega = 500`, start in 1S) with `mu0 = mu1 = mu`, over `t in [0, 2]`.
pub fn oracle_meanfield_vs_exact(n_atoms: usize, mu: f64) -> Result<f64> {
    let mut p = PhysicalParams::positronium(n_atoms);
    p.rabi = 500.0;
    p.mu0 = mu;
    p.mu1 = mu;
    p.collective_01 = true;
    p.collective_12 = true;
    let vp = validate(&p)?;
    let spec = IntegrationSpec::new(0.0, 2.0, 201).with_tolerances(1e-9, 1e-12);
    let initial = InitialCondition::level(2);
    let (exact, _) = run_exact(&vp, &initial, &spec)?;
    let (mf, _) = run_meanfield(&vp, &initial, &spec)?;
    Ok(max_population_deviation(&exact, &mf))
}

/// Mean-field with collectivity off at `n_atoms` against the exact
/// single-atom engine, driven, from every single-level start.
pub fn oracle_independent(n_atoms: usize, rabi: f64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for level in 0..3 {
        let mut p1 = PhysicalParams::positronium(1);
        p1.rabi = rabi;
        let mut pn = p1.clone();
        pn.n_atoms = n_atoms;
        let spec = oracle_spec(10.0, 201);
        let initial = InitialCondition::level(level);
        let (exact, _) = run_exact(&validate(&p1)?, &initial, &spec)?;
        let (mf, _) = run_meanfield(&validate(&pn)?, &initial, &spec)?;
        worst = worst.max(max_population_deviation(&exact, &mf));
    }
    Ok(worst)
}
