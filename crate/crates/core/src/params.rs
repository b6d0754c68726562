//! Physical parameters, their validation, and the maps from sample geometry
//! and cavity settings to the rates the engines consume.
//!
//! All stored rates are population decay rates: a lone atom in the upper
//! level of a transition decays as `exp(-rate * t)`. After validation every
//! rate and the Rabi frequency are expressed in units of the annihilation
//! rate `gamma2`, so scaled time is `gamma2 * t`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ratio `gamma1 / gamma2` of the 2P -> 1S radiative rate to the singlet
/// annihilation rate.
pub const GAMMA1_OVER_GAMMA2: f64 = 1.0 / 25.8;
/// Ratio `gamma0 / gamma1` of the 3D -> 2P rate to the 2P -> 1S rate
/// (3.2e7 s^-1 over 3.1e8 s^-1).
pub const GAMMA0_OVER_GAMMA1: f64 = 3.2 / 31.0;
/// Singlet annihilation rate `1 / tau_s` with `tau_s = 1.25e-10 s`.
pub const GAMMA2_SI: f64 = 8e9;
/// 3D -> 2P transition wavelength in cm.
pub const LAMBDA_01_CM: f64 = 1.2e-4;
/// 2P -> 1S transition wavelength in cm.
pub const LAMBDA_12_CM: f64 = 0.23e-4;

/// Margin used for "much larger than" density comparisons.
pub const DENSITY_MARGIN: f64 = 10.0;

/// The two dipole-allowed radiative transitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transition {
    /// 3D `|0>` -> 2P `|1>`.
    #[serde(rename = "01")]
    T01,
    /// 2P `|1>` -> 1S `|2>`.
    #[serde(rename = "12")]
    T12,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    pub gamma0: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub rabi: f64,
    pub n_atoms: usize,
    pub mu0: f64,
    pub mu1: f64,
    pub collective_01: bool,
    pub collective_12: bool,
}

impl PhysicalParams {
    /// Rates with the quoted positronium ratios, in units of `gamma2`,
    /// no drive and no collectivity.
    pub fn positronium(n_atoms: usize) -> Self {
        let gamma1 = GAMMA1_OVER_GAMMA2;
        PhysicalParams {
            gamma0: GAMMA0_OVER_GAMMA1 * gamma1,
            gamma1,
            gamma2: 1.0,
            rabi: 0.0,
            n_atoms,
            mu0: 0.0,
            mu1: 0.0,
            collective_01: false,
            collective_12: false,
        }
    }

    /// Same parameters with both collective channels switched off.
    pub fn independent(&self) -> Self {
        PhysicalParams {
            mu0: 0.0,
            mu1: 0.0,
            collective_01: false,
            collective_12: false,
            ..self.clone()
        }
    }
}

/// Rescale all rates and the Rabi frequency into units of `gamma2`.
///
/// Idempotent on already-normalized input.
pub fn normalize(params: &PhysicalParams) -> PhysicalParams {
    let g2 = params.gamma2;
    PhysicalParams {
        gamma0: params.gamma0 / g2,
        gamma1: params.gamma1 / g2,
        gamma2: params.gamma2 / g2,
        rabi: params.rabi / g2,
        ..params.clone()
    }
}

fn check_finite(key: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(key, format!("must be finite, got {v}")))
    }
}

fn check_positive(key: &str, v: f64) -> Result<()> {
    check_finite(key, v)?;
    if v > 0.0 {
        Ok(())
    } else {
        Err(Error::param(key, format!("must be > 0, got {v}")))
    }
}

fn check_unit_interval(key: &str, v: f64) -> Result<()> {
    check_finite(key, v)?;
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::param(key, format!("must lie in [0, 1], got {v}")))
    }
}

fn check_invariants(p: &PhysicalParams) -> Result<()> {
    check_positive("gamma0", p.gamma0)?;
    check_positive("gamma1", p.gamma1)?;
    check_positive("gamma2", p.gamma2)?;
    check_finite("rabi", p.rabi)?;
    if p.rabi < 0.0 {
        return Err(Error::param("rabi", format!("must be >= 0, got {}", p.rabi)));
    }
    if p.n_atoms < 1 {
        return Err(Error::param("n_atoms", "must be >= 1, got 0"));
    }
    check_unit_interval("mu0", p.mu0)?;
    check_unit_interval("mu1", p.mu1)?;
    Ok(())
}

/// Parameters that passed validation, normalized to units of `gamma2`.
///
/// Collective factors are exposed through [`ValidatedParams::mu0`] and
/// [`ValidatedParams::mu1`], which already fold in the per-transition flags.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidatedParams {
    inner: PhysicalParams,
}

/// Validate `params` and normalize its rates into units of `gamma2`.
pub fn validate(params: &PhysicalParams) -> Result<ValidatedParams> {
    check_invariants(params)?;
    Ok(ValidatedParams {
        inner: normalize(params),
    })
}

/// Validate free-space parameters, then replace `gamma0` by the cavity rate.
///
/// The cavity shares the unit of `params`. A cavity may suppress `gamma0`
/// down to zero; engines accept that.
pub fn validate_with_cavity(
    params: &PhysicalParams,
    cavity: Option<&CavityConfig>,
) -> Result<(ValidatedParams, Option<CavityEffect>)> {
    check_invariants(params)?;
    match cavity {
        None => Ok((validate(params)?, None)),
        Some(c) => {
            let outcome = apply_cavity(params, c)?;
            Ok((
                ValidatedParams {
                    inner: normalize(&outcome.params),
                },
                Some(outcome.effect),
            ))
        }
    }
}

impl ValidatedParams {
    pub fn gamma0(&self) -> f64 {
        self.inner.gamma0
    }
    pub fn gamma1(&self) -> f64 {
        self.inner.gamma1
    }
    pub fn gamma2(&self) -> f64 {
        self.inner.gamma2
    }
    pub fn rabi(&self) -> f64 {
        self.inner.rabi
    }
    pub fn n_atoms(&self) -> usize {
        self.inner.n_atoms
    }
    /// Effective collective factor on 0 -> 1 (zero when the channel is off).
    pub fn mu0(&self) -> f64 {
        if self.inner.collective_01 {
            self.inner.mu0
        } else {
            0.0
        }
    }
    /// Effective collective factor on 1 -> 2 (zero when the channel is off).
    pub fn mu1(&self) -> f64 {
        if self.inner.collective_12 {
            self.inner.mu1
        } else {
            0.0
        }
    }
    pub fn as_physical(&self) -> &PhysicalParams {
        &self.inner
    }

    /// Switch off annihilation, keeping the time unit. Used for the
    /// two-level collective-decay oracles where `|2>` must be stable.
    pub fn without_annihilation(&self) -> Self {
        let mut inner = self.inner.clone();
        inner.gamma2 = 0.0;
        ValidatedParams { inner }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavityConfig {
    /// Atom-cavity coupling strength.
    pub g: f64,
    /// Cavity damping rate.
    pub kappa: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CavityEffect {
    Enhancement,
    Unchanged,
    Suppression,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CavityOutcome {
    pub params: PhysicalParams,
    pub effect: CavityEffect,
}

/// Replace the 3D -> 2P rate by the cavity-modified rate `g^2 / kappa`.
pub fn apply_cavity(params: &PhysicalParams, cavity: &CavityConfig) -> Result<CavityOutcome> {
    check_finite("cavity.g", cavity.g)?;
    if cavity.g < 0.0 {
        return Err(Error::param("cavity.g", format!("must be >= 0, got {}", cavity.g)));
    }
    check_positive("cavity.kappa", cavity.kappa)?;
    let gamma0 = cavity.g * cavity.g / cavity.kappa;
    let effect = if gamma0 > params.gamma0 {
        CavityEffect::Enhancement
    } else if gamma0 < params.gamma0 {
        CavityEffect::Suppression
    } else {
        CavityEffect::Unchanged
    };
    Ok(CavityOutcome {
        params: PhysicalParams {
            gamma0,
            ..params.clone()
        },
        effect,
    })
}

/// Cylindrical sample description. Lengths in cm, density in cm^-3.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleGeometry {
    pub density: f64,
    pub diameter_d: f64,
    pub wavelength01: f64,
    pub wavelength12: f64,
}

impl SampleGeometry {
    pub fn positronium(density: f64, diameter_d: f64) -> Self {
        SampleGeometry {
            density,
            diameter_d,
            wavelength01: LAMBDA_01_CM,
            wavelength12: LAMBDA_12_CM,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_positive("density", self.density)?;
        check_positive("diameter_d", self.diameter_d)?;
        check_positive("wavelength01", self.wavelength01)?;
        check_positive("wavelength12", self.wavelength12)?;
        if self.wavelength01 <= self.wavelength12 {
            return Err(Error::param(
                "wavelength01",
                "must exceed wavelength12 (3D->2P is the longer wavelength)",
            ));
        }
        Ok(())
    }

    fn wavelength(&self, transition: Transition) -> f64 {
        match transition {
            Transition::T01 => self.wavelength01,
            Transition::T12 => self.wavelength12,
        }
    }
}

/// Order-of-magnitude collective factor `min(1, lambda^2 / d^2)` of a
/// cylinder of diameter `d`.
pub fn geometry_to_mu(geom: &SampleGeometry, transition: Transition) -> Result<f64> {
    geom.validate()?;
    let lambda = geom.wavelength(transition);
    Ok((lambda * lambda / (geom.diameter_d * geom.diameter_d)).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollectivityRegime {
    Independent,
    Collective01Only,
    CollectiveBoth,
}

/// Characteristic density `lambda^-3` of a transition, in cm^-3.
pub fn characteristic_density(wavelength_cm: f64) -> f64 {
    wavelength_cm.powi(-3)
}

/// Classify the gas density against the characteristic densities of both
/// transitions. A transition counts as collective once the density exceeds
/// its `lambda^-3` by [`DENSITY_MARGIN`].
pub fn collectivity_regime(geom: &SampleGeometry) -> Result<CollectivityRegime> {
    geom.validate()?;
    let rho01 = characteristic_density(geom.wavelength01);
    let rho12 = characteristic_density(geom.wavelength12);
    Ok(if geom.density >= DENSITY_MARGIN * rho12 {
        CollectivityRegime::CollectiveBoth
    } else if geom.density >= DENSITY_MARGIN * rho01 {
        CollectivityRegime::Collective01Only
    } else {
        CollectivityRegime::Independent
    })
}

/// How coherences are initialized (and, for `Floor`, maintained) in the
/// engines that carry them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SeedPolicy {
    None,
    /// Set every zero coherence to `epsilon * sqrt(p_a * p_b)` at t = 0.
    Tipping { epsilon: f64 },
    /// Tipping at t = 0, plus a fluctuation floor in the mean-field engine:
    /// a collective coherence that falls below `epsilon * sqrt(p_a * p_b)`
    /// relaxes back up to it at the single-atom rate of its transition.
    Floor { epsilon: f64 },
}

impl SeedPolicy {
    pub fn epsilon(&self) -> Option<f64> {
        match *self {
            SeedPolicy::None => None,
            SeedPolicy::Tipping { epsilon } | SeedPolicy::Floor { epsilon } => Some(epsilon),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(eps) = self.epsilon() {
            check_finite("seed_epsilon", eps)?;
            if !(0.0..=1.0).contains(&eps) {
                return Err(Error::param(
                    "seed_epsilon",
                    format!("must lie in [0, 1], got {eps}"),
                ));
            }
        }
        Ok(())
    }

    /// Default vacuum-fluctuation tipping scale `1 / sqrt(N)`.
    pub fn default_epsilon(n_atoms: usize) -> f64 {
        1.0 / (n_atoms.max(1) as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialCondition {
    /// Occupations of `|0>`, `|1>`, `|2>`, `|3>`.
    pub fractions: [f64; 4],
    pub seed: SeedPolicy,
}

impl InitialCondition {
    pub fn level(level: usize) -> Self {
        let mut fractions = [0.0; 4];
        fractions[level] = 1.0;
        InitialCondition {
            fractions,
            seed: SeedPolicy::None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, f) in self.fractions.iter().enumerate() {
            check_finite(&format!("f{i}"), *f)?;
            if *f < 0.0 {
                return Err(Error::param(format!("f{i}"), format!("must be >= 0, got {f}")));
            }
        }
        let sum: f64 = self.fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::param(
                "fractions",
                format!("must sum to 1 within 1e-12, got {sum}"),
            ));
        }
        self.seed.validate()
    }
}
