//! TOML scenario files.
//!
//! A file either names a `preset` and overrides some of its fields, or
//! spells out a full scenario. The schema is documented in
//! `docs/config.md`; [`to_config_text`] writes the complete form, which
//! parses back to an identical [`Scenario`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observables::Engine;
use crate::ode::IntegrationSpec;
use crate::params::{CavityConfig, InitialCondition, PhysicalParams, SeedPolicy};
use crate::scenarios::{preset, Scenario};

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(default)]
    params: RawParams,
    #[serde(skip_serializing_if = "Option::is_none")]
    cavity: Option<RawCavity>,
    #[serde(default)]
    initial: RawInitial,
    #[serde(default)]
    run: RawRun,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    gamma0: Option<f64>,
    gamma1: Option<f64>,
    gamma2: Option<f64>,
    rabi: Option<f64>,
    n_atoms: Option<usize>,
    mu0: Option<f64>,
    mu1: Option<f64>,
    collective_01: Option<bool>,
    collective_12: Option<bool>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCavity {
    #[serde(skip_serializing_if = "Option::is_none")]
    enabled: Option<bool>,
    g: Option<f64>,
    kappa: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInitial {
    fractions: Option<[f64; 4]>,
    seed: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed_epsilon: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    engine: Option<Engine>,
    t_start: Option<f64>,
    t_end: Option<f64>,
    samples: Option<usize>,
    rtol: Option<f64>,
    atol: Option<f64>,
    max_step: Option<f64>,
    reference: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ladder_companion_n: Option<usize>,
}

/// 1-based line of byte offset `pos`.
fn line_of(text: &str, pos: usize) -> usize {
    text[..pos.min(text.len())].matches('\n').count() + 1
}

/// Line of the first assignment to `key` (the last dotted component).
fn line_of_key(text: &str, key: &str) -> Option<usize> {
    let leaf = key.rsplit('.').next().unwrap_or(key);
    text.lines().position(|l| {
        let l = l.trim_start();
        l.strip_prefix(leaf)
            .map(|rest| rest.trim_start().starts_with('='))
            .unwrap_or(false)
    })
    .map(|i| i + 1)
}

fn missing(key: &str) -> Error {
    Error::Config {
        message: format!("missing required key `{key}` (no preset to inherit from)"),
        key: Some(key.into()),
        line: None,
    }
}

fn require<T>(v: Option<T>, base: Option<T>, key: &str) -> Result<T> {
    v.or(base).ok_or_else(|| missing(key))
}

/// Parse and validate a scenario file.
pub fn parse_config(text: &str) -> Result<Scenario> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let message = e.message().to_string();
        let key = message
            .split('`')
            .nth(1)
            .filter(|_| message.starts_with("unknown field") || message.starts_with("missing field"))
            .map(str::to_string);
        Error::Config {
            message,
            key,
            line: e.span().map(|s| line_of(text, s.start)),
        }
    })?;
    let scenario = build(raw)?;
    scenario.validate().map_err(|e| match e {
        Error::InvalidParam { key, reason } => Error::Config {
            line: line_of_key(text, &key),
            message: format!("`{key}` {reason}"),
            key: Some(key),
        },
        other => other,
    })?;
    Ok(scenario)
}

fn build(raw: RawConfig) -> Result<Scenario> {
    let base = raw.preset.as_deref().map(preset).transpose()?;
    let bp = base.as_ref().map(|b| &b.params);
    let default_rates = PhysicalParams::positronium(1);
    let p = &raw.params;
    let params = PhysicalParams {
        gamma0: p.gamma0.or(bp.map(|b| b.gamma0)).unwrap_or(default_rates.gamma0),
        gamma1: p.gamma1.or(bp.map(|b| b.gamma1)).unwrap_or(default_rates.gamma1),
        gamma2: p.gamma2.or(bp.map(|b| b.gamma2)).unwrap_or(default_rates.gamma2),
        rabi: require(p.rabi, bp.map(|b| b.rabi), "params.rabi")?,
        n_atoms: require(p.n_atoms, bp.map(|b| b.n_atoms), "params.n_atoms")?,
        mu0: require(p.mu0, bp.map(|b| b.mu0), "params.mu0")?,
        mu1: require(p.mu1, bp.map(|b| b.mu1), "params.mu1")?,
        collective_01: require(p.collective_01, bp.map(|b| b.collective_01), "params.collective_01")?,
        collective_12: require(p.collective_12, bp.map(|b| b.collective_12), "params.collective_12")?,
    };

    let base_cavity = base.as_ref().and_then(|b| b.cavity);
    let cavity = match raw.cavity {
        None => base_cavity,
        Some(RawCavity { enabled: Some(false), .. }) => None,
        Some(c) => Some(CavityConfig {
            g: require(c.g, base_cavity.map(|b| b.g), "cavity.g")?,
            kappa: require(c.kappa, base_cavity.map(|b| b.kappa), "cavity.kappa")?,
        }),
    };

    let bi = base.as_ref().map(|b| &b.initial);
    let fractions = require(raw.initial.fractions, bi.map(|b| b.fractions), "initial.fractions")?;
    let base_eps = bi.and_then(|b| b.seed.epsilon());
    // a base seed at the default scale follows an overridden atom count
    let inherited_eps = match (base_eps, bp) {
        (Some(e), Some(b)) if e == SeedPolicy::default_epsilon(b.n_atoms) => {
            Some(SeedPolicy::default_epsilon(params.n_atoms))
        }
        (e, _) => e,
    };
    let eps = raw
        .initial
        .seed_epsilon
        .or(inherited_eps)
        .unwrap_or_else(|| SeedPolicy::default_epsilon(params.n_atoms));
    let seed = match raw.initial.seed.as_deref() {
        None => match bi.map(|b| b.seed) {
            None => SeedPolicy::None,
            Some(SeedPolicy::None) => SeedPolicy::None,
            Some(SeedPolicy::Tipping { .. }) => SeedPolicy::Tipping { epsilon: eps },
            Some(SeedPolicy::Floor { .. }) => SeedPolicy::Floor { epsilon: eps },
        },
        Some("none") => SeedPolicy::None,
        Some("tipping") => SeedPolicy::Tipping { epsilon: eps },
        Some("floor") => SeedPolicy::Floor { epsilon: eps },
        Some(other) => {
            return Err(Error::Config {
                message: format!("`initial.seed` must be none, tipping or floor, got `{other}`"),
                key: Some("initial.seed".into()),
                line: None,
            })
        }
    };

    let b = base.as_ref();
    let bs = b.map(|b| b.spec);
    let r = &raw.run;
    let spec = IntegrationSpec {
        t_start: r.t_start.or(bs.map(|s| s.t_start)).unwrap_or(0.0),
        t_end: require(r.t_end, bs.map(|s| s.t_end), "run.t_end")?,
        rtol: r.rtol.or(bs.map(|s| s.rtol)).unwrap_or(1e-9),
        atol: r.atol.or(bs.map(|s| s.atol)).unwrap_or(1e-12),
        max_step: r.max_step.or(bs.map(|s| s.max_step)).unwrap_or(f64::INFINITY),
        sample_count: r.samples.or(bs.map(|s| s.sample_count)).unwrap_or(1001),
    };
    let ladder_companion_n = match r.ladder_companion_n {
        Some(0) => None,
        Some(n) => Some(n),
        None => b.and_then(|b| b.ladder_companion_n),
    };

    Ok(Scenario {
        name: raw
            .name
            .or_else(|| b.map(|b| b.name.clone()))
            .unwrap_or_else(|| "custom".into()),
        preset: raw.preset,
        params,
        cavity,
        initial: InitialCondition { fractions, seed },
        engine: r.engine.or(b.map(|b| b.engine)).unwrap_or(Engine::Meanfield),
        spec,
        reference_run: r.reference.or(b.map(|b| b.reference_run)).unwrap_or(false),
        ladder_companion_n,
    })
}

/// Complete config text for `s`. Every field is written, so the text
/// stands on its own even when it names a preset.
pub fn to_config_text(s: &Scenario) -> String {
    let p = &s.params;
    let raw = RawConfig {
        preset: s.preset.clone(),
        name: Some(s.name.clone()),
        params: RawParams {
            gamma0: Some(p.gamma0),
            gamma1: Some(p.gamma1),
            gamma2: Some(p.gamma2),
            rabi: Some(p.rabi),
            n_atoms: Some(p.n_atoms),
            mu0: Some(p.mu0),
            mu1: Some(p.mu1),
            collective_01: Some(p.collective_01),
            collective_12: Some(p.collective_12),
        },
        cavity: Some(match s.cavity {
            Some(c) => RawCavity {
                enabled: None,
                g: Some(c.g),
                kappa: Some(c.kappa),
            },
            None => RawCavity {
                enabled: Some(false),
                ..Default::default()
            },
        }),
        initial: RawInitial {
            fractions: Some(s.initial.fractions),
            seed: Some(
                match s.initial.seed {
                    SeedPolicy::None => "none",
                    SeedPolicy::Tipping { .. } => "tipping",
                    SeedPolicy::Floor { .. } => "floor",
                }
                .into(),
            ),
            seed_epsilon: s.initial.seed.epsilon(),
        },
        run: RawRun {
            engine: Some(s.engine),
            t_start: Some(s.spec.t_start),
            t_end: Some(s.spec.t_end),
            samples: Some(s.spec.sample_count),
            rtol: Some(s.spec.rtol),
            atol: Some(s.spec.atol),
            max_step: Some(s.spec.max_step),
            reference: Some(s.reference_run),
            ladder_companion_n: Some(s.ladder_companion_n.unwrap_or(0)),
        },
    };
    toml::to_string(&raw).expect("scenario fields are always representable in TOML")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::{preset_fig2, preset_fig3a, PRESET_NAMES};

    #[test]
    fn preset_passthrough() {
        assert_eq!(parse_config("preset = \"fig2\"\n").unwrap(), preset_fig2());
    }

    #[test]
    fn out_of_range_mu_names_key_and_bound() {
        let text = "preset = \"fig2\"\n\n[params]\nmu1 = 2.0\n";
        let err = parse_config(text).unwrap_err();
        match &err {
            Error::Config { key, line, message } => {
                assert_eq!(key.as_deref(), Some("mu1"));
                assert_eq!(*line, Some(4));
                assert!(message.contains("[0, 1]"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        assert!(err.is_config_error());
    }

    #[test]
    fn override_changes_only_that_field() {
        let s = parse_config("preset = \"fig3a\"\n[params]\nrabi = 250.0\n").unwrap();
        let mut expect = preset_fig3a();
        expect.params.rabi = 250.0;
        assert_eq!(s, expect);
    }

    #[test]
    fn unknown_key_reports_line() {
        let err = parse_config("preset = \"fig2\"\n[params]\nmu2 = 0.1\n").unwrap_err();
        match err {
            Error::Config { key, line, .. } => {
                assert_eq!(key.as_deref(), Some("mu2"));
                assert_eq!(line, Some(3));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_required_key_without_preset() {
        let err = parse_config("[params]\nrabi = 0.0\n").unwrap_err();
        assert!(matches!(err, Error::Config { key: Some(k), .. } if k == "params.n_atoms"));
    }

    #[test]
    fn every_preset_round_trips() {
        for name in PRESET_NAMES {
            let s = preset(name).unwrap();
            let text = to_config_text(&s);
            let back = parse_config(&text).unwrap();
            assert_eq!(back, s, "{text}");
            assert_eq!(to_config_text(&back), text);
            let mut bare = s.clone();
            bare.preset = None;
            assert_eq!(parse_config(&to_config_text(&bare)).unwrap(), bare);
        }
    }

    #[test]
    fn cavity_can_be_removed_and_companion_disabled() {
        let s = parse_config("preset = \"fig3b\"\n[cavity]\nenabled = false\n").unwrap();
        assert!(s.cavity.is_none());
        let s = parse_config("preset = \"fig2\"\n[run]\nladder_companion_n = 0\n").unwrap();
        assert!(s.ladder_companion_n.is_none());
    }

    #[test]
    fn seed_scale_follows_overridden_atom_count() {
        let s = parse_config("preset = \"fig2\"\n[params]\nn_atoms = 10000\n").unwrap();
        assert_eq!(s.initial.seed, SeedPolicy::Tipping { epsilon: 0.01 });
        let s = parse_config("preset = \"fig2\"\n[params]\nn_atoms = 10000\n[initial]\nseed_epsilon = 0.5\n").unwrap();
        assert_eq!(s.initial.seed, SeedPolicy::Tipping { epsilon: 0.5 });
    }
}
