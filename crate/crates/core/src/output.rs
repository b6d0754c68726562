//! Run bundles: a CSV timeseries, a JSON summary and a gnuplot script.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observables::{Audit, Engine, Metrics, RunResult, Series};
use crate::ode::IntegrationSpec;
use crate::params::{CavityConfig, CavityEffect, InitialCondition, PhysicalParams, GAMMA2_SI};
use crate::scenarios::ScenarioOutcome;

pub const TIMESERIES_FILE: &str = "timeseries.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const PLOT_FILE: &str = "plot.gp";
pub const TIMESERIES_HEADER: &str = "t,p0,p1,p2,p3,s01,s12,s02,intensity";

/// 12 significant digits.
fn num(x: f64) -> String {
    format!("{x:.11e}")
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn timeseries_text(result: &RunResult) -> String {
    let s = &result.series;
    let mut out = String::with_capacity(s.len() * 9 * 20);
    out.push_str(TIMESERIES_HEADER);
    out.push('\n');
    for i in 0..s.len() {
        let row: Vec<String> = std::iter::once(s.t[i])
            .chain(s.p[i])
            .chain(s.coherence[i])
            .chain(std::iter::once(result.intensity[i]))
            .map(num)
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_timeseries(result: &RunResult, path: &Path) -> Result<()> {
    write_file(path, &timeseries_text(result))
}

/// Read a timeseries file back into a series and its intensity column.
pub fn read_timeseries(path: &Path) -> Result<(Series, Vec<f64>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, message: String| Error::Config {
        message: format!("{}: {message}", path.display()),
        key: None,
        line: Some(line),
    };
    let mut lines = text.lines();
    if lines.next() != Some(TIMESERIES_HEADER) {
        return Err(bad(1, format!("expected header `{TIMESERIES_HEADER}`")));
    }
    let mut series = Series::default();
    let mut intensity = Vec::new();
    for (i, line) in lines.enumerate() {
        let v: Vec<f64> = line
            .split(',')
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| bad(i + 2, format!("{e}")))?;
        if v.len() != 9 {
            return Err(bad(i + 2, format!("expected 9 columns, got {}", v.len())));
        }
        series.push(v[0], [v[1], v[2], v[3], v[4]], [v[5], v[6], v[7]]);
        intensity.push(v[8]);
    }
    Ok((series, intensity))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompanionSummary {
    pub engine: Engine,
    pub n_atoms: usize,
    pub mu1: f64,
    pub metrics: Metrics,
    pub audit: Audit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSummary {
    pub params: PhysicalParams,
    pub metrics: Metrics,
    pub audit: Audit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryFiles {
    pub timeseries: String,
    pub plot_script: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub tool: String,
    pub version: String,
    pub scenario: String,
    pub preset: Option<String>,
    pub engine: Engine,
    /// Parameters the engine ran with, cavity applied, rates in units of
    /// `gamma2`.
    pub params: PhysicalParams,
    pub cavity: Option<CavityConfig>,
    pub cavity_effect: Option<CavityEffect>,
    pub initial: InitialCondition,
    pub integration: IntegrationSpec,
    /// `gamma2` in s^-1; every time in this file is in units of `1/gamma2`.
    pub gamma2_si: f64,
    pub metrics: Metrics,
    pub reference: Option<ReferenceSummary>,
    pub companion: Option<CompanionSummary>,
    pub audit: Audit,
    pub files: SummaryFiles,
}

pub fn summary(outcome: &ScenarioOutcome) -> Summary {
    let s = &outcome.scenario;
    let r = &outcome.result;
    Summary {
        tool: "psr".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        scenario: s.name.clone(),
        preset: s.preset.clone(),
        engine: r.engine,
        params: r.params.clone(),
        cavity: s.cavity,
        cavity_effect: outcome.cavity_effect,
        initial: s.initial.clone(),
        integration: s.spec,
        gamma2_si: GAMMA2_SI,
        metrics: r.metrics.clone(),
        reference: outcome.reference.as_ref().map(|x| ReferenceSummary {
            params: x.params.clone(),
            metrics: x.metrics.clone(),
            audit: x.audit.clone(),
        }),
        companion: outcome.companion.as_ref().map(|c| CompanionSummary {
            engine: c.engine,
            n_atoms: c.params.n_atoms,
            mu1: c.params.mu1,
            metrics: c.metrics.clone(),
            audit: c.audit.clone(),
        }),
        audit: r.audit.clone(),
        files: SummaryFiles {
            timeseries: TIMESERIES_FILE.into(),
            plot_script: PLOT_FILE.into(),
        },
    }
}

pub fn write_summary(outcome: &ScenarioOutcome, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&summary(outcome)).expect("summary is plain data");
    text.push('\n');
    write_file(path, &text)
}

pub fn read_summary(path: &Path) -> Result<Summary> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config {
        message: format!("{}: {e}", path.display()),
        key: None,
        line: Some(e.line()),
    })
}

/// Gnuplot script drawing 2P (solid), 1S (dashed) and annihilated (dotted)
/// populations against `gamma2 t`, plus the independent-atom annihilated
/// fraction (thin) when a reference run exists. Reference data is inlined.
pub fn plot_script(outcome: &ScenarioOutcome, timeseries: &str) -> String {
    let mut g = String::new();
    let name = &outcome.scenario.name;
    let _ = writeln!(g, "# {name}: populations against gamma2 * t");
    let _ = writeln!(g, "set terminal pngcairo size 900,600");
    let _ = writeln!(g, "set output '{name}.png'");
    let _ = writeln!(g, "set datafile separator ','");
    let _ = writeln!(g, "set xlabel 'gamma_2 t'");
    let _ = writeln!(g, "set ylabel 'population'");
    let _ = writeln!(g, "set yrange [0:1]");
    let _ = writeln!(g, "set key right center");
    if let Some(r) = &outcome.reference {
        let _ = writeln!(g, "$reference << EOD");
        for (t, p) in r.series.t.iter().zip(&r.series.p) {
            let _ = writeln!(g, "{},{}", num(*t), num(p[3]));
        }
        let _ = writeln!(g, "EOD");
    }
    let mut curves = vec![
        format!("'{timeseries}' using 1:3 skip 1 with lines lw 2 dt 1 lc rgb 'red' title '2P'"),
        format!("'{timeseries}' using 1:4 skip 1 with lines lw 2 dt 2 lc rgb 'blue' title '1S'"),
        format!("'{timeseries}' using 1:5 skip 1 with lines lw 2 dt 3 lc rgb 'black' title 'annihilated'"),
    ];
    if outcome.reference.is_some() {
        curves.push(
            "$reference using 1:2 with lines lw 0.5 dt 1 lc rgb 'gray40' title 'annihilated, independent atoms'".into(),
        );
    }
    let _ = writeln!(g, "plot {}", curves.join(", \\\n     "));
    g
}

pub fn emit_plot_script(outcome: &ScenarioOutcome, path: &Path) -> Result<()> {
    write_file(path, &plot_script(outcome, TIMESERIES_FILE))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BundlePaths {
    pub timeseries: PathBuf,
    pub summary: PathBuf,
    pub plot_script: PathBuf,
}

/// Write the three bundle files into `dir`, creating it if needed.
pub fn write_bundle(outcome: &ScenarioOutcome, dir: &Path) -> Result<BundlePaths> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = BundlePaths {
        timeseries: dir.join(TIMESERIES_FILE),
        summary: dir.join(SUMMARY_FILE),
        plot_script: dir.join(PLOT_FILE),
    };
    write_timeseries(&outcome.result, &paths.timeseries)?;
    write_summary(outcome, &paths.summary)?;
    emit_plot_script(outcome, &paths.plot_script)?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observables::compute_metrics;
    use crate::params::InitialCondition;
    use crate::scenarios::{run_scenario, Scenario};

    fn small(reference: bool) -> Scenario {
        let mut s = crate::scenarios::preset_fig2();
        s.params.n_atoms = 1000;
        s.params.mu1 = 0.5;
        s.spec = IntegrationSpec::new(0.0, 6.0, 301);
        s.reference_run = reference;
        s.ladder_companion_n = None;
        s
    }

    #[test]
    fn bundle_round_trip() {
        let o = run_scenario(&small(true)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = write_bundle(&o, dir.path()).unwrap();
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 3);

        let (series, intensity) = read_timeseries(&paths.timeseries).unwrap();
        assert!(series.t.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(intensity.len(), series.len());
        let sum = read_summary(&paths.summary).unwrap();
        assert_eq!(sum.metrics, o.result.metrics);
        assert_eq!(sum.files.timeseries, TIMESERIES_FILE);
        assert_eq!(sum.gamma2_si, 8e9);
        assert!(sum.audit.final_sum_error < 1e-8);

        let ref_tau = sum.reference.as_ref().map(|r| r.metrics.tau_lifetime.value());
        assert_eq!(sum.reference.as_ref().unwrap().metrics.extension_factor, Some(1.0));
        let again = compute_metrics(&series, ref_tau, sum.params.rabi != 0.0).unwrap();
        assert!((again.tau_lifetime.value() - sum.metrics.tau_lifetime.value()).abs() < 1e-6);
        assert!((again.extension_factor.unwrap() - sum.metrics.extension_factor.unwrap()).abs() < 1e-6);
        assert_eq!(again.burst_times, sum.metrics.burst_times);
    }

    #[test]
    fn timeseries_layout() {
        let o = run_scenario(&small(false)).unwrap();
        let text = timeseries_text(&o.result);
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(TIMESERIES_HEADER));
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row.len(), 9);
        // d.ddddddddddde+x: 12 significant digits
        assert_eq!(row[2].split('e').next().unwrap().trim_start_matches('-').len(), 13);
        assert_eq!(text, timeseries_text(&run_scenario(&small(false)).unwrap().result));
    }

    #[test]
    fn annihilated_start_gives_constant_column() {
        let mut s = small(false);
        s.initial = InitialCondition::level(3);
        let o = run_scenario(&s).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = write_bundle(&o, dir.path()).unwrap();
        let (series, _) = read_timeseries(&paths.timeseries).unwrap();
        assert!(series.column(3).iter().all(|&p| p == 1.0));
    }

    #[test]
    fn plot_curve_count_and_determinism() {
        let with_ref = run_scenario(&small(true)).unwrap();
        let without = run_scenario(&small(false)).unwrap();
        let count = |s: &str| s.matches("with lines").count();
        assert_eq!(count(&plot_script(&with_ref, TIMESERIES_FILE)), 4);
        assert_eq!(count(&plot_script(&without, TIMESERIES_FILE)), 3);
        assert_eq!(
            plot_script(&with_ref, TIMESERIES_FILE),
            plot_script(&run_scenario(&small(true)).unwrap(), TIMESERIES_FILE)
        );
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let o = run_scenario(&small(false)).unwrap();
        let err = write_timeseries(&o.result, Path::new("/nonexistent-dir/x/ts.csv")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
