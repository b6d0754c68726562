//! Metrics extracted from a population trajectory, independent of the engine
//! that produced it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::PhysicalParams;

/// Default burst prominence, as a fraction of the signal range.
pub const DEFAULT_PROMINENCE: f64 = 0.05;

/// Allowed decrease of the annihilated fraction between samples.
pub const P3_MONOTONE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Exact,
    Ladder,
    Meanfield,
}

impl Engine {
    pub fn as_str(&self) -> &'static str {
        match self {
            Engine::Exact => "exact",
            Engine::Ladder => "ladder",
            Engine::Meanfield => "meanfield",
        }
    }
}

impl std::str::FromStr for Engine {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Engine::Exact),
            "ladder" => Ok(Engine::Ladder),
            "meanfield" => Ok(Engine::Meanfield),
            other => Err(Error::param(
                "engine",
                format!("expected one of exact, ladder, meanfield; got `{other}`"),
            )),
        }
    }
}

/// Per-atom populations and coherence magnitudes on a uniform time grid.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Series {
    pub t: Vec<f64>,
    pub p: Vec<[f64; 4]>,
    /// `|s01|`, `|s12|`, `|s02|`.
    pub coherence: Vec<[f64; 3]>,
}

impl Series {
    pub fn push(&mut self, t: f64, p: [f64; 4], coherence: [f64; 3]) {
        self.t.push(t);
        self.p.push(p);
        self.coherence.push(coherence);
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn column(&self, level: usize) -> Vec<f64> {
        self.p.iter().map(|p| p[level]).collect()
    }
}

/// Lifetime, or a lower bound when nothing was annihilated in the window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Lifetime {
    Value(f64),
    LowerBound(f64),
}

impl Lifetime {
    pub fn value(&self) -> f64 {
        match *self {
            Lifetime::Value(v) | Lifetime::LowerBound(v) => v,
        }
    }

    pub fn is_lower_bound(&self) -> bool {
        matches!(self, Lifetime::LowerBound(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tau_lifetime: Lifetime,
    /// Lifetime over the independent-atom reference lifetime.
    pub extension_factor: Option<f64>,
    /// Peak times of the 1S population.
    pub burst_times: Vec<f64>,
    /// Mean spacing of consecutive bursts.
    pub t_delay_estimate: Option<f64>,
}

/// Worst invariant deviations seen during a run. Fields that do not apply to
/// an engine are `None`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Audit {
    /// `|sum p - 1|` at the final sample.
    pub final_sum_error: f64,
    pub max_sum_drift: f64,
    pub max_p3_decrease: f64,
    pub max_trace_drift: Option<f64>,
    pub min_eigenvalue: Option<f64>,
    pub max_coherence_excess: Option<f64>,
    pub pruned_mass: Option<f64>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub engine: Engine,
    pub params: PhysicalParams,
    pub series: Series,
    pub intensity: Vec<f64>,
    pub metrics: Metrics,
    pub audit: Audit,
}

impl RunResult {
    /// Assemble a result, deriving intensity and metrics from `series`.
    pub fn new(
        engine: Engine,
        params: PhysicalParams,
        series: Series,
        audit: Audit,
        reference_tau: Option<f64>,
    ) -> Result<Self> {
        let intensity = emission_intensity(&series, params.n_atoms)?;
        let metrics = compute_metrics(&series, reference_tau, params.rabi != 0.0)?;
        Ok(RunResult {
            engine,
            params,
            series,
            intensity,
            metrics,
            audit,
        })
    }
}

/// All metrics from populations alone, so they can be recomputed from a
/// written timeseries.
///
/// Bursts are not searched for in `driven` runs: there the 1S population
/// follows Rabi flopping far faster than any practical sample spacing, and
/// its peaks would be aliasing.
pub fn compute_metrics(series: &Series, reference_tau: Option<f64>, driven: bool) -> Result<Metrics> {
    let tau = lifetime(series)?;
    let peaks = if driven {
        Vec::new()
    } else {
        detect_bursts(&series.column(2), DEFAULT_PROMINENCE)?
    };
    let burst_times: Vec<f64> = peaks.iter().map(|&i| series.t[i]).collect();
    let t_delay_estimate = (burst_times.len() >= 2).then(|| {
        (burst_times[burst_times.len() - 1] - burst_times[0]) / (burst_times.len() - 1) as f64
    });
    let extension_factor = match reference_tau {
        Some(r) => Some(extension_ratio(tau.value(), r)?),
        None => None,
    };
    Ok(Metrics {
        tau_lifetime: tau,
        extension_factor,
        burst_times,
        t_delay_estimate,
    })
}

fn check_grid(series: &Series) -> Result<()> {
    if series.is_empty() {
        return Err(Error::Precondition("empty series".into()));
    }
    if series.p.len() != series.len() || series.coherence.len() != series.len() {
        return Err(Error::Precondition("series columns differ in length".into()));
    }
    if series.t.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Precondition("time grid is not strictly increasing".into()));
    }
    Ok(())
}

/// The annihilated fraction `p3(t)`, checked to be non-decreasing.
pub fn annihilation_probability(series: &Series) -> Result<Vec<f64>> {
    check_grid(series)?;
    let p3 = series.column(3);
    for (i, w) in p3.windows(2).enumerate() {
        if w[1] < w[0] - P3_MONOTONE_TOL {
            return Err(Error::Invariant {
                t: series.t[i + 1],
                detail: format!("annihilated fraction decreased by {:e}", w[0] - w[1]),
            });
        }
    }
    Ok(p3)
}

/// Photon emission rate of the ensemble, `-N d(2 p0 + p1)/dt`.
///
/// The excitation content `2 p0 + p1` does not contain the 1S population,
/// so annihilation does not enter. Central differences (one-sided at the
/// ends) are followed by a `[1, 2, 1] / 4` smoothing pass.
pub fn emission_intensity(series: &Series, n_atoms: usize) -> Result<Vec<f64>> {
    check_grid(series)?;
    let x: Vec<f64> = series.p.iter().map(|p| 2.0 * p[0] + p[1]).collect();
    let t = &series.t;
    let n = x.len();
    if n < 2 {
        return Ok(vec![0.0; n]);
    }
    let mut d = vec![0.0; n];
    d[0] = (x[1] - x[0]) / (t[1] - t[0]);
    d[n - 1] = (x[n - 1] - x[n - 2]) / (t[n - 1] - t[n - 2]);
    for i in 1..n - 1 {
        d[i] = (x[i + 1] - x[i - 1]) / (t[i + 1] - t[i - 1]);
    }
    let scale = -(n_atoms as f64);
    let mut out = vec![0.0; n];
    for i in 0..n {
        let (l, r) = (d[i.saturating_sub(1)], d[(i + 1).min(n - 1)]);
        out[i] = scale * 0.25 * (l + 2.0 * d[i] + r);
    }
    Ok(out)
}

/// Indices of interior local maxima whose topographic prominence is at
/// least `prominence * (max - min)` of the signal, in time order.
///
/// A flat top counts once, at its first sample.
pub fn detect_bursts(signal: &[f64], prominence: f64) -> Result<Vec<usize>> {
    if signal.is_empty() {
        return Err(Error::Precondition("empty signal".into()));
    }
    if signal.iter().any(|x| !x.is_finite()) {
        return Err(Error::Precondition("signal contains non-finite values".into()));
    }
    let (lo, hi) = signal
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let threshold = prominence * (hi - lo);
    let n = signal.len();
    let mut peaks = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if signal[i] > signal[i - 1] {
            let mut j = i;
            while j + 1 < n && signal[j + 1] == signal[i] {
                j += 1;
            }
            if j + 1 < n && signal[j + 1] < signal[i] {
                let h = signal[i];
                let left = signal[..i]
                    .iter()
                    .rev()
                    .take_while(|&&x| x <= h)
                    .fold(h, |m, &x| m.min(x));
                let right = signal[j + 1..]
                    .iter()
                    .take_while(|&&x| x <= h)
                    .fold(h, |m, &x| m.min(x));
                let prom = h - left.max(right);
                if prom > 0.0 && prom >= threshold {
                    peaks.push(i);
                }
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    Ok(peaks)
}

/// Time from the start until `p3` first reaches `(1 - 1/e)` of its final
/// value, linearly interpolated between samples.
pub fn lifetime(series: &Series) -> Result<Lifetime> {
    let p3 = annihilation_probability(series)?;
    let t = &series.t;
    let t0 = t[0];
    let last = *p3.last().unwrap();
    if !(last > 1e-12) {
        return Ok(Lifetime::LowerBound(t[t.len() - 1] - t0));
    }
    let thr = (1.0 - (-1.0f64).exp()) * last;
    let i = p3.iter().position(|&x| x >= thr).unwrap();
    if i == 0 {
        return Ok(Lifetime::Value(0.0));
    }
    let (a, b) = (p3[i - 1], p3[i]);
    let frac = if b > a { (thr - a) / (b - a) } else { 1.0 };
    Ok(Lifetime::Value(t[i - 1] + frac * (t[i] - t[i - 1]) - t0))
}

fn extension_ratio(tau: f64, reference: f64) -> Result<f64> {
    if !(reference > 0.0) || !reference.is_finite() {
        return Err(Error::Precondition(format!(
            "reference lifetime must be positive, got {reference}"
        )));
    }
    Ok(tau / reference)
}

/// `lifetime(run) / lifetime(reference)`.
pub fn extension_factor(run: &RunResult, reference: &RunResult) -> Result<f64> {
    let r = match lifetime(&reference.series)? {
        Lifetime::Value(v) => v,
        Lifetime::LowerBound(_) => {
            return Err(Error::Precondition(
                "reference run annihilated nothing inside its window".into(),
            ))
        }
    };
    extension_ratio(lifetime(&run.series)?.value(), r)
}
