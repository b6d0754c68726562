//! Configuration-count engine: probability over `(k, m)`, with `k` atoms in
//! 2P, `m` annihilated and `g = N - k - m` in 1S.
//!
//! Two flows: collective emission `(k, m) -> (k - 1, m)` at rate
//! `gamma1 * k * (1 + mu * g)` and annihilation `(k, m) -> (k, m + 1)` at
//! rate `gamma2 * g`. No coherences are carried, so there is no subradiant
//! trapping here.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{integrate_observed, IntegrationSpec, OdeError, StepStats};
use crate::params::ValidatedParams;

/// Largest atom count accepted.
pub const MAX_ATOMS: usize = 3000;

/// Cells below this probability are dropped between sample intervals.
const PRUNE: f64 = 1e-18;
const NORM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct LadderDistribution {
    n_atoms: usize,
    /// Row-major over `k`, then `m`; cells with `k + m > N` stay zero.
    probs: Vec<f64>,
}

impl LadderDistribution {
    pub fn point(n_atoms: usize, k: usize, m: usize) -> Result<Self> {
        check_budget(n_atoms)?;
        if k + m > n_atoms {
            return Err(Error::Precondition(format!(
                "k + m = {} exceeds N = {n_atoms}",
                k + m
            )));
        }
        let mut d = LadderDistribution {
            n_atoms,
            probs: vec![0.0; (n_atoms + 1) * (n_atoms + 1)],
        };
        d.probs[k * (n_atoms + 1) + m] = 1.0;
        Ok(d)
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn get(&self, k: usize, m: usize) -> f64 {
        if k + m > self.n_atoms {
            0.0
        } else {
            self.probs[k * (self.n_atoms + 1) + m]
        }
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// `(<k>, <g>, <m>)`.
    pub fn means(&self) -> (f64, f64, f64) {
        let n = self.n_atoms;
        let (mut ek, mut em, mut tot) = (0.0, 0.0, 0.0);
        for k in 0..=n {
            for m in 0..=(n - k) {
                let p = self.probs[k * (n + 1) + m];
                ek += k as f64 * p;
                em += m as f64 * p;
                tot += p;
            }
        }
        (ek, n as f64 * tot - ek - em, em)
    }

    /// Per-atom populations `(p0, p1, p2, p3)`; level 0 is never occupied.
    pub fn populations(&self) -> [f64; 4] {
        let (k, g, m) = self.means();
        let n = self.n_atoms as f64;
        [0.0, k / n, g / n, m / n]
    }

    /// Marginal distribution of `m`.
    pub fn m_marginal(&self) -> Vec<f64> {
        let n = self.n_atoms;
        let mut out = vec![0.0; n + 1];
        for k in 0..=n {
            for m in 0..=(n - k) {
                out[m] += self.probs[k * (n + 1) + m];
            }
        }
        out
    }

    fn bounds(&self) -> Option<Bounds> {
        let n = self.n_atoms;
        let all = Bounds {
            k_lo: 0,
            k_hi: n,
            m_lo: 0,
            m_hi: n,
        };
        let w = Window {
            stride: n + 1,
            b: all,
            width: n + 1,
            emit: Vec::new(),
            annihilate: Vec::new(),
        };
        w.support(&self.probs)
    }

    fn moments_in(&self, b: Bounds) -> (f64, f64, f64) {
        let n = self.n_atoms;
        let (mut tot, mut ek, mut em) = (0.0, 0.0, 0.0);
        for k in b.k_lo..=b.k_hi {
            for m in b.m_lo..=b.m_hi.min(n - k) {
                let p = self.probs[k * (n + 1) + m];
                tot += p;
                ek += k as f64 * p;
                em += m as f64 * p;
            }
        }
        (tot, ek, em)
    }
}

fn check_budget(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::param("n_atoms", "must be >= 1, got 0"));
    }
    if n > MAX_ATOMS {
        return Err(Error::Capability {
            engine: "ladder",
            n,
            cap: MAX_ATOMS,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LadderGenerator {
    pub n_atoms: usize,
    pub gamma1: f64,
    pub gamma2: f64,
    /// Pair coupling in the emission rate. May exceed 1 for a scale-matched
    /// stand-in of a larger ensemble.
    pub mu: f64,
}

/// Generator for the undriven 2P -> 1S -> annihilation subsystem.
pub fn build_ladder_generator(params: &ValidatedParams) -> Result<LadderGenerator> {
    check_budget(params.n_atoms())?;
    undriven(params)
}

/// Desk-size stand-in for `params` with `n_small` atoms: keeps
/// `mu1 * N` and the rate ratio, so `mu = mu1 * N / n_small`.
pub fn scale_matched_generator(params: &ValidatedParams, n_small: usize) -> Result<LadderGenerator> {
    let mut g = undriven(params)?;
    check_budget(n_small)?;
    g.mu = params.mu1() * params.n_atoms() as f64 / n_small as f64;
    g.n_atoms = n_small;
    Ok(g)
}

fn undriven(params: &ValidatedParams) -> Result<LadderGenerator> {
    if params.rabi() != 0.0 {
        return Err(Error::Precondition(format!(
            "ladder engine requires rabi = 0, got {}",
            params.rabi()
        )));
    }
    Ok(LadderGenerator {
        n_atoms: params.n_atoms(),
        gamma1: params.gamma1(),
        gamma2: params.gamma2(),
        mu: params.mu1(),
    })
}

impl LadderGenerator {
    pub fn emission_rate(&self, k: usize, m: usize) -> f64 {
        let g = (self.n_atoms - k - m) as f64;
        self.gamma1 * k as f64 * (1.0 + self.mu * g)
    }

    pub fn annihilation_rate(&self, k: usize, m: usize) -> f64 {
        self.gamma2 * (self.n_atoms - k - m) as f64
    }

    /// `dP/dt` on the whole distribution.
    pub fn derivative(&self, p: &LadderDistribution) -> Vec<f64> {
        let n = self.n_atoms;
        let w = Window::new(
            self,
            Bounds {
                k_lo: 0,
                k_hi: n,
                m_lo: 0,
                m_hi: n,
            },
        );
        let y = w.gather(p);
        let mut dy = vec![0.0; y.len()];
        w.apply(&y, &mut dy);
        let mut out = vec![0.0; p.probs.len()];
        w.scatter(&dy, &mut out);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Bounds {
    k_lo: usize,
    k_hi: usize,
    m_lo: usize,
    m_hi: usize,
}

/// Rectangular sub-domain `k in [k_lo, k_hi]`, `m in [m_lo, m_hi]`.
/// Flow out through the bottom row or the last column leaves the window and
/// shows up as lost mass.
struct Window {
    stride: usize,
    b: Bounds,
    width: usize,
    emit: Vec<f64>,
    annihilate: Vec<f64>,
}

impl Window {
    fn new(gen: &LadderGenerator, b: Bounds) -> Self {
        let n = gen.n_atoms;
        let width = b.m_hi - b.m_lo + 1;
        let rows = b.k_hi - b.k_lo + 1;
        let mut emit = vec![0.0; rows * width];
        let mut annihilate = vec![0.0; rows * width];
        for r in 0..rows {
            let k = b.k_lo + r;
            for j in 0..width {
                let m = b.m_lo + j;
                if k + m <= n {
                    emit[r * width + j] = gen.emission_rate(k, m);
                    annihilate[r * width + j] = gen.annihilation_rate(k, m);
                }
            }
        }
        Window {
            stride: n + 1,
            b,
            width,
            emit,
            annihilate,
        }
    }

    fn rows(&self) -> usize {
        self.b.k_hi - self.b.k_lo + 1
    }

    fn gather(&self, p: &LadderDistribution) -> Vec<f64> {
        let w = self.width;
        let mut y = vec![0.0; self.rows() * w];
        for r in 0..self.rows() {
            let src = (self.b.k_lo + r) * self.stride + self.b.m_lo;
            y[r * w..(r + 1) * w].copy_from_slice(&p.probs[src..src + w]);
        }
        y
    }

    fn scatter(&self, y: &[f64], probs: &mut [f64]) {
        let w = self.width;
        for r in 0..self.rows() {
            let dst = (self.b.k_lo + r) * self.stride + self.b.m_lo;
            probs[dst..dst + w].copy_from_slice(&y[r * w..(r + 1) * w]);
        }
    }

    /// Bounding box of the nonzero cells of `y`.
    fn support(&self, y: &[f64]) -> Option<Bounds> {
        let w = self.width;
        let mut out: Option<Bounds> = None;
        for r in 0..self.rows() {
            for j in 0..w {
                if y[r * w + j] != 0.0 {
                    let (k, m) = (self.b.k_lo + r, self.b.m_lo + j);
                    let b = out.get_or_insert(Bounds {
                        k_lo: k,
                        k_hi: k,
                        m_lo: m,
                        m_hi: m,
                    });
                    b.k_lo = b.k_lo.min(k);
                    b.k_hi = b.k_hi.max(k);
                    b.m_lo = b.m_lo.min(m);
                    b.m_hi = b.m_hi.max(m);
                }
            }
        }
        out
    }

    fn apply(&self, y: &[f64], dy: &mut [f64]) {
        let w = self.width;
        let rows = self.rows();
        let cells = rows * w;
        let (y, dy) = (&y[..cells], &mut dy[..cells]);
        let (emit, ann) = (&self.emit[..cells], &self.annihilate[..cells]);
        for r in 0..rows {
            let row = r * w;
            let (yr, er, ar) = (&y[row..row + w], &emit[row..row + w], &ann[row..row + w]);
            let out = &mut dy[row..row + w];
            for j in 0..w {
                out[j] = -(er[j] + ar[j]) * yr[j];
            }
            for j in 1..w {
                out[j] += ar[j - 1] * yr[j - 1];
            }
            if r + 1 < rows {
                let (yn, en) = (&y[row + w..row + 2 * w], &emit[row + w..row + 2 * w]);
                for j in 0..w {
                    out[j] += en[j] * yn[j];
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LadderAudit {
    /// Total probability removed by pruning.
    pub pruned_mass: f64,
    pub max_norm_drift: f64,
    pub max_m_decrease: f64,
    pub max_k_increase: f64,
}

/// Expected emissions per cell allowed within one sub-interval; sets how
/// far below the support the window reaches.
const TARGET_JUMPS: f64 = 64.0;
/// Mass allowed to leave a window before the sub-interval is retried.
const LEAK_TOL: f64 = 1e-14;

fn reach(jumps: f64) -> usize {
    (jumps + 8.0 * jumps.sqrt()).ceil() as usize + 10
}

/// Evolve on a window that follows the support, reporting every sample to
/// `observe`.
///
/// Each sample interval is split into sub-intervals short enough that the
/// distribution cannot outrun the window; a sub-interval that leaks mass is
/// retried at half length. Cells below `1e-18` are pruned and their mass is
/// recorded in the audit.
pub fn evolve_ladder_with<O>(
    p0: &LadderDistribution,
    gen: &LadderGenerator,
    spec: &IntegrationSpec,
    mut observe: O,
) -> Result<(LadderAudit, StepStats)>
where
    O: FnMut(f64, &LadderDistribution),
{
    spec.validate()?;
    if p0.n_atoms != gen.n_atoms {
        return Err(Error::Precondition(format!(
            "distribution has {} atoms, generator {}",
            p0.n_atoms, gen.n_atoms
        )));
    }
    if p0.probs.iter().any(|&x| x < -1e-12 || !x.is_finite()) {
        return Err(Error::Precondition("distribution has negative or non-finite entries".into()));
    }
    let n = gen.n_atoms;
    let mut p = p0.clone();
    let mut audit = LadderAudit::default();
    let mut stats = StepStats::default();
    let times = spec.sample_times();
    let Some(mut support) = p.bounds() else {
        return Err(Error::Precondition("distribution has no support".into()));
    };
    let (_, mut last_k, mut last_m) = p.moments_in(support);
    observe(times[0], &p);

    for pair in times.windows(2) {
        let (t0, t1) = (pair[0], pair[1]);
        let mut t = t0;
        while t < t1 {
            let b = support;
            let mut e_max: f64 = 0.0;
            for k in b.k_lo..=b.k_hi {
                for m in b.m_lo..=b.m_hi.min(n - k) {
                    e_max = e_max.max(gen.emission_rate(k, m));
                }
            }
            let a_max = gen.gamma2 * (n - (b.k_lo + b.m_lo).min(n)) as f64;
            let mut tau = t1 - t;
            if e_max * tau > TARGET_JUMPS {
                tau = TARGET_JUMPS / e_max;
            }
            loop {
                let t_end = if tau >= t1 - t { t1 } else { t + tau };
                let win = Bounds {
                    k_lo: b.k_lo.saturating_sub(reach(e_max * tau)),
                    k_hi: b.k_hi,
                    m_lo: b.m_lo,
                    m_hi: (b.m_hi + reach(a_max * tau)).min(n),
                };
                let w = Window::new(gen, win);
                let y0 = w.gather(&p);
                let before: f64 = y0.iter().sum();
                let sub = IntegrationSpec {
                    t_start: t,
                    t_end,
                    sample_count: 2,
                    ..*spec
                };
                let mut y_end = Vec::new();
                let s = integrate_observed(
                    |_t, y: &[f64], dy: &mut [f64]| w.apply(y, dy),
                    &y0,
                    &sub,
                    |_t, y: &[f64]| {
                        y_end = y.to_vec();
                        Ok::<_, OdeError>(())
                    },
                )?;
                stats.accepted += s.accepted;
                stats.rejected += s.rejected;
                stats.evaluations += s.evaluations;
                let closed = win.k_lo == 0 && win.m_hi == n;
                if !closed && before - y_end.iter().sum::<f64>() > LEAK_TOL {
                    tau *= 0.5;
                    continue;
                }
                for v in y_end.iter_mut() {
                    if *v < PRUNE {
                        audit.pruned_mass += v.max(0.0);
                        *v = 0.0;
                    }
                }
                w.scatter(&y_end, &mut p.probs);
                support = w.support(&y_end).ok_or_else(|| Error::Invariant {
                    t: t_end,
                    detail: "distribution lost all support".into(),
                })?;
                t = t_end;
                break;
            }
        }
        let (tot, k, m) = p.moments_in(support);
        let drift = (tot + audit.pruned_mass - 1.0).abs();
        audit.max_norm_drift = audit.max_norm_drift.max(drift);
        audit.max_m_decrease = audit.max_m_decrease.max(last_m - m);
        audit.max_k_increase = audit.max_k_increase.max(k - last_k);
        (last_k, last_m) = (k, m);
        if drift > NORM_TOL || audit.pruned_mass > NORM_TOL {
            return Err(Error::Invariant {
                t: t1,
                detail: format!(
                    "probability drift {drift:e}, pruned mass {:e}",
                    audit.pruned_mass
                ),
            });
        }
        observe(t1, &p);
    }
    Ok((audit, stats))
}

pub fn evolve_ladder(
    p0: &LadderDistribution,
    gen: &LadderGenerator,
    spec: &IntegrationSpec,
) -> Result<(Vec<(f64, [f64; 4])>, LadderAudit)> {
    let mut out = Vec::with_capacity(spec.sample_count);
    let (audit, _) = evolve_ladder_with(p0, gen, spec, |t, p| out.push((t, p.populations())))?;
    Ok((out, audit))
}
