//! Analytic problem set for integrator checks.

// each test binary uses a different subset
#![allow(dead_code)]

use psr_core::ode::{integrate, IntegrationSpec};

pub const GAMMA1: f64 = 1.0 / 25.8;

#[derive(Debug, Clone, Copy)]
pub enum Problem {
    /// `y' = -y` on `[0, 1]`.
    Decay,
    /// `y'' = -y` over one period.
    Oscillator,
    /// Two-rate cascade with rate ratio 25.8 on `[0, 1]`.
    Cascade,
    /// `y' = 0`.
    Zero,
}

pub const PROBLEMS: [Problem; 4] = [Problem::Decay, Problem::Oscillator, Problem::Cascade, Problem::Zero];

impl Problem {
    pub fn y0(self) -> Vec<f64> {
        match self {
            Problem::Decay => vec![1.0],
            Problem::Oscillator | Problem::Cascade => vec![1.0, 0.0],
            Problem::Zero => vec![0.7],
        }
    }

    pub fn t_end(self) -> f64 {
        match self {
            Problem::Decay => 1.0,
            Problem::Oscillator => 2.0 * std::f64::consts::PI,
            Problem::Cascade => 1.0,
            Problem::Zero => 3.0,
        }
    }

    /// Fastest decay or oscillation rate of the solution.
    pub fn fastest_rate(self) -> f64 {
        match self {
            Problem::Zero => 0.0,
            _ => 1.0,
        }
    }

    /// Fixed-step count resolving the fastest rate with `h * rate = 1/4`.
    pub fn base_steps(self) -> usize {
        ((4.0 * self.fastest_rate() * self.t_end()).ceil() as usize).max(1)
    }

    pub fn rhs(self, _t: f64, y: &[f64], dy: &mut [f64]) {
        match self {
            Problem::Decay => dy[0] = -y[0],
            Problem::Oscillator => {
                dy[0] = y[1];
                dy[1] = -y[0];
            }
            Problem::Cascade => {
                dy[0] = -GAMMA1 * y[0];
                dy[1] = GAMMA1 * y[0] - y[1];
            }
            Problem::Zero => dy[0] = 0.0,
        }
    }

    pub fn exact(self, t: f64) -> Vec<f64> {
        match self {
            Problem::Decay => vec![(-t).exp()],
            Problem::Oscillator => vec![t.cos(), -t.sin()],
            Problem::Cascade => {
                let (a, b) = ((-GAMMA1 * t).exp(), (-t).exp());
                vec![a, GAMMA1 / (1.0 - GAMMA1) * (a - b)]
            }
            Problem::Zero => vec![0.7],
        }
    }

    /// Largest deviation from the analytic solution over 11 output samples.
    pub fn error(self, rtol: f64) -> f64 {
        let spec = IntegrationSpec::new(0.0, self.t_end(), 11).with_tolerances(rtol, 1e-3 * rtol);
        let tr = integrate(|t, y: &[f64], dy: &mut [f64]| self.rhs(t, y, dy), &self.y0(), &spec)
            .expect("analytic problem integrates");
        tr.samples
            .iter()
            .flat_map(|s| {
                let e = self.exact(s.t);
                s.y.iter().zip(e).map(|(a, b)| (a - b).abs()).collect::<Vec<_>>()
            })
            .fold(0.0, f64::max)
    }
}
