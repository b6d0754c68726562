//! Exact master-equation engine on the full `4^N`-dimensional space.
//!
//! Atom `j` occupies base-4 digit `j` of a basis index, with local levels
//! `|0> = 3D`, `|1> = 2P`, `|2> = 1S`, `|3> = annihilated`. Density matrices
//! are dense and column-major; the generator applies every `S_ab^(j)` as a
//! sparse index shift instead of building Kronecker products.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::ode::{propagate_linear_observed, IntegrationSpec, StepStats};
use crate::params::{InitialCondition, SeedPolicy, ValidatedParams};

/// Largest atom count the dense engine accepts.
pub const MAX_ATOMS: usize = 6;

const TRACE_TOL: f64 = 1e-9;
const EIGEN_TOL: f64 = 1e-9;
const HERMITIAN_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    n_atoms: usize,
    data: DMatrix<Complex64>,
}

impl DensityMatrix {
    pub fn from_matrix(n_atoms: usize, data: DMatrix<Complex64>) -> Result<Self> {
        check_capacity(n_atoms)?;
        let dim = 4usize.pow(n_atoms as u32);
        if data.nrows() != dim || data.ncols() != dim {
            return Err(Error::Precondition(format!(
                "density matrix for {n_atoms} atoms must be {dim}x{dim}, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        Ok(DensityMatrix { n_atoms, data })
    }

    /// Uncorrelated product of identical single-atom states.
    pub fn product(n_atoms: usize, single: &DMatrix<Complex64>) -> Result<Self> {
        check_capacity(n_atoms)?;
        if single.nrows() != 4 || single.ncols() != 4 {
            return Err(Error::Precondition("single-atom state must be 4x4".into()));
        }
        let mut data = DMatrix::from_element(1, 1, Complex64::new(1.0, 0.0));
        // atom j is digit j, so later atoms are the slower-varying factor
        for _ in 0..n_atoms {
            data = single.kronecker(&data);
        }
        Ok(DensityMatrix { n_atoms, data })
    }

    /// Product state built from an initial condition.
    ///
    /// Each atom carries `diag(f)`; a tipping seed adds coherences
    /// `eps * sqrt(f_a f_b)` among the three radiating levels. A floor seed is
    /// a mean-field device and leaves the state diagonal here.
    pub fn from_initial(n_atoms: usize, initial: &InitialCondition) -> Result<Self> {
        initial.validate()?;
        let f = initial.fractions;
        let mut single = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            4,
            f.iter().map(|&x| Complex64::new(x, 0.0)),
        ));
        if let SeedPolicy::Tipping { epsilon } = initial.seed {
            for a in 0..3 {
                for b in 0..3 {
                    if a != b {
                        single[(a, b)] = Complex64::new(epsilon * (f[a] * f[b]).sqrt(), 0.0);
                    }
                }
            }
        }
        Self::product(n_atoms, &single)
    }

    /// `|d_0 d_1 ... >` with atom `j` in level `levels[j]`.
    pub fn basis_state(levels: &[usize]) -> Result<Self> {
        let n = levels.len();
        check_capacity(n)?;
        let dim = 4usize.pow(n as u32);
        let idx: usize = levels.iter().rev().fold(0, |acc, &d| acc * 4 + d);
        let mut data = DMatrix::zeros(dim, dim);
        data[(idx, idx)] = Complex64::new(1.0, 0.0);
        Ok(DensityMatrix { n_atoms: n, data })
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.data
    }

    pub fn trace(&self) -> Complex64 {
        self.data.trace()
    }

    pub fn hermiticity_error(&self) -> f64 {
        hermiticity_error(self.data.as_slice(), self.dim())
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(self.data.as_slice(), self.n_atoms)
    }
}

fn check_capacity(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::param("n_atoms", "must be >= 1, got 0"));
    }
    if n > MAX_ATOMS {
        return Err(Error::Capability {
            engine: "exact",
            n,
            cap: MAX_ATOMS,
        });
    }
    Ok(())
}

/// Collective parameters `gamma_i * (aleph_jl + i omega_jl)` per transition.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix {
    /// `aleph[0]` for 0 -> 1, `aleph[1]` for 1 -> 2.
    pub aleph: [DMatrix<f64>; 2],
    pub omega: [DMatrix<f64>; 2],
}

impl CouplingMatrix {
    /// Small-sample coupling: unit diagonal, `mu_i` off the diagonal, no shifts.
    pub fn uniform(n_atoms: usize, mu0: f64, mu1: f64) -> Self {
        let make = |mu: f64| DMatrix::from_fn(n_atoms, n_atoms, |j, l| if j == l { 1.0 } else { mu });
        CouplingMatrix {
            aleph: [make(mu0), make(mu1)],
            omega: [DMatrix::zeros(n_atoms, n_atoms), DMatrix::zeros(n_atoms, n_atoms)],
        }
    }

    pub fn for_params(params: &ValidatedParams) -> Self {
        Self::uniform(params.n_atoms(), params.mu0(), params.mu1())
    }

    pub fn n_atoms(&self) -> usize {
        self.aleph[0].nrows()
    }

    pub fn validate(&self, n_atoms: usize) -> Result<()> {
        for (i, (a, o)) in self.aleph.iter().zip(&self.omega).enumerate() {
            for m in [a, o] {
                if m.nrows() != n_atoms || m.ncols() != n_atoms {
                    return Err(Error::Precondition(format!(
                        "coupling matrices must be {n_atoms}x{n_atoms}"
                    )));
                }
            }
            for j in 0..n_atoms {
                if a[(j, j)] != 1.0 {
                    return Err(Error::Precondition(format!(
                        "aleph[{i}] diagonal must be 1, got {} at {j}",
                        a[(j, j)]
                    )));
                }
                for l in 0..n_atoms {
                    if a[(j, l)] != a[(l, j)] || o[(j, l)] != o[(l, j)] {
                        return Err(Error::Precondition(format!(
                            "coupling for transition {i} is not Hermitian at ({j}, {l})"
                        )));
                    }
                    if !(-1.0..=1.0).contains(&a[(j, l)]) {
                        return Err(Error::Precondition(format!(
                            "aleph[{i}] entry ({j}, {l}) = {} outside [-1, 1]",
                            a[(j, l)]
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Common off-diagonal value when every shift vanishes and all pairs
    /// couple equally.
    fn uniform_value(&self, i: usize) -> Option<f64> {
        let n = self.n_atoms();
        if self.omega[i].iter().any(|&x| x != 0.0) {
            return None;
        }
        if n < 2 {
            return Some(0.0);
        }
        let mu = self.aleph[i][(0, 1)];
        let uniform = (0..n).all(|j| (0..n).all(|l| j == l || self.aleph[i][(j, l)] == mu));
        uniform.then_some(mu)
    }
}

/// Collective channel with a general coupling matrix.
struct Channel {
    up: usize,
    low: usize,
    coef: DMatrix<Complex64>,
}

/// Collective channel with uniform coupling `mu`, split into its
/// single-atom part (rate `1 - mu`) and the `J^dag J` part (rate `mu`).
struct UniformChannel {
    up: usize,
    low: usize,
    /// `rate * mu / 2`
    half_collective: f64,
}

/// Right-hand side of the master equation for one parameter set.
///
/// Holds its own scratch space, so each run needs its own generator.
pub struct Generator {
    n_atoms: usize,
    dim: usize,
    pow4: Vec<usize>,
    rabi: f64,
    /// Left factor collecting every `-(1/2) L^dag L rho` term of the
    /// single-atom dissipators.
    diag: Vec<f64>,
    /// `(a, b, c)`: `X += c * sum_j S_ab rho S_ba`.
    sandwiches: Vec<(usize, usize, f64)>,
    uniform: Vec<UniformChannel>,
    general: Vec<Channel>,
    bound: f64,
    x: Vec<Complex64>,
    b: Vec<Complex64>,
}

/// Build the generator for `params` with collective couplings `coupling`.
pub fn build_generator(params: &ValidatedParams, coupling: &CouplingMatrix) -> Result<Generator> {
    let n = params.n_atoms();
    check_capacity(n)?;
    coupling.validate(n)?;
    let dim = 4usize.pow(n as u32);
    let pow4: Vec<usize> = (0..n).map(|j| 4usize.pow(j as u32)).collect();
    let count = |r: usize, a: usize| pow4.iter().filter(|&&p| (r / p) % 4 == a).count() as f64;

    let gamma2 = params.gamma2();
    let mut diag: Vec<f64> = (0..dim).map(|r| -0.5 * gamma2 * count(r, 2)).collect();
    let mut sandwiches = Vec::new();
    if gamma2 != 0.0 {
        sandwiches.push((3, 2, 0.5 * gamma2));
    }
    let mut uniform = Vec::new();
    let mut general = Vec::new();
    let mut bound = 2.0 * n as f64 * (params.rabi().abs() + gamma2);
    for (i, (rate, up, low)) in [(params.gamma0(), 0, 1), (params.gamma1(), 1, 2)]
        .into_iter()
        .enumerate()
    {
        if rate == 0.0 {
            continue;
        }
        bound += 2.0 * rate * coupling.aleph[i].iter().chain(coupling.omega[i].iter()).map(|x| x.abs()).sum::<f64>();
        match coupling.uniform_value(i) {
            Some(mu) => {
                let single = rate * (1.0 - mu);
                if single != 0.0 {
                    for (r, d) in diag.iter_mut().enumerate() {
                        *d -= 0.5 * single * count(r, up);
                    }
                    sandwiches.push((low, up, 0.5 * single));
                }
                if mu != 0.0 {
                    uniform.push(UniformChannel {
                        up,
                        low,
                        half_collective: 0.5 * rate * mu,
                    });
                }
            }
            None => general.push(Channel {
                up,
                low,
                coef: DMatrix::from_fn(n, n, |j, l| {
                    Complex64::new(coupling.aleph[i][(j, l)], coupling.omega[i][(j, l)]) * rate
                }),
            }),
        }
    }
    let len = dim * dim;
    let scratch = if uniform.is_empty() && general.is_empty() { 0 } else { len };
    Ok(Generator {
        n_atoms: n,
        dim,
        pow4,
        rabi: params.rabi(),
        diag,
        sandwiches,
        uniform,
        general,
        bound,
        x: vec![Complex64::default(); len],
        b: vec![Complex64::default(); scratch],
    })
}

/// Start of every run of `p` consecutive indices below `d` whose base-4
/// digit at weight `p` equals `a`.
fn runs(p: usize, a: usize, d: usize) -> std::iter::StepBy<std::ops::Range<usize>> {
    (a * p..d).step_by(4 * p)
}

fn axpy<S>(coef: S, src: &[Complex64], dst: &mut [Complex64])
where
    S: Copy + std::ops::Mul<Complex64, Output = Complex64>,
{
    for (t, s) in dst.iter_mut().zip(src) {
        *t += coef * *s;
    }
}

impl Generator {
    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Upper bound on the generator norm, used to size propagation steps.
    pub fn norm_bound(&self) -> f64 {
        self.bound
    }

    /// `dst += coef * S_ab^(j) src`
    fn left_add<S>(&self, coef: S, j: usize, a: usize, b: usize, src: &[Complex64], dst: &mut [Complex64])
    where
        S: Copy + std::ops::Mul<Complex64, Output = Complex64>,
    {
        let (d, p) = (self.dim, self.pow4[j]);
        let shift = b * p;
        for (s, t) in src.chunks_exact(d).zip(dst.chunks_exact_mut(d)) {
            for r in runs(p, a, d) {
                let so = r - a * p + shift;
                axpy(coef, &s[so..so + p], &mut t[r..r + p]);
            }
        }
    }

    /// `dst += coef * src S_ab^(j)`
    fn right_add<S>(&self, coef: S, j: usize, a: usize, b: usize, src: &[Complex64], dst: &mut [Complex64])
    where
        S: Copy + std::ops::Mul<Complex64, Output = Complex64>,
    {
        let (d, p) = (self.dim, self.pow4[j]);
        for start in runs(p, b, d) {
            for c in start..start + p {
                let cs = c - b * p + a * p;
                axpy(coef, &src[cs * d..cs * d + d], &mut dst[c * d..c * d + d]);
            }
        }
    }

    /// `dst += coef * S_ab^(j) src S_ba^(j)`
    fn sandwich_add(&self, coef: f64, j: usize, a: usize, b: usize, src: &[Complex64], dst: &mut [Complex64]) {
        let (d, p) = (self.dim, self.pow4[j]);
        for start in runs(p, a, d) {
            for c in start..start + p {
                let cs = c - a * p + b * p;
                let s = &src[cs * d..cs * d + d];
                let t = &mut dst[c * d..c * d + d];
                for r in runs(p, a, d) {
                    let so = r - a * p + b * p;
                    axpy(coef, &s[so..so + p], &mut t[r..r + p]);
                }
            }
        }
    }

    /// `dst = d(rho)/dt`.
    pub fn apply(&mut self, rho: &[Complex64], dst: &mut [Complex64]) {
        let d = self.dim;
        debug_assert_eq!(rho.len(), d * d);
        let mut x = std::mem::take(&mut self.x);
        let mut b = std::mem::take(&mut self.b);

        // Everything below accumulates X with d(rho)/dt = X + X^dag.
        for (s, t) in rho.chunks_exact(d).zip(x.chunks_exact_mut(d)) {
            for ((t, s), g) in t.iter_mut().zip(s).zip(&self.diag) {
                *t = *g * *s;
            }
        }

        // drive: X gets -i Omega V rho
        if self.rabi != 0.0 {
            let c = Complex64::new(0.0, -self.rabi);
            for j in 0..self.n_atoms {
                self.left_add(c, j, 0, 2, rho, &mut x);
                self.left_add(c, j, 2, 0, rho, &mut x);
            }
        }

        for &(a, bb, c) in &self.sandwiches {
            for j in 0..self.n_atoms {
                self.sandwich_add(c, j, a, bb, rho, &mut x);
            }
        }

        // uniform collective part with B = J rho:
        // X gets -(mu rate / 2)(J^dag B - B J^dag)
        for ch in &self.uniform {
            b.fill(Complex64::default());
            for j in 0..self.n_atoms {
                self.left_add(1.0, j, ch.low, ch.up, rho, &mut b);
            }
            for j in 0..self.n_atoms {
                self.left_add(-ch.half_collective, j, ch.up, ch.low, &b, &mut x);
                self.right_add(ch.half_collective, j, ch.up, ch.low, &b, &mut x);
            }
        }

        // general coupling with A_j = sum_l c_jl L_l rho:
        // X gets -(1/2) sum_j (L_j^dag A_j - A_j L_j^dag)
        for ch in &self.general {
            for j in 0..self.n_atoms {
                b.fill(Complex64::default());
                for l in 0..self.n_atoms {
                    let c = ch.coef[(j, l)];
                    if c != Complex64::default() {
                        self.left_add(c, l, ch.low, ch.up, rho, &mut b);
                    }
                }
                self.left_add(-0.5, j, ch.up, ch.low, &b, &mut x);
                self.right_add(0.5, j, ch.up, ch.low, &b, &mut x);
            }
        }

        for c in 0..d {
            for r in 0..d {
                dst[c * d + r] = x[c * d + r] + x[r * d + c].conj();
            }
        }
        self.x = x;
        self.b = b;
    }

    /// Apply to a density matrix, returning `d(rho)/dt` as a matrix.
    pub fn derivative(&mut self, rho: &DensityMatrix) -> DMatrix<Complex64> {
        let mut out = DMatrix::zeros(self.dim, self.dim);
        self.apply(rho.data.as_slice(), out.as_mut_slice());
        out
    }
}


fn as_complex(y: &[f64]) -> &[Complex64] {
    assert!(y.len() % 2 == 0);
    // SAFETY: Complex64 is repr(C) { re: f64, im: f64 } with f64 alignment.
    unsafe { std::slice::from_raw_parts(y.as_ptr() as *const Complex64, y.len() / 2) }
}

fn as_complex_mut(y: &mut [f64]) -> &mut [Complex64] {
    assert!(y.len() % 2 == 0);
    // SAFETY: as in `as_complex`; the borrow is unique.
    unsafe { std::slice::from_raw_parts_mut(y.as_mut_ptr() as *mut Complex64, y.len() / 2) }
}

fn as_real(z: &[Complex64]) -> &[f64] {
    // SAFETY: as in `as_complex`.
    unsafe { std::slice::from_raw_parts(z.as_ptr() as *const f64, z.len() * 2) }
}

fn hermiticity_error(m: &[Complex64], d: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for c in 0..d {
        for r in c..d {
            worst = worst.max((m[c * d + r] - m[r * d + c].conj()).norm());
        }
    }
    worst
}

fn trace(m: &[Complex64], d: usize) -> Complex64 {
    (0..d).map(|i| m[i * d + i]).sum()
}

fn hermitian_part(m: &[Complex64], idx: &[usize], d: usize) -> DMatrix<Complex64> {
    DMatrix::from_fn(idx.len(), idx.len(), |i, k| {
        let (r, c) = (idx[i], idx[k]);
        (m[c * d + r] + m[r * d + c].conj()) * 0.5
    })
}

/// Smallest eigenvalue, block by block when the state has no coherence
/// between different sets of annihilated atoms (the generator preserves
/// that structure).
fn min_eigenvalue(m: &[Complex64], n: usize) -> f64 {
    let d = 4usize.pow(n as u32);
    let pattern = |r: usize| -> usize {
        (0..n).fold(0, |acc, j| acc | ((((r / 4usize.pow(j as u32)) % 4 == 3) as usize) << j))
    };
    let pats: Vec<usize> = (0..d).map(pattern).collect();
    let block_diagonal = (0..d).all(|c| (0..d).all(|r| pats[r] == pats[c] || m[c * d + r].norm() == 0.0));
    let eig = |idx: &[usize]| -> f64 {
        let h = hermitian_part(m, idx, d);
        SymmetricEigen::new(h).eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    if block_diagonal {
        (0..1usize << n)
            .map(|p| {
                let idx: Vec<usize> = (0..d).filter(|&r| pats[r] == p).collect();
                eig(&idx)
            })
            .fold(f64::INFINITY, f64::min)
    } else {
        eig(&(0..d).collect::<Vec<_>>())
    }
}

/// Per-atom averaged populations and coherences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observables {
    pub p: [f64; 4],
    /// `<S_01>`, `<S_12>`, `<S_02>` averaged over atoms.
    pub s01: Complex64,
    pub s12: Complex64,
    pub s02: Complex64,
}

impl Observables {
    pub fn magnitudes(&self) -> [f64; 3] {
        [self.s01.norm(), self.s12.norm(), self.s02.norm()]
    }
}

fn reduce_slice(m: &[Complex64], n: usize) -> Observables {
    let d = 4usize.pow(n as u32);
    let mut p = [0.0; 4];
    let mut s = [Complex64::default(); 3];
    let pairs = [(0usize, 1usize), (1, 2), (0, 2)];
    for j in 0..n {
        let pj = 4usize.pow(j as u32);
        for r in 0..d {
            let digit = (r / pj) % 4;
            p[digit] += m[r * d + r].re;
            for (k, &(alpha, beta)) in pairs.iter().enumerate() {
                // <S_ab> = <b| rho |a>
                if digit == beta {
                    let c = r + alpha * pj - beta * pj;
                    s[k] += m[c * d + r];
                }
            }
        }
    }
    let inv = 1.0 / n as f64;
    Observables {
        p: p.map(|x| x * inv),
        s01: s[0] * inv,
        s12: s[1] * inv,
        s02: s[2] * inv,
    }
}

pub fn reduce_observables(rho: &DensityMatrix) -> Observables {
    reduce_slice(rho.data.as_slice(), rho.n_atoms)
}

/// Worst deviations seen along an exact trajectory.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ExactAudit {
    pub max_trace_drift: f64,
    pub min_eigenvalue: f64,
    pub max_hermiticity_error: f64,
    pub max_p3_decrease: f64,
}

impl Default for ExactAudit {
    fn default() -> Self {
        ExactAudit {
            max_trace_drift: 0.0,
            min_eigenvalue: f64::INFINITY,
            max_hermiticity_error: 0.0,
            max_p3_decrease: 0.0,
        }
    }
}

/// Evolve `rho0`, handing each sample to `observe` without storing the
/// trajectory. Aborts when trace, hermiticity or positivity leave tolerance.
///
/// The generator is linear and time independent, so samples are reached by
/// [`propagate_linear_observed`], which sums the exponential to machine
/// precision; the tolerances in `spec` are not used. Near-pure driven states
/// otherwise lose positivity to integrator error at the `1e-9` level long
/// before any tolerance an embedded pair can afford at `Omega = 500`.
pub fn evolve_with<O>(
    rho0: &DensityMatrix,
    generator: &mut Generator,
    spec: &IntegrationSpec,
    mut observe: O,
) -> Result<(ExactAudit, StepStats)>
where
    O: FnMut(f64, &DensityMatrix, &Observables),
{
    if rho0.n_atoms != generator.n_atoms {
        return Err(Error::Precondition(format!(
            "state has {} atoms, generator {}",
            rho0.n_atoms, generator.n_atoms
        )));
    }
    let n = rho0.n_atoms;
    let d = rho0.dim();
    let mut audit = ExactAudit::default();
    let mut last_p3 = f64::NEG_INFINITY;
    let mut scratch = rho0.clone();
    let y0 = as_real(rho0.data.as_slice()).to_vec();
    let bound = generator.norm_bound();
    let stats = propagate_linear_observed(
        |y: &[f64], dy: &mut [f64]| generator.apply(as_complex(y), as_complex_mut(dy)),
        bound,
        &y0,
        spec,
        |t, y: &[f64]| -> Result<()> {
            let m = as_complex(y);
            let drift = (trace(m, d) - Complex64::new(1.0, 0.0)).norm();
            let herm = hermiticity_error(m, d);
            let min_eig = min_eigenvalue(m, n);
            let obs = reduce_slice(m, n);
            audit.max_trace_drift = audit.max_trace_drift.max(drift);
            audit.max_hermiticity_error = audit.max_hermiticity_error.max(herm);
            audit.min_eigenvalue = audit.min_eigenvalue.min(min_eig);
            audit.max_p3_decrease = audit.max_p3_decrease.max(last_p3 - obs.p[3]);
            last_p3 = obs.p[3];
            if drift > TRACE_TOL || herm > HERMITIAN_TOL || min_eig < -EIGEN_TOL {
                return Err(Error::Invariant {
                    t,
                    detail: format!(
                        "trace drift {drift:e}, hermiticity error {herm:e}, min eigenvalue {min_eig:e}"
                    ),
                });
            }
            scratch.data.as_mut_slice().copy_from_slice(m);
            observe(t, &scratch, &obs);
            Ok(())
        },
    )?;
    Ok((audit, stats))
}

/// Evolve and keep every sampled state. Memory grows as
/// `samples * 16^N * 16` bytes, so prefer [`evolve_with`] for large N.
pub fn evolve(
    rho0: &DensityMatrix,
    generator: &mut Generator,
    spec: &IntegrationSpec,
) -> Result<(Vec<(f64, DensityMatrix)>, ExactAudit)> {
    let mut out = Vec::with_capacity(spec.sample_count);
    let (audit, _) = evolve_with(rho0, generator, spec, |t, rho, _| out.push((t, rho.clone())))?;
    Ok((out, audit))
}
