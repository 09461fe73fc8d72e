//! Net reproductive operators, their Perron roots, and the nonlinear
//! characteristic (fixed-point) equations.
//!
//! In a constant environment the net reproductive operator is the `N x N`
//! matrix `R0 = int diag(m(a)) E(a) da`, where `E` is the propagator of the
//! linearized cohort system. In a `T`-periodic environment the newborn
//! vector is a function of the phase; collocating at the `M = T / delta`
//! grid phases turns the operator into an `(N M) x (N M)` matrix.
//!
//! The characteristic equation `rho = Kbar(rho)` is solved by two monotone
//! iterations, one climbing from a small multiple of the Perron vector and
//! one descending from a large multiple, which squeeze the unique positive
//! solution between them.

use nalgebra::{DMatrix, DVector};

use crate::characteristics::{propagator_columns, Cohort, Workspace};
use crate::error::{Error, Result};
use crate::renewal::NewbornTrajectory;
use crate::scenario::{Environment, Model, Sample};

pub const POWER_TOLERANCE: f64 = 1e-10;
pub const POWER_MAX_ITERATIONS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    Constant,
    Periodic { phases: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReproductiveOperator {
    pub kind: OperatorKind,
    pub matrix: DMatrix<f64>,
    pub sigma: f64,
    /// Perron vector with largest component 1. Periodic operators store it
    /// phase-major: entry `p * N + k` is patch `k` at phase `p`.
    pub perron: Vec<f64>,
    pub iterations: usize,
}

impl ReproductiveOperator {
    /// Perron components of one phase (the whole vector for constant operators).
    pub fn perron_phase(&self, phase: usize, n_patches: usize) -> &[f64] {
        &self.perron[phase * n_patches..(phase + 1) * n_patches]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerIteration {
    pub sigma: f64,
    pub perron: Vec<f64>,
    pub iterations: usize,
}

/// Dominant eigenvalue and eigenvector of a nonnegative matrix.
///
/// Starts from the all-ones vector and stops once successive Rayleigh
/// quotients differ by less than [`POWER_TOLERANCE`].
pub fn power_iteration(matrix: &DMatrix<f64>) -> Result<PowerIteration> {
    if !matrix.is_square() {
        return Err(Error::Precondition(
            "power iteration needs a square matrix".into(),
        ));
    }
    if matrix.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::Precondition(
            "power iteration needs a nonnegative matrix".into(),
        ));
    }
    let n = matrix.nrows();
    let mut x = DVector::from_element(n, 1.0);
    let mut previous = f64::NAN;
    for iteration in 1..=POWER_MAX_ITERATIONS {
        let y = matrix * &x;
        let rayleigh = x.dot(&y) / x.dot(&x);
        let norm = y.amax();
        if norm == 0.0 {
            return Ok(PowerIteration {
                sigma: 0.0,
                perron: x.as_slice().to_vec(),
                iterations: iteration,
            });
        }
        x = y / norm;
        if (rayleigh - previous).abs() < POWER_TOLERANCE {
            return Ok(PowerIteration {
                sigma: rayleigh,
                perron: x.as_slice().to_vec(),
                iterations: iteration,
            });
        }
        previous = rayleigh;
    }
    Err(Error::NonConvergence {
        iterations: POWER_MAX_ITERATIONS,
        sigma: previous,
        last: x.as_slice().to_vec(),
    })
}

fn trapezoid(i: usize, last: usize, delta: f64) -> f64 {
    if i == 0 || i == last {
        0.5 * delta
    } else {
        delta
    }
}

/// Net reproductive matrix of a constant environment.
pub fn build_r0(model: &Model) -> Result<ReproductiveOperator> {
    model.require(Environment::Constant)?;
    let n = model.n_patches();
    let na = model.grid().age_steps();
    let delta = model.grid().delta;
    let columns = propagator_columns(model, 0, na)?;
    let mut matrix = DMatrix::zeros(n, n);
    for i in 0..=na {
        let w = trapezoid(i, na, delta);
        for k in 0..n {
            let m = model.lattice.fertility(k, 2 * i, 2 * i);
            if m == 0.0 {
                continue;
            }
            for (j, column) in columns.iter().enumerate() {
                matrix[(k, j)] += w * m * column[i][k];
            }
        }
    }
    operator(OperatorKind::Constant, matrix)
}

fn operator(kind: OperatorKind, matrix: DMatrix<f64>) -> Result<ReproductiveOperator> {
    let p = power_iteration(&matrix)?;
    Ok(ReproductiveOperator {
        kind,
        matrix,
        sigma: p.sigma,
        perron: p.perron,
        iterations: p.iterations,
    })
}

/// Integrates the nonlinear newborn cohort born at `birth_step` from
/// `start` over all ages and hands each weighted birth contribution to
/// `emit(age_step, births)`.
fn cohort_births(
    model: &Model,
    start: &[f64],
    birth_step: usize,
    ws: &mut Workspace,
    mut emit: impl FnMut(usize, &[f64]),
) -> Result<()> {
    let n = model.n_patches();
    let na = model.grid().age_steps();
    let delta = model.grid().delta;
    let mut cohort = Cohort::new(start.to_vec(), 0, birth_step);
    let mut births = vec![0.0; n];
    for i in 0..=na {
        if i > 0 {
            cohort.advance(&model.lattice, false, delta, ws)?;
        }
        let w = trapezoid(i, na, delta);
        for k in 0..n {
            births[k] =
                w * model.lattice.fertility(k, 2 * i, 2 * (birth_step + i)) * cohort.state[k];
        }
        emit(i, &births);
    }
    Ok(())
}

/// `Kbar(rho)_k = int_0^{a_max} m_k(a) Phi_k(a; rho) da` for a newborn
/// vector held constant in time.
pub fn apply_kbar(model: &Model, rho: &[f64]) -> Result<Vec<f64>> {
    model.require(Environment::Constant)?;
    let mut ws = Workspace::new(model.n_patches());
    let mut out = vec![0.0; model.n_patches()];
    cohort_births(model, rho, 0, &mut ws, |_, b| {
        out.iter_mut().zip(b).for_each(|(o, v)| *o += v)
    })?;
    Ok(out)
}

fn phases(model: &Model) -> Result<usize> {
    model
        .grid()
        .period
        .and_then(|p| model.grid().steps_in(p))
        .filter(|&m| m > 0)
        .ok_or_else(|| Error::Configuration("period must be a positive multiple of delta".into()))
}

fn require_periodic(model: &Model) -> Result<usize> {
    if model.spec().environment == Environment::Irregular {
        return Err(Error::Environment {
            requested: "periodic",
            actual: "irregular",
        });
    }
    phases(model)
}

/// Periodic counterpart of [`apply_kbar`]: `rho` holds one newborn vector
/// per grid phase (phase-major, `M * N` entries) and is extended periodically.
pub fn apply_ktilde(model: &Model, rho: &[f64]) -> Result<Vec<f64>> {
    let m = require_periodic(model)?;
    let n = model.n_patches();
    if rho.len() != m * n {
        return Err(Error::Precondition(format!(
            "periodic newborn vector needs {} entries",
            m * n
        )));
    }
    let mut ws = Workspace::new(n);
    let mut out = vec![0.0; m * n];
    for q in 0..m {
        cohort_births(model, &rho[q * n..(q + 1) * n], q, &mut ws, |i, b| {
            let p = (q + i) % m;
            out[p * n..(p + 1) * n]
                .iter_mut()
                .zip(b)
                .for_each(|(o, v)| *o += v);
        })?;
    }
    Ok(out)
}

/// Net reproductive operator of a periodic environment, collocated at the
/// grid phases of one period. Constant environments are accepted and
/// treated as periodic with the grid period.
pub fn build_r0_periodic(model: &Model) -> Result<ReproductiveOperator> {
    let m = require_periodic(model)?;
    let n = model.n_patches();
    let na = model.grid().age_steps();
    let delta = model.grid().delta;
    let mut matrix = DMatrix::zeros(n * m, n * m);
    for q in 0..m {
        let columns = propagator_columns(model, q, na)?;
        for i in 0..=na {
            let w = trapezoid(i, na, delta);
            let p = (q + i) % m;
            for k in 0..n {
                let fert = model.lattice.fertility(k, 2 * i, 2 * (q + i));
                if fert == 0.0 {
                    continue;
                }
                for (j, column) in columns.iter().enumerate() {
                    matrix[(p * n + k, q * n + j)] += w * fert * column[i][k];
                }
            }
        }
    }
    operator(OperatorKind::Periodic { phases: m }, matrix)
}

#[derive(Debug, Clone, PartialEq)]
pub enum FixedPointProfile {
    Stationary(Vec<f64>),
    /// One period of newborn vectors at the grid phases.
    Periodic(NewbornTrajectory),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    pub profile: FixedPointProfile,
    pub converged: bool,
    pub iterations: usize,
}

impl FixedPoint {
    /// Newborn vector at time step `step` (periodic profiles wrap).
    pub fn at_step(&self, step: usize) -> &[f64] {
        match &self.profile {
            FixedPointProfile::Stationary(v) => v,
            FixedPointProfile::Periodic(traj) => &traj.rho[step % traj.rho.len()],
        }
    }

    pub fn is_trivial(&self) -> bool {
        self.values().all(|v| v == 0.0)
    }

    pub fn max_norm(&self) -> f64 {
        self.values().fold(0.0, f64::max)
    }

    fn values(&self) -> Box<dyn Iterator<Item = f64> + '_> {
        match &self.profile {
            FixedPointProfile::Stationary(v) => Box::new(v.iter().copied()),
            FixedPointProfile::Periodic(t) => Box::new(t.rho.iter().flatten().copied()),
        }
    }
}

/// Settings of the two-sided monotone iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BracketOptions {
    /// The climbing iteration starts at `lower_seed * perron`.
    pub lower_seed: f64,
    pub rtol: f64,
    pub atol: f64,
    pub max_iterations: usize,
}

impl Default for BracketOptions {
    fn default() -> Self {
        BracketOptions {
            lower_seed: 1e-6,
            rtol: 1e-8,
            atol: 1e-12,
            max_iterations: 100_000,
        }
    }
}

struct Bracketed {
    value: Vec<f64>,
    iterations: usize,
}

fn dominated(a: &[f64], b: &[f64]) -> bool {
    a.iter()
        .zip(b)
        .all(|(x, y)| *x <= y * (1.0 + 1e-12) + 1e-300)
}

/// Squeezes the positive fixed point of the monotone map between an
/// increasing and a decreasing orbit.
fn monotone_bracket(
    mut map: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    perron: &[f64],
    density_scale: f64,
    opts: &BracketOptions,
) -> Result<Bracketed> {
    let scaled = |c: f64| perron.iter().map(|p| c * p).collect::<Vec<_>>();

    let mut lower = scaled(opts.lower_seed);
    for _ in 0..10 {
        if dominated(&lower, &map(&lower)?) {
            break;
        }
        lower = lower.iter().map(|v| v * 1e-3).collect();
    }

    let mut c = density_scale.max(f64::MIN_POSITIVE);
    let mut upper = scaled(c);
    let mut found = false;
    for _ in 0..400 {
        if dominated(&map(&upper)?, &upper) {
            found = true;
            break;
        }
        c *= 2.0;
        upper = scaled(c);
    }
    if !found {
        return Err(Error::BracketFailure(
            "no supersolution found along the Perron direction".into(),
        ));
    }

    for iteration in 1..=opts.max_iterations {
        lower = map(&lower)?;
        upper = map(&upper)?;
        let mut converged = true;
        for (l, u) in lower.iter().zip(&upper) {
            let tol = opts.rtol * u.abs() + opts.atol;
            if *l > u + tol {
                return Err(Error::BracketFailure(format!(
                    "lower iterate {l} exceeds upper iterate {u}"
                )));
            }
            if (u - l).abs() > tol {
                converged = false;
            }
        }
        if converged {
            return Ok(Bracketed {
                value: lower
                    .iter()
                    .zip(&upper)
                    .map(|(l, u)| 0.5 * (l + u))
                    .collect(),
                iterations: iteration,
            });
        }
    }
    Err(Error::BracketFailure(format!(
        "monotone iterations did not meet after {} steps",
        opts.max_iterations
    )))
}

/// Starting density for the upper bracket: the smallest regulating scale at birth.
fn regulating_scale(model: &Model) -> f64 {
    let mut scratch = Sample::zeros(model.n_patches());
    let s = model.lattice.sample(0, 0, &mut scratch);
    let max_inv = s.inv_l.iter().copied().fold(0.0, f64::max);
    if max_inv > 0.0 {
        1.0 / max_inv
    } else {
        1.0
    }
}

/// Stationary solution of `rho = Kbar(rho)`: zero when `sigma(R0) <= 1`,
/// otherwise the unique componentwise-positive one.
pub fn solve_rho_star(model: &Model) -> Result<FixedPoint> {
    solve_rho_star_with(model, &build_r0(model)?, &BracketOptions::default())
}

pub fn solve_rho_star_with(
    model: &Model,
    r0: &ReproductiveOperator,
    opts: &BracketOptions,
) -> Result<FixedPoint> {
    model.require(Environment::Constant)?;
    let n = model.n_patches();
    if r0.sigma <= 1.0 {
        return Ok(FixedPoint {
            profile: FixedPointProfile::Stationary(vec![0.0; n]),
            converged: true,
            iterations: 0,
        });
    }
    let b = monotone_bracket(
        |v| apply_kbar(model, v),
        &r0.perron,
        regulating_scale(model),
        opts,
    )?;
    Ok(FixedPoint {
        profile: FixedPointProfile::Stationary(b.value),
        converged: true,
        iterations: b.iterations,
    })
}

/// Periodic solution of `rho = Ktilde(rho)` on the grid phases.
pub fn solve_rho_star_periodic(model: &Model) -> Result<FixedPoint> {
    solve_rho_star_periodic_with(
        model,
        &build_r0_periodic(model)?,
        &BracketOptions::default(),
    )
}

pub fn solve_rho_star_periodic_with(
    model: &Model,
    r0: &ReproductiveOperator,
    opts: &BracketOptions,
) -> Result<FixedPoint> {
    let m = require_periodic(model)?;
    let n = model.n_patches();
    let (value, iterations) = if r0.sigma <= 1.0 {
        (vec![0.0; m * n], 0)
    } else {
        let b = monotone_bracket(
            |v| apply_ktilde(model, v),
            &r0.perron,
            regulating_scale(model),
            opts,
        )?;
        (b.value, b.iterations)
    };
    let delta = model.grid().delta;
    Ok(FixedPoint {
        profile: FixedPointProfile::Periodic(NewbornTrajectory {
            times: (0..m).map(|p| p as f64 * delta).collect(),
            rho: value.chunks(n).map(<[f64]>::to_vec).collect(),
        }),
        converged: true,
        iterations,
    })
}
