//! Cohort ODEs along characteristics.
//!
//! A cohort is followed along `a - t = const`. On it the balance law becomes
//!
//! ```text
//! h_k' = -mu_k (h_k + h_k^2 / L_k) + sum_j D_kj h_j
//! ```
//!
//! with coefficients evaluated at the cohort's current age and time. A
//! newborn cohort (`Phi`) starts at age 0 at time `y`. A cohort from the
//! initial data (`Psi`) starts at age `y` at time 0. Dropping the quadratic
//! term gives the linearized flow, whose propagator is the fundamental matrix.
//!
//! Integration is the classical four-stage Runge-Kutta scheme with step
//! `delta`, so cohorts stay on the lattice nodes.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scenario::{Environment, Lattice, Model, Sample};

/// Negative values smaller than this in magnitude are rounding and get clamped to zero.
pub const CLAMP_TOLERANCE: f64 = 1e-12;
/// A cohort exceeding this multiple of `max(start, 1)` is treated as unstable.
pub const INSTABILITY_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartKind {
    /// Started from a newborn vector at age 0 and time offset `y`.
    Phi,
    /// Started from the initial data at age `y` and time 0.
    Psi,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortTrajectory {
    pub x_values: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub start_kind: StartKind,
    /// Smallest component seen before clamping (0 if none was negative).
    pub min_unclamped: f64,
}

impl CohortTrajectory {
    pub fn last(&self) -> &[f64] {
        self.values.last().expect("trajectory has its start value")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixTrajectory {
    pub x_values: Vec<f64>,
    pub matrices: Vec<DMatrix<f64>>,
}

/// Scratch space for one integrator.
#[derive(Debug, Clone)]
pub(crate) struct Workspace {
    s0: Sample,
    s1: Sample,
    s2: Sample,
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Workspace {
    pub fn new(n: usize) -> Self {
        Workspace {
            s0: Sample::zeros(n),
            s1: Sample::zeros(n),
            s2: Sample::zeros(n),
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }
}

/// State of one cohort on the lattice.
#[derive(Debug, Clone)]
pub(crate) struct Cohort {
    pub state: Vec<f64>,
    /// Age and time of the current state, in half steps.
    pub ha: usize,
    pub ht: usize,
    pub steps: usize,
    guard: f64,
    pub min_unclamped: f64,
}

impl Cohort {
    pub fn new(start: Vec<f64>, age_step: usize, time_step: usize) -> Self {
        let scale = start.iter().fold(1.0_f64, |m, &v| m.max(v));
        Cohort {
            state: start,
            ha: 2 * age_step,
            ht: 2 * time_step,
            steps: 0,
            guard: INSTABILITY_FACTOR * scale,
            min_unclamped: 0.0,
        }
    }

    /// One step of length `delta` along the characteristic.
    pub fn advance(
        &mut self,
        lattice: &Lattice,
        linear: bool,
        delta: f64,
        ws: &mut Workspace,
    ) -> Result<()> {
        let Workspace {
            s0,
            s1,
            s2,
            k1,
            k2,
            k3,
            k4,
            tmp,
        } = ws;
        let (ha, ht) = (self.ha, self.ht);
        let start = lattice.sample(ha, ht, s0);
        let mid = lattice.sample(ha + 1, ht + 1, s1);
        let end = lattice.sample(ha + 2, ht + 2, s2);
        let h = &mut self.state;
        let half = 0.5 * delta;

        derivative(start, h, linear, k1);
        axpy(h, half, k1, tmp);
        derivative(mid, tmp, linear, k2);
        axpy(h, half, k2, tmp);
        derivative(mid, tmp, linear, k3);
        axpy(h, delta, k3, tmp);
        derivative(end, tmp, linear, k4);
        let sixth = delta / 6.0;
        for i in 0..h.len() {
            h[i] += sixth * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }

        self.ha += 2;
        self.ht += 2;
        self.steps += 1;
        let x = self.steps as f64 * delta;
        for v in h.iter_mut() {
            if !v.is_finite() || *v > self.guard {
                return Err(Error::IntegrationFailure {
                    x,
                    reason: format!("value {v} exceeds the instability guard {:e}", self.guard),
                });
            }
            if *v < 0.0 {
                self.min_unclamped = self.min_unclamped.min(*v);
                if *v < -CLAMP_TOLERANCE {
                    return Err(Error::IntegrationFailure {
                        x,
                        reason: format!("negative density {v}"),
                    });
                }
                *v = 0.0;
            }
        }
        Ok(())
    }
}

#[inline]
fn axpy(h: &[f64], a: f64, k: &[f64], out: &mut [f64]) {
    for i in 0..h.len() {
        out[i] = h[i] + a * k[i];
    }
}

#[inline]
fn derivative(s: &Sample, h: &[f64], linear: bool, out: &mut [f64]) {
    let n = h.len();
    for k in 0..n {
        let loss = if linear {
            h[k]
        } else {
            h[k] + h[k] * h[k] * s.inv_l[k]
        };
        let row = &s.d[k * n..(k + 1) * n];
        let inflow: f64 = row.iter().zip(h).map(|(d, v)| d * v).sum();
        out[k] = -s.mu[k] * loss + inflow;
    }
}

struct Span {
    age_step: usize,
    time_step: usize,
    steps: usize,
}

fn check_span(model: &Model, start: &[f64], kind: StartKind, y: f64, x_max: f64) -> Result<Span> {
    let grid = model.grid();
    if start.len() != model.n_patches() {
        return Err(Error::Precondition(format!(
            "start vector has {} components for {} patches",
            start.len(),
            model.n_patches()
        )));
    }
    if start.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Precondition(
            "start vector must be nonnegative".into(),
        ));
    }
    let offset = grid.index_of(y)?;
    let steps = grid.index_of(x_max)?;
    let (age_step, time_step) = match kind {
        StartKind::Phi => (0, offset),
        StartKind::Psi => (offset, 0),
    };
    let (last_age, last_time) = (age_step + steps, time_step + steps);
    if last_age > grid.age_steps()
        || (model.spec().environment == Environment::Irregular && last_time > grid.time_steps())
    {
        return Err(Error::OutOfRange {
            age: grid.node(last_age),
            time: grid.node(last_time),
        });
    }
    Ok(Span {
        age_step,
        time_step,
        steps,
    })
}

fn integrate(
    model: &Model,
    start: &[f64],
    kind: StartKind,
    y: f64,
    x_max: f64,
    linear: bool,
) -> Result<CohortTrajectory> {
    let span = check_span(model, start, kind, y, x_max)?;
    let delta = model.grid().delta;
    let mut ws = Workspace::new(model.n_patches());
    let mut cohort = Cohort::new(start.to_vec(), span.age_step, span.time_step);
    let mut values = Vec::with_capacity(span.steps + 1);
    values.push(start.to_vec());
    for _ in 0..span.steps {
        cohort.advance(&model.lattice, linear, delta, &mut ws)?;
        values.push(cohort.state.clone());
    }
    Ok(CohortTrajectory {
        x_values: (0..=span.steps).map(|i| i as f64 * delta).collect(),
        values,
        start_kind: kind,
        min_unclamped: cohort.min_unclamped,
    })
}

/// Newborn cohort `Phi(x, y; rho)` for `x` in `[0, x_max]`: born at time `y`
/// with density `start`, coefficients read at age `x`, time `x + y`.
pub fn solve_phi(model: &Model, start: &[f64], y: f64, x_max: f64) -> Result<CohortTrajectory> {
    integrate(model, start, StartKind::Phi, y, x_max, false)
}

/// Initial-data cohort `Psi(x, y; f)`: age `y` at time 0, coefficients read at
/// age `x + y`, time `x`.
pub fn solve_psi(model: &Model, start: &[f64], y: f64, x_max: f64) -> Result<CohortTrajectory> {
    integrate(model, start, StartKind::Psi, y, x_max, false)
}

/// Newborn cohort of the linearized system (no density-dependent mortality).
pub fn solve_phi_linear(
    model: &Model,
    start: &[f64],
    y: f64,
    x_max: f64,
) -> Result<CohortTrajectory> {
    integrate(model, start, StartKind::Phi, y, x_max, true)
}

/// Propagator `E(x)` of the linearized newborn cohort born at time `y`:
/// `E' = (-diag(mu) + D) E`, `E(0) = I`.
pub fn fundamental_matrix(model: &Model, y: f64, x_max: f64) -> Result<MatrixTrajectory> {
    let n = model.n_patches();
    let zero = vec![0.0; n];
    let span = check_span(model, &zero, StartKind::Phi, y, x_max)?;
    let columns = propagator_columns(model, span.time_step, span.steps)?;
    let matrices = (0..=span.steps)
        .map(|i| DMatrix::from_fn(n, n, |r, c| columns[c][i][r]))
        .collect();
    Ok(MatrixTrajectory {
        x_values: (0..=span.steps)
            .map(|i| i as f64 * model.grid().delta)
            .collect(),
        matrices,
    })
}

/// Columns of the propagator for a newborn cohort born at time step
/// `birth_step`; `result[j][i]` is column `j` after `i` steps.
pub(crate) fn propagator_columns(
    model: &Model,
    birth_step: usize,
    steps: usize,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let n = model.n_patches();
    let delta = model.grid().delta;
    let mut ws = Workspace::new(n);
    (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let mut cohort = Cohort::new(e.clone(), 0, birth_step);
            let mut column = Vec::with_capacity(steps + 1);
            column.push(e);
            for _ in 0..steps {
                cohort.advance(&model.lattice, true, delta, &mut ws)?;
                column.push(cohort.state.clone());
            }
            Ok(column)
        })
        .collect()
}
