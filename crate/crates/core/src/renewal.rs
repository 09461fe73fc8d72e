//! Newborn renewal equation `rho(t) = (K rho)(t) + (F f)(t)` and the
//! population field it generates.
//!
//! `K` collects births from individuals born after time 0 (newborn cohorts),
//! `F` births from the initial population (initial-data cohorts). Both are
//! composite trapezoid sums over the age lattice. Marching is explicit
//! except for the `a = 0` endpoint of `K`, which contains `rho(t)` itself
//! and is solved in closed form per patch.

use crate::characteristics::{solve_phi, solve_psi, Cohort, Workspace};
use crate::error::{Error, Result};
use crate::scenario::{Model, RateProfile};

/// Newborn densities `rho_k(t) = n_k(0, t)` on the time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NewbornTrajectory {
    pub times: Vec<f64>,
    pub rho: Vec<Vec<f64>>,
}

impl NewbornTrajectory {
    pub fn last(&self) -> &[f64] {
        self.rho.last().expect("trajectory is never empty")
    }

    /// Largest component over all times.
    pub fn peak(&self) -> f64 {
        self.rho.iter().flatten().fold(0.0, |m, &v| m.max(v))
    }
}

/// Per-patch totals `N_k(t) = int n_k(a, t) da`.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationSeries {
    pub times: Vec<f64>,
    pub totals: Vec<Vec<f64>>,
}

/// Densities `n_k(a, t)` on the age lattice at the recorded times.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationField {
    pub ages: Vec<f64>,
    pub times: Vec<f64>,
    n_patches: usize,
    /// Layout `[time][age][patch]`.
    values: Vec<f64>,
}

impl PopulationField {
    pub fn new(ages: Vec<f64>, times: Vec<f64>, n_patches: usize) -> Self {
        let len = ages.len() * times.len() * n_patches;
        PopulationField {
            ages,
            times,
            n_patches,
            values: vec![0.0; len],
        }
    }

    pub fn n_patches(&self) -> usize {
        self.n_patches
    }

    /// Density of patch `k` at age index `a` and recorded-time index `t`.
    pub fn get(&self, k: usize, a: usize, t: usize) -> f64 {
        self.values[(t * self.ages.len() + a) * self.n_patches + k]
    }

    pub fn set(&mut self, k: usize, a: usize, t: usize, value: f64) {
        let i = (t * self.ages.len() + a) * self.n_patches + k;
        self.values[i] = value;
    }

    /// Age profile at recorded-time index `t`, as `[age][patch]`.
    pub fn profile(&self, t: usize) -> impl Iterator<Item = &[f64]> {
        let stride = self.ages.len() * self.n_patches;
        self.values[t * stride..(t + 1) * stride].chunks(self.n_patches)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Which field times [`march`] keeps.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum FieldRecording {
    #[default]
    None,
    All,
    /// Grid times to keep (must lie on the grid).
    Times(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarchOutput {
    pub newborns: NewbornTrajectory,
    pub totals: PopulationSeries,
    pub field: PopulationField,
    /// Most negative cohort value seen before clamping.
    pub min_unclamped: f64,
}

fn trapezoid_weight(i: usize, lo: usize, hi: usize, delta: f64) -> f64 {
    if hi == lo {
        0.0
    } else if i == lo || i == hi {
        0.5 * delta
    } else {
        delta
    }
}

/// `(K rho)(t) = int_0^t m_k(a, t) Phi_k(a, t - a; rho) da`, with every
/// newborn cohort integrated from scratch. Only `rho` on `[t - a_max, t]`
/// is read.
pub fn apply_k(model: &Model, rho: &NewbornTrajectory, t: f64) -> Result<Vec<f64>> {
    let grid = model.grid();
    let n = grid.index_of(t)?;
    if rho.rho.len() <= n {
        return Err(Error::Precondition(format!(
            "newborn trajectory ends before t = {t}"
        )));
    }
    let top = n.min(grid.age_steps());
    let mut out = vec![0.0; model.n_patches()];
    for i in 0..=top {
        let w = trapezoid_weight(i, 0, top, grid.delta);
        if w == 0.0 {
            continue;
        }
        let birth = n - i;
        let phi = solve_phi(model, &rho.rho[birth], grid.node(birth), grid.node(i))?;
        let state = phi.last();
        for (k, o) in out.iter_mut().enumerate() {
            *o += w * model.lattice.fertility(k, 2 * i, 2 * n) * state[k];
        }
    }
    Ok(out)
}

/// `(F f)(t) = int_t^{a_max} m_k(a, t) Psi_k(t, a - t; f) da`: births at time
/// `t` from individuals alive at time 0.
pub fn apply_f(model: &Model, initial: &[RateProfile], t: f64) -> Result<Vec<f64>> {
    let grid = model.grid();
    let n = grid.index_of(t)?;
    let na = grid.age_steps();
    let mut out = vec![0.0; model.n_patches()];
    if n >= na {
        return Ok(out);
    }
    for i in n..=na {
        let w = trapezoid_weight(i, n, na, grid.delta);
        let y = grid.node(i - n);
        let start: Vec<f64> = initial.iter().map(|f| f.eval(y)).collect();
        let psi = solve_psi(model, &start, y, t)?;
        let state = psi.last();
        for (k, o) in out.iter_mut().enumerate() {
            *o += w * model.lattice.fertility(k, 2 * i, 2 * n) * state[k];
        }
    }
    Ok(out)
}

/// Solves the renewal equation forward on the grid and reconstructs the
/// population.
///
/// Newborn cohorts are integrated once each and advanced one step per time
/// step, so total work is `O(age_steps * time_steps)`.
pub fn march(model: &Model, recording: &FieldRecording) -> Result<MarchOutput> {
    let spec = model.spec();
    let grid = *model.grid();
    let lattice = &model.lattice;
    let np = model.n_patches();
    let na = grid.age_steps();
    let nt = grid.time_steps();
    let delta = grid.delta;

    for step in 0..=nt {
        for k in 0..np {
            if delta * lattice.fertility(k, 0, 2 * step) / 2.0 >= 1.0 {
                return Err(Error::Configuration(format!(
                    "delta * m_{}(0, t) / 2 >= 1 at t = {}; refine the grid",
                    k + 1,
                    grid.node(step)
                )));
            }
        }
    }

    let record: Vec<usize> = match recording {
        FieldRecording::None => Vec::new(),
        FieldRecording::All => (0..=nt).collect(),
        FieldRecording::Times(ts) => {
            let mut idx = ts
                .iter()
                .map(|&t| {
                    let i = grid.index_of(t)?;
                    if i > nt {
                        return Err(Error::OutOfRange { age: 0.0, time: t });
                    }
                    Ok(i)
                })
                .collect::<Result<Vec<_>>>()?;
            idx.sort_unstable();
            idx.dedup();
            idx
        }
    };
    let ages: Vec<f64> = (0..=na).map(|i| grid.node(i)).collect();
    let mut field = PopulationField::new(ages, record.iter().map(|&i| grid.node(i)).collect(), np);
    let mut next_record = 0;

    let mut ws = Workspace::new(np);
    // initial-data cohorts, indexed by initial age step; alive while age <= a_max
    let mut psi: Vec<Cohort> = (0..=na)
        .map(|l| {
            let a = grid.node(l);
            Cohort::new(
                spec.patches.iter().map(|p| p.initial.eval(a)).collect(),
                l,
                0,
            )
        })
        .collect();
    // newborn cohorts in a ring indexed by birth step modulo na + 1
    let mut phi: Vec<Option<Cohort>> = vec![None; na + 1];

    let mut rho = Vec::with_capacity(nt + 1);
    let mut totals = Vec::with_capacity(nt + 1);
    let mut profile = vec![vec![0.0; np]; na + 1];
    let mut min_unclamped = 0.0f64;

    for n in 0..=nt {
        if n > 0 {
            // advance every cohort from t_{n-1} to t_n
            let first = n.saturating_sub(na);
            for j in first..n {
                let cohort = phi[j % (na + 1)].as_mut().expect("cohort in window");
                cohort.advance(lattice, false, delta, &mut ws)?;
                min_unclamped = min_unclamped.min(cohort.min_unclamped);
            }
            for l in 0..psi.len().min((na + 1).saturating_sub(n)) {
                psi[l].advance(lattice, false, delta, &mut ws)?;
                min_unclamped = min_unclamped.min(psi[l].min_unclamped);
            }
        }

        // age profile at t_n: newborn cohorts for a < t, initial-data cohorts for a > t
        let top = n.min(na);
        for i in (1..=top).filter(|&i| i != n) {
            profile[i].copy_from_slice(&phi[(n - i) % (na + 1)].as_ref().unwrap().state);
        }
        for i in n..=na {
            profile[i].copy_from_slice(&psi[i - n].state);
        }

        let mut births = vec![0.0; np];
        if n == 0 {
            for i in 0..=na {
                let w = trapezoid_weight(i, 0, na, delta);
                for k in 0..np {
                    births[k] += w * lattice.fertility(k, 2 * i, 0) * profile[i][k];
                }
            }
        } else {
            for i in 1..=top {
                let w = trapezoid_weight(i, 0, top, delta);
                let state = &phi[(n - i) % (na + 1)].as_ref().unwrap().state;
                for k in 0..np {
                    births[k] += w * lattice.fertility(k, 2 * i, 2 * n) * state[k];
                }
            }
            if n < na {
                for i in n..=na {
                    let w = trapezoid_weight(i, n, na, delta);
                    for k in 0..np {
                        births[k] += w * lattice.fertility(k, 2 * i, 2 * n) * psi[i - n].state[k];
                    }
                }
            }
            // a = 0 endpoint: (delta / 2) m_k(0, t_n) rho_k(t_n)
            for k in 0..np {
                births[k] /= 1.0 - 0.5 * delta * lattice.fertility(k, 0, 2 * n);
            }
            profile[0].copy_from_slice(&births);
            if n <= na {
                // both cohort families meet on the diagonal a = t
                let newest = &phi[0].as_ref().unwrap().state;
                for k in 0..np {
                    profile[n][k] = 0.5 * (newest[k] + psi[0].state[k]);
                }
            }
        }

        let total: Vec<f64> = (0..np)
            .map(|k| {
                (0..=na)
                    .map(|i| trapezoid_weight(i, 0, na, delta) * profile[i][k])
                    .sum()
            })
            .collect();
        totals.push(total);

        if next_record < record.len() && record[next_record] == n {
            for (i, row) in profile.iter().enumerate() {
                for (k, &v) in row.iter().enumerate() {
                    field.set(k, i, next_record, v);
                }
            }
            next_record += 1;
        }

        phi[n % (na + 1)] = Some(Cohort::new(births.clone(), 0, n));
        rho.push(births);
    }

    let times: Vec<f64> = (0..=nt).map(|i| grid.node(i)).collect();
    Ok(MarchOutput {
        newborns: NewbornTrajectory {
            times: times.clone(),
            rho,
        },
        totals: PopulationSeries { times, totals },
        field,
        min_unclamped,
    })
}

/// Trapezoid over ages of a recorded field, per patch and recorded time.
pub fn total_population(field: &PopulationField) -> PopulationSeries {
    let na = field.ages.len() - 1;
    let delta = if na > 0 {
        field.ages[1] - field.ages[0]
    } else {
        0.0
    };
    let totals = (0..field.times.len())
        .map(|t| {
            (0..field.n_patches())
                .map(|k| {
                    (0..=na)
                        .map(|i| trapezoid_weight(i, 0, na, delta) * field.get(k, i, t))
                        .sum()
                })
                .collect()
        })
        .collect();
    PopulationSeries {
        times: field.times.clone(),
        totals,
    }
}
