//! Rates tabulated on the half-step lattice.
//!
//! The one-step integrator only ever evaluates coefficients at ages and
//! times that are multiples of `delta / 2`, so every rate is stored as an
//! age table and a time table indexed in half steps. Index `h` stands for
//! `h * delta / 2`.

use super::{DiagonalMode, Environment, Rate, ScenarioSpec, TimeModulation};

/// All coefficients of the cohort system at one lattice point.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Sample {
    pub mu: Vec<f64>,
    pub m: Vec<f64>,
    pub inv_l: Vec<f64>,
    /// Row-major `N x N` dispersion matrix, diagonal included.
    pub d: Vec<f64>,
}

impl Sample {
    pub fn zeros(n: usize) -> Self {
        Sample {
            mu: vec![0.0; n],
            m: vec![0.0; n],
            inv_l: vec![0.0; n],
            d: vec![0.0; n * n],
        }
    }
}

#[derive(Debug, Clone)]
enum TimeTable {
    One,
    /// One period, `2M` half steps, wrapped.
    Periodic(Vec<f64>),
    /// `[0, t_end]` in half steps, clamped at the ends.
    Span(Vec<f64>),
}

impl TimeTable {
    fn build(
        m: &TimeModulation,
        half: f64,
        period_halves: Option<usize>,
        span_halves: usize,
    ) -> Self {
        let delta = 2.0 * half;
        match (m, period_halves) {
            (TimeModulation::None, _) => TimeTable::One,
            (m, Some(p)) if m.is_periodic() => {
                TimeTable::Periodic((0..p).map(|h| m.eval(h as f64 * half, delta)).collect())
            }
            (m, _) => TimeTable::Span(
                (0..=span_halves)
                    .map(|h| m.eval(h as f64 * half, delta))
                    .collect(),
            ),
        }
    }

    #[inline]
    fn at(&self, ht: usize) -> f64 {
        match self {
            TimeTable::One => 1.0,
            TimeTable::Periodic(v) => v[ht % v.len()],
            TimeTable::Span(v) => v[ht.min(v.len() - 1)],
        }
    }
}

#[derive(Debug, Clone)]
struct RateTable {
    age: Vec<f64>,
    time: TimeTable,
}

impl RateTable {
    #[inline]
    fn at(&self, ha: usize, ht: usize) -> f64 {
        self.age[ha] * self.time.at(ht)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Lattice {
    n: usize,
    mu: Vec<RateTable>,
    m: Vec<RateTable>,
    l: Vec<RateTable>,
    offdiag: Vec<(usize, usize, RateTable)>,
    /// Explicit emigration rates, or `None` for the mass-conserving diagonal.
    emigration: Option<Vec<RateTable>>,
    /// Age-only samples when the environment is constant.
    stationary: Option<Vec<Sample>>,
}

impl Lattice {
    pub fn build(spec: &ScenarioSpec) -> Self {
        let grid = &spec.grid;
        let half = grid.delta / 2.0;
        let age_halves = 2 * grid.age_steps();
        let span_halves = 2 * grid.time_steps();
        let period_halves = grid.period_steps().map(|m| 2 * m);
        let table = |rate: &Rate| RateTable {
            age: (0..=age_halves)
                .map(|h| rate.profile.eval(h as f64 * half))
                .collect(),
            time: TimeTable::build(&rate.modulation, half, period_halves, span_halves),
        };
        let mut lattice = Lattice {
            n: spec.n_patches(),
            mu: spec.patches.iter().map(|p| table(&p.mu)).collect(),
            m: spec.patches.iter().map(|p| table(&p.m)).collect(),
            l: spec.patches.iter().map(|p| table(&p.l)).collect(),
            offdiag: spec
                .dispersion
                .offdiag
                .iter()
                .map(|(&(k, j), r)| (k, j, table(r)))
                .collect(),
            emigration: match &spec.dispersion.diagonal {
                DiagonalMode::MassConserving => None,
                DiagonalMode::Explicit(rates) => Some(rates.iter().map(table).collect()),
            },
            stationary: None,
        };
        if spec.environment == Environment::Constant {
            let samples = (0..=age_halves)
                .map(|ha| {
                    let mut s = Sample::zeros(lattice.n);
                    lattice.fill(ha, 0, &mut s);
                    s
                })
                .collect();
            lattice.stationary = Some(samples);
        }
        lattice
    }

    /// Coefficients at age `ha` and time `ht` (both in half steps).
    #[inline]
    pub fn sample<'a>(&'a self, ha: usize, ht: usize, scratch: &'a mut Sample) -> &'a Sample {
        match &self.stationary {
            Some(samples) => &samples[ha],
            None => {
                self.fill(ha, ht, scratch);
                scratch
            }
        }
    }

    /// Fertility of patch `k` at lattice node `(ha, ht)`.
    #[inline]
    pub fn fertility(&self, k: usize, ha: usize, ht: usize) -> f64 {
        self.m[k].at(ha, ht)
    }

    fn fill(&self, ha: usize, ht: usize, s: &mut Sample) {
        let n = self.n;
        for k in 0..n {
            s.mu[k] = self.mu[k].at(ha, ht);
            s.m[k] = self.m[k].at(ha, ht);
            s.inv_l[k] = 1.0 / self.l[k].at(ha, ht);
        }
        s.d.iter_mut().for_each(|v| *v = 0.0);
        for (k, j, t) in &self.offdiag {
            s.d[k * n + j] = t.at(ha, ht);
        }
        match &self.emigration {
            None => {
                for j in 0..n {
                    let out: f64 = (0..n).filter(|&k| k != j).map(|k| s.d[k * n + j]).sum();
                    s.d[j * n + j] = -out;
                }
            }
            Some(rates) => {
                for (k, t) in rates.iter().enumerate() {
                    s.d[k * n + k] = -t.at(ha, ht);
                }
            }
        }
    }
}
