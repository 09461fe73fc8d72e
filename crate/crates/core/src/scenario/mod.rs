//! Model inputs: vital rates, dispersion, initial data and the age-time grid.
//!
//! Every rate is separable: an age profile multiplied by a time modulation.
//! Scenario documents are JSON; [`load_scenario`] parses one, checks its
//! structure and pre-samples every irregular modulation so that everything
//! downstream is deterministic. Sign and consistency checks live in
//! [`validate_scenario`].

mod graph;
mod lattice;
mod validate;

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, LoadError, Result};

pub use graph::{check_essential_positivity, Connectivity};
pub(crate) use lattice::{Lattice, Sample};
pub use validate::{validate_scenario, Diagnostic, Severity};

/// Relative tolerance used when checking that a length is a whole number of steps.
const GRID_TOL: f64 = 1e-9;

/// Shared age/time lattice. Age and time use the same step so that
/// characteristics `a - t = const` pass through lattice nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgeTimeGrid {
    pub delta: f64,
    pub a_max: f64,
    pub t_end: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
}

impl AgeTimeGrid {
    /// Number of whole steps in `length`, if it is a (near) integer multiple of `delta`.
    pub fn steps_in(&self, length: f64) -> Option<usize> {
        if !(self.delta > 0.0) || !length.is_finite() || length < 0.0 {
            return None;
        }
        let ratio = length / self.delta;
        let rounded = ratio.round();
        ((ratio - rounded).abs() <= GRID_TOL * rounded.max(1.0)).then_some(rounded as usize)
    }

    /// Index of a grid value, or an off-grid error.
    pub fn index_of(&self, value: f64) -> Result<usize> {
        self.steps_in(value).ok_or(Error::OffGrid {
            value,
            delta: self.delta,
        })
    }

    pub fn age_steps(&self) -> usize {
        self.rounded_steps(self.a_max)
    }

    pub fn time_steps(&self) -> usize {
        self.rounded_steps(self.t_end)
    }

    pub fn period_steps(&self) -> Option<usize> {
        self.period.map(|p| self.rounded_steps(p).max(1))
    }

    pub fn node(&self, index: usize) -> f64 {
        index as f64 * self.delta
    }

    fn rounded_steps(&self, length: f64) -> usize {
        if self.delta > 0.0 && length.is_finite() && length > 0.0 {
            (length / self.delta).round() as usize
        } else {
            0
        }
    }
}

/// Age dependence of a rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum RateProfile {
    Constant {
        value: f64,
    },
    /// Piecewise-linear interpolation through `(ages[i], values[i])`.
    Table {
        ages: Vec<f64>,
        values: Vec<f64>,
    },
    /// `value` on `[a_lo, a_hi]`, zero elsewhere.
    Window {
        value: f64,
        a_lo: f64,
        a_hi: f64,
    },
}

impl RateProfile {
    pub fn constant(value: f64) -> Self {
        RateProfile::Constant { value }
    }

    pub fn eval(&self, age: f64) -> f64 {
        match self {
            RateProfile::Constant { value } => *value,
            RateProfile::Table { ages, values } => interpolate(ages, values, age),
            RateProfile::Window { value, a_lo, a_hi } => {
                let tol = 1e-9 * a_hi.abs().max(1.0);
                if age >= a_lo - tol && age <= a_hi + tol {
                    *value
                } else {
                    0.0
                }
            }
        }
    }

    fn values(&self) -> &[f64] {
        match self {
            RateProfile::Constant { value } | RateProfile::Window { value, .. } => {
                std::slice::from_ref(value)
            }
            RateProfile::Table { values, .. } => values,
        }
    }
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let last = xs.len() - 1;
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[last] {
        return ys[last];
    }
    let hi = xs.partition_point(|&b| b <= x);
    let lo = hi - 1;
    let w = (x - xs[lo]) / (xs[hi] - xs[lo]);
    ys[lo] * (1.0 - w) + ys[hi] * w
}

fn one() -> f64 {
    1.0
}

/// Time dependence of a rate, as a multiplier applied to its age profile.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TimeModulation {
    #[default]
    None,
    /// `level * (1 + beta * sin(2 pi t / period + phase))`.
    Sinusoidal {
        beta: f64,
        period: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default = "one")]
        level: f64,
    },
    /// Samples at phases `i * period / M`, interpolated linearly and wrapped.
    PeriodicTable { period: f64, values: Vec<f64> },
    /// Seeded draws between two periodic envelopes.
    ///
    /// One uniform fraction `u_n` in `[0, 1]` is drawn per grid time; the
    /// multiplier is `lo(t) + u(t) * (hi(t) - lo(t))` with `u` linearly
    /// interpolated between grid times.
    Irregular {
        lo: Box<TimeModulation>,
        hi: Box<TimeModulation>,
        seed: u64,
        #[serde(skip)]
        fractions: Vec<f64>,
    },
}

impl TimeModulation {
    pub fn sinusoidal(beta: f64, period: f64, phase: f64) -> Self {
        TimeModulation::Sinusoidal {
            beta,
            period,
            phase,
            level: 1.0,
        }
    }

    /// Multiplier at time `t`; `delta` is the grid step (used by irregular samples).
    pub fn eval(&self, t: f64, delta: f64) -> f64 {
        match self {
            TimeModulation::None => 1.0,
            TimeModulation::Sinusoidal {
                beta,
                period,
                phase,
                level,
            } => level * (1.0 + beta * (2.0 * PI * t / period + phase).sin()),
            TimeModulation::PeriodicTable { period, values } => {
                let m = values.len();
                let s = (t / period).rem_euclid(1.0) * m as f64;
                let i = (s.floor() as usize).min(m - 1);
                let w = s - i as f64;
                values[i] * (1.0 - w) + values[(i + 1) % m] * w
            }
            TimeModulation::Irregular {
                lo, hi, fractions, ..
            } => {
                let u = interpolate_fraction(fractions, t / delta);
                let (l, h) = (lo.eval(t, delta), hi.eval(t, delta));
                l + u * (h - l)
            }
        }
    }

    pub fn is_periodic(&self) -> bool {
        !matches!(self, TimeModulation::Irregular { .. })
    }

    pub fn period(&self) -> Option<f64> {
        match self {
            TimeModulation::Sinusoidal { period, .. }
            | TimeModulation::PeriodicTable { period, .. } => Some(*period),
            _ => None,
        }
    }
}

fn interpolate_fraction(fractions: &[f64], s: f64) -> f64 {
    match fractions.len() {
        0 => 0.5,
        1 => fractions[0],
        n => {
            let s = s.clamp(0.0, (n - 1) as f64);
            let i = (s.floor() as usize).min(n - 2);
            let w = s - i as f64;
            fractions[i] * (1.0 - w) + fractions[i + 1] * w
        }
    }
}

/// A rate: age profile times time modulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rate {
    pub profile: RateProfile,
    #[serde(default, skip_serializing_if = "is_none_modulation")]
    pub modulation: TimeModulation,
}

fn is_none_modulation(m: &TimeModulation) -> bool {
    matches!(m, TimeModulation::None)
}

impl Rate {
    pub fn constant(value: f64) -> Self {
        Rate {
            profile: RateProfile::constant(value),
            modulation: TimeModulation::None,
        }
    }

    pub fn new(profile: RateProfile, modulation: TimeModulation) -> Self {
        Rate {
            profile,
            modulation,
        }
    }

    pub fn eval(&self, age: f64, time: f64, delta: f64) -> f64 {
        self.profile.eval(age) * self.modulation.eval(time, delta)
    }
}

/// Vital rates and initial density of one patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchRates {
    /// Mortality (1/year).
    pub mu: Rate,
    /// Fertility (1/year).
    pub m: Rate,
    /// Regulating function (density units).
    #[serde(rename = "L")]
    pub l: Rate,
    /// Initial age density `f_k(a)`.
    pub initial: RateProfile,
}

/// How the diagonal of the dispersion matrix is obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DiagonalMode {
    /// `D_kk = -sum_{j != k} D_jk`: every emigrant arrives somewhere.
    MassConserving,
    /// One emigration rate per patch; `D_kk` is its negative.
    Explicit(Vec<Rate>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DispersionSpec {
    /// Off-diagonal entries keyed by zero-based `(k, j)`: flow from patch `j` into patch `k`.
    pub offdiag: BTreeMap<(usize, usize), Rate>,
    pub diagonal: DiagonalMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Environment {
    Constant,
    Periodic,
    Irregular,
}

impl Environment {
    pub fn name(self) -> &'static str {
        match self {
            Environment::Constant => "constant",
            Environment::Periodic => "periodic",
            Environment::Irregular => "irregular",
        }
    }
}

/// On-disk form of the dispersion block; off-diagonal keys are `"k->j"`
/// (one-based) naming the matrix entry `D_kj`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DispersionDocument {
    #[serde(default)]
    pub offdiag: BTreeMap<String, Rate>,
    pub diagonal_mode: DiagonalMode,
}

/// On-disk scenario document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDocument {
    pub patches: Vec<PatchRates>,
    pub dispersion: DispersionDocument,
    pub grid: AgeTimeGrid,
    pub environment: Environment,
}

/// Fully materialized model description.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub patches: Vec<PatchRates>,
    pub dispersion: DispersionSpec,
    pub grid: AgeTimeGrid,
    pub environment: Environment,
}

/// Pointwise rates at one `(a, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateSample {
    pub mu: Vec<f64>,
    pub m: Vec<f64>,
    pub l: Vec<f64>,
    pub d: DMatrix<f64>,
}

/// Parses a scenario document, checks its structure and samples irregular
/// modulations. With `seed_override`, the `i`-th irregular modulation (in
/// document order) uses seed `S + i`.
pub fn load_scenario(text: &str, seed_override: Option<u64>) -> Result<ScenarioSpec, LoadError> {
    let doc: ScenarioDocument = serde_json::from_str(text).map_err(|e| match e.classify() {
        serde_json::error::Category::Data => LoadError::Schema(e.to_string()),
        _ => LoadError::Parse(e.to_string()),
    })?;
    ScenarioSpec::from_document(doc, seed_override)
}

impl ScenarioSpec {
    pub fn from_document(
        doc: ScenarioDocument,
        seed_override: Option<u64>,
    ) -> Result<Self, LoadError> {
        let n = doc.patches.len();
        if n == 0 {
            return Err(LoadError::Schema("at least one patch is required".into()));
        }
        let mut offdiag = BTreeMap::new();
        for (key, rate) in doc.dispersion.offdiag {
            let (k, j) = parse_edge_key(&key, n)?;
            if offdiag.insert((k, j), rate).is_some() {
                return Err(LoadError::Schema(format!(
                    "duplicate dispersion entry {key}"
                )));
            }
        }
        if let DiagonalMode::Explicit(rates) = &doc.dispersion.diagonal_mode {
            if rates.len() != n {
                return Err(LoadError::Schema(format!(
                    "explicit diagonal has {} entries for {n} patches",
                    rates.len()
                )));
            }
        }
        let mut spec = ScenarioSpec {
            patches: doc.patches,
            dispersion: DispersionSpec {
                offdiag,
                diagonal: doc.dispersion.diagonal_mode,
            },
            grid: doc.grid,
            environment: doc.environment,
        };
        let grid = spec.grid;
        for (name, rate) in spec.named_rates() {
            check_profile(&rate.profile, &grid, &name)?;
            check_modulation(&rate.modulation, &name, true)?;
        }
        for (k, patch) in spec.patches.iter().enumerate() {
            check_profile(&patch.initial, &grid, &format!("patch {} initial", k + 1))?;
        }
        let samples = grid.time_steps() + 1;
        let mut ordinal = 0u64;
        spec.for_each_rate_mut(|rate| {
            if let TimeModulation::Irregular {
                seed, fractions, ..
            } = &mut rate.modulation
            {
                if let Some(base) = seed_override {
                    *seed = base.wrapping_add(ordinal);
                }
                ordinal += 1;
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                *fractions = (0..samples).map(|_| rng.gen::<f64>()).collect();
            }
        });
        Ok(spec)
    }

    pub fn n_patches(&self) -> usize {
        self.patches.len()
    }

    pub fn to_document(&self) -> ScenarioDocument {
        ScenarioDocument {
            patches: self.patches.clone(),
            dispersion: DispersionDocument {
                offdiag: self
                    .dispersion
                    .offdiag
                    .iter()
                    .map(|(&(k, j), r)| (format!("{}->{}", k + 1, j + 1), r.clone()))
                    .collect(),
                diagonal_mode: self.dispersion.diagonal.clone(),
            },
            grid: self.grid,
            environment: self.environment,
        }
    }

    /// Canonical JSON form; loading it again yields an equal spec.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("scenario serializes")
    }

    /// Every rate with a human-readable label, in document order.
    pub fn named_rates(&self) -> Vec<(String, &Rate)> {
        let mut out = Vec::new();
        for (k, p) in self.patches.iter().enumerate() {
            out.push((format!("patch {} mu", k + 1), &p.mu));
            out.push((format!("patch {} m", k + 1), &p.m));
            out.push((format!("patch {} L", k + 1), &p.l));
        }
        for (&(k, j), r) in &self.dispersion.offdiag {
            out.push((format!("D {}->{}", k + 1, j + 1), r));
        }
        if let DiagonalMode::Explicit(rates) = &self.dispersion.diagonal {
            for (k, r) in rates.iter().enumerate() {
                out.push((format!("patch {} emigration", k + 1), r));
            }
        }
        out
    }

    pub(crate) fn for_each_rate_mut(&mut self, mut f: impl FnMut(&mut Rate)) {
        for p in &mut self.patches {
            f(&mut p.mu);
            f(&mut p.m);
            f(&mut p.l);
        }
        for r in self.dispersion.offdiag.values_mut() {
            f(r);
        }
        if let DiagonalMode::Explicit(rates) = &mut self.dispersion.diagonal {
            rates.iter_mut().for_each(f);
        }
    }

    /// Rate matrix entry `D_kj` at `(a, t)`, diagonal included.
    pub(crate) fn dispersion_at(&self, age: f64, time: f64) -> DMatrix<f64> {
        let n = self.n_patches();
        let delta = self.grid.delta;
        let mut d = DMatrix::zeros(n, n);
        for (&(k, j), r) in &self.dispersion.offdiag {
            d[(k, j)] = r.eval(age, time, delta);
        }
        match &self.dispersion.diagonal {
            DiagonalMode::MassConserving => {
                for j in 0..n {
                    let out: f64 = (0..n).filter(|&k| k != j).map(|k| d[(k, j)]).sum();
                    d[(j, j)] = -out;
                }
            }
            DiagonalMode::Explicit(rates) => {
                for (k, r) in rates.iter().enumerate() {
                    d[(k, k)] = -r.eval(age, time, delta);
                }
            }
        }
        d
    }

    /// Boolean pattern: `(k, j)` is set iff `D_kj > 0` somewhere on the grid.
    pub fn dispersion_pattern(&self) -> Vec<Vec<bool>> {
        let n = self.n_patches();
        let mut pattern = vec![vec![false; n]; n];
        let ages: Vec<f64> = (0..=self.grid.age_steps())
            .map(|i| self.grid.node(i))
            .collect();
        let times = self.sample_times();
        for (&(k, j), r) in &self.dispersion.offdiag {
            let in_age = ages.iter().any(|&a| r.profile.eval(a) > 0.0);
            let in_time = times
                .iter()
                .any(|&t| r.modulation.eval(t, self.grid.delta) > 0.0);
            pattern[k][j] = in_age && in_time;
        }
        pattern
    }

    /// Grid times over the horizon plus one period, where modulations are checked.
    pub(crate) fn sample_times(&self) -> Vec<f64> {
        let steps = self
            .grid
            .time_steps()
            .max(self.grid.period_steps().unwrap_or(0));
        (0..=steps).map(|n| self.grid.node(n)).collect()
    }
}

fn parse_edge_key(key: &str, n: usize) -> Result<(usize, usize), LoadError> {
    let bad = || {
        LoadError::Schema(format!(
            "dispersion key {key:?} must look like \"k->j\" with 1 <= k, j <= {n}, k != j"
        ))
    };
    let (k, j) = key.split_once("->").ok_or_else(bad)?;
    let k: usize = k.trim().parse().map_err(|_| bad())?;
    let j: usize = j.trim().parse().map_err(|_| bad())?;
    if k == 0 || j == 0 || k > n || j > n || k == j {
        return Err(bad());
    }
    Ok((k - 1, j - 1))
}

fn check_profile(profile: &RateProfile, grid: &AgeTimeGrid, name: &str) -> Result<(), LoadError> {
    let schema = |msg: String| Err(LoadError::Schema(format!("{name}: {msg}")));
    if profile.values().iter().any(|v| !v.is_finite()) {
        return schema("profile values must be finite".into());
    }
    match profile {
        RateProfile::Table { ages, values } => {
            if ages.is_empty() || ages.len() != values.len() {
                return schema("table needs matching, non-empty ages and values".into());
            }
            if ages.windows(2).any(|w| !(w[1] > w[0])) {
                return schema("table breakpoints must be strictly increasing".into());
            }
            let tol = GRID_TOL * grid.a_max.abs().max(1.0);
            if ages[0] > tol || *ages.last().unwrap() < grid.a_max - tol {
                return schema(format!(
                    "table breakpoints [{}, {}] do not cover [0, {}]",
                    ages[0],
                    ages.last().unwrap(),
                    grid.a_max
                ));
            }
        }
        RateProfile::Window { a_lo, a_hi, .. } => {
            if !(a_lo <= a_hi) {
                return schema("window needs a_lo <= a_hi".into());
            }
        }
        RateProfile::Constant { .. } => {}
    }
    Ok(())
}

fn check_modulation(
    m: &TimeModulation,
    name: &str,
    allow_irregular: bool,
) -> Result<(), LoadError> {
    let schema = |msg: &str| Err(LoadError::Schema(format!("{name}: {msg}")));
    match m {
        TimeModulation::None => Ok(()),
        TimeModulation::Sinusoidal {
            beta,
            period,
            phase,
            level,
        } => {
            if ![*beta, *period, *phase, *level]
                .iter()
                .all(|v| v.is_finite())
            {
                return schema("sinusoidal parameters must be finite");
            }
            if !(*period > 0.0) {
                return schema("sinusoidal period must be positive");
            }
            Ok(())
        }
        TimeModulation::PeriodicTable { period, values } => {
            if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
                return schema("periodic table needs finite samples");
            }
            if !(*period > 0.0) {
                return schema("periodic table period must be positive");
            }
            Ok(())
        }
        TimeModulation::Irregular { lo, hi, .. } => {
            if !allow_irregular {
                return schema("irregular envelopes must be periodic modulations");
            }
            check_modulation(lo, name, false)?;
            check_modulation(hi, name, false)
        }
    }
}

/// Pointwise rates at `(age, time)`.
pub fn eval_rates(spec: &ScenarioSpec, age: f64, time: f64) -> Result<RateSample> {
    let grid = &spec.grid;
    let eps = GRID_TOL * grid.a_max.max(grid.t_end).max(1.0);
    let time_ok =
        spec.environment != Environment::Irregular || (time >= -eps && time <= grid.t_end + eps);
    if !(age >= -eps && age <= grid.a_max + eps) || !time_ok {
        return Err(Error::OutOfRange { age, time });
    }
    let delta = grid.delta;
    Ok(RateSample {
        mu: spec
            .patches
            .iter()
            .map(|p| p.mu.eval(age, time, delta))
            .collect(),
        m: spec
            .patches
            .iter()
            .map(|p| p.m.eval(age, time, delta))
            .collect(),
        l: spec
            .patches
            .iter()
            .map(|p| p.l.eval(age, time, delta))
            .collect(),
        d: spec.dispersion_at(age, time),
    })
}

/// A scenario together with its precomputed coefficient lattice. All solvers
/// take one of these.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ScenarioSpec,
    pub(crate) lattice: Lattice,
}

impl Model {
    pub fn new(spec: ScenarioSpec) -> Result<Self> {
        if !(spec.grid.delta > 0.0) || spec.grid.age_steps() == 0 {
            return Err(Error::Configuration(
                "grid needs delta > 0 and a_max >= delta".into(),
            ));
        }
        let lattice = Lattice::build(&spec);
        Ok(Model { spec, lattice })
    }

    /// Like [`Model::new`] but refuses scenarios with error-level diagnostics.
    pub fn validated(spec: ScenarioSpec) -> Result<Self> {
        let errors: Vec<Diagnostic> = validate_scenario(&spec)
            .into_iter()
            .filter(|d| d.severity == Severity::Error)
            .collect();
        if !errors.is_empty() {
            return Err(Error::Validation(errors));
        }
        Model::new(spec)
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    pub fn grid(&self) -> &AgeTimeGrid {
        &self.spec.grid
    }

    pub fn n_patches(&self) -> usize {
        self.spec.n_patches()
    }

    pub(crate) fn require(&self, env: Environment) -> Result<()> {
        if self.spec.environment == env {
            Ok(())
        } else {
            Err(Error::Environment {
                requested: env.name(),
                actual: self.spec.environment.name(),
            })
        }
    }
}
