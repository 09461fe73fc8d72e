use serde::Serialize;

use super::{
    check_essential_positivity, AgeTimeGrid, DiagonalMode, Environment, Rate, ScenarioSpec,
    TimeModulation,
};

/// Relative truncation residual of the birth profile at `a_max` above which a warning is raised.
const TRUNCATION_RESIDUAL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub message: String,
}

impl Diagnostic {
    fn error(message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Error,
            message: message.into(),
        }
    }

    fn warning(message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Warning,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{tag}: {}", self.message)
    }
}

/// Checks sign invariants, environment consistency, essential positivity
/// and birth-profile truncation. Never fails; an empty list means the
/// scenario is clean.
pub fn validate_scenario(spec: &ScenarioSpec) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    check_grid(&spec.grid, &mut out);
    if out.iter().any(|d| d.severity == Severity::Error) {
        // sampling below needs a usable grid
        return out;
    }
    check_environment(spec, &mut out);

    let ages: Vec<f64> = (0..=spec.grid.age_steps())
        .map(|i| spec.grid.node(i))
        .collect();
    let times = spec.sample_times();
    let delta = spec.grid.delta;
    let range = |rate: &Rate| RateRange::of(rate, &ages, &times, delta);

    for (k, patch) in spec.patches.iter().enumerate() {
        let p = k + 1;
        let mu = range(&patch.mu);
        let m = range(&patch.m);
        let l = range(&patch.l);
        mu.require(&format!("patch {p} mu"), true, &mut out);
        m.require(&format!("patch {p} m"), false, &mut out);
        l.require(&format!("patch {p} L"), true, &mut out);
        if ages.iter().any(|&a| patch.initial.eval(a) < 0.0) {
            out.push(Diagnostic::error(format!(
                "patch {p}: initial density must be nonnegative"
            )));
        }

        // truncation of the age axis at a_max
        let at_end = patch.m.profile.eval(spec.grid.a_max) * m.max_modulation;
        let peak = m.max_profile * m.max_modulation;
        if at_end > 0.0 {
            let survival = (-mu.min_profile * mu.min_modulation * spec.grid.a_max).exp();
            if at_end * survival > TRUNCATION_RESIDUAL * peak {
                out.push(Diagnostic::warning(format!(
                    "patch {p}: birth rate at a_max leaves truncation residual {:.3e} relative (limit {TRUNCATION_RESIDUAL:e})",
                    at_end * survival / peak
                )));
            }
        }
    }

    for (&(k, j), rate) in &spec.dispersion.offdiag {
        range(rate).require(&format!("D {}->{}", k + 1, j + 1), false, &mut out);
    }
    if let DiagonalMode::Explicit(rates) = &spec.dispersion.diagonal {
        for (k, rate) in rates.iter().enumerate() {
            range(rate).require(&format!("patch {} emigration", k + 1), false, &mut out);
        }
    }

    for (name, rate) in spec.named_rates() {
        check_envelopes(&name, &rate.modulation, &times, delta, &mut out);
    }

    if spec.n_patches() >= 2 {
        let connectivity = check_essential_positivity(&spec.dispersion_pattern());
        if !connectivity.essentially_positive {
            out.push(Diagnostic::error(
                "dispersal pattern is not essentially positive (some patch cannot reach another)",
            ));
        }
    }
    out
}

fn check_grid(grid: &AgeTimeGrid, out: &mut Vec<Diagnostic>) {
    if !(grid.delta > 0.0 && grid.delta.is_finite()) {
        out.push(Diagnostic::error("grid delta must be positive"));
        return;
    }
    if !(grid.a_max > 0.0) || grid.steps_in(grid.a_max).is_none() {
        out.push(Diagnostic::error(
            "grid a_max must be a positive multiple of delta",
        ));
    }
    if grid.steps_in(grid.t_end).is_none() {
        out.push(Diagnostic::error(
            "grid t_end must be a nonnegative multiple of delta",
        ));
    }
    if let Some(period) = grid.period {
        if !(period > 0.0) || grid.steps_in(period).is_none() {
            out.push(Diagnostic::error(
                "grid period must be a positive multiple of delta",
            ));
        }
    }
}

fn check_environment(spec: &ScenarioSpec, out: &mut Vec<Diagnostic>) {
    let rates = spec.named_rates();
    match spec.environment {
        Environment::Constant => {
            for (name, rate) in &rates {
                if !matches!(rate.modulation, TimeModulation::None) {
                    out.push(Diagnostic::error(format!(
                        "{name}: constant environment allows no time modulation"
                    )));
                }
            }
        }
        Environment::Periodic | Environment::Irregular => {
            let Some(period) = spec.grid.period else {
                out.push(Diagnostic::error(format!(
                    "{} environment requires grid.period",
                    spec.environment.name()
                )));
                return;
            };
            let irregular = spec.environment == Environment::Irregular;
            let mut any_irregular = false;
            for (name, rate) in &rates {
                let mut periodic_parts = Vec::new();
                match &rate.modulation {
                    TimeModulation::Irregular { lo, hi, .. } => {
                        any_irregular = true;
                        if !irregular {
                            out.push(Diagnostic::error(format!(
                                "{name}: irregular modulation in a periodic environment"
                            )));
                        }
                        periodic_parts.push(lo.as_ref());
                        periodic_parts.push(hi.as_ref());
                    }
                    other => periodic_parts.push(other),
                }
                for part in periodic_parts {
                    if let Some(p) = part.period() {
                        if (p - period).abs() > 1e-9 * period {
                            out.push(Diagnostic::error(format!(
                                "{name}: modulation period {p} differs from grid period {period}"
                            )));
                        }
                    }
                    if let TimeModulation::Sinusoidal { beta, .. } = part {
                        if !(beta.abs() < 1.0) {
                            out.push(Diagnostic::error(format!(
                                "{name}: sinusoidal amplitude must lie in (-1, 1)"
                            )));
                        }
                    }
                }
            }
            if irregular && !any_irregular {
                out.push(Diagnostic::error(
                    "irregular environment needs at least one irregular modulation",
                ));
            }
        }
    }
}

fn check_envelopes(
    name: &str,
    modulation: &TimeModulation,
    times: &[f64],
    delta: f64,
    out: &mut Vec<Diagnostic>,
) {
    if let TimeModulation::Irregular { lo, hi, .. } = modulation {
        if let Some(&t) = times
            .iter()
            .find(|&&t| lo.eval(t, delta) > hi.eval(t, delta))
        {
            out.push(Diagnostic::error(format!(
                "{name}: lower envelope exceeds upper envelope at t = {t}"
            )));
        }
    }
}

/// Extremes of a separable rate over the grid.
struct RateRange {
    min_profile: f64,
    max_profile: f64,
    min_modulation: f64,
    max_modulation: f64,
}

impl RateRange {
    fn of(rate: &Rate, ages: &[f64], times: &[f64], delta: f64) -> Self {
        let (min_profile, max_profile) = extremes(ages.iter().map(|&a| rate.profile.eval(a)));
        let (min_modulation, max_modulation) =
            extremes(times.iter().map(|&t| rate.modulation.eval(t, delta)));
        RateRange {
            min_profile,
            max_profile,
            min_modulation,
            max_modulation,
        }
    }

    fn require(&self, name: &str, strictly_positive: bool, out: &mut Vec<Diagnostic>) {
        if self.min_profile < 0.0 {
            out.push(Diagnostic::error(format!("{name}: negative profile value")));
        }
        if self.min_modulation < 0.0 {
            out.push(Diagnostic::error(format!(
                "{name}: negative time modulation"
            )));
        }
        if strictly_positive
            && self.min_profile >= 0.0
            && self.min_modulation >= 0.0
            && (self.min_profile == 0.0 || self.min_modulation == 0.0)
        {
            out.push(Diagnostic::error(format!(
                "{name} must be strictly positive"
            )));
        }
    }
}

fn extremes(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::RateProfile;
    use crate::testing::{logistic_patch, two_patch};

    #[test]
    fn clean_one_patch_scenario() {
        // residual exp(-20) ~ 2e-9 is under the 1e-8 threshold
        let spec = logistic_patch(0.5, 1.0, 100.0);
        assert_eq!(validate_scenario(&spec), vec![]);
    }

    #[test]
    fn slow_mortality_leaves_residual_warning() {
        let spec = logistic_patch(0.2, 1.0, 100.0);
        let diags = validate_scenario(&spec);
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].severity, Severity::Warning);
    }

    #[test]
    fn one_way_dispersal_is_flagged() {
        let mut spec = two_patch(0.5, 1.0, 100.0, 0.0);
        spec.dispersion.offdiag.insert((0, 1), Rate::constant(0.1));
        let diags = validate_scenario(&spec);
        assert!(diags
            .iter()
            .any(|d| d.message.contains("not essentially positive")));
    }

    #[test]
    fn zero_in_regulating_table() {
        let mut spec = logistic_patch(0.5, 1.0, 100.0);
        spec.patches[0].l.profile = RateProfile::Table {
            ages: vec![0.0, 20.0, 40.0],
            values: vec![100.0, 0.0, 100.0],
        };
        let diags = validate_scenario(&spec);
        assert!(diags
            .iter()
            .any(|d| d.message.contains("L must be strictly positive")));
    }

    #[test]
    fn modulation_in_constant_environment() {
        let mut spec = logistic_patch(0.5, 1.0, 100.0);
        spec.patches[0].m.modulation = TimeModulation::sinusoidal(0.5, 1.0, 0.0);
        assert!(!validate_scenario(&spec).is_empty());
        spec.environment = Environment::Periodic;
        assert!(!validate_scenario(&spec).is_empty()); // no grid period yet
        spec.grid.period = Some(1.0);
        assert_eq!(validate_scenario(&spec), vec![]);
        spec.grid.period = Some(2.0);
        assert!(!validate_scenario(&spec).is_empty());
    }

    #[test]
    fn off_grid_lengths() {
        let mut spec = logistic_patch(0.5, 1.0, 100.0);
        spec.grid.t_end = 10.005;
        assert!(!validate_scenario(&spec).is_empty());
    }
}
