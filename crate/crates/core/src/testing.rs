//! Small ready-made scenarios shared by unit tests, integration tests and
//! the acceptance suite.

use std::collections::BTreeMap;

use crate::scenario::{
    AgeTimeGrid, DiagonalMode, DispersionSpec, Environment, PatchRates, Rate, RateProfile,
    ScenarioSpec, TimeModulation,
};

/// Step 0.02, ages up to 40, horizon `t_end`.
pub fn desk_grid(t_end: f64) -> AgeTimeGrid {
    AgeTimeGrid {
        delta: 0.02,
        a_max: 40.0,
        t_end,
        period: None,
    }
}

pub fn patch(mu: f64, m: f64, l: f64, initial: f64) -> PatchRates {
    PatchRates {
        mu: Rate::constant(mu),
        m: Rate::constant(m),
        l: Rate::constant(l),
        initial: RateProfile::constant(initial),
    }
}

/// One patch with constant rates, unit initial density and `t_end = 10`.
pub fn logistic_patch(mu: f64, m: f64, l: f64) -> ScenarioSpec {
    ScenarioSpec {
        patches: vec![patch(mu, m, l, 1.0)],
        dispersion: DispersionSpec {
            offdiag: BTreeMap::new(),
            diagonal: DiagonalMode::MassConserving,
        },
        grid: desk_grid(10.0),
        environment: Environment::Constant,
    }
}

/// Two identical patches exchanging individuals at rate `d` in both
/// directions (mass conserving). With `d = 0` no dispersal entries exist.
pub fn two_patch(mu: f64, m: f64, l: f64, d: f64) -> ScenarioSpec {
    let mut spec = logistic_patch(mu, m, l);
    spec.patches.push(patch(mu, m, l, 1.0));
    if d > 0.0 {
        spec.dispersion.offdiag.insert((0, 1), Rate::constant(d));
        spec.dispersion.offdiag.insert((1, 0), Rate::constant(d));
    }
    spec
}

/// Source patch (mu 0.5, m 1) coupled at rate 0.1 to a sink (mu 1, m 0.5)
/// whose isolated net reproductive rate is 0.5.
pub fn source_sink() -> ScenarioSpec {
    let mut spec = two_patch(0.5, 1.0, 100.0, 0.1);
    spec.patches[1] = patch(1.0, 0.5, 100.0, 1.0);
    spec
}

/// The one-patch scenario as a compact JSON document (same grid as
/// [`logistic_patch`]).
pub fn single_patch_doc(mu: f64, m: f64, l: f64) -> String {
    format!(
        concat!(
            r#"{{"patches":[{{"mu":{{"profile":{{"constant":{{"value":{:?}}}}}}},"#,
            r#""m":{{"profile":{{"constant":{{"value":{:?}}}}}}},"#,
            r#""L":{{"profile":{{"constant":{{"value":{:?}}}}}}},"#,
            r#""initial":{{"constant":{{"value":1.0}}}}}}],"#,
            r#""dispersion":{{"diagonal_mode":"mass_conserving"}},"#,
            r#""grid":{{"delta":0.02,"a_max":40.0,"t_end":10.0}},"#,
            r#""environment":"constant"}}"#
        ),
        mu, m, l
    )
}

/// Irregular modulation between two periodic envelopes. The fractions stay
/// empty until the scenario passes through [`reseed`] or the loader.
pub fn irregular(lo: TimeModulation, hi: TimeModulation) -> TimeModulation {
    TimeModulation::Irregular {
        lo: Box::new(lo),
        hi: Box::new(hi),
        seed: 0,
        fractions: Vec::new(),
    }
}

/// Sinusoid `level * (1 + beta sin(2 pi t / period))`.
pub fn wave(level: f64, beta: f64, period: f64) -> TimeModulation {
    TimeModulation::Sinusoidal {
        beta,
        period,
        phase: 0.0,
        level,
    }
}

/// Round trip through the document form with a seed override, which draws
/// fresh fractions for every irregular rate.
pub fn reseed(spec: &ScenarioSpec, seed: u64) -> ScenarioSpec {
    ScenarioSpec::from_document(spec.to_document(), Some(seed)).expect("valid scenario")
}

/// One patch with `mu = 0.5`, `L = 100` and fertility drifting irregularly
/// between the 1-periodic envelopes `m_lo (1 + 0.2 sin)` and `m_hi (1 + 0.2 sin)`.
pub fn irregular_patch(m_lo: f64, m_hi: f64, seed: u64, t_end: f64) -> ScenarioSpec {
    let mut spec = logistic_patch(0.5, 1.0, 100.0);
    spec.grid.t_end = t_end;
    spec.grid.period = Some(1.0);
    spec.environment = Environment::Irregular;
    spec.patches[0].m.modulation = irregular(wave(m_lo, 0.2, 1.0), wave(m_hi, 0.2, 1.0));
    reseed(&spec, seed)
}
