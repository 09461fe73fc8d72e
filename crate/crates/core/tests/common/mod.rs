#![allow(dead_code)]

use agepatch::scenario::{validate_scenario, Rate, RateProfile, ScenarioSpec, Severity};
use agepatch::testing::{logistic_patch, patch};
use rand::Rng;

/// Random constant-environment scenario with `n` patches that passes
/// validation. Fertility is a random piecewise-linear profile, mortality
/// grows mildly with age and every pair of patches exchanges individuals.
pub fn random_constant(rng: &mut impl Rng, n: usize, t_end: f64) -> ScenarioSpec {
    loop {
        let mut spec = logistic_patch(0.5, 1.0, 100.0);
        spec.grid.t_end = t_end;
        spec.patches.clear();
        for _ in 0..n {
            let mut p = patch(
                0.5,
                1.0,
                rng.gen_range(10.0..200.0),
                rng.gen_range(0.1..2.0),
            );
            let mu0 = rng.gen_range(0.3..1.0);
            p.mu.profile = RateProfile::Table {
                ages: vec![0.0, 40.0],
                values: vec![mu0, mu0 * rng.gen_range(1.0..1.5)],
            };
            p.m.profile = RateProfile::Table {
                ages: vec![0.0, 1.0, 5.0, 40.0],
                values: (0..4).map(|_| rng.gen_range(0.0..1.6)).collect(),
            };
            spec.patches.push(p);
        }
        for k in 0..n {
            for j in 0..n {
                if k != j {
                    spec.dispersion
                        .offdiag
                        .insert((k, j), Rate::constant(rng.gen_range(0.05..0.5)));
                }
            }
        }
        if validate_scenario(&spec)
            .iter()
            .all(|d| d.severity != Severity::Error)
        {
            return spec;
        }
    }
}

pub fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
