//! Persistence verdicts and bounds built on top of the solvers.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::renewal::{march, FieldRecording, NewbornTrajectory, PopulationSeries};
use crate::scenario::{DiagonalMode, Environment, Model, Rate, ScenarioSpec, TimeModulation};
use crate::spectral::{
    build_r0, build_r0_periodic, solve_rho_star_periodic_with, solve_rho_star_with, BracketOptions,
    FixedPoint,
};

/// Allowed rise of the tail gap between consecutive grid times. The fixed
/// point is only resolved to a relative 1e-8, so smaller wiggles are noise.
pub const TAIL_SLACK: f64 = 1e-7;
/// Default sandwich slack, relative to the sup norm of the upper fixed point.
pub const DEFAULT_EPSILON: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    /// `sigma <= 1`, including the critical case.
    Extinction,
    Persistence,
}

impl Classification {
    pub fn from_sigma(sigma: f64) -> Self {
        if sigma > 1.0 {
            Classification::Persistence
        } else {
            Classification::Extinction
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evidence {
    pub final_rho: Vec<f64>,
    pub peak: f64,
    /// Persistence: `|rho(t_end) - rho*(t_end)|_inf / |rho*|_inf`.
    /// Extinction: `|rho(t_end)|_inf / peak`.
    pub relative_gap: f64,
    /// The same quantity is non-increasing (up to [`TAIL_SLACK`]) over `[t_end / 2, t_end]`.
    pub monotone_tail: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersistenceVerdict {
    pub sigma: f64,
    pub classification: Classification,
    pub fixed_point: FixedPoint,
    pub evidence: Evidence,
    pub newborns: NewbornTrajectory,
    pub totals: PopulationSeries,
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Distance of the newborn trajectory at step `n` from the fixed point,
/// or its size relative to the peak when there is nothing to converge to.
fn gap_at(newborns: &NewbornTrajectory, fixed: &FixedPoint, peak: f64, n: usize) -> f64 {
    let rho = &newborns.rho[n];
    let target = fixed.at_step(n);
    let scale = fixed.max_norm();
    if scale > 0.0 {
        let diff: Vec<f64> = rho.iter().zip(target).map(|(a, b)| a - b).collect();
        sup(&diff) / scale
    } else if peak > 0.0 {
        sup(rho) / peak
    } else {
        0.0
    }
}

fn evidence(newborns: &NewbornTrajectory, fixed: &FixedPoint) -> Evidence {
    let last = newborns.rho.len() - 1;
    let peak = newborns.peak();
    let gaps: Vec<f64> = (last / 2..=last)
        .map(|n| gap_at(newborns, fixed, peak, n))
        .collect();
    Evidence {
        final_rho: newborns.last().to_vec(),
        peak,
        relative_gap: *gaps.last().unwrap(),
        monotone_tail: gaps.windows(2).all(|w| w[1] <= w[0] + TAIL_SLACK),
    }
}

/// Computes `sigma`, the fixed point and a simulation, and compares them.
pub fn classify(model: &Model) -> Result<PersistenceVerdict> {
    let opts = BracketOptions::default();
    let (sigma, fixed_point) = match model.spec().environment {
        Environment::Constant => {
            let r0 = build_r0(model)?;
            (r0.sigma, solve_rho_star_with(model, &r0, &opts)?)
        }
        Environment::Periodic => {
            let r0 = build_r0_periodic(model)?;
            (r0.sigma, solve_rho_star_periodic_with(model, &r0, &opts)?)
        }
        Environment::Irregular => {
            return Err(Error::Environment {
                requested: "constant or periodic",
                actual: "irregular",
            })
        }
    };
    let run = march(model, &FieldRecording::None)?;
    Ok(PersistenceVerdict {
        sigma,
        classification: Classification::from_sigma(sigma),
        evidence: evidence(&run.newborns, &fixed_point),
        fixed_point,
        newborns: run.newborns,
        totals: run.totals,
    })
}

/// `int_0^{a_max} m_k(a) s(a) da` by trapezoid, where the survival
/// `s' = -rate(a) s` is stepped with the same RK4 scheme as the cohorts.
fn survival_weighted_births(model: &Model, k: usize, rate: impl Fn(f64) -> f64) -> f64 {
    let spec = model.spec();
    let grid = model.grid();
    let na = grid.age_steps();
    let delta = grid.delta;
    let fertility = |a: f64| spec.patches[k].m.profile.eval(a);
    let mut survival = 1.0;
    let mut total = 0.5 * delta * fertility(0.0);
    for i in 1..=na {
        let a0 = grid.node(i - 1);
        let (r0, rh, r1) = (rate(a0), rate(a0 + 0.5 * delta), rate(a0 + delta));
        let k1 = -r0 * survival;
        let k2 = -rh * (survival + 0.5 * delta * k1);
        let k3 = -rh * (survival + 0.5 * delta * k2);
        let k4 = -r1 * (survival + delta * k3);
        survival += delta / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        let w = if i == na { 0.5 * delta } else { delta };
        total += w * fertility(grid.node(i)) * survival;
    }
    total
}

/// Net reproductive rate of each patch in isolation (no dispersal).
pub fn isolated_rates(model: &Model) -> Result<Vec<f64>> {
    model.require(Environment::Constant)?;
    let spec = model.spec();
    Ok((0..model.n_patches())
        .map(|k| survival_weighted_births(model, k, |a| spec.patches[k].mu.profile.eval(a)))
        .collect())
}

/// Lower bound on `sigma(R0)` from cohorts that never return once they emigrate:
/// `max_k int m_k exp(-int (mu_k + |D_kk|)) da`.
pub fn dispersal_lower_bound(model: &Model) -> Result<f64> {
    model.require(Environment::Constant)?;
    let spec = model.spec();
    Ok((0..model.n_patches())
        .map(|k| {
            survival_weighted_births(model, k, |a| {
                spec.patches[k].mu.profile.eval(a) + spec.dispersion_at(a, 0.0)[(k, k)].abs()
            })
        })
        .fold(0.0, f64::max))
}

/// Periodic problems bounding an irregular one from below and above.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopePair {
    pub lower: ScenarioSpec,
    pub upper: ScenarioSpec,
    /// Sandwich slack relative to the sup norm of the upper fixed point.
    pub epsilon: f64,
}

/// Replaces every irregular modulation by one of its envelopes. Fertility,
/// regulation and immigration take the low envelope in the lower problem;
/// mortality and emigration are reversed (high envelope in the lower problem).
pub fn envelope_pair(spec: &ScenarioSpec, epsilon: f64) -> Result<EnvelopePair> {
    if spec.environment != Environment::Irregular {
        return Err(Error::Environment {
            requested: "irregular",
            actual: spec.environment.name(),
        });
    }
    if matches!(spec.dispersion.diagonal, DiagonalMode::MassConserving)
        && spec
            .dispersion
            .offdiag
            .values()
            .any(|r| !r.modulation.is_periodic())
    {
        return Err(Error::Precondition(
            "irregular dispersal needs an explicit diagonal: a mass-conserving diagonal is not monotone in the off-diagonal rates".into(),
        ));
    }
    let delta = spec.grid.delta;
    let times: Vec<f64> = (0..=spec.grid.time_steps())
        .map(|n| spec.grid.node(n))
        .collect();
    for (name, rate) in spec.named_rates() {
        if let TimeModulation::Irregular { lo, hi, .. } = &rate.modulation {
            for &t in &times {
                let (l, h, v) = (
                    lo.eval(t, delta),
                    hi.eval(t, delta),
                    rate.modulation.eval(t, delta),
                );
                if !(l <= v && v <= h) {
                    return Err(Error::Precondition(format!(
                        "{name}: sample {v} outside envelope [{l}, {h}] at t = {t}"
                    )));
                }
            }
        }
    }

    let pick = |rate: &mut Rate, favorable_high: bool, lower: bool| {
        if let TimeModulation::Irregular { lo, hi, .. } = &rate.modulation {
            let take_hi = favorable_high != lower;
            rate.modulation = if take_hi {
                (**hi).clone()
            } else {
                (**lo).clone()
            };
        }
    };
    let build = |lower: bool| {
        let mut s = spec.clone();
        s.environment = Environment::Periodic;
        for p in &mut s.patches {
            pick(&mut p.mu, false, lower);
            pick(&mut p.m, true, lower);
            pick(&mut p.l, true, lower);
        }
        for r in s.dispersion.offdiag.values_mut() {
            pick(r, true, lower);
        }
        if let DiagonalMode::Explicit(rates) = &mut s.dispersion.diagonal {
            for r in rates {
                pick(r, false, lower);
            }
        }
        s
    };
    Ok(EnvelopePair {
        lower: build(true),
        upper: build(false),
        epsilon,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SandwichReport {
    pub holds: bool,
    pub window: (f64, f64),
    /// Relative slack as requested.
    pub epsilon: f64,
    /// Absolute slack `epsilon * |rho+|_inf`.
    pub slack: f64,
    /// Largest `rho-(t) - rho(t)` over the window (positive means below the lower envelope).
    pub max_below: f64,
    /// Largest `rho(t) - rho+(t)` over the window.
    pub max_above: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnvelopeOutcome {
    /// `sigma+ <= 1`; `final_ratio = |rho(t_end)|_inf / peak`.
    Extinction { final_ratio: f64 },
    /// `sigma- > 1`.
    Sandwich(SandwichReport),
    /// `sigma- <= 1 < sigma+`: these bounds decide nothing.
    Indeterminate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeReport {
    pub sigma_minus: f64,
    pub sigma_plus: f64,
    pub rho_minus: Option<FixedPoint>,
    pub rho_plus: Option<FixedPoint>,
    pub outcome: EnvelopeOutcome,
    pub newborns: NewbornTrajectory,
    pub totals: PopulationSeries,
}

/// Bounds an irregular environment by its periodic envelopes and checks
/// the newborn sandwich over `[t_end / 2, t_end]`.
pub fn envelope_analysis(model: &Model, epsilon: f64) -> Result<EnvelopeReport> {
    let pair = envelope_pair(model.spec(), epsilon)?;
    let lower = Model::new(pair.lower)?;
    let upper = Model::new(pair.upper)?;
    let r_minus = build_r0_periodic(&lower)?;
    let r_plus = build_r0_periodic(&upper)?;
    let run = march(model, &FieldRecording::None)?;
    let newborns = run.newborns;
    let opts = BracketOptions::default();

    let (outcome, rho_minus, rho_plus) = if r_plus.sigma <= 1.0 {
        let peak = newborns.peak();
        let final_ratio = if peak > 0.0 {
            sup(newborns.last()) / peak
        } else {
            0.0
        };
        (EnvelopeOutcome::Extinction { final_ratio }, None, None)
    } else if r_minus.sigma > 1.0 {
        let fm = solve_rho_star_periodic_with(&lower, &r_minus, &opts)?;
        let fp = solve_rho_star_periodic_with(&upper, &r_plus, &opts)?;
        let slack = epsilon * fp.max_norm();
        let last = newborns.rho.len() - 1;
        let (mut max_below, mut max_above) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for n in last / 2..=last {
            for (k, &v) in newborns.rho[n].iter().enumerate() {
                max_below = max_below.max(fm.at_step(n)[k] - v);
                max_above = max_above.max(v - fp.at_step(n)[k]);
            }
        }
        let report = SandwichReport {
            holds: max_below <= slack && max_above <= slack,
            window: (newborns.times[last / 2], newborns.times[last]),
            epsilon,
            slack,
            max_below,
            max_above,
        };
        (EnvelopeOutcome::Sandwich(report), Some(fm), Some(fp))
    } else {
        (EnvelopeOutcome::Indeterminate, None, None)
    };

    Ok(EnvelopeReport {
        sigma_minus: r_minus.sigma,
        sigma_plus: r_plus.sigma,
        rho_minus,
        rho_plus,
        outcome,
        newborns,
        totals: run.totals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::RateProfile;
    use crate::testing::{logistic_patch, source_sink, two_patch};

    #[test]
    fn isolated_rates_examples() {
        let model = Model::new(two_patch(0.5, 1.0, 100.0, 0.1)).unwrap();
        let rates = isolated_rates(&model).unwrap();
        for r in rates {
            assert!((r - 2.0).abs() < 1e-4);
        }
        let model = Model::new(logistic_patch(0.5, 0.0, 100.0)).unwrap();
        assert_eq!(isolated_rates(&model).unwrap(), vec![0.0]);
    }

    #[test]
    fn bound_without_dispersal_equals_isolated_maximum() {
        let mut spec = two_patch(0.5, 1.0, 100.0, 0.0);
        spec.patches[1] = crate::testing::patch(0.4, 1.0, 100.0, 1.0);
        let model = Model::new(spec).unwrap();
        let iso = isolated_rates(&model).unwrap();
        assert_eq!(dispersal_lower_bound(&model).unwrap(), iso[0].max(iso[1]));
    }

    #[test]
    fn source_sink_bound() {
        let model = Model::new(source_sink()).unwrap();
        let bound = dispersal_lower_bound(&model).unwrap();
        assert!((bound - 1.0 / 0.6).abs() < 1e-4);
        assert!(build_r0(&model).unwrap().sigma >= bound);
    }

    #[test]
    fn zero_fertility_is_extinct() {
        let model = Model::new(logistic_patch(0.5, 0.0, 100.0)).unwrap();
        let v = classify(&model).unwrap();
        assert_eq!(v.sigma, 0.0);
        assert_eq!(v.classification, Classification::Extinction);
        assert!(v.fixed_point.is_trivial());
    }

    #[test]
    fn table_fertility_matches_fine_quadrature() {
        let mut spec = logistic_patch(0.5, 1.0, 100.0);
        spec.grid.delta = 0.005;
        spec.patches[0].m.profile = RateProfile::Table {
            ages: vec![0.0, 1.0, 4.0, 40.0],
            values: vec![0.0, 2.0, 0.5, 0.0],
        };
        spec.patches[0].mu.profile = RateProfile::Table {
            ages: vec![0.0, 2.0, 40.0],
            values: vec![0.3, 0.6, 0.6],
        };
        let model = Model::new(spec).unwrap();
        let got = isolated_rates(&model).unwrap()[0];
        // Simpson on a much finer grid, with the hazard integrated exactly
        // for the piecewise-linear mortality
        let hazard = |a: f64| {
            if a <= 2.0 {
                0.3 * a + 0.075 * a * a
            } else {
                0.9 + 0.6 * (a - 2.0)
            }
        };
        let m = |a: f64| {
            RateProfile::Table {
                ages: vec![0.0, 1.0, 4.0, 40.0],
                values: vec![0.0, 2.0, 0.5, 0.0],
            }
            .eval(a)
        };
        let steps = 400_000;
        let h = 40.0 / steps as f64;
        let want: f64 = (0..=steps)
            .map(|i| {
                let a = i as f64 * h;
                let w = if i == 0 || i == steps {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                w * m(a) * (-hazard(a)).exp()
            })
            .sum::<f64>()
            * h
            / 3.0;
        assert!(((got - want) / want).abs() < 1e-6, "{got} vs {want}");
    }

    #[test]
    fn envelopes_follow_favorable_orientation() {
        let mut spec = logistic_patch(0.5, 1.0, 100.0);
        spec.environment = Environment::Irregular;
        spec.grid.period = Some(1.0);
        let env = |lo: f64, hi: f64| TimeModulation::Irregular {
            lo: Box::new(TimeModulation::PeriodicTable {
                period: 1.0,
                values: vec![lo],
            }),
            hi: Box::new(TimeModulation::PeriodicTable {
                period: 1.0,
                values: vec![hi],
            }),
            seed: 1,
            fractions: vec![0.5; 501],
        };
        spec.patches[0].m.modulation = env(0.8, 1.2);
        spec.patches[0].mu.modulation = env(0.9, 1.1);
        let pair = envelope_pair(&spec, 0.05).unwrap();
        let at = |s: &ScenarioSpec| {
            let r = crate::scenario::eval_rates(s, 1.0, 0.3).unwrap();
            (r.m[0], r.mu[0])
        };
        let (m_lo, mu_lo) = at(&pair.lower);
        let (m_hi, mu_hi) = at(&pair.upper);
        assert!((m_lo - 0.8).abs() < 1e-12 && (m_hi - 1.2).abs() < 1e-12);
        assert!((mu_lo - 0.55).abs() < 1e-12 && (mu_hi - 0.45).abs() < 1e-12);
        assert_eq!(pair.lower.environment, Environment::Periodic);
        assert!(envelope_pair(&logistic_patch(0.5, 1.0, 100.0), 0.05).is_err());
    }
}
