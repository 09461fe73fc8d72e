//! Acceptance suite: one line per criterion, non-zero exit on any failure.

mod common;

use std::path::Path;

use agepatch::analysis::{
    classify, dispersal_lower_bound, envelope_analysis, Classification, EnvelopeOutcome,
};
use agepatch::cli::dispatch;
use agepatch::renewal::{march, FieldRecording};
use agepatch::scenario::{Environment, ScenarioSpec};
use agepatch::spectral::{apply_kbar, build_r0, build_r0_periodic, solve_rho_star};
use agepatch::testing::{irregular_patch, logistic_patch, source_sink, two_patch, wave};
use agepatch::Model;
use common::{random_constant, sup};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// The randomized constant suite: 24 scenarios with 1 to 4 patches, kept
/// away from the critical value so the fixed-point iteration stays fast.
fn random_suite(t_end: f64) -> Vec<(ScenarioSpec, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut suite = Vec::new();
    while suite.len() < 24 {
        let n = 1 + suite.len() % 4;
        let spec = random_constant(&mut rng, n, t_end);
        let sigma = build_r0(&Model::new(spec.clone()).unwrap()).unwrap().sigma;
        if (sigma - 1.0).abs() > 0.03 {
            suite.push((spec, sigma));
        }
    }
    suite
}

fn scalar_root(target: f64) -> f64 {
    // ln(1 + x) / x decreases from 1 towards 0
    let (mut lo, mut hi) = (1e-12f64, 1e6f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (1.0 + mid).ln() / mid > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn linear_oracle() -> Outcome {
    let exact = 2.0 * (1.0 - (-20.0f64).exp());
    let err = |delta: f64| {
        let mut spec = logistic_patch(0.5, 1.0, 100.0);
        spec.grid.delta = delta;
        (build_r0(&Model::new(spec).unwrap()).unwrap().sigma - exact).abs()
    };
    let (coarse, fine) = (err(0.02), err(0.01));
    let rel = coarse / exact;
    let ratio = coarse / fine;
    outcome(
        rel <= 1e-4 && (3.5..=4.5).contains(&ratio),
        format!("relative error {rel:.2e} at delta 0.02, halving ratio {ratio:.3}"),
    )
}

fn nonlinear_oracle() -> Outcome {
    let (mu, m, l) = (0.5, 1.0, 100.0);
    let want = l * scalar_root(mu / m);
    let fixed = solve_rho_star(&Model::new(logistic_patch(mu, m, l)).unwrap()).unwrap();
    let got = fixed.at_step(0)[0];
    let rel = (got - want).abs() / want;
    outcome(
        rel <= 1e-3,
        format!("rho* {got:.6} vs root {want:.6}, relative error {rel:.2e}"),
    )
}

fn dichotomy() -> Outcome {
    let suite = random_suite(20.0);
    let mut bad = Vec::new();
    let (mut extinct, mut persistent) = (0, 0);
    for (i, (spec, sigma)) in suite.iter().enumerate() {
        let fixed = solve_rho_star(&Model::new(spec.clone()).unwrap()).unwrap();
        let v = fixed.at_step(0);
        let ok = if *sigma <= 1.0 {
            extinct += 1;
            v.iter().all(|&x| x == 0.0)
        } else {
            persistent += 1;
            v.iter().all(|&x| x > 0.0)
        };
        if !ok {
            bad.push(format!("#{i} sigma {sigma:.4} rho* {v:?}"));
        }
    }
    outcome(
        bad.is_empty(),
        format!(
            "{} scenarios ({extinct} with sigma <= 1, {persistent} above) {}",
            suite.len(),
            bad.join("; ")
        ),
    )
}

fn convergence() -> Outcome {
    let run = |m: f64| {
        let mut spec = logistic_patch(0.5, m, 100.0);
        spec.grid.t_end = 120.0;
        classify(&Model::new(spec).unwrap()).unwrap()
    };
    let up = run(1.0);
    let down = run(0.25);
    let gap = up.evidence.relative_gap;
    let ratio = sup(down.newborns.last()) / down.newborns.peak();
    let pass = up.classification == Classification::Persistence
        && gap <= 0.01
        && down.classification == Classification::Extinction
        && ratio <= 1e-3
        && up.evidence.monotone_tail
        && down.evidence.monotone_tail;
    outcome(
        pass,
        format!(
            "sigma 2: gap {gap:.2e} (tail monotone {}); sigma 0.5: final/peak {ratio:.2e} (tail monotone {})",
            up.evidence.monotone_tail, down.evidence.monotone_tail
        ),
    )
}

fn positivity() -> Outcome {
    let mut specs: Vec<ScenarioSpec> = random_suite(20.0).into_iter().map(|(s, _)| s).collect();
    specs.extend((0..3).map(|seed| irregular_patch(0.9, 1.1, seed, 20.0)));
    let mut worst = f64::INFINITY;
    let mut field_min = f64::INFINITY;
    let mut strict = true;
    for spec in &specs {
        let out = march(&Model::new(spec.clone()).unwrap(), &FieldRecording::All).unwrap();
        worst = worst.min(out.min_unclamped);
        field_min = field_min.min(out.field.min_value());
        strict &= out.newborns.rho[1..].iter().flatten().all(|&v| v > 0.0);
    }
    outcome(
        worst >= -1e-12 && field_min >= 0.0 && strict,
        format!(
            "{} scenarios; most negative unclamped value {worst:.2e}, field minimum {field_min:.2e}, rho > 0 after t = delta: {strict}",
            specs.len()
        ),
    )
}

fn blow_up() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let spec = random_constant(&mut rng, 3, 1.0);
    let model = Model::new(spec).unwrap();
    let r0 = build_r0(&model).unwrap().matrix;
    let mut pass = true;
    let mut worst = [0.0f64; 3];
    for _ in 0..5 {
        let rho: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..1.0)).collect();
        let linear: Vec<f64> = (0..3)
            .map(|k| (0..3).map(|j| r0[(k, j)] * rho[j]).sum())
            .collect();
        for (slot, eps) in [1e-2, 1e-3, 1e-4].into_iter().enumerate() {
            let scaled: Vec<f64> = rho.iter().map(|x| eps * x).collect();
            let k = apply_kbar(&model, &scaled).unwrap();
            let diff: Vec<f64> = k.iter().zip(&linear).map(|(a, b)| a / eps - b).collect();
            let rel = sup(&diff) / sup(&linear);
            worst[slot] = worst[slot].max(rel);
            pass &= rel <= 1e-2 * (eps / 1e-2);
        }
    }
    outcome(
        pass,
        format!(
            "worst relative defects {:.2e}, {:.2e}, {:.2e} for eps 1e-2, 1e-3, 1e-4",
            worst[0], worst[1], worst[2]
        ),
    )
}

fn symmetry() -> Outcome {
    let mut sigmas = Vec::new();
    let mut asym = 0.0f64;
    for d in [0.0, 0.1, 1.0] {
        let model = Model::new(two_patch(0.5, 1.0, 100.0, d)).unwrap();
        sigmas.push(build_r0(&model).unwrap().sigma);
        let fixed = solve_rho_star(&model).unwrap();
        let v = fixed.at_step(0);
        asym = asym.max((v[0] - v[1]).abs());
    }
    let spread = sigmas.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - sigmas.iter().cloned().fold(f64::INFINITY, f64::min);
    let oracle = (sigmas[0] - 2.0).abs() / 2.0;
    outcome(
        spread <= 1e-6 && oracle <= 1e-4 && asym <= 1e-8,
        format!("sigma spread over d {spread:.2e}, distance to m/mu {oracle:.2e}, rho* asymmetry {asym:.2e}"),
    )
}

fn bound_soundness() -> Outcome {
    let mut margin = f64::INFINITY;
    for (spec, sigma) in random_suite(1.0) {
        let bound = dispersal_lower_bound(&Model::new(spec).unwrap()).unwrap();
        margin = margin.min(sigma - bound);
    }
    let mut spec = source_sink();
    spec.grid.t_end = 120.0;
    let model = Model::new(spec).unwrap();
    let bound = dispersal_lower_bound(&model).unwrap();
    let verdict = classify(&model).unwrap();
    let sink = verdict.newborns.last()[1];
    let pass = margin >= 0.0
        && (bound - 5.0 / 3.0).abs() < 1e-3
        && verdict.classification == Classification::Persistence
        && sink > 0.0;
    outcome(
        pass,
        format!("smallest sigma - bound {margin:.3e}; source-sink bound {bound:.4}, sigma {:.4}, sink rho(t_end) {sink:.4}", verdict.sigma),
    )
}

fn periodic_consistency() -> Outcome {
    let mut spec = two_patch(0.5, 1.0, 100.0, 0.1);
    spec.grid.period = Some(1.0);
    let model = Model::new(spec).unwrap();
    let constant = build_r0(&model).unwrap().sigma;
    let periodic = build_r0_periodic(&model).unwrap().sigma;
    let flat = (constant - periodic).abs();

    let mut spec = two_patch(0.5, 1.0, 100.0, 0.1);
    spec.grid.period = Some(1.0);
    spec.environment = Environment::Periodic;
    spec.patches[1].m.modulation = wave(1.0, 0.5, 1.0);
    spec.patches[0].mu.modulation = wave(1.0, 0.3, 1.0);
    let op = build_r0_periodic(&Model::new(spec).unwrap()).unwrap();
    let dense = op
        .matrix
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    let seasonal = (op.sigma - dense).abs();
    outcome(
        flat <= 1e-8 && seasonal <= 1e-8,
        format!(
            "constant as periodic differs by {flat:.2e}; seasonal power {:.10} vs dense {dense:.10} ({}x{})",
            op.sigma,
            op.matrix.nrows(),
            op.matrix.ncols()
        ),
    )
}

fn sandwich() -> Outcome {
    let mut pass = true;
    let mut notes = Vec::new();
    for seed in 1..=5 {
        let r = envelope_analysis(
            &Model::new(irregular_patch(0.9, 1.1, seed, 120.0)).unwrap(),
            0.05,
        )
        .unwrap();
        match r.outcome {
            EnvelopeOutcome::Sandwich(s) => {
                pass &= s.holds;
                notes.push(format!(
                    "{:.1}/{:.1} vs {:.1}",
                    s.max_below, s.max_above, s.slack
                ));
            }
            _ => {
                pass = false;
                notes.push("no sandwich".into());
            }
        }
    }
    let r = envelope_analysis(
        &Model::new(irregular_patch(0.3, 0.4, 9, 120.0)).unwrap(),
        0.05,
    )
    .unwrap();
    let ratio = match r.outcome {
        EnvelopeOutcome::Extinction { final_ratio } => final_ratio,
        _ => f64::INFINITY,
    };
    pass &= (r.sigma_plus - 0.8).abs() < 1e-3 && ratio <= 1e-3;
    outcome(
        pass,
        format!(
            "excess below/above vs slack: {}; sigma+ {:.4}, final/peak {ratio:.2e}",
            notes.join(", "),
            r.sigma_plus
        ),
    )
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = tmp.path().join("irregular.json");
    std::fs::write(&scenario, irregular_patch(0.9, 1.1, 5, 20.0).to_json()).unwrap();
    let scenario = scenario.to_str().unwrap();
    let mut same = true;
    let mut files = 0;
    for command in ["simulate", "envelope"] {
        let mut runs = Vec::new();
        for run in ["a", "b"] {
            let out = tmp.path().join(format!("{command}-{run}"));
            let argv: Vec<String> = [
                command,
                scenario,
                "--out",
                out.to_str().unwrap(),
                "--seed",
                "77",
                "--snapshot-times",
                "10",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect();
            let (report, code) = dispatch(&argv);
            same &= code == 0;
            runs.push(read_dir(&out, &report.outputs));
        }
        files += runs[0].len();
        same &= runs[0] == runs[1];
    }
    outcome(same, format!("{files} files compared byte for byte"))
}

fn read_dir(dir: &Path, outputs: &[std::path::PathBuf]) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = outputs
        .iter()
        .map(|p| {
            let name = p.strip_prefix(dir).unwrap().display().to_string();
            (name, std::fs::read(p).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("linear one-patch oracle", linear_oracle),
        ("nonlinear one-patch oracle", nonlinear_oracle),
        ("extinction/persistence dichotomy", dichotomy),
        ("convergence to the fixed point", convergence),
        ("positivity", positivity),
        ("blow-up identity", blow_up),
        ("symmetric patches", symmetry),
        ("dispersal bound soundness", bound_soundness),
        ("periodic consistency", periodic_consistency),
        ("envelope sandwich", sandwich),
        ("determinism", determinism),
    ];
    let results: Vec<Outcome> = std::thread::scope(|scope| {
        let handles: Vec<_> = criteria
            .iter()
            .map(|&(_, check)| scope.spawn(check))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| outcome(false, "panicked")))
            .collect()
    });
    let mut failures = 0;
    for (i, ((name, _), result)) in criteria.iter().zip(&results).enumerate() {
        let tag = if result.pass { "PASS" } else { "FAIL" };
        println!("criterion {:>2} {tag}: {name}: {}", i + 1, result.detail);
        failures += usize::from(!result.pass);
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failures,
        criteria.len()
    );
    if failures > 0 {
        std::process::exit(1);
    }
}
