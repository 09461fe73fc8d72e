//! Command-line front end.
//!
//! `agepatch <command> <scenario-file> [--out DIR] [--snapshot-times t1,t2,...]
//! [--epsilon E] [--seed S]`. Exit codes: 0 ok, 1 numerical failure,
//! 2 validation failure, 64 usage error.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::analysis::{
    classify, dispersal_lower_bound, envelope_analysis, isolated_rates, EnvelopeOutcome,
    DEFAULT_EPSILON,
};
use crate::error::Error;
use crate::renewal::{march, FieldRecording, NewbornTrajectory, PopulationField, PopulationSeries};
use crate::scenario::{load_scenario, validate_scenario, Environment, Model, Severity};
use crate::spectral::{
    build_r0, build_r0_periodic, solve_rho_star_periodic_with, solve_rho_star_with, BracketOptions,
    FixedPoint, FixedPointProfile, ReproductiveOperator,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NUMERICAL: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(
    name = "agepatch",
    version,
    about = "Age-structured multi-patch population analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a scenario and list diagnostics.
    Validate(Options),
    /// March the model; write newborn and population series.
    Simulate(Options),
    /// Spectral radius and Perron vector of the net reproductive operator.
    Spectral(Options),
    /// Positive fixed point of the nonlinear renewal map.
    FixedPoint(Options),
    /// Persistence verdict with simulation evidence.
    Classify(Options),
    /// Isolated-patch rates and the dispersal lower bound.
    Bounds(Options),
    /// Periodic envelope sandwich for an irregular environment.
    Envelope(Options),
}

#[derive(Debug, clap::Args)]
struct Options {
    scenario: PathBuf,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, value_delimiter = ',')]
    snapshot_times: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    /// Base seed for irregular rates; the i-th irregular rate uses `S + i`.
    #[arg(long)]
    seed: Option<u64>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Validate(_) => "validate",
            Command::Simulate(_) => "simulate",
            Command::Spectral(_) => "spectral",
            Command::FixedPoint(_) => "fixed-point",
            Command::Classify(_) => "classify",
            Command::Bounds(_) => "bounds",
            Command::Envelope(_) => "envelope",
        }
    }

    fn options(&self) -> &Options {
        match self {
            Command::Validate(o)
            | Command::Simulate(o)
            | Command::Spectral(o)
            | Command::FixedPoint(o)
            | Command::Classify(o)
            | Command::Bounds(o)
            | Command::Envelope(o) => o,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    ValidationFailed,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Inputs {
    pub scenario: Option<PathBuf>,
    /// Hex SHA-256 of the scenario file bytes.
    pub sha256: Option<String>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunReport {
    pub command: String,
    pub inputs: Inputs,
    pub outputs: Vec<PathBuf>,
    pub status: Status,
    pub messages: Vec<String>,
}

enum Failure {
    Validation(Vec<String>),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Validation(diags) => {
                Failure::Validation(diags.iter().map(ToString::to_string).collect())
            }
            Error::IntegrationFailure { .. }
            | Error::NonConvergence { .. }
            | Error::BracketFailure(_)
            | Error::Io(_) => Failure::Numerical(e.to_string()),
            other => Failure::Validation(vec![other.to_string()]),
        }
    }
}

/// Parses `argv` (without the program name), runs the command and returns
/// the run report with its exit code. Nothing is printed.
pub fn dispatch(argv: &[String]) -> (RunReport, i32) {
    let mut report = RunReport {
        command: argv.first().cloned().unwrap_or_default(),
        inputs: Inputs {
            scenario: None,
            sha256: None,
            seed: None,
        },
        outputs: Vec::new(),
        status: Status::ValidationFailed,
        messages: Vec::new(),
    };
    let cli = match Cli::try_parse_from(
        std::iter::once("agepatch".to_string()).chain(argv.iter().cloned()),
    ) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            report.messages.push(e.render().to_string());
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                report.status = Status::Ok;
                return (report, EXIT_OK);
            }
            return (report, EXIT_USAGE);
        }
    };
    let opts = cli.command.options();
    report.command = cli.command.name().to_string();
    report.inputs.scenario = Some(opts.scenario.clone());
    report.inputs.seed = opts.seed;

    let mut outputs = Vec::new();
    match run(&cli.command, &mut report, &mut outputs) {
        Ok(()) => {
            report.status = Status::Ok;
            report.outputs = outputs;
            (report, EXIT_OK)
        }
        Err(failure) => {
            // Drop anything already emitted so failures leave no numbers behind.
            for path in &outputs {
                let _ = std::fs::remove_file(path);
            }
            match failure {
                Failure::Validation(msgs) => {
                    report.status = Status::ValidationFailed;
                    report.messages.extend(msgs);
                    (report, EXIT_VALIDATION)
                }
                Failure::Numerical(msg) => {
                    report.status = Status::NumericalFailure;
                    report.messages.push(msg);
                    (report, EXIT_NUMERICAL)
                }
            }
        }
    }
}

fn run(
    command: &Command,
    report: &mut RunReport,
    outputs: &mut Vec<PathBuf>,
) -> Result<(), Failure> {
    let opts = command.options();
    let bytes = std::fs::read(&opts.scenario).map_err(|e| {
        Failure::Validation(vec![format!(
            "cannot read {}: {e}",
            opts.scenario.display()
        )])
    })?;
    report.inputs.sha256 = Some(hex::encode(Sha256::digest(&bytes)));
    let text = String::from_utf8(bytes)
        .map_err(|_| Failure::Validation(vec!["scenario is not valid UTF-8".into()]))?;
    let spec =
        load_scenario(&text, opts.seed).map_err(|e| Failure::Validation(vec![e.to_string()]))?;

    let diagnostics = validate_scenario(&spec);
    report
        .messages
        .extend(diagnostics.iter().map(ToString::to_string));
    if diagnostics.iter().any(|d| d.severity == Severity::Error) {
        return Err(Failure::Validation(Vec::new()));
    }
    let mut out = Emitter::new(&opts.out, outputs)?;
    if let Command::Validate(_) = command {
        let value = serde_json::to_value(&diagnostics).expect("diagnostics serialize");
        return out.json("diagnostics.json", &value);
    }

    let model = Model::new(spec)?;
    match command {
        Command::Validate(_) => unreachable!(),
        Command::Simulate(_) => {
            let recording = if opts.snapshot_times.is_empty() {
                FieldRecording::None
            } else {
                FieldRecording::Times(opts.snapshot_times.clone())
            };
            let result = march(&model, &recording)?;
            out.series(&result.newborns, &result.totals)?;
            if !opts.snapshot_times.is_empty() {
                out.snapshots(&result.field)?;
            }
            Ok(())
        }
        Command::Spectral(_) => {
            let r0 = operator(&model)?;
            let perron = match model.spec().environment {
                Environment::Constant => numbers(&r0.perron),
                _ => per_phase(&r0.perron, model.n_patches()),
            };
            out.json(
                "report.json",
                &json!({
                    "sigma": number(r0.sigma),
                    "classification": crate::analysis::Classification::from_sigma(r0.sigma),
                    "perron": perron,
                    "iterations": r0.iterations,
                }),
            )
        }
        Command::FixedPoint(_) => {
            let r0 = operator(&model)?;
            let opts = BracketOptions::default();
            let fixed = match model.spec().environment {
                Environment::Constant => solve_rho_star_with(&model, &r0, &opts)?,
                _ => solve_rho_star_periodic_with(&model, &r0, &opts)?,
            };
            out.json(
                "report.json",
                &json!({
                    "sigma": number(r0.sigma),
                    "rho_star": rho_star(&fixed),
                    "converged": fixed.converged,
                    "iterations": fixed.iterations,
                }),
            )
        }
        Command::Classify(_) => {
            let verdict = classify(&model)?;
            let bounds = match model.spec().environment {
                Environment::Constant => bounds_value(&model)?,
                _ => Value::Null,
            };
            let e = &verdict.evidence;
            out.json(
                "report.json",
                &json!({
                    "sigma": number(verdict.sigma),
                    "classification": verdict.classification,
                    "rho_star": rho_star(&verdict.fixed_point),
                    "bounds": bounds,
                    "evidence": {
                        "final_rho": numbers(&e.final_rho),
                        "peak": number(e.peak),
                        "relative_gap": number(e.relative_gap),
                        "monotone_tail": e.monotone_tail,
                    },
                }),
            )?;
            out.series(&verdict.newborns, &verdict.totals)
        }
        Command::Bounds(_) => {
            let sigma = build_r0(&model)?.sigma;
            out.json(
                "report.json",
                &json!({ "sigma": number(sigma), "bounds": bounds_value(&model)? }),
            )
        }
        Command::Envelope(_) => {
            let r = envelope_analysis(&model, opts.epsilon)?;
            let (classification, sandwich) = match &r.outcome {
                EnvelopeOutcome::Extinction { .. } => ("extinction", Value::Null),
                EnvelopeOutcome::Sandwich(s) => (
                    "persistence",
                    json!({
                        "holds": s.holds,
                        "window": [number(s.window.0), number(s.window.1)],
                        "epsilon": number(s.epsilon),
                        "slack": number(s.slack),
                        "max_below": number(s.max_below),
                        "max_above": number(s.max_above),
                    }),
                ),
                EnvelopeOutcome::Indeterminate => ("indeterminate", Value::Null),
            };
            let final_ratio = match r.outcome {
                EnvelopeOutcome::Extinction { final_ratio } => number(final_ratio),
                _ => Value::Null,
            };
            out.json(
                "report.json",
                &json!({
                    "sigma_minus": number(r.sigma_minus),
                    "sigma_plus": number(r.sigma_plus),
                    "classification": classification,
                    "rho_star": {
                        "lower": r.rho_minus.as_ref().map(rho_star),
                        "upper": r.rho_plus.as_ref().map(rho_star),
                    },
                    "sandwich": sandwich,
                    "final_ratio": final_ratio,
                }),
            )?;
            out.series(&r.newborns, &r.totals)
        }
    }
}

fn operator(model: &Model) -> Result<ReproductiveOperator, Error> {
    match model.spec().environment {
        Environment::Constant => build_r0(model),
        Environment::Periodic => build_r0_periodic(model),
        Environment::Irregular => Err(Error::Environment {
            requested: "constant or periodic",
            actual: "irregular",
        }),
    }
}

fn bounds_value(model: &Model) -> Result<Value, Error> {
    Ok(json!({
        "isolated": numbers(&isolated_rates(model)?),
        "dispersal_lower_bound": number(dispersal_lower_bound(model)?),
    }))
}

fn rho_star(fixed: &FixedPoint) -> Value {
    match &fixed.profile {
        FixedPointProfile::Stationary(v) => numbers(v),
        FixedPointProfile::Periodic(t) => Value::Array(t.rho.iter().map(|v| numbers(v)).collect()),
    }
}

fn per_phase(values: &[f64], n: usize) -> Value {
    Value::Array(values.chunks(n).map(numbers).collect())
}

/// Rounds to 12 significant digits so reports do not depend on the last bits.
fn number(x: f64) -> Value {
    if !x.is_finite() {
        return Value::Null;
    }
    let rounded: f64 = format!("{x:.11e}").parse().expect("formatted float parses");
    json!(rounded)
}

fn numbers(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| number(x)).collect())
}

/// Fixed decimal text with 12 significant digits. Magnitudes outside
/// `[1e-6, 1e16)` fall back to scientific notation.
pub fn format_number(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.11e}");
    let (mantissa, exponent) = sci.split_once('e').expect("scientific format");
    let exponent: i32 = exponent.parse().expect("integer exponent");
    if !(-6..=15).contains(&exponent) {
        return sci;
    }
    let digits: String = mantissa.chars().filter(char::is_ascii_digit).collect();
    let body = if exponent >= 0 {
        let whole = exponent as usize + 1;
        if whole >= digits.len() {
            format!("{digits}{}", "0".repeat(whole - digits.len()))
        } else {
            format!("{}.{}", &digits[..whole], &digits[whole..])
        }
    } else {
        format!("0.{}{digits}", "0".repeat((-exponent - 1) as usize))
    };
    if x < 0.0 {
        format!("-{body}")
    } else {
        body
    }
}

struct Emitter<'a> {
    dir: PathBuf,
    written: &'a mut Vec<PathBuf>,
}

impl<'a> Emitter<'a> {
    fn new(dir: &Path, written: &'a mut Vec<PathBuf>) -> Result<Self, Failure> {
        std::fs::create_dir_all(dir)
            .map_err(|e| Failure::Numerical(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Emitter {
            dir: dir.to_path_buf(),
            written,
        })
    }

    /// Writes through a temporary file in the same directory, then renames.
    fn write(&mut self, name: &str, contents: &str) -> Result<(), Failure> {
        let path = self.dir.join(name);
        let fail =
            |e: std::io::Error| Failure::Numerical(format!("cannot write {}: {e}", path.display()));
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(fail)?;
        tmp.write_all(contents.as_bytes()).map_err(fail)?;
        tmp.persist(&path).map_err(|e| fail(e.error))?;
        self.written.push(path);
        Ok(())
    }

    fn json(&mut self, name: &str, value: &Value) -> Result<(), Failure> {
        let mut text = serde_json::to_string_pretty(value).expect("json serializes");
        text.push('\n');
        self.write(name, &text)
    }

    fn series(
        &mut self,
        newborns: &NewbornTrajectory,
        totals: &PopulationSeries,
    ) -> Result<(), Failure> {
        let n = newborns.rho.first().map_or(0, Vec::len);
        let header = |prefix: &str| {
            std::iter::once("t".to_string())
                .chain((1..=n).map(|k| format!("{prefix}_{k}")))
                .collect::<Vec<_>>()
                .join(",")
        };
        write_rows(
            self,
            "newborns.csv",
            &header("rho"),
            &newborns.times,
            &newborns.rho,
        )?;
        write_rows(
            self,
            "population.csv",
            &header("N"),
            &totals.times,
            &totals.totals,
        )
    }

    fn snapshots(&mut self, field: &PopulationField) -> Result<(), Failure> {
        let n = field.n_patches();
        let header = std::iter::once("age".to_string())
            .chain((1..=n).map(|k| format!("patch_{k}")))
            .collect::<Vec<_>>()
            .join(",");
        for (ti, &t) in field.times.iter().enumerate() {
            let rows: Vec<Vec<f64>> = field.profile(ti).map(<[f64]>::to_vec).collect();
            write_rows(
                self,
                &format!("snapshot_t{t}.csv"),
                &header,
                &field.ages,
                &rows,
            )?;
        }
        Ok(())
    }
}

fn write_rows(
    out: &mut Emitter<'_>,
    name: &str,
    header: &str,
    keys: &[f64],
    rows: &[Vec<f64>],
) -> Result<(), Failure> {
    let mut text = String::from(header);
    text.push('\n');
    for (key, values) in keys.iter().zip(rows) {
        text.push_str(&format_number(*key));
        for &v in values {
            text.push(',');
            text.push_str(&format_number(v));
        }
        text.push('\n');
    }
    out.write(name, &text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_formatting() {
        assert_eq!(format_number(251.29), "251.290000000");
        assert_eq!(format_number(-0.5), "-0.500000000000");
        assert_eq!(format_number(2.0), "2.00000000000");
        assert_eq!(format_number(0.0), "0");
        assert_eq!(format_number(1.0 / 3.0e3), "0.000333333333333");
        assert_eq!(format_number(123456789012345.0), "123456789012000");
        assert_eq!(format_number(1.5e-9), "1.50000000000e-9");
        assert_eq!(format_number(120.0), "120.000000000");
    }

    #[test]
    fn rounded_json_numbers() {
        assert_eq!(number(2.000016662684604), json!(2.00001666268));
        assert_eq!(number(f64::NAN), Value::Null);
    }

    #[test]
    fn unknown_command_is_usage_error() {
        let (report, code) = dispatch(&["frobnicate".into(), "x.json".into()]);
        assert_eq!(code, EXIT_USAGE);
        assert!(report.outputs.is_empty());
        assert!(report.messages[0].contains("Usage"));
        let (_, code) = dispatch(&[]);
        assert_eq!(code, EXIT_USAGE);
    }
}
