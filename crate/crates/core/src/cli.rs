//! Command-line front end. Every JSON artifact carries the schema version,
//! the command name and the fully resolved configuration.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::benchmark::{
    default_n_values, fit_deviation, repeat_cnot, CnotRepeatConfig, DeviationSearch, RbConfig,
};
use crate::error::Error;
use crate::grape::{self, cnot_target, reference_cnot, GrapeConfig, GrapeSequence};
use crate::hamiltonians::NvParams;
use crate::noise::{fit_noise_widths, GaussianDist, LorentzianDist};
use crate::nvnv::{self, NvNvParams};
use crate::pulses::{fidelity_map, linspace, PulseFamily};

pub const SCHEMA_VERSION: u32 = 1;
pub const THREADS_ENV: &str = "SPINFORGE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "spinforge", version, about = "Noise-robust pulse design for NV-center spin qubits")]
pub struct Cli {
    /// Worker threads: a count or "auto". Falls back to SPINFORGE_THREADS.
    #[arg(long, global = true)]
    pub threads: Option<String>,
    /// Overwrite existing output files.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit δ0 and δ1 widths to Ramsey and nutation data.
    NoiseFit(NoiseFitArgs),
    /// Fidelity of a composite pulse over a (δ0, δ1) grid, as CSV.
    Map(MapArgs),
    /// Optimize the electron–nuclear CNOT.
    Grape(GrapeArgs),
    /// Single-qubit randomized benchmarking.
    Rb(RbArgs),
    /// Repeated-CNOT populations and (δA, δΩ) fitting.
    CnotRepeat(CnotRepeatArgs),
    /// Optimize a CNOT between two coupled NV centers.
    Nvnv(NvnvArgs),
}

#[derive(Debug, Args)]
pub struct Output {
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct NoiseFitArgs {
    /// CSV with columns time_us, signal.
    #[arg(long)]
    pub ramsey: PathBuf,
    /// CSV with columns time_us, signal.
    #[arg(long)]
    pub nutation: PathBuf,
    #[arg(long, default_value_t = 10.0)]
    pub omega1: f64,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct MapArgs {
    #[arg(long, default_value = "naive")]
    pub family: PulseFamily,
    /// Rotation angle in radians.
    #[arg(long, default_value_t = std::f64::consts::FRAC_PI_2)]
    pub theta: f64,
    #[arg(long, default_value_t = 10.0)]
    pub omega1: f64,
    /// Grid points per axis.
    #[arg(long, default_value_t = 101)]
    pub points: usize,
    #[arg(long, default_value_t = 0.5)]
    pub delta0_max: f64,
    #[arg(long, default_value_t = 0.05)]
    pub delta1_max: f64,
    /// Accepted for uniformity; maps are deterministic.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct GrapeArgs {
    #[arg(long)]
    pub seed: u64,
    /// Average the objective over the noise distributions.
    #[arg(long)]
    pub robust: bool,
    #[arg(long, default_value_t = grape::DEFAULT_SEGMENTS)]
    pub segments: usize,
    #[arg(long, default_value_t = grape::DEFAULT_TAU_US)]
    pub tau: f64,
    #[arg(long, default_value_t = 16)]
    pub restarts: usize,
    #[arg(long, default_value_t = 600)]
    pub max_iters: usize,
    /// NvParams JSON.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct RbArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value = "naive")]
    pub family: PulseFamily,
    /// Comma-separated sequence lengths.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32,64,128,256,512,1024")]
    pub lengths: Vec<usize>,
    /// Random sequences per length.
    #[arg(long = "n", default_value_t = 50)]
    pub n_random: usize,
    /// Noise draws per sequence.
    #[arg(long, default_value_t = 100)]
    pub repetitions: usize,
    #[arg(long, default_value_t = 0.0)]
    pub d_if: f64,
    #[arg(long, default_value_t = 10.0)]
    pub omega1: f64,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct CnotRepeatArgs {
    /// Sequence JSON (bare or a grape output); defaults to the built-in reference.
    #[arg(long)]
    pub seq: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    pub delta_a: f64,
    #[arg(long, default_value_t = 0.0)]
    pub delta_omega: f64,
    /// Fit (δA, δΩ) to the data, or to the simulated curve without --data.
    #[arg(long)]
    pub fit: bool,
    /// CSV with columns n, p01.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct NvnvArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub robust: bool,
    #[arg(long, default_value_t = nvnv::DEFAULT_SEGMENTS)]
    pub segments: usize,
    #[arg(long, default_value_t = nvnv::DEFAULT_TAU_US)]
    pub tau: f64,
    #[arg(long, default_value_t = 4)]
    pub restarts: usize,
    #[arg(long, default_value_t = 600)]
    pub max_iters: usize,
    /// Also integrate the lab-frame Hamiltonian and report the agreement.
    #[arg(long)]
    pub lab_check: bool,
    /// NvNvParams JSON.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[command(flatten)]
    pub output: Output,
}

/// Failure of a CLI run with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            kind: "config",
            message: message.into(),
        }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        Self {
            code: 1,
            kind: "io",
            message: format!("{}: {e}", path.display()),
        }
    }

    pub fn to_json(&self) -> String {
        json!({ "error": self.kind, "message": self.message, "exit_code": self.code }).to_string()
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let (code, kind) = match &e {
            Error::FitDiverged(_) => (3, "fit_diverged"),
            Error::Stalled { .. } => (3, "stalled"),
            _ => (2, "config"),
        };
        debug_assert_eq!(code == 3, e.is_numerical());
        Self {
            code,
            kind,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn resolve_threads(flag: Option<&str>) -> CliResult<usize> {
    let env = std::env::var(THREADS_ENV).ok();
    match flag.or(env.as_deref()) {
        None | Some("auto") => Ok(0),
        Some(s) => s
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::config(format!("threads must be a positive count or \"auto\", got {s:?}"))),
    }
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    serde_json::from_str(&read(path)?).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn check_writable(path: &Path, force: bool) -> CliResult<()> {
    if path.exists() && !force {
        return Err(CliError::config(format!(
            "{} exists; pass --force to overwrite",
            path.display()
        )));
    }
    Ok(())
}

fn write(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn envelope(command: &str, config: impl Serialize, result: impl Serialize) -> String {
    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "config": config,
        "result": result,
    });
    let mut s = serde_json::to_string_pretty(&doc).expect("artifact serializes");
    s.push('\n');
    s
}

/// Two-column numeric CSV with a header row.
fn read_columns(path: &Path) -> CliResult<(Vec<f64>, Vec<f64>)> {
    let text = read(path)?;
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let num = |i: usize| -> CliResult<f64> {
            rec.get(i)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| CliError::config(format!("{}: bad row {:?}", path.display(), rec)))
        };
        a.push(num(0)?);
        b.push(num(1)?);
    }
    Ok((a, b))
}

/// Sequence from a bare sequence file or from a grape artifact.
fn load_sequence(path: &Path) -> CliResult<GrapeSequence> {
    let v: serde_json::Value = load_json(path)?;
    let inner = v
        .get("result")
        .and_then(|r| r.get("sequence"))
        .cloned()
        .unwrap_or(v);
    let seq: GrapeSequence = serde_json::from_value(inner)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    seq.validate(f64::INFINITY)?;
    Ok(seq)
}

pub fn run(cli: Cli) -> CliResult<()> {
    let threads = resolve_threads(cli.threads.as_deref())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::config(e.to_string()))?;
    pool.install(|| dispatch(cli.command, cli.force))
}

fn dispatch(command: Command, force: bool) -> CliResult<()> {
    match command {
        Command::NoiseFit(a) => {
            check_writable(&a.output.out, force)?;
            let (rt, r) = read_columns(&a.ramsey)?;
            let (nt, n) = read_columns(&a.nutation)?;
            let fit = fit_noise_widths(&rt, &r, &nt, &n, a.omega1)?;
            let config = json!({
                "ramsey": a.ramsey, "nutation": a.nutation, "omega1_mhz": a.omega1,
            });
            write(&a.output.out, &envelope("noise-fit", config, fit))
        }
        Command::Map(a) => {
            check_writable(&a.output.out, force)?;
            if a.points < 2 {
                return Err(CliError::config("points must be ≥ 2"));
            }
            let d0 = linspace(-a.delta0_max, a.delta0_max, a.points);
            let d1 = linspace(-a.delta1_max, a.delta1_max, a.points);
            let map = fidelity_map(a.family, a.theta, a.omega1, &d0, &d1)?;
            let mut w = csv::Writer::from_writer(Vec::new());
            let csv_err = |e: csv::Error| CliError::io(&a.output.out, e.into());
            w.write_record(["delta0", "delta1_rel", "fidelity"]).map_err(csv_err)?;
            for (i, x) in d0.iter().enumerate() {
                for (j, y) in d1.iter().enumerate() {
                    w.write_record([x.to_string(), y.to_string(), map.at(i, j).to_string()])
                        .map_err(csv_err)?;
                }
            }
            let bytes = w.into_inner().map_err(|e| CliError::io(&a.output.out, e.into_error()))?;
            write(&a.output.out, &String::from_utf8(bytes).expect("csv is utf-8"))
        }
        Command::Grape(a) => {
            check_writable(&a.output.out, force)?;
            let params: NvParams = match &a.params {
                Some(p) => load_json(p)?,
                None => NvParams::default(),
            };
            let (g, l) = (GaussianDist::measured(), LorentzianDist::measured_relative());
            let mut config = GrapeConfig {
                n_segments: a.segments,
                tau: a.tau,
                restarts: a.restarts,
                max_iters: a.max_iters,
                seed: a.seed,
                ..GrapeConfig::default()
            };
            if a.robust {
                config = config.robust(&g, &l);
            }
            let result = grape::optimize(&config, &params)?;
            let report = grape::report(&result.sequence, &params, &cnot_target(), &g, &l);
            let out = json!({
                "sequence": result.sequence,
                "objective": result.objective,
                "best_restart": result.best_restart,
                "restart_objectives": result.restart_objectives,
                "report": report,
            });
            write(&a.output.out, &envelope("grape", json!({ "grape": config, "params": params }), out))
        }
        Command::Rb(a) => {
            check_writable(&a.output.out, force)?;
            let config = RbConfig {
                lengths: a.lengths,
                n_random: a.n_random,
                repetitions: a.repetitions,
                family: a.family,
                omega1: a.omega1,
                d_if: a.d_if,
                seed: a.seed,
                ..RbConfig::default()
            };
            let record = crate::benchmark::run_rb(&config)?;
            write(&a.output.out, &envelope("rb", &config, record))
        }
        Command::CnotRepeat(a) => {
            check_writable(&a.output.out, force)?;
            let params: NvParams = match &a.params {
                Some(p) => load_json(p)?,
                None => NvParams::default(),
            };
            let sequence = match &a.seq {
                Some(p) => load_sequence(p)?,
                None => reference_cnot(),
            };
            let (g, l) = (GaussianDist::measured(), LorentzianDist::measured_relative());
            let mut config = CnotRepeatConfig {
                delta_a: a.delta_a,
                delta_omega: a.delta_omega,
                ..CnotRepeatConfig::new(sequence, &g, &l)
            };
            let (n_values, p01, source) = match &a.data {
                Some(path) => {
                    let (n, p) = read_columns(path)?;
                    let n: Vec<usize> = n.iter().map(|&v| v.round() as usize).collect();
                    (n, p, "data")
                }
                None => {
                    config.n_values = default_n_values();
                    let p = repeat_cnot(&config, &params)?;
                    (config.n_values.clone(), p, "simulation")
                }
            };
            config.n_values = n_values.clone();
            let fit = if a.fit {
                Some(fit_deviation(&n_values, &p01, &config, &params, (&g, &l), &DeviationSearch::default())?)
            } else {
                None
            };
            let out = json!({ "source": source, "n": n_values, "p01": p01, "fit": fit });
            let cfg = json!({
                "delta_a_mhz": config.delta_a,
                "delta_omega_mhz": config.delta_omega,
                "sequence": config.sequence,
                "delta0_nodes": config.delta0_grid.len(),
                "delta1_nodes": config.delta1_grid.len(),
                "params": params,
                "data": a.data,
            });
            write(&a.output.out, &envelope("cnot-repeat", cfg, out))
        }
        Command::Nvnv(a) => {
            check_writable(&a.output.out, force)?;
            let params: NvNvParams = match &a.params {
                Some(p) => load_json(p)?,
                None => NvNvParams::default(),
            };
            params.validate()?;
            for w in params.warnings() {
                eprintln!("{}", json!({ "warning": w }));
            }
            let config = GrapeConfig {
                n_segments: a.segments,
                tau: a.tau,
                restarts: a.restarts,
                max_iters: a.max_iters,
                seed: a.seed,
                ..nvnv::nvnv_config(&params, a.robust)
            };
            let result = nvnv::optimize_nvnv_cnot(&config, &params)?;
            let lab = a
                .lab_check
                .then(|| nvnv::rwa_agreement(&result.sequence, &params, 200.0));
            let out = json!({ "optimization": result, "lab_frame_agreement": lab });
            write(&a.output.out, &envelope("nvnv", json!({ "grape": config, "params": params }), out))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("spinforge").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn missing_params_file_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("g.json");
        let cli = parse(&[
            "grape", "--seed", "1", "--params", "/nonexistent.json", "--out", out.to_str().unwrap(),
        ]);
        let e = run(cli).unwrap_err();
        assert_eq!(e.code, 2);
        let v: serde_json::Value = serde_json::from_str(&e.to_json()).unwrap();
        assert_eq!(v["error"], "config");
    }

    #[test]
    fn refuses_to_overwrite_without_force() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("m.csv");
        fs::write(&out, "x").unwrap();
        let args = ["map", "--points", "3", "--out", out.to_str().unwrap()];
        assert_eq!(run(parse(&args)).unwrap_err().code, 2);
        let mut forced = args.to_vec();
        forced.push("--force");
        run(parse(&forced)).unwrap();
        let text = fs::read_to_string(&out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("delta0,delta1_rel,fidelity"));
        assert_eq!(lines.count(), 9);
    }

    #[test]
    fn numerical_errors_exit_three() {
        let e: CliError = Error::Stalled { best: 0.5, threshold: 0.9 }.into();
        assert_eq!(e.code, 3);
        let e: CliError = Error::FitDiverged("flat".into()).into();
        assert_eq!(e.code, 3);
        let e: CliError = Error::Config("bad".into()).into();
        assert_eq!(e.code, 2);
    }

    #[test]
    fn thread_flag_parsing() {
        assert_eq!(resolve_threads(Some("auto")).unwrap(), 0);
        assert_eq!(resolve_threads(Some("3")).unwrap(), 3);
        assert_eq!(resolve_threads(Some("0")).unwrap_err().code, 2);
    }

    #[test]
    fn flat_noise_data_exits_three() {
        let dir = tempfile::tempdir().unwrap();
        let flat = dir.path().join("flat.csv");
        fs::write(&flat, "time_us,signal\n0,0.5\n1,0.5\n2,0.5\n3,0.5\n").unwrap();
        let out = dir.path().join("fit.json");
        let p = flat.to_str().unwrap();
        let e = run(parse(&["noise-fit", "--ramsey", p, "--nutation", p, "--out", out.to_str().unwrap()]))
            .unwrap_err();
        assert_eq!(e.code, 3, "{}", e.message);
    }

    #[test]
    fn rb_artifact_has_table_fields() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("rb.json");
        let cli = parse(&[
            "rb", "--seed", "3", "--family", "bb1inc", "--lengths", "1,4,16", "--n", "3",
            "--repetitions", "5", "--out", out.to_str().unwrap(),
        ]);
        run(cli).unwrap();
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
        assert_eq!(v["schema_version"], SCHEMA_VERSION);
        assert_eq!(v["config"]["seed"], 3);
        for key in ["family", "F_a", "eps_g", "d_if_fit"] {
            assert!(!v["result"][key].is_null(), "{key}");
        }
    }

    #[test]
    fn grape_artifact_sequence_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("g.json");
        let cli = parse(&[
            "grape", "--seed", "0", "--restarts", "1", "--max-iters", "150", "--out",
            out.to_str().unwrap(),
        ]);
        run(cli).unwrap();
        let seq = load_sequence(&out).unwrap();
        assert_eq!(seq.n_segments(), grape::DEFAULT_SEGMENTS);
        let bare = dir.path().join("seq.json");
        fs::write(&bare, seq.to_json()).unwrap();
        assert_eq!(load_sequence(&bare).unwrap(), seq);
    }
}
