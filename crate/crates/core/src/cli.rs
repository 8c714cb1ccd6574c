//! Command-line front end: case ingestion, study selection, training
//! orchestration and artifact output.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::domain::{RigGeometry, SampleCounts};
use crate::error::{Error, Result};
use crate::network::NetworkEnsemble;
use crate::oracle::{fd_probe, fd_slab_check, fd_solve, write_fd_csv};
use crate::postprocess::{temperature_field, write_field_csv, write_summary_csv, CaseConfig, CaseReport, ZERO_CELSIUS};
use crate::training::{multi_trial, write_history_csv, RigRunSpec, RigTrial, Schedule};
use crate::validation::{
    run_convergence_probe, run_intro1d, run_toy_h_sweep, write_convergence_csv, write_toy_csv, Intro1dSpec, StudyId,
    ToySpec,
};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const ENV_PREFIX: &str = "HEATSINK_";

pub const BUNDLED_CASES: [(&str, &str); 6] = [
    ("A13_4", include_str!("../data/cases/A13_4.json")),
    ("A12_2", include_str!("../data/cases/A12_2.json")),
    ("A13_7", include_str!("../data/cases/A13_7.json")),
    ("A11_1", include_str!("../data/cases/A11_1.json")),
    ("A14_2", include_str!("../data/cases/A14_2.json")),
    ("A13_3", include_str!("../data/cases/A13_3.json")),
];

/// Reads a case file, or a bundled case when `spec` is one of the bundled ids.
pub fn parse_case_file(spec: &str) -> Result<CaseConfig> {
    if let Some((_, text)) = BUNDLED_CASES.iter().find(|(id, _)| *id == spec) {
        return CaseConfig::from_json_str(text);
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(Error::Config(format!(
            "case {spec:?} is neither a bundled case ({}) nor an existing file",
            BUNDLED_CASES.map(|c| c.0).join(", ")
        )));
    }
    CaseConfig::from_json_str(&fs::read_to_string(path)?)
}

#[derive(Debug, Parser)]
#[command(name = "heatsink", version, about = "Heat transfer coefficient and coolant velocity from multilayer PINNs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Runs a validation study with a known answer.
    Validate(ValidateArgs),
    /// Trains one case over several seeds and reports h and v.
    TrainCase(TrainArgs),
    /// Trains several cases and writes one summary table.
    Sweep(SweepArgs),
    /// Solves the rig with the finite-volume reference and checks it.
    FdCheck(FdArgs),
    /// Trains a case without and with probe data and pairs the results.
    CompareModes(TrainArgs),
    /// Re-executes a manifest written by an earlier run.
    Run(RunArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long, env = "HEATSINK_OUT", default_value = "out")]
    pub out: PathBuf,
    #[arg(long, env = "HEATSINK_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Overrides the epoch budget of the chosen study or case.
    #[arg(long, env = "HEATSINK_EPOCHS")]
    pub epochs: Option<usize>,
    /// Zero wall times in logs so reruns are bit-identical.
    #[arg(long, env = "HEATSINK_DETERMINISTIC")]
    pub deterministic: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    /// intro1d, toy_h_sweep, convergence_probe or all.
    #[arg(long, env = "HEATSINK_STUDY", default_value = "all")]
    pub study: String,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct CaseArgs {
    #[arg(long, env = "HEATSINK_GEOMETRY")]
    pub geometry: Option<PathBuf>,
    #[arg(long, env = "HEATSINK_TRIALS", default_value_t = 3)]
    pub trials: usize,
    #[arg(long, env = "HEATSINK_SCHEDULE", default_value = "joint")]
    pub schedule: String,
    #[arg(long, overrides_with = "no_probes")]
    pub with_probes: bool,
    #[arg(long, overrides_with = "with_probes")]
    pub no_probes: bool,
    /// Divides the full-size collocation counts.
    #[arg(long, env = "HEATSINK_REDUCE", default_value_t = 4)]
    pub reduce: usize,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Bundled case id or path to a case file.
    #[arg(long, env = "HEATSINK_CASE", default_value = "A13_4")]
    pub case: String,
    #[command(flatten)]
    pub case_args: CaseArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// Comma-separated case ids or paths; all bundled cases by default.
    #[arg(long, env = "HEATSINK_CASES", value_delimiter = ',')]
    pub cases: Vec<String>,
    #[command(flatten)]
    pub case_args: CaseArgs,
}

#[derive(Debug, Clone, Args)]
pub struct FdArgs {
    #[arg(long, env = "HEATSINK_CASE", default_value = "A13_4")]
    pub case: String,
    #[arg(long, env = "HEATSINK_GEOMETRY")]
    pub geometry: Option<PathBuf>,
    /// Heat transfer coefficient on the pipe surfaces, W/m²K.
    #[arg(long, default_value_t = 350.0)]
    pub h: f64,
    #[arg(long, default_value_t = 512)]
    pub nx: usize,
    #[arg(long, default_value_t = 256)]
    pub ny: usize,
    #[arg(long, env = "HEATSINK_OUT", default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, env = "HEATSINK_OUT", default_value = "out")]
    pub out: PathBuf,
}

/// Everything that determines a run's artifacts. The output directory is
/// deliberately absent so that reruns elsewhere produce identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub code_version: String,
    pub command: String,
    #[serde(default)]
    pub study: Option<String>,
    #[serde(default)]
    pub cases: Vec<String>,
    #[serde(default)]
    pub geometry: Option<PathBuf>,
    pub seed: u64,
    #[serde(default)]
    pub trials: usize,
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub schedule: Option<Schedule>,
    #[serde(default)]
    pub with_probes: bool,
    #[serde(default = "default_reduce")]
    pub reduce: usize,
    pub deterministic: bool,
    #[serde(default)]
    pub fd: Option<FdParams>,
}

fn default_reduce() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdParams {
    pub h: f64,
    pub nx: usize,
    pub ny: usize,
}

impl RunManifest {
    fn base(command: &str, common: &CommonArgs) -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA_VERSION,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            study: None,
            cases: Vec::new(),
            geometry: None,
            seed: common.seed,
            trials: 0,
            epochs: common.epochs,
            schedule: None,
            with_probes: false,
            reduce: default_reduce(),
            deterministic: common.deterministic,
            fd: None,
        }
    }

    fn with_case_args(mut self, a: &CaseArgs) -> Result<Self> {
        self.geometry = a.geometry.clone();
        self.trials = a.trials;
        self.schedule = Some(a.schedule.parse()?);
        // probes are on unless explicitly switched off
        self.with_probes = !a.no_probes || a.with_probes;
        self.reduce = a.reduce;
        Ok(self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: RunManifest = serde_json::from_str(&fs::read_to_string(path)?)?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::schema(
                "schema_version",
                format!("expected {MANIFEST_SCHEMA_VERSION}, got {}", m.schema_version),
            ));
        }
        Ok(m)
    }
}

impl Cli {
    /// Resolves flags into a manifest and the output directory.
    pub fn into_manifest(self) -> Result<(RunManifest, PathBuf)> {
        Ok(match self.command {
            Command::Validate(a) => {
                let mut m = RunManifest::base("validate", &a.common);
                m.study = Some(a.study.clone());
                (m, a.common.out)
            }
            Command::TrainCase(a) => {
                let mut m = RunManifest::base("train-case", &a.case_args.common).with_case_args(&a.case_args)?;
                m.cases = vec![a.case];
                (m, a.case_args.common.out)
            }
            Command::CompareModes(a) => {
                let mut m = RunManifest::base("compare-modes", &a.case_args.common).with_case_args(&a.case_args)?;
                m.cases = vec![a.case];
                (m, a.case_args.common.out)
            }
            Command::Sweep(a) => {
                let mut m = RunManifest::base("sweep", &a.case_args.common).with_case_args(&a.case_args)?;
                m.cases = if a.cases.is_empty() {
                    BUNDLED_CASES.iter().map(|c| c.0.to_string()).collect()
                } else {
                    a.cases
                };
                (m, a.case_args.common.out)
            }
            Command::FdCheck(a) => {
                let common = CommonArgs {
                    out: a.out.clone(),
                    seed: 0,
                    epochs: None,
                    deterministic: true,
                };
                let mut m = RunManifest::base("fd-check", &common);
                m.cases = vec![a.case];
                m.geometry = a.geometry;
                m.fd = Some(FdParams { h: a.h, nx: a.nx, ny: a.ny });
                (m, a.out)
            }
            Command::Run(a) => (RunManifest::load(&a.manifest)?, a.out),
        })
    }
}

/// Machine-readable record written next to the artifacts on failure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub schema_version: u32,
    pub kind: String,
    pub message: String,
}

fn write(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(dir.join(name), contents)?;
    Ok(())
}

fn write_csv_file(dir: &Path, name: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    write(dir, name, buf)
}

fn geometry(m: &RunManifest) -> Result<RigGeometry> {
    match &m.geometry {
        Some(p) => RigGeometry::load(p),
        None => Ok(RigGeometry::default()),
    }
}

fn rig_spec(m: &RunManifest, case: CaseConfig, geom: RigGeometry, with_probes: bool) -> Result<RigRunSpec> {
    let mut spec = RigRunSpec::new(case, geom, with_probes);
    spec.counts = SampleCounts::default().reduced(m.reduce);
    spec.train.seed = m.seed;
    if let Some(s) = m.schedule {
        spec.train.schedule = s;
    }
    if let Some(e) = m.epochs {
        let old = spec.train.max_epochs.max(1) as f64;
        let rescale = |n: usize| (n as f64 * e as f64 / old).round() as usize;
        spec.train.h_warmup_epochs = rescale(spec.train.h_warmup_epochs);
        spec.train.h_freeze_epoch = spec.train.h_freeze_epoch.map(|f| rescale(f).max(spec.train.h_warmup_epochs + 1));
        spec.train.max_epochs = e;
    }
    spec.train.validate()?;
    Ok(spec)
}

fn checkpoint_json(ens: &NetworkEnsemble) -> Result<String> {
    let nets: Vec<_> = ens.nets.iter().map(|n| n.to_checkpoint()).collect();
    Ok(serde_json::to_string_pretty(&serde_json::json!({
        "schema_version": crate::network::CHECKPOINT_SCHEMA_VERSION,
        "h_star": ens.h_star(),
        "nets": nets,
    }))?)
}

fn progress(deterministic: bool) -> impl FnMut(usize, &crate::training::EpochRecord) {
    move |trial, r| {
        if r.epoch % 500 == 0 && !deterministic {
            eprintln!(
                "trial {trial} epoch {:>6} loss {:.4e} h* {:.4e} {:.0}s",
                r.epoch, r.loss.total, r.loss.h_star, r.wall_time
            );
        }
    }
}

/// Trains one case and writes its artifacts into `dir`.
fn train_case(m: &RunManifest, case: CaseConfig, with_probes: bool, dir: &Path) -> Result<CaseReport> {
    fs::create_dir_all(dir)?;
    let spec = rig_spec(m, case, geometry(m)?, with_probes)?;
    let (report, trials) = multi_trial(&spec, m.trials.max(1), m.deterministic, progress(m.deterministic))?;
    for (i, t) in trials.iter().enumerate() {
        write_trial(dir, i, t)?;
    }
    write(dir, "report.json", report.to_json()?)?;
    write_csv_file(dir, "summary.csv", |b| write_summary_csv(&[&report], b))?;
    Ok(report)
}

fn write_trial(dir: &Path, i: usize, t: &RigTrial) -> Result<()> {
    write_csv_file(dir, &format!("log_trial{i}.csv"), |b| write_history_csv(&t.run.history, b))?;
    if !t.result.diverged {
        let model = &t.problem.model;
        let field = temperature_field(&t.run.ensemble, &model.geom, &model.scales, 121, 61)?;
        write_csv_file(dir, &format!("field_trial{i}.csv"), |b| write_field_csv(&field, b))?;
    }
    write(dir, &format!("checkpoint_trial{i}.json"), checkpoint_json(&t.run.ensemble)?)
}

fn validate(m: &RunManifest, dir: &Path) -> Result<()> {
    let study = m.study.as_deref().unwrap_or("all");
    let studies: Vec<StudyId> = if study == "all" {
        vec![StudyId::Intro1d, StudyId::ToyHSweep, StudyId::ConvergenceProbe]
    } else {
        vec![study.parse()?]
    };
    let mut table: Vec<(String, String, String)> = Vec::new();
    for s in studies {
        match s {
            StudyId::Intro1d => {
                let mut spec = Intro1dSpec::default();
                spec.train.seed = m.seed;
                if let Some(e) = m.epochs {
                    spec.train.max_epochs = e;
                }
                let r = run_intro1d(&spec)?;
                write_csv_file(dir, "intro1d_field.csv", |b| {
                    let mut w = csv::Writer::from_writer(b);
                    w.write_record(["x", "t", "u"])?;
                    for p in &r.field {
                        w.write_record(p.iter().map(|v| format!("{v:e}")))?;
                    }
                    w.flush()?;
                    Ok(())
                })?;
                let summary = serde_json::json!({
                    "mse": r.mse,
                    "initial_max_error": r.initial_max_error,
                    "epochs": r.epochs,
                    "stop": r.stop,
                    "final_loss": r.final_loss,
                    "spec": spec,
                });
                write(dir, "intro1d.json", serde_json::to_string_pretty(&summary)?)?;
                table.push(("intro1d".into(), "mse".into(), format!("{:e}", r.mse)));
            }
            StudyId::ToyHSweep => {
                let mut spec = ToySpec::default();
                spec.train.seed = m.seed;
                if let Some(e) = m.epochs {
                    spec.train.max_epochs = e;
                }
                let r = run_toy_h_sweep(&[10.0, 100.0, 1000.0, 10000.0], &spec, true)?;
                write_csv_file(dir, "toy_h_sweep.csv", |b| write_toy_csv(&r, b))?;
                write(dir, "toy_h_sweep.json", serde_json::to_string_pretty(&r)?)?;
                for row in &r.rows {
                    table.push((
                        format!("toy h={}", row.h_true),
                        "pct_error".into(),
                        row.pct_error.map(|v| format!("{v:.4}")).unwrap_or_default(),
                    ));
                }
                table.push(("toy".into(), "r_squared".into(), r.r_squared.map(|v| format!("{v:.6}")).unwrap_or_default()));
                table.push(("toy".into(), "ablation_degraded".into(), r.ablation_degraded.to_string()));
            }
            StudyId::ConvergenceProbe => {
                let mut spec = ToySpec::default();
                spec.train.seed = m.seed;
                spec.train.max_epochs = m.epochs.unwrap_or(20000);
                let r = run_convergence_probe(1000.0, &[1e-2, 1e-3, 1e-4, 1e-5], &spec)?;
                write_csv_file(dir, "convergence_probe.csv", |b| write_convergence_csv(&r, b))?;
                write(dir, "convergence_probe.json", serde_json::to_string_pretty(&r)?)?;
                table.push(("convergence".into(), "monotone".into(), r.monotone.to_string()));
            }
        }
    }
    write_csv_file(dir, "validation.csv", |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["study", "metric", "value"])?;
        for (a, b, c) in &table {
            w.write_record([a, b, c])?;
        }
        w.flush()?;
        Ok(())
    })
}

fn fd_check(m: &RunManifest, dir: &Path) -> Result<()> {
    let fd = m.fd.clone().unwrap_or(FdParams {
        h: 350.0,
        nx: 512,
        ny: 256,
    });
    let case = parse_case_file(m.cases.first().map(String::as_str).unwrap_or("A13_4"))?;
    let geom = geometry(m)?;
    let slab = fd_slab_check(5000.0, 400.0, (16, 40))?;
    let sol = fd_solve(&geom, &case, fd.h, (fd.nx, fd.ny))?;
    let points: Vec<[f64; 2]> = geom.probes.iter().map(|p| p.position).collect();
    let temps = fd_probe(&sol, &points)?;
    let probes: BTreeMap<String, f64> = geom
        .probes
        .iter()
        .zip(&temps)
        .map(|(p, t)| (p.name.clone(), t - ZERO_CELSIUS))
        .collect();
    let summary = serde_json::json!({
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "case_id": case.case_id,
        "h": fd.h,
        "grid": [fd.nx, fd.ny],
        "iterations": sol.iterations,
        "relative_residual": sol.residual,
        "heat_in_w_per_m": sol.heat_in,
        "heat_out_w_per_m": sol.heat_out,
        "energy_imbalance": sol.energy_imbalance(),
        "max_temperature_c": sol.max_temperature() - ZERO_CELSIUS,
        "probes_c": probes,
        "probes_exp_c": case.probes_c,
        "slab_max_rel_error": slab.max_rel_error,
    });
    write(dir, "fd_check.json", serde_json::to_string_pretty(&summary)?)?;
    write_csv_file(dir, "fd_field.csv", |b| write_fd_csv(&sol, &geom, b))
}

fn compare_modes(m: &RunManifest, dir: &Path) -> Result<()> {
    let case = parse_case_file(m.cases.first().map(String::as_str).unwrap_or("A13_4"))?;
    if case.probes_c.is_empty() {
        return Err(Error::Config(format!("case {} has no probe readings to compare against", case.case_id)));
    }
    let without = train_case(m, case.clone(), false, &dir.join("no_probes"))?;
    let with = train_case(m, case, true, &dir.join("with_probes"))?;
    write_csv_file(dir, "paired.csv", |b| write_summary_csv(&[&without, &with], b))?;
    let (h0, h1) = (without.mean("h_nn"), with.mean("h_nn"));
    let flag = match (h0, h1) {
        (Some(a), Some(b)) => Some(a > b),
        _ => None,
    };
    let summary = serde_json::json!({
        "case_id": with.case_id,
        "h_no_probes": h0,
        "h_with_probes": h1,
        "v_no_probes": without.mean("v_nn"),
        "v_with_probes": with.mean("v_nn"),
        "v_exp": with.v_exp,
        "no_probe_h_exceeds_with_probe_h": flag,
    });
    write(dir, "compare.json", serde_json::to_string_pretty(&summary)?)
}

/// Executes a manifest, writing artifacts and the manifest itself to `out`.
pub fn run(m: &RunManifest, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    write(out, "manifest.json", serde_json::to_string_pretty(m)?)?;
    match m.command.as_str() {
        "validate" => validate(m, out),
        "train-case" => {
            let case = parse_case_file(m.cases.first().map(String::as_str).unwrap_or("A13_4"))?;
            train_case(m, case, m.with_probes, out).map(|_| ())
        }
        "compare-modes" => compare_modes(m, out),
        "sweep" => {
            let mut reports = Vec::new();
            for c in &m.cases {
                let case = parse_case_file(c)?;
                let with_probes = m.with_probes && !case.probes_c.is_empty();
                let dir = out.join(&case.case_id);
                reports.push(train_case(m, case, with_probes, &dir)?);
            }
            let refs: Vec<&CaseReport> = reports.iter().collect();
            write_csv_file(out, "summary.csv", |b| write_summary_csv(&refs, b))
        }
        "fd-check" => fd_check(m, out),
        other => Err(Error::Config(format!("unknown command {other:?}"))),
    }
}

/// Entry point used by the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (manifest, out) = match cli.into_manifest() {
        Ok(v) => v,
        Err(e) => return report_error(&e, None),
    };
    match run(&manifest, &out) {
        Ok(()) => 0,
        Err(e) => report_error(&e, Some(&out)),
    }
}

fn report_error(e: &Error, out: Option<&Path>) -> i32 {
    eprintln!("error: {}", e.to_string().replace('\n', " "));
    if let Some(dir) = out {
        let rec = ErrorRecord {
            schema_version: MANIFEST_SCHEMA_VERSION,
            kind: e.kind().to_string(),
            message: e.to_string(),
        };
        if fs::create_dir_all(dir).is_ok() {
            if let Ok(s) = serde_json::to_string_pretty(&rec) {
                let _ = fs::write(dir.join("error.json"), s);
            }
        }
    }
    1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_cases_parse_and_round_trip() {
        for (id, _) in BUNDLED_CASES {
            let c = parse_case_file(id).unwrap();
            assert_eq!(c.case_id, id);
            assert_eq!(CaseConfig::from_json_str(&c.to_json().unwrap()).unwrap(), c);
        }
        let a = parse_case_file("A13_4").unwrap();
        assert_eq!(a.power_w, 259.2);
        assert_eq!(a.t_in_c, 10.0226);
        assert_eq!(a.t_out_c, 12.5535);
        assert_eq!(parse_case_file("A13_3").unwrap().power_w, 201.4);
    }

    #[test]
    fn unknown_case_is_a_config_error() {
        assert!(matches!(parse_case_file("no_such_case"), Err(Error::Config(_))));
    }

    #[test]
    fn probes_default_on_and_can_be_switched_off() {
        let cli = Cli::try_parse_from(["heatsink", "train-case", "--no-probes"]).unwrap();
        let (m, _) = cli.into_manifest().unwrap();
        assert!(!m.with_probes);
        let cli = Cli::try_parse_from(["heatsink", "train-case"]).unwrap();
        assert!(cli.into_manifest().unwrap().0.with_probes);
    }

    #[test]
    fn unknown_command_is_a_usage_error() {
        assert_eq!(main_with_args(["heatsink", "frobnicate"]), 2);
    }
}
