//! Command-line front end.
//!
//! A run reads one JSON config, resolves the seed (`--seed`, then
//! `FREQSIM_SEED`, then the config's `seed`, then 0), writes its tables and a
//! `report.json` into the output directory, and prints the report (with
//! wall-clock time) on standard output. Failures print a JSON error object on
//! standard error and exit with
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 2 | config error |
//! | 3 | negative dual rate |
//! | 4 | scaling family mismatch |
//! | 5 | numeric failure or failed check |

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::dual::{build_rates, duality_check_many, generator_identity_residual, PositivityViolation};
use crate::error::Error;
use crate::io::{event_table, frequency_table, pair_table, Cell, Format, Table};
use crate::model::{validate_params, ModelParams};
use crate::ode::{
    find_equilibria, large_population_experiment, linear_case_closed_form, linear_coefficients,
    logistic_case_closed_form, logistic_coefficients, phase_diagram, ConvergenceRow, ModelFamily, Scaling,
};
use crate::simulate::{
    coupled_pair, moment_estimate, simulate_cbi, simulate_culled_frequency, simulate_culling_chain, Estimate,
    PathConfig, Recording, StopBand, Trajectory,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_POSITIVITY: i32 = 3;
pub const EXIT_SCALING: i32 = 4;
pub const EXIT_NUMERIC: i32 = 5;

/// Generator identity residual above which `duality` fails.
pub const RESIDUAL_LIMIT: f64 = 1e-9;
/// Duality z-score above which `duality` fails.
pub const Z_SCORE_LIMIT: f64 = 4.0;

#[derive(Debug, Parser)]
#[command(name = "freqsim", version, about = "Culled frequency process simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// JSON run configuration; omitted means all defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[arg(long, global = true, env = "FREQSIM_SEED")]
    pub seed: Option<u64>,

    /// Worker threads; 0 or omitted uses every core.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Output directory, overriding `output.dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Simulate paths of the `target` process.
    Simulate,
    /// Generator identity residual and Monte Carlo moment duality.
    Duality,
    /// Export the dual rate table.
    DualRates,
    /// Phase diagram and equilibria of the large-population limit.
    Ode,
    /// Culling chain against the culled frequency process over `culling.n_list`.
    ConvergeCull,
    /// Distance to the limit ODE over `ode.z_list`.
    ConvergeZ,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Duality => "duality",
            Command::DualRates => "dual-rates",
            Command::Ode => "ode",
            Command::ConvergeCull => "converge-cull",
            Command::ConvergeZ => "converge-z",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    #[default]
    Frequency,
    Cbi,
    Culling,
    Coupled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathSection {
    pub dt: f64,
    pub horizon: f64,
    pub n_paths: usize,
    pub record: Recording,
}

impl Default for PathSection {
    fn default() -> Self {
        PathSection {
            dt: 1e-3,
            horizon: 1.0,
            n_paths: 100,
            record: Recording::Steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CbiSection {
    /// Start of the two-type process; defaults to `(r0 z, (1 − r0) z)`.
    pub x0: Option<[f64; 2]>,
    pub eps: f64,
    pub cap: f64,
}

impl Default for CbiSection {
    fn default() -> Self {
        CbiSection {
            x0: None,
            eps: 1e-6,
            cap: 1e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CullingSection {
    pub n: u32,
    pub n_list: Vec<u32>,
}

impl Default for CullingSection {
    fn default() -> Self {
        CullingSection {
            n: 16,
            n_list: vec![4, 16, 64],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DualSection {
    pub n0: usize,
    /// When non-empty, replaces `n0`.
    pub n0_list: Vec<usize>,
    pub n_max: usize,
    pub t: f64,
}

impl Default for DualSection {
    fn default() -> Self {
        DualSection {
            n0: 1,
            n0_list: Vec::new(),
            n_max: 6,
            t: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OdeSection {
    pub scaling: Scaling,
    pub z_list: Vec<f64>,
    pub grid_size: usize,
    /// Also run the large-population experiment under `ode`.
    pub run_convergence: bool,
}

impl Default for OdeSection {
    fn default() -> Self {
        OdeSection {
            scaling: Scaling::Linear,
            z_list: vec![10.0, 100.0, 1000.0],
            grid_size: 101,
            run_convergence: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub format: Format,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("out"),
            format: Format::Csv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelParams,
    pub z: f64,
    pub r0: f64,
    /// Second start for `target = "coupled"`.
    pub s0: Option<f64>,
    pub seed: Option<u64>,
    pub target: Target,
    pub path: PathSection,
    pub cbi: CbiSection,
    pub culling: CullingSection,
    pub dual: DualSection,
    pub ode: OdeSection,
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelParams::null(),
            z: 1.0,
            r0: 0.5,
            s0: None,
            seed: None,
            target: Target::Frequency,
            path: PathSection::default(),
            cbi: CbiSection::default(),
            culling: CullingSection::default(),
            dual: DualSection::default(),
            ode: OdeSection::default(),
            output: OutputSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

fn field_error(field: impl Into<String>, message: impl Into<String>) -> FieldError {
    FieldError {
        field: field.into(),
        message: message.into(),
    }
}

impl RunConfig {
    /// Parses a JSON document, reporting the path of the offending field.
    pub fn from_json(text: &str) -> Result<Self, Vec<FieldError>> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let field = if path == "." { String::new() } else { path };
            vec![field_error(field, e.into_inner().to_string())]
        })?;
        let errors = cfg.validate();
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(errors)
        }
    }

    /// Every numeric constraint the subcommands rely on.
    pub fn validate(&self) -> Vec<FieldError> {
        let mut out: Vec<FieldError> = validate_params(&self.model)
            .into_iter()
            .map(|v| field_error(format!("model.{}", v.field), v.message))
            .collect();
        let mut check = |ok: bool, field: &str, message: &str| {
            if !ok {
                out.push(field_error(field, message));
            }
        };
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        check(self.z > 0.0 && self.z.is_finite(), "z", "must be positive and finite");
        check(unit(self.r0), "r0", "must lie in [0, 1]");
        check(self.s0.is_none_or(unit), "s0", "must lie in [0, 1]");
        check(
            self.path.dt > 0.0 && self.path.dt.is_finite(),
            "path.dt",
            "must be positive",
        );
        check(
            self.path.horizon > 0.0 && self.path.horizon.is_finite(),
            "path.horizon",
            "must be positive",
        );
        check(self.path.n_paths > 0, "path.n_paths", "must be at least 1");
        check(
            self.cbi.x0.is_none_or(|x| x.iter().all(|v| *v >= 0.0 && v.is_finite())),
            "cbi.x0",
            "components must be finite and nonnegative",
        );
        check(
            self.cbi.eps > 0.0 && self.cbi.eps < self.cbi.cap && self.cbi.cap.is_finite(),
            "cbi",
            "need 0 < eps < cap < inf",
        );
        check(self.culling.n > 0, "culling.n", "must be at least 1");
        check(
            !self.culling.n_list.contains(&0),
            "culling.n_list",
            "entries must be at least 1",
        );
        check(self.dual.n0 > 0, "dual.n0", "must be at least 1");
        check(
            !self.dual.n0_list.contains(&0),
            "dual.n0_list",
            "entries must be at least 1",
        );
        check(self.dual.n_max > 0, "dual.n_max", "must be at least 1");
        check(
            self.dual.n0s().iter().all(|&n| n <= self.dual.n_max),
            "dual.n_max",
            "must be at least every requested n0",
        );
        check(
            self.dual.t > 0.0 && self.dual.t.is_finite(),
            "dual.t",
            "must be positive",
        );
        check(
            self.ode.z_list.iter().all(|z| *z > 0.0 && z.is_finite()),
            "ode.z_list",
            "entries must be positive",
        );
        check(self.ode.grid_size >= 2, "ode.grid_size", "must be at least 2");
        out
    }

    fn path_config(&self, seed: u64) -> PathConfig {
        PathConfig {
            dt: self.path.dt,
            horizon: self.path.horizon,
            seed,
            n_paths: self.path.n_paths,
        }
    }

    fn band(&self) -> StopBand {
        StopBand {
            eps: self.cbi.eps,
            cap: self.cbi.cap,
        }
    }

    /// Hex SHA-256 of the compact JSON serialization.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

impl DualSection {
    pub fn n0s(&self) -> Vec<usize> {
        if self.n0_list.is_empty() {
            vec![self.n0]
        } else {
            self.n0_list.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    /// Only on standard output; `report.json` stays byte-reproducible.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_clock_seconds: Option<f64>,
    pub outputs: Vec<String>,
    pub warnings: Vec<String>,
    pub results: Value,
    /// The effective config, with command-line overrides applied.
    pub config: RunConfig,
}

/// A failed run: exit code plus the JSON object printed on standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub code: i32,
    pub body: Value,
}

impl Failure {
    fn config(errors: Vec<FieldError>) -> Self {
        Failure {
            code: EXIT_CONFIG,
            body: json!({"error": "config", "fields": errors}),
        }
    }

    fn positivity(v: &PositivityViolation) -> Self {
        let rates: Vec<Value> = v
            .violations
            .iter()
            .map(|r| json!({"n": r.n, "m": r.m.to_string(), "rate": r.rate}))
            .collect();
        Failure {
            code: EXIT_POSITIVITY,
            body: json!({"error": "positivity", "message": v.to_string(), "rates": rates}),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (code, kind) = match &e {
            Error::Positivity(v) => return Failure::positivity(v),
            Error::InvalidAtom { .. } | Error::InvalidArgument { .. } => (EXIT_CONFIG, "config"),
            Error::ScalingMismatch(_) => (EXIT_SCALING, "scaling"),
            Error::EmptyMeasure | Error::DualCapExceeded { .. } | Error::Numeric(_) => (EXIT_NUMERIC, "numeric"),
            Error::Io(_) | Error::Csv(_) | Error::Json(_) => (EXIT_NUMERIC, "io"),
        };
        Failure {
            code,
            body: json!({"error": kind, "message": e.to_string()}),
        }
    }
}

/// What a subcommand produced before the report is assembled.
struct Outcome {
    outputs: Vec<String>,
    warnings: Vec<String>,
    results: Value,
    /// Set when a check failed; the report is still written.
    failed: Option<String>,
}

impl Outcome {
    fn new() -> Self {
        Outcome {
            outputs: Vec::new(),
            warnings: Vec::new(),
            results: Value::Null,
            failed: None,
        }
    }
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    seed: u64,
    dir: &'a Path,
    format: Format,
}

impl Ctx<'_> {
    fn save(&self, out: &mut Outcome, table: &Table, stem: &str) -> crate::Result<()> {
        out.outputs.push(table.save(self.dir, stem, self.format)?);
        Ok(())
    }

    fn save_text(&self, out: &mut Outcome, name: &str, text: &str) -> crate::Result<()> {
        fs::write(self.dir.join(name), text)?;
        out.outputs.push(name.to_owned());
        Ok(())
    }
}

fn estimate_json(e: &Estimate) -> Value {
    json!({"mean": e.mean, "stderr": e.stderr})
}

/// Warnings for logged clamp and stop events; both are listed in the events
/// table that the caller writes.
fn event_warnings<'a, S: Copy + 'a>(out: &mut Outcome, paths: impl IntoIterator<Item = &'a Trajectory<S>> + Clone) {
    let clamps: usize = paths.clone().into_iter().map(|p| p.clamp_count()).sum();
    let stops = paths.into_iter().filter(|p| p.stopped()).count();
    if clamps > 0 {
        out.warnings.push(format!("{clamps} clamp events (see events)"));
    }
    if stops > 0 {
        out.warnings
            .push(format!("{stops} paths stopped on leaving the band (see events)"));
    }
}

fn frequency_summary(paths: &[Trajectory<f64>], horizon: f64) -> crate::Result<Value> {
    Ok(json!({
        "mean": estimate_json(&moment_estimate(paths, horizon, 1)?),
        "second_moment": estimate_json(&moment_estimate(paths, horizon, 2)?),
        "clamps": paths.iter().map(|p| p.clamp_count()).sum::<usize>(),
        "max_overshoot": paths.iter().map(|p| p.max_overshoot()).fold(0.0, f64::max),
        "jump_exits": paths.iter().map(|p| p.jump_exits).sum::<usize>(),
    }))
}

fn cmd_simulate(ctx: &Ctx) -> crate::Result<Outcome> {
    let cfg = ctx.cfg;
    let pc = cfg.path_config(ctx.seed);
    let rec = cfg.path.record;
    let mut out = Outcome::new();
    match cfg.target {
        Target::Frequency => {
            let paths = simulate_culled_frequency(&cfg.model, cfg.z, cfg.r0, &pc, rec)?;
            ctx.save(&mut out, &frequency_table(&paths), "trajectories")?;
            ctx.save(&mut out, &event_table(&paths), "events")?;
            event_warnings(&mut out, &paths);
            out.results = frequency_summary(&paths, pc.horizon)?;
        }
        Target::Culling => {
            let paths = simulate_culling_chain(&cfg.model, cfg.z, cfg.r0, cfg.culling.n, cfg.band(), &pc, rec)?;
            ctx.save(&mut out, &frequency_table(&paths), "trajectories")?;
            ctx.save(&mut out, &event_table(&paths), "events")?;
            event_warnings(&mut out, &paths);
            out.results = frequency_summary(&paths, pc.horizon)?;
        }
        Target::Cbi => {
            let x0 = cfg.cbi.x0.unwrap_or([cfg.r0 * cfg.z, (1.0 - cfg.r0) * cfg.z]);
            let paths = simulate_cbi(&cfg.model, x0, cfg.band(), &pc, rec)?;
            ctx.save(&mut out, &pair_table(&paths), "trajectories")?;
            ctx.save(&mut out, &event_table(&paths), "events")?;
            event_warnings(&mut out, &paths);
            let mean = |i: usize| Estimate::from_samples(paths.iter().map(|p| p.final_value()[i]));
            out.results = json!({
                "final_x1": estimate_json(&mean(0)?),
                "final_x2": estimate_json(&mean(1)?),
                "stopped": paths.iter().filter(|p| p.stopped()).count(),
                "clamps": paths.iter().map(|p| p.clamp_count()).sum::<usize>(),
            });
        }
        Target::Coupled => {
            let s0 = cfg
                .s0
                .ok_or_else(|| Error::arg("s0", "required when target is \"coupled\""))?;
            let pairs = coupled_pair(&cfg.model, cfg.z, cfg.r0, s0, &pc, rec)?;
            let mut table = Table::new(&["path", "member", "time", "value"]);
            for (i, (a, b)) in pairs.iter().enumerate() {
                for (member, p) in [a, b].into_iter().enumerate() {
                    for (t, v) in p.times.iter().zip(&p.values) {
                        table.push(vec![i.into(), member.into(), (*t).into(), (*v).into()]);
                    }
                }
            }
            ctx.save(&mut out, &table, "trajectories")?;
            let flat: Vec<&Trajectory<f64>> = pairs.iter().flat_map(|(a, b)| [a, b]).collect();
            ctx.save(&mut out, &event_table(flat.iter().copied()), "events")?;
            event_warnings(&mut out, flat.iter().copied());
            let gap = Estimate::from_samples(pairs.iter().map(|(a, b)| (a.final_value() - b.final_value()).abs()))?;
            out.results = json!({"mean_abs_gap": estimate_json(&gap), "start_gap": (cfg.r0 - s0).abs()});
        }
    }
    Ok(out)
}

fn r_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

fn cmd_duality(ctx: &Ctx) -> crate::Result<Outcome> {
    let cfg = ctx.cfg;
    let mut out = Outcome::new();
    let residual = generator_identity_residual(&cfg.model, cfg.z, cfg.dual.n_max, &r_grid())?;
    let pc = PathConfig {
        horizon: cfg.dual.t,
        ..cfg.path_config(ctx.seed)
    };
    let reports = duality_check_many(&cfg.model, cfg.z, cfg.r0, &cfg.dual.n0s(), &pc)?;
    let mut table = Table::new(&["n0", "lhs_mean", "lhs_stderr", "rhs_mean", "rhs_stderr", "z_score"]);
    for r in &reports {
        table.push(vec![
            r.n0.into(),
            r.lhs.mean.into(),
            r.lhs.stderr.into(),
            r.rhs.mean.into(),
            r.rhs.stderr.into(),
            r.z_score.into(),
        ]);
    }
    ctx.save(&mut out, &table, "duality")?;
    let worst_z = reports.iter().map(|r| r.z_score).fold(0.0, f64::max);
    if residual > RESIDUAL_LIMIT {
        out.failed = Some(format!(
            "generator identity residual {residual:e} exceeds {RESIDUAL_LIMIT:e}"
        ));
    } else if worst_z > Z_SCORE_LIMIT {
        out.failed = Some(format!("duality z-score {worst_z} exceeds {Z_SCORE_LIMIT}"));
    }
    out.results = json!({
        "residual": residual,
        "max_z_score": worst_z,
        "checks": reports.iter().map(|r| json!({
            "n0": r.n0,
            "lhs": estimate_json(&r.lhs),
            "rhs": estimate_json(&r.rhs),
            "z_score": r.z_score,
        })).collect::<Vec<_>>(),
    });
    Ok(out)
}

fn cmd_dual_rates(ctx: &Ctx) -> crate::Result<Outcome> {
    let cfg = ctx.cfg;
    let mut out = Outcome::new();
    let rates = build_rates(&cfg.model, cfg.z, cfg.dual.n_max)?;
    let entries = rates.entries()?;
    match ctx.format {
        Format::Csv => {
            let file = fs::File::create(ctx.dir.join("rates.csv"))?;
            rates.write_csv(std::io::BufWriter::new(file))?;
            out.outputs.push("rates.csv".into());
        }
        Format::Json => {
            let mut table = Table::new(&["n", "m", "rate"]);
            for (n, m, q) in &entries {
                table.push(vec![(*n).into(), m.to_string().into(), Cell::Num(*q)]);
            }
            ctx.save(&mut out, &table, "rates")?;
        }
    }
    out.results = json!({"n_max": rates.n_max(), "m_tilde": rates.m_tilde(), "entries": entries.len()});
    Ok(out)
}

fn convergence_table(rows: &[ConvergenceRow]) -> Table {
    let mut table = Table::new(&["z", "sup_sq_mean", "sup_sq_stderr", "clamps"]);
    for r in rows {
        table.push(vec![
            r.z.into(),
            r.sup_sq.mean.into(),
            r.sup_sq.stderr.into(),
            r.clamps.into(),
        ]);
    }
    table
}

fn convergence_json(rows: &[ConvergenceRow]) -> Value {
    rows.iter()
        .map(|r| json!({"z": r.z, "sup_sq": estimate_json(&r.sup_sq), "clamps": r.clamps}))
        .collect()
}

fn run_convergence(ctx: &Ctx, family: &ModelFamily, out: &mut Outcome) -> crate::Result<Value> {
    let cfg = ctx.cfg;
    let rows = large_population_experiment(family, cfg.r0, &cfg.ode.z_list, &cfg.path_config(ctx.seed))?;
    ctx.save(out, &convergence_table(&rows), "convergence")?;
    let clamps: usize = rows.iter().map(|r| r.clamps).sum();
    if clamps > 0 {
        // the experiment keeps counts only, so the per-z counts are the record
        out.warnings
            .push(format!("{clamps} clamp events (clamps column of convergence)"));
    }
    Ok(convergence_json(&rows))
}

fn cmd_ode(ctx: &Ctx) -> crate::Result<Outcome> {
    let cfg = ctx.cfg;
    let mut out = Outcome::new();
    let family = ModelFamily::new(cfg.model.clone(), cfg.ode.scaling)?;
    let lp = family.limit();
    let diagram = phase_diagram(&lp, cfg.ode.grid_size)?;
    let closed = match cfg.ode.scaling {
        Scaling::Linear => {
            let (d1, d2, d3) = linear_coefficients(&lp);
            linear_case_closed_form(d1, d2, d3)
        }
        Scaling::Logistic => {
            let (d1, d2) = logistic_coefficients(&lp);
            logistic_case_closed_form(d1, d2)
        }
    };
    let mut report = find_equilibria(&lp);
    report.case_label = closed.case_label.clone();
    let agree = closed.degenerate == report.degenerate
        && closed.equilibria.len() == report.equilibria.len()
        && closed
            .equilibria
            .iter()
            .zip(&report.equilibria)
            .all(|(a, b)| (a.location - b.location).abs() <= 1e-8 && a.stability == b.stability);
    if !agree {
        out.failed = Some("closed form and root finder disagree".into());
    }

    let mut table = Table::new(&["r", "rhs"]);
    for (r, v) in &diagram.samples {
        table.push(vec![(*r).into(), (*v).into()]);
    }
    ctx.save(&mut out, &table, "phase")?;
    ctx.save_text(&mut out, "equilibria.txt", &report.summary())?;
    let report_json = serde_json::to_string_pretty(&report)? + "\n";
    ctx.save_text(&mut out, "equilibria.json", &report_json)?;

    let mut results = json!({
        "limit": lp,
        "equilibria": report,
        "closed_form_agrees": agree,
    });
    if cfg.ode.run_convergence {
        results["convergence"] = run_convergence(ctx, &family, &mut out)?;
    }
    out.results = results;
    Ok(out)
}

fn cmd_converge_z(ctx: &Ctx) -> crate::Result<Outcome> {
    let mut out = Outcome::new();
    let family = ModelFamily::new(ctx.cfg.model.clone(), ctx.cfg.ode.scaling)?;
    out.results = json!({"convergence": run_convergence(ctx, &family, &mut out)?});
    Ok(out)
}

fn cmd_converge_cull(ctx: &Ctx) -> crate::Result<Outcome> {
    let cfg = ctx.cfg;
    let pc = cfg.path_config(ctx.seed);
    let mut out = Outcome::new();
    let reference = simulate_culled_frequency(&cfg.model, cfg.z, cfg.r0, &pc, Recording::Final)?;
    let ref_moments = [
        moment_estimate(&reference, pc.horizon, 1)?,
        moment_estimate(&reference, pc.horizon, 2)?,
    ];
    let mut table = Table::new(&[
        "n",
        "power",
        "chain_mean",
        "chain_stderr",
        "ref_mean",
        "ref_stderr",
        "abs_diff",
    ]);
    let mut chains = Vec::new();
    let mut rows = Vec::new();
    for &n in &cfg.culling.n_list {
        let paths = simulate_culling_chain(&cfg.model, cfg.z, cfg.r0, n, cfg.band(), &pc, Recording::Final)?;
        for (k, reference) in ref_moments.iter().enumerate() {
            let power = k as u32 + 1;
            let e = moment_estimate(&paths, pc.horizon, power)?;
            let diff = (e.mean - reference.mean).abs();
            table.push(vec![
                n.into(),
                power.into(),
                e.mean.into(),
                e.stderr.into(),
                reference.mean.into(),
                reference.stderr.into(),
                diff.into(),
            ]);
            rows.push(json!({"n": n, "power": power, "chain": estimate_json(&e), "abs_diff": diff}));
        }
        chains.push(paths);
    }
    ctx.save(&mut out, &table, "convergence")?;
    let flat: Vec<&Trajectory<f64>> = reference.iter().chain(chains.iter().flatten()).collect();
    ctx.save(
        &mut out,
        &event_table(flat.iter().copied().filter(|p| p.stopped() || p.clamp_count() > 0)),
        "events",
    )?;
    event_warnings(&mut out, flat.iter().copied());
    out.results = json!({
        "reference": ref_moments.iter().map(estimate_json).collect::<Vec<_>>(),
        "rows": rows,
    });
    Ok(out)
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| {
        Failure::config(vec![field_error(
            "--config",
            format!("cannot read {}: {e}", path.display()),
        )])
    })?;
    RunConfig::from_json(&text).map_err(Failure::config)
}

/// Runs a parsed command line. On success returns the report, which has
/// also been written to `report.json` in the output directory.
pub fn execute(cli: &Cli) -> Result<RunReport, Failure> {
    let started = Instant::now();
    let mut cfg = load_config(cli.config.as_deref())?;
    let seed = cli.seed.or(cfg.seed).unwrap_or(0);
    cfg.seed = Some(seed);
    if let Some(dir) = &cli.out {
        cfg.output.dir = dir.clone();
    }
    if let Some(format) = cli.format {
        cfg.output.format = format;
    }
    let errors = cfg.validate();
    if !errors.is_empty() {
        return Err(Failure::config(errors));
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
        .map_err(|e| Failure::config(vec![field_error("--threads", e.to_string())]))?;
    let dir = cfg.output.dir.clone();
    fs::create_dir_all(&dir).map_err(Error::from)?;
    let ctx = Ctx {
        cfg: &cfg,
        seed,
        dir: &dir,
        format: cfg.output.format,
    };
    let outcome = pool.install(|| match cli.command {
        Command::Simulate => cmd_simulate(&ctx),
        Command::Duality => cmd_duality(&ctx),
        Command::DualRates => cmd_dual_rates(&ctx),
        Command::Ode => cmd_ode(&ctx),
        Command::ConvergeCull => cmd_converge_cull(&ctx),
        Command::ConvergeZ => cmd_converge_z(&ctx),
    })?;

    let mut report = RunReport {
        command: cli.command.name().to_owned(),
        config_hash: cfg.hash(),
        seed,
        wall_clock_seconds: None,
        outputs: outcome.outputs,
        warnings: outcome.warnings,
        results: outcome.results,
        config: cfg.clone(),
    };
    report.outputs.push("report.json".into());
    let text = serde_json::to_string_pretty(&report).map_err(Error::from)? + "\n";
    fs::write(dir.join("report.json"), text).map_err(Error::from)?;
    report.wall_clock_seconds = Some(started.elapsed().as_secs_f64());
    if let Some(reason) = outcome.failed {
        return Err(Failure {
            code: EXIT_NUMERIC,
            body: json!({"error": "check", "message": reason, "report": report}),
        });
    }
    Ok(report)
}

/// Entry point of the binary; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(report) => {
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            EXIT_OK
        }
        Err(f) => {
            eprintln!("{}", f.body);
            f.code
        }
    }
}
