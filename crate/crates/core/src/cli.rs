//! Command-line front end: `solve`, `dclodf`, `sens`, `screen`, `compare` and
//! `dump`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::case::{read_case, GridCase, LoadModel};
use crate::dcmodel::{dc_lodf, DcModel};
use crate::error::{Error, Result};
use crate::powerflow::{
    linearize, solve_ac_powerflow, LinearizationMode, PowerFlowOptions, PowerFlowSolution, DEFAULT_MAX_ITER,
    DEFAULT_TOL,
};
use crate::screening::{compare, compare_severities, find_bridges, oracle_all, screen, ScreenOptions, ScreeningReport};
use crate::sensitivity::{analyze_outage, Metric, TerminalSide};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "gridsens", version, about = "AC power flow, line outage sensitivities and N-1 screening")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the AC power flow and print bus voltages and branch flows.
    Solve(SolveArgs),
    /// DC line outage distribution factors.
    Dclodf(OutageArgs),
    /// Circuit-theoretic outage sensitivities at the AC operating point.
    Sens(SensArgs),
    /// Rank every N-1 branch outage by predicted severity.
    Screen(ScreenArgs),
    /// Compare the severities of two `screen` outputs (JSON or CSV).
    Compare(CompareArgs),
    /// Print the parsed case as canonical JSON.
    Dump(DumpArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LoadModelArg {
    ConstantPower,
    ConstantCurrent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Full,
    Network,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    VmagInf,
    Vmag2,
    ImagInf,
    PlineInf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SideArg {
    From,
    To,
}

#[derive(Debug, Args)]
pub struct Output {
    /// JSON output (default).
    #[arg(long, conflicts_with = "csv")]
    pub json: bool,
    /// CSV output.
    #[arg(long)]
    pub csv: bool,
    /// Write results here instead of stdout.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CaseArgs {
    /// MATPOWER-format case file.
    pub case: PathBuf,
    /// Load model applied to every bus.
    #[arg(long, value_enum, default_value = "constant-power")]
    pub load_model: LoadModelArg,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    /// Newton convergence tolerance on the max mismatch, p.u.
    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    pub max_iter: usize,
    /// Switch PV buses to PQ at violated reactive limits.
    #[arg(long)]
    pub enforce_q_limits: bool,
    /// Start from the voltages stored in the case file instead of flat start.
    #[arg(long)]
    pub warm_start: bool,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub case: CaseArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct OutageArgs {
    #[command(flatten)]
    pub case: CaseArgs,
    /// Zero-based branch index, or `all`.
    #[arg(long, default_value = "all")]
    pub outage: String,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct SensArgs {
    #[command(flatten)]
    pub case: CaseArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Zero-based branch index, or `all`.
    #[arg(long, default_value = "all")]
    pub outage: String,
    #[arg(long, value_enum, default_value = "full")]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value = "vmag-inf")]
    pub metric: MetricArg,
    /// Branch terminal used for current and power deltas.
    #[arg(long, value_enum, default_value = "from")]
    pub side: SideArg,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct ScreenArgs {
    #[command(flatten)]
    pub case: CaseArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, value_enum, default_value = "full")]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value = "vmag-inf")]
    pub metric: MetricArg,
    #[arg(long, value_enum, default_value = "from")]
    pub side: SideArg,
    /// Number of outages marked as top-K.
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    /// Also re-solve every outage with the nonlinear power flow and compare.
    #[arg(long)]
    pub with_oracle: bool,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// With --csv, also write the JSON summary here.
    #[arg(long, value_name = "PATH")]
    pub summary: Option<PathBuf>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Predicted severities.
    pub predicted: PathBuf,
    /// Reference severities.
    pub reference: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    #[command(flatten)]
    pub case: CaseArgs,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

impl From<ModeArg> for LinearizationMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Full => LinearizationMode::Full,
            ModeArg::Network => LinearizationMode::Network,
        }
    }
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::VmagInf => Metric::VmagInf,
            MetricArg::Vmag2 => Metric::Vmag2,
            MetricArg::ImagInf => Metric::ImagInf,
            MetricArg::PlineInf => Metric::PlineInf,
        }
    }
}

impl From<SideArg> for TerminalSide {
    fn from(s: SideArg) -> Self {
        match s {
            SideArg::From => TerminalSide::From,
            SideArg::To => TerminalSide::To,
        }
    }
}

impl SolverArgs {
    fn options(&self) -> Result<PowerFlowOptions> {
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidArgument("--tol must be positive and --max-iter nonzero".into()));
        }
        Ok(PowerFlowOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            enforce_q_limits: self.enforce_q_limits,
            warm_start: self.warm_start,
        })
    }
}

impl CaseArgs {
    fn load(&self) -> Result<GridCase> {
        let mut case = read_case(&self.case)?;
        if self.load_model == LoadModelArg::ConstantCurrent {
            case.set_load_model(LoadModel::ConstantCurrent);
        }
        Ok(case)
    }
}

/// Rounds to 12 significant digits.
pub fn sig12(v: f64) -> f64 {
    if v.is_finite() && v != 0.0 {
        format!("{v:.11e}").parse().unwrap_or(v)
    } else {
        v
    }
}

/// Number formatting for CSV cells.
pub fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{}", sig12(v))
    }
}

fn round_json(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(x) = n.as_f64() {
                *v = json!(sig12(x));
            }
        }
        Value::Array(a) => a.iter_mut().for_each(round_json),
        Value::Object(o) => o.values_mut().for_each(round_json),
        _ => {}
    }
}

/// JSON number or `null` for non-finite values.
fn num(v: f64) -> Value {
    if v.is_finite() { json!(v) } else { Value::Null }
}

fn nums(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|&x| num(x)).collect())
}

fn document(command: &str, data: Value) -> String {
    let mut doc = json!({
        "meta": { "tool": "gridsens", "version": env!("CARGO_PKG_VERSION"), "command": command },
        "data": data,
    });
    round_json(&mut doc);
    let mut s = serde_json::to_string_pretty(&doc).expect("serializable");
    s.push('\n');
    s
}

fn emit(out: Option<&Path>, text: &str, stdout: &mut dyn Write) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Error::Io { path: p.display().to_string(), source: e }),
        None => stdout
            .write_all(text.as_bytes())
            .map_err(|e| Error::Io { path: "<stdout>".into(), source: e }),
    }
}

fn csv_text(header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

fn parse_outages(arg: &str, case: &GridCase) -> Result<Vec<usize>> {
    if arg == "all" {
        return Ok(case.branches.iter().filter(|b| b.is_closed()).map(|b| b.index).collect());
    }
    let l: usize = arg
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("--outage expects a branch index or `all`, got `{arg}`")))?;
    case.closed_branch(l)?;
    Ok(vec![l])
}

fn run_solve(a: &SolveArgs, stdout: &mut dyn Write) -> Result<()> {
    let case = a.case.load()?;
    let sol = solve_ac_powerflow(&case, &a.solver.options()?)?;
    let buses: Vec<_> = case
        .buses
        .iter()
        .enumerate()
        .map(|(k, b)| {
            let v = sol.phasor(k);
            (b.id, v.norm(), v.arg().to_degrees(), sol.injections[k])
        })
        .collect();
    let text = if a.output.csv {
        csv_text(
            &["bus", "vm", "va_deg", "p_inj", "q_inj"],
            buses
                .iter()
                .map(|(id, vm, va, s)| vec![id.to_string(), fmt_num(*vm), fmt_num(*va), fmt_num(s.re), fmt_num(s.im)])
                .collect(),
        )
    } else {
        document(
            "solve",
            json!({
                "case": case.name,
                "base_mva": case.base_mva,
                "iterations": sol.iterations,
                "max_mismatch": sol.max_mismatch,
                "q_limited": sol.q_limited.iter().map(|&k| case.buses[k].id).collect::<Vec<_>>(),
                "buses": buses.iter().map(|(id, vm, va, s)| json!({
                    "id": id, "vm": vm, "va_deg": va, "p_inj": s.re, "q_inj": s.im,
                })).collect::<Vec<_>>(),
                "branches": case.branches.iter().zip(&sol.flows).map(|(b, f)| json!({
                    "index": b.index, "from": b.from_bus, "to": b.to_bus, "closed": b.is_closed(),
                    "p_fr": f.p_fr, "q_fr": f.q_fr, "p_to": f.p_to, "q_to": f.q_to,
                })).collect::<Vec<_>>(),
            }),
        )
    };
    emit(a.output.out.as_deref(), &text, stdout)
}

fn run_dclodf(a: &OutageArgs, stdout: &mut dyn Write) -> Result<()> {
    let case = a.case.load()?;
    let outages = parse_outages(&a.outage, &case)?;
    let model = DcModel::new(&case)?;
    let single = outages.len() == 1 && a.outage != "all";
    let mut results = Vec::new();
    for &l in &outages {
        match dc_lodf(&model, l) {
            Ok(r) => results.push(Some(r)),
            Err(Error::Islanding(_)) if !single => results.push(None),
            Err(e) => return Err(e),
        }
    }
    let text = if a.output.csv {
        let mut rows = Vec::new();
        for (&l, r) in outages.iter().zip(&results) {
            match r {
                Some(r) => {
                    for m in case.branches.iter().filter(|b| b.is_closed()).map(|b| b.index) {
                        rows.push(vec![
                            l.to_string(),
                            m.to_string(),
                            fmt_num(r.lodf[m]),
                            fmt_num(r.pre_flows[m]),
                            fmt_num(r.predicted_flows[m]),
                            "false".into(),
                        ]);
                    }
                }
                None => rows.push(vec![l.to_string(), String::new(), String::new(), String::new(), String::new(), "true".into()]),
            }
        }
        csv_text(&["outage", "monitored", "lodf", "pre_flow", "predicted_flow", "islanding"], rows)
    } else {
        document(
            "dclodf",
            json!({
                "case": case.name,
                "outages": outages.iter().zip(&results).map(|(&l, r)| match r {
                    Some(r) => json!({
                        "outage": l, "islanding": false, "rho": r.rho, "lodf": nums(&r.lodf),
                        "pre_flows": nums(&r.pre_flows), "predicted_flows": nums(&r.predicted_flows),
                    }),
                    None => json!({ "outage": l, "islanding": true }),
                }).collect::<Vec<_>>(),
            }),
        )
    };
    emit(a.output.out.as_deref(), &text, stdout)
}

fn base_solution(case: &CaseArgs, solver: &SolverArgs) -> Result<PowerFlowSolution> {
    let case = case.load()?;
    solve_ac_powerflow(&case, &solver.options()?)
}

fn run_sens(a: &SensArgs, stdout: &mut dyn Write) -> Result<()> {
    let sol = base_solution(&a.case, &a.solver)?;
    let case = sol.case.clone();
    let outages = parse_outages(&a.outage, &case)?;
    let lin = linearize(&sol, a.mode.into())?;
    let bridges = find_bridges(&case);
    let mut impacts = Vec::new();
    for &l in &outages {
        let impact = analyze_outage(&sol, &lin, l, a.metric.into(), a.side.into())?;
        if impact.islanding && outages.len() == 1 && a.outage != "all" {
            return Err(Error::Islanding(l));
        }
        impacts.push(impact);
    }
    let metric: Metric = a.metric.into();
    let text = if a.output.csv {
        csv_text(
            &["outage", "from", "to", "bridge", "islanding", "severity", "t_condition"],
            impacts
                .iter()
                .map(|i| {
                    let b = &case.branches[i.branch];
                    vec![
                        i.branch.to_string(),
                        b.from_bus.to_string(),
                        b.to_bus.to_string(),
                        bridges.contains(&i.branch).to_string(),
                        i.islanding.to_string(),
                        fmt_num(i.severity),
                        fmt_num(i.t_condition),
                    ]
                })
                .collect(),
        )
    } else {
        document(
            "sens",
            json!({
                "case": case.name,
                "mode": lin.mode.to_string(),
                "metric": metric.name(),
                "buses": case.buses.iter().map(|b| b.id).collect::<Vec<_>>(),
                "outages": impacts.iter().map(|i| json!({
                    "outage": i.branch,
                    "bridge": bridges.contains(&i.branch),
                    "islanding": i.islanding,
                    "severity": num(i.severity),
                    "t_condition": num(i.t_condition),
                    "gamma": i.gamma.map(|g| nums(&g)),
                    "delta_vmag": i.delta_vmag.as_deref().map(nums),
                    "delta_imag": i.delta_imag.as_deref().map(nums),
                    "delta_p": i.delta_p.as_deref().map(nums),
                })).collect::<Vec<_>>(),
            }),
        )
    };
    emit(a.output.out.as_deref(), &text, stdout)
}

fn summary_json(s: &crate::screening::ComparisonSummary) -> Value {
    json!({
        "comparable": s.comparable,
        "insufficient": s.insufficient,
        "spearman": s.spearman,
        "overlaps": s.overlaps.iter().map(|o| json!({ "k": o.k, "count": o.count })).collect::<Vec<_>>(),
        "max_abs_vmag_error": s.max_abs_vmag_error,
        "mean_abs_vmag_error": s.mean_abs_vmag_error,
    })
}

fn report_csv(report: &ScreeningReport, with_oracle: bool) -> String {
    let mut header = vec!["rank", "branch", "from", "to", "severity", "islanding"];
    if with_oracle {
        header.push("oracle_severity");
    }
    let rows = report
        .entries
        .iter()
        .enumerate()
        .map(|(r, e)| {
            let mut row = vec![
                (r + 1).to_string(),
                e.branch.to_string(),
                e.from_bus.to_string(),
                e.to_bus.to_string(),
                fmt_num(e.severity),
                e.islanding.to_string(),
            ];
            if with_oracle {
                row.push(e.oracle_severity.map(fmt_num).unwrap_or_default());
            }
            row
        })
        .collect();
    csv_text(&header, rows)
}

fn run_screen(a: &ScreenArgs, stdout: &mut dyn Write) -> Result<()> {
    let opts = a.solver.options()?;
    let sol = base_solution(&a.case, &a.solver)?;
    let lin = linearize(&sol, a.mode.into())?;
    let screen_opts = ScreenOptions {
        metric: a.metric.into(),
        top_k: a.top,
        side: a.side.into(),
        jobs: a.jobs,
        keep_profiles: a.with_oracle,
    };
    let mut report = screen(&sol, &lin, &screen_opts);
    let mut summary = None;
    let mut oracle_status = Vec::new();
    if a.with_oracle {
        let oracle = oracle_all(&sol, &opts, screen_opts.side, a.jobs);
        summary = Some(compare(&mut report, &oracle, &sol.case)?);
        oracle_status = oracle
            .iter()
            .map(|o| {
                let status = if o.islanded {
                    "islanded"
                } else if o.converged {
                    "converged"
                } else {
                    "not_converged"
                };
                (o.branch, status)
            })
            .collect();
    }
    let summary_doc = document(
        "screen",
        json!({
            "case": report.case,
            "metric": report.metric.name(),
            "mode": report.mode.to_string(),
            "top_k": report.top_k,
            "islanding": report.entries.iter().filter(|e| e.islanding).count(),
            "failures": report.entries.iter().filter_map(|e| e.failure.as_ref().map(|f| json!({ "branch": e.branch, "error": f }))).collect::<Vec<_>>(),
            "oracle_not_converged": oracle_status.iter().filter(|s| s.1 == "not_converged").map(|s| s.0).collect::<Vec<_>>(),
            "comparison": summary.as_ref().map(summary_json),
            "entries": report.entries.iter().enumerate().map(|(r, e)| json!({
                "rank": r + 1,
                "branch": e.branch,
                "from": e.from_bus,
                "to": e.to_bus,
                "severity": num(e.severity),
                "islanding": e.islanding,
                "top_k": e.top_k,
                "oracle_severity": e.oracle_severity.map(num),
            })).collect::<Vec<_>>(),
        }),
    );
    if a.output.csv {
        emit(a.output.out.as_deref(), &report_csv(&report, a.with_oracle), stdout)?;
        if let Some(p) = &a.summary {
            emit(Some(p), &summary_doc, stdout)?;
        }
        Ok(())
    } else {
        emit(a.output.out.as_deref(), &summary_doc, stdout)
    }
}

/// `(branch, severity)` pairs from a `screen` output file. Islanding
/// entries come back as `+∞`.
pub fn read_severities(path: &Path) -> Result<Vec<(usize, f64)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
    let bad = |m: &str| Error::InvalidArgument(format!("{}: {m}", path.display()));
    if text.trim_start().starts_with('{') {
        let doc: Value = serde_json::from_str(&text).map_err(|e| bad(&e.to_string()))?;
        let entries = doc["data"]["entries"].as_array().ok_or_else(|| bad("no `data.entries` array"))?;
        entries
            .iter()
            .map(|e| {
                let branch = e["branch"].as_u64().ok_or_else(|| bad("entry without branch"))? as usize;
                let sev = match (&e["severity"], e["islanding"].as_bool()) {
                    (Value::Null, Some(true)) => f64::INFINITY,
                    (Value::Null, _) => f64::NAN,
                    (v, _) => v.as_f64().ok_or_else(|| bad("non-numeric severity"))?,
                };
                Ok((branch, sev))
            })
            .collect()
    } else {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let headers = rdr.headers().map_err(|e| bad(&e.to_string()))?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| bad(&format!("missing `{name}` column")));
        let (bi, si) = (col("branch")?, col("severity")?);
        rdr.records()
            .map(|r| {
                let r = r.map_err(|e| bad(&e.to_string()))?;
                let branch = r[bi].parse().map_err(|_| bad("bad branch index"))?;
                let sev = r[si].parse().map_err(|_| bad("bad severity"))?;
                Ok((branch, sev))
            })
            .collect()
    }
}

fn run_compare(a: &CompareArgs, stdout: &mut dyn Write) -> Result<()> {
    let p = read_severities(&a.predicted)?;
    let r = read_severities(&a.reference)?;
    let s = compare_severities(&p, &r);
    emit(a.out.as_deref(), &document("compare", summary_json(&s)), stdout)
}

fn run_dump(a: &DumpArgs, stdout: &mut dyn Write) -> Result<()> {
    let case = a.case.load()?;
    let mut text = serde_json::to_string_pretty(&case).expect("serializable");
    text.push('\n');
    emit(a.out.as_deref(), &text, stdout)
}

pub fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Solve(a) => run_solve(a, stdout),
        Command::Dclodf(a) => run_dclodf(a, stdout),
        Command::Sens(a) => run_sens(a, stdout),
        Command::Screen(a) => run_screen(a, stdout),
        Command::Compare(a) => run_compare(a, stdout),
        Command::Dump(a) => run_dump(a, stdout),
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { stderr.write_all(text.as_bytes()) } else { stdout.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(&cli, stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_INPUT }
        }
    }
}
