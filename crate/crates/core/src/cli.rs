//! The `usd` command line: flag grammar, run configuration, output files.
//!
//! Every output file starts with a provenance record holding the tool
//! version and the resolved configuration. Feeding that configuration back
//! through `--config` reproduces the file byte for byte.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::analytic::{p_bot_exact, HypothesisParams};
use crate::dynamics::{Model, OpinionCounts, TrialOutcome};
use crate::error::{Error, Result};
use crate::experiments::batch::{run_batch, with_threads, BatchConfig, BatchResult};
use crate::experiments::drift::{drift_suite, supported_states, DriftConfig, DriftReport, StateSampler, Verdict};
use crate::experiments::suites::{
    collapse_suite, scaling_suite, CollapseConfig, InitKind, ScalingConfig, ScalingReport,
};
use crate::experiments::{derive_seed, make_init, InitSpec, DEFAULT_LOWER_BOUND_C};
use crate::numeric::fmt17;
use crate::oracle::{exact_absorption, AbsorptionSolution, Precision, DEFAULT_STATE_CAP};

/// Exit status of a run whose checks did not all pass.
pub const EXIT_VERIFY_FAILED: i32 = 1;
/// Exit status of a malformed or infeasible invocation.
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "usd",
    version,
    about = "Undecided-state dynamics: simulation, exact oracles and checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Run independent trials and record outcomes and trajectories.
    Simulate(Flags),
    /// Consensus time statistics over a list of k.
    Scaling(Flags),
    /// One gossip round from the balanced all-decided state.
    Collapse(Flags),
    /// Check the moment formulas and one-step bounds against the oracles.
    Verify(Flags),
    /// Solve the absorbing chain from the initial state.
    Exact(Flags),
    /// Probability that one gossip round leaves every vertex undecided.
    Pbot(Flags),
}

#[derive(Args, Debug, Default)]
struct Flags {
    /// JSON run configuration; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<Model>,
    #[arg(long)]
    n: Option<u64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    k_list: Option<Vec<usize>>,
    /// balanced-decided | balanced-half | lower-bound[:C] | explicit:C1,C2,... | file:PATH
    #[arg(long)]
    init: Option<String>,
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_steps: Option<u64>,
    /// Trajectory cadence in steps; 0 disables trajectories.
    #[arg(long)]
    record_every: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    format: Option<Format>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    exact_precision: Option<Precision>,
    /// Number of random states checked by `verify`.
    #[arg(long)]
    states: Option<usize>,
    /// Monte-Carlo draws per state in `verify`.
    #[arg(long)]
    samples: Option<u64>,
    /// Reachable-state cap of `exact`.
    #[arg(long)]
    state_cap: Option<usize>,
    /// Inclusive k range `LO:HI` of the scaling slope fit.
    #[arg(long)]
    slope_range: Option<String>,
    /// Check every state with `--n` vertices instead of sampling.
    #[arg(long)]
    all_states: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandName {
    Simulate,
    Scaling,
    Collapse,
    Verify,
    Exact,
    Pbot,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::Config(format!("unknown format '{other}' (expected csv|json)"))),
        }
    }
}

impl Format {
    fn ext(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

/// Everything that determines a run. Missing fields take their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: CommandName,
    pub model: Model,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_list: Option<Vec<usize>>,
    pub init: String,
    pub trials: u64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record_every: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub exact_precision: Precision,
    pub states: usize,
    pub samples: u64,
    pub state_cap: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slope_range: Option<(usize, usize)>,
    pub all_states: bool,
    pub hypothesis: HypothesisParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: CommandName::Simulate,
            model: Model::Gossip,
            n: None,
            k: None,
            k_list: None,
            init: "balanced-half".into(),
            trials: 100,
            seed: 0,
            max_steps: None,
            record_every: None,
            out: None,
            format: None,
            threads: None,
            exact_precision: Precision::Double,
            states: 50,
            samples: 20_000,
            state_cap: DEFAULT_STATE_CAP,
            slope_range: None,
            all_states: false,
            hypothesis: HypothesisParams::default(),
        }
    }
}

impl RunConfig {
    fn apply(&mut self, f: Flags) -> Result<()> {
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = f.$field {
                    self.$field = Some(v);
                }
            )*};
        }
        set!(n, k, k_list, max_steps, record_every, out, format, threads);
        if let Some(m) = f.model {
            self.model = m;
        }
        if let Some(i) = f.init {
            self.init = i;
        }
        if let Some(t) = f.trials {
            self.trials = t;
        }
        if let Some(s) = f.seed {
            self.seed = s;
        }
        if let Some(p) = f.exact_precision {
            self.exact_precision = p;
        }
        if let Some(s) = f.states {
            self.states = s;
        }
        if let Some(s) = f.samples {
            self.samples = s;
        }
        if let Some(c) = f.state_cap {
            self.state_cap = c;
        }
        if let Some(r) = f.slope_range {
            self.slope_range = Some(parse_range(&r)?);
        }
        self.all_states |= f.all_states;
        Ok(())
    }

    fn format(&self) -> Format {
        self.format.unwrap_or(match self.command {
            CommandName::Exact | CommandName::Pbot => Format::Json,
            _ => Format::Csv,
        })
    }

    fn max_steps(&self) -> u64 {
        self.max_steps.unwrap_or(self.model.default_max_steps())
    }

    fn need_n(&self) -> Result<u64> {
        self.n.ok_or_else(|| Error::Config("--n is required".into()))
    }

    fn need_k(&self) -> Result<usize> {
        self.k.ok_or_else(|| Error::Config("--k is required".into()))
    }

    /// The configuration as echoed in provenance records: output location
    /// and thread count do not affect results and are left out.
    fn echo(&self) -> RunConfig {
        RunConfig {
            out: None,
            threads: None,
            format: Some(self.format()),
            ..self.clone()
        }
    }
}

fn parse_range(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("--slope-range expects LO:HI, got '{s}'"));
    let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
    let lo = lo.trim().parse().map_err(|_| bad())?;
    let hi = hi.trim().parse().map_err(|_| bad())?;
    if lo > hi {
        return Err(bad());
    }
    Ok((lo, hi))
}

/// Explicit initial state as stored in `file:` inits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitInit {
    pub n: u64,
    pub k: usize,
    pub counts: Vec<u64>,
    pub undecided: u64,
}

fn parse_counts(list: &str) -> Result<Vec<u64>> {
    list.split(',')
        .map(|c| {
            c.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad count '{c}' in --init explicit:{list}")))
        })
        .collect()
}

/// Parses the `--init` grammar. Layout kinds take `n` and `k` from the
/// config; `explicit:` fills any vertices beyond the listed counts with
/// undecided ones.
pub fn parse_init(cfg: &RunConfig) -> Result<InitSpec> {
    let s = cfg.init.as_str();
    let (head, arg) = match s.split_once(':') {
        Some((h, a)) => (h, Some(a)),
        None => (s, None),
    };
    let layout = |f: fn(u64, usize) -> InitSpec| -> Result<InitSpec> { Ok(f(cfg.need_n()?, cfg.need_k()?)) };
    match (head, arg) {
        ("balanced-decided", None) => layout(|n, k| InitSpec::BalancedDecided { n, k }),
        ("balanced-half", None) => layout(|n, k| InitSpec::BalancedHalf { n, k }),
        ("lower-bound", c) => {
            let c = match c {
                Some(c) => c
                    .parse()
                    .map_err(|_| Error::Config(format!("bad constant in --init {s}")))?,
                None => DEFAULT_LOWER_BOUND_C,
            };
            Ok(InitSpec::LowerBound {
                n: cfg.need_n()?,
                k: cfg.need_k()?,
                c,
            })
        }
        ("explicit", Some(list)) => {
            let counts = parse_counts(list)?;
            let decided: u64 = counts.iter().sum();
            let n = cfg.n.unwrap_or(decided);
            if decided > n {
                return Err(Error::Config(format!("explicit counts sum to {decided} > n = {n}")));
            }
            if cfg.k.is_some_and(|k| k != counts.len()) {
                return Err(Error::Config(format!(
                    "--k disagrees with {} explicit counts",
                    counts.len()
                )));
            }
            Ok(InitSpec::Explicit {
                counts,
                undecided: n - decided,
            })
        }
        ("file", Some(path)) => {
            let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("reading {path}: {e}")))?;
            let e: ExplicitInit =
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("parsing {path}: {e}")))?;
            if e.k != e.counts.len() || e.counts.iter().sum::<u64>() + e.undecided != e.n {
                return Err(Error::Config(format!("{path}: n, k, counts and undecided disagree")));
            }
            Ok(InitSpec::Explicit {
                counts: e.counts,
                undecided: e.undecided,
            })
        }
        _ => Err(Error::Config(format!(
            "unknown --init '{s}' (expected balanced-decided|balanced-half|lower-bound[:C]|explicit:C1,...|file:PATH)"
        ))),
    }
}

fn init_kind(cfg: &RunConfig) -> Result<InitKind> {
    let probe = RunConfig {
        n: Some(2),
        k: Some(1),
        ..cfg.clone()
    };
    match parse_init(&probe)? {
        InitSpec::BalancedDecided { .. } => Ok(InitKind::BalancedDecided),
        InitSpec::BalancedHalf { .. } => Ok(InitKind::BalancedHalf),
        InitSpec::LowerBound { c, .. } => Ok(InitKind::LowerBound { c }),
        InitSpec::Explicit { .. } => Err(Error::Config("scaling needs a layout init, not explicit counts".into())),
    }
}

/// Resolves the initial state. `file:` inits are rewritten as `explicit:` so
/// the echoed configuration does not depend on the file.
fn resolve_init(cfg: &mut RunConfig) -> Result<OpinionCounts> {
    let state = make_init(&parse_init(cfg)?)?;
    if cfg.init.starts_with("file:") {
        let list: Vec<String> = state.counts().iter().map(u64::to_string).collect();
        cfg.init = format!("explicit:{}", list.join(","));
        cfg.n = Some(state.n());
        cfg.k = Some(state.k());
    }
    Ok(state)
}

// Rendering.

/// Indented JSON with floats written to 17 significant digits.
fn render_json(v: &Value) -> String {
    let mut out = render_json_with(v, true);
    out.push('\n');
    out
}

/// Single-line form of [`render_json`].
fn render_json_compact(v: &Value) -> String {
    render_json_with(v, false)
}

fn render_json_with(v: &Value, pretty: bool) -> String {
    fn go(v: &Value, depth: usize, pretty: bool, out: &mut String) {
        let pad = |d: usize| if pretty { "  ".repeat(d) } else { String::new() };
        let (open_arr, open_obj, sep, close, colon) = if pretty {
            ("[\n", "{\n", ",\n", "\n", ": ")
        } else {
            ("[", "{", ",", "", ":")
        };
        match v {
            Value::Null | Value::Bool(_) | Value::String(_) => out.push_str(&v.to_string()),
            Value::Number(num) => match (num.as_u64(), num.as_i64()) {
                (Some(u), _) => out.push_str(&u.to_string()),
                (None, Some(i)) => out.push_str(&i.to_string()),
                _ => out.push_str(&fmt17(num.as_f64().unwrap_or(f64::NAN))),
            },
            Value::Array(items) if items.is_empty() => out.push_str("[]"),
            Value::Array(items) => {
                out.push_str(open_arr);
                for (i, item) in items.iter().enumerate() {
                    out.push_str(&pad(depth + 1));
                    go(item, depth + 1, pretty, out);
                    out.push_str(if i + 1 < items.len() { sep } else { close });
                }
                out.push_str(&pad(depth));
                out.push(']');
            }
            Value::Object(map) if map.is_empty() => out.push_str("{}"),
            Value::Object(map) => {
                out.push_str(open_obj);
                for (i, (key, item)) in map.iter().enumerate() {
                    out.push_str(&pad(depth + 1));
                    out.push_str(&Value::String(key.clone()).to_string());
                    out.push_str(colon);
                    go(item, depth + 1, pretty, out);
                    out.push_str(if i + 1 < map.len() { sep } else { close });
                }
                out.push_str(&pad(depth));
                out.push('}');
            }
        }
    }
    let mut out = String::new();
    go(v, 0, pretty, &mut out);
    out
}

fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("output types serialise to JSON")
}

fn provenance(cfg: &RunConfig) -> Value {
    json!({
        "tool": "usd",
        "version": env!("CARGO_PKG_VERSION"),
        "config": to_value(&cfg.echo()),
    })
}

/// Renders a table as CSV, or as JSON records keyed by the header.
fn render_table(cfg: &RunConfig, header: &[&str], rows: &[Vec<String>], extra: Option<(&str, Value)>) -> String {
    match cfg.format() {
        Format::Csv => {
            let mut out = String::new();
            let _ = writeln!(out, "# provenance: {}", render_json_compact(&provenance(cfg)));
            let _ = writeln!(out, "{}", header.join(","));
            for r in rows {
                let _ = writeln!(out, "{}", r.join(","));
            }
            out
        }
        Format::Json => {
            let records: Vec<Value> = rows
                .iter()
                .map(|r| {
                    let obj = header
                        .iter()
                        .zip(r)
                        .map(|(h, cell)| ((*h).to_string(), cell_value(cell)))
                        .collect();
                    Value::Object(obj)
                })
                .collect();
            let mut doc = json!({ "provenance": provenance(cfg), "rows": records });
            if let Some((key, v)) = extra {
                doc[key] = v;
            }
            render_json(&doc)
        }
    }
}

/// CSV cell back to a typed JSON value.
fn cell_value(cell: &str) -> Value {
    if cell.is_empty() {
        Value::Null
    } else if let Ok(u) = cell.parse::<u64>() {
        Value::from(u)
    } else if let Ok(f) = cell.parse::<f64>() {
        Value::from(f)
    } else {
        Value::String(cell.to_string())
    }
}

fn render_doc(cfg: &RunConfig, body: Value) -> String {
    match cfg.format() {
        Format::Json => render_json(&json!({ "provenance": provenance(cfg), "result": body })),
        Format::Csv => {
            let mut out = String::new();
            let _ = writeln!(out, "# provenance: {}", render_json_compact(&provenance(cfg)));
            let _ = writeln!(out, "key,value");
            let mut cells = Vec::new();
            flatten("", &body, &mut cells);
            for (k, v) in cells {
                let _ = writeln!(out, "{k},{v}");
            }
            out
        }
    }
}

/// `key,value` cells of a JSON document; nested keys are joined with `.`
/// and arrays with `;`.
fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    let scalar = |x: &Value| match x {
        Value::Number(num) if num.is_f64() => fmt17(num.as_f64().unwrap_or(f64::NAN)),
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    };
    match v {
        Value::Object(map) => {
            for (k, item) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, item, out);
            }
        }
        Value::Array(items) => {
            let joined = items.iter().map(scalar).collect::<Vec<_>>().join(";");
            out.push((prefix.to_string(), joined));
        }
        other => out.push((prefix.to_string(), scalar(other))),
    }
}

fn opt_cell<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn summary_table(cfg: &RunConfig, res: &BatchResult) -> String {
    let rows: Vec<Vec<String>> = res
        .records
        .iter()
        .map(|r| {
            vec![
                r.trial.to_string(),
                r.outcome_name().to_string(),
                opt_cell(r.outcome.winner()),
                r.steps().to_string(),
            ]
        })
        .collect();
    render_table(cfg, &["trial", "outcome", "winner", "steps"], &rows, None)
}

fn trajectory_table(cfg: &RunConfig, res: &BatchResult) -> String {
    let rows: Vec<Vec<String>> = res
        .rows
        .iter()
        .map(|r| {
            let s = &r.snapshot;
            vec![
                r.trial.to_string(),
                r.step.to_string(),
                fmt17(s.beta),
                fmt17(s.gamma),
                fmt17(s.psi),
                fmt17(s.gamma_tilde),
                fmt17(s.alpha_max),
                fmt17(s.alpha_max_tilde),
                s.argmax.to_string(),
                s.alive.to_string(),
                fmt17(s.md),
                r.events_field(),
            ]
        })
        .collect();
    render_table(
        cfg,
        &[
            "trial",
            "step",
            "beta",
            "gamma",
            "psi",
            "gamma_tilde",
            "alpha_max",
            "alpha_max_tilde",
            "argmax",
            "alive",
            "md",
            "events",
        ],
        &rows,
        None,
    )
}

fn scaling_table(cfg: &RunConfig, rep: &ScalingReport) -> String {
    let rows: Vec<Vec<String>> = rep
        .rows
        .iter()
        .map(|r| {
            vec![
                r.k.to_string(),
                r.trials.to_string(),
                fmt17(r.success_rate),
                opt_cell(r.median_steps),
                opt_cell(r.q10),
                opt_cell(r.q90),
            ]
        })
        .collect();
    let slope = json!({ "slope": rep.slope, "slope_range": rep.slope_range });
    render_table(
        cfg,
        &["k", "trials", "success_rate", "median_steps", "q10", "q90"],
        &rows,
        Some(("fit", slope)),
    )
}

fn verify_table(cfg: &RunConfig, rep: &DriftReport) -> String {
    let rows: Vec<Vec<String>> = rep
        .rows
        .iter()
        .map(|r| {
            vec![
                r.check_name.clone(),
                r.model.as_str().to_string(),
                r.n.to_string(),
                r.state_id.clone(),
                fmt17(r.lhs),
                fmt17(r.rhs),
                r.relation.as_str().to_string(),
                fmt17(r.tolerance),
                match r.verdict {
                    Verdict::Pass => "true",
                    Verdict::Fail => "false",
                    Verdict::Flagged => "flagged",
                }
                .to_string(),
            ]
        })
        .collect();
    render_table(
        cfg,
        &[
            "check_name",
            "model",
            "n",
            "k_or_state_id",
            "lhs",
            "rhs",
            "relation",
            "tolerance",
            "pass",
        ],
        &rows,
        None,
    )
}

/// Named output files plus a short human summary.
struct Output {
    files: Vec<(String, String)>,
    summary: String,
    failed: bool,
}

fn run_simulate(cfg: &mut RunConfig) -> Result<Output> {
    let init = resolve_init(cfg)?;
    let record_every = cfg.record_every.unwrap_or(match cfg.model {
        Model::Gossip => 1,
        Model::Pp => init.n(),
    });
    let res = run_batch(&BatchConfig {
        model: cfg.model,
        init: init.clone(),
        trials: cfg.trials,
        master_seed: cfg.seed,
        max_steps: cfg.max_steps(),
        record_every,
        threads: None,
    })?;
    let ext = cfg.format().ext();
    let mut files = vec![(format!("summary.{ext}"), summary_table(cfg, &res))];
    if record_every > 0 {
        files.push((format!("trajectory.{ext}"), trajectory_table(cfg, &res)));
    }
    let count = |f: fn(&TrialOutcome) -> bool| res.records.iter().filter(|r| f(&r.outcome)).count();
    let summary = format!(
        "{} {} trials from {init}: {} consensus, {} failure, {} timeout",
        cfg.model,
        cfg.trials,
        count(|o| matches!(o, TrialOutcome::Consensus { .. })),
        count(|o| matches!(o, TrialOutcome::Failure { .. })),
        count(|o| matches!(o, TrialOutcome::Timeout { .. })),
    );
    Ok(Output {
        files,
        summary,
        failed: false,
    })
}

fn run_scaling(cfg: &mut RunConfig) -> Result<Output> {
    let k_list = match (&cfg.k_list, cfg.k) {
        (Some(list), _) => list.clone(),
        (None, Some(k)) => vec![k],
        (None, None) => return Err(Error::Config("--k-list (or --k) is required".into())),
    };
    let rep = scaling_suite(&ScalingConfig {
        model: cfg.model,
        n: cfg.need_n()?,
        k_list,
        init: init_kind(cfg)?,
        trials: cfg.trials,
        master_seed: cfg.seed,
        max_steps: cfg.max_steps(),
        threads: None,
        slope_range: cfg.slope_range,
    })?;
    let mut summary = String::new();
    for r in &rep.rows {
        let _ = writeln!(
            summary,
            "k = {:>6}  success {:.3}  median {}  q10 {}  q90 {}",
            r.k,
            r.success_rate,
            opt_cell(r.median_steps),
            opt_cell(r.q10),
            opt_cell(r.q90)
        );
    }
    let _ = write!(
        summary,
        "log-log slope: {}",
        rep.slope.map(fmt17).unwrap_or_else(|| "n/a".into())
    );
    Ok(Output {
        files: vec![(format!("scaling.{}", cfg.format().ext()), scaling_table(cfg, &rep))],
        summary,
        failed: false,
    })
}

fn run_collapse(cfg: &mut RunConfig) -> Result<Output> {
    if cfg.init != "balanced-decided" {
        return Err(Error::Config("collapse starts from --init balanced-decided".into()));
    }
    let rep = collapse_suite(&CollapseConfig {
        n: cfg.need_n()?,
        k: cfg.need_k()?,
        trials: cfg.trials,
        master_seed: cfg.seed,
        threads: None,
    })?;
    let summary = format!(
        "mean beta1 {} +- {} (gamma0 {}); survivors <= {:.1} in {:.4} of trials; all-undecided rate {} vs exact {}",
        fmt17(rep.mean_beta1),
        fmt17(rep.stderr_beta1),
        fmt17(rep.gamma0),
        rep.survivor_bound,
        rep.within_bound_fraction,
        fmt17(rep.all_undecided_rate),
        fmt17(rep.p_bot_exact)
    );
    Ok(Output {
        files: vec![(
            format!("collapse.{}", cfg.format().ext()),
            render_doc(cfg, to_value(&rep)),
        )],
        summary,
        failed: false,
    })
}

fn run_verify(cfg: &mut RunConfig) -> Result<Output> {
    let states = if cfg.all_states {
        supported_states(cfg.need_n()?)
    } else {
        let (n_min, n_max) = cfg.n.map_or((2, 100_000), |n| (n, n));
        let sampler = StateSampler {
            n_min,
            n_max,
            k_min: 1,
            k_max: cfg.k.unwrap_or(64),
            beta_min: 0.0,
            beta_max: 1.0,
            gamma_max: None,
        };
        sampler.sample(cfg.states, derive_seed(cfg.seed, 0))?
    };
    let mut dcfg = DriftConfig::new(cfg.model);
    dcfg.hypothesis = cfg.hypothesis.clone();
    dcfg.samples = cfg.samples;
    dcfg.master_seed = cfg.seed;
    let rep = drift_suite(&dcfg, &states)?;
    let failures = rep.failures().count();
    let summary = format!(
        "{} checks over {} states: {} failed, {} flagged",
        rep.rows.len(),
        states.len(),
        failures,
        rep.flagged().count()
    );
    Ok(Output {
        files: vec![(format!("verify.{}", cfg.format().ext()), verify_table(cfg, &rep))],
        summary,
        failed: failures > 0,
    })
}

fn run_exact(cfg: &mut RunConfig) -> Result<Output> {
    let init = resolve_init(cfg)?;
    let sol: AbsorptionSolution = exact_absorption(cfg.model, &init, cfg.state_cap, cfg.exact_precision)?;
    let summary = format!(
        "{} from {init}: failure probability {}, expected steps {} ({} reachable states)",
        cfg.model,
        fmt17(sol.failure_probability),
        fmt17(sol.expected_steps),
        sol.reachable_states
    );
    let mut body = to_value(&sol);
    body["start"] = Value::String(init.to_string());
    Ok(Output {
        files: vec![(format!("exact.{}", cfg.format().ext()), render_doc(cfg, body))],
        summary,
        failed: false,
    })
}

fn run_pbot(cfg: &mut RunConfig) -> Result<Output> {
    let init = resolve_init(cfg)?;
    let p = p_bot_exact(&init);
    let body = json!({ "n": init.n(), "k": init.k(), "p_bot": p });
    Ok(Output {
        files: vec![(format!("pbot.{}", cfg.format().ext()), render_doc(cfg, body))],
        summary: format!("p_bot = {}", fmt17(p)),
        failed: false,
    })
}

fn execute(cmd: CommandName, mut cfg: RunConfig) -> Result<bool> {
    cfg.command = cmd;
    let threads = cfg.threads;
    let out_dir = cfg.out.clone();
    let output = with_threads(threads, move || match cmd {
        CommandName::Simulate => run_simulate(&mut cfg),
        CommandName::Scaling => run_scaling(&mut cfg),
        CommandName::Collapse => run_collapse(&mut cfg),
        CommandName::Verify => run_verify(&mut cfg),
        CommandName::Exact => run_exact(&mut cfg),
        CommandName::Pbot => run_pbot(&mut cfg),
    })??;
    match out_dir {
        Some(dir) => {
            write_files(&dir, &output.files)?;
            println!("{}", output.summary);
        }
        None => {
            for (_, text) in &output.files {
                print!("{text}");
            }
        }
    }
    Ok(!output.failed)
}

fn write_files(dir: &Path, files: &[(String, String)]) -> Result<()> {
    let io = |e: std::io::Error| Error::Config(format!("writing to {}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(io)?;
    for (name, text) in files {
        fs::write(dir.join(name), text).map_err(io)?;
    }
    Ok(())
}

fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("reading {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("parsing {}: {e}", path.display())))
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let (cmd, flags) = match cli.command {
        Cmd::Simulate(f) => (CommandName::Simulate, f),
        Cmd::Scaling(f) => (CommandName::Scaling, f),
        Cmd::Collapse(f) => (CommandName::Collapse, f),
        Cmd::Verify(f) => (CommandName::Verify, f),
        Cmd::Exact(f) => (CommandName::Exact, f),
        Cmd::Pbot(f) => (CommandName::Pbot, f),
    };
    let result = (|| {
        let mut cfg = match &flags.config {
            Some(path) => load_config(path)?,
            None => RunConfig::default(),
        };
        cfg.apply(flags)?;
        execute(cmd, cfg)
    })();
    match result {
        Ok(true) => 0,
        Ok(false) => EXIT_VERIFY_FAILED,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}
