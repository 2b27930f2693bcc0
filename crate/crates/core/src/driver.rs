//! Experiment driver behind the `qcs` binary: single-scenario evaluation,
//! bundled figure-data exports, Cartesian parameter sweeps, and the
//! simulation report, all emitted as stable CSV.
//!
//! CSV contract: a header row is always written; unbounded values render
//! as the literal token `inf`; absent values render as empty fields;
//! region labels are lowercase tokens. Reruns with identical inputs and
//! seed produce byte-identical output. Grid points are evaluated
//! concurrently but rows are written in grid order.

use std::io::Write;
use std::str::FromStr;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::Value;

use crate::capacity;
use crate::error::{QcsError, Result};
use crate::model::{presets, Scenario, Strategy, Window};
use crate::queueing::{self, SojournReport, WaitMethod};
use crate::sim;
use crate::window::{b_moments, BMoments, McBudget, MomentMethod, WindowSpec};

/// How the mean wait is obtained: `Analytic` uses the exact M/G/1 result
/// or the multi-server approximation; `Simulate` runs the discrete-event
/// simulator; `Auto` picks the analytic route (one always exists).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodChoice {
    Auto,
    Analytic,
    Simulate,
}

impl FromStr for MethodChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "auto" => Ok(MethodChoice::Auto),
            "analytic" => Ok(MethodChoice::Analytic),
            "simulate" => Ok(MethodChoice::Simulate),
            other => Err(format!(
                "unknown method {other:?}; use auto|analytic|simulate"
            )),
        }
    }
}

/// Knobs shared by every command.
#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Monte Carlo samples per moment estimate; figure commands pick
    /// their own desk-scale default when unset.
    pub samples: Option<u64>,
    pub seed: u64,
    pub method: MethodChoice,
    /// Simulation replications.
    pub replications: u32,
    /// Measured requests per replication.
    pub measured: u64,
    /// Warmup override; the simulator's heuristic applies when unset.
    pub warmup: Option<u64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            samples: None,
            seed: 1,
            method: MethodChoice::Auto,
            replications: 10,
            measured: 20_000,
            warmup: None,
        }
    }
}

impl RunOptions {
    fn budget(&self, default_samples: u64, seed: u64) -> McBudget {
        McBudget::new(self.samples.unwrap_or(default_samples), seed)
    }
}

/// Splits one master seed into independent per-task seeds (splitmix64),
/// so concurrent grid points draw from unrelated streams no matter which
/// worker picks them up.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub const EVAL_HEADER: &str = "u,L_km,N,k,n,w,lambda0_per_us,strategy,m,s,p,lambda_per_us,\
window_method,e_b,e_b_se,e_b2,e_t_service,e_t_service2,c2_service,rho,stable,wait_method,\
e_t_wait,mst,mst_se,error";

/// Everything the eval row reports for one scenario.
#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub scenario: Scenario,
    pub batch_size: u32,
    pub servers: u32,
    pub p: f64,
    pub lambda: f64,
    pub window_method: MomentMethod,
    pub e_b: f64,
    pub e_b_se: Option<f64>,
    pub e_b2: f64,
    pub e_t_service: f64,
    pub e_t_service2: f64,
    pub c2_service: f64,
    pub rho: f64,
    pub stable: bool,
    pub wait_method: WaitMethod,
    pub e_t_wait: f64,
    pub mst: f64,
    pub mst_se: Option<f64>,
}

/// Full evaluation of one scenario under the chosen method.
pub fn eval_scenario(scenario: &Scenario, opts: &RunOptions) -> Result<EvalOutcome> {
    let vs = scenario.validate()?;
    let mc = opts.budget(100_000, opts.seed);
    let report = queueing::analyze(&vs, &mc)?;

    let mut outcome = EvalOutcome {
        scenario: scenario.clone(),
        batch_size: vs.batch_size,
        servers: vs.servers,
        p: vs.p,
        lambda: vs.arrival_rate,
        window_method: report.b.method,
        e_b: report.b.moments.m1,
        e_b_se: report.b.stderr.map(|e| e.se_m1),
        e_b2: report.b.moments.m2,
        e_t_service: report.service.m1,
        e_t_service2: report.service.m2,
        c2_service: crate::service::c2_service(&report.service),
        rho: report.rho,
        stable: report.stable,
        wait_method: report.wait.method,
        e_t_wait: report.wait.mean_wait,
        mst: report.mst,
        mst_se: report.mst_se,
    };

    if opts.method == MethodChoice::Simulate && report.stable {
        let mut cfg = sim::SimConfig::new(vs, opts.measured, opts.replications, opts.seed)?;
        if let Some(w) = opts.warmup {
            cfg.warmup_requests = w;
        }
        let sim_report = sim::run(&cfg)?;
        outcome.wait_method = WaitMethod::Simulated;
        outcome.e_t_wait = sim_report.mean_wait.value;
        outcome.mst = sim_report.mean_sojourn.value;
        outcome.mst_se = Some(sim_report.mean_sojourn.se);
    }
    Ok(outcome)
}

/// Writes the eval header plus one row; the row is written (with `inf`
/// markers) even when the system is overloaded so callers can report the
/// load before exiting.
pub fn eval(scenario: &Scenario, opts: &RunOptions, out: &mut dyn Write) -> Result<EvalOutcome> {
    let outcome = eval_scenario(scenario, opts)?;
    writeln!(out, "{EVAL_HEADER}")?;
    let raw = serde_json::to_value(scenario)?;
    writeln!(out, "{}", render_eval_row(&raw, &Ok(outcome.clone())))?;
    Ok(outcome)
}

fn fmt_f64(x: f64) -> String {
    if x.is_infinite() {
        "inf".to_string()
    } else {
        format!("{x}")
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// Scenario identity columns pulled from the raw JSON object, so failed
/// rows in a sweep still carry their grid coordinates.
fn identity_columns(raw: &Value) -> String {
    let field = |key: &str| -> String {
        match raw.get(key) {
            Some(Value::Number(n)) => n.to_string(),
            Some(Value::String(s)) => s.clone(),
            _ => String::new(),
        }
    };
    [
        field("u"),
        field("L_km"),
        field("N"),
        field("k"),
        field("n"),
        field("w"),
        field("lambda0_per_us"),
        field("strategy"),
    ]
    .join(",")
}

fn render_eval_row(raw: &Value, outcome: &Result<EvalOutcome>) -> String {
    let identity = identity_columns(raw);
    match outcome {
        Ok(o) => format!(
            "{identity},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},",
            o.batch_size,
            o.servers,
            fmt_f64(o.p),
            fmt_f64(o.lambda),
            o.window_method.label(),
            fmt_f64(o.e_b),
            fmt_opt(o.e_b_se),
            fmt_f64(o.e_b2),
            fmt_f64(o.e_t_service),
            fmt_f64(o.e_t_service2),
            fmt_f64(o.c2_service),
            fmt_f64(o.rho),
            o.stable,
            o.wait_method.label(),
            fmt_f64(o.e_t_wait),
            fmt_f64(o.mst),
            fmt_opt(o.mst_se),
        ),
        // 17 blank output fields, then the error message.
        Err(e) => format!(
            "{identity}{}{}",
            ",".repeat(17),
            e.to_string().replace(',', ";")
        ),
    }
}

pub const SIM_HEADER: &str = "replications,warmup_requests,measured_requests,mean_wait,\
mean_wait_se,mean_service,mean_service_se,mean_sojourn,mean_sojourn_se,mean_in_system,\
mean_in_system_se,throughput_per_us,throughput_per_us_se,utilization,requests_completed";

/// Runs the discrete-event simulator and writes a one-row report.
pub fn simulate(scenario: &Scenario, opts: &RunOptions, out: &mut dyn Write) -> Result<()> {
    let vs = scenario.validate()?;
    let mut cfg = sim::SimConfig::new(vs, opts.measured, opts.replications, opts.seed)?;
    if let Some(w) = opts.warmup {
        cfg.warmup_requests = w;
    }
    let report = sim::run(&cfg)?;
    writeln!(out, "{SIM_HEADER}")?;
    writeln!(
        out,
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        cfg.replications,
        cfg.warmup_requests,
        cfg.measured_requests,
        fmt_f64(report.mean_wait.value),
        fmt_f64(report.mean_wait.se),
        fmt_f64(report.mean_service.value),
        fmt_f64(report.mean_service.se),
        fmt_f64(report.mean_sojourn.value),
        fmt_f64(report.mean_sojourn.se),
        fmt_f64(report.mean_in_system.value),
        fmt_f64(report.mean_in_system.se),
        fmt_f64(report.throughput.value),
        fmt_f64(report.throughput.se),
        fmt_f64(report.utilization),
        report.requests_completed,
    )?;
    Ok(())
}

/// Region classification for the strategy-comparison grids.
pub fn region_label(seq: &SojournReport, par: &SojournReport) -> &'static str {
    match (seq.stable, par.stable) {
        (false, false) => "none",
        (true, false) => "s_only",
        (false, true) => "p_only",
        (true, true) => {
            if seq.mst < par.mst {
                "seq_better"
            } else {
                "par_better"
            }
        }
    }
}

/// Relative MST difference (sequential - parallel) / parallel, with its
/// standard error when either side is a Monte Carlo estimate.
fn rel_diff(seq: &SojournReport, par: &SojournReport) -> (Option<f64>, Option<f64>) {
    if !(seq.stable && par.stable) {
        return (None, None);
    }
    let diff = (seq.mst - par.mst) / par.mst;
    let se = match (seq.mst_se, par.mst_se) {
        (None, None) => None,
        (s, p) => {
            let s = s.unwrap_or(0.0);
            let p = p.unwrap_or(0.0);
            let var = (s / par.mst).powi(2) + (seq.mst * p / (par.mst * par.mst)).powi(2);
            Some(var.sqrt())
        }
    };
    (Some(diff), se)
}

/// Emits one figure's data grid. Recognized names: fig3, fig4a, fig4b,
/// fig5, fig7, fig8, fig9, fig10, fig11.
pub fn figure(name: &str, opts: &RunOptions, out: &mut dyn Write) -> Result<()> {
    match name {
        "fig3" => fig3(opts, out),
        "fig4a" => fig4(false, opts, out),
        "fig4b" => fig4(true, opts, out),
        "fig5" => fig_lcrit(&[Strategy::Sequential], "N,u,l_crit_km", opts, out),
        "fig7" => fig7(opts, out),
        "fig8" => fig8(opts, out),
        "fig9" => fig9(opts, out),
        "fig10" => fig10(opts, out),
        "fig11" => fig_lcrit(
            &[Strategy::Sequential, Strategy::Parallel],
            "strategy,N,u,l_crit_km",
            opts,
            out,
        ),
        other => Err(QcsError::UnknownFigure(other.to_string())),
    }
}

/// Critical users vs station count, near-deterministic short-range
/// hardware.
fn fig3(opts: &RunOptions, out: &mut dyn Write) -> Result<()> {
    writeln!(out, "k,strategy,u_crit")?;
    let mc = opts.budget(100_000, opts.seed);
    for k in 1..=15u32 {
        for strategy in [Strategy::Sequential, Strategy::Parallel] {
            let vs = presets::small_budget(2, k, strategy).validate()?;
            let r = capacity::u_crit(&vs, &mc)?;
            writeln!(out, "{k},{strategy},{}", r.value as u64)?;
        }
    }
    Ok(())
}

/// Builds sojourn reports for one strategy across a (u, k) grid, caching
/// window moments per batch size (they do not depend on u).
fn strategy_grid(
    template: &dyn Fn(u32, u32, Strategy) -> Scenario,
    strategy: Strategy,
    users: &[u32],
    stations: &[u32],
    mc_samples: u64,
    master_seed: u64,
) -> Result<Vec<SojournReport>> {
    // One moment evaluation per distinct batch size, seeded by batch size
    // so both strategies and all user counts share the same estimates.
    let mut moment_cache: IndexMap<u32, BMoments> = IndexMap::new();
    for &k in stations {
        let sc = template(users[0], k, strategy);
        let vs = sc.validate()?;
        if !moment_cache.contains_key(&vs.batch_size) {
            let mc = McBudget::new(mc_samples, derive_seed(master_seed, vs.batch_size as u64));
            let b = b_moments(&vs.window_spec(), &mc)?;
            moment_cache.insert(vs.batch_size, b);
        }
    }
    let mut rows = Vec::with_capacity(users.len() * stations.len());
    for &u in users {
        for &k in stations {
            let vs = template(u, k, strategy).validate()?;
            let b = moment_cache[&vs.batch_size];
            rows.push(queueing::analyze_with(&vs, &b));
        }
    }
    Ok(rows)
}

fn write_region_rows(
    out: &mut dyn Write,
    prefix: &str,
    users: &[u32],
    stations: &[u32],
    seq: &[SojournReport],
    par: &[SojournReport],
) -> Result<()> {
    for (i, (&u, &k)) in users
        .iter()
        .flat_map(|u| stations.iter().map(move |k| (u, k)))
        .enumerate()
    {
        let (diff, diff_se) = rel_diff(&seq[i], &par[i]);
        writeln!(
            out,
            "{prefix}{u},{k},{},{},{},{},{},{},{}",
            fmt_f64(seq[i].mst),
            fmt_opt(seq[i].mst_se),
            fmt_f64(par[i].mst),
            fmt_opt(par[i].mst_se),
            fmt_opt(diff),
            fmt_opt(diff_se),
            region_label(&seq[i], &par[i]),
        )?;
    }
    Ok(())
}

/// Strategy comparison over the (u, k) grid: small budget (a) or the
/// lossy 7.5 km all-photonic case with an 8-batch window (b).
fn fig4(large_budget: bool, opts: &RunOptions, out: &mut dyn Write) -> Result<()> {
    writeln!(
        out,
        "u,k,mst_seq,mst_seq_se,mst_par,mst_par_se,rel_diff,rel_diff_se,label"
    )?;
    let users: Vec<u32> = (2..=20).collect();
    let stations: Vec<u32> = (1..=15).collect();
    let template = move |u: u32, k: u32, s: Strategy| -> Scenario {
        if large_budget {
            presets::large_budget(u, k, s, Window::Finite(8))
        } else {
            presets::small_budget(u, k, s)
        }
    };
    let samples = opts.samples.unwrap_or(100_000);
    let seq = strategy_grid(
        &template,
        Strategy::Sequential,
        &users,
        &stations,
        samples,
        opts.seed,
    )?;
    let par = strategy_grid(
        &template,
        Strategy::Parallel,
        &users,
        &stations,
        samples,
        opts.seed,
    )?;
    write_region_rows(out, "", &users, &stations, &seq, &par)
}

/// Critical distance vs user count for several repeater counts
/// (sequential only for fig5; both strategies for fig11).
fn fig_lcrit(
    strategies: &[Strategy],
    header: &str,
    opts: &RunOptions,
    out: &mut dyn Write,
) -> Result<()> {
    writeln!(out, "{header}")?;
    let mc = opts.budget(100_000, opts.seed);
    let both = strategies.len() > 1;
    for &strategy in strategies {
        for &repeaters in &[0u32, 1, 2, 5, 10] {
            for u in 2..=20u32 {
                let mut sc = presets::large_budget(u, 12, strategy, Window::Infinite);
                sc.network.repeaters = repeaters;
                let r = capacity::l_crit(&sc, u, &mc)?;
                if both {
                    writeln!(out, "{strategy},{repeaters},{u},{}", fmt_f64(r.value))?;
                } else {
                    writeln!(out, "{repeaters},{u},{}", fmt_f64(r.value))?;
                }
            }
        }
    }
    Ok(())
}

/// Squared coefficient of variation of the window problem across the four
/// bundled parameter families, estimated by sampling.
fn fig7(opts: &RunOptions, out: &mut dyn Write) -> Result<()> {
    writeln!(out, "panel,n,w,p,m,c2,c2_se")?;
    let windows = |n: u32, extra: &[u32]| -> Vec<Window> {
        let mut v: Vec<Window> = extra.iter().map(|&w| Window::Finite(w)).collect();
        v.insert(0, Window::Finite(n));
        v.push(Window::Infinite);
        v
    };
    // (panel, n, w, p, m)
    let mut points: Vec<(&str, u32, Window, f64, u32)> = Vec::new();
    for &p in &[0.5, 0.7, 0.9, 0.95] {
        for w in windows(7, &[8, 10, 14]) {
            points.push(("a", 7, w, p, 3));
        }
    }
    for m in 1..=6u32 {
        for w in windows(7, &[8, 10]) {
            points.push(("b", 7, w, 0.7, m));
        }
    }
    for &n in &[2u32, 4, 7, 10] {
        for w in windows(n, &[n + 3]) {
            points.push(("c", n, w, 0.7, 3));
        }
    }
    for &p in &[0.6, 0.7, 0.8, 0.95] {
        for w in windows(7, &[8, 10]) {
            points.push(("d", 7, w, p, 1));
        }
    }

    let samples = opts.samples.unwrap_or(10_000);
    let rows: Vec<Result<String>> = points
        .par_iter()
        .enumerate()
        .map(|(i, &(panel, n, w, p, m))| {
            let spec = WindowSpec::new(n, w, p, m)?;
            let seed = derive_seed(opts.seed, i as u64);
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
            let est = spec.sample_moments(samples, &mut rng)?;
            let (m1, m2) = (est.moments.m1, est.moments.m2);
            let c2 = (m2 / (m1 * m1) - 1.0).max(0.0);
            // Delta method on c2 = m2/m1^2 - 1.
            let g1 = -2.0 * m2 / (m1 * m1 * m1);
            let g2 = 1.0 / (m1 * m1);
            let var = g1 * g1 * est.se_m1 * est.se_m1
                + g2 * g2 * est.se_m2 * est.se_m2
                + 2.0 * g1 * g2 * est.cov;
            Ok(format!(
                "{panel},{n},{w},{p},{m},{},{}",
                fmt_f64(c2),
                fmt_f64(var.max(0.0).sqrt())
            ))
        })
        .collect();
    for row in rows {
        writeln!(out, "{}", row?)?;
    }
    Ok(())
}

/// The (N, L) pairs where the all-photonic cost optimum sits, with the
/// success probability near 0.7.
const COST_OPTIMAL_ARMS: [(u32, f64); 3] = [(0, 7.5), (1, 13.0), (5, 30.0)];

/// Critical users vs station count under probabilistic delivery, across
/// window sizes and cost-optimal geometries.
fn fig8(opts: &RunOptions, out: &mut dyn Write) -> Result<()> {
    writeln!(out, "w,L_km,N,k,strategy,u_crit")?;
    let samples = opts.samples.unwrap_or(10_000);
    let mut tasks = Vec::new();
    for window in [
        Window::Infinite,
        Window::Finite(10),
        Window::Finite(8),
        Window::Finite(7),
    ] {
        for (repeaters, arm_km) in COST_OPTIMAL_ARMS {
            for k in 1..=15u32 {
                for strategy in [Strategy::Sequential, Strategy::Parallel] {
                    tasks.push((window, repeaters, arm_km, k, strategy));
                }
            }
        }
    }
    let rows: Vec<Result<String>> = tasks
        .par_iter()
        .enumerate()
        .map(|(i, &(window, repeaters, arm_km, k, strategy))| {
            let mut sc = presets::large_budget(2, k, strategy, window);
            sc.network.repeaters = repeaters;
            sc.network.arm_km = arm_km;
            let vs = sc.validate()?;
            let mc = McBudget::new(samples, derive_seed(opts.seed, i as u64));
            let r = capacity::u_crit(&vs, &mc)?;
            Ok(format!(
                "{window},{arm_km},{repeaters},{k},{strategy},{}",
                r.value as u64
            ))
        })
        .collect();
    for row in rows {
        writeln!(out, "{}", row?)?;
    }
    Ok(())
}

/// Mean sojourn time vs user count: analytic small-budget panel (a) and
/// simulated lossy panel (b).
fn fig9(opts: &RunOptions, out: &mut dyn Write) -> Result<()> {
    writeln!(out, "panel,u,strategy,mst,mst_se,method")?;
    let mc = opts.budget(100_000, opts.seed);
    for u in 2..=15u32 {
        for strategy in [Strategy::Sequential, Strategy::Parallel] {
            let vs = presets::small_budget(u, 7, strategy).validate()?;
            let report = queueing::analyze(&vs, &mc)?;
            writeln!(
                out,
                "a,{u},{strategy},{},{},analytic",
                fmt_f64(report.mst),
                fmt_opt(report.mst_se)
            )?;
        }
    }
    // Lossy panel: k = 2, w = 8; simulate wherever a steady state exists.
    let samples = opts.samples.unwrap_or(100_000);
    for u in 2..=8u32 {
        for strategy in [Strategy::Sequential, Strategy::Parallel] {
            let sc = presets::large_budget(u, 2, strategy, Window::Finite(8));
            let vs = sc.validate()?;
            let seed = derive_seed(
                opts.seed,
                1000 + u as u64 * 2 + (strategy == Strategy::Parallel) as u64,
            );
            let analytic = queueing::analyze(&vs, &McBudget::new(samples, seed))?;
            if !analytic.stable {
                writeln!(out, "b,{u},{strategy},inf,,analytic")?;
                continue;
            }
            let cfg = sim::SimConfig::new(vs, opts.measured, opts.replications, seed)?;
            let report = sim::run(&cfg)?;
            writeln!(
                out,
                "b,{u},{strategy},{},{},simulated",
                fmt_f64(report.mean_sojourn.value),
                fmt_f64(report.mean_sojourn.se)
            )?;
        }
    }
    Ok(())
}

/// Strategy comparison grids across window sizes and cost-optimal
/// geometries (the multi-panel companion of fig4b).
fn fig10(opts: &RunOptions, out: &mut dyn Write) -> Result<()> {
    writeln!(
        out,
        "w,L_km,N,u,k,mst_seq,mst_seq_se,mst_par,mst_par_se,rel_diff,rel_diff_se,label"
    )?;
    let users: Vec<u32> = (2..=14).collect();
    let stations: Vec<u32> = (1..=8).collect();
    let samples = opts.samples.unwrap_or(10_000);
    for (panel, window) in [
        Window::Infinite,
        Window::Finite(10),
        Window::Finite(8),
        Window::Finite(7),
    ]
    .into_iter()
    .enumerate()
    {
        for (repeaters, arm_km) in COST_OPTIMAL_ARMS {
            let template = move |u: u32, k: u32, s: Strategy| -> Scenario {
                let mut sc = presets::large_budget(u, k, s, window);
                sc.network.repeaters = repeaters;
                sc.network.arm_km = arm_km;
                sc
            };
            let panel_seed = derive_seed(opts.seed, (panel as u64) << 8 | repeaters as u64);
            let seq = strategy_grid(
                &template,
                Strategy::Sequential,
                &users,
                &stations,
                samples,
                panel_seed,
            )?;
            let par = strategy_grid(
                &template,
                Strategy::Parallel,
                &users,
                &stations,
                samples,
                panel_seed,
            )?;
            let prefix = format!("{window},{arm_km},{repeaters},");
            write_region_rows(out, &prefix, &users, &stations, &seq, &par)?;
        }
    }
    Ok(())
}

/// One axis of a sweep: an explicit value list or an inclusive range.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum AxisSpec {
    Values(Vec<Value>),
    Range {
        from: f64,
        to: f64,
        #[serde(default = "default_step")]
        step: f64,
    },
}

fn default_step() -> f64 {
    1.0
}

impl AxisSpec {
    fn values(&self) -> Result<Vec<Value>> {
        match self {
            AxisSpec::Values(v) => {
                if v.is_empty() {
                    return Err(QcsError::InvalidParameter("axis with no values".into()));
                }
                Ok(v.clone())
            }
            AxisSpec::Range { from, to, step } => {
                if !(step.is_finite() && *step > 0.0) || !from.is_finite() || to < from {
                    return Err(QcsError::InvalidParameter(format!(
                        "bad axis range {from}..{to} step {step}"
                    )));
                }
                let count = ((to - from) / step).floor() as u64 + 1;
                if count > MAX_GRID_POINTS {
                    return Err(QcsError::InvalidParameter(format!(
                        "axis range yields {count} points"
                    )));
                }
                Ok((0..count)
                    .map(|i| {
                        let x = from + i as f64 * step;
                        if x.fract() == 0.0 && x.abs() < 9e15 {
                            Value::from(x as i64)
                        } else {
                            Value::from(x)
                        }
                    })
                    .collect())
            }
        }
    }
}

const MAX_GRID_POINTS: u64 = 1_000_000;

const AXIS_KEYS: [&str; 12] = [
    "u",
    "L_km",
    "N",
    "k",
    "t_fwd_us",
    "c_km_per_us",
    "t_control_us",
    "p",
    "n",
    "w",
    "lambda0_per_us",
    "strategy",
];

/// A sweep: a base scenario, named axes over scenario keys, and optional
/// option overrides. Axis order in the file is grid order (first axis
/// varies slowest).
#[derive(Debug, Deserialize)]
pub struct SweepSpec {
    pub scenario: Value,
    #[serde(default)]
    pub axes: IndexMap<String, AxisSpec>,
    #[serde(default)]
    pub method: Option<MethodChoice>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub samples: Option<u64>,
    #[serde(default)]
    pub replications: Option<u32>,
    #[serde(default)]
    pub measured: Option<u64>,
    #[serde(default)]
    pub out: Option<String>,
}

impl SweepSpec {
    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }

    /// Folds the spec's own option fields under the CLI options; CLI
    /// flags take precedence where both are set.
    pub fn merge_options(&self, cli: &RunOptions, cli_set_seed: Option<u64>) -> RunOptions {
        let mut opts = cli.clone();
        if opts.samples.is_none() {
            opts.samples = self.samples;
        }
        if let Some(seed) = cli_set_seed {
            opts.seed = seed;
        } else if let Some(seed) = self.seed {
            opts.seed = seed;
        }
        if let Some(m) = self.method {
            if matches!(cli.method, MethodChoice::Auto) {
                opts.method = m;
            }
        }
        if let Some(r) = self.replications {
            opts.replications = r;
        }
        if let Some(m) = self.measured {
            opts.measured = m;
        }
        opts
    }
}

/// Cartesian sweep over the axes. Failed grid points land in the `error`
/// column instead of aborting the sweep.
pub fn sweep(spec: &SweepSpec, opts: &RunOptions, out: &mut dyn Write) -> Result<()> {
    if !spec.scenario.is_object() {
        return Err(QcsError::InvalidParameter(
            "sweep scenario must be a JSON object".into(),
        ));
    }
    let mut axes: Vec<(String, Vec<Value>)> = Vec::new();
    let mut total: u64 = 1;
    for (key, axis) in &spec.axes {
        if !AXIS_KEYS.contains(&key.as_str()) {
            return Err(QcsError::InvalidParameter(format!(
                "axis {key:?} is not a scenario key"
            )));
        }
        let values = axis.values()?;
        total = total.saturating_mul(values.len() as u64);
        if total > MAX_GRID_POINTS {
            return Err(QcsError::InvalidParameter(format!(
                "sweep grid exceeds {MAX_GRID_POINTS} points"
            )));
        }
        axes.push((key.clone(), values));
    }

    let points: Vec<Value> = (0..total)
        .map(|index| {
            let mut point = spec.scenario.clone();
            let obj = point.as_object_mut().expect("checked above");
            let mut rest = index;
            for (key, values) in axes.iter().rev() {
                let pick = (rest % values.len() as u64) as usize;
                rest /= values.len() as u64;
                obj.insert(key.clone(), values[pick].clone());
            }
            point
        })
        .collect();

    let rows: Vec<String> = points
        .par_iter()
        .enumerate()
        .map(|(index, raw)| {
            let outcome = serde_json::from_value::<Scenario>(raw.clone())
                .map_err(QcsError::from)
                .and_then(|sc| {
                    let mut point_opts = opts.clone();
                    point_opts.seed = derive_seed(opts.seed, index as u64);
                    eval_scenario(&sc, &point_opts)
                });
            render_eval_row(raw, &outcome)
        })
        .collect();

    writeln!(out, "{EVAL_HEADER}")?;
    for row in rows {
        writeln!(out, "{row}")?;
    }
    Ok(())
}
