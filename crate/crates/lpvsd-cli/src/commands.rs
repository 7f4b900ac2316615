//! The four CLI verbs: `synthesize`, `simulate`, `compare`, `validate`.
//!
//! Each command takes the loaded [`RunConfig`](crate::config::RunConfig)
//! plus the command-line/environment [`Overrides`] and returns a process
//! exit code:
//!
//! * `0` — success;
//! * `2` — synthesis infeasible, or a certificate that fails its
//!   verification margins;
//! * `3` — a closed-loop run crossed the halt threshold (`compare` uses
//!   this only when the *proposed* branch halts).
//!
//! Usage and configuration errors surface as [`Error`](lpvsd::Error) and
//! are mapped to exit code `1` by the binary.
//!
//! All artifacts are written under the output directory with stable names
//! and deterministic content: recorded solver timings are zeroed before
//! the certificate is serialized, so re-running a command over the same
//! inputs reproduces every output byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use lpvsd::engine::{build_afr_plant, SamplingConvention};
use lpvsd::lpv::{make_grid, Grid, LpvDelayPlant};
use lpvsd::realize::{round_trip_error, CertifiedController};
use lpvsd::baseline::BaselineController;
use lpvsd::sdp::{self, SolveStatus};
use lpvsd::sim::{metrics, presets, simulate, Metrics, Scenario, SimulationTrace};
use lpvsd::synthesis::{build_sdp, check_certificate, lambda_search, SynthesisCertificate};
use lpvsd::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::plot::{line_chart, Series};

/// Relative tolerance for the realize/reconstruct round trip in `validate`.
const ROUND_TRIP_TOL: f64 = 1e-8;

const COLOR_PROPOSED: &str = "#1f77b4";
const COLOR_BASELINE: &str = "#d62728";
const COLOR_REFERENCE: &str = "#555555";

/// Values a command-line flag or `LPVSD_*` environment variable can pin,
/// taking precedence over the configuration file (flags beat environment,
/// environment beats file).
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    /// Output directory (`--out`, `LPVSD_OUT`).
    pub out: Option<PathBuf>,
    /// Run a single named scenario (`--scenario`, `LPVSD_SCENARIO`).
    pub scenario: Option<String>,
    /// Scenario seed (`--seed`, `LPVSD_SEED`).
    pub seed: Option<u64>,
    /// Per-axis point count for verification grids
    /// (`--dense-grid`, `LPVSD_DENSE_GRID`).
    pub dense_grid: Option<usize>,
    /// Sampling-period convention (`--convention`, `LPVSD_CONVENTION`).
    pub convention: Option<SamplingConvention>,
}

impl Overrides {
    /// Fill any unset field from the `LPVSD_*` environment variables.
    /// Malformed values are rejected rather than ignored.
    pub fn with_env(mut self) -> Result<Self> {
        let get = |name: &str| std::env::var(name).ok();
        if self.out.is_none() {
            self.out = get("LPVSD_OUT").map(PathBuf::from);
        }
        if self.scenario.is_none() {
            self.scenario = get("LPVSD_SCENARIO");
        }
        if self.seed.is_none() {
            if let Some(raw) = get("LPVSD_SEED") {
                self.seed = Some(raw.parse().map_err(|_| {
                    Error::invalid(format!("LPVSD_SEED must be an unsigned integer, got {raw:?}"))
                })?);
            }
        }
        if self.dense_grid.is_none() {
            if let Some(raw) = get("LPVSD_DENSE_GRID") {
                self.dense_grid = Some(raw.parse().map_err(|_| {
                    Error::invalid(format!(
                        "LPVSD_DENSE_GRID must be an unsigned integer, got {raw:?}"
                    ))
                })?);
            }
        }
        if self.convention.is_none() {
            if let Some(raw) = get("LPVSD_CONVENTION") {
                self.convention = Some(parse_convention(&raw)?);
            }
        }
        Ok(self)
    }
}

/// Parse a sampling-convention name as used by `--convention` and
/// `LPVSD_CONVENTION`.
pub fn parse_convention(raw: &str) -> Result<SamplingConvention> {
    match raw {
        "literal-4pi" => Ok(SamplingConvention::Literal4Pi),
        "physical-120" => Ok(SamplingConvention::Physical120),
        other => Err(Error::invalid(format!(
            "unknown sampling convention {other:?}; use literal-4pi or physical-120"
        ))),
    }
}

/// Configuration after overrides: the effective engine/synthesis settings,
/// the plant they produce, and the resolved output directory.
struct Resolved {
    cfg: RunConfig,
    plant: LpvDelayPlant,
    out_dir: PathBuf,
}

fn resolve(cfg: &RunConfig, ov: &Overrides) -> Result<Resolved> {
    let mut cfg = cfg.clone();
    if let Some(conv) = ov.convention {
        cfg.engine.sampling_convention = conv;
    }
    if let Some(out) = &ov.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    let plant = build_afr_plant(&cfg.engine)?;
    let out_dir = cfg.out_dir.clone();
    fs::create_dir_all(&out_dir)?;
    Ok(Resolved { cfg, plant, out_dir })
}

/// Scenario names a command should run: the `--scenario` override alone, or
/// every scenario listed in the configuration.
fn scenario_names(cfg: &RunConfig, ov: &Overrides) -> Vec<String> {
    match &ov.scenario {
        Some(name) => vec![name.clone()],
        None => cfg.scenarios.clone(),
    }
}

fn load_scenario(name: &str, ov: &Overrides) -> Result<Scenario> {
    let mut scenario = presets::scenario(name)?;
    if let Some(seed) = ov.seed {
        scenario.seed = seed;
    }
    Ok(scenario)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::invalid(format!("serialization failed: {e}")))?;
    text.push('\n');
    write_text(path, &text)
}

fn status_label(status: &SolveStatus) -> &'static str {
    match status {
        SolveStatus::Optimal => "optimal",
        SolveStatus::AlmostOptimal => "almost-optimal",
        SolveStatus::Infeasible => "infeasible",
        SolveStatus::Failed(_) => "failed",
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Grid used by verification steps: `--dense-grid` pins every axis to the
/// same count, otherwise the configured verification counts apply.
fn verification_grid(res: &Resolved, ov: &Overrides) -> Result<Grid> {
    let counts = match ov.dense_grid {
        Some(count) => vec![count; res.plant.schedule.dim()],
        None => res.cfg.synthesis.verify_grid_counts.clone(),
    };
    make_grid(&res.plant.schedule, &counts)
}

/// Strip wall-clock solver timings so serialized certificates are
/// reproducible across runs.
fn zero_timings(cert: &SynthesisCertificate) -> SynthesisCertificate {
    let mut cert = cert.clone();
    for trial in &mut cert.provenance.trials {
        trial.solve_time_s = 0.0;
    }
    cert
}

fn certificate_path(out_dir: &Path) -> PathBuf {
    out_dir.join("certificate.json")
}

fn load_certificate(out_dir: &Path) -> Result<SynthesisCertificate> {
    let path = certificate_path(out_dir);
    let text = fs::read_to_string(&path).map_err(|e| {
        Error::invalid(format!(
            "cannot read {} ({e}); run `lpvsd synthesize` first or point --out at a \
             directory that holds a certificate",
            path.display()
        ))
    })?;
    serde_json::from_str(&text)
        .map_err(|e| Error::invalid(format!("malformed certificate {}: {e}", path.display())))
}

/// Reject a certificate that was synthesized for a different plant than the
/// one the current configuration builds.
fn check_certificate_matches(cert: &SynthesisCertificate, plant: &LpvDelayPlant) -> Result<()> {
    let dims = plant.dims();
    let p = &cert.provenance;
    if p.dims != dims {
        return Err(Error::invalid(format!(
            "certificate was synthesized for plant dimensions {:?}, configuration builds {:?}; \
             re-run synthesize with the current configuration",
            p.dims, dims
        )));
    }
    let tol = 1e-9;
    if plant.delay.upper() > p.tau_bound * (1.0 + tol)
        || plant.sampling.upper() > p.period_bound * (1.0 + tol)
    {
        return Err(Error::invalid(format!(
            "certificate covers delay up to {} s and sampling period up to {} s, but the \
             configured plant reaches {} s and {} s; re-run synthesize",
            p.tau_bound,
            p.period_bound,
            plant.delay.upper(),
            plant.sampling.upper()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// synthesize
// ---------------------------------------------------------------------------

/// Run the gridded synthesis over the configured scalarization sweep, write
/// the trial table, the winning certificate, its dense-grid margin report,
/// and the posed semidefinite problem in text form.
pub fn cmd_synthesize(cfg: &RunConfig, ov: &Overrides) -> Result<i32> {
    let res = resolve(cfg, ov)?;
    println!(
        "synthesizing over a {:?}-point grid, {} scalarization triples",
        res.cfg.synthesis.grid_counts,
        res.cfg.synthesis.lambda2.len()
            * res.cfg.synthesis.lambda3.len()
            * res.cfg.synthesis.lambda4.len()
    );

    let outcome = lambda_search(&res.plant, &res.cfg.synthesis)?;

    // Trial table goes out regardless of feasibility so failed sweeps can be
    // inspected. Timings are omitted for reproducibility.
    let mut table = String::from("lambda2,lambda3,lambda4,status,gamma,max_residual,iterations\n");
    for t in &outcome.trials {
        table.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            t.lambda[0],
            t.lambda[1],
            t.lambda[2],
            status_label(&t.status),
            fmt_opt(t.gamma),
            fmt_opt(t.max_residual),
            t.iterations
        ));
    }
    write_text(&res.out_dir.join("lambda_table.csv"), &table)?;

    let Some(cert) = outcome.certificate else {
        println!(
            "synthesis infeasible for every scalarization tried ({} trials); \
             see lambda_table.csv",
            outcome.trials.len()
        );
        return Ok(2);
    };
    println!(
        "feasible: gamma = {} at lambda = ({}, {}, {})",
        cert.gamma, cert.lambda[0], cert.lambda[1], cert.lambda[2]
    );

    write_json(&certificate_path(&res.out_dir), &zero_timings(&cert))?;

    let grid = verification_grid(&res, ov)?;
    let report = check_certificate(&cert, &res.plant, &grid)?;
    write_json(&res.out_dir.join("margin_report.json"), &report)?;
    println!(
        "margin over {} points: max constraint eigenvalue {:.3e}, pass = {}",
        report.points, report.max_lmi_eig, report.pass
    );

    let problem = build_sdp(&res.plant, &cert.provenance.grid, &res.cfg.synthesis, cert.lambda)?;
    write_text(&res.out_dir.join("sdp_problem.txt"), &sdp::export(&problem))?;

    Ok(if report.pass { 0 } else { 2 })
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

/// Per-scenario summary serialized next to each trace.
#[derive(Debug, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub rows: usize,
    /// Final recorded instant, seconds.
    pub end_time: Option<f64>,
    /// `false` when the run crossed the halt threshold (branch unstable).
    pub stable: bool,
    /// Halt diagnostic for an unstable run.
    pub halted: Option<String>,
    /// Whole-horizon metrics; absent when the trace is too short.
    pub metrics: Option<Metrics>,
}

fn summarize(name: &str, trace: &SimulationTrace) -> ScenarioReport {
    let end_time = trace.t.last().copied();
    let window_metrics = if trace.len() >= 2 {
        metrics(trace, (trace.t[0], *trace.t.last().unwrap())).ok()
    } else {
        None
    };
    ScenarioReport {
        scenario: name.to_string(),
        rows: trace.len(),
        end_time,
        stable: trace.halted.is_none(),
        halted: trace.halted.clone(),
        metrics: window_metrics,
    }
}

/// Tracked upstream mixture deviation `x₁ + d` as plot points.
fn tracked_channel(trace: &SimulationTrace) -> Vec<(f64, f64)> {
    trace
        .t
        .iter()
        .zip(trace.x.iter().zip(trace.d.iter()))
        .map(|(&t, (x, &d))| (t, x[0] + d))
        .collect()
}

fn reference_channel(trace: &SimulationTrace) -> Vec<(f64, f64)> {
    trace.t.iter().copied().zip(trace.r.iter().copied()).collect()
}

/// Simulate the certified controller on each requested scenario and write
/// trace, metrics, and plot artifacts. Exit code 3 when any run halts.
pub fn cmd_simulate(cfg: &RunConfig, ov: &Overrides) -> Result<i32> {
    let res = resolve(cfg, ov)?;
    let cert = load_certificate(&res.out_dir)?;
    check_certificate_matches(&cert, &res.plant)?;

    let names = scenario_names(&res.cfg, ov);
    let runs = run_scenarios(&names, ov, |scenario| {
        let mut controller = CertifiedController::new(&cert, &res.plant);
        simulate(&res.plant, &mut controller, scenario)
    })?;

    let mut any_halted = false;
    for (name, trace) in &runs {
        write_text(&res.out_dir.join(format!("trace-{name}.csv")), &trace.to_csv())?;
        let report = summarize(name, trace);
        write_json(&res.out_dir.join(format!("metrics-{name}.json")), &report)?;
        if res.cfg.plots {
            let tracked = tracked_channel(trace);
            let reference = reference_channel(trace);
            let svg = line_chart(
                &format!("closed loop: {name}"),
                "time (s)",
                "mixture deviation",
                &[
                    Series {
                        name: "closed loop",
                        points: &tracked,
                        color: COLOR_PROPOSED,
                        dashed: false,
                    },
                    Series {
                        name: "reference",
                        points: &reference,
                        color: COLOR_REFERENCE,
                        dashed: true,
                    },
                ],
            );
            write_text(&res.out_dir.join(format!("plot-{name}.svg")), &svg)?;
        }
        match &report.halted {
            Some(msg) => {
                any_halted = true;
                println!("{name}: HALTED after {} rows ({msg})", report.rows);
            }
            None => println!(
                "{name}: ok, {} rows{}",
                report.rows,
                report
                    .metrics
                    .as_ref()
                    .map(|m| format!(", steady-state error {:.2e}", m.steady_state_error))
                    .unwrap_or_default()
            ),
        }
    }
    Ok(if any_halted { 3 } else { 0 })
}

/// Run one closure per scenario name on its own thread, preserving input
/// order in the returned traces.
fn run_scenarios<F>(names: &[String], ov: &Overrides, run: F) -> Result<Vec<(String, SimulationTrace)>>
where
    F: Fn(&Scenario) -> Result<SimulationTrace> + Sync,
{
    let scenarios: Vec<(String, Scenario)> = names
        .iter()
        .map(|name| Ok((name.clone(), load_scenario(name, ov)?)))
        .collect::<Result<_>>()?;
    let results: Vec<Result<SimulationTrace>> = std::thread::scope(|scope| {
        let handles: Vec<_> = scenarios
            .iter()
            .map(|(_, scenario)| scope.spawn(|| run(scenario)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::invalid("scenario thread panicked"))))
            .collect()
    });
    scenarios
        .into_iter()
        .zip(results)
        .map(|((name, _), result)| Ok((name, result?)))
        .collect()
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

/// Differences between the two branches of a comparison
/// (proposed minus baseline); gaps where either side lacks a number.
#[derive(Debug, Serialize, Deserialize)]
pub struct MetricsDelta {
    pub overshoot_pct: f64,
    pub settling_time: Option<f64>,
    pub steady_state_error: f64,
    pub l2_gain: Option<f64>,
    pub max_oxygen_dev: f64,
}

/// Field-wise `a - b`.
pub fn delta_metrics(a: &Metrics, b: &Metrics) -> MetricsDelta {
    MetricsDelta {
        overshoot_pct: a.overshoot_pct - b.overshoot_pct,
        settling_time: match (a.settling_time, b.settling_time) {
            (Some(x), Some(y)) => Some(x - y),
            _ => None,
        },
        steady_state_error: a.steady_state_error - b.steady_state_error,
        l2_gain: match (a.l2_gain, b.l2_gain) {
            (Some(x), Some(y)) => Some(x - y),
            _ => None,
        },
        max_oxygen_dev: a.max_oxygen_dev - b.max_oxygen_dev,
    }
}

/// Side-by-side scenario verdict for `compare-{name}.json`.
#[derive(Debug, Serialize, Deserialize)]
pub struct CompareReport {
    pub scenario: String,
    pub proposed: ScenarioReport,
    pub baseline: ScenarioReport,
    /// Proposed minus baseline, present when both branches produced metrics.
    pub deltas: Option<MetricsDelta>,
}

/// Run the delay-aware controller and the delay-free baseline on each
/// scenario, writing both traces, a side-by-side report, and an overlay
/// plot. A halt in one branch never aborts the other; exit code 3 only
/// when the proposed branch halts.
pub fn cmd_compare(cfg: &RunConfig, ov: &Overrides) -> Result<i32> {
    let res = resolve(cfg, ov)?;
    let cert = load_certificate(&res.out_dir)?;
    check_certificate_matches(&cert, &res.plant)?;

    let names = scenario_names(&res.cfg, ov);
    let proposed_runs = run_scenarios(&names, ov, |scenario| {
        let mut controller = CertifiedController::new(&cert, &res.plant);
        simulate(&res.plant, &mut controller, scenario)
    })?;
    let baseline_runs = run_scenarios(&names, ov, |scenario| {
        let mut controller = BaselineController::new(&cert, &res.plant);
        simulate(&res.plant, &mut controller, scenario)
    })?;

    let mut proposed_halted = false;
    for ((name, proposed), (_, baseline)) in proposed_runs.iter().zip(baseline_runs.iter()) {
        write_text(&res.out_dir.join(format!("trace-{name}-proposed.csv")), &proposed.to_csv())?;
        write_text(&res.out_dir.join(format!("trace-{name}-baseline.csv")), &baseline.to_csv())?;

        let report = CompareReport {
            scenario: name.clone(),
            proposed: summarize(name, proposed),
            baseline: summarize(name, baseline),
            deltas: None,
        };
        let deltas = match (&report.proposed.metrics, &report.baseline.metrics) {
            (Some(a), Some(b)) => Some(delta_metrics(a, b)),
            _ => None,
        };
        let report = CompareReport { deltas, ..report };
        write_json(&res.out_dir.join(format!("compare-{name}.json")), &report)?;

        if res.cfg.plots {
            let tracked_p = tracked_channel(proposed);
            let tracked_b = tracked_channel(baseline);
            let reference = reference_channel(proposed);
            let svg = line_chart(
                &format!("delay-aware vs baseline: {name}"),
                "time (s)",
                "mixture deviation",
                &[
                    Series {
                        name: "delay-aware",
                        points: &tracked_p,
                        color: COLOR_PROPOSED,
                        dashed: false,
                    },
                    Series {
                        name: "baseline",
                        points: &tracked_b,
                        color: COLOR_BASELINE,
                        dashed: false,
                    },
                    Series {
                        name: "reference",
                        points: &reference,
                        color: COLOR_REFERENCE,
                        dashed: true,
                    },
                ],
            );
            write_text(&res.out_dir.join(format!("overlay-{name}.svg")), &svg)?;
        }

        let verdict = |halted: &Option<String>| if halted.is_some() { "HALTED" } else { "ok" };
        println!(
            "{name}: proposed {}, baseline {}",
            verdict(&report.proposed.halted),
            verdict(&report.baseline.halted)
        );
        if report.proposed.halted.is_some() {
            proposed_halted = true;
        }
    }
    Ok(if proposed_halted { 3 } else { 0 })
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

/// Everything `validate` checks about a stored certificate.
#[derive(Debug, Serialize, Deserialize)]
pub struct ValidationReport {
    /// Dense-grid re-evaluation of the synthesis inequality.
    pub margin: lpvsd::synthesis::MarginReport,
    /// Worst relative error of the realize/reconstruct round trip over the
    /// verification grid.
    pub max_round_trip_error: f64,
    /// Scheduling point attaining the worst round-trip error.
    pub worst_round_trip_point: Vec<f64>,
    pub round_trip_tol: f64,
    pub round_trip_pass: bool,
    /// Margin pass and round-trip pass together.
    pub pass: bool,
}

/// Re-check a stored certificate against the configured plant: dense-grid
/// margins plus the controller-formula round trip. Exit code 0 only when
/// both pass.
pub fn cmd_validate(cfg: &RunConfig, ov: &Overrides) -> Result<i32> {
    let res = resolve(cfg, ov)?;
    let cert = load_certificate(&res.out_dir)?;
    check_certificate_matches(&cert, &res.plant)?;

    let grid = verification_grid(&res, ov)?;
    let margin = check_certificate(&cert, &res.plant, &grid)?;

    let mut max_rt = 0.0_f64;
    let mut worst_point = grid.points()[0].clone();
    for rho in grid.points() {
        let err = round_trip_error(&cert, &res.plant, rho)?;
        if err > max_rt {
            max_rt = err;
            worst_point = rho.clone();
        }
    }
    let round_trip_pass = max_rt <= ROUND_TRIP_TOL;
    let report = ValidationReport {
        pass: margin.pass && round_trip_pass,
        margin,
        max_round_trip_error: max_rt,
        worst_round_trip_point: worst_point,
        round_trip_tol: ROUND_TRIP_TOL,
        round_trip_pass,
    };
    write_json(&res.out_dir.join("validation_report.json"), &report)?;
    println!(
        "margin pass = {}, round trip {:.3e} (tol {:.0e}) pass = {}",
        report.margin.pass, report.max_round_trip_error, report.round_trip_tol, report.round_trip_pass
    );
    Ok(if report.pass { 0 } else { 2 })
}
