//! Hybrid closed-loop simulation: continuous delayed plant, digital
//! controller, zero-order hold.
//!
//! The loop alternates two clocks. At every sampling instant `t_k` the
//! controller reads the held scheduling value `ρ(t_k)` and the measurement
//! `y(t_k)`, emits a control value that is held constant until `t_{k+1} =
//! t_k + 𝒯(ρ(t_k))`, and advances its digital state. Between instants the
//! plant integrates continuously — its matrices follow the *continuous*
//! scheduling trajectory, not the held one — with a fixed-step fourth-order
//! Runge–Kutta scheme whose delayed-state lookups interpolate a history
//! buffer linearly ([`dde_step`]).
//!
//! The exogenous input is wired as `w(t) = [r(t), d(t)]`: the first channel
//! is the reference command, the second the disturbance, matching the
//! benchmark plant whose tracking-error integrator is driven by `r − d − x₁`.
//! Plants simulated here must therefore have exactly two exogenous columns.
//!
//! Alongside the plant state the loop accumulates the performance output
//! `z(t)` and the oxygen-storage deviation (the running integral of the
//! upstream mixture deviation `x₁ + d`, evaluated by
//! [`twc_step`](crate::engine::twc_step) on trapezoidal averages so the
//! stored column is exactly the trapezoidal integral of the traced channel).

use crate::engine::{twc_step, TwcState};
use crate::lpv::{AffineMatrixFn, LpvDelayPlant};
use crate::realize::DigitalTaps;
use crate::{ColVec, Error, Result};
use serde::{Deserialize, Serialize};

/// A scalar signal of time, defined by a shape and its breakpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SignalSpec {
    /// The same value forever.
    Constant { value: f64 },
    /// Piecewise constant: holds each breakpoint's value from its time until
    /// the next breakpoint; zero before the first.
    StepSequence { breakpoints: Vec<(f64, f64)> },
    /// Rectangular pulses of the given width: each breakpoint `(start,
    /// amplitude)` contributes its amplitude on `[start, start + width)`;
    /// zero elsewhere. Pulses must not overlap.
    PulseTrain { width: f64, breakpoints: Vec<(f64, f64)> },
    /// Linear interpolation between breakpoints, clamped at both ends.
    PiecewiseLinear { breakpoints: Vec<(f64, f64)> },
}

impl SignalSpec {
    /// Validate breakpoint ordering and shape parameters.
    pub fn validate(&self) -> Result<()> {
        let check_increasing = |bps: &[(f64, f64)], what: &str| -> Result<()> {
            if bps.is_empty() {
                return Err(Error::invalid(format!("{what} needs at least one breakpoint")));
            }
            if bps.windows(2).any(|w| w[1].0 <= w[0].0) {
                return Err(Error::invalid(format!(
                    "{what} breakpoint times must be strictly increasing"
                )));
            }
            if bps.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
                return Err(Error::invalid(format!("{what} breakpoints must be finite")));
            }
            Ok(())
        };
        match self {
            SignalSpec::Constant { value } => {
                if !value.is_finite() {
                    return Err(Error::invalid("constant signal value must be finite"));
                }
            }
            SignalSpec::StepSequence { breakpoints } => {
                check_increasing(breakpoints, "step sequence")?;
            }
            SignalSpec::PulseTrain { width, breakpoints } => {
                check_increasing(breakpoints, "pulse train")?;
                if !(*width > 0.0) || !width.is_finite() {
                    return Err(Error::invalid(format!(
                        "pulse width must be positive, got {width}"
                    )));
                }
                if breakpoints.windows(2).any(|w| w[0].0 + width > w[1].0) {
                    return Err(Error::invalid("pulse train pulses must not overlap"));
                }
            }
            SignalSpec::PiecewiseLinear { breakpoints } => {
                check_increasing(breakpoints, "piecewise-linear signal")?;
            }
        }
        Ok(())
    }

    /// Evaluate the signal at time `t`.
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            SignalSpec::Constant { value } => *value,
            SignalSpec::StepSequence { breakpoints } => {
                let i = breakpoints.partition_point(|(s, _)| *s <= t);
                if i == 0 {
                    0.0
                } else {
                    breakpoints[i - 1].1
                }
            }
            SignalSpec::PulseTrain { width, breakpoints } => {
                let i = breakpoints.partition_point(|(s, _)| *s <= t);
                if i == 0 {
                    0.0
                } else {
                    let (start, amp) = breakpoints[i - 1];
                    if t < start + width {
                        amp
                    } else {
                        0.0
                    }
                }
            }
            SignalSpec::PiecewiseLinear { breakpoints } => {
                if t <= breakpoints[0].0 {
                    return breakpoints[0].1;
                }
                let last = breakpoints[breakpoints.len() - 1];
                if t >= last.0 {
                    return last.1;
                }
                let i = breakpoints.partition_point(|(s, _)| *s <= t);
                let (t0, v0) = breakpoints[i - 1];
                let (t1, v1) = breakpoints[i];
                v0 + (v1 - v0) * (t - t0) / (t1 - t0)
            }
        }
    }
}

/// History interpolation modes for delayed-state lookups. Only linear
/// interpolation is implemented; the variant list is closed so a
/// configuration asking for anything else fails at parse time rather than
/// silently degrading.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HistoryInterp {
    #[default]
    Linear,
}

fn default_halt_threshold() -> f64 {
    1e6
}

/// The serializable part of a simulation setup: signals, horizon, and
/// integrator controls. The plant and the controller are runtime objects and
/// are passed to [`simulate`] separately.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Horizon in seconds.
    pub duration: f64,
    /// Scheduling-parameter trajectory (engine speed in rpm for the
    /// benchmark); the plant follows it continuously, the controller samples
    /// it.
    pub speed: SignalSpec,
    /// Reference command, first exogenous channel.
    pub reference: SignalSpec,
    /// Disturbance, second exogenous channel.
    pub disturbance: SignalSpec,
    /// Integrator step; defaults to `min(τ̄, 𝒯̄) / 20`. The actual mesh
    /// divides each sampling interval evenly with steps no longer than this,
    /// so sampling instants are hit exactly.
    #[serde(default)]
    pub step: Option<f64>,
    /// Delayed-state interpolation (linear only).
    #[serde(default)]
    pub history_interpolation: HistoryInterp,
    /// State magnitude that halts the run as unstable.
    #[serde(default = "default_halt_threshold")]
    pub halt_threshold: f64,
    /// Recorded for reproducibility bookkeeping; the loop itself is
    /// deterministic and draws no randomness.
    #[serde(default)]
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err(Error::invalid(format!(
                "scenario duration must be positive, got {}",
                self.duration
            )));
        }
        if let Some(h) = self.step {
            if !(h > 0.0) || !h.is_finite() {
                return Err(Error::invalid(format!("integrator step must be positive, got {h}")));
            }
        }
        if !(self.halt_threshold > 0.0) {
            return Err(Error::invalid("halt threshold must be positive"));
        }
        self.speed.validate()?;
        self.reference.validate()?;
        self.disturbance.validate()
    }
}

/// Ring of `(timestamp, state)` pairs realizing the delayed-state lookup
/// `x(t − τ)`. Before the first timestamp the constant initial history `φ`
/// applies; past the newest timestamp lookups fail (the integrator never
/// needs them when the step stays below the delay).
#[derive(Clone, Debug)]
pub struct HistoryBuffer {
    entries: std::collections::VecDeque<(f64, ColVec)>,
    phi: ColVec,
    span: f64,
}

impl HistoryBuffer {
    /// Start a buffer at `t0` with constant pre-history `phi` (which is also
    /// the state at `t0`). `span` is how far back lookups must stay valid;
    /// older entries are pruned as time advances.
    pub fn new(phi: ColVec, t0: f64, span: f64) -> Self {
        let entries = std::collections::VecDeque::from([(t0, phi.clone())]);
        Self { entries, phi, span }
    }

    /// Newest stored timestamp.
    pub fn newest(&self) -> f64 {
        self.entries.back().expect("buffer never empties").0
    }

    /// Append a strictly newer state and prune entries that have fallen out
    /// of the span (always keeping one entry at or before the cutoff so
    /// interpolation across it stays possible).
    pub fn push(&mut self, t: f64, x: ColVec) -> Result<()> {
        if t <= self.newest() {
            return Err(Error::History(format!(
                "history timestamps must increase: {t} after {}",
                self.newest()
            )));
        }
        self.entries.push_back((t, x));
        let cutoff = t - self.span;
        while self.entries.len() > 2 && self.entries[1].0 <= cutoff {
            self.entries.pop_front();
        }
        Ok(())
    }

    /// State at time `t`: the constant initial history before the first
    /// timestamp, linear interpolation between stored pairs, the stored
    /// vector exactly on a node. Fails beyond the newest timestamp.
    pub fn lookup(&self, t: f64) -> Result<ColVec> {
        let (first_t, _) = self.entries[0];
        if t <= first_t {
            // Constant pre-history; at the first node they coincide.
            return Ok(if t < first_t { self.phi.clone() } else { self.entries[0].1.clone() });
        }
        let newest = self.newest();
        if t > newest {
            // Tolerate the float dust of a stage landing "on" the newest
            // sample, nothing more.
            if t - newest <= 1e-9 * newest.abs().max(1.0) {
                return Ok(self.entries.back().unwrap().1.clone());
            }
            return Err(Error::History(format!(
                "lookup at {t} is beyond the newest stored instant {newest}"
            )));
        }
        let i = self.entries.partition_point(|(s, _)| *s <= t);
        let (t0, x0) = &self.entries[i - 1];
        if t == *t0 {
            return Ok(x0.clone());
        }
        let (t1, x1) = &self.entries[i];
        let w = (t - t0) / (t1 - t0);
        Ok(x0 * (1.0 - w) + x1 * w)
    }
}

fn matrix_fn_is_zero(f: &AffineMatrixFn) -> bool {
    f.base().norm() == 0.0 && (0..f.n_params()).all(|i| f.coeff(i).norm() == 0.0)
}

/// One explicit fourth-order Runge–Kutta step of the delayed plant
///
/// ```text
/// ẋ = A(ρ)x + Aτ(ρ)x(t − τ(ρ)) + B₁(ρ)w(t) + B₂(ρ)u_held
/// ```
///
/// over `[t, t + h]`. The scheduling value and the exogenous input are
/// evaluated at the internal stage times through the supplied closures, and
/// the delayed state is looked up in the history buffer (which the step
/// appends its result to). The held input is what a zero-order hold makes
/// constant over the step. Fails with a halt diagnostic when the state
/// leaves the finite range.
pub fn dde_step(
    plant: &LpvDelayPlant,
    buf: &mut HistoryBuffer,
    rho_at: &dyn Fn(f64) -> Vec<f64>,
    w_at: &dyn Fn(f64) -> ColVec,
    u_held: &ColVec,
    t: f64,
    h: f64,
) -> Result<ColVec> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::invalid(format!("integration step must be positive, got {h}")));
    }
    let x_t = buf.lookup(t)?;
    let delayed_active = !matrix_fn_is_zero(&plant.a_tau);
    let deriv = |tt: f64, xx: &ColVec, buf: &HistoryBuffer| -> Result<ColVec> {
        let at = plant.eval_at(&rho_at(tt))?;
        let mut dx = &at.a * xx + &at.b1 * w_at(tt) + &at.b2 * u_held;
        if delayed_active {
            dx += &at.a_tau * buf.lookup(tt - at.tau)?;
        }
        Ok(dx)
    };
    let k1 = deriv(t, &x_t, buf)?;
    let k2 = deriv(t + h / 2.0, &(&x_t + &k1 * (h / 2.0)), buf)?;
    let k3 = deriv(t + h / 2.0, &(&x_t + &k2 * (h / 2.0)), buf)?;
    let k4 = deriv(t + h, &(&x_t + &k3 * h), buf)?;
    let x_next = &x_t + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    if x_next.iter().any(|v| !v.is_finite()) {
        return Err(Error::SimHalt(format!("state became nonfinite at t = {}", t + h)));
    }
    buf.push(t + h, x_next.clone())?;
    Ok(x_next)
}

/// A digital controller the hybrid loop can drive: at each sampling instant
/// it receives the held scheduling value and the current delay, and returns
/// the matrices that advance its state to the next instant.
pub trait SampledController {
    /// Digital state dimension.
    fn order(&self) -> usize;

    /// Discrete update law for the interval `[t_k, t_k1]`. `samples` lists
    /// every sampling instant so far, ending with `t_k`, for binding
    /// delayed-state taps to timestamps.
    fn step(
        &mut self,
        t_k: f64,
        t_k1: f64,
        tau_k: f64,
        rho: &[f64],
        samples: &[f64],
    ) -> Result<DigitalTaps>;
}

/// Everything the loop records, one entry per integration mesh point.
/// Sampling instants are mesh points flagged in [`sample_flag`]
/// (Self::sample_flag); between them the digital-state and held-input
/// columns repeat their sample values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationTrace {
    pub t: Vec<f64>,
    /// Plant state per mesh point.
    pub x: Vec<Vec<f64>>,
    /// Digital controller state, held between samples.
    pub x_d: Vec<Vec<f64>>,
    /// Held control input.
    pub u: Vec<Vec<f64>>,
    /// Plant measurement `C₂ x` along the continuous trajectory.
    pub y: Vec<Vec<f64>>,
    /// Reference channel.
    pub r: Vec<f64>,
    /// Disturbance channel.
    pub d: Vec<f64>,
    /// First scheduling parameter along the continuous profile (engine
    /// speed for the benchmark).
    pub omega: Vec<f64>,
    /// Delay value along the continuous profile.
    pub tau: Vec<f64>,
    /// True on rows that are sampling instants.
    pub sample_flag: Vec<bool>,
    /// Performance output `z`.
    pub z: Vec<Vec<f64>>,
    /// Oxygen-storage deviation: running trapezoidal integral of the
    /// upstream mixture deviation `x₁ + d` scaled by the upstream flow.
    pub oxygen: Vec<f64>,
    /// Set when the run stopped early because the state left the finite or
    /// allowed range; rows up to the halt instant are retained.
    pub halted: Option<String>,
}

impl SimulationTrace {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// CSV with one header row naming every column, one row per mesh point.
    /// Flags serialize as 0/1; floats use the shortest round-trip decimal
    /// form, so identical traces produce byte-identical files.
    pub fn to_csv(&self) -> String {
        let mut header = vec!["t".to_string()];
        let tag = |p: &str, k: usize| (1..=k).map(|i| format!("{p}{i}")).collect::<Vec<_>>();
        let n = self.x.first().map_or(0, Vec::len);
        let nd = self.x_d.first().map_or(0, Vec::len);
        let nu = self.u.first().map_or(0, Vec::len);
        let ny = self.y.first().map_or(0, Vec::len);
        let nz = self.z.first().map_or(0, Vec::len);
        header.extend(tag("x", n));
        header.extend(tag("xd", nd));
        header.extend(tag("u", nu));
        header.extend(tag("y", ny));
        header.extend(["r", "d", "omega", "tau", "sample"].map(String::from));
        header.extend(tag("z", nz));
        header.push("oxygen".to_string());

        let mut out = header.join(",");
        out.push('\n');
        for i in 0..self.len() {
            let mut row: Vec<String> = vec![format!("{}", self.t[i])];
            row.extend(self.x[i].iter().map(|v| format!("{v}")));
            row.extend(self.x_d[i].iter().map(|v| format!("{v}")));
            row.extend(self.u[i].iter().map(|v| format!("{v}")));
            row.extend(self.y[i].iter().map(|v| format!("{v}")));
            row.push(format!("{}", self.r[i]));
            row.push(format!("{}", self.d[i]));
            row.push(format!("{}", self.omega[i]));
            row.push(format!("{}", self.tau[i]));
            row.push(if self.sample_flag[i] { "1".into() } else { "0".into() });
            row.extend(self.z[i].iter().map(|v| format!("{v}")));
            row.push(format!("{}", self.oxygen[i]));
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Run the hybrid closed loop for one scenario.
///
/// The event loop: at each sampling instant `t_k`, read `ρ(t_k)` and
/// `y(t_k) = C₂ x(t_k)`, compute `τ_k = τ(ρ(t_k))` and `t_{k+1} = t_k +
/// 𝒯(ρ(t_k))`, ask the controller for its update law, emit
/// `u = C_d x_d(k) + D_d y(k)` held over `[t_k, t_{k+1})`, and advance
/// `x_d(k+1) = A_d x_d(k) + Σ taps·x_d(timestamps) + B_d y(k)`. Between
/// instants the plant advances by [`dde_step`] on a mesh that divides the
/// interval evenly with steps at most the scenario's `step`, so the next
/// sampling instant is a mesh point exactly.
///
/// An instability (nonfinite state or magnitude beyond the scenario's halt
/// threshold) stops the run early; the truncated trace is returned with
/// [`halted`](SimulationTrace::halted) set rather than discarded.
pub fn simulate(
    plant: &LpvDelayPlant,
    controller: &mut dyn SampledController,
    scenario: &Scenario,
) -> Result<SimulationTrace> {
    scenario.validate()?;
    plant.assert_valid()?;
    let dims = plant.dims();
    if dims.n_w != 2 {
        return Err(Error::Plant(format!(
            "the closed loop drives w = [reference, disturbance]; the plant \
             must have exactly 2 exogenous columns, got {}",
            dims.n_w
        )));
    }
    if controller.order() != dims.n {
        return Err(Error::dim(format!(
            "controller order {} does not match plant order {}",
            controller.order(),
            dims.n
        )));
    }
    let tau_bar = plant.delay.upper();
    let period_bar = plant.sampling.upper();
    let h_target = scenario.step.unwrap_or_else(|| tau_bar.min(period_bar) / 20.0);

    let rho_at = |t: f64| vec![scenario.speed.eval(t)];
    let w_at = |t: f64| {
        ColVec::from_column_slice(&[scenario.reference.eval(t), scenario.disturbance.eval(t)])
    };

    let phi = plant.initial_history.clone();
    let mut buf = HistoryBuffer::new(phi, 0.0, tau_bar + 4.0 * h_target + period_bar);
    let mut x = buf.lookup(0.0)?;
    let mut x_d = ColVec::zeros(dims.n);
    let mut twc = TwcState::new(1.0);
    let mut samples: Vec<f64> = Vec::new();
    let mut digital_states: Vec<(f64, ColVec)> = Vec::new();

    let mut trace = SimulationTrace {
        t: Vec::new(),
        x: Vec::new(),
        x_d: Vec::new(),
        u: Vec::new(),
        y: Vec::new(),
        r: Vec::new(),
        d: Vec::new(),
        omega: Vec::new(),
        tau: Vec::new(),
        sample_flag: Vec::new(),
        z: Vec::new(),
        oxygen: Vec::new(),
        halted: None,
    };

    let c1_tau_active = !matrix_fn_is_zero(&plant.c1_tau);
    let perf_output = |buf: &HistoryBuffer, t: f64, x: &ColVec, u: &ColVec| -> Result<ColVec> {
        let at = plant.eval_at(&rho_at(t))?;
        let mut z = &at.c1 * x + &at.d11 * w_at(t) + &at.d12 * u;
        if c1_tau_active {
            z += &at.c1_tau * buf.lookup(t - at.tau)?;
        }
        Ok(z)
    };
    let push_row = |trace: &mut SimulationTrace,
                    buf: &HistoryBuffer,
                    t: f64,
                    x: &ColVec,
                    x_d: &ColVec,
                    u: &ColVec,
                    flag: bool,
                    oxygen: f64|
     -> Result<()> {
        let rho = rho_at(t);
        let at = plant.eval_at(&rho)?;
        let w = w_at(t);
        let z = perf_output(buf, t, x, u)?;
        let y = &at.c2 * x;
        trace.t.push(t);
        trace.x.push(x.iter().copied().collect());
        trace.x_d.push(x_d.iter().copied().collect());
        trace.u.push(u.iter().copied().collect());
        trace.y.push(y.iter().copied().collect());
        trace.r.push(w[0]);
        trace.d.push(w[1]);
        trace.omega.push(rho[0]);
        trace.tau.push(at.tau);
        trace.sample_flag.push(flag);
        trace.z.push(z.iter().copied().collect());
        trace.oxygen.push(oxygen);
        Ok(())
    };

    let mut t_k = 0.0;
    let mut halted: Option<String> = None;
    'outer: while t_k < scenario.duration - 1e-12 && halted.is_none() {
        // Sample: held parameter, measurement, controller update law.
        let rho_k = rho_at(t_k);
        let at_k = plant.eval_at(&rho_k)?;
        let period_k = at_k.period;
        if !(period_k > 0.0) {
            return Err(Error::Plant(format!(
                "sampling law returned a nonpositive period {period_k} at t = {t_k}"
            )));
        }
        if h_target > period_k / 4.0 {
            return Err(Error::invalid(format!(
                "integrator step {h_target} exceeds a quarter of the sampling \
                 period {period_k} at t = {t_k}; refine the step"
            )));
        }
        let t_k1 = t_k + period_k;
        samples.push(t_k);
        digital_states.push((t_k, x_d.clone()));
        let y_k = &at_k.c2 * &x;
        let taps = controller.step(t_k, t_k1, at_k.tau, &rho_k, &samples)?;
        let u_held = &taps.c_d * &x_d + &taps.d_d * &y_k;

        // Advance the digital state to t_{k+1}.
        let mut x_d_next = &taps.a_d * &x_d + &taps.b_d * &y_k;
        for (stamp, gain) in &taps.delayed {
            x_d_next += gain * digital_state_at(&digital_states, *stamp, dims.n)?;
        }

        // Record the sample row with the new hold value. The instant is
        // usually already present as the previous interval's last substep
        // row; the hold switches exactly there, so rewrite that row's
        // controller-side columns instead of appending a duplicate.
        if trace.t.is_empty() || *trace.t.last().unwrap() < t_k {
            push_row(&mut trace, &buf, t_k, &x, &x_d, &u_held, true, twc.oxygen_dev)?;
        } else {
            let last = trace.t.len() - 1;
            trace.sample_flag[last] = true;
            trace.u[last] = u_held.iter().copied().collect();
            trace.x_d[last] = x_d.iter().copied().collect();
            trace.z[last] =
                perf_output(&buf, t_k, &x, &u_held)?.iter().copied().collect();
        }

        // Integrate the plant across the interval (clipped to the horizon),
        // dividing it evenly so the endpoint is hit exactly.
        let t_stop = t_k1.min(scenario.duration);
        let interval = t_stop - t_k;
        let n_sub = (interval / h_target).ceil().max(1.0) as usize;
        let mut dlam_prev = x[0] + scenario.disturbance.eval(t_k);
        for i in 0..n_sub {
            let t0 = t_k + interval * (i as f64 / n_sub as f64);
            let t1 = if i + 1 == n_sub {
                t_stop
            } else {
                t_k + interval * ((i + 1) as f64 / n_sub as f64)
            };
            match dde_step(plant, &mut buf, &rho_at, &w_at, &u_held, t0, t1 - t0) {
                Ok(next) => x = next,
                Err(Error::SimHalt(msg)) => {
                    halted = Some(msg);
                    break 'outer;
                }
                Err(e) => return Err(e),
            }
            let dlam = x[0] + scenario.disturbance.eval(t1);
            twc = twc_step(twc, 0.5 * (dlam_prev + dlam), t1 - t0);
            dlam_prev = dlam;
            push_row(&mut trace, &buf, t1, &x, &x_d, &u_held, false, twc.oxygen_dev)?;
            if x.amax() > scenario.halt_threshold {
                halted = Some(format!(
                    "state magnitude {:.3e} exceeded the halt threshold {:.3e} at t = {t1}",
                    x.amax(),
                    scenario.halt_threshold
                ));
                break 'outer;
            }
        }

        x_d = x_d_next;
        t_k = t_k1;
    }

    trace.halted = halted;
    Ok(trace)
}

/// Resolve a delayed tap's timestamp to the digital state recorded at that
/// sampling instant; instants at or before the start of time resolve to the
/// zero initial state.
fn digital_state_at(states: &[(f64, ColVec)], stamp: f64, n: usize) -> Result<ColVec> {
    if stamp <= 0.0 || states.is_empty() || stamp < states[0].0 {
        return Ok(ColVec::zeros(n));
    }
    let i = states.partition_point(|(s, _)| *s <= stamp + 1e-9 * stamp.max(1.0));
    let (t_found, state) = &states[i - 1];
    if (t_found - stamp).abs() <= 1e-9 * stamp.max(1.0) {
        Ok(state.clone())
    } else {
        Err(Error::History(format!(
            "delayed tap timestamp {stamp} is not a recorded sampling instant \
             (nearest earlier: {t_found})"
        )))
    }
}

/// Summary numbers for one trace window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Peak excursion past the final value, as a percentage of the
    /// initial-to-final travel (zero when the channel never overshoots or
    /// does not move).
    pub overshoot_pct: f64,
    /// First instant after which the tracked channel stays inside the 2%
    /// band around its final value (band width 2% of the travel); `None`
    /// when it never settles within the window.
    pub settling_time: Option<f64>,
    /// Absolute tracking error `|r − (x₁ + d)|` at the window's end.
    pub steady_state_error: f64,
    /// `‖z‖₂ / ‖w‖₂` over the window by trapezoidal quadrature; `None` when
    /// the exogenous input has no energy in the window.
    pub l2_gain: Option<f64>,
    /// Largest magnitude of the oxygen-storage deviation in the window.
    pub max_oxygen_dev: f64,
}

/// Compute [`Metrics`] over `window = (start, end)` of a trace.
///
/// The tracked channel is the upstream mixture deviation `x₁ + d` measured
/// against the reference `r`. Overshoot and settling are step-response
/// quantities relative to the channel's travel from the window's first to
/// its last row.
pub fn metrics(trace: &SimulationTrace, window: (f64, f64)) -> Result<Metrics> {
    if trace.is_empty() {
        return Err(Error::invalid("metrics need a nonempty trace"));
    }
    let (a, b) = window;
    let t0 = trace.t[0];
    let t_end = *trace.t.last().unwrap();
    if !(a < b) || a < t0 - 1e-9 || b > t_end + 1e-9 {
        return Err(Error::invalid(format!(
            "window [{a}, {b}] outside the trace span [{t0}, {t_end}]"
        )));
    }
    let lo = trace.t.partition_point(|&t| t < a - 1e-12);
    let hi = trace.t.partition_point(|&t| t <= b + 1e-12);
    let idx: Vec<usize> = (lo..hi).collect();
    if idx.len() < 2 {
        return Err(Error::invalid("window covers fewer than two trace rows"));
    }

    let tracked: Vec<f64> = idx.iter().map(|&i| trace.x[i][0] + trace.d[i]).collect();
    let initial = tracked[0];
    let final_v = tracked[tracked.len() - 1];
    let travel = final_v - initial;

    let overshoot_pct = if travel.abs() <= 1e-12 {
        0.0
    } else {
        let sign = travel.signum();
        let peak = tracked
            .iter()
            .map(|&v| (v - final_v) * sign)
            .fold(f64::NEG_INFINITY, f64::max);
        (peak.max(0.0) / travel.abs()) * 100.0
    };

    let settling_time = if travel.abs() <= 1e-12 {
        Some(trace.t[idx[0]])
    } else {
        let band = 0.02 * travel.abs();
        let mut settle = None;
        for (j, &i) in idx.iter().enumerate() {
            if (tracked[j] - final_v).abs() <= band {
                settle.get_or_insert(trace.t[i]);
            } else {
                settle = None;
            }
        }
        settle
    };

    let steady_state_error = {
        let last = *idx.last().unwrap();
        (trace.r[last] - (trace.x[last][0] + trace.d[last])).abs()
    };

    // Trapezoidal signal energies.
    let mut z_energy = 0.0;
    let mut w_energy = 0.0;
    for w2 in idx.windows(2) {
        let (i, j) = (w2[0], w2[1]);
        let dt = trace.t[j] - trace.t[i];
        let zsq = |k: usize| trace.z[k].iter().map(|v| v * v).sum::<f64>();
        let wsq = |k: usize| trace.r[k] * trace.r[k] + trace.d[k] * trace.d[k];
        z_energy += 0.5 * (zsq(i) + zsq(j)) * dt;
        w_energy += 0.5 * (wsq(i) + wsq(j)) * dt;
    }
    let l2_gain =
        if w_energy > 0.0 { Some((z_energy / w_energy).sqrt()) } else { None };

    let max_oxygen_dev =
        idx.iter().map(|&i| trace.oxygen[i].abs()).fold(0.0f64, f64::max);

    Ok(Metrics { overshoot_pct, settling_time, steady_state_error, l2_gain, max_oxygen_dev })
}

/// Ready-made scenarios for the benchmark runs.
pub mod presets {
    use super::{Scenario, SignalSpec};
    use crate::{Error, Result};

    /// Piecewise-linear speed profile covering idle, low speed, an
    /// acceleration, and a braking event inside `[800, 4000]` rpm,
    /// stretched over the given horizon.
    pub fn speed_profile(duration: f64) -> SignalSpec {
        let f = |frac: f64, v: f64| (frac * duration, v);
        SignalSpec::PiecewiseLinear {
            breakpoints: vec![
                f(0.0, 800.0),
                f(0.20, 800.0),
                f(0.35, 1500.0),
                f(0.50, 1500.0),
                f(0.70, 3500.0),
                f(0.80, 3500.0),
                f(0.95, 1200.0),
                f(1.0, 1200.0),
            ],
        }
    }

    /// Reference command in deviation form: stoichiometric (zero) until 20
    /// seconds, then alternating lean/rich steps of ±0.1 every 20 seconds.
    /// The last step lands at 80 s so a 100-second run ends with a settled
    /// 20-second window rather than on a step edge.
    pub fn tracking_reference() -> SignalSpec {
        let mut breakpoints = vec![(0.0, 0.0)];
        for k in 0..4 {
            let t = 20.0 * (k + 1) as f64;
            breakpoints.push((t, if k % 2 == 0 { 0.1 } else { -0.1 }));
        }
        SignalSpec::StepSequence { breakpoints }
    }

    /// Fuel-purge style disturbance: alternating rectangular pulses of
    /// amplitude ±0.05 and 2-second width.
    pub fn purge_disturbance() -> SignalSpec {
        SignalSpec::PulseTrain {
            width: 2.0,
            breakpoints: vec![(25.0, 0.05), (45.0, -0.05), (65.0, 0.05), (85.0, -0.05)],
        }
    }

    /// A single 2-second purge pulse early in the run, for the
    /// oxygen-storage scenarios.
    pub fn single_purge() -> SignalSpec {
        SignalSpec::PulseTrain { width: 2.0, breakpoints: vec![(5.0, 0.05)] }
    }

    /// Named scenario presets:
    ///
    /// - `tracking-no-disturbance`: 100 s, varying speed, stepping
    ///   reference, zero disturbance.
    /// - `tracking-disturbance`: same plus the purge pulse train.
    /// - `oxygen-800rpm` / `oxygen-3000rpm`: 30 s at constant speed, zero
    ///   reference, one purge pulse — isolates the oxygen-storage response.
    pub fn scenario(name: &str) -> Result<Scenario> {
        let base = |duration: f64, speed, reference, disturbance| Scenario {
            duration,
            speed,
            reference,
            disturbance,
            step: None,
            history_interpolation: Default::default(),
            halt_threshold: 1e6,
            seed: 0,
        };
        match name {
            "tracking-no-disturbance" => Ok(base(
                100.0,
                speed_profile(100.0),
                tracking_reference(),
                SignalSpec::Constant { value: 0.0 },
            )),
            "tracking-disturbance" => Ok(base(
                100.0,
                speed_profile(100.0),
                tracking_reference(),
                purge_disturbance(),
            )),
            "oxygen-800rpm" => Ok(base(
                30.0,
                SignalSpec::Constant { value: 800.0 },
                SignalSpec::Constant { value: 0.0 },
                single_purge(),
            )),
            "oxygen-3000rpm" => Ok(base(
                30.0,
                SignalSpec::Constant { value: 3000.0 },
                SignalSpec::Constant { value: 0.0 },
                single_purge(),
            )),
            other => Err(Error::invalid(format!(
                "unknown scenario preset '{other}' (expected one of: \
                 tracking-no-disturbance, tracking-disturbance, oxygen-800rpm, \
                 oxygen-3000rpm)"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lpv::{AffineMatrixFn, DelayLaw, SamplingLaw, ScheduleSet};
    use crate::realize::DigitalTaps;
    use crate::Mat;
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn const_law(
        v: f64,
    ) -> (Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>, Vec<Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>>)
    {
        (Arc::new(move |_: &[f64]| v), vec![Arc::new(|_: &[f64]| 0.0)])
    }

    /// Scalar plant with two exogenous channels wired like the closed loop
    /// expects ([reference, disturbance]).
    fn loop_plant(a: f64, a_tau: f64, tau: f64, period: f64) -> LpvDelayPlant {
        let (tv, tg) = const_law(tau);
        let (sv, sg) = const_law(period);
        LpvDelayPlant {
            a: AffineMatrixFn::constant(Mat::from_row_slice(1, 1, &[a]), 1),
            a_tau: AffineMatrixFn::constant(Mat::from_row_slice(1, 1, &[a_tau]), 1),
            b1: AffineMatrixFn::constant(Mat::from_row_slice(1, 2, &[1.0, -1.0]), 1),
            b2: AffineMatrixFn::constant(Mat::from_row_slice(1, 1, &[1.0]), 1),
            c1: AffineMatrixFn::constant(Mat::from_row_slice(2, 1, &[1.0, 0.0]), 1),
            c1_tau: AffineMatrixFn::zeros(2, 1, 1),
            d11: AffineMatrixFn::zeros(2, 2, 1),
            d12: AffineMatrixFn::constant(Mat::from_row_slice(2, 1, &[0.0, 0.1]), 1),
            c2: AffineMatrixFn::constant(Mat::from_row_slice(1, 1, &[1.0]), 1),
            schedule: ScheduleSet::new(vec![0.0], vec![1.0], vec![0.0]).unwrap(),
            delay: DelayLaw::new(tv, tg, tau, 0.0).unwrap(),
            sampling: SamplingLaw::new(sv, sg, period).unwrap(),
            initial_history: ColVec::zeros(1),
        }
    }

    /// Trivial controller: zero output, frozen state.
    struct ZeroController(usize);
    impl SampledController for ZeroController {
        fn order(&self) -> usize {
            self.0
        }
        fn step(
            &mut self,
            t_k: f64,
            t_k1: f64,
            tau_k: f64,
            _rho: &[f64],
            _samples: &[f64],
        ) -> crate::Result<DigitalTaps> {
            let n = self.0;
            Ok(DigitalTaps {
                a_d: Mat::identity(n, n),
                b_d: Mat::zeros(n, 1),
                c_d: Mat::zeros(1, n),
                d_d: Mat::zeros(1, 1),
                delayed: vec![],
                interval: (t_k, t_k1),
                tau: tau_k,
                warmup: false,
                clamped: false,
            })
        }
    }

    /// Proportional feedback `u = -g y` in digital form.
    struct GainController(f64);
    impl SampledController for GainController {
        fn order(&self) -> usize {
            1
        }
        fn step(
            &mut self,
            t_k: f64,
            t_k1: f64,
            tau_k: f64,
            _rho: &[f64],
            _samples: &[f64],
        ) -> crate::Result<DigitalTaps> {
            Ok(DigitalTaps {
                a_d: Mat::zeros(1, 1),
                b_d: Mat::zeros(1, 1),
                c_d: Mat::zeros(1, 1),
                d_d: Mat::from_row_slice(1, 1, &[-self.0]),
                delayed: vec![],
                interval: (t_k, t_k1),
                tau: tau_k,
                warmup: false,
                clamped: false,
            })
        }
    }

    fn quiet_scenario(duration: f64) -> Scenario {
        Scenario {
            duration,
            speed: SignalSpec::Constant { value: 0.5 },
            reference: SignalSpec::Constant { value: 0.0 },
            disturbance: SignalSpec::Constant { value: 0.0 },
            step: None,
            history_interpolation: HistoryInterp::Linear,
            halt_threshold: 1e6,
            seed: 0,
        }
    }

    #[test]
    fn signal_eval_shapes() {
        let s = SignalSpec::Constant { value: 3.5 };
        assert_eq!(s.eval(-1.0), 3.5);
        assert_eq!(s.eval(100.0), 3.5);

        let s = SignalSpec::StepSequence { breakpoints: vec![(0.0, 1.0), (20.0, 1.1), (40.0, 0.9)] };
        assert_eq!(s.eval(-0.1), 0.0);
        assert_eq!(s.eval(0.0), 1.0);
        assert_eq!(s.eval(19.999), 1.0);
        assert_eq!(s.eval(20.0), 1.1);
        assert_eq!(s.eval(55.0), 0.9);

        let s = SignalSpec::PulseTrain { width: 2.0, breakpoints: vec![(5.0, 0.05), (10.0, -0.05)] };
        assert_eq!(s.eval(4.9), 0.0);
        assert_eq!(s.eval(5.0), 0.05);
        assert_eq!(s.eval(6.999), 0.05);
        assert_eq!(s.eval(7.0), 0.0);
        assert_eq!(s.eval(11.0), -0.05);

        let s = SignalSpec::PiecewiseLinear { breakpoints: vec![(0.0, 800.0), (10.0, 1800.0)] };
        assert_eq!(s.eval(-5.0), 800.0);
        assert_relative_eq!(s.eval(2.5), 1050.0);
        assert_eq!(s.eval(30.0), 1800.0);

        // Validation catches non-increasing breakpoints and overlapping
        // pulses.
        assert!(SignalSpec::StepSequence { breakpoints: vec![(1.0, 0.0), (1.0, 2.0)] }
            .validate()
            .is_err());
        assert!(SignalSpec::PulseTrain { width: 3.0, breakpoints: vec![(0.0, 1.0), (2.0, 1.0)] }
            .validate()
            .is_err());
    }

    #[test]
    fn signal_serde_round_trip() {
        let s = SignalSpec::PulseTrain { width: 2.0, breakpoints: vec![(5.0, 0.05)] };
        let json = serde_json::to_string(&s).unwrap();
        assert!(json.contains("pulse-train"), "tag in {json}");
        assert_eq!(serde_json::from_str::<SignalSpec>(&json).unwrap(), s);
    }

    #[test]
    fn history_lookup_modes() {
        let phi = ColVec::from_element(1, 7.0);
        let mut buf = HistoryBuffer::new(phi, 0.0, 10.0);
        buf.push(1.0, ColVec::from_element(1, 2.0)).unwrap();

        // Exactly on nodes.
        assert_eq!(buf.lookup(0.0).unwrap()[0], 7.0);
        assert_eq!(buf.lookup(1.0).unwrap()[0], 2.0);
        // Before the start: the constant initial history.
        assert_eq!(buf.lookup(-0.1).unwrap()[0], 7.0);
        // Linear in between: buffer holds (0, 7) and (1, 2).
        assert_relative_eq!(buf.lookup(0.25).unwrap()[0], 7.0 * 0.75 + 2.0 * 0.25);
        // Beyond the newest: an error.
        assert!(matches!(buf.lookup(1.5), Err(Error::History(_))));
        // Push must move forward.
        assert!(buf.push(0.5, ColVec::zeros(1)).is_err());

        // The documented two-point example: (0, 0) and (1, 2) at 0.25.
        let mut buf = HistoryBuffer::new(ColVec::zeros(1), 0.0, 10.0);
        buf.push(1.0, ColVec::from_element(1, 2.0)).unwrap();
        assert_relative_eq!(buf.lookup(0.25).unwrap()[0], 0.5);
    }

    #[test]
    fn dde_step_matches_exponential() {
        // No delay influence, no input: dx = -x, x(0) = 1, so x(1) = 1/e.
        let mut plant = loop_plant(-1.0, 0.0, 0.05, 0.01);
        plant.initial_history = ColVec::from_element(1, 1.0);
        let mut buf = HistoryBuffer::new(plant.initial_history.clone(), 0.0, 1.0);
        let rho = |_: f64| vec![0.5];
        let w = |_: f64| ColVec::zeros(2);
        let u = ColVec::zeros(1);
        let h = 1e-3;
        let mut x = ColVec::from_element(1, 1.0);
        for k in 0..1000 {
            x = dde_step(&plant, &mut buf, &rho, &w, &u, k as f64 * h, h).unwrap();
        }
        assert_relative_eq!(x[0], (-1.0f64).exp(), epsilon = 1e-6);
    }

    #[test]
    fn dde_step_equilibrium_stays_zero() {
        let plant = loop_plant(-1.0, 0.3, 0.05, 0.01);
        let mut buf = HistoryBuffer::new(ColVec::zeros(1), 0.0, 1.0);
        let rho = |_: f64| vec![0.5];
        let w = |_: f64| ColVec::zeros(2);
        let u = ColVec::zeros(1);
        for k in 0..200 {
            let x = dde_step(&plant, &mut buf, &rho, &w, &u, k as f64 * 1e-2, 1e-2).unwrap();
            assert_eq!(x[0], 0.0);
        }
    }

    /// Integrate the pure delayed scalar system dx = -x(t - 0.1) with unit
    /// constant pre-history at the given step; return x(5).
    fn delayed_oscillator_terminal(h: f64) -> f64 {
        let mut plant = loop_plant(0.0, -1.0, 0.1, 0.01);
        plant.initial_history = ColVec::from_element(1, 1.0);
        let mut buf = HistoryBuffer::new(plant.initial_history.clone(), 0.0, 1.0);
        let rho = |_: f64| vec![0.5];
        let w = |_: f64| ColVec::zeros(2);
        let u = ColVec::zeros(1);
        let steps = (5.0 / h).round() as usize;
        let mut x = ColVec::from_element(1, 1.0);
        for k in 0..steps {
            x = dde_step(&plant, &mut buf, &rho, &w, &u, k as f64 * h, h).unwrap();
        }
        x[0]
    }

    #[test]
    fn dde_step_delayed_oracle() {
        // A ten-times-finer integration serves as the reference.
        let coarse = delayed_oscillator_terminal(1e-2);
        let fine = delayed_oscillator_terminal(1e-3);
        assert!(
            (coarse - fine).abs() <= 1e-4,
            "terminal mismatch {:.3e}",
            (coarse - fine).abs()
        );
    }

    #[test]
    fn dde_step_halving_converges_second_order() {
        // Smooth window, no sampling events: the observed ratio of terminal
        // errors under step halving should reach the linear-interpolation
        // limit of the scheme (order two), comfortably above the required
        // 1.8.
        let reference = delayed_oscillator_terminal(1e-4);
        let e1 = (delayed_oscillator_terminal(8e-3) - reference).abs();
        let e2 = (delayed_oscillator_terminal(4e-3) - reference).abs();
        let ratio = e1 / e2;
        assert!(ratio >= 1.8, "convergence ratio {ratio:.2} (errors {e1:.3e}, {e2:.3e})");
    }

    #[test]
    fn simulate_equilibrium_is_identically_zero() {
        let plant = loop_plant(-1.0, 0.1, 0.05, 0.01);
        let mut ctrl = ZeroController(1);
        let trace = simulate(&plant, &mut ctrl, &quiet_scenario(0.5)).unwrap();
        assert!(trace.halted.is_none());
        assert!(trace.x.iter().all(|row| row[0] == 0.0));
        assert!(trace.u.iter().all(|row| row[0] == 0.0));
        assert!(trace.z.iter().all(|row| row.iter().all(|&v| v == 0.0)));
        assert!(trace.oxygen.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn simulate_uniform_sampling_at_constant_speed() {
        let plant = loop_plant(-1.0, 0.1, 0.05, 0.01);
        let mut ctrl = ZeroController(1);
        let trace = simulate(&plant, &mut ctrl, &quiet_scenario(0.2)).unwrap();
        let stamps: Vec<f64> =
            (0..trace.len()).filter(|&i| trace.sample_flag[i]).map(|i| trace.t[i]).collect();
        assert!(stamps.len() >= 15, "expected about 20 samples, got {}", stamps.len());
        for w in stamps.windows(2) {
            assert_relative_eq!(w[1] - w[0], 0.01, epsilon = 1e-12);
        }
    }

    #[test]
    fn simulate_holds_input_between_samples() {
        // A proportional controller on a disturbed loop produces nonzero,
        // changing inputs; they must still be exactly constant between
        // sampling flags.
        let plant = loop_plant(-1.0, 0.1, 0.05, 0.01);
        let mut ctrl = GainController(0.8);
        let mut sc = quiet_scenario(0.3);
        sc.disturbance = SignalSpec::PulseTrain { width: 0.07, breakpoints: vec![(0.02, 0.5)] };
        let trace = simulate(&plant, &mut ctrl, &sc).unwrap();
        assert!(trace.halted.is_none());
        let mut hold = trace.u[0][0];
        let mut seen_change = false;
        for i in 1..trace.len() {
            if trace.sample_flag[i] {
                seen_change |= trace.u[i][0] != hold;
                hold = trace.u[i][0];
            } else {
                assert_eq!(trace.u[i][0], hold, "row {i} (t = {})", trace.t[i]);
            }
        }
        assert!(seen_change, "the input never moved; the test is vacuous");
    }

    #[test]
    fn simulate_oxygen_is_trapezoid_of_mixture_deviation() {
        let plant = loop_plant(-1.0, 0.1, 0.05, 0.01);
        let mut ctrl = GainController(0.5);
        let mut sc = quiet_scenario(0.4);
        sc.reference = SignalSpec::StepSequence { breakpoints: vec![(0.0, 0.2)] };
        sc.disturbance = SignalSpec::PulseTrain { width: 0.1, breakpoints: vec![(0.1, 0.3)] };
        let trace = simulate(&plant, &mut ctrl, &sc).unwrap();
        let mut integral = 0.0;
        for i in 1..trace.len() {
            let dt = trace.t[i] - trace.t[i - 1];
            let f0 = trace.x[i - 1][0] + trace.d[i - 1];
            let f1 = trace.x[i][0] + trace.d[i];
            integral += 0.5 * (f0 + f1) * dt;
            assert!(
                (trace.oxygen[i] - integral).abs() <= 1e-9,
                "row {i}: stored {} vs recomputed {integral}",
                trace.oxygen[i]
            );
        }
    }

    #[test]
    fn simulate_is_deterministic() {
        let plant = loop_plant(-1.0, 0.1, 0.05, 0.01);
        let mut sc = quiet_scenario(0.3);
        sc.disturbance = SignalSpec::PulseTrain { width: 0.05, breakpoints: vec![(0.05, 0.4)] };
        let a = simulate(&plant, &mut GainController(0.8), &sc).unwrap();
        let b = simulate(&plant, &mut GainController(0.8), &sc).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_csv(), b.to_csv());
    }

    #[test]
    fn simulate_halts_on_instability() {
        // Unstable plant, destabilizing positive feedback.
        let plant = loop_plant(2.0, 0.0, 0.05, 0.01);
        let mut ctrl = GainController(-5.0);
        let mut sc = quiet_scenario(5.0);
        sc.disturbance = SignalSpec::StepSequence { breakpoints: vec![(0.0, 1.0)] };
        sc.halt_threshold = 1e3;
        let trace = simulate(&plant, &mut ctrl, &sc).unwrap();
        let halted = trace.halted.as_deref().expect("run must halt");
        assert!(halted.contains("halt threshold"), "message: {halted}");
        assert!(*trace.t.last().unwrap() < 5.0, "trace must be truncated");
        assert!(!trace.is_empty());
    }

    #[test]
    fn simulate_rejects_wrong_exogenous_width() {
        let mut plant = loop_plant(-1.0, 0.1, 0.05, 0.01);
        plant.b1 = AffineMatrixFn::constant(Mat::from_row_slice(1, 1, &[1.0]), 1);
        plant.d11 = AffineMatrixFn::zeros(2, 1, 1);
        let err = simulate(&plant, &mut ZeroController(1), &quiet_scenario(0.1));
        assert!(matches!(err, Err(Error::Plant(_))), "got {err:?}");
    }

    #[test]
    fn metrics_first_order_lag_oracle() {
        // Build a synthetic trace of y = 1 - exp(-t/T) toward r = 1: zero
        // overshoot, settling at T ln 50. The window must be long enough
        // that its final row sits essentially at the asymptote, otherwise
        // the 2% band shifts.
        let t_const = 0.5;
        let n = 4000;
        let dt = 10.0 * t_const / n as f64;
        let mut trace = SimulationTrace {
            t: Vec::new(),
            x: Vec::new(),
            x_d: Vec::new(),
            u: Vec::new(),
            y: Vec::new(),
            r: Vec::new(),
            d: Vec::new(),
            omega: Vec::new(),
            tau: Vec::new(),
            sample_flag: Vec::new(),
            z: Vec::new(),
            oxygen: Vec::new(),
            halted: None,
        };
        for i in 0..=n {
            let t = i as f64 * dt;
            let v = 1.0 - (-t / t_const).exp();
            trace.t.push(t);
            trace.x.push(vec![v]);
            trace.x_d.push(vec![0.0]);
            trace.u.push(vec![0.0]);
            trace.y.push(vec![v]);
            trace.r.push(1.0);
            trace.d.push(0.0);
            trace.omega.push(0.0);
            trace.tau.push(0.0);
            trace.sample_flag.push(false);
            trace.z.push(vec![2.0 * v]);
            trace.oxygen.push(0.0);
        }
        let m = metrics(&trace, (0.0, 10.0 * t_const)).unwrap();
        assert_eq!(m.overshoot_pct, 0.0);
        // 2% band of the travel to the window's final value (slightly less
        // than 1), hit near T ln 50 up to mesh resolution.
        let settle = m.settling_time.expect("must settle");
        assert!(
            (settle - t_const * 50f64.ln()).abs() <= 3.0 * dt + 0.02 * t_const,
            "settling {settle} vs {}",
            t_const * 50f64.ln()
        );
        assert!(m.steady_state_error <= 0.02);

        // Homogeneity: doubling z doubles the gain estimate.
        let g1 = m.l2_gain.unwrap();
        let mut doubled = trace.clone();
        for z in &mut doubled.z {
            for v in z.iter_mut() {
                *v *= 2.0;
            }
        }
        let g2 = metrics(&doubled, (0.0, 10.0 * t_const)).unwrap().l2_gain.unwrap();
        assert_relative_eq!(g2, 2.0 * g1, epsilon = 1e-12);

        // No exogenous energy: the gain is flagged undefined.
        let mut silent = trace.clone();
        for v in &mut silent.r {
            *v = 0.0;
        }
        assert_eq!(metrics(&silent, (0.0, 10.0 * t_const)).unwrap().l2_gain, None);

        // Window outside the trace span is rejected.
        assert!(metrics(&trace, (0.0, 100.0)).is_err());
    }

    #[test]
    fn certified_closed_loop_respects_energy_bound() {
        // Full pipeline: synthesize on a scalar delayed plant, recover and
        // discretize at every sampling instant inside the loop, and check
        // that the realized closed loop honors the certified disturbance
        // attenuation level for a finite-energy input (zero initial state,
        // generous margin for quadrature and truncation).
        use crate::realize::CertifiedController;
        use crate::synthesis::{synthesize, SynthesisOptions};

        let plant = loop_plant(-1.0, 0.1, 0.05, 0.01);
        let options = SynthesisOptions {
            grid_counts: vec![3],
            lambda2: vec![1.0],
            lambda3: vec![1.0],
            lambda4: vec![1.0],
            verify_grid_counts: vec![5],
            ..SynthesisOptions::default()
        };
        let cert = synthesize(&plant, &options).unwrap();
        assert!(cert.gamma > 0.0);

        let mut ctrl = CertifiedController::new(&cert, &plant);
        let mut sc = quiet_scenario(4.0);
        sc.disturbance = SignalSpec::PulseTrain { width: 0.5, breakpoints: vec![(0.2, 0.3)] };
        let trace = simulate(&plant, &mut ctrl, &sc).unwrap();
        assert!(trace.halted.is_none(), "halted: {:?}", trace.halted);
        assert!(trace.x.iter().all(|row| row.iter().all(|v| v.is_finite())));

        let m = metrics(&trace, (0.0, 4.0)).unwrap();
        let gain = m.l2_gain.expect("pulse carries energy");
        assert!(
            gain <= 1.05 * cert.gamma,
            "observed gain {gain:.4} vs certified level {:.4}",
            cert.gamma
        );

        // The loop exercised warm brackets: after the first few samples the
        // delayed taps bind to genuine recorded instants and the input moves.
        let moved = trace.u.iter().any(|row| row[0] != 0.0);
        assert!(moved, "the certified controller never acted");
    }

    #[test]
    fn scenario_presets_are_valid() {
        for name in
            ["tracking-no-disturbance", "tracking-disturbance", "oxygen-800rpm", "oxygen-3000rpm"]
        {
            let sc = presets::scenario(name).unwrap();
            sc.validate().unwrap();
        }
        assert!(presets::scenario("nope").is_err());
    }
}
