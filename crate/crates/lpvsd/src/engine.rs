//! Spark-ignition air-fuel-ratio benchmark: a 4-state LPV plant scheduled on
//! engine speed (rpm), with a speed-dependent transport delay from fuel
//! injection to the upstream lambda sensor and speed-dependent sampling.
//!
//! States: `x1` upstream lambda deviation, `x2` fuel-injector actuator state,
//! `x3` integral of the tracking error, `x4` integral of `x3`. Exogenous
//! inputs: `w = [r, d]` (lambda reference deviation and sensor/mixture
//! disturbance). Performance output weights the two integrators and the
//! control effort.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::lpv::{AffineMatrixFn, DelayLaw, LpvDelayPlant, SamplingLaw, ScheduleSet};
use crate::{ColVec, Error, Mat, Result};

/// Which sampling-period law ties sampling to engine speed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum SamplingConvention {
    /// `T(omega) = 4 pi / omega`: one sample per two crankshaft revolutions
    /// with omega read as a raw rpm number.
    #[default]
    #[serde(rename = "literal-4pi")]
    Literal4Pi,
    /// `T(omega) = 120 / omega`: two crankshaft revolutions converted from
    /// rpm to seconds.
    #[serde(rename = "physical-120")]
    Physical120,
}

impl SamplingConvention {
    fn numerator(self) -> f64 {
        match self {
            SamplingConvention::Literal4Pi => 4.0 * PI,
            SamplingConvention::Physical120 => 120.0,
        }
    }
}

/// Physical and weighting parameters of the benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    /// Cylinder count (>= 2); sets the intake-to-torque lag together with speed.
    pub cylinders: u32,
    /// Fuel-injection actuator gain.
    pub actuator_gain: f64,
    /// Fuel-injection actuator pole magnitude.
    pub actuator_pole: f64,
    /// Regularization pole on the tracking-error integrator.
    pub eps1: f64,
    /// Regularization pole on the second integrator.
    pub eps2: f64,
    /// Performance weight on the tracking-error integral.
    pub weight_tracking: f64,
    /// Performance weight on the second integrator.
    pub weight_storage: f64,
    /// Performance weight on the control effort.
    pub weight_effort: f64,
    /// Engine speed range in rpm.
    pub speed_min: f64,
    pub speed_max: f64,
    /// Bound on the speed change between consecutive samples, rpm.
    pub speed_step_bound: f64,
    pub sampling_convention: SamplingConvention,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            cylinders: 6,
            actuator_gain: 50.0,
            actuator_pole: 50.0,
            eps1: 1e-3,
            eps2: 1e-3,
            weight_tracking: 1.0,
            weight_storage: 0.1,
            weight_effort: 0.1,
            speed_min: 800.0,
            speed_max: 4000.0,
            speed_step_bound: 50.0,
            sampling_convention: SamplingConvention::default(),
        }
    }
}

impl EngineConfig {
    fn check(&self) -> Result<()> {
        if self.cylinders < 2 {
            return Err(Error::invalid("engine needs at least 2 cylinders"));
        }
        if !(self.speed_min > 0.0 && self.speed_min < self.speed_max) {
            return Err(Error::invalid(format!(
                "speed range [{}, {}] must be positive and increasing",
                self.speed_min, self.speed_max
            )));
        }
        if !(self.speed_step_bound >= 0.0) {
            return Err(Error::invalid("speed step bound must be nonnegative"));
        }
        for (name, v) in [
            ("actuator_gain", self.actuator_gain),
            ("actuator_pole", self.actuator_pole),
        ] {
            if !(v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Coefficient `k` such that the lag state evolves as `-k * omega * x1`;
    /// equals 1/100 for six cylinders.
    fn lag_slope(&self) -> f64 {
        let cyl = f64::from(self.cylinders);
        cyl / (120.0 * (cyl - 1.0))
    }
}

/// First-order lag time constant of the intake/torque path in seconds:
/// `100 / omega` for the default six-cylinder engine.
pub fn time_constant(omega_rpm: f64) -> Result<f64> {
    if !(omega_rpm > 0.0) {
        return Err(Error::invalid(format!("engine speed must be positive, got {omega_rpm}")));
    }
    Ok(100.0 / omega_rpm)
}

/// Injection-to-sensor transport delay `tau(omega) = 180 / omega` seconds,
/// packaged with its exact gradient and the bounds implied by the speed range.
pub fn delay_law(cfg: &EngineConfig) -> Result<DelayLaw> {
    cfg.check()?;
    let upper = 180.0 / cfg.speed_min;
    // Worst-case per-sample delay change: steepest slope times the speed step.
    let rate = 180.0 / (cfg.speed_min * cfg.speed_min) * cfg.speed_step_bound;
    DelayLaw::new(
        Arc::new(|rho: &[f64]| 180.0 / rho[0]),
        vec![Arc::new(|rho: &[f64]| -180.0 / (rho[0] * rho[0]))],
        upper,
        rate,
    )
}

/// Speed-synchronous sampling: one sample every two crankshaft revolutions,
/// under the configured convention.
pub fn sampling_law(cfg: &EngineConfig) -> Result<SamplingLaw> {
    cfg.check()?;
    let num = cfg.sampling_convention.numerator();
    let upper = num / cfg.speed_min;
    SamplingLaw::new(
        Arc::new(move |rho: &[f64]| num / rho[0]),
        vec![Arc::new(move |rho: &[f64]| -num / (rho[0] * rho[0]))],
        upper,
    )
}

/// Assemble the 4-state benchmark plant scheduled on `rho = [omega]`.
pub fn build_afr_plant(cfg: &EngineConfig) -> Result<LpvDelayPlant> {
    cfg.check()?;
    let k = cfg.lag_slope();
    let lam = cfg.actuator_pole;

    // dx1 = -k w x1 + k w x2(t - tau); the fresh mixture burned this cycle
    // was injected one transport delay ago.
    let a = AffineMatrixFn::new(
        Mat::from_row_slice(
            4,
            4,
            &[
                0.0, 0.0, 0.0, 0.0, //
                0.0, -lam, 0.0, 0.0, //
                -1.0, 0.0, -cfg.eps1, 0.0, //
                0.0, 0.0, 1.0, -cfg.eps2,
            ],
        ),
        vec![Mat::from_row_slice(
            4,
            4,
            &[
                -k, 0.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, 0.0,
            ],
        )],
    )?;

    let mut a_tau_slope = Mat::zeros(4, 4);
    a_tau_slope[(0, 1)] = k;
    let a_tau = AffineMatrixFn::new(Mat::zeros(4, 4), vec![a_tau_slope])?;

    let b1 = AffineMatrixFn::constant(
        Mat::from_row_slice(4, 2, &[0.0, 0.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0]),
        1,
    );
    let b2 = AffineMatrixFn::constant(
        Mat::from_row_slice(4, 1, &[0.0, cfg.actuator_gain, 0.0, 0.0]),
        1,
    );

    let c1 = AffineMatrixFn::constant(
        Mat::from_row_slice(
            3,
            4,
            &[
                0.0, 0.0, cfg.weight_tracking, 0.0, //
                0.0, 0.0, 0.0, cfg.weight_storage, //
                0.0, 0.0, 0.0, 0.0,
            ],
        ),
        1,
    );
    let c1_tau = AffineMatrixFn::zeros(3, 4, 1);
    let d11 = AffineMatrixFn::zeros(3, 2, 1);
    let d12 = AffineMatrixFn::constant(Mat::from_row_slice(3, 1, &[0.0, 0.0, cfg.weight_effort]), 1);
    let c2 = AffineMatrixFn::constant(Mat::from_row_slice(1, 4, &[0.0, 0.0, 1.0, 0.0]), 1);

    let schedule = ScheduleSet::new(
        vec![cfg.speed_min],
        vec![cfg.speed_max],
        vec![cfg.speed_step_bound],
    )?;

    Ok(LpvDelayPlant {
        a,
        a_tau,
        b1,
        b2,
        c1,
        c1_tau,
        d11,
        d12,
        c2,
        schedule,
        delay: delay_law(cfg)?,
        sampling: sampling_law(cfg)?,
        initial_history: ColVec::zeros(4),
    })
}

/// Three-way-catalyst oxygen-storage bookkeeping used as a validation metric:
/// the stored-oxygen deviation integrates the upstream lambda deviation
/// scaled by the upstream oxygen mass flow.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwcState {
    /// Accumulated oxygen storage deviation.
    pub oxygen_dev: f64,
    /// Upstream oxygen mass flow (constant scaling).
    pub upstream_flow: f64,
}

impl TwcState {
    pub fn new(upstream_flow: f64) -> Self {
        Self { oxygen_dev: 0.0, upstream_flow }
    }
}

/// One explicit integrator step of the oxygen-storage deviation.
pub fn twc_step(state: TwcState, dlam_up: f64, dt: f64) -> TwcState {
    TwcState {
        oxygen_dev: state.oxygen_dev + state.upstream_flow * dlam_up * dt,
        upstream_flow: state.upstream_flow,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lpv::validate_plant;
    use approx::assert_relative_eq;

    #[test]
    fn time_constant_values() {
        assert_relative_eq!(time_constant(1000.0).unwrap(), 0.1, max_relative = 1e-15);
        assert_relative_eq!(time_constant(100.0).unwrap(), 1.0, max_relative = 1e-15);
        assert_relative_eq!(time_constant(4000.0).unwrap(), 0.025, max_relative = 1e-15);
        assert!(time_constant(0.0).is_err());
        assert!(time_constant(-100.0).is_err());
    }

    #[test]
    fn delay_values() {
        let law = delay_law(&EngineConfig::default()).unwrap();
        assert_relative_eq!(law.tau(&[800.0]), 0.225, max_relative = 1e-15);
        assert_relative_eq!(law.tau(&[4000.0]), 0.045, max_relative = 1e-15);
        assert_relative_eq!(law.tau(&[1800.0]), 0.1, max_relative = 1e-15);
        assert_relative_eq!(law.upper(), 0.225, max_relative = 1e-15);
        assert_relative_eq!(law.grad(&[1000.0])[0], -180e-6, max_relative = 1e-12);
    }

    #[test]
    fn sampling_values_both_conventions() {
        let lit = sampling_law(&EngineConfig::default()).unwrap();
        assert_relative_eq!(lit.period(&[800.0]), 0.015_707_963_267_948_966, max_relative = 1e-15);
        assert_relative_eq!(lit.period(&[4000.0]), 0.003_141_592_653_589_793, max_relative = 1e-15);

        let cfg = EngineConfig {
            sampling_convention: SamplingConvention::Physical120,
            ..EngineConfig::default()
        };
        let phys = sampling_law(&cfg).unwrap();
        assert_relative_eq!(phys.period(&[800.0]), 0.15, max_relative = 1e-15);
        assert_relative_eq!(phys.period(&[4000.0]), 0.03, max_relative = 1e-15);
    }

    #[test]
    fn afr_plant_matrices_at_2000rpm() {
        let plant = build_afr_plant(&EngineConfig::default()).unwrap();
        let at = plant.eval_at(&[2000.0]).unwrap();

        let a_expect = Mat::from_row_slice(
            4,
            4,
            &[
                -20.0, 0.0, 0.0, 0.0, //
                0.0, -50.0, 0.0, 0.0, //
                -1.0, 0.0, -1e-3, 0.0, //
                0.0, 0.0, 1.0, -1e-3,
            ],
        );
        assert_relative_eq!(at.a, a_expect, max_relative = 1e-14);

        let mut a_tau_expect = Mat::zeros(4, 4);
        a_tau_expect[(0, 1)] = 20.0;
        assert_relative_eq!(at.a_tau, a_tau_expect, max_relative = 1e-14);

        assert_relative_eq!(
            at.b1,
            Mat::from_row_slice(4, 2, &[0.0, 0.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0]),
            max_relative = 1e-15
        );
        assert_relative_eq!(
            at.b2,
            Mat::from_row_slice(4, 1, &[0.0, 50.0, 0.0, 0.0]),
            max_relative = 1e-15
        );
        assert_relative_eq!(
            at.c2,
            Mat::from_row_slice(1, 4, &[0.0, 0.0, 1.0, 0.0]),
            max_relative = 1e-15
        );
        assert_relative_eq!(
            at.c1,
            Mat::from_row_slice(
                3,
                4,
                &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.1, 0.0, 0.0, 0.0, 0.0]
            ),
            max_relative = 1e-15
        );
        assert_relative_eq!(
            at.d12,
            Mat::from_row_slice(3, 1, &[0.0, 0.0, 0.1]),
            max_relative = 1e-15
        );
        assert!(at.d11.iter().all(|v| *v == 0.0));
        assert!(at.c1_tau.iter().all(|v| *v == 0.0));

        assert_relative_eq!(at.tau, 0.09, max_relative = 1e-15);
        assert_relative_eq!(at.period, 4.0 * std::f64::consts::PI / 2000.0, max_relative = 1e-15);
    }

    #[test]
    fn afr_plant_passes_validation() {
        let plant = build_afr_plant(&EngineConfig::default()).unwrap();
        let report = validate_plant(&plant);
        assert!(report.is_valid(), "findings: {:?}", report.findings);

        let dims = plant.dims();
        assert_eq!(dims.n, 4);
        assert_eq!(dims.n_w, 2);
        assert_eq!(dims.n_u, 1);
        assert_eq!(dims.n_z, 3);
        assert_eq!(dims.n_y, 1);
    }

    #[test]
    fn afr_plant_rejects_bad_config() {
        let cfg = EngineConfig { cylinders: 1, ..EngineConfig::default() };
        assert!(build_afr_plant(&cfg).is_err());
        let cfg = EngineConfig { speed_min: -5.0, ..EngineConfig::default() };
        assert!(build_afr_plant(&cfg).is_err());
    }

    #[test]
    fn twc_integrates_oxygen() {
        let s = TwcState::new(1.0);
        let s = twc_step(s, 0.1, 0.01);
        assert_relative_eq!(s.oxygen_dev, 0.001, max_relative = 1e-15);
        // Equal-and-opposite excursions cancel.
        let s = twc_step(s, -0.1, 0.01);
        assert_relative_eq!(s.oxygen_dev, 0.0, epsilon = 1e-18);
    }
}
