//! Core LPV vocabulary: scheduling sets, delay/sampling laws, affine matrix
//! functions, grids, sign vertices, and the delayed LPV plant itself.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::{ColVec, Error, Mat, Result};

/// Scalar function of the scheduling parameter vector.
pub type ParamFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Hyper-rectangle of admissible scheduling values together with a bound on
/// the per-sample parameter increment along each axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSet {
    lower: Vec<f64>,
    upper: Vec<f64>,
    rate_bound: Vec<f64>,
}

impl ScheduleSet {
    /// `rate_bound[i]` bounds |rho_i(t_{k+1}) - rho_i(t_k)| between
    /// consecutive samples; zero means the axis is frozen.
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, rate_bound: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::invalid("scheduling set needs at least one axis"));
        }
        if lower.len() != upper.len() || lower.len() != rate_bound.len() {
            return Err(Error::dim(format!(
                "schedule bounds disagree: {} lower, {} upper, {} rate",
                lower.len(),
                upper.len(),
                rate_bound.len()
            )));
        }
        for i in 0..lower.len() {
            if !(lower[i] < upper[i]) {
                return Err(Error::invalid(format!(
                    "axis {i}: lower bound {} must lie below upper bound {}",
                    lower[i], upper[i]
                )));
            }
            if !(rate_bound[i] >= 0.0) {
                return Err(Error::invalid(format!(
                    "axis {i}: rate bound must be nonnegative, got {}",
                    rate_bound[i]
                )));
            }
        }
        Ok(Self { lower, upper, rate_bound })
    }

    /// Number of scheduling axes.
    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn rate_bound(&self) -> &[f64] {
        &self.rate_bound
    }

    /// Inclusive membership test.
    pub fn contains(&self, rho: &[f64]) -> bool {
        rho.len() == self.dim()
            && rho
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(r, (lo, hi))| *r >= *lo && *r <= *hi)
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| 0.5 * (lo + hi))
            .collect()
    }
}

/// Parameter-dependent state delay `tau(rho)` with its gradient, a hard upper
/// bound, and a bound on the per-sample delay increment.
#[derive(Clone)]
pub struct DelayLaw {
    value: ParamFn,
    grad: Vec<ParamFn>,
    upper: f64,
    rate_bound: f64,
}

impl DelayLaw {
    pub fn new(value: ParamFn, grad: Vec<ParamFn>, upper: f64, rate_bound: f64) -> Result<Self> {
        if !(upper > 0.0) {
            return Err(Error::invalid(format!("delay upper bound must be positive, got {upper}")));
        }
        if !(rate_bound >= 0.0) {
            return Err(Error::invalid("delay rate bound must be nonnegative"));
        }
        Ok(Self { value, grad, upper, rate_bound })
    }

    pub fn tau(&self, rho: &[f64]) -> f64 {
        (self.value)(rho)
    }

    /// Gradient d tau / d rho, one entry per scheduling axis.
    pub fn grad(&self, rho: &[f64]) -> Vec<f64> {
        self.grad.iter().map(|g| g(rho)).collect()
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn rate_bound(&self) -> f64 {
        self.rate_bound
    }

    pub fn n_params(&self) -> usize {
        self.grad.len()
    }
}

impl fmt::Debug for DelayLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DelayLaw")
            .field("upper", &self.upper)
            .field("rate_bound", &self.rate_bound)
            .field("n_params", &self.grad.len())
            .finish()
    }
}

/// Parameter-dependent sampling period `T(rho)` with its gradient and a hard
/// upper bound. The next sampling instant is `t_{k+1} = t_k + T(rho(t_k))`.
#[derive(Clone)]
pub struct SamplingLaw {
    value: ParamFn,
    grad: Vec<ParamFn>,
    upper: f64,
}

impl SamplingLaw {
    pub fn new(value: ParamFn, grad: Vec<ParamFn>, upper: f64) -> Result<Self> {
        if !(upper > 0.0) {
            return Err(Error::invalid(format!(
                "sampling upper bound must be positive, got {upper}"
            )));
        }
        Ok(Self { value, grad, upper })
    }

    pub fn period(&self, rho: &[f64]) -> f64 {
        (self.value)(rho)
    }

    pub fn grad(&self, rho: &[f64]) -> Vec<f64> {
        self.grad.iter().map(|g| g(rho)).collect()
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn n_params(&self) -> usize {
        self.grad.len()
    }
}

impl fmt::Debug for SamplingLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SamplingLaw")
            .field("upper", &self.upper)
            .field("n_params", &self.grad.len())
            .finish()
    }
}

/// Matrix-valued function affine in the scheduling parameter:
/// `M(rho) = base + sum_i rho_i * coeffs[i]`.
///
/// Serialized as row-major coefficient arrays with explicit dimensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AffineRepr", into = "AffineRepr")]
pub struct AffineMatrixFn {
    base: Mat,
    coeffs: Vec<Mat>,
}

impl AffineMatrixFn {
    pub fn new(base: Mat, coeffs: Vec<Mat>) -> Result<Self> {
        for (i, c) in coeffs.iter().enumerate() {
            if c.shape() != base.shape() {
                return Err(Error::dim(format!(
                    "affine coefficient {i} is {}x{}, base is {}x{}",
                    c.nrows(),
                    c.ncols(),
                    base.nrows(),
                    base.ncols()
                )));
            }
        }
        Ok(Self { base, coeffs })
    }

    /// Constant function (all slope coefficients zero).
    pub fn constant(base: Mat, n_params: usize) -> Self {
        let z = Mat::zeros(base.nrows(), base.ncols());
        Self { base, coeffs: vec![z; n_params] }
    }

    pub fn zeros(rows: usize, cols: usize, n_params: usize) -> Self {
        Self::constant(Mat::zeros(rows, cols), n_params)
    }

    pub fn rows(&self) -> usize {
        self.base.nrows()
    }

    pub fn cols(&self) -> usize {
        self.base.ncols()
    }

    pub fn n_params(&self) -> usize {
        self.coeffs.len()
    }

    pub fn base(&self) -> &Mat {
        &self.base
    }

    /// Slope matrix for axis `i`, which is also the exact partial derivative
    /// with respect to `rho_i`.
    pub fn coeff(&self, i: usize) -> &Mat {
        &self.coeffs[i]
    }

    pub fn is_constant(&self) -> bool {
        self.coeffs.iter().all(|c| c.iter().all(|v| *v == 0.0))
    }

    pub fn eval(&self, rho: &[f64]) -> Result<Mat> {
        if rho.len() != self.coeffs.len() {
            return Err(Error::dim(format!(
                "affine function expects {} parameters, got {}",
                self.coeffs.len(),
                rho.len()
            )));
        }
        let mut out = self.base.clone();
        for (r, c) in rho.iter().zip(&self.coeffs) {
            out += c * *r;
        }
        Ok(out)
    }
}

/// Row-major transport form used for (de)serialization.
#[derive(Serialize, Deserialize)]
struct AffineRepr {
    rows: usize,
    cols: usize,
    base: Vec<f64>,
    coeffs: Vec<Vec<f64>>,
}

fn mat_to_row_major(m: &Mat) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

fn mat_from_row_major(rows: usize, cols: usize, data: &[f64]) -> Result<Mat> {
    if data.len() != rows * cols {
        return Err(Error::dim(format!(
            "expected {} entries for a {rows}x{cols} matrix, got {}",
            rows * cols,
            data.len()
        )));
    }
    Ok(Mat::from_row_slice(rows, cols, data))
}

impl From<AffineMatrixFn> for AffineRepr {
    fn from(f: AffineMatrixFn) -> Self {
        AffineRepr {
            rows: f.base.nrows(),
            cols: f.base.ncols(),
            base: mat_to_row_major(&f.base),
            coeffs: f.coeffs.iter().map(mat_to_row_major).collect(),
        }
    }
}

impl TryFrom<AffineRepr> for AffineMatrixFn {
    type Error = Error;

    fn try_from(r: AffineRepr) -> Result<Self> {
        let base = mat_from_row_major(r.rows, r.cols, &r.base)?;
        let coeffs = r
            .coeffs
            .iter()
            .map(|c| mat_from_row_major(r.rows, r.cols, c))
            .collect::<Result<Vec<_>>>()?;
        AffineMatrixFn::new(base, coeffs)
    }
}

/// Serde adapter storing a dense matrix as a row-major array with explicit
/// dimensions. Use with `#[serde(with = "crate::lpv::mat_serde")]`.
pub mod mat_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::Mat;

    #[derive(Serialize, Deserialize)]
    struct Repr {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(m: &Mat, s: S) -> Result<S::Ok, S::Error> {
        Repr { rows: m.nrows(), cols: m.ncols(), data: super::mat_to_row_major(m) }.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Mat, D::Error> {
        let r = Repr::deserialize(d)?;
        super::mat_from_row_major(r.rows, r.cols, &r.data).map_err(serde::de::Error::custom)
    }
}

/// Static dimensions of a delayed LPV plant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantDims {
    /// State dimension.
    pub n: usize,
    /// Exogenous input dimension (disturbance/reference channels).
    pub n_w: usize,
    /// Control input dimension.
    pub n_u: usize,
    /// Performance output dimension.
    pub n_z: usize,
    /// Measured output dimension.
    pub n_y: usize,
}

/// LPV plant with a parameter-varying state delay:
///
/// ```text
/// dx/dt = A(rho) x + Atau(rho) x(t - tau(rho)) + B1(rho) w + B2(rho) u
/// z     = C1(rho) x + C1tau(rho) x(t - tau(rho)) + D11(rho) w + D12(rho) u
/// y     = C2(rho) x
/// ```
///
/// with constant initial history `x(t) = initial_history` for `t <= 0`.
#[derive(Clone, Debug)]
pub struct LpvDelayPlant {
    pub a: AffineMatrixFn,
    pub a_tau: AffineMatrixFn,
    pub b1: AffineMatrixFn,
    pub b2: AffineMatrixFn,
    pub c1: AffineMatrixFn,
    pub c1_tau: AffineMatrixFn,
    pub d11: AffineMatrixFn,
    pub d12: AffineMatrixFn,
    pub c2: AffineMatrixFn,
    pub schedule: ScheduleSet,
    pub delay: DelayLaw,
    pub sampling: SamplingLaw,
    pub initial_history: ColVec,
}

/// All plant data frozen at one scheduling point.
#[derive(Clone, Debug)]
pub struct PlantAtRho {
    pub a: Mat,
    pub a_tau: Mat,
    pub b1: Mat,
    pub b2: Mat,
    pub c1: Mat,
    pub c1_tau: Mat,
    pub d11: Mat,
    pub d12: Mat,
    pub c2: Mat,
    pub tau: f64,
    pub tau_grad: Vec<f64>,
    pub period: f64,
    pub period_grad: Vec<f64>,
    /// Set when `rho` fell outside the declared scheduling set; evaluation
    /// still proceeds (the affine formulas extend everywhere).
    pub out_of_set: bool,
}

impl LpvDelayPlant {
    pub fn dims(&self) -> PlantDims {
        PlantDims {
            n: self.a.rows(),
            n_w: self.b1.cols(),
            n_u: self.b2.cols(),
            n_z: self.c1.rows(),
            n_y: self.c2.rows(),
        }
    }

    /// Freeze every matrix and law at `rho`. Out-of-set points evaluate with
    /// a warning flag rather than an error.
    pub fn eval_at(&self, rho: &[f64]) -> Result<PlantAtRho> {
        Ok(PlantAtRho {
            a: self.a.eval(rho)?,
            a_tau: self.a_tau.eval(rho)?,
            b1: self.b1.eval(rho)?,
            b2: self.b2.eval(rho)?,
            c1: self.c1.eval(rho)?,
            c1_tau: self.c1_tau.eval(rho)?,
            d11: self.d11.eval(rho)?,
            d12: self.d12.eval(rho)?,
            c2: self.c2.eval(rho)?,
            tau: self.delay.tau(rho),
            tau_grad: self.delay.grad(rho),
            period: self.sampling.period(rho),
            period_grad: self.sampling.grad(rho),
            out_of_set: !self.schedule.contains(rho),
        })
    }

    /// Shorthand used by synthesis entry points: error on the first finding.
    pub fn assert_valid(&self) -> Result<()> {
        let report = validate_plant(self);
        match report.findings.first() {
            None => Ok(()),
            Some(f) => Err(Error::Plant(f.clone())),
        }
    }
}

/// Structural validation report; an empty findings list means the plant is
/// usable for synthesis and simulation.
#[derive(Clone, Debug, Default)]
pub struct ValidationReport {
    pub findings: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.findings.is_empty()
    }
}

/// Check dimension consistency, law positivity and boundedness over a probe
/// grid, and agreement of the declared gradients with central differences.
///
/// Collects every finding instead of stopping at the first.
pub fn validate_plant(p: &LpvDelayPlant) -> ValidationReport {
    let mut findings = Vec::new();
    let n_s = p.schedule.dim();

    let n = p.a.rows();
    let checks: [(&str, &AffineMatrixFn, usize, usize); 9] = [
        ("A", &p.a, n, n),
        ("Atau", &p.a_tau, n, n),
        ("B1", &p.b1, n, p.b1.cols()),
        ("B2", &p.b2, n, p.b2.cols()),
        ("C1", &p.c1, p.c1.rows(), n),
        ("C1tau", &p.c1_tau, p.c1.rows(), n),
        ("D11", &p.d11, p.c1.rows(), p.b1.cols()),
        ("D12", &p.d12, p.c1.rows(), p.b2.cols()),
        ("C2", &p.c2, p.c2.rows(), n),
    ];
    for (name, m, rows, cols) in checks {
        if m.rows() != rows || m.cols() != cols {
            findings.push(format!(
                "dimension: {name} is {}x{} but must be {rows}x{cols}",
                m.rows(),
                m.cols()
            ));
        }
        if m.n_params() != n_s {
            findings.push(format!(
                "dimension: {name} has {} parameter slopes but the scheduling set has {n_s} axes",
                m.n_params()
            ));
        }
    }
    if p.initial_history.len() != n {
        findings.push(format!(
            "dimension: initial history has length {} but the state dimension is {n}",
            p.initial_history.len()
        ));
    }
    if p.delay.n_params() != n_s {
        findings.push(format!(
            "dimension: delay gradient has {} entries for {n_s} scheduling axes",
            p.delay.n_params()
        ));
    }
    if p.sampling.n_params() != n_s {
        findings.push(format!(
            "dimension: sampling gradient has {} entries for {n_s} scheduling axes",
            p.sampling.n_params()
        ));
    }
    if !findings.is_empty() {
        // Law probing below assumes consistent dimensions.
        return ValidationReport { findings };
    }

    const PROBE: usize = 101;
    let grid = match make_grid(&p.schedule, &vec![PROBE.min(11); n_s]) {
        Ok(g) => g,
        Err(e) => {
            findings.push(format!("probe grid: {e}"));
            return ValidationReport { findings };
        }
    };
    // Dense probing along each axis separately keeps the point count linear
    // in the number of axes while still catching law violations.
    let mut probes: Vec<Vec<f64>> = grid.points().to_vec();
    for axis in 0..n_s {
        let (lo, hi) = (p.schedule.lower()[axis], p.schedule.upper()[axis]);
        for k in 0..PROBE {
            let mut pt = p.schedule.midpoint();
            pt[axis] = lo + (hi - lo) * k as f64 / (PROBE - 1) as f64;
            probes.push(pt);
        }
    }

    let mut delay_range_bad = false;
    let mut period_range_bad = false;
    let mut delay_grad_bad = false;
    let mut period_grad_bad = false;
    for rho in &probes {
        let tau = p.delay.tau(rho);
        if !(tau > 0.0 && tau <= p.delay.upper()) && !delay_range_bad {
            findings.push(format!(
                "law: delay {tau} at rho {rho:?} leaves (0, {}]",
                p.delay.upper()
            ));
            delay_range_bad = true;
        }
        let period = p.sampling.period(rho);
        if !(period > 0.0 && period <= p.sampling.upper()) && !period_range_bad {
            findings.push(format!(
                "law: sampling period {period} at rho {rho:?} leaves (0, {}]",
                p.sampling.upper()
            ));
            period_range_bad = true;
        }

        for axis in 0..n_s {
            let span = p.schedule.upper()[axis] - p.schedule.lower()[axis];
            let h = span * 1e-5;
            let mut hi_pt = rho.clone();
            let mut lo_pt = rho.clone();
            hi_pt[axis] += h;
            lo_pt[axis] -= h;

            let fd_tau = (p.delay.tau(&hi_pt) - p.delay.tau(&lo_pt)) / (2.0 * h);
            let g_tau = p.delay.grad(rho)[axis];
            if (fd_tau - g_tau).abs() > 1e-6 * g_tau.abs().max(1.0) && !delay_grad_bad {
                findings.push(format!(
                    "law: delay gradient axis {axis} at rho {rho:?} is {g_tau} \
                     but central differences give {fd_tau}"
                ));
                delay_grad_bad = true;
            }

            let fd_p = (p.sampling.period(&hi_pt) - p.sampling.period(&lo_pt)) / (2.0 * h);
            let g_p = p.sampling.grad(rho)[axis];
            if (fd_p - g_p).abs() > 1e-6 * g_p.abs().max(1.0) && !period_grad_bad {
                findings.push(format!(
                    "law: sampling gradient axis {axis} at rho {rho:?} is {g_p} \
                     but central differences give {fd_p}"
                ));
                period_grad_bad = true;
            }
        }
    }

    ValidationReport { findings }
}

/// Finite scheduling grid, stored in row-major order over the axes (the last
/// axis varies fastest).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    points: Vec<Vec<f64>>,
    counts: Vec<usize>,
}

impl Grid {
    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Uniform grid over the scheduling box with `counts[i] >= 2` points per
/// axis. Axis endpoints are hit exactly.
pub fn make_grid(set: &ScheduleSet, counts: &[usize]) -> Result<Grid> {
    if counts.len() != set.dim() {
        return Err(Error::dim(format!(
            "grid counts have {} entries for {} scheduling axes",
            counts.len(),
            set.dim()
        )));
    }
    if let Some(c) = counts.iter().find(|c| **c < 2) {
        return Err(Error::invalid(format!("grid needs at least 2 points per axis, got {c}")));
    }

    let axes: Vec<Vec<f64>> = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let (lo, hi) = (set.lower()[i], set.upper()[i]);
            (0..c)
                .map(|k| {
                    if k + 1 == c {
                        hi
                    } else {
                        lo + (hi - lo) * k as f64 / (c - 1) as f64
                    }
                })
                .collect()
        })
        .collect();

    let total: usize = counts.iter().product();
    let mut points = Vec::with_capacity(total);
    let mut idx = vec![0usize; counts.len()];
    loop {
        points.push(idx.iter().enumerate().map(|(i, &k)| axes[i][k]).collect());
        // Odometer increment, last axis fastest.
        let mut axis = counts.len();
        loop {
            if axis == 0 {
                return Ok(Grid { points, counts: counts.to_vec() });
            }
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] < counts[axis] {
                break;
            }
            idx[axis] = 0;
        }
    }
}

/// All sign patterns `sigma in {-1, +1}^n_s` used to cover the unknown signs
/// of the parameter rates. Returned in a fixed order: the last axis flips
/// fastest, starting from all `+1`.
pub fn vertex_signs(n_s: usize) -> Vec<Vec<f64>> {
    let total = 1usize << n_s;
    (0..total)
        .map(|mask| {
            (0..n_s)
                .map(|axis| {
                    // Axis 0 is the slowest bit so the all-plus vertex comes first.
                    let bit = (mask >> (n_s - 1 - axis)) & 1;
                    if bit == 0 {
                        1.0
                    } else {
                        -1.0
                    }
                })
                .collect()
        })
        .collect()
}
