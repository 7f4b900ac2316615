//! Controller recovery and exact per-step discretization.
//!
//! A [`SynthesisCertificate`](crate::synthesis::SynthesisCertificate) stores
//! the transformed decision variables of the synthesis problem, not the
//! controller itself. This module undoes the synthesis change of variables:
//!
//! 1. [`factorize`] splits `I − X·Y` into `N·Mᵀ` (we take `M = I`, so
//!    `N = I − X·Y`; any valid factorization yields the same controller up to
//!    a state-coordinate change).
//! 2. [`realize`] inverts the variable transformation at a frozen scheduling
//!    point, producing the continuous-time controller matrices
//!    ([`ContinuousController`]). The controller integrates its own state with
//!    a delayed-state term, a held-state term, and the held plant measurement:
//!
//!    ```text
//!    ẋ_K(t) = A_K x_K(t) + A_{τK} x_K(t − τ) + A_{hK} x_K(t_k) + B_K y(t_k)
//!    u(t)   = C_K x_K(t_k) + D_K y(t_k)          for t in [t_k, t_{k+1})
//!    ```
//!
//! 3. [`discretize_step`] integrates that dynamics *exactly* across one
//!    sampling interval — exact for the held terms, trapezoidal in the
//!    delayed-state term whose argument is linearly interpolated between the
//!    controller's own past samples — yielding the [`DigitalTaps`] recursion
//!
//!    ```text
//!    x_d(k+1) = A_d x_d(k) + Σ_j A_j x_d(at timestamp t_j) + B_d y(k)
//!    u_d(k)   = C_d x_d(k) + D_d y(k)
//!    ```
//!
//!    where the three delayed taps are bound to the past sampling instants
//!    that bracket `t_k − τ_k` and `t_{k+1} − τ_k`.
//!
//! Every `(e^{hA} − I)A⁻¹` factor in the discretization is computed through
//! the integral form [`matrix_phi`], which stays valid when `A_K` is
//! singular.

use crate::lpv::LpvDelayPlant;
use crate::synthesis::SynthesisCertificate;
use crate::{Error, Mat, Result};

/// Condition-number ceiling past which `I − X·Y` is treated as singular.
const COND_LIMIT: f64 = 1e12;

/// Invertible pair `(N, M)` with `N·Mᵀ = I − X·Y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Factorization {
    /// Left factor; equals `I − X·Y` under the `M = I` convention.
    pub n_mat: Mat,
    /// Right factor; the identity under our convention.
    pub m_mat: Mat,
}

/// Split `I − X·Y` into `N·Mᵀ` with both factors invertible.
///
/// Chooses `M = I`, `N = I − X·Y`: the simplest valid factorization, exact in
/// floating point. Fails when `I − X·Y` has condition number above `1e12`;
/// a certificate whose coupling block `[[Y, I], [I, X]]` is positive definite
/// keeps `I − X·Y` nonsingular, so hitting this error means the certificate's
/// coupling positivity margin has collapsed.
pub fn factorize(x: &Mat, y: &Mat) -> Result<Factorization> {
    let n = x.nrows();
    if !x.is_square() || !y.is_square() || y.nrows() != n {
        return Err(Error::dim(format!(
            "factorize needs square matrices of equal size, got {}x{} and {}x{}",
            x.nrows(),
            x.ncols(),
            y.nrows(),
            y.ncols()
        )));
    }
    let n_mat = Mat::identity(n, n) - x * y;
    let svd = n_mat.clone().svd(false, false);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    let cond = if s_min > 0.0 { s_max / s_min } else { f64::INFINITY };
    if !cond.is_finite() || cond > COND_LIMIT {
        return Err(Error::Singular(format!(
            "I - X*Y has condition number {cond:.3e} (limit 1e12); the \
             certificate's coupling positivity block [[Y, I], [I, X]] should \
             keep it invertible, so its margin has degenerated"
        )));
    }
    Ok(Factorization { n_mat, m_mat: Mat::identity(n, n) })
}

impl Factorization {
    /// Frobenius residual `‖(I − X·Y) − N·Mᵀ‖_F`; zero by construction for
    /// the `M = I` choice, kept as an explicit check for future
    /// factorization choices.
    pub fn residual(&self, x: &Mat, y: &Mat) -> f64 {
        let n = x.nrows();
        ((Mat::identity(n, n) - x * y) - &self.n_mat * self.m_mat.transpose()).norm()
    }
}

/// Continuous-time controller matrices at one frozen scheduling point,
/// together with the factorization that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousController {
    /// Drift of the controller state.
    pub a_k: Mat,
    /// Gain on the controller state delayed by the plant's varying delay.
    pub a_tau_k: Mat,
    /// Gain on the controller state held from the last sampling instant.
    pub a_hold_k: Mat,
    /// Gain on the held plant measurement.
    pub b_k: Mat,
    /// Output gain on the held controller state.
    pub c_k: Mat,
    /// Direct feedthrough from the held measurement.
    pub d_k: Mat,
    /// Factorization used by the recovery; needed to reverse it.
    pub factorization: Factorization,
}

impl ContinuousController {
    /// Controller state dimension.
    pub fn order(&self) -> usize {
        self.a_k.nrows()
    }
}

/// Recover the continuous-time controller from a certificate at one
/// scheduling point.
///
/// Evaluates the certificate's transformed variables and the plant matrices
/// at `rho`, factorizes the coupling, and inverts the synthesis change of
/// variables:
///
/// ```text
/// A_K  = N⁻¹ (Â  − X·A·Y) M⁻ᵀ
/// A_τK = N⁻¹ (Âτ − X·Aτ·Y) M⁻ᵀ
/// B_K  = N⁻¹ (B̂  − X·B₂·D_K)
/// C_K  = (Ĉ − D_K·C₂·Y) M⁻ᵀ
/// A_hK = N⁻¹ (Âh − X·B₂·D_K·C₂·Y − N·B_K·C₂·Y − X·B₂·C_K·Mᵀ) M⁻ᵀ
/// ```
///
/// Substituting the result back into those definitions reproduces the hatted
/// variables to machine precision (see
/// [`reconstruct_hats`]), which is the self-test the verification pipeline
/// runs at every grid point.
pub fn realize(
    cert: &SynthesisCertificate,
    plant: &LpvDelayPlant,
    rho: &[f64],
) -> Result<ContinuousController> {
    let at = plant.eval_at(rho)?;
    let x = cert.x_mat.eval(rho)?;
    let y = cert.y_mat.eval(rho)?;
    let fact = factorize(&x, &y)?;
    let n_inv = fact
        .n_mat
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("factorization left factor N is singular".into()))?;
    let m_inv_t = fact
        .m_mat
        .transpose()
        .try_inverse()
        .ok_or_else(|| Error::Singular("factorization right factor M is singular".into()))?;

    let d_k = cert.d_gain.eval(rho)?;
    let a_k = &n_inv * (cert.a_hat.eval(rho)? - &x * &at.a * &y) * &m_inv_t;
    let a_tau_k = &n_inv * (cert.a_hat_tau.eval(rho)? - &x * &at.a_tau * &y) * &m_inv_t;
    let b_k = &n_inv * (cert.b_hat.eval(rho)? - &x * &at.b2 * &d_k);
    let c_k = (cert.c_hat.eval(rho)? - &d_k * &at.c2 * &y) * &m_inv_t;
    let a_hold_k = &n_inv
        * (cert.a_hat_hold.eval(rho)?
            - &x * &at.b2 * &d_k * &at.c2 * &y
            - &fact.n_mat * &b_k * &at.c2 * &y
            - &x * &at.b2 * &c_k * fact.m_mat.transpose())
        * &m_inv_t;

    Ok(ContinuousController { a_k, a_tau_k, a_hold_k, b_k, c_k, d_k, factorization: fact })
}

/// Transformed variables recomputed from realized controller matrices.
///
/// Applying the forward change of variables to a realized controller must
/// reproduce the certificate's hatted variables; [`realize`] and this
/// function are inverse maps, and the round-trip error is the standard
/// health check on a certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructedHats {
    pub a_hat: Mat,
    pub a_hat_tau: Mat,
    pub a_hat_hold: Mat,
    pub b_hat: Mat,
    pub c_hat: Mat,
}

/// Forward change of variables: rebuild the hatted synthesis variables from
/// realized controller matrices at the same scheduling point.
pub fn reconstruct_hats(
    ctrl: &ContinuousController,
    cert: &SynthesisCertificate,
    plant: &LpvDelayPlant,
    rho: &[f64],
) -> Result<ReconstructedHats> {
    let at = plant.eval_at(rho)?;
    let x = cert.x_mat.eval(rho)?;
    let y = cert.y_mat.eval(rho)?;
    let n_mat = &ctrl.factorization.n_mat;
    let m_t = ctrl.factorization.m_mat.transpose();
    let b_cross = &x * &at.b2 * &ctrl.d_k;
    Ok(ReconstructedHats {
        a_hat: n_mat * &ctrl.a_k * &m_t + &x * &at.a * &y,
        a_hat_tau: n_mat * &ctrl.a_tau_k * &m_t + &x * &at.a_tau * &y,
        a_hat_hold: n_mat * &ctrl.a_hold_k * &m_t
            + &b_cross * &at.c2 * &y
            + n_mat * &ctrl.b_k * &at.c2 * &y
            + &x * &at.b2 * &ctrl.c_k * &m_t,
        b_hat: n_mat * &ctrl.b_k + b_cross,
        c_hat: &ctrl.c_k * &m_t + &ctrl.d_k * &at.c2 * &y,
    })
}

/// Worst relative round-trip error between a certificate's hatted variables
/// and their reconstruction from the realized controller at `rho`.
///
/// Each hat's error is measured in Frobenius norm relative to
/// `1 + ‖hat‖_F`, so identically-zero hats compare absolutely.
pub fn round_trip_error(
    cert: &SynthesisCertificate,
    plant: &LpvDelayPlant,
    rho: &[f64],
) -> Result<f64> {
    let ctrl = realize(cert, plant, rho)?;
    let back = reconstruct_hats(&ctrl, cert, plant, rho)?;
    let rel = |orig: &Mat, re: &Mat| (orig - re).norm() / (1.0 + orig.norm());
    Ok([
        rel(&cert.a_hat.eval(rho)?, &back.a_hat),
        rel(&cert.a_hat_tau.eval(rho)?, &back.a_hat_tau),
        rel(&cert.a_hat_hold.eval(rho)?, &back.a_hat_hold),
        rel(&cert.b_hat.eval(rho)?, &back.b_hat),
        rel(&cert.c_hat.eval(rho)?, &back.c_hat),
    ]
    .into_iter()
    .fold(0.0, f64::max))
}

/// Matrix exponential `E = e^{hA}` together with its integral
/// `Φ = ∫₀ʰ e^{sA} ds`, computed jointly so the pair is valid for singular
/// `A` (no inverse is ever formed).
///
/// Uses the augmented-block exponential
///
/// ```text
/// exp(h·[[A, I], [0, 0]]) = [[E, Φ], [0, I]]
/// ```
///
/// and satisfies `E = I + A·Φ` to machine precision. `h = 0` returns
/// `(I, 0)` exactly; negative `h` is rejected (the discretization only ever
/// integrates forward).
pub fn matrix_phi(a: &Mat, h: f64) -> Result<(Mat, Mat)> {
    if !a.is_square() {
        return Err(Error::dim(format!("matrix_phi needs a square matrix, got {}x{}", a.nrows(), a.ncols())));
    }
    if !h.is_finite() || h < 0.0 {
        return Err(Error::invalid(format!("matrix_phi needs a step h >= 0, got {h}")));
    }
    let n = a.nrows();
    if h == 0.0 {
        return Ok((Mat::identity(n, n), Mat::zeros(n, n)));
    }
    let mut aug = Mat::zeros(2 * n, 2 * n);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * h));
    aug.view_mut((0, n), (n, n)).copy_from(&(Mat::identity(n, n) * h));
    let exp = aug.exp();
    let e = exp.view((0, 0), (n, n)).into_owned();
    let phi = exp.view((0, n), (n, n)).into_owned();
    if e.iter().chain(phi.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("matrix exponential overflowed at step h = {h}")));
    }
    Ok((e, phi))
}

/// The four interpolation ratios that weight the delayed-state taps.
///
/// `t_l, t_{l+1}, t_{l+2}` are consecutive sampling instants bracketing the
/// delayed arguments: `t_l ≤ t_k − τ_k < t_{l+1}` and
/// `t_{l+1} ≤ t_{k+1} − τ_k < t_{l+2}`. Returns
///
/// ```text
/// c1 = (t_{l+1} − (t_k − τ_k)) / (t_{l+1} − t_l)
/// c2 = ((t_k − τ_k) − t_l)     / (t_{l+1} − t_l)
/// c3 = (t_{l+2} − (t_{k+1} − τ_k)) / (t_{l+2} − t_{l+1})
/// c4 = ((t_{k+1} − τ_k) − t_{l+1}) / (t_{l+2} − t_{l+1})
/// ```
///
/// exactly as printed, so `c1 + c2 = 1` and `c3 + c4 = 1` hold identically;
/// all four lie in `[0, 1]` precisely when the bracketing preconditions
/// hold. Zero-length bracket intervals are rejected.
pub fn interp_coeffs(
    t_k: f64,
    t_k1: f64,
    tau_k: f64,
    t_l: f64,
    t_l1: f64,
    t_l2: f64,
) -> Result<(f64, f64, f64, f64)> {
    if !(t_l1 - t_l).is_normal() || t_l1 <= t_l {
        return Err(Error::invalid(format!(
            "degenerate bracket interval [t_l, t_l+1] = [{t_l}, {t_l1}]"
        )));
    }
    if !(t_l2 - t_l1).is_normal() || t_l2 <= t_l1 {
        return Err(Error::invalid(format!(
            "degenerate bracket interval [t_l+1, t_l+2] = [{t_l1}, {t_l2}]"
        )));
    }
    let c1 = (t_l1 - (t_k - tau_k)) / (t_l1 - t_l);
    let c2 = ((t_k - tau_k) - t_l) / (t_l1 - t_l);
    let c3 = (t_l2 - (t_k1 - tau_k)) / (t_l2 - t_l1);
    let c4 = ((t_k1 - tau_k) - t_l1) / (t_l2 - t_l1);
    Ok((c1, c2, c3, c4))
}

/// One sampling interval's worth of discrete controller matrices.
///
/// Advances the digital state across `[t_k, t_{k+1}]`:
///
/// ```text
/// x_d(t_{k+1}) = A_d x_d(t_k) + Σ_j A_j x_d(t_j) + B_d y(t_k)
/// u_d(t_k)     = C_d x_d(t_k) + D_d y(t_k)
/// ```
///
/// where the sum runs over [`delayed`](Self::delayed): three taps bound to
/// the past sampling instants bracketing the delayed arguments. Binding taps
/// to timestamps rather than back-offsets keeps the recursion well-defined
/// under varying sampling periods, where the bracketing index shifts from
/// step to step.
#[derive(Debug, Clone, PartialEq)]
pub struct DigitalTaps {
    pub a_d: Mat,
    pub b_d: Mat,
    pub c_d: Mat,
    pub d_d: Mat,
    /// `(timestamp, gain)` pairs, timestamps ascending. The state the
    /// recursion multiplies each gain with is the digital state recorded at
    /// that sampling instant; timestamps at or before the start of time
    /// resolve to the initial (zero) controller state.
    pub delayed: Vec<(f64, Mat)>,
    /// The sampling interval `[t_k, t_{k+1}]` this step covers.
    pub interval: (f64, f64),
    /// The delay value used for the bracket.
    pub tau: f64,
    /// Set when any bracketing instant predates the recorded sample history
    /// and was supplied by extending the earliest sampling period backward
    /// (taps on such virtual instants are clamped to timestamp zero, where
    /// the controller state is its zero initial value).
    pub warmup: bool,
    /// Set when the delayed arguments did not land in the single-step
    /// bracket the interpolation assumes (possible under fast delay or
    /// sampling-period variation); the interpolation weights were clamped to
    /// the nearest admissible values.
    pub clamped: bool,
}

/// Locate `l` with `timeline[l] <= target < timeline[l+1]`, extending the
/// timeline virtually backward (first interval) when the target predates the
/// records. The returned `t_{l+2}` never exceeds `cap`: a bracket whose
/// newest instant would land past `cap` (a sample the recursion has not
/// produced yet) is shifted down to the nearest causal one. Returns the
/// three bracket instants `(t_l, t_{l+1}, t_{l+2})`, whether any is
/// virtual-past (warm-up), and whether the cap displaced the bracket.
fn bracket(timeline: &[f64], target: f64, fallback_spacing: f64) -> (f64, f64, f64, bool, bool) {
    let len = timeline.len() as isize;
    let first = timeline[0];
    let lead = if len >= 2 { timeline[1] - timeline[0] } else { fallback_spacing };
    // Indices below zero extend the earliest spacing virtually backward.
    let at = |i: isize| -> f64 {
        if i < 0 {
            first + lead * i as f64
        } else {
            timeline[i as usize]
        }
    };
    let mut l: isize = if target < first {
        -(((first - target) / lead).floor() as isize) - 1
    } else {
        // partition_point finds the first instant strictly past the target.
        timeline.partition_point(|&t| t <= target) as isize - 1
    };
    // Float guard: keep the invariant t_l <= target < t_{l+1} exactly,
    // advancing only while t_{l+1} stays a recorded instant.
    while at(l) > target {
        l -= 1;
    }
    while l + 1 < len - 1 && at(l + 1) <= target {
        l += 1;
    }
    // Causality cap: the recursion can only multiply states it has already
    // produced, so the newest bracket instant t_{l+2} must be a recorded
    // (or virtual-past) sample, i.e. l + 2 <= len - 1. A delay shorter than
    // the recent sampling intervals violates this; shift the bracket down to
    // the newest causal position.
    let displaced = l > len - 3;
    l = l.min(len - 3);
    (at(l), at(l + 1), at(l + 2), l < 0, displaced)
}

/// Discretize the controller exactly across one sampling interval.
///
/// `samples` is the ascending list of sampling instants recorded so far,
/// ending with `t_k`. The delayed taps integrate the
/// `A_{τK} x_K(t − τ_k)` term by linearly interpolating the controller state
/// between its own past samples and applying the trapezoid rule on the two
/// segments split at `t_{l+1}`; every other term is integrated exactly
/// through [`matrix_phi`]:
///
/// ```text
/// A_d = E(h) + Φ(h)·A_hK          h = t_{k+1} − t_k
/// B_d = Φ(h)·B_K
/// A_l     = c1/2 · (Φ(h) − Φ(g)) · A_τK        g = t_{k+1} − τ_k − t_{l+1}
/// A_{l+1} = ((1+c2)/2 · Φ(h) − (c2−c3)/2 · Φ(g)) · A_τK
/// A_{l+2} = c4/2 · Φ(g) · A_τK
/// ```
///
/// Before the history spans the delay, bracketing instants are synthesized
/// by extending the earliest sampling period backward; the emitted tap
/// timestamps are clamped at zero where the digital state is its zero
/// initial value (warm-up). When delay or sampling-period variation pushes
/// `t_{k+1} − τ_k` out of `[t_{l+1}, t_{l+2})`, the interpolation weights
/// are clamped to the nearest admissible values and the step is flagged.
pub fn discretize_step(
    ctrl: &ContinuousController,
    t_k: f64,
    t_k1: f64,
    tau_k: f64,
    samples: &[f64],
) -> Result<DigitalTaps> {
    let h = t_k1 - t_k;
    if !h.is_finite() || h <= 0.0 {
        return Err(Error::invalid(format!(
            "sampling interval must move forward: t_k = {t_k}, t_k+1 = {t_k1}"
        )));
    }
    if !tau_k.is_finite() || tau_k < 0.0 {
        return Err(Error::invalid(format!("delay must be nonnegative, got {tau_k}")));
    }
    if samples.is_empty() {
        return Err(Error::History("no sampling instants recorded".into()));
    }
    if samples.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::History("sampling instants must be strictly increasing".into()));
    }

    let (t_l, t_l1, t_l2, warmup, displaced) = bracket(samples, t_k - tau_k, h);
    let (c1_raw, _, _, c4_raw) = interp_coeffs(t_k, t_k1, tau_k, t_l, t_l1, t_l2)?;
    // c1, c2 lie in [0, 1] whenever the bracket actually contains t_k − τ_k,
    // and c3, c4 whenever t_{k+1} − τ_k lands one bin up. A causality-
    // displaced bracket or fast delay/period variation can break either;
    // clamp to the nearest admissible weights, preserving the pair sums.
    let c1 = c1_raw.clamp(0.0, 1.0);
    let c2 = 1.0 - c1;
    let c4 = c4_raw.clamp(0.0, 1.0);
    let c3 = 1.0 - c4;
    let clamped =
        displaced || (c4 - c4_raw).abs() > 1e-12 || (c1 - c1_raw).abs() > 1e-12;
    let g = (t_k1 - tau_k - t_l1).clamp(0.0, h);

    let (e_h, phi_h) = matrix_phi(&ctrl.a_k, h)?;
    let (_, phi_g) = matrix_phi(&ctrl.a_k, g)?;

    let a_d = &e_h + &phi_h * &ctrl.a_hold_k;
    let b_d = &phi_h * &ctrl.b_k;
    let tap_l = (&phi_h - &phi_g).scale(c1 / 2.0) * &ctrl.a_tau_k;
    let tap_l1 =
        (phi_h.scale((1.0 + c2) / 2.0) - phi_g.scale((c2 - c3) / 2.0)) * &ctrl.a_tau_k;
    let tap_l2 = phi_g.scale(c4 / 2.0) * &ctrl.a_tau_k;

    Ok(DigitalTaps {
        a_d,
        b_d,
        c_d: ctrl.c_k.clone(),
        d_d: ctrl.d_k.clone(),
        delayed: vec![
            (t_l.max(0.0), tap_l),
            (t_l1.max(0.0), tap_l1),
            (t_l2.max(0.0), tap_l2),
        ],
        interval: (t_k, t_k1),
        tau: tau_k,
        warmup,
        clamped,
    })
}

/// A synthesized certificate packaged as a digital controller for the
/// hybrid simulation loop: at each sampling instant it recovers the
/// continuous realization at the held scheduling value and discretizes it
/// exactly over the coming interval.
pub struct CertifiedController<'a> {
    cert: &'a SynthesisCertificate,
    plant: &'a LpvDelayPlant,
}

impl<'a> CertifiedController<'a> {
    pub fn new(cert: &'a SynthesisCertificate, plant: &'a LpvDelayPlant) -> Self {
        Self { cert, plant }
    }
}

impl crate::sim::SampledController for CertifiedController<'_> {
    fn order(&self) -> usize {
        self.plant.dims().n
    }

    fn step(
        &mut self,
        t_k: f64,
        t_k1: f64,
        tau_k: f64,
        rho: &[f64],
        samples: &[f64],
    ) -> Result<DigitalTaps> {
        let ctrl = realize(self.cert, self.plant, rho)?;
        discretize_step(&ctrl, t_k, t_k1, tau_k, samples)
    }
}
